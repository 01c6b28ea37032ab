use std::ffi::{CStr, CString};
use std::path::Path;
use std::ptr;

use clap::Parser;
use genli::cli::{run, Cli};
use genli_ffi::*;

fn train_tiny(root: &Path) -> std::path::PathBuf {
    let data = root.join("data");
    let out = root.join("run");
    let sets = ["data.users=40", "data.seq_len=24", "model.buckets=64", "model.k=2", "train.epochs=1"];
    let mut args: Vec<String> = vec!["genli".into(), "gen-data".into(), "-o".into(), data.display().to_string()];
    for s in sets {
        args.extend(["--set".into(), s.into()]);
    }
    run(Cli::parse_from(&args)).unwrap();
    let mut args: Vec<String> = vec!["genli".into(), "train".into(), "-d".into(), data.display().to_string()];
    args.extend(["-o".into(), out.display().to_string()]);
    for s in sets {
        args.extend(["--set".into(), s.into()]);
    }
    run(Cli::parse_from(&args)).unwrap();
    out
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(genli_last_error()) }.to_str().unwrap().to_owned()
}

#[test]
fn load_predict_and_distributions() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = CString::new(train_tiny(tmp.path()).display().to_string()).unwrap();
    let mut model: *mut GenliModel = ptr::null_mut();
    assert_eq!(unsafe { genli_model_load(dir.as_ptr(), &mut model) }, GenliStatus::Ok);
    assert!(!model.is_null());

    let mut n = 0usize;
    assert_eq!(unsafe { genli_model_buckets(model, &mut n) }, GenliStatus::Ok);
    assert_eq!(n, 64);

    let items = [5u32, 9, 9, 14];
    let cats = [2u32, 3, 3, 1];
    let targets = [7u32, 8];
    let tcats = [4u32, 5];
    let mut probs = [0.0f64; 2];
    let status = unsafe {
        genli_predict(model, items.as_ptr(), cats.as_ptr(), 4, targets.as_ptr(), tcats.as_ptr(), 2, probs.as_mut_ptr())
    };
    assert_eq!(status, GenliStatus::Ok, "{}", last_error());
    assert!(probs.iter().all(|p| *p > 0.0 && *p < 1.0));

    let mut dists = vec![0.0f64; 3 * n];
    let status =
        unsafe { genli_distributions(model, items.as_ptr(), cats.as_ptr(), 4, dists.as_mut_ptr(), dists.len()) };
    assert_eq!(status, GenliStatus::Ok, "{}", last_error());
    for p in dists.chunks(n) {
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|&v| v > 0.0));
    }

    let mut short = vec![0.0f64; n];
    let status = unsafe { genli_distributions(model, items.as_ptr(), cats.as_ptr(), 4, short.as_mut_ptr(), n) };
    assert_eq!(status, GenliStatus::BufferTooSmall);
    assert!(last_error().contains("need"));

    let bad = [100_000u32];
    let status = unsafe {
        genli_predict(model, bad.as_ptr(), cats.as_ptr(), 1, targets.as_ptr(), tcats.as_ptr(), 1, probs.as_mut_ptr())
    };
    assert_eq!(status, GenliStatus::Data);
    unsafe { genli_model_free(model) };
}

#[test]
fn missing_model_is_a_config_error() {
    let dir = CString::new("/nonexistent/genli-model").unwrap();
    let mut model: *mut GenliModel = ptr::null_mut();
    assert_eq!(unsafe { genli_model_load(dir.as_ptr(), &mut model) }, GenliStatus::Config);
    assert!(model.is_null());
    assert!(last_error().contains("does not exist"));
    assert_eq!(unsafe { genli_model_load(ptr::null(), &mut model) }, GenliStatus::NullPointer);
}

#[test]
fn bucket_lookup_topk_auc() {
    let mut b = 0usize;
    assert_eq!(unsafe { genli_bucket(64, 130, &mut b) }, GenliStatus::Ok);
    assert_eq!(b, 130 % 64);
    assert_eq!(unsafe { genli_bucket(0, 1, &mut b) }, GenliStatus::Config);

    let probs = [0.1, 0.2, 0.3, 0.4];
    let ids = [1u32, 3, 7];
    let mut scores = [0.0; 3];
    assert_eq!(unsafe { genli_lookup(probs.as_ptr(), 4, ids.as_ptr(), 3, scores.as_mut_ptr()) }, GenliStatus::Ok);
    assert_eq!(scores, [0.2, 0.4, 0.4]);

    // Equal scores: the lower position wins.
    let mut pos = [0usize; 2];
    let mut written = 0usize;
    let status = unsafe { genli_topk(scores.as_ptr(), 3, 2, pos.as_mut_ptr(), &mut written) };
    assert_eq!(status, GenliStatus::Ok);
    assert_eq!((written, pos), (2, [1, 2]));

    let s = [0.8, 0.7, 0.6, 0.5];
    let l = [1u8, 0, 1, 0];
    let mut auc = 0.0;
    assert_eq!(unsafe { genli_auc(s.as_ptr(), l.as_ptr(), 4, &mut auc) }, GenliStatus::Ok);
    assert_eq!(auc, 0.75);
    let ones = [1u8; 4];
    assert_eq!(unsafe { genli_auc(s.as_ptr(), ones.as_ptr(), 4, &mut auc) }, GenliStatus::UndefinedMetric);
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(genli_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_every_export() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/genli.h")).unwrap();
    for f in [
        "genli_model_load",
        "genli_model_free",
        "genli_model_buckets",
        "genli_predict",
        "genli_distributions",
        "genli_bucket",
        "genli_lookup",
        "genli_topk",
        "genli_auc",
        "genli_last_error",
        "genli_version",
        "GENLI_STATUS_NUMERICAL = 4",
    ] {
        assert!(header.contains(f), "{f}");
    }
}

#[test]
fn header_compiles_as_c() {
    let Ok(cc) = which_cc() else { return };
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let tmp = tempfile::tempdir().unwrap();
    let src = tmp.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"genli.h\"\nint main(void) { GenliModel *m = 0; size_t n; return genli_model_buckets(m, &n) == GENLI_STATUS_OK; }\n",
    )
    .unwrap();
    let status = std::process::Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I"])
        .arg(&include)
        .arg(&src)
        .status()
        .unwrap();
    assert!(status.success());
}

fn which_cc() -> Result<&'static str, ()> {
    for cc in ["cc", "gcc", "clang"] {
        if std::process::Command::new(cc).arg("--version").output().is_ok() {
            return Ok(cc);
        }
    }
    Err(())
}
