//! C ABI over a trained model directory.
//!
//! Every function returns a [`GenliStatus`]. On failure the message of the
//! most recent error on the calling thread is available from
//! [`genli_last_error`]. Histories are passed as dense vocabulary indices,
//! newest first; index 0 is padding.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;

use genli::brm::{select_topk, Bucketer};
use genli::cli::Trained;
use genli::data::{Behavior, BehaviorSequence, Sample};
use genli::nn::Tape;
use genli::GenliError;

/// Result codes. Values 2, 3 and 4 match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GenliStatus {
    Ok = 0,
    NullPointer = 1,
    Config = 2,
    Data = 3,
    Numerical = 4,
    Io = 5,
    State = 6,
    UndefinedMetric = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

impl From<&GenliError> for GenliStatus {
    fn from(e: &GenliError) -> Self {
        match e {
            GenliError::Config(_) => GenliStatus::Config,
            GenliError::Data(_) => GenliStatus::Data,
            GenliError::State(_) => GenliStatus::State,
            GenliError::Numerical(_) => GenliStatus::Numerical,
            GenliError::UndefinedMetric(_) => GenliStatus::UndefinedMetric,
            GenliError::Io(_) => GenliStatus::Io,
        }
    }
}

/// Opaque handle to a loaded model.
pub struct GenliModel {
    inner: Trained,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: GenliStatus, msg: &str) -> GenliStatus {
    set_error(msg);
    status
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (GenliStatus, String)>) -> GenliStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GenliStatus::Ok,
        Ok(Err((status, msg))) => fail(status, &msg),
        Err(_) => fail(GenliStatus::Panic, "internal panic"),
    }
}

fn lift(e: GenliError) -> (GenliStatus, String) {
    (GenliStatus::from(&e), e.to_string())
}

fn null(what: &str) -> (GenliStatus, String) {
    (GenliStatus::NullPointer, format!("{what} is null"))
}

/// # Safety
/// `ptr` must be null or point to `len` readable values.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (GenliStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(ptr, len))
}

/// # Safety
/// `ptr` must be null or point to `len` writable values.
unsafe fn slice_mut<'a, T>(ptr: *mut T, len: usize, what: &str) -> Result<&'a mut [T], (GenliStatus, String)> {
    if len == 0 {
        return Ok(&mut []);
    }
    if ptr.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(ptr, len))
}

fn model_ref<'a>(model: *const GenliModel) -> Result<&'a Trained, (GenliStatus, String)> {
    // SAFETY: handles only come from genli_model_load and are freed by genli_model_free.
    unsafe { model.as_ref() }.map(|m| &m.inner).ok_or_else(|| null("model"))
}

fn sequence(t: &Trained, items: &[u32], cats: &[u32]) -> Result<Arc<BehaviorSequence>, (GenliStatus, String)> {
    if items.len() != cats.len() {
        return Err((GenliStatus::Config, "item and category histories differ in length".into()));
    }
    let (ni, nc) = (t.items.len() as u32, t.categories.len() as u32);
    if let Some(bad) = items.iter().zip(cats).find(|(&i, &c)| i >= ni || c >= nc) {
        return Err((GenliStatus::Data, format!("behavior ({}, {}) is outside the vocabularies", bad.0, bad.1)));
    }
    let n = items.len() as i64;
    let history = items.iter().zip(cats).enumerate().map(|(p, (&i, &c))| Behavior::new(i, c, n - p as i64)).collect();
    Ok(Arc::new(BehaviorSequence::from_history(history, t.cfg.data.seq_len)))
}

fn sample(seq: &Arc<BehaviorSequence>, item: u32, category: u32) -> Sample {
    Sample {
        user: String::new(),
        sequence: Arc::clone(seq),
        target_item: item,
        target_category: category,
        label: 0,
        exposed: None,
    }
}

/// Loads the output directory of `genli train`. On success `*out` owns a
/// handle that must be released with [`genli_model_free`].
///
/// # Safety
/// `dir` must be a NUL-terminated UTF-8 path and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn genli_model_load(dir: *const c_char, out: *mut *mut GenliModel) -> GenliStatus {
    guard(|| {
        if dir.is_null() {
            return Err(null("dir"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(dir).to_str().map_err(|_| (GenliStatus::Config, "path is not UTF-8".to_string()))?;
        let inner = Trained::load(Path::new(path), &[]).map_err(lift)?;
        *out = Box::into_raw(Box::new(GenliModel { inner }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle from [`genli_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn genli_model_free(model: *mut GenliModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Distribution size N of the model.
///
/// # Safety
/// `model` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn genli_model_buckets(model: *const GenliModel, out: *mut usize) -> GenliStatus {
    guard(|| {
        let t = model_ref(model)?;
        *out.as_mut().ok_or_else(|| null("out"))? = t.cfg.model.buckets;
        Ok(())
    })
}

/// Click probabilities of `n_targets` candidates for one user history.
///
/// # Safety
/// Histories hold `history_len` values, targets and `out` hold `n_targets`.
#[no_mangle]
pub unsafe extern "C" fn genli_predict(
    model: *const GenliModel,
    history_items: *const u32,
    history_categories: *const u32,
    history_len: usize,
    target_items: *const u32,
    target_categories: *const u32,
    n_targets: usize,
    out: *mut f64,
) -> GenliStatus {
    guard(|| {
        let t = model_ref(model)?;
        let items = slice(history_items, history_len, "history_items")?;
        let cats = slice(history_categories, history_len, "history_categories")?;
        let ti = slice(target_items, n_targets, "target_items")?;
        let tc = slice(target_categories, n_targets, "target_categories")?;
        let out = slice_mut(out, n_targets, "out")?;
        if n_targets == 0 {
            return Ok(());
        }
        let seq = sequence(t, items, cats)?;
        let samples: Vec<Sample> = ti.iter().zip(tc).map(|(&i, &c)| sample(&seq, i, c)).collect();
        let refs: Vec<&Sample> = samples.iter().collect();
        let probs = t.model.predict(&t.store, &refs).map_err(lift)?;
        out.copy_from_slice(&probs);
        Ok(())
    })
}

/// Writes the implicit, explicit and relative distributions of a history,
/// each of length N, back to back into `out` (capacity `out_len >= 3N`).
/// A distribution the model variant does not generate is written as uniform.
///
/// # Safety
/// Histories hold `history_len` values and `out` holds `out_len`.
#[no_mangle]
pub unsafe extern "C" fn genli_distributions(
    model: *const GenliModel,
    history_items: *const u32,
    history_categories: *const u32,
    history_len: usize,
    out: *mut f64,
    out_len: usize,
) -> GenliStatus {
    guard(|| {
        let t = model_ref(model)?;
        let n = t.cfg.model.buckets;
        if !t.cfg.model.model.is_genli() {
            return Err((GenliStatus::Config, format!("model '{}' generates no distributions", t.cfg.model.model)));
        }
        if out_len < 3 * n {
            return Err((GenliStatus::BufferTooSmall, format!("need {} values, got {out_len}", 3 * n)));
        }
        let items = slice(history_items, history_len, "history_items")?;
        let cats = slice(history_categories, history_len, "history_categories")?;
        let out = slice_mut(out, 3 * n, "out")?;
        let seq = sequence(t, items, cats)?;
        let s = sample(&seq, 0, 0);
        let mut tape = Tape::new(&t.store);
        let fwd = t.model.forward(&mut tape, &[&s]).map_err(lift)?;
        for (slot, p) in [fwd.implicit, fwd.explicit, fwd.relative].into_iter().enumerate() {
            let dst = &mut out[slot * n..(slot + 1) * n];
            match p {
                Some(v) => dst.copy_from_slice(tape.value(v).row(0)),
                None => dst.fill(1.0 / n as f64),
            }
        }
        Ok(())
    })
}

/// Bucket of `id` in a distribution of size `n`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn genli_bucket(n: usize, id: u32, out: *mut usize) -> GenliStatus {
    guard(|| {
        let b = Bucketer::new(n).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = b.bucket(id);
        Ok(())
    })
}

/// Score of each of `len` item ids looked up in distribution `probs` of size `n`.
///
/// # Safety
/// `probs` holds `n` values, `ids` and `out` hold `len`.
#[no_mangle]
pub unsafe extern "C" fn genli_lookup(
    probs: *const f64,
    n: usize,
    ids: *const u32,
    len: usize,
    out: *mut f64,
) -> GenliStatus {
    guard(|| {
        let b = Bucketer::new(n).map_err(lift)?;
        let p = slice(probs, n, "probs")?;
        let ids = slice(ids, len, "ids")?;
        let out = slice_mut(out, len, "out")?;
        for (o, &id) in out.iter_mut().zip(ids) {
            *o = b.lookup(id, p);
        }
        Ok(())
    })
}

/// Positions of the `k` highest scores, best first. Ties go to the lower
/// position. Writes `min(k, len)` positions and stores that count in `*written`.
///
/// # Safety
/// `scores` holds `len` values, `positions` holds `k`, `written` is writable.
#[no_mangle]
pub unsafe extern "C" fn genli_topk(
    scores: *const f64,
    len: usize,
    k: usize,
    positions: *mut usize,
    written: *mut usize,
) -> GenliStatus {
    guard(|| {
        let scores = slice(scores, len, "scores")?;
        if scores.iter().any(|s| s.is_nan()) {
            return Err((GenliStatus::Numerical, "NaN score".into()));
        }
        let positions = slice_mut(positions, k, "positions")?;
        let written = written.as_mut().ok_or_else(|| null("written"))?;
        let sel = select_topk(scores.iter().copied().enumerate(), k);
        positions[..sel.positions.len()].copy_from_slice(&sel.positions);
        *written = sel.positions.len();
        Ok(())
    })
}

/// Rank-sum AUC; labels are 0 or 1.
///
/// # Safety
/// `scores` and `labels` hold `len` values and `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn genli_auc(scores: *const f64, labels: *const u8, len: usize, out: *mut f64) -> GenliStatus {
    guard(|| {
        let s = slice(scores, len, "scores")?;
        let l = slice(labels, len, "labels")?;
        if l.iter().any(|&v| v > 1) {
            return Err((GenliStatus::Data, "labels must be 0 or 1".into()));
        }
        let value = genli::evalbench::auc(s, l).map_err(lift)?;
        *out.as_mut().ok_or_else(|| null("out"))? = value;
        Ok(())
    })
}

/// Message of the last failed call on this thread; empty if none. Valid
/// until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn genli_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, NUL-terminated and static.
#[no_mangle]
pub extern "C" fn genli_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
