//! One TOML file configures every subcommand. `section.key=value` overrides
//! are applied on top of the file before validation.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::SyntheticSpec;
use crate::error::{GenliError, Result};
use crate::evalbench::bench::BenchConfig;
use crate::evalbench::latency::LatencyConfig;
use crate::model::ModelConfig;
use crate::trainer::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    /// Fraction of users held out for validation.
    pub valid_ratio: f64,
    pub data: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub bench: BenchConfig,
    pub latency: LatencyConfig,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            valid_ratio: 0.1,
            data: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            bench: BenchConfig::default(),
            latency: LatencyConfig::default(),
        }
    }
}

/// Keys whose defaults follow the published experimental setup.
const PUBLISHED: &[(&str, &str)] = &[
    ("train.lr", "Adam learning rate"),
    ("train.batch_size", "batch size"),
    ("train.alpha", "implicit loss weight"),
    ("train.beta", "explicit loss weight"),
    ("model.k", "behaviors retrieved per distribution"),
    ("model.buckets", "distribution size"),
    ("model.heads", "attention heads"),
    ("model.head_dim", "width per head"),
    ("model.item_dim", "item half of the 8-wide behavior embedding"),
    ("model.category_dim", "category half of the 8-wide behavior embedding"),
    ("model.hidden", "MLP widths"),
    ("latency.samples", "batch size of the latency comparison"),
];

impl CliConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.valid_ratio > 0.0 && self.valid_ratio < 1.0) {
            return Err(GenliError::config(format!("valid_ratio must lie in (0, 1), got {}", self.valid_ratio)));
        }
        self.data.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.bench.validate()?;
        self.latency.validate()
    }

    /// Reads `path` (or the defaults when `None`), applies overrides and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let base = match path {
            Some(p) => std::fs::read_to_string(p)
                .map_err(|e| GenliError::config(format!("cannot read config {}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut cfg: CliConfig = toml::from_str(&base).map_err(|e| GenliError::config(format!("config: {e}")))?;
        for o in overrides {
            cfg = cfg.with_override(o)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `section.key=value` override. The value is read as a TOML
    /// value and falls back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| GenliError::config(format!("override '{assignment}' is not key=value")))?;
        let key = key.trim();
        let raw = raw.trim();
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
        let mut root = toml::Value::try_from(self).map_err(|e| GenliError::config(e.to_string()))?;
        let mut slot = &mut root;
        for part in key.split('.') {
            slot = slot.get_mut(part).ok_or_else(|| GenliError::config(format!("unknown config key '{key}'")))?;
        }
        if slot.is_table() {
            return Err(GenliError::config(format!("'{key}' is a section, not a key")));
        }
        *slot = value;
        root.try_into().map_err(|e: toml::de::Error| GenliError::config(format!("{key}: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Writes the effective configuration next to a command's outputs.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.toml"), self.to_toml())?;
        Ok(())
    }

    /// Every key with its default, one per line, for `--help`.
    pub fn key_listing() -> String {
        let root = toml::Value::try_from(CliConfig::default()).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &root, &mut lines);
        let width = lines.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
        let mut out = String::from("Config keys (file sections or --set section.key=value) and defaults:\n");
        for (k, v) in lines {
            let note = PUBLISHED.iter().find(|(p, _)| *p == k).map(|(_, what)| format!("  [published setup: {what}]"));
            out.push_str(&format!("  {k:width$}  {v}{}\n", note.unwrap_or_default()));
        }
        out
    }
}

fn flatten(prefix: &str, v: &toml::Value, out: &mut Vec<(String, String)>) {
    match v {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, v, out);
            }
        }
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(CliConfig::load(None, &[]).unwrap(), CliConfig::default());
    }

    #[test]
    fn overrides_win_and_parse_types() {
        let cfg = CliConfig::load(
            None,
            &["train.lr=0.01".into(), "model.model=avgpool".into(), "bench.lengths=[10, 20]".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        assert_eq!(cfg.model.model.to_string(), "avgpool");
        assert_eq!(cfg.bench.lengths, vec![10, 20]);
    }

    #[test]
    fn negative_alpha_is_rejected() {
        let err = CliConfig::load(None, &["train.alpha=-1".into()]).unwrap_err();
        assert!(matches!(err, GenliError::Config(_)));
    }

    #[test]
    fn unknown_key_is_rejected() {
        assert!(matches!(CliConfig::default().with_override("train.nope=1"), Err(GenliError::Config(_))));
        assert!(matches!(CliConfig::default().with_override("train=1"), Err(GenliError::Config(_))));
    }

    #[test]
    fn echo_round_trips() {
        let cfg = CliConfig::default().with_override("data.users=17").unwrap();
        let back: CliConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn listing_covers_every_section() {
        let text = CliConfig::key_listing();
        for key in ["valid_ratio", "data.hot_items", "model.buckets", "train.lr", "bench.widths", "latency.candidates"]
        {
            assert!(text.contains(key), "{key}");
        }
        assert!(text.contains("published setup"));
    }
}
