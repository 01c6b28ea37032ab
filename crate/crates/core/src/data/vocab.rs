use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{GenliError, Result};

pub const PADDING_TOKEN: &str = "<pad>";

/// Raw value ↔ dense index mapping for one categorical field. Index 0 is
/// reserved for padding and unknown values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    field: String,
    index: HashMap<String, u32>,
    raw: Vec<String>,
}

impl Vocabulary {
    pub fn new(field: &str) -> Self {
        Vocabulary { field: field.to_string(), index: HashMap::new(), raw: vec![PADDING_TOKEN.to_string()] }
    }

    pub fn field(&self) -> &str {
        &self.field
    }

    /// Number of indices including padding.
    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.len() <= 1
    }

    pub fn get(&self, raw: &str) -> Option<u32> {
        self.index.get(raw).copied()
    }

    pub fn raw(&self, idx: u32) -> Option<&str> {
        self.raw.get(idx as usize).map(String::as_str)
    }

    /// Index of `raw`, assigning the next free index if unseen.
    pub fn intern(&mut self, raw: &str) -> u32 {
        if let Some(&i) = self.index.get(raw) {
            return i;
        }
        let i = self.raw.len() as u32;
        self.raw.push(raw.to_string());
        self.index.insert(raw.to_string(), i);
        i
    }

    /// Reads `raw_value<TAB>index` lines. Indices must be dense and start at 1.
    pub fn load(path: &Path, field: &str) -> Result<Self> {
        let f = File::open(path)?;
        let mut pairs = Vec::new();
        for (n, line) in BufReader::new(f).lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (raw, idx) = line
                .split_once('\t')
                .ok_or_else(|| GenliError::data(format!("{}:{}: expected raw<TAB>index", path.display(), n + 1)))?;
            let idx: u32 = idx
                .trim()
                .parse()
                .map_err(|_| GenliError::data(format!("{}:{}: bad index '{idx}'", path.display(), n + 1)))?;
            pairs.push((raw.to_string(), idx));
        }
        pairs.sort_by_key(|p| p.1);
        let mut v = Vocabulary::new(field);
        for (raw, idx) in pairs {
            if idx as usize != v.len() {
                return Err(GenliError::data(format!(
                    "{}: vocabulary indices must be dense from 1, found {idx}",
                    path.display()
                )));
            }
            v.intern(&raw);
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        for (i, raw) in self.raw.iter().enumerate().skip(1) {
            writeln!(w, "{raw}\t{i}")?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intern_is_stable_and_padding_is_zero() {
        let mut v = Vocabulary::new("item");
        assert_eq!(v.intern("a"), 1);
        assert_eq!(v.intern("b"), 2);
        assert_eq!(v.intern("a"), 1);
        assert_eq!(v.raw(0), Some(PADDING_TOKEN));
        assert_eq!(v.get("zzz"), None);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("item.vocab");
        let mut v = Vocabulary::new("item");
        for r in ["x", "y", "z"] {
            v.intern(r);
        }
        v.save(&p).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "x\t1\ny\t2\nz\t3\n");
        assert_eq!(Vocabulary::load(&p, "item").unwrap(), v);
    }
}
