//! Newline-delimited impression records.
//!
//! One impression per line, tab-separated:
//!
//! ```text
//! user_id  target_item  target_category  label  exposed_item  behavior_list
//! ```
//!
//! `label` is `0` or `1`; `exposed_item` may be empty; `behavior_list` is a
//! comma-separated list of `item:category:timestamp` triples in any order
//! (the loader sorts them chronologically). All item and category fields
//! carry raw values that are mapped through per-field vocabularies.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use crate::data::types::{Behavior, BehaviorSequence, Dataset, Sample};
use crate::data::vocab::Vocabulary;
use crate::error::{GenliError, Result};

/// Vocabulary handling while reading records.
#[derive(Clone, Debug)]
pub enum VocabMode {
    /// Unseen raw values receive new indices.
    Extend,
    /// Unseen raw values map to index 0 and are counted.
    Fixed,
}

/// Streaming reader yielding one [`Sample`] per record line.
pub struct RecordReader<R> {
    lines: std::io::Lines<R>,
    line_no: usize,
    seq_len: usize,
    pub items: Vocabulary,
    pub categories: Vocabulary,
    mode: VocabMode,
    unknown: usize,
    last: Option<(String, String, Arc<BehaviorSequence>)>,
}

impl<R: BufRead> RecordReader<R> {
    pub fn new(reader: R, seq_len: usize, items: Vocabulary, categories: Vocabulary, mode: VocabMode) -> Self {
        RecordReader { lines: reader.lines(), line_no: 0, seq_len, items, categories, mode, unknown: 0, last: None }
    }

    /// Raw values that were not found in a fixed vocabulary.
    pub fn unknown_count(&self) -> usize {
        self.unknown
    }

    fn map(&mut self, field: Field, raw: &str) -> u32 {
        let vocab = match field {
            Field::Item => &mut self.items,
            Field::Category => &mut self.categories,
        };
        match self.mode {
            VocabMode::Extend => vocab.intern(raw),
            VocabMode::Fixed => vocab.get(raw).unwrap_or_else(|| {
                self.unknown += 1;
                0
            }),
        }
    }

    fn err(&self, msg: impl std::fmt::Display) -> GenliError {
        GenliError::data(format!("line {}: {msg}", self.line_no))
    }

    fn parse(&mut self, line: &str) -> Result<Sample> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 6 {
            return Err(self.err(format!("expected 6 tab-separated fields, found {}", fields.len())));
        }
        let user = fields[0].to_string();
        if user.is_empty() {
            return Err(self.err("empty user id"));
        }
        if fields[1].is_empty() || fields[2].is_empty() {
            return Err(self.err("missing target item or category"));
        }
        let target_item = self.map(Field::Item, fields[1]);
        let target_category = self.map(Field::Category, fields[2]);
        let label = match fields[3] {
            "0" => 0,
            "1" => 1,
            other => return Err(self.err(format!("label must be 0 or 1, found '{other}'"))),
        };
        let exposed =
            if fields[4].is_empty() { None } else { Some(self.map(Field::Item, fields[4])).filter(|&e| e != 0) };
        let sequence = match &self.last {
            Some((u, list, seq)) if *u == user && list == fields[5] => Arc::clone(seq),
            _ => {
                let seq = Arc::new(self.parse_behaviors(fields[5])?);
                self.last = Some((user.clone(), fields[5].to_string(), Arc::clone(&seq)));
                seq
            }
        };
        Ok(Sample { user, sequence, target_item, target_category, label, exposed })
    }

    fn parse_behaviors(&mut self, list: &str) -> Result<BehaviorSequence> {
        let mut history = Vec::new();
        if !list.is_empty() {
            for triple in list.split(',') {
                let mut parts = triple.split(':');
                let (Some(item), Some(cat), Some(ts), None) = (parts.next(), parts.next(), parts.next(), parts.next())
                else {
                    return Err(self.err(format!("behavior '{triple}' is not item:category:timestamp")));
                };
                if item.is_empty() || cat.is_empty() {
                    return Err(self.err(format!("behavior '{triple}' is missing a field")));
                }
                let ts: i64 = ts.parse().map_err(|_| self.err(format!("bad timestamp '{ts}'")))?;
                let item = self.map(Field::Item, item);
                let category = self.map(Field::Category, cat);
                if item != 0 {
                    history.push(Behavior { item, category, timestamp: ts });
                }
            }
        }
        Ok(BehaviorSequence::from_history(history, self.seq_len))
    }
}

#[derive(Clone, Copy)]
enum Field {
    Item,
    Category,
}

impl<R: BufRead> Iterator for RecordReader<R> {
    type Item = Result<Sample>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            let line = match self.lines.next()? {
                Ok(l) => l,
                Err(e) => return Some(Err(e.into())),
            };
            self.line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            return Some(self.parse(&line));
        }
    }
}

/// Result of [`load_dataset`].
#[derive(Clone, Debug)]
pub struct Loaded {
    pub dataset: Dataset,
    pub items: Vocabulary,
    pub categories: Vocabulary,
    pub unknown: usize,
}

/// Reads a whole record file. With `vocabs == None` the vocabularies are built
/// from the file itself.
pub fn load_dataset(path: &Path, seq_len: usize, vocabs: Option<(Vocabulary, Vocabulary)>) -> Result<Loaded> {
    let f = File::open(path).map_err(|e| GenliError::data(format!("cannot open {}: {e}", path.display())))?;
    let (items, cats, mode) = match vocabs {
        Some((i, c)) => (i, c, VocabMode::Fixed),
        None => (Vocabulary::new("item"), Vocabulary::new("category"), VocabMode::Extend),
    };
    let mut reader = RecordReader::new(BufReader::new(f), seq_len, items, cats, mode);
    let mut samples = Vec::new();
    for s in reader.by_ref() {
        samples.push(s?);
    }
    if reader.unknown_count() > 0 {
        log::warn!(
            "{}: {} raw values missing from the vocabularies were mapped to index 0",
            path.display(),
            reader.unknown_count()
        );
    }
    let dataset = Dataset { samples, num_items: reader.items.len(), num_categories: reader.categories.len() };
    Ok(Loaded { dataset, unknown: reader.unknown_count(), items: reader.items, categories: reader.categories })
}

fn raw(v: &Vocabulary, idx: u32) -> Result<&str> {
    v.raw(idx).ok_or_else(|| GenliError::data(format!("index {idx} is outside the {} vocabulary", v.field())))
}

pub fn write_records<W: Write>(mut w: W, samples: &[Sample], items: &Vocabulary, cats: &Vocabulary) -> Result<()> {
    let mut list = String::new();
    for s in samples {
        list.clear();
        for (i, b) in s.sequence.chronological().iter().enumerate() {
            if i > 0 {
                list.push(',');
            }
            list.push_str(raw(items, b.item)?);
            list.push(':');
            list.push_str(raw(cats, b.category)?);
            list.push(':');
            list.push_str(&b.timestamp.to_string());
        }
        let exposed = match s.exposed {
            Some(e) => raw(items, e)?,
            None => "",
        };
        writeln!(
            w,
            "{}\t{}\t{}\t{}\t{}\t{}",
            s.user,
            raw(items, s.target_item)?,
            raw(cats, s.target_category)?,
            s.label,
            exposed,
            list
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dataset(path: &Path, samples: &[Sample], items: &Vocabulary, cats: &Vocabulary) -> Result<()> {
    write_records(BufWriter::new(File::create(path)?), samples, items, cats)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn read(text: &str, len: usize) -> Result<Vec<Sample>> {
        RecordReader::new(text.as_bytes(), len, Vocabulary::new("item"), Vocabulary::new("category"), VocabMode::Extend)
            .collect()
    }

    #[test]
    fn parses_and_orders_newest_first() {
        let s = read("u1\ti9\tc1\t1\t\ti1:c1:30,i2:c2:10,i3:c1:20\n", 5).unwrap();
        assert_eq!(s.len(), 1);
        let seq = &s[0].sequence;
        assert_eq!(seq.valid(), 3);
        assert_eq!(seq.timestamps()[..3], [30, 20, 10]);
        assert_eq!(s[0].exposed, None);
        assert_eq!(s[0].label, 1);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let err = read("u1\ti\tc\t1\t\t\nu2\ti\tc\t7\t\t\n", 3).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
        let err = read("u1\ti\tc\t1\t\tbroken\n", 3).unwrap_err();
        assert!(err.to_string().contains("line 1"), "{err}");
    }

    #[test]
    fn unknown_values_map_to_padding_and_are_counted() {
        let mut items = Vocabulary::new("item");
        items.intern("known");
        let mut cats = Vocabulary::new("category");
        cats.intern("c");
        let mut r =
            RecordReader::new("u\tmystery\tc\t0\t\tknown:c:1,other:c:2\n".as_bytes(), 4, items, cats, VocabMode::Fixed);
        let s = r.next().unwrap().unwrap();
        assert_eq!(s.target_item, 0);
        assert_eq!(s.sequence.valid(), 1);
        assert_eq!(r.unknown_count(), 2);
    }

    #[test]
    fn consecutive_identical_histories_share_storage() {
        let text = "u\ta\tc\t1\t\ta:c:1\nu\tb\tc\t0\t\ta:c:1\n";
        let s = read(text, 3).unwrap();
        assert!(Arc::ptr_eq(&s[0].sequence, &s[1].sequence));
    }
}
