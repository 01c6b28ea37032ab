//! Behavior logs: types, vocabularies, the record format, negative sampling,
//! and the planted-interest synthetic generator.

pub mod format;
pub mod sampling;
pub mod synth;
pub mod types;
pub mod vocab;

pub use format::{load_dataset, write_dataset, Loaded, RecordReader, VocabMode};
pub use sampling::{negative_sample, RawImpression};
pub use synth::{generate_impressions, generate_synthetic, write_synthetic, Synthetic, SyntheticSpec};
pub use types::{Behavior, BehaviorSequence, Dataset, Sample};
pub use vocab::Vocabulary;
