//! Address samples: object names, run records, sample sets and their file
//! format.

pub mod format;
pub mod key;
pub mod model;

pub use format::{load_path, load_sample_set, save_path, save_sample_set, to_bytes};
pub use key::{format_size, kind_of, ObjectKey, ObjectKind, Thread};
pub use model::{normalize, observed_alignment, Header, NormalizedSeries, Platform, RunMeta, RunRecord, SampleSet, Source};

/// Parses an object name into its components.
pub fn parse_object_key(name: &str) -> crate::Result<ObjectKey> {
    ObjectKey::parse(name)
}
