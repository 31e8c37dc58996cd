//! Record ingestion, label grouping, filtering, splitting and dataset statistics.

mod filter;
mod grouping;
mod ingest;
mod record;
mod split;
mod stats;

pub use filter::{filter_corpus, FilterConfig, DEFAULT_MIN_LABEL_COUNT, DEFAULT_MIN_TEXT_CHARS};
pub use grouping::{map_group_label, GroupingTable};
pub use ingest::{parse_records, parse_records_from_reader, read_manifest, EmbeddingManifest, ManifestEntry, ParseOptions, UnmappedPolicy};
pub use record::{Modality, Record, RecordSet};
pub use split::{split_records, Split, SplitAssignment, DEFAULT_RATIOS};
pub use stats::{compute_stats, ClassCountRow, CorpusStats, LengthSummary, ModalityOverlap, SplitColumn};
pub(crate) use stats::csv_field;
