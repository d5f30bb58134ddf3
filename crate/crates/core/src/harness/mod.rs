//! Dataset manifests, feature caching, synthetic corpora and the
//! end-to-end run with its reports.

pub mod cache;
pub mod manifest;
pub mod pipeline;
pub mod report;
pub mod synth;

pub use cache::FeatureCache;
pub use manifest::{parse_manifest, read_manifest, DatasetManifest, ManifestEntry, Split};
pub use pipeline::{run_pipeline, run_pipeline_with_cache, ExtractContext, RunConfig, RunSummary};
pub use report::MetricRow;
pub use synth::generate_synthetic_corpus;
