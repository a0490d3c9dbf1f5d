//! On-disk formats: the GRD1 container, checkpoints, manifests and dataset stores.

pub mod checkpoint;
pub mod grd1;
pub mod ingest;
pub mod store;

pub use store::{Dataset, DatasetManifest, RecordEntry, SourceTag, Split, SplitRatios, StoreWriter};
