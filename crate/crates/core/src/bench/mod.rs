//! Benchmark manifests, evaluation runs, sweeps, heatmaps and synthetic data.

mod harness;
mod heatmap;
pub mod manifest;
pub mod report;
pub mod synth;

use std::path::PathBuf;

pub use harness::{
    ablation_sweep, frame_count_sweep, run_knn_benchmark, run_triplet_benchmark,
    standard_ablation_configs, table5_configs, uniform_indices, AblationRow, CategoryAccuracy,
    FrameSweepRow, Harness, KnnBenchmarkReport, TripletRecord, TripletReport, VideoFailure,
};
pub use heatmap::{similarity_heatmap, HeatmapMatrix};
pub use manifest::{
    load_manifest, BenchmarkManifest, Category, ManifestEntry, ManifestKind, Role, Triplet,
};
pub use synth::{generate_labeled, generate_synthetic, LabeledParams, SyntheticParams};

use crate::feature_io::FormatError;
use crate::knn::KnnError;
use crate::moments::MomentError;
use crate::retrieval::RetrievalError;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("manifest schema violation: {0}")]
    Schema(String),
    #[error("malformed triplet {triplet_id:?}: {reason}")]
    MalformedTriplet { triplet_id: String, reason: String },
    #[error("feature file for {video_id:?} at {path:?} is not readable: {source}")]
    DanglingFeature {
        video_id: String,
        path: PathBuf,
        source: FormatError,
    },
    #[error("triplet {triplet_id:?} has {found} candidates, manifest requires {expected}")]
    PoolSize {
        triplet_id: String,
        expected: usize,
        found: usize,
    },
    #[error("{operation} needs a {expected} manifest, got {found:?}")]
    WrongKind {
        operation: &'static str,
        expected: &'static str,
        found: ManifestKind,
    },
    #[error("{video_id:?} has {available} frames, cannot sample {requested}")]
    FrameCount {
        video_id: String,
        requested: usize,
        available: usize,
    },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("no video in the manifest could be embedded")]
    NothingEmbedded,
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
