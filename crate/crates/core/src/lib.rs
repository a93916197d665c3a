//! Training-free motion embeddings built from temporal moments of frozen
//! patch features, with exact cosine retrieval, kNN evaluation and a
//! benchmark harness.
//!
//! ```
//! use motion_moments::feature_io::FeatureTensor;
//! use motion_moments::moments::{compute_embedding, MomentConfig};
//!
//! let data: Vec<f32> = (0..4 * 2 * 3).map(|i| (i as f32 * 0.37).sin()).collect();
//! let tensor = FeatureTensor::new("clip", 4, 2, 3, data).unwrap();
//! let emb = compute_embedding(&tensor, &MomentConfig::default()).unwrap();
//! assert_eq!(emb.dim(), 9);
//! ```

pub mod bench;
pub mod cli;
pub mod feature_io;
pub mod knn;
pub mod moments;
pub mod retrieval;
pub mod selftest;

use bench::BenchError;
use feature_io::FormatError;
use knn::KnnError;
use moments::MomentError;
use retrieval::RetrievalError;

/// Any error the library can report, with the CLI exit code it maps to.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Knn(#[from] KnnError),
    #[error(transparent)]
    Bench(#[from] BenchError),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    AtPath {
        path: std::path::PathBuf,
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn format_is_io(e: &FormatError) -> bool {
    matches!(e, FormatError::Io(_))
}

impl Error {
    /// Whether the failure came from the file system rather than the data.
    pub fn is_io(&self) -> bool {
        match self {
            Error::Io(_) => true,
            Error::AtPath { source, .. } => source.is_io(),
            Error::Format(e) => format_is_io(e),
            Error::Moment(MomentError::Format(e)) => format_is_io(e),
            Error::Retrieval(RetrievalError::Format(e)) => format_is_io(e),
            Error::Knn(KnnError::Csv(e)) => e.is_io_error(),
            Error::Bench(e) => match e {
                BenchError::Io(_) => true,
                BenchError::Format(f) | BenchError::DanglingFeature { source: f, .. } => {
                    format_is_io(f)
                }
                BenchError::Moment(MomentError::Format(f)) => format_is_io(f),
                BenchError::Retrieval(RetrievalError::Format(f)) => format_is_io(f),
                BenchError::Knn(KnnError::Csv(c)) => c.is_io_error(),
                _ => false,
            },
            _ => false,
        }
    }

    /// 2 for I/O failures, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        if self.is_io() {
            2
        } else {
            1
        }
    }

    /// Attaches the file the error is about.
    pub fn at(path: impl Into<std::path::PathBuf>, source: impl Into<Error>) -> Self {
        Error::AtPath {
            path: path.into(),
            source: Box::new(source.into()),
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        if self.is_io() {
            return "io";
        }
        match self {
            Error::AtPath { source, .. } => source.kind(),
            Error::Format(_) => "format",
            Error::Moment(_) => "moment",
            Error::Retrieval(_) => "retrieval",
            Error::Knn(_) => "knn",
            Error::Bench(_) => "benchmark",
            Error::Usage(_) => "usage",
            Error::Io(_) => "io",
        }
    }
}
