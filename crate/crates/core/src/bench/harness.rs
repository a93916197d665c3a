use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use super::manifest::{BenchmarkManifest, Category, ManifestKind, Role, Triplet};
use super::BenchError;
use crate::feature_io::{load_tensor, FeatureTensor};
use crate::knn::{eval_knn, KnnOptions, KnnReport, LabeledSet, Split};
use crate::moments::{compute_embedding, Fusion, Level, MomentConfig, MomentEmbedding};
use crate::retrieval::{build_index, EmbeddingIndex};

/// Endpoint-inclusive uniform frame indices: `round(i * (total - 1) / (n - 1))`
/// with halves rounded up; `n = 1` picks the middle frame.
pub fn uniform_indices(total: usize, n: usize) -> Result<Vec<usize>, BenchError> {
    if n == 0 || total == 0 {
        return Err(BenchError::InvalidParams(
            "frame counts must be >= 1".into(),
        ));
    }
    if n > total {
        return Err(BenchError::InvalidParams(format!(
            "cannot sample {n} of {total} frames"
        )));
    }
    if n == 1 {
        return Ok(vec![total / 2]);
    }
    let (span, steps) = (total - 1, n - 1);
    Ok((0..n)
        .map(|i| (2 * i * span + steps) / (2 * steps))
        .collect())
}

/// Where a run's tensors come from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
enum FrameSource {
    Native,
    Uniform(usize),
    Directory(usize, PathBuf),
}

impl FrameSource {
    fn frames(&self) -> Option<usize> {
        match self {
            FrameSource::Native => None,
            FrameSource::Uniform(n) | FrameSource::Directory(n, _) => Some(*n),
        }
    }
}

struct Embedded {
    embeddings: Vec<Result<MomentEmbedding, String>>,
    index: Option<EmbeddingIndex>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VideoFailure {
    pub video_id: String,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CategoryAccuracy {
    pub category: Category,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripletRecord {
    pub triplet_id: String,
    pub category: Option<Category>,
    pub success: bool,
    pub top_id: Option<String>,
    pub top_score: Option<f64>,
    pub positive_score: Option<f64>,
    pub pool_size: usize,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TripletReport {
    pub manifest: String,
    pub kind: ManifestKind,
    pub config: String,
    pub label: String,
    pub frames: Option<usize>,
    pub categories: Vec<CategoryAccuracy>,
    /// Mean of the category accuracies (synthetic) or plain accuracy (real), in [0, 1].
    pub average: f64,
    pub correct: usize,
    pub total: usize,
    pub pool: String,
    pub failures: Vec<VideoFailure>,
    pub records: Vec<TripletRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KnnBenchmarkReport {
    pub manifest: String,
    pub config: String,
    pub label: String,
    pub failures: Vec<VideoFailure>,
    pub report: KnnReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub label: String,
    pub config: String,
    pub accuracy: Option<f64>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FrameSweepRow {
    pub frames: usize,
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
}

/// Runs evaluations over one manifest, caching loaded tensors and embeddings
/// (keyed by config digest and frame source) across runs.
pub struct Harness {
    manifest: BenchmarkManifest,
    tensors: Option<Arc<Vec<Result<FeatureTensor, String>>>>,
    cache: HashMap<(String, FrameSource), Arc<Embedded>>,
}

impl Harness {
    pub fn new(manifest: BenchmarkManifest) -> Self {
        Self {
            manifest,
            tensors: None,
            cache: HashMap::new(),
        }
    }

    pub fn manifest(&self) -> &BenchmarkManifest {
        &self.manifest
    }

    fn load_from(&self, dir: Option<&PathBuf>) -> Vec<Result<FeatureTensor, String>> {
        self.manifest
            .entries
            .par_iter()
            .map(|e| {
                let path = match dir {
                    Some(d) => d.join(&e.feature_path),
                    None => self.manifest.resolve(e),
                };
                load_tensor(&path)
                    .map(|t| t.with_video_id(e.video_id.clone()))
                    .map_err(|err| format!("{}: {err}", path.display()))
            })
            .collect()
    }

    fn native(&mut self) -> Arc<Vec<Result<FeatureTensor, String>>> {
        if self.tensors.is_none() {
            self.tensors = Some(Arc::new(self.load_from(None)));
        }
        Arc::clone(self.tensors.as_ref().expect("loaded above"))
    }

    fn subsampled(
        tensors: &[Result<FeatureTensor, String>],
        n: usize,
    ) -> Result<Vec<Result<FeatureTensor, String>>, BenchError> {
        tensors
            .par_iter()
            .map(|t| match t {
                Err(e) => Ok(Err(e.clone())),
                Ok(t) if t.frames() < n => Err(BenchError::FrameCount {
                    video_id: t.video_id().to_owned(),
                    requested: n,
                    available: t.frames(),
                }),
                Ok(t) => {
                    let picked = t.select_frames(&uniform_indices(t.frames(), n)?)?;
                    Ok(Ok(picked))
                }
            })
            .collect()
    }

    fn embedded(
        &mut self,
        config: &MomentConfig,
        source: FrameSource,
    ) -> Result<Arc<Embedded>, BenchError> {
        config.validate()?;
        let key = (config.digest(), source.clone());
        if let Some(hit) = self.cache.get(&key) {
            return Ok(Arc::clone(hit));
        }
        let native;
        let owned;
        let tensors: &[Result<FeatureTensor, String>] = match &source {
            FrameSource::Native => {
                native = self.native();
                &native
            }
            FrameSource::Uniform(n) => {
                native = self.native();
                owned = Self::subsampled(&native, *n)?;
                &owned
            }
            FrameSource::Directory(n, dir) => {
                let loaded = self.load_from(Some(dir));
                owned = Self::subsampled(&loaded, *n)?;
                &owned
            }
        };
        let embeddings: Vec<Result<MomentEmbedding, String>> = tensors
            .par_iter()
            .map(|t| {
                let t = t.as_ref().map_err(Clone::clone)?;
                compute_embedding(t, config).map_err(|e| e.to_string())
            })
            .collect();
        let ok: Vec<MomentEmbedding> = embeddings
            .iter()
            .filter_map(|e| e.as_ref().ok().cloned())
            .collect();
        let index = if ok.is_empty() {
            None
        } else {
            Some(build_index(&ok)?)
        };
        let embedded = Arc::new(Embedded { embeddings, index });
        self.cache.insert(key, Arc::clone(&embedded));
        Ok(embedded)
    }

    fn failures(&self, embedded: &Embedded) -> Vec<VideoFailure> {
        self.manifest
            .entries
            .iter()
            .zip(&embedded.embeddings)
            .filter_map(|(e, r)| {
                r.as_ref().err().map(|err| VideoFailure {
                    video_id: e.video_id.clone(),
                    error: err.clone(),
                })
            })
            .collect()
    }

    /// Reference-vs-pool retrieval for every triplet.
    pub fn run_triplets(&mut self, config: &MomentConfig) -> Result<TripletReport, BenchError> {
        self.run_triplets_from(config, FrameSource::Native)
    }

    fn run_triplets_from(
        &mut self,
        config: &MomentConfig,
        source: FrameSource,
    ) -> Result<TripletReport, BenchError> {
        if self.manifest.kind == ManifestKind::LabeledKnn {
            return Err(BenchError::WrongKind {
                operation: "triplet benchmark",
                expected: "triplet_synthetic or triplet_real",
                found: self.manifest.kind,
            });
        }
        let frames = source.frames();
        let embedded = self.embedded(config, source)?;
        let manifest = &self.manifest;
        let records: Vec<TripletRecord> = manifest
            .triplets()
            .par_iter()
            .map(|t| evaluate_triplet(manifest, embedded.index.as_ref(), t))
            .collect();

        let total = records.len();
        let correct = records.iter().filter(|r| r.success).count();
        let mut by_category: BTreeMap<Category, (usize, usize)> = BTreeMap::new();
        for r in &records {
            if let Some(c) = r.category {
                let slot = by_category.entry(c).or_insert((0, 0));
                slot.0 += r.success as usize;
                slot.1 += 1;
            }
        }
        let categories: Vec<CategoryAccuracy> = by_category
            .into_iter()
            .map(|(category, (correct, total))| CategoryAccuracy {
                category,
                correct,
                total,
                accuracy: correct as f64 / total as f64,
            })
            .collect();
        let average = match manifest.kind {
            ManifestKind::TripletSynthetic if !categories.is_empty() => {
                categories.iter().map(|c| c.accuracy).sum::<f64>() / categories.len() as f64
            }
            _ => correct as f64 / total as f64,
        };
        let pool = match manifest.kind {
            ManifestKind::TripletSynthetic => format!(
                "every other video in the manifest ({} candidates)",
                manifest.entries.len() - 1
            ),
            _ => {
                let sizes: Vec<usize> = records.iter().map(|r| r.pool_size).collect();
                format!(
                    "declared pools ({}..={} candidates)",
                    sizes.iter().min().unwrap_or(&0),
                    sizes.iter().max().unwrap_or(&0)
                )
            }
        };
        Ok(TripletReport {
            manifest: manifest.name.clone(),
            kind: manifest.kind,
            config: config.canonical(),
            label: config.label(),
            frames,
            categories,
            average,
            correct,
            total,
            pool,
            failures: self.failures(&embedded),
            records,
        })
    }

    /// Embeds every entry, then runs the kNN protocol over the query/gallery split.
    pub fn run_knn(
        &mut self,
        config: &MomentConfig,
        options: KnnOptions,
    ) -> Result<KnnBenchmarkReport, BenchError> {
        if self.manifest.kind != ManifestKind::LabeledKnn {
            return Err(BenchError::WrongKind {
                operation: "kNN benchmark",
                expected: "labeled_knn",
                found: self.manifest.kind,
            });
        }
        let embedded = self.embedded(config, FrameSource::Native)?;
        let index = embedded.index.as_ref().ok_or(BenchError::NothingEmbedded)?;
        let mut labeled = LabeledSet::new();
        let mut total_queries = 0;
        for (e, emb) in self.manifest.entries.iter().zip(&embedded.embeddings) {
            let split = if e.role == Role::Query {
                Split::Query
            } else {
                Split::Gallery
            };
            total_queries += (split == Split::Query) as usize;
            if emb.is_ok() {
                labeled.insert(
                    e.video_id.clone(),
                    e.label.clone().unwrap_or_default(),
                    split,
                )?;
            }
        }
        let mut report = eval_knn(index, &labeled, options)?;
        if report.queries < total_queries {
            // queries that could not be embedded count as misses
            let kept = report.queries as f64 / total_queries as f64;
            report.acc1_majority *= kept;
            report.acc1_weighted *= kept;
            report.acc5_weighted *= kept;
            report.queries = total_queries;
        }
        Ok(KnnBenchmarkReport {
            manifest: self.manifest.name.clone(),
            config: config.canonical(),
            label: config.label(),
            failures: self.failures(&embedded),
            report,
        })
    }

    /// One triplet run per config; a failing config marks its row and the sweep
    /// continues. Rows are sorted by accuracy, best first.
    pub fn ablation(&mut self, configs: &[MomentConfig]) -> Result<Vec<AblationRow>, BenchError> {
        if configs.is_empty() {
            return Err(BenchError::InvalidParams(
                "ablation needs at least one config".into(),
            ));
        }
        let mut rows: Vec<AblationRow> = configs
            .iter()
            .map(|c| {
                let outcome = self.run_triplets(c);
                AblationRow {
                    label: c.label(),
                    config: c.canonical(),
                    accuracy: outcome.as_ref().ok().map(|r| r.average),
                    error: outcome.err().map(|e| e.to_string()),
                }
            })
            .collect();
        rows.sort_by(|a, b| match (a.accuracy, b.accuracy) {
            (Some(x), Some(y)) => y.total_cmp(&x),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => std::cmp::Ordering::Equal,
        });
        Ok(rows)
    }

    /// Re-runs the triplet benchmark with each video subsampled to `n` frames.
    /// Counts listed in `directories` load pre-extracted features from there instead.
    pub fn frame_sweep(
        &mut self,
        config: &MomentConfig,
        counts: &[usize],
        directories: &BTreeMap<usize, PathBuf>,
    ) -> Result<Vec<FrameSweepRow>, BenchError> {
        if counts.is_empty() || counts.contains(&0) {
            return Err(BenchError::InvalidParams(
                "frame counts must be >= 1".into(),
            ));
        }
        counts
            .iter()
            .map(|&n| {
                let source = match directories.get(&n) {
                    Some(dir) => FrameSource::Directory(n, dir.clone()),
                    None => FrameSource::Uniform(n),
                };
                let report = self.run_triplets_from(config, source)?;
                Ok(FrameSweepRow {
                    frames: n,
                    accuracy: report.average,
                    correct: report.correct,
                    total: report.total,
                })
            })
            .collect()
    }

    /// Embeddings of all entries that could be embedded, in manifest order.
    pub fn embeddings(
        &mut self,
        config: &MomentConfig,
    ) -> Result<Vec<MomentEmbedding>, BenchError> {
        let embedded = self.embedded(config, FrameSource::Native)?;
        Ok(embedded
            .embeddings
            .iter()
            .filter_map(|e| e.as_ref().ok().cloned())
            .collect())
    }
}

fn evaluate_triplet(
    manifest: &BenchmarkManifest,
    index: Option<&EmbeddingIndex>,
    t: &Triplet,
) -> TripletRecord {
    let mut record = TripletRecord {
        triplet_id: t.id.clone(),
        category: t.category,
        success: false,
        top_id: None,
        top_score: None,
        positive_score: None,
        pool_size: 0,
        error: None,
    };
    let pool = manifest.pool(t);
    record.pool_size = pool.len();
    let Some(index) = index else {
        record.error = Some("no embeddings".into());
        return record;
    };
    let (query, positive) = match (index.position(&t.reference), index.position(&t.positive)) {
        (Ok(q), Ok(p)) => (q, p),
        (Err(e), _) | (_, Err(e)) => {
            record.error = Some(format!("not embedded: {e}"));
            return record;
        }
    };
    let candidates: Vec<usize> = pool
        .iter()
        .filter_map(|id| index.position(id).ok())
        .collect();
    let ranked = index.rank_positions(query, &candidates);
    if let Some(&(top, score)) = ranked.first() {
        record.success = top == positive;
        record.top_id = Some(index.ids()[top].clone());
        record.top_score = Some(score);
    }
    record.positive_score = Some(index.similarity(query, positive));
    record
}

pub fn run_triplet_benchmark(
    manifest: &BenchmarkManifest,
    config: &MomentConfig,
) -> Result<TripletReport, BenchError> {
    Harness::new(manifest.clone()).run_triplets(config)
}

pub fn run_knn_benchmark(
    manifest: &BenchmarkManifest,
    config: &MomentConfig,
    options: KnnOptions,
) -> Result<KnnBenchmarkReport, BenchError> {
    Harness::new(manifest.clone()).run_knn(config, options)
}

pub fn ablation_sweep(
    manifest: &BenchmarkManifest,
    configs: &[MomentConfig],
) -> Result<Vec<AblationRow>, BenchError> {
    Harness::new(manifest.clone()).ablation(configs)
}

pub fn frame_count_sweep(
    manifest: &BenchmarkManifest,
    config: &MomentConfig,
    counts: &[usize],
    directories: &BTreeMap<usize, PathBuf>,
) -> Result<Vec<FrameSweepRow>, BenchError> {
    Harness::new(manifest.clone()).frame_sweep(config, counts, directories)
}

fn config(weights: &[f64], level: Level, fusion: Fusion) -> MomentConfig {
    MomentConfig {
        weights: weights.to_vec(),
        level,
        fusion,
        ..MomentConfig::default()
    }
}

/// The nine rows of the published ablation table, in its order.
pub fn table5_configs() -> Vec<MomentConfig> {
    let mut rows: Vec<MomentConfig> = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 8.0, 0.0],
        [1.0, 1.0, 1.0],
    ]
    .iter()
    .map(|w| config(w, Level::Patch, Fusion::Concat))
    .collect();
    rows.push(config(&[1.0, 8.0, 4.0], Level::Patch, Fusion::Sum));
    rows.push(config(&[1.0, 8.0, 4.0], Level::Frame, Fusion::Concat));
    rows.push(config(&[1.0, 8.0, 4.0], Level::PatchDiff, Fusion::Concat));
    rows.push(config(&[1.0, 8.0, 4.0], Level::Patch, Fusion::Concat));
    rows
}

/// Every weighting of the ablation table crossed with every level and fusion.
pub fn standard_ablation_configs() -> Vec<MomentConfig> {
    let weights = [
        [1.0, 0.0, 0.0],
        [0.0, 1.0, 0.0],
        [1.0, 1.0, 0.0],
        [1.0, 8.0, 0.0],
        [1.0, 1.0, 1.0],
        [1.0, 8.0, 4.0],
    ];
    let mut out = Vec::new();
    for w in &weights {
        for level in [Level::Patch, Level::Frame, Level::PatchDiff] {
            for fusion in [Fusion::Concat, Fusion::Sum] {
                out.push(config(w, level, fusion));
            }
        }
    }
    out
}
