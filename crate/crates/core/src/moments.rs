//! Temporal moment embeddings.
//!
//! A video is a `T x P x d` tensor of patch features. For every patch we take
//! the temporal mean (order 1) and central temporal moments (orders >= 2),
//! average each order over patches into one `d`-vector, weight the orders and
//! fuse them into a single unit-norm embedding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::feature_io::{FeatureTensor, FormatError};

#[derive(Debug, thiserror::Error)]
pub enum MomentError {
    #[error("invalid moment config: {0}")]
    InvalidConfig(String),
    #[error("central moments need order >= 2, got {0} (order 1 is the temporal mean)")]
    OrderTooLow(usize),
    #[error("patch_diff requires at least 2 frames ({video_id} has 1)")]
    TooFewFrames { video_id: String },
    #[error("degenerate embedding for {video_id}: fused vector is zero")]
    Degenerate { video_id: String },
    #[error(transparent)]
    Format(#[from] FormatError),
}

/// Which features the moments are taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    /// Raw patch features.
    Patch,
    /// One vector per frame, the mean over its patches.
    Frame,
    /// Forward differences between consecutive frames, per patch.
    PatchDiff,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Patch => "patch",
            Level::Frame => "frame",
            Level::PatchDiff => "patch_diff",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Level::Patch => "patch",
            Level::Frame => "frame",
            Level::PatchDiff => "diff-patch",
        }
    }
}

impl FromStr for Level {
    type Err = MomentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "patch" => Ok(Level::Patch),
            "frame" => Ok(Level::Frame),
            "patch_diff" | "diff-patch" | "diff" => Ok(Level::PatchDiff),
            other => Err(MomentError::InvalidConfig(format!(
                "unknown level {other:?}"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Concat,
    Sum,
}

impl Fusion {
    pub fn as_str(self) -> &'static str {
        match self {
            Fusion::Concat => "concat",
            Fusion::Sum => "sum",
        }
    }
}

impl FromStr for Fusion {
    type Err = MomentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "concat" => Ok(Fusion::Concat),
            "sum" => Ok(Fusion::Sum),
            other => Err(MomentError::InvalidConfig(format!(
                "unknown fusion {other:?}"
            ))),
        }
    }
}

/// Orders `1..=K` (one weight per order), level, fusion and normalization.
///
/// The canonical text form is
/// `orders=3;weights=1,8,4;level=patch;fusion=concat;per_moment_normalize=true;frames=32`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentConfig {
    pub weights: Vec<f64>,
    pub level: Level,
    pub fusion: Fusion,
    /// L2-normalize each moment block before it is weighted.
    pub per_moment_normalize: bool,
    /// Frames sampled per video; recorded for provenance, not used by the math.
    pub frames: usize,
}

impl Default for MomentConfig {
    fn default() -> Self {
        Self {
            weights: vec![1.0, 8.0, 4.0],
            level: Level::Patch,
            fusion: Fusion::Concat,
            per_moment_normalize: true,
            frames: 32,
        }
    }
}

fn fmt_weights(weights: &[f64]) -> String {
    weights
        .iter()
        .map(|w| w.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn parse_weights(s: &str) -> Result<Vec<f64>, MomentError> {
    s.split(',')
        .map(|w| {
            w.trim()
                .parse::<f64>()
                .map_err(|_| MomentError::InvalidConfig(format!("bad weight {w:?}")))
        })
        .collect()
}

fn parse_bool(s: &str) -> Result<bool, MomentError> {
    match s.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(MomentError::InvalidConfig(format!("bad boolean {other:?}"))),
    }
}

impl MomentConfig {
    pub fn with_weights(weights: &[f64]) -> Self {
        Self {
            weights: weights.to_vec(),
            ..Self::default()
        }
    }

    pub fn orders(&self) -> usize {
        self.weights.len()
    }

    pub fn validate(&self) -> Result<(), MomentError> {
        if self.weights.is_empty() {
            return Err(MomentError::InvalidConfig(
                "at least one order is required".into(),
            ));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(MomentError::InvalidConfig("weights must be finite".into()));
        }
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(MomentError::InvalidConfig(
                "at least one weight must be non-zero".into(),
            ));
        }
        if self.frames == 0 {
            return Err(MomentError::InvalidConfig("frames must be >= 1".into()));
        }
        Ok(())
    }

    /// Embedding dimension for features of width `dim`.
    pub fn output_dim(&self, dim: usize) -> usize {
        match self.fusion {
            Fusion::Concat => self.orders() * dim,
            Fusion::Sum => dim,
        }
    }

    pub fn canonical(&self) -> String {
        self.to_string()
    }

    /// First 16 hex digits of SHA-256 over the canonical text.
    pub fn digest(&self) -> String {
        let hash = Sha256::digest(self.canonical().as_bytes());
        hash.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Ablation-table label such as `(1,8,4)-patch-concat` or `(1,8,4)-diff-patch-concat`.
    pub fn label(&self) -> String {
        let mut label = format!(
            "({})-{}-{}",
            fmt_weights(&self.weights),
            self.level.label(),
            self.fusion.as_str()
        );
        if !self.per_moment_normalize {
            label.push_str("-raw");
        }
        label
    }

    /// Parses a label produced by [`MomentConfig::label`]; other fields take defaults.
    pub fn from_label(label: &str) -> Result<Self, MomentError> {
        let bad = || MomentError::InvalidConfig(format!("bad config label {label:?}"));
        let label = label.trim();
        let rest = label.strip_prefix('(').ok_or_else(bad)?;
        let (weights, rest) = rest.split_once(")-").ok_or_else(bad)?;
        let (rest, per_moment_normalize) = match rest.strip_suffix("-raw") {
            Some(r) => (r, false),
            None => (rest, true),
        };
        let (level, fusion) = rest.rsplit_once('-').ok_or_else(bad)?;
        let config = Self {
            weights: parse_weights(weights)?,
            level: level.parse()?,
            fusion: fusion.parse()?,
            per_moment_normalize,
            ..Self::default()
        };
        config.validate()?;
        Ok(config)
    }
}

impl fmt::Display for MomentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "orders={};weights={};level={};fusion={};per_moment_normalize={};frames={}",
            self.orders(),
            fmt_weights(&self.weights),
            self.level.as_str(),
            self.fusion.as_str(),
            self.per_moment_normalize,
            self.frames
        )
    }
}

impl FromStr for MomentConfig {
    type Err = MomentError;

    /// Accepts any subset of keys in any order; missing keys keep their defaults.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut config = Self::default();
        let mut orders = None;
        for pair in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (key, value) = pair.split_once('=').ok_or_else(|| {
                MomentError::InvalidConfig(format!("expected key=value, got {pair:?}"))
            })?;
            match key.trim() {
                "orders" => {
                    orders =
                        Some(value.trim().parse::<usize>().map_err(|_| {
                            MomentError::InvalidConfig(format!("bad orders {value:?}"))
                        })?)
                }
                "weights" => config.weights = parse_weights(value)?,
                "level" => config.level = value.parse()?,
                "fusion" => config.fusion = value.parse()?,
                "per_moment_normalize" => config.per_moment_normalize = parse_bool(value)?,
                "frames" => {
                    config.frames = value
                        .trim()
                        .parse()
                        .map_err(|_| MomentError::InvalidConfig(format!("bad frames {value:?}")))?
                }
                other => return Err(MomentError::InvalidConfig(format!("unknown key {other:?}"))),
            }
        }
        if let Some(k) = orders {
            if k != config.orders() {
                return Err(MomentError::InvalidConfig(format!(
                    "orders={k} but {} weights given",
                    config.orders()
                )));
            }
        }
        config.validate()?;
        Ok(config)
    }
}

/// Per-patch temporal moments of one order, a `P x d` row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchMoments {
    pub order: usize,
    pub patches: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl PatchMoments {
    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.dim..(p + 1) * self.dim]
    }
}

/// Spatial mean of one order's patch moments.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentDescriptor {
    pub order: usize,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentEmbedding {
    pub video_id: String,
    pub vector: Vec<f64>,
    pub config_digest: String,
    pub normalized: bool,
}

impl MomentEmbedding {
    pub fn dim(&self) -> usize {
        self.vector.len()
    }
}

/// f64 copy of a tensor after the level transform.
struct Samples {
    frames: usize,
    patches: usize,
    dim: usize,
    data: Vec<f64>,
}

impl Samples {
    fn from_tensor(tensor: &FeatureTensor) -> Self {
        let (frames, patches, dim) = tensor.shape();
        Self {
            frames,
            patches,
            dim,
            data: tensor.data().iter().map(|&v| v as f64).collect(),
        }
    }

    fn stride(&self) -> usize {
        self.patches * self.dim
    }

    fn frame(&self, t: usize) -> &[f64] {
        let s = self.stride();
        &self.data[t * s..(t + 1) * s]
    }

    fn collapse_patches(self) -> Self {
        let mut data = Vec::with_capacity(self.frames * self.dim);
        for t in 0..self.frames {
            let frame = self.frame(t);
            let mut acc = vec![0.0f64; self.dim];
            for row in frame.chunks_exact(self.dim) {
                for (a, v) in acc.iter_mut().zip(row) {
                    *a += v;
                }
            }
            data.extend(acc.into_iter().map(|a| a / self.patches as f64));
        }
        Self {
            frames: self.frames,
            patches: 1,
            dim: self.dim,
            data,
        }
    }

    fn forward_differences(self) -> Self {
        let s = self.stride();
        let data = (0..self.frames - 1)
            .flat_map(|t| {
                let (cur, next) = (t * s, (t + 1) * s);
                (0..s).map(move |i| (cur + i, next + i))
            })
            .map(|(a, b)| self.data[b] - self.data[a])
            .collect();
        Self {
            frames: self.frames - 1,
            patches: self.patches,
            dim: self.dim,
            data,
        }
    }

    /// Per-patch temporal mean, taken relative to the first frame so a constant
    /// sequence yields its value exactly.
    fn temporal_mean(&self) -> Vec<f64> {
        let base = self.frame(0);
        let mut acc = vec![0.0f64; self.stride()];
        for t in 1..self.frames {
            for ((a, v), b) in acc.iter_mut().zip(self.frame(t)).zip(base) {
                *a += v - b;
            }
        }
        let n = self.frames as f64;
        acc.iter().zip(base).map(|(a, b)| b + a / n).collect()
    }

    /// Central moments for orders `2..=max_order`, one `P x d` vector per order.
    fn central_moments(&self, mean: &[f64], max_order: usize) -> Vec<Vec<f64>> {
        let orders = max_order.saturating_sub(1);
        let mut acc = vec![vec![0.0f64; self.stride()]; orders];
        for t in 0..self.frames {
            for (i, (v, m)) in self.frame(t).iter().zip(mean).enumerate() {
                let dev = v - m;
                for (j, block) in acc.iter_mut().enumerate() {
                    block[i] += dev.powi(j as i32 + 2);
                }
            }
        }
        let n = self.frames as f64;
        for block in &mut acc {
            for a in block.iter_mut() {
                *a /= n;
            }
        }
        acc
    }
}

fn patch_average(values: &[f64], patches: usize, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0f64; dim];
    for row in values.chunks_exact(dim) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= patches as f64);
    acc
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Order-1 moments: `values[p] = mean_t f[t][p]`.
pub fn temporal_mean(tensor: &FeatureTensor) -> PatchMoments {
    let samples = Samples::from_tensor(tensor);
    PatchMoments {
        order: 1,
        patches: samples.patches,
        dim: samples.dim,
        values: samples.temporal_mean(),
    }
}

/// Order-`k` central moments, `mean_t (f[t][p] - mu_p)^k` elementwise (two passes).
pub fn central_moment(tensor: &FeatureTensor, k: usize) -> Result<PatchMoments, MomentError> {
    if k < 2 {
        return Err(MomentError::OrderTooLow(k));
    }
    let samples = Samples::from_tensor(tensor);
    let mean = samples.temporal_mean();
    let n = samples.frames as f64;
    let mut values = vec![0.0f64; samples.stride()];
    for t in 0..samples.frames {
        for ((a, v), m) in values.iter_mut().zip(samples.frame(t)).zip(&mean) {
            *a += (v - m).powi(k as i32);
        }
    }
    values.iter_mut().for_each(|a| *a /= n);
    Ok(PatchMoments {
        order: k,
        patches: samples.patches,
        dim: samples.dim,
        values,
    })
}

/// Mean of the patch rows.
pub fn spatial_aggregate(moments: &PatchMoments) -> MomentDescriptor {
    MomentDescriptor {
        order: moments.order,
        values: patch_average(&moments.values, moments.patches, moments.dim),
    }
}

/// `out[t] = in[t+1] - in[t]`; the id gains a `#diff` suffix.
pub fn temporal_difference(tensor: &FeatureTensor) -> Result<FeatureTensor, MomentError> {
    if tensor.frames() < 2 {
        return Err(MomentError::TooFewFrames {
            video_id: tensor.video_id().to_owned(),
        });
    }
    let diff = Samples::from_tensor(tensor).forward_differences();
    Ok(FeatureTensor::from_f64(
        format!("{}#diff", tensor.video_id()),
        diff.frames,
        diff.patches,
        diff.dim,
        &diff.data,
    )?)
}

/// Replaces each frame by the mean of its patches, giving a `(T, 1, d)` tensor.
pub fn frame_collapse(tensor: &FeatureTensor) -> FeatureTensor {
    let collapsed = Samples::from_tensor(tensor).collapse_patches();
    FeatureTensor::from_f64(
        tensor.video_id(),
        collapsed.frames,
        1,
        collapsed.dim,
        &collapsed.data,
    )
    .expect("patch means of finite f32 values are finite")
}

fn level_samples(tensor: &FeatureTensor, level: Level) -> Result<Samples, MomentError> {
    let samples = Samples::from_tensor(tensor);
    match level {
        Level::Patch => Ok(samples),
        Level::Frame => Ok(samples.collapse_patches()),
        Level::PatchDiff => {
            if samples.frames < 2 {
                return Err(MomentError::TooFewFrames {
                    video_id: tensor.video_id().to_owned(),
                });
            }
            Ok(samples.forward_differences())
        }
    }
}

/// `M(1..=K)` for the configured level, before normalization and weighting.
pub fn moment_descriptors(
    tensor: &FeatureTensor,
    config: &MomentConfig,
) -> Result<Vec<MomentDescriptor>, MomentError> {
    config.validate()?;
    let samples = level_samples(tensor, config.level)?;
    let mean = samples.temporal_mean();
    let mut out = Vec::with_capacity(config.orders());
    out.push(MomentDescriptor {
        order: 1,
        values: patch_average(&mean, samples.patches, samples.dim),
    });
    for (j, block) in samples
        .central_moments(&mean, config.orders())
        .into_iter()
        .enumerate()
    {
        out.push(MomentDescriptor {
            order: j + 2,
            values: patch_average(&block, samples.patches, samples.dim),
        });
    }
    Ok(out)
}

/// Full pipeline: level transform, descriptors, optional per-block
/// normalization, weighting, fusion and a final L2 normalization.
pub fn compute_embedding(
    tensor: &FeatureTensor,
    config: &MomentConfig,
) -> Result<MomentEmbedding, MomentError> {
    let blocks = moment_descriptors(tensor, config)?;
    let dim = tensor.dim();
    let mut fused = vec![0.0f64; config.output_dim(dim)];
    for (k, (block, &alpha)) in blocks.iter().zip(&config.weights).enumerate() {
        let scale = if config.per_moment_normalize {
            let norm = l2_norm(&block.values);
            // an all-zero block stays zero
            if norm > 0.0 {
                alpha / norm
            } else {
                0.0
            }
        } else {
            alpha
        };
        let target = match config.fusion {
            Fusion::Concat => &mut fused[k * dim..(k + 1) * dim],
            Fusion::Sum => &mut fused[..],
        };
        for (out, v) in target.iter_mut().zip(&block.values) {
            *out += scale * v;
        }
    }
    let norm = l2_norm(&fused);
    if norm == 0.0 || !norm.is_finite() {
        return Err(MomentError::Degenerate {
            video_id: tensor.video_id().to_owned(),
        });
    }
    fused.iter_mut().for_each(|v| *v /= norm);
    Ok(MomentEmbedding {
        video_id: tensor.video_id().to_owned(),
        vector: fused,
        config_digest: config.digest(),
        normalized: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tensor(frames: usize, patches: usize, dim: usize, data: &[f32]) -> FeatureTensor {
        FeatureTensor::new("t", frames, patches, dim, data.to_vec()).unwrap()
    }

    fn two_frames() -> FeatureTensor {
        tensor(2, 1, 2, &[1.0, 3.0, 3.0, 5.0])
    }

    #[test]
    fn midpoint_mean_and_variance() {
        let x = two_frames();
        assert_eq!(temporal_mean(&x).values, vec![2.0, 4.0]);
        assert_eq!(central_moment(&x, 2).unwrap().values, vec![1.0, 1.0]);
        assert_eq!(central_moment(&x, 3).unwrap().values, vec![0.0, 0.0]);
        assert!(matches!(
            central_moment(&x, 1),
            Err(MomentError::OrderTooLow(1))
        ));
    }

    #[test]
    fn constant_tensor_has_zero_higher_moments() {
        let data = [0.1f32, -7.3, 2.9].repeat(5 * 2);
        let x = tensor(5, 2, 3, &data);
        let mean = temporal_mean(&x);
        for p in 0..2 {
            assert_eq!(mean.row(p), &[0.1f32 as f64, -7.3f32 as f64, 2.9f32 as f64]);
        }
        for k in 2..6 {
            assert!(central_moment(&x, k)
                .unwrap()
                .values
                .iter()
                .all(|&v| v == 0.0));
        }
    }

    #[test]
    fn symmetric_frames_have_zero_skew() {
        // frames v and 2*mu - v around mu = (1, -2, 0.5)
        let x = tensor(2, 1, 3, &[3.0, -5.0, 1.5, -1.0, 1.0, -0.5]);
        assert_eq!(central_moment(&x, 3).unwrap().values, vec![0.0; 3]);
    }

    #[test]
    fn spatial_aggregate_cases() {
        let one = PatchMoments {
            order: 2,
            patches: 1,
            dim: 3,
            values: vec![1.0, 2.0, 3.0],
        };
        assert_eq!(spatial_aggregate(&one).values, one.values);
        let two = PatchMoments {
            order: 1,
            patches: 2,
            dim: 3,
            values: vec![0.0, 0.0, 0.0, 2.0, 2.0, 2.0],
        };
        assert_eq!(spatial_aggregate(&two).values, vec![1.0; 3]);
    }

    #[test]
    fn differences() {
        let diff = temporal_difference(&two_frames()).unwrap();
        assert_eq!(diff.shape(), (1, 1, 2));
        assert_eq!(diff.data(), &[2.0, 2.0]);
        assert_eq!(diff.video_id(), "t#diff");

        let single = tensor(1, 1, 2, &[1.0, 2.0]);
        let err = temporal_difference(&single).unwrap_err();
        assert!(err
            .to_string()
            .contains("patch_diff requires at least 2 frames"));

        let constant = tensor(3, 2, 1, &[4.0; 6]);
        assert!(temporal_difference(&constant)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp_difference_has_zero_variance() {
        let v = [0.5f32, -1.25, 2.0];
        let data: Vec<f32> = (0..6).flat_map(|t| v.map(|x| x * t as f32)).collect();
        let ramp = tensor(6, 1, 3, &data);
        let diff = temporal_difference(&ramp).unwrap();
        for t in 0..5 {
            assert_eq!(diff.frame(t), &v);
        }
        assert!(central_moment(&diff, 2)
            .unwrap()
            .values
            .iter()
            .all(|&m| m == 0.0));
    }

    #[test]
    fn frame_collapse_cases() {
        let x = two_frames();
        assert_eq!(frame_collapse(&x), x);
        let y = tensor(1, 2, 2, &[0.0, 0.0, 2.0, 4.0]);
        assert_eq!(frame_collapse(&y).data(), &[1.0, 2.0]);
    }

    #[test]
    fn embedding_dimension() {
        let d = 768;
        let data: Vec<f32> = (0..2 * 2 * d).map(|i| (i % 13) as f32 * 0.1).collect();
        let x = FeatureTensor::new("v", 2, 2, d, data).unwrap();
        let e = compute_embedding(&x, &MomentConfig::default()).unwrap();
        assert_eq!(e.dim(), 2304);
        let sum = MomentConfig {
            fusion: Fusion::Sum,
            ..MomentConfig::default()
        };
        assert_eq!(compute_embedding(&x, &sum).unwrap().dim(), d);
    }

    #[test]
    fn constant_video_mean_only_and_degenerate() {
        let x = tensor(4, 1, 2, &[3.0, 4.0].repeat(4));
        let e = compute_embedding(&x, &MomentConfig::with_weights(&[1.0, 0.0, 0.0])).unwrap();
        let expected = [0.6, 0.8, 0.0, 0.0, 0.0, 0.0];
        assert!(e
            .vector
            .iter()
            .zip(expected)
            .all(|(a, b)| (a - b).abs() < 1e-15));
        assert!(e.normalized);
        let err = compute_embedding(&x, &MomentConfig::with_weights(&[0.0, 1.0, 0.0])).unwrap_err();
        assert!(matches!(err, MomentError::Degenerate { ref video_id } if video_id == "t"));
    }

    #[test]
    fn config_text_form() {
        let c = MomentConfig::default();
        let text =
            "orders=3;weights=1,8,4;level=patch;fusion=concat;per_moment_normalize=true;frames=32";
        assert_eq!(c.to_string(), text);
        assert_eq!(text.parse::<MomentConfig>().unwrap(), c);
        assert_eq!(c.digest().len(), 16);
        assert_ne!(
            c.digest(),
            MomentConfig::with_weights(&[1.0, 8.0, 0.0]).digest()
        );

        let partial: MomentConfig = "weights=0.5,2;level=patch_diff".parse().unwrap();
        assert_eq!(partial.orders(), 2);
        assert_eq!(partial.level, Level::PatchDiff);
        assert!("orders=2;weights=1,8,4".parse::<MomentConfig>().is_err());
        assert!("weights=0,0".parse::<MomentConfig>().is_err());
        assert!("colour=red".parse::<MomentConfig>().is_err());
    }

    #[test]
    fn labels() {
        let mut c = MomentConfig::default();
        assert_eq!(c.label(), "(1,8,4)-patch-concat");
        c.level = Level::PatchDiff;
        assert_eq!(c.label(), "(1,8,4)-diff-patch-concat");
        c.level = Level::Frame;
        c.fusion = Fusion::Sum;
        assert_eq!(c.label(), "(1,8,4)-frame-sum");
        for label in [
            "(1,0,0)-patch-concat",
            "(1,8,4)-diff-patch-concat",
            "(0.5,2)-frame-sum-raw",
        ] {
            assert_eq!(MomentConfig::from_label(label).unwrap().label(), label);
        }
    }

    fn arb_tensor() -> impl Strategy<Value = FeatureTensor> {
        (2usize..8, 1usize..4, 1usize..5).prop_flat_map(|(t, p, d)| {
            proptest::collection::vec(-10f32..10.0, t * p * d)
                .prop_map(move |data| FeatureTensor::new("p", t, p, d, data).unwrap())
        })
    }

    proptest! {
        #[test]
        fn sum_and_concat_agree_for_one_order(x in arb_tensor()) {
            let concat = MomentConfig::with_weights(&[1.0]);
            let sum = MomentConfig { fusion: Fusion::Sum, ..concat.clone() };
            let a = compute_embedding(&x, &concat).unwrap();
            let b = compute_embedding(&x, &sum).unwrap();
            prop_assert_eq!(a.vector, b.vector);
        }

        #[test]
        fn collapse_commutes_with_mean(x in arb_tensor()) {
            let rhs = spatial_aggregate(&temporal_mean(&x)).values;
            // frame_collapse narrows its output to f32
            let lhs = temporal_mean(&frame_collapse(&x)).values;
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() <= 1e-6 * (1.0 + b.abs()));
            }
            // the frame level inside the pipeline stays in f64
            let frame = MomentConfig { level: Level::Frame, ..MomentConfig::with_weights(&[1.0]) };
            let lhs = &moment_descriptors(&x, &frame).unwrap()[0].values;
            for (a, b) in lhs.iter().zip(&rhs) {
                prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn embeddings_are_unit_norm(x in arb_tensor(), w in proptest::collection::vec(0.1f64..10.0, 1..5)) {
            let e = compute_embedding(&x, &MomentConfig::with_weights(&w));
            if let Ok(e) = e {
                prop_assert!((l2_norm(&e.vector) - 1.0).abs() < 1e-6);
            }
        }
    }
}
