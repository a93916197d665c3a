//! Planted-signal datasets with known ground truth.
//!
//! Every patch feature is `appearance + motion + noise`:
//!
//! * appearance: a per-patch random vector scaled by `appearance_confound`,
//!   constant over time;
//! * motion: `motion_signal * gain[p] * w(t) * u`, where a motion owns the
//!   direction `u`, the per-patch gains (zero on background patches) and a
//!   periodic waveform `w` whose harmonic mix makes it asymmetric;
//! * noise: i.i.d. Gaussian.
//!
//! Waveforms complete whole periods over the clip, so a circular time shift
//! only permutes frames. Positives replay the reference motion shifted in
//! time; hard negatives keep the reference appearance with a fresh motion.

use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::manifest::{BenchmarkManifest, Category, ManifestEntry, ManifestKind, Role};
use super::BenchError;
use crate::feature_io::{save_tensor, FeatureTensor};

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticParams {
    pub seed: u64,
    /// Number of triplets; each has its own motion.
    pub groups: usize,
    /// Videos per triplet: reference, positive and `per_group - 2` hard negatives.
    pub per_group: usize,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub appearance_confound: f64,
    pub motion_signal: f64,
    pub noise: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            seed: 7,
            groups: 20,
            per_group: 5,
            frames: 32,
            patches: 8,
            dim: 16,
            appearance_confound: 1.0,
            motion_signal: 1.0,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledParams {
    pub seed: u64,
    pub classes: usize,
    pub per_class: usize,
    /// Leading videos of each class that become queries; the rest form the gallery.
    pub queries_per_class: usize,
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub appearance_confound: f64,
    pub motion_signal: f64,
    /// Per-video perturbation of the class motion direction.
    pub jitter: f64,
    pub noise: f64,
}

impl Default for LabeledParams {
    fn default() -> Self {
        Self {
            seed: 7,
            classes: 3,
            per_class: 20,
            queries_per_class: 5,
            frames: 32,
            patches: 8,
            dim: 16,
            appearance_confound: 1.0,
            motion_signal: 1.0,
            jitter: 0.3,
            noise: 0.1,
        }
    }
}

/// A generated video before it is written to disk.
#[derive(Clone, Debug)]
pub struct SyntheticVideo {
    pub entry: ManifestEntry,
    pub tensor: FeatureTensor,
}

#[derive(Clone)]
struct Motion {
    direction: Vec<f64>,
    gains: Vec<f64>,
    cycles: f64,
    phase: f64,
    harmonic: f64,
    harmonic_phase: f64,
}

impl Motion {
    fn sample(rng: &mut ChaCha8Rng, patches: usize, dim: usize) -> Self {
        let foreground = patches.div_ceil(2);
        Self {
            direction: gaussian(rng, dim),
            gains: (0..patches)
                .map(|p| {
                    if p < foreground {
                        rng.random_range(0.5..1.5)
                    } else {
                        0.0
                    }
                })
                .collect(),
            cycles: rng.random_range(1..=3) as f64,
            phase: rng.random_range(0.0..TAU),
            harmonic: rng.random_range(-0.8..0.8),
            harmonic_phase: rng.random_range(0.0..TAU),
        }
    }

    fn wave(&self, t: usize, frames: usize) -> f64 {
        let theta = TAU * self.cycles * t as f64 / frames as f64 + self.phase;
        theta.sin() + self.harmonic * (2.0 * theta + self.harmonic_phase).cos()
    }

    fn jittered(&self, rng: &mut ChaCha8Rng, amount: f64) -> Self {
        Self {
            direction: self
                .direction
                .iter()
                .map(|d| d + amount * rng.sample::<f64, _>(StandardNormal))
                .collect(),
            gains: self.gains.clone(),
            ..*self
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// `patches x dim` appearance, row-major.
fn appearance(rng: &mut ChaCha8Rng, patches: usize, dim: usize) -> Vec<f64> {
    gaussian(rng, patches * dim)
}

struct Shape {
    frames: usize,
    patches: usize,
    dim: usize,
}

#[allow(clippy::too_many_arguments)]
fn render(
    rng: &mut ChaCha8Rng,
    id: &str,
    shape: &Shape,
    look: &[f64],
    motion: &Motion,
    shift: usize,
    appearance_scale: f64,
    motion_scale: f64,
    noise: f64,
) -> Result<FeatureTensor, BenchError> {
    let Shape {
        frames,
        patches,
        dim,
    } = *shape;
    let mut data = Vec::with_capacity(frames * patches * dim);
    for t in 0..frames {
        let w = motion.wave((t + shift) % frames, frames);
        for p in 0..patches {
            let g = motion.gains[p];
            for k in 0..dim {
                let v = appearance_scale * look[p * dim + k]
                    + motion_scale * g * w * motion.direction[k]
                    + noise * rng.sample::<f64, _>(StandardNormal);
                data.push(v);
            }
        }
    }
    Ok(FeatureTensor::from_f64(id, frames, patches, dim, &data)?)
}

/// Positive appearance for a category, derived from the reference appearance.
fn edit_appearance(
    rng: &mut ChaCha8Rng,
    category: Category,
    reference: &[f64],
    patches: usize,
    dim: usize,
) -> Vec<f64> {
    let foreground = patches.div_ceil(2);
    let fresh = appearance(rng, patches, dim);
    let mut out = reference.to_vec();
    for p in 0..patches {
        let row = p * dim..(p + 1) * dim;
        let moving = p < foreground;
        match category {
            // static scene content changes, the moving subject does not
            Category::Static if !moving => out[row.clone()].copy_from_slice(&fresh[row]),
            // subject replaced
            Category::DynObj if moving => out[row.clone()].copy_from_slice(&fresh[row]),
            // subject attributes partially changed
            Category::DynApp if moving => {
                for i in row {
                    out[i] = 0.5 * out[i] + fresh[i];
                }
            }
            Category::Style | Category::View => out[row.clone()].copy_from_slice(&fresh[row]),
            _ => {}
        }
    }
    out
}

fn check(cond: bool, msg: &str) -> Result<(), BenchError> {
    if cond {
        Ok(())
    } else {
        Err(BenchError::InvalidParams(msg.to_owned()))
    }
}

fn check_common(
    frames: usize,
    patches: usize,
    dim: usize,
    scales: [f64; 3],
) -> Result<(), BenchError> {
    check(
        frames >= 2 && patches >= 1 && dim >= 1,
        "need frames >= 2, patches >= 1, dim >= 1",
    )?;
    check(
        scales.iter().all(|s| s.is_finite() && *s >= 0.0),
        "appearance_confound, motion_signal and noise must be finite and >= 0",
    )
}

fn video_entry(
    id: String,
    role: Role,
    triplet: Option<String>,
    category: Option<Category>,
    label: Option<String>,
) -> ManifestEntry {
    ManifestEntry {
        feature_path: PathBuf::from("features").join(format!("{id}.mvft")),
        video_id: id,
        role,
        triplet_id: triplet,
        category,
        label,
    }
}

/// Builds the triplet dataset in memory.
pub fn synthesize_triplets(params: &SyntheticParams) -> Result<Vec<SyntheticVideo>, BenchError> {
    check(params.groups >= 2, "groups must be >= 2")?;
    check(
        params.per_group >= 3,
        "per_group must be >= 3 (reference, positive, hard negative)",
    )?;
    check_common(
        params.frames,
        params.patches,
        params.dim,
        [
            params.appearance_confound,
            params.motion_signal,
            params.noise,
        ],
    )?;
    let shape = Shape {
        frames: params.frames,
        patches: params.patches,
        dim: params.dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut videos = Vec::with_capacity(params.groups * params.per_group);
    for g in 0..params.groups {
        let category = Category::ALL[g % Category::ALL.len()];
        let triplet = format!("g{g:03}");
        let look = appearance(&mut rng, params.patches, params.dim);
        let motion = Motion::sample(&mut rng, params.patches, params.dim);
        let positive_look = edit_appearance(&mut rng, category, &look, params.patches, params.dim);
        let mut positive_motion = motion.clone();
        if category == Category::View {
            // a new viewpoint moves the subject to other patches
            positive_motion.gains.rotate_left(1);
        }
        let shift = rng.random_range(0..params.frames);

        let mut emit = |rng: &mut ChaCha8Rng,
                        suffix: &str,
                        role: Role,
                        look: &[f64],
                        motion: &Motion,
                        shift: usize| {
            let id = format!("{triplet}_{suffix}");
            let tensor = render(
                rng,
                &id,
                &shape,
                look,
                motion,
                shift,
                params.appearance_confound,
                params.motion_signal,
                params.noise,
            )?;
            videos.push(SyntheticVideo {
                entry: video_entry(id, role, Some(triplet.clone()), Some(category), None),
                tensor,
            });
            Ok::<_, BenchError>(())
        };
        emit(&mut rng, "ref", Role::Reference, &look, &motion, 0)?;
        emit(
            &mut rng,
            "pos",
            Role::Positive,
            &positive_look,
            &positive_motion,
            shift,
        )?;
        for j in 0..params.per_group - 2 {
            let other = Motion::sample(&mut rng, params.patches, params.dim);
            emit(
                &mut rng,
                &format!("neg{j}"),
                Role::Negative,
                &look,
                &other,
                0,
            )?;
        }
    }
    Ok(videos)
}

/// Builds the labeled kNN dataset in memory.
pub fn synthesize_labeled(params: &LabeledParams) -> Result<Vec<SyntheticVideo>, BenchError> {
    check(params.classes >= 2, "classes must be >= 2")?;
    check(params.per_class >= 2, "per_class must be >= 2")?;
    check(
        params.queries_per_class >= 1 && params.queries_per_class < params.per_class,
        "need 1 <= queries_per_class < per_class",
    )?;
    check_common(
        params.frames,
        params.patches,
        params.dim,
        [
            params.appearance_confound,
            params.motion_signal,
            params.noise,
        ],
    )?;
    check(
        params.jitter.is_finite() && params.jitter >= 0.0,
        "jitter must be >= 0",
    )?;
    let shape = Shape {
        frames: params.frames,
        patches: params.patches,
        dim: params.dim,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let motions: Vec<Motion> = (0..params.classes)
        .map(|_| Motion::sample(&mut rng, params.patches, params.dim))
        .collect();
    let mut videos = Vec::with_capacity(params.classes * params.per_class);
    for (c, class_motion) in motions.iter().enumerate() {
        let label = format!("class_{c:02}");
        for j in 0..params.per_class {
            let id = format!("c{c:02}_v{j:03}");
            let look = appearance(&mut rng, params.patches, params.dim);
            let motion = class_motion.jittered(&mut rng, params.jitter);
            let shift = rng.random_range(0..params.frames);
            let tensor = render(
                &mut rng,
                &id,
                &shape,
                &look,
                &motion,
                shift,
                params.appearance_confound,
                params.motion_signal,
                params.noise,
            )?;
            let role = if j < params.queries_per_class {
                Role::Query
            } else {
                Role::Gallery
            };
            videos.push(SyntheticVideo {
                entry: video_entry(id, role, None, None, Some(label.clone())),
                tensor,
            });
        }
    }
    Ok(videos)
}

fn write_dataset(
    name: &str,
    kind: ManifestKind,
    videos: Vec<SyntheticVideo>,
    out_dir: &Path,
) -> Result<BenchmarkManifest, BenchError> {
    std::fs::create_dir_all(out_dir.join("features"))?;
    let mut entries = Vec::with_capacity(videos.len());
    for v in videos {
        save_tensor(&v.tensor, &out_dir.join(&v.entry.feature_path))?;
        entries.push(v.entry);
    }
    let mut manifest = BenchmarkManifest::new(name, kind, entries);
    manifest.set_base_dir(out_dir);
    manifest.save(&out_dir.join("manifest.json"))?;
    manifest.validate()?;
    Ok(manifest)
}

/// Writes MVFT files under `out_dir/features/` and `out_dir/manifest.json`.
pub fn generate_synthetic(
    params: &SyntheticParams,
    out_dir: &Path,
) -> Result<BenchmarkManifest, BenchError> {
    let videos = synthesize_triplets(params)?;
    write_dataset(
        &format!("synthetic-seed{}", params.seed),
        ManifestKind::TripletSynthetic,
        videos,
        out_dir,
    )
}

/// Labeled counterpart of [`generate_synthetic`].
pub fn generate_labeled(
    params: &LabeledParams,
    out_dir: &Path,
) -> Result<BenchmarkManifest, BenchError> {
    let videos = synthesize_labeled(params)?;
    write_dataset(
        &format!("labeled-seed{}", params.seed),
        ManifestKind::LabeledKnn,
        videos,
        out_dir,
    )
}
