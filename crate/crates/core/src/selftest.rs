//! End-to-end self check on generated data.
//!
//! Every check appends one deterministic line to the log (no timings, no
//! paths), so two runs with the same seed produce identical logs whatever the
//! thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::bench::{
    generate_labeled, generate_synthetic, similarity_heatmap, Harness, LabeledParams,
    SyntheticParams,
};
use crate::feature_io::{read_feature_file, write_feature_file, FeatureTensor};
use crate::knn::KnnOptions;
use crate::moments::{central_moment, temporal_mean, MomentConfig};
use crate::Error;

/// Deliberate breakage used to check that the self test can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// The main configuration silently loses every moment above the mean.
    MeanOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub checks: Vec<CheckResult>,
}

impl SelftestReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn log(&self) -> String {
        let mut out = format!("selftest seed={}\n", self.seed);
        for c in &self.checks {
            out.push_str(&format!(
                "{} {}: {}\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.detail
            ));
        }
        out.push_str(if self.passed() {
            "result: PASS\n"
        } else {
            "result: FAIL\n"
        });
        out
    }

    fn push(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(CheckResult {
            name: name.to_owned(),
            passed,
            detail,
        });
    }
}

/// Binomial acceptance band `p +- 3 sigma` (clipped to [0, 1]) for `n` trials.
pub fn chance_band(p: f64, n: usize) -> (f64, f64) {
    let sigma = (p * (1.0 - p) / n as f64).sqrt();
    ((p - 3.0 * sigma).max(0.0), (p + 3.0 * sigma).min(1.0))
}

fn random_tensor(rng: &mut ChaCha8Rng, id: &str) -> FeatureTensor {
    let (t, p, d) = (
        rng.random_range(1..=8),
        rng.random_range(1..=4),
        rng.random_range(1..=6),
    );
    let data: Vec<f32> = (0..t * p * d)
        .map(|_| rng.random_range(-2.0f32..2.0))
        .collect();
    FeatureTensor::new(id, t, p, d, data).expect("valid shape")
}

fn naive_moment(tensor: &FeatureTensor, k: usize) -> Vec<f64> {
    let (t, p, d) = tensor.shape();
    let x = |f: usize, q: usize, c: usize| tensor.data()[(f * p + q) * d + c] as f64;
    let mut out = vec![0.0; p * d];
    for q in 0..p {
        for c in 0..d {
            let mean = (0..t).map(|f| x(f, q, c)).sum::<f64>() / t as f64;
            out[q * d + c] = if k == 1 {
                mean
            } else {
                (0..t)
                    .map(|f| (x(f, q, c) - mean).powi(k as i32))
                    .sum::<f64>()
                    / t as f64
            };
        }
    }
    out
}

fn check_format_and_moments(rng: &mut ChaCha8Rng, report: &mut SelftestReport) {
    let mut round_trips = 0;
    let mut worst: f64 = 0.0;
    const CASES: usize = 50;
    for i in 0..CASES {
        let tensor = random_tensor(rng, &format!("t{i}"));
        let mut bytes = Vec::new();
        write_feature_file(&tensor, &mut bytes).expect("write to memory");
        if read_feature_file(bytes.as_slice()).is_ok_and(|back| back == tensor) {
            round_trips += 1;
        }
        for k in 1..=3 {
            let fast = if k == 1 {
                temporal_mean(&tensor).values
            } else {
                central_moment(&tensor, k).expect("k >= 2").values
            };
            for (a, b) in fast.iter().zip(naive_moment(&tensor, k)) {
                worst = worst.max((a - b).abs() / b.abs().max(1.0));
            }
        }
    }
    report.push(
        "feature file round trip",
        round_trips == CASES,
        format!("{round_trips}/{CASES} tensors"),
    );
    report.push(
        "moment oracle",
        worst <= 1e-10,
        format!(
            "{CASES} tensors, max scaled error {}",
            if worst <= 1e-10 {
                "<= 1e-10"
            } else {
                "> 1e-10"
            }
        ),
    );
}

/// Runs the planted-signal checks; data lives in a temporary directory.
pub fn run_selftest(seed: u64, fault: Option<Fault>) -> Result<SelftestReport, Error> {
    let mut report = SelftestReport {
        seed,
        checks: Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    check_format_and_moments(&mut rng, &mut report);

    let work = tempfile::tempdir()?;
    let params = SyntheticParams {
        seed,
        ..SyntheticParams::default()
    };
    let mean_only = MomentConfig::with_weights(&[1.0, 0.0, 0.0]);
    let main = match fault {
        Some(Fault::MeanOnly) => MomentConfig {
            weights: vec![1.0, 0.0, 0.0],
            ..MomentConfig::default()
        },
        None => MomentConfig::default(),
    };
    let label = MomentConfig::default().label();

    let manifest = generate_synthetic(&params, &work.path().join("planted"))?;
    let mut harness = Harness::new(manifest);
    let full = harness.run_triplets(&main)?;
    let baseline = harness.run_triplets(&mean_only)?;
    report.push(
        "planted benchmark",
        full.average >= 0.9,
        format!("{label} accuracy {:.4} (need >= 0.9)", full.average),
    );
    report.push(
        "higher moments help",
        full.average > baseline.average,
        format!(
            "{label} {:.4} vs {} {:.4}",
            full.average,
            mean_only.label(),
            baseline.average
        ),
    );

    let sweep = harness.frame_sweep(&main, &[4, 8, 16, params.frames], &BTreeMap::new())?;
    let accs: Vec<String> = sweep
        .iter()
        .map(|r| format!("{}:{:.4}", r.frames, r.accuracy))
        .collect();
    let identity = sweep
        .last()
        .is_some_and(|r| r.accuracy.to_bits() == full.average.to_bits());
    report.push(
        "frame sweep identity",
        identity,
        format!("{} (n=T must equal the full run)", accs.join(" ")),
    );

    let silent = generate_synthetic(
        &SyntheticParams {
            motion_signal: 0.0,
            ..params.clone()
        },
        &work.path().join("silent"),
    )?;
    let noise_only = Harness::new(silent).run_triplets(&main)?;
    let pool = noise_only.records.first().map_or(1, |r| r.pool_size.max(1));
    let (lo, hi) = chance_band(1.0 / pool as f64, noise_only.total);
    report.push(
        "no motion, chance level",
        (lo..=hi).contains(&noise_only.average),
        format!(
            "accuracy {:.4} within [{lo:.4}, {hi:.4}]",
            noise_only.average
        ),
    );

    let labeled = generate_labeled(
        &LabeledParams {
            seed,
            ..LabeledParams::default()
        },
        &work.path().join("labeled"),
    )?;
    let knn = Harness::new(labeled).run_knn(&main, KnnOptions::default())?;
    let r = &knn.report;
    report.push(
        "planted kNN",
        r.acc1_weighted >= 0.9 && r.acc1_majority >= 0.9,
        format!(
            "K={} maj {:.4} weighted {:.4} top5 {:.4}",
            r.k, r.acc1_majority, r.acc1_weighted, r.acc5_weighted
        ),
    );

    let groups = generate_labeled(
        &LabeledParams {
            seed,
            classes: 4,
            per_class: 3,
            queries_per_class: 1,
            ..LabeledParams::default()
        },
        &work.path().join("groups"),
    )?;
    let mut harness = Harness::new(groups);
    let embeddings = harness.embeddings(&main)?;
    let membership: Vec<usize> = (0..embeddings.len()).map(|i| i / 3).collect();
    let matrix = similarity_heatmap(&embeddings)?;
    let (within, cross) = matrix.group_means(&membership);
    report.push(
        "heatmap clusters",
        within > cross,
        format!("within {within:.4} cross {cross:.4}"),
    );
    Ok(report)
}
