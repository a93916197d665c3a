use std::collections::BTreeMap;
use std::path::Path;

use motion_moments::bench::{
    ablation_sweep, frame_count_sweep, generate_labeled, generate_synthetic, load_manifest, report,
    run_knn_benchmark, run_triplet_benchmark, similarity_heatmap, table5_configs, BenchError,
    BenchmarkManifest, Category, Harness, LabeledParams, ManifestEntry, ManifestKind, Role,
    SyntheticParams,
};
use motion_moments::feature_io::{save_tensor, FeatureTensor};
use motion_moments::knn::{KnnOptions, DEFAULT_K};
use motion_moments::moments::MomentConfig;

fn wave_tensor(id: &str, frames: usize, phase: f32, scale: f32) -> FeatureTensor {
    let (patches, dim) = (2, 3);
    let data = (0..frames * patches * dim)
        .map(|i| scale * ((i as f32) * 0.37 + phase).sin())
        .collect();
    FeatureTensor::new(id, frames, patches, dim, data).unwrap()
}

fn entry(id: &str, role: Role, triplet: Option<&str>, category: Option<Category>) -> ManifestEntry {
    ManifestEntry {
        video_id: id.into(),
        feature_path: format!("{id}.mvft").into(),
        role,
        triplet_id: triplet.map(Into::into),
        category,
        label: None,
    }
}

fn write_manifest(
    dir: &Path,
    kind: ManifestKind,
    entries: Vec<ManifestEntry>,
    pool: Option<usize>,
) -> BenchmarkManifest {
    let mut m = BenchmarkManifest::new("test", kind, entries);
    m.pool_size = pool;
    let path = dir.join("manifest.json");
    m.save(&path).unwrap();
    load_manifest(&path).unwrap()
}

#[test]
fn duplicate_positive_is_found() {
    let dir = tempfile::tempdir().unwrap();
    let r = wave_tensor("r", 6, 0.0, 1.0);
    save_tensor(&r, &dir.path().join("r.mvft")).unwrap();
    save_tensor(&r.clone().with_video_id("p"), &dir.path().join("p.mvft")).unwrap();
    save_tensor(&wave_tensor("n", 6, 1.3, 1.0), &dir.path().join("n.mvft")).unwrap();
    let c = Some(Category::Static);
    let manifest = write_manifest(
        dir.path(),
        ManifestKind::TripletSynthetic,
        vec![
            entry("r", Role::Reference, Some("t"), c),
            entry("p", Role::Positive, Some("t"), c),
            entry("n", Role::Negative, Some("t"), c),
        ],
        None,
    );
    let report = run_triplet_benchmark(&manifest, &MomentConfig::default()).unwrap();
    assert_eq!(report.average, 1.0);
    assert_eq!(report.records[0].top_id.as_deref(), Some("p"));
    assert!((report.records[0].top_score.unwrap() - 1.0).abs() < 1e-12);

    // a one-row sweep is the plain run
    let rows = ablation_sweep(&manifest, &[MomentConfig::default()]).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].accuracy, Some(report.average));
}

#[test]
fn degenerate_videos_count_as_failures() {
    let dir = tempfile::tempdir().unwrap();
    let zero = FeatureTensor::new("r", 4, 2, 3, vec![0.0; 24]).unwrap();
    save_tensor(&zero, &dir.path().join("r.mvft")).unwrap();
    save_tensor(&wave_tensor("p", 4, 0.0, 1.0), &dir.path().join("p.mvft")).unwrap();
    save_tensor(&wave_tensor("n", 4, 0.5, 1.0), &dir.path().join("n.mvft")).unwrap();
    let c = Some(Category::View);
    let manifest = write_manifest(
        dir.path(),
        ManifestKind::TripletSynthetic,
        vec![
            entry("r", Role::Reference, Some("t"), c),
            entry("p", Role::Positive, Some("t"), c),
            entry("n", Role::Negative, Some("t"), c),
        ],
        None,
    );
    let report = run_triplet_benchmark(&manifest, &MomentConfig::default()).unwrap();
    assert_eq!((report.correct, report.total), (0, 1));
    assert_eq!(report.failures.len(), 1);
    assert_eq!(report.failures[0].video_id, "r");
    assert!(report.records[0].error.is_some());
}

#[test]
fn real_manifest_with_thousand_candidate_pools() {
    let dir = tempfile::tempdir().unwrap();
    let mut entries = vec![
        entry("r", Role::Reference, Some("t"), None),
        entry("p", Role::Positive, Some("t"), None),
        entry("n", Role::Negative, Some("t"), None),
    ];
    for (i, e) in entries.iter().enumerate() {
        let phase = if e.video_id == "p" { 0.0 } else { i as f32 };
        save_tensor(
            &wave_tensor(&e.video_id, 4, phase, 1.0),
            &dir.path().join(&e.feature_path),
        )
        .unwrap();
    }
    for i in 0..998 {
        let id = format!("k{i:04}");
        save_tensor(
            &wave_tensor(&id, 4, 3.0 + i as f32 * 0.01, 1.0 + i as f32),
            &dir.path().join(format!("{id}.mvft")),
        )
        .unwrap();
        entries.push(entry(&id, Role::RandomNegative, None, None));
    }
    let manifest = write_manifest(
        dir.path(),
        ManifestKind::TripletReal,
        entries.clone(),
        Some(1000),
    );
    assert_eq!(manifest.pool(&manifest.triplets()[0]).len(), 1000);
    let report = run_triplet_benchmark(&manifest, &MomentConfig::default()).unwrap();
    assert_eq!(report.records[0].pool_size, 1000);
    assert_eq!(report.total, 1);
    assert!(report.categories.is_empty());

    entries.pop();
    let mut short = BenchmarkManifest::new("short", ManifestKind::TripletReal, entries);
    short.pool_size = Some(1000);
    short.save(&dir.path().join("short.json")).unwrap();
    let err = load_manifest(&dir.path().join("short.json")).unwrap_err();
    assert!(matches!(
        err,
        BenchError::PoolSize {
            expected: 1000,
            found: 999,
            ..
        }
    ));
}

#[test]
fn two_hundred_fifty_triplets_split_evenly() {
    let dir = tempfile::tempdir().unwrap();
    let params = SyntheticParams {
        groups: 250,
        per_group: 3,
        frames: 4,
        patches: 2,
        dim: 2,
        ..SyntheticParams::default()
    };
    let manifest = generate_synthetic(&params, dir.path()).unwrap();
    assert_eq!(manifest.entries.len(), 750);
    assert_eq!(manifest.triplets().len(), 250);
    let counts = manifest.category_counts();
    assert_eq!(counts.len(), 5);
    assert!(counts.values().all(|&n| n == 50));
}

fn planted(dir: &Path, appearance: f64, motion: f64) -> BenchmarkManifest {
    generate_synthetic(
        &SyntheticParams {
            appearance_confound: appearance,
            motion_signal: motion,
            ..SyntheticParams::default()
        },
        dir,
    )
    .unwrap()
}

#[test]
fn synthetic_average_is_category_mean() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted(dir.path(), 1.0, 0.4);
    let report =
        run_triplet_benchmark(&manifest, &MomentConfig::with_weights(&[1.0, 1.0, 0.0])).unwrap();
    assert_eq!(report.categories.len(), 5);
    let mean = report.categories.iter().map(|c| c.accuracy).sum::<f64>() / 5.0;
    assert!((report.average - mean).abs() < 1e-15);
    let order: Vec<Category> = report.categories.iter().map(|c| c.category).collect();
    assert_eq!(order, Category::ALL);
    let md = report::triplet_markdown(std::slice::from_ref(&report));
    assert!(md.starts_with("| Method | Static | Dyn-App | Dyn-Obj | View | Style | Avg |"));
}

#[test]
fn variance_alone_solves_motion_without_appearance() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted(dir.path(), 0.0, 5.0);
    let report =
        run_triplet_benchmark(&manifest, &MomentConfig::with_weights(&[0.0, 1.0, 0.0])).unwrap();
    assert_eq!(report.average, 1.0);
}

#[test]
fn accuracy_grows_with_motion_signal() {
    let mut last = -1.0;
    for (i, motion) in [0.0, 0.1, 0.2, 0.4, 1.0].into_iter().enumerate() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = planted(&dir.path().join(i.to_string()), 1.0, motion);
        let acc = run_triplet_benchmark(&manifest, &MomentConfig::default())
            .unwrap()
            .average;
        assert!(acc >= last, "motion {motion}: {acc} < {last}");
        last = acc;
    }
    assert!(last >= 0.9);
}

#[test]
fn ablation_ranks_multi_moment_above_mean_only() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted(dir.path(), 1.0, 1.0);
    let rows = ablation_sweep(&manifest, &table5_configs()).unwrap();
    assert_eq!(rows.len(), 9);
    let acc = |label: &str| {
        rows.iter()
            .find(|r| r.label == label)
            .unwrap()
            .accuracy
            .unwrap()
    };
    assert!(acc("(1,8,4)-patch-concat") >= acc("(1,0,0)-patch-concat"));
    assert!(rows.windows(2).all(|w| w[0].accuracy >= w[1].accuracy));

    let bad = MomentConfig {
        weights: vec![0.0, 0.0, 0.0],
        ..MomentConfig::default()
    };
    let rows = ablation_sweep(&manifest, &[bad, MomentConfig::default()]).unwrap();
    assert!(rows[0].error.is_none());
    assert!(
        rows[1].error.is_some(),
        "failing row must be last and marked"
    );
}

#[test]
fn frame_sweep_rules() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = planted(dir.path(), 1.0, 1.0);
    let config = MomentConfig::default();
    let err = frame_count_sweep(&manifest, &config, &[64], &BTreeMap::new()).unwrap_err();
    assert!(
        matches!(err, BenchError::FrameCount { requested: 64, available: 32, ref video_id } if !video_id.is_empty())
    );
    assert!(frame_count_sweep(&manifest, &config, &[0], &BTreeMap::new()).is_err());

    // a declared directory supplies the 64-frame features
    let long_dir = tempfile::tempdir().unwrap();
    let long = generate_synthetic(
        &SyntheticParams {
            frames: 64,
            ..SyntheticParams::default()
        },
        long_dir.path(),
    )
    .unwrap();
    assert_eq!(long.entries.len(), manifest.entries.len());
    let dirs = BTreeMap::from([(64, long_dir.path().to_path_buf())]);
    let rows = frame_count_sweep(&manifest, &config, &[4, 8, 16, 32, 64], &dirs).unwrap();
    assert_eq!(
        rows.iter().map(|r| r.frames).collect::<Vec<_>>(),
        [4, 8, 16, 32, 64]
    );
    let md = report::frame_sweep_markdown("m", &rows);
    assert!(md.starts_with("| Method | 4 | 8 | 16 | 32 | 64 |"));
}

#[test]
fn reports_are_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ra = run_triplet_benchmark(&planted(a.path(), 1.0, 0.3), &MomentConfig::default()).unwrap();
    let rb = run_triplet_benchmark(&planted(b.path(), 1.0, 0.3), &MomentConfig::default()).unwrap();
    assert_eq!(ra, rb);
    let out_a = a.path().join("out");
    let out_b = b.path().join("out");
    let csv = report::triplet_csv(std::slice::from_ref(&ra));
    let md = report::triplet_markdown(std::slice::from_ref(&ra));
    report::write_report(&out_a, "triplet", &ra, &csv, &md).unwrap();
    report::write_report(&out_b, "triplet", &rb, &csv, &md).unwrap();
    for ext in ["json", "csv", "md"] {
        let name = format!("triplet.{ext}");
        assert_eq!(
            std::fs::read(out_a.join(&name)).unwrap(),
            std::fs::read(out_b.join(&name)).unwrap()
        );
    }
}

#[test]
fn knn_benchmark_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_labeled(&LabeledParams::default(), dir.path()).unwrap();
    let result =
        run_knn_benchmark(&manifest, &MomentConfig::default(), KnnOptions::default()).unwrap();
    assert_eq!(result.report.k, DEFAULT_K);
    assert_eq!(result.report.queries, 15);
    assert!(result.report.acc1_weighted >= 0.9);

    let triplets = tempfile::tempdir().unwrap();
    let wrong = planted(triplets.path(), 1.0, 1.0);
    assert!(matches!(
        run_knn_benchmark(&wrong, &MomentConfig::default(), KnnOptions::default()),
        Err(BenchError::WrongKind { .. })
    ));
    assert!(matches!(
        run_triplet_benchmark(&manifest, &MomentConfig::default()),
        Err(BenchError::WrongKind { .. })
    ));
}

#[test]
fn heatmap_shows_motion_blocks() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_labeled(
        &LabeledParams {
            classes: 4,
            per_class: 3,
            queries_per_class: 1,
            ..LabeledParams::default()
        },
        dir.path(),
    )
    .unwrap();
    let embeddings = Harness::new(manifest)
        .embeddings(&MomentConfig::default())
        .unwrap();
    let m = similarity_heatmap(&embeddings).unwrap();
    assert_eq!(m.len(), 12);
    for i in 0..12 {
        assert!((m.get(i, i) - 1.0).abs() < 1e-6);
        for j in 0..12 {
            assert!((m.get(i, j) - m.get(j, i)).abs() < 1e-9);
        }
    }
    let groups: Vec<usize> = (0..12).map(|i| i / 3).collect();
    let (within, cross) = m.group_means(&groups);
    assert!(within > cross, "within {within} cross {cross}");
}
