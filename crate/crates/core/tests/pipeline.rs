use std::fs;
use std::path::Path;

use nerf_mvs::guidance::GuidanceConfig;
use nerf_mvs::pipeline::*;
use nerf_mvs::Error;

fn quick(out: &Path) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(SceneSource::Synthetic(SyntheticScene::Bundled("textured".into())), out);
    cfg.seed = 11;
    cfg.priors.epochs = 2;
    cfg.train.iterations = 20;
    cfg.train.rays_per_batch = 64;
    cfg.train.log_every = 5;
    cfg.render.samples = 8;
    cfg
}

fn paths(m: &RunManifest) -> Vec<&str> {
    m.files.iter().map(|f| f.path.as_str()).collect()
}

#[test]
fn full_run_lists_every_stage_output_and_is_reproducible() {
    let root = tempfile::tempdir().unwrap();
    let a = run_pipeline(&quick(&root.path().join("a"))).unwrap();
    let names = paths(&a);
    for f in [
        "scene/cameras.txt",
        "scene/images/view_000.ppm",
        "scene/sparse/view_000.pfm",
        "scene/gt/view_019.pgm",
        "priors/view_000.pfm",
        "priors/report.json",
        "guidance/view_000_error.pfm",
        "guidance/view_000_near.pfm",
        "guidance/view_000_far.pfm",
        "train/field.ckpt",
        "train/log.csv",
        "train/summary.json",
        "render/view_007.pfm",
        "render/view_007.ppm",
        "filter/view_000_confidence.pfm",
        "filter/view_000.pfm",
        "metrics/depth.csv",
        "metrics/depth.txt",
        "metrics/images.csv",
        "metrics/summary.json",
    ] {
        assert!(names.contains(&f), "missing {f}");
    }
    // Held-out views get no priors and no filtered depth.
    assert!(!names.contains(&"priors/view_007.pfm"));
    assert!(!names.contains(&"filter/view_015.pfm"));
    assert!(a.stages.iter().all(|s| s.status == StageStatus::Ran));
    a.verify(&root.path().join("a")).unwrap();
    assert_eq!(RunManifest::read(&root.path().join("a")).unwrap(), a);

    let b = run_pipeline(&quick(&root.path().join("b"))).unwrap();
    assert_eq!(a.files, b.files);

    let summary = RunSummary::read(&root.path().join("a")).unwrap();
    for key in ["priors", "nerf", "nerf_novel", "filtered", "final"] {
        assert!(summary.depth.contains_key(key), "{key}");
    }
    assert_eq!(summary.novel_views, vec![7, 15]);
    assert!(summary.psnr_seen.is_some() && summary.psnr_novel.is_some());
}

#[test]
fn resumed_runs_match_uninterrupted_ones() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("run");
    let first = run_pipeline(&quick(&out)).unwrap();

    let again = run_pipeline(&quick(&out)).unwrap();
    assert!(again.stages.iter().all(|s| s.status == StageStatus::Resumed));
    assert_eq!(again.files, first.files);

    // Losing the render marker reruns render and everything after it.
    fs::remove_file(out.join("render/.done")).unwrap();
    fs::remove_file(out.join("render/view_003.pfm")).unwrap();
    let partial = run_pipeline(&quick(&out)).unwrap();
    let status: Vec<_> = partial.stages.iter().map(|s| (s.name.as_str(), s.status)).collect();
    assert_eq!(status[3], ("train", StageStatus::Resumed));
    assert_eq!(status[4], ("render", StageStatus::Ran));
    assert_eq!(status[6], ("metrics", StageStatus::Ran));
    assert_eq!(partial.files, first.files);

    // A changed filter setting reruns only the filter and metrics.
    let mut cfg = quick(&out);
    cfg.filter.radius = 2;
    let changed = run_pipeline(&cfg).unwrap();
    assert_eq!(changed.stages[4].status, StageStatus::Resumed);
    assert_eq!(changed.stages[5].status, StageStatus::Ran);
}

#[test]
fn unguided_baseline_path() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("nerf");
    let mut cfg = quick(&out);
    cfg.stages = Stages {
        priors: false,
        guidance: false,
        nerf: true,
        filter: false,
    };
    let m = run_pipeline(&cfg).unwrap();
    assert!(!paths(&m).iter().any(|p| p.starts_with("priors/") || p.starts_with("guidance/")));
    let files = RunFiles::new(&out);
    let data = files.dataset().unwrap();
    let s = files.train_summary().unwrap();
    assert_eq!(s.global_bounds, Some(global_bounds(&data).unwrap()));
    let summary = RunSummary::read(&out).unwrap();
    assert_eq!(summary.depth["final"], summary.depth["nerf"]);
}

#[test]
fn priors_only_path() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("priors");
    let mut cfg = quick(&out);
    cfg.stages = Stages {
        priors: true,
        guidance: false,
        nerf: false,
        filter: false,
    };
    run_pipeline(&cfg).unwrap();
    let summary = RunSummary::read(&out).unwrap();
    assert_eq!(summary.depth["final"], summary.depth["priors"]);
    assert!(summary.psnr_seen.is_none());
}

#[test]
fn ingested_export_reproduces_the_synthetic_run() {
    let root = tempfile::tempdir().unwrap();
    let a = run_pipeline(&quick(&root.path().join("a"))).unwrap();
    let mut cfg = quick(&root.path().join("b"));
    cfg.scene = SceneSource::Ingest(root.path().join("a/scene"));
    let b = run_pipeline(&cfg).unwrap();
    // Stage markers fingerprint the configuration, which names a different source.
    let outputs = |m: &RunManifest| {
        m.files
            .iter()
            .filter(|f| !f.path.ends_with(".done"))
            .cloned()
            .collect::<Vec<_>>()
    };
    assert_eq!(outputs(&a), outputs(&b));
}

#[test]
fn external_priors_and_stage_failures() {
    let root = tempfile::tempdir().unwrap();
    let src = root.path().join("src");
    run_pipeline(&quick(&src)).unwrap();

    // External priors: scaled copies of the adapted ones align back to them.
    let ext = root.path().join("ext");
    fs::create_dir_all(&ext).unwrap();
    let files = RunFiles::new(&src);
    for i in [0usize, 1, 2, 3, 4, 5, 6, 8, 9, 10, 11, 12, 13, 14, 16, 17, 18, 19] {
        let p = files.prior(i).unwrap().scaled(3.0);
        nerf_mvs::formats::write_depth_pfm(&ext.join(format!("{}.pfm", view_name(i))), &p).unwrap();
    }
    let mut cfg = quick(&root.path().join("ext-run"));
    cfg.priors_in = Some(ext.clone());
    cfg.stages.nerf = false;
    cfg.stages.filter = false;
    run_pipeline(&cfg).unwrap();
    let loaded = RunFiles::new(&cfg.output).prior(0).unwrap();
    let orig = files.prior(0).unwrap();
    for (a, b) in loaded.values.iter().zip(&orig.values) {
        assert!((a - b).abs() < 1e-5 * b);
    }

    // A missing prior file fails the priors stage and keeps the scene outputs.
    fs::remove_file(ext.join("view_004.pfm")).unwrap();
    let mut bad = cfg.clone();
    bad.output = root.path().join("bad");
    match run_pipeline(&bad) {
        Err(Error::Stage { stage, .. }) => assert_eq!(stage, "priors"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(bad.output.join("scene/cameras.txt").exists());
    assert!(!bad.output.join(".lock").exists());
}

#[test]
fn singleton_sweep_matches_direct_run() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = quick(&root.path().join("sweep"));
    cfg.stages.filter = false;
    let table = hyper_sweep(&cfg, &[GuidanceConfig::default()]).unwrap();
    assert_eq!(table.rows.len(), 1);
    let mut direct = cfg.clone();
    direct.output = root.path().join("direct");
    run_pipeline(&direct).unwrap();
    let d = RunSummary::read(&direct.output).unwrap().depth["final"];
    assert_eq!(table.rows[0].outcome, Ok(d));
    let csv = fs::read_to_string(cfg.output.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(csv.starts_with("k,alpha_low,alpha_high,abs_rel"));
}

#[test]
fn sweep_records_failed_points_and_keeps_order() {
    let root = tempfile::tempdir().unwrap();
    let mut cfg = quick(&root.path().join("sweep"));
    cfg.stages.filter = false;
    cfg.train.iterations = 2;
    let grid = vec![
        GuidanceConfig {
            k_consistency: 2,
            ..Default::default()
        },
        GuidanceConfig {
            k_consistency: 4,
            alpha_low: 0.5,
            alpha_high: 0.2,
        },
        GuidanceConfig::default(),
    ];
    let table = hyper_sweep(&cfg, &grid).unwrap();
    let ks: Vec<usize> = table.rows.iter().map(|r| r.guidance.k_consistency).collect();
    assert_eq!(ks, vec![2, 4, 4]);
    assert!(table.rows[0].outcome.is_ok());
    assert!(table.rows[1].outcome.is_err());
    assert!(table.rows[2].outcome.is_ok());
}

#[test]
fn locked_output_is_refused() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("locked");
    let _lock = OutputLock::acquire(&out).unwrap();
    assert!(run_pipeline(&quick(&out)).is_err());
}
