//! Acceptance criteria 1-8. Each criterion prints one `PASS` or `FAIL` line
//! with the measured numbers.
//!
//! Verdicts are written straight to stderr so they show up without
//! `--nocapture`. A `FAIL` verdict does not fail the test unless
//! `ACCEPTANCE_STRICT=1`; errors while running a pipeline always do.
//! `ACCEPTANCE_REUSE=1` keeps earlier run directories and lets the pipeline
//! resume from them.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nerf_mvs::field::{FieldArch, FieldParams};
use nerf_mvs::geometry::{project, relative_pose, unproject, warp_depth, Camera, Intrinsics, Pose, Vec3};
use nerf_mvs::guidance::{adaptive_range, ErrorMap, GuidanceConfig, RayBounds};
use nerf_mvs::image::{DepthMap, Image};
use nerf_mvs::pipeline::*;
use nerf_mvs::post::{depth_metrics, median_scale_factor, DepthMetrics};
use nerf_mvs::priors::{scale_invariant_loss, PriorBatch, PriorConfig, PriorModel, PriorSample};
use nerf_mvs::render::{composite, composite_densities, RenderConfig};
use nerf_mvs::rng::Rng;
use nerf_mvs::training::{field_gradient, sample_ray_batch, scene_bounds, BatchMode, TrainView};
use rand::{Rng as _, SeedableRng};

const SEEDS: [u64; 3] = [1, 2, 3];

fn say(line: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{line}");
}

struct Verdicts(Vec<(usize, bool, String)>);

impl Verdicts {
    fn record(&mut self, n: usize, pass: bool, detail: String) {
        say(&format!("criterion {n}: {} {detail}", if pass { "PASS" } else { "FAIL" }));
        self.0.push((n, pass, detail));
    }
}

fn root() -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    if std::env::var("ACCEPTANCE_REUSE").as_deref() != Ok("1") && dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(cfg: &PipelineConfig) -> (RunManifest, RunSummary) {
    let start = Instant::now();
    let m = run_pipeline(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.output.display()));
    let s = RunSummary::read(&cfg.output).unwrap();
    say(&format!("  ran {} in {:.1} min", cfg.output.display(), start.elapsed().as_secs_f64() / 60.0));
    (m, s)
}

fn textureless(seed: u64, guided: bool, out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(SceneSource::Synthetic(SyntheticScene::Bundled("textureless".into())), out);
    cfg.seed = seed;
    if !guided {
        cfg.stages = Stages {
            priors: false,
            guidance: false,
            nerf: true,
            filter: false,
        };
    }
    cfg
}

fn textured_noisy(out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(SceneSource::Synthetic(SyntheticScene::Bundled("textured".into())), out);
    cfg.seed = 1;
    cfg.sparse.keep_fraction = 0.05;
    cfg.sparse.noise_sigma = 0.02;
    cfg.sparse.scale = 2.0;
    cfg
}

/// Desk-scale sweep base: the default field at 1000 iterations.
fn sweep_base(out: PathBuf) -> PipelineConfig {
    let mut cfg = PipelineConfig::new(SceneSource::Synthetic(SyntheticScene::Bundled("textured".into())), out);
    cfg.seed = 1;
    cfg.train.iterations = 1000;
    cfg.stages.filter = false;
    cfg
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

// ---------------------------------------------------------------------------
// Criterion 1: numerical core.

fn depth(w: usize, h: usize, rng: &mut Rng) -> DepthMap {
    DepthMap::from_values(w, h, (0..w * h).map(|_| rng.gen_range(0.3..6.0)).collect()).unwrap()
}

fn check(failures: &mut Vec<String>, ok: bool, what: impl FnOnce() -> String) {
    if !ok {
        failures.push(what());
    }
}

fn scale_invariance(f: &mut Vec<String>) {
    let mut rng = Rng::seed_from_u64(1);
    for _ in 0..20 {
        let dp = depth(8, 8, &mut rng);
        let ds = depth(8, 8, &mut rng);
        let base = scale_invariant_loss(&dp, &ds).unwrap();
        for c in [0.1, 1.0, 7.0] {
            let l = scale_invariant_loss(&dp.scaled(c), &ds).unwrap();
            check(f, (l - base).abs() <= 1e-12, || format!("SI loss changes under c={c}: {l} vs {base}"));
        }
    }
    let one = DepthMap::from_values(1, 1, vec![2.5]).unwrap();
    let other = DepthMap::from_values(1, 1, vec![0.7]).unwrap();
    let l = scale_invariant_loss(&one, &other).unwrap();
    check(f, l == 0.0, || format!("single-pixel SI loss {l}"));
}

fn compositing(f: &mut Vec<String>) {
    let mut rng = Rng::seed_from_u64(2);
    for _ in 0..200 {
        let m = rng.gen_range(1..48);
        let mut t: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..4.0)).collect();
        t.sort_by(f64::total_cmp);
        let sigma: Vec<f64> = (0..m).map(|_| rng.gen_range(-2.0..20.0)).collect();
        let colors: Vec<[f64; 3]> = (0..m).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let tr = composite(&sigma, &colors, &t, 0.0, &mut rng);
        let sum: f64 = tr.weights.iter().sum();
        check(f, (sum - (1.0 - tr.residual)).abs() <= 1e-12, || format!("Σw = {sum}, 1 - T = {}", 1.0 - tr.residual));

        if m < 2 {
            continue;
        }
        // Splitting an empty interval must not change the result.
        let k = rng.gen_range(0..m - 1);
        if t[k + 1] <= t[k] {
            continue;
        }
        let mut s = tr.sigma.clone();
        s[k] = 0.0;
        let a = composite_densities(s.clone(), colors.clone(), t.clone());
        let (mut t2, mut s2, mut c2) = (t.clone(), s, colors.clone());
        t2.insert(k + 1, 0.5 * (t[k] + t[k + 1]));
        s2.insert(k + 1, 0.0);
        c2.insert(k + 1, [rng.gen(), rng.gen(), rng.gen()]);
        let b = composite_densities(s2, c2, t2);
        let diff = (0..3).map(|c| (a.color[c] - b.color[c]).abs()).fold((a.depth - b.depth).abs(), f64::max);
        check(f, diff <= 1e-12, || format!("zero-density refinement moved the result by {diff}"));
    }
}

fn relative_error(fd: f64, g: f64) -> Option<f64> {
    let scale = fd.abs().max(g.abs());
    // Below this both sides are central-difference round-off.
    (scale > 1e-8).then(|| (fd - g).abs() / scale)
}

fn field_gradients(f: &mut Vec<String>) {
    let arch = FieldArch {
        pos_freqs: 3,
        dir_freqs: 2,
        hidden_layers: 3,
        hidden_width: 16,
        color_width: 8,
        skip: Some(1),
    };
    let (w, h) = (8, 6);
    let k = Intrinsics::new(8.0, 8.0, 4.0, 3.0, w, h).unwrap();
    let cfg = RenderConfig {
        samples: 8,
        noise_std: 0.5,
        global_bounds: None,
    };
    for seed in 0..5u64 {
        let mut rng = Rng::seed_from_u64(10 + seed);
        let pose = Pose::look_at(Vec3::new(0.1, -0.2, 0.0), Vec3::new(0.0, 0.0, 2.0), Vec3::new(0.0, 1.0, 0.0)).unwrap();
        let image = Image::from_pixels(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap();
        let views = vec![TrainView {
            image,
            camera: Camera::new(pose, k),
            bounds: RayBounds::uniform(w, h, 1.0, 3.0).unwrap(),
        }];
        let field: FieldParams<f64> = FieldParams::init(arch.clone(), scene_bounds(&views), &mut rng);
        let batch = sample_ray_batch(&views, 40, BatchMode::WithReplacement, &mut rng).unwrap();
        let g = field_gradient(&field, &batch, &cfg).unwrap();
        let step = 1e-5;
        let mut compared = 0;
        for _ in 0..20 {
            let i = rng.gen_range(0..field.param_count());
            let (mut a, mut b) = (field.clone(), field.clone());
            a.theta[i] += step;
            b.theta[i] -= step;
            let fd = (field_gradient(&a, &batch, &cfg).unwrap().loss - field_gradient(&b, &batch, &cfg).unwrap().loss)
                / (2.0 * step);
            if let Some(rel) = relative_error(fd, g.grad[i]) {
                compared += 1;
                check(f, rel < 1e-4, || format!("field seed {seed} param {i}: fd {fd} vs {} (rel {rel:.2e})", g.grad[i]));
            }
        }
        check(f, compared >= 10, || format!("field seed {seed}: only {compared} of 20 coordinates above round-off"));
    }
}

fn prior_gradients(f: &mut Vec<String>) {
    let cfg = PriorConfig {
        freqs: 3,
        embedding_dim: 4,
        hidden_layers: 3,
        hidden_width: 16,
        ..Default::default()
    };
    let (w, h) = (9, 7);
    for seed in 0..5u64 {
        let mut rng = Rng::seed_from_u64(20 + seed);
        let model = PriorModel::new(&cfg, 3, &mut rng);
        let img = Image::from_pixels(w, h, (0..w * h).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect()).unwrap();
        let batch = PriorBatch {
            view: 2,
            supervised: (0..12)
                .map(|_| (PriorSample::of(&img, rng.gen_range(0..w), rng.gen_range(0..h)), rng.gen_range(0.5..4.0)))
                .collect(),
            pairs: (0..8)
                .map(|_| {
                    let (x, y) = (rng.gen_range(0..w), rng.gen_range(0..h - 1));
                    (PriorSample::of(&img, x, y), PriorSample::of(&img, x, y + 1))
                })
                .collect(),
        };
        let (_, grad) = model.batch_loss(&batch, cfg.smoothness);
        let step = 1e-5;
        let mut compared = 0;
        for _ in 0..20 {
            let i = rng.gen_range(0..model.theta.len());
            let (mut a, mut b) = (model.clone(), model.clone());
            a.theta[i] += step;
            b.theta[i] -= step;
            let fd = (a.batch_loss(&batch, cfg.smoothness).0 - b.batch_loss(&batch, cfg.smoothness).0) / (2.0 * step);
            if let Some(rel) = relative_error(fd, grad[i]) {
                compared += 1;
                check(f, rel < 1e-4, || format!("prior seed {seed} param {i}: fd {fd} vs {} (rel {rel:.2e})", grad[i]));
            }
        }
        check(f, compared >= 10, || format!("prior seed {seed}: only {compared} of 20 coordinates above round-off"));
    }
}

fn random_pose(rng: &mut Rng) -> Pose {
    let eye = Vec3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
    let target = eye + Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(0.5..1.5));
    Pose::look_at(eye, target, Vec3::new(0.0, 1.0, 0.0)).unwrap()
}

fn geometry(f: &mut Vec<String>) {
    let mut rng = Rng::seed_from_u64(3);
    let k = Intrinsics::new(110.0, 95.0, 63.2, 47.9, 128, 96).unwrap();
    for _ in 0..500 {
        let px = (rng.gen_range(0.0..128.0), rng.gen_range(0.0..96.0));
        let d = rng.gen_range(0.05..50.0);
        let p = project(&k, &unproject(&k, px, d).unwrap());
        let err = (p.pixel.0 - px.0).abs().max((p.pixel.1 - px.1).abs()).max((p.depth - d).abs());
        check(f, err <= 1e-9, || format!("project(unproject) error {err}"));

        let (a, b) = (random_pose(&mut rng), random_pose(&mut rng));
        let id = a.compose(&a.inverse()).to_matrix() - nalgebra::Matrix4::identity();
        check(f, id.amax() <= 1e-9, || format!("pose ∘ inverse off identity by {}", id.amax()));
        let back = b.compose(&relative_pose(&a, &b)).to_matrix() - a.to_matrix();
        check(f, back.amax() <= 1e-9, || format!("relative pose round trip off by {}", back.amax()));
    }
    let dm = depth(128, 96, &mut rng);
    let warp = warp_depth(&k, &Pose::identity(), &dm).unwrap();
    for y in 0..96 {
        for x in 0..128 {
            let i = y * 128 + x;
            let (u, v) = Intrinsics::pixel_center(x, y);
            let err = (warp.coords[i].0 - u).abs().max((warp.coords[i].1 - v).abs()).max((warp.depth[i] - dm.values[i]).abs());
            check(f, warp.valid[i] && err <= 1e-9, || format!("identity warp at ({x},{y}) off by {err}"));
        }
    }
}

/// Brute-force metrics over jointly valid pixels, written from the textbook definitions.
fn metrics_oracle(pred: &DepthMap, gt: &DepthMap, scale: f64) -> [f64; 7] {
    let pairs: Vec<(f64, f64)> = (0..pred.values.len())
        .filter(|&i| pred.valid[i] && gt.valid[i])
        .map(|i| (pred.values[i] * scale, gt.values[i]))
        .collect();
    let n = pairs.len() as f64;
    let abs_rel = pairs.iter().map(|(p, g)| (p - g).abs() / g).sum::<f64>() / n;
    let sq_rel = pairs.iter().map(|(p, g)| (p - g).powi(2) / g).sum::<f64>() / n;
    let rmse = (pairs.iter().map(|(p, g)| (p - g).powi(2)).sum::<f64>() / n).sqrt();
    let rmse_log = (pairs.iter().map(|(p, g)| (p.ln() - g.ln()).powi(2)).sum::<f64>() / n).sqrt();
    let delta = |t: f64| pairs.iter().filter(|(p, g)| (p / g).max(g / p) < t).count() as f64 / n;
    [abs_rel, sq_rel, rmse, rmse_log, delta(1.25), delta(1.25f64.powi(2)), delta(1.25f64.powi(3))]
}

fn median_oracle(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn metrics(f: &mut Vec<String>) {
    let mut rng = Rng::seed_from_u64(4);
    for _ in 0..100 {
        let gt = depth(8, 8, &mut rng);
        let mut pred = depth(8, 8, &mut rng);
        for v in pred.valid.iter_mut() {
            *v = rng.gen_bool(0.8);
        }
        let joint: Vec<usize> = (0..64).filter(|&i| pred.valid[i]).collect();
        let scale = median_oracle(joint.iter().map(|&i| gt.values[i]).collect())
            / median_oracle(joint.iter().map(|&i| pred.values[i]).collect());
        let s = median_scale_factor(&pred, &gt).unwrap();
        check(f, (s - scale).abs() <= 1e-12, || format!("median factor {s} vs {scale}"));
        for (scaled, factor) in [(false, 1.0), (true, scale)] {
            let got = depth_metrics(&pred, &gt, scaled).unwrap().values();
            let want = metrics_oracle(&pred, &gt, factor);
            for (c, (a, b)) in got.iter().zip(want).enumerate() {
                check(f, (a - b).abs() <= 1e-12, || format!("{} = {a}, oracle {b}", DepthMetrics::COLUMNS[c]));
            }
            check(f, got[4] <= got[5] && got[5] <= got[6], || format!("δ not monotone: {:?}", &got[4..]));
        }
        // Powers of two scale exactly, so median scaling must cancel them bit for bit.
        let base = depth_metrics(&pred, &gt, true).unwrap();
        for c in [0.125, 0.5, 2.0, 64.0] {
            let m = depth_metrics(&pred.scaled(c), &gt, true).unwrap();
            check(f, m == base, || format!("median scaling not invariant under ×{c}"));
        }
    }
}

fn clamp_cases(f: &mut Vec<String>) {
    let cfg = GuidanceConfig::default();
    check(f, cfg.alpha_low == 0.05 && cfg.alpha_high == 0.15, || format!("default α bounds {cfg:?}"));
    let prior = DepthMap::from_values(3, 1, vec![2.0; 3]).unwrap();
    let err = ErrorMap {
        width: 3,
        height: 1,
        values: vec![0.10, 0.01, 0.50],
        valid: vec![true; 3],
    };
    let b = adaptive_range(&prior, &err, &cfg).unwrap();
    let want = [(1.8, 2.2), (1.9, 2.1), (1.7, 2.3)];
    for (i, (n, fr)) in want.into_iter().enumerate() {
        check(f, b.near[i] == n && b.far[i] == fr, || format!("e={}: [{}, {}] vs [{n}, {fr}]", err.values[i], b.near[i], b.far[i]));
    }
}

fn criterion_1(v: &mut Verdicts) {
    let start = Instant::now();
    let mut failures = Vec::new();
    scale_invariance(&mut failures);
    compositing(&mut failures);
    field_gradients(&mut failures);
    prior_gradients(&mut failures);
    geometry(&mut failures);
    metrics(&mut failures);
    clamp_cases(&mut failures);
    let secs = start.elapsed().as_secs_f64();
    for line in failures.iter().take(10) {
        say(&format!("  {line}"));
    }
    v.record(1, failures.is_empty() && secs < 60.0, format!("{} violations, {secs:.1} s", failures.len()));
}

// ---------------------------------------------------------------------------
// Criterion 2: guided sampling containment.

fn criterion_2(v: &mut Verdicts, guided: &Path) {
    let files = RunFiles::new(guided);
    let s = files.train_summary().unwrap();
    let data = files.dataset().unwrap();
    let (seen, _) = split_views(data.images.len(), 8);
    let mut violations = 0usize;
    let mut pixels = 0usize;
    for &i in &seen {
        let prior = files.prior(i).unwrap();
        let b = files.bounds(i).unwrap();
        for p in 0..prior.values.len() {
            pixels += 1;
            if !(b.near[p] < prior.values[p] && prior.values[p] < b.far[p]) {
                violations += 1;
            }
        }
    }
    v.record(
        2,
        s.samples_drawn > 0 && s.samples_outside == 0 && violations == 0,
        format!(
            "{} of {} samples outside [t_n, t_f]; {violations} of {pixels} pixels without t_n < prior < t_f",
            s.samples_outside, s.samples_drawn
        ),
    );
}

// ---------------------------------------------------------------------------
// Criteria 3, 5, 6: textureless scene, guided vs unguided.

struct Pair {
    guided: RunSummary,
    unguided: RunSummary,
}

fn abs_rel(s: &RunSummary, key: &str) -> f64 {
    s.depth[key].abs_rel
}

fn criterion_3(v: &mut Verdicts, pairs: &[Pair]) {
    let mut ratio_ok = 0;
    let mut all_ok = true;
    let mut detail = Vec::new();
    for (seed, p) in SEEDS.iter().zip(pairs) {
        let (g, u) = (abs_rel(&p.guided, "nerf"), abs_rel(&p.unguided, "nerf"));
        let psnr = p.unguided.psnr_seen.unwrap_or(f64::INFINITY);
        let ratio = u / g;
        ratio_ok += usize::from(ratio >= 2.0);
        all_ok &= psnr > 24.0 && g < 0.10;
        detail.push(format!("seed {seed}: unguided PSNR {psnr:.2} dB, AbsRel {u:.4} vs guided {g:.4} (×{ratio:.2})"));
    }
    v.record(3, all_ok && ratio_ok >= 2, detail.join("; "));
}

fn criterion_5(v: &mut Verdicts, pairs: &[Pair]) {
    let nerf = mean(pairs.iter().map(|p| abs_rel(&p.unguided, "nerf")));
    let priors = mean(pairs.iter().map(|p| abs_rel(&p.guided, "priors")));
    let both = mean(pairs.iter().map(|p| abs_rel(&p.guided, "nerf")));
    let filtered = mean(pairs.iter().map(|p| abs_rel(&p.guided, "filtered")));
    v.record(
        5,
        nerf > priors && priors > both && filtered <= both + 0.005,
        format!("mean AbsRel NeRF {nerf:.4}, priors {priors:.4}, NeRF+priors {both:.4}, +filter {filtered:.4}"),
    );
}

fn criterion_6(v: &mut Verdicts, pairs: &[Pair]) {
    let g = mean(pairs.iter().map(|p| p.guided.psnr_seen.unwrap_or(f64::INFINITY)));
    let u = mean(pairs.iter().map(|p| p.unguided.psnr_seen.unwrap_or(f64::INFINITY)));
    v.record(6, g - u >= 1.0, format!("mean seen-view PSNR guided {g:.2} dB, unguided {u:.2} dB (+{:.2})", g - u));
}

// ---------------------------------------------------------------------------
// Criterion 4: textured scene with noisy, scaled sparse depth.

fn criterion_4(v: &mut Verdicts, s: &RunSummary) {
    let f = s.depth["filtered"];
    let n = s.depth["nerf"];
    v.record(
        4,
        f.abs_rel < 0.08 && f.delta_1 > 0.90 && f.abs_rel <= n.abs_rel + 0.005,
        format!("filtered AbsRel {:.4}, δ1 {:.4}; unfiltered AbsRel {:.4}", f.abs_rel, f.delta_1, n.abs_rel),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: hyper-sweep.

fn sweep_files(dir: &Path, points: usize) -> (String, Vec<Vec<FileRecord>>) {
    let csv = std::fs::read_to_string(dir.join("sweep.csv")).unwrap();
    let runs = (0..points)
        .map(|n| RunManifest::read(&dir.join(format!("point_{n:02}"))).map(|m| m.files).unwrap_or_default())
        .collect();
    (csv, runs)
}

fn criterion_7(v: &mut Verdicts, root: &Path) -> bool {
    let grid = default_grid();
    let a = hyper_sweep(&sweep_base(root.join("sweep_a")), &grid).unwrap();
    let b = hyper_sweep(&sweep_base(root.join("sweep_b")), &grid).unwrap();
    say(&format!("  sweep table:\n{}", a.to_text().trim_end()));
    let completed = a.rows.iter().filter(|r| r.outcome.is_ok()).count();
    let same = a == b && sweep_files(&root.join("sweep_a"), grid.len()) == sweep_files(&root.join("sweep_b"), grid.len());
    v.record(
        7,
        completed == grid.len() && same,
        format!("{completed} of {} grid points completed; rerun identical: {same}", grid.len()),
    );
    same
}

// ---------------------------------------------------------------------------
// Criterion 8: byte-identical reruns.

fn criterion_8(v: &mut Verdicts, root: &Path, originals: &[(PathBuf, RunManifest)], sweep_same: bool) {
    let mut diffs = Vec::new();
    for (dir, m) in originals {
        let mut cfg = m.config.clone();
        cfg.output = root.join("rerun").join(dir.file_name().unwrap());
        if cfg.output.exists() {
            std::fs::remove_dir_all(&cfg.output).unwrap();
        }
        let (again, _) = run(&cfg);
        if again.files != m.files {
            let differing: Vec<&str> = m
                .files
                .iter()
                .filter(|f| !again.files.contains(f))
                .map(|f| f.path.as_str())
                .collect();
            diffs.push(format!("{} ({} files differ, e.g. {:?})", dir.display(), differing.len(), differing.first()));
        }
    }
    v.record(
        8,
        diffs.is_empty() && sweep_same,
        format!(
            "{} reruns compared file by file, {} differ; sweep rerun identical: {sweep_same}{}",
            originals.len(),
            diffs.len(),
            diffs.iter().map(|d| format!("; {d}")).collect::<String>()
        ),
    );
}

#[test]
fn acceptance_criteria() {
    let root = root();
    let mut v = Verdicts(Vec::new());

    criterion_1(&mut v);

    let mut originals = Vec::new();
    let mut pairs = Vec::new();
    for seed in SEEDS {
        let g = textureless(seed, true, root.join(format!("textureless_guided_{seed}")));
        let u = textureless(seed, false, root.join(format!("textureless_nerf_{seed}")));
        let (gm, gs) = run(&g);
        let (um, us) = run(&u);
        if seed == SEEDS[0] {
            criterion_2(&mut v, &g.output);
            originals.push((g.output.clone(), gm));
            originals.push((u.output.clone(), um));
        }
        pairs.push(Pair {
            guided: gs,
            unguided: us,
        });
    }
    criterion_3(&mut v, &pairs);

    let t = textured_noisy(root.join("textured_noisy"));
    let (tm, ts) = run(&t);
    criterion_4(&mut v, &ts);
    originals.push((t.output.clone(), tm));

    criterion_5(&mut v, &pairs);
    criterion_6(&mut v, &pairs);
    let sweep_same = criterion_7(&mut v, &root);
    criterion_8(&mut v, &root, &originals, sweep_same);

    say("acceptance summary:");
    for (n, pass, detail) in &v.0 {
        say(&format!("  {n}: {} {detail}", if *pass { "PASS" } else { "FAIL" }));
    }
    assert_eq!(v.0.len(), 8);
    if std::env::var("ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        let failed: Vec<usize> = v.0.iter().filter(|r| !r.1).map(|r| r.0).collect();
        assert!(failed.is_empty(), "failed criteria: {failed:?}");
    }
}
