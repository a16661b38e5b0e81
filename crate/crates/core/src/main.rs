use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use nerf_mvs::field::{read_checkpoint, write_checkpoint, FieldParams};
use nerf_mvs::formats::{read_depth_pfm, read_masked_depth, read_ppm, write_depth_pfm, write_masked_depth, write_ppm};
use nerf_mvs::guidance::{
    adaptive_range, error_maps, read_ray_bounds, write_error_map, write_ray_bounds, GuidanceConfig, RayBounds,
};
use nerf_mvs::pipeline::{
    bounds_paths, default_grid, depth_paths, error_paths, export, global_bounds, hyper_sweep, ingest, run_pipeline,
    synthesize, view_name, Dataset, PipelineConfig, SceneSource, Stages, SyntheticScene,
};
use nerf_mvs::post::{confidence_filter, confidence_map, depth_metrics, write_confidence, FilterConfig, MetricsTable};
use nerf_mvs::priors::{adapt_priors, PriorConfig};
use nerf_mvs::render::{render_view_field, RenderConfig};
use nerf_mvs::rng::indexed;
use nerf_mvs::scene::{SceneSpec, Selection, SparseDepthSpec};
use nerf_mvs::training::{init_field, train, TrainConfig, TrainHooks, TrainMode, TrainView};
use nerf_mvs::{Error, Result};

#[derive(Parser)]
#[command(name = "nerf-mvs", version, about = "Prior-guided NeRF depth estimation for indoor scenes")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic scene and write it as a dataset directory.
    GenScene {
        #[command(flatten)]
        scene: SceneArgs,
        #[command(flatten)]
        sparse: SparseArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a dataset directory, optionally re-exporting it.
    Ingest {
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit dense priors to the sparse depth of a dataset.
    AdaptPriors {
        #[arg(long)]
        data: PathBuf,
        #[command(flatten)]
        priors: PriorArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Error maps and per-pixel sampling ranges from dense priors.
    Guidance {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        priors: PathBuf,
        #[command(flatten)]
        guidance: GuidanceArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Optimize a radiance field over every view of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Directory of sampling ranges; omit for one global range.
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[command(flatten)]
        train: TrainArgs,
        #[command(flatten)]
        render: RenderArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render depth and color for every view from a checkpoint.
    Render {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        bounds: Option<PathBuf>,
        #[command(flatten)]
        render: RenderArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confidence maps and filtered depth from rendered views.
    Filter {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rendered: PathBuf,
        #[command(flatten)]
        filter: FilterArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Median-scaled depth metrics of a directory of depth maps against ground truth.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        /// Directory holding `view_NNN.pfm` (with optional `.pgm` masks).
        #[arg(long)]
        depth: PathBuf,
        /// Write the table as CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Run the pipeline once per guidance setting.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Run the full pipeline.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct SceneArgs {
    /// Bundled scene name or path to a scene JSON file.
    #[arg(long, default_value = "textured")]
    scene: String,
}

impl SceneArgs {
    fn source(&self) -> Result<SyntheticScene> {
        if SceneSpec::bundled(&self.scene).is_some() {
            return Ok(SyntheticScene::Bundled(self.scene.clone()));
        }
        let text = std::fs::read_to_string(&self.scene)
            .map_err(|e| Error::Config(format!("scene `{}`: {e}", self.scene)))?;
        Ok(SyntheticScene::Spec(Box::new(SceneSpec::from_json(&text)?)))
    }
}

#[derive(Args)]
struct SparseArgs {
    #[arg(long)]
    sparse_keep: Option<f64>,
    #[arg(long)]
    sparse_noise: Option<f64>,
    #[arg(long)]
    sparse_scale: Option<f64>,
    /// Keep sparse pixels uniformly instead of by image gradient.
    #[arg(long)]
    sparse_uniform: bool,
}

impl SparseArgs {
    fn apply(&self, s: &mut SparseDepthSpec) {
        set(&mut s.keep_fraction, self.sparse_keep);
        set(&mut s.noise_sigma, self.sparse_noise);
        set(&mut s.scale, self.sparse_scale);
        if self.sparse_uniform {
            s.selection = Selection::Uniform;
        }
    }
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    prior_batch: Option<usize>,
    #[arg(long)]
    prior_lr: Option<f64>,
    #[arg(long)]
    smoothness: Option<f64>,
}

impl PriorArgs {
    fn apply(&self, c: &mut PriorConfig) {
        set(&mut c.epochs, self.epochs);
        set(&mut c.batch_size, self.prior_batch);
        set(&mut c.lr, self.prior_lr);
        set(&mut c.smoothness, self.smoothness);
    }
}

#[derive(Args)]
struct GuidanceArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha_low: Option<f64>,
    #[arg(long)]
    alpha_high: Option<f64>,
}

impl GuidanceArgs {
    fn apply(&self, g: &mut GuidanceConfig) {
        set(&mut g.k_consistency, self.k);
        set(&mut g.alpha_low, self.alpha_low);
        set(&mut g.alpha_high, self.alpha_high);
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    rays: Option<usize>,
    #[arg(long)]
    lr_init: Option<f64>,
    #[arg(long)]
    lr_final: Option<f64>,
    #[arg(long)]
    log_every: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// 8×256 field and 200K iterations.
    #[arg(long)]
    full_size: bool,
}

impl TrainArgs {
    fn apply(&self, t: &mut TrainConfig) {
        if self.full_size {
            *t = TrainConfig::full();
        }
        set(&mut t.iterations, self.iterations);
        set(&mut t.rays_per_batch, self.rays);
        set(&mut t.lr_init, self.lr_init);
        set(&mut t.lr_final, self.lr_final);
        set(&mut t.log_every, self.log_every);
        if self.checkpoint_every.is_some() {
            t.checkpoint_every = self.checkpoint_every;
        }
    }
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    noise_std: Option<f64>,
    /// Global `near far` range for unguided rays.
    #[arg(long, num_args = 2, value_names = ["NEAR", "FAR"])]
    global_bounds: Option<Vec<f64>>,
}

impl RenderArgs {
    fn apply(&self, r: &mut RenderConfig) {
        set(&mut r.samples, self.samples);
        set(&mut r.noise_std, self.noise_std);
        if let Some(b) = &self.global_bounds {
            r.global_bounds = Some([b[0], b[1]]);
        }
    }
}

#[derive(Args)]
struct FilterArgs {
    #[arg(long)]
    radius: Option<usize>,
    #[arg(long)]
    sigma_spatial: Option<f64>,
    #[arg(long)]
    sigma_color: Option<f64>,
}

impl FilterArgs {
    fn apply(&self, f: &mut FilterConfig) {
        set(&mut f.radius, self.radius);
        set(&mut f.sigma_spatial, self.sigma_spatial);
        set(&mut f.sigma_color, self.sigma_color);
    }
}

#[derive(Args)]
struct RunArgs {
    /// Pipeline configuration JSON; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Synthetic scene (bundled name or JSON path) when no config is given.
    #[arg(long)]
    scene: Option<String>,
    /// Dataset directory to ingest instead of a synthetic scene.
    #[arg(long, conflicts_with = "scene")]
    ingest: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    priors_in: Option<PathBuf>,
    #[arg(long)]
    holdout_every: Option<usize>,
    #[arg(long)]
    no_priors: bool,
    #[arg(long)]
    no_guidance: bool,
    #[arg(long)]
    no_nerf: bool,
    #[arg(long)]
    no_filter: bool,
    /// Recompute every stage even when outputs on disk match.
    #[arg(long)]
    no_resume: bool,
    #[arg(long)]
    track_heldout_depth: bool,
    #[command(flatten)]
    sparse: SparseArgs,
    #[command(flatten)]
    priors: PriorArgs,
    #[command(flatten)]
    guidance: GuidanceArgs,
    #[command(flatten)]
    train: TrainArgs,
    #[command(flatten)]
    render: RenderArgs,
    #[command(flatten)]
    filter: FilterArgs,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => {
                let output = self
                    .output
                    .clone()
                    .ok_or_else(|| Error::Config("give --config or --output".into()))?;
                let scene = match &self.ingest {
                    Some(dir) => SceneSource::Ingest(dir.clone()),
                    None => SceneSource::Synthetic(
                        SceneArgs {
                            scene: self.scene.clone().unwrap_or_else(|| "textured".into()),
                        }
                        .source()?,
                    ),
                };
                PipelineConfig::new(scene, output)
            }
        };
        if self.config.is_some() {
            if let Some(dir) = &self.ingest {
                cfg.scene = SceneSource::Ingest(dir.clone());
            } else if let Some(s) = &self.scene {
                cfg.scene = SceneSource::Synthetic(SceneArgs { scene: s.clone() }.source()?);
            }
        }
        set(&mut cfg.output, self.output.clone());
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.holdout_every, self.holdout_every);
        if self.priors_in.is_some() {
            cfg.priors_in = self.priors_in.clone();
        }
        let s: &mut Stages = &mut cfg.stages;
        s.priors &= !self.no_priors;
        s.guidance &= !self.no_guidance;
        s.nerf &= !self.no_nerf;
        s.filter &= !self.no_filter;
        cfg.resume &= !self.no_resume;
        cfg.track_heldout_depth |= self.track_heldout_depth;
        self.sparse.apply(&mut cfg.sparse);
        self.priors.apply(&mut cfg.priors);
        self.guidance.apply(&mut cfg.guidance);
        self.train.apply(&mut cfg.train);
        self.render.apply(&mut cfg.render);
        self.filter.apply(&mut cfg.filter);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

fn load_dir_depth(dir: &Path, i: usize) -> Result<nerf_mvs::image::DepthMap> {
    let (pfm, pgm) = depth_paths(dir, i);
    if pgm.exists() {
        read_masked_depth(&pfm, &pgm)
    } else {
        read_depth_pfm(&pfm)
    }
}

fn view_bounds(data: &Dataset, dir: Option<&Path>, render: &RenderConfig, i: usize) -> Result<RayBounds> {
    match dir {
        Some(d) => {
            let (n, f) = bounds_paths(d, i);
            read_ray_bounds(&n, &f)
        }
        None => {
            let [n, f] = match render.global_bounds {
                Some(b) => b,
                None => global_bounds(data)?,
            };
            let k = &data.cameras[i].intrinsics;
            RayBounds::uniform(k.width, k.height, n, f)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenScene {
            scene,
            sparse,
            seed,
            out,
        } => {
            let spec = scene.source()?.resolve()?;
            let mut s = SparseDepthSpec::default();
            sparse.apply(&mut s);
            let data = synthesize(&spec, &s, seed)?;
            export(&out, &data)?;
            println!("wrote {} views to {}", data.len(), out.display());
        }
        Command::Ingest { dir, out } => {
            let data = ingest(&dir)?;
            println!(
                "{}: {} views, ground truth {}",
                dir.display(),
                data.len(),
                if data.gt.is_some() { "present" } else { "absent" }
            );
            if let Some(out) = out {
                export(&out, &data)?;
            }
        }
        Command::AdaptPriors {
            data,
            priors,
            seed,
            out,
        } => {
            let data = ingest(&data)?;
            let mut cfg = PriorConfig {
                seed,
                ..Default::default()
            };
            priors.apply(&mut cfg);
            let (_, dense, report) = adapt_priors(&data.images, &data.sparse, &cfg)?;
            for (i, p) in dense.iter().enumerate() {
                write_depth_pfm(&out.join(format!("{}.pfm", view_name(i))), p)?;
            }
            println!("prior loss {:.5} -> {:.5}", report.initial_loss, report.final_loss);
        }
        Command::Guidance {
            data,
            priors,
            guidance,
            out,
        } => {
            let data = ingest(&data)?;
            let mut cfg = GuidanceConfig::default();
            guidance.apply(&mut cfg);
            let dense = (0..data.len())
                .map(|i| read_depth_pfm(&priors.join(format!("{}.pfm", view_name(i)))))
                .collect::<Result<Vec<_>>>()?;
            let maps = error_maps(&dense, &data.cameras, &cfg)?;
            for (i, (p, e)) in dense.iter().zip(&maps).enumerate() {
                let (a, b) = error_paths(&out, i);
                write_error_map(&a, &b, e)?;
                let (n, f) = bounds_paths(&out, i);
                write_ray_bounds(&n, &f, &adaptive_range(p, e, &cfg)?)?;
            }
        }
        Command::Train {
            data,
            bounds,
            train: targs,
            render,
            seed,
            out,
        } => {
            let data = ingest(&data)?;
            let mut cfg = TrainConfig {
                seed,
                mode: if bounds.is_some() {
                    TrainMode::Guided
                } else {
                    TrainMode::Unguided
                },
                ..Default::default()
            };
            targs.apply(&mut cfg);
            let mut rcfg = RenderConfig::default();
            render.apply(&mut rcfg);
            let views = (0..data.len())
                .map(|i| {
                    Ok(TrainView {
                        image: data.images[i].clone(),
                        camera: data.cameras[i],
                        bounds: view_bounds(&data, bounds.as_deref(), &rcfg, i)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let ckpt = out.join("field.ckpt");
            let hooks = TrainHooks {
                evaluate: None,
                checkpoint: Some(&ckpt),
            };
            let (field, log) = train(&views, init_field::<f32>(&views, &cfg), &cfg, &rcfg, &hooks)?;
            write_checkpoint(&ckpt, &field)?;
            log.write_csv(&out.join("log.csv"))?;
            let last = log.records.last().map_or(f64::NAN, |r| r.loss);
            println!("final loss {last:.5}{}", if log.converged { "" } else { " (not converged)" });
        }
        Command::Render {
            data,
            checkpoint,
            bounds,
            render,
            seed,
            out,
        } => {
            let data = ingest(&data)?;
            let field: FieldParams<f32> = read_checkpoint(&checkpoint)?;
            let mut rcfg = RenderConfig::default();
            render.apply(&mut rcfg);
            for i in 0..data.len() {
                let b = view_bounds(&data, bounds.as_deref(), &rcfg, i)?;
                let r = render_view_field(&field, &data.cameras[i], &b, &rcfg, indexed(seed, i as u64))?;
                let (d, m) = depth_paths(&out, i);
                write_masked_depth(&d, &m, &r.depth)?;
                write_ppm(&out.join(format!("{}.ppm", view_name(i))), &r.image)?;
            }
        }
        Command::Filter {
            data,
            rendered,
            filter,
            out,
        } => {
            let data = ingest(&data)?;
            let mut cfg = FilterConfig::default();
            filter.apply(&mut cfg);
            for i in 0..data.len() {
                let img = read_ppm(&rendered.join(format!("{}.ppm", view_name(i))))?;
                let conf = confidence_map(&data.images[i], &img)?;
                write_confidence(&out.join(format!("{}_confidence.pfm", view_name(i))), &conf)?;
                let depth = load_dir_depth(&rendered, i)?;
                let (d, m) = depth_paths(&out, i);
                write_masked_depth(&d, &m, &confidence_filter(&depth, &data.images[i], &conf, &cfg)?)?;
            }
        }
        Command::Evaluate { data, depth, csv } => {
            let data = ingest(&data)?;
            let gt = data
                .gt
                .as_ref()
                .ok_or_else(|| Error::Ingest("dataset has no ground-truth depth".into()))?;
            let mut table = MetricsTable::default();
            let mut all = Vec::new();
            for (i, g) in gt.iter().enumerate() {
                if !depth_paths(&depth, i).0.exists() {
                    continue;
                }
                let m = depth_metrics(&load_dir_depth(&depth, i)?, g, true)?;
                table.push(view_name(i), m);
                all.push(m);
            }
            let mean = nerf_mvs::post::DepthMetrics::mean(&all)
                .ok_or_else(|| Error::InvalidInput(format!("no depth maps in {}", depth.display())))?;
            table.push("mean", mean);
            print!("{}", table.to_text());
            if let Some(path) = csv {
                std::fs::write(&path, table.to_csv()).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            }
        }
        Command::Sweep { run } => {
            let table = hyper_sweep(&run.config()?, &default_grid())?;
            print!("{}", table.to_text());
        }
        Command::Run { run } => {
            let cfg = run.config()?;
            let manifest = run_pipeline(&cfg)?;
            for s in &manifest.stages {
                println!("{:<9} {:?} {:.1}s", s.name, s.status, s.seconds);
            }
            let depth = cfg.output.join("metrics").join("depth.txt");
            if let Ok(text) = std::fs::read_to_string(depth) {
                print!("{text}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
