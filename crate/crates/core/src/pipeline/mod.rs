//! End-to-end runs: scene, priors, guidance, training, rendering, filtering
//! and evaluation, each stage reading its inputs back from disk.

mod dataset;
mod sweep;

use std::collections::BTreeMap;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use dataset::{export, ingest, synthesize, view_name, Dataset};
pub use sweep::{default_grid, hyper_sweep, SweepRow, SweepTable, DEFAULT_GRID};

use crate::error::{Error, Result};
use crate::field::{read_checkpoint, FieldParams};
use crate::formats::{read_depth_pfm, read_masked_depth, read_ppm, write_depth_pfm, write_masked_depth, write_ppm};
use crate::guidance::{
    adaptive_range, error_maps, nearest_seen_view, read_error_map, read_ray_bounds, write_error_map, write_ray_bounds,
    GuidanceConfig, RayBounds,
};
use crate::image::{DepthMap, Image};
use crate::post::{
    confidence_filter, confidence_map, depth_metrics, psnr, read_confidence, ssim, write_confidence, DepthMetrics,
    FilterConfig, MetricsTable,
};
use crate::priors::{adapt_priors, align_to_sparse, PriorConfig};
use crate::render::{render_view_field, RenderConfig};
use crate::rng::{indexed, substream};
use crate::scene::{SceneSpec, SparseDepthSpec};
use crate::training::{init_field, train, TrainConfig, TrainHooks, TrainMode, TrainView};

/// Where the views come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SceneSource {
    /// A bundled scene name (`textured`, `textureless`) or an inline scene spec.
    Synthetic(SyntheticScene),
    /// A dataset directory in the layout written by [`export`].
    Ingest(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SyntheticScene {
    Bundled(String),
    Spec(Box<SceneSpec>),
}

impl SyntheticScene {
    pub fn resolve(&self) -> Result<SceneSpec> {
        match self {
            SyntheticScene::Bundled(name) => {
                SceneSpec::bundled(name).ok_or_else(|| Error::Config(format!("unknown bundled scene `{name}`")))
            }
            SyntheticScene::Spec(spec) => Ok((**spec).clone()),
        }
    }
}

/// Which stages run. Guidance needs priors; the filter needs the field.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub priors: bool,
    pub guidance: bool,
    pub nerf: bool,
    pub filter: bool,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            priors: true,
            guidance: true,
            nerf: true,
            filter: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub scene: SceneSource,
    /// Sparse depth simulation for synthetic scenes.
    #[serde(default)]
    pub sparse: SparseDepthSpec,
    #[serde(default)]
    pub stages: Stages,
    /// Directory of external dense priors (`view_000.pfm`, ...) used instead of adaptation.
    #[serde(default)]
    pub priors_in: Option<PathBuf>,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    /// `seed` is replaced by one derived from the root seed.
    #[serde(default)]
    pub priors: PriorConfig,
    /// `seed` is replaced by one derived from the root seed and `mode`
    /// follows `stages.guidance`.
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub render: RenderConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    pub output: PathBuf,
    #[serde(default)]
    pub seed: u64,
    /// Every `holdout_every`-th view (1-based) is held out; 0 keeps all views.
    #[serde(default = "default_holdout")]
    pub holdout_every: usize,
    /// Evaluate held-out depth AbsRel at each training log record.
    #[serde(default)]
    pub track_heldout_depth: bool,
    /// Skip stages whose outputs on disk match the configuration.
    #[serde(default = "default_resume")]
    pub resume: bool,
}

fn default_holdout() -> usize {
    8
}
fn default_resume() -> bool {
    true
}

impl PipelineConfig {
    pub fn new(scene: SceneSource, output: impl Into<PathBuf>) -> Self {
        Self {
            scene,
            sparse: SparseDepthSpec::default(),
            stages: Stages::default(),
            priors_in: None,
            guidance: GuidanceConfig::default(),
            priors: PriorConfig::default(),
            train: TrainConfig::default(),
            render: RenderConfig::default(),
            filter: FilterConfig::default(),
            output: output.into(),
            seed: 0,
            holdout_every: default_holdout(),
            track_heldout_depth: false,
            resume: true,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stages;
        if s.guidance && !s.priors {
            return Err(Error::Config("guidance needs the priors stage".into()));
        }
        if s.filter && !s.nerf {
            return Err(Error::Config("the filter needs the nerf stage".into()));
        }
        if !s.priors && !s.nerf {
            return Err(Error::Config("enable at least one of priors and nerf".into()));
        }
        match &self.scene {
            SceneSource::Synthetic(scene) => scene.resolve()?.validate().map_err(|e| Error::Config(e.to_string()))?,
            SceneSource::Ingest(dir) => {
                if !dir.is_dir() {
                    return Err(Error::Config(format!("ingest directory {} does not exist", dir.display())));
                }
            }
        }
        if let Some(dir) = &self.priors_in {
            if !dir.is_dir() {
                return Err(Error::Config(format!("priors directory {} does not exist", dir.display())));
            }
        }
        self.sparse.validate()?;
        self.guidance.validate()?;
        self.priors.validate()?;
        self.train.validate()?;
        self.render.validate()?;
        self.filter.validate()?;
        if self.holdout_every == 1 {
            return Err(Error::Config("holdout_every = 1 leaves no training views".into()));
        }
        Ok(())
    }

    fn priors_config(&self) -> PriorConfig {
        PriorConfig {
            seed: substream(self.seed, "priors"),
            ..self.priors.clone()
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: substream(self.seed, "train"),
            mode: if self.stages.guidance {
                TrainMode::Guided
            } else {
                TrainMode::Unguided
            },
            ..self.train.clone()
        }
    }
}

/// Indices of training (seen) and held-out views.
pub fn split_views(count: usize, holdout_every: usize) -> (Vec<usize>, Vec<usize>) {
    (0..count).partition(|&i| holdout_every == 0 || i % holdout_every != holdout_every - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageStatus {
    Ran,
    Resumed,
    Disabled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub status: StageStatus,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// What a run did and what it left on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config: PipelineConfig,
    pub stages: Vec<StageRecord>,
    /// Every output file except the manifest itself, sorted by path.
    pub files: Vec<FileRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";
const DONE_FILE: &str = ".done";

impl RunManifest {
    pub fn read(out: &Path) -> Result<Self> {
        let path = out.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
    }

    /// Checks every listed checksum against the file on disk.
    pub fn verify(&self, out: &Path) -> Result<()> {
        for f in &self.files {
            let actual = sha256_file(&out.join(&f.path))?;
            if actual != f.sha256 {
                return Err(Error::InvalidInput(format!("checksum mismatch for {}", f.path)));
            }
        }
        Ok(())
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<FileRecord>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_files(root, &p, out)?;
            continue;
        }
        let rel = p.strip_prefix(root).expect("inside root");
        let name = rel.to_string_lossy().replace('\\', "/");
        if name == MANIFEST_FILE || name == LOCK_FILE {
            continue;
        }
        let bytes = fs::metadata(&p).map_err(|e| Error::io(&p, e))?.len();
        out.push(FileRecord {
            path: name,
            sha256: sha256_file(&p)?,
            bytes,
        });
    }
    Ok(())
}

/// Lists output files with checksums, excluding the manifest and lock.
pub fn inventory(out: &Path) -> Result<Vec<FileRecord>> {
    let mut files = Vec::new();
    collect_files(out, out, &mut files)?;
    files.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(files)
}

/// Exclusive ownership of an output directory for the life of the guard.
pub struct OutputLock {
    path: PathBuf,
}

impl OutputLock {
    pub fn acquire(out: &Path) -> Result<Self> {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let path = out.join(LOCK_FILE);
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == ErrorKind::AlreadyExists => Err(Error::InvalidInput(format!(
                "{} is locked by another run; delete {} if that run is gone",
                out.display(),
                path.display()
            ))),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn fingerprint(parts: &[&dyn erased::Json]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.json().as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

mod erased {
    pub trait Json {
        fn json(&self) -> String;
    }
    impl<T: serde::Serialize> Json for T {
        fn json(&self) -> String {
            serde_json::to_string(self).expect("serializable")
        }
    }
}

fn stage_error(stage: &str, e: Error) -> Error {
    Error::Stage {
        stage: stage.to_string(),
        source: Box::new(e),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).expect("serializable") + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Training outcome kept next to the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub converged: bool,
    pub final_loss: f64,
    pub samples_drawn: u64,
    pub samples_outside: u64,
    /// Range used by every ray in unguided mode.
    pub global_bounds: Option<[f64; 2]>,
}

/// Headline numbers of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    /// Mean median-scaled metrics over seen views, keyed by depth source
    /// (`priors`, `nerf`, `filtered`, `final`) plus `nerf_novel` for held-out views.
    pub depth: BTreeMap<String, DepthMetrics>,
    /// Mean PSNR of rendered seen / held-out views; absent when a view is exact.
    pub psnr_seen: Option<f64>,
    pub psnr_novel: Option<f64>,
    pub ssim_seen: Option<f64>,
    pub ssim_novel: Option<f64>,
    pub seen_views: Vec<usize>,
    pub novel_views: Vec<usize>,
}

impl RunSummary {
    pub fn read(out: &Path) -> Result<Self> {
        read_json(&out.join("metrics").join("summary.json"))
    }
}

struct Runner<'a> {
    cfg: &'a PipelineConfig,
    out: PathBuf,
    records: Vec<StageRecord>,
    upstream_ran: bool,
}

impl Runner<'_> {
    fn dir(&self, stage: &str) -> PathBuf {
        self.out.join(stage)
    }

    /// Runs `body` unless the stage's marker matches `fp` and nothing upstream reran.
    fn stage(&mut self, name: &str, enabled: bool, fp: &str, body: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        let dir = self.dir(name);
        let marker = dir.join(DONE_FILE);
        if !enabled {
            if dir.exists() {
                fs::remove_dir_all(&dir).map_err(|e| stage_error(name, Error::io(&dir, e)))?;
            }
            self.records.push(StageRecord {
                name: name.into(),
                status: StageStatus::Disabled,
                seconds: 0.0,
            });
            return Ok(());
        }
        let done = fs::read_to_string(&marker).map(|s| s.trim() == fp).unwrap_or(false);
        if self.cfg.resume && done && !self.upstream_ran {
            log::info!("stage {name}: resumed from {}", dir.display());
            self.records.push(StageRecord {
                name: name.into(),
                status: StageStatus::Resumed,
                seconds: 0.0,
            });
            return Ok(());
        }
        log::info!("stage {name}: running");
        let t = Instant::now();
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| stage_error(name, Error::io(&dir, e)))?;
        }
        fs::create_dir_all(&dir).map_err(|e| stage_error(name, Error::io(&dir, e)))?;
        body(&dir).map_err(|e| stage_error(name, e))?;
        write_text(&marker, &format!("{fp}\n")).map_err(|e| stage_error(name, e))?;
        self.upstream_ran = true;
        self.records.push(StageRecord {
            name: name.into(),
            status: StageStatus::Ran,
            seconds: t.elapsed().as_secs_f64(),
        });
        Ok(())
    }
}

/// `view_NNN.pfm` and its `.pgm` mask.
pub fn depth_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    let n = view_name(i);
    (dir.join(format!("{n}.pfm")), dir.join(format!("{n}.pgm")))
}

/// `view_NNN_near.pfm` and `view_NNN_far.pfm`.
pub fn bounds_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    let n = view_name(i);
    (dir.join(format!("{n}_near.pfm")), dir.join(format!("{n}_far.pfm")))
}

/// `view_NNN_error.pfm` and its `.pgm` mask.
pub fn error_paths(dir: &Path, i: usize) -> (PathBuf, PathBuf) {
    let n = view_name(i);
    (dir.join(format!("{n}_error.pfm")), dir.join(format!("{n}_error.pgm")))
}

/// `[0.2·min, 1.5·max]` over the valid ground truth, or the sparse depth when
/// there is none.
pub fn global_bounds(data: &Dataset) -> Result<[f64; 2]> {
    let maps = data.gt.as_ref().unwrap_or(&data.sparse);
    let (lo, hi) = maps
        .iter()
        .flat_map(|d| d.valid_values())
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !(lo.is_finite() && hi > 0.0) {
        return Err(Error::InvalidInput("no valid depth to derive global bounds from".into()));
    }
    Ok([0.2 * lo, 1.5 * hi])
}

/// Loads the stage products a run left under `out`.
pub struct RunFiles {
    pub out: PathBuf,
}

impl RunFiles {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        Self { out: out.into() }
    }

    pub fn dataset(&self) -> Result<Dataset> {
        ingest(&self.out.join("scene"))
    }

    pub fn prior(&self, i: usize) -> Result<DepthMap> {
        read_depth_pfm(&self.out.join("priors").join(format!("{}.pfm", view_name(i))))
    }

    pub fn error_map(&self, i: usize) -> Result<crate::guidance::ErrorMap> {
        let (a, b) = error_paths(&self.out.join("guidance"), i);
        read_error_map(&a, &b)
    }

    pub fn bounds(&self, i: usize) -> Result<RayBounds> {
        let (a, b) = bounds_paths(&self.out.join("guidance"), i);
        read_ray_bounds(&a, &b)
    }

    pub fn rendered_depth(&self, i: usize) -> Result<DepthMap> {
        let (a, b) = depth_paths(&self.out.join("render"), i);
        read_masked_depth(&a, &b)
    }

    pub fn rendered_image(&self, i: usize) -> Result<Image> {
        read_ppm(&self.out.join("render").join(format!("{}.ppm", view_name(i))))
    }

    pub fn filtered_depth(&self, i: usize) -> Result<DepthMap> {
        let (a, b) = depth_paths(&self.out.join("filter"), i);
        read_masked_depth(&a, &b)
    }

    pub fn confidence(&self, i: usize) -> Result<crate::post::ConfidenceMap> {
        read_confidence(&self.out.join("filter").join(format!("{}_confidence.pfm", view_name(i))))
    }

    pub fn field(&self) -> Result<FieldParams<f32>> {
        read_checkpoint(&self.out.join("train").join("field.ckpt"))
    }

    pub fn train_summary(&self) -> Result<TrainSummary> {
        read_json(&self.out.join("train").join("summary.json"))
    }
}

/// Per-view sampling ranges for rendering: own ranges for seen views, the
/// nearest seen view's for held-out ones, or one global range when unguided.
fn render_bounds(
    files: &RunFiles,
    data: &Dataset,
    seen: &[usize],
    view: usize,
    global: Option<[f64; 2]>,
) -> Result<RayBounds> {
    let k = &data.cameras[view].intrinsics;
    if let Some([n, f]) = global {
        return RayBounds::uniform(k.width, k.height, n, f);
    }
    let src = if seen.contains(&view) {
        view
    } else {
        let poses: Vec<_> = seen.iter().map(|&s| data.cameras[s].pose).collect();
        seen[nearest_seen_view(&data.cameras[view].pose, &poses)?]
    };
    let b = files.bounds(src)?;
    if (b.width, b.height) != (k.width, k.height) {
        return Err(Error::SizeMismatch(format!("view {src} ranges do not fit view {view}")));
    }
    Ok(b)
}

fn mean_finite(v: &[f64]) -> Option<f64> {
    (!v.is_empty() && v.iter().all(|x| x.is_finite())).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Runs every enabled stage and writes `manifest.json`.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<RunManifest> {
    cfg.validate()?;
    let _lock = OutputLock::acquire(&cfg.output)?;
    let out = cfg.output.clone();
    let files = RunFiles::new(&out);
    let mut run = Runner {
        cfg,
        out: out.clone(),
        records: Vec::new(),
        upstream_ran: false,
    };

    let fp_scene = fingerprint(&[&"scene", &cfg.scene, &cfg.sparse, &cfg.seed]);
    run.stage("scene", true, &fp_scene, |dir| {
        let data = match &cfg.scene {
            SceneSource::Synthetic(s) => synthesize(&s.resolve()?, &cfg.sparse, substream(cfg.seed, "scene"))?,
            SceneSource::Ingest(src) => ingest(src)?,
        };
        export(dir, &data)
    })?;
    let data = files.dataset().map_err(|e| stage_error("scene", e))?;
    let (seen, novel) = split_views(data.len(), cfg.holdout_every);
    if seen.is_empty() {
        return Err(Error::Config("no views left for training".into()));
    }

    let prior_cfg = cfg.priors_config();
    let fp_priors = fingerprint(&[&fp_scene, &"priors", &prior_cfg, &cfg.priors_in, &cfg.holdout_every]);
    run.stage("priors", cfg.stages.priors, &fp_priors, |dir| {
        let sparse: Vec<DepthMap> = seen.iter().map(|&i| data.sparse[i].clone()).collect();
        let priors = match &cfg.priors_in {
            Some(src) => seen
                .iter()
                .zip(&sparse)
                .map(|(&i, sp)| {
                    let p = read_depth_pfm(&src.join(format!("{}.pfm", view_name(i))))?;
                    if !p.is_dense() || (p.width, p.height) != (sp.width, sp.height) {
                        return Err(Error::InvalidInput(format!(
                            "external prior for view {i} must be dense and {}x{}",
                            sp.width, sp.height
                        )));
                    }
                    align_to_sparse(&p, sp)
                })
                .collect::<Result<Vec<_>>>()?,
            None => {
                let images: Vec<Image> = seen.iter().map(|&i| data.images[i].clone()).collect();
                let (_, priors, report) = adapt_priors(&images, &sparse, &prior_cfg)?;
                write_json(&dir.join("report.json"), &report)?;
                priors
            }
        };
        for (&i, p) in seen.iter().zip(&priors) {
            write_depth_pfm(&dir.join(format!("{}.pfm", view_name(i))), p)?;
        }
        Ok(())
    })?;

    let fp_guidance = fingerprint(&[&fp_priors, &"guidance", &cfg.guidance]);
    run.stage("guidance", cfg.stages.guidance, &fp_guidance, |dir| {
        let priors = seen.iter().map(|&i| files.prior(i)).collect::<Result<Vec<_>>>()?;
        let cams: Vec<_> = seen.iter().map(|&i| data.cameras[i]).collect();
        let maps = error_maps(&priors, &cams, &cfg.guidance)?;
        for ((&i, p), e) in seen.iter().zip(&priors).zip(&maps) {
            let (a, b) = error_paths(dir, i);
            write_error_map(&a, &b, e)?;
            let bounds = adaptive_range(p, e, &cfg.guidance)?;
            let (a, b) = bounds_paths(dir, i);
            write_ray_bounds(&a, &b, &bounds)?;
        }
        Ok(())
    })?;

    let train_cfg = cfg.train_config();
    let global = if cfg.stages.guidance {
        None
    } else {
        Some(match cfg.render.global_bounds {
            Some(b) => b,
            None => global_bounds(&data)?,
        })
    };
    let render_seed = substream(cfg.seed, "render");
    let fp_train = fingerprint(&[&fp_guidance, &"train", &train_cfg, &cfg.render, &global, &cfg.track_heldout_depth]);
    run.stage("train", cfg.stages.nerf, &fp_train, |dir| {
        let views = seen
            .iter()
            .map(|&i| {
                Ok(TrainView {
                    image: data.images[i].clone(),
                    camera: data.cameras[i],
                    bounds: render_bounds(&files, &data, &seen, i, global)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let heldout: Vec<usize> = if data.gt.is_some() { novel.clone() } else { Vec::new() };
        let eval = |field: &FieldParams<f32>| -> Result<f64> {
            let gt = data.gt.as_ref().expect("ground truth");
            let mut total = 0.0;
            for &i in &heldout {
                let b = render_bounds(&files, &data, &seen, i, global)?;
                let r = render_view_field(field, &data.cameras[i], &b, &cfg.render, indexed(render_seed, i as u64))?;
                total += depth_metrics(&r.depth, &gt[i], true)?.abs_rel;
            }
            Ok(total / heldout.len() as f64)
        };
        let ckpt = dir.join("field.ckpt");
        let hooks = TrainHooks {
            evaluate: (cfg.track_heldout_depth && !heldout.is_empty()).then_some(&eval as _),
            checkpoint: Some(&ckpt),
        };
        let field = init_field::<f32>(&views, &train_cfg);
        let (_, log) = train(&views, field, &train_cfg, &cfg.render, &hooks)?;
        log.write_csv(&dir.join("log.csv"))?;
        write_json(
            &dir.join("summary.json"),
            &TrainSummary {
                converged: log.converged,
                final_loss: log.records.last().map_or(f64::NAN, |r| r.loss),
                samples_drawn: log.samples_drawn,
                samples_outside: log.samples_outside,
                global_bounds: global,
            },
        )
    })?;

    let fp_render = fingerprint(&[&fp_train, &"render"]);
    run.stage("render", cfg.stages.nerf, &fp_render, |dir| {
        let field = files.field()?;
        for i in 0..data.len() {
            let b = render_bounds(&files, &data, &seen, i, global)?;
            let r = render_view_field(&field, &data.cameras[i], &b, &cfg.render, indexed(render_seed, i as u64))?;
            let (a, m) = depth_paths(dir, i);
            write_masked_depth(&a, &m, &r.depth)?;
            write_ppm(&dir.join(format!("{}.ppm", view_name(i))), &r.image)?;
        }
        Ok(())
    })?;

    let fp_filter = fingerprint(&[&fp_render, &"filter", &cfg.filter]);
    run.stage("filter", cfg.stages.filter, &fp_filter, |dir| {
        for &i in &seen {
            let conf = confidence_map(&data.images[i], &files.rendered_image(i)?)?;
            write_confidence(&dir.join(format!("{}_confidence.pfm", view_name(i))), &conf)?;
            let conf = files.confidence(i)?;
            let filtered = confidence_filter(&files.rendered_depth(i)?, &data.images[i], &conf, &cfg.filter)?;
            let (a, m) = depth_paths(dir, i);
            write_masked_depth(&a, &m, &filtered)?;
        }
        Ok(())
    })?;

    let fp_metrics = fingerprint(&[&fp_filter, &"metrics", &cfg.stages]);
    run.stage("metrics", true, &fp_metrics, |dir| evaluate(&files, &data, cfg.stages, &seen, &novel, dir))?;

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        stages: run.records,
        files: inventory(&out)?,
    };
    write_json(&out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

fn evaluate(files: &RunFiles, data: &Dataset, stages: Stages, seen: &[usize], novel: &[usize], dir: &Path) -> Result<()> {
    let mut summary = RunSummary {
        depth: BTreeMap::new(),
        psnr_seen: None,
        psnr_novel: None,
        ssim_seen: None,
        ssim_novel: None,
        seen_views: seen.to_vec(),
        novel_views: novel.to_vec(),
    };
    if let Some(gt) = &data.gt {
        let mut sources: Vec<(&str, &[usize], Box<dyn Fn(usize) -> Result<DepthMap>>)> = Vec::new();
        if stages.priors {
            sources.push(("priors", seen, Box::new(|i| files.prior(i))));
        }
        if stages.nerf {
            sources.push(("nerf", seen, Box::new(|i| files.rendered_depth(i))));
            if !novel.is_empty() {
                sources.push(("nerf_novel", novel, Box::new(|i| files.rendered_depth(i))));
            }
        }
        if stages.filter {
            sources.push(("filtered", seen, Box::new(|i| files.filtered_depth(i))));
        }
        let mut table = MetricsTable::default();
        let mut per_view = MetricsTable::default();
        let final_source = if stages.filter {
            "filtered"
        } else if stages.nerf {
            "nerf"
        } else {
            "priors"
        };
        for (name, views, load) in &sources {
            let ms = views
                .iter()
                .map(|&i| {
                    let m = depth_metrics(&load(i)?, &gt[i], true)?;
                    if *name == final_source {
                        per_view.push(view_name(i), m);
                    }
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = DepthMetrics::mean(&ms).expect("at least one view");
            table.push(*name, mean);
            summary.depth.insert(name.to_string(), mean);
        }
        let fin = summary.depth[final_source];
        table.push("final", fin);
        summary.depth.insert("final".into(), fin);
        write_text(&dir.join("depth.csv"), &table.to_csv())?;
        write_text(&dir.join("depth.txt"), &table.to_text())?;
        write_text(&dir.join("depth_views.csv"), &per_view.to_csv())?;
    }
    if stages.nerf {
        let mut csv = String::from("view,split,psnr,ssim\n");
        let mut acc: [Vec<f64>; 4] = Default::default();
        for i in 0..data.len() {
            let r = files.rendered_image(i)?;
            let (p, s) = (psnr(&data.images[i], &r)?, ssim(&data.images[i], &r)?);
            let is_seen = seen.contains(&i);
            csv.push_str(&format!("{},{},{p:?},{s:?}\n", view_name(i), if is_seen { "seen" } else { "novel" }));
            let o = if is_seen { 0 } else { 2 };
            acc[o].push(p);
            acc[o + 1].push(s);
        }
        summary.psnr_seen = mean_finite(&acc[0]);
        summary.ssim_seen = mean_finite(&acc[1]);
        summary.psnr_novel = mean_finite(&acc[2]);
        summary.ssim_novel = mean_finite(&acc[3]);
        write_text(&dir.join("images.csv"), &csv)?;
    }
    write_json(&dir.join("summary.json"), &summary)
}
