use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use corrfield::checkpoint::Checkpoint;
use corrfield::corres::io::{read_correspondences, write_correspondences, write_ply, ManifestEntry, SetManifest};
use corrfield::corres::{preprocess_pipeline, triangulate_cloud, Correspondence, FilterReport};
use corrfield::geometry::{pixel_to_ray, CameraSet, PixelCoord};
use corrfield::image::{DepthMap, Image};
use corrfield::render::{render_image, train_with_observer, MetricsRow, RenderError, TrainOutcome};
use corrfield::scalar::Real;
use corrfield::synth::{
    camera_rig, canonical_scene, chamfer_l1, depth_mae, psnr, ssim, AnalyticScene, CorruptionSpec, EvalReport,
    SceneKind, SynthBundle, ViewMetrics,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Precision};
use crate::error::CliError;

/// File names inside an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }
    pub fn scene(&self) -> PathBuf {
        self.root.join("scene.json")
    }
    pub fn cameras(&self) -> PathBuf {
        self.root.join("cameras.json")
    }
    pub fn image(&self, name: &str) -> PathBuf {
        self.root.join("images").join(format!("{name}.ppm"))
    }
    pub fn depth(&self, name: &str) -> PathBuf {
        self.root.join("depths").join(format!("{name}.pfm"))
    }
    pub fn matches_dir(&self) -> PathBuf {
        self.root.join("matches")
    }
    pub fn manifest(&self) -> PathBuf {
        self.matches_dir().join("manifest.json")
    }
    pub fn correspondences(&self) -> PathBuf {
        self.root.join("correspondences.jsonl")
    }
    pub fn filter_report(&self) -> PathBuf {
        self.root.join("filter_report.json")
    }
    pub fn cloud(&self) -> PathBuf {
        self.root.join("cloud.ply")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.root.join("checkpoint.bin")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }
    pub fn eval_report(&self) -> PathBuf {
        self.root.join("eval.json")
    }
    pub fn render(&self, name: &str) -> PathBuf {
        self.root.join("renders").join(format!("{name}.ppm"))
    }
    pub fn render_depth(&self, name: &str) -> PathBuf {
        self.root.join("renders").join(format!("{name}.pfm"))
    }
    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation.csv")
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::input(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| CliError::input(path, e))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::input(path, e))
}

fn write_with<E: std::fmt::Display>(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<File>) -> Result<(), E>,
) -> Result<(), CliError> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| CliError::input(path, e))?;
    w.flush().map_err(|e| CliError::input(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::invariant)?;
    write_with(path, |w| writeln!(w, "{text}"))
}

fn archive_config(cfg: &ExperimentConfig) -> Result<Layout, CliError> {
    cfg.validate()?;
    let layout = Layout::new(&cfg.output_dir);
    write_with(&layout.config(), |w| writeln!(w, "{}", cfg.to_json()))?;
    Ok(layout)
}

pub fn load_scene(cfg: &ExperimentConfig) -> Result<AnalyticScene, CliError> {
    match &cfg.scene_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::input(path, e))?;
            AnalyticScene::from_json(&text).map_err(|e| CliError::input(path, e))
        }
        None => SceneKind::from_name(&cfg.scene)
            .map(canonical_scene)
            .ok_or_else(|| CliError::usage(format!("unknown scene `{}`", cfg.scene))),
    }
}

fn read_cameras(path: &Path) -> Result<CameraSet, CliError> {
    CameraSet::read_json(open(path)?).map_err(|e| CliError::input(path, e))
}

fn generate(cfg: &ExperimentConfig, corruption: &CorruptionSpec) -> Result<SynthBundle, CliError> {
    let scene = load_scene(cfg)?;
    let cameras = match &cfg.camera_file {
        Some(path) => read_cameras(path)?,
        None => camera_rig(&cfg.rig).map_err(CliError::usage)?,
    };
    if cameras.ids_with_split("train").len() < 2 {
        return Err(CliError::usage("at least two cameras in the `train` split are required"));
    }
    SynthBundle::with_cameras(scene, cameras, corruption, cfg.match_stride, cfg.seed).map_err(CliError::usage)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SynthSummary {
    pub train_views: usize,
    pub test_views: usize,
    pub raw_matches: usize,
}

/// Renders the scene and synthesizes raw matches into the output directory.
pub fn cmd_synth(cfg: &ExperimentConfig) -> Result<SynthSummary, CliError> {
    let layout = archive_config(cfg)?;
    let bundle = generate(cfg, &cfg.corruption)?;
    write_with(&layout.scene(), |w| writeln!(w, "{}", bundle.scene.to_json()))?;
    write_with(&layout.cameras(), |w| bundle.cameras.write_json(w))?;
    for id in 0..bundle.cameras.len() {
        let name = bundle.cameras.name(id);
        write_with(&layout.image(name), |w| bundle.images[id].write_ppm(w))?;
        write_with(&layout.depth(name), |w| bundle.depths[id].write_pfm(w))?;
    }
    let mut manifest = SetManifest::default();
    for (i, set) in bundle.sets.iter().enumerate() {
        let file = format!("set_{i}.jsonl");
        write_with(&layout.matches_dir().join(&file), |w| write_correspondences(w, &set.correspondences))?;
        manifest.sets.push(ManifestEntry { file, map: set.map });
    }
    write_json(&layout.manifest(), &manifest)?;
    Ok(SynthSummary {
        train_views: bundle.train_ids().len(),
        test_views: bundle.test_ids().len(),
        raw_matches: bundle.sets.iter().map(|s| s.correspondences.len()).sum(),
    })
}

/// Reads a bundle written by [`cmd_synth`]; raw match sets only when asked.
pub fn load_bundle(layout: &Layout, with_sets: bool) -> Result<SynthBundle, CliError> {
    let path = layout.scene();
    let text = fs::read_to_string(&path).map_err(|e| CliError::input(&path, e))?;
    let scene = AnalyticScene::from_json(&text).map_err(|e| CliError::input(&path, e))?;
    let cameras = read_cameras(&layout.cameras())?;
    let mut images = Vec::with_capacity(cameras.len());
    let mut depths = Vec::with_capacity(cameras.len());
    for id in 0..cameras.len() {
        let name = cameras.name(id);
        let (ip, dp) = (layout.image(name), layout.depth(name));
        images.push(Image::read_ppm(open(&ip)?).map_err(|e| CliError::input(&ip, e))?);
        depths.push(DepthMap::read_pfm(open(&dp)?).map_err(|e| CliError::input(&dp, e))?);
    }
    let sets = if with_sets {
        let path = layout.manifest();
        let manifest: SetManifest =
            serde_json::from_reader(open(&path)?).map_err(|e| CliError::input(&path, e))?;
        manifest.load(&layout.matches_dir()).map_err(|(p, e)| CliError::input(&p, e))?
    } else {
        Vec::new()
    };
    Ok(SynthBundle { scene, cameras, images, depths, sets })
}

fn read_corrs(path: &Path) -> Result<Vec<Correspondence>, CliError> {
    read_correspondences(open(path)?).map_err(|e| CliError::input(path, e))
}

/// Merges, propagates and filters the raw matches.
pub fn cmd_preprocess(cfg: &ExperimentConfig) -> Result<FilterReport, CliError> {
    let layout = archive_config(cfg)?;
    let bundle = load_bundle(&layout, true)?;
    let (corrs, report) = preprocess_pipeline(&bundle.sets, &bundle.cameras, &cfg.pipeline).map_err(CliError::usage)?;
    write_with(&layout.correspondences(), |w| write_correspondences(w, &corrs))?;
    write_json(&layout.filter_report(), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CloudSummary {
    pub points: usize,
    pub skipped: usize,
}

/// Triangulates the filtered correspondences into a PLY point cloud.
pub fn cmd_triangulate(cfg: &ExperimentConfig) -> Result<CloudSummary, CliError> {
    let layout = archive_config(cfg)?;
    let cameras = read_cameras(&layout.cameras())?;
    let corrs = read_corrs(&layout.correspondences())?;
    let cloud = triangulate_cloud(&corrs, &cameras).map_err(CliError::usage)?;
    write_with(&layout.cloud(), |w| write_ply(w, &cloud.points, &cloud.confidences))?;
    Ok(CloudSummary { points: cloud.points.len(), skipped: cloud.skipped })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainSummary {
    pub last: Option<MetricsRow>,
    pub correspondences: usize,
    pub skipped_correspondences: usize,
}

fn render_error(e: RenderError) -> CliError {
    match e {
        RenderError::NonFiniteLoss { .. } => CliError::invariant(e),
        other => CliError::usage(other),
    }
}

fn train_and_save<T: Real>(
    layout: &Layout,
    cfg: &ExperimentConfig,
    data: &corrfield::render::TrainData,
) -> Result<TrainOutcome<T>, CliError> {
    let mut csv = csv::Writer::from_writer(create(&layout.metrics())?);
    let mut write_err = None;
    let out = train_with_observer::<T>(data, &cfg.train, |row| {
        if write_err.is_none() {
            write_err = csv.serialize(row).and_then(|_| Ok(csv.flush()?)).err();
        }
    })
    .map_err(render_error)?;
    if let Some(e) = write_err {
        return Err(CliError::input(&layout.metrics(), e));
    }
    let ck = Checkpoint { params: out.params.clone(), adam: out.adam.clone(), iteration: cfg.train.iterations };
    write_with(&layout.checkpoint(), |w| ck.write(w))?;
    Ok(out)
}

/// Trains a field on the training views; writes `metrics.csv` and the
/// checkpoint. Correspondences are read when either loss weight is positive.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    let layout = archive_config(cfg)?;
    let bundle = load_bundle(&layout, false)?;
    let corrs = if cfg.train.weights().uses_correspondences() {
        let path = layout.correspondences();
        if !path.exists() {
            return Err(CliError::input(&path, "missing; run `preprocess` first or set both loss weights to 0"));
        }
        read_corrs(&path)?
    } else {
        Vec::new()
    };
    let data = bundle.train_data(&corrs);
    let (trace, skipped) = match cfg.precision {
        Precision::F32 => {
            let o = train_and_save::<f32>(&layout, cfg, &data)?;
            (o.trace, o.skipped_correspondences)
        }
        Precision::F64 => {
            let o = train_and_save::<f64>(&layout, cfg, &data)?;
            (o.trace, o.skipped_correspondences)
        }
    };
    Ok(TrainSummary { last: trace.last().cloned(), correspondences: data.correspondences.len(), skipped_correspondences: skipped })
}

/// Renders every test view from a checkpoint and scores it against the
/// ground truth; `checkpoint` defaults to the one in the output directory.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<EvalReport, CliError> {
    let layout = archive_config(cfg)?;
    let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| layout.checkpoint());
    let ck = Checkpoint::<f64>::read(open(&path)?).map_err(|e| CliError::input(&path, e))?;
    let bundle = load_bundle(&layout, false)?;
    let (near, far) = (bundle.scene.near, bundle.scene.far);
    let mut views = Vec::new();
    let (mut predicted, mut truth) = (Vec::new(), Vec::new());
    for id in bundle.test_ids() {
        let name = bundle.cameras.name(id).to_string();
        let cam = &bundle.cameras.cameras()[id];
        let out = render_image(&ck.params, cam, near, far, cfg.train.samples);
        let gt_depth = &bundle.depths[id];
        for v in 0..cam.height() {
            for u in 0..cam.width() {
                let i = (v * cam.width() + u) as usize;
                if !gt_depth.values[i].is_finite() {
                    continue;
                }
                let ray = pixel_to_ray(cam, &PixelCoord::new(u as f64, v as f64), near, far).map_err(CliError::invariant)?;
                predicted.push(ray.at(out.depth.values[i]));
                truth.push(ray.at(gt_depth.values[i]));
            }
        }
        views.push(ViewMetrics {
            psnr: psnr(&out.image, &bundle.images[id]),
            ssim: ssim(&out.image, &bundle.images[id]),
            depth_mae: depth_mae(&out.depth, gt_depth, far),
            name: name.clone(),
        });
        write_with(&layout.render(&name), |w| out.image.write_ppm(w))?;
        write_with(&layout.render_depth(&name), |w| out.depth.write_pfm(w))?;
    }
    let chamfer = (!truth.is_empty()).then(|| chamfer_l1(&predicted, &truth));
    let report = EvalReport::from_views(views, chamfer);
    write_json(&layout.eval_report(), &report)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub noise_std: f64,
    pub raw: usize,
    pub input_count: usize,
    pub after_projection_filter: usize,
    pub after_knn_filter: usize,
    pub survival_fraction: f64,
}

/// Runs synthesis and preprocessing at each `ablation_noise` level and
/// writes the survival curve to `ablation.csv`. Fails with an invariant
/// error when survival increases with noise.
pub fn cmd_ablate_noise(cfg: &ExperimentConfig) -> Result<Vec<AblationRow>, CliError> {
    let layout = archive_config(cfg)?;
    let mut rows = Vec::new();
    for &noise in &cfg.ablation_noise {
        let corruption = CorruptionSpec { pixel_noise_std: noise, ..cfg.corruption };
        corruption.validate().map_err(CliError::usage)?;
        let bundle = generate(cfg, &corruption)?;
        let (_, report) = preprocess_pipeline(&bundle.sets, &bundle.cameras, &cfg.pipeline).map_err(CliError::usage)?;
        rows.push(AblationRow {
            noise_std: noise,
            raw: bundle.sets.iter().map(|s| s.correspondences.len()).sum(),
            input_count: report.input_count,
            after_projection_filter: report.after_projection_filter,
            after_knn_filter: report.after_knn_filter,
            survival_fraction: report.survival_fraction,
        });
    }
    let mut csv = csv::Writer::from_writer(create(&layout.ablation())?);
    for r in &rows {
        csv.serialize(r).map_err(|e| CliError::input(&layout.ablation(), e))?;
    }
    csv.flush().map_err(|e| CliError::input(&layout.ablation(), e))?;
    let mut sorted: Vec<&AblationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.noise_std.total_cmp(&b.noise_std));
    if let Some(w) = sorted.windows(2).find(|w| w[1].survival_fraction > w[0].survival_fraction) {
        return Err(CliError::invariant(format!(
            "survival rose from {:.4} at {} px to {:.4} at {} px",
            w[0].survival_fraction, w[0].noise_std, w[1].survival_fraction, w[1].noise_std
        )));
    }
    Ok(rows)
}
