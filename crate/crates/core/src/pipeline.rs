// SPDX-License-Identifier: Apache-2.0

//! End-to-end run: paint and pillarize the LiDAR stream, embed, lift,
//! attend, mask and pool the camera stream, then fuse.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::detect::{propose, ProposalConfig};
use crate::error::{Error, Result};
use crate::eval::{Box3D, EvalConfig};
use crate::formats::{
    self, read_attention, read_calibration, read_cloud, read_features, read_json, read_mask_manifest, write_json,
    Calibration, CloudFile,
};
use crate::fuse::{fuse_additive, fuse_concat_conv, ConvKernel};
use crate::geometry::{CameraModel, DepthBinning};
use crate::grid::{BevGrid, BevLayout};
use crate::masks::{downscale_masks, embed_semantics, FeatureImage, InstanceMask, SemanticCombiner};
use crate::paint::{paint_points, LidarPoint, SemanticPointCloud};
use crate::pillar::{pillarize, PillarChannel, PillarSpec};
use crate::synth::{Scene, SceneCensus};
use crate::view::{
    apply_depth_attention, depth_threshold_filter, lift_mapping, semantic_mask_filter, splat_pool, DepthAttention,
    PseudoPointSet,
};

/// How camera features become BEV pseudo points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViewMode {
    #[serde(rename = "mapping")]
    Mapping,
    #[serde(rename = "attention")]
    Attention,
    #[serde(rename = "attention+semantic_mask")]
    AttentionSemanticMask,
    #[serde(rename = "attention+depth_mask")]
    AttentionDepthMask,
}

impl ViewMode {
    pub const ALL: [ViewMode; 4] = [
        ViewMode::Mapping,
        ViewMode::Attention,
        ViewMode::AttentionSemanticMask,
        ViewMode::AttentionDepthMask,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ViewMode::Mapping => "mapping",
            ViewMode::Attention => "attention",
            ViewMode::AttentionSemanticMask => "attention+semantic_mask",
            ViewMode::AttentionDepthMask => "attention+depth_mask",
        }
    }

    pub fn is_masked(&self) -> bool {
        matches!(self, ViewMode::AttentionSemanticMask | ViewMode::AttentionDepthMask)
    }
}

impl fmt::Display for ViewMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewMode::ALL.into_iter().find(|m| m.as_str() == s).ok_or_else(|| {
            Error::invalid(
                "view mode",
                format!("{s:?} is not one of mapping, attention, attention+semantic_mask, attention+depth_mask"),
            )
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FuserKind {
    ConcatConv,
    Additive,
}

impl FuserKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            FuserKind::ConcatConv => "concat_conv",
            FuserKind::Additive => "additive",
        }
    }
}

impl fmt::Display for FuserKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FuserKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat_conv" => Ok(FuserKind::ConcatConv),
            "additive" => Ok(FuserKind::Additive),
            _ => Err(Error::invalid(
                "fuser",
                format!("{s:?} is not one of concat_conv, additive"),
            )),
        }
    }
}

/// Where per-camera depth attention comes from. Ignored in mapping mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AttentionSource {
    Ones,
    Uniform,
    /// Gaussian around the nearest LiDAR return in each feature cell.
    LidarDepth {
        sigma_bins: f64,
    },
    /// `<dir>/<camera>.att` per camera.
    Files {
        dir: PathBuf,
    },
}

/// Every learned or hand-set weight the pipeline applies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Kernels {
    pub combiner: SemanticCombiner,
    pub concat: ConvKernel,
    pub additive_cam: ConvKernel,
    pub additive_lidar: ConvKernel,
}

impl Kernels {
    /// 1x1 kernels reading one response per category: camera channel `k`
    /// (where the combiner writes a one-hot) times `camera_gain` plus the
    /// LiDAR histogram channel of category `k` times `lidar_gain`. The
    /// concat and additive kernels compute the same map. Categories beyond
    /// the camera channel count are read from LiDAR only.
    pub fn category_readout(
        feature_channels: usize,
        n_categories: usize,
        pillars: &PillarSpec,
        camera_gain: f64,
        lidar_gain: f64,
    ) -> Result<Self> {
        if feature_channels == 0 || n_categories == 0 {
            return Err(Error::invalid(
                "kernels",
                "need at least one camera channel and one category",
            ));
        }
        let lidar_channels = pillars.channel_count(n_categories);
        let hist = pillars.channel_offset(PillarChannel::CategoryHistogram, n_categories);
        let mut combiner = SemanticCombiner::zeros(feature_channels, n_categories);
        let cols = n_categories + 1;
        for k in 0..n_categories.min(feature_channels) {
            combiner.weights[k * cols + k] = 1.0;
        }
        let mut cam = ConvKernel::zeros(n_categories, feature_channels, 1);
        let mut lidar = ConvKernel::zeros(n_categories, lidar_channels, 1);
        let mut concat = ConvKernel::zeros(n_categories, feature_channels + lidar_channels, 1);
        for k in 0..n_categories {
            if k < feature_channels {
                cam.set(k, k, 0, 0, camera_gain);
                concat.set(k, k, 0, 0, camera_gain);
            }
            if let Some(h) = hist {
                lidar.set(k, h + k, 0, 0, lidar_gain);
                concat.set(k, feature_channels + h + k, 0, 0, lidar_gain);
            }
        }
        Ok(Kernels {
            combiner,
            concat,
            additive_cam: cam,
            additive_lidar: lidar,
        })
    }
}

/// Run-time settings independent of where the inputs live.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSettings {
    pub n_categories: usize,
    pub mode: ViewMode,
    pub fuser: FuserKind,
    pub attention: AttentionSource,
    pub depth_bins: DepthBinning,
    pub bev: BevLayout,
    /// Semantic masking keeps foreground cells with at least this score.
    pub score_threshold: f64,
    /// Depth masking keeps bins with at least this probability.
    pub depth_threshold: f64,
    pub proposals: Option<ProposalConfig>,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings {
            n_categories: 10,
            mode: ViewMode::AttentionSemanticMask,
            fuser: FuserKind::ConcatConv,
            attention: AttentionSource::LidarDepth { sigma_bins: 1.0 },
            depth_bins: DepthBinning::default(),
            bev: BevLayout::default(),
            score_threshold: 0.0,
            depth_threshold: 0.05,
            proposals: None,
        }
    }
}

/// Input paths; relative paths resolve against the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputPaths {
    pub calibration: PathBuf,
    /// Mask manifest.
    pub masks: PathBuf,
    pub cloud: PathBuf,
    /// Directory of `<camera>.feat` files.
    pub features: PathBuf,
    pub kernels: PathBuf,
    pub pillars: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eval: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub inputs: InputPaths,
    #[serde(flatten)]
    pub settings: RunSettings,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = read_json(path)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let i = &mut cfg.inputs;
        for p in [
            &mut i.calibration,
            &mut i.masks,
            &mut i.cloud,
            &mut i.features,
            &mut i.kernels,
            &mut i.pillars,
        ] {
            fix(p);
        }
        if let Some(p) = i.eval.as_mut() {
            fix(p);
        }
        if let Some(p) = i.gt.as_mut() {
            fix(p);
        }
        if let AttentionSource::Files { dir } = &mut cfg.settings.attention {
            fix(dir);
        }
        Ok(cfg)
    }
}

/// Everything a run reads, in memory.
#[derive(Debug, Clone)]
pub struct PipelineInputs {
    pub camera_names: Vec<String>,
    pub rig: Vec<CameraModel>,
    pub masks_per_camera: Vec<Vec<InstanceMask>>,
    pub cloud: Vec<LidarPoint>,
    pub features: Vec<FeatureImage>,
    /// Per-camera attention for [`AttentionSource::Files`].
    pub attention: Option<Vec<DepthAttention>>,
    pub kernels: Kernels,
    pub pillars: PillarSpec,
}

pub fn camera_name(index: usize) -> String {
    format!("cam{index}")
}

impl PipelineInputs {
    pub fn load(cfg: &PipelineConfig) -> Result<Self> {
        let (calib, rig) = read_calibration(&cfg.inputs.calibration)?;
        let names = calib.names();
        let masks_per_camera = read_mask_manifest(&cfg.inputs.masks, &names)?;
        let cloud = read_cloud(&cfg.inputs.cloud)?.points().to_vec();
        let features = names
            .iter()
            .map(|n| read_features(&cfg.inputs.features.join(format!("{n}.feat"))))
            .collect::<Result<Vec<_>>>()?;
        let attention = match &cfg.settings.attention {
            AttentionSource::Files { dir } => Some(
                names
                    .iter()
                    .map(|n| read_attention(&dir.join(format!("{n}.att"))))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        Ok(PipelineInputs {
            camera_names: names,
            rig,
            masks_per_camera,
            cloud,
            features,
            attention,
            kernels: read_json(&cfg.inputs.kernels)?,
            pillars: read_json(&cfg.inputs.pillars)?,
        })
    }

    pub fn from_scene(scene: &Scene, kernels: Kernels, pillars: PillarSpec) -> Self {
        PipelineInputs {
            camera_names: (0..scene.rig.len()).map(camera_name).collect(),
            rig: scene.rig.clone(),
            masks_per_camera: scene.masks_per_camera.clone(),
            cloud: scene.cloud.clone(),
            features: scene.feature_images.clone(),
            attention: None,
            kernels,
            pillars,
        }
    }

    fn check(&self) -> Result<()> {
        let n = self.rig.len();
        if n == 0 {
            return Err(Error::invalid("pipeline inputs", "no cameras"));
        }
        if self.masks_per_camera.len() != n
            || self.features.len() != n
            || self.attention.as_ref().is_some_and(|a| a.len() != n)
        {
            return Err(Error::shape(format!(
                "{n} cameras but {} mask lists and {} feature images",
                self.masks_per_camera.len(),
                self.features.len()
            )));
        }
        let f0 = &self.features[0];
        if self
            .features
            .iter()
            .any(|f| f.channels() != f0.channels() || f.width() != f0.width() || f.height() != f0.height())
        {
            return Err(Error::shape("feature images differ in shape across cameras"));
        }
        Ok(())
    }
}

pub const STAGES: [&str; 9] = [
    "paint",
    "pillarize",
    "embed",
    "lift",
    "attend",
    "mask",
    "pool",
    "fuse",
    "detect",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub mode: String,
    pub fuser: String,
    pub cameras: usize,
    /// Wall seconds per stage, in [`STAGES`] order.
    pub stage_seconds: Vec<(String, f64)>,
    pub lidar_points: usize,
    pub painted_points: usize,
    pub pillar_dropped: usize,
    pub pseudo_points_lifted: usize,
    pub pseudo_points_pooled: usize,
    pub pseudo_points_out_of_extent: usize,
    /// `1 - pooled/lifted` before the extent cut.
    pub reduction: f64,
    pub foreground_fraction: f64,
    pub fused_channels: usize,
    pub fused_digest: String,
    pub detections: Option<usize>,
}

impl RunReport {
    pub fn seconds(&self, stage: &str) -> f64 {
        self.stage_seconds
            .iter()
            .find(|(s, _)| s == stage)
            .map_or(0.0, |(_, t)| *t)
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub painted: SemanticPointCloud,
    pub camera_bev: BevGrid,
    pub lidar_bev: BevGrid,
    pub fused: BevGrid,
    pub detections: Option<Vec<Box3D>>,
}

/// SHA-256 of a grid's shape, extent and f64 payload.
pub fn grid_digest(g: &BevGrid) -> String {
    let mut h = Sha256::new();
    for v in [g.channels(), g.height(), g.width()] {
        h.update((v as u64).to_le_bytes());
    }
    for v in g.layout().extent.as_array().iter().chain(g.data()) {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

struct Timer(Vec<f64>);

impl Timer {
    fn time<T>(&mut self, stage: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        self.0[stage] += t.elapsed().as_secs_f64();
        out
    }
}

fn stage_err<'a>(stage: &'static str, camera: Option<&'a str>) -> impl Fn(Error) -> Error + 'a {
    move |e| {
        let reason = match camera {
            Some(c) => format!("{c}: {e}"),
            None => e.to_string(),
        };
        Error::Invalid { what: stage, reason }
    }
}

pub fn run(settings: &RunSettings, inputs: &PipelineInputs) -> Result<RunOutput> {
    inputs.check()?;
    settings.depth_bins.validate()?;
    settings.bev.validate()?;
    let mut timer = Timer(vec![0.0; STAGES.len()]);
    let n_cat = settings.n_categories;

    let painted = timer.time(0, || {
        paint_points(&inputs.cloud, &inputs.rig, &inputs.masks_per_camera, n_cat)
            .map_err(stage_err("paint stage", None))
    })?;
    let pillars = timer.time(1, || {
        pillarize(&painted, &inputs.pillars).map_err(stage_err("pillarize stage", None))
    })?;

    let (fw, fh) = (inputs.features[0].width(), inputs.features[0].height());
    let channels = inputs.kernels.combiner.out_channels;
    let mut sets = Vec::with_capacity(inputs.rig.len());
    let mut lifted = 0;
    let mut fg = 0.0;
    for (ci, cam) in inputs.rig.iter().enumerate() {
        let name = inputs.camera_names.get(ci).map(String::as_str);
        let sem = timer.time(2, || {
            downscale_masks(&inputs.masks_per_camera[ci], fw, fh).map_err(stage_err("embed stage", name))
        })?;
        fg += sem.foreground_fraction();
        let embedded = timer.time(2, || {
            embed_semantics(&inputs.features[ci], &sem, &inputs.kernels.combiner)
                .map_err(stage_err("embed stage", name))
        })?;
        let pp = timer.time(3, || {
            lift_mapping(&embedded, cam, ci as u16, &settings.depth_bins).map_err(stage_err("lift stage", name))
        })?;
        lifted += pp.len();
        let pp = if settings.mode == ViewMode::Mapping {
            pp
        } else {
            let att = timer.time(4, || {
                attention_for(settings, inputs, ci, fw, fh).map_err(stage_err("attend stage", name))
            })?;
            let pp = timer.time(4, || {
                apply_depth_attention(pp, &att).map_err(stage_err("attend stage", name))
            })?;
            timer.time(5, || {
                match settings.mode {
                    ViewMode::AttentionSemanticMask => semantic_mask_filter(pp, &sem, settings.score_threshold),
                    ViewMode::AttentionDepthMask => depth_threshold_filter(pp, &att, settings.depth_threshold),
                    _ => Ok(pp),
                }
                .map_err(stage_err("mask stage", name))
            })?
        };
        sets.push(pp);
    }
    let merged = PseudoPointSet::merge(sets)?;
    let pooled = merged.len();
    let splat = timer.time(6, || {
        splat_pool(&merged, &settings.bev, channels).map_err(stage_err("pool stage", None))
    })?;
    drop(merged);

    let camera_bev = splat.grid;
    let lidar_bev = pillars.grid;
    let fused = timer.time(7, || {
        match settings.fuser {
            FuserKind::ConcatConv => fuse_concat_conv(&camera_bev, &lidar_bev, &inputs.kernels.concat),
            FuserKind::Additive => fuse_additive(
                &camera_bev,
                &lidar_bev,
                &inputs.kernels.additive_cam,
                &inputs.kernels.additive_lidar,
            ),
        }
        .map_err(stage_err("fuse stage", None))
    })?;
    let detections = match &settings.proposals {
        Some(p) => Some(timer.time(8, || propose(&fused, p).map_err(stage_err("detect stage", None)))?),
        None => None,
    };

    for (stage, secs) in STAGES.iter().zip(&timer.0) {
        log::debug!("stage {stage}: {:.3} ms", secs * 1e3);
    }
    let report = RunReport {
        mode: settings.mode.to_string(),
        fuser: settings.fuser.to_string(),
        cameras: inputs.rig.len(),
        stage_seconds: STAGES.iter().map(|s| s.to_string()).zip(timer.0).collect(),
        lidar_points: painted.len(),
        painted_points: painted.painted_count(),
        pillar_dropped: pillars.dropped,
        pseudo_points_lifted: lifted,
        pseudo_points_pooled: pooled,
        pseudo_points_out_of_extent: splat.dropped,
        reduction: if lifted == 0 {
            0.0
        } else {
            1.0 - pooled as f64 / lifted as f64
        },
        foreground_fraction: fg / inputs.rig.len() as f64,
        fused_channels: fused.channels(),
        fused_digest: grid_digest(&fused),
        detections: detections.as_ref().map(Vec::len),
    };
    Ok(RunOutput {
        report,
        painted,
        camera_bev,
        lidar_bev,
        fused,
        detections,
    })
}

fn attention_for(
    settings: &RunSettings,
    inputs: &PipelineInputs,
    cam: usize,
    fw: u32,
    fh: u32,
) -> Result<DepthAttention> {
    let n = settings.depth_bins.count;
    match &settings.attention {
        AttentionSource::Ones => DepthAttention::ones(fw, fh, n),
        AttentionSource::Uniform => DepthAttention::uniform(fw, fh, n),
        AttentionSource::LidarDepth { sigma_bins } => DepthAttention::from_lidar_depth(
            &inputs.cloud,
            &inputs.rig[cam],
            fw,
            fh,
            &settings.depth_bins,
            *sigma_bins,
        ),
        AttentionSource::Files { .. } => inputs
            .attention
            .as_ref()
            .map(|a| a[cam].clone())
            .ok_or_else(|| Error::invalid("attention", "file attention requested but none loaded")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub median: f64,
    pub p95: f64,
}

impl Timing {
    /// Median (mean of the middle pair for even counts) and nearest-rank p95.
    pub fn of(samples: &[f64]) -> Timing {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            0.5 * (s[n / 2 - 1] + s[n / 2])
        };
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Timing {
            median,
            p95: s[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageBench {
    pub stage: String,
    pub unmasked: Timing,
    pub masked: Timing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub repetitions: usize,
    pub masked_mode: String,
    pub stages: Vec<StageBench>,
    pub unmasked_pooled: usize,
    pub masked_pooled: usize,
    pub pooled_ratio: f64,
    /// Pooled pseudo points per second of median pooling time.
    pub unmasked_throughput: f64,
    pub masked_throughput: f64,
}

pub const MIN_BENCH_REPETITIONS: usize = 3;

/// Times `repetitions` unmasked (`attention`) and masked runs. The masked
/// mode is the configured one when it masks, else semantic masking.
pub fn bench(settings: &RunSettings, inputs: &PipelineInputs, repetitions: usize) -> Result<BenchReport> {
    if repetitions < MIN_BENCH_REPETITIONS {
        return Err(Error::invalid(
            "repetitions",
            format!("need at least {MIN_BENCH_REPETITIONS}, got {repetitions}"),
        ));
    }
    let masked_mode = if settings.mode.is_masked() {
        settings.mode
    } else {
        ViewMode::AttentionSemanticMask
    };
    let base = RunSettings {
        proposals: None,
        ..settings.clone()
    };
    let unmasked_cfg = RunSettings {
        mode: ViewMode::Attention,
        ..base.clone()
    };
    let masked_cfg = RunSettings {
        mode: masked_mode,
        ..base
    };
    let mut reports = (Vec::new(), Vec::new());
    for _ in 0..repetitions {
        reports.0.push(run(&unmasked_cfg, inputs)?.report);
        reports.1.push(run(&masked_cfg, inputs)?.report);
    }
    let times = |rs: &[RunReport], stage: &str| Timing::of(&rs.iter().map(|r| r.seconds(stage)).collect::<Vec<_>>());
    let stages = STAGES[..8]
        .iter()
        .map(|s| StageBench {
            stage: s.to_string(),
            unmasked: times(&reports.0, s),
            masked: times(&reports.1, s),
        })
        .collect();
    let (u, m) = (reports.0[0].pseudo_points_pooled, reports.1[0].pseudo_points_pooled);
    let tput = |n: usize, t: Timing| {
        if t.median > 0.0 {
            n as f64 / t.median
        } else {
            f64::INFINITY
        }
    };
    Ok(BenchReport {
        repetitions,
        masked_mode: masked_mode.to_string(),
        stages,
        unmasked_pooled: u,
        masked_pooled: m,
        pooled_ratio: if u == 0 { 0.0 } else { m as f64 / u as f64 },
        unmasked_throughput: tput(u, times(&reports.0, "pool")),
        masked_throughput: tput(m, times(&reports.1, "pool")),
    })
}

/// Scene metadata written next to the scene files.
#[derive(Debug, Clone, Serialize)]
pub struct SceneSummary<'a> {
    pub config: &'a crate::synth::SceneConfig,
    pub census: SceneCensus,
    pub digest: String,
}

/// Writes a scene as pipeline inputs plus a ready-to-run `pipeline.json`.
/// Returns the census.
pub fn write_scene(dir: &Path, scene: &Scene, settings: &RunSettings) -> Result<SceneCensus> {
    let names: Vec<String> = (0..scene.rig.len()).map(camera_name).collect();
    let calib = Calibration::from_rig(&scene.rig, camera_name);
    formats::write_calibration(&dir.join("calibration.json"), &calib)?;
    formats::write_cloud(&dir.join("cloud.bin"), &CloudFile::Raw(scene.cloud.clone()))?;
    formats::write_mask_manifest(&dir.join("masks").join("manifest.txt"), &names, &scene.masks_per_camera)?;
    for (n, f) in names.iter().zip(&scene.feature_images) {
        formats::write_features(&dir.join("features").join(format!("{n}.feat")), f)?;
    }
    formats::write_boxes(&dir.join("gt.txt"), &scene.gt_boxes)?;
    let n_cat = scene.n_categories();
    let pillars = PillarSpec {
        extent: settings.bev.extent,
        height: settings.bev.height,
        width: settings.bev.width,
        ..PillarSpec::default()
    };
    let kernels = Kernels::category_readout(scene.config.feature_channels, n_cat, &pillars, DEFAULT_CAMERA_GAIN, 1.0)?;
    write_json(&dir.join("kernels.json"), &kernels)?;
    write_json(&dir.join("pillars.json"), &pillars)?;
    write_json(&dir.join("eval.json"), &EvalConfig::default())?;
    let cfg = PipelineConfig {
        inputs: InputPaths {
            calibration: "calibration.json".into(),
            masks: "masks/manifest.txt".into(),
            cloud: "cloud.bin".into(),
            features: "features".into(),
            kernels: "kernels.json".into(),
            pillars: "pillars.json".into(),
            eval: Some("eval.json".into()),
            gt: Some("gt.txt".into()),
        },
        settings: RunSettings {
            n_categories: n_cat,
            ..settings.clone()
        },
    };
    write_json(&dir.join("pipeline.json"), &cfg)?;
    let census = scene.census()?;
    write_json(
        &dir.join("scene.json"),
        &SceneSummary {
            config: &scene.config,
            census: census.clone(),
            digest: scene.digest(),
        },
    )?;
    Ok(census)
}

/// Camera weight in the default category readout.
pub const DEFAULT_CAMERA_GAIN: f64 = 0.05;

/// Settings used for synthetic scenes: semantic masking, concat fuser,
/// LiDAR-derived attention and threshold-cluster proposals.
pub fn synthetic_settings(n_categories: usize) -> RunSettings {
    RunSettings {
        n_categories,
        proposals: Some(ProposalConfig {
            n_categories,
            ..ProposalConfig::default()
        }),
        ..RunSettings::default()
    }
}
