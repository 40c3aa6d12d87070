//! The progressive training pipeline: filtering, scheduling, Adam updates,
//! ADC, snapshots, and the baseline/ablation modes.
//!
//! One run fits one image. Frequency-modulated runs optimize against
//! low-pass-filtered copies of the target whose kernel size follows the
//! schedule; the baseline trains on the original image from iteration 0, and
//! the resolution-pyramid mode substitutes downsample-then-upsample targets at
//! scale factors matched to the kernel sizes (a size-15 blur is roughly 1/8
//! resolution), keeping loss dimensions constant.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

use crate::adc::{densify_and_prune, reset_opacity, AdcConfig, MutationReport};
use crate::freq_filter::{filter_image, FilterError, FilterKind};
use crate::imaging::{
    downsample_box, psnr, save_image, upsample_bilinear, ImageBuffer, ImagingError, MetricsRecord,
    SsimTargetCtx,
};
use crate::schedule::{FrequencySchedule, ScheduleError};
use crate::snapshot::{save_snapshot, SnapshotError, SnapshotMeta, SNAPSHOT_VERSION};
use crate::splat::{
    logit, render, render_backward, Gaussian2D, GaussianSet, LossConfig, LossTarget, RenderOptions,
    PARAM_COUNT,
};

// RNG stream ids; all randomness flows from the one run seed.
const STREAM_INIT: u64 = 1;
const STREAM_ADC: u64 = 2;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("init_count {0} exceeds pixel count {1}")]
    InitCountTooLarge(usize, usize),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error(transparent)]
    Imaging(#[from] ImagingError),
    #[error(transparent)]
    Snapshot(#[from] SnapshotError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Baseline,
    FreqModulated,
    ResolutionPyramid,
}

impl TrainMode {
    pub fn name(&self) -> &'static str {
        match self {
            TrainMode::Baseline => "baseline",
            TrainMode::FreqModulated => "freq_modulated",
            TrainMode::ResolutionPyramid => "resolution_pyramid",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "baseline" => Some(TrainMode::Baseline),
            "freq_modulated" => Some(TrainMode::FreqModulated),
            "resolution_pyramid" => Some(TrainMode::ResolutionPyramid),
            _ => None,
        }
    }
}

/// Per-group learning rates. The position rate is multiplied by the image
/// diagonal at run time and decays exponentially to 1/100 of its initial
/// value over the run; the others are constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearningRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub raw_opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        LearningRates {
            position: 1.6e-4,
            log_scale: 1e-2,
            rotation: 1e-3,
            raw_opacity: 5e-2,
            color: 2.5e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub total_iterations: u64,
    pub schedule: FrequencySchedule,
    pub adc: AdcConfig,
    pub lr: LearningRates,
    pub init_count: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub loss: LossConfig,
    pub background: [f64; 3],
    pub metrics_interval: u64,
    pub render_opts: RenderOptions,
    /// Ratio of final to initial position learning rate.
    pub position_lr_decay: f64,
    pub opacity_reset_ceiling: f64,
    /// Zero the Adam moments at level transitions. Off by default: each level
    /// warm-starts from the previous set, and that continuity extends to the
    /// optimizer state.
    pub reset_moments_on_level_change: bool,
}

impl TrainConfig {
    pub fn new(schedule: FrequencySchedule, mode: TrainMode, seed: u64) -> Self {
        TrainConfig {
            total_iterations: schedule.total_iterations(),
            schedule,
            adc: AdcConfig::default(),
            lr: LearningRates::default(),
            init_count: 1000,
            seed,
            mode,
            loss: LossConfig::default(),
            background: [0.0; 3],
            metrics_interval: 100,
            render_opts: RenderOptions::default(),
            position_lr_decay: 0.01,
            opacity_reset_ceiling: 0.01,
            reset_moments_on_level_change: false,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.total_iterations != self.schedule.total_iterations() {
            return Err(TrainError::InvalidConfig(format!(
                "total_iterations {} disagrees with the schedule's {}",
                self.total_iterations,
                self.schedule.total_iterations()
            )));
        }
        if self.total_iterations < self.schedule.cutoff_iteration() {
            return Err(TrainError::InvalidConfig(
                "total_iterations must cover the schedule cutoff".into(),
            ));
        }
        for (name, v) in [
            ("position", self.lr.position),
            ("log_scale", self.lr.log_scale),
            ("rotation", self.lr.rotation),
            ("raw_opacity", self.lr.raw_opacity),
            ("color", self.lr.color),
        ] {
            if !(v > 0.0) {
                return Err(TrainError::InvalidConfig(format!("learning rate {name} must be > 0")));
            }
        }
        if self.init_count < 1 {
            return Err(TrainError::InvalidConfig("init_count must be >= 1".into()));
        }
        if self.metrics_interval < 1 {
            return Err(TrainError::InvalidConfig("metrics_interval must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.loss.lambda_ssim) {
            return Err(TrainError::InvalidConfig("loss lambda must be in [0,1]".into()));
        }
        self.adc.validate().map_err(TrainError::InvalidConfig)
    }
}

/// One saved level-of-detail model.
#[derive(Debug, Clone)]
pub struct SnapshotData {
    pub iteration: u64,
    pub level: u8,
    pub kernel_size: usize,
    pub gaussians: Vec<Gaussian2D>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<MetricsRecord>,
    pub events: Vec<(u64, MutationReport)>,
    pub snapshots: Vec<SnapshotData>,
    pub final_set: GaussianSet,
    /// Total wall time of the optimization loop, seconds.
    pub wall_time: f64,
}

impl RunResult {
    pub fn final_metrics(&self) -> &MetricsRecord {
        self.metrics.last().expect("runs always record final metrics")
    }
}

/// The 2D stand-in for SfM initialization: `init_count` distinct pixels
/// sampled uniformly at random, each seeding a Gaussian at that pixel center
/// with the pixel's color, isotropic scale diagonal/sqrt(init_count), opacity
/// 0.1 and a random depth key.
pub fn initialize(target: &ImageBuffer, init_count: usize, seed: u64) -> Result<GaussianSet, TrainError> {
    if init_count < 1 {
        return Err(TrainError::InvalidConfig("init_count must be >= 1".into()));
    }
    if init_count > target.pixel_count() {
        return Err(TrainError::InitCountTooLarge(init_count, target.pixel_count()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_INIT);

    // Partial Fisher-Yates over pixel indices: uniform without replacement.
    let n = target.pixel_count();
    let mut indices: Vec<u32> = (0..n as u32).collect();
    let scale = (target.diagonal() / (init_count as f64).sqrt()).ln();
    let raw_opacity = logit(0.1);
    let mut set = GaussianSet::new();
    for i in 0..init_count {
        let j = rng.gen_range(i..n);
        indices.swap(i, j);
        let pix = indices[i] as usize;
        let (x, y) = (pix % target.width(), pix / target.width());
        let creation_index = set.next_creation_index();
        set.push(Gaussian2D {
            position: nalgebra::Vector2::new(x as f64 + 0.5, y as f64 + 0.5),
            log_scale: nalgebra::Vector2::new(scale, scale),
            rotation: 0.0,
            raw_opacity,
            color: target.get(x, y),
            depth_key: rng.gen(),
            creation_index,
        });
    }
    Ok(set)
}

/// The training target in effect at an iteration, per mode. Pure function of
/// (original, schedule, mode, iteration); the trainer caches the results.
pub fn modulated_target(
    original: &ImageBuffer,
    schedule: &FrequencySchedule,
    mode: TrainMode,
    iteration: u64,
) -> Result<ImageBuffer, FilterError> {
    match mode {
        TrainMode::Baseline => Ok(original.clone()),
        TrainMode::FreqModulated => {
            let size = schedule.kernel_size_at(iteration);
            filter_image(original, schedule.filter(), size)
        }
        TrainMode::ResolutionPyramid => {
            let factor = pyramid_factor(schedule, iteration);
            if factor <= 1 {
                Ok(original.clone())
            } else {
                let down = downsample_box(original, factor);
                Ok(upsample_bilinear(&down, original.width(), original.height()))
            }
        }
    }
}

/// Scale factor for the resolution-pyramid baseline: 8, 4, 2, 1 over the
/// filtered intervals (halving per level), then full resolution.
pub fn pyramid_factor(schedule: &FrequencySchedule, iteration: u64) -> usize {
    let level = schedule.level_at(iteration); // 1-based
    let intervals = schedule.level_count() - 1;
    if level > intervals {
        1
    } else {
        1usize << (intervals - level).min(20)
    }
}

const LOG_SCALE_MIN: f64 = -4.0;
const RAW_OPACITY_CLAMP: f64 = 12.0;
const COLOR_PARAM_MIN: f64 = -0.5;
const COLOR_PARAM_MAX: f64 = 1.5;

struct Adam {
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
}

impl Adam {
    fn new() -> Self {
        Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-15, step: 0 }
    }

    /// One update over every parameter of every Gaussian. `lrs` maps the
    /// parameter index to its group learning rate. Parameter clamps keep the
    /// forward pass numerically sane; they do not feed back into gradients.
    fn step(&mut self, set: &mut GaussianSet, grads: &[crate::splat::ParamGrads], lrs: &[f64; PARAM_COUNT], log_scale_max: f64) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, g) in grads.iter().enumerate() {
            let state = &mut set.optimizer_state[i];
            let gaussian = &mut set.gaussians[i];
            for p in 0..PARAM_COUNT {
                let grad = g.0[p];
                let m = self.beta1 * state.m[p] + (1.0 - self.beta1) * grad;
                let v = self.beta2 * state.v[p] + (1.0 - self.beta2) * grad * grad;
                state.m[p] = m;
                state.v[p] = v;
                let update = lrs[p] * (m / bc1) / ((v / bc2).sqrt() + self.epsilon);
                let value = gaussian.param_mut(p);
                *value -= update;
                match p {
                    2 | 3 => *value = value.clamp(LOG_SCALE_MIN, log_scale_max),
                    5 => *value = value.clamp(-RAW_OPACITY_CLAMP, RAW_OPACITY_CLAMP),
                    6..=8 => *value = value.clamp(COLOR_PARAM_MIN, COLOR_PARAM_MAX),
                    _ => {}
                }
            }
        }
    }
}

/// Train a Gaussian set against one image per the configured mode.
pub fn train(target: &ImageBuffer, cfg: &TrainConfig) -> Result<RunResult, TrainError> {
    cfg.validate()?;
    let start = Instant::now();
    let extent = target.diagonal();
    let width = target.width();
    let height = target.height();

    let mut set = initialize(target, cfg.init_count, cfg.seed)?;
    let mut adc_rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    adc_rng.set_stream(STREAM_ADC);

    // Quality metrics are always measured against the unfiltered original.
    let eval_ssim = SsimTargetCtx::new(target)?;

    // Training targets, cached per (mode-specific) modulation key.
    let mut targets: HashMap<u64, LossTarget> = HashMap::new();
    let target_key = |iteration: u64| -> u64 {
        match cfg.mode {
            TrainMode::Baseline => 0,
            TrainMode::FreqModulated => cfg.schedule.kernel_size_at(iteration) as u64,
            TrainMode::ResolutionPyramid => pyramid_factor(&cfg.schedule, iteration) as u64,
        }
    };

    let snapshot_iters = cfg.schedule.snapshot_iterations();
    let mut adam = Adam::new();
    let pos_lr_base = cfg.lr.position * extent;
    let log_scale_max = extent.ln();

    let mut metrics = Vec::new();
    let mut events = Vec::new();
    let mut snapshots = Vec::new();
    let mut last_level = 0usize;

    for it in 0..cfg.total_iterations {
        let key = target_key(it);
        if !targets.contains_key(&key) {
            let img = modulated_target(target, &cfg.schedule, cfg.mode, it)?;
            targets.insert(key, LossTarget::new(img)?);
        }
        let loss_target = &targets[&key];

        let level = match cfg.mode {
            TrainMode::Baseline => cfg.schedule.level_count(),
            _ => cfg.schedule.level_at(it),
        };
        if cfg.reset_moments_on_level_change && level != last_level && last_level != 0 {
            for st in &mut set.optimizer_state {
                *st = Default::default();
            }
        }
        last_level = level;

        let backward = render_backward(&mut set, loss_target, &cfg.loss, cfg.background, &cfg.render_opts);

        // Per-group learning rates; position decays exponentially.
        let pos_lr = pos_lr_base * cfg.position_lr_decay.powf(it as f64 / cfg.total_iterations as f64);
        let lrs: [f64; PARAM_COUNT] = [
            pos_lr,
            pos_lr,
            cfg.lr.log_scale,
            cfg.lr.log_scale,
            cfg.lr.rotation,
            cfg.lr.raw_opacity,
            cfg.lr.color,
            cfg.lr.color,
            cfg.lr.color,
        ];
        adam.step(&mut set, &backward.grads, &lrs, log_scale_max);

        // Density control and opacity resets run inside the densification
        // window, like the reference trainer.
        if it > 0 && it < cfg.adc.densify_until_iteration {
            if it % cfg.adc.densification_interval == 0 {
                if std::env::var_os("FREQSPLAT_DEBUG_ADC").is_some() {
                    let mut norms: Vec<f64> = (0..set.len()).map(|i| set.mean_grad_norm(i)).collect();
                    norms.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let pct = |p: f64| norms[((p * (norms.len() - 1) as f64) as usize).min(norms.len() - 1)];
                    eprintln!(
                        "[adc] iter {it} n {} p50 {:.2e} p80 {:.2e} p90 {:.2e} p99 {:.2e} thr {:.2e}",
                        set.len(), pct(0.5), pct(0.8), pct(0.9), pct(0.99), cfg.adc.densify_grad_threshold
                    );
                }
                let report = densify_and_prune(&mut set, &cfg.adc, extent, &mut adc_rng);
                events.push((it, report));
            }
            if cfg.adc.opacity_reset_interval > 0 && it % cfg.adc.opacity_reset_interval == 0 {
                reset_opacity(&mut set, cfg.opacity_reset_ceiling);
            }
        }

        let snapshot_due = snapshot_iters.binary_search(&it).is_ok();
        if it % cfg.metrics_interval == 0 || snapshot_due {
            // Measure the post-update state against the original image.
            let rendered = render(&set, width, height, cfg.background, &cfg.render_opts);
            let p = psnr(&rendered.image, target)?;
            let s = eval_ssim.ssim(&rendered.image)?;
            metrics.push(MetricsRecord {
                iteration: it,
                psnr: p,
                ssim: s,
                gaussian_count: set.len(),
                peak_gaussian_count: set.peak_count,
                wall_time: start.elapsed().as_secs_f64(),
                level: level as u8,
            });
            if snapshot_due {
                let keep = match cfg.mode {
                    // The baseline has no levels; only the final model is kept.
                    TrainMode::Baseline => it == cfg.total_iterations - 1,
                    _ => true,
                };
                if keep {
                    snapshots.push(SnapshotData {
                        iteration: it,
                        level: level as u8,
                        kernel_size: cfg.schedule.kernel_size_at(it),
                        gaussians: set.gaussians.clone(),
                    });
                }
            }
        }
    }

    Ok(RunResult {
        metrics,
        events,
        snapshots,
        final_set: set,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Write a run's outputs: metrics/timing/events CSVs, snapshot binaries with
/// sidecars, and a rendered PNG per snapshot.
pub fn write_run_outputs(
    dir: &Path,
    target: &ImageBuffer,
    cfg: &TrainConfig,
    result: &RunResult,
) -> Result<(), TrainError> {
    fs::create_dir_all(dir)?;

    let mut metrics_csv = String::from(MetricsRecord::CSV_HEADER);
    metrics_csv.push('\n');
    let mut timing_csv = String::from("iteration,wall_time_s\n");
    for rec in &result.metrics {
        metrics_csv.push_str(&rec.csv_row());
        metrics_csv.push('\n');
        timing_csv.push_str(&format!("{},{:.6}\n", rec.iteration, rec.wall_time));
    }
    fs::write(dir.join("metrics.csv"), metrics_csv)?;
    fs::write(dir.join("timing.csv"), timing_csv)?;

    let mut events_csv = String::from(MutationReport::CSV_HEADER);
    events_csv.push('\n');
    for (it, report) in &result.events {
        events_csv.push_str(&report.csv_row(*it));
        events_csv.push('\n');
    }
    fs::write(dir.join("events.csv"), events_csv)?;

    for snap in &result.snapshots {
        let base = dir.join(format!("snapshot_l{}_{:07}.bin", snap.level, snap.iteration));
        let meta = SnapshotMeta {
            format_version: SNAPSHOT_VERSION,
            iteration: snap.iteration,
            level: snap.level,
            kernel_size: snap.kernel_size,
            width: target.width(),
            height: target.height(),
            background: cfg.background,
            seed: cfg.seed,
            mode: cfg.mode.name().to_string(),
            gaussian_count: snap.gaussians.len(),
            peak_count: result.final_set.peak_count,
        };
        save_snapshot(&snap.gaussians, &meta, &base)?;
        let set = GaussianSet::from_gaussians(snap.gaussians.clone());
        let rendered = render(&set, target.width(), target.height(), cfg.background, &cfg.render_opts);
        save_image(&rendered.image, base.with_extension("png"))?;
    }

    let summary = serde_json::json!({
        "mode": cfg.mode.name(),
        "seed": cfg.seed,
        "total_iterations": cfg.total_iterations,
        "final_gaussian_count": result.final_set.len(),
        "peak_gaussian_count": result.final_set.peak_count,
        "final_psnr": result.final_metrics().psnr,
        "final_ssim": result.final_metrics().ssim,
        "wall_time_s": result.wall_time,
        "metrics_note": "psnr/ssim measured against the unfiltered target",
    });
    let summary_json =
        serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(dir.join("run_summary.json"), summary_json)?;
    Ok(())
}

/// Summary row of one run inside a comparison report.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub label: String,
    pub final_count: usize,
    pub peak_count: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub wall_time: f64,
}

impl RunSummary {
    fn from_result(label: &str, r: &RunResult) -> Self {
        let m = r.final_metrics();
        RunSummary {
            label: label.to_string(),
            final_count: m.gaussian_count,
            peak_count: m.peak_gaussian_count,
            psnr: m.psnr,
            ssim: m.ssim,
            wall_time: r.wall_time,
        }
    }
}

/// Paired A/B report: both runs plus percentage deltas (B relative to A).
#[derive(Debug, Clone)]
pub struct ComparisonReport {
    pub a: RunSummary,
    pub b: RunSummary,
    pub result_a: RunResult,
    pub result_b: RunResult,
}

impl ComparisonReport {
    pub const CSV_HEADER: &'static str =
        "label,final_gaussians,peak_gaussians,psnr,ssim,wall_time_s";

    fn pct(a: f64, b: f64) -> f64 {
        if a == 0.0 {
            0.0
        } else {
            (b - a) / a * 100.0
        }
    }

    /// Header, one row per run, one delta row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for s in [&self.a, &self.b] {
            out.push_str(&format!(
                "{},{},{},{:.6},{:.8},{:.3}\n",
                s.label, s.final_count, s.peak_count, s.psnr, s.ssim, s.wall_time
            ));
        }
        out.push_str(&format!(
            "delta_pct,{:.3},{:.3},{:.3},{:.3},{:.3}\n",
            Self::pct(self.a.final_count as f64, self.b.final_count as f64),
            Self::pct(self.a.peak_count as f64, self.b.peak_count as f64),
            Self::pct(self.a.psnr, self.b.psnr),
            Self::pct(self.a.ssim, self.b.ssim),
            Self::pct(self.a.wall_time, self.b.wall_time),
        ));
        out
    }
}

/// Run two configurations against the same target and report them side by
/// side with percentage deltas.
pub fn compare(
    target: &ImageBuffer,
    label_a: &str,
    cfg_a: &TrainConfig,
    label_b: &str,
    cfg_b: &TrainConfig,
) -> Result<ComparisonReport, TrainError> {
    let result_a = train(target, cfg_a)?;
    let result_b = train(target, cfg_b)?;
    Ok(ComparisonReport {
        a: RunSummary::from_result(label_a, &result_a),
        b: RunSummary::from_result(label_b, &result_b),
        result_a,
        result_b,
    })
}

/// The ablation grid: one run per (family, filter, kernel size) cell.
#[derive(Debug, Clone)]
pub struct AblationGrid {
    pub families: Vec<crate::schedule::ScheduleFamily>,
    pub filters: Vec<FilterKind>,
    pub kernel_sizes: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub family: crate::schedule::ScheduleFamily,
    pub filter: FilterKind,
    pub kernel_size: usize,
    pub seed: u64,
    pub summary: RunSummary,
}

pub const ABLATION_CSV_HEADER: &str =
    "family,filter,kernel_size,seed,final_gaussians,peak_gaussians,psnr,ssim,wall_time_s";

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from(ABLATION_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.8},{:.3}\n",
            r.family.name(),
            r.filter.name(),
            r.kernel_size,
            r.seed,
            r.summary.final_count,
            r.summary.peak_count,
            r.summary.psnr,
            r.summary.ssim,
            r.summary.wall_time
        ));
    }
    out
}

/// Build the per-cell config for one ablation grid cell.
pub fn ablation_cell_config(
    base: &TrainConfig,
    family: crate::schedule::ScheduleFamily,
    filter: FilterKind,
    kernel_size: usize,
) -> Result<TrainConfig, TrainError> {
    let schedule = FrequencySchedule::new(
        family,
        filter,
        kernel_size,
        base.schedule.cutoff_iteration(),
        base.schedule.total_iterations(),
        base.schedule.level_boundaries().to_vec(),
        None,
    )?;
    let mut cfg = base.clone();
    cfg.schedule = schedule;
    cfg.mode = TrainMode::FreqModulated;
    Ok(cfg)
}

/// Run the full grid with a shared seed, one row per cell.
pub fn ablate(
    target: &ImageBuffer,
    grid: &AblationGrid,
    base: &TrainConfig,
) -> Result<Vec<AblationRow>, TrainError> {
    if grid.families.is_empty() || grid.filters.is_empty() || grid.kernel_sizes.is_empty() {
        return Err(TrainError::InvalidConfig("ablation grid must be non-empty".into()));
    }
    let mut rows = Vec::new();
    for &family in &grid.families {
        for &filter in &grid.filters {
            for &kernel_size in &grid.kernel_sizes {
                let cfg = ablation_cell_config(base, family, filter, kernel_size)?;
                let result = train(target, &cfg)?;
                let label = format!("{}/{}/{}", family.name(), filter.name(), kernel_size);
                rows.push(AblationRow {
                    family,
                    filter,
                    kernel_size,
                    seed: cfg.seed,
                    summary: RunSummary::from_result(&label, &result),
                });
            }
        }
    }
    Ok(rows)
}
