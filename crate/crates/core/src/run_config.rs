//! Flat key=value run configuration files.
//!
//! The format is one `key = value` pair per line with dots as section
//! separators (`schedule.family = step`), `#` comments, and blank lines
//! ignored. Override flags map directly onto the same keys. Files start with
//! `config_version = 1`; every run emits a resolved config capturing all
//! effective values, and re-running from that file reproduces the run.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::adc::AdcConfig;
use crate::freq_filter::FilterKind;
use crate::schedule::{FrequencySchedule, ScheduleFamily};
use crate::splat::{LossConfig, RenderOptions};
use crate::trainer::{LearningRates, TrainConfig, TrainMode};

pub const CONFIG_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key = value`, got {1:?}")]
    BadLine(usize, String),
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("key {0}: {1}")]
    BadValue(String, String),
    #[error("unsupported config_version {0} (expected {CONFIG_VERSION})")]
    BadVersion(u64),
    #[error("invalid override {0:?}: expected key=value")]
    BadOverride(String),
    #[error("config rejected: {0}")]
    Invalid(String),
}

const KNOWN_KEYS: &[&str] = &[
    "config_version",
    "mode",
    "seed",
    "total_iterations",
    "init_count",
    "metrics_interval",
    "background",
    "loss.lambda_ssim",
    "lr.position",
    "lr.log_scale",
    "lr.rotation",
    "lr.raw_opacity",
    "lr.color",
    "position_lr_decay",
    "opacity_reset_ceiling",
    "reset_moments_on_level_change",
    "schedule.family",
    "schedule.filter",
    "schedule.initial_kernel",
    "schedule.cutoff_iteration",
    "schedule.level_boundaries",
    "schedule.step_sizes",
    "filter.gaussian_sigma",
    "filter.sigma_spatial",
    "filter.sigma_range",
    "adc.densification_interval",
    "adc.densify_grad_threshold",
    "adc.prune_opacity_threshold",
    "adc.split_scale_threshold",
    "adc.opacity_reset_interval",
    "adc.densify_until_iteration",
    "adc.split_children",
    "adc.split_scale_shrink",
    "render.cull_sigma",
    "render.transmittance_floor",
];

/// Parse the flat text into a key -> value map (later entries win).
pub fn parse_flat(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::BadLine(i + 1, raw.to_string()));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Apply `key=value` override strings on top of a parsed map.
pub fn apply_overrides(
    map: &mut BTreeMap<String, String>,
    overrides: &[String],
) -> Result<(), ConfigError> {
    for o in overrides {
        let Some((key, value)) = o.split_once('=') else {
            return Err(ConfigError::BadOverride(o.clone()));
        };
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key));
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(())
}

fn get_parsed<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
    default: T,
) -> Result<T, ConfigError> {
    match map.get(key) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ConfigError::BadValue(key.into(), format!("cannot parse {v:?}"))),
    }
}

fn get_list<T: std::str::FromStr>(
    map: &BTreeMap<String, String>,
    key: &str,
) -> Result<Option<Vec<T>>, ConfigError> {
    match map.get(key) {
        None => Ok(None),
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse())
            .collect::<Result<Vec<T>, _>>()
            .map(Some)
            .map_err(|_| ConfigError::BadValue(key.into(), format!("cannot parse list {v:?}"))),
    }
}

/// Build the full training configuration; missing keys take their defaults.
pub fn build_train_config(map: &BTreeMap<String, String>) -> Result<TrainConfig, ConfigError> {
    let version: u64 = get_parsed(map, "config_version", CONFIG_VERSION)?;
    if version != CONFIG_VERSION {
        return Err(ConfigError::BadVersion(version));
    }

    let mode = match map.get("mode") {
        None => TrainMode::FreqModulated,
        Some(v) => TrainMode::from_name(v)
            .ok_or_else(|| ConfigError::BadValue("mode".into(), format!("unknown mode {v:?}")))?,
    };

    let family = match map.get("schedule.family") {
        None => ScheduleFamily::Step,
        Some(v) => ScheduleFamily::from_name(v)
            .ok_or_else(|| ConfigError::BadValue("schedule.family".into(), format!("unknown family {v:?}")))?,
    };

    let filter = match map.get("schedule.filter") {
        None => FilterKind::Mean,
        Some(v) => FilterKind::from_name(v)
            .ok_or_else(|| ConfigError::BadValue("schedule.filter".into(), format!("unknown filter {v:?}")))?,
    };
    // Attach filter parameters when given.
    let filter = match filter {
        FilterKind::Gaussian { .. } => FilterKind::Gaussian {
            sigma: match map.get("filter.gaussian_sigma") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| {
                    ConfigError::BadValue("filter.gaussian_sigma".into(), v.clone())
                })?),
            },
        },
        FilterKind::Bilateral { .. } => FilterKind::Bilateral {
            sigma_spatial: match map.get("filter.sigma_spatial") {
                None => None,
                Some(v) => Some(v.parse().map_err(|_| {
                    ConfigError::BadValue("filter.sigma_spatial".into(), v.clone())
                })?),
            },
            sigma_range: get_parsed(
                map,
                "filter.sigma_range",
                FilterKind::DEFAULT_BILATERAL_RANGE_SIGMA,
            )?,
        },
        other => other,
    };

    let total_iterations: u64 =
        get_parsed(map, "total_iterations", FrequencySchedule::DEFAULT_TOTAL)?;
    let cutoff: u64 = get_parsed(
        map,
        "schedule.cutoff_iteration",
        FrequencySchedule::DEFAULT_CUTOFF.min(total_iterations),
    )?;
    let initial_kernel: usize = get_parsed(
        map,
        "schedule.initial_kernel",
        FrequencySchedule::DEFAULT_INITIAL_KERNEL,
    )?;
    let boundaries: Vec<u64> = match get_list(map, "schedule.level_boundaries")? {
        Some(b) => b,
        None => (1..=4u64).map(|i| cutoff * i / 4).collect(),
    };
    let step_sizes: Option<Vec<usize>> = get_list(map, "schedule.step_sizes")?;

    let schedule = FrequencySchedule::new(
        family,
        filter,
        initial_kernel,
        cutoff,
        total_iterations,
        boundaries,
        step_sizes,
    )
    .map_err(|e| ConfigError::Invalid(e.to_string()))?;

    let background = match get_list::<f64>(map, "background")? {
        None => [0.0; 3],
        Some(v) if v.len() == 3 => [v[0], v[1], v[2]],
        Some(v) => {
            return Err(ConfigError::BadValue(
                "background".into(),
                format!("expected 3 components, got {}", v.len()),
            ))
        }
    };

    let cull_sigma = match map.get("render.cull_sigma").map(String::as_str) {
        None => Some(3.0),
        Some("none") => None,
        Some(v) => Some(v.parse().map_err(|_| {
            ConfigError::BadValue("render.cull_sigma".into(), v.to_string())
        })?),
    };

    let defaults = LearningRates::default();
    let adc_defaults = AdcConfig::default();
    let render_defaults = RenderOptions::default();
    let cfg = TrainConfig {
        total_iterations,
        schedule,
        adc: AdcConfig {
            densification_interval: get_parsed(map, "adc.densification_interval", adc_defaults.densification_interval)?,
            densify_grad_threshold: get_parsed(map, "adc.densify_grad_threshold", adc_defaults.densify_grad_threshold)?,
            prune_opacity_threshold: get_parsed(map, "adc.prune_opacity_threshold", adc_defaults.prune_opacity_threshold)?,
            split_scale_threshold: get_parsed(map, "adc.split_scale_threshold", adc_defaults.split_scale_threshold)?,
            opacity_reset_interval: get_parsed(map, "adc.opacity_reset_interval", adc_defaults.opacity_reset_interval)?,
            densify_until_iteration: get_parsed(map, "adc.densify_until_iteration", adc_defaults.densify_until_iteration)?,
            split_children: get_parsed(map, "adc.split_children", adc_defaults.split_children)?,
            split_scale_shrink: get_parsed(map, "adc.split_scale_shrink", adc_defaults.split_scale_shrink)?,
        },
        lr: LearningRates {
            position: get_parsed(map, "lr.position", defaults.position)?,
            log_scale: get_parsed(map, "lr.log_scale", defaults.log_scale)?,
            rotation: get_parsed(map, "lr.rotation", defaults.rotation)?,
            raw_opacity: get_parsed(map, "lr.raw_opacity", defaults.raw_opacity)?,
            color: get_parsed(map, "lr.color", defaults.color)?,
        },
        init_count: get_parsed(map, "init_count", 1000)?,
        seed: get_parsed(map, "seed", 0)?,
        mode,
        loss: LossConfig {
            lambda_ssim: get_parsed(map, "loss.lambda_ssim", LossConfig::default().lambda_ssim)?,
        },
        background,
        metrics_interval: get_parsed(map, "metrics_interval", 100)?,
        render_opts: RenderOptions {
            cull_sigma,
            transmittance_floor: get_parsed(map, "render.transmittance_floor", render_defaults.transmittance_floor)?,
        },
        position_lr_decay: get_parsed(map, "position_lr_decay", 0.01)?,
        opacity_reset_ceiling: get_parsed(map, "opacity_reset_ceiling", 0.01)?,
        reset_moments_on_level_change: get_parsed(map, "reset_moments_on_level_change", false)?,
    };
    cfg.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
    Ok(cfg)
}

/// Parse a config file body and apply overrides in one step.
pub fn train_config_from_text(
    text: &str,
    overrides: &[String],
) -> Result<TrainConfig, ConfigError> {
    let mut map = parse_flat(text)?;
    apply_overrides(&mut map, overrides)?;
    build_train_config(&map)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Canonical flat serialization of every effective value. Feeding this back
/// through the parser reconstructs an identical configuration.
pub fn resolved_flat(cfg: &TrainConfig) -> String {
    let mut out = String::new();
    let mut kv = |k: &str, v: String| {
        out.push_str(k);
        out.push_str(" = ");
        out.push_str(&v);
        out.push('\n');
    };
    kv("config_version", CONFIG_VERSION.to_string());
    kv("mode", cfg.mode.name().into());
    kv("seed", cfg.seed.to_string());
    kv("total_iterations", cfg.total_iterations.to_string());
    kv("init_count", cfg.init_count.to_string());
    kv("metrics_interval", cfg.metrics_interval.to_string());
    kv("background", join(&cfg.background));
    kv("loss.lambda_ssim", cfg.loss.lambda_ssim.to_string());
    kv("lr.position", cfg.lr.position.to_string());
    kv("lr.log_scale", cfg.lr.log_scale.to_string());
    kv("lr.rotation", cfg.lr.rotation.to_string());
    kv("lr.raw_opacity", cfg.lr.raw_opacity.to_string());
    kv("lr.color", cfg.lr.color.to_string());
    kv("position_lr_decay", cfg.position_lr_decay.to_string());
    kv("opacity_reset_ceiling", cfg.opacity_reset_ceiling.to_string());
    kv(
        "reset_moments_on_level_change",
        cfg.reset_moments_on_level_change.to_string(),
    );
    kv("schedule.family", cfg.schedule.family().name().into());
    kv("schedule.filter", cfg.schedule.filter().name().into());
    match cfg.schedule.filter() {
        FilterKind::Gaussian { sigma: Some(s) } => kv("filter.gaussian_sigma", s.to_string()),
        FilterKind::Bilateral { sigma_spatial, sigma_range } => {
            if let Some(s) = sigma_spatial {
                kv("filter.sigma_spatial", s.to_string());
            }
            kv("filter.sigma_range", sigma_range.to_string());
        }
        _ => {}
    }
    kv("schedule.initial_kernel", cfg.schedule.initial_kernel().to_string());
    kv("schedule.cutoff_iteration", cfg.schedule.cutoff_iteration().to_string());
    kv("schedule.level_boundaries", join(cfg.schedule.level_boundaries()));
    kv("schedule.step_sizes", join(cfg.schedule.step_sizes()));
    kv("adc.densification_interval", cfg.adc.densification_interval.to_string());
    kv("adc.densify_grad_threshold", cfg.adc.densify_grad_threshold.to_string());
    kv("adc.prune_opacity_threshold", cfg.adc.prune_opacity_threshold.to_string());
    kv("adc.split_scale_threshold", cfg.adc.split_scale_threshold.to_string());
    kv("adc.opacity_reset_interval", cfg.adc.opacity_reset_interval.to_string());
    kv("adc.densify_until_iteration", cfg.adc.densify_until_iteration.to_string());
    kv("adc.split_children", cfg.adc.split_children.to_string());
    kv("adc.split_scale_shrink", cfg.adc.split_scale_shrink.to_string());
    match cfg.render_opts.cull_sigma {
        Some(s) => kv("render.cull_sigma", s.to_string()),
        None => kv("render.cull_sigma", "none".into()),
    }
    kv("render.transmittance_floor", cfg.render_opts.transmittance_floor.to_string());
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = build_train_config(&BTreeMap::new()).unwrap();
        assert_eq!(cfg.mode, TrainMode::FreqModulated);
        assert_eq!(cfg.schedule.initial_kernel(), 15);
        assert_eq!(cfg.schedule.cutoff_iteration(), 12_000);
        assert_eq!(cfg.total_iterations, 30_000);
        assert_eq!(cfg.adc.densification_interval, 500);
        assert_eq!(cfg.adc.densify_grad_threshold, 1e-4);
        assert_eq!(cfg.lr.log_scale, 0.01);

        let text = resolved_flat(&cfg);
        let back = train_config_from_text(&text, &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_whitespace_and_overrides() {
        let text = "\n# a comment\n  seed = 3\nmode = baseline\n";
        let cfg = train_config_from_text(text, &["seed=7".into()]).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.mode, TrainMode::Baseline);
    }

    #[test]
    fn unknown_keys_and_bad_lines_rejected() {
        assert!(matches!(
            parse_flat("sede = 3"),
            Err(ConfigError::UnknownKey(_))
        ));
        assert!(matches!(
            parse_flat("just some words"),
            Err(ConfigError::BadLine(1, _))
        ));
        assert!(matches!(
            train_config_from_text("", &["nope".into()]),
            Err(ConfigError::BadOverride(_))
        ));
    }

    #[test]
    fn bilateral_filter_parameters_round_trip() {
        let text = "schedule.filter = bilateral\nfilter.sigma_range = 0.25\n";
        let cfg = train_config_from_text(text, &[]).unwrap();
        assert_eq!(
            cfg.schedule.filter(),
            FilterKind::Bilateral { sigma_spatial: None, sigma_range: 0.25 }
        );
        let back = train_config_from_text(&resolved_flat(&cfg), &[]).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn scaled_down_schedule_from_config() {
        let text = "total_iterations = 10000\nschedule.cutoff_iteration = 4000\n";
        let cfg = train_config_from_text(text, &[]).unwrap();
        assert_eq!(cfg.schedule.level_boundaries(), &[1000, 2000, 3000, 4000]);
        assert_eq!(cfg.schedule.step_sizes(), &[15, 9, 5, 3]);
    }

    #[test]
    fn invalid_combinations_rejected() {
        // Cutoff past the total.
        let text = "total_iterations = 100\nschedule.cutoff_iteration = 4000\n";
        assert!(train_config_from_text(text, &[]).is_err());
    }
}
