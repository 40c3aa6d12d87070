//! Command-line front end: train / compare / ablate / render-snapshot /
//! export, each a one-shot batch run driven by a flat key=value config file
//! plus `--override key=value` flags.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use freqsplat_core::imaging::{load_image, save_image, ImageBuffer};
use freqsplat_core::run_config::{resolved_flat, train_config_from_text};
use freqsplat_core::schedule::ScheduleFamily;
use freqsplat_core::snapshot::{load_snapshot, load_snapshot_meta};
use freqsplat_core::splat::render;
use freqsplat_core::trainer::{
    ablation_csv, compare, train, write_run_outputs, AblationGrid, AblationRow, TrainConfig,
};

#[derive(Parser)]
#[command(
    name = "freqsplat",
    about = "Frequency-modulated coarse-to-fine 2D Gaussian splatting trainer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat key=value run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Training target image (PNG or PPM).
    #[arg(long)]
    target: PathBuf,
    /// Directory for run outputs; created if absent.
    #[arg(long, default_value = "runs/out")]
    output_dir: PathBuf,
    /// Config overrides, e.g. --override seed=7 (repeatable).
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run and write metrics, events, snapshots and renders.
    Train(ConfigArgs),
    /// Train two configurations (A/B) and write a paired comparison.
    Compare {
        #[command(flatten)]
        common: ConfigArgs,
        /// Extra overrides applied to run A only (repeatable).
        #[arg(long = "a", value_name = "KEY=VALUE")]
        a_overrides: Vec<String>,
        /// Extra overrides applied to run B only (repeatable).
        #[arg(long = "b", value_name = "KEY=VALUE")]
        b_overrides: Vec<String>,
        #[arg(long, default_value = "a")]
        label_a: String,
        #[arg(long, default_value = "b")]
        label_b: String,
    },
    /// Run a schedule x filter x kernel-size grid with a shared seed.
    Ablate {
        #[command(flatten)]
        common: ConfigArgs,
        /// Comma-separated schedule families.
        #[arg(long, default_value = "step", value_delimiter = ',')]
        families: Vec<String>,
        /// Comma-separated filter kinds.
        #[arg(long, default_value = "mean", value_delimiter = ',')]
        filters: Vec<String>,
        /// Comma-separated initial kernel sizes.
        #[arg(long, default_value = "15", value_delimiter = ',')]
        kernel_sizes: Vec<usize>,
        /// Parallel workers for grid cells (0 = one per logical CPU).
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Render a scene snapshot back to a PNG.
    RenderSnapshot {
        /// Snapshot .bin file (the .json sidecar must sit next to it).
        #[arg(long)]
        snapshot: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Export a run's metrics as tidy (iteration, series, value) rows.
    Export {
        /// Run directory containing metrics.csv and resolved.cfg.
        #[arg(long)]
        run_dir: PathBuf,
        /// Output CSV path; defaults to plot_data.csv inside the run dir.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

fn load_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let text = match &args.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?,
        None => String::new(),
    };
    Ok(train_config_from_text(&text, &args.overrides)?)
}

fn load_target(args: &ConfigArgs) -> Result<ImageBuffer> {
    load_image(&args.target).with_context(|| format!("loading target {}", args.target.display()))
}

fn write_resolved(dir: &Path, cfg: &TrainConfig) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("resolved.cfg"), resolved_flat(cfg))?;
    Ok(())
}

fn cmd_train(args: &ConfigArgs) -> Result<()> {
    let cfg = load_config(args)?;
    let target = load_target(args)?;
    write_resolved(&args.output_dir, &cfg)?;
    let result = train(&target, &cfg)?;
    write_run_outputs(&args.output_dir, &target, &cfg, &result)?;
    let m = result.final_metrics();
    println!(
        "{}: {} gaussians (peak {}), psnr {:.2} dB, ssim {:.4}, {:.1}s",
        cfg.mode.name(),
        m.gaussian_count,
        m.peak_gaussian_count,
        m.psnr,
        m.ssim,
        result.wall_time
    );
    Ok(())
}

fn with_extra_overrides(base: &ConfigArgs, extra: &[String]) -> ConfigArgs {
    let mut overrides = base.overrides.clone();
    overrides.extend_from_slice(extra);
    ConfigArgs {
        config: base.config.clone(),
        target: base.target.clone(),
        output_dir: base.output_dir.clone(),
        overrides,
    }
}

fn cmd_compare(
    common: &ConfigArgs,
    a_overrides: &[String],
    b_overrides: &[String],
    label_a: &str,
    label_b: &str,
) -> Result<()> {
    let cfg_a = load_config(&with_extra_overrides(common, a_overrides))?;
    let cfg_b = load_config(&with_extra_overrides(common, b_overrides))?;
    let target = load_target(common)?;
    fs::create_dir_all(&common.output_dir)?;
    let report = compare(&target, label_a, &cfg_a, label_b, &cfg_b)?;
    write_resolved(&common.output_dir.join("a"), &cfg_a)?;
    write_resolved(&common.output_dir.join("b"), &cfg_b)?;
    write_run_outputs(&common.output_dir.join("a"), &target, &cfg_a, &report.result_a)?;
    write_run_outputs(&common.output_dir.join("b"), &target, &cfg_b, &report.result_b)?;
    let csv = report.to_csv();
    fs::write(common.output_dir.join("compare.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_ablate(
    common: &ConfigArgs,
    families: &[String],
    filters: &[String],
    kernel_sizes: &[usize],
    jobs: usize,
) -> Result<()> {
    use freqsplat_core::freq_filter::FilterKind;
    let base = load_config(common)?;
    let target = load_target(common)?;
    let families = families
        .iter()
        .map(|f| ScheduleFamily::from_name(f).with_context(|| format!("unknown family {f:?}")))
        .collect::<Result<Vec<_>>>()?;
    let filters = filters
        .iter()
        .map(|f| FilterKind::from_name(f).with_context(|| format!("unknown filter {f:?}")))
        .collect::<Result<Vec<_>>>()?;
    if kernel_sizes.is_empty() || families.is_empty() || filters.is_empty() {
        bail!("ablation grid must be non-empty");
    }

    // Cells are independent runs; run them on a bounded worker pool and emit
    // rows in grid order regardless of completion order.
    let cells: Vec<(ScheduleFamily, FilterKind, usize)> = families
        .iter()
        .flat_map(|&fam| {
            filters.iter().flat_map(move |&fil| {
                kernel_sizes.iter().map(move |&k| (fam, fil, k))
            })
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .context("building worker pool")?;
    let rows: Result<Vec<AblationRow>> = pool.install(|| {
        use rayon::prelude::*;
        cells
            .par_iter()
            .map(|&(family, filter, kernel_size)| {
                let cfg = freqsplat_core::trainer::ablation_cell_config(
                    &base,
                    family,
                    filter,
                    kernel_size,
                )?;
                let result = train(&target, &cfg)?;
                let label = format!("{}/{}/{}", family.name(), filter.name(), kernel_size);
                Ok(AblationRow {
                    family,
                    filter,
                    kernel_size,
                    seed: cfg.seed,
                    summary: freqsplat_core::trainer::RunSummary {
                        label,
                        final_count: result.final_metrics().gaussian_count,
                        peak_count: result.final_metrics().peak_gaussian_count,
                        psnr: result.final_metrics().psnr,
                        ssim: result.final_metrics().ssim,
                        wall_time: result.wall_time,
                    },
                })
            })
            .collect()
    });
    let rows = rows?;
    fs::create_dir_all(&common.output_dir)?;
    write_resolved(&common.output_dir, &base)?;
    let csv = ablation_csv(&rows);
    fs::write(common.output_dir.join("ablation.csv"), &csv)?;
    print!("{csv}");
    Ok(())
}

fn cmd_render_snapshot(snapshot: &Path, output: &Path) -> Result<()> {
    let set = load_snapshot(snapshot)?;
    let meta = load_snapshot_meta(snapshot)?;
    let out = render(
        &set,
        meta.width,
        meta.height,
        meta.background,
        &Default::default(),
    );
    save_image(&out.image, output)?;
    println!(
        "rendered {} gaussians (level {}, iteration {}) to {}",
        set.len(),
        meta.level,
        meta.iteration,
        output.display()
    );
    Ok(())
}

fn cmd_export(run_dir: &Path, output: Option<&Path>) -> Result<()> {
    let metrics_path = run_dir.join("metrics.csv");
    let metrics = fs::read_to_string(&metrics_path)
        .with_context(|| format!("reading {}", metrics_path.display()))?;
    let resolved = fs::read_to_string(run_dir.join("resolved.cfg"))
        .with_context(|| "reading resolved.cfg (needed for the kernel-size series)")?;
    let cfg = train_config_from_text(&resolved, &[])?;

    let mut lines = metrics.lines();
    let header: Vec<&str> = lines.next().context("metrics.csv is empty")?.split(',').collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .with_context(|| format!("metrics.csv lacks column {name}"))
    };
    let (c_iter, c_psnr, c_count, c_level) =
        (col("iteration")?, col("psnr")?, col("gaussian_count")?, col("level")?);

    // Values are copied through as strings so the export matches the source
    // CSV exactly.
    let mut out = String::from("iteration,series,value\n");
    for line in lines.filter(|l| !l.trim().is_empty()) {
        let fields: Vec<&str> = line.split(',').collect();
        let iter_s = fields[c_iter];
        let iteration: u64 = iter_s.parse().context("bad iteration value")?;
        for (series, value) in [
            ("gaussian_count", fields[c_count].to_string()),
            ("psnr", fields[c_psnr].to_string()),
            ("kernel_size", cfg.schedule.kernel_size_at(iteration).to_string()),
            ("level", fields[c_level].to_string()),
        ] {
            out.push_str(&format!("{iter_s},{series},{value}\n"));
        }
    }
    let default_path = run_dir.join("plot_data.csv");
    let out_path = output.unwrap_or(&default_path);
    fs::write(out_path, &out).with_context(|| format!("writing {}", out_path.display()))?;
    println!("wrote {}", out_path.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Compare { common, a_overrides, b_overrides, label_a, label_b } => {
            cmd_compare(common, a_overrides, b_overrides, label_a, label_b)
        }
        Command::Ablate { common, families, filters, kernel_sizes, jobs } => {
            cmd_ablate(common, families, filters, kernel_sizes, *jobs)
        }
        Command::RenderSnapshot { snapshot, output } => cmd_render_snapshot(snapshot, output),
        Command::Export { run_dir, output } => cmd_export(run_dir, output.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
