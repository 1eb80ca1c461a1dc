//! `pgd-prep`: command-line front end for pgd-core.
//!
//! Exit codes: 0 success, 1 partial failure (some chips failed, or a check
//! did not pass), 2 invalid input.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use image::{Rgb, RgbImage};

use pgd_core::container::{encode, load_container, save_container};
use pgd_core::heatmap::heatmap_stack_downsampled;
use pgd_core::imaging::load_chip;
use pgd_core::mixture::{fit_gmm, GaussianMixture, MixtureConfig};
use pgd_core::pgfe::gradcheck;
use pgd_core::pgip::{
    pgip_target_adaptive, pgip_target_hard, pgip_target_truncated, HeadSpec, InstanceAnnotation,
};
use pgd_core::pipeline::{build_manifest, run_preprocess, write_synth_corpus, PipelineConfig, Sidecar};
use pgd_core::scattering::{extract_points, ScatterPointSet};
use pgd_core::Error;

#[derive(Parser)]
#[command(name = "pgd-prep", version, about = "Physics-guided supervision targets for SAR airplane chips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PgipMode {
    Adaptive,
    Hard,
    Truncated,
}

#[derive(Subcommand)]
enum Command {
    /// Write a corpus of synthetic airplane chips with annotation sidecars.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 192)]
        height: usize,
        #[arg(long, default_value_t = 256)]
        width: usize,
    },
    /// Extract scattering points from one chip.
    Points {
        #[arg(long = "in")]
        input: PathBuf,
        /// Pipeline config; only its `harris` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit the structure mixture to a points file.
    Gmm {
        #[arg(long)]
        points: PathBuf,
        #[arg(long, default_value_t = 6)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a mixture as a K-channel heatmap container.
    Heatmap {
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long, default_value_t = 1)]
        downsample: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build an instance-perception target for one detection head.
    Pgip {
        /// Annotation sidecar with the instance bboxes.
        #[arg(long)]
        annotations: PathBuf,
        /// Scattering points of the chip (not needed for `hard`).
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        stride: u32,
        #[arg(long, default_value_t = 0.5)]
        eta: f64,
        /// Absolute threshold of the `truncated` mode.
        #[arg(long, default_value_t = 0.0)]
        tau: f64,
        #[arg(long, value_enum, default_value_t = PgipMode::Adaptive)]
        mode: PgipMode,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare fusion-block gradients with central finite differences.
    FuseCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
    },
    /// Preprocess every chip under a directory.
    Run {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Overlay a heatmap (maximum over channels) on its chip as a PNG.
    Render {
        #[arg(long)]
        heatmap: PathBuf,
        #[arg(long)]
        chip: PathBuf,
        /// Render a single channel instead of the channel maximum.
        #[arg(long)]
        channel: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

type CmdResult = Result<ExitCode, Error>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { count, seed, out, height, width } => synth(count, seed, &out, height, width),
        Command::Points { input, config, out } => points(&input, config.as_deref(), out.as_deref()),
        Command::Gmm { points, k, seed, out } => gmm(&points, k, seed, out.as_deref()),
        Command::Heatmap { mixture, height, width, downsample, out } => {
            heatmap(&mixture, height, width, downsample, &out)
        }
        Command::Pgip { annotations, points, stride, eta, tau, mode, height, width, out } => pgip(
            &annotations,
            points.as_deref(),
            HeadArgs { stride, height, width },
            mode,
            eta,
            tau,
            out.as_deref(),
        ),
        Command::FuseCheck { seed, count, tolerance } => fuse_check(seed, count, tolerance),
        Command::Run { manifest, config, out, workers } => run(&manifest, config.as_deref(), out, workers),
        Command::Render { heatmap, chip, channel, out } => render(&heatmap, &chip, channel, &out),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => fs::write(path, text).map_err(|e| Error::io(path, e)),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn read_text(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn synth(count: usize, seed: u64, out: &Path, height: usize, width: usize) -> CmdResult {
    let paths = write_synth_corpus(out, count, seed, height, width)?;
    println!("wrote {} chips to {}", paths.len(), out.display());
    Ok(ExitCode::SUCCESS)
}

fn points(input: &Path, config: Option<&Path>, out: Option<&Path>) -> CmdResult {
    let cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let chip = load_chip(input)?;
    let set = extract_points(&chip, &cfg.harris)?;
    emit(out, &set.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn gmm(points: &Path, k: usize, seed: u64, out: Option<&Path>) -> CmdResult {
    let set = ScatterPointSet::from_json(&read_text(points)?)?;
    let cfg = MixtureConfig {
        k,
        seed,
        ..MixtureConfig::default()
    };
    cfg.validate()?;
    let mixture = fit_gmm(&set, &cfg)?;
    emit(out, &mixture.to_json())?;
    Ok(ExitCode::SUCCESS)
}

fn heatmap(mixture: &Path, height: usize, width: usize, downsample: usize, out: &Path) -> CmdResult {
    let mixture = GaussianMixture::from_json(&read_text(mixture)?)?;
    let stack = heatmap_stack_downsampled(&mixture, height, width, downsample)?;
    save_container(out, &stack)?;
    let (k, h, w) = stack.shape();
    println!("wrote {k}x{h}x{w} heatmap to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

struct HeadArgs {
    stride: u32,
    height: usize,
    width: usize,
}

fn pgip(
    annotations: &Path,
    points: Option<&Path>,
    head: HeadArgs,
    mode: PgipMode,
    eta: f64,
    tau: f64,
    out: Option<&Path>,
) -> CmdResult {
    let sidecar: Sidecar = serde_json::from_str(&read_text(annotations)?)?;
    let scene = match points {
        Some(p) => ScatterPointSet::from_json(&read_text(p)?)?,
        None if matches!(mode, PgipMode::Hard) => ScatterPointSet::new(Vec::new()),
        None => return Err(Error::InvalidConfig("--points is required for this mode".into())),
    };
    let instances = sidecar
        .objects
        .iter()
        .map(|o| InstanceAnnotation::from_scene(o.bbox, &scene))
        .collect::<Result<Vec<_>, _>>()?;
    let spec = HeadSpec::new(head.stride, head.height, head.width)?;
    let map = match mode {
        PgipMode::Adaptive => {
            let target = pgip_target_adaptive(&instances, &spec, eta)?;
            for j in &target.empty_instances {
                eprintln!("warning: instance {j} has no scattering points on this head");
            }
            target.map
        }
        PgipMode::Hard => pgip_target_hard(&instances, &spec),
        PgipMode::Truncated => pgip_target_truncated(&instances, &spec, tau)?,
    };
    let (h, w) = map.dims();
    println!("{} positive cells on a {h}x{w} map", map.positives());
    if let Some(path) = out {
        fs::write(path, encode(&map.to_stack())).map_err(|e| Error::io(path, e))?;
    }
    Ok(ExitCode::SUCCESS)
}

fn fuse_check(seed: u64, count: usize, tolerance: f64) -> CmdResult {
    let reports = gradcheck::run_suite(seed, count)?;
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error));
    let Some(worst) = worst else {
        println!("no instances checked");
        return Ok(ExitCode::SUCCESS);
    };
    println!(
        "max relative error {:.3e} over {} instances ({} at {}: analytic {:.9e}, numeric {:.9e})",
        worst.max_rel_error,
        reports.len(),
        if worst.max_rel_error < tolerance { "pass" } else { "FAIL" },
        worst.worst_entry,
        worst.analytic,
        worst.numeric,
    );
    Ok(if worst.max_rel_error < tolerance {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn run(manifest: &Path, config: Option<&Path>, out: Option<PathBuf>, workers: Option<usize>) -> CmdResult {
    let mut cfg = match config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = out {
        cfg.output_dir = out;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    let manifest = build_manifest(manifest)?;
    let report = run_preprocess(&manifest, &cfg)?;
    let s = &report.summary;
    println!(
        "{}/{} chips succeeded in {} ms",
        s.succeeded, s.chips, s.wall_time_ms
    );
    for (stage, n) in &s.failures_by_stage {
        println!("  {n} failed at {stage:?}");
    }
    Ok(if s.failed == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn render(heatmap: &Path, chip: &Path, channel: Option<usize>, out: &Path) -> CmdResult {
    let stack = load_container(heatmap)?;
    let chip = load_chip(chip)?;
    let (k, hh, hw) = stack.shape();
    if let Some(c) = channel.filter(|&c| c >= k) {
        return Err(Error::InvalidConfig(format!("channel {c} out of range for {k} channels")));
    }
    let (h, w) = (chip.height(), chip.width());
    // nearest-neighbour lookup so downsampled heatmaps line up with the chip
    let heat_at = |r: usize, c: usize| -> f32 {
        let (hr, hc) = ((r * hh / h).min(hh - 1), (c * hw / w).min(hw - 1));
        let idx = hr * hw + hc;
        match channel {
            Some(ch) => stack.channel(ch)[idx],
            None => (0..k).map(|ch| stack.channel(ch)[idx]).fold(0.0, f32::max),
        }
    };
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let (r, c) = (y as usize, x as usize);
        let g = chip.get(r, c);
        let a = f64::from(heat_at(r, c).clamp(0.0, 1.0));
        let mix = |base: f64, tint: f64| ((base * (1.0 - a) + tint * a) * 255.0).round() as u8;
        Rgb([mix(g, 1.0), mix(g, 0.2 * g), mix(g, 0.0)])
    });
    img.save(out).map_err(|e| Error::UnsupportedFormat(format!("{}: {e}", out.display())))?;
    println!("wrote {}", out.display());
    Ok(ExitCode::SUCCESS)
}
