//! `lumen`: simulate reflectance images, build datasets, fit mixtures and
//! analyse results.

mod config;

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use lumen_core::analysis::{
    self, aggregate_metrics, compute_rdm, load_profiles, rdm_order, read_features_csv, read_metrics_csv,
    write_metrics_csv, MetricRecord,
};
use lumen_core::dataset::{self, DatasetSpec, GenerateOptions, Split, MANIFEST_FILE};
use lumen_core::gmm::{self, fit_gmm, g_hat, FitOptions};
use lumen_core::io::{self, ImageSidecar};
use lumen_core::phase::{anisotropy_of, Phase};
use lumen_core::transport::{self, DEFAULT_N_AMBIENT, DEFAULT_N_TISSUE, DEFAULT_THICKNESS_CM};
use lumen_core::{DiscretePdf, GridSpec, HgPhase, OpticalMedium, SimulationConfig, ThetaGrid};

const SUBCOMMANDS: &[&str] = &["simulate", "gen-dataset", "fit-gmm", "evaluate", "rdm", "profile", "render"];

#[derive(Parser, Debug)]
#[command(name = "lumen", version, about = "Diffuse reflectance simulation and phase function tools")]
#[command(args_override_self = true)]
struct Cli {
    /// Print machine-readable JSON results on stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Simulation worker threads.
    #[arg(long, global = true, env = "LUMEN_WORKERS", default_value_t = 1)]
    workers: usize,

    /// TOML file of flag values (keys are long flag names).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one reflectance image.
    Simulate(SimulateArgs),
    /// Simulate a named dataset into a directory with a manifest.
    GenDataset(GenDatasetArgs),
    /// Fit a Gaussian mixture to a phase function.
    FitGmm(FitArgs),
    /// Summarise per-image metrics across datasets.
    Evaluate(EvaluateArgs),
    /// Pairwise Euclidean distance matrix of profiles or features.
    Rdm(RdmArgs),
    /// Centre-row profile of an image.
    Profile(ProfileArgs),
    /// Gamma-corrected 8-bit rendering of an image.
    Render(RenderArgs),
}

#[derive(Args, Debug)]
#[group(id = "phase", required = true, multiple = false)]
struct PhaseArgs {
    /// Henyey-Greenstein anisotropy.
    #[arg(long, group = "phase")]
    g: Option<f64>,
    /// Tabulated phase function text file.
    #[arg(long, group = "phase", value_name = "FILE")]
    phase_file: Option<PathBuf>,
    /// Gaussian mixture JSON file.
    #[arg(long, group = "phase", value_name = "FILE")]
    phase_gmm: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct SimulateArgs {
    /// Absorption coefficient, cm⁻¹.
    #[arg(long, visible_alias = "mu-a")]
    mua: f64,
    /// Scattering coefficient, cm⁻¹.
    #[arg(long, visible_alias = "mu-s")]
    mus: f64,
    #[command(flatten)]
    phase: PhaseArgs,
    /// Pixels from the centre to the edge, inclusive.
    #[arg(long, visible_alias = "n-r", default_value_t = 100)]
    nr: usize,
    /// Pixel pitch, mm.
    #[arg(long, visible_alias = "delta-r-mm", default_value_t = 0.02)]
    dr: f64,
    #[arg(long, visible_alias = "n-photons", default_value_t = 1_000_000)]
    photons: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_N_TISSUE)]
    n_tissue: f64,
    #[arg(long, default_value_t = DEFAULT_N_AMBIENT)]
    n_ambient: f64,
    /// Slab thickness, cm.
    #[arg(long, visible_alias = "thickness-cm", default_value_t = DEFAULT_THICKNESS_CM)]
    thickness: f64,
    /// Output raster; the sidecar goes next to it with a .json extension.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct GenDatasetArgs {
    /// DS1 to DS5.
    #[arg(long)]
    spec: String,
    /// Fraction of the full sample and photon counts.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Photons per image instead of the scaled count.
    #[arg(long, visible_alias = "n-photons")]
    photons: Option<u64>,
    #[arg(long, default_value_t = DEFAULT_N_TISSUE)]
    n_tissue: f64,
    #[arg(long, default_value_t = DEFAULT_N_AMBIENT)]
    n_ambient: f64,
    /// Parent directory; the dataset goes in a subdirectory named after it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
#[group(id = "target", required = true, multiple = false)]
struct TargetArgs {
    /// Fit a Henyey-Greenstein phase function with this anisotropy.
    #[arg(long, group = "target")]
    hg_g: Option<f64>,
    /// Fit a tabulated phase function.
    #[arg(long, group = "target", value_name = "FILE")]
    phase_file: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(allow_negative_numbers = true)]
struct FitArgs {
    #[command(flatten)]
    target: TargetArgs,
    /// Number of Gaussian components.
    #[arg(long, default_value_t = 11)]
    k: usize,
    #[arg(long, default_value_t = 20)]
    restarts: usize,
    #[arg(long, default_value_t = 500)]
    max_iters: usize,
    #[arg(long, default_value_t = FitOptions::default().seed)]
    seed: u64,
    /// Write the fitted mixture JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// `NAME=CSV` per-image metrics for one dataset; repeatable.
    #[arg(long, value_name = "NAME=CSV")]
    metrics: Vec<String>,
    /// Dataset manifest for scoring predicted mixtures.
    #[arg(long, requires = "predictions")]
    manifest: Option<PathBuf>,
    /// Directory of predicted mixture JSON files mirroring the image paths.
    #[arg(long, requires = "manifest")]
    predictions: Option<PathBuf>,
    /// Write the scored predictions as a metrics CSV.
    #[arg(long, requires = "predictions")]
    write_metrics: Option<PathBuf>,
    /// Dataset the gain and p-values are relative to.
    #[arg(long, default_value = "DS2")]
    reference: String,
    /// Summary CSV; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Rank-sum comparisons CSV.
    #[arg(long)]
    comparisons: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Test,
}

#[derive(Args, Debug)]
#[group(id = "source", required = true, multiple = false)]
struct RdmSource {
    /// Dataset manifest; distances between centre-row profiles.
    #[arg(long, group = "source")]
    manifest: Option<PathBuf>,
    /// Feature CSV (`image_id` then feature columns).
    #[arg(long, group = "source")]
    features: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RdmArgs {
    #[command(flatten)]
    source: RdmSource,
    #[arg(long, value_enum, default_value = "test")]
    split: SplitArg,
    /// Row-major f32 matrix; a JSON sidecar lists the row ids.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ProfileArgs {
    #[arg(long)]
    image: PathBuf,
    /// Grid half-size when the image has no sidecar.
    #[arg(long, visible_alias = "n-r")]
    nr: Option<usize>,
    /// Pixel pitch, mm, when the image has no sidecar.
    #[arg(long, visible_alias = "delta-r-mm", requires = "nr")]
    dr: Option<f64>,
    /// CSV output; stdout if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    gamma: f64,
    /// Binary PGM output.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args: Vec<OsString> = std::env::args_os().collect();
    let args = match config::expand(args, SUBCOMMANDS) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    if cli.workers == 0 {
        bail!("--workers must be at least 1");
    }
    match &cli.command {
        Command::Simulate(a) => simulate(cli, a),
        Command::GenDataset(a) => gen_dataset(cli, a),
        Command::FitGmm(a) => fit(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Rdm(a) => rdm(cli, a),
        Command::Profile(a) => profile(cli, a),
        Command::Render(a) => render(cli, a),
    }
}

/// Writes to stdout; a closed pipe ends the program quietly.
fn say(text: &str) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|()| out.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => Ok(r?),
    }
}

fn emit<T: Serialize>(value: &T) -> Result<()> {
    say(&(serde_json::to_string_pretty(value)? + "\n"))
}

fn load_phase(a: &PhaseArgs) -> Result<Phase> {
    Ok(match (a.g, &a.phase_file, &a.phase_gmm) {
        (Some(g), _, _) => HgPhase::new(g)?.into(),
        (_, Some(p), _) => io::read_tabulated(p)?.into(),
        (_, _, Some(p)) => transport::tabulate_gmm(&io::read_gmm(p)?)?.into(),
        _ => bail!("one of --g, --phase-file or --phase-gmm is required"),
    })
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    let phase = load_phase(&a.phase)?;
    let g = match a.phase.g {
        Some(g) => g,
        None => anisotropy_of(&phase)?,
    };
    let medium = OpticalMedium {
        n_tissue: a.n_tissue,
        n_ambient: a.n_ambient,
        thickness_cm: a.thickness,
        ..OpticalMedium::new(a.mua, a.mus, g)
    };
    let grid = GridSpec::new(a.dr, a.nr)?;
    let config = SimulationConfig::new(a.photons, a.seed).with_workers(cli.workers);
    let image = transport::simulate(&medium, &phase, &grid, &config)?;
    let sidecar = ImageSidecar::new(&medium, &image, a.photons, a.seed);
    io::write_image(&a.out, &image, &sidecar)?;
    if cli.json {
        emit(&json!({ "image": a.out, "sidecar": io::sidecar_path(&a.out), "metadata": sidecar }))
    } else {
        let t = image.tallies();
        say(&format!(
            "{}: {side}x{side}, specular {:.6}, diffuse {:.6} (overflow {:.6}), absorbed {:.6}, transmitted {:.6}\n",
            a.out.display(),
            t.specular_reflectance,
            t.total_diffuse,
            t.overflow,
            t.absorbed,
            t.transmitted,
            side = grid.side(),
        ))?;
        Ok(())
    }
}

fn gen_dataset(cli: &Cli, a: &GenDatasetArgs) -> Result<()> {
    let spec = DatasetSpec::named(&a.spec)?;
    let opts = GenerateOptions {
        scale: a.scale,
        master_seed: a.seed,
        workers: cli.workers,
        n_tissue: a.n_tissue,
        n_ambient: a.n_ambient,
        photons: a.photons,
    };
    let report = dataset::generate(&spec, &a.out, &opts)?;
    let train = report.records.iter().filter(|r| r.split == Split::Train).count();
    let test = report.records.len() - train;
    let manifest = report.dataset_dir.join(MANIFEST_FILE);
    if cli.json {
        emit(&json!({
            "manifest": manifest,
            "records": report.records.len(),
            "train": train,
            "test": test,
            "simulated": report.simulated,
            "skipped": report.skipped,
        }))
    } else {
        say(&format!(
            "{}: {train} train + {test} test records ({} simulated, {} up to date)\n",
            manifest.display(),
            report.simulated,
            report.skipped
        ))?;
        Ok(())
    }
}

fn fit(cli: &Cli, a: &FitArgs) -> Result<()> {
    let grid = ThetaGrid::default();
    let target = match (a.target.hg_g, &a.target.phase_file) {
        (Some(g), _) => DiscretePdf::from_phase(&HgPhase::new(g)?, grid)?,
        (_, Some(p)) => DiscretePdf::from_phase(&io::read_tabulated(p)?, grid)?,
        _ => bail!("one of --hg-g or --phase-file is required"),
    };
    let opts = FitOptions {
        restarts: a.restarts,
        max_iters: a.max_iters,
        seed: a.seed,
        ..FitOptions::default()
    };
    let result = fit_gmm(&target, a.k, &opts)?;
    let est = g_hat(&result.params)?;
    if let Some(out) = &a.out {
        io::write_json(out, &result.params)?;
    }
    if cli.json {
        emit(&json!({
            "params": result.params,
            "mse": result.mse,
            "g_hat": est,
            "target_g": target.mean_cosine(),
            "converged": result.converged,
            "iterations": result.iterations,
            "restart": result.restart,
        }))
    } else {
        say(&format!("{}\n", result.params.to_json()))?;
        say(&format!(
            "mse {:.6e}, g_hat {est:.6}, converged {}, {} iterations (restart {})\n",
            result.mse, result.converged, result.iterations, result.restart
        ))?;
        Ok(())
    }
}

/// Scores each predicted mixture against the record's HG target.
fn score_predictions(manifest: &Path, predictions: &Path) -> Result<Vec<MetricRecord>> {
    let records = dataset::read_manifest(manifest)?;
    let mut out = Vec::new();
    for rec in records.iter().filter(|r| r.split == Split::Test) {
        let pred = predictions.join(Path::new(&rec.path).with_extension("json"));
        if !pred.exists() {
            continue;
        }
        let params = io::read_gmm(&pred).with_context(|| format!("prediction {}", pred.display()))?;
        let target = DiscretePdf::from_phase(&HgPhase::new(rec.g)?, ThetaGrid::default())?;
        let est = g_hat(&params)?;
        out.push(MetricRecord {
            dataset: rec.dataset.clone(),
            image_id: Path::new(&rec.path).with_extension("").to_string_lossy().into_owned(),
            tissue: rec.tissue.clone(),
            g: rec.g,
            mse: gmm::grid_mse(&gmm::gmm_pdf(&params, ThetaGrid::default())?, &target)?,
            g_hat: est,
            rel_error: gmm::relative_g_error(rec.g, est)?,
        });
    }
    if out.is_empty() {
        bail!("no predictions for test records of {} under {}", manifest.display(), predictions.display());
    }
    Ok(out)
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    let mut records = Vec::new();
    for spec in &a.metrics {
        let Some((name, path)) = spec.split_once('=') else {
            bail!("--metrics expects NAME=CSV, got `{spec}`");
        };
        records.extend(read_metrics_csv(Path::new(path), name)?);
    }
    if let (Some(m), Some(p)) = (&a.manifest, &a.predictions) {
        let scored = score_predictions(m, p)?;
        if let Some(path) = &a.write_metrics {
            write_metrics_csv(path, &scored)?;
        }
        records.extend(scored);
    }
    if records.is_empty() {
        bail!("nothing to evaluate: give --metrics or --manifest with --predictions");
    }
    let summary = aggregate_metrics(&records, &a.reference)?;
    let csv = summary.to_csv();
    if let Some(out) = &a.out {
        fs::write(out, &csv).with_context(|| format!("writing {}", out.display()))?;
    }
    if let Some(path) = &a.comparisons {
        fs::write(path, summary.comparisons_csv()).with_context(|| format!("writing {}", path.display()))?;
    }
    if cli.json {
        emit(&summary)
    } else {
        if a.out.is_none() {
            say(&csv)?;
        }
        Ok(())
    }
}

fn rdm(cli: &Cli, a: &RdmArgs) -> Result<()> {
    let (ids, items) = match (&a.source.manifest, &a.source.features) {
        (Some(manifest), _) => {
            let records = dataset::read_manifest(manifest)?;
            let split = match a.split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            let ordered = rdm_order(&records, split);
            if ordered.is_empty() {
                bail!("{} has no {} records", manifest.display(), split.as_str());
            }
            let dir = manifest.parent().unwrap_or(Path::new("."));
            let ids: Vec<String> = ordered.iter().map(|r| r.path.clone()).collect();
            (ids, load_profiles(dir, &ordered)?)
        }
        (_, Some(features)) => read_features_csv(features)?.into_iter().unzip(),
        _ => bail!("one of --manifest or --features is required"),
    };
    let matrix = compute_rdm(&items)?;
    io::write_f32(&a.out, matrix.distances())?;
    let meta = json!({ "n": matrix.n(), "metric": "euclidean", "ids": ids });
    io::write_json(&io::sidecar_path(&a.out), &meta)?;
    if cli.json {
        emit(&json!({ "matrix": a.out, "n": matrix.n() }))
    } else {
        say(&format!("{}: {n}x{n} distances\n", a.out.display(), n = matrix.n()))?;
        Ok(())
    }
}

fn profile(cli: &Cli, a: &ProfileArgs) -> Result<()> {
    let grid = a.nr.map(|nr| GridSpec::new(a.dr.unwrap_or(1.0), nr)).transpose()?;
    let image = io::read_image(&a.image, grid)?;
    let values = analysis::center_profile(&image)?;
    let grid = image.grid();
    let x_mm = |i: usize| (i as f64 - grid.center() as f64) * grid.delta_r_mm;
    if cli.json {
        let xs: Vec<f64> = (0..values.len()).map(x_mm).collect();
        return emit(&json!({ "x_mm": xs, "values": values }));
    }
    let mut csv = String::from("index,x_mm,value\n");
    for (i, v) in values.iter().enumerate() {
        writeln!(csv, "{i},{:.6},{v:.9e}", x_mm(i))?;
    }
    match &a.out {
        Some(out) => fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?,
        None => say(&csv)?,
    }
    Ok(())
}

fn render(cli: &Cli, a: &RenderArgs) -> Result<()> {
    if !(a.gamma > 0.0) {
        bail!("--gamma must be positive");
    }
    let image = io::read_image(&a.image, None)?;
    let bytes = analysis::render_gamma(image.pixels(), a.gamma);
    io::write_pgm(&a.out, image.side(), image.side(), &bytes)?;
    if cli.json {
        emit(&json!({ "image": a.out, "width": image.side(), "height": image.side() }))
    } else {
        say(&format!("{}: {side}x{side} PGM\n", a.out.display(), side = image.side()))?;
        Ok(())
    }
}
