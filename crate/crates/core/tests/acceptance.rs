//! Acceptance suite. One line per criterion, non-zero exit if any fails.
//!
//! Run with `cargo test -p lumen-core --test acceptance`.

use std::process::ExitCode;
use std::time::Instant;

use lumen_core::analysis::center_profile;
use lumen_core::dataset::{find_tissue, mus_from, plan_dataset, DatasetSpec, Split};
use lumen_core::gmm::{fit_gmm, g_hat, FitOptions};
use lumen_core::phase::{anisotropy_of, hg_cdf_mu, sample_hg};
use lumen_core::transport::{run_forward_with_gmm, simulate};
use lumen_core::{
    DiscretePdf, GridSpec, HgPhase, OpticalMedium, PhaseFunction, ReflectanceImage,
    SimulationConfig, ThetaGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check = fn() -> Outcome;

fn main() -> ExitCode {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let checks: [(&str, Check); 8] = [
        ("hg_identities", hg_identities),
        ("sampler_correctness", sampler_correctness),
        ("energy_conservation", energy_conservation),
        ("geometry", geometry),
        ("fit_oracle", fit_oracle),
        ("external_mc_benchmark", external_mc_benchmark),
        ("external_mc_benchmark_thin_slab", external_mc_benchmark_thin_slab),
        ("closed_loop", closed_loop),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (name, check) in checks {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let out = check();
        let secs = start.elapsed().as_secs_f64();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name} ({secs:.1} s): {}", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run(medium: &OpticalMedium, phase: &(impl PhaseFunction + Sync), grid: &GridSpec, photons: u64, seed: u64) -> ReflectanceImage {
    simulate(medium, phase, grid, &SimulationConfig::new(photons, seed)).expect("simulation")
}

fn hg_identities() -> Outcome {
    let start = Instant::now();
    let mut worst_norm = 0.0f64;
    let mut worst_g = 0.0f64;
    for g in [0.6, 0.7, 0.8, 0.9] {
        let hg = HgPhase::new(g).unwrap();
        let mass = hg.integrate_density(|_| 1.0);
        worst_norm = worst_norm.max((mass - 1.0).abs());
        worst_g = worst_g.max((anisotropy_of(&hg).unwrap() - g).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst_norm <= 1e-6 && worst_g <= 1e-4 && secs < 1.0,
        format!("max |mass-1| = {worst_norm:.2e} (≤ 1e-6), max |g_est-g| = {worst_g:.2e} (≤ 1e-4), {secs:.3} s (< 1 s)"),
    )
}

fn sampler_correctness() -> Outcome {
    let start = Instant::now();
    let g = 0.8;
    let n = 1_000_000;
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut worst_trip = 0.0f64;
    for _ in 0..n {
        let xi: f64 = rng.random();
        let mu = sample_hg(g, xi);
        sum += mu;
        sum_sq += mu * mu;
        worst_trip = worst_trip.max((hg_cdf_mu(g, mu) - xi).abs());
    }
    let mean = sum / n as f64;
    let var = (sum_sq / n as f64 - mean * mean) * n as f64 / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let z = (mean - g).abs() / se;
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        z <= 4.0 && worst_trip <= 1e-9 && secs < 5.0,
        format!("mean μ = {mean:.5}, |Δ|/SE = {z:.2} (≤ 4), max round-trip error {worst_trip:.1e} (≤ 1e-9), {secs:.2} s (< 5 s)"),
    )
}

fn energy_conservation() -> Outcome {
    let grid = GridSpec::new(0.02, 100).unwrap();
    let tissue = |name: &str, g: f64| {
        let t = find_tissue(name).unwrap();
        OpticalMedium::new(t.mu_a, mus_from(t.mu_s_prime, g).unwrap(), g)
    };
    let mut slab = OpticalMedium::new(10.0, 90.0, 0.75);
    slab.n_tissue = 1.0;
    slab.thickness_cm = 0.02;
    let cases = [
        ("muscle g=0.6", tissue("Muscle", 0.6)),
        ("liver g=0.8", tissue("Liver and spleen", 0.8)),
        ("whole blood g=0.9", tissue("Whole blood", 0.9)),
        ("lung g=0.7", tissue("Lung", 0.7)),
        ("matched μa=10 μs=90", OpticalMedium::new(10.0, 90.0, 0.75).matched()),
        ("slab d=0.02 cm", slab.matched()),
    ];
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for (i, (label, medium)) in cases.iter().enumerate() {
        let img = run(medium, &HgPhase::new(medium.g).unwrap(), &grid, 1_000_000, 100 + i as u64);
        let dev = (1.0 - img.tallies().energy_sum()).abs();
        worst = worst.max(dev);
        parts.push(format!("{label}: {dev:.1e}"));
    }
    Outcome::new(worst <= 1e-3, format!("|1 - Σ| per run [{}], max {worst:.1e} (≤ 1e-3)", parts.join(", ")))
}

fn geometry() -> Outcome {
    let expected = [("DS1", 99), ("DS2", 199), ("DS3", 299), ("DS4", 399), ("DS5", 99)];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, side) in expected {
        let spec = DatasetSpec::named(name).unwrap();
        let plan = plan_dataset(&spec, 0).unwrap();
        let train = plan.iter().filter(|r| r.split == Split::Train).count();
        let test = plan.len() - train;
        let good = spec.image_side == side && spec.grid().side() == side && train == 8800 && test == 1760;
        ok &= good;
        parts.push(format!("{name} {}×{} {train}/{test}", spec.image_side, spec.image_side));
    }
    Outcome::new(ok, parts.join(", "))
}

fn hg_target(g: f64) -> DiscretePdf {
    DiscretePdf::from_phase(&HgPhase::new(g).unwrap(), ThetaGrid::default()).unwrap()
}

fn fit_oracle() -> Outcome {
    let opts = FitOptions::default();
    let f6 = fit_gmm(&hg_target(0.6), 11, &opts).unwrap();
    let f9 = fit_gmm(&hg_target(0.9), 11, &opts).unwrap();
    let g6 = g_hat(&f6.params).unwrap();
    Outcome::new(
        f6.mse <= 1e-3 && (g6 - 0.6).abs() <= 0.006 && f9.mse > f6.mse,
        format!(
            "K=11: MSE(0.6) = {:.3e} (≤ 1e-3), ĝ = {g6:.5} (±0.006), MSE(0.9) = {:.3e} (> MSE(0.6))",
            f6.mse, f9.mse
        ),
    )
}

fn external_mc_benchmark() -> Outcome {
    let grid = GridSpec::new(0.02, 100).unwrap();
    let medium = OpticalMedium::new(10.0, 90.0, 0.75).matched();
    let img = run(&medium, &HgPhase::new(0.75).unwrap(), &grid, 10_000_000, 1);
    let rd = img.tallies().total_diffuse;
    Outcome::new(
        (rd - 0.0974).abs() <= 0.002,
        format!("semi-infinite ({} cm), matched: Rd = {rd:.5}, expected 0.0974 ± 0.002", medium.thickness_cm),
    )
}

fn external_mc_benchmark_thin_slab() -> Outcome {
    let grid = GridSpec::new(0.02, 100).unwrap();
    let mut medium = OpticalMedium::new(10.0, 90.0, 0.75).matched();
    medium.thickness_cm = 0.02;
    let img = run(&medium, &HgPhase::new(0.75).unwrap(), &grid, 10_000_000, 1);
    let t = img.tallies();
    Outcome::new(
        (t.total_diffuse - 0.0974).abs() <= 0.002 && (t.transmitted - 0.661).abs() <= 0.002,
        format!(
            "slab d = 0.02 cm, matched: Rd = {:.5} (0.0974 ± 0.002), Tt = {:.5} (0.661 ± 0.002)",
            t.total_diffuse, t.transmitted
        ),
    )
}

fn closed_loop() -> Outcome {
    let grid = GridSpec::new(0.02, 100).unwrap();
    let medium = OpticalMedium::new(0.583, 48.195, 0.8);
    let fit = fit_gmm(&hg_target(0.8), 11, &FitOptions::default()).unwrap();
    let config = SimulationConfig::new(1_000_000, 8);
    let hg = simulate(&medium, &HgPhase::new(0.8).unwrap(), &grid, &config).unwrap();
    let gmm = run_forward_with_gmm(&fit.params, &medium, &grid, &config).unwrap();

    let (pa, pb) = (center_profile(&hg).unwrap(), center_profile(&gmm).unwrap());
    let row = grid.center() * grid.side();
    let (sa, sb) = (hg.std_error().unwrap(), gmm.std_error().unwrap());
    let mut outside = 0;
    let mut worst = 0.0f64;
    for (i, (a, b)) in pa.iter().zip(&pb).enumerate() {
        let sigma = sa[row + i].hypot(sb[row + i]);
        let diff = (a - b).abs();
        if sigma > 0.0 {
            worst = worst.max(diff / sigma);
        }
        if diff > 3.0 * sigma {
            outside += 1;
        }
    }
    Outcome::new(
        outside == 0,
        format!(
            "fit MSE {:.2e}; {} centre-row bins, {outside} outside 3σ, max |Δ|/σ = {worst:.2}",
            fit.mse,
            pa.len()
        ),
    )
}
