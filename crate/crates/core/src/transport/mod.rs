//! Photon-packet Monte Carlo in a homogeneous slab lit by an infinitely
//! narrow, normally incident beam at the origin.
//!
//! The slab occupies `0 ≤ z ≤ thickness` with `z` pointing into the tissue.
//! Packets escaping through `z = 0` are binned by their exit point on a
//! square Cartesian grid of `2Nr − 1` pixels per side whose centre pixel
//! (index `Nr − 1`) contains the beam. The radial element containing the
//! axis is shared by both half-axes, which gives the 99/199/299/399 sides
//! of the reference datasets.
//!
//! Each photon draws from its own ChaCha keystream selected by
//! `(seed, photon index)`, and photons are processed in fixed-size batches
//! merged in batch order, so results are bit-identical for any worker count.

mod photon;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gmm::{gmm_eval, truncate_normalize, GmmParams, ThetaGrid};
use crate::phase::{PhaseFunction, TabulatedPhase};

pub use photon::{fresnel_reflectance, rotate, specular_reflectance, PhotonPacket};
use photon::{Accumulator, Tracer};

/// Photons per batch. Batch boundaries fix the summation order.
pub const BATCH_PHOTONS: u64 = 1 << 14;

pub const DEFAULT_N_TISSUE: f64 = 1.37;
pub const DEFAULT_N_AMBIENT: f64 = 1.0;
pub const DEFAULT_THICKNESS_CM: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticalMedium {
    /// Absorption coefficient, cm⁻¹.
    pub mu_a: f64,
    /// Scattering coefficient, cm⁻¹.
    pub mu_s: f64,
    /// Anisotropy; only meaningful for a Henyey-Greenstein phase function.
    pub g: f64,
    pub n_tissue: f64,
    pub n_ambient: f64,
    pub thickness_cm: f64,
}

impl OpticalMedium {
    /// Slab with default refractive indices and a 100 cm thickness.
    pub fn new(mu_a: f64, mu_s: f64, g: f64) -> Self {
        Self {
            mu_a,
            mu_s,
            g,
            n_tissue: DEFAULT_N_TISSUE,
            n_ambient: DEFAULT_N_AMBIENT,
            thickness_cm: DEFAULT_THICKNESS_CM,
        }
    }

    pub fn matched(mut self) -> Self {
        self.n_ambient = self.n_tissue;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu_a >= 0.0) || !self.mu_a.is_finite() {
            return Err(Error::invalid(format!("mu_a = {} must be ≥ 0", self.mu_a)));
        }
        if !(self.mu_s > 0.0) || !self.mu_s.is_finite() {
            return Err(Error::invalid(format!("mu_s = {} must be > 0", self.mu_s)));
        }
        if !(self.thickness_cm > 0.0) {
            return Err(Error::invalid(format!("thickness {} must be > 0", self.thickness_cm)));
        }
        if !(self.n_tissue >= 1.0) || !(self.n_ambient >= 1.0) {
            return Err(Error::invalid(format!(
                "refractive indices ({}, {}) must be ≥ 1",
                self.n_tissue, self.n_ambient
            )));
        }
        Ok(())
    }
}

/// Pixel pitch and half-width of the reflectance grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub delta_r_mm: f64,
    pub n_r: usize,
}

impl GridSpec {
    pub fn new(delta_r_mm: f64, n_r: usize) -> Result<Self> {
        let g = Self { delta_r_mm, n_r };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_r_mm > 0.0) || !self.delta_r_mm.is_finite() {
            return Err(Error::invalid(format!("pixel pitch {} must be > 0", self.delta_r_mm)));
        }
        if self.n_r == 0 {
            return Err(Error::invalid("n_r must be at least 1"));
        }
        Ok(())
    }

    /// Image width and height, `2Nr − 1`.
    pub fn side(&self) -> usize {
        2 * self.n_r - 1
    }

    /// Row and column index of the beam pixel.
    pub fn center(&self) -> usize {
        self.n_r - 1
    }

    pub fn pixel_count(&self) -> usize {
        self.side() * self.side()
    }

    /// Reported field of view per side, `2NrΔr` in mm.
    pub fn fov_mm(&self) -> f64 {
        2.0 * self.n_r as f64 * self.delta_r_mm
    }

    pub fn delta_r_cm(&self) -> f64 {
        self.delta_r_mm * 0.1
    }

    pub fn pixel_area_cm2(&self) -> f64 {
        let d = self.delta_r_cm();
        d * d
    }

    /// Axis index `floor(v/Δr + c + ½)` for a coordinate in cm, where `c`
    /// is the centre index.
    pub fn axis_index(&self, v_cm: f64) -> Option<usize> {
        let i = (v_cm / self.delta_r_cm() + self.center() as f64 + 0.5).floor();
        if i >= 0.0 && i < self.side() as f64 {
            Some(i as usize)
        } else {
            None
        }
    }

    /// Row-major index of the pixel containing `(x, y)` (cm), rows along y.
    pub fn pixel_of(&self, x_cm: f64, y_cm: f64) -> Option<usize> {
        let ix = self.axis_index(x_cm)?;
        let iy = self.axis_index(y_cm)?;
        Some(iy * self.side() + ix)
    }
}

/// Scalar weight tallies as fractions of the launched weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Tallies {
    pub specular_reflectance: f64,
    /// All weight escaping the top surface, including `overflow`.
    pub total_diffuse: f64,
    pub absorbed: f64,
    pub transmitted: f64,
    /// Diffuse weight that left the top surface outside the image.
    pub overflow: f64,
}

impl Tallies {
    pub fn energy_sum(&self) -> f64 {
        self.specular_reflectance + self.total_diffuse + self.absorbed + self.transmitted
    }
}

/// Diffuse reflectance per unit area (cm⁻²) per launched photon on the
/// Cartesian grid, row-major with the beam in pixel `(Nr − 1, Nr − 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceImage {
    grid: GridSpec,
    pixels: Vec<f64>,
    /// Per-pixel standard error in the same units, when known.
    std_error: Option<Vec<f64>>,
    tallies: Tallies,
}

impl ReflectanceImage {
    pub fn new(grid: GridSpec) -> Self {
        Self {
            grid,
            pixels: vec![0.0; grid.pixel_count()],
            std_error: None,
            tallies: Tallies::default(),
        }
    }

    pub fn from_pixels(grid: GridSpec, pixels: Vec<f64>, tallies: Tallies) -> Result<Self> {
        if pixels.len() != grid.pixel_count() {
            return Err(Error::invalid(format!(
                "{} pixels given for a {}×{} grid",
                pixels.len(),
                grid.side(),
                grid.side()
            )));
        }
        Ok(Self {
            grid,
            pixels,
            std_error: None,
            tallies,
        })
    }

    /// Monte Carlo standard error of each pixel, `√Σw²` per area and photon.
    /// Only available for freshly simulated images.
    pub fn std_error(&self) -> Option<&[f64]> {
        self.std_error.as_deref()
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    pub fn side(&self) -> usize {
        self.grid.side()
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn tallies(&self) -> &Tallies {
        &self.tallies
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.side() + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let s = self.side();
        &self.pixels[row * s..(row + 1) * s]
    }

    /// Adds an exit of `weight` at `(x, y)` in cm: weight per pixel area to
    /// the containing pixel, or to the overflow tally outside the grid.
    pub fn record_exit(&mut self, x_cm: f64, y_cm: f64, weight: f64) {
        debug_assert!(weight >= 0.0);
        self.tallies.total_diffuse += weight;
        match self.grid.pixel_of(x_cm, y_cm) {
            Some(i) => self.pixels[i] += weight / self.grid.pixel_area_cm2(),
            None => self.tallies.overflow += weight,
        }
    }

    /// Sums of the four quadrants excluding the centre row and column,
    /// ordered (−x −y), (+x −y), (−x +y), (+x +y).
    pub fn quadrant_sums(&self) -> [f64; 4] {
        let n = self.grid.center();
        let mut q = [0.0; 4];
        for row in 0..self.side() {
            for col in 0..self.side() {
                if row == n || col == n {
                    continue;
                }
                let idx = usize::from(col > n) + 2 * usize::from(row > n);
                q[idx] += self.get(row, col);
            }
        }
        q
    }
}

/// Photon budget and parallelism for one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimulationConfig {
    pub n_photons: u64,
    pub seed: u64,
    pub workers: usize,
}

impl SimulationConfig {
    pub fn new(n_photons: u64, seed: u64) -> Self {
        Self {
            n_photons,
            seed,
            workers: 1,
        }
    }

    pub fn with_workers(mut self, workers: usize) -> Self {
        self.workers = workers;
        self
    }
}

fn run_batch<P: PhaseFunction>(tracer: &Tracer<'_, P>, batch: u64, n_photons: u64) -> Result<Accumulator> {
    let mut acc = Accumulator::new(tracer.grid.pixel_count());
    let start = batch * BATCH_PHOTONS;
    let end = (start + BATCH_PHOTONS).min(n_photons);
    for photon in start..end {
        tracer.trace(photon, &mut acc)?;
    }
    Ok(acc)
}

/// Traces `config.n_photons` packets and returns the normalized image.
pub fn simulate<P: PhaseFunction + Sync>(
    medium: &OpticalMedium,
    phase: &P,
    grid: &GridSpec,
    config: &SimulationConfig,
) -> Result<ReflectanceImage> {
    medium.validate()?;
    grid.validate()?;
    if config.n_photons == 0 {
        return Err(Error::invalid("at least one photon is required"));
    }
    let workers = config.workers.max(1);
    let tracer = Tracer {
        medium,
        phase,
        grid,
        seed: config.seed,
    };
    let batches = config.n_photons.div_ceil(BATCH_PHOTONS);
    let mut total = Accumulator::new(grid.pixel_count());

    if workers == 1 {
        for b in 0..batches {
            total.merge(&run_batch(&tracer, b, config.n_photons)?);
        }
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {workers} workers: {e}")))?;
        let mut next = 0;
        while next < batches {
            let wave_end = (next + workers as u64).min(batches);
            let results: Vec<Result<Accumulator>> = pool.install(|| {
                (next..wave_end)
                    .into_par_iter()
                    .map(|b| run_batch(&tracer, b, config.n_photons))
                    .collect()
            });
            for r in results {
                total.merge(&r?);
            }
            next = wave_end;
        }
    }

    let n = config.n_photons as f64;
    let scale = 1.0 / (grid.pixel_area_cm2() * n);
    let pixels = total.pixels.iter().map(|w| w * scale).collect();
    let std_error = total.pixels_sq.iter().map(|w2| w2.sqrt() * scale).collect();
    let tallies = Tallies {
        specular_reflectance: total.specular / n,
        total_diffuse: total.diffuse / n,
        absorbed: total.absorbed / n,
        transmitted: total.transmitted / n,
        overflow: total.overflow / n,
    };
    let mut image = ReflectanceImage::from_pixels(*grid, pixels, tallies)?;
    image.std_error = Some(std_error);
    Ok(image)
}

/// Tabulates a mixture on the shared θ grid for use by the simulator.
pub fn tabulate_gmm(params: &GmmParams) -> Result<TabulatedPhase> {
    let grid = ThetaGrid::default();
    let pdf = truncate_normalize(&gmm_eval(params, &grid.angles()))?;
    TabulatedPhase::new(pdf.into_values())
}

/// Simulates with the tabulated, truncated and normalized mixture.
pub fn run_forward_with_gmm(
    params: &GmmParams,
    medium: &OpticalMedium,
    grid: &GridSpec,
    config: &SimulationConfig,
) -> Result<ReflectanceImage> {
    let phase = tabulate_gmm(params)?;
    simulate(medium, &phase, grid, config)
}
