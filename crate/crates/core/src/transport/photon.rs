//! Per-photon hop, drop, spin and boundary handling.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GridSpec, OpticalMedium};
use crate::error::{Error, Result};
use crate::phase::PhaseFunction;

pub(crate) const ROULETTE_THRESHOLD: f64 = 1e-4;
pub(crate) const ROULETTE_SURVIVAL: f64 = 0.1;

const COS_ZERO: f64 = 1e-12;
const COS_90: f64 = 1e-6;

/// Packet state while it is being traced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotonPacket {
    pub position: [f64; 3],
    pub direction: [f64; 3],
    pub weight: f64,
    pub alive: bool,
}

impl PhotonPacket {
    fn launch(weight: f64) -> Self {
        Self {
            position: [0.0; 3],
            direction: [0.0, 0.0, 1.0],
            weight,
            alive: true,
        }
    }

    fn advance(&mut self, s: f64) {
        for (p, u) in self.position.iter_mut().zip(self.direction) {
            *p += s * u;
        }
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite()
            && self.position.iter().all(|v| v.is_finite())
            && self.direction.iter().all(|v| v.is_finite())
    }
}

/// Specular reflectance of a normally incident beam.
pub fn specular_reflectance(n_ambient: f64, n_tissue: f64) -> f64 {
    let r = (n_ambient - n_tissue) / (n_ambient + n_tissue);
    r * r
}

/// Unpolarized Fresnel reflectance for light travelling from index `n1`
/// into `n2` with incidence cosine `cos_i`.
pub fn fresnel_reflectance(n1: f64, n2: f64, cos_i: f64) -> f64 {
    if n1 == n2 {
        return 0.0;
    }
    if cos_i > 1.0 - COS_ZERO {
        return specular_reflectance(n1, n2);
    }
    if cos_i < COS_90 {
        return 1.0;
    }
    let sin_i = (1.0 - cos_i * cos_i).sqrt();
    let sin_t = n1 * sin_i / n2;
    if sin_t >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin_t * sin_t).sqrt();
    let cap = cos_i * cos_t - sin_i * sin_t;
    let cam = cos_i * cos_t + sin_i * sin_t;
    let sap = sin_i * cos_t + cos_i * sin_t;
    let sam = sin_i * cos_t - cos_i * sin_t;
    0.5 * sam * sam * (cam * cam + cap * cap) / (sap * sap * cam * cam)
}

/// Rotates `dir` by deflection cosine `cos_t` and azimuth `psi`.
#[inline]
pub fn rotate(dir: [f64; 3], cos_t: f64, psi: f64) -> [f64; 3] {
    let [ux, uy, uz] = dir;
    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
    let (sin_p, cos_p) = psi.sin_cos();
    if uz.abs() > 1.0 - COS_ZERO {
        [sin_t * cos_p, sin_t * sin_p, cos_t * uz.signum()]
    } else {
        let tmp = (1.0 - uz * uz).sqrt();
        [
            sin_t * (ux * uz * cos_p - uy * sin_p) / tmp + ux * cos_t,
            sin_t * (uy * uz * cos_p + ux * sin_p) / tmp + uy * cos_t,
            -sin_t * cos_p * tmp + uz * cos_t,
        ]
    }
}

/// Raw (unnormalized) weight sums gathered by one batch of photons.
#[derive(Debug, Clone)]
pub(crate) struct Accumulator {
    pub pixels: Vec<f64>,
    /// Sum of squared exit weights per pixel, for standard errors.
    pub pixels_sq: Vec<f64>,
    pub specular: f64,
    pub diffuse: f64,
    pub absorbed: f64,
    pub transmitted: f64,
    pub overflow: f64,
}

impl Accumulator {
    pub fn new(pixels: usize) -> Self {
        Self {
            pixels: vec![0.0; pixels],
            pixels_sq: vec![0.0; pixels],
            specular: 0.0,
            diffuse: 0.0,
            absorbed: 0.0,
            transmitted: 0.0,
            overflow: 0.0,
        }
    }

    pub fn merge(&mut self, other: &Accumulator) {
        for (a, b) in self.pixels.iter_mut().zip(&other.pixels) {
            *a += b;
        }
        for (a, b) in self.pixels_sq.iter_mut().zip(&other.pixels_sq) {
            *a += b;
        }
        self.specular += other.specular;
        self.diffuse += other.diffuse;
        self.absorbed += other.absorbed;
        self.transmitted += other.transmitted;
        self.overflow += other.overflow;
    }

    fn record_exit(&mut self, grid: &GridSpec, x: f64, y: f64, w: f64) {
        self.diffuse += w;
        match grid.pixel_of(x, y) {
            Some(idx) => {
                self.pixels[idx] += w;
                self.pixels_sq[idx] += w * w;
            }
            None => self.overflow += w,
        }
    }
}

/// Per-photon random stream: a ChaCha keystream selected by the photon index.
fn photon_rng(seed: u64, photon: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(photon);
    rng
}

/// Uniform variate in (0, 1].
#[inline]
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    1.0 - rng.random::<f64>()
}

pub(crate) struct Tracer<'a, P> {
    pub medium: &'a OpticalMedium,
    pub phase: &'a P,
    pub grid: &'a GridSpec,
    pub seed: u64,
}

impl<P: PhaseFunction> Tracer<'_, P> {
    pub fn trace(&self, photon: u64, acc: &mut Accumulator) -> Result<()> {
        let m = self.medium;
        let mu_t = m.mu_a + m.mu_s;
        let albedo_loss = m.mu_a / mu_t;
        let depth = m.thickness_cm;
        let mut rng = photon_rng(self.seed, photon);

        let r_sp = specular_reflectance(m.n_ambient, m.n_tissue);
        acc.specular += r_sp;
        let mut packet = PhotonPacket::launch(1.0 - r_sp);
        let mut step_left = 0.0;

        while packet.alive {
            if step_left == 0.0 {
                step_left = -open_unit(&mut rng).ln();
            }
            let s = step_left / mu_t;
            let uz = packet.direction[2];
            let z = packet.position[2];
            let to_boundary = if uz < 0.0 {
                -z / uz
            } else if uz > 0.0 {
                (depth - z) / uz
            } else {
                f64::INFINITY
            };

            if s > to_boundary {
                packet.advance(to_boundary);
                step_left -= to_boundary * mu_t;
                let top = uz < 0.0;
                packet.position[2] = if top { 0.0 } else { depth };
                let r = fresnel_reflectance(m.n_tissue, m.n_ambient, uz.abs());
                if rng.random::<f64>() <= r {
                    packet.direction[2] = -uz;
                } else {
                    if top {
                        acc.record_exit(self.grid, packet.position[0], packet.position[1], packet.weight);
                    } else {
                        acc.transmitted += packet.weight;
                    }
                    packet.alive = false;
                    continue;
                }
            } else {
                packet.advance(s);
                step_left = 0.0;
                let dw = packet.weight * albedo_loss;
                acc.absorbed += dw;
                packet.weight -= dw;

                let cos_t = self.phase.sample_cos(rng.random::<f64>());
                let psi = 2.0 * PI * rng.random::<f64>();
                packet.direction = rotate(packet.direction, cos_t, psi);
            }

            if !packet.is_finite() {
                return Err(Error::SimulationIntegrity {
                    photon,
                    detail: format!("non-finite packet state {packet:?}"),
                });
            }

            if packet.weight < ROULETTE_THRESHOLD && packet.weight > 0.0 {
                if rng.random::<f64>() <= ROULETTE_SURVIVAL {
                    packet.weight /= ROULETTE_SURVIVAL;
                } else {
                    packet.alive = false;
                }
            } else if packet.weight == 0.0 {
                packet.alive = false;
            }
        }
        Ok(())
    }
}
