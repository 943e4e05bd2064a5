//! Scattering phase functions over the deflection angle θ ∈ [0, π].
//!
//! Densities are expressed per unit θ (the sinθ Jacobian folded in), so every
//! phase function integrates to one over [0, π] and its anisotropy is the
//! θ-integral of density × cosθ.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::quadrature::{self, FINE_INTERVALS};

/// Angular grid size shared with the Gaussian-mixture loss.
pub const DEFAULT_TABLE_BINS: usize = 1000;
/// Length of the inverse-CDF lookup table.
pub const CDF_TABLE_LEN: usize = 4096;

/// Largest tolerated deviation from unit mass before anisotropy is refused.
const NORMALIZATION_SLACK: f64 = 1e-3;

/// A scattering law that can be evaluated over θ and sampled for a
/// deflection cosine.
pub trait PhaseFunction {
    /// Normalized density per unit θ on [0, π].
    fn density_theta(&self, theta: f64) -> f64;

    /// Deflection cosine μ = cosθ for a uniform variate `xi` in [0, 1).
    fn sample_cos(&self, xi: f64) -> f64;

    /// ∫₀^π density(θ)·weight(θ) dθ by a fine composite rule.
    fn integrate_density<W: Fn(f64) -> f64>(&self, weight: W) -> f64
    where
        Self: Sized,
    {
        quadrature::simpson(
            |t| self.density_theta(t) * weight(t),
            0.0,
            PI,
            FINE_INTERVALS,
        )
    }
}

fn check_g(g: f64) -> Result<()> {
    if !g.is_finite() || g.abs() >= 1.0 {
        return Err(Error::invalid(format!("anisotropy g = {g} must satisfy |g| < 1")));
    }
    Ok(())
}

/// Henyey-Greenstein density per unit μ = cosθ.
pub fn hg_pdf_mu(g: f64, mu: f64) -> Result<f64> {
    check_g(g)?;
    if !(-1.0..=1.0).contains(&mu) {
        return Err(Error::invalid(format!("cosine {mu} outside [-1, 1]")));
    }
    Ok(hg_mu_unchecked(g, mu))
}

#[inline]
fn hg_mu_unchecked(g: f64, mu: f64) -> f64 {
    let g2 = g * g;
    let base = 1.0 + g2 - 2.0 * g * mu;
    0.5 * (1.0 - g2) / (base * base.sqrt())
}

/// Henyey-Greenstein density per unit θ, `2π·p(θ)·sinθ`.
pub fn hg_pdf_theta(g: f64, theta: f64) -> Result<f64> {
    check_g(g)?;
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::invalid(format!("angle {theta} outside [0, π]")));
    }
    Ok(hg_theta_unchecked(g, theta))
}

#[inline]
fn hg_theta_unchecked(g: f64, theta: f64) -> f64 {
    if theta <= 0.0 || theta >= PI {
        return 0.0;
    }
    hg_mu_unchecked(g, theta.cos()) * theta.sin()
}

/// Closed-form cumulative distribution of μ under Henyey-Greenstein.
pub fn hg_cdf_mu(g: f64, mu: f64) -> f64 {
    let mu = mu.clamp(-1.0, 1.0);
    if g == 0.0 {
        return 0.5 * (mu + 1.0);
    }
    let g2 = g * g;
    let base = 1.0 + g2 - 2.0 * g * mu;
    ((1.0 - g2) / (2.0 * g) * (1.0 / base.sqrt() - 1.0 / (1.0 + g))).clamp(0.0, 1.0)
}

/// Inverse-CDF draw of the deflection cosine.
#[inline]
pub fn sample_hg(g: f64, xi: f64) -> f64 {
    debug_assert!(g.abs() < 1.0);
    if g == 0.0 {
        return 2.0 * xi - 1.0;
    }
    let g2 = g * g;
    let t = (1.0 - g2) / (1.0 - g + 2.0 * g * xi);
    ((1.0 + g2 - t * t) / (2.0 * g)).clamp(-1.0, 1.0)
}

/// Henyey-Greenstein phase function with anisotropy `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HgPhase {
    g: f64,
}

impl HgPhase {
    pub fn new(g: f64) -> Result<Self> {
        check_g(g)?;
        Ok(Self { g })
    }

    pub fn g(&self) -> f64 {
        self.g
    }
}

impl PhaseFunction for HgPhase {
    fn density_theta(&self, theta: f64) -> f64 {
        hg_theta_unchecked(self.g, theta)
    }

    #[inline]
    fn sample_cos(&self, xi: f64) -> f64 {
        sample_hg(self.g, xi)
    }
}

/// Piecewise-constant density on uniform bins over [0, π] with a
/// precomputed inverse-CDF table.
///
/// Bin `i` covers `[iΔθ, (i+1)Δθ)` and carries the density value given for
/// its midpoint `(i + ½)Δθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPhase {
    density: Vec<f64>,
    cdf_table: Vec<f64>,
}

impl TabulatedPhase {
    /// Builds a tabulation from midpoint densities, rescaling them to unit
    /// mass.
    pub fn new(density: Vec<f64>) -> Result<Self> {
        Self::with_table_len(density, CDF_TABLE_LEN)
    }

    pub fn with_table_len(mut density: Vec<f64>, table_len: usize) -> Result<Self> {
        if density.is_empty() {
            return Err(Error::invalid("tabulated phase needs at least one bin"));
        }
        if table_len < 2 {
            return Err(Error::invalid("inverse-CDF table needs at least two entries"));
        }
        if let Some(bad) = density.iter().find(|d| !d.is_finite() || **d < 0.0) {
            return Err(Error::invalid(format!("density value {bad} is not a finite nonnegative number")));
        }
        let step = PI / density.len() as f64;
        let mass: f64 = density.iter().sum::<f64>() * step;
        if mass <= 0.0 {
            return Err(Error::DegenerateInput("tabulated density is identically zero".into()));
        }
        density.iter_mut().for_each(|d| *d /= mass);

        let mut edges = Vec::with_capacity(density.len() + 1);
        edges.push(0.0);
        let mut acc = 0.0;
        for d in &density {
            acc += d * step;
            edges.push(acc);
        }
        let total = acc;

        let mut cdf_table = Vec::with_capacity(table_len);
        let mut bin = 0usize;
        for j in 0..table_len {
            let q = total * j as f64 / (table_len - 1) as f64;
            while bin + 1 < density.len() && (edges[bin + 1] <= q || density[bin] == 0.0) {
                bin += 1;
            }
            let theta = if density[bin] > 0.0 {
                bin as f64 * step + ((q - edges[bin]) / density[bin]).clamp(0.0, step)
            } else {
                (bin + 1) as f64 * step
            };
            cdf_table.push(theta.clamp(0.0, PI));
        }
        cdf_table[0] = 0.0;
        cdf_table[table_len - 1] = PI;
        for j in 1..table_len {
            if cdf_table[j] < cdf_table[j - 1] {
                cdf_table[j] = cdf_table[j - 1];
            }
        }

        Ok(Self { density, cdf_table })
    }

    /// Tabulates `phase` at the midpoints of `bins` uniform bins.
    pub fn from_phase<P: PhaseFunction>(phase: &P, bins: usize) -> Result<Self> {
        let density = quadrature::midpoints(bins)
            .into_iter()
            .map(|t| phase.density_theta(t))
            .collect();
        Self::new(density)
    }

    pub fn bins(&self) -> usize {
        self.density.len()
    }

    pub fn bin_width(&self) -> f64 {
        PI / self.density.len() as f64
    }

    pub fn theta_grid(&self) -> Vec<f64> {
        quadrature::midpoints(self.density.len())
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_table(&self) -> &[f64] {
        &self.cdf_table
    }

    /// Cumulative probability of θ under the piecewise-constant density.
    pub fn cdf(&self, theta: f64) -> f64 {
        let step = self.bin_width();
        let theta = theta.clamp(0.0, PI);
        let full = ((theta / step) as usize).min(self.density.len());
        let below: f64 = self.density[..full].iter().sum::<f64>() * step;
        let partial = if full < self.density.len() {
            self.density[full] * (theta - full as f64 * step)
        } else {
            0.0
        };
        (below + partial).min(1.0)
    }

    /// Inverse-CDF lookup with linear interpolation between table nodes.
    #[inline]
    pub fn sample_theta(&self, xi: f64) -> f64 {
        let last = self.cdf_table.len() - 1;
        let u = xi.clamp(0.0, 1.0) * last as f64;
        let j = (u as usize).min(last - 1);
        let frac = u - j as f64;
        let lo = self.cdf_table[j];
        lo + frac * (self.cdf_table[j + 1] - lo)
    }
}

impl PhaseFunction for TabulatedPhase {
    fn density_theta(&self, theta: f64) -> f64 {
        if !(0.0..=PI).contains(&theta) {
            return 0.0;
        }
        let bin = ((theta / self.bin_width()) as usize).min(self.density.len() - 1);
        self.density[bin]
    }

    // θ is drawn at quantile 1 − ξ so that μ increases with ξ, as it does
    // for the Henyey-Greenstein sampler; runs sharing a seed stay paired.
    #[inline]
    fn sample_cos(&self, xi: f64) -> f64 {
        self.sample_theta(1.0 - xi).cos()
    }

    // Integrates bin by bin so no quadrature node straddles a jump.
    fn integrate_density<W: Fn(f64) -> f64>(&self, weight: W) -> f64 {
        let step = self.bin_width();
        let per_bin = (FINE_INTERVALS / self.density.len()).max(2);
        self.density
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != 0.0)
            .map(|(i, d)| {
                let a = i as f64 * step;
                d * quadrature::simpson(&weight, a, a + step, per_bin)
            })
            .sum()
    }
}

/// Runtime choice of phase function for the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum Phase {
    Hg(HgPhase),
    Tabulated(TabulatedPhase),
}

impl PhaseFunction for Phase {
    fn density_theta(&self, theta: f64) -> f64 {
        match self {
            Phase::Hg(p) => p.density_theta(theta),
            Phase::Tabulated(p) => p.density_theta(theta),
        }
    }

    #[inline]
    fn sample_cos(&self, xi: f64) -> f64 {
        match self {
            Phase::Hg(p) => p.sample_cos(xi),
            Phase::Tabulated(p) => p.sample_cos(xi),
        }
    }

    fn integrate_density<W: Fn(f64) -> f64>(&self, weight: W) -> f64 {
        match self {
            Phase::Hg(p) => p.integrate_density(weight),
            Phase::Tabulated(p) => p.integrate_density(weight),
        }
    }
}

impl From<HgPhase> for Phase {
    fn from(p: HgPhase) -> Self {
        Phase::Hg(p)
    }
}

impl From<TabulatedPhase> for Phase {
    fn from(p: TabulatedPhase) -> Self {
        Phase::Tabulated(p)
    }
}

/// Inverse-CDF draw of θ from a tabulated phase function.
pub fn sample_tabulated(phase: &TabulatedPhase, xi: f64) -> f64 {
    phase.sample_theta(xi)
}

/// Mean deflection cosine ⟨cosθ⟩ of a normalized phase function.
pub fn anisotropy_of<P: PhaseFunction>(phase: &P) -> Result<f64> {
    let mass = phase.integrate_density(|_| 1.0);
    if (mass - 1.0).abs() > NORMALIZATION_SLACK {
        return Err(Error::PreconditionViolation(format!(
            "phase function integrates to {mass}, not 1"
        )));
    }
    Ok(phase.integrate_density(f64::cos))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hg_mu_examples() {
        assert_abs_diff_eq!(hg_pdf_mu(0.0, 0.3).unwrap(), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(hg_pdf_mu(0.5, 1.0).unwrap(), 3.0, epsilon = 1e-13);
        // 0.5·0.19/3.61^1.5 evaluated at 40 digits.
        assert_abs_diff_eq!(
            hg_pdf_mu(0.9, -1.0).unwrap(),
            0.013_850_415_512_465_374,
            epsilon = 1e-15
        );
    }

    #[test]
    fn hg_rejects_bad_g() {
        assert!(matches!(hg_pdf_mu(1.0, 0.0), Err(Error::InvalidParameter(_))));
        assert!(matches!(hg_pdf_mu(-1.2, 0.0), Err(Error::InvalidParameter(_))));
        assert!(HgPhase::new(f64::NAN).is_err());
    }

    #[test]
    fn hg_theta_examples() {
        assert_abs_diff_eq!(hg_pdf_theta(0.0, PI / 2.0).unwrap(), 0.5, epsilon = 1e-15);
        assert_eq!(hg_pdf_theta(0.0, 0.0).unwrap(), 0.0);
        assert_eq!(hg_pdf_theta(0.7, PI).unwrap(), 0.0);
        // 2π·p(0.1)·sin(0.1) evaluated at 40 digits.
        assert_abs_diff_eq!(
            hg_pdf_theta(0.8, 0.1).unwrap(),
            1.709_137_635_887_524_4,
            epsilon = 1e-13
        );
        assert!(hg_pdf_theta(0.5, -0.1).is_err());
        assert!(hg_pdf_theta(0.5, 3.2).is_err());
    }

    #[test]
    fn sample_hg_examples() {
        assert_abs_diff_eq!(sample_hg(0.0, 0.75), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(sample_hg(0.5, 0.5), 0.6875, epsilon = 1e-15);
        let top = sample_hg(0.8, 1.0 - 1e-12);
        assert!(top <= 1.0 && (1.0 - top) < 1e-9, "{top}");
        assert!(sample_hg(0.8, 0.0) >= -1.0);
    }

    #[test]
    fn change_of_variables_identity() {
        for &g in &[-0.5, 0.0, 0.3, 0.9] {
            for i in 1..100 {
                let t = PI * i as f64 / 100.0;
                let lhs = hg_pdf_theta(g, t).unwrap();
                let rhs = hg_pdf_mu(g, t.cos()).unwrap() * t.sin();
                assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn inverse_cdf_round_trip() {
        for &g in &[-0.7, 0.0, 0.3, 0.6, 0.8, 0.9, 0.99] {
            for i in 0..=1000 {
                let xi = i as f64 / 1000.0 * (1.0 - 1e-12);
                let mu = sample_hg(g, xi);
                assert_abs_diff_eq!(hg_cdf_mu(g, mu), xi, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn hg_normalization_and_anisotropy() {
        for &g in &[0.0, 0.3, 0.6, 0.7, 0.8, 0.9] {
            let p = HgPhase::new(g).unwrap();
            let mass = p.integrate_density(|_| 1.0);
            assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-6);
            assert_abs_diff_eq!(anisotropy_of(&p).unwrap(), g, epsilon = 1e-4);
        }
        let iso = HgPhase::new(0.0).unwrap();
        assert_abs_diff_eq!(anisotropy_of(&iso).unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn uniform_tabulation_median() {
        let t = TabulatedPhase::new(vec![1.0; 1000]).unwrap();
        assert_abs_diff_eq!(sample_tabulated(&t, 0.5), PI / 2.0, epsilon = 1e-9);
        assert_eq!(sample_tabulated(&t, 0.0), 0.0);
        assert_abs_diff_eq!(sample_tabulated(&t, 1.0), PI, epsilon = 1e-12);
        for d in t.density() {
            assert_abs_diff_eq!(*d, 1.0 / PI, epsilon = 1e-12);
        }
    }

    #[test]
    fn tabulation_is_normalized_and_monotone() {
        let hg = HgPhase::new(0.9).unwrap();
        let t = TabulatedPhase::from_phase(&hg, DEFAULT_TABLE_BINS).unwrap();
        let mass: f64 = t.density().iter().sum::<f64>() * t.bin_width();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
        assert_eq!(t.cdf_table().len(), CDF_TABLE_LEN);
        assert!(t.cdf_table().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(t.cdf_table()[0], 0.0);
        assert_eq!(*t.cdf_table().last().unwrap(), PI);
    }

    #[test]
    fn hg_tabulation_median_matches_quadrature_root() {
        // Root of ∫₀^θ p̃ = ½ for g = 0.7 found with 40-digit quadrature.
        let median = 0.498_083_015_858_365_8;
        let t = TabulatedPhase::from_phase(&HgPhase::new(0.7).unwrap(), 1000).unwrap();
        assert_abs_diff_eq!(sample_tabulated(&t, 0.5), median, epsilon = 2e-3);
    }

    #[test]
    fn zero_bins_are_skipped() {
        let mut d = vec![0.0; 10];
        d[4] = 1.0;
        d[5] = 1.0;
        let t = TabulatedPhase::new(d).unwrap();
        let step = PI / 10.0;
        assert_abs_diff_eq!(t.sample_theta(0.25), 4.5 * step, epsilon = 1e-3);
        assert_abs_diff_eq!(t.sample_theta(0.5), 5.0 * step, epsilon = 1e-3);
        assert_abs_diff_eq!(anisotropy_of(&t).unwrap(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn tabulation_rejects_bad_density() {
        assert!(matches!(TabulatedPhase::new(vec![0.0; 5]), Err(Error::DegenerateInput(_))));
        assert!(TabulatedPhase::new(vec![1.0, -1.0]).is_err());
        assert!(TabulatedPhase::new(vec![]).is_err());
    }

    struct Unnormalized;
    impl PhaseFunction for Unnormalized {
        fn density_theta(&self, _: f64) -> f64 {
            1.0
        }
        fn sample_cos(&self, xi: f64) -> f64 {
            xi
        }
    }

    #[test]
    fn anisotropy_requires_normalization() {
        assert!(matches!(anisotropy_of(&Unnormalized), Err(Error::PreconditionViolation(_))));
    }
}
