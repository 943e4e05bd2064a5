//! Gaussian-mixture phase functions evaluated on a uniform θ grid.
//!
//! A mixture is evaluated over the untruncated real line, then truncated to
//! the [0, π] grid and renormalized by a midpoint-Riemann sum. All losses and
//! anisotropy estimates use that same grid.

mod fit;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase::PhaseFunction;
use crate::quadrature;

pub use fit::{fit_gmm, refine_gmm, FitOptions, GmmFit};

/// Number of θ midpoints in the shared loss grid.
pub const GRID_POINTS: usize = 1000;
/// Lower bound of the decoded standard deviation, radians.
pub const SIGMA_MIN: f64 = 0.01;
/// Upper bound of the decoded standard deviation, radians.
pub const SIGMA_MAX: f64 = PI;

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Uniform midpoint grid over [0, π].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThetaGrid {
    points: usize,
}

impl Default for ThetaGrid {
    fn default() -> Self {
        Self { points: GRID_POINTS }
    }
}

impl ThetaGrid {
    pub fn new(points: usize) -> Result<Self> {
        if points == 0 {
            return Err(Error::invalid("theta grid needs at least one point"));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points
    }

    pub fn is_empty(&self) -> bool {
        self.points == 0
    }

    pub fn step(&self) -> f64 {
        PI / self.points as f64
    }

    pub fn angles(&self) -> Vec<f64> {
        quadrature::midpoints(self.points)
    }
}

/// Mixture of `K` Gaussians in θ. Weights always sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GmmJson", into = "GmmJson")]
pub struct GmmParams {
    weights: Vec<f64>,
    means: Vec<f64>,
    sigmas: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GmmJson {
    #[serde(rename = "K")]
    k: usize,
    pi: Vec<f64>,
    m: Vec<f64>,
    sigma: Vec<f64>,
}

impl TryFrom<GmmJson> for GmmParams {
    type Error = Error;

    fn try_from(j: GmmJson) -> Result<Self> {
        if j.pi.len() != j.k {
            return Err(Error::invalid(format!("K = {} but {} weights given", j.k, j.pi.len())));
        }
        GmmParams::new(j.pi, j.m, j.sigma)
    }
}

impl From<GmmParams> for GmmJson {
    fn from(p: GmmParams) -> Self {
        GmmJson {
            k: p.k(),
            pi: p.weights,
            m: p.means,
            sigma: p.sigmas,
        }
    }
}

impl GmmParams {
    /// Validates and stores a mixture. Weights are rescaled to sum to one.
    pub fn new(weights: Vec<f64>, means: Vec<f64>, sigmas: Vec<f64>) -> Result<Self> {
        let k = weights.len();
        if k == 0 {
            return Err(Error::invalid("a mixture needs at least one component"));
        }
        if means.len() != k || sigmas.len() != k {
            return Err(Error::invalid(format!(
                "component arrays differ in length: {} weights, {} means, {} sigmas",
                k,
                means.len(),
                sigmas.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("mixing weight {w} is negative or non-finite")));
        }
        if let Some(m) = means.iter().find(|m| !(0.0..=PI).contains(*m)) {
            return Err(Error::invalid(format!("component mean {m} outside [0, π]")));
        }
        if let Some(s) = sigmas.iter().find(|s| !s.is_finite() || **s <= 0.0) {
            return Err(Error::invalid(format!("component sigma {s} must be positive")));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid("mixing weights sum to zero"));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            weights,
            means,
            sigmas,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Untruncated mixture density at one angle.
    pub fn density(&self, theta: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.means)
            .zip(&self.sigmas)
            .map(|((w, m), s)| w * normal_pdf(theta, *m, *s))
            .sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mixture serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

#[inline]
pub(crate) fn normal_pdf(x: f64, mean: f64, sigma: f64) -> f64 {
    let z = (x - mean) / sigma;
    INV_SQRT_2PI / sigma * (-0.5 * z * z).exp()
}

/// Normalized density on a uniform midpoint grid over [0, π].
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePdf {
    values: Vec<f64>,
}

impl DiscretePdf {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn grid(&self) -> ThetaGrid {
        ThetaGrid {
            points: self.values.len(),
        }
    }

    /// Tabulates a phase function on the grid and renormalizes it.
    pub fn from_phase<P: PhaseFunction>(phase: &P, grid: ThetaGrid) -> Result<Self> {
        let raw: Vec<f64> = grid.angles().iter().map(|t| phase.density_theta(*t)).collect();
        truncate_normalize(&raw)
    }

    /// Riemann estimate of ⟨cosθ⟩.
    pub fn mean_cosine(&self) -> f64 {
        let grid = self.grid();
        let step = grid.step();
        let g: f64 = grid
            .angles()
            .iter()
            .zip(&self.values)
            .map(|(t, p)| p * t.cos())
            .sum::<f64>()
            * step;
        g.clamp(-1.0, 1.0)
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Pointwise mixture density at each angle, without truncation.
pub fn gmm_eval(params: &GmmParams, thetas: &[f64]) -> Vec<f64> {
    thetas.iter().map(|t| params.density(*t)).collect()
}

/// Restricts raw densities on a midpoint grid over [0, π] to unit mass.
pub fn truncate_normalize(raw: &[f64]) -> Result<DiscretePdf> {
    if raw.is_empty() {
        return Err(Error::invalid("empty density vector"));
    }
    if let Some(v) = raw.iter().find(|v| !v.is_finite() || **v < 0.0) {
        return Err(Error::invalid(format!("density value {v} is negative or non-finite")));
    }
    let step = PI / raw.len() as f64;
    let mass = raw.iter().sum::<f64>() * step;
    if mass <= 0.0 {
        return Err(Error::DegenerateInput("density vanishes on the entire grid".into()));
    }
    Ok(DiscretePdf {
        values: raw.iter().map(|v| v / mass).collect(),
    })
}

/// Mean squared difference over the grid points.
pub fn grid_mse(a: &DiscretePdf, b: &DiscretePdf) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "grid mismatch: {} vs {} points",
            a.len(),
            b.len()
        )));
    }
    let sum: f64 = a
        .values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(sum / a.len() as f64)
}

/// Truncated, normalized mixture on the shared grid.
pub fn gmm_pdf(params: &GmmParams, grid: ThetaGrid) -> Result<DiscretePdf> {
    truncate_normalize(&gmm_eval(params, &grid.angles()))
}

/// Anisotropy estimated from a mixture on the default grid.
pub fn g_hat(params: &GmmParams) -> Result<f64> {
    Ok(gmm_pdf(params, ThetaGrid::default())?.mean_cosine())
}

/// Maps `3K` regressor outputs in [0, 1] to a mixture.
///
/// Layout: weights `raw[..K]`, means `raw[K..2K]`, sigmas `raw[2K..]`.
pub fn decode_output(raw: &[f64], k: usize) -> Result<GmmParams> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if raw.len() != 3 * k {
        return Err(Error::invalid(format!(
            "expected {} outputs for K = {k}, got {}",
            3 * k,
            raw.len()
        )));
    }
    if let Some(v) = raw.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid(format!("output {v} outside [0, 1]")));
    }
    let (w, rest) = raw.split_at(k);
    let (m, s) = rest.split_at(k);
    let total: f64 = w.iter().sum();
    let weights = if total > 0.0 {
        w.iter().map(|x| x / total).collect()
    } else {
        vec![1.0 / k as f64; k]
    };
    let means = m.iter().map(|x| x * PI).collect();
    let sigmas = s
        .iter()
        .map(|x| SIGMA_MIN + x * (SIGMA_MAX - SIGMA_MIN))
        .collect();
    GmmParams::new(weights, means, sigmas)
}

/// Inverse of [`decode_output`] for mixtures whose sigmas lie in the decoded
/// range. Weights are emitted as-is, which decodes back to the same mixture.
pub fn encode_output(params: &GmmParams) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(3 * params.k());
    out.extend_from_slice(params.weights());
    out.extend(params.means().iter().map(|m| m / PI));
    for s in params.sigmas() {
        if !(SIGMA_MIN..=SIGMA_MAX).contains(s) {
            return Err(Error::invalid(format!(
                "sigma {s} outside decodable range [{SIGMA_MIN}, {SIGMA_MAX}]"
            )));
        }
        out.push((s - SIGMA_MIN) / (SIGMA_MAX - SIGMA_MIN));
    }
    Ok(out)
}

/// `|g − ĝ| / g × 100`.
pub fn relative_g_error(g_true: f64, g_est: f64) -> Result<f64> {
    if !(g_true > 0.0) {
        return Err(Error::invalid(format!("reference anisotropy {g_true} must be positive")));
    }
    Ok((g_true - g_est).abs() / g_true * 100.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase::HgPhase;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn single(m: f64, s: f64) -> GmmParams {
        GmmParams::new(vec![1.0], vec![m], vec![s]).unwrap()
    }

    #[test]
    fn standard_normal_peak() {
        let v = gmm_eval(&single(0.0, 1.0), &[0.0]);
        assert_abs_diff_eq!(v[0], 0.398_942_280_401_432_7, epsilon = 1e-15);
    }

    #[test]
    fn equal_components_are_linear() {
        let one = single(1.0, 0.3);
        let two = GmmParams::new(vec![0.5, 0.5], vec![1.0, 1.0], vec![0.3, 0.3]).unwrap();
        let grid = ThetaGrid::default().angles();
        for (a, b) in gmm_eval(&one, &grid).iter().zip(gmm_eval(&two, &grid)) {
            assert_abs_diff_eq!(2.0 * 0.5 * a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn invalid_sigma_is_rejected() {
        assert!(matches!(
            GmmParams::new(vec![1.0], vec![0.5], vec![0.0]),
            Err(Error::InvalidParameter(_))
        ));
        assert!(GmmParams::new(vec![1.0], vec![0.5], vec![-1.0]).is_err());
        assert!(GmmParams::new(vec![1.0], vec![4.0], vec![1.0]).is_err());
        assert!(GmmParams::new(vec![], vec![], vec![]).is_err());
        assert!(GmmParams::new(vec![1.0, 1.0], vec![0.5], vec![1.0]).is_err());
    }

    #[test]
    fn truncate_normalize_examples() {
        let c = truncate_normalize(&vec![3.7; 1000]).unwrap();
        for v in c.values() {
            assert_abs_diff_eq!(*v, 1.0 / PI, epsilon = 1e-14);
        }
        let again = truncate_normalize(c.values()).unwrap();
        for (a, b) in c.values().iter().zip(again.values()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
        assert!(matches!(truncate_normalize(&[0.0; 10]), Err(Error::DegenerateInput(_))));
        assert!(truncate_normalize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn grid_mse_examples() {
        let u = truncate_normalize(&vec![1.0; 1000]).unwrap();
        assert_eq!(grid_mse(&u, &u).unwrap(), 0.0);
        // Raise one point by δ and lower another by δ: mass is preserved and
        // the loss is 2δ²/1000.
        let delta = 0.05;
        let mut shifted = u.values().to_vec();
        shifted[10] += delta;
        shifted[20] -= delta;
        let s = truncate_normalize(&shifted).unwrap();
        assert_abs_diff_eq!(grid_mse(&u, &s).unwrap(), 2.0 * delta * delta / 1000.0, epsilon = 1e-15);
        let short = truncate_normalize(&[1.0; 10]).unwrap();
        assert!(grid_mse(&u, &short).is_err());
    }

    #[test]
    fn g_hat_limits() {
        assert_abs_diff_eq!(g_hat(&single(PI / 2.0, 1e-3)).unwrap(), 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(g_hat(&single(0.0, 1e-2)).unwrap(), 1.0, epsilon = 1e-3);
        assert_abs_diff_eq!(g_hat(&single(PI, 1e-2)).unwrap(), -1.0, epsilon = 1e-3);
    }

    #[test]
    fn g_hat_of_tabulated_hg() {
        for &g in &[0.6, 0.7, 0.8, 0.9] {
            let pdf = DiscretePdf::from_phase(&HgPhase::new(g).unwrap(), ThetaGrid::default()).unwrap();
            assert_abs_diff_eq!(pdf.mean_cosine(), g, epsilon = 1e-3);
        }
    }

    #[test]
    fn decode_examples() {
        let p = decode_output(&[0.5; 6], 2).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);
        assert_abs_diff_eq!(p.means()[0], PI / 2.0, epsilon = 1e-15);
        let mid = SIGMA_MIN + 0.5 * (SIGMA_MAX - SIGMA_MIN);
        assert_abs_diff_eq!(p.sigmas()[1], mid, epsilon = 1e-15);

        let p = decode_output(&[1.0, 0.0, 0.0, 0.2, 0.3, 0.4, 0.0, 1.0, 0.5], 3).unwrap();
        assert_eq!(p.weights(), &[1.0, 0.0, 0.0]);
        assert_abs_diff_eq!(p.sigmas()[0], SIGMA_MIN, epsilon = 1e-15);
        assert_abs_diff_eq!(p.sigmas()[1], SIGMA_MAX, epsilon = 1e-15);

        let p = decode_output(&[0.0, 0.0, 0.1, 0.1, 0.1, 0.1], 2).unwrap();
        assert_eq!(p.weights(), &[0.5, 0.5]);

        assert!(decode_output(&[0.5; 5], 2).is_err());
        assert!(decode_output(&[1.5, 0.5, 0.5], 1).is_err());
        assert!(decode_output(&[], 0).is_err());
    }

    #[test]
    fn relative_error_examples() {
        assert_eq!(relative_g_error(0.8, 0.8).unwrap(), 0.0);
        assert_abs_diff_eq!(relative_g_error(0.9, 0.873).unwrap(), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(relative_g_error(0.6, 0.63).unwrap(), 5.0, epsilon = 1e-12);
        assert!(relative_g_error(0.0, 0.1).is_err());
        assert!(relative_g_error(-0.5, 0.1).is_err());
    }

    #[test]
    fn json_format() {
        let p = GmmParams::new(vec![0.25, 0.75], vec![0.1, 0.2], vec![0.3, 0.4]).unwrap();
        let s = p.to_json();
        assert_eq!(s, r#"{"K":2,"pi":[0.25,0.75],"m":[0.1,0.2],"sigma":[0.3,0.4]}"#);
        assert_eq!(GmmParams::from_json(&s).unwrap(), p);
        assert!(GmmParams::from_json(r#"{"K":3,"pi":[1],"m":[0.1],"sigma":[0.3]}"#).is_err());
        assert!(GmmParams::from_json(r#"{"K":1,"pi":[1],"m":[0.1],"sigma":[0.3],"x":1}"#).is_err());
    }

    proptest! {
        #[test]
        fn decode_always_valid(raw in prop::collection::vec(0.0f64..=1.0, 3..=36)) {
            let k = raw.len() / 3;
            let raw = &raw[..3 * k];
            let p = decode_output(raw, k).unwrap();
            let sum: f64 = p.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(p.weights().iter().all(|w| (0.0..=1.0).contains(w)));
            prop_assert!(p.means().iter().all(|m| (0.0..=PI).contains(m)));
            prop_assert!(p.sigmas().iter().all(|s| *s >= SIGMA_MIN && *s <= SIGMA_MAX));
            let enc = encode_output(&p).unwrap();
            prop_assert!(enc.iter().all(|v| (0.0..=1.0).contains(v)));
            let back = decode_output(&enc, k).unwrap();
            for (a, b) in back.means().iter().zip(p.means()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            for (a, b) in back.weights().iter().zip(p.weights()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn truncate_normalize_idempotent(raw in prop::collection::vec(0.0f64..10.0, 1..200)) {
            prop_assume!(raw.iter().any(|v| *v > 1e-6));
            let once = truncate_normalize(&raw).unwrap();
            let twice = truncate_normalize(once.values()).unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }

        #[test]
        fn grid_mse_is_a_squared_distance(
            a in prop::collection::vec(0.01f64..5.0, 50),
            b in prop::collection::vec(0.01f64..5.0, 50),
        ) {
            let pa = truncate_normalize(&a).unwrap();
            let pb = truncate_normalize(&b).unwrap();
            let ab = grid_mse(&pa, &pb).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, grid_mse(&pb, &pa).unwrap());
            prop_assert_eq!(grid_mse(&pa, &pa).unwrap(), 0.0);
            if pa != pb {
                prop_assert!(ab > 0.0);
            }
        }
    }
}
