//! Damped least-squares fit of a truncated, normalized mixture to a target
//! density on the loss grid.
//!
//! Parameters are optimized in an unconstrained space: softmax logits for the
//! weights, logits of `m/π` for the means and `ln σ` for the widths.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{grid_mse, gmm_pdf, normal_pdf, DiscretePdf, GmmParams};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub restarts: usize,
    pub max_iters: usize,
    /// Converged once a step's Euclidean norm falls below this.
    pub step_tol: f64,
    pub seed: u64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            restarts: 20,
            max_iters: 500,
            step_tol: 1e-10,
            seed: 0x005e_ed61,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub params: GmmParams,
    /// Grid MSE of `params` against the target, recomputed from scratch.
    pub mse: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Index of the restart that produced the result.
    pub restart: usize,
}

// Keeps logit(m/π) finite for means on the boundary.
const MEAN_EPS: f64 = 1e-9;
const MIN_WEIGHT: f64 = 1e-300;
const LAMBDA_MAX: f64 = 1e16;
// ln σ is clamped so that σ stays representable; beyond ~10³ rad a component
// is flat on [0, π] anyway.
const LN_SIGMA_RANGE: (f64, f64) = (-13.8, 6.9);

struct Problem<'a> {
    thetas: Vec<f64>,
    step: f64,
    target: &'a [f64],
    k: usize,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(MEAN_EPS, 1.0 - MEAN_EPS);
    (p / (1.0 - p)).ln()
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|a| (a - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

impl Problem<'_> {
    fn unpack(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let k = self.k;
        let w = softmax(&x[..k]);
        let m = x[k..2 * k].iter().map(|u| PI * sigmoid(*u)).collect();
        let s = x[2 * k..]
            .iter()
            .map(|v| v.clamp(LN_SIGMA_RANGE.0, LN_SIGMA_RANGE.1).exp())
            .collect();
        (w, m, s)
    }

    fn pack(&self, p: &GmmParams) -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * self.k);
        x.extend(p.weights().iter().map(|w| w.max(MIN_WEIGHT).ln()));
        x.extend(p.means().iter().map(|m| logit(m / PI)));
        x.extend(p.sigmas().iter().map(|s| s.ln()));
        x
    }

    fn to_params(&self, x: &[f64]) -> Result<GmmParams> {
        let (w, m, s) = self.unpack(x);
        GmmParams::new(w, m, s)
    }

    /// Residuals `p_i − t_i`, or `None` when the mixture vanishes on the grid.
    fn residuals(&self, x: &[f64]) -> Option<Vec<f64>> {
        let (w, m, s) = self.unpack(x);
        let raw: Vec<f64> = self
            .thetas
            .iter()
            .map(|t| {
                (0..self.k)
                    .map(|j| w[j] * normal_pdf(*t, m[j], s[j]))
                    .sum::<f64>()
            })
            .collect();
        let z = raw.iter().sum::<f64>() * self.step;
        if !(z > 0.0) || !z.is_finite() {
            return None;
        }
        Some(
            raw.iter()
                .zip(self.target)
                .map(|(r, t)| r / z - t)
                .collect(),
        )
    }

    fn cost(&self, x: &[f64]) -> f64 {
        match self.residuals(x) {
            Some(r) => r.iter().map(|v| v * v).sum::<f64>() / r.len() as f64,
            None => f64::INFINITY,
        }
    }

    /// Residual vector and its Jacobian with respect to the packed parameters.
    fn linearize(&self, x: &[f64]) -> Option<(DVector<f64>, DMatrix<f64>)> {
        let k = self.k;
        let n = self.thetas.len();
        let (w, m, s) = self.unpack(x);
        let mut phi = DMatrix::<f64>::zeros(n, k);
        let mut raw = vec![0.0; n];
        for (i, t) in self.thetas.iter().enumerate() {
            for j in 0..k {
                let v = normal_pdf(*t, m[j], s[j]);
                phi[(i, j)] = v;
                raw[i] += w[j] * v;
            }
        }
        let z = raw.iter().sum::<f64>() * self.step;
        if !(z > 0.0) || !z.is_finite() {
            return None;
        }

        // Derivatives of the raw mixture, then of the normalized density.
        let mut d_raw = DMatrix::<f64>::zeros(n, 3 * k);
        for (i, t) in self.thetas.iter().enumerate() {
            for j in 0..k {
                let p = phi[(i, j)];
                let dz = (t - m[j]) / s[j];
                let sg = m[j] / PI;
                d_raw[(i, j)] = w[j] * (p - raw[i]);
                d_raw[(i, k + j)] = w[j] * p * dz / s[j] * PI * sg * (1.0 - sg);
                d_raw[(i, 2 * k + j)] = w[j] * p * (dz * dz - 1.0);
            }
        }
        let d_z: Vec<f64> = (0..3 * k)
            .map(|c| d_raw.column(c).sum() * self.step)
            .collect();
        let mut r = DVector::<f64>::zeros(n);
        let mut jac = d_raw;
        for i in 0..n {
            let p = raw[i] / z;
            r[i] = p - self.target[i];
            for c in 0..3 * k {
                jac[(i, c)] = (jac[(i, c)] - p * d_z[c]) / z;
            }
        }
        Some((r, jac))
    }
}

struct Run {
    x: Vec<f64>,
    converged: bool,
    iterations: usize,
}

fn levenberg_marquardt(problem: &Problem<'_>, mut x: Vec<f64>, opts: &FitOptions) -> Run {
    let mut lambda = 1e-3;
    let mut cost = problem.cost(&x);
    let mut converged = false;
    let mut iterations = 0;

    'outer: while iterations < opts.max_iters {
        iterations += 1;
        let Some((r, jac)) = problem.linearize(&x) else {
            break;
        };
        let jtj = jac.tr_mul(&jac);
        let grad = jac.tr_mul(&r);
        let scale = jtj.diagonal().max().max(1e-300);

        loop {
            let mut a = jtj.clone();
            for d in 0..a.nrows() {
                a[(d, d)] += lambda * (jtj[(d, d)] + 1e-9 * scale);
            }
            let step = match a.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        converged = true;
                        break 'outer;
                    }
                    continue;
                }
            };
            let norm = step.norm();
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            let trial_cost = problem.cost(&trial);
            if trial_cost < cost {
                x = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-12);
                if norm < opts.step_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            if norm < opts.step_tol {
                converged = true;
                break 'outer;
            }
            lambda *= 2.0;
            if lambda > LAMBDA_MAX {
                converged = true;
                break 'outer;
            }
        }
    }

    Run {
        x,
        converged,
        iterations,
    }
}

fn check_target(target: &DiscretePdf) -> Result<()> {
    let mass: f64 = target.values().iter().sum::<f64>() * target.grid().step();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(Error::PreconditionViolation(format!(
            "target integrates to {mass}, not 1"
        )));
    }
    Ok(())
}

fn finish(problem: &Problem<'_>, target: &DiscretePdf, run: Run, restart: usize) -> Result<GmmFit> {
    let params = problem.to_params(&run.x)?;
    let mse = grid_mse(&gmm_pdf(&params, target.grid())?, target)?;
    Ok(GmmFit {
        params,
        mse,
        converged: run.converged,
        iterations: run.iterations,
        restart,
    })
}

/// Starting point for restart `index`: means at target quantiles, widths
/// near the quantile spacing, equal weights. Later restarts jitter all three.
fn initial_guess(target: &DiscretePdf, k: usize, index: usize, seed: u64) -> GmmParams {
    let step = target.grid().step();
    let mut cdf = Vec::with_capacity(target.len());
    let mut acc = 0.0;
    for v in target.values() {
        acc += v * step;
        cdf.push(acc);
    }
    let quantile = |q: f64| -> f64 {
        let i = cdf.partition_point(|c| *c < q).min(cdf.len() - 1);
        (i as f64 + 0.5) * step
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mut qs: Vec<f64> = if index == 0 {
        (0..k).map(|j| (j as f64 + 0.5) / k as f64).collect()
    } else {
        (0..k).map(|_| rng.random_range(0.005..0.995)).collect()
    };
    qs.sort_by(f64::total_cmp);
    let means: Vec<f64> = qs.iter().map(|q| quantile(*q)).collect();
    let spread = (quantile(0.9) - quantile(0.1)).max(4.0 * step);
    let sigmas = (0..k)
        .map(|_| {
            let base = spread / k as f64 * 2.0;
            if index == 0 {
                base
            } else {
                base * rng.random_range(0.3f64..3.0)
            }
        })
        .map(|s: f64| s.clamp(step, PI))
        .collect();
    let weights = (0..k)
        .map(|_| if index == 0 { 1.0 } else { rng.random_range(0.5..1.5) })
        .collect();
    GmmParams::new(weights, means, sigmas).expect("initial guess is valid")
}

/// Fits a `k`-component mixture to `target` from several random starts and
/// returns the lowest-loss result. Ties go to the lowest restart index.
pub fn fit_gmm(target: &DiscretePdf, k: usize, opts: &FitOptions) -> Result<GmmFit> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("at least one restart is required"));
    }
    check_target(target)?;
    let problem = Problem {
        thetas: target.grid().angles(),
        step: target.grid().step(),
        target: target.values(),
        k,
    };
    let fits: Vec<Result<GmmFit>> = (0..opts.restarts)
        .into_par_iter()
        .map(|i| {
            let init = initial_guess(target, k, i, opts.seed);
            let run = levenberg_marquardt(&problem, problem.pack(&init), opts);
            finish(&problem, target, run, i)
        })
        .collect();
    let mut best: Option<GmmFit> = None;
    for fit in fits {
        let fit = fit?;
        if best.as_ref().is_none_or(|b| fit.mse < b.mse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("restarts > 0"))
}

/// Runs the damped least-squares iteration from a given mixture.
pub fn refine_gmm(target: &DiscretePdf, init: &GmmParams, opts: &FitOptions) -> Result<GmmFit> {
    check_target(target)?;
    let problem = Problem {
        thetas: target.grid().angles(),
        step: target.grid().step(),
        target: target.values(),
        k: init.k(),
    };
    let run = levenberg_marquardt(&problem, problem.pack(init), opts);
    finish(&problem, target, run, 0)
}
