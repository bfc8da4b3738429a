//! Gaussian-process surrogate with a squared-exponential ARD kernel.
//!
//! Inputs live in the unit hypercube and targets are standardized by the
//! caller. Hyperparameters are chosen by maximizing the log marginal
//! likelihood with multi-start projected L-BFGS in log space.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lbfgs::minimize_box;
use crate::rng::{stream_rng, Stream};

/// Lower bound on the observation noise variance.
pub const NOISE_FLOOR: f64 = 1e-6;

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const MEAN_BOUND: f64 = 3.0;
const LOG_SIGNAL_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 9.210_340_371_976_184); // ln 0.01, ln 1e4
const LOG_LENGTH_BOUNDS: (f64, f64) = (-4.605_170_185_988_091, 4.605_170_185_988_091);
const LOG_NOISE_BOUNDS: (f64, f64) = (-23.025_850_929_940_457, 0.0); // ln 1e-10, ln 1

#[derive(Debug, Error, PartialEq)]
pub enum GpError {
    #[error("need at least {need} training points, got {got}")]
    TooFewPoints { need: usize, got: usize },
    #[error("training inputs have inconsistent dimensions")]
    Dimension,
    #[error("kernel matrix is not positive definite")]
    NotPositiveDefinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpHyperparams {
    pub mean: f64,
    pub signal_variance: f64,
    pub length_scales: Vec<f64>,
    pub noise_variance: f64,
}

impl GpHyperparams {
    /// Starting point used before any fit has happened.
    pub fn default_for(dim: usize) -> Self {
        Self {
            mean: 0.0,
            signal_variance: 1.0,
            length_scales: vec![default_length_scale(dim); dim],
            noise_variance: 1e-3,
        }
    }

    fn to_theta(&self) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.length_scales.len() + 3);
        t.push(self.mean);
        t.push(self.signal_variance.ln());
        t.extend(self.length_scales.iter().map(|l| l.ln()));
        t.push((self.noise_variance - NOISE_FLOOR).max(1e-10).ln());
        t
    }

    fn from_theta(theta: &[f64]) -> Self {
        let d = theta.len() - 3;
        Self {
            mean: theta[0],
            signal_variance: theta[1].exp(),
            length_scales: theta[2..2 + d].iter().map(|v| v.exp()).collect(),
            noise_variance: NOISE_FLOOR + theta[2 + d].exp(),
        }
    }
}

fn default_length_scale(dim: usize) -> f64 {
    (0.5 * (dim as f64).sqrt()).clamp(0.05, 20.0)
}

fn theta_bounds(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![-MEAN_BOUND, LOG_SIGNAL_BOUNDS.0];
    let mut hi = vec![MEAN_BOUND, LOG_SIGNAL_BOUNDS.1];
    lo.extend(std::iter::repeat(LOG_LENGTH_BOUNDS.0).take(dim));
    hi.extend(std::iter::repeat(LOG_LENGTH_BOUNDS.1).take(dim));
    lo.push(LOG_NOISE_BOUNDS.0);
    hi.push(LOG_NOISE_BOUNDS.1);
    (lo, hi)
}

#[derive(Debug, Clone)]
pub struct GpFitConfig {
    pub restarts: usize,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for GpFitConfig {
    fn default() -> Self {
        Self { restarts: 16, max_iterations: 50, seed: 0 }
    }
}

struct FitData {
    t: usize,
    d: usize,
    y: DVector<f64>,
    // (x_ik - x_jk)^2 laid out as [(i * t + j) * d + k]
    sqdiff: Vec<f64>,
}

impl FitData {
    fn new(inputs: &[Vec<f64>], targets: &[f64]) -> Self {
        let t = inputs.len();
        let d = inputs[0].len();
        let mut sqdiff = vec![0.0; t * t * d];
        for i in 0..t {
            for j in 0..t {
                let base = (i * t + j) * d;
                for k in 0..d {
                    sqdiff[base + k] = (inputs[i][k] - inputs[j][k]).powi(2);
                }
            }
        }
        Self { t, d, y: DVector::from_column_slice(targets), sqdiff }
    }

    fn signal_kernel(&self, h: &GpHyperparams) -> DMatrix<f64> {
        let inv_l2: Vec<f64> = h.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
        let t = self.t;
        let mut kf = DMatrix::zeros(t, t);
        for i in 0..t {
            kf[(i, i)] = h.signal_variance;
            for j in (i + 1)..t {
                let base = (i * t + j) * self.d;
                let r2: f64 = (0..self.d).map(|k| self.sqdiff[base + k] * inv_l2[k]).sum();
                let v = h.signal_variance * (-0.5 * r2).exp();
                kf[(i, j)] = v;
                kf[(j, i)] = v;
            }
        }
        kf
    }

    /// Negative log marginal likelihood and its gradient in theta.
    fn objective(&self, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
        let h = GpHyperparams::from_theta(theta);
        let t = self.t;
        let d = self.d;
        let kf = self.signal_kernel(&h);
        let mut k = kf.clone();
        for i in 0..t {
            k[(i, i)] += h.noise_variance;
        }
        let chol = robust_cholesky(k)?;
        let r = self.y.map(|v| v - h.mean);
        let alpha = chol.solve(&r);
        let log_det_half: f64 = chol.l_dirty().diagonal().iter().take(t).map(|v| v.ln()).sum();
        let lml = -0.5 * r.dot(&alpha) - log_det_half - 0.5 * t as f64 * LN_2PI;
        if !lml.is_finite() {
            return None;
        }
        let kinv = chol.inverse();
        let inv_l2: Vec<f64> = h.length_scales.iter().map(|l| 1.0 / (l * l)).collect();

        let mut grad = vec![0.0; d + 3];
        grad[0] = alpha.sum();
        let mut trace_w = 0.0;
        let mut signal = 0.0;
        let mut lengths = vec![0.0; d];
        for i in 0..t {
            let w_ii = alpha[i] * alpha[i] - kinv[(i, i)];
            trace_w += w_ii;
            signal += w_ii * kf[(i, i)];
            for j in (i + 1)..t {
                let w = 2.0 * (alpha[i] * alpha[j] - kinv[(i, j)]) * kf[(i, j)];
                signal += w;
                let base = (i * t + j) * d;
                for (kk, acc) in lengths.iter_mut().enumerate() {
                    *acc += w * self.sqdiff[base + kk];
                }
            }
        }
        grad[1] = 0.5 * signal;
        for kk in 0..d {
            grad[2 + kk] = 0.5 * lengths[kk] * inv_l2[kk];
        }
        grad[2 + d] = 0.5 * (h.noise_variance - NOISE_FLOOR) * trace_w;
        Some((-lml, grad.into_iter().map(|g| -g).collect()))
    }
}

/// Cholesky with escalating diagonal jitter for nearly singular kernels.
fn robust_cholesky(k: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(k.clone()) {
        return Some(c);
    }
    let n = k.nrows();
    let scale = (k.trace() / n.max(1) as f64).abs().max(1e-12);
    let mut jitter = 1e-10 * scale;
    for _ in 0..6 {
        let mut kj = k.clone();
        for i in 0..n {
            kj[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(kj) {
            return Some(c);
        }
        jitter *= 100.0;
    }
    None
}

fn validate_inputs(inputs: &[Vec<f64>], targets: &[f64]) -> Result<(), GpError> {
    if inputs.len() != targets.len() {
        return Err(GpError::Dimension);
    }
    if let Some(first) = inputs.first() {
        if first.is_empty() || inputs.iter().any(|x| x.len() != first.len()) {
            return Err(GpError::Dimension);
        }
    }
    Ok(())
}

/// Log marginal likelihood of `targets` under `hyper`.
pub fn log_marginal_likelihood(
    hyper: &GpHyperparams,
    inputs: &[Vec<f64>],
    targets: &[f64],
) -> Result<f64, GpError> {
    validate_inputs(inputs, targets)?;
    if inputs.is_empty() {
        return Ok(0.0);
    }
    let data = FitData::new(inputs, targets);
    data.objective(&hyper.to_theta()).map(|(v, _)| -v).ok_or(GpError::NotPositiveDefinite)
}

/// Maximum-likelihood hyperparameters for standardized `targets`.
///
/// Start 0 is the default hyperparameter set; the remaining starts are drawn
/// from the seeded stream. The best start wins, lowest index on ties.
pub fn fit_gp(
    inputs: &[Vec<f64>],
    targets: &[f64],
    config: &GpFitConfig,
) -> Result<GpHyperparams, GpError> {
    validate_inputs(inputs, targets)?;
    if inputs.len() < 2 {
        return Err(GpError::TooFewPoints { need: 2, got: inputs.len() });
    }
    let data = FitData::new(inputs, targets);
    let d = data.d;
    let mut rng = stream_rng(config.seed, Stream::GpFit, 0);
    let base_len = default_length_scale(d).ln();
    let starts: Vec<Vec<f64>> = (0..config.restarts.max(1))
        .map(|i| {
            if i == 0 {
                return GpHyperparams::default_for(d).to_theta();
            }
            let mut th = Vec::with_capacity(d + 3);
            th.push(rng.gen_range(-1.0..1.0));
            th.push(rng.gen_range(-1.5..1.5));
            for _ in 0..d {
                th.push(base_len + rng.gen_range(-2.0..1.5));
            }
            th.push(rng.gen_range(-16.0..-3.0));
            th
        })
        .collect();

    Ok(best_of_starts(&data, &starts, config.max_iterations))
}

/// Local maximum-likelihood refinement from explicit starting points, best
/// start wins (lowest index on ties).
pub fn refine_gp(
    inputs: &[Vec<f64>],
    targets: &[f64],
    starts: &[GpHyperparams],
    max_iterations: usize,
) -> Result<GpHyperparams, GpError> {
    validate_inputs(inputs, targets)?;
    if inputs.len() < 2 {
        return Err(GpError::TooFewPoints { need: 2, got: inputs.len() });
    }
    let data = FitData::new(inputs, targets);
    let (lo, hi) = theta_bounds(data.d);
    let starts: Vec<Vec<f64>> = starts
        .iter()
        .map(|h| h.to_theta().iter().zip(lo.iter().zip(&hi)).map(|(v, (l, u))| v.clamp(*l, *u)).collect())
        .collect();
    Ok(best_of_starts(&data, &starts, max_iterations))
}

fn best_of_starts(data: &FitData, starts: &[Vec<f64>], max_iterations: usize) -> GpHyperparams {
    let d = data.d;
    let (lo, hi) = theta_bounds(d);
    let results: Vec<Option<(f64, Vec<f64>)>> = starts
        .par_iter()
        .map(|x0| minimize_box(|th| data.objective(th), x0, &lo, &hi, max_iterations).map(|m| (m.value, m.x)))
        .collect();

    let mut best: Option<(f64, &Vec<f64>)> = None;
    for (value, theta) in results.iter().flatten() {
        if best.map_or(true, |(b, _)| *value < b) {
            best = Some((*value, theta));
        }
    }
    match best {
        Some((_, theta)) => GpHyperparams::from_theta(theta),
        None => GpHyperparams { noise_variance: 1e-2, ..GpHyperparams::default_for(d) },
    }
}

/// A GP conditioned on training data.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    hyper: GpHyperparams,
    inputs: Vec<Vec<f64>>,
    inv_l2: Vec<f64>,
    chol: Option<Cholesky<f64, Dyn>>,
    alpha: DVector<f64>,
}

impl GaussianProcess {
    pub fn new(hyper: GpHyperparams, inputs: Vec<Vec<f64>>, targets: &[f64]) -> Result<Self, GpError> {
        validate_inputs(&inputs, targets)?;
        let inv_l2 = hyper.length_scales.iter().map(|l| 1.0 / (l * l)).collect();
        if inputs.is_empty() {
            return Ok(Self { hyper, inputs, inv_l2, chol: None, alpha: DVector::zeros(0) });
        }
        if inputs[0].len() != hyper.length_scales.len() {
            return Err(GpError::Dimension);
        }
        let data = FitData::new(&inputs, targets);
        let mut k = data.signal_kernel(&hyper);
        for i in 0..inputs.len() {
            k[(i, i)] += hyper.noise_variance;
        }
        let chol = robust_cholesky(k).ok_or(GpError::NotPositiveDefinite)?;
        let r = data.y.map(|v| v - hyper.mean);
        let alpha = chol.solve(&r);
        Ok(Self { hyper, inputs, inv_l2, chol: Some(chol), alpha })
    }

    pub fn hyperparams(&self) -> &GpHyperparams {
        &self.hyper
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn cross_kernel(&self, x: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| {
                let r2: f64 = xi
                    .iter()
                    .zip(x)
                    .zip(&self.inv_l2)
                    .map(|((a, b), w)| (a - b) * (a - b) * w)
                    .sum();
                self.hyper.signal_variance * (-0.5 * r2).exp()
            }),
        )
    }

    /// Posterior mean and (latent) variance at `x`.
    pub fn predict(&self, x: &[f64]) -> (f64, f64) {
        let Some(chol) = &self.chol else {
            return (self.hyper.mean, self.hyper.signal_variance);
        };
        let ks = self.cross_kernel(x);
        let mean = self.hyper.mean + ks.dot(&self.alpha);
        let v = chol.l_dirty().solve_lower_triangular(&ks).unwrap_or_else(|| DVector::zeros(ks.len()));
        let var = (self.hyper.signal_variance - v.norm_squared()).max(0.0);
        (mean, var)
    }
}

/// Affine standardization of targets: zero mean, unit variance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub mean: f64,
    pub std: f64,
}

impl Standardizer {
    pub fn fit(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn apply_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.apply(v)).collect()
    }
}
