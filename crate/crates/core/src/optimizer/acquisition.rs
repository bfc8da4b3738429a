//! Augmented Chebyshev scalarization and expected improvement.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;

use super::gp::{GaussianProcess, Standardizer};

const SIGMA_EPS: f64 = 1e-12;

/// Per-objective normalization bounds (running min and max of the archive).
/// Archive members map into [0, 1]; dominated points may land above 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalization {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalization {
    /// Bounds over `values`; `None` when there is nothing to normalize by.
    pub fn from_values<'a>(values: impl IntoIterator<Item = &'a Vec<f64>>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let mut min = first.clone();
        let mut max = first.clone();
        for v in it {
            for j in 0..min.len() {
                min[j] = min[j].min(v[j]);
                max[j] = max[j].max(v[j]);
            }
        }
        Some(Self { min, max })
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(v, (lo, hi))| if hi > lo { (v - lo) / (hi - lo) } else { 0.0 })
            .collect()
    }
}

/// `max_j(w_j f_j) + rho * sum_j(w_j f_j)` on already normalized objectives.
pub fn scalarize(normalized: &[f64], weights: &[f64], rho: f64) -> f64 {
    let mut max = f64::NEG_INFINITY;
    let mut sum = 0.0;
    for (f, w) in normalized.iter().zip(weights) {
        let v = w * f;
        max = max.max(v);
        sum += v;
    }
    max + rho * sum
}

/// Uniform draw from the unit simplex.
pub fn sample_simplex<R: Rng>(m: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|v| v / total).collect()
}

pub fn normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Expected improvement below `best` (minimization).
pub fn expected_improvement(mean: f64, sigma: f64, best: f64) -> f64 {
    let diff = best - mean;
    if !(sigma >= SIGMA_EPS) {
        return diff.max(0.0);
    }
    let z = diff / sigma;
    (diff * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

/// GP over scalarized, standardized targets plus the incumbent.
#[derive(Debug, Clone)]
pub struct ScalarizedModel {
    pub gp: GaussianProcess,
    pub standardizer: Standardizer,
    pub weights: Vec<f64>,
    /// Best observed scalarized value, standardized.
    pub best: f64,
}

impl ScalarizedModel {
    /// Acquisition value at a unit-cube point.
    pub fn acquisition(&self, x: &[f64]) -> f64 {
        let (mean, var) = self.gp.predict(x);
        expected_improvement(mean, var.sqrt(), self.best)
    }
}

/// Index of the best candidate by EI, lowest index on ties.
pub fn acquire(model: &ScalarizedModel, candidates: &[Vec<f64>]) -> Option<(usize, f64)> {
    let values: Vec<f64> = candidates.par_iter().map(|c| model.acquisition(c)).collect();
    argmax(&values)
}

fn argmax(values: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best
}

#[derive(Debug, Clone, Copy)]
pub struct AcquisitionSearch {
    pub probes: usize,
    pub refine_starts: usize,
    pub max_evals_per_start: usize,
}

impl Default for AcquisitionSearch {
    fn default() -> Self {
        Self { probes: 1024, refine_starts: 8, max_evals_per_start: 2000 }
    }
}

/// Random probing followed by coordinate-wise pattern search from the best
/// probes. Returns the unit-cube maximizer and its acquisition value.
pub fn maximize_acquisition<R: Rng>(
    model: &ScalarizedModel,
    dim: usize,
    search: &AcquisitionSearch,
    rng: &mut R,
) -> (Vec<f64>, f64) {
    let probes: Vec<Vec<f64>> =
        (0..search.probes.max(1)).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect();
    let values: Vec<f64> = probes.par_iter().map(|p| model.acquisition(p)).collect();
    let mut order: Vec<usize> = (0..probes.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order.truncate(search.refine_starts.max(1));

    let refined: Vec<(Vec<f64>, f64)> = order
        .par_iter()
        .map(|&i| refine(model, probes[i].clone(), values[i], search.max_evals_per_start))
        .collect();
    let mut best = refined[0].clone();
    for cand in refined.into_iter().skip(1) {
        if cand.1 > best.1 {
            best = cand;
        }
    }
    best
}

fn refine(model: &ScalarizedModel, mut x: Vec<f64>, mut fx: f64, budget: usize) -> (Vec<f64>, f64) {
    let mut step = 0.1;
    let mut evals = 0;
    while step > 1e-4 && evals < budget {
        let mut improved = false;
        for j in 0..x.len() {
            let orig = x[j];
            let mut best_here = (orig, fx);
            for cand in [orig + step, orig - step] {
                let c = cand.clamp(0.0, 1.0);
                if c == orig {
                    continue;
                }
                x[j] = c;
                let v = model.acquisition(&x);
                evals += 1;
                if v > best_here.1 {
                    best_here = (c, v);
                }
            }
            x[j] = best_here.0;
            if best_here.1 > fx {
                fx = best_here.1;
                improved = true;
            }
            if evals >= budget {
                break;
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (x, fx)
}
