//! Hypervolume indicator: exact dimension sweep for up to four objectives,
//! Monte-Carlo estimation beyond that.
//!
//! Points that do not strictly dominate the reference point are dropped
//! before any computation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pareto::{dominates, nondominated_indices};
use crate::rng::{stream_rng, Stream};

/// Largest objective count handled by the exact sweep.
pub const EXACT_MAX_OBJECTIVES: usize = 4;
/// Default Monte-Carlo sample count.
pub const DEFAULT_MC_SAMPLES: usize = 200_000;
pub const MIN_MC_SAMPLES: usize = 1000;

#[derive(Debug, Error, PartialEq)]
pub enum HvError {
    #[error("exact hypervolume supports at most {EXACT_MAX_OBJECTIVES} objectives, got {0}")]
    TooManyObjectives(usize),
    #[error("point has {got} objectives, reference point has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("Monte-Carlo hypervolume needs at least {MIN_MC_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HvMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HvEstimate {
    pub value: f64,
    pub stderr: f64,
    pub method: HvMethod,
}

fn clip(front: &[Vec<f64>], reference: &[f64]) -> Result<Vec<Vec<f64>>, HvError> {
    let mut out = Vec::with_capacity(front.len());
    for p in front {
        if p.len() != reference.len() {
            return Err(HvError::Dimension { expected: reference.len(), got: p.len() });
        }
        if p.iter().zip(reference).all(|(x, r)| x < r) {
            out.push(p.clone());
        }
    }
    Ok(out)
}

/// Exact hypervolume of the region dominated by `front` and bounded by
/// `reference`.
pub fn hypervolume_exact(front: &[Vec<f64>], reference: &[f64]) -> Result<f64, HvError> {
    let m = reference.len();
    if m > EXACT_MAX_OBJECTIVES {
        return Err(HvError::TooManyObjectives(m));
    }
    let clipped = clip(front, reference)?;
    if clipped.is_empty() || m == 0 {
        return Ok(0.0);
    }
    Ok(sweep(clipped, reference))
}

// Sort on the last coordinate and integrate slabs, recursing on the
// remaining m-1 coordinates.
fn sweep(points: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    let m = reference.len();
    match m {
        1 => reference[0] - points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min),
        2 => staircase(points, reference),
        _ => {
            let keep = nondominated_indices(&points).expect("validated by caller");
            let mut pts: Vec<Vec<f64>> = keep.into_iter().map(|i| points[i].clone()).collect();
            let last = m - 1;
            pts.sort_by(|a, b| a[last].total_cmp(&b[last]));
            let mut volume = 0.0;
            let mut slab: Vec<Vec<f64>> = Vec::with_capacity(pts.len());
            for i in 0..pts.len() {
                slab.push(pts[i][..last].to_vec());
                let upper = if i + 1 < pts.len() { pts[i + 1][last] } else { reference[last] };
                let height = upper - pts[i][last];
                if height > 0.0 {
                    volume += height * sweep(slab.clone(), &reference[..last]);
                }
            }
            volume
        }
    }
}

fn staircase(mut points: Vec<Vec<f64>>, reference: &[f64]) -> f64 {
    points.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    let mut area = 0.0;
    let mut best_y = f64::INFINITY;
    for i in 0..points.len() {
        best_y = best_y.min(points[i][1]);
        let next_x = if i + 1 < points.len() { points[i + 1][0] } else { reference[0] };
        area += (next_x - points[i][0]) * (reference[1] - best_y);
    }
    area
}

fn is_dominated_sample(front: &[Vec<f64>], sample: &[f64]) -> bool {
    front.iter().any(|p| p.iter().zip(sample).all(|(a, s)| a <= s))
}

/// Monte-Carlo hypervolume: uniform samples in the box spanned by the
/// front's componentwise minimum and the reference point.
pub fn hypervolume_mc(
    front: &[Vec<f64>],
    reference: &[f64],
    samples: usize,
    seed: u64,
) -> Result<HvEstimate, HvError> {
    if samples < MIN_MC_SAMPLES {
        return Err(HvError::TooFewSamples(samples));
    }
    let clipped = clip(front, reference)?;
    let zero = HvEstimate { value: 0.0, stderr: 0.0, method: HvMethod::MonteCarlo };
    if clipped.is_empty() {
        return Ok(zero);
    }
    let m = reference.len();
    let lower: Vec<f64> = (0..m)
        .map(|j| clipped.iter().map(|p| p[j]).fold(f64::INFINITY, f64::min))
        .collect();
    let box_volume: f64 = lower.iter().zip(reference).map(|(l, r)| r - l).product();
    let mut rng = stream_rng(seed, Stream::Hypervolume, 0);
    let mut sample = vec![0.0; m];
    let mut hits = 0usize;
    for _ in 0..samples {
        for j in 0..m {
            sample[j] = lower[j] + rng.gen::<f64>() * (reference[j] - lower[j]);
        }
        if is_dominated_sample(&clipped, &sample) {
            hits += 1;
        }
    }
    Ok(mc_estimate(box_volume, hits, samples))
}

fn mc_estimate(box_volume: f64, hits: usize, samples: usize) -> HvEstimate {
    let p = hits as f64 / samples as f64;
    HvEstimate {
        value: box_volume * p,
        stderr: box_volume * (p * (1.0 - p) / samples as f64).sqrt(),
        method: HvMethod::MonteCarlo,
    }
}

/// Exact for `m <= 4`, Monte-Carlo otherwise.
pub fn hypervolume(
    front: &[Vec<f64>],
    reference: &[f64],
    samples: usize,
    seed: u64,
) -> Result<HvEstimate, HvError> {
    if reference.len() <= EXACT_MAX_OBJECTIVES {
        let value = hypervolume_exact(front, reference)?;
        Ok(HvEstimate { value, stderr: 0.0, method: HvMethod::Exact })
    } else {
        hypervolume_mc(front, reference, samples, seed)
    }
}

/// Incremental Monte-Carlo hypervolume over a fixed sample set.
///
/// The sample box is fixed at construction, so inserting a point can only
/// mark more samples as dominated: the estimate never decreases.
#[derive(Debug, Clone)]
pub struct McHypervolumeTracker {
    reference: Vec<f64>,
    samples: Vec<f64>,
    dominated: Vec<bool>,
    hits: usize,
    box_volume: f64,
}

impl McHypervolumeTracker {
    pub fn new(lower: &[f64], reference: &[f64], samples: usize, seed: u64) -> Result<Self, HvError> {
        if samples < MIN_MC_SAMPLES {
            return Err(HvError::TooFewSamples(samples));
        }
        if lower.len() != reference.len() {
            return Err(HvError::Dimension { expected: reference.len(), got: lower.len() });
        }
        let m = reference.len();
        let mut rng = stream_rng(seed, Stream::Hypervolume, 1);
        let mut buf = Vec::with_capacity(samples * m);
        for _ in 0..samples {
            for j in 0..m {
                buf.push(lower[j] + rng.gen::<f64>() * (reference[j] - lower[j]));
            }
        }
        let box_volume = lower.iter().zip(reference).map(|(l, r)| (r - l).max(0.0)).product();
        Ok(Self {
            reference: reference.to_vec(),
            samples: buf,
            dominated: vec![false; samples],
            hits: 0,
            box_volume,
        })
    }

    pub fn insert(&mut self, point: &[f64]) {
        let m = self.reference.len();
        if point.len() != m || !point.iter().zip(&self.reference).all(|(x, r)| x < r) {
            return;
        }
        for (i, s) in self.samples.chunks_exact(m).enumerate() {
            if !self.dominated[i] && point.iter().zip(s).all(|(a, b)| a <= b) {
                self.dominated[i] = true;
                self.hits += 1;
            }
        }
    }

    pub fn estimate(&self) -> HvEstimate {
        mc_estimate(self.box_volume, self.hits, self.dominated.len())
    }
}

/// Hypervolume of a growing point set, exact or Monte-Carlo by objective
/// count.
#[derive(Debug, Clone)]
pub enum HvTracker {
    Exact { reference: Vec<f64>, front: Vec<Vec<f64>>, value: f64 },
    MonteCarlo(McHypervolumeTracker),
}

impl HvTracker {
    /// `lower` anchors the Monte-Carlo sampling box; it is unused on the
    /// exact path.
    pub fn new(lower: &[f64], reference: &[f64], samples: usize, seed: u64) -> Result<Self, HvError> {
        if reference.len() <= EXACT_MAX_OBJECTIVES {
            Ok(Self::Exact { reference: reference.to_vec(), front: Vec::new(), value: 0.0 })
        } else {
            Ok(Self::MonteCarlo(McHypervolumeTracker::new(lower, reference, samples, seed)?))
        }
    }

    pub fn insert(&mut self, point: &[f64]) {
        match self {
            Self::Exact { reference, front, value } => {
                if point.len() != reference.len()
                    || front.iter().any(|p| p.as_slice() == point || dominates(p, point))
                {
                    return;
                }
                front.retain(|p| !dominates(point, p));
                front.push(point.to_vec());
                *value = hypervolume_exact(front, reference).unwrap_or(*value);
            }
            Self::MonteCarlo(t) => t.insert(point),
        }
    }

    pub fn estimate(&self) -> HvEstimate {
        match self {
            Self::Exact { value, .. } => {
                HvEstimate { value: *value, stderr: 0.0, method: HvMethod::Exact }
            }
            Self::MonteCarlo(t) => t.estimate(),
        }
    }
}

/// Volume of the unit ball in `m` dimensions.
pub fn unit_ball_volume(m: usize) -> f64 {
    match m {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / m as f64 * unit_ball_volume(m - 2),
    }
}

/// Largest attainable hypervolume for a front lying on the positive orthant
/// of the unit sphere, with reference `(r, ..., r)`, `r >= 1`.
pub fn sphere_front_ceiling(m: usize, r: f64) -> f64 {
    r.powi(m as i32) - unit_ball_volume(m) / 2f64.powi(m as i32)
}
