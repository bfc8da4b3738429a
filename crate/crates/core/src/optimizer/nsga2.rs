//! NSGA-II operators: ranking, crowded tournament, SBX and polynomial
//! mutation. Variation works in unit-cube coordinates.

use rand::Rng;

use super::OptimizerError;
use crate::pareto::{crowding_distance, fast_non_dominated_sort};
use crate::space::{DesignPoint, DesignSpace};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneticParams {
    pub crossover_eta: f64,
    pub crossover_rate: f64,
    pub mutation_eta: f64,
    /// Per-variable mutation probability; `None` means `1 / n`.
    pub mutation_rate: Option<f64>,
}

impl Default for GeneticParams {
    fn default() -> Self {
        Self { crossover_eta: 15.0, crossover_rate: 0.9, mutation_eta: 20.0, mutation_rate: None }
    }
}

/// Front rank and crowding distance of every member.
pub fn rank_and_crowding(objectives: &[Vec<f64>]) -> (Vec<usize>, Vec<f64>) {
    let mut rank = vec![0; objectives.len()];
    let mut crowd = vec![0.0; objectives.len()];
    for (r, front) in fast_non_dominated_sort(objectives).iter().enumerate() {
        let d = crowding_distance(objectives, front);
        for (&i, di) in front.iter().zip(d) {
            rank[i] = r;
            crowd[i] = di;
        }
    }
    (rank, crowd)
}

/// Crowded-comparison winner of `a` and `b`; `a` on full ties.
fn crowded_better(a: usize, b: usize, rank: &[usize], crowd: &[f64]) -> usize {
    if rank[a] != rank[b] {
        return if rank[a] < rank[b] { a } else { b };
    }
    if crowd[b] > crowd[a] {
        return b;
    }
    if crowd[a] > crowd[b] {
        return a;
    }
    a.min(b)
}

fn tournament<R: Rng>(rank: &[usize], crowd: &[f64], rng: &mut R) -> usize {
    let a = rng.gen_range(0..rank.len());
    let b = rng.gen_range(0..rank.len());
    crowded_better(a, b, rank, crowd)
}

fn sbx_pair<R: Rng>(p1: &[f64], p2: &[f64], params: &GeneticParams, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let mut c1 = p1.to_vec();
    let mut c2 = p2.to_vec();
    if rng.gen::<f64>() > params.crossover_rate {
        return (c1, c2);
    }
    let eta = params.crossover_eta;
    let exp = 1.0 / (eta + 1.0);
    for j in 0..p1.len() {
        if rng.gen::<f64>() > 0.5 || (p1[j] - p2[j]).abs() <= 1e-14 {
            continue;
        }
        let (y1, y2) = if p1[j] < p2[j] { (p1[j], p2[j]) } else { (p2[j], p1[j]) };
        let u: f64 = rng.gen();
        let spread = |beta: f64| {
            let alpha = 2.0 - beta.powf(-(eta + 1.0));
            if u <= 1.0 / alpha {
                (u * alpha).powf(exp)
            } else {
                (1.0 / (2.0 - u * alpha)).powf(exp)
            }
        };
        let bq1 = spread(1.0 + 2.0 * y1 / (y2 - y1));
        let bq2 = spread(1.0 + 2.0 * (1.0 - y2) / (y2 - y1));
        let mut a = (0.5 * ((y1 + y2) - bq1 * (y2 - y1))).clamp(0.0, 1.0);
        let mut b = (0.5 * ((y1 + y2) + bq2 * (y2 - y1))).clamp(0.0, 1.0);
        if rng.gen::<bool>() {
            std::mem::swap(&mut a, &mut b);
        }
        c1[j] = a;
        c2[j] = b;
    }
    (c1, c2)
}

fn polynomial_mutation<R: Rng>(x: &mut [f64], params: &GeneticParams, rng: &mut R) {
    let rate = params.mutation_rate.unwrap_or(1.0 / x.len() as f64);
    let eta = params.mutation_eta;
    let pow = 1.0 / (eta + 1.0);
    for v in x.iter_mut() {
        if rng.gen::<f64>() >= rate {
            continue;
        }
        let y = *v;
        let u: f64 = rng.gen();
        let deltaq = if u < 0.5 {
            let xy = 1.0 - y;
            let val = 2.0 * u + (1.0 - 2.0 * u) * xy.powf(eta + 1.0);
            val.powf(pow) - 1.0
        } else {
            let xy = y;
            let val = 2.0 * (1.0 - u) + 2.0 * (u - 0.5) * xy.powf(eta + 1.0);
            1.0 - val.powf(pow)
        };
        *v = (y + deltaq).clamp(0.0, 1.0);
    }
}

/// `count` offspring (unit coordinates) from a parent pool of any size.
pub fn make_offspring<R: Rng>(
    parents: &[Vec<f64>],
    objectives: &[Vec<f64>],
    count: usize,
    params: &GeneticParams,
    rng: &mut R,
) -> Vec<Vec<f64>> {
    assert!(!parents.is_empty() && parents.len() == objectives.len());
    let (rank, crowd) = rank_and_crowding(objectives);
    let mut out = Vec::with_capacity(count + 1);
    while out.len() < count {
        let a = tournament(&rank, &crowd, rng);
        let b = tournament(&rank, &crowd, rng);
        let (mut c1, mut c2) = sbx_pair(&parents[a], &parents[b], params, rng);
        polynomial_mutation(&mut c1, params, rng);
        polynomial_mutation(&mut c2, params, rng);
        out.push(c1);
        out.push(c2);
    }
    out.truncate(count);
    out
}

/// One NSGA-II generation: the offspring of `population`, same size.
pub fn mogo_step<R: Rng>(
    population: &[(DesignPoint, Vec<f64>)],
    space: &DesignSpace,
    params: &GeneticParams,
    rng: &mut R,
) -> Result<Vec<DesignPoint>, OptimizerError> {
    let p = population.len();
    if p < 4 || p % 2 != 0 {
        return Err(OptimizerError::Config(format!(
            "population size must be even and at least 4, got {p}"
        )));
    }
    let unit: Vec<Vec<f64>> = population.iter().map(|(x, _)| space.to_unit(x)).collect();
    let objectives: Vec<Vec<f64>> = population.iter().map(|(_, f)| f.clone()).collect();
    Ok(make_offspring(&unit, &objectives, p, params, rng)
        .iter()
        .map(|u| space.from_unit(u))
        .collect())
}

/// Elitist survivor selection: whole fronts first, then the last front by
/// descending crowding distance. Returns `size` indices into `objectives`.
pub fn environmental_selection(objectives: &[Vec<f64>], size: usize) -> Vec<usize> {
    let mut chosen = Vec::with_capacity(size);
    for front in fast_non_dominated_sort(objectives) {
        if chosen.len() + front.len() <= size {
            chosen.extend(front);
            continue;
        }
        let d = crowding_distance(objectives, &front);
        let mut order: Vec<usize> = (0..front.len()).collect();
        order.sort_by(|&a, &b| d[b].total_cmp(&d[a]).then(front[a].cmp(&front[b])));
        for k in order.into_iter().take(size - chosen.len()) {
            chosen.push(front[k]);
        }
        break;
    }
    chosen
}
