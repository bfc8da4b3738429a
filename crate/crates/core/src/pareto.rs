//! Dominance relations, Pareto filtering and NSGA-II ranking primitives.
//! All objectives are minimized.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ParetoError {
    #[error("objective vector {index} has {got} components, expected {expected}")]
    MixedDimensions { index: usize, expected: usize, got: usize },
    #[error("objective vector {index} contains a non-finite value")]
    NonFinite { index: usize },
}

/// `a` dominates `b`: no worse everywhere, strictly better somewhere.
pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    debug_assert_eq!(a.len(), b.len());
    let mut strictly = false;
    for (x, y) in a.iter().zip(b) {
        if x > y {
            return false;
        }
        if x < y {
            strictly = true;
        }
    }
    strictly
}

fn validate(points: &[Vec<f64>]) -> Result<(), ParetoError> {
    let Some(first) = points.first() else {
        return Ok(());
    };
    let expected = first.len();
    for (index, p) in points.iter().enumerate() {
        if p.len() != expected {
            return Err(ParetoError::MixedDimensions { index, expected, got: p.len() });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(ParetoError::NonFinite { index });
        }
    }
    Ok(())
}

/// Indices of the nondominated members; of exact duplicates only the first
/// occurrence is kept. Indices come back in input order.
pub fn nondominated_indices(points: &[Vec<f64>]) -> Result<Vec<usize>, ParetoError> {
    validate(points)?;
    let mut keep = Vec::new();
    'outer: for (i, p) in points.iter().enumerate() {
        for (j, q) in points.iter().enumerate() {
            if i == j {
                continue;
            }
            if dominates(q, p) || (j < i && q == p) {
                continue 'outer;
            }
        }
        keep.push(i);
    }
    Ok(keep)
}

/// The nondominated subset of `points`, duplicates collapsed.
pub fn pareto_filter(points: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, ParetoError> {
    Ok(nondominated_indices(points)?.into_iter().map(|i| points[i].clone()).collect())
}

/// Fast non-dominated sorting. Returns fronts of indices; front 0 is the
/// nondominated set. Within a front indices are ascending.
pub fn fast_non_dominated_sort(points: &[Vec<f64>]) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut dominated_by: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut domination_count = vec![0usize; n];
    for i in 0..n {
        for j in (i + 1)..n {
            if dominates(&points[i], &points[j]) {
                dominated_by[i].push(j);
                domination_count[j] += 1;
            } else if dominates(&points[j], &points[i]) {
                dominated_by[j].push(i);
                domination_count[i] += 1;
            }
        }
    }
    let mut fronts = Vec::new();
    let mut current: Vec<usize> = (0..n).filter(|&i| domination_count[i] == 0).collect();
    while !current.is_empty() {
        let mut next = Vec::new();
        for &i in &current {
            for &j in &dominated_by[i] {
                domination_count[j] -= 1;
                if domination_count[j] == 0 {
                    next.push(j);
                }
            }
        }
        next.sort_unstable();
        fronts.push(current);
        current = next;
    }
    fronts
}

/// Crowding distance of each member of `front` (indices into `points`).
/// Boundary members of every objective get `f64::INFINITY`.
pub fn crowding_distance(points: &[Vec<f64>], front: &[usize]) -> Vec<f64> {
    let k = front.len();
    let mut distance = vec![0.0; k];
    if k == 0 {
        return distance;
    }
    if k <= 2 {
        return vec![f64::INFINITY; k];
    }
    let m = points[front[0]].len();
    let mut order: Vec<usize> = (0..k).collect();
    for obj in 0..m {
        order.sort_by(|&a, &b| {
            points[front[a]][obj].total_cmp(&points[front[b]][obj]).then(a.cmp(&b))
        });
        let lo = points[front[order[0]]][obj];
        let hi = points[front[order[k - 1]]][obj];
        distance[order[0]] = f64::INFINITY;
        distance[order[k - 1]] = f64::INFINITY;
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        for w in 1..k - 1 {
            let prev = points[front[order[w - 1]]][obj];
            let next = points[front[order[w + 1]]][obj];
            distance[order[w]] += (next - prev) / span;
        }
    }
    distance
}
