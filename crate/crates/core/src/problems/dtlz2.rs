use std::f64::consts::FRAC_PI_2;

/// Distance function: squared deviation of the trailing `n - m + 1`
/// variables from 0.5.
pub fn dtlz2_g(x: &[f64], m: usize) -> f64 {
    x[m - 1..].iter().map(|v| (v - 0.5).powi(2)).sum()
}

/// DTLZ2 objectives for `x` in `[0, 1]^n`, `n >= m >= 2`. On the Pareto set
/// (`g = 0`) the objective vector lies on the unit sphere.
pub fn dtlz2_eval(x: &[f64], m: usize) -> Vec<f64> {
    assert!(m >= 2 && x.len() >= m, "dtlz2 needs n >= m >= 2");
    let scale = 1.0 + dtlz2_g(x, m);
    let mut f = Vec::with_capacity(m);
    for k in 0..m {
        // Objective k (0-based) takes the product of cosines over the first
        // m-1-k position variables, then one sine unless k = 0.
        let n_cos = m - 1 - k;
        let mut v = scale;
        for &xj in &x[..n_cos] {
            v *= (xj * FRAC_PI_2).cos();
        }
        if k > 0 {
            v *= (x[n_cos] * FRAC_PI_2).sin();
        }
        f.push(v);
    }
    f
}
