use optifab_core::optimizer::gp::{fit_gp, GaussianProcess, GpFitConfig, GpHyperparams, Standardizer};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn kernel(h: &GpHyperparams, a: &[f64], b: &[f64]) -> f64 {
    let r2: f64 = a
        .iter()
        .zip(b)
        .zip(&h.length_scales)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    h.signal_variance * (-0.5 * r2).exp()
}

/// Explicit inverse by Gauss-Jordan elimination with partial pivoting.
fn invert(mut a: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let n = a.len();
    let mut inv: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| (i == j) as u8 as f64).collect()).collect();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().partial_cmp(&a[j][c].abs()).unwrap()).unwrap();
        a.swap(c, p);
        inv.swap(c, p);
        let d = a[c][c];
        for j in 0..n {
            a[c][j] /= d;
            inv[c][j] /= d;
        }
        for r in 0..n {
            if r != c {
                let f = a[r][c];
                for j in 0..n {
                    a[r][j] -= f * a[c][j];
                    inv[r][j] -= f * inv[c][j];
                }
            }
        }
    }
    inv
}

fn oracle_predict(h: &GpHyperparams, xs: &[Vec<f64>], ys: &[f64], x: &[f64]) -> (f64, f64) {
    let n = xs.len();
    let k: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| kernel(h, &xs[i], &xs[j]) + if i == j { h.noise_variance } else { 0.0 }).collect())
        .collect();
    let kinv = invert(k);
    let ks: Vec<f64> = xs.iter().map(|xi| kernel(h, xi, x)).collect();
    let mut mean = h.mean;
    let mut quad = 0.0;
    for i in 0..n {
        for j in 0..n {
            mean += ks[i] * kinv[i][j] * (ys[j] - h.mean);
            quad += ks[i] * kinv[i][j] * ks[j];
        }
    }
    (mean, h.signal_variance - quad)
}

#[test]
fn prediction_matches_explicit_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10 {
        let xs: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.gen()).collect()).collect();
        let ys: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let h = GpHyperparams {
            mean: rng.gen_range(-0.5..0.5),
            signal_variance: rng.gen_range(0.5..2.0),
            length_scales: (0..3).map(|_| rng.gen_range(0.2..1.0)).collect(),
            noise_variance: 1e-3,
        };
        let gp = GaussianProcess::new(h.clone(), xs.clone(), &ys).unwrap();
        for _ in 0..5 {
            let x: Vec<f64> = (0..3).map(|_| rng.gen()).collect();
            let (m, v) = gp.predict(&x);
            let (mo, vo) = oracle_predict(&h, &xs, &ys, &x);
            assert!((m - mo).abs() < 1e-8, "{m} vs {mo}");
            assert!((v - vo.max(0.0)).abs() < 1e-8, "{v} vs {vo}");
        }
    }
}

#[test]
fn fitted_line_interpolates_midpoint() {
    let xs = vec![vec![0.0], vec![0.5], vec![1.0]];
    let raw = [1.0, 2.0, 3.0];
    let st = Standardizer::fit(&raw);
    let ys = st.apply_all(&raw);
    let h = fit_gp(&xs, &ys, &GpFitConfig::default()).unwrap();
    let gp = GaussianProcess::new(h.clone(), xs.clone(), &ys).unwrap();
    let (m, _) = gp.predict(&[0.25]);
    let (mo, _) = oracle_predict(&h, &xs, &ys, &[0.25]);
    assert!((m - mo).abs() < 1e-8);
    let linear = st.apply(1.5);
    assert!((m - linear).abs() < 1e-3, "{m} vs {linear} with {h:?}");
}

#[test]
fn posterior_is_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let xs: Vec<Vec<f64>> = (0..12).map(|_| (0..2).map(|_| rng.gen()).collect()).collect();
    let ys: Vec<f64> = xs.iter().map(|x| (3.0 * x[0]).sin() + x[1]).collect();
    let ys = Standardizer::fit(&ys).apply_all(&ys);
    let h = fit_gp(&xs, &ys, &GpFitConfig::default()).unwrap();
    let a = GaussianProcess::new(h.clone(), xs.clone(), &ys).unwrap();
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.shuffle(&mut rng);
    let b = GaussianProcess::new(
        h,
        order.iter().map(|&i| xs[i].clone()).collect(),
        &order.iter().map(|&i| ys[i]).collect::<Vec<_>>(),
    )
    .unwrap();
    for _ in 0..20 {
        let x: Vec<f64> = (0..2).map(|_| rng.gen()).collect();
        let (ma, va) = a.predict(&x);
        let (mb, vb) = b.predict(&x);
        assert!((ma - mb).abs() < 1e-10 && (va - vb).abs() < 1e-10);
    }
}

#[test]
fn noise_free_interpolation_and_prior() {
    let xs = vec![vec![0.1, 0.2], vec![0.8, 0.4], vec![0.5, 0.9]];
    let ys = [0.3, -1.0, 0.7];
    let h = GpHyperparams { noise_variance: 0.0, ..GpHyperparams::default_for(2) };
    let gp = GaussianProcess::new(h.clone(), xs.clone(), &ys).unwrap();
    for (x, y) in xs.iter().zip(ys) {
        let (m, v) = gp.predict(x);
        assert!((m - y).abs() < 1e-6 && v <= 1e-5);
    }
    let empty = GaussianProcess::new(h.clone(), vec![], &[]).unwrap();
    assert_eq!(empty.predict(&[0.4, 0.4]), (0.0, h.signal_variance));
}
