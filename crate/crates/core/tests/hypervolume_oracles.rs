use optifab_core::hypervolume::{
    hypervolume_exact, hypervolume_mc, sphere_front_ceiling, HvTracker, DEFAULT_MC_SAMPLES,
};
use optifab_core::problems::{true_front_sample, FrontSampling};
use optifab_core::ProblemSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inclusion-exclusion over all subsets: the union of boxes [p, ref].
fn inclusion_exclusion(front: &[Vec<f64>], reference: &[f64]) -> f64 {
    let pts: Vec<&Vec<f64>> = front
        .iter()
        .filter(|p| p.iter().zip(reference).all(|(a, r)| a < r))
        .collect();
    let k = pts.len();
    let mut total = 0.0;
    for mask in 1u32..(1u32 << k) {
        let mut corner = vec![f64::NEG_INFINITY; reference.len()];
        for (i, p) in pts.iter().enumerate() {
            if mask & (1 << i) != 0 {
                for (c, v) in corner.iter_mut().zip(p.iter()) {
                    *c = c.max(*v);
                }
            }
        }
        let vol: f64 = corner.iter().zip(reference).map(|(c, r)| r - c).product();
        if mask.count_ones() % 2 == 1 {
            total += vol;
        } else {
            total -= vol;
        }
    }
    total
}

fn random_front(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
    (0..k).map(|_| (0..m).map(|_| rng.gen::<f64>()).collect()).collect()
}

#[test]
fn exact_matches_inclusion_exclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..120 {
        let m = 2 + trial % 2;
        let k = 1 + trial % 14;
        let front = random_front(&mut rng, m, k);
        let reference = vec![1.05; m];
        let exact = hypervolume_exact(&front, &reference).unwrap();
        let oracle = inclusion_exclusion(&front, &reference);
        assert!((exact - oracle).abs() < 1e-9, "m={m} k={k}: {exact} vs {oracle}");
    }
}

#[test]
fn four_objectives_match_inclusion_exclusion() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for k in 1..10 {
        let front = random_front(&mut rng, 4, k);
        let reference = vec![1.0; 4];
        let exact = hypervolume_exact(&front, &reference).unwrap();
        assert!((exact - inclusion_exclusion(&front, &reference)).abs() < 1e-9);
    }
}

#[test]
fn documented_examples() {
    let r = [2.0, 2.0];
    assert!((hypervolume_exact(&[vec![1.0, 0.0], vec![0.0, 1.0]], &r).unwrap() - 3.0).abs() < 1e-12);
    assert_eq!(hypervolume_exact(&[vec![0.0, 0.0]], &[1.0, 1.0]).unwrap(), 1.0);
    assert_eq!(hypervolume_exact(&[], &r).unwrap(), 0.0);

    let whole = hypervolume_mc(&[vec![0.0, 0.0]], &[1.0, 1.0], 100_000, 1).unwrap();
    assert_eq!(whole.value, 1.0);
    assert_eq!(whole.stderr, 0.0);

    let est = hypervolume_mc(&[vec![1.0, 0.0], vec![0.0, 1.0]], &r, 100_000, 2).unwrap();
    assert!((est.value - 3.0).abs() <= 3.0 * est.stderr, "{est:?}");
}

#[test]
fn mc_agrees_with_exact_on_sphere_front() {
    let front = true_front_sample(&ProblemSpec::dtlz2(12, 3), 50, 4, FrontSampling::Uniform).unwrap();
    let reference = [1.1; 3];
    let exact = hypervolume_exact(&front, &reference).unwrap();
    let est = hypervolume_mc(&front, &reference, DEFAULT_MC_SAMPLES, 9).unwrap();
    assert!((est.value - exact).abs() <= 3.0 * est.stderr, "{} vs {exact} (se {})", est.value, est.stderr);
    assert!(exact <= sphere_front_ceiling(3, 1.1));
}

#[test]
fn two_objective_staircase() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let front = random_front(&mut rng, 2, 12);
        let reference = [1.0, 1.0];
        // staircase over the nondominated set sorted by the first objective
        let mut pts = optifab_core::pareto_filter(&front).unwrap();
        pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap());
        let mut stair = 0.0;
        let mut prev_y = reference[1];
        for p in &pts {
            stair += (reference[0] - p[0]) * (prev_y - p[1]);
            prev_y = p[1];
        }
        assert!((hypervolume_exact(&front, &reference).unwrap() - stair).abs() < 1e-12);
    }
}

#[test]
fn tracker_is_monotone_and_matches_exact() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let reference = [1.1, 1.1, 1.1];
    let mut tracker = HvTracker::new(&[0.0; 3], &reference, DEFAULT_MC_SAMPLES, 3).unwrap();
    let mut seen = Vec::new();
    let mut last = 0.0;
    for _ in 0..40 {
        let p: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.2)).collect();
        tracker.insert(&p);
        seen.push(p);
        let v = tracker.estimate().value;
        assert!(v >= last);
        last = v;
    }
    assert!((last - hypervolume_exact(&seen, &reference).unwrap()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn adding_a_point_never_decreases(
        pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..12),
        extra in prop::collection::vec(0.0f64..1.0, 3),
    ) {
        let r = [1.0, 1.0, 1.0];
        let before = hypervolume_exact(&pts, &r).unwrap();
        let mut more = pts.clone();
        more.push(extra);
        prop_assert!(hypervolume_exact(&more, &r).unwrap() >= before - 1e-12);
    }

    #[test]
    fn dominated_point_changes_nothing(
        pts in prop::collection::vec(prop::collection::vec(0.0f64..0.9, 2), 1..12),
        idx in 0usize..12,
        bump in 0.0f64..0.1,
    ) {
        let r = [1.0, 1.0];
        let before = hypervolume_exact(&pts, &r).unwrap();
        let base = &pts[idx % pts.len()];
        let mut more = pts.clone();
        more.push(base.iter().map(|v| v + bump).collect());
        prop_assert!((hypervolume_exact(&more, &r).unwrap() - before).abs() < 1e-12);
    }

    #[test]
    fn permutation_invariant(
        pts in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..12),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let r = [1.0, 1.0, 1.0];
        let mut shuffled = pts.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let a = hypervolume_exact(&pts, &r).unwrap();
        let b = hypervolume_exact(&shuffled, &r).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }
}
