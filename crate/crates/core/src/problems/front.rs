use rand_distr::{Distribution, StandardNormal};

use super::{ProblemError, ProblemSpec, DTLZ2};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrontSampling {
    /// Uniform on the positive orthant of the unit sphere.
    Uniform,
    /// Evenly spaced angles including both endpoints (two objectives only).
    Stratified,
}

/// Points on the known Pareto front of `problem`.
pub fn true_front_sample(
    problem: &ProblemSpec,
    count: usize,
    seed: u64,
    sampling: FrontSampling,
) -> Result<Vec<Vec<f64>>, ProblemError> {
    if problem.name != DTLZ2 {
        return Err(ProblemError::Unsupported(problem.name.clone()));
    }
    problem.validate()?;
    let m = problem.m;
    match sampling {
        FrontSampling::Stratified => {
            if m != 2 {
                return Err(ProblemError::Config(
                    "stratified front sampling is only defined for two objectives".into(),
                ));
            }
            Ok((0..count)
                .map(|i| {
                    let t = if count == 1 { 0.5 } else { i as f64 / (count - 1) as f64 };
                    let angle = t * std::f64::consts::FRAC_PI_2;
                    vec![angle.cos(), angle.sin()]
                })
                .collect())
        }
        FrontSampling::Uniform => {
            let mut rng = stream_rng(seed, Stream::Sampling, 0);
            let mut out = Vec::with_capacity(count);
            while out.len() < count {
                let v: Vec<f64> =
                    (0..m).map(|_| f64::abs(StandardNormal.sample(&mut rng))).collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > 1e-12 {
                    out.push(v.into_iter().map(|x| x / norm).collect());
                }
            }
            Ok(out)
        }
    }
}
