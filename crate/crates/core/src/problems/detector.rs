//! Synthetic detector-layout problem: seven normalized geometry parameters,
//! three conflicting smooth multimodal losses and an ellipsoidal overlap
//! region that makes roughly a tenth of the design space infeasible.
//!
//! Each loss is `sum_j w_j (x_j - c_j)^2 / sum_j w_j
//!               + A * mean_j sin^2(pi * F * (x_j - c_j))`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::Deserialize;

use crate::space::DesignPoint;

/// The versioned problem definition, including its golden anchor value.
pub const DETECTOR_TOY_DEFINITION: &str = include_str!("../../problems/detector_toy.json");

#[derive(Debug, Clone, Deserialize)]
struct Loss {
    center: Vec<f64>,
    weights: Vec<f64>,
    ripple_amplitude: f64,
    ripple_frequency: f64,
}

#[derive(Debug, Clone, Deserialize)]
struct Exclusion {
    axes: Vec<usize>,
    center: Vec<f64>,
    radii: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
struct Anchor {
    x: Vec<f64>,
    objectives: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct DetectorToy {
    version: String,
    parameters: Vec<String>,
    objectives: Vec<Loss>,
    exclusion: Exclusion,
    reference_point: Vec<f64>,
    exclusion_center_point: Vec<f64>,
    anchor: Anchor,
}

impl DetectorToy {
    pub fn builtin() -> &'static DetectorToy {
        static DEF: OnceLock<DetectorToy> = OnceLock::new();
        DEF.get_or_init(|| {
            serde_json::from_str(DETECTOR_TOY_DEFINITION).expect("bundled detector-toy definition")
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn n(&self) -> usize {
        self.parameters.len()
    }

    pub fn m(&self) -> usize {
        self.objectives.len()
    }

    pub fn reference_point(&self) -> &[f64] {
        &self.reference_point
    }

    /// Overlap check: true inside the exclusion ellipsoid.
    pub fn violates(&self, x: &[f64]) -> bool {
        let e = &self.exclusion;
        let r2: f64 = e
            .axes
            .iter()
            .zip(&e.center)
            .zip(&e.radii)
            .map(|((&axis, c), r)| ((x[axis] - c) / r).powi(2))
            .sum();
        r2 <= 1.0
    }

    pub fn objectives(&self, x: &[f64]) -> Vec<f64> {
        self.objectives
            .iter()
            .map(|loss| {
                let wsum: f64 = loss.weights.iter().sum();
                let quad: f64 = loss
                    .weights
                    .iter()
                    .zip(x)
                    .zip(&loss.center)
                    .map(|((w, xi), ci)| w * (xi - ci).powi(2))
                    .sum::<f64>()
                    / wsum;
                let ripple: f64 = x
                    .iter()
                    .zip(&loss.center)
                    .map(|(xi, ci)| (PI * loss.ripple_frequency * (xi - ci)).sin().powi(2))
                    .sum::<f64>()
                    / x.len() as f64;
                quad + loss.ripple_amplitude * ripple
            })
            .collect()
    }

    pub fn exclusion_center(&self) -> DesignPoint {
        DesignPoint(self.exclusion_center_point.clone())
    }

    pub fn anchor(&self) -> DesignPoint {
        DesignPoint(self.anchor.x.clone())
    }

    pub fn anchor_objectives(&self) -> &[f64] {
        &self.anchor.objectives
    }
}
