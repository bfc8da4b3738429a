use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("design space must have at least one dimension")]
    Empty,
    #[error("bound {index} is not a proper interval: [{lo}, {hi}]")]
    BadBound { index: usize, lo: f64, hi: f64 },
    #[error("point has {got} coordinates, space has {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("coordinate {index} = {value} outside [{lo}, {hi}]")]
    OutOfBounds { index: usize, value: f64, lo: f64, hi: f64 },
}

/// Box-bounded continuous design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpace {
    bounds: Vec<(f64, f64)>,
}

impl DesignSpace {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self, SpaceError> {
        if bounds.is_empty() {
            return Err(SpaceError::Empty);
        }
        for (index, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(SpaceError::BadBound { index, lo, hi });
            }
        }
        Ok(Self { bounds })
    }

    /// The unit hypercube `[0, 1]^n`.
    pub fn unit(n: usize) -> Result<Self, SpaceError> {
        Self::new(vec![(0.0, 1.0); n])
    }

    pub fn dimension(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn check(&self, coords: &[f64]) -> Result<(), SpaceError> {
        if coords.len() != self.dimension() {
            return Err(SpaceError::Dimension { expected: self.dimension(), got: coords.len() });
        }
        for (index, (&value, &(lo, hi))) in coords.iter().zip(&self.bounds).enumerate() {
            if !(value >= lo && value <= hi) {
                return Err(SpaceError::OutOfBounds { index, value, lo, hi });
            }
        }
        Ok(())
    }

    pub fn point(&self, coords: Vec<f64>) -> Result<DesignPoint, SpaceError> {
        self.check(&coords)?;
        Ok(DesignPoint(coords))
    }

    /// Maps a unit-cube point into the space, clamping rounding spill.
    pub fn from_unit(&self, unit: &[f64]) -> DesignPoint {
        DesignPoint(
            unit.iter()
                .zip(&self.bounds)
                .map(|(&u, &(lo, hi))| (lo + u.clamp(0.0, 1.0) * (hi - lo)).clamp(lo, hi))
                .collect(),
        )
    }

    pub fn to_unit(&self, point: &DesignPoint) -> Vec<f64> {
        point
            .0
            .iter()
            .zip(&self.bounds)
            .map(|(&x, &(lo, hi))| ((x - lo) / (hi - lo)).clamp(0.0, 1.0))
            .collect()
    }
}

/// A proposal in the design space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DesignPoint(pub Vec<f64>);

impl DesignPoint {
    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}
