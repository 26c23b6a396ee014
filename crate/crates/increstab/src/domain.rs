//! Axis-aligned boxes: the domains everything else samples, grids and clips
//! against.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A closed axis-aligned box `[lo_1, hi_1] x ... x [lo_n, hi_n]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BoxDomain {
    /// Per-axis `(lo, hi)` bounds with `lo <= hi`.
    bounds: Vec<(f64, f64)>,
}

impl BoxDomain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::InvalidArgument("box needs at least one axis".into()));
        }
        for &(lo, hi) in &bounds {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::InvalidArgument(format!(
                    "box axis [{lo}, {hi}] is not a finite non-empty interval"
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// The symmetric box `[-r, r]^dim`.
    pub fn symmetric(dim: usize, r: f64) -> Result<Self> {
        Self::new(vec![(-r, r); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.bounds[axis].0
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.bounds[axis].1
    }

    /// Membership in the closed box.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(&self.bounds)
                .all(|(&xi, &(lo, hi))| lo <= xi && xi <= hi)
    }

    /// Componentwise clamp onto the box. For a box this is exactly the
    /// Euclidean projection (the nearest point of the box), so it inherits
    /// the projection's nonexpansiveness.
    pub fn project(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        for ((o, &xi), &(lo, hi)) in out.iter_mut().zip(x).zip(&self.bounds) {
            *o = xi.clamp(lo, hi);
        }
    }

    /// Maps a point of the unit cube `[0,1)^dim` affinely into the box.
    pub fn lerp(&self, unit: &[f64], out: &mut [f64]) {
        debug_assert_eq!(unit.len(), self.dim());
        for ((o, &t), &(lo, hi)) in out.iter_mut().zip(unit).zip(&self.bounds) {
            *o = lo + t * (hi - lo);
        }
    }

    /// Checks `inner ⊆ self` (both closed).
    pub fn contains_box(&self, inner: &BoxDomain) -> bool {
        self.dim() == inner.dim()
            && self
                .bounds
                .iter()
                .zip(&inner.bounds)
                .all(|(&(lo, hi), &(ilo, ihi))| lo <= ilo && ihi <= hi)
    }

    /// Concatenates the axes of `self` and `other` — the sample space for
    /// pairs like `(x, x')` or `(x, x', u, u')`.
    pub fn product(&self, other: &BoxDomain) -> BoxDomain {
        let mut bounds = self.bounds.clone();
        bounds.extend_from_slice(&other.bounds);
        BoxDomain { bounds }
    }
}
