//! Direction vectors steering the outer optimization loop: the unit vector
//! from the running-mean reward vector toward its projection on the target
//! region. Both the Euclidean-unit and the l1-normalized forms are exposed;
//! drivers feed the l1 form to the linear subsolver.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::vecmath::{norm1, norm2, scale};

use super::project::project_intersection;
use super::spec::{AggregationSpec, MultiGroupSpec};
use super::TOL_INSIDE;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormKind {
    EuclideanUnit,
    L1Normalized,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Direction {
    pub d: Vec<f64>,
    pub norm_kind: NormKind,
}

impl Direction {
    pub fn zero(m: usize) -> Self {
        Direction {
            d: vec![0.0; m],
            norm_kind: NormKind::Zero,
        }
    }

    /// Euclidean-unit direction along `raw`; zero if `raw` is negligible.
    pub fn euclidean_unit(raw: &[f64]) -> Self {
        let n = norm2(raw);
        if n <= TOL_INSIDE {
            return Direction::zero(raw.len());
        }
        Direction {
            d: scale(raw, 1.0 / n),
            norm_kind: NormKind::EuclideanUnit,
        }
    }

    /// l1-normalized direction along `raw`; zero if `raw` is negligible.
    pub fn l1_normalized(raw: &[f64]) -> Self {
        let n = norm1(raw);
        if n <= TOL_INSIDE {
            return Direction::zero(raw.len());
        }
        Direction {
            d: scale(raw, 1.0 / n),
            norm_kind: NormKind::L1Normalized,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.norm_kind == NormKind::Zero
    }

    pub fn dim(&self) -> usize {
        self.d.len()
    }

    /// Re-expresses this direction with unit l1 norm (no-op for zero).
    pub fn to_l1(&self) -> Direction {
        if self.is_zero() {
            self.clone()
        } else {
            Direction::l1_normalized(&self.d)
        }
    }
}

/// Consensus direction: unit vector from `v` toward its projection on the
/// intersection of all groups' target sets; zero when `v` already sits
/// within `TOL_INSIDE` of the intersection.
pub fn direction_consensus(specs: &[AggregationSpec], v: &[f64]) -> Result<Direction> {
    let projected = project_intersection(specs, v)?;
    let raw: Vec<f64> = projected.iter().zip(v).map(|(p, x)| p - x).collect();
    Ok(Direction::euclidean_unit(&raw))
}

/// Malfare direction: per-group unit directions combined with weights
/// `zeta_n * dist_n^(2q-1) / (sum_n zeta_n dist_n^(2q))^((2q-1)/(2q))` —
/// the negative gradient of the 2q-power mean of group distances. Returns
/// the unnormalized combination along with its l1-normalized copy; both are
/// zero when every group is already satisfied.
pub fn direction_malfare(mg: &MultiGroupSpec, v: &[f64]) -> Result<(Vec<f64>, Direction)> {
    let m = mg.dim();
    let q = mg.q as f64;
    let mut units: Vec<Vec<f64>> = Vec::with_capacity(mg.groups.len());
    let mut dists: Vec<f64> = Vec::with_capacity(mg.groups.len());
    for g in &mg.groups {
        let p = g.project(v)?;
        let raw: Vec<f64> = p.iter().zip(v).map(|(a, b)| a - b).collect();
        let d = norm2(&raw);
        dists.push(d);
        units.push(if d > 0.0 { scale(&raw, 1.0 / d) } else { vec![0.0; m] });
    }
    if dists.iter().all(|&d| d <= TOL_INSIDE) {
        return Ok((vec![0.0; m], Direction::zero(m)));
    }
    let denom: f64 = mg
        .zeta
        .iter()
        .zip(&dists)
        .map(|(&z, &d)| z * d.powf(2.0 * q))
        .sum::<f64>()
        .powf((2.0 * q - 1.0) / (2.0 * q));
    let mut raw = vec![0.0; m];
    for ((unit, &d), &z) in units.iter().zip(&dists).zip(&mg.zeta) {
        if d <= 0.0 {
            continue;
        }
        let w = z * d.powf(2.0 * q - 1.0) / denom;
        for (ri, ui) in raw.iter_mut().zip(unit) {
            *ri += w * ui;
        }
    }
    let l1 = Direction::l1_normalized(&raw);
    Ok((raw, l1))
}

/// 2q-power mean of per-group distances from `v`, weighted by `zeta`.
pub fn malfare_value(mg: &MultiGroupSpec, v: &[f64]) -> Result<f64> {
    let q = mg.q as f64;
    let mut acc = 0.0;
    for (g, &z) in mg.groups.iter().zip(&mg.zeta) {
        acc += z * g.distance(v)?.powf(2.0 * q);
    }
    Ok(acc.powf(1.0 / (2.0 * q)))
}
