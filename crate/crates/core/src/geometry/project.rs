//! Euclidean projection onto a single target set and onto intersections.
//!
//! The set is upward-closed in the nonnegative orthant, so the projection of
//! an outside point never decreases a coordinate. Three solver paths:
//!
//! * `p = neg_inf`: componentwise clamp (box corner).
//! * `p = 1`: halfspace-with-positivity KKT, multiplier localized by
//!   bisection and then recovered exactly from the active set.
//! * other `p`: bisection on the constraint multiplier, with each coordinate
//!   recovered by a safeguarded Newton solve of its stationarity equation;
//!   a projected-gradient descent along the constraint surface backs it up
//!   if bracketing fails.

use crate::error::{Error, Result};
use crate::vecmath::{dist2, dot, sub};

use super::spec::{AggregationSpec, Exponent};
use super::{MAX_DYKSTRA_SWEEPS, MAX_ITER, TOL_PROJ_EXACT, TOL_PROJ_GENERAL};

impl AggregationSpec {
    /// Numerical tolerance at which this spec's projections are solved.
    pub fn projection_tolerance(&self) -> f64 {
        match self.p {
            Exponent::NegInf | Exponent::Finite(1.0) => TOL_PROJ_EXACT,
            _ => TOL_PROJ_GENERAL,
        }
    }

    /// Euclidean projection of `v` onto the target set.
    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::domain(format!(
                "project: expected {} components, got {}",
                self.dim(),
                v.len()
            )));
        }
        let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
        // If clamping to the orthant already satisfies the threshold, that is
        // the projection: the residual v - clamped is supported on negative
        // coordinates, so the obtuse inequality holds against any member.
        if self.aggregate_unchecked(&clamped) >= self.c - super::TOL_CONTAIN {
            return Ok(clamped);
        }
        match self.p {
            Exponent::NegInf => Ok(self.project_neg_inf(v)),
            Exponent::Finite(p) if p == 1.0 => Ok(self.project_linear(v)),
            Exponent::Finite(p) => self.project_general(v, p),
        }
    }

    /// Distance from `v` to the target set; zero iff `v` is a member.
    pub fn distance(&self, v: &[f64]) -> Result<f64> {
        Ok(dist2(v, &self.project(v)?))
    }

    fn project_neg_inf(&self, v: &[f64]) -> Vec<f64> {
        self.alpha
            .iter()
            .zip(v)
            .map(|(&a, &x)| if a > 0.0 { x.max(self.c) } else { x.max(0.0) })
            .collect()
    }

    /// Projection onto {z >= 0, alpha . z >= c}. For a fixed multiplier
    /// `lam`, stationarity gives z_i = max(v_i + lam * alpha_i, 0); the dot
    /// product alpha . z(lam) is piecewise linear and nondecreasing, so we
    /// bracket the root by doubling, bisect to localize the active set, and
    /// then solve for lam exactly on the final linear piece.
    fn project_linear(&self, v: &[f64]) -> Vec<f64> {
        let z_at = |lam: f64| -> Vec<f64> {
            v.iter()
                .zip(&self.alpha)
                .map(|(&vi, &ai)| (vi + lam * ai).max(0.0))
                .collect()
        };
        let g = |lam: f64| dot(&self.alpha, &z_at(lam));

        let mut hi = 1.0;
        while g(hi) < self.c {
            hi *= 2.0;
            if hi > 1e18 {
                break;
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < self.c {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        // Exact multiplier on the located linear piece.
        let lam = 0.5 * (lo + hi);
        let mut num = self.c;
        let mut den = 0.0;
        for (&vi, &ai) in v.iter().zip(&self.alpha) {
            if vi + lam * ai > 0.0 {
                num -= ai * vi;
                den += ai * ai;
            }
        }
        let lam_exact = if den > 0.0 { num / den } else { lam };
        z_at(lam_exact.max(0.0))
    }

    /// General power-mean constraint. At the optimum the constraint is
    /// active; stationarity per coordinate reads
    /// `z_i - mu * alpha_i * z_i^(p-1) = v_i` with a single multiplier
    /// `mu >= 0` (the threshold factor folded in). Every coordinate solve is
    /// monotone in `mu`, hence so is the attained aggregation, and an outer
    /// bisection on `mu` pins the boundary.
    fn project_general(&self, v: &[f64], p: f64) -> Result<Vec<f64>> {
        let z_at = |mu: f64| -> Vec<f64> {
            v.iter()
                .zip(&self.alpha)
                .map(|(&vi, &ai)| {
                    if ai > 0.0 {
                        coordinate_root(vi, mu * ai, p)
                    } else {
                        vi.max(0.0)
                    }
                })
                .collect()
        };

        let mut hi = 1.0;
        let mut bracketed = false;
        for _ in 0..200 {
            if self.aggregate_unchecked(&z_at(hi)) >= self.c {
                bracketed = true;
                break;
            }
            hi *= 2.0;
        }
        if !bracketed {
            return self.project_surface_descent(v, p);
        }

        let mut lo = 0.0;
        let mut z = z_at(hi);
        for _ in 0..MAX_ITER {
            let mid = 0.5 * (lo + hi);
            z = z_at(mid);
            let f = self.aggregate_unchecked(&z);
            if f < self.c {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= 1e-15 * hi.max(1.0) && (f - self.c).abs() <= TOL_PROJ_GENERAL {
                return Ok(z);
            }
        }
        let residual = (self.aggregate_unchecked(&z) - self.c).abs();
        if residual <= TOL_PROJ_GENERAL * 10.0 {
            Ok(z)
        } else {
            self.project_surface_descent(v, p)
        }
    }

    /// Fallback: projected-gradient descent of the squared distance along the
    /// constraint surface, using the degree-1 homogeneity of the power mean
    /// to retract iterates radially back onto the boundary, with Armijo
    /// backtracking.
    fn project_surface_descent(&self, v: &[f64], _p: f64) -> Result<Vec<f64>> {
        let retract = |y: &[f64]| -> Vec<f64> {
            let y: Vec<f64> = y.iter().map(|&x| x.max(1e-12)).collect();
            let f = self.aggregate_unchecked(&y);
            if f <= 0.0 {
                vec![self.c; y.len()]
            } else {
                y.iter().map(|&x| x * self.c / f).collect()
            }
        };
        let obj = |z: &[f64]| 0.5 * dist2(z, v).powi(2);

        let mut z = vec![self.c; v.len()];
        let mut fz = obj(&z);
        let mut step = 1.0;
        let mut last_move = f64::INFINITY;
        for _ in 0..MAX_ITER {
            let grad: Vec<f64> = z.iter().zip(v).map(|(&zi, &vi)| zi - vi).collect();
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = z
                    .iter()
                    .zip(&grad)
                    .map(|(&zi, &gi)| zi - step * gi)
                    .collect();
                let cand = retract(&cand);
                let fc = obj(&cand);
                let decrease: f64 = grad
                    .iter()
                    .zip(z.iter().zip(&cand))
                    .map(|(&g, (&a, &b))| g * (a - b))
                    .sum();
                if fc <= fz - 1e-4 * decrease.max(0.0) && fc < fz {
                    last_move = dist2(&cand, &z);
                    z = cand;
                    fz = fc;
                    accepted = true;
                    step *= 1.3;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                // Line search exhausted: stationary at numerical precision.
                last_move = 0.0;
            }
            if last_move < 1e-13 {
                break;
            }
        }
        if last_move < 1e-6 {
            Ok(z)
        } else {
            Err(Error::solver("projection surface descent", last_move))
        }
    }
}

/// Solves `z - kappa * z^(p-1) = v` for `z > 0` (`kappa = mu * alpha_i > 0`).
/// The left side is strictly increasing in `z` with a pole at zero, so the
/// root is bracketed by `(0, v+ + kappa + 1]`; safeguarded Newton-bisection
/// keeps every iterate inside the bracket.
fn coordinate_root(v: f64, kappa: f64, p: f64) -> f64 {
    if kappa == 0.0 {
        return v.max(0.0);
    }
    if p == 0.0 {
        // z^2 - v z - kappa = 0, positive root.
        return 0.5 * (v + (v * v + 4.0 * kappa).sqrt());
    }
    let mut lo = 0.0;
    let mut hi = v.max(0.0) + kappa + 1.0; // z >= 1 gives z^(p-1) <= 1, so h > 0 here
    let mut z = hi;
    for _ in 0..200 {
        let h = z - kappa * z.powf(p - 1.0) - v;
        if h.abs() <= 1e-14 * z.max(1.0) {
            return z;
        }
        if h > 0.0 {
            hi = z;
        } else {
            lo = z;
        }
        let dh = 1.0 + kappa * (1.0 - p) * z.powf(p - 2.0);
        let newton = z - h / dh;
        z = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            return 0.5 * (lo + hi);
        }
    }
    z
}

/// Euclidean projection onto the intersection of target sets via Dykstra's
/// alternating projections (plain alternation only reaches feasibility, not
/// the projection). The intersection is never empty: the constant vector at
/// the largest threshold belongs to every set.
pub fn project_intersection(specs: &[AggregationSpec], v: &[f64]) -> Result<Vec<f64>> {
    if specs.is_empty() {
        return Err(Error::domain("project_intersection: no sets given"));
    }
    if specs.len() == 1 {
        return specs[0].project(v);
    }
    let tol = specs
        .iter()
        .map(|s| s.projection_tolerance())
        .fold(0.0, f64::max);

    let n = v.len();
    let mut z = v.to_vec();
    let mut corrections = vec![vec![0.0; n]; specs.len()];
    for _ in 0..MAX_DYKSTRA_SWEEPS {
        let prev = z.clone();
        for (spec, corr) in specs.iter().zip(corrections.iter_mut()) {
            let shifted: Vec<f64> = z.iter().zip(corr.iter()).map(|(a, b)| a + b).collect();
            let projected = spec.project(&shifted)?;
            *corr = sub(&shifted, &projected);
            z = projected;
        }
        let moved = dist2(&z, &prev);
        if moved <= tol {
            let worst = specs
                .iter()
                .map(|s| s.distance(&z))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(0.0, f64::max);
            if worst <= tol.max(1e-8) {
                return Ok(z);
            }
        }
    }
    let residual = specs
        .iter()
        .map(|s| s.distance(&z))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    Err(Error::solver("Dykstra intersection projection", residual))
}

/// Distance from `v` to the intersection of the given sets.
pub fn distance_intersection(specs: &[AggregationSpec], v: &[f64]) -> Result<f64> {
    Ok(dist2(v, &project_intersection(specs, v)?))
}

/// Smallest value of `<theta, z>` over the target set, for `theta >= 0` with
/// all components positive on the spec's support. Closed form via Lagrange
/// stationarity on the boundary; serves as an independent check that
/// projections satisfy the supporting-hyperplane characterization.
pub fn support_min(spec: &AggregationSpec, theta: &[f64]) -> Result<f64> {
    if theta.len() != spec.dim() {
        return Err(Error::domain("support_min: dimension mismatch"));
    }
    if theta.iter().any(|&t| t < 0.0) {
        return Err(Error::domain("support_min: theta must be nonnegative"));
    }
    let supported: Vec<usize> = (0..spec.dim()).filter(|&i| spec.alpha[i] > 0.0).collect();
    match spec.p {
        Exponent::NegInf => Ok(spec.c * supported.iter().map(|&i| theta[i]).sum::<f64>()),
        Exponent::Finite(p) => {
            if supported.iter().any(|&i| theta[i] == 0.0) {
                // Mass can be shifted onto the free coordinate: infimum 0
                // for p > 0; for p <= 0 it is an asymptotic 0 as well.
                return Ok(0.0);
            }
            if p == 0.0 {
                let log_lam = spec.c.ln()
                    - supported
                        .iter()
                        .map(|&i| spec.alpha[i] * (spec.alpha[i] / theta[i]).ln())
                        .sum::<f64>();
                return Ok(log_lam.exp());
            }
            if p == 1.0 {
                let best = supported
                    .iter()
                    .map(|&i| theta[i] / spec.alpha[i])
                    .fold(f64::INFINITY, f64::min);
                return Ok(spec.c * best);
            }
            // z_i proportional to (alpha_i / theta_i)^(1/(1-p)), scaled onto
            // the boundary by homogeneity.
            let e = 1.0 / (1.0 - p);
            let shape: Vec<f64> = supported
                .iter()
                .map(|&i| (spec.alpha[i] / theta[i]).powf(e))
                .collect();
            let f_shape: f64 = supported
                .iter()
                .zip(&shape)
                .map(|(&i, &s)| spec.alpha[i] * s.powf(p))
                .sum::<f64>()
                .powf(1.0 / p);
            let scale = spec.c / f_shape;
            Ok(supported
                .iter()
                .zip(&shape)
                .map(|(&i, &s)| theta[i] * s * scale)
                .sum())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::spec::{AggregationSpec, Exponent};
    use crate::vecmath::norm2;

    fn spec(alpha: &[f64], p: Exponent, c: f64) -> AggregationSpec {
        AggregationSpec::new(alpha.to_vec(), p, c).unwrap()
    }

    #[test]
    fn neg_inf_projection_is_box_clamp() {
        let s = spec(&[0.5, 0.5], Exponent::NegInf, 1.0);
        let z = s.project(&[0.2, 3.0]).unwrap();
        assert!(dist2(&z, &[1.0, 3.0]) < 1e-12);
    }

    #[test]
    fn linear_projection_textbook_case() {
        let s = spec(&[0.5, 0.5], Exponent::Finite(1.0), 1.0);
        let z = s.project(&[0.0, 0.0]).unwrap();
        assert!(dist2(&z, &[1.0, 1.0]) < 1e-9);
        assert!((s.distance(&[0.0, 0.0]).unwrap() - 2f64.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn linear_projection_with_active_positivity() {
        // Projection onto the halfspace alone would push z_1 negative.
        let s = spec(&[0.9, 0.1], Exponent::Finite(1.0), 1.0);
        let v = [-5.0, 0.5];
        let z = s.project(&v).unwrap();
        assert!(z.iter().all(|&x| x >= 0.0));
        assert!(s.contains(&z));
        // Against brute-force active-set enumeration.
        let brute = brute_force_linear(&s, &v);
        assert!(dist2(&z, &brute) < 1e-9, "{z:?} vs {brute:?}");
    }

    fn brute_force_linear(s: &AggregationSpec, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut consider = |z: Vec<f64>| {
            if z.iter().any(|&x| x < -1e-12) {
                return;
            }
            if dot(&s.alpha, &z) < s.c - 1e-9 {
                return;
            }
            let d = dist2(&z, v);
            if best.as_ref().map_or(true, |(b, _)| d < *b) {
                best = Some((d, z));
            }
        };
        // All subsets pinned to zero, halfspace active on the rest.
        for mask in 0..(1u32 << m) {
            let free: Vec<usize> = (0..m).filter(|i| mask & (1 << i) == 0).collect();
            if free.is_empty() {
                continue;
            }
            let af: Vec<f64> = free.iter().map(|&i| s.alpha[i]).collect();
            let vf: Vec<f64> = free.iter().map(|&i| v[i]).collect();
            let den = dot(&af, &af);
            if den == 0.0 {
                continue;
            }
            let t = (s.c - dot(&af, &vf)) / den;
            let mut z = vec![0.0; m];
            for (k, &i) in free.iter().enumerate() {
                z[i] = vf[k] + t * af[k];
            }
            consider(z);
            // Also the unconstrained-in-halfspace candidate.
            let mut z2 = vec![0.0; m];
            for (k, &i) in free.iter().enumerate() {
                z2[i] = vf[k].max(0.0);
            }
            consider(z2);
        }
        best.unwrap().1
    }

    #[test]
    fn general_projection_reaches_boundary() {
        let s = spec(&[0.5, 0.5], Exponent::Finite(0.5), 0.5);
        let z = s.project(&[0.1, 0.1]).unwrap();
        let agg = s.aggregate(&z).unwrap();
        assert!((agg - 0.5).abs() < 1e-6, "aggregate {agg}");
        // Symmetric input, symmetric spec: symmetric projection.
        assert!((z[0] - z[1]).abs() < 1e-9);
    }

    #[test]
    fn projection_of_member_is_identity() {
        for p in [
            Exponent::NegInf,
            Exponent::Finite(1.0),
            Exponent::Finite(0.5),
            Exponent::Finite(0.0),
            Exponent::Finite(-2.0),
        ] {
            let s = spec(&[0.4, 0.6], p, 0.5);
            let v = [2.0, 2.0];
            assert!(s.contains(&v));
            let z = s.project(&v).unwrap();
            assert!(dist2(&z, &v) < 1e-12);
        }
    }

    #[test]
    fn clamp_only_case() {
        // Negative coordinate but the clamped point already satisfies the set.
        let s = spec(&[0.5, 0.5], Exponent::Finite(0.5), 0.5);
        let v = [-0.3, 4.0];
        let z = s.project(&v).unwrap();
        assert!(dist2(&z, &[0.0, 4.0]) < 1e-12);
    }

    #[test]
    fn support_min_matches_projection_direction() {
        // For v outside, d = (proj - v)/|..| must satisfy
        // min_{x in W} <d, x> = <d, proj>.
        for (p, c) in [
            (Exponent::Finite(0.5), 0.8),
            (Exponent::Finite(-1.0), 0.7),
            (Exponent::Finite(0.0), 0.6),
            (Exponent::Finite(1.0), 1.0),
            (Exponent::NegInf, 0.9),
        ] {
            let s = spec(&[0.3, 0.7], p, c);
            let v = [0.05, 0.1];
            let z = s.project(&v).unwrap();
            let d: Vec<f64> = z.iter().zip(&v).map(|(a, b)| a - b).collect();
            let nd = norm2(&d);
            assert!(nd > 1e-9);
            let d: Vec<f64> = d.iter().map(|x| x / nd).collect();
            if d.iter().any(|&x| x <= 1e-12) {
                continue; // support infimum degenerate, skip
            }
            let lhs = support_min(&s, &d).unwrap();
            let rhs = dot(&d, &z);
            assert!(
                (lhs - rhs).abs() < 5e-6,
                "p={p:?} support {lhs} vs direction value {rhs}"
            );
        }
    }

    #[test]
    fn intersection_single_set_degenerates() {
        let s = spec(&[0.5, 0.5], Exponent::Finite(1.0), 1.0);
        let z = project_intersection(&[s.clone()], &[0.0, 0.0]).unwrap();
        assert!(dist2(&z, &[1.0, 1.0]) < 1e-9);
    }

    #[test]
    fn intersection_member_is_fixed_point() {
        let a = spec(&[0.5, 0.5], Exponent::Finite(1.0), 1.0);
        let b = spec(&[0.5, 0.5], Exponent::NegInf, 0.5);
        let v = [2.0, 2.0];
        let z = project_intersection(&[a, b], &v).unwrap();
        assert!(dist2(&z, &v) < 1e-9);
    }

    #[test]
    fn intersection_two_halfspaces_matches_closed_form() {
        let a = spec(&[0.8, 0.2], Exponent::Finite(1.0), 1.0);
        let b = spec(&[0.2, 0.8], Exponent::Finite(1.0), 1.0);
        let v = [0.1, 0.1];
        let z = project_intersection(&[a.clone(), b.clone()], &v).unwrap();
        // Both constraints active by symmetry: solve the 2x2 system
        // [<a,a> <a,b>; <a,b> <b,b>] t = (c - a.v, c - b.v).
        let (aa, ab, bb) = (
            dot(&a.alpha, &a.alpha),
            dot(&a.alpha, &b.alpha),
            dot(&b.alpha, &b.alpha),
        );
        let r1 = a.c - dot(&a.alpha, &v);
        let r2 = b.c - dot(&b.alpha, &v);
        let det = aa * bb - ab * ab;
        let t1 = (r1 * bb - r2 * ab) / det;
        let t2 = (r2 * aa - r1 * ab) / det;
        let expected: Vec<f64> = (0..2)
            .map(|i| v[i] + t1 * a.alpha[i] + t2 * b.alpha[i])
            .collect();
        assert!(dist2(&z, &expected) < 1e-6, "{z:?} vs {expected:?}");
    }
}
