//! Shared oracles for integration tests: independent projection references
//! (active-set enumeration for the linear case, dense boundary grids for
//! general exponents) and target-set point samplers. Everything here stays
//! independent of the library's projection solvers.

#![allow(dead_code)]

use mopo_core::geometry::{AggregationSpec, Exponent};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Exact projection onto `{z >= 0, alpha . z >= c}` by enumerating every
/// active set of the positivity constraints.
pub fn linear_projection_oracle(spec: &AggregationSpec, v: &[f64]) -> Vec<f64> {
    let m = v.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |z: Vec<f64>| {
        if z.iter().any(|&x| x < -1e-12) {
            return;
        }
        if dot(&spec.alpha, &z) < spec.c - 1e-9 {
            return;
        }
        let d = dist(&z, v);
        if best.as_ref().map_or(true, |(b, _)| d < *b) {
            best = Some((d, z));
        }
    };
    for mask in 0..(1u32 << m) {
        let free: Vec<usize> = (0..m).filter(|i| mask & (1 << i) == 0).collect();
        if free.is_empty() {
            continue;
        }
        let af: Vec<f64> = free.iter().map(|&i| spec.alpha[i]).collect();
        let vf: Vec<f64> = free.iter().map(|&i| v[i]).collect();
        let den = dot(&af, &af);
        if den > 0.0 {
            let t = (spec.c - dot(&af, &vf)) / den;
            let mut z = vec![0.0; m];
            for (k, &i) in free.iter().enumerate() {
                z[i] = vf[k] + t.max(0.0) * af[k];
            }
            consider(z);
        }
        let mut z2 = vec![0.0; m];
        for (k, &i) in free.iter().enumerate() {
            z2[i] = vf[k].max(0.0);
        }
        consider(z2);
    }
    best.expect("feasible candidate exists").1
}

/// Componentwise closed form for the worst-coordinate target set.
pub fn neg_inf_projection_oracle(spec: &AggregationSpec, v: &[f64]) -> Vec<f64> {
    spec.alpha
        .iter()
        .zip(v)
        .map(|(&a, &x)| if a > 0.0 { x.max(spec.c) } else { x.max(0.0) })
        .collect()
}

/// Dense search over the constraint boundary for two-dimensional general
/// exponents, augmented with the orthant-clamp candidate and (for positive
/// exponents) the axis rays that also bound the set.
pub fn grid_projection_oracle(spec: &AggregationSpec, v: &[f64], resolution: f64) -> Vec<f64> {
    assert_eq!(v.len(), 2, "grid oracle is two-dimensional");
    let p = match spec.p {
        Exponent::Finite(p) => p,
        Exponent::NegInf => panic!("use the closed form for neg_inf"),
    };
    let (a1, a2, c) = (spec.alpha[0], spec.alpha[1], spec.c);
    assert!(a1 > 0.0 && a2 > 0.0 && c > 0.0);

    let vmax = v.iter().fold(0.0_f64, |m, &x| m.max(x.abs()));
    let cap = 2.0 * 2f64.sqrt() * (vmax + c) + 1.0;
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut consider = |z: Vec<f64>| {
        let d = dist(&z, v);
        if best.as_ref().map_or(true, |(b, _)| d < *b) {
            best = Some((d, z));
        }
    };

    // Orthant clamp when it is already a member.
    let clamped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    if spec.contains(&clamped) {
        consider(clamped);
    }

    // Boundary curve solved for either coordinate at the given resolution
    // (two passes cover the steep regions of both axes).
    let other_of = |known: f64, a_known: f64, a_solve: f64| -> Option<f64> {
        if p == 0.0 {
            if known <= 0.0 {
                return None;
            }
            Some(((c.ln() - a_known * known.ln()) / a_solve).exp())
        } else {
            let rest = c.powf(p) - a_known * known.powf(p);
            if rest <= 0.0 {
                return None;
            }
            Some((rest / a_solve).powf(1.0 / p))
        }
    };
    let steps = (cap / resolution).ceil() as usize;
    for k in 0..=steps {
        let grid = k as f64 * resolution;
        if let Some(z2) = other_of(grid, a1, a2) {
            if z2.is_finite() && z2 <= cap * 4.0 {
                consider(vec![grid, z2]);
            }
        }
        if let Some(z1) = other_of(grid, a2, a1) {
            if z1.is_finite() && z1 <= cap * 4.0 {
                consider(vec![z1, grid]);
            }
        }
    }
    if p > 0.0 {
        // Axis rays: {0} x [k2, inf) and [k1, inf) x {0}.
        let k2 = (c.powf(p) / a2).powf(1.0 / p);
        consider(vec![0.0, v[1].max(k2)]);
        let k1 = (c.powf(p) / a1).powf(1.0 / p);
        consider(vec![v[0].max(k1), 0.0]);
    }
    best.expect("boundary nonempty").1
}

/// Independent projection reference for any supported exponent.
pub fn projection_oracle(spec: &AggregationSpec, v: &[f64]) -> Vec<f64> {
    match spec.p {
        Exponent::NegInf => neg_inf_projection_oracle(spec, v),
        Exponent::Finite(p) if p == 1.0 => linear_projection_oracle(spec, v),
        Exponent::Finite(_) => grid_projection_oracle(spec, v, 1e-4),
    }
}

/// A member of the target set built without projections: a positive point
/// scaled radially onto the boundary (the aggregation is homogeneous), then
/// optionally pushed upward (the set is upward closed).
pub fn sample_member(spec: &AggregationSpec, raw: &[f64], lift: f64) -> Vec<f64> {
    let y: Vec<f64> = raw.iter().map(|&x| x.abs().max(1e-3)).collect();
    let f = spec.aggregate(&y).expect("positive point");
    assert!(f > 0.0);
    y.iter().map(|&x| x * spec.c.max(1e-9) / f + lift).collect()
}
