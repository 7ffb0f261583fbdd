//! Shared first-order solvers: monotone projected gradient descent with a
//! spectral step and Armijo backtracking, and exponentiated-gradient ascent
//! on the probability simplex.

use crate::vecmath::{dot, norm_inf, sub};

pub(crate) struct PgOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
    /// Objective value after every accepted step (monotone non-increasing).
    pub history: Vec<f64>,
}

/// Minimizes `f` over a convex set given by its Euclidean projection.
/// Step sizes follow the spectral (Barzilai-Borwein) estimate but every step
/// must pass an Armijo decrease test, so the history stays monotone.
pub(crate) fn projected_gradient<FG, P>(
    fg: FG,
    project: P,
    x0: &[f64],
    max_iters: usize,
    tol: f64,
) -> PgOutcome
where
    FG: Fn(&[f64]) -> (f64, Vec<f64>),
    P: Fn(&[f64]) -> Vec<f64>,
{
    let mut x = project(x0);
    let (mut f, mut g) = fg(&x);
    let mut history = vec![f];
    let gn = dot(&g, &g).sqrt();
    let mut step = if gn > 0.0 { (1.0 / gn).min(1.0) } else { 1.0 };
    let mut residual = f64::INFINITY;

    for _ in 0..max_iters {
        let reference: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
        residual = dist(&project(&reference), &x);
        if residual <= tol {
            return PgOutcome {
                x,
                residual,
                converged: true,
                history,
            };
        }

        let mut s = step;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - s * gi).collect();
            let xc = project(&trial);
            let (fc, gc) = fg(&xc);
            let predicted: f64 = g.iter().zip(x.iter().zip(&xc)).map(|(gi, (a, b))| gi * (a - b)).sum();
            if fc.is_finite() && fc <= f - 1e-4 * predicted.max(0.0) && fc <= f {
                let dx = sub(&xc, &x);
                let dg = sub(&gc, &g);
                let denom = dot(&dx, &dg);
                step = if denom > 1e-300 {
                    (dot(&dx, &dx) / denom).clamp(1e-12, 1e12)
                } else {
                    s * 2.0
                };
                x = xc;
                f = fc;
                g = gc;
                history.push(f);
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break; // line search stalled at numerical precision
        }
    }
    let reference: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - gi).collect();
    residual = residual.min(dist(&project(&reference), &x));
    PgOutcome {
        x,
        residual,
        converged: residual <= tol,
        history,
    }
}

pub(crate) struct EgOutcome {
    pub x: Vec<f64>,
    pub residual: f64,
    pub converged: bool,
}

/// Maximizes a concave objective over the simplex by exponentiated-gradient
/// ascent with backtracking. The stationarity residual combines the weighted
/// gradient deviation `|x_i (g_i - <x, g>)|` with the raw excess
/// `max(g_i - <x, g>, 0)`; the second part keeps a crushed coordinate whose
/// gradient still demands growth from faking convergence.
pub(crate) fn exp_gradient_simplex<FG>(fg: FG, x0: &[f64], max_iters: usize, tol: f64) -> EgOutcome
where
    FG: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut x: Vec<f64> = x0.iter().map(|&v| v.max(1e-12)).collect();
    let z: f64 = x.iter().sum();
    for v in x.iter_mut() {
        *v /= z;
    }
    let (mut f, mut g) = fg(&x);
    let mut step = 1.0 / (1.0 + norm_inf(&g));
    let mut residual = f64::INFINITY;

    for _ in 0..max_iters {
        let mean = dot(&x, &g);
        residual = x
            .iter()
            .zip(&g)
            .map(|(&xi, &gi)| (xi * (gi - mean)).abs().max(gi - mean))
            .fold(0.0, f64::max);
        if residual <= tol {
            return EgOutcome {
                x,
                residual,
                converged: true,
            };
        }
        let gmax = g.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = step;
        let mut accepted = false;
        for _ in 0..60 {
            // Exponent clamp keeps every coordinate strictly positive; a
            // vertex would otherwise absorb the iterate.
            let mut xc: Vec<f64> = x
                .iter()
                .zip(&g)
                .map(|(&xi, &gi)| xi * (s * (gi - gmax)).max(-60.0).exp())
                .collect();
            let z: f64 = xc.iter().sum();
            for v in xc.iter_mut() {
                *v /= z;
            }
            let (fc, gc) = fg(&xc);
            if fc.is_finite() && fc >= f {
                if fc > f {
                    step = (s * 1.5).min(1e6);
                } else {
                    step = s * 0.5;
                }
                x = xc;
                f = fc;
                g = gc;
                accepted = true;
                break;
            }
            s *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    EgOutcome {
        x,
        residual,
        converged: residual <= tol,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pg_solves_clipped_quadratic() {
        // min |x - (2, -3)|^2 over the nonnegative orthant -> (2, 0).
        let fg = |x: &[f64]| {
            let r = [x[0] - 2.0, x[1] + 3.0];
            (r[0] * r[0] + r[1] * r[1], vec![2.0 * r[0], 2.0 * r[1]])
        };
        let project = |x: &[f64]| x.iter().map(|&v| v.max(0.0)).collect::<Vec<_>>();
        let out = projected_gradient(fg, project, &[5.0, 5.0], 1000, 1e-10);
        assert!(out.converged);
        assert!((out.x[0] - 2.0).abs() < 1e-8);
        assert!(out.x[1].abs() < 1e-12);
        // Monotone history.
        for w in out.history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12);
        }
    }

    #[test]
    fn eg_maximizes_entropy_like_objective() {
        // max sum_i w_i ln x_i over the simplex -> x = w.
        let w = [0.2, 0.5, 0.3];
        let fg = |x: &[f64]| {
            let f: f64 = w.iter().zip(x).map(|(wi, xi)| wi * xi.ln()).sum();
            let g: Vec<f64> = w.iter().zip(x).map(|(wi, xi)| wi / xi).collect();
            (f, g)
        };
        let out = exp_gradient_simplex(fg, &[1.0 / 3.0; 3], 5000, 1e-8);
        assert!(out.converged, "residual {}", out.residual);
        for (xi, wi) in out.x.iter().zip(&w) {
            assert!((xi - wi).abs() < 1e-6);
        }
    }
}
