//! Reward-parameter and importance-weight estimation from preference data:
//! plain likelihood fits, pessimistic/optimistic fits that add the
//! closed-form value of the induced optimal policy as an exploration term,
//! the reward-free form of the same objective, and the linear-aggregation
//! subsolver step used by the outer drivers.

mod optim;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Direction;
use crate::vecmath::{axpy, dot, log_sigmoid, log_sum_exp, norm2, scale, sigmoid, sub};
use crate::world::{Policy, PreferenceDatum, TabularWorld};

/// Convergence tolerance for reward-parameter fits (projected-gradient residual).
pub const TOL_FIT: f64 = 1e-7;
/// Convergence tolerance for weight estimation (simplex KKT residual).
pub const TOL_ALPHA: f64 = 1e-7;
/// Iteration cap for both fitting loops.
pub const MAX_FIT_ITERS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Mle,
    Pessimistic,
    Optimistic,
}

/// Fitted reward parameters, one vector per objective, all satisfying the
/// baseline-expectation constraint and the norm bound.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RewardFit {
    pub theta: Vec<Vec<f64>>,
    pub mode: FitMode,
    pub eta: f64,
    pub residual: f64,
}

/// Importance-weight estimate for one group.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WeightEstimate {
    pub alpha_hat: Vec<f64>,
    pub loglik: f64,
    pub running_mean: Vec<f64>,
}

impl WeightEstimate {
    /// Iterate-averaged update: `alpha_t = ((t-1) prev + alpha_hat) / t`.
    pub fn advance_running_mean(&mut self, prev: &[f64], t: usize) {
        let t = t as f64;
        self.running_mean = prev
            .iter()
            .zip(&self.alpha_hat)
            .map(|(&p, &a)| ((t - 1.0) * p + a) / t)
            .collect();
    }
}

/// Negative log-likelihood of pairwise preferences for one objective under
/// the linear reward `theta_i`.
pub fn nll(world: &TabularWorld, i: usize, theta_i: &[f64], data: &[PreferenceDatum]) -> f64 {
    data.iter()
        .map(|d| {
            let diff = feature_diff(world, i, d);
            -log_sigmoid(dot(theta_i, &diff))
        })
        .sum()
}

fn feature_diff(world: &TabularWorld, i: usize, d: &PreferenceDatum) -> Vec<f64> {
    sub(
        &world.features[i][d.x][d.y_w],
        &world.features[i][d.x][d.y_l],
    )
}

fn nll_grad_into(grad: &mut [f64], theta_i: &[f64], diffs: &[Vec<f64>], weight: f64) {
    for diff in diffs {
        let s = sigmoid(dot(theta_i, diff));
        axpy(grad, weight * (s - 1.0), diff);
    }
}

/// Projection onto one objective's parameter space: the hyperplane fixing
/// the baseline expectation, intersected with the norm ball of radius
/// `b_prime`. The intersection is a disk; project exactly.
fn project_theta_block(world: &TabularWorld, i: usize, theta: &[f64], b_prime: f64) -> Vec<f64> {
    let phi_bar = world.expected_feature(i);
    let c = world.baseline_constants()[i];
    let nn = dot(phi_bar, phi_bar);
    if nn <= 1e-14 {
        let n = norm2(theta);
        return if n > b_prime {
            scale(theta, b_prime / n)
        } else {
            theta.to_vec()
        };
    }
    let mut th = theta.to_vec();
    let shift = (c - dot(&th, phi_bar)) / nn;
    axpy(&mut th, shift, phi_bar);
    let center = scale(phi_bar, c / nn);
    let radial = sub(&th, &center);
    let disk_sq = b_prime * b_prime - dot(&center, &center);
    if disk_sq <= 0.0 {
        return center;
    }
    let r = norm2(&radial);
    let rad = disk_sq.sqrt();
    if r > rad {
        let mut out = center;
        axpy(&mut out, rad / r, &radial);
        out
    } else {
        th
    }
}

/// Deterministic initial point: the zero vector projected onto each block.
pub fn theta_init(world: &TabularWorld, b_prime: f64) -> Vec<Vec<f64>> {
    (0..world.n_objectives)
        .map(|i| project_theta_block(world, i, &vec![0.0; world.feature_dim], b_prime))
        .collect()
}

struct FitProblem<'a> {
    world: &'a TabularWorld,
    diffs: Vec<Vec<Vec<f64>>>, // per objective: winner-loser feature differences
    d: Vec<f64>,
    mode: FitMode,
    eta: f64,
    b_prime: f64,
    /// Objective normalizer so the residual tolerance is data-size free.
    scale: f64,
    /// Ridge weight on |theta|^2 (plain likelihood fits use it online).
    ridge: f64,
}

impl<'a> FitProblem<'a> {
    fn new(
        world: &'a TabularWorld,
        datasets: &[Vec<PreferenceDatum>],
        d: &[f64],
        mode: FitMode,
        eta: f64,
    ) -> Self {
        let diffs: Vec<Vec<Vec<f64>>> = (0..world.n_objectives)
            .map(|i| datasets[i].iter().map(|dd| feature_diff(world, i, dd)).collect())
            .collect();
        let total: usize = diffs.iter().map(|d| d.len()).sum();
        let eta_eff = if mode == FitMode::Mle { 1.0 } else { eta };
        let scale = 1.0 + eta_eff * total as f64;
        FitProblem {
            world,
            diffs,
            d: d.to_vec(),
            mode,
            eta,
            b_prime: world.reward_bound + 1.0,
            scale,
            ridge: 0.0,
        }
    }
    fn unpack(&self, flat: &[f64]) -> Vec<Vec<f64>> {
        let d = self.world.feature_dim;
        flat.chunks(d).map(|c| c.to_vec()).collect()
    }

    fn value_and_grad(&self, flat: &[f64]) -> (f64, Vec<f64>) {
        let w = self.world;
        let dim = w.feature_dim;
        let thetas = self.unpack(flat);
        let mut value = 0.0;
        let mut grad = vec![0.0; flat.len()];

        // Likelihood term.
        let eta = if self.mode == FitMode::Mle { 1.0 } else { self.eta };
        for (i, th) in thetas.iter().enumerate() {
            for diff in &self.diffs[i] {
                value += eta * -log_sigmoid(dot(th, diff));
            }
            nll_grad_into(&mut grad[i * dim..(i + 1) * dim], th, &self.diffs[i], eta);
        }

        // Exploration term: the attained optimum of the linear objective,
        // +J for pessimistic (minimized), -J for optimistic.
        if self.mode != FitMode::Mle {
            let sign = if self.mode == FitMode::Pessimistic { 1.0 } else { -1.0 };
            let rewards = w.reward_tables_from_thetas(&thetas);
            value += sign * w.log_partition_value(&self.d, &rewards);
            // Gradient: d_i * expected feature under the tilted policy.
            for x in 0..w.n_prompts {
                let logits: Vec<f64> = (0..w.n_responses)
                    .map(|y| {
                        let r: f64 = self
                            .d
                            .iter()
                            .enumerate()
                            .map(|(i, &di)| di * rewards[i][x][y])
                            .sum();
                        w.pi_ref.prob(x, y).ln() + r / w.beta
                    })
                    .collect();
                let lse = log_sum_exp(&logits);
                for y in 0..w.n_responses {
                    let p = (logits[y] - lse).exp();
                    for (i, &di) in self.d.iter().enumerate() {
                        let gi = &mut grad[i * dim..(i + 1) * dim];
                        axpy(gi, sign * w.rho[x] * p * di, &w.features[i][x][y]);
                    }
                }
            }
        }
        if self.ridge > 0.0 {
            for (k, &x) in flat.iter().enumerate() {
                value += self.ridge * x * x;
                grad[k] += 2.0 * self.ridge * x;
            }
        }
        value /= self.scale;
        for g in grad.iter_mut() {
            *g /= self.scale;
        }
        (value, grad)
    }

    fn project(&self, flat: &[f64]) -> Vec<f64> {
        let dim = self.world.feature_dim;
        let mut out = Vec::with_capacity(flat.len());
        for (i, block) in flat.chunks(dim).enumerate() {
            out.extend(project_theta_block(self.world, i, block, self.b_prime));
        }
        out
    }
}

/// Fits reward parameters for all objectives at once by projected gradient
/// descent on the selected objective. `d` is the l1-normalized direction of
/// the current linear subproblem (ignored for plain likelihood fits); empty
/// datasets are allowed and leave only the exploration term.
pub fn fit_theta(
    world: &TabularWorld,
    datasets: &[Vec<PreferenceDatum>],
    d: &[f64],
    mode: FitMode,
    eta: f64,
    init: Option<&[Vec<f64>]>,
) -> Result<RewardFit> {
    if datasets.len() != world.n_objectives {
        return Err(Error::domain("fit_theta: one dataset per objective"));
    }
    if mode != FitMode::Mle {
        if !(eta > 0.0) {
            return Err(Error::domain("fit_theta: eta must be > 0"));
        }
        let sum: f64 = d.iter().sum();
        if d.len() != world.n_objectives || d.iter().any(|&x| x < -1e-12) || (sum - 1.0).abs() > 1e-9
        {
            return Err(Error::domain("fit_theta: direction must be on the simplex"));
        }
    }
    let problem = FitProblem::new(world, datasets, d, mode, eta);
    let x0: Vec<f64> = match init {
        Some(thetas) => thetas.concat(),
        None => theta_init(world, problem.b_prime).concat(),
    };
    let out = optim::projected_gradient(
        |x| problem.value_and_grad(x),
        |x| problem.project(x),
        &x0,
        MAX_FIT_ITERS,
        TOL_FIT,
    );
    if !out.converged {
        return Err(Error::solver("reward fit", out.residual));
    }
    Ok(RewardFit {
        theta: problem.unpack(&out.x),
        mode,
        eta,
        residual: out.residual,
    })
}

/// Plain likelihood fit with a ridge penalty `lambda |theta|^2` added per
/// objective; used online where early datasets are separable and would
/// otherwise pin the estimate to the norm-ball boundary.
pub fn fit_theta_ridged(
    world: &TabularWorld,
    datasets: &[Vec<PreferenceDatum>],
    lambda: f64,
    init: Option<&[Vec<f64>]>,
) -> Result<RewardFit> {
    if datasets.len() != world.n_objectives {
        return Err(Error::domain("fit_theta_ridged: one dataset per objective"));
    }
    let uniform = vec![1.0 / world.n_objectives as f64; world.n_objectives];
    let mut problem = FitProblem::new(world, datasets, &uniform, FitMode::Mle, 1.0);
    problem.ridge = lambda;
    let x0: Vec<f64> = match init {
        Some(thetas) => thetas.concat(),
        None => theta_init(world, problem.b_prime).concat(),
    };
    let out = optim::projected_gradient(
        |x| problem.value_and_grad(x),
        |x| problem.project(x),
        &x0,
        MAX_FIT_ITERS,
        TOL_FIT,
    );
    if !out.converged {
        return Err(Error::solver("ridged reward fit", out.residual));
    }
    Ok(RewardFit {
        theta: problem.unpack(&out.x),
        mode: FitMode::Mle,
        eta: 1.0,
        residual: out.residual,
    })
}

/// Same fit but returning the per-step objective history (for diagnostics
/// and the monotonicity checks).
pub fn fit_theta_traced(
    world: &TabularWorld,
    datasets: &[Vec<PreferenceDatum>],
    d: &[f64],
    mode: FitMode,
    eta: f64,
) -> Result<(RewardFit, Vec<f64>)> {
    let problem = FitProblem::new(world, datasets, d, mode, eta);
    let x0 = theta_init(world, problem.b_prime).concat();
    let out = optim::projected_gradient(
        |x| problem.value_and_grad(x),
        |x| problem.project(x),
        &x0,
        MAX_FIT_ITERS,
        TOL_FIT,
    );
    if !out.converged {
        return Err(Error::solver("reward fit", out.residual));
    }
    Ok((
        RewardFit {
            theta: problem.unpack(&out.x),
            mode,
            eta,
            residual: out.residual,
        },
        out.history,
    ))
}

/// The attained maximum of the KL-regularized linear objective for the
/// rewards induced by `theta` (the exploration term of the fits).
pub fn closed_form_j(world: &TabularWorld, theta: &[Vec<f64>], d: &[f64]) -> f64 {
    let rewards = world.reward_tables_from_thetas(theta);
    world.log_partition_value(d, &rewards)
}

/// Reward-based objective of the optimistic fit (maximized form):
/// `max_pi J - eta * sum_i L_i`.
pub fn reward_based_online_objective(
    world: &TabularWorld,
    theta: &[Vec<f64>],
    datasets: &[Vec<PreferenceDatum>],
    d: &[f64],
    eta: f64,
) -> f64 {
    let mut value = closed_form_j(world, theta, d);
    for (i, th) in theta.iter().enumerate() {
        value -= eta * nll(world, i, th, &datasets[i]);
    }
    value
}

/// Reward-free objective (minimized form): the base-policy log-probability
/// of the induced joint optimal policy, minus `eta` times the policy
/// log-ratio preference likelihoods. Differs from the negated reward-based
/// objective by a theta-independent constant.
pub fn reward_free_objective(
    world: &TabularWorld,
    theta: &[Vec<f64>],
    datasets: &[Vec<PreferenceDatum>],
    d: &[f64],
    eta: f64,
) -> Result<f64> {
    let rewards = world.reward_tables_from_thetas(theta);
    let joint = world.optimal_policy_linear(d, &rewards)?;
    if !joint.is_strictly_positive() {
        return Err(Error::domain("reward_free_objective: zero probability"));
    }
    let mut value = 0.0;
    for x in 0..world.n_prompts {
        for y in 0..world.n_responses {
            value += world.beta * world.rho[x] * world.pi_base.prob(x, y) * joint.prob(x, y).ln();
        }
    }
    for i in 0..world.n_objectives {
        let tilted = world.tilt_policy(&rewards[i])?;
        let mut ell = 0.0;
        for dd in &datasets[i] {
            let lw = world.beta
                * (tilted.prob(dd.x, dd.y_w).ln() - world.pi_ref.prob(dd.x, dd.y_w).ln());
            let ll = world.beta
                * (tilted.prob(dd.x, dd.y_l).ln() - world.pi_ref.prob(dd.x, dd.y_l).ln());
            ell += log_sigmoid(lw - ll);
        }
        value -= eta * ell;
    }
    Ok(value)
}

/// Softmax index log-likelihood of one group's reported objectives, using
/// reward gaps induced by `theta_tilde`.
pub fn index_loglik(
    world: &TabularWorld,
    theta_tilde: &[Vec<f64>],
    data: &[PreferenceDatum],
    alpha: &[f64],
) -> f64 {
    let gaps = index_gaps(world, theta_tilde, data);
    index_loglik_from_gaps(&gaps, data, alpha)
}

fn index_gaps(
    world: &TabularWorld,
    theta_tilde: &[Vec<f64>],
    data: &[PreferenceDatum],
) -> Vec<Vec<f64>> {
    let rewards = world.reward_tables_from_thetas(theta_tilde);
    data.iter()
        .map(|d| {
            (0..world.n_objectives)
                .map(|i| (rewards[i][d.x][d.y_w] - rewards[i][d.x][d.y_l]).abs())
                .collect()
        })
        .collect()
}

fn index_loglik_from_gaps(gaps: &[Vec<f64>], data: &[PreferenceDatum], alpha: &[f64]) -> f64 {
    gaps.iter()
        .zip(data)
        .map(|(g, d)| {
            let logits: Vec<f64> = alpha.iter().zip(g).map(|(&a, &gi)| a * gi).collect();
            logits[d.index] - log_sum_exp(&logits)
        })
        .sum()
}

/// Maximum-likelihood importance weights for one group's reported indices,
/// found by exponentiated-gradient ascent on the simplex.
pub fn fit_alpha(
    world: &TabularWorld,
    theta_tilde: &[Vec<f64>],
    data: &[PreferenceDatum],
    init: Option<&[f64]>,
) -> Result<WeightEstimate> {
    if data.is_empty() {
        return Err(Error::domain("fit_alpha: need at least one datum"));
    }
    let m = world.n_objectives;
    let gaps = index_gaps(world, theta_tilde, data);
    let inv_n = 1.0 / data.len() as f64; // per-datum scale, tolerance stays data-size free
    let fg = |alpha: &[f64]| {
        let mut value = 0.0;
        let mut grad = vec![0.0; m];
        for (g, d) in gaps.iter().zip(data) {
            let logits: Vec<f64> = alpha.iter().zip(g).map(|(&a, &gi)| a * gi).collect();
            let lse = log_sum_exp(&logits);
            value += logits[d.index] - lse;
            for i in 0..m {
                let p = (logits[i] - lse).exp();
                let indicator = if d.index == i { 1.0 } else { 0.0 };
                grad[i] += g[i] * (indicator - p);
            }
        }
        (value * inv_n, grad.into_iter().map(|g| g * inv_n).collect())
    };
    let uniform = vec![1.0 / m as f64; m];
    let x0 = init.unwrap_or(&uniform);
    let out = optim::exp_gradient_simplex(fg, x0, MAX_FIT_ITERS, TOL_ALPHA);
    if !out.converged {
        return Err(Error::solver("weight estimation", out.residual));
    }
    let loglik = index_loglik_from_gaps(&gaps, data, &out.x);
    Ok(WeightEstimate {
        running_mean: out.x.clone(),
        alpha_hat: out.x,
        loglik,
    })
}

/// Output of one linear-aggregation subsolver step.
#[derive(Debug, Clone)]
pub struct MopOutcome {
    pub fit: RewardFit,
    pub policy: Policy,
    pub data: Vec<PreferenceDatum>,
}

/// One subsolver step: fit rewards for the given direction (or use an
/// injected parameter set), execute the induced optimal policy, and — when
/// an online context is supplied — sample a prompt, two responses, and one
/// labeled datum per group.
pub fn mop_step<R: Rng>(
    world: &TabularWorld,
    datasets: &[Vec<PreferenceDatum>],
    d: &Direction,
    eta: f64,
    mode: FitMode,
    theta_override: Option<&[Vec<f64>]>,
    init: Option<&[Vec<f64>]>,
    mut online: Option<(&[Vec<f64>], &mut R)>,
) -> Result<MopOutcome> {
    if d.is_zero() {
        return Err(Error::domain("mop_step: direction must be nonzero"));
    }
    let d_l1 = d.to_l1();
    let fit = match theta_override {
        Some(theta) => RewardFit {
            theta: theta.to_vec(),
            mode,
            eta,
            residual: 0.0,
        },
        None => fit_theta(world, datasets, &d_l1.d, mode, eta, init)?,
    };
    let rewards = world.reward_tables_from_thetas(&fit.theta);
    let policy = world.optimal_policy_linear(&d_l1.d, &rewards)?;

    let mut data = Vec::new();
    if let Some((group_alphas, rng)) = online.as_mut() {
        let x = world.sample_prompt(*rng);
        let y1 = world.sample_response(&policy, x, *rng);
        let y2 = loop {
            let y = world.sample_response(&policy, x, *rng);
            if y != y1 {
                break y;
            }
        };
        for (n, alpha) in group_alphas.iter().enumerate() {
            let index = world.index_sample(alpha, x, y1, y2, *rng);
            let (y_w, y_l) = world.bt_sample(&world.true_rewards()[index], x, y1, y2, *rng);
            data.push(PreferenceDatum {
                x,
                y_w,
                y_l,
                group: n,
                index,
            });
        }
    }
    Ok(MopOutcome { fit, policy, data })
}
