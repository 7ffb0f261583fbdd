//! Brute-force ground truth on small instances: best achievable goal values
//! and the policies attaining them, found by multistart projected gradient
//! over the product of per-prompt simplices (exact gradients of the expected
//! reward vector, distance gradients through the projection point) with a
//! Nelder-Mead polish, cross-checked by dense simplex grids on the smallest
//! instances.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mopo::GoalSpec;
use crate::vecmath::{log_sum_exp, project_simplex};
use crate::world::{Policy, TabularWorld};

/// Runs never beat the oracle by more than this slack.
pub const TOL_ORACLE: f64 = 2e-3;
/// Restart-stability threshold on the certificate spread.
pub const TOL_ORACLE_SPREAD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    MultistartGd,
    DenseGrid,
}

/// Best values over the top restarts and their spread; a large spread flags
/// a multimodal landscape.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Certificate {
    pub top_values: Vec<f64>,
    pub spread: f64,
    pub multimodal: bool,
    pub budget_exhausted: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleResult {
    pub pi_star: Policy,
    pub value: f64,
    pub method: OracleMethod,
    pub certificate: Certificate,
    pub world_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleBudget {
    pub restarts: usize,
    pub pgd_iters: usize,
    pub nm_iters: usize,
    pub seed: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        OracleBudget {
            restarts: 32,
            pgd_iters: 600,
            nm_iters: 400,
            seed: 0,
        }
    }
}

/// Search objective: a value to minimize plus its gradient with respect to
/// the expected reward vector.
trait SearchObjective {
    fn value_grad(&self, s: &[f64]) -> Result<(f64, Vec<f64>)>;
    fn value(&self, s: &[f64]) -> Result<f64> {
        Ok(self.value_grad(s)?.0)
    }
}

/// Goal distance; its gradient in `S` is the negated steering direction
/// (unit vector for consensus, weighted combination for malfare), which is
/// exactly the projection-point subgradient.
struct GoalObjective<'a>(&'a GoalSpec);

impl SearchObjective for GoalObjective<'_> {
    fn value_grad(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        let v = self.0.distance(s)?;
        let (raw, _) = self.0.direction(s)?;
        Ok((v, raw.iter().map(|x| -x).collect()))
    }

    fn value(&self, s: &[f64]) -> Result<f64> {
        self.0.distance(s)
    }
}

/// Smoothed worst-coordinate objective `tau * log sum exp(-S_i / tau)`
/// (minimizing it maximizes a soft minimum of `S`).
struct SoftMinObjective {
    tau: f64,
}

impl SearchObjective for SoftMinObjective {
    fn value_grad(&self, s: &[f64]) -> Result<(f64, Vec<f64>)> {
        let scaled: Vec<f64> = s.iter().map(|&x| -x / self.tau).collect();
        let lse = log_sum_exp(&scaled);
        let grad: Vec<f64> = scaled.iter().map(|&z| -(z - lse).exp()).collect();
        Ok((self.tau * lse, grad))
    }
}

/// Minimizes the consensus objective `d(S(pi), intersection of sets)`.
pub fn solve_consensus(
    world: &TabularWorld,
    goal: &GoalSpec,
    budget: &OracleBudget,
) -> Result<OracleResult> {
    goal.validate()?;
    check_scale(world)?;
    multistart_goal(world, goal, budget)
}

/// Minimizes the malfare objective (2q-power mean of per-group distances).
pub fn solve_malfare(
    world: &TabularWorld,
    goal: &GoalSpec,
    budget: &OracleBudget,
) -> Result<OracleResult> {
    if !matches!(goal, GoalSpec::Malfare { .. }) {
        return Err(Error::domain("solve_malfare expects a malfare goal"));
    }
    goal.validate()?;
    check_scale(world)?;
    multistart_goal(world, goal, budget)
}

fn multistart_goal(
    world: &TabularWorld,
    goal: &GoalSpec,
    budget: &OracleBudget,
) -> Result<OracleResult> {
    let objective = GoalObjective(goal);
    let mut finals = Vec::with_capacity(budget.restarts.max(2));
    for start in starting_points(world, budget) {
        let pi = pgd_policy(world, &objective, &start, budget.pgd_iters)?;
        let v = objective.value(&world.expected_reward_vector(&pi, world.true_rewards())?)?;
        finals.push((v, pi));
    }
    finish(world, &objective, finals, budget, OracleMethod::MultistartGd)
}

/// Maximizes the worst per-objective entry of the expected reward vector by
/// annealed soft-min smoothing; `value` is the exact attained max-min.
pub fn solve_maxmin(world: &TabularWorld, budget: &OracleBudget) -> Result<OracleResult> {
    check_scale(world)?;
    let exact_negmin = |s: &[f64]| -s.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut finals = Vec::with_capacity(budget.restarts.max(2));
    for start in starting_points(world, budget) {
        let mut pi = start;
        for tau in [0.3, 0.05, 0.01] {
            pi = pgd_policy(world, &SoftMinObjective { tau }, &pi, budget.pgd_iters)?;
        }
        let s = world.expected_reward_vector(&pi, world.true_rewards())?;
        finals.push((exact_negmin(&s), pi));
    }
    finals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (mut best_v, mut best_pi) = finals[0].clone();
    let polished = nelder_mead_polish(
        world,
        &|w: &TabularWorld, pi: &Policy| {
            Ok(exact_negmin(&w.expected_reward_vector(pi, w.true_rewards())?))
        },
        &best_pi,
        budget.nm_iters,
    )?;
    let pv = exact_negmin(&world.expected_reward_vector(&polished, world.true_rewards())?);
    if pv < best_v {
        best_v = pv;
        best_pi = polished;
    }
    let top: Vec<f64> = finals.iter().take(3).map(|(v, _)| -*v).collect();
    let spread = certificate_spread(&finals);
    Ok(OracleResult {
        pi_star: best_pi,
        value: -best_v,
        method: OracleMethod::MultistartGd,
        certificate: Certificate {
            top_values: top,
            spread,
            multimodal: spread > TOL_ORACLE_SPREAD,
            budget_exhausted: false,
        },
        world_hash: world.hash(),
    })
}

/// Dense simplex enumeration for single-prompt instances (exhaustive up to
/// the grid resolution). Cross-check oracle for the smallest worlds.
pub fn dense_grid_consensus(
    world: &TabularWorld,
    goal: &GoalSpec,
    resolution: f64,
) -> Result<OracleResult> {
    if world.n_prompts != 1 || world.n_responses > 5 {
        return Err(Error::domain(
            "dense grid supports one prompt and at most five responses",
        ));
    }
    goal.validate()?;
    let steps = (1.0 / resolution).round() as usize;
    let mut best_value = f64::INFINITY;
    let mut best_row: Vec<f64> = Vec::new();
    let mut row = vec![0usize; world.n_responses];
    enumerate_compositions(steps, world.n_responses, &mut row, &mut |counts| {
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
        let pi = Policy {
            probs: vec![probs.clone()],
        };
        let s = world
            .expected_reward_vector(&pi, world.true_rewards())
            .expect("grid policy is valid");
        let v = goal.distance(&s).expect("distance evaluates");
        if v < best_value {
            best_value = v;
            best_row = probs;
        }
    });
    Ok(OracleResult {
        pi_star: Policy {
            probs: vec![best_row],
        },
        value: best_value,
        method: OracleMethod::DenseGrid,
        certificate: Certificate {
            top_values: vec![best_value],
            spread: 0.0,
            multimodal: false,
            budget_exhausted: false,
        },
        world_hash: world.hash(),
    })
}

fn enumerate_compositions(
    total: usize,
    parts: usize,
    row: &mut Vec<usize>,
    f: &mut impl FnMut(&[usize]),
) {
    fn rec(
        remaining: usize,
        idx: usize,
        parts: usize,
        row: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize]),
    ) {
        if idx == parts - 1 {
            row[idx] = remaining;
            f(row);
            return;
        }
        for take in 0..=remaining {
            row[idx] = take;
            rec(remaining - take, idx + 1, parts, row, f);
        }
    }
    rec(total, 0, parts, row, f);
}

fn check_scale(world: &TabularWorld) -> Result<()> {
    if world.n_prompts * world.n_responses > 64 {
        return Err(Error::domain(
            "oracle instances are limited to 64 prompt-response cells",
        ));
    }
    Ok(())
}

/// Deterministic reference/uniform starts plus seeded random policies.
fn starting_points(world: &TabularWorld, budget: &OracleBudget) -> Vec<Policy> {
    let mut rng = ChaCha20Rng::seed_from_u64(budget.seed);
    let mut starts = vec![
        world.pi_ref.clone(),
        Policy::uniform(world.n_prompts, world.n_responses),
    ];
    while starts.len() < budget.restarts.max(2) {
        starts.push(random_policy(world, &mut rng));
    }
    starts
}

fn random_policy(world: &TabularWorld, rng: &mut ChaCha20Rng) -> Policy {
    let probs = (0..world.n_prompts)
        .map(|_| {
            let mut row: Vec<f64> = (0..world.n_responses)
                .map(|_| -(rng.gen::<f64>().max(1e-12)).ln())
                .collect();
            normalize_row(&mut row);
            row
        })
        .collect();
    Policy { probs }
}

fn normalize_row(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    let resid = 1.0 - row.iter().sum::<f64>();
    let last = row.len() - 1;
    row[last] += resid;
}

/// Projected gradient descent on the policy table. The chain rule through
/// the expected reward vector is exact:
/// `dS_i/dpi(y|x) = rho(x) (r_i(x,y) - beta (log(pi/pi_ref) + 1))`,
/// and the objective supplies `df/dS`. Rows are floored slightly inside the
/// simplex so the log term stays finite.
fn pgd_policy(
    world: &TabularWorld,
    objective: &dyn SearchObjective,
    start: &Policy,
    max_iters: usize,
) -> Result<Policy> {
    let mut pi = floor_policy(start);
    let mut s = world.expected_reward_vector(&pi, world.true_rewards())?;
    let (mut f, mut gs) = objective.value_grad(&s)?;
    let mut step = 0.5;

    for _ in 0..max_iters {
        let gsum: f64 = gs.iter().sum();
        let mut grad = vec![vec![0.0; world.n_responses]; world.n_prompts];
        let mut gnorm_sq = 0.0;
        for x in 0..world.n_prompts {
            for y in 0..world.n_responses {
                let log_ratio = (pi.prob(x, y) / world.pi_ref.prob(x, y)).ln();
                let mut acc = 0.0;
                for (i, &gi) in gs.iter().enumerate() {
                    acc += gi * world.true_rewards()[i][x][y];
                }
                acc -= world.beta * (log_ratio + 1.0) * gsum;
                let g = world.rho[x] * acc;
                grad[x][y] = g;
                gnorm_sq += g * g;
            }
        }
        if gnorm_sq.sqrt() < 1e-12 {
            break;
        }
        let mut ls = step;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = step_and_project(&pi, &grad, ls);
            let s_cand = world.expected_reward_vector(&cand, world.true_rewards())?;
            let (fc, gc) = objective.value_grad(&s_cand)?;
            if fc < f - 1e-14 {
                pi = cand;
                s = s_cand;
                f = fc;
                gs = gc;
                step = (ls * 1.5).min(20.0);
                accepted = true;
                break;
            }
            ls *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let _ = s;
    Ok(pi)
}

fn step_and_project(pi: &Policy, grad: &[Vec<f64>], step: f64) -> Policy {
    let probs = pi
        .probs
        .iter()
        .zip(grad)
        .map(|(row, g)| {
            let moved: Vec<f64> = row.iter().zip(g).map(|(p, gi)| p - step * gi).collect();
            floor_row(&project_simplex(&moved))
        })
        .collect();
    Policy { probs }
}

fn floor_policy(pi: &Policy) -> Policy {
    Policy {
        probs: pi.probs.iter().map(|r| floor_row(r)).collect(),
    }
}

fn floor_row(row: &[f64]) -> Vec<f64> {
    let eps = 1e-9;
    let mut out: Vec<f64> = row.iter().map(|&p| p.max(eps)).collect();
    normalize_row(&mut out);
    out
}

fn certificate_spread(finals: &[(f64, Policy)]) -> f64 {
    let k = finals.len().min(3);
    if k < 2 {
        return 0.0;
    }
    finals[k - 1].0 - finals[0].0
}

fn finish(
    world: &TabularWorld,
    objective: &GoalObjective<'_>,
    mut finals: Vec<(f64, Policy)>,
    budget: &OracleBudget,
    method: OracleMethod,
) -> Result<OracleResult> {
    finals.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let (mut best_v, mut best_pi) = finals[0].clone();
    let polished = nelder_mead_polish(
        world,
        &|w: &TabularWorld, pi: &Policy| {
            objective.value(&w.expected_reward_vector(pi, w.true_rewards())?)
        },
        &best_pi,
        budget.nm_iters,
    )?;
    let pv = objective.value(&world.expected_reward_vector(&polished, world.true_rewards())?)?;
    if pv < best_v {
        best_v = pv;
        best_pi = polished;
    }
    let top: Vec<f64> = finals.iter().take(3).map(|(v, _)| *v).collect();
    let spread = certificate_spread(&finals);
    Ok(OracleResult {
        pi_star: best_pi,
        value: best_v,
        method,
        certificate: Certificate {
            top_values: top,
            spread,
            multimodal: spread > TOL_ORACLE_SPREAD,
            budget_exhausted: false,
        },
        world_hash: world.hash(),
    })
}

/// Nelder-Mead over per-row logits of the incumbent (softmax keeps iterates
/// interior; values are evaluated on the exact objective).
fn nelder_mead_polish(
    world: &TabularWorld,
    objective: &dyn Fn(&TabularWorld, &Policy) -> Result<f64>,
    start: &Policy,
    iters: usize,
) -> Result<Policy> {
    let nx = start.n_prompts();
    let ny = start.n_responses();
    let n = nx * ny;
    let to_policy = |z: &[f64]| -> Policy {
        let probs = (0..nx)
            .map(|x| {
                let logits = &z[x * ny..(x + 1) * ny];
                let lse = log_sum_exp(logits);
                let mut row: Vec<f64> = logits.iter().map(|&l| (l - lse).exp()).collect();
                normalize_row(&mut row);
                row
            })
            .collect();
        Policy { probs }
    };
    let z0: Vec<f64> = start
        .probs
        .iter()
        .flat_map(|row| row.iter().map(|&p| p.max(1e-12).ln()))
        .collect();
    let eval = |z: &[f64]| -> Result<f64> { objective(world, &to_policy(z)) };

    let mut simplex: Vec<(f64, Vec<f64>)> = Vec::with_capacity(n + 1);
    simplex.push((eval(&z0)?, z0.clone()));
    for k in 0..n {
        let mut z = z0.clone();
        z[k] += 0.25;
        simplex.push((eval(&z)?, z));
    }

    for _ in 0..iters {
        simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        if simplex[n].0 - simplex[0].0 < 1e-13 {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|k| simplex[..n].iter().map(|(_, z)| z[k]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> = (0..n)
            .map(|k| centroid[k] + (centroid[k] - worst.1[k]))
            .collect();
        let fr = eval(&reflect)?;
        if fr < simplex[0].0 {
            let expand: Vec<f64> = (0..n)
                .map(|k| centroid[k] + 2.0 * (centroid[k] - worst.1[k]))
                .collect();
            let fe = eval(&expand)?;
            simplex[n] = if fe < fr { (fe, expand) } else { (fr, reflect) };
        } else if fr < simplex[n - 1].0 {
            simplex[n] = (fr, reflect);
        } else {
            let contract: Vec<f64> = (0..n)
                .map(|k| centroid[k] + 0.5 * (worst.1[k] - centroid[k]))
                .collect();
            let fc = eval(&contract)?;
            if fc < worst.0 {
                simplex[n] = (fc, contract);
            } else {
                let best = simplex[0].1.clone();
                for entry in simplex.iter_mut().skip(1) {
                    let z: Vec<f64> = entry
                        .1
                        .iter()
                        .zip(&best)
                        .map(|(zi, bi)| bi + 0.5 * (zi - bi))
                        .collect();
                    *entry = (eval(&z)?, z);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    Ok(to_policy(&simplex[0].1))
}
