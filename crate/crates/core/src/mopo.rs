//! Outer-loop drivers: the offline run (pessimistic fits on a fixed
//! dataset), the online run (optimistic fits with importance-weight
//! estimation on accumulating data), and the training-free run (per-objective
//! optimal policies combined geometrically), each chasing consensus or
//! malfare goals through per-iteration projections.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    direction_consensus, direction_malfare, distance_intersection, malfare_value,
    AggregationSpec, Direction, MultiGroupSpec,
};
use crate::learning::{fit_alpha, mop_step, FitMode, WeightEstimate};
use crate::oracle::OracleResult;
use crate::vecmath::norm_inf;
use crate::world::{Policy, PreferenceDatum, TabularWorld};

/// Optimization goal: reach the intersection of all groups' target sets, or
/// minimize the weighted power mean of per-group distances.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GoalSpec {
    Consensus { sets: Vec<AggregationSpec> },
    Malfare { mg: MultiGroupSpec },
}

impl GoalSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            GoalSpec::Consensus { sets } => {
                if sets.is_empty() {
                    return Err(Error::invalid("consensus goal needs at least one set"));
                }
                let m = sets[0].dim();
                for s in sets {
                    s.validate()?;
                    if s.dim() != m {
                        return Err(Error::invalid("sets must share the objective count"));
                    }
                }
                Ok(())
            }
            GoalSpec::Malfare { mg } => mg.validate(),
        }
    }

    pub fn groups(&self) -> &[AggregationSpec] {
        match self {
            GoalSpec::Consensus { sets } => sets,
            GoalSpec::Malfare { mg } => &mg.groups,
        }
    }

    pub fn dim(&self) -> usize {
        self.groups()[0].dim()
    }

    pub fn n_groups(&self) -> usize {
        self.groups().len()
    }

    /// Goal value at a reward vector: distance to the intersection, or the
    /// 2q-power mean of per-group distances.
    pub fn distance(&self, v: &[f64]) -> Result<f64> {
        match self {
            GoalSpec::Consensus { sets } => distance_intersection(sets, v),
            GoalSpec::Malfare { mg } => malfare_value(mg, v),
        }
    }

    /// Per-group distances from `v`.
    pub fn group_distances(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.groups().iter().map(|s| s.distance(v)).collect()
    }

    /// Raw steering direction at `v` plus its l1-normalized copy (zero when
    /// `v` already meets the goal).
    pub fn direction(&self, v: &[f64]) -> Result<(Vec<f64>, Direction)> {
        match self {
            GoalSpec::Consensus { sets } => {
                let unit = direction_consensus(sets, v)?;
                let l1 = unit.to_l1();
                Ok((unit.d.clone(), l1))
            }
            GoalSpec::Malfare { mg } => direction_malfare(mg, v),
        }
    }

    /// Same goal with each group's weights replaced by an estimate.
    pub fn with_alphas(&self, alphas: &[Vec<f64>]) -> Result<GoalSpec> {
        let rebuild = |sets: &[AggregationSpec]| -> Result<Vec<AggregationSpec>> {
            sets.iter()
                .zip(alphas)
                .map(|(s, a)| AggregationSpec::new(a.clone(), s.p, s.c))
                .collect()
        };
        match self {
            GoalSpec::Consensus { sets } => Ok(GoalSpec::Consensus { sets: rebuild(sets)? }),
            GoalSpec::Malfare { mg } => Ok(GoalSpec::Malfare {
                mg: MultiGroupSpec::new(rebuild(&mg.groups)?, mg.zeta.clone(), mg.q)?,
            }),
        }
    }

    pub fn true_alphas(&self) -> Vec<Vec<f64>> {
        self.groups().iter().map(|s| s.alpha.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Offline,
    Online,
    Practical,
}

/// Driver configuration. `eta` defaults to `1/sqrt(M)` offline and
/// `1/sqrt(T)` online when unset; `use_true_rewards` skips fitting and runs
/// on the world's exact reward tables.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub t_iters: usize,
    pub mode: RunMode,
    #[serde(default)]
    pub eta: Option<f64>,
    pub seed: u64,
    #[serde(default = "default_m")]
    pub m_per_objective: usize,
    #[serde(default)]
    pub use_true_rewards: bool,
}

fn default_m() -> usize {
    200
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_iters < 1 {
            return Err(Error::invalid("t_iters must be >= 1"));
        }
        if self.mode == RunMode::Offline && self.m_per_objective < 1 {
            return Err(Error::invalid("m_per_objective must be >= 1 offline"));
        }
        if let Some(e) = self.eta {
            if !(e > 0.0) {
                return Err(Error::invalid("eta must be > 0"));
            }
        }
        Ok(())
    }

    fn eta_for(&self, m_data: usize) -> f64 {
        self.eta.unwrap_or_else(|| match self.mode {
            RunMode::Offline | RunMode::Practical => 1.0 / (m_data.max(1) as f64).sqrt(),
            RunMode::Online => 1.0 / (self.t_iters as f64).sqrt(),
        })
    }
}

/// One iteration's record in a run trace.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterRecord {
    pub t: usize,
    /// Distance of the projected point (mean reward vector offline/online,
    /// instantaneous vector in the training-free run) to the goal region.
    pub dist: f64,
    pub per_group_dist: Vec<f64>,
    /// l1-normalized direction that drove this iteration's subproblem.
    pub d_used: Vec<f64>,
    /// Raw direction computed from this iteration's projected point.
    pub d_next: Vec<f64>,
    pub v: Vec<f64>,
    pub v_bar: Vec<f64>,
    /// beta-scaled expected KL of this iteration's policy to the reference.
    pub beta_kl: f64,
    /// Running-mean weight estimates per group (online only).
    pub alpha_mean: Option<Vec<Vec<f64>>>,
    /// Sup-norm error of the running-mean weights per group (online only).
    pub alpha_err: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub mode: RunMode,
    pub seed: u64,
    pub world_hash: String,
    pub records: Vec<IterRecord>,
    /// Uniform mixture of executed policies (offline/online); the policy at
    /// the final averaged direction (practical).
    pub policy: Policy,
    /// Exact expected reward vector of the returned policy, true rewards.
    pub s_final: Vec<f64>,
    /// Goal value of the returned policy.
    pub final_distance: f64,
}

const TRACE_SCHEMA_VERSION: &str = "trace-v1";

impl RunTrace {
    pub fn schema_version() -> &'static str {
        TRACE_SCHEMA_VERSION
    }

    /// Stable CSV rendering: one row per iteration, direction and distance
    /// columns sized by the goal's dimensions. Weight-error cells are empty
    /// for runs that do not estimate weights.
    pub fn to_csv(&self) -> String {
        let n_groups = self
            .records
            .first()
            .map(|r| r.per_group_dist.len())
            .unwrap_or(0);
        let m = self.records.first().map(|r| r.d_used.len()).unwrap_or(0);
        let mut out = String::from("t,dist");
        for n in 0..n_groups {
            out.push_str(&format!(",dist_g{n}"));
        }
        for n in 0..n_groups {
            out.push_str(&format!(",alpha_err_g{n}"));
        }
        for i in 0..m {
            out.push_str(&format!(",d_{i}"));
        }
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!("{},{}", r.t, r.dist));
            for d in &r.per_group_dist {
                out.push_str(&format!(",{d}"));
            }
            match &r.alpha_err {
                Some(errs) => {
                    for e in errs {
                        out.push_str(&format!(",{e}"));
                    }
                }
                None => {
                    for _ in 0..n_groups {
                        out.push(',');
                    }
                }
            }
            for d in &r.d_used {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Initial steering direction: the goal direction at the origin (the driver
/// has no reward estimate yet). Falls back to uniform when the origin is
/// already inside the goal region (thresholds all zero).
fn initial_direction(goal: &GoalSpec) -> Result<Direction> {
    let m = goal.dim();
    let (_, l1) = goal.direction(&vec![0.0; m])?;
    if l1.is_zero() {
        Ok(Direction::l1_normalized(&vec![1.0; m]))
    } else {
        Ok(l1)
    }
}

fn mean_beta_kl(world: &TabularWorld, pi: &Policy) -> Result<f64> {
    let mut acc = 0.0;
    for x in 0..world.n_prompts {
        acc += world.rho[x] * pi.kl_row(&world.pi_ref, x)?;
    }
    Ok(world.beta * acc)
}

fn update_running_mean(v_bar: &mut Vec<f64>, v: &[f64], t: usize) {
    let tf = t as f64;
    for (b, &vi) in v_bar.iter_mut().zip(v) {
        *b = ((tf - 1.0) * *b + vi) / tf;
    }
}

/// Offline driver: for each iteration, a pessimistic fit on the fixed
/// datasets along the current direction, the induced policy, its reward-free
/// value estimate, and a direction update from the running mean. Returns the
/// uniform mixture policy with its exact goal value.
pub fn run_offline(
    world: &TabularWorld,
    datasets: &[Vec<PreferenceDatum>],
    goal: &GoalSpec,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    goal.validate()?;
    if goal.dim() != world.n_objectives {
        return Err(Error::invalid("goal dimension must match objectives"));
    }
    let m_data = datasets.first().map(|d| d.len()).unwrap_or(0);
    let eta = cfg.eta_for(m_data);
    let m = world.n_objectives;

    let mut d_bar = initial_direction(goal)?;
    let mut v_bar = vec![0.0; m];
    let mut records = Vec::with_capacity(cfg.t_iters);
    let mut policies = Vec::with_capacity(cfg.t_iters);
    let mut warm: Option<Vec<Vec<f64>>> = None;
    let mut last_fit_dir: Option<Vec<f64>> = None;
    let mut last_outcome: Option<(Vec<Vec<f64>>, Policy)> = None;
    let true_theta = world.theta_star.clone();

    for t in 1..=cfg.t_iters {
        // Identical direction means an identical fit; reuse it.
        let reuse = last_fit_dir
            .as_ref()
            .map(|prev| norm_inf(&crate::vecmath::sub(prev, &d_bar.d)) < 1e-15)
            .unwrap_or(false);
        let (theta, policy) = if reuse {
            last_outcome.clone().unwrap()
        } else {
            let over = cfg.use_true_rewards.then_some(&true_theta[..]);
            let out = mop_step::<ChaCha20Rng>(
                world,
                datasets,
                &d_bar,
                eta,
                FitMode::Pessimistic,
                over,
                warm.as_deref(),
                None,
            )?;
            last_fit_dir = Some(d_bar.d.clone());
            last_outcome = Some((out.fit.theta.clone(), out.policy.clone()));
            warm = Some(out.fit.theta.clone());
            (out.fit.theta, out.policy)
        };

        let v = world.reward_free_value(&theta, &policy)?;
        update_running_mean(&mut v_bar, &v, t);
        let (d_next_raw, d_next_l1) = goal.direction(&v_bar)?;
        records.push(IterRecord {
            t,
            dist: goal.distance(&v_bar)?,
            per_group_dist: goal.group_distances(&v_bar)?,
            d_used: d_bar.d.clone(),
            d_next: d_next_raw,
            v,
            v_bar: v_bar.clone(),
            beta_kl: mean_beta_kl(world, &policy)?,
            alpha_mean: None,
            alpha_err: None,
        });
        policies.push(policy);
        if !d_next_l1.is_zero() {
            d_bar = d_next_l1;
        } // else keep steering along the previous direction
    }

    let mixture = Policy::mixture(&policies)?;
    let s_final = world.expected_reward_vector(&mixture, world.true_rewards())?;
    let final_distance = goal.distance(&s_final)?;
    Ok(RunTrace {
        mode: RunMode::Offline,
        seed: cfg.seed,
        world_hash: world.hash(),
        records,
        policy: mixture,
        s_final,
        final_distance,
    })
}

/// Online driver: group weights are unknown; each iteration refits a plain
/// likelihood estimate, re-estimates every group's weights from the reported
/// indices, rebuilds the estimated target sets with the running-mean
/// weights, and takes one optimistic subsolver step that appends one datum
/// per group.
pub fn run_online(world: &TabularWorld, goal: &GoalSpec, cfg: &RunConfig) -> Result<RunTrace> {
    cfg.validate()?;
    goal.validate()?;
    if goal.dim() != world.n_objectives {
        return Err(Error::invalid("goal dimension must match objectives"));
    }
    let m = world.n_objectives;
    let n_groups = goal.n_groups();
    let eta = cfg.eta_for(0);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let true_alphas = goal.true_alphas();
    let uniform = vec![1.0 / m as f64; m];

    // Weight bootstrap: uniform running means before any data exist.
    let mut alpha_mean: Vec<Vec<f64>> = vec![uniform.clone(); n_groups];
    let mut alpha_hat: Vec<Vec<f64>> = vec![uniform.clone(); n_groups];
    let mut per_objective: Vec<Vec<PreferenceDatum>> = vec![Vec::new(); m];
    let mut per_group: Vec<Vec<PreferenceDatum>> = vec![Vec::new(); n_groups];

    let est_goal0 = goal.with_alphas(&alpha_mean)?;
    let mut d_bar = initial_direction(&est_goal0)?;
    let mut v_bar = vec![0.0; m];
    let mut records = Vec::with_capacity(cfg.t_iters);
    let mut policies = Vec::with_capacity(cfg.t_iters);
    let mut warm_mle: Option<Vec<Vec<f64>>> = None;
    let mut warm_opt: Option<Vec<Vec<f64>>> = None;
    let true_theta = world.theta_star.clone();

    for t in 1..=cfg.t_iters {
        // Plain likelihood estimate for the weight model, ridge-damped at
        // 1/(data count) so early separable rounds cannot pin the estimate
        // to the norm-ball boundary.
        let theta_tilde = if cfg.use_true_rewards {
            true_theta.clone()
        } else {
            let n_data: usize = per_objective.iter().map(|d| d.len()).sum();
            let fit = crate::learning::fit_theta_ridged(
                world,
                &per_objective,
                1.0 / (1 + n_data) as f64,
                warm_mle.as_deref(),
            )?;
            warm_mle = Some(fit.theta.clone());
            fit.theta
        };

        // Per-group weight estimates and running means. Warm starts are
        // mixed slightly toward uniform so a boundary estimate from sparse
        // early data does not slow the next solve.
        for n in 0..n_groups {
            if per_group[n].is_empty() {
                continue; // keep the uniform bootstrap
            }
            let warm_alpha: Vec<f64> = alpha_hat[n]
                .iter()
                .map(|&a| 0.99 * a + 0.01 / m as f64)
                .collect();
            let mut est: WeightEstimate =
                fit_alpha(world, &theta_tilde, &per_group[n], Some(&warm_alpha))?;
            est.advance_running_mean(&alpha_mean[n], t);
            alpha_hat[n] = est.alpha_hat.clone();
            alpha_mean[n] = est.running_mean.clone();
        }
        let est_goal = goal.with_alphas(&alpha_mean)?;

        // Optimistic subsolver step generating one datum per group.
        let over = cfg.use_true_rewards.then_some(&true_theta[..]);
        let out = mop_step(
            world,
            &per_objective,
            &d_bar,
            eta,
            FitMode::Optimistic,
            over,
            warm_opt.as_deref(),
            Some((&true_alphas[..], &mut rng)),
        )?;
        warm_opt = Some(out.fit.theta.clone());
        for d in &out.data {
            per_objective[d.index].push(*d);
            per_group[d.group].push(*d);
        }

        let v = world.reward_free_value(&out.fit.theta, &out.policy)?;
        update_running_mean(&mut v_bar, &v, t);
        let (d_next_raw, d_next_l1) = est_goal.direction(&v_bar)?;
        let alpha_err: Vec<f64> = alpha_mean
            .iter()
            .zip(&true_alphas)
            .map(|(est, truth)| {
                est.iter()
                    .zip(truth)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max)
            })
            .collect();
        records.push(IterRecord {
            t,
            dist: est_goal.distance(&v_bar)?,
            per_group_dist: est_goal.group_distances(&v_bar)?,
            d_used: d_bar.d.clone(),
            d_next: d_next_raw,
            v,
            v_bar: v_bar.clone(),
            beta_kl: mean_beta_kl(world, &out.policy)?,
            alpha_mean: Some(alpha_mean.clone()),
            alpha_err: Some(alpha_err),
        });
        policies.push(out.policy);
        if !d_next_l1.is_zero() {
            d_bar = d_next_l1;
        }
    }

    let mixture = Policy::mixture(&policies)?;
    let s_final = world.expected_reward_vector(&mixture, world.true_rewards())?;
    let final_distance = goal.distance(&s_final)?;
    Ok(RunTrace {
        mode: RunMode::Online,
        seed: cfg.seed,
        world_hash: world.hash(),
        records,
        policy: mixture,
        s_final,
        final_distance,
    })
}

/// Training-free driver: per-objective optimal policies are given; each
/// iteration geometrically combines them at the averaged direction, reads
/// off the exact reward vector, and projects the instantaneous point (not
/// the running mean). No learning anywhere in the loop.
pub fn run_practical(
    world: &TabularWorld,
    per_objective_policies: &[Policy],
    goal: &GoalSpec,
    cfg: &RunConfig,
) -> Result<RunTrace> {
    cfg.validate()?;
    goal.validate()?;
    let m = world.n_objectives;
    if per_objective_policies.len() != m {
        return Err(Error::invalid("need one optimal policy per objective"));
    }

    let mut d_bar = Direction::l1_normalized(&vec![1.0; m]);
    let mut dir_sum = vec![0.0; m];
    let mut v_bar = vec![0.0; m];
    let mut records = Vec::with_capacity(cfg.t_iters);

    for t in 1..=cfg.t_iters {
        let policy = world.mod_combine(per_objective_policies, &d_bar.d)?;
        let v = world.expected_reward_vector(&policy, world.true_rewards())?;
        update_running_mean(&mut v_bar, &v, t);
        let (d_raw, d_l1) = goal.direction(&v)?;
        let d_l1 = if d_l1.is_zero() { d_bar.to_l1() } else { d_l1 };
        for (s, &di) in dir_sum.iter_mut().zip(&d_l1.d) {
            *s += di;
        }
        let averaged: Vec<f64> = dir_sum.iter().map(|s| s / t as f64).collect();
        records.push(IterRecord {
            t,
            dist: goal.distance(&v)?,
            per_group_dist: goal.group_distances(&v)?,
            d_used: d_bar.d.clone(),
            d_next: d_raw,
            v,
            v_bar: v_bar.clone(),
            beta_kl: mean_beta_kl(world, &policy)?,
            alpha_mean: None,
            alpha_err: None,
        });
        d_bar = Direction::l1_normalized(&averaged);
    }

    let final_policy = world.mod_combine(per_objective_policies, &d_bar.d)?;
    let s_final = world.expected_reward_vector(&final_policy, world.true_rewards())?;
    let final_distance = goal.distance(&s_final)?;
    Ok(RunTrace {
        mode: RunMode::Practical,
        seed: cfg.seed,
        world_hash: world.hash(),
        records,
        policy: final_policy,
        s_final,
        final_distance,
    })
}

/// Suboptimality of a finished run against an oracle solve of the same goal
/// on the same world.
pub fn evaluate_gap(world: &TabularWorld, trace: &RunTrace, oracle: &OracleResult) -> Result<f64> {
    let h = world.hash();
    if trace.world_hash != h {
        return Err(Error::WorldMismatch {
            trace: trace.world_hash.clone(),
            oracle: h,
        });
    }
    if oracle.world_hash != h {
        return Err(Error::WorldMismatch {
            trace: oracle.world_hash.clone(),
            oracle: h,
        });
    }
    Ok(trace.final_distance - oracle.value)
}
