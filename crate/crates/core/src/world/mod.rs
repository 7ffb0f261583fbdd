//! Exactly solvable tabular preference environment: finite prompts and
//! responses, linear true rewards bounded in `[0, B]`, pairwise-comparison
//! sampling, objective-index sampling, closed-form KL-regularized optimal
//! policies, and exact expected reward vectors.

mod policy;

pub use policy::Policy;

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{dot, log_sum_exp, sigmoid};

/// Per-prompt, per-response scalar table (`[n_prompts][n_responses]`).
pub type RewardTable = Vec<Vec<f64>>;

/// One preference observation: winner/loser pair on a prompt, reported by a
/// group on one objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceDatum {
    pub x: usize,
    pub y_w: usize,
    pub y_l: usize,
    pub group: usize,
    pub index: usize,
}

/// Generation parameters for a random world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldConfig {
    pub seed: u64,
    pub n_prompts: usize,
    pub n_responses: usize,
    pub n_objectives: usize,
    pub feature_dim: usize,
    pub reward_bound: f64,
    pub beta: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            seed: 0,
            n_prompts: 4,
            n_responses: 8,
            n_objectives: 2,
            feature_dim: 4,
            reward_bound: 2.0,
            beta: 0.5,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_prompts < 1 || self.n_responses < 2 {
            return Err(Error::invalid("need >= 1 prompt and >= 2 responses"));
        }
        if self.n_objectives < 1 {
            return Err(Error::invalid("need >= 1 objective"));
        }
        if self.feature_dim < 2 {
            return Err(Error::invalid(
                "feature_dim must be >= 2 (one coordinate is reserved for the offset)",
            ));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be > 0"));
        }
        if !(self.reward_bound >= 0.0) {
            return Err(Error::invalid("reward_bound must be >= 0"));
        }
        Ok(())
    }
}

/// Serialized form of a world (derived caches are rebuilt on load).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldFile {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub n_objectives: usize,
    pub feature_dim: usize,
    pub rho: Vec<f64>,
    pub features: Vec<Vec<Vec<Vec<f64>>>>,
    pub theta_star: Vec<Vec<f64>>,
    pub beta: f64,
    pub reward_bound: f64,
    pub pi_ref: Policy,
    pub pi_base: Policy,
}

#[derive(Debug, Clone)]
pub struct TabularWorld {
    pub n_prompts: usize,
    pub n_responses: usize,
    pub n_objectives: usize,
    pub feature_dim: usize,
    pub rho: Vec<f64>,
    /// `features[i][x][y]` is the d-dimensional representation of objective i.
    pub features: Vec<Vec<Vec<Vec<f64>>>>,
    pub theta_star: Vec<Vec<f64>>,
    pub beta: f64,
    pub reward_bound: f64,
    pub pi_ref: Policy,
    pub pi_base: Policy,
    // Derived at construction.
    r_star: Vec<RewardTable>,
    baseline_constants: Vec<f64>,
    expected_features: Vec<Vec<f64>>,
}

impl Serialize for TabularWorld {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for TabularWorld {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = WorldFile::deserialize(d)?;
        TabularWorld::from_file(file).map_err(serde::de::Error::custom)
    }
}

impl TabularWorld {
    pub fn from_file(f: WorldFile) -> Result<Self> {
        let mut w = TabularWorld {
            n_prompts: f.n_prompts,
            n_responses: f.n_responses,
            n_objectives: f.n_objectives,
            feature_dim: f.feature_dim,
            rho: f.rho,
            features: f.features,
            theta_star: f.theta_star,
            beta: f.beta,
            reward_bound: f.reward_bound,
            pi_ref: f.pi_ref,
            pi_base: f.pi_base,
            r_star: Vec::new(),
            baseline_constants: Vec::new(),
            expected_features: Vec::new(),
        };
        w.rebuild_caches();
        w.validate()?;
        Ok(w)
    }

    pub fn to_file(&self) -> WorldFile {
        WorldFile {
            n_prompts: self.n_prompts,
            n_responses: self.n_responses,
            n_objectives: self.n_objectives,
            feature_dim: self.feature_dim,
            rho: self.rho.clone(),
            features: self.features.clone(),
            theta_star: self.theta_star.clone(),
            beta: self.beta,
            reward_bound: self.reward_bound,
            pi_ref: self.pi_ref.clone(),
            pi_base: self.pi_base.clone(),
        }
    }

    fn rebuild_caches(&mut self) {
        self.r_star = (0..self.n_objectives)
            .map(|i| self.reward_table_from_theta(i, &self.theta_star[i]))
            .collect();
        self.expected_features = (0..self.n_objectives)
            .map(|i| self.expected_feature_under_base(i))
            .collect();
        self.baseline_constants = (0..self.n_objectives)
            .map(|i| dot(&self.theta_star[i], &self.expected_features[i]))
            .collect();
    }

    pub fn validate(&self) -> Result<()> {
        let rho_sum: f64 = self.rho.iter().sum();
        if (rho_sum - 1.0).abs() > 1e-12 || self.rho.len() != self.n_prompts {
            return Err(Error::invalid("rho must be a distribution over prompts"));
        }
        self.pi_ref.validate()?;
        self.pi_base.validate()?;
        if !self.pi_ref.is_strictly_positive() {
            return Err(Error::invalid("pi_ref must be strictly positive"));
        }
        if !(self.beta > 0.0) {
            return Err(Error::invalid("beta must be > 0"));
        }
        for i in 0..self.n_objectives {
            for x in 0..self.n_prompts {
                for y in 0..self.n_responses {
                    let phi = &self.features[i][x][y];
                    if dot(phi, phi).sqrt() > 1.0 + 1e-9 {
                        return Err(Error::invalid(format!(
                            "feature norm exceeds 1 at ({i},{x},{y})"
                        )));
                    }
                    let r = self.r_star[i][x][y];
                    if r < -1e-9 || r > self.reward_bound + 1e-9 {
                        return Err(Error::invalid(format!(
                            "reward {r} out of [0, {}] at ({i},{x},{y})",
                            self.reward_bound
                        )));
                    }
                }
            }
            let th = &self.theta_star[i];
            if dot(th, th).sqrt() > self.reward_bound + 1e-9 {
                return Err(Error::invalid(format!("theta norm exceeds bound for {i}")));
            }
        }
        Ok(())
    }

    /// Deterministic random world for a seed: features on the unit sphere
    /// with a reserved offset coordinate, reward parameters scaled and
    /// shifted so every reward lands in `[0, B]` with parameter norm <= B.
    pub fn generate(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        use rand_chacha::rand_core::SeedableRng;
        let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(cfg.seed);
        let (nx, ny, m, d) = (
            cfg.n_prompts,
            cfg.n_responses,
            cfg.n_objectives,
            cfg.feature_dim,
        );

        let rho = sample_simplex(&mut rng, nx, 2.0);
        let pi_ref = Policy::new((0..nx).map(|_| sample_simplex(&mut rng, ny, 5.0)).collect())?;
        let pi_base = pi_ref.clone();

        let inv_sqrt2 = std::f64::consts::FRAC_1_SQRT_2;
        let mut features = Vec::with_capacity(m);
        for _ in 0..m {
            let mut per_prompt = Vec::with_capacity(nx);
            for _ in 0..nx {
                let mut per_resp = Vec::with_capacity(ny);
                for _ in 0..ny {
                    let psi = sample_unit_sphere(&mut rng, d - 1);
                    let mut phi: Vec<f64> = psi.iter().map(|&v| v * inv_sqrt2).collect();
                    phi.push(inv_sqrt2);
                    per_resp.push(phi);
                }
                per_prompt.push(per_resp);
            }
            features.push(per_prompt);
        }

        let sqrt2 = std::f64::consts::SQRT_2;
        let mut theta_star = Vec::with_capacity(m);
        for i in 0..m {
            let w = sample_unit_sphere(&mut rng, d - 1);
            let mut g_min = f64::INFINITY;
            let mut g_max = f64::NEG_INFINITY;
            for x in 0..nx {
                for y in 0..ny {
                    // Unscaled inner product with the sphere part (stored
                    // features carry a 1/sqrt(2) factor).
                    let psi = &features[i][x][y][..d - 1];
                    let g: f64 = sqrt2 * w.iter().zip(psi).map(|(a, b)| a * b).sum::<f64>();
                    g_min = g_min.min(g);
                    g_max = g_max.max(g);
                }
            }
            // r = s * <w, psi> + t with psi read through the scaled features;
            // pick s, t to span [0, B], then shrink onto the norm ball.
            let range = g_max - g_min;
            let (mut s, mut t) = if cfg.reward_bound == 0.0 || range < 1e-12 {
                (0.0, 0.0)
            } else {
                let s = cfg.reward_bound / range;
                (s, -s * g_min)
            };
            let norm_sq = 2.0 * (s * s + t * t);
            if norm_sq > cfg.reward_bound * cfg.reward_bound && norm_sq > 0.0 {
                let shrink = cfg.reward_bound / norm_sq.sqrt();
                s *= shrink;
                t *= shrink;
            }
            let mut theta: Vec<f64> = w.iter().map(|&wi| s * sqrt2 * wi).collect();
            theta.push(t * sqrt2);
            theta_star.push(theta);
        }

        TabularWorld::from_file(WorldFile {
            n_prompts: nx,
            n_responses: ny,
            n_objectives: m,
            feature_dim: d,
            rho,
            features,
            theta_star,
            beta: cfg.beta,
            reward_bound: cfg.reward_bound,
            pi_ref,
            pi_base,
        })
    }

    /// True reward of objective `i` on `(x, y)`.
    pub fn reward(&self, i: usize, x: usize, y: usize) -> f64 {
        dot(&self.theta_star[i], &self.features[i][x][y])
    }

    /// Cached true reward tables, one per objective.
    pub fn true_rewards(&self) -> &[RewardTable] {
        &self.r_star
    }

    /// Reward table induced by a parameter vector for objective `i`.
    pub fn reward_table_from_theta(&self, i: usize, theta: &[f64]) -> RewardTable {
        (0..self.n_prompts)
            .map(|x| {
                (0..self.n_responses)
                    .map(|y| dot(theta, &self.features[i][x][y]))
                    .collect()
            })
            .collect()
    }

    /// Reward tables for a full parameter set.
    pub fn reward_tables_from_thetas(&self, thetas: &[Vec<f64>]) -> Vec<RewardTable> {
        thetas
            .iter()
            .enumerate()
            .map(|(i, th)| self.reward_table_from_theta(i, th))
            .collect()
    }

    /// Baseline constants `C_i` (expected true reward under the base policy).
    pub fn baseline_constants(&self) -> &[f64] {
        &self.baseline_constants
    }

    /// Expected feature of objective `i` under (rho, pi_base).
    pub fn expected_feature(&self, i: usize) -> &[f64] {
        &self.expected_features[i]
    }

    fn expected_feature_under_base(&self, i: usize) -> Vec<f64> {
        let mut acc = vec![0.0; self.feature_dim];
        for x in 0..self.n_prompts {
            for y in 0..self.n_responses {
                let w = self.rho[x] * self.pi_base.prob(x, y);
                for (a, &f) in acc.iter_mut().zip(&self.features[i][x][y]) {
                    *a += w * f;
                }
            }
        }
        acc
    }

    /// Pairwise comparison draw: `y1` beats `y2` with probability
    /// `sigmoid(r(x,y1) - r(x,y2))`; returns (winner, loser).
    pub fn bt_sample<R: Rng>(
        &self,
        rewards: &RewardTable,
        x: usize,
        y1: usize,
        y2: usize,
        rng: &mut R,
    ) -> (usize, usize) {
        let p = sigmoid(rewards[x][y1] - rewards[x][y2]);
        if rng.gen::<f64>() < p {
            (y1, y2)
        } else {
            (y2, y1)
        }
    }

    /// Objective-index draw: softmax over `alpha_i * |r_i(x,y_w) - r_i(x,y_l)|`
    /// with the true rewards.
    pub fn index_sample<R: Rng>(
        &self,
        alpha: &[f64],
        x: usize,
        y_w: usize,
        y_l: usize,
        rng: &mut R,
    ) -> usize {
        let logits: Vec<f64> = (0..self.n_objectives)
            .map(|i| alpha[i] * (self.r_star[i][x][y_w] - self.r_star[i][x][y_l]).abs())
            .collect();
        let lse = log_sum_exp(&logits);
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (i, &l) in logits.iter().enumerate() {
            acc += (l - lse).exp();
            if u < acc {
                return i;
            }
        }
        self.n_objectives - 1
    }

    /// Draw a prompt from rho.
    pub fn sample_prompt<R: Rng>(&self, rng: &mut R) -> usize {
        sample_categorical(rng, &self.rho)
    }

    /// Draw a response from a policy row.
    pub fn sample_response<R: Rng>(&self, pi: &Policy, x: usize, rng: &mut R) -> usize {
        sample_categorical(rng, &pi.probs[x])
    }

    /// Closed-form optimal policy for the linearly aggregated reward:
    /// `pi(y|x) proportional to pi_ref(y|x) * exp(sum_i d_i r_i(x,y) / beta)`.
    pub fn optimal_policy_linear(&self, d: &[f64], rewards: &[RewardTable]) -> Result<Policy> {
        check_simplex(d, self.n_objectives)?;
        let mut probs = Vec::with_capacity(self.n_prompts);
        for x in 0..self.n_prompts {
            let logits: Vec<f64> = (0..self.n_responses)
                .map(|y| {
                    let r: f64 = d.iter().enumerate().map(|(i, &di)| di * rewards[i][x][y]).sum();
                    self.pi_ref.prob(x, y).ln() + r / self.beta
                })
                .collect();
            let lse = log_sum_exp(&logits);
            probs.push(logits.iter().map(|&l| (l - lse).exp()).collect());
        }
        Policy::new(probs)
    }

    /// Training-free combination of per-objective optimal policies:
    /// `pi(y|x) proportional to prod_i pi_i(y|x)^(d_i)`.
    pub fn mod_combine(&self, policies: &[Policy], d: &[f64]) -> Result<Policy> {
        check_simplex(d, policies.len())?;
        for (i, pi) in policies.iter().enumerate() {
            if !pi.is_strictly_positive() {
                return Err(Error::domain(format!(
                    "mod_combine: policy {i} has a zero probability"
                )));
            }
        }
        let mut probs = Vec::with_capacity(self.n_prompts);
        for x in 0..self.n_prompts {
            let logits: Vec<f64> = (0..self.n_responses)
                .map(|y| {
                    d.iter()
                        .zip(policies)
                        .map(|(&di, pi)| di * pi.prob(x, y).ln())
                        .sum()
                })
                .collect();
            let lse = log_sum_exp(&logits);
            probs.push(logits.iter().map(|&l| (l - lse).exp()).collect());
        }
        Policy::new(probs)
    }

    /// Expected reward vector: per-objective expected reward under the
    /// policy, each coordinate penalized by the expected KL to `pi_ref`.
    /// Exact summation over the tables.
    pub fn expected_reward_vector(&self, pi: &Policy, rewards: &[RewardTable]) -> Result<Vec<f64>> {
        let mut kl_term = 0.0;
        for x in 0..self.n_prompts {
            kl_term += self.rho[x] * pi.kl_row(&self.pi_ref, x)?;
        }
        let mut s = Vec::with_capacity(rewards.len());
        for table in rewards {
            let mut e = 0.0;
            for x in 0..self.n_prompts {
                for y in 0..self.n_responses {
                    e += self.rho[x] * pi.prob(x, y) * table[x][y];
                }
            }
            s.push(e - self.beta * kl_term);
        }
        Ok(s)
    }

    /// Expected reward vector evaluated without reward values: uses the
    /// baseline constants and the log-ratios of the per-objective optimal
    /// policies induced by `theta`. Agrees with
    /// [`expected_reward_vector`](Self::expected_reward_vector) under the
    /// induced rewards whenever each `theta_i` meets its baseline constraint.
    pub fn reward_free_value(&self, theta: &[Vec<f64>], pi: &Policy) -> Result<Vec<f64>> {
        if !pi.is_strictly_positive() {
            return Err(Error::domain("reward_free_value: executed policy has zeros"));
        }
        let mut v = Vec::with_capacity(theta.len());
        for (i, th) in theta.iter().enumerate() {
            let r = self.reward_table_from_theta(i, th);
            let tilted = self.tilt_policy(&r)?;
            let mut base_term = 0.0;
            let mut exec_term = 0.0;
            for x in 0..self.n_prompts {
                for y in 0..self.n_responses {
                    let log_ratio_ref = (tilted.prob(x, y) / self.pi_ref.prob(x, y)).ln();
                    base_term += self.rho[x] * self.pi_base.prob(x, y) * log_ratio_ref;
                    let log_ratio_exec = (tilted.prob(x, y) / pi.prob(x, y)).ln();
                    exec_term += self.rho[x] * pi.prob(x, y) * log_ratio_exec;
                }
            }
            v.push(self.baseline_constants[i] - self.beta * base_term + self.beta * exec_term);
        }
        Ok(v)
    }

    /// Single-reward exponential tilt of the reference policy.
    pub fn tilt_policy(&self, rewards: &RewardTable) -> Result<Policy> {
        let mut probs = Vec::with_capacity(self.n_prompts);
        for x in 0..self.n_prompts {
            let logits: Vec<f64> = (0..self.n_responses)
                .map(|y| self.pi_ref.prob(x, y).ln() + rewards[x][y] / self.beta)
                .collect();
            let lse = log_sum_exp(&logits);
            probs.push(logits.iter().map(|&l| (l - lse).exp()).collect());
        }
        Policy::new(probs)
    }

    /// Expected log-partition of the tilted policy for a linearly aggregated
    /// reward; equals the attained maximum of the KL-regularized objective.
    pub fn log_partition_value(&self, d: &[f64], rewards: &[RewardTable]) -> f64 {
        let mut acc = 0.0;
        for x in 0..self.n_prompts {
            let logits: Vec<f64> = (0..self.n_responses)
                .map(|y| {
                    let r: f64 = d.iter().enumerate().map(|(i, &di)| di * rewards[i][x][y]).sum();
                    self.pi_ref.prob(x, y).ln() + r / self.beta
                })
                .collect();
            acc += self.rho[x] * self.beta * log_sum_exp(&logits);
        }
        acc
    }

    /// KL-regularized linear objective of an arbitrary policy.
    pub fn j_value(&self, pi: &Policy, d: &[f64], rewards: &[RewardTable]) -> Result<f64> {
        let s = self.expected_reward_vector(pi, rewards)?;
        Ok(dot(d, &s))
    }

    /// Smallest per-objective expected absolute reward difference between a
    /// reference optimal policy and `pi_ref`; diagnostic for the margin
    /// assumption.
    pub fn measure_gap(&self, pi_star: &Policy) -> f64 {
        let mut worst = f64::INFINITY;
        for i in 0..self.n_objectives {
            let mut e = 0.0;
            for x in 0..self.n_prompts {
                for y1 in 0..self.n_responses {
                    for y2 in 0..self.n_responses {
                        e += self.rho[x]
                            * pi_star.prob(x, y1)
                            * self.pi_ref.prob(x, y2)
                            * (self.r_star[i][x][y1] - self.r_star[i][x][y2]).abs();
                    }
                }
            }
            worst = worst.min(e);
        }
        worst
    }

    /// Per-objective offline preference data: prompts from rho, distinct
    /// response pairs from pi_ref, labels from the true rewards.
    pub fn gen_offline_datasets<R: Rng>(
        &self,
        per_objective: usize,
        rng: &mut R,
    ) -> Vec<Vec<PreferenceDatum>> {
        (0..self.n_objectives)
            .map(|i| {
                (0..per_objective)
                    .map(|_| {
                        let x = self.sample_prompt(rng);
                        let y1 = self.sample_response(&self.pi_ref, x, rng);
                        let y2 = loop {
                            let y = self.sample_response(&self.pi_ref, x, rng);
                            if y != y1 {
                                break y;
                            }
                        };
                        let (y_w, y_l) = self.bt_sample(&self.r_star[i], x, y1, y2, rng);
                        PreferenceDatum {
                            x,
                            y_w,
                            y_l,
                            group: 0,
                            index: i,
                        }
                    })
                    .collect()
            })
            .collect()
    }

    /// Stable content hash for pairing traces with oracle results.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.to_file()).expect("world serializes");
        format!("{:016x}", fnv1a64(&bytes))
    }
}

fn check_simplex(d: &[f64], m: usize) -> Result<()> {
    if d.len() != m {
        return Err(Error::domain(format!(
            "direction has {} components, expected {m}",
            d.len()
        )));
    }
    if d.iter().any(|&x| x < -1e-12) {
        return Err(Error::domain("direction must be nonnegative"));
    }
    let sum: f64 = d.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!(
            "direction must be l1-normalized, sums to {sum}"
        )));
    }
    Ok(())
}

pub(crate) fn sample_categorical<R: Rng>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

fn sample_simplex<R: Rng>(rng: &mut R, n: usize, concentration: f64) -> Vec<f64> {
    let gamma = Gamma::new(concentration, 1.0).expect("valid gamma");
    let mut v: Vec<f64> = (0..n).map(|_| gamma.sample(rng).max(1e-12)) .collect();
    let sum: f64 = v.iter().sum();
    for x in v.iter_mut() {
        *x /= sum;
    }
    // Pin the row sum to exactly 1 against accumulated rounding.
    let resid: f64 = 1.0 - v.iter().sum::<f64>();
    v[n - 1] += resid;
    v
}

fn sample_unit_sphere<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-9 {
            return v.iter().map(|&x| x / norm).collect();
        }
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Writes preference data as JSON lines.
pub fn data_to_jsonl(data: &[PreferenceDatum]) -> String {
    let mut out = String::new();
    for d in data {
        out.push_str(&serde_json::to_string(d).expect("datum serializes"));
        out.push('\n');
    }
    out
}

/// Parses preference data from JSON lines, skipping blank lines.
pub fn data_from_jsonl(text: &str) -> Result<Vec<PreferenceDatum>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            serde_json::from_str(l).map_err(|e| Error::domain(format!("bad datum line: {e}")))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn tiny_world() -> TabularWorld {
        TabularWorld::generate(&WorldConfig {
            seed: 5,
            n_prompts: 1,
            n_responses: 2,
            n_objectives: 1,
            feature_dim: 3,
            reward_bound: 1.0,
            beta: 1.0,
        })
        .unwrap()
    }

    #[test]
    fn generated_world_passes_invariants() {
        for seed in 0..5 {
            let w = TabularWorld::generate(&WorldConfig {
                seed,
                ..WorldConfig::default()
            })
            .unwrap();
            w.validate().unwrap();
            // Baseline constants match direct expectation of true rewards.
            let s = w
                .expected_reward_vector(&w.pi_base.clone(), w.true_rewards())
                .unwrap();
            for i in 0..w.n_objectives {
                // pi_base = pi_ref here, so the KL term vanishes.
                assert!((s[i] - w.baseline_constants()[i]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_reward_world_is_valid() {
        let w = TabularWorld::generate(&WorldConfig {
            reward_bound: 0.0,
            ..WorldConfig::default()
        })
        .unwrap();
        for i in 0..w.n_objectives {
            for x in 0..w.n_prompts {
                for y in 0..w.n_responses {
                    assert_eq!(w.reward(i, x, y), 0.0);
                }
            }
        }
    }

    #[test]
    fn reward_matches_independent_recomputation() {
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        for i in 0..w.n_objectives {
            for x in 0..w.n_prompts {
                for y in 0..w.n_responses {
                    let mut acc = 0.0;
                    for k in 0..w.feature_dim {
                        acc += w.theta_star[i][k] * w.features[i][x][y][k];
                    }
                    assert!((w.reward(i, x, y) - acc).abs() < 1e-12);
                    assert!((w.true_rewards()[i][x][y] - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn bt_sample_calibration() {
        let w = tiny_world();
        let mut rng = ChaCha20Rng::seed_from_u64(99);
        // Equal rewards: 0.5 win rate.
        let flat = vec![vec![1.0, 1.0]];
        let mut wins = 0;
        for _ in 0..10_000 {
            if w.bt_sample(&flat, 0, 0, 1, &mut rng).0 == 0 {
                wins += 1;
            }
        }
        assert!((wins as f64 / 10_000.0 - 0.5).abs() < 0.02);

        // Unit gap: sigmoid(1) ~ 0.7311.
        let gap = vec![vec![1.0, 0.0]];
        let mut wins = 0;
        for _ in 0..10_000 {
            if w.bt_sample(&gap, 0, 0, 1, &mut rng).0 == 0 {
                wins += 1;
            }
        }
        assert!((wins as f64 / 10_000.0 - 0.7310586).abs() < 0.02);

        // Overwhelming gap: first always wins.
        let huge = vec![vec![60.0, 0.0]];
        for _ in 0..1000 {
            assert_eq!(w.bt_sample(&huge, 0, 0, 1, &mut rng), (0, 1));
        }
    }

    #[test]
    fn index_sample_calibration() {
        // Two objectives, rewards with gaps (2, 0) and alpha = (0.5, 0.5):
        // P(I=0) = e^1 / (e^1 + e^0).
        let mut file = tiny_world().to_file();
        file.n_objectives = 2;
        file.features = vec![file.features[0].clone(), file.features[0].clone()];
        file.theta_star = vec![file.theta_star[0].clone(), file.theta_star[0].clone()];
        let mut w = TabularWorld::from_file(file).unwrap();
        w.r_star = vec![vec![vec![2.0, 0.0]], vec![vec![0.5, 0.5]]];

        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let mut first = 0;
        for _ in 0..10_000 {
            if w.index_sample(&[0.5, 0.5], 0, 0, 1, &mut rng) == 0 {
                first += 1;
            }
        }
        let expected = std::f64::consts::E / (std::f64::consts::E + 1.0);
        assert!((first as f64 / 10_000.0 - expected).abs() < 0.02);

        // alpha = (1, 0): formula collapse to e^g1 / (e^g1 + 1).
        let mut first = 0;
        for _ in 0..10_000 {
            if w.index_sample(&[1.0, 0.0], 0, 0, 1, &mut rng) == 0 {
                first += 1;
            }
        }
        let expected = (2.0f64).exp() / ((2.0f64).exp() + 1.0);
        assert!((first as f64 / 10_000.0 - expected).abs() < 0.02);
    }

    #[test]
    fn optimal_policy_closed_form() {
        let mut w = tiny_world();
        w.pi_ref = Policy::uniform(1, 2);
        w.pi_base = w.pi_ref.clone();
        w.beta = 1.0;
        let r = vec![vec![vec![1.0, 0.0]]];
        let pi = w.optimal_policy_linear(&[1.0], &r).unwrap();
        let e = std::f64::consts::E;
        assert!((pi.prob(0, 0) - e / (e + 1.0)).abs() < 1e-12);
        assert!((pi.prob(0, 1) - 1.0 / (e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn constant_rewards_keep_reference_policy() {
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        let flat = vec![vec![vec![0.7; w.n_responses]; w.n_prompts]; w.n_objectives];
        let pi = w
            .optimal_policy_linear(&vec![1.0 / w.n_objectives as f64; w.n_objectives], &flat)
            .unwrap();
        assert!(pi.tv_distance(&w.pi_ref) < 1e-12);
    }

    #[test]
    fn huge_beta_recovers_reference() {
        let mut w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        w.beta = 1e6;
        let pi = w.optimal_policy_linear(&[0.5, 0.5], w.true_rewards()).unwrap();
        assert!(pi.tv_distance(&w.pi_ref) < 1e-5);
    }

    #[test]
    fn expected_reward_vector_hand_case() {
        let mut w = tiny_world();
        w.pi_ref = Policy::uniform(1, 2);
        w.pi_base = w.pi_ref.clone();
        w.beta = 1.0;
        let r = vec![vec![vec![1.0, 0.0]]];
        let pi = Policy::new(vec![vec![0.8, 0.2]]).unwrap();
        let s = w.expected_reward_vector(&pi, &r).unwrap();
        let kl = 0.8 * (0.8f64 / 0.5).ln() + 0.2 * (0.2f64 / 0.5).ln();
        assert!((s[0] - (0.8 - kl)).abs() < 1e-12);
        assert!((s[0] - 0.6073).abs() < 1e-4);

        // Zero rewards at the reference policy: S = 0.
        let z = vec![vec![vec![0.0, 0.0]]];
        let s = w.expected_reward_vector(&w.pi_ref.clone(), &z).unwrap();
        assert!(s[0].abs() < 1e-12);
    }

    #[test]
    fn mod_combine_identities() {
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        let per_objective: Vec<Policy> = (0..w.n_objectives)
            .map(|i| w.tilt_policy(&w.true_rewards()[i]).unwrap())
            .collect();
        // d = e_i returns policy i.
        let pi = w.mod_combine(&per_objective, &[1.0, 0.0]).unwrap();
        assert!(pi.tv_distance(&per_objective[0]) < 1e-12);
        // Composition identity against the direct linear optimum.
        let d = [0.35, 0.65];
        let combined = w.mod_combine(&per_objective, &d).unwrap();
        let direct = w.optimal_policy_linear(&d, w.true_rewards()).unwrap();
        assert!(combined.tv_distance(&direct) < 1e-10);
    }

    #[test]
    fn reward_free_value_equals_direct_expectation() {
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        let pi = w
            .optimal_policy_linear(&[0.4, 0.6], w.true_rewards())
            .unwrap();
        let direct = w.expected_reward_vector(&pi, w.true_rewards()).unwrap();
        let free = w.reward_free_value(&w.theta_star.clone(), &pi).unwrap();
        for (a, b) in direct.iter().zip(&free) {
            assert!((a - b).abs() < 1e-8, "direct {a} vs reward-free {b}");
        }
    }

    #[test]
    fn reward_free_value_at_reference_gives_constants() {
        // theta with constant rewards equal to C_i: every term collapses.
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        let v = w
            .reward_free_value(&w.theta_star.clone(), &w.pi_ref.clone())
            .unwrap();
        let s = w
            .expected_reward_vector(&w.pi_ref.clone(), w.true_rewards())
            .unwrap();
        for (a, b) in v.iter().zip(&s) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn measure_gap_degenerate_cases() {
        // Zero reward bound: gap 0.
        let w = TabularWorld::generate(&WorldConfig {
            reward_bound: 0.0,
            ..WorldConfig::default()
        })
        .unwrap();
        assert_eq!(w.measure_gap(&w.pi_ref.clone()), 0.0);

        // Nonconstant rewards at pi_ref: strictly positive gap.
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        assert!(w.measure_gap(&w.pi_ref.clone()) > 0.0);
    }

    #[test]
    fn world_json_round_trip_and_hash() {
        let w = TabularWorld::generate(&WorldConfig::default()).unwrap();
        let js = serde_json::to_string(&w).unwrap();
        let back: TabularWorld = serde_json::from_str(&js).unwrap();
        assert_eq!(w.hash(), back.hash());
        assert_eq!(w.pi_ref, back.pi_ref);
        assert_eq!(w.theta_star, back.theta_star);
    }

    #[test]
    fn jsonl_round_trip() {
        let data = vec![
            PreferenceDatum { x: 0, y_w: 1, y_l: 2, group: 0, index: 1 },
            PreferenceDatum { x: 3, y_w: 0, y_l: 4, group: 1, index: 0 },
        ];
        let text = data_to_jsonl(&data);
        assert_eq!(data_from_jsonl(&text).unwrap(), data);
    }
}
