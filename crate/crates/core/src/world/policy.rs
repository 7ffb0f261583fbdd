use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-stochastic response distribution per prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub probs: Vec<Vec<f64>>,
}

impl Policy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        let p = Policy { probs };
        p.validate()?;
        Ok(p)
    }

    pub fn uniform(n_prompts: usize, n_responses: usize) -> Self {
        Policy {
            probs: vec![vec![1.0 / n_responses as f64; n_responses]; n_prompts],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.probs.is_empty() || self.probs[0].is_empty() {
            return Err(Error::invalid("policy must have at least one row/column"));
        }
        let width = self.probs[0].len();
        for (x, row) in self.probs.iter().enumerate() {
            if row.len() != width {
                return Err(Error::invalid("policy rows must have equal length"));
            }
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(Error::invalid(format!("negative entry in policy row {x}")));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(Error::invalid(format!(
                    "policy row {x} sums to {sum}, expected 1 within 1e-12"
                )));
            }
        }
        Ok(())
    }

    pub fn n_prompts(&self) -> usize {
        self.probs.len()
    }

    pub fn n_responses(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, x: usize, y: usize) -> f64 {
        self.probs[x][y]
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.probs.iter().all(|row| row.iter().all(|&p| p > 0.0))
    }

    /// Worst-row total variation distance to another policy.
    pub fn tv_distance(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .map(|(a, b)| 0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    /// KL(self_row || other_row) for one prompt; errors if mass sits where
    /// `other` has none.
    pub fn kl_row(&self, other: &Policy, x: usize) -> Result<f64> {
        let mut acc = 0.0;
        for (&p, &q) in self.probs[x].iter().zip(&other.probs[x]) {
            if p == 0.0 {
                continue;
            }
            if q == 0.0 {
                return Err(Error::domain(format!(
                    "KL undefined: mass on response with zero reference probability (prompt {x})"
                )));
            }
            acc += p * (p / q).ln();
        }
        Ok(acc)
    }

    /// Uniform mixture of policies (tables averaged entrywise).
    pub fn mixture(policies: &[Policy]) -> Result<Policy> {
        if policies.is_empty() {
            return Err(Error::domain("mixture of zero policies"));
        }
        let w = 1.0 / policies.len() as f64;
        let mut probs = vec![vec![0.0; policies[0].n_responses()]; policies[0].n_prompts()];
        for pi in policies {
            for (acc, row) in probs.iter_mut().zip(&pi.probs) {
                for (a, &p) in acc.iter_mut().zip(row) {
                    *a += w * p;
                }
            }
        }
        Policy::new(probs)
    }

    /// Largest pointwise probability ratio self/other over all cells.
    pub fn max_ratio(&self, other: &Policy) -> f64 {
        self.probs
            .iter()
            .zip(&other.probs)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(&p, &q)| p / q))
            .fold(0.0, f64::max)
    }
}
