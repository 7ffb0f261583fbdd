use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Aggregation exponent: `NegInf` selects the worst coordinate, finite values
/// give the weighted power mean with that exponent (must be <= 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Exponent {
    NegInf,
    Finite(f64),
}

impl Exponent {
    pub fn is_neg_inf(&self) -> bool {
        matches!(self, Exponent::NegInf)
    }

    pub fn finite(&self) -> Option<f64> {
        match self {
            Exponent::NegInf => None,
            Exponent::Finite(p) => Some(*p),
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Exponent::NegInf => s.serialize_str("neg_inf"),
            Exponent::Finite(p) => s.serialize_f64(*p),
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Tag(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(p) => Ok(Exponent::Finite(p)),
            Repr::Tag(t) if t == "neg_inf" => Ok(Exponent::NegInf),
            Repr::Tag(t) => Err(D::Error::custom(format!(
                "exponent must be a number or \"neg_inf\", got \"{t}\""
            ))),
        }
    }
}

/// One group's target-set parameters: objective weights `alpha` (simplex),
/// fairness exponent `p` and satisfaction threshold `c`. The target set is
/// the upward-closed region of nonnegative reward vectors whose weighted
/// power-mean aggregation reaches `c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationSpec {
    pub alpha: Vec<f64>,
    pub p: Exponent,
    pub c: f64,
}

impl AggregationSpec {
    pub fn new(alpha: Vec<f64>, p: Exponent, c: f64) -> Result<Self> {
        let spec = AggregationSpec { alpha, p, c };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.alpha.is_empty() {
            return Err(Error::invalid("alpha must be non-empty"));
        }
        if self.alpha.iter().any(|&a| a < 0.0 || !a.is_finite()) {
            return Err(Error::invalid("alpha components must be >= 0 and finite"));
        }
        let sum: f64 = self.alpha.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "alpha must sum to 1 within 1e-12, got {sum}"
            )));
        }
        if let Exponent::Finite(p) = self.p {
            if !p.is_finite() || p > 1.0 {
                return Err(Error::invalid(format!("p must be <= 1 and finite, got {p}")));
            }
        }
        if !(self.c >= 0.0) || !self.c.is_finite() {
            return Err(Error::invalid(format!("c must be >= 0, got {}", self.c)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Weighted power-mean aggregation of a nonnegative vector.
    ///
    /// `p = neg_inf` returns the minimum over supported coordinates, `p = 0`
    /// the weighted geometric mean (continuity limit), and for `p < 0` a zero
    /// coordinate with positive weight yields 0 (limit value).
    pub fn aggregate(&self, z: &[f64]) -> Result<f64> {
        if z.len() != self.alpha.len() {
            return Err(Error::domain(format!(
                "aggregate: expected {} components, got {}",
                self.alpha.len(),
                z.len()
            )));
        }
        if z.iter().any(|&x| x < 0.0) {
            return Err(Error::domain("aggregate: negative component".to_string()));
        }
        Ok(self.aggregate_unchecked(z))
    }

    /// Same as [`aggregate`](Self::aggregate) but assumes `z >= 0` holds.
    pub(crate) fn aggregate_unchecked(&self, z: &[f64]) -> f64 {
        let supported = self.alpha.iter().zip(z).filter(|(a, _)| **a > 0.0);
        match self.p {
            Exponent::NegInf => supported
                .map(|(_, &zi)| zi)
                .fold(f64::INFINITY, f64::min),
            Exponent::Finite(p) if p == 0.0 => {
                // Weighted geometric mean through logs; a zero coordinate kills it.
                let mut acc = 0.0;
                for (&a, &zi) in supported {
                    if zi == 0.0 {
                        return 0.0;
                    }
                    acc += a * zi.ln();
                }
                acc.exp()
            }
            Exponent::Finite(p) if p < 0.0 => {
                let mut acc = 0.0;
                for (&a, &zi) in supported {
                    if zi == 0.0 {
                        return 0.0;
                    }
                    acc += a * zi.powf(p);
                }
                acc.powf(1.0 / p)
            }
            Exponent::Finite(p) => {
                let acc: f64 = supported.map(|(&a, &zi)| a * zi.powf(p)).sum();
                acc.powf(1.0 / p)
            }
        }
    }

    /// Membership test: `z` is in the target set iff it is componentwise
    /// nonnegative and its aggregation reaches the threshold.
    pub fn contains(&self, z: &[f64]) -> bool {
        if z.len() != self.alpha.len() || z.iter().any(|&x| x < 0.0) {
            return false;
        }
        self.aggregate_unchecked(z) >= self.c - super::TOL_CONTAIN
    }
}

/// Multi-group configuration: per-group target sets with positive group
/// weights `zeta` on the simplex and an integer malfare exponent `q >= 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiGroupSpec {
    pub groups: Vec<AggregationSpec>,
    pub zeta: Vec<f64>,
    pub q: u32,
}

impl MultiGroupSpec {
    pub fn new(groups: Vec<AggregationSpec>, zeta: Vec<f64>, q: u32) -> Result<Self> {
        let mg = MultiGroupSpec { groups, zeta, q };
        mg.validate()?;
        Ok(mg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::invalid("groups must be non-empty"));
        }
        for g in &self.groups {
            g.validate()?;
        }
        let m = self.groups[0].dim();
        if self.groups.iter().any(|g| g.dim() != m) {
            return Err(Error::invalid("all groups must share the objective count"));
        }
        if self.zeta.len() != self.groups.len() {
            return Err(Error::invalid("zeta length must match group count"));
        }
        if self.zeta.iter().any(|&z| z <= 0.0) {
            return Err(Error::invalid("zeta components must be > 0"));
        }
        let sum: f64 = self.zeta.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!(
                "zeta must sum to 1 within 1e-12, got {sum}"
            )));
        }
        if self.q < 1 {
            return Err(Error::invalid("q must be a positive integer"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.groups[0].dim()
    }
}
