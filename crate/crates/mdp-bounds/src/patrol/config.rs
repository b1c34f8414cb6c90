//! Problem configuration: perimeter geometry, alert statistics, operator
//! classification model, and the information-gain reward ingredients.

use super::PatrolError;
use serde::{Deserialize, Serialize};

/// Base of the logarithm used by the mutual-information computation. The
/// choice only rescales the information values (and hence trades off
/// against the delay weight), so it is configurable; natural log is the
/// default.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LogBase {
    #[default]
    #[serde(rename = "e")]
    Natural,
    #[serde(rename = "2")]
    Binary,
}

impl LogBase {
    fn log(self, x: f64) -> f64 {
        match self {
            LogBase::Natural => x.ln(),
            LogBase::Binary => x.log2(),
        }
    }
}

/// Confusion-matrix model of the remote operator classifying an alert as
/// threat or nuisance from loiter video. Report quality improves with
/// dwell time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorModel {
    pub a: f64,
    pub b: f64,
    pub mu1: f64,
    pub c: f64,
    pub g: f64,
    pub mu2: f64,
    /// A-priori probability that an alert is a real target.
    pub p_target: f64,
}

impl OperatorModel {
    pub fn validate(&self) -> Result<(), PatrolError> {
        let fields = [
            ("operator.a", self.a),
            ("operator.b", self.b),
            ("operator.mu1", self.mu1),
            ("operator.c", self.c),
            ("operator.g", self.g),
            ("operator.mu2", self.mu2),
            ("operator.p_target", self.p_target),
        ];
        for (field, value) in fields {
            if !value.is_finite() {
                return Err(PatrolError::Invalid {
                    field,
                    message: format!("must be finite, got {value}"),
                });
            }
        }
        if !(self.a + self.b > 0.0 && self.a + self.b <= 1.0) {
            return Err(PatrolError::Invalid {
                field: "operator.a",
                message: format!("a + b must lie in (0, 1], got {}", self.a + self.b),
            });
        }
        if !(self.c + self.g > 0.0 && self.c + self.g <= 1.0) {
            return Err(PatrolError::Invalid {
                field: "operator.c",
                message: format!("c + g must lie in (0, 1], got {}", self.c + self.g),
            });
        }
        if self.mu1 < 0.0 || self.mu2 < 0.0 {
            return Err(PatrolError::Invalid {
                field: "operator.mu1",
                message: "decay rates must be nonnegative".into(),
            });
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(PatrolError::Invalid {
                field: "operator.p_target",
                message: format!("must lie in (0, 1), got {}", self.p_target),
            });
        }
        Ok(())
    }

    /// Probability of a correct threat report after `d` loiter orbits.
    pub fn p_target_report(&self, d: u32) -> f64 {
        self.a + self.b * (1.0 - (-self.mu1 * d as f64).exp())
    }

    /// Probability of a correct nuisance report after `d` loiter orbits.
    pub fn p_nuisance_report(&self, d: u32) -> f64 {
        self.c + self.g * (1.0 - (-self.mu2 * d as f64).exp())
    }
}

/// Mutual information between the alert's true nature and the operator's
/// report after `d` loiter orbits, in units set by `base`. Terms with zero
/// joint probability contribute zero.
pub fn info_gain(d: u32, op: &OperatorModel, base: LogBase) -> f64 {
    let p = op.p_target;
    let ptr = op.p_target_report(d);
    let pftr = op.p_nuisance_report(d);
    // Marginal report probabilities.
    let z1 = p * ptr + (1.0 - p) * (1.0 - pftr);
    let z2 = p * (1.0 - ptr) + (1.0 - p) * pftr;
    let mut total = 0.0;
    let mut term = |joint: f64, cond: f64, marginal: f64| {
        if joint > 0.0 {
            total += joint * base.log(cond / marginal);
        }
    };
    term(p * ptr, ptr, z1);
    term(p * (1.0 - ptr), 1.0 - ptr, z2);
    term((1.0 - p) * (1.0 - pftr), 1.0 - pftr, z1);
    term((1.0 - p) * pftr, pftr, z2);
    total.max(0.0)
}

/// Full problem instance: an `N`-node perimeter with alert stations at the
/// listed nodes, a dwell cap, a delay cap, Poisson alert statistics, the
/// delay-versus-information weight, the discount factor, and the operator
/// model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatrolConfig {
    #[serde(rename = "N")]
    pub n: u32,
    /// Station nodes in their configured order; disturbance outcome `l >= 1`
    /// means an alert at the `l`-th station of this list.
    pub stations: Vec<u32>,
    #[serde(rename = "D")]
    pub max_dwell: u32,
    #[serde(rename = "Gamma")]
    pub max_delay: u32,
    pub alpha: f64,
    pub rho: f64,
    pub lambda: f64,
    pub operator: OperatorModel,
    #[serde(default)]
    pub log_base: LogBase,
}

impl PatrolConfig {
    pub fn from_json_str(text: &str) -> Result<Self, PatrolError> {
        let config: PatrolConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), PatrolError> {
        if self.n == 0 {
            return Err(PatrolError::Invalid {
                field: "N",
                message: "perimeter needs at least one node".into(),
            });
        }
        if self.stations.is_empty() || self.stations.len() > self.n as usize {
            return Err(PatrolError::Invalid {
                field: "stations",
                message: format!(
                    "need between 1 and N={} stations, got {}",
                    self.n,
                    self.stations.len()
                ),
            });
        }
        for (k, &s) in self.stations.iter().enumerate() {
            if s >= self.n {
                return Err(PatrolError::Invalid {
                    field: "stations",
                    message: format!("station {s} (entry {k}) outside 0..{}", self.n),
                });
            }
            if self.stations[..k].contains(&s) {
                return Err(PatrolError::Invalid {
                    field: "stations",
                    message: format!("station {s} listed twice"),
                });
            }
        }
        if self.max_dwell < 1 {
            return Err(PatrolError::Invalid {
                field: "D",
                message: "dwell cap must be at least 1".into(),
            });
        }
        if self.max_delay < 2 {
            return Err(PatrolError::Invalid {
                field: "Gamma",
                message: "delay cap must be at least 2".into(),
            });
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(PatrolError::Invalid {
                field: "alpha",
                message: format!("arrival rate must be positive, got {}", self.alpha),
            });
        }
        if !(self.rho.is_finite() && self.rho >= 0.0) {
            return Err(PatrolError::Invalid {
                field: "rho",
                message: format!("delay weight must be nonnegative, got {}", self.rho),
            });
        }
        if !(self.lambda.is_finite() && (0.0..1.0).contains(&self.lambda)) {
            return Err(PatrolError::Invalid {
                field: "lambda",
                message: format!("discount must lie in [0, 1), got {}", self.lambda),
            });
        }
        self.operator.validate()
    }

    /// Number of alert stations `m`.
    pub fn num_stations(&self) -> usize {
        self.stations.len()
    }

    /// Distribution over the `m + 1` disturbance outcomes per step: index 0
    /// is "no alert", index `l >= 1` is an alert at the `l`-th configured
    /// station. Derived from the Poisson arrival rate: no arrival in a unit
    /// step has probability `exp(-alpha)`, and an arrival lands on a
    /// uniformly chosen station.
    pub fn alert_probabilities(&self) -> Vec<f64> {
        let m = self.num_stations();
        let p0 = (-self.alpha).exp();
        let mut probs = Vec::with_capacity(m + 1);
        probs.push(p0);
        let each = (1.0 - p0) / m as f64;
        probs.extend(std::iter::repeat(each).take(m));
        probs
    }

    /// Information gained by the `d`-th completed loiter orbit.
    pub fn info_increment(&self, d_before: u32) -> f64 {
        self.info_gain(d_before + 1) - self.info_gain(d_before)
    }

    pub fn info_gain(&self, d: u32) -> f64 {
        info_gain(d, &self.operator, self.log_base)
    }
}
