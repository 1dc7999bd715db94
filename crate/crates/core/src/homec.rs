//! Innovation covariance from the disagreement of two integrators of adjacent
//! order (higher order method error control).

use std::fmt;

use crate::error::{Error, Result};
use crate::integrators::{make_method, step, step_rk_embedded, Family, HistoryBuffer, ImplicitSolveConfig, MethodSpec};
use crate::ode_models::OdeSystem;

pub const DEFAULT_TAU: f64 = 1.5;
pub const DEFAULT_GAMMA_FLOOR: f64 = 1e-20;

/// A propagating method of order `p` and a reference method of order `> p`
/// from the same family. Embedded Runge-Kutta pairs use one method for both.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodPair {
    pub low: MethodSpec,
    pub high: MethodSpec,
    pub tau: f64,
}

pub const PAIR_IDS: [&str; 8] = [
    "AB1-AB2",
    "AB3-AB4",
    "AM1-AM2",
    "AM3-AM4",
    "BDF1-BDF2",
    "BDF3-BDF4",
    "RK1-RK2",
    "RK4-RK5",
];

impl MethodPair {
    pub fn new(low: MethodSpec, high: MethodSpec, tau: f64) -> Result<Self> {
        if low.family != high.family {
            return Err(Error::InvalidConfig(format!(
                "pair members must share a family, got {low} and {high}"
            )));
        }
        if low.family == Family::RungeKuttaEmbedded {
            if low != high {
                return Err(Error::InvalidConfig(
                    "an embedded Runge-Kutta pair is a single method".into(),
                ));
            }
        } else if high.order < low.order + 1 {
            return Err(Error::InvalidConfig(format!(
                "reference order {} must exceed propagating order {}",
                high.order, low.order
            )));
        }
        check_tau(tau)?;
        Ok(MethodPair { low, high, tau })
    }

    pub fn embedded(method: MethodSpec, tau: f64) -> Result<Self> {
        Self::new(method.clone(), method, tau)
    }

    pub fn is_embedded(&self) -> bool {
        self.low.family == Family::RungeKuttaEmbedded
    }

    pub fn low_order(&self) -> usize {
        self.low.order
    }

    pub fn high_order(&self) -> usize {
        self.high.high_order().unwrap_or(self.high.order)
    }

    /// Number of lagged states either member needs.
    pub fn history_len(&self) -> usize {
        self.low.steps.max(self.high.steps)
    }

    pub fn id(&self) -> String {
        let prefix = match self.low.family {
            Family::AdamsBashforth => "AB",
            Family::AdamsMoulton => "AM",
            Family::Bdf => "BDF",
            Family::RungeKuttaEmbedded => "RK",
        };
        format!("{prefix}{}-{prefix}{}", self.low_order(), self.high_order())
    }
}

impl fmt::Display for MethodPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 1.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tau must be finite and > 1, got {tau}")))
    }
}

/// Resolves identifiers such as `"AB1-AB2"` or `"RK4-RK5"`. Labels are orders.
pub fn pair_by_id(id: &str, tau: f64) -> Result<MethodPair> {
    let unknown = || Error::UnknownPair {
        id: id.to_string(),
        valid: PAIR_IDS.join(", "),
    };
    let (family, low, high) = match id {
        "AB1-AB2" => (Family::AdamsBashforth, 1, 2),
        "AB3-AB4" => (Family::AdamsBashforth, 3, 4),
        "AM1-AM2" => (Family::AdamsMoulton, 1, 2),
        "AM3-AM4" => (Family::AdamsMoulton, 3, 4),
        "BDF1-BDF2" => (Family::Bdf, 1, 2),
        "BDF3-BDF4" => (Family::Bdf, 3, 4),
        "RK1-RK2" => (Family::RungeKuttaEmbedded, 1, 2),
        "RK4-RK5" => (Family::RungeKuttaEmbedded, 4, 5),
        _ => return Err(unknown()),
    };
    if family == Family::RungeKuttaEmbedded {
        MethodPair::embedded(make_method(family, low)?, tau)
    } else {
        MethodPair::new(make_method(family, low)?, make_method(family, high)?, tau)
    }
}

/// Diagonal innovation covariance `Γ = diag(γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationCovariance {
    pub diagonal: Vec<f64>,
}

impl InnovationCovariance {
    pub fn dimension(&self) -> usize {
        self.diagonal.len()
    }

    /// Raises every entry to at least `floor`.
    pub fn floored(mut self, floor: f64) -> Self {
        for g in &mut self.diagonal {
            *g = g.max(floor);
        }
        self
    }

    pub fn stddevs(&self) -> impl Iterator<Item = f64> + '_ {
        self.diagonal.iter().map(|g| g.sqrt())
    }
}

/// `γ_i = τ² (u_low − u_high)_i²`.
pub fn innovation_covariance(u_low: &[f64], u_high: &[f64], tau: f64) -> Result<InnovationCovariance> {
    if u_low.len() != u_high.len() {
        return Err(Error::DimensionMismatch {
            expected: u_low.len(),
            found: u_high.len(),
        });
    }
    let tau2 = tau * tau;
    Ok(InnovationCovariance {
        diagonal: u_low
            .iter()
            .zip(u_high)
            .map(|(a, b)| {
                let d = a - b;
                tau2 * d * d
            })
            .collect(),
    })
}

/// One step of each member of the pair from aligned histories.
pub fn propagate_pair(
    pair: &MethodPair,
    system: &OdeSystem,
    history_low: &HistoryBuffer,
    history_high: &HistoryBuffer,
    h: f64,
    solve: &ImplicitSolveConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if pair.is_embedded() {
        let u = history_low.newest().ok_or(Error::InsufficientHistory {
            needed: 1,
            available: 0,
        })?;
        return step_rk_embedded(&pair.low, system, history_low.current_time(), u, h);
    }
    let low = step(&pair.low, system, history_low, h, solve)?;
    let high = step(&pair.high, system, history_high, h, solve)?;
    Ok((low, high))
}
