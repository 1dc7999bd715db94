//! Evolution-observation model: the multistep recursion rewritten as a
//! first-order Markov chain on stacked lagged states, an observation map on
//! the newest block, and diagonal Gaussian noise laws.

use crate::error::{Error, Result};
use crate::homec::{innovation_covariance, propagate_pair, InnovationCovariance, MethodPair, DEFAULT_GAMMA_FLOOR};
use crate::integrators::{HistoryBuffer, ImplicitSolveConfig};
use crate::ode_models::OdeSystem;

/// `X_j = [U_j, U_{j-1}, …, U_{j-r+1}]`, newest block first.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedState {
    pub blocks: Vec<Vec<f64>>,
    pub time_index: usize,
    /// Time of the newest block.
    pub time: f64,
}

impl AugmentedState {
    pub fn newest(&self) -> &[f64] {
        &self.blocks[0]
    }

    pub fn newest_mut(&mut self) -> &mut [f64] {
        &mut self.blocks[0]
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_dimension(&self) -> usize {
        self.blocks.first().map_or(0, Vec::len)
    }

    pub fn flattened(&self) -> Vec<f64> {
        self.blocks.concat()
    }
}

/// Packs a warm history into an augmented state.
pub fn augment(history: &HistoryBuffer, time_index: usize) -> Result<AugmentedState> {
    if !history.is_warm() {
        return Err(Error::InsufficientHistory {
            needed: history.capacity(),
            available: history.len(),
        });
    }
    Ok(AugmentedState {
        blocks: history.states().cloned().collect(),
        time_index,
        time: history.current_time(),
    })
}

/// Inverse of [`augment`]: the history buffer for the leading `capacity`
/// blocks, with derivatives re-evaluated.
pub fn project_history(x: &AugmentedState, system: &OdeSystem, capacity: usize, h: f64) -> Result<HistoryBuffer> {
    if x.blocks.len() < capacity {
        return Err(Error::InsufficientHistory {
            needed: capacity,
            available: x.blocks.len(),
        });
    }
    Ok(HistoryBuffer::from_states(
        system,
        capacity,
        &x.blocks[..capacity],
        x.time,
        h,
    ))
}

/// Observation operator applied to the newest block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ObservationMap {
    Identity,
    /// Zero-based component indices.
    Select(Vec<usize>),
}

impl ObservationMap {
    pub fn apply(&self, u: &[f64]) -> Result<Vec<f64>> {
        match self {
            ObservationMap::Identity => Ok(u.to_vec()),
            ObservationMap::Select(idx) => idx
                .iter()
                .map(|&i| {
                    u.get(i).copied().ok_or(Error::DimensionMismatch {
                        expected: i + 1,
                        found: u.len(),
                    })
                })
                .collect(),
        }
    }

    pub fn output_dimension(&self, state_dimension: usize) -> usize {
        match self {
            ObservationMap::Identity => state_dimension,
            ObservationMap::Select(idx) => idx.len(),
        }
    }
}

/// Diagonal Gaussian `N(mean, diag(covariance_diagonal))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDensity {
    pub mean: Vec<f64>,
    pub covariance_diagonal: Vec<f64>,
}

impl GaussianDensity {
    pub fn new(mean: Vec<f64>, covariance_diagonal: Vec<f64>) -> Result<Self> {
        if mean.len() != covariance_diagonal.len() {
            return Err(Error::DimensionMismatch {
                expected: mean.len(),
                found: covariance_diagonal.len(),
            });
        }
        if let Some(&bad) = covariance_diagonal.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveVariance(bad));
        }
        Ok(GaussianDensity {
            mean,
            covariance_diagonal,
        })
    }
}

/// `−½ Σ_i [(x_i − μ_i)²/σ_i² + ln(2π σ_i²)]`.
pub fn log_density(g: &GaussianDensity, x: &[f64]) -> Result<f64> {
    if x.len() != g.mean.len() {
        return Err(Error::DimensionMismatch {
            expected: g.mean.len(),
            found: x.len(),
        });
    }
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    let mut acc = 0.0;
    for ((xi, mi), vi) in x.iter().zip(&g.mean).zip(&g.covariance_diagonal) {
        if !(*vi > 0.0) {
            return Err(Error::NonPositiveVariance(*vi));
        }
        let r = xi - mi;
        acc += r * r / vi + ln_2pi + vi.ln();
    }
    Ok(-0.5 * acc)
}

/// `X_{j+1} = Ψ(X_j) + V_{j+1}`, `Y_j = G(X_j) + E_j` with
/// `V ~ N(0, Γ)` (newest block only) and `E ~ N(0, Σ)`.
#[derive(Debug, Clone)]
pub struct EvolutionObservationModel {
    pub system: OdeSystem,
    pub pair: MethodPair,
    pub observation: ObservationMap,
    /// Diagonal of Σ.
    pub measurement_variance: Vec<f64>,
    /// Lower bound applied to every γ_i.
    pub gamma_floor: f64,
}

impl EvolutionObservationModel {
    pub fn new(
        system: OdeSystem,
        pair: MethodPair,
        observation: ObservationMap,
        measurement_variance: Vec<f64>,
    ) -> Result<Self> {
        let m = observation.output_dimension(system.dimension());
        if measurement_variance.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: measurement_variance.len(),
            });
        }
        if let Some(&bad) = measurement_variance.iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveVariance(bad));
        }
        Ok(EvolutionObservationModel {
            system,
            pair,
            observation,
            measurement_variance,
            gamma_floor: DEFAULT_GAMMA_FLOOR,
        })
    }

    pub fn with_gamma_floor(mut self, floor: f64) -> Self {
        self.gamma_floor = floor;
        self
    }

    /// Number of blocks in the augmented state.
    pub fn block_count(&self) -> usize {
        self.pair.history_len()
    }

    /// `log π(y | x)` under the measurement noise.
    pub fn log_likelihood(&self, y: &[f64], x: &AugmentedState) -> Result<f64> {
        let predicted = observe(self, x)?;
        let g = GaussianDensity {
            mean: predicted,
            covariance_diagonal: self.measurement_variance.clone(),
        };
        log_density(&g, y)
    }
}

/// Deterministic part of the transition plus the innovation covariance of the
/// step. The predictor's newest block is the low-order step; the remaining
/// blocks are the input's leading blocks shifted down by one.
pub fn propagate(
    model: &EvolutionObservationModel,
    x: &AugmentedState,
    h: f64,
    solve: &ImplicitSolveConfig,
) -> Result<(AugmentedState, InnovationCovariance)> {
    let pair = &model.pair;
    let lo = project_history(x, &model.system, pair.low.steps, h)?;
    let hi = project_history(x, &model.system, pair.high.steps, h)?;
    let (u_low, u_high) = propagate_pair(pair, &model.system, &lo, &hi, h, solve)?;
    let gamma = innovation_covariance(&u_low, &u_high, pair.tau)?.floored(model.gamma_floor);

    let mut blocks = Vec::with_capacity(x.blocks.len());
    blocks.push(u_low);
    blocks.extend(x.blocks.iter().take(x.blocks.len() - 1).cloned());
    Ok((
        AugmentedState {
            blocks,
            time_index: x.time_index + 1,
            time: x.time + h,
        },
        gamma,
    ))
}

/// Noiseless observation `G(X)`.
pub fn observe(model: &EvolutionObservationModel, x: &AugmentedState) -> Result<Vec<f64>> {
    model.observation.apply(x.newest())
}
