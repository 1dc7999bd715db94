//! Fixed-step propagators: Adams-Bashforth, Adams-Moulton, BDF and embedded
//! Runge-Kutta pairs, with multistep history management and startup.
//!
//! Coefficient conventions (history indexed newest first, `f_i = f(t_{j-i}, u_{j-i})`):
//!
//! * Adams-Bashforth: `u_{j+1} = u_j + h Σ β_i f_i`
//! * Adams-Moulton:   `u_{j+1} = u_j + h (β_new f_{j+1} + Σ β_i f_i)`
//! * BDF:             `u_{j+1} = Σ α_i u_{j-i} + h β_new f_{j+1}`

use std::collections::VecDeque;
use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::ode_models::OdeSystem;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    AdamsBashforth,
    AdamsMoulton,
    Bdf,
    RungeKuttaEmbedded,
}

impl Family {
    pub fn is_implicit(self) -> bool {
        matches!(self, Family::AdamsMoulton | Family::Bdf)
    }
}

/// Explicit Runge-Kutta tableau carrying two embedded weight vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ButcherTableau {
    pub c: Vec<f64>,
    pub a: Vec<Vec<f64>>,
    pub b_low: Vec<f64>,
    pub b_high: Vec<f64>,
}

impl ButcherTableau {
    pub fn stages(&self) -> usize {
        self.c.len()
    }

    /// Heun-Euler 1(2).
    pub fn heun_euler() -> Self {
        ButcherTableau {
            c: vec![0.0, 1.0],
            a: vec![vec![], vec![1.0]],
            b_low: vec![1.0, 0.0],
            b_high: vec![0.5, 0.5],
        }
    }

    /// Runge-Kutta-Fehlberg 4(5).
    pub fn fehlberg45() -> Self {
        ButcherTableau {
            c: vec![0.0, 0.25, 0.375, 12.0 / 13.0, 1.0, 0.5],
            a: vec![
                vec![],
                vec![0.25],
                vec![3.0 / 32.0, 9.0 / 32.0],
                vec![1932.0 / 2197.0, -7200.0 / 2197.0, 7296.0 / 2197.0],
                vec![439.0 / 216.0, -8.0, 3680.0 / 513.0, -845.0 / 4104.0],
                vec![-8.0 / 27.0, 2.0, -3544.0 / 2565.0, 1859.0 / 4104.0, -11.0 / 40.0],
            ],
            b_low: vec![25.0 / 216.0, 0.0, 1408.0 / 2565.0, 2197.0 / 4104.0, -0.2, 0.0],
            b_high: vec![
                16.0 / 135.0,
                0.0,
                6656.0 / 12825.0,
                28561.0 / 56430.0,
                -9.0 / 50.0,
                2.0 / 55.0,
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    AdamsBashforth { beta: Vec<f64> },
    AdamsMoulton { beta_new: f64, beta: Vec<f64> },
    Bdf { alpha: Vec<f64>, beta_new: f64 },
    Embedded { tableau: ButcherTableau, high_order: usize },
}

/// Identity and coefficients of one integrator.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub family: Family,
    pub order: usize,
    /// Number of past states the step consumes.
    pub steps: usize,
    pub coefficients: Coefficients,
}

pub const SUPPORTED_METHODS: &str = "AB1-AB4, AM1-AM4, BDF1-BDF4, RK1(2), RK4(5)";

pub fn make_method(family: Family, order: usize) -> Result<MethodSpec> {
    let unsupported = || Error::UnsupportedMethod {
        family,
        order,
        supported: SUPPORTED_METHODS.to_string(),
    };
    let coefficients = match family {
        Family::AdamsBashforth => {
            let beta: Vec<f64> = match order {
                1 => vec![1.0],
                2 => vec![3.0 / 2.0, -1.0 / 2.0],
                3 => vec![23.0 / 12.0, -16.0 / 12.0, 5.0 / 12.0],
                4 => vec![55.0 / 24.0, -59.0 / 24.0, 37.0 / 24.0, -9.0 / 24.0],
                _ => return Err(unsupported()),
            };
            Coefficients::AdamsBashforth { beta }
        }
        Family::AdamsMoulton => match order {
            1 => Coefficients::AdamsMoulton {
                beta_new: 1.0,
                beta: vec![],
            },
            2 => Coefficients::AdamsMoulton {
                beta_new: 0.5,
                beta: vec![0.5],
            },
            3 => Coefficients::AdamsMoulton {
                beta_new: 5.0 / 12.0,
                beta: vec![8.0 / 12.0, -1.0 / 12.0],
            },
            4 => Coefficients::AdamsMoulton {
                beta_new: 9.0 / 24.0,
                beta: vec![19.0 / 24.0, -5.0 / 24.0, 1.0 / 24.0],
            },
            _ => return Err(unsupported()),
        },
        Family::Bdf => match order {
            1 => Coefficients::Bdf {
                alpha: vec![1.0],
                beta_new: 1.0,
            },
            2 => Coefficients::Bdf {
                alpha: vec![4.0 / 3.0, -1.0 / 3.0],
                beta_new: 2.0 / 3.0,
            },
            3 => Coefficients::Bdf {
                alpha: vec![18.0 / 11.0, -9.0 / 11.0, 2.0 / 11.0],
                beta_new: 6.0 / 11.0,
            },
            4 => Coefficients::Bdf {
                alpha: vec![48.0 / 25.0, -36.0 / 25.0, 16.0 / 25.0, -3.0 / 25.0],
                beta_new: 12.0 / 25.0,
            },
            _ => return Err(unsupported()),
        },
        Family::RungeKuttaEmbedded => match order {
            1 => Coefficients::Embedded {
                tableau: ButcherTableau::heun_euler(),
                high_order: 2,
            },
            4 => Coefficients::Embedded {
                tableau: ButcherTableau::fehlberg45(),
                high_order: 5,
            },
            _ => return Err(unsupported()),
        },
    };
    let steps = match &coefficients {
        Coefficients::AdamsBashforth { beta } => beta.len(),
        Coefficients::AdamsMoulton { beta, .. } => beta.len().max(1),
        Coefficients::Bdf { alpha, .. } => alpha.len(),
        Coefficients::Embedded { .. } => 1,
    };
    Ok(MethodSpec {
        family,
        order,
        steps,
        coefficients,
    })
}

impl MethodSpec {
    /// Order of the second solution of an embedded pair; `None` otherwise.
    pub fn high_order(&self) -> Option<usize> {
        match self.coefficients {
            Coefficients::Embedded { high_order, .. } => Some(high_order),
            _ => None,
        }
    }

    pub fn label(&self) -> String {
        match self.family {
            Family::AdamsBashforth => format!("AB{}", self.order),
            Family::AdamsMoulton => format!("AM{}", self.order),
            Family::Bdf => format!("BDF{}", self.order),
            Family::RungeKuttaEmbedded => {
                format!("RK{}({})", self.order, self.high_order().unwrap_or(0))
            }
        }
    }
}

impl fmt::Display for MethodSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// The `capacity` most recent states, newest first, with their derivatives.
///
/// Entry `i` sits at time `current_time - i·h`.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryBuffer {
    capacity: usize,
    states: VecDeque<Vec<f64>>,
    derivatives: VecDeque<Vec<f64>>,
    current_time: f64,
}

impl HistoryBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "history capacity must be positive");
        HistoryBuffer {
            capacity,
            states: VecDeque::with_capacity(capacity),
            derivatives: VecDeque::with_capacity(capacity),
            current_time: f64::NAN,
        }
    }

    /// Builds a buffer from `states` (newest first) spaced `h` apart, ending at
    /// `current_time`. Derivatives are evaluated from the states.
    pub fn from_states(system: &OdeSystem, capacity: usize, states: &[Vec<f64>], current_time: f64, h: f64) -> Self {
        let mut buf = HistoryBuffer::new(capacity);
        for (i, u) in states.iter().take(capacity).enumerate() {
            buf.derivatives.push_back(system.eval(current_time - i as f64 * h, u));
            buf.states.push_back(u.clone());
        }
        buf.current_time = current_time;
        buf
    }

    /// Appends the state at `time` as the newest entry, dropping the oldest
    /// once the buffer is full.
    pub fn push(&mut self, system: &OdeSystem, state: Vec<f64>, time: f64) {
        let deriv = system.eval(time, &state);
        self.states.push_front(state);
        self.derivatives.push_front(deriv);
        self.states.truncate(self.capacity);
        self.derivatives.truncate(self.capacity);
        self.current_time = time;
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn is_warm(&self) -> bool {
        self.states.len() == self.capacity
    }

    pub fn current_time(&self) -> f64 {
        self.current_time
    }

    pub fn newest(&self) -> Option<&[f64]> {
        self.states.front().map(Vec::as_slice)
    }

    pub fn states(&self) -> impl DoubleEndedIterator<Item = &Vec<f64>> + ExactSizeIterator {
        self.states.iter()
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i]
    }

    pub fn derivative(&self, i: usize) -> &[f64] {
        &self.derivatives[i]
    }

    fn require(&self, needed: usize) -> Result<()> {
        if self.states.len() < needed {
            Err(Error::InsufficientHistory {
                needed,
                available: self.states.len(),
            })
        } else {
            Ok(())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStrategy {
    /// Damped fixed-point iteration, falling back to Newton if it stalls.
    FixedPoint,
    NewtonNumericJacobian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitSolveConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub strategy: SolveStrategy,
}

impl Default for ImplicitSolveConfig {
    fn default() -> Self {
        ImplicitSolveConfig {
            max_iterations: 50,
            tolerance: 1e-10,
            strategy: SolveStrategy::FixedPoint,
        }
    }
}

impl ImplicitSolveConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 || !(self.tolerance > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "implicit solve needs max_iterations >= 1 and tolerance > 0, got {} and {}",
                self.max_iterations, self.tolerance
            )));
        }
        Ok(())
    }
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Adams-Bashforth step. Does not touch `history`.
pub fn step_explicit(method: &MethodSpec, system: &OdeSystem, history: &HistoryBuffer, h: f64) -> Result<Vec<f64>> {
    let Coefficients::AdamsBashforth { beta } = &method.coefficients else {
        return Err(Error::WrongFamily {
            family: method.family,
            reason: "explicit multistep stepping requires an Adams-Bashforth method",
        });
    };
    history.require(method.steps)?;
    if history.state(0).len() != system.dimension() {
        return Err(Error::DimensionMismatch {
            expected: system.dimension(),
            found: history.state(0).len(),
        });
    }
    Ok(adams_bashforth(beta, history, h))
}

fn adams_bashforth(beta: &[f64], history: &HistoryBuffer, h: f64) -> Vec<f64> {
    let mut u = history.state(0).to_vec();
    for (i, b) in beta.iter().enumerate() {
        axpy(&mut u, h * b, history.derivative(i));
    }
    u
}

/// Adams-Moulton or BDF step, solving `u = c + h·β_new·f(t_{j+1}, u)`.
pub fn step_implicit(
    method: &MethodSpec,
    system: &OdeSystem,
    history: &HistoryBuffer,
    h: f64,
    solve: &ImplicitSolveConfig,
) -> Result<Vec<f64>> {
    history.require(method.steps)?;
    // A zero step is the identity; the BDF formula alone would extrapolate.
    if h == 0.0
        && matches!(
            method.coefficients,
            Coefficients::AdamsMoulton { .. } | Coefficients::Bdf { .. }
        )
    {
        return Ok(history.state(0).to_vec());
    }
    let t_next = history.current_time() + h;
    let (constant, beta_new, predictor) = match &method.coefficients {
        Coefficients::AdamsMoulton { beta_new, beta } => {
            let mut c = history.state(0).to_vec();
            for (i, b) in beta.iter().enumerate() {
                axpy(&mut c, h * b, history.derivative(i));
            }
            // Adams-Bashforth predictor of the highest order the history supports.
            let ab_order = method.steps.min(method.order).max(1);
            let predictor = match make_method(Family::AdamsBashforth, ab_order)?.coefficients {
                Coefficients::AdamsBashforth { beta } => adams_bashforth(&beta, history, h),
                _ => unreachable!(),
            };
            (c, *beta_new, predictor)
        }
        Coefficients::Bdf { alpha, beta_new } => {
            let mut c = vec![0.0; system.dimension()];
            for (i, a) in alpha.iter().enumerate() {
                axpy(&mut c, *a, history.state(i));
            }
            (c, *beta_new, history.state(0).to_vec())
        }
        _ => {
            return Err(Error::WrongFamily {
                family: method.family,
                reason: "implicit stepping requires an Adams-Moulton or BDF method",
            })
        }
    };
    solve_stage(system, t_next, &constant, h * beta_new, predictor, solve)
}

fn stage_residual(system: &OdeSystem, t: f64, c: &[f64], hb: f64, u: &[f64], f: &mut [f64]) -> Vec<f64> {
    system.eval_into(t, u, f);
    u.iter()
        .zip(c)
        .zip(f.iter())
        .map(|((ui, ci), fi)| ui - ci - hb * fi)
        .collect()
}

/// Solves `u - c - hb·f(t, u) = 0` to `cfg.tolerance` in the max-norm.
pub(crate) fn solve_stage(
    system: &OdeSystem,
    t: f64,
    c: &[f64],
    hb: f64,
    guess: Vec<f64>,
    cfg: &ImplicitSolveConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    let d = system.dimension();
    let mut f = vec![0.0; d];
    let mut u = guess;
    let mut r = stage_residual(system, t, c, hb, &u, &mut f);
    let mut norm = max_norm(&r);
    if norm <= cfg.tolerance {
        return Ok(u);
    }

    if cfg.strategy == SolveStrategy::FixedPoint {
        let mut omega = 1.0;
        for _ in 0..cfg.max_iterations {
            let trial: Vec<f64> = u.iter().zip(&r).map(|(ui, ri)| ui - omega * ri).collect();
            let r_trial = stage_residual(system, t, c, hb, &trial, &mut f);
            let n_trial = max_norm(&r_trial);
            if n_trial.is_finite() && n_trial < norm {
                u = trial;
                r = r_trial;
                norm = n_trial;
                if norm <= cfg.tolerance {
                    return Ok(u);
                }
            } else {
                omega *= 0.5;
            }
        }
    }

    // Newton with a forward-difference Jacobian of the residual.
    let mut f_shift = vec![0.0; d];
    for _ in 0..cfg.max_iterations {
        let mut jac = DMatrix::<f64>::zeros(d, d);
        for k in 0..d {
            let delta = f64::EPSILON.sqrt() * u[k].abs().max(1.0);
            let mut shifted = u.clone();
            shifted[k] += delta;
            let r_shift = stage_residual(system, t, c, hb, &shifted, &mut f_shift);
            for i in 0..d {
                jac[(i, k)] = (r_shift[i] - r[i]) / delta;
            }
        }
        let rhs = -DVector::from_column_slice(&r);
        let Some(step) = jac.lu().solve(&rhs) else {
            break;
        };
        for (ui, si) in u.iter_mut().zip(step.iter()) {
            *ui += si;
        }
        r = stage_residual(system, t, c, hb, &u, &mut f);
        norm = max_norm(&r);
        if norm <= cfg.tolerance {
            return Ok(u);
        }
        if !norm.is_finite() {
            break;
        }
    }
    Err(Error::ImplicitSolve {
        iterations: cfg.max_iterations,
        residual: norm,
    })
}

/// Both solutions of an embedded Runge-Kutta pair from one set of stages.
pub fn step_rk_embedded(
    method: &MethodSpec,
    system: &OdeSystem,
    t: f64,
    u: &[f64],
    h: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let Coefficients::Embedded { tableau, .. } = &method.coefficients else {
        return Err(Error::WrongFamily {
            family: method.family,
            reason: "embedded stepping requires a Runge-Kutta pair",
        });
    };
    if u.len() != system.dimension() {
        return Err(Error::DimensionMismatch {
            expected: system.dimension(),
            found: u.len(),
        });
    }
    Ok(rk_stages(tableau, system, t, u, h))
}

fn rk_stages(tab: &ButcherTableau, system: &OdeSystem, t: f64, u: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let d = u.len();
    let mut k: Vec<Vec<f64>> = Vec::with_capacity(tab.stages());
    let mut stage = vec![0.0; d];
    for (s, row) in tab.a.iter().enumerate() {
        stage.copy_from_slice(u);
        for (a, ki) in row.iter().zip(&k) {
            axpy(&mut stage, h * a, ki);
        }
        k.push(system.eval(t + tab.c[s] * h, &stage));
    }
    let mut low = u.to_vec();
    let mut high = u.to_vec();
    for (s, ks) in k.iter().enumerate() {
        axpy(&mut low, h * tab.b_low[s], ks);
        axpy(&mut high, h * tab.b_high[s], ks);
    }
    (low, high)
}

/// One step of `method` from a warm `history`. Embedded pairs return their
/// low-order solution.
pub fn step(
    method: &MethodSpec,
    system: &OdeSystem,
    history: &HistoryBuffer,
    h: f64,
    solve: &ImplicitSolveConfig,
) -> Result<Vec<f64>> {
    match method.family {
        Family::AdamsBashforth => step_explicit(method, system, history, h),
        Family::AdamsMoulton | Family::Bdf => step_implicit(method, system, history, h, solve),
        Family::RungeKuttaEmbedded => {
            history.require(1)?;
            let (low, _) = step_rk_embedded(method, system, history.current_time(), history.state(0), h)?;
            Ok(low)
        }
    }
}

/// Fifth-order step used to generate multistep startup values.
fn startup_step(system: &OdeSystem, t: f64, u: &[f64], h: f64) -> Vec<f64> {
    rk_stages(&ButcherTableau::fehlberg45(), system, t, u, h).1
}

/// Warm history for `method` starting at `(t0, u0)`: the `steps - 1` values
/// after `u0` come from fifth-order Runge-Kutta steps, so the buffer's current
/// time is `t0 + (steps - 1)·h`.
pub fn bootstrap_history(method: &MethodSpec, system: &OdeSystem, u0: &[f64], t0: f64, h: f64) -> HistoryBuffer {
    let mut buf = HistoryBuffer::new(method.steps);
    buf.push(system, u0.to_vec(), t0);
    let mut u = u0.to_vec();
    let mut t = t0;
    for _ in 1..method.steps {
        u = startup_step(system, t, &u, h);
        t += h;
        buf.push(system, u.clone(), t);
    }
    buf
}

/// Warm history of `capacity` entries whose newest state is `u0` at `t0`; the
/// older entries are reconstructed by fifth-order Runge-Kutta steps backwards
/// in time.
pub fn backfill_history(system: &OdeSystem, capacity: usize, u0: &[f64], t0: f64, h: f64) -> HistoryBuffer {
    let mut states = Vec::with_capacity(capacity);
    states.push(u0.to_vec());
    let mut t = t0;
    for _ in 1..capacity {
        let prev = startup_step(system, t, states.last().expect("nonempty"), -h);
        t -= h;
        states.push(prev);
    }
    HistoryBuffer::from_states(system, capacity, &states, t0, h)
}

/// Integrates `n_steps` of size `h` from `(t0, u0)`, returning `u_0..u_n`.
pub fn integrate(
    method: &MethodSpec,
    system: &OdeSystem,
    u0: &[f64],
    t0: f64,
    h: f64,
    n_steps: usize,
    solve: &ImplicitSolveConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut history = bootstrap_history(method, system, u0, t0, h);
    let mut out: Vec<Vec<f64>> = history.states().rev().cloned().collect();
    while out.len() <= n_steps {
        let next = step(method, system, &history, h, solve)?;
        let t = history.current_time() + h;
        history.push(system, next.clone(), t);
        out.push(next);
    }
    out.truncate(n_steps + 1);
    Ok(out)
}
