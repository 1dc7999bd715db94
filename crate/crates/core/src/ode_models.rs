//! ODE systems, the analytically solvable test problems, and synthetic data.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::state_space::ObservationMap;

type RhsFn = dyn Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync;
type ExactFn = dyn Fn(f64) -> Vec<f64> + Send + Sync;

/// Right-hand side `du/dt = f(t, u, θ)` with a fixed, known parameter vector.
#[derive(Clone)]
pub struct OdeSystem {
    dimension: usize,
    params: Vec<f64>,
    rhs: Arc<RhsFn>,
}

impl OdeSystem {
    /// `rhs(t, u, params, out)` must write exactly `dimension` entries into `out`.
    pub fn new<F>(dimension: usize, params: Vec<f64>, rhs: F) -> Self
    where
        F: Fn(f64, &[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dimension > 0, "ODE dimension must be positive");
        OdeSystem {
            dimension,
            params,
            rhs: Arc::new(rhs),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn eval_into(&self, t: f64, u: &[f64], out: &mut [f64]) {
        debug_assert_eq!(u.len(), self.dimension);
        debug_assert_eq!(out.len(), self.dimension);
        (self.rhs)(t, u, &self.params, out);
    }

    pub fn eval(&self, t: f64, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dimension];
        self.eval_into(t, u, &mut out);
        out
    }
}

impl fmt::Debug for OdeSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("OdeSystem")
            .field("dimension", &self.dimension)
            .field("params", &self.params)
            .finish_non_exhaustive()
    }
}

/// An initial value problem, optionally with its closed-form solution.
#[derive(Clone)]
pub struct TestProblem {
    pub id: String,
    pub system: OdeSystem,
    pub initial_state: Vec<f64>,
    pub t_span: (f64, f64),
    exact: Option<Arc<ExactFn>>,
}

impl TestProblem {
    pub fn new(id: impl Into<String>, system: OdeSystem, initial_state: Vec<f64>, t_span: (f64, f64)) -> Self {
        assert_eq!(initial_state.len(), system.dimension());
        TestProblem {
            id: id.into(),
            system,
            initial_state,
            t_span,
            exact: None,
        }
    }

    pub fn with_exact_solution<F>(mut self, exact: F) -> Self
    where
        F: Fn(f64) -> Vec<f64> + Send + Sync + 'static,
    {
        self.exact = Some(Arc::new(exact));
        self
    }

    pub fn has_exact_solution(&self) -> bool {
        self.exact.is_some()
    }

    pub fn exact_solution(&self, t: f64) -> Option<Vec<f64>> {
        self.exact.as_ref().map(|x| x(t))
    }

    pub fn t_start(&self) -> f64 {
        self.t_span.0
    }

    pub fn t_end(&self) -> f64 {
        self.t_span.1
    }
}

impl fmt::Debug for TestProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestProblem")
            .field("id", &self.id)
            .field("system", &self.system)
            .field("initial_state", &self.initial_state)
            .field("t_span", &self.t_span)
            .field("exact", &self.exact.is_some())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationRecord {
    pub time_index: usize,
    pub time: f64,
    pub value: Vec<f64>,
}

/// `x' = cos²(x)`, `x(0) = 0` on `[0, 5]`, solved by `arctan(t)`.
pub fn smooth_problem() -> TestProblem {
    let system = OdeSystem::new(1, Vec::new(), |_t, u, _p, out| {
        let c = u[0].cos();
        out[0] = c * c;
    });
    TestProblem::new("smooth", system, vec![0.0], (0.0, 5.0)).with_exact_solution(|t| vec![t.atan()])
}

/// `x' = -2(t-1)x`, `x(0) = 1` on `[0, 5]`, solved by `exp(-t(t-2))`.
pub fn gaussian_decay_problem() -> TestProblem {
    let system = OdeSystem::new(1, Vec::new(), |t, u, _p, out| {
        out[0] = -2.0 * (t - 1.0) * u[0];
    });
    TestProblem::new("gaussian_decay", system, vec![1.0], (0.0, 5.0))
        .with_exact_solution(|t| vec![(-t * (t - 2.0)).exp()])
}

pub const PROBLEM_IDS: [&str; 2] = ["smooth", "gaussian_decay"];

pub fn problem_by_id(id: &str) -> Result<TestProblem> {
    match id {
        "smooth" => Ok(smooth_problem()),
        "gaussian_decay" => Ok(gaussian_decay_problem()),
        _ => Err(Error::UnknownProblem {
            id: id.to_string(),
            valid: PROBLEM_IDS.join(", "),
        }),
    }
}

/// Noisy observations `b_j = G(x(t_j)) + e_j` of the exact solution.
///
/// `times[k]` is given time index `k + 1`. Noise is drawn per component, in
/// time order, from `rng`.
pub fn synthesize_observations<R: Rng + ?Sized>(
    problem: &TestProblem,
    times: &[f64],
    observation: &ObservationMap,
    noise_stddev: f64,
    rng: &mut R,
) -> Result<Vec<ObservationRecord>> {
    if !(noise_stddev >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "noise standard deviation must be nonnegative, got {noise_stddev}"
        )));
    }
    if problem.exact.is_none() {
        return Err(Error::NoGroundTruth(problem.id.clone()));
    }
    let (t0, t1) = problem.t_span;
    times
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            if t < t0 - 1e-12 || t > t1 + 1e-9 {
                return Err(Error::ObservationSchedule(format!(
                    "time {t} outside the problem span [{t0}, {t1}]"
                )));
            }
            let exact = problem.exact_solution(t).expect("checked above");
            let mut value = observation.apply(&exact)?;
            for v in &mut value {
                let e: f64 = StandardNormal.sample(rng);
                *v += noise_stddev * e;
            }
            Ok(ObservationRecord {
                time_index: k + 1,
                time: t,
                value,
            })
        })
        .collect()
}
