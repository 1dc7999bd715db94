//! Auxiliary particle filter with multistep predictors and HOMEC innovation.
//!
//! One filter step from `S_j` to `S_{j+1}`:
//!
//! 1. propagate every particle with the low-order method (predictor `x̄`) and
//!    record the pair's innovation covariance `Γ`;
//! 2. at observation instants, resample ancestors with probability
//!    proportional to `w · π(y | x̄)` and reshuffle states, predictors and `Γ`;
//! 3. perturb the newest block: `x = x̄ + v`, `v ~ N(0, Γ)`;
//! 4. at observation instants, reweight with `π(y | x) / π(y | x̄)`.
//!
//! Randomness is drawn from substreams keyed by `(seed, purpose, step,
//! particle)`, so runs replay bit-for-bit regardless of thread count.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::exec::{try_map_indexed, try_map_range, Execution};
use crate::homec::InnovationCovariance;
use crate::integrators::{backfill_history, ImplicitSolveConfig};
use crate::ode_models::ObservationRecord;
use crate::rng::{substream, Purpose};
use crate::state_space::{augment, propagate, AugmentedState, EvolutionObservationModel};

#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: AugmentedState,
    pub weight: f64,
    /// Deterministic one-step prediction `Ψ(x)` that produced `state`.
    pub predictor: Option<AugmentedState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub particles: Vec<Particle>,
    pub time_index: usize,
    pub time: f64,
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn weight_sum(&self) -> f64 {
        self.particles.iter().map(|p| p.weight).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampler {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub n_particles: usize,
    /// Variance `V₀` of the Gaussian prior on the initial state.
    pub initial_variance: f64,
    pub step: f64,
    /// Integration steps per observation.
    pub stride: usize,
    pub resampler: Resampler,
    pub seed: u64,
    pub solve: ImplicitSolveConfig,
    pub execution: Execution,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig {
            n_particles: 150,
            initial_variance: 0.1,
            step: 0.1,
            stride: 1,
            resampler: Resampler::Multinomial,
            seed: 0,
            solve: ImplicitSolveConfig::default(),
            execution: Execution::default(),
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_particles < 2 {
            return bad(format!("need at least 2 particles, got {}", self.n_particles));
        }
        if !(self.initial_variance > 0.0) || !self.initial_variance.is_finite() {
            return bad(format!(
                "initial variance must be positive, got {}",
                self.initial_variance
            ));
        }
        if !(self.step > 0.0) || !self.step.is_finite() {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if self.stride == 0 {
            return bad("observation stride must be at least 1".into());
        }
        self.solve.validate()
    }
}

/// Normalizes log-weights through exp(· − max). Fails if every weight is zero.
pub fn normalize_log_weights(log_weights: &[f64]) -> Result<Vec<f64>> {
    let max = log_weights
        .iter()
        .copied()
        .filter(|w| !w.is_nan())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::LikelihoodUnderflow);
    }
    let mut w: Vec<f64> = log_weights
        .iter()
        .map(|lw| if lw.is_nan() { 0.0 } else { (lw - max).exp() })
        .collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    Ok(w)
}

/// Draws `count` ancestor indices with `P(index = k) = weights[k]`.
///
/// `weights` must be normalized.
pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    count: usize,
    resampler: Resampler,
    rng: &mut R,
) -> Vec<usize> {
    let mut cdf = Vec::with_capacity(weights.len());
    let mut acc = 0.0;
    for w in weights {
        acc += w;
        cdf.push(acc);
    }
    let last = weights.len() - 1;
    let locate = |u: f64| cdf.partition_point(|&c| c <= u).min(last);
    match resampler {
        Resampler::Multinomial => (0..count).map(|_| locate(rng.random::<f64>() * acc)).collect(),
        Resampler::Systematic => {
            let offset: f64 = rng.random();
            let spacing = acc / count as f64;
            (0..count).map(|k| locate((k as f64 + offset) * spacing)).collect()
        }
    }
}

/// Draws the prior ensemble `x₀ⁿ ~ N(prior_mean, V₀ I)` with uniform weights.
/// Lagged blocks are reconstructed backwards from each sampled state.
pub fn initialize(
    config: &FilterConfig,
    model: &EvolutionObservationModel,
    prior_mean: &[f64],
    t0: f64,
) -> Result<Ensemble> {
    config.validate()?;
    let d = model.system.dimension();
    if prior_mean.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: prior_mean.len(),
        });
    }
    let n = config.n_particles;
    let sd = config.initial_variance.sqrt();
    let blocks = model.block_count();
    let particles = try_map_range(config.execution, n, |i| {
        let mut rng = substream(config.seed, Purpose::Prior, 0, i as u64);
        let u: Vec<f64> = prior_mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + sd * z
            })
            .collect();
        let history = backfill_history(&model.system, blocks, &u, t0, config.step);
        Ok::<_, Error>(Particle {
            state: augment(&history, 0)?,
            weight: 1.0 / n as f64,
            predictor: None,
        })
    })?;
    Ok(Ensemble {
        particles,
        time_index: 0,
        time: t0,
    })
}

/// Predictors `Ψ(xⁿ)` and innovation covariances for every particle.
pub fn propagate_ensemble(
    ensemble: &Ensemble,
    model: &EvolutionObservationModel,
    h: f64,
    solve: &ImplicitSolveConfig,
    exec: Execution,
) -> Result<(Vec<AugmentedState>, Vec<InnovationCovariance>)> {
    let out = try_map_indexed(exec, &ensemble.particles, |_, p| propagate(model, &p.state, h, solve))?;
    Ok(out.into_iter().unzip())
}

/// Fitness-proportional resampling. Returns the reshuffled ensemble (states
/// and predictors, uniform weights) and the ancestor index of each slot.
pub fn survival_of_the_fittest<R: Rng + ?Sized>(
    ensemble: &Ensemble,
    predictors: &[AugmentedState],
    observation: &ObservationRecord,
    model: &EvolutionObservationModel,
    resampler: Resampler,
    rng: &mut R,
) -> Result<(Ensemble, Vec<usize>)> {
    aligned(ensemble, predictors.len())?;
    let log_fitness = ensemble
        .particles
        .iter()
        .zip(predictors)
        .map(|(p, pred)| Ok(p.weight.ln() + model.log_likelihood(&observation.value, pred)?))
        .collect::<Result<Vec<f64>>>()?;
    let fitness = normalize_log_weights(&log_fitness)?;
    let n = ensemble.len();
    let ancestors = resample_indices(&fitness, n, resampler, rng);
    let particles = ancestors
        .iter()
        .map(|&k| Particle {
            state: ensemble.particles[k].state.clone(),
            weight: 1.0 / n as f64,
            predictor: Some(predictors[k].clone()),
        })
        .collect();
    Ok((
        Ensemble {
            particles,
            time_index: ensemble.time_index,
            time: ensemble.time,
        },
        ancestors,
    ))
}

/// `x_{j+1}ⁿ = x̄_{j+1}ⁿ + vⁿ` with `vⁿ ~ N(0, Γⁿ)` on the newest block only.
///
/// Particles must carry predictors. Particle `n` draws from the substream
/// `(seed, innovation, step, n)`.
pub fn innovation_step(
    ensemble: &Ensemble,
    gammas: &[InnovationCovariance],
    seed: u64,
    step: usize,
    exec: Execution,
) -> Result<Ensemble> {
    aligned(ensemble, gammas.len())?;
    let particles = try_map_indexed(exec, &ensemble.particles, |n, p| {
        let predictor = p
            .predictor
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("innovation requires particles with predictors".into()))?;
        let gamma = &gammas[n];
        if gamma.dimension() != predictor.block_dimension() {
            return Err(Error::DimensionMismatch {
                expected: predictor.block_dimension(),
                found: gamma.dimension(),
            });
        }
        let mut rng = substream(seed, Purpose::Innovation, step as u64, n as u64);
        let mut state = predictor.clone();
        for (x, sd) in state.newest_mut().iter_mut().zip(gamma.stddevs()) {
            let z: f64 = StandardNormal.sample(&mut rng);
            *x += sd * z;
        }
        Ok(Particle {
            state,
            weight: p.weight,
            predictor: p.predictor.clone(),
        })
    })?;
    let first = particles.first().map(|p| (p.state.time_index, p.state.time));
    let (time_index, time) = first.unwrap_or((ensemble.time_index, ensemble.time));
    Ok(Ensemble {
        particles,
        time_index,
        time,
    })
}

/// `wⁿ ∝ π(y | xⁿ) / π(y | x̄ⁿ)`, normalized.
pub fn weight_update(
    ensemble: &Ensemble,
    observation: &ObservationRecord,
    model: &EvolutionObservationModel,
    exec: Execution,
) -> Result<Ensemble> {
    let log_ratios = try_map_indexed(exec, &ensemble.particles, |_, p| {
        let predictor = p
            .predictor
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("weight update requires particles with predictors".into()))?;
        Ok::<_, Error>(
            model.log_likelihood(&observation.value, &p.state)?
                - model.log_likelihood(&observation.value, predictor)?,
        )
    })?;
    let weights = normalize_log_weights(&log_ratios)?;
    let mut out = ensemble.clone();
    for (p, w) in out.particles.iter_mut().zip(weights) {
        p.weight = w;
    }
    Ok(out)
}

fn aligned(ensemble: &Ensemble, n: usize) -> Result<()> {
    if ensemble.len() != n {
        Err(Error::DimensionMismatch {
            expected: ensemble.len(),
            found: n,
        })
    } else {
        Ok(())
    }
}

/// Checks that observation `k` (zero-based) sits at `t0 + (k+1)·stride·h`.
pub fn check_schedule(observations: &[ObservationRecord], t0: f64, h: f64, stride: usize) -> Result<()> {
    if observations.is_empty() {
        return Err(Error::ObservationSchedule("no observations".into()));
    }
    for (k, obs) in observations.iter().enumerate() {
        let expected = t0 + ((k + 1) * stride) as f64 * h;
        if (obs.time - expected).abs() > 1e-9 * expected.abs().max(1.0) {
            return Err(Error::ObservationSchedule(format!(
                "observation {} at t={} but step {h} with stride {stride} puts it at t={expected}",
                k + 1,
                obs.time
            )));
        }
    }
    Ok(())
}

/// Runs the filter over every observation and returns `S_1, …, S_T`, one
/// ensemble per integration step.
pub fn run_filter(
    config: &FilterConfig,
    model: &EvolutionObservationModel,
    observations: &[ObservationRecord],
    prior_mean: &[f64],
    t0: f64,
) -> Result<Vec<Ensemble>> {
    config.validate()?;
    check_schedule(observations, t0, config.step, config.stride)?;
    let m = model.observation.output_dimension(model.system.dimension());
    if let Some(bad) = observations.iter().find(|o| o.value.len() != m) {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: bad.value.len(),
        });
    }

    let h = config.step;
    let total_steps = observations.len() * config.stride;
    let mut ensemble = initialize(config, model, prior_mean, t0)?;
    let mut out = Vec::with_capacity(total_steps);

    for j in 0..total_steps {
        let (predictors, gammas) = propagate_ensemble(&ensemble, model, h, &config.solve, config.execution)?;
        let observation = ((j + 1) % config.stride == 0).then(|| &observations[(j + 1) / config.stride - 1]);

        let next = match observation {
            Some(obs) => {
                let mut rng = substream(config.seed, Purpose::Resample, j as u64, 0);
                let (resampled, ancestors) =
                    survival_of_the_fittest(&ensemble, &predictors, obs, model, config.resampler, &mut rng)?;
                let gammas: Vec<InnovationCovariance> = ancestors.iter().map(|&k| gammas[k].clone()).collect();
                let innovated = innovation_step(&resampled, &gammas, config.seed, j, config.execution)?;
                weight_update(&innovated, obs, model, config.execution)?
            }
            None => {
                let mut staged = ensemble.clone();
                for (p, pred) in staged.particles.iter_mut().zip(predictors) {
                    p.predictor = Some(pred);
                }
                innovation_step(&staged, &gammas, config.seed, j, config.execution)?
            }
        };
        out.push(next.clone());
        ensemble = next;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::homec::pair_by_id;
    use crate::ode_models::gaussian_decay_problem;
    use crate::rng::substream;
    use crate::state_space::ObservationMap;

    fn model(pair: &str, noise: f64) -> EvolutionObservationModel {
        let p = gaussian_decay_problem();
        EvolutionObservationModel::new(
            p.system,
            pair_by_id(pair, 1.5).unwrap(),
            ObservationMap::Identity,
            vec![noise * noise],
        )
        .unwrap()
    }

    fn scalar_state(x: f64, t: f64) -> AugmentedState {
        AugmentedState {
            blocks: vec![vec![x]],
            time_index: 0,
            time: t,
        }
    }

    #[test]
    fn initial_weights_are_uniform() {
        let cfg = FilterConfig {
            n_particles: 37,
            ..Default::default()
        };
        let e = initialize(&cfg, &model("AB3-AB4", 0.1), &[1.0], 0.0).unwrap();
        assert_eq!(e.len(), 37);
        for p in &e.particles {
            assert_eq!(p.weight, 1.0 / 37.0);
            assert_eq!(p.state.block_count(), 4);
            assert_eq!(p.state.time, 0.0);
        }
        assert!((e.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_prior_has_no_spread() {
        let cfg = FilterConfig {
            initial_variance: 1e-12,
            ..Default::default()
        };
        let e = initialize(&cfg, &model("AB1-AB2", 0.1), &[1.0], 0.0).unwrap();
        let xs: Vec<f64> = e.particles.iter().map(|p| p.state.newest()[0]).collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(var < 1e-10);
    }

    #[test]
    fn prior_sample_variance_in_chi_square_band() {
        let cfg = FilterConfig {
            n_particles: 150,
            initial_variance: 0.1,
            seed: 3,
            ..Default::default()
        };
        let e = initialize(&cfg, &model("AB1-AB2", 0.1), &[1.0], 0.0).unwrap();
        let xs: Vec<f64> = e.particles.iter().map(|p| p.state.newest()[0]).collect();
        let mean = xs.iter().sum::<f64>() / 150.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 149.0;
        assert!((0.06..=0.14).contains(&var), "sample variance {var}");
    }

    #[test]
    fn config_validation() {
        for cfg in [
            FilterConfig {
                n_particles: 1,
                ..Default::default()
            },
            FilterConfig {
                initial_variance: 0.0,
                ..Default::default()
            },
            FilterConfig {
                step: -0.1,
                ..Default::default()
            },
            FilterConfig {
                stride: 0,
                ..Default::default()
            },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::InvalidConfig(_))));
        }
    }

    #[test]
    fn degenerate_fitness_copies_one_particle() {
        let mut rng = substream(1, Purpose::Resample, 0, 0);
        for r in [Resampler::Multinomial, Resampler::Systematic] {
            let idx = resample_indices(&[1.0, 0.0, 0.0], 50, r, &mut rng);
            assert!(idx.iter().all(|&i| i == 0));
        }
    }

    #[test]
    fn systematic_counts_are_stratified() {
        for seed in 0..20 {
            let mut rng = substream(seed, Purpose::Resample, 0, 0);
            let idx = resample_indices(&[0.75, 0.25], 4, Resampler::Systematic, &mut rng);
            assert_eq!(idx.iter().filter(|&&i| i == 0).count(), 3);
            assert_eq!(idx.iter().filter(|&&i| i == 1).count(), 1);
        }
    }

    #[test]
    fn uniform_multinomial_frequencies() {
        let n = 10_000;
        let w = vec![1.0 / n as f64; n];
        let mut rng = substream(9, Purpose::Resample, 0, 0);
        let idx = resample_indices(&w, n, Resampler::Multinomial, &mut rng);
        let mut counts = vec![0usize; n];
        for i in idx {
            counts[i] += 1;
        }
        // Each count is Binomial(n, 1/n): mean 1, sd ≈ 1.
        let p = 1.0 / n as f64;
        let band = 4.0 * (p * (1.0 - p) / n as f64).sqrt();
        let mean_freq = counts.iter().map(|&c| c as f64 / n as f64).sum::<f64>() / n as f64;
        assert!((mean_freq - p).abs() <= band);
        let max = *counts.iter().max().unwrap();
        assert!(max <= 10, "max offspring {max}");
    }

    #[test]
    fn zero_innovation_reproduces_predictors() {
        let pred = AugmentedState {
            blocks: vec![vec![1.5], vec![1.0]],
            time_index: 1,
            time: 0.1,
        };
        let e = Ensemble {
            particles: (0..5)
                .map(|_| Particle {
                    state: pred.clone(),
                    weight: 0.2,
                    predictor: Some(pred.clone()),
                })
                .collect(),
            time_index: 0,
            time: 0.0,
        };
        let gammas = vec![InnovationCovariance { diagonal: vec![0.0] }; 5];
        let out = innovation_step(&e, &gammas, 4, 0, Execution::Sequential).unwrap();
        for p in &out.particles {
            assert_eq!(p.state, pred);
        }
        assert_eq!(out.time_index, 1);
    }

    #[test]
    fn innovation_spread_matches_gamma() {
        let n = 10_000;
        let pred = AugmentedState {
            blocks: vec![vec![2.0], vec![1.0], vec![0.5]],
            time_index: 1,
            time: 0.1,
        };
        let e = Ensemble {
            particles: (0..n)
                .map(|_| Particle {
                    state: pred.clone(),
                    weight: 1.0 / n as f64,
                    predictor: Some(pred.clone()),
                })
                .collect(),
            time_index: 0,
            time: 0.0,
        };
        let gammas = vec![InnovationCovariance { diagonal: vec![0.01] }; n];
        let out = innovation_step(&e, &gammas, 11, 5, Execution::Parallel).unwrap();
        let d: Vec<f64> = out.particles.iter().map(|p| p.state.newest()[0] - 2.0).collect();
        let m = d.iter().sum::<f64>() / n as f64;
        let sd = (d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((0.097..=0.103).contains(&sd), "sd {sd}");
        for p in &out.particles {
            assert_eq!(p.state.blocks[1..], pred.blocks[1..]);
        }
        let seq = innovation_step(&e, &gammas, 11, 5, Execution::Sequential).unwrap();
        assert_eq!(seq, out);
    }

    #[test]
    fn equal_states_and_predictors_give_uniform_weights() {
        let m = model("AB1-AB2", 0.1);
        let particles = [0.9, 1.0, 1.3]
            .iter()
            .map(|&x| Particle {
                state: scalar_state(x, 0.1),
                weight: 0.2,
                predictor: Some(scalar_state(x, 0.1)),
            })
            .collect();
        let e = Ensemble {
            particles,
            time_index: 1,
            time: 0.1,
        };
        let obs = ObservationRecord {
            time_index: 1,
            time: 0.1,
            value: vec![1.1],
        };
        let out = weight_update(&e, &obs, &m, Execution::Sequential).unwrap();
        for p in &out.particles {
            assert!((p.weight - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn likelihood_ratio_weights() {
        // Equal predictors; particle 1's state is ln 3 more likely than particle 2's.
        let m = model("AB1-AB2", 1.0);
        let pred = 2.0_f64;
        let x1 = (pred * pred - 2.0 * 3f64.ln()).sqrt();
        let particles = vec![
            Particle {
                state: scalar_state(x1, 0.1),
                weight: 0.5,
                predictor: Some(scalar_state(pred, 0.1)),
            },
            Particle {
                state: scalar_state(pred, 0.1),
                weight: 0.5,
                predictor: Some(scalar_state(pred, 0.1)),
            },
        ];
        let e = Ensemble {
            particles,
            time_index: 1,
            time: 0.1,
        };
        let obs = ObservationRecord {
            time_index: 1,
            time: 0.1,
            value: vec![0.0],
        };
        let out = weight_update(&e, &obs, &m, Execution::Sequential).unwrap();
        assert!((out.particles[0].weight - 0.75).abs() < 1e-12);
        assert!((out.particles[1].weight - 0.25).abs() < 1e-12);
        assert!((out.weight_sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        assert!(matches!(
            normalize_log_weights(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Err(Error::LikelihoodUnderflow)
        ));
        let w = normalize_log_weights(&[-800.0, -800.0 - 3f64.ln()]).unwrap();
        assert!((w[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn single_observation_yields_one_ensemble() {
        let cfg = FilterConfig {
            n_particles: 20,
            ..Default::default()
        };
        let obs = vec![ObservationRecord {
            time_index: 1,
            time: 0.1,
            value: vec![1.2],
        }];
        let out = run_filter(&cfg, &model("AB1-AB2", 0.1), &obs, &[1.0], 0.0).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].time_index, 1);
        assert!((out[0].time - 0.1).abs() < 1e-15);
    }

    #[test]
    fn stride_mismatch_is_rejected_up_front() {
        let cfg = FilterConfig {
            n_particles: 20,
            stride: 2,
            ..Default::default()
        };
        let obs = vec![ObservationRecord {
            time_index: 1,
            time: 0.1,
            value: vec![1.2],
        }];
        let err = run_filter(&cfg, &model("AB1-AB2", 0.1), &obs, &[1.0], 0.0).unwrap_err();
        assert!(matches!(err, Error::ObservationSchedule(_)));
    }

    #[test]
    fn strided_run_produces_every_step() {
        let cfg = FilterConfig {
            n_particles: 20,
            stride: 3,
            ..Default::default()
        };
        let obs: Vec<_> = (1..=4)
            .map(|k| {
                let t = 0.3 * k as f64;
                ObservationRecord {
                    time_index: k,
                    time: t,
                    value: vec![(-t * (t - 2.0)).exp()],
                }
            })
            .collect();
        let out = run_filter(&cfg, &model("AB3-AB4", 0.1), &obs, &[1.0], 0.0).unwrap();
        assert_eq!(out.len(), 12);
        for (j, e) in out.iter().enumerate() {
            assert_eq!(e.time_index, j + 1);
            assert!((e.weight_sum() - 1.0).abs() < 1e-12);
        }
    }
}
