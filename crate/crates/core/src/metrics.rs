//! Run diagnostics: ensemble mean and spread, absolute error against the
//! exact solution, and the two norms reported per run.

use crate::error::{Error, Result};
use crate::filter::Ensemble;

/// Weighted mean of the newest block.
pub fn ensemble_mean(ensemble: &Ensemble) -> Vec<f64> {
    let d = ensemble.particles.first().map_or(0, |p| p.state.block_dimension());
    let mut mean = vec![0.0; d];
    for p in &ensemble.particles {
        for (m, x) in mean.iter_mut().zip(p.state.newest()) {
            *m += p.weight * x;
        }
    }
    mean
}

/// Weighted population variance of the newest block, per component.
pub fn sample_variance(ensemble: &Ensemble) -> Result<Vec<f64>> {
    if ensemble.len() < 2 {
        return Err(Error::InvalidConfig(format!(
            "sample variance needs at least 2 particles, got {}",
            ensemble.len()
        )));
    }
    let mean = ensemble_mean(ensemble);
    let mut var = vec![0.0; mean.len()];
    for p in &ensemble.particles {
        for ((v, x), m) in var.iter_mut().zip(p.state.newest()).zip(&mean) {
            *v += p.weight * (x - m) * (x - m);
        }
    }
    Ok(var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunDiagnostics {
    pub times: Vec<f64>,
    pub ensemble_means: Vec<Vec<f64>>,
    pub exact_values: Vec<Vec<f64>>,
    pub sample_variances: Vec<Vec<f64>>,
    pub absolute_errors: Vec<Vec<f64>>,
    pub error_inf_norm: f64,
    pub variance_2norm: f64,
}

/// Largest entry over all steps and components.
pub fn inf_norm(seq: &[Vec<f64>]) -> f64 {
    seq.iter().flatten().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Euclidean norm of all steps and components stacked into one vector.
pub fn stacked_2norm(seq: &[Vec<f64>]) -> f64 {
    seq.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
}

impl RunDiagnostics {
    pub fn from_parts(
        times: Vec<f64>,
        ensemble_means: Vec<Vec<f64>>,
        exact_values: Vec<Vec<f64>>,
        sample_variances: Vec<Vec<f64>>,
    ) -> Self {
        let absolute_errors: Vec<Vec<f64>> = ensemble_means
            .iter()
            .zip(&exact_values)
            .map(|(m, e)| m.iter().zip(e).map(|(a, b)| (a - b).abs()).collect())
            .collect();
        RunDiagnostics {
            error_inf_norm: inf_norm(&absolute_errors),
            variance_2norm: stacked_2norm(&sample_variances),
            times,
            ensemble_means,
            exact_values,
            sample_variances,
            absolute_errors,
        }
    }
}

pub fn diagnostics<F>(run: &[Ensemble], exact: F) -> Result<RunDiagnostics>
where
    F: Fn(f64) -> Vec<f64>,
{
    let times: Vec<f64> = run.iter().map(|e| e.time).collect();
    let means: Vec<Vec<f64>> = run.iter().map(ensemble_mean).collect();
    let exact_values: Vec<Vec<f64>> = times.iter().map(|&t| exact(t)).collect();
    let variances = run.iter().map(sample_variance).collect::<Result<Vec<_>>>()?;
    for (m, e) in means.iter().zip(&exact_values) {
        if m.len() != e.len() {
            return Err(Error::DimensionMismatch {
                expected: m.len(),
                found: e.len(),
            });
        }
    }
    Ok(RunDiagnostics::from_parts(times, means, exact_values, variances))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::Particle;
    use crate::state_space::AugmentedState;
    use proptest::prelude::*;

    fn ensemble(values: &[f64], weights: &[f64], t: f64) -> Ensemble {
        Ensemble {
            particles: values
                .iter()
                .zip(weights)
                .map(|(&x, &w)| Particle {
                    state: AugmentedState {
                        blocks: vec![vec![x]],
                        time_index: 0,
                        time: t,
                    },
                    weight: w,
                    predictor: None,
                })
                .collect(),
            time_index: 0,
            time: t,
        }
    }

    #[test]
    fn means() {
        assert_eq!(ensemble_mean(&ensemble(&[2.5; 4], &[0.25; 4], 0.0)), vec![2.5]);
        assert_eq!(ensemble_mean(&ensemble(&[0.0, 1.0], &[0.5, 0.5], 0.0)), vec![0.5]);
        assert_eq!(ensemble_mean(&ensemble(&[0.0, 1.0], &[0.25, 0.75], 0.0)), vec![0.75]);
    }

    #[test]
    fn variances() {
        assert_eq!(
            sample_variance(&ensemble(&[3.0; 3], &[1.0 / 3.0; 3], 0.0)).unwrap(),
            vec![0.0]
        );
        assert_eq!(
            sample_variance(&ensemble(&[-1.0, 1.0], &[0.5, 0.5], 0.0)).unwrap(),
            vec![1.0]
        );
        assert!(sample_variance(&ensemble(&[1.0], &[1.0], 0.0)).is_err());
    }

    #[test]
    fn perfect_estimate_has_zero_error() {
        let run = vec![ensemble(&[1.0, 3.0], &[0.5, 0.5], 0.2)];
        let d = diagnostics(&run, |_| vec![2.0]).unwrap();
        assert_eq!(d.absolute_errors, vec![vec![0.0]]);
        assert_eq!(d.error_inf_norm, 0.0);
        assert_eq!(d.variance_2norm, 1.0);
    }

    #[test]
    fn norms_hand_values() {
        assert_eq!(inf_norm(&[vec![0.1], vec![0.4], vec![0.2]]), 0.4);
        assert!((stacked_2norm(&[vec![0.3], vec![0.4]]) - 0.5).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn variance_is_translation_invariant(
            xs in prop::collection::vec(-5.0..5.0f64, 2..20),
            c in -100.0..100.0f64,
        ) {
            let n = xs.len();
            let w = vec![1.0 / n as f64; n];
            let shifted: Vec<f64> = xs.iter().map(|x| x + c).collect();
            let a = sample_variance(&ensemble(&xs, &w, 0.0)).unwrap()[0];
            let b = sample_variance(&ensemble(&shifted, &w, 0.0)).unwrap()[0];
            prop_assert!((a - b).abs() < 1e-9 * (1.0 + c.abs()));
        }

        #[test]
        fn norms_are_order_free_and_zero_iff_zero(
            mut seq in prop::collection::vec(prop::collection::vec(0.0..1.0f64, 1..3), 1..10),
        ) {
            let (i, s) = (inf_norm(&seq), stacked_2norm(&seq));
            let all_zero = seq.iter().flatten().all(|x| *x == 0.0);
            prop_assert_eq!(i == 0.0, all_zero);
            prop_assert_eq!(s == 0.0, all_zero);
            seq.reverse();
            prop_assert_eq!(inf_norm(&seq), i);
            prop_assert!((stacked_2norm(&seq) - s).abs() <= 1e-15 * s.max(1.0));
        }
    }
}
