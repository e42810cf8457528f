//! Adam with bias correction over a flat parameter vector.

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamSettings {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamSettings {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be positive and finite"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(invalid("beta", "moment decay rates must lie in [0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("epsilon", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub params: Vec<f64>,
    pub score: f64,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub best: Option<Snapshot>,
}

impl TrainState {
    pub fn new(params: Vec<f64>) -> Self {
        let n = params.len();
        Self {
            params,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            best: None,
        }
    }

    /// Keeps a copy of the current parameters when `score` beats the best so far.
    pub fn record_validation(&mut self, score: f64, iteration: usize) -> bool {
        let better = self.best.as_ref().is_none_or(|b| score > b.score);
        if better {
            self.best = Some(Snapshot {
                params: self.params.clone(),
                score,
                iteration,
            });
        }
        better
    }
}

/// One Adam step. A non-finite gradient leaves the state untouched.
pub fn adam_update(state: &mut TrainState, gradient: &[f64], settings: &AdamSettings) -> Result<()> {
    if gradient.len() != state.params.len() {
        return Err(Error::DimensionMismatch {
            context: "gradient",
            expected: state.params.len(),
            actual: gradient.len(),
        });
    }
    if let Some(i) = gradient.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite gradient at coordinate {i} (step {})",
            state.step + 1
        )));
    }
    let AdamSettings {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = *settings;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, m), v), &g) in state
        .params
        .iter_mut()
        .zip(&mut state.m)
        .zip(&mut state.v)
        .zip(gradient)
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut s = TrainState::new(vec![1.0, -2.0]);
        s.m = vec![0.5, 0.5];
        s.v = vec![0.25, 0.25];
        adam_update(&mut s, &[0.0, 0.0], &AdamSettings::default()).unwrap();
        assert_relative_eq!(s.m[0], 0.45, epsilon = 1e-15);
        assert_relative_eq!(s.v[0], 0.25 * 0.999, epsilon = 1e-15);
        // moments nonzero so params move; with zero moments they would not
        let mut z = TrainState::new(vec![1.0, -2.0]);
        adam_update(&mut z, &[0.0, 0.0], &AdamSettings::default()).unwrap();
        assert_eq!(z.params, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_closed_form() {
        let cfg = AdamSettings::default();
        let g = [0.3, -4.0, 1e-9];
        let mut s = TrainState::new(vec![0.0; 3]);
        adam_update(&mut s, &g, &cfg).unwrap();
        for (p, g) in s.params.iter().zip(g) {
            // bias-corrected m = g, v = g^2
            let expect = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert_relative_eq!(*p, expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut s = TrainState::new(vec![0.0; 2]);
        let before = s.clone();
        assert!(matches!(
            adam_update(&mut s, &[1.0, f64::NAN], &AdamSettings::default()),
            Err(Error::Numerical(_))
        ));
        assert_eq!(s, before);
    }

    #[test]
    fn identical_inputs_give_identical_trajectories() {
        let run = || {
            let mut s = TrainState::new(vec![0.1, 0.2, 0.3]);
            for i in 0..50 {
                let g: Vec<f64> = s.params.iter().map(|p| (p * i as f64).sin()).collect();
                adam_update(&mut s, &g, &AdamSettings::default()).unwrap();
            }
            s
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn best_snapshot_only_improves() {
        let mut s = TrainState::new(vec![0.0]);
        assert!(s.record_validation(0.5, 0));
        s.params[0] = 1.0;
        assert!(!s.record_validation(0.5, 1));
        assert_eq!(s.best.as_ref().unwrap().params, vec![0.0]);
        assert!(s.record_validation(0.6, 2));
        assert_eq!(s.best.unwrap().iteration, 2);
    }
}
