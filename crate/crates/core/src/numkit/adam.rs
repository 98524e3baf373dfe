use super::tape::{Gradients, ParamId};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Tensor>,
    pub second_moment: Vec<Tensor>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl AdamState {
    pub fn new(
        params: &[Tensor],
        learning_rate: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
        weight_decay: f64,
    ) -> Result<Self> {
        if !(0.0 < beta1 && beta1 < 1.0 && 0.0 < beta2 && beta2 < 1.0) {
            return Err(Error::invalid(
                "adam",
                format!("betas must lie in (0, 1), got {beta1}, {beta2}"),
            ));
        }
        if epsilon <= 0.0 {
            return Err(Error::invalid("adam", format!("epsilon {epsilon} <= 0")));
        }
        let zeros: Vec<Tensor> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1,
            beta2,
            epsilon,
            learning_rate,
            weight_decay,
        })
    }
}

/// One bias-corrected Adam update. Weight decay is applied to the parameters directly
/// (`p ← p − lr·wd·p`) before the moment update. Parameters without a gradient are
/// treated as having a zero gradient.
pub fn adam_step(params: &mut [Tensor], grads: &Gradients, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() || state.second_moment.len() != params.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} parameters but {} moments",
                params.len(),
                state.first_moment.len()
            ),
        ));
    }
    for (i, p) in params.iter().enumerate() {
        if state.first_moment[i].shape() != p.shape() {
            return Err(Error::shape(
                "adam_step",
                format!("moment {i} shape {:?} vs {:?}", state.first_moment[i].shape(), p.shape()),
            ));
        }
        if let Some(g) = grads.get(ParamId(i)) {
            if g.shape() != p.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("gradient {i} shape {:?} vs {:?}", g.shape(), p.shape()),
                ));
            }
        }
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2, eps, lr, wd) = (
        state.beta1,
        state.beta2,
        state.epsilon,
        state.learning_rate,
        state.weight_decay,
    );
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);

    for (i, p) in params.iter_mut().enumerate() {
        let g = grads.get(ParamId(i)).map(|g| g.data());
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            let gj = g.map_or(0.0, |g| g[j]);
            *pj -= lr * wd * *pj;
            m[j] = b1 * m[j] + (1.0 - b1) * gj;
            v[j] = b2 * v[j] + (1.0 - b2) * gj * gj;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            *pj -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::Tape;

    fn grads_for(values: &[f64]) -> Gradients {
        // d/dp (g·p) = g
        let mut tape = Tape::new();
        let p = tape.param(ParamId(0), &Tensor::row(vec![0.0; values.len()]));
        let g = tape.constant(Tensor::row(values.to_vec()));
        let prod = tape.mul(p, g).unwrap();
        let s = tape.sum(prod);
        tape.backward(s).unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = vec![Tensor::row(vec![0.5])];
        let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        adam_step(&mut params, &grads_for(&[1.0]), &mut state).unwrap();
        let delta = params[0].data()[0] - 0.5;
        assert!((delta + 1e-3).abs() < 1e-6, "delta = {delta}");
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn zero_gradient_without_decay_is_fixed_point() {
        let mut params = vec![Tensor::row(vec![0.5, -2.0])];
        let mut state = AdamState::new(&params, 1e-2, 0.9, 0.999, 1e-8, 0.0).unwrap();
        for _ in 0..5 {
            adam_step(&mut params, &grads_for(&[0.0, 0.0]), &mut state).unwrap();
        }
        assert_eq!(params[0].data(), &[0.5, -2.0]);
    }

    #[test]
    fn decoupled_decay_shrinks_parameters() {
        let mut params = vec![Tensor::row(vec![2.0])];
        let mut state = AdamState::new(&params, 0.1, 0.9, 0.999, 1e-8, 0.5).unwrap();
        adam_step(&mut params, &Gradients::default(), &mut state).unwrap();
        assert!((params[0].data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn identical_calls_agree() {
        let run = || {
            let mut params = vec![Tensor::row(vec![0.3, 0.1])];
            let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8, 1e-2).unwrap();
            adam_step(&mut params, &grads_for(&[0.2, -0.7]), &mut state).unwrap();
            (params, state)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mut params = vec![Tensor::row(vec![0.0, 0.0])];
        let mut state = AdamState::new(&params, 1e-3, 0.9, 0.999, 1e-8, 0.0).unwrap();
        let bad = grads_for(&[1.0, 2.0, 3.0]);
        assert!(adam_step(&mut params, &bad, &mut state).is_err());
    }

    #[test]
    fn invalid_betas_are_rejected() {
        assert!(AdamState::new(&[], 1e-3, 1.0, 0.9, 1e-8, 0.0).is_err());
        assert!(AdamState::new(&[], 1e-3, 0.9, 0.9, 0.0, 0.0).is_err());
    }
}
