use super::params::ParamSet;
use crate::error::{BoomError, Result};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `grad` so its L2 norm is at most `clip_norm`.
pub fn clip_global_norm(grad: &[f64], clip_norm: f64) -> Vec<f64> {
    debug_assert!(clip_norm > 0.0);
    let norm = l2_norm(grad);
    if norm <= clip_norm || norm == 0.0 {
        return grad.to_vec();
    }
    let scale = clip_norm / norm;
    grad.iter().map(|g| g * scale).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub clip_norm: f64,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64, clip_norm: f64) -> Self {
        Self {
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
            step_count: 0,
            learning_rate,
            clip_norm,
        }
    }

    pub fn for_params(params: &ParamSet, learning_rate: f64, clip_norm: f64) -> Self {
        Self::new(params.len(), learning_rate, clip_norm)
    }
}

/// Bias-corrected Adam step. Clipping is the caller's job (see `clipped_step`).
pub fn adam_step(
    state: &OptimizerState,
    params: &ParamSet,
    grad: &[f64],
) -> Result<(ParamSet, OptimizerState)> {
    let mut params = params.clone();
    let mut state = state.clone();
    adam_step_in_place(&mut state, &mut params, grad)?;
    Ok((params, state))
}

pub fn adam_step_in_place(
    state: &mut OptimizerState,
    params: &mut ParamSet,
    grad: &[f64],
) -> Result<()> {
    let n = params.len();
    if grad.len() != n || state.first_moment.len() != n || state.second_moment.len() != n {
        return Err(BoomError::LayoutMismatch(format!(
            "adam: params {n}, grad {}, moments {}",
            grad.len(),
            state.first_moment.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    let lr = state.learning_rate;
    for (((p, &g), m), v) in params
        .values
        .iter_mut()
        .zip(grad)
        .zip(state.first_moment.iter_mut())
        .zip(state.second_moment.iter_mut())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
    }
    Ok(())
}

/// Clip to the state's norm, then take one Adam step. Returns the pre-clip
/// gradient norm.
pub fn clipped_step(state: &mut OptimizerState, params: &mut ParamSet, grad: &[f64]) -> Result<f64> {
    let norm = l2_norm(grad);
    let clipped = clip_global_norm(grad, state.clip_norm);
    adam_step_in_place(state, params, &clipped)?;
    Ok(norm)
}

/// `target <- (1 - rate) * target + rate * online`.
pub fn ema_update(target: &ParamSet, online: &ParamSet, rate: f64) -> Result<ParamSet> {
    let mut out = target.clone();
    ema_update_in_place(&mut out, online, rate)?;
    Ok(out)
}

pub fn ema_update_in_place(target: &mut ParamSet, online: &ParamSet, rate: f64) -> Result<()> {
    target.check_layout(online)?;
    if rate == 1.0 {
        target.values.copy_from_slice(&online.values);
        return Ok(());
    }
    for (t, &o) in target.values.iter_mut().zip(&online.values) {
        *t = (1.0 - rate) * *t + rate * o;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::approximator::params::{init_params, MlpSpec};

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let g = vec![6.0, 8.0];
        assert_eq!(clip_global_norm(&g, 20.0), g);
    }

    #[test]
    fn clip_halves_when_norm_is_double() {
        let g = vec![24.0, 32.0];
        assert_eq!(clip_global_norm(&g, 20.0), vec![12.0, 16.0]);
    }

    #[test]
    fn clip_zero_vector() {
        assert_eq!(clip_global_norm(&[0.0; 3], 20.0), vec![0.0; 3]);
    }

    fn toy() -> ParamSet {
        init_params(&MlpSpec::new(2, vec![3], 1), 5)
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let p = toy();
        let st = OptimizerState::for_params(&p, 3e-4, 20.0);
        let (q, st2) = adam_step(&st, &p, &vec![0.0; p.len()]).unwrap();
        assert_eq!(q, p);
        assert_eq!(st2.step_count, 1);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // m_hat = g, v_hat = g^2 after bias correction: delta = -lr * g / (|g| + eps)
        let p = toy();
        let lr = 1e-3;
        let st = OptimizerState::for_params(&p, lr, 20.0);
        let g: Vec<f64> = (0..p.len()).map(|i| if i % 2 == 0 { 0.5 } else { -3.0 }).collect();
        let (q, _) = adam_step(&st, &p, &g).unwrap();
        for ((a, b), gi) in q.values.iter().zip(&p.values).zip(&g) {
            let expected = -lr * gi / (gi.abs() + ADAM_EPS);
            assert!((a - b - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_is_deterministic() {
        let p = toy();
        let st = OptimizerState::for_params(&p, 1e-3, 20.0);
        let g = vec![0.1; p.len()];
        assert_eq!(adam_step(&st, &p, &g).unwrap(), adam_step(&st, &p, &g).unwrap());
    }

    #[test]
    fn ema_rate_one_copies_online() {
        let mut t = toy();
        let o = init_params(&MlpSpec::new(2, vec![3], 1), 6);
        ema_update_in_place(&mut t, &o, 1.0).unwrap();
        assert_eq!(t, o);
    }

    #[test]
    fn ema_half_rate() {
        let mut t = toy();
        t.values.fill(0.0);
        let mut o = t.clone();
        o.values.fill(1.0);
        let r = ema_update(&t, &o, 0.5).unwrap();
        assert!(r.values.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn ema_contracts_geometrically() {
        let mut t = toy();
        let o = init_params(&MlpSpec::new(2, vec![3], 1), 99);
        let diff = |a: &ParamSet| {
            l2_norm(&a.values.iter().zip(&o.values).map(|(x, y)| x - y).collect::<Vec<_>>())
        };
        let d0 = diff(&t);
        let rate = 0.3;
        for n in 1..=10 {
            ema_update_in_place(&mut t, &o, rate).unwrap();
            let expected = d0 * (1.0 - rate).powi(n);
            assert!((diff(&t) - expected).abs() <= 1e-12 * d0.max(1.0));
        }
    }

    #[test]
    fn ema_rejects_layout_mismatch() {
        let t = toy();
        let o = init_params(&MlpSpec::new(2, vec![4], 1), 1);
        assert!(ema_update(&t, &o, 0.5).is_err());
    }
}
