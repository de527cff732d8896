//! Adam optimizer with bias correction.

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    /// State for a parameter list with the given element counts.
    pub fn new(param_sizes: &[usize]) -> Self {
        AdamState {
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    pub fn for_params(params: &[Tensor]) -> Self {
        AdamState::new(&params.iter().map(Tensor::len).collect::<Vec<_>>())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Standard Adam hyperparameters; the trigger/discriminator learning rates
/// live in the training configs, so `lr` is passed per call site.
pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

/// One Adam update over a parameter list, in place. Deterministic given
/// identical inputs and state.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    betas: (f64, f64),
    eps: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(
            "adam_step",
            format!(
                "{} params, {} grads, state for {}",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.len() != g.len() || p.len() != state.m[i].len() {
            return Err(Error::shape(
                "adam_step",
                format!("param {i}: {} values, grad {}, state {}", p.len(), g.len(), state.m[i].len()),
            ));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = betas;
    let corr1 = 1.0 - b1.powi(t);
    let corr2 = 1.0 - b2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for ((pv, &gv), (mv, vv)) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = b1 * *mv + (1.0 - b1) * gv;
            *vv = b2 * *vv + (1.0 - b2) * gv * gv;
            let m_hat = *mv / corr1;
            let v_hat = *vv / corr2;
            *pv -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
