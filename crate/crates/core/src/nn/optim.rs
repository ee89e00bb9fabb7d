use super::model::{Gradients, ModelConfig, ModelParams};
use super::NnError;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-7;
pub const SGD_MOMENTUM: f32 = 0.9;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: ModelParams,
    pub v: ModelParams,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: &ModelConfig) -> Self {
        Self {
            m: ModelParams::zeros_like(config),
            v: ModelParams::zeros_like(config),
            t: 0,
        }
    }
}

fn check_layout(params: &ModelParams, grads: &Gradients) -> Result<(), NnError> {
    let same = params.layers.len() == grads.layers.len()
        && params
            .tensors()
            .zip(grads.tensors())
            .all(|(p, g)| p.shape() == g.shape());
    if same {
        Ok(())
    } else {
        Err(NnError::ShapeMismatch("gradients do not match parameters".into()))
    }
}

/// One bias-corrected Adam update in place.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut AdamState,
    lr: f32,
) -> Result<(), NnError> {
    check_layout(params, grads)?;
    check_layout(&state.m, grads)?;
    state.t += 1;
    let t = state.t as i32;
    let b1 = ADAM_BETA1 as f32;
    let b2 = ADAM_BETA2 as f32;
    let c1 = (1.0 - ADAM_BETA1.powi(t)) as f32;
    let c2 = (1.0 - ADAM_BETA2.powi(t)) as f32;
    let eps = ADAM_EPSILON as f32;
    for (((p, g), m), v) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.m.tensors_mut())
        .zip(state.v.tensors_mut())
    {
        for (((p, &g), m), v) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub velocity: ModelParams,
}

/// Heavy-ball momentum: `v = μv + g; p -= lr·v`.
pub fn sgd_momentum_step(
    params: &mut ModelParams,
    grads: &Gradients,
    state: &mut SgdState,
    lr: f32,
) -> Result<(), NnError> {
    check_layout(params, grads)?;
    for ((p, g), vel) in params
        .tensors_mut()
        .zip(grads.tensors())
        .zip(state.velocity.tensors_mut())
    {
        for ((p, &g), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.data_mut()) {
            *v = SGD_MOMENTUM * *v + g;
            *p -= lr * *v;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    SgdMomentum,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(Self::Adam),
            "sgd_momentum" | "sgd" => Ok(Self::SgdMomentum),
            other => Err(format!("unknown optimizer {other:?} (adam, sgd_momentum)")),
        }
    }
}

/// Optimizer plus its per-parameter state.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    SgdMomentum(SgdState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, config: &ModelConfig) -> Self {
        match kind {
            OptimizerKind::Adam => Self::Adam(AdamState::new(config)),
            OptimizerKind::SgdMomentum => Self::SgdMomentum(SgdState {
                velocity: ModelParams::zeros_like(config),
            }),
        }
    }

    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f32) -> Result<(), NnError> {
        match self {
            Self::Adam(s) => adam_step(params, grads, s, lr),
            Self::SgdMomentum(s) => sgd_momentum_step(params, grads, s, lr),
        }
    }
}
