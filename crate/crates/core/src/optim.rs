//! Parameter-update rules and learning-rate scheduling.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::arith;
use crate::param::ParamSet;
use crate::tensor::{lit, Elem, Tensor};

/// Adam hyper-parameters.
#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied directly to the parameter.
    pub weight_decay: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0 }
    }
}

/// Per-parameter first/second moment estimates plus the shared step counter.
#[derive(Debug, Clone)]
pub struct AdamState<E: Elem> {
    pub m: Vec<Tensor<E>>,
    pub v: Vec<Tensor<E>>,
    /// Completed steps; incremented by exactly 1 per `adam_step`.
    pub step: u64,
}

impl<E: Elem> AdamState<E> {
    pub fn new(params: &ParamSet<E>) -> Self {
        let zeros: Vec<Tensor<E>> =
            params.iter().map(|p| Tensor::zeros(p.value.shape()).expect("param shape")).collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// Standard bias-corrected Adam with decoupled weight decay. Gradients are
/// read from each parameter's accumulated `grad` buffer; a non-finite
/// gradient fails the step naming the parameter.
pub fn adam_step<E: Elem>(
    params: &mut ParamSet<E>,
    state: &mut AdamState<E>,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!("adam_step: lr must be > 0, got {lr}")));
    }
    check_finite_grads(params)?;
    state.step += 1;
    let t = state.step as i32;
    let beta1 = lit::<E>(hp.beta1);
    let beta2 = lit::<E>(hp.beta2);
    let eps = lit::<E>(hp.eps);
    let lr_e = lit::<E>(lr);
    let decay = lit::<E>(lr * hp.weight_decay);
    let bc1 = (E::one() - beta1.powi(t)).recip();
    let bc2 = (E::one() - beta2.powi(t)).recip();
    for (i, p) in params.iter_mut().enumerate() {
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for ((pv, &g), (mv, vv)) in
            p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mv = beta1 * *mv + (E::one() - beta1) * g;
            *vv = beta2 * *vv + (E::one() - beta2) * g * g;
            let m_hat = *mv * bc1;
            let v_hat = *vv * bc2;
            *pv = *pv - lr_e * m_hat / (v_hat.sqrt() + eps) - decay * *pv;
        }
    }
    Ok(())
}

/// Per-parameter velocity buffers for SGD with momentum.
#[derive(Debug, Clone)]
pub struct SgdState<E: Elem> {
    pub velocity: Vec<Tensor<E>>,
}

impl<E: Elem> SgdState<E> {
    pub fn new(params: &ParamSet<E>) -> Self {
        SgdState {
            velocity: params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()).expect("param shape"))
                .collect(),
        }
    }
}

/// `v <- momentum * v + g; p <- p - lr * v`.
pub fn sgd_momentum_step<E: Elem>(
    params: &mut ParamSet<E>,
    state: &mut SgdState<E>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    if lr.is_nan() || lr <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "sgd_momentum_step: lr must be > 0, got {lr}"
        )));
    }
    check_finite_grads(params)?;
    let mu = lit::<E>(momentum);
    let lr_e = lit::<E>(lr);
    for (i, p) in params.iter_mut().enumerate() {
        let vel = state.velocity[i].data_mut();
        for ((pv, &g), vv) in p.value.data_mut().iter_mut().zip(p.grad.data()).zip(vel.iter_mut())
        {
            *vv = mu * *vv + g;
            *pv = *pv - lr_e * *vv;
        }
    }
    Ok(())
}

fn check_finite_grads<E: Elem>(params: &ParamSet<E>) -> Result<()> {
    for p in params.iter() {
        if !p.grad.is_finite() {
            return Err(Error::NonFiniteGradient { name: p.name.clone() });
        }
    }
    Ok(())
}

/// Scales all gradients by `max_norm / norm` when the global L2 norm exceeds
/// `max_norm`; returns the scale applied (1 otherwise, including for all-zero
/// gradients). Per-parameter square sums are folded in name order, so the
/// result does not depend on parameter enumeration order.
pub fn clip_global_norm<E: Elem>(params: &mut ParamSet<E>, max_norm: f64) -> Result<E> {
    if max_norm.is_nan() || max_norm <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "clip_global_norm: max_norm must be > 0, got {max_norm}"
        )));
    }
    let mut partials: Vec<(&str, E)> =
        params.iter().map(|p| (p.name.as_str(), arith::sum_sq(p.grad.data()))).collect();
    partials.sort_by(|a, b| a.0.cmp(b.0));
    let mut total = E::zero();
    for (_, sq) in &partials {
        total = total + *sq;
    }
    let norm = total.sqrt();
    let max = lit::<E>(max_norm);
    if norm <= max || norm == E::zero() {
        return Ok(E::one());
    }
    let scale = max / norm;
    for p in params.iter_mut() {
        for g in p.grad.data_mut() {
            *g = *g * scale;
        }
    }
    Ok(scale)
}

/// Learning-rate schedule kind, as it appears in run configuration files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Constant,
    StepDecay { factor: f64, every_n_epochs: u64 },
}

/// A schedule bound to its base learning rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub kind: ScheduleKind,
    pub base_lr: f64,
}

impl Schedule {
    pub fn constant(base_lr: f64) -> Self {
        Schedule { kind: ScheduleKind::Constant, base_lr }
    }

    /// Learning rate in effect for `epoch` (0-based).
    pub fn lr_at(&self, epoch: u64) -> f64 {
        match self.kind {
            ScheduleKind::Constant => self.base_lr,
            ScheduleKind::StepDecay { factor, every_n_epochs } => {
                self.base_lr * factor.powi((epoch / every_n_epochs.max(1)) as i32)
            }
        }
    }
}
