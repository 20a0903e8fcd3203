//! Flow-matching math: the linear interpolant, velocity algebra, corruption
//! schedules, both training losses, and the guided regression target.
//!
//! Everything here is a pure function on arrays; the trainer composes the
//! same formulas on the tape and tests pin the two routes against each other.

use crate::error::{Error, Result};
use crate::numeric::{Array, Rng};
use crate::scalar::{sigmoid, Scalar};

/// Lower clamp for sampled times and corruption levels.
pub const T_FLOOR: f64 = 1e-6;
/// Upper clamp: keeps the 1/(1-t) conversion bounded; the decode branch
/// owns t = 1.
pub const T_CEIL: f64 = 1.0 - 1e-3;

/// Logit-normal parameters: t = sigmoid(N(p_mean, p_std^2)).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScheduleParams<T> {
    pub p_mean: T,
    pub p_std: T,
}

impl<T: Scalar> ScheduleParams<T> {
    pub fn new(p_mean: T, p_std: T) -> Self {
        assert!(p_std > T::zero(), "P_std must be positive");
        ScheduleParams { p_mean, p_std }
    }
}

/// One corruption draw: state, targets, and the time that produced them.
#[derive(Clone, Debug)]
pub struct FlowSample<T> {
    pub x: Array<T>,
    pub eps: Array<T>,
    pub t: T,
    pub z: Array<T>,
    pub v: Array<T>,
}

/// Draw t from the logit-normal schedule, clamped inside (0, 1).
pub fn sample_time<T: Scalar>(sched: ScheduleParams<T>, rng: &mut Rng) -> T {
    let raw: T = rng.normal::<T>() * sched.p_std + sched.p_mean;
    clamp_unit(sigmoid(raw))
}

pub fn clamp_unit<T: Scalar>(t: T) -> T {
    t.max(T::of_f64(T_FLOOR)).min(T::of_f64(T_CEIL))
}

/// z = t·x + (1-t)·σ·ε
pub fn interpolate<T: Scalar>(x: &Array<T>, eps: &Array<T>, t: T, noise_scale: T) -> Result<Array<T>> {
    if x.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            op: "interpolate".into(),
            lhs: x.shape().to_vec(),
            rhs: eps.shape().to_vec(),
        });
    }
    Ok(x.zip_map(eps, |xv, ev| t * xv + (T::one() - t) * noise_scale * ev))
}

/// Velocity regression target. With `noise_in_velocity` (the default) the
/// noise scale multiplies ε in v as well as in z, keeping dz/dt = v exact.
pub fn velocity_target<T: Scalar>(
    x: &Array<T>,
    eps: &Array<T>,
    noise_scale: T,
    noise_in_velocity: bool,
) -> Array<T> {
    let s = if noise_in_velocity { noise_scale } else { T::one() };
    x.zip_map(eps, |xv, ev| xv - s * ev)
}

pub fn make_flow_sample<T: Scalar>(
    x: Array<T>,
    eps: Array<T>,
    t: T,
    noise_scale: T,
    noise_in_velocity: bool,
) -> Result<FlowSample<T>> {
    let z = interpolate(&x, &eps, t, noise_scale)?;
    let v = velocity_target(&x, &eps, noise_scale, noise_in_velocity);
    Ok(FlowSample { x, eps, t, z, v })
}

/// v = (x̂ - z) / (1 - t); errors out near the t = 1 singularity.
pub fn x_to_v<T: Scalar>(x_pred: &Array<T>, z: &Array<T>, t: T) -> Result<Array<T>> {
    if t > T::of_f64(1.0 - 1e-6) {
        return Err(Error::NearSingularTime { t: t.as_f64() });
    }
    if x_pred.shape() != z.shape() {
        return Err(Error::ShapeMismatch {
            op: "x_to_v".into(),
            lhs: x_pred.shape().to_vec(),
            rhs: z.shape().to_vec(),
        });
    }
    let inv = T::one() / (T::one() - t);
    Ok(x_pred.zip_map(z, |xp, zv| (xp - zv) * inv))
}

/// Inverse of [`x_to_v`]: x̂ = z + (1 - t)·v.
pub fn v_to_x<T: Scalar>(v: &Array<T>, z: &Array<T>, t: T) -> Array<T> {
    v.zip_map(z, |vv, zv| zv + (T::one() - t) * vv)
}

/// Mean over positions and channels of the squared difference.
pub fn mse_velocity_loss<T: Scalar>(v_pred: &Array<T>, v_target: &Array<T>) -> T {
    v_pred.mse(v_target)
}

/// Guided regression target: v + (1 - 1/ω)·(v_cond - v_uncond).
///
/// Inputs are plain arrays, i.e. already detached; gradient never flows
/// through the target.
pub fn cfg_target<T: Scalar>(
    v: &Array<T>,
    v_cond: &Array<T>,
    v_uncond: &Array<T>,
    omega: T,
) -> Result<Array<T>> {
    if omega <= T::zero() {
        return Err(Error::NonPositiveGuidance(omega.as_f64()));
    }
    let coef = T::one() - T::one() / omega;
    if coef == T::zero() {
        // ω = 1 reduces exactly (bit-identically) to the plain target.
        return Ok(v.clone());
    }
    let mut out = v.clone();
    for ((o, &c), &u) in out
        .data_mut()
        .iter_mut()
        .zip(v_cond.data())
        .zip(v_uncond.data())
    {
        *o = *o + coef * (c - u);
    }
    Ok(out)
}

/// Independent logit-normal corruption level per token position.
pub fn sample_decode_corruption<T: Scalar>(
    sched: ScheduleParams<T>,
    rng: &mut Rng,
    len: usize,
) -> Vec<T> {
    (0..len).map(|_| sample_time(sched, rng)).collect()
}

/// z̃ row i = p_i·x_i + (1-p_i)·σ·ε_i.
pub fn corrupt_per_token<T: Scalar>(
    x: &Array<T>,
    eps: &Array<T>,
    p: &[T],
    noise_scale: T,
) -> Array<T> {
    assert_eq!(x.shape(), eps.shape());
    assert_eq!(x.rows(), p.len());
    let mut out = x.clone();
    for (i, &pi) in p.iter().enumerate() {
        let er = eps.row(i);
        for (j, v) in out.row_mut(i).iter_mut().enumerate() {
            *v = pi * *v + (T::one() - pi) * noise_scale * er[j];
        }
    }
    out
}

/// Reference cross-entropy: mean over tokens of -log softmax(logits)[s_i].
pub fn cross_entropy<T: Scalar>(logits: &Array<T>, targets: &[usize]) -> T {
    assert_eq!(logits.rows(), targets.len());
    let mut acc = T::zero();
    for (i, &t) in targets.iter().enumerate() {
        let row = logits.row(i);
        acc += crate::numeric::array::logsumexp_row(row) - row[t];
    }
    acc / T::of_f64(targets.len() as f64)
}
