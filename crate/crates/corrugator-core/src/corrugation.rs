//! Oscillation profiles and the single corrugation step.
//!
//! The step perturbs a pair `(v, w)` along one unit direction `η` at
//! frequency `λ`:
//!
//! ```text
//! v_λ = v + (1/λ)·V(x, λ x·η),      V(x,t) = (a(x)/π)·sin(2πt),
//! w_λ = w − (1/λ)·V(x, λ x·η)·∇v + (1/λ)·W(x, λ x·η)·η,
//!                                    W(x,t) = −(a(x)²/4π)·sin(4πt).
//! ```
//!
//! The profile pair satisfies `½(∂tV)² + ∂tW = a²` exactly, which is what
//! removes `a²·η⊗η` from the defect up to an explicitly bounded error. The
//! step is built as a field graph (so every later derivative comes from
//! jet arithmetic, not symbolic expansion), and this module also evaluates
//! every pointwise error bound the step guarantees — the defect-change
//! bound and the perturbation bounds on `v`, `w`, and their first two
//! derivative levels.

use crate::error::{Error, Result};
use crate::field::{
    add, coord_x, coord_y, field_jet, mul, partial, powi, scale, sin, sub, FieldRef, VecField,
};
use crate::jet::{Axis, Jet};
use crate::numeric::{Point, PrecisionContext, Real, Vec2};
use std::cmp::Ordering;

/// Parameters of one corrugation step.
#[derive(Clone)]
pub struct StepParams {
    /// Amplitude field `a` (non-negative on the working domain).
    pub amplitude: FieldRef,
    /// Unit direction `η`.
    pub direction: Vec2,
    /// Frequency `λ > 0`.
    pub lambda: Real,
}

/// Values of the oscillation profiles and their derivatives at one `(x, t)`.
pub struct ProfileValues {
    /// `V = (a/π)·sin(2πt)`.
    pub v: Real,
    /// `∂tV = 2a·cos(2πt)`.
    pub v_t: Real,
    /// `∇ₓV = (∇a/π)·sin(2πt)`.
    pub v_x: Vec2,
    /// `W = −(a²/4π)·sin(4πt)`.
    pub w: Real,
    /// `∂tW = −a²·cos(4πt)`.
    pub w_t: Real,
    /// `∇ₓW = −(a·∇a/2π)·sin(4πt)`.
    pub w_x: Vec2,
}

/// Evaluates both profiles and their derivatives at amplitude value `a`
/// with amplitude gradient `grad_a`, at phase `t`.
pub fn profiles(a: &Real, grad_a: &Vec2, t: &Real, ctx: &PrecisionContext) -> ProfileValues {
    let two_pi_t = &ctx.two_pi() * t;
    let s2 = two_pi_t.sin();
    let c2 = two_pi_t.cos();
    let four_pi_t = two_pi_t.mul_pow2(1);
    let s4 = four_pi_t.sin();
    let c4 = four_pi_t.cos();
    let inv_pi = ctx.pi().recip().expect("π > 0");
    let a2 = a * a;
    ProfileValues {
        v: &(a * &inv_pi) * &s2,
        v_t: (a * &c2).mul_pow2(1),
        v_x: grad_a.scale(&(&inv_pi * &s2)),
        w: (&a2 * &(&inv_pi * &s4)).div_pow2(2).neg(),
        w_t: (&a2 * &c4).neg(),
        w_x: grad_a.scale(&(&(a * &(&inv_pi * &s4)).div_pow2(1)).neg()),
    }
}

fn check_params(p: &StepParams, ctx: &PrecisionContext) -> Result<()> {
    if p.lambda.sign() != Ordering::Greater {
        return Err(Error::config(format!(
            "corrugation frequency must be positive, got {}",
            p.lambda
        )));
    }
    let norm_err = (&p.direction.norm() - &ctx.one()).abs();
    if norm_err > ctx.real_from_f64(1e-6)? {
        return Err(Error::config(format!(
            "corrugation direction must be a unit vector, |η| − 1 = {norm_err}"
        )));
    }
    Ok(())
}

/// Applies one corrugation step to `(v, w)`, returning the new pair as a
/// field graph that shares `v`, `w`, and the amplitude as subgraphs.
pub fn one_step(
    v: &FieldRef,
    w: &VecField,
    p: &StepParams,
    ctx: &PrecisionContext,
) -> Result<(FieldRef, VecField)> {
    check_params(p, ctx)?;
    // Phase line x·η and the two oscillations.
    let t_lin = add(
        scale(p.direction.x.clone(), coord_x()),
        scale(p.direction.y.clone(), coord_y()),
    );
    let two_pi_lambda = &ctx.two_pi() * &p.lambda;
    let s2 = sin(scale(two_pi_lambda.clone(), t_lin.clone()));
    let s4 = sin(scale(two_pi_lambda.mul_pow2(1), t_lin));
    // (1/λ)V = a/(λπ)·sin(2πλ x·η), shared by v_λ and both components of w_λ.
    let inv_lambda_pi = (&p.lambda * &ctx.pi()).recip()?;
    let v_osc = scale(inv_lambda_pi, mul(p.amplitude.clone(), s2));
    let v_new = add(v.clone(), v_osc.clone());
    // −(1/λ)W = a²/(4πλ)·sin(4πλ x·η).
    let inv_4pi_lambda = (&p.lambda * &ctx.pi()).mul_pow2(2).recip()?;
    let w_osc = scale(inv_4pi_lambda, mul(powi(p.amplitude.clone(), 2), s4));
    let vx = partial(v.clone(), Axis::X);
    let vy = partial(v.clone(), Axis::Y);
    let w1 = sub(
        w[0].clone(),
        add(
            mul(v_osc.clone(), vx),
            scale(p.direction.x.clone(), w_osc.clone()),
        ),
    );
    let w2 = sub(
        w[1].clone(),
        add(mul(v_osc, vy), scale(p.direction.y.clone(), w_osc)),
    );
    Ok((v_new, [w1, w2]))
}

/// Evaluates the pointwise bound on the defect discrepancy of one step at
/// `pt`:
///
/// ```text
/// (1/λ)·(a·|∇a|/2π + a·|∇²v|/π) + |∇a|²/(2λ²π²)
/// ```
///
/// where `a` is the step amplitude and `v` the scalar field *before* the
/// step. The measured `|new defect − (old defect − a²·η⊗η)|` never exceeds
/// this value.
pub fn step_error_bound(
    v: &FieldRef,
    p: &StepParams,
    pt: &Point,
    ctx: &PrecisionContext,
) -> Result<Real> {
    let a_jet = field_jet(&p.amplitude, pt, 1, ctx)?;
    let v_jet = field_jet(v, pt, 2, ctx)?;
    let a = a_jet.value.abs();
    let na = a_jet.gradient()?.norm();
    let hv = v_jet.hessian()?.frobenius();
    let inv_pi = ctx.pi().recip()?;
    let inv_lambda = p.lambda.recip()?;
    let term1 = &(&a * &na) * &inv_pi.div_pow2(1);
    let term2 = &(&a * &hv) * &inv_pi;
    let term3 = (&(&na * &na) * &(&inv_pi * &inv_pi)).div_pow2(1);
    Ok(&(&inv_lambda * &(&term1 + &term2)) + &(&(&inv_lambda * &inv_lambda) * &term3))
}

/// Bound on `|v_λ − v|` at a point: `a/(λπ)`.
pub fn bound_v_change(a: &Jet, lambda: &Real, ctx: &PrecisionContext) -> Result<Real> {
    let inv_lambda_pi = (lambda * &ctx.pi()).recip()?;
    Ok(&a.value.abs() * &inv_lambda_pi)
}

/// Bound on `|w_λ − w|` at a point: `(a/λπ)·(|∇v| + a/4)`.
pub fn bound_w_change(a: &Jet, v: &Jet, lambda: &Real, ctx: &PrecisionContext) -> Result<Real> {
    let av = a.value.abs();
    let nv = v.gradient()?.norm();
    let inv_lambda_pi = (lambda * &ctx.pi()).recip()?;
    Ok(&(&av * &inv_lambda_pi) * &(&nv + &av.div_pow2(2)))
}

/// Bound on `|∇v_λ − ∇v|` at a point: `|∇a|/(λπ) + 2a`.
pub fn bound_grad_v_change(a: &Jet, lambda: &Real, ctx: &PrecisionContext) -> Result<Real> {
    let na = a.gradient()?.norm();
    let inv_lambda_pi = (lambda * &ctx.pi()).recip()?;
    Ok(&(&na * &inv_lambda_pi) + &a.value.abs().mul_pow2(1))
}

/// Bound on `|∇w_λ − ∇w|` at a point:
/// `2a|∇v| + a² + (1/λ)(|∇v||∇a|/π + a|∇²v|/π + a|∇a|/2π)`.
pub fn bound_grad_w_change(
    a: &Jet,
    v: &Jet,
    lambda: &Real,
    ctx: &PrecisionContext,
) -> Result<Real> {
    let av = a.value.abs();
    let na = a.gradient()?.norm();
    let nv = v.gradient()?.norm();
    let hv = v.hessian()?.frobenius();
    let inv_pi = ctx.pi().recip()?;
    let inv_lambda = lambda.recip()?;
    let leading = &(&av * &nv).mul_pow2(1) + &(&av * &av);
    let tail = &(&(&nv * &na) * &inv_pi)
        + &(&(&(&av * &hv) * &inv_pi) + &(&(&av * &na) * &inv_pi.div_pow2(1)));
    Ok(&leading + &(&inv_lambda * &tail))
}

/// Bound on `|∇²v_λ − ∇²v|` at a point: `|∇²a|/(λπ) + 4|∇a| + 4πλa`.
pub fn bound_hess_v_change(a: &Jet, lambda: &Real, ctx: &PrecisionContext) -> Result<Real> {
    let ha = a.hessian()?.frobenius();
    let na = a.gradient()?.norm();
    let av = a.value.abs();
    let inv_lambda_pi = (lambda * &ctx.pi()).recip()?;
    let four = ctx.real_from_u64(4);
    Ok(&(&(&ha * &inv_lambda_pi) + &(&four * &na)) + &(&(&four * &(&ctx.pi() * lambda)) * &av))
}
