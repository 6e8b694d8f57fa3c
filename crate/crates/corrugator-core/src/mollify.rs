//! Smoothing by convolution with a compactly supported radial bump kernel.
//!
//! The kernel is `(1/A) exp(-1/(1-|x|^2))` on the unit ball (zero outside),
//! scaled to width `l` as `(1/l^2) kernel(x/l)` so that its mass stays one.
//! Two evaluation routes are provided and kept independent so they can
//! cross-check each other: an exact moment expansion for polynomial fields,
//! and a positive-weight polar quadrature for arbitrary fields.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::field::{poly_field, Field, FieldRef, Poly, Session};
use crate::jet::{Axis, TJet};
use crate::numeric::{Point, PrecisionContext, Real};

/// Hard ceiling on quadrature refinement inside [`kernel_norms`].
const MAX_NORM_DOUBLINGS: u32 = 5;

/// Node count at which radial moments reach working accuracy; the moment
/// route never uses fewer nodes than this.
const MOMENT_MIN_NODES: u32 = 192;

/// Normalization constant of the unit bump kernel: the closed form
/// `pi * (1/e + Ei(-1))` of its integral over the unit ball.
pub fn kernel_normalization(ctx: &PrecisionContext) -> Real {
    let inv_e = ctx.one().neg().exp();
    let ei_minus_one = ctx.one().neg().exp_integral();
    &ctx.pi() * &(&inv_e + &ei_minus_one)
}

/// Unnormalized radial profile `exp(-1/(1-r^2))` for `0 <= r < 1`, zero for
/// `r >= 1`.
fn profile(r: &Real, ctx: &PrecisionContext) -> Real {
    let one = ctx.one();
    let s = &one - &(r * r);
    if s.sign() != std::cmp::Ordering::Greater {
        return ctx.zero();
    }
    match s.recip() {
        Ok(inv) => inv.neg().exp(),
        Err(_) => ctx.zero(),
    }
}

/// Value of the width-`l` kernel at `x`: `(1/(A l^2)) exp(-1/(1-|x/l|^2))`
/// inside the ball of radius `l`, zero outside. Requires `0 < l <= 1`.
pub fn kernel_value(x: &Point, l: &Real, ctx: &PrecisionContext) -> Result<Real> {
    if l.sign() != std::cmp::Ordering::Greater || l > &ctx.one() {
        return Err(Error::domain(format!(
            "kernel width {} must lie in (0, 1]",
            l.to_decimal_string(6)
        )));
    }
    let rho_sq = (&(&x.x * &x.x) + &(&x.y * &x.y)).try_div(&(l * l))?;
    let s = &ctx.one() - &rho_sq;
    if s.sign() != std::cmp::Ordering::Greater {
        return Ok(ctx.zero());
    }
    let bump = s.recip()?.neg().exp();
    let a = kernel_normalization(ctx);
    (&bump).try_div(&(&a * &(l * l)))
}

/// Nodes and weights of a quadrature rule on the unit interval.
#[derive(Debug, Clone)]
pub struct Quadrature {
    nodes: Vec<(Real, Real)>,
}

impl Quadrature {
    /// Read access to the `(node, weight)` pairs.
    pub fn nodes(&self) -> &[(Real, Real)] {
        &self.nodes
    }
}

/// Legendre polynomial `P_n` and its derivative at `x`, by the three-term
/// recurrence.
fn legendre_pair(n: u32, x: &Real, ctx: &PrecisionContext) -> (Real, Real) {
    let mut p_prev = ctx.one();
    let mut p = x.clone();
    for k in 2..=n {
        let k_r = ctx.real_from_u64(u64::from(k));
        let a = ctx.real_from_u64(u64::from(2 * k - 1));
        let b = ctx.real_from_u64(u64::from(k - 1));
        let next = (&(&(&a * x) * &p) - &(&b * &p_prev)) / &k_r;
        p_prev = p;
        p = next;
    }
    let n_r = ctx.real_from_u64(u64::from(n));
    let denom = &(x * x) - &ctx.one();
    let dp = (&n_r * &(&(x * &p) - &p_prev)) / &denom;
    (p, dp)
}

/// Gauss-Legendre rule with `n` nodes, mapped from `[-1, 1]` to `[0, 1]`.
pub fn gauss_legendre_unit(n: u32, ctx: &PrecisionContext) -> Result<Quadrature> {
    if !(2..=100_000).contains(&n) {
        return Err(Error::config(format!(
            "quadrature node count {n} must lie in [2, 100000]"
        )));
    }
    let eps = ctx
        .real_from_u64(10)
        .powi(ctx.digits() + 5)
        .recip()
        .expect("power of ten is nonzero");
    let half = ctx.one().div_pow2(1);
    let mut nodes = Vec::with_capacity(n as usize);
    for i in 0..n {
        let angle = std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5);
        let mut x = ctx.real_from_f64(angle.cos())?;
        let mut converged = false;
        for _ in 0..100 {
            let (p, dp) = legendre_pair(n, &x, ctx);
            let dx = p.try_div(&dp)?;
            x = &x - &dx;
            if dx.abs() <= eps {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::verification(format!(
                "Legendre node {i} of {n} did not converge"
            )));
        }
        let (_, dp) = legendre_pair(n, &x, ctx);
        let one_minus_sq = &ctx.one() - &(&x * &x);
        let w = ctx
            .real_from_u64(2)
            .try_div(&(&one_minus_sq * &(&dp * &dp)))?;
        let r = (&x + &ctx.one()) * &half;
        nodes.push((r, w.div_pow2(1)));
    }
    Ok(Quadrature { nodes })
}

static QUAD_CACHE: OnceLock<Mutex<HashMap<(u32, u32), Arc<Quadrature>>>> = OnceLock::new();

/// Gauss-Legendre rule served from a process-wide cache keyed by working
/// precision and node count; rules are deterministic, so sharing is sound.
pub fn gauss_legendre_cached(n: u32, ctx: &PrecisionContext) -> Result<Arc<Quadrature>> {
    let cache = QUAD_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (ctx.bits(), n);
    if let Some(q) = cache.lock().expect("quadrature cache poisoned").get(&key) {
        return Ok(q.clone());
    }
    let q = Arc::new(gauss_legendre_unit(n, ctx)?);
    cache
        .lock()
        .expect("quadrature cache poisoned")
        .insert(key, q.clone());
    Ok(q)
}

/// Pointwise magnitudes of the kernel and its first three derivative tensors
/// at radius `r`, including the `1/A` normalization passed as `inv_a`.
fn derivative_magnitudes(r: &Real, inv_a: &Real, ctx: &PrecisionContext) -> Result<[Real; 4]> {
    let one = ctx.one();
    let s = &one - &(r * r);
    let s2 = &s * &s;
    let s3 = &s2 * &s;
    let s4 = &s3 * &s;
    let g = inv_a * &s.recip()?.neg().exp();
    let u1 = (r.mul_pow2(1).neg()).try_div(&s2)?;
    let u2 = (&(s.mul_pow2(1)) + &(r * r).mul_pow2(3)).neg().try_div(&s3)?;
    let u3 = &(&ctx.real_from_u64(24) * r).neg().try_div(&s3)?
        - &(&ctx.real_from_u64(48) * &(&(r * r) * r)).try_div(&s4)?;
    let g1 = &u1 * &g;
    let g2 = &(&u2 + &(&u1 * &u1)) * &g;
    let g3 = &(&(&u3 + &(&ctx.real_from_u64(3) * &(&u1 * &u2))) + &(&(&u1 * &u1) * &u1)) * &g;
    let g1_over_r = (&g1).try_div(r)?;
    let n2 = (&(&g2 * &g2) + &(&g1_over_r * &g1_over_r)).sqrt()?;
    let mixed = (&(&g2 * r) - &g1).try_div(&(r * r))?;
    let n3 = (&(&g3 * &g3) + &(&ctx.real_from_u64(3) * &(&mixed * &mixed))).sqrt()?;
    Ok([g, g1.abs(), n2, n3])
}

/// Integrals over the plane of the kernel and the Frobenius magnitudes of its
/// first three derivative tensors, at one quadrature resolution.
fn norms_at(n: u32, ctx: &PrecisionContext) -> Result<[Real; 4]> {
    let quad = gauss_legendre_cached(n, ctx)?;
    let inv_a = kernel_normalization(ctx).recip()?;
    let mut sums = [ctx.zero(), ctx.zero(), ctx.zero(), ctx.zero()];
    for (r, w) in quad.nodes() {
        let mags = derivative_magnitudes(r, &inv_a, ctx)?;
        let wr = w * r;
        for (sum, m) in sums.iter_mut().zip(mags.iter()) {
            *sum = &*sum + &(&wr * m);
        }
    }
    let two_pi = ctx.two_pi();
    Ok(sums.map(|s| &two_pi * &s))
}

/// `L^1` norms of the kernel and of its first three derivative tensors,
/// computed with a radial Gauss-Legendre rule starting at `quadrature_n`
/// nodes and doubled until two successive resolutions agree to `tol`.
/// The first entry is the kernel mass and must come out as one.
pub fn kernel_norms(quadrature_n: u32, tol: &Real, ctx: &PrecisionContext) -> Result<[Real; 4]> {
    if quadrature_n < 8 {
        return Err(Error::config(format!(
            "kernel norm quadrature needs at least 8 nodes, got {quadrature_n}"
        )));
    }
    if tol.sign() != std::cmp::Ordering::Greater {
        return Err(Error::config("kernel norm tolerance must be positive"));
    }
    let mut n = quadrature_n;
    let mut prev = norms_at(n, ctx)?;
    for _ in 0..MAX_NORM_DOUBLINGS {
        n *= 2;
        let next = norms_at(n, ctx)?;
        let mut settled = true;
        for (a, b) in prev.iter().zip(next.iter()) {
            let scale = ctx.one().max(&b.abs());
            if (a - b).abs() > &*tol * &scale {
                settled = false;
                break;
            }
        }
        if settled {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::verification(format!(
        "kernel norm quadrature did not settle to the requested tolerance by {n} nodes"
    )))
}

/// Radial moment `R_n = integral of r^n exp(-1/(1-r^2)) over [0, 1]`,
/// without the normalization factor.
pub fn radial_moment(n: u32, quad: &Quadrature, ctx: &PrecisionContext) -> Real {
    let mut sum = ctx.zero();
    for (r, w) in quad.nodes() {
        sum = &sum + &(&(w * &r.powi(n)) * &profile(r, ctx));
    }
    sum
}

/// Double factorial as a working-precision number; arguments below two give
/// one.
fn double_factorial(n: i64, ctx: &PrecisionContext) -> Real {
    let mut out = ctx.one();
    let mut k = n;
    while k > 1 {
        out = &out * &ctx.real_from_i64(k);
        k -= 2;
    }
    out
}

/// Moment of the unit kernel against the monomial `x^a y^b`; zero whenever
/// either exponent is odd.
pub fn moment_coefficient(
    a: u32,
    b: u32,
    quad: &Quadrature,
    ctx: &PrecisionContext,
) -> Result<Real> {
    if a % 2 == 1 || b % 2 == 1 {
        return Ok(ctx.zero());
    }
    let angular = (&ctx.two_pi()
        * &(&double_factorial(i64::from(a) - 1, ctx) * &double_factorial(i64::from(b) - 1, ctx)))
    .try_div(&double_factorial(i64::from(a + b), ctx))?;
    let radial = radial_moment(a + b + 1, quad, ctx);
    (&angular * &radial).try_div(&kernel_normalization(ctx))
}

/// Factorial as a working-precision number.
fn factorial(n: u32, ctx: &PrecisionContext) -> Real {
    let mut out = ctx.one();
    for k in 2..=n {
        out = &out * &ctx.real_from_u64(u64::from(k));
    }
    out
}

/// Exact moment-expansion mollification of a polynomial at width `l`.
///
/// Smoothing a polynomial is again a polynomial: the result adds to `p` the
/// even partial derivatives weighted by kernel moments, so constants and
/// linear fields pass through unchanged by construction.
pub fn mollify_poly(
    p: &Poly,
    l: &Real,
    quad: &Quadrature,
    ctx: &PrecisionContext,
) -> Result<Poly> {
    let deg = p.degree();
    let mut out = p.clone();
    let mut x_derivs: Vec<Poly> = vec![p.clone()];
    for a in (0..=deg).step_by(2) {
        if a >= 2 {
            let prev = &x_derivs[(a as usize / 2) - 1];
            let stepped = prev.partial(Axis::X, ctx).partial(Axis::X, ctx);
            x_derivs.push(stepped);
        }
        let base = &x_derivs[a as usize / 2];
        let mut d = base.clone();
        let mut b = 0u32;
        loop {
            if a + b > deg {
                break;
            }
            if (a, b) != (0, 0) {
                let m = moment_coefficient(a, b, quad, ctx)?;
                if !m.is_zero() {
                    let coeff = (&m * &l.powi(a + b))
                        .try_div(&(&factorial(a, ctx) * &factorial(b, ctx)))?;
                    out = out.plus(&d.scaled(&coeff));
                }
            }
            b += 2;
            if a + b > deg {
                break;
            }
            d = d.partial(Axis::Y, ctx).partial(Axis::Y, ctx);
        }
    }
    Ok(out)
}

/// Field node that evaluates the convolution of an arbitrary inner field
/// with the width-`l` kernel by positive-weight polar quadrature.
///
/// Offsets and weights are frozen at construction; the weights are
/// renormalized by the discrete kernel mass so constants are reproduced
/// exactly. Each evaluation opens a fresh session per quadrature point, since
/// jet caches are tied to one base point.
pub struct MollifiedField {
    inner: FieldRef,
    offsets: Vec<(Real, Real, Real)>,
}

impl MollifiedField {
    /// Builds the quadrature-backed smoothing of `inner` at width `l` with
    /// `radial_n` Gauss-Legendre nodes and `angular_n` equispaced angles.
    pub fn new(
        inner: FieldRef,
        l: &Real,
        radial_n: u32,
        angular_n: u32,
        ctx: &PrecisionContext,
    ) -> Result<MollifiedField> {
        if angular_n < 4 {
            return Err(Error::config(format!(
                "angular node count {angular_n} must be at least 4"
            )));
        }
        let quad = gauss_legendre_cached(radial_n, ctx)?;
        let mut radial: Vec<(Real, Real)> = Vec::with_capacity(quad.nodes().len());
        let mut mass = ctx.zero();
        for (r, w) in quad.nodes() {
            let weight = &(w * r) * &profile(r, ctx);
            mass = &mass + &weight;
            radial.push((r.clone(), weight));
        }
        let total = &mass * &ctx.real_from_u64(u64::from(angular_n));
        let mut offsets = Vec::with_capacity(radial.len() * angular_n as usize);
        for (r, weight) in &radial {
            let w_hat = weight.try_div(&total)?;
            let lr = l * r;
            for j in 0..angular_n {
                let theta = (&ctx.two_pi() * &ctx.real_from_u64(u64::from(j)))
                    .try_div(&ctx.real_from_u64(u64::from(angular_n)))?;
                offsets.push((&lr * &theta.cos(), &lr * &theta.sin(), w_hat.clone()));
            }
        }
        Ok(MollifiedField { inner, offsets })
    }
}

impl Field for MollifiedField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let ctx = sess.ctx().clone();
        let p = sess.point().clone();
        let mut acc = TJet::constant(ctx.zero(), order, &ctx);
        for (dx, dy, w) in &self.offsets {
            let q = Point::new(&p.x - dx, &p.y - dy);
            let mut inner_sess = Session::new(&ctx, &q);
            let jet = inner_sess.eval(&self.inner, order)?;
            acc = acc.add(&jet.scale(w));
        }
        Ok(acc)
    }
}

/// Which evaluation route [`mollify`] should take.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MollifyMode {
    /// Moment expansion for polynomial fields, quadrature otherwise.
    Auto,
    /// Exact moment expansion; fails on non-polynomial fields.
    Moments,
    /// Polar quadrature regardless of the field kind.
    Quadrature,
}

/// Tunable knobs for [`mollify`].
#[derive(Debug, Clone)]
pub struct MollifyParams {
    /// Evaluation route.
    pub mode: MollifyMode,
    /// Radial Gauss-Legendre node count.
    pub quadrature_n: u32,
    /// Equispaced angular node count for the quadrature route.
    pub angular_n: u32,
}

impl Default for MollifyParams {
    fn default() -> MollifyParams {
        MollifyParams {
            mode: MollifyMode::Auto,
            quadrature_n: 48,
            angular_n: 64,
        }
    }
}

/// Convolves `f` with the width-`l` kernel. The width must stay strictly
/// below `margin`, the distance by which the domain of `f` exceeds the
/// region where the smoothed field will be used.
pub fn mollify(
    f: &FieldRef,
    l: &Real,
    margin: &Real,
    params: &MollifyParams,
    ctx: &PrecisionContext,
) -> Result<FieldRef> {
    if l.sign() != std::cmp::Ordering::Greater {
        return Err(Error::domain(format!(
            "smoothing width {} must be positive",
            l.to_decimal_string(6)
        )));
    }
    if l >= margin {
        return Err(Error::domain(format!(
            "smoothing width {} must stay below the domain margin {}",
            l.to_decimal_string(6),
            margin.to_decimal_string(6)
        )));
    }
    let use_moments = match params.mode {
        MollifyMode::Moments => {
            if f.as_poly().is_none() {
                return Err(Error::config(
                    "moment-expansion smoothing needs a polynomial field",
                ));
            }
            true
        }
        MollifyMode::Auto => f.as_poly().is_some(),
        MollifyMode::Quadrature => false,
    };
    if use_moments {
        let p = f.as_poly().expect("checked above");
        let quad = gauss_legendre_cached(params.quadrature_n.max(MOMENT_MIN_NODES), ctx)?;
        Ok(poly_field(mollify_poly(p, l, &quad, ctx)?))
    } else {
        Ok(Arc::new(MollifiedField::new(
            f.clone(),
            l,
            params.quadrature_n,
            params.angular_n,
            ctx,
        )?))
    }
}
