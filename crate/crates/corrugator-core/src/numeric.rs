//! Arbitrary-precision scalars, small linear algebra, and randomized
//! sup-norm estimation.
//!
//! Every run owns a [`PrecisionContext`] fixing the working precision (in
//! decimal digits) and the seed of the deterministic sampler. [`Real`] wraps
//! an MPFR float and guarantees finiteness: constructors reject NaN and
//! infinities, and the arithmetic operators debug-assert that results stay
//! finite. Construction frequencies can exceed `1e19`, so nothing in this
//! crate ever round-trips through `f64` except for lossy exports.

use crate::error::{Error, Result};
use rug::float::Constant;
use rug::ops::{CompleteRound, Pow};
use rug::Float;
use std::cmp::Ordering;
use std::fmt;

/// Extra binary digits kept beyond the requested decimal precision.
const GUARD_BITS: u32 = 16;

/// log2(10), used to convert decimal digits to binary precision.
const LOG2_10: f64 = 3.321928094887362;

/// Minimal supported precision in decimal digits.
pub const MIN_DIGITS: u32 = 15;

/// Default number of random samples used by [`sup_norm_estimate`].
pub const DEFAULT_SUP_SAMPLES: u32 = 1000;

/// Default sampler seed used when a run does not choose one.
pub const DEFAULT_SEED: u64 = 0;

/// Working precision and sampling seed shared by a whole run.
#[derive(Debug, Clone)]
pub struct PrecisionContext {
    digits: u32,
    bits: u32,
    seed: u64,
}

/// Creates a context carrying `digits` decimal digits of working precision
/// (at least [`MIN_DIGITS`]) and the given sampler seed.
pub fn make_context(digits: u32, seed: u64) -> Result<PrecisionContext> {
    if digits < MIN_DIGITS {
        return Err(Error::config(format!(
            "precision must be at least {MIN_DIGITS} decimal digits, got {digits}"
        )));
    }
    if digits > 1_000_000 {
        return Err(Error::config(format!(
            "precision of {digits} decimal digits is out of range"
        )));
    }
    let bits = (digits as f64 * LOG2_10).ceil() as u32 + GUARD_BITS;
    Ok(PrecisionContext { digits, bits, seed })
}

impl PrecisionContext {
    /// Decimal digits requested at construction.
    pub fn digits(&self) -> u32 {
        self.digits
    }

    /// Binary working precision derived from the decimal request.
    pub fn bits(&self) -> u32 {
        self.bits
    }

    /// Seed for deterministic samplers derived from this context.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// A fresh deterministic generator seeded from this context. Every call
    /// returns an identical stream, so independent estimates are repeatable.
    pub fn rng(&self) -> Rng {
        Rng::new(self.seed)
    }

    /// Parses a decimal literal exactly at the working precision. Rejects
    /// text that does not form a finite number.
    pub fn real_from_str(&self, s: &str) -> Result<Real> {
        let trimmed = s.trim();
        let parsed = Float::parse(trimmed)
            .map_err(|e| Error::config(format!("invalid numeric literal {trimmed:?}: {e}")))?;
        Real::from_float(Float::with_val(self.bits, parsed))
    }

    /// Converts a finite `f64` to working precision (exact; binary64 values
    /// embed into any precision of 53 bits or more).
    pub fn real_from_f64(&self, v: f64) -> Result<Real> {
        if !v.is_finite() {
            return Err(Error::domain(format!("non-finite f64 {v} rejected")));
        }
        Real::from_float(Float::with_val(self.bits, v))
    }

    /// Converts an unsigned integer to working precision.
    pub fn real_from_u64(&self, v: u64) -> Real {
        Real(Float::with_val(self.bits, v))
    }

    /// Converts a signed integer to working precision.
    pub fn real_from_i64(&self, v: i64) -> Real {
        Real(Float::with_val(self.bits, v))
    }

    /// Zero at working precision.
    pub fn zero(&self) -> Real {
        self.real_from_u64(0)
    }

    /// One at working precision.
    pub fn one(&self) -> Real {
        self.real_from_u64(1)
    }

    /// π at working precision.
    pub fn pi(&self) -> Real {
        Real(Float::with_val(self.bits, Constant::Pi))
    }

    /// 2π at working precision.
    pub fn two_pi(&self) -> Real {
        let mut f = Float::with_val(self.bits, Constant::Pi);
        f <<= 1;
        Real(f)
    }
}

/// A finite arbitrary-precision real number.
#[derive(Clone)]
pub struct Real(Float);

impl Real {
    fn from_float(f: Float) -> Result<Real> {
        if !f.is_finite() {
            return Err(Error::domain(format!("non-finite value {f} rejected")));
        }
        Ok(Real(f))
    }

    fn lift(f: Float) -> Real {
        debug_assert!(f.is_finite(), "arithmetic produced non-finite value");
        Real(f)
    }

    /// Binary precision of this value.
    pub fn prec(&self) -> u32 {
        self.0.prec()
    }

    /// Nearest `f64` (lossy for precisions above 53 bits and for values
    /// outside the binary64 range). Intended for exports only.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64()
    }

    /// True if the value is exactly zero.
    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    /// Sign as an ordering against zero.
    pub fn sign(&self) -> Ordering {
        self.0.cmp0().expect("finite value has a sign")
    }

    /// Absolute value.
    pub fn abs(&self) -> Real {
        Real::lift(self.0.clone().abs())
    }

    /// Negation.
    pub fn neg(&self) -> Real {
        Real::lift((-&self.0).complete(self.0.prec()))
    }

    /// Square root; errors if the value is negative.
    pub fn sqrt(&self) -> Result<Real> {
        if self.sign() == Ordering::Less {
            return Err(Error::domain(format!(
                "square root of negative value {}",
                self
            )));
        }
        Ok(Real::lift(self.0.clone().sqrt()))
    }

    /// Reciprocal; errors if the value is zero.
    pub fn recip(&self) -> Result<Real> {
        if self.is_zero() {
            return Err(Error::domain("reciprocal of zero".to_string()));
        }
        Ok(Real::lift(self.0.clone().recip()))
    }

    /// Division that reports a zero divisor instead of panicking.
    pub fn try_div(&self, rhs: &Real) -> Result<Real> {
        if rhs.is_zero() {
            return Err(Error::domain("division by zero".to_string()));
        }
        Ok(self / rhs)
    }

    /// Sine (with full argument reduction at working precision).
    pub fn sin(&self) -> Real {
        Real::lift(self.0.clone().sin())
    }

    /// Cosine (with full argument reduction at working precision).
    pub fn cos(&self) -> Real {
        Real::lift(self.0.clone().cos())
    }

    /// Exponential.
    pub fn exp(&self) -> Real {
        Real::lift(self.0.clone().exp())
    }

    /// Exponential integral Ei (for negative arguments this equals
    /// minus the principal exponential integral E1 of the negated argument).
    pub fn exp_integral(&self) -> Real {
        Real::lift(self.0.clone().eint())
    }

    /// Integer power with a non-negative exponent.
    pub fn powi(&self, n: u32) -> Real {
        Real::lift((&self.0).pow(n).complete(self.0.prec()))
    }

    /// Natural logarithm. Errors on non-positive input.
    pub fn ln(&self) -> Result<Real> {
        if self.sign() != Ordering::Greater {
            return Err(Error::domain(format!("logarithm of non-positive {self}")));
        }
        Ok(Real::lift(self.0.clone().ln()))
    }

    /// Real power `self^e` for a positive base.
    pub fn pow(&self, e: &Real) -> Result<Real> {
        if self.sign() != Ordering::Greater {
            return Err(Error::domain(format!(
                "real exponent requires a positive base, got {self}"
            )));
        }
        Ok(Real::lift((&self.0).pow(&e.0).complete(self.0.prec())))
    }

    /// Pointwise minimum.
    pub fn min(&self, other: &Real) -> Real {
        if self <= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// Pointwise maximum.
    pub fn max(&self, other: &Real) -> Real {
        if self >= other {
            self.clone()
        } else {
            other.clone()
        }
    }

    /// Exact division by a power of two.
    pub fn div_pow2(&self, k: u32) -> Real {
        let mut f = self.0.clone();
        f >>= k;
        Real::lift(f)
    }

    /// Exact multiplication by a power of two.
    pub fn mul_pow2(&self, k: u32) -> Real {
        let mut f = self.0.clone();
        f <<= k;
        Real::lift(f)
    }

    /// Formats with `sig` significant decimal digits. The encoding is
    /// canonical (stable across runs): plain positional notation for
    /// moderate exponents, otherwise `d.dddde±k`.
    pub fn to_decimal_string(&self, sig: u32) -> String {
        let sig = sig.max(1) as usize;
        if self.0.is_zero() {
            return "0".to_string();
        }
        let (neg, digits, exp) = self.0.to_sign_string_exp(10, Some(sig));
        // `digits` is the mantissa with an implied leading "0."; `exp` is the
        // power of ten such that value = ±0.digits × 10^exp.
        let exp = exp.expect("nonzero finite value has an exponent");
        let digits = digits.trim_end_matches('0');
        let digits = if digits.is_empty() { "0" } else { digits };
        let sign = if neg { "-" } else { "" };
        let e10 = exp - 1; // exponent for d.ddd form
        let mut out = String::new();
        if (-5..=12).contains(&e10) {
            if exp <= 0 {
                // 0.00ddd
                out.push_str(sign);
                out.push_str("0.");
                for _ in 0..(-exp) {
                    out.push('0');
                }
                out.push_str(digits);
            } else if (exp as usize) >= digits.len() {
                // dddd00
                out.push_str(sign);
                out.push_str(digits);
                for _ in 0..(exp as usize - digits.len()) {
                    out.push('0');
                }
            } else {
                // dd.dd
                out.push_str(sign);
                out.push_str(&digits[..exp as usize]);
                out.push('.');
                out.push_str(&digits[exp as usize..]);
            }
        } else {
            out.push_str(sign);
            out.push_str(&digits[..1]);
            if digits.len() > 1 {
                out.push('.');
                out.push_str(&digits[1..]);
            }
            out.push('e');
            out.push_str(&e10.to_string());
        }
        out
    }

    /// Formats with enough digits to reconstruct the value exactly at the
    /// same binary precision.
    pub fn to_string_full(&self) -> String {
        let sig = (self.0.prec() as f64 / LOG2_10).ceil() as u32 + 2;
        self.to_decimal_string(sig)
    }
}

impl fmt::Display for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_decimal_string(17))
    }
}

impl fmt::Debug for Real {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Real({})", self.to_decimal_string(17))
    }
}

impl PartialEq for Real {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}

impl PartialOrd for Real {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        self.0.partial_cmp(&other.0)
    }
}

fn join_prec(a: &Real, b: &Real) -> u32 {
    a.0.prec().max(b.0.prec())
}

macro_rules! real_binop {
    ($trait:ident, $method:ident, $assign:tt) => {
        impl std::ops::$trait<&Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                let mut out = Float::with_val(join_prec(self, rhs), &self.0);
                out $assign &rhs.0;
                Real::lift(out)
            }
        }
        impl std::ops::$trait<Real> for Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                std::ops::$trait::$method(&self, &rhs)
            }
        }
        impl std::ops::$trait<&Real> for Real {
            type Output = Real;
            fn $method(self, rhs: &Real) -> Real {
                std::ops::$trait::$method(&self, rhs)
            }
        }
        impl std::ops::$trait<Real> for &Real {
            type Output = Real;
            fn $method(self, rhs: Real) -> Real {
                std::ops::$trait::$method(self, &rhs)
            }
        }
    };
}

real_binop!(Add, add, +=);
real_binop!(Sub, sub, -=);
real_binop!(Mul, mul, *=);

impl std::ops::Div<&Real> for &Real {
    type Output = Real;
    fn div(self, rhs: &Real) -> Real {
        assert!(!rhs.is_zero(), "division by zero (use try_div for fallible division)");
        let mut out = Float::with_val(join_prec(self, rhs), &self.0);
        out /= &rhs.0;
        Real::lift(out)
    }
}
impl std::ops::Div<Real> for Real {
    type Output = Real;
    fn div(self, rhs: Real) -> Real {
        (&self) / (&rhs)
    }
}
impl std::ops::Div<&Real> for Real {
    type Output = Real;
    fn div(self, rhs: &Real) -> Real {
        (&self) / rhs
    }
}
impl std::ops::Div<Real> for &Real {
    type Output = Real;
    fn div(self, rhs: Real) -> Real {
        self / (&rhs)
    }
}

impl std::ops::Neg for &Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real::neg(self)
    }
}
impl std::ops::Neg for Real {
    type Output = Real;
    fn neg(self) -> Real {
        Real::neg(&self)
    }
}

/// A point in the plane.
#[derive(Clone, Debug, PartialEq)]
pub struct Point {
    pub x: Real,
    pub y: Real,
}

impl Point {
    pub fn new(x: Real, y: Real) -> Point {
        Point { x, y }
    }
}

/// A 2-vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Vec2 {
    pub x: Real,
    pub y: Real,
}

impl Vec2 {
    pub fn new(x: Real, y: Real) -> Vec2 {
        Vec2 { x, y }
    }

    /// Euclidean norm.
    pub fn norm(&self) -> Real {
        (&(&self.x * &self.x) + &(&self.y * &self.y))
            .sqrt()
            .expect("sum of squares is non-negative")
    }

    /// Dot product.
    pub fn dot(&self, other: &Vec2) -> Real {
        &(&self.x * &other.x) + &(&self.y * &other.y)
    }

    /// Scalar multiple.
    pub fn scale(&self, s: &Real) -> Vec2 {
        Vec2::new(s * &self.x, s * &self.y)
    }

    /// Component-wise sum.
    pub fn plus(&self, other: &Vec2) -> Vec2 {
        Vec2::new(&self.x + &other.x, &self.y + &other.y)
    }

    /// Component-wise difference.
    pub fn minus(&self, other: &Vec2) -> Vec2 {
        Vec2::new(&self.x - &other.x, &self.y - &other.y)
    }

    /// Symmetric outer product `v ⊗ v`.
    pub fn outer_self(&self) -> Sym2 {
        Sym2 {
            xx: &self.x * &self.x,
            xy: &self.x * &self.y,
            yy: &self.y * &self.y,
        }
    }
}

/// A symmetric 2×2 matrix `[[xx, xy], [xy, yy]]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sym2 {
    pub xx: Real,
    pub xy: Real,
    pub yy: Real,
}

impl Sym2 {
    pub fn new(xx: Real, xy: Real, yy: Real) -> Sym2 {
        Sym2 { xx, xy, yy }
    }

    /// Diagonal matrix.
    pub fn diag(xx: Real, yy: Real) -> Sym2 {
        let zero = Float::with_val(xx.prec(), 0u32);
        Sym2 {
            xx,
            xy: Real(zero),
            yy,
        }
    }

    /// Frobenius norm `sqrt(xx² + 2·xy² + yy²)`.
    pub fn frobenius(&self) -> Real {
        let xy2 = (&self.xy * &self.xy).mul_pow2(1);
        let sum = &(&(&self.xx * &self.xx) + &xy2) + &(&self.yy * &self.yy);
        sum.sqrt().expect("sum of squares is non-negative")
    }

    /// Trace.
    pub fn trace(&self) -> Real {
        &self.xx + &self.yy
    }

    /// Smallest eigenvalue, `(tr - sqrt((xx-yy)² + 4·xy²)) / 2`.
    pub fn min_eigenvalue(&self) -> Real {
        let d = &self.xx - &self.yy;
        let disc = &(&d * &d) + &(&self.xy * &self.xy).mul_pow2(2);
        let root = disc.sqrt().expect("discriminant is non-negative");
        (&self.trace() - &root).div_pow2(1)
    }

    /// Component-wise sum.
    pub fn plus(&self, other: &Sym2) -> Sym2 {
        Sym2 {
            xx: &self.xx + &other.xx,
            xy: &self.xy + &other.xy,
            yy: &self.yy + &other.yy,
        }
    }

    /// Component-wise difference.
    pub fn minus(&self, other: &Sym2) -> Sym2 {
        Sym2 {
            xx: &self.xx - &other.xx,
            xy: &self.xy - &other.xy,
            yy: &self.yy - &other.yy,
        }
    }

    /// Scalar multiple.
    pub fn scale(&self, s: &Real) -> Sym2 {
        Sym2 {
            xx: s * &self.xx,
            xy: s * &self.xy,
            yy: s * &self.yy,
        }
    }
}

/// A general (not necessarily symmetric) 2×2 matrix, row major.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat2 {
    pub xx: Real,
    pub xy: Real,
    pub yx: Real,
    pub yy: Real,
}

impl Mat2 {
    /// Symmetric part `(M + Mᵀ) / 2`.
    pub fn sym(&self) -> Sym2 {
        Sym2 {
            xx: self.xx.clone(),
            xy: (&self.xy + &self.yx).div_pow2(1),
            yy: self.yy.clone(),
        }
    }
}

/// An axis-aligned rectangle `[x0, x1] × [y0, y1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Rect {
    pub x0: Real,
    pub x1: Real,
    pub y0: Real,
    pub y1: Real,
}

impl Rect {
    /// Validates that both intervals are non-degenerate.
    pub fn new(x0: Real, x1: Real, y0: Real, y1: Real) -> Result<Rect> {
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::config(format!(
                "degenerate rectangle [{x0}, {x1}] × [{y0}, {y1}]"
            )));
        }
        Ok(Rect { x0, x1, y0, y1 })
    }

    /// The square `[-half, half]²`.
    pub fn centered_square(half: &Real) -> Result<Rect> {
        Rect::new(half.neg(), half.clone(), half.neg(), half.clone())
    }

    /// Horizontal extent.
    pub fn width(&self) -> Real {
        &self.x1 - &self.x0
    }

    /// Vertical extent.
    pub fn height(&self) -> Real {
        &self.y1 - &self.y0
    }

    /// Outward inflation by `r ≥ 0` in every direction.
    pub fn inflate(&self, r: &Real) -> Result<Rect> {
        if r.sign() == Ordering::Less {
            return Err(Error::config("inflation radius must be non-negative"));
        }
        Rect::new(
            &self.x0 - r,
            &self.x1 + r,
            &self.y0 - r,
            &self.y1 + r,
        )
    }

    /// Inward inset by `r ≥ 0` in every direction; errors if the result
    /// degenerates.
    pub fn inset(&self, r: &Real) -> Result<Rect> {
        if r.sign() == Ordering::Less {
            return Err(Error::config("inset radius must be non-negative"));
        }
        Rect::new(
            &self.x0 + r,
            &self.x1 - r,
            &self.y0 + r,
            &self.y1 - r,
        )
    }

    /// Length of the diagonal.
    pub fn diameter(&self) -> Real {
        let w = self.width();
        let h = self.height();
        (&(&w * &w) + &(&h * &h))
            .sqrt()
            .expect("sum of squares is non-negative")
    }

    /// True if the point lies inside or on the boundary.
    pub fn contains(&self, p: &Point) -> bool {
        p.x >= self.x0 && p.x <= self.x1 && p.y >= self.y0 && p.y <= self.y1
    }
}

/// Deterministic counter-based generator (splitmix64). Chosen over external
/// generators so that sampled verification artifacts are byte-identical on
/// every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    /// Next raw 64-bit output.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform value in `[0, 1)` with 53 random bits, exact at any working
    /// precision of 53 bits or more.
    pub fn next_unit(&mut self, ctx: &PrecisionContext) -> Real {
        let u = self.next_u64() >> 11;
        ctx.real_from_u64(u).div_pow2(53)
    }

    /// Uniform value in `[lo, hi)`.
    pub fn next_in(&mut self, ctx: &PrecisionContext, lo: &Real, hi: &Real) -> Real {
        let t = self.next_unit(ctx);
        lo + &(&t * &(hi - lo))
    }

    /// Uniform point in the rectangle.
    pub fn next_point(&mut self, ctx: &PrecisionContext, rect: &Rect) -> Point {
        let x = self.next_in(ctx, &rect.x0, &rect.x1);
        let y = self.next_in(ctx, &rect.y0, &rect.y1);
        Point::new(x, y)
    }
}

/// Estimates the uniform norm of `|f|` over `rect` as the maximum over
/// `samples` points drawn from the context's deterministic sampler. The
/// estimate is a lower bound on the true sup; repeated calls with the same
/// context visit the same points.
pub fn sup_norm_estimate<F>(
    ctx: &PrecisionContext,
    rect: &Rect,
    samples: u32,
    mut f: F,
) -> Result<Real>
where
    F: FnMut(&Point) -> Result<Real>,
{
    if samples == 0 {
        return Err(Error::config("sup-norm estimation needs at least one sample"));
    }
    let mut rng = ctx.rng();
    let mut best: Option<Real> = None;
    for _ in 0..samples {
        let p = rng.next_point(ctx, rect);
        let v = f(&p)?.abs();
        best = Some(match best {
            None => v,
            Some(b) => b.max(&v),
        });
    }
    Ok(best.expect("at least one sample"))
}
