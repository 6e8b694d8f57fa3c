//! Truncated bivariate Taylor expansions ("jets").
//!
//! [`TJet`] stores the Taylor coefficients `∂_x^i ∂_y^j f / (i!·j!)` of a
//! scalar function at a point, for all `i + j ≤ order` with `order ≤ 4`.
//! Arithmetic on jets (sums, truncated products, composition with analytic
//! scalar functions) propagates derivatives exactly, which is how every
//! analytic field in this crate differentiates itself — no symbolic algebra
//! and no finite-difference error.
//!
//! [`Jet`] is the public view: value, gradient, Hessian, and third
//! derivatives, populated up to the requested order (at most 3). The extra
//! internal order exists because taking one partial derivative of a graph
//! node consumes one order of its operand.

use crate::error::{Error, Result};
use crate::numeric::{PrecisionContext, Real, Sym2, Vec2};

/// Highest order carried by internal jets. Public jets stop at order 3;
/// the headroom exists because each exact-derivative graph node consumes
/// one order of its operand, and composed construction stages nest several
/// such nodes.
pub const MAX_INTERNAL_ORDER: u32 = 8;

/// Highest order exposed through [`Jet`].
pub const MAX_PUBLIC_ORDER: u32 = 3;

/// Coordinate axes of the plane.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

fn tri_len(order: u32) -> usize {
    ((order + 1) * (order + 2) / 2) as usize
}

/// Index of the coefficient of `x^i y^j`: coefficients are grouped by total
/// degree, so truncation to a lower order is a prefix.
fn idx(i: u32, j: u32) -> usize {
    let d = i + j;
    (d * (d + 1) / 2 + j) as usize
}

/// Truncated Taylor expansion of a scalar function of two variables.
#[derive(Clone, Debug)]
pub struct TJet {
    order: u32,
    coeffs: Vec<Real>,
}

impl TJet {
    /// The jet of a constant.
    pub fn constant(value: Real, order: u32, ctx: &PrecisionContext) -> TJet {
        let mut coeffs = vec![ctx.zero(); tri_len(order)];
        coeffs[0] = value;
        TJet { order, coeffs }
    }

    /// The jet of the coordinate function on `axis`, evaluated at `value`.
    pub fn coordinate(axis: Axis, value: Real, order: u32, ctx: &PrecisionContext) -> TJet {
        let mut jet = TJet::constant(value, order, ctx);
        if order >= 1 {
            let pos = match axis {
                Axis::X => idx(1, 0),
                Axis::Y => idx(0, 1),
            };
            jet.coeffs[pos] = ctx.one();
        }
        jet
    }

    /// Order of this jet.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// The value (zeroth coefficient).
    pub fn value(&self) -> &Real {
        &self.coeffs[0]
    }

    /// Taylor coefficient of `x^i y^j` (zero if above the order).
    pub fn coeff(&self, i: u32, j: u32) -> Option<&Real> {
        if i + j <= self.order {
            Some(&self.coeffs[idx(i, j)])
        } else {
            None
        }
    }

    /// Adds `v` to the Taylor coefficient of `x^i y^j`.
    pub fn add_coeff(&mut self, i: u32, j: u32, v: &Real) {
        assert!(i + j <= self.order, "coefficient beyond jet order");
        let pos = idx(i, j);
        self.coeffs[pos] = &self.coeffs[pos] + v;
    }

    /// The partial derivative `∂_x^i ∂_y^j f` (coefficient times factorials).
    pub fn partial(&self, i: u32, j: u32, ctx: &PrecisionContext) -> Result<Real> {
        if i + j > self.order {
            return Err(Error::JetOrder {
                requested: i + j,
                max: self.order,
            });
        }
        let mut fact = 1u64;
        for k in 2..=i as u64 {
            fact *= k;
        }
        for k in 2..=j as u64 {
            fact *= k;
        }
        Ok(&self.coeffs[idx(i, j)] * &ctx.real_from_u64(fact))
    }

    /// Restriction to a lower (or equal) order.
    pub fn truncated(&self, order: u32) -> TJet {
        assert!(order <= self.order, "cannot raise jet order by truncation");
        TJet {
            order,
            coeffs: self.coeffs[..tri_len(order)].to_vec(),
        }
    }

    /// The jet of `∂f/∂axis`, one order lower.
    pub fn partial_jet(&self, axis: Axis, ctx: &PrecisionContext) -> Result<TJet> {
        if self.order == 0 {
            return Err(Error::JetOrder {
                requested: 1,
                max: 0,
            });
        }
        let order = self.order - 1;
        let mut coeffs = vec![ctx.zero(); tri_len(order)];
        for d in 0..=order {
            for j in 0..=d {
                let i = d - j;
                let (si, sj, mult) = match axis {
                    Axis::X => (i + 1, j, i + 1),
                    Axis::Y => (i, j + 1, j + 1),
                };
                coeffs[idx(i, j)] =
                    &self.coeffs[idx(si, sj)] * &ctx.real_from_u64(mult as u64);
            }
        }
        Ok(TJet { order, coeffs })
    }

    /// Sum of two jets of the same order.
    pub fn add(&self, rhs: &TJet) -> TJet {
        assert_eq!(self.order, rhs.order, "jet order mismatch in addition");
        let coeffs = self
            .coeffs
            .iter()
            .zip(rhs.coeffs.iter())
            .map(|(a, b)| a + b)
            .collect();
        TJet {
            order: self.order,
            coeffs,
        }
    }

    /// Difference of two jets of the same order.
    pub fn sub(&self, rhs: &TJet) -> TJet {
        assert_eq!(self.order, rhs.order, "jet order mismatch in subtraction");
        let coeffs = self
            .coeffs
            .iter()
            .zip(rhs.coeffs.iter())
            .map(|(a, b)| a - b)
            .collect();
        TJet {
            order: self.order,
            coeffs,
        }
    }

    /// Scalar multiple.
    pub fn scale(&self, s: &Real) -> TJet {
        TJet {
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| s * c).collect(),
        }
    }

    /// Negation.
    pub fn negate(&self) -> TJet {
        TJet {
            order: self.order,
            coeffs: self.coeffs.iter().map(|c| -c).collect(),
        }
    }

    /// Truncated product of two jets of the same order.
    pub fn mul(&self, rhs: &TJet, ctx: &PrecisionContext) -> TJet {
        assert_eq!(self.order, rhs.order, "jet order mismatch in product");
        let n = self.order;
        let mut coeffs = vec![ctx.zero(); tri_len(n)];
        for da in 0..=n {
            for ja in 0..=da {
                let ia = da - ja;
                let a = &self.coeffs[idx(ia, ja)];
                if a.is_zero() {
                    continue;
                }
                for db in 0..=(n - da) {
                    for jb in 0..=db {
                        let ib = db - jb;
                        let b = &rhs.coeffs[idx(ib, jb)];
                        if b.is_zero() {
                            continue;
                        }
                        let target = idx(ia + ib, ja + jb);
                        coeffs[target] = &coeffs[target] + &(a * b);
                    }
                }
            }
        }
        TJet { order: n, coeffs }
    }

    /// Integer power with a non-negative exponent (repeated truncated
    /// products).
    pub fn powi(&self, n: u32, ctx: &PrecisionContext) -> TJet {
        if n == 0 {
            return TJet::constant(ctx.one(), self.order, ctx);
        }
        let mut acc = self.clone();
        for _ in 1..n {
            acc = acc.mul(self, ctx);
        }
        acc
    }

    /// Composition with an analytic scalar function given by its Taylor
    /// coefficients at `self.value()`: `outer[m] = g^{(m)}(f₀)/m!`.
    ///
    /// Evaluated by Horner's rule in the deviation `u = f - f₀`, whose
    /// constant coefficient vanishes, so the truncation is exact for the
    /// carried order.
    pub fn compose(&self, outer: &[Real], ctx: &PrecisionContext) -> TJet {
        let n = self.order;
        assert!(
            outer.len() as u32 == n + 1,
            "composition needs exactly order+1 outer coefficients"
        );
        let mut u = self.clone();
        u.coeffs[0] = ctx.zero();
        let mut acc = TJet::constant(outer[n as usize].clone(), n, ctx);
        for m in (0..n as usize).rev() {
            acc = acc.mul(&u, ctx);
            acc.coeffs[0] = &acc.coeffs[0] + &outer[m];
        }
        acc
    }

    /// Jet of `sin(f)`.
    pub fn sin(&self, ctx: &PrecisionContext) -> TJet {
        self.compose(&sin_outer(self.value(), self.order, ctx), ctx)
    }

    /// Jet of `cos(f)`.
    pub fn cos(&self, ctx: &PrecisionContext) -> TJet {
        self.compose(&cos_outer(self.value(), self.order, ctx), ctx)
    }

    /// Jet of `exp(f)`.
    pub fn exp(&self, ctx: &PrecisionContext) -> TJet {
        let e = self.value().exp();
        let mut outer = Vec::with_capacity(self.order as usize + 1);
        let mut c = e;
        outer.push(c.clone());
        for m in 1..=self.order as u64 {
            c = &c / &ctx.real_from_u64(m);
            outer.push(c.clone());
        }
        self.compose(&outer, ctx)
    }

    /// Jet of `sqrt(f)`; errors if the value at the point is not strictly
    /// positive.
    pub fn sqrt(&self, ctx: &PrecisionContext) -> Result<TJet> {
        let f0 = self.value();
        if f0.sign() != std::cmp::Ordering::Greater {
            return Err(Error::domain(format!(
                "square-root jet at non-positive value {f0}"
            )));
        }
        let r = f0.sqrt()?;
        // Binomial series of `(f0 + u)^{1/2}`: the coefficient of `u^m` is
        // `C(1/2, m)·f0^{1/2−m}`, so consecutive coefficients differ by the
        // factor `(3 − 2m) / (2m·f0)`.
        let mut outer = Vec::with_capacity(self.order as usize + 1);
        let mut c = r;
        outer.push(c.clone());
        for m in 1..=self.order as i64 {
            let ratio =
                &ctx.real_from_i64(3 - 2 * m) / &(&ctx.real_from_u64(2 * m as u64) * f0);
            c = &c * &ratio;
            outer.push(c.clone());
        }
        Ok(self.compose(&outer, ctx))
    }

    /// Jet of `1/f`; errors if the value at the point is zero.
    pub fn recip(&self, ctx: &PrecisionContext) -> Result<TJet> {
        let f0 = self.value();
        if f0.is_zero() {
            return Err(Error::domain("reciprocal jet at zero value".to_string()));
        }
        // g^{(m)}(f0)/m! for g = 1/x: (-1)^m / f0^{m+1}
        let mut outer = Vec::with_capacity(self.order as usize + 1);
        let mut c = f0.recip()?;
        outer.push(c.clone());
        for _ in 1..=self.order {
            c = (&c / f0).neg();
            outer.push(c.clone());
        }
        Ok(self.compose(&outer, ctx))
    }

    /// Public view up to `order ≤ 3`.
    pub fn to_jet(&self, order: u32, ctx: &PrecisionContext) -> Result<Jet> {
        if order > MAX_PUBLIC_ORDER {
            return Err(Error::JetOrder {
                requested: order,
                max: MAX_PUBLIC_ORDER,
            });
        }
        if order > self.order {
            return Err(Error::JetOrder {
                requested: order,
                max: self.order,
            });
        }
        let two = ctx.real_from_u64(2);
        let six = ctx.real_from_u64(6);
        let gradient = if order >= 1 {
            Some(Vec2::new(
                self.coeffs[idx(1, 0)].clone(),
                self.coeffs[idx(0, 1)].clone(),
            ))
        } else {
            None
        };
        let hessian = if order >= 2 {
            Some(Sym2::new(
                &two * &self.coeffs[idx(2, 0)],
                self.coeffs[idx(1, 1)].clone(),
                &two * &self.coeffs[idx(0, 2)],
            ))
        } else {
            None
        };
        let third = if order >= 3 {
            Some(ThirdDeriv {
                xxx: &six * &self.coeffs[idx(3, 0)],
                xxy: &two * &self.coeffs[idx(2, 1)],
                xyy: &two * &self.coeffs[idx(1, 2)],
                yyy: &six * &self.coeffs[idx(0, 3)],
            })
        } else {
            None
        };
        Ok(Jet {
            order,
            value: self.coeffs[0].clone(),
            gradient,
            hessian,
            third,
        })
    }
}

fn sin_outer(f0: &Real, order: u32, ctx: &PrecisionContext) -> Vec<Real> {
    let s = f0.sin();
    let c = f0.cos();
    cycle_outer(s, c, order, ctx)
}

fn cos_outer(f0: &Real, order: u32, ctx: &PrecisionContext) -> Vec<Real> {
    let c = f0.cos();
    let ms = f0.sin().neg();
    cycle_outer(c, ms, order, ctx)
}

/// Taylor coefficients of a function whose derivative cycle is
/// `a, b, -a, -b, a, ...` (sine and cosine), divided by factorials.
fn cycle_outer(a: Real, b: Real, order: u32, ctx: &PrecisionContext) -> Vec<Real> {
    let cycle = [a.clone(), b.clone(), a.neg(), b.neg()];
    let mut outer = Vec::with_capacity(order as usize + 1);
    let mut fact = ctx.one();
    for m in 0..=order {
        if m > 1 {
            fact = &fact * &ctx.real_from_u64(m as u64);
        }
        outer.push(&cycle[(m % 4) as usize] / &fact);
    }
    outer
}

/// Third derivatives of a scalar function, `(∂xxx, ∂xxy, ∂xyy, ∂yyy)`.
#[derive(Clone, Debug)]
pub struct ThirdDeriv {
    pub xxx: Real,
    pub xxy: Real,
    pub xyy: Real,
    pub yyy: Real,
}

impl ThirdDeriv {
    /// Frobenius norm of the symmetric 3-tensor, counting each distinct
    /// index multiset with its multiplicity:
    /// `sqrt(xxx² + 3·xxy² + 3·xyy² + yyy²)`.
    pub fn frobenius(&self, ctx: &PrecisionContext) -> Real {
        let three = ctx.real_from_u64(3);
        let sum = &(&(&self.xxx * &self.xxx) + &(&three * &(&self.xxy * &self.xxy)))
            + &(&(&three * &(&self.xyy * &self.xyy)) + &(&self.yyy * &self.yyy));
        sum.sqrt().expect("sum of squares is non-negative")
    }
}

/// Value and derivatives of a scalar field at one point, up to order 3.
#[derive(Clone, Debug)]
pub struct Jet {
    order: u32,
    pub value: Real,
    gradient: Option<Vec2>,
    hessian: Option<Sym2>,
    third: Option<ThirdDeriv>,
}

impl Jet {
    /// Order this jet was evaluated at.
    pub fn order(&self) -> u32 {
        self.order
    }

    /// Gradient; errors if the jet was evaluated below order 1.
    pub fn gradient(&self) -> Result<&Vec2> {
        self.gradient.as_ref().ok_or(Error::JetOrder {
            requested: 1,
            max: self.order,
        })
    }

    /// Hessian; errors if the jet was evaluated below order 2.
    pub fn hessian(&self) -> Result<&Sym2> {
        self.hessian.as_ref().ok_or(Error::JetOrder {
            requested: 2,
            max: self.order,
        })
    }

    /// Third derivatives; errors if the jet was evaluated below order 3.
    pub fn third(&self) -> Result<&ThirdDeriv> {
        self.third.as_ref().ok_or(Error::JetOrder {
            requested: 3,
            max: self.order,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::make_context;

    fn ctx() -> PrecisionContext {
        make_context(30, 7).unwrap()
    }

    fn near(a: &Real, b: &Real, tol: &Real) -> bool {
        (a - b).abs() <= *tol
    }

    #[test]
    fn coordinate_jets() {
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.real_from_u64(3), 2, &c);
        assert_eq!(*x.value(), c.real_from_u64(3));
        assert_eq!(*x.coeff(1, 0).unwrap(), c.one());
        assert_eq!(*x.coeff(0, 1).unwrap(), c.zero());
        assert_eq!(*x.coeff(2, 0).unwrap(), c.zero());
    }

    #[test]
    fn product_reproduces_polynomial_partials() {
        // f = x²y at (2, 5): ∂x = 2xy = 20, ∂y = x² = 4, ∂xx = 2y = 10,
        // ∂xy = 2x = 4, ∂xxy = 2.
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.real_from_u64(2), 3, &c);
        let y = TJet::coordinate(Axis::Y, c.real_from_u64(5), 3, &c);
        let f = x.mul(&x, &c).mul(&y, &c);
        assert_eq!(f.partial(0, 0, &c).unwrap(), c.real_from_u64(20));
        assert_eq!(f.partial(1, 0, &c).unwrap(), c.real_from_u64(20));
        assert_eq!(f.partial(0, 1, &c).unwrap(), c.real_from_u64(4));
        assert_eq!(f.partial(2, 0, &c).unwrap(), c.real_from_u64(10));
        assert_eq!(f.partial(1, 1, &c).unwrap(), c.real_from_u64(4));
        assert_eq!(f.partial(2, 1, &c).unwrap(), c.real_from_u64(2));
        assert_eq!(f.partial(3, 0, &c).unwrap(), c.zero());
    }

    #[test]
    fn sine_jet_matches_closed_form() {
        // f = sin(x·y) at (a, b): ∂x = b·cos(ab), ∂xx = -b²·sin(ab),
        // ∂xy = cos(ab) - ab·sin(ab).
        let c = ctx();
        let a = c.real_from_str("0.7").unwrap();
        let b = c.real_from_str("1.3").unwrap();
        let x = TJet::coordinate(Axis::X, a.clone(), 3, &c);
        let y = TJet::coordinate(Axis::Y, b.clone(), 3, &c);
        let f = x.mul(&y, &c).sin(&c);
        let ab = &a * &b;
        let tol = c.real_from_str("1e-27").unwrap();
        assert!(near(
            &f.partial(1, 0, &c).unwrap(),
            &(&b * &ab.cos()),
            &tol
        ));
        assert!(near(
            &f.partial(2, 0, &c).unwrap(),
            &(&b * &b * ab.sin()).neg(),
            &tol
        ));
        let expected_xy = &ab.cos() - &(&ab * &ab.sin());
        assert!(near(&f.partial(1, 1, &c).unwrap(), &expected_xy, &tol));
        let expected_xxx = (&b.powi(3) * &ab.cos()).neg();
        assert!(near(&f.partial(3, 0, &c).unwrap(), &expected_xxx, &tol));
    }

    #[test]
    fn sqrt_and_recip_jets() {
        // g = sqrt(1 + x²) at x = 2: g = √5, g' = x/√5 = 2/√5,
        // g'' = 1/5^{3/2}.
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.real_from_u64(2), 2, &c);
        let one = TJet::constant(c.one(), 2, &c);
        let f = one.add(&x.mul(&x, &c));
        let g = f.sqrt(&c).unwrap();
        let sqrt5 = c.real_from_u64(5).sqrt().unwrap();
        let tol = c.real_from_str("1e-27").unwrap();
        assert!(near(g.value(), &sqrt5, &tol));
        assert!(near(
            &g.partial(1, 0, &c).unwrap(),
            &(c.real_from_u64(2) / &sqrt5),
            &tol
        ));
        assert!(near(
            &g.partial(2, 0, &c).unwrap(),
            &(c.one() / &(&c.real_from_u64(5) * &sqrt5)),
            &tol
        ));
        let r = f.recip(&c).unwrap();
        // (1+x²)^{-1} at 2: value 1/5, ∂x = -2x/(1+x²)² = -4/25.
        assert!(near(r.value(), &(c.one() / &c.real_from_u64(5)), &tol));
        assert!(near(
            &r.partial(1, 0, &c).unwrap(),
            &(c.real_from_i64(-4) / &c.real_from_u64(25)),
            &tol
        ));
        // sqrt of a negative value must error.
        let neg = TJet::constant(c.real_from_i64(-1), 2, &c);
        assert!(neg.sqrt(&c).is_err());
        let zero = TJet::constant(c.zero(), 2, &c);
        assert!(zero.recip(&c).is_err());
    }

    #[test]
    fn exp_jet_fourth_order() {
        // exp(x) at 0 to order 4: coefficients 1/m!.
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.zero(), 4, &c);
        let e = x.exp(&c);
        let tol = c.real_from_str("1e-27").unwrap();
        assert!(near(e.coeff(0, 0).unwrap(), &c.one(), &tol));
        assert!(near(e.coeff(1, 0).unwrap(), &c.one(), &tol));
        assert!(near(e.coeff(2, 0).unwrap(), &c.one().div_pow2(1), &tol));
        assert!(near(
            e.coeff(3, 0).unwrap(),
            &(c.one() / &c.real_from_u64(6)),
            &tol
        ));
        assert!(near(
            e.coeff(4, 0).unwrap(),
            &(c.one() / &c.real_from_u64(24)),
            &tol
        ));
    }

    #[test]
    fn partial_jet_shifts_coefficients() {
        // f = x³ + x·y at (1, 2): ∂x f = 3x² + y, whose jet at order 2 has
        // value 5, ∂x = 6x = 6, ∂y = 1.
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.one(), 3, &c);
        let y = TJet::coordinate(Axis::Y, c.real_from_u64(2), 3, &c);
        let f = x.powi(3, &c).add(&x.mul(&y, &c));
        let fx = f.partial_jet(Axis::X, &c).unwrap();
        assert_eq!(fx.order(), 2);
        assert_eq!(*fx.value(), c.real_from_u64(5));
        assert_eq!(fx.partial(1, 0, &c).unwrap(), c.real_from_u64(6));
        assert_eq!(fx.partial(0, 1, &c).unwrap(), c.one());
    }

    #[test]
    fn public_jet_view() {
        let c = ctx();
        let x = TJet::coordinate(Axis::X, c.one(), 3, &c);
        let y = TJet::coordinate(Axis::Y, c.one(), 3, &c);
        // f = x²y + y³
        let f = x.mul(&x, &c).mul(&y, &c).add(&y.powi(3, &c));
        let jet = f.to_jet(3, &c).unwrap();
        assert_eq!(jet.value, c.real_from_u64(2));
        let g = jet.gradient().unwrap();
        assert_eq!(g.x, c.real_from_u64(2)); // 2xy
        assert_eq!(g.y, c.real_from_u64(4)); // x² + 3y²
        let h = jet.hessian().unwrap();
        assert_eq!(h.xx, c.real_from_u64(2)); // 2y
        assert_eq!(h.xy, c.real_from_u64(2)); // 2x
        assert_eq!(h.yy, c.real_from_u64(6)); // 6y
        let t = jet.third().unwrap();
        assert_eq!(t.xxx, c.zero());
        assert_eq!(t.xxy, c.real_from_u64(2));
        assert_eq!(t.xyy, c.zero());
        assert_eq!(t.yyy, c.real_from_u64(6));
        // Requesting an order the jet does not carry must error.
        let low = f.to_jet(2, &c).unwrap();
        assert!(low.third().is_err());
        assert!(f.truncated(1).to_jet(2, &c).is_err());
    }
}
