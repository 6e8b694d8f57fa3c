//! The fixed rank-one frame and the defect decomposition.
//!
//! Every symmetric 2×2 matrix `B` splits as `B = Σ φ_k η_k⊗η_k` over the
//! three fixed unit directions `η₁ = (1,0)`, `η₂ = (1,2)/√5`,
//! `η₃ = (1,−2)/√5`. The coefficients come from closed formulas — never a
//! linear solve — so the split is exact at any working precision, and
//! non-negative coefficients certify positive semi-definiteness. A diagonal
//! shift makes all coefficients strictly positive at a controlled cost in
//! norm, and a companion linear vector field realizes that shift through
//! the defect of a pair `(v, w)`.

use crate::error::{Error, Result};
use crate::field::{add, constant, coord_x, coord_y, mul, scale, sub, FieldRef, SymField, VecField};
use crate::numeric::{PrecisionContext, Real, Sym2, Vec2};

/// The `k`-th frame direction (`k` in `1..=3`), a unit vector.
pub fn frame_direction(k: usize, ctx: &PrecisionContext) -> Result<Vec2> {
    let inv_sqrt5 = ctx.real_from_u64(5).sqrt()?.recip()?;
    match k {
        1 => Ok(Vec2::new(ctx.one(), ctx.zero())),
        2 => Ok(Vec2::new(inv_sqrt5.clone(), inv_sqrt5.mul_pow2(1))),
        3 => Ok(Vec2::new(inv_sqrt5.clone(), inv_sqrt5.mul_pow2(1).neg())),
        _ => Err(Error::config(format!(
            "frame direction index must be 1, 2, or 3, got {k}"
        ))),
    }
}

/// Coefficients of `B` in the rank-one frame:
/// `φ₁ = b₁₁ − ¼b₂₂`, `φ₂ = ⅝(b₂₂ + 2b₁₂)`, `φ₃ = ⅝(b₂₂ − 2b₁₂)`.
pub fn decompose(b: &Sym2, ctx: &PrecisionContext) -> [Real; 3] {
    let five = ctx.real_from_u64(5);
    let phi1 = &b.xx - &b.yy.div_pow2(2);
    let two_bxy = b.xy.mul_pow2(1);
    let phi2 = (&five * &(&b.yy + &two_bxy)).div_pow2(3);
    let phi3 = (&five * &(&b.yy - &two_bxy)).div_pow2(3);
    [phi1, phi2, phi3]
}

/// Reassembles `Σ φ_k η_k⊗η_k`:
/// `b₁₁ = φ₁ + (φ₂+φ₃)/5`, `b₁₂ = (2/5)(φ₂−φ₃)`, `b₂₂ = (4/5)(φ₂+φ₃)`.
pub fn recompose(phi: &[Real; 3], ctx: &PrecisionContext) -> Sym2 {
    let five = ctx.real_from_u64(5);
    let sum23 = &phi[1] + &phi[2];
    let diff23 = &phi[1] - &phi[2];
    let xx = &phi[0] + &(&sum23 / &five);
    let xy = (&diff23.mul_pow2(1)) / &five;
    let yy = (&sum23.mul_pow2(2)) / &five;
    Sym2::new(xx, xy, yy)
}

/// Fieldwise decomposition: the three coefficient fields of a symmetric
/// field, by the same closed formulas applied pointwise.
pub fn decompose_fields(d: &SymField, ctx: &PrecisionContext) -> [FieldRef; 3] {
    let quarter = ctx.one().div_pow2(2);
    let two = ctx.real_from_u64(2);
    let five_eighths = ctx.real_from_u64(5).div_pow2(3);
    let phi1 = sub(d.xx.clone(), scale(quarter, d.yy.clone()));
    let phi2 = scale(
        five_eighths.clone(),
        add(d.yy.clone(), scale(two.clone(), d.xy.clone())),
    );
    let phi3 = scale(
        five_eighths,
        sub(d.yy.clone(), scale(two, d.xy.clone())),
    );
    [phi1, phi2, phi3]
}

/// The diagonal entries of the positivity shift per unit of `α`:
/// `((√2+9)/4, √2 + 9/5)`.
pub fn shift_diagonal(ctx: &PrecisionContext) -> (Real, Real) {
    let sqrt2 = ctx.real_from_u64(2).sqrt().expect("2 > 0");
    let nine = ctx.real_from_u64(9);
    let s1 = (&sqrt2 + &nine).div_pow2(2);
    let s2 = &sqrt2 + &(&nine / &ctx.real_from_u64(5));
    (s1, s2)
}

/// The shift matrix `α·diag((√2+9)/4, √2+9/5)` on its own.
pub fn shift_matrix(alpha: &Real, ctx: &PrecisionContext) -> Sym2 {
    let (s1, s2) = shift_diagonal(ctx);
    Sym2::diag(alpha * &s1, alpha * &s2)
}

/// Shifts `B` to `B̃ = B + α·diag((√2+9)/4, √2+9/5)`.
///
/// Requires `α ≥ |B|` (Frobenius); then every coefficient of `B̃` is at
/// least `α/2` and `|B̃| ≤ 5.15·α`.
pub fn positivity_shift(b: &Sym2, alpha: &Real, ctx: &PrecisionContext) -> Result<Sym2> {
    let norm = b.frobenius();
    if *alpha < norm {
        return Err(Error::domain(format!(
            "positivity shift needs α ≥ |B|, got α = {alpha} with |B| = {norm}"
        )));
    }
    Ok(b.plus(&shift_matrix(alpha, ctx)))
}

/// The linear vector field `bound·((√2+9)/4·x, (√2+9/5)·y)`.
///
/// Its symmetrized gradient is exactly the shift matrix scaled by `bound`,
/// so subtracting it from `w` adds `bound·diag((√2+9)/4, √2+9/5)` to the
/// defect of `(v, w)`.
pub fn w_shift_field(bound: &Real, ctx: &PrecisionContext) -> VecField {
    let (s1, s2) = shift_diagonal(ctx);
    [
        mul(constant(bound * &s1), coord_x()),
        mul(constant(bound * &s2), coord_y()),
    ]
}

/// The sharp factor in `|φ_k| ≤ (5√3/8)·|B|`.
pub fn coeff_bound_factor(ctx: &PrecisionContext) -> Real {
    (&ctx.real_from_u64(5) * &ctx.real_from_u64(3).sqrt().expect("3 > 0")).div_pow2(3)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{assemble_defect, sym_value};
    use crate::numeric::{make_context, Point};
    use proptest::prelude::*;

    fn ctx() -> PrecisionContext {
        make_context(40, 3).unwrap()
    }

    fn sym(c: &PrecisionContext, xx: f64, xy: f64, yy: f64) -> Sym2 {
        Sym2::new(
            c.real_from_f64(xx).unwrap(),
            c.real_from_f64(xy).unwrap(),
            c.real_from_f64(yy).unwrap(),
        )
    }

    #[test]
    fn frame_directions_are_unit_and_reassemble() {
        let c = ctx();
        let tol = c.real_from_str("1e-35").unwrap();
        for k in 1..=3 {
            let eta = frame_direction(k, &c).unwrap();
            assert!((&eta.norm() - &c.one()).abs() < tol, "η_{k} not unit");
        }
        assert!(frame_direction(0, &c).is_err());
        // Σ φ_k η_k⊗η_k must reproduce B for an asymmetric sample.
        let b = sym(&c, 1.25, -0.375, 2.5);
        let phi = decompose(&b, &c);
        let mut acc = Sym2::diag(c.zero(), c.zero());
        for k in 1..=3 {
            let eta = frame_direction(k, &c).unwrap();
            acc = acc.plus(&eta.outer_self().scale(&phi[k - 1]));
        }
        assert!((&acc.xx - &b.xx).abs() < tol);
        assert!((&acc.xy - &b.xy).abs() < tol);
        assert!((&acc.yy - &b.yy).abs() < tol);
    }

    #[test]
    fn decompose_known_matrices() {
        let c = ctx();
        // A pure frame element.
        let phi = decompose(&sym(&c, 1.0, 0.0, 0.0), &c);
        assert_eq!(phi[0], c.one());
        assert!(phi[1].is_zero());
        assert!(phi[2].is_zero());
        // The identity: (0.75, 0.625, 0.625) exactly (all dyadic).
        let phi = decompose(&sym(&c, 1.0, 0.0, 1.0), &c);
        assert_eq!(phi[0], c.real_from_str("0.75").unwrap());
        assert_eq!(phi[1], c.real_from_str("0.625").unwrap());
        assert_eq!(phi[2], c.real_from_str("0.625").unwrap());
        assert_eq!(&(&phi[0] + &phi[1]) + &phi[2], c.real_from_u64(2));
        // diag(7/5, 8/5) → (1, 1, 1).
        let seven_fifths = &c.real_from_u64(7) / &c.real_from_u64(5);
        let eight_fifths = &c.real_from_u64(8) / &c.real_from_u64(5);
        let phi = decompose(&Sym2::diag(seven_fifths, eight_fifths), &c);
        let tol = c.real_from_str("1e-35").unwrap();
        for p in &phi {
            assert!((p - &c.one()).abs() < tol);
        }
    }

    #[test]
    fn recompose_known_triples() {
        let c = ctx();
        let one = || c.one();
        let m = recompose(&[one(), one(), one()], &c);
        let tol = c.real_from_str("1e-35").unwrap();
        assert!((&m.xx - &(&c.real_from_u64(7) / &c.real_from_u64(5))).abs() < tol);
        assert!(m.xy.abs() < tol);
        assert!((&m.yy - &(&c.real_from_u64(8) / &c.real_from_u64(5))).abs() < tol);
        let m = recompose(&[one(), c.zero(), c.zero()], &c);
        assert_eq!(m.xx, c.one());
        assert!(m.xy.is_zero());
        assert!(m.yy.is_zero());
    }

    #[test]
    fn shift_of_zero_matrix() {
        let c = ctx();
        let zero = Sym2::diag(c.zero(), c.zero());
        let shifted = positivity_shift(&zero, &c.one(), &c).unwrap();
        let tol = c.real_from_str("1e-30").unwrap();
        assert!(
            (&shifted.xx - &c.real_from_str("2.60355339059327376220042218105242452").unwrap())
                .abs()
                < tol
        );
        assert!(
            (&shifted.yy - &c.real_from_str("3.21421356237309504880168872420969808").unwrap())
                .abs()
                < tol
        );
        let phi = decompose(&shifted, &c);
        let half = c.one().div_pow2(1);
        for p in &phi {
            assert!(*p >= half);
        }
        // φ₁ of the unit shift is exactly 9/4 − 9/20 = 1.8.
        assert!((&phi[0] - &c.real_from_str("1.8").unwrap()).abs() < tol);
        assert!(
            (&phi[1] - &c.real_from_str("2.00888347648318440550105545263106130").unwrap()).abs()
                < tol
        );
        // Precondition violation: α below |B|.
        let b = sym(&c, 1.0, 0.0, 1.0);
        assert!(positivity_shift(&b, &c.one(), &c).is_err());
    }

    #[test]
    fn w_shift_changes_defect_by_the_shift_matrix() {
        let c = ctx();
        let e = |s: &str| {
            crate::field::compile_expr(&crate::expr::parse(s).unwrap(), &c).unwrap()
        };
        let v = e("x^2 + x*y");
        let w = [e("x*y^2"), e("x^2 - y^3")];
        let a = SymField {
            xx: e("1 + x^2"),
            xy: e("x*y"),
            yy: e("2 - y^2"),
        };
        let bound = c.real_from_str("0.375").unwrap();
        let shift = w_shift_field(&bound, &c);
        let w_shifted = [sub(w[0].clone(), shift[0].clone()), sub(w[1].clone(), shift[1].clone())];
        let before = assemble_defect(&a, &v, &w, &c);
        let after = assemble_defect(&a, &v, &w_shifted, &c);
        let p = Point::new(
            c.real_from_str("0.21").unwrap(),
            c.real_from_str("-0.55").unwrap(),
        );
        let d0 = sym_value(&before, &p, &c).unwrap();
        let d1 = sym_value(&after, &p, &c).unwrap();
        let expect = shift_matrix(&bound, &c);
        let tol = c.real_from_str("1e-34").unwrap();
        assert!((&(&d1.xx - &d0.xx) - &expect.xx).abs() < tol);
        assert!((&d1.xy - &d0.xy).abs() < tol);
        assert!((&(&d1.yy - &d0.yy) - &expect.yy).abs() < tol);
        // Zero bound gives the zero field.
        let zero_shift = w_shift_field(&c.zero(), &c);
        let val = crate::field::field_value(&zero_shift[0], &p, &c).unwrap();
        assert!(val.is_zero());
    }

    proptest! {
        #[test]
        fn roundtrip_and_trace(
            xx in -10.0f64..10.0,
            xy in -10.0f64..10.0,
            yy in -10.0f64..10.0,
        ) {
            let c = ctx();
            let b = sym(&c, xx, xy, yy);
            let phi = decompose(&b, &c);
            // Trace identity is exact: all decomposition steps stay dyadic
            // for inputs of f64 mantissa width at this precision.
            let total = &(&phi[0] + &phi[1]) + &phi[2];
            prop_assert_eq!(&total, &b.trace());
            // Roundtrip to working precision (recompose divides by 5).
            let back = recompose(&phi, &c);
            let tol = c.real_from_str("1e-30").unwrap();
            prop_assert!((&back.xx - &b.xx).abs() < tol);
            prop_assert!((&back.xy - &b.xy).abs() < tol);
            prop_assert!((&back.yy - &b.yy).abs() < tol);
            // Coefficient bound |φ_k| ≤ (5√3/8)|B|.
            let cap = &coeff_bound_factor(&c) * &b.frobenius();
            let slack = c.real_from_str("1e-30").unwrap();
            for p in &phi {
                prop_assert!(p.abs() <= &cap + &slack);
            }
        }

        #[test]
        fn positive_coefficients_certify_definiteness(
            d in 0.01f64..5.0,
            e1 in 0.0f64..5.0,
            e2 in 0.0f64..5.0,
            e3 in 0.0f64..5.0,
        ) {
            let c = ctx();
            let dr = c.real_from_f64(d).unwrap();
            let phi = [
                &dr + &c.real_from_f64(e1).unwrap(),
                &dr + &c.real_from_f64(e2).unwrap(),
                &dr + &c.real_from_f64(e3).unwrap(),
            ];
            let b = recompose(&phi, &c);
            let slack = c.real_from_str("1e-30").unwrap();
            prop_assert!(b.min_eigenvalue() >= &dr - &slack);
        }

        #[test]
        fn shift_controls_norm_and_coefficients(
            xx in -10.0f64..10.0,
            xy in -10.0f64..10.0,
            yy in -10.0f64..10.0,
            margin in 0.0f64..1.0,
        ) {
            let c = ctx();
            let b = sym(&c, xx, xy, yy);
            let norm = b.frobenius();
            let alpha = &norm * &c.real_from_f64(1.0 + margin).unwrap();
            let shifted = positivity_shift(&b, &alpha, &c).unwrap();
            let slack = c.real_from_str("1e-30").unwrap();
            // |B̃| ≤ 5.15·α.
            let cap = &c.real_from_str("5.15").unwrap() * &alpha;
            prop_assert!(shifted.frobenius() <= &cap + &slack);
            // All coefficients at least α/2.
            let floor = alpha.div_pow2(1);
            for p in &decompose(&shifted, &c) {
                prop_assert!(*p >= &floor - &slack);
            }
        }
    }
}
