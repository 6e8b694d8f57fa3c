//! Scalar fields over the plane.
//!
//! A field is a node in a lazily evaluated expression graph ([`FieldRef`]).
//! Evaluation happens one point at a time through a [`Session`], which
//! memoizes the jet of every graph node at the session's point, so shared
//! subgraphs (an amplitude reused by several corrugations, a gradient
//! appearing in both components of a vector field) are computed once.
//!
//! Three kinds of leaves exist:
//! - analytic graph nodes built from coordinates, constants, and the usual
//!   operations (including guarded square roots and exact partial
//!   derivatives);
//! - exact sparse polynomials ([`Poly`]), which also expose their
//!   coefficients so that exact coefficient-level transformations can act
//!   on them;
//! - sampled grids ([`Grid`]) with finite-difference derivative stencils
//!   ([`fd_partial`]), which serve as the independent measurement route for
//!   quantities that are also available analytically.
//!
//! [`assemble_defect`] builds the symmetric defect field
//! `A - (½∇v⊗∇v + sym ∇w)` from graph nodes; it is the single definition of
//! the defect used everywhere in the crate.

use crate::error::{Error, Result};
use crate::expr::Expr;
use crate::jet::{Axis, Jet, TJet, MAX_INTERNAL_ORDER, MAX_PUBLIC_ORDER};
use crate::numeric::{Point, PrecisionContext, Real, Rect, Sym2};
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

/// Shared handle to a field graph node.
pub type FieldRef = Arc<dyn Field + Send + Sync>;

/// A two-component vector field.
pub type VecField = [FieldRef; 2];

/// A symmetric-matrix-valued field given by its three component fields.
#[derive(Clone)]
pub struct SymField {
    pub xx: FieldRef,
    pub xy: FieldRef,
    pub yy: FieldRef,
}

/// A node of the field graph.
pub trait Field: Send + Sync {
    /// Evaluates the truncated Taylor expansion at the session's point.
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet>;

    /// Exact polynomial view, if this node is one.
    fn as_poly(&self) -> Option<&Poly> {
        None
    }
}

/// Per-point evaluation state: the point itself and a memo table keyed by
/// graph-node identity.
pub struct Session {
    ctx: PrecisionContext,
    point: Point,
    cache: HashMap<usize, TJet>,
}

impl Session {
    pub fn new(ctx: &PrecisionContext, point: &Point) -> Session {
        Session {
            ctx: ctx.clone(),
            point: point.clone(),
            cache: HashMap::new(),
        }
    }

    /// The evaluation point.
    pub fn point(&self) -> &Point {
        &self.point
    }

    /// The precision context of this evaluation.
    pub fn ctx(&self) -> &PrecisionContext {
        &self.ctx
    }

    /// Evaluates `f` at the session point, reusing any jet of the same node
    /// already computed at sufficient order.
    pub fn eval(&mut self, f: &FieldRef, order: u32) -> Result<TJet> {
        if order > MAX_INTERNAL_ORDER {
            return Err(Error::JetOrder {
                requested: order,
                max: MAX_INTERNAL_ORDER,
            });
        }
        let key = Arc::as_ptr(f) as *const () as usize;
        if let Some(cached) = self.cache.get(&key) {
            if cached.order() >= order {
                return Ok(cached.truncated(order));
            }
        }
        let node = f.clone();
        let jet = node.tjet(order, self)?;
        self.cache.insert(key, jet.clone());
        Ok(jet)
    }

    fn singular(&self, message: impl Into<String>) -> Error {
        Error::Singular {
            message: message.into(),
            x: self.point.x.to_string(),
            y: self.point.y.to_string(),
        }
    }
}

/// Evaluates a field's public jet at a point with a fresh session.
pub fn field_jet(f: &FieldRef, p: &Point, order: u32, ctx: &PrecisionContext) -> Result<Jet> {
    if order > MAX_PUBLIC_ORDER {
        return Err(Error::JetOrder {
            requested: order,
            max: MAX_PUBLIC_ORDER,
        });
    }
    let mut sess = Session::new(ctx, p);
    sess.eval(f, order)?.to_jet(order, ctx)
}

/// Evaluates just the value of a field at a point.
pub fn field_value(f: &FieldRef, p: &Point, ctx: &PrecisionContext) -> Result<Real> {
    let mut sess = Session::new(ctx, p);
    Ok(sess.eval(f, 0)?.value().clone())
}

// ---------------------------------------------------------------------------
// Graph nodes
// ---------------------------------------------------------------------------

struct ConstField(Real);

impl Field for ConstField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        Ok(TJet::constant(self.0.clone(), order, sess.ctx()))
    }
}

struct CoordField(Axis);

impl Field for CoordField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let value = match self.0 {
            Axis::X => sess.point().x.clone(),
            Axis::Y => sess.point().y.clone(),
        };
        Ok(TJet::coordinate(self.0, value, order, sess.ctx()))
    }
}

struct AddField(FieldRef, FieldRef);

impl Field for AddField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        let b = sess.eval(&self.1, order)?;
        Ok(a.add(&b))
    }
}

struct SubField(FieldRef, FieldRef);

impl Field for SubField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        let b = sess.eval(&self.1, order)?;
        Ok(a.sub(&b))
    }
}

struct MulField(FieldRef, FieldRef);

impl Field for MulField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        let b = sess.eval(&self.1, order)?;
        Ok(a.mul(&b, sess.ctx()))
    }
}

struct DivField(FieldRef, FieldRef);

impl Field for DivField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        let b = sess.eval(&self.1, order)?;
        let inv = b
            .recip(sess.ctx())
            .map_err(|_| sess.singular("division by a factor that vanishes here"))?;
        Ok(a.mul(&inv, sess.ctx()))
    }
}

struct ScaleField(Real, FieldRef);

impl Field for ScaleField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        Ok(sess.eval(&self.1, order)?.scale(&self.0))
    }
}

struct PowiField(FieldRef, u32);

impl Field for PowiField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        Ok(a.powi(self.1, sess.ctx()))
    }
}

struct SinField(FieldRef);

impl Field for SinField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        Ok(a.sin(sess.ctx()))
    }
}

struct CosField(FieldRef);

impl Field for CosField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        Ok(a.cos(sess.ctx()))
    }
}

struct ExpField(FieldRef);

impl Field for ExpField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.0, order)?;
        Ok(a.exp(sess.ctx()))
    }
}

/// Square root guarded by a floor: evaluation fails loudly (with the point)
/// if the operand dips to the floor or below, instead of silently producing
/// derivatives near a singularity.
struct SqrtField {
    inner: FieldRef,
    floor: Real,
}

impl Field for SqrtField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        let a = sess.eval(&self.inner, order)?;
        if *a.value() <= self.floor {
            let msg = format!(
                "square-root operand {} at or below its floor {}",
                a.value(),
                self.floor
            );
            return Err(sess.singular(msg));
        }
        a.sqrt(sess.ctx())
            .map_err(|_| sess.singular("square root of a non-positive value"))
    }
}

/// Exact partial derivative of a graph node: evaluating at order `n`
/// consumes order `n + 1` of the operand.
struct PartialField {
    inner: FieldRef,
    axis: Axis,
}

impl Field for PartialField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        if order + 1 > MAX_INTERNAL_ORDER {
            return Err(Error::JetOrder {
                requested: order + 1,
                max: MAX_INTERNAL_ORDER,
            });
        }
        let a = sess.eval(&self.inner, order + 1)?;
        a.partial_jet(self.axis, sess.ctx())
    }
}

// ---------------------------------------------------------------------------
// Constructors
// ---------------------------------------------------------------------------

/// Constant field.
pub fn constant(v: Real) -> FieldRef {
    Arc::new(ConstField(v))
}

/// The coordinate field `x`.
pub fn coord_x() -> FieldRef {
    Arc::new(CoordField(Axis::X))
}

/// The coordinate field `y`.
pub fn coord_y() -> FieldRef {
    Arc::new(CoordField(Axis::Y))
}

/// Sum of two fields.
pub fn add(a: FieldRef, b: FieldRef) -> FieldRef {
    Arc::new(AddField(a, b))
}

/// Difference of two fields.
pub fn sub(a: FieldRef, b: FieldRef) -> FieldRef {
    Arc::new(SubField(a, b))
}

/// Product of two fields.
pub fn mul(a: FieldRef, b: FieldRef) -> FieldRef {
    Arc::new(MulField(a, b))
}

/// Quotient of two fields; evaluation fails at zeros of the denominator.
pub fn div(a: FieldRef, b: FieldRef) -> FieldRef {
    Arc::new(DivField(a, b))
}

/// Scalar multiple of a field.
pub fn scale(s: Real, f: FieldRef) -> FieldRef {
    Arc::new(ScaleField(s, f))
}

/// Integer power of a field.
pub fn powi(f: FieldRef, n: u32) -> FieldRef {
    Arc::new(PowiField(f, n))
}

/// Sine of a field.
pub fn sin(f: FieldRef) -> FieldRef {
    Arc::new(SinField(f))
}

/// Cosine of a field.
pub fn cos(f: FieldRef) -> FieldRef {
    Arc::new(CosField(f))
}

/// Exponential of a field.
pub fn exp(f: FieldRef) -> FieldRef {
    Arc::new(ExpField(f))
}

/// Square root of a field with a non-negative guard floor.
pub fn sqrt_floor(f: FieldRef, floor: Real) -> FieldRef {
    Arc::new(SqrtField { inner: f, floor })
}

/// Square root of a field (floor zero: fails exactly at non-positive
/// values).
pub fn sqrt(f: FieldRef, ctx: &PrecisionContext) -> FieldRef {
    sqrt_floor(f, ctx.zero())
}

/// Exact partial derivative along `axis`.
pub fn partial(f: FieldRef, axis: Axis) -> FieldRef {
    Arc::new(PartialField { inner: f, axis })
}

/// Compiles a parsed expression into a field graph, resolving numeric
/// literals at the context's precision.
pub fn compile_expr(e: &Expr, ctx: &PrecisionContext) -> Result<FieldRef> {
    Ok(match e {
        Expr::Number(text) => constant(ctx.real_from_str(text)?),
        Expr::X => coord_x(),
        Expr::Y => coord_y(),
        Expr::Add(a, b) => add(compile_expr(a, ctx)?, compile_expr(b, ctx)?),
        Expr::Sub(a, b) => sub(compile_expr(a, ctx)?, compile_expr(b, ctx)?),
        Expr::Mul(a, b) => mul(compile_expr(a, ctx)?, compile_expr(b, ctx)?),
        Expr::Div(a, b) => div(compile_expr(a, ctx)?, compile_expr(b, ctx)?),
        Expr::Pow(a, n) => powi(compile_expr(a, ctx)?, *n),
        Expr::Sin(a) => sin(compile_expr(a, ctx)?),
        Expr::Cos(a) => cos(compile_expr(a, ctx)?),
        Expr::Exp(a) => exp(compile_expr(a, ctx)?),
        Expr::Sqrt(a) => sqrt(compile_expr(a, ctx)?, ctx),
    })
}

// ---------------------------------------------------------------------------
// Exact sparse polynomials
// ---------------------------------------------------------------------------

/// A sparse bivariate polynomial with exact coefficients, usable directly
/// as a field leaf. The coefficient map is ordered, so all iteration is
/// deterministic.
#[derive(Clone, Debug)]
pub struct Poly {
    terms: BTreeMap<(u32, u32), Real>,
}

impl Poly {
    /// The zero polynomial.
    pub fn zero() -> Poly {
        Poly {
            terms: BTreeMap::new(),
        }
    }

    /// A single monomial `c·x^i y^j`.
    pub fn monomial(c: Real, i: u32, j: u32) -> Poly {
        let mut p = Poly::zero();
        p.add_term(c, i, j);
        p
    }

    /// Adds `c·x^i y^j`, dropping the term if the result is exactly zero.
    pub fn add_term(&mut self, c: Real, i: u32, j: u32) {
        match self.terms.remove(&(i, j)) {
            None => {
                if !c.is_zero() {
                    self.terms.insert((i, j), c);
                }
            }
            Some(old) => {
                let sum = &old + &c;
                if !sum.is_zero() {
                    self.terms.insert((i, j), sum);
                }
            }
        }
    }

    /// Iterator over `(i, j, coefficient)`.
    pub fn terms(&self) -> impl Iterator<Item = (u32, u32, &Real)> {
        self.terms.iter().map(|(&(i, j), c)| (i, j, c))
    }

    /// Total degree (0 for the zero polynomial).
    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|&(i, j)| i + j).max().unwrap_or(0)
    }

    /// Sum.
    pub fn plus(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (i, j, c) in other.terms() {
            out.add_term(c.clone(), i, j);
        }
        out
    }

    /// Difference.
    pub fn minus(&self, other: &Poly) -> Poly {
        let mut out = self.clone();
        for (i, j, c) in other.terms() {
            out.add_term(c.neg(), i, j);
        }
        out
    }

    /// Product.
    pub fn times(&self, other: &Poly) -> Poly {
        let mut out = Poly::zero();
        for (i1, j1, c1) in self.terms() {
            for (i2, j2, c2) in other.terms() {
                out.add_term(c1 * c2, i1 + i2, j1 + j2);
            }
        }
        out
    }

    /// Scalar multiple.
    pub fn scaled(&self, s: &Real) -> Poly {
        let mut out = Poly::zero();
        for (i, j, c) in self.terms() {
            out.add_term(s * c, i, j);
        }
        out
    }

    /// Exact partial derivative.
    pub fn partial(&self, axis: Axis, ctx: &PrecisionContext) -> Poly {
        let mut out = Poly::zero();
        for (i, j, c) in self.terms() {
            match axis {
                Axis::X if i > 0 => {
                    out.add_term(c * &ctx.real_from_u64(i as u64), i - 1, j);
                }
                Axis::Y if j > 0 => {
                    out.add_term(c * &ctx.real_from_u64(j as u64), i, j - 1);
                }
                _ => {}
            }
        }
        out
    }

    /// Attempts to read an expression as an exact polynomial. Returns
    /// `None` when the expression uses transcendental functions, square
    /// roots, or division by a non-constant.
    pub fn from_expr(e: &Expr, ctx: &PrecisionContext) -> Result<Option<Poly>> {
        Ok(Some(match e {
            Expr::Number(text) => Poly::monomial(ctx.real_from_str(text)?, 0, 0),
            Expr::X => Poly::monomial(ctx.one(), 1, 0),
            Expr::Y => Poly::monomial(ctx.one(), 0, 1),
            Expr::Add(a, b) => match (Poly::from_expr(a, ctx)?, Poly::from_expr(b, ctx)?) {
                (Some(pa), Some(pb)) => pa.plus(&pb),
                _ => return Ok(None),
            },
            Expr::Sub(a, b) => match (Poly::from_expr(a, ctx)?, Poly::from_expr(b, ctx)?) {
                (Some(pa), Some(pb)) => pa.minus(&pb),
                _ => return Ok(None),
            },
            Expr::Mul(a, b) => match (Poly::from_expr(a, ctx)?, Poly::from_expr(b, ctx)?) {
                (Some(pa), Some(pb)) => pa.times(&pb),
                _ => return Ok(None),
            },
            Expr::Div(a, b) => match (Poly::from_expr(a, ctx)?, Poly::from_expr(b, ctx)?) {
                (Some(pa), Some(pb)) => match pb.constant_value() {
                    Some(c) if !c.is_zero() => pa.scaled(&c.recip()?),
                    _ => return Ok(None),
                },
                _ => return Ok(None),
            },
            Expr::Pow(a, n) => match Poly::from_expr(a, ctx)? {
                Some(pa) => {
                    let mut acc = Poly::monomial(ctx.one(), 0, 0);
                    for _ in 0..*n {
                        acc = acc.times(&pa);
                    }
                    acc
                }
                None => return Ok(None),
            },
            _ => return Ok(None),
        }))
    }

    /// If the polynomial is a (non-zero) constant, its value.
    pub fn constant_value(&self) -> Option<Real> {
        if self.terms.len() == 1 {
            if let Some(c) = self.terms.get(&(0, 0)) {
                return Some(c.clone());
            }
        }
        None
    }

    /// Taylor coefficients at a point, computed by the exact binomial
    /// shift — no jet products involved.
    fn taylor_at(&self, p: &Point, order: u32, ctx: &PrecisionContext) -> TJet {
        let mut jet = TJet::constant(ctx.zero(), order, ctx);
        for (a, b, c) in self.terms() {
            // c·x^a y^b contributes c·C(a,i)x₀^{a-i}·C(b,j)y₀^{b-j} to (i,j).
            for i in 0..=a.min(order) {
                for j in 0..=b.min(order - i) {
                    let coeff = &(c * &(&binom(a, i, ctx) * &p.x.powi(a - i)))
                        * &(&binom(b, j, ctx) * &p.y.powi(b - j));
                    jet.add_coeff(i, j, &coeff);
                }
            }
        }
        jet
    }
}

fn binom(n: u32, k: u32, ctx: &PrecisionContext) -> Real {
    let k = k.min(n - k);
    let mut num = 1u128;
    let mut den = 1u128;
    for t in 0..k {
        num *= (n - t) as u128;
        den *= (t + 1) as u128;
    }
    ctx.real_from_u64((num / den) as u64)
}

impl Field for Poly {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        Ok(self.taylor_at(sess.point(), order, sess.ctx()))
    }

    fn as_poly(&self) -> Option<&Poly> {
        Some(self)
    }
}

/// Wraps a polynomial as a field handle.
pub fn poly_field(p: Poly) -> FieldRef {
    Arc::new(p)
}

// ---------------------------------------------------------------------------
// Defect assembly and helpers
// ---------------------------------------------------------------------------

/// Builds the defect field `A - (½ ∇v ⊗ ∇v + sym ∇w)` as a symmetric field
/// of graph nodes sharing the derivative subgraphs.
pub fn assemble_defect(
    a: &SymField,
    v: &FieldRef,
    w: &VecField,
    ctx: &PrecisionContext,
) -> SymField {
    let half = ctx.one().div_pow2(1);
    let vx = partial(v.clone(), Axis::X);
    let vy = partial(v.clone(), Axis::Y);
    let w1x = partial(w[0].clone(), Axis::X);
    let w1y = partial(w[0].clone(), Axis::Y);
    let w2x = partial(w[1].clone(), Axis::X);
    let w2y = partial(w[1].clone(), Axis::Y);
    let xx = sub(
        a.xx.clone(),
        add(scale(half.clone(), mul(vx.clone(), vx.clone())), w1x),
    );
    let xy = sub(
        a.xy.clone(),
        add(
            scale(half.clone(), mul(vx, vy.clone())),
            scale(half.clone(), add(w1y, w2x)),
        ),
    );
    let yy = sub(a.yy.clone(), add(scale(half, mul(vy.clone(), vy)), w2y));
    SymField { xx, xy, yy }
}

/// Evaluates a symmetric field's value at a point (one shared session).
pub fn sym_value(f: &SymField, p: &Point, ctx: &PrecisionContext) -> Result<Sym2> {
    let mut sess = Session::new(ctx, p);
    let xx = sess.eval(&f.xx, 0)?.value().clone();
    let xy = sess.eval(&f.xy, 0)?.value().clone();
    let yy = sess.eval(&f.yy, 0)?.value().clone();
    Ok(Sym2::new(xx, xy, yy))
}

// ---------------------------------------------------------------------------
// Grids and finite differences
// ---------------------------------------------------------------------------

/// A rectangular grid of sampled values, row-major with `x` fastest.
#[derive(Clone, Debug)]
pub struct Grid {
    rect: Rect,
    nx: usize,
    ny: usize,
    hx: Real,
    hy: Real,
    values: Vec<Real>,
}

impl Grid {
    /// Builds a grid by evaluating `f` on the nodes. Node counts must be at
    /// least 2 per axis; spacing is uniform.
    pub fn from_fn<F>(
        rect: &Rect,
        nx: usize,
        ny: usize,
        ctx: &PrecisionContext,
        mut f: F,
    ) -> Result<Grid>
    where
        F: FnMut(&Point) -> Result<Real>,
    {
        if nx < 2 || ny < 2 {
            return Err(Error::config(format!(
                "grid needs at least 2 nodes per axis, got {nx}×{ny}"
            )));
        }
        let hx = rect.width() / ctx.real_from_u64((nx - 1) as u64);
        let hy = rect.height() / ctx.real_from_u64((ny - 1) as u64);
        let mut values = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            let y = &rect.y0 + &(&hy * &ctx.real_from_u64(iy as u64));
            for ix in 0..nx {
                let x = &rect.x0 + &(&hx * &ctx.real_from_u64(ix as u64));
                values.push(f(&Point::new(x, y.clone()))?);
            }
        }
        Ok(Grid {
            rect: rect.clone(),
            nx,
            ny,
            hx,
            hy,
            values,
        })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn rect(&self) -> &Rect {
        &self.rect
    }

    pub fn hx(&self) -> &Real {
        &self.hx
    }

    pub fn hy(&self) -> &Real {
        &self.hy
    }

    /// Value at node `(ix, iy)`.
    pub fn get(&self, ix: usize, iy: usize) -> &Real {
        &self.values[iy * self.nx + ix]
    }

    /// Coordinates of node `(ix, iy)`.
    pub fn node_point(&self, ix: usize, iy: usize, ctx: &PrecisionContext) -> Point {
        let x = &self.rect.x0 + &(&self.hx * &ctx.real_from_u64(ix as u64));
        let y = &self.rect.y0 + &(&self.hy * &ctx.real_from_u64(iy as u64));
        Point::new(x, y)
    }

    /// Maximum of `|value|` over all nodes.
    pub fn max_abs(&self) -> Real {
        let mut best = self.values[0].abs();
        for v in &self.values[1..] {
            let a = v.abs();
            if a > best {
                best = a;
            }
        }
        best
    }

    /// Builds a new grid on the same nodes from this grid and others; `f`
    /// receives the node index and the values of all grids at that node
    /// (this one first).
    pub fn zip_with<F>(&self, others: &[&Grid], mut f: F) -> Result<Grid>
    where
        F: FnMut(usize, usize, &[&Real]) -> Result<Real>,
    {
        for o in others {
            if o.nx != self.nx || o.ny != self.ny {
                return Err(Error::config("grids differ in shape"));
            }
        }
        let mut values = Vec::with_capacity(self.nx * self.ny);
        let mut row: Vec<&Real> = Vec::with_capacity(others.len() + 1);
        for iy in 0..self.ny {
            for ix in 0..self.nx {
                row.clear();
                row.push(self.get(ix, iy));
                for o in others {
                    row.push(o.get(ix, iy));
                }
                values.push(f(ix, iy, &row)?);
            }
        }
        Ok(Grid {
            rect: self.rect.clone(),
            nx: self.nx,
            ny: self.ny,
            hx: self.hx.clone(),
            hy: self.hy.clone(),
            values,
        })
    }
}

/// Samples a field's values on an `nx × ny` grid over `rect`.
pub fn sample(
    f: &FieldRef,
    rect: &Rect,
    nx: usize,
    ny: usize,
    ctx: &PrecisionContext,
) -> Result<Grid> {
    Grid::from_fn(rect, nx, ny, ctx, |p| field_value(f, p, ctx))
}

/// Samples several fields on the same grid, sharing one evaluation session
/// per node so common subgraphs are computed once.
pub fn sample_many(
    fields: &[&FieldRef],
    rect: &Rect,
    nx: usize,
    ny: usize,
    ctx: &PrecisionContext,
) -> Result<Vec<Grid>> {
    if nx < 2 || ny < 2 {
        return Err(Error::config(format!(
            "grid needs at least 2 nodes per axis, got {nx}×{ny}"
        )));
    }
    let hx = rect.width() / ctx.real_from_u64((nx - 1) as u64);
    let hy = rect.height() / ctx.real_from_u64((ny - 1) as u64);
    let mut values: Vec<Vec<Real>> = fields.iter().map(|_| Vec::with_capacity(nx * ny)).collect();
    for iy in 0..ny {
        let y = &rect.y0 + &(&hy * &ctx.real_from_u64(iy as u64));
        for ix in 0..nx {
            let x = &rect.x0 + &(&hx * &ctx.real_from_u64(ix as u64));
            let p = Point::new(x, y.clone());
            let mut sess = Session::new(ctx, &p);
            for (slot, f) in values.iter_mut().zip(fields.iter()) {
                slot.push(sess.eval(f, 0)?.value().clone());
            }
        }
    }
    Ok(values
        .into_iter()
        .map(|v| Grid {
            rect: rect.clone(),
            nx,
            ny,
            hx: hx.clone(),
            hy: hy.clone(),
            values: v,
        })
        .collect())
}

/// Fourth-order finite-difference partial derivative of a sampled grid.
///
/// Interior nodes use the five-point central stencil
/// `(f₋₂ - 8f₋₁ + 8f₊₁ - f₊₂) / 12h`; the two layers at each boundary use
/// one-sided five-point stencils of the same order. All stencils are exact
/// on polynomials of degree ≤ 4.
pub fn fd_partial(grid: &Grid, axis: Axis, ctx: &PrecisionContext) -> Result<Grid> {
    let (n_along, n_other, h) = match axis {
        Axis::X => (grid.nx, grid.ny, grid.hx.clone()),
        Axis::Y => (grid.ny, grid.nx, grid.hy.clone()),
    };
    if n_along < 5 {
        return Err(Error::config(format!(
            "finite differences need at least 5 nodes along the axis, got {n_along}"
        )));
    }
    let twelve_h = &ctx.real_from_u64(12) * &h;
    let read = |i_along: usize, i_other: usize| -> &Real {
        match axis {
            Axis::X => grid.get(i_along, i_other),
            Axis::Y => grid.get(i_other, i_along),
        }
    };
    let c = |v: i64| ctx.real_from_i64(v);
    let mut out = vec![ctx.zero(); grid.nx * grid.ny];
    for io in 0..n_other {
        for ia in 0..n_along {
            let num = if ia >= 2 && ia + 2 < n_along {
                let f = |k: i64| read((ia as i64 + k) as usize, io);
                &(&(f(-2) - &(&c(8) * f(-1))) + &(&c(8) * f(1))) - f(2)
            } else if ia < 2 {
                let f = |k: usize| read(k, io);
                if ia == 0 {
                    &(&(&(&c(-25) * f(0)) + &(&c(48) * f(1))) + &(&c(-36) * f(2)))
                        + &(&(&c(16) * f(3)) + &(&c(-3) * f(4)))
                } else {
                    &(&(&(&c(-3) * f(0)) + &(&c(-10) * f(1))) + &(&c(18) * f(2)))
                        + &(&(&c(-6) * f(3)) + f(4))
                }
            } else {
                // Mirror of the forward stencils at the far boundary.
                let last = n_along - 1;
                let f = |k: usize| read(last - k, io);
                if ia == last {
                    &(&(&(&c(25) * f(0)) + &(&c(-48) * f(1))) + &(&c(36) * f(2)))
                        + &(&(&c(-16) * f(3)) + &(&c(3) * f(4)))
                } else {
                    &(&(&(&c(3) * f(0)) + &(&c(10) * f(1))) + &(&c(-18) * f(2)))
                        + &(&(&c(6) * f(3)) - f(4))
                }
            };
            let d = &num / &twelve_h;
            let (ix, iy) = match axis {
                Axis::X => (ia, io),
                Axis::Y => (io, ia),
            };
            out[iy * grid.nx + ix] = d;
        }
    }
    Ok(Grid {
        rect: grid.rect.clone(),
        nx: grid.nx,
        ny: grid.ny,
        hx: grid.hx.clone(),
        hy: grid.hy.clone(),
        values: out,
    })
}

/// A grid-backed field: values and finite-difference derivatives up to a
/// fixed order, evaluated by snapping the query point to the nearest node.
pub struct GridField {
    /// Derivative grids indexed like jet coefficients: entry `(i, j)` holds
    /// `∂_x^i ∂_y^j f` sampled on the nodes.
    derivs: Vec<Grid>,
    max_order: u32,
}

impl GridField {
    /// Builds the derivative pyramid by repeated [`fd_partial`].
    pub fn new(grid: Grid, max_order: u32, ctx: &PrecisionContext) -> Result<GridField> {
        if max_order > MAX_INTERNAL_ORDER {
            return Err(Error::JetOrder {
                requested: max_order,
                max: MAX_INTERNAL_ORDER,
            });
        }
        let len = tri_index(0, max_order) + 1;
        let mut derivs: Vec<Option<Grid>> = vec![None; len];
        derivs[0] = Some(grid);
        for d in 1..=max_order {
            for j in 0..=d {
                let i = d - j;
                // Differentiate from a lower entry: prefer x-steps.
                let (src_i, src_j, axis) = if i > 0 {
                    (i - 1, j, Axis::X)
                } else {
                    (i, j - 1, Axis::Y)
                };
                let src = derivs[tri_index(src_i, src_j)]
                    .as_ref()
                    .expect("lower derivative grid already built");
                let g = fd_partial(src, axis, ctx)?;
                derivs[tri_index(i, j)] = Some(g);
            }
        }
        Ok(GridField {
            derivs: derivs.into_iter().map(|g| g.expect("filled")).collect(),
            max_order,
        })
    }

    /// Highest jet order this field can produce.
    pub fn max_order(&self) -> u32 {
        self.max_order
    }

    /// The underlying value grid.
    pub fn value_grid(&self) -> &Grid {
        &self.derivs[0]
    }

    /// Derivative grid `∂_x^i ∂_y^j f` (orders up to `max_order`).
    pub fn deriv_grid(&self, i: u32, j: u32) -> Result<&Grid> {
        if i + j > self.max_order {
            return Err(Error::JetOrder {
                requested: i + j,
                max: self.max_order,
            });
        }
        Ok(&self.derivs[tri_index(i, j)])
    }

    fn snap(&self, p: &Point) -> Result<(usize, usize)> {
        let g = &self.derivs[0];
        let ix = snap_index(&p.x, &g.rect.x0, &g.hx, g.nx)?;
        let iy = snap_index(&p.y, &g.rect.y0, &g.hy, g.ny)?;
        Ok((ix, iy))
    }
}

fn tri_index(i: u32, j: u32) -> usize {
    let d = i + j;
    (d * (d + 1) / 2 + j) as usize
}

fn snap_index(v: &Real, origin: &Real, h: &Real, n: usize) -> Result<usize> {
    let t = (v - origin).try_div(h)?;
    let tf = t.to_f64();
    if !tf.is_finite() {
        return Err(Error::domain("grid coordinate overflow"));
    }
    let idx = tf.round();
    if idx < -0.5 || idx > n as f64 - 0.5 {
        return Err(Error::domain(format!(
            "point component {v} outside the sampled grid"
        )));
    }
    Ok((idx.max(0.0) as usize).min(n - 1))
}

impl Field for GridField {
    fn tjet(&self, order: u32, sess: &mut Session) -> Result<TJet> {
        if order > self.max_order {
            return Err(Error::JetOrder {
                requested: order,
                max: self.max_order,
            });
        }
        let (ix, iy) = self.snap(sess.point())?;
        let ctx = sess.ctx();
        let mut jet = TJet::constant(ctx.zero(), order, ctx);
        for d in 0..=order {
            for j in 0..=d {
                let i = d - j;
                let value = self.derivs[tri_index(i, j)].get(ix, iy);
                let fact = factorial(i) * factorial(j);
                let coeff = value / &ctx.real_from_u64(fact);
                jet.add_coeff(i, j, &coeff);
            }
        }
        Ok(jet)
    }
}

fn factorial(n: u32) -> u64 {
    (1..=n as u64).product::<u64>().max(1)
}

/// Wraps a grid-backed field as a field handle.
pub fn grid_field(g: GridField) -> FieldRef {
    Arc::new(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::numeric::make_context;

    fn ctx() -> PrecisionContext {
        make_context(30, 11).unwrap()
    }

    fn pt(c: &PrecisionContext, x: &str, y: &str) -> Point {
        Point::new(c.real_from_str(x).unwrap(), c.real_from_str(y).unwrap())
    }

    #[test]
    fn graph_shares_common_subexpressions() {
        let c = ctx();
        // f = g + g with g = sin(x·y) must agree with 2·sin(x·y).
        let g = sin(mul(coord_x(), coord_y()));
        let f = add(g.clone(), g);
        let p = pt(&c, "0.3", "0.7");
        let v = field_value(&f, &p, &c).unwrap();
        let direct = (&p.x * &p.y).sin().mul_pow2(1);
        assert!((&v - &direct).abs() < c.real_from_str("1e-27").unwrap());
    }

    #[test]
    fn compiled_expression_matches_eval_jet() {
        let c = ctx();
        let e = parse("sin(x*y) + x^3/(2 + y)").unwrap();
        let f = compile_expr(&e, &c).unwrap();
        let p = pt(&c, "0.4", "0.9");
        let from_graph = field_jet(&f, &p, 2, &c).unwrap();
        let from_expr = crate::expr::eval_jet(&e, &p, 2, &c).unwrap();
        let tol = c.real_from_str("1e-26").unwrap();
        assert!((&from_graph.value - &from_expr.value).abs() < tol);
        let gg = from_graph.gradient().unwrap();
        let ge = from_expr.gradient().unwrap();
        assert!((&gg.x - &ge.x).abs() < tol);
        assert!((&gg.y - &ge.y).abs() < tol);
        let hg = from_graph.hessian().unwrap();
        let he = from_expr.hessian().unwrap();
        assert!((&hg.xx - &he.xx).abs() < tol);
        assert!((&hg.xy - &he.xy).abs() < tol);
        assert!((&hg.yy - &he.yy).abs() < tol);
    }

    #[test]
    fn partial_node_consumes_jet_order() {
        let c = ctx();
        let f = partial(partial(powi(coord_x(), 4), Axis::X), Axis::X);
        let p = pt(&c, "2", "0");
        // ∂xx x⁴ = 12x² = 48.
        assert_eq!(field_value(&f, &p, &c).unwrap(), c.real_from_u64(48));
        // Each nested derivative consumes one order of headroom: six of
        // them still evaluate pointwise, ∂x⁶ x⁸ = 20160·x² = 80640.
        let mut deep = powi(coord_x(), 8);
        for _ in 0..6 {
            deep = partial(deep, Axis::X);
        }
        assert_eq!(
            field_value(&deep, &p, &c).unwrap(),
            c.real_from_u64(80640)
        );
        // Requesting order 3 on top of six nestings exceeds the internal
        // cap and must fail cleanly.
        let err = field_jet(&deep, &p, 3, &c).unwrap_err();
        assert!(matches!(err, Error::JetOrder { .. }));
    }

    #[test]
    fn sqrt_floor_guards_singularities() {
        let c = ctx();
        let f = sqrt_floor(coord_x(), c.real_from_str("0.1").unwrap());
        let ok = field_value(&f, &pt(&c, "0.25", "0"), &c).unwrap();
        assert_eq!(ok, c.real_from_str("0.5").unwrap());
        let err = field_value(&f, &pt(&c, "0.05", "0"), &c).unwrap_err();
        assert!(matches!(err, Error::Singular { .. }));
    }

    #[test]
    fn poly_conversion_and_evaluation() {
        let c = ctx();
        let e = parse("(x + y)^2 - (x - y)^2").unwrap(); // = 4xy
        let p = Poly::from_expr(&e, &c).unwrap().unwrap();
        assert_eq!(p.degree(), 2);
        let f = poly_field(p);
        let v = field_value(&f, &pt(&c, "3", "5"), &c).unwrap();
        assert_eq!(v, c.real_from_u64(60));
        // Non-polynomial expressions are rejected.
        assert!(Poly::from_expr(&parse("sin(x)").unwrap(), &c)
            .unwrap()
            .is_none());
        assert!(Poly::from_expr(&parse("x/y").unwrap(), &c)
            .unwrap()
            .is_none());
        // Division by a constant is fine.
        assert!(Poly::from_expr(&parse("x/2").unwrap(), &c)
            .unwrap()
            .is_some());
    }

    #[test]
    fn poly_jets_are_exact() {
        let c = ctx();
        let e = parse("x^3*y + 2*y^2").unwrap();
        let p = Poly::from_expr(&e, &c).unwrap().unwrap();
        let f = poly_field(p);
        let jet = field_jet(&f, &pt(&c, "2", "3"), 3, &c).unwrap();
        assert_eq!(jet.value, c.real_from_u64(42)); // 8·3 + 18
        let g = jet.gradient().unwrap();
        assert_eq!(g.x, c.real_from_u64(36)); // 3x²y
        assert_eq!(g.y, c.real_from_u64(20)); // x³ + 4y
        let h = jet.hessian().unwrap();
        assert_eq!(h.xx, c.real_from_u64(36)); // 6xy
        assert_eq!(h.xy, c.real_from_u64(12)); // 3x²
        assert_eq!(h.yy, c.real_from_u64(4));
        let t = jet.third().unwrap();
        assert_eq!(t.xxx, c.real_from_u64(18)); // 6y
        assert_eq!(t.xxy, c.real_from_u64(12)); // 6x
    }

    #[test]
    fn defect_of_known_pair_is_diagonal() {
        // v = x² - y², w = (xy², x²y):
        // ½∇v⊗∇v + sym∇w = diag(2x² + y², x² + 2y²), so with
        // A = diag(3x² + y², x² + 3y²) the defect is diag(x², y²).
        let c = ctx();
        let v = compile_expr(&parse("x^2 - y^2").unwrap(), &c).unwrap();
        let w1 = compile_expr(&parse("x*y^2").unwrap(), &c).unwrap();
        let w2 = compile_expr(&parse("x^2*y").unwrap(), &c).unwrap();
        let a = SymField {
            xx: compile_expr(&parse("3*x^2 + y^2").unwrap(), &c).unwrap(),
            xy: constant(c.zero()),
            yy: compile_expr(&parse("x^2 + 3*y^2").unwrap(), &c).unwrap(),
        };
        let d = assemble_defect(&a, &v, &[w1, w2], &c);
        let p = pt(&c, "0.3", "0.7");
        let m = sym_value(&d, &p, &c).unwrap();
        let tol = c.real_from_str("1e-27").unwrap();
        assert!((&m.xx - &(&p.x * &p.x)).abs() < tol);
        assert!(m.xy.abs() < tol);
        assert!((&m.yy - &(&p.y * &p.y)).abs() < tol);
    }

    #[test]
    fn fd_partial_is_exact_on_quartics() {
        let c = ctx();
        let e = parse("x^4 + x^2*y^2 + y^3").unwrap();
        let f = compile_expr(&e, &c).unwrap();
        let rect = Rect::new(c.real_from_i64(-1), c.one(), c.real_from_i64(-1), c.one()).unwrap();
        let g = sample(&f, &rect, 11, 11, &c).unwrap();
        let gx = fd_partial(&g, Axis::X, &c).unwrap();
        let gy = fd_partial(&g, Axis::Y, &c).unwrap();
        // ∂x = 4x³ + 2xy², ∂y = 2x²y + 3y² — check every node including the
        // one-sided boundary layers.
        let tol = c.real_from_str("1e-24").unwrap();
        for iy in 0..11 {
            for ix in 0..11 {
                let p = g.node_point(ix, iy, &c);
                let ex = &(&c.real_from_u64(4) * &p.x.powi(3))
                    + &(&c.real_from_u64(2) * &(&p.x * &(&p.y * &p.y)));
                let ey = &(&c.real_from_u64(2) * &(&(&p.x * &p.x) * &p.y))
                    + &(&c.real_from_u64(3) * &(&p.y * &p.y));
                assert!(
                    (&ex - gx.get(ix, iy)).abs() < tol,
                    "x-derivative off at node ({ix},{iy})"
                );
                assert!(
                    (&ey - gy.get(ix, iy)).abs() < tol,
                    "y-derivative off at node ({ix},{iy})"
                );
            }
        }
    }

    #[test]
    fn grid_field_snaps_and_differentiates() {
        let c = ctx();
        let e = parse("x^2*y").unwrap();
        let f = compile_expr(&e, &c).unwrap();
        let rect = Rect::new(c.zero(), c.one(), c.zero(), c.one()).unwrap();
        let g = sample(&f, &rect, 21, 21, &c).unwrap();
        let gf = GridField::new(g, 2, &c).unwrap();
        let gfr = grid_field(gf);
        // Query slightly off a node: must snap to (0.5, 0.5).
        let p = pt(&c, "0.501", "0.4999");
        let jet = field_jet(&gfr, &p, 2, &c).unwrap();
        let tol = c.real_from_str("1e-20").unwrap();
        let half = c.real_from_str("0.5").unwrap();
        let expect = &(&half * &half) * &half;
        assert!((&jet.value - &expect).abs() < tol);
        let grad = jet.gradient().unwrap();
        assert!((&grad.x - &half).abs() < tol); // 2xy at (0.5, 0.5)
        assert!((&grad.y - &(&half * &half)).abs() < tol); // x²
        let h = jet.hessian().unwrap();
        assert!((&h.xx - &c.one()).abs() < tol); // 2y
        assert!((&h.xy - &c.one()).abs() < tol); // 2x
        assert!(h.yy.abs() < tol);
        // Far outside the grid: error.
        assert!(field_value(&gfr, &pt(&c, "2", "0.5"), &c).is_err());
    }

    #[test]
    fn sample_many_shares_sessions() {
        let c = ctx();
        let base = sin(mul(coord_x(), coord_y()));
        let f1 = add(base.clone(), coord_x());
        let f2 = mul(base, coord_y());
        let rect = Rect::new(c.zero(), c.one(), c.zero(), c.one()).unwrap();
        let grids = sample_many(&[&f1, &f2], &rect, 6, 6, &c).unwrap();
        assert_eq!(grids.len(), 2);
        let p = grids[0].node_point(3, 2, &c);
        let expect1 = field_value(&f1, &p, &c).unwrap();
        assert_eq!(*grids[0].get(3, 2), expect1);
    }

    #[test]
    fn zip_with_combines_grids() {
        let c = ctx();
        let rect = Rect::new(c.zero(), c.one(), c.zero(), c.one()).unwrap();
        let g1 = Grid::from_fn(&rect, 5, 5, &c, |p| Ok(p.x.clone())).unwrap();
        let g2 = Grid::from_fn(&rect, 5, 5, &c, |p| Ok(p.y.clone())).unwrap();
        let s = g1
            .zip_with(&[&g2], |_, _, vals| Ok(vals[0] + vals[1]))
            .unwrap();
        let q = s.get(2, 3);
        let expect = &c.real_from_str("0.5").unwrap() + &c.real_from_str("0.75").unwrap();
        assert_eq!(*q, expect);
    }
}
