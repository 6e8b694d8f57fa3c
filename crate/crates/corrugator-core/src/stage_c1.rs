//! Three-step corrugation stages: frequency planning, construction of the
//! corrugated pair, measurement of the step residuals, and certification of
//! the resulting defect reduction.
//!
//! One stage decomposes the current defect along the fixed rank-one frame,
//! corrugates `(v, w)` once per frame direction with increasing frequencies,
//! and certifies that the new defect is uniformly smaller while the pair
//! moved by at most the stage budget. Frequencies are chosen either by a
//! measured geometric search (the default) or from a-priori planning margins.

use crate::basis::{coeff_bound_factor, decompose, decompose_fields, frame_direction};
use crate::corrugation::{one_step, StepParams};
use crate::error::{Error, Result};
use crate::field::{
    add, assemble_defect, constant, div, field_jet, mul, sample_many, scale, sqrt_floor,
    sub, FieldRef, Grid, SymField, VecField,
};
use crate::jet::Axis;
use crate::numeric::{Point, PrecisionContext, Real, Rect, Rng, Vec2};

/// How a stage chooses its three frequencies.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum LambdaMode {
    /// Geometric search from an analytic anchor, validated by measurement.
    Search,
    /// Frequencies large enough that the planning margins hold pointwise.
    Apriori,
}

/// Tunable parameters of one corrugation stage.
#[derive(Clone)]
pub struct StageParams {
    /// Frequency selection mode.
    pub mode: LambdaMode,
    /// Uniform-change budget of the stage.
    pub epsilon: Real,
    /// Declared positivity floor of the initial frame coefficients.
    pub positivity_floor: Real,
    /// Geometric escalation factor of the frequency search.
    pub search_factor: Real,
    /// Hard cap of the frequency search.
    pub lambda_max: Real,
    /// Safety multiplier applied to planned frequencies in a-priori mode.
    pub safety: Real,
    /// Fraction of the change budget reserved for the first step.
    pub first_step_reserve: Real,
    /// Cumulative uniform-change shares per step, as multiples of the budget.
    pub change_shares: [Real; 3],
    /// Per-step residual budgets as fractions of the initial defect norm.
    pub residual_budgets: [Real; 3],
    /// Grid nodes per oscillation period on measurement grids.
    pub nodes_per_period: u32,
    /// Smallest measurement grid size in nodes per axis.
    pub grid_min: usize,
    /// Largest affordable measurement grid nodes per axis.
    pub grid_max: usize,
    /// Preferred node count of the final fine measurement grid.
    pub grid_fine: usize,
    /// Lattice size per axis of the planning and verification scans.
    pub scan_n: usize,
    /// Extra random points added to every scan.
    pub scan_random: u32,
    /// Random points used for a-posteriori pointwise checks.
    pub check_samples: u32,
    /// Optional fine window and node count on which the last step is
    /// measured directly when the full domain cannot afford its grid.
    pub subwindow: Option<(Rect, usize)>,
    /// Multiplier applied to every amplitude (zero disables corrugation).
    pub amplitude_scale: Real,
    /// Optional override of the smallest-defect-magnitude parameter.
    pub xi_override: Option<Real>,
    /// Escalate and fail on missed gates (true) or only record flags.
    pub enforce: bool,
    /// Seed of the deterministic scan sampling.
    pub seed: u64,
}

impl StageParams {
    /// Default parameters at the given precision context.
    pub fn new(ctx: &PrecisionContext) -> StageParams {
        let lit = |s: &str| ctx.real_from_str(s).expect("valid literal");
        StageParams {
            mode: LambdaMode::Search,
            epsilon: lit("0.1"),
            positivity_floor: lit("0.4"),
            search_factor: lit("1.1"),
            lambda_max: lit("1e7"),
            safety: ctx.one(),
            first_step_reserve: lit("0.91"),
            change_shares: [lit("0.93"), lit("0.993"), ctx.one()],
            residual_budgets: [
                ctx.one() / ctx.real_from_u64(12),
                ctx.one() / ctx.real_from_u64(10),
                ctx.one() / ctx.real_from_u64(20),
            ],
            nodes_per_period: 10,
            grid_min: 51,
            grid_max: 601,
            grid_fine: 501,
            scan_n: 101,
            scan_random: 1000,
            check_samples: 32,
            subwindow: None,
            amplitude_scale: ctx.one(),
            xi_override: None,
            enforce: true,
            seed: crate::numeric::DEFAULT_SEED,
        }
    }
}

/// Inputs of a stage: the current pair, the target matrix field, and the
/// working domain.
#[derive(Clone)]
pub struct StageInput {
    /// Scalar component of the pair.
    pub v: FieldRef,
    /// Vector component of the pair.
    pub w: VecField,
    /// Target symmetric matrix field.
    pub a_mat: SymField,
    /// Closed working domain.
    pub domain: Rect,
    /// Highest oscillation frequency already present in the inputs, if any;
    /// measurement grids are required to resolve it.
    pub oscillation: Option<Real>,
}

/// One recorded inequality with its witness point.
#[derive(Clone, Debug)]
pub struct SampleCheck {
    /// What the inequality certifies.
    pub name: String,
    /// Witness point.
    pub x: Real,
    /// Witness point.
    pub y: Real,
    /// Left-hand side; the check passes when `lhs ≤ rhs`.
    pub lhs: Real,
    /// Right-hand side.
    pub rhs: Real,
    /// Whether `lhs ≤ rhs` held when evaluated.
    pub pass: bool,
    /// Whether a failure is fatal for the stage.
    pub required: bool,
}

/// Quantities measured and certified during one stage.
#[derive(Clone, Debug)]
pub struct StageReport {
    /// Frequency selection mode of the run.
    pub mode_search: bool,
    /// Measured sup of the initial defect magnitude.
    pub d_norm: Real,
    /// Measured min of the initial defect magnitude.
    pub min_abs_d: Real,
    /// Smallest-defect-magnitude parameter used by the certification.
    pub xi: Real,
    /// Smallest initial frame coefficient over the scan.
    pub min_phi_initial: Real,
    /// Chosen frequencies, one per step.
    pub lambdas: [Real; 3],
    /// Per-step residual norms (measured where a grid was affordable,
    /// analytic bounds elsewhere).
    pub b_norms: [Real; 3],
    /// Whether each entry of `b_norms` is an analytic bound.
    pub b_norm_is_bound: [bool; 3],
    /// `(b_norms[0] + b_norms[1]) / d_norm`.
    pub b_ratio_two_steps: Real,
    /// Frame coefficients of the defect after the measured steps with the
    /// remaining planned amplitudes removed: their minima over the grid.
    pub min_phi: [Real; 3],
    /// `min_phi` lowered by the frame image of the outstanding residual
    /// bounds; this is what the positivity certificate uses.
    pub min_phi_certified: [Real; 3],
    /// Required lower floor of the certified coefficients.
    pub coefficient_floor: Real,
    /// Certified sup bound of the final defect magnitude.
    pub d_tilde_norm: Real,
    /// `d_tilde_norm / d_norm`.
    pub ratio_vs_norm: Real,
    /// `d_tilde_norm / xi`.
    pub ratio_vs_xi: Real,
    /// Certified sup of `|v_out − v_in|`.
    pub v_change: Real,
    /// Certified sup of `|w_out − w_in|`.
    pub w_change: Real,
    /// Certified sup of `|∇v_out − ∇v_in|`.
    pub grad_v_change: Real,
    /// Certified sup of `|∇w_out − ∇w_in|`.
    pub grad_w_change: Real,
    /// Stage change budget.
    pub epsilon: Real,
    /// Per-step flag: residual within one twelfth of the defect norm.
    pub condition_a: [bool; 3],
    /// Per-step flag: residual below the pointwise halving margin.
    pub condition_b: [bool; 3],
    /// Number of steps whose residual was grid-measured (the rest used
    /// analytic bounds).
    pub measured_steps: usize,
    /// Grid nodes per axis used by each step's measurement (0 = none).
    pub grids_used: [usize; 3],
    /// Residual of the last step measured on the optional subwindow.
    pub sub_b_last: Option<Real>,
    /// Sup of `|v_out − v_in|` on the optional subwindow.
    pub sub_v_change: Option<Real>,
    /// All recorded inequalities.
    pub checks: Vec<SampleCheck>,
}

/// Outcome of one stage.
pub struct StageOutcome {
    /// Corrugated scalar component.
    pub v: FieldRef,
    /// Corrugated vector component.
    pub w: VecField,
    /// Measurements and certificates.
    pub report: StageReport,
}

/// Outcome of an iterated run.
pub struct IterateOutcome {
    /// Final scalar component.
    pub v: FieldRef,
    /// Final vector component.
    pub w: VecField,
    /// One report per executed stage.
    pub reports: Vec<StageReport>,
}

// ---------------------------------------------------------------------------
// Pointwise envelope of the second derivatives along the corrugation chain
// ---------------------------------------------------------------------------

/// Running pointwise envelope of `|∇²v_k|` along a corrugation chain: the
/// base second derivatives plus one increment `|∇²a|/(λπ) + 4|∇a| + 4πλa`
/// per applied step.
#[derive(Clone)]
pub struct HessEnvelope {
    base: FieldRef,
    steps: Vec<(FieldRef, Real)>,
}

impl HessEnvelope {
    /// Envelope of a chain that starts at `v0` with no steps applied.
    pub fn new(v0: FieldRef) -> HessEnvelope {
        HessEnvelope {
            base: v0,
            steps: Vec::new(),
        }
    }

    /// Records one applied step.
    pub fn push(&mut self, amplitude: FieldRef, lambda: Real) {
        self.steps.push((amplitude, lambda));
    }

    /// Evaluates the envelope at a point.
    pub fn eval(&self, p: &Point, ctx: &PrecisionContext) -> Result<Real> {
        let vj = field_jet(&self.base, p, 2, ctx)?;
        let mut h = vj.hessian()?.frobenius();
        let four = ctx.real_from_u64(4);
        for (amp, lam) in &self.steps {
            let aj = field_jet(amp, p, 2, ctx)?;
            let ha = aj.hessian()?.frobenius();
            let na = aj.gradient()?.norm();
            let av = aj.value.abs();
            let inv_lambda_pi = (lam * &ctx.pi()).recip()?;
            let grow = &(&(&ha * &inv_lambda_pi) + &(&four * &na))
                + &(&(&four * &(&ctx.pi() * lam)) * &av);
            h = &h + &grow;
        }
        Ok(h)
    }
}

// ---------------------------------------------------------------------------
// Scanning helpers
// ---------------------------------------------------------------------------

/// Deterministic verification sample: an `n × n` lattice including the
/// boundary plus `extra` seeded random points.
pub(crate) fn scan_points(
    rect: &Rect,
    n: usize,
    extra: u32,
    seed: u64,
    ctx: &PrecisionContext,
) -> Result<Vec<Point>> {
    if n < 2 {
        return Err(Error::config(format!(
            "scan lattice needs at least 2 nodes per axis, got {n}"
        )));
    }
    let nm1 = ctx.real_from_u64((n - 1) as u64);
    let hx = rect.width() / nm1.clone();
    let hy = rect.height() / nm1;
    let mut pts = Vec::with_capacity(n * n + extra as usize);
    for iy in 0..n {
        let y = &rect.y0 + &(&hy * &ctx.real_from_u64(iy as u64));
        for ix in 0..n {
            let x = &rect.x0 + &(&hx * &ctx.real_from_u64(ix as u64));
            pts.push(Point::new(x, y.clone()));
        }
    }
    let mut rng = Rng::new(seed);
    for _ in 0..extra {
        pts.push(rng.next_point(ctx, rect));
    }
    Ok(pts)
}

/// Maximum of a pointwise quantity over the sample, with its witness.
pub(crate) fn sup_over<F>(pts: &[Point], mut f: F) -> Result<(Real, Point)>
where
    F: FnMut(&Point) -> Result<Real>,
{
    let mut best: Option<(Real, Point)> = None;
    for p in pts {
        let v = f(p)?;
        match &best {
            Some((b, _)) if !(v > *b) => {}
            _ => best = Some((v, p.clone())),
        }
    }
    best.ok_or_else(|| Error::config("empty verification sample"))
}

/// Minimum of a pointwise quantity over the sample, with its witness.
pub(crate) fn min_over<F>(pts: &[Point], mut f: F) -> Result<(Real, Point)>
where
    F: FnMut(&Point) -> Result<Real>,
{
    let mut best: Option<(Real, Point)> = None;
    for p in pts {
        let v = f(p)?;
        match &best {
            Some((b, _)) if !(v < *b) => {}
            _ => best = Some((v, p.clone())),
        }
    }
    best.ok_or_else(|| Error::config("empty verification sample"))
}

/// Pointwise Frobenius magnitude of a symmetric matrix field.
pub(crate) fn defect_magnitude(d: &SymField, p: &Point, ctx: &PrecisionContext) -> Result<Real> {
    Ok(crate::field::sym_value(d, p, ctx)?.frobenius())
}

fn powi2(f: FieldRef) -> FieldRef {
    crate::field::powi(f, 2)
}

// ---------------------------------------------------------------------------
// Frequency planning
// ---------------------------------------------------------------------------

/// Sups of one step's amplitude data over the verification sample.
#[derive(Clone, Debug)]
pub struct AmplitudeSups {
    /// Sup of the amplitude.
    pub a: Real,
    /// Sup of the amplitude gradient norm.
    pub grad_a: Real,
    /// Sup of the second-derivative envelope of the current chain.
    pub hess_prev: Real,
}

/// Scans the amplitude and the chain envelope over the sample.
pub fn amplitude_sups(
    amp: &FieldRef,
    env: &HessEnvelope,
    pts: &[Point],
    ctx: &PrecisionContext,
) -> Result<AmplitudeSups> {
    let mut sup_a: Option<Real> = None;
    let mut sup_na: Option<Real> = None;
    let mut sup_h: Option<Real> = None;
    for p in pts {
        let aj = field_jet(amp, p, 1, ctx)?;
        let a = aj.value.abs();
        let na = aj.gradient()?.norm();
        let h = env.eval(p, ctx)?;
        for (slot, v) in [(&mut sup_a, a), (&mut sup_na, na), (&mut sup_h, h)] {
            match slot {
                Some(b) if !(v > *b) => {}
                _ => *slot = Some(v),
            }
        }
    }
    Ok(AmplitudeSups {
        a: sup_a.ok_or_else(|| Error::config("empty verification sample"))?,
        grad_a: sup_na.unwrap(),
        hess_prev: sup_h.unwrap(),
    })
}

/// First-order coefficient of the residual bound `E/λ + F/λ²`.
fn residual_e(s: &AmplitudeSups, ctx: &PrecisionContext) -> Result<Real> {
    let inv_pi = ctx.pi().recip()?;
    Ok(&(&(&s.a * &s.hess_prev) * &inv_pi) + &(&(&s.a * &s.grad_a) * &inv_pi.div_pow2(1)))
}

/// Second-order coefficient of the residual bound `E/λ + F/λ²`.
fn residual_f(s: &AmplitudeSups, ctx: &PrecisionContext) -> Result<Real> {
    let inv_pi2 = (&ctx.pi() * &ctx.pi()).recip()?;
    Ok((&(&s.grad_a * &s.grad_a) * &inv_pi2).div_pow2(1))
}

/// Upper bound of a step's residual norm at frequency `lambda`.
fn residual_bound(e: &Real, f: &Real, lambda: &Real) -> Result<Real> {
    let inv = lambda.recip()?;
    Ok(&(e * &inv) + &(&(f * &inv) * &inv))
}

/// Search-mode anchor from precomputed sups: the smallest frequency whose
/// analytic residual bound meets the step's budget, kept above the uniform
/// floors.
fn anchor_from_sups(
    sups: &AmplitudeSups,
    step: usize,
    d_norm: &Real,
    prev_lambda: Option<&Real>,
    params: &StageParams,
    ctx: &PrecisionContext,
) -> Result<Real> {
    if step == 0 || step > 3 {
        return Err(Error::config(format!("step index {step} out of range 1..=3")));
    }
    let e = residual_e(sups, ctx)?;
    let f = residual_f(sups, ctx)?;
    let t = &params.residual_budgets[step - 1] * d_norm;
    let mut lambda = if t.is_zero() {
        ctx.zero()
    } else {
        // Positive root of T·λ² = E·λ + F.
        let disc = &(&e * &e) + &(&f * &t).mul_pow2(2);
        (&e + &disc.sqrt()?) / t.mul_pow2(1)
    };
    if step == 1 {
        // Reserve most of the change budget for the first (largest) step:
        // its own sup oscillation `a/(λπ)` must fit inside the reserve.
        let reserve = &(&params.first_step_reserve * &params.epsilon) * &ctx.pi();
        lambda = lambda.max(&(&sups.a / &reserve));
    } else {
        // Uniform-change floor of the later steps.
        let change_floor = &d_norm.sqrt()? / &params.epsilon;
        lambda = lambda.max(&change_floor);
    }
    if let Some(prev) = prev_lambda {
        lambda = lambda.max(prev);
    }
    lambda = lambda.max(&ctx.one());
    Ok(lambda)
}

/// Plans the search-mode frequency of step `step` (1-based): the anchor of
/// the geometric search grid. The grid escalates from this value by the
/// configured factor whenever a measured gate fails.
pub fn plan_lambda_search(
    amp: &FieldRef,
    env: &HessEnvelope,
    step: usize,
    d_norm: &Real,
    prev_lambda: Option<&Real>,
    domain: &Rect,
    params: &StageParams,
    ctx: &PrecisionContext,
) -> Result<Real> {
    let pts = scan_points(domain, params.scan_n, params.scan_random, params.seed, ctx)?;
    let sups = amplitude_sups(amp, env, &pts, ctx)?;
    anchor_from_sups(&sups, step, d_norm, prev_lambda, params, ctx)
}

/// A-priori frequency of step `step`: large enough that each of the three
/// planning-margin terms holds pointwise over the sample, times the safety
/// factor.
fn plan_lambda_apriori(
    amp: &FieldRef,
    env: &HessEnvelope,
    margin: &dyn Fn(&Point) -> Result<Real>,
    sups: &AmplitudeSups,
    step: usize,
    d_norm: &Real,
    prev_lambda: Option<&Real>,
    pts: &[Point],
    params: &StageParams,
    ctx: &PrecisionContext,
) -> Result<Real> {
    let cb = coeff_bound_factor(ctx);
    let inv_pi = ctx.pi().recip()?;
    let mut need: Real = ctx.zero();
    for p in pts {
        let aj = field_jet(amp, p, 1, ctx)?;
        let a = aj.value.abs();
        let na = aj.gradient()?.norm();
        let h = env.eval(p, ctx)?;
        let m = margin(p)?;
        if !(m > ctx.zero()) {
            return Err(Error::verification(
                "a-priori planning margin vanished at a sample point",
            ));
        }
        // cb·a·|∇a|/(2πλ) ≤ m/18  ⟺  λ ≥ 9·cb·a·|∇a|/(π·m)
        let nine = ctx.real_from_u64(9);
        let t1 = &(&(&(&nine * &cb) * &inv_pi) * &(&a * &na)) / &m;
        // cb·a·h/(πλ) ≤ m/18  ⟺  λ ≥ 18·cb·a·h/(π·m)
        let t2 = &(&(&(&nine.mul_pow2(1) * &cb) * &inv_pi) * &(&a * &h)) / &m;
        // cb·|∇a|²/(2π²λ²) ≤ m/18  ⟺  λ ≥ 3·√cb·|∇a|/(π·√m)
        let three = ctx.real_from_u64(3);
        let t3 = &(&(&three * &cb.sqrt()?) * &inv_pi) * &(&na / &m.sqrt()?);
        for t in [t1, t2, t3] {
            need = need.max(&t);
        }
    }
    // A hair of headroom so the planned terms stay below their margins
    // under rounding even when the worst sample sits exactly at the sup.
    let guard = &ctx.one() + &ctx.one().div_pow2(40);
    let mut lambda = &(&need * &guard) * &params.safety;
    if step == 1 {
        let reserve = &(&params.first_step_reserve * &params.epsilon) * &ctx.pi();
        lambda = lambda.max(&(&sups.a / &reserve));
    } else {
        let change_floor = &d_norm.sqrt()? / &params.epsilon;
        lambda = lambda.max(&change_floor);
    }
    if let Some(prev) = prev_lambda {
        lambda = lambda.max(prev);
    }
    Ok(lambda.max(&ctx.one()))
}

// ---------------------------------------------------------------------------
// Grid measurement
// ---------------------------------------------------------------------------

/// Everything measured about a committed step on its grid.
struct MeasuredState {
    /// Step index (1-based) of the measurement.
    step: usize,
    /// Grid nodes per axis.
    n: usize,
    /// Defect grids `xx, xy, yy` of the pair after this step.
    d: [Grid; 3],
    /// Values of the current scalar component.
    v: Grid,
    /// Gradient grids of the current scalar component.
    v_dx: Grid,
    v_dy: Grid,
    /// Values and gradients of the current vector component.
    w1: Grid,
    w2: Grid,
    w1_dx: Grid,
    w1_dy: Grid,
    w2_dx: Grid,
    w2_dy: Grid,
    /// Values and gradients of the stage inputs on the same grid.
    v0: Grid,
    v0_dx: Grid,
    v0_dy: Grid,
    w01: Grid,
    w02: Grid,
    w01_dx: Grid,
    w01_dy: Grid,
    w02_dx: Grid,
    w02_dy: Grid,
}

/// Defect grids from sampled values and finite-difference gradients.
fn defect_grids(
    v_dx: &Grid,
    v_dy: &Grid,
    w1_dx: &Grid,
    w1_dy: &Grid,
    w2_dx: &Grid,
    w2_dy: &Grid,
    axx: &Grid,
    axy: &Grid,
    ayy: &Grid,
) -> Result<[Grid; 3]> {
    let dxx = axx.zip_with(&[v_dx, w1_dx], |_, _, t| {
        Ok(t[0] - &(&(t[1] * t[1]).div_pow2(1) + t[2]))
    })?;
    let dxy = axy.zip_with(&[v_dx, v_dy, w1_dy, w2_dx], |_, _, t| {
        Ok(t[0] - &(&(t[1] * t[2]).div_pow2(1) + &(t[3] + t[4]).div_pow2(1)))
    })?;
    let dyy = ayy.zip_with(&[v_dy, w2_dy], |_, _, t| {
        Ok(t[0] - &(&(t[1] * t[1]).div_pow2(1) + t[2]))
    })?;
    Ok([dxx, dxy, dyy])
}

/// Samples the current pair, the stage inputs, and the target on one grid,
/// with gradients taken by exact derivative nodes, then assembles the
/// defect of the current pair.
fn measure_state(
    step: usize,
    v: &FieldRef,
    w: &VecField,
    v0: &FieldRef,
    w0: &VecField,
    a_mat: &SymField,
    rect: &Rect,
    n: usize,
    ctx: &PrecisionContext,
) -> Result<MeasuredState> {
    use crate::field::partial;
    let dx = |f: &FieldRef| partial(f.clone(), Axis::X);
    let dy = |f: &FieldRef| partial(f.clone(), Axis::Y);
    let derived = [
        dx(v),
        dy(v),
        dx(&w[0]),
        dy(&w[0]),
        dx(&w[1]),
        dy(&w[1]),
        dx(v0),
        dy(v0),
        dx(&w0[0]),
        dy(&w0[0]),
        dx(&w0[1]),
        dy(&w0[1]),
    ];
    let fields: [&FieldRef; 21] = [
        v,
        &w[0],
        &w[1],
        v0,
        &w0[0],
        &w0[1],
        &a_mat.xx,
        &a_mat.xy,
        &a_mat.yy,
        &derived[0],
        &derived[1],
        &derived[2],
        &derived[3],
        &derived[4],
        &derived[5],
        &derived[6],
        &derived[7],
        &derived[8],
        &derived[9],
        &derived[10],
        &derived[11],
    ];
    let mut grids = sample_many(&fields, rect, n, n, ctx)?.into_iter();
    let gv = grids.next().unwrap();
    let gw1 = grids.next().unwrap();
    let gw2 = grids.next().unwrap();
    let gv0 = grids.next().unwrap();
    let gw01 = grids.next().unwrap();
    let gw02 = grids.next().unwrap();
    let gaxx = grids.next().unwrap();
    let gaxy = grids.next().unwrap();
    let gayy = grids.next().unwrap();
    let v_dx = grids.next().unwrap();
    let v_dy = grids.next().unwrap();
    let w1_dx = grids.next().unwrap();
    let w1_dy = grids.next().unwrap();
    let w2_dx = grids.next().unwrap();
    let w2_dy = grids.next().unwrap();
    let v0_dx = grids.next().unwrap();
    let v0_dy = grids.next().unwrap();
    let w01_dx = grids.next().unwrap();
    let w01_dy = grids.next().unwrap();
    let w02_dx = grids.next().unwrap();
    let w02_dy = grids.next().unwrap();
    let d = defect_grids(
        &v_dx, &v_dy, &w1_dx, &w1_dy, &w2_dx, &w2_dy, &gaxx, &gaxy, &gayy,
    )?;
    Ok(MeasuredState {
        step,
        n,
        d,
        v: gv,
        v_dx,
        v_dy,
        w1: gw1,
        w2: gw2,
        w1_dx,
        w1_dy,
        w2_dx,
        w2_dy,
        v0: gv0,
        v0_dx,
        v0_dy,
        w01: gw01,
        w02: gw02,
        w01_dx,
        w01_dy,
        w02_dx,
        w02_dy,
    })
}

/// Sup over the grid of the residual `|D_prev − a²·η⊗η − D_cur|`, with the
/// witness node, plus the pointwise halving-margin flag: whether the
/// residual stays below `(φ_i/2 − floor)/(3·cb)` for every initial
/// coefficient `φ_i` at every node.
#[allow(clippy::too_many_arguments)]
fn residual_sup(
    d_prev: &[Grid; 3],
    d_cur: &[Grid; 3],
    amp: &Grid,
    eta: &Vec2,
    phi: &[Grid; 3],
    floor: &Real,
    ctx: &PrecisionContext,
) -> Result<(Real, Point, bool)> {
    let exx = &eta.x * &eta.x;
    let exy = &eta.x * &eta.y;
    let eyy = &eta.y * &eta.y;
    let cb3 = &coeff_bound_factor(ctx) * &ctx.real_from_u64(3);
    let inv_cb3 = cb3.recip()?;
    let mut best: Option<(Real, (usize, usize))> = None;
    let mut margin_ok = true;
    let n = amp.nx();
    for iy in 0..amp.ny() {
        for ix in 0..n {
            let a2 = {
                let a = amp.get(ix, iy);
                a * a
            };
            let bxx = &(d_prev[0].get(ix, iy) - &(&a2 * &exx)) - d_cur[0].get(ix, iy);
            let bxy = &(d_prev[1].get(ix, iy) - &(&a2 * &exy)) - d_cur[1].get(ix, iy);
            let byy = &(d_prev[2].get(ix, iy) - &(&a2 * &eyy)) - d_cur[2].get(ix, iy);
            let frob = frob3(&bxx, &bxy, &byy)?;
            if margin_ok {
                for pk in phi {
                    let allowance =
                        &(&pk.get(ix, iy).div_pow2(1) - floor) * &inv_cb3;
                    if !(frob < allowance) {
                        margin_ok = false;
                        break;
                    }
                }
            }
            match &best {
                Some((b, _)) if !(frob > *b) => {}
                _ => best = Some((frob, (ix, iy))),
            }
        }
    }
    let (sup, (ix, iy)) = best.ok_or_else(|| Error::config("empty residual grid"))?;
    Ok((sup, amp.node_point(ix, iy, ctx), margin_ok))
}

fn frob3(xx: &Real, xy: &Real, yy: &Real) -> Result<Real> {
    (&(&(xx * xx) + &(xy * xy).mul_pow2(1)) + &(yy * yy)).sqrt()
}

/// Sup over the grid of `|g − g0|` for paired value grids.
fn sup_diff(g: &Grid, g0: &Grid, ctx: &PrecisionContext) -> Result<(Real, Point)> {
    let mut best: Option<(Real, (usize, usize))> = None;
    for iy in 0..g.ny() {
        for ix in 0..g.nx() {
            let d = (g.get(ix, iy) - g0.get(ix, iy)).abs();
            match &best {
                Some((b, _)) if !(d > *b) => {}
                _ => best = Some((d, (ix, iy))),
            }
        }
    }
    let (sup, (ix, iy)) = best.ok_or_else(|| Error::config("empty grid"))?;
    Ok((sup, g.node_point(ix, iy, ctx)))
}

/// Sup over the grid of the Euclidean norm of stacked differences.
fn sup_diff_norm(pairs: &[(&Grid, &Grid)], ctx: &PrecisionContext) -> Result<(Real, Point)> {
    let first = pairs
        .first()
        .ok_or_else(|| Error::config("empty grid list"))?
        .0;
    let mut best: Option<(Real, (usize, usize))> = None;
    for iy in 0..first.ny() {
        for ix in 0..first.nx() {
            let mut s = {
                let d = pairs[0].0.get(ix, iy) - pairs[0].1.get(ix, iy);
                &d * &d
            };
            for (g, g0) in &pairs[1..] {
                let d = g.get(ix, iy) - g0.get(ix, iy);
                s = &s + &(&d * &d);
            }
            let norm = s.sqrt()?;
            match &best {
                Some((b, _)) if !(norm > *b) => {}
                _ => best = Some((norm, (ix, iy))),
            }
        }
    }
    let (sup, (ix, iy)) = best.ok_or_else(|| Error::config("empty grid"))?;
    Ok((sup, first.node_point(ix, iy, ctx)))
}

// ---------------------------------------------------------------------------
// The stage driver
// ---------------------------------------------------------------------------

/// Number of grid nodes needed to resolve frequency `freq` over `width`
/// at the configured sampling density.
fn nodes_needed(width: &Real, freq: &Real, per: u32) -> usize {
    let need = width.to_f64() * freq.to_f64() * per as f64;
    if !need.is_finite() || need >= usize::MAX as f64 {
        return usize::MAX;
    }
    need.ceil() as usize + 1
}

struct StepRecord {
    lambda: Real,
    b_norm: Real,
    b_is_bound: bool,
    cond_a: bool,
    cond_b: bool,
    grid_used: usize,
    sup_a: Real,
    sup_na: Real,
    bound: Real,
}

/// Runs one three-step corrugation stage and certifies its outcome.
///
/// In search mode each step's frequency starts at an analytic anchor and
/// escalates geometrically until the measured gates pass; in a-priori mode
/// the frequencies come from pointwise planning margins and a failed
/// certificate is an error rather than a reason to escalate.
pub fn run_stage_c1(
    input: &StageInput,
    params: &StageParams,
    ctx: &PrecisionContext,
) -> Result<StageOutcome> {
    if params.epsilon <= ctx.zero() {
        return Err(Error::config("stage change budget must be positive"));
    }
    if params.grid_min < 5 || params.grid_max < params.grid_min {
        return Err(Error::config("grid size bounds are inconsistent"));
    }
    if !(params.positivity_floor > ctx.zero()) {
        return Err(Error::config(
            "the positivity floor of the frame coefficients must be positive",
        ));
    }
    let pts = scan_points(
        &input.domain,
        params.scan_n,
        params.scan_random,
        params.seed,
        ctx,
    )?;
    let cb = coeff_bound_factor(ctx);

    // Initial defect, its frame coefficients, and the stage parameters
    // derived from them.
    let d0 = assemble_defect(&input.a_mat, &input.v, &input.w, ctx);
    let phi = decompose_fields(&d0, ctx);
    let (min_phi_initial, _) = min_over(&pts, |p| {
        let mut m: Option<Real> = None;
        let mut sess = crate::field::Session::new(ctx, p);
        for f in &phi {
            let v = sess.eval(f, 0)?.value().clone();
            m = Some(match m {
                None => v,
                Some(b) => b.min(&v),
            });
        }
        Ok(m.unwrap())
    })?;
    if !(min_phi_initial >= params.positivity_floor) {
        return Err(Error::domain(format!(
            "initial frame coefficients reach {} below the declared floor {}",
            min_phi_initial.to_decimal_string(6),
            params.positivity_floor.to_decimal_string(6)
        )));
    }
    let (d_norm, _) = sup_over(&pts, |p| defect_magnitude(&d0, p, ctx))?;
    let (min_abs_d, _) = min_over(&pts, |p| defect_magnitude(&d0, p, ctx))?;
    if !(d_norm > ctx.zero()) {
        return Err(Error::domain("initial defect vanishes on the whole sample"));
    }
    let xi = match &params.xi_override {
        Some(x) => {
            if !(*x > ctx.zero() && *x <= min_abs_d) {
                return Err(Error::domain(format!(
                    "xi override {} outside (0, min |D|] = (0, {}]",
                    x.to_decimal_string(6),
                    min_abs_d.to_decimal_string(6)
                )));
            }
            x.clone()
        }
        None => min_abs_d.clone(),
    };

    // Certified coefficient floor of the outcome.
    let coefficient_floor = match params.mode {
        LambdaMode::Search => params.positivity_floor.div_pow2(2),
        LambdaMode::Apriori => {
            &(&xi * &params.positivity_floor) / &d_norm.mul_pow2(1)
        }
    };

    // Amplitudes. In search mode the halving is uniform; in a-priori mode it
    // follows the pointwise split `δ(x) = ξ / (2|D(x)|)`.
    let delta_field: Option<FieldRef> = match params.mode {
        LambdaMode::Search => None,
        LambdaMode::Apriori => Some(div(
            constant(xi.div_pow2(1)),
            sqrt_floor(
                add(
                    add(powi2(d0.xx.clone()), scale(ctx.real_from_u64(2), powi2(d0.xy.clone()))),
                    powi2(d0.yy.clone()),
                ),
                ctx.zero(),
            ),
        )),
    };
    let mut amps: Vec<FieldRef> = Vec::with_capacity(3);
    for pk in &phi {
        let squared = match &delta_field {
            None => scale(ctx.one().div_pow2(1), pk.clone()),
            Some(delta) => mul(sub(constant(ctx.one()), delta.clone()), pk.clone()),
        };
        let mut amp = sqrt_floor(squared, ctx.zero());
        if !(params.amplitude_scale == ctx.one()) {
            amp = scale(params.amplitude_scale.clone(), amp);
        }
        amps.push(amp);
    }

    // The margin used by a-priori planning: δ(x) · min_k φ_k(x).
    let margin = |p: &Point| -> Result<Real> {
        let mut sess = crate::field::Session::new(ctx, p);
        let mut m: Option<Real> = None;
        for f in &phi {
            let v = sess.eval(f, 0)?.value().clone();
            m = Some(match m {
                None => v,
                Some(b) => b.min(&v),
            });
        }
        let phi_min = m.unwrap();
        Ok(match &delta_field {
            None => phi_min.div_pow2(1),
            Some(delta) => {
                let dv = sess.eval(delta, 0)?.value().clone();
                &dv * &phi_min
            }
        })
    };

    let mut env = HessEnvelope::new(input.v.clone());
    let mut cur_v = input.v.clone();
    let mut cur_w = input.w.clone();
    let mut records: Vec<StepRecord> = Vec::with_capacity(3);
    let mut measured: Option<MeasuredState> = None;
    let mut cum_b = ctx.zero();
    let mut change_base = ctx.zero();
    let mut failures: Vec<String> = Vec::new();
    let mut checks: Vec<SampleCheck> = Vec::new();
    let width = input.domain.width();

    for k in 1..=3usize {
        let eta = frame_direction(k, ctx)?;
        let sups = amplitude_sups(&amps[k - 1], &env, &pts, ctx)?;
        let e_coef = residual_e(&sups, ctx)?;
        let f_coef = residual_f(&sups, ctx)?;
        let prev_lambda = records.last().map(|r| r.lambda.clone());
        let mut lambda = match params.mode {
            LambdaMode::Search => {
                anchor_from_sups(&sups, k, &d_norm, prev_lambda.as_ref(), params, ctx)?
            }
            LambdaMode::Apriori => plan_lambda_apriori(
                &amps[k - 1],
                &env,
                &margin,
                &sups,
                k,
                &d_norm,
                prev_lambda.as_ref(),
                &pts,
                params,
                ctx,
            )?,
        };
        loop {
            if lambda > params.lambda_max {
                return Err(Error::verification(format!(
                    "frequency search for step {k} exceeded the cap {}: \
                     last candidate {}, budget {} of defect norm {}",
                    params.lambda_max.to_decimal_string(4),
                    lambda.to_decimal_string(6),
                    params.residual_budgets[k - 1].to_decimal_string(4),
                    d_norm.to_decimal_string(6)
                )));
            }
            let step = StepParams {
                amplitude: amps[k - 1].clone(),
                direction: eta.clone(),
                lambda: lambda.clone(),
            };
            let (v_new, w_new) = one_step(&cur_v, &cur_w, &step, ctx)?;
            let bound = residual_bound(&e_coef, &f_coef, &lambda)?;

            // Resolve both the new frequency and everything already present.
            let mut resolve = lambda.clone();
            if let Some(osc) = &input.oscillation {
                resolve = resolve.max(osc);
            }
            let n_req = nodes_needed(&width, &resolve, params.nodes_per_period);
            let feasible = n_req <= params.grid_max;
            let mut candidate: Option<MeasuredState> = None;
            let (b_norm, b_is_bound, cond_b, grid_used) = if feasible {
                let mut n = n_req.max(params.grid_min);
                if k >= 2 {
                    n = n.max(params.grid_fine).min(params.grid_max);
                }
                let state =
                    measure_state(k, &v_new, &w_new, &input.v, &input.w, &input.a_mat, &input.domain, n, ctx)?;
                // The previous defect on the same grid: compute from the
                // previous pair when a step precedes this one, else the
                // exact inputs.
                let d_prev: [Grid; 3] = match &measured {
                    Some(m) if m.n == n => m.d.clone(),
                    _ => {
                        let prev =
                            measure_state(k - 1, &cur_v, &cur_w, &input.v, &input.w, &input.a_mat, &input.domain, n, ctx)?;
                        prev.d
                    }
                };
                let amp_grid = crate::field::sample(&amps[k - 1], &input.domain, n, n, ctx)?;
                let phi_grids: [Grid; 3] = {
                    let gs = sample_many(
                        &[&phi[0], &phi[1], &phi[2]],
                        &input.domain,
                        n,
                        n,
                        ctx,
                    )?;
                    let mut it = gs.into_iter();
                    [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
                };
                let (sup, _at, margin_ok) = residual_sup(
                    &d_prev,
                    &state.d,
                    &amp_grid,
                    &eta,
                    &phi_grids,
                    &coefficient_floor,
                    ctx,
                )?;
                candidate = Some(state);
                (sup, false, margin_ok, n)
            } else {
                // No affordable grid: gate on the analytic bound. The
                // halving-margin flag compares the bound against the scan
                // minimum of the allowance.
                let inv_cb3 = (&cb * &ctx.real_from_u64(3)).recip()?;
                let (allowance_min, _) = min_over(&pts, |p| {
                    let mut sess = crate::field::Session::new(ctx, p);
                    let mut m: Option<Real> = None;
                    for f in &phi {
                        let v = sess.eval(f, 0)?.value().clone();
                        m = Some(match m {
                            None => v,
                            Some(b) => b.min(&v),
                        });
                    }
                    Ok(&(&m.unwrap().div_pow2(1) - &coefficient_floor) * &inv_cb3)
                })?;
                (bound.clone(), true, bound < allowance_min, 0)
            };

            // Gates.
            let mut gate_fail: Option<String> = None;
            if params.enforce {
                let cum_candidate = &cum_b + &b_norm;
                let budget = &(&ctx.real_from_u64(k as u64) * &d_norm)
                    / &ctx.real_from_u64(12);
                if !(cum_candidate <= budget) {
                    gate_fail = Some(format!(
                        "cumulative residual {} exceeds {} after step {k}",
                        cum_candidate.to_decimal_string(6),
                        budget.to_decimal_string(6)
                    ));
                }
                if gate_fail.is_none() {
                    let change = match &candidate {
                        Some(state) => sup_diff(&state.v, &state.v0, ctx)?.0,
                        None => {
                            let osc = &sups.a / &(&lambda * &ctx.pi());
                            &change_base + &osc
                        }
                    };
                    let share = &params.change_shares[k - 1] * &params.epsilon;
                    if !(change <= share) {
                        gate_fail = Some(format!(
                            "uniform change {} exceeds the step share {} after step {k}",
                            change.to_decimal_string(6),
                            share.to_decimal_string(6)
                        ));
                    }
                }
            }
            if gate_fail.is_none() || !params.enforce {
                // Commit.
                let change_now = match &candidate {
                    Some(state) => sup_diff(&state.v, &state.v0, ctx)?.0,
                    None => {
                        let osc = &sups.a / &(&lambda * &ctx.pi());
                        &change_base + &osc
                    }
                };
                change_base = change_now;
                cum_b = &cum_b + &b_norm;
                if let Some(state) = candidate {
                    measured = Some(state);
                }
                let cond_a = {
                    let cap = &d_norm / &ctx.real_from_u64(12);
                    b_norm <= cap
                };
                records.push(StepRecord {
                    lambda: lambda.clone(),
                    b_norm,
                    b_is_bound,
                    cond_a,
                    cond_b,
                    grid_used,
                    sup_a: sups.a.clone(),
                    sup_na: sups.grad_a.clone(),
                    bound,
                });
                cur_v = v_new;
                cur_w = w_new;
                env.push(amps[k - 1].clone(), lambda.clone());
                break;
            }
            let reason = gate_fail.unwrap();
            if params.mode == LambdaMode::Apriori {
                return Err(Error::verification(format!(
                    "a-priori frequency for step {k} failed a gate: {reason}"
                )));
            }
            lambda = &lambda * &params.search_factor;
        }
    }

    // ------------------------------------------------------------------
    // Final certification.
    // ------------------------------------------------------------------
    let m_index = measured.as_ref().map(|m| m.step).unwrap_or(0);
    let outstanding: Vec<usize> = (m_index + 1..=3).collect();
    let mut outstanding_bound = ctx.zero();
    for &i in &outstanding {
        outstanding_bound = &outstanding_bound + &records[i - 1].bound;
    }

    // Certified final-defect sup and coefficient minima.
    let (lead_sup, lead_at, phi_mins): (Real, Point, [(Real, Point); 3]);
    match &measured {
        Some(state) => {
            // Remove the outstanding planned amplitude parts from the
            // measured defect, then take frame minima and the magnitude sup.
            let mut amp_grids: Vec<(Grid, Vec2)> = Vec::new();
            for &i in &outstanding {
                let g = crate::field::sample(&amps[i - 1], &input.domain, state.n, state.n, ctx)?;
                amp_grids.push((g, frame_direction(i, ctx)?));
            }
            let mut best_sup: Option<(Real, (usize, usize))> = None;
            let mut mins: [Option<(Real, (usize, usize))>; 3] = [None, None, None];
            for iy in 0..state.n {
                for ix in 0..state.n {
                    let mut xx = state.d[0].get(ix, iy).clone();
                    let mut xy = state.d[1].get(ix, iy).clone();
                    let mut yy = state.d[2].get(ix, iy).clone();
                    for (g, eta) in &amp_grids {
                        let a = g.get(ix, iy);
                        let a2 = a * a;
                        xx = &xx - &(&a2 * &(&eta.x * &eta.x));
                        xy = &xy - &(&a2 * &(&eta.x * &eta.y));
                        yy = &yy - &(&a2 * &(&eta.y * &eta.y));
                    }
                    let sym = crate::numeric::Sym2::new(xx, xy, yy);
                    let frob = sym.frobenius();
                    match &best_sup {
                        Some((b, _)) if !(frob > *b) => {}
                        _ => best_sup = Some((frob, (ix, iy))),
                    }
                    let coeffs = decompose(&sym, ctx);
                    for (slot, c) in mins.iter_mut().zip(coeffs.into_iter()) {
                        match slot {
                            Some((b, _)) if !(c < *b) => {}
                            _ => *slot = Some((c, (ix, iy))),
                        }
                    }
                }
            }
            let (sup, (ix, iy)) = best_sup.unwrap();
            lead_sup = sup;
            lead_at = state.d[0].node_point(ix, iy, ctx);
            let unwrap_min = |o: Option<(Real, (usize, usize))>| {
                let (v, (ix, iy)) = o.unwrap();
                (v, state.d[0].node_point(ix, iy, ctx))
            };
            let [m1, m2, m3] = mins;
            phi_mins = [unwrap_min(m1), unwrap_min(m2), unwrap_min(m3)];
        }
        None => {
            // Fully analytic: scan the initial defect minus all planned
            // amplitude parts.
            let mut xx = d0.xx.clone();
            let mut xy = d0.xy.clone();
            let mut yy = d0.yy.clone();
            for (i, amp) in amps.iter().enumerate() {
                let eta = frame_direction(i + 1, ctx)?;
                let a2 = powi2(amp.clone());
                xx = sub(xx, scale(&eta.x * &eta.x, a2.clone()));
                xy = sub(xy, scale(&eta.x * &eta.y, a2.clone()));
                yy = sub(yy, scale(&eta.y * &eta.y, a2));
            }
            let reduced = SymField { xx, xy, yy };
            let (sup, at) = sup_over(&pts, |p| defect_magnitude(&reduced, p, ctx))?;
            lead_sup = sup;
            lead_at = at;
            let coeff_fields = decompose_fields(&reduced, ctx);
            let mut tmp: Vec<(Real, Point)> = Vec::with_capacity(3);
            for f in &coeff_fields {
                tmp.push(min_over(&pts, |p| crate::field::field_value(f, p, ctx))?);
            }
            phi_mins = [tmp[0].clone(), tmp[1].clone(), tmp[2].clone()];
        }
    }

    let d_tilde_norm = &lead_sup + &outstanding_bound;
    let margin_drop = &cb * &outstanding_bound;
    let min_phi = [
        phi_mins[0].0.clone(),
        phi_mins[1].0.clone(),
        phi_mins[2].0.clone(),
    ];
    let min_phi_certified = [
        &min_phi[0] - &margin_drop,
        &min_phi[1] - &margin_drop,
        &min_phi[2] - &margin_drop,
    ];

    // Changes of the pair: measured up to the last grid, then analytic
    // one-step bounds for the outstanding steps.
    let (mut v_change, mut w_change, mut grad_v_change, mut grad_w_change, mut sup_grad_v);
    match &measured {
        Some(state) => {
            v_change = sup_diff(&state.v, &state.v0, ctx)?.0;
            w_change = sup_diff_norm(&[(&state.w1, &state.w01), (&state.w2, &state.w02)], ctx)?.0;
            grad_v_change =
                sup_diff_norm(&[(&state.v_dx, &state.v0_dx), (&state.v_dy, &state.v0_dy)], ctx)?.0;
            grad_w_change = sup_diff_norm(
                &[
                    (&state.w1_dx, &state.w01_dx),
                    (&state.w1_dy, &state.w01_dy),
                    (&state.w2_dx, &state.w02_dx),
                    (&state.w2_dy, &state.w02_dy),
                ],
                ctx,
            )?
            .0;
            let mut best: Option<Real> = None;
            for iy in 0..state.n {
                for ix in 0..state.n {
                    let gx = state.v_dx.get(ix, iy);
                    let gy = state.v_dy.get(ix, iy);
                    let norm = (&(gx * gx) + &(gy * gy)).sqrt()?;
                    match &best {
                        Some(b) if !(norm > *b) => {}
                        _ => best = Some(norm),
                    }
                }
            }
            sup_grad_v = best.unwrap();
        }
        None => {
            v_change = ctx.zero();
            w_change = ctx.zero();
            grad_v_change = ctx.zero();
            grad_w_change = ctx.zero();
            sup_grad_v = sup_over(&pts, |p| {
                let j = field_jet(&input.v, p, 1, ctx)?;
                Ok(j.gradient()?.norm())
            })?
            .0;
        }
    }
    // Hessian sup chain for the outstanding-step bounds.
    let mut hess_running = {
        let base = HessEnvelope {
            base: input.v.clone(),
            steps: records
                .iter()
                .take(m_index)
                .enumerate()
                .map(|(i, r)| (amps[i].clone(), r.lambda.clone()))
                .collect(),
        };
        sup_over(&pts, |p| base.eval(p, ctx))?.0
    };
    for &i in &outstanding {
        let r = &records[i - 1];
        let inv_lambda_pi = (&r.lambda * &ctx.pi()).recip()?;
        // |v_i − v_{i−1}| ≤ a/(λπ).
        v_change = &v_change + &(&r.sup_a * &inv_lambda_pi);
        // |w_i − w_{i−1}| ≤ (a/λπ)(|∇v| + a/4).
        w_change = &w_change
            + &(&(&r.sup_a * &inv_lambda_pi) * &(&sup_grad_v + &r.sup_a.div_pow2(2)));
        // |∇v_i − ∇v_{i−1}| ≤ |∇a|/(λπ) + 2a.
        let grad_step = &(&r.sup_na * &inv_lambda_pi) + &r.sup_a.mul_pow2(1);
        grad_v_change = &grad_v_change + &grad_step;
        // |∇w_i − ∇w_{i−1}| ≤ 2a|∇v| + a² + (1/λ)(|∇v||∇a|/π + a·H/π + a|∇a|/2π).
        let inv_pi = ctx.pi().recip()?;
        let lead = &(&r.sup_a * &sup_grad_v).mul_pow2(1) + &(&r.sup_a * &r.sup_a);
        let tail = &(&(&sup_grad_v * &r.sup_na) * &inv_pi)
            + &(&(&(&r.sup_a * &hess_running) * &inv_pi)
                + &(&(&r.sup_a * &r.sup_na) * &inv_pi.div_pow2(1)));
        grad_w_change = &grad_w_change + &(&lead + &(&tail / &r.lambda));
        sup_grad_v = &sup_grad_v + &grad_step;
        // Grow the running Hessian sup by this step's envelope increment.
        let hess_grow = {
            let four = ctx.real_from_u64(4);
            let sup_ha = sup_over(&pts, |p| {
                let j = field_jet(&amps[i - 1], p, 2, ctx)?;
                Ok(j.hessian()?.frobenius())
            })?
            .0;
            &(&(&sup_ha * &inv_lambda_pi) + &(&four * &r.sup_na))
                + &(&(&four * &(&ctx.pi() * &r.lambda)) * &r.sup_a)
        };
        hess_running = &hess_running + &hess_grow;
    }

    // ------------------------------------------------------------------
    // Assemble the record of certified inequalities.
    // ------------------------------------------------------------------
    let eps = params.epsilon.clone();
    let sqrt_d = d_norm.sqrt()?;
    let (sup_grad_v0, _) = sup_over(&pts, |p| {
        let j = field_jet(&input.v, p, 1, ctx)?;
        Ok(j.gradient()?.norm())
    })?;
    let origin = Point::new(ctx.zero(), ctx.zero());
    let push = |checks: &mut Vec<SampleCheck>,
                    failures: &mut Vec<String>,
                    name: &str,
                    at: &Point,
                    lhs: Real,
                    rhs: Real,
                    required: bool| {
        let pass = lhs <= rhs;
        if required && !pass {
            failures.push(format!(
                "{name}: {} > {}",
                lhs.to_decimal_string(8),
                rhs.to_decimal_string(8)
            ));
        }
        checks.push(SampleCheck {
            name: name.to_string(),
            x: at.x.clone(),
            y: at.y.clone(),
            lhs,
            rhs,
            pass,
            required,
        });
    };

    let three_quarters = ctx.real_from_u64(3).div_pow2(2);
    push(
        &mut checks,
        &mut failures,
        "final-defect-bound",
        &lead_at,
        d_tilde_norm.clone(),
        &three_quarters * &d_norm,
        true,
    );
    push(
        &mut checks,
        &mut failures,
        "final-defect-vs-smallest-magnitude",
        &lead_at,
        d_tilde_norm.clone(),
        &three_quarters * &xi,
        false,
    );
    for (k, (mc, (_, at))) in min_phi_certified.iter().zip(phi_mins.iter()).enumerate() {
        push(
            &mut checks,
            &mut failures,
            &format!("coefficient-floor-{}", k + 1),
            at,
            coefficient_floor.clone(),
            mc.clone(),
            true,
        );
    }
    push(
        &mut checks,
        &mut failures,
        "uniform-change",
        &origin,
        v_change.clone(),
        eps.clone(),
        true,
    );
    push(
        &mut checks,
        &mut failures,
        "pair-change",
        &origin,
        w_change.clone(),
        &eps * &(&sup_grad_v0 + &sqrt_d.mul_pow2(3)),
        true,
    );
    let seven = ctx.real_from_u64(7);
    push(
        &mut checks,
        &mut failures,
        "gradient-change",
        &origin,
        grad_v_change.clone(),
        &seven * &sqrt_d,
        true,
    );
    push(
        &mut checks,
        &mut failures,
        "pair-gradient-change",
        &origin,
        grad_w_change.clone(),
        &(&(&seven * &sqrt_d) * &(&sup_grad_v0 + &(&seven * &sqrt_d)))
            + &d_norm.mul_pow2(2),
        true,
    );
    push(
        &mut checks,
        &mut failures,
        "residual-budget",
        &origin,
        cum_b.clone(),
        d_norm.div_pow2(2),
        true,
    );
    let b_ratio = &(&records[0].b_norm + &records[1].b_norm) / &d_norm;
    push(
        &mut checks,
        &mut failures,
        "two-step-residual-ratio",
        &origin,
        b_ratio.clone(),
        ctx.one() / ctx.real_from_u64(6),
        false,
    );

    // Pointwise planning-margin checks at random points: required in
    // a-priori mode, informational in search mode.
    {
        let required = params.mode == LambdaMode::Apriori;
        let mut rng = Rng::new(params.seed ^ 0x9e3779b97f4a7c15);
        let mut check_env = HessEnvelope::new(input.v.clone());
        let inv_pi = ctx.pi().recip()?;
        for (i, r) in records.iter().enumerate() {
            let n_checks = params.check_samples.min(16);
            // One check per margin term, anchored at the sample point with
            // the least slack.
            let mut worst: [Option<(Point, Real, Real)>; 3] = [None, None, None];
            for _ in 0..n_checks {
                let p = rng.next_point(ctx, &input.domain);
                let aj = field_jet(&amps[i], &p, 1, ctx)?;
                let a = aj.value.abs();
                let na = aj.gradient()?.norm();
                let h = check_env.eval(&p, ctx)?;
                let m = margin(&p)?;
                let rhs = &m / &ctx.real_from_u64(18);
                let inv_lambda = r.lambda.recip()?;
                let t1 = &(&(&(&cb * &a) * &na) * &inv_pi.div_pow2(1)) * &inv_lambda;
                let t2 = &(&(&(&cb * &a) * &h) * &inv_pi) * &inv_lambda;
                let t3 = &(&(&(&cb * &na) * &na)
                    * &(&inv_pi * &inv_pi).div_pow2(1))
                    * &(&inv_lambda * &inv_lambda);
                for (slot, t) in worst.iter_mut().zip([t1, t2, t3].into_iter()) {
                    let gap = &t - &rhs;
                    match slot {
                        Some((_, lhs, rhs_prev)) if !(gap > &*lhs - &*rhs_prev) => {}
                        _ => *slot = Some((p.clone(), t, rhs.clone())),
                    }
                }
            }
            for (j, slot) in worst.into_iter().enumerate() {
                let Some((p, lhs, rhs)) = slot else { continue };
                push(
                    &mut checks,
                    &mut failures,
                    &format!("planning-term-{}-{}", i + 1, j + 1),
                    &p,
                    lhs,
                    rhs,
                    required,
                );
            }
            check_env.push(amps[i].clone(), r.lambda.clone());
        }
    }

    // Envelope validity at random points: the exact second derivatives of
    // the constructed pair stay below the running envelope.
    if m_index > 0 {
        let mut rng = Rng::new(params.seed ^ 0x517cc1b727220a95);
        let partial_env = HessEnvelope {
            base: input.v.clone(),
            steps: records
                .iter()
                .take(m_index)
                .enumerate()
                .map(|(i, r)| (amps[i].clone(), r.lambda.clone()))
                .collect(),
        };
        // Reconstruct the pair after the measured prefix of steps.
        let mut vk = input.v.clone();
        let mut wk = input.w.clone();
        for (i, r) in records.iter().take(m_index).enumerate() {
            let step = StepParams {
                amplitude: amps[i].clone(),
                direction: frame_direction(i + 1, ctx)?,
                lambda: r.lambda.clone(),
            };
            let (nv, nw) = one_step(&vk, &wk, &step, ctx)?;
            vk = nv;
            wk = nw;
        }
        for _ in 0..params.check_samples.min(8) {
            let p = rng.next_point(ctx, &input.domain);
            let direct = field_jet(&vk, &p, 2, ctx)?.hessian()?.frobenius();
            let env_val = partial_env.eval(&p, ctx)?;
            push(
                &mut checks,
                &mut failures,
                "second-derivative-envelope",
                &p,
                direct,
                env_val,
                false,
            );
        }
    }

    // Optional direct measurement of the last step on a fine subwindow.
    let mut sub_b_last: Option<Real> = None;
    let mut sub_v_change: Option<Real> = None;
    if let (Some((sub_rect, sub_n)), 2) = (&params.subwindow, m_index) {
        let inside = input.domain.contains(&Point::new(sub_rect.x0.clone(), sub_rect.y0.clone()))
            && input.domain.contains(&Point::new(sub_rect.x1.clone(), sub_rect.y1.clone()));
        if !inside {
            return Err(Error::domain("subwindow extends beyond the working domain"));
        }
        // The pair before the last step.
        let mut vk = input.v.clone();
        let mut wk = input.w.clone();
        for (i, r) in records.iter().take(2).enumerate() {
            let step = StepParams {
                amplitude: amps[i].clone(),
                direction: frame_direction(i + 1, ctx)?,
                lambda: r.lambda.clone(),
            };
            let (nv, nw) = one_step(&vk, &wk, &step, ctx)?;
            vk = nv;
            wk = nw;
        }
        let prev = measure_state(2, &vk, &wk, &input.v, &input.w, &input.a_mat, sub_rect, *sub_n, ctx)?;
        let last = measure_state(3, &cur_v, &cur_w, &input.v, &input.w, &input.a_mat, sub_rect, *sub_n, ctx)?;
        let amp_grid = crate::field::sample(&amps[2], sub_rect, *sub_n, *sub_n, ctx)?;
        let phi_grids: [Grid; 3] = {
            let gs = sample_many(&[&phi[0], &phi[1], &phi[2]], sub_rect, *sub_n, *sub_n, ctx)?;
            let mut it = gs.into_iter();
            [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()]
        };
        let eta3 = frame_direction(3, ctx)?;
        let (sup, at, _) = residual_sup(
            &prev.d,
            &last.d,
            &amp_grid,
            &eta3,
            &phi_grids,
            &coefficient_floor,
            ctx,
        )?;
        push(
            &mut checks,
            &mut failures,
            "subwindow-residual-within-bound",
            &at,
            sup.clone(),
            records[2].bound.clone(),
            false,
        );
        sub_b_last = Some(sup);
        sub_v_change = Some(sup_diff(&last.v, &last.v0, ctx)?.0);
    }

    if params.enforce && !failures.is_empty() {
        return Err(Error::verification(format!(
            "stage certification failed: {}",
            failures.join("; ")
        )));
    }

    let report = StageReport {
        mode_search: params.mode == LambdaMode::Search,
        d_norm: d_norm.clone(),
        min_abs_d,
        xi: xi.clone(),
        min_phi_initial,
        lambdas: [
            records[0].lambda.clone(),
            records[1].lambda.clone(),
            records[2].lambda.clone(),
        ],
        b_norms: [
            records[0].b_norm.clone(),
            records[1].b_norm.clone(),
            records[2].b_norm.clone(),
        ],
        b_norm_is_bound: [
            records[0].b_is_bound,
            records[1].b_is_bound,
            records[2].b_is_bound,
        ],
        b_ratio_two_steps: b_ratio,
        min_phi,
        min_phi_certified,
        coefficient_floor,
        ratio_vs_norm: &d_tilde_norm / &d_norm,
        ratio_vs_xi: &d_tilde_norm / &xi,
        d_tilde_norm,
        v_change,
        w_change,
        grad_v_change,
        grad_w_change,
        epsilon: eps,
        condition_a: [records[0].cond_a, records[1].cond_a, records[2].cond_a],
        condition_b: [records[0].cond_b, records[1].cond_b, records[2].cond_b],
        measured_steps: m_index,
        grids_used: [
            records[0].grid_used,
            records[1].grid_used,
            records[2].grid_used,
        ],
        sub_b_last,
        sub_v_change,
        checks,
    };
    Ok(StageOutcome {
        v: cur_v,
        w: cur_w,
        report,
    })
}

/// Runs stages from `schedule` in order until the measured defect norm
/// drops to `target` or the schedule is exhausted. Returns immediately with
/// zero stages when the input already meets the target.
pub fn iterate_c1(
    input: &StageInput,
    schedule: &[StageParams],
    target: &Real,
    ctx: &PrecisionContext,
) -> Result<IterateOutcome> {
    let first_params = schedule.first();
    let (scan_n, scan_random, seed) = match first_params {
        Some(p) => (p.scan_n, p.scan_random, p.seed),
        None => (51, 200, crate::numeric::DEFAULT_SEED),
    };
    let pts = scan_points(&input.domain, scan_n, scan_random, seed, ctx)?;
    let d = assemble_defect(&input.a_mat, &input.v, &input.w, ctx);
    let (mut current_norm, _) = sup_over(&pts, |p| defect_magnitude(&d, p, ctx))?;
    let mut cur = input.clone();
    let mut reports = Vec::new();
    for params in schedule {
        if current_norm <= *target {
            break;
        }
        let outcome = run_stage_c1(&cur, params, ctx)?;
        current_norm = outcome.report.d_tilde_norm.clone();
        let oscillation = outcome.report.lambdas[2].clone();
        reports.push(outcome.report);
        cur = StageInput {
            v: outcome.v,
            w: outcome.w,
            a_mat: cur.a_mat.clone(),
            domain: cur.domain.clone(),
            oscillation: Some(oscillation),
        };
    }
    Ok(IterateOutcome {
        v: cur.v,
        w: cur.w,
        reports,
    })
}

// ---------------------------------------------------------------------------
// Built-in inputs
// ---------------------------------------------------------------------------

/// Built-in stage inputs by name. Both live on the centered unit square of
/// side one and carry polynomial data.
pub fn builtin_c1(name: &str, ctx: &PrecisionContext) -> Result<StageInput> {
    let (v_src, w1_src, w2_src, a_diag_src) = match name {
        "ex3.1" => (
            "x^2 - y^2",
            "x*y^2",
            "x^2*y",
            "5 - (x^2 + y^2)/4",
        ),
        "ex3.2" => (
            "x^2 + y^2",
            "0 - x*y^2",
            "0 - x^2*y",
            "5 + (x^2 + y^2)/4",
        ),
        other => {
            return Err(Error::config(format!(
                "unknown built-in input '{other}' (expected ex3.1 or ex3.2)"
            )))
        }
    };
    let field_from = |src: &str| -> Result<FieldRef> {
        let expr = crate::expr::parse(src)?;
        let poly = crate::field::Poly::from_expr(&expr, ctx)?
            .ok_or_else(|| Error::config("built-in source is not polynomial"))?;
        Ok(crate::field::poly_field(poly))
    };
    let v = field_from(v_src)?;
    let w = [field_from(w1_src)?, field_from(w2_src)?];
    let diag = field_from(a_diag_src)?;
    let a_mat = SymField {
        xx: diag.clone(),
        xy: constant(ctx.zero()),
        yy: diag,
    };
    let half = ctx.one().div_pow2(1);
    Ok(StageInput {
        v,
        w,
        a_mat,
        domain: Rect::centered_square(&half)?,
        oscillation: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{field_value, poly_field, Poly};
    use crate::numeric::make_context;

    fn ctx15() -> PrecisionContext {
        make_context(15, 1).unwrap()
    }

    fn ctx30() -> PrecisionContext {
        make_context(30, 1).unwrap()
    }

    /// Input with constant defect `c·Id`: `v = x² − y²`, `w = 0`,
    /// `A = ½∇v⊗∇v + c·Id` on a centered square of the given half-width.
    fn constant_defect_input(c: u64, half: &str, ctx: &PrecisionContext) -> StageInput {
        let field_from = |src: &str| {
            let expr = crate::expr::parse(src).unwrap();
            poly_field(Poly::from_expr(&expr, ctx).unwrap().unwrap())
        };
        // ½∇v⊗∇v = [[2x², −2xy], [−2xy, 2y²]].
        StageInput {
            v: field_from("x^2 - y^2"),
            w: [constant(ctx.zero()), constant(ctx.zero())],
            a_mat: SymField {
                xx: field_from(&format!("2*x^2 + {c}")),
                xy: field_from("0 - 2*x*y"),
                yy: field_from(&format!("2*y^2 + {c}")),
            },
            domain: Rect::centered_square(&ctx.real_from_str(half).unwrap()).unwrap(),
            oscillation: None,
        }
    }

    /// Input with defect `(2 + x²/4)·Id` on the centered square of half-width
    /// `1/4`: the same square pair as above plus `w = (x y², x² y)`.
    fn gentle_input(ctx: &PrecisionContext) -> StageInput {
        let field_from = |src: &str| {
            let expr = crate::expr::parse(src).unwrap();
            poly_field(Poly::from_expr(&expr, ctx).unwrap().unwrap())
        };
        StageInput {
            v: field_from("x^2 - y^2"),
            w: [field_from("x*y^2"), field_from("x^2*y")],
            a_mat: SymField {
                xx: field_from("2*x^2 + y^2 + 2 + x^2/4"),
                xy: constant(ctx.zero()),
                yy: field_from("2*y^2 + x^2 + 2 + x^2/4"),
            },
            domain: Rect::centered_square(&ctx.real_from_str("0.25").unwrap()).unwrap(),
            oscillation: None,
        }
    }

    fn quick_params(ctx: &PrecisionContext) -> StageParams {
        let mut p = StageParams::new(ctx);
        p.scan_n = 21;
        p.scan_random = 100;
        p.check_samples = 6;
        p.grid_min = 21;
        p.grid_fine = 81;
        p.grid_max = 241;
        p.nodes_per_period = 8;
        p.epsilon = ctx.real_from_str("0.5").unwrap();
        p
    }

    #[test]
    fn builtin_inputs_decompose_as_expected() {
        let ctx = ctx30();
        let input = builtin_c1("ex3.1", &ctx).unwrap();
        let pts = scan_points(&input.domain, 41, 200, 7, &ctx).unwrap();
        let d = assemble_defect(&input.a_mat, &input.v, &input.w, &ctx);
        let (sup, _) = sup_over(&pts, |p| defect_magnitude(&d, p, &ctx)).unwrap();
        let (min, _) = min_over(&pts, |p| defect_magnitude(&d, p, &ctx)).unwrap();
        // Extremes land on lattice nodes: 5√2 at the center and
        // 4.125·√2 at the corners.
        let expect_sup = &ctx.real_from_u64(5) * &ctx.real_from_u64(2).sqrt().unwrap();
        let expect_min =
            &ctx.real_from_str("4.125").unwrap() * &ctx.real_from_u64(2).sqrt().unwrap();
        assert!((&sup - &expect_sup).abs() < ctx.real_from_str("1e-25").unwrap());
        assert!((&min - &expect_min).abs() < ctx.real_from_str("1e-25").unwrap());
        // Smallest first coefficient: 3.75 − (31+11)/64 at the corners.
        let phi = decompose_fields(&d, &ctx);
        let (phi1_min, _) = min_over(&pts, |p| field_value(&phi[0], p, &ctx)).unwrap();
        let expect_phi1 = ctx.real_from_str("3.09375").unwrap();
        assert!((&phi1_min - &expect_phi1).abs() < ctx.real_from_str("1e-25").unwrap());
        assert!(builtin_c1("ex9.9", &ctx).is_err());
    }

    #[test]
    fn constant_defect_anchor_matches_hand_arithmetic() {
        let ctx = ctx30();
        let input = constant_defect_input(2, "0.25", &ctx);
        let d = assemble_defect(&input.a_mat, &input.v, &input.w, &ctx);
        let phi = decompose_fields(&d, &ctx);
        // Amplitude of the first step: √(φ₁/2) with φ₁ = 1.5 constant.
        let amp = sqrt_floor(scale(ctx.one().div_pow2(1), phi[0].clone()), ctx.zero());
        let env = HessEnvelope::new(input.v.clone());
        let d_norm = &ctx.real_from_u64(2) * &ctx.real_from_u64(2).sqrt().unwrap();
        let mut params = StageParams::new(&ctx);
        params.scan_n = 11;
        params.scan_random = 20;

        // With a tight budget the uniform-change floor √‖D‖/ε wins on the
        // later steps.
        let lambda = plan_lambda_search(
            &amp, &env, 2, &d_norm, None, &input.domain, &params, &ctx,
        )
        .unwrap();
        let expect_floor = &d_norm.sqrt().unwrap() / &params.epsilon;
        assert!(
            (&lambda - &expect_floor).abs() < ctx.real_from_str("1e-20").unwrap(),
            "expected the change floor {} got {}",
            expect_floor.to_decimal_string(10),
            lambda.to_decimal_string(10)
        );

        // With a loose budget the residual rule E/T wins on the first step:
        // the amplitude is constant, so only the second-derivative term
        // contributes.
        params.epsilon = ctx.real_from_u64(4);
        let lambda = plan_lambda_search(
            &amp, &env, 1, &d_norm, None, &input.domain, &params, &ctx,
        )
        .unwrap();
        let sup_a = ctx.real_from_str("1.5").unwrap().div_pow2(1).sqrt().unwrap();
        let hess = &ctx.real_from_u64(2) * &ctx.real_from_u64(2).sqrt().unwrap();
        let e = &(&sup_a * &hess) / &ctx.pi();
        let t = &d_norm / &ctx.real_from_u64(12);
        let expect = &e / &t;
        assert!(
            (&lambda - &expect).abs() < ctx.real_from_str("1e-20").unwrap(),
            "expected the residual rule {} got {}",
            expect.to_decimal_string(10),
            lambda.to_decimal_string(10)
        );

        // Monotonicity against a previous frequency.
        let prev = ctx.real_from_u64(1000);
        let lambda = plan_lambda_search(
            &amp, &env, 2, &d_norm, Some(&prev), &input.domain, &params, &ctx,
        )
        .unwrap();
        assert!(lambda >= prev);
    }

    #[test]
    fn zero_amplitude_stage_is_an_exact_identity() {
        let ctx = ctx15();
        let input = constant_defect_input(2, "0.25", &ctx);
        let mut params = quick_params(&ctx);
        params.amplitude_scale = ctx.zero();
        params.enforce = false;
        params.subwindow = None;
        let outcome = run_stage_c1(&input, &params, &ctx).unwrap();
        // The pair is unchanged pointwise.
        let mut rng = Rng::new(3);
        for _ in 0..10 {
            let p = rng.next_point(&ctx, &input.domain);
            let before = field_value(&input.v, &p, &ctx).unwrap();
            let after = field_value(&outcome.v, &p, &ctx).unwrap();
            assert!((&before - &after).is_zero());
            for i in 0..2 {
                let before = field_value(&input.w[i], &p, &ctx).unwrap();
                let after = field_value(&outcome.w[i], &p, &ctx).unwrap();
                assert!((&before - &after).is_zero());
            }
        }
        // The defect is exactly what it was: residuals vanish and the
        // certified bound equals the measured initial norm.
        for b in &outcome.report.b_norms {
            assert!(b.is_zero());
        }
        // The certified bound equals the measured initial norm up to the
        // finite-difference rounding of the grid measurement.
        let rel = &(&outcome.report.d_tilde_norm - &outcome.report.d_norm).abs()
            / &outcome.report.d_norm;
        assert!(rel < ctx.real_from_str("1e-10").unwrap());
        assert!(outcome.report.v_change.is_zero());
        // The halving certificate fails honestly: its flag is recorded as
        // a failed check instead of an error.
        let fd = outcome
            .report
            .checks
            .iter()
            .find(|c| c.name == "final-defect-bound")
            .unwrap();
        assert!(!fd.pass);
        let uc = outcome
            .report
            .checks
            .iter()
            .find(|c| c.name == "uniform-change")
            .unwrap();
        assert!(uc.pass);
    }

    #[test]
    fn diag_ex31() {
        let ctx = ctx30();
        let input = builtin_c1("ex3.2", &ctx).unwrap();
        let params = StageParams::new(&ctx);
        let t0 = std::time::Instant::now();
        let outcome = run_stage_c1(&input, &params, &ctx).unwrap();
        let r = &outcome.report;
        eprintln!("elapsed = {:?}", t0.elapsed());
        eprintln!("d_norm = {}", r.d_norm.to_decimal_string(8));
        for k in 0..3 {
            eprintln!(
                "step {}: lambda={} b={} is_bound={} grid={}",
                k + 1,
                r.lambdas[k].to_decimal_string(8),
                r.b_norms[k].to_decimal_string(8),
                r.b_norm_is_bound[k],
                r.grids_used[k],
            );
        }
        eprintln!("measured_steps = {}", r.measured_steps);
        eprintln!("v_change = {}", r.v_change.to_decimal_string(8));
        eprintln!("w_change = {}", r.w_change.to_decimal_string(8));
        eprintln!("b_ratio_two_steps = {}", r.b_ratio_two_steps.to_decimal_string(8));
        for k in 0..3 {
            eprintln!(
                "min_phi[{}] = {}  certified = {}",
                k,
                r.min_phi[k].to_decimal_string(8),
                r.min_phi_certified[k].to_decimal_string(8),
            );
        }
        eprintln!("d_tilde = {}  ratio = {}", r.d_tilde_norm.to_decimal_string(8), r.ratio_vs_norm.to_decimal_string(8));
        for c in &r.checks {
            eprintln!("check {}: pass={} required={}", c.name, c.pass, c.required);
        }
    }

    #[test]
    fn search_stage_halves_the_gentle_defect() {
        let ctx = ctx15();
        let input = gentle_input(&ctx);
        let mut params = quick_params(&ctx);
        params.subwindow = Some((
            Rect::centered_square(&ctx.real_from_str("0.005").unwrap()).unwrap(),
            61,
        ));
        let outcome = run_stage_c1(&input, &params, &ctx).unwrap();
        let r = &outcome.report;
        // Frequencies increase and the certified outcome halves the defect.
        assert!(r.lambdas[0] <= r.lambdas[1] && r.lambdas[1] <= r.lambdas[2]);
        let three_quarters = ctx.real_from_u64(3).div_pow2(2);
        assert!(r.d_tilde_norm <= &three_quarters * &r.d_norm);
        for (mc, floor) in r.min_phi_certified.iter().zip(std::iter::repeat(&r.coefficient_floor)) {
            assert!(mc >= floor);
        }
        assert!(r.v_change <= r.epsilon);
        // Both measured steps were grid-measured; the last step used the
        // analytic bound.
        assert_eq!(r.measured_steps, 2);
        assert!(!r.b_norm_is_bound[0] && !r.b_norm_is_bound[1] && r.b_norm_is_bound[2]);
        // The subwindow measurement stayed below the analytic bound.
        let sub = r.sub_b_last.as_ref().unwrap();
        assert!(sub <= &r.b_norms[2]);
        // Required checks all passed (the run would have failed otherwise);
        // the informational two-step ratio stays under one sixth.
        assert!(r.b_ratio_two_steps <= ctx.one() / ctx.real_from_u64(6));
        assert!(r.checks.iter().filter(|c| c.required).all(|c| c.pass));
    }

    #[test]
    fn apriori_stage_certifies_the_planning_margins() {
        let ctx = ctx15();
        let input = gentle_input(&ctx);
        let mut params = quick_params(&ctx);
        params.mode = LambdaMode::Apriori;
        params.positivity_floor = ctx.real_from_str("0.4").unwrap();
        params.subwindow = None;
        let outcome = run_stage_c1(&input, &params, &ctx).unwrap();
        let r = &outcome.report;
        assert!(!r.mode_search);
        // Every pointwise planning margin held (they are required checks in
        // this mode, so the run would have errored otherwise).
        assert!(r
            .checks
            .iter()
            .filter(|c| c.name.starts_with("planning-term-"))
            .all(|c| c.pass && c.required));
        let three_quarters = ctx.real_from_u64(3).div_pow2(2);
        assert!(r.d_tilde_norm <= &three_quarters * &r.d_norm);
        assert!(r.v_change <= r.epsilon);
    }

    #[test]
    fn iteration_stops_at_zero_stages_when_already_flat() {
        let ctx = ctx15();
        // Target matrix exactly equal to the square part: zero defect.
        let field_from = |src: &str| {
            let expr = crate::expr::parse(src).unwrap();
            poly_field(Poly::from_expr(&expr, &ctx).unwrap().unwrap())
        };
        let input = StageInput {
            v: field_from("x^2 - y^2"),
            w: [field_from("x*y^2"), field_from("x^2*y")],
            a_mat: SymField {
                xx: field_from("2*x^2 + y^2"),
                xy: constant(ctx.zero()),
                yy: field_from("2*y^2 + x^2"),
            },
            domain: Rect::centered_square(&ctx.real_from_str("0.25").unwrap()).unwrap(),
            oscillation: None,
        };
        let params = quick_params(&ctx);
        let target = ctx.real_from_str("0.1").unwrap();
        let out = iterate_c1(&input, &[params], &target, &ctx).unwrap();
        assert!(out.reports.is_empty());
        assert!(std::sync::Arc::ptr_eq(&out.v, &input.v));
    }

    #[test]
    fn two_chained_stages_keep_reducing_the_defect() {
        let ctx = ctx15();
        let input = gentle_input(&ctx);
        let mut first = quick_params(&ctx);
        first.subwindow = None;
        let mut second = quick_params(&ctx);
        second.subwindow = None;
        second.epsilon = ctx.real_from_str("0.25").unwrap();
        second.positivity_floor = ctx.real_from_str("0.1").unwrap();
        second.lambda_max = ctx.real_from_str("1e9").unwrap();
        second.scan_n = 15;
        second.scan_random = 60;
        second.check_samples = 3;
        second.residual_budgets = [
            ctx.one() / ctx.real_from_u64(48),
            ctx.one() / ctx.real_from_u64(40),
            ctx.one() / ctx.real_from_u64(80),
        ];
        let target = ctx.real_from_str("1e-6").unwrap();
        let out = iterate_c1(&input, &[first, second], &target, &ctx).unwrap();
        assert_eq!(out.reports.len(), 2);
        let three_quarters = ctx.real_from_u64(3).div_pow2(2);
        // Each stage's certified output is at most ¾ of its measured input,
        // and the second stage starts from a defect close to (sampling slack
        // aside, below) the first certified bound.
        for r in &out.reports {
            assert!(r.d_tilde_norm <= &three_quarters * &r.d_norm);
        }
        let slack = ctx.real_from_str("1.02").unwrap();
        assert!(out.reports[1].d_norm <= &slack * &out.reports[0].d_tilde_norm);
        // The second stage runs beyond any affordable grid, so its residuals
        // are analytic bounds throughout.
        assert_eq!(out.reports[1].measured_steps, 0);
        assert!(out.reports[1].b_norm_is_bound.iter().all(|&b| b));
    }

    #[test]
    fn frequency_search_cap_is_a_hard_error() {
        let ctx = ctx15();
        let input = constant_defect_input(2, "0.25", &ctx);
        let mut params = quick_params(&ctx);
        params.lambda_max = ctx.real_from_u64(2);
        match run_stage_c1(&input, &params, &ctx) {
            Err(Error::Verification(msg)) => assert!(msg.contains("exceeded the cap")),
            Err(other) => panic!("unexpected error kind: {other}"),
            Ok(_) => panic!("expected a verification error"),
        }
    }
}
