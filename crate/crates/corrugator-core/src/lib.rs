//! Construction and verification of corrugated approximate solutions to the
//! two-dimensional Monge-Ampere equation `Det ∇²v = f`.
//!
//! The crate builds pairs `(v, w)` of a scalar field and a vector field whose
//! combined "defect" `A - (½∇v⊗∇v + sym ∇w)` is driven to zero by adding
//! one-dimensional oscillations ("corrugations") in three fixed directions.
//! All arithmetic is arbitrary-precision (MPFR via `rug`), so the same code
//! path serves both desk-scale runs (15 significant digits) and runs whose
//! frequencies exceed `1e19`, where binary64 would collapse.
//!
//! Module map:
//! - [`numeric`]: precision context, real scalars, small matrices, sampling;
//! - [`expr`]: a tiny expression language for run configuration;
//! - [`jet`]: truncated Taylor expansions (value through third derivatives);
//! - [`field`]: lazily evaluated scalar fields over the plane, both analytic
//!   graphs and finite-difference backed grids;
//! - [`basis`]: the rank-one frame and decomposition of symmetric matrices;
//! - [`corrugation`]: the one-dimensional oscillation profiles and a single
//!   corrugation step with its pointwise error bounds;
//! - [`mollify`]: the smoothing kernel and mollification operators;
//! - [`stage_c1`]: a three-step corrugation stage with uniform-norm targets;
//! - [`holder`]: the mollified stage with geometric frequency ladders and the
//!   multi-stage schedule built on top of it.

pub mod basis;
pub mod corrugation;
pub mod error;
pub mod expr;
pub mod field;
pub mod holder;
pub mod jet;
pub mod mollify;
pub mod numeric;
pub mod stage_c1;

pub use error::{Error, Result};
