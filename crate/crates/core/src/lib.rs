//! Monotone implicit finite-difference schemes for uniformly nondegenerate
//! parabolic Isaacs equations
//!
//! ```text
//! ∂_t u + sup_α inf_β [ a^{αβ}_{ij} D_{ij} u + b^{αβ}_i D_i u − c^{αβ} u + f^{αβ} ] = 0
//! ```
//!
//! on a cylinder `(0, T) × G`, with `u = g` on the parabolic boundary.
//!
//! The crate is organised bottom-up:
//!
//! * [`grid`]: spatial domains, the space-time lattice and grid functions.
//! * [`problem`]: problem instances over finite action sets, plus
//!   manufactured cases with closed-form solutions.
//! * [`lattice`]: direction sets and the nonnegative lattice representation
//!   of diffusion and drift.
//! * [`operators`]: difference quotients, the discrete Isaacs operator and a
//!   directionwise Pucci operator.
//! * [`solver`]: backward time-marching for the plain scheme and for its
//!   upper/lower K-truncated companions.
//! * [`analysis`]: error norms, rate fitting, a Hölder seminorm estimator,
//!   boundary barriers and the truncation-gap study.
//!
//! The crate is `no_std` (with `alloc`) when built without default features.
//! The `parallel` feature runs simultaneous slice sweeps on rayon.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod analysis;
pub mod grid;
pub mod lattice;
pub mod linalg;
pub mod operators;
pub mod problem;
pub mod solver;

pub use analysis::{
    barrier_ratio, build_barrier, fit_rate, holder_seminorm, k_gap_study, sup_error, AnalysisError,
    Barrier, BarrierParams, GapFit, KGapReport, RateReport,
};
pub use grid::{
    boundary_distance, build_grid, DomainShape, GridError, GridFunction, GridPoint, SpaceTimeGrid,
    SpatialDomain,
};
pub use lattice::{
    decompose_diffusion, decompose_drift, standard_directions, DirectionSet, LatticeCoefficients,
    LatticeError, LatticeRepresentation, StandardLattice,
};
pub use linalg::Matrix;
pub use operators::{
    apply_f_h, apply_p_h, delta2_l, delta_l_forward, delta_l_upwind, delta_t, DriftMode,
    OperatorError, PucciParams, Stencil,
};
pub use problem::{
    gamma_exponent, heat_1d_source, make_manufactured, validate_problem, ActionSets, Check,
    CheckResult, HolderModuli, IsaacsProblem, ManufacturedCase, ManufacturedKind,
    ManufacturedParams, ProblemError, Sample, ValidationReport,
};
pub use solver::{
    slice_residual, solve_isaacs, solve_truncated, Acceleration, SliceStats, Solution,
    SolveStats, SolverConfig, SolverError, SweepMode, TruncationSide, TruncationSpec,
};

/// Version of this library, as recorded in experiment manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
