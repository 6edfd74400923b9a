//! Isaacs problem instances over finite action sets.
//!
//! Coefficients are pure callbacks of `(α index, β index, t, x)`; they must be
//! safe to call concurrently from several threads.

mod manufactured;

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::SpatialDomain;
use crate::linalg::{norm, Matrix};

pub use manufactured::{
    heat_1d_source, make_manufactured, ManufacturedCase, ManufacturedKind, ManufacturedParams,
};

pub type MatrixFn = Arc<dyn Fn(usize, usize, f64, &[f64]) -> Matrix + Send + Sync>;
pub type VectorFn = Arc<dyn Fn(usize, usize, f64, &[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(usize, usize, f64, &[f64]) -> f64 + Send + Sync>;
pub type SpaceTimeFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("action sets must be nonempty")]
    EmptyActionSet,
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("validation failed: {check} at {sample} (value {value})")]
    ValidationFailed {
        check: Check,
        sample: Sample,
        value: f64,
    },
    #[error("unknown manufactured case {0:?}")]
    UnknownKind(alloc::string::String),
}

/// Finite action sets; labels are real numbers the coefficient callbacks may
/// interpret, and the solver addresses actions by position.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionSets {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl ActionSets {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self, ProblemError> {
        if alpha.is_empty() || beta.is_empty() {
            return Err(ProblemError::EmptyActionSet);
        }
        Ok(Self { alpha, beta })
    }

    /// One action for each player.
    pub fn single() -> Self {
        Self {
            alpha: vec![0.0],
            beta: vec![0.0],
        }
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn n_alpha(&self) -> usize {
        self.alpha.len()
    }

    pub fn n_beta(&self) -> usize {
        self.beta.len()
    }

    pub fn n_pairs(&self) -> usize {
        self.alpha.len() * self.beta.len()
    }
}

/// Hölder data assumed for the coefficients. Documentation only; it is not
/// enforced at runtime.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderModuli {
    pub gamma: f64,
    pub gamma_t: f64,
    pub tau: f64,
}

#[derive(Clone)]
pub struct IsaacsProblem {
    dim: usize,
    actions: ActionSets,
    diffusion: MatrixFn,
    drift: VectorFn,
    discount: ScalarFn,
    source: ScalarFn,
    boundary: SpaceTimeFn,
    delta: f64,
    k0: f64,
    holder: Option<HolderModuli>,
}

impl fmt::Debug for IsaacsProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("IsaacsProblem")
            .field("dim", &self.dim)
            .field("actions", &self.actions)
            .field("delta", &self.delta)
            .field("k0", &self.k0)
            .field("holder", &self.holder)
            .finish_non_exhaustive()
    }
}

impl IsaacsProblem {
    /// Problem with `a = I`, `b = 0`, `c = 0`, `f = 0`, `g = 0`; override
    /// with the `with_*` builders.
    pub fn new(dim: usize, actions: ActionSets, delta: f64, k0: f64) -> Result<Self, ProblemError> {
        if dim == 0 {
            return Err(ProblemError::InvalidParameter("dimension must be positive"));
        }
        if !(delta > 0.0 && delta < 1.0) {
            return Err(ProblemError::InvalidParameter("delta must lie in (0, 1)"));
        }
        if !(k0 >= 0.0 && k0.is_finite()) {
            return Err(ProblemError::InvalidParameter("K0 must be finite and nonnegative"));
        }
        Ok(Self {
            dim,
            actions,
            diffusion: Arc::new(move |_, _, _, _| Matrix::identity(dim)),
            drift: Arc::new(move |_, _, _, _| vec![0.0; dim]),
            discount: Arc::new(|_, _, _, _| 0.0),
            source: Arc::new(|_, _, _, _| 0.0),
            boundary: Arc::new(|_, _| 0.0),
            delta,
            k0,
            holder: None,
        })
    }

    pub fn with_diffusion<F>(mut self, a: F) -> Self
    where
        F: Fn(usize, usize, f64, &[f64]) -> Matrix + Send + Sync + 'static,
    {
        self.diffusion = Arc::new(a);
        self
    }

    pub fn with_drift<F>(mut self, b: F) -> Self
    where
        F: Fn(usize, usize, f64, &[f64]) -> Vec<f64> + Send + Sync + 'static,
    {
        self.drift = Arc::new(b);
        self
    }

    pub fn with_discount<F>(mut self, c: F) -> Self
    where
        F: Fn(usize, usize, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.discount = Arc::new(c);
        self
    }

    pub fn with_source<F>(mut self, f: F) -> Self
    where
        F: Fn(usize, usize, f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.source = Arc::new(f);
        self
    }

    pub fn with_boundary<F>(mut self, g: F) -> Self
    where
        F: Fn(f64, &[f64]) -> f64 + Send + Sync + 'static,
    {
        self.boundary = Arc::new(g);
        self
    }

    pub fn with_holder(mut self, holder: HolderModuli) -> Self {
        self.holder = Some(holder);
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn actions(&self) -> &ActionSets {
        &self.actions
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k0(&self) -> f64 {
        self.k0
    }

    pub fn holder(&self) -> Option<HolderModuli> {
        self.holder
    }

    pub fn diffusion(&self, alpha: usize, beta: usize, t: f64, x: &[f64]) -> Matrix {
        (self.diffusion)(alpha, beta, t, x)
    }

    pub fn drift(&self, alpha: usize, beta: usize, t: f64, x: &[f64]) -> Vec<f64> {
        (self.drift)(alpha, beta, t, x)
    }

    pub fn discount(&self, alpha: usize, beta: usize, t: f64, x: &[f64]) -> f64 {
        (self.discount)(alpha, beta, t, x)
    }

    pub fn source(&self, alpha: usize, beta: usize, t: f64, x: &[f64]) -> f64 {
        (self.source)(alpha, beta, t, x)
    }

    pub fn boundary(&self, t: f64, x: &[f64]) -> f64 {
        (self.boundary)(t, x)
    }

    pub fn boundary_fn(&self) -> SpaceTimeFn {
        self.boundary.clone()
    }
}

/// Hölder exponent required of `a` in `x` for a given regularity exponent `χ`.
pub fn gamma_exponent(chi: f64) -> f64 {
    (4.0 - 3.0 * chi) / (8.0 - 4.0 * chi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Check {
    Symmetry,
    Ellipticity,
    DriftBound,
    DiscountSign,
    DiscountBound,
    SourceBound,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Check::Symmetry => "a symmetric",
            Check::Ellipticity => "a in S_delta",
            Check::DriftBound => "|b| <= K0",
            Check::DiscountSign => "c >= 0",
            Check::DiscountBound => "c <= K0",
            Check::SourceBound => "|f| <= K0",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub alpha: usize,
    pub beta: usize,
    pub t: f64,
    pub x: Vec<f64>,
}

impl fmt::Display for Sample {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(alpha #{}, beta #{}, t = {}, x = {:?})", self.alpha, self.beta, self.t, self.x)
    }
}

/// Outcome of one sampled check: the smallest slack seen and where.
/// Negative slack means the check failed.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub check: Check,
    pub worst_slack: f64,
    pub worst_sample: Option<Sample>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst_slack >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
    /// `γ(χ)` when a `χ` was supplied.
    pub gamma: Option<f64>,
}

/// Spot-checks the standing assumptions on `sample_count` random points of
/// `A × B × (0, T) × G`.
pub fn validate_problem(
    problem: &IsaacsProblem,
    domain: &SpatialDomain,
    horizon: f64,
    sample_count: usize,
    seed: u64,
    chi: Option<f64>,
) -> Result<ValidationReport, ProblemError> {
    if domain.dim() != problem.dim() {
        return Err(ProblemError::InvalidParameter("domain dimension differs from problem"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let checks = [
        Check::Symmetry,
        Check::Ellipticity,
        Check::DriftBound,
        Check::DiscountSign,
        Check::DiscountBound,
        Check::SourceBound,
    ];
    let mut results: Vec<CheckResult> = checks
        .iter()
        .map(|&check| CheckResult {
            check,
            worst_slack: f64::INFINITY,
            worst_sample: None,
        })
        .collect();
    let mut worst_value = vec![0.0; checks.len()];

    let (lo, hi) = domain.bounding_box();
    let delta = problem.delta();
    let k0 = problem.k0();
    let tol = 1e-12;
    let acts = problem.actions();
    for _ in 0..sample_count {
        let alpha = rng.random_range(0..acts.n_alpha());
        let beta = rng.random_range(0..acts.n_beta());
        let t = rng.random_range(0.0..horizon);
        let x = loop {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(l, u)| rng.random_range(*l..*u)).collect();
            if domain.contains(&x) {
                break x;
            }
        };

        let a = problem.diffusion(alpha, beta, t, &x);
        let b = problem.drift(alpha, beta, t, &x);
        let c = problem.discount(alpha, beta, t, &x);
        let f = problem.source(alpha, beta, t, &x);

        let asym = (0..a.dim())
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| (a[(i, j)] - a[(j, i)]).abs())
            .fold(0.0, f64::max);
        let eig = a.symmetric_eigenvalues();
        let (emin, emax) = (eig[0], eig[eig.len() - 1]);
        let ell_slack = (emin - delta).min(1.0 / delta - emax);
        let bn = norm(&b);

        let entries = [
            (tol - asym, asym),
            (ell_slack + tol, if emin < delta { emin } else { emax }),
            (k0 - bn + tol, bn),
            (c + tol, c),
            (k0 - c + tol, c),
            (k0 - f.abs() + tol, f),
        ];
        for (k, &(slack, value)) in entries.iter().enumerate() {
            if slack < results[k].worst_slack {
                results[k].worst_slack = slack;
                results[k].worst_sample = Some(Sample {
                    alpha,
                    beta,
                    t,
                    x: x.clone(),
                });
                worst_value[k] = value;
            }
        }
    }

    if let Some((k, r)) = results.iter().enumerate().find(|(_, r)| !r.passed()) {
        return Err(ProblemError::ValidationFailed {
            check: r.check,
            sample: r.worst_sample.clone().expect("failed check has a sample"),
            value: worst_value[k],
        });
    }
    Ok(ValidationReport {
        checks: results,
        gamma: chi.map(gamma_exponent),
    })
}
