//! Stencil directions and the lattice representation
//!
//! ```text
//! a_{ij} D_{ij} u + b_i D_i u = Σ_k a_k D²_{l_k} u + Σ_k b̄_k D_{l_k} u,   a_k ≥ 0
//! ```
//!
//! The built-in rule covers strictly diagonally dominant diffusion matrices
//! on the direction set `{e_i} ∪ {e_i ± e_j}`. Other matrices need a custom
//! [`LatticeRepresentation`].

use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::linalg::Matrix;
use crate::problem::IsaacsProblem;

/// Default floor on basis weights.
pub const DEFAULT_MIN_WEIGHT: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("no built-in direction set for d = {0}")]
    UnsupportedDimension(usize),
    #[error("invalid direction set: {0}")]
    InvalidDirections(&'static str),
    #[error("diffusion matrix is not diagonally dominant in row {row} (basis weight {weight})")]
    DecompositionInfeasible { row: usize, weight: f64 },
    #[error("diffusion matrix is not symmetric")]
    NotSymmetric,
    #[error("direction set lacks e_{i} ± e_{j} needed for a nonzero off-diagonal entry")]
    MissingDirection { i: usize, j: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

/// Finite set of integer directions, stored up to sign.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectionSet {
    dim: usize,
    directions: Vec<i64>,
    radius_sq: i64,
}

impl DirectionSet {
    pub fn new(dim: usize, directions: &[Vec<i64>]) -> Result<Self, LatticeError> {
        if dim == 0 || directions.is_empty() {
            return Err(LatticeError::InvalidDirections("empty direction set"));
        }
        if directions.iter().any(|l| l.len() != dim) {
            return Err(LatticeError::InvalidDirections("direction of wrong length"));
        }
        if directions.iter().any(|l| l.iter().all(|&c| c == 0)) {
            return Err(LatticeError::InvalidDirections("zero direction"));
        }
        for (k, l) in directions.iter().enumerate() {
            for m in &directions[..k] {
                let parallel = (0..dim).all(|i| (0..dim).all(|j| l[i] * m[j] == l[j] * m[i]));
                if parallel {
                    return Err(LatticeError::InvalidDirections("parallel directions"));
                }
            }
        }
        for i in 0..dim {
            let has_basis = directions
                .iter()
                .any(|l| l.iter().enumerate().all(|(j, &c)| if j == i { c.abs() == 1 } else { c == 0 }));
            if !has_basis {
                return Err(LatticeError::InvalidDirections("missing a standard basis vector"));
            }
        }
        let radius_sq = directions
            .iter()
            .map(|l| l.iter().map(|c| c * c).sum::<i64>())
            .max()
            .unwrap_or(0);
        Ok(Self {
            dim,
            directions: directions.iter().flatten().copied().collect(),
            radius_sq,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.directions.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[i64] {
        &self.directions[k * self.dim..(k + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i64]> {
        self.directions.chunks_exact(self.dim)
    }

    /// `max_k |l_k|`, the radius of the smallest origin-centred ball
    /// containing every direction.
    pub fn radius(&self) -> f64 {
        libm::sqrt(self.radius_sq as f64)
    }

    /// `Σ_k |l_k|²`
    pub fn sum_norm_sq(&self) -> f64 {
        self.iter()
            .map(|l| l.iter().map(|c| (c * c) as f64).sum::<f64>())
            .sum()
    }

    /// Position of `±e_i`.
    pub fn basis_position(&self, i: usize) -> Option<usize> {
        self.iter()
            .position(|l| l.iter().enumerate().all(|(j, &c)| if j == i { c.abs() == 1 } else { c == 0 }))
    }

    /// Position of `±(e_i + s·e_j)`, `s = ±1`.
    fn pair_position(&self, i: usize, j: usize, s: i64) -> Option<usize> {
        self.iter().position(|l| {
            let sign = l[i];
            sign.abs() == 1
                && l[j] == s * sign
                && l.iter().enumerate().all(|(k, &c)| k == i || k == j || c == 0)
        })
    }
}

/// Basis vectors plus `e_i ± e_j` for `i < j`; `d ≤ 3`.
pub fn standard_directions(dim: usize) -> Result<DirectionSet, LatticeError> {
    if !(1..=3).contains(&dim) {
        return Err(LatticeError::UnsupportedDimension(dim));
    }
    let mut dirs = Vec::new();
    for i in 0..dim {
        let mut e = vec![0i64; dim];
        e[i] = 1;
        dirs.push(e);
    }
    for i in 0..dim {
        for j in (i + 1)..dim {
            let mut plus = vec![0i64; dim];
            plus[i] = 1;
            plus[j] = 1;
            let mut minus = vec![0i64; dim];
            minus[i] = 1;
            minus[j] = -1;
            dirs.push(plus);
            dirs.push(minus);
        }
    }
    DirectionSet::new(dim, &dirs)
}

/// Weights `a_k ≥ 0` with `Σ_k a_k l_k l_kᵀ = a`:
/// `a_{e_i ± e_j} = (±a_ij)⁺` and `a_{e_i} = a_ii − Σ_{j≠i} |a_ij|`.
pub fn decompose_diffusion(
    a: &Matrix,
    directions: &DirectionSet,
    min_weight: f64,
) -> Result<Vec<f64>, LatticeError> {
    let d = directions.dim();
    if a.dim() != d {
        return Err(LatticeError::DimensionMismatch {
            expected: d,
            got: a.dim(),
        });
    }
    if !a.is_symmetric(1e-12 * (1.0 + a.as_slice().iter().fold(0.0f64, |m, v| m.max(v.abs())))) {
        return Err(LatticeError::NotSymmetric);
    }
    let mut weights = vec![0.0; directions.len()];
    for i in 0..d {
        for j in (i + 1)..d {
            let aij = 0.5 * (a[(i, j)] + a[(j, i)]);
            if aij == 0.0 {
                continue;
            }
            let s = if aij > 0.0 { 1 } else { -1 };
            let k = directions
                .pair_position(i, j, s)
                .ok_or(LatticeError::MissingDirection { i, j })?;
            weights[k] = aij.abs();
        }
    }
    for i in 0..d {
        let off: f64 = (0..d)
            .filter(|&j| j != i)
            .map(|j| (0.5 * (a[(i, j)] + a[(j, i)])).abs())
            .sum();
        let w = a[(i, i)] - off;
        if !(w >= min_weight) {
            return Err(LatticeError::DecompositionInfeasible { row: i, weight: w });
        }
        let k = directions
            .basis_position(i)
            .expect("direction sets always contain the basis");
        weights[k] = w;
    }
    Ok(weights)
}

/// Basis-only drift weights: `b̄_{e_i} = b_i` (sign-adjusted for `−e_i`).
pub fn decompose_drift(b: &[f64], directions: &DirectionSet) -> Vec<f64> {
    let mut weights = vec![0.0; directions.len()];
    for (i, &bi) in b.iter().enumerate() {
        let k = directions
            .basis_position(i)
            .expect("direction sets always contain the basis");
        weights[k] = bi * directions.direction(k)[i] as f64;
    }
    weights
}

/// Coefficients of `L^{αβ}` at one point, in lattice form.
#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCoefficients {
    /// `a_k ≥ 0`, one per direction
    pub diffusion: Vec<f64>,
    /// `b̄_k`, one per direction
    pub drift: Vec<f64>,
    pub discount: f64,
    pub source: f64,
}

/// How a diffusion matrix and drift vector are spread over a direction set.
///
/// Implement this to use a custom direction set, e.g. for matrices that are
/// not diagonally dominant.
pub trait LatticeRepresentation: Send + Sync {
    fn directions(&self) -> &DirectionSet;
    fn diffusion_weights(&self, a: &Matrix) -> Result<Vec<f64>, LatticeError>;
    fn drift_weights(&self, b: &[f64]) -> Vec<f64>;

    fn coefficients(
        &self,
        problem: &IsaacsProblem,
        alpha: usize,
        beta: usize,
        t: f64,
        x: &[f64],
    ) -> Result<LatticeCoefficients, LatticeError> {
        let a = problem.diffusion(alpha, beta, t, x);
        let b = problem.drift(alpha, beta, t, x);
        if b.len() != self.directions().dim() {
            return Err(LatticeError::DimensionMismatch {
                expected: self.directions().dim(),
                got: b.len(),
            });
        }
        Ok(LatticeCoefficients {
            diffusion: self.diffusion_weights(&a)?,
            drift: self.drift_weights(&b),
            discount: problem.discount(alpha, beta, t, x),
            source: problem.source(alpha, beta, t, x),
        })
    }
}

/// [`standard_directions`] with the closed-form dominance rule.
#[derive(Debug, Clone)]
pub struct StandardLattice {
    directions: DirectionSet,
    min_weight: f64,
}

impl StandardLattice {
    pub fn new(dim: usize) -> Result<Self, LatticeError> {
        Ok(Self {
            directions: standard_directions(dim)?,
            min_weight: DEFAULT_MIN_WEIGHT,
        })
    }

    pub fn with_min_weight(mut self, min_weight: f64) -> Self {
        self.min_weight = min_weight;
        self
    }

    pub fn min_weight(&self) -> f64 {
        self.min_weight
    }
}

impl LatticeRepresentation for StandardLattice {
    fn directions(&self) -> &DirectionSet {
        &self.directions
    }

    fn diffusion_weights(&self, a: &Matrix) -> Result<Vec<f64>, LatticeError> {
        decompose_diffusion(a, &self.directions, self.min_weight)
    }

    fn drift_weights(&self, b: &[f64]) -> Vec<f64> {
        decompose_drift(b, &self.directions)
    }
}
