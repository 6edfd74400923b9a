//! Difference quotients and the discrete operators built from them.
//!
//! With `Δ_{h,l} u = (u(x + hl) − 2u(x) + u(x − hl)) / h²` and a drift
//! quotient along each direction,
//!
//! ```text
//! L_h^{αβ} u = Σ_k a_k Δ_{h,l_k} u + Σ_k b̄_k δ_{h,l_k} u − c u
//! F_h[u]     = max_α min_β [ L_h^{αβ} u + f^{αβ} ]
//! P_h[u]     = Σ_k [ λ_high (Δ_{h,l_k} u)⁺ − λ_low (Δ_{h,l_k} u)⁻ ]
//! ```
//!
//! Every `L_h^{αβ}` at a point is stored as a [`Stencil`]: nonnegative
//! weights on same-slice neighbours and a diagonal weight equal to their sum
//! plus `c`.

use alloc::vec::Vec;

use thiserror::Error;

use crate::grid::{GridFunction, GridPoint, SpaceTimeGrid};
use crate::lattice::{DirectionSet, LatticeCoefficients, LatticeError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("stencil leaves the grid at slice {slice}, node {node}")]
    OutOfGrid { slice: usize, node: usize },
    #[error("negative stencil weight {weight} at node {node}, direction #{direction}")]
    NonMonotone {
        node: usize,
        direction: usize,
        weight: f64,
    },
    #[error("invalid Pucci parameters: {0}")]
    InvalidPucci(&'static str),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
}

/// Discretisation of the first-order term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum DriftMode {
    /// One-sided difference chosen by the sign of `b̄_k`; always monotone.
    #[default]
    Upwind,
    /// Forward difference `(u(x + hl) − u(x))/h` regardless of sign; monotone
    /// only when `b̄_k ≥ −a_k/h`.
    ForwardPaper,
}

/// Directionwise Pucci operator parameters, `0 < λ_low ≤ λ_high`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PucciParams {
    pub lambda_low: f64,
    pub lambda_high: f64,
}

impl PucciParams {
    pub fn new(lambda_low: f64, lambda_high: f64) -> Result<Self, OperatorError> {
        if !(lambda_low > 0.0 && lambda_low.is_finite() && lambda_high.is_finite()) {
            return Err(OperatorError::InvalidPucci("lambdas must be positive and finite"));
        }
        if lambda_low > lambda_high {
            return Err(OperatorError::InvalidPucci("lambda_low exceeds lambda_high"));
        }
        Ok(Self {
            lambda_low,
            lambda_high,
        })
    }

    /// `λ_low = δ/2`, `λ_high = 1/δ`.
    pub fn for_ellipticity(delta: f64) -> Self {
        Self {
            lambda_low: 0.5 * delta,
            lambda_high: 1.0 / delta,
        }
    }

    /// Ellipticity constant of the gradient matrices `Σ p_k l_k l_kᵀ`,
    /// `min(λ_low, (λ_high Σ|l_k|²)⁻¹)`.
    pub fn delta_hat(&self, directions: &DirectionSet) -> f64 {
        self.lambda_low
            .min(1.0 / (self.lambda_high * directions.sum_norm_sq()))
    }

    /// Checks `λ_low ≤ λ_high` and `δ̂ < δ`.
    pub fn check(&self, delta: f64, directions: &DirectionSet) -> Result<(), OperatorError> {
        Self::new(self.lambda_low, self.lambda_high)?;
        if self.delta_hat(directions) >= delta {
            return Err(OperatorError::InvalidPucci("delta_hat must be below delta"));
        }
        Ok(())
    }

    /// `λ_high z⁺ − λ_low z⁻`
    #[inline]
    pub fn phi(&self, z: f64) -> f64 {
        if z > 0.0 {
            self.lambda_high * z
        } else {
            self.lambda_low * z
        }
    }
}

/// `L_h^{αβ} u + f^{αβ}` at one node:
/// `Σ_j w_j u(x_j) − diagonal · u(x) + source`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Stencil {
    pub neighbors: Vec<(usize, f64)>,
    pub diagonal: f64,
    pub source: f64,
}

impl Stencil {
    /// Assembles the stencil of one action pair at `node`.
    pub fn assemble(
        grid: &SpaceTimeGrid,
        directions: &DirectionSet,
        coeffs: &LatticeCoefficients,
        node: usize,
        mode: DriftMode,
    ) -> Result<Self, OperatorError> {
        let mut neighbors = Vec::with_capacity(2 * directions.len());
        let sum = for_each_weight(grid, directions, coeffs, node, mode, |id, w| neighbors.push((id, w)))?;
        Ok(Self {
            neighbors,
            diagonal: sum + coeffs.discount,
            source: coeffs.source,
        })
    }

    /// Sum of neighbour weights.
    pub fn neighbor_weight(&self) -> f64 {
        self.neighbors.iter().map(|&(_, w)| w).sum()
    }

    /// Evaluates on one slice of values.
    #[inline]
    pub fn apply(&self, slice: &[f64], center: f64) -> f64 {
        let mut s = self.source - self.diagonal * center;
        for &(j, w) in &self.neighbors {
            s += w * slice[j];
        }
        s
    }

    /// `Σ_j w_j u(x_j) + source`, the part independent of the centre value.
    #[inline]
    pub fn off_center(&self, slice: &[f64]) -> f64 {
        let mut s = self.source;
        for &(j, w) in &self.neighbors {
            s += w * slice[j];
        }
        s
    }
}

/// Visits the nonzero neighbour weights of one action pair at `node` and
/// returns their sum.
pub(crate) fn for_each_weight(
    grid: &SpaceTimeGrid,
    directions: &DirectionSet,
    coeffs: &LatticeCoefficients,
    node: usize,
    mode: DriftMode,
    mut push: impl FnMut(usize, f64),
) -> Result<f64, OperatorError> {
    let h = grid.h();
    let h2 = grid.h2();
    let mut sum = 0.0;
    let out_of_grid = OperatorError::OutOfGrid { slice: usize::MAX, node };
    for (k, l) in directions.iter().enumerate() {
        let a = coeffs.diffusion[k];
        let b = coeffs.drift[k];
        let (mut w_plus, mut w_minus) = (a / h2, a / h2);
        match mode {
            DriftMode::Upwind => {
                if b >= 0.0 {
                    w_plus += b / h;
                } else {
                    w_minus -= b / h;
                }
            }
            DriftMode::ForwardPaper => w_plus += b / h,
        }
        if w_plus < 0.0 {
            return Err(OperatorError::NonMonotone {
                node,
                direction: k,
                weight: w_plus,
            });
        }
        if w_plus != 0.0 {
            push(grid.neighbor(node, l, false).ok_or(out_of_grid.clone())?, w_plus);
            sum += w_plus;
        }
        if w_minus != 0.0 {
            push(grid.neighbor(node, l, true).ok_or(out_of_grid.clone())?, w_minus);
            sum += w_minus;
        }
    }
    Ok(sum)
}

fn read(u: &GridFunction, p: GridPoint, offset: &[i64], negate: bool) -> Result<f64, OperatorError> {
    let grid = u.grid();
    if p.slice >= grid.n_slices() || p.node >= grid.n_nodes() {
        return Err(OperatorError::OutOfGrid {
            slice: p.slice,
            node: p.node,
        });
    }
    let n = grid.neighbor(p.node, offset, negate).ok_or(OperatorError::OutOfGrid {
        slice: p.slice,
        node: p.node,
    })?;
    Ok(u.get(GridPoint::new(p.slice, n)))
}

fn center(u: &GridFunction, p: GridPoint) -> Result<f64, OperatorError> {
    let grid = u.grid();
    if p.slice >= grid.n_slices() || p.node >= grid.n_nodes() {
        return Err(OperatorError::OutOfGrid {
            slice: p.slice,
            node: p.node,
        });
    }
    Ok(u.get(p))
}

/// `(u(t + h², x) − u(t, x)) / h²`
pub fn delta_t(u: &GridFunction, p: GridPoint) -> Result<f64, OperatorError> {
    let grid = u.grid();
    if p.slice + 1 >= grid.n_slices() {
        return Err(OperatorError::OutOfGrid {
            slice: p.slice,
            node: p.node,
        });
    }
    let now = center(u, p)?;
    Ok((u.get(GridPoint::new(p.slice + 1, p.node)) - now) / grid.h2())
}

/// `(u(x + hl) − 2u(x) + u(x − hl)) / h²`
pub fn delta2_l(u: &GridFunction, p: GridPoint, l: &[i64]) -> Result<f64, OperatorError> {
    let c = center(u, p)?;
    let plus = read(u, p, l, false)?;
    let minus = read(u, p, l, true)?;
    Ok((plus - 2.0 * c + minus) / u.grid().h2())
}

/// `(u(x + hl) − u(x)) / h`
pub fn delta_l_forward(u: &GridFunction, p: GridPoint, l: &[i64]) -> Result<f64, OperatorError> {
    let c = center(u, p)?;
    Ok((read(u, p, l, false)? - c) / u.grid().h())
}

/// `b̄ · (one-sided quotient along l)`, differencing toward `x + hl` when
/// `b̄ ≥ 0` and toward `x − hl` otherwise.
pub fn delta_l_upwind(u: &GridFunction, p: GridPoint, l: &[i64], bbar: f64) -> Result<f64, OperatorError> {
    if bbar == 0.0 {
        center(u, p)?;
        return Ok(0.0);
    }
    let c = center(u, p)?;
    let h = u.grid().h();
    if bbar > 0.0 {
        Ok(bbar * (read(u, p, l, false)? - c) / h)
    } else {
        Ok(bbar * (c - read(u, p, l, true)?) / h)
    }
}

/// `L_h^{αβ} u(t, x) + f^{αβ}` for one action pair.
pub fn apply_l_h(
    u: &GridFunction,
    directions: &DirectionSet,
    coeffs: &LatticeCoefficients,
    p: GridPoint,
    mode: DriftMode,
) -> Result<f64, OperatorError> {
    let stencil = Stencil::assemble(u.grid(), directions, coeffs, p.node, mode).map_err(|e| match e {
        OperatorError::OutOfGrid { node, .. } => OperatorError::OutOfGrid { slice: p.slice, node },
        other => other,
    })?;
    Ok(stencil.apply(u.slice(p.slice), u.get(p)))
}

/// `F_h[u](t, x)` together with the selected `(α, β)`.
///
/// `coeffs[α][β]` holds the lattice coefficients at the point. Ties go to
/// the first index in declaration order.
pub fn apply_f_h_with_policy(
    u: &GridFunction,
    directions: &DirectionSet,
    coeffs: &[Vec<LatticeCoefficients>],
    p: GridPoint,
    mode: DriftMode,
) -> Result<(f64, usize, usize), OperatorError> {
    let mut best = (f64::NEG_INFINITY, 0, 0);
    for (ia, row) in coeffs.iter().enumerate() {
        let mut worst = (f64::INFINITY, 0);
        for (ib, c) in row.iter().enumerate() {
            let v = apply_l_h(u, directions, c, p, mode)?;
            if v < worst.0 {
                worst = (v, ib);
            }
        }
        if worst.0 > best.0 {
            best = (worst.0, ia, worst.1);
        }
    }
    Ok(best)
}

/// `F_h[u](t, x) = max_α min_β [L_h^{αβ} u + f^{αβ}]`.
pub fn apply_f_h(
    u: &GridFunction,
    directions: &DirectionSet,
    coeffs: &[Vec<LatticeCoefficients>],
    p: GridPoint,
    mode: DriftMode,
) -> Result<f64, OperatorError> {
    apply_f_h_with_policy(u, directions, coeffs, p, mode).map(|(v, _, _)| v)
}

/// `P_h[u](t, x)`
pub fn apply_p_h(
    u: &GridFunction,
    params: &PucciParams,
    directions: &DirectionSet,
    p: GridPoint,
) -> Result<f64, OperatorError> {
    let mut s = 0.0;
    for l in directions.iter() {
        s += params.phi(delta2_l(u, p, l)?);
    }
    Ok(s)
}
