//! Backward time-marching for the implicit scheme and its K-truncations.
//!
//! Each slice solves the pointwise system
//!
//! ```text
//! v(x) = max_α min_β (v_next(x) + h²(N^{αβ}v + f^{αβ})) / (1 + h² d^{αβ})
//! ```
//!
//! by fixed-point iteration, where `N^{αβ}` collects the same-slice neighbour
//! weights and `d^{αβ}` is their sum plus `c^{αβ}`. Every branch is affine and
//! strictly decreasing in the centre value, so the fixed point is the root of
//! the sup-inf equation. The map is a sup-norm contraction with factor
//! `S/(1 + S)`, `S = h² max Σ weights`.
//!
//! The truncated problems replace `F_h` by `max(F_h, P_h − K)` (upper) or
//! `min(F_h, −P_h[−·] + K)` (lower). The Pucci branch is piecewise linear in
//! the centre value and its root is found exactly.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use thiserror::Error;

use crate::grid::{GridError, GridFunction, SpaceTimeGrid};
use crate::lattice::{LatticeError, LatticeRepresentation};
use crate::operators::{for_each_weight, DriftMode, OperatorError, PucciParams};
use crate::problem::IsaacsProblem;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Maximum number of policy-iteration rounds per slice.
const MAX_POLICY_ROUNDS: usize = 50;

#[cfg(feature = "parallel")]
const PARALLEL_MIN_NODES: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error("slice at t = {time} did not converge in {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        time: f64,
        residual: f64,
        iterations: usize,
    },
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
    #[error("invalid truncation: {0}")]
    InvalidTruncation(&'static str),
    #[error("dimension mismatch: problem {problem}, grid {grid}, lattice {lattice}")]
    DimensionMismatch {
        problem: usize,
        grid: usize,
        lattice: usize,
    },
    #[error("t = {0} is not the time of an interior slice")]
    NotInteriorSlice(f64),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Update order within a slice sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SweepMode {
    /// Jacobi: every point reads the previous iterate. Deterministic under
    /// any degree of parallelism.
    #[default]
    Simultaneous,
    /// Gauss–Seidel: points are overwritten in node order.
    InPlace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Acceleration {
    #[default]
    None,
    /// Freeze the active branch at every point, solve the linear problem,
    /// update the branches and repeat; finish with fixed-point sweeps.
    PolicyIteration,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct SolverConfig {
    /// Sup-norm stopping tolerance of the slice iteration.
    pub slice_tolerance: f64,
    pub max_slice_iterations: usize,
    pub sweep_mode: SweepMode,
    pub drift_mode: DriftMode,
    pub acceleration: Acceleration,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            slice_tolerance: 1e-10,
            max_slice_iterations: 10_000,
            sweep_mode: SweepMode::Simultaneous,
            drift_mode: DriftMode::Upwind,
            acceleration: Acceleration::None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.slice_tolerance > 0.0 && self.slice_tolerance.is_finite()) {
            return Err(SolverError::InvalidConfig("slice_tolerance must be positive"));
        }
        if self.max_slice_iterations == 0 {
            return Err(SolverError::InvalidConfig("max_slice_iterations must be at least 1"));
        }
        Ok(())
    }

    /// Guaranteed bound on [`slice_residual`] for a converged slice,
    /// `tol (1 + h⁻²)`.
    pub fn residual_bound(&self, h: f64) -> f64 {
        self.slice_tolerance * (1.0 + 1.0 / (h * h))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum TruncationSide {
    /// `max(F_h, P_h − K)`
    Upper,
    /// `min(F_h, −P_h[−·] + K)`
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TruncationSpec {
    pub k: f64,
    pub side: TruncationSide,
    pub pucci: PucciParams,
}

impl TruncationSpec {
    pub fn new(k: f64, side: TruncationSide, pucci: PucciParams) -> Result<Self, SolverError> {
        let spec = Self { k, side, pucci };
        spec.validate()?;
        Ok(spec)
    }

    /// Truncation at level `k` with the default Pucci parameters for
    /// `problem`.
    pub fn for_problem(problem: &IsaacsProblem, k: f64, side: TruncationSide) -> Result<Self, SolverError> {
        Self::new(k, side, PucciParams::for_ellipticity(problem.delta()))
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(SolverError::InvalidTruncation("K must be positive and finite"));
        }
        PucciParams::new(self.pucci.lambda_low, self.pucci.lambda_high)?;
        Ok(())
    }
}

/// Per-slice iteration record.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SliceStats {
    pub slice: usize,
    pub time: f64,
    /// Fixed-point sweeps, including inner sweeps of policy iteration.
    pub iterations: usize,
    pub policy_rounds: usize,
    /// Certified sup-norm contraction factor of the slice map.
    pub contraction_factor: f64,
    /// Stopping threshold on the sup-norm change.
    pub effective_tolerance: f64,
    pub initial_change: f64,
    pub final_change: f64,
    /// [`slice_residual`] of the accepted iterate.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SolveStats {
    pub h: f64,
    pub residual_bound: f64,
    /// Latest slice first.
    pub slices: Vec<SliceStats>,
}

impl SolveStats {
    pub fn total_iterations(&self) -> usize {
        self.slices.iter().map(|s| s.iterations).sum()
    }

    pub fn max_iterations(&self) -> usize {
        self.slices.iter().map(|s| s.iterations).max().unwrap_or(0)
    }

    pub fn max_contraction(&self) -> f64 {
        self.slices
            .iter()
            .map(|s| s.contraction_factor)
            .fold(0.0, f64::max)
    }

    pub fn max_residual(&self) -> f64 {
        self.slices.iter().map(|s| s.residual).fold(0.0, f64::max)
    }

    /// Every slice has contraction factor below one and residual within
    /// the bound.
    pub fn certified(&self) -> bool {
        self.slices
            .iter()
            .all(|s| s.contraction_factor < 1.0 && s.residual <= self.residual_bound)
    }
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub values: GridFunction,
    pub stats: SolveStats,
}

/// Solves `δ_{h,t}v + F_h[v] = 0` with `v = g` on the parabolic boundary.
pub fn solve_isaacs<L: LatticeRepresentation + ?Sized>(
    problem: &IsaacsProblem,
    grid: Arc<SpaceTimeGrid>,
    lattice: &L,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    march(problem, grid, lattice, config, None)
}

/// Solves the upper or lower K-truncated scheme.
pub fn solve_truncated<L: LatticeRepresentation + ?Sized>(
    problem: &IsaacsProblem,
    grid: Arc<SpaceTimeGrid>,
    lattice: &L,
    spec: &TruncationSpec,
    config: &SolverConfig,
) -> Result<Solution, SolverError> {
    spec.validate()?;
    march(problem, grid, lattice, config, Some(spec))
}

/// `sup_x |max_α min_β [v_next + h²(N v + f) − (1 + h²d) v]| / h²` over the
/// interior of the slice at time `t`, with the truncated operator when
/// `truncation` is given.
pub fn slice_residual<L: LatticeRepresentation + ?Sized>(
    v: &GridFunction,
    problem: &IsaacsProblem,
    lattice: &L,
    t: f64,
    drift_mode: DriftMode,
    truncation: Option<&TruncationSpec>,
) -> Result<f64, SolverError> {
    let grid = v.grid().clone();
    check_dims(problem, &grid, lattice)?;
    if let Some(spec) = truncation {
        spec.validate()?;
    }
    let tol = 1e-9 * grid.h2();
    let s = grid
        .interior_slices()
        .find(|&s| (grid.time(s) - t).abs() <= tol)
        .ok_or(SolverError::NotInteriorSlice(t))?;
    let mut ws = Workspace::new(problem, &grid, lattice, drift_mode, truncation);
    ws.assemble(s)?;
    Ok(ws.residual(v.slice(s), v.slice(s + 1)))
}

fn check_dims<L: LatticeRepresentation + ?Sized>(
    problem: &IsaacsProblem,
    grid: &SpaceTimeGrid,
    lattice: &L,
) -> Result<(), SolverError> {
    let (p, g, l) = (problem.dim(), grid.dim(), lattice.directions().dim());
    if p != g || g != l {
        return Err(SolverError::DimensionMismatch {
            problem: p,
            grid: g,
            lattice: l,
        });
    }
    Ok(())
}

fn march<L: LatticeRepresentation + ?Sized>(
    problem: &IsaacsProblem,
    grid: Arc<SpaceTimeGrid>,
    lattice: &L,
    config: &SolverConfig,
    truncation: Option<&TruncationSpec>,
) -> Result<Solution, SolverError> {
    config.validate()?;
    check_dims(problem, &grid, lattice)?;
    let g = problem.boundary_fn();
    let mut values = GridFunction::from_fn(grid.clone(), |t, x| g(t, x));
    let mut ws = Workspace::new(problem, &grid, lattice, config.drift_mode, truncation);
    let mut stats = SolveStats {
        h: grid.h(),
        residual_bound: config.residual_bound(grid.h()),
        slices: Vec::with_capacity(grid.n_slices()),
    };
    for s in grid.interior_slices().rev() {
        ws.assemble(s)?;
        let (cur, next) = values.slice_pair_mut(s);
        for &node in grid.interior_nodes() {
            cur[node] = next[node];
        }
        stats.slices.push(ws.solve_slice(s, cur, next, config)?);
    }
    Ok(Solution { values, stats })
}

/// Truncation branch in centre-value form:
/// `H(z) = v_next + offset − z + Σ_k ψ(S_k − 2z)` with
/// `ψ(y) = hi·y` for `y > 0` and `lo·y` otherwise.
#[derive(Debug, Clone, Copy)]
struct PucciBranch {
    hi: f64,
    lo: f64,
    offset: f64,
    upper: bool,
}

/// Flat per-slice operator data for the interior nodes.
struct Workspace<'a, L: ?Sized> {
    problem: &'a IsaacsProblem,
    grid: &'a SpaceTimeGrid,
    lattice: &'a L,
    mode: DriftMode,
    n_alpha: usize,
    n_beta: usize,
    /// Stencil entry `e = pos · n_pairs + α · n_beta + β`.
    nb_start: Vec<usize>,
    nb_id: Vec<usize>,
    /// Neighbour weights times h².
    nb_w: Vec<f64>,
    /// `1 + h² d`
    denom: Vec<f64>,
    /// `h² f`
    src: Vec<f64>,
    /// `Σ` neighbour weights times h², per entry.
    wsum: Vec<f64>,
    pucci: Option<PucciBranch>,
    /// `(x + h l_k, x − h l_k)` per interior node and direction.
    pucci_nb: Vec<(usize, usize)>,
    n_dirs: usize,
}

impl<'a, L: LatticeRepresentation + ?Sized> Workspace<'a, L> {
    fn new(
        problem: &'a IsaacsProblem,
        grid: &'a SpaceTimeGrid,
        lattice: &'a L,
        mode: DriftMode,
        truncation: Option<&TruncationSpec>,
    ) -> Self {
        let n_dirs = lattice.directions().len();
        let pucci = truncation.map(|t| {
            let kh2 = t.k * grid.h2();
            match t.side {
                TruncationSide::Upper => PucciBranch {
                    hi: t.pucci.lambda_high,
                    lo: t.pucci.lambda_low,
                    offset: -kh2,
                    upper: true,
                },
                TruncationSide::Lower => PucciBranch {
                    hi: t.pucci.lambda_low,
                    lo: t.pucci.lambda_high,
                    offset: kh2,
                    upper: false,
                },
            }
        });
        let mut pucci_nb = Vec::new();
        if pucci.is_some() {
            for &node in grid.interior_nodes() {
                for l in lattice.directions().iter() {
                    let p = grid.neighbor(node, l, false);
                    let m = grid.neighbor(node, l, true);
                    // interior nodes keep every stencil point on the grid
                    pucci_nb.push((p.unwrap_or(node), m.unwrap_or(node)));
                }
            }
        }
        Self {
            problem,
            grid,
            lattice,
            mode,
            n_alpha: problem.actions().n_alpha(),
            n_beta: problem.actions().n_beta(),
            nb_start: Vec::new(),
            nb_id: Vec::new(),
            nb_w: Vec::new(),
            denom: Vec::new(),
            src: Vec::new(),
            wsum: Vec::new(),
            pucci,
            pucci_nb,
            n_dirs,
        }
    }

    fn n_pairs(&self) -> usize {
        self.n_alpha * self.n_beta
    }

    fn assemble(&mut self, s: usize) -> Result<(), SolverError> {
        let grid = self.grid;
        let t = grid.time(s);
        let h2 = grid.h2();
        let n_int = grid.interior_nodes().len();
        let n_entries = n_int * self.n_pairs();
        self.nb_start.clear();
        self.nb_id.clear();
        self.nb_w.clear();
        self.denom.clear();
        self.src.clear();
        self.wsum.clear();
        self.nb_start.reserve(n_entries + 1);
        self.nb_start.push(0);
        for &node in grid.interior_nodes() {
            let x = grid.coords(node);
            for ia in 0..self.n_alpha {
                for ib in 0..self.n_beta {
                    let c = self.lattice.coefficients(self.problem, ia, ib, t, x)?;
                    let (ids, ws) = (&mut self.nb_id, &mut self.nb_w);
                    let sum = for_each_weight(grid, self.lattice.directions(), &c, node, self.mode, |id, w| {
                        ids.push(id);
                        ws.push(h2 * w);
                    })
                    .map_err(|e| match e {
                        OperatorError::OutOfGrid { node, .. } => OperatorError::OutOfGrid { slice: s, node },
                        other => other,
                    })?;
                    self.nb_start.push(self.nb_id.len());
                    self.denom.push(1.0 + h2 * (sum + c.discount));
                    self.src.push(h2 * c.source);
                    self.wsum.push(h2 * sum);
                }
            }
        }
        Ok(())
    }

    #[inline]
    fn branch_root(&self, e: usize, vnext: f64, cur: &[f64]) -> f64 {
        let mut acc = vnext + self.src[e];
        for j in self.nb_start[e]..self.nb_start[e + 1] {
            acc += self.nb_w[j] * cur[self.nb_id[j]];
        }
        acc / self.denom[e]
    }

    #[inline]
    fn branch_defect(&self, e: usize, vnext: f64, center: f64, cur: &[f64]) -> f64 {
        let mut acc = vnext + self.src[e] - self.denom[e] * center;
        for j in self.nb_start[e]..self.nb_start[e + 1] {
            acc += self.nb_w[j] * cur[self.nb_id[j]];
        }
        acc
    }

    /// Root of the `F_h` branch and the selected `(α, β)` entry.
    fn f_root(&self, pos: usize, vnext: f64, cur: &[f64]) -> (f64, usize) {
        let base = pos * self.n_pairs();
        let mut best = (f64::NEG_INFINITY, base);
        for ia in 0..self.n_alpha {
            let mut worst = (f64::INFINITY, base);
            for ib in 0..self.n_beta {
                let e = base + ia * self.n_beta + ib;
                let r = self.branch_root(e, vnext, cur);
                if r < worst.0 {
                    worst = (r, e);
                }
            }
            if worst.0 > best.0 {
                best = worst;
            }
        }
        best
    }

    fn fill_sums(&self, pos: usize, cur: &[f64], sums: &mut Vec<f64>) {
        sums.clear();
        let nb = &self.pucci_nb[pos * self.n_dirs..(pos + 1) * self.n_dirs];
        sums.extend(nb.iter().map(|&(p, m)| cur[p] + cur[m]));
    }

    /// New centre value at interior position `pos`.
    fn update(&self, pos: usize, vnext: f64, cur: &[f64], scratch: &mut Vec<f64>) -> f64 {
        let (rf, _) = self.f_root(pos, vnext, cur);
        match self.pucci {
            None => rf,
            Some(b) => {
                self.fill_sums(pos, cur, scratch);
                let rp = pucci_root(vnext + b.offset, scratch, b.hi, b.lo);
                if b.upper {
                    rf.max(rp)
                } else {
                    rf.min(rp)
                }
            }
        }
    }

    fn defect(&self, pos: usize, vnext: f64, center: f64, cur: &[f64]) -> f64 {
        let base = pos * self.n_pairs();
        let mut best = f64::NEG_INFINITY;
        for ia in 0..self.n_alpha {
            let mut worst = f64::INFINITY;
            for ib in 0..self.n_beta {
                worst = worst.min(self.branch_defect(base + ia * self.n_beta + ib, vnext, center, cur));
            }
            best = best.max(worst);
        }
        match self.pucci {
            None => best,
            Some(b) => {
                let nb = &self.pucci_nb[pos * self.n_dirs..(pos + 1) * self.n_dirs];
                let mut p = vnext + b.offset - center;
                for &(ip, im) in nb {
                    let y = cur[ip] + cur[im] - 2.0 * center;
                    p += if y > 0.0 { b.hi * y } else { b.lo * y };
                }
                if b.upper {
                    best.max(p)
                } else {
                    best.min(p)
                }
            }
        }
    }

    fn residual(&self, cur: &[f64], next: &[f64]) -> f64 {
        let h2 = self.grid.h2();
        self.grid
            .interior_nodes()
            .iter()
            .enumerate()
            .map(|(pos, &node)| (self.defect(pos, next[node], cur[node], cur) / h2).abs())
            .fold(0.0, |m, r| if r.is_nan() || m.is_nan() { f64::NAN } else { m.max(r) })
    }

    /// `(q, D)`: contraction factor and the largest scaling between the
    /// change of one sweep and the normalised defect.
    fn certificate(&self) -> (f64, f64) {
        let smax = self.wsum.iter().copied().fold(0.0, f64::max);
        let dmax = self.denom.iter().copied().fold(1.0, f64::max);
        let mut q = smax / (1.0 + smax);
        let mut scale = dmax;
        if let Some(b) = self.pucci {
            let c = 2.0 * self.n_dirs as f64 * b.hi.max(b.lo);
            q = q.max(c / (1.0 + c));
            scale = scale.max(1.0 + c);
        }
        (q, scale)
    }

    fn sweep(&self, cur: &mut [f64], next: &[f64], mode: SweepMode, buf: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        let nodes = self.grid.interior_nodes();
        match mode {
            SweepMode::InPlace => {
                let mut change: f64 = 0.0;
                for (pos, &node) in nodes.iter().enumerate() {
                    let v = self.update(pos, next[node], cur, scratch);
                    change = nan_max(change, (v - cur[node]).abs());
                    cur[node] = v;
                }
                change
            }
            SweepMode::Simultaneous => {
                buf.clear();
                buf.resize(nodes.len(), 0.0);
                self.jacobi_into(cur, next, buf, scratch);
                let mut change: f64 = 0.0;
                for (pos, &node) in nodes.iter().enumerate() {
                    change = nan_max(change, (buf[pos] - cur[node]).abs());
                    cur[node] = buf[pos];
                }
                change
            }
        }
    }

    #[cfg(not(feature = "parallel"))]
    fn jacobi_into(&self, cur: &[f64], next: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        for (pos, &node) in self.grid.interior_nodes().iter().enumerate() {
            out[pos] = self.update(pos, next[node], cur, scratch);
        }
    }

    #[cfg(feature = "parallel")]
    fn jacobi_into(&self, cur: &[f64], next: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
        let nodes = self.grid.interior_nodes();
        if nodes.len() < PARALLEL_MIN_NODES {
            for (pos, &node) in nodes.iter().enumerate() {
                out[pos] = self.update(pos, next[node], cur, scratch);
            }
            return;
        }
        out.par_iter_mut()
            .enumerate()
            .for_each_init(Vec::new, |sc, (pos, o)| {
                *o = self.update(pos, next[nodes[pos]], cur, sc);
            });
    }

    fn solve_slice(
        &self,
        s: usize,
        cur: &mut [f64],
        next: &[f64],
        config: &SolverConfig,
    ) -> Result<SliceStats, SolverError> {
        let h2 = self.grid.h2();
        let (q, scale) = self.certificate();
        let tol = config.slice_tolerance;
        let tol_eff = tol * ((1.0 + h2) / scale).min(1.0);
        let bound = config.residual_bound(self.grid.h());
        let mut stats = SliceStats {
            slice: s,
            time: self.grid.time(s),
            iterations: 0,
            policy_rounds: 0,
            contraction_factor: q,
            effective_tolerance: tol_eff,
            initial_change: 0.0,
            final_change: 0.0,
            residual: 0.0,
        };
        let mut buf = Vec::new();
        let mut scratch = Vec::with_capacity(self.n_dirs);

        if config.acceleration == Acceleration::PolicyIteration {
            self.policy_iteration(cur, next, config, tol_eff, &mut stats, &mut scratch);
        }

        let mut first = true;
        loop {
            if stats.iterations >= config.max_slice_iterations {
                return Err(SolverError::NoConvergence {
                    time: stats.time,
                    residual: self.residual(cur, next),
                    iterations: stats.iterations,
                });
            }
            let change = self.sweep(cur, next, config.sweep_mode, &mut buf, &mut scratch);
            stats.iterations += 1;
            if first {
                stats.initial_change = change;
                first = false;
            }
            stats.final_change = change;
            if change.is_nan() {
                return Err(SolverError::NoConvergence {
                    time: stats.time,
                    residual: f64::NAN,
                    iterations: stats.iterations,
                });
            }
            if change <= tol_eff {
                let r = self.residual(cur, next);
                if r <= bound {
                    stats.residual = r;
                    return Ok(stats);
                }
            }
        }
    }

    /// Linear problem with the branch frozen at every point, solved by
    /// Gauss–Seidel; repeated until the branches stop changing.
    fn policy_iteration(
        &self,
        cur: &mut [f64],
        next: &[f64],
        config: &SolverConfig,
        tol_eff: f64,
        stats: &mut SliceStats,
        scratch: &mut Vec<f64>,
    ) {
        let nodes = self.grid.interior_nodes();
        // entry index, or usize::MAX for the Pucci branch
        let mut policy = vec![usize::MAX - 1; nodes.len()];
        // Pucci coefficient choice per direction: true for `hi`
        let mut region = vec![false; nodes.len() * self.n_dirs];
        let budget = config.max_slice_iterations / 2;
        for _ in 0..MAX_POLICY_ROUNDS {
            let mut changed = false;
            for (pos, &node) in nodes.iter().enumerate() {
                let (rf, e) = self.f_root(pos, next[node], cur);
                let mut choice = e;
                if let Some(b) = self.pucci {
                    self.fill_sums(pos, cur, scratch);
                    let rp = pucci_root(next[node] + b.offset, scratch, b.hi, b.lo);
                    let take_p = if b.upper { rp > rf } else { rp < rf };
                    if take_p {
                        choice = usize::MAX;
                        let nb = &self.pucci_nb[pos * self.n_dirs..(pos + 1) * self.n_dirs];
                        for (k, &(ip, im)) in nb.iter().enumerate() {
                            let hi = cur[ip] + cur[im] - 2.0 * rp > 0.0;
                            let slot = &mut region[pos * self.n_dirs + k];
                            if *slot != hi {
                                *slot = hi;
                                changed = true;
                            }
                        }
                    }
                }
                if policy[pos] != choice {
                    policy[pos] = choice;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
            stats.policy_rounds += 1;
            loop {
                if stats.iterations >= budget {
                    return;
                }
                let mut change: f64 = 0.0;
                for (pos, &node) in nodes.iter().enumerate() {
                    let v = match (policy[pos], self.pucci) {
                        (usize::MAX, Some(b)) => {
                            let nb = &self.pucci_nb[pos * self.n_dirs..(pos + 1) * self.n_dirs];
                            let mut num = next[node] + b.offset;
                            let mut den = 1.0;
                            for (k, &(ip, im)) in nb.iter().enumerate() {
                                let c = if region[pos * self.n_dirs + k] { b.hi } else { b.lo };
                                num += c * (cur[ip] + cur[im]);
                                den += 2.0 * c;
                            }
                            num / den
                        }
                        (e, _) => self.branch_root(e, next[node], cur),
                    };
                    change = nan_max(change, (v - cur[node]).abs());
                    cur[node] = v;
                }
                stats.iterations += 1;
                if change.is_nan() {
                    return;
                }
                if change <= 0.1 * tol_eff {
                    break;
                }
            }
        }
    }
}

#[inline]
fn nan_max(a: f64, b: f64) -> f64 {
    if b.is_nan() || a.is_nan() {
        f64::NAN
    } else {
        a.max(b)
    }
}

/// Root in `z` of `base − z + Σ_k ψ(S_k − 2z)`, where `ψ(y) = hi·y` for
/// `y > 0` and `lo·y` otherwise. `sums` is sorted in place.
fn pucci_root(base: f64, sums: &mut [f64], hi: f64, lo: f64) -> f64 {
    sums.sort_unstable_by(|a, b| a.total_cmp(b));
    let n = sums.len();
    let mut lo_sum = 0.0;
    let mut hi_sum: f64 = sums.iter().sum();
    for j in 0..=n {
        let a = base + lo * lo_sum + hi * hi_sum;
        let b = 1.0 + 2.0 * (lo * j as f64 + hi * (n - j) as f64);
        let z = a / b;
        if j == n || z <= 0.5 * sums[j] {
            return z;
        }
        lo_sum += sums[j];
        hi_sum -= sums[j];
    }
    unreachable!()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_grid, SpatialDomain};
    use crate::lattice::StandardLattice;
    use crate::linalg::Matrix;
    use crate::problem::{make_manufactured, ActionSets, ManufacturedKind, ManufacturedParams};
    use proptest::prelude::*;

    fn line_grid(h: f64, horizon: f64) -> Arc<SpaceTimeGrid> {
        Arc::new(build_grid(SpatialDomain::interval(0.0, 1.0).unwrap(), horizon, h, 1.0).unwrap())
    }

    fn heat() -> IsaacsProblem {
        make_manufactured(ManufacturedKind::Heat1d, ManufacturedParams::default())
            .unwrap()
            .problem
    }

    #[test]
    fn pucci_root_matches_bisection() {
        let mut rng_state = 12345u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((rng_state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
        };
        for _ in 0..500 {
            let n = 1 + (next().abs() * 2.0) as usize;
            let sums: Vec<f64> = (0..n).map(|_| next()).collect();
            let base = next();
            let (hi, lo) = (2.0, 0.25);
            let h = |z: f64| {
                base - z
                    + sums
                        .iter()
                        .map(|s| {
                            let y = s - 2.0 * z;
                            if y > 0.0 {
                                hi * y
                            } else {
                                lo * y
                            }
                        })
                        .sum::<f64>()
            };
            let (mut a, mut b) = (-100.0, 100.0);
            for _ in 0..200 {
                let m = 0.5 * (a + b);
                if h(m) > 0.0 {
                    a = m;
                } else {
                    b = m;
                }
            }
            let mut s = sums.clone();
            let z = pucci_root(base, &mut s, hi, lo);
            assert!((z - 0.5 * (a + b)).abs() < 1e-9, "{z} vs {a}");
            assert!(h(z).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_data_gives_zero() {
        let problem = IsaacsProblem::new(1, ActionSets::single(), 0.5, 1.0).unwrap();
        let lattice = StandardLattice::new(1).unwrap();
        let grid = line_grid(0.125, 0.5);
        let sol = solve_isaacs(&problem, grid.clone(), &lattice, &SolverConfig::default()).unwrap();
        assert!(sol.values.values().iter().all(|&v| v == 0.0));
        for side in [TruncationSide::Upper, TruncationSide::Lower] {
            let spec = TruncationSpec::for_problem(&problem, 1.0, side).unwrap();
            let sol = solve_truncated(&problem, grid.clone(), &lattice, &spec, &SolverConfig::default()).unwrap();
            assert!(sol.values.values().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn affine_exactness_2d() {
        let (p, q) = ([0.7, -1.3], 0.25);
        let b = [0.4, -0.9];
        let problem = IsaacsProblem::new(2, ActionSets::single(), 0.5, 2.0)
            .unwrap()
            .with_diffusion(|_, _, _, _| Matrix::from_rows(&[&[1.2, 0.3], &[0.3, 0.8]]))
            .with_drift(move |_, _, _, _| b.to_vec())
            .with_source(move |_, _, _, _| -(b[0] * p[0] + b[1] * p[1]))
            .with_boundary(move |_, x| p[0] * x[0] + p[1] * x[1] + q);
        let lattice = StandardLattice::new(2).unwrap();
        let grid = Arc::new(build_grid(SpatialDomain::unit_cube(2), 0.25, 0.125, core::f64::consts::SQRT_2).unwrap());
        let sol = solve_isaacs(&problem, grid.clone(), &lattice, &SolverConfig::default()).unwrap();
        for pt in grid.points() {
            let x = grid.coords(pt.node);
            let exact = p[0] * x[0] + p[1] * x[1] + q;
            assert!((sol.values.get(pt) - exact).abs() < 1e-8);
        }
        assert!(sol.stats.certified());
    }

    #[test]
    fn heat_error_decreases() {
        let case = make_manufactured(ManufacturedKind::Heat1d, ManufacturedParams::default()).unwrap();
        let lattice = StandardLattice::new(1).unwrap();
        let mut errs = Vec::new();
        for h in [0.125, 0.0625] {
            let grid = line_grid(h, 1.0);
            let sol = solve_isaacs(&case.problem, grid.clone(), &lattice, &SolverConfig::default()).unwrap();
            let exact = case.exact.clone();
            let err = grid
                .points()
                .map(|pt| (sol.values.get(pt) - exact(grid.time(pt.slice), grid.coords(pt.node))).abs())
                .fold(0.0, f64::max);
            errs.push(err);
        }
        assert!(errs[1] < errs[0], "{errs:?}");
    }

    #[test]
    fn residual_of_zero_with_unit_source() {
        let problem = IsaacsProblem::new(1, ActionSets::single(), 0.5, 1.0)
            .unwrap()
            .with_source(|_, _, _, _| 1.0);
        let lattice = StandardLattice::new(1).unwrap();
        let grid = line_grid(0.125, 0.5);
        let v = GridFunction::zeros(grid.clone());
        let r = slice_residual(&v, &problem, &lattice, grid.time(3), DriftMode::Upwind, None).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let last = grid.time(grid.n_slices() - 1);
        assert!(matches!(
            slice_residual(&v, &problem, &lattice, last, DriftMode::Upwind, None),
            Err(SolverError::NotInteriorSlice(_))
        ));
    }

    #[test]
    fn residual_of_exact_solution_shrinks() {
        let case = make_manufactured(ManufacturedKind::Heat1d, ManufacturedParams::default()).unwrap();
        let lattice = StandardLattice::new(1).unwrap();
        let mut res = Vec::new();
        for h in [0.125, 0.0625] {
            let grid = line_grid(h, 1.0);
            let exact = case.exact.clone();
            let v = GridFunction::from_fn(grid.clone(), |t, x| exact(t, x));
            let r = slice_residual(&v, &case.problem, &lattice, 0.5, DriftMode::Upwind, None).unwrap();
            res.push(r);
        }
        assert!(res[0] > 0.0);
        // O(h²) truncation for the heat equation; at least first order
        assert!(res[1] < 0.6 * res[0], "{res:?}");
    }

    #[test]
    fn sweep_modes_and_acceleration_agree() {
        let case = make_manufactured(ManufacturedKind::IsaacsGame, ManufacturedParams::default()).unwrap();
        let lattice = StandardLattice::new(1).unwrap();
        let grid = line_grid(0.0625, 0.25);
        let base = solve_isaacs(&case.problem, grid.clone(), &lattice, &SolverConfig::default()).unwrap();
        for (sweep, acc) in [
            (SweepMode::InPlace, Acceleration::None),
            (SweepMode::Simultaneous, Acceleration::PolicyIteration),
            (SweepMode::InPlace, Acceleration::PolicyIteration),
        ] {
            let cfg = SolverConfig {
                sweep_mode: sweep,
                acceleration: acc,
                ..Default::default()
            };
            let sol = solve_isaacs(&case.problem, grid.clone(), &lattice, &cfg).unwrap();
            assert!(sol.values.max_abs_diff(&base.values) < 1e-8);
            assert!(sol.stats.certified());
        }
        let spec = TruncationSpec::for_problem(&case.problem, 2.0, TruncationSide::Upper).unwrap();
        let plain = solve_truncated(&case.problem, grid.clone(), &lattice, &spec, &SolverConfig::default()).unwrap();
        let cfg = SolverConfig {
            acceleration: Acceleration::PolicyIteration,
            ..Default::default()
        };
        let fast = solve_truncated(&case.problem, grid.clone(), &lattice, &spec, &cfg).unwrap();
        assert!(fast.values.max_abs_diff(&plain.values) < 1e-8);
    }

    #[test]
    fn geometric_iteration_bound() {
        let case = make_manufactured(ManufacturedKind::IsaacsGame, ManufacturedParams::default()).unwrap();
        let lattice = StandardLattice::new(1).unwrap();
        let sol = solve_isaacs(&case.problem, line_grid(0.125, 0.5), &lattice, &SolverConfig::default()).unwrap();
        for s in &sol.stats.slices {
            assert!(s.contraction_factor < 1.0);
            if s.initial_change > s.effective_tolerance {
                let bound = 2.0 + (s.effective_tolerance / s.initial_change).ln() / s.contraction_factor.ln();
                assert!((s.iterations as f64) <= bound.ceil() + 1.0, "{s:?}");
            }
        }
    }

    #[test]
    fn forward_mode_reports_non_monotone() {
        let problem = IsaacsProblem::new(1, ActionSets::single(), 0.5, 20.0)
            .unwrap()
            .with_drift(|_, _, _, _| vec![-20.0]);
        let lattice = StandardLattice::new(1).unwrap();
        let cfg = SolverConfig {
            drift_mode: DriftMode::ForwardPaper,
            ..Default::default()
        };
        let err = solve_isaacs(&problem, line_grid(0.125, 0.25), &lattice, &cfg).unwrap_err();
        assert!(matches!(err, SolverError::Operator(OperatorError::NonMonotone { .. })));
        let fine = solve_isaacs(&problem, line_grid(1.0 / 32.0, 0.01), &lattice, &cfg);
        assert!(fine.is_ok());
    }

    #[test]
    fn no_convergence_reports_time() {
        let cfg = SolverConfig {
            max_slice_iterations: 1,
            ..Default::default()
        };
        let lattice = StandardLattice::new(1).unwrap();
        let err = solve_isaacs(&heat(), line_grid(0.125, 0.5), &lattice, &cfg).unwrap_err();
        match err {
            SolverError::NoConvergence { time, residual, .. } => {
                assert!(time > 0.0 && residual > 0.0);
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let bad = SolverConfig {
            slice_tolerance: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverConfig {
            max_slice_iterations: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let p = PucciParams::for_ellipticity(0.5);
        assert!(TruncationSpec::new(0.0, TruncationSide::Upper, p).is_err());
        assert!(TruncationSpec::new(f64::INFINITY, TruncationSide::Lower, p).is_err());
    }

    #[test]
    fn truncated_solutions_satisfy_their_residual() {
        let problem = heat();
        let lattice = StandardLattice::new(1).unwrap();
        let grid = line_grid(0.125, 1.0);
        let cfg = SolverConfig::default();
        for side in [TruncationSide::Upper, TruncationSide::Lower] {
            let spec = TruncationSpec::for_problem(&problem, 1.0, side).unwrap();
            let sol = solve_truncated(&problem, grid.clone(), &lattice, &spec, &cfg).unwrap();
            for s in grid.interior_slices() {
                let r = slice_residual(&sol.values, &problem, &lattice, grid.time(s), cfg.drift_mode, Some(&spec)).unwrap();
                assert!(r <= cfg.residual_bound(grid.h()));
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn comparison_principle(
            shift_f in 0.0f64..1.0,
            shift_g in 0.0f64..1.0,
            a in 0.6f64..1.6,
            b in -2.0f64..2.0,
            c in 0.0f64..1.0,
        ) {
            let make = |df: f64, dg: f64| {
                IsaacsProblem::new(1, ActionSets::new(vec![0.0, 1.0], vec![0.0, 1.0]).unwrap(), 0.5, 3.0)
                    .unwrap()
                    .with_diffusion(move |ia, ib, _, _| Matrix::diagonal(&[a + 0.2 * ia as f64 - 0.1 * ib as f64]))
                    .with_drift(move |ia, _, _, x| vec![b * (ia as f64 - 0.5) + x[0]])
                    .with_discount(move |_, ib, _, _| c * ib as f64)
                    .with_source(move |ia, ib, t, x| libm::sin(3.0 * x[0] + t) * (ia as f64 - ib as f64) + df)
                    .with_boundary(move |t, x| x[0] * (1.0 - t) + dg)
            };
            let lattice = StandardLattice::new(1).unwrap();
            let grid = line_grid(0.125, 0.5);
            let cfg = SolverConfig::default();
            let v1 = solve_isaacs(&make(0.0, 0.0), grid.clone(), &lattice, &cfg).unwrap();
            let v2 = solve_isaacs(&make(shift_f, shift_g), grid.clone(), &lattice, &cfg).unwrap();
            for (x, y) in v1.values.values().iter().zip(v2.values.values()) {
                prop_assert!(*x <= *y + 10.0 * cfg.slice_tolerance);
            }
        }
    }

    #[test]
    fn truncation_sandwich_and_monotone_in_k() {
        let problem = heat();
        let lattice = StandardLattice::new(1).unwrap();
        let grid = line_grid(0.125, 1.0);
        let cfg = SolverConfig::default();
        let slack = 10.0 * cfg.slice_tolerance;
        let plain = solve_isaacs(&problem, grid.clone(), &lattice, &cfg).unwrap();
        let mut prev: Option<(GridFunction, GridFunction)> = None;
        for k in [0.5, 1.0, 4.0, 1e6] {
            let up = TruncationSpec::for_problem(&problem, k, TruncationSide::Upper).unwrap();
            let lo = TruncationSpec::for_problem(&problem, k, TruncationSide::Lower).unwrap();
            let u = solve_truncated(&problem, grid.clone(), &lattice, &up, &cfg).unwrap().values;
            let l = solve_truncated(&problem, grid.clone(), &lattice, &lo, &cfg).unwrap().values;
            for pt in grid.points() {
                assert!(l.get(pt) <= plain.values.get(pt) + slack);
                assert!(plain.values.get(pt) <= u.get(pt) + slack);
            }
            if let Some((pu, pl)) = &prev {
                for pt in grid.points() {
                    assert!(u.get(pt) <= pu.get(pt) + slack);
                    assert!(l.get(pt) >= pl.get(pt) - slack);
                }
            }
            if k == 1e6 {
                assert!(u.max_abs_diff(&plain.values) <= slack);
                assert!(l.max_abs_diff(&plain.values) <= slack);
            }
            prev = Some((u, l));
        }
    }
}
