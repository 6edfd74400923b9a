//! Error norms, rate fitting and the empirical studies.

use alloc::sync::Arc;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::grid::{GridFunction, GridPoint, SpaceTimeGrid, SpatialDomain};
use crate::lattice::LatticeRepresentation;
use crate::linalg::{self, Matrix};
use crate::operators::PucciParams;
use crate::problem::IsaacsProblem;
use crate::solver::{solve_truncated, SolverConfig, SolverError, TruncationSide, TruncationSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("error value {error} at parameter {parameter} is not positive")]
    DegenerateData { parameter: f64, error: f64 },
    #[error("invalid samples: {0}")]
    InvalidSamples(&'static str),
    #[error("fewer than two grid points per slice in Q_eps for eps = {eps}")]
    EmptyRegion { eps: f64 },
    #[error("barrier search failed: mu exceeded {mu:e}")]
    BarrierSearchFailed { mu: f64 },
    #[error("gap grew from {previous:e} to {gap:e} at K = {k}")]
    MonotonicityViolation { k: f64, gap: f64, previous: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("solve failed at K = {k}: {source}")]
    Solver { k: f64, source: SolverError },
}

/// `max |u − reference|` over every grid point.
pub fn sup_error<F>(u: &GridFunction, reference: F) -> f64
where
    F: Fn(f64, &[f64]) -> f64,
{
    let grid = u.grid();
    grid.points()
        .map(|p| (u.get(p) - reference(grid.time(p.slice), grid.coords(p.node))).abs())
        .fold(0.0, |m, e| if e.is_nan() || m.is_nan() { f64::NAN } else { m.max(e) })
}

/// Power-law fit `error ≈ C · parameter^p`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RateReport {
    /// `(parameter, error)`, parameters strictly decreasing.
    pub samples: Vec<(f64, f64)>,
    /// Least-squares slope of `log error` against `log parameter`.
    pub fitted_exponent: f64,
    /// `log(e_i/e_{i+1}) / log(p_i/p_{i+1})`; the log₂ error ratio for halvings.
    pub pairwise_orders: Vec<f64>,
    /// Root-mean-square residual of the fit in log space.
    pub residual: f64,
}

pub fn fit_rate(samples: &[(f64, f64)]) -> Result<RateReport, AnalysisError> {
    if samples.len() < 2 {
        return Err(AnalysisError::InvalidSamples("need at least two samples"));
    }
    for &(p, e) in samples {
        if !(p > 0.0 && p.is_finite()) {
            return Err(AnalysisError::InvalidSamples("parameters must be positive and finite"));
        }
        if !(e > 0.0 && e.is_finite()) {
            return Err(AnalysisError::DegenerateData { parameter: p, error: e });
        }
    }
    if samples.windows(2).any(|w| w[1].0 >= w[0].0) {
        return Err(AnalysisError::InvalidSamples("parameters must be strictly decreasing"));
    }
    let n = samples.len() as f64;
    let xs: Vec<f64> = samples.iter().map(|s| libm::log(s.0)).collect();
    let ys: Vec<f64> = samples.iter().map(|s| libm::log(s.1)).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let pairwise_orders = samples
        .windows(2)
        .map(|w| libm::log(w[0].1 / w[1].1) / libm::log(w[0].0 / w[1].0))
        .collect();
    Ok(RateReport {
        samples: samples.to_vec(),
        fitted_exponent: slope,
        pairwise_orders,
        residual: libm::sqrt(ss / n),
    })
}

/// Estimate of the `C^{1+χ}` seminorm of `u` over
/// `Q_ε = (0, T − ε²) × {ρ > ε}`:
///
/// ```text
/// sup |u(t,x) − u(s,x)| / |t−s|^{(1+χ)/2}
///   + sup |Du(t,x) − Du(t,y)| / |x−y|^χ
///   + sup |Du(t,x) − Du(s,x)| / |t−s|^{χ/2}
/// ```
///
/// each supremum taken over all admissible grid-point pairs, with `Du`
/// replaced by centred first differences.
pub fn holder_seminorm(u: &GridFunction, eps: f64, chi: f64) -> Result<f64, AnalysisError> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(AnalysisError::InvalidParameter("eps must be positive"));
    }
    if !(chi > 0.0 && chi < 1.0) {
        return Err(AnalysisError::InvalidParameter("chi must lie in (0, 1)"));
    }
    let grid = u.grid();
    let d = grid.dim();
    let t_max = grid.horizon() - eps * eps;
    let slices: Vec<usize> = (0..grid.n_slices()).filter(|&s| grid.time(s) < t_max).collect();
    let basis: Vec<Vec<i64>> = (0..d)
        .map(|i| (0..d).map(|j| i64::from(i == j)).collect())
        .collect();
    // nodes in G_ε whose centred differences stay on the grid
    let mut nodes = Vec::new();
    let mut stencils = Vec::new();
    for node in 0..grid.n_nodes() {
        if grid.rho(node) <= eps {
            continue;
        }
        let nb: Option<Vec<(usize, usize)>> = basis
            .iter()
            .map(|e| Some((grid.neighbor(node, e, false)?, grid.neighbor(node, e, true)?)))
            .collect();
        if let Some(nb) = nb {
            nodes.push(node);
            stencils.push(nb);
        }
    }
    if nodes.len() < 2 || slices.len() < 2 {
        return Err(AnalysisError::EmptyRegion { eps });
    }
    let inv2h = 0.5 / grid.h();
    let grad = |s: usize, k: usize| -> Vec<f64> {
        let vals = u.slice(s);
        stencils[k].iter().map(|&(p, m)| (vals[p] - vals[m]) * inv2h).collect()
    };
    let grads: Vec<Vec<Vec<f64>>> = slices
        .iter()
        .map(|&s| (0..nodes.len()).map(|k| grad(s, k)).collect())
        .collect();

    let mut time_u: f64 = 0.0;
    let mut time_du: f64 = 0.0;
    for (a, &sa) in slices.iter().enumerate() {
        for (b, &sb) in slices.iter().enumerate().skip(a + 1) {
            let dt = (grid.time(sb) - grid.time(sa)).abs();
            let wu = libm::pow(dt, 0.5 * (1.0 + chi));
            let wd = libm::pow(dt, 0.5 * chi);
            for (k, &node) in nodes.iter().enumerate() {
                let du = (u.get(GridPoint::new(sa, node)) - u.get(GridPoint::new(sb, node))).abs();
                time_u = time_u.max(du / wu);
                time_du = time_du.max(linalg::norm_diff(&grads[a][k], &grads[b][k]) / wd);
            }
        }
    }
    let mut space_du: f64 = 0.0;
    for g in &grads {
        for i in 0..nodes.len() {
            for j in (i + 1)..nodes.len() {
                let dx = linalg::norm_diff(grid.coords(nodes[i]), grid.coords(nodes[j]));
                space_du = space_du.max(linalg::norm_diff(&g[i], &g[j]) / libm::pow(dx, chi));
            }
        }
    }
    Ok(time_u + space_du + time_du)
}

/// `max |v − g| / ρ` over interior grid points: an empirical constant in
/// `|v − g| ≤ N ρ`.
pub fn barrier_ratio<F>(v: &GridFunction, g: F) -> f64
where
    F: Fn(f64, &[f64]) -> f64,
{
    let grid = v.grid();
    grid.interior_points()
        .map(|p| {
            let x = grid.coords(p.node);
            (v.get(p) - g(grid.time(p.slice), x)).abs() / grid.rho(p.node)
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BarrierParams {
    pub mu: f64,
    pub radius: f64,
}

/// `ψ(x) = cosh μR − cosh μ|x|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Barrier {
    pub params: BarrierParams,
    pub dim: usize,
}

impl Barrier {
    pub fn value(&self, x: &[f64]) -> f64 {
        let BarrierParams { mu, radius } = self.params;
        libm::cosh(mu * radius) - libm::cosh(mu * linalg::norm(x))
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mu = self.params.mu;
        let r = linalg::norm(x);
        if r == 0.0 {
            return alloc::vec![0.0; x.len()];
        }
        let s = -mu * libm::sinh(mu * r) / r;
        x.iter().map(|xi| s * xi).collect()
    }

    pub fn hessian(&self, x: &[f64]) -> Matrix {
        let mu = self.params.mu;
        let d = x.len();
        let r = linalg::norm(x);
        if r == 0.0 {
            return Matrix::scaled_identity(d, -mu * mu);
        }
        let radial = -mu * mu * libm::cosh(mu * r);
        let tangential = -mu * libm::sinh(mu * r) / r;
        let mut m = Matrix::scaled_identity(d, tangential);
        let xhat: Vec<f64> = x.iter().map(|v| v / r).collect();
        m.add_rank_one(radial - tangential, &xhat);
        m
    }

    /// `a : D²ψ(x) + b · Dψ(x)`
    pub fn operator(&self, a: &Matrix, b: &[f64], x: &[f64]) -> f64 {
        let h = self.hessian(x);
        let g = self.gradient(x);
        let trace: f64 = a.as_slice().iter().zip(h.as_slice()).map(|(p, q)| p * q).sum();
        trace + linalg::dot(b, &g)
    }
}

const BARRIER_SAMPLES: usize = 1000;

/// Picks `R = sup_G |x| + 1` and doubles `μ` from 1 until `ψ ≥ 1` and
/// `a : D²ψ + b · Dψ ≤ −1` hold for 1000 random `(a, b, x)` with
/// `a ∈ S_δ`, `|b| ≤ K₀`, `x ∈ G`.
pub fn build_barrier(domain: &SpatialDomain, delta: f64, k0: f64, seed: u64) -> Result<Barrier, AnalysisError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(AnalysisError::InvalidParameter("delta must lie in (0, 1]"));
    }
    if !(k0 >= 0.0 && k0.is_finite()) {
        return Err(AnalysisError::InvalidParameter("K0 must be nonnegative"));
    }
    let dim = domain.dim();
    let sup_norm = domain.max_norm();
    let radius = sup_norm + 1.0;
    let (lower, upper) = domain.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(BARRIER_SAMPLES);
    while samples.len() < BARRIER_SAMPLES {
        let x: Vec<f64> = (0..dim).map(|i| rng.random_range(lower[i]..=upper[i])).collect();
        if !domain.contains(&x) {
            continue;
        }
        let a = linalg::random_spd(dim, delta, 1.0 / delta, &mut rng);
        let dir: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let n = linalg::norm(&dir);
        let len = k0 * rng.random_range(0.0..=1.0);
        let b: Vec<f64> = if n > 0.0 { dir.iter().map(|v| v * len / n).collect() } else { alloc::vec![0.0; dim] };
        samples.push((a, b, x));
    }
    let mut mu = 1.0;
    while mu <= (1u64 << 60) as f64 {
        let barrier = Barrier {
            params: BarrierParams { mu, radius },
            dim,
        };
        let edge = barrier.value(&[sup_norm]);
        let ok = edge.is_finite()
            && edge >= 1.0
            && samples.iter().all(|(a, b, x)| {
                let psi = barrier.value(x);
                let l = barrier.operator(a, b, x);
                psi.is_finite() && psi >= 1.0 && l.is_finite() && l <= -1.0
            });
        if ok {
            return Ok(barrier);
        }
        mu *= 2.0;
    }
    Err(AnalysisError::BarrierSearchFailed { mu })
}

/// Outcome of the power-law fit in the truncation-gap study.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case", tag = "status"))]
pub enum GapFit {
    /// Fit of `gap` against `1/K`; `fitted_exponent` estimates `ξ`.
    Fitted(RateReport),
    /// Every gap is below the tolerance floor.
    ExactToTolerance,
    /// Only one gap is above the floor.
    TooFewResolved,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct KGapReport {
    pub ks: Vec<f64>,
    /// `sup |u_K − u_{−K}|` per `K`.
    pub gaps: Vec<f64>,
    /// Gaps at or below this floor are treated as zero.
    pub floor: f64,
    pub fit: GapFit,
    pub max_contraction: f64,
    pub max_residual: f64,
    pub residual_bound: f64,
}

impl KGapReport {
    pub fn fitted_exponent(&self) -> Option<f64> {
        match &self.fit {
            GapFit::Fitted(r) => Some(r.fitted_exponent),
            _ => None,
        }
    }
}

/// Solves the upper and lower truncated problems for every `K` and records
/// `gap_K = sup |u_K − u_{−K}|`. `pucci` defaults to
/// [`PucciParams::for_ellipticity`].
pub fn k_gap_study<L: LatticeRepresentation + ?Sized>(
    problem: &IsaacsProblem,
    grid: Arc<SpaceTimeGrid>,
    lattice: &L,
    ks: &[f64],
    pucci: Option<PucciParams>,
    config: &SolverConfig,
) -> Result<KGapReport, AnalysisError> {
    if ks.is_empty() {
        return Err(AnalysisError::InvalidSamples("K list is empty"));
    }
    if ks.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(AnalysisError::InvalidSamples("every K must be positive and finite"));
    }
    if ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(AnalysisError::InvalidSamples("K list must be strictly increasing"));
    }
    let pucci = pucci.unwrap_or_else(|| PucciParams::for_ellipticity(problem.delta()));
    let floor = 10.0 * config.slice_tolerance;
    let mut gaps = Vec::with_capacity(ks.len());
    let mut max_contraction: f64 = 0.0;
    let mut max_residual: f64 = 0.0;
    let mut residual_bound: f64 = 0.0;
    for &k in ks {
        let wrap = |source| AnalysisError::Solver { k, source };
        let upper = TruncationSpec::new(k, TruncationSide::Upper, pucci).map_err(wrap)?;
        let lower = TruncationSpec::new(k, TruncationSide::Lower, pucci).map_err(wrap)?;
        let u = solve_truncated(problem, grid.clone(), lattice, &upper, config).map_err(wrap)?;
        let l = solve_truncated(problem, grid.clone(), lattice, &lower, config).map_err(wrap)?;
        for s in [&u.stats, &l.stats] {
            max_contraction = max_contraction.max(s.max_contraction());
            max_residual = max_residual.max(s.max_residual());
            residual_bound = s.residual_bound;
        }
        let gap = u
            .values
            .values()
            .iter()
            .zip(l.values.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if let Some(&previous) = gaps.last() {
            if gap > previous + floor {
                return Err(AnalysisError::MonotonicityViolation { k, gap, previous });
            }
        }
        gaps.push(gap);
    }
    let resolved: Vec<(f64, f64)> = ks
        .iter()
        .zip(&gaps)
        .filter(|(_, &g)| g > floor)
        .map(|(&k, &g)| (1.0 / k, g))
        .collect();
    let fit = match resolved.len() {
        0 => GapFit::ExactToTolerance,
        1 => GapFit::TooFewResolved,
        _ => GapFit::Fitted(fit_rate(&resolved)?),
    };
    Ok(KGapReport {
        ks: ks.to_vec(),
        gaps,
        floor,
        fit,
        max_contraction,
        max_residual,
        residual_bound,
    })
}
