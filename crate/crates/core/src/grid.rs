//! Spatial domains, the space-time lattice `Q_(h)` and functions on it.
//!
//! Spatial nodes are integer multi-indices `i ∈ Z^d` standing for the point
//! `x = h·i`; time slices are `t_k = k·h²` for `k ≥ 1` with `t_k < T`.
//! A point `(t, x)` is interior when the closed ball `x + h·B` (radius
//! `h·r_Λ`) stays inside `G` and the next slice `t + h²` still lies in
//! `(0, T)`. Everything else is the discrete parabolic boundary `∂'_h Q`.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use thiserror::Error;

use crate::linalg::norm;

/// Upper bound on lattice size, to turn runaway configurations into errors.
const MAX_GRID_POINTS: usize = 200_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("invalid step: h = {h}, T = {horizon} (need h > 0 and T > h²)")]
    InvalidStep { h: f64, horizon: f64 },
    #[error("no interior grid point at h = {h}")]
    EmptyGrid { h: f64 },
    #[error("invalid domain: {0}")]
    InvalidDomain(&'static str),
    #[error("direction radius must be positive, got {0}")]
    InvalidRadius(f64),
    #[error("grid too large: {0} points")]
    TooLarge(usize),
    #[error("grid function shape does not match grid")]
    ShapeMismatch,
}

/// User-supplied domain: an open bounded set given by its distance to the
/// complement.
pub trait DomainShape: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    /// `dist(x, G^c)`; zero outside `G`.
    fn distance_to_complement(&self, x: &[f64]) -> f64;
    fn contains(&self, x: &[f64]) -> bool {
        self.distance_to_complement(x) > 0.0
    }
    /// Axis-aligned box enclosing `G` as `(lower, upper)`.
    fn bounding_box(&self) -> (Vec<f64>, Vec<f64>);
}

#[derive(Debug, Clone)]
pub enum SpatialDomain {
    /// Open box `Π (lower_i, upper_i)`.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    /// Open ball.
    Ball { center: Vec<f64>, radius: f64 },
    Custom(Arc<dyn DomainShape>),
}

impl SpatialDomain {
    pub fn new_box(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, GridError> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(GridError::InvalidDomain("box bounds must be nonempty and of equal length"));
        }
        if lower
            .iter()
            .zip(&upper)
            .any(|(l, u)| !(l.is_finite() && u.is_finite() && l < u))
        {
            return Err(GridError::InvalidDomain("box bounds must satisfy lower < upper"));
        }
        Ok(Self::Box { lower, upper })
    }

    pub fn interval(a: f64, b: f64) -> Result<Self, GridError> {
        Self::new_box(vec![a], vec![b])
    }

    /// `(0, 1)^d`
    pub fn unit_cube(dim: usize) -> Self {
        Self::Box {
            lower: vec![0.0; dim],
            upper: vec![1.0; dim],
        }
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, GridError> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(GridError::InvalidDomain("ball center must be a finite point"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(GridError::InvalidDomain("ball radius must be positive"));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::Box { lower, .. } => lower.len(),
            Self::Ball { center, .. } => center.len(),
            Self::Custom(shape) => shape.dim(),
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            Self::Custom(shape) => shape.contains(x),
            _ => boundary_distance(self, x) > 0.0,
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Self::Box { lower, upper } => (lower.clone(), upper.clone()),
            Self::Ball { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Self::Custom(shape) => shape.bounding_box(),
        }
    }

    /// `sup_G |x|`
    pub fn max_norm(&self) -> f64 {
        match self {
            Self::Ball { center, radius } => norm(center) + radius,
            _ => {
                // farthest corner of the bounding box
                let (lo, hi) = self.bounding_box();
                libm::sqrt(
                    lo.iter()
                        .zip(&hi)
                        .map(|(l, u)| {
                            let m = l.abs().max(u.abs());
                            m * m
                        })
                        .sum(),
                )
            }
        }
    }
}

/// Euclidean distance from `x` to the complement of the domain.
pub fn boundary_distance(domain: &SpatialDomain, x: &[f64]) -> f64 {
    match domain {
        SpatialDomain::Box { lower, upper } => {
            let mut rho = f64::INFINITY;
            for ((&xi, &l), &u) in x.iter().zip(lower).zip(upper) {
                if !(xi > l && xi < u) {
                    return 0.0;
                }
                rho = rho.min(xi - l).min(u - xi);
            }
            rho
        }
        SpatialDomain::Ball { center, radius } => {
            let r: f64 = libm::sqrt(
                x.iter()
                    .zip(center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum(),
            );
            (radius - r).max(0.0)
        }
        SpatialDomain::Custom(shape) => shape.distance_to_complement(x).max(0.0),
    }
}

/// A point of `Q_(h)`: slice index (0-based, `t = (slice + 1)·h²`) and node index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPoint {
    pub slice: usize,
    pub node: usize,
}

impl GridPoint {
    pub fn new(slice: usize, node: usize) -> Self {
        Self { slice, node }
    }
}

#[derive(Debug, Clone)]
pub struct SpaceTimeGrid {
    domain: SpatialDomain,
    dim: usize,
    h: f64,
    h2: f64,
    horizon: f64,
    direction_radius: f64,
    times: Vec<f64>,
    /// flattened multi-indices, `dim` entries per node
    indices: Vec<i64>,
    /// flattened coordinates `h·i`
    coords: Vec<f64>,
    rho: Vec<f64>,
    spatial_interior: Vec<bool>,
    interior_nodes: Vec<usize>,
    index_lo: Vec<i64>,
    index_extent: Vec<usize>,
    lookup: Vec<usize>,
}

const NO_NODE: usize = usize::MAX;

/// Builds `Q_(h)` for the cylinder `(0, T) × G`.
pub fn build_grid(
    domain: SpatialDomain,
    horizon: f64,
    h: f64,
    direction_radius: f64,
) -> Result<SpaceTimeGrid, GridError> {
    let h2 = h * h;
    if !(h > 0.0 && h.is_finite() && horizon.is_finite() && horizon > h2) {
        return Err(GridError::InvalidStep { h, horizon });
    }
    if !(direction_radius > 0.0 && direction_radius.is_finite()) {
        return Err(GridError::InvalidRadius(direction_radius));
    }
    let dim = domain.dim();

    // times k·h² < T, k ≥ 1
    let mut n_times = libm::floor(horizon / h2) as usize;
    while n_times > 0 && (n_times as f64) * h2 >= horizon {
        n_times -= 1;
    }
    while ((n_times + 1) as f64) * h2 < horizon {
        n_times += 1;
    }
    let times: Vec<f64> = (1..=n_times).map(|k| k as f64 * h2).collect();

    let (lo, hi) = domain.bounding_box();
    let index_lo: Vec<i64> = lo.iter().map(|l| libm::ceil(l / h) as i64).collect();
    let index_hi: Vec<i64> = hi.iter().map(|u| libm::floor(u / h) as i64).collect();
    if index_lo.iter().zip(&index_hi).any(|(l, u)| u < l) {
        return Err(GridError::EmptyGrid { h });
    }
    let index_extent: Vec<usize> = index_lo
        .iter()
        .zip(&index_hi)
        .map(|(l, u)| (u - l + 1) as usize)
        .collect();
    let box_count = index_extent
        .iter()
        .try_fold(1usize, |acc, &e| acc.checked_mul(e))
        .ok_or(GridError::TooLarge(usize::MAX))?;
    if box_count.saturating_mul(n_times.max(1)) > MAX_GRID_POINTS {
        return Err(GridError::TooLarge(box_count.saturating_mul(n_times)));
    }

    let mut lookup = vec![NO_NODE; box_count];
    let mut indices = Vec::new();
    let mut coords = Vec::new();
    let mut rho = Vec::new();
    let mut spatial_interior = Vec::new();
    let mut interior_nodes = Vec::new();
    let threshold = h * direction_radius;

    let mut multi = index_lo.clone();
    let mut x = vec![0.0; dim];
    for flat in 0..box_count {
        for (xi, &i) in x.iter_mut().zip(&multi) {
            *xi = i as f64 * h;
        }
        if domain.contains(&x) {
            let id = rho.len();
            lookup[flat] = id;
            let r = boundary_distance(&domain, &x);
            indices.extend_from_slice(&multi);
            coords.extend_from_slice(&x);
            rho.push(r);
            let inside = r > threshold;
            spatial_interior.push(inside);
            if inside {
                interior_nodes.push(id);
            }
        }
        // row-major increment, last axis fastest
        for axis in (0..dim).rev() {
            multi[axis] += 1;
            if multi[axis] <= index_hi[axis] {
                break;
            }
            multi[axis] = index_lo[axis];
        }
    }

    if interior_nodes.is_empty() || n_times < 2 {
        return Err(GridError::EmptyGrid { h });
    }

    Ok(SpaceTimeGrid {
        domain,
        dim,
        h,
        h2,
        horizon,
        direction_radius,
        times,
        indices,
        coords,
        rho,
        spatial_interior,
        interior_nodes,
        index_lo,
        index_extent,
        lookup,
    })
}

impl SpaceTimeGrid {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Time step `h²`.
    pub fn h2(&self) -> f64 {
        self.h2
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn direction_radius(&self) -> f64 {
        self.direction_radius
    }

    pub fn domain(&self) -> &SpatialDomain {
        &self.domain
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn time(&self, slice: usize) -> f64 {
        self.times[slice]
    }

    pub fn n_slices(&self) -> usize {
        self.times.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.rho.len()
    }

    pub fn n_points(&self) -> usize {
        self.n_slices() * self.n_nodes()
    }

    pub fn node_index(&self, node: usize) -> &[i64] {
        &self.indices[node * self.dim..(node + 1) * self.dim]
    }

    pub fn coords(&self, node: usize) -> &[f64] {
        &self.coords[node * self.dim..(node + 1) * self.dim]
    }

    /// `ρ(x) = dist(x, G^c)` at a node.
    pub fn rho(&self, node: usize) -> f64 {
        self.rho[node]
    }

    pub fn is_spatial_interior(&self, node: usize) -> bool {
        self.spatial_interior[node]
    }

    /// Nodes `x` with `x + hB ⊂ G`, in node order.
    pub fn interior_nodes(&self) -> &[usize] {
        &self.interior_nodes
    }

    /// Slices `t` with `t + h² < T`, i.e. every slice but the last.
    pub fn interior_slices(&self) -> core::ops::Range<usize> {
        0..self.n_slices() - 1
    }

    /// Membership in `Q^o_(h)`.
    pub fn is_interior(&self, p: GridPoint) -> bool {
        p.slice + 1 < self.n_slices() && self.spatial_interior[p.node]
    }

    /// Node id of the lattice point `h·index`, if it lies in `G`.
    pub fn lookup(&self, index: &[i64]) -> Option<usize> {
        let mut flat = 0usize;
        for ((&i, &lo), &ext) in index.iter().zip(&self.index_lo).zip(&self.index_extent) {
            let off = i - lo;
            if off < 0 || off as usize >= ext {
                return None;
            }
            flat = flat * ext + off as usize;
        }
        match self.lookup[flat] {
            NO_NODE => None,
            id => Some(id),
        }
    }

    /// Node at `x + h·offset`, or `-offset` when `negate` is set.
    pub fn neighbor(&self, node: usize, offset: &[i64], negate: bool) -> Option<usize> {
        let base = self.node_index(node);
        let mut target = [0i64; 8];
        if self.dim <= target.len() {
            for (k, (&b, &o)) in base.iter().zip(offset).enumerate() {
                target[k] = if negate { b - o } else { b + o };
            }
            self.lookup(&target[..self.dim])
        } else {
            let target: Vec<i64> = base
                .iter()
                .zip(offset)
                .map(|(&b, &o)| if negate { b - o } else { b + o })
                .collect();
            self.lookup(&target)
        }
    }

    pub fn points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        (0..self.n_slices())
            .flat_map(move |s| (0..self.n_nodes()).map(move |n| GridPoint::new(s, n)))
    }

    pub fn interior_points(&self) -> impl Iterator<Item = GridPoint> + '_ {
        self.interior_slices()
            .flat_map(move |s| self.interior_nodes.iter().map(move |&n| GridPoint::new(s, n)))
    }
}

/// A real value at every point of `Q_(h)`, stored slice-major.
#[derive(Debug, Clone)]
pub struct GridFunction {
    grid: Arc<SpaceTimeGrid>,
    values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: Arc<SpaceTimeGrid>) -> Self {
        let values = vec![0.0; grid.n_points()];
        Self { grid, values }
    }

    pub fn from_fn<F>(grid: Arc<SpaceTimeGrid>, mut f: F) -> Self
    where
        F: FnMut(f64, &[f64]) -> f64,
    {
        let mut values = Vec::with_capacity(grid.n_points());
        for s in 0..grid.n_slices() {
            let t = grid.time(s);
            for n in 0..grid.n_nodes() {
                values.push(f(t, grid.coords(n)));
            }
        }
        Self { grid, values }
    }

    pub fn from_values(grid: Arc<SpaceTimeGrid>, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.n_points() {
            return Err(GridError::ShapeMismatch);
        }
        Ok(Self { grid, values })
    }

    pub fn grid(&self) -> &Arc<SpaceTimeGrid> {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    #[inline]
    pub fn get(&self, p: GridPoint) -> f64 {
        self.values[p.slice * self.grid.n_nodes() + p.node]
    }

    #[inline]
    pub fn set(&mut self, p: GridPoint, v: f64) {
        let n = self.grid.n_nodes();
        self.values[p.slice * n + p.node] = v;
    }

    pub fn slice(&self, s: usize) -> &[f64] {
        let n = self.grid.n_nodes();
        &self.values[s * n..(s + 1) * n]
    }

    pub fn slice_mut(&mut self, s: usize) -> &mut [f64] {
        let n = self.grid.n_nodes();
        &mut self.values[s * n..(s + 1) * n]
    }

    /// Slice `s` (mutable) together with slice `s + 1` (shared).
    pub fn slice_pair_mut(&mut self, s: usize) -> (&mut [f64], &[f64]) {
        let n = self.grid.n_nodes();
        let (lo, hi) = self.values.split_at_mut((s + 1) * n);
        (&mut lo[s * n..], &hi[..n])
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &GridFunction) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}
