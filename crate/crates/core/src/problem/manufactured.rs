//! Problems built around a known smooth solution, for convergence studies.

use alloc::string::ToString;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

use super::{ActionSets, IsaacsProblem, ProblemError, SpaceTimeFn};
use crate::grid::SpatialDomain;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManufacturedKind {
    /// `e^{−π²(T−t)} sin(πx)` on `(0, 1)`.
    Heat1d,
    /// `e^{−2π²(T−t)} sin(πx) sin(πy)` on `(0, 1)²`.
    Heat2d,
    /// Smooth profile with a 3 × 2 game term `α·β·m(t, x)` in the source.
    IsaacsGame,
}

impl FromStr for ManufacturedKind {
    type Err = ProblemError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "heat_1d" => Ok(Self::Heat1d),
            "heat_2d" => Ok(Self::Heat2d),
            "isaacs_game" => Ok(Self::IsaacsGame),
            other => Err(ProblemError::UnknownKind(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedParams {
    pub horizon: f64,
    /// Spatial dimension; only used by the game case (1 or 2).
    pub dim: usize,
    /// Amplitude of the game kernel `m`; `m = amplitude·(1 + ½ sin(2πx₁) cos t)`.
    pub amplitude: f64,
}

impl Default for ManufacturedParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            dim: 1,
            amplitude: 1.0,
        }
    }
}

#[derive(Clone)]
pub struct ManufacturedCase {
    pub problem: IsaacsProblem,
    pub exact: SpaceTimeFn,
    pub domain: SpatialDomain,
    pub horizon: f64,
}

impl core::fmt::Debug for ManufacturedCase {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("ManufacturedCase")
            .field("problem", &self.problem)
            .field("domain", &self.domain)
            .field("horizon", &self.horizon)
            .finish_non_exhaustive()
    }
}

/// Closed-form profile `u(t, x)` with its derivatives.
#[derive(Debug, Clone, Copy)]
enum Profile {
    /// `e^{−dπ²(T−t)} Π sin(πx_i)`
    HeatMode { horizon: f64, dim: usize },
    /// `cos t · Π sin(πx_i) + x₁/2`
    GameProfile,
}

impl Profile {
    fn sines(x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            x.iter().map(|&xi| libm::sin(PI * xi)).collect(),
            x.iter().map(|&xi| libm::cos(PI * xi)).collect(),
        )
    }

    fn time_factor(&self, t: f64) -> (f64, f64) {
        match *self {
            Profile::HeatMode { horizon, dim } => {
                let k = dim as f64 * PI * PI;
                let e = libm::exp(-k * (horizon - t));
                (e, k * e)
            }
            Profile::GameProfile => (libm::cos(t), -libm::sin(t)),
        }
    }

    fn value(&self, t: f64, x: &[f64]) -> f64 {
        let (s, _) = Self::sines(x);
        let prod: f64 = s.iter().product();
        let (e, _) = self.time_factor(t);
        match self {
            Profile::HeatMode { .. } => e * prod,
            Profile::GameProfile => e * prod + 0.5 * x[0],
        }
    }

    fn dt(&self, t: f64, x: &[f64]) -> f64 {
        let (s, _) = Self::sines(x);
        self.time_factor(t).1 * s.iter().product::<f64>()
    }

    fn gradient(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let (s, c) = Self::sines(x);
        let (e, _) = self.time_factor(t);
        let d = x.len();
        let mut g: Vec<f64> = (0..d)
            .map(|i| {
                let others: f64 = (0..d).filter(|&j| j != i).map(|j| s[j]).product();
                e * PI * c[i] * others
            })
            .collect();
        if let Profile::GameProfile = self {
            g[0] += 0.5;
        }
        g
    }

    fn hessian(&self, t: f64, x: &[f64]) -> Matrix {
        let (s, c) = Self::sines(x);
        let (e, _) = self.time_factor(t);
        let d = x.len();
        let mut hm = Matrix::zeros(d);
        for i in 0..d {
            for j in 0..d {
                let rest: f64 = (0..d).filter(|&k| k != i && k != j).map(|k| s[k]).product();
                hm[(i, j)] = if i == j {
                    -e * PI * PI * s[i] * rest
                } else {
                    e * PI * PI * c[i] * c[j] * rest
                };
            }
        }
        hm
    }
}

const GAME_ALPHA: [f64; 3] = [-1.0, 0.0, 1.0];
const GAME_BETA: [f64; 2] = [-1.0, 1.0];

fn game_diffusion(alpha: f64, beta: f64, x: &[f64]) -> Matrix {
    match x.len() {
        1 => Matrix::diagonal(&[1.0 + 0.25 * alpha + 0.1 * beta * libm::sin(PI * x[0])]),
        _ => {
            let a11 = 1.0 + 0.25 * alpha + 0.1 * beta * libm::sin(PI * x[0]);
            let a22 = 1.0 - 0.25 * alpha + 0.1 * beta * libm::sin(PI * x[1]);
            let a12 = 0.2 * beta * libm::cos(PI * x[0]);
            Matrix::from_rows(&[&[a11, a12], &[a12, a22]])
        }
    }
}

fn game_drift(alpha: f64, beta: f64, dim: usize) -> Vec<f64> {
    match dim {
        1 => vec![0.5 * alpha + beta],
        _ => vec![0.5 * alpha + beta, 0.5 * (beta - alpha)],
    }
}

fn game_discount(alpha: f64) -> f64 {
    0.1 + 0.2 * alpha * alpha
}

fn game_kernel(amplitude: f64, t: f64, x: &[f64]) -> f64 {
    amplitude * (1.0 + 0.5 * libm::sin(2.0 * PI * x[0]) * libm::cos(t))
}

/// Builds a manufactured case whose exact solution is known in closed form.
pub fn make_manufactured(
    kind: ManufacturedKind,
    params: ManufacturedParams,
) -> Result<ManufacturedCase, ProblemError> {
    let horizon = params.horizon;
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(ProblemError::InvalidParameter("horizon must be positive"));
    }
    match kind {
        ManufacturedKind::Heat1d | ManufacturedKind::Heat2d => {
            let dim = if kind == ManufacturedKind::Heat1d { 1 } else { 2 };
            let profile = Profile::HeatMode { horizon, dim };
            let exact: SpaceTimeFn = Arc::new(move |t, x| profile.value(t, x));
            let g = exact.clone();
            let problem = IsaacsProblem::new(dim, ActionSets::single(), 0.5, 1.0)?
                .with_boundary(move |t, x| g(t, x));
            Ok(ManufacturedCase {
                problem,
                exact,
                domain: SpatialDomain::unit_cube(dim),
                horizon,
            })
        }
        ManufacturedKind::IsaacsGame => {
            let dim = params.dim;
            if !(dim == 1 || dim == 2) {
                return Err(ProblemError::InvalidParameter("game case supports d = 1 or 2"));
            }
            let amplitude = params.amplitude;
            if !(amplitude >= 0.0 && amplitude.is_finite()) {
                return Err(ProblemError::InvalidParameter("game amplitude must be nonnegative"));
            }
            let profile = Profile::GameProfile;
            let actions = ActionSets::new(GAME_ALPHA.to_vec(), GAME_BETA.to_vec())?;
            let exact: SpaceTimeFn = Arc::new(move |t, x| profile.value(t, x));
            let g = exact.clone();
            let source = move |ia: usize, ib: usize, t: f64, x: &[f64]| {
                let (al, be) = (GAME_ALPHA[ia], GAME_BETA[ib]);
                let a = game_diffusion(al, be, x);
                let b = game_drift(al, be, x.len());
                let hess = profile.hessian(t, x);
                let grad = profile.gradient(t, x);
                let mut lu = -game_discount(al) * profile.value(t, x);
                for i in 0..x.len() {
                    lu += b[i] * grad[i];
                    for j in 0..x.len() {
                        lu += a[(i, j)] * hess[(i, j)];
                    }
                }
                -profile.dt(t, x) - lu + al * be * game_kernel(amplitude, t, x)
            };
            let problem = IsaacsProblem::new(dim, actions, 0.4, 50.0 + 1.5 * amplitude)?
                .with_diffusion(|ia, ib, _, x| game_diffusion(GAME_ALPHA[ia], GAME_BETA[ib], x))
                .with_drift(|ia, ib, _, x| game_drift(GAME_ALPHA[ia], GAME_BETA[ib], x.len()))
                .with_discount(|ia, _, _, _| game_discount(GAME_ALPHA[ia]))
                .with_source(source)
                .with_boundary(move |t, x| g(t, x));
            Ok(ManufacturedCase {
                problem,
                exact,
                domain: SpatialDomain::unit_cube(dim),
                horizon,
            })
        }
    }
}

/// Heat equation on `(0, 1)` with constant source and zero data everywhere
/// on the parabolic boundary. No closed form; used for boundary-layer checks.
pub fn heat_1d_source(source: f64) -> Result<IsaacsProblem, ProblemError> {
    if !source.is_finite() {
        return Err(ProblemError::InvalidParameter("source must be finite"));
    }
    Ok(IsaacsProblem::new(1, ActionSets::single(), 0.5, source.abs().max(1.0))?
        .with_source(move |_, _, _, _| source))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::validate_problem;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `∂_t u + sup_α inf_β [L u + f]` by central differences on the closed form.
    fn fd_residual(case: &ManufacturedCase, t: f64, x: &[f64]) -> f64 {
        let u = &case.exact;
        let p = &case.problem;
        let eps = 1e-4;
        let eps_t = 1e-5;
        let dt = (u(t + eps_t, x) - u(t - eps_t, x)) / (2.0 * eps_t);
        let d = x.len();
        let mut grad = vec![0.0; d];
        let mut hess = Matrix::zeros(d);
        let shift = |x: &[f64], i: usize, s: f64| {
            let mut y = x.to_vec();
            y[i] += s;
            y
        };
        for i in 0..d {
            grad[i] = (u(t, &shift(x, i, eps)) - u(t, &shift(x, i, -eps))) / (2.0 * eps);
            for j in 0..d {
                let pp = u(t, &shift(&shift(x, i, eps), j, eps));
                let pm = u(t, &shift(&shift(x, i, eps), j, -eps));
                let mp = u(t, &shift(&shift(x, i, -eps), j, eps));
                let mm = u(t, &shift(&shift(x, i, -eps), j, -eps));
                hess[(i, j)] = (pp - pm - mp + mm) / (4.0 * eps * eps);
            }
        }
        let acts = p.actions();
        let mut sup = f64::NEG_INFINITY;
        for ia in 0..acts.n_alpha() {
            let mut inf = f64::INFINITY;
            for ib in 0..acts.n_beta() {
                let a = p.diffusion(ia, ib, t, x);
                let b = p.drift(ia, ib, t, x);
                let mut v = -p.discount(ia, ib, t, x) * u(t, x) + p.source(ia, ib, t, x);
                for i in 0..d {
                    v += b[i] * grad[i];
                    for j in 0..d {
                        v += a[(i, j)] * hess[(i, j)];
                    }
                }
                inf = inf.min(v);
            }
            sup = sup.max(inf);
        }
        dt + sup
    }

    #[test]
    fn heat_1d_terminal_value() {
        let case = make_manufactured(ManufacturedKind::Heat1d, ManufacturedParams::default()).unwrap();
        assert!(((case.exact)(1.0, &[0.5]) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn factory_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cases = [
            (ManufacturedKind::Heat1d, 1),
            (ManufacturedKind::Heat2d, 2),
            (ManufacturedKind::IsaacsGame, 1),
            (ManufacturedKind::IsaacsGame, 2),
        ];
        for (kind, dim) in cases {
            let params = ManufacturedParams { dim, ..Default::default() };
            let case = make_manufactured(kind, params).unwrap();
            for _ in 0..100 {
                let t = rng.random_range(0.01..0.99);
                let x: Vec<f64> = (0..dim).map(|_| rng.random_range(0.01..0.99)).collect();
                let r = fd_residual(&case, t, &x);
                assert!(r.abs() <= 1e-6, "{kind:?} d={dim}: residual {r} at t={t}, x={x:?}");
            }
        }
    }

    #[test]
    fn game_kernel_matrix() {
        // with m ≡ 1 the αβ term has row minima (−1, 0, −1)
        let rows: Vec<f64> = GAME_ALPHA
            .iter()
            .map(|a| GAME_BETA.iter().map(|b| a * b).fold(f64::INFINITY, f64::min))
            .collect();
        assert_eq!(rows, vec![-1.0, 0.0, -1.0]);
        let sup_inf = rows.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let inf_sup = GAME_BETA
            .iter()
            .map(|b| GAME_ALPHA.iter().map(|a| a * b).fold(f64::NEG_INFINITY, f64::max))
            .fold(f64::INFINITY, f64::min);
        assert_eq!(sup_inf, 0.0);
        assert_eq!(inf_sup, 1.0);
    }

    #[test]
    fn manufactured_problems_validate() {
        for (kind, dim) in [
            (ManufacturedKind::Heat1d, 1),
            (ManufacturedKind::Heat2d, 2),
            (ManufacturedKind::IsaacsGame, 1),
            (ManufacturedKind::IsaacsGame, 2),
        ] {
            let case = make_manufactured(kind, ManufacturedParams { dim, ..Default::default() }).unwrap();
            validate_problem(&case.problem, &case.domain, case.horizon, 500, 5, None)
                .unwrap_or_else(|e| panic!("{kind:?} d={dim}: {e}"));
        }
    }

    #[test]
    fn unknown_kind() {
        assert_eq!(
            "heat_3d".parse::<ManufacturedKind>().unwrap_err(),
            ProblemError::UnknownKind("heat_3d".into())
        );
        assert_eq!("isaacs_game".parse::<ManufacturedKind>(), Ok(ManufacturedKind::IsaacsGame));
    }
}
