//! Study runners: build the problem and grid from a config, solve, and
//! collect rows for the CSV plus a results object for the manifest.

use std::sync::Arc;

use isaacs_fd::{
    build_grid, fit_rate, holder_seminorm, k_gap_study, make_manufactured, solve_isaacs,
    solve_truncated, sup_error, validate_problem, ActionSets, AnalysisError, GapFit,
    IsaacsProblem, ManufacturedKind, ManufacturedParams, Matrix, SolveStats, SpaceTimeGrid,
    SpatialDomain, StandardLattice, TruncationSide, TruncationSpec,
};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{ConstantCoefficientConfig, DomainConfig, ExperimentConfig, ProblemConfig, StudyConfig};
use crate::CliError;

type ExactFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

pub struct BuiltProblem {
    pub problem: IsaacsProblem,
    pub exact: Option<ExactFn>,
    pub domain: SpatialDomain,
}

/// Per-solve summary recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub label: String,
    pub h: f64,
    pub slices: usize,
    pub total_iterations: usize,
    pub max_iterations: usize,
    pub max_contraction: f64,
    pub max_residual: f64,
    pub residual_bound: f64,
    pub certified: bool,
}

impl StatsSummary {
    fn from_stats(label: String, s: &SolveStats) -> Self {
        Self {
            label,
            h: s.h,
            slices: s.slices.len(),
            total_iterations: s.total_iterations(),
            max_iterations: s.max_iterations(),
            max_contraction: s.max_contraction(),
            max_residual: s.max_residual(),
            residual_bound: s.residual_bound,
            certified: s.certified(),
        }
    }
}

/// Tabular output of a study plus what goes into the manifest.
pub struct StudyOutput {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
    pub results: Value,
    pub stats: Vec<StatsSummary>,
}

pub fn build_problem(config: &ExperimentConfig) -> Result<BuiltProblem, CliError> {
    let horizon = config.grid.horizon;
    let perr = |source| CliError::Problem {
        context: "building problem".into(),
        source,
    };
    let manufactured = |kind, dim, amplitude| -> Result<BuiltProblem, CliError> {
        let case = make_manufactured(kind, ManufacturedParams { horizon, dim, amplitude }).map_err(perr)?;
        Ok(BuiltProblem {
            problem: case.problem,
            exact: Some(case.exact),
            domain: case.domain,
        })
    };
    let mut built = match &config.problem {
        ProblemConfig::Heat1d => manufactured(ManufacturedKind::Heat1d, 1, 1.0)?,
        ProblemConfig::Heat2d => manufactured(ManufacturedKind::Heat2d, 2, 1.0)?,
        ProblemConfig::IsaacsGame { dim, amplitude } => {
            manufactured(ManufacturedKind::IsaacsGame, *dim, *amplitude)?
        }
        ProblemConfig::Heat1dSource { source } => BuiltProblem {
            problem: isaacs_fd::heat_1d_source(*source).map_err(perr)?,
            exact: None,
            domain: SpatialDomain::unit_cube(1),
        },
        ProblemConfig::ConstantCoefficient(c) => BuiltProblem {
            problem: constant_coefficient(c).map_err(perr)?,
            exact: None,
            domain: SpatialDomain::unit_cube(c.dim),
        },
    };
    if let Some(domain) = &config.grid.domain {
        let gerr = |source| CliError::Grid {
            context: "grid.domain".into(),
            source,
        };
        built.domain = match domain {
            DomainConfig::Box { lower, upper } => {
                SpatialDomain::new_box(lower.clone(), upper.clone()).map_err(gerr)?
            }
            DomainConfig::Ball { center, radius } => {
                SpatialDomain::ball(center.clone(), *radius).map_err(gerr)?
            }
        };
    }
    Ok(built)
}

fn constant_coefficient(c: &ConstantCoefficientConfig) -> Result<IsaacsProblem, isaacs_fd::ProblemError> {
    let dim = c.dim;
    let n_alpha = c.pairs.len();
    let n_beta = c.pairs[0].len();
    let actions = ActionSets::new(
        (0..n_alpha).map(|i| i as f64).collect(),
        (0..n_beta).map(|j| j as f64).collect(),
    )?;
    let mut a = Vec::with_capacity(n_alpha);
    let mut b = Vec::with_capacity(n_alpha);
    let mut cc = Vec::with_capacity(n_alpha);
    let mut f = Vec::with_capacity(n_alpha);
    for row in &c.pairs {
        a.push(
            row.iter()
                .map(|p| {
                    let rows: Vec<&[f64]> = p.a.iter().map(Vec::as_slice).collect();
                    Matrix::from_rows(&rows)
                })
                .collect::<Vec<_>>(),
        );
        b.push(
            row.iter()
                .map(|p| if p.b.is_empty() { vec![0.0; dim] } else { p.b.clone() })
                .collect::<Vec<_>>(),
        );
        cc.push(row.iter().map(|p| p.c).collect::<Vec<_>>());
        f.push(row.iter().map(|p| p.f).collect::<Vec<_>>());
    }
    let slope = if c.boundary.slope.is_empty() {
        vec![0.0; dim]
    } else {
        c.boundary.slope.clone()
    };
    let offset = c.boundary.offset;
    Ok(IsaacsProblem::new(dim, actions, c.delta, c.k0)?
        .with_diffusion(move |i, j, _, _| a[i][j].clone())
        .with_drift(move |i, j, _, _| b[i][j].clone())
        .with_discount(move |i, j, _, _| cc[i][j])
        .with_source(move |i, j, _, _| f[i][j])
        .with_boundary(move |_, x| offset + slope.iter().zip(x).map(|(s, xi)| s * xi).sum::<f64>()))
}

/// Spot-checks the standing assumptions; any failed check aborts the run.
pub fn check_problem(built: &BuiltProblem, horizon: f64) -> Result<(), CliError> {
    let report = validate_problem(&built.problem, &built.domain, horizon, 256, 0, None).map_err(|source| {
        CliError::Problem {
            context: "problem validation".into(),
            source,
        }
    })?;
    let failed: Vec<String> = report
        .checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| match &c.worst_sample {
            Some(s) => format!("{} fails at {s}", c.check),
            None => format!("{} fails", c.check),
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::ConfigParse {
            field: "problem".into(),
            message: failed.join("; "),
        })
    }
}

fn make_grid(built: &BuiltProblem, lattice: &StandardLattice, horizon: f64, h: f64) -> Result<Arc<SpaceTimeGrid>, CliError> {
    use isaacs_fd::LatticeRepresentation;
    let radius = lattice.directions().radius();
    build_grid(built.domain.clone(), horizon, h, radius)
        .map(Arc::new)
        .map_err(|source| CliError::Grid {
            context: format!("building grid with h = {h}"),
            source,
        })
}

fn solver_err(context: String) -> impl FnOnce(isaacs_fd::SolverError) -> CliError {
    move |source| CliError::Solver { context, source }
}

fn analysis_err(context: &'static str) -> impl FnOnce(AnalysisError) -> CliError {
    move |source| CliError::Analysis {
        context: context.into(),
        source,
    }
}

/// Runs the study named in `config.study` (which `resolve` has filled in).
pub fn run_study(config: &ExperimentConfig) -> Result<StudyOutput, CliError> {
    let built = build_problem(config)?;
    check_problem(&built, config.grid.horizon)?;
    let lattice = StandardLattice::new(built.problem.dim()).map_err(|source| CliError::Lattice { source })?;
    let horizon = config.grid.horizon;
    let solver = &config.solver;
    let study = config.study.as_ref().unwrap_or(&StudyConfig::Solve);
    match study {
        StudyConfig::Solve => {
            let h = config.grid.h[0];
            let grid = make_grid(&built, &lattice, horizon, h)?;
            let sol = solve_isaacs(&built.problem, grid.clone(), &lattice, solver)
                .map_err(solver_err(format!("solve with h = {h}")))?;
            let dim = grid.dim();
            let mut header = vec!["t".to_string()];
            header.extend((1..=dim).map(|i| format!("x{i}")));
            header.push("value".into());
            let rows = grid
                .points()
                .map(|p| {
                    let mut row = vec![Some(grid.time(p.slice))];
                    row.extend(grid.coords(p.node).iter().map(|&x| Some(x)));
                    row.push(Some(sol.values.get(p)));
                    row
                })
                .collect();
            let mut results = json!({
                "h": h,
                "n_points": grid.n_points(),
                "max_abs": sol.values.max_abs(),
            });
            if let Some(exact) = &built.exact {
                results["sup_error"] = json!(sup_error(&sol.values, |t, x| exact(t, x)));
            }
            Ok(StudyOutput {
                header,
                rows,
                results,
                stats: vec![StatsSummary::from_stats(format!("h={h}"), &sol.stats)],
            })
        }
        StudyConfig::Rates => {
            let exact = built.exact.clone().ok_or_else(|| CliError::ConfigParse {
                field: "problem.family".into(),
                message: "the rates study needs a closed-form solution".into(),
            })?;
            let mut samples = Vec::new();
            let mut stats = Vec::new();
            for &h in &config.grid.h {
                let grid = make_grid(&built, &lattice, horizon, h)?;
                let sol = solve_isaacs(&built.problem, grid, &lattice, solver)
                    .map_err(solver_err(format!("rates study, h = {h}")))?;
                samples.push((h, sup_error(&sol.values, |t, x| exact(t, x))));
                stats.push(StatsSummary::from_stats(format!("h={h}"), &sol.stats));
            }
            let (orders, results) = match fit_rate(&samples) {
                Ok(r) => (
                    r.pairwise_orders.clone(),
                    json!({
                        "status": "fitted",
                        "fitted_exponent": r.fitted_exponent,
                        "pairwise_orders": r.pairwise_orders,
                        "fit_residual": r.residual,
                    }),
                ),
                Err(AnalysisError::DegenerateData { .. }) => {
                    (Vec::new(), json!({ "status": "exact_to_tolerance", "fitted_exponent": null }))
                }
                Err(e) => return Err(analysis_err("fitting rates")(e)),
            };
            let rows = samples
                .iter()
                .enumerate()
                .map(|(i, &(h, e))| {
                    let order = if i == 0 { None } else { orders.get(i - 1).copied() };
                    vec![Some(h), Some(e), order]
                })
                .collect();
            Ok(StudyOutput {
                header: vec!["h".into(), "sup_error".into(), "pairwise_order".into()],
                rows,
                results,
                stats,
            })
        }
        StudyConfig::Kgap { k_list, pucci } => {
            let h = config.grid.h[0];
            let grid = make_grid(&built, &lattice, horizon, h)?;
            let report = k_gap_study(&built.problem, grid, &lattice, k_list, *pucci, solver)
                .map_err(analysis_err("truncation-gap study"))?;
            let rows = report
                .ks
                .iter()
                .zip(&report.gaps)
                .map(|(&k, &g)| vec![Some(k), Some(g)])
                .collect();
            let status = match &report.fit {
                GapFit::Fitted(_) => "fitted",
                GapFit::ExactToTolerance => "exact_to_tolerance",
                GapFit::TooFewResolved => "too_few_resolved",
            };
            let results = json!({
                "status": status,
                "fitted_exponent": report.fitted_exponent(),
                "floor": report.floor,
                "fit": report.fit,
            });
            let stats = vec![StatsSummary {
                label: format!("truncated solves, h={h}"),
                h,
                slices: 0,
                total_iterations: 0,
                max_iterations: 0,
                max_contraction: report.max_contraction,
                max_residual: report.max_residual,
                residual_bound: report.residual_bound,
                certified: report.max_residual <= report.residual_bound,
            }];
            Ok(StudyOutput {
                header: vec!["K".into(), "gap".into()],
                rows,
                results,
                stats,
            })
        }
        StudyConfig::Regularity { epsilon_list, chi, k } => {
            let h = config.grid.h[0];
            let grid = make_grid(&built, &lattice, horizon, h)?;
            let sol = match k {
                Some(k) => {
                    let spec = TruncationSpec::for_problem(&built.problem, *k, TruncationSide::Upper)
                        .map_err(solver_err(format!("truncation with K = {k}")))?;
                    solve_truncated(&built.problem, grid, &lattice, &spec, solver)
                }
                None => solve_isaacs(&built.problem, grid, &lattice, solver),
            }
            .map_err(solver_err(format!("regularity study, h = {h}")))?;
            let mut samples = Vec::with_capacity(epsilon_list.len());
            for &eps in epsilon_list {
                let s = holder_seminorm(&sol.values, eps, *chi).map_err(analysis_err("Hölder seminorm"))?;
                samples.push((eps, s));
            }
            let mut sorted = samples.clone();
            sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
            sorted.dedup_by(|a, b| a.0 == b.0);
            let slope = if sorted.len() >= 2 {
                fit_rate(&sorted).ok().map(|r| r.fitted_exponent)
            } else {
                None
            };
            let rows = samples.iter().map(|&(e, s)| vec![Some(e), Some(s)]).collect();
            Ok(StudyOutput {
                header: vec!["epsilon".into(), "seminorm".into()],
                rows,
                results: json!({ "chi": chi, "k": k, "log_log_slope": slope }),
                stats: vec![StatsSummary::from_stats(format!("h={h}"), &sol.stats)],
            })
        }
    }
}
