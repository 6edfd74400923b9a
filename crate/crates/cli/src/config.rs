//! Experiment configuration (JSON) and its validation.
//!
//! The schema is documented in `config.schema.json` next to this crate's
//! manifest.

use std::path::{Path, PathBuf};

use isaacs_fd::{PucciParams, SolverConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Which study a run performs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyKind {
    Solve,
    Rates,
    Kgap,
    Regularity,
}

impl StudyKind {
    pub fn name(self) -> &'static str {
        match self {
            StudyKind::Solve => "solve",
            StudyKind::Rates => "rates",
            StudyKind::Kgap => "kgap",
            StudyKind::Regularity => "regularity",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    /// Output directory used when `--out` is not given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

fn one() -> usize {
    1
}

fn one_f() -> f64 {
    1.0
}

/// Built-in problem families.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ProblemConfig {
    /// `u_t + u_xx = 0` on `(0, 1)`, exact solution `e^{−π²(T−t)} sin πx`.
    #[serde(rename = "heat_1d")]
    Heat1d,
    /// Two-dimensional analogue of `heat_1d` on the unit square.
    #[serde(rename = "heat_2d")]
    Heat2d,
    /// 3×2 game with a closed-form solution.
    IsaacsGame {
        #[serde(default = "one")]
        dim: usize,
        #[serde(default = "one_f")]
        amplitude: f64,
    },
    /// Heat equation with constant source and zero boundary data.
    #[serde(rename = "heat_1d_source")]
    Heat1dSource {
        #[serde(default = "one_f")]
        source: f64,
    },
    ConstantCoefficient(ConstantCoefficientConfig),
}

impl ProblemConfig {
    pub fn dim(&self) -> usize {
        match self {
            ProblemConfig::Heat1d | ProblemConfig::Heat1dSource { .. } => 1,
            ProblemConfig::Heat2d => 2,
            ProblemConfig::IsaacsGame { dim, .. } => *dim,
            ProblemConfig::ConstantCoefficient(c) => c.dim,
        }
    }

    pub fn has_exact_solution(&self) -> bool {
        matches!(
            self,
            ProblemConfig::Heat1d | ProblemConfig::Heat2d | ProblemConfig::IsaacsGame { .. }
        )
    }
}

/// Constant coefficients per action pair: `pairs[α][β]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantCoefficientConfig {
    pub dim: usize,
    pub delta: f64,
    pub k0: f64,
    pub pairs: Vec<Vec<PairConfig>>,
    #[serde(default)]
    pub boundary: AffineBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairConfig {
    /// Diffusion matrix, row by row.
    pub a: Vec<Vec<f64>>,
    #[serde(default)]
    pub b: Vec<f64>,
    #[serde(default)]
    pub c: f64,
    #[serde(default)]
    pub f: f64,
}

/// `g(t, x) = slope · x + offset`; an empty slope means zero.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineBoundary {
    #[serde(default)]
    pub slope: Vec<f64>,
    #[serde(default)]
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    /// Defaults to the unit cube of the problem dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain: Option<DomainConfig>,
    pub horizon: f64,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DomainConfig {
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Ball { center: Vec<f64>, radius: f64 },
}

impl DomainConfig {
    fn dim(&self) -> usize {
        match self {
            DomainConfig::Box { lower, .. } => lower.len(),
            DomainConfig::Ball { center, .. } => center.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyConfig {
    Solve,
    Rates,
    Kgap {
        k_list: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pucci: Option<PucciParams>,
    },
    Regularity {
        epsilon_list: Vec<f64>,
        chi: f64,
        /// Use the upper K-truncated solution instead of the plain one.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        k: Option<f64>,
    },
}

impl StudyConfig {
    pub fn kind(&self) -> StudyKind {
        match self {
            StudyConfig::Solve => StudyKind::Solve,
            StudyConfig::Rates => StudyKind::Rates,
            StudyConfig::Kgap { .. } => StudyKind::Kgap,
            StudyConfig::Regularity { .. } => StudyKind::Regularity,
        }
    }
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::ConfigParse {
        field: field.to_string(),
        message: message.into(),
    }
}

fn positive(v: f64) -> bool {
    v > 0.0 && v.is_finite()
}

/// Reads and parses a config file; type errors name the offending field.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        invalid(if path == "." { "<root>" } else { &path }, e.inner().to_string())
    })
}

impl ExperimentConfig {
    /// Checks the config for `kind` and fills in the study section when the
    /// subcommand alone determines it.
    pub fn resolve(mut self, kind: StudyKind) -> Result<Self, CliError> {
        match &self.study {
            Some(s) if s.kind() != kind => {
                return Err(invalid(
                    "study.kind",
                    format!("config declares `{}` but `{}` was requested", s.kind().name(), kind.name()),
                ))
            }
            Some(_) => {}
            None => match kind {
                StudyKind::Solve => self.study = Some(StudyConfig::Solve),
                StudyKind::Rates => self.study = Some(StudyConfig::Rates),
                _ => return Err(invalid("study", format!("the {} study needs parameters", kind.name()))),
            },
        }
        self.validate()?;
        Ok(self)
    }

    pub fn study_kind(&self) -> Option<StudyKind> {
        self.study.as_ref().map(StudyConfig::kind)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let dim = self.problem.dim();
        self.validate_problem()?;

        let grid = &self.grid;
        if !positive(grid.horizon) {
            return Err(invalid("grid.horizon", "must be positive and finite"));
        }
        if grid.h.is_empty() {
            return Err(invalid("grid.h", "needs at least one step"));
        }
        if grid.h.iter().any(|&h| !positive(h)) {
            return Err(invalid("grid.h", "every step must be positive and finite"));
        }
        if let Some(domain) = &grid.domain {
            if domain.dim() != dim {
                return Err(invalid(
                    "grid.domain",
                    format!("dimension {} differs from problem dimension {dim}", domain.dim()),
                ));
            }
            match domain {
                DomainConfig::Box { lower, upper } => {
                    if lower.len() != upper.len() || lower.iter().zip(upper).any(|(l, u)| !(l < u)) {
                        return Err(invalid("grid.domain", "box needs lower < upper in every coordinate"));
                    }
                }
                DomainConfig::Ball { radius, .. } => {
                    if !positive(*radius) {
                        return Err(invalid("grid.domain.radius", "must be positive"));
                    }
                }
            }
        }

        let s = &self.solver;
        if !positive(s.slice_tolerance) {
            return Err(invalid("solver.slice_tolerance", "must be positive and finite"));
        }
        if s.max_slice_iterations == 0 {
            return Err(invalid("solver.max_slice_iterations", "must be at least 1"));
        }

        match &self.study {
            None => {}
            Some(StudyConfig::Rates) => {
                if grid.h.len() < 2 {
                    return Err(invalid("grid.h", "the rates study needs at least two steps"));
                }
                if grid.h.windows(2).any(|w| w[1] >= w[0]) {
                    return Err(invalid("grid.h", "must be strictly decreasing for the rates study"));
                }
                if !self.problem.has_exact_solution() {
                    return Err(invalid(
                        "problem.family",
                        "the rates study needs a family with a closed-form solution",
                    ));
                }
            }
            Some(study) => {
                if grid.h.len() != 1 {
                    return Err(invalid(
                        "grid.h",
                        format!("the {} study takes exactly one step", study.kind().name()),
                    ));
                }
                match study {
                    StudyConfig::Kgap { k_list, pucci } => {
                        if k_list.is_empty() || k_list.iter().any(|&k| !positive(k)) {
                            return Err(invalid("study.k_list", "needs positive finite values"));
                        }
                        if k_list.windows(2).any(|w| w[1] <= w[0]) {
                            return Err(invalid("study.k_list", "must be strictly increasing"));
                        }
                        if let Some(p) = pucci {
                            if PucciParams::new(p.lambda_low, p.lambda_high).is_err() {
                                return Err(invalid("study.pucci", "need 0 < lambda_low <= lambda_high"));
                            }
                        }
                    }
                    StudyConfig::Regularity { epsilon_list, chi, k } => {
                        if epsilon_list.is_empty() || epsilon_list.iter().any(|&e| !positive(e)) {
                            return Err(invalid("study.epsilon_list", "needs positive finite values"));
                        }
                        if !(*chi > 0.0 && *chi < 1.0) {
                            return Err(invalid("study.chi", "must lie in (0, 1)"));
                        }
                        if k.is_some_and(|k| !positive(k)) {
                            return Err(invalid("study.k", "must be positive and finite"));
                        }
                    }
                    StudyConfig::Solve | StudyConfig::Rates => {}
                }
            }
        }
        Ok(())
    }

    fn validate_problem(&self) -> Result<(), CliError> {
        match &self.problem {
            ProblemConfig::IsaacsGame { dim, amplitude } => {
                if !(*dim == 1 || *dim == 2) {
                    return Err(invalid("problem.dim", "isaacs_game supports dim 1 or 2"));
                }
                if !(*amplitude >= 0.0 && amplitude.is_finite()) {
                    return Err(invalid("problem.amplitude", "must be nonnegative"));
                }
            }
            ProblemConfig::Heat1dSource { source } => {
                if !source.is_finite() {
                    return Err(invalid("problem.source", "must be finite"));
                }
            }
            ProblemConfig::ConstantCoefficient(c) => {
                if !(1..=3).contains(&c.dim) {
                    return Err(invalid("problem.dim", "must be 1, 2 or 3"));
                }
                if !(c.delta > 0.0 && c.delta < 1.0) {
                    return Err(invalid("problem.delta", "must lie in (0, 1)"));
                }
                if !(c.k0 >= 0.0 && c.k0.is_finite()) {
                    return Err(invalid("problem.k0", "must be nonnegative"));
                }
                if c.pairs.is_empty() || c.pairs[0].is_empty() {
                    return Err(invalid("problem.pairs", "needs at least one action pair"));
                }
                let n_beta = c.pairs[0].len();
                for (ia, row) in c.pairs.iter().enumerate() {
                    if row.len() != n_beta {
                        return Err(invalid(
                            &format!("problem.pairs[{ia}]"),
                            format!("expected {n_beta} entries, one per beta"),
                        ));
                    }
                    for (ib, p) in row.iter().enumerate() {
                        let field = format!("problem.pairs[{ia}][{ib}]");
                        if p.a.len() != c.dim || p.a.iter().any(|r| r.len() != c.dim) {
                            return Err(invalid(&format!("{field}.a"), format!("must be {0}×{0}", c.dim)));
                        }
                        if !(p.b.is_empty() || p.b.len() == c.dim) {
                            return Err(invalid(&format!("{field}.b"), format!("must have {} entries", c.dim)));
                        }
                    }
                }
                if !(c.boundary.slope.is_empty() || c.boundary.slope.len() == c.dim) {
                    return Err(invalid("problem.boundary.slope", format!("must have {} entries", c.dim)));
                }
            }
            ProblemConfig::Heat1d | ProblemConfig::Heat2d => {}
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"{
        "problem": {"family": "heat_1d"},
        "grid": {"horizon": 1.0, "h": [0.125, 0.0625]}
    }"#;

    #[test]
    fn parses_minimal_config() {
        let c = parse_config(BASE).unwrap();
        assert_eq!(c.problem, ProblemConfig::Heat1d);
        assert_eq!(c.solver, SolverConfig::default());
        let c = c.resolve(StudyKind::Rates).unwrap();
        assert_eq!(c.study, Some(StudyConfig::Rates));
    }

    #[test]
    fn zero_horizon_names_field() {
        let text = BASE.replace("\"horizon\": 1.0", "\"horizon\": 0");
        let err = parse_config(&text).unwrap().resolve(StudyKind::Rates).unwrap_err();
        match err {
            CliError::ConfigParse { field, .. } => assert_eq!(field, "grid.horizon"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn type_errors_name_field() {
        let text = BASE.replace("\"horizon\": 1.0", "\"horizon\": \"soon\"");
        match parse_config(&text).unwrap_err() {
            CliError::ConfigParse { field, .. } => assert_eq!(field, "grid.horizon"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn study_mismatch_and_missing_params() {
        let c = parse_config(BASE).unwrap();
        assert!(matches!(
            c.clone().resolve(StudyKind::Kgap),
            Err(CliError::ConfigParse { ref field, .. }) if field == "study"
        ));
        let mut with = c;
        with.study = Some(StudyConfig::Solve);
        assert!(matches!(
            with.resolve(StudyKind::Rates),
            Err(CliError::ConfigParse { ref field, .. }) if field == "study.kind"
        ));
    }

    #[test]
    fn rates_needs_decreasing_steps() {
        let text = BASE.replace("[0.125, 0.0625]", "[0.0625, 0.125]");
        assert!(parse_config(&text).unwrap().resolve(StudyKind::Rates).is_err());
    }

    #[test]
    fn kgap_needs_increasing_k() {
        let text = r#"{
            "problem": {"family": "heat_1d"},
            "grid": {"horizon": 1.0, "h": [0.125]},
            "study": {"kind": "kgap", "k_list": [2, 1]}
        }"#;
        match parse_config(text).unwrap().resolve(StudyKind::Kgap).unwrap_err() {
            CliError::ConfigParse { field, .. } => assert_eq!(field, "study.k_list"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn constant_coefficient_shapes() {
        let text = r#"{
            "problem": {"family": "constant_coefficient", "dim": 2, "delta": 0.5, "k0": 1,
                        "pairs": [[{"a": [[1, 0], [0, 1]], "b": [0.5]}]]},
            "grid": {"horizon": 0.5, "h": [0.125]}
        }"#;
        match parse_config(text).unwrap().resolve(StudyKind::Solve).unwrap_err() {
            CliError::ConfigParse { field, .. } => assert_eq!(field, "problem.pairs[0][0].b"),
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config(BASE).unwrap().resolve(StudyKind::Rates).unwrap();
        let text = serde_json::to_string(&c).unwrap();
        assert_eq!(parse_config(&text).unwrap(), c);
    }
}
