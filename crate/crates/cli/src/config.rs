//! Run configuration: a TOML file, command-line overrides and validation.
//!
//! The file uses the long flag names with dashes replaced by underscores:
//!
//! ```toml
//! problem = "jump"
//! d = 2
//! hmin_exp = 4
//! grid = "dynamic"
//! solver = "mult"
//! ops = "boxmg"
//! smoother = "block:4"
//! mu = [2, 1]
//! ```
//!
//! Every key is optional except `problem`, which must come from the file or
//! the flags.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::Deserialize;
use spacetree_mg::discretization::Problem;
use spacetree_mg::operators::RestrictionVariant;
use spacetree_mg::solvers::{CoarseSolve, ConfigError, Damping, Family, OperatorMode, Smoother, SolverConfig};
use thiserror::Error;
use toml::Spanned;

/// Finest mesh exponent the harness accepts.
pub const MAX_EXPONENT: u32 = 7;

/// How the grid comes about.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GridMode {
    /// The full regular grid of the requested width is built before solving.
    #[default]
    Regular,
    /// The solve starts on `h = 1/3` and the refinement criterion unfolds
    /// the grid down to the requested width.
    Dynamic,
}

impl FromStr for GridMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "regular" => Ok(GridMode::Regular),
            "dynamic" => Ok(GridMode::Dynamic),
            _ => Err(format!("unknown grid mode `{s}`")),
        }
    }
}

impl fmt::Display for GridMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GridMode::Regular => "regular",
            GridMode::Dynamic => "dynamic",
        })
    }
}

/// A validated scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub problem: Problem,
    pub d: usize,
    /// Finest mesh width is `3^-hmin_exp`.
    pub hmin_exp: u32,
    pub grid: GridMode,
    pub solver: SolverConfig,
}

#[derive(Debug, Error)]
pub enum RunConfigError {
    #[error("{0}")]
    Toml(#[from] toml::de::Error),
    #[error("line {line}, column {column}: {message}")]
    Value { line: usize, column: usize, message: String },
    #[error("{0}")]
    Flag(String),
    #[error("no problem given")]
    MissingProblem,
    #[error("dimension must be 2 or 3, got {0}")]
    Dimension(usize),
    #[error("mesh exponent must lie in 1..={MAX_EXPONENT}, got {0}")]
    Exponent(u32),
    #[error(transparent)]
    Solver(#[from] ConfigError),
}

/// Raw settings before validation. Both the file and the flags fill one of
/// these; [`Settings::merge`] lets the flags win.
#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub problem: Option<Spanned<String>>,
    pub d: Option<usize>,
    pub hmin_exp: Option<u32>,
    pub grid: Option<Spanned<String>>,
    pub solver: Option<Spanned<String>>,
    pub ops: Option<Spanned<String>>,
    pub restriction: Option<Spanned<String>>,
    pub smoother: Option<Spanned<String>>,
    pub omega: Option<f64>,
    pub damping: Option<Spanned<String>>,
    pub mu: Option<[usize; 2]>,
    pub coarse: Option<Spanned<String>>,
    pub eps_mf: Option<f64>,
    pub max_it: Option<usize>,
    pub reduction: Option<f64>,
}

/// Wraps a flag value so that it can share the file's field types. Flag
/// values carry an empty span.
pub fn flag(value: impl Into<String>) -> Spanned<String> {
    Spanned::new(0..0, value.into())
}

impl Settings {
    /// Parses the file format. Syntax errors and unknown keys carry the
    /// position reported by the TOML parser.
    pub fn from_toml(text: &str) -> Result<Self, RunConfigError> {
        Ok(toml::from_str(text)?)
    }

    /// Keeps every field of `self` that `overrides` leaves unset.
    pub fn merge(self, overrides: Settings) -> Settings {
        Settings {
            problem: overrides.problem.or(self.problem),
            d: overrides.d.or(self.d),
            hmin_exp: overrides.hmin_exp.or(self.hmin_exp),
            grid: overrides.grid.or(self.grid),
            solver: overrides.solver.or(self.solver),
            ops: overrides.ops.or(self.ops),
            restriction: overrides.restriction.or(self.restriction),
            smoother: overrides.smoother.or(self.smoother),
            omega: overrides.omega.or(self.omega),
            damping: overrides.damping.or(self.damping),
            mu: overrides.mu.or(self.mu),
            coarse: overrides.coarse.or(self.coarse),
            eps_mf: overrides.eps_mf.or(self.eps_mf),
            max_it: overrides.max_it.or(self.max_it),
            reduction: overrides.reduction.or(self.reduction),
        }
    }

    /// Checks all values and assembles a [`RunConfig`]. `text` is the file
    /// the spans point into, used for line and column numbers.
    pub fn resolve(self, text: &str) -> Result<RunConfig, RunConfigError> {
        let problem = match &self.problem {
            Some(p) => parse_spanned::<Problem>(p, text)?,
            None => return Err(RunConfigError::MissingProblem),
        };
        let d = self.d.unwrap_or(2);
        if d != 2 && d != 3 {
            return Err(RunConfigError::Dimension(d));
        }
        let hmin_exp = self.hmin_exp.unwrap_or(3);
        if !(1..=MAX_EXPONENT).contains(&hmin_exp) {
            return Err(RunConfigError::Exponent(hmin_exp));
        }
        let mut solver = SolverConfig::default();
        if let Some(v) = &self.solver {
            solver.family = parse_spanned::<Family>(v, text)?;
        }
        if let Some(v) = &self.ops {
            solver.operators = parse_spanned::<OperatorMode>(v, text)?;
        }
        if let Some(v) = &self.restriction {
            solver.restriction = parse_spanned::<RestrictionVariant>(v, text)?;
        }
        if let Some(v) = &self.smoother {
            solver.smoother = parse_spanned::<Smoother>(v, text)?;
        }
        if let Some(v) = &self.damping {
            solver.damping = parse_spanned::<Damping>(v, text)?;
        }
        if let Some(v) = &self.coarse {
            solver.coarse = parse_spanned::<CoarseSolve>(v, text)?;
        }
        if let Some(omega) = self.omega {
            solver.omega = omega;
        }
        if let Some([pre, post]) = self.mu {
            solver.mu_pre = pre;
            solver.mu_post = post;
        }
        if let Some(it) = self.max_it {
            solver.max_iterations = it;
        }
        if let Some(goal) = self.reduction {
            solver.reduction_goal = goal;
        }
        solver.eps_mf = self.eps_mf;
        solver.validate()?;
        let grid = match &self.grid {
            Some(v) => parse_spanned::<GridMode>(v, text)?,
            None => GridMode::Regular,
        };
        Ok(RunConfig { problem, d, hmin_exp, grid, solver })
    }
}

fn parse_spanned<T>(value: &Spanned<String>, text: &str) -> Result<T, RunConfigError>
where
    T: FromStr<Err = String>,
{
    value.get_ref().parse().map_err(|message: String| {
        let span = value.span();
        if span.is_empty() {
            RunConfigError::Flag(message)
        } else {
            let (line, column) = line_column(text, span);
            RunConfigError::Value { line, column, message }
        }
    })
}

/// One-based line and column of the start of `span`.
fn line_column(text: &str, span: Range<usize>) -> (usize, usize) {
    let before = &text[..span.start.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.len() - before.rfind('\n').map_or(0, |k| k + 1) + 1;
    (line, column)
}

impl RunConfig {
    /// Reads a configuration file without overrides.
    pub fn from_toml(text: &str) -> Result<Self, RunConfigError> {
        Settings::from_toml(text)?.resolve(text)
    }
}
