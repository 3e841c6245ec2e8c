//! Scenario orchestration, report serialisation and the robustness suite.

use std::fmt::Write as _;

use serde::Deserialize;
use spacetree_mg::discretization::Problem;
use spacetree_mg::solvers::{self, Damping, Family, OperatorMode, Outcome, SolveReport, Smoother, SolverConfig};
use spacetree_mg::Tree64;

use crate::config::{GridMode, RunConfig, RunConfigError, MAX_EXPONENT};

/// CSV header of a per-cycle report.
pub const CSV_HEADER: &str = "cycle,residual,unknown_reads,coarsest_level,persistent_bytes";

/// Cycle ratio between the two finest levels up to which a converged suite
/// cell counts as mesh independent.
pub const MESH_INDEPENDENCE_RATIO: f64 = 1.25;

/// Builds the grid the configuration asks for and solves on it.
pub fn run_scenario(cfg: &RunConfig) -> SolveReport {
    match cfg.grid {
        GridMode::Regular => {
            let mut tree = Tree64::build(cfg.d, cfg.hmin_exp).expect("validated dimension and depth");
            solvers::solve(&mut tree, &cfg.problem, &cfg.solver)
        }
        GridMode::Dynamic => {
            let mut tree = Tree64::build(cfg.d, 1).expect("validated dimension");
            solvers::solve_dynamic(&mut tree, &cfg.problem, &cfg.solver, cfg.hmin_exp)
        }
    }
}

/// One CSV row per entry of the residual history, the initial state first.
pub fn csv(report: &SolveReport) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for k in 0..report.residual_history.len() {
        writeln!(
            out,
            "{k},{:e},{},{},{}",
            report.residual_history[k],
            report.unknown_reads[k],
            report.coarsest_level_history[k],
            report.persistent_bytes_history[k]
        )
        .expect("writing to a string");
    }
    out
}

/// Single-line digest of a report.
pub fn summary(report: &SolveReport) -> String {
    let r0 = report.residual_history[0];
    let reduction = if report.final_residual() > 0.0 { r0 / report.final_residual() } else { f64::INFINITY };
    format!(
        "outcome={} cycles={} residual={:e} reduction={:.3e} unknown_reads={} refined_cells={} vertices={} compression_ratio={:.4}",
        report.outcome,
        report.cycles,
        report.final_residual(),
        reduction,
        report.total_unknown_reads(),
        report.refined_cells,
        report.memory.vertices,
        report.memory.compression_ratio()
    )
}

/// Classification of one suite cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SuiteOutcome {
    ConvergedMeshIndependent,
    Converged,
    Failed,
}

impl std::fmt::Display for SuiteOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            SuiteOutcome::ConvergedMeshIndependent => "converged-mesh-independent",
            SuiteOutcome::Converged => "converged",
            SuiteOutcome::Failed => "failed",
        })
    }
}

/// Which problems, solvers and operators the suite crosses, and the shared
/// settings of every cell.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SuiteManifest {
    pub problems: Vec<String>,
    pub solvers: Vec<String>,
    pub ops: Vec<String>,
    /// Mesh exponents; mesh independence compares the two largest.
    pub levels: Vec<u32>,
    pub d: usize,
    pub omega: f64,
    pub mu: [usize; 2],
    pub max_it: usize,
    /// Smoother of the multiplicative cells. The additive families always
    /// use point Jacobi.
    pub smoother: String,
    /// Damping of the plain additive cells. BPX and multiplicative cells
    /// damp uniformly.
    pub additive_damping: String,
}

impl Default for SuiteManifest {
    fn default() -> Self {
        let defaults = SolverConfig::default();
        Self {
            problems: vec!["sin".into(), "jump".into(), "checkerboard".into()],
            solvers: vec!["add".into(), "bpx".into(), "mult".into()],
            ops: vec!["redisc".into(), "galerkin".into(), "boxmg".into()],
            levels: vec![3, 4],
            d: 2,
            omega: defaults.omega,
            mu: [defaults.mu_pre, defaults.mu_post],
            max_it: defaults.max_iterations,
            smoother: "jacobi".into(),
            additive_damping: "exp".into(),
        }
    }
}

/// Result of one (problem, solver, operators) combination.
#[derive(Clone, Debug, PartialEq)]
pub struct SuiteCell {
    pub problem: Problem,
    pub family: Family,
    pub operators: OperatorMode,
    /// `(exponent, outcome, cycles)` per tested level.
    pub runs: Vec<(u32, Outcome, usize)>,
    pub outcome: SuiteOutcome,
}

impl SuiteManifest {
    pub fn from_toml(text: &str) -> Result<Self, RunConfigError> {
        let m: SuiteManifest = toml::from_str(text)?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<(), RunConfigError> {
        if self.levels.is_empty() {
            return Err(RunConfigError::Flag("suite needs at least one level".into()));
        }
        if let Some(&n) = self.levels.iter().find(|&&n| n == 0 || n > MAX_EXPONENT) {
            return Err(RunConfigError::Exponent(n));
        }
        if self.d != 2 && self.d != 3 {
            return Err(RunConfigError::Dimension(self.d));
        }
        Ok(())
    }

    /// Expands the manifest into solver configurations, one per cell.
    pub fn cells(&self) -> Result<Vec<(Problem, SolverConfig)>, RunConfigError> {
        self.check()?;
        let smoother: Smoother = self.smoother.parse().map_err(RunConfigError::Flag)?;
        let additive_damping: Damping = self.additive_damping.parse().map_err(RunConfigError::Flag)?;
        let mut cells = Vec::new();
        for p in &self.problems {
            let problem: Problem = p.parse().map_err(RunConfigError::Flag)?;
            for s in &self.solvers {
                let family: Family = s.parse().map_err(RunConfigError::Flag)?;
                for o in &self.ops {
                    let operators: OperatorMode = o.parse().map_err(RunConfigError::Flag)?;
                    let cfg = SolverConfig {
                        family,
                        operators,
                        smoother: if family == Family::Multiplicative { smoother } else { Smoother::Jacobi },
                        damping: if family == Family::Additive { additive_damping } else { Damping::Uniform },
                        omega: self.omega,
                        mu_pre: self.mu[0],
                        mu_post: self.mu[1],
                        max_iterations: self.max_it,
                        ..Default::default()
                    };
                    cfg.validate()?;
                    cells.push((problem, cfg));
                }
            }
        }
        Ok(cells)
    }
}

/// Classifies a cell from its runs, ordered by increasing exponent.
pub fn classify(runs: &[(u32, Outcome, usize)]) -> SuiteOutcome {
    if runs.is_empty() || runs.iter().any(|&(_, o, _)| o != Outcome::Converged) {
        return SuiteOutcome::Failed;
    }
    match runs {
        [.., (_, _, coarse), (_, _, fine)] if *coarse > 0 && (*fine as f64) <= MESH_INDEPENDENCE_RATIO * *coarse as f64 => {
            SuiteOutcome::ConvergedMeshIndependent
        }
        _ => SuiteOutcome::Converged,
    }
}

/// Runs every cell of the manifest on regular grids. A cell that fails
/// never stops the suite.
pub fn run_suite(manifest: &SuiteManifest) -> Result<Vec<SuiteCell>, RunConfigError> {
    let mut levels = manifest.levels.clone();
    levels.sort_unstable();
    levels.dedup();
    let mut out = Vec::new();
    for (problem, solver) in manifest.cells()? {
        let runs: Vec<(u32, Outcome, usize)> = levels
            .iter()
            .map(|&n| {
                let cfg = RunConfig { problem, d: manifest.d, hmin_exp: n, grid: GridMode::Regular, solver: solver.clone() };
                let report = run_scenario(&cfg);
                log::info!("{problem} {} {} n={n}: {}", solver.family, solver.operators, summary(&report));
                (n, report.outcome, report.cycles)
            })
            .collect();
        let outcome = classify(&runs);
        out.push(SuiteCell { problem, family: solver.family, operators: solver.operators, runs, outcome });
    }
    Ok(out)
}

/// Suite results as CSV, one row per cell.
pub fn suite_table(cells: &[SuiteCell]) -> String {
    let mut out = String::from("problem,solver,ops,cycles,outcome\n");
    for c in cells {
        let cycles: Vec<String> = c
            .runs
            .iter()
            .map(|&(n, o, k)| if o == Outcome::Converged { format!("n{n}:{k}") } else { format!("n{n}:{o}") })
            .collect();
        writeln!(out, "{},{},{},{},{}", c.problem, c.family, c.operators, cycles.join(" "), c.outcome).expect("writing to a string");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification() {
        use Outcome::*;
        assert_eq!(classify(&[(2, Converged, 12), (3, Converged, 15)]), SuiteOutcome::ConvergedMeshIndependent);
        assert_eq!(classify(&[(2, Converged, 12), (3, Converged, 16)]), SuiteOutcome::Converged);
        assert_eq!(classify(&[(3, Converged, 16)]), SuiteOutcome::Converged);
        assert_eq!(classify(&[(2, Converged, 12), (3, NotConverged, 300)]), SuiteOutcome::Failed);
        assert_eq!(classify(&[]), SuiteOutcome::Failed);
    }

    #[test]
    fn additive_cells_fall_back_to_jacobi() {
        let m = SuiteManifest { smoother: "block:4".into(), problems: vec!["sin".into()], ..Default::default() };
        let cells = m.cells().unwrap();
        assert_eq!(cells.len(), 9);
        for (_, cfg) in cells {
            let block = matches!(cfg.smoother, Smoother::BlockJacobi(4));
            assert_eq!(block, cfg.family == Family::Multiplicative);
            assert_eq!(cfg.damping == Damping::Exponential, cfg.family == Family::Additive);
        }
    }
}
