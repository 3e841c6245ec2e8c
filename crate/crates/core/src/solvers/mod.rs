//! Multigrid solvers running inside the multiscale traversal.
//!
//! The multiplicative solver performs one smoothing step per sweep and is
//! steered by the level automaton [`SolverState`]. The additive and BPX
//! variants perform one cycle per sweep. All three use FAS with
//! hierarchical residuals, so coarse levels carry injected solutions plus
//! corrections.

mod additive;
mod multiplicative;
mod smoothers;

use std::fmt;
use std::str::FromStr;

use rustc_hash::FxHashMap;

use crate::adaptivity;
use crate::compression::{self, CompressedOps, VertexOps};
use crate::discretization::{self, ElementMatrix, Problem, Stencil, TransferStencil};
use crate::lattice::{self, Idx};
use crate::operators::{self, RestrictionVariant};
use crate::scalar::Real;
use crate::spacetree::{CellKey, Spacetree, TraversalEvents, VertexKey, VertexType};

pub use smoothers::{adapt_coarsest_level, block_smooth, point_jacobi, CoarseMonitor};

/// Solver family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Family {
    Additive,
    Bpx,
    #[default]
    Multiplicative,
}

/// Source of coarse-grid operators and inter-grid transfer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum OperatorMode {
    /// Rediscretisation on every level, d-linear transfer.
    #[default]
    Rediscretize,
    /// Galerkin coarse operators, d-linear transfer.
    Galerkin,
    /// Galerkin coarse operators, BoxMG prolongation.
    BoxMg,
}

impl OperatorMode {
    /// Whether vertices carry explicit stencils.
    pub fn stores_operators(self) -> bool {
        self != OperatorMode::Rediscretize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Smoother {
    #[default]
    Jacobi,
    /// Point Jacobi plus the given number of Gauss-Seidel passes over the
    /// interior vertices of every patch.
    BlockJacobi(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Damping {
    #[default]
    Uniform,
    /// `omega^(finest - level + 1)`.
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum CoarseSolve {
    /// The coarsest level gets the same number of sweeps as any other.
    #[default]
    SweepOnly,
    /// Jacobi on the coarsest level until its residual drops below `1e-12`.
    Exact,
}

macro_rules! keyword_enum {
    ($ty:ty, $label:literal, $($text:literal => $value:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = String;
            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($value),)+
                    _ => Err(format!("unknown {} `{s}`", $label)),
                }
            }
        }
    };
}

keyword_enum!(Family, "solver family", "add" => Family::Additive, "additive" => Family::Additive, "bpx" => Family::Bpx,
    "mult" => Family::Multiplicative, "multiplicative" => Family::Multiplicative);
keyword_enum!(OperatorMode, "operator mode", "redisc" => OperatorMode::Rediscretize, "galerkin" => OperatorMode::Galerkin,
    "boxmg" => OperatorMode::BoxMg);
keyword_enum!(Damping, "damping", "uniform" => Damping::Uniform, "exp" => Damping::Exponential);
keyword_enum!(CoarseSolve, "coarse solve", "sweep" => CoarseSolve::SweepOnly, "exact" => CoarseSolve::Exact);

impl FromStr for Smoother {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "jacobi" {
            return Ok(Smoother::Jacobi);
        }
        s.strip_prefix("block:")
            .and_then(|n| n.parse().ok())
            .map(Smoother::BlockJacobi)
            .ok_or_else(|| format!("unknown smoother `{s}`, expected jacobi or block:N"))
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Family::Additive => "add",
            Family::Bpx => "bpx",
            Family::Multiplicative => "mult",
        })
    }
}

impl fmt::Display for OperatorMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OperatorMode::Rediscretize => "redisc",
            OperatorMode::Galerkin => "galerkin",
            OperatorMode::BoxMg => "boxmg",
        })
    }
}

impl fmt::Display for Smoother {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Smoother::Jacobi => f.write_str("jacobi"),
            Smoother::BlockJacobi(n) => write!(f, "block:{n}"),
        }
    }
}

impl fmt::Display for Damping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Damping::Uniform => "uniform",
            Damping::Exponential => "exp",
        })
    }
}

impl fmt::Display for CoarseSolve {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoarseSolve::SweepOnly => "sweep",
            CoarseSolve::Exact => "exact",
        })
    }
}

/// Solver parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub family: Family,
    pub operators: OperatorMode,
    pub restriction: RestrictionVariant,
    pub smoother: Smoother,
    pub omega: f64,
    pub damping: Damping,
    pub mu_pre: usize,
    pub mu_post: usize,
    pub coarse: CoarseSolve,
    pub max_iterations: usize,
    pub reduction_goal: f64,
    /// Compression tolerance; `None` stores operators uncompressed.
    pub eps_mf: Option<f64>,
    /// Residual ratio per cycle above which the coarsest level is raised.
    pub stagnation_rho: f64,
    /// Relative excess of off-centre mass over the centre tolerated in a
    /// recomputed coarsest-level stencil before the level is raised.
    pub dominance_slack: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            family: Family::Multiplicative,
            operators: OperatorMode::Rediscretize,
            restriction: RestrictionVariant::Transpose,
            smoother: Smoother::Jacobi,
            omega: 0.8,
            damping: Damping::Uniform,
            mu_pre: 2,
            mu_post: 1,
            coarse: CoarseSolve::SweepOnly,
            max_iterations: 300,
            reduction_goal: 1e8,
            eps_mf: None,
            stagnation_rho: 0.999,
            dominance_slack: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ConfigError {
    #[error("omega must lie in (0, 2), got {0}")]
    Omega(f64),
    #[error("mu_pre and mu_post must be at least 1")]
    Mu,
    #[error("reduction goal must exceed 1, got {0}")]
    Reduction(f64),
    #[error("compression tolerance must be positive, got {0}")]
    EpsMf(f64),
    #[error("block smoothing is only available in the multiplicative solver")]
    BlockSmoother,
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.omega > 0.0 && self.omega < 2.0) {
            return Err(ConfigError::Omega(self.omega));
        }
        if self.mu_pre == 0 || self.mu_post == 0 {
            return Err(ConfigError::Mu);
        }
        if self.reduction_goal.is_nan() || self.reduction_goal <= 1.0 {
            return Err(ConfigError::Reduction(self.reduction_goal));
        }
        if let Some(eps) = self.eps_mf {
            if eps.is_nan() || eps <= 0.0 {
                return Err(ConfigError::EpsMf(eps));
            }
        }
        if matches!(self.smoother, Smoother::BlockJacobi(_)) && self.family != Family::Multiplicative {
            return Err(ConfigError::BlockSmoother);
        }
        Ok(())
    }
}

/// Current and previous smoothing level of the multiplicative solver.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SolverState {
    pub current: u32,
    pub old: u32,
}

impl SolverState {
    pub fn new(finest: u32) -> Self {
        Self { current: finest, old: finest }
    }

    /// Moves one level coarser.
    pub fn ascend(self) -> Self {
        Self { current: self.current - 1, old: self.current }
    }

    /// Moves one level finer.
    pub fn descend(self) -> Self {
        Self { current: self.current + 1, old: self.current }
    }

    /// Another smoothing step on the same level.
    pub fn stay(self) -> Self {
        Self { current: self.current, old: self.current }
    }

    pub fn is_restriction(&self) -> bool {
        self.current < self.old
    }

    pub fn is_prolongation(&self) -> bool {
        self.current > self.old
    }
}

/// Unknowns and operators of one vertex.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VertexRecord<T> {
    pub u: T,
    pub u_hat: T,
    pub r: T,
    pub r_hat: T,
    pub d: T,
    pub b: T,
    /// Injected smoother impact, BPX only.
    pub i: T,
    /// Diagonal accumulated alongside `r`.
    pub diag: T,
    /// Explicit operator row; absent in rediscretisation mode.
    pub stencil: Option<Stencil<T>>,
    /// Prolongation stencil; absent means d-linear.
    pub prolongation: Option<TransferStencil<T>>,
    /// Copies the additive solvers read while new operators accumulate.
    pub stencil_backup: Option<Stencil<T>>,
    pub prolongation_backup: Option<TransferStencil<T>>,
    /// Persistent compressed operators when compression is on.
    pub compressed: Option<CompressedOps>,
    /// Set when operators changed since they were last compressed.
    pub dirty: bool,
    pub initialised: bool,
}

/// Outcome of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Converged,
    NotConverged,
    Diverged,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::Converged => "converged",
            Outcome::NotConverged => "not-converged",
            Outcome::Diverged => "diverged",
        })
    }
}

/// Storage statistics of a tree.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct MemoryStats {
    pub vertices: usize,
    /// Unknowns plus operator storage as held between sweeps.
    pub persistent_bytes: usize,
    /// Compressed operator payload bytes (tags excluded).
    pub payload_bytes: usize,
    /// Bytes the operators would need uncompressed.
    pub uncompressed_operator_bytes: usize,
    /// Bytes the operators actually need (tags plus payload, or raw).
    pub operator_bytes: usize,
    /// Per operator (A, P, R): vertex count per bpa code in `BPA_CODES` order.
    pub bpa_histogram: [[usize; 8]; 3],
    /// Vertices whose three operators all carry bpa 0.
    pub all_zero_bpa: usize,
}

impl MemoryStats {
    /// Operator storage relative to the uncompressed operators.
    pub fn compression_ratio(&self) -> f64 {
        if self.uncompressed_operator_bytes == 0 {
            1.0
        } else {
            self.operator_bytes as f64 / self.uncompressed_operator_bytes as f64
        }
    }
}

/// Everything recorded during a solve.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveReport {
    pub outcome: Outcome,
    pub cycles: usize,
    /// `||r||_2` before the first and after every cycle.
    pub residual_history: Vec<f64>,
    /// Cumulative first-touch counts, aligned with `residual_history`.
    pub unknown_reads: Vec<u64>,
    pub coarsest_level_history: Vec<u32>,
    pub persistent_bytes_history: Vec<usize>,
    /// Cells refined by the adaptivity criterion over the whole run.
    pub refined_cells: usize,
    pub memory: MemoryStats,
}

impl SolveReport {
    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history holds the initial residual")
    }

    pub fn total_unknown_reads(&self) -> u64 {
        *self.unknown_reads.last().expect("history holds the initial entry")
    }
}

/// Shared solver context: problem, parameters and per-run caches.
pub struct Solver<T: Real> {
    pub problem: Problem,
    pub cfg: SolverConfig,
    d: usize,
    dlinear: TransferStencil<T>,
    fixed_restriction: Option<TransferStencil<T>>,
    zero: Stencil<T>,
    identity: Stencil<T>,
    elements: FxHashMap<CellKey, ElementMatrix<T>>,
    state: SolverState,
    reads: u64,
    alert: bool,
}

type Tree<T> = Spacetree<VertexRecord<T>>;

impl<T: Real> Solver<T> {
    pub fn new(problem: Problem, cfg: SolverConfig, d: usize) -> Self {
        let dlinear = discretization::d_linear_transfer(d);
        let fixed_restriction = match cfg.restriction {
            RestrictionVariant::Transpose => None,
            v => Some(operators::restriction_from(&dlinear, v)),
        };
        Self {
            problem,
            cfg,
            d,
            dlinear,
            fixed_restriction,
            zero: Stencil::zeros(d),
            identity: Stencil::identity(d),
            elements: FxHashMap::default(),
            state: SolverState::new(1),
            reads: 0,
            alert: false,
        }
    }

    /// Cumulative first-touch count over all solver sweeps.
    pub fn unknown_reads(&self) -> u64 {
        self.reads
    }

    pub fn state(&self) -> SolverState {
        self.state
    }

    fn stores(&self) -> bool {
        self.cfg.operators.stores_operators()
    }

    fn omega_at(&self, level: u32, finest: u32) -> T {
        let w = match self.cfg.damping {
            Damping::Uniform => self.cfg.omega,
            Damping::Exponential => self.cfg.omega.powi((finest - level + 1) as i32),
        };
        T::lit(w)
    }

    /// Initialises every vertex that has not been set up yet: Dirichlet
    /// value or zero, load vector entry and rediscretised operator.
    pub fn setup(&mut self, tree: &mut Tree<T>) {
        self.state = SolverState::new(tree.finest_level());
        for v in tree.all_vertex_keys() {
            if !tree.vertex(v).is_some_and(|r| r.data.initialised) {
                let u = if tree.is_boundary(v) { T::lit(self.problem.dirichlet(&v.position(self.d))) } else { T::zero() };
                self.init_record(tree, v, u);
            }
        }
    }

    fn init_record(&self, tree: &mut Tree<T>, v: VertexKey, u: T) {
        let b = T::lit(discretization::load_entry(&self.problem, v, self.d));
        let stencil = self.stores().then(|| discretization::rediscretized_stencil(&self.problem, v, self.d));
        let rec = tree.data_mut(v).expect("vertex exists");
        *rec = VertexRecord { u, b, stencil, initialised: true, dirty: true, ..VertexRecord::default() };
        self.recompress(tree, v);
    }

    /// Geometric reference operators of a vertex.
    fn reference_ops(&self, v: VertexKey) -> VertexOps<T> {
        VertexOps {
            a: discretization::rediscretized_stencil(&self.problem, v, self.d),
            p: self.dlinear.clone(),
            r: self.fixed_restriction.clone().unwrap_or_else(|| self.dlinear.clone()),
        }
    }

    /// Unpacks compressed operators into the working fields.
    fn decompress(&self, tree: &mut Tree<T>, v: VertexKey) {
        let Some(rec) = tree.data(v) else { return };
        let Some(c) = rec.compressed.as_ref() else { return };
        if rec.stencil.is_some() {
            return;
        }
        let reference = self.reference_ops(v);
        let ops = compression::reconstruct_ops(c, &reference).expect("payload written by compress_ops");
        let p = (ops.p != reference.p).then_some(ops.p);
        let rec = tree.data_mut(v).expect("checked");
        rec.stencil = Some(ops.a);
        rec.prolongation = p;
    }

    /// Re-encodes modified operators and drops the working copies.
    fn recompress(&self, tree: &mut Tree<T>, v: VertexKey) {
        let Some(eps) = self.cfg.eps_mf else { return };
        let Some(rec) = tree.data(v) else { return };
        if rec.stencil.is_none() {
            return;
        }
        let dirty = rec.dirty || rec.compressed.is_none();
        let reference = dirty.then(|| self.reference_ops(v));
        let rec = tree.data_mut(v).expect("checked");
        let a = rec.stencil.take().expect("checked");
        let p = rec.prolongation.take();
        if let Some(reference) = reference {
            let r = match (&self.fixed_restriction, &p) {
                (Some(fixed), _) => fixed.clone(),
                (None, Some(p)) => p.clone(),
                (None, None) => reference.r.clone(),
            };
            let ops = VertexOps { a, p: p.unwrap_or_else(|| reference.p.clone()), r };
            rec.compressed = Some(compression::compress_ops(&ops, &reference, eps));
            rec.dirty = false;
        }
    }

    /// Storage statistics of the whole tree as held between sweeps.
    pub fn memory(&self, tree: &Tree<T>) -> MemoryStats {
        let mut m = MemoryStats::default();
        let unknowns = if self.cfg.family == Family::Bpx { 4 } else { 3 };
        let scalar = std::mem::size_of::<T>();
        let raw_ops = (lattice::ipow(3, self.d) + 2 * lattice::ipow(5, self.d)) * scalar;
        for v in tree.all_vertex_keys() {
            let rec = &tree.vertex(v).expect("listed").data;
            m.vertices += 1;
            m.persistent_bytes += unknowns * scalar;
            if !self.stores() {
                continue;
            }
            m.uncompressed_operator_bytes += raw_ops;
            match &rec.compressed {
                Some(c) => {
                    let bpa = c.bpa();
                    for (k, &b) in bpa.iter().enumerate() {
                        let slot = compression::bpa_to_tag(b).expect("valid tag") as usize;
                        m.bpa_histogram[k][slot] += 1;
                    }
                    if bpa == [0, 0, 0] {
                        m.all_zero_bpa += 1;
                    }
                    m.payload_bytes += c.payload.len();
                    m.operator_bytes += c.bytes();
                }
                None => m.operator_bytes += raw_ops,
            }
        }
        m.persistent_bytes += m.operator_bytes;
        m
    }

    /// Element matrix of a cell: rediscretised, or assembled from the split
    /// stencils of its vertices. Rows of hanging and Dirichlet vertices are
    /// left zero in the stored variant since they carry no equation.
    fn cell_matrix(&mut self, tree: &Tree<T>, c: CellKey) -> ElementMatrix<T> {
        if !self.stores() {
            if let Some(m) = self.elements.get(&c) {
                return *m;
            }
            let m = discretization::element_matrix(&self.problem, c, self.d);
            self.elements.insert(c, m);
            return m;
        }
        let rows: Vec<&Stencil<T>> = lattice::corners(self.d)
            .iter()
            .map(|&e| {
                let v = c.vertex(e);
                match tree.vertex(v) {
                    Some(rec) if !rec.is_hanging() && !rec.is_boundary() => rec
                        .data
                        .stencil_backup
                        .as_ref()
                        .or(rec.data.stencil.as_ref())
                        .unwrap_or(&self.zero),
                    _ => &self.zero,
                }
            })
            .collect();
        discretization::cell_matrix_from_stencils(&rows, self.d)
    }

    /// Stencil used for smoothing and BoxMG at a vertex.
    fn operator_row(&self, tree: &Tree<T>, v: VertexKey) -> Stencil<T> {
        match tree.vertex(v) {
            Some(rec) if rec.is_boundary() => self.identity.clone(),
            Some(rec) if self.stores() => match rec.data.stencil_backup.as_ref().or(rec.data.stencil.as_ref()) {
                Some(s) => s.clone(),
                None => discretization::rediscretized_stencil(&self.problem, v, self.d),
            },
            _ => discretization::rediscretized_stencil(&self.problem, v, self.d),
        }
    }

    fn prolongation_of<'a>(&'a self, rec: &'a VertexRecord<T>) -> &'a TransferStencil<T> {
        rec.prolongation_backup.as_ref().or(rec.prolongation.as_ref()).unwrap_or(&self.dlinear)
    }

    fn restriction_of<'a>(&'a self, rec: &'a VertexRecord<T>) -> &'a TransferStencil<T> {
        self.fixed_restriction.as_ref().unwrap_or_else(|| self.prolongation_of(rec))
    }

    /// Coarse vertices whose transfer stencils reach fine vertex `v`, with
    /// the fine offset relative to each.
    fn coarse_parents(&self, v: VertexKey) -> impl Iterator<Item = (VertexKey, Idx)> + '_ {
        let pc = v.parent_cell(self.d);
        lattice::corners(self.d).iter().filter_map(move |&e| {
            let cv = pc?.vertex(e);
            let o = lattice::sub(v.index, lattice::scale(cv.index, 3));
            o.iter().all(|&k| (-2..=2).contains(&k)).then_some((cv, o))
        })
    }

    /// `(P x)(v)` for the field `x` of the next coarser level.
    fn prolong(&self, tree: &Tree<T>, v: VertexKey, field: impl Fn(&VertexRecord<T>) -> T) -> T {
        let mut acc = T::zero();
        for (cv, o) in self.coarse_parents(v) {
            if let Some(rec) = tree.data(cv) {
                let w = self.prolongation_of(rec).at(o);
                if w != T::zero() {
                    acc += w * field(rec);
                }
            }
        }
        acc
    }

    /// Adds `R r_hat` from fine vertex `v` to the right-hand sides of the
    /// refined, non-Dirichlet coarse vertices.
    fn restrict(&self, tree: &mut Tree<T>, v: VertexKey, r_hat: T) {
        for (cv, o) in self.coarse_parents(v) {
            let w = match tree.vertex(cv) {
                Some(rec) if rec.is_refined() && !rec.is_boundary() => self.restriction_of(&rec.data).at(o),
                _ => continue,
            };
            if w != T::zero() {
                tree.data_mut(cv).expect("checked").b += w * r_hat;
            }
        }
    }

    /// The coarse twin of a c-point, if it is stored.
    fn coarse_twin(tree: &Tree<T>, v: VertexKey) -> Option<VertexKey> {
        v.coarse_twin().filter(|&c| tree.vertex(c).is_some_and(|r| !r.is_hanging()))
    }

    /// Hanging vertices carry the prolongated values of the coarser level.
    fn fill_hanging(&self, tree: &mut Tree<T>, v: VertexKey) {
        let u = self.prolong(tree, v, |r| r.u);
        let d = self.prolong(tree, v, |r| r.d);
        let rec = tree.data_mut(v).expect("created by the traversal");
        rec.u = u;
        rec.d = d;
        rec.initialised = true;
    }

    /// Galerkin contribution of fine cell `c` to the stencils of those
    /// parent-cell corners selected by `target`.
    fn accumulate_galerkin(
        &self,
        tree: &mut Tree<T>,
        c: CellKey,
        e: &ElementMatrix<T>,
        target: impl Fn(&crate::spacetree::Vertex<VertexRecord<T>>) -> bool,
    ) {
        let Some(parent) = c.parent() else { return };
        let d = self.d;
        let corners = lattice::corners(d);
        let targets: Vec<bool> =
            corners.iter().map(|&k| tree.vertex(parent.vertex(k)).is_some_and(&target)).collect();
        if !targets.iter().any(|&t| t) {
            return;
        }
        let rows: Vec<bool> = corners
            .iter()
            .map(|&k| tree.vertex(c.vertex(k)).is_some_and(|r| !r.is_hanging() && !r.is_boundary()))
            .collect();
        let child = lattice::sub(c.index, lattice::scale(parent.index, 3));
        let mut out = vec![Stencil::zeros(d); corners.len()];
        {
            let recs: Vec<&VertexRecord<T>> =
                corners.iter().map(|&k| &tree.vertex(parent.vertex(k)).expect("parent corner open").data).collect();
            let p: Vec<&TransferStencil<T>> = recs.iter().map(|r| self.prolongation_of(r)).collect();
            let r: Vec<&TransferStencil<T>> = recs.iter().map(|r| self.restriction_of(r)).collect();
            operators::galerkin_accumulate(child, e, &rows, &p, &r, &mut out);
        }
        for (k, &ck) in corners.iter().enumerate() {
            if !targets[k] {
                continue;
            }
            let rec = tree.data_mut(parent.vertex(ck)).expect("checked");
            let s = rec.stencil.get_or_insert_with(|| Stencil::zeros(d));
            for (x, y) in s.values.iter_mut().zip(&out[k].values) {
                *x += *y;
            }
            rec.dirty = true;
        }
    }

    /// Recomputes the BoxMG prolongation of the refined interior corners of
    /// `c` selected by `target`, from the stencils of the patch below `c`.
    fn boxmg_patch(
        &self,
        tree: &mut Tree<T>,
        c: CellKey,
        target: impl Fn(&crate::spacetree::Vertex<VertexRecord<T>>) -> bool,
    ) -> bool {
        let d = self.d;
        let corners = lattice::corners(d);
        let targets: Vec<bool> = corners
            .iter()
            .map(|&k| tree.vertex(c.vertex(k)).is_some_and(|r| r.is_refined() && !r.is_boundary() && target(r)))
            .collect();
        if !targets.iter().any(|&t| t) {
            return false;
        }
        let coarse_rows: Vec<Stencil<T>> = corners.iter().map(|&k| self.operator_row(tree, c.vertex(k))).collect();
        let base = lattice::scale(c.index, 3);
        let stencils = lattice::patch_offsets(d)
            .iter()
            .map(|&q| {
                let v = VertexKey::new(c.level + 1, lattice::add(base, q));
                match tree.vertex(v) {
                    Some(rec) if rec.is_hanging() => {
                        let mut xi = [0.0; 3];
                        for k in 0..d {
                            xi[k] = q[k] as f64 / 3.0;
                        }
                        let parents: Vec<&Stencil<T>> = coarse_rows.iter().collect();
                        operators::hanging_stencil(&parents, &xi)
                    }
                    _ => self.operator_row(tree, v),
                }
            })
            .collect();
        let patch = operators::PatchStencils::new(d, stencils);
        let mut singular = false;
        for (k, result) in operators::boxmg_prolongation(&patch).into_iter().enumerate() {
            if !targets[k] {
                continue;
            }
            let entries = match result {
                Ok(p) => p,
                Err(err) => {
                    log::warn!("BoxMG patch {c:?} corner {k}: {err}; keeping d-linear weights");
                    singular = true;
                    (0..lattice::ipow(3, d))
                        .map(|j| self.dlinear.at(operators::corner_entry_offset(d, k, j)))
                        .collect()
                }
            };
            let rec = tree.data_mut(c.vertex(corners[k])).expect("checked");
            let p = rec.prolongation.get_or_insert_with(|| self.dlinear.clone());
            operators::apply_corner_entries(p, k, &entries);
            rec.dirty = true;
        }
        singular
    }

    /// Residual of the composite system: `b - A u` at every unrefined,
    /// non-hanging, non-Dirichlet vertex. The values stay in `r` for the
    /// adaptivity criterion. This pass is bookkeeping and not counted.
    pub fn residual_norm(&mut self, tree: &mut Tree<T>) -> f64 {
        let mut pass = ResidualPass { solver: self, sum: 0.0 };
        tree.traverse(u32::MAX, &mut pass);
        pass.sum.sqrt()
    }

    /// Initialises freshly created vertices: d-linear interpolant of the
    /// coarser levels, then one undamped Jacobi step. Dirichlet vertices
    /// take their boundary value.
    pub fn init_new_vertices(&mut self, tree: &mut Tree<T>) -> usize {
        let fresh: Vec<VertexKey> =
            tree.all_vertex_keys().into_iter().filter(|&v| !tree.vertex(v).expect("listed").data.initialised).collect();
        for &v in &fresh {
            let u = if tree.is_boundary(v) {
                T::lit(self.problem.dirichlet(&v.position(self.d)))
            } else {
                value_at(tree, v.level, v.index)
            };
            self.init_record(tree, v, u);
        }
        let updates: Vec<(VertexKey, T)> = fresh
            .iter()
            .filter(|&&v| !tree.is_boundary(v))
            .map(|&v| {
                let s: Stencil<T> = discretization::rediscretized_stencil(&self.problem, v, self.d);
                let mut r = tree.data(v).expect("listed").b;
                for (k, &o) in lattice::stencil_offsets(self.d).iter().enumerate() {
                    if s.values[k] != T::zero() {
                        r -= s.values[k] * value_at(tree, v.level, lattice::add(v.index, o));
                    }
                }
                (v, r / s.centre())
            })
            .collect();
        for (v, du) in updates {
            tree.data_mut(v).expect("listed").u += du;
        }
        fresh.len()
    }

    /// One cycle of the configured family.
    pub fn cycle(&mut self, tree: &mut Tree<T>) {
        match self.cfg.family {
            Family::Multiplicative => multiplicative::cycle(self, tree),
            Family::Additive | Family::Bpx => additive::cycle(self, tree),
        }
    }

    /// Whether the recomputed stencil at `v` failed the dominance check
    /// while its rediscretised counterpart passes it.
    fn dominance_lost(&self, tree: &Tree<T>, v: VertexKey) -> bool {
        let Some(s) = tree.data(v).and_then(|r| r.stencil.as_ref()) else { return false };
        let slack = self.cfg.dominance_slack;
        if s.centre() <= T::zero() {
            return true;
        }
        if !operators::stencil_alert(s, slack) {
            return false;
        }
        let geometric: Stencil<T> = discretization::rediscretized_stencil(&self.problem, v, self.d);
        let lost = !operators::stencil_alert(&geometric, slack);
        if lost {
            log::debug!("stencil at {v:?} is no longer diagonally dominant");
        }
        lost
    }

    /// Takes and clears the stencil alert raised during the last sweeps.
    fn take_alert(&mut self) -> bool {
        std::mem::take(&mut self.alert)
    }
}

/// Nodal value of `u` at lattice point `q` of `level`: the stored value of
/// a non-hanging vertex, or the d-linear interpolant of the coarser level.
pub fn value_at<T: Real>(tree: &Tree<T>, level: u32, q: Idx) -> T {
    let d = tree.dim();
    let v = VertexKey::new(level, q);
    if let Some(rec) = tree.vertex(v) {
        if !rec.is_hanging() && rec.data.initialised {
            return rec.data.u;
        }
    }
    if level == 0 {
        return T::zero();
    }
    let Some(pc) = v.parent_cell(d) else { return T::zero() };
    let xi = discretization::local_coordinates(v, pc, d);
    let mut acc = T::zero();
    for &e in lattice::corners(d) {
        let w = discretization::d_linear_weight(d, e, &xi);
        if w != 0.0 {
            acc += T::lit(w) * value_at(tree, level - 1, pc.vertex(e).index);
        }
    }
    acc
}

struct ResidualPass<'s, T: Real> {
    solver: &'s mut Solver<T>,
    sum: f64,
}

fn is_unknown<T>(rec: &crate::spacetree::Vertex<VertexRecord<T>>) -> bool {
    rec.kind() == VertexType::Unrefined && !rec.is_boundary()
}

impl<T: Real> TraversalEvents<VertexRecord<T>> for ResidualPass<'_, T> {
    fn touch_vertex_first_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.decompress(tree, v);
        let rec = tree.data_mut(v).expect("opened");
        rec.r = T::zero();
        rec.diag = T::zero();
    }

    fn create_hanging_vertex(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.fill_hanging(tree, v);
    }

    fn handle_cell(&mut self, tree: &mut Tree<T>, c: CellKey) {
        let keys: Vec<VertexKey> = lattice::corners(tree.dim()).iter().map(|&e| c.vertex(e)).collect();
        let wants: Vec<bool> = keys.iter().map(|&v| tree.vertex(v).is_some_and(is_unknown)).collect();
        if !wants.iter().any(|&w| w) {
            return;
        }
        let m = self.solver.cell_matrix(tree, c);
        let u: Vec<T> = keys.iter().map(|&v| tree.data(v).expect("opened").u).collect();
        for (a, &v) in keys.iter().enumerate() {
            if wants[a] {
                let rec = tree.data_mut(v).expect("opened");
                for (b, &ub) in u.iter().enumerate() {
                    rec.r -= m.a[a][b] * ub;
                }
                rec.diag += m.a[a][a];
            }
        }
    }

    fn touch_vertex_last_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        let unknown = tree.vertex(v).is_some_and(is_unknown);
        let rec = tree.data_mut(v).expect("opened");
        if unknown {
            rec.r += rec.b;
            self.sum += rec.r.as_f64().powi(2);
        } else {
            rec.r = T::zero();
        }
        if self.solver.cfg.eps_mf.is_some() && rec.compressed.is_some() && !rec.dirty {
            rec.stencil = None;
            rec.prolongation = None;
        }
    }
}

/// Runs cycles on a fixed grid until the residual drops by the reduction
/// goal, the iteration cap is hit, or the residual exceeds `1e6` times its
/// initial value.
pub fn solve<T: Real>(tree: &mut Tree<T>, problem: &Problem, cfg: &SolverConfig) -> SolveReport {
    drive(tree, problem, cfg, None)
}

/// Like [`solve`], but refines the grid after every cycle up to
/// `max_depth`. The reduction goal and the divergence guard refer to the
/// residual right after the most recent refinement, and convergence needs a
/// cycle without refinement.
pub fn solve_dynamic<T: Real>(tree: &mut Tree<T>, problem: &Problem, cfg: &SolverConfig, max_depth: u32) -> SolveReport {
    drive(tree, problem, cfg, Some(max_depth))
}

fn drive<T: Real>(tree: &mut Tree<T>, problem: &Problem, cfg: &SolverConfig, max_depth: Option<u32>) -> SolveReport {
    let mut solver = Solver::new(*problem, cfg.clone(), tree.dim());
    solver.setup(tree);
    let mut monitor = CoarseMonitor::default();
    let mut bins = adaptivity::BinStatistics::default();
    let r0 = solver.residual_norm(tree);
    let mut report = SolveReport {
        outcome: Outcome::NotConverged,
        cycles: 0,
        residual_history: vec![r0],
        unknown_reads: vec![0],
        coarsest_level_history: vec![tree.coarsest_active_level()],
        persistent_bytes_history: vec![solver.memory(tree).persistent_bytes],
        refined_cells: 0,
        memory: MemoryStats::default(),
    };
    if r0 == 0.0 {
        report.outcome = Outcome::Converged;
    }
    let (mut prev, mut reference) = (r0, r0);
    // The first additive traversal only smooths and the second applies the
    // first coarse corrections, which may overshoot. Neither residual says
    // anything about stagnation, and the same holds after the coarsest level
    // moved.
    let warmup_cycles: usize = if cfg.family == Family::Multiplicative { 0 } else { 2 };
    let mut warmup = warmup_cycles;
    while report.outcome == Outcome::NotConverged && report.cycles < cfg.max_iterations {
        let coarsest_before = tree.coarsest_active_level();
        solver.cycle(tree);
        let mut r = solver.residual_norm(tree);
        report.cycles += 1;
        let refined = match max_depth {
            Some(depth) => adaptivity::select_and_refine(tree, &mut bins, depth),
            None => 0,
        };
        if refined > 0 {
            solver.init_new_vertices(tree);
            r = solver.residual_norm(tree);
            reference = r;
            report.refined_cells += refined;
        }
        if tree.coarsest_active_level() != coarsest_before {
            warmup = warmup_cycles;
        }
        if solver.stores() {
            let level = adapt_coarsest_level(
                &mut monitor,
                tree.coarsest_active_level(),
                tree.finest_level(),
                warmup > 0 || refined > 0,
                prev,
                r,
                cfg.stagnation_rho,
            );
            if level != tree.coarsest_active_level() {
                warmup = warmup_cycles;
            } else {
                warmup = warmup.saturating_sub(1);
            }
            tree.set_coarsest_active_level(level);
        }
        report.residual_history.push(r);
        report.unknown_reads.push(solver.unknown_reads());
        report.coarsest_level_history.push(tree.coarsest_active_level());
        report.persistent_bytes_history.push(solver.memory(tree).persistent_bytes);
        log::debug!(
            "cycle {} residual {r:e} coarsest {} refined {refined}",
            report.cycles,
            tree.coarsest_active_level()
        );
        if refined == 0 && r <= reference / cfg.reduction_goal {
            report.outcome = Outcome::Converged;
        } else if !r.is_finite() || r > 1e6 * reference {
            report.outcome = Outcome::Diverged;
        }
        prev = r;
    }
    report.memory = solver.memory(tree);
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn state_transitions() {
        let s = SolverState::new(4);
        assert_eq!(s, SolverState { current: 4, old: 4 });
        let a = s.ascend();
        assert!(a.is_restriction());
        assert_eq!(a.current, 3);
        let d = a.descend();
        assert!(d.is_prolongation());
        assert_eq!((d.current, d.old), (4, 3));
        assert_eq!(d.stay(), SolverState::new(4));
    }

    #[test]
    fn parses_keywords() {
        assert_eq!("mult".parse::<Family>().unwrap(), Family::Multiplicative);
        assert_eq!("boxmg".parse::<OperatorMode>().unwrap(), OperatorMode::BoxMg);
        assert_eq!("block:4".parse::<Smoother>().unwrap(), Smoother::BlockJacobi(4));
        assert!("block:x".parse::<Smoother>().is_err());
        assert_eq!("exp".parse::<Damping>().unwrap(), Damping::Exponential);
        assert!("bogus".parse::<CoarseSolve>().is_err());
    }

    #[test]
    fn validation() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { omega: 2.0, ..Default::default() };
        assert_eq!(bad.validate(), Err(ConfigError::Omega(2.0)));
        let bad = SolverConfig { family: Family::Additive, smoother: Smoother::BlockJacobi(2), ..Default::default() };
        assert_eq!(bad.validate(), Err(ConfigError::BlockSmoother));
    }

    #[test]
    fn jacobi_two_grid_reduces_residual() {
        let mut tree = Spacetree::build(2, 2).unwrap();
        let report = solve::<f64>(&mut tree, &Problem::Sin, &SolverConfig { max_iterations: 3, ..Default::default() });
        let h = &report.residual_history;
        assert_eq!(h.len(), 4);
        assert!(h[3] < 0.1 * h[0], "{h:?}");
    }
}
