//! Multiplicative V-cycle: one smoothing step per traversal.
//!
//! A sweep works on `state.current`. When the previous sweep worked one
//! level finer the sweep also computes hierarchical residuals on that level
//! and restricts them; when it worked one level coarser the sweep first
//! prolongates the coarse correction. Unrefined vertices on levels below the
//! current one take part in every smoothing step so that the composite grid
//! is smoothed as a whole.

use crate::discretization::Stencil;
use crate::lattice;
use crate::scalar::Real;
use crate::spacetree::{CellKey, TraversalEvents, Vertex, VertexKey, VertexType};

use super::{block_smooth, point_jacobi, CoarseSolve, OperatorMode, Smoother, Solver, SolverState, Tree, VertexRecord};

const EXACT_TOLERANCE: f64 = 1e-12;
const EXACT_SWEEP_CAP: usize = 100_000;

struct Sweep<'s, T: Real> {
    solver: &'s mut Solver<T>,
    state: SolverState,
    finest: u32,
    coarsest: u32,
    /// Last pre-smoothing sweep on `state.current`: the operators one level
    /// coarser are rebuilt.
    recompute: bool,
    jacobi_only: bool,
    /// Sum of squared residuals of the smoothed vertices.
    residual_sq: f64,
}

impl<T: Real> Sweep<'_, T> {
    fn active(&self, v: &Vertex<VertexRecord<T>>, level: u32) -> bool {
        !v.is_hanging()
            && !v.is_boundary()
            && (level == self.state.current || (level < self.state.current && v.kind() == VertexType::Unrefined))
    }

    fn rebuilds(&self, v: &Vertex<VertexRecord<T>>, level: u32) -> bool {
        self.recompute && level + 1 == self.state.current && v.is_refined() && !v.is_boundary()
    }

    fn restricting_at(&self, level: u32) -> bool {
        self.state.is_restriction() && level == self.state.old
    }
}

impl<T: Real> TraversalEvents<VertexRecord<T>> for Sweep<'_, T> {
    fn touch_vertex_first_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.reads += 1;
        self.solver.decompress(tree, v);
        let level = v.level;
        let rec = tree.vertex(v).expect("opened");
        let interior = !rec.is_hanging() && !rec.is_boundary();
        let active = self.active(rec, level);
        let refined = rec.is_refined();
        let rebuilds = self.rebuilds(rec, level);
        let hat = !rec.is_hanging() && self.restricting_at(level);
        let prolongate = interior && self.state.is_prolongation() && level == self.state.current;

        let coarse_u = hat.then(|| self.solver.prolong(tree, v, |r| r.u));
        let correction = prolongate.then(|| self.solver.prolong(tree, v, |r| r.d));
        let mode = self.solver.cfg.operators;
        let d = tree.dim();
        let rec = tree.data_mut(v).expect("opened");
        if active {
            rec.r = T::zero();
            rec.diag = T::zero();
        }
        if let Some(pu) = coarse_u {
            rec.u_hat = rec.u - pu;
            rec.r_hat = T::zero();
        }
        if self.state.is_restriction() && level == self.state.current {
            rec.d = T::zero();
            if refined && interior {
                rec.b = T::zero();
            }
        }
        if let Some(c) = correction {
            rec.u += c;
            rec.d += c;
        }
        if rebuilds && mode.stores_operators() {
            rec.stencil = Some(Stencil::zeros(d));
            if mode == OperatorMode::BoxMg {
                rec.prolongation = None;
            }
            rec.dirty = true;
        }
    }

    fn create_hanging_vertex(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.fill_hanging(tree, v);
    }

    fn descend(&mut self, tree: &mut Tree<T>, c: CellKey) {
        let level = c.level;
        if level + 1 != self.state.current {
            return;
        }
        if self.recompute && self.solver.cfg.operators == OperatorMode::BoxMg && level >= self.coarsest {
            let singular = self.solver.boxmg_patch(tree, c, |_| true);
            if singular && level == self.coarsest {
                self.solver.alert = true;
            }
        }
        if let Smoother::BlockJacobi(n) = self.solver.cfg.smoother {
            if !self.jacobi_only && !self.state.is_restriction() {
                block_smooth(self.solver, tree, c, n);
            }
        }
    }

    fn handle_cell(&mut self, tree: &mut Tree<T>, c: CellKey) {
        let level = c.level;
        let cur = self.state.current;
        let hat = self.restricting_at(level);
        let galerkin = self.recompute && level == cur && self.solver.stores();
        let corners = lattice::corners(tree.dim());
        let keys: Vec<VertexKey> = corners.iter().map(|&e| c.vertex(e)).collect();
        let wants: Vec<bool> = keys.iter().map(|&v| self.active(tree.vertex(v).expect("opened"), level)).collect();
        let smoothing = wants.iter().any(|&w| w);
        if !smoothing && !hat && !galerkin {
            return;
        }
        let m = self.solver.cell_matrix(tree, c);
        let n = corners.len();
        if smoothing {
            let u: Vec<T> = keys.iter().map(|&v| tree.data(v).expect("opened").u).collect();
            for a in 0..n {
                if wants[a] {
                    let rec = tree.data_mut(keys[a]).expect("opened");
                    for (b, &ub) in u.iter().enumerate() {
                        rec.r -= m.a[a][b] * ub;
                    }
                    rec.diag += m.a[a][a];
                }
            }
        }
        if hat {
            let rows: Vec<bool> = keys
                .iter()
                .map(|&v| tree.vertex(v).is_some_and(|r| !r.is_hanging() && !r.is_boundary()))
                .collect();
            let u_hat: Vec<T> = keys.iter().map(|&v| tree.data(v).expect("opened").u_hat).collect();
            for a in 0..n {
                if rows[a] {
                    let rec = tree.data_mut(keys[a]).expect("opened");
                    for (b, &ub) in u_hat.iter().enumerate() {
                        rec.r_hat -= m.a[a][b] * ub;
                    }
                }
            }
        }
        if galerkin {
            self.solver.accumulate_galerkin(tree, c, &m, |r| r.is_refined() && !r.is_boundary());
        }
    }

    fn touch_vertex_last_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        let level = v.level;
        let rec = tree.vertex(v).expect("closing stored vertex");
        let active = self.active(rec, level);
        let interior = !rec.is_hanging() && !rec.is_boundary();
        let rebuilt = self.rebuilds(rec, level);
        let omega = self.solver.omega_at(level, self.finest);
        let rec = tree.data_mut(v).expect("closing stored vertex");
        if active {
            rec.r += rec.b;
            self.residual_sq += rec.r.as_f64().powi(2);
            let delta = point_jacobi(rec.r, rec.diag, omega);
            rec.u += delta;
            rec.d += delta;
        }
        let u = rec.u;
        if self.state.current >= level && rec.initialised {
            if let Some(twin) = Solver::coarse_twin(tree, v) {
                tree.data_mut(twin).expect("checked").u = u;
            }
        }
        if interior && self.restricting_at(level) {
            let rec = tree.data_mut(v).expect("checked");
            rec.r_hat += rec.b;
            let r_hat = rec.r_hat;
            self.solver.restrict(tree, v, r_hat);
        }
        if rebuilt && level == self.coarsest && self.solver.stores() && self.solver.dominance_lost(tree, v) {
            self.solver.alert = true;
        }
        self.solver.recompress(tree, v);
    }
}

fn sweep<T: Real>(
    solver: &mut Solver<T>,
    tree: &mut Tree<T>,
    state: SolverState,
    coarsest: u32,
    recompute: bool,
    jacobi_only: bool,
) -> f64 {
    solver.state = state;
    let finest = tree.finest_level();
    let mut events = Sweep { solver, state, finest, coarsest, recompute, jacobi_only, residual_sq: 0.0 };
    tree.traverse(state.current.max(state.old), &mut events);
    events.residual_sq
}

/// Iterates on the coarsest level until its residual is tiny. The first
/// sweep may be a restriction sweep.
fn solve_coarsest<T: Real>(solver: &mut Solver<T>, tree: &mut Tree<T>, mut state: SolverState, coarsest: u32) {
    for _ in 0..EXACT_SWEEP_CAP {
        let sq = sweep(solver, tree, state, coarsest, false, false);
        let was_restriction = state.is_restriction();
        state = state.stay();
        if !was_restriction && sq.sqrt() < EXACT_TOLERANCE {
            return;
        }
    }
    log::warn!("coarsest level {coarsest} not solved within {EXACT_SWEEP_CAP} sweeps");
}

/// One V-cycle from the finest level down to the coarsest active level and
/// back.
pub(super) fn cycle<T: Real>(solver: &mut Solver<T>, tree: &mut Tree<T>) {
    let finest = tree.finest_level();
    let mut coarsest = tree.coarsest_active_level().min(finest);
    let (mu_pre, mu_post) = (solver.cfg.mu_pre, solver.cfg.mu_post);
    let stores = solver.stores();

    if coarsest >= finest {
        for _ in 0..mu_pre + mu_post {
            sweep(solver, tree, SolverState::new(finest), coarsest, false, true);
        }
        return;
    }

    let mut state = SolverState::new(finest);
    let mut level = finest;
    let mut bottom_reached = false;
    while level > coarsest {
        for k in 0..mu_pre {
            let recompute = stores && k + 1 == mu_pre;
            solver.take_alert();
            sweep(solver, tree, state, coarsest, recompute, false);
            state = state.stay();
        }
        if solver.take_alert() && level - 1 == coarsest {
            log::info!("coarse operators on level {coarsest} failed the dominance check; coarsest level -> {level}");
            coarsest = level;
            tree.set_coarsest_active_level(coarsest);
            bottom_reached = true;
            break;
        }
        level -= 1;
        state = state.ascend();
    }

    if bottom_reached {
        // Pre-smoothing on the new coarsest level has already happened.
        match solver.cfg.coarse {
            CoarseSolve::SweepOnly => {
                for _ in 0..mu_post {
                    sweep(solver, tree, state, coarsest, false, false);
                }
            }
            CoarseSolve::Exact => solve_coarsest(solver, tree, state, coarsest),
        }
    } else {
        match solver.cfg.coarse {
            CoarseSolve::SweepOnly => {
                for _ in 0..mu_pre + mu_post {
                    sweep(solver, tree, state, coarsest, false, false);
                    state = state.stay();
                }
            }
            CoarseSolve::Exact => solve_coarsest(solver, tree, state, coarsest),
        }
    }

    let mut state = SolverState::new(coarsest);
    for level in coarsest + 1..=finest {
        state = state.descend();
        debug_assert_eq!(state.current, level);
        for _ in 0..mu_post {
            sweep(solver, tree, state, coarsest, false, false);
            state = state.stay();
        }
    }
}
