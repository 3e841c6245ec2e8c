//! Additive multigrid and its BPX variant, one cycle per traversal.
//!
//! Corrections travel coarse to fine at first touch, residuals travel fine
//! to coarse at last touch. A coarse correction computed in one traversal
//! is therefore applied to the finer levels in the next one.
//!
//! Galerkin operators are rebuilt in every traversal. While a stencil
//! accumulates, all reads go to a backup taken at first touch.

use crate::discretization::Stencil;
use crate::lattice;
use crate::scalar::Real;
use crate::spacetree::{CellKey, TraversalEvents, Vertex, VertexKey, VertexType};

use super::{point_jacobi, Family, OperatorMode, Solver, Tree, VertexRecord};

struct Sweep<'s, T: Real> {
    solver: &'s mut Solver<T>,
    finest: u32,
    coarsest: u32,
    bpx: bool,
}

impl<T: Real> Sweep<'_, T> {
    fn active(&self, v: &Vertex<VertexRecord<T>>, level: u32) -> bool {
        !v.is_hanging() && !v.is_boundary() && (level >= self.coarsest || v.kind() == VertexType::Unrefined)
    }

    fn rebuilds(&self, v: &Vertex<VertexRecord<T>>, level: u32) -> bool {
        self.solver.stores() && level >= self.coarsest && v.is_refined() && !v.is_boundary()
    }

    fn is_c_point(&self, tree: &Tree<T>, v: VertexKey) -> bool {
        self.bpx && v.level > self.coarsest && Solver::coarse_twin(tree, v).is_some()
    }
}

impl<T: Real> TraversalEvents<VertexRecord<T>> for Sweep<'_, T> {
    fn touch_vertex_first_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.reads += 1;
        self.solver.decompress(tree, v);
        let level = v.level;
        let rec = tree.vertex(v).expect("opened");
        let hanging = rec.is_hanging();
        let interior = !hanging && !rec.is_boundary();
        let rebuilds = self.rebuilds(rec, level);
        let refined = rec.is_refined();
        let mut correction = None;
        if interior && level > self.coarsest {
            let mut c = self.solver.prolong(tree, v, |r| r.d);
            if self.bpx && !self.is_c_point(tree, v) {
                c -= self.solver.prolong(tree, v, |r| r.i);
            }
            correction = Some(c);
        }
        let boxmg = self.solver.cfg.operators == OperatorMode::BoxMg;
        let d = tree.dim();
        let rec = tree.data_mut(v).expect("opened");
        if let Some(c) = correction {
            rec.d += c;
            rec.u += c;
        }
        rec.r = T::zero();
        rec.r_hat = T::zero();
        rec.diag = T::zero();
        if refined && interior && level >= self.coarsest {
            rec.b = T::zero();
        }
        if rebuilds {
            rec.stencil_backup = rec.stencil.replace(Stencil::zeros(d));
            if boxmg {
                rec.prolongation_backup = Some(rec.prolongation.take().unwrap_or_else(|| self.solver.dlinear.clone()));
            }
            rec.dirty = true;
        }
        if !hanging && level > self.coarsest {
            // The surplus needs the coarse values after their own correction,
            // which the coarse vertex received at its first touch.
            let pu = self.solver.prolong(tree, v, |r| r.u);
            let rec = tree.data_mut(v).expect("opened");
            rec.u_hat = rec.u - pu;
        }
    }

    fn create_hanging_vertex(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        self.solver.fill_hanging(tree, v);
    }

    fn descend(&mut self, tree: &mut Tree<T>, c: CellKey) {
        if self.solver.cfg.operators == OperatorMode::BoxMg && c.level >= self.coarsest {
            let singular = self.solver.boxmg_patch(tree, c, |_| true);
            if singular && c.level == self.coarsest {
                self.solver.alert = true;
            }
        }
    }

    fn handle_cell(&mut self, tree: &mut Tree<T>, c: CellKey) {
        let level = c.level;
        let keys: Vec<VertexKey> = lattice::corners(tree.dim()).iter().map(|&e| c.vertex(e)).collect();
        let wants: Vec<bool> = keys.iter().map(|&v| self.active(tree.vertex(v).expect("opened"), level)).collect();
        let galerkin = self.solver.stores() && level > self.coarsest;
        if !wants.iter().any(|&w| w) && !galerkin {
            return;
        }
        let m = self.solver.cell_matrix(tree, c);
        let hat = level > self.coarsest;
        let u: Vec<T> = keys.iter().map(|&v| tree.data(v).expect("opened").u).collect();
        let u_hat: Vec<T> = keys.iter().map(|&v| tree.data(v).expect("opened").u_hat).collect();
        for (a, &v) in keys.iter().enumerate() {
            if !wants[a] {
                continue;
            }
            let rec = tree.data_mut(v).expect("opened");
            for b in 0..keys.len() {
                rec.r -= m.a[a][b] * u[b];
                if hat {
                    rec.r_hat -= m.a[a][b] * u_hat[b];
                }
            }
            rec.diag += m.a[a][a];
        }
        if galerkin {
            let coarsest = self.coarsest;
            self.solver.accumulate_galerkin(tree, c, &m, |r| r.is_refined() && !r.is_boundary() && level > coarsest);
        }
    }

    fn touch_vertex_last_time(&mut self, tree: &mut Tree<T>, v: VertexKey) {
        let level = v.level;
        let rec = tree.vertex(v).expect("closing stored vertex");
        let active = self.active(rec, level);
        let interior = !rec.is_hanging() && !rec.is_boundary();
        let rebuilt = self.rebuilds(rec, level);
        let c_point = self.is_c_point(tree, v);
        let omega = self.solver.omega_at(level, self.finest);
        let twin = Solver::coarse_twin(tree, v);
        let rec = tree.data_mut(v).expect("closing stored vertex");
        if active {
            rec.r += rec.b;
            rec.r_hat += rec.b;
            rec.d = point_jacobi(rec.r, rec.diag, omega);
            if !c_point {
                rec.u += rec.d;
            }
        }
        let (u, d, r_hat) = (rec.u, rec.d, rec.r_hat);
        if c_point {
            tree.data_mut(v).expect("closing").d = T::zero();
        }
        if interior && level > self.coarsest {
            self.solver.restrict(tree, v, r_hat);
        }
        if let Some(twin) = twin {
            let coarse = tree.data_mut(twin).expect("checked");
            if self.bpx {
                if c_point {
                    coarse.i = d;
                }
            } else {
                coarse.u = u;
            }
        }
        let rec = tree.data_mut(v).expect("closing");
        rec.stencil_backup = None;
        rec.prolongation_backup = None;
        if rebuilt && level == self.coarsest && self.solver.dominance_lost(tree, v) {
            self.solver.alert = true;
        }
        self.solver.recompress(tree, v);
    }
}

/// One additive or BPX cycle. A dominance alert on the coarsest level
/// raises it for the following cycles.
pub(super) fn cycle<T: Real>(solver: &mut Solver<T>, tree: &mut Tree<T>) {
    let finest = tree.finest_level();
    let coarsest = tree.coarsest_active_level().min(finest);
    let bpx = solver.cfg.family == Family::Bpx;
    solver.take_alert();
    let mut events = Sweep { solver, finest, coarsest, bpx };
    tree.traverse(finest, &mut events);
    if solver.take_alert() && coarsest < finest {
        log::info!("coarse operators on level {coarsest} failed the dominance check; coarsest level -> {}", coarsest + 1);
        tree.set_coarsest_active_level(coarsest + 1);
    }
}
