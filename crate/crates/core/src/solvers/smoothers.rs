//! Smoother kernels and the coarsest-level controller.

use crate::lattice;
use crate::scalar::Real;
use crate::spacetree::{CellKey, VertexKey};

use super::{Solver, Tree};

/// Damped point Jacobi update for an accumulated residual and diagonal.
#[inline]
pub fn point_jacobi<T: Real>(r: T, diag: T, omega: T) -> T {
    if diag == T::zero() {
        T::zero()
    } else {
        omega * r / diag
    }
}

/// Gauss-Seidel passes over the vertices strictly inside refined cell `c`,
/// using the level operator rows. Changes of `u` are mirrored into `d`.
pub fn block_smooth<T: Real>(solver: &Solver<T>, tree: &mut Tree<T>, c: CellKey, passes: usize) {
    let d = tree.dim();
    let base = lattice::scale(c.index, 3);
    let interior: Vec<VertexKey> = lattice::patch_offsets(d)
        .iter()
        .filter(|q| q.iter().take(d).all(|&k| k == 1 || k == 2))
        .map(|&q| VertexKey::new(c.level + 1, lattice::add(base, q)))
        .collect();
    let rows: Vec<_> = interior.iter().map(|&v| solver.operator_row(tree, v)).collect();
    for _ in 0..passes {
        for (&v, s) in interior.iter().zip(&rows) {
            let mut r = tree.data(v).expect("interior vertex opened").b;
            for (k, &o) in lattice::stencil_offsets(d).iter().enumerate() {
                if s.values[k] != T::zero() {
                    let n = tree.data(VertexKey::new(v.level, lattice::add(v.index, o))).expect("patch vertex opened");
                    r -= s.values[k] * n.u;
                }
            }
            let du = point_jacobi(r, s.centre(), T::one());
            let rec = tree.data_mut(v).expect("checked");
            rec.u += du;
            rec.d += du;
        }
    }
}

/// History the coarsest-level controller keeps between cycles.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CoarseMonitor {
    /// Number of times the level has been raised.
    pub raises: usize,
}

/// Raises the coarsest active level by one when a cycle reduced the
/// residual by less than `rho`. Cycles that changed the grid are skipped
/// since their residuals are not comparable.
pub fn adapt_coarsest_level(
    monitor: &mut CoarseMonitor,
    coarsest: u32,
    finest: u32,
    grid_changed: bool,
    previous: f64,
    current: f64,
    rho: f64,
) -> u32 {
    if grid_changed || coarsest >= finest || previous == 0.0 {
        return coarsest;
    }
    if current / previous > rho || !current.is_finite() {
        monitor.raises += 1;
        log::info!("residual ratio {:.4} above {rho}; coarsest level {} -> {}", current / previous, coarsest, coarsest + 1);
        coarsest + 1
    } else {
        coarsest
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_guards_empty_rows() {
        assert_eq!(point_jacobi(1.0f64, 0.0, 0.8), 0.0);
        assert!((point_jacobi(2.0f64, 4.0, 0.8) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn controller_raises_on_stagnation_only() {
        let mut m = CoarseMonitor::default();
        assert_eq!(adapt_coarsest_level(&mut m, 1, 4, false, 1.0, 0.5, 0.999), 1);
        assert_eq!(adapt_coarsest_level(&mut m, 1, 4, false, 1.0, 0.9995, 0.999), 2);
        assert_eq!(adapt_coarsest_level(&mut m, 2, 4, true, 1.0, 2.0, 0.999), 2);
        assert_eq!(adapt_coarsest_level(&mut m, 4, 4, false, 1.0, 2.0, 0.999), 4);
        assert_eq!(m.raises, 1);
    }
}
