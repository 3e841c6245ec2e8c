//! Coarse operators against dense reference computations.

use spacetree_mg::discretization::{element_matrix, Problem, Stencil};
use spacetree_mg::lattice;
use spacetree_mg::operators::{boxmg_prolongation, solve_dense, PatchStencils};
use spacetree_mg::solvers::{OperatorMode, Solver, SolverConfig};
use spacetree_mg::spacetree::{CellKey, VertexKey};
use spacetree_mg::Tree64;

const FINE: usize = 10;
const COARSE: usize = 4;

fn fine_id(i: usize, j: usize) -> usize {
    i + FINE * j
}

/// Assembled level-2 matrix of the unit square, 100 x 100.
fn fine_matrix(p: &Problem) -> Vec<f64> {
    let mut a = vec![0.0; FINE * FINE * FINE * FINE];
    let corners = lattice::corners(2);
    for cj in 0..9 {
        for ci in 0..9 {
            let m = element_matrix::<f64>(p, CellKey::new(2, [ci, cj, 0]), 2);
            for (x, ex) in corners.iter().enumerate() {
                let row = fine_id((ci + ex[0]) as usize, (cj + ex[1]) as usize);
                for (y, ey) in corners.iter().enumerate() {
                    let col = fine_id((ci + ey[0]) as usize, (cj + ey[1]) as usize);
                    a[row * FINE * FINE + col] += m.a[x][y];
                }
            }
        }
    }
    a
}

/// Bilinear weight of coarse vertex `c` at fine vertex `f`.
fn hat(f: [usize; 2], c: [usize; 2]) -> f64 {
    (0..2).map(|k| (1.0 - (f[k] as f64 - 3.0 * c[k] as f64).abs() / 3.0).max(0.0)).product()
}

/// Stored level-1 Galerkin stencils of a depth-2 grid against `P^T A P`
/// with `A` assembled from level-2 element matrices, restricted to the
/// interior fine rows.
pub fn galerkin_matches_dense_rap(p: Problem) -> Result<String, String> {
    let a = fine_matrix(&p);
    let n = FINE * FINE;
    let fine: Vec<[usize; 2]> = (0..n).map(|k| [k % FINE, k / FINE]).collect();
    let interior = |f: [usize; 2]| f.iter().all(|&x| x > 0 && x < FINE - 1);

    let mut t = Tree64::build(2, 2).unwrap();
    let cfg = SolverConfig { operators: OperatorMode::Galerkin, ..Default::default() };
    let mut solver = Solver::new(p, cfg, 2);
    solver.setup(&mut t);
    solver.cycle(&mut t);

    let mut worst = 0.0f64;
    for cj in 1..COARSE - 1 {
        for ci in 1..COARSE - 1 {
            let v = VertexKey::new(1, [ci as i32, cj as i32, 0]);
            let stored = t.data(v).unwrap().stencil.clone().ok_or(format!("{v:?} holds no stencil"))?;
            for &o in lattice::stencil_offsets(2) {
                let c2 = [(ci as i32 + o[0]) as usize, (cj as i32 + o[1]) as usize];
                let mut want = 0.0;
                for (row, &fr) in fine.iter().enumerate() {
                    let r = hat(fr, [ci, cj]);
                    if r == 0.0 || !interior(fr) {
                        continue;
                    }
                    for (col, &fc) in fine.iter().enumerate() {
                        want += r * a[row * n + col] * hat(fc, c2);
                    }
                }
                let err = (stored.at(o) - want).abs();
                if err > 1e-12 {
                    return Err(format!("{p} ({ci},{cj}) {o:?}: {} vs {want}", stored.at(o)));
                }
                worst = worst.max(err);
            }
        }
    }
    Ok(format!("{p}: 36 entries, max error {worst:.1e}"))
}

fn s1(v: [f64; 3]) -> Stencil<f64> {
    Stencil::from_values(1, v.to_vec())
}

fn close(got: &[f64], want: &[f64], tol: f64) -> Result<(), String> {
    if got.len() == want.len() && got.iter().zip(want).all(|(g, w)| (g - w).abs() <= tol) {
        Ok(())
    } else {
        Err(format!("{got:?} vs {want:?}"))
    }
}

/// A uniform 1D Laplacian patch gives the weights (1, 2/3, 1/3) at both
/// corners, as does the hand-written 3 x 3 system.
pub fn boxmg_laplacian_patch() -> Result<String, String> {
    let want = [1.0, 2.0 / 3.0, 1.0 / 3.0];
    for p in boxmg_prolongation(&PatchStencils::uniform(&s1([-1.0, 2.0, -1.0]))) {
        close(&p.map_err(|e| e.to_string())?, &want, 1e-14)?;
    }
    let c: [f64; 9] = [1.0, 0.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 2.0];
    close(&solve_dense(&c, &[1.0, 0.0, 0.0]).map_err(|e| e.to_string())?, &want, 1e-15)?;
    Ok("p = (1, 2/3, 1/3)".into())
}

/// Fine cells with conductivities e1, e2, e3 between the two coarse
/// vertices. Flux continuity puts the left weight at x_k at
/// `1 - sum_{j<=k} 1/e_j / sum_j 1/e_j`, and the right one mirrored.
pub fn boxmg_harmonic_patch() -> Result<String, String> {
    let cases = [[1.0, 1.0, 1.0], [1.0, 10.0, 100.0], [5.0, 0.1, 2.0], [1e-3, 1.0, 1e3]];
    for e in cases {
        let stencil = |l: f64, r: f64| s1([-l, l + r, -r]);
        let ps = PatchStencils::new(1, vec![stencil(1.0, e[0]), stencil(e[0], e[1]), stencil(e[1], e[2]), stencil(e[2], 1.0)]);
        let total: f64 = e.iter().map(|x| 1.0 / x).sum();
        let left = [1.0, 1.0 - 1.0 / e[0] / total, 1.0 - (1.0 / e[0] + 1.0 / e[1]) / total];
        let right = [1.0, 1.0 - 1.0 / e[2] / total, 1.0 - (1.0 / e[2] + 1.0 / e[1]) / total];
        let weights = boxmg_prolongation(&ps);
        for (p, want) in weights.into_iter().zip([left, right]) {
            close(&p.map_err(|e| e.to_string())?, &want, 1e-13).map_err(|m| format!("{e:?}: {m}"))?;
        }
    }
    Ok(format!("{} coefficient patterns", cases.len()))
}
