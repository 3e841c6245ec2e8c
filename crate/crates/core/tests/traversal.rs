//! Traversal properties: single touch, event order, hanging vertex
//! lifetimes, FAS injection, read counts and stencil splitting.

#[path = "support/traversal_checks.rs"]
mod traversal_checks;

use proptest::prelude::*;
use spacetree_mg::discretization::{cell_matrix_from_stencils, element_matrix, rediscretized_stencil, Problem, Stencil};
use spacetree_mg::lattice;
use spacetree_mg::solvers::{Family, Solver, SolverConfig};
use spacetree_mg::spacetree::CellKey;
use spacetree_mg::Tree64;

#[test]
fn single_touch_and_ordering_on_all_small_trees() {
    let summary = traversal_checks::single_touch_and_ordering().unwrap();
    println!("traversal properties hold on {summary}");
}

#[test]
fn hanging_vertices_do_not_survive_a_sweep() {
    traversal_checks::hanging_vertices_vanish().unwrap();
}

#[test]
fn fas_injection_after_full_cycles() {
    traversal_checks::fas_injection().unwrap();
}

#[test]
fn reads_count_stored_vertices_per_sweep() {
    // A V(2,1) cycle on a regular depth-3 grid works twice on level 3,
    // twice on level 2, three times on level 1 (coarse solve by sweeps),
    // then once on level 2 and once on level 3. The first sweep after
    // moving to a coarser level still descends to the finer one to
    // restrict from it.
    let mut t = Tree64::build(2, 3).unwrap();
    let upto: Vec<u64> = (0..=3).map(|l| (0..=l).map(|k| t.vertex_count(k) as u64).sum()).collect();
    let mut solver = Solver::new(Problem::Sin, SolverConfig::default(), 2);
    solver.setup(&mut t);
    solver.cycle(&mut t);
    let depths = [3, 3, 3, 2, 2, 1, 1, 2, 3];
    let expected: u64 = depths.iter().map(|&l| upto[l]).sum();
    assert_eq!(solver.unknown_reads(), expected);

    // An additive cycle is a single sweep over everything.
    let mut t = Tree64::build(2, 3).unwrap();
    let mut solver = Solver::new(Problem::Sin, SolverConfig { family: Family::Additive, ..Default::default() }, 2);
    solver.setup(&mut t);
    solver.cycle(&mut t);
    assert_eq!(solver.unknown_reads(), t.total_vertex_count() as u64);
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn split_stencil_partitions(values in prop::collection::vec(-10.0f64..10.0, 9)) {
        prop_assert_eq!(traversal_checks::check_split(&Stencil::from_values(2, values)), Ok(()));
    }

    #[test]
    fn split_stencil_partitions_3d(values in prop::collection::vec(-10.0f64..10.0, 27)) {
        prop_assert_eq!(traversal_checks::check_split(&Stencil::from_values(3, values)), Ok(()));
    }
}

#[test]
fn split_stencil_partitions_on_seeded_samples() {
    traversal_checks::split_partition(2000).unwrap();
}

#[test]
fn split_of_constant_coefficient_stencils_recovers_the_element_matrix() {
    for d in [2, 3] {
        let c = CellKey::new(2, [4; 3]);
        let stencils: Vec<Stencil<f64>> = lattice::corners(d).iter().map(|&e| rediscretized_stencil(&Problem::Sin, c.vertex(e), d)).collect();
        let refs: Vec<&Stencil<f64>> = stencils.iter().collect();
        let m = cell_matrix_from_stencils(&refs, d);
        let e = element_matrix::<f64>(&Problem::Sin, c, d);
        let n = 1 << d;
        for a in 0..n {
            for b in 0..n {
                assert!((m.a[a][b] - e.a[a][b]).abs() < 1e-12, "d={d} ({a},{b}): {} vs {}", m.a[a][b], e.a[a][b]);
            }
        }
    }
}
