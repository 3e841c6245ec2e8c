//! Traversal properties on a family of small trees: every refinement
//! pattern of the level-1 cells in 2D, each also with a deterministic
//! selection of level-2 cells refined, and every single and paired level-1
//! refinement in 3D.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacetree_mg::discretization::{split_stencil, Problem, Stencil};
use spacetree_mg::lattice;
use spacetree_mg::solvers::{Family, Solver, SolverConfig};
use spacetree_mg::spacetree::{CellKey, Spacetree, TraversalEvents, VertexKey, VertexType};
use spacetree_mg::Tree64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Event {
    First(VertexKey),
    Last(VertexKey),
    Create(VertexKey),
    Destroy(VertexKey),
    Descend(CellKey),
    Cell(CellKey),
}

#[derive(Default)]
struct Recorder(Vec<Event>);

impl<V> TraversalEvents<V> for Recorder {
    fn touch_vertex_first_time(&mut self, _: &mut Spacetree<V>, v: VertexKey) {
        self.0.push(Event::First(v));
    }
    fn touch_vertex_last_time(&mut self, _: &mut Spacetree<V>, v: VertexKey) {
        self.0.push(Event::Last(v));
    }
    fn create_hanging_vertex(&mut self, _: &mut Spacetree<V>, v: VertexKey) {
        self.0.push(Event::Create(v));
    }
    fn destroy_hanging_vertex(&mut self, _: &mut Spacetree<V>, v: VertexKey) {
        self.0.push(Event::Destroy(v));
    }
    fn descend(&mut self, _: &mut Spacetree<V>, c: CellKey) {
        self.0.push(Event::Descend(c));
    }
    fn handle_cell(&mut self, _: &mut Spacetree<V>, c: CellKey) {
        self.0.push(Event::Cell(c));
    }
}

type Tree = Spacetree<u8>;

/// Whether level-2 cell `c` is refined in the depth-3 variant of pattern
/// `mask`. The rule is arbitrary but spreads refinement over the tree.
fn picks_level_two(mask: u32, c: CellKey) -> bool {
    let [x, y, _] = c.index;
    (x * 7 + y * 3 + mask as i32) % 5 == 0
}

fn family_2d() -> Vec<Tree> {
    let mut out = Vec::new();
    for mask in 0..1u32 << 9 {
        for deep in [false, true] {
            let mut t = Tree::build(2, 1).unwrap();
            for (k, c) in t.cell_keys(1).into_iter().enumerate() {
                if mask >> k & 1 == 1 {
                    t.refine_cell(c);
                }
            }
            if deep {
                if t.finest_level() < 2 {
                    continue;
                }
                for c in t.cell_keys(2) {
                    if picks_level_two(mask, c) {
                        t.refine_cell(c);
                    }
                }
            }
            out.push(t);
        }
    }
    out
}

fn family_3d() -> Vec<Tree> {
    let mut out = Vec::new();
    let cells = Tree::build(3, 1).unwrap().cell_keys(1);
    for a in 0..cells.len() {
        for b in a..cells.len() {
            let mut t = Tree::build(3, 1).unwrap();
            t.refine_cell(cells[a]);
            if b != a {
                t.refine_cell(cells[b]);
            }
            out.push(t);
        }
    }
    out
}

fn record(t: &mut Tree, max_level: u32) -> Vec<Event> {
    let mut r = Recorder::default();
    t.traverse(max_level, &mut r);
    r.0
}

/// Cells the sweep visits: everything up to `max_level`.
fn visited_cells(t: &Tree, max_level: u32) -> Vec<CellKey> {
    (0..=max_level.min(t.finest_level())).flat_map(|l| t.cell_keys(l)).collect()
}

fn check_sweep(t: &mut Tree, max_level: u32) -> Result<(), String> {
    let d = t.dim();
    let stored: Vec<VertexKey> = t
        .all_vertex_keys()
        .into_iter()
        .filter(|&v| v.level <= max_level && !t.vertex(v).unwrap().is_hanging())
        .collect();
    let cells = visited_cells(t, max_level);
    let events = record(t, max_level);

    let mut first = HashMap::new();
    let mut last = HashMap::new();
    let mut created = HashMap::new();
    let mut destroyed = HashMap::new();
    let mut handled = HashMap::new();
    let mut descended = HashMap::new();
    for (k, e) in events.iter().enumerate() {
        let slot = match *e {
            Event::First(v) => first.insert(v, k).map(|_| format!("{v:?} touched first twice")),
            Event::Last(v) => last.insert(v, k).map(|_| format!("{v:?} touched last twice")),
            Event::Create(v) => created.insert(v, k).map(|_| format!("{v:?} created twice")),
            Event::Destroy(v) => destroyed.insert(v, k).map(|_| format!("{v:?} destroyed twice")),
            Event::Descend(c) => descended.insert(c, k).map(|_| format!("{c:?} descended twice")),
            Event::Cell(c) => handled.insert(c, k).map(|_| format!("{c:?} handled twice")),
        };
        if let Some(err) = slot {
            return Err(err);
        }
    }

    // Single touch: every stored vertex exactly once each way, hanging
    // vertices never, and the reads equal the stored count.
    if first.len() != stored.len() || last.len() != stored.len() {
        return Err(format!("{} first and {} last touches for {} stored vertices", first.len(), last.len(), stored.len()));
    }
    for v in &stored {
        if !first.contains_key(v) || !last.contains_key(v) {
            return Err(format!("{v:?} missed"));
        }
    }
    if created.len() != destroyed.len() || created.keys().any(|v| first.contains_key(v)) {
        return Err("hanging vertices unbalanced or touched".into());
    }
    if handled.len() != cells.len() || cells.iter().any(|c| !handled.contains_key(c)) {
        return Err(format!("{} cells handled, {} expected", handled.len(), cells.len()));
    }

    let opened = |v: VertexKey| first.get(&v).or(created.get(&v)).copied();
    let closed = |v: VertexKey| last.get(&v).or(destroyed.get(&v)).copied();
    for &c in &cells {
        let at = handled[&c];
        for &e in lattice::corners(d) {
            let v = c.vertex(e);
            let (o, cl) = (opened(v).ok_or(format!("{v:?} never opened"))?, closed(v).ok_or(format!("{v:?} never closed"))?);
            if !(o < at && at < cl) {
                return Err(format!("{c:?} handled outside the lifetime of {v:?}"));
            }
        }
        let refined = t.is_refined(c) == Some(true) && c.level < max_level;
        if refined {
            let down = *descended.get(&c).ok_or(format!("refined {c:?} not descended"))?;
            for &ce in lattice::child_offsets(d) {
                let child = c.child(ce);
                if handled[&child] > at {
                    return Err(format!("{c:?} handled before child {child:?}"));
                }
                if handled[&child] < down {
                    return Err(format!("child {child:?} handled before descend of {c:?}"));
                }
                for &e in lattice::corners(d) {
                    if opened(child.vertex(e)).unwrap() > down {
                        return Err(format!("descend of {c:?} before its child vertices were loaded"));
                    }
                }
            }
        } else if descended.contains_key(&c) {
            return Err(format!("{c:?} descended without visiting children"));
        }
    }
    // Last touch only after every adjacent visited cell.
    for v in &stored {
        let at = last[v];
        for c in t.adjacent_cell_positions(*v) {
            if let Some(&h) = handled.get(&c) {
                if h > at {
                    return Err(format!("{v:?} closed before adjacent {c:?}"));
                }
            }
        }
    }
    Ok(())
}

/// Every sweep depth of every tree in the family.
pub fn single_touch_and_ordering() -> Result<String, String> {
    let mut checked = 0usize;
    for mut t in family_2d().into_iter().chain(family_3d()) {
        for max_level in 1..=t.finest_level() {
            check_sweep(&mut t, max_level).map_err(|e| format!("d={} finest={} max_level={max_level}: {e}", t.dim(), t.finest_level()))?;
            checked += 1;
        }
    }
    Ok(format!("{checked} sweeps"))
}

/// After a complete cycle every refined vertex holds the value of its
/// fine twin. Additive cycles smooth the coarse levels after the injection,
/// so there the coarse value minus its own update must match.
fn check_injection(family: Family, t: &mut Tree64) -> Result<(), String> {
    let cfg = SolverConfig { family, ..Default::default() };
    let mut solver = Solver::new(Problem::Sin, cfg, t.dim());
    solver.setup(t);
    for _ in 0..2 {
        solver.cycle(t);
    }
    for v in t.all_vertex_keys() {
        let rec = t.vertex(v).unwrap();
        if rec.kind() != VertexType::Refined {
            continue;
        }
        let fine = t.vertex(v.fine_twin()).ok_or(format!("refined {v:?} has no fine twin"))?;
        if fine.is_hanging() {
            return Err(format!("fine twin of {v:?} is hanging"));
        }
        let injected = if family == Family::Multiplicative { rec.data.u } else { rec.data.u - rec.data.d };
        let tol = if family == Family::Multiplicative { 0.0 } else { 1e-14 * (1.0 + fine.data.u.abs()) };
        if (injected - fine.data.u).abs() > tol {
            return Err(format!("{family} {v:?}: {injected} vs {}", fine.data.u));
        }
    }
    Ok(())
}

/// Injection consistency on every 23rd level-1 pattern with its level-2
/// variant, for both FAS families.
pub fn fas_injection() -> Result<String, String> {
    let mut trees = 0;
    for mask in (0..1u32 << 9).step_by(23) {
        for family in [Family::Multiplicative, Family::Additive] {
            let mut t = Tree64::build(2, 1).unwrap();
            for (k, c) in t.cell_keys(1).into_iter().enumerate() {
                if mask >> k & 1 == 1 {
                    t.refine_cell(c);
                }
            }
            if t.finest_level() >= 2 {
                for c in t.cell_keys(2) {
                    if picks_level_two(mask, c) {
                        t.refine_cell(c);
                    }
                }
            }
            check_injection(family, &mut t)?;
            trees += 1;
        }
    }
    Ok(format!("{trees} trees"))
}

/// The parts of a split stencil sum to the stencil, and each part is
/// supported on its own cell only.
pub fn check_split(s: &Stencil<f64>) -> Result<(), String> {
    let d = s.d;
    let parts = split_stencil(s);
    if parts.len() != 1 << d {
        return Err(format!("{} parts in {d}D", parts.len()));
    }
    for (k, &v) in s.values.iter().enumerate() {
        let sum: f64 = parts.iter().map(|p| p.values[k]).sum();
        if (sum - v).abs() > 1e-12 * (1.0 + v.abs()) {
            return Err(format!("entry {k}: parts sum to {sum}, stencil holds {v}"));
        }
    }
    for (part, &e) in parts.iter().zip(lattice::corners(d)) {
        for (k, &o) in lattice::stencil_offsets(d).iter().enumerate() {
            let inside = (0..d).all(|i| o[i] == e[i] - 1 || o[i] == e[i]);
            if !inside && part.values[k] != 0.0 {
                return Err(format!("part {e:?} reaches offset {o:?}"));
            }
        }
    }
    Ok(())
}

/// [`check_split`] on random stencils in 2D and 3D.
pub fn split_partition(samples: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in 0..samples {
        let d = 2 + k % 2;
        let values = (0..lattice::ipow(3, d)).map(|_| rng.gen_range(-10.0..10.0)).collect();
        check_split(&Stencil::from_values(d, values))?;
    }
    Ok(format!("{samples} stencils"))
}

/// A full sweep leaves no hanging vertex behind and no stored vertex is
/// lost.
pub fn hanging_vertices_vanish() -> Result<String, String> {
    let mut trees = 0;
    for mut t in family_2d().into_iter().step_by(37) {
        let before = t.all_vertex_keys().len();
        let finest = t.finest_level();
        record(&mut t, finest);
        if t.all_vertex_keys().len() != before {
            return Err(format!("{} vertices before the sweep, {} after", before, t.all_vertex_keys().len()));
        }
        if t.all_vertex_keys().iter().any(|&v| t.vertex(v).unwrap().kind() == VertexType::Hanging) {
            return Err("a hanging vertex survived".into());
        }
        trees += 1;
    }
    Ok(format!("{trees} trees"))
}
