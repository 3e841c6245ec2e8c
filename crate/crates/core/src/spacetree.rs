//! Tri-section spacetree over the unit cube with per-level vertex maps and
//! the multiscale element-wise traversal.
//!
//! Cells live on levels `0..=finest_level`; the root is the single level-0
//! cell. A cell on level `l` with index `i` covers `[i, i+1) / 3^l` per axis
//! and has children `3i + {0,1,2}^d`. Vertices carry their own level, so the
//! same point in space is represented once per level on which it exists.
//!
//! Only non-hanging vertices are stored between sweeps. Hanging vertices are
//! materialised by the traversal when first needed and dropped after their
//! last adjacent cell has been handled.

use rustc_hash::FxHashMap;

use crate::lattice::{self, Idx};

/// A cell of the tree: level plus lattice index in `[0, 3^level)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellKey {
    pub level: u32,
    pub index: Idx,
}

impl CellKey {
    /// The level-0 cell covering the whole domain.
    pub const ROOT: CellKey = CellKey { level: 0, index: [0; 3] };

    pub fn new(level: u32, index: Idx) -> Self {
        Self { level, index }
    }

    pub fn parent(&self) -> Option<CellKey> {
        (self.level > 0).then(|| CellKey::new(self.level - 1, lattice::div_floor(self.index, 3)))
    }

    /// Child at offset `e` in `{0,1,2}^d`.
    pub fn child(&self, e: Idx) -> CellKey {
        CellKey::new(self.level + 1, lattice::add(lattice::scale(self.index, 3), e))
    }

    /// Vertex at corner `e` in `{0,1}^d`.
    pub fn vertex(&self, e: Idx) -> VertexKey {
        VertexKey::new(self.level, lattice::add(self.index, e))
    }

    /// Centre of the cell in physical coordinates.
    pub fn midpoint(&self, d: usize) -> [f64; 3] {
        let h = 1.0 / lattice::pow3(self.level) as f64;
        let mut x = [0.0; 3];
        for (k, xk) in x.iter_mut().enumerate().take(d) {
            *xk = (self.index[k] as f64 + 0.5) * h;
        }
        x
    }

    /// Edge length `3^-level`.
    pub fn width(&self) -> f64 {
        1.0 / lattice::pow3(self.level) as f64
    }
}

/// A vertex: level plus lattice index in `[0, 3^level]^d`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VertexKey {
    pub level: u32,
    pub index: Idx,
}

impl VertexKey {
    pub fn new(level: u32, index: Idx) -> Self {
        Self { level, index }
    }

    /// Position in physical coordinates.
    pub fn position(&self, d: usize) -> [f64; 3] {
        let h = 1.0 / lattice::pow3(self.level) as f64;
        let mut x = [0.0; 3];
        for (k, xk) in x.iter_mut().enumerate().take(d) {
            *xk = self.index[k] as f64 * h;
        }
        x
    }

    /// The vertex one level coarser at the same position, if the position
    /// lies on the coarser lattice.
    pub fn coarse_twin(&self) -> Option<VertexKey> {
        if self.level == 0 || self.index.iter().any(|&i| i % 3 != 0) {
            return None;
        }
        Some(VertexKey::new(self.level - 1, [self.index[0] / 3, self.index[1] / 3, self.index[2] / 3]))
    }

    /// The vertex one level finer at the same position.
    pub fn fine_twin(&self) -> VertexKey {
        VertexKey::new(self.level + 1, lattice::scale(self.index, 3))
    }

    /// A coarser cell whose closure contains this vertex: the parent of the
    /// adjacent cell with the smallest index, clamped into the domain.
    pub fn parent_cell(&self, d: usize) -> Option<CellKey> {
        if self.level == 0 {
            return None;
        }
        let n = lattice::pow3(self.level - 1);
        let mut idx = [0; 3];
        for k in 0..d {
            idx[k] = (self.index[k] / 3).min(n - 1);
        }
        Some(CellKey::new(self.level - 1, idx))
    }
}

/// Classification of a vertex relative to the cascade of grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VertexType {
    /// Fewer than `2^d` adjacent cells exist on the vertex's level.
    Hanging,
    /// A non-hanging vertex exists at the same position one level finer.
    Refined,
    /// Neither hanging nor refined.
    Unrefined,
}

/// Stored vertex: user payload plus classification and sweep bookkeeping.
#[derive(Clone, Debug)]
pub struct Vertex<V> {
    pub data: V,
    kind: VertexType,
    boundary: bool,
    epoch: u32,
    pending: u8,
}

impl<V> Vertex<V> {
    pub fn kind(&self) -> VertexType {
        self.kind
    }

    pub fn is_refined(&self) -> bool {
        self.kind == VertexType::Refined
    }

    pub fn is_hanging(&self) -> bool {
        self.kind == VertexType::Hanging
    }

    /// True on the boundary of the unit cube.
    pub fn is_boundary(&self) -> bool {
        self.boundary
    }
}

impl<V: PartialEq> PartialEq for Vertex<V> {
    fn eq(&self, other: &Self) -> bool {
        self.data == other.data && self.kind == other.kind && self.boundary == other.boundary
    }
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TreeError {
    #[error("dimension {0} not supported, expected 2 or 3")]
    UnsupportedDimension(usize),
    #[error("initial depth must be at least 1")]
    InvalidDepth,
}

/// Callbacks fired by [`Spacetree::traverse`].
///
/// Every callback receives the tree itself, so handlers read and write
/// vertex payloads through the keys they are given. Hanging vertices do not
/// receive touch events; they get `create_hanging_vertex` when materialised
/// and `destroy_hanging_vertex` before they are dropped.
pub trait TraversalEvents<V> {
    fn touch_vertex_first_time(&mut self, _tree: &mut Spacetree<V>, _v: VertexKey) {}
    fn touch_vertex_last_time(&mut self, _tree: &mut Spacetree<V>, _v: VertexKey) {}
    fn handle_cell(&mut self, _tree: &mut Spacetree<V>, _c: CellKey) {}
    /// Fired for a refined cell once its children and all their vertices are
    /// loaded, before any child is handled.
    fn descend(&mut self, _tree: &mut Spacetree<V>, _c: CellKey) {}
    fn create_hanging_vertex(&mut self, _tree: &mut Spacetree<V>, _v: VertexKey) {}
    fn destroy_hanging_vertex(&mut self, _tree: &mut Spacetree<V>, _v: VertexKey) {}
}

/// The spacetree. `V` is the per-vertex payload.
#[derive(Clone, Debug)]
pub struct Spacetree<V> {
    d: usize,
    /// Per level: cell index to refinement flag.
    cells: Vec<FxHashMap<Idx, bool>>,
    /// Per level: vertex index to record.
    vertices: Vec<FxHashMap<Idx, Vertex<V>>>,
    coarsest_active: u32,
    epoch: u32,
    traversing: bool,
}

impl<V: PartialEq> PartialEq for Spacetree<V> {
    fn eq(&self, other: &Self) -> bool {
        self.d == other.d
            && self.cells == other.cells
            && self.vertices == other.vertices
            && self.coarsest_active == other.coarsest_active
    }
}

impl<V: Default> Spacetree<V> {
    /// A tree holding only the root cell and its `2^d` vertices.
    pub fn new(d: usize) -> Result<Self, TreeError> {
        if !(2..=3).contains(&d) {
            return Err(TreeError::UnsupportedDimension(d));
        }
        Ok(Self::with_root(d))
    }

    /// Like [`Spacetree::new`] but also admits `d = 1`, which the operator
    /// oracles use for line problems.
    pub fn new_any_dim(d: usize) -> Result<Self, TreeError> {
        if !(1..=3).contains(&d) {
            return Err(TreeError::UnsupportedDimension(d));
        }
        Ok(Self::with_root(d))
    }

    fn with_root(d: usize) -> Self {
        let mut cells = FxHashMap::default();
        cells.insert([0; 3], false);
        let mut tree = Self {
            d,
            cells: vec![cells],
            vertices: vec![FxHashMap::default()],
            coarsest_active: 1,
            epoch: 0,
            traversing: false,
        };
        let mut created = Vec::new();
        for &e in lattice::corners(d) {
            tree.update_vertex(0, e, &mut created);
        }
        tree
    }

    /// Uniformly refined tree of the given depth.
    pub fn build(d: usize, depth: u32) -> Result<Self, TreeError> {
        let mut tree = Self::new(d)?;
        if depth < 1 {
            return Err(TreeError::InvalidDepth);
        }
        tree.refine_uniformly(depth);
        Ok(tree)
    }

    /// Refines every leaf until all leaves sit on `depth`.
    pub fn refine_uniformly(&mut self, depth: u32) {
        for level in 0..depth {
            for c in self.cell_keys(level) {
                if self.is_refined(c) == Some(false) {
                    self.refine_cell(c);
                }
            }
        }
    }

    /// Refines `c`, returning the non-hanging vertices that were created.
    ///
    /// Refining an already refined cell does nothing.
    ///
    /// # Panics
    /// If `c` does not exist.
    pub fn refine_cell(&mut self, c: CellKey) -> Vec<VertexKey> {
        let level = c.level as usize;
        let flag = self
            .cells
            .get_mut(level)
            .and_then(|m| m.get_mut(&c.index))
            .unwrap_or_else(|| panic!("refine_cell: {c:?} does not exist"));
        if *flag {
            return Vec::new();
        }
        *flag = true;
        if self.cells.len() <= level + 1 {
            self.cells.push(FxHashMap::default());
            self.vertices.push(FxHashMap::default());
        }
        for &e in lattice::child_offsets(self.d) {
            self.cells[level + 1].insert(c.child(e).index, false);
        }
        let mut created = Vec::new();
        let base = lattice::scale(c.index, 3);
        for &e in lattice::patch_offsets(self.d) {
            self.update_vertex(c.level + 1, lattice::add(base, e), &mut created);
        }
        for &e in lattice::corners(self.d) {
            self.refresh_kind(c.level, lattice::add(c.index, e));
        }
        created
    }

    /// Removes all descendants of `c`. A no-op on unrefined cells.
    pub fn erase_subtree(&mut self, c: CellKey) {
        if self.is_refined(c) != Some(true) {
            return;
        }
        let mut touched = Vec::new();
        for &e in lattice::child_offsets(self.d) {
            self.remove_cell_recursive(c.child(e), &mut touched);
        }
        *self.cells[c.level as usize].get_mut(&c.index).expect("cell exists") = false;
        let mut created = Vec::new();
        touched.sort();
        touched.dedup();
        for v in touched {
            self.update_vertex(v.level, v.index, &mut created);
        }
        debug_assert!(created.is_empty());
        for &e in lattice::corners(self.d) {
            self.refresh_kind(c.level, lattice::add(c.index, e));
        }
        while self.cells.len() > 1 && self.cells.last().is_some_and(|m| m.is_empty()) {
            self.cells.pop();
            self.vertices.pop();
        }
    }

    fn remove_cell_recursive(&mut self, c: CellKey, touched: &mut Vec<VertexKey>) {
        let refined = self.cells[c.level as usize].remove(&c.index).expect("descendant exists");
        if refined {
            for &e in lattice::child_offsets(self.d) {
                self.remove_cell_recursive(c.child(e), touched);
            }
        }
        for &e in lattice::corners(self.d) {
            touched.push(c.vertex(e));
        }
    }

    /// Creates, removes or reclassifies the stored record at `(level, q)`.
    fn update_vertex(&mut self, level: u32, q: Idx, created: &mut Vec<VertexKey>) {
        let non_hanging = self.is_non_hanging(level, q);
        let kind = self.kind_of(level, q);
        let boundary = self.on_boundary(level, q);
        let map = &mut self.vertices[level as usize];
        if non_hanging {
            match map.get_mut(&q) {
                Some(v) => v.kind = kind,
                None => {
                    map.insert(q, Vertex { data: V::default(), kind, boundary, epoch: 0, pending: 0 });
                    created.push(VertexKey::new(level, q));
                }
            }
        } else {
            map.remove(&q);
        }
    }
}

impl<V> Spacetree<V> {
    pub fn dim(&self) -> usize {
        self.d
    }

    /// Deepest level holding at least one cell.
    pub fn finest_level(&self) -> u32 {
        (self.cells.len() - 1) as u32
    }

    /// Coarsest level the solvers smooth on. Never below 1.
    pub fn coarsest_active_level(&self) -> u32 {
        self.coarsest_active
    }

    /// Sets the coarsest active level, clamped to `[1, max(1, finest)]`.
    pub fn set_coarsest_active_level(&mut self, level: u32) {
        self.coarsest_active = level.clamp(1, self.finest_level().max(1));
    }

    pub fn cell_count(&self, level: u32) -> usize {
        self.cells.get(level as usize).map_or(0, |m| m.len())
    }

    pub fn total_cell_count(&self) -> usize {
        self.cells.iter().map(|m| m.len()).sum()
    }

    /// Number of stored non-hanging vertices on `level`.
    pub fn vertex_count(&self, level: u32) -> usize {
        self.vertices
            .get(level as usize)
            .map_or(0, |m| m.values().filter(|v| !v.is_hanging()).count())
    }

    pub fn total_vertex_count(&self) -> usize {
        (0..=self.finest_level()).map(|l| self.vertex_count(l)).sum()
    }

    /// `Some(refined)` if the cell exists.
    pub fn is_refined(&self, c: CellKey) -> Option<bool> {
        self.cells.get(c.level as usize)?.get(&c.index).copied()
    }

    pub fn contains_cell(&self, c: CellKey) -> bool {
        self.is_refined(c).is_some()
    }

    /// Cells of a level in lexicographic order of their index.
    pub fn cell_keys(&self, level: u32) -> Vec<CellKey> {
        let mut keys: Vec<CellKey> = self
            .cells
            .get(level as usize)
            .map(|m| m.keys().map(|&i| CellKey::new(level, i)).collect())
            .unwrap_or_default();
        keys.sort_by_key(|c| (c.index[2], c.index[1], c.index[0]));
        keys
    }

    /// Unrefined cells on all levels.
    pub fn leaf_keys(&self) -> Vec<CellKey> {
        (0..=self.finest_level())
            .flat_map(|l| self.cell_keys(l))
            .filter(|&c| self.is_refined(c) == Some(false))
            .collect()
    }

    /// Stored non-hanging vertices of a level in lexicographic order.
    pub fn vertex_keys(&self, level: u32) -> Vec<VertexKey> {
        let mut keys: Vec<VertexKey> = self
            .vertices
            .get(level as usize)
            .map(|m| {
                m.iter()
                    .filter(|(_, v)| !v.is_hanging())
                    .map(|(&i, _)| VertexKey::new(level, i))
                    .collect()
            })
            .unwrap_or_default();
        keys.sort_by_key(|v| (v.index[2], v.index[1], v.index[0]));
        keys
    }

    /// All stored non-hanging vertices, coarse levels first.
    pub fn all_vertex_keys(&self) -> Vec<VertexKey> {
        (0..=self.finest_level()).flat_map(|l| self.vertex_keys(l)).collect()
    }

    /// Stored record of a vertex. Hanging vertices are visible only while a
    /// traversal holds them.
    #[inline]
    pub fn vertex(&self, v: VertexKey) -> Option<&Vertex<V>> {
        self.vertices.get(v.level as usize)?.get(&v.index)
    }

    #[inline]
    pub fn vertex_mut(&mut self, v: VertexKey) -> Option<&mut Vertex<V>> {
        self.vertices.get_mut(v.level as usize)?.get_mut(&v.index)
    }

    /// Payload of a vertex.
    #[inline]
    pub fn data(&self, v: VertexKey) -> Option<&V> {
        self.vertex(v).map(|r| &r.data)
    }

    #[inline]
    pub fn data_mut(&mut self, v: VertexKey) -> Option<&mut V> {
        self.vertex_mut(v).map(|r| &mut r.data)
    }

    /// Iterates over all stored payloads mutably, in unspecified order.
    pub fn for_each_data_mut(&mut self, mut f: impl FnMut(VertexKey, &mut Vertex<V>)) {
        for (level, map) in self.vertices.iter_mut().enumerate() {
            for (&i, v) in map.iter_mut() {
                f(VertexKey::new(level as u32, i), v);
            }
        }
    }

    /// Whether `(level, q)` is a cell position inside the unit cube.
    #[inline]
    pub fn in_domain_cell(&self, level: u32, q: Idx) -> bool {
        let n = lattice::pow3(level);
        q.iter().take(self.d).all(|&c| (0..n).contains(&c))
    }

    #[inline]
    fn on_boundary(&self, level: u32, q: Idx) -> bool {
        let n = lattice::pow3(level);
        q.iter().take(self.d).any(|&c| c == 0 || c == n)
    }

    /// True on the boundary of the unit cube.
    pub fn is_boundary(&self, v: VertexKey) -> bool {
        self.on_boundary(v.level, v.index)
    }

    /// In-domain cells on the vertex's level that touch it, present or not.
    pub fn adjacent_cell_positions(&self, v: VertexKey) -> Vec<CellKey> {
        lattice::corners(self.d)
            .iter()
            .map(|&e| CellKey::new(v.level, lattice::sub(v.index, e)))
            .filter(|c| self.in_domain_cell(c.level, c.index))
            .collect()
    }

    fn count_adjacent(&self, level: u32, q: Idx) -> (usize, usize) {
        let Some(map) = self.cells.get(level as usize) else {
            return (0, 0);
        };
        let mut positions = 0;
        let mut present = 0;
        for &e in lattice::corners(self.d) {
            let c = lattice::sub(q, e);
            if self.in_domain_cell(level, c) {
                positions += 1;
                if map.contains_key(&c) {
                    present += 1;
                }
            }
        }
        (positions, present)
    }

    fn is_non_hanging(&self, level: u32, q: Idx) -> bool {
        let (positions, present) = self.count_adjacent(level, q);
        present > 0 && present == positions
    }

    fn kind_of(&self, level: u32, q: Idx) -> VertexType {
        if !self.is_non_hanging(level, q) {
            VertexType::Hanging
        } else if self.is_non_hanging(level + 1, lattice::scale(q, 3)) {
            VertexType::Refined
        } else {
            VertexType::Unrefined
        }
    }

    fn refresh_kind(&mut self, level: u32, q: Idx) {
        let kind = self.kind_of(level, q);
        if let Some(v) = self.vertices[level as usize].get_mut(&q) {
            v.kind = kind;
        }
    }

    /// Classification computed from the cell sets alone.
    ///
    /// Returns `None` if no adjacent cell exists, i.e. the vertex does not
    /// exist at all.
    pub fn classify_vertex(&self, v: VertexKey) -> Option<VertexType> {
        let (_, present) = self.count_adjacent(v.level, v.index);
        (present > 0).then(|| self.kind_of(v.level, v.index))
    }

    /// Runs one multiscale element-wise sweep down to `max_level`.
    ///
    /// Cells on `max_level` are treated as leaves for this sweep. Children are
    /// visited in lexicographic order.
    ///
    /// # Panics
    /// When called from inside a running traversal of the same tree.
    pub fn traverse<E: TraversalEvents<V>>(&mut self, max_level: u32, events: &mut E)
    where
        V: Default,
    {
        assert!(!self.traversing, "re-entrant traversal of the same spacetree");
        self.traversing = true;
        self.epoch = self.epoch.wrapping_add(1);
        self.visit(CellKey::ROOT, max_level, events);
        self.traversing = false;
    }

    fn visit<E: TraversalEvents<V>>(&mut self, c: CellKey, max_level: u32, events: &mut E)
    where
        V: Default,
    {
        let d = self.d;
        for &e in lattice::corners(d) {
            self.open(c.vertex(e), events);
        }
        if c.level < max_level && self.is_refined(c) == Some(true) {
            for &ce in lattice::child_offsets(d) {
                let child = c.child(ce);
                for &e in lattice::corners(d) {
                    self.open(child.vertex(e), events);
                }
            }
            events.descend(self, c);
            for &ce in lattice::child_offsets(d) {
                self.visit(c.child(ce), max_level, events);
            }
        }
        events.handle_cell(self, c);
        for &e in lattice::corners(d) {
            self.close(c.vertex(e), events);
        }
    }

    fn open<E: TraversalEvents<V>>(&mut self, v: VertexKey, events: &mut E)
    where
        V: Default,
    {
        let epoch = self.epoch;
        let (positions, present) = self.count_adjacent_fast(v);
        let map = &mut self.vertices[v.level as usize];
        match map.get_mut(&v.index) {
            Some(rec) if rec.epoch == epoch => {}
            Some(rec) => {
                rec.epoch = epoch;
                rec.pending = positions as u8;
                events.touch_vertex_first_time(self, v);
            }
            None => {
                let boundary = self.on_boundary(v.level, v.index);
                self.vertices[v.level as usize].insert(
                    v.index,
                    Vertex {
                        data: V::default(),
                        kind: VertexType::Hanging,
                        boundary,
                        epoch,
                        pending: present as u8,
                    },
                );
                events.create_hanging_vertex(self, v);
            }
        }
    }

    /// Adjacent cell counts; for stored vertices the present count is not
    /// needed, which avoids hash lookups on the hot path.
    #[inline]
    fn count_adjacent_fast(&self, v: VertexKey) -> (usize, usize) {
        match self.vertex(v) {
            Some(rec) if !rec.is_hanging() => {
                let n = lattice::pow3(v.level);
                let mut positions = 1usize;
                for k in 0..self.d {
                    let i = v.index[k];
                    if i > 0 && i < n {
                        positions *= 2;
                    }
                }
                (positions, positions)
            }
            Some(_) => (0, 0),
            None => self.count_adjacent(v.level, v.index),
        }
    }

    fn close<E: TraversalEvents<V>>(&mut self, v: VertexKey, events: &mut E) {
        let rec = self.vertices[v.level as usize].get_mut(&v.index).expect("opened vertex");
        rec.pending -= 1;
        if rec.pending > 0 {
            return;
        }
        if rec.is_hanging() {
            events.destroy_hanging_vertex(self, v);
            self.vertices[v.level as usize].remove(&v.index);
        } else {
            events.touch_vertex_last_time(self, v);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    type Tree = Spacetree<u32>;

    #[test]
    fn depth_one_counts() {
        let t = Tree::build(2, 1).unwrap();
        assert_eq!(t.cell_count(0), 1);
        assert_eq!(t.cell_count(1), 9);
        assert_eq!(t.vertex_count(1), 16);
        let t3 = Tree::build(3, 1).unwrap();
        assert_eq!(t3.cell_count(1), 27);
        assert_eq!(t3.vertex_count(1), 64);
    }

    #[test]
    fn depth_two_counts() {
        let t = Tree::build(2, 2).unwrap();
        assert_eq!(t.cell_count(2), 81);
        assert_eq!(t.vertex_count(2), 100);
    }

    #[test]
    fn rejects_bad_dimension() {
        assert_eq!(Tree::build(4, 1).unwrap_err(), TreeError::UnsupportedDimension(4));
        assert_eq!(Tree::build(1, 1).unwrap_err(), TreeError::UnsupportedDimension(1));
        assert_eq!(Tree::build(2, 0).unwrap_err(), TreeError::InvalidDepth);
    }

    #[test]
    fn refining_root_refines_its_corners() {
        let mut t = Tree::new(2).unwrap();
        let created = t.refine_cell(CellKey::ROOT);
        assert_eq!(created.len(), 16);
        for v in t.vertex_keys(0) {
            assert_eq!(t.vertex(v).unwrap().kind(), VertexType::Refined);
        }
        assert!(t.vertex_keys(1).iter().all(|&v| t.vertex(v).unwrap().kind() == VertexType::Unrefined));
    }

    #[test]
    fn refine_then_erase_restores_tree() {
        let original = Tree::build(2, 2).unwrap();
        let mut t = original.clone();
        t.refine_cell(CellKey::new(2, [4, 4, 0]));
        assert_ne!(t, original);
        t.erase_subtree(CellKey::new(2, [4, 4, 0]));
        assert_eq!(t, original);
    }

    #[test]
    fn erase_child_of_root_drops_nine_cells() {
        let mut t = Tree::build(2, 2).unwrap();
        t.erase_subtree(CellKey::new(1, [1, 1, 0]));
        assert_eq!(t.cell_count(2), 72);
        let before = t.clone();
        t.erase_subtree(CellKey::new(1, [1, 1, 0]));
        assert_eq!(t, before);
    }

    #[test]
    #[should_panic]
    fn refining_missing_cell_panics() {
        let mut t = Tree::build(2, 1).unwrap();
        t.refine_cell(CellKey::new(3, [0, 0, 0]));
    }
}
