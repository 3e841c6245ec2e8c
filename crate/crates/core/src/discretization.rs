//! Benchmark problems, d-linear element matrices with upwinded convection,
//! rediscretised stencils, stencil splitting and geometric transfer.
//!
//! All problems live on the unit cube with homogeneous or prescribed
//! Dirichlet data. Variable coefficients are sampled once per cell at its
//! midpoint; the shape-function products are integrated exactly.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use crate::lattice::{self, Idx};
use crate::scalar::Real;
use crate::spacetree::{CellKey, Spacetree, VertexKey};

/// The four benchmark parameter sets.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Problem {
    /// `f = 2 pi^2 prod sin(pi x_i)`, unit diffusion, zero boundary data.
    Sin,
    /// Diffusion 1 left of `x_1 = 0.5` and 0.1 right of it, `f = 1`.
    Jump,
    /// `eps_i = 1` if `x_i < 0.5` else 0.1, `f = 1`.
    Checkerboard,
    /// Recirculating flow with the given diffusion weight.
    Circle { epsilon: f64 },
}

/// Coefficients at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coefficients {
    /// Diagonal of the diffusion tensor.
    pub epsilon: [f64; 3],
    pub velocity: [f64; 3],
    pub rhs: f64,
}

impl Problem {
    pub fn name(&self) -> &'static str {
        match self {
            Problem::Sin => "sin",
            Problem::Jump => "jump",
            Problem::Checkerboard => "checkerboard",
            Problem::Circle { .. } => "circle",
        }
    }

    /// Evaluates all coefficients at `x`.
    pub fn eval(&self, x: &[f64; 3], d: usize) -> Coefficients {
        let mut c = Coefficients { epsilon: [1.0; 3], velocity: [0.0; 3], rhs: 0.0 };
        match *self {
            Problem::Sin => {
                c.rhs = 2.0 * PI * PI * x.iter().take(d).map(|&xi| (PI * xi).sin()).product::<f64>();
            }
            Problem::Jump => {
                let e = if x[0] < 0.5 { 1.0 } else { 0.1 };
                c.epsilon = [e; 3];
                c.rhs = 1.0;
            }
            Problem::Checkerboard => {
                for k in 0..3 {
                    c.epsilon[k] = if x[k] < 0.5 { 1.0 } else { 0.1 };
                }
                c.rhs = 1.0;
            }
            Problem::Circle { epsilon } => {
                let e = if d == 2 || x[2] <= 0.5 { epsilon } else { 1.0 };
                c.epsilon = [e; 3];
                let (a, b) = (PI * (x[0] - 0.5), PI * (x[1] - 0.5));
                c.velocity = [b.sin() * a.cos(), -b.cos() * a.sin(), 0.0];
            }
        }
        c
    }

    /// Dirichlet value at a boundary point.
    pub fn dirichlet(&self, x: &[f64; 3]) -> f64 {
        match self {
            Problem::Circle { .. } if x[0] == 0.0 || x[0] == 1.0 => 1.0 - 4.0 * (x[1] - 0.5) * (x[1] - 0.5),
            _ => 0.0,
        }
    }
}

impl fmt::Display for Problem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Problem::Circle { epsilon } => write!(f, "circle:{epsilon:e}"),
            p => f.write_str(p.name()),
        }
    }
}

impl FromStr for Problem {
    type Err = String;

    /// Accepts `sin`, `jump`, `checkerboard`, `circle` (diffusion 0.1) and
    /// `circle:<eps>`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sin" => Ok(Problem::Sin),
            "jump" => Ok(Problem::Jump),
            "checkerboard" => Ok(Problem::Checkerboard),
            "circle" => Ok(Problem::Circle { epsilon: 0.1 }),
            _ => {
                let eps = s
                    .strip_prefix("circle:")
                    .ok_or_else(|| format!("unknown problem `{s}`"))?
                    .parse::<f64>()
                    .map_err(|e| format!("bad circle diffusion in `{s}`: {e}"))?;
                if eps > 0.0 && eps.is_finite() {
                    Ok(Problem::Circle { epsilon: eps })
                } else {
                    Err(format!("circle diffusion must be positive, got {eps}"))
                }
            }
        }
    }
}

/// Evaluates a problem at a point.
pub fn eval_problem(p: &Problem, x: &[f64; 3], d: usize) -> Coefficients {
    p.eval(x, d)
}

/// A 3^d stencil: one row of the level operator, lexicographic over the
/// neighbour offsets with axis 0 fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Stencil<T> {
    pub d: usize,
    pub values: Vec<T>,
}

impl<T: Real> Stencil<T> {
    pub fn zeros(d: usize) -> Self {
        Self { d, values: vec![T::zero(); lattice::ipow(3, d)] }
    }

    /// The Dirichlet row.
    pub fn identity(d: usize) -> Self {
        let mut s = Self::zeros(d);
        let c = s.centre_index();
        s.values[c] = T::one();
        s
    }

    pub fn from_values(d: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), lattice::ipow(3, d));
        Self { d, values }
    }

    #[inline]
    pub fn centre_index(&self) -> usize {
        (self.values.len() - 1) / 2
    }

    #[inline]
    pub fn centre(&self) -> T {
        self.values[self.centre_index()]
    }

    /// Entry for offset `o`, zero outside the stencil.
    #[inline]
    pub fn at(&self, o: Idx) -> T {
        lattice::stencil_index(self.d, o).map_or(T::zero(), |k| self.values[k])
    }

    /// Sum of the absolute off-centre entries.
    pub fn off_centre_abs_sum(&self) -> T {
        let c = self.centre_index();
        self.values.iter().enumerate().filter(|&(k, _)| k != c).map(|(_, v)| v.abs()).sum()
    }
}

/// A 5^d inter-grid transfer stencil around a coarse vertex, in fine-grid
/// offsets. Entry `o` is the weight coupling the coarse vertex to the fine
/// vertex at `3 * coarse + o`; prolongation and restriction share this
/// convention.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferStencil<T> {
    pub d: usize,
    pub values: Vec<T>,
}

impl<T: Real> TransferStencil<T> {
    pub fn zeros(d: usize) -> Self {
        Self { d, values: vec![T::zero(); lattice::ipow(5, d)] }
    }

    pub fn from_values(d: usize, values: Vec<T>) -> Self {
        assert_eq!(values.len(), lattice::ipow(5, d));
        Self { d, values }
    }

    #[inline]
    pub fn at(&self, o: Idx) -> T {
        lattice::transfer_index(self.d, o).map_or(T::zero(), |k| self.values[k])
    }

    #[inline]
    pub fn set(&mut self, o: Idx, v: T) {
        let k = lattice::transfer_index(self.d, o).expect("offset inside 5^d box");
        self.values[k] = v;
    }

    #[inline]
    pub fn centre(&self) -> T {
        self.values[(self.values.len() - 1) / 2]
    }
}

/// Local matrix of one cell, coupling its `2^d` vertices in lexicographic
/// corner order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementMatrix<T> {
    pub d: usize,
    pub a: [[T; 8]; 8],
}

impl<T: Real> ElementMatrix<T> {
    pub fn zeros(d: usize) -> Self {
        Self { d, a: [[T::zero(); 8]; 8] }
    }

    #[inline]
    pub fn n(&self) -> usize {
        1 << self.d
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..n).all(|j| (self.a[i][j] - self.a[j][i]).abs() <= tol))
    }
}

const MASS_1D: [[f64; 2]; 2] = [[1.0 / 3.0, 1.0 / 6.0], [1.0 / 6.0, 1.0 / 3.0]];
const STIFF_1D: [[f64; 2]; 2] = [[1.0, -1.0], [-1.0, 1.0]];

/// Element matrix of a cell with edge length `h` and constant coefficients,
/// without any boundary modification.
///
/// Diffusion is the exact bilinear form of the d-linear shape functions.
/// Convection is donor-cell upwinding per axis: along axis `i` only the
/// downstream vertices of the cell receive `|v_i| h^(d-1) / 2^(d-1)` times
/// the difference to their upstream partner.
pub fn element_matrix_raw<T: Real>(coeffs: &Coefficients, h: f64, d: usize) -> ElementMatrix<T> {
    let corners = lattice::corners(d);
    let n = corners.len();
    let mut m = ElementMatrix::zeros(d);
    for a in 0..n {
        for b in 0..n {
            let mut v = 0.0;
            for i in 0..d {
                let mut t = coeffs.epsilon[i] * h.powi(d as i32 - 2);
                for j in 0..d {
                    let (ea, eb) = (corners[a][j] as usize, corners[b][j] as usize);
                    t *= if i == j { STIFF_1D[ea][eb] } else { MASS_1D[ea][eb] };
                }
                v += t;
            }
            m.a[a][b] = T::lit(v);
        }
    }
    let share = h.powi(d as i32 - 1) / (1 << (d - 1)) as f64;
    for i in 0..d {
        let vi = coeffs.velocity[i];
        if vi == 0.0 {
            continue;
        }
        let downstream = i32::from(vi > 0.0);
        let w = T::lit(vi.abs() * share);
        for a in 0..n {
            if corners[a][i] == downstream {
                let partner = a ^ (1 << i);
                m.a[a][a] += w;
                m.a[a][partner] -= w;
            }
        }
    }
    m
}

/// Number of in-domain cells adjacent to a vertex on its level.
fn in_domain_adjacent(v: VertexKey, d: usize) -> usize {
    let n = lattice::pow3(v.level);
    (0..d).fold(1, |acc, k| if v.index[k] > 0 && v.index[k] < n { acc * 2 } else { acc })
}

/// Element matrix of `cell` for problem `p`, with the rows of Dirichlet
/// vertices replaced so that the assembled row is the identity.
pub fn element_matrix<T: Real>(p: &Problem, cell: CellKey, d: usize) -> ElementMatrix<T> {
    let coeffs = p.eval(&cell.midpoint(d), d);
    let mut m = element_matrix_raw(&coeffs, cell.width(), d);
    for (a, &e) in lattice::corners(d).iter().enumerate() {
        let v = cell.vertex(e);
        if is_boundary_vertex(v, d) {
            let share = T::one() / T::lit(in_domain_adjacent(v, d) as f64);
            m.a[a] = [T::zero(); 8];
            m.a[a][a] = share;
        }
    }
    m
}

/// Whether a vertex lies on the boundary of the unit cube.
pub fn is_boundary_vertex(v: VertexKey, d: usize) -> bool {
    let n = lattice::pow3(v.level);
    v.index.iter().take(d).any(|&i| i == 0 || i == n)
}

/// Row of the level operator at `v` obtained by summing the element
/// matrices of its in-domain adjacent cells on `v`'s level.
///
/// Whether those cells exist in a particular tree is irrelevant: the row
/// depends on the level geometry only.
pub fn rediscretized_stencil<T: Real>(p: &Problem, v: VertexKey, d: usize) -> Stencil<T> {
    if is_boundary_vertex(v, d) {
        return Stencil::identity(d);
    }
    let mut s = Stencil::zeros(d);
    let corners = lattice::corners(d);
    for (a, &e) in corners.iter().enumerate() {
        // The cell in which `v` is corner `a`.
        let cell = CellKey::new(v.level, lattice::sub(v.index, e));
        let m = element_matrix::<T>(p, cell, d);
        for (b, &eb) in corners.iter().enumerate() {
            let k = lattice::stencil_index(d, lattice::sub(eb, e)).expect("neighbour inside stencil");
            s.values[k] += m.a[a][b];
        }
    }
    s
}

/// Same as [`rediscretized_stencil`] with the tree supplying the dimension.
pub fn rediscretized_stencil_in<V, T: Real>(tree: &Spacetree<V>, v: VertexKey, p: &Problem) -> Stencil<T> {
    rediscretized_stencil(p, v, tree.dim())
}

/// Weight with which entry `o` of a vertex stencil belongs to one adjacent
/// cell containing it: one over the number of adjacent cells sharing it.
#[inline]
fn split_weight<T: Real>(o: Idx, d: usize) -> T {
    let zeros = o.iter().take(d).filter(|&&c| c == 0).count();
    T::one() / T::lit((1usize << zeros) as f64)
}

/// Splits a stencil into `2^d` cell parts that sum to the input.
///
/// Part `k` belongs to the adjacent cell whose lower corner is the vertex
/// shifted by `corners(d)[k] - 1`, so part 0 is the cell below-left.
pub fn split_stencil<T: Real>(s: &Stencil<T>) -> Vec<Stencil<T>> {
    let d = s.d;
    lattice::corners(d)
        .iter()
        .map(|&e| {
            let mut part = Stencil::zeros(d);
            for (k, &o) in lattice::stencil_offsets(d).iter().enumerate() {
                let inside = (0..d).all(|i| o[i] == e[i] - 1 || o[i] == e[i]);
                if inside {
                    part.values[k] = s.values[k] * split_weight::<T>(o, d);
                }
            }
            part
        })
        .collect()
}

/// Cell-local matrix assembled from the split stencils of the cell's
/// vertices: row `a` holds the part of vertex `a`'s stencil that belongs to
/// this cell.
pub fn cell_matrix_from_stencils<T: Real>(stencils: &[&Stencil<T>], d: usize) -> ElementMatrix<T> {
    let corners = lattice::corners(d);
    let mut m = ElementMatrix::zeros(d);
    for (a, &ea) in corners.iter().enumerate() {
        for (b, &eb) in corners.iter().enumerate() {
            let o = lattice::sub(eb, ea);
            m.a[a][b] = stencils[a].at(o) * split_weight::<T>(o, d);
        }
    }
    m
}

/// The d-linear transfer stencil: tensor product of `[1/3, 2/3, 1, 2/3, 1/3]`.
pub fn d_linear_transfer<T: Real>(d: usize) -> TransferStencil<T> {
    const W: [f64; 5] = [1.0 / 3.0, 2.0 / 3.0, 1.0, 2.0 / 3.0, 1.0 / 3.0];
    let values = lattice::transfer_offsets(d)
        .iter()
        .map(|o| T::lit((0..d).map(|i| W[(o[i] + 2) as usize]).product()))
        .collect();
    TransferStencil { d, values }
}

/// d-linear weight of a coarse corner `e` for a point at local coordinates
/// `xi` in `[0,1]^d` of the coarse cell.
#[inline]
pub fn d_linear_weight(d: usize, e: Idx, xi: &[f64; 3]) -> f64 {
    (0..d).map(|k| if e[k] == 1 { xi[k] } else { 1.0 - xi[k] }).product()
}

/// d-linear interpolation of corner values at local coordinates `xi`.
pub fn interpolate_d_linear<T: Real>(d: usize, corner_values: &[T], xi: &[f64; 3]) -> T {
    lattice::corners(d)
        .iter()
        .zip(corner_values)
        .map(|(&e, &v)| T::lit(d_linear_weight(d, e, xi)) * v)
        .sum()
}

/// Local coordinates of fine vertex `v` inside coarse cell `c`.
pub fn local_coordinates(v: VertexKey, c: CellKey, d: usize) -> [f64; 3] {
    let mut xi = [0.0; 3];
    for k in 0..d {
        xi[k] = (v.index[k] - 3 * c.index[k]) as f64 / 3.0;
    }
    xi
}

/// d-linear interpolant at a hanging vertex from the vertices of the parent
/// cell, using `field` to read a value from each payload.
///
/// # Panics
/// If a parent vertex is not present in the tree.
pub fn interpolate_hanging_value<V, T: Real>(tree: &Spacetree<V>, v: VertexKey, field: impl Fn(&V) -> T) -> T {
    let d = tree.dim();
    let c = v.parent_cell(d).expect("hanging vertex has a parent level");
    let xi = local_coordinates(v, c, d);
    lattice::corners(d)
        .iter()
        .map(|&e| {
            let pv = tree.data(c.vertex(e)).expect("parent vertex loaded");
            T::lit(d_linear_weight(d, e, &xi)) * field(pv)
        })
        .sum()
}

/// Consistent load `sum_c f(mid_c) h^d / 2^d` over the in-domain cells
/// adjacent to `v`.
pub fn load_entry(p: &Problem, v: VertexKey, d: usize) -> f64 {
    let h = 1.0 / lattice::pow3(v.level) as f64;
    let share = h.powi(d as i32) / (1 << d) as f64;
    let n = lattice::pow3(v.level);
    lattice::corners(d)
        .iter()
        .map(|&e| lattice::sub(v.index, e))
        .filter(|c| c.iter().take(d).all(|&i| (0..n).contains(&i)))
        .map(|c| p.eval(&CellKey::new(v.level, c).midpoint(d), d).rhs * share)
        .sum()
}
