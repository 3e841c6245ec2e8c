//! Algebraic operator construction inside the grid: dense micro-solves,
//! stencil collapsing, patch mirroring, BoxMG prolongation, restriction
//! variants and element-wise Galerkin accumulation.

use std::fmt;
use std::str::FromStr;

use crate::discretization::{self, ElementMatrix, Stencil, TransferStencil};
use crate::lattice::{self, Idx};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OperatorError {
    #[error("matrix is singular to working precision (pivot column {0})")]
    Singular(usize),
    #[error("dense solve supports at most 64 unknowns, got {0}")]
    TooLarge(usize),
}

/// Gaussian elimination with partial pivoting on a row-major `n x n` matrix.
///
/// A pivot below `n * eps * max|A|` is reported as singular.
pub fn solve_dense<T: Real>(a: &[T], b: &[T]) -> Result<Vec<T>, OperatorError> {
    let n = b.len();
    assert_eq!(a.len(), n * n, "matrix shape does not match right-hand side");
    if n > 64 {
        return Err(OperatorError::TooLarge(n));
    }
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tiny = scale * T::epsilon() * T::lit(n as f64);
    for col in 0..n {
        let (piv, pval) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -T::one()), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pval <= tiny || pval == T::zero() {
            return Err(OperatorError::Singular(col));
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            x.swap(col, piv);
        }
        let diag = m[col * n + col];
        for r in col + 1..n {
            let f = m[r * n + col] / diag;
            if f == T::zero() {
                continue;
            }
            for k in col..n {
                let v = m[col * n + k];
                m[r * n + k] -= f * v;
            }
            let xc = x[col];
            x[r] -= f * xc;
        }
    }
    for col in (0..n).rev() {
        let mut s = x[col];
        for k in col + 1..n {
            s -= m[col * n + k] * x[k];
        }
        x[col] = s / m[col * n + col];
    }
    Ok(x)
}

/// Sums a stencil over all axes not listed in `keep`, giving a stencil of
/// dimension `keep.len()` whose axes follow the order of `keep`.
pub fn collapse<T: Real>(s: &Stencil<T>, keep: &[usize]) -> Stencil<T> {
    let mut out = Stencil::zeros(keep.len());
    for (k, &o) in lattice::stencil_offsets(s.d).iter().enumerate() {
        let mut reduced = [0; 3];
        for (j, &axis) in keep.iter().enumerate() {
            reduced[j] = o[axis];
        }
        let idx = lattice::stencil_index(keep.len(), reduced).expect("inside stencil");
        out.values[idx] += s.values[k];
    }
    out
}

/// Role of a vertex inside a 4^d patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PointClass {
    /// Coincides with a coarse vertex.
    C,
    /// On a coarse grid line or face but not a coarse vertex.
    Gamma,
    /// Strictly inside the coarse cell.
    Iota,
}

/// Classifies patch position `q` in `{0..3}^d`.
pub fn point_class(q: Idx, d: usize) -> PointClass {
    let on_coarse = (0..d).filter(|&k| q[k] == 0 || q[k] == 3).count();
    match on_coarse {
        0 => PointClass::Iota,
        n if n == d => PointClass::C,
        _ => PointClass::Gamma,
    }
}

/// The stencils of all `4^d` fine vertices of one refined coarse cell,
/// lexicographic by patch position.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchStencils<T> {
    pub d: usize,
    pub stencils: Vec<Stencil<T>>,
}

impl<T: Real> PatchStencils<T> {
    pub fn new(d: usize, stencils: Vec<Stencil<T>>) -> Self {
        assert_eq!(stencils.len(), lattice::ipow(4, d));
        Self { d, stencils }
    }

    /// All vertices carry the same stencil.
    pub fn uniform(s: &Stencil<T>) -> Self {
        Self::new(s.d, vec![s.clone(); lattice::ipow(4, s.d)])
    }

    pub fn stencil_at(&self, q: Idx) -> &Stencil<T> {
        &self.stencils[lattice::box_index(self.d, q, 0, 4).expect("inside patch")]
    }
}

#[inline]
fn flips(corner: usize, d: usize) -> [bool; 3] {
    let mut f = [false; 3];
    for (k, fk) in f.iter_mut().enumerate().take(d) {
        *fk = corner >> k & 1 == 1;
    }
    f
}

/// Reflects the patch along every axis in which `corner` lies on the upper
/// side, so that this corner becomes the lower-left one. Vertex positions map
/// `i -> 3 - i` and stencil offsets `o -> -o` on reflected axes. The map is an
/// involution.
pub fn mirror_patch<T: Real>(ps: &PatchStencils<T>, corner: usize) -> PatchStencils<T> {
    let d = ps.d;
    let f = flips(corner, d);
    let stencils = lattice::patch_offsets(d)
        .iter()
        .map(|&q| {
            let mut src_q = q;
            for k in 0..d {
                if f[k] {
                    src_q[k] = 3 - q[k];
                }
            }
            let src = ps.stencil_at(src_q);
            let values = lattice::stencil_offsets(d)
                .iter()
                .map(|&o| {
                    let mut so = o;
                    for k in 0..d {
                        if f[k] {
                            so[k] = -o[k];
                        }
                    }
                    src.at(so)
                })
                .collect();
            Stencil::from_values(d, values)
        })
        .collect();
    PatchStencils::new(d, stencils)
}

/// Assembles the BoxMG system `C(s) p = e_c` for the lower-left corner of a
/// patch. Unknowns are the prolongation weights at the `3^d` positions
/// `{0,1,2}^d`, lexicographic.
///
/// Row 0 fixes the corner weight. A point lying on the coarse lines or faces
/// through the corner uses its stencil collapsed over the axes in which it
/// sits on the corner's hyperplanes; interior points use the full stencil.
/// Couplings to positions with a coordinate equal to 3 belong to other
/// coarse vertices and drop out, as do all right-hand sides except the
/// corner's.
pub fn boxmg_system<T: Real>(ps: &PatchStencils<T>) -> (Vec<T>, Vec<T>) {
    let d = ps.d;
    let n = lattice::ipow(3, d);
    let mut c = vec![T::zero(); n * n];
    let mut rhs = vec![T::zero(); n];
    for (row, &w) in lattice::child_offsets(d).iter().enumerate() {
        if row == 0 {
            c[0] = T::one();
            rhs[0] = T::one();
            continue;
        }
        let keep: Vec<usize> = (0..d).filter(|&k| w[k] != 0).collect();
        let t = collapse(ps.stencil_at(w), &keep);
        for (k, &o) in lattice::stencil_offsets(keep.len()).iter().enumerate() {
            let mut target = w;
            for (j, &axis) in keep.iter().enumerate() {
                target[axis] += o[j];
            }
            if let Some(col) = lattice::box_index(d, target, 0, 3) {
                c[row * n + col] += t.values[k];
            }
        }
    }
    (c, rhs)
}

/// Prolongation weights one patch contributes to the transfer stencil of
/// each of its `2^d` corners.
///
/// Entry `k` of a corner's vector is the weight at the fine offset
/// `child_offsets(d)[k]` reflected towards the patch, i.e. the offset
/// `-child_offsets(d)[k]` on axes where the corner lies on the upper side.
/// A singular patch system yields an error for that corner only.
pub fn boxmg_prolongation<T: Real>(ps: &PatchStencils<T>) -> Vec<Result<Vec<T>, OperatorError>> {
    (0..1usize << ps.d)
        .map(|corner| {
            let reference = mirror_patch(ps, corner);
            let (c, rhs) = boxmg_system(&reference);
            let mut p = solve_dense(&c, &rhs)?;
            p[0] = T::one();
            Ok(p)
        })
        .collect()
}

/// Fine offset, relative to the corner vertex, of entry `k` of a corner's
/// BoxMG vector.
pub fn corner_entry_offset(d: usize, corner: usize, k: usize) -> Idx {
    let f = flips(corner, d);
    let mut o = lattice::child_offsets(d)[k];
    for i in 0..d {
        if f[i] {
            o[i] = -o[i];
        }
    }
    o
}

/// Writes one patch's BoxMG weights for `corner` into a transfer stencil.
pub fn apply_corner_entries<T: Real>(p: &mut TransferStencil<T>, corner: usize, entries: &[T]) {
    for (k, &v) in entries.iter().enumerate() {
        p.set(corner_entry_offset(p.d, corner, k), v);
    }
}

/// Construction of the restriction from the prolongation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum RestrictionVariant {
    /// `R = P^T`.
    #[default]
    Transpose,
    /// Point injection.
    Injection,
    /// Unit weights over the whole `5^d` support.
    Aggregation,
}

impl fmt::Display for RestrictionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RestrictionVariant::Transpose => "transpose",
            RestrictionVariant::Injection => "inject",
            RestrictionVariant::Aggregation => "aggregate",
        })
    }
}

impl FromStr for RestrictionVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "transpose" => Ok(Self::Transpose),
            "inject" | "injection" => Ok(Self::Injection),
            "aggregate" | "aggregation" => Ok(Self::Aggregation),
            _ => Err(format!("unknown restriction `{s}`")),
        }
    }
}

/// Restriction stencil for a given prolongation stencil.
///
/// Both stencils use the same scatter/gather convention (entry `o` couples
/// the coarse vertex with the fine vertex at offset `o`), so the transpose
/// is the stencil itself.
pub fn restriction_from<T: Real>(p: &TransferStencil<T>, variant: RestrictionVariant) -> TransferStencil<T> {
    match variant {
        RestrictionVariant::Transpose => p.clone(),
        RestrictionVariant::Injection => {
            let mut r = TransferStencil::zeros(p.d);
            r.set([0; 3], T::one());
            r
        }
        RestrictionVariant::Aggregation => TransferStencil::from_values(p.d, vec![T::one(); p.values.len()]),
    }
}

/// Galerkin contribution of one fine cell to the stencils of the `2^d`
/// vertices of its parent cell.
///
/// `child` is the fine cell's offset in `{0,1,2}^d` inside the parent,
/// `e` its element matrix, and `rows` marks fine rows that carry an
/// equation (hanging and Dirichlet vertices do not). `p[k]` and `r[k]` are
/// the transfer stencils of parent corner `k`. The result for corner `v` and
/// neighbour corner `v'` is added to `out[v]` at offset `v' - v`.
pub fn galerkin_accumulate<T: Real>(
    child: Idx,
    e: &ElementMatrix<T>,
    rows: &[bool],
    p: &[&TransferStencil<T>],
    r: &[&TransferStencil<T>],
    out: &mut [Stencil<T>],
) {
    let d = e.d;
    let corners = lattice::corners(d);
    let n = corners.len();
    // Fine vertex a of the child sits at 3*parent + child + corners[a]; its
    // offset from parent corner v is child + corners[a] - 3*corners[v].
    let offset = |a: usize, v: usize| lattice::sub(lattice::add(child, corners[a]), lattice::scale(corners[v], 3));
    let mut ep = [[T::zero(); 8]; 8];
    for (vp, pv) in p.iter().enumerate().take(n) {
        let pw: [T; 8] = std::array::from_fn(|b| if b < n { pv.at(offset(b, vp)) } else { T::zero() });
        for a in 0..n {
            ep[a][vp] = (0..n).map(|b| e.a[a][b] * pw[b]).sum();
        }
    }
    for (v, rv) in r.iter().enumerate().take(n) {
        let rw: [T; 8] = std::array::from_fn(|a| if a < n && rows[a] { rv.at(offset(a, v)) } else { T::zero() });
        if rw.iter().all(|&x| x == T::zero()) {
            continue;
        }
        for vp in 0..n {
            let val: T = (0..n).map(|a| rw[a] * ep[a][vp]).sum();
            let k = lattice::stencil_index(d, lattice::sub(corners[vp], corners[v])).expect("cell neighbour");
            out[v].values[k] += val;
        }
    }
}

/// Whether a coarse vertex stencil on `level` has to be rebuilt in the
/// current sweep: the active level is `level + 1`, this is the last
/// smoothing step there, and the vertex is refined.
pub fn recompute_galerkin(level: u32, current: u32, last_smoothing_step: bool, refined: bool) -> bool {
    level + 1 == current && last_smoothing_step && refined
}

/// Stencil of a hanging vertex: entrywise d-linear interpolation of the
/// stencils of the parent cell's corners at local coordinates `xi`.
pub fn hanging_stencil<T: Real>(parents: &[&Stencil<T>], xi: &[f64; 3]) -> Stencil<T> {
    let d = parents[0].d;
    let mut s = Stencil::zeros(d);
    for (&e, parent) in lattice::corners(d).iter().zip(parents) {
        let w = T::lit(discretization::d_linear_weight(d, e, xi));
        if w == T::zero() {
            continue;
        }
        for (o, &v) in s.values.iter_mut().zip(&parent.values) {
            *o += w * v;
        }
    }
    s
}

/// Whether a coarse stencil is unfit for further coarsening: non-positive
/// centre, or off-centre mass exceeding the centre by more than the relative
/// `slack` (never below rounding level).
pub fn stencil_alert<T: Real>(s: &Stencil<T>, slack: f64) -> bool {
    let c = s.centre();
    let off = s.off_centre_abs_sum();
    c <= T::zero() || off * (T::one() - T::lit(1e-10)) > c * T::lit(1.0 + slack)
}
