//! Integer lattice helpers: index vectors, offset boxes and lexicographic
//! enumeration with axis 0 running fastest.

use std::sync::OnceLock;

/// Lattice coordinates. Components beyond the dimension are zero.
pub type Idx = [i32; 3];

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

/// `3^level`, the number of cells per axis on `level`.
#[inline]
pub fn pow3(level: u32) -> i32 {
    3i32.pow(level)
}

/// `base^d` as usize.
#[inline]
pub fn ipow(base: usize, d: usize) -> usize {
    base.pow(d as u32)
}

#[inline]
pub fn add(a: Idx, b: Idx) -> Idx {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub(a: Idx, b: Idx) -> Idx {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale(a: Idx, s: i32) -> Idx {
    [a[0] * s, a[1] * s, a[2] * s]
}

/// Componentwise floor division.
#[inline]
pub fn div_floor(a: Idx, s: i32) -> Idx {
    [a[0].div_euclid(s), a[1].div_euclid(s), a[2].div_euclid(s)]
}

/// Lexicographic position of `o` inside the box `[lo, lo+n)^d`, or `None`
/// when `o` lies outside.
#[inline]
pub fn box_index(d: usize, o: Idx, lo: i32, n: i32) -> Option<usize> {
    let mut k = 0usize;
    let mut stride = 1usize;
    for &c in o.iter().take(d) {
        let c = c - lo;
        if c < 0 || c >= n {
            return None;
        }
        k += c as usize * stride;
        stride *= n as usize;
    }
    Some(k)
}

/// Inverse of [`box_index`].
pub fn box_offset(d: usize, mut k: usize, lo: i32, n: i32) -> Idx {
    let mut o = [0; 3];
    for c in o.iter_mut().take(d) {
        *c = (k % n as usize) as i32 + lo;
        k /= n as usize;
    }
    o
}

fn build(d: usize, lo: i32, n: i32) -> Vec<Idx> {
    (0..ipow(n as usize, d)).map(|k| box_offset(d, k, lo, n)).collect()
}

type Tables = [Vec<Idx>; MAX_DIM + 1];

fn tables(lock: &'static OnceLock<Tables>, lo: i32, n: i32) -> &'static Tables {
    lock.get_or_init(|| [build(0, lo, n), build(1, lo, n), build(2, lo, n), build(3, lo, n)])
}

/// Offsets `{0,1}^d`: the corners of a cell relative to its lower corner.
pub fn corners(d: usize) -> &'static [Idx] {
    static T: OnceLock<Tables> = OnceLock::new();
    &tables(&T, 0, 2)[d]
}

/// Offsets `{-1,0,1}^d` of a 3^d stencil.
pub fn stencil_offsets(d: usize) -> &'static [Idx] {
    static T: OnceLock<Tables> = OnceLock::new();
    &tables(&T, -1, 3)[d]
}

/// Offsets `{0,1,2}^d` of the children of a cell.
pub fn child_offsets(d: usize) -> &'static [Idx] {
    static T: OnceLock<Tables> = OnceLock::new();
    &tables(&T, 0, 3)[d]
}

/// Offsets `{0,..,3}^d` of the vertices of a 3^d patch.
pub fn patch_offsets(d: usize) -> &'static [Idx] {
    static T: OnceLock<Tables> = OnceLock::new();
    &tables(&T, 0, 4)[d]
}

/// Offsets `{-2,..,2}^d` of a 5^d transfer stencil.
pub fn transfer_offsets(d: usize) -> &'static [Idx] {
    static T: OnceLock<Tables> = OnceLock::new();
    &tables(&T, -2, 5)[d]
}

/// Index of offset `o` in a 3^d stencil.
#[inline]
pub fn stencil_index(d: usize, o: Idx) -> Option<usize> {
    box_index(d, o, -1, 3)
}

/// Index of offset `o` in a 5^d transfer stencil.
#[inline]
pub fn transfer_index(d: usize, o: Idx) -> Option<usize> {
    box_index(d, o, -2, 5)
}
