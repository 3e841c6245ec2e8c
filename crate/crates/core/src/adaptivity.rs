//! Dynamic refinement driven by a local smoothness score.
//!
//! Candidates are unknowns whose residual has settled. Each gets a score
//! measuring how far it sits from the mean of its same-level neighbours;
//! the scores are binned and the highest bins holding roughly a tenth of
//! the candidates are refined.
//!
//! The histogram range only ever widens: it spans zero to the largest score
//! seen so far. Scores in the lowest bin are never refined, so refinement
//! stops once every candidate is smooth compared to the roughest feature the
//! run has met.

use crate::lattice;
use crate::scalar::Real;
use crate::solvers::VertexRecord;
use crate::spacetree::{CellKey, Spacetree, VertexKey, VertexType};

/// Residual magnitude below which a vertex may be refined.
pub const RESIDUAL_THRESHOLD: f64 = 1e-2;
/// Number of histogram bins.
pub const BINS: usize = 10;
/// Fraction of candidates to refine per step.
pub const TARGET_FRACTION: f64 = 0.1;

type Tree<T> = Spacetree<VertexRecord<T>>;

/// Whether `v` may be refined: an unrefined interior unknown with a small
/// residual below the depth limit.
pub fn is_candidate<T: Real>(tree: &Tree<T>, v: VertexKey, max_depth: u32) -> bool {
    match tree.vertex(v) {
        Some(rec) => {
            rec.kind() == VertexType::Unrefined
                && !rec.is_boundary()
                && v.level < max_depth
                && rec.data.r.as_f64().abs() < RESIDUAL_THRESHOLD
        }
        None => false,
    }
}

/// `|u - mean(u_neighbours)|` over the stored same-level neighbours.
pub fn refinement_score<T: Real>(tree: &Tree<T>, v: VertexKey) -> f64 {
    let d = tree.dim();
    let Some(centre) = tree.data(v) else { return 0.0 };
    let (mut sum, mut count) = (0.0, 0usize);
    for &o in lattice::stencil_offsets(d) {
        if o == [0; 3] {
            continue;
        }
        if let Some(n) = tree.vertex(VertexKey::new(v.level, lattice::add(v.index, o))) {
            if !n.is_hanging() {
                sum += n.data.u.as_f64();
                count += 1;
            }
        }
    }
    if count == 0 {
        return 0.0;
    }
    (centre.u.as_f64() - sum / count as f64).abs()
}

/// Histogram range carried between refinement steps. The first step bins
/// over `[0, max]`; later steps widen the range to cover new scores.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinStatistics {
    pub fitted: bool,
    pub lo: f64,
    pub hi: f64,
    pub counts: [usize; BINS],
}

impl BinStatistics {
    /// Fits the histogram to `scores`.
    pub fn fit(&mut self, scores: &[f64]) {
        let max = scores.iter().copied().fold(0.0, f64::max);
        let min = scores.iter().copied().fold(f64::INFINITY, f64::min);
        if self.fitted {
            self.lo = self.lo.min(min);
            self.hi = self.hi.max(max);
        } else {
            self.lo = 0.0;
            self.hi = max;
        }
        self.fitted = true;
        self.counts = [0; BINS];
        for &s in scores {
            self.counts[self.bin(s)] += 1;
        }
    }

    fn bin(&self, s: f64) -> usize {
        let width = self.hi - self.lo;
        if width <= 0.0 {
            return BINS - 1;
        }
        (((s - self.lo) / width * BINS as f64) as usize).min(BINS - 1)
    }

    fn lower_edge(&self, k: usize) -> f64 {
        self.lo + (self.hi - self.lo) * k as f64 / BINS as f64
    }

    /// Lower edge of the lowest bin such that the bins from there to the top
    /// hold the count closest to `fraction` of all entries, rounded up to a
    /// whole entry. The bottom bin is never selected; `None` when nothing
    /// lies above it.
    pub fn threshold(&self, fraction: f64) -> Option<f64> {
        let total: usize = self.counts.iter().sum();
        if total == 0 {
            return None;
        }
        if self.hi <= self.lo {
            return Some(self.lo);
        }
        let target = (fraction * total as f64).ceil();
        let mut best = (f64::INFINITY, BINS);
        let mut acc = 0usize;
        for k in (1..BINS).rev() {
            acc += self.counts[k];
            if acc == 0 {
                continue;
            }
            let miss = (acc as f64 - target).abs();
            if miss < best.0 {
                best = (miss, k);
            }
        }
        (best.1 < BINS).then(|| self.lower_edge(best.1))
    }
}

/// Scores all candidates, picks the top bins and refines every unrefined
/// same-level cell adjacent to a picked vertex. Returns the number of
/// refined cells.
pub fn select_and_refine<T: Real + Default>(tree: &mut Tree<T>, bins: &mut BinStatistics, max_depth: u32) -> usize {
    let candidates: Vec<(VertexKey, f64)> = tree
        .all_vertex_keys()
        .into_iter()
        .filter(|&v| is_candidate(tree, v, max_depth))
        .map(|v| (v, refinement_score(tree, v)))
        .collect();
    let scores: Vec<f64> = candidates.iter().map(|&(_, s)| s).collect();
    if scores.iter().all(|&s| s == 0.0) {
        return 0;
    }
    bins.fit(&scores);
    let Some(threshold) = bins.threshold(TARGET_FRACTION) else { return 0 };
    let mut cells: Vec<CellKey> = candidates
        .iter()
        .filter(|&&(_, s)| s >= threshold)
        .flat_map(|&(v, _)| tree.adjacent_cell_positions(v))
        .filter(|&c| tree.is_refined(c) == Some(false))
        .collect();
    cells.sort_unstable();
    cells.dedup();
    for &c in &cells {
        tree.refine_cell(c);
    }
    log::debug!("refined {} cells above score {threshold:e}", cells.len());
    cells.len()
}
