//! Hierarchical operator storage and the bytes-per-attribute codec.
//!
//! Operators are stored as differences to their geometric counterparts.
//! Each difference stencil is encoded with the smallest `bpa` in
//! `{0, 2, ..., 8}` that meets the tolerance. `bpa = 0` means the operator
//! equals its reference and carries no payload. Otherwise every entry takes
//! one signed exponent byte followed by a `bpa - 1` byte little-endian
//! mantissa field whose top bit is the sign.

use crate::discretization::{Stencil, TransferStencil};
use crate::lattice;
use crate::scalar::Real;

/// Admissible bytes-per-attribute codes in increasing order.
pub const BPA_CODES: [u8; 8] = [0, 2, 3, 4, 5, 6, 7, 8];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("bpa {0} is not one of 2..=8")]
    InvalidBpa(u8),
    #[error("exponent {0} does not fit into a signed byte")]
    ExponentOverflow(i32),
    #[error("non-finite value cannot be encoded")]
    NonFinite,
    #[error("payload holds {got} bytes, expected {expected}")]
    PayloadLength { got: usize, expected: usize },
    #[error("invalid bpa tag {0}")]
    InvalidTag(u8),
}

/// Number of magnitude bits of the mantissa for a given bpa.
#[inline]
pub fn mantissa_bits(bpa: u8) -> u32 {
    8 * (bpa as u32 - 1) - 1
}

/// Encodes `x` as `(e, field)` with `|x| ~ m * 2^e`, the mantissa `m`
/// normalised to `2^(B-1) <= m < 2^B` and rounded half to even. The sign
/// sits in bit `B` of `field`.
pub fn encode_value(x: f64, bpa: u8) -> Result<(i8, u64), CodecError> {
    if !(2..=8).contains(&bpa) {
        return Err(CodecError::InvalidBpa(bpa));
    }
    if !x.is_finite() {
        return Err(CodecError::NonFinite);
    }
    if x == 0.0 {
        return Ok((0, 0));
    }
    let b = mantissa_bits(bpa) as i32;
    let mag = x.abs();
    let mut e = mag.log2().floor() as i32 - (b - 1);
    let mut m = (mag * 2f64.powi(-e)).round_ties_even();
    // log2 may be off by one near powers of two, and rounding may carry.
    while m >= 2f64.powi(b) {
        e += 1;
        m = (mag * 2f64.powi(-e)).round_ties_even();
    }
    while m < 2f64.powi(b - 1) {
        e -= 1;
        m = (mag * 2f64.powi(-e)).round_ties_even();
    }
    if !(-127..=127).contains(&e) {
        return Err(CodecError::ExponentOverflow(e));
    }
    let sign = if x < 0.0 { 1u64 << b } else { 0 };
    Ok((e as i8, m as u64 | sign))
}

/// Inverse of [`encode_value`].
pub fn decode_value(e: i8, field: u64, bpa: u8) -> f64 {
    let b = mantissa_bits(bpa);
    let m = (field & ((1u64 << b) - 1)) as f64;
    let v = m * 2f64.powi(e as i32);
    if field >> b & 1 == 1 {
        -v
    } else {
        v
    }
}

/// One encoded stencil.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CompressedStencil {
    pub bpa: u8,
    pub payload: Vec<u8>,
}

fn encode_entry(x: f64, bpa: u8, eps: f64) -> Option<(i8, u64)> {
    match encode_value(x, bpa) {
        Ok((e, f)) => ((decode_value(e, f, bpa) - x).abs() <= eps).then_some((e, f)),
        // Values too small for the exponent byte may still be dropped.
        Err(_) if x.abs() <= eps => Some((0, 0)),
        Err(_) => None,
    }
}

fn encode_at<T: Real>(values: &[T], bpa: u8, eps: f64) -> Option<Vec<u8>> {
    let mut payload = Vec::with_capacity(values.len() * bpa as usize);
    for &v in values {
        let (e, field) = encode_entry(v.as_f64(), bpa, eps)?;
        payload.push(e as u8);
        payload.extend_from_slice(&field.to_le_bytes()[..bpa as usize - 1]);
    }
    Some(payload)
}

/// Encodes with the smallest bpa whose decoding error stays within `eps`.
///
/// If no code meets `eps` (which needs `eps` below the resolution of 55-bit
/// mantissas or non-finite input) the stencil is stored at bpa 8 with the
/// entries that cannot be represented replaced by zero.
pub fn encode_stencil<T: Real>(values: &[T], eps: f64) -> CompressedStencil {
    if values.iter().all(|v| v.as_f64().abs() <= eps) {
        return CompressedStencil { bpa: 0, payload: Vec::new() };
    }
    for bpa in 2..=8u8 {
        if let Some(payload) = encode_at(values, bpa, eps) {
            return CompressedStencil { bpa, payload };
        }
    }
    let mut payload = Vec::with_capacity(values.len() * 8);
    for &v in values {
        let (e, field) = encode_value(v.as_f64(), 8).unwrap_or((0, 0));
        payload.push(e as u8);
        payload.extend_from_slice(&field.to_le_bytes()[..7]);
    }
    CompressedStencil { bpa: 8, payload }
}

/// Decodes `count` entries.
pub fn decode_stencil<T: Real>(c: &CompressedStencil, count: usize) -> Result<Vec<T>, CodecError> {
    if c.bpa == 0 {
        return if c.payload.is_empty() {
            Ok(vec![T::zero(); count])
        } else {
            Err(CodecError::PayloadLength { got: c.payload.len(), expected: 0 })
        };
    }
    if !(2..=8).contains(&c.bpa) {
        return Err(CodecError::InvalidBpa(c.bpa));
    }
    let width = c.bpa as usize;
    if c.payload.len() != count * width {
        return Err(CodecError::PayloadLength { got: c.payload.len(), expected: count * width });
    }
    Ok(c.payload
        .chunks_exact(width)
        .map(|chunk| {
            let mut bytes = [0u8; 8];
            bytes[..width - 1].copy_from_slice(&chunk[1..]);
            T::lit(decode_value(chunk[0] as i8, u64::from_le_bytes(bytes), c.bpa))
        })
        .collect())
}

/// Maps a bpa to its 3-bit tag.
pub fn bpa_to_tag(bpa: u8) -> Result<u8, CodecError> {
    BPA_CODES.iter().position(|&b| b == bpa).map(|p| p as u8).ok_or(CodecError::InvalidBpa(bpa))
}

/// Packs the tags of the three operators into bits 0..9 of a `u16`.
pub fn pack_tags(bpa: [u8; 3]) -> Result<u16, CodecError> {
    let mut word = 0u16;
    for (k, &b) in bpa.iter().enumerate() {
        word |= (bpa_to_tag(b)? as u16) << (3 * k);
    }
    Ok(word)
}

pub fn unpack_tags(word: u16) -> [u8; 3] {
    std::array::from_fn(|k| BPA_CODES[(word >> (3 * k) & 7) as usize])
}

/// Differences of the stored operators to their geometric references.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalOps<T> {
    pub a_hat: Stencil<T>,
    pub p_hat: TransferStencil<T>,
    pub r_hat: TransferStencil<T>,
}

/// The stored operators of one vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexOps<T> {
    pub a: Stencil<T>,
    pub p: TransferStencil<T>,
    pub r: TransferStencil<T>,
}

fn diff<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a - b).collect()
}

fn sum<T: Real>(x: &[T], y: &[T]) -> Vec<T> {
    x.iter().zip(y).map(|(&a, &b)| a + b).collect()
}

pub fn hierarchize<T: Real>(ops: &VertexOps<T>, reference: &VertexOps<T>) -> HierarchicalOps<T> {
    let d = ops.a.d;
    HierarchicalOps {
        a_hat: Stencil::from_values(d, diff(&ops.a.values, &reference.a.values)),
        p_hat: TransferStencil::from_values(d, diff(&ops.p.values, &reference.p.values)),
        r_hat: TransferStencil::from_values(d, diff(&ops.r.values, &reference.r.values)),
    }
}

pub fn dehierarchize<T: Real>(h: &HierarchicalOps<T>, reference: &VertexOps<T>) -> VertexOps<T> {
    let d = h.a_hat.d;
    VertexOps {
        a: Stencil::from_values(d, sum(&h.a_hat.values, &reference.a.values)),
        p: TransferStencil::from_values(d, sum(&h.p_hat.values, &reference.p.values)),
        r: TransferStencil::from_values(d, sum(&h.r_hat.values, &reference.r.values)),
    }
}

/// Persistent compressed operator record of a vertex.
#[derive(Clone, Debug, PartialEq, Eq, Default)]
pub struct CompressedOps {
    /// Three 3-bit bpa tags for A, P and R.
    pub tags: u16,
    /// Payload streams of A, P and R, concatenated.
    pub payload: Vec<u8>,
}

impl CompressedOps {
    pub fn bpa(&self) -> [u8; 3] {
        unpack_tags(self.tags)
    }

    /// Persistent size: the tag word plus the payload.
    pub fn bytes(&self) -> usize {
        2 + self.payload.len()
    }
}

/// Compresses operators against their references with tolerance `eps`.
pub fn compress_ops<T: Real>(ops: &VertexOps<T>, reference: &VertexOps<T>, eps: f64) -> CompressedOps {
    let h = hierarchize(ops, reference);
    let parts = [
        encode_stencil(&h.a_hat.values, eps),
        encode_stencil(&h.p_hat.values, eps),
        encode_stencil(&h.r_hat.values, eps),
    ];
    let tags = pack_tags([parts[0].bpa, parts[1].bpa, parts[2].bpa]).expect("encoder yields valid codes");
    let payload = parts.into_iter().flat_map(|p| p.payload).collect();
    CompressedOps { tags, payload }
}

/// Rebuilds operators from their compressed differences.
pub fn reconstruct_ops<T: Real>(c: &CompressedOps, reference: &VertexOps<T>) -> Result<VertexOps<T>, CodecError> {
    let d = reference.a.d;
    let counts = [lattice::ipow(3, d), lattice::ipow(5, d), lattice::ipow(5, d)];
    let bpa = c.bpa();
    let mut offset = 0;
    let mut decoded = Vec::with_capacity(3);
    for k in 0..3 {
        let len = counts[k] * bpa[k] as usize;
        let end = offset + len;
        if end > c.payload.len() {
            return Err(CodecError::PayloadLength { got: c.payload.len(), expected: end });
        }
        let part = CompressedStencil { bpa: bpa[k], payload: c.payload[offset..end].to_vec() };
        decoded.push(decode_stencil::<T>(&part, counts[k])?);
        offset = end;
    }
    if offset != c.payload.len() {
        return Err(CodecError::PayloadLength { got: c.payload.len(), expected: offset });
    }
    let r = decoded.pop().expect("three parts");
    let p = decoded.pop().expect("three parts");
    let a = decoded.pop().expect("three parts");
    let h = HierarchicalOps {
        a_hat: Stencil::from_values(d, a),
        p_hat: TransferStencil::from_values(d, p),
        r_hat: TransferStencil::from_values(d, r),
    };
    Ok(dehierarchize(&h, reference))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_value_is_exact() {
        let (e, m) = encode_value(0.625, 2).unwrap();
        assert_eq!((e, m), (-7, 80));
        assert_eq!(decode_value(e, m, 2), 0.625);
        let (e, m) = encode_value(-0.625, 2).unwrap();
        assert_eq!(decode_value(e, m, 2), -0.625);
    }

    #[test]
    fn zero_round_trips() {
        assert_eq!(encode_value(0.0, 5).unwrap(), (0, 0));
        assert_eq!(decode_value(0, 0, 5), 0.0);
    }

    #[test]
    fn third_at_three_bytes() {
        let (e, m) = encode_value(1.0 / 3.0, 3).unwrap();
        assert_eq!(e, -16);
        assert!((decode_value(e, m, 3) - 1.0 / 3.0).abs() <= 2f64.powi(e as i32 - 1));
    }

    #[test]
    fn rejects_bad_input() {
        assert_eq!(encode_value(1.0, 1), Err(CodecError::InvalidBpa(1)));
        assert_eq!(encode_value(f64::NAN, 4), Err(CodecError::NonFinite));
        assert!(matches!(encode_value(1e-60, 2), Err(CodecError::ExponentOverflow(_))));
    }

    #[test]
    fn stencil_codes() {
        let zero = encode_stencil(&[0.0f64; 9], 1e-8);
        assert_eq!((zero.bpa, zero.payload.len()), (0, 0));
        let dyadic = encode_stencil(&[0.625f64, -0.625, 0.625], 1e-8);
        assert_eq!(dyadic.bpa, 2);
        assert_eq!(decode_stencil::<f64>(&dyadic, 3).unwrap(), vec![0.625, -0.625, 0.625]);
        assert!(decode_stencil::<f64>(&dyadic, 4).is_err());
    }

    #[test]
    fn tags_fit_nine_bits() {
        for a in BPA_CODES {
            for b in BPA_CODES {
                for c in BPA_CODES {
                    let w = pack_tags([a, b, c]).unwrap();
                    assert!(w < 1 << 9);
                    assert_eq!(unpack_tags(w), [a, b, c]);
                }
            }
        }
        assert!(pack_tags([1, 0, 0]).is_err());
    }
}
