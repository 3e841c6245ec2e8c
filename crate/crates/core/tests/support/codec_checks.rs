//! Codec properties over seeded random values: the decoding error stays
//! within half a unit of the last mantissa bit, the chosen bpa is the
//! smallest admissible one, and encoding is bit-stable.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spacetree_mg::compression::{decode_stencil, decode_value, encode_stencil, encode_value, BPA_CODES};

/// Values spread over many binades, both signs, with some exact zeros and
/// powers of two mixed in. The range keeps the exponent of the widest
/// mantissa within a signed byte.
fn sample(rng: &mut ChaCha8Rng) -> f64 {
    match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 2f64.powi(rng.gen_range(-60..60)),
        _ => {
            let sign = if rng.gen_bool(0.5) { -1.0 } else { 1.0 };
            sign * rng.gen_range(0.1..1.0) * 10f64.powi(rng.gen_range(-20..20))
        }
    }
}

fn verdict(what: &str, total: usize, failures: usize) -> Result<String, String> {
    let line = format!("{total} {what}, {failures} failures");
    if failures == 0 {
        Ok(line)
    } else {
        Err(line)
    }
}

/// Single values at random bpa codes decode to within `2^(e-1)`.
pub fn round_trip(samples: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut failures = 0usize;
    for _ in 0..samples {
        let x = sample(&mut rng);
        let bpa = rng.gen_range(2..=8u8);
        let Ok((e, field)) = encode_value(x, bpa) else {
            failures += 1;
            continue;
        };
        let back = decode_value(e, field, bpa);
        let bound = if x == 0.0 { 0.0 } else { 2f64.powi(e as i32 - 1) };
        if (back - x).abs() > bound || (x != 0.0 && back.signum() != x.signum()) {
            failures += 1;
        }
    }
    verdict("values", samples, failures)
}

/// Stencils of nine values: the chosen code meets the tolerance and every
/// smaller code misses it somewhere.
pub fn bpa_minimal(samples: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut failures = 0usize;
    let stencils = samples / 9;
    for _ in 0..stencils {
        let values: Vec<f64> = (0..9).map(|_| sample(&mut rng) * 1e-3).collect();
        let eps = 10f64.powi(rng.gen_range(-14..-2));
        let c = encode_stencil(&values, eps);
        let decoded: Vec<f64> = decode_stencil(&c, values.len()).unwrap();
        let within = values.iter().zip(&decoded).all(|(a, b)| (a - b).abs() <= eps);
        let smaller_fail = BPA_CODES.iter().filter(|&&b| b < c.bpa).all(|&b| {
            if b == 0 {
                values.iter().any(|v| v.abs() > eps)
            } else {
                values.iter().any(|&v| match encode_value(v, b) {
                    Ok((e, f)) => (decode_value(e, f, b) - v).abs() > eps,
                    Err(_) => v.abs() > eps,
                })
            }
        });
        if !within || !smaller_fail {
            failures += 1;
        }
    }
    verdict("stencils", stencils, failures)
}

/// Encoding twice gives the same bytes, and decoded values re-encode to
/// them.
pub fn bit_stable(samples: usize) -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut failures = 0usize;
    let stencils = samples / 9;
    for _ in 0..stencils {
        let values: Vec<f64> = (0..9).map(|_| sample(&mut rng)).collect();
        let a = encode_stencil(&values, 1e-8);
        let b = encode_stencil(&values, 1e-8);
        let decoded: Vec<f64> = decode_stencil(&a, 9).unwrap();
        if a != b || encode_stencil(&decoded, 1e-8) != a {
            failures += 1;
        }
    }
    verdict("stencils", stencils, failures)
}
