//! Codec properties over 10^5 random values plus the tag word format.

#[path = "support/codec_checks.rs"]
mod codec_checks;

use proptest::prelude::*;
use spacetree_mg::compression::{decode_stencil, encode_stencil, encode_value, pack_tags, unpack_tags, BPA_CODES};

const SAMPLES: usize = 100_000;

#[test]
fn round_trip_error_is_half_an_ulp() {
    println!("round trip: {}", codec_checks::round_trip(SAMPLES).unwrap());
}

#[test]
fn chosen_bpa_is_minimal_and_sufficient() {
    codec_checks::bpa_minimal(SAMPLES).unwrap();
}

#[test]
fn payload_is_bit_stable() {
    codec_checks::bit_stable(SAMPLES).unwrap();
}

#[test]
fn exponent_overflow_is_reported() {
    assert!(encode_value(1e-30, 8).is_err());
    assert!(encode_value(1e-30, 2).is_ok());
    assert!(encode_value(1e300, 2).is_err());
    assert!(encode_value(f64::NAN, 4).is_err());
}

#[test]
fn single_precision_round_trip() {
    let values = [0.25f32, -1.5, 3.0e-4, 0.0];
    let c = encode_stencil(&values, 1e-6);
    let back: Vec<f32> = decode_stencil(&c, 4).unwrap();
    for (a, b) in values.iter().zip(&back) {
        assert!((a - b).abs() <= 1e-6);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn tags_round_trip(a in 0usize..8, b in 0usize..8, c in 0usize..8) {
        let bpa = [BPA_CODES[a], BPA_CODES[b], BPA_CODES[c]];
        let word = pack_tags(bpa).unwrap();
        prop_assert!(word < 1 << 9);
        prop_assert_eq!(unpack_tags(word), bpa);
    }

    #[test]
    fn invalid_bpa_is_rejected(bpa in prop_oneof![Just(1u8), 9u8..=255]) {
        prop_assert!(encode_value(1.0, bpa).is_err());
        prop_assert!(pack_tags([bpa, 0, 0]).is_err());
    }
}
