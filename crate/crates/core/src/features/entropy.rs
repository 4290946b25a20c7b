/// Shannon entropy (base 2) of the byte-value distribution, in bits per byte.
///
/// Empty input yields 0.0; the result is always within [0, 8].
pub fn payload_entropy(payload: &[u8]) -> f64 {
    if payload.is_empty() {
        return 0.0;
    }
    let mut freq = [0usize; 256];
    for &b in payload {
        freq[usize::from(b)] += 1;
    }
    let len = payload.len() as f64;
    let h: f64 = freq
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / len;
            -p * p.log2()
        })
        .sum();
    // Summation can land a hair outside the bounds; `+ 0.0` turns -0 into 0.
    h.clamp(0.0, 8.0) + 0.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn anchors() {
        assert_eq!(payload_entropy(&[]), 0.0);
        assert_eq!(payload_entropy(&[0x41; 100]), 0.0);
        assert_eq!(payload_entropy(&[0x00, 0xff]), 1.0);
        let all: Vec<u8> = (0..=255).collect();
        assert!((payload_entropy(&all) - 8.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn bounded_and_permutation_invariant(mut data in proptest::collection::vec(any::<u8>(), 0..600), seed in any::<u64>()) {
            let h = payload_entropy(&data);
            prop_assert!((0.0..=8.0).contains(&h));
            use rand::{seq::SliceRandom, SeedableRng};
            data.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert!((payload_entropy(&data) - h).abs() < 1e-12);
        }
    }
}
