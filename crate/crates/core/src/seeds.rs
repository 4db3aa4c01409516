//! Deterministic seed derivation.
//!
//! Every random stream in a run (fuel raster, ignition source, exploration
//! noise, replay sampling, evaluation episodes, ...) is seeded from the
//! single master seed by hashing `(master, stream name, index)` with a fixed
//! algorithm, so results are reproducible across runs, platforms, and worker
//! counts. The hash is FNV-1a over the inputs followed by a SplitMix64
//! finalizer; it is implemented here rather than via `std`'s hashers because
//! those make no cross-version stability promise.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

#[inline]
fn fnv1a(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// SplitMix64 finalizer; decorrelates the structured FNV input.
#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the sub-seed for `(stream, index)` under `master`.
///
/// Distinct `(stream, index)` pairs yield independent-looking seeds; equal
/// inputs always yield equal seeds.
pub fn substream(master: u64, stream: &str, index: u64) -> u64 {
    let mut h = FNV_OFFSET;
    h = fnv1a(h, &master.to_le_bytes());
    h = fnv1a(h, stream.as_bytes());
    h = fnv1a(h, &index.to_le_bytes());
    splitmix64(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_inputs_give_equal_seeds() {
        assert_eq!(substream(42, "fire", 7), substream(42, "fire", 7));
    }

    #[test]
    fn distinct_streams_and_indices_differ() {
        let base = substream(42, "fire", 0);
        assert_ne!(base, substream(42, "fire", 1));
        assert_ne!(base, substream(42, "noise", 0));
        assert_ne!(base, substream(43, "fire", 0));
    }

    #[test]
    fn stream_name_is_not_confusable_with_index_bytes() {
        // "a" + index 0x62 must differ from "ab" + index 0 shifted; the FNV
        // byte feed keeps field boundaries implicit, so check a known pair.
        assert_ne!(substream(1, "a", 98), substream(1, "ab", 0));
    }
}
