//! Counter-based generator: SplitMix64's output function applied at an
//! arbitrary stream position, so any draw can be computed independently of
//! the others.

pub const RNG_ID: &str = "splitmix64-ctr/1";

const GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream keys derived from a seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    key: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64) -> CounterRng {
        CounterRng { key: mix(seed ^ mix(stream.wrapping_add(GAMMA))) }
    }

    /// The 64-bit word at position `ctr`.
    #[inline]
    pub fn at(&self, ctr: u64) -> u64 {
        mix(self.key.wrapping_add(ctr.wrapping_add(1).wrapping_mul(GAMMA)))
    }

    /// Uniform integer in [0, n) by multiply-shift. Bias is below n / 2^64.
    #[inline]
    pub fn below(&self, ctr: u64, n: u64) -> u64 {
        ((self.at(ctr) as u128 * n as u128) >> 64) as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_sequential_splitmix() {
        // SplitMix64 seeded with s emits mix(s + k*GAMMA) for k = 1, 2, ...
        let r = CounterRng { key: 1234567 };
        let mut state: u64 = 1234567;
        for ctr in 0..5 {
            state = state.wrapping_add(GAMMA);
            assert_eq!(r.at(ctr), mix(state));
        }
    }

    #[test]
    fn below_stays_in_range() {
        let r = CounterRng::new(9, 0);
        for ctr in 0..10_000 {
            assert!(r.below(ctr, 923) < 923);
        }
        assert_eq!(r.below(3, 1), 0);
    }

    #[test]
    fn streams_differ() {
        assert_ne!(CounterRng::new(1, 0).at(0), CounterRng::new(1, 1).at(0));
        assert_ne!(CounterRng::new(1, 0).at(0), CounterRng::new(2, 0).at(0));
    }

    // 2^20 slots, 10^7 draws: the chi-square statistic has mean K-1 and
    // sd sqrt(2(K-1)); it must land within 3 sd.
    #[test]
    fn equidistributed_over_2_20_slots() {
        let k: u64 = 1 << 20;
        let n: u64 = 10_000_000;
        let r = CounterRng::new(42, 7);
        let mut counts = vec![0u32; k as usize];
        for ctr in 0..n {
            counts[r.below(ctr, k) as usize] += 1;
        }
        let e = n as f64 / k as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        let df = (k - 1) as f64;
        assert!((chi2 - df).abs() < 3.0 * (2.0 * df).sqrt(), "chi2 {chi2}");
    }
}
