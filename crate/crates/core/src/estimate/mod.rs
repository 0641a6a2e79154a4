//! Entropy estimators over normalized address series.

pub mod nsb;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::NormalizedSeries;
pub use nsb::{nsb_from_multiplicities, Multiplicities, NsbResult};

/// Estimates with a bias bound above this are flagged low-confidence.
pub const MAX_BIAS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Nsb,
    Plugin,
    BytePlugin,
    BitmaskUpperBound,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Nsb => "nsb",
            Method::Plugin => "plugin",
            Method::BytePlugin => "byte_plugin",
            Method::BitmaskUpperBound => "bitmask_upper_bound",
        }
    }
}

/// Which records fed an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SampleScope {
    #[default]
    AllRuns,
    /// One sample per boot, for boot-time randomized objects.
    PerBoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyEstimate {
    pub method: Method,
    pub bits: f64,
    pub posterior_std_bits: f64,
    pub n_samples: usize,
    pub alphabet_log2: f64,
    pub bias_bound: f64,
    #[serde(default)]
    pub scope: SampleScope,
    #[serde(default)]
    pub low_confidence: bool,
}

impl EntropyEstimate {
    fn new(method: Method, bits: f64, std: f64, n: usize, alphabet_log2: f64) -> Self {
        let bits = bits.max(0.0);
        let bias_bound = bias_bound(bits, n);
        EntropyEstimate {
            method,
            bits,
            posterior_std_bits: std,
            n_samples: n,
            alphabet_log2,
            bias_bound,
            scope: SampleScope::AllRuns,
            low_confidence: bias_bound > MAX_BIAS,
        }
    }

    pub fn with_scope(mut self, scope: SampleScope) -> Self {
        self.scope = scope;
        self
    }
}

/// 2^(S/2) / N.
pub fn bias_bound(bits: f64, n: usize) -> f64 {
    (bits / 2.0).exp2() / n as f64
}

/// Smallest N with 2^(S/2) / N <= max_bias.
pub fn min_samples(entropy_bits: f64, max_bias: f64) -> u64 {
    assert!(entropy_bits >= 0.0 && max_bias > 0.0 && max_bias < 1.0);
    let x = (entropy_bits / 2.0).exp2() / max_bias;
    // guard against x landing a hair above an integer through rounding
    let r = x.round();
    if (x - r).abs() <= 1e-13 * x {
        r as u64
    } else {
        x.ceil() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bitmask {
    pub mask: u64,
    pub bit_count: u32,
}

impl Bitmask {
    pub fn new(mask: u64) -> Bitmask {
        let mask = mask & !(1 << 63);
        Bitmask { mask, bit_count: mask.count_ones() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitmaskScope {
    All,
    WithinBoot,
}

fn xor_spread(values: &[u64]) -> u64 {
    values.first().map_or(0, |&v0| values.iter().fold(0, |acc, &v| acc | (v ^ v0)))
}

/// OR over records of `value_i XOR value_0`, in address bit positions.
pub fn changing_bitmask(series: &NormalizedSeries, scope: BitmaskScope) -> Result<Bitmask> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let m = match scope {
        BitmaskScope::All => xor_spread(&series.values),
        BitmaskScope::WithinBoot => {
            let mut first: std::collections::HashMap<u32, u64> = Default::default();
            let mut m = 0;
            for (&v, &b) in series.values.iter().zip(&series.boots) {
                m |= v ^ *first.entry(b).or_insert(v);
            }
            m
        }
    };
    Ok(Bitmask::new(m.checked_shl(series.alignment_bits).unwrap_or(0)))
}

/// Bits that vary relative to the minimum. Unlike the XOR mask this does not
/// depend on where the series sits, so it serves as the default NSB alphabet.
pub fn spread_bits(values: &[u64]) -> u32 {
    let Some(&min) = values.iter().min() else { return 0 };
    values.iter().fold(0u64, |acc, &v| acc | (v - min)).count_ones()
}

fn plugin_bits(values: &[u64]) -> (f64, usize) {
    let mut v = values.to_vec();
    v.sort_unstable();
    let n = v.len() as f64;
    let (mut h, mut distinct, mut i) = (0.0, 0, 0);
    while i < v.len() {
        let j = i + v[i..].partition_point(|&x| x == v[i]);
        let p = (j - i) as f64 / n;
        h -= p * p.log2();
        distinct += 1;
        i = j;
    }
    (h.max(0.0), distinct)
}

/// Shannon entropy of the empirical distribution.
pub fn plugin_entropy(values: &[u64]) -> Result<EntropyEstimate> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (h, distinct) = plugin_bits(values);
    Ok(EntropyEstimate::new(Method::Plugin, h, 0.0, values.len(), (distinct as f64).log2()))
}

/// Sum over the eight address bytes of each byte's plugin entropy. Treats
/// bytes as independent, so it overstates entropy when they are correlated.
pub fn byte_plugin_entropy(series: &NormalizedSeries) -> Result<EntropyEstimate> {
    if series.is_empty() {
        return Err(Error::EmptySeries);
    }
    let (mut total, mut alphabet) = (0.0, 0.0);
    for byte in 0..8 {
        let mut counts = [0u64; 256];
        for &v in &series.values {
            let addr = v.checked_shl(series.alignment_bits).unwrap_or(0);
            counts[((addr >> (8 * byte)) & 0xff) as usize] += 1;
        }
        let n = series.len() as f64;
        let mut distinct = 0;
        for &c in counts.iter().filter(|&&c| c > 0) {
            let p = c as f64 / n;
            total -= p * p.log2();
            distinct += 1;
        }
        alphabet += (distinct as f64).log2();
    }
    Ok(EntropyEstimate::new(Method::BytePlugin, total, 0.0, series.len(), alphabet))
}

/// NSB posterior mean and std. `alphabet_log2` of `None` uses the spread of
/// the series.
pub fn nsb_entropy(values: &[u64], alphabet_log2: Option<f64>) -> Result<EntropyEstimate> {
    if values.is_empty() {
        return Err(Error::EmptySeries);
    }
    let alog2 = alphabet_log2.unwrap_or_else(|| spread_bits(values) as f64);
    let mult = Multiplicities::from_values(values);
    if mult.distinct as f64 > alog2.exp2() * (1.0 + 1e-12) {
        return Err(Error::AlphabetTooSmall { distinct: mult.distinct as usize, alphabet_log2: alog2 });
    }
    let r = nsb_from_multiplicities(&mult, alog2);
    Ok(EntropyEstimate::new(Method::Nsb, r.mean_bits, r.std_bits, values.len(), alog2))
}

/// The changing bitmask popcount as an entropy upper bound.
pub fn bitmask_upper_bound(series: &NormalizedSeries) -> Result<EntropyEstimate> {
    let b = changing_bitmask(series, BitmaskScope::All)?;
    let bits = b.bit_count as f64;
    Ok(EntropyEstimate::new(Method::BitmaskUpperBound, bits, 0.0, series.len(), bits))
}

/// Paired differences `a_i - b_i`.
pub fn difference_series(a: &[u64], b: &[u64]) -> Result<Vec<i64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(&x, &y)| x.wrapping_sub(y) as i64).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    #[default]
    Nsb,
    Plugin,
}

impl Estimator {
    pub fn estimate(self, values: &[u64], alphabet_log2: Option<f64>) -> Result<EntropyEstimate> {
        match self {
            Estimator::Nsb => nsb_entropy(values, alphabet_log2),
            Estimator::Plugin => plugin_entropy(values),
        }
    }
}

/// Entropy of the difference between two paired address series. The
/// differences are normalized at their own observed alignment and offset so
/// the alphabet covers exactly the bits that vary.
pub fn correlation_entropy(a: &[u64], b: &[u64], estimator: Estimator) -> Result<EntropyEstimate> {
    let d = difference_series(a, b)?;
    if d.is_empty() {
        return Err(Error::EmptySeries);
    }
    let min = *d.iter().min().unwrap();
    let shifted: Vec<u64> = d.iter().map(|&x| x.wrapping_sub(min) as u64).collect();
    let align = crate::sample::observed_alignment(&shifted, 0);
    let values: Vec<u64> = shifted.iter().map(|&x| x >> align).collect();
    estimator.estimate(&values, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: Vec<u64>, align: u32) -> NormalizedSeries {
        let n = values.len();
        NormalizedSeries { object: "x".into(), values, alignment_bits: align, boots: vec![0; n] }
    }

    #[test]
    fn min_samples_reference_points() {
        assert_eq!(min_samples(35.0, 0.05), 3_707_277);
        assert_eq!(min_samples(19.0, 0.05), 14_482);
        assert_eq!(min_samples(0.0, 0.05), 20);
        assert_eq!(min_samples(16.0, 0.05), 5_120);
    }

    #[test]
    fn plugin_basics() {
        assert_eq!(plugin_entropy(&[1, 2, 3, 4, 1, 2, 3, 4]).unwrap().bits, 2.0);
        assert_eq!(plugin_entropy(&[9; 10]).unwrap().bits, 0.0);
        assert!(matches!(plugin_entropy(&[]), Err(Error::EmptySeries)));
    }

    #[test]
    fn constant_bitmask_is_zero() {
        let s = series(vec![5; 4], 12);
        assert_eq!(changing_bitmask(&s, BitmaskScope::All).unwrap(), Bitmask { mask: 0, bit_count: 0 });
        assert_eq!(byte_plugin_entropy(&s).unwrap().bits, 0.0);
    }

    #[test]
    fn bitmask_in_address_positions() {
        let s = series(vec![0b100, 0b101, 0b110], 12);
        assert_eq!(changing_bitmask(&s, BitmaskScope::All).unwrap().mask, 0b11 << 12);
    }

    #[test]
    fn within_boot_scope() {
        let mut s = series(vec![1, 1, 7, 7], 12);
        s.boots = vec![0, 0, 1, 1];
        assert_eq!(changing_bitmask(&s, BitmaskScope::WithinBoot).unwrap().bit_count, 0);
        assert_eq!(changing_bitmask(&s, BitmaskScope::All).unwrap().bit_count, 2);
    }

    #[test]
    fn difference_pairs_by_index() {
        assert_eq!(difference_series(&[5, 7], &[7, 5]).unwrap(), vec![-2, 2]);
        assert!(matches!(difference_series(&[1], &[1, 2]), Err(Error::LengthMismatch(1, 2))));
        let e = correlation_entropy(&[0x1000, 0x5000, 0x9000], &[0x0, 0x4000, 0x8000], Estimator::Nsb).unwrap();
        assert_eq!(e.bits, 0.0);
    }

    #[test]
    fn nsb_alphabet_check() {
        assert!(matches!(nsb_entropy(&[1, 2, 3], Some(1.0)), Err(Error::AlphabetTooSmall { .. })));
    }

    #[test]
    fn no_coincidences_means_wide_posterior() {
        let v: Vec<u64> = (0..200u64).map(|i| i * 0x9e37_79b9 % (1 << 30)).collect();
        let e = nsb_entropy(&v, Some(30.0)).unwrap();
        assert!(e.posterior_std_bits > 1.0, "{e:?}");
    }
}
