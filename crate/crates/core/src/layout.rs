//! Analysis products over a sample set: randomization classes, contiguity
//! groups, address ranges, histograms and the distance-entropy matrix.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::{correlation_entropy, EntropyEstimate, Estimator, SampleScope};
use crate::sample::{observed_alignment, SampleSet};
use crate::special::gamma_q;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizationClass {
    Runtime,
    BootTime,
    NotRandomized,
    Indeterminate,
}

impl RandomizationClass {
    pub fn as_str(self) -> &'static str {
        match self {
            RandomizationClass::Runtime => "runtime",
            RandomizationClass::BootTime => "boot_time",
            RandomizationClass::NotRandomized => "not_randomized",
            RandomizationClass::Indeterminate => "indeterminate",
        }
    }
}

/// Classifies one object's series given the boot index of each record.
///
/// Variation inside a boot settles `runtime` on its own. The other verdicts
/// need at least two boots and a boot with two or more runs.
pub fn classify(values: &[u64], boots: &[u32]) -> RandomizationClass {
    let mut first: HashMap<u32, (u64, usize)> = HashMap::new();
    let mut varies_within = false;
    for (&v, &b) in values.iter().zip(boots) {
        let e = first.entry(b).or_insert((v, 0));
        e.1 += 1;
        varies_within |= e.0 != v;
    }
    if varies_within {
        return RandomizationClass::Runtime;
    }
    let repeated = first.values().any(|&(_, n)| n >= 2);
    if first.len() < 2 || !repeated {
        return RandomizationClass::Indeterminate;
    }
    let v0 = values[0];
    if values.iter().all(|&v| v == v0) {
        RandomizationClass::NotRandomized
    } else {
        RandomizationClass::BootTime
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectGroup {
    pub members: Vec<String>,
    pub representative: String,
    /// addr(member) - addr(representative), parallel to `members`.
    pub offsets: Vec<i64>,
    /// False when members have missing addresses and cannot be analyzed.
    pub usable: bool,
}

fn delta_hash(values: &[u64]) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    let v0 = values[0];
    for &v in values {
        v.wrapping_sub(v0).hash(&mut h);
    }
    h.finish()
}

fn constant_difference(a: &[u64], b: &[u64]) -> bool {
    let d0 = a[0].wrapping_sub(b[0]);
    a.iter().zip(b).all(|(x, y)| x.wrapping_sub(*y) == d0)
}

/// Partitions objects into maximal groups whose pairwise address
/// differences never change. Objects with missing addresses stay alone.
pub fn group_contiguous(set: &SampleSet) -> Vec<ObjectGroup> {
    let mut groups: Vec<ObjectGroup> = Vec::new();
    let mut buckets: HashMap<u64, Vec<usize>> = HashMap::new();
    let mut reps: Vec<&[u64]> = Vec::new();
    let mut names: Vec<&String> = set.objects().iter().collect();
    names.sort();
    for name in names {
        let Some(series) = set.series(name).filter(|s| !s.is_empty()) else {
            groups.push(ObjectGroup { members: vec![name.clone()], representative: name.clone(), offsets: vec![0], usable: false });
            reps.push(&[]);
            continue;
        };
        let bucket = buckets.entry(delta_hash(series)).or_default();
        if let Some(&g) = bucket.iter().find(|&&g| constant_difference(series, reps[g])) {
            let off = series[0].wrapping_sub(reps[g][0]) as i64;
            groups[g].members.push(name.clone());
            groups[g].offsets.push(off);
        } else {
            bucket.push(groups.len());
            groups.push(ObjectGroup { members: vec![name.clone()], representative: name.clone(), offsets: vec![0], usable: true });
            reps.push(series);
        }
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AddressRange {
    pub object: String,
    pub min: u64,
    pub max: u64,
}

/// Observed extent of every object with at least one address.
pub fn layout_ranges(set: &SampleSet) -> Vec<AddressRange> {
    set.objects()
        .iter()
        .filter_map(|o| {
            let (mut lo, mut hi) = (u64::MAX, 0);
            for a in set.column(o)?.flatten() {
                lo = lo.min(a);
                hi = hi.max(a);
            }
            (lo <= hi).then(|| AddressRange { object: o.clone(), min: lo, max: hi })
        })
        .collect()
}

pub const BINS: usize = 100;
/// Uniformity verdict threshold on the chi-square p-value.
pub const P_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_count: usize,
    pub lo: u64,
    pub hi: u64,
    pub counts: Vec<u64>,
    pub probabilities: Vec<f64>,
    pub max_deviation: f64,
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub uniform: bool,
}

impl Histogram {
    /// Lower edge of bin `i`; bin `i` covers [edge(i), edge(i+1)).
    pub fn edge(&self, i: usize) -> u64 {
        self.lo + ((self.hi - self.lo) as u128 * i as u128 / BINS as u128) as u64
    }
}

/// 100 equal-width bins over [min, max] with a chi-square test against a
/// uniform law on the observed address lattice.
pub fn histogram(values: &[u64]) -> Result<Histogram> {
    if values.len() < BINS {
        return Err(Error::Domain(format!("histogram needs at least {BINS} samples, got {}", values.len())));
    }
    let lo = *values.iter().min().unwrap();
    let hi = *values.iter().max().unwrap();
    if lo == hi {
        return Err(Error::DegenerateRange(lo));
    }
    let span = (hi - lo) as u128;
    let bin = |v: u64| (((v - lo) as u128 * BINS as u128 / span) as usize).min(BINS - 1);
    let mut counts = vec![0u64; BINS];
    for &v in values {
        counts[bin(v)] += 1;
    }
    // lattice points lo + k*g, k = 0..=last
    let g = observed_alignment(values, 0);
    let last = span >> g;
    let first_k = |i: usize| (i as u128 * last).div_ceil(BINS as u128);
    let n = values.len() as f64;
    let (mut chi, mut used) = (0.0, 0usize);
    for (i, &obs) in counts.iter().enumerate() {
        let end = if i + 1 == BINS { last + 1 } else { first_k(i + 1) };
        let slots = end - first_k(i);
        if slots == 0 {
            continue;
        }
        let exp = n * slots as f64 / (last + 1) as f64;
        chi += (obs as f64 - exp).powi(2) / exp;
        used += 1;
    }
    let df = used.saturating_sub(1).max(1);
    let p = gamma_q(df as f64 / 2.0, chi / 2.0);
    let probabilities: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
    let max_deviation = probabilities.iter().map(|p| (p - 1.0 / BINS as f64).abs()).fold(0.0, f64::max);
    Ok(Histogram {
        bin_count: BINS,
        lo,
        hi,
        counts,
        probabilities,
        max_deviation,
        chi_square: chi,
        degrees_of_freedom: df,
        p_value: p,
        uniform: p > P_THRESHOLD,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct EstimatorConfig {
    pub estimator: Estimator,
    /// Alphabet for absolute estimates, instead of the observed spread.
    pub alphabet_override_bits: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<EntropyEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Cell {
    fn from(r: Result<EntropyEstimate>) -> Cell {
        match r {
            Ok(e) => Cell { estimate: Some(e), error: None },
            Err(e) => Cell { estimate: None, error: Some(e.to_string()) },
        }
    }

    pub fn bits(&self) -> Option<f64> {
        self.estimate.map(|e| e.bits)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEntropyMatrix {
    pub labels: Vec<String>,
    pub diagonal: Vec<Cell>,
    /// Full symmetric matrix; `cells[i][i]` repeats the diagonal.
    pub cells: Vec<Vec<Cell>>,
}

impl DistanceEntropyMatrix {
    pub fn index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn cell(&self, a: &str, b: &str) -> Option<&Cell> {
        Some(&self.cells[self.index(a)?][self.index(b)?])
    }
}

/// Addresses of one object, reduced to the first record of each boot when
/// `per_boot` is set.
pub fn sample_rows(set: &SampleSet, per_boot: bool) -> Vec<usize> {
    if !per_boot {
        return (0..set.len()).collect();
    }
    let mut seen = vec![false; set.boots().len()];
    set.runs()
        .iter()
        .enumerate()
        .filter(|(_, r)| !std::mem::replace(&mut seen[r.boot as usize], true))
        .map(|(i, _)| i)
        .collect()
}

fn pick(values: &[u64], rows: &[usize]) -> Vec<u64> {
    rows.iter().map(|&r| values[r]).collect()
}

/// Absolute entropy of a series, normalized at its observed alignment.
pub fn absolute_entropy(addresses: &[u64], page_bits: u32, cfg: &EstimatorConfig) -> Result<EntropyEstimate> {
    let a = observed_alignment(addresses, page_bits);
    let values: Vec<u64> = addresses.iter().map(|&x| x >> a).collect();
    cfg.estimator.estimate(&values, cfg.alphabet_override_bits)
}

/// Diagonal = absolute entropy of each usable group's representative;
/// off-diagonal = correlation entropy between representatives. Pairs of
/// boot-time objects, and boot-time diagonals, use one sample per boot.
pub fn distance_matrix(
    set: &SampleSet,
    groups: &[ObjectGroup],
    classes: &HashMap<String, RandomizationClass>,
    cfg: &EstimatorConfig,
) -> DistanceEntropyMatrix {
    let mut labels: Vec<String> = groups.iter().filter(|g| g.usable).map(|g| g.representative.clone()).collect();
    labels.sort_by_key(|l| set.object_index(l));
    let per_boot_rows = sample_rows(set, true);
    let boot_time = |l: &str| classes.get(l) == Some(&RandomizationClass::BootTime);
    let page_bits = set.platform().page_bits();

    let diagonal: Vec<Cell> = labels
        .par_iter()
        .map(|l| {
            let v = set.series(l).expect("usable");
            let r = if boot_time(l) {
                absolute_entropy(&pick(v, &per_boot_rows), page_bits, cfg).map(|e| e.with_scope(SampleScope::PerBoot))
            } else {
                absolute_entropy(v, page_bits, cfg)
            };
            Cell::from(r)
        })
        .collect();

    let pairs: Vec<(usize, usize)> = (0..labels.len()).flat_map(|i| (i + 1..labels.len()).map(move |j| (i, j))).collect();
    let off: Vec<Cell> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a, b) = (set.series(&labels[i]).unwrap(), set.series(&labels[j]).unwrap());
            let r = if boot_time(&labels[i]) && boot_time(&labels[j]) {
                correlation_entropy(&pick(a, &per_boot_rows), &pick(b, &per_boot_rows), cfg.estimator)
                    .map(|e| e.with_scope(SampleScope::PerBoot))
            } else {
                correlation_entropy(a, b, cfg.estimator)
            };
            Cell::from(r)
        })
        .collect();

    let n = labels.len();
    let mut cells: Vec<Vec<Cell>> = (0..n).map(|i| (0..n).map(|_| diagonal[i].clone()).collect()).collect();
    for (&(i, j), c) in pairs.iter().zip(off) {
        cells[i][j] = c.clone();
        cells[j][i] = c;
    }
    DistanceEntropyMatrix { labels, diagonal, cells }
}

// CSV exports. Columns are fixed; addresses are hex.

pub fn histogram_csv(hists: &[(String, Histogram)]) -> String {
    let mut s = String::from("object,bin_lo,bin_hi,count,probability\n");
    for (name, h) in hists {
        for i in 0..h.bin_count {
            let hi = if i + 1 == h.bin_count { h.hi } else { h.edge(i + 1) };
            writeln!(s, "{name},{:#x},{:#x},{},{:.6}", h.edge(i), hi, h.counts[i], h.probabilities[i]).unwrap();
        }
    }
    s
}

fn flags(c: &Cell) -> String {
    let mut f: Vec<String> = Vec::new();
    if let Some(e) = &c.estimate {
        if e.low_confidence {
            f.push("low_confidence".into());
        }
        if e.scope == SampleScope::PerBoot {
            f.push("per_boot".into());
        }
    }
    if let Some(err) = &c.error {
        f.push(format!("error: {}", err.replace([',', '\n'], " ")));
    }
    f.join(";")
}

pub fn matrix_csv(m: &DistanceEntropyMatrix) -> String {
    let mut s = String::from("row,col,bits,std,method,flags\n");
    for (i, row) in m.cells.iter().enumerate() {
        for (j, c) in row.iter().enumerate() {
            match &c.estimate {
                Some(e) => writeln!(s, "{},{},{:.4},{:.4},{},{}", m.labels[i], m.labels[j], e.bits, e.posterior_std_bits, e.method.as_str(), flags(c)),
                None => writeln!(s, "{},{},,,,{}", m.labels[i], m.labels[j], flags(c)),
            }
            .unwrap();
        }
    }
    s
}

pub fn ranges_csv(ranges: &[AddressRange]) -> String {
    let mut s = String::from("object,min,max\n");
    for r in ranges {
        writeln!(s, "{},{:#x},{:#x}", r.object, r.min, r.max).unwrap();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sample::{Header, Platform, RunRecord, Source};

    fn set(cols: &[(&str, Vec<u64>)], boots: &[u32]) -> SampleSet {
        let p = Platform { os: "linux".into(), arch: "x86_64".into(), kernel: "t".into(), page_size: 4096, source: Source::Synthetic };
        let mut s = SampleSet::new(Header::new(p), cols.iter().map(|c| c.0.to_string()).collect()).unwrap();
        for (i, &b) in boots.iter().enumerate() {
            let addresses = cols.iter().map(|(n, v)| (n.to_string(), Some(v[i]))).collect();
            s.push(RunRecord { boot_id: format!("b{b}"), run_id: i as u64 + 1, timestamp: 0, addresses }).unwrap();
        }
        s
    }

    #[test]
    fn classification() {
        let boots = [0, 0, 1, 1];
        assert_eq!(classify(&[1, 1, 2, 2], &boots), RandomizationClass::BootTime);
        assert_eq!(classify(&[1, 1, 1, 1], &boots), RandomizationClass::NotRandomized);
        assert_eq!(classify(&[1, 2, 2, 2], &boots), RandomizationClass::Runtime);
        assert_eq!(classify(&[1, 1], &[0, 0]), RandomizationClass::Indeterminate);
        assert_eq!(classify(&[1, 2], &[0, 1]), RandomizationClass::Indeterminate);
        assert_eq!(classify(&[1, 2], &[0, 0]), RandomizationClass::Runtime);
    }

    #[test]
    fn groups_by_constant_difference() {
        let s = set(
            &[("b", vec![0x1000, 0x5000, 0x3000]), ("a", vec![0x3000, 0x7000, 0x5000]), ("c", vec![0x1000, 0x2000, 0x3000])],
            &[0, 0, 0],
        );
        let g = group_contiguous(&s);
        assert_eq!(g.len(), 2);
        assert_eq!(g[0].members, vec!["a", "b"]);
        assert_eq!(g[0].representative, "a");
        assert_eq!(g[0].offsets, vec![0, -0x2000]);
        assert_eq!(g[1].members, vec!["c"]);
    }

    #[test]
    fn ranges() {
        let s = set(&[("a", vec![0x3000, 0x1000, 0x2000]), ("k", vec![0x9000; 3])], &[0, 0, 0]);
        let r = layout_ranges(&s);
        assert_eq!(r[0], AddressRange { object: "a".into(), min: 0x1000, max: 0x3000 });
        assert_eq!((r[1].min, r[1].max), (0x9000, 0x9000));
        assert!(ranges_csv(&r).starts_with("object,min,max\n"));
    }

    #[test]
    fn point_mass_histogram() {
        assert!(matches!(histogram(&[0x1000; 200]), Err(Error::DegenerateRange(0x1000))));
    }

    #[test]
    fn uniform_lattice_histogram() {
        // every lattice point exactly once: perfectly uniform by construction
        let v: Vec<u64> = (0..1000u64).map(|k| 0x7f00_0000_0000 + (k << 12)).collect();
        let h = histogram(&v).unwrap();
        assert_eq!(h.counts.iter().sum::<u64>(), 1000);
        assert!(h.uniform && h.chi_square < 1e-9);
        // a lattice coarser than 100 bins leaves empty bins without failing
        let v: Vec<u64> = (0..300u64).map(|k| (k % 30) << 16).collect();
        assert!(histogram(&v).unwrap().uniform);
        assert!(histogram_csv(&[("x".into(), histogram(&v).unwrap())]).lines().count() == 101);
    }
}
