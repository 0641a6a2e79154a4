//! Derived oracles for the estimators, histograms and simulator. Each test
//! states how its expected value was obtained.

mod common;

use aslrkit::estimate::{
    byte_plugin_entropy, changing_bitmask, nsb_entropy, plugin_entropy, BitmaskScope, Estimator,
};
use aslrkit::layout::histogram;
use aslrkit::sample::NormalizedSeries;
use aslrkit::synth::{analytic_entropy, generate};
use common::*;

const LO: u64 = 0x7f00_0000_0000;

fn normalized(set: &aslrkit::sample::SampleSet, name: &str, bits: u32) -> NormalizedSeries {
    NormalizedSeries::new(name, set.series(name).unwrap(), bits, true).unwrap()
}

#[test]
fn bitmask_sees_every_bit_of_a_small_uniform() {
    // A given bit agrees with record 0 in all other records with
    // probability 2^-(n-1); over 8 bits the miss chance is about 8 * 2^-9999.
    let set = sample(vec![obj("a", uniform(LO, 1 << 8, 12))], 10_000);
    let m = changing_bitmask(&normalized(&set, "a", 12), BitmaskScope::All).unwrap();
    assert_eq!(m.bit_count, 8);
    assert_eq!(m.mask, 0xff << 12);
}

#[test]
fn plugin_underestimates_when_undersampled() {
    // n = K: about 1/e of the slots are never seen, plugin loses ~0.8 bits.
    let set = sample(vec![obj("a", uniform(LO, 1 << 16, 12))], 1 << 16);
    let v = normalized(&set, "a", 12).values;
    let plugin = plugin_entropy(&v).unwrap().bits;
    let nsb = nsb_entropy(&v, None).unwrap().bits;
    assert!(plugin <= 16.0 - 0.3, "plugin {plugin}");
    assert!((nsb - 16.0).abs() <= 0.8, "nsb {nsb}");
}

#[test]
fn heavily_sampled_small_alphabet() {
    let set = sample(vec![obj("a", uniform(LO, 1 << 10, 12))], 1_000_000);
    let v = normalized(&set, "a", 12).values;
    let nsb = nsb_entropy(&v, Some(10.0)).unwrap();
    let plugin = plugin_entropy(&v).unwrap();
    assert!((nsb.bits - 10.0).abs() < 0.05);
    assert!((nsb.bits - plugin.bits).abs() < 0.05);
}

#[test]
fn byte_plugin_double_counts_correlated_bytes() {
    // address = b * 0x101 << 12 puts b at bit 12 and again at bit 20. Byte
    // positions 1, 2 and 3 then see 4, 8 and 4 bits of b: a per-byte sum of
    // 16 bits for an 8-bit source.
    let n = 200_000u64;
    let v: Vec<u64> = (0..n).map(|i| LO + ((((i * 2_654_435_761) % 256) * 0x101) << 12)).collect();
    let s = NormalizedSeries::new("x", &v, 0, false).unwrap();
    let plugin = plugin_entropy(&s.values).unwrap().bits;
    let bytes = byte_plugin_entropy(&s).unwrap().bits;
    assert!((plugin - 8.0).abs() < 1e-3);
    assert!((bytes / plugin - 2.0).abs() < 0.02, "{bytes} vs {plugin}");

    // one varying byte: the byte sum is exact
    let set = sample(vec![obj("a", uniform(LO, 1 << 8, 16))], 20_000);
    let s = NormalizedSeries::new("a", set.series("a").unwrap(), 0, false).unwrap();
    let a = byte_plugin_entropy(&s).unwrap().bits;
    let b = plugin_entropy(&s.values).unwrap().bits;
    assert!((a - b).abs() < 1e-9);
}

#[test]
fn uniform_histogram_is_flat() {
    // Multinomial bin counts: sd of each bin probability is sqrt(0.01*0.99/n)
    // = 1e-4 at n = 10^6; 0.002 is twenty of those.
    let set = sample(vec![obj("a", uniform(LO, 1 << 19, 12))], 1_000_000);
    let h = histogram(set.series("a").unwrap()).unwrap();
    assert_eq!(h.counts.iter().sum::<u64>(), 1_000_000);
    assert!(h.uniform, "p = {}", h.p_value);
    assert!(h.max_deviation < 0.002, "{}", h.max_deviation);
}

#[test]
fn irwin_hall_histogram_is_triangular() {
    let set = sample(vec![obj("a", two_source(0x1000_0000_0000, 1 << 20, 12))], 1_000_000);
    let h = histogram(set.series("a").unwrap()).unwrap();
    assert!(!h.uniform);
    let center = (h.probabilities[49] + h.probabilities[50]) / 2.0;
    let tails = (h.probabilities[..10].iter().sum::<f64>() + h.probabilities[90..].iter().sum::<f64>()) / 20.0;
    assert!(center > 2.0 * tails, "center {center} tails {tails}");
}

#[test]
fn marginals_converge_to_policy() {
    let set = sample(vec![obj("a", uniform(LO, 1 << 10, 12))], 1_000_000);
    let mut counts = vec![0u64; 1 << 10];
    for &a in set.series("a").unwrap() {
        counts[((a - LO) >> 12) as usize] += 1;
    }
    let k = counts.len() as f64;
    let worst = counts.iter().map(|&c| (c as f64 / 1e6 - 1.0 / k).abs()).fold(0.0, f64::max);
    assert!(worst < 0.01);
    // and statistically: chi-square with 1023 dof stays within 5 sd
    let e = 1e6 / k;
    let chi: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!((chi - 1023.0).abs() < 5.0 * (2.0f64 * 1023.0).sqrt(), "{chi}");
}

#[test]
fn estimates_track_the_analytic_oracle() {
    let p = policy(vec![
        obj("a", uniform(LO, 1 << 12, 12)),
        obj("b", two_source(0x1000_0000_0000, 1 << 9, 12)),
    ]);
    let set = generate(&p, 400_000).unwrap();
    for name in ["a", "b"] {
        let truth = analytic_entropy(&p, name).unwrap().unwrap().bits;
        let v = normalized(&set, name, 12).values;
        let est = Estimator::Nsb.estimate(&v, None).unwrap().bits;
        assert!((est - truth).abs() < 0.02, "{name}: {est} vs {truth}");
    }
}
