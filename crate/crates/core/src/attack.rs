//! Attack cost arithmetic and weakness ranking.
//!
//! Average attempts are modelled as 2^H, not the 2^H/2 expected trials of a
//! search without replacement.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::{DistanceEntropyMatrix, RandomizationClass};

pub const DEFAULT_TPS: f64 = 300.0;
/// Correlation entropy must sit this far below both absolutes to be a path.
pub const PATH_MARGIN_BITS: f64 = 1.0;
pub const PATH_MAX_BITS: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatModel {
    pub tps: f64,
}

impl ThreatModel {
    pub fn new(tps: f64) -> Result<ThreatModel> {
        if !(tps.is_finite() && tps > 0.0) {
            return Err(Error::Domain(format!("tries per second must be finite and positive, got {tps}")));
        }
        Ok(ThreatModel { tps })
    }
}

impl Default for ThreatModel {
    fn default() -> Self {
        ThreatModel { tps: DEFAULT_TPS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeaknessTier {
    Critical,
    Weak,
    Moderate,
    Strong,
}

impl WeaknessTier {
    pub fn of(bits: f64) -> WeaknessTier {
        if bits < 20.0 {
            WeaknessTier::Critical
        } else if bits < 24.0 {
            WeaknessTier::Weak
        } else if bits < 30.0 {
            WeaknessTier::Moderate
        } else {
            WeaknessTier::Strong
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            WeaknessTier::Critical => "critical",
            WeaknessTier::Weak => "weak",
            WeaknessTier::Moderate => "moderate",
            WeaknessTier::Strong => "strong",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cost {
    pub attempts: f64,
    pub seconds: f64,
}

pub fn bruteforce_cost(bits: f64, tm: ThreatModel) -> Cost {
    let attempts = bits.max(0.0).exp2();
    Cost { attempts, seconds: attempts / tm.tps }
}

/// Spraying `payload_bytes` copies across a `region_bytes` region.
pub fn spray_cost(region_bytes: u64, payload_bytes: u64, tm: ThreatModel) -> Result<Cost> {
    if payload_bytes == 0 || region_bytes == 0 {
        return Err(Error::Domain("region and payload must be positive".into()));
    }
    if payload_bytes > region_bytes {
        return Err(Error::Domain(format!("payload of {payload_bytes} bytes exceeds region of {region_bytes} bytes")));
    }
    let attempts = region_bytes as f64 / payload_bytes as f64;
    Ok(Cost { attempts, seconds: attempts / tm.tps })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossectionGain {
    pub direct: Cost,
    pub leaked: Cost,
    pub gain_factor: f64,
}

/// Cost of reaching a target directly versus through a leaked object.
pub fn crossection_gain(abs_bits_target: f64, corr_bits_via_leak: f64, tm: ThreatModel) -> CrossectionGain {
    let direct = bruteforce_cost(abs_bits_target, tm);
    let leaked = bruteforce_cost(corr_bits_via_leak.min(abs_bits_target), tm);
    CrossectionGain { direct, leaked, gain_factor: direct.attempts / leaked.attempts }
}

/// Bits left to guess when overwriting only the low bytes of a pointer
/// that must move by `pointer_delta_bytes`.
pub fn partial_overwrite_bits(pointer_delta_bytes: u64, page_align_bits: u32) -> u32 {
    let bytes = (64 - pointer_delta_bytes.leading_zeros()).div_ceil(8);
    (8 * bytes).saturating_sub(page_align_bits)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subject {
    Object(String),
    Pair([String; 2]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    Absolute,
    CorrelationPath,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    #[serde(flatten)]
    pub subject: Subject,
    pub kind: FindingKind,
    pub bits: f64,
    pub tier: WeaknessTier,
    pub attempts: f64,
    pub seconds_at_tps: f64,
    pub notes: Vec<String>,
}

impl Finding {
    fn new(subject: Subject, kind: FindingKind, bits: f64, tm: ThreatModel, notes: Vec<String>) -> Finding {
        let c = bruteforce_cost(bits, tm);
        Finding { subject, kind, bits, tier: WeaknessTier::of(bits), attempts: c.attempts, seconds_at_tps: c.seconds, notes }
    }

    pub fn label(&self) -> String {
        match &self.subject {
            Subject::Object(o) => o.clone(),
            Subject::Pair([a, b]) => format!("{a} <-> {b}"),
        }
    }
}

const AMORTIZED: &str = "boot-time randomization: effort amortizes across processes of one boot";

/// Absolute findings for every group below the strong tier, plus
/// single-leak correlation paths. Most severe first.
pub fn rank_weaknesses(
    matrix: &DistanceEntropyMatrix,
    classes: &HashMap<String, RandomizationClass>,
    tm: ThreatModel,
) -> Vec<Finding> {
    let boot_time = |l: &str| classes.get(l) == Some(&RandomizationClass::BootTime);
    let diag: Vec<Option<f64>> = matrix.diagonal.iter().map(|c| c.bits()).collect();
    let mut out = Vec::new();
    for (label, bits) in matrix.labels.iter().zip(&diag) {
        let Some(bits) = *bits else { continue };
        if WeaknessTier::of(bits) == WeaknessTier::Strong {
            continue;
        }
        let mut notes = Vec::new();
        if classes.get(label) == Some(&RandomizationClass::NotRandomized) {
            notes.push("not randomized".to_string());
        }
        if boot_time(label) {
            notes.push(AMORTIZED.to_string());
        }
        out.push(Finding::new(Subject::Object(label.clone()), FindingKind::Absolute, bits, tm, notes));
    }
    let n = matrix.labels.len();
    for i in 0..n {
        for j in i + 1..n {
            let (Some(di), Some(dj), Some(c)) = (diag[i], diag[j], matrix.cells[i][j].bits()) else { continue };
            if c < di.min(dj) - PATH_MARGIN_BITS && c < PATH_MAX_BITS {
                let (a, b) = (&matrix.labels[i], &matrix.labels[j]);
                let mut notes = vec![format!(
                    "leaking {a} reaches {b} in 2^{c:.2} attempts instead of 2^{dj:.2}; leaking {b} reaches {a} in 2^{c:.2} instead of 2^{di:.2}"
                )];
                if boot_time(a) || boot_time(b) {
                    notes.push(AMORTIZED.to_string());
                }
                out.push(Finding::new(Subject::Pair([a.clone(), b.clone()]), FindingKind::CorrelationPath, c, tm, notes));
            }
        }
    }
    out.sort_by(|x, y| x.tier.cmp(&y.tier).then(x.bits.total_cmp(&y.bits)).then_with(|| x.label().cmp(&y.label())));
    out
}

pub fn findings_json(findings: &[Finding]) -> String {
    serde_json::to_string_pretty(findings).expect("findings serialize")
}
