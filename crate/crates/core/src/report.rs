//! The analysis pipeline and its artifacts: report JSON, CSV exports and
//! the plain-text report.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{bruteforce_cost, findings_json, rank_weaknesses, Finding, ThreatModel, WeaknessTier};
use crate::error::Result;
use crate::estimate::{changing_bitmask, min_samples, Bitmask, BitmaskScope, EntropyEstimate, Estimator, MAX_BIAS};
use crate::layout::{
    classify, distance_matrix, group_contiguous, histogram, histogram_csv, layout_ranges, matrix_csv, ranges_csv,
    sample_rows, Cell, DistanceEntropyMatrix, EstimatorConfig, Histogram, ObjectGroup, RandomizationClass,
};
use crate::sample::{kind_of, observed_alignment, NormalizedSeries, Platform, SampleSet};

pub const REPORT_SCHEMA: &str = "aslr-report/1";

/// Sample counts printed next to the exact ceilings in the text report.
pub const REFERENCE_THRESHOLDS: [(f64, u64); 3] = [(35.0, 3_800_000), (19.0, 15_000), (16.0, 5_000)];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    #[serde(default)]
    pub estimator: Estimator,
    #[serde(default = "default_tps")]
    pub tps: f64,
    #[serde(default)]
    pub alphabet_override_bits: Option<f64>,
}

fn default_tps() -> f64 {
    crate::attack::DEFAULT_TPS
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        AnalyzeConfig { estimator: Estimator::Nsb, tps: default_tps(), alphabet_override_bits: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramSummary {
    pub chi_square: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
    pub uniform: bool,
    pub max_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    pub group: String,
    pub class: RandomizationClass,
    pub usable: bool,
    pub null_count: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alignment_bits: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bitmask: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bitmask_bits: Option<u32>,
    /// Shared with the group representative: a constant offset keeps entropy.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy: Option<EntropyEstimate>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub entropy_error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_samples: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sufficient: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupCost {
    pub group: String,
    pub bits: f64,
    pub tier: WeaknessTier,
    pub attempts: f64,
    pub seconds_at_tps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: String,
    pub platform: Platform,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    pub n_runs: usize,
    pub n_boots: usize,
    pub config: AnalyzeConfig,
    pub objects: Vec<ObjectReport>,
    pub groups: Vec<ObjectGroup>,
    pub matrix: DistanceEntropyMatrix,
    pub attack_costs: Vec<GroupCost>,
    pub findings: Vec<Finding>,
    /// Full histograms, kept out of the JSON and written as CSV.
    #[serde(skip)]
    pub histograms: Vec<(String, Histogram)>,
    #[serde(skip)]
    pub ranges_csv: String,
}

impl AnalysisReport {
    pub fn object(&self, name: &str) -> Option<&ObjectReport> {
        self.objects.iter().find(|o| o.name == name)
    }

    pub fn has_critical(&self) -> bool {
        self.findings.iter().any(|f| f.tier == WeaknessTier::Critical)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

pub fn analyze(set: &SampleSet, cfg: &AnalyzeConfig) -> Result<AnalysisReport> {
    let tm = ThreatModel::new(cfg.tps)?;
    let est = EstimatorConfig { estimator: cfg.estimator, alphabet_override_bits: cfg.alphabet_override_bits };
    let boots = set.boot_of_runs();
    let page_bits = set.platform().page_bits();
    let per_boot_rows = sample_rows(set, true);

    let classes: HashMap<String, RandomizationClass> = set
        .objects()
        .iter()
        .map(|o| {
            let c = match set.series(o) {
                Some(v) if !v.is_empty() => classify(v, &boots),
                _ => RandomizationClass::Indeterminate,
            };
            (o.clone(), c)
        })
        .collect();
    let groups = group_contiguous(set);
    let matrix = distance_matrix(set, &groups, &classes, &est);
    let findings = rank_weaknesses(&matrix, &classes, tm);

    let group_of: HashMap<&str, &ObjectGroup> =
        groups.iter().flat_map(|g| g.members.iter().map(move |m| (m.as_str(), g))).collect();
    let ranges = layout_ranges(set);
    let range_of: HashMap<&str, (u64, u64)> = ranges.iter().map(|r| (r.object.as_str(), (r.min, r.max))).collect();

    let hist_results: Vec<Option<Result<Histogram>>> = set
        .objects()
        .par_iter()
        .map(|o| {
            let v = set.series(o)?;
            Some(if classes[o] == RandomizationClass::BootTime {
                histogram(&per_boot_rows.iter().map(|&r| v[r]).collect::<Vec<_>>())
            } else {
                histogram(v)
            })
        })
        .collect();

    let mut objects = Vec::with_capacity(set.objects().len());
    let mut histograms = Vec::new();
    for (name, hist) in set.objects().iter().zip(hist_results) {
        let g = group_of[name.as_str()];
        let cell: Option<&Cell> = matrix.index(&g.representative).map(|i| &matrix.diagonal[i]);
        let series = set.series(name);
        let bitmask: Option<Bitmask> = series.and_then(|v| {
            let s = NormalizedSeries::new(name.clone(), v, 0, false).ok()?.with_boots(boots.clone());
            changing_bitmask(&s, BitmaskScope::All).ok()
        });
        let entropy = cell.and_then(|c| c.estimate);
        let ms = entropy.map(|e| min_samples(e.bits, MAX_BIAS));
        let (histogram, histogram_error) = match hist {
            Some(Ok(h)) => {
                let s = HistogramSummary {
                    chi_square: h.chi_square,
                    degrees_of_freedom: h.degrees_of_freedom,
                    p_value: h.p_value,
                    uniform: h.uniform,
                    max_deviation: h.max_deviation,
                };
                histograms.push((name.clone(), h));
                (Some(s), None)
            }
            Some(Err(e)) => (None, Some(e.to_string())),
            None => (None, None),
        };
        let range = range_of.get(name.as_str());
        objects.push(ObjectReport {
            name: name.clone(),
            kind: kind_of(name).map(|k| k.as_str().to_string()),
            group: g.representative.clone(),
            class: classes[name],
            usable: g.usable,
            null_count: set.null_count(name).unwrap_or(0),
            min: range.map(|r| format!("{:#x}", r.0)),
            max: range.map(|r| format!("{:#x}", r.1)),
            alignment_bits: series.map(|v| observed_alignment(v, page_bits)),
            bitmask: bitmask.map(|b| format!("{:#x}", b.mask)),
            bitmask_bits: bitmask.map(|b| b.bit_count),
            entropy,
            entropy_error: cell.and_then(|c| c.error.clone()),
            min_samples: ms,
            sufficient: entropy.zip(ms).map(|(e, m)| e.n_samples as u64 >= m),
            histogram,
            histogram_error,
        });
    }

    let attack_costs = matrix
        .labels
        .iter()
        .zip(&matrix.diagonal)
        .filter_map(|(l, c)| {
            let bits = c.bits()?;
            let cost = bruteforce_cost(bits, tm);
            Some(GroupCost { group: l.clone(), bits, tier: WeaknessTier::of(bits), attempts: cost.attempts, seconds_at_tps: cost.seconds })
        })
        .collect();

    Ok(AnalysisReport {
        schema: REPORT_SCHEMA.into(),
        platform: set.platform().clone(),
        policy: set.header().policy.clone(),
        n_runs: set.len(),
        n_boots: set.boots().len(),
        config: *cfg,
        objects,
        groups,
        matrix,
        attack_costs,
        findings,
        histograms,
        ranges_csv: ranges_csv(&ranges),
    })
}

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TXT: &str = "report.txt";
pub const HISTOGRAMS_CSV: &str = "histograms.csv";
pub const MATRIX_CSV: &str = "matrix.csv";
pub const RANGES_CSV: &str = "ranges.csv";
pub const FINDINGS_JSON: &str = "findings.json";

/// Writes every artifact into `dir` and returns their paths.
pub fn write_artifacts(report: &AnalysisReport, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let files = [
        (REPORT_JSON, report.to_json()),
        (REPORT_TXT, render_text(report)),
        (HISTOGRAMS_CSV, histogram_csv(&report.histograms)),
        (MATRIX_CSV, matrix_csv(&report.matrix)),
        (RANGES_CSV, report.ranges_csv.clone()),
        (FINDINGS_JSON, findings_json(&report.findings) + "\n"),
    ];
    let mut out = Vec::new();
    for (name, body) in files {
        let p = dir.join(name);
        std::fs::write(&p, body)?;
        out.push(p);
    }
    Ok(out)
}

fn grouped(n: u64) -> String {
    let s = n.to_string();
    let mut out = String::new();
    for (i, c) in s.chars().enumerate() {
        if i > 0 && (s.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    out
}

fn duration(seconds: f64) -> String {
    const UNITS: [(f64, &str); 4] = [(86_400.0 * 365.0, "y"), (86_400.0, "d"), (3600.0, "h"), (60.0, "min")];
    for (u, name) in UNITS {
        if seconds >= u {
            return format!("{:.1} {name}", seconds / u);
        }
    }
    format!("{seconds:.1} s")
}

fn sufficiency(o: &ObjectReport) -> String {
    match (o.sufficient, o.min_samples) {
        (Some(true), _) => "ok".into(),
        (Some(false), _) => "insufficient (bias>5%)".into(),
        _ => "-".into(),
    }
}

/// Plain-text report. Deterministic for a given report.
pub fn render_text(r: &AnalysisReport) -> String {
    let mut s = String::new();
    let p = &r.platform;
    writeln!(s, "ASLR analysis report").unwrap();
    writeln!(s, "platform: {} {} kernel {} ({}), page {} B", p.os, p.arch, p.kernel, p.source.as_str(), p.page_size).unwrap();
    if let Some(pol) = &r.policy {
        writeln!(s, "policy: {pol}").unwrap();
    }
    writeln!(s, "runs: {}  boots: {}  estimator: {}  tps: {}", r.n_runs, r.n_boots, method_name(r.config.estimator), r.config.tps).unwrap();
    if let Some(a) = r.config.alphabet_override_bits {
        writeln!(s, "alphabet override: {a} bits").unwrap();
    }

    writeln!(s, "\nAbsolute entropy").unwrap();
    writeln!(
        s,
        "{:<26} {:<15} {:>8} {:>7} {:<9} {:>10} {:>11}  {:<22} members",
        "group", "class", "bits", "std", "tier", "n", "min_samples", "sufficiency"
    )
    .unwrap();
    for g in &r.groups {
        let o = r.object(&g.representative).expect("representative is an object");
        let members = g.members.iter().filter(|m| **m != g.representative).cloned().collect::<Vec<_>>().join(",");
        match (&o.entropy, &o.entropy_error) {
            (Some(e), _) => writeln!(
                s,
                "{:<26} {:<15} {:>8.3} {:>7.3} {:<9} {:>10} {:>11}  {:<22} {}",
                g.representative,
                o.class.as_str(),
                e.bits,
                e.posterior_std_bits,
                WeaknessTier::of(e.bits).as_str(),
                e.n_samples,
                o.min_samples.map_or("-".into(), grouped),
                sufficiency(o),
                members
            ),
            (None, err) => writeln!(
                s,
                "{:<26} {:<15} {:>8} {:>7} {:<9} {:>10} {:>11}  {:<22} {}",
                g.representative,
                o.class.as_str(),
                "-",
                "-",
                "-",
                "-",
                "-",
                err.as_deref().map_or("unusable (missing addresses)".to_string(), |e| format!("error: {e}")),
                members
            ),
        }
        .unwrap();
    }
    let refs: Vec<String> = REFERENCE_THRESHOLDS
        .iter()
        .map(|&(b, t)| format!("{b} bits -> {} (tabulated {})", grouped(min_samples(b, MAX_BIAS)), grouped(t)))
        .collect();
    writeln!(s, "min_samples for 5% bias: {}", refs.join("; ")).unwrap();

    writeln!(s, "\nDistance entropy matrix (bits)").unwrap();
    let rows: Vec<String> = r.matrix.labels.iter().enumerate().map(|(i, l)| format!("[{i}] {l}")).collect();
    let w = rows.iter().map(|l| l.len()).max().unwrap_or(0);
    write!(s, "{:<w$}", "").unwrap();
    for i in 0..rows.len() {
        write!(s, " {:>7}", format!("[{i}]")).unwrap();
    }
    writeln!(s).unwrap();
    for (label, row) in rows.iter().zip(&r.matrix.cells) {
        write!(s, "{label:<w$}").unwrap();
        for c in row {
            match c.bits() {
                Some(b) => write!(s, " {b:>7.2}").unwrap(),
                None => write!(s, " {:>7}", "err").unwrap(),
            }
        }
        writeln!(s).unwrap();
    }

    writeln!(s, "\nFindings").unwrap();
    if r.findings.is_empty() {
        writeln!(s, "none").unwrap();
    }
    for (i, f) in r.findings.iter().enumerate() {
        let kind = match f.kind {
            crate::attack::FindingKind::Absolute => "absolute",
            crate::attack::FindingKind::CorrelationPath => "correlation path",
        };
        writeln!(
            s,
            "{:>3}. [{}] {} ({kind}): {:.2} bits, {} attempts, {} at {} tps",
            i + 1,
            f.tier.as_str(),
            f.label(),
            f.bits,
            grouped(f.attempts.round() as u64),
            duration(f.seconds_at_tps),
            r.config.tps
        )
        .unwrap();
        for n in &f.notes {
            writeln!(s, "     {n}").unwrap();
        }
    }
    s
}

fn method_name(e: Estimator) -> &'static str {
    match e {
        Estimator::Nsb => "nsb",
        Estimator::Plugin => "plugin",
    }
}
