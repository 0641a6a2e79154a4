mod common;

use std::collections::HashMap;

use aslrkit::attack::{rank_weaknesses, FindingKind, Subject, ThreatModel, WeaknessTier};
use aslrkit::estimate::{EntropyEstimate, Method, SampleScope};
use aslrkit::layout::{
    classify, distance_matrix, group_contiguous, layout_ranges, Cell, DistanceEntropyMatrix, EstimatorConfig,
    RandomizationClass,
};
use aslrkit::report::{analyze, render_text, write_artifacts, AnalyzeConfig};
use aslrkit::sample::{Header, Platform, RunRecord, SampleSet, Source};
use aslrkit::synth::{builtin, generate, generate_with_seed, Direction, OffsetMode};
use common::*;

fn classes(set: &SampleSet) -> HashMap<String, RandomizationClass> {
    let boots = set.boot_of_runs();
    set.objects().iter().map(|o| (o.clone(), classify(set.series(o).unwrap(), &boots))).collect()
}

#[test]
fn windows_classes_and_image_ranges() {
    let p = builtin("windows-like").unwrap();
    let set = generate(&p, 2000).unwrap();
    let c = classes(&set);
    assert_eq!(c["executable"], RandomizationClass::BootTime);
    assert_eq!(c["libraries"], RandomizationClass::BootTime);
    assert_eq!(c["malloc_4KB_M_1"], RandomizationClass::Runtime);
    assert_eq!(c["heap_M"], RandomizationClass::Runtime);
    for r in layout_ranges(&set) {
        if r.object == "executable" || r.object == "libraries" {
            assert!(r.min >= 0x7ff8_0000_0000 && r.max < 0x8000_0000_0000);
        }
    }
}

#[test]
fn uniform_ranges_stay_inside_the_policy() {
    let lo = 0x6000_0000_0000;
    let set = sample(vec![obj("a", uniform(lo, 1 << 20, 12))], 5000);
    let r = &layout_ranges(&set)[0];
    assert!(r.min >= lo && r.max <= lo + (((1 << 20) - 1) << 12));
}

#[test]
fn matrix_properties() {
    let lo = 0x6000_0000_0000;
    let mut objects = vec![
        obj("a", uniform(lo, 1 << 12, 12)),
        obj("b", uniform(lo + (1 << 40), 1 << 12, 12)),
        obj("c", uniform(lo + (2 << 40), 1 << 12, 12)),
    ];
    objects.push(obj("a2", relative("a", OffsetMode::Zero, Direction::Above)));
    let set = sample(objects, 100_000);
    let groups = group_contiguous(&set);
    assert_eq!(groups.len(), 3);
    let g = groups.iter().find(|g| g.members.len() == 2).unwrap();
    assert_eq!(g.members, vec!["a", "a2"]);
    assert_eq!(g.offsets, vec![0, 4096]);

    let m = distance_matrix(&set, &groups, &classes(&set), &EstimatorConfig::default());
    assert_eq!(m.labels, vec!["a", "b", "c"]);
    for i in 0..3 {
        for j in 0..3 {
            assert_eq!(m.cells[i][j], m.cells[j][i]);
        }
        assert_eq!(m.cells[i][i], m.diagonal[i]);
        assert_eq!(m.diagonal[i].estimate.unwrap().method, Method::Nsb);
    }
    // independent pairs: a triangular difference law beats either marginal
    for i in 0..3 {
        for j in i + 1..3 {
            let d = m.diagonal[i].bits().unwrap().max(m.diagonal[j].bits().unwrap());
            assert!(m.cells[i][j].bits().unwrap() >= d - 0.2);
        }
    }
    // members of one group have zero correlation entropy
    let zero = aslrkit::estimate::correlation_entropy(set.series("a").unwrap(), set.series("a2").unwrap(), Default::default());
    assert_eq!(zero.unwrap().bits, 0.0);
}

#[test]
fn grouping_ignores_record_order() {
    let set = generate(&builtin("linux-6.4-like").unwrap(), 3000).unwrap();
    let rows: Vec<usize> = (0..set.len()).rev().collect();
    assert_eq!(group_contiguous(&set), group_contiguous(&set.select(&rows)));
}

fn cell(bits: f64) -> Cell {
    Cell {
        estimate: Some(EntropyEstimate {
            method: Method::Nsb,
            bits,
            posterior_std_bits: 0.0,
            n_samples: 1000,
            alphabet_log2: 40.0,
            bias_bound: 0.0,
            scope: SampleScope::AllRuns,
            low_confidence: false,
        }),
        error: None,
    }
}

fn matrix(labels: &[&str], m: &[&[f64]]) -> DistanceEntropyMatrix {
    DistanceEntropyMatrix {
        labels: labels.iter().map(|s| s.to_string()).collect(),
        diagonal: (0..labels.len()).map(|i| cell(m[i][i])).collect(),
        cells: m.iter().map(|r| r.iter().map(|&b| cell(b)).collect()).collect(),
    }
}

#[test]
fn ranking_rules() {
    let tm = ThreatModel::default();
    let none = HashMap::new();
    let strong = matrix(&["a", "b"], &[&[32.0, 33.0], &[33.0, 31.0]]);
    assert!(rank_weaknesses(&strong, &none, tm).is_empty());

    // off2libc: two strong objects a fixed distance apart
    let fixed = matrix(&["a", "b", "c"], &[&[32.0, 0.0, 21.0], &[0.0, 31.0, 33.0], &[21.0, 33.0, 22.0]]);
    let mut cls = HashMap::new();
    cls.insert("c".to_string(), RandomizationClass::BootTime);
    let f = rank_weaknesses(&fixed, &cls, tm);
    assert_eq!(f[0].kind, FindingKind::CorrelationPath);
    assert_eq!(f[0].subject, Subject::Pair(["a".into(), "b".into()]));
    assert_eq!((f[0].bits, f[0].tier, f[0].attempts), (0.0, WeaknessTier::Critical, 1.0));
    // c: weak absolute with the amortization note; (a,c) at 21 bits is not a path
    assert_eq!(f.len(), 2);
    assert_eq!(f[1].subject, Subject::Object("c".into()));
    assert!(f[1].notes.iter().any(|n| n.contains("amortizes")));
    let json = aslrkit::attack::findings_json(&f);
    assert!(json.contains("\"pair\"") && json.contains("\"correlation_path\"") && json.contains("\"seconds_at_tps\""));
}

#[test]
fn linux_folio_findings() {
    let set = generate_with_seed(&builtin("linux-6.4-like").unwrap(), 60_000, 2).unwrap();
    let r = analyze(&set, &AnalyzeConfig::default()).unwrap();
    let lib = r.findings.iter().find(|f| f.subject == Subject::Object("lib_big".into())).unwrap();
    assert_eq!(lib.tier, WeaknessTier::Critical);
    assert!((lib.bits - 19.0).abs() < 0.3);
    let path = r.findings.iter().find(|f| f.subject == Subject::Pair(["executable".into(), "heap_M".into()])).unwrap();
    assert!((path.bits - 13.0).abs() < 0.1);
    assert!(r.has_critical());
    // every object appears exactly once across the groups
    let mut members: Vec<&String> = r.groups.iter().flat_map(|g| &g.members).collect();
    members.sort();
    let mut objects: Vec<&String> = set.objects().iter().collect();
    objects.sort();
    assert_eq!(members, objects);
}

fn fixed_set() -> SampleSet {
    let p = Platform { os: "linux".into(), arch: "x86_64".into(), kernel: "t".into(), page_size: 4096, source: Source::Live };
    let mut s = SampleSet::new(Header::new(p), vec!["fixed".into(), "moving".into()]).unwrap();
    let mut x = 0x1234_5678u64;
    for boot in 0..10 {
        for run in 1..=100 {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let moving = 0x7000_0000_0000 + (((x >> 33) % (1 << 20)) << 12);
            let addresses = [("fixed".to_string(), Some(0x5555_5555_4000)), ("moving".to_string(), Some(moving))].into_iter().collect();
            s.push(RunRecord { boot_id: format!("boot{boot}"), run_id: run, timestamp: 0, addresses }).unwrap();
        }
    }
    s
}

#[test]
fn not_randomized_object_is_critical() {
    let r = analyze(&fixed_set(), &AnalyzeConfig::default()).unwrap();
    let o = r.object("fixed").unwrap();
    assert_eq!(o.class, RandomizationClass::NotRandomized);
    assert_eq!(o.entropy.unwrap().bits, 0.0);
    let f = r.findings.iter().find(|f| f.subject == Subject::Object("fixed".into())).unwrap();
    assert_eq!(f.tier, WeaknessTier::Critical);
    assert!(o.histogram_error.as_deref().unwrap().contains("degenerate"));
    let text = render_text(&r);
    let row = text.lines().find(|l| l.starts_with("fixed ")).unwrap();
    assert!(row.contains("not_randomized") && row.contains("0.000") && row.contains("critical"), "{row}");
    // 1000 samples of a ~20-bit object are below the 5% budget
    let moving = text.lines().find(|l| l.starts_with("moving ")).unwrap();
    assert!(moving.contains("insufficient (bias>5%)"), "{moving}");
    assert!(text.contains("3,707,277 (tabulated 3,800,000)") && text.contains("(tabulated 15,000)"));
}

#[test]
fn artifacts_are_complete_and_ordered() {
    let set = generate(&builtin("windows-like").unwrap(), 4000).unwrap();
    let r = analyze(&set, &AnalyzeConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = write_artifacts(&r, dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    assert!(read("histograms.csv").starts_with("object,bin_lo,bin_hi,count,probability\n"));
    assert!(read("matrix.csv").starts_with("row,col,bits,std,method,flags\n"));
    assert!(read("ranges.csv").starts_with("object,min,max\n"));
    // boot-time pair estimated from one sample per boot
    assert!(read("matrix.csv").lines().any(|l| l.starts_with("executable,libraries,") && l.contains("per_boot")));
    let back: aslrkit::report::AnalysisReport = serde_json::from_str(&read("report.json")).unwrap();
    assert_eq!(back.findings, r.findings);
    assert_eq!(render_text(&back), read("report.txt"));
}
