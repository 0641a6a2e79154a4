use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::key::kind_of;
use crate::error::{Error, Result};

/// Null marker inside column storage. Never a valid userspace address.
pub(crate) const NULL: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Live,
    Synthetic,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Live => "live",
            Source::Synthetic => "synthetic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Platform {
    pub os: String,
    pub arch: String,
    pub kernel: String,
    pub page_size: u64,
    pub source: Source,
}

impl Platform {
    pub fn page_bits(&self) -> u32 {
        self.page_size.trailing_zeros()
    }
}

/// Everything on the first line of a sample file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    #[serde(flatten)]
    pub platform: Platform,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rng: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub randomize_va_space: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shared_memory: Option<String>,
}

impl Header {
    pub fn new(platform: Platform) -> Header {
        Header { platform, policy: None, rng: None, randomize_va_space: None, shared_memory: None }
    }
}

/// One program execution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunRecord {
    pub boot_id: String,
    pub run_id: u64,
    pub timestamp: i64,
    /// `None` records an object the run failed to produce.
    pub addresses: IndexMap<String, Option<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunMeta {
    pub boot: u32,
    pub run: u64,
    pub ts: i64,
}

/// A campaign: records stored column-major, one column per object.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSet {
    header: Header,
    objects: Vec<String>,
    index: HashMap<String, usize>,
    boots: Vec<String>,
    boot_index: HashMap<String, u32>,
    last_run: Vec<u64>,
    runs: Vec<RunMeta>,
    columns: Vec<Vec<u64>>,
}

fn valid_object_name(name: &str) -> bool {
    !name.is_empty() && !name.chars().any(char::is_control)
}

impl SampleSet {
    /// An empty set whose key set is fixed up front.
    pub fn new(header: Header, objects: Vec<String>) -> Result<SampleSet> {
        let ps = header.platform.page_size;
        if ps != 4096 && ps != 16384 {
            return Err(Error::Invariant { line: 1, msg: format!("unsupported page size {ps}") });
        }
        let mut index = HashMap::with_capacity(objects.len());
        for (i, o) in objects.iter().enumerate() {
            if !valid_object_name(o) {
                return Err(Error::Invariant { line: 1, msg: format!("invalid object name {o:?}") });
            }
            if index.insert(o.clone(), i).is_some() {
                return Err(Error::Invariant { line: 1, msg: format!("duplicate object {o:?}") });
            }
        }
        Ok(SampleSet {
            header,
            columns: vec![Vec::new(); objects.len()],
            objects,
            index,
            boots: Vec::new(),
            boot_index: HashMap::new(),
            last_run: Vec::new(),
            runs: Vec::new(),
        })
    }

    pub fn header(&self) -> &Header {
        &self.header
    }

    pub fn header_mut(&mut self) -> &mut Header {
        &mut self.header
    }

    pub fn platform(&self) -> &Platform {
        &self.header.platform
    }

    pub fn objects(&self) -> &[String] {
        &self.objects
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn boots(&self) -> &[String] {
        &self.boots
    }

    pub fn runs(&self) -> &[RunMeta] {
        &self.runs
    }

    pub fn object_index(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Raw column with nulls as `None`.
    pub fn column(&self, name: &str) -> Option<impl Iterator<Item = Option<u64>> + '_> {
        let i = self.object_index(name)?;
        Some(self.columns[i].iter().map(|&v| (v != NULL).then_some(v)))
    }

    pub(crate) fn raw_column(&self, name: &str) -> &[u64] {
        &self.columns[self.index[name]]
    }

    /// The complete series for an object, or `None` if any run lacks it.
    pub fn series(&self, name: &str) -> Option<&[u64]> {
        let col = &self.columns[self.object_index(name)?];
        (!col.contains(&NULL)).then_some(col.as_slice())
    }

    pub fn null_count(&self, name: &str) -> Option<usize> {
        let col = &self.columns[self.object_index(name)?];
        Some(col.iter().filter(|&&v| v == NULL).count())
    }

    /// Boot index of every record.
    pub fn boot_of_runs(&self) -> Vec<u32> {
        self.runs.iter().map(|r| r.boot).collect()
    }

    pub fn record(&self, i: usize) -> RunRecord {
        let meta = self.runs[i];
        RunRecord {
            boot_id: self.boots[meta.boot as usize].clone(),
            run_id: meta.run,
            timestamp: meta.ts,
            addresses: self
                .objects
                .iter()
                .zip(&self.columns)
                .map(|(o, c)| (o.clone(), (c[i] != NULL).then_some(c[i])))
                .collect(),
        }
    }

    /// Validate and append. `line` is the source line used in errors.
    pub(crate) fn push_at(&mut self, rec: RunRecord, line: usize) -> Result<()> {
        let ordinal = self.runs.len() + 1;
        let inv = |msg: String| Error::Invariant { line, msg: format!("record {ordinal}: {msg}") };
        for o in &self.objects {
            if !rec.addresses.contains_key(o) {
                return Err(inv(format!("missing key {o:?}")));
            }
        }
        if let Some(extra) = rec.addresses.keys().find(|k| !self.index.contains_key(*k)) {
            return Err(inv(format!("unexpected key {extra:?}")));
        }
        let page_mask = self.header.platform.page_size - 1;
        for (name, addr) in &rec.addresses {
            let Some(a) = *addr else { continue };
            if a >> 63 != 0 {
                return Err(inv(format!("{name:?} address {a:#018x} is in kernel space")));
            }
            let raw_ok = kind_of(name).is_some_and(|k| k.is_sub_page());
            if !raw_ok && a & page_mask != 0 {
                return Err(inv(format!("{name:?} address {a:#018x} is not page aligned")));
            }
        }
        let boot = match self.boot_index.get(&rec.boot_id) {
            Some(&b) => {
                if rec.run_id <= self.last_run[b as usize] {
                    return Err(inv(format!(
                        "run {} not greater than previous run {} in boot {:?}",
                        rec.run_id, self.last_run[b as usize], rec.boot_id
                    )));
                }
                b
            }
            None => {
                if rec.boot_id.is_empty() {
                    return Err(inv("empty boot id".into()));
                }
                let b = self.boots.len() as u32;
                self.boots.push(rec.boot_id.clone());
                self.boot_index.insert(rec.boot_id.clone(), b);
                self.last_run.push(0);
                b
            }
        };
        self.last_run[boot as usize] = rec.run_id;
        for (o, col) in self.objects.iter().zip(self.columns.iter_mut()) {
            col.push(rec.addresses[o].unwrap_or(NULL));
        }
        self.runs.push(RunMeta { boot, run: rec.run_id, ts: rec.timestamp });
        Ok(())
    }

    pub fn push(&mut self, rec: RunRecord) -> Result<()> {
        let line = self.runs.len() + 2;
        self.push_at(rec, line)
    }

    /// Fast path for generators that already guarantee the invariants.
    pub(crate) fn push_unchecked(&mut self, boot_id: &str, run: u64, ts: i64, addrs: &[u64]) {
        let boot = match self.boot_index.get(boot_id) {
            Some(&b) => b,
            None => {
                let b = self.boots.len() as u32;
                self.boots.push(boot_id.to_string());
                self.boot_index.insert(boot_id.to_string(), b);
                self.last_run.push(0);
                b
            }
        };
        self.last_run[boot as usize] = run;
        for (col, &a) in self.columns.iter_mut().zip(addrs) {
            col.push(a);
        }
        self.runs.push(RunMeta { boot, run, ts });
    }

    /// A copy holding only the listed records, in the given order.
    pub fn select(&self, rows: &[usize]) -> SampleSet {
        let mut out = SampleSet::new(self.header.clone(), self.objects.clone()).expect("already valid");
        let mut row = vec![0u64; self.objects.len()];
        for &r in rows {
            for (slot, col) in row.iter_mut().zip(&self.columns) {
                *slot = col[r];
            }
            let m = self.runs[r];
            out.push_unchecked(&self.boots[m.boot as usize], m.run, m.ts, &row);
        }
        out
    }
}

/// Addresses of one object shifted down by their alignment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NormalizedSeries {
    pub object: String,
    pub values: Vec<u64>,
    pub alignment_bits: u32,
    pub boots: Vec<u32>,
}

impl NormalizedSeries {
    pub fn new(object: impl Into<String>, addresses: &[u64], alignment_bits: u32, strict: bool) -> Result<Self> {
        Ok(NormalizedSeries {
            object: object.into(),
            values: normalize(addresses, alignment_bits, strict)?,
            alignment_bits,
            boots: vec![0; addresses.len()],
        })
    }

    pub fn with_boots(mut self, boots: Vec<u32>) -> Self {
        assert_eq!(boots.len(), self.values.len());
        self.boots = boots;
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// `address >> alignment_bits` for each address. In strict mode the dropped
/// bits must be zero.
pub fn normalize(addresses: &[u64], alignment_bits: u32, strict: bool) -> Result<Vec<u64>> {
    if alignment_bits >= 64 {
        return Err(Error::Domain(format!("alignment of {alignment_bits} bits")));
    }
    let mask = (1u64 << alignment_bits) - 1;
    if strict {
        if let Some(&a) = addresses.iter().find(|&&a| a & mask != 0) {
            return Err(Error::Alignment { addr: a, bits: alignment_bits });
        }
    }
    Ok(addresses.iter().map(|a| a >> alignment_bits).collect())
}

/// Largest alignment at which all addresses agree in their low bits. The
/// differences between values stay exact after shifting by it, and it is
/// unchanged by adding a constant to every address. A constant series
/// reports `fallback`.
pub fn observed_alignment(addresses: &[u64], fallback: u32) -> u32 {
    let Some(&first) = addresses.first() else { return fallback };
    let diff = addresses.iter().fold(0u64, |acc, &a| acc | (a ^ first));
    if diff == 0 {
        fallback
    } else {
        diff.trailing_zeros()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(objects: &[&str]) -> SampleSet {
        let p = Platform { os: "linux".into(), arch: "x86_64".into(), kernel: "6.4".into(), page_size: 4096, source: Source::Synthetic };
        SampleSet::new(Header::new(p), objects.iter().map(|s| s.to_string()).collect()).unwrap()
    }

    fn rec(boot: &str, run: u64, addrs: &[(&str, Option<u64>)]) -> RunRecord {
        RunRecord { boot_id: boot.into(), run_id: run, timestamp: 0, addresses: addrs.iter().map(|(k, v)| (k.to_string(), *v)).collect() }
    }

    #[test]
    fn page_shift() {
        assert_eq!(normalize(&[0x7f0000001000, 0x7f0000003000], 12, true).unwrap(), vec![0x7f0000001, 0x7f0000003]);
        assert_eq!(normalize(&[0x200000], 21, true).unwrap(), vec![1]);
    }

    #[test]
    fn strict_rejects_offset_bits() {
        assert!(matches!(normalize(&[0x7f0000001800], 12, true), Err(Error::Alignment { .. })));
        assert_eq!(normalize(&[0x7f0000001800], 12, false).unwrap(), vec![0x7f0000001]);
    }

    #[test]
    fn rejects_kernel_and_unaligned() {
        let mut s = set(&["env", "malloc_16B_M_1"]);
        let e = s.push(rec("b", 1, &[("env", Some(0xffff800000001000)), ("malloc_16B_M_1", Some(0x10))])).unwrap_err();
        assert!(e.to_string().contains("kernel"), "{e}");
        let e = s.push(rec("b", 1, &[("env", Some(0x1008)), ("malloc_16B_M_1", Some(0x10))])).unwrap_err();
        assert!(e.to_string().contains("page aligned"));
        // raw chunk addresses are fine
        s.push(rec("b", 1, &[("env", Some(0x1000)), ("malloc_16B_M_1", Some(0x5555_0000_02a0))])).unwrap();
    }

    #[test]
    fn run_ids_increase_per_boot() {
        let mut s = set(&["env"]);
        s.push(rec("a", 5, &[("env", Some(0x1000))])).unwrap();
        s.push(rec("b", 1, &[("env", Some(0x1000))])).unwrap();
        assert!(s.push(rec("a", 5, &[("env", Some(0x1000))])).is_err());
        s.push(rec("a", 6, &[("env", None)])).unwrap();
        assert_eq!(s.series("env"), None);
        assert_eq!(s.null_count("env"), Some(1));
        assert_eq!(s.record(2).addresses["env"], None);
    }

    #[test]
    fn alignment_is_translation_invariant() {
        let a = [0x1000u64, 0x5000, 0x9000];
        let b: Vec<u64> = a.iter().map(|x| x + 0x123).collect();
        assert_eq!(observed_alignment(&a, 12), 14);
        assert_eq!(observed_alignment(&b, 12), 14);
        assert_eq!(observed_alignment(&[7, 7], 12), 12);
    }
}
