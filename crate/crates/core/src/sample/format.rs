//! JSON-lines interchange: a header object, then one object per run.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use indexmap::IndexMap;
use serde::Deserialize;
use serde_json::Value;

use super::model::{Header, RunRecord, SampleSet, NULL};
use crate::error::{Error, Result};

pub const SCHEMA: &str = "aslr-samples/1";

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings always serialize")
}

/// The header line without its trailing newline.
pub fn header_line(h: &Header) -> String {
    let p = &h.platform;
    let mut out = format!(
        "{{\"schema\":{},\"os\":{},\"arch\":{},\"kernel\":{},\"page_size\":{},\"source\":{}",
        json_str(SCHEMA),
        json_str(&p.os),
        json_str(&p.arch),
        json_str(&p.kernel),
        p.page_size,
        json_str(p.source.as_str())
    );
    if let Some(v) = &h.policy {
        write!(out, ",\"policy\":{}", json_str(v)).unwrap();
    }
    if let Some(v) = &h.rng {
        write!(out, ",\"rng\":{}", json_str(v)).unwrap();
    }
    if let Some(v) = h.randomize_va_space {
        write!(out, ",\"randomize_va_space\":{v}").unwrap();
    }
    if let Some(v) = &h.shared_memory {
        write!(out, ",\"shared_memory\":{}", json_str(v)).unwrap();
    }
    out.push('}');
    out
}

/// Appends one record line (no newline) to `out`.
pub fn write_record_line<'a>(
    out: &mut String,
    boot: &str,
    run: u64,
    ts: i64,
    addrs: impl IntoIterator<Item = (&'a str, Option<u64>)>,
) {
    write!(out, "{{\"boot\":{},\"run\":{run},\"ts\":{ts},\"addr\":{{", json_str(boot)).unwrap();
    for (i, (name, a)) in addrs.into_iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(&json_str(name));
        match a {
            Some(a) => write!(out, ":\"{a:#018x}\"").unwrap(),
            None => out.push_str(":null"),
        }
    }
    out.push_str("}}");
}

pub fn record_line(rec: &RunRecord) -> String {
    let mut s = String::new();
    write_record_line(&mut s, &rec.boot_id, rec.run_id, rec.timestamp, rec.addresses.iter().map(|(k, v)| (k.as_str(), *v)));
    s
}

/// Writes a whole set in canonical form.
pub fn save_sample_set<W: Write>(set: &SampleSet, mut w: W) -> Result<()> {
    writeln!(w, "{}", header_line(set.header()))?;
    let names: Vec<&str> = set.objects().iter().map(String::as_str).collect();
    let cols: Vec<&[u64]> = names.iter().map(|n| set.raw_column(n)).collect();
    let mut line = String::with_capacity(64 + 40 * names.len());
    for (i, m) in set.runs().iter().enumerate() {
        line.clear();
        let addrs = names.iter().zip(&cols).map(|(n, c)| (*n, (c[i] != NULL).then_some(c[i])));
        write_record_line(&mut line, &set.boots()[m.boot as usize], m.run, m.ts, addrs);
        line.push('\n');
        w.write_all(line.as_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn to_bytes(set: &SampleSet) -> Vec<u8> {
    let mut v = Vec::new();
    save_sample_set(set, &mut v).expect("writing to memory");
    v
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRecord {
    boot: String,
    run: u64,
    ts: i64,
    addr: IndexMap<String, Option<String>>,
}

pub fn parse_address(s: &str) -> Option<u64> {
    let hex = s.strip_prefix("0x")?;
    if hex.is_empty() || hex.len() > 16 {
        return None;
    }
    u64::from_str_radix(hex, 16).ok()
}

fn parse_header(line: &str) -> Result<Header> {
    let fmt = |msg: String| Error::Format { line: 1, msg };
    let v: Value = serde_json::from_str(line).map_err(|e| fmt(format!("header: {e}")))?;
    match v.get("schema").and_then(Value::as_str) {
        Some(SCHEMA) => {}
        Some(other) => return Err(fmt(format!("unsupported schema {other:?}"))),
        None => return Err(fmt("header lacks \"schema\"".into())),
    }
    serde_json::from_value(v).map_err(|e| fmt(format!("header: {e}")))
}

/// Reads and validates a sample file. The key set is taken from the first
/// record and every later record must match it.
pub fn load_sample_set<R: BufRead>(r: R) -> Result<SampleSet> {
    let mut lines = r.lines();
    let first = match lines.next() {
        Some(l) => l?,
        None => return Err(Error::Format { line: 1, msg: "empty input".into() }),
    };
    let header = parse_header(&first)?;
    let mut set: Option<SampleSet> = None;
    let mut pending_blank: Option<usize> = None;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        if line.is_empty() {
            pending_blank.get_or_insert(line_no);
            continue;
        }
        if let Some(b) = pending_blank {
            return Err(Error::Format { line: b, msg: "blank line".into() });
        }
        let raw: RawRecord = serde_json::from_str(&line).map_err(|e| Error::Format { line: line_no, msg: e.to_string() })?;
        let mut addresses = IndexMap::with_capacity(raw.addr.len());
        for (k, v) in raw.addr {
            let a = match v {
                None => None,
                Some(s) => Some(parse_address(&s).ok_or_else(|| Error::Format {
                    line: line_no,
                    msg: format!("bad address {s:?} for {k:?}"),
                })?),
            };
            addresses.insert(k, a);
        }
        let set = match &mut set {
            Some(s) => s,
            None => {
                let objects = addresses.keys().cloned().collect();
                set.insert(SampleSet::new(header.clone(), objects).map_err(|e| match e {
                    Error::Invariant { msg, .. } => Error::Invariant { line: line_no, msg },
                    e => e,
                })?)
            }
        };
        set.push_at(RunRecord { boot_id: raw.boot, run_id: raw.run, timestamp: raw.ts, addresses }, line_no)?;
    }
    set.ok_or(Error::Invariant { line: 1, msg: "no records".into() })
}

pub fn load_path(path: &std::path::Path) -> Result<SampleSet> {
    let f = std::fs::File::open(path)?;
    load_sample_set(std::io::BufReader::new(f))
}

pub fn save_path(set: &SampleSet, path: &std::path::Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    save_sample_set(set, std::io::BufWriter::new(f))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &str = r#"{"schema":"aslr-samples/1","os":"linux","arch":"x86_64","kernel":"6.4.0","page_size":4096,"source":"live"}"#;

    fn sixty() -> String {
        let addr: Vec<String> = (0..60).map(|i| format!("\"obj{i}\":\"{:#018x}\"", 0x7f00_0000_0000u64 + (i << 12))).collect();
        format!("{{\"boot\":\"x\",\"run\":1,\"ts\":1700000000,\"addr\":{{{}}}}}", addr.join(","))
    }

    #[test]
    fn one_record_with_sixty_addresses() {
        let text = format!("{HEADER}\n{}\n", sixty());
        let s = load_sample_set(text.as_bytes()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.objects().len(), 60);
        assert_eq!(to_bytes(&s), text.as_bytes());
    }

    #[test]
    fn kernel_address_is_an_invariant_error() {
        let text = format!("{HEADER}\n{{\"boot\":\"x\",\"run\":1,\"ts\":0,\"addr\":{{\"env\":\"0xffff800000001000\"}}}}\n");
        assert!(matches!(load_sample_set(text.as_bytes()), Err(Error::Invariant { line: 2, .. })));
    }

    #[test]
    fn missing_key_names_key_and_record() {
        let text = format!(
            "{HEADER}\n{}\n{}\n",
            r#"{"boot":"x","run":1,"ts":0,"addr":{"env":"0x0000000000001000","argv":"0x0000000000002000"}}"#,
            r#"{"boot":"x","run":2,"ts":0,"addr":{"argv":"0x0000000000002000"}}"#
        );
        let e = load_sample_set(text.as_bytes()).unwrap_err();
        let msg = e.to_string();
        assert!(matches!(e, Error::Invariant { line: 3, .. }));
        assert!(msg.contains("\"env\"") && msg.contains("record 2"), "{msg}");
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let bad_hex = format!("{HEADER}\n{{\"boot\":\"x\",\"run\":1,\"ts\":0,\"addr\":{{\"env\":\"0xzz\"}}}}\n");
        assert!(matches!(load_sample_set(bad_hex.as_bytes()), Err(Error::Format { line: 2, .. })));
        let bad_json = format!("{HEADER}\n{{\"boot\":\n");
        assert!(matches!(load_sample_set(bad_json.as_bytes()), Err(Error::Format { line: 2, .. })));
        assert!(matches!(load_sample_set("{\"schema\":\"other\"}\n".as_bytes()), Err(Error::Format { line: 1, .. })));
    }

    #[test]
    fn null_round_trips() {
        let text = format!("{HEADER}\n{}\n", r#"{"boot":"x","run":1,"ts":0,"addr":{"env":null,"argv":"0x0000000000002000"}}"#);
        let s = load_sample_set(text.as_bytes()).unwrap();
        assert_eq!(s.null_count("env"), Some(1));
        assert_eq!(to_bytes(&s), text.as_bytes());
    }
}
