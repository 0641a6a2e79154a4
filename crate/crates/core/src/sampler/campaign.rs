use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Seek, SeekFrom, Write};
use std::os::unix::process::CommandExt;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{SystemTime, UNIX_EPOCH};

use indexmap::IndexMap;

use super::CampaignConfig;
use crate::error::{Error, Result};
use crate::sample::format::{header_line, parse_address, write_record_line};
use crate::sample::{Header, Platform, Source};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CampaignSummary {
    pub runs_ok: u64,
    pub runs_failed: u64,
}

fn read_trimmed(path: &str) -> Option<String> {
    std::fs::read_to_string(path).ok().map(|s| s.trim().to_string())
}

/// Header describing the machine the collector runs on.
pub fn live_header() -> Header {
    // SAFETY: sysconf has no preconditions.
    let page = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    let platform = Platform {
        os: "linux".into(),
        arch: std::env::consts::ARCH.into(),
        kernel: read_trimmed("/proc/sys/kernel/osrelease").unwrap_or_else(|| "unknown".into()),
        page_size: if page > 0 { page as u64 } else { 4096 },
        source: Source::Live,
    };
    let mut h = Header::new(platform);
    h.randomize_va_space = read_trimmed("/proc/sys/kernel/randomize_va_space").and_then(|s| s.parse().ok());
    h.shared_memory = Some("posix".into());
    h
}

fn boot_id() -> String {
    read_trimmed("/proc/sys/kernel/random/boot_id").unwrap_or_else(|| "unknown".into())
}

// IndexMap keeps the file's key order
#[derive(serde::Deserialize)]
struct Prior {
    #[serde(default)]
    run: u64,
    addr: Option<IndexMap<String, serde::de::IgnoredAny>>,
}

/// Keys of the first record and the largest run id already in `path`.
fn existing(path: &Path) -> Result<Option<(Vec<String>, u64)>> {
    let Ok(f) = File::open(path) else { return Ok(None) };
    let mut lines = BufReader::new(f).lines();
    let Some(first) = lines.next().transpose()? else { return Ok(None) };
    if first.trim().is_empty() {
        return Ok(None);
    }
    let mut keys = None;
    let mut last = 0;
    for (i, l) in lines.enumerate() {
        let l = l?;
        if l.trim().is_empty() {
            continue;
        }
        let v: Prior = serde_json::from_str(&l).map_err(|e| Error::Format { line: i + 2, msg: e.to_string() })?;
        last = last.max(v.run);
        if keys.is_none() {
            keys = v.addr.map(|m| m.into_keys().collect());
        }
    }
    Ok(Some((keys.unwrap_or_default(), last)))
}

fn run_child(cfg: &CampaignConfig, spec_json: &str, exe: &Path) -> Option<IndexMap<String, Option<u64>>> {
    let mut cmd = Command::new(exe);
    cmd.arg("collect-one").arg("--spec").arg(spec_json).stdin(Stdio::null()).stdout(Stdio::piped()).stderr(Stdio::null());
    if cfg.disable_aslr {
        // SAFETY: personality is async-signal-safe and only affects the child.
        unsafe {
            cmd.pre_exec(|| {
                if libc::personality(libc::ADDR_NO_RANDOMIZE as libc::c_ulong) == -1 {
                    return Err(std::io::Error::last_os_error());
                }
                Ok(())
            });
        }
    }
    let out = cmd.output().ok()?;
    if !out.status.success() {
        return None;
    }
    let line = String::from_utf8(out.stdout).ok()?;
    let raw: IndexMap<String, Option<String>> = serde_json::from_str(line.trim()).ok()?;
    raw.into_iter()
        .map(|(k, v)| match v {
            None => Some((k, None)),
            Some(s) => parse_address(&s).map(|a| (k, Some(a))),
        })
        .collect()
}

/// Runs `n_runs` collector children one after another, appending a record
/// per successful run. Failed or malformed children are counted and skipped.
pub fn collect_campaign(cfg: &CampaignConfig) -> Result<CampaignSummary> {
    cfg.validate()?;
    let keys = cfg.spec.keys();
    let exe = match &cfg.collector {
        Some(p) => p.clone(),
        None => std::env::current_exe()?,
    };
    let spec_json = serde_json::to_string(&cfg.spec).expect("spec serializes");
    let prior = existing(&cfg.output_path)?;
    let mut next_run = 1;
    if let Some((old_keys, last)) = &prior {
        if !old_keys.is_empty() && *old_keys != keys {
            return Err(Error::Invariant { line: 2, msg: "existing file records a different key set".into() });
        }
        next_run = last + 1;
    }
    let mut file = OpenOptions::new().create(true).append(true).open(&cfg.output_path)?;
    if prior.is_none() {
        file.seek(SeekFrom::End(0))?;
        writeln!(file, "{}", header_line(&live_header()))?;
    }

    let mut summary = CampaignSummary::default();
    let mut line = String::new();
    for _ in 0..cfg.n_runs {
        let boot = boot_id();
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs() as i64);
        let rec = run_child(cfg, &spec_json, &exe).filter(|m| m.keys().eq(keys.iter()));
        let Some(rec) = rec else {
            summary.runs_failed += 1;
            continue;
        };
        line.clear();
        write_record_line(&mut line, &boot, next_run, ts, rec.iter().map(|(k, v)| (k.as_str(), *v)));
        line.push('\n');
        // one write per record keeps the file valid JSONL between runs
        file.write_all(line.as_bytes())?;
        next_run += 1;
        summary.runs_ok += 1;
    }
    file.flush()?;
    Ok(summary)
}
