//! Live address collection on Linux.
//!
//! Each run is a fresh process: the campaign driver re-executes the
//! `aslrkit` binary with the hidden `collect-one` subcommand, reads one JSON
//! line from its stdout and appends it as a record.

#[cfg(target_os = "linux")]
mod collect;
#[cfg(target_os = "linux")]
mod campaign;

#[cfg(target_os = "linux")]
pub use campaign::{collect_campaign, live_header, CampaignSummary};
#[cfg(target_os = "linux")]
pub use collect::{collect_run, collect_run_json};

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sample::{format_size, Thread};

pub const DEFAULT_MALLOC_SIZES: [u64; 6] = [16, 512, 4096, 256 << 10, 4 << 20, 128 << 20];
pub const DEFAULT_HUGE_BYTES: u64 = 2 << 20;

/// What one collector run allocates. Passed verbatim to the child.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CollectSpec {
    pub malloc_sizes: Vec<u64>,
    pub rounds: u32,
    pub include_mmap_single: bool,
    pub include_mmap_huge: bool,
    pub huge_page_bytes: u64,
}

impl Default for CollectSpec {
    fn default() -> Self {
        CollectSpec {
            malloc_sizes: DEFAULT_MALLOC_SIZES.to_vec(),
            rounds: 2,
            include_mmap_single: true,
            include_mmap_huge: true,
            huge_page_bytes: DEFAULT_HUGE_BYTES,
        }
    }
}

pub const MAIN_ONLY_KEYS: [&str; 6] = ["executable", "lib_big", "lib_small", "env", "argv", "shared_memory"];
pub const PER_THREAD_KEYS: [&str; 3] = ["stack", "tls", "heap"];

impl CollectSpec {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::Domain("rounds must be at least 1".into()));
        }
        if self.malloc_sizes.is_empty() || self.malloc_sizes[0] == 0 {
            return Err(Error::Domain("malloc sizes must be positive".into()));
        }
        if self.malloc_sizes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain("malloc sizes must be strictly increasing".into()));
        }
        if self.include_mmap_huge && self.huge_page_bytes == 0 {
            return Err(Error::Domain("huge mapping size must be positive".into()));
        }
        Ok(())
    }

    /// Allocation keys made by one thread in one round, in allocation order.
    pub fn round_keys(&self, t: Thread, round: u32) -> Vec<String> {
        let t = t.token();
        let mut keys: Vec<String> = self.malloc_sizes.iter().map(|&s| format!("malloc_{}_{t}_{round}", format_size(s))).collect();
        if self.include_mmap_single {
            keys.push(format!("mmap_single_{t}_{round}"));
        }
        if self.include_mmap_huge {
            keys.push(format!("mmap_huge_{t}_{round}"));
        }
        keys
    }

    /// Every key a run records, in file order.
    pub fn keys(&self) -> Vec<String> {
        let mut keys: Vec<String> = MAIN_ONLY_KEYS.iter().map(|s| s.to_string()).collect();
        for t in Thread::ALL {
            keys.extend(PER_THREAD_KEYS.iter().map(|k| format!("{k}_{}", t.token())));
        }
        for t in Thread::ALL {
            for r in 1..=self.rounds {
                keys.extend(self.round_keys(t, r));
            }
        }
        keys
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignConfig {
    pub n_runs: u64,
    pub output_path: PathBuf,
    pub spec: CollectSpec,
    /// Binary providing `collect-one`; the running executable by default.
    pub collector: Option<PathBuf>,
    /// Run children with address randomization turned off.
    pub disable_aslr: bool,
}

impl CampaignConfig {
    pub fn new(n_runs: u64, output_path: impl Into<PathBuf>) -> CampaignConfig {
        CampaignConfig { n_runs, output_path: output_path.into(), spec: CollectSpec::default(), collector: None, disable_aslr: false }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_runs == 0 {
            return Err(Error::Domain("n_runs must be at least 1".into()));
        }
        self.spec.validate()
    }
}
