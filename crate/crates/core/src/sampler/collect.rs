// The in-process collector. Allocations are leaked on purpose: the process
// exits right after reporting.

use std::cell::Cell;
use std::collections::HashMap;
use std::ffi::{c_char, c_void, CStr, CString};
use std::path::PathBuf;
use std::sync::Mutex;

use indexmap::IndexMap;

use super::CollectSpec;
use crate::error::Result;
use crate::sample::Thread;

pub const SHIM_SYMBOL: &CStr = c"aslrkit_shim_marker";
const SHIM_FILE: &str = "libaslrkit_shim.so";

extern "C" {
    static environ: *const *const c_char;
}

thread_local! {
    static TLS_PROBE: Cell<u64> = const { Cell::new(0) };
}

fn page_size() -> u64 {
    // SAFETY: sysconf has no preconditions.
    let p = unsafe { libc::sysconf(libc::_SC_PAGESIZE) };
    if p > 0 {
        p as u64
    } else {
        4096
    }
}

fn nonnull(p: *const c_void) -> Option<u64> {
    (!p.is_null()).then_some(p as u64)
}

fn map_anon(len: u64) -> Option<u64> {
    // SAFETY: anonymous private mapping, no existing memory is touched.
    let p = unsafe {
        libc::mmap(std::ptr::null_mut(), len as usize, libc::PROT_READ | libc::PROT_WRITE, libc::MAP_PRIVATE | libc::MAP_ANONYMOUS, -1, 0)
    };
    (p != libc::MAP_FAILED).then_some(p as u64)
}

fn leak_malloc(size: u64) -> Option<u64> {
    // SAFETY: plain allocation; the block is never freed.
    nonnull(unsafe { libc::malloc(size as usize) })
}

/// The allocation script every thread runs.
fn thread_script(t: Thread, spec: &CollectSpec, page_mask: u64) -> Vec<(String, Option<u64>)> {
    let tok = t.token();
    let mut out = Vec::new();
    // the heap chunk comes first so it reflects a fresh arena
    let heap = leak_malloc(16);
    let probe = 0u8;
    let stack = std::hint::black_box(&probe) as *const u8 as u64;
    let tls = TLS_PROBE.with(|c| {
        c.set(1);
        c as *const Cell<u64> as u64
    });
    out.push((format!("stack_{tok}"), Some(stack & page_mask)));
    out.push((format!("tls_{tok}"), Some(tls & page_mask)));
    out.push((format!("heap_{tok}"), heap));
    for round in 1..=spec.rounds {
        let keys = spec.round_keys(t, round);
        let mut k = keys.into_iter();
        for &s in &spec.malloc_sizes {
            out.push((k.next().unwrap(), leak_malloc(s)));
        }
        if spec.include_mmap_single {
            out.push((k.next().unwrap(), map_anon(!page_mask + 1)));
        }
        if spec.include_mmap_huge {
            out.push((k.next().unwrap(), map_anon(spec.huge_page_bytes)));
        }
    }
    out
}

fn shim_candidates() -> Vec<PathBuf> {
    let mut c = Vec::new();
    if let Some(p) = std::env::var_os("ASLRKIT_SHIM") {
        c.push(PathBuf::from(p));
    }
    if let Ok(exe) = std::env::current_exe() {
        if let Some(dir) = exe.parent() {
            c.push(dir.join(SHIM_FILE));
        }
    }
    if let Some(p) = option_env!("ASLRKIT_SHIM_PATH") {
        c.push(PathBuf::from(p));
    }
    c
}

fn symbol_in(lib: &CStr, flags: i32, sym: &CStr) -> Option<u64> {
    // SAFETY: both strings are NUL-terminated; the handle is leaked so the
    // symbol stays mapped.
    unsafe {
        let h = libc::dlopen(lib.as_ptr(), flags);
        if h.is_null() {
            return None;
        }
        nonnull(libc::dlsym(h, sym.as_ptr()))
    }
}

fn lib_small() -> Option<u64> {
    shim_candidates().into_iter().filter(|p| p.exists()).find_map(|p| {
        let c = CString::new(p.into_os_string().into_encoded_bytes()).ok()?;
        symbol_in(&c, libc::RTLD_NOW, SHIM_SYMBOL)
    })
}

fn lib_big() -> Option<u64> {
    symbol_in(c"libc.so.6", libc::RTLD_LAZY | libc::RTLD_NOLOAD, c"malloc").or(Some(libc::malloc as *const () as u64))
}

/// First environment string and argv[0]. The argv pointer array sits right
/// below envp on the initial stack.
fn env_and_argv() -> (Option<u64>, Option<u64>) {
    let argc = std::env::args_os().count();
    // SAFETY: `environ` is the startup envp array as long as nothing called
    // setenv, which this process never does before collecting.
    unsafe {
        let envp = environ;
        if envp.is_null() {
            return (None, None);
        }
        let env = nonnull((*envp) as *const c_void);
        let argv = envp.sub(argc + 1);
        let argv0 = if (*argv.add(argc)).is_null() { nonnull((*argv) as *const c_void) } else { None };
        (env, argv0)
    }
}

fn shared_memory(page: u64) -> Option<u64> {
    let name = CString::new(format!("/aslrkit-{}", std::process::id())).ok()?;
    // SAFETY: standard POSIX shared memory sequence on an exclusive name.
    unsafe {
        let fd = libc::shm_open(name.as_ptr(), libc::O_CREAT | libc::O_EXCL | libc::O_RDWR, 0o600);
        if fd < 0 {
            return None;
        }
        libc::shm_unlink(name.as_ptr());
        let p = if libc::ftruncate(fd, page as libc::off_t) == 0 {
            libc::mmap(std::ptr::null_mut(), page as usize, libc::PROT_READ | libc::PROT_WRITE, libc::MAP_SHARED, fd, 0)
        } else {
            libc::MAP_FAILED
        };
        libc::close(fd);
        (p != libc::MAP_FAILED).then_some(p as u64)
    }
}

/// Runs the allocation script in this process: main thread first, then the
/// two workers concurrently. Failed allocations come back as `None`.
pub fn collect_run(spec: &CollectSpec) -> Result<IndexMap<String, Option<u64>>> {
    spec.validate()?;
    let page = page_size();
    let mask = !(page - 1);
    let (env, argv) = env_and_argv();
    let masked = |a: Option<u64>| a.map(|a| a & mask);
    let mut found: HashMap<String, Option<u64>> = HashMap::new();
    found.insert("executable".into(), Some(collect_run as *const () as u64 & mask));
    found.insert("lib_big".into(), masked(lib_big()));
    found.insert("lib_small".into(), masked(lib_small()));
    found.insert("env".into(), masked(env));
    found.insert("argv".into(), masked(argv));
    found.insert("shared_memory".into(), shared_memory(page));

    let table = Mutex::new(found);
    table.lock().unwrap().extend(thread_script(Thread::M, spec, mask));
    std::thread::scope(|s| {
        for t in [Thread::ThA, Thread::ThB] {
            let table = &table;
            s.spawn(move || {
                let rows = thread_script(t, spec, mask);
                table.lock().unwrap().extend(rows);
            });
        }
    });
    let mut found = table.into_inner().unwrap();
    Ok(spec.keys().into_iter().map(|k| (k.clone(), found.remove(&k).flatten())).collect())
}

/// One line of JSON mapping each key to a hex address or null.
pub fn collect_run_json(spec: &CollectSpec) -> Result<String> {
    let addrs = collect_run(spec)?;
    let hex: IndexMap<String, Option<String>> = addrs.into_iter().map(|(k, v)| (k, v.map(|a| format!("{a:#018x}")))).collect();
    Ok(serde_json::to_string(&hex).expect("map serializes"))
}
