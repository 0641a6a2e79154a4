//! Canonical object names.
//!
//! Two shapes exist: `<object>_<thread>` (e.g. `stack_M`) and
//! `<function>_<size>_<thread>_<seq>` (e.g. `malloc_4KB_ThB_2`). A handful of
//! main-thread-only objects (`env`, `executable`, `lib_big`, ...) carry no
//! suffix at all.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Thread {
    M,
    ThA,
    ThB,
}

impl Thread {
    pub const ALL: [Thread; 3] = [Thread::M, Thread::ThA, Thread::ThB];

    pub fn token(self) -> &'static str {
        match self {
            Thread::M => "M",
            Thread::ThA => "ThA",
            Thread::ThB => "ThB",
        }
    }

    fn parse(tok: &str) -> Option<Thread> {
        match tok {
            "M" => Some(Thread::M),
            "ThA" => Some(Thread::ThA),
            "ThB" => Some(Thread::ThB),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    StaticSection,
    Stack,
    Heap,
    Tls,
    Env,
    Argv,
    SharedMemory,
    Library,
    MallocAlloc,
    MmapAlloc,
}

impl ObjectKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ObjectKind::StaticSection => "static_section",
            ObjectKind::Stack => "stack",
            ObjectKind::Heap => "heap",
            ObjectKind::Tls => "tls",
            ObjectKind::Env => "env",
            ObjectKind::Argv => "argv",
            ObjectKind::SharedMemory => "shared_memory",
            ObjectKind::Library => "library",
            ObjectKind::MallocAlloc => "malloc_alloc",
            ObjectKind::MmapAlloc => "mmap_alloc",
        }
    }

    /// Kinds whose recorded address is a raw allocator chunk, not a page base.
    pub fn is_sub_page(self) -> bool {
        matches!(self, ObjectKind::MallocAlloc | ObjectKind::Heap)
    }
}

/// Objects that exist once per thread: `<object>_<thread>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PerThread {
    Stack,
    Heap,
    Tls,
    StackArgv,
}

impl PerThread {
    const TABLE: [(PerThread, &'static str); 4] = [
        (PerThread::Stack, "stack"),
        (PerThread::Heap, "heap"),
        (PerThread::Tls, "tls"),
        (PerThread::StackArgv, "stack&argv"),
    ];

    fn token(self) -> &'static str {
        Self::TABLE.iter().find(|(p, _)| *p == self).unwrap().1
    }
}

/// Main-thread-only objects, named without a suffix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MainOnly {
    Env,
    Argv,
    SharedMemory,
    Executable,
    LibSmall,
    LibBig,
    Libraries,
}

impl MainOnly {
    const TABLE: [(MainOnly, &'static str); 7] = [
        (MainOnly::Env, "env"),
        (MainOnly::Argv, "argv"),
        (MainOnly::SharedMemory, "shared_memory"),
        (MainOnly::Executable, "executable"),
        (MainOnly::LibSmall, "lib_small"),
        (MainOnly::LibBig, "lib_big"),
        (MainOnly::Libraries, "libraries"),
    ];

    fn token(self) -> &'static str {
        Self::TABLE.iter().find(|(p, _)| *p == self).unwrap().1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocFn {
    Malloc,
    Mmap,
    VirtualAlloc,
}

impl AllocFn {
    fn token(self) -> &'static str {
        match self {
            AllocFn::Malloc => "malloc",
            AllocFn::Mmap => "mmap",
            AllocFn::VirtualAlloc => "VirtualAlloc",
        }
    }
}

/// The size token of an allocation name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AllocSize {
    Bytes(u64),
    Single,
    Huge,
    Large,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    PerThread(PerThread, Thread),
    MainOnly(MainOnly),
    Alloc { function: AllocFn, size: AllocSize, thread: Thread, seq: u32 },
}

/// A parsed object name. Holds the original text, which always equals the
/// formatted form because only canonical spellings parse.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObjectKey {
    name: String,
    form: Form,
}

const UNITS: [(&str, u64); 4] = [("GB", 1 << 30), ("MB", 1 << 20), ("KB", 1 << 10), ("B", 1)];

/// `4096` -> `4KB`, using the largest unit that divides exactly.
pub fn format_size(bytes: u64) -> String {
    for (unit, scale) in UNITS {
        if bytes >= scale && bytes.is_multiple_of(scale) {
            return format!("{}{}", bytes / scale, unit);
        }
    }
    format!("{bytes}B")
}

fn parse_size(tok: &str) -> Option<u64> {
    let digits = tok.bytes().take_while(u8::is_ascii_digit).count();
    let (num, unit) = tok.split_at(digits);
    if num.is_empty() || (num.len() > 1 && num.starts_with('0')) {
        return None;
    }
    let scale = UNITS.iter().find(|(u, _)| *u == unit)?.1;
    let bytes = num.parse::<u64>().ok()?.checked_mul(scale)?;
    // only the canonical spelling round-trips
    (bytes > 0 && format_size(bytes) == tok).then_some(bytes)
}

fn parse_seq(tok: &str) -> Option<u32> {
    if tok.is_empty() || tok.starts_with('0') || !tok.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    tok.parse().ok()
}

fn malformed(name: &str, reason: &'static str) -> Error {
    Error::MalformedName { name: name.to_string(), reason }
}

impl ObjectKey {
    pub fn parse(name: &str) -> Result<ObjectKey> {
        if name.is_empty() || !name.is_ascii() {
            return Err(malformed(name, "name must be nonempty ASCII"));
        }
        if let Some((m, _)) = MainOnly::TABLE.iter().find(|(_, t)| *t == name) {
            return Ok(ObjectKey { name: name.to_string(), form: Form::MainOnly(*m) });
        }
        for (p, tok) in PerThread::TABLE {
            if let Some(rest) = name.strip_prefix(tok).and_then(|r| r.strip_prefix('_')) {
                let thread = Thread::parse(rest).ok_or_else(|| malformed(name, "unknown thread token"))?;
                return Ok(ObjectKey { name: name.to_string(), form: Form::PerThread(p, thread) });
            }
        }
        for function in [AllocFn::Malloc, AllocFn::Mmap, AllocFn::VirtualAlloc] {
            let Some(rest) = name.strip_prefix(function.token()).and_then(|r| r.strip_prefix('_')) else {
                continue;
            };
            let parts: Vec<&str> = rest.split('_').collect();
            let [size_tok, thread_tok, seq_tok] = parts[..] else {
                return Err(malformed(name, "expected <function>_<size>_<thread>_<seq>"));
            };
            let size = match (function, size_tok) {
                (AllocFn::Malloc, t) => AllocSize::Bytes(parse_size(t).ok_or_else(|| malformed(name, "unrecognized size token"))?),
                (AllocFn::Mmap, "single") | (AllocFn::VirtualAlloc, "single") => AllocSize::Single,
                (AllocFn::Mmap, "huge") => AllocSize::Huge,
                (AllocFn::VirtualAlloc, "large") => AllocSize::Large,
                _ => return Err(malformed(name, "unrecognized size token")),
            };
            let thread = Thread::parse(thread_tok).ok_or_else(|| malformed(name, "unknown thread token"))?;
            let seq = parse_seq(seq_tok).ok_or_else(|| malformed(name, "sequence must be a positive integer"))?;
            return Ok(ObjectKey { name: name.to_string(), form: Form::Alloc { function, size, thread, seq } });
        }
        Err(malformed(name, "unknown object"))
    }

    pub fn from_form(form: Form) -> ObjectKey {
        let name = match form {
            Form::MainOnly(m) => m.token().to_string(),
            Form::PerThread(p, t) => format!("{}_{}", p.token(), t.token()),
            Form::Alloc { function, size, thread, seq } => {
                let size = match size {
                    AllocSize::Bytes(b) => format_size(b),
                    AllocSize::Single => "single".into(),
                    AllocSize::Huge => "huge".into(),
                    AllocSize::Large => "large".into(),
                };
                format!("{}_{}_{}_{}", function.token(), size, thread.token(), seq)
            }
        };
        ObjectKey { name, form }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn kind(&self) -> ObjectKind {
        match self.form {
            Form::MainOnly(MainOnly::Env) => ObjectKind::Env,
            Form::MainOnly(MainOnly::Argv) => ObjectKind::Argv,
            Form::MainOnly(MainOnly::SharedMemory) => ObjectKind::SharedMemory,
            Form::MainOnly(MainOnly::Executable) => ObjectKind::StaticSection,
            Form::MainOnly(MainOnly::LibSmall | MainOnly::LibBig | MainOnly::Libraries) => ObjectKind::Library,
            Form::PerThread(PerThread::Stack | PerThread::StackArgv, _) => ObjectKind::Stack,
            Form::PerThread(PerThread::Heap, _) => ObjectKind::Heap,
            Form::PerThread(PerThread::Tls, _) => ObjectKind::Tls,
            Form::Alloc { function: AllocFn::Malloc, .. } => ObjectKind::MallocAlloc,
            Form::Alloc { .. } => ObjectKind::MmapAlloc,
        }
    }

    /// Main-only objects belong to the main thread.
    pub fn thread(&self) -> Thread {
        match self.form {
            Form::MainOnly(_) => Thread::M,
            Form::PerThread(_, t) | Form::Alloc { thread: t, .. } => t,
        }
    }

    /// Byte size for malloc names.
    pub fn size(&self) -> Option<u64> {
        match self.form {
            Form::Alloc { size: AllocSize::Bytes(b), .. } => Some(b),
            _ => None,
        }
    }

    pub fn seq(&self) -> Option<u32> {
        match self.form {
            Form::Alloc { seq, .. } => Some(seq),
            _ => None,
        }
    }
}

impl FromStr for ObjectKey {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ObjectKey::parse(s)
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

impl Serialize for ObjectKey {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.name)
    }
}

impl<'de> Deserialize<'de> for ObjectKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        ObjectKey::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// The kind of a free-form object name, if it follows the grammar.
pub fn kind_of(name: &str) -> Option<ObjectKind> {
    ObjectKey::parse(name).ok().map(|k| k.kind())
}
