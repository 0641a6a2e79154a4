#![allow(dead_code)]

use aslrkit::sample::SampleSet;
use aslrkit::synth::policy::{Addr, PlusRange};
use aslrkit::synth::{generate, Direction, Mode, ObjectPlacement, OffsetMode, PolicySpec, UniformRange};

pub fn uniform(lo: u64, slots: u64, bits: u32) -> Mode {
    Mode::UniformBase(UniformRange::new(lo, lo + (slots << bits), bits))
}

pub fn two_source(lo: u64, slots: u64, bits: u32) -> Mode {
    Mode::TwoSource {
        base: UniformRange::new(lo, lo + (slots << bits), bits),
        plus: PlusRange { lo: Addr(0), hi: Addr(slots << bits) },
        align_bits: bits,
    }
}

pub fn relative(anchor: &str, offset_mode: OffsetMode, direction: Direction) -> Mode {
    Mode::Relative { anchor: anchor.into(), offset_mode, direction }
}

pub fn obj(name: &str, mode: Mode) -> ObjectPlacement {
    ObjectPlacement { name: name.into(), mode, size: None }
}

pub fn policy(objects: Vec<ObjectPlacement>) -> PolicySpec {
    PolicySpec {
        name: None,
        platform: Default::default(),
        page_bits: 12,
        objects,
        seed: 11,
        boot_scoped: Default::default(),
        runs_per_boot: 0,
    }
}

pub fn sample(objects: Vec<ObjectPlacement>, n: u64) -> SampleSet {
    generate(&policy(objects), n).unwrap()
}
