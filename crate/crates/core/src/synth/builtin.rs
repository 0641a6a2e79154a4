//! Ready-made policies modelled on measured systems.

use std::collections::BTreeSet;

use super::policy::*;

pub const BUILTIN_NAMES: [&str; 3] = ["linux-6.4-like", "linux-5.17-like", "windows-like"];

const MIB: u64 = 1 << 20;
const PAGE: u64 = 1 << 12;
/// Page slots of the executable and, without folios, of mapped libraries.
const MMAP_SLOTS: u64 = 485_000_000;
/// Random page gap between the C library and the small library.
const LIB_GAP_PAGES: u64 = 923;

fn obj(name: &str, mode: Mode, size: u64) -> ObjectPlacement {
    ObjectPlacement { name: name.into(), mode, size: Some(Addr(size)) }
}

fn uniform(lo: u64, slots: u64, bits: u32) -> Mode {
    Mode::UniformBase(UniformRange::new(lo, lo + (slots << bits), bits))
}

fn rel(anchor: &str, offset_mode: OffsetMode, direction: Direction) -> Mode {
    Mode::Relative { anchor: anchor.into(), offset_mode, direction }
}

fn random_pages(pages: u64) -> OffsetMode {
    OffsetMode::Random(UniformRange::new(0, pages * PAGE, 12))
}

fn linux(name: &str, kernel: &str, folio: bool) -> PolicySpec {
    let lib_big = if folio {
        // 2 MiB folios push the C library onto 4 MiB-aligned slots
        uniform(0x7d00_0000_0000, 1 << 19, 22)
    } else {
        uniform(0x7d00_0000_0000, MMAP_SLOTS, 12)
    };
    let lib_small = if folio {
        rel("lib_big", random_pages(LIB_GAP_PAGES), Direction::Below)
    } else {
        rel("lib_big", OffsetMode::Zero, Direction::Below)
    };
    let objects = vec![
        obj("executable", uniform(0x5500_0000_0000, MMAP_SLOTS, 12), 16 * PAGE),
        // brk start: a 2^13-page random gap after the image
        obj("heap_M", rel("executable", random_pages(1 << 13), Direction::Above), 33 * PAGE),
        obj("malloc_4KB_M_1", rel("heap_M", OffsetMode::Fixed(Addr(PAGE)), Direction::Above), PAGE),
        obj("lib_big", lib_big, 2 * MIB),
        obj("lib_small", lib_small, 5 * PAGE),
        obj("mmap_huge_M_1", rel("lib_big", OffsetMode::Alignment(21), Direction::Below), 2 * MIB),
        obj("mmap_single_M_1", rel("lib_small", OffsetMode::Zero, Direction::Below), PAGE),
        obj("stack_M", uniform(0x7000_0000_0000, 1_932_735_283, 12), 33 * PAGE),
        obj("env", rel("stack_M", OffsetMode::Fixed(Addr(PAGE)), Direction::Above), PAGE),
        obj("argv", rel("stack_M", OffsetMode::Zero, Direction::Above), PAGE),
    ];
    PolicySpec {
        name: Some(name.into()),
        platform: PolicyPlatform { os: "linux".into(), arch: "x86_64".into(), kernel: kernel.into() },
        page_bits: 12,
        objects,
        seed: 0,
        boot_scoped: BTreeSet::new(),
        runs_per_boot: 1000,
    }
}

fn windows() -> PolicySpec {
    let image_lo = 0x7ff8_0000_0000;
    let objects = vec![
        // 64 KiB granularity inside the shared image region
        obj("executable", uniform(image_lo, 1 << 17, 16), 16 * PAGE),
        obj("libraries", uniform(0x7ffc_0000_0000, 1 << 18, 16), 64 * PAGE),
        obj("stack_M", uniform(0x00a0_0000_0000, 1 << 22, 12), 256 * PAGE),
        obj(
            "heap_M",
            Mode::TwoSource {
                base: UniformRange::new(0x0200_0000_0000, 0x0200_0000_0000 + (1 << 32), 12),
                plus: PlusRange { lo: Addr(0), hi: Addr(1 << 32) },
                align_bits: 12,
            },
            256 * PAGE,
        ),
        obj(
            "VirtualAlloc_large_M_1",
            Mode::TwoSource {
                base: UniformRange::new(0x0300_0000_0000, 0x0300_0000_0000 + (1 << 32), 12),
                plus: PlusRange { lo: Addr(0), hi: Addr(1 << 32) },
                align_bits: 12,
            },
            MIB,
        ),
        obj("malloc_4KB_M_1", rel("heap_M", OffsetMode::Fixed(Addr(2 * PAGE)), Direction::Above), PAGE),
    ];
    PolicySpec {
        name: Some("windows-like".into()),
        platform: PolicyPlatform { os: "windows".into(), arch: "x86_64".into(), kernel: "synthetic".into() },
        page_bits: 12,
        objects,
        seed: 0,
        boot_scoped: ["executable", "libraries"].into_iter().map(String::from).collect(),
        runs_per_boot: 20,
    }
}

pub fn builtin(name: &str) -> Option<PolicySpec> {
    match name {
        "linux-6.4-like" => Some(linux(name, "6.4-synthetic", true)),
        "linux-5.17-like" => Some(linux(name, "5.17-synthetic", false)),
        "windows-like" => Some(windows()),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::analytic::{analytic_corr_entropy, analytic_entropy};

    #[test]
    fn all_valid() {
        for n in BUILTIN_NAMES {
            builtin(n).unwrap().validate().unwrap();
        }
        assert!(builtin("nope").is_none());
    }

    #[test]
    fn folio_policy_oracles() {
        let p = builtin("linux-6.4-like").unwrap();
        let h = |o: &str| analytic_entropy(&p, o).unwrap().unwrap().bits;
        let c = |a: &str, b: &str| analytic_corr_entropy(&p, a, b).unwrap().unwrap().bits;
        assert_eq!(h("lib_big"), 19.0);
        assert!((h("lib_small") - 28.850).abs() < 1e-3);
        assert!((c("lib_big", "lib_small") - 9.850).abs() < 1e-3);
        assert_eq!(c("executable", "heap_M"), 13.0);
        assert_eq!(c("lib_big", "mmap_huge_M_1"), 0.0);
        assert!((h("executable") - 28.853).abs() < 1e-3);
    }

    #[test]
    fn without_folio_libraries_are_contiguous() {
        let p = builtin("linux-5.17-like").unwrap();
        assert!((analytic_entropy(&p, "lib_big").unwrap().unwrap().bits - 28.853).abs() < 1e-3);
        assert_eq!(analytic_corr_entropy(&p, "lib_big", "lib_small").unwrap().unwrap().bits, 0.0);
    }

    #[test]
    fn windows_image_region() {
        let p = builtin("windows-like").unwrap();
        for o in ["executable", "libraries"] {
            let Mode::UniformBase(r) = p.objects[p.index_of(o).unwrap()].mode else { panic!() };
            assert!(r.lo.0 >= 0x7ff800000000 && r.hi.0 <= 0x800000000000);
        }
    }
}
