use rayon::prelude::*;

use super::policy::{Direction, Mode, OffsetMode, PolicySpec};
use super::rng::{CounterRng, RNG_ID};
use crate::error::{Error, Result};
use crate::sample::{Header, Platform, SampleSet, Source};

const RUN_STREAM: u64 = 0x72756e;
const BOOT_STREAM: u64 = 0x626f6f74;

/// Two draws are reserved per object per run (or per boot).
const DRAWS_PER_OBJECT: u64 = 2;

fn align_up(x: u64, bits: u32) -> u64 {
    let m = (1u64 << bits) - 1;
    (x + m) & !m
}

fn align_down(x: u64, bits: u32) -> u64 {
    x & !((1u64 << bits) - 1)
}

pub fn boot_id(index: u64) -> String {
    format!("b{index:06}")
}

/// Computes record addresses from counter positions alone, so any run can be
/// produced without the ones before it.
pub(crate) struct Placer<'a> {
    policy: &'a PolicySpec,
    anchors: Vec<usize>,
    sizes: Vec<u64>,
    boot_scoped: Vec<bool>,
    run_rng: CounterRng,
    boot_rng: CounterRng,
}

impl<'a> Placer<'a> {
    pub(crate) fn new(policy: &'a PolicySpec, seed: u64) -> Placer<'a> {
        let anchors = policy
            .objects
            .iter()
            .map(|o| match &o.mode {
                Mode::Relative { anchor, .. } => policy.index_of(anchor).expect("validated"),
                _ => usize::MAX,
            })
            .collect();
        Placer {
            policy,
            anchors,
            sizes: policy.objects.iter().map(|o| policy.size_of(o)).collect(),
            boot_scoped: policy.objects.iter().map(|o| policy.boot_scoped.contains(&o.name)).collect(),
            run_rng: CounterRng::new(seed, RUN_STREAM),
            boot_rng: CounterRng::new(seed, BOOT_STREAM),
        }
    }

    fn boot_of(&self, run: u64) -> u64 {
        match self.policy.runs_per_boot {
            0 => 0,
            r => run / r,
        }
    }

    pub(crate) fn place(&self, run: u64, out: &mut [u64]) {
        let n_obj = self.policy.objects.len() as u64;
        let boot = self.boot_of(run);
        for (j, o) in self.policy.objects.iter().enumerate() {
            let (rng, slot) = if self.boot_scoped[j] { (&self.boot_rng, boot) } else { (&self.run_rng, run) };
            let ctr = slot * (DRAWS_PER_OBJECT * n_obj) + DRAWS_PER_OBJECT * j as u64;
            let size = self.sizes[j];
            out[j] = match &o.mode {
                Mode::UniformBase(r) => r.lo.0 + (rng.below(ctr, r.count()) << r.align_bits),
                Mode::TwoSource { base, plus, align_bits } => {
                    let b = base.lo.0 + (rng.below(ctr, base.count()) << base.align_bits);
                    let k = rng.below(ctr + 1, (plus.hi.0 - plus.lo.0) >> align_bits);
                    b + plus.lo.0 + (k << align_bits)
                }
                Mode::Relative { offset_mode, direction, .. } => {
                    let a = self.anchors[j];
                    let anchor = out[a];
                    let end = anchor + self.sizes[a];
                    let offset = |r: &super::policy::UniformRange| r.lo.0 + (rng.below(ctr, r.count()) << r.align_bits);
                    match (direction, offset_mode) {
                        (Direction::Above, OffsetMode::Zero) => end,
                        (Direction::Above, OffsetMode::Fixed(f)) => end + f.0,
                        (Direction::Above, OffsetMode::Random(r)) => end + offset(r),
                        (Direction::Above, OffsetMode::Alignment(b)) => align_up(end, *b),
                        (Direction::Below, OffsetMode::Zero) => anchor - size,
                        (Direction::Below, OffsetMode::Fixed(f)) => anchor - f.0 - size,
                        (Direction::Below, OffsetMode::Random(r)) => anchor - offset(r) - size,
                        (Direction::Below, OffsetMode::Alignment(b)) => align_down(anchor - size, *b),
                    }
                }
            };
        }
    }
}

/// Simulates `n_runs` records. Identical inputs give identical output.
pub fn generate(policy: &PolicySpec, n_runs: u64) -> Result<SampleSet> {
    generate_with_seed(policy, n_runs, policy.seed)
}

pub fn generate_with_seed(policy: &PolicySpec, n_runs: u64, seed: u64) -> Result<SampleSet> {
    policy.validate()?;
    if n_runs == 0 {
        return Err(Error::Policy("n_runs must be at least 1".into()));
    }
    let placer = Placer::new(policy, seed);
    let n_obj = policy.objects.len();
    let mut flat = vec![0u64; n_runs as usize * n_obj];
    flat.par_chunks_mut(n_obj * 4096).enumerate().for_each(|(chunk, rows)| {
        for (i, row) in rows.chunks_mut(n_obj).enumerate() {
            placer.place((chunk * 4096 + i) as u64, row);
        }
    });

    let platform = Platform {
        os: policy.platform.os.clone(),
        arch: policy.platform.arch.clone(),
        kernel: policy.platform.kernel.clone(),
        page_size: policy.page_size(),
        source: Source::Synthetic,
    };
    let mut header = Header::new(platform);
    header.policy = Some(policy.fingerprint());
    header.rng = Some(RNG_ID.to_string());
    let mut set = SampleSet::new(header, policy.objects.iter().map(|o| o.name.clone()).collect())?;
    let mut current = (u64::MAX, String::new());
    for (run, row) in flat.chunks(n_obj).enumerate() {
        let run = run as u64;
        let boot = placer.boot_of(run);
        if boot != current.0 {
            current = (boot, boot_id(boot));
        }
        set.push_unchecked(&current.1, run + 1, run as i64, row);
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::policy::{ObjectPlacement, PlusRange, UniformRange};

    fn obj(name: &str, mode: Mode) -> ObjectPlacement {
        ObjectPlacement { name: name.into(), mode, size: None }
    }

    fn policy(objects: Vec<ObjectPlacement>) -> PolicySpec {
        PolicySpec { name: None, platform: Default::default(), page_bits: 12, objects, seed: 5, boot_scoped: Default::default(), runs_per_boot: 0 }
    }

    #[test]
    fn uniform_in_range_and_aligned() {
        let p = policy(vec![obj("a", Mode::UniformBase(UniformRange::new(0x7f0000000000, 0x7f8000000000, 12)))]);
        let s = generate(&p, 1000).unwrap();
        let v = s.series("a").unwrap();
        assert_eq!(v.len(), 1000);
        assert!(v.iter().all(|&a| (0x7f0000000000..0x7f8000000000).contains(&a) && a & 0xfff == 0));
    }

    #[test]
    fn zero_offset_sits_at_end_of_anchor() {
        let mut a = obj("a", Mode::UniformBase(UniformRange::new(0x10000000, 0x20000000, 12)));
        a.size = Some(super::super::policy::Addr(0x3000));
        let b = obj("b", Mode::Relative { anchor: "a".into(), offset_mode: OffsetMode::Zero, direction: Direction::Above });
        let s = generate(&policy(vec![a, b]), 200).unwrap();
        for (x, y) in s.series("a").unwrap().iter().zip(s.series("b").unwrap()) {
            assert_eq!(*y, x + 0x3000);
        }
    }

    #[test]
    fn placement_modes() {
        let lib = obj("lib", Mode::UniformBase(UniformRange::new(0x7d0000000000, 0x7f0000000000, 22)));
        let below = obj("down", Mode::Relative { anchor: "lib".into(), offset_mode: OffsetMode::Alignment(21), direction: Direction::Below });
        let rnd = obj(
            "rnd",
            Mode::Relative { anchor: "lib".into(), offset_mode: OffsetMode::Random(UniformRange::new(0, 0x10000, 12)), direction: Direction::Below },
        );
        let two = obj(
            "two",
            Mode::TwoSource {
                base: UniformRange::new(0x100000000, 0x200000000, 12),
                plus: PlusRange { lo: super::super::policy::Addr(0), hi: super::super::policy::Addr(0x100000000) },
                align_bits: 12,
            },
        );
        let s = generate(&policy(vec![lib, below, rnd, two]), 500).unwrap();
        let lib = s.series("lib").unwrap();
        for (i, &l) in lib.iter().enumerate() {
            assert_eq!(l % (1 << 22), 0);
            assert_eq!(s.series("down").unwrap()[i], l - 0x200000);
            let d = l - s.series("rnd").unwrap()[i] - 0x1000;
            assert!(d < 0x10000 && d.is_multiple_of(0x1000));
            let t = s.series("two").unwrap()[i];
            assert!((0x100000000..0x300000000).contains(&t));
        }
    }

    #[test]
    fn deterministic_and_boot_scoped() {
        let mut p = policy(vec![
            obj("boot", Mode::UniformBase(UniformRange::new(0x10000000, 0x20000000, 12))),
            obj("run", Mode::UniformBase(UniformRange::new(0x10000000, 0x20000000, 12))),
        ]);
        p.boot_scoped.insert("boot".into());
        p.runs_per_boot = 10;
        let a = generate(&p, 100).unwrap();
        let b = generate(&p, 100).unwrap();
        assert_eq!(crate::sample::to_bytes(&a), crate::sample::to_bytes(&b));
        assert_eq!(a.boots().len(), 10);
        let v = a.series("boot").unwrap();
        for chunk in v.chunks(10) {
            assert!(chunk.iter().all(|&x| x == chunk[0]));
        }
        assert!(v.chunks(10).any(|c| c[0] != v[0]));
        assert!(a.series("run").unwrap()[..10].windows(2).any(|w| w[0] != w[1]));
    }

    #[test]
    fn records_do_not_depend_on_run_count() {
        let p = policy(vec![obj("a", Mode::UniformBase(UniformRange::new(0x10000000, 0x20000000, 12)))]);
        let short = generate(&p, 10).unwrap();
        let long = generate(&p, 9000).unwrap();
        assert_eq!(short.series("a").unwrap(), &long.series("a").unwrap()[..10]);
    }
}
