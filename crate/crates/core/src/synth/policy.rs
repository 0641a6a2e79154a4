//! Declarative placement policies.

use std::collections::{BTreeSet, HashMap};
use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// An address or byte count. Reads either a JSON integer or a `0x` string;
/// writes hex.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Addr(pub u64);

impl Serialize for Addr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&format!("{:#x}", self.0))
    }
}

impl<'de> Deserialize<'de> for Addr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl Visitor<'_> for V {
            type Value = Addr;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an unsigned integer or a 0x-prefixed hex string")
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Addr, E> {
                Ok(Addr(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Addr, E> {
                u64::try_from(v).map(Addr).map_err(|_| E::custom("negative address"))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Addr, E> {
                let hex = v.strip_prefix("0x").ok_or_else(|| E::custom("hex strings need a 0x prefix"))?;
                u64::from_str_radix(&hex.replace('_', ""), 16).map(Addr).map_err(E::custom)
            }
        }
        d.deserialize_any(V)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniformRange {
    pub lo: Addr,
    pub hi: Addr,
    pub align_bits: u32,
}

impl UniformRange {
    pub fn new(lo: u64, hi: u64, align_bits: u32) -> Self {
        UniformRange { lo: Addr(lo), hi: Addr(hi), align_bits }
    }

    /// Number of slots.
    pub fn count(&self) -> u64 {
        (self.hi.0 - self.lo.0) >> self.align_bits
    }
}

/// Range of the second source of a two-source placement; its granularity is
/// the placement's `align_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlusRange {
    pub lo: Addr,
    pub hi: Addr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OffsetMode {
    Zero,
    Fixed(Addr),
    /// Round to a 2^bits boundary.
    Alignment(u32),
    Random(UniformRange),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Below,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    UniformBase(UniformRange),
    Relative { anchor: String, offset_mode: OffsetMode, direction: Direction },
    TwoSource { base: UniformRange, plus: PlusRange, align_bits: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObjectPlacement {
    pub name: String,
    pub mode: Mode,
    /// Mapping size in bytes; defines where the object ends. One page when
    /// omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub size: Option<Addr>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyPlatform {
    pub os: String,
    pub arch: String,
    pub kernel: String,
}

impl Default for PolicyPlatform {
    fn default() -> Self {
        PolicyPlatform { os: "linux".into(), arch: "x86_64".into(), kernel: "synthetic".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub platform: PolicyPlatform,
    pub page_bits: u32,
    pub objects: Vec<ObjectPlacement>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub boot_scoped: BTreeSet<String>,
    /// Records per simulated boot; 0 keeps every record in one boot.
    #[serde(default)]
    pub runs_per_boot: u64,
}

const USER_LIMIT: u128 = 1 << 63;

fn perr(msg: String) -> Error {
    Error::Policy(msg)
}

fn check_range(name: &str, what: &str, lo: u64, hi: u64, align: u32, page_bits: u32) -> Result<()> {
    if align < page_bits || align >= 63 {
        return Err(perr(format!("{name}: {what} align_bits {align} outside [{page_bits}, 63)")));
    }
    if lo >= hi {
        return Err(perr(format!("{name}: {what} range is empty or inverted ({lo:#x} >= {hi:#x})")));
    }
    let m = (1u64 << align) - 1;
    if lo & m != 0 || hi & m != 0 {
        return Err(perr(format!("{name}: {what} bounds not multiples of 2^{align}")));
    }
    Ok(())
}

impl PolicySpec {
    pub fn from_json(text: &str) -> Result<PolicySpec> {
        let p: PolicySpec = serde_json::from_str(text).map_err(|e| perr(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("policy serializes")
    }

    pub fn page_size(&self) -> u64 {
        1 << self.page_bits
    }

    pub fn size_of(&self, o: &ObjectPlacement) -> u64 {
        o.size.map_or(self.page_size(), |s| s.0)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.objects.iter().position(|o| o.name == name)
    }

    /// sha256 of the compact JSON form, lowercase hex.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("policy serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Structural checks plus an interval pass proving every generated
    /// address stays in userspace.
    pub fn validate(&self) -> Result<()> {
        if self.page_bits != 12 && self.page_bits != 14 {
            return Err(perr(format!("page_bits must be 12 or 14, got {}", self.page_bits)));
        }
        if self.objects.is_empty() {
            return Err(perr("no objects".into()));
        }
        let pb = self.page_bits;
        let page_mask = self.page_size() - 1;
        let mut seen: HashMap<&str, usize> = HashMap::new();
        // [min, max] of each object's address
        let mut bounds: Vec<(i128, i128)> = Vec::with_capacity(self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            let name = o.name.as_str();
            if name.is_empty() || name.chars().any(char::is_control) {
                return Err(perr(format!("invalid object name {name:?}")));
            }
            if seen.insert(name, i).is_some() {
                return Err(perr(format!("duplicate object {name:?}")));
            }
            let size = self.size_of(o);
            if size & page_mask != 0 {
                return Err(perr(format!("{name}: size {size:#x} is not a page multiple")));
            }
            let (lo, hi) = match &o.mode {
                Mode::UniformBase(r) => {
                    check_range(name, "uniform_base", r.lo.0, r.hi.0, r.align_bits, pb)?;
                    (r.lo.0 as i128, r.hi.0 as i128 - (1i128 << r.align_bits))
                }
                Mode::TwoSource { base, plus, align_bits } => {
                    check_range(name, "base", base.lo.0, base.hi.0, base.align_bits, pb)?;
                    check_range(name, "plus", plus.lo.0, plus.hi.0, *align_bits, pb)?;
                    let top = base.hi.0 as i128 - (1i128 << base.align_bits) + plus.hi.0 as i128 - (1i128 << align_bits);
                    (base.lo.0 as i128 + plus.lo.0 as i128, top)
                }
                Mode::Relative { anchor, offset_mode, direction } => {
                    let Some(&a) = seen.get(anchor.as_str()).filter(|&&a| a < i) else {
                        return Err(perr(format!("{name}: anchor {anchor:?} is not an earlier object")));
                    };
                    let (alo, ahi) = bounds[a];
                    let asize = self.size_of(&self.objects[a]) as i128;
                    let size = size as i128;
                    let (olo, ohi) = match offset_mode {
                        OffsetMode::Zero => (0, 0),
                        OffsetMode::Fixed(f) => {
                            if f.0 & page_mask != 0 {
                                return Err(perr(format!("{name}: fixed offset {:#x} is not a page multiple", f.0)));
                            }
                            (f.0 as i128, f.0 as i128)
                        }
                        OffsetMode::Random(r) => {
                            check_range(name, "random offset", r.lo.0, r.hi.0, r.align_bits, pb)?;
                            (r.lo.0 as i128, r.hi.0 as i128 - (1i128 << r.align_bits))
                        }
                        OffsetMode::Alignment(b) => {
                            if *b < pb || *b >= 63 {
                                return Err(perr(format!("{name}: alignment {b} outside [{pb}, 63)")));
                            }
                            (0, (1i128 << b) - 1)
                        }
                    };
                    match direction {
                        Direction::Above => (alo + asize + olo, ahi + asize + ohi),
                        Direction::Below => (alo - ohi - size, ahi - olo - size),
                    }
                }
            };
            if lo < 0 || hi + size as i128 > USER_LIMIT as i128 {
                return Err(perr(format!("{name}: addresses can leave userspace ([{lo:#x}, {hi:#x}])")));
            }
            bounds.push((lo, hi));
        }
        for b in &self.boot_scoped {
            if !seen.contains_key(b.as_str()) {
                return Err(perr(format!("boot_scoped names unknown object {b:?}")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(name: &str) -> ObjectPlacement {
        ObjectPlacement { name: name.into(), mode: Mode::UniformBase(UniformRange::new(0x7f0000000000, 0x7f8000000000, 12)), size: None }
    }

    fn policy(objects: Vec<ObjectPlacement>) -> PolicySpec {
        PolicySpec { name: None, platform: Default::default(), page_bits: 12, objects, seed: 1, boot_scoped: Default::default(), runs_per_boot: 0 }
    }

    #[test]
    fn json_accepts_hex_and_integers() {
        let text = r#"{"page_bits":12,"objects":[
            {"name":"a","mode":{"uniform_base":{"lo":"0x7f0000000000","hi":140187732541440,"align_bits":12}}},
            {"name":"b","mode":{"relative":{"anchor":"a","offset_mode":"zero","direction":"above"}}},
            {"name":"c","mode":{"relative":{"anchor":"b","offset_mode":{"alignment":21},"direction":"below"}},"size":"0x200000"}
        ]}"#;
        let p = PolicySpec::from_json(text).unwrap();
        assert_eq!(p.objects.len(), 3);
        let again = PolicySpec::from_json(&p.to_json()).unwrap();
        assert_eq!(p, again);
        assert_eq!(p.fingerprint(), again.fingerprint());
        assert_eq!(p.fingerprint().len(), 64);
    }

    #[test]
    fn dangling_anchor_and_inverted_range() {
        let mut p = policy(vec![ObjectPlacement {
            name: "b".into(),
            mode: Mode::Relative { anchor: "a".into(), offset_mode: OffsetMode::Zero, direction: Direction::Above },
            size: None,
        }]);
        assert!(matches!(p.validate(), Err(Error::Policy(_))));
        p.objects = vec![ObjectPlacement { name: "a".into(), mode: Mode::UniformBase(UniformRange::new(0x2000, 0x1000, 12)), size: None }];
        assert!(p.validate().is_err());
    }

    #[test]
    fn anchor_must_come_first() {
        let mut b = base("b");
        b.mode = Mode::Relative { anchor: "a".into(), offset_mode: OffsetMode::Zero, direction: Direction::Above };
        assert!(policy(vec![b, base("a")]).validate().is_err());
    }

    #[test]
    fn sub_page_alignment_rejected() {
        let mut a = base("a");
        a.mode = Mode::UniformBase(UniformRange::new(0x1000, 0x2000, 11));
        assert!(policy(vec![a]).validate().is_err());
    }

    #[test]
    fn below_placement_cannot_underflow() {
        let mut a = base("a");
        a.mode = Mode::UniformBase(UniformRange::new(0x1000, 0x10000, 12));
        let mut b = base("b");
        b.mode = Mode::Relative {
            anchor: "a".into(),
            offset_mode: OffsetMode::Random(UniformRange::new(0, 0x100000, 12)),
            direction: Direction::Below,
        };
        assert!(policy(vec![a, b]).validate().is_err());
    }
}
