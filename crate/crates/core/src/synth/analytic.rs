//! Exact entropies of policy-defined addresses.
//!
//! Every address is an integer combination of independent uniform sources
//! plus a constant. Alignment steps introduce rounding nodes; sources that
//! are already multiples of the alignment pass through them untouched, the
//! rest are captured inside the node. Entropy of a sum of independent parts
//! is found by a closed form when the parts cannot overlap, and otherwise by
//! convolution on a dense lattice capped at `SUPPORT_CAP` points.

use std::collections::{BTreeMap, BTreeSet};

use super::policy::{Direction, Mode, OffsetMode, PolicySpec};
use crate::error::{Error, Result};

pub const SUPPORT_CAP: u64 = 1 << 24;
/// Work bound for convolving two explicit laws.
const PRODUCT_CAP: u64 = 1 << 28;

/// An exact entropy and the number of values it is spread over.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Analytic {
    pub bits: f64,
    pub support: f64,
}

#[derive(Debug, Clone, Copy)]
struct Src {
    count: u64,
    step: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Term {
    Src(usize),
    Node(usize),
}

#[derive(Debug, Clone, Default)]
struct Expr {
    c: i128,
    terms: BTreeMap<Term, i128>,
}

impl Expr {
    fn constant(c: i128) -> Expr {
        Expr { c, terms: BTreeMap::new() }
    }

    fn add_term(&mut self, t: Term, coef: i128) {
        let e = self.terms.entry(t).or_insert(0);
        *e += coef;
        if *e == 0 {
            self.terms.remove(&t);
        }
    }

    fn plus(&self, other: &Expr, sign: i128) -> Expr {
        let mut out = self.clone();
        out.c += sign * other.c;
        for (&t, &k) in &other.terms {
            out.add_term(t, sign * k);
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Node {
    inner: Expr,
    up: bool,
    bits: u32,
    deps: BTreeSet<usize>,
}

fn round(x: i128, bits: u32, up: bool) -> i128 {
    let g = 1i128 << bits;
    if up {
        (x + g - 1).div_euclid(g) * g
    } else {
        x.div_euclid(g) * g
    }
}

struct Model {
    srcs: Vec<Src>,
    nodes: Vec<Node>,
    exprs: Vec<Expr>,
}

impl Model {
    fn build(policy: &PolicySpec) -> Model {
        let mut m = Model { srcs: Vec::new(), nodes: Vec::new(), exprs: Vec::new() };
        for o in &policy.objects {
            let size = policy.size_of(o) as i128;
            let e = match &o.mode {
                Mode::UniformBase(r) => {
                    let mut e = Expr::constant(r.lo.0 as i128);
                    let s = m.src(r.count(), 1 << r.align_bits);
                    e.add_term(s, 1);
                    e
                }
                Mode::TwoSource { base, plus, align_bits } => {
                    let mut e = Expr::constant(base.lo.0 as i128 + plus.lo.0 as i128);
                    let a = m.src(base.count(), 1 << base.align_bits);
                    let b = m.src((plus.hi.0 - plus.lo.0) >> align_bits, 1 << align_bits);
                    e.add_term(a, 1);
                    e.add_term(b, 1);
                    e
                }
                Mode::Relative { anchor, offset_mode, direction } => {
                    let ai = policy.index_of(anchor).expect("validated");
                    let anchor_e = m.exprs[ai].clone();
                    let end = anchor_e.plus(&Expr::constant(policy.size_of(&policy.objects[ai]) as i128), 1);
                    match (direction, offset_mode) {
                        (Direction::Above, OffsetMode::Zero) => end,
                        (Direction::Above, OffsetMode::Fixed(f)) => end.plus(&Expr::constant(f.0 as i128), 1),
                        (Direction::Above, OffsetMode::Random(r)) => {
                            let mut e = end.plus(&Expr::constant(r.lo.0 as i128), 1);
                            let s = m.src(r.count(), 1 << r.align_bits);
                            e.add_term(s, 1);
                            e
                        }
                        (Direction::Above, OffsetMode::Alignment(b)) => m.round_expr(end, *b, true),
                        (Direction::Below, OffsetMode::Zero) => anchor_e.plus(&Expr::constant(size), -1),
                        (Direction::Below, OffsetMode::Fixed(f)) => anchor_e.plus(&Expr::constant(f.0 as i128 + size), -1),
                        (Direction::Below, OffsetMode::Random(r)) => {
                            let mut e = anchor_e.plus(&Expr::constant(r.lo.0 as i128 + size), -1);
                            let s = m.src(r.count(), 1 << r.align_bits);
                            e.add_term(s, -1);
                            e
                        }
                        (Direction::Below, OffsetMode::Alignment(b)) => {
                            m.round_expr(anchor_e.plus(&Expr::constant(size), -1), *b, false)
                        }
                    }
                }
            };
            m.exprs.push(e);
        }
        m
    }

    fn src(&mut self, count: u64, step: u64) -> Term {
        self.srcs.push(Src { count, step });
        Term::Src(self.srcs.len() - 1)
    }

    /// Granularity of a term's values.
    fn step(&self, t: Term) -> i128 {
        match t {
            Term::Src(i) => self.srcs[i].step as i128,
            Term::Node(i) => 1 << self.nodes[i].bits,
        }
    }

    fn deps(&self, t: Term) -> BTreeSet<usize> {
        match t {
            Term::Src(i) => BTreeSet::from([i]),
            Term::Node(i) => self.nodes[i].deps.clone(),
        }
    }

    fn round_expr(&mut self, e: Expr, bits: u32, up: bool) -> Expr {
        let g = 1i128 << bits;
        let hi_c = e.c.div_euclid(g) * g;
        let mut out = Expr::constant(hi_c);
        let mut inner = Expr::constant(e.c - hi_c);
        for (&t, &k) in &e.terms {
            if (k * self.step(t)) % g == 0 {
                out.add_term(t, k);
            } else {
                inner.add_term(t, k);
            }
        }
        if inner.terms.is_empty() {
            out.c += round(inner.c, bits, up);
            return out;
        }
        let deps = inner.terms.keys().flat_map(|&t| self.deps(t)).collect();
        self.nodes.push(Node { inner, up, bits, deps });
        out.add_term(Term::Node(self.nodes.len() - 1), 1);
        out
    }

    fn eval_term(&self, t: Term, assign: &BTreeMap<usize, u64>) -> i128 {
        match t {
            Term::Src(i) => assign[&i] as i128 * self.srcs[i].step as i128,
            Term::Node(i) => {
                let n = &self.nodes[i];
                round(self.eval(&n.inner, assign), n.bits, n.up)
            }
        }
    }

    fn eval(&self, e: &Expr, assign: &BTreeMap<usize, u64>) -> i128 {
        e.c + e.terms.iter().map(|(&t, &k)| k * self.eval_term(t, assign)).sum::<i128>()
    }

    /// Law of Σ k·t over one dependency-connected group of terms.
    fn component_law(&self, terms: &[(Term, i128)]) -> Option<Law> {
        if let [(Term::Src(i), k)] = terms {
            let s = self.srcs[*i];
            return Some(Law::uniform(s.count, s.step as u128 * k.unsigned_abs()));
        }
        let deps: Vec<usize> = terms.iter().flat_map(|&(t, _)| self.deps(t)).collect::<BTreeSet<_>>().into_iter().collect();
        let mut total: u64 = 1;
        for &d in &deps {
            total = total.checked_mul(self.srcs[d].count).filter(|&t| t <= SUPPORT_CAP)?;
        }
        let expr = Expr { c: 0, terms: terms.iter().copied().collect() };
        let mut assign: BTreeMap<usize, u64> = deps.iter().map(|&d| (d, 0)).collect();
        let mut values = Vec::with_capacity(total as usize);
        'outer: loop {
            values.push(self.eval(&expr, &assign));
            for &d in &deps {
                let v = assign.get_mut(&d).unwrap();
                *v += 1;
                if *v < self.srcs[d].count {
                    continue 'outer;
                }
                *v = 0;
            }
            break;
        }
        Some(Law::from_values(values))
    }

    fn entropy(&self, e: &Expr) -> Option<Analytic> {
        // union-find over terms that share a source
        let terms: Vec<(Term, i128)> = e.terms.iter().map(|(&t, &k)| (t, k)).collect();
        let deps: Vec<BTreeSet<usize>> = terms.iter().map(|&(t, _)| self.deps(t)).collect();
        let mut parent: Vec<usize> = (0..terms.len()).collect();
        fn find(p: &mut [usize], x: usize) -> usize {
            let mut r = x;
            while p[r] != r {
                r = p[r];
            }
            p[x] = r;
            r
        }
        for i in 0..terms.len() {
            for j in i + 1..terms.len() {
                if !deps[i].is_disjoint(&deps[j]) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a] = b;
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<(Term, i128)>> = BTreeMap::new();
        for (i, &t) in terms.iter().enumerate() {
            let r = find(&mut parent, i);
            groups.entry(r).or_default().push(t);
        }
        let laws = groups.values().map(|g| self.component_law(g)).collect::<Option<Vec<_>>>()?;
        sum_entropy(laws)
    }
}

/// A finite law with integer weights, shifted so its smallest value is 0.
#[derive(Debug, Clone)]
enum Law {
    Uniform { count: u64, step: u128 },
    Explicit { values: Vec<u128>, weights: Vec<f64> },
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn entropy_of_weights<'a>(w: impl Iterator<Item = &'a f64> + Clone) -> f64 {
    let total: f64 = w.clone().sum();
    let s: f64 = w.filter(|&&x| x > 0.0).map(|&x| x * x.log2()).sum();
    (total.log2() - s / total).max(0.0)
}

impl Law {
    fn uniform(count: u64, step: u128) -> Law {
        Law::Uniform { count, step }
    }

    fn from_values(mut v: Vec<i128>) -> Law {
        v.sort_unstable();
        let min = v[0];
        let (mut values, mut weights) = (Vec::new(), Vec::new());
        let mut i = 0;
        while i < v.len() {
            let j = i + v[i..].partition_point(|&x| x == v[i]);
            values.push((v[i] - min) as u128);
            weights.push((j - i) as f64);
            i = j;
        }
        if values.len() == 1 {
            return Law::Uniform { count: 1, step: 1 };
        }
        Law::Explicit { values, weights }
    }

    fn is_constant(&self) -> bool {
        match self {
            Law::Uniform { count, .. } => *count <= 1,
            Law::Explicit { values, .. } => values.len() <= 1,
        }
    }

    fn span(&self) -> u128 {
        match self {
            Law::Uniform { count, step } => (*count as u128 - 1) * step,
            Law::Explicit { values, .. } => *values.last().unwrap(),
        }
    }

    /// Smallest distance between two support points.
    fn gap(&self) -> u128 {
        match self {
            Law::Uniform { step, .. } => *step,
            Law::Explicit { values, .. } => values.windows(2).map(|w| w[1] - w[0]).min().unwrap_or(u128::MAX),
        }
    }

    fn lattice(&self) -> u128 {
        match self {
            Law::Uniform { step, .. } => *step,
            Law::Explicit { values, .. } => values.iter().fold(0, |g, &v| gcd(g, v)),
        }
    }

    fn bits(&self) -> f64 {
        match self {
            Law::Uniform { count, .. } => (*count as f64).log2(),
            Law::Explicit { weights, .. } => entropy_of_weights(weights.iter()),
        }
    }

    fn support(&self) -> f64 {
        match self {
            Law::Uniform { count, .. } => *count as f64,
            Law::Explicit { values, .. } => values.len() as f64,
        }
    }
}

/// Entropy of a sum of independent laws.
fn sum_entropy(mut laws: Vec<Law>) -> Option<Analytic> {
    laws.retain(|l| !l.is_constant());
    let mut out = Analytic { bits: 0.0, support: 1.0 };
    // A part whose support points are further apart than the whole span of
    // the others makes the sum injective, so its entropy simply adds.
    loop {
        if laws.len() <= 1 {
            break;
        }
        let total: u128 = laws.iter().map(Law::span).sum();
        let Some(i) = laws.iter().position(|l| l.gap() > total - l.span()) else { break };
        let l = laws.swap_remove(i);
        out.bits += l.bits();
        out.support *= l.support();
    }
    match laws.len() {
        0 => return Some(out),
        1 => {
            out.bits += laws[0].bits();
            out.support *= laws[0].support();
            return Some(out);
        }
        _ => {}
    }
    let g = laws.iter().fold(0, |g, l| gcd(g, l.lattice()));
    let len = laws.iter().map(|l| l.span() / g).sum::<u128>() + 1;
    if len > SUPPORT_CAP as u128 {
        return None;
    }
    let mut acc = vec![1.0f64];
    for l in &laws {
        acc = match l {
            Law::Uniform { count, step } => convolve_uniform(&acc, *count as usize, (*step / g) as usize),
            Law::Explicit { values, weights } => {
                let nnz = acc.iter().filter(|&&x| x > 0.0).count() as u64;
                if nnz.saturating_mul(values.len() as u64) > PRODUCT_CAP {
                    return None;
                }
                let span = (*values.last().unwrap() / g) as usize;
                let mut next = vec![0.0; acc.len() + span];
                for (i, &a) in acc.iter().enumerate().filter(|(_, &a)| a > 0.0) {
                    for (v, w) in values.iter().zip(weights) {
                        next[i + (*v / g) as usize] += a * w;
                    }
                }
                next
            }
        };
    }
    out.bits += entropy_of_weights(acc.iter());
    out.support *= acc.iter().filter(|&&x| x > 0.0).count() as f64;
    Some(out)
}

/// acc * (uniform over {0, s, ..., (c-1)s}), integer weights kept exact.
fn convolve_uniform(acc: &[f64], c: usize, s: usize) -> Vec<f64> {
    let len = acc.len() + (c - 1) * s;
    let mut prefix = vec![0.0; len];
    for i in 0..len {
        let own = acc.get(i).copied().unwrap_or(0.0);
        prefix[i] = own + if i >= s { prefix[i - s] } else { 0.0 };
    }
    (0..len)
        .map(|i| {
            let drop = if i >= c * s { prefix[i - c * s] } else { 0.0 };
            prefix[i] - drop
        })
        .collect()
}

fn object_index(policy: &PolicySpec, name: &str) -> Result<usize> {
    policy.index_of(name).ok_or_else(|| Error::UnknownObject(name.to_string()))
}

/// Exact marginal entropy of an object's address, or `None` when it would
/// need more than `SUPPORT_CAP` lattice points.
pub fn analytic_entropy(policy: &PolicySpec, object: &str) -> Result<Option<Analytic>> {
    let i = object_index(policy, object)?;
    let m = Model::build(policy);
    Ok(m.entropy(&m.exprs[i]))
}

/// Exact entropy of `addr(a) - addr(b)`.
pub fn analytic_corr_entropy(policy: &PolicySpec, a: &str, b: &str) -> Result<Option<Analytic>> {
    let (ia, ib) = (object_index(policy, a)?, object_index(policy, b)?);
    let m = Model::build(policy);
    Ok(m.entropy(&m.exprs[ia].plus(&m.exprs[ib], -1)))
}

/// Entropy of a finite sample of values; used by oracle tests to compare
/// against brute-force enumeration.
pub fn shannon_bits(values: &[i128]) -> f64 {
    Law::from_values(values.to_vec()).bits()
}
