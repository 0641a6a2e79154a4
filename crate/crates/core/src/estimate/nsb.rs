//! Nemenman-Shafee-Bialek entropy estimation.
//!
//! The source is modelled as a Dirichlet(β) draw over K symbols. The prior on
//! β is chosen so that the a-priori expected entropy ξ(β) is flat on
//! [0, ln K]. The posterior mean and variance of S then come from averaging
//! the Dirichlet posterior moments of S over ξ, weighted by the evidence
//! P(n | β). Counts enter only through their multiplicity classes.

use std::f64::consts::LN_2;

use crate::special::{digamma, gauss_legendre_16, ln_gamma_ratio, trigamma};

/// Posterior is integrated where log-evidence is within this many nats of
/// its peak.
const WINDOW_NATS: f64 = 40.0;
/// Panel doubling stops once both moments move less than this.
const REL_TOL: f64 = 1e-6;
const MAX_PANELS: usize = 4096;

/// Coincidence statistics: `classes[j] = (m, c_m)` means `c_m` symbols were
/// seen exactly `m` times. Zero-count symbols are implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Multiplicities {
    pub classes: Vec<(u64, u64)>,
    pub n: u64,
    pub distinct: u64,
}

impl Multiplicities {
    /// From a multiset of values.
    pub fn from_values(values: &[u64]) -> Multiplicities {
        let mut v = values.to_vec();
        v.sort_unstable();
        let mut runs: Vec<u64> = Vec::new();
        let mut i = 0;
        while i < v.len() {
            let j = i + v[i..].partition_point(|&x| x == v[i]);
            runs.push((j - i) as u64);
            i = j;
        }
        Self::from_counts(&runs)
    }

    /// From per-symbol counts (zeros ignored).
    pub fn from_counts(counts: &[u64]) -> Multiplicities {
        let mut c: Vec<u64> = counts.iter().copied().filter(|&c| c > 0).collect();
        c.sort_unstable();
        let mut classes = Vec::new();
        let mut i = 0;
        while i < c.len() {
            let j = i + c[i..].partition_point(|&x| x == c[i]);
            classes.push((c[i], (j - i) as u64));
            i = j;
        }
        Multiplicities { n: c.iter().sum(), distinct: c.len() as u64, classes }
    }

    pub fn coincidences(&self) -> u64 {
        self.n - self.distinct
    }
}

/// Posterior summary in bits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NsbResult {
    pub mean_bits: f64,
    pub std_bits: f64,
}

struct Model<'a> {
    mult: &'a Multiplicities,
    k: f64,
    n: f64,
    /// K minus the observed distinct count: the zero-count class.
    c0: f64,
}

impl<'a> Model<'a> {
    fn xi(&self, beta: f64) -> f64 {
        digamma(self.k * beta + 1.0) - digamma(beta + 1.0)
    }

    /// dξ / d ln β.
    fn dxi_dlnbeta(&self, beta: f64) -> f64 {
        let kappa = self.k * beta;
        kappa * trigamma(kappa + 1.0) - beta * trigamma(beta + 1.0)
    }

    fn log_evidence(&self, beta: f64) -> f64 {
        let kappa = self.k * beta;
        let mut s = -ln_gamma_ratio(kappa, self.n);
        for &(m, c) in &self.mult.classes {
            s += c as f64 * ln_gamma_ratio(beta, m as f64);
        }
        s
    }

    /// Dirichlet posterior mean and second moment of S (nats) at fixed β.
    fn moments(&self, beta: f64) -> (f64, f64) {
        let kappa = self.k * beta;
        let total = self.n + kappa;
        let psi_t1 = digamma(total + 1.0);
        let psi_t2 = digamma(total + 2.0);
        let psi1_t2 = trigamma(total + 2.0);

        let mut mean_acc = 0.0;
        let mut sum_wu = 0.0;
        let mut sum_w2u2 = 0.0;
        let mut sum_w2 = 0.0;
        let mut diag = 0.0;
        let classes = self.mult.classes.iter().map(|&(m, c)| (m as f64, c as f64));
        for (m, c) in std::iter::once((0.0, self.c0)).chain(classes) {
            if c == 0.0 {
                continue;
            }
            let w = m + beta;
            let u = digamma(w + 1.0) - psi_t2;
            mean_acc += c * w * digamma(w + 1.0);
            sum_wu += c * w * u;
            sum_w2u2 += c * w * w * u * u;
            sum_w2 += c * w * w;
            let d = digamma(w + 2.0) - psi_t2;
            let j = d * d + trigamma(w + 2.0) - psi1_t2;
            diag += c * w * (w + 1.0) * j;
        }
        let mean = psi_t1 - mean_acc / total;
        let off = sum_wu * sum_wu - sum_w2u2 - psi1_t2 * (total * total - sum_w2);
        let second = (diag + off) / (total * (total + 1.0));
        (mean, second)
    }

    /// β with ξ(β) = target, by safeguarded Newton in ln β.
    fn beta_of_xi(&self, target: f64, mut lo: f64, mut hi: f64) -> f64 {
        let mut x = 0.5 * (lo + hi);
        for _ in 0..200 {
            let b = x.exp();
            let f = self.xi(b) - target;
            if f > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.dxi_dlnbeta(b);
            let mut next = x - f / d;
            if !(next > lo && next < hi) || !next.is_finite() {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() < 1e-13 * (1.0 + x.abs()) || hi - lo < 1e-13 {
                return next.exp();
            }
            x = next;
        }
        x.exp()
    }
}

/// Brackets in ln β that cover ξ from ~0 to ~ln K.
fn ln_beta_bounds(k: f64) -> (f64, f64) {
    ((1e-12 / k).ln(), (1e12f64).ln())
}

/// Maximizes log-evidence over ln β: coarse scan then golden section.
fn saddle(model: &Model, lo: f64, hi: f64) -> f64 {
    const GRID: usize = 241;
    let step = (hi - lo) / (GRID - 1) as f64;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..GRID {
        let x = lo + step * i as f64;
        let v = model.log_evidence(x.exp());
        if v > best.1 {
            best = (x, v);
        }
    }
    let (mut a, mut b) = ((best.0 - step).max(lo), (best.0 + step).min(hi));
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let mut fc = model.log_evidence(c.exp());
    let mut fd = model.log_evidence(d.exp());
    while b - a > 1e-10 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = model.log_evidence(c.exp());
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = model.log_evidence(d.exp());
        }
    }
    let x = 0.5 * (a + b);
    if model.log_evidence(x.exp()) >= best.1 {
        x
    } else {
        best.0
    }
}

/// Walks from the peak toward `limit` until log-evidence falls `WINDOW_NATS`
/// below `peak_val`, returning the crossing in ln β (or `limit`).
fn window_edge(model: &Model, peak: f64, peak_val: f64, limit: f64) -> f64 {
    let floor = peak_val - WINDOW_NATS;
    let dir = (limit - peak).signum();
    let mut inside = peak;
    let mut step = 0.01;
    loop {
        let x = peak + dir * step;
        if (x - limit) * dir >= 0.0 {
            if model.log_evidence(limit.exp()) > floor {
                return limit;
            }
            return bisect_edge(model, inside, limit, floor);
        }
        if model.log_evidence(x.exp()) < floor {
            return bisect_edge(model, inside, x, floor);
        }
        inside = x;
        step *= 2.0;
    }
}

fn bisect_edge(model: &Model, mut inside: f64, mut outside: f64, floor: f64) -> f64 {
    for _ in 0..100 {
        let mid = 0.5 * (inside + outside);
        if model.log_evidence(mid.exp()) >= floor {
            inside = mid;
        } else {
            outside = mid;
        }
        if (outside - inside).abs() < 1e-9 {
            break;
        }
    }
    outside
}

/// Posterior mean and std of the entropy, in bits, for an alphabet of
/// `2^alphabet_log2` symbols. Callers ensure `distinct <= K`.
pub fn nsb_from_multiplicities(mult: &Multiplicities, alphabet_log2: f64) -> NsbResult {
    let k = alphabet_log2.exp2();
    if mult.n == 0 || k <= 1.0 {
        return NsbResult { mean_bits: 0.0, std_bits: 0.0 };
    }
    let model = Model { mult, k, n: mult.n as f64, c0: (k - mult.distinct as f64).max(0.0) };
    let (lo, hi) = ln_beta_bounds(k);
    let peak = saddle(&model, lo, hi);
    let peak_val = model.log_evidence(peak.exp());
    let lb_lo = window_edge(&model, peak, peak_val, lo);
    let lb_hi = window_edge(&model, peak, peak_val, hi);
    let ln_k = k.ln();
    let xi_lo = if lb_lo <= lo { 0.0 } else { model.xi(lb_lo.exp()) };
    let xi_hi = if lb_hi >= hi { ln_k } else { model.xi(lb_hi.exp()).min(ln_k) };

    let integrate = |panels: usize| -> (f64, f64) {
        let (nodes, weights) = gauss_legendre_16();
        let width = (xi_hi - xi_lo) / panels as f64;
        // evidence is rescaled by its peak so the sums stay finite
        let (mut z, mut s1, mut s2) = (0.0, 0.0, 0.0);
        for p in 0..panels {
            let a = xi_lo + width * p as f64;
            let mid = a + 0.5 * width;
            for (t, w) in nodes.iter().zip(weights) {
                let xi = mid + 0.5 * width * t;
                let beta = model.beta_of_xi(xi, lo - 5.0, hi + 5.0);
                let ev = (model.log_evidence(beta) - peak_val).exp() * w;
                let (m1, m2) = model.moments(beta);
                z += ev;
                s1 += ev * m1;
                s2 += ev * m2;
            }
        }
        (s1 / z, s2 / z)
    };

    let mut panels = 1;
    let mut prev = integrate(panels);
    while panels < MAX_PANELS {
        panels *= 2;
        let cur = integrate(panels);
        let d1 = (cur.0 - prev.0).abs() / cur.0.abs().max(1e-300);
        let d2 = (cur.1 - prev.1).abs() / cur.1.abs().max(1e-300);
        prev = cur;
        if d1 < REL_TOL && d2 < REL_TOL {
            break;
        }
    }
    let (m1, m2) = prev;
    let var = (m2 - m1 * m1).max(0.0);
    NsbResult { mean_bits: m1.max(0.0) / LN_2, std_bits: var.sqrt() / LN_2 }
}
