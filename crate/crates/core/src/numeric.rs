//! Small numerical kernels shared by several modules.

use nalgebra::{Matrix3, Vector3};

/// One step of the splitmix64 generator.
pub fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Sub-seed for a named stage: `splitmix64(seed ^ fnv1a(stage))`.
pub fn sub_seed(seed: u64, stage: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h)
}

pub fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while i > 0 {
        r += f * (i % base) as f64;
        i /= base;
        f *= inv;
    }
    r
}

const HALTON_BASES: [u64; 3] = [2, 3, 5];

/// Seeded Halton sequence in `[0,1)^dim`; the seed shifts the start index.
#[derive(Debug, Clone)]
pub struct Halton {
    dim: usize,
    next: u64,
}

impl Halton {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!((1..=3).contains(&dim));
        Self { dim, next: 1 + (splitmix64(seed) % (1 << 20)) }
    }

    pub fn next_point(&mut self) -> [f64; 3] {
        let mut p = [0.0; 3];
        for (d, v) in p.iter_mut().enumerate().take(self.dim) {
            *v = radical_inverse(self.next, HALTON_BASES[d]);
        }
        self.next += 1;
        p
    }
}

fn horner(c: &[f64], x: f64) -> f64 {
    c.iter().fold(0.0, |acc, &a| acc * x + a)
}

fn bisect(c: &[f64], mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = horner(c, lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = horner(c, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Real roots of a monic polynomial of degree 2 or 3, coefficients given
/// highest degree first (leading 1 included), found by bisection on
/// monotone brackets. Returned in increasing order.
pub fn real_roots(c: &[f64]) -> Vec<f64> {
    let deg = c.len() - 1;
    let bound = 1.0 + c[1..].iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut cuts = vec![-bound];
    if deg == 3 {
        // critical points of x^3 + a x^2 + b x + c
        let (a, b) = (c[1], c[2]);
        let disc = 4.0 * a * a - 12.0 * b;
        if disc > 0.0 {
            let s = disc.sqrt();
            cuts.push((-2.0 * a - s) / 6.0);
            cuts.push((-2.0 * a + s) / 6.0);
        }
    } else {
        cuts.push(-c[1] / 2.0);
    }
    cuts.push(bound);
    let mut roots = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let (fl, fh) = (horner(c, lo), horner(c, hi));
        if fl == 0.0 {
            if roots.last().is_none_or(|r: &f64| *r != lo) {
                roots.push(lo);
            }
        } else if (fl < 0.0) != (fh < 0.0) {
            roots.push(bisect(c, lo, hi));
        }
    }
    if let Some(&last) = cuts.last() {
        if horner(c, last) == 0.0 && roots.last() != Some(&last) {
            roots.push(last);
        }
    }
    roots
}

/// Null direction of `m - lambda I` from the largest cross product of rows.
pub fn eigenvector3(m: &Matrix3<f64>, lambda: f64) -> Vector3<f64> {
    let a = m - Matrix3::identity() * lambda;
    let rows = [a.row(0).transpose(), a.row(1).transpose(), a.row(2).transpose()];
    let mut best = Vector3::zeros();
    for (i, j) in [(0, 1), (0, 2), (1, 2)] {
        let c = rows[i].cross(&rows[j]);
        if c.norm() > best.norm() {
            best = c;
        }
    }
    best.normalize()
}

/// First non-negligible component positive.
pub fn orient(v: Vector3<f64>) -> Vector3<f64> {
    for i in 0..3 {
        if v[i].abs() > 1e-12 {
            return if v[i] < 0.0 { -v } else { v };
        }
    }
    v
}

/// Ordinary least-squares slope, intercept and r².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 && sxx > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}
