//! Pinching coefficients, Birkhoff critical exponents, bundle-map
//! quantities `A_k` and `α(k,x)`, periodic-orbit estimates and `κ`.

use crate::dynamics::{classify_linear, continue_periodic_orbit, linear_orbit_representatives, LinearMapSpec, MapSpec, PeriodicOrbit};
use crate::error::{LabError, Result};
use crate::numeric::{real_roots, Halton};
use crate::splitting::{BundleField, BundleSelector};
use crate::torus::TorusPoint;
use nalgebra::{Matrix2, Matrix3, Matrix3x2, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSample {
    pub x: TorusPoint,
    pub k: usize,
    pub log_rate_s: f64,
    pub log_rate_c: f64,
    pub log_rate_u: f64,
}

/// `log|Df^k v|` for a unit `v`, chaining single-step Jacobians.
fn chained_log_growth(map: &MapSpec, x: &TorusPoint, v: Vector3<f64>, k: usize) -> f64 {
    let mut p = *x;
    let mut w = v;
    let mut acc = 0.0;
    for _ in 0..k {
        w = map.jacobian(&p) * w;
        let n = w.norm();
        acc += n.ln();
        w /= n;
        p = map.apply(&p);
    }
    acc
}

pub fn rates(field: &BundleField, x: &TorusPoint, k: usize) -> Result<RateSample> {
    let map = field.map();
    let g = |b| -> Result<f64> { Ok(chained_log_growth(map, x, field.vector(x, b)?, k)) };
    Ok(RateSample {
        x: *x,
        k,
        log_rate_s: g(BundleSelector::S)?,
        log_rate_c: g(BundleSelector::C)?,
        log_rate_u: g(BundleSelector::U)?,
    })
}

pub fn bundle_rates(map: &MapSpec, x: &TorusPoint, k: usize) -> Result<RateSample> {
    rates(&BundleField::new(map, 1e-12)?, x, k)
}

/// Base points for inf/sup over `M`: a seeded Halton set plus every
/// point of the continued periodic orbits up to `periodic_cap`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSpec {
    pub halton_points: usize,
    pub periodic_cap: usize,
    pub seed: u64,
}

impl Default for SamplingSpec {
    fn default() -> Self {
        Self { halton_points: 64, periodic_cap: 3, seed: 0 }
    }
}

pub fn halton_points(n: usize, dim: usize, seed: u64) -> Vec<TorusPoint> {
    let mut h = Halton::new(dim, seed);
    (0..n).map(|_| TorusPoint::wrap(&h.next_point()[..dim]).expect("finite")).collect()
}

/// Continued periodic orbits of exact period `1..=cap`; orbits whose
/// continuation fails are skipped and counted.
pub fn periodic_orbits(map: &MapSpec, cap: usize) -> Result<(Vec<PeriodicOrbit>, usize)> {
    let mut orbits = Vec::new();
    let mut failed = 0;
    for n in 1..=cap {
        for seed in linear_orbit_representatives(map.linear_part(), n)? {
            match continue_periodic_orbit(map, &seed, n) {
                Ok(o) => orbits.push(o),
                Err(_) => failed += 1,
            }
        }
    }
    Ok((orbits, failed))
}

pub fn sample_grid(map: &MapSpec, spec: &SamplingSpec) -> Result<Vec<TorusPoint>> {
    let mut pts = halton_points(spec.halton_points, map.dim(), spec.seed);
    if spec.periodic_cap > 0 {
        let (orbits, _) = periodic_orbits(map, spec.periodic_cap)?;
        pts.extend(orbits.iter().flat_map(|o| o.points.iter().copied()));
    }
    Ok(pts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchingPerK {
    pub k: usize,
    pub min_theta_s: f64,
    pub min_theta_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PinchingReport {
    pub theta_s: f64,
    pub theta_c: f64,
    /// Maximizing `k` for `theta_s`.
    pub k_used: usize,
    /// Maximizing `k` for `theta_c`.
    pub k_used_c: usize,
    pub grid_size: usize,
    /// Per-iterate log slack `(lc − ls)/k` at the argmin of `θ_s(k_used, ·)`.
    pub min_margin: f64,
    pub per_k: Vec<PinchingPerK>,
}

pub fn pointwise_thetas(r: &RateSample) -> Result<(f64, f64)> {
    if r.log_rate_u <= 0.0 || r.log_rate_s >= 0.0 {
        return Err(LabError::InvalidSample(format!(
            "non-positive denominator at {:?} (ls {}, lu {})",
            r.x.coords(),
            r.log_rate_s,
            r.log_rate_u
        )));
    }
    Ok(((r.log_rate_c - r.log_rate_s) / r.log_rate_u, 1.0 - r.log_rate_c / r.log_rate_s))
}

pub fn pinching_exponents(field: &BundleField, k_max: usize, grid: &[TorusPoint]) -> Result<PinchingReport> {
    if k_max == 0 || grid.is_empty() {
        return Err(LabError::Domain("need k_max ≥ 1 and a non-empty grid".into()));
    }
    let mut per_k = Vec::with_capacity(k_max);
    let mut best: Option<(f64, usize, f64)> = None;
    let mut best_c: Option<(f64, usize)> = None;
    for k in 1..=k_max {
        let samples: Vec<RateSample> = grid.par_iter().map(|x| rates(field, x, k)).collect::<Result<_>>()?;
        let thetas: Vec<(f64, f64)> = samples.iter().map(pointwise_thetas).collect::<Result<_>>()?;
        let (mut ms, mut arg) = (f64::INFINITY, 0);
        for (i, t) in thetas.iter().enumerate() {
            if t.0 < ms {
                ms = t.0;
                arg = i;
            }
        }
        let mc = thetas.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
        per_k.push(PinchingPerK { k, min_theta_s: ms, min_theta_c: mc });
        let margin = (samples[arg].log_rate_c - samples[arg].log_rate_s) / k as f64;
        if best.is_none_or(|b| ms > b.0) {
            best = Some((ms, k, margin));
        }
        if best_c.is_none_or(|b| mc > b.0) {
            best_c = Some((mc, k));
        }
    }
    let (theta_s, k_used, min_margin) = best.expect("k_max ≥ 1");
    let (theta_c, k_used_c) = best_c.expect("k_max ≥ 1");
    Ok(PinchingReport { theta_s, theta_c, k_used, k_used_c, grid_size: grid.len(), min_margin, per_k })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    S,
    C,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirkhoffReport {
    /// Tail-minimum of the partial-sum ratio per sample.
    pub per_sample: Vec<f64>,
    /// Minimum over samples of the ratio at each `n = 1..=n_max`.
    pub running_inf: Vec<f64>,
    pub estimate: f64,
    pub n_max: usize,
    pub window_start: usize,
}

/// Accumulates ratios `Σ num / Σ den` over `n = 1..=terms.len()`.
fn ratio_curve(terms: &[(f64, f64)]) -> Result<Vec<f64>> {
    let (mut a, mut b) = (0.0, 0.0);
    terms
        .iter()
        .map(|(n, d)| {
            a += n;
            b += d;
            if b.abs() < 1e-8 {
                Err(LabError::InvalidSample(format!("denominator partial sum {b:.3e}")))
            } else {
                Ok(a / b)
            }
        })
        .collect()
}

fn summarize(curves: Vec<Vec<f64>>, n_max: usize, window_start: usize) -> BirkhoffReport {
    let per_sample: Vec<f64> = curves
        .iter()
        .map(|c| c[window_start - 1..].iter().copied().fold(f64::INFINITY, f64::min))
        .collect();
    let running_inf = (0..n_max).map(|n| curves.iter().map(|c| c[n]).fold(f64::INFINITY, f64::min)).collect();
    let estimate = per_sample.iter().copied().fold(f64::INFINITY, f64::min);
    BirkhoffReport { per_sample, running_inf, estimate, n_max, window_start }
}

fn window_start(n_max: usize, window: f64) -> usize {
    ((n_max as f64 * window).floor() as usize).clamp(1, n_max)
}

/// `k`-step orbit of `x` of length `n`: backward (`f^{-ik}x, i = 1..=n`) or
/// forward (`f^{ik}x, i = 0..n`).
fn k_orbit(map: &MapSpec, x: &TorusPoint, k: usize, n: usize, backward: bool) -> Result<Vec<TorusPoint>> {
    let mut out = Vec::with_capacity(n);
    let mut p = *x;
    for _ in 0..n {
        if backward {
            for _ in 0..k {
                p = map.inverse_apply(&p, 1e-13)?;
            }
            out.push(p);
        } else {
            out.push(p);
            for _ in 0..k {
                p = map.apply(&p);
            }
        }
    }
    Ok(out)
}

/// Birkhoff ratios of `α_s(k,x)` (backward orbits) or `α_c(k,x)`
/// (forward orbits, the `f^{-1}` rates expressed through `f`).
pub fn birkhoff_alpha(
    field: &BundleField,
    which: Which,
    k: usize,
    n_max: usize,
    samples: &[TorusPoint],
    window: f64,
) -> Result<BirkhoffReport> {
    if k == 0 || n_max == 0 || samples.is_empty() {
        return Err(LabError::Domain("need k, n_max ≥ 1 and samples".into()));
    }
    let curves: Vec<Vec<f64>> = samples
        .par_iter()
        .map(|x| {
            let orbit = k_orbit(field.map(), x, k, n_max, which == Which::S)?;
            let terms: Vec<(f64, f64)> = orbit
                .iter()
                .map(|p| {
                    let r = rates(field, p, k)?;
                    Ok(match which {
                        Which::S => (r.log_rate_c - r.log_rate_s, r.log_rate_u),
                        Which::C => (r.log_rate_c - r.log_rate_s, -r.log_rate_s),
                    })
                })
                .collect::<Result<_>>()?;
            ratio_curve(&terms)
        })
        .collect::<Result<_>>()?;
    Ok(summarize(curves, n_max, window_start(n_max, window)))
}

/// Log-moduli of the multiplier eigenvalues, sorted; errors unless three
/// real eigenvalues separated by more than 1e-6.
pub fn multiplier_log_moduli(m: &Matrix3<f64>) -> Result<[f64; 3]> {
    let tr = m.trace();
    let m2 = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)] + m[(0, 0)] * m[(2, 2)] - m[(0, 2)] * m[(2, 0)]
        + m[(1, 1)] * m[(2, 2)]
        - m[(1, 2)] * m[(2, 1)];
    let roots = real_roots(&[1.0, -tr, m2, -m.determinant()]);
    if roots.len() != 3 {
        return Err(LabError::Degenerate("multiplier has complex eigenvalues".into()));
    }
    let mut l: Vec<f64> = roots.iter().map(|r| r.abs().ln()).collect();
    l.sort_by(f64::total_cmp);
    if l[1] - l[0] <= 1e-6 || l[2] - l[1] <= 1e-6 {
        return Err(LabError::Degenerate(format!("multiplier log-moduli cluster: {l:?}")));
    }
    Ok([l[0], l[1], l[2]])
}

/// Exponent of a single orbit from one-step bundle rates.
pub fn orbit_alpha(field: &BundleField, which: Which, orbit: &PeriodicOrbit) -> Result<f64> {
    multiplier_log_moduli(&orbit.multiplier)?;
    let (mut num, mut den) = (0.0, 0.0);
    for p in &orbit.points {
        let r = rates(field, p, 1)?;
        num += r.log_rate_c - r.log_rate_s;
        den += match which {
            Which::S => r.log_rate_u,
            Which::C => -r.log_rate_s,
        };
    }
    if den <= 0.0 {
        return Err(LabError::InvalidSample("non-positive orbit denominator".into()));
    }
    Ok(num / den)
}

pub fn periodic_alpha(field: &BundleField, which: Which, orbits: &[PeriodicOrbit]) -> Result<f64> {
    if orbits.is_empty() {
        return Err(LabError::Domain("no periodic orbits".into()));
    }
    let vals: Vec<f64> = orbits.par_iter().map(|o| orbit_alpha(field, which, o)).collect::<Result<_>>()?;
    Ok(vals.into_iter().fold(f64::INFINITY, f64::min))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InducedDirection {
    ForwardCs,
    BackwardCs,
}

/// Metric on the fibers of `E^{cs}` used for `‖F‖`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FiberMetric {
    /// `E^s` and `E^c` unit vectors declared orthonormal.
    #[default]
    Adapted,
    Euclidean,
}

fn plane_basis(field: &BundleField, x: &TorusPoint, metric: FiberMetric) -> Result<Matrix3x2<f64>> {
    let s = field.vector(x, BundleSelector::S)?;
    let c = field.vector(x, BundleSelector::C)?;
    Ok(match metric {
        FiberMetric::Adapted => Matrix3x2::from_columns(&[s, c]),
        FiberMetric::Euclidean => {
            let c2 = (c - s * s.dot(&c)).normalize();
            Matrix3x2::from_columns(&[s, c2])
        }
    })
}

fn singular_values_2x2(m: &Matrix2<f64>) -> (f64, f64) {
    let a = m.transpose() * m;
    let tr = a.trace();
    let det = a.determinant();
    let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
    let l1 = tr / 2.0 + disc;
    let l2 = (det / l1).max(0.0);
    (l1.sqrt(), l2.sqrt())
}

/// `log(‖Df^k|E^{cs}(x)‖ / m(Df^k|E^{cs}(x)))` in the chosen fiber metric.
pub fn cs_log_distortion(field: &BundleField, x: &TorusPoint, k: usize, metric: FiberMetric) -> Result<f64> {
    let map = field.map();
    let mut p = *x;
    let mut d = Matrix3::identity();
    for _ in 0..k {
        d = map.jacobian(&p) * d;
        p = map.apply(&p);
    }
    let b0 = plane_basis(field, x, metric)?;
    let b1 = plane_basis(field, &p, metric)?;
    let image = d * b0;
    let gram = b1.transpose() * b1;
    let coords = gram.try_inverse().ok_or_else(|| LabError::Degenerate("degenerate cs basis".into()))? * b1.transpose() * image;
    let (s1, s2) = singular_values_2x2(&coords);
    Ok((s1 / s2).ln())
}

/// Sample of `A_k` and the matching Birkhoff term at a base point.
fn induced_term(field: &BundleField, x: &TorusPoint, dir: InducedDirection, k: usize, metric: FiberMetric) -> Result<(f64, f64)> {
    match dir {
        InducedDirection::ForwardCs => {
            let num = cs_log_distortion(field, x, k, metric)?;
            let den = rates(field, x, k)?.log_rate_u;
            Ok((num, den))
        }
        InducedDirection::BackwardCs => {
            // F^k over f^{-k} at x is the inverse of the forward map at f^{-k}x
            let mut y = *x;
            for _ in 0..k {
                y = field.map().inverse_apply(&y, 1e-13)?;
            }
            let num = cs_log_distortion(field, &y, k, metric)?;
            let den = -rates(field, &y, k)?.log_rate_s;
            Ok((num, den))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedAReport {
    pub direction: InducedDirection,
    pub metric: FiberMetric,
    pub k: usize,
    pub a_k: f64,
    pub samples: Vec<f64>,
    pub alpha: BirkhoffReport,
}

/// `A_k` over a grid and the Birkhoff analogue `α(k,x)` along backward
/// orbits of the base map of `F` (`f` for forward-cs, `f^{-1}` otherwise).
pub fn induced_a(
    field: &BundleField,
    dir: InducedDirection,
    k: usize,
    grid: &[TorusPoint],
    n_max: usize,
    metric: FiberMetric,
) -> Result<InducedAReport> {
    if field.map().dim() != 3 {
        return Err(LabError::Domain("induced_A needs d = 3".into()));
    }
    if k == 0 || grid.is_empty() || n_max == 0 {
        return Err(LabError::Domain("need k, n_max ≥ 1 and a grid".into()));
    }
    let samples: Vec<f64> = grid
        .par_iter()
        .map(|x| {
            let (n, d) = induced_term(field, x, dir, k, metric)?;
            if d <= 0.0 {
                return Err(LabError::InvalidSample("non-positive expansion".into()));
            }
            Ok(n / d)
        })
        .collect::<Result<_>>()?;
    let a_k = samples.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let curves: Vec<Vec<f64>> = grid
        .par_iter()
        .map(|x| {
            // backward orbit of the base map of F
            let orbit = k_orbit(field.map(), x, k, n_max, dir == InducedDirection::ForwardCs)?;
            let terms: Vec<(f64, f64)> = orbit
                .iter()
                .map(|p| match dir {
                    InducedDirection::ForwardCs => induced_term(field, p, dir, k, metric),
                    // the term at f^{ik}x is evaluated at f^{(i-1)k}x
                    InducedDirection::BackwardCs => {
                        let num = cs_log_distortion(field, p, k, metric)?;
                        Ok((num, -rates(field, p, k)?.log_rate_s))
                    }
                })
                .collect::<Result<_>>()?;
            ratio_curve(&terms)
        })
        .collect::<Result<_>>()?;
    let alpha = summarize(curves, n_max, window_start(n_max, 0.5));
    Ok(InducedAReport { direction: dir, metric, k, a_k, samples, alpha })
}

pub fn kappa(l: &LinearMapSpec) -> Result<f64> {
    let c = classify_linear(l)?;
    if !(c.is_partially_hyperbolic_anosov && c.center_contracting) {
        return Err(LabError::Domain("κ needs a center-contracting partially hyperbolic map".into()));
    }
    Ok(c.moduli[0].ln() / c.moduli[1].ln())
}
