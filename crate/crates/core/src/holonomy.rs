//! Induced bundle maps on lines of `E^{cs}`, their unstable holonomy, the
//! obstruction function `Δ_δ`, the su quadrilateral defect and
//! periodic-data gaps.

use crate::dynamics::{LinearMapSpec, MapSpec};
use crate::error::{LabError, Result};
use crate::exponents::{halton_points, induced_a, multiplier_log_moduli, FiberMetric, InducedDirection};
use crate::splitting::{unit_rates, BundleField, BundleSelector};
use crate::torus::{angle_between, torus_delta, LineDirection, PlaneValue, TorusPoint};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const HOLONOMY_DEPTH_CAP: usize = 120;
/// Lower clamp of every noise floor.
pub const FLOOR_MIN: f64 = 1e-9;
pub const INVARIANT_FACTOR: f64 = 3.0;
pub const OBSTRUCTED_FACTOR: f64 = 10.0;
/// Coordinate nudge used to measure floating-point determinacy.
pub const NUDGE: f64 = 8.881784197001252e-16;
/// Orbits with all c-gaps below this have the linear c-periodic data.
pub const GAP_ZERO: f64 = 1e-8;
pub const GAP_POSITIVE: f64 = 1e-6;
/// Bundle tolerance for holonomy pipelines; plane errors are amplified by
/// the fiber action before the limit settles.
pub const HOLONOMY_BUNDLE_TOL: f64 = 1e-14;
/// Steps past the smallest gap, and growth over it, that mark divergence.
const DIVERGENCE_DEPTH: usize = 10;
const DIVERGENCE_FACTOR: f64 = 1e3;
/// Tail bound accepted, in units of `tol`, for the smallest-gap iterate
/// when round-off prevents the regular stop.
const ROUNDOFF_ACCEPT: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimeDirection {
    /// `Df` on lines of `E^{cs}` over `f`; holonomy along `W^u`.
    Forward,
    /// `Df^{-1}` over `f^{-1}`; holonomy along `W^s`.
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Invariant,
    Obstructed,
    Indeterminate,
}

/// Invariant and obstructed verdicts never mix; indeterminate agrees with
/// nothing.
pub fn verdicts_agree(v: &[Verdict]) -> bool {
    v.windows(2).all(|w| w[0] == w[1] && w[0] != Verdict::Indeterminate)
}

#[derive(Clone, Copy)]
pub struct InducedBundleMap<'a> {
    pub field: &'a BundleField,
    pub direction: TimeDirection,
}

impl<'a> InducedBundleMap<'a> {
    /// Checks partial hyperbolicity of `F` (`A_k < 1` for some `k ≤ 8`).
    pub fn new(field: &'a BundleField, direction: TimeDirection) -> Result<Self> {
        let grid = halton_points(8, field.map().dim(), 0);
        let dir = match direction {
            TimeDirection::Forward => InducedDirection::ForwardCs,
            TimeDirection::Backward => InducedDirection::BackwardCs,
        };
        for k in 1..=8 {
            if induced_a(field, dir, k, &grid, 1, FiberMetric::Adapted)?.a_k < 1.0 {
                return Ok(Self { field, direction });
            }
        }
        Err(LabError::Domain("induced bundle map is not partially hyperbolic (A_k ≥ 1 for k ≤ 8)".into()))
    }

    pub fn unchecked(field: &'a BundleField, direction: TimeDirection) -> Self {
        Self { field, direction }
    }

    /// Leaf along which the holonomy acts.
    pub fn leaf(&self) -> BundleSelector {
        match self.direction {
            TimeDirection::Forward => BundleSelector::U,
            TimeDirection::Backward => BundleSelector::S,
        }
    }

    fn dim(&self) -> usize {
        self.field.map().dim()
    }

    /// Base map of `F` on lifts.
    pub fn base(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let m = self.field.map();
        match self.direction {
            TimeDirection::Forward => Ok(m.apply_lift(p)),
            TimeDirection::Backward => m.inverse_lift(p, 1e-13),
        }
    }

    /// Inverse of the base map of `F` on lifts.
    pub fn base_inverse(&self, p: &Vector3<f64>) -> Result<Vector3<f64>> {
        let m = self.field.map();
        match self.direction {
            TimeDirection::Forward => m.inverse_lift(p, 1e-13),
            TimeDirection::Backward => Ok(m.apply_lift(p)),
        }
    }

    /// Derivative of the base map of `F` at `p`, given its preimage under
    /// `f` when running backward.
    fn derivative(&self, p: &Vector3<f64>, f_preimage: &Vector3<f64>) -> Result<Matrix3<f64>> {
        let m = self.field.map();
        match self.direction {
            TimeDirection::Forward => Ok(m.jacobian_lift(p)),
            TimeDirection::Backward => {
                m.jacobian_lift(f_preimage).try_inverse().ok_or_else(|| LabError::Degenerate("singular Jacobian".into()))
            }
        }
    }

    fn cs(&self, p: &Vector3<f64>) -> Result<PlaneValue> {
        self.field.plane(&TorusPoint::from_lift(p, self.dim()), BundleSelector::CS)
    }

    /// `F` on the fiber over `x`.
    pub fn apply(&self, x: &TorusPoint, line: &LineDirection) -> Result<(TorusPoint, LineDirection)> {
        let p = x.lift();
        let q = self.base(&p)?;
        let d = match self.direction {
            TimeDirection::Forward => self.derivative(&p, &p)?,
            TimeDirection::Backward => self.derivative(&p, &q)?,
        };
        Ok((TorusPoint::from_lift(&q, self.dim()), LineDirection::new(d * line.vector())?))
    }

    /// Push `v` from `from` to `to = base(from)` and re-project onto `E^{cs}(to)`.
    fn push(&self, from: &Vector3<f64>, to: &Vector3<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>> {
        let d = match self.direction {
            TimeDirection::Forward => self.derivative(from, from)?,
            TimeDirection::Backward => self.derivative(from, to)?,
        };
        project_line(&self.cs(to)?, &(d * v))
    }

    /// Pull `v` from `from` to `to = base_inverse(from)`.
    fn pull(&self, from: &Vector3<f64>, to: &Vector3<f64>, v: &Vector3<f64>) -> Result<Vector3<f64>> {
        let m = self.field.map();
        let d = match self.direction {
            TimeDirection::Forward => m
                .jacobian_lift(to)
                .try_inverse()
                .ok_or_else(|| LabError::Degenerate("singular Jacobian".into()))?,
            TimeDirection::Backward => m.jacobian_lift(from),
        };
        project_line(&self.cs(to)?, &(d * v))
    }

    /// Fiber contraction over base expansion for one step at `x`.
    fn contraction_ratio(&self, x: &TorusPoint) -> Result<f64> {
        let r = match self.direction {
            TimeDirection::Forward => {
                let [s, c, u] = unit_rates(self.field, x)?;
                (c - s - u).exp()
            }
            TimeDirection::Backward => {
                let y = self.field.map().inverse_apply(x, 1e-13)?;
                unit_rates(self.field, &y)?[1].exp()
            }
        };
        Ok(r.min(0.95))
    }
}

/// Orthogonal projection of a line onto a plane, unit length.
fn project_line(plane: &PlaneValue, v: &Vector3<f64>) -> Result<Vector3<f64>> {
    let p = plane.project(v);
    let n = p.norm();
    if n < 1e-6 * v.norm() {
        return Err(LabError::Transport("line nearly orthogonal to the target plane".into()));
    }
    Ok(p / n)
}

/// Orthogonal projection of a line in `E^{cs}(x)` onto `E^{cs}(y)`.
pub fn fiber_transport(f: &InducedBundleMap, x: &TorusPoint, y: &TorusPoint, line: &LineDirection) -> Result<LineDirection> {
    let d = torus_delta(x, y).norm();
    if d >= 0.25 {
        return Err(LabError::Domain(format!("transport needs d(x,y) < 0.25, got {d}")));
    }
    let px = f.field.plane(x, BundleSelector::CS)?;
    if px.angle_to(&line.vector()) > 1e-6 {
        return Err(LabError::Domain("line is not in E^cs(x)".into()));
    }
    if x == y {
        return Ok(*line);
    }
    LineDirection::new(project_line(&f.field.plane(y, BundleSelector::CS)?, &line.vector())?)
}

/// Closest point of the leaf of `leaf` through `q` to `y` (lifts).
fn project_to_leaf(field: &BundleField, q: &Vector3<f64>, y: &Vector3<f64>, leaf: BundleSelector, max_step: f64) -> Result<Vector3<f64>> {
    let dim = field.map().dim();
    let mut s = (y - q).dot(&field.vector(&TorusPoint::from_lift(q, dim), leaf)?);
    for _ in 0..8 {
        let p = field.flow(q, leaf, s, max_step)?;
        let ds = (y - p).dot(&field.vector(&TorusPoint::from_lift(&p, dim), leaf)?);
        s += ds;
        if ds.abs() < 1e-15 {
            break;
        }
    }
    field.flow(q, leaf, s, max_step)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HolonomyParams {
    pub n_max: usize,
    pub tol: f64,
    /// Largest RK4 step for leaf projections.
    pub max_step: f64,
}

impl Default for HolonomyParams {
    fn default() -> Self {
        Self { n_max: HOLONOMY_DEPTH_CAP, tol: 1e-10, max_step: 2e-3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolonomyResult {
    pub line: LineDirection,
    pub depth: usize,
    pub gap: f64,
}

/// `lim F^n ∘ transport ∘ F^{-n}` applied to `z` over `x`, evaluated at the
/// lift `y` on the holonomy leaf through `x`.
///
/// Pulled-back points of `y` are projected back onto the leaf of the
/// pulled-back `x` at every step, so round-off does not leave the leaf.
pub fn unstable_holonomy_lift(
    f: &InducedBundleMap,
    x: &TorusPoint,
    y: &Vector3<f64>,
    z: &LineDirection,
    params: &HolonomyParams,
) -> Result<HolonomyResult> {
    if *y == x.lift() {
        return Ok(HolonomyResult { line: *z, depth: 0, gap: 0.0 });
    }
    let r = f.contraction_ratio(x)?;
    let bound = |g: f64| g * r / (1.0 - r);
    let mut prev: Option<Vector3<f64>> = None;
    let mut gap = f64::INFINITY;
    let mut settled = false;
    let mut done = None;
    let mut best: Option<HolonomyResult> = None;
    let n_max = params.n_max.min(HOLONOMY_DEPTH_CAP);
    holonomy_iterates(f, x, y, z, n_max, params.max_step, |n, v| {
        if let Some(p) = prev {
            gap = angle_between(v, &p);
            if best.is_none_or(|b| gap < b.gap) {
                best = Some(HolonomyResult { line: LineDirection::new(*v)?, depth: n, gap });
            }
            // a single small gap can be a coincidence; require two in a row
            if bound(gap) < params.tol / 2.0 {
                if settled {
                    done = Some(HolonomyResult { line: LineDirection::new(*v)?, depth: n, gap });
                    return Ok(false);
                }
                settled = true;
            } else {
                settled = false;
            }
            // round-off growth has overtaken convergence
            if best.is_some_and(|b| n >= b.depth + DIVERGENCE_DEPTH && gap > DIVERGENCE_FACTOR * b.gap) {
                return Ok(false);
            }
        }
        prev = Some(*v);
        Ok(true)
    })?;
    if let Some(d) = done {
        return Ok(d);
    }
    match best {
        Some(b) if bound(b.gap) < ROUNDOFF_ACCEPT * params.tol => Ok(b),
        Some(b) => Err(LabError::Holonomy { gap: b.gap, depth: b.depth }),
        None => Err(LabError::Holonomy { gap, depth: n_max }),
    }
}

/// Feeds `F^n ∘ transport ∘ F^{-n} z` for `n = 1, 2, …` to `visit` until it
/// returns `false` or `n_max` is reached.
pub fn holonomy_iterates(
    f: &InducedBundleMap,
    x: &TorusPoint,
    y: &Vector3<f64>,
    z: &LineDirection,
    n_max: usize,
    max_step: f64,
    mut visit: impl FnMut(usize, &Vector3<f64>) -> Result<bool>,
) -> Result<()> {
    let x0 = x.lift();
    let leaf = f.leaf();
    let mut xs = vec![x0];
    let mut ys = vec![*y];
    let mut zs = vec![project_line(&f.cs(&x0)?, &z.vector())?];
    for n in 1..=n_max {
        // re-anchor both lifts near the unit cube to keep lifts small
        let raw = f.base_inverse(&xs[n - 1])?;
        let shift = raw.map(f64::floor);
        let xn = raw - shift;
        let yn = project_to_leaf(f.field, &xn, &(f.base_inverse(&ys[n - 1])? - shift), leaf, max_step)?;
        let zn = f.pull(&xs[n - 1], &xn, &zs[n - 1])?;
        xs.push(xn);
        ys.push(yn);
        zs.push(zn);
        let mut v = project_line(&f.cs(&yn)?, &zn)?;
        for k in (1..=n).rev() {
            v = f.push(&ys[k], &ys[k - 1], &v)?;
        }
        if !visit(n, &v)? {
            break;
        }
    }
    Ok(())
}

/// Holonomy from `x` to `y`, where `y` lies on the holonomy leaf of `x`.
pub fn unstable_holonomy(
    f: &InducedBundleMap,
    x: &TorusPoint,
    y: &TorusPoint,
    z: &LineDirection,
    params: &HolonomyParams,
) -> Result<LineDirection> {
    let yl = x.lift() + torus_delta(x, y);
    Ok(unstable_holonomy_lift(f, x, &yl, z, params)?.line)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstructionParams {
    /// Arc points per disk, split evenly between both sides.
    pub arc_samples: usize,
    pub direction: Option<TimeDirection>,
    pub holonomy: HolonomyParams,
}

impl Default for ObstructionParams {
    fn default() -> Self {
        Self { arc_samples: 8, direction: None, holonomy: HolonomyParams::default() }
    }
}

fn default_direction(section: BundleSelector) -> Result<TimeDirection> {
    match section {
        BundleSelector::S => Ok(TimeDirection::Forward),
        BundleSelector::C => Ok(TimeDirection::Backward),
        _ => Err(LabError::Domain("obstruction sections are S or C".into())),
    }
}

/// Signed arclength offsets used for a list of radii (union of the
/// per-radius grids, so smaller disks see a subset of the points).
fn arc_offsets(deltas: &[f64], arc_samples: usize) -> Vec<f64> {
    let m = (arc_samples / 2).max(1);
    let mut out: Vec<f64> = deltas
        .iter()
        .flat_map(|d| (1..=m).flat_map(move |i| [d * i as f64 / m as f64, -d * i as f64 / m as f64]))
        .collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

/// `Δ_δ(x)` for every `δ` in `deltas`.
pub fn obstruction_profile(
    field: &BundleField,
    section: BundleSelector,
    x: &TorusPoint,
    deltas: &[f64],
    params: &ObstructionParams,
) -> Result<Vec<f64>> {
    if deltas.iter().any(|d| !(*d > 0.0 && *d <= 0.25)) {
        return Err(LabError::Domain("δ must lie in (0, 0.25]".into()));
    }
    let dir = match params.direction {
        Some(d) => d,
        None => default_direction(section)?,
    };
    if !matches!(section, BundleSelector::S | BundleSelector::C) {
        return Err(LabError::Domain("obstruction sections are S or C".into()));
    }
    let f = InducedBundleMap::unchecked(field, dir);
    let leaf = f.leaf();
    let phi_x = field.line(x, section)?;
    let dim = field.map().dim();
    let x0 = x.lift();
    let offsets = arc_offsets(deltas, params.arc_samples);
    let values: Vec<(f64, f64)> = offsets
        .iter()
        .map(|s| {
            let t = field.flow(&x0, leaf, *s, params.holonomy.max_step)?;
            let h = unstable_holonomy_lift(&f, x, &t, &phi_x, &params.holonomy)?;
            let e = field.vector(&TorusPoint::from_lift(&t, dim), section)?;
            Ok((*s, angle_between(&e, &h.line.vector())))
        })
        .collect::<Result<_>>()?;
    Ok(deltas
        .iter()
        .map(|d| values.iter().filter(|(s, _)| s.abs() <= d * (1.0 + 1e-12)).map(|v| v.1).fold(0.0, f64::max))
        .collect())
}

/// `sup` over the leaf disk of radius `δ` of the angle between the section
/// and the holonomy transport of its value at `x`.
pub fn obstruction_delta(
    field: &BundleField,
    section: BundleSelector,
    x: &TorusPoint,
    delta: f64,
    params: &ObstructionParams,
) -> Result<f64> {
    Ok(obstruction_profile(field, section, x, &[delta], params)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub delta: f64,
    pub samples: Vec<([f64; 3], f64)>,
    pub min_value: f64,
    pub max_value: f64,
    pub noise_floor: f64,
    pub verdict: Verdict,
}

/// How the noise floor was formed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFloor {
    /// Largest value of the same pipeline on the linear part.
    pub control: f64,
    /// Largest change of the measured quantity under a few-ulp nudge of
    /// the base point.
    pub determinacy: f64,
    pub floor: f64,
}

impl NoiseFloor {
    pub fn new(control: f64, determinacy: f64) -> Self {
        Self { control, determinacy, floor: control.max(determinacy).max(FLOOR_MIN) }
    }

    pub fn verdict(&self, min: f64, max: f64) -> Verdict {
        if max < INVARIANT_FACTOR * self.floor {
            Verdict::Invariant
        } else if min > OBSTRUCTED_FACTOR * self.floor {
            Verdict::Obstructed
        } else {
            Verdict::Indeterminate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaScanReport {
    pub section: BundleSelector,
    pub direction: TimeDirection,
    pub reports: Vec<ObstructionReport>,
    pub noise: NoiseFloor,
    pub verdict: Verdict,
    pub invariant_factor: f64,
    pub obstructed_factor: f64,
    /// For the C-section the backward map needs minimal `W^s`, which is
    /// assumed rather than checked.
    pub assumptions: Vec<String>,
}

fn nudged(x: &TorusPoint) -> TorusPoint {
    let c: Vec<f64> = x.coords().iter().map(|v| v + NUDGE).collect();
    TorusPoint::wrap(&c).expect("finite")
}

/// Number of base points used to measure determinacy.
const DETERMINACY_POINTS: usize = 8;

pub fn delta_scan(
    map: &MapSpec,
    section: BundleSelector,
    deltas: &[f64],
    base_samples: usize,
    params: &ObstructionParams,
    seed: u64,
) -> Result<DeltaScanReport> {
    if map.dim() != 3 || deltas.is_empty() || base_samples == 0 {
        return Err(LabError::Domain("delta_scan needs d = 3, radii and samples".into()));
    }
    let direction = match params.direction {
        Some(d) => d,
        None => default_direction(section)?,
    };
    let params = ObstructionParams { direction: Some(direction), ..*params };
    let field = BundleField::new(map, HOLONOMY_BUNDLE_TOL)?;
    let control = BundleField::new(&MapSpec::Linear(map.linear_part().clone()), HOLONOMY_BUNDLE_TOL)?;
    let pts = halton_points(base_samples, 3, seed);
    let run = |f: &BundleField, x: &TorusPoint| obstruction_profile(f, section, x, deltas, &params);
    let values: Vec<Vec<f64>> = pts.par_iter().map(|x| run(&field, x)).collect::<Result<_>>()?;
    let ctrl: Vec<Vec<f64>> = pts.par_iter().map(|x| run(&control, x)).collect::<Result<_>>()?;
    let k = DETERMINACY_POINTS.min(pts.len());
    let det: Vec<f64> = pts[..k]
        .par_iter()
        .zip(&values[..k])
        .map(|(x, v)| {
            let w = run(&field, &nudged(x))?;
            Ok(v.iter().zip(&w).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let noise = NoiseFloor::new(
        ctrl.iter().flatten().copied().fold(0.0, f64::max),
        det.into_iter().fold(0.0, f64::max),
    );
    let reports: Vec<ObstructionReport> = deltas
        .iter()
        .enumerate()
        .map(|(j, d)| {
            let samples: Vec<([f64; 3], f64)> = pts
                .iter()
                .zip(&values)
                .map(|(x, v)| ([x.coords()[0], x.coords()[1], x.coords()[2]], v[j]))
                .collect();
            let min_value = samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
            let max_value = samples.iter().map(|s| s.1).fold(0.0, f64::max);
            ObstructionReport { delta: *d, samples, min_value, max_value, noise_floor: noise.floor, verdict: noise.verdict(min_value, max_value) }
        })
        .collect();
    let min = reports.iter().map(|r| r.min_value).fold(f64::INFINITY, f64::min);
    let max = reports.iter().map(|r| r.max_value).fold(0.0, f64::max);
    let mut assumptions = Vec::new();
    if direction == TimeDirection::Backward {
        assumptions.push("minimality of W^s is assumed, not verified".to_string());
    }
    Ok(DeltaScanReport {
        section,
        direction,
        reports,
        noise,
        verdict: noise.verdict(min, max),
        invariant_factor: INVARIANT_FACTOR,
        obstructed_factor: OBSTRUCTED_FACTOR,
        assumptions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuParams {
    pub max_step: f64,
    pub newton_tol: f64,
    /// Residual accepted when Newton stalls on a rough bundle.
    pub stall_tol: f64,
}

impl Default for SuParams {
    fn default() -> Self {
        Self { max_step: 1e-3, newton_tol: 1e-10, stall_tol: 1e-5 }
    }
}

/// Point of `W^{cs}(y)` reached by flowing `s` along `E^s`, then `c` along `E^c`.
fn cs_chart(field: &BundleField, y: &Vector3<f64>, s: f64, c: f64, h: f64) -> Result<Vector3<f64>> {
    let p = field.flow(y, BundleSelector::S, s, h)?;
    field.flow(&p, BundleSelector::C, c, h)
}

/// Center coordinate of the point where the unstable leaf through the
/// end of the `b`-long stable arc from `x` meets `W^{cs}(y)`, `y` being
/// the end of the `a`-long unstable arc from `x`.
///
/// Zero for every `a, b` exactly when `E^s ⊕ E^u` is jointly integrable.
pub fn su_defect(field: &BundleField, x: &TorusPoint, a: f64, b: f64, params: &SuParams) -> Result<f64> {
    if field.map().dim() != 3 {
        return Err(LabError::Domain("su_defect needs d = 3".into()));
    }
    if !(a.abs() <= 0.1 && b.abs() <= 0.1) {
        return Err(LabError::Domain("leaf-disk radii must be at most 0.1".into()));
    }
    let h = params.max_step;
    let dim = 3;
    let x0 = x.lift();
    let y = field.flow(&x0, BundleSelector::U, a, h)?;
    let z = field.flow(&x0, BundleSelector::S, b, h)?;
    let reach = 3.0 * a.abs().max(b.abs()).max(1e-3);
    let (mut s, mut c, mut tau) = (b, 0.0, a);
    let mut best = (f64::INFINITY, 0.0);
    for _ in 0..30 {
        let p = cs_chart(field, &y, s, c, h)?;
        let q = field.flow(&z, BundleSelector::U, tau, h)?;
        let g = p - q;
        if g.norm() < best.0 {
            best = (g.norm(), c);
        }
        if g.norm() < params.newton_tol {
            return Ok(c.abs());
        }
        let at = |v: &Vector3<f64>, w| field.vector(&TorusPoint::from_lift(v, dim), w);
        let jac = Matrix3::from_columns(&[at(&p, BundleSelector::S)?, at(&p, BundleSelector::C)?, -at(&q, BundleSelector::U)?]);
        let step = jac.lu().solve(&(-g)).ok_or_else(|| LabError::Geometry("singular su chart".into()))?;
        s += step[0];
        c += step[1];
        tau += step[2];
        if tau.abs() > reach || s.abs() > reach || c.abs() > reach {
            return Err(LabError::Geometry(format!("no crossing within {reach} arclength")));
        }
    }
    if best.0 < params.stall_tol {
        return Ok(best.1.abs());
    }
    Err(LabError::Geometry(format!("su crossing did not converge (residual {:e})", best.0)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuDefectSample {
    pub x: [f64; 3],
    pub a: f64,
    pub b: f64,
    pub defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitGap {
    pub id: usize,
    pub period: usize,
    pub point: [f64; 3],
    /// `|(1/n) log|λ^c_f| − log|λ^c_L||`.
    pub gap: f64,
    pub gap_s: f64,
    pub gap_u: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegrabilityReport {
    pub su_defects: Vec<SuDefectSample>,
    pub su_noise: Option<NoiseFloor>,
    pub su_verdict: Option<Verdict>,
    pub c_periodic_gaps: Vec<OrbitGap>,
    pub failed_orbits: Vec<(usize, usize, String)>,
    pub max_gap: f64,
    pub gap_verdict: Verdict,
    pub gap_zero_threshold: f64,
    pub gap_positive_threshold: f64,
}

pub fn gap_verdict(max_gap: f64) -> Verdict {
    if max_gap < GAP_ZERO {
        Verdict::Invariant
    } else if max_gap > GAP_POSITIVE {
        Verdict::Obstructed
    } else {
        Verdict::Indeterminate
    }
}

/// Center-exponent gaps against the linearization over all continued
/// periodic orbits of period at most `period_cap`.
pub fn c_periodic_gap(map: &MapSpec, period_cap: usize) -> Result<IntegrabilityReport> {
    let l = map.linear_part();
    let e = l.eigen_directions()?;
    let lin = [e[0].0.abs().ln(), e[1].0.abs().ln(), e[2].0.abs().ln()];
    let mut gaps = Vec::new();
    let mut failed = Vec::new();
    let mut id = 0;
    for n in 1..=period_cap {
        for seed in crate::dynamics::linear_orbit_representatives(l, n)? {
            let res = crate::dynamics::continue_periodic_orbit(map, &seed, n).and_then(|o| {
                let m = multiplier_log_moduli(&o.multiplier)?;
                Ok((o, m))
            });
            match res {
                Ok((o, m)) => {
                    let p = o.points[0].coords();
                    let k = n as f64;
                    gaps.push(OrbitGap {
                        id,
                        period: n,
                        point: [p[0], p[1], p[2]],
                        gap: (m[1] / k - lin[1]).abs(),
                        gap_s: (m[0] / k - lin[0]).abs(),
                        gap_u: (m[2] / k - lin[2]).abs(),
                    });
                }
                Err(err) => failed.push((id, n, err.to_string())),
            }
            id += 1;
        }
    }
    let max_gap = gaps.iter().map(|g| g.gap).fold(0.0, f64::max);
    Ok(IntegrabilityReport {
        su_defects: Vec::new(),
        su_noise: None,
        su_verdict: None,
        c_periodic_gaps: gaps,
        failed_orbits: failed,
        max_gap,
        gap_verdict: gap_verdict(max_gap),
        gap_zero_threshold: GAP_ZERO,
        gap_positive_threshold: GAP_POSITIVE,
    })
}

/// Majority vote: obstructed when most defects exceed the obstructed
/// threshold, invariant when most stay below the invariant one.
pub fn majority_verdict(values: &[f64], noise: &NoiseFloor) -> Verdict {
    let n = values.len();
    let high = values.iter().filter(|v| **v > OBSTRUCTED_FACTOR * noise.floor).count();
    let low = values.iter().filter(|v| **v < INVARIANT_FACTOR * noise.floor).count();
    if 2 * high > n {
        Verdict::Obstructed
    } else if 2 * low > n {
        Verdict::Invariant
    } else {
        Verdict::Indeterminate
    }
}

/// su defects at quasi-random points with a linear control and a
/// determinacy measurement, followed by the periodic-data gaps.
pub fn integrability_check(
    map: &MapSpec,
    samples: usize,
    a: f64,
    b: f64,
    period_cap: usize,
    params: &SuParams,
    seed: u64,
) -> Result<IntegrabilityReport> {
    let field = BundleField::new(map, HOLONOMY_BUNDLE_TOL)?;
    let control = BundleField::new(&MapSpec::Linear(map.linear_part().clone()), HOLONOMY_BUNDLE_TOL)?;
    let pts = halton_points(samples, 3, seed);
    let defects: Vec<f64> = pts.par_iter().map(|x| su_defect(&field, x, a, b, params)).collect::<Result<_>>()?;
    let ctrl: Vec<f64> = pts.par_iter().map(|x| su_defect(&control, x, a, b, params)).collect::<Result<_>>()?;
    let k = DETERMINACY_POINTS.min(pts.len());
    let det: Vec<f64> = pts[..k]
        .par_iter()
        .zip(&defects[..k])
        .map(|(x, d)| Ok((su_defect(&field, &nudged(x), a, b, params)? - d).abs()))
        .collect::<Result<_>>()?;
    let noise = NoiseFloor::new(ctrl.iter().copied().fold(0.0, f64::max), det.into_iter().fold(0.0, f64::max));
    let mut report = c_periodic_gap(map, period_cap)?;
    report.su_verdict = Some(majority_verdict(&defects, &noise));
    report.su_noise = Some(noise);
    report.su_defects = pts
        .iter()
        .zip(defects)
        .map(|(x, defect)| SuDefectSample { x: [x.coords()[0], x.coords()[1], x.coords()[2]], a, b, defect })
        .collect();
    Ok(report)
}

/// `dim M + 1 − A`.
pub fn dim_lower_bound_from_a(a: f64, base_dim: usize) -> Result<f64> {
    if !(a > 0.0 && a <= 1.0) {
        return Err(LabError::Domain(format!("A = {a} outside (0, 1]")));
    }
    Ok(base_dim as f64 + 1.0 - a)
}

/// Linear control map of the same dimension as `l`.
pub fn linear_control(l: &LinearMapSpec) -> MapSpec {
    MapSpec::Linear(l.clone())
}
