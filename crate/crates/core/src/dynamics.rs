//! Linear toral automorphisms and their perturbations `x ↦ Lx + ε φ(x) e`.

use crate::error::{LabError, Result};
use crate::numeric::{eigenvector3, orient, real_roots};
use crate::torus::{torus_distance, LineDirection, TorusPoint};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashSet};
use std::f64::consts::TAU;

/// Default bound on |ε| for perturbed maps.
pub const EPS_MAX: f64 = 0.1;
/// Default cap on |det(L^n - I)| for periodic point enumeration.
pub const PERIODIC_CAP: i128 = 100_000;

/// Integer unimodular matrix of size 2 or 3, zero-padded to 3×3 with a
/// unit in the unused diagonal slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearMapSpec {
    dim: usize,
    m: [[i64; 3]; 3],
}

fn det3(m: &[[i128; 3]; 3]) -> i128 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

fn adj3(m: &[[i128; 3]; 3]) -> [[i128; 3]; 3] {
    let mut a = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            a[i][j] = m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
        }
    }
    a
}

fn widen(m: &[[i64; 3]; 3]) -> [[i128; 3]; 3] {
    let mut w = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            w[i][j] = m[i][j] as i128;
        }
    }
    w
}

fn mul_checked(a: &[[i128; 3]; 3], b: &[[i128; 3]; 3]) -> Option<[[i128; 3]; 3]> {
    let mut c = [[0i128; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let mut s: i128 = 0;
            for k in 0..3 {
                s = s.checked_add(a[i][k].checked_mul(b[k][j])?)?;
            }
            c[i][j] = s;
        }
    }
    Some(c)
}

impl LinearMapSpec {
    pub fn new(rows: &[Vec<i64>]) -> Result<Self> {
        let dim = rows.len();
        if !(2..=3).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return Err(LabError::Domain("matrix must be square of size 2 or 3".into()));
        }
        let mut m = [[0i64; 3]; 3];
        m[2][2] = 1;
        for (i, r) in rows.iter().enumerate() {
            for (j, v) in r.iter().enumerate() {
                m[i][j] = *v;
            }
        }
        let spec = Self { dim, m };
        if spec.det().abs() != 1 {
            return Err(LabError::Domain(format!("matrix is not unimodular (det {})", spec.det())));
        }
        Ok(spec)
    }

    /// The model map `[[0,1,0],[0,0,1],[-1,0,3]]`.
    pub fn l3() -> Self {
        Self::new(&[vec![0, 1, 0], vec![0, 0, 1], vec![-1, 0, 3]]).expect("unimodular")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn rows(&self) -> Vec<Vec<i64>> {
        (0..self.dim).map(|i| self.m[i][..self.dim].to_vec()).collect()
    }

    pub fn det(&self) -> i128 {
        det3(&widen(&self.m))
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.m[i][j] as f64)
    }

    /// Exact inverse (adjugate times det, det = ±1).
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let w = widen(&self.m);
        let a = adj3(&w);
        let d = det3(&w);
        Matrix3::from_fn(|i, j| (a[i][j] * d) as f64)
    }

    /// Monic characteristic polynomial, highest degree first.
    pub fn char_poly(&self) -> Vec<f64> {
        let w = widen(&self.m);
        if self.dim == 2 {
            let tr = w[0][0] + w[1][1];
            let det = w[0][0] * w[1][1] - w[0][1] * w[1][0];
            return vec![1.0, -tr as f64, det as f64];
        }
        let tr = w[0][0] + w[1][1] + w[2][2];
        let m2 = (w[0][0] * w[1][1] - w[0][1] * w[1][0])
            + (w[0][0] * w[2][2] - w[0][2] * w[2][0])
            + (w[1][1] * w[2][2] - w[1][2] * w[2][1]);
        vec![1.0, -tr as f64, m2 as f64, -det3(&w) as f64]
    }

    /// Integer value of the characteristic polynomial at `t`.
    fn char_poly_int(&self, t: i128) -> i128 {
        let w = widen(&self.m);
        let mut s = [[0i128; 3]; 3];
        for i in 0..self.dim {
            for j in 0..self.dim {
                s[i][j] = if i == j { t } else { 0 } - w[i][j];
            }
        }
        if self.dim == 2 {
            s[2][2] = 1;
        }
        det3(&s)
    }

    fn power_minus_identity(&self, n: usize) -> Result<[[i128; 3]; 3]> {
        let w = widen(&self.m);
        let mut p = [[0i128; 3]; 3];
        for (i, row) in p.iter_mut().enumerate() {
            row[i] = 1;
        }
        for _ in 0..n {
            p = mul_checked(&p, &w).ok_or_else(|| LabError::Size(format!("L^{n} overflows")))?;
        }
        for (i, row) in p.iter_mut().enumerate().take(self.dim) {
            row[i] -= 1;
        }
        Ok(p)
    }

    /// Real eigen-data sorted by modulus (stable, [center,] unstable), each
    /// vector oriented with its first non-negligible component positive.
    pub fn eigen_directions(&self) -> Result<Vec<(f64, Vector3<f64>)>> {
        let roots = real_roots(&self.char_poly());
        if roots.len() != self.dim {
            return Err(LabError::Domain("linear part has complex eigenvalues".into()));
        }
        let mut r = roots;
        r.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let m = self.matrix();
        Ok(r.into_iter()
            .map(|l| {
                let mut v = eigenvector3(&m, l);
                if self.dim == 2 {
                    v[2] = 0.0;
                    v = v.normalize();
                }
                (l, orient(v))
            })
            .collect())
    }
}

/// One Fourier mode `cos_coeff·cos(2π k·x) + sin_coeff·sin(2π k·x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierTerm {
    pub k: Vec<i64>,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FourierScalarField {
    pub terms: Vec<FourierTerm>,
}

impl FourierScalarField {
    /// `sin(2π x₁)/(2π)`.
    pub fn sine_x1(dim: usize) -> Self {
        let mut k = vec![0; dim];
        k[0] = 1;
        Self { terms: vec![FourierTerm { k, cos: 0.0, sin: 1.0 / TAU }] }
    }

    fn freq(t: &FourierTerm) -> Vector3<f64> {
        let mut k = Vector3::zeros();
        for (i, v) in t.k.iter().enumerate().take(3) {
            k[i] = *v as f64;
        }
        k
    }

    pub fn value(&self, x: &Vector3<f64>) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let a = TAU * Self::freq(t).dot(x);
                t.cos * a.cos() + t.sin * a.sin()
            })
            .sum()
    }

    pub fn gradient(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.terms.iter().fold(Vector3::zeros(), |g, t| {
            let k = Self::freq(t);
            let a = TAU * k.dot(x);
            g + k * (TAU * (t.sin * a.cos() - t.cos * a.sin()))
        })
    }

    /// Upper bound for `sup |∇φ|`.
    pub fn gradient_bound(&self) -> f64 {
        self.terms.iter().map(|t| TAU * Self::freq(t).norm() * (t.cos.abs() + t.sin.abs())).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation {
    pub epsilon: f64,
    pub phi: FourierScalarField,
    pub e: LineDirection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MapSpec {
    Linear(LinearMapSpec),
    Perturbed { linear: LinearMapSpec, pert: Perturbation },
}

impl MapSpec {
    /// Perturbed map with the default ε bound.
    pub fn perturbed(linear: LinearMapSpec, epsilon: f64, phi: FourierScalarField, e: Vector3<f64>) -> Result<Self> {
        Self::perturbed_with_bound(linear, epsilon, phi, e, EPS_MAX)
    }

    pub fn perturbed_with_bound(
        linear: LinearMapSpec,
        epsilon: f64,
        phi: FourierScalarField,
        e: Vector3<f64>,
        eps_max: f64,
    ) -> Result<Self> {
        if !epsilon.is_finite() || epsilon.abs() > eps_max {
            return Err(LabError::Domain(format!("|epsilon| = {epsilon} exceeds {eps_max}")));
        }
        if phi.terms.iter().any(|t| t.k.len() != linear.dim() || !t.cos.is_finite() || !t.sin.is_finite()) {
            return Err(LabError::Domain("Fourier term dimension mismatch".into()));
        }
        let e = LineDirection::new(e)?;
        let contraction = epsilon.abs() * phi.gradient_bound() * (linear.inverse_matrix() * e.vector()).norm();
        if contraction >= 1.0 {
            return Err(LabError::Domain(format!("inverse contraction factor {contraction:.3} ≥ 1")));
        }
        Ok(Self::Perturbed { linear, pert: Perturbation { epsilon, phi, e } })
    }

    /// The Example 6.1 family on L3 with `φ = sin(2πx₁)/(2π)`.
    pub fn example(epsilon: f64, e: Vector3<f64>) -> Result<Self> {
        Self::perturbed(LinearMapSpec::l3(), epsilon, FourierScalarField::sine_x1(3), e)
    }

    pub fn linear_part(&self) -> &LinearMapSpec {
        match self {
            Self::Linear(l) => l,
            Self::Perturbed { linear, .. } => linear,
        }
    }

    pub fn dim(&self) -> usize {
        self.linear_part().dim()
    }

    /// Lifted map on `R^d` (padded).
    pub fn apply_lift(&self, x: &Vector3<f64>) -> Vector3<f64> {
        match self {
            Self::Linear(l) => l.matrix() * x,
            Self::Perturbed { linear, pert } => {
                linear.matrix() * x + pert.e.vector() * (pert.epsilon * pert.phi.value(x))
            }
        }
    }

    pub fn apply(&self, x: &TorusPoint) -> TorusPoint {
        TorusPoint::from_lift(&self.apply_lift(&x.lift()), self.dim())
    }

    pub fn jacobian_lift(&self, x: &Vector3<f64>) -> Matrix3<f64> {
        match self {
            Self::Linear(l) => l.matrix(),
            Self::Perturbed { linear, pert } => {
                linear.matrix() + pert.e.vector() * pert.phi.gradient(x).transpose() * pert.epsilon
            }
        }
    }

    pub fn jacobian(&self, x: &TorusPoint) -> Matrix3<f64> {
        self.jacobian_lift(&x.lift())
    }

    /// Preimage of the lift `y` (a lift of the torus preimage).
    pub fn inverse_lift(&self, y: &Vector3<f64>, tol: f64) -> Result<Vector3<f64>> {
        let linv = self.linear_part().inverse_matrix();
        let x0 = linv * y;
        let mut x = x0;
        if let Self::Perturbed { pert, .. } = self {
            let w = linv * pert.e.vector() * pert.epsilon;
            let mut step = f64::INFINITY;
            for _ in 0..200 {
                let nx = x0 - w * pert.phi.value(&x);
                step = (nx - x).norm();
                x = nx;
                if step < tol / 10.0 {
                    return Ok(x);
                }
            }
            return Err(LabError::Inversion { residual: step });
        }
        Ok(x)
    }

    pub fn inverse_apply(&self, y: &TorusPoint, tol: f64) -> Result<TorusPoint> {
        Ok(TorusPoint::from_lift(&self.inverse_lift(&y.lift(), tol)?, self.dim()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralClassification {
    /// Real parts sorted by modulus; a complex pair appears twice with its
    /// common real part.
    pub eigenvalues: Vec<f64>,
    pub moduli: Vec<f64>,
    pub complex_pair: bool,
    pub is_anosov: bool,
    pub is_partially_hyperbolic_anosov: bool,
    pub center_contracting: bool,
}

const MARGIN: f64 = 1e-9;

pub fn classify_linear(l: &LinearMapSpec) -> Result<SpectralClassification> {
    // exact unit eigenvalues are detected in integer arithmetic
    if l.char_poly_int(1) == 0 || l.char_poly_int(-1) == 0 {
        let roots = real_roots(&l.char_poly());
        let mut ev = roots.clone();
        ev.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        return Ok(SpectralClassification {
            moduli: ev.iter().map(|v| v.abs()).collect(),
            eigenvalues: ev,
            complex_pair: roots.len() < l.dim(),
            is_anosov: false,
            is_partially_hyperbolic_anosov: false,
            center_contracting: false,
        });
    }
    let poly = l.char_poly();
    let roots = real_roots(&poly);
    let (mut pairs, complex_pair): (Vec<(f64, f64)>, bool) = if roots.len() == l.dim() {
        (roots.iter().map(|r| (*r, r.abs())).collect(), false)
    } else if l.dim() == 3 && roots.len() == 1 {
        let r = roots[0];
        // x^3 + a x^2 + b x + c = (x - r)(x^2 + p x + q)
        let q = -poly[3] / r;
        let p = poly[1] + r;
        let re = -p / 2.0;
        let m = q.abs().sqrt();
        (vec![(r, r.abs()), (re, m), (re, m)], true)
    } else {
        let re = -poly[1] / 2.0;
        let m = poly[2].abs().sqrt();
        (vec![(re, m), (re, m)], true)
    };
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
    if let Some(p) = pairs.iter().find(|p| (p.1 - 1.0).abs() < MARGIN) {
        return Err(LabError::Indeterminate(format!("eigenvalue modulus {} within 1e-9 of 1", p.1)));
    }
    let moduli: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let is_anosov = true;
    let (mut ph, mut cc) = (false, false);
    if l.dim() == 3 && !complex_pair {
        let (s, c, u) = (moduli[0], moduli[1], moduli[2]);
        if s + MARGIN < c && c < 1.0 - MARGIN && u > 1.0 + MARGIN {
            ph = true;
            cc = true;
        } else if s < 1.0 - MARGIN && c > 1.0 + MARGIN && c + MARGIN < u {
            ph = true;
        }
    }
    Ok(SpectralClassification {
        eigenvalues: pairs.iter().map(|p| p.0).collect(),
        moduli,
        complex_pair,
        is_anosov,
        is_partially_hyperbolic_anosov: ph,
        center_contracting: cc,
    })
}

/// Periodic points of period dividing `n`, as integer numerators over the
/// common denominator `|det(L^n - I)|`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactPeriodicSet {
    pub denominator: i64,
    pub numerators: Vec<[i64; 3]>,
}

impl ExactPeriodicSet {
    pub fn to_point(&self, a: &[i64; 3], dim: usize) -> TorusPoint {
        let d = self.denominator as f64;
        TorusPoint::wrap(&[a[0] as f64 / d, a[1] as f64 / d, a[2] as f64 / d][..dim]).expect("finite")
    }
}

/// Solutions of `(L^n - I)x ≡ 0 mod Z^d`.
///
/// The solution group is generated by the columns of `(L^n - I)^{-1}`, so
/// it is enumerated exactly by closing those generators under addition
/// modulo the denominator.
pub fn linear_periodic_exact(l: &LinearMapSpec, n: usize) -> Result<ExactPeriodicSet> {
    linear_periodic_exact_capped(l, n, PERIODIC_CAP)
}

pub fn linear_periodic_exact_capped(l: &LinearMapSpec, n: usize, cap: i128) -> Result<ExactPeriodicSet> {
    if n == 0 {
        return Err(LabError::Domain("period must be positive".into()));
    }
    let mut m = l.power_minus_identity(n)?;
    if l.dim() == 2 {
        m[2][2] = 1;
    }
    let det = det3(&m);
    if det == 0 {
        return Err(LabError::Domain(format!("det(L^{n} - I) = 0")));
    }
    if det.abs() > cap {
        return Err(LabError::Size(format!("|det(L^{n} - I)| = {} exceeds cap {cap}", det.abs())));
    }
    let d = det.abs();
    let adj = adj3(&m);
    let sign = det.signum();
    let gens: Vec<[i64; 3]> = (0..l.dim())
        .map(|j| {
            let mut g = [0i64; 3];
            for i in 0..l.dim() {
                g[i] = (adj[i][j] * sign).rem_euclid(d) as i64;
            }
            g
        })
        .collect();
    let d64 = d as i64;
    let mut seen: HashSet<[i64; 3]> = HashSet::new();
    let mut frontier = vec![[0i64; 3]];
    seen.insert([0; 3]);
    while let Some(a) = frontier.pop() {
        for g in &gens {
            let mut b = [0i64; 3];
            for i in 0..3 {
                b[i] = (a[i] + g[i]).rem_euclid(d64);
            }
            if seen.insert(b) {
                frontier.push(b);
            }
        }
    }
    let numerators: Vec<[i64; 3]> = seen.into_iter().collect::<BTreeSet<_>>().into_iter().collect();
    Ok(ExactPeriodicSet { denominator: d64, numerators })
}

pub fn linear_periodic_points(l: &LinearMapSpec, n: usize) -> Result<Vec<TorusPoint>> {
    let set = linear_periodic_exact(l, n)?;
    Ok(set.numerators.iter().map(|a| set.to_point(a, l.dim())).collect())
}

/// Exact action of `L` on numerators modulo the denominator.
pub fn act_exact(l: &LinearMapSpec, a: &[i64; 3], d: i64) -> [i64; 3] {
    let mut b = [0i64; 3];
    for i in 0..l.dim() {
        let mut s: i128 = 0;
        for j in 0..l.dim() {
            s += l.m[i][j] as i128 * a[j] as i128;
        }
        b[i] = s.rem_euclid(d as i128) as i64;
    }
    b
}

/// One representative per `L`-orbit of exact minimal period `n`.
pub fn linear_orbit_representatives(l: &LinearMapSpec, n: usize) -> Result<Vec<TorusPoint>> {
    let set = linear_periodic_exact(l, n)?;
    let d = set.denominator;
    let mut used: HashSet<[i64; 3]> = HashSet::new();
    let mut reps = Vec::new();
    for a in &set.numerators {
        if used.contains(a) {
            continue;
        }
        let mut orbit = vec![*a];
        let mut b = act_exact(l, a, d);
        while b != *a {
            orbit.push(b);
            b = act_exact(l, &b, d);
        }
        used.extend(orbit.iter().copied());
        if orbit.len() == n {
            reps.push(set.to_point(a, l.dim()));
        }
    }
    Ok(reps)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodicOrbit {
    pub points: Vec<TorusPoint>,
    pub period: usize,
    pub multiplier: Matrix3<f64>,
    pub residual: f64,
}

fn iterate_lift(map: &MapSpec, x: &Vector3<f64>, n: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let mut p = *x;
    let mut j = Matrix3::identity();
    for _ in 0..n {
        j = map.jacobian_lift(&p) * j;
        p = map.apply_lift(&p);
    }
    (p, j)
}

pub fn continue_periodic_orbit(map: &MapSpec, seed: &TorusPoint, n: usize) -> Result<PeriodicOrbit> {
    if n == 0 {
        return Err(LabError::Domain("period must be positive".into()));
    }
    let dim = map.dim();
    let mut x = seed.lift();
    let linear = MapSpec::Linear(map.linear_part().clone());
    let (img, _) = iterate_lift(&linear, &x, n);
    let mut m = img - x;
    for i in 0..3 {
        m[i] = m[i].round();
    }
    let id = {
        let mut id = Matrix3::identity();
        if dim == 2 {
            id[(2, 2)] = 0.0;
        }
        id
    };
    for it in 0..=50 {
        let (img, j) = iterate_lift(map, &x, n);
        let g = img - x - m;
        if g.norm() < 1e-13 {
            break;
        }
        if it == 50 {
            return Err(LabError::Continuation(format!("no convergence, residual {:.3e}", g.norm())));
        }
        let mut a = j - id;
        if dim == 2 {
            a[(2, 2)] = 1.0;
        }
        if a.determinant().abs() < 1e-10 {
            return Err(LabError::Degenerate(format!("Df^{n} - I singular at {:?}", x.as_slice())));
        }
        let step = a.try_inverse().ok_or_else(|| LabError::Degenerate("singular Newton matrix".into()))? * g;
        if step.norm() > 0.25 {
            return Err(LabError::Continuation(format!("Newton step {:.3e} exceeds 0.25", step.norm())));
        }
        x -= step;
        if step.norm() < 1e-16 {
            break;
        }
    }
    let p0 = TorusPoint::from_lift(&x, dim);
    let mut points = vec![p0];
    let mut multiplier = Matrix3::identity();
    let mut q = p0;
    for _ in 0..n {
        multiplier = map.jacobian(&q) * multiplier;
        q = map.apply(&q);
        points.push(q);
    }
    let residual = torus_distance(&q, &p0)?;
    points.pop();
    if residual >= 1e-10 {
        return Err(LabError::Continuation(format!("orbit residual {residual:.3e}")));
    }
    Ok(PeriodicOrbit { points, period: n, multiplier, residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn eu() -> Vector3<f64> {
        LinearMapSpec::l3().eigen_directions().unwrap()[2].1
    }

    fn random_points(n: usize, seed: u64) -> Vec<TorusPoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| TorusPoint::wrap(&[rng.gen(), rng.gen(), rng.gen()]).unwrap()).collect()
    }

    #[test]
    fn apply_examples() {
        let cat = MapSpec::Linear(LinearMapSpec::new(&[vec![2, 1], vec![1, 1]]).unwrap());
        assert_eq!(cat.apply(&TorusPoint::origin(2)).coords(), &[0.0, 0.0]);
        let l3 = MapSpec::Linear(LinearMapSpec::l3());
        let y = l3.apply(&TorusPoint::wrap(&[0.5, 0.0, 0.0]).unwrap());
        assert_eq!(y.coords(), &[0.0, 0.0, 0.5]);
        let f = MapSpec::example(0.05, eu()).unwrap();
        assert_eq!(f.apply(&TorusPoint::origin(3)).coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn unimodularity_and_bounds() {
        assert!(LinearMapSpec::new(&[vec![2, 0], vec![0, 1]]).is_err());
        assert!(LinearMapSpec::new(&[vec![1]]).is_err());
        assert!(MapSpec::example(0.2, eu()).is_err());
    }

    #[test]
    fn eigenvector_orientation_matches_companion_formula() {
        let eig = LinearMapSpec::l3().eigen_directions().unwrap();
        for (l, v) in eig {
            let w = Vector3::new(1.0, l, l * l).normalize();
            assert!((v - w).norm() < 1e-12);
        }
    }

    #[test]
    fn jacobian_at_fixed_point_shifts_unstable_multiplier() {
        let e = eu();
        let f = MapSpec::example(0.05, e).unwrap();
        let j = f.jacobian(&TorusPoint::origin(3));
        let expected = j * e;
        let lu = LinearMapSpec::l3().eigen_directions().unwrap()[2].0;
        let mult = expected.dot(&e);
        assert!((expected - e * mult).norm() < 1e-13);
        assert!((mult - (lu + 0.05 * e[0])).abs() < 1e-13);
        assert!((mult - 2.88505).abs() < 1e-5);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let f = MapSpec::example(0.05, eu()).unwrap();
        let h = 1e-6;
        for x in random_points(100, 1) {
            let j = f.jacobian(&x);
            for c in 0..3 {
                let mut dp = x.lift();
                let mut dm = x.lift();
                dp[c] += h;
                dm[c] -= h;
                let col = (f.apply_lift(&dp) - f.apply_lift(&dm)) / (2.0 * h);
                for r in 0..3 {
                    assert!((col[r] - j[(r, c)]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn cocycle_property() {
        let f = MapSpec::example(0.05, eu()).unwrap();
        for x in random_points(100, 2) {
            let fx = f.apply_lift(&x.lift());
            let composed = f.jacobian_lift(&fx) * f.jacobian(&x);
            let h = 1e-5;
            let mut fd = Matrix3::zeros();
            for c in 0..3 {
                let mut dp = x.lift();
                let mut dm = x.lift();
                dp[c] += h;
                dm[c] -= h;
                let col = (f.apply_lift(&f.apply_lift(&dp)) - f.apply_lift(&f.apply_lift(&dm))) / (2.0 * h);
                fd.set_column(c, &col);
            }
            assert!((composed - fd).amax() < 1e-8);
            // chained evaluation is the definition of the composite Jacobian
            let (_, j2) = iterate_lift(&f, &x.lift(), 2);
            assert!((composed - j2).amax() < 1e-10);
        }
    }

    #[test]
    fn unstable_lines_preserved() {
        let e = eu();
        let f = MapSpec::example(0.05, e).unwrap();
        for x in random_points(50, 3) {
            let a = f.apply_lift(&x.lift());
            let b = f.apply_lift(&(x.lift() + e * 0.037));
            let d = b - a;
            assert!(d.cross(&e).norm() / d.norm() < 1e-12);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let l3 = MapSpec::Linear(LinearMapSpec::l3());
        let f = MapSpec::example(0.05, eu()).unwrap();
        for x in random_points(1000, 4) {
            let back = l3.inverse_apply(&l3.apply(&x), 1e-12).unwrap();
            assert!(torus_distance(&back, &x).unwrap() < 1e-12);
            let back = f.inverse_apply(&f.apply(&x), 1e-12).unwrap();
            assert!(torus_distance(&back, &x).unwrap() < 1e-10);
            let y = f.inverse_apply(&x, 1e-12).unwrap();
            assert!(torus_distance(&f.apply(&y), &x).unwrap() < 1e-12);
        }
        let o = f.inverse_apply(&TorusPoint::origin(3), 1e-12).unwrap();
        assert_eq!(o.coords(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn classification_examples() {
        let c = classify_linear(&LinearMapSpec::l3()).unwrap();
        let want = [-0.532_088_886_237_956, 0.6527036446661393, 2.879_385_241_571_817];
        for (a, b) in c.eigenvalues.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((c.eigenvalues.iter().product::<f64>() + 1.0).abs() < 1e-10);
        assert!(c.is_partially_hyperbolic_anosov && c.center_contracting && c.is_anosov);

        let cat = classify_linear(&LinearMapSpec::new(&[vec![2, 1], vec![1, 1]]).unwrap()).unwrap();
        assert!((cat.eigenvalues[0] - (3.0 - 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!((cat.eigenvalues[1] - (3.0 + 5f64.sqrt()) / 2.0).abs() < 1e-12);
        assert!(cat.is_anosov && !cat.is_partially_hyperbolic_anosov);

        let block = LinearMapSpec::new(&[vec![2, 1, 0], vec![1, 1, 0], vec![0, 0, 1]]).unwrap();
        let b = classify_linear(&block).unwrap();
        assert!(!b.is_anosov);

        // x^3 - x - 1 has one real root and a complex pair
        let cplx = LinearMapSpec::new(&[vec![0, 1, 0], vec![0, 0, 1], vec![1, 1, 0]]).unwrap();
        let c = classify_linear(&cplx).unwrap();
        assert!(c.complex_pair && !c.is_partially_hyperbolic_anosov);
        assert!((c.moduli.iter().product::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn periodic_point_counts() {
        let l3 = LinearMapSpec::l3();
        let map = MapSpec::Linear(l3.clone());
        for n in 1..=6 {
            let pts = linear_periodic_points(&l3, n).unwrap();
            let m = l3.power_minus_identity(n).unwrap();
            assert_eq!(pts.len() as i128, det3(&m).abs());
            assert!(pts.contains(&TorusPoint::origin(3)));
            for p in &pts {
                let mut q = *p;
                for _ in 0..n {
                    q = map.apply(&q);
                }
                assert!(torus_distance(&q, p).unwrap() < 1e-12);
            }
            let mut sorted: Vec<_> = pts.iter().map(|p| p.key()).collect();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), pts.len());
        }
        let cat = LinearMapSpec::new(&[vec![2, 1], vec![1, 1]]).unwrap();
        let pts = linear_periodic_points(&cat, 1).unwrap();
        assert_eq!(pts, vec![TorusPoint::origin(2)]);
        assert_eq!(linear_periodic_points(&cat, 2).unwrap().len(), 5);
        assert!(matches!(linear_periodic_points(&l3, 40), Err(LabError::Size(_))));
    }

    #[test]
    fn orbit_representatives_partition_points() {
        let l3 = LinearMapSpec::l3();
        let mut total = 0;
        for d in [1, 2, 3, 6] {
            total += d * linear_orbit_representatives(&l3, d).unwrap().len();
        }
        assert_eq!(total, linear_periodic_points(&l3, 6).unwrap().len());
    }

    #[test]
    fn continuation_examples() {
        let e = eu();
        let f = MapSpec::example(0.05, e).unwrap();
        let orb = continue_periodic_orbit(&f, &TorusPoint::origin(3), 1).unwrap();
        assert!(orb.residual < 1e-11);
        let mult = orb.multiplier * e;
        assert!((mult.dot(&e) - 2.88505).abs() < 1e-5);

        let l3 = MapSpec::Linear(LinearMapSpec::l3());
        let zero = MapSpec::example(0.0, e).unwrap();
        let pts = linear_periodic_points(&LinearMapSpec::l3(), 4).unwrap();
        for p in pts.iter().take(20) {
            let a = continue_periodic_orbit(&l3, p, 4).unwrap();
            assert_eq!(a.points[0], *p);
            assert!(a.residual < 1e-14);
            let b = continue_periodic_orbit(&zero, p, 4).unwrap();
            assert_eq!(a, b);
        }
        for n in 1..=5 {
            for p in linear_orbit_representatives(&LinearMapSpec::l3(), n).unwrap() {
                let o = continue_periodic_orbit(&f, &p, n).unwrap();
                assert!(o.residual < 1e-11);
                for w in o.points.windows(2) {
                    assert!(torus_distance(&f.apply(&w[0]), &w[1]).unwrap() < 1e-10);
                }
            }
        }
    }
}
