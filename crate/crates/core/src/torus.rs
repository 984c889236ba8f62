//! Flat tori `T^d` (d ≤ 3) and lines/planes in `R^3`.
//!
//! Points and vectors of lower dimension are stored zero-padded in three
//! slots so that every downstream routine can use fixed-size algebra.

use crate::error::{LabError, Result};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

/// Angle below which two planes are treated as parallel.
pub const TOL_PARALLEL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TorusPoint {
    coords: [f64; 3],
    dim: usize,
}

fn unit_interval(v: f64) -> f64 {
    let r = v - v.floor();
    if r >= 1.0 {
        0.0
    } else {
        r
    }
}

impl TorusPoint {
    /// Wraps raw coordinates into `[0,1)^d`.
    pub fn wrap(raw: &[f64]) -> Result<Self> {
        if raw.is_empty() || raw.len() > 3 {
            return Err(LabError::Domain(format!("torus dimension {} not in 1..=3", raw.len())));
        }
        if raw.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Domain("non-finite coordinate".into()));
        }
        let mut coords = [0.0; 3];
        for (c, v) in coords.iter_mut().zip(raw) {
            *c = unit_interval(*v);
        }
        Ok(Self { coords, dim: raw.len() })
    }

    /// Wraps a padded lift; only the first `dim` entries are used.
    pub fn from_lift(v: &Vector3<f64>, dim: usize) -> Self {
        let mut coords = [0.0; 3];
        for i in 0..dim {
            coords[i] = unit_interval(v[i]);
        }
        Self { coords, dim }
    }

    pub fn origin(dim: usize) -> Self {
        Self { coords: [0.0; 3], dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords[..self.dim]
    }

    /// Zero-padded representative in `[0,1)^3`.
    pub fn lift(&self) -> Vector3<f64> {
        Vector3::new(self.coords[0], self.coords[1], self.coords[2])
    }

    /// Exact bit pattern, used as a cache key.
    pub fn key(&self) -> [u64; 3] {
        [self.coords[0].to_bits(), self.coords[1].to_bits(), self.coords[2].to_bits()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TangentVector {
    pub base: TorusPoint,
    pub components: Vector3<f64>,
}

impl TangentVector {
    pub fn norm(&self) -> f64 {
        self.components.norm()
    }
}

/// Shortest displacement `q - p` among all integer translates.
pub fn torus_delta(p: &TorusPoint, q: &TorusPoint) -> Vector3<f64> {
    let mut d = q.lift() - p.lift();
    for i in 0..p.dim {
        d[i] -= d[i].round();
    }
    d
}

pub fn torus_distance(p: &TorusPoint, q: &TorusPoint) -> Result<f64> {
    if p.dim != q.dim {
        return Err(LabError::Domain(format!("dimension mismatch {} vs {}", p.dim, q.dim)));
    }
    Ok(torus_delta(p, q).norm())
}

/// An unoriented line through the origin, stored as a unit vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineDirection {
    v: Vector3<f64>,
}

impl LineDirection {
    pub fn new(v: Vector3<f64>) -> Result<Self> {
        let n = v.norm();
        if !(n.is_finite() && n > 1e-300) {
            return Err(LabError::Domain("zero or non-finite direction".into()));
        }
        Ok(Self { v: v / n })
    }

    pub fn from_slice(c: &[f64]) -> Result<Self> {
        if c.is_empty() || c.len() > 3 {
            return Err(LabError::Domain("direction must have 1..=3 components".into()));
        }
        let mut v = Vector3::zeros();
        for (i, x) in c.iter().enumerate() {
            v[i] = *x;
        }
        Self::new(v)
    }

    pub fn vector(&self) -> Vector3<f64> {
        self.v
    }

    /// Representative whose first non-negligible component is positive.
    pub fn canonical(&self) -> Vector3<f64> {
        for i in 0..3 {
            if self.v[i].abs() > 1e-12 {
                return if self.v[i] < 0.0 { -self.v } else { self.v };
            }
        }
        self.v
    }

    pub fn negated(&self) -> Self {
        Self { v: -self.v }
    }
}

pub fn line_angle(a: &LineDirection, b: &LineDirection) -> f64 {
    angle_between(&a.v, &b.v)
}

/// Unsigned angle between the lines spanned by two non-zero vectors.
///
/// Uses the cross/dot form so that tiny angles keep full relative precision.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let s = a.cross(b).norm();
    let c = a.dot(b).abs();
    s.atan2(c).clamp(0.0, std::f64::consts::FRAC_PI_2)
}

/// A 2-plane in `R^3` represented by its unit normal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneValue {
    pub normal: LineDirection,
}

impl PlaneValue {
    pub fn from_normal(n: Vector3<f64>) -> Result<Self> {
        Ok(Self { normal: LineDirection::new(n)? })
    }

    pub fn spanned_by(a: &Vector3<f64>, b: &Vector3<f64>) -> Result<Self> {
        Self::from_normal(a.cross(b))
    }

    /// Orthogonal projection of `v` into the plane.
    pub fn project(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let n = self.normal.vector();
        v - n * n.dot(v)
    }

    /// Angle between `v` and the plane.
    pub fn angle_to(&self, v: &Vector3<f64>) -> f64 {
        let n = self.normal.vector();
        let s = n.dot(v).abs();
        let c = self.project(v).norm();
        s.atan2(c)
    }
}

pub fn plane_angle(p: &PlaneValue, q: &PlaneValue) -> f64 {
    line_angle(&p.normal, &q.normal)
}

pub fn planes_intersect(p: &PlaneValue, q: &PlaneValue) -> Result<LineDirection> {
    let angle = plane_angle(p, q);
    if angle <= TOL_PARALLEL {
        return Err(LabError::DegenerateIntersection { angle });
    }
    LineDirection::new(p.normal.vector().cross(&q.normal.vector()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn tp(c: &[f64]) -> TorusPoint {
        TorusPoint::wrap(c).unwrap()
    }

    #[test]
    fn wrap_examples() {
        assert_eq!(tp(&[1.25, -0.5, 3.0]).coords(), &[0.25, 0.5, 0.0]);
        assert_eq!(tp(&[0.0, 0.0, 0.0]).coords(), &[0.0, 0.0, 0.0]);
        assert_eq!(tp(&[0.9999999, 0.0, 0.0]).coords(), &[0.9999999, 0.0, 0.0]);
        assert_eq!(tp(&[-1e-20]).coords(), &[0.0]);
        assert!(TorusPoint::wrap(&[f64::NAN]).is_err());
        assert!(TorusPoint::wrap(&[f64::INFINITY, 0.0]).is_err());
    }

    #[test]
    fn distance_examples() {
        let d = torus_distance(&tp(&[0.1, 0.0, 0.0]), &tp(&[0.9, 0.0, 0.0])).unwrap();
        assert!((d - 0.2).abs() < 1e-15);
        let p = tp(&[0.3, 0.7, 0.2]);
        assert_eq!(torus_distance(&p, &p).unwrap(), 0.0);
        // oracle: explicit scan over the 27 nearest translates
        let (a, b) = (tp(&[0.0, 0.0, 0.0]), tp(&[0.5, 0.5, 0.5]));
        let mut best = f64::INFINITY;
        for i in -1..=1 {
            for j in -1..=1 {
                for k in -1..=1 {
                    let t = Vector3::new(0.5 + i as f64, 0.5 + j as f64, 0.5 + k as f64);
                    best = best.min(t.norm());
                }
            }
        }
        let d = torus_distance(&a, &b).unwrap();
        assert!((d - best).abs() < 1e-15 && (d - 0.75f64.sqrt()).abs() < 1e-15);
        assert!(torus_distance(&tp(&[0.0]), &a).is_err());
    }

    #[test]
    fn angle_examples() {
        let l = |v: [f64; 3]| LineDirection::from_slice(&v).unwrap();
        assert_eq!(line_angle(&l([1.0, 0.0, 0.0]), &l([-1.0, 0.0, 0.0])), 0.0);
        assert!((line_angle(&l([1.0, 0.0, 0.0]), &l([0.0, 1.0, 0.0])) - FRAC_PI_2).abs() < 1e-15);
        assert!((line_angle(&l([1.0, 0.0, 0.0]), &l([1.0, 1.0, 0.0])) - FRAC_PI_4).abs() < 1e-15);
        assert!(LineDirection::from_slice(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn intersection_examples() {
        let p = |v: [f64; 3]| PlaneValue::from_normal(Vector3::from(v)).unwrap();
        let l = planes_intersect(&p([0.0, 0.0, 1.0]), &p([0.0, 1.0, 0.0])).unwrap();
        assert!(l.vector()[0].abs() > 1.0 - 1e-15);
        let e = planes_intersect(&p([1.0, 0.0, 0.0]), &p([1.0, 1e-12, 0.0]));
        assert!(matches!(e, Err(LabError::DegenerateIntersection { .. })));
        let l = planes_intersect(&p([1.0, 1.0, 0.0]), &p([1.0, -1.0, 0.0])).unwrap();
        assert!((l.vector()[2].abs() - 1.0).abs() < 1e-15);
    }

    fn unit() -> impl Strategy<Value = Vector3<f64>> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("nonzero", |(a, b, c)| a * a + b * b + c * c > 1e-4)
            .prop_map(|(a, b, c)| Vector3::new(a, b, c).normalize())
    }

    fn point() -> impl Strategy<Value = TorusPoint> {
        (0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, c)| tp(&[a, b, c]))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn angle_symmetric(a in unit(), b in unit()) {
            let (la, lb) = (LineDirection::new(a).unwrap(), LineDirection::new(b).unwrap());
            prop_assert_eq!(line_angle(&la, &lb), line_angle(&lb, &la));
            prop_assert_eq!(line_angle(&la, &lb.negated()), line_angle(&la, &lb));
        }

        #[test]
        fn triangle_inequality(p in point(), q in point(), r in point()) {
            let pq = torus_distance(&p, &q).unwrap();
            let qr = torus_distance(&q, &r).unwrap();
            let pr = torus_distance(&p, &r).unwrap();
            prop_assert!(pr <= pq + qr + 1e-12);
            prop_assert_eq!(pq, torus_distance(&q, &p).unwrap());
        }

        #[test]
        fn wrap_idempotent(a in -10.0..10.0f64, b in -10.0..10.0f64) {
            let p = tp(&[a, b]);
            prop_assert_eq!(TorusPoint::wrap(p.coords()).unwrap(), p);
            prop_assert!(p.coords().iter().all(|c| (0.0..1.0).contains(c)));
        }

        #[test]
        fn intersection_swap(a in unit(), b in unit()) {
            let (p, q) = (PlaneValue::from_normal(a).unwrap(), PlaneValue::from_normal(b).unwrap());
            prop_assume!(plane_angle(&p, &q) > 1e-3);
            let l1 = planes_intersect(&p, &q).unwrap();
            let l2 = planes_intersect(&q, &p).unwrap();
            prop_assert!(line_angle(&l1, &l2) < 1e-12);
            prop_assert!(l1.vector().dot(&a).abs() < 1e-10 && l1.vector().dot(&b).abs() < 1e-10);
        }
    }
}
