//! Small-dimension Lie group primitives: the circle, SO(3), SE(3) and R^n.
//!
//! Rotations are stored as 3x3 matrices because every controller in this crate
//! is written directly in terms of `R`. Algebra elements carry a chirality tag
//! (body/left or spatial/right trivialization) and mixed-chirality arithmetic
//! is rejected.

use crate::error::{Error, Result};
use nalgebra::{DVector, Matrix3, Vector3};
use std::f64::consts::PI;

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Tolerance for the orthonormality and skew-symmetry checks.
pub const GROUP_TOL: f64 = 1e-9;

/// Below this angle `exp_so3` switches to its second-order series.
const EXP_SMALL: f64 = 1e-8;

pub fn e1() -> Vec3 {
    Vec3::new(1.0, 0.0, 0.0)
}

pub fn e2() -> Vec3 {
    Vec3::new(0.0, 1.0, 0.0)
}

pub fn e3() -> Vec3 {
    Vec3::new(0.0, 0.0, 1.0)
}

/// Skew-symmetric matrix with `hat(v) * u == v.cross(u)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Fails if `m` is not skew-symmetric within [`GROUP_TOL`].
pub fn vee(m: &Mat3) -> Result<Vec3> {
    let asym = (m + m.transpose()).norm();
    if asym > GROUP_TOL {
        return Err(Error::NotSkew(asym));
    }
    Ok(vee_skew_part(m))
}

/// `vee` of the skew part of `m`, without the symmetry check.
pub fn vee_skew_part(m: &Mat3) -> Vec3 {
    0.5 * Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Rotation matrix, `m^T m = I` and `det m = 1` within [`GROUP_TOL`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    pub fn new(m: Mat3) -> Result<Self> {
        let drift = orthonormality_drift(&m);
        if drift > GROUP_TOL || (m.determinant() - 1.0).abs() > GROUP_TOL {
            return Err(Error::Param(format!("not a rotation (drift {drift:.3e})")));
        }
        Ok(Rotation(m))
    }

    /// Wraps `m` without checking. Used inside integrators where drift is
    /// monitored separately.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Rotation(m)
    }

    /// Nearest rotation in the Frobenius sense (polar factor of `m`).
    pub fn project(m: &Mat3) -> Self {
        Rotation(polar_project(m))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, other: &Rotation) -> Self {
        Rotation(self.0 * other.0)
    }

    pub fn act(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }
}

/// `|m^T m - I|_F`.
pub fn orthonormality_drift(m: &Mat3) -> f64 {
    (m.transpose() * m - Mat3::identity()).norm()
}

/// Polar projection onto SO(3) via the SVD, `U V^T` with a determinant fix.
pub fn polar_project(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut d = Mat3::identity();
        d[(2, 2)] = -1.0;
        r = u * d * v_t;
    }
    r
}

/// Rodrigues formula. Below `|v| < 1e-8` the second-order series is used.
pub fn exp_so3(v: &Vec3) -> Rotation {
    let theta = v.norm();
    let k = hat(v);
    if theta < EXP_SMALL {
        return Rotation(Mat3::identity() + k + 0.5 * k * k);
    }
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / (theta * theta);
    Rotation(Mat3::identity() + a * k + b * k * k)
}

/// Principal logarithm, `|result| <= pi`.
///
/// At a half turn the axis is read off the column of `(R + R^T)/2 - cos(t) I`
/// with the largest diagonal entry and oriented so that entry is positive.
pub fn log_so3(r: &Rotation) -> Vec3 {
    let m = r.matrix();
    let c = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = c.acos();
    let skew = vee_skew_part(m);
    if theta < 1e-6 {
        // sin(t)/t ~ 1 - t^2/6
        return skew * (1.0 + theta * theta / 6.0);
    }
    if PI - theta > 1e-4 {
        return skew * (theta / theta.sin());
    }
    let sym = 0.5 * (m + m.transpose()) - c * Mat3::identity();
    let aat = sym / (1.0 - c);
    let mut k = 0;
    for i in 1..3 {
        if aat[(i, i)] > aat[(k, k)] {
            k = i;
        }
    }
    let mut axis = aat.column(k) / aat[(k, k)].sqrt();
    axis /= axis.norm();
    if skew.norm() > 1e-12 && axis.dot(&skew) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Angle on the circle, reduced to `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CircleAngle(f64);

impl CircleAngle {
    pub fn new(theta: f64) -> Self {
        let mut t = theta.rem_euclid(2.0 * PI);
        if t >= 2.0 * PI {
            t = 0.0;
        }
        CircleAngle(t)
    }

    pub fn theta(&self) -> f64 {
        self.0
    }

    /// Signed representative of `self - other` in `(-pi, pi]`.
    pub fn difference(&self, other: &CircleAngle) -> f64 {
        let d = CircleAngle::new(self.0 - other.0).0;
        if d > PI {
            d - 2.0 * PI
        } else {
            d
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SE3Pose {
    pub o: Vec3,
    pub r: Rotation,
}

impl SE3Pose {
    pub fn identity() -> Self {
        SE3Pose { o: Vec3::zeros(), r: Rotation::identity() }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.r.inverse();
        SE3Pose { o: -(rt.act(&self.o)), r: rt }
    }

    pub fn compose(&self, other: &SE3Pose) -> Self {
        SE3Pose { o: self.o + self.r.act(&other.o), r: self.r.compose(&other.r) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GroupElement {
    Circle(CircleAngle),
    SO3(Rotation),
    SE3(SE3Pose),
    Rn(DVector<f64>),
}

impl GroupElement {
    pub fn inverse(&self) -> Self {
        match self {
            GroupElement::Circle(a) => GroupElement::Circle(CircleAngle::new(-a.theta())),
            GroupElement::SO3(r) => GroupElement::SO3(r.inverse()),
            GroupElement::SE3(p) => GroupElement::SE3(p.inverse()),
            GroupElement::Rn(x) => GroupElement::Rn(-x),
        }
    }

    pub fn compose(&self, other: &GroupElement) -> Result<Self> {
        Ok(match (self, other) {
            (GroupElement::Circle(a), GroupElement::Circle(b)) => {
                GroupElement::Circle(CircleAngle::new(a.theta() + b.theta()))
            }
            (GroupElement::SO3(a), GroupElement::SO3(b)) => GroupElement::SO3(a.compose(b)),
            (GroupElement::SE3(a), GroupElement::SE3(b)) => GroupElement::SE3(a.compose(b)),
            (GroupElement::Rn(a), GroupElement::Rn(b)) if a.len() == b.len() => GroupElement::Rn(a + b),
            _ => return Err(Error::Dimension("group elements of different groups")),
        })
    }
}

/// Body (left-trivialized) or spatial (right-trivialized) velocity.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chirality {
    Left,
    Right,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AlgebraValue {
    Scalar(f64),
    So3(Vec3),
    /// (angular, linear)
    Se3(Vec3, Vec3),
    Rn(DVector<f64>),
}

/// Lie algebra element together with its trivialization.
#[derive(Debug, Clone, PartialEq)]
pub struct AlgebraElement {
    value: AlgebraValue,
    chirality: Chirality,
}

impl AlgebraElement {
    pub fn new(value: AlgebraValue, chirality: Chirality) -> Self {
        AlgebraElement { value, chirality }
    }

    pub fn so3(v: Vec3, chirality: Chirality) -> Self {
        Self::new(AlgebraValue::So3(v), chirality)
    }

    pub fn value(&self) -> &AlgebraValue {
        &self.value
    }

    pub fn chirality(&self) -> Chirality {
        self.chirality
    }

    pub fn same_chirality(&self, other: &AlgebraElement) -> Result<()> {
        if self.chirality != other.chirality {
            return Err(Error::Chirality(self.chirality, other.chirality));
        }
        Ok(())
    }

    pub fn add(&self, other: &AlgebraElement) -> Result<Self> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &AlgebraElement) -> Result<Self> {
        self.zip(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        let value = match &self.value {
            AlgebraValue::Scalar(a) => AlgebraValue::Scalar(s * a),
            AlgebraValue::So3(a) => AlgebraValue::So3(s * a),
            AlgebraValue::Se3(w, v) => AlgebraValue::Se3(s * w, s * v),
            AlgebraValue::Rn(a) => AlgebraValue::Rn(s * a),
        };
        Self::new(value, self.chirality)
    }

    fn zip(&self, other: &AlgebraElement, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.same_chirality(other)?;
        let map3 = |a: &Vec3, b: &Vec3| Vec3::new(f(a.x, b.x), f(a.y, b.y), f(a.z, b.z));
        let value = match (&self.value, &other.value) {
            (AlgebraValue::Scalar(a), AlgebraValue::Scalar(b)) => AlgebraValue::Scalar(f(*a, *b)),
            (AlgebraValue::So3(a), AlgebraValue::So3(b)) => AlgebraValue::So3(map3(a, b)),
            (AlgebraValue::Se3(w1, v1), AlgebraValue::Se3(w2, v2)) => AlgebraValue::Se3(map3(w1, w2), map3(v1, v2)),
            (AlgebraValue::Rn(a), AlgebraValue::Rn(b)) if a.len() == b.len() => AlgebraValue::Rn(a.zip_map(b, &f)),
            _ => return Err(Error::Dimension("algebra elements of different algebras")),
        };
        Ok(Self::new(value, self.chirality))
    }
}

/// `Ad_g eta = g eta g^-1`. The chirality tag is carried through unchanged;
/// call sites decide which frame the result lives in.
pub fn adjoint_ad(g: &GroupElement, eta: &AlgebraElement) -> Result<AlgebraElement> {
    let value = match (g, eta.value()) {
        (GroupElement::Circle(_), AlgebraValue::Scalar(a)) => AlgebraValue::Scalar(*a),
        (GroupElement::SO3(r), AlgebraValue::So3(w)) => AlgebraValue::So3(r.act(w)),
        (GroupElement::SE3(p), AlgebraValue::Se3(w, v)) => {
            let rw = p.r.act(w);
            AlgebraValue::Se3(rw, p.r.act(v) + p.o.cross(&rw))
        }
        (GroupElement::Rn(x), AlgebraValue::Rn(a)) if x.len() == a.len() => AlgebraValue::Rn(a.clone()),
        _ => return Err(Error::Dimension("Ad: group and algebra do not match")),
    };
    Ok(AlgebraElement::new(value, eta.chirality()))
}

/// `ad_xi eta = [xi, eta]`: cross product on so(3), zero on abelian algebras.
pub fn ad_bracket(xi: &AlgebraElement, eta: &AlgebraElement) -> Result<AlgebraElement> {
    xi.same_chirality(eta)?;
    let value = match (xi.value(), eta.value()) {
        (AlgebraValue::Scalar(_), AlgebraValue::Scalar(_)) => AlgebraValue::Scalar(0.0),
        (AlgebraValue::So3(a), AlgebraValue::So3(b)) => AlgebraValue::So3(a.cross(b)),
        (AlgebraValue::Se3(w1, v1), AlgebraValue::Se3(w2, v2)) => {
            AlgebraValue::Se3(w1.cross(w2), w1.cross(v2) - w2.cross(v1))
        }
        (AlgebraValue::Rn(a), AlgebraValue::Rn(b)) if a.len() == b.len() => AlgebraValue::Rn(DVector::zeros(a.len())),
        _ => return Err(Error::Dimension("ad: algebra elements do not match")),
    };
    Ok(AlgebraElement::new(value, xi.chirality()))
}
