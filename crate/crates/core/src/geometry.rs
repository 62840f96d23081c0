//! Metric machinery: invariant connections on Lie algebras, the circle
//! connection, Koszul finite-difference oracles and constraint projections.
//!
//! Conventions on so(3), with `I` the inertia matrix and `ad*_xi m = m x xi`:
//!
//! ```text
//! I nabla_xi eta = I d eta(xi) + 1/2 ( s_ad I(xi x eta) + s_co (I eta x xi + I xi x eta) )
//! ```
//!
//! | metric | velocity | s_ad | s_co |
//! |--------|----------|------|------|
//! | left   | body     | +1   | -1   |
//! | left   | spatial  | -1   | -1   |
//! | right  | spatial  | -1   | +1   |
//! | right  | body     | +1   | +1   |
//!
//! For a bi-invariant metric the co-adjoint part vanishes identically and only
//! `+-1/2 ad` survives. The directional derivative `d eta(xi)` is always
//! supplied by the caller.

use crate::error::{Error, Result};
use crate::lie::{AlgebraElement, AlgebraValue, Chirality, Mat3, Rotation, Vec3};
use nalgebra::{DMatrix, DVector};
use std::fmt;
use std::sync::Arc;

/// Tolerance for algebraic identities.
pub const ALGEBRA_TOL: f64 = 1e-9;
/// Tolerance for finite-difference comparisons.
pub const FD_TOL: f64 = 1e-6;
/// Tolerance for constraint violation.
pub const CONSTRAINT_TOL: f64 = 1e-6;
/// Tolerance for projector identities.
pub const PROJECTOR_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Invariance {
    Left,
    Right,
    Bi,
    None,
}

/// Configuration dependent scalar inertia on the circle with its derivative.
#[derive(Clone)]
pub struct CircleMetric {
    value: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    derivative: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
}

impl CircleMetric {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        derivative: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        CircleMetric { value: Arc::new(value), derivative: Arc::new(derivative) }
    }

    pub fn constant(i: f64) -> Self {
        Self::new(move |_| i, |_| 0.0)
    }

    pub fn value(&self, theta: f64) -> f64 {
        (self.value)(theta)
    }

    pub fn derivative(&self, theta: f64) -> f64 {
        (self.derivative)(theta)
    }

    /// `Gamma^1_11 = (1/(2 I)) dI/dtheta`.
    pub fn christoffel(&self, theta: f64) -> f64 {
        self.derivative(theta) / (2.0 * self.value(theta))
    }
}

impl fmt::Debug for CircleMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("CircleMetric")
    }
}

#[derive(Debug, Clone)]
pub enum InertiaMetric {
    /// Symmetric positive semi-definite matrix with an invariance class.
    Constant {
        m: Mat3,
        invariance: Invariance,
    },
    Circle(CircleMetric),
}

impl InertiaMetric {
    pub fn constant(m: Mat3, invariance: Invariance) -> Result<Self> {
        if (m - m.transpose()).norm() > ALGEBRA_TOL {
            return Err(Error::Param("inertia matrix is not symmetric".into()));
        }
        let min_eig = m.symmetric_eigenvalues().min();
        if min_eig < -ALGEBRA_TOL {
            return Err(Error::Param(format!("inertia matrix has eigenvalue {min_eig:.3e}")));
        }
        Ok(InertiaMetric::Constant { m, invariance })
    }

    pub fn left(m: Mat3) -> Result<Self> {
        Self::constant(m, Invariance::Left)
    }

    pub fn matrix(&self) -> Result<&Mat3> {
        match self {
            InertiaMetric::Constant { m, .. } => Ok(m),
            InertiaMetric::Circle(_) => Err(Error::MetricKind("expected a constant matrix")),
        }
    }
}

/// Sign pair `(s_ad, s_co)` for the invariant connection.
pub fn connection_signs(invariance: Invariance, chirality: Chirality) -> Result<(f64, f64)> {
    match (invariance, chirality) {
        (Invariance::Left, Chirality::Left) => Ok((1.0, -1.0)),
        (Invariance::Left, Chirality::Right) => Ok((-1.0, -1.0)),
        (Invariance::Right, Chirality::Right) => Ok((-1.0, 1.0)),
        (Invariance::Right, Chirality::Left) => Ok((1.0, 1.0)),
        (Invariance::Bi, Chirality::Left) => Ok((1.0, 0.0)),
        (Invariance::Bi, Chirality::Right) => Ok((-1.0, 0.0)),
        (Invariance::None, _) => Err(Error::Invariance("invariance = none")),
    }
}

/// Quadratic part of `I nabla_xi eta` on so(3) (everything except `I d eta(xi)`).
pub fn so3_connection_term(i: &Mat3, signs: (f64, f64), xi: &Vec3, eta: &Vec3) -> Vec3 {
    let (s_ad, s_co) = signs;
    let mut out = s_ad * (i * xi.cross(eta));
    if s_co != 0.0 {
        out += s_co * ((i * eta).cross(xi) + (i * xi).cross(eta));
    }
    0.5 * out
}

/// `I nabla_xi eta` on so(3) as a covector.
pub fn so3_lower_connection(i: &Mat3, signs: (f64, f64), xi: &Vec3, eta: &Vec3, d_eta_xi: &Vec3) -> Vec3 {
    i * d_eta_xi + so3_connection_term(i, signs, xi, eta)
}

/// `ad*_xi m = m x xi` on so(3).
pub fn ad_star_so3(xi: &Vec3, m: &Vec3) -> Vec3 {
    m.cross(xi)
}

/// Covariant derivative `nabla_xi eta` for an invariant metric.
pub fn connection_invariant(
    metric: &InertiaMetric,
    xi: &AlgebraElement,
    eta: &AlgebraElement,
    d_eta_xi: &AlgebraElement,
) -> Result<AlgebraElement> {
    xi.same_chirality(eta)?;
    xi.same_chirality(d_eta_xi)?;
    let (m, invariance) = match metric {
        InertiaMetric::Constant { m, invariance } => (m, *invariance),
        InertiaMetric::Circle(_) => return Err(Error::MetricKind("use circle_covariant")),
    };
    let signs = connection_signs(invariance, xi.chirality())?;
    let value = match (xi.value(), eta.value(), d_eta_xi.value()) {
        (AlgebraValue::So3(x), AlgebraValue::So3(y), AlgebraValue::So3(d)) => {
            let corr = so3_connection_term(m, signs, x, y);
            let inv = m.try_inverse().ok_or(Error::Singular { what: "inertia", value: m.determinant() })?;
            AlgebraValue::So3(d + inv * corr)
        }
        // abelian algebras: ad and ad* vanish
        (AlgebraValue::Scalar(_), AlgebraValue::Scalar(_), AlgebraValue::Scalar(d)) => AlgebraValue::Scalar(*d),
        (AlgebraValue::Rn(_), AlgebraValue::Rn(_), AlgebraValue::Rn(d)) => AlgebraValue::Rn(d.clone()),
        _ => return Err(Error::Dimension("connection arguments do not match")),
    };
    Ok(AlgebraElement::new(value, xi.chirality()))
}

/// `nabla_zeta eta = d eta(zeta) + Gamma(theta) zeta eta` on the circle.
pub fn circle_covariant(metric: &InertiaMetric, theta: f64, zeta: f64, eta: f64, d_eta_zeta: f64) -> Result<f64> {
    match metric {
        InertiaMetric::Circle(c) => Ok(d_eta_zeta + c.christoffel(theta) * zeta * eta),
        _ => Err(Error::MetricKind("expected a circle scalar field")),
    }
}

/// Richardson-extrapolated central difference of `f` at zero.
pub fn richardson_derivative(f: impl Fn(f64) -> f64, h: f64) -> f64 {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (4.0 * d(0.5 * h) - d(h)) / 3.0
}

type So3Field<'a> = &'a dyn Fn(&Rotation) -> Vec3;

/// Moves `r` along the left-invariant flow of body velocity `x` for time `s`.
fn flow(r: &Rotation, x: &Vec3, s: f64) -> Rotation {
    r.compose(&crate::lie::exp_so3(&(s * x)))
}

/// Finite-difference Koszul evaluation of `<I nabla_X Y, Z>` on SO(3).
///
/// Fields and the metric are given in body components as functions of `R`.
/// Directional derivatives are taken along the flows of the fields and Lie
/// brackets are formed in the ambient matrix space, so no algebra structure
/// constants enter the computation.
pub fn koszul_numeric_so3(
    metric: &dyn Fn(&Rotation) -> Mat3,
    x: So3Field,
    y: So3Field,
    z: So3Field,
    base: &Rotation,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Step(step));
    }
    let g = |r: &Rotation, a: So3Field, b: So3Field| a(r).dot(&(metric(r) * b(r)));
    let along = |f: &dyn Fn(&Rotation) -> f64, v: So3Field| {
        let dir = v(base);
        richardson_derivative(|s| f(&flow(base, &dir, s)), step)
    };
    // ambient vector field U(R) = R hat(u(R))
    let ambient = |u: So3Field, r: &Rotation| r.matrix() * crate::lie::hat(&u(r));
    let bracket = |a: So3Field, b: So3Field| -> Vec3 {
        let da = a(base);
        let db = b(base);
        let mut db_a = Mat3::zeros();
        let mut da_b = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                db_a[(i, j)] = richardson_derivative(|s| ambient(b, &flow(base, &da, s))[(i, j)], step);
                da_b[(i, j)] = richardson_derivative(|s| ambient(a, &flow(base, &db, s))[(i, j)], step);
            }
        }
        crate::lie::vee_skew_part(&(base.matrix().transpose() * (db_a - da_b)))
    };
    let ib = metric(base);
    let inner = |u: &Vec3, v: &Vec3| u.dot(&(ib * v));
    let t1 = along(&|r| g(r, y, z), x);
    let t2 = along(&|r| g(r, x, z), y);
    let t3 = along(&|r| g(r, x, y), z);
    let t4 = inner(&bracket(x, y), &z(base));
    let t5 = inner(&bracket(x, z), &y(base));
    let t6 = inner(&bracket(y, z), &x(base));
    Ok(0.5 * (t1 + t2 - t3 + t4 - t5 - t6))
}

type RnField<'a> = &'a dyn Fn(&DVector<f64>) -> DVector<f64>;

/// Finite-difference Koszul evaluation of `<I nabla_X Y, Z>` on R^n (and the
/// circle as n = 1) with a position dependent metric.
pub fn koszul_numeric_rn(
    metric: &dyn Fn(&DVector<f64>) -> DMatrix<f64>,
    x: RnField,
    y: RnField,
    z: RnField,
    base: &DVector<f64>,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 {
        return Err(Error::Step(step));
    }
    let g = |p: &DVector<f64>, a: RnField, b: RnField| a(p).dot(&(metric(p) * b(p)));
    let deriv =
        |f: &dyn Fn(&DVector<f64>) -> f64, dir: &DVector<f64>| richardson_derivative(|s| f(&(base + s * dir)), step);
    let bracket = |a: RnField, b: RnField| -> DVector<f64> {
        let (da, db) = (a(base), b(base));
        DVector::from_fn(base.len(), |k, _| deriv(&|p| b(p)[k], &da) - deriv(&|p| a(p)[k], &db))
    };
    let mb = metric(base);
    let inner = |u: &DVector<f64>, v: &DVector<f64>| u.dot(&(&mb * v));
    let t1 = deriv(&|p| g(p, y, z), &x(base));
    let t2 = deriv(&|p| g(p, x, z), &y(base));
    let t3 = deriv(&|p| g(p, x, y), &z(base));
    let t4 = inner(&bracket(x, y), &z(base));
    let t5 = inner(&bracket(x, z), &y(base));
    let t6 = inner(&bracket(y, z), &x(base));
    Ok(0.5 * (t1 + t2 - t3 + t4 - t5 - t6))
}

/// Complementary projector pair on covectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintDistribution {
    p_dstar: Mat3,
    p_dstar_c: Mat3,
    rank: usize,
}

impl ConstraintDistribution {
    pub fn new(p_dstar: Mat3, p_dstar_c: Mat3, rank: usize) -> Result<Self> {
        let sum = (p_dstar + p_dstar_c - Mat3::identity()).norm();
        let idem = (p_dstar * p_dstar - p_dstar).norm().max((p_dstar_c * p_dstar_c - p_dstar_c).norm());
        if sum > PROJECTOR_TOL || idem > PROJECTOR_TOL {
            return Err(Error::Param(format!("projectors invalid (sum {sum:.2e}, idem {idem:.2e})")));
        }
        if (p_dstar.trace() - rank as f64).abs() > 1e-9 {
            return Err(Error::Param("projector rank mismatch".into()));
        }
        Ok(ConstraintDistribution { p_dstar, p_dstar_c, rank })
    }

    /// No rotation about the body third axis: `P_Dc = e3 e3^T`, `P_D = -hat(e3)^2`.
    pub fn spherical_pendulum() -> Self {
        let e3 = crate::lie::e3();
        let pc = e3 * e3.transpose();
        let h = crate::lie::hat(&e3);
        ConstraintDistribution::new(-(h * h), pc, 2).expect("valid projectors")
    }

    pub fn full() -> Self {
        ConstraintDistribution::new(Mat3::identity(), Mat3::zeros(), 3).expect("valid projectors")
    }

    pub fn p_dstar(&self) -> &Mat3 {
        &self.p_dstar
    }

    pub fn p_dstar_c(&self) -> &Mat3 {
        &self.p_dstar_c
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn violation(&self, i: &Mat3, velocity: &Vec3) -> f64 {
        (self.p_dstar_c * (i * velocity)).norm()
    }

    fn check(&self, i: &Mat3, velocity: &Vec3) -> Result<()> {
        let v = self.violation(i, velocity);
        if v > CONSTRAINT_TOL {
            return Err(Error::Constraint(v));
        }
        Ok(())
    }
}

/// `(nabla_xi P)(I w)` for a projector with constant body components on a
/// left-invariant metric: `I nabla_xi (I^-1 P I w) - P (I nabla_xi w)`, both
/// with frozen components.
pub fn nabla_constant_projector(p: &Mat3, i: &Mat3, signs: (f64, f64), xi: &Vec3, w: &Vec3) -> Result<Vec3> {
    let inv = i.try_inverse().ok_or(Error::Singular { what: "inertia", value: i.determinant() })?;
    let pw = inv * (p * (i * w));
    Ok(so3_connection_term(i, signs, xi, &pw) - p * so3_connection_term(i, signs, xi, w))
}

/// Constraint force `-(nabla P_Dc)(I v) - P_Dc(gamma)`.
pub fn constraint_force(
    dist: &ConstraintDistribution,
    metric: &InertiaMetric,
    velocity: &Vec3,
    gamma: &Vec3,
    nabla_p_term: &Vec3,
) -> Result<Vec3> {
    dist.check(metric.matrix()?, velocity)?;
    Ok(-nabla_p_term - dist.p_dstar_c * gamma)
}

/// Admissible acceleration of the body velocity for
/// `I nabla_v v = -(nabla_v P_Dc)(I v) + P_D(gamma)` on a left-invariant metric.
pub fn constrained_rhs(
    dist: &ConstraintDistribution,
    metric: &InertiaMetric,
    velocity: &Vec3,
    gamma: &Vec3,
) -> Result<Vec3> {
    let (i, invariance) = match metric {
        InertiaMetric::Constant { m, invariance } => (m, *invariance),
        _ => return Err(Error::MetricKind("expected a constant matrix")),
    };
    dist.check(i, velocity)?;
    let signs = connection_signs(invariance, Chirality::Left)?;
    let nab = nabla_constant_projector(&dist.p_dstar_c, i, signs, velocity, velocity)?;
    let rhs = -nab + dist.p_dstar * gamma - so3_connection_term(i, signs, velocity, velocity);
    let inv = i.try_inverse().ok_or(Error::Singular { what: "inertia", value: i.determinant() })?;
    Ok(inv * rhs)
}
