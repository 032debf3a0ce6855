//! Rotation and rigid-pose algebra on SO(3) / SE(3).
//!
//! Rotations are stored as 3×3 matrices. `Rotation` maps vectors expressed in
//! a body frame into the reference frame, so `Ṙ = S(ω) R` with `ω` expressed
//! in the reference frame.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LieError {
    #[error("matrix is not skew-symmetric (|S + Sᵀ| = {0:e})")]
    NotSkewSymmetric(f64),
    #[error("matrix is not a rotation (|RᵀR - I| = {orthonormality:e}, det = {det})")]
    NotRotation { orthonormality: f64, det: f64 },
}

/// Tolerance for the rotation invariants (`RᵀR = I`, `det R = 1`).
pub fn rotation_tolerance<T: Real>() -> T {
    T::lit(1e-9).max(T::default_epsilon() * T::lit(1e3))
}

fn skew_tolerance<T: Real>() -> T {
    T::lit(1e-8).max(T::default_epsilon() * T::lit(1e2))
}

/// Skew-symmetric matrix of `v`, so that `skew(v) * w == v.cross(w)`.
pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    let z = T::zero();
    Matrix3::new(z, -v.z, v.y, v.z, z, -v.x, -v.y, v.x, z)
}

/// Inverse of [`skew`].
pub fn vee<T: Real>(s: &Matrix3<T>) -> Result<Vector3<T>, LieError> {
    let asym = (s + s.transpose()).norm();
    if !(asym < skew_tolerance::<T>()) {
        return Err(LieError::NotSkewSymmetric(asym.as_f64()));
    }
    Ok(vee_unchecked(s))
}

/// Vee map that averages the two off-diagonal entries without checking symmetry.
pub(crate) fn vee_unchecked<T: Real>(s: &Matrix3<T>) -> Vector3<T> {
    let half = T::lit(0.5);
    Vector3::new(
        (s[(2, 1)] - s[(1, 2)]) * half,
        (s[(0, 2)] - s[(2, 0)]) * half,
        (s[(1, 0)] - s[(0, 1)]) * half,
    )
}

/// `skew(A) = ½(A − Aᵀ)`, the skew-symmetric part of a square matrix.
pub fn skew_part<T: Real>(a: &Matrix3<T>) -> Matrix3<T> {
    (a - a.transpose()) * T::lit(0.5)
}

/// `skew(A)^∨`, i.e. the vector of the skew-symmetric part of `A`.
pub fn skew_vee<T: Real>(a: &Matrix3<T>) -> Vector3<T> {
    vee_unchecked(a)
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation<T: Real> {
    m: Matrix3<T>,
}

impl<T: Real> Default for Rotation<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Rotation<T> {
    pub fn identity() -> Self {
        Self {
            m: Matrix3::identity(),
        }
    }

    /// Validates the rotation invariants before wrapping `m`.
    pub fn from_matrix(m: Matrix3<T>) -> Result<Self, LieError> {
        let r = Self { m };
        let ortho = r.orthonormality_error();
        let det = m.determinant();
        let tol = rotation_tolerance::<T>();
        if ortho > tol || (det - T::one()).abs() > tol || !det.is_finite() {
            return Err(LieError::NotRotation {
                orthonormality: ortho.as_f64(),
                det: det.as_f64(),
            });
        }
        Ok(r)
    }

    /// Wraps `m` without checking; callers guarantee `m ∈ SO(3)`.
    pub fn from_matrix_unchecked(m: Matrix3<T>) -> Self {
        Self { m }
    }

    /// Rotation of `angle` radians about the unit vector `axis`.
    pub fn from_axis_angle(axis: &Vector3<T>, angle: T) -> Self {
        let n = axis.norm();
        if n <= T::zero() {
            return Self::identity();
        }
        Self::exp(&(axis * (angle / n)))
    }

    /// Exponential map of a rotation vector (Rodrigues' formula).
    pub fn exp(phi: &Vector3<T>) -> Self {
        let theta2 = phi.norm_squared();
        let k = skew(phi);
        let (a, b) = if theta2 < T::lit(1e-8) {
            // Taylor expansion of sinθ/θ and (1-cosθ)/θ².
            (
                T::one() - theta2 / T::lit(6.0) + theta2 * theta2 / T::lit(120.0),
                T::lit(0.5) - theta2 / T::lit(24.0) + theta2 * theta2 / T::lit(720.0),
            )
        } else {
            let theta = theta2.sqrt();
            (theta.sin() / theta, (T::one() - theta.cos()) / theta2)
        };
        Self {
            m: Matrix3::identity() + k * a + k * k * b,
        }
    }

    /// Rotation vector `φ` with `exp(φ) = self` and `|φ| ≤ π`.
    pub fn log(&self) -> Vector3<T> {
        let m = &self.m;
        let s = vee_unchecked(m);
        let sin_theta = s.norm();
        let cos_theta = ((m.trace() - T::one()) * T::lit(0.5))
            .max(-T::one())
            .min(T::one());
        let theta = sin_theta.atan2(cos_theta);
        if theta < T::lit(1e-4) {
            return s * (T::one() + theta * theta / T::lit(6.0));
        }
        if T::pi() - theta > T::lit(1e-3) {
            return s * (theta / sin_theta);
        }
        // Near π: (R + Rᵀ)/2 − cos θ·I = (1 − cos θ) aaᵀ, read the axis off its largest column.
        let b = (m + m.transpose()) * T::lit(0.5) - Matrix3::identity() * cos_theta;
        let mut col = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(col, col)] {
                col = i;
            }
        }
        let mut axis: Vector3<T> = b.column(col).into_owned();
        axis /= axis.norm();
        if axis.dot(&s) < T::zero() {
            axis = -axis;
        }
        axis * theta
    }

    pub fn matrix(&self) -> &Matrix3<T> {
        &self.m
    }

    pub fn into_matrix(self) -> Matrix3<T> {
        self.m
    }

    pub fn transpose(&self) -> Self {
        Self {
            m: self.m.transpose(),
        }
    }

    pub fn inverse(&self) -> Self {
        self.transpose()
    }

    pub fn compose(&self, other: &Self) -> Self {
        Self { m: self.m * other.m }
    }

    pub fn apply(&self, v: &Vector3<T>) -> Vector3<T> {
        self.m * v
    }

    /// Frobenius norm of `RᵀR − I`.
    pub fn orthonormality_error(&self) -> T {
        (self.m.transpose() * self.m - Matrix3::identity()).norm()
    }

    /// Projects back onto SO(3) with Newton iterations of the polar decomposition,
    /// falling back to Gram–Schmidt when far from orthonormal.
    pub fn reorthonormalize(&self) -> Self {
        let tol = rotation_tolerance::<T>();
        if self.orthonormality_error() <= tol * T::lit(0.01) {
            return *self;
        }
        let mut m = self.m;
        if (m.transpose() * m - Matrix3::identity()).norm() > T::lit(0.5) {
            m = gram_schmidt(&m);
        }
        for _ in 0..8 {
            let e = m.transpose() * m;
            if (e - Matrix3::identity()).norm() <= tol * T::lit(0.01) {
                break;
            }
            m = m * (Matrix3::identity() * T::lit(3.0) - e) * T::lit(0.5);
        }
        Self { m }
    }
}

fn gram_schmidt<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let x: Vector3<T> = m.column(0).normalize();
    let y0: Vector3<T> = m.column(1).into_owned();
    let y = (y0 - x * x.dot(&y0)).normalize();
    let z = x.cross(&y);
    Matrix3::from_columns(&[x, y, z])
}

impl<T: Real> std::ops::Mul for Rotation<T> {
    type Output = Rotation<T>;
    fn mul(self, rhs: Self) -> Self {
        self.compose(&rhs)
    }
}

impl<T: Real> std::ops::Mul<Vector3<T>> for Rotation<T> {
    type Output = Vector3<T>;
    fn mul(self, rhs: Vector3<T>) -> Vector3<T> {
        self.m * rhs
    }
}

/// Integrates `Ṙ = S(ω) R` over `dt` with constant `ω`: returns `exp(S(ω dt))`.
pub fn rotation_exp<T: Real>(omega: &Vector3<T>, dt: T) -> Rotation<T> {
    Rotation::exp(&(omega * dt)).reorthonormalize()
}

/// Frobenius norm of `R R_dᵀ − I`; lies in `[0, 2√2]`.
pub fn orientation_error_norm<T: Real>(r: &Rotation<T>, r_d: &Rotation<T>) -> T {
    (r.matrix() * r_d.matrix().transpose() - Matrix3::identity()).norm()
}

/// Rigid transform mapping coordinates in a child frame into its reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose<T: Real> {
    pub rotation: Rotation<T>,
    pub position: Vector3<T>,
}

impl<T: Real> Default for Pose<T> {
    fn default() -> Self {
        Self::identity()
    }
}

impl<T: Real> Pose<T> {
    pub fn new(rotation: Rotation<T>, position: Vector3<T>) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Rotation::identity(),
            position: Vector3::zeros(),
        }
    }

    pub fn from_translation(position: Vector3<T>) -> Self {
        Self {
            rotation: Rotation::identity(),
            position,
        }
    }

    /// `self * other`.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation.compose(&other.rotation),
            position: self.position + self.rotation.apply(&other.position),
        }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            position: -rt.apply(&self.position),
        }
    }

    pub fn transform_point(&self, p: &Vector3<T>) -> Vector3<T> {
        self.position + self.rotation.apply(p)
    }
}

/// Linear velocity of a frame origin and angular velocity, both in inertial coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist<T: Real> {
    pub linear: Vector3<T>,
    pub angular: Vector3<T>,
}

impl<T: Real> Default for Twist<T> {
    fn default() -> Self {
        Self::zero()
    }
}

impl<T: Real> Twist<T> {
    pub fn new(linear: Vector3<T>, angular: Vector3<T>) -> Self {
        Self { linear, angular }
    }

    pub fn zero() -> Self {
        Self {
            linear: Vector3::zeros(),
            angular: Vector3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.linear.iter().chain(self.angular.iter()).all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_vec(rng: &mut ChaCha8Rng, scale: f64) -> Vector3<f64> {
        Vector3::new(
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
            rng.random_range(-scale..scale),
        )
    }

    #[test]
    fn skew_examples() {
        assert_eq!(skew(&Vector3::<f64>::zeros()), Matrix3::zeros());
        let s = skew(&Vector3::new(1.0, 0.0, 0.0));
        assert_eq!(s, Matrix3::new(0.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0));
    }

    #[test]
    fn skew_matches_componentwise_cross_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 3.0);
            let w = random_vec(&mut rng, 3.0);
            let cross = Vector3::new(
                v[1] * w[2] - v[2] * w[1],
                v[2] * w[0] - v[0] * w[2],
                v[0] * w[1] - v[1] * w[0],
            );
            assert!((skew(&v) * w - cross).norm() < 1e-14);
            assert_eq!(skew(&v).transpose(), -skew(&v));
        }
    }

    #[test]
    fn vee_examples() {
        assert_eq!(vee(&Matrix3::<f64>::zeros()).unwrap(), Vector3::zeros());
        let v = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&skew(&v)).unwrap(), v);
        let err = vee(&Matrix3::<f64>::identity()).unwrap_err();
        assert!(matches!(err, LieError::NotSkewSymmetric(_)));
    }

    #[test]
    fn vee_skew_round_trip_on_random_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let v = random_vec(&mut rng, 10.0);
            assert!((vee(&skew(&v)).unwrap() - v).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_exp_examples() {
        let r = rotation_exp(&Vector3::<f64>::zeros(), 0.01);
        assert_eq!(*r.matrix(), Matrix3::identity());

        let dt = 0.25;
        let r = rotation_exp(&Vector3::new(0.0, 0.0, PI / (2.0 * dt)), dt);
        let yaw90 = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((r.matrix() - yaw90).norm() < 1e-12);
    }

    fn rk4_rotation(omega: &Vector3<f64>, dt: f64, steps: usize) -> Matrix3<f64> {
        let s = skew(omega);
        let f = |r: &Matrix3<f64>| s * r;
        let h = dt / steps as f64;
        let mut r = Matrix3::identity();
        for _ in 0..steps {
            let k1 = f(&r);
            let k2 = f(&(r + k1 * (h / 2.0)));
            let k3 = f(&(r + k2 * (h / 2.0)));
            let k4 = f(&(r + k3 * h));
            r += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        }
        r
    }

    #[test]
    fn rotation_exp_matches_rk4_integration() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let dt = rng.random_range(0.001..0.05);
            let mut omega = random_vec(&mut rng, 1.0);
            let max_norm = rng.random_range(0.0..0.1);
            omega *= max_norm / (omega.norm() * dt);
            let expected = rk4_rotation(&omega, dt, 64);
            let got = rotation_exp(&omega, dt);
            assert!((got.matrix() - expected).norm() < 1e-8);
        }
    }

    #[test]
    fn orientation_error_norm_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let rd = Rotation::exp(&random_vec(&mut rng, 2.0));
            assert!(orientation_error_norm(&rd, &rd) < 1e-14);
            let axis = random_vec(&mut rng, 1.0).normalize();
            let flipped = Rotation::from_axis_angle(&axis, PI).compose(&rd);
            // trace(R Rdᵀ) = 1 + 2cos π = -1, so |R Rdᵀ - I|² = 6 - 2 tr = 8.
            assert!((orientation_error_norm(&flipped, &rd) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
            let r = Rotation::exp(&random_vec(&mut rng, 2.0));
            assert!(
                (orientation_error_norm(&r, &rd) - orientation_error_norm(&rd, &r)).abs() < 1e-14
            );
        }
    }

    #[test]
    fn log_inverts_exp_including_near_pi() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for i in 0..200 {
            let axis = random_vec(&mut rng, 1.0).normalize();
            let angle = match i % 4 {
                0 => rng.random_range(0.0..1e-5),
                1 => PI - rng.random_range(0.0..1e-4),
                _ => rng.random_range(0.0..PI),
            };
            let r = Rotation::from_axis_angle(&axis, angle);
            let back = Rotation::exp(&r.log());
            assert!((back.matrix() - r.matrix()).norm() < 1e-7, "angle {angle}");
        }
    }

    #[test]
    fn from_matrix_rejects_non_rotations() {
        assert!(Rotation::from_matrix(Matrix3::<f64>::identity() * 2.0).is_err());
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(Rotation::from_matrix(reflection).is_err());
        assert!(Rotation::from_matrix(Matrix3::<f64>::identity()).is_ok());
    }

    #[test]
    fn reorthonormalize_restores_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let r = Rotation::exp(&random_vec(&mut rng, 3.0));
            let noise = Matrix3::from_fn(|_, _| rng.random_range(-1e-4..1e-4));
            let fixed = Rotation::from_matrix_unchecked(r.matrix() + noise).reorthonormalize();
            assert!(fixed.orthonormality_error() < 1e-12);
            assert!((fixed.matrix().determinant() - 1.0).abs() < 1e-12);
            assert!((fixed.matrix() - r.matrix()).norm() < 1e-3);
        }
    }

    #[test]
    fn single_precision_rotations_work() {
        let r = rotation_exp(&Vector3::new(0.0f32, 0.0, 1.0), 0.5);
        assert!(Rotation::from_matrix(*r.matrix()).is_ok());
        assert!(orientation_error_norm(&r, &r) < 1e-6);
    }

    #[test]
    fn pose_compose_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Pose::new(Rotation::exp(&random_vec(&mut rng, 2.0)), random_vec(&mut rng, 1.0));
        let id = a.compose(&a.inverse());
        assert!((id.position).norm() < 1e-14);
        assert!((id.rotation.matrix() - Matrix3::identity()).norm() < 1e-14);
        let p = random_vec(&mut rng, 1.0);
        assert!((a.inverse().transform_point(&a.transform_point(&p)) - p).norm() < 1e-14);
    }

    proptest! {
        #[test]
        fn rotation_exp_output_is_a_rotation(
            wx in -50.0f64..50.0, wy in -50.0f64..50.0, wz in -50.0f64..50.0, dt in 0.0f64..0.2
        ) {
            let r = rotation_exp(&Vector3::new(wx, wy, wz), dt);
            prop_assert!(r.orthonormality_error() <= 1e-9);
            prop_assert!((r.matrix().determinant() - 1.0).abs() <= 1e-9);
        }

        #[test]
        fn orientation_error_norm_is_bounded(
            a in proptest::array::uniform3(-4.0f64..4.0),
            b in proptest::array::uniform3(-4.0f64..4.0),
        ) {
            let r = Rotation::exp(&Vector3::from(a));
            let rd = Rotation::exp(&Vector3::from(b));
            let e = orientation_error_norm(&r, &rd);
            prop_assert!(e >= 0.0 && e <= 2.0 * 2f64.sqrt() + 1e-12);
        }
    }
}
