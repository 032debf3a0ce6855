//! Desired-acceleration generators: linear PD, rotational PD on SO(3), their
//! SE(3) stack and the postural law.

use nalgebra::{DVector, Matrix3, Vector3, Vector6};
use thiserror::Error;

use crate::lie::{skew, skew_vee, Pose, Rotation, Twist};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControlLawError {
    #[error("dimension mismatch in `{what}`: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

/// Diagonal position gains. `kp` in 1/s², `kd` in 1/s.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsLinear<T: Real> {
    pub kp: Vector3<T>,
    pub kd: Vector3<T>,
}

impl<T: Real> GainsLinear<T> {
    pub fn isotropic(kp: T, kd: T) -> Self {
        Self {
            kp: Vector3::repeat(kp),
            kd: Vector3::repeat(kd),
        }
    }

    pub fn is_positive(&self) -> bool {
        self.kp.iter().chain(self.kd.iter()).all(|&g| g > T::zero())
    }
}

/// Scalar orientation gains, both strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainsAngular<T: Real> {
    pub kp_w: T,
    pub kd_w: T,
}

/// Desired pose with its first and second time derivatives (inertial frame).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseReference<T: Real> {
    pub pose: Pose<T>,
    pub velocity: Twist<T>,
    pub acceleration: Twist<T>,
}

impl<T: Real> PoseReference<T> {
    /// Constant reference at `pose`.
    pub fn fixed(pose: Pose<T>) -> Self {
        Self {
            pose,
            velocity: Twist::zero(),
            acceleration: Twist::zero(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.velocity.is_finite()
            && self.acceleration.is_finite()
            && self.pose.position.iter().all(|x| x.is_finite())
            && self.pose.rotation.matrix().iter().all(|x| x.is_finite())
    }
}

/// `p̈* = p̈_d − K_P (p − p_d) − K_D (ṗ − ṗ_d)`.
pub fn linear_pd<T: Real>(p: &Vector3<T>, p_dot: &Vector3<T>, reference: &PoseReference<T>, gains: &GainsLinear<T>) -> Vector3<T> {
    reference.acceleration.linear
        - gains.kp.component_mul(&(p - reference.pose.position))
        - gains.kd.component_mul(&(p_dot - reference.velocity.linear))
}

/// Rotational PD on SO(3) with body-frame velocities `ᴮω = Rᵀω`, `ᴮω_d = R_dᵀω_d`.
///
/// With `E = R_dᵀR`:
/// `ᴮω̇* = −k_p k_d skew(E)^∨ − k_d (ᴮω − ᴮω_d) − k_p skew(E S(ᴮω) − S(ᴮω_d) E)^∨`,
/// returned as `ω̇* = R ᴮω̇* + ω̇_d`.
pub fn rotational_pd<T: Real>(r: &Rotation<T>, omega: &Vector3<T>, reference: &PoseReference<T>, gains: &GainsAngular<T>) -> Vector3<T> {
    let rm = r.matrix();
    let rd = reference.pose.rotation.matrix();
    let e: Matrix3<T> = rd.transpose() * rm;
    let body_w = rm.transpose() * omega;
    let body_wd = rd.transpose() * reference.velocity.angular;
    let (kp, kd) = (gains.kp_w, gains.kd_w);
    let body_acc = -skew_vee(&e) * (kp * kd)
        - (body_w - body_wd) * kd
        - skew_vee(&(e * skew(&body_w) - skew(&body_wd) * e)) * kp;
    rm * body_acc + reference.acceleration.angular
}

/// `(p̈*, ω̇*)`, linear part first.
pub fn se3_pd<T: Real>(
    pose: &Pose<T>,
    twist: &Twist<T>,
    reference: &PoseReference<T>,
    linear: &GainsLinear<T>,
    angular: &GainsAngular<T>,
) -> Vector6<T> {
    let a = linear_pd(&pose.position, &twist.linear, reference, linear);
    let w = rotational_pd(&pose.rotation, &twist.angular, reference, angular);
    Vector6::new(a.x, a.y, a.z, w.x, w.y, w.z)
}

/// `s̈* = −K_Ps (s − s_d) − K_Ds (ṡ − ṡ_d)` with diagonal gains.
pub fn postural_pd<T: Real>(
    s: &DVector<T>,
    s_dot: &DVector<T>,
    s_d: &DVector<T>,
    s_dot_d: &DVector<T>,
    kp: &DVector<T>,
    kd: &DVector<T>,
) -> Result<DVector<T>, ControlLawError> {
    let n = s.len();
    for (what, v) in [("s_dot", s_dot), ("s_d", s_d), ("s_dot_d", s_dot_d), ("kp", kp), ("kd", kd)] {
        if v.len() != n {
            return Err(ControlLawError::DimensionMismatch {
                what,
                expected: n,
                got: v.len(),
            });
        }
    }
    Ok(-(kp.component_mul(&(s - s_d))) - kd.component_mul(&(s_dot - s_dot_d)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::{orientation_error_norm, rotation_exp};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rvec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s))
    }

    fn random_reference(rng: &mut ChaCha8Rng) -> PoseReference<f64> {
        PoseReference {
            pose: Pose::new(Rotation::exp(&rvec(rng, 2.0)), rvec(rng, 1.0)),
            velocity: Twist::new(rvec(rng, 1.0), rvec(rng, 1.0)),
            acceleration: Twist::new(rvec(rng, 1.0), rvec(rng, 1.0)),
        }
    }

    #[test]
    fn linear_pd_substitution() {
        let mut reference = PoseReference::fixed(Pose::from_translation(Vector3::new(0.1, 0.2, 0.3)));
        reference.acceleration.linear = Vector3::new(1.0, -1.0, 0.5);
        reference.velocity.linear = Vector3::new(0.2, 0.0, 0.0);
        let g = GainsLinear::isotropic(7.0, 3.0);
        let at = linear_pd(&reference.pose.position, &reference.velocity.linear, &reference, &g);
        assert_eq!(at, reference.acceleration.linear);

        let reference = PoseReference::<f64>::fixed(Pose::identity());
        let g = GainsLinear::isotropic(1.0, 0.0);
        let a = linear_pd(&Vector3::new(1.0, 0.0, 0.0), &Vector3::zeros(), &reference, &g);
        assert_eq!(a, Vector3::new(-1.0, 0.0, 0.0));
        let a2 = linear_pd(&Vector3::new(2.0, 0.0, 0.0), &Vector3::zeros(), &reference, &g);
        assert_eq!(a2, a * 2.0);
    }

    #[test]
    fn linear_pd_closed_loop_converges() {
        // Scalar ODE ë = −4e − 4ė integrated with RK4.
        let reference = PoseReference::<f64>::fixed(Pose::identity());
        let g = GainsLinear::isotropic(4.0, 4.0);
        let f = |p: Vector3<f64>, v: Vector3<f64>| (v, linear_pd(&p, &v, &reference, &g));
        let (mut p, mut v) = (Vector3::new(1.0, 0.0, 0.0), Vector3::zeros());
        let dt = 1e-3;
        for _ in 0..5000 {
            let (k1p, k1v) = f(p, v);
            let (k2p, k2v) = f(p + k1p * dt / 2.0, v + k1v * dt / 2.0);
            let (k3p, k3v) = f(p + k2p * dt / 2.0, v + k2v * dt / 2.0);
            let (k4p, k4v) = f(p + k3p * dt, v + k3v * dt);
            p += (k1p + k2p * 2.0 + k3p * 2.0 + k4p) * dt / 6.0;
            v += (k1v + k2v * 2.0 + k3v * 2.0 + k4v) * dt / 6.0;
        }
        assert!(p.norm() < 1e-3, "{p}");
        // Closed form of the critically damped response: (1 + 2t)e^{−2t}.
        assert!((p.x - 11.0 * (-10.0f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn rotational_pd_equilibrium() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = GainsAngular { kp_w: 5.0, kd_w: 2.0 };
        for _ in 0..20 {
            let mut reference = random_reference(&mut rng);
            reference.acceleration.angular = Vector3::zeros();
            let w = rotational_pd(&reference.pose.rotation, &reference.velocity.angular, &reference, &g);
            assert!(w.norm() < 1e-13);
        }
    }

    #[test]
    fn rotational_pd_planar_expansion() {
        let g = GainsAngular { kp_w: 3.0, kd_w: 2.0 };
        let reference = PoseReference::<f64>::fixed(Pose::identity());
        for theta in [0.01, 0.1, 0.5] {
            let r = Rotation::from_axis_angle(&Vector3::z(), theta);
            let w = rotational_pd(&r, &Vector3::zeros(), &reference, &g);
            // skew(R_z(θ))^∨ = (0, 0, sin θ); other terms vanish at rest.
            assert!((w - Vector3::new(0.0, 0.0, -6.0 * theta.sin())).norm() < 1e-14);
        }
    }

    #[test]
    fn rotational_pd_is_left_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = GainsAngular { kp_w: 4.0, kd_w: 1.5 };
        for _ in 0..100 {
            let reference = random_reference(&mut rng);
            let r = Rotation::exp(&rvec(&mut rng, 2.0));
            let w = rvec(&mut rng, 2.0);
            let qrot = Rotation::exp(&rvec(&mut rng, 2.0));
            let qm = qrot.matrix();
            let mut moved = reference;
            moved.pose.rotation = qrot.compose(&reference.pose.rotation);
            moved.velocity.angular = qm * reference.velocity.angular;
            moved.acceleration.angular = qm * reference.acceleration.angular;
            let a = rotational_pd(&r, &w, &reference, &g);
            let b = rotational_pd(&qrot.compose(&r), &(qm * w), &moved, &g);
            assert!((b - qm * a).norm() < 1e-10);
        }
    }

    /// Integrates Ṙ = S(ω)R, ω̇ = ω̇* and returns the final orientation error.
    fn closed_loop_error(r0: Rotation<f64>, w0: Vector3<f64>, reference: &PoseReference<f64>, g: &GainsAngular<f64>, seconds: f64) -> f64 {
        let dt = 1e-3;
        let (mut r, mut w) = (r0, w0);
        let steps = (seconds / dt).round() as usize;
        for _ in 0..steps {
            // Midpoint step on SO(3) × R³.
            let a1 = rotational_pd(&r, &w, reference, g);
            let rh = rotation_exp(&w, dt / 2.0).compose(&r);
            let wh = w + a1 * (dt / 2.0);
            let a2 = rotational_pd(&rh, &wh, reference, g);
            r = rotation_exp(&wh, dt).compose(&r).reorthonormalize();
            w += a2 * dt;
        }
        orientation_error_norm(&r, &reference.pose.rotation)
    }

    #[test]
    fn rotational_pd_closed_loop_converges_from_random_orientations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = GainsAngular { kp_w: 3.0, kd_w: 3.0 };
        let mut tested = 0;
        while tested < 100 {
            let reference = PoseReference::fixed(Pose::new(Rotation::exp(&rvec(&mut rng, 2.0)), Vector3::zeros()));
            let r0 = Rotation::exp(&rvec(&mut rng, 2.0));
            if orientation_error_norm(&r0, &reference.pose.rotation) >= 2.8 {
                continue;
            }
            let err = closed_loop_error(r0, Vector3::zeros(), &reference, &g, 10.0);
            assert!(err < 1e-3, "did not converge: {err}");
            tested += 1;
        }
    }

    #[test]
    fn rotational_pd_tracks_a_spinning_reference() {
        // R_d(t) = exp(S(ω_d) t) R_d0 with constant inertial ω_d.
        let g = GainsAngular { kp_w: 3.0, kd_w: 3.0 };
        let wd = Vector3::new(0.2, -0.4, 0.3);
        let rd0 = Rotation::exp(&Vector3::new(0.5, 0.1, -0.3));
        let dt = 1e-3;
        let mut r = Rotation::identity();
        let mut w = Vector3::zeros();
        let mut t = 0.0;
        for _ in 0..10_000 {
            let reference = |t: f64| PoseReference {
                pose: Pose::new(rotation_exp(&wd, t).compose(&rd0), Vector3::zeros()),
                velocity: Twist::new(Vector3::zeros(), wd),
                acceleration: Twist::zero(),
            };
            let a1 = rotational_pd(&r, &w, &reference(t), &g);
            let rh = rotation_exp(&w, dt / 2.0).compose(&r);
            let wh = w + a1 * (dt / 2.0);
            let a2 = rotational_pd(&rh, &wh, &reference(t + dt / 2.0), &g);
            r = rotation_exp(&wh, dt).compose(&r).reorthonormalize();
            w += a2 * dt;
            t += dt;
        }
        let rd = rotation_exp(&wd, t).compose(&rd0);
        assert!(orientation_error_norm(&r, &rd) < 1e-3);
        assert!((w - wd).norm() < 1e-3);
    }

    #[test]
    fn se3_pd_stacks_and_decouples() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let gl = GainsLinear::isotropic(10.0, 4.0);
        let ga = GainsAngular { kp_w: 5.0, kd_w: 5.0 };
        for _ in 0..50 {
            let reference = random_reference(&mut rng);
            let pose = Pose::new(Rotation::exp(&rvec(&mut rng, 2.0)), rvec(&mut rng, 1.0));
            let twist = Twist::new(rvec(&mut rng, 1.0), rvec(&mut rng, 1.0));
            let a = se3_pd(&pose, &twist, &reference, &gl, &ga);
            let lin = linear_pd(&pose.position, &twist.linear, &reference, &gl);
            let ang = rotational_pd(&pose.rotation, &twist.angular, &reference, &ga);
            assert_eq!(a.fixed_rows::<3>(0).into_owned(), lin);
            assert_eq!(a.fixed_rows::<3>(3).into_owned(), ang);

            // Changing only the orientation leaves the linear part untouched.
            let rotated = Pose::new(Rotation::exp(&rvec(&mut rng, 2.0)), pose.position);
            let b = se3_pd(&rotated, &twist, &reference, &gl, &ga);
            assert_eq!(a.fixed_rows::<3>(0), b.fixed_rows::<3>(0));
            let shifted = Pose::new(pose.rotation, pose.position + rvec(&mut rng, 1.0));
            let c = se3_pd(&shifted, &twist, &reference, &gl, &ga);
            assert_eq!(a.fixed_rows::<3>(3), c.fixed_rows::<3>(3));

            let at = se3_pd(&reference.pose, &reference.velocity, &reference, &gl, &ga);
            let want = Vector6::new(
                reference.acceleration.linear.x,
                reference.acceleration.linear.y,
                reference.acceleration.linear.z,
                reference.acceleration.angular.x,
                reference.acceleration.angular.y,
                reference.acceleration.angular.z,
            );
            assert!((at - want).norm() < 1e-12);
        }
    }

    #[test]
    fn postural_pd_cases() {
        let n = 4;
        let e = DVector::from_vec(vec![0.1, -0.2, 0.3, 0.0]);
        let z = DVector::zeros(n);
        let ones = DVector::repeat(n, 1.0);
        let a = postural_pd(&e, &z, &z, &z, &ones, &z).unwrap();
        assert_eq!(a, -&e);
        let a = postural_pd(&e, &ones, &e, &ones, &ones, &ones).unwrap();
        assert_eq!(a, z);
        assert!(matches!(
            postural_pd(&e, &z, &DVector::zeros(3), &z, &ones, &ones),
            Err(ControlLawError::DimensionMismatch { expected: 4, got: 3, .. })
        ));
    }

    #[test]
    fn postural_pd_closed_loop_converges() {
        let kp = DVector::from_vec(vec![10.0, 25.0, 4.0]);
        let kd = DVector::from_vec(vec![2.0 * 10f64.sqrt(), 10.0, 4.0]);
        let sd = DVector::from_vec(vec![0.3, -0.5, 1.0]);
        let z = DVector::zeros(3);
        let (mut s, mut v) = (DVector::<f64>::zeros(3), DVector::<f64>::zeros(3));
        let dt = 1e-3;
        for _ in 0..10_000 {
            let a = postural_pd(&s, &v, &sd, &z, &kp, &kd).unwrap();
            v += a * dt;
            s += &v * dt;
        }
        assert!((s - sd).amax() < 1e-4);
    }

    #[test]
    fn works_in_single_precision() {
        let reference = PoseReference::<f32>::fixed(Pose::identity());
        let g = GainsAngular { kp_w: 2.0f32, kd_w: 2.0 };
        let r = Rotation::from_axis_angle(&Vector3::z(), 0.2f32);
        let w = rotational_pd(&r, &Vector3::zeros(), &reference, &g);
        assert!((w.z + 4.0 * 0.2f32.sin()).abs() < 1e-6);
    }
}
