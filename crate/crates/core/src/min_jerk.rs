//! Minimum-jerk (quintic) interpolation with zero boundary velocity and acceleration.

use nalgebra::{SVector, Vector3};

use crate::lie::Rotation;
use crate::scalar::Real;

/// Normalized profile `s(σ) = 10σ³ − 15σ⁴ + 6σ⁵` and its first two σ-derivatives.
pub fn profile<T: Real>(sigma: T) -> (T, T, T) {
    let s = sigma.max(T::zero()).min(T::one());
    let s2 = s * s;
    let s3 = s2 * s;
    let value = s3 * (T::lit(10.0) - T::lit(15.0) * s + T::lit(6.0) * s2);
    let d1 = s2 * (T::lit(30.0) - T::lit(60.0) * s + T::lit(30.0) * s2);
    let d2 = s * (T::lit(60.0) - T::lit(180.0) * s + T::lit(120.0) * s2);
    (value, d1, d2)
}

/// Quintic segment from `start` to `end` over `[t0, t0 + duration]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinJerkSegment<T: Real, const N: usize> {
    pub start: SVector<T, N>,
    pub end: SVector<T, N>,
    pub duration: T,
    pub start_time: T,
}

/// Value, velocity and acceleration of a segment at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinJerkSample<T: Real, const N: usize> {
    pub value: SVector<T, N>,
    pub velocity: SVector<T, N>,
    pub acceleration: SVector<T, N>,
}

impl<T: Real, const N: usize> MinJerkSegment<T, N> {
    /// Panics if `duration` is not strictly positive.
    pub fn new(start: SVector<T, N>, end: SVector<T, N>, duration: T, start_time: T) -> Self {
        assert!(duration > T::zero(), "min-jerk duration must be positive");
        Self {
            start,
            end,
            duration,
            start_time,
        }
    }

    /// Holds `value` indefinitely.
    pub fn hold(value: SVector<T, N>, start_time: T) -> Self {
        Self::new(value, value, T::one(), start_time)
    }

    pub fn end_time(&self) -> T {
        self.start_time + self.duration
    }

    pub fn is_complete(&self, t: T) -> bool {
        t >= self.end_time()
    }

    /// Clamps outside `[t0, t0 + T]`.
    pub fn eval(&self, t: T) -> MinJerkSample<T, N> {
        let sigma = (t - self.start_time) / self.duration;
        let inside = sigma > T::zero() && sigma < T::one();
        let (s, ds, dds) = profile(sigma);
        let delta = self.end - self.start;
        let (ds, dds) = if inside { (ds, dds) } else { (T::zero(), T::zero()) };
        MinJerkSample {
            value: self.start + delta * s,
            velocity: delta * (ds / self.duration),
            acceleration: delta * (dds / (self.duration * self.duration)),
        }
    }
}

/// Orientation segment `R(σ) = R₀ exp(s(σ) log(R₀ᵀR₁))`, angular rates in the reference frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSegment<T: Real> {
    pub start: Rotation<T>,
    pub end: Rotation<T>,
    pub duration: T,
    pub start_time: T,
    axis_angle: Vector3<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationSample<T: Real> {
    pub rotation: Rotation<T>,
    pub angular_velocity: Vector3<T>,
    pub angular_acceleration: Vector3<T>,
}

impl<T: Real> RotationSegment<T> {
    pub fn new(start: Rotation<T>, end: Rotation<T>, duration: T, start_time: T) -> Self {
        assert!(duration > T::zero(), "min-jerk duration must be positive");
        let axis_angle = start.transpose().compose(&end).log();
        Self {
            start,
            end,
            duration,
            start_time,
            axis_angle,
        }
    }

    pub fn hold(r: Rotation<T>, start_time: T) -> Self {
        Self::new(r, r, T::one(), start_time)
    }

    pub fn eval(&self, t: T) -> RotationSample<T> {
        let sigma = (t - self.start_time) / self.duration;
        let inside = sigma > T::zero() && sigma < T::one();
        let (s, ds, dds) = profile(sigma);
        let (ds, dds) = if inside { (ds, dds) } else { (T::zero(), T::zero()) };
        // exp(sφ) leaves φ fixed, so the inertial rate is R₀ φ ṡ.
        let world_axis = self.start.apply(&self.axis_angle);
        let rotation = if sigma >= T::one() {
            self.end
        } else {
            self.start.compose(&Rotation::exp(&(self.axis_angle * s)))
        };
        RotationSample {
            rotation,
            angular_velocity: world_axis * (ds / self.duration),
            angular_acceleration: world_axis * (dds / (self.duration * self.duration)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lie::skew_vee;
    use nalgebra::{Vector1, Vector3};
    use proptest::prelude::*;

    #[test]
    fn boundary_conditions() {
        let seg = MinJerkSegment::new(Vector3::new(1.0, 2.0, 3.0), Vector3::new(-1.0, 0.0, 5.0), 2.0, 1.0);
        let a = seg.eval(1.0);
        assert_eq!(a.value, seg.start);
        assert_eq!(a.velocity, Vector3::zeros());
        assert_eq!(a.acceleration, Vector3::zeros());
        let b = seg.eval(3.0);
        assert_eq!(b.value, seg.end);
        assert_eq!(b.velocity, Vector3::zeros());
        assert_eq!(b.acceleration, Vector3::zeros());
        // Clamped outside the window.
        assert_eq!(seg.eval(-5.0).value, seg.start);
        assert_eq!(seg.eval(50.0).value, seg.end);
    }

    #[test]
    fn midpoint_is_the_average() {
        let seg = MinJerkSegment::new(Vector1::new(0.3f64), Vector1::new(1.7), 4.0, 0.0);
        assert!((seg.eval(2.0).value[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let seg = MinJerkSegment::new(Vector3::new(0.0, 1.0, -2.0), Vector3::new(0.5, -1.0, 3.0), 1.5, 0.2);
        let h = 1e-5;
        for k in 1..30 {
            let t = 0.2 + 1.5 * (k as f64) / 30.0;
            let v = (seg.eval(t + h).value - seg.eval(t - h).value) / (2.0 * h);
            let a = (seg.eval(t + h).velocity - seg.eval(t - h).velocity) / (2.0 * h);
            assert!((v - seg.eval(t).velocity).amax() < 1e-8);
            assert!((a - seg.eval(t).acceleration).amax() < 1e-6);
        }
    }

    #[test]
    fn rotation_segment_endpoints_and_rates() {
        let r0 = Rotation::exp(&Vector3::new(0.2, -0.1, 0.4));
        let r1 = Rotation::exp(&Vector3::new(-0.3, 0.5, 0.1));
        let seg = RotationSegment::new(r0, r1, 2.0, 1.0);
        assert!((seg.eval(1.0).rotation.matrix() - r0.matrix()).norm() < 1e-14);
        assert!((seg.eval(3.0).rotation.matrix() - r1.matrix()).norm() < 1e-14);
        let h = 1e-6;
        for k in 1..20 {
            let t = 1.0 + 2.0 * (k as f64) / 20.0;
            let rdot = (seg.eval(t + h).rotation.matrix() - seg.eval(t - h).rotation.matrix()) / (2.0 * h);
            let w = skew_vee(&(rdot * seg.eval(t).rotation.matrix().transpose()));
            assert!((w - seg.eval(t).angular_velocity).amax() < 1e-8);
            let dw = (seg.eval(t + h).angular_velocity - seg.eval(t - h).angular_velocity) / (2.0 * h);
            assert!((dw - seg.eval(t).angular_acceleration).amax() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn values_stay_between_endpoints(x0 in -10.0f64..10.0, x1 in -10.0f64..10.0, t in -1.0f64..3.0) {
            let seg = MinJerkSegment::new(Vector1::new(x0), Vector1::new(x1), 2.0, 0.0);
            let v = seg.eval(t).value[0];
            prop_assert!(v >= x0.min(x1) - 1e-12 && v <= x0.max(x1) + 1e-12);
        }
    }
}
