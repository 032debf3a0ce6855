//! Walking-in-place state machine: task references, contact activations,
//! postural setpoints and per-state gain schedule.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DVector, Vector1, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::control_laws::{GainsAngular, GainsLinear, PoseReference};
use crate::lie::{Pose, Rotation, Twist};
use crate::min_jerk::{MinJerkSegment, RotationSegment};
use crate::model::RobotModel;
use crate::task_stack::{ContactState, Foot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Deserialize)]
pub enum GaitState {
    BalancingTwoFeet,
    TransitionToLeft,
    LeftSupport,
    PreparingRightTouchdown,
    RightTouchdown,
    TransitionToRight,
    RightSupport,
    PreparingLeftTouchdown,
    LeftTouchdown,
}

impl GaitState {
    pub const ALL: [GaitState; 9] = [
        GaitState::BalancingTwoFeet,
        GaitState::TransitionToLeft,
        GaitState::LeftSupport,
        GaitState::PreparingRightTouchdown,
        GaitState::RightTouchdown,
        GaitState::TransitionToRight,
        GaitState::RightSupport,
        GaitState::PreparingLeftTouchdown,
        GaitState::LeftTouchdown,
    ];

    pub fn next(self) -> GaitState {
        let i = Self::ALL.iter().position(|&s| s == self).expect("listed state");
        Self::ALL[(i + 1) % Self::ALL.len()]
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&s| s == self).expect("listed state")
    }

    pub fn name(self) -> &'static str {
        match self {
            GaitState::BalancingTwoFeet => "BalancingTwoFeet",
            GaitState::TransitionToLeft => "TransitionToLeft",
            GaitState::LeftSupport => "LeftSupport",
            GaitState::PreparingRightTouchdown => "PreparingRightTouchdown",
            GaitState::RightTouchdown => "RightTouchdown",
            GaitState::TransitionToRight => "TransitionToRight",
            GaitState::RightSupport => "RightSupport",
            GaitState::PreparingLeftTouchdown => "PreparingLeftTouchdown",
            GaitState::LeftTouchdown => "LeftTouchdown",
        }
    }

    /// Foot carrying the robot in single-support phases.
    pub fn stance(self) -> Option<Foot> {
        match self {
            GaitState::LeftSupport | GaitState::PreparingRightTouchdown | GaitState::RightTouchdown => Some(Foot::Left),
            GaitState::RightSupport | GaitState::PreparingLeftTouchdown | GaitState::LeftTouchdown => Some(Foot::Right),
            _ => None,
        }
    }
}

impl fmt::Display for GaitState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GaitError {
    #[error("gain schedule has no entry for state {0}")]
    MissingScheduleEntry(GaitState),
    #[error("gain schedule maps {state} to unknown gain set `{set}`")]
    UnknownGainSet { state: GaitState, set: String },
    #[error("invalid gait parameter `{name}`: {reason}")]
    InvalidParameter { name: String, reason: String },
}

fn default_swing_posture() -> BTreeMap<String, f64> {
    BTreeMap::from([("knee".to_string(), 0.4), ("hip_pitch".to_string(), -0.2), ("ankle_pitch".to_string(), -0.2)])
}

/// Timing and amplitude of the walking-in-place cycle.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaitParams {
    /// Swing-foot apex above its initial foothold, m.
    pub lift_height: f64,
    pub balance_duration: f64,
    pub transition_duration: f64,
    pub lift_duration: f64,
    pub hold_duration: f64,
    pub lower_duration: f64,
    /// Settling time in the touchdown state after the contact is re-activated.
    pub touchdown_duration: f64,
    /// Contact is re-activated anyway once this long has passed in a touchdown state.
    pub touchdown_timeout: f64,
    /// Sole height below which a lowered foot is considered touching, m.
    pub contact_epsilon: f64,
    /// Swing-leg postural offsets keyed by joint name without the `l_`/`r_` prefix, rad.
    pub swing_posture: BTreeMap<String, f64>,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            lift_height: 0.05,
            balance_duration: 2.0,
            transition_duration: 2.0,
            lift_duration: 1.5,
            hold_duration: 5.0,
            lower_duration: 2.0,
            touchdown_duration: 0.5,
            touchdown_timeout: 2.0,
            contact_epsilon: 1e-3,
            swing_posture: default_swing_posture(),
        }
    }
}

impl GaitParams {
    pub fn validate(&self) -> Result<(), GaitError> {
        let positive = [
            ("balance_duration", self.balance_duration),
            ("transition_duration", self.transition_duration),
            ("lift_duration", self.lift_duration),
            ("lower_duration", self.lower_duration),
            ("touchdown_duration", self.touchdown_duration),
            ("touchdown_timeout", self.touchdown_timeout),
            ("contact_epsilon", self.contact_epsilon),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(GaitError::InvalidParameter {
                    name: name.into(),
                    reason: format!("must be > 0, got {v}"),
                });
            }
        }
        for (name, v) in [("hold_duration", self.hold_duration), ("lift_height", self.lift_height)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(GaitError::InvalidParameter {
                    name: name.into(),
                    reason: format!("must be ≥ 0, got {v}"),
                });
            }
        }
        Ok(())
    }

    /// Nominal duration of one full cycle when touchdown happens on schedule.
    pub fn stride_period(&self) -> f64 {
        self.balance_duration
            + 2.0 * (self.transition_duration + self.lift_duration + self.hold_duration + self.lower_duration + self.touchdown_duration)
    }
}

/// Gains for one state, as written in the configuration file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainSetConfig {
    pub com_kp: [f64; 3],
    pub com_kd: [f64; 3],
    pub root_kp: f64,
    pub root_kd: f64,
    pub foot_kp: [f64; 3],
    pub foot_kd: [f64; 3],
    pub foot_rot_kp: f64,
    pub foot_rot_kd: f64,
    pub posture_kp: f64,
    pub posture_kd: f64,
}

/// Gains of every task for the current state.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskGains {
    pub com: GainsLinear<f64>,
    pub root: GainsAngular<f64>,
    pub foot_linear: GainsLinear<f64>,
    pub foot_angular: GainsAngular<f64>,
    pub posture_kp: DVector<f64>,
    pub posture_kd: DVector<f64>,
}

impl GainSetConfig {
    pub fn validate(&self, name: &str) -> Result<(), GaitError> {
        let all = self
            .com_kp
            .iter()
            .chain(&self.com_kd)
            .chain(&self.foot_kp)
            .chain(&self.foot_kd)
            .chain([&self.root_kp, &self.root_kd, &self.foot_rot_kp, &self.foot_rot_kd]);
        if all.clone().any(|&g| !(g > 0.0 && g.is_finite())) {
            return Err(GaitError::InvalidParameter {
                name: format!("gains.{name}"),
                reason: "task gains must be > 0".into(),
            });
        }
        if !(self.posture_kp >= 0.0 && self.posture_kd >= 0.0) {
            return Err(GaitError::InvalidParameter {
                name: format!("gains.{name}"),
                reason: "postural gains must be ≥ 0".into(),
            });
        }
        Ok(())
    }

    pub fn to_gains(&self, n: usize) -> TaskGains {
        TaskGains {
            com: GainsLinear {
                kp: Vector3::from(self.com_kp),
                kd: Vector3::from(self.com_kd),
            },
            root: GainsAngular {
                kp_w: self.root_kp,
                kd_w: self.root_kd,
            },
            foot_linear: GainsLinear {
                kp: Vector3::from(self.foot_kp),
                kd: Vector3::from(self.foot_kd),
            },
            foot_angular: GainsAngular {
                kp_w: self.foot_rot_kp,
                kd_w: self.foot_rot_kd,
            },
            posture_kp: DVector::repeat(n, self.posture_kp),
            posture_kd: DVector::repeat(n, self.posture_kd),
        }
    }
}

/// Named gain sets plus the state → set map.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSchedule {
    pub sets: BTreeMap<String, GainSetConfig>,
    pub schedule: BTreeMap<GaitState, String>,
}

impl GainSchedule {
    pub fn validate(&self) -> Result<(), GaitError> {
        for (name, set) in &self.sets {
            set.validate(name)?;
        }
        for state in GaitState::ALL {
            self.set_for(state)?;
        }
        Ok(())
    }

    fn set_for(&self, state: GaitState) -> Result<&GainSetConfig, GaitError> {
        let name = self.schedule.get(&state).ok_or(GaitError::MissingScheduleEntry(state))?;
        self.sets.get(name).ok_or_else(|| GaitError::UnknownGainSet {
            state,
            set: name.clone(),
        })
    }
}

/// Gains for `state`; a pure lookup.
pub fn gain_schedule(state: GaitState, schedule: &GainSchedule, n: usize) -> Result<TaskGains, GaitError> {
    Ok(schedule.set_for(state)?.to_gains(n))
}

/// Everything the controller tracks during one step.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskReferences {
    /// Position part used.
    pub com: PoseReference<f64>,
    /// Orientation part used.
    pub root: PoseReference<f64>,
    pub left_foot: PoseReference<f64>,
    pub right_foot: PoseReference<f64>,
    pub posture: DVector<f64>,
    pub posture_velocity: DVector<f64>,
    pub gains: TaskGains,
}

impl TaskReferences {
    pub fn foot(&self, foot: Foot) -> &PoseReference<f64> {
        match foot {
            Foot::Left => &self.left_foot,
            Foot::Right => &self.right_foot,
        }
    }
}

/// Measured quantities the state machine reacts to.
#[derive(Debug, Clone, PartialEq)]
pub struct GaitMeasurement {
    pub com: Vector3<f64>,
    pub root_rotation: Rotation<f64>,
    pub left_sole: Pose<f64>,
    pub right_sole: Pose<f64>,
}

impl GaitMeasurement {
    fn sole(&self, foot: Foot) -> &Pose<f64> {
        match foot {
            Foot::Left => &self.left_sole,
            Foot::Right => &self.right_sole,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaitOutput {
    pub state: GaitState,
    pub stride: u32,
    pub time_in_state: f64,
    pub contacts: ContactState,
    pub references: TaskReferences,
}

#[derive(Debug, Clone)]
struct FootTrack {
    /// Initial sole pose; every swing lifts above and lowers onto it.
    foothold: Pose<f64>,
    /// Sole pose recorded at the last contact activation.
    ground: Pose<f64>,
    position: MinJerkSegment<f64, 3>,
    rotation: RotationSegment<f64>,
    /// Blend factor of the swing postural offsets, 0..1.
    posture_blend: MinJerkSegment<f64, 1>,
    posture_offset: DVector<f64>,
}

impl FootTrack {
    fn new(ground: Pose<f64>, offset: DVector<f64>) -> Self {
        Self {
            foothold: ground,
            ground,
            position: MinJerkSegment::hold(ground.position, 0.0),
            rotation: RotationSegment::hold(ground.rotation, 0.0),
            posture_blend: MinJerkSegment::hold(Vector1::new(0.0), 0.0),
            posture_offset: offset,
        }
    }

    fn reference(&self, t: f64) -> PoseReference<f64> {
        let p = self.position.eval(t);
        let r = self.rotation.eval(t);
        PoseReference {
            pose: Pose::new(r.rotation, p.value),
            velocity: Twist::new(p.velocity, r.angular_velocity),
            acceleration: Twist::new(p.acceleration, r.angular_acceleration),
        }
    }
}

/// The walking-in-place state machine.
#[derive(Debug, Clone)]
pub struct Gait {
    params: GaitParams,
    schedule: GainSchedule,
    n: usize,
    state: GaitState,
    state_start: f64,
    stride: u32,
    contacts: ContactState,
    touchdown_at: Option<f64>,
    nominal_com: Vector3<f64>,
    nominal_root: Rotation<f64>,
    nominal_posture: DVector<f64>,
    com: MinJerkSegment<f64, 3>,
    root: RotationSegment<f64>,
    feet: [FootTrack; 2],
    transitions: Vec<(f64, GaitState)>,
}

fn idx(foot: Foot) -> usize {
    match foot {
        Foot::Left => 0,
        Foot::Right => 1,
    }
}

impl Gait {
    /// Starts in `BalancingTwoFeet` at `t = 0` with every reference at the
    /// measured initial pose.
    pub fn new(
        model: &RobotModel,
        params: GaitParams,
        schedule: GainSchedule,
        initial: &GaitMeasurement,
        initial_posture: DVector<f64>,
    ) -> Result<Self, GaitError> {
        params.validate()?;
        schedule.validate()?;
        let n = model.dof();
        if initial_posture.len() != n {
            return Err(GaitError::InvalidParameter {
                name: "initial posture".into(),
                reason: format!("expected {n} joints, got {}", initial_posture.len()),
            });
        }
        let mut offsets = [DVector::zeros(n), DVector::zeros(n)];
        for (key, value) in &params.swing_posture {
            for (foot, prefix) in [(Foot::Left, "l_"), (Foot::Right, "r_")] {
                let name = format!("{prefix}{key}");
                let j = model.joint_index(&name).ok_or_else(|| GaitError::InvalidParameter {
                    name: "swing_posture".into(),
                    reason: format!("model has no joint `{name}`"),
                })?;
                offsets[idx(foot)][j] = *value;
            }
        }
        let [lo, ro] = offsets;
        let mut gait = Self {
            params,
            schedule,
            n,
            state: GaitState::BalancingTwoFeet,
            state_start: 0.0,
            stride: 0,
            contacts: ContactState::BOTH,
            touchdown_at: None,
            nominal_com: initial.com,
            nominal_root: initial.root_rotation,
            nominal_posture: initial_posture,
            com: MinJerkSegment::hold(initial.com, 0.0),
            root: RotationSegment::hold(initial.root_rotation, 0.0),
            feet: [FootTrack::new(initial.left_sole, lo), FootTrack::new(initial.right_sole, ro)],
            transitions: vec![(0.0, GaitState::BalancingTwoFeet)],
        };
        gait.enter(GaitState::BalancingTwoFeet, 0.0, initial);
        Ok(gait)
    }

    pub fn params(&self) -> &GaitParams {
        &self.params
    }

    pub fn state(&self) -> GaitState {
        self.state
    }

    pub fn stride(&self) -> u32 {
        self.stride
    }

    pub fn contacts(&self) -> ContactState {
        self.contacts
    }

    /// Every state entered so far with its entry time.
    pub fn transitions(&self) -> &[(f64, GaitState)] {
        &self.transitions
    }

    /// Ground pose of `foot` recorded at its last touchdown.
    pub fn ground_pose(&self, foot: Foot) -> &Pose<f64> {
        &self.feet[idx(foot)].ground
    }

    /// Advances to time `t` (monotone) and returns the references for this step.
    pub fn advance(&mut self, t: f64, meas: &GaitMeasurement) -> Result<GaitOutput, GaitError> {
        let elapsed = t - self.state_start;
        let p = self.params.clone();
        let next = match self.state {
            GaitState::BalancingTwoFeet => elapsed >= p.balance_duration,
            GaitState::TransitionToLeft | GaitState::TransitionToRight => elapsed >= p.transition_duration,
            GaitState::LeftSupport | GaitState::RightSupport => elapsed >= p.lift_duration + p.hold_duration,
            GaitState::PreparingRightTouchdown | GaitState::PreparingLeftTouchdown => elapsed >= p.lower_duration,
            GaitState::RightTouchdown | GaitState::LeftTouchdown => {
                let swing = self.state.stance().expect("touchdown has a stance foot").other();
                if self.touchdown_at.is_none() {
                    let height = meas.sole(swing).position.z - self.feet[idx(swing)].foothold.position.z;
                    if height <= p.contact_epsilon || elapsed >= p.touchdown_timeout {
                        self.activate(swing, t, meas);
                    }
                }
                self.touchdown_at.is_some_and(|t0| t - t0 >= p.touchdown_duration)
            }
        };
        if next {
            let state = self.state.next();
            if state == GaitState::BalancingTwoFeet {
                self.stride += 1;
            }
            self.enter(state, t, meas);
        }
        Ok(GaitOutput {
            state: self.state,
            stride: self.stride,
            time_in_state: t - self.state_start,
            contacts: self.contacts,
            references: self.references(t)?,
        })
    }

    fn activate(&mut self, foot: Foot, t: f64, meas: &GaitMeasurement) {
        self.contacts.set(foot, true);
        self.touchdown_at = Some(t);
        let track = &mut self.feet[idx(foot)];
        track.ground = *meas.sole(foot);
        track.position = MinJerkSegment::hold(track.ground.position, t);
        track.rotation = RotationSegment::hold(track.ground.rotation, t);
    }

    fn enter(&mut self, state: GaitState, t: f64, meas: &GaitMeasurement) {
        self.state = state;
        self.state_start = t;
        self.touchdown_at = None;
        if self.transitions.last().map(|&(_, s)| s) != Some(state) || t > 0.0 {
            self.transitions.push((t, state));
        }
        let p = self.params.clone();
        let com_now = self.com.eval(t).value;
        let root_now = self.root.eval(t).rotation;
        match state {
            GaitState::BalancingTwoFeet => {
                self.com = MinJerkSegment::new(com_now, self.nominal_com, p.balance_duration, t);
                self.root = RotationSegment::new(root_now, self.nominal_root, p.balance_duration, t);
            }
            GaitState::TransitionToLeft | GaitState::TransitionToRight => {
                let stance = if state == GaitState::TransitionToLeft { Foot::Left } else { Foot::Right };
                let sole = self.feet[idx(stance)].ground;
                let target = Vector3::new(sole.position.x, sole.position.y, self.nominal_com.z);
                self.com = MinJerkSegment::new(com_now, target, p.transition_duration, t);
                self.root = RotationSegment::new(root_now, sole.rotation, p.transition_duration, t);
            }
            GaitState::LeftSupport | GaitState::RightSupport => {
                let stance = state.stance().expect("support state");
                let swing = stance.other();
                self.contacts = ContactState::single(stance);
                let stance_rot = meas.sole(stance).rotation;
                self.root = RotationSegment::new(root_now, stance_rot, p.lift_duration, t);
                let track = &mut self.feet[idx(swing)];
                let start = track.position.eval(t).value;
                let apex = track.foothold.position + Vector3::new(0.0, 0.0, p.lift_height);
                track.position = MinJerkSegment::new(start, apex, p.lift_duration, t);
                let r0 = track.rotation.eval(t).rotation;
                track.rotation = RotationSegment::new(r0, stance_rot, p.lift_duration, t);
                track.posture_blend = MinJerkSegment::new(Vector1::new(0.0), Vector1::new(1.0), p.lift_duration, t);
            }
            GaitState::PreparingRightTouchdown | GaitState::PreparingLeftTouchdown => {
                let swing = state.stance().expect("single support").other();
                // Root orientation is held constant while the foot is lowered.
                self.root = RotationSegment::hold(root_now, t);
                let track = &mut self.feet[idx(swing)];
                let start = track.position.eval(t).value;
                // Lowering onto the fixed foothold keeps landing errors from compounding.
                track.position = MinJerkSegment::new(start, track.foothold.position, p.lower_duration, t);
                let r0 = track.rotation.eval(t).rotation;
                track.rotation = RotationSegment::new(r0, track.foothold.rotation, p.lower_duration, t);
                let b0 = track.posture_blend.eval(t).value;
                track.posture_blend = MinJerkSegment::new(b0, Vector1::new(0.0), p.lower_duration, t);
            }
            GaitState::RightTouchdown | GaitState::LeftTouchdown => {
                self.root = RotationSegment::hold(root_now, t);
            }
        }
    }

    fn references(&self, t: f64) -> Result<TaskReferences, GaitError> {
        let c = self.com.eval(t);
        let r = self.root.eval(t);
        let mut posture = self.nominal_posture.clone();
        let mut posture_velocity = DVector::zeros(self.n);
        for track in &self.feet {
            let b = track.posture_blend.eval(t);
            posture += &track.posture_offset * b.value[0];
            posture_velocity += &track.posture_offset * b.velocity[0];
        }
        Ok(TaskReferences {
            com: PoseReference {
                pose: Pose::from_translation(c.value),
                velocity: Twist::new(c.velocity, Vector3::zeros()),
                acceleration: Twist::new(c.acceleration, Vector3::zeros()),
            },
            root: PoseReference {
                pose: Pose::new(r.rotation, Vector3::zeros()),
                velocity: Twist::new(Vector3::zeros(), r.angular_velocity),
                acceleration: Twist::new(Vector3::zeros(), r.angular_acceleration),
            },
            left_foot: self.feet[0].reference(t),
            right_foot: self.feet[1].reference(t),
            posture,
            posture_velocity,
            gains: gain_schedule(self.state, &self.schedule, self.n)?,
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::model::mini_biped;

    pub(crate) fn default_schedule() -> GainSchedule {
        let double = GainSetConfig {
            com_kp: [50.0; 3],
            com_kd: [14.0; 3],
            root_kp: 7.0,
            root_kd: 7.0,
            foot_kp: [30.0; 3],
            foot_kd: [11.0; 3],
            foot_rot_kp: 5.0,
            foot_rot_kd: 5.0,
            posture_kp: 10.0,
            posture_kd: 6.0,
        };
        let single = GainSetConfig {
            foot_kp: [20.0; 3],
            foot_kd: [9.0; 3],
            ..double.clone()
        };
        let schedule = GaitState::ALL
            .iter()
            .map(|&s| (s, if s.stance().is_some() { "single".to_string() } else { "double".to_string() }))
            .collect();
        GainSchedule {
            sets: BTreeMap::from([("double".into(), double), ("single".into(), single)]),
            schedule,
        }
    }

    fn initial() -> GaitMeasurement {
        GaitMeasurement {
            com: Vector3::new(0.01, 0.0, 0.55),
            root_rotation: Rotation::identity(),
            left_sole: Pose::from_translation(Vector3::new(0.0, 0.09, 0.0)),
            right_sole: Pose::from_translation(Vector3::new(0.0, -0.09, 0.0)),
        }
    }

    /// Measurement that follows the references exactly.
    fn ideal(out: &GaitOutput) -> GaitMeasurement {
        GaitMeasurement {
            com: out.references.com.pose.position,
            root_rotation: out.references.root.pose.rotation,
            left_sole: out.references.left_foot.pose,
            right_sole: out.references.right_foot.pose,
        }
    }

    fn new_gait() -> Gait {
        let m = mini_biped();
        Gait::new(&m, GaitParams::default(), default_schedule(), &initial(), DVector::zeros(12)).unwrap()
    }

    #[test]
    fn home_state_at_t0() {
        let mut g = new_gait();
        let out = g.advance(0.0, &initial()).unwrap();
        assert_eq!(out.state, GaitState::BalancingTwoFeet);
        assert_eq!(out.contacts, ContactState::BOTH);
        let init = initial();
        assert_eq!(out.references.com.pose.position, init.com);
        assert_eq!(out.references.left_foot.pose, init.left_sole);
        assert_eq!(out.references.right_foot.pose, init.right_sole);
        assert_eq!(out.references.root.pose.rotation, init.root_rotation);
    }

    fn run_cycle(g: &mut Gait, until: f64) -> Vec<GaitOutput> {
        let dt = 1e-3;
        let mut meas = initial();
        let mut outs = Vec::new();
        let steps = (until / dt).round() as usize;
        for k in 0..=steps {
            let out = g.advance(k as f64 * dt, &meas).unwrap();
            meas = ideal(&out);
            outs.push(out);
        }
        outs
    }

    #[test]
    fn left_support_mid_hold_lifts_right_foot() {
        let mut g = new_gait();
        let p = GaitParams::default();
        let t_mid = p.balance_duration + p.transition_duration + p.lift_duration + 0.5 * p.hold_duration;
        let outs = run_cycle(&mut g, t_mid);
        let out = outs.last().unwrap();
        assert_eq!(out.state, GaitState::LeftSupport);
        assert!(!out.contacts.right_active && out.contacts.left_active);
        assert!((out.references.right_foot.pose.position.z - 0.05).abs() < 1e-12);
        // CoM centered over the left sole.
        assert!((out.references.com.pose.position.y - 0.09).abs() < 1e-12);
    }

    #[test]
    fn full_cycle_follows_the_state_order_and_returns_home() {
        let mut g = new_gait();
        let period = GaitParams::default().stride_period();
        let outs = run_cycle(&mut g, period + 0.1);
        let last = outs.last().unwrap();
        assert_eq!(last.state, GaitState::BalancingTwoFeet);
        assert_eq!(last.stride, 1);
        let states: Vec<GaitState> = g.transitions().iter().map(|&(_, s)| s).collect();
        let mut expected = GaitState::ALL.to_vec();
        expected.push(GaitState::BalancingTwoFeet);
        assert_eq!(states, expected);
        let init = initial();
        assert!((last.references.left_foot.pose.position - init.left_sole.position).norm() < 1e-12);
        assert!((last.references.right_foot.pose.position - init.right_sole.position).norm() < 1e-12);

        for w in outs.windows(2) {
            // At least one active contact, single support only in stance states.
            assert!(w[1].contacts.count() >= 1);
            if matches!(w[1].state, GaitState::LeftSupport | GaitState::PreparingRightTouchdown) {
                assert_eq!(w[1].contacts, ContactState::single(Foot::Left));
            }
            // Reference continuity at 1 ms.
            let d = (w[1].references.com.pose.position - w[0].references.com.pose.position).norm();
            assert!(d < 1e-3 * 0.5, "CoM reference jump {d}");
            for foot in [Foot::Left, Foot::Right] {
                let a = w[0].references.foot(foot);
                let b = w[1].references.foot(foot);
                assert!((b.pose.position - a.pose.position).norm() < 1e-3 * 0.2);
                assert!((b.pose.rotation.matrix() - a.pose.rotation.matrix()).norm() < 1e-3);
            }
            assert!((&w[1].references.posture - &w[0].references.posture).amax() < 1e-3);
        }
    }

    #[test]
    fn touchdown_waits_for_the_foot() {
        let mut g = new_gait();
        let p = GaitParams::default();
        let t_td = p.balance_duration + p.transition_duration + p.lift_duration + p.hold_duration + p.lower_duration;
        let dt = 1e-3;
        let mut meas = initial();
        let mut k = 0;
        while g.state() != GaitState::RightTouchdown {
            let out = g.advance(k as f64 * dt, &meas).unwrap();
            meas = ideal(&out);
            k += 1;
        }
        assert!(((k - 1) as f64 * dt - t_td).abs() < 2.0 * dt);
        // Hold the foot 1 cm up: contact stays off until the timeout.
        meas.right_sole.position.z = 0.01;
        let t0 = (k - 1) as f64 * dt;
        let out = g.advance(t0 + 0.5, &meas).unwrap();
        assert!(!out.contacts.right_active);
        let out = g.advance(t0 + p.touchdown_timeout + 0.01, &meas).unwrap();
        assert!(out.contacts.right_active);
    }

    #[test]
    fn gain_schedule_lookup() {
        let s = default_schedule();
        for state in GaitState::ALL {
            assert_eq!(gain_schedule(state, &s, 12).unwrap(), gain_schedule(state, &s, 12).unwrap());
        }
        let single = gain_schedule(GaitState::LeftSupport, &s, 12).unwrap();
        for i in 0..3 {
            assert!(single.foot_linear.kp[i] < single.com.kp[i]);
            assert!(single.foot_linear.kd[i] < single.com.kd[i]);
        }
        let mut broken = s.clone();
        broken.schedule.remove(&GaitState::RightTouchdown);
        assert_eq!(
            gain_schedule(GaitState::RightTouchdown, &broken, 12),
            Err(GaitError::MissingScheduleEntry(GaitState::RightTouchdown))
        );
        let m = mini_biped();
        assert!(Gait::new(&m, GaitParams::default(), broken, &initial(), DVector::zeros(12)).is_err());
    }
}
