//! Closed loop: gait → controller → simulator, one sample per control period.

use std::time::Instant;

use nalgebra::{DVector, Vector3, Vector6};
use thiserror::Error;

use crate::config::EpisodeConfig;
use crate::dynamics::Kinematics;
use crate::gait::{Gait, GaitError, GaitMeasurement, GaitState};
use crate::lie::{orientation_error_norm, Pose, Rotation};
use crate::model::{standing_configuration, ModelError, RobotModel, LEFT_SOLE_FRAME, RIGHT_SOLE_FRAME, ROOT_FRAME};
use crate::qp_controller::{ControlDiagnostics, Controller, ControllerError};
use crate::simulator::{SimError, Simulator};
use crate::task_stack::{ContactState, ControlInput, Foot};

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Gait(#[from] GaitError),
    #[error(transparent)]
    Controller(#[from] ControllerError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// How the episode ended.
#[derive(Debug, Clone, PartialEq)]
pub enum EpisodeOutcome {
    Completed,
    /// CoM dropped below half its initial height.
    Fell { step: usize, t: f64 },
    SolverFailure { step: usize, t: f64, message: String },
    SimulationFailure { step: usize, t: f64, message: String },
}

impl EpisodeOutcome {
    pub fn is_completed(&self) -> bool {
        matches!(self, EpisodeOutcome::Completed)
    }
}

/// One control step of the closed loop.
#[derive(Debug, Clone)]
pub struct EpisodeSample {
    pub step: usize,
    pub t: f64,
    pub state: GaitState,
    pub time_in_state: f64,
    pub stride: u32,
    pub contacts: ContactState,
    /// Configuration and velocity at which the command was computed.
    pub base_pose: Pose<f64>,
    pub joint_positions: DVector<f64>,
    pub velocity: DVector<f64>,
    pub com: Vector3<f64>,
    pub com_ref: Vector3<f64>,
    pub root_rotation: Rotation<f64>,
    pub root_ref: Rotation<f64>,
    pub left_sole: Pose<f64>,
    pub left_ref: Pose<f64>,
    pub right_sole: Pose<f64>,
    pub right_ref: Pose<f64>,
    pub root_orientation_error: f64,
    pub left_orientation_error: f64,
    pub right_orientation_error: f64,
    /// Controller output (the wrenches are the QP's planned contact wrenches).
    pub input: ControlInput,
    /// Contact wrenches the simulator actually applied.
    pub sim_wrenches: [Vector6<f64>; 2],
    pub diagnostics: ControlDiagnostics,
    /// Wall time of the whole controller call (task model + QP), µs.
    pub control_time_us: f64,
    pub newton_residual: f64,
    /// `max |τ_t − τ_{t−1}|`, zero on the first step.
    pub torque_step: f64,
}

impl EpisodeSample {
    pub fn sole(&self, foot: Foot) -> (&Pose<f64>, &Pose<f64>) {
        match foot {
            Foot::Left => (&self.left_sole, &self.left_ref),
            Foot::Right => (&self.right_sole, &self.right_ref),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeSummary {
    pub outcome: EpisodeOutcome,
    pub steps: usize,
    pub strides: u32,
    pub final_time: f64,
    pub initial_com_height: f64,
    /// Every gait state entered, with its entry time.
    pub transitions: Vec<(f64, GaitState)>,
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    pub summary: EpisodeSummary,
    pub samples: Vec<EpisodeSample>,
}

pub fn measure(model: &RobotModel, kin: &Kinematics) -> GaitMeasurement {
    let frame = |name: &str| kin.frame_pose(model, model.frame_id(name).expect("biped frames exist"));
    GaitMeasurement {
        com: kin.com(model),
        root_rotation: frame(ROOT_FRAME).rotation,
        left_sole: frame(LEFT_SOLE_FRAME),
        right_sole: frame(RIGHT_SOLE_FRAME),
    }
}

/// Initial configuration of an episode.
pub fn initial_configuration(cfg: &EpisodeConfig) -> Result<crate::model::Configuration, ModelError> {
    let posture = crate::model::symmetric_posture(&cfg.model, cfg.initial_posture.iter().map(|(k, v)| (k.as_str(), *v)))?;
    standing_configuration(&cfg.model, posture)
}

/// Runs the loop and hands every sample to `observer` instead of storing it.
pub fn run_episode_with(cfg: &EpisodeConfig, mut observer: impl FnMut(&EpisodeSample)) -> Result<EpisodeSummary, EpisodeError> {
    let model = &cfg.model;
    let q0 = initial_configuration(cfg)?;
    let mut sim = Simulator::new(model.clone(), q0.clone(), cfg.sim.clone())?;
    let kin0 = Kinematics::new(model, &q0, None);
    let m0 = measure(model, &kin0);
    let initial_com_height = m0.com.z - 0.5 * (m0.left_sole.position.z + m0.right_sole.position.z);
    let mut gait = Gait::new(model, cfg.gait.clone(), cfg.schedule.clone(), &m0, q0.joint_positions.clone())?;
    let mut controller = Controller::new(cfg.controller.clone())?;

    let dt = cfg.sim.dt;
    let max_steps = cfg.duration.map(|d| (d / dt).round() as usize).unwrap_or(usize::MAX);
    let mut outcome = EpisodeOutcome::Completed;
    let mut steps = 0;
    let mut prev_tau: Option<DVector<f64>> = None;

    while steps < max_steps {
        if cfg.strides.is_some_and(|n| gait.stride() >= n) {
            break;
        }
        let k = steps;
        let t = k as f64 * dt;
        let q = sim.state.q.clone();
        let nu = sim.state.nu.clone();
        let kin = Kinematics::new(model, &q, None);
        let meas = measure(model, &kin);
        let ground = 0.5 * (gait.ground_pose(Foot::Left).position.z + gait.ground_pose(Foot::Right).position.z);
        if meas.com.z - ground < 0.5 * initial_com_height {
            outcome = EpisodeOutcome::Fell { step: k, t };
            break;
        }
        let out = gait.advance(t, &meas)?;
        for foot in [Foot::Left, Foot::Right] {
            if out.contacts.is_active(foot) != sim.state.contacts.is_active(foot) {
                sim.switch_contact(foot, out.contacts.is_active(foot))?;
            }
        }
        // Contact activation may have changed ν.
        let nu = if sim.state.nu != nu { sim.state.nu.clone() } else { nu };

        let t_ctrl = Instant::now();
        let step = match controller.step(model, &q, &nu, &out) {
            Ok(s) => s,
            Err(e) => {
                outcome = EpisodeOutcome::SolverFailure {
                    step: k,
                    t,
                    message: e.to_string(),
                };
                break;
            }
        };
        let control_time_us = t_ctrl.elapsed().as_secs_f64() * 1e6;
        let tau = step.input.torques.clone();
        let torque_step = prev_tau.as_ref().map(|p| (&tau - p).amax()).unwrap_or(0.0);
        prev_tau = Some(tau.clone());

        let report = match sim.step(&tau) {
            Ok(r) => r,
            Err(e) => {
                outcome = EpisodeOutcome::SimulationFailure {
                    step: k,
                    t,
                    message: e.to_string(),
                };
                break;
            }
        };
        let refs = &out.references;
        let m = &step.task_model.measurements;
        let sample = EpisodeSample {
            step: k,
            t,
            state: out.state,
            time_in_state: out.time_in_state,
            stride: out.stride,
            contacts: out.contacts,
            base_pose: q.base_pose,
            joint_positions: q.joint_positions.clone(),
            velocity: nu.to_vector(),
            com: m.com,
            com_ref: refs.com.pose.position,
            root_rotation: m.root.rotation,
            root_ref: refs.root.pose.rotation,
            left_sole: m.left_sole,
            left_ref: refs.left_foot.pose,
            right_sole: m.right_sole,
            right_ref: refs.right_foot.pose,
            root_orientation_error: orientation_error_norm(&m.root.rotation, &refs.root.pose.rotation),
            left_orientation_error: orientation_error_norm(&m.left_sole.rotation, &refs.left_foot.pose.rotation),
            right_orientation_error: orientation_error_norm(&m.right_sole.rotation, &refs.right_foot.pose.rotation),
            input: step.input,
            sim_wrenches: sim.state.wrenches,
            diagnostics: step.diagnostics,
            control_time_us,
            newton_residual: report.newton_residual,
            torque_step,
        };
        observer(&sample);
        steps += 1;
    }
    Ok(EpisodeSummary {
        outcome,
        steps,
        strides: gait.stride(),
        final_time: steps as f64 * dt,
        initial_com_height,
        transitions: gait.transitions().to_vec(),
    })
}

/// Runs the loop and keeps every sample.
pub fn run_episode(cfg: &EpisodeConfig) -> Result<EpisodeLog, EpisodeError> {
    let mut samples = Vec::new();
    let summary = run_episode_with(cfg, |s| samples.push(s.clone()))?;
    Ok(EpisodeLog { summary, samples })
}
