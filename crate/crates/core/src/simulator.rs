//! Constrained rigid-body simulation with bilateral foot contacts.

use nalgebra::{DMatrix, DVector, Vector3, Vector6};
use serde::Deserialize;
use thiserror::Error;

use crate::dynamics::{Kinematics, STANDARD_GRAVITY};
use crate::lie::{skew_vee, Pose};
use crate::model::{Configuration, FrameId, RobotModel, Velocity};
use crate::task_stack::{ContactState, Foot};

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    /// s
    pub dt: f64,
    /// Velocity-level Baumgarte gain, 1/s.
    pub baumgarte_alpha: f64,
    /// Position-level Baumgarte gain, 1/s².
    pub baumgarte_beta: f64,
    /// Abort threshold on ‖ν‖.
    pub max_velocity: f64,
    pub gravity: [f64; 3],
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            baumgarte_alpha: 20.0,
            baumgarte_beta: 100.0,
            max_velocity: 1e3,
            gravity: STANDARD_GRAVITY.into(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SimError::InvalidConfig(format!("dt = {}", self.dt)));
        }
        if !(self.baumgarte_alpha >= 0.0 && self.baumgarte_beta >= 0.0) {
            return Err(SimError::InvalidConfig("Baumgarte gains must be ≥ 0".into()));
        }
        Ok(())
    }

    pub fn gravity(&self) -> Vector3<f64> {
        Vector3::from(self.gravity)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulator configuration: {0}")]
    InvalidConfig(String),
    #[error("contact constraint matrix is singular")]
    SingularKkt,
    #[error("numerical blow-up at t = {t:.4} s: ‖ν‖ = {norm:.3e}")]
    NumericalBlowup { t: f64, norm: f64 },
    #[error("non-finite torque command")]
    NonFiniteTorque,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub q: Configuration,
    pub nu: Velocity,
    pub t: f64,
    pub contacts: ContactState,
    /// World-aligned contact wrenches of the last step (zero when inactive).
    pub wrenches: [Vector6<f64>; 2],
    /// Sole poses the active contacts are held at.
    pub anchors: [Option<Pose<f64>>; 2],
}

/// Solution of the contact-constrained dynamics at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardDynamics {
    pub nu_dot: DVector<f64>,
    pub wrenches: [Vector6<f64>; 2],
    /// `‖Mν̇ + h − ζτ − J_Cᵀf‖∞`
    pub newton_residual: f64,
}

fn slot(foot: Foot) -> usize {
    match foot {
        Foot::Left => 0,
        Foot::Right => 1,
    }
}

/// Constraint violation of a sole held at `anchor`: position error and
/// `½ vee(R R₀ᵀ − R₀ Rᵀ)`.
pub fn contact_error(pose: &Pose<f64>, anchor: &Pose<f64>) -> Vector6<f64> {
    let lin = pose.position - anchor.position;
    let r = pose.rotation.matrix() * anchor.rotation.matrix().transpose();
    let ang = skew_vee(&r);
    Vector6::new(lin.x, lin.y, lin.z, ang.x, ang.y, ang.z)
}

struct ContactRows {
    jacobian: DMatrix<f64>,
    rhs: DVector<f64>,
    feet: Vec<Foot>,
}

fn active_feet(contacts: ContactState) -> Vec<Foot> {
    [Foot::Left, Foot::Right].into_iter().filter(|&f| contacts.is_active(f)).collect()
}

fn sole_ids(model: &RobotModel) -> [FrameId; 2] {
    [Foot::Left, Foot::Right].map(|f| model.frame_id(f.frame()).expect("biped model has both soles"))
}

fn contact_rows(
    model: &RobotModel,
    kin: &Kinematics,
    nu: &DVector<f64>,
    contacts: ContactState,
    anchors: &[Option<Pose<f64>>; 2],
    cfg: &SimConfig,
) -> ContactRows {
    let feet = active_feet(contacts);
    let mut jacobian = DMatrix::zeros(6 * feet.len(), model.nv());
    let mut rhs = DVector::zeros(6 * feet.len());
    for (k, &foot) in feet.iter().enumerate() {
        let id = sole_ids(model)[slot(foot)];
        let j = kin.frame_jacobian(model, id);
        let jd = kin.frame_jdot_nu(model, id);
        let pose = kin.frame_pose(model, id);
        let anchor = anchors[slot(foot)].unwrap_or(pose);
        let err = contact_error(&pose, &anchor);
        let v = &j * nu;
        let stab = v * cfg.baumgarte_alpha + err * cfg.baumgarte_beta;
        rhs.rows_mut(6 * k, 6).copy_from(&(-jd - stab));
        jacobian.rows_mut(6 * k, 6).copy_from(&j);
    }
    ContactRows { jacobian, rhs, feet }
}

/// Solves `[M −J_Cᵀ; J_C 0][ν̇; f] = [ζτ − h; −J̇_Cν − αJ_Cν − βc]` through the
/// Schur complement `J_C M⁻¹ J_Cᵀ`.
pub fn constrained_forward_dynamics(
    model: &RobotModel,
    state: &SimState,
    tau: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<ForwardDynamics, SimError> {
    let kin = Kinematics::new(model, &state.q, Some(&state.nu));
    let m = kin.mass_matrix(model);
    let h = kin.bias(model, &cfg.gravity());
    let nuv = state.nu.to_vector();
    let n = model.dof();
    let mut gen = -&h;
    for i in 0..n {
        gen[6 + i] += tau[i];
    }
    let chol = m.clone().cholesky().ok_or(SimError::SingularKkt)?;
    let free = chol.solve(&gen);
    let rows = contact_rows(model, &kin, &nuv, state.contacts, &state.anchors, cfg);
    let mut wrenches = [Vector6::zeros(); 2];
    let mut generalized_force = gen;
    let nu_dot = if rows.feet.is_empty() {
        free
    } else {
        let minv_jt = chol.solve(&rows.jacobian.transpose());
        let lambda = &rows.jacobian * &minv_jt;
        let lchol = lambda.cholesky().ok_or(SimError::SingularKkt)?;
        let f = lchol.solve(&(&rows.rhs - &rows.jacobian * &free));
        for (k, &foot) in rows.feet.iter().enumerate() {
            wrenches[slot(foot)] = Vector6::from_iterator(f.rows(6 * k, 6).iter().copied());
        }
        generalized_force += rows.jacobian.tr_mul(&f);
        free + minv_jt * f
    };
    let newton_residual = (&m * &nu_dot - generalized_force).amax();
    Ok(ForwardDynamics {
        nu_dot,
        wrenches,
        newton_residual,
    })
}

/// Result of one integration step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub nu_dot: DVector<f64>,
    pub applied_torques: DVector<f64>,
    pub newton_residual: f64,
}

#[derive(Debug, Clone)]
pub struct Simulator {
    pub model: RobotModel,
    pub config: SimConfig,
    pub state: SimState,
    torque_limits: DVector<f64>,
}

impl Simulator {
    /// Starts at rest with both feet anchored where they are.
    pub fn new(model: RobotModel, q: Configuration, config: SimConfig) -> Result<Self, SimError> {
        let n = model.dof();
        let mut sim = Self::floating(model, q, Velocity::zeros(n), config)?;
        sim.switch_contact(Foot::Left, true)?;
        sim.switch_contact(Foot::Right, true)?;
        Ok(sim)
    }

    /// Free-flying start (no contacts) with the given velocity.
    pub fn floating(model: RobotModel, q: Configuration, nu: Velocity, config: SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        let torque_limits = DVector::from_iterator(model.dof(), model.joints().iter().map(|j| j.torque_limit));
        Ok(Self {
            state: SimState {
                q,
                nu,
                t: 0.0,
                contacts: ContactState {
                    left_active: false,
                    right_active: false,
                },
                wrenches: [Vector6::zeros(); 2],
                anchors: [None, None],
            },
            model,
            config,
            torque_limits,
        })
    }

    pub fn sole_pose(&self, foot: Foot) -> Pose<f64> {
        let kin = Kinematics::new(&self.model, &self.state.q, None);
        kin.frame_pose(&self.model, sole_ids(&self.model)[slot(foot)])
    }

    /// Clamps to the joint torque limits.
    pub fn clamp_torques(&self, tau: &DVector<f64>) -> DVector<f64> {
        tau.zip_map(&self.torque_limits, |t, l| t.clamp(-l, l))
    }

    /// Semi-implicit Euler: `ν ← ν + ν̇ dt`, then the configuration moves
    /// with the updated velocity. The base velocity is then re-solved from the
    /// momentum integrated with the same external wrenches, so a free-flying
    /// body keeps its momentum to round-off.
    pub fn step(&mut self, tau: &DVector<f64>) -> Result<StepReport, SimError> {
        if tau.iter().any(|x| !x.is_finite()) {
            return Err(SimError::NonFiniteTorque);
        }
        let applied = self.clamp_torques(tau);
        let fd = constrained_forward_dynamics(&self.model, &self.state, &applied, &self.config)?;
        let dt = self.config.dt;
        let n = self.model.dof();

        let kin = Kinematics::new(&self.model, &self.state.q, None);
        let nu_k = self.state.nu.to_vector();
        let (p, l_com) = momentum(&self.model, &kin, &self.state.q, &nu_k);
        let com = kin.com(&self.model);
        let mut force = self.config.gravity() * self.model.total_mass();
        let mut torque = Vector3::zeros();
        for foot in active_feet(self.state.contacts) {
            let w = &fd.wrenches[slot(foot)];
            let f = Vector3::new(w[0], w[1], w[2]);
            let at = kin.frame_pose(&self.model, sole_ids(&self.model)[slot(foot)]).position;
            force += f;
            torque += (at - com).cross(&f) + Vector3::new(w[3], w[4], w[5]);
        }
        let p_next = p + force * dt;
        let l_next = l_com + torque * dt;

        let mut nu = nu_k + &fd.nu_dot * dt;
        let q_next = self.state.q.integrate(&Velocity::from_vector(&nu).expect("n + 6 entries"), dt);
        let kin_next = Kinematics::new(&self.model, &q_next, None);
        let m_next = kin_next.mass_matrix(&self.model);
        let lever = kin_next.com(&self.model) - q_next.base_pose.position;
        let target = l_next + lever.cross(&p_next);
        let mut rhs = DVector::from_iterator(6, p_next.iter().chain(target.iter()).copied());
        rhs -= m_next.view((0, 6), (6, n)) * nu.rows(6, n);
        let base = m_next
            .view((0, 0), (6, 6))
            .into_owned()
            .cholesky()
            .ok_or(SimError::SingularKkt)?
            .solve(&rhs);
        nu.rows_mut(0, 6).copy_from(&base);

        let norm = nu.norm();
        if !(norm <= self.config.max_velocity) {
            return Err(SimError::NumericalBlowup {
                t: self.state.t + dt,
                norm,
            });
        }
        self.state.q = q_next;
        self.state.nu = Velocity::from_vector(&nu).expect("velocity has n + 6 entries");
        self.state.t += dt;
        self.state.wrenches = fd.wrenches;
        Ok(StepReport {
            nu_dot: fd.nu_dot,
            applied_torques: applied,
            newton_residual: fd.newton_residual,
        })
    }

    /// Activation anchors the sole where it is and projects out its
    /// constraint-space velocity; deactivation just drops the rows.
    pub fn switch_contact(&mut self, foot: Foot, activate: bool) -> Result<(), SimError> {
        if self.state.contacts.is_active(foot) == activate {
            return Ok(());
        }
        self.state.contacts.set(foot, activate);
        if !activate {
            self.state.anchors[slot(foot)] = None;
            self.state.wrenches[slot(foot)] = Vector6::zeros();
            return Ok(());
        }
        self.state.anchors[slot(foot)] = Some(self.sole_pose(foot));
        self.state.nu = impulsive_projection(&self.model, &self.state.q, &self.state.nu, self.state.contacts)?;
        Ok(())
    }
}

/// Linear momentum and angular momentum about the CoM, from the base rows of `Mν`.
fn momentum(model: &RobotModel, kin: &Kinematics, q: &Configuration, nu: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let m = kin.mass_matrix(model);
    let hb = m.rows(0, 6) * nu;
    let p = Vector3::new(hb[0], hb[1], hb[2]);
    let l_base = Vector3::new(hb[3], hb[4], hb[5]);
    let lever = kin.com(model) - q.base_pose.position;
    (p, l_base - lever.cross(&p))
}

/// `ν⁺ = ν − M⁻¹J_Cᵀ(J_C M⁻¹ J_Cᵀ)⁻¹ J_C ν` over every active contact.
pub fn impulsive_projection(
    model: &RobotModel,
    q: &Configuration,
    nu: &Velocity,
    contacts: ContactState,
) -> Result<Velocity, SimError> {
    let feet = active_feet(contacts);
    if feet.is_empty() {
        return Ok(nu.clone());
    }
    let kin = Kinematics::new(model, q, None);
    let ids = sole_ids(model);
    let mut j = DMatrix::zeros(6 * feet.len(), model.nv());
    for (k, &foot) in feet.iter().enumerate() {
        j.rows_mut(6 * k, 6).copy_from(&kin.frame_jacobian(model, ids[slot(foot)]));
    }
    let chol = kin.mass_matrix(model).cholesky().ok_or(SimError::SingularKkt)?;
    let minv_jt = chol.solve(&j.transpose());
    let lchol = (&j * &minv_jt).cholesky().ok_or(SimError::SingularKkt)?;
    let v = nu.to_vector();
    let plus = &v - minv_jt * lchol.solve(&(&j * &v));
    Ok(Velocity::from_vector(&plus).expect("velocity has n + 6 entries"))
}
