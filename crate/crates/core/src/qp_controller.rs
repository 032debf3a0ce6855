//! Turns task references into a QP over `u = (τ, F_L, F_R)` and solves it.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::Deserialize;
use thiserror::Error;

use crate::control_laws::{linear_pd, postural_pd, rotational_pd, se3_pd};
use crate::gait::{GaitOutput, TaskReferences};
use crate::model::{Configuration, FootGeometry, RobotModel, Velocity};
use crate::qp_solver::{ActiveConstraint, QpError, QpProblem, QpSolution, QpSolver, QpStatus};
use crate::task_stack::{
    build_task_model, ContactState, ControlInput, Foot, TaskModel, COM_ROWS, LEFT_FOOT_ROWS, RIGHT_FOOT_ROWS,
    ROOT_ROWS, TASK_DIM,
};

/// Friction rows per active foot: 4 pyramid, 1 normal force, 4 CoP, 2 yaw torque.
pub const FRICTION_ROWS_PER_FOOT: usize = 11;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ControllerMode {
    Strict,
    Weighted,
}

impl ControllerMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ControllerMode::Strict => "strict",
            ControllerMode::Weighted => "weighted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerConfig {
    pub mode: ControllerMode,
    /// `w_Υ`
    pub w_task: f64,
    /// `w_s`
    pub w_posture: f64,
    /// Torque regularization weight.
    pub w_reg: f64,
    pub friction_coefficient: f64,
    /// m
    pub cop_margin: f64,
    /// N
    pub min_normal_force: f64,
    /// N·m/s
    pub torque_rate_limit: f64,
    /// Control period, s.
    pub period: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            mode: ControllerMode::Weighted,
            w_task: 1.0,
            w_posture: 1e-2,
            w_reg: 1e-4,
            friction_coefficient: 0.5,
            cop_margin: 0.005,
            min_normal_force: 5.0,
            torque_rate_limit: 1000.0,
            period: 1e-3,
        }
    }
}

impl ControllerConfig {
    /// Hard errors for unusable values; soft problems come back as warnings.
    pub fn validate(&self) -> Result<Vec<String>, ControllerError> {
        let bad = |what: &str, v: f64| Err(ControllerError::InvalidConfig(format!("{what} = {v}")));
        for (what, v) in [("w_task", self.w_task), ("w_posture", self.w_posture), ("w_reg", self.w_reg)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(what, v);
            }
        }
        if !(self.friction_coefficient > 0.0) {
            return bad("friction_coefficient", self.friction_coefficient);
        }
        if !(self.cop_margin >= 0.0) {
            return bad("cop_margin", self.cop_margin);
        }
        if !(self.min_normal_force >= 0.0) {
            return bad("min_normal_force", self.min_normal_force);
        }
        if !(self.torque_rate_limit > 0.0) {
            return bad("torque_rate_limit", self.torque_rate_limit);
        }
        if !(self.period > 0.0 && self.period.is_finite()) {
            return bad("period", self.period);
        }
        if self.mode == ControllerMode::Strict && self.w_reg <= 0.0 {
            return Err(ControllerError::InvalidConfig(
                "strict mode needs w_reg > 0 to keep the Hessian definite".into(),
            ));
        }
        let mut warnings = Vec::new();
        if self.mode == ControllerMode::Weighted && self.w_task <= self.w_posture {
            warnings.push(format!(
                "w_task ({}) should exceed w_posture ({}) so the tasks keep priority over the posture",
                self.w_task, self.w_posture
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ControllerError {
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent dimensions: {0}")]
    InfeasibleDimensions(String),
    #[error("no active contact")]
    NoActiveContact,
    #[error("QP setup failed: {0}")]
    Qp(#[from] QpError),
    #[error("QP solver returned {}", status.as_str())]
    SolverFailure { status: QpStatus, last_u: ControlInput },
}

/// Stacked constraint rows `lower ≤ A u ≤ upper`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRows {
    pub a: DMatrix<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

impl ConstraintRows {
    pub fn len(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.a.nrows() == 0
    }

    /// Largest bound violation at `u` (≤ 0 when satisfied with margin).
    pub fn max_violation(&self, u: &DVector<f64>) -> f64 {
        let au = &self.a * u;
        (0..au.len())
            .map(|i| (self.lower[i] - au[i]).max(au[i] - self.upper[i]))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Offset of the wrench of `foot` inside `u`.
pub fn wrench_offset(n: usize, foot: Foot) -> usize {
    match foot {
        Foot::Left => n,
        Foot::Right => n + 6,
    }
}

/// Friction pyramid, CoP rectangle and yaw-torque rows `C u ≤ b` for every
/// active foot, in the world-aligned sole frame, written as `−∞ ≤ C u ≤ b`.
pub fn friction_cone_constraints(
    n: usize,
    contacts: ContactState,
    feet: &[FootGeometry; 2],
    cfg: &ControllerConfig,
) -> ConstraintRows {
    let cols = n + 12;
    let active: Vec<Foot> = [Foot::Left, Foot::Right].into_iter().filter(|&f| contacts.is_active(f)).collect();
    let rows = FRICTION_ROWS_PER_FOOT * active.len();
    let mut a = DMatrix::zeros(rows, cols);
    let lower = DVector::from_element(rows, f64::NEG_INFINITY);
    let mut upper = DVector::zeros(rows);
    let mu = cfg.friction_coefficient;
    for (k, &foot) in active.iter().enumerate() {
        let geo = &feet[match foot {
            Foot::Left => 0,
            Foot::Right => 1,
        }];
        let mu_yaw = 0.1 * (geo.half_width + geo.half_length) / 2.0;
        let lx = geo.half_length - cfg.cop_margin;
        let ly = geo.half_width - cfg.cop_margin;
        let (fx, fy, fz, tx, ty, tz) = (0, 1, 2, 3, 4, 5);
        // (component, sign, f_z coefficient): sign·w_c − coeff·f_z ≤ 0
        let cone = [
            (fx, 1.0, mu),
            (fx, -1.0, mu),
            (fy, 1.0, mu),
            (fy, -1.0, mu),
            (ty, 1.0, lx),
            (ty, -1.0, lx),
            (tx, 1.0, ly),
            (tx, -1.0, ly),
            (tz, 1.0, mu_yaw),
            (tz, -1.0, mu_yaw),
        ];
        let base = k * FRICTION_ROWS_PER_FOOT;
        let off = wrench_offset(n, foot);
        for (r, &(c, sign, coeff)) in cone.iter().enumerate() {
            a[(base + r, off + c)] = sign;
            a[(base + r, off + fz)] = -coeff;
        }
        let r = base + cone.len();
        a[(r, off + fz)] = -1.0;
        upper[r] = -cfg.min_normal_force;
    }
    ConstraintRows { a, lower, upper }
}

/// Equality-to-zero rows on all six components of every inactive wrench.
pub fn inactive_wrench_rows(n: usize, contacts: ContactState) -> ConstraintRows {
    let inactive: Vec<Foot> = [Foot::Left, Foot::Right].into_iter().filter(|&f| !contacts.is_active(f)).collect();
    let mut a = DMatrix::zeros(6 * inactive.len(), n + 12);
    for (k, &foot) in inactive.iter().enumerate() {
        for c in 0..6 {
            a[(6 * k + c, wrench_offset(n, foot) + c)] = 1.0;
        }
    }
    let rows = a.nrows();
    ConstraintRows {
        a,
        lower: DVector::zeros(rows),
        upper: DVector::zeros(rows),
    }
}

/// `τ_prev − τ̇_max Δt ≤ τ ≤ τ_prev + τ̇_max Δt`.
pub fn torque_rate_rows(u_prev: &ControlInput, cfg: &ControllerConfig) -> ConstraintRows {
    let n = u_prev.dof();
    let mut a = DMatrix::zeros(n, n + 12);
    a.view_mut((0, 0), (n, n)).fill_with_identity();
    let step = cfg.torque_rate_limit * cfg.period;
    ConstraintRows {
        a,
        lower: u_prev.torques.add_scalar(-step),
        upper: u_prev.torques.add_scalar(step),
    }
}

/// Desired task and joint accelerations `(Υ̇*, s̈*)` from the control laws.
pub fn desired_accelerations(tm: &TaskModel, refs: &TaskReferences, s: &DVector<f64>, s_dot: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let m = &tm.measurements;
    let g = &refs.gains;
    let mut ups = DVector::zeros(TASK_DIM);
    ups.rows_mut(COM_ROWS.start, 3)
        .copy_from(&linear_pd(&m.com, &m.com_velocity, &refs.com, &g.com));
    ups.rows_mut(ROOT_ROWS.start, 3).copy_from(&rotational_pd(
        &m.root.rotation,
        &m.root_twist.angular,
        &refs.root,
        &g.root,
    ));
    for (foot, rows) in [(Foot::Left, LEFT_FOOT_ROWS), (Foot::Right, RIGHT_FOOT_ROWS)] {
        let (pose, twist) = m.sole(foot);
        let a = se3_pd(pose, twist, refs.foot(foot), &g.foot_linear, &g.foot_angular);
        ups.rows_mut(rows.start, 6).copy_from(&a);
    }
    let s_dd = postural_pd(s, s_dot, &refs.posture, &refs.posture_velocity, &g.posture_kp, &g.posture_kd)
        .expect("posture dimensions match the model");
    (ups, s_dd)
}

fn check_dims(tm: &TaskModel, ups: &DVector<f64>, s_dd: &DVector<f64>) -> Result<(), ControllerError> {
    if ups.len() != TASK_DIM || s_dd.len() != tm.n {
        return Err(ControllerError::InfeasibleDimensions(format!(
            "expected {TASK_DIM} task and {} joint accelerations, got {} and {}",
            tm.n,
            ups.len(),
            s_dd.len()
        )));
    }
    Ok(())
}

fn torque_selector(n: usize) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(n + 12, n + 12);
    z.view_mut((0, 0), (n, n)).fill_with_identity();
    // Inactive wrenches are pinned to zero by equality rows; this extra curvature
    // only removes the flat directions so the Hessian factorizes.
    z
}

// Inactive wrenches are pinned to zero by equality rows; this extra curvature
// only removes their flat directions so the Hessian factorizes.
fn inactive_curvature(h: &mut DMatrix<f64>, n: usize, contacts: ContactState, w: f64) {
    for foot in [Foot::Left, Foot::Right] {
        if !contacts.is_active(foot) {
            let off = wrench_offset(n, foot);
            for c in 0..6 {
                h[(off + c, off + c)] += w;
            }
        }
    }
}

fn push(p: &mut QpProblem, rows: &ConstraintRows) {
    if !rows.is_empty() {
        p.push_rows(&rows.a, &rows.lower, &rows.upper);
    }
}

fn common_rows(
    p: &mut QpProblem,
    tm: &TaskModel,
    feet: &[FootGeometry; 2],
    u_prev: Option<&ControlInput>,
    cfg: &ControllerConfig,
) {
    push(p, &friction_cone_constraints(tm.n, tm.contacts, feet, cfg));
    push(p, &inactive_wrench_rows(tm.n, tm.contacts));
    if let Some(prev) = u_prev {
        push(p, &torque_rate_rows(prev, cfg));
    }
}

/// The explicit weighted cost, for checking the expanded `H`, `g`.
pub fn weighted_cost(tm: &TaskModel, ups: &DVector<f64>, s_dd: &DVector<f64>, u: &DVector<f64>, cfg: &ControllerConfig) -> f64 {
    let es = &tm.joint_gain * u + &tm.joint_offset - s_dd;
    let et = &tm.task_gain * u + &tm.task_offset - ups;
    let tau = u.rows(0, tm.n);
    0.5 * (cfg.w_posture * es.norm_squared() + cfg.w_task * et.norm_squared() + cfg.w_reg * tau.norm_squared())
}

/// Soft-priority problem: every task in one weighted cost.
pub fn assemble_weighted(
    tm: &TaskModel,
    ups: &DVector<f64>,
    s_dd: &DVector<f64>,
    feet: &[FootGeometry; 2],
    u_prev: Option<&ControlInput>,
    cfg: &ControllerConfig,
) -> Result<QpProblem, ControllerError> {
    check_dims(tm, ups, s_dd)?;
    let n = tm.n;
    let gs = &tm.joint_gain;
    let gt = &tm.task_gain;
    let mut h = gs.tr_mul(gs) * cfg.w_posture + gt.tr_mul(gt) * cfg.w_task + torque_selector(n) * cfg.w_reg;
    inactive_curvature(&mut h, n, tm.contacts, cfg.w_reg.max(1e-8));
    let g = gs.tr_mul(&(&tm.joint_offset - s_dd)) * cfg.w_posture + gt.tr_mul(&(&tm.task_offset - ups)) * cfg.w_task;
    let mut p = QpProblem::unconstrained(h, g);
    common_rows(&mut p, tm, feet, u_prev, cfg);
    Ok(p)
}

/// Strict-priority problem: joint tracking cost under task equalities.
pub fn assemble_strict(
    tm: &TaskModel,
    ups: &DVector<f64>,
    s_dd: &DVector<f64>,
    feet: &[FootGeometry; 2],
    u_prev: Option<&ControlInput>,
    cfg: &ControllerConfig,
) -> Result<QpProblem, ControllerError> {
    check_dims(tm, ups, s_dd)?;
    let n = tm.n;
    let gs = &tm.joint_gain;
    let mut h = gs.tr_mul(gs) + torque_selector(n) * cfg.w_reg;
    inactive_curvature(&mut h, n, tm.contacts, cfg.w_reg.max(1e-8));
    let g = gs.tr_mul(&(&tm.joint_offset - s_dd));
    let mut p = QpProblem::unconstrained(h, g);
    let target = ups - &tm.task_offset;
    push(
        &mut p,
        &ConstraintRows {
            a: tm.task_gain.clone(),
            lower: target.clone(),
            upper: target,
        },
    );
    common_rows(&mut p, tm, feet, u_prev, cfg);
    Ok(p)
}

/// Per-step solver report.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlDiagnostics {
    pub status: QpStatus,
    pub objective: f64,
    pub iterations: usize,
    pub active_set_size: usize,
    pub kkt_stationarity: f64,
    pub kkt_primal: f64,
    pub kkt_complementarity: f64,
    /// max over friction rows of `C u − b`; −∞ with no rows.
    pub friction_residual: f64,
    /// `‖Υ̇(u) − Υ̇*‖`
    pub task_residual: f64,
    pub solve_time_us: f64,
    pub step_time_us: f64,
    pub task_acceleration_desired: DVector<f64>,
    pub task_acceleration: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ControlStep {
    pub input: ControlInput,
    pub diagnostics: ControlDiagnostics,
    pub task_model: TaskModel,
}

/// Assembles and solves one control step. `u_prev = None` drops the
/// torque-rate rows (start-up solve).
pub fn control_step(
    model: &RobotModel,
    q: &Configuration,
    nu: &Velocity,
    gait: &GaitOutput,
    cfg: &ControllerConfig,
    u_prev: Option<&ControlInput>,
    warm: &[ActiveConstraint],
) -> Result<(ControlStep, Vec<ActiveConstraint>), ControllerError> {
    let t0 = Instant::now();
    if gait.contacts.count() == 0 {
        return Err(ControllerError::NoActiveContact);
    }
    let tm = build_task_model(model, q, nu, gait.contacts);
    let (ups, s_dd) = desired_accelerations(&tm, &gait.references, &q.joint_positions, &nu.joint_velocities);
    let feet = foot_geometry(model);
    let p = match cfg.mode {
        ControllerMode::Weighted => assemble_weighted(&tm, &ups, &s_dd, &feet, u_prev, cfg)?,
        ControllerMode::Strict => assemble_strict(&tm, &ups, &s_dd, &feet, u_prev, cfg)?,
    };
    let solver = QpSolver::default();
    let ts = Instant::now();
    let sol: QpSolution = solver.solve_with_active_set(&p, warm)?;
    let solve_time_us = ts.elapsed().as_secs_f64() * 1e6;
    let input = ControlInput::from_vector(&sol.u, tm.n).expect("solution has n + 12 entries");
    if sol.status != QpStatus::Optimal {
        return Err(ControllerError::SolverFailure {
            status: sol.status,
            last_u: u_prev.cloned().unwrap_or(input),
        });
    }
    let friction = friction_cone_constraints(tm.n, tm.contacts, &feet, cfg);
    let friction_residual = if friction.is_empty() {
        f64::NEG_INFINITY
    } else {
        let cu = &friction.a * &sol.u;
        (0..cu.len()).map(|i| cu[i] - friction.upper[i]).fold(f64::NEG_INFINITY, f64::max)
    };
    let task_acceleration = &tm.task_gain * &sol.u + &tm.task_offset;
    let diagnostics = ControlDiagnostics {
        status: sol.status,
        objective: sol.objective,
        iterations: sol.iterations,
        active_set_size: sol.active_set.len(),
        kkt_stationarity: sol.kkt.stationarity,
        kkt_primal: sol.kkt.primal,
        kkt_complementarity: sol.kkt.complementarity,
        friction_residual,
        task_residual: (&task_acceleration - &ups).norm(),
        solve_time_us,
        step_time_us: t0.elapsed().as_secs_f64() * 1e6,
        task_acceleration_desired: ups,
        task_acceleration,
    };
    Ok((
        ControlStep {
            input,
            diagnostics,
            task_model: tm,
        },
        sol.active_set,
    ))
}

/// Sole rectangles of the left and right feet.
pub fn foot_geometry(model: &RobotModel) -> [FootGeometry; 2] {
    [Foot::Left, Foot::Right].map(|foot| {
        let id = model.frame_id(foot.frame()).expect("biped model has both soles");
        model.frame(id).foot.clone().expect("sole frames carry foot geometry")
    })
}

/// Owns the torque history and the solver warm start across steps.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    u_prev: Option<ControlInput>,
    warm: Vec<ActiveConstraint>,
    warm_contacts: Option<ContactState>,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self, ControllerError> {
        config.validate()?;
        Ok(Self {
            config,
            u_prev: None,
            warm: Vec::new(),
            warm_contacts: None,
        })
    }

    pub fn last_input(&self) -> Option<&ControlInput> {
        self.u_prev.as_ref()
    }

    pub fn step(
        &mut self,
        model: &RobotModel,
        q: &Configuration,
        nu: &Velocity,
        gait: &GaitOutput,
    ) -> Result<ControlStep, ControllerError> {
        if self.warm_contacts != Some(gait.contacts) {
            self.warm.clear();
        }
        if self.u_prev.is_none() {
            // Start-up: solve once without rate rows to seed the torque history.
            let (first, _) = control_step(model, q, nu, gait, &self.config, None, &[])?;
            self.u_prev = Some(first.input);
        }
        let (out, active) = control_step(model, q, nu, gait, &self.config, self.u_prev.as_ref(), &self.warm)?;
        self.u_prev = Some(out.input.clone());
        self.warm = active;
        self.warm_contacts = Some(gait.contacts);
        Ok(out)
    }
}

/// Sum of the vertical contact forces in `u`.
pub fn total_normal_force(u: &ControlInput, contacts: ContactState) -> f64 {
    [Foot::Left, Foot::Right]
        .into_iter()
        .filter(|&f| contacts.is_active(f))
        .map(|f| u.wrench(f)[2])
        .sum()
}
