//! Task velocity stack `Υ = (ṗ_G, ω_B, v_L, v_R)` and the affine maps from the
//! control input `u = (τ, F_L, F_R)` to task and joint accelerations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix6xX, Vector3, Vector6};
use thiserror::Error;

use crate::dynamics::{Kinematics, STANDARD_GRAVITY};
use crate::lie::{Pose, Twist};
use crate::model::{Configuration, RobotModel, Velocity, LEFT_SOLE_FRAME, RIGHT_SOLE_FRAME, ROOT_FRAME};

/// Rows of `Υ`: CoM linear (3), root angular (3), left sole (6), right sole (6).
pub const TASK_DIM: usize = 18;
pub const COM_ROWS: std::ops::Range<usize> = 0..3;
pub const ROOT_ROWS: std::ops::Range<usize> = 3..6;
pub const LEFT_FOOT_ROWS: std::ops::Range<usize> = 6..12;
pub const RIGHT_FOOT_ROWS: std::ops::Range<usize> = 12..18;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TaskError {
    #[error("control input has {got} entries, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Foot {
    Left,
    Right,
}

impl Foot {
    pub fn other(self) -> Foot {
        match self {
            Foot::Left => Foot::Right,
            Foot::Right => Foot::Left,
        }
    }

    pub fn frame(self) -> &'static str {
        match self {
            Foot::Left => LEFT_SOLE_FRAME,
            Foot::Right => RIGHT_SOLE_FRAME,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Foot::Left => "left",
            Foot::Right => "right",
        }
    }
}

/// Contact activations `(η_L, η_R)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ContactState {
    pub left_active: bool,
    pub right_active: bool,
}

impl ContactState {
    pub const BOTH: ContactState = ContactState {
        left_active: true,
        right_active: true,
    };

    pub fn single(stance: Foot) -> Self {
        Self {
            left_active: stance == Foot::Left,
            right_active: stance == Foot::Right,
        }
    }

    pub fn is_active(&self, foot: Foot) -> bool {
        match foot {
            Foot::Left => self.left_active,
            Foot::Right => self.right_active,
        }
    }

    pub fn set(&mut self, foot: Foot, active: bool) {
        match foot {
            Foot::Left => self.left_active = active,
            Foot::Right => self.right_active = active,
        }
    }

    pub fn count(&self) -> usize {
        self.left_active as usize + self.right_active as usize
    }
}

/// `u = (τ, F_L, F_R)`; wrenches are `(f, τ)` in inertial axes at the sole origin.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlInput {
    pub torques: DVector<f64>,
    pub left_wrench: Vector6<f64>,
    pub right_wrench: Vector6<f64>,
}

impl ControlInput {
    pub fn zeros(n: usize) -> Self {
        Self {
            torques: DVector::zeros(n),
            left_wrench: Vector6::zeros(),
            right_wrench: Vector6::zeros(),
        }
    }

    pub fn dof(&self) -> usize {
        self.torques.len()
    }

    pub fn wrench(&self, foot: Foot) -> &Vector6<f64> {
        match foot {
            Foot::Left => &self.left_wrench,
            Foot::Right => &self.right_wrench,
        }
    }

    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dof();
        let mut v = DVector::zeros(n + 12);
        v.rows_mut(0, n).copy_from(&self.torques);
        v.fixed_rows_mut::<6>(n).copy_from(&self.left_wrench);
        v.fixed_rows_mut::<6>(n + 6).copy_from(&self.right_wrench);
        v
    }

    pub fn from_vector(v: &DVector<f64>, n: usize) -> Result<Self, TaskError> {
        if v.len() != n + 12 {
            return Err(TaskError::DimensionMismatch {
                expected: n + 12,
                got: v.len(),
            });
        }
        Ok(Self {
            torques: v.rows(0, n).into_owned(),
            left_wrench: v.fixed_rows::<6>(n).into_owned(),
            right_wrench: v.fixed_rows::<6>(n + 6).into_owned(),
        })
    }
}

/// Measured task-space quantities at the snapshot state.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskMeasurements {
    pub com: Vector3<f64>,
    pub com_velocity: Vector3<f64>,
    pub root: Pose<f64>,
    pub root_twist: Twist<f64>,
    pub left_sole: Pose<f64>,
    pub left_twist: Twist<f64>,
    pub right_sole: Pose<f64>,
    pub right_twist: Twist<f64>,
}

impl TaskMeasurements {
    pub fn sole(&self, foot: Foot) -> (&Pose<f64>, &Twist<f64>) {
        match foot {
            Foot::Left => (&self.left_sole, &self.left_twist),
            Foot::Right => (&self.right_sole, &self.right_twist),
        }
    }
}

/// Per-step snapshot of `J_Υ`, `J̇_Υν`, `B`, `M`, `h` and the derived affine maps
/// `Υ̇(u) = G_Υ u + c_Υ` and `s̈(u) = G_s u + c_s`.
#[derive(Debug, Clone)]
pub struct TaskModel {
    pub n: usize,
    pub contacts: ContactState,
    pub task_jacobian: DMatrix<f64>,
    pub task_bias: DVector<f64>,
    /// `[ζ, J_Cᵀ]` with inactive contact columns zeroed.
    pub input_matrix: DMatrix<f64>,
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub left_contact_jacobian: Matrix6xX<f64>,
    pub right_contact_jacobian: Matrix6xX<f64>,
    pub left_contact_bias: Vector6<f64>,
    pub right_contact_bias: Vector6<f64>,
    pub task_gain: DMatrix<f64>,
    pub task_offset: DVector<f64>,
    pub joint_gain: DMatrix<f64>,
    pub joint_offset: DVector<f64>,
    pub measurements: TaskMeasurements,
    mass_cholesky: Cholesky<f64, Dyn>,
}

fn twist_of(v: &Vector6<f64>) -> Twist<f64> {
    Twist::new(Vector3::new(v[0], v[1], v[2]), Vector3::new(v[3], v[4], v[5]))
}

/// Builds the task model at `(q, ν)` under standard gravity.
pub fn build_task_model(model: &RobotModel, q: &Configuration, nu: &Velocity, contacts: ContactState) -> TaskModel {
    build_task_model_with_gravity(model, q, nu, contacts, &STANDARD_GRAVITY)
}

pub fn build_task_model_with_gravity(
    model: &RobotModel,
    q: &Configuration,
    nu: &Velocity,
    contacts: ContactState,
    gravity: &Vector3<f64>,
) -> TaskModel {
    let n = model.dof();
    let nv = model.nv();
    let kin = Kinematics::new(model, q, Some(nu));
    let mass_matrix = kin.mass_matrix(model);
    let bias = kin.bias(model, gravity);
    let nuv = nu.to_vector();

    let root_id = model.frame_id(ROOT_FRAME).expect("biped model has a root frame");
    let left_id = model.frame_id(LEFT_SOLE_FRAME).expect("biped model has a left sole");
    let right_id = model.frame_id(RIGHT_SOLE_FRAME).expect("biped model has a right sole");

    let j_com = kin.com_jacobian(model);
    let j_root = kin.frame_jacobian(model, root_id);
    let j_left = kin.frame_jacobian(model, left_id);
    let j_right = kin.frame_jacobian(model, right_id);
    let jd_left = kin.frame_jdot_nu(model, left_id);
    let jd_right = kin.frame_jdot_nu(model, right_id);

    let mut task_jacobian = DMatrix::zeros(TASK_DIM, nv);
    task_jacobian.rows_mut(COM_ROWS.start, 3).copy_from(&j_com);
    task_jacobian.rows_mut(ROOT_ROWS.start, 3).copy_from(&j_root.fixed_rows::<3>(3));
    task_jacobian.rows_mut(LEFT_FOOT_ROWS.start, 6).copy_from(&j_left);
    task_jacobian.rows_mut(RIGHT_FOOT_ROWS.start, 6).copy_from(&j_right);

    let mut task_bias = DVector::zeros(TASK_DIM);
    task_bias.fixed_rows_mut::<3>(COM_ROWS.start).copy_from(&kin.com_jdot_nu(model));
    // The root angular rows equal ω_B exactly, so their J̇ν vanishes.
    task_bias.fixed_rows_mut::<6>(LEFT_FOOT_ROWS.start).copy_from(&jd_left);
    task_bias.fixed_rows_mut::<6>(RIGHT_FOOT_ROWS.start).copy_from(&jd_right);

    let nu_in = n + 12;
    let mut input_matrix = DMatrix::zeros(nv, nu_in);
    for i in 0..n {
        input_matrix[(6 + i, i)] = 1.0;
    }
    if contacts.left_active {
        input_matrix.columns_mut(n, 6).copy_from(&j_left.transpose());
    }
    if contacts.right_active {
        input_matrix.columns_mut(n + 6, 6).copy_from(&j_right.transpose());
    }

    let mass_cholesky = Cholesky::new(mass_matrix.clone()).expect("mass matrix is positive definite");
    let minv_b = mass_cholesky.solve(&input_matrix);
    let minv_h = mass_cholesky.solve(&bias);
    let task_gain = &task_jacobian * &minv_b;
    let task_offset = &task_bias - &task_jacobian * &minv_h;
    let joint_gain = minv_b.rows(6, n).into_owned();
    let joint_offset = -minv_h.rows(6, n);

    let task_vel = &task_jacobian * &nuv;
    let measurements = TaskMeasurements {
        com: kin.com(model),
        com_velocity: task_vel.fixed_rows::<3>(0).into_owned(),
        root: kin.frame_pose(model, root_id),
        root_twist: twist_of(&(&j_root * &nuv)),
        left_sole: kin.frame_pose(model, left_id),
        left_twist: twist_of(&(&j_left * &nuv)),
        right_sole: kin.frame_pose(model, right_id),
        right_twist: twist_of(&(&j_right * &nuv)),
    };

    TaskModel {
        n,
        contacts,
        task_jacobian,
        task_bias,
        input_matrix,
        mass_matrix,
        bias,
        left_contact_jacobian: j_left,
        right_contact_jacobian: j_right,
        left_contact_bias: jd_left,
        right_contact_bias: jd_right,
        task_gain,
        task_offset,
        joint_gain,
        joint_offset,
        measurements,
        mass_cholesky,
    }
}

impl TaskModel {
    pub fn contact_jacobian(&self, foot: Foot) -> &Matrix6xX<f64> {
        match foot {
            Foot::Left => &self.left_contact_jacobian,
            Foot::Right => &self.right_contact_jacobian,
        }
    }

    pub fn contact_bias(&self, foot: Foot) -> &Vector6<f64> {
        match foot {
            Foot::Left => &self.left_contact_bias,
            Foot::Right => &self.right_contact_bias,
        }
    }

    fn check(&self, u: &ControlInput) -> Result<DVector<f64>, TaskError> {
        if u.dof() != self.n {
            return Err(TaskError::DimensionMismatch {
                expected: self.n + 12,
                got: u.dof() + 12,
            });
        }
        Ok(u.to_vector())
    }

    /// `ν̇ = M⁻¹(Bu − h)`.
    pub fn generalized_acceleration(&self, u: &ControlInput) -> Result<DVector<f64>, TaskError> {
        let uv = self.check(u)?;
        Ok(self.mass_cholesky.solve(&(&self.input_matrix * uv - &self.bias)))
    }

    /// `Υ̇ = J̇_Υν + J_Υ M⁻¹(Bu − h)`.
    pub fn task_acceleration_from_input(&self, u: &ControlInput) -> Result<DVector<f64>, TaskError> {
        let uv = self.check(u)?;
        Ok(&self.task_gain * uv + &self.task_offset)
    }

    /// `s̈ = ζᵀ M⁻¹(Bu − h)`.
    pub fn joint_acceleration_from_input(&self, u: &ControlInput) -> Result<DVector<f64>, TaskError> {
        let uv = self.check(u)?;
        Ok(&self.joint_gain * uv + &self.joint_offset)
    }

    pub fn solve_mass(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.mass_cholesky.solve(rhs)
    }

    pub fn mass_cholesky(&self) -> &Cholesky<f64, Dyn> {
        &self.mass_cholesky
    }
}
