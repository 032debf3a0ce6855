//! Floating-base rigid-body dynamics in the mixed velocity representation.
//!
//! Internally every spatial quantity is expressed in inertial axes about the
//! current base origin `p_B`. Spatial motion vectors are stacked `(ω, v)`,
//! spatial forces `(n, f)`. With that reference point the base spatial velocity
//! is exactly `(ω_B, ṗ_B)`, so converting to the public mixed layout
//! `(ṗ_B, ω_B, ṡ)` is a permutation of the first six coordinates.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, Matrix3, Matrix3xX, Matrix6, Matrix6xX, Vector3, Vector6};

use crate::lie::{skew, Pose};
use crate::model::{check_dof, link_poses, Configuration, FrameId, ModelError, RobotModel, Velocity};

/// Standard gravity in inertial coordinates, m/s².
pub const STANDARD_GRAVITY: Vector3<f64> = Vector3::new(0.0, 0.0, -9.81);

/// `M(q)` and `h(q, ν)` of `M ν̇ + h = B u`.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsQuantities {
    pub mass_matrix: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gravity: Vector3<f64>,
}

impl DynamicsQuantities {
    pub fn compute(model: &RobotModel, q: &Configuration, nu: &Velocity, gravity: Vector3<f64>) -> Self {
        let kin = Kinematics::new(model, q, Some(nu));
        Self {
            mass_matrix: kin.mass_matrix(model),
            bias: kin.bias(model, &gravity),
            gravity,
        }
    }

    /// Cholesky factor of `M`; `M` is positive definite for any valid model.
    pub fn mass_cholesky(&self) -> Cholesky<f64, Dyn> {
        Cholesky::new(self.mass_matrix.clone()).expect("mass matrix is positive definite")
    }
}

/// Mixed-frame Jacobian of a named frame, linear rows first.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameJacobian {
    pub frame: String,
    pub matrix: Matrix6xX<f64>,
}

fn motion_cross(a: &Vector6<f64>, b: &Vector6<f64>) -> Vector6<f64> {
    let (w, v) = (a.fixed_rows::<3>(0), a.fixed_rows::<3>(3));
    let (w2, v2) = (b.fixed_rows::<3>(0), b.fixed_rows::<3>(3));
    let top = w.cross(&w2);
    let bottom = w.cross(&v2) + v.cross(&w2);
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

fn force_cross(a: &Vector6<f64>, f: &Vector6<f64>) -> Vector6<f64> {
    let (w, v) = (a.fixed_rows::<3>(0), a.fixed_rows::<3>(3));
    let (n, fl) = (f.fixed_rows::<3>(0), f.fixed_rows::<3>(3));
    let top = w.cross(&n) + v.cross(&fl);
    let bottom = w.cross(&fl);
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

fn stack(top: Vector3<f64>, bottom: Vector3<f64>) -> Vector6<f64> {
    Vector6::new(top.x, top.y, top.z, bottom.x, bottom.y, bottom.z)
}

/// Spatial inertia about `origin`, inertial axes, `(ω, v)` ordering.
fn spatial_inertia(mass: f64, com: &Vector3<f64>, inertia_world: &Matrix3<f64>, origin: &Vector3<f64>) -> Matrix6<f64> {
    let c = skew(&(com - origin));
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(inertia_world - mass * c * c));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(mass * c));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(mass * c.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * mass));
    out
}

/// Mixed coordinate index → internal spatial coordinate index.
fn spatial_index(i: usize) -> usize {
    match i {
        0..=2 => i + 3,
        3..=5 => i - 3,
        _ => i,
    }
}

/// Per-state kinematic snapshot shared by every dynamics query.
#[derive(Debug, Clone)]
pub struct Kinematics {
    pub poses: Vec<Pose<f64>>,
    origin: Vector3<f64>,
    /// World-frame motion subspace `(a, (p_j − p_B) × a)` of every joint.
    subspace: Vec<Vector6<f64>>,
    /// Link spatial velocities (present when a velocity was supplied).
    velocity: Vec<Vector6<f64>>,
    /// Link spatial accelerations at `ν̇ = 0`, gravity excluded.
    bias_accel: Vec<Vector6<f64>>,
    nv: usize,
}

impl Kinematics {
    pub fn new(model: &RobotModel, q: &Configuration, nu: Option<&Velocity>) -> Self {
        let poses = link_poses(model, q);
        let origin = q.base_pose.position;
        let joints = model.joints();
        let subspace: Vec<Vector6<f64>> = joints
            .iter()
            .map(|j| {
                let pose = &poses[j.child];
                let a = pose.rotation.apply(&j.axis);
                stack(a, (pose.position - origin).cross(&a))
            })
            .collect();

        let nl = model.links().len();
        let mut velocity = vec![Vector6::zeros(); nl];
        let mut bias_accel = vec![Vector6::zeros(); nl];
        if let Some(nu) = nu {
            let base = model.base();
            velocity[base] = stack(nu.base_angular, nu.base_linear);
            // ν̇ = 0 keeps p̈_B = 0, which in spatial form reads v̇_O = ṗ_B × ω_B.
            bias_accel[base] = stack(Vector3::zeros(), nu.base_linear.cross(&nu.base_angular));
            for &j in model.joint_order() {
                let joint = &joints[j];
                let sq = subspace[j] * nu.joint_velocities[j];
                velocity[joint.child] = velocity[joint.parent] + sq;
                bias_accel[joint.child] = bias_accel[joint.parent] + motion_cross(&velocity[joint.child], &sq);
            }
        }
        Self {
            poses,
            origin,
            subspace,
            velocity,
            bias_accel,
            nv: model.nv(),
        }
    }

    fn link_inertia(&self, model: &RobotModel, link: usize) -> Matrix6<f64> {
        let l = &model.links()[link];
        let pose = &self.poses[link];
        let r = pose.rotation.matrix();
        spatial_inertia(l.mass, &pose.transform_point(&l.com), &(r * l.inertia * r.transpose()), &self.origin)
    }

    /// Composite-rigid-body mass matrix, mixed coordinates.
    pub fn mass_matrix(&self, model: &RobotModel) -> DMatrix<f64> {
        let joints = model.joints();
        let mut composite: Vec<Matrix6<f64>> = (0..model.links().len()).map(|i| self.link_inertia(model, i)).collect();
        for &j in model.joint_order().iter().rev() {
            let c = composite[joints[j].child];
            composite[joints[j].parent] += c;
        }
        let mut m = DMatrix::zeros(self.nv, self.nv);
        m.fixed_view_mut::<6, 6>(0, 0).copy_from(&composite[model.base()]);
        for (j, joint) in joints.iter().enumerate() {
            let f = composite[joint.child] * self.subspace[j];
            for r in 0..6 {
                m[(r, 6 + j)] = f[r];
                m[(6 + j, r)] = f[r];
            }
            let mut link = joint.child;
            while let Some(k) = model.parent_joint(link) {
                let v = self.subspace[k].dot(&f);
                m[(6 + k, 6 + j)] = v;
                m[(6 + j, 6 + k)] = v;
                link = joints[k].parent;
            }
        }
        permute_matrix(&m)
    }

    /// Recursive Newton–Euler bias `h(q, ν)` for the supplied gravity.
    pub fn bias(&self, model: &RobotModel, gravity: &Vector3<f64>) -> DVector<f64> {
        let joints = model.joints();
        let g = stack(Vector3::zeros(), *gravity);
        let mut force: Vec<Vector6<f64>> = (0..model.links().len())
            .map(|i| {
                let inertia = self.link_inertia(model, i);
                let v = self.velocity[i];
                inertia * (self.bias_accel[i] - g) + force_cross(&v, &(inertia * v))
            })
            .collect();
        let mut h = DVector::zeros(self.nv);
        for &j in model.joint_order().iter().rev() {
            let f = force[joints[j].child];
            h[6 + j] = self.subspace[j].dot(&f);
            force[joints[j].parent] += f;
        }
        let fb = force[model.base()];
        for i in 0..6 {
            h[i] = fb[spatial_index(i)];
        }
        h
    }

    /// Mixed Jacobian (linear rows first) of a point rigidly attached to `link`.
    pub fn point_jacobian(&self, model: &RobotModel, link: usize, point: &Vector3<f64>) -> Matrix6xX<f64> {
        let mut jac = Matrix6xX::zeros(self.nv);
        let r = point - self.origin;
        for i in 0..3 {
            jac[(i, i)] = 1.0;
            jac[(3 + i, 3 + i)] = 1.0;
        }
        jac.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-skew(&r)));
        let joints = model.joints();
        let mut cur = link;
        while let Some(j) = model.parent_joint(cur) {
            let s = self.subspace[j];
            let a = s.fixed_rows::<3>(0).into_owned();
            let lin = s.fixed_rows::<3>(3) + a.cross(&r);
            jac.fixed_view_mut::<3, 1>(0, 6 + j).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, 6 + j).copy_from(&a);
            cur = joints[j].parent;
        }
        jac
    }

    /// `J̇ ν` for a point on `link`: (classical linear acceleration, angular acceleration) at `ν̇ = 0`.
    pub fn point_jdot_nu(&self, link: usize, point: &Vector3<f64>) -> Vector6<f64> {
        let v = self.velocity[link];
        let a = self.bias_accel[link];
        let w = v.fixed_rows::<3>(0).into_owned();
        let r = point - self.origin;
        let vp = v.fixed_rows::<3>(3) + w.cross(&r);
        let dw = a.fixed_rows::<3>(0).into_owned();
        let lin = a.fixed_rows::<3>(3) + dw.cross(&r) + w.cross(&vp);
        stack(lin, dw)
    }

    pub fn frame_pose(&self, model: &RobotModel, id: FrameId) -> Pose<f64> {
        let f = model.frame(id);
        self.poses[f.link].compose(&f.offset)
    }

    pub fn frame_jacobian(&self, model: &RobotModel, id: FrameId) -> Matrix6xX<f64> {
        let f = model.frame(id);
        self.point_jacobian(model, f.link, &self.frame_pose(model, id).position)
    }

    pub fn frame_jdot_nu(&self, model: &RobotModel, id: FrameId) -> Vector6<f64> {
        let f = model.frame(id);
        self.point_jdot_nu(f.link, &self.frame_pose(model, id).position)
    }

    fn link_com(&self, model: &RobotModel, link: usize) -> Vector3<f64> {
        self.poses[link].transform_point(&model.links()[link].com)
    }

    pub fn com(&self, model: &RobotModel) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (i, l) in model.links().iter().enumerate() {
            acc += l.mass * self.link_com(model, i);
        }
        acc / model.total_mass()
    }

    pub fn com_jacobian(&self, model: &RobotModel) -> Matrix3xX<f64> {
        let mut jac = Matrix3xX::zeros(self.nv);
        for (i, l) in model.links().iter().enumerate() {
            let pj = self.point_jacobian(model, i, &self.link_com(model, i));
            jac += pj.fixed_rows::<3>(0) * l.mass;
        }
        jac / model.total_mass()
    }

    pub fn com_jdot_nu(&self, model: &RobotModel) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (i, l) in model.links().iter().enumerate() {
            acc += l.mass * self.point_jdot_nu(i, &self.link_com(model, i)).fixed_rows::<3>(0);
        }
        acc / model.total_mass()
    }
}

fn permute_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(n, n, |i, j| m[(spatial_index(i), spatial_index(j))])
}

// ---------------------------------------------------------------------------
// Free-function entry points

pub fn compute_mass_matrix(model: &RobotModel, q: &Configuration) -> DMatrix<f64> {
    Kinematics::new(model, q, None).mass_matrix(model)
}

/// `h(q, ν)` under standard gravity.
pub fn compute_bias(model: &RobotModel, q: &Configuration, nu: &Velocity) -> DVector<f64> {
    compute_bias_with_gravity(model, q, nu, &STANDARD_GRAVITY)
}

pub fn compute_bias_with_gravity(model: &RobotModel, q: &Configuration, nu: &Velocity, gravity: &Vector3<f64>) -> DVector<f64> {
    Kinematics::new(model, q, Some(nu)).bias(model, gravity)
}

pub fn compute_frame_jacobian(model: &RobotModel, q: &Configuration, frame: &str) -> Result<FrameJacobian, ModelError> {
    let id = model.frame_id(frame)?;
    check_dof(model, q)?;
    let kin = Kinematics::new(model, q, None);
    Ok(FrameJacobian {
        frame: frame.to_string(),
        matrix: kin.frame_jacobian(model, id),
    })
}

pub fn compute_com(model: &RobotModel, q: &Configuration) -> Vector3<f64> {
    Kinematics::new(model, q, None).com(model)
}

pub fn compute_com_jacobian(model: &RobotModel, q: &Configuration) -> Matrix3xX<f64> {
    Kinematics::new(model, q, None).com_jacobian(model)
}

pub fn compute_frame_jdot_nu(model: &RobotModel, q: &Configuration, nu: &Velocity, frame: &str) -> Result<Vector6<f64>, ModelError> {
    let id = model.frame_id(frame)?;
    check_dof(model, q)?;
    Ok(Kinematics::new(model, q, Some(nu)).frame_jdot_nu(model, id))
}

pub fn compute_com_jdot_nu(model: &RobotModel, q: &Configuration, nu: &Velocity) -> Vector3<f64> {
    Kinematics::new(model, q, Some(nu)).com_jdot_nu(model)
}

/// Total linear momentum and angular momentum about the system CoM.
pub fn centroidal_momentum(model: &RobotModel, q: &Configuration, nu: &Velocity) -> (Vector3<f64>, Vector3<f64>) {
    let kin = Kinematics::new(model, q, Some(nu));
    let com = kin.com(model);
    let mut p = Vector3::zeros();
    let mut l = Vector3::zeros();
    for (i, link) in model.links().iter().enumerate() {
        let c = kin.link_com(model, i);
        let jac = kin.point_jacobian(model, i, &c);
        let twist = &jac * nu.to_vector();
        let v = twist.fixed_rows::<3>(0).into_owned();
        let w = twist.fixed_rows::<3>(3).into_owned();
        let r = kin.poses[i].rotation.matrix();
        p += link.mass * v;
        l += r * link.inertia * r.transpose() * w + (c - com).cross(&(link.mass * v));
    }
    (p, l)
}

/// Kinetic energy `½ νᵀ M ν`.
pub fn kinetic_energy(model: &RobotModel, q: &Configuration, nu: &Velocity) -> f64 {
    let v = nu.to_vector();
    0.5 * v.dot(&(compute_mass_matrix(model, q) * &v))
}
