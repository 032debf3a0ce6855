//! Floating-base robot description, its document loader, and forward kinematics.
//!
//! The model document is TOML with four top-level keys: `base`, `links`,
//! `joints` and `frames`. See `assets/mini_biped.toml` for the annotated
//! reference document; unknown keys are rejected.

use std::collections::HashMap;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::Deserialize;
use thiserror::Error;

use crate::lie::{Pose, Rotation};

/// Annotated document for the built-in 12-DoF desk-scale biped.
pub const MINI_BIPED_DOCUMENT: &str = include_str!("../assets/mini_biped.toml");

/// Frame names every biped model must provide.
pub const ROOT_FRAME: &str = "root";
pub const LEFT_SOLE_FRAME: &str = "l_sole";
pub const RIGHT_SOLE_FRAME: &str = "r_sole";

const AXIS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("model document parse error: {0}")]
    Parse(String),
    #[error("invalid model entity `{entity}`: {reason}")]
    Validation { entity: String, reason: String },
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
}

fn invalid(entity: &str, reason: impl Into<String>) -> ModelError {
    ModelError::Validation {
        entity: entity.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    /// Center of mass in the link frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, link-frame axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    pub parent: usize,
    pub child: usize,
    /// Unit revolute axis in the joint frame.
    pub axis: Vector3<f64>,
    /// Joint frame in the parent link frame.
    pub origin: Pose<f64>,
    pub limits: (f64, f64),
    pub torque_limit: f64,
}

/// Rectangular sole centered on its frame origin.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FootGeometry {
    pub half_length: f64,
    pub half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub name: String,
    pub link: usize,
    pub offset: Pose<f64>,
    pub foot: Option<FootGeometry>,
}

/// Index of a frame inside a [`RobotModel`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameId(pub usize);

/// Kinematic tree with `n` revolute joints and `n + 1` links.
#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    links: Vec<Link>,
    joints: Vec<Joint>,
    frames: Vec<Frame>,
    base: usize,
    /// Joint whose child is the given link (`None` for the base).
    parent_joint: Vec<Option<usize>>,
    /// Joints ordered so that every joint follows the joint of its parent link.
    joint_order: Vec<usize>,
    frame_lookup: HashMap<String, usize>,
}

// ---------------------------------------------------------------------------
// Document schema

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    base: String,
    links: Vec<LinkDoc>,
    #[serde(default)]
    joints: Vec<JointDoc>,
    #[serde(default)]
    frames: Vec<FrameDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkDoc {
    name: String,
    mass: f64,
    com: [f64; 3],
    inertia: [f64; 6],
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JointDoc {
    name: String,
    parent: String,
    child: String,
    axis: [f64; 3],
    origin: [f64; 3],
    #[serde(default)]
    origin_rotation: Option<[f64; 3]>,
    limits: [f64; 2],
    torque_limit: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameDoc {
    name: String,
    link: String,
    position: [f64; 3],
    #[serde(default)]
    rotation: Option<[f64; 3]>,
    #[serde(default)]
    foot: Option<FootGeometry>,
}

fn pose_from_doc(position: [f64; 3], rotation: Option<[f64; 3]>) -> Pose<f64> {
    let rot = rotation
        .map(|r| Rotation::exp(&Vector3::from(r)))
        .unwrap_or_else(Rotation::identity);
    Pose::new(rot, Vector3::from(position))
}

/// Loads a biped model: a valid tree that also provides the `root`, `l_sole`
/// and `r_sole` frames, the soles carrying foot geometry.
pub fn load_model(text: &str) -> Result<RobotModel, ModelError> {
    let model = load_multibody(text)?;
    for name in [ROOT_FRAME, LEFT_SOLE_FRAME, RIGHT_SOLE_FRAME] {
        let id = model
            .frame_id(name)
            .map_err(|_| invalid(name, "required frame is missing"))?;
        if name != ROOT_FRAME && model.frame(id).foot.is_none() {
            return Err(invalid(name, "sole frame lacks foot geometry"));
        }
    }
    Ok(model)
}

/// Loads any floating-base tree (no frame requirements). Used for fixtures.
pub fn load_multibody(text: &str) -> Result<RobotModel, ModelError> {
    let doc: Document = toml::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    RobotModel::from_document(doc)
}

/// The built-in mini-biped.
pub fn mini_biped() -> RobotModel {
    load_model(MINI_BIPED_DOCUMENT).expect("shipped model document is valid")
}

impl RobotModel {
    fn from_document(doc: Document) -> Result<Self, ModelError> {
        let mut link_index = HashMap::new();
        let mut links = Vec::with_capacity(doc.links.len());
        for l in &doc.links {
            if link_index.insert(l.name.clone(), links.len()).is_some() {
                return Err(invalid(&l.name, "duplicate link name"));
            }
            if !(l.mass.is_finite() && l.mass > 0.0) {
                return Err(invalid(&l.name, format!("mass must be > 0, got {}", l.mass)));
            }
            let [ixx, ixy, ixz, iyy, iyz, izz] = l.inertia;
            let inertia = Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz);
            if inertia.iter().any(|x| !x.is_finite()) || inertia.cholesky().is_none() {
                return Err(invalid(&l.name, "inertia is not positive definite"));
            }
            if l.com.iter().any(|x| !x.is_finite()) {
                return Err(invalid(&l.name, "non-finite center of mass"));
            }
            links.push(Link {
                name: l.name.clone(),
                mass: l.mass,
                com: Vector3::from(l.com),
                inertia,
            });
        }
        let base = *link_index
            .get(&doc.base)
            .ok_or_else(|| invalid(&doc.base, "base link does not exist"))?;

        let mut joints = Vec::with_capacity(doc.joints.len());
        let mut parent_joint: Vec<Option<usize>> = vec![None; links.len()];
        let mut joint_names = HashMap::new();
        for j in &doc.joints {
            if joint_names.insert(j.name.clone(), joints.len()).is_some() {
                return Err(invalid(&j.name, "duplicate joint name"));
            }
            let parent = *link_index
                .get(&j.parent)
                .ok_or_else(|| invalid(&j.name, format!("unknown parent link `{}`", j.parent)))?;
            let child = *link_index
                .get(&j.child)
                .ok_or_else(|| invalid(&j.name, format!("unknown child link `{}`", j.child)))?;
            if child == base {
                return Err(invalid(&j.name, "the base link cannot be a joint child"));
            }
            if parent_joint[child].is_some() {
                return Err(invalid(&j.child, "link has more than one parent joint"));
            }
            let axis = Vector3::from(j.axis);
            if (axis.norm() - 1.0).abs() > AXIS_TOLERANCE {
                return Err(invalid(&j.name, "joint axis must have unit norm"));
            }
            if !(j.limits[0] <= j.limits[1]) {
                return Err(invalid(&j.name, "lower position limit exceeds upper limit"));
            }
            if !(j.torque_limit > 0.0) {
                return Err(invalid(&j.name, "torque limit must be > 0"));
            }
            parent_joint[child] = Some(joints.len());
            joints.push(Joint {
                name: j.name.clone(),
                parent,
                child,
                axis,
                origin: pose_from_doc(j.origin, j.origin_rotation),
                limits: (j.limits[0], j.limits[1]),
                torque_limit: j.torque_limit,
            });
        }
        for (i, pj) in parent_joint.iter().enumerate() {
            if i != base && pj.is_none() {
                return Err(invalid(&links[i].name, "link is not connected to the tree"));
            }
        }
        // Every link must reach the base without revisiting a link.
        for start in 0..links.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(j) = parent_joint[cur] {
                cur = joints[j].parent;
                steps += 1;
                if steps > links.len() {
                    return Err(invalid(&links[start].name, "kinematic cycle detected"));
                }
            }
            if cur != base {
                return Err(invalid(&links[start].name, "link does not reach the base"));
            }
        }
        let mut joint_order = Vec::with_capacity(joints.len());
        let mut frontier = vec![base];
        while let Some(link) = frontier.pop() {
            // Keep document order among siblings.
            let children: Vec<usize> = (0..joints.len()).filter(|&j| joints[j].parent == link).collect();
            for &j in children.iter().rev() {
                frontier.push(joints[j].child);
            }
            joint_order.extend(children);
        }
        joint_order.sort_by_key(|&j| depth(&parent_joint, &joints, joints[j].child));

        let mut frames = Vec::with_capacity(doc.frames.len());
        let mut frame_lookup = HashMap::new();
        for f in &doc.frames {
            if frame_lookup.insert(f.name.clone(), frames.len()).is_some() {
                return Err(invalid(&f.name, "duplicate frame name"));
            }
            let link = *link_index
                .get(&f.link)
                .ok_or_else(|| invalid(&f.name, format!("unknown link `{}`", f.link)))?;
            if let Some(foot) = f.foot {
                if !(foot.half_length > 0.0 && foot.half_width > 0.0) {
                    return Err(invalid(&f.name, "foot dimensions must be > 0"));
                }
            }
            frames.push(Frame {
                name: f.name.clone(),
                link,
                offset: pose_from_doc(f.position, f.rotation),
                foot: f.foot,
            });
        }

        Ok(Self {
            links,
            joints,
            frames,
            base,
            parent_joint,
            joint_order,
            frame_lookup,
        })
    }

    /// Number of actuated joints `n`.
    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    /// Dimension of the velocity space, `n + 6`.
    pub fn nv(&self) -> usize {
        self.joints.len() + 6
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn base(&self) -> usize {
        self.base
    }

    pub fn parent_joint(&self, link: usize) -> Option<usize> {
        self.parent_joint[link]
    }

    /// Joints in parent-before-child order.
    pub fn joint_order(&self) -> &[usize] {
        &self.joint_order
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    pub fn frame_id(&self, name: &str) -> Result<FrameId, ModelError> {
        self.frame_lookup
            .get(name)
            .map(|&i| FrameId(i))
            .ok_or_else(|| ModelError::UnknownFrame(name.to_string()))
    }

    pub fn frame(&self, id: FrameId) -> &Frame {
        &self.frames[id.0]
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    /// True when `ancestor` lies on the path from `link` to the base
    /// (a link is its own ancestor).
    pub fn joint_supports_link(&self, joint: usize, link: usize) -> bool {
        let mut cur = link;
        while let Some(j) = self.parent_joint[cur] {
            if j == joint {
                return true;
            }
            cur = self.joints[j].parent;
        }
        false
    }
}

fn depth(parent_joint: &[Option<usize>], joints: &[Joint], link: usize) -> usize {
    let mut d = 0;
    let mut cur = link;
    while let Some(j) = parent_joint[cur] {
        cur = joints[j].parent;
        d += 1;
    }
    d
}

// ---------------------------------------------------------------------------
// Configuration and velocity

/// `q = (p_B, R_B, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub base_pose: Pose<f64>,
    pub joint_positions: DVector<f64>,
}

impl Configuration {
    pub fn new(base_pose: Pose<f64>, joint_positions: DVector<f64>) -> Self {
        Self {
            base_pose,
            joint_positions,
        }
    }

    /// Group identity: zero position, identity rotation, zero joints.
    pub fn identity(n: usize) -> Self {
        Self {
            base_pose: Pose::identity(),
            joint_positions: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.joint_positions.len()
    }

    /// `q · ρ = (p_q + p_ρ, R_q R_ρ, s_q + s_ρ)`.
    pub fn compose(&self, rho: &Configuration) -> Result<Configuration, ModelError> {
        if self.dof() != rho.dof() {
            return Err(ModelError::DimensionMismatch {
                expected: self.dof(),
                got: rho.dof(),
            });
        }
        Ok(Configuration {
            base_pose: Pose::new(
                self.base_pose.rotation.compose(&rho.base_pose.rotation),
                self.base_pose.position + rho.base_pose.position,
            ),
            joint_positions: &self.joint_positions + &rho.joint_positions,
        })
    }

    /// Flows along a constant mixed velocity for `dt`:
    /// `p += v dt`, `R ← exp(S(ω) dt) R`, `s += ṡ dt`.
    pub fn integrate(&self, nu: &Velocity, dt: f64) -> Configuration {
        let rot = crate::lie::rotation_exp(&nu.base_angular, dt)
            .compose(&self.base_pose.rotation)
            .reorthonormalize();
        Configuration {
            base_pose: Pose::new(rot, self.base_pose.position + nu.base_linear * dt),
            joint_positions: &self.joint_positions + &nu.joint_velocities * dt,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.base_pose.position.iter().all(|x| x.is_finite())
            && self.base_pose.rotation.matrix().iter().all(|x| x.is_finite())
            && self.joint_positions.iter().all(|x| x.is_finite())
    }
}

/// `ν = (ṗ_B, ω_B, ṡ)`, with base velocities in inertial coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity {
    pub base_linear: Vector3<f64>,
    pub base_angular: Vector3<f64>,
    pub joint_velocities: DVector<f64>,
}

impl Velocity {
    pub fn zeros(n: usize) -> Self {
        Self {
            base_linear: Vector3::zeros(),
            base_angular: Vector3::zeros(),
            joint_velocities: DVector::zeros(n),
        }
    }

    pub fn dof(&self) -> usize {
        self.joint_velocities.len()
    }

    /// Stacked `(ṗ_B, ω_B, ṡ)`.
    pub fn to_vector(&self) -> DVector<f64> {
        let n = self.dof();
        let mut v = DVector::zeros(n + 6);
        v.fixed_rows_mut::<3>(0).copy_from(&self.base_linear);
        v.fixed_rows_mut::<3>(3).copy_from(&self.base_angular);
        v.rows_mut(6, n).copy_from(&self.joint_velocities);
        v
    }

    pub fn from_vector(v: &DVector<f64>) -> Result<Self, ModelError> {
        if v.len() < 6 {
            return Err(ModelError::DimensionMismatch {
                expected: 6,
                got: v.len(),
            });
        }
        Ok(Self {
            base_linear: v.fixed_rows::<3>(0).into_owned(),
            base_angular: v.fixed_rows::<3>(3).into_owned(),
            joint_velocities: v.rows(6, v.len() - 6).into_owned(),
        })
    }

    pub fn norm(&self) -> f64 {
        (self.base_linear.norm_squared()
            + self.base_angular.norm_squared()
            + self.joint_velocities.norm_squared())
        .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Forward kinematics

/// World poses of every link frame, indexed like `model.links()`.
pub fn link_poses(model: &RobotModel, q: &Configuration) -> Vec<Pose<f64>> {
    let mut poses = vec![Pose::identity(); model.links.len()];
    poses[model.base] = q.base_pose;
    for &j in &model.joint_order {
        let joint = &model.joints[j];
        let motion = Pose::new(
            Rotation::from_axis_angle(&joint.axis, q.joint_positions[j]),
            Vector3::zeros(),
        );
        poses[joint.child] = poses[joint.parent].compose(&joint.origin).compose(&motion);
    }
    poses
}

/// Inertial pose of a named frame.
pub fn frame_pose(model: &RobotModel, q: &Configuration, frame: &str) -> Result<Pose<f64>, ModelError> {
    let id = model.frame_id(frame)?;
    check_dof(model, q)?;
    let poses = link_poses(model, q);
    let f = model.frame(id);
    Ok(poses[f.link].compose(&f.offset))
}

/// Upright configuration with the given joint angles, the base translated
/// vertically so the soles sit (on average) at `z = 0`.
pub fn standing_configuration(model: &RobotModel, joint_positions: DVector<f64>) -> Result<Configuration, ModelError> {
    let mut q = Configuration::new(Pose::identity(), joint_positions);
    let zl = frame_pose(model, &q, LEFT_SOLE_FRAME)?.position.z;
    let zr = frame_pose(model, &q, RIGHT_SOLE_FRAME)?.position.z;
    q.base_pose.position.z = -0.5 * (zl + zr);
    Ok(q)
}

/// Joint vector from `(joint name suffix, angle)` pairs applied to both legs
/// (`l_` and `r_` prefixes); other joints stay at zero.
pub fn symmetric_posture<'a>(
    model: &RobotModel,
    angles: impl IntoIterator<Item = (&'a str, f64)>,
) -> Result<DVector<f64>, ModelError> {
    let mut s = DVector::zeros(model.dof());
    for (suffix, angle) in angles {
        for prefix in ["l_", "r_"] {
            let name = format!("{prefix}{suffix}");
            let j = model.joint_index(&name).ok_or_else(|| ModelError::Validation {
                entity: name.clone(),
                reason: "no such joint".into(),
            })?;
            s[j] = angle;
        }
    }
    Ok(s)
}

pub(crate) fn check_dof(model: &RobotModel, q: &Configuration) -> Result<(), ModelError> {
    if q.dof() != model.dof() {
        return Err(ModelError::DimensionMismatch {
            expected: model.dof(),
            got: q.dof(),
        });
    }
    Ok(())
}

/// Small multibody documents with known closed-form dynamics.
pub mod fixtures {
    /// Base link plus a planar two-link arm swinging about +y.
    pub const DOUBLE_PENDULUM: &str = r#"
base = "base"
[[links]]
name = "base"
mass = 5.0
com = [0.0, 0.0, 0.0]
inertia = [0.1, 0.0, 0.0, 0.1, 0.0, 0.1]
[[links]]
name = "upper"
mass = 2.0
com = [0.0, 0.0, -0.2]
inertia = [0.03, 0.0, 0.0, 0.02, 0.0, 0.01]
[[links]]
name = "lower"
mass = 1.5
com = [0.0, 0.0, -0.15]
inertia = [0.02, 0.0, 0.0, 0.015, 0.0, 0.005]
[[joints]]
name = "shoulder"
parent = "base"
child = "upper"
axis = [0.0, 1.0, 0.0]
origin = [0.0, 0.0, 0.0]
limits = [-3.0, 3.0]
torque_limit = 50.0
[[joints]]
name = "elbow"
parent = "upper"
child = "lower"
axis = [0.0, 1.0, 0.0]
origin = [0.0, 0.0, -0.4]
limits = [-3.0, 3.0]
torque_limit = 50.0
[[frames]]
name = "tip"
link = "lower"
position = [0.0, 0.0, -0.3]
"#;

    /// Three links with skewed axes and offsets; exercises full 3-D coupling.
    pub const THREE_LINK: &str = r#"
base = "body"
[[links]]
name = "body"
mass = 4.0
com = [0.05, -0.02, 0.1]
inertia = [0.12, 0.01, 0.0, 0.09, 0.005, 0.07]
[[links]]
name = "a"
mass = 1.3
com = [0.1, 0.02, -0.05]
inertia = [0.01, 0.001, 0.0, 0.02, 0.0, 0.015]
[[links]]
name = "b"
mass = 0.9
com = [0.0, 0.1, -0.1]
inertia = [0.008, 0.0, 0.001, 0.006, 0.0, 0.004]
[[links]]
name = "c"
mass = 0.7
com = [0.03, 0.0, 0.08]
inertia = [0.004, 0.0, 0.0, 0.005, 0.0007, 0.003]
[[joints]]
name = "j1"
parent = "body"
child = "a"
axis = [0.6, 0.0, 0.8]
origin = [0.1, 0.2, -0.1]
origin_rotation = [0.1, -0.2, 0.3]
limits = [-3.0, 3.0]
torque_limit = 50.0
[[joints]]
name = "j2"
parent = "a"
child = "b"
axis = [0.0, 1.0, 0.0]
origin = [0.3, 0.0, 0.0]
limits = [-3.0, 3.0]
torque_limit = 50.0
[[joints]]
name = "j3"
parent = "body"
child = "c"
axis = [0.0, 0.0, 1.0]
origin = [-0.1, -0.1, 0.2]
origin_rotation = [0.4, 0.0, 0.0]
limits = [-3.0, 3.0]
torque_limit = 50.0
[[frames]]
name = "tool"
link = "b"
position = [0.05, 0.2, -0.1]
rotation = [0.0, 0.3, 0.0]
"#;

    /// A single free rigid body.
    pub const SINGLE_BODY: &str = r#"
base = "body"
[[links]]
name = "body"
mass = 2.0
com = [0.1, 0.05, -0.02]
inertia = [0.05, 0.002, 0.001, 0.08, 0.003, 0.11]
[[frames]]
name = "origin"
link = "body"
position = [0.0, 0.0, 0.0]
"#;
}
