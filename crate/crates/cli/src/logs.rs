//! `trajectory.csv` and `diagnostics.csv`: one row per control step, units in
//! `#` comment lines above a fixed header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use nalgebra::Vector3;

use wbc_core::episode::EpisodeSample;
use wbc_core::lie::Pose;
use wbc_core::model::RobotModel;

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

const TRAJECTORY_UNITS: &[&str] = &[
    "# trajectory: one row per control step (period = controller.period)",
    "# t [s]; state = gait state name; stride = completed strides; left_contact/right_contact in {0,1}",
    "# base_x..base_z [m], base_r00..base_r22 = base rotation (world from base), row-major",
    "# q_<joint> [rad]; v_base_* [m/s] and w_base_* [rad/s] in world axes; dq_<joint> [rad/s]",
    "# com_*, com_ref_* [m]",
    "# <foot>_x..z [m] sole position, <foot>_rx..rz [rad] sole rotation vector (log map); *_ref_* are references",
    "# err_root, err_left, err_right = ||R R_d^T - I||_F",
    "# tau_<joint> [N m] commanded; <foot>_fx..fz [N], <foot>_tx..tz [N m] planned contact wrench, world axes at the sole origin",
];

const DIAGNOSTICS_UNITS: &[&str] = &[
    "# diagnostics: one row per control step",
    "# qp_status in {optimal, infeasible, max_iterations}; objective = QP cost at the solution",
    "# kkt_* = stationarity, primal and complementarity residuals of the QP",
    "# friction_residual = max(C u - b) over friction rows; task_residual = |Y(u) - Y*| [m/s^2, rad/s^2]",
    "# solve_us = QP solve wall time, control_us = whole controller call [us]",
    "# newton_residual = |M dnu + h - B tau - J^T F| of the simulator step; torque_step = max |tau_t - tau_t-1| [N m]",
    "# sim_<foot>_fz [N] = normal force applied by the simulator",
];

fn xyz(prefix: &str) -> [String; 3] {
    ["x", "y", "z"].map(|a| format!("{prefix}_{a}"))
}

fn pose_columns(prefix: &str) -> Vec<String> {
    let mut v = xyz(prefix).to_vec();
    v.extend(["rx", "ry", "rz"].map(|a| format!("{prefix}_{a}")));
    v
}

/// Column names of `trajectory.csv`, in order.
pub fn trajectory_header(model: &RobotModel) -> Vec<String> {
    let joints: Vec<&str> = model.joints().iter().map(|j| j.name.as_str()).collect();
    let mut h: Vec<String> = ["t", "state", "stride", "left_contact", "right_contact"].map(String::from).to_vec();
    h.extend(xyz("base"));
    for i in 0..3 {
        for j in 0..3 {
            h.push(format!("base_r{i}{j}"));
        }
    }
    h.extend(joints.iter().map(|j| format!("q_{j}")));
    h.extend(xyz("v_base"));
    h.extend(xyz("w_base"));
    h.extend(joints.iter().map(|j| format!("dq_{j}")));
    h.extend(xyz("com"));
    h.extend(xyz("com_ref"));
    for foot in ["left", "right"] {
        h.extend(pose_columns(foot));
        h.extend(pose_columns(&format!("{foot}_ref")));
    }
    h.extend(["err_root", "err_left", "err_right"].map(String::from));
    h.extend(joints.iter().map(|j| format!("tau_{j}")));
    for foot in ["left", "right"] {
        h.extend(["fx", "fy", "fz", "tx", "ty", "tz"].map(|a| format!("{foot}_{a}")));
    }
    h
}

/// Column names of `diagnostics.csv`, in order.
pub fn diagnostics_header() -> Vec<String> {
    [
        "t",
        "step",
        "qp_status",
        "objective",
        "iterations",
        "active_set",
        "kkt_stationarity",
        "kkt_primal",
        "kkt_complementarity",
        "friction_residual",
        "task_residual",
        "solve_us",
        "control_us",
        "newton_residual",
        "torque_step",
        "sim_left_fz",
        "sim_right_fz",
    ]
    .map(String::from)
    .to_vec()
}

/// Shortest decimal that round-trips at 9 significant digits.
fn num(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return format!("{x}");
    }
    let a = x.abs();
    if (1e-3..1e6).contains(&a) {
        let digits = (8 - a.log10().floor() as i32).max(0) as usize;
        let s = format!("{x:.digits$}");
        let s = s.trim_end_matches('0');
        s.trim_end_matches('.').to_string()
    } else {
        let s = format!("{x:.8e}");
        let (m, e) = s.split_once('e').expect("exponent form");
        let m = m.trim_end_matches('0').trim_end_matches('.');
        format!("{m}e{e}")
    }
}

fn push_vec(row: &mut Vec<String>, v: impl IntoIterator<Item = f64>) {
    row.extend(v.into_iter().map(num));
}

fn push_pose(row: &mut Vec<String>, p: &Pose<f64>) {
    push_vec(row, p.position.iter().copied());
    let r: Vector3<f64> = p.rotation.log();
    push_vec(row, r.iter().copied());
}

pub fn trajectory_row(s: &EpisodeSample) -> Vec<String> {
    let mut row = vec![
        num(s.t),
        s.state.name().to_string(),
        s.stride.to_string(),
        u8::from(s.contacts.left_active).to_string(),
        u8::from(s.contacts.right_active).to_string(),
    ];
    push_vec(&mut row, s.base_pose.position.iter().copied());
    let r = s.base_pose.rotation.matrix();
    push_vec(&mut row, (0..3).flat_map(|i| (0..3).map(move |j| r[(i, j)])));
    push_vec(&mut row, s.joint_positions.iter().copied());
    push_vec(&mut row, s.velocity.iter().copied());
    push_vec(&mut row, s.com.iter().copied());
    push_vec(&mut row, s.com_ref.iter().copied());
    for (pose, reference) in [(&s.left_sole, &s.left_ref), (&s.right_sole, &s.right_ref)] {
        push_pose(&mut row, pose);
        push_pose(&mut row, reference);
    }
    push_vec(&mut row, [s.root_orientation_error, s.left_orientation_error, s.right_orientation_error]);
    push_vec(&mut row, s.input.torques.iter().copied());
    push_vec(&mut row, s.input.left_wrench.iter().copied());
    push_vec(&mut row, s.input.right_wrench.iter().copied());
    row
}

pub fn diagnostics_row(s: &EpisodeSample) -> Vec<String> {
    let d = &s.diagnostics;
    vec![
        num(s.t),
        s.step.to_string(),
        d.status.as_str().to_string(),
        num(d.objective),
        d.iterations.to_string(),
        d.active_set_size.to_string(),
        num(d.kkt_stationarity),
        num(d.kkt_primal),
        num(d.kkt_complementarity),
        num(d.friction_residual),
        num(d.task_residual),
        num(d.solve_time_us),
        num(s.control_time_us),
        num(s.newton_residual),
        num(s.torque_step),
        num(s.sim_wrenches[0][2]),
        num(s.sim_wrenches[1][2]),
    ]
}

fn open(dir: &Path, name: &str, units: &[&str], header: &[String]) -> Result<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    let mut out = BufWriter::new(file);
    for line in units {
        writeln!(out, "{line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header)?;
    Ok(w)
}

/// Streams samples to both CSV files.
pub struct LogWriter {
    trajectory: csv::Writer<BufWriter<File>>,
    diagnostics: csv::Writer<BufWriter<File>>,
}

impl LogWriter {
    pub fn create(dir: &Path, model: &RobotModel) -> Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
        Ok(Self {
            trajectory: open(dir, TRAJECTORY_FILE, TRAJECTORY_UNITS, &trajectory_header(model))?,
            diagnostics: open(dir, DIAGNOSTICS_FILE, DIAGNOSTICS_UNITS, &diagnostics_header())?,
        })
    }

    pub fn write(&mut self, s: &EpisodeSample) -> Result<()> {
        self.trajectory.write_record(trajectory_row(s))?;
        self.diagnostics.write_record(diagnostics_row(s))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.trajectory.flush()?;
        self.diagnostics.flush()?;
        Ok(())
    }
}

/// Columns of a log file read back by name.
pub struct Table {
    pub header: Vec<String>,
    pub columns: Vec<Vec<f64>>,
}

impl Table {
    /// Reads every column; non-numeric cells (the state name) become NaN.
    pub fn read(path: &Path) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let header: Vec<String> = r.headers()?.iter().map(String::from).collect();
        let mut columns = vec![Vec::new(); header.len()];
        for rec in r.records() {
            let rec = rec?;
            for (c, field) in columns.iter_mut().zip(rec.iter()) {
                c.push(field.parse().unwrap_or(f64::NAN));
            }
        }
        Ok(Self { header, columns })
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        let i = self
            .header
            .iter()
            .position(|h| h == name)
            .with_context(|| format!("missing column `{name}`"))?;
        Ok(&self.columns[i])
    }

    pub fn len(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
