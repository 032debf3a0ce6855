use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use wbc_cli::commands::output_files;
use wbc_cli::logs::{diagnostics_header, trajectory_header, Table, TRAJECTORY_FILE};
use wbc_core::model::mini_biped;

const JOINTS: [&str; 12] = [
    "l_hip_roll",
    "l_hip_pitch",
    "l_hip_yaw",
    "l_knee",
    "l_ankle_pitch",
    "l_ankle_roll",
    "r_hip_roll",
    "r_hip_pitch",
    "r_hip_yaw",
    "r_knee",
    "r_ankle_pitch",
    "r_ankle_roll",
];

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/walk_in_place.toml")
}

fn wbc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wbc"))
        .args(args)
        .env("WBC_OUTPUT_DIR", out)
        .output()
        .expect("binary runs")
}

/// The default config cut down to a fraction of a second.
fn short_config(dir: &Path, edit: impl Fn(String) -> String) -> PathBuf {
    let text = std::fs::read_to_string(default_config()).unwrap();
    let text = text.replace("strides = 5\n", "").replace("duration = 150.0", "duration = 0.3");
    let path = dir.join("short.toml");
    std::fs::write(&path, edit(text)).unwrap();
    path
}

#[test]
fn trajectory_header_is_golden() {
    let mut expected: Vec<String> = ["t", "state", "stride", "left_contact", "right_contact", "base_x", "base_y", "base_z"]
        .map(String::from)
        .to_vec();
    expected.extend((0..3).flat_map(|i| (0..3).map(move |j| format!("base_r{i}{j}"))));
    expected.extend(JOINTS.map(|j| format!("q_{j}")));
    expected.extend(["v_base_x", "v_base_y", "v_base_z", "w_base_x", "w_base_y", "w_base_z"].map(String::from));
    expected.extend(JOINTS.map(|j| format!("dq_{j}")));
    expected.extend(["com_x", "com_y", "com_z", "com_ref_x", "com_ref_y", "com_ref_z"].map(String::from));
    for foot in ["left", "left_ref", "right", "right_ref"] {
        expected.extend(["x", "y", "z", "rx", "ry", "rz"].map(|a| format!("{foot}_{a}")));
    }
    expected.extend(["err_root", "err_left", "err_right"].map(String::from));
    expected.extend(JOINTS.map(|j| format!("tau_{j}")));
    for foot in ["left", "right"] {
        expected.extend(["fx", "fy", "fz", "tx", "ty", "tz"].map(|a| format!("{foot}_{a}")));
    }
    assert_eq!(trajectory_header(&mini_biped()), expected);
    assert_eq!(expected.len(), 104);
}

#[test]
fn diagnostics_header_is_golden() {
    assert_eq!(
        diagnostics_header(),
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
    );
}

#[test]
fn default_run_completes_and_writes_every_output() {
    let out = tempfile::tempdir().unwrap();
    let o = wbc(&["run", default_config().to_str().unwrap()], out.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let files = output_files();
    assert_eq!(files.len(), 6);
    for f in files {
        let p = out.path().join(f);
        assert!(std::fs::metadata(&p).map(|m| m.len() > 0).unwrap_or(false), "missing {f}");
    }
    let t = Table::read(&out.path().join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(t.header, trajectory_header(&mini_biped()));
    // 5 strides of 24 s plus the initial balance at 1 kHz
    assert!(t.len() > 120_000, "{} rows", t.len());
    let stride = t.column("stride").unwrap();
    assert_eq!(*stride.last().unwrap(), 5.0);
}

#[test]
fn missing_model_exits_1_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), |t| t.replace("builtin:mini_biped", "robots/absent.toml"));
    let o = wbc(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("robots/absent.toml"), "{err}");
}

#[test]
fn missing_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let o = wbc(&["run", "does/not/exist.toml"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("does/not/exist.toml"));
}

#[test]
fn posture_weight_above_task_weight_warns() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), |t| t.replace("w_posture = 1e-2", "w_posture = 2.0"));
    let o = wbc(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("warning:"), "{err}");
    assert!(err.contains("w_posture"), "{err}");
}

#[test]
fn short_run_without_warnings_is_quiet() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), |t| t);
    let o = wbc(&["run", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(0));
    assert!(!String::from_utf8_lossy(&o.stderr).contains("warning"));
    let t = Table::read(&dir.path().join("out").join(TRAJECTORY_FILE)).unwrap();
    assert_eq!(t.len(), 300);
}

#[test]
fn verify_is_reproducible_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let a = wbc(&["verify", "--seed", "11"], dir.path());
    let b = wbc(&["verify", "--seed", "11"], dir.path());
    assert_eq!(a.status.code(), Some(0), "{}", String::from_utf8_lossy(&a.stdout));
    let names = |o: &Output| -> Vec<String> {
        String::from_utf8_lossy(&o.stdout)
            .lines()
            .filter(|l| l.contains(" cases "))
            .map(|l| l.split_whitespace().next().unwrap().to_string())
            .collect()
    };
    // timings are not printed, so the whole report repeats
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(
        names(&a),
        [
            "dynamics/mass_matrix",
            "dynamics/bias",
            "dynamics/jacobians",
            "dynamics/jdot_nu",
            "dynamics/double_pendulum_mass",
            "qp/objective_vs_dual_oracle",
            "qp/kkt_residuals",
            "qp/determinism",
            "control/rotational_pd_convergence",
        ]
    );
}

#[test]
fn sweep_runs_each_combination() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), |t| t);
    let out = dir.path().join("sweep");
    let o = wbc(
        &["sweep", cfg.to_str().unwrap(), "--param", "gait.lift_height=0.04,0.06", "--param", "controller.w_reg=1e-4,1e-3"],
        &out,
    );
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 5, "{summary}");
    assert!(out.join("gait.lift_height=0.06_controller.w_reg=1e-3").join(TRAJECTORY_FILE).exists());
}
