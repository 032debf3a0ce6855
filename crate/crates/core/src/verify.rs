//! Oracle suites: every algorithmic result checked against an independent
//! second computation. Shared by the unit tests, `wbc verify` and the
//! acceptance target.

use std::fmt;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Matrix6xX, Vector3, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::control_laws::{rotational_pd, GainsAngular, PoseReference};
use crate::dynamics::{
    compute_bias, compute_com, compute_com_jacobian, compute_com_jdot_nu, compute_frame_jacobian, compute_frame_jdot_nu, compute_mass_matrix,
    STANDARD_GRAVITY,
};
use crate::lie::{orientation_error_norm, skew, Pose, Rotation};
use crate::model::{fixtures, frame_pose, link_poses, load_multibody, mini_biped, Configuration, RobotModel, Velocity};
use crate::qp_solver::{QpProblem, QpSolver, QpStatus};

/// Richardson-extrapolated central difference of a vector-valued map at 0.
pub fn derivative<F: Fn(f64) -> DVector<f64>>(f: F, h: f64) -> DVector<f64> {
    let d = |h: f64| (f(h) - f(-h)) / (2.0 * h);
    (d(h / 2.0) * 4.0 - d(h)) / 3.0
}

/// Position followed by the column-major rotation matrix.
pub fn pose_vector(p: &Pose<f64>) -> DVector<f64> {
    let m = p.rotation.matrix();
    DVector::from_iterator(12, p.position.iter().copied().chain(m.iter().copied()))
}

/// Mixed twist `(v, ω)` of a world-frame pose trajectory from its derivative.
pub fn twist_from_pose_derivative(p: &Pose<f64>, d: &DVector<f64>) -> Vector6<f64> {
    let v = Vector3::new(d[0], d[1], d[2]);
    let rdot = Matrix3::from_iterator(d.iter().skip(3).copied());
    let s = rdot * p.rotation.matrix().transpose();
    let w = Vector3::new(s[(2, 1)] - s[(1, 2)], s[(0, 2)] - s[(2, 0)], s[(1, 0)] - s[(0, 1)]) * 0.5;
    Vector6::new(v.x, v.y, v.z, w.x, w.y, w.z)
}

/// Frame twist from differentiating forward kinematics along the flow of `ν`.
pub fn fd_frame_twist(model: &RobotModel, q: &Configuration, nu: &Velocity, frame: &str) -> Vector6<f64> {
    let d = derivative(|t| pose_vector(&frame_pose(model, &q.integrate(nu, t), frame).expect("frame exists")), 1e-3);
    twist_from_pose_derivative(&frame_pose(model, q, frame).expect("frame exists"), &d)
}

fn com_frame(model: &RobotModel, poses: &[Pose<f64>], i: usize) -> Pose<f64> {
    Pose::new(poses[i].rotation, poses[i].transform_point(&model.links()[i].com))
}

/// Link-wise kinetic energy from differentiated forward kinematics.
pub fn fd_kinetic_energy(model: &RobotModel, q: &Configuration, nu: &Velocity) -> f64 {
    let poses = link_poses(model, q);
    let mut total = 0.0;
    for (i, link) in model.links().iter().enumerate() {
        let d = derivative(|t| pose_vector(&com_frame(model, &link_poses(model, &q.integrate(nu, t)), i)), 1e-3);
        let tw = twist_from_pose_derivative(&com_frame(model, &poses, i), &d);
        let v = tw.fixed_rows::<3>(0);
        let w = tw.fixed_rows::<3>(3);
        let r = poses[i].rotation.matrix();
        let iw = r * link.inertia * r.transpose();
        total += 0.5 * link.mass * v.norm_squared() + 0.5 * w.dot(&(iw * w));
    }
    total
}

/// Jacobians of every link's CoM twist `(v_c, ω)`, one column per unit velocity,
/// all by differentiating forward kinematics.
pub fn fd_link_jacobians(model: &RobotModel, q: &Configuration) -> Vec<Matrix6xX<f64>> {
    let nv = model.nv();
    let poses = link_poses(model, q);
    let nl = model.links().len();
    let mut jac = vec![Matrix6xX::zeros(nv); nl];
    for k in 0..nv {
        let mut e = DVector::zeros(nv);
        e[k] = 1.0;
        let dir = Velocity::from_vector(&e).expect("nv-sized vector");
        let d = derivative(
            |t| {
                let p = link_poses(model, &q.integrate(&dir, t));
                DVector::from_iterator(12 * nl, (0..nl).flat_map(|i| pose_vector(&com_frame(model, &p, i)).data.as_vec().clone()))
            },
            1e-3,
        );
        for (i, j) in jac.iter_mut().enumerate() {
            let di = d.rows(12 * i, 12).into_owned();
            j.set_column(k, &twist_from_pose_derivative(&com_frame(model, &poses, i), &di));
        }
    }
    jac
}

fn link_spatial_mass(model: &RobotModel, poses: &[Pose<f64>], i: usize) -> DMatrix<f64> {
    let link = &model.links()[i];
    let r = poses[i].rotation.matrix();
    let mut m = DMatrix::zeros(6, 6);
    m.view_mut((0, 0), (3, 3)).copy_from(&(Matrix3::identity() * link.mass));
    m.view_mut((3, 3), (3, 3)).copy_from(&(r * link.inertia * r.transpose()));
    m
}

/// `M = Σ J_iᵀ diag(m_i I, I_i) J_i` with finite-difference link Jacobians.
pub fn fd_mass_matrix(model: &RobotModel, q: &Configuration) -> DMatrix<f64> {
    let poses = link_poses(model, q);
    let jac = fd_link_jacobians(model, q);
    let mut m = DMatrix::zeros(model.nv(), model.nv());
    for (i, j) in jac.iter().enumerate() {
        m += j.transpose() * link_spatial_mass(model, &poses, i) * j;
    }
    m
}

/// Bias from link momentum rates along the `ν̇ = 0` flow:
/// `h = Σ J_iᵀ (d/dt (m_i v_i, I_i ω_i) − (m_i g, 0))`.
pub fn fd_bias(model: &RobotModel, q: &Configuration, nu: &Velocity) -> DVector<f64> {
    let nuv = nu.to_vector();
    let nl = model.links().len();
    let momenta = |t: f64| {
        let qt = q.integrate(nu, t);
        let poses = link_poses(model, &qt);
        let jac = fd_link_jacobians(model, &qt);
        let mut out = DVector::zeros(6 * nl);
        for i in 0..nl {
            out.rows_mut(6 * i, 6).copy_from(&(link_spatial_mass(model, &poses, i) * (&jac[i] * &nuv)));
        }
        out
    };
    let rates = derivative(momenta, 1e-3);
    let jac = fd_link_jacobians(model, q);
    let mut h = DVector::zeros(model.nv());
    for (i, link) in model.links().iter().enumerate() {
        let mut w = rates.rows(6 * i, 6).into_owned();
        for k in 0..3 {
            w[k] -= link.mass * STANDARD_GRAVITY[k];
        }
        h += jac[i].transpose() * w;
    }
    h
}

/// Closed-form joint block of the planar double pendulum in [`fixtures::DOUBLE_PENDULUM`].
pub fn double_pendulum_joint_mass(q2: f64) -> Matrix2<f64> {
    let (m1, m2) = (2.0, 1.5);
    let (l1, lc1, lc2) = (0.4, 0.2, 0.15);
    let (i1, i2) = (0.02, 0.015);
    let a11 = i1 + i2 + m1 * lc1 * lc1 + m2 * (l1 * l1 + lc2 * lc2 + 2.0 * l1 * lc2 * q2.cos());
    let a12 = i2 + m2 * (lc2 * lc2 + l1 * lc2 * q2.cos());
    let a22 = i2 + m2 * lc2 * lc2;
    Matrix2::new(a11, a12, a12, a22)
}

pub fn random_state(rng: &mut impl Rng, n: usize, speed: f64) -> (Configuration, Velocity) {
    let mut v3 = |s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let rot = Rotation::exp(&v3(2.0));
    let pos = v3(1.0);
    let lin = v3(speed);
    let ang = v3(speed);
    let q = Configuration::new(Pose::new(rot, pos), DVector::from_fn(n, |_, _| rng.random_range(-1.2..1.2)));
    let nu = Velocity {
        base_linear: lin,
        base_angular: ang,
        joint_velocities: DVector::from_fn(n, |_, _| rng.random_range(-speed..speed)),
    };
    (q, nu)
}

/// Random strictly convex QP with a known feasible point.
pub fn random_qp(rng: &mut impl Rng, n: usize, m: usize, equalities: usize) -> QpProblem {
    let q = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)).qr().q();
    let eig = DVector::from_fn(n, |_, _| rng.random_range(1.0..10.0));
    let h = &q * DMatrix::from_diagonal(&eig) * q.transpose();
    let h = (&h + h.transpose()) * 0.5;
    let g = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
    let a = DMatrix::from_fn(m, n, |_, _| rng.random_range(-1.0..1.0));
    let uf = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
    let au = &a * &uf;
    let mut lower = DVector::zeros(m);
    let mut upper = DVector::zeros(m);
    for i in 0..m {
        if i < equalities {
            lower[i] = au[i];
            upper[i] = au[i];
            continue;
        }
        lower[i] = if rng.random_bool(0.8) { au[i] - rng.random_range(0.0..1.0) } else { f64::NEG_INFINITY };
        upper[i] = if rng.random_bool(0.6) { au[i] + rng.random_range(0.0..1.0) } else { f64::INFINITY };
    }
    QpProblem { h, g, a, lower, upper }
}

/// Accelerated projected gradient on the dual with adaptive restart, followed
/// by an exact equality-constrained solve on the rows it finds active.
pub fn dual_projected_gradient(p: &QpProblem, iterations: usize) -> DVector<f64> {
    let n = p.num_variables();
    let hinv = p.h.clone().try_inverse().expect("invertible H");
    // Rows as inequalities nᵀu ≥ b; equality rows carry a free multiplier.
    let mut normals = Vec::new();
    let mut rhs = Vec::new();
    let mut free = Vec::new();
    for i in 0..p.num_rows() {
        let a: DVector<f64> = p.a.row(i).transpose();
        if p.lower[i] == p.upper[i] {
            normals.push(a);
            rhs.push(p.lower[i]);
            free.push(true);
            continue;
        }
        if p.lower[i].is_finite() {
            normals.push(a.clone());
            rhs.push(p.lower[i]);
            free.push(false);
        }
        if p.upper[i].is_finite() {
            normals.push(-a);
            rhs.push(-p.upper[i]);
            free.push(false);
        }
    }
    let k = normals.len();
    if k == 0 {
        return -(&hinv * &p.g);
    }
    let mut nm = DMatrix::zeros(n, k);
    for (j, v) in normals.iter().enumerate() {
        nm.column_mut(j).copy_from(v);
    }
    let b = DVector::from_vec(rhs);
    let q = nm.transpose() * &hinv * &nm;
    let lip = q.symmetric_eigenvalues().max().max(1e-12);
    let step = 1.0 / lip;
    let primal = |mu: &DVector<f64>| &hinv * (&nm * mu - &p.g);
    let project = |mu: &mut DVector<f64>| {
        for j in 0..k {
            if !free[j] && mu[j] < 0.0 {
                mu[j] = 0.0;
            }
        }
    };
    // d(μ) = −½(Nμ − g)ᵀH⁻¹(Nμ − g) + bᵀμ, maximized.
    let grad = |mu: &DVector<f64>| &b - nm.transpose() * primal(mu);
    let mut mu = DVector::zeros(k);
    let mut yk = mu.clone();
    let mut t: f64 = 1.0;
    for _ in 0..iterations {
        let mut next = &yk + grad(&yk) * step;
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        if (&next - &mu).dot(&grad(&yk)) < 0.0 {
            t = 1.0;
            yk = next.clone();
        } else {
            yk = &next + (&next - &mu) * momentum;
            t = t_next;
        }
        mu = next;
    }
    let u = primal(&mu);
    polish_on_support(p, &hinv, &nm, &b, &free, &mu, u)
}

/// Exact KKT solve with the rows whose multiplier is clearly positive (plus
/// equalities) held tight. Keeps the first-order point if the result is worse.
fn polish_on_support(
    p: &QpProblem,
    hinv: &DMatrix<f64>,
    nm: &DMatrix<f64>,
    b: &DVector<f64>,
    free: &[bool],
    mu: &DVector<f64>,
    u: DVector<f64>,
) -> DVector<f64> {
    let scale = mu.amax().max(1.0);
    let support: Vec<usize> = (0..mu.len()).filter(|&j| free[j] || mu[j] > 1e-7 * scale).collect();
    if support.is_empty() {
        return u;
    }
    let ns = nm.select_columns(&support);
    let bs = DVector::from_iterator(support.len(), support.iter().map(|&j| b[j]));
    let schur = ns.transpose() * hinv * &ns;
    let Some(mu_s) = schur.svd(true, true).solve(&(&bs + ns.transpose() * hinv * &p.g), 1e-12).ok() else {
        return u;
    };
    let polished = hinv * (&ns * mu_s - &p.g);
    let viol = |x: &DVector<f64>| {
        let ax = &p.a * x;
        (0..p.num_rows()).map(|i| (p.lower[i] - ax[i]).max(ax[i] - p.upper[i])).fold(0.0, f64::max)
    };
    if viol(&polished) <= viol(&u).max(1e-9) {
        polished
    } else {
        u
    }
}

/// One row of the `verify` table.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub name: &'static str,
    pub cases: usize,
    /// Largest error measured over all cases.
    pub worst: f64,
    pub tolerance: f64,
    /// Cases that failed for reasons other than the measured error.
    pub failures: Vec<String>,
}

impl SuiteReport {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self {
            name,
            cases: 0,
            worst: 0.0,
            tolerance,
            failures: Vec::new(),
        }
    }

    fn record(&mut self, err: f64) {
        self.cases += 1;
        // NaN must fail.
        if !(err <= self.worst) {
            self.worst = if err.is_nan() { f64::INFINITY } else { err };
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.worst <= self.tolerance
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<34} {:>4} cases  worst {:>9.2e}  tol {:>7.1e}  {}",
            self.name,
            self.cases,
            self.worst,
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for msg in &self.failures {
            write!(f, "\n    {msg}")?;
        }
        Ok(())
    }
}

/// Error of `a` against `oracle`, relative to `max(1, |oracle|∞)`.
pub fn relative_error(a: &[f64], oracle: &[f64]) -> f64 {
    let scale = oracle.iter().fold(1.0f64, |s, x| s.max(x.abs()));
    a.iter().zip(oracle).fold(0.0f64, |e, (x, y)| e.max((x - y).abs())) / scale
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// M, h, frame and CoM Jacobians and `J̇ν` on the mini biped at `states`
/// random states, plus the analytic double-pendulum mass matrix.
pub fn dynamics_suites(seed: u64, states: usize) -> Vec<SuiteReport> {
    let model = mini_biped();
    let mut mass = SuiteReport::new("dynamics/mass_matrix", 1e-5);
    let mut bias = SuiteReport::new("dynamics/bias", 1e-5);
    let mut jac = SuiteReport::new("dynamics/jacobians", 1e-5);
    let mut jdot = SuiteReport::new("dynamics/jdot_nu", 1e-5);
    let mut pendulum = SuiteReport::new("dynamics/double_pendulum_mass", 1e-8);
    let mut rng = stream(seed, 1);
    for _ in 0..states {
        let (q, nu) = random_state(&mut rng, model.dof(), 1.0);
        let nuv = nu.to_vector();
        mass.record(relative_error(compute_mass_matrix(&model, &q).as_slice(), fd_mass_matrix(&model, &q).as_slice()));
        bias.record(relative_error(compute_bias(&model, &q, &nu).as_slice(), fd_bias(&model, &q, &nu).as_slice()));

        let mut worst_j: f64 = 0.0;
        let mut worst_jd: f64 = 0.0;
        for f in model.frames() {
            let j = compute_frame_jacobian(&model, &q, &f.name).expect("frame exists").matrix;
            worst_j = worst_j.max(relative_error((&j * &nuv).as_slice(), fd_frame_twist(&model, &q, &nu, &f.name).as_slice()));
            let jd = compute_frame_jdot_nu(&model, &q, &nu, &f.name).expect("frame exists");
            let d = derivative(
                |t| DVector::from_column_slice((compute_frame_jacobian(&model, &q.integrate(&nu, t), &f.name).expect("frame exists").matrix * &nuv).as_slice()),
                1e-3,
            );
            worst_jd = worst_jd.max(relative_error(jd.as_slice(), d.as_slice()));
        }
        let vc = compute_com_jacobian(&model, &q) * &nuv;
        let d = derivative(|t| DVector::from_column_slice(compute_com(&model, &q.integrate(&nu, t)).as_slice()), 1e-3);
        worst_j = worst_j.max(relative_error(vc.as_slice(), d.as_slice()));
        let d = derivative(|t| DVector::from_column_slice((compute_com_jacobian(&model, &q.integrate(&nu, t)) * &nuv).as_slice()), 1e-3);
        worst_jd = worst_jd.max(relative_error(compute_com_jdot_nu(&model, &q, &nu).as_slice(), d.as_slice()));
        jac.record(worst_j);
        jdot.record(worst_jd);
    }

    let dp = load_multibody(fixtures::DOUBLE_PENDULUM).expect("fixture parses");
    for _ in 0..states {
        let (mut q, _) = random_state(&mut rng, 2, 1.0);
        q.base_pose = Pose::identity();
        let mm = compute_mass_matrix(&dp, &q);
        let want = double_pendulum_joint_mass(q.joint_positions[1]);
        let got = [mm[(6, 6)], mm[(6, 7)], mm[(7, 6)], mm[(7, 7)]];
        pendulum.record(relative_error(&got, &[want[(0, 0)], want[(0, 1)], want[(1, 0)], want[(1, 1)]]));
    }
    vec![mass, bias, jac, jdot, pendulum]
}

/// Random PD problems against the dual-gradient oracle, KKT residuals and
/// bitwise determinism of repeated solves.
pub fn qp_suites(seed: u64, problems: usize) -> Vec<SuiteReport> {
    let mut objective = SuiteReport::new("qp/objective_vs_dual_oracle", 1e-6);
    let mut kkt = SuiteReport::new("qp/kkt_residuals", 1e-8);
    let mut determinism = SuiteReport::new("qp/determinism", 0.0);
    let mut rng = stream(seed, 2);
    let solver = QpSolver::default();
    for k in 0..problems {
        let n = rng.random_range(2..=20);
        let m = rng.random_range(0..=40);
        let eq = rng.random_range(0..=(n / 2).min(m));
        let p = random_qp(&mut rng, n, m, eq);
        let s = match solver.solve(&p, None) {
            Ok(s) => s,
            Err(e) => {
                objective.failures.push(format!("problem {k}: {e}"));
                continue;
            }
        };
        if s.status != QpStatus::Optimal {
            objective.failures.push(format!("problem {k}: status {}", s.status.as_str()));
            continue;
        }
        let oracle = dual_projected_gradient(&p, 60_000);
        objective.record((s.objective - p.objective(&oracle)).abs());
        kkt.record(s.kkt.stationarity.max(s.kkt.primal).max(s.kkt.complementarity));
        let again = solver.solve(&p, None).map(|b| b == s).unwrap_or(false);
        determinism.record(if again { 0.0 } else { 1.0 });
    }
    vec![objective, kkt, determinism]
}

/// Closed-loop rotational PD on SO(3) from random orientations with error
/// norm below 2.8. The loop is integrated with classical RK4 on the ambient
/// matrix `Ṙ = S(ω)R`, independently of the exponential map.
pub fn attitude_suite(seed: u64, trials: usize) -> SuiteReport {
    let mut report = SuiteReport::new("control/rotational_pd_convergence", 1e-3);
    let mut rng = stream(seed, 3);
    let gains = GainsAngular { kp_w: 3.0, kd_w: 3.0 };
    let v3 = |rng: &mut ChaCha8Rng, s: f64| Vector3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
    let mut done = 0;
    while done < trials {
        let reference = PoseReference::fixed(Pose::new(Rotation::exp(&v3(&mut rng, 2.0)), Vector3::zeros()));
        let r0 = Rotation::exp(&v3(&mut rng, 2.0));
        let e0 = orientation_error_norm(&r0, &reference.pose.rotation);
        if e0 >= 2.8 {
            continue;
        }
        let err = attitude_closed_loop(*r0.matrix(), Vector3::zeros(), &reference, &gains, 10.0);
        if !err.is_finite() || err > e0 {
            report.failures.push(format!("trial {done}: diverged from {e0:.3} to {err:.3e}"));
        }
        report.record(err);
        done += 1;
    }
    report
}

fn attitude_closed_loop(r0: Matrix3<f64>, w0: Vector3<f64>, reference: &PoseReference<f64>, g: &GainsAngular<f64>, seconds: f64) -> f64 {
    let dt = 1e-3;
    let f = |r: &Matrix3<f64>, w: &Vector3<f64>| {
        let rot = Rotation::from_matrix_unchecked(*r);
        (skew(w) * r, rotational_pd(&rot, w, reference, g))
    };
    let (mut r, mut w) = (r0, w0);
    for _ in 0..(seconds / dt).round() as usize {
        let (r1, w1) = f(&r, &w);
        let (r2, w2) = f(&(r + r1 * (dt / 2.0)), &(w + w1 * (dt / 2.0)));
        let (r3, w3) = f(&(r + r2 * (dt / 2.0)), &(w + w2 * (dt / 2.0)));
        let (r4, w4) = f(&(r + r3 * dt), &(w + w3 * dt));
        r += (r1 + r2 * 2.0 + r3 * 2.0 + r4) * (dt / 6.0);
        w += (w1 + w2 * 2.0 + w3 * 2.0 + w4) * (dt / 6.0);
    }
    orientation_error_norm(&Rotation::from_matrix_unchecked(r), &reference.pose.rotation)
}

/// The full registry at its standard sizes.
pub fn run_all(seed: u64) -> Vec<SuiteReport> {
    let mut out = dynamics_suites(seed, 100);
    out.extend(qp_suites(seed, 50));
    out.push(attitude_suite(seed, 100));
    out
}
