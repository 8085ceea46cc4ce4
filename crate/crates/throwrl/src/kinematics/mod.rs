//! Serial-arm forward kinematics, the analytical position Jacobian, the
//! release joint state, and polynomial throwing trajectories.
//!
//! The arm is a 7-DoF manipulator described by a modified
//! Denavit-Hartenberg table (per-link transform
//! `RotX(alpha) TransX(a) RotZ(theta) TransZ(d)`) plus a tool-tip offset
//! expressed in the flange frame. Throws move only joints 2, 4 and 6; the
//! base joint orients the motion plane toward the target bearing.

mod dual;
mod profile;

pub use dual::{Dual, Scalar};
pub use profile::{plan_throw, release_state_h, release_state_h_dv, ThrowPlan, TimingConfig};

use nalgebra::SMatrix;

use crate::domain::Vec3;
use crate::{Error, Result};

pub type Jacobian = SMatrix<f64, 3, 7>;

/// One modified-DH row: link offset `a`, joint offset `d`, twist `alpha`.
#[derive(Debug, Clone, Copy)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
}

/// Kinematic and limit description of the arm, with the throw-specific
/// release configuration baked in.
#[derive(Debug, Clone)]
pub struct ArmModel {
    /// Seven joint rows followed by the fixed flange row.
    pub dh: [DhRow; 8],
    /// Tool-tip offset in the flange frame, meters.
    pub tool: Vec3,
    /// Release configuration template; the first joint is replaced by the
    /// target bearing.
    pub q_rel: [f64; 7],
    /// Joint-velocity direction at release. Joints 1, 3, 5 and 7 are
    /// motionless.
    pub qdot_star: [f64; 7],
    pub q_min: [f64; 7],
    pub q_max: [f64; 7],
    pub qd_max: [f64; 7],
    pub qdd_max: [f64; 7],
    v_star: Vec3,
    v_star_norm: f64,
    alpha_release: f64,
}

const FRANKA_DH: [DhRow; 8] = [
    DhRow { a: 0.0, d: 0.333, alpha: 0.0 },
    DhRow { a: 0.0, d: 0.0, alpha: -std::f64::consts::FRAC_PI_2 },
    DhRow { a: 0.0, d: 0.316, alpha: std::f64::consts::FRAC_PI_2 },
    DhRow { a: 0.0825, d: 0.0, alpha: std::f64::consts::FRAC_PI_2 },
    DhRow { a: -0.0825, d: 0.384, alpha: -std::f64::consts::FRAC_PI_2 },
    DhRow { a: 0.0, d: 0.0, alpha: std::f64::consts::FRAC_PI_2 },
    DhRow { a: 0.088, d: 0.0, alpha: std::f64::consts::FRAC_PI_2 },
    DhRow { a: 0.0, d: 0.107, alpha: 0.0 },
];

const FRANKA_Q_MIN: [f64; 7] = [-2.8973, -1.7628, -2.8973, -3.0718, -2.8973, -0.0175, -2.8973];
const FRANKA_Q_MAX: [f64; 7] = [2.8973, 1.7628, 2.8973, -0.0698, 2.8973, 3.7525, 2.8973];
const FRANKA_QD_MAX: [f64; 7] = [2.1750, 2.1750, 2.1750, 2.1750, 2.6100, 2.6100, 2.6100];
const FRANKA_QDD_MAX: [f64; 7] = [15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0];

/// Release configuration with the base joint at zero: the arm nearly fully
/// extended upward, second joint tilted back, elbow bent a quarter turn.
fn release_template() -> [f64; 7] {
    [
        0.0,
        -25.0 / 180.0 * std::f64::consts::PI,
        0.0,
        -std::f64::consts::FRAC_PI_4,
        0.0,
        std::f64::consts::PI,
        0.0,
    ]
}

impl ArmModel {
    /// The default 7-DoF arm with the tool tip calibrated so that the release
    /// point sits exactly at `(l_r, 0, z_rel)` for bearing zero.
    pub fn default_arm(l_r: f64, z_rel: f64) -> Self {
        let mut arm = ArmModel {
            dh: FRANKA_DH,
            tool: Vec3::zeros(),
            q_rel: release_template(),
            qdot_star: [0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0],
            q_min: FRANKA_Q_MIN,
            q_max: FRANKA_Q_MAX,
            qd_max: FRANKA_QD_MAX,
            qdd_max: FRANKA_QDD_MAX,
            v_star: Vec3::zeros(),
            v_star_norm: 0.0,
            alpha_release: 0.0,
        };
        // Tool calibration: place the tool tip at the nominal release point.
        let (r_flange, p_flange) = arm.flange_frame(&arm.q_rel);
        let target = Vec3::new(l_r, 0.0, z_rel);
        let delta = target - p_flange;
        arm.tool = r_flange.transpose() * delta;
        arm.finish_setup();
        arm
    }

    fn finish_setup(&mut self) {
        let jac = self.jacobian_unchecked(&self.q_rel);
        let qd = nalgebra::SVector::<f64, 7>::from_column_slice(&self.qdot_star);
        let mut v_star: Vec3 = jac * qd;
        // Orient the joint-velocity direction so the throw points along +x
        // at bearing zero.
        if v_star.x < 0.0 {
            for w in &mut self.qdot_star {
                *w = -*w;
            }
            v_star = -v_star;
        }
        self.v_star = v_star;
        self.v_star_norm = v_star.norm();
        assert!(
            self.v_star_norm > 1e-6,
            "degenerate release direction: |J qdot*| = {}",
            self.v_star_norm
        );
        self.alpha_release = v_star.z.atan2(v_star.x.hypot(v_star.y));
    }

    /// Cartesian velocity per unit joint speed along `qdot_star`.
    pub fn v_star(&self) -> Vec3 {
        self.v_star
    }

    pub fn v_star_norm(&self) -> f64 {
        self.v_star_norm
    }

    /// Intrinsic elevation of the release velocity above the horizontal.
    pub fn release_alpha(&self) -> f64 {
        self.alpha_release
    }

    /// Maximum release speed reachable under the joint velocity limits.
    pub fn max_release_speed(&self) -> f64 {
        let mut v_max = f64::INFINITY;
        for j in 0..7 {
            if self.qdot_star[j] != 0.0 {
                v_max = v_max.min(self.qd_max[j] * self.v_star_norm / self.qdot_star[j].abs());
            }
        }
        v_max
    }

    /// Release configuration for a target bearing.
    pub fn release_config(&self, gamma: f64) -> [f64; 7] {
        let mut q = self.q_rel;
        q[0] = gamma;
        q
    }

    pub fn check_limits(&self, q: &[f64; 7]) -> Result<()> {
        for j in 0..7 {
            if q[j] < self.q_min[j] || q[j] > self.q_max[j] {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    what: "position",
                    value: q[j],
                    lo: self.q_min[j],
                    hi: self.q_max[j],
                });
            }
        }
        Ok(())
    }

    /// Flange frame (rotation and origin) for a configuration.
    fn flange_frame(&self, q: &[f64; 7]) -> (nalgebra::Matrix3<f64>, Vec3) {
        let mut r = [[0.0; 3]; 3];
        r[0][0] = 1.0;
        r[1][1] = 1.0;
        r[2][2] = 1.0;
        let mut frame = Frame::<f64> { r, t: [0.0; 3] };
        for (i, row) in self.dh.iter().enumerate() {
            frame = frame.dh_step(row.alpha, row.a, if i < 7 { q[i] } else { 0.0 }, row.d);
        }
        let rot = nalgebra::Matrix3::from_fn(|i, j| frame.r[i][j]);
        (rot, Vec3::new(frame.t[0], frame.t[1], frame.t[2]))
    }

    /// Tool-tip position and per-joint axes/origins, generic over the scalar.
    pub(crate) fn chain<S: dual::Scalar>(&self, q: &[S; 7]) -> Chain<S> {
        let one = S::lit(1.0);
        let zero = S::lit(0.0);
        let mut frame = Frame {
            r: [[one, zero, zero], [zero, one, zero], [zero, zero, one]],
            t: [zero, zero, zero],
        };
        let mut axes = [[zero; 3]; 7];
        let mut origins = [[zero; 3]; 7];
        for (i, row) in self.dh.iter().enumerate() {
            frame = frame.rot_x_const(row.alpha).trans_x_const(row.a);
            if i < 7 {
                axes[i] = [frame.r[0][2], frame.r[1][2], frame.r[2][2]];
                origins[i] = frame.t;
                frame = frame.rot_z(q[i]);
            }
            frame = frame.trans_z_const(row.d);
        }
        let tool = [S::lit(self.tool.x), S::lit(self.tool.y), S::lit(self.tool.z)];
        let p = frame.apply(&tool);
        Chain { p, axes, origins }
    }

    fn jacobian_unchecked(&self, q: &[f64; 7]) -> Jacobian {
        let chain = self.chain(q);
        let mut jac = Jacobian::zeros();
        for j in 0..7 {
            let col = chain.column(j);
            jac[(0, j)] = col[0];
            jac[(1, j)] = col[1];
            jac[(2, j)] = col[2];
        }
        jac
    }
}

/// Tool position plus joint axis data, sufficient for position and velocity.
pub(crate) struct Chain<S: dual::Scalar> {
    pub p: [S; 3],
    axes: [[S; 3]; 7],
    origins: [[S; 3]; 7],
}

impl<S: dual::Scalar> Chain<S> {
    /// Jacobian column `j`: `axis_j x (p_tool - origin_j)`.
    fn column(&self, j: usize) -> [S; 3] {
        let a = self.axes[j];
        let r = [
            self.p[0] - self.origins[j][0],
            self.p[1] - self.origins[j][1],
            self.p[2] - self.origins[j][2],
        ];
        [
            a[1] * r[2] - a[2] * r[1],
            a[2] * r[0] - a[0] * r[2],
            a[0] * r[1] - a[1] * r[0],
        ]
    }

    /// Cartesian tool velocity for joint rates `qd`.
    pub fn velocity(&self, qd: &[S; 7]) -> [S; 3] {
        let mut v = [S::lit(0.0); 3];
        for j in 0..7 {
            let col = self.column(j);
            for k in 0..3 {
                v[k] = v[k] + col[k] * qd[j];
            }
        }
        v
    }
}

/// Rotation + translation pair generic over the scalar type.
struct Frame<S: dual::Scalar> {
    r: [[S; 3]; 3],
    t: [S; 3],
}

impl<S: dual::Scalar> Frame<S> {
    fn rot_x_const(self, alpha: f64) -> Self {
        let (sa, ca) = (S::lit(alpha.sin()), S::lit(alpha.cos()));
        let mut r = self.r;
        for i in 0..3 {
            let (c1, c2) = (self.r[i][1], self.r[i][2]);
            r[i][1] = c1 * ca + c2 * sa;
            r[i][2] = c2 * ca - c1 * sa;
        }
        Frame { r, t: self.t }
    }

    fn rot_z(self, theta: S) -> Self {
        let (st, ct) = (theta.sin(), theta.cos());
        let mut r = self.r;
        for i in 0..3 {
            let (c0, c1) = (self.r[i][0], self.r[i][1]);
            r[i][0] = c0 * ct + c1 * st;
            r[i][1] = c1 * ct - c0 * st;
        }
        Frame { r, t: self.t }
    }

    fn trans_x_const(self, a: f64) -> Self {
        let a = S::lit(a);
        let mut t = self.t;
        for i in 0..3 {
            t[i] = t[i] + self.r[i][0] * a;
        }
        Frame { r: self.r, t }
    }

    fn trans_z_const(self, d: f64) -> Self {
        let d = S::lit(d);
        let mut t = self.t;
        for i in 0..3 {
            t[i] = t[i] + self.r[i][2] * d;
        }
        Frame { r: self.r, t }
    }

    fn dh_step(self, alpha: f64, a: f64, theta: S, d: f64) -> Self {
        self.rot_x_const(alpha).trans_x_const(a).rot_z(theta).trans_z_const(d)
    }

    fn apply(&self, local: &[S; 3]) -> [S; 3] {
        let mut out = self.t;
        for i in 0..3 {
            for k in 0..3 {
                out[i] = out[i] + self.r[i][k] * local[k];
            }
        }
        out
    }
}

/// Tool-tip position for a joint configuration.
pub fn forward_kinematics(q: &[f64; 7], arm: &ArmModel) -> Result<Vec3> {
    arm.check_limits(q)?;
    let chain = arm.chain(q);
    Ok(Vec3::new(chain.p[0], chain.p[1], chain.p[2]))
}

/// Position Jacobian: column `j` is the partial of the tool position with
/// respect to joint `j`.
pub fn analytical_jacobian(q: &[f64; 7], arm: &ArmModel) -> Result<Jacobian> {
    arm.check_limits(q)?;
    Ok(arm.jacobian_unchecked(q))
}

/// Joint position and velocity realizing a release at bearing `gamma` with
/// Cartesian speed `v`.
pub fn release_joint_state(gamma: f64, v: f64, arm: &ArmModel) -> Result<([f64; 7], [f64; 7])> {
    if v < 0.0 {
        return Err(Error::InvalidArgument(format!("release speed must be nonnegative, got {v}")));
    }
    let v_max = arm.max_release_speed();
    if v > v_max {
        return Err(Error::SpeedInfeasible(v, v_max));
    }
    let q = arm.release_config(gamma);
    arm.check_limits(&q)?;
    let scale = v / arm.v_star_norm();
    let mut qd = [0.0; 7];
    for j in 0..7 {
        qd[j] = arm.qdot_star[j] * scale;
    }
    Ok((q, qd))
}
