//! Joint-space throwing trajectories.
//!
//! Each moving joint follows two quintic segments: an acceleration segment
//! from rest to the release state `(q_rel, qdot_rel, 0)` at `t_r`, and a
//! deceleration segment back to rest. Zero acceleration is imposed at `t_r`
//! so the release velocity is the profile maximum. The rest configuration is
//! offset from the release configuration by half the velocity-time product,
//! which makes every profile coefficient exactly linear in the commanded
//! speed and keeps peak joint rates at their release values.

use super::dual::{Dual, Scalar};
use super::ArmModel;
use crate::domain::{CartesianState, Vec3};
use crate::{Error, Result};

/// Quintic polynomial `sum c_i t^i`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Quintic {
    c: [f64; 6],
}

impl Quintic {
    /// Unique quintic matching position, velocity and acceleration at both
    /// ends of `[0, t1]`.
    fn from_boundaries(p0: f64, v0: f64, a0: f64, p1: f64, v1: f64, a1: f64, t1: f64) -> Self {
        let t2 = t1 * t1;
        let h = p1 - p0;
        let c3 = (20.0 * h - (8.0 * v1 + 12.0 * v0) * t1 - (3.0 * a0 - a1) * t2) / (2.0 * t2 * t1);
        let c4 = (-30.0 * h + (14.0 * v1 + 16.0 * v0) * t1 + (3.0 * a0 - 2.0 * a1) * t2)
            / (2.0 * t2 * t2);
        let c5 = (12.0 * h - 6.0 * (v1 + v0) * t1 + (a1 - a0) * t2) / (2.0 * t2 * t2 * t1);
        Quintic { c: [p0, v0, a0 / 2.0, c3, c4, c5] }
    }

    fn pos(&self, t: f64) -> f64 {
        let c = &self.c;
        ((((c[5] * t + c[4]) * t + c[3]) * t + c[2]) * t + c[1]) * t + c[0]
    }

    fn vel(&self, t: f64) -> f64 {
        let c = &self.c;
        (((5.0 * c[5] * t + 4.0 * c[4]) * t + 3.0 * c[3]) * t + 2.0 * c[2]) * t + c[1]
    }

    fn acc(&self, t: f64) -> f64 {
        let c = &self.c;
        ((20.0 * c[5] * t + 12.0 * c[4]) * t + 6.0 * c[3]) * t + 2.0 * c[2]
    }
}

/// Segment durations and the gripper command time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingConfig {
    /// Nominal release time (duration of the acceleration segment).
    pub t_r: f64,
    /// Duration of the deceleration segment.
    pub t_dec: f64,
    /// Time the gripper-open command is issued.
    pub t_r_cmd: f64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        TimingConfig { t_r: 0.48, t_dec: 0.5, t_r_cmd: 0.48 }
    }
}

/// A fully planned throw: joint profiles for one bearing and release speed.
#[derive(Debug, Clone)]
pub struct ThrowPlan {
    pub gamma: f64,
    pub v: f64,
    pub t_r: f64,
    pub t_r_cmd: f64,
    pub t_total: f64,
    q_rel: [f64; 7],
    /// Per-unit-speed profiles; actual joint motion scales linearly with `v`.
    seg1: [Quintic; 7],
    seg2: [Quintic; 7],
}

impl ThrowPlan {
    /// Joint positions and velocities at time `t`, generic in the speed so
    /// dual numbers can carry the derivative with respect to `v`.
    pub(crate) fn joints_at<S: Scalar>(&self, t: f64, v: S) -> ([S; 7], [S; 7]) {
        let mut q = [S::lit(0.0); 7];
        let mut qd = [S::lit(0.0); 7];
        for j in 0..7 {
            let (pos, vel) = if t <= self.t_r {
                (self.seg1[j].pos(t), self.seg1[j].vel(t))
            } else {
                let tau = t - self.t_r;
                (self.seg2[j].pos(tau), self.seg2[j].vel(tau))
            };
            q[j] = S::lit(self.q_rel[j]) + v * S::lit(pos);
            qd[j] = v * S::lit(vel);
        }
        (q, qd)
    }

    /// Joint accelerations at time `t` for the plan's own speed.
    pub fn joint_accelerations(&self, t: f64) -> [f64; 7] {
        let mut qdd = [0.0; 7];
        for j in 0..7 {
            let a = if t <= self.t_r {
                self.seg1[j].acc(t)
            } else {
                self.seg2[j].acc(t - self.t_r)
            };
            qdd[j] = self.v * a;
        }
        qdd
    }

    /// Joint positions and velocities at the plan's own speed.
    pub fn joints(&self, t: f64) -> ([f64; 7], [f64; 7]) {
        self.joints_at(t, self.v)
    }
}

/// Plan a throw toward bearing `gamma` with release speed `v`.
pub fn plan_throw(gamma: f64, v: f64, arm: &ArmModel, timing: &TimingConfig) -> Result<ThrowPlan> {
    let (q_rel, _) = super::release_joint_state(gamma, v, arm)?;
    if !(timing.t_r > 0.0 && timing.t_dec > 0.0) {
        return Err(Error::InvalidArgument("segment durations must be positive".into()));
    }
    if !(0.0..=timing.t_r).contains(&timing.t_r_cmd) {
        return Err(Error::InvalidArgument(format!(
            "t_r_cmd = {} outside [0, t_r = {}]",
            timing.t_r_cmd, timing.t_r
        )));
    }

    let mut seg1 = [Quintic { c: [0.0; 6] }; 7];
    let mut seg2 = [Quintic { c: [0.0; 6] }; 7];
    for j in 0..7 {
        // Per-unit-speed joint rate at release.
        let u = arm.qdot_star[j] / arm.v_star_norm();
        seg1[j] = Quintic::from_boundaries(
            -0.5 * timing.t_r * u,
            0.0,
            0.0,
            0.0,
            u,
            0.0,
            timing.t_r,
        );
        seg2[j] = Quintic::from_boundaries(
            0.0,
            u,
            0.0,
            0.5 * timing.t_dec * u,
            0.0,
            0.0,
            timing.t_dec,
        );
    }

    let plan = ThrowPlan {
        gamma,
        v,
        t_r: timing.t_r,
        t_r_cmd: timing.t_r_cmd,
        t_total: timing.t_r + timing.t_dec,
        q_rel,
        seg1,
        seg2,
    };
    validate_limits(&plan, arm)?;
    Ok(plan)
}

fn validate_limits(plan: &ThrowPlan, arm: &ArmModel) -> Result<()> {
    const GRID: usize = 60;
    let tol = 1e-9;
    for i in 0..=2 * GRID {
        let t = plan.t_total * i as f64 / (2.0 * GRID as f64);
        let (q, qd) = plan.joints(t);
        let qdd = plan.joint_accelerations(t);
        for j in 0..7 {
            if q[j] < arm.q_min[j] - tol || q[j] > arm.q_max[j] + tol {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    what: "position",
                    value: q[j],
                    lo: arm.q_min[j],
                    hi: arm.q_max[j],
                });
            }
            if qd[j].abs() > arm.qd_max[j] + tol {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    what: "velocity",
                    value: qd[j],
                    lo: -arm.qd_max[j],
                    hi: arm.qd_max[j],
                });
            }
            if qdd[j].abs() > arm.qdd_max[j] + tol {
                return Err(Error::JointLimit {
                    joint: j + 1,
                    what: "acceleration",
                    value: qdd[j],
                    lo: -arm.qdd_max[j],
                    hi: arm.qdd_max[j],
                });
            }
        }
    }
    Ok(())
}

/// Cartesian state of the tool tip at time `t` along the planned motion.
pub fn release_state_h(plan: &ThrowPlan, t: f64, arm: &ArmModel) -> Result<CartesianState> {
    if !(0.0..=plan.t_total + 1e-12).contains(&t) {
        return Err(Error::TimeOutOfRange(t, plan.t_total));
    }
    let (q, qd) = plan.joints(t);
    let chain = arm.chain(&q);
    let vel = chain.velocity(&qd);
    Ok(CartesianState::new(
        Vec3::new(chain.p[0], chain.p[1], chain.p[2]),
        Vec3::new(vel[0], vel[1], vel[2]),
    ))
}

/// Release state together with its derivative with respect to the commanded
/// speed, evaluated exactly via dual numbers.
pub fn release_state_h_dv(
    plan: &ThrowPlan,
    t: f64,
    arm: &ArmModel,
) -> Result<(CartesianState, Vec3, Vec3)> {
    if !(0.0..=plan.t_total + 1e-12).contains(&t) {
        return Err(Error::TimeOutOfRange(t, plan.t_total));
    }
    let (q, qd) = plan.joints_at(t, Dual::var(plan.v));
    let chain = arm.chain(&q);
    let vel = chain.velocity(&qd);
    let state = CartesianState::new(
        Vec3::new(chain.p[0].v, chain.p[1].v, chain.p[2].v),
        Vec3::new(vel[0].v, vel[1].v, vel[2].v),
    );
    let dp_dv = Vec3::new(chain.p[0].d, chain.p[1].d, chain.p[2].d);
    let dv_dv = Vec3::new(vel[0].d, vel[1].d, vel[2].d);
    Ok((state, dp_dv, dv_dv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::velocity_direction;
    use approx::assert_relative_eq;

    fn arm() -> ArmModel {
        ArmModel::default_arm(0.07, 1.50)
    }

    #[test]
    fn quintic_respects_its_boundaries() {
        let q = Quintic::from_boundaries(0.3, -0.2, 0.5, 1.1, 0.9, -0.4, 0.7);
        assert_relative_eq!(q.pos(0.0), 0.3, epsilon = 1e-12);
        assert_relative_eq!(q.vel(0.0), -0.2, epsilon = 1e-12);
        assert_relative_eq!(q.acc(0.0), 0.5, epsilon = 1e-12);
        assert_relative_eq!(q.pos(0.7), 1.1, epsilon = 1e-11);
        assert_relative_eq!(q.vel(0.7), 0.9, epsilon = 1e-11);
        assert_relative_eq!(q.acc(0.7), -0.4, epsilon = 1e-10);
    }

    #[test]
    fn plan_hits_the_release_boundary_conditions() {
        let arm = arm();
        let plan = plan_throw(0.2, 2.5, &arm, &TimingConfig::default()).unwrap();
        let (q, qd) = plan.joints(plan.t_r);
        let (q_rel, qd_rel) = super::super::release_joint_state(0.2, 2.5, &arm).unwrap();
        for j in 0..7 {
            assert_relative_eq!(q[j], q_rel[j], epsilon = 1e-9);
            assert_relative_eq!(qd[j], qd_rel[j], epsilon = 1e-9);
        }
    }

    #[test]
    fn release_acceleration_is_zero_and_velocity_peaks_at_release() {
        let arm = arm();
        let plan = plan_throw(0.0, 3.0, &arm, &TimingConfig::default()).unwrap();
        let qdd = plan.joint_accelerations(plan.t_r);
        for j in 0..7 {
            assert_relative_eq!(qdd[j], 0.0, epsilon = 1e-9);
        }
        let (_, qd_rel) = plan.joints(plan.t_r);
        for i in 0..=300 {
            let t = plan.t_total * i as f64 / 300.0;
            let (_, qd) = plan.joints(t);
            for j in 0..7 {
                assert!(qd[j].abs() <= qd_rel[j].abs() + 1e-9, "joint {j} exceeds release rate at t={t}");
            }
        }
    }

    #[test]
    fn profiles_scale_linearly_with_speed() {
        let arm = arm();
        let timing = TimingConfig::default();
        let p1 = plan_throw(0.1, 1.2, &arm, &timing).unwrap();
        let p2 = plan_throw(0.1, 2.4, &arm, &timing).unwrap();
        for i in 0..=40 {
            let t = timing.t_r * i as f64 / 40.0;
            let (_, qd1) = p1.joints(t);
            let (_, qd2) = p2.joints(t);
            for j in 0..7 {
                assert_relative_eq!(qd2[j], 2.0 * qd1[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn profiles_are_c2_at_the_junction() {
        let arm = arm();
        let plan = plan_throw(-0.3, 3.2, &arm, &TimingConfig::default()).unwrap();
        let eps = 1e-7;
        let (q_a, qd_a) = plan.joints(plan.t_r - eps);
        let (q_b, qd_b) = plan.joints(plan.t_r + eps);
        let acc_a = plan.joint_accelerations(plan.t_r - eps);
        let acc_b = plan.joint_accelerations(plan.t_r + eps);
        for j in 0..7 {
            assert_relative_eq!(q_a[j], q_b[j], epsilon = 1e-6);
            assert_relative_eq!(qd_a[j], qd_b[j], epsilon = 1e-5);
            assert_relative_eq!(acc_a[j], acc_b[j], epsilon = 1e-4);
        }
    }

    #[test]
    fn release_state_matches_the_commanded_throw() {
        let arm = arm();
        for &(gamma, v) in &[(0.0, 2.8), (0.4, 1.5), (-0.2, 3.4)] {
            let plan = plan_throw(gamma, v, &arm, &TimingConfig::default()).unwrap();
            let state = release_state_h(&plan, plan.t_r, &arm).unwrap();
            let p0 = super::super::forward_kinematics(&arm.release_config(gamma), &arm).unwrap();
            assert_relative_eq!(state.p, p0, epsilon = 1e-9);
            let expect_v = v * velocity_direction(gamma, arm.release_alpha());
            assert_relative_eq!(state.v, expect_v, epsilon = 1e-9);
        }
    }

    #[test]
    fn delayed_release_moves_along_the_velocity_direction() {
        let arm = arm();
        let v = 2.8;
        let plan = plan_throw(0.0, v, &arm, &TimingConfig::default()).unwrap();
        let at_release = release_state_h(&plan, plan.t_r, &arm).unwrap();
        let later = release_state_h(&plan, plan.t_r + 0.01, &arm).unwrap();
        let displacement = later.p - at_release.p;
        assert_relative_eq!(displacement.norm(), v * 0.01, max_relative = 0.02);
        let dir = at_release.v / at_release.v.norm();
        assert!(displacement.normalize().dot(&dir) > 0.999);
        assert_relative_eq!(later.v.norm(), v, max_relative = 0.02);
    }

    #[test]
    fn speed_derivative_matches_finite_differences() {
        let arm = arm();
        let timing = TimingConfig::default();
        for &(gamma, v, t) in &[(0.0, 2.5, 0.48), (0.3, 1.8, 0.49), (-0.4, 3.0, 0.3)] {
            let plan = plan_throw(gamma, v, &arm, &timing).unwrap();
            let (_, dp, dv) = release_state_h_dv(&plan, t, &arm).unwrap();
            let h = 1e-6;
            let hi = release_state_h(&plan_throw(gamma, v + h, &arm, &timing).unwrap(), t, &arm).unwrap();
            let lo = release_state_h(&plan_throw(gamma, v - h, &arm, &timing).unwrap(), t, &arm).unwrap();
            let fd_p = (hi.p - lo.p) / (2.0 * h);
            let fd_v = (hi.v - lo.v) / (2.0 * h);
            for k in 0..3 {
                assert_relative_eq!(dp[k], fd_p[k], epsilon = 1e-8, max_relative = 1e-5);
                assert_relative_eq!(dv[k], fd_v[k], epsilon = 1e-8, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn out_of_range_times_are_rejected() {
        let arm = arm();
        let plan = plan_throw(0.0, 2.0, &arm, &TimingConfig::default()).unwrap();
        assert!(release_state_h(&plan, -0.01, &arm).is_err());
        assert!(release_state_h(&plan, plan.t_total + 0.01, &arm).is_err());
    }

    #[test]
    fn speeds_beyond_the_joint_limits_are_rejected_with_the_joint() {
        let arm = arm();
        let err = plan_throw(0.0, arm.max_release_speed() * 1.05, &arm, &TimingConfig::default())
            .unwrap_err();
        assert!(matches!(err, Error::SpeedInfeasible(..)));
    }
}
