//! Ground-truth simulator standing in for the real robot and projectile.
//!
//! A throw executes a [`ThrowPlan`], opens the gripper after a delay sampled
//! from the planted true law, and integrates the free flight under gravity
//! and aerodynamic drag with a fixed-step fourth-order scheme. Trajectories
//! are recorded at the sampling period `T_s` and the landing point is the
//! linear interpolation of the crossing of the landing plane.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::domain::{CartesianState, PhysicalConstants, TargetPoint, Vec3};
use crate::kinematics::{release_state_h, ArmModel, ThrowPlan};
use crate::{Error, Result};

/// Sphere drag-coefficient correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DragLaw {
    /// Clift-Gauvin correlation, valid through the subcritical regime
    /// (`Re` up to about 3e5):
    /// `C_D = 24/Re (1 + 0.15 Re^0.687) + 0.42 / (1 + 42500 Re^-1.16)`.
    CliftGauvin,
    /// Fixed drag coefficient (0.47 is the classic sphere value).
    Constant(f64),
}

impl DragLaw {
    pub fn cd(&self, re: f64) -> f64 {
        match *self {
            DragLaw::Constant(cd) => cd,
            DragLaw::CliftGauvin => {
                if re <= 0.0 {
                    return 0.0;
                }
                24.0 / re * (1.0 + 0.15 * re.powf(0.687))
                    + 0.42 / (1.0 + 42500.0 * re.powf(-1.16))
            }
        }
    }
}

/// Geometry and mass of the thrown object plus the drag-law selector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DragModel {
    /// Object radius, m.
    pub radius: f64,
    /// Object mass, kg.
    pub mass: f64,
    pub law: DragLaw,
    pub enabled: bool,
}

impl DragModel {
    pub fn cross_section(&self) -> f64 {
        std::f64::consts::PI * self.radius * self.radius
    }
}

/// Complete description of the simulated world.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldConfig {
    pub constants: PhysicalConstants,
    pub drag: DragModel,
    /// True release delay law `Uniform[delay_lo, delay_hi]`, seconds. This is
    /// ground truth: nothing on the learner side may read it.
    pub delay_lo: f64,
    pub delay_hi: f64,
    /// Fixed integrator step, s.
    pub dt: f64,
    /// Trajectory sampling period, s.
    pub t_s: f64,
    /// Height of the landing plane, m.
    pub ground_z: f64,
    /// A landing within this horizontal distance of the target counts as a hit.
    pub hit_radius: f64,
    /// Flights longer than this abort with an error.
    pub max_flight: f64,
}

impl WorldConfig {
    pub fn from_config(cfg: &crate::Config) -> Self {
        WorldConfig {
            constants: cfg.constants(),
            drag: DragModel {
                radius: cfg.ball_radius,
                mass: cfg.ball_mass,
                law: cfg.drag_law,
                enabled: cfg.drag_enabled,
            },
            delay_lo: cfg.delay_lo,
            delay_hi: cfg.delay_hi,
            dt: cfg.integrator_step,
            t_s: cfg.t_s,
            ground_z: cfg.z_p,
            hit_radius: cfg.hit_radius,
            max_flight: 10.0,
        }
    }
}

/// One trajectory sample, time measured from the actual release instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajSample {
    pub t: f64,
    pub state: CartesianState,
}

/// Record of one executed throw. Contains only quantities observable on the
/// real system; in particular the sampled true delay is not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct ThrowRecord {
    /// Commanded release speed, m/s.
    pub v_cmd: f64,
    pub target: TargetPoint,
    /// Gripper command time used for this throw.
    pub t_r_cmd: f64,
    /// Actual release state (observable by the tracking system).
    pub release: CartesianState,
    /// Free-flight samples at period `T_s`.
    pub samples: Vec<TrajSample>,
    /// Interpolated landing point on the plane `z = ground_z`.
    pub landing: Vec3,
    pub hit: bool,
}

impl ThrowRecord {
    pub fn horizontal_error(&self) -> f64 {
        (self.landing.x - self.target.x).hypot(self.landing.y - self.target.y)
    }
}

/// Drag acceleration `-rho C_D(Re) A |v| v / (2 m)`.
pub fn drag_acceleration(
    state: &CartesianState,
    drag: &DragModel,
    constants: &PhysicalConstants,
) -> Vec3 {
    if !drag.enabled {
        return Vec3::zeros();
    }
    let speed = state.v.norm();
    if speed < 1e-12 {
        return Vec3::zeros();
    }
    let re = speed * 2.0 * drag.radius / constants.nu;
    let cd = drag.law.cd(re);
    let coeff = -0.5 * constants.rho * cd * drag.cross_section() * speed / drag.mass;
    coeff * state.v
}

fn acceleration(state: &CartesianState, world: &WorldConfig) -> Vec3 {
    Vec3::new(0.0, 0.0, -world.constants.g) + drag_acceleration(state, &world.drag, &world.constants)
}

/// Classical fourth-order step for the state `(p, v)`.
fn rk4_step(state: &CartesianState, dt: f64, world: &WorldConfig) -> CartesianState {
    let f = |s: &CartesianState| (s.v, acceleration(s, world));
    let (k1p, k1v) = f(state);
    let s2 = CartesianState::new(state.p + 0.5 * dt * k1p, state.v + 0.5 * dt * k1v);
    let (k2p, k2v) = f(&s2);
    let s3 = CartesianState::new(state.p + 0.5 * dt * k2p, state.v + 0.5 * dt * k2v);
    let (k3p, k3v) = f(&s3);
    let s4 = CartesianState::new(state.p + dt * k3p, state.v + dt * k3v);
    let (k4p, k4v) = f(&s4);
    CartesianState::new(
        state.p + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
        state.v + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v),
    )
}

/// Integrate free flight from `release` until the landing plane is crossed.
/// Returns samples at period `t_s` (starting at the release instant) and the
/// interpolated landing state.
pub fn integrate_flight(
    release: CartesianState,
    world: &WorldConfig,
) -> Result<(Vec<TrajSample>, Vec3, Vec3, f64)> {
    if release.p.z <= world.ground_z {
        return Err(Error::ReleaseBelowGround(release.p.z, world.ground_z));
    }
    let per_sample = (world.t_s / world.dt).round() as usize;
    debug_assert!(per_sample >= 1);
    let mut samples = vec![TrajSample { t: 0.0, state: release }];
    let mut prev = release;
    let mut t_prev = 0.0;
    let mut state = release;
    let mut t = 0.0;
    let mut substep = 0usize;
    while state.p.z > world.ground_z {
        if t > world.max_flight {
            return Err(Error::FlightTimeout(world.max_flight));
        }
        prev = state;
        t_prev = t;
        state = rk4_step(&state, world.dt, world);
        t += world.dt;
        substep += 1;
        if state.p.z > world.ground_z && substep % per_sample == 0 {
            samples.push(TrajSample { t, state });
        }
    }
    // Linear interpolation of the plane crossing between the last two
    // integrator states.
    let frac = if (prev.p.z - state.p.z).abs() < 1e-15 {
        0.0
    } else {
        (prev.p.z - world.ground_z) / (prev.p.z - state.p.z)
    };
    let landing_p = prev.p + frac * (state.p - prev.p);
    let landing_v = prev.v + frac * (state.v - prev.v);
    let landing_t = t_prev + frac * world.dt;
    Ok((samples, landing_p, landing_v, landing_t))
}

/// Execute a planned throw: sample the true gripper delay, release, fly, land.
pub fn execute_throw<R: Rng>(
    plan: &ThrowPlan,
    target: TargetPoint,
    arm: &ArmModel,
    world: &WorldConfig,
    rng: &mut R,
) -> Result<ThrowRecord> {
    let t_d = if world.delay_hi > world.delay_lo {
        rng.gen_range(world.delay_lo..=world.delay_hi)
    } else {
        world.delay_lo
    };
    let t_release = plan.t_r_cmd + t_d;
    let release = release_state_h(plan, t_release.min(plan.t_total), arm)?;
    let (samples, landing, _, _) = integrate_flight(release, world)?;
    let err = (landing.x - target.x).hypot(landing.y - target.y);
    Ok(ThrowRecord {
        v_cmd: plan.v,
        target,
        t_r_cmd: plan.t_r_cmd,
        release,
        samples,
        landing,
        hit: err <= world.hit_radius,
    })
}

/// Landing point of a sampled trajectory: linear interpolation between the
/// samples bracketing the crossing of `z = z_p`.
pub fn landing_of(samples: &[TrajSample], z_p: f64) -> Result<Vec3> {
    for w in samples.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if a.state.p.z == z_p {
            return Ok(a.state.p);
        }
        if (a.state.p.z > z_p) && (b.state.p.z <= z_p) {
            let frac = (a.state.p.z - z_p) / (a.state.p.z - b.state.p.z);
            return Ok(a.state.p + frac * (b.state.p - a.state.p));
        }
    }
    if let Some(last) = samples.last() {
        if last.state.p.z == z_p {
            return Ok(last.state.p);
        }
    }
    Err(Error::NoCrossing)
}

/// Nine-significant-digit decimal formatting used for all record files.
pub fn fmt9(x: f64) -> String {
    format!("{:.8e}", x)
}

/// Serialize a set of throws. Header metadata lines are prefixed with `#`;
/// rows are `t, px, py, pz, vx, vy, vz, landing` where the final interpolated
/// landing row carries flag 1.
pub fn write_throws<W: Write>(records: &[ThrowRecord], mut out: W) -> Result<()> {
    writeln!(out, "# throws = {}", records.len())?;
    for (i, rec) in records.iter().enumerate() {
        writeln!(out, "# throw = {i}")?;
        writeln!(out, "# v = {}", fmt9(rec.v_cmd))?;
        writeln!(
            out,
            "# target = {} {} {}",
            fmt9(rec.target.x),
            fmt9(rec.target.y),
            fmt9(rec.target.z)
        )?;
        writeln!(out, "# t_r_cmd = {}", fmt9(rec.t_r_cmd))?;
        writeln!(out, "# hit = {}", u8::from(rec.hit))?;
        writeln!(out, "t,px,py,pz,vx,vy,vz,landing")?;
        for s in &rec.samples {
            writeln!(
                out,
                "{},{},{},{},{},{},{},0",
                fmt9(s.t),
                fmt9(s.state.p.x),
                fmt9(s.state.p.y),
                fmt9(s.state.p.z),
                fmt9(s.state.v.x),
                fmt9(s.state.v.y),
                fmt9(s.state.v.z)
            )?;
        }
        writeln!(
            out,
            "{},{},{},{},{},{},{},1",
            fmt9(f64::NAN),
            fmt9(rec.landing.x),
            fmt9(rec.landing.y),
            fmt9(rec.landing.z),
            fmt9(0.0),
            fmt9(0.0),
            fmt9(0.0)
        )?;
    }
    Ok(())
}

/// Parse a throw-set file written by [`write_throws`].
pub fn read_throws<R: BufRead>(input: R) -> Result<Vec<ThrowRecord>> {
    let mut records: Vec<ThrowRecord> = Vec::new();
    let mut current: Option<ThrowRecord> = None;
    let err = |msg: String| Error::Parse { file: "throws".into(), msg };
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line == "t,px,py,pz,vx,vy,vz,landing" {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let meta = meta.trim();
            if let Some((key, value)) = meta.split_once('=') {
                let (key, value) = (key.trim(), value.trim());
                match key {
                    "throw" => {
                        if let Some(rec) = current.take() {
                            records.push(rec);
                        }
                        current = Some(ThrowRecord {
                            v_cmd: 0.0,
                            target: TargetPoint::new(0.0, 0.0, 0.0),
                            t_r_cmd: 0.0,
                            release: CartesianState::new(Vec3::zeros(), Vec3::zeros()),
                            samples: Vec::new(),
                            landing: Vec3::zeros(),
                            hit: false,
                        });
                    }
                    "v" => {
                        let rec = current.as_mut().ok_or_else(|| err("v before throw".into()))?;
                        rec.v_cmd = value.parse().map_err(|e| err(format!("bad v: {e}")))?;
                    }
                    "target" => {
                        let rec =
                            current.as_mut().ok_or_else(|| err("target before throw".into()))?;
                        let parts: Vec<f64> = value
                            .split_whitespace()
                            .map(|p| p.parse().map_err(|e| err(format!("bad target: {e}"))))
                            .collect::<Result<_>>()?;
                        if parts.len() != 3 {
                            return Err(err("target must have three components".into()));
                        }
                        rec.target = TargetPoint::new(parts[0], parts[1], parts[2]);
                    }
                    "t_r_cmd" => {
                        let rec =
                            current.as_mut().ok_or_else(|| err("t_r_cmd before throw".into()))?;
                        rec.t_r_cmd = value.parse().map_err(|e| err(format!("bad t_r_cmd: {e}")))?;
                    }
                    "hit" => {
                        let rec = current.as_mut().ok_or_else(|| err("hit before throw".into()))?;
                        rec.hit = value.trim() == "1";
                    }
                    _ => {}
                }
            }
            continue;
        }
        let rec = current.as_mut().ok_or_else(|| err("data row before any throw".into()))?;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 8 {
            return Err(err(format!("expected 8 columns, got {}", cols.len())));
        }
        let nums: Vec<f64> = cols[..7]
            .iter()
            .map(|c| c.trim().parse().map_err(|e| err(format!("bad number `{c}`: {e}"))))
            .collect::<Result<_>>()?;
        let state = CartesianState::new(
            Vec3::new(nums[1], nums[2], nums[3]),
            Vec3::new(nums[4], nums[5], nums[6]),
        );
        if cols[7].trim() == "1" {
            rec.landing = state.p;
        } else {
            rec.samples.push(TrajSample { t: nums[0], state });
        }
    }
    if let Some(mut rec) = current.take() {
        if let Some(first) = rec.samples.first() {
            rec.release = first.state;
        }
        records.push(rec);
    }
    for rec in &mut records {
        if let Some(first) = rec.samples.first() {
            rec.release = first.state;
        }
    }
    Ok(records)
}
