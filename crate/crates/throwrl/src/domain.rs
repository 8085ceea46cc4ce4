//! Shared domain types: Cartesian states, the annular target region, release
//! geometry, the saturated task cost, and physical constants.
//!
//! All angles are in radians, lengths in meters, times in seconds.

use nalgebra::Vector3;
use rand::Rng;

use crate::{Error, Result};

pub type Vec3 = Vector3<f64>;

/// Position and velocity of the object's center of mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CartesianState {
    pub p: Vec3,
    pub v: Vec3,
}

impl CartesianState {
    pub fn new(p: Vec3, v: Vec3) -> Self {
        CartesianState { p, v }
    }

    pub fn is_finite(&self) -> bool {
        self.p.iter().chain(self.v.iter()).all(|x| x.is_finite())
    }
}

/// A target point on the landing plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetPoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl TargetPoint {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        TargetPoint { x, y, z }
    }

    pub fn vec(&self) -> Vec3 {
        Vec3::new(self.x, self.y, self.z)
    }
}

/// Object state augmented with the target it is being thrown at.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState {
    pub state: CartesianState,
    pub target: TargetPoint,
}

/// Annular sector of reachable target points at a fixed plane height,
/// parameterized by radius `l` in `[l_min, l_max]` and bearing `gamma` in
/// `[-gamma_max, gamma_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetDomain {
    pub l_min: f64,
    pub l_max: f64,
    pub gamma_max: f64,
    pub z_p: f64,
}

impl TargetDomain {
    pub fn new(l_min: f64, l_max: f64, gamma_max: f64, z_p: f64) -> Result<Self> {
        let d = TargetDomain { l_min, l_max, gamma_max, z_p };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l_min > 0.0 && self.l_min <= self.l_max) {
            return Err(Error::InvalidArgument(format!(
                "target radii must satisfy 0 < l_min <= l_max, got [{}, {}]",
                self.l_min, self.l_max
            )));
        }
        if !(0.0..=std::f64::consts::PI).contains(&self.gamma_max) {
            return Err(Error::InvalidArgument(format!(
                "gamma_max must lie in [0, pi], got {}",
                self.gamma_max
            )));
        }
        Ok(())
    }

    /// Whether a point lies inside the domain (with a small tolerance).
    pub fn contains(&self, p: &TargetPoint) -> bool {
        let tol = 1e-9;
        if (p.z - self.z_p).abs() > 1e-6 {
            return false;
        }
        match polar_of_target(p) {
            Ok((l, gamma)) => {
                l >= self.l_min - tol
                    && l <= self.l_max + tol
                    && gamma.abs() <= self.gamma_max + tol
            }
            Err(_) => false,
        }
    }

    /// Axis-aligned superset used for sampling policy basis centers:
    /// `x in [0, l_max]`, `y in [-l_max sin(gamma_max), l_max sin(gamma_max)]`.
    pub fn center_superset(&self) -> (f64, f64) {
        (self.l_max, self.l_max * self.gamma_max.sin())
    }
}

/// Fixed release-point geometry: the object is released at radius `l_r` from
/// the base axis, height `z_rel`, with velocity elevated by `alpha` above the
/// horizontal and aligned with the target bearing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseGeometry {
    pub l_r: f64,
    pub z_rel: f64,
    pub alpha: f64,
}

/// Saturation lengthscale of the task cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    pub l_c: f64,
}

impl CostParams {
    pub fn new(l_c: f64) -> Result<Self> {
        if l_c <= 0.0 {
            return Err(Error::InvalidArgument(format!("l_c must be positive, got {l_c}")));
        }
        Ok(CostParams { l_c })
    }
}

/// Gravity and air properties used for flight simulation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Gravitational acceleration, m/s^2.
    pub g: f64,
    /// Air density, kg/m^3.
    pub rho: f64,
    /// Kinematic viscosity of air, m^2/s.
    pub nu: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants { g: 9.81, rho: 1.204, nu: 1.516e-5 }
    }
}

/// Draw a target uniformly in the polar parameters `(l, gamma)`.
pub fn sample_target<R: Rng>(domain: &TargetDomain, rng: &mut R) -> TargetPoint {
    let l = rng.gen_range(domain.l_min..=domain.l_max);
    let gamma = if domain.gamma_max > 0.0 {
        rng.gen_range(-domain.gamma_max..=domain.gamma_max)
    } else {
        0.0
    };
    TargetPoint::new(l * gamma.cos(), l * gamma.sin(), domain.z_p)
}

/// Polar representation `(l, gamma)` of a target; rejects the origin where
/// the bearing is undefined.
pub fn polar_of_target(p: &TargetPoint) -> Result<(f64, f64)> {
    let l = p.x.hypot(p.y);
    if l == 0.0 {
        return Err(Error::DegenerateTarget);
    }
    Ok((l, p.y.atan2(p.x)))
}

/// Saturated distance from the target: `1 - exp(-(dx^2 + dy^2) / l_c)`.
///
/// The vertical component never contributes, so the cost depends only on the
/// horizontal miss distance and is bounded in `[0, 1)`.
pub fn saturated_cost(x: &ExtendedState, params: &CostParams) -> f64 {
    let dx = x.state.p.x - x.target.x;
    let dy = x.state.p.y - x.target.y;
    1.0 - (-(dx * dx + dy * dy) / params.l_c).exp()
}

/// Unit release-velocity direction for bearing `gamma` and elevation `alpha`:
/// `(cos a cos g, cos a sin g, sin a)`.
pub fn velocity_direction(gamma: f64, alpha: f64) -> Vec3 {
    Vec3::new(
        alpha.cos() * gamma.cos(),
        alpha.cos() * gamma.sin(),
        alpha.sin(),
    )
}
