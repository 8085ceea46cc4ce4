//! # throwrl
//!
//! A library for learning robotic object throwing against a built-in
//! ground-truth simulator. A 7-DoF serial arm accelerates an object along a
//! joint-space trajectory and releases it with a gripper that opens after a
//! stochastic delay; the object then flies ballistically under gravity and
//! aerodynamic drag toward an annular target region.
//!
//! The pipeline learns the task from a handful of throws:
//!
//! 1. [`world`] executes throws and records free-flight trajectories.
//! 2. [`dynamics`] fits one Gaussian process per velocity component to the
//!    observed velocity changes and exposes a one-step stochastic model.
//! 3. [`delayest`] estimates the release-delay distribution by Bayesian
//!    optimization of the simulated-vs-recorded landing discrepancy.
//! 4. [`mcopt`] optimizes a squashed RBF release-speed policy by
//!    differentiating a Monte Carlo particle rollout through the learned
//!    model (reparameterized sampling, pathwise gradients).
//! 5. [`baselines`] provides the closed-form ballistic policy and a
//!    feed-forward network regression baseline for comparison.
//! 6. [`harness`] orchestrates trials, evaluation and artifact emission.

pub mod baselines;
pub mod config;
pub mod delayest;
pub mod domain;
pub mod dynamics;
pub mod gp;
pub mod harness;
pub mod kinematics;
pub mod mcopt;
pub mod policy;
pub mod rng;
pub mod world;

pub use config::Config;
pub use domain::{
    CartesianState, CostParams, ExtendedState, PhysicalConstants, ReleaseGeometry, TargetDomain,
    TargetPoint,
};
pub use rng::RngStream;

/// Errors produced anywhere in the pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("degenerate target at the origin: polar angle undefined")]
    DegenerateTarget,
    #[error("joint {joint} violates {what} limit: {value:.4} outside [{lo:.4}, {hi:.4}]")]
    JointLimit {
        joint: usize,
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("release speed {0:.3} m/s exceeds the joint-velocity-limited maximum {1:.3} m/s")]
    SpeedInfeasible(f64, f64),
    #[error("time {0:.4} s outside the trajectory interval [0, {1:.4}] s")]
    TimeOutOfRange(f64, f64),
    #[error("simulated flight did not terminate within {0:.1} s")]
    FlightTimeout(f64),
    #[error("release state at z = {0:.3} m is at or below the landing plane z = {1:.3} m")]
    ReleaseBelowGround(f64, f64),
    #[error("trajectory never crosses the landing plane")]
    NoCrossing,
    #[error("ballistic target unreachable: nonpositive denominator {0:.4}")]
    BallisticUnreachable(f64),
    #[error("Gram matrix factorization failed after jitter escalation")]
    Factorization,
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("irregular trajectory sampling: expected period {expected:.6} s, found {found:.6} s")]
    IrregularSampling { expected: f64, found: f64 },
    #[error("non-finite gradient for parameter index {0}")]
    NonFiniteGradient(usize),
    #[error("non-finite loss during network training")]
    NonFiniteLoss,
    #[error("delay offset {0:.3} s exceeds the nominal release time {1:.3} s")]
    DelayExceedsRelease(f64, f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("parse error in {file}: {msg}")]
    Parse { file: String, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
