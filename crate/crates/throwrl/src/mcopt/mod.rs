//! Monte Carlo particle policy optimization.
//!
//! A batch of particles samples targets, commands release speeds through the
//! policy, maps them to release states through the planned kinematics, and
//! rolls forward through the learned one-step model with reparameterized
//! Gaussian sampling. Particles freeze once they reach the target plane; the
//! objective is the mean saturated cost of the terminal states. The gradient
//! with respect to the policy parameters is the exact pathwise derivative
//! under fixed noise draws, assembled by a reverse sweep over the rollout.

mod rollout;

pub use rollout::{gradient_of_particles, rollout, Particle};

use rand::Rng;

use crate::domain::{
    sample_target, saturated_cost, CostParams, ExtendedState, TargetDomain, TargetPoint,
};
use crate::dynamics::DynamicsModel;
use crate::kinematics::{plan_throw, release_state_h_dv, ArmModel, TimingConfig};
use crate::policy::{apply_dropout, Policy, PolicyGrad};
use crate::rng::{tags, RngStream};
use crate::{Error, Result};

/// Rollout shape: particle count, horizon, the delay model used for particle
/// initialization, and the cost lengthscale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RolloutConfig {
    pub m_particles: usize,
    /// Horizon in seconds; the step count is `t_horizon / T_s`.
    pub t_horizon: f64,
    /// Release-delay interval `U(a, a+b)` applied when `use_delay` is set.
    pub delay_a: f64,
    pub delay_b: f64,
    pub use_delay: bool,
    pub l_c: f64,
}

impl RolloutConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m_particles == 0 {
            return Err(Error::InvalidArgument("particle count must be at least 1".into()));
        }
        if self.t_horizon <= 0.0 {
            return Err(Error::InvalidArgument("horizon must be positive".into()));
        }
        if self.delay_b < 0.0 {
            return Err(Error::InvalidArgument("delay width must be nonnegative".into()));
        }
        CostParams::new(self.l_c)?;
        Ok(())
    }

    pub fn steps(&self, t_s: f64) -> usize {
        (self.t_horizon / t_s).round().max(1.0) as usize
    }
}

/// Per-iteration random streams for the optimizer.
#[derive(Debug, Clone, Copy)]
pub struct IterStreams {
    pub targets: RngStream,
    pub delays: RngStream,
    pub noise: RngStream,
}

impl IterStreams {
    pub fn for_iteration(base: RngStream, iter: usize) -> Self {
        IterStreams {
            targets: base.substream(tags::OPT_TARGETS).substream(iter as u64),
            delays: base.substream(tags::OPT_DELAYS).substream(iter as u64),
            noise: base.substream(tags::OPT_NOISE).substream(iter as u64),
        }
    }
}

/// Everything fixed across an optimization: the learned model, the arm and
/// the trajectory timing.
pub struct Rollouts<'a> {
    pub model: &'a DynamicsModel,
    pub arm: &'a ArmModel,
    pub timing: TimingConfig,
    pub cfg: RolloutConfig,
}

/// Initialization record for one particle, carrying the gradient path from
/// the commanded speed into the release state.
#[derive(Debug, Clone)]
pub struct ParticleInit {
    pub target: TargetPoint,
    pub v: f64,
    pub dp_dv: crate::domain::Vec3,
    pub dvel_dv: crate::domain::Vec3,
}

impl<'a> Rollouts<'a> {
    pub fn new(
        model: &'a DynamicsModel,
        arm: &'a ArmModel,
        timing: TimingConfig,
        cfg: RolloutConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        Ok(Rollouts { model, arm, timing, cfg })
    }

    /// Draw targets and delays, command speeds through the policy and map to
    /// release states. Target and delay draws are sequential in particle
    /// order so results do not depend on worker count.
    pub fn init_particles(
        &self,
        policy: &Policy,
        domain: &TargetDomain,
        target_stream: RngStream,
        delay_stream: RngStream,
    ) -> Result<(Vec<Particle>, Vec<ParticleInit>)> {
        let mut targets_rng = target_stream.rng();
        let mut delay_rng = delay_stream.rng();
        let mut particles = Vec::with_capacity(self.cfg.m_particles);
        let mut inits = Vec::with_capacity(self.cfg.m_particles);
        for _ in 0..self.cfg.m_particles {
            let target = sample_target(domain, &mut targets_rng);
            let v = policy.eval(&target);
            let t_release = if self.cfg.use_delay {
                let t_d = if self.cfg.delay_b > 0.0 {
                    delay_rng.gen_range(self.cfg.delay_a..=self.cfg.delay_a + self.cfg.delay_b)
                } else {
                    self.cfg.delay_a
                };
                self.timing.t_r_cmd + t_d
            } else {
                self.timing.t_r
            };
            let (particle, init) = self.release_particle(target, v, t_release)?;
            particles.push(particle);
            inits.push(init);
        }
        Ok((particles, inits))
    }

    /// Initialize one particle from an explicit command, as used both by the
    /// policy path and by delay estimation over recorded throws.
    pub fn release_particle(
        &self,
        target: TargetPoint,
        v: f64,
        t_release: f64,
    ) -> Result<(Particle, ParticleInit)> {
        let (_, gamma) = crate::domain::polar_of_target(&target)?;
        let plan = plan_throw(gamma, v, self.arm, &self.timing)?;
        let t = t_release.clamp(0.0, plan.t_total);
        let (state, dp_dv, dvel_dv) = release_state_h_dv(&plan, t, self.arm)?;
        let particle = Particle::new(ExtendedState { state, target });
        Ok((particle, ParticleInit { target, v, dp_dv, dvel_dv }))
    }

    /// Forward-only rollout to terminal extended states.
    pub fn rollout(&self, particles: &mut [Particle], noise: RngStream) -> Vec<ExtendedState> {
        rollout(particles, self.model, self.cfg.steps(self.model.t_s), noise)
    }

    /// Monte Carlo objective and its exact pathwise gradient for one batch.
    pub fn gradient(
        &self,
        policy: &Policy,
        domain: &TargetDomain,
        streams: IterStreams,
    ) -> Result<(f64, PolicyGrad)> {
        let (mut particles, inits) =
            self.init_particles(policy, domain, streams.targets, streams.delays)?;
        let steps = self.cfg.steps(self.model.t_s);
        let (j_hat, dj_dx0) =
            gradient_of_particles(&mut particles, self.model, steps, streams.noise, self.cfg.l_c);
        let mut grad = PolicyGrad::zeros(policy.n_bases());
        for (m, init) in inits.iter().enumerate() {
            let g = &dj_dx0[m];
            let dj_dv = g.0.dot(&init.dp_dv) + g.1.dot(&init.dvel_dv);
            if !dj_dv.is_finite() {
                return Err(Error::NonFiniteGradient(m));
            }
            policy.backward(&init.target, dj_dv, &mut grad);
        }
        for (idx, g) in grad.clone().iter_mut_flat().enumerate() {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient(idx));
            }
        }
        Ok((j_hat, grad))
    }
}

/// Mean saturated cost of a batch of terminal states.
pub fn objective(terminals: &[ExtendedState], l_c: f64) -> f64 {
    let params = CostParams { l_c };
    terminals.iter().map(|x| saturated_cost(x, &params)).sum::<f64>() / terminals.len() as f64
}

/// One row of the optimization trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub j_hat: f64,
    pub grad_norm: f64,
    pub dropout_p: f64,
}

/// Optimizer settings: adaptive-moment steps with a dropout schedule that
/// switches off for the final quarter of the run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptConfig {
    pub n_opt: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub dropout_p: f64,
    /// Fraction of the iterations during which dropout is active.
    pub dropout_active_frac: f64,
}

impl OptConfig {
    pub fn new(n_opt: usize, learning_rate: f64, dropout_p: f64) -> Self {
        OptConfig {
            n_opt,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            dropout_p,
            dropout_active_frac: 0.75,
        }
    }
}

/// Result of a policy optimization run.
#[derive(Debug, Clone)]
pub struct OptRun {
    pub policy: Policy,
    pub trace: Vec<TraceRow>,
    /// Set when the objective stayed above 0.999 for 100 consecutive steps.
    pub diverged: bool,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl Adam {
    fn new(dim: usize) -> Self {
        Adam { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &OptConfig) {
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

fn flatten_policy(policy: &Policy) -> Vec<f64> {
    let mut out = Vec::with_capacity(policy.n_bases() * 4 + 3);
    out.extend_from_slice(&policy.weights);
    for c in &policy.centers {
        out.extend_from_slice(c.as_slice());
    }
    out.extend_from_slice(policy.log_shape.as_slice());
    out
}

fn unflatten_policy(policy: &mut Policy, flat: &[f64]) {
    let n = policy.n_bases();
    policy.weights.copy_from_slice(&flat[..n]);
    for (i, c) in policy.centers.iter_mut().enumerate() {
        c.x = flat[n + 3 * i];
        c.y = flat[n + 3 * i + 1];
        c.z = flat[n + 3 * i + 2];
    }
    policy.log_shape.x = flat[4 * n];
    policy.log_shape.y = flat[4 * n + 1];
    policy.log_shape.z = flat[4 * n + 2];
}

fn flatten_grad(grad: &PolicyGrad) -> Vec<f64> {
    let mut out = Vec::with_capacity(grad.weights.len() * 4 + 3);
    out.extend_from_slice(&grad.weights);
    for c in &grad.centers {
        out.extend_from_slice(c.as_slice());
    }
    out.extend_from_slice(grad.log_shape.as_slice());
    out
}

/// Gradient-based policy optimization: `n_opt` iterations, each resampling
/// targets, delays and noise, applying dropout per the schedule, and taking
/// one adaptive-moment step.
pub fn optimize_policy(
    policy: &Policy,
    rollouts: &Rollouts,
    domain: &TargetDomain,
    opt: &OptConfig,
    base: RngStream,
) -> Result<OptRun> {
    let mut current = policy.clone();
    let mut adam = Adam::new(current.n_bases() * 4 + 3);
    let mut trace = Vec::with_capacity(opt.n_opt);
    let mut high_cost_run = 0usize;
    let mut diverged = false;
    let dropout_cutoff = (opt.n_opt as f64 * opt.dropout_active_frac) as usize;
    for iter in 0..opt.n_opt {
        let streams = IterStreams::for_iteration(base, iter);
        let p_drop = if opt.dropout_p > 0.0 && iter < dropout_cutoff { opt.dropout_p } else { 0.0 };
        let (dropped, mask) = apply_dropout(
            &current,
            p_drop,
            &mut base.substream(tags::OPT_DROPOUT).substream(iter as u64).rng(),
        )?;
        let (j_hat, mut grad) = rollouts.gradient(&dropped, domain, streams)?;
        // Map weight gradients back through the dropout mask.
        for i in 0..grad.weights.len() {
            grad.weights[i] *= mask[i];
        }
        let grad_norm = grad.norm();
        trace.push(TraceRow { step: iter, j_hat, grad_norm, dropout_p: p_drop });

        if j_hat > 0.999 {
            high_cost_run += 1;
            if high_cost_run >= 100 {
                diverged = true;
            }
        } else {
            high_cost_run = 0;
        }

        let mut flat = flatten_policy(&current);
        adam.step(&mut flat, &flatten_grad(&grad), opt);
        unflatten_policy(&mut current, &flat);
    }
    Ok(OptRun { policy: current, trace, diverged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{CartesianState, Vec3};
    use crate::dynamics::{build_dataset, DynamicsModel, InputMap};
    use crate::world::{execute_throw, DragLaw, DragModel, ThrowRecord, WorldConfig};
    use crate::PhysicalConstants;
    use approx::assert_relative_eq;

    fn arm() -> ArmModel {
        ArmModel::default_arm(0.07, 1.50)
    }

    fn domain() -> TargetDomain {
        TargetDomain::new(0.75, 2.4, std::f64::consts::FRAC_PI_6, -1.2).unwrap()
    }

    fn drag_free_world() -> WorldConfig {
        WorldConfig {
            constants: PhysicalConstants::default(),
            drag: DragModel {
                radius: 0.0215,
                mass: 0.02,
                law: DragLaw::CliftGauvin,
                enabled: false,
            },
            delay_lo: 0.0,
            delay_hi: 0.0,
            dt: 0.001,
            t_s: 0.01,
            ground_z: -1.2,
            hit_radius: 0.1,
            max_flight: 10.0,
        }
    }

    /// Throws executed on the drag-free world, for model fitting.
    fn drag_free_records(arm: &ArmModel, n: usize) -> Vec<ThrowRecord> {
        let world = drag_free_world();
        let timing = TimingConfig::default();
        let mut rng = RngStream::root(51).rng();
        let mut records = Vec::new();
        use rand::Rng;
        for _ in 0..n {
            let gamma = rng.gen_range(-0.5..0.5);
            let v = rng.gen_range(0.8..3.4);
            let plan = plan_throw(gamma, v, arm, &timing).unwrap();
            let target = TargetPoint::new(1.5 * gamma.cos(), 1.5 * gamma.sin(), -1.2);
            records.push(execute_throw(&plan, target, arm, &world, &mut rng).unwrap());
        }
        records
    }

    /// One shared drag-free model: fitting is the slow part of these tests
    /// and every case can run against the same fixture.
    fn fitted_model(arm: &ArmModel) -> &'static DynamicsModel {
        static MODEL: std::sync::OnceLock<DynamicsModel> = std::sync::OnceLock::new();
        MODEL.get_or_init(|| {
            let records = drag_free_records(arm, 5);
            let data = build_dataset(&records, InputMap::Velocity, 0.01).unwrap();
            DynamicsModel::fit(&data, 120).unwrap()
        })
    }

    fn micro_policy() -> Policy {
        Policy {
            weights: vec![0.8, -0.5, 1.5],
            centers: vec![
                Vec3::new(1.0, 0.3, -1.2),
                Vec3::new(1.6, -0.4, -1.2),
                Vec3::new(2.2, 0.0, -1.2),
            ],
            log_shape: Vec3::new(0.5f64.ln(), 0.5f64.ln(), 0.5f64.ln()),
            u_max: 3.5,
        }
    }

    fn cfg(m: usize, t: f64, use_delay: bool) -> RolloutConfig {
        RolloutConfig {
            m_particles: m,
            t_horizon: t,
            delay_a: 0.01,
            delay_b: 0.01,
            use_delay,
            l_c: 0.1,
        }
    }

    #[test]
    fn degenerate_delay_starts_particles_exactly_at_the_release_state() {
        let arm = arm();
        let model = fitted_model(&arm);
        let mut c = cfg(16, 1.0, true);
        c.delay_a = 0.0;
        c.delay_b = 0.0;
        let rollouts = Rollouts::new(model, &arm, TimingConfig::default(), c).unwrap();
        let policy = micro_policy();
        let base = RngStream::root(61);
        let (particles, inits) = rollouts
            .init_particles(&policy, &domain(), base.substream(1), base.substream(2))
            .unwrap();
        for (particle, init) in particles.iter().zip(&inits) {
            let (_, gamma) = crate::domain::polar_of_target(&init.target).unwrap();
            let plan = plan_throw(gamma, init.v, &arm, &TimingConfig::default()).unwrap();
            let expect = crate::kinematics::release_state_h(&plan, plan.t_r, &arm).unwrap();
            assert_relative_eq!(particle.ext.state.p, expect.p, epsilon = 1e-12);
            assert_relative_eq!(particle.ext.state.v, expect.v, epsilon = 1e-12);
        }
    }

    #[test]
    fn disabling_delay_equals_the_degenerate_delay_model() {
        let arm = arm();
        let model = fitted_model(&arm);
        let base = RngStream::root(62);

        let mut c_zero = cfg(24, 1.0, true);
        c_zero.delay_a = 0.0;
        c_zero.delay_b = 0.0;
        let r_zero = Rollouts::new(model, &arm, TimingConfig::default(), c_zero).unwrap();
        let c_off = cfg(24, 1.0, false);
        let r_off = Rollouts::new(model, &arm, TimingConfig::default(), c_off).unwrap();

        let policy = micro_policy();
        let (pa, _) =
            r_zero.init_particles(&policy, &domain(), base.substream(1), base.substream(2)).unwrap();
        let (pb, _) =
            r_off.init_particles(&policy, &domain(), base.substream(1), base.substream(2)).unwrap();
        for (a, b) in pa.iter().zip(&pb) {
            assert_eq!(a.ext.state, b.ext.state, "bitwise-equal initial states expected");
        }
    }

    #[test]
    fn delay_width_spreads_initial_positions_along_the_motion() {
        let arm = arm();
        let model = fitted_model(&arm);
        let mut c = cfg(400, 1.0, true);
        c.delay_a = 0.01;
        c.delay_b = 0.01;
        let rollouts = Rollouts::new(model, &arm, TimingConfig::default(), c).unwrap();
        // Constant-speed policy: zero weights with a doubled cap give 3.5.
        let policy = Policy {
            weights: vec![0.0],
            centers: vec![Vec3::new(1.0, 0.0, -1.2)],
            log_shape: Vec3::new(0.0, 0.0, 0.0),
            u_max: 7.0,
        };
        let tight = TargetDomain::new(1.5, 1.5, 0.0, -1.2).unwrap();
        let base = RngStream::root(63);
        let (particles, inits) =
            rollouts.init_particles(&policy, &tight, base.substream(1), base.substream(2)).unwrap();
        let dir = {
            let v = particles[0].ext.state.v;
            v / v.norm()
        };
        let proj: Vec<f64> = particles.iter().map(|p| p.ext.state.p.dot(&dir)).collect();
        let spread = proj.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - proj.iter().cloned().fold(f64::INFINITY, f64::min);
        let expected = inits[0].v * c.delay_b;
        assert!(
            (spread - expected).abs() / expected < 0.2,
            "spread {spread} vs expected {expected}"
        );
    }

    #[test]
    fn objective_known_values() {
        let target = TargetPoint::new(1.0, 0.0, -1.2);
        let on_target =
            ExtendedState { state: CartesianState::new(target.vec(), Vec3::zeros()), target };
        assert_eq!(objective(&[on_target; 4], 0.1), 0.0);

        let off = ExtendedState {
            state: CartesianState::new(Vec3::new(1.1, 0.0, -1.2), Vec3::zeros()),
            target,
        };
        let j = objective(&[off; 3], 0.1);
        assert_relative_eq!(j, 1.0 - (-0.1f64).exp(), epsilon = 1e-12);
        assert!((0.0..1.0).contains(&j));
    }

    #[test]
    fn rollout_matches_drag_free_closed_form_landings() {
        // Model trained on drag-free simulator data, no delay: terminal
        // horizontal positions match the ballistic closed form.
        let arm = arm();
        let model = fitted_model(&arm);
        let c = cfg(400, 1.0, false);
        let rollouts = Rollouts::new(model, &arm, TimingConfig::default(), c).unwrap();
        let policy = micro_policy();
        let base = RngStream::root(64);
        let (mut particles, inits) = rollouts
            .init_particles(&policy, &domain(), base.substream(1), base.substream(2))
            .unwrap();
        let terminals = rollouts.rollout(&mut particles, base.substream(3));

        let g = 9.81;
        let alpha = arm.release_alpha();
        let mut errors: Vec<f64> = Vec::new();
        for (term, init) in terminals.iter().zip(&inits) {
            let (_, gamma) = crate::domain::polar_of_target(&init.target).unwrap();
            let v = init.v;
            let (vx, vz) = (v * alpha.cos(), v * alpha.sin());
            let h = 1.50 + 1.2;
            let t_flight = (vz + (vz * vz + 2.0 * g * h).sqrt()) / g;
            let d = 0.07 + vx * t_flight;
            let expect = Vec3::new(d * gamma.cos(), d * gamma.sin(), -1.2);
            errors.push((term.state.p.xy() - expect.xy()).norm());
        }
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        assert!(median < 0.02, "median closed-form error {median}");
    }

    #[test]
    fn optimization_with_zero_steps_returns_the_policy_unchanged() {
        let arm = arm();
        let model = fitted_model(&arm);
        let rollouts =
            Rollouts::new(model, &arm, TimingConfig::default(), cfg(8, 0.3, false)).unwrap();
        let policy = micro_policy();
        let run = optimize_policy(
            &policy,
            &rollouts,
            &domain(),
            &OptConfig::new(0, 0.01, 0.25),
            RngStream::root(65),
        )
        .unwrap();
        assert_eq!(run.policy, policy);
        assert!(run.trace.is_empty());
        assert!(!run.diverged);
    }

    #[test]
    fn optimization_reduces_the_smoothed_objective() {
        let arm = arm();
        let model = fitted_model(&arm);
        let rollouts =
            Rollouts::new(model, &arm, TimingConfig::default(), cfg(32, 1.0, false)).unwrap();
        let mut rng = RngStream::root(66).rng();
        let policy = crate::policy::init_policy(&domain(), 3.5, 32, 0.5, &mut rng).unwrap();
        let run = optimize_policy(
            &policy,
            &rollouts,
            &domain(),
            &OptConfig::new(110, 0.02, 0.25),
            RngStream::root(67),
        )
        .unwrap();
        let window = 25;
        let early: f64 = run.trace[..window].iter().map(|r| r.j_hat).sum::<f64>() / window as f64;
        let late: f64 =
            run.trace[run.trace.len() - window..].iter().map(|r| r.j_hat).sum::<f64>()
                / window as f64;
        assert!(late < early, "smoothed objective must improve: {early} -> {late}");
    }

    #[test]
    fn optimization_is_bit_reproducible() {
        let arm = arm();
        let model = fitted_model(&arm);
        let rollouts =
            Rollouts::new(model, &arm, TimingConfig::default(), cfg(16, 0.5, true)).unwrap();
        let policy = micro_policy();
        let run = || {
            optimize_policy(
                &policy,
                &rollouts,
                &domain(),
                &OptConfig::new(12, 0.01, 0.25),
                RngStream::root(68),
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.policy, b.policy);
        assert_eq!(a.trace, b.trace);
    }
}
