//! Experiment orchestration: the outer learning loop, evaluation metrics,
//! and emission of result files and plots.

pub mod plot;

use std::io::Write;

use rand::Rng;

use crate::baselines::{ballistic_policy, mlp_policy, MlpModel};
use crate::config::Config;
use crate::delayest::{bo_minimize, delay_objective, recompute_command_time, BoConfig, BoOutcome, DelayModel};
use crate::domain::{
    sample_target, PhysicalConstants, ReleaseGeometry, TargetDomain, TargetPoint,
};
use crate::dynamics::{augment_trajectory, build_dataset, DynamicsModel, InputMap};
use crate::kinematics::{plan_throw, ArmModel, TimingConfig};
use crate::mcopt::{optimize_policy, OptConfig, OptRun, RolloutConfig, Rollouts, TraceRow};
use crate::policy::{init_policy, Policy};
use crate::rng::{tags, RngStream};
use crate::world::{execute_throw, fmt9, ThrowRecord, WorldConfig};
use crate::{Error, Result};

/// A configured experiment: arm, world, target domain, release geometry and
/// the master random stream.
pub struct Session {
    pub cfg: Config,
    pub arm: ArmModel,
    pub world: WorldConfig,
    pub domain: TargetDomain,
    pub geometry: ReleaseGeometry,
    pub base: RngStream,
}

impl Session {
    pub fn new(cfg: Config) -> Result<Self> {
        cfg.validate()?;
        let arm = ArmModel::default_arm(cfg.l_r, cfg.z_rel);
        let alpha = if cfg.alpha.is_finite() { cfg.alpha } else { arm.release_alpha() };
        let geometry = ReleaseGeometry { l_r: cfg.l_r, z_rel: cfg.z_rel, alpha };
        let domain = cfg.domain()?;
        let world = WorldConfig::from_config(&cfg);
        let base = RngStream::root(cfg.seed);
        Ok(Session { cfg, arm, world, domain, geometry, base })
    }

    pub fn timing(&self, t_r_cmd: f64) -> TimingConfig {
        TimingConfig {
            t_r: self.cfg.t_r,
            t_dec: self.cfg.t_dec,
            t_r_cmd: t_r_cmd.clamp(0.0, self.cfg.t_r),
        }
    }

    pub fn input_map(&self) -> InputMap {
        if self.cfg.full_state_input {
            InputMap::FullState
        } else {
            InputMap::Velocity
        }
    }

    fn opt_config(&self) -> OptConfig {
        OptConfig::new(self.cfg.n_opt, self.cfg.learning_rate, self.cfg.dropout_p)
    }

    fn bo_config(&self) -> BoConfig {
        BoConfig {
            a_bounds: (self.cfg.bo_a_min, self.cfg.bo_a_max),
            b_bounds: (self.cfg.bo_b_min, self.cfg.bo_b_max),
            sigma_ucb: self.cfg.bo_sigma_ucb,
            n_init: self.cfg.bo_n_init,
            n_iter: self.cfg.bo_n_iter,
            m_d: self.cfg.m_d,
        }
    }

    fn rollout_config(&self, delay: Option<DelayModel>) -> RolloutConfig {
        RolloutConfig {
            m_particles: self.cfg.m_particles,
            t_horizon: self.cfg.t_horizon,
            delay_a: delay.map_or(0.0, |d| d.a),
            delay_b: delay.map_or(0.0, |d| d.b),
            use_delay: delay.is_some(),
            l_c: self.cfg.l_c,
        }
    }
}

/// Anything that maps a target to a commanded release speed. The flag marks
/// commands clamped to the speed cap (infeasible for the underlying rule).
pub trait ThrowPolicy {
    fn speed(&self, target: &TargetPoint) -> Result<(f64, bool)>;
    fn label(&self) -> &'static str;
}

impl ThrowPolicy for Policy {
    fn speed(&self, target: &TargetPoint) -> Result<(f64, bool)> {
        Ok((self.eval(target), false))
    }
    fn label(&self) -> &'static str {
        "learned"
    }
}

/// The closed-form drag-free rule, clamped to the speed cap.
pub struct BallisticPolicy {
    pub geometry: ReleaseGeometry,
    pub constants: PhysicalConstants,
    pub u_max: f64,
}

impl ThrowPolicy for BallisticPolicy {
    fn speed(&self, target: &TargetPoint) -> Result<(f64, bool)> {
        let v = ballistic_policy(target, &self.geometry, &self.constants)?;
        if v > self.u_max {
            Ok((self.u_max, true))
        } else {
            Ok((v, false))
        }
    }
    fn label(&self) -> &'static str {
        "ballistic"
    }
}

impl ThrowPolicy for MlpModel {
    fn speed(&self, target: &TargetPoint) -> Result<(f64, bool)> {
        Ok((mlp_policy(self, target), false))
    }
    fn label(&self) -> &'static str {
        "network"
    }
}

/// One evaluated throw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub target: TargetPoint,
    pub landing: crate::domain::Vec3,
    pub error: f64,
    pub hit: bool,
    pub clamped: bool,
}

/// Evaluation outcome over a batch of targets.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub accuracy: f64,
    /// 25th, 50th and 75th percentiles of the horizontal error.
    pub error_quartiles: [f64; 3],
}

impl EvalReport {
    fn from_rows(rows: Vec<EvalRow>) -> Self {
        let hits = rows.iter().filter(|r| r.hit).count();
        let accuracy = if rows.is_empty() { 0.0 } else { hits as f64 / rows.len() as f64 };
        let mut errors: Vec<f64> = rows.iter().map(|r| r.error).collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let q = |frac: f64| -> f64 {
            if errors.is_empty() {
                return f64::NAN;
            }
            let idx = ((errors.len() - 1) as f64 * frac).round() as usize;
            errors[idx]
        };
        EvalReport { rows, accuracy, error_quartiles: [q(0.25), q(0.5), q(0.75)] }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "target_x,target_y,landing_x,landing_y,error,hit")?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                fmt9(r.target.x),
                fmt9(r.target.y),
                fmt9(r.landing.x),
                fmt9(r.landing.y),
                fmt9(r.error),
                u8::from(r.hit)
            )?;
        }
        Ok(())
    }
}

/// Execute one throw of a policy on the world.
fn throw_once<R: Rng>(
    session: &Session,
    policy: &dyn ThrowPolicy,
    target: TargetPoint,
    t_r_cmd: f64,
    rng: &mut R,
) -> Result<(ThrowRecord, bool)> {
    let (_, gamma) = crate::domain::polar_of_target(&target)?;
    let (v, clamped) = policy.speed(&target)?;
    let plan = plan_throw(gamma, v, &session.arm, &session.timing(t_r_cmd))?;
    let rec = execute_throw(&plan, target, &session.arm, &session.world, rng)?;
    Ok((rec, clamped))
}

/// Exploration phase: `n_exp` throws with the ballistic baseline at sampled
/// targets.
pub fn explore(session: &Session, t_r_cmd: f64, stream: RngStream) -> Result<Vec<ThrowRecord>> {
    let baseline = BallisticPolicy {
        geometry: session.geometry,
        constants: session.world.constants,
        u_max: session.cfg.u_m,
    };
    let mut target_rng = stream.substream(tags::EXPLORE_TARGETS).rng();
    let mut world_rng = stream.substream(tags::WORLD_DELAY).rng();
    let mut records = Vec::with_capacity(session.cfg.n_exp);
    for _ in 0..session.cfg.n_exp {
        let target = sample_target(&session.domain, &mut target_rng);
        let (rec, _) = throw_once(session, &baseline, target, t_r_cmd, &mut world_rng)?;
        records.push(rec);
    }
    Ok(records)
}

/// Fit the dynamics model from records, applying the rotation augmentation.
pub fn fit_model(session: &Session, records: &[ThrowRecord], stream: RngStream) -> Result<DynamicsModel> {
    let mut aug_rng = stream.substream(tags::AUGMENT).rng();
    let mut augmented = Vec::with_capacity(records.len() * (session.cfg.n_a + 1));
    for rec in records {
        augmented.extend(augment_trajectory(rec, session.cfg.n_a, &mut aug_rng));
    }
    let data = build_dataset(&augmented, session.input_map(), session.cfg.t_s)?;
    DynamicsModel::fit(&data, session.cfg.fit_iters)
}

/// Estimate the release-delay law from recorded throws and the model.
pub fn estimate_delay(
    session: &Session,
    model: &DynamicsModel,
    records: &[ThrowRecord],
    stream: RngStream,
) -> Result<BoOutcome> {
    let rollouts = Rollouts::new(
        model,
        &session.arm,
        session.timing(session.cfg.t_r),
        session.rollout_config(None),
    )?;
    let bo = session.bo_config();
    let noise = stream.substream(tags::BO_OBJECTIVE);
    bo_minimize(
        |a, b| delay_objective(a, b, records, &rollouts, bo.m_d, noise),
        &bo,
        stream,
    )
}

/// Policy optimization against the fitted model under an optional delay law.
pub fn optimize(
    session: &Session,
    model: &DynamicsModel,
    policy: &Policy,
    delay: Option<DelayModel>,
    t_r_cmd: f64,
    stream: RngStream,
) -> Result<OptRun> {
    let rollouts = Rollouts::new(
        model,
        &session.arm,
        session.timing(t_r_cmd),
        session.rollout_config(delay),
    )?;
    optimize_policy(policy, &rollouts, &session.domain, &session.opt_config(), stream)
}

/// Evaluate a policy over explicit targets: one throw each, hits within the
/// configured radius.
pub fn evaluate(
    session: &Session,
    policy: &dyn ThrowPolicy,
    targets: &[TargetPoint],
    t_r_cmd: f64,
    stream: RngStream,
) -> Result<(EvalReport, Vec<ThrowRecord>)> {
    let mut world_rng = stream.substream(tags::WORLD_DELAY).rng();
    let mut rows = Vec::with_capacity(targets.len());
    let mut records = Vec::with_capacity(targets.len());
    for &target in targets {
        let (rec, clamped) = throw_once(session, policy, target, t_r_cmd, &mut world_rng)?;
        rows.push(EvalRow {
            target,
            landing: rec.landing,
            error: rec.horizontal_error(),
            hit: rec.hit,
            clamped,
        });
        records.push(rec);
    }
    Ok((EvalReport::from_rows(rows), records))
}

/// Draw an evaluation target batch.
pub fn sample_targets(domain: &TargetDomain, count: usize, stream: RngStream) -> Vec<TargetPoint> {
    let mut rng = stream.substream(tags::EVAL_TARGETS).rng();
    (0..count).map(|_| sample_target(domain, &mut rng)).collect()
}

/// State carried across trials of the outer loop.
#[derive(Debug, Clone, Default)]
pub struct TrialState {
    pub records: Vec<ThrowRecord>,
    pub policy: Option<Policy>,
    pub delay: Option<DelayModel>,
    pub t_r_cmd: Option<f64>,
    pub trial_index: usize,
}

/// Everything produced by one trial.
pub struct TrialOutcome {
    pub policy: Policy,
    pub delay: Option<DelayModel>,
    pub model: DynamicsModel,
    pub report: EvalReport,
    pub opt_trace: Vec<TraceRow>,
    pub bo_trace: Vec<crate::delayest::BoTraceRow>,
    pub t_r_cmd: f64,
    pub diverged: bool,
}

/// One pass of the outer loop: explore on the first trial, fit the model,
/// estimate and compensate the delay (unless disabled), optimize the policy,
/// then execute the test throws whose records join the dataset.
pub fn run_trial(
    session: &Session,
    state: &mut TrialState,
    model_delay: bool,
) -> Result<TrialOutcome> {
    let trial_stream = session.base.substream(1000 + state.trial_index as u64);
    if state.records.is_empty() {
        state.records = explore(session, session.cfg.t_r, trial_stream.substream(1))?;
    }
    let model = fit_model(session, &state.records, trial_stream.substream(2))?;

    let (delay, bo_trace, t_r_cmd) = if model_delay {
        let outcome = estimate_delay(session, &model, &state.records, trial_stream.substream(3))?;
        let t_r_cmd = recompute_command_time(session.cfg.t_r, outcome.delay.a)
            .unwrap_or(session.cfg.t_r)
            .clamp(0.0, session.cfg.t_r);
        (Some(outcome.delay), outcome.trace, t_r_cmd)
    } else {
        (None, Vec::new(), session.cfg.t_r)
    };

    let policy0 = match &state.policy {
        Some(p) => p.clone(),
        None => init_policy(
            &session.domain,
            session.cfg.u_m,
            session.cfg.n_b,
            session.cfg.sigma_pi,
            &mut session.base.substream(tags::POLICY_INIT).rng(),
        )?,
    };
    let run = optimize(session, &model, &policy0, delay, t_r_cmd, trial_stream.substream(4))?;

    // Policy-execution phase: test throws, recorded into the dataset.
    let targets = sample_targets(&session.domain, session.cfg.n_test, trial_stream.substream(5));
    let (report, test_records) =
        evaluate(session, &run.policy, &targets, t_r_cmd, trial_stream.substream(6))?;
    state.records.extend(test_records);
    state.policy = Some(run.policy.clone());
    state.delay = delay;
    state.t_r_cmd = Some(t_r_cmd);
    state.trial_index += 1;

    Ok(TrialOutcome {
        policy: run.policy,
        delay,
        model,
        report,
        opt_trace: run.trace,
        bo_trace,
        t_r_cmd,
        diverged: run.diverged,
    })
}

/// Re-run only the policy optimization for a changed target domain, with no
/// new world interaction. The signature admits no world access, which is the
/// point: retargeting consumes only learned artifacts.
pub fn retarget(
    session: &Session,
    model: &DynamicsModel,
    delay: Option<DelayModel>,
    t_r_cmd: f64,
    new_domain: &TargetDomain,
    stream: RngStream,
) -> Result<OptRun> {
    let rollouts = Rollouts::new(
        model,
        &session.arm,
        session.timing(t_r_cmd),
        session.rollout_config(delay),
    )?;
    let policy0 = init_policy(
        new_domain,
        session.cfg.u_m,
        session.cfg.n_b,
        session.cfg.sigma_pi,
        &mut session.base.substream(tags::POLICY_INIT).rng(),
    )?;
    optimize_policy(&policy0, &rollouts, new_domain, &session.opt_config(), stream)
}

/// Serialize an optimization trace.
pub fn write_opt_trace<W: Write>(trace: &[TraceRow], mut out: W) -> Result<()> {
    writeln!(out, "step,J_hat,grad_norm,dropout_p")?;
    for row in trace {
        writeln!(
            out,
            "{},{},{},{}",
            row.step,
            fmt9(row.j_hat),
            fmt9(row.grad_norm),
            fmt9(row.dropout_p)
        )?;
    }
    Ok(())
}

/// Serialize a delay-search trace.
pub fn write_bo_trace<W: Write>(trace: &[crate::delayest::BoTraceRow], mut out: W) -> Result<()> {
    writeln!(out, "iter,a,b,F")?;
    for row in trace {
        writeln!(out, "{},{},{},{}", row.iter, fmt9(row.a), fmt9(row.b), fmt9(row.f))?;
    }
    Ok(())
}

/// Serialize a delay model together with the command time derived from it.
pub fn write_delay<W: Write>(delay: &DelayModel, t_r_cmd: f64, mut out: W) -> Result<()> {
    writeln!(out, "a = {:.17e}", delay.a)?;
    writeln!(out, "b = {:.17e}", delay.b)?;
    writeln!(out, "t_r_cmd = {:.17e}", t_r_cmd)?;
    Ok(())
}

pub fn read_delay<R: std::io::BufRead>(input: R) -> Result<(DelayModel, f64)> {
    let err = |msg: String| Error::Parse { file: "delay".into(), msg };
    let (mut a, mut b, mut t_r_cmd) = (None, None, None);
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| err(format!("expected key = value: {line}")))?;
        let v: f64 = value.trim().parse().map_err(|e| err(format!("bad number: {e}")))?;
        match key.trim() {
            "a" => a = Some(v),
            "b" => b = Some(v),
            "t_r_cmd" => t_r_cmd = Some(v),
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    match (a, b, t_r_cmd) {
        (Some(a), Some(b), Some(t)) => Ok((DelayModel { a, b }, t)),
        _ => Err(err("missing a, b or t_r_cmd".into())),
    }
}
