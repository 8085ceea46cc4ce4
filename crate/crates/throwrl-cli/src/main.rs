//! Command-line front end for the throwing-task pipeline.
//!
//! Every stage reads and writes plain-text artifacts under the output
//! directory, so stages can be run separately or end to end with `trial`.
//! All commands are deterministic for a fixed `--seed`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use throwrl::baselines::{train_mlp, RegressionSet};
use throwrl::domain::{polar_of_target, sample_target, TargetPoint};
use throwrl::dynamics::DynamicsModel;
use throwrl::harness::{self, plot, BallisticPolicy, Session, ThrowPolicy, TrialState};
use throwrl::kinematics::plan_throw;
use throwrl::policy::{load_policy, save_policy};
use throwrl::rng::tags;
use throwrl::world::{execute_throw, read_throws, write_throws};
use throwrl::Config;

#[derive(Parser)]
#[command(
    name = "throwrl",
    about = "Learned robotic object throwing against a built-in simulator",
    version
)]
struct Cli {
    /// Path to a key = value configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Master seed override.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for all emitted artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Inline configuration overrides, e.g. `--set z_P=-0.9`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Baseline {
    Ballistic,
    Mlp,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a batch of ballistic-baseline throws and record trajectories.
    Simulate {
        /// Number of throws.
        #[arg(long, default_value_t = 5)]
        count: usize,
    },
    /// Run the exploration phase (N_exp baseline throws) and write throws.csv.
    Explore,
    /// Fit the dynamics model from recorded throws.
    FitModel,
    /// Estimate the release-delay distribution from throws and the model.
    EstimateDelay,
    /// Optimize the release-speed policy against the fitted model.
    Optimize {
        /// Skip delay modeling: particles start at the nominal release time.
        #[arg(long)]
        no_delay_model: bool,
    },
    /// Evaluate a policy over sampled targets and emit results and plots.
    Evaluate {
        /// Evaluate a reference policy instead of the learned one.
        #[arg(long, value_enum)]
        baseline: Option<Baseline>,
        /// Number of evaluation targets.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Run the full outer loop: explore, fit, estimate delay, optimize, test.
    Trial {
        /// Skip delay modeling throughout.
        #[arg(long)]
        no_delay_model: bool,
    },
    /// Re-run policy optimization for a changed target domain (set via
    /// --set, e.g. `--set z_P=-0.9`) with no new simulator throws.
    Retarget {
        /// Number of evaluation targets for the retargeted policy.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
    /// Train the network baseline across dataset sizes and compare policies.
    CompareBaselines {
        /// Comma-separated training-set sizes.
        #[arg(long, default_value = "20,60,180")]
        sizes: String,
        /// Number of evaluation targets per policy.
        #[arg(long, default_value_t = 100)]
        count: usize,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => {
            Config::from_file(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => Config::default(),
    };
    for assignment in &cli.sets {
        let (key, value) = assignment
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{assignment}`"))?;
        cfg.set(key.trim(), value.trim())
            .with_context(|| format!("applying --set {assignment}"))?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cli.out)
        .with_context(|| format!("creating output directory {}", cli.out.display()))?;

    let session = Session::new(cfg)?;
    match cli.command {
        Command::Simulate { count } => simulate(&session, count, &cli.out),
        Command::Explore => explore(&session, &cli.out),
        Command::FitModel => fit_model(&session, &cli.out),
        Command::EstimateDelay => estimate_delay(&session, &cli.out),
        Command::Optimize { no_delay_model } => optimize(&session, no_delay_model, &cli.out),
        Command::Evaluate { baseline, count } => evaluate(&session, baseline, count, &cli.out),
        Command::Trial { no_delay_model } => trial(&session, no_delay_model, &cli.out),
        Command::Retarget { count } => retarget(&session, count, &cli.out),
        Command::CompareBaselines { sizes, count } => compare(&session, &sizes, count, &cli.out),
    }
}

fn writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn reader(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path).with_context(|| format!("opening {}", path.display()))?))
}

fn load_records(out: &Path) -> Result<Vec<throwrl::world::ThrowRecord>> {
    let path = out.join("throws.csv");
    let records = read_throws(reader(&path)?)?;
    if records.is_empty() {
        bail!("no throws found in {}; run `explore` first", path.display());
    }
    Ok(records)
}

fn load_model(out: &Path) -> Result<DynamicsModel> {
    Ok(DynamicsModel::load(reader(&out.join("model.txt"))?)?)
}

fn simulate(session: &Session, count: usize, out: &Path) -> Result<()> {
    let baseline = BallisticPolicy {
        geometry: session.geometry,
        constants: session.world.constants,
        u_max: session.cfg.u_m,
    };
    let mut target_rng = session.base.substream(tags::EVAL_TARGETS).rng();
    let mut world_rng = session.base.substream(tags::WORLD_DELAY).rng();
    let mut records = Vec::with_capacity(count);
    for _ in 0..count {
        let target = sample_target(&session.domain, &mut target_rng);
        let (_, gamma) = polar_of_target(&target)?;
        let (v, clamped) = baseline.speed(&target)?;
        let plan = plan_throw(gamma, v, &session.arm, &session.timing(session.cfg.t_r))?;
        let rec = execute_throw(&plan, target, &session.arm, &session.world, &mut world_rng)?;
        println!(
            "throw: target ({:.3}, {:.3})  v = {:.3}{}  landing ({:.3}, {:.3})  error {:.3}  {}",
            target.x,
            target.y,
            v,
            if clamped { " (clamped)" } else { "" },
            rec.landing.x,
            rec.landing.y,
            rec.horizontal_error(),
            if rec.hit { "hit" } else { "miss" },
        );
        records.push(rec);
    }
    write_throws(&records, writer(&out.join("throws.csv"))?)?;
    println!("wrote {}", out.join("throws.csv").display());
    Ok(())
}

fn explore(session: &Session, out: &Path) -> Result<()> {
    let records = harness::explore(session, session.cfg.t_r, session.base.substream(1001))?;
    write_throws(&records, writer(&out.join("throws.csv"))?)?;
    println!("exploration: {} throws -> {}", records.len(), out.join("throws.csv").display());
    Ok(())
}

fn fit_model(session: &Session, out: &Path) -> Result<()> {
    let records = load_records(out)?;
    let model = harness::fit_model(session, &records, session.base.substream(1002))?;
    model.save(writer(&out.join("model.txt"))?)?;
    println!(
        "fitted 3 GPs on {} pairs (augmentation x{}) -> {}",
        model.n(),
        session.cfg.n_a + 1,
        out.join("model.txt").display()
    );
    for (i, gp) in model.gps.iter().enumerate() {
        println!(
            "  gp[{i}]: lambda = {:.4e}, sigma2 = {:.4e}, lml = {:.2}",
            gp.hyper.lambda,
            gp.hyper.sigma2,
            gp.log_marginal_likelihood()
        );
    }
    Ok(())
}

fn estimate_delay(session: &Session, out: &Path) -> Result<()> {
    let records = load_records(out)?;
    let model = load_model(out)?;
    let outcome =
        harness::estimate_delay(session, &model, &records, session.base.substream(1003))?;
    let t_r_cmd = throwrl::delayest::recompute_command_time(session.cfg.t_r, outcome.delay.a)
        .unwrap_or(session.cfg.t_r)
        .clamp(0.0, session.cfg.t_r);
    harness::write_delay(&outcome.delay, t_r_cmd, writer(&out.join("delay.txt"))?)?;
    harness::write_bo_trace(&outcome.trace, writer(&out.join("bo_trace.csv"))?)?;
    println!(
        "estimated delay U({:.4}, {:.4}) s, best objective {:.4} m{} -> {}",
        outcome.delay.a,
        outcome.delay.a + outcome.delay.b,
        outcome.best_f,
        if outcome.fallback { " (surrogate fallback to uniform sampling)" } else { "" },
        out.join("delay.txt").display()
    );
    println!("recomputed command time t_r_cmd = {t_r_cmd:.4} s");
    Ok(())
}

fn optimize(session: &Session, no_delay_model: bool, out: &Path) -> Result<()> {
    let model = load_model(out)?;
    let (delay, t_r_cmd) = if no_delay_model {
        (None, session.cfg.t_r)
    } else {
        let (d, t) = harness::read_delay(reader(&out.join("delay.txt"))?)?;
        (Some(d), t)
    };
    let policy0 = throwrl::policy::init_policy(
        &session.domain,
        session.cfg.u_m,
        session.cfg.n_b,
        session.cfg.sigma_pi,
        &mut session.base.substream(tags::POLICY_INIT).rng(),
    )?;
    let run =
        harness::optimize(session, &model, &policy0, delay, t_r_cmd, session.base.substream(1004))?;
    save_policy(&run.policy, writer(&out.join("policy.txt"))?)?;
    harness::write_opt_trace(&run.trace, writer(&out.join("opt_trace.csv"))?)?;
    let last = run.trace.last().map(|r| r.j_hat).unwrap_or(f64::NAN);
    println!(
        "optimized policy over {} steps, final J = {:.4}{} -> {}",
        run.trace.len(),
        last,
        if run.diverged { " (warning: objective stayed saturated)" } else { "" },
        out.join("policy.txt").display()
    );
    Ok(())
}

fn evaluate(session: &Session, baseline: Option<Baseline>, count: usize, out: &Path) -> Result<()> {
    let targets = harness::sample_targets(&session.domain, count, session.base.substream(1005));
    let (policy, t_r_cmd): (Box<dyn ThrowPolicy>, f64) = match baseline {
        Some(Baseline::Ballistic) => (
            Box::new(BallisticPolicy {
                geometry: session.geometry,
                constants: session.world.constants,
                u_max: session.cfg.u_m,
            }),
            session.cfg.t_r,
        ),
        Some(Baseline::Mlp) => {
            let data = RegressionSet::read_csv(reader(&out.join("mlp_data.csv"))?)?;
            let (model, loss) = train_mlp(
                &data,
                session.cfg.mlp_hidden_layers,
                session.cfg.mlp_epochs,
                session.cfg.mlp_learning_rate,
                session.cfg.u_m,
                &mut session.base.substream(tags::MLP_INIT).rng(),
            )?;
            println!("trained network baseline on {} examples, final loss {loss:.5}", data.len());
            (Box::new(model), session.cfg.t_r)
        }
        None => {
            let policy = load_policy(reader(&out.join("policy.txt"))?)?;
            let t_r_cmd = match File::open(out.join("delay.txt")) {
                Ok(f) => harness::read_delay(BufReader::new(f))?.1,
                Err(_) => session.cfg.t_r,
            };
            (Box::new(policy), t_r_cmd)
        }
    };
    let (report, _) = harness::evaluate(
        session,
        policy.as_ref(),
        &targets,
        t_r_cmd,
        session.base.substream(1006),
    )?;
    report.write_csv(writer(&out.join("results.csv"))?)?;
    plot::scatter_svg(
        &report,
        &session.domain,
        &format!("{} policy", policy.label()),
        writer(&out.join("scatter.svg"))?,
    )?;
    let mut summary = writer(&out.join("summary.txt"))?;
    writeln!(summary, "policy = {}", policy.label())?;
    writeln!(summary, "targets = {}", report.rows.len())?;
    writeln!(summary, "accuracy = {:.4}", report.accuracy)?;
    writeln!(
        summary,
        "error quartiles [m] = {:.4} {:.4} {:.4}",
        report.error_quartiles[0], report.error_quartiles[1], report.error_quartiles[2]
    )?;
    println!(
        "{} policy: accuracy {:.3} over {} targets (median error {:.3} m) -> {}",
        policy.label(),
        report.accuracy,
        report.rows.len(),
        report.error_quartiles[1],
        out.join("results.csv").display()
    );
    Ok(())
}

fn trial(session: &Session, no_delay_model: bool, out: &Path) -> Result<()> {
    let mut state = TrialState::default();
    for t in 0..session.cfg.trials.max(1) {
        let outcome = harness::run_trial(session, &mut state, !no_delay_model)?;
        println!(
            "trial {t}: dataset {} throws, test accuracy {:.3}{}",
            state.records.len(),
            outcome.report.accuracy,
            match outcome.delay {
                Some(d) => format!(
                    ", delay U({:.4}, {:.4}), t_r_cmd {:.4}",
                    d.a,
                    d.a + d.b,
                    outcome.t_r_cmd
                ),
                None => String::new(),
            }
        );
        write_throws(&state.records, writer(&out.join("throws.csv"))?)?;
        outcome.model.save(writer(&out.join("model.txt"))?)?;
        save_policy(&outcome.policy, writer(&out.join("policy.txt"))?)?;
        harness::write_opt_trace(&outcome.opt_trace, writer(&out.join("opt_trace.csv"))?)?;
        outcome.report.write_csv(writer(&out.join("results.csv"))?)?;
        plot::scatter_svg(
            &outcome.report,
            &session.domain,
            "trial test throws",
            writer(&out.join("scatter.svg"))?,
        )?;
        if let Some(d) = outcome.delay {
            harness::write_delay(&d, outcome.t_r_cmd, writer(&out.join("delay.txt"))?)?;
            harness::write_bo_trace(&outcome.bo_trace, writer(&out.join("bo_trace.csv"))?)?;
        }
    }
    println!("artifacts written under {}", out.display());
    Ok(())
}

fn retarget(session: &Session, count: usize, out: &Path) -> Result<()> {
    let model = load_model(out)?;
    let (delay, t_r_cmd) = match File::open(out.join("delay.txt")) {
        Ok(f) => {
            let (d, t) = harness::read_delay(BufReader::new(f))?;
            (Some(d), t)
        }
        Err(_) => (None, session.cfg.t_r),
    };
    // The session's domain already reflects any --set overrides.
    let run = harness::retarget(
        session,
        &model,
        delay,
        t_r_cmd,
        &session.domain,
        session.base.substream(1007),
    )?;
    save_policy(&run.policy, writer(&out.join("policy_retarget.txt"))?)?;
    let targets = harness::sample_targets(&session.domain, count, session.base.substream(1008));
    let (report, _) =
        harness::evaluate(session, &run.policy, &targets, t_r_cmd, session.base.substream(1009))?;
    report.write_csv(writer(&out.join("retarget_results.csv"))?)?;
    plot::scatter_svg(
        &report,
        &session.domain,
        "retargeted policy",
        writer(&out.join("retarget_scatter.svg"))?,
    )?;
    println!(
        "retargeted policy (no new throws): accuracy {:.3} over {} targets -> {}",
        report.accuracy,
        report.rows.len(),
        out.join("retarget_results.csv").display()
    );
    Ok(())
}

fn compare(session: &Session, sizes: &str, count: usize, out: &Path) -> Result<()> {
    let sizes: Vec<usize> = sizes
        .split(',')
        .map(|s| s.trim().parse::<usize>().with_context(|| format!("bad size `{s}`")))
        .collect::<Result<_>>()?;
    let targets = harness::sample_targets(&session.domain, count, session.base.substream(1010));

    let mut groups: Vec<(String, Vec<f64>)> = Vec::new();
    let mut rows: Vec<(String, Option<usize>, f64)> = Vec::new();

    let baseline = BallisticPolicy {
        geometry: session.geometry,
        constants: session.world.constants,
        u_max: session.cfg.u_m,
    };
    let (report, _) = harness::evaluate(
        session,
        &baseline,
        &targets,
        session.cfg.t_r,
        session.base.substream(1011),
    )?;
    println!("ballistic baseline: accuracy {:.3}", report.accuracy);
    rows.push(("ballistic".into(), None, report.accuracy));
    groups.push(("ballistic".into(), vec![report.accuracy]));

    for &size in &sizes {
        let data = collect_regression_data(session, size)?;
        data.write_csv(writer(&out.join(format!("mlp_data_{size}.csv")))?)?;
        let (model, _) = train_mlp(
            &data,
            session.cfg.mlp_hidden_layers,
            session.cfg.mlp_epochs,
            session.cfg.mlp_learning_rate,
            session.cfg.u_m,
            &mut session.base.substream(tags::MLP_INIT).substream(size as u64).rng(),
        )?;
        let (report, _) = harness::evaluate(
            session,
            &model,
            &targets,
            session.cfg.t_r,
            session.base.substream(1012),
        )?;
        println!("network baseline ({size} examples): accuracy {:.3}", report.accuracy);
        rows.push((format!("network-{size}"), Some(size), report.accuracy));
        groups.push((format!("net {size}"), vec![report.accuracy]));
    }

    let mut csv = writer(&out.join("comparison.csv"))?;
    writeln!(csv, "policy,train_size,accuracy")?;
    for (name, size, acc) in &rows {
        match size {
            Some(s) => writeln!(csv, "{name},{s},{acc:.4}")?,
            None => writeln!(csv, "{name},,{acc:.4}")?,
        }
    }
    plot::box_plot_svg(
        &groups,
        "accuracy",
        "baseline comparison",
        writer(&out.join("accuracy_box.svg"))?,
    )?;
    println!("wrote {}", out.join("comparison.csv").display());
    Ok(())
}

/// Random-throw data collection for the network baseline: random bearings
/// and speeds, landings recorded.
fn collect_regression_data(session: &Session, size: usize) -> Result<RegressionSet> {
    use rand::Rng;
    let mut rng = session.base.substream(tags::MLP_DATA).rng();
    let mut world_rng = session.base.substream(tags::MLP_DATA).substream(7).rng();
    let mut data = RegressionSet::default();
    while data.len() < size {
        let gamma = rng.gen_range(-session.cfg.gamma_m..=session.cfg.gamma_m);
        let v = rng.gen_range(0.3..=session.cfg.u_m);
        let plan = plan_throw(gamma, v, &session.arm, &session.timing(session.cfg.t_r))?;
        let target = TargetPoint::new(gamma.cos(), gamma.sin(), session.cfg.z_p);
        let rec = execute_throw(&plan, target, &session.arm, &session.world, &mut world_rng)?;
        data.push(rec.landing, v);
    }
    Ok(data)
}
