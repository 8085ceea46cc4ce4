//! Temporary timing probe. Run with:
//! cargo test -p throwrl --release --test dev_bench -- --ignored --nocapture

use std::time::Instant;

use throwrl::domain::{TargetDomain, TargetPoint};
use throwrl::dynamics::{build_dataset, DynamicsModel, InputMap};
use throwrl::kinematics::{plan_throw, ArmModel, TimingConfig};
use throwrl::mcopt::{IterStreams, OptConfig, RolloutConfig, Rollouts};
use throwrl::policy::init_policy;
use throwrl::rng::RngStream;
use throwrl::world::{execute_throw, DragLaw, DragModel, WorldConfig};
use throwrl::PhysicalConstants;

#[test]
#[ignore]
fn bench_pipeline_pieces() {
    let arm = ArmModel::default_arm(0.07, 1.50);
    let world = WorldConfig {
        constants: PhysicalConstants::default(),
        drag: DragModel { radius: 0.0215, mass: 0.02, law: DragLaw::CliftGauvin, enabled: true },
        delay_lo: 0.01,
        delay_hi: 0.02,
        dt: 0.001,
        t_s: 0.01,
        ground_z: -1.2,
        hit_radius: 0.1,
        max_flight: 10.0,
    };
    let domain = TargetDomain::new(0.75, 2.4, std::f64::consts::FRAC_PI_6, -1.2).unwrap();
    let timing = TimingConfig::default();

    // Exploration: 5 ballistic-ish throws.
    let mut rng = RngStream::root(1).rng();
    let mut records = Vec::new();
    use rand::Rng;
    let t0 = Instant::now();
    for i in 0..5 {
        let gamma = -0.4 + 0.2 * i as f64;
        let v = 1.0 + 0.6 * i as f64;
        let plan = plan_throw(gamma, v, &arm, &timing).unwrap();
        let target = TargetPoint::new(1.5 * gamma.cos(), 1.5 * gamma.sin(), -1.2);
        records.push(execute_throw(&plan, target, &arm, &world, &mut rng).unwrap());
    }
    println!("5 world throws: {:?}", t0.elapsed());
    let n: usize = records.iter().map(|r| r.samples.len() - 1).sum();
    println!("dataset n = {n}");

    let data = build_dataset(&records, InputMap::Velocity, 0.01).unwrap();
    let t0 = Instant::now();
    let model = DynamicsModel::fit(&data, 500).unwrap();
    println!("model fit (500 iters, 3 GPs in parallel): {:?}", t0.elapsed());

    let cfg = RolloutConfig {
        m_particles: 400,
        t_horizon: 1.0,
        delay_a: 0.01,
        delay_b: 0.01,
        use_delay: true,
        l_c: 0.1,
    };
    let rollouts = Rollouts::new(&model, &arm, timing, cfg).unwrap();
    let policy = init_policy(&domain, 3.5, 250, 0.5, &mut rng).unwrap();

    let t0 = Instant::now();
    let (mut particles, _) = rollouts
        .init_particles(&policy, &domain, RngStream::root(2), RngStream::root(3))
        .unwrap();
    println!("init 400 particles: {:?}", t0.elapsed());
    let t0 = Instant::now();
    let _ = rollouts.rollout(&mut particles, RngStream::root(4));
    println!("forward rollout 400 x 100 steps: {:?}", t0.elapsed());

    let t0 = Instant::now();
    let streams = IterStreams::for_iteration(RngStream::root(5), 0);
    let (j, _) = rollouts.gradient(&policy, &domain, streams).unwrap();
    println!("one gradient iteration (M=400): {:?}  J = {j:.4}", t0.elapsed());

    for &m in &[100usize, 200] {
        let mut c = cfg;
        c.m_particles = m;
        let r = Rollouts::new(&model, &arm, timing, c).unwrap();
        let t0 = Instant::now();
        let (_, _) = r.gradient(&policy, &domain, streams).unwrap();
        println!("one gradient iteration (M={m}): {:?}", t0.elapsed());
    }

    let t0 = Instant::now();
    let run = throwrl::mcopt::optimize_policy(
        &policy,
        &rollouts,
        &domain,
        &OptConfig::new(10, 0.01, 0.25),
        RngStream::root(6),
    )
    .unwrap();
    println!("10 optimize iterations (M=400): {:?}, J trace {:?}", t0.elapsed(),
        run.trace.iter().map(|r| (r.j_hat * 1000.0).round() / 1000.0).collect::<Vec<_>>());
}
