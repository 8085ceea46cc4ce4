//! Temporary end-to-end measurement probe for tuning defaults.
//! cargo test -p throwrl --release --test dev_e2e -- --ignored --nocapture

use throwrl::harness::{self, BallisticPolicy, Session};
use throwrl::Config;

fn accuracy_by_band(report: &throwrl::harness::EvalReport) -> String {
    let mut bands = [(0usize, 0usize); 4];
    for row in &report.rows {
        let l = row.target.x.hypot(row.target.y);
        let idx = (((l - 0.75) / (2.4 - 0.75) * 4.0) as usize).min(3);
        bands[idx].1 += 1;
        if row.hit {
            bands[idx].0 += 1;
        }
    }
    bands
        .iter()
        .map(|(h, n)| if *n > 0 { format!("{:.2}", *h as f64 / *n as f64) } else { "-".into() })
        .collect::<Vec<_>>()
        .join(" ")
}

#[test]
#[ignore]
fn e2e_ordering_probe() {
    let seeds: Vec<u64> = (0..5).collect();
    let mut acc = vec![];
    for &seed in &seeds {
        let mut cfg = Config::default();
        cfg.seed = seed;
        cfg.t_s = 0.02;
        cfg.m_particles = 200;
        cfg.n_opt = 500;
        cfg.learning_rate = 0.025;
        cfg.fit_iters = 300;
        cfg.bo_n_init = 8;
        cfg.bo_n_iter = 16;
        cfg.n_test = 0;
        let session = Session::new(cfg.clone()).unwrap();

        let t0 = std::time::Instant::now();
        let records = harness::explore(&session, cfg.t_r, session.base.substream(1)).unwrap();
        let model = harness::fit_model(&session, &records, session.base.substream(2)).unwrap();
        let bo = harness::estimate_delay(&session, &model, &records, session.base.substream(3)).unwrap();
        let t_r_cmd = throwrl::delayest::recompute_command_time(cfg.t_r, bo.delay.a)
            .unwrap_or(cfg.t_r)
            .clamp(0.0, cfg.t_r);
        let policy0 = throwrl::policy::init_policy(
            &session.domain,
            cfg.u_m,
            cfg.n_b,
            cfg.sigma_pi,
            &mut session.base.substream(4).rng(),
        )
        .unwrap();
        let wd = harness::optimize(&session, &model, &policy0, Some(bo.delay), t_r_cmd, session.base.substream(5)).unwrap();
        let nd = harness::optimize(&session, &model, &policy0, None, cfg.t_r, session.base.substream(6)).unwrap();

        let targets = harness::sample_targets(&session.domain, 100, session.base.substream(7));
        let (rep_wd, _) = harness::evaluate(&session, &wd.policy, &targets, t_r_cmd, session.base.substream(8)).unwrap();
        let (rep_nd, _) = harness::evaluate(&session, &nd.policy, &targets, cfg.t_r, session.base.substream(8)).unwrap();
        let ballistic = BallisticPolicy {
            geometry: session.geometry,
            constants: session.world.constants,
            u_max: cfg.u_m,
        };
        let (rep_b, _) = harness::evaluate(&session, &ballistic, &targets, cfg.t_r, session.base.substream(8)).unwrap();
        println!(
            "seed {seed}: wd {:.2} [{}] | nd {:.2} [{}] | bal {:.2} [{}] | a={:.4} b={:.4} t_cmd={:.3} | J_wd {:.3} J_nd {:.3} | {:?}",
            rep_wd.accuracy,
            accuracy_by_band(&rep_wd),
            rep_nd.accuracy,
            accuracy_by_band(&rep_nd),
            rep_b.accuracy,
            accuracy_by_band(&rep_b),
            bo.delay.a,
            bo.delay.b,
            t_r_cmd,
            wd.trace.last().unwrap().j_hat,
            nd.trace.last().unwrap().j_hat,
            t0.elapsed()
        );
        acc.push((rep_wd.accuracy, rep_nd.accuracy, rep_b.accuracy));
    }
    let med = |mut v: Vec<f64>| {
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!(
        "medians: wd {:.3} nd {:.3} bal {:.3}",
        med(acc.iter().map(|a| a.0).collect()),
        med(acc.iter().map(|a| a.1).collect()),
        med(acc.iter().map(|a| a.2).collect())
    );
}
