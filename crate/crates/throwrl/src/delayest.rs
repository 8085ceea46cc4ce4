//! Release-delay distribution estimation.
//!
//! The delay is modeled as `t_d ~ U(a, a+b)`. Candidate pairs are scored by
//! replaying each recorded throw through the learned model with `M_d`
//! particles whose release times are sampled from the candidate law, and
//! averaging the distance between simulated and recorded landings. The
//! score is minimized by Bayesian optimization with a GP surrogate and an
//! upper-confidence-bound acquisition.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::gp::{fit_hyperparameters, Dataset, Gp, GpHyper};
use crate::mcopt::{rollout, Rollouts};
use crate::rng::{tags, RngStream};
use crate::world::ThrowRecord;
use crate::{Error, Result};

/// Estimated uniform release-delay law.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayModel {
    /// Offset, s.
    pub a: f64,
    /// Width, s.
    pub b: f64,
}

/// Bayesian-optimization settings for the delay search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoConfig {
    pub a_bounds: (f64, f64),
    pub b_bounds: (f64, f64),
    /// Exploration weight in the acquisition.
    pub sigma_ucb: f64,
    pub n_init: usize,
    pub n_iter: usize,
    /// Particles per recorded throw in the objective.
    pub m_d: usize,
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::InvalidArgument("n_init must be at least 2".into()));
        }
        if self.m_d == 0 {
            return Err(Error::InvalidArgument("M_d must be at least 1".into()));
        }
        if !(self.a_bounds.0 <= self.a_bounds.1 && self.b_bounds.0 <= self.b_bounds.1) {
            return Err(Error::InvalidArgument("delay search bounds are inverted".into()));
        }
        if self.b_bounds.0 < 0.0 {
            return Err(Error::InvalidArgument("delay width cannot be negative".into()));
        }
        Ok(())
    }
}

/// Mean distance between recorded landings and the landings simulated under
/// the candidate delay law `U(a, a+b)`.
///
/// All randomness comes from `noise`, so evaluations at different `(a, b)`
/// share their draws (common random numbers) and the objective is
/// deterministic under a fixed stream.
pub fn delay_objective(
    a: f64,
    b: f64,
    records: &[ThrowRecord],
    rollouts: &Rollouts,
    m_d: usize,
    noise: RngStream,
) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::DegenerateData("delay objective needs at least one record".into()));
    }
    let mut delay_rng = noise.substream(1).rng();
    let mut particles = Vec::with_capacity(records.len() * m_d);
    for rec in records {
        for _ in 0..m_d {
            let u: f64 = delay_rng.gen();
            let t_release = rec.t_r_cmd + a + b * u;
            let (particle, _) = rollouts.release_particle(rec.target, rec.v_cmd, t_release)?;
            particles.push(particle);
        }
    }
    let steps = rollouts.cfg.steps(rollouts.model.t_s);
    let terminals = rollout(&mut particles, rollouts.model, steps, noise.substream(2));
    let mut total = 0.0;
    for (i, rec) in records.iter().enumerate() {
        let mut per_throw = 0.0;
        for m in 0..m_d {
            let p = terminals[i * m_d + m].state.p;
            per_throw += (p.x - rec.landing.x).hypot(p.y - rec.landing.y);
        }
        total += per_throw / m_d as f64;
    }
    Ok(total / records.len() as f64)
}

/// One evaluated point of the search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoTraceRow {
    pub iter: usize,
    pub a: f64,
    pub b: f64,
    pub f: f64,
}

/// Search outcome: the best observed pair plus the full evaluation trace.
#[derive(Debug, Clone)]
pub struct BoOutcome {
    pub delay: DelayModel,
    pub best_f: f64,
    pub trace: Vec<BoTraceRow>,
    /// Set when a surrogate factorization failed and the remaining
    /// iterations fell back to uniform sampling.
    pub fallback: bool,
}

/// Minimize a delay objective by GP-surrogate Bayesian optimization with
/// the acquisition `argmin mean(x) - sigma_ucb * std(x)`.
pub fn bo_minimize<F>(mut objective: F, cfg: &BoConfig, base: RngStream) -> Result<BoOutcome>
where
    F: FnMut(f64, f64) -> Result<f64>,
{
    cfg.validate()?;
    let mut init_rng = base.substream(tags::BO_INIT).rng();
    let mut trace: Vec<BoTraceRow> = Vec::new();
    let mut fallback = false;

    let span_a = cfg.a_bounds.1 - cfg.a_bounds.0;
    let span_b = cfg.b_bounds.1 - cfg.b_bounds.0;
    let denorm = |xa: f64, xb: f64| (cfg.a_bounds.0 + xa * span_a, cfg.b_bounds.0 + xb * span_b);

    // Normalized samples accumulated over the search.
    let mut xs: Vec<[f64; 2]> = Vec::new();
    let mut fs: Vec<f64> = Vec::new();

    for i in 0..cfg.n_init {
        let xa: f64 = init_rng.gen();
        let xb: f64 = init_rng.gen();
        let (a, b) = denorm(xa, xb);
        let f = objective(a, b)?;
        xs.push([xa, xb]);
        fs.push(f);
        trace.push(BoTraceRow { iter: i, a, b, f });
    }

    let acquire_base = base.substream(tags::BO_ACQUIRE);
    for it in 0..cfg.n_iter {
        let next = if fallback {
            None
        } else {
            match fit_surrogate(&xs, &fs) {
                Ok(gp) => Some(minimize_ucb(&gp, cfg.sigma_ucb, acquire_base.substream(it as u64))),
                Err(Error::Factorization) => {
                    fallback = true;
                    None
                }
                Err(e) => return Err(e),
            }
        };
        let (xa, xb) = match next {
            Some(x) => x,
            None => {
                let mut rng = acquire_base.substream(it as u64).rng();
                (rng.gen(), rng.gen())
            }
        };
        let (a, b) = denorm(xa, xb);
        let f = objective(a, b)?;
        xs.push([xa, xb]);
        fs.push(f);
        trace.push(BoTraceRow { iter: cfg.n_init + it, a, b, f });
    }

    // Earliest-sampled point wins ties.
    let mut best = 0;
    for (i, &f) in fs.iter().enumerate() {
        if f < fs[best] {
            best = i;
        }
    }
    let (a, b) = denorm(xs[best][0], xs[best][1]);
    Ok(BoOutcome { delay: DelayModel { a, b }, best_f: fs[best], trace, fallback })
}

fn fit_surrogate(xs: &[[f64; 2]], fs: &[f64]) -> Result<Gp> {
    let n = xs.len();
    let x = DMatrix::from_fn(n, 2, |i, j| xs[i][j]);
    // Center the objective so the zero-mean prior is reasonable.
    let mean = fs.iter().sum::<f64>() / n as f64;
    let y = DVector::from_iterator(n, fs.iter().map(|f| f - mean));
    let data = Dataset::new(x, y)?;
    let init = GpHyper::init_from_data(&data);
    let hyper = fit_hyperparameters(&data, &init, 80)?;
    Gp::new(data, hyper)
}

/// Multi-start projected gradient descent on the acquisition over the unit
/// square.
fn minimize_ucb(gp: &Gp, sigma_ucb: f64, stream: RngStream) -> (f64, f64) {
    let mut rng = stream.rng();
    let acq = |x: &[f64; 2]| {
        let (mean, var) = gp.posterior(x);
        mean - sigma_ucb * var.sqrt()
    };
    let acq_grad = |x: &[f64; 2]| {
        let n = gp.n();
        let mut k = DVector::zeros(n);
        for i in 0..n {
            k[i] = crate::gp::kernel(x, gp.data.x.row(i).transpose().as_slice(), &gp.hyper);
        }
        let alpha = gp.alpha();
        let z = DMatrix::from_row_slice(1, 2, x);
        let batch = gp.posterior_batch(&z);
        let std = batch.var[0].sqrt();
        let mut grad = [0.0; 2];
        for dim in 0..2 {
            let l = gp.hyper.lengthscales[dim];
            let mut dmean = 0.0;
            let mut dvar = 0.0;
            for i in 0..n {
                let dk = k[i] * (-2.0 * (x[dim] - gp.data.x[(i, dim)]) / (l * l));
                dmean += alpha[i] * dk;
                dvar += -2.0 * batch.q[(0, i)] * dk;
            }
            let dstd = if std > 1e-12 { dvar / (2.0 * std) } else { 0.0 };
            grad[dim] = dmean - sigma_ucb * dstd;
        }
        grad
    };

    let mut best_x = [0.5, 0.5];
    let mut best_v = f64::INFINITY;
    for _ in 0..32 {
        let mut x = [rng.gen::<f64>(), rng.gen::<f64>()];
        let mut value = acq(&x);
        let mut step = 0.1;
        for _ in 0..60 {
            if step < 1e-6 {
                break;
            }
            let g = acq_grad(&x);
            let gn = (g[0] * g[0] + g[1] * g[1]).sqrt();
            if gn < 1e-12 {
                break;
            }
            let trial = [
                (x[0] - step * g[0] / gn).clamp(0.0, 1.0),
                (x[1] - step * g[1] / gn).clamp(0.0, 1.0),
            ];
            let tv = acq(&trial);
            if tv < value {
                x = trial;
                value = tv;
                step = (step * 1.3).min(0.5);
            } else {
                step *= 0.5;
            }
        }
        if value < best_v {
            best_v = value;
            best_x = x;
        }
    }
    (best_x[0], best_x[1])
}

/// Shift the gripper command earlier by the estimated delay offset:
/// `t_r_cmd = t_r - a_hat`.
pub fn recompute_command_time(t_r: f64, a_hat: f64) -> Result<f64> {
    if a_hat > t_r {
        return Err(Error::DelayExceedsRelease(a_hat, t_r));
    }
    Ok(t_r - a_hat)
}
