//! Particle rollout through the learned model, forward and reverse.
//!
//! The one-step covariance has the rank-three structure
//! `Sigma = B diag(var) B'` with `B = [T_s/2 I; I]`, so drawing
//! `delta = mean + sqrt(var) * eps` with three standard normals per particle
//! and pushing it through the speed-integration update is exactly
//! `x' = mu + L eps` with `L L' = Sigma`. The reverse sweep recomputes the
//! per-step kernel matrices from the stored state trace instead of holding
//! them, which keeps memory linear in the horizon.
//!
//! Particles are processed in fixed-size chunks; chunk results are reduced
//! in index order, so results are bit-identical for any worker count.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::domain::{CartesianState, ExtendedState, Vec3};
use crate::dynamics::{DynamicsModel, InputMap};
use crate::rng::RngStream;

const CHUNK: usize = 64;
/// Below this standard deviation a sampled step is treated as deterministic
/// and no gradient flows through the (vanishing) noise scale.
const STD_FLOOR: f64 = 1e-12;

/// One Monte Carlo sample of a throw, frozen once it reaches the target
/// plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Particle {
    pub ext: ExtendedState,
    /// Step index at which the state first sat at or below the plane.
    pub frozen_at: Option<usize>,
}

impl Particle {
    pub fn new(ext: ExtendedState) -> Self {
        Particle { ext, frozen_at: None }
    }
}

/// Per-chunk simulation record kept for the reverse sweep.
struct ChunkTrace {
    /// `trace[t][row]` is the state before step `t`; `trace[steps]` is
    /// terminal.
    states: Vec<Vec<CartesianState>>,
    /// `eps[row * steps + t]` are the three per-step normal draws.
    eps: Vec<[f64; 3]>,
    /// First step index at which each particle sat at/below its plane
    /// (`usize::MAX` when it never froze). A particle is updated at step `t`
    /// iff `t < freeze[row]`.
    freeze: Vec<usize>,
}

fn forward_chunk(
    chunk: &mut [Particle],
    model: &DynamicsModel,
    steps: usize,
    noise: RngStream,
    global_base: usize,
) -> ChunkTrace {
    let len = chunk.len();
    let d = model.map.dim();
    let mut eps = vec![[0.0; 3]; len * steps];
    for row in 0..len {
        let mut rng = noise.substream((global_base + row) as u64).rng();
        for t in 0..steps {
            for j in 0..3 {
                eps[row * steps + t][j] = rng.sample(StandardNormal);
            }
        }
    }

    let mut freeze = vec![usize::MAX; len];
    let mut current: Vec<CartesianState> = chunk.iter().map(|p| p.ext.state).collect();
    for (row, p) in chunk.iter().enumerate() {
        if p.ext.state.p.z <= p.ext.target.z {
            freeze[row] = 0;
        }
    }
    let mut states = Vec::with_capacity(steps + 1);
    states.push(current.clone());

    let ts = model.t_s;
    let mut row_buf = vec![0.0; d];
    for t in 0..steps {
        let active: Vec<usize> = (0..len).filter(|&r| t < freeze[r]).collect();
        if active.is_empty() {
            states.push(current.clone());
            continue;
        }
        let mut z = DMatrix::zeros(active.len(), d);
        for (i, &row) in active.iter().enumerate() {
            model.map.apply(&current[row], &mut row_buf);
            for (j, v) in row_buf.iter().enumerate() {
                z[(i, j)] = *v;
            }
        }
        let batches = [
            model.gps[0].posterior_batch(&z),
            model.gps[1].posterior_batch(&z),
            model.gps[2].posterior_batch(&z),
        ];
        for (i, &row) in active.iter().enumerate() {
            let mut delta = Vec3::zeros();
            for j in 0..3 {
                let std = batches[j].var[i].sqrt();
                delta[j] = batches[j].mean[i] + std * eps[row * steps + t][j];
            }
            let s = current[row];
            let next = CartesianState::new(s.p + ts * s.v + 0.5 * ts * delta, s.v + delta);
            current[row] = next;
            if next.p.z <= chunk[row].ext.target.z {
                freeze[row] = t + 1;
            }
        }
        states.push(current.clone());
    }

    for (row, p) in chunk.iter_mut().enumerate() {
        p.ext.state = current[row];
        p.frozen_at = if freeze[row] == usize::MAX { None } else { Some(freeze[row]) };
    }
    ChunkTrace { states, eps, freeze }
}

/// Roll a batch of particles forward for `steps` steps. Frozen particles
/// hold their state; the terminal extended states are returned and the
/// particles are left at them.
pub fn rollout(
    particles: &mut [Particle],
    model: &DynamicsModel,
    steps: usize,
    noise: RngStream,
) -> Vec<ExtendedState> {
    particles
        .par_chunks_mut(CHUNK)
        .enumerate()
        .for_each(|(ci, chunk)| {
            forward_chunk(chunk, model, steps, noise, ci * CHUNK);
        });
    particles.iter().map(|p| p.ext).collect()
}

/// Reverse sweep over one chunk: given terminal-state gradients, accumulate
/// gradients with respect to the initial states.
fn backward_chunk(
    chunk: &[Particle],
    trace: &ChunkTrace,
    model: &DynamicsModel,
    steps: usize,
    grad_terminal: &[(Vec3, Vec3)],
) -> Vec<(Vec3, Vec3)> {
    let len = chunk.len();
    let d = model.map.dim();
    let ts = model.t_s;
    let mut g: Vec<(Vec3, Vec3)> = grad_terminal.to_vec();
    let mut row_buf = vec![0.0; d];

    for t in (0..steps).rev() {
        let active: Vec<usize> = (0..len).filter(|&r| t < trace.freeze[r]).collect();
        if active.is_empty() {
            continue;
        }
        let mut z = DMatrix::zeros(active.len(), d);
        for (i, &row) in active.iter().enumerate() {
            model.map.apply(&trace.states[t][row], &mut row_buf);
            for (j, v) in row_buf.iter().enumerate() {
                z[(i, j)] = *v;
            }
        }
        // dz[i] accumulates dJ/d(input row i) across the three GPs.
        let mut dz = vec![[0.0; 6]; active.len()];
        for j in 0..3 {
            let gp = &model.gps[j];
            let batch = gp.posterior_batch(&z);
            let alpha = gp.alpha();
            let x = &gp.data.x;
            let ls = &gp.hyper.lengthscales;
            let n = gp.n();
            for (i, &row) in active.iter().enumerate() {
                let g_delta = 0.5 * ts * g[row].0[j] + g[row].1[j];
                if g_delta == 0.0 {
                    continue;
                }
                let std = batch.var[i].sqrt();
                let eps_over_std = if std > STD_FLOOR {
                    trace.eps[row * steps + t][j] / std
                } else {
                    0.0
                };
                // R_i = g_delta K_i (alpha_i - (eps/s) Q_i); the input
                // gradient is sum_i R_i * dlog k/dz.
                let mut r_sum = 0.0;
                let mut r_x = [0.0; 6];
                for idx in 0..n {
                    let r = g_delta
                        * batch.k[(i, idx)]
                        * (alpha[idx] - eps_over_std * batch.q[(i, idx)]);
                    r_sum += r;
                    for dim in 0..d {
                        r_x[dim] += r * x[(idx, dim)];
                    }
                }
                for dim in 0..d {
                    let l = ls[dim];
                    dz[i][dim] += (-2.0 / (l * l)) * (z[(i, dim)] * r_sum - r_x[dim]);
                }
            }
        }
        // Adjoint of the speed-integration update plus the input map.
        for (i, &row) in active.iter().enumerate() {
            let (gp_old, gv_old) = g[row];
            let mut gp_new = gp_old;
            let mut gv_new = gv_old + ts * gp_old;
            match model.map {
                InputMap::Velocity => {
                    for k in 0..3 {
                        gv_new[k] += dz[i][k];
                    }
                }
                InputMap::FullState => {
                    for k in 0..3 {
                        gp_new[k] += dz[i][k];
                        gv_new[k] += dz[i][3 + k];
                    }
                }
            }
            g[row] = (gp_new, gv_new);
        }
    }
    g
}

/// Objective value and per-particle gradients `dJ/dx_0` for one sampled
/// batch. Particles are rolled to their terminal states in place.
pub fn gradient_of_particles(
    particles: &mut [Particle],
    model: &DynamicsModel,
    steps: usize,
    noise: RngStream,
    l_c: f64,
) -> (f64, Vec<(Vec3, Vec3)>) {
    let m = particles.len();
    let results: Vec<(f64, Vec<(Vec3, Vec3)>)> = particles
        .par_chunks_mut(CHUNK)
        .enumerate()
        .map(|(ci, chunk)| {
            let trace = forward_chunk(chunk, model, steps, noise, ci * CHUNK);
            // Terminal cost and its gradient, scaled by 1/M.
            let mut cost_sum = 0.0;
            let mut seed: Vec<(Vec3, Vec3)> = Vec::with_capacity(chunk.len());
            for p in chunk.iter() {
                let dx = p.ext.state.p.x - p.ext.target.x;
                let dy = p.ext.state.p.y - p.ext.target.y;
                let e = (-(dx * dx + dy * dy) / l_c).exp();
                cost_sum += 1.0 - e;
                let scale = e * 2.0 / l_c / m as f64;
                seed.push((Vec3::new(scale * dx, scale * dy, 0.0), Vec3::zeros()));
            }
            let g = backward_chunk(chunk, &trace, model, steps, &seed);
            (cost_sum, g)
        })
        .collect();

    // Ordered reduction over chunks keeps the result independent of the
    // worker count.
    let mut j = 0.0;
    let mut grads = Vec::with_capacity(m);
    for (cost_sum, g) in results {
        j += cost_sum;
        grads.extend(g);
    }
    (j / m as f64, grads)
}
