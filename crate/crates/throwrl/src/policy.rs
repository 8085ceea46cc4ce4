//! The squashed radial-basis-function release-speed policy.
//!
//! `pi(P) = u_M/2 (tanh(sum_i w_i/u_M exp(-(a_i - P)' S (a_i - P))) + 1)`
//!
//! with `S = Sigma_pi` a positive diagonal shape matrix, optimized through
//! its log-diagonal. The squashing keeps the output strictly inside
//! `(0, u_M)`.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::domain::{TargetDomain, TargetPoint, Vec3};
use crate::{Error, Result};

/// Keep the squash away from exact saturation so the output range stays open.
const TANH_CAP: f64 = 1.0 - 1e-15;

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub weights: Vec<f64>,
    pub centers: Vec<Vec3>,
    /// Log-diagonal of the shape matrix.
    pub log_shape: Vec3,
    pub u_max: f64,
}

/// Gradient of a scalar with respect to the policy parameters, in the
/// optimization parameterization (weights, centers, log-shape diagonal).
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad {
    pub weights: Vec<f64>,
    pub centers: Vec<Vec3>,
    pub log_shape: Vec3,
}

impl PolicyGrad {
    pub fn zeros(n_b: usize) -> Self {
        PolicyGrad { weights: vec![0.0; n_b], centers: vec![Vec3::zeros(); n_b], log_shape: Vec3::zeros() }
    }

    pub fn norm(&self) -> f64 {
        let mut s: f64 = self.log_shape.norm_squared();
        for i in 0..self.weights.len() {
            s += self.weights[i] * self.weights[i] + self.centers[i].norm_squared();
        }
        s.sqrt()
    }

    pub fn iter_mut_flat(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights
            .iter_mut()
            .chain(self.centers.iter_mut().flat_map(|c| c.iter_mut()))
            .chain(self.log_shape.iter_mut())
    }
}

impl Policy {
    pub fn n_bases(&self) -> usize {
        self.weights.len()
    }

    /// Shape-matrix diagonal.
    pub fn shape(&self) -> Vec3 {
        self.log_shape.map(f64::exp)
    }

    /// Commanded release speed for a target.
    pub fn eval(&self, target: &TargetPoint) -> f64 {
        let (v, _) = self.eval_cached(target);
        v
    }

    /// Evaluation plus the intermediates needed for the backward pass.
    fn eval_cached(&self, target: &TargetPoint) -> (f64, EvalCache) {
        let p = target.vec();
        let shape = self.shape();
        let mut s = 0.0;
        let mut phi = vec![0.0; self.n_bases()];
        for i in 0..self.n_bases() {
            let d = self.centers[i] - p;
            let e = shape.x * d.x * d.x + shape.y * d.y * d.y + shape.z * d.z * d.z;
            phi[i] = (-e).exp();
            s += self.weights[i] / self.u_max * phi[i];
        }
        let t = s.tanh().clamp(-TANH_CAP, TANH_CAP);
        let v = 0.5 * self.u_max * (t + 1.0);
        (v, EvalCache { phi, tanh: t, shape, p })
    }

    /// Accumulate `dJ/dtheta += dj_dv * dv/dtheta` for one target.
    pub fn backward(&self, target: &TargetPoint, dj_dv: f64, grad: &mut PolicyGrad) {
        let (_, cache) = self.eval_cached(target);
        let sech2 = 1.0 - cache.tanh * cache.tanh;
        // dv/ds where s is the tanh argument.
        let dv_ds = 0.5 * self.u_max * sech2;
        for i in 0..self.n_bases() {
            let phi = cache.phi[i];
            let wi = self.weights[i];
            grad.weights[i] += dj_dv * dv_ds * phi / self.u_max;
            let d = self.centers[i] - cache.p;
            // d phi / d a_i = -2 phi * S d; d phi / d log s_k = -phi d_k^2 s_k.
            let common = dj_dv * dv_ds * wi / self.u_max * phi;
            grad.centers[i] += common * (-2.0) * cache.shape.component_mul(&d);
            grad.log_shape += common
                * -Vec3::new(
                    d.x * d.x * cache.shape.x,
                    d.y * d.y * cache.shape.y,
                    d.z * d.z * cache.shape.z,
                );
        }
    }
}

struct EvalCache {
    phi: Vec<f64>,
    tanh: f64,
    shape: Vec3,
    p: Vec3,
}

/// Random initialization: weights uniform and bounded by `u_M`, centers
/// uniform in the axis-aligned superset of the target domain at the plane
/// height, shape matrix `diag(sigma_pi)`.
///
/// The weight range is scaled by `1/sqrt(N_b)`: with hundreds of overlapping
/// bases, full-range weights drive the squash deep into saturation where the
/// gradient underflows and optimization stalls, so the initialization keeps
/// the summed argument at unit scale instead.
pub fn init_policy<R: Rng>(
    domain: &TargetDomain,
    u_max: f64,
    n_b: usize,
    sigma_pi: f64,
    rng: &mut R,
) -> Result<Policy> {
    if n_b == 0 {
        return Err(Error::InvalidArgument("policy needs at least one basis".into()));
    }
    if !(u_max > 0.0 && sigma_pi > 0.0) {
        return Err(Error::InvalidArgument("u_M and sigma_pi must be positive".into()));
    }
    domain.validate()?;
    let (x_hi, y_half) = domain.center_superset();
    let w_scale = u_max / (n_b as f64).sqrt();
    let mut weights = Vec::with_capacity(n_b);
    let mut centers = Vec::with_capacity(n_b);
    for _ in 0..n_b {
        weights.push(rng.gen_range(-w_scale..=w_scale));
        let x = rng.gen_range(0.0..=x_hi);
        let y = if y_half > 0.0 { rng.gen_range(-y_half..=y_half) } else { 0.0 };
        centers.push(Vec3::new(x, y, domain.z_p));
    }
    Ok(Policy {
        weights,
        centers,
        log_shape: Vec3::new(sigma_pi.ln(), sigma_pi.ln(), sigma_pi.ln()),
        u_max,
    })
}

/// One dropout draw: each weight is zeroed with probability `p_drop` and
/// survivors are rescaled by `1/(1 - p_drop)`. Returns the dropped policy
/// and the per-weight scale mask (zero or `1/(1-p)`), which is also the
/// factor mapping gradients back to the undropped weights.
pub fn apply_dropout<R: Rng>(policy: &Policy, p_drop: f64, rng: &mut R) -> Result<(Policy, Vec<f64>)> {
    if !(0.0..=0.9).contains(&p_drop) {
        return Err(Error::InvalidArgument(format!(
            "dropout probability must lie in [0, 0.9], got {p_drop}"
        )));
    }
    if p_drop == 0.0 {
        return Ok((policy.clone(), vec![1.0; policy.n_bases()]));
    }
    let keep_scale = 1.0 / (1.0 - p_drop);
    let mut dropped = policy.clone();
    let mut mask = vec![0.0; policy.n_bases()];
    for i in 0..policy.n_bases() {
        if rng.gen::<f64>() < p_drop {
            dropped.weights[i] = 0.0;
        } else {
            dropped.weights[i] *= keep_scale;
            mask[i] = keep_scale;
        }
    }
    Ok((dropped, mask))
}

const POLICY_FORMAT: &str = "rbf-policy-v1";

pub fn save_policy<W: Write>(policy: &Policy, mut out: W) -> Result<()> {
    writeln!(out, "format = {POLICY_FORMAT}")?;
    writeln!(out, "u_M = {:.17e}", policy.u_max)?;
    writeln!(out, "N_b = {}", policy.n_bases())?;
    writeln!(
        out,
        "shape = {:.17e} {:.17e} {:.17e}",
        policy.shape().x,
        policy.shape().y,
        policy.shape().z
    )?;
    writeln!(out, "rows")?;
    for i in 0..policy.n_bases() {
        writeln!(
            out,
            "{:.17e},{:.17e},{:.17e},{:.17e}",
            policy.weights[i], policy.centers[i].x, policy.centers[i].y, policy.centers[i].z
        )?;
    }
    Ok(())
}

pub fn load_policy<R: BufRead>(input: R) -> Result<Policy> {
    let err = |msg: String| Error::Parse { file: "policy".into(), msg };
    let mut u_max = 0.0;
    let mut n_b = 0usize;
    let mut shape = Vec3::zeros();
    let mut weights = Vec::new();
    let mut centers = Vec::new();
    let mut in_rows = false;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if in_rows {
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| v.trim().parse().map_err(|e| err(format!("bad value: {e}"))))
                .collect::<Result<_>>()?;
            if vals.len() != 4 {
                return Err(err(format!("expected 4 columns, got {}", vals.len())));
            }
            weights.push(vals[0]);
            centers.push(Vec3::new(vals[1], vals[2], vals[3]));
            continue;
        }
        if line == "rows" {
            in_rows = true;
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| err(format!("expected key = value: {line}")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "format" => {
                if value != POLICY_FORMAT {
                    return Err(err(format!("unsupported format `{value}`")));
                }
            }
            "u_M" => u_max = value.parse().map_err(|e| err(format!("bad u_M: {e}")))?,
            "N_b" => n_b = value.parse().map_err(|e| err(format!("bad N_b: {e}")))?,
            "shape" => {
                let vals: Vec<f64> = value
                    .split_whitespace()
                    .map(|v| v.parse().map_err(|e| err(format!("bad shape: {e}"))))
                    .collect::<Result<_>>()?;
                if vals.len() != 3 {
                    return Err(err("shape must have three entries".into()));
                }
                shape = Vec3::new(vals[0], vals[1], vals[2]);
            }
            other => return Err(err(format!("unknown key `{other}`"))),
        }
    }
    if weights.len() != n_b {
        return Err(err(format!("expected {n_b} bases, got {}", weights.len())));
    }
    if !(u_max > 0.0 && shape.iter().all(|s| *s > 0.0)) {
        return Err(err("u_M and shape must be positive".into()));
    }
    Ok(Policy { weights, centers, log_shape: shape.map(f64::ln), u_max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn sim_domain() -> TargetDomain {
        TargetDomain::new(0.75, 2.4, PI / 6.0, 0.0).unwrap()
    }

    fn small_policy() -> Policy {
        Policy {
            weights: vec![1.2, -0.7, 2.0],
            centers: vec![
                Vec3::new(1.0, 0.2, 0.0),
                Vec3::new(1.8, -0.4, 0.0),
                Vec3::new(2.2, 0.1, 0.0),
            ],
            log_shape: Vec3::new(0.5f64.ln(), 0.5f64.ln(), 0.5f64.ln()),
            u_max: 3.5,
        }
    }

    #[test]
    fn zero_weights_give_half_the_cap() {
        let mut p = small_policy();
        p.weights = vec![0.0; 3];
        assert_relative_eq!(p.eval(&TargetPoint::new(1.0, 0.0, 0.0)), 1.75, epsilon = 1e-12);
    }

    #[test]
    fn huge_weights_saturate_to_the_cap() {
        let mut p = small_policy();
        p.weights = vec![1e6; 3];
        let v = p.eval(&TargetPoint::new(1.0, 0.2, 0.0));
        assert!(v < 3.5, "output must stay strictly below u_M");
        assert!((3.5 - v).abs() < 1e-6);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let policy = small_policy();
        let mut rng = RngStream::root(31).rng();
        let h = 1e-6;
        for _ in 0..10 {
            let target = TargetPoint::new(rng.gen_range(0.5..2.4), rng.gen_range(-1.0..1.0), 0.0);
            let mut grad = PolicyGrad::zeros(3);
            policy.backward(&target, 1.0, &mut grad);

            for i in 0..3 {
                let mut hi = policy.clone();
                let mut lo = policy.clone();
                hi.weights[i] += h;
                lo.weights[i] -= h;
                let fd = (hi.eval(&target) - lo.eval(&target)) / (2.0 * h);
                assert_relative_eq!(grad.weights[i], fd, epsilon = 1e-8, max_relative = 1e-5);

                for k in 0..3 {
                    let mut hi = policy.clone();
                    let mut lo = policy.clone();
                    hi.centers[i][k] += h;
                    lo.centers[i][k] -= h;
                    let fd = (hi.eval(&target) - lo.eval(&target)) / (2.0 * h);
                    assert_relative_eq!(grad.centers[i][k], fd, epsilon = 1e-8, max_relative = 1e-5);
                }
            }
            for k in 0..3 {
                let mut hi = policy.clone();
                let mut lo = policy.clone();
                hi.log_shape[k] += h;
                lo.log_shape[k] -= h;
                let fd = (hi.eval(&target) - lo.eval(&target)) / (2.0 * h);
                assert_relative_eq!(grad.log_shape[k], fd, epsilon = 1e-8, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn initialization_covers_the_center_superset() {
        let domain = sim_domain();
        let mut rng = RngStream::root(32).rng();
        let p = init_policy(&domain, 3.5, 250, 0.5, &mut rng).unwrap();
        assert_eq!(p.n_bases(), 250);
        let y_half = 2.4 * (PI / 6.0).sin();
        for i in 0..250 {
            assert!(p.weights[i].abs() <= 3.5);
            let c = p.centers[i];
            assert!((0.0..=2.4).contains(&c.x), "center x = {}", c.x);
            assert!(c.y.abs() <= y_half, "center y = {}", c.y);
            assert_eq!(c.z, 0.0);
        }
        assert_relative_eq!(p.shape(), Vec3::new(0.5, 0.5, 0.5), epsilon = 1e-15);
    }

    #[test]
    fn initialization_is_deterministic_per_stream() {
        let domain = sim_domain();
        let a = init_policy(&domain, 3.5, 50, 0.5, &mut RngStream::root(77).rng()).unwrap();
        let b = init_policy(&domain, 3.5, 50, 0.5, &mut RngStream::root(77).rng()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_identity_at_zero() {
        let p = small_policy();
        let (d, mask) = apply_dropout(&p, 0.0, &mut RngStream::root(1).rng()).unwrap();
        assert_eq!(d, p);
        assert_eq!(mask, vec![1.0; 3]);
    }

    #[test]
    fn dropout_is_unbiased_in_expectation() {
        let p = small_policy();
        let p_drop = 0.25;
        let mut rng = RngStream::root(33).rng();
        let n = 10_000;
        let mut sums = vec![0.0; 3];
        for _ in 0..n {
            let (d, _) = apply_dropout(&p, p_drop, &mut rng).unwrap();
            for i in 0..3 {
                sums[i] += d.weights[i];
            }
        }
        for i in 0..3 {
            let mean = sums[i] / n as f64;
            // Variance of one dropped weight is w^2 p/(1-p); three standard
            // errors of the Monte Carlo mean.
            let se = (p.weights[i].powi(2) * p_drop / (1.0 - p_drop) / n as f64).sqrt();
            assert!(
                (mean - p.weights[i]).abs() <= 3.0 * se,
                "weight {i}: mean {mean} vs {} (se {se})",
                p.weights[i]
            );
        }
    }

    #[test]
    fn excessive_dropout_is_rejected() {
        let p = small_policy();
        assert!(apply_dropout(&p, 0.9999, &mut RngStream::root(1).rng()).is_err());
        assert!(apply_dropout(&p, 0.9, &mut RngStream::root(1).rng()).is_ok());
    }

    #[test]
    fn policy_round_trips_through_the_flat_text_format() {
        let p = small_policy();
        let mut buf = Vec::new();
        save_policy(&p, &mut buf).unwrap();
        let q = load_policy(std::io::BufReader::new(buf.as_slice())).unwrap();
        let t = TargetPoint::new(1.3, -0.2, 0.0);
        assert_relative_eq!(p.eval(&t), q.eval(&t), epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn output_stays_strictly_inside_the_open_interval(
            w in prop::collection::vec(-1e9f64..1e9, 3),
            x in 0.0f64..3.0,
            y in -1.5f64..1.5,
        ) {
            let mut p = small_policy();
            p.weights = w;
            let v = p.eval(&TargetPoint::new(x, y, 0.0));
            prop_assert!(v > 0.0 && v < p.u_max);
        }

        #[test]
        fn evaluation_is_invariant_to_basis_permutation(
            seed in 0u64..1000,
            x in 0.5f64..2.4,
            y in -1.0f64..1.0,
        ) {
            let domain = sim_domain();
            let p = init_policy(&domain, 3.5, 8, 0.5, &mut RngStream::root(seed).rng()).unwrap();
            let mut swapped = p.clone();
            swapped.weights.swap(0, 5);
            swapped.centers.swap(0, 5);
            swapped.weights.swap(2, 7);
            swapped.centers.swap(2, 7);
            let t = TargetPoint::new(x, y, 0.0);
            prop_assert!((p.eval(&t) - swapped.eval(&t)).abs() < 1e-12);
        }
    }
}
