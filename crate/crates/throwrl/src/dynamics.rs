//! Learned free-flight dynamics: one GP per velocity component over the
//! observed per-step velocity changes, combined with the speed-integration
//! update.
//!
//! With `Delta` the predicted velocity change over one sampling period, the
//! one-step model is
//!
//! ```text
//! v' = v + Delta
//! p' = p + T_s v + (T_s / 2) Delta
//! ```
//!
//! so the one-step-ahead state is Gaussian with moments assembled from the
//! three independent GP posteriors.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use rand::Rng;
use rayon::prelude::*;

use crate::domain::CartesianState;
use crate::gp::{fit_hyperparameters, Dataset, Gp, GpHyper};
use crate::world::{ThrowRecord, TrajSample};
use crate::{Error, Result};

/// What the dynamics GPs take as input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputMap {
    /// The 3-component velocity. Free flight is position-independent, so
    /// this is the default; it also makes yaw equivariance exact.
    Velocity,
    /// The full 6-component state (position and velocity).
    FullState,
}

impl InputMap {
    pub fn dim(&self) -> usize {
        match self {
            InputMap::Velocity => 3,
            InputMap::FullState => 6,
        }
    }

    pub fn apply(&self, state: &CartesianState, row: &mut [f64]) {
        match self {
            InputMap::Velocity => {
                row[0] = state.v.x;
                row[1] = state.v.y;
                row[2] = state.v.z;
            }
            InputMap::FullState => {
                row[0] = state.p.x;
                row[1] = state.p.y;
                row[2] = state.p.z;
                row[3] = state.v.x;
                row[4] = state.v.y;
                row[5] = state.v.z;
            }
        }
    }
}

/// Training set shared by the three per-component GPs.
#[derive(Debug, Clone, PartialEq)]
pub struct GpDataset {
    pub inputs: DMatrix<f64>,
    /// Velocity-change targets, one column vector per output component.
    pub outputs: [DVector<f64>; 3],
    pub map: InputMap,
    pub t_s: f64,
}

impl GpDataset {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Rotate a throw record about the vertical axis through the base origin.
fn rotate_record(rec: &ThrowRecord, angle: f64) -> ThrowRecord {
    let rot = nalgebra::Rotation3::from_axis_angle(&crate::domain::Vec3::z_axis(), angle);
    let rotate_state = |s: &CartesianState| CartesianState::new(rot * s.p, rot * s.v);
    let t_rot = rot * rec.target.vec();
    ThrowRecord {
        v_cmd: rec.v_cmd,
        target: crate::domain::TargetPoint::new(t_rot.x, t_rot.y, t_rot.z),
        t_r_cmd: rec.t_r_cmd,
        release: rotate_state(&rec.release),
        samples: rec
            .samples
            .iter()
            .map(|s| TrajSample { t: s.t, state: rotate_state(&s.state) })
            .collect(),
        landing: rot * rec.landing,
        hit: rec.hit,
    }
}

/// The original record plus `n_a` copies rotated about the vertical axis by
/// angles uniform in `[-pi, pi]`.
pub fn augment_trajectory<R: Rng>(rec: &ThrowRecord, n_a: usize, rng: &mut R) -> Vec<ThrowRecord> {
    let mut out = Vec::with_capacity(n_a + 1);
    out.push(rec.clone());
    for _ in 0..n_a {
        let angle = rng.gen_range(-std::f64::consts::PI..=std::f64::consts::PI);
        out.push(rotate_record(rec, angle));
    }
    out
}

/// Extract consecutive-sample training pairs from recorded trajectories.
///
/// Inputs are the mapped state at each sample; outputs are the next-sample
/// velocity changes. Trajectories must be sampled at the fixed period `t_s`.
pub fn build_dataset(records: &[ThrowRecord], map: InputMap, t_s: f64) -> Result<GpDataset> {
    let mut n = 0;
    for rec in records {
        n += rec.samples.len().saturating_sub(1);
        for w in rec.samples.windows(2) {
            let dt = w[1].t - w[0].t;
            if (dt - t_s).abs() > 1e-9 {
                return Err(Error::IrregularSampling { expected: t_s, found: dt });
            }
        }
    }
    if n == 0 {
        return Err(Error::DegenerateData("no consecutive-sample pairs in the records".into()));
    }
    let d = map.dim();
    let mut inputs = DMatrix::zeros(n, d);
    let mut outputs = [DVector::zeros(n), DVector::zeros(n), DVector::zeros(n)];
    let mut row = 0;
    let mut buf = vec![0.0; d];
    for rec in records {
        for w in rec.samples.windows(2) {
            map.apply(&w[0].state, &mut buf);
            for (j, v) in buf.iter().enumerate() {
                inputs[(row, j)] = *v;
            }
            let dv = w[1].state.v - w[0].state.v;
            outputs[0][row] = dv.x;
            outputs[1][row] = dv.y;
            outputs[2][row] = dv.z;
            row += 1;
        }
    }
    Ok(GpDataset { inputs, outputs, map, t_s })
}

/// Three fitted GPs over velocity changes plus the speed-integration update.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    pub gps: [Gp; 3],
    pub t_s: f64,
    pub map: InputMap,
}

impl DynamicsModel {
    /// Fit the three component GPs (concurrently) by marginal-likelihood
    /// ascent from the data-driven initialization.
    pub fn fit(dataset: &GpDataset, iters: usize) -> Result<Self> {
        let gps: Vec<Gp> = (0..3)
            .into_par_iter()
            .map(|i| {
                let data = Dataset::new(dataset.inputs.clone(), dataset.outputs[i].clone())?;
                let init = GpHyper::init_from_data(&data);
                let hyper = fit_hyperparameters(&data, &init, iters)?;
                Gp::new(data, hyper)
            })
            .collect::<Result<_>>()?;
        let gps: [Gp; 3] = gps.try_into().map_err(|_| Error::Factorization)?;
        Ok(DynamicsModel { gps, t_s: dataset.t_s, map: dataset.map })
    }

    /// Construct from pre-fitted component GPs.
    pub fn from_gps(gps: [Gp; 3], t_s: f64, map: InputMap) -> Self {
        DynamicsModel { gps, t_s, map }
    }

    pub fn n(&self) -> usize {
        self.gps[0].n()
    }

    /// Posterior moments of the velocity change at a state.
    pub fn delta_posterior(&self, state: &CartesianState) -> ([f64; 3], [f64; 3]) {
        let mut row = vec![0.0; self.map.dim()];
        self.map.apply(state, &mut row);
        let mut mean = [0.0; 3];
        let mut var = [0.0; 3];
        for i in 0..3 {
            let (m, v) = self.gps[i].posterior(&row);
            mean[i] = m;
            var[i] = v;
        }
        (mean, var)
    }

    /// One-step-ahead Gaussian over the next state.
    ///
    /// A zero sampling period is an identity step: the state cannot change
    /// in zero time, so the mean is the input and the covariance vanishes.
    pub fn one_step(&self, state: &CartesianState) -> (Vector6<f64>, Matrix6<f64>) {
        if self.t_s == 0.0 {
            let mut mu = Vector6::zeros();
            for i in 0..3 {
                mu[i] = state.p[i];
                mu[3 + i] = state.v[i];
            }
            return (mu, Matrix6::zeros());
        }
        let (mean, var) = self.delta_posterior(state);
        let ts = self.t_s;
        let mut mu = Vector6::zeros();
        let mut sigma = Matrix6::zeros();
        for i in 0..3 {
            mu[i] = state.p[i] + ts * state.v[i] + 0.5 * ts * mean[i];
            mu[3 + i] = state.v[i] + mean[i];
            sigma[(i, i)] = ts * ts / 4.0 * var[i];
            sigma[(i, 3 + i)] = ts / 2.0 * var[i];
            sigma[(3 + i, i)] = ts / 2.0 * var[i];
            sigma[(3 + i, 3 + i)] = var[i];
        }
        (mu, sigma)
    }

    /// Serialize hyperparameters, input map and the training set; the
    /// posterior is recomputed on load.
    pub fn save<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "format = gp-dynamics-v1")?;
        writeln!(
            out,
            "input_map = {}",
            match self.map {
                InputMap::Velocity => "velocity",
                InputMap::FullState => "full-state",
            }
        )?;
        writeln!(out, "T_s = {:.17e}", self.t_s)?;
        writeln!(out, "n = {}", self.n())?;
        writeln!(out, "d = {}", self.map.dim())?;
        for (i, gp) in self.gps.iter().enumerate() {
            writeln!(out, "gp = {i}")?;
            writeln!(out, "lambda = {:.17e}", gp.hyper.lambda)?;
            let ls: Vec<String> =
                gp.hyper.lengthscales.iter().map(|l| format!("{:.17e}", l)).collect();
            writeln!(out, "lengthscales = {}", ls.join(" "))?;
            writeln!(out, "sigma2 = {:.17e}", gp.hyper.sigma2)?;
        }
        writeln!(out, "rows")?;
        let x = &self.gps[0].data.x;
        for r in 0..x.nrows() {
            let mut cols: Vec<String> = (0..x.ncols()).map(|c| format!("{:.17e}", x[(r, c)])).collect();
            for gp in &self.gps {
                cols.push(format!("{:.17e}", gp.data.y[r]));
            }
            writeln!(out, "{}", cols.join(","))?;
        }
        Ok(())
    }

    pub fn load<R: BufRead>(input: R) -> Result<Self> {
        let err = |msg: String| Error::Parse { file: "dynamics model".into(), msg };
        let mut map = InputMap::Velocity;
        let mut t_s = 0.0;
        let mut n = 0usize;
        let mut d = 0usize;
        let mut hypers: Vec<GpHyper> = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
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
                if vals.len() != d + 3 {
                    return Err(err(format!("expected {} columns, got {}", d + 3, vals.len())));
                }
                rows.push(vals);
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
                    if value != "gp-dynamics-v1" {
                        return Err(err(format!("unsupported format `{value}`")));
                    }
                }
                "input_map" => {
                    map = match value {
                        "velocity" => InputMap::Velocity,
                        "full-state" => InputMap::FullState,
                        other => return Err(err(format!("unknown input map `{other}`"))),
                    };
                }
                "T_s" => t_s = value.parse().map_err(|e| err(format!("bad T_s: {e}")))?,
                "n" => n = value.parse().map_err(|e| err(format!("bad n: {e}")))?,
                "d" => d = value.parse().map_err(|e| err(format!("bad d: {e}")))?,
                "gp" => hypers.push(GpHyper {
                    lambda: 0.0,
                    lengthscales: DVector::zeros(d),
                    sigma2: 0.0,
                }),
                "lambda" => {
                    let h = hypers.last_mut().ok_or_else(|| err("lambda before gp".into()))?;
                    h.lambda = value.parse().map_err(|e| err(format!("bad lambda: {e}")))?;
                }
                "lengthscales" => {
                    let h = hypers.last_mut().ok_or_else(|| err("lengthscales before gp".into()))?;
                    let ls: Vec<f64> = value
                        .split_whitespace()
                        .map(|v| v.parse().map_err(|e| err(format!("bad lengthscale: {e}"))))
                        .collect::<Result<_>>()?;
                    h.lengthscales = DVector::from_column_slice(&ls);
                }
                "sigma2" => {
                    let h = hypers.last_mut().ok_or_else(|| err("sigma2 before gp".into()))?;
                    h.sigma2 = value.parse().map_err(|e| err(format!("bad sigma2: {e}")))?;
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        if hypers.len() != 3 {
            return Err(err(format!("expected 3 GPs, got {}", hypers.len())));
        }
        if rows.len() != n {
            return Err(err(format!("expected {n} rows, got {}", rows.len())));
        }
        let inputs = DMatrix::<f64>::from_fn(n, d, |r, c| rows[r][c]);
        let mut gps = Vec::with_capacity(3);
        for (i, hyper) in hypers.into_iter().enumerate() {
            let y = DVector::<f64>::from_fn(n, |r, _| rows[r][d + i]);
            gps.push(Gp::new(Dataset::new(inputs.clone(), y)?, hyper)?);
        }
        let gps: [Gp; 3] = gps.try_into().map_err(|_| Error::Factorization)?;
        Ok(DynamicsModel { gps, t_s, map })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{TargetPoint, Vec3};
    use crate::rng::RngStream;
    use approx::assert_relative_eq;

    /// Free-fall record under gravity only, sampled at `t_s`.
    fn gravity_record(t_s: f64, steps: usize, v0: Vec3) -> ThrowRecord {
        let g = 9.81;
        let p0 = Vec3::new(0.2, 0.1, 1.5);
        let samples: Vec<TrajSample> = (0..=steps)
            .map(|k| {
                let t = k as f64 * t_s;
                TrajSample {
                    t,
                    state: CartesianState::new(
                        p0 + v0 * t + 0.5 * Vec3::new(0.0, 0.0, -g) * t * t,
                        v0 + Vec3::new(0.0, 0.0, -g) * t,
                    ),
                }
            })
            .collect();
        ThrowRecord {
            v_cmd: v0.norm(),
            target: TargetPoint::new(1.0, 0.0, 0.0),
            t_r_cmd: 0.48,
            release: samples[0].state,
            samples,
            landing: Vec3::new(1.0, 0.0, 0.0),
            hit: false,
        }
    }

    fn gravity_model(t_s: f64) -> DynamicsModel {
        let mut recs = Vec::new();
        for (i, &speed) in [1.0, 1.8, 2.6, 3.4].iter().enumerate() {
            let dir = Vec3::new((i as f64 * 0.3).cos(), (i as f64 * 0.3).sin(), 0.2).normalize();
            recs.push(gravity_record(t_s, 40, dir * speed));
        }
        let data = build_dataset(&recs, InputMap::Velocity, t_s).unwrap();
        DynamicsModel::fit(&data, 120).unwrap()
    }

    #[test]
    fn two_sample_trajectory_yields_one_pair() {
        let rec = gravity_record(0.01, 1, Vec3::new(1.0, 0.0, 0.0));
        let data = build_dataset(&[rec], InputMap::Velocity, 0.01).unwrap();
        assert_eq!(data.len(), 1);
    }

    #[test]
    fn gravity_data_produces_constant_velocity_changes() {
        let t_s = 0.01;
        let rec = gravity_record(t_s, 30, Vec3::new(2.0, 0.5, 0.3));
        let data = build_dataset(&[rec], InputMap::Velocity, t_s).unwrap();
        for r in 0..data.len() {
            assert_relative_eq!(data.outputs[0][r], 0.0, epsilon = 1e-9);
            assert_relative_eq!(data.outputs[1][r], 0.0, epsilon = 1e-9);
            assert_relative_eq!(data.outputs[2][r], -9.81 * t_s, epsilon = 1e-9);
        }
    }

    #[test]
    fn dataset_size_counts_sample_pairs() {
        let recs = vec![
            gravity_record(0.01, 10, Vec3::new(1.0, 0.0, 0.0)),
            gravity_record(0.01, 25, Vec3::new(2.0, 0.0, 0.0)),
        ];
        let data = build_dataset(&recs, InputMap::Velocity, 0.01).unwrap();
        assert_eq!(data.len(), 10 + 25);
    }

    #[test]
    fn irregular_sampling_is_rejected() {
        let mut rec = gravity_record(0.01, 5, Vec3::new(1.0, 0.0, 0.0));
        rec.samples[3].t += 0.002;
        assert!(matches!(
            build_dataset(&[rec], InputMap::Velocity, 0.01),
            Err(Error::IrregularSampling { .. })
        ));
    }

    #[test]
    fn augmentation_counts_and_preserves_invariants() {
        let rec = gravity_record(0.01, 12, Vec3::new(2.0, 0.3, 0.1));
        let mut rng = RngStream::root(21).rng();
        assert_eq!(augment_trajectory(&rec, 0, &mut rng).len(), 1);
        assert_eq!(augment_trajectory(&rec, 0, &mut rng)[0], rec);

        let out = augment_trajectory(&rec, 2, &mut rng);
        assert_eq!(out.len(), 3);
        for aug in &out[1..] {
            for (a, b) in rec.samples.iter().zip(&aug.samples) {
                assert_relative_eq!(a.state.p.z, b.state.p.z, epsilon = 1e-12);
                assert_relative_eq!(a.state.v.z, b.state.v.z, epsilon = 1e-12);
                assert_relative_eq!(a.state.p.norm(), b.state.p.norm(), epsilon = 1e-12);
                assert_relative_eq!(a.state.v.norm(), b.state.v.norm(), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn one_step_reproduces_the_gravity_update() {
        let t_s = 0.01;
        let model = gravity_model(t_s);
        let state = CartesianState::new(Vec3::new(0.0, 0.0, 1.0), Vec3::new(1.5, 0.2, 0.25));
        let (mu, _) = model.one_step(&state);
        // E[Delta] is (0, 0, -g T_s) on clean gravity data.
        assert_relative_eq!(mu[0], state.p.x + t_s * state.v.x, epsilon = 1e-4);
        assert_relative_eq!(mu[2], state.p.z + t_s * state.v.z + 0.5 * t_s * (-9.81 * t_s), epsilon = 1e-4);
        assert_relative_eq!(mu[5], state.v.z - 9.81 * t_s, epsilon = 1e-4);

        let zero = CartesianState::new(Vec3::new(0.0, 0.0, 1.0), Vec3::zeros());
        let (mu0, _) = model.one_step(&zero);
        assert_relative_eq!(mu0[2], 1.0 + 0.5 * t_s * (-9.81 * t_s), epsilon = 2e-4);
        assert_relative_eq!(mu0[5], -9.81 * t_s, epsilon = 2e-4);
    }

    #[test]
    fn covariance_blocks_follow_the_speed_integration_structure() {
        let t_s = 0.01;
        let model = gravity_model(t_s);
        let state = CartesianState::new(Vec3::new(0.3, -0.2, 0.9), Vec3::new(2.2, 0.1, -0.4));
        let (_, sigma) = model.one_step(&state);
        let (_, var) = model.delta_posterior(&state);
        for i in 0..3 {
            assert_relative_eq!(sigma[(i, 3 + i)], t_s / 2.0 * var[i], epsilon = 1e-15);
            assert_relative_eq!(sigma[(3 + i, i)], t_s / 2.0 * var[i], epsilon = 1e-15);
            assert_relative_eq!(sigma[(i, i)], t_s * t_s / 4.0 * var[i], epsilon = 1e-15);
            assert_relative_eq!(sigma[(3 + i, 3 + i)], var[i], epsilon = 1e-15);
        }
        // Off-component blocks vanish: the three GPs are independent.
        assert_eq!(sigma[(0, 1)], 0.0);
        assert_eq!(sigma[(0, 4)], 0.0);
    }

    #[test]
    fn zero_sampling_period_is_an_identity_step() {
        let t_s = 0.01;
        let fitted = gravity_model(t_s);
        let model = DynamicsModel::from_gps(fitted.gps.clone(), 0.0, fitted.map);
        let state = CartesianState::new(Vec3::new(0.1, 0.2, 0.3), Vec3::new(1.0, -1.0, 0.5));
        let (mu, sigma) = model.one_step(&state);
        for i in 0..3 {
            assert_eq!(mu[i], state.p[i]);
            assert_eq!(mu[3 + i], state.v[i]);
        }
        assert_eq!(sigma, Matrix6::zeros());
    }

    #[test]
    fn zero_delta_variance_gives_zero_state_covariance() {
        // With variance clamped to zero at a heavily-sampled training input,
        // the assembled covariance must vanish identically in structure.
        let t_s = 0.01;
        let model = gravity_model(t_s);
        let state = CartesianState::new(Vec3::zeros(), Vec3::new(1.5, 0.2, 0.25));
        let (_, var) = model.delta_posterior(&state);
        let (_, sigma) = model.one_step(&state);
        for i in 0..3 {
            if var[i] == 0.0 {
                assert_eq!(sigma[(3 + i, 3 + i)], 0.0);
                assert_eq!(sigma[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn yaw_rotated_training_data_gives_equivariant_predictions() {
        // With isotropic shared hyperparameters and velocity-only inputs,
        // training on rotated data and querying rotated inputs must match
        // the unrotated model exactly (the Gram matrix is invariant and the
        // targets transform linearly).
        let t_s = 0.01;
        let mut recs = Vec::new();
        for (i, &speed) in [1.2, 2.0, 2.9].iter().enumerate() {
            let dir = Vec3::new((i as f64 * 0.4).cos(), (i as f64 * 0.4).sin(), 0.15).normalize();
            recs.push(gravity_record(t_s, 25, dir * speed));
        }
        let angle = 0.7;
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::z_axis(), angle);
        let rotated: Vec<ThrowRecord> = recs.iter().map(|r| rotate_record(r, angle)).collect();

        let hyper = GpHyper {
            lambda: 0.1,
            lengthscales: DVector::from_column_slice(&[1.0, 1.0, 1.0]),
            sigma2: 1e-6,
        };
        let build = |records: &[ThrowRecord]| {
            let data = build_dataset(records, InputMap::Velocity, t_s).unwrap();
            let gps: Vec<Gp> = (0..3)
                .map(|i| {
                    Gp::new(
                        Dataset::new(data.inputs.clone(), data.outputs[i].clone()).unwrap(),
                        hyper.clone(),
                    )
                    .unwrap()
                })
                .collect();
            DynamicsModel::from_gps(gps.try_into().unwrap(), t_s, InputMap::Velocity)
        };
        let base = build(&recs);
        let turned = build(&rotated);

        let state = CartesianState::new(Vec3::zeros(), Vec3::new(1.9, 0.4, -0.6));
        let rotated_state = CartesianState::new(Vec3::zeros(), rot * state.v);
        let (mean_a, var_a) = base.delta_posterior(&state);
        let (mean_b, var_b) = turned.delta_posterior(&rotated_state);
        let mean_a_rot = rot * Vec3::new(mean_a[0], mean_a[1], mean_a[2]);
        for i in 0..3 {
            assert_relative_eq!(mean_b[i], mean_a_rot[i], epsilon = 1e-6);
            assert_relative_eq!(var_b[i], var_a[i], epsilon = 1e-6);
        }
    }

    #[test]
    fn model_round_trips_through_the_flat_text_format() {
        let model = gravity_model(0.01);
        let mut buf = Vec::new();
        model.save(&mut buf).unwrap();
        let loaded = DynamicsModel::load(std::io::BufReader::new(buf.as_slice())).unwrap();
        assert_eq!(loaded.t_s, model.t_s);
        assert_eq!(loaded.map, model.map);
        let state = CartesianState::new(Vec3::new(0.1, 0.0, 1.0), Vec3::new(2.0, -0.3, 0.4));
        let (mu_a, sig_a) = model.one_step(&state);
        let (mu_b, sig_b) = loaded.one_step(&state);
        assert_relative_eq!(mu_a, mu_b, epsilon = 1e-12);
        assert_relative_eq!(sig_a, sig_b, epsilon = 1e-12);
    }
}
