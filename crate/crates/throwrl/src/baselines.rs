//! Reference policies: the closed-form ballistic release speed and a
//! feed-forward network trained to invert recorded landings.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::domain::{polar_of_target, PhysicalConstants, ReleaseGeometry, TargetPoint, Vec3};
use crate::{Error, Result};

/// Drag-free release speed for a target: `v = sqrt(g d^2 / (2 cos^2(a)
/// (d tan(a) - z_P + z_rel)))` with `d` the horizontal distance from the
/// release point to the target.
pub fn ballistic_policy(
    target: &TargetPoint,
    geom: &ReleaseGeometry,
    constants: &PhysicalConstants,
) -> Result<f64> {
    let (_, gamma) = polar_of_target(target)?;
    let rel_x = geom.l_r * gamma.cos();
    let rel_y = geom.l_r * gamma.sin();
    let d = (target.x - rel_x).hypot(target.y - rel_y);
    let cos_a = geom.alpha.cos();
    let denom = 2.0 * cos_a * cos_a * (d * geom.alpha.tan() - target.z + geom.z_rel);
    if denom <= 0.0 {
        return Err(Error::BallisticUnreachable(denom));
    }
    Ok((constants.g * d * d / denom).sqrt())
}

/// Training set for the network baseline: recorded landing points paired
/// with the speeds that produced them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RegressionSet {
    pub inputs: Vec<Vec3>,
    pub targets: Vec<f64>,
}

impl RegressionSet {
    pub fn push(&mut self, landing: Vec3, speed: f64) {
        self.inputs.push(landing);
        self.targets.push(speed);
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "x,y,z,v")?;
        for (p, v) in self.inputs.iter().zip(&self.targets) {
            writeln!(
                out,
                "{},{},{},{}",
                crate::world::fmt9(p.x),
                crate::world::fmt9(p.y),
                crate::world::fmt9(p.z),
                crate::world::fmt9(*v)
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut set = RegressionSet::default();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line == "x,y,z,v" {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|v| {
                    v.trim().parse().map_err(|e| Error::Parse {
                        file: "regression set".into(),
                        msg: format!("bad value `{v}`: {e}"),
                    })
                })
                .collect::<Result<_>>()?;
            if vals.len() != 4 {
                return Err(Error::Parse {
                    file: "regression set".into(),
                    msg: format!("expected 4 columns, got {}", vals.len()),
                });
            }
            set.push(Vec3::new(vals[0], vals[1], vals[2]), vals[3]);
        }
        Ok(set)
    }
}

/// Feed-forward network with rectified-linear hidden layers of 200 units and
/// an output squashed into `(0, u_M)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    /// Per-layer weight matrices and biases; the final layer has one row.
    layers: Vec<(DMatrix<f64>, DVector<f64>)>,
    pub u_max: f64,
}

const HIDDEN: usize = 200;

impl MlpModel {
    /// Randomly initialized network with `n_h` hidden layers.
    pub fn init<R: Rng>(n_h: usize, u_max: f64, rng: &mut R) -> Result<Self> {
        if !(1..=3).contains(&n_h) {
            return Err(Error::InvalidArgument(format!(
                "hidden layer count must be 1, 2 or 3, got {n_h}"
            )));
        }
        let mut dims = vec![3usize];
        dims.extend(std::iter::repeat(HIDDEN).take(n_h));
        dims.push(1);
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let weight = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..=bound));
            layers.push((weight, DVector::zeros(fan_out)));
        }
        Ok(MlpModel { layers, u_max })
    }

    fn forward_traced(&self, input: &Vec3) -> (f64, Vec<DVector<f64>>) {
        let mut activations = vec![DVector::from_column_slice(input.as_slice())];
        let last = self.layers.len() - 1;
        for (i, (w, b)) in self.layers.iter().enumerate() {
            let mut z = w * activations.last().unwrap() + b;
            if i < last {
                z.apply(|v| *v = v.max(0.0));
            }
            activations.push(z);
        }
        let z_out = activations.last().unwrap()[0];
        let v = 0.5 * self.u_max * (z_out.tanh() + 1.0);
        (v, activations)
    }

    pub fn eval(&self, target: &TargetPoint) -> f64 {
        let (v, _) = self.forward_traced(&target.vec());
        v
    }
}

/// Deterministic forward pass of the trained network.
pub fn mlp_policy(model: &MlpModel, target: &TargetPoint) -> f64 {
    model.eval(target)
}

/// Train on mean squared error with full-batch adaptive-moment steps.
/// Returns the trained model and the final loss.
pub fn train_mlp(
    data: &RegressionSet,
    n_h: usize,
    epochs: usize,
    learning_rate: f64,
    u_max: f64,
    rng: &mut impl Rng,
) -> Result<(MlpModel, f64)> {
    if data.is_empty() {
        return Err(Error::DegenerateData("network training set is empty".into()));
    }
    let mut model = MlpModel::init(n_h, u_max, rng)?;
    let n = data.len() as f64;
    let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
    let mut m: Vec<(DMatrix<f64>, DVector<f64>)> =
        model.layers.iter().map(|(w, b)| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(b.len()))).collect();
    let mut v: Vec<(DMatrix<f64>, DVector<f64>)> = m.clone();
    let mut loss = f64::INFINITY;
    for epoch in 1..=epochs {
        let mut grads: Vec<(DMatrix<f64>, DVector<f64>)> = model
            .layers
            .iter()
            .map(|(w, b)| (DMatrix::zeros(w.nrows(), w.ncols()), DVector::zeros(b.len())))
            .collect();
        loss = 0.0;
        for (input, &target_v) in data.inputs.iter().zip(&data.targets) {
            let (out, acts) = model.forward_traced(input);
            let err = out - target_v;
            loss += err * err / n;
            // d loss / d z_out through the squash.
            let z_out = acts.last().unwrap()[0];
            let sech2 = 1.0 - z_out.tanh().powi(2);
            let mut delta = DVector::from_element(1, 2.0 * err / n * 0.5 * model.u_max * sech2);
            for l in (0..model.layers.len()).rev() {
                let a_prev = &acts[l];
                grads[l].0 += &delta * a_prev.transpose();
                grads[l].1 += &delta;
                if l > 0 {
                    let mut back = model.layers[l].0.transpose() * &delta;
                    for (bi, a) in back.iter_mut().zip(acts[l].iter()) {
                        if *a <= 0.0 {
                            *bi = 0.0;
                        }
                    }
                    delta = back;
                }
            }
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss);
        }
        let b1t = 1.0 - beta1.powi(epoch as i32);
        let b2t = 1.0 - beta2.powi(epoch as i32);
        for l in 0..model.layers.len() {
            for (param, grad, m1, v1) in [
                (&mut model.layers[l].0, &grads[l].0, &mut m[l].0, &mut v[l].0),
            ] {
                for i in 0..param.len() {
                    m1[i] = beta1 * m1[i] + (1.0 - beta1) * grad[i];
                    v1[i] = beta2 * v1[i] + (1.0 - beta2) * grad[i] * grad[i];
                    param[i] -= learning_rate * (m1[i] / b1t) / ((v1[i] / b2t).sqrt() + eps);
                }
            }
            let (grad_b, m_b, v_b) = (&grads[l].1, &mut m[l].1, &mut v[l].1);
            let param_b = &mut model.layers[l].1;
            for i in 0..param_b.len() {
                m_b[i] = beta1 * m_b[i] + (1.0 - beta1) * grad_b[i];
                v_b[i] = beta2 * v_b[i] + (1.0 - beta2) * grad_b[i] * grad_b[i];
                param_b[i] -= learning_rate * (m_b[i] / b1t) / ((v_b[i] / b2t).sqrt() + eps);
            }
        }
    }
    Ok((model, loss))
}
