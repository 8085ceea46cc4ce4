//! Exact Gaussian process regression with a squared-exponential kernel.
//!
//! `kernel(x, x') = lambda^2 exp(-sum_d ((x_d - x'_d) / l_d)^2)`.
//!
//! Hyperparameters are trained by maximizing the log marginal likelihood
//! over log-parameters with an adaptive-step ascent that only accepts
//! improving steps. Posteriors are computed from a jittered Cholesky
//! factorization; the explicit inverse is kept so batched queries reduce to
//! matrix products.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Squared-exponential hyperparameters: output scale, one lengthscale per
/// input dimension, and noise variance.
#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub lambda: f64,
    pub lengthscales: DVector<f64>,
    pub sigma2: f64,
}

impl GpHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.sigma2 > 0.0 && self.lengthscales.iter().all(|&l| l > 0.0))
        {
            return Err(Error::InvalidArgument(
                "GP hyperparameters must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    /// Heuristic initialization: lengthscales from the per-dimension input
    /// spread, output scale from the target spread, noise at 1% of the
    /// target variance.
    pub fn init_from_data(data: &Dataset) -> Self {
        let n = data.len();
        let d = data.dim();
        let mut ls = DVector::zeros(d);
        for j in 0..d {
            let col = data.x.column(j);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            ls[j] = var.sqrt().max(1e-3);
        }
        let mean_y = data.y.sum() / n as f64;
        let var_y = data.y.iter().map(|v| (v - mean_y).powi(2)).sum::<f64>() / n as f64;
        GpHyper {
            lambda: var_y.sqrt().max(1e-6),
            lengthscales: ls,
            sigma2: (0.01 * var_y).max(1e-10),
        }
    }
}

/// Input-output training set for one scalar GP.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// One row per observation.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "row count mismatch: {} inputs vs {} outputs",
                x.nrows(),
                y.len()
            )));
        }
        Ok(Dataset { x, y })
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }
}

/// Kernel value for a pair of points.
pub fn kernel(xi: &[f64], xj: &[f64], hyper: &GpHyper) -> f64 {
    assert_eq!(xi.len(), xj.len());
    assert_eq!(xi.len(), hyper.lengthscales.len());
    let mut s = 0.0;
    for d in 0..xi.len() {
        let t = (xi[d] - xj[d]) / hyper.lengthscales[d];
        s += t * t;
    }
    hyper.lambda * hyper.lambda * (-s).exp()
}

fn gram(x: &DMatrix<f64>, hyper: &GpHyper) -> DMatrix<f64> {
    let n = x.nrows();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        k[(i, i)] = hyper.lambda * hyper.lambda;
        for j in 0..i {
            let v = kernel(x.row(i).transpose().as_slice(), x.row(j).transpose().as_slice(), hyper);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `K + sigma2 I` with multiplicative jitter escalation from
/// 1e-10 to 1e-6 (relative to the mean diagonal).
fn factorize(
    k: &DMatrix<f64>,
    sigma2: f64,
) -> Result<(nalgebra::Cholesky<f64, nalgebra::Dyn>, f64)> {
    let n = k.nrows();
    let mean_diag = (k.diagonal().sum() / n as f64) + sigma2;
    let mut jitter_rel = 0.0;
    loop {
        let jitter = jitter_rel * mean_diag;
        let mut gamma = k.clone();
        for i in 0..n {
            gamma[(i, i)] += sigma2 + jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(gamma) {
            return Ok((chol, jitter));
        }
        jitter_rel = if jitter_rel == 0.0 { 1e-10 } else { jitter_rel * 10.0 };
        if jitter_rel > 1e-6 {
            return Err(Error::Factorization);
        }
    }
}

/// A fitted GP ready for posterior queries.
#[derive(Debug, Clone)]
pub struct Gp {
    pub data: Dataset,
    pub hyper: GpHyper,
    /// `Gamma^-1 y`.
    alpha: DVector<f64>,
    /// Explicit `Gamma^-1`, kept for batched variance queries.
    gamma_inv: DMatrix<f64>,
    /// Training inputs scaled by the lengthscales, with row norms, for fast
    /// cross-kernel assembly.
    x_scaled: DMatrix<f64>,
    x_sqnorm: DVector<f64>,
    pub jitter: f64,
}

impl Gp {
    pub fn new(data: Dataset, hyper: GpHyper) -> Result<Self> {
        hyper.validate()?;
        if data.is_empty() {
            return Err(Error::DegenerateData("empty training set".into()));
        }
        let k = gram(&data.x, &hyper);
        let (chol, jitter) = factorize(&k, hyper.sigma2)?;
        let alpha = chol.solve(&data.y);
        let gamma_inv = chol.inverse();
        let (x_scaled, x_sqnorm) = scale_rows(&data.x, &hyper);
        Ok(Gp { data, hyper, alpha, gamma_inv, x_scaled, x_sqnorm, jitter })
    }

    /// Fit hyperparameters from the heuristic initialization, then factorize.
    pub fn fit(data: Dataset, iters: usize) -> Result<Self> {
        let init = GpHyper::init_from_data(&data);
        let hyper = fit_hyperparameters(&data, &init, iters)?;
        Gp::new(data, hyper)
    }

    pub fn n(&self) -> usize {
        self.data.len()
    }

    /// Posterior mean and variance at a query point. The variance is clamped
    /// to zero (negative values up to -1e-10 are factorization roundoff).
    pub fn posterior(&self, x: &[f64]) -> (f64, f64) {
        let (mean, raw) = self.posterior_raw(x);
        (mean, raw.max(0.0))
    }

    /// Posterior with the unclamped variance, for diagnostics.
    pub fn posterior_raw(&self, x: &[f64]) -> (f64, f64) {
        let n = self.n();
        let mut k = DVector::zeros(n);
        for i in 0..n {
            k[i] = kernel(x, self.data.x.row(i).transpose().as_slice(), &self.hyper);
        }
        let mean = k.dot(&self.alpha);
        let q = &self.gamma_inv * &k;
        let var = self.hyper.lambda * self.hyper.lambda - k.dot(&q);
        (mean, var)
    }

    /// Batched posterior over query rows `z` (m x d). Returns the cross
    /// kernel `K` (m x n) and `Q = K Gamma^-1` alongside the moments so
    /// callers can differentiate through the query.
    pub fn posterior_batch(&self, z: &DMatrix<f64>) -> PosteriorBatch {
        let k = self.cross_kernel(z);
        let q = &k * &self.gamma_inv;
        let m = z.nrows();
        let mut mean = DVector::zeros(m);
        let mut var = DVector::zeros(m);
        let lam2 = self.hyper.lambda * self.hyper.lambda;
        for i in 0..m {
            mean[i] = k.row(i).transpose().dot(&self.alpha);
            var[i] = (lam2 - k.row(i).dot(&q.row(i))).max(0.0);
        }
        PosteriorBatch { k, q, mean, var }
    }

    /// Cross-kernel matrix between query rows and the training set.
    pub fn cross_kernel(&self, z: &DMatrix<f64>) -> DMatrix<f64> {
        let (z_scaled, z_sqnorm) = scale_rows(z, &self.hyper);
        let mut k = &z_scaled * self.x_scaled.transpose();
        let lam2 = self.hyper.lambda * self.hyper.lambda;
        for j in 0..k.ncols() {
            for i in 0..k.nrows() {
                let e = 2.0 * k[(i, j)] - z_sqnorm[i] - self.x_sqnorm[j];
                k[(i, j)] = lam2 * e.exp();
            }
        }
        k
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        lml(&self.data, &self.hyper).unwrap_or(f64::NEG_INFINITY)
    }
}

/// Batched posterior with the intermediates needed for pathwise gradients.
pub struct PosteriorBatch {
    pub k: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub mean: DVector<f64>,
    pub var: DVector<f64>,
}

fn scale_rows(x: &DMatrix<f64>, hyper: &GpHyper) -> (DMatrix<f64>, DVector<f64>) {
    let mut scaled = x.clone();
    for j in 0..scaled.ncols() {
        let inv = 1.0 / hyper.lengthscales[j];
        for i in 0..scaled.nrows() {
            scaled[(i, j)] *= inv;
        }
    }
    let sqnorm = DVector::from_iterator(
        scaled.nrows(),
        (0..scaled.nrows()).map(|i| scaled.row(i).norm_squared()),
    );
    (scaled, sqnorm)
}

/// Log marginal likelihood of a dataset under the hyperparameters.
pub fn lml(data: &Dataset, hyper: &GpHyper) -> Result<f64> {
    let k = gram(&data.x, hyper);
    let (chol, _) = factorize(&k, hyper.sigma2)?;
    let alpha = chol.solve(&data.y);
    let logdet: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    let n = data.len() as f64;
    Ok(-0.5 * data.y.dot(&alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

fn lml_and_grad(data: &Dataset, hyper: &GpHyper) -> Result<(f64, DVector<f64>)> {
    let n = data.len();
    let d = data.dim();
    let k = gram(&data.x, hyper);
    let (chol, _) = factorize(&k, hyper.sigma2)?;
    let alpha = chol.solve(&data.y);
    let gamma_inv = chol.inverse();
    let logdet: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum();
    let value =
        -0.5 * data.y.dot(&alpha) - logdet - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();

    // A = alpha alpha^T - Gamma^-1; dL/dtheta = tr(A dGamma/dtheta) / 2.
    let mut grad = DVector::zeros(d + 2);
    let mut tr_a = 0.0;
    let mut sum_ak = 0.0;
    let mut per_dim = vec![0.0; d];
    for i in 0..n {
        for j in 0..n {
            let a_ij = alpha[i] * alpha[j] - gamma_inv[(i, j)];
            if i == j {
                tr_a += a_ij;
            }
            let k_ij = k[(i, j)];
            sum_ak += a_ij * k_ij;
            for dim in 0..d {
                let delta = data.x[(i, dim)] - data.x[(j, dim)];
                let l = hyper.lengthscales[dim];
                per_dim[dim] += a_ij * k_ij * delta * delta / (l * l);
            }
        }
    }
    // Parameter order: [ln lambda, ln l_1.., ln sigma2].
    grad[0] = sum_ak;
    for (dim, g) in per_dim.iter().enumerate() {
        grad[1 + dim] = *g;
    }
    grad[d + 1] = 0.5 * hyper.sigma2 * tr_a;
    Ok((value, grad))
}

fn pack(hyper: &GpHyper) -> DVector<f64> {
    let d = hyper.lengthscales.len();
    let mut t = DVector::zeros(d + 2);
    t[0] = hyper.lambda.ln();
    for i in 0..d {
        t[1 + i] = hyper.lengthscales[i].ln();
    }
    t[d + 1] = hyper.sigma2.ln();
    t
}

fn unpack(theta: &DVector<f64>, d: usize) -> GpHyper {
    GpHyper {
        lambda: theta[0].exp(),
        lengthscales: DVector::from_iterator(d, (0..d).map(|i| theta[1 + i].exp())),
        sigma2: theta[d + 1].exp(),
    }
}

fn clamp_theta(theta: &mut DVector<f64>, d: usize) {
    theta[0] = theta[0].clamp((1e-8f64).ln(), (1e6f64).ln());
    for i in 0..d {
        theta[1 + i] = theta[1 + i].clamp((1e-4f64).ln(), (1e4f64).ln());
    }
    theta[d + 1] = theta[d + 1].clamp((1e-12f64).ln(), (1e6f64).ln());
}

/// Maximize the log marginal likelihood over log-parameters.
///
/// Adaptive-step normalized gradient ascent; only improving steps are
/// accepted, so the returned likelihood is never below the initial one.
/// `iters = 0` returns the initialization unchanged.
pub fn fit_hyperparameters(data: &Dataset, init: &GpHyper, iters: usize) -> Result<GpHyper> {
    init.validate()?;
    if data.len() < 2 {
        return Err(Error::DegenerateData(format!(
            "hyperparameter fitting needs at least 2 points, got {}",
            data.len()
        )));
    }
    let d = data.dim();
    let mut theta = pack(init);
    let (mut best, mut grad) = lml_and_grad(data, init)?;
    if !best.is_finite() {
        return Err(Error::DegenerateData("non-finite marginal likelihood".into()));
    }
    let mut step = 0.1;
    for _ in 0..iters {
        let gn = grad.norm();
        if gn < 1e-12 || step < 1e-9 {
            break;
        }
        let mut trial = &theta + &grad * (step / gn);
        clamp_theta(&mut trial, d);
        let hyper = unpack(&trial, d);
        match lml_and_grad(data, &hyper) {
            Ok((value, g)) if value.is_finite() && value > best => {
                theta = trial;
                best = value;
                grad = g;
                step = (step * 1.3).min(2.0);
            }
            _ => step *= 0.5,
        }
    }
    Ok(unpack(&theta, d))
}
