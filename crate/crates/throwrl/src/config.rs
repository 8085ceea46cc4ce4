//! Plain-text `key = value` configuration covering every tunable in the
//! pipeline. Unset keys fall back to the simulation defaults.

use std::collections::BTreeSet;
use std::path::Path;

use crate::domain::{CostParams, PhysicalConstants, TargetDomain};
use crate::world::DragLaw;
use crate::{Error, Result};

/// Full pipeline configuration.
///
/// Field names mirror the config-file keys. See `Config::default` for the
/// default experiment: a desk-scale throwing task with a golf-ball-sized
/// bullet, drag enabled, and a planted uniform release delay.
#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    // Target domain.
    pub l_m: f64,
    pub l_big_m: f64,
    pub gamma_m: f64,
    pub z_p: f64,

    // Release geometry. `alpha` < f64::INFINITY overrides the arm's
    // intrinsic release elevation; the default defers to the kinematics.
    pub l_r: f64,
    pub z_rel: f64,
    pub alpha: f64,

    // Cost and policy.
    pub l_c: f64,
    pub u_m: f64,
    pub n_b: usize,
    pub sigma_pi: f64,
    pub dropout_p: f64,

    // Rollout and optimization.
    pub t_s: f64,
    pub t_horizon: f64,
    pub m_particles: usize,
    pub m_d: usize,
    pub n_opt: usize,
    pub learning_rate: f64,

    // Trial structure.
    pub n_exp: usize,
    pub n_a: usize,
    pub n_test: usize,
    pub trials: usize,
    pub hit_radius: f64,

    // Timing of the throwing motion.
    pub t_r: f64,
    pub t_dec: f64,

    // World: physics, drag and the planted true delay.
    pub g: f64,
    pub rho: f64,
    pub nu: f64,
    pub ball_radius: f64,
    pub ball_mass: f64,
    pub drag_enabled: bool,
    pub drag_law: DragLaw,
    pub delay_lo: f64,
    pub delay_hi: f64,
    pub integrator_step: f64,

    // Delay estimation (Bayesian optimization).
    pub bo_a_min: f64,
    pub bo_a_max: f64,
    pub bo_b_min: f64,
    pub bo_b_max: f64,
    pub bo_sigma_ucb: f64,
    pub bo_n_init: usize,
    pub bo_n_iter: usize,

    // GP fitting.
    pub fit_iters: usize,
    pub full_state_input: bool,

    // Network baseline.
    pub mlp_hidden_layers: usize,
    pub mlp_epochs: usize,
    pub mlp_learning_rate: f64,

    pub seed: u64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            l_m: 0.75,
            l_big_m: 2.4,
            gamma_m: std::f64::consts::FRAC_PI_6,
            z_p: -1.2,
            l_r: 0.07,
            z_rel: 1.50,
            alpha: f64::INFINITY,
            l_c: 0.1,
            u_m: 3.5,
            n_b: 250,
            sigma_pi: 0.5,
            dropout_p: 0.25,
            t_s: 0.01,
            t_horizon: 1.0,
            m_particles: 400,
            m_d: 10,
            n_opt: 1500,
            learning_rate: 0.01,
            n_exp: 5,
            n_a: 0,
            n_test: 10,
            trials: 1,
            hit_radius: 0.1,
            t_r: 0.48,
            t_dec: 0.5,
            g: 9.81,
            rho: 1.204,
            nu: 1.516e-5,
            ball_radius: 0.0215,
            ball_mass: 0.02,
            drag_enabled: true,
            drag_law: DragLaw::CliftGauvin,
            delay_lo: 0.01,
            delay_hi: 0.02,
            integrator_step: 0.001,
            bo_a_min: -0.3,
            bo_a_max: 0.3,
            bo_b_min: 0.0,
            bo_b_max: 0.01,
            bo_sigma_ucb: 2.0,
            bo_n_init: 10,
            bo_n_iter: 40,
            fit_iters: 500,
            full_state_input: false,
            mlp_hidden_layers: 2,
            mlp_epochs: 2000,
            mlp_learning_rate: 1e-3,
            seed: 1,
        }
    }
}

impl Config {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_named(&text, &path.display().to_string())
    }

    pub fn from_str_named(text: &str, name: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut seen = BTreeSet::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                file: name.to_string(),
                msg: format!("line {}: expected `key = value`, got `{raw}`", idx + 1),
            })?;
            let key = key.trim();
            let value = value.trim();
            if !seen.insert(key.to_string()) {
                return Err(Error::Parse {
                    file: name.to_string(),
                    msg: format!("line {}: duplicate key `{key}`", idx + 1),
                });
            }
            cfg.set(key, value).map_err(|e| Error::Parse {
                file: name.to_string(),
                msg: format!("line {}: {e}", idx + 1),
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply a single `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn f(v: &str) -> Result<f64> {
            v.parse().map_err(|_| Error::Config(format!("expected a number, got `{v}`")))
        }
        fn u(v: &str) -> Result<usize> {
            v.parse().map_err(|_| Error::Config(format!("expected an integer, got `{v}`")))
        }
        fn b(v: &str) -> Result<bool> {
            match v {
                "true" | "on" | "1" => Ok(true),
                "false" | "off" | "0" => Ok(false),
                _ => Err(Error::Config(format!("expected a boolean, got `{v}`"))),
            }
        }
        match key {
            "l_m" => self.l_m = f(value)?,
            "l_M" => self.l_big_m = f(value)?,
            "gamma_M" => self.gamma_m = f(value)?,
            "z_P" => self.z_p = f(value)?,
            "l_r" => self.l_r = f(value)?,
            "z_rel" => self.z_rel = f(value)?,
            "alpha" => {
                self.alpha = if value == "auto" { f64::INFINITY } else { f(value)? };
            }
            "l_c" => self.l_c = f(value)?,
            "u_M" => self.u_m = f(value)?,
            "N_b" => self.n_b = u(value)?,
            "sigma_pi" => self.sigma_pi = f(value)?,
            "dropout_p" => self.dropout_p = f(value)?,
            "T_s" => self.t_s = f(value)?,
            "T" => self.t_horizon = f(value)?,
            "M" => self.m_particles = u(value)?,
            "M_d" => self.m_d = u(value)?,
            "N_opt" => self.n_opt = u(value)?,
            "learning_rate" => self.learning_rate = f(value)?,
            "N_exp" => self.n_exp = u(value)?,
            "N_a" => self.n_a = u(value)?,
            "N_test" => self.n_test = u(value)?,
            "trials" => self.trials = u(value)?,
            "hit_radius" => self.hit_radius = f(value)?,
            "t_r" => self.t_r = f(value)?,
            "t_dec" => self.t_dec = f(value)?,
            "g" => self.g = f(value)?,
            "rho" => self.rho = f(value)?,
            "nu" => self.nu = f(value)?,
            "ball_radius" => self.ball_radius = f(value)?,
            "ball_mass" => self.ball_mass = f(value)?,
            "drag_enabled" => self.drag_enabled = b(value)?,
            "drag_law" => {
                self.drag_law = match value {
                    "clift-gauvin" => DragLaw::CliftGauvin,
                    other => {
                        let cd = other.strip_prefix("constant:").ok_or_else(|| {
                            Error::Config(format!(
                                "drag_law must be `clift-gauvin` or `constant:<cd>`, got `{other}`"
                            ))
                        })?;
                        DragLaw::Constant(f(cd)?)
                    }
                };
            }
            "delay_lo" => self.delay_lo = f(value)?,
            "delay_hi" => self.delay_hi = f(value)?,
            "integrator_step" => self.integrator_step = f(value)?,
            "bo_a_min" => self.bo_a_min = f(value)?,
            "bo_a_max" => self.bo_a_max = f(value)?,
            "bo_b_min" => self.bo_b_min = f(value)?,
            "bo_b_max" => self.bo_b_max = f(value)?,
            "bo_sigma_ucb" => self.bo_sigma_ucb = f(value)?,
            "bo_n_init" => self.bo_n_init = u(value)?,
            "bo_n_iter" => self.bo_n_iter = u(value)?,
            "fit_iters" => self.fit_iters = u(value)?,
            "full_state_input" => self.full_state_input = b(value)?,
            "mlp_hidden_layers" => self.mlp_hidden_layers = u(value)?,
            "mlp_epochs" => self.mlp_epochs = u(value)?,
            "mlp_learning_rate" => self.mlp_learning_rate = f(value)?,
            "seed" => {
                self.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("expected a u64 seed, got `{value}`")))?;
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.domain()?;
        CostParams::new(self.l_c)?;
        if self.u_m <= 0.0 {
            return Err(Error::Config(format!("u_M must be positive, got {}", self.u_m)));
        }
        if self.n_b == 0 {
            return Err(Error::Config("N_b must be at least 1".into()));
        }
        if self.t_s <= 0.0 || self.t_horizon <= 0.0 {
            return Err(Error::Config("T_s and T must be positive".into()));
        }
        if self.integrator_step <= 0.0 || self.integrator_step > self.t_s {
            return Err(Error::Config(format!(
                "integrator_step must lie in (0, T_s = {}], got {}",
                self.t_s, self.integrator_step
            )));
        }
        if self.m_particles == 0 || self.m_d == 0 {
            return Err(Error::Config("M and M_d must be at least 1".into()));
        }
        if self.n_exp == 0 {
            return Err(Error::Config("N_exp must be at least 1".into()));
        }
        if !(0.0 <= self.delay_lo && self.delay_lo <= self.delay_hi) {
            return Err(Error::Config(format!(
                "true delay interval must satisfy 0 <= lo <= hi, got [{}, {}]",
                self.delay_lo, self.delay_hi
            )));
        }
        if self.ball_radius <= 0.0 || self.ball_mass <= 0.0 {
            return Err(Error::Config("ball radius and mass must be positive".into()));
        }
        if !(0.0..=0.9).contains(&self.dropout_p) {
            return Err(Error::Config(format!(
                "dropout_p must lie in [0, 0.9], got {}",
                self.dropout_p
            )));
        }
        if self.bo_n_init < 2 {
            return Err(Error::Config("bo_n_init must be at least 2".into()));
        }
        if !(1..=3).contains(&self.mlp_hidden_layers) {
            return Err(Error::Config(format!(
                "mlp_hidden_layers must be 1, 2 or 3, got {}",
                self.mlp_hidden_layers
            )));
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<TargetDomain> {
        TargetDomain::new(self.l_m, self.l_big_m, self.gamma_m, self.z_p)
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants { g: self.g, rho: self.rho, nu: self.nu }
    }
}
