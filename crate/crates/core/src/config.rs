//! Model, solver and training hyperparameters.
//!
//! Every field has a flat string key (`solver.method`, `learning_rate`, ...)
//! so the same names are used by config files, run manifests and checkpoints.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SolverMethod {
    Euler,
    Rk4,
    /// Dormand-Prince 5(4) with embedded error control.
    Rk45,
}

impl fmt::Display for SolverMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverMethod::Euler => "euler",
            SolverMethod::Rk4 => "rk4",
            SolverMethod::Rk45 => "rk45",
        })
    }
}

impl FromStr for SolverMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(SolverMethod::Euler),
            "rk4" => Ok(SolverMethod::Rk4),
            "rk45" => Ok(SolverMethod::Rk45),
            other => Err(Error::contract(format!(
                "unknown solver method `{other}` (expected euler, rk4 or rk45)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: SolverMethod,
    /// Step for fixed-step methods, in units of the input sampling interval.
    pub step: f64,
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            method: SolverMethod::Rk4,
            step: 0.1,
            rtol: 1e-6,
            atol: 1e-8,
            max_steps: 100_000,
        }
    }
}

impl SolverConfig {
    pub fn fixed(method: SolverMethod, step: f64) -> Self {
        Self {
            method,
            step,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::contract(format!("{name} must be positive, got {v}")))
            }
        };
        positive("solver.step", self.step)?;
        positive("solver.rtol", self.rtol)?;
        positive("solver.atol", self.atol)?;
        if self.max_steps == 0 {
            return Err(Error::contract("solver.max_steps must be positive"));
        }
        Ok(())
    }
}

/// Architecture variant: the full model or one of the two ablations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// A single affine map from the context vector to the K integer-offset outputs.
    NoOde,
    /// Mean pooling of hidden states in place of tandem attention.
    NoAtt,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Full => "full",
            Variant::NoOde => "no_ode",
            Variant::NoAtt => "no_att",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Variant::Full),
            "no_ode" => Ok(Variant::NoOde),
            "no_att" => Ok(Variant::NoAtt),
            other => Err(Error::contract(format!(
                "unknown variant `{other}` (expected full, no_ode or no_att)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Input window length T.
    pub window: usize,
    /// Number of integer training offsets K (grid 1..=K).
    pub horizon: usize,
    /// Hidden units per variable d.
    pub hidden: usize,
    /// Latent dimension q.
    pub latent: usize,
    /// Observation noise standard deviation s of the Gaussian likelihood.
    pub noise_std: f64,
    pub l2: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub variant: Variant,
    /// Whether the vector field includes the GRU reset gate.
    pub reset_gate: bool,
    pub solver: SolverConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 20,
            horizon: 3,
            hidden: 10,
            latent: 32,
            noise_std: 0.05,
            l2: 0.001,
            learning_rate: 0.01,
            batch_size: 128,
            epochs: 100,
            seed: 0,
            variant: Variant::Full,
            reset_gate: true,
            solver: SolverConfig::default(),
        }
    }
}

/// Keys accepted by [`ModelConfig::set`], in manifest order.
pub const MODEL_KEYS: &[&str] = &[
    "window",
    "horizon",
    "hidden",
    "latent",
    "noise_std",
    "l2",
    "learning_rate",
    "batch_size",
    "epochs",
    "seed",
    "variant",
    "field.reset_gate",
    "solver.method",
    "solver.step",
    "solver.rtol",
    "solver.atol",
    "solver.max_steps",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::contract(format!("invalid value `{value}` for `{key}`")))
}

impl ModelConfig {
    /// Training grid: integer offsets `1..=horizon`.
    pub fn train_offsets(&self) -> Vec<f64> {
        (1..=self.horizon).map(|k| k as f64).collect()
    }

    /// Sets one field from its string key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "window" => self.window = parse(key, value)?,
            "horizon" => self.horizon = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "latent" => self.latent = parse(key, value)?,
            "noise_std" => self.noise_std = parse(key, value)?,
            "l2" => self.l2 = parse(key, value)?,
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "variant" => self.variant = value.trim().parse()?,
            "field.reset_gate" => self.reset_gate = parse(key, value)?,
            "solver.method" => self.solver.method = value.trim().parse()?,
            "solver.step" => self.solver.step = parse(key, value)?,
            "solver.rtol" => self.solver.rtol = parse(key, value)?,
            "solver.atol" => self.solver.atol = parse(key, value)?,
            "solver.max_steps" => self.solver.max_steps = parse(key, value)?,
            other => return Err(Error::contract(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// All fields as `(key, value)` pairs; values round-trip through [`ModelConfig::set`].
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        MODEL_KEYS
            .iter()
            .map(|&k| {
                let v = match k {
                    "window" => self.window.to_string(),
                    "horizon" => self.horizon.to_string(),
                    "hidden" => self.hidden.to_string(),
                    "latent" => self.latent.to_string(),
                    "noise_std" => self.noise_std.to_string(),
                    "l2" => self.l2.to_string(),
                    "learning_rate" => self.learning_rate.to_string(),
                    "batch_size" => self.batch_size.to_string(),
                    "epochs" => self.epochs.to_string(),
                    "seed" => self.seed.to_string(),
                    "variant" => self.variant.to_string(),
                    "field.reset_gate" => self.reset_gate.to_string(),
                    "solver.method" => self.solver.method.to_string(),
                    "solver.step" => self.solver.step.to_string(),
                    "solver.rtol" => self.solver.rtol.to_string(),
                    "solver.atol" => self.solver.atol.to_string(),
                    "solver.max_steps" => self.solver.max_steps.to_string(),
                    _ => unreachable!(),
                };
                (k, v)
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("window", self.window),
            ("horizon", self.horizon),
            ("hidden", self.hidden),
            ("latent", self.latent),
            ("batch_size", self.batch_size),
            ("epochs", self.epochs),
        ] {
            if v == 0 {
                return Err(Error::contract(format!("{name} must be positive")));
            }
        }
        if !(self.noise_std > 0.0) {
            return Err(Error::contract("noise_std must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::contract("learning_rate must be positive"));
        }
        if !(self.l2 >= 0.0) {
            return Err(Error::contract("l2 must be non-negative"));
        }
        self.solver.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_round_trip() {
        let mut cfg = ModelConfig {
            noise_std: 0.123456789012345,
            variant: Variant::NoAtt,
            reset_gate: false,
            ..ModelConfig::default()
        };
        cfg.solver.method = SolverMethod::Rk45;
        let mut back = ModelConfig::default();
        for (k, v) in cfg.to_pairs() {
            back.set(k, &v).unwrap();
        }
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ModelConfig::default().set("lerning_rate", "0.1").unwrap_err();
        assert!(err.to_string().contains("lerning_rate"));
    }

    #[test]
    fn defaults_validate() {
        ModelConfig::default().validate().unwrap();
        let bad = ModelConfig {
            noise_std: 0.0,
            ..ModelConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
