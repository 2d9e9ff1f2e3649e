//! Run configuration: a flat `key = value` file plus command-line overrides.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use etnode_core::config::MODEL_KEYS;
use etnode_core::odenet::TimeGrid;
use etnode_core::ModelConfig;

use crate::error::CliError;

/// Keys beyond the model hyperparameters.
pub const RUN_KEYS: &[&str] = &[
    "data",
    "target",
    "exogenous",
    "resample_half",
    "out",
    "checkpoint",
    "offsets",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub data: Option<PathBuf>,
    pub target: String,
    /// Empty means every column except the target, in file order.
    pub exogenous: Vec<String>,
    /// Train and evaluate on the even-index half of the series.
    pub resample_half: bool,
    pub out: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub offsets: Option<Vec<f64>>,
    /// Set when any `solver.*` key was given; inference then uses these
    /// solver settings instead of the checkpoint's.
    pub solver_override: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::default(),
            data: None,
            target: "y".to_string(),
            exogenous: Vec::new(),
            resample_half: false,
            out: None,
            checkpoint: None,
            offsets: None,
            solver_override: false,
        }
    }
}

/// Parses a comma-separated offset list into a validated grid.
pub fn parse_offsets(s: &str) -> Result<Vec<f64>, CliError> {
    let values: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| CliError::Usage(format!("invalid offset `{}` in `{s}`", p.trim())))
        })
        .collect::<Result<_, _>>()?;
    TimeGrid::new(values.clone()).map_err(|e| CliError::Usage(format!("offsets `{s}`: {e}")))?;
    Ok(values)
}

fn format_list<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let value = value.trim();
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "target" => self.target = value.to_string(),
            "exogenous" => {
                self.exogenous = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(str::to_string)
                    .collect()
            }
            "resample_half" => {
                self.resample_half = value
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid value `{value}` for `{key}`")))?
            }
            "out" => self.out = Some(PathBuf::from(value)),
            "checkpoint" => self.checkpoint = Some(PathBuf::from(value)),
            "offsets" => self.offsets = Some(parse_offsets(value)?),
            k if MODEL_KEYS.contains(&k) => {
                self.model
                    .set(k, value)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                self.solver_override |= k.starts_with("solver.");
            }
            other => return Err(CliError::Usage(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Parses config text. Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected `key = value`, got `{line}`", i + 1)))?;
            cfg.set(key.trim(), value).map_err(|e| match e {
                CliError::Usage(msg) => CliError::Usage(format!("line {}: {msg}", i + 1)),
                other => other,
            })?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Usage(msg) => CliError::Usage(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// Every key with its resolved value, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(d) = &self.data {
            line("data", d.display().to_string());
        }
        line("target", self.target.clone());
        if !self.exogenous.is_empty() {
            line("exogenous", self.exogenous.join(","));
        }
        line("resample_half", self.resample_half.to_string());
        if let Some(o) = &self.out {
            line("out", o.display().to_string());
        }
        if let Some(c) = &self.checkpoint {
            line("checkpoint", c.display().to_string());
        }
        if let Some(o) = &self.offsets {
            line("offsets", format_list(o));
        }
        for (k, v) in self.model.to_pairs() {
            line(k, v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_and_comments() {
        let cfg = RunConfig::parse(
            "# demo\n data = a.csv \ntarget=Y # trailing\nexogenous = x1, x2\nhidden = 7\nsolver.method = rk45\n\n",
        )
        .unwrap();
        assert_eq!(cfg.data.as_deref(), Some(Path::new("a.csv")));
        assert_eq!(cfg.target, "Y");
        assert_eq!(cfg.exogenous, ["x1", "x2"]);
        assert_eq!(cfg.model.hidden, 7);
        assert_eq!(cfg.model.solver.method, etnode_core::SolverMethod::Rk45);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = RunConfig::parse("hidden = 3\nlerning_rate = 0.1\n").unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("lerning_rate") && msg.contains("line 2"), "{msg}");
        assert!(RunConfig::parse("just words\n").is_err());
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::parse("data = d.csv\nexogenous = a,b\nresample_half = true\noffsets = 1,1.5\n").unwrap();
        cfg.model.noise_std = 0.0123;
        cfg.out = Some("runs/x".into());
        let back = RunConfig::parse(&cfg.to_text()).unwrap();
        assert!(back.solver_override && !cfg.solver_override);
        cfg.solver_override = true;
        assert_eq!(back, cfg);
    }

    #[test]
    fn offsets_validation() {
        assert_eq!(parse_offsets("1, 1.5,2").unwrap(), [1.0, 1.5, 2.0]);
        for bad in ["0", "-1", "2,1", "1,,2", "a", "1,1"] {
            assert_eq!(parse_offsets(bad).unwrap_err().exit_code(), 2, "{bad}");
        }
    }
}
