//! Line-based text checkpoints.
//!
//! ```text
//! etnode-checkpoint 1
//! config <key> <value>            one line per model config key
//! column <mean> <std> <name>      one line per input column, target last
//! epoch <n>
//! metric <epoch> <split> <rmse> <mae> <loss> <kl> <nll> <mse>
//! tensor <name> <rank> <dims..>
//! <row-major values separated by spaces>
//! end
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load cycle reproduces every value bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::config::ModelConfig;
use crate::data::ColumnStats;
use crate::error::{Error, Result};
use crate::model::EtnModel;
use crate::tensor::Tensor;
use crate::training::EpochMetrics;

pub const MAGIC: &str = "etnode-checkpoint";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Input column names, exogenous first and the target last.
    pub columns: Vec<String>,
    pub stats: Vec<ColumnStats>,
    pub model: EtnModel,
    /// Epoch at which `model` was captured.
    pub epoch: usize,
    pub history: Vec<EpochMetrics>,
}

impl Checkpoint {
    pub fn new(
        config: ModelConfig,
        columns: Vec<String>,
        stats: Vec<ColumnStats>,
        model: EtnModel,
        epoch: usize,
        history: Vec<EpochMetrics>,
    ) -> Result<Self> {
        if columns.len() != stats.len() || columns.len() != model.vars() {
            return Err(Error::contract(format!(
                "{} columns, {} normalization stats and a model over {} variables",
                columns.len(),
                stats.len(),
                model.vars()
            )));
        }
        model.check_consistency(&config)?;
        Ok(Self {
            config,
            columns,
            stats,
            model,
            epoch,
            history,
        })
    }

    pub fn target_name(&self) -> &str {
        self.columns.last().unwrap()
    }

    pub fn exogenous_names(&self) -> &[String] {
        &self.columns[..self.columns.len() - 1]
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        for (k, v) in self.config.to_pairs() {
            let _ = writeln!(out, "config {k} {v}");
        }
        for (name, s) in self.columns.iter().zip(&self.stats) {
            let _ = writeln!(out, "column {} {} {name}", s.mean, s.std);
        }
        let _ = writeln!(out, "epoch {}", self.epoch);
        for m in &self.history {
            let _ = writeln!(out, "metric {}", m.record().join(" "));
        }
        for (name, t) in self.model.named_tensors() {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "tensor {name} {} {}", t.rank(), dims.join(" "));
            let values: Vec<String> = t.data().iter().map(f64::to_string).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let err = |line: usize, msg: String| Error::Checkpoint { line, msg };

        let (n, header) = lines.next().ok_or_else(|| err(1, "empty file".into()))?;
        if header != format!("{MAGIC} {FORMAT_VERSION}") {
            return Err(err(n, format!("expected `{MAGIC} {FORMAT_VERSION}` header")));
        }

        let mut config = ModelConfig::default();
        let mut columns = Vec::new();
        let mut stats = Vec::new();
        let mut epoch = None;
        let mut history = Vec::new();
        let mut tensors: Vec<(String, Tensor)> = Vec::new();
        let mut ended = false;

        while let Some((n, line)) = lines.next() {
            let (kind, rest) = line.split_once(' ').unwrap_or((line, ""));
            match kind {
                "config" => {
                    let (k, v) = rest
                        .split_once(' ')
                        .ok_or_else(|| err(n, "config line needs a key and a value".into()))?;
                    config.set(k, v).map_err(|e| err(n, e.to_string()))?;
                }
                "column" => {
                    let mut parts = rest.splitn(3, ' ');
                    let mean = parse_f64(parts.next(), n)?;
                    let std = parse_f64(parts.next(), n)?;
                    let name = parts
                        .next()
                        .ok_or_else(|| err(n, "column line needs a name".into()))?;
                    columns.push(name.to_string());
                    stats.push(ColumnStats { mean, std });
                }
                "epoch" => {
                    epoch = Some(rest.parse().map_err(|_| err(n, format!("bad epoch `{rest}`")))?);
                }
                "metric" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    if f.len() != 8 {
                        return Err(err(n, format!("metric line has {} fields, expected 8", f.len())));
                    }
                    history.push(EpochMetrics {
                        epoch: f[0].parse().map_err(|_| err(n, format!("bad epoch `{}`", f[0])))?,
                        split: f[1].parse().map_err(|e: Error| err(n, e.to_string()))?,
                        rmse: parse_f64(Some(f[2]), n)?,
                        mae: parse_f64(Some(f[3]), n)?,
                        loss: parse_f64(Some(f[4]), n)?,
                        kl: parse_f64(Some(f[5]), n)?,
                        nll: parse_f64(Some(f[6]), n)?,
                        mse: parse_f64(Some(f[7]), n)?,
                    });
                }
                "tensor" => {
                    let f: Vec<&str> = rest.split(' ').collect();
                    let bad = || err(n, format!("bad tensor header `{line}`"));
                    let name = f.first().filter(|s| !s.is_empty()).ok_or_else(bad)?;
                    let rank: usize = f.get(1).and_then(|r| r.parse().ok()).ok_or_else(bad)?;
                    if f.len() != 2 + rank {
                        return Err(bad());
                    }
                    let shape: Vec<usize> = f[2..]
                        .iter()
                        .map(|d| d.parse().map_err(|_| bad()))
                        .collect::<Result<_>>()?;
                    let (vn, values) = lines
                        .next()
                        .ok_or_else(|| err(n + 1, format!("missing values for `{name}`")))?;
                    let data: Vec<f64> = values
                        .split(' ')
                        .filter(|s| !s.is_empty())
                        .map(|s| parse_f64(Some(s), vn))
                        .collect::<Result<_>>()?;
                    let t = Tensor::new(shape, data).map_err(|e| err(vn, e.to_string()))?;
                    tensors.push((name.to_string(), t));
                }
                "end" => {
                    ended = true;
                    break;
                }
                "" => {}
                other => return Err(err(n, format!("unknown record `{other}`"))),
            }
        }
        if !ended {
            return Err(err(text.lines().count(), "missing `end` record".into()));
        }
        if let Some((n, l)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(err(n, format!("content after `end`: `{l}`")));
        }
        config.validate().map_err(|e| err(0, e.to_string()))?;
        let epoch = epoch.ok_or_else(|| err(0, "missing epoch record".into()))?;
        let model = EtnModel::from_named(&config, tensors).map_err(|e| err(0, e.to_string()))?;
        Self::new(config, columns, stats, model, epoch, history).map_err(|e| err(0, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }
}

fn parse_f64(s: Option<&str>, line: usize) -> Result<f64> {
    let s = s.ok_or_else(|| Error::Checkpoint {
        line,
        msg: "missing number".into(),
    })?;
    let v: f64 = s.parse().map_err(|_| Error::Checkpoint {
        line,
        msg: format!("bad number `{s}`"),
    })?;
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::training::Split;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(variant: Variant) -> Checkpoint {
        let cfg = ModelConfig {
            window: 5,
            horizon: 2,
            hidden: 3,
            latent: 4,
            variant,
            reset_gate: variant != Variant::NoAtt,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut model = EtnModel::init(&cfg, 3, &mut rng);
        for t in model.tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random::<f64>() * 1e-7 - 3.3e5 * rng.random::<f64>();
            }
        }
        let history = vec![
            EpochMetrics {
                epoch: 1,
                split: Split::Train,
                rmse: 0.1 + 0.2,
                mae: 1e-300,
                loss: -0.0,
                kl: 2.5,
                nll: 1.0 / 3.0,
                mse: 7.0,
            },
            EpochMetrics {
                epoch: 1,
                split: Split::Validation,
                rmse: f64::MIN_POSITIVE,
                mae: 3.0,
                loss: 4.0,
                kl: 0.0,
                nll: 1e22,
                mse: 0.3,
            },
        ];
        let stats = vec![
            ColumnStats { mean: 0.1, std: 2.0 / 3.0 },
            ColumnStats { mean: -5.0, std: 1.0 },
            ColumnStats { mean: 1e-9, std: 3.5 },
        ];
        Checkpoint::new(
            cfg,
            vec!["temp in".into(), "x,2".into(), "y".into()],
            stats,
            model,
            1,
            history,
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        for v in [Variant::Full, Variant::NoAtt, Variant::NoOde] {
            let c = sample(v);
            let text = c.to_text();
            let back = Checkpoint::parse(&text).unwrap();
            assert_eq!(back, c);
            for ((_, a), (_, b)) in back.model.named_tensors().iter().zip(c.model.named_tensors()) {
                let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
                assert_eq!(bits(a), bits(b));
            }
            assert_eq!(back.to_text(), text);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("model.ckpt");
        let c = sample(Variant::Full);
        c.save(&p).unwrap();
        assert_eq!(Checkpoint::load(&p).unwrap(), c);
        assert!(matches!(
            Checkpoint::load(&dir.path().join("missing")),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn corruption_is_reported_with_line() {
        let text = sample(Variant::Full).to_text();
        assert!(matches!(
            Checkpoint::parse(&text.replacen("etnode-checkpoint 1", "etnode-checkpoint 9", 1)),
            Err(Error::Checkpoint { line: 1, .. })
        ));
        let truncated: String = text.lines().take(10).collect::<Vec<_>>().join("\n");
        assert!(Checkpoint::parse(&truncated).is_err());
        let bad = text.replacen("config hidden 3", "config hidden 4", 1);
        assert!(Checkpoint::parse(&bad).is_err());
        let bad = text.replacen("config window", "config windw", 1);
        assert!(matches!(Checkpoint::parse(&bad), Err(Error::Checkpoint { line: 2, .. })));
    }
}
