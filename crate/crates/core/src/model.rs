//! Full model assembly and its ablation variants.
//!
//! | variant  | encoder | summary          | decoder                         |
//! |----------|---------|------------------|---------------------------------|
//! | `full`   | TGRU    | tandem attention | posterior → ODE → readout       |
//! | `no_att` | TGRU    | mean pooling     | posterior → ODE → readout       |
//! | `no_ode` | TGRU    | tandem attention | affine map context → K outputs  |

use rand::Rng;

use crate::attention::{mean_pool_context, AttentionOutput, AttentionParams, AttentionVars, ATTENTION_NAMES};
use crate::config::{ModelConfig, SolverConfig, Variant};
use crate::error::{Error, Result};
use crate::latent::{sample_on_tape, EncoderVars, PosteriorEncoder, ENCODER_NAMES};
use crate::odenet::{ode_solve, FieldParams, FieldVars, ReadoutParams, ReadoutVars, TimeGrid, READOUT_NAMES};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use crate::tgru::{TgruParams, TgruVars, TGRU_NAMES};

/// Output head of the `no_ode` ablation: `ŷ = W c + b`, `W: [K, P]`, `b: [K, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl DirectHead {
    pub fn init<R: Rng>(vars: usize, horizon: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (vars as f64).sqrt();
        let data = (0..horizon * vars)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self {
            weight: Tensor::from_parts([horizon, vars], data),
            bias: Tensor::zeros(&[horizon, 1]),
        }
    }
}

/// All trainable parameters. Which optional groups are present is fixed by
/// the [`Variant`].
#[derive(Clone, Debug, PartialEq)]
pub struct EtnModel {
    pub variant: Variant,
    pub tgru: TgruParams,
    pub attention: Option<AttentionParams>,
    pub encoder: Option<PosteriorEncoder>,
    pub field: Option<FieldParams>,
    pub readout: Option<ReadoutParams>,
    pub direct: Option<DirectHead>,
}

impl EtnModel {
    /// Randomly initialized parameters for `vars = N + 1` input series.
    pub fn init<R: Rng>(cfg: &ModelConfig, vars: usize, rng: &mut R) -> Self {
        let tgru = TgruParams::init(vars, cfg.hidden, rng);
        let attention = (cfg.variant != Variant::NoAtt)
            .then(|| AttentionParams::init(vars, cfg.hidden, rng));
        let (encoder, field, readout, direct) = if cfg.variant == Variant::NoOde {
            (None, None, None, Some(DirectHead::init(vars, cfg.horizon, rng)))
        } else {
            (
                Some(PosteriorEncoder::init(vars, cfg.latent, rng)),
                Some(FieldParams::init(cfg.latent, cfg.reset_gate, rng)),
                Some(ReadoutParams::init(cfg.latent, rng)),
                None,
            )
        };
        Self {
            variant: cfg.variant,
            tgru,
            attention,
            encoder,
            field,
            readout,
            direct,
        }
    }

    pub fn vars(&self) -> usize {
        self.tgru.vars()
    }

    /// `(group.name, tensor)` for every parameter, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        fn push<'a>(out: &mut Vec<(String, &'a Tensor)>, group: &str, names: &[&str], ts: Vec<&'a Tensor>) {
            for (n, t) in names.iter().zip(ts) {
                out.push((format!("{group}.{n}"), t));
            }
        }
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        push(&mut out, "tgru", &TGRU_NAMES, self.tgru.tensors().to_vec());
        if let Some(a) = &self.attention {
            push(&mut out, "attention", &ATTENTION_NAMES, a.tensors().to_vec());
        }
        if let Some(e) = &self.encoder {
            push(&mut out, "encoder", &ENCODER_NAMES, e.tensors().to_vec());
        }
        if let Some(f) = &self.field {
            push(&mut out, "field", f.names(), f.tensors());
        }
        if let Some(r) = &self.readout {
            push(&mut out, "readout", &READOUT_NAMES, r.tensors().to_vec());
        }
        if let Some(d) = &self.direct {
            push(&mut out, "direct", &["weight", "bias"], vec![&d.weight, &d.bias]);
        }
        out
    }

    /// Mutable tensors in [`EtnModel::named_tensors`] order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        out.extend(self.tgru.tensors_mut());
        if let Some(a) = &mut self.attention {
            out.extend(a.tensors_mut());
        }
        if let Some(e) = &mut self.encoder {
            out.extend(e.tensors_mut());
        }
        if let Some(f) = &mut self.field {
            out.extend(f.tensors_mut());
        }
        if let Some(r) = &mut self.readout {
            out.extend(r.tensors_mut());
        }
        if let Some(d) = &mut self.direct {
            out.extend([&mut d.weight, &mut d.bias]);
        }
        out
    }

    pub fn group_names(&self) -> Vec<&'static str> {
        let mut g = vec!["tgru"];
        if self.attention.is_some() {
            g.push("attention");
        }
        if self.encoder.is_some() {
            g.push("encoder");
        }
        if self.field.is_some() {
            g.push("field");
        }
        if self.readout.is_some() {
            g.push("readout");
        }
        if self.direct.is_some() {
            g.push("direct");
        }
        g
    }

    /// Rebuilds a model from named tensors, e.g. from a checkpoint.
    pub fn from_named(cfg: &ModelConfig, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take_group = |group: &str, names: &[&str]| -> Result<Option<Vec<Tensor>>> {
            let prefix = format!("{group}.");
            let present: Vec<usize> = named
                .iter()
                .enumerate()
                .filter(|(_, (n, _))| n.starts_with(&prefix))
                .map(|(i, _)| i)
                .collect();
            if present.is_empty() {
                return Ok(None);
            }
            let mut out = Vec::with_capacity(names.len());
            for n in names {
                let full = format!("{prefix}{n}");
                let idx = named
                    .iter()
                    .position(|(k, _)| *k == full)
                    .ok_or_else(|| Error::contract(format!("missing parameter `{full}`")))?;
                out.push(named.remove(idx).1);
            }
            Ok(Some(out))
        };

        let tgru = take_group("tgru", &TGRU_NAMES)?
            .ok_or_else(|| Error::contract("missing tgru parameters"))?;
        let tgru = TgruParams::from_tensors(tgru)?;
        let attention = take_group("attention", &ATTENTION_NAMES)?
            .map(AttentionParams::from_tensors)
            .transpose()?;
        let encoder = take_group("encoder", &ENCODER_NAMES)?
            .map(PosteriorEncoder::from_tensors)
            .transpose()?;
        let field_names: &[&str] = if cfg.reset_gate {
            &["w_r", "b_r", "w_u", "b_u", "w_h", "b_h"]
        } else {
            &["w_u", "b_u", "w_h", "b_h"]
        };
        let field = take_group("field", field_names)?
            .map(FieldParams::from_tensors)
            .transpose()?;
        let readout = take_group("readout", &READOUT_NAMES)?
            .map(ReadoutParams::from_tensors)
            .transpose()?;
        let direct = take_group("direct", &["weight", "bias"])?.map(|mut v| {
            let bias = v.pop().unwrap();
            DirectHead {
                weight: v.pop().unwrap(),
                bias,
            }
        });
        if let Some((name, _)) = named.first() {
            return Err(Error::contract(format!("unexpected parameter `{name}`")));
        }

        let model = Self {
            variant: cfg.variant,
            tgru,
            attention,
            encoder,
            field,
            readout,
            direct,
        };
        model.check_consistency(cfg)?;
        Ok(model)
    }

    /// Verifies that parameter groups and shapes agree with `cfg`.
    pub fn check_consistency(&self, cfg: &ModelConfig) -> Result<()> {
        let expect = |cond: bool, what: &str| {
            if cond {
                Ok(())
            } else {
                Err(Error::contract(format!("parameters inconsistent with config: {what}")))
            }
        };
        let p = self.vars();
        expect(self.tgru.hidden() == cfg.hidden, "tgru hidden size")?;
        expect(self.variant == cfg.variant, "variant")?;
        expect(
            self.attention.is_some() == (cfg.variant != Variant::NoAtt),
            "attention presence",
        )?;
        if let Some(a) = &self.attention {
            expect(a.temporal_w.shape() == [p, cfg.hidden], "attention shape")?;
        }
        let ode = cfg.variant != Variant::NoOde;
        expect(self.encoder.is_some() == ode, "encoder presence")?;
        expect(self.field.is_some() == ode, "field presence")?;
        expect(self.readout.is_some() == ode, "readout presence")?;
        expect(self.direct.is_some() == !ode, "direct head presence")?;
        if let Some(e) = &self.encoder {
            expect(e.mu_w.shape() == [cfg.latent, p], "encoder shape")?;
        }
        if let Some(f) = &self.field {
            expect(f.latent() == cfg.latent, "field latent size")?;
            expect(f.reset.is_some() == cfg.reset_gate, "field reset gate")?;
        }
        if let Some(r) = &self.readout {
            expect(r.weight.shape() == [1, cfg.latent], "readout shape")?;
        }
        if let Some(d) = &self.direct {
            expect(d.weight.shape() == [cfg.horizon, p], "direct weight shape")?;
            expect(d.bias.shape() == [cfg.horizon, 1], "direct bias shape")?;
        }
        Ok(())
    }

    /// Binds every parameter on `tape`; `BoundModel::params` follows
    /// [`EtnModel::named_tensors`] order.
    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        let vars: Vec<Var> = self
            .named_tensors()
            .into_iter()
            .map(|(_, t)| tape.param(t.clone()))
            .collect();
        self.bind_vars(&vars)
    }

    /// Assembles a [`BoundModel`] from vars already on a tape, one per tensor
    /// in [`EtnModel::named_tensors`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> BoundModel {
        assert_eq!(vars.len(), self.named_tensors().len(), "one var per parameter tensor");
        let mut rest = vars;
        let mut take = |n: usize| {
            let (head, tail) = rest.split_at(n);
            rest = tail;
            head
        };
        let tgru = TgruVars::from_slice(take(TGRU_NAMES.len()));
        let attention = self
            .attention
            .as_ref()
            .map(|_| AttentionVars::from_slice(take(ATTENTION_NAMES.len())));
        let encoder = self
            .encoder
            .as_ref()
            .map(|_| EncoderVars::from_slice(take(ENCODER_NAMES.len())));
        let field = self
            .field
            .as_ref()
            .map(|f| FieldVars::from_slice(take(f.names().len())));
        let readout = self.readout.as_ref().map(|_| {
            let v = take(READOUT_NAMES.len());
            ReadoutVars {
                weight: v[0],
                bias: v[1],
            }
        });
        let direct = self.direct.as_ref().map(|_| {
            let v = take(2);
            (v[0], v[1])
        });
        BoundModel {
            tgru,
            attention,
            encoder,
            field,
            readout,
            direct,
            params: vars.to_vec(),
        }
    }
}

/// How the initial latent state is chosen.
#[derive(Clone, Copy, Debug)]
pub enum LatentMode<'a> {
    /// Reparameterized draw with the given standard-normal noise.
    Sample(&'a [f64]),
    /// The posterior mean, used for evaluation and prediction.
    Mean,
}

/// Tape handles for one window's forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `[K, 1]` predictions in normalized target units, one per grid offset.
    pub yhat: Var,
    /// `(mu, sigma)` of the latent posterior, absent for `no_ode`.
    pub posterior: Option<(Var, Var)>,
    pub attention: Option<AttentionOutput>,
    pub context: Var,
}

/// An [`EtnModel`] recorded on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    pub tgru: TgruVars,
    pub attention: Option<AttentionVars>,
    pub encoder: Option<EncoderVars>,
    pub field: Option<FieldVars>,
    pub readout: Option<ReadoutVars>,
    pub direct: Option<(Var, Var)>,
    pub params: Vec<Var>,
}

impl BoundModel {
    /// Runs the model on one input window `[T, P]` and predicts at `grid`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        window: &Tensor,
        grid: &TimeGrid,
        solver: &SolverConfig,
        latent: LatentMode<'_>,
    ) -> Result<Forward> {
        let (p, d) = {
            let s = tape.shape(self.tgru.b_r);
            (s[0], s[1])
        };
        let h0 = tape.constant(Tensor::zeros(&[p, d]));
        let states = self.tgru.unroll(tape, window, h0)?;

        let (context, attention) = match &self.attention {
            Some(att) => {
                let out = att.forward(tape, &states)?;
                (out.context, Some(out))
            }
            None => (mean_pool_context(tape, &states)?, None),
        };

        if let Some((w, b)) = self.direct {
            let full = tape.affine(w, context, b)?;
            let horizon = tape.shape(full)[0];
            let yhat = select_integer_offsets(tape, full, horizon, grid)?;
            return Ok(Forward {
                yhat,
                posterior: None,
                attention,
                context,
            });
        }

        let (encoder, field, readout) = match (&self.encoder, &self.field, &self.readout) {
            (Some(e), Some(f), Some(r)) => (e, f, r),
            _ => return Err(Error::contract("model is missing its ODE decoder parameters")),
        };
        let (mu, sigma) = encoder.encode(tape, context)?;
        let z0 = match latent {
            LatentMode::Sample(noise) => {
                if noise.len() != tape.value(mu).numel() {
                    return Err(Error::shape("latent noise", &[noise.len()], tape.shape(mu)));
                }
                sample_on_tape(tape, mu, sigma, noise)?
            }
            LatentMode::Mean => mu,
        };
        let points = ode_solve(tape, field, z0, grid, solver)?;
        let yhat = readout.apply(tape, &points)?;
        Ok(Forward {
            yhat,
            posterior: Some((mu, sigma)),
            attention,
            context,
        })
    }
}

/// Picks rows `m - 1` of a `[K, 1]` direct-head output for integer offsets `m`.
fn select_integer_offsets(tape: &mut Tape, full: Var, horizon: usize, grid: &TimeGrid) -> Result<Var> {
    let offsets = grid.offsets();
    let is_training_grid = offsets.len() == horizon
        && offsets.iter().enumerate().all(|(i, &m)| m == (i + 1) as f64);
    if is_training_grid {
        return Ok(full);
    }
    let mut rows = Vec::with_capacity(offsets.len());
    for &m in offsets {
        if m.fract() != 0.0 || m < 1.0 || m > horizon as f64 {
            return Err(Error::contract(format!(
                "the no_ode variant only predicts integer offsets 1..={horizon}, got {m}"
            )));
        }
        rows.push(tape.slice(full, 0, m as usize - 1, 1)?);
    }
    tape.concat(&rows, 0)
}
