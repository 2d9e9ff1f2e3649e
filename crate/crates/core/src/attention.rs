//! Tandem attention over tensorized GRU states.
//!
//! Temporal weights `alpha: [T, P]` are a per-variable softmax over time of an
//! affine score of that variable's hidden row. Variable weights `beta: [P, 1]`
//! are a softmax over variables of a shared affine score of the
//! alpha-weighted pooled rows. The context vector is
//! `C[n] = beta[n] * sum_t alpha[t][n] * sum_i H_t[n][i]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Scorer parameters: per-variable temporal maps `f_n(h) = w_n·h + c_n` and one
/// shared variable map `f(p) = v·p + c`.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    /// `[P, d]`, row `n` is `w_n`.
    pub temporal_w: Tensor,
    /// `[1, P]`.
    pub temporal_b: Tensor,
    /// `[d, 1]`.
    pub variable_w: Tensor,
    /// `[1, 1]`.
    pub variable_b: Tensor,
}

pub const ATTENTION_NAMES: [&str; 4] = ["temporal_w", "temporal_b", "variable_w", "variable_b"];

impl AttentionParams {
    pub fn zeros(vars: usize, hidden: usize) -> Self {
        Self {
            temporal_w: Tensor::zeros(&[vars, hidden]),
            temporal_b: Tensor::zeros(&[1, vars]),
            variable_w: Tensor::zeros(&[hidden, 1]),
            variable_b: Tensor::zeros(&[1, 1]),
        }
    }

    pub fn init<R: Rng>(vars: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vars, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        for t in [&mut p.temporal_w, &mut p.variable_w] {
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.temporal_w, &self.temporal_b, &self.variable_w, &self.variable_b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [
            &mut self.temporal_w,
            &mut self.temporal_b,
            &mut self.variable_w,
            &mut self.variable_b,
        ]
    }

    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let [temporal_w, temporal_b, variable_w, variable_b]: [Tensor; 4] = ts
            .try_into()
            .map_err(|_| Error::contract("attention needs exactly four tensors"))?;
        if temporal_w.rank() != 2 {
            return Err(Error::shape("attention temporal_w", temporal_w.shape(), &[0, 0]));
        }
        let (p, d) = (temporal_w.shape()[0], temporal_w.shape()[1]);
        for (t, want) in [
            (&temporal_b, [1, p]),
            (&variable_w, [d, 1]),
            (&variable_b, [1, 1]),
        ] {
            if t.shape() != want {
                return Err(Error::shape("attention params", t.shape(), &want));
            }
        }
        Ok(Self {
            temporal_w,
            temporal_b,
            variable_w,
            variable_b,
        })
    }

    pub fn bind(&self, tape: &mut Tape) -> AttentionVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| tape.param((*t).clone())).collect();
        AttentionVars::from_slice(&v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    pub temporal_w: Var,
    pub temporal_b: Var,
    pub variable_w: Var,
    pub variable_b: Var,
}

/// Tape handles produced by [`AttentionVars::forward`].
#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    /// `[T, P]`, each column sums to one.
    pub alpha: Var,
    /// `[P, 1]`, sums to one.
    pub beta: Var,
    /// `[P, 1]`.
    pub context: Var,
}

impl AttentionVars {
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 4);
        Self {
            temporal_w: v[0],
            temporal_b: v[1],
            variable_w: v[2],
            variable_b: v[3],
        }
    }

    pub fn all(&self) -> [Var; 4] {
        [self.temporal_w, self.temporal_b, self.variable_w, self.variable_b]
    }

    /// Per-variable softmax over time of the temporal scores.
    pub fn temporal(&self, tape: &mut Tape, states: &[Var]) -> Result<Var> {
        let p = tape.shape(self.temporal_b)[1];
        let mut rows = Vec::with_capacity(states.len());
        for &h in states {
            let weighted = tape.mul(h, self.temporal_w)?;
            let score = tape.sum_axis(weighted, 1)?;
            rows.push(tape.reshape(score, &[1, p])?);
        }
        let scores = tape.concat(&rows, 0)?;
        let scores = tape.add(scores, self.temporal_b)?;
        tape.softmax(scores, 0)
    }

    /// Variable weights and the alpha-pooled states they are scored from.
    pub fn variable(&self, tape: &mut Tape, alpha: Var, states: &[Var]) -> Result<(Var, Var)> {
        let pooled = pool(tape, alpha, states)?;
        let scores = tape.matmul(pooled, self.variable_w)?;
        let scores = tape.add(scores, self.variable_b)?;
        Ok((tape.softmax(scores, 0)?, pooled))
    }

    pub fn forward(&self, tape: &mut Tape, states: &[Var]) -> Result<AttentionOutput> {
        if states.is_empty() {
            return Err(Error::contract("attention over an empty state sequence"));
        }
        let alpha = self.temporal(tape, states)?;
        let (beta, pooled) = self.variable(tape, alpha, states)?;
        let context = context_from_pooled(tape, beta, pooled)?;
        Ok(AttentionOutput {
            alpha,
            beta,
            context,
        })
    }
}

/// `P = sum_t alpha_t ⊙ H_t`, alpha row broadcast along the hidden units.
pub fn pool(tape: &mut Tape, alpha: Var, states: &[Var]) -> Result<Var> {
    let p = tape.shape(alpha)[1];
    let mut acc: Option<Var> = None;
    for (t, &h) in states.iter().enumerate() {
        let row = tape.slice(alpha, 0, t, 1)?;
        let col = tape.reshape(row, &[p, 1])?;
        let term = tape.mul(h, col)?;
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    acc.ok_or_else(|| Error::contract("pooling over an empty state sequence"))
}

/// `C[n] = beta[n] * sum_i pooled[n][i]`, shape `[P, 1]`.
pub fn context_from_pooled(tape: &mut Tape, beta: Var, pooled: Var) -> Result<Var> {
    let p = tape.shape(pooled)[0];
    let sums = tape.sum_axis(pooled, 1)?;
    let sums = tape.reshape(sums, &[p, 1])?;
    tape.mul(beta, sums)
}

/// Ablation context: mean of every hidden unit over time and hidden
/// dimension, one entry per variable, shape `[P, 1]`.
pub fn mean_pool_context(tape: &mut Tape, states: &[Var]) -> Result<Var> {
    let Some(&first) = states.first() else {
        return Err(Error::contract("pooling over an empty state sequence"));
    };
    let (p, d) = (tape.shape(first)[0], tape.shape(first)[1]);
    let mut acc = first;
    for &h in &states[1..] {
        acc = tape.add(acc, h)?;
    }
    let sums = tape.sum_axis(acc, 1)?;
    let mean = tape.scale(sums, 1.0 / (states.len() * d) as f64)?;
    tape.reshape(mean, &[p, 1])
}

/// Context vector from explicit weights and states, outside any training graph.
///
/// `alpha: [T, P]`, `beta: [P]`, `states`: T tensors of shape `[P, d]`.
pub fn context_vector(alpha: &Tensor, beta: &[f64], states: &[Tensor]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let a = tape.constant(alpha.clone());
    let b = tape.constant(Tensor::column(beta));
    let hs: Vec<Var> = states.iter().map(|h| tape.constant(h.clone())).collect();
    if tape.shape(a)[0] != hs.len() {
        return Err(Error::shape("context alpha", alpha.shape(), &[hs.len()]));
    }
    let pooled = pool(&mut tape, a, &hs)?;
    let c = context_from_pooled(&mut tape, b, pooled)?;
    Ok(tape.value(c).data().to_vec())
}

/// Attention weights averaged over a set of windows.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSummary {
    /// `[T][P]`.
    pub alpha: Vec<Vec<f64>>,
    /// `[P]`.
    pub beta: Vec<f64>,
}

impl AttentionSummary {
    /// Averages `(alpha [T, P], beta [P])` pairs.
    pub fn average<'a>(items: impl IntoIterator<Item = (&'a Tensor, &'a [f64])>) -> Result<Self> {
        let mut count = 0usize;
        let mut alpha: Vec<f64> = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut shape = Vec::new();
        for (a, b) in items {
            if count == 0 {
                shape = a.shape().to_vec();
                alpha = vec![0.0; a.numel()];
                beta = vec![0.0; b.len()];
            } else if a.shape() != shape.as_slice() || b.len() != beta.len() {
                return Err(Error::shape("attention average", a.shape(), &shape));
            }
            for (x, y) in alpha.iter_mut().zip(a.data()) {
                *x += y;
            }
            for (x, y) in beta.iter_mut().zip(b) {
                *x += y;
            }
            count += 1;
        }
        if count == 0 {
            return Err(Error::contract("no attention weights to average"));
        }
        let n = count as f64;
        let p = shape[1];
        Ok(Self {
            alpha: alpha.chunks(p).map(|r| r.iter().map(|v| v / n).collect()).collect(),
            beta: beta.iter().map(|v| v / n).collect(),
        })
    }
}

pub const VARIABLE_CSV: &str = "variable_attention.csv";
pub const TEMPORAL_CSV: &str = "temporal_attention.csv";

/// Writes `variable_attention.csv` (feature, weight) and
/// `temporal_attention.csv` (t, feature, weight) into `dir`. `t` counts from 1.
pub fn export_attention(summary: &AttentionSummary, names: &[String], dir: &Path) -> Result<()> {
    if names.len() != summary.beta.len() {
        return Err(Error::shape(
            "attention feature names",
            &[names.len()],
            &[summary.beta.len()],
        ));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;

    let path = dir.join(VARIABLE_CSV);
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["feature", "weight"])?;
    for (name, b) in names.iter().zip(&summary.beta) {
        write_record(&mut w, &path, [name.as_str(), &b.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = dir.join(TEMPORAL_CSV);
    let mut w = csv_writer(&path)?;
    write_record(&mut w, &path, ["t", "feature", "weight"])?;
    for (t, row) in summary.alpha.iter().enumerate() {
        for (name, a) in names.iter().zip(row) {
            write_record(&mut w, &path, [&(t + 1).to_string(), name.as_str(), &a.to_string()])?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Reads back the two CSVs written by [`export_attention`].
pub fn read_attention(dir: &Path) -> Result<(Vec<String>, AttentionSummary)> {
    let path = dir.join(VARIABLE_CSV);
    let mut names = Vec::new();
    let mut beta = Vec::new();
    for (row, rec) in csv_reader(&path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        names.push(rec[0].to_string());
        beta.push(parse_weight(&rec[1], row + 2, "weight")?);
    }
    let path = dir.join(TEMPORAL_CSV);
    let mut alpha: Vec<Vec<f64>> = Vec::new();
    for (row, rec) in csv_reader(&path)?.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(&path, e))?;
        let t: usize = rec[0].parse().map_err(|_| Error::Parse {
            row: row + 2,
            column: "t".into(),
            msg: format!("not an index: `{}`", &rec[0]),
        })?;
        if alpha.len() < t {
            alpha.resize(t, Vec::new());
        }
        alpha[t - 1].push(parse_weight(&rec[2], row + 2, "weight")?);
    }
    Ok((names, AttentionSummary { alpha, beta }))
}

fn parse_weight(s: &str, row: usize, column: &str) -> Result<f64> {
    s.parse().map_err(|_| Error::Parse {
        row,
        column: column.into(),
        msg: format!("not a number: `{s}`"),
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn csv_reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Reader::from_reader(file))
}

fn write_record<I, S>(w: &mut csv::Writer<fs::File>, path: &Path, rec: I) -> Result<()>
where
    I: IntoIterator<Item = S>,
    S: AsRef<[u8]>,
{
    w.write_record(rec).map_err(|e| csv_err(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> Error {
    let path: PathBuf = path.into();
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, format!("{other:?}")),
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn states_from(tape: &mut Tape, hs: &[Tensor]) -> Vec<Var> {
        hs.iter().map(|h| tape.constant(h.clone())).collect()
    }

    fn random_states(rng: &mut ChaCha8Rng, t: usize, p: usize, d: usize) -> Vec<Tensor> {
        (0..t)
            .map(|_| {
                let data = (0..p * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                Tensor::new(vec![p, d], data).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_scorer_gives_uniform_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let hs = random_states(&mut rng, 4, 3, 2);
        let mut tape = Tape::new();
        let vars = AttentionParams::zeros(3, 2).bind(&mut tape);
        let s = states_from(&mut tape, &hs);
        let alpha = vars.temporal(&mut tape, &s).unwrap();
        assert!(tape.value(alpha).data().iter().all(|&a| a == 0.25));
    }

    #[test]
    fn closed_form_two_step_softmax() {
        // d = 1, w = 1: scores are the hidden values themselves.
        let hs = vec![Tensor::column(&[0.0]), Tensor::column(&[3f64.ln()])];
        let mut params = AttentionParams::zeros(1, 1);
        params.temporal_w = Tensor::column(&[1.0]);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let s = states_from(&mut tape, &hs);
        let alpha = vars.temporal(&mut tape, &s).unwrap();
        let a = tape.value(alpha).data();
        assert!((a[0] - 0.25).abs() < 1e-15 && (a[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn temporal_bias_shift_is_invisible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let hs = random_states(&mut rng, 5, 2, 3);
        let mut params = AttentionParams::init(2, 3, &mut rng);
        let run = |params: &AttentionParams| {
            let mut tape = Tape::new();
            let vars = params.bind(&mut tape);
            let s = states_from(&mut tape, &hs);
            let a = vars.temporal(&mut tape, &s).unwrap();
            tape.value(a).clone()
        };
        let before = run(&params);
        params.temporal_b.data_mut()[1] += 5.0;
        let after = run(&params);
        for (x, y) in before.data().iter().zip(after.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_pooled_rows_give_uniform_beta() {
        let h = Tensor::matrix(&[&[0.2, -0.4], &[0.2, -0.4], &[0.2, -0.4]]);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut tape = Tape::new();
        let vars = AttentionParams::init(3, 2, &mut rng).bind(&mut tape);
        let s = states_from(&mut tape, &[h.clone(), h]);
        let out = vars.forward(&mut tape, &s).unwrap();
        for b in tape.value(out.beta).data() {
            assert!((b - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn closed_form_variable_softmax() {
        // d = 1, v = 1, alpha = 1 at T = 1: scores are the pooled values.
        let hs = vec![Tensor::column(&[0.0, 3f64.ln()])];
        let mut params = AttentionParams::zeros(2, 1);
        params.variable_w = Tensor::column(&[1.0]);
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape);
        let s = states_from(&mut tape, &hs);
        let out = vars.forward(&mut tape, &s).unwrap();
        let b = tape.value(out.beta).data();
        assert!((b[0] - 0.25).abs() < 1e-15 && (b[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn single_term_context() {
        let alpha = Tensor::row(&[1.0, 1.0]);
        let hs = [Tensor::column(&[2.0, 3.0])];
        let c = context_vector(&alpha, &[0.5, 0.5], &hs).unwrap();
        assert_eq!(c, vec![1.0, 1.5]);
    }

    #[test]
    fn one_hot_beta_masks_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let hs = random_states(&mut rng, 3, 4, 2);
        let alpha = Tensor::filled(&[3, 4], 1.0 / 3.0);
        let c = context_vector(&alpha, &[0.0, 0.0, 1.0, 0.0], &hs).unwrap();
        assert_eq!(c[0], 0.0);
        assert_eq!(c[1], 0.0);
        assert_ne!(c[2], 0.0);
        assert_eq!(c[3], 0.0);
    }

    #[test]
    fn mean_pool_matches_direct_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let hs = random_states(&mut rng, 3, 2, 4);
        let mut tape = Tape::new();
        let s = states_from(&mut tape, &hs);
        let c = mean_pool_context(&mut tape, &s).unwrap();
        for n in 0..2 {
            let direct: f64 = hs.iter().map(|h| h.data()[n * 4..n * 4 + 4].iter().sum::<f64>()).sum::<f64>() / 12.0;
            assert!((tape.value(c).data()[n] - direct).abs() < 1e-15);
        }
    }

    #[test]
    fn attention_stack_passes_grad_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let (t, p, d) = (4, 3, 2);
        let hs = random_states(&mut rng, t, p, d);
        let mut params: Vec<Tensor> = AttentionParams::init(p, d, &mut rng)
            .tensors()
            .iter()
            .map(|x| (*x).clone())
            .collect();
        for x in &mut params {
            for v in x.data_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
        params.extend(hs.iter().cloned());
        let err = grad_check(
            |tape, v| {
                let vars = AttentionVars::from_slice(&v[..4]);
                let out = vars.forward(tape, &v[4..])?;
                let sq = tape.square(out.context)?;
                let a = tape.sum(sq)?;
                let b = tape.sum(out.context)?;
                tape.add(a, b)
            },
            &params,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "{err}");
    }

    #[test]
    fn export_round_trip_and_uniform_rows() {
        let dir = tempfile::tempdir().unwrap();
        let summary = AttentionSummary {
            alpha: vec![vec![0.25, 0.25], vec![0.25, 0.25]],
            beta: vec![0.5, 0.5],
        };
        let names = vec!["a".to_string(), "b".to_string()];
        export_attention(&summary, &names, dir.path()).unwrap();
        let temporal = fs::read_to_string(dir.path().join(TEMPORAL_CSV)).unwrap();
        assert_eq!(temporal.lines().count(), 5);
        let (back_names, back) = read_attention(dir.path()).unwrap();
        assert_eq!(back_names, names);
        assert_eq!(back, summary);
    }

    #[test]
    fn export_to_unwritable_path_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, "x").unwrap();
        let summary = AttentionSummary {
            alpha: vec![vec![1.0]],
            beta: vec![1.0],
        };
        let err = export_attention(&summary, &["y".into()], &blocker.join("sub")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }
}
