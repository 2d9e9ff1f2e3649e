//! Tensorized GRU encoder.
//!
//! The hidden state is a matrix with one `d`-dimensional row per input
//! variable. Every gate acts slice-wise: variable `n`'s row is updated only
//! from its own previous row and its own scalar input, so the layer behaves
//! like `N+1` independent GRUs running side by side.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Gate tensors for all variables: `w_*: [P, d, d]`, `v_*: [P, d, 1]`, `b_*: [P, d]`
/// where `P = N + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct TgruParams {
    pub w_r: Tensor,
    pub w_z: Tensor,
    pub w_h: Tensor,
    pub v_r: Tensor,
    pub v_z: Tensor,
    pub v_h: Tensor,
    pub b_r: Tensor,
    pub b_z: Tensor,
    pub b_h: Tensor,
}

pub const TGRU_NAMES: [&str; 9] = ["w_r", "w_z", "w_h", "v_r", "v_z", "v_h", "b_r", "b_z", "b_h"];

impl TgruParams {
    pub fn zeros(vars: usize, hidden: usize) -> Self {
        let w = Tensor::zeros(&[vars, hidden, hidden]);
        let v = Tensor::zeros(&[vars, hidden, 1]);
        let b = Tensor::zeros(&[vars, hidden]);
        Self {
            w_r: w.clone(),
            w_z: w.clone(),
            w_h: w,
            v_r: v.clone(),
            v_z: v.clone(),
            v_h: v,
            b_r: b.clone(),
            b_z: b.clone(),
            b_h: b,
        }
    }

    /// Weights uniform in `[-1/sqrt(d), 1/sqrt(d)]`, biases zero.
    pub fn init<R: Rng>(vars: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(vars, hidden);
        let bound = 1.0 / (hidden as f64).sqrt();
        for t in [&mut p.w_r, &mut p.w_z, &mut p.w_h, &mut p.v_r, &mut p.v_z, &mut p.v_h] {
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
        p
    }

    pub fn vars(&self) -> usize {
        self.w_r.shape()[0]
    }

    pub fn hidden(&self) -> usize {
        self.w_r.shape()[1]
    }

    pub fn tensors(&self) -> [&Tensor; 9] {
        [
            &self.w_r, &self.w_z, &self.w_h, &self.v_r, &self.v_z, &self.v_h, &self.b_r,
            &self.b_z, &self.b_h,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 9] {
        [
            &mut self.w_r,
            &mut self.w_z,
            &mut self.w_h,
            &mut self.v_r,
            &mut self.v_z,
            &mut self.v_h,
            &mut self.b_r,
            &mut self.b_z,
            &mut self.b_h,
        ]
    }

    /// Rebuilds from tensors in [`TGRU_NAMES`] order, checking shapes.
    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let [w_r, w_z, w_h, v_r, v_z, v_h, b_r, b_z, b_h]: [Tensor; 9] = ts
            .try_into()
            .map_err(|_| Error::contract("tgru needs exactly nine tensors"))?;
        let p = Self {
            w_r,
            w_z,
            w_h,
            v_r,
            v_z,
            v_h,
            b_r,
            b_z,
            b_h,
        };
        let (n, d) = (p.vars(), p.hidden());
        for (t, want) in p.tensors().iter().zip([
            [n, d, d].as_slice(),
            &[n, d, d],
            &[n, d, d],
            &[n, d, 1],
            &[n, d, 1],
            &[n, d, 1],
            &[n, d],
            &[n, d],
            &[n, d],
        ]) {
            if t.shape() != want {
                return Err(Error::shape("tgru params", t.shape(), want));
            }
        }
        Ok(p)
    }

    /// Binds every tensor as a trainable leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> TgruVars {
        let v: Vec<Var> = self.tensors().iter().map(|t| tape.param((*t).clone())).collect();
        TgruVars::from_slice(&v)
    }
}

/// [`TgruParams`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct TgruVars {
    pub w_r: Var,
    pub w_z: Var,
    pub w_h: Var,
    pub v_r: Var,
    pub v_z: Var,
    pub v_h: Var,
    pub b_r: Var,
    pub b_z: Var,
    pub b_h: Var,
}

impl TgruVars {
    /// From nine vars in [`TGRU_NAMES`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        assert_eq!(v.len(), 9);
        Self {
            w_r: v[0],
            w_z: v[1],
            w_h: v[2],
            v_r: v[3],
            v_z: v[4],
            v_h: v[5],
            b_r: v[6],
            b_z: v[7],
            b_h: v[8],
        }
    }

    pub fn all(&self) -> [Var; 9] {
        [
            self.w_r, self.w_z, self.w_h, self.v_r, self.v_z, self.v_h, self.b_r, self.b_z,
            self.b_h,
        ]
    }

    /// `W ⊛ h + V ⊛ x + b` for one gate. `x` is a `[P, 1]` column.
    fn gate_input(&self, tape: &mut Tape, w: Var, h: Var, v: Var, x: Var, b: Var) -> Result<Var> {
        let (p, d) = (tape.shape(b)[0], tape.shape(b)[1]);
        let wh = tape.batch_matvec(w, h)?;
        let v2 = tape.reshape(v, &[p, d])?;
        let vx = tape.mul(v2, x)?;
        let s = tape.add(wh, vx)?;
        tape.add(s, b)
    }

    /// One cell update. `h_prev: [P, d]`, `x: [P, 1]`.
    pub fn step(&self, tape: &mut Tape, h_prev: Var, x: Var) -> Result<Var> {
        let r_in = self.gate_input(tape, self.w_r, h_prev, self.v_r, x, self.b_r)?;
        let reset = tape.sigmoid(r_in)?;
        let u_in = self.gate_input(tape, self.w_z, h_prev, self.v_z, x, self.b_z)?;
        let update = tape.sigmoid(u_in)?;
        let gated = tape.mul(reset, h_prev)?;
        let c_in = self.gate_input(tape, self.w_h, gated, self.v_h, x, self.b_h)?;
        let candidate = tape.tanh(c_in)?;
        // (1 - U) ⊙ H_prev + U ⊙ H̃, written as H_prev + U ⊙ (H̃ - H_prev)
        let delta = tape.sub(candidate, h_prev)?;
        let step = tape.mul(update, delta)?;
        tape.add(h_prev, step)
    }

    /// Runs the cell over every row of `window: [T, P]` from `h0` and
    /// returns `[H_1 .. H_T]`.
    pub fn unroll(&self, tape: &mut Tape, window: &Tensor, h0: Var) -> Result<Vec<Var>> {
        let p = tape.shape(self.b_r)[0];
        if window.rank() != 2 || window.shape()[1] != p {
            return Err(Error::shape("tgru window", window.shape(), &[0, p]));
        }
        let steps = window.shape()[0];
        if steps == 0 {
            return Err(Error::contract("tgru_unroll needs a non-empty window"));
        }
        let mut h = h0;
        let mut states = Vec::with_capacity(steps);
        for row in window.data().chunks(p) {
            let x = tape.constant(Tensor::column(row));
            h = self.step(tape, h, x)?;
            states.push(h);
        }
        Ok(states)
    }
}

/// Evaluates one cell update outside any training graph.
pub fn tgru_step(params: &TgruParams, h_prev: &Tensor, x: &[f64]) -> Result<Tensor> {
    if x.len() != params.vars() {
        return Err(Error::shape("tgru input", &[x.len()], &[params.vars()]));
    }
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let h = tape.constant(h_prev.clone());
    let x = tape.constant(Tensor::column(x));
    let out = vars.step(&mut tape, h, x)?;
    Ok(tape.value(out).clone())
}

/// Evaluates the full recurrence from a zero initial state.
pub fn tgru_unroll(params: &TgruParams, window: &Tensor) -> Result<Vec<Tensor>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let h0 = tape.constant(Tensor::zeros(&[params.vars(), params.hidden()]));
    let states = vars.unroll(&mut tape, window, h0)?;
    Ok(states.iter().map(|v| tape.value(*v).clone()).collect())
}
