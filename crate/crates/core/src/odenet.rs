//! Continuous-time decoder.
//!
//! The latent state evolves under an autonomous GRU-shaped vector field
//!
//! ```text
//! r = σ(W_r z + b_r)         (optional reset gate)
//! u = σ(W_u z + b_u)
//! h = tanh(W_h (r ⊙ z) + b_h)
//! dz/dt = u ⊙ (h − z)
//! ```
//!
//! and is integrated from offset 0 through every requested offset. Each solver
//! stage is an ordinary tape op, so gradients reach the initial state and the
//! field parameters by differentiating the discrete solver itself.

use log::debug;
use rand::Rng;

use crate::config::{SolverConfig, SolverMethod};
use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Strictly increasing positive offsets past the end of the input window,
/// in units of the input sampling interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeGrid(Vec<f64>);

impl TimeGrid {
    pub fn new(offsets: Vec<f64>) -> Result<Self> {
        if offsets.is_empty() {
            return Err(Error::contract("time grid needs at least one offset"));
        }
        if let Some(m) = offsets.iter().find(|m| !(m.is_finite() && **m > 0.0)) {
            return Err(Error::contract(format!("grid offsets must be positive and finite, got {m}")));
        }
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract(format!(
                "grid offsets must be strictly increasing, got {offsets:?}"
            )));
        }
        Ok(Self(offsets))
    }

    /// Integer offsets `1..=k`.
    pub fn integers(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| i as f64).collect())
    }

    pub fn offsets(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn largest_gap(&self) -> f64 {
        let mut prev = 0.0;
        let mut gap: f64 = 0.0;
        for &m in &self.0 {
            gap = gap.max(m - prev);
            prev = m;
        }
        gap
    }
}

/// A right-hand side `dz/dt = f(z)` recorded on a tape.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self(tape, z)
    }
}

/// GRU vector-field parameters, all square on the latent dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldParams {
    /// `(W_r, b_r)`, present when the reset gate is enabled.
    pub reset: Option<(Tensor, Tensor)>,
    pub w_u: Tensor,
    pub b_u: Tensor,
    pub w_h: Tensor,
    pub b_h: Tensor,
}

impl FieldParams {
    pub fn zeros(latent: usize, reset_gate: bool) -> Self {
        let w = Tensor::zeros(&[latent, latent]);
        let b = Tensor::zeros(&[latent, 1]);
        Self {
            reset: reset_gate.then(|| (w.clone(), b.clone())),
            w_u: w.clone(),
            b_u: b.clone(),
            w_h: w,
            b_h: b,
        }
    }

    /// Weights uniform in `[-1/sqrt(q), 1/sqrt(q)]`, biases zero.
    pub fn init<R: Rng>(latent: usize, reset_gate: bool, rng: &mut R) -> Self {
        let mut p = Self::zeros(latent, reset_gate);
        let bound = 1.0 / (latent as f64).sqrt();
        let mut fill = |t: &mut Tensor| {
            for v in t.data_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        };
        if let Some((w, _)) = p.reset.as_mut() {
            fill(w);
        }
        fill(&mut p.w_u);
        fill(&mut p.w_h);
        p
    }

    pub fn latent(&self) -> usize {
        self.w_u.shape()[0]
    }

    pub fn names(&self) -> &'static [&'static str] {
        if self.reset.is_some() {
            &["w_r", "b_r", "w_u", "b_u", "w_h", "b_h"]
        } else {
            &["w_u", "b_u", "w_h", "b_h"]
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::with_capacity(6);
        if let Some((w, b)) = &self.reset {
            out.extend([w, b]);
        }
        out.extend([&self.w_u, &self.b_u, &self.w_h, &self.b_h]);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(6);
        if let Some((w, b)) = &mut self.reset {
            out.push(w);
            out.push(b);
        }
        out.extend([&mut self.w_u, &mut self.b_u, &mut self.w_h, &mut self.b_h]);
        out
    }

    /// From tensors in [`FieldParams::names`] order: six with a reset gate, four without.
    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let mut it = ts.into_iter();
        let n = it.len();
        let reset = match n {
            6 => Some((it.next().unwrap(), it.next().unwrap())),
            4 => None,
            _ => return Err(Error::contract(format!("vector field needs 4 or 6 tensors, got {n}"))),
        };
        let p = Self {
            reset,
            w_u: it.next().unwrap(),
            b_u: it.next().unwrap(),
            w_h: it.next().unwrap(),
            b_h: it.next().unwrap(),
        };
        if p.w_u.rank() != 2 {
            return Err(Error::shape("field w_u", p.w_u.shape(), &[0, 0]));
        }
        let q = p.latent();
        for (i, t) in p.tensors().into_iter().enumerate() {
            let want = if i % 2 == 0 { [q, q] } else { [q, 1] };
            if t.shape() != want {
                return Err(Error::shape("field params", t.shape(), &want));
            }
        }
        Ok(p)
    }

    pub fn bind(&self, tape: &mut Tape) -> FieldVars {
        let v: Vec<Var> = self.tensors().into_iter().map(|t| tape.param(t.clone())).collect();
        FieldVars::from_slice(&v)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct FieldVars {
    pub reset: Option<(Var, Var)>,
    pub w_u: Var,
    pub b_u: Var,
    pub w_h: Var,
    pub b_h: Var,
}

impl FieldVars {
    /// From six (with reset gate) or four vars in [`FieldParams::names`] order.
    pub fn from_slice(v: &[Var]) -> Self {
        match v.len() {
            6 => Self {
                reset: Some((v[0], v[1])),
                w_u: v[2],
                b_u: v[3],
                w_h: v[4],
                b_h: v[5],
            },
            4 => Self {
                reset: None,
                w_u: v[0],
                b_u: v[1],
                w_h: v[2],
                b_h: v[3],
            },
            n => panic!("vector field binds 4 or 6 vars, got {n}"),
        }
    }

    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::with_capacity(6);
        if let Some((w, b)) = self.reset {
            out.extend([w, b]);
        }
        out.extend([self.w_u, self.b_u, self.w_h, self.b_h]);
        out
    }
}

impl VectorField for FieldVars {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let gated = match self.reset {
            Some((w_r, b_r)) => {
                let r = tape.affine(w_r, z, b_r)?;
                let r = tape.sigmoid(r)?;
                tape.mul(r, z)?
            }
            None => z,
        };
        let u = tape.affine(self.w_u, z, self.b_u)?;
        let u = tape.sigmoid(u)?;
        let h = tape.affine(self.w_h, gated, self.b_h)?;
        let h = tape.tanh(h)?;
        let diff = tape.sub(h, z)?;
        tape.mul(u, diff)
    }
}

/// Evaluates the field once outside any training graph.
pub fn vector_field(params: &FieldParams, z: &[f64]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let z = tape.constant(Tensor::column(z));
    let dz = vars.eval(&mut tape, z)?;
    Ok(tape.value(dz).data().to_vec())
}

// Dormand-Prince 5(4) tableau.
const DP_A: [&[f64]; 7] = [
    &[],
    &[1.0 / 5.0],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
    ],
    &[
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
/// Fifth-order weights minus the embedded fourth-order weights.
const DP_E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

const MIN_ADAPTIVE_STEP: f64 = 1e-4;
const INITIAL_ADAPTIVE_STEP: f64 = 0.1;

/// `z + h * Σ c_i k_i`, skipping zero coefficients.
fn lincomb(tape: &mut Tape, z: Var, h: f64, terms: &[(f64, Var)]) -> Result<Var> {
    let mut acc = z;
    for &(c, k) in terms {
        if c != 0.0 {
            let scaled = tape.scale(k, h * c)?;
            acc = tape.add(acc, scaled)?;
        }
    }
    Ok(acc)
}

fn check_state(tape: &Tape, z: Var, t: f64) -> Result<()> {
    if tape.value(z).is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("ode state at t = {t}")))
    }
}

/// Integrates `field` from `z0` at offset 0 and returns the state at every
/// grid offset, in grid order.
pub fn ode_solve<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: Var,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    cfg.validate()?;
    match cfg.method {
        SolverMethod::Euler | SolverMethod::Rk4 => solve_fixed(tape, field, z0, grid, cfg),
        SolverMethod::Rk45 => solve_adaptive(tape, field, z0, grid, cfg),
    }
}

fn solve_fixed<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: Var,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let h = cfg.step;
    let mut z = z0;
    let mut t = 0.0;
    let mut taken = 0usize;
    let mut out = Vec::with_capacity(grid.len());
    for &target in grid.offsets() {
        let gap = target - t;
        // Full steps of h, with the last one shortened to land on `target`.
        let n = ((gap / h) - 1e-9).ceil().max(1.0) as usize;
        taken += n;
        if taken > cfg.max_steps {
            return Err(Error::Solver(format!(
                "max_steps = {} exceeded before t = {target}",
                cfg.max_steps
            )));
        }
        for i in 0..n {
            let dt = if i + 1 == n { gap - (n - 1) as f64 * h } else { h };
            z = match cfg.method {
                SolverMethod::Euler => {
                    let k1 = field.eval(tape, z)?;
                    lincomb(tape, z, dt, &[(1.0, k1)])?
                }
                _ => rk4_step(tape, field, z, dt)?,
            };
        }
        t = target;
        check_state(tape, z, t)?;
        out.push(z);
    }
    Ok(out)
}

fn rk4_step<F: VectorField + ?Sized>(tape: &mut Tape, field: &F, z: Var, h: f64) -> Result<Var> {
    let k1 = field.eval(tape, z)?;
    let z2 = lincomb(tape, z, h, &[(0.5, k1)])?;
    let k2 = field.eval(tape, z2)?;
    let z3 = lincomb(tape, z, h, &[(0.5, k2)])?;
    let k3 = field.eval(tape, z3)?;
    let z4 = lincomb(tape, z, h, &[(1.0, k3)])?;
    let k4 = field.eval(tape, z4)?;
    lincomb(
        tape,
        z,
        h,
        &[(1.0 / 6.0, k1), (2.0 / 6.0, k2), (2.0 / 6.0, k3), (1.0 / 6.0, k4)],
    )
}

fn solve_adaptive<F: VectorField + ?Sized>(
    tape: &mut Tape,
    field: &F,
    z0: Var,
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Var>> {
    let max_h = grid.largest_gap().max(MIN_ADAPTIVE_STEP);
    let mut h = INITIAL_ADAPTIVE_STEP.clamp(MIN_ADAPTIVE_STEP, max_h);
    let mut z = z0;
    let mut t = 0.0;
    let mut attempts = 0usize;
    let mut k_first = field.eval(tape, z)?;
    let mut out = Vec::with_capacity(grid.len());

    for &target in grid.offsets() {
        while t < target {
            attempts += 1;
            if attempts > cfg.max_steps {
                return Err(Error::Solver(format!(
                    "max_steps = {} exceeded at t = {t}",
                    cfg.max_steps
                )));
            }
            let remaining = target - t;
            let lands = h >= remaining - 1e-12 * target.max(1.0);
            let dt = if lands { remaining } else { h };

            let mut ks: Vec<Var> = Vec::with_capacity(6);
            ks.push(k_first);
            for row in &DP_A[1..6] {
                let terms: Vec<(f64, Var)> = row.iter().copied().zip(ks.iter().copied()).collect();
                let zs = lincomb(tape, z, dt, &terms)?;
                ks.push(field.eval(tape, zs)?);
            }
            // fifth-order solution; its slope is the first stage of the next step
            let terms: Vec<(f64, Var)> = DP_A[6].iter().copied().zip(ks.iter().copied()).collect();
            let z_new = lincomb(tape, z, dt, &terms)?;
            let k_last = field.eval(tape, z_new)?;

            let zv = tape.value(z).data();
            let zn = tape.value(z_new).data();
            let kd: Vec<&[f64]> = ks
                .iter()
                .map(|k| tape.value(*k).data())
                .chain(std::iter::once(tape.value(k_last).data()))
                .collect();
            let mut err: f64 = 0.0;
            for j in 0..zv.len() {
                let e: f64 = dt * (0..6).map(|s| DP_E[s] * kd[s][j]).sum::<f64>()
                    + dt * DP_E[6] * kd[6][j];
                let scale = cfg.atol + cfg.rtol * zv[j].abs().max(zn[j].abs());
                err = err.max(e.abs() / scale);
            }
            if !err.is_finite() {
                return Err(Error::Numeric(format!("rk45 error estimate at t = {t}")));
            }

            let at_floor = dt <= MIN_ADAPTIVE_STEP && !lands;
            if err <= 1.0 || at_floor {
                if err > 1.0 {
                    debug!("rk45 accepting step at minimum size with error ratio {err}");
                }
                z = z_new;
                k_first = k_last;
                t = if lands { target } else { t + dt };
                check_state(tape, z, t)?;
            }
            let factor = if err == 0.0 {
                5.0
            } else {
                (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
            };
            // a short landing step says nothing about the natural step size
            if !(lands && err <= 1.0) {
                h = (dt * factor).clamp(MIN_ADAPTIVE_STEP, max_h);
            }
        }
        out.push(z);
    }
    Ok(out)
}

/// Solves outside any training graph; returns the state at each offset.
pub fn solve_values<F: VectorField + ?Sized>(
    field: &F,
    z0: &[f64],
    grid: &TimeGrid,
    cfg: &SolverConfig,
) -> Result<Vec<Vec<f64>>> {
    let mut tape = Tape::new();
    let z = tape.constant(Tensor::column(z0));
    let zs = ode_solve(&mut tape, field, z, grid, cfg)?;
    Ok(zs.iter().map(|v| tape.value(*v).data().to_vec()).collect())
}

/// The fully connected output layer `ŷ = w·z + b`, applied at every offset.
#[derive(Clone, Debug, PartialEq)]
pub struct ReadoutParams {
    /// `[1, q]`.
    pub weight: Tensor,
    /// `[1, 1]`.
    pub bias: Tensor,
}

pub const READOUT_NAMES: [&str; 2] = ["weight", "bias"];

impl ReadoutParams {
    pub fn zeros(latent: usize) -> Self {
        Self {
            weight: Tensor::zeros(&[1, latent]),
            bias: Tensor::zeros(&[1, 1]),
        }
    }

    pub fn init<R: Rng>(latent: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(latent);
        let bound = 1.0 / (latent as f64).sqrt();
        for v in p.weight.data_mut() {
            *v = rng.random_range(-bound..=bound);
        }
        p
    }

    pub fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }

    pub fn from_tensors(ts: Vec<Tensor>) -> Result<Self> {
        let [weight, bias]: [Tensor; 2] = ts
            .try_into()
            .map_err(|_| Error::contract("readout needs exactly two tensors"))?;
        if weight.rank() != 2 || weight.shape()[0] != 1 {
            return Err(Error::shape("readout weight", weight.shape(), &[1, 0]));
        }
        if bias.shape() != [1, 1] {
            return Err(Error::shape("readout bias", bias.shape(), &[1, 1]));
        }
        Ok(Self { weight, bias })
    }

    pub fn bind(&self, tape: &mut Tape) -> ReadoutVars {
        ReadoutVars {
            weight: tape.param(self.weight.clone()),
            bias: tape.param(self.bias.clone()),
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ReadoutVars {
    pub weight: Var,
    pub bias: Var,
}

impl ReadoutVars {
    /// Stacks `w·z_k + b` for each latent point into a `[K, 1]` column.
    pub fn apply(&self, tape: &mut Tape, points: &[Var]) -> Result<Var> {
        if points.is_empty() {
            return Err(Error::contract("readout needs at least one latent point"));
        }
        let mut ys = Vec::with_capacity(points.len());
        for &z in points {
            ys.push(tape.affine(self.weight, z, self.bias)?);
        }
        tape.concat(&ys, 0)
    }
}

/// Evaluates the readout on plain latent points.
pub fn readout(params: &ReadoutParams, points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let zs: Vec<Var> = points.iter().map(|z| tape.constant(Tensor::column(z))).collect();
    let y = vars.apply(&mut tape, &zs)?;
    Ok(tape.value(y).data().to_vec())
}
