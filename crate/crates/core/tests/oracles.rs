//! Independent reference implementations checked against the library.

use etnode_core::attention::{context_vector, AttentionParams};
use etnode_core::latent::{encode_posterior, kl_divergence, Posterior, PosteriorEncoder};
use etnode_core::odenet::{ode_solve, solve_values, FieldParams, TimeGrid};
use etnode_core::tgru::{tgru_unroll, TgruParams};
use etnode_core::{SolverConfig, SolverMethod, Tape, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn fill_uniform(t: &mut Tensor, rng: &mut ChaCha8Rng, bound: f64) {
    for v in t.data_mut() {
        *v = rng.random_range(-bound..=bound);
    }
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng, bound: f64) -> Tensor {
    let mut t = Tensor::zeros(shape);
    fill_uniform(&mut t, rng, bound);
    t
}

/// A plain GRU over a scalar input with hidden size `d`, written with loops.
struct PlainGru {
    w: [Vec<Vec<f64>>; 3],
    v: [Vec<f64>; 3],
    b: [Vec<f64>; 3],
}

impl PlainGru {
    fn from_params(p: &TgruParams) -> Self {
        let d = p.hidden();
        let mat = |t: &Tensor| -> Vec<Vec<f64>> { t.data().chunks(d).map(<[f64]>::to_vec).collect() };
        Self {
            w: [mat(&p.w_r), mat(&p.w_z), mat(&p.w_h)],
            v: [p.v_r.data().to_vec(), p.v_z.data().to_vec(), p.v_h.data().to_vec()],
            b: [p.b_r.data().to_vec(), p.b_z.data().to_vec(), p.b_h.data().to_vec()],
        }
    }

    fn gate(&self, g: usize, h: &[f64], x: f64) -> Vec<f64> {
        (0..h.len())
            .map(|i| {
                let mut s = self.v[g][i] * x + self.b[g][i];
                for (j, hj) in h.iter().enumerate() {
                    s += self.w[g][i][j] * hj;
                }
                s
            })
            .collect()
    }

    fn step(&self, h: &[f64], x: f64) -> Vec<f64> {
        let r: Vec<f64> = self.gate(0, h, x).into_iter().map(sigmoid).collect();
        let u: Vec<f64> = self.gate(1, h, x).into_iter().map(sigmoid).collect();
        let rh: Vec<f64> = r.iter().zip(h).map(|(a, b)| a * b).collect();
        let c: Vec<f64> = self.gate(2, &rh, x).into_iter().map(f64::tanh).collect();
        (0..h.len()).map(|i| (1.0 - u[i]) * h[i] + u[i] * c[i]).collect()
    }
}

#[test]
fn single_variable_tgru_is_a_plain_gru() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for d in [1, 3, 5] {
        let mut p = TgruParams::zeros(1, d);
        for t in p.tensors_mut() {
            fill_uniform(t, &mut rng, 1.5);
        }
        let xs: Vec<f64> = (0..50).map(|_| rng.random_range(-2.0..2.0)).collect();
        let states = tgru_unroll(&p, &Tensor::new(vec![50, 1], xs.clone()).unwrap()).unwrap();
        let gru = PlainGru::from_params(&p);
        let mut h = vec![0.0; d];
        for (x, got) in xs.iter().zip(&states) {
            h = gru.step(&h, *x);
            for (a, b) in got.data().iter().zip(&h) {
                assert!((a - b).abs() < 1e-12, "d={d}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn tgru_variables_do_not_interact() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (p, d, t) = (4, 3, 12);
    let params = TgruParams::init(p, d, &mut rng);
    let window = random_tensor(&[t, p], &mut rng, 1.0);
    let base = tgru_unroll(&params, &window).unwrap();
    let mut poked = window.clone();
    for r in 0..t {
        poked.data_mut()[r * p + 2] += 0.7;
    }
    let after = tgru_unroll(&params, &poked).unwrap();
    for (a, b) in base.iter().zip(&after) {
        for n in 0..p {
            let same = a.data()[n * d..(n + 1) * d] == b.data()[n * d..(n + 1) * d];
            assert_eq!(same, n != 2, "row {n}");
        }
    }
}

/// Softmaxes, pooling and the context vector written as explicit loops.
fn attention_oracle(a: &AttentionParams, states: &[Tensor]) -> (Vec<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (t_len, p, d) = (states.len(), states[0].shape()[0], states[0].shape()[1]);
    let tw = a.temporal_w.data();
    let tb = a.temporal_b.data();
    let mut alpha = vec![vec![0.0; p]; t_len];
    for n in 0..p {
        let scores: Vec<f64> = (0..t_len)
            .map(|t| (0..d).map(|i| tw[n * d + i] * states[t].data()[n * d + i]).sum::<f64>() + tb[n])
            .collect();
        let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
        for t in 0..t_len {
            alpha[t][n] = (scores[t] - m).exp() / z;
        }
    }
    let mut pooled = vec![vec![0.0; d]; p];
    for t in 0..t_len {
        for n in 0..p {
            for i in 0..d {
                pooled[n][i] += alpha[t][n] * states[t].data()[n * d + i];
            }
        }
    }
    let vw = a.variable_w.data();
    let scores: Vec<f64> = pooled
        .iter()
        .map(|row| row.iter().zip(vw).map(|(x, w)| x * w).sum::<f64>() + a.variable_b.data()[0])
        .collect();
    let m = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
    let beta: Vec<f64> = scores.iter().map(|s| (s - m).exp() / z).collect();
    let mut context = vec![0.0; p];
    for n in 0..p {
        for t in 0..t_len {
            for i in 0..d {
                context[n] += beta[n] * alpha[t][n] * states[t].data()[n * d + i];
            }
        }
    }
    (alpha, beta, context)
}

fn run_attention(a: &AttentionParams, states: &[Tensor]) -> (Tensor, Vec<f64>, Vec<f64>) {
    let mut tape = Tape::new();
    let vars = a.bind(&mut tape);
    let hs: Vec<_> = states.iter().map(|h| tape.constant(h.clone())).collect();
    let out = vars.forward(&mut tape, &hs).unwrap();
    (
        tape.value(out.alpha).clone(),
        tape.value(out.beta).data().to_vec(),
        tape.value(out.context).data().to_vec(),
    )
}

#[test]
fn attention_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let t_len = rng.random_range(1..=8);
        let p = rng.random_range(1..=5);
        let d = rng.random_range(1..=4);
        let mut a = AttentionParams::zeros(p, d);
        for t in a.tensors_mut() {
            fill_uniform(t, &mut rng, 2.0);
        }
        let states: Vec<Tensor> = (0..t_len).map(|_| random_tensor(&[p, d], &mut rng, 1.0)).collect();
        let (alpha, beta, context) = run_attention(&a, &states);
        let (oa, ob, oc) = attention_oracle(&a, &states);
        for t in 0..t_len {
            for n in 0..p {
                assert!((alpha.at2(t, n) - oa[t][n]).abs() < 1e-12);
            }
        }
        for n in 0..p {
            assert!((beta[n] - ob[n]).abs() < 1e-12);
            assert!((context[n] - oc[n]).abs() < 1e-12);
            let col: f64 = (0..t_len).map(|t| alpha.at2(t, n)).sum();
            assert!((col - 1.0).abs() < 1e-9);
        }
        assert!((beta.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        let direct = context_vector(&alpha, &beta, &states).unwrap();
        for (x, y) in direct.iter().zip(&oc) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn gru_fields_stay_in_the_unit_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let grid = TimeGrid::new((1..=20).map(|i| i as f64 * 0.5).collect()).unwrap();
    let cfg = SolverConfig::fixed(SolverMethod::Rk4, 0.1);
    for k in 0..1000 {
        let q = rng.random_range(1..=6);
        let mut field = FieldParams::zeros(q, k % 2 == 0);
        for t in field.tensors_mut() {
            fill_uniform(t, &mut rng, 3.0);
        }
        let z0: Vec<f64> = (0..q).map(|_| rng.random_range(-1.0..=1.0)).collect();
        let mut tape = Tape::new();
        let vars = field.bind(&mut tape);
        let z = tape.constant(Tensor::column(&z0));
        let zs = ode_solve(&mut tape, &vars, z, &grid, &cfg).unwrap();
        for z in zs {
            for v in tape.value(z).data() {
                assert!(v.abs() <= 1.0 + 1e-9, "field {k}: {v}");
            }
        }
    }
}

#[test]
fn kl_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..20 {
        let q = rng.random_range(1..=4);
        let post = Posterior {
            mu: (0..q).map(|_| rng.random_range(-1.5..1.5)).collect(),
            sigma: (0..q).map(|_| rng.random_range(0.3..2.0)).collect(),
        };
        let exact = kl_divergence(&post).unwrap();
        // log q(z) - log p(z) for z ~ q, Welford accumulation
        let n = 1_000_000;
        let (mut mean, mut m2) = (0.0, 0.0);
        for i in 0..n {
            let mut log_ratio = 0.0;
            for (m, s) in post.mu.iter().zip(&post.sigma) {
                let e: f64 = StandardNormal.sample(&mut rng);
                let z = m + s * e;
                log_ratio += -s.ln() - 0.5 * e * e + 0.5 * z * z;
            }
            let delta = log_ratio - mean;
            mean += delta / (i + 1) as f64;
            m2 += delta * (log_ratio - mean);
        }
        let se = (m2 / (n - 1) as f64 / n as f64).sqrt();
        assert!((mean - exact).abs() <= 3.0 * se, "mc {mean} exact {exact} se {se}");
    }
    let unit = Posterior {
        mu: vec![0.0; 3],
        sigma: vec![1.0; 3],
    };
    assert_eq!(kl_divergence(&unit).unwrap(), 0.0);
}

#[test]
fn decay_solutions() {
    let decay = |tape: &mut Tape, z| tape.scale(z, -1.0);
    let grid = TimeGrid::new(vec![1.0]).unwrap();
    let solve = |m, h| solve_values(&decay, &[1.0], &grid, &SolverConfig::fixed(m, h)).unwrap()[0][0];
    assert!((solve(SolverMethod::Euler, 0.1) - 0.34867844).abs() < 1e-8);
    let exact = (-1f64).exp();
    assert!((solve(SolverMethod::Rk4, 0.1) - exact).abs() < 1e-6);
    let ratio = (solve(SolverMethod::Rk4, 0.1) - exact).abs() / (solve(SolverMethod::Rk4, 0.05) - exact).abs();
    assert!((14.0..=18.0).contains(&ratio), "{ratio}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn posterior_sigma_is_floored(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut enc = PosteriorEncoder::zeros(3, 4);
        for t in enc.tensors_mut() {
            fill_uniform(t, &mut rng, scale);
        }
        let ctx: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let post = encode_posterior(&enc, &ctx).unwrap();
        prop_assert!(post.sigma.iter().all(|s| *s >= 1e-3));
        prop_assert!(kl_divergence(&post).unwrap() >= 0.0);
    }

    #[test]
    fn grid_splitting_is_consistent(a in 0.2f64..2.0, b in 0.2f64..2.0) {
        // one solve to [a, a+b] must agree with the endpoint of a solve to a+b
        let decay = |tape: &mut Tape, z| tape.scale(z, -0.7);
        let cfg = SolverConfig::fixed(SolverMethod::Rk4, 0.05);
        let two = solve_values(&decay, &[1.0], &TimeGrid::new(vec![a, a + b]).unwrap(), &cfg).unwrap();
        let one = solve_values(&decay, &[1.0], &TimeGrid::new(vec![a + b]).unwrap(), &cfg).unwrap();
        prop_assert!((two[1][0] - one[0][0]).abs() < 1e-6);
        prop_assert!((two[1][0] - (-0.7 * (a + b)).exp()).abs() < 1e-6);
    }
}
