//! Synthetic series with a known lagged causal structure.
//!
//! Exogenous series are independent sums of sinusoids with random periods and
//! phases plus white noise. The target is
//! `y_t = Σ_j coeff_j · x^{c_j}_{t - lag_j} + a · y_{t-1} + ε_t`.

use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::MultivariateSeries;
use crate::error::{Error, Result};

const COMPONENTS: usize = 4;
const PERIOD_RANGE: (f64, f64) = (8.0, 60.0);
const EXOGENOUS_NOISE: f64 = 0.05;
const BURN_IN: usize = 100;

/// One causal driver: exogenous series `feature` (1-based) at `lag` samples.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Driver {
    pub feature: usize,
    pub lag: usize,
    pub coeff: f64,
}

impl fmt::Display for Driver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "x{}:{}:{}", self.feature, self.lag, self.coeff)
    }
}

impl FromStr for Driver {
    type Err = Error;

    /// Parses `x<feature>:<lag>:<coeff>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::contract(format!("bad driver `{s}`, expected e.g. `x1:3:0.6`"));
        let parts: Vec<&str> = s.trim().split(':').collect();
        let [name, lag, coeff] = parts.as_slice() else {
            return Err(bad());
        };
        let feature: usize = name
            .strip_prefix('x')
            .and_then(|n| n.parse().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(bad)?;
        let lag = lag.parse().map_err(|_| bad())?;
        let coeff: f64 = coeff.parse().map_err(|_| bad())?;
        if !coeff.is_finite() {
            return Err(bad());
        }
        Ok(Self { feature, lag, coeff })
    }
}

/// Parses a comma-separated list of drivers.
pub fn parse_lag_spec(s: &str) -> Result<Vec<Driver>> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(str::parse)
        .collect()
}

pub fn format_lag_spec(drivers: &[Driver]) -> String {
    drivers
        .iter()
        .map(Driver::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub len: usize,
    pub exogenous: usize,
    pub drivers: Vec<Driver>,
    /// Standard deviation of the target innovation.
    pub noise: f64,
    /// Coefficient on `y_{t-1}`.
    pub autoregressive: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            len: 2000,
            exogenous: 5,
            drivers: vec![
                Driver {
                    feature: 1,
                    lag: 3,
                    coeff: 0.6,
                },
                Driver {
                    feature: 2,
                    lag: 6,
                    coeff: 0.3,
                },
            ],
            noise: 0.05,
            autoregressive: 0.3,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.len == 0 || self.exogenous == 0 {
            return Err(Error::contract("length and exogenous count must be positive"));
        }
        if self.drivers.len() > self.exogenous {
            return Err(Error::contract(format!(
                "{} drivers for {} exogenous series",
                self.drivers.len(),
                self.exogenous
            )));
        }
        for d in &self.drivers {
            if d.feature > self.exogenous {
                return Err(Error::contract(format!(
                    "driver x{} exceeds the {} exogenous series",
                    d.feature, self.exogenous
                )));
            }
            if d.lag >= self.len {
                return Err(Error::contract(format!(
                    "lag {} must be shorter than the series length {}",
                    d.lag, self.len
                )));
            }
        }
        if !(self.noise >= 0.0) || !self.autoregressive.is_finite() {
            return Err(Error::contract("noise must be nonnegative and the AR coefficient finite"));
        }
        Ok(())
    }
}

/// Column names `x1..xN, y`.
pub fn synthetic_names(exogenous: usize) -> Vec<String> {
    (1..=exogenous)
        .map(|j| format!("x{j}"))
        .chain(std::iter::once("y".to_string()))
        .collect()
}

pub fn gen_synthetic(seed: u64, spec: &SyntheticSpec) -> Result<MultivariateSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let burn = BURN_IN + spec.drivers.iter().map(|d| d.lag).max().unwrap_or(0);
    let total = spec.len + burn;
    let white = Normal::new(0.0, 1.0).expect("unit normal");

    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(spec.exogenous + 1);
    for _ in 0..spec.exogenous {
        let waves: Vec<(f64, f64, f64)> = (0..COMPONENTS)
            .map(|_| {
                let amp = rng.random_range(0.5..1.0);
                let period = rng.random_range(PERIOD_RANGE.0..PERIOD_RANGE.1);
                let phase = rng.random_range(0.0..TAU);
                (amp, period, phase)
            })
            .collect();
        let col = (0..total)
            .map(|t| {
                let smooth: f64 = waves
                    .iter()
                    .map(|(a, p, ph)| a * (TAU * t as f64 / p + ph).sin())
                    .sum();
                smooth + EXOGENOUS_NOISE * white.sample(&mut rng)
            })
            .collect();
        columns.push(col);
    }

    let mut y = vec![0.0; total];
    for t in 0..total {
        let mut v = if t > 0 { spec.autoregressive * y[t - 1] } else { 0.0 };
        for d in &spec.drivers {
            if t >= d.lag {
                v += d.coeff * columns[d.feature - 1][t - d.lag];
            }
        }
        if spec.noise > 0.0 {
            v += spec.noise * white.sample(&mut rng);
        }
        y[t] = v;
    }
    columns.push(y);

    for c in &mut columns {
        c.drain(..burn);
    }
    MultivariateSeries::new(synthetic_names(spec.exogenous), columns)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Solves the normal equations `(XᵀX) b = Xᵀy` by Gaussian elimination.
    fn ols(rows: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
        let p = rows[0].len();
        let mut a = vec![vec![0.0; p + 1]; p];
        for (r, &yv) in rows.iter().zip(y) {
            for i in 0..p {
                for j in 0..p {
                    a[i][j] += r[i] * r[j];
                }
                a[i][p] += r[i] * yv;
            }
        }
        for c in 0..p {
            let pivot = (c..p)
                .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
                .unwrap();
            a.swap(c, pivot);
            for r in 0..p {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=p {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        (0..p).map(|i| a[i][p] / a[i][i]).collect()
    }

    #[test]
    fn driver_parsing() {
        let d = parse_lag_spec("x1:3:0.6, x2:6:0.3").unwrap();
        assert_eq!(d, SyntheticSpec::default().drivers);
        assert_eq!(format_lag_spec(&d), "x1:3:0.6,x2:6:0.3");
        for bad in ["y:1:1", "x0:1:1", "x1:1", "x1:-1:1", "x1:1:nan", "x1:a:1"] {
            assert!(parse_lag_spec(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn default_shape_and_determinism() {
        let spec = SyntheticSpec::default();
        let a = gen_synthetic(4, &spec).unwrap();
        assert_eq!(a.width(), 6);
        assert_eq!(a.len(), 2000);
        assert_eq!(a.names(), ["x1", "x2", "x3", "x4", "x5", "y"]);
        assert_eq!(a, gen_synthetic(4, &spec).unwrap());
        assert_ne!(a, gen_synthetic(5, &spec).unwrap());
    }

    #[test]
    fn single_noiseless_driver_is_copied() {
        let spec = SyntheticSpec {
            len: 300,
            drivers: vec![Driver {
                feature: 1,
                lag: 0,
                coeff: 1.0,
            }],
            noise: 0.0,
            autoregressive: 0.0,
            ..SyntheticSpec::default()
        };
        let s = gen_synthetic(1, &spec).unwrap();
        assert_eq!(s.target(), s.columns()[0].as_slice());
    }

    #[test]
    fn invalid_specs() {
        let mut spec = SyntheticSpec {
            len: 10,
            ..SyntheticSpec::default()
        };
        spec.drivers[1].lag = 10;
        assert!(gen_synthetic(0, &spec).is_err());
        let spec = SyntheticSpec {
            drivers: vec![Driver {
                feature: 6,
                lag: 1,
                coeff: 1.0,
            }],
            ..SyntheticSpec::default()
        };
        assert!(gen_synthetic(0, &spec).is_err());
    }

    #[test]
    fn least_squares_recovers_coefficients() {
        let spec = SyntheticSpec::default();
        let s = gen_synthetic(11, &spec).unwrap();
        let lags = [3usize, 6];
        let start = 6;
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for t in start..s.len() {
            let mut r = vec![1.0];
            for col in &s.columns()[..spec.exogenous] {
                for &l in &lags {
                    r.push(col[t - l]);
                }
            }
            r.push(s.target()[t - 1]);
            rows.push(r);
            ys.push(s.target()[t]);
        }
        let b = ols(&rows, &ys);
        let coeff = |feature: usize, lag_slot: usize| b[1 + 2 * (feature - 1) + lag_slot];
        let mut expected = vec![0.0; b.len()];
        expected[1] = 0.6; // x1 lag 3
        expected[1 + 2 + 1] = 0.3; // x2 lag 6
        *expected.last_mut().unwrap() = 0.3;
        assert!((coeff(1, 0) - 0.6).abs() < 0.05);
        assert!((coeff(2, 1) - 0.3).abs() < 0.05);
        for (i, (got, want)) in b.iter().zip(&expected).enumerate().skip(1) {
            assert!((got - want).abs() < 0.05, "coefficient {i}: {got} vs {want}");
        }
    }
}
