//! Gaussian-process Bayesian optimization with expected improvement.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const INITIAL_POINTS: usize = 5;
pub const CANDIDATES: usize = 256;
pub const NOISE: f64 = 1e-6;
/// Length-scales (in unit-cube coordinates) tried by maximum likelihood.
pub const LENGTH_SCALES: [f64; 6] = [0.05, 0.1, 0.2, 0.3, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneDim {
    pub name: String,
    pub low: f64,
    pub high: f64,
}

/// Box-shaped search space. Learning rate and weight decay are searched in log10.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneSpace {
    pub dims: Vec<TuneDim>,
}

impl TuneSpace {
    pub fn new(dims: Vec<TuneDim>) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::invalid("search space needs at least one dimension"));
        }
        if let Some(d) = dims.iter().find(|d| d.low >= d.high || !d.low.is_finite() || !d.high.is_finite()) {
            return Err(Error::invalid(format!("bad bounds [{}, {}] for `{}`", d.low, d.high, d.name)));
        }
        Ok(Self { dims })
    }

    pub fn interval(name: &str, low: f64, high: f64) -> Result<Self> {
        Self::new(vec![TuneDim {
            name: name.to_string(),
            low,
            high,
        }])
    }

    /// `log10_lr ∈ [−5, −1]`, `log10_wd ∈ [−6, −1]`.
    pub fn lr_wd() -> Self {
        Self::new(vec![
            TuneDim {
                name: "log10_learning_rate".into(),
                low: -5.0,
                high: -1.0,
            },
            TuneDim {
                name: "log10_weight_decay".into(),
                low: -6.0,
                high: -1.0,
            },
        ])
        .expect("valid bounds")
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    /// Maps unit-cube coordinates onto the bounds.
    pub fn from_unit(&self, u: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(u).map(|(d, &u)| d.low + u * (d.high - d.low)).collect()
    }

    pub fn to_unit(&self, x: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(x).map(|(d, &x)| (x - d.low) / (d.high - d.low)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Vec<f64>,
    /// Objective, or the penalty when the objective was not finite.
    pub value: f64,
    pub failed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneState {
    pub space: TuneSpace,
    pub budget: usize,
    pub seed: u64,
    pub observations: Vec<Observation>,
    /// Length-scale picked for each model-guided proposal.
    pub length_scales: Vec<f64>,
}

impl TuneState {
    /// Index of the lowest observed value, first on ties.
    pub fn incumbent(&self) -> Option<usize> {
        let mut best: Option<usize> = None;
        for (i, o) in self.observations.iter().enumerate() {
            if best.is_none_or(|b| o.value < self.observations[b].value) {
                best = Some(i);
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_point: Vec<f64>,
    pub best_value: f64,
    pub state: TuneState,
}

const PRIMES: [u32; 8] = [2, 3, 5, 7, 11, 13, 17, 19];

pub fn radical_inverse(mut i: u64, base: u32) -> f64 {
    let b = base as f64;
    let mut f = 1.0 / b;
    let mut out = 0.0;
    while i > 0 {
        out += f * (i % base as u64) as f64;
        i /= base as u64;
        f /= b;
    }
    out
}

/// Halton points in the unit cube, shifted modulo 1 by `shift`.
pub fn shifted_halton(n: usize, shift: &[f64]) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| {
            shift
                .iter()
                .zip(PRIMES)
                .map(|(&s, p)| (radical_inverse(i as u64 + 1, p) + s).fract())
                .collect()
        })
        .collect()
}

/// Regular grid of about `CANDIDATES` points in the unit cube, endpoints included.
pub fn candidate_grid(dim: usize) -> Vec<Vec<f64>> {
    let per = ((CANDIDATES as f64).powf(1.0 / dim as f64).floor() as usize).max(2);
    let total = per.pow(dim as u32);
    (0..total)
        .map(|mut k| {
            (0..dim)
                .map(|_| {
                    let i = k % per;
                    k /= per;
                    i as f64 / (per - 1) as f64
                })
                .collect()
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

struct Surrogate {
    xs: Vec<Vec<f64>>,
    length_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    signal_var: f64,
}

impl Surrogate {
    fn corr(&self, a: &[f64], b: &[f64]) -> f64 {
        (-sq_dist(a, b) / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    /// Fits on standardized targets; the signal variance is profiled out.
    fn fit(xs: &[Vec<f64>], y: &DVector<f64>, length_scale: f64) -> Option<(Self, f64)> {
        let n = xs.len();
        let r = DMatrix::from_fn(n, n, |i, j| {
            let k = (-sq_dist(&xs[i], &xs[j]) / (2.0 * length_scale * length_scale)).exp();
            if i == j {
                k + NOISE
            } else {
                k
            }
        });
        let chol = r.cholesky()?;
        let alpha = chol.solve(y);
        let signal_var = (y.dot(&alpha) / n as f64).max(1e-12);
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>() * 2.0;
        let nll = 0.5 * n as f64 * signal_var.ln() + 0.5 * log_det;
        Some((
            Self {
                xs: xs.to_vec(),
                length_scale,
                chol,
                alpha,
                signal_var,
            },
            nll,
        ))
    }

    fn predict(&self, x: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(self.xs.len(), self.xs.iter().map(|xi| self.corr(xi, x)));
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (self.signal_var * (1.0 - k.dot(&v))).max(0.0);
        (mean, var)
    }
}

/// Expected improvement below `best` for a Gaussian prediction.
pub fn expected_improvement(mean: f64, var: f64, best: f64) -> f64 {
    let imp = best - mean;
    let sd = var.sqrt();
    if sd < 1e-12 {
        return imp.max(0.0);
    }
    let z = imp / sd;
    let n = Normal::standard();
    imp * n.cdf(z) + sd * n.pdf(z)
}

fn record(state: &mut TuneState, point: Vec<f64>, value: f64) {
    if value.is_finite() {
        state.observations.push(Observation {
            point,
            value,
            failed: false,
        });
        return;
    }
    let worst = state
        .observations
        .iter()
        .filter(|o| !o.failed)
        .map(|o| o.value)
        .fold(f64::NEG_INFINITY, f64::max);
    let penalty = if worst.is_finite() { worst + 1.0 } else { 1.0 };
    state.observations.push(Observation {
        point,
        value: penalty,
        failed: true,
    });
}

fn propose(state: &mut TuneState, grid: &[Vec<f64>]) -> Vec<f64> {
    let space = &state.space;
    let xs: Vec<Vec<f64>> = state.observations.iter().map(|o| space.to_unit(&o.point)).collect();
    let raw: Vec<f64> = state.observations.iter().map(|o| o.value).collect();
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let sd = if sd > 1e-12 { sd } else { 1.0 };
    let y = DVector::from_iterator(raw.len(), raw.iter().map(|v| (v - mean) / sd));

    let mut fitted: Option<(Surrogate, f64)> = None;
    for &ls in &LENGTH_SCALES {
        if let Some((s, nll)) = Surrogate::fit(&xs, &y, ls) {
            if fitted.as_ref().is_none_or(|(_, best)| nll < *best) {
                fitted = Some((s, nll));
            }
        }
    }
    let Some((model, _)) = fitted else {
        // every kernel matrix was numerically singular
        return space.from_unit(&grid[0]);
    };
    state.length_scales.push(model.length_scale);
    let best = y.iter().copied().fold(f64::INFINITY, f64::min);
    let mut best_i = 0;
    let mut best_ei = f64::NEG_INFINITY;
    for (i, c) in grid.iter().enumerate() {
        let (m, v) = model.predict(c);
        let ei = expected_improvement(m, v, best);
        if ei > best_ei {
            best_ei = ei;
            best_i = i;
        }
    }
    space.from_unit(&grid[best_i])
}

/// Minimizes `objective` over `space` with `budget` evaluations: a shifted
/// Halton design of five points, then one expected-improvement proposal per
/// remaining evaluation. Non-finite values are stored as a penalty of the
/// worst finite value plus one.
pub fn bayes_opt_tune<F>(mut objective: F, space: &TuneSpace, budget: usize, seed: u64) -> Result<TuneResult>
where
    F: FnMut(&[f64]) -> f64,
{
    if budget < INITIAL_POINTS {
        return Err(Error::invalid(format!(
            "budget {budget} is below the {INITIAL_POINTS}-point initial design"
        )));
    }
    if space.dim() > PRIMES.len() {
        return Err(Error::invalid(format!("at most {} dimensions are supported", PRIMES.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shift: Vec<f64> = (0..space.dim()).map(|_| rng.random::<f64>()).collect();
    let mut state = TuneState {
        space: space.clone(),
        budget,
        seed,
        observations: Vec::with_capacity(budget),
        length_scales: Vec::new(),
    };
    for u in shifted_halton(INITIAL_POINTS, &shift) {
        let x = space.from_unit(&u);
        let v = objective(&x);
        record(&mut state, x, v);
    }
    let grid = candidate_grid(space.dim());
    while state.observations.len() < budget {
        let x = propose(&mut state, &grid);
        let v = objective(&x);
        record(&mut state, x, v);
    }
    let i = state.incumbent().expect("at least five observations");
    Ok(TuneResult {
        best_point: state.observations[i].point.clone(),
        best_value: state.observations[i].value,
        state,
    })
}
