use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Batch-norm statistics source.
#[derive(Debug, Clone, Copy)]
pub enum BatchNormMode<'a, T> {
    /// Normalize with the batch's own per-channel statistics.
    Train,
    /// Normalize with stored running statistics.
    Eval { running_mean: &'a [T], running_var: &'a [T] },
}

/// Per-channel statistics of a training-mode batch, for running-stat updates.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased (n−1) variance.
    pub var: Vec<T>,
}

impl<T: Scalar> BatchStats<T> {
    /// `running ← (1−momentum)·running + momentum·batch`.
    pub fn update_running(&self, momentum: T, running_mean: &mut [T], running_var: &mut [T]) {
        let keep = T::one() - momentum;
        for (r, &m) in running_mean.iter_mut().zip(&self.mean) {
            *r = keep * *r + momentum * m;
        }
        for (r, &v) in running_var.iter_mut().zip(&self.var) {
            *r = keep * *r + momentum * v;
        }
    }
}

impl<T: Scalar> Tape<T> {
    /// Batch normalization over the N, H, W axes of an `N×C×H×W` input.
    pub fn batch_norm_2d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_, T>,
    ) -> Result<(Var, Option<BatchStats<T>>)> {
        let (n, c, h, w) = self.value(x).dims4()?;
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::dim(format!(
                "batch_norm_2d: affine params {:?}/{:?} do not match {c} channels",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let hw = h * w;
        let count = n * hw;
        let eps = T::from_f64_lossy(BN_EPS);
        let xv = self.values(x);
        let (mean, var_biased, stats) = match mode {
            BatchNormMode::Train => {
                let mut mean = vec![T::zero(); c];
                let mut var = vec![T::zero(); c];
                let cnt = T::from_usize(count).expect("usize");
                for ch in 0..c {
                    let mut s = T::zero();
                    for img in 0..n {
                        s += xv[(img * c + ch) * hw..(img * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let m = s / cnt;
                    let mut sq = T::zero();
                    for img in 0..n {
                        for &v in &xv[(img * c + ch) * hw..(img * c + ch + 1) * hw] {
                            sq += (v - m) * (v - m);
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq / cnt;
                }
                let unbiased = if count > 1 {
                    let f = T::from_usize(count).expect("usize") / T::from_usize(count - 1).expect("usize");
                    var.iter().map(|&v| v * f).collect()
                } else {
                    var.clone()
                };
                let stats = BatchStats {
                    mean: mean.clone(),
                    var: unbiased,
                };
                (mean, var, Some(stats))
            }
            BatchNormMode::Eval {
                running_mean,
                running_var,
            } => {
                if running_mean.len() != c || running_var.len() != c {
                    return Err(Error::dim("batch_norm_2d: running statistics length mismatch"));
                }
                (running_mean.to_vec(), running_var.to_vec(), None)
            }
        };
        let inv_std: Vec<T> = var_biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let (gv, bv) = (self.values(gamma), self.values(beta));
        let mut xhat = vec![T::zero(); xv.len()];
        let mut out = vec![T::zero(); xv.len()];
        for img in 0..n {
            for ch in 0..c {
                let range = (img * c + ch) * hw..(img * c + ch + 1) * hw;
                for i in range {
                    let z = (xv[i] - mean[ch]) * inv_std[ch];
                    xhat[i] = z;
                    out[i] = gv[ch] * z + bv[ch];
                }
            }
        }
        let train = matches!(mode, BatchNormMode::Train);
        let op = Op::BatchNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
            train,
        };
        let y = self.push_result(&[n, c, h, w], out, &[x, gamma, beta], op)?;
        Ok((y, stats))
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn batch_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        inv_std: &[T],
        train: bool,
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let (n, c, h, w) = self.value(x).dims4().expect("4-D");
        let hw = h * w;
        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for img in 0..n {
            for ch in 0..c {
                let base = (img * c + ch) * hw;
                for i in base..base + hw {
                    sum_g[ch] += g[i];
                    sum_gx[ch] += g[i] * xhat[i];
                }
            }
        }
        self.acc(grads, gamma, |d| super::tape::add_into(d, &sum_gx));
        self.acc(grads, beta, |d| super::tape::add_into(d, &sum_g));
        let gv = self.values(gamma);
        let m = T::from_usize(n * hw).expect("usize");
        self.acc(grads, x, |d| {
            for img in 0..n {
                for ch in 0..c {
                    let base = (img * c + ch) * hw;
                    let k = gv[ch] * inv_std[ch];
                    for i in base..base + hw {
                        d[i] += if train {
                            k * (g[i] - sum_g[ch] / m - xhat[i] * sum_gx[ch] / m)
                        } else {
                            k * g[i]
                        };
                    }
                }
            }
        });
    }

    /// Layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().expect("non-empty");
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::dim(format!(
                "layer_norm: affine params {:?}/{:?} do not match width {d}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        let eps = T::from_f64_lossy(LN_EPS);
        let df = T::from_usize(d).expect("usize");
        let (xv, gv, bv) = (self.values(x), self.values(gamma), self.values(beta));
        let rows = xv.len() / d;
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mean = row.iter().copied().sum::<T>() / df;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / df;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let z = (row[j] - mean) * is;
                xhat[r * d + j] = z;
                out[r * d + j] = gv[j] * z + bv[j];
            }
        }
        let op = Op::LayerNorm {
            x,
            gamma,
            beta,
            xhat,
            inv_std,
        };
        self.push_result(&shape, out, &[x, gamma, beta], op)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn layer_norm_backward(
        &self,
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: &[T],
        inv_std: &[T],
        g: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let d = self.value(gamma).numel();
        let rows = g.len() / d;
        self.acc(grads, gamma, |dg| {
            for i in 0..g.len() {
                dg[i % d] += g[i] * xhat[i];
            }
        });
        self.acc(grads, beta, |db| {
            for i in 0..g.len() {
                db[i % d] += g[i];
            }
        });
        let gv = self.values(gamma);
        let df = T::from_usize(d).expect("usize");
        self.acc(grads, x, |dx| {
            for r in 0..rows {
                let mut s1 = T::zero();
                let mut s2 = T::zero();
                for j in 0..d {
                    let dz = g[r * d + j] * gv[j];
                    s1 += dz;
                    s2 += dz * xhat[r * d + j];
                }
                for j in 0..d {
                    let dz = g[r * d + j] * gv[j];
                    dx[r * d + j] += inv_std[r] * (dz - s1 / df - xhat[r * d + j] * s2 / df);
                }
            }
        });
    }
}
