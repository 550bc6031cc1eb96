use super::tape::{axis_layout, Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{matmul_into, Scalar};

impl<T: Scalar> Tape<T> {
    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(format!(
                "{what}: shapes {:?} and {:?} differ",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let out = self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        self.push_result(&shape, out, &[a, b], Op::Add(a, b))
    }

    /// Adds a bias vector along the last dimension of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let n = *shape.last().expect("non-empty");
        if self.shape(bias) != [n] {
            return Err(Error::dim(format!(
                "add_bias: bias {:?} does not match last dim of {shape:?}",
                self.shape(bias)
            )));
        }
        let b = self.values(bias);
        let out = self
            .values(x)
            .chunks_exact(n)
            .flat_map(|row| row.iter().zip(b).map(|(&v, &b)| v + b))
            .collect();
        self.push_result(&shape, out, &[x, bias], Op::AddBias(x, bias))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let out = self.values(a).iter().zip(self.values(b)).map(|(&x, &y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        self.push_result(&shape, out, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let out = self.values(x).iter().map(|&v| v * s).collect();
        let shape = self.shape(x).to_vec();
        self.push_result(&shape, out, &[x], Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let out = self.values(x).iter().map(|&v| v.max(T::zero())).collect();
        let shape = self.shape(x).to_vec();
        self.push_result(&shape, out, &[x], Op::Relu(x))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2()?;
        let (k2, n) = self.value(b).dims2()?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner dimensions of {:?} and {:?} disagree",
                self.shape(a),
                self.shape(b)
            )));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.values(a), false, self.values(b), false, m, k, n, T::zero(), &mut out);
        self.push_result(&[m, n], out, &[a, b], Op::MatMul(a, b))
    }

    pub(crate) fn matmul_backward(&self, a: Var, b: Var, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (m, k) = self.value(a).dims2().expect("2-D");
        let n = self.value(b).shape()[1];
        let (av, bv) = (self.values(a), self.values(b));
        // dA = dC · Bᵀ
        self.acc(grads, a, |d| matmul_into(g, false, bv, true, m, n, k, T::one(), d));
        // dB = Aᵀ · dC
        self.acc(grads, b, |d| matmul_into(av, true, g, false, k, m, n, T::one(), d));
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let v = self.values(x);
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = v[i * c + j];
            }
        }
        self.push_result(&[c, r], out, &[x], Op::Transpose(x))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).numel() {
            return Err(Error::dim(format!(
                "reshape: cannot view {:?} as {shape:?}",
                self.shape(x)
            )));
        }
        let out = self.values(x).to_vec();
        self.push_result(shape, out, &[x], Op::Reshape(x))
    }

    /// Columns `start..start+width` of a 2-D tensor.
    pub fn slice_cols(&mut self, x: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        if width == 0 || start + width > c {
            return Err(Error::dim(format!(
                "slice_cols: columns {start}..{} out of range for {:?}",
                start + width,
                self.shape(x)
            )));
        }
        let v = self.values(x);
        let out = (0..r)
            .flat_map(|i| v[i * c + start..i * c + start + width].iter().copied())
            .collect();
        self.push_result(&[r, width], out, &[x], Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(*parts.first().ok_or_else(|| Error::dim("concat_cols: no inputs"))?).dims2()?.0;
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if r != rows {
                return Err(Error::dim(format!("concat_cols: row counts {rows} and {r} differ")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push_result(&[rows, total], out, parts, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.value(*parts.first().ok_or_else(|| Error::dim("concat_rows: no inputs"))?).dims2()?.1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.value(p).dims2()?;
            if c != cols {
                return Err(Error::dim(format!("concat_rows: widths {cols} and {c} differ")));
            }
            rows += r;
            out.extend_from_slice(self.values(p));
        }
        self.push_result(&[rows, cols], out, parts, Op::ConcatRows(parts.to_vec()))
    }

    /// Row lookup into a `[V×D]` table; also used as an embedding lookup.
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.value(table).dims2()?;
        if ids.is_empty() {
            return Err(Error::dim("gather_rows: empty id list"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::dim(format!("gather_rows: id {bad} out of range for {v} rows")));
        }
        let tv = self.values(table);
        let out = ids.iter().flat_map(|&i| tv[i * d..(i + 1) * d].iter().copied()).collect();
        self.push_result(&[ids.len(), d], out, &[table], Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.gather_rows(table, ids)
    }

    /// Rows `start..start+len` of a 2-D tensor.
    pub fn rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let ids: Vec<usize> = (start..start + len).collect();
        self.gather_rows(x, &ids)
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool_2d(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let hw = T::from_usize(h * w).expect("usize");
        let out = self
            .values(x)
            .chunks_exact(h * w)
            .map(|plane| plane.iter().copied().sum::<T>() / hw)
            .collect();
        self.push_result(&[n, c], out, &[x], Op::GlobalAvgPool(x))
    }

    pub fn softmax(&mut self, x: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(Error::dim(format!("softmax: axis {axis} out of range for {shape:?}")));
        }
        let (outer, len, inner) = axis_layout(&shape, axis);
        let v = self.values(x);
        let mut out = vec![T::zero(); v.len()];
        for o in 0..outer {
            for k in 0..inner {
                let base = o * len * inner + k;
                let mut max = T::neg_infinity();
                for a in 0..len {
                    max = max.max(v[base + a * inner]);
                }
                let mut sum = T::zero();
                for a in 0..len {
                    let e = (v[base + a * inner] - max).exp();
                    out[base + a * inner] = e;
                    sum += e;
                }
                for a in 0..len {
                    out[base + a * inner] /= sum;
                }
            }
        }
        self.push_result(&shape, out, &[x], Op::Softmax { x, axis })
    }

    /// Sets entries above the diagonal of a 2-D score matrix to `-inf`.
    pub fn causal_mask(&mut self, x: Var) -> Result<Var> {
        let (r, c) = self.value(x).dims2()?;
        let mut out = self.values(x).to_vec();
        for i in 0..r {
            for v in out[i * c..(i + 1) * c].iter_mut().skip(i + 1) {
                *v = T::neg_infinity();
            }
        }
        self.push_result(&[r, c], out, &[x], Op::CausalMask(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.values(x).iter().copied().sum();
        self.push_result(&[1], vec![s], &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = T::from_usize(self.value(x).numel()).expect("usize");
        let s: T = self.values(x).iter().copied().sum();
        self.push_result(&[1], vec![s / n], &[x], Op::Mean(x))
    }

    /// Affine map of rows: `x · w + b`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let y = self.matmul(x, weight)?;
        match bias {
            Some(b) => self.add_bias(y, b),
            None => Ok(y),
        }
    }
}
