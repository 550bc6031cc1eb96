use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

impl<T: Scalar> Tape<T> {
    /// Mean next-token negative log-likelihood over rows whose target is not
    /// `ignore_index`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize], ignore_index: usize) -> Result<Var> {
        let (b, v) = self.value(logits).dims2()?;
        if targets.len() != b {
            return Err(Error::dim(format!(
                "cross_entropy: {} targets for {b} logit rows",
                targets.len()
            )));
        }
        let lv = self.values(logits);
        let mut probs = vec![T::zero(); b * v];
        let mut total = T::zero();
        let mut count = 0usize;
        for (row, &t) in targets.iter().enumerate() {
            if t == ignore_index {
                continue;
            }
            if t >= v {
                return Err(Error::invalid(format!(
                    "cross_entropy: target {t} out of range for vocabulary of {v}"
                )));
            }
            let r = &lv[row * v..(row + 1) * v];
            let max = r.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for (p, &x) in probs[row * v..(row + 1) * v].iter_mut().zip(r) {
                *p = (x - max).exp();
                sum += *p;
            }
            probs[row * v..(row + 1) * v].iter_mut().for_each(|p| *p /= sum);
            let lse = max + sum.ln();
            total += lse - r[t];
            count += 1;
        }
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every target is ignored"));
        }
        let loss = total / T::from_usize(count).expect("usize");
        let op = Op::CrossEntropy {
            logits,
            targets: targets.to_vec(),
            ignore_index,
            probs,
            count,
        };
        self.push_result(&[1], vec![loss], &[logits], op)
    }
}
