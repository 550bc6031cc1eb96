//! 2-D convolution by im2col + GEMM.
//!
//! All images of the batch are unfolded into one `[C·kh·kw × N·H'·W']`
//! column matrix so the kernel multiply is a single GEMM.

use super::tape::{Op, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::{matmul_into, Scalar};

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn plane(&self) -> usize {
        self.ho * self.wo
    }

    fn cols_width(&self) -> usize {
        self.n * self.plane()
    }
}

pub fn conv_output_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if stride == 0 || kernel == 0 || kernel > padded {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let width = g.cols_width();
    let plane = g.plane();
    for n in 0..g.n {
        let img = &x[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
        for c in 0..g.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let dst = &mut cols[row * width + n * plane..row * width + (n + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        let out_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                        if iy < 0 || iy >= g.h as isize {
                            out_row.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            *v = if ix < 0 || ix >= g.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let width = g.cols_width();
    let plane = g.plane();
    for n in 0..g.n {
        let img = &mut dx[n * g.c * g.h * g.w..(n + 1) * g.c * g.h * g.w];
        for c in 0..g.c {
            for ki in 0..g.kh {
                for kj in 0..g.kw {
                    let row = (c * g.kh + ki) * g.kw + kj;
                    let src = &cols[row * width + n * plane..row * width + (n + 1) * plane];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut img[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                        for ox in 0..g.wo {
                            let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                dst_row[ix as usize] += src[oy * g.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    fn conv_geometry(&self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Geometry> {
        let (n, c, h, w) = self.value(x).dims4()?;
        let (f, kc, kh, kw) = self.value(kernel).dims4()?;
        if kc != c {
            return Err(Error::dim(format!(
                "conv2d: kernel {:?} expects {kc} input channels, input {:?} has {c}",
                self.shape(kernel),
                self.shape(x)
            )));
        }
        let ho = conv_output_dim(h, kh, stride, padding);
        let wo = conv_output_dim(w, kw, stride, padding);
        match (ho, wo) {
            (Some(ho), Some(wo)) if ho > 0 && wo > 0 => Ok(Geometry {
                n,
                c,
                h,
                w,
                f,
                kh,
                kw,
                stride,
                pad: padding,
                ho,
                wo,
            }),
            _ => Err(Error::dim(format!(
                "conv2d: kernel {kh}×{kw} stride {stride} padding {padding} gives no output for input {h}×{w}"
            ))),
        }
    }

    /// `N×C×H×W` input, `F×C×kh×kw` kernel, zero padding, no bias.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var> {
        let g = self.conv_geometry(x, kernel, stride, padding)?;
        let (patch, width, plane) = (g.patch(), g.cols_width(), g.plane());
        let mut cols = vec![T::zero(); patch * width];
        im2col(self.values(x), &g, &mut cols);

        let mut tmp = vec![T::zero(); g.f * width];
        matmul_into(self.values(kernel), false, &cols, false, g.f, patch, width, T::zero(), &mut tmp);
        let mut out = vec![T::zero(); g.n * g.f * plane];
        for f in 0..g.f {
            for n in 0..g.n {
                out[(n * g.f + f) * plane..(n * g.f + f + 1) * plane]
                    .copy_from_slice(&tmp[f * width + n * plane..f * width + (n + 1) * plane]);
            }
        }
        let needs_grad = self.requires_grad(x) || self.requires_grad(kernel);
        let op = Op::Conv2d {
            x,
            kernel,
            stride,
            padding,
            cols: if needs_grad { cols } else { Vec::new() },
        };
        self.push_result(&[g.n, g.f, g.ho, g.wo], out, &[x, kernel], op)
    }

    #[allow(clippy::too_many_arguments)]
    pub(crate) fn conv2d_backward(
        &self,
        x: Var,
        kernel: Var,
        stride: usize,
        padding: usize,
        cols: &[T],
        g_out: &[T],
        grads: &mut [Option<Vec<T>>],
    ) {
        let g = self.conv_geometry(x, kernel, stride, padding).expect("validated in forward");
        let (patch, width, plane) = (g.patch(), g.cols_width(), g.plane());
        let mut dtmp = vec![T::zero(); g.f * width];
        for f in 0..g.f {
            for n in 0..g.n {
                dtmp[f * width + n * plane..f * width + (n + 1) * plane]
                    .copy_from_slice(&g_out[(n * g.f + f) * plane..(n * g.f + f + 1) * plane]);
            }
        }
        // dK += dOut · colsᵀ
        self.acc(grads, kernel, |d| {
            matmul_into(&dtmp, false, cols, true, g.f, width, patch, T::one(), d)
        });
        if self.requires_grad(x) {
            // dcols = Kᵀ · dOut
            let mut dcols = vec![T::zero(); patch * width];
            matmul_into(self.values(kernel), true, &dtmp, false, patch, g.f, width, T::zero(), &mut dcols);
            self.acc(grads, x, |d| col2im(&dcols, &g, d));
        }
    }
}
