//! Valid (no-padding) 1-D correlation and its adjoint.

use super::tape::{BackFn, Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Output length of a valid conv1d: floor((T − K)/stride) + 1.
pub fn conv1d_out_len(t: usize, k: usize, stride: usize) -> usize {
    (t - k) / stride + 1
}

/// Output length of the transpose: (T̂ − 1)·stride + K.
pub fn conv_transpose1d_out_len(t_hat: usize, k: usize, stride: usize) -> usize {
    (t_hat - 1) * stride + k
}

fn conv1d_raw<F: Scalar>(
    x: &[F],
    w: &[F],
    b: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    out: &mut [F],
) {
    let t_out = conv1d_out_len(t, k, stride);
    for bi in 0..b {
        for co in 0..c_out {
            for ci in 0..c_in {
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                let xrow = &x[(bi * c_in + ci) * t..(bi * c_in + ci + 1) * t];
                let orow = &mut out[(bi * c_out + co) * t_out..(bi * c_out + co + 1) * t_out];
                for o in 0..t_out {
                    let base = o * stride;
                    let mut acc = F::zero();
                    for (ki, &wv) in wrow.iter().enumerate() {
                        acc += wv * xrow[base + ki];
                    }
                    orow[o] += acc;
                }
            }
        }
    }
}

// Rows of `out` have length `out_t` (≥ the produced extent (T̂−1)·stride+K).
#[allow(clippy::too_many_arguments)]
fn conv_transpose1d_raw<F: Scalar>(
    y: &[F],
    w: &[F],
    b: usize,
    c_out: usize,
    t_hat: usize,
    c_in: usize,
    k: usize,
    stride: usize,
    out_t: usize,
    out: &mut [F],
) {
    let t_full = out_t;
    for bi in 0..b {
        for co in 0..c_out {
            let yrow = &y[(bi * c_out + co) * t_hat..(bi * c_out + co + 1) * t_hat];
            for ci in 0..c_in {
                let wrow = &w[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                let orow = &mut out[(bi * c_in + ci) * t_full..(bi * c_in + ci + 1) * t_full];
                for (o, &yv) in yrow.iter().enumerate() {
                    if yv == F::zero() {
                        continue;
                    }
                    let base = o * stride;
                    for (ki, &wv) in wrow.iter().enumerate() {
                        orow[base + ki] += yv * wv;
                    }
                }
            }
        }
    }
}

// dw[co,ci,k] = sum_{b,o} g[b,co,o] * x[b,ci,o*stride+k]
fn conv1d_weight_grad<F: Scalar>(
    x: &[F],
    g: &[F],
    b: usize,
    c_in: usize,
    t: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    dw: &mut [F],
) {
    let t_out = conv1d_out_len(t, k, stride);
    for bi in 0..b {
        for co in 0..c_out {
            let grow = &g[(bi * c_out + co) * t_out..(bi * c_out + co + 1) * t_out];
            for ci in 0..c_in {
                let xrow = &x[(bi * c_in + ci) * t..(bi * c_in + ci + 1) * t];
                let wrow = &mut dw[(co * c_in + ci) * k..(co * c_in + ci + 1) * k];
                for (o, &gv) in grow.iter().enumerate() {
                    if gv == F::zero() {
                        continue;
                    }
                    let base = o * stride;
                    for (ki, wslot) in wrow.iter_mut().enumerate() {
                        *wslot += gv * xrow[base + ki];
                    }
                }
            }
        }
    }
}

impl<F: Scalar> Tape<F> {
    /// Valid correlation: `x: B×C_in×T`, `w: C_out×C_in×K` → `B×C_out×T̂`.
    pub fn conv1d(&mut self, x: Var, w: Var, stride: usize) -> Result<Var> {
        let xs = self.shape(x).to_vec();
        let ws = self.shape(w).to_vec();
        let ([b, c_in, t], [c_out, wc_in, k]) = (match xs[..] {
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Dim(format!("conv1d input must be B×C×T, got {xs:?}"))),
        }, match ws[..] {
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Dim(format!("conv1d weight must be C_out×C_in×K, got {ws:?}"))),
        });
        if wc_in != c_in {
            return Err(Error::shape_mismatch("conv1d channels", &xs, &ws));
        }
        if stride == 0 {
            return Err(Error::Config("conv1d stride must be positive".into()));
        }
        if t < k {
            return Err(Error::SignalTooShort(format!(
                "conv1d input length {t} shorter than kernel {k}"
            )));
        }
        let t_out = conv1d_out_len(t, k, stride);
        let mut value = vec![F::zero(); b * c_out * t_out];
        conv1d_raw(self.value(x), self.value(w), b, c_in, t, c_out, k, stride, &mut value);
        let rg = self.wants_grad_pair(x, w);
        let back: Option<BackFn<F>> = rg.then(|| {
            let xv = self.value(x).to_vec();
            let wv = self.value(w).to_vec();
            Box::new(move |g: &[F]| {
                // dx is the adjoint (transposed conv) of g with the same w.
                let mut dx = vec![F::zero(); b * c_in * t];
                conv_transpose1d_raw(g, &wv, b, c_out, t_out, c_in, k, stride, t, &mut dx);
                let mut dw = vec![F::zero(); wv.len()];
                conv1d_weight_grad(&xv, g, b, c_in, t, c_out, k, stride, &mut dw);
                vec![(x, dx), (w, dw)]
            }) as BackFn<F>
        });
        Ok(self.push(
            vec![b, c_out, t_out],
            value,
            self.requires_grad(x) || self.requires_grad(w),
            back,
        ))
    }

    /// Adjoint of [`Tape::conv1d`] with the same weight layout:
    /// `y: B×C_out×T̂`, `w: C_out×C_in×K` → `B×C_in×T'` where
    /// T' = (T̂−1)·stride + K. Satisfies ⟨conv1d(a), b⟩ == ⟨a, conv_transpose1d(b)⟩.
    pub fn conv_transpose1d(&mut self, y: Var, w: Var, stride: usize) -> Result<Var> {
        let ys = self.shape(y).to_vec();
        let ws = self.shape(w).to_vec();
        let ([b, c_out, t_hat], [wc_out, c_in, k]) = (match ys[..] {
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Dim(format!("conv_transpose1d input must be B×C×T̂, got {ys:?}"))),
        }, match ws[..] {
            [a, b, c] => [a, b, c],
            _ => return Err(Error::Dim(format!("conv_transpose1d weight must be C_out×C_in×K, got {ws:?}"))),
        });
        if wc_out != c_out {
            return Err(Error::shape_mismatch("conv_transpose1d channels", &ys, &ws));
        }
        if stride == 0 {
            return Err(Error::Config("conv_transpose1d stride must be positive".into()));
        }
        let t_full = conv_transpose1d_out_len(t_hat, k, stride);
        let mut value = vec![F::zero(); b * c_in * t_full];
        conv_transpose1d_raw(self.value(y), self.value(w), b, c_out, t_hat, c_in, k, stride, t_full, &mut value);
        let rg = self.wants_grad_pair(y, w);
        let back: Option<BackFn<F>> = rg.then(|| {
            let yv = self.value(y).to_vec();
            let wv = self.value(w).to_vec();
            Box::new(move |g: &[F]| {
                // dy is a plain conv1d of g with w.
                let mut dy = vec![F::zero(); yv.len()];
                conv1d_raw(g, &wv, b, c_in, t_full, c_out, k, stride, &mut dy);
                // dw[co,ci,k] = sum_{b,o} y[b,co,o] * g[b,ci,o*stride+k]
                let mut dw = vec![F::zero(); wv.len()];
                conv1d_weight_grad(g, &yv, b, c_in, t_full, c_out, k, stride, &mut dw);
                vec![(y, dy), (w, dw)]
            }) as BackFn<F>
        });
        Ok(self.push(
            vec![b, c_in, t_full],
            value,
            self.requires_grad(y) || self.requires_grad(w),
            back,
        ))
    }

    fn wants_grad_pair(&self, a: Var, b: Var) -> bool {
        self.recording && (self.requires_grad(a) || self.requires_grad(b))
    }
}
