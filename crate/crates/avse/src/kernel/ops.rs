//! Tape ops: elementwise math, matmul, softmax, normalization, dropout,
//! shape manipulation and overlap chunking.

use rand::Rng;

use super::shape::{broadcast_strides, for_each_broadcast, numel, strides};
use super::tape::{BackFn, Scalar, Tape, Var};
use crate::error::{Error, Result};

// Batched m×k · k×n -> m×n accumulating into out.
fn mm_nn<F: Scalar>(a: &[F], b: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
}

// g (m×n) · bᵀ (n×k view of b: k×n) -> m×k.
fn mm_nt<F: Scalar>(g: &[F], b: &[F], m: usize, n: usize, k: usize, out: &mut [F]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = F::zero();
            for j in 0..n {
                acc += grow[j] * brow[j];
            }
            out[i * k + p] += acc;
        }
    }
}

// aᵀ (k×m view of a: m×k) · g (m×n) -> k×n.
fn mm_tn<F: Scalar>(a: &[F], g: &[F], m: usize, k: usize, n: usize, out: &mut [F]) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == F::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += av * grow[j];
            }
        }
    }
}

impl<F: Scalar> Tape<F> {
    fn wants_grad(&self, vars: &[Var]) -> bool {
        self.recording && vars.iter().any(|&v| self.requires_grad(v))
    }

    fn same_shape(&self, what: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape_mismatch(what, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.wants_grad(&[a, b]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| vec![(a, g.to_vec()), (b, g.to_vec())]) as BackFn<F>
        });
        Ok(self.push(self.shape(a).to_vec(), value, rg || self.requires_grad(a) || self.requires_grad(b), back))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x - y)
            .collect();
        let rg = self.wants_grad(&[a, b]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                vec![(a, g.to_vec()), (b, g.iter().map(|&x| -x).collect())]
            }) as BackFn<F>
        });
        Ok(self.push(self.shape(a).to_vec(), value, self.requires_grad(a) || self.requires_grad(b), back))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value: Vec<F> = self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| x * y)
            .collect();
        let rg = self.wants_grad(&[a, b]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let av = self.value(a).to_vec();
            let bv = self.value(b).to_vec();
            Box::new(move |g: &[F]| {
                let da = g.iter().zip(&bv).map(|(&g, &b)| g * b).collect();
                let db = g.iter().zip(&av).map(|(&g, &a)| g * a).collect();
                vec![(a, da), (b, db)]
            }) as BackFn<F>
        });
        Ok(self.push(self.shape(a).to_vec(), value, self.requires_grad(a) || self.requires_grad(b), back))
    }

    /// `a + b` with `b` broadcast (align-right) against `a`'s shape.
    pub fn add_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op(a, b, true)
    }

    /// `a * b` with `b` broadcast (align-right) against `a`'s shape.
    pub fn mul_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        self.broadcast_op(a, b, false)
    }

    fn broadcast_op(&mut self, a: Var, b: Var, additive: bool) -> Result<Var> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        let bstr = broadcast_strides(&bshape, &ashape).ok_or_else(|| {
            Error::shape_mismatch("broadcast", &ashape, &bshape)
        })?;
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = vec![F::zero(); av.len()];
        for_each_broadcast(&ashape, &bstr, |lin, boff| {
            value[lin] = if additive {
                av[lin] + bv[boff]
            } else {
                av[lin] * bv[boff]
            };
        });
        let rg = self.wants_grad(&[a, b]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let ashape = ashape.clone();
            let bstr = bstr.clone();
            let b_len = bv.len();
            let (av_cap, bv_cap) = if additive {
                (Vec::new(), Vec::new())
            } else {
                (av.to_vec(), bv.to_vec())
            };
            Box::new(move |g: &[F]| {
                let mut db = vec![F::zero(); b_len];
                let da: Vec<F>;
                if additive {
                    for_each_broadcast(&ashape, &bstr, |lin, boff| db[boff] += g[lin]);
                    da = g.to_vec();
                } else {
                    let mut da_v = vec![F::zero(); g.len()];
                    for_each_broadcast(&ashape, &bstr, |lin, boff| {
                        db[boff] += g[lin] * av_cap[lin];
                        da_v[lin] = g[lin] * bv_cap[boff];
                    });
                    da = da_v;
                }
                vec![(a, da), (b, db)]
            }) as BackFn<F>
        });
        Ok(self.push(ashape, value, self.requires_grad(a) || self.requires_grad(b), back))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let fc = F::from_f64(c);
        let value: Vec<F> = self.value(a).iter().map(|&x| x * fc).collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> =
            rg.then(|| Box::new(move |g: &[F]| vec![(a, g.iter().map(|&x| x * fc).collect())]) as BackFn<F>);
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let fc = F::from_f64(c);
        let value: Vec<F> = self.value(a).iter().map(|&x| x + fc).collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> =
            rg.then(|| Box::new(move |g: &[F]| vec![(a, g.to_vec())]) as BackFn<F>);
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value: Vec<F> = self
            .value(a)
            .iter()
            .map(|&x| if x > F::zero() { x } else { F::zero() })
            .collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let xv = self.value(a).to_vec();
            Box::new(move |g: &[F]| {
                let da = g
                    .iter()
                    .zip(&xv)
                    .map(|(&g, &x)| if x > F::zero() { g } else { F::zero() })
                    .collect();
                vec![(a, da)]
            }) as BackFn<F>
        });
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = F::one();
        let value: Vec<F> = self
            .value(a)
            .iter()
            .map(|&x| one / (one + (-x).exp()))
            .collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let yv = value.clone();
            Box::new(move |g: &[F]| {
                let da = g
                    .iter()
                    .zip(&yv)
                    .map(|(&g, &y)| g * y * (F::one() - y))
                    .collect();
                vec![(a, da)]
            }) as BackFn<F>
        });
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value: Vec<F> = self.value(a).iter().map(|&x| x.tanh()).collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let yv = value.clone();
            Box::new(move |g: &[F]| {
                let da = g
                    .iter()
                    .zip(&yv)
                    .map(|(&g, &y)| g * (F::one() - y * y))
                    .collect();
                vec![(a, da)]
            }) as BackFn<F>
        });
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let value: Vec<F> = self.value(a).iter().map(|&x| x.ln()).collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let xv = self.value(a).to_vec();
            Box::new(move |g: &[F]| {
                let da = g.iter().zip(&xv).map(|(&g, &x)| g / x).collect();
                vec![(a, da)]
            }) as BackFn<F>
        });
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    /// Elementwise `max(a, c)`; gradient passes only where `a > c`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Var {
        let fc = F::from_f64(c);
        let value: Vec<F> = self
            .value(a)
            .iter()
            .map(|&x| if x > fc { x } else { fc })
            .collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let xv = self.value(a).to_vec();
            Box::new(move |g: &[F]| {
                let da = g
                    .iter()
                    .zip(&xv)
                    .map(|(&g, &x)| if x > fc { g } else { F::zero() })
                    .collect();
                vec![(a, da)]
            }) as BackFn<F>
        });
        self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let mut acc = F::zero();
        for &x in self.value(a) {
            acc += x;
        }
        let n = self.value(a).len();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> =
            rg.then(|| Box::new(move |g: &[F]| vec![(a, vec![g[0]; n])]) as BackFn<F>);
        self.push(vec![1], vec![acc], self.requires_grad(a), back)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len();
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Numerically stable softmax along `axis` (max-subtraction shift).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(Error::Dim(format!(
                "softmax axis {axis} out of range for shape {shape:?}"
            )));
        }
        let d = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let xv = self.value(a);
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite input to softmax".into()));
        }
        let mut value = vec![F::zero(); xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let base = o * d * inner + i;
                let mut mx = F::neg_infinity();
                for j in 0..d {
                    mx = mx.max(xv[base + j * inner]);
                }
                let mut z = F::zero();
                for j in 0..d {
                    let e = (xv[base + j * inner] - mx).exp();
                    value[base + j * inner] = e;
                    z += e;
                }
                for j in 0..d {
                    value[base + j * inner] = value[base + j * inner] / z;
                }
            }
        }
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let yv = value.clone();
            Box::new(move |g: &[F]| {
                let mut da = vec![F::zero(); g.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let base = o * d * inner + i;
                        let mut dot = F::zero();
                        for j in 0..d {
                            let k = base + j * inner;
                            dot += g[k] * yv[k];
                        }
                        for j in 0..d {
                            let k = base + j * inner;
                            da[k] = yv[k] * (g[k] - dot);
                        }
                    }
                }
                vec![(a, da)]
            }) as BackFn<F>
        });
        Ok(self.push(shape, value, self.requires_grad(a), back))
    }

    /// Layer normalization over the last axis, then learnable scale/shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let d = *shape.last().ok_or_else(|| Error::Dim("layer_norm on 0-d tensor".into()))?;
        if self.shape(gamma) != [d] || self.shape(beta) != [d] {
            return Err(Error::shape_mismatch("layer_norm scale/shift", self.shape(gamma), &[d]));
        }
        let rows = numel(&shape) / d;
        let feps = F::from_f64(eps);
        let xv = self.value(x);
        let gv = self.value(gamma).to_vec();
        let bv = self.value(beta).to_vec();
        let mut value = vec![F::zero(); xv.len()];
        let mut xhat = vec![F::zero(); xv.len()];
        let mut inv_std = vec![F::zero(); rows];
        let nd = F::from_f64(d as f64);
        for r in 0..rows {
            let row = &xv[r * d..(r + 1) * d];
            let mut mu = F::zero();
            for &v in row {
                mu += v;
            }
            mu = mu / nd;
            let mut var = F::zero();
            for &v in row {
                var += (v - mu) * (v - mu);
            }
            var = var / nd;
            let is = F::one() / (var + feps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let h = (row[j] - mu) * is;
                xhat[r * d + j] = h;
                value[r * d + j] = gv[j] * h + bv[j];
            }
        }
        let rg = self.wants_grad(&[x, gamma, beta]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                let mut dx = vec![F::zero(); g.len()];
                let mut dgamma = vec![F::zero(); d];
                let mut dbeta = vec![F::zero(); d];
                for r in 0..rows {
                    let base = r * d;
                    let mut m1 = F::zero(); // mean of gamma*g
                    let mut m2 = F::zero(); // mean of gamma*g*xhat
                    for j in 0..d {
                        let gg = gv[j] * g[base + j];
                        m1 += gg;
                        m2 += gg * xhat[base + j];
                        dgamma[j] += g[base + j] * xhat[base + j];
                        dbeta[j] += g[base + j];
                    }
                    m1 = m1 / nd;
                    m2 = m2 / nd;
                    for j in 0..d {
                        let gg = gv[j] * g[base + j];
                        dx[base + j] = (gg - m1 - xhat[base + j] * m2) * inv_std[r];
                    }
                }
                vec![(x, dx), (gamma, dgamma), (beta, dbeta)]
            }) as BackFn<F>
        });
        Ok(self.push(
            shape,
            value,
            self.requires_grad(x) || self.requires_grad(gamma) || self.requires_grad(beta),
            back,
        ))
    }

    /// Inverted dropout: zero with probability `p`, survivors scaled by
    /// 1/(1-p). Exact identity when the tape is not in training mode.
    pub fn dropout(&mut self, a: Var, p: f64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout rate {p} outside [0, 1)")));
        }
        if !self.training || p == 0.0 {
            return Ok(a);
        }
        let keep_scale = F::from_f64(1.0 / (1.0 - p));
        let n = self.value(a).len();
        let mask: Vec<F> = (0..n)
            .map(|_| {
                if self.rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep_scale
                }
            })
            .collect();
        let value: Vec<F> = self
            .value(a)
            .iter()
            .zip(&mask)
            .map(|(&x, &m)| x * m)
            .collect();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                vec![(a, g.iter().zip(&mask).map(|(&g, &m)| g * m).collect())]
            }) as BackFn<F>
        });
        Ok(self.push(self.shape(a).to_vec(), value, self.requires_grad(a), back))
    }

    /// Matrix product; rank ≥ 2, equal leading (batch) dims.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let ashape = self.shape(a).to_vec();
        let bshape = self.shape(b).to_vec();
        if ashape.len() < 2 || ashape.len() != bshape.len() {
            return Err(Error::shape_mismatch("matmul rank", &ashape, &bshape));
        }
        let r = ashape.len();
        if ashape[..r - 2] != bshape[..r - 2] || ashape[r - 1] != bshape[r - 2] {
            return Err(Error::shape_mismatch("matmul", &ashape, &bshape));
        }
        let batch: usize = ashape[..r - 2].iter().product();
        let (m, k, n) = (ashape[r - 2], ashape[r - 1], bshape[r - 1]);
        let av = self.value(a);
        let bv = self.value(b);
        let mut value = vec![F::zero(); batch * m * n];
        for t in 0..batch {
            mm_nn(
                &av[t * m * k..(t + 1) * m * k],
                &bv[t * k * n..(t + 1) * k * n],
                m,
                k,
                n,
                &mut value[t * m * n..(t + 1) * m * n],
            );
        }
        let mut oshape = ashape[..r - 2].to_vec();
        oshape.push(m);
        oshape.push(n);
        let rg = self.wants_grad(&[a, b]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let av = av.to_vec();
            let bv = bv.to_vec();
            Box::new(move |g: &[F]| {
                let mut da = vec![F::zero(); av.len()];
                let mut db = vec![F::zero(); bv.len()];
                for t in 0..batch {
                    let gt = &g[t * m * n..(t + 1) * m * n];
                    mm_nt(
                        gt,
                        &bv[t * k * n..(t + 1) * k * n],
                        m,
                        n,
                        k,
                        &mut da[t * m * k..(t + 1) * m * k],
                    );
                    mm_tn(
                        &av[t * m * k..(t + 1) * m * k],
                        gt,
                        m,
                        k,
                        n,
                        &mut db[t * k * n..(t + 1) * k * n],
                    );
                }
                vec![(a, da), (b, db)]
            }) as BackFn<F>
        });
        Ok(self.push(oshape, value, self.requires_grad(a) || self.requires_grad(b), back))
    }

    /// Axis permutation; a pure data rearrangement.
    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let r = shape.len();
        let mut seen = vec![false; r];
        if axes.len() != r || axes.iter().any(|&ax| ax >= r || std::mem::replace(&mut seen[ax], true)) {
            return Err(Error::Dim(format!("invalid permutation {axes:?} for shape {shape:?}")));
        }
        let oshape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
        let value = permute_data(self.value(a), &shape, axes);
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let mut inv = vec![0usize; r];
            for (i, &ax) in axes.iter().enumerate() {
                inv[ax] = i;
            }
            let oshape = oshape.clone();
            Box::new(move |g: &[F]| vec![(a, permute_data(g, &oshape, &inv))]) as BackFn<F>
        });
        Ok(self.push(oshape, value, self.requires_grad(a), back))
    }

    pub fn reshape(&mut self, a: Var, new_shape: &[usize]) -> Result<Var> {
        if numel(new_shape) != self.value(a).len() {
            return Err(Error::shape_mismatch("reshape", self.shape(a), new_shape));
        }
        let value = self.value(a).to_vec();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> =
            rg.then(|| Box::new(move |g: &[F]| vec![(a, g.to_vec())]) as BackFn<F>);
        Ok(self.push(new_shape.to_vec(), value, self.requires_grad(a), back))
    }

    /// Contiguous slice `[start, start+len)` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(Error::Dim(format!(
                "narrow axis {axis} range {start}..{} out of shape {shape:?}",
                start + len
            )));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let outer: usize = shape[..axis].iter().product();
        let d = shape[axis];
        let xv = self.value(a);
        let mut value = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let base = (o * d + start) * inner;
            value.extend_from_slice(&xv[base..base + len * inner]);
        }
        let mut oshape = shape.clone();
        oshape[axis] = len;
        let total = xv.len();
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                let mut da = vec![F::zero(); total];
                for o in 0..outer {
                    let dst = (o * d + start) * inner;
                    let src = o * len * inner;
                    da[dst..dst + len * inner].copy_from_slice(&g[src..src + len * inner]);
                }
                vec![(a, da)]
            }) as BackFn<F>
        });
        Ok(self.push(oshape, value, self.requires_grad(a), back))
    }

    /// Concatenate along `axis`; all other extents must agree.
    pub fn concat(&mut self, axis: usize, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::Dim("concat of zero tensors".into()))?;
        let base_shape = self.shape(first).to_vec();
        if axis >= base_shape.len() {
            return Err(Error::Dim(format!("concat axis {axis} out of range")));
        }
        let mut d_total = 0;
        for &p in parts {
            let s = self.shape(p);
            if s.len() != base_shape.len()
                || s.iter()
                    .zip(&base_shape)
                    .enumerate()
                    .any(|(i, (&x, &y))| i != axis && x != y)
            {
                return Err(Error::shape_mismatch("concat", s, &base_shape));
            }
            d_total += s[axis];
        }
        let inner: usize = base_shape[axis + 1..].iter().product();
        let outer: usize = base_shape[..axis].iter().product();
        let mut oshape = base_shape.clone();
        oshape[axis] = d_total;
        let mut value = vec![F::zero(); outer * d_total * inner];
        let mut offset = 0;
        let mut spans = Vec::with_capacity(parts.len());
        for &p in parts {
            let dp = self.shape(p)[axis];
            let pv = self.value(p);
            for o in 0..outer {
                let dst = (o * d_total + offset) * inner;
                let src = o * dp * inner;
                value[dst..dst + dp * inner].copy_from_slice(&pv[src..src + dp * inner]);
            }
            spans.push((p, offset, dp));
            offset += dp;
        }
        let rg = self.wants_grad(parts);
        let any_rg = parts.iter().any(|&p| self.requires_grad(p));
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                spans
                    .iter()
                    .map(|&(p, off, dp)| {
                        let mut dg = vec![F::zero(); outer * dp * inner];
                        for o in 0..outer {
                            let src = (o * d_total + off) * inner;
                            let dst = o * dp * inner;
                            dg[dst..dst + dp * inner].copy_from_slice(&g[src..src + dp * inner]);
                        }
                        (p, dg)
                    })
                    .collect()
            }) as BackFn<F>
        });
        Ok(self.push(oshape, value, any_rg, back))
    }

    /// Split B×C×T into overlapping chunks B×C×S×L (hop `hop`, zero-padded
    /// tail). `unchunk(chunk(x))` restores `x` exactly on the first T samples.
    pub fn chunk_overlap(&mut self, a: Var, chunk_len: usize, hop: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [b, c, t] = shape[..] else {
            return Err(Error::Dim(format!("chunk_overlap expects B×C×T, got {shape:?}")));
        };
        if hop == 0 || hop > chunk_len {
            return Err(Error::Config(format!("chunk hop {hop} invalid for length {chunk_len}")));
        }
        let s = if t <= chunk_len { 1 } else { (t - chunk_len).div_ceil(hop) + 1 };
        let xv = self.value(a);
        let mut value = vec![F::zero(); b * c * s * chunk_len];
        for bi in 0..b {
            for ci in 0..c {
                let row = &xv[(bi * c + ci) * t..(bi * c + ci + 1) * t];
                for si in 0..s {
                    let src0 = si * hop;
                    let dst = ((bi * c + ci) * s + si) * chunk_len;
                    let take = chunk_len.min(t.saturating_sub(src0));
                    value[dst..dst + take].copy_from_slice(&row[src0..src0 + take]);
                }
            }
        }
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            Box::new(move |g: &[F]| {
                let mut da = vec![F::zero(); b * c * t];
                for bi in 0..b {
                    for ci in 0..c {
                        for si in 0..s {
                            let src = ((bi * c + ci) * s + si) * chunk_len;
                            let dst0 = si * hop;
                            let take = chunk_len.min(t.saturating_sub(dst0));
                            for l in 0..take {
                                da[(bi * c + ci) * t + dst0 + l] += g[src + l];
                            }
                        }
                    }
                }
                vec![(a, da)]
            }) as BackFn<F>
        });
        Ok(self.push(vec![b, c, s, chunk_len], value, self.requires_grad(a), back))
    }

    /// Inverse of [`Tape::chunk_overlap`]: overlap-add with per-sample
    /// averaging over the covering chunks, truncated to `out_len`.
    pub fn overlap_add_mean(&mut self, a: Var, hop: usize, out_len: usize) -> Result<Var> {
        let shape = self.shape(a).to_vec();
        let [b, c, s, l] = shape[..] else {
            return Err(Error::Dim(format!("overlap_add_mean expects B×C×S×L, got {shape:?}")));
        };
        let padded = (s - 1) * hop + l;
        if out_len > padded {
            return Err(Error::Dim(format!("out_len {out_len} exceeds padded extent {padded}")));
        }
        let mut count = vec![0usize; padded];
        for si in 0..s {
            for li in 0..l {
                count[si * hop + li] += 1;
            }
        }
        let inv_count: Vec<F> = count
            .iter()
            .map(|&k| F::from_f64(1.0 / k as f64))
            .collect();
        let xv = self.value(a);
        let mut value = vec![F::zero(); b * c * out_len];
        for bi in 0..b {
            for ci in 0..c {
                let out = &mut value[(bi * c + ci) * out_len..(bi * c + ci + 1) * out_len];
                for si in 0..s {
                    let src = ((bi * c + ci) * s + si) * l;
                    for li in 0..l {
                        let t = si * hop + li;
                        if t < out_len {
                            out[t] += xv[src + li] * inv_count[t];
                        }
                    }
                }
            }
        }
        let rg = self.wants_grad(&[a]);
        let back: Option<BackFn<F>> = rg.then(|| {
            let inv_count = inv_count.clone();
            Box::new(move |g: &[F]| {
                let mut da = vec![F::zero(); b * c * s * l];
                for bi in 0..b {
                    for ci in 0..c {
                        let grow = &g[(bi * c + ci) * out_len..(bi * c + ci + 1) * out_len];
                        for si in 0..s {
                            let dst = ((bi * c + ci) * s + si) * l;
                            for li in 0..l {
                                let t = si * hop + li;
                                if t < out_len {
                                    da[dst + li] = grow[t] * inv_count[t];
                                }
                            }
                        }
                    }
                }
                vec![(a, da)]
            }) as BackFn<F>
        });
        Ok(self.push(vec![b, c, out_len], value, self.requires_grad(a), back))
    }

    /// `x·wᵀ (+ b)` for `x: [..., in]`, `w: [out, in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xshape = self.shape(x).to_vec();
        let wshape = self.shape(w).to_vec();
        if wshape.len() != 2 || *xshape.last().unwrap_or(&0) != wshape[1] {
            return Err(Error::shape_mismatch("linear", &xshape, &wshape));
        }
        let d_in = wshape[1];
        let d_out = wshape[0];
        let rows = numel(&xshape) / d_in;
        let x2 = self.reshape(x, &[rows, d_in])?;
        let wt = self.permute(w, &[1, 0])?;
        let y = self.matmul(x2, wt)?;
        let mut oshape = xshape;
        *oshape.last_mut().unwrap() = d_out;
        let y = self.reshape(y, &oshape)?;
        match b {
            Some(b) => self.add_broadcast(y, b),
            None => Ok(y),
        }
    }
}

fn permute_data<F: Scalar>(data: &[F], shape: &[usize], axes: &[usize]) -> Vec<F> {
    let oshape: Vec<usize> = axes.iter().map(|&ax| shape[ax]).collect();
    let in_strides = strides(shape);
    let perm_strides: Vec<usize> = axes.iter().map(|&ax| in_strides[ax]).collect();
    let n = numel(shape);
    let mut out = vec![data.first().copied().unwrap_or_else(F::zero); n];
    let mut idx = vec![0usize; oshape.len()];
    let mut src = 0usize;
    for item in out.iter_mut() {
        *item = data[src];
        for ax in (0..oshape.len()).rev() {
            idx[ax] += 1;
            src += perm_strides[ax];
            if idx[ax] < oshape[ax] {
                break;
            }
            src -= perm_strides[ax] * oshape[ax];
            idx[ax] = 0;
        }
    }
    out
}
