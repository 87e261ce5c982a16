//! Cross-attentional fusion: multi-head self-attention over the audio stream
//! with an additive per-key-frame visual bias on the score matrix.

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::{Scalar, Tape, Var};
use crate::params::{Array, Bound, ParamSet, ParamId};

/// Head layout for the fusion block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionConfig {
    pub d_a: usize,
    pub d_v: usize,
    pub heads: usize,
}

impl AttentionConfig {
    pub fn d_h(&self) -> usize {
        self.d_a / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_a == 0 || self.d_v == 0 || self.heads == 0 {
            return Err(Error::Config("attention dims must be positive".into()));
        }
        if self.d_a % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_a {} not divisible by head count {}",
                self.d_a, self.heads
            )));
        }
        Ok(())
    }
}

/// `B×T×d` → `B×h×T×d_h`. Pure permutation of values.
pub fn split_heads<F: Scalar>(tape: &mut Tape<F>, x: Var, heads: usize) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [b, t, d] = shape[..] else {
        return Err(Error::Dim(format!("split_heads expects B×T×d, got {shape:?}")));
    };
    if d % heads != 0 {
        return Err(Error::Dim(format!("feature dim {d} not divisible by {heads} heads")));
    }
    let x = tape.reshape(x, &[b, t, heads, d / heads])?;
    tape.permute(x, &[0, 2, 1, 3])
}

/// Inverse of [`split_heads`]: `B×h×T×d_h` → `B×T×(h·d_h)`.
pub fn merge_heads<F: Scalar>(tape: &mut Tape<F>, x: Var) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [b, h, t, d_h] = shape[..] else {
        return Err(Error::Dim(format!("merge_heads expects B×h×T×d_h, got {shape:?}")));
    };
    let x = tape.permute(x, &[0, 2, 1, 3])?;
    tape.reshape(x, &[b, t, h * d_h])
}

/// Biased scores Ŝ = QKᵀ/√d_h + bias, with the `B×h×T` bias broadcast over
/// the query axis. `None` bias skips the addition entirely.
pub fn scores<F: Scalar>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    bias: Option<Var>,
) -> Result<Var> {
    let qs = tape.shape(q).to_vec();
    let [b, h, t, d_h] = qs[..] else {
        return Err(Error::Dim(format!("scores expects B×h×T×d_h, got {qs:?}")));
    };
    if tape.shape(k) != qs.as_slice() {
        return Err(Error::shape_mismatch("attention q/k", &qs, tape.shape(k)));
    }
    let kt = tape.permute(k, &[0, 1, 3, 2])?;
    let raw = tape.matmul(q, kt)?;
    let s = tape.scale(raw, 1.0 / (d_h as f64).sqrt());
    match bias {
        None => Ok(s),
        Some(bias) => {
            if tape.shape(bias) != [b, h, t] {
                return Err(Error::Alignment(format!(
                    "bias shape {:?} does not match scores {:?}",
                    tape.shape(bias),
                    [b, h, t, t]
                )));
            }
            let bias = tape.reshape(bias, &[b, h, 1, t])?;
            tape.add_broadcast(s, bias)
        }
    }
}

/// Softmax over the key axis, then O = A·V with heads merged back to
/// `B×T×d_a`. Returns `(output, attention weights B×h×T×T)`.
pub fn attend<F: Scalar>(
    tape: &mut Tape<F>,
    q: Var,
    k: Var,
    v: Var,
    bias: Option<Var>,
) -> Result<(Var, Var)> {
    let s = scores(tape, q, k, bias)?;
    let a = tape.softmax(s, 3)?;
    let o = tape.matmul(a, v)?;
    let merged = merge_heads(tape, o)?;
    Ok((merged, a))
}

/// Learnable state: Q/K/V projections (d_a×d_a), the visual bias projection
/// (d_v→h, one scalar per key frame per head), and the output projection.
pub struct CrossAttention {
    pub cfg: AttentionConfig,
    pub w_q: ParamId,
    pub w_k: ParamId,
    pub w_v: ParamId,
    pub w_vis: ParamId,
    pub w_out: ParamId,
}

impl CrossAttention {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        cfg: AttentionConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_a;
        let sq = [d, d];
        Ok(CrossAttention {
            cfg,
            w_q: ps.add(format!("{prefix}.w_q"), Array::uniform(&sq, d, rng)),
            w_k: ps.add(format!("{prefix}.w_k"), Array::uniform(&sq, d, rng)),
            w_v: ps.add(format!("{prefix}.w_v"), Array::uniform(&sq, d, rng)),
            w_vis: ps.add(
                format!("{prefix}.w_vis"),
                Array::uniform(&[cfg.heads, cfg.d_v], cfg.d_v, rng),
            ),
            w_out: ps.add(format!("{prefix}.w_out"), Array::uniform(&sq, d, rng)),
        })
    }

    /// Project `X_a: B×T̂×d_a` to per-head Q, K, V (`B×h×T̂×d_h` each).
    pub fn project_qkv<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x_a: Var,
    ) -> Result<(Var, Var, Var)> {
        let shape = tape.shape(x_a).to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.d_a {
            return Err(Error::shape_mismatch(
                "project_qkv input",
                &shape,
                &[0, 0, self.cfg.d_a],
            ));
        }
        let q = tape.linear(x_a, bound.var(self.w_q), None)?;
        let k = tape.linear(x_a, bound.var(self.w_k), None)?;
        let v = tape.linear(x_a, bound.var(self.w_v), None)?;
        Ok((
            split_heads(tape, q, self.cfg.heads)?,
            split_heads(tape, k, self.cfg.heads)?,
            split_heads(tape, v, self.cfg.heads)?,
        ))
    }

    /// Project `X_v: B×T̂×d_v` to the per-key-frame score bias `B×h×T̂`.
    /// `t_hat` is the audio temporal extent the bias must match.
    pub fn project_visual_bias<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x_v: Var,
        t_hat: usize,
    ) -> Result<Var> {
        let shape = tape.shape(x_v).to_vec();
        if shape.len() != 3 || shape[2] != self.cfg.d_v {
            return Err(Error::shape_mismatch(
                "project_visual_bias input",
                &shape,
                &[0, 0, self.cfg.d_v],
            ));
        }
        if shape[1] != t_hat {
            return Err(Error::Alignment(format!(
                "visual stream has {} frames but audio has {t_hat} latent frames; align first",
                shape[1]
            )));
        }
        let bias = tape.linear(x_v, bound.var(self.w_vis), None)?; // B×T̂×h
        tape.permute(bias, &[0, 2, 1])
    }

    /// Full fusion: `X_a: B×T̂×d_a`, `X_v: B×T̂×d_v` → fused `B×d_a×T̂`.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x_a: Var,
        x_v: Var,
    ) -> Result<Var> {
        let t_hat = tape.shape(x_a)[1];
        let (q, k, v) = self.project_qkv(tape, bound, x_a)?;
        let bias = self.project_visual_bias(tape, bound, x_v, t_hat)?;
        let (merged, _) = attend(tape, q, k, v, Some(bias))?;
        let out = tape.linear(merged, bound.var(self.w_out), None)?;
        // Residual around the attention stage: the attention output is a
        // convex combination over frames and carries almost no frame-local
        // signal at init (content-only scores, no positional structure), so
        // without the residual nothing downstream can reconstruct audio.
        let out = tape.add(x_a, out)?;
        tape.permute(out, &[0, 2, 1])
    }
}
