//! Dual-path GRU separation backbone, transposed-conv decoder, and mask
//! estimation from the raw decoder estimate.

use rand_chacha::ChaCha8Rng;

use crate::dsp::{apply_mask, istft, stft, BinaryMask, StftParams, Waveform};
use crate::error::{Error, Result};
use crate::kernel::{gru_cell, GruVars, Scalar, Tape, Var};
use crate::params::{Array, Bound, ParamSet, ParamId};

/// Division guard for silent bins in the ratio mask.
pub const MASK_EPS: f64 = 1e-8;
/// Soft-to-binary threshold.
pub const MASK_THRESHOLD: f64 = 0.5;
const NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeparatorConfig {
    pub blocks: usize,
    pub hidden: usize,
    pub proj: usize,
    pub chunk_len: usize,
    pub dropout: f64,
}

impl SeparatorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.blocks == 0 {
            return Err(Error::Config("separator needs at least one block".into()));
        }
        if self.proj > self.hidden {
            return Err(Error::Config(format!(
                "projection {} exceeds hidden size {}",
                self.proj, self.hidden
            )));
        }
        if self.chunk_len < 2 || self.chunk_len % 2 != 0 {
            return Err(Error::Config(format!(
                "chunk length {} must be even and at least 2 for 50% overlap",
                self.chunk_len
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }
}

/// Registry handles for one GRU. Weights are fan-in uniform, biases zero.
pub struct GruParams {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub d_h: usize,
}

impl GruParams {
    pub fn new(ps: &mut ParamSet, prefix: &str, d_in: usize, d_h: usize, rng: &mut ChaCha8Rng) -> Self {
        GruParams {
            w_ih: ps.add(format!("{prefix}.w_ih"), Array::uniform(&[3 * d_h, d_in], d_in, rng)),
            w_hh: ps.add(format!("{prefix}.w_hh"), Array::uniform(&[3 * d_h, d_h], d_h, rng)),
            b_ih: ps.add(format!("{prefix}.b_ih"), Array::zeros(&[3 * d_h])),
            b_hh: ps.add(format!("{prefix}.b_hh"), Array::zeros(&[3 * d_h])),
            d_h,
        }
    }

    pub fn bind(&self, bound: &Bound) -> GruVars {
        GruVars {
            w_ih: bound.var(self.w_ih),
            w_hh: bound.var(self.w_hh),
            b_ih: bound.var(self.b_ih),
            b_hh: bound.var(self.b_hh),
        }
    }
}

/// Unrolled GRU over `x: R×S×D_in` from a zero initial state → `R×S×d_h`.
pub fn gru_sequence<F: Scalar>(
    tape: &mut Tape<F>,
    x: Var,
    p: &GruVars,
    d_h: usize,
) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let [r, s, d_in] = shape[..] else {
        return Err(Error::Dim(format!("gru_sequence expects R×S×D, got {shape:?}")));
    };
    let mut h = tape.leaf(&[r, d_h], vec![F::zero(); r * d_h]);
    let mut steps = Vec::with_capacity(s);
    for t in 0..s {
        let x_t = tape.narrow(x, 1, t, 1)?;
        let x_t = tape.reshape(x_t, &[r, d_in])?;
        h = gru_cell(tape, x_t, h, p)?;
        steps.push(tape.reshape(h, &[r, 1, d_h])?);
    }
    tape.concat(1, &steps)
}

/// One direction of a dual-path block: GRU → linear back to C → dropout →
/// layer norm → residual.
struct Path {
    gru: GruParams,
    lin: ParamId,
    gamma: ParamId,
    beta: ParamId,
}

impl Path {
    fn new(ps: &mut ParamSet, prefix: &str, c: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Path {
            gru: GruParams::new(ps, &format!("{prefix}.gru"), c, hidden, rng),
            lin: ps.add(format!("{prefix}.lin"), Array::uniform(&[c, hidden], hidden, rng)),
            gamma: ps.add(format!("{prefix}.gamma"), Array::full(&[c], 1.0)),
            beta: ps.add(format!("{prefix}.beta"), Array::zeros(&[c])),
        }
    }

    /// `x: R×S×C` → `R×S×C`.
    fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let gru = self.gru.bind(bound);
        let g = gru_sequence(tape, x, &gru, self.gru.d_h)?;
        let y = tape.linear(g, bound.var(self.lin), None)?;
        let y = tape.dropout(y, dropout)?;
        let y = tape.layer_norm(y, bound.var(self.gamma), bound.var(self.beta), NORM_EPS)?;
        tape.add(x, y)
    }
}

/// Intra-chunk then inter-chunk processing, each residually wrapped.
pub struct DualPathBlock {
    intra: Path,
    inter: Path,
}

impl DualPathBlock {
    pub fn new(ps: &mut ParamSet, prefix: &str, c: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        DualPathBlock {
            intra: Path::new(ps, &format!("{prefix}.intra"), c, hidden, rng),
            inter: Path::new(ps, &format!("{prefix}.inter"), c, hidden, rng),
        }
    }

    /// `x: B×C×S×L` → same shape.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        x: Var,
        dropout: f64,
    ) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let [b, c, s, l] = shape[..] else {
            return Err(Error::Dim(format!("dual-path block expects B×C×S×L, got {shape:?}")));
        };
        // Local modeling along L.
        let xp = tape.permute(x, &[0, 2, 3, 1])?; // B,S,L,C
        let rows = tape.reshape(xp, &[b * s, l, c])?;
        let intra = self.intra.forward(tape, bound, rows, dropout)?;
        let intra = tape.reshape(intra, &[b, s, l, c])?;
        // Global modeling along S.
        let yp = tape.permute(intra, &[0, 2, 1, 3])?; // B,L,S,C
        let rows = tape.reshape(yp, &[b * l, s, c])?;
        let inter = self.inter.forward(tape, bound, rows, dropout)?;
        let inter = tape.reshape(inter, &[b, l, s, c])?;
        tape.permute(inter, &[0, 3, 2, 1]) // B,C,S,L
    }
}

/// The full backbone: chunk → blocks → unchunk → 1×1 projection → ReLU.
pub struct Separator {
    pub cfg: SeparatorConfig,
    pub blocks: Vec<DualPathBlock>,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

impl Separator {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        channels: usize,
        cfg: SeparatorConfig,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        cfg.validate()?;
        let blocks = (0..cfg.blocks)
            .map(|i| DualPathBlock::new(ps, &format!("{prefix}.block{i}"), channels, cfg.hidden, rng))
            .collect();
        let proj_w = ps.add(
            format!("{prefix}.proj"),
            Array::uniform(&[cfg.proj, channels], channels, rng),
        );
        // Positive bias keeps the terminal ReLU units alive: a bias-free
        // projection can be rotated fully negative early in training, after
        // which no gradient reaches the trunk again.
        let proj_b = ps.add(format!("{prefix}.proj_b"), Array::full(&[cfg.proj], 0.5));
        Ok(Separator { cfg, blocks, proj_w, proj_b })
    }

    /// Fused audio `B×C×T̂` → nonnegative features `B×proj×T̂`.
    pub fn forward<F: Scalar>(&self, tape: &mut Tape<F>, bound: &Bound, fused: Var) -> Result<Var> {
        let shape = tape.shape(fused).to_vec();
        let [b, c, t_hat] = shape[..] else {
            return Err(Error::Dim(format!("separator expects B×C×T̂, got {shape:?}")));
        };
        let hop = self.cfg.chunk_len / 2;
        let mut x = tape.chunk_overlap(fused, self.cfg.chunk_len, hop)?;
        for block in &self.blocks {
            x = block.forward(tape, bound, x, self.cfg.dropout)?;
        }
        let merged = tape.overlap_add_mean(x, hop, t_hat)?;
        let tc = tape.permute(merged, &[0, 2, 1])?; // B,T̂,C
        let projected = tape.linear(tc, bound.var(self.proj_w), Some(bound.var(self.proj_b)))?;
        let projected = tape.relu(projected);
        let out = tape.permute(projected, &[0, 2, 1])?;
        debug_assert_eq!(tape.shape(out), &[b, self.cfg.proj, t_hat]);
        let _ = (b, c);
        Ok(out)
    }
}

/// Transposed-convolution decoder inverting the encoder's stride plan.
pub struct Decoder {
    pub w: ParamId,
    pub kernel: usize,
    pub stride: usize,
}

impl Decoder {
    pub fn new(
        ps: &mut ParamSet,
        prefix: &str,
        proj: usize,
        kernel: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Decoder {
            w: ps.add(
                format!("{prefix}.w"),
                Array::uniform(&[proj, 1, kernel], kernel, rng),
            ),
            kernel,
            stride,
        }
    }

    /// `B×proj×T̂` → waveform batch `B×out_len` (trimmed or zero-padded).
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        feats: Var,
        out_len: usize,
    ) -> Result<Var> {
        let y = tape.conv_transpose1d(feats, bound.var(self.w), self.stride)?;
        let shape = tape.shape(y).to_vec(); // B×1×T'
        let (b, t_full) = (shape[0], shape[2]);
        let y = if t_full >= out_len {
            tape.narrow(y, 2, 0, out_len)?
        } else {
            let pad = tape.leaf(&[b, 1, out_len - t_full], vec![F::zero(); b * (out_len - t_full)]);
            tape.concat(2, &[y, pad])?
        };
        tape.reshape(y, &[b, out_len])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskMode {
    Soft,
    Binary,
    /// Skip masking entirely and emit the raw decoder output.
    Off,
}

impl std::str::FromStr for MaskMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft" => Ok(MaskMode::Soft),
            "binary" => Ok(MaskMode::Binary),
            "off" => Ok(MaskMode::Off),
            other => Err(Error::Usage(format!("unknown mask mode '{other}'"))),
        }
    }
}

/// Soft ratio mask and its thresholded binary form, frames × bins.
#[derive(Debug, Clone)]
pub struct EstimatedMask {
    pub frames: usize,
    pub bins: usize,
    pub soft: Vec<f64>,
    pub binary: BinaryMask,
}

/// Ratio of estimate to noisy magnitude per bin, clipped to [0,1];
/// binary = soft > 0.5.
pub fn estimate_mask(s_raw: &Waveform, noisy: &Waveform, p: &StftParams) -> Result<EstimatedMask> {
    if s_raw.len() != noisy.len() {
        return Err(Error::shape_mismatch(
            "estimate_mask lengths",
            &[s_raw.len()],
            &[noisy.len()],
        ));
    }
    let s = stft(s_raw, p)?;
    let y = stft(noisy, p)?;
    let soft: Vec<f64> = s
        .values
        .iter()
        .zip(&y.values)
        .map(|(sv, yv)| (sv.norm() / yv.norm().max(MASK_EPS)).clamp(0.0, 1.0))
        .collect();
    let binary = BinaryMask {
        frames: s.frames,
        bins: s.bins,
        values: soft.iter().map(|&v| u8::from(v > MASK_THRESHOLD)).collect(),
    };
    Ok(EstimatedMask {
        frames: s.frames,
        bins: s.bins,
        soft,
        binary,
    })
}

/// Mask the noisy magnitudes (noisy phase untouched) and resynthesize,
/// matching the noisy signal's length.
pub fn reconstruct(
    noisy: &Waveform,
    m: &EstimatedMask,
    p: &StftParams,
    mode: MaskMode,
) -> Result<Waveform> {
    let mask = match mode {
        MaskMode::Soft => m.soft.clone(),
        MaskMode::Binary => m.binary.as_soft(),
        MaskMode::Off => {
            return Err(Error::Usage(
                "reconstruct called with masking disabled; use the raw estimate".into(),
            ))
        }
    };
    let y = stft(noisy, p)?;
    let masked = apply_mask(&y, &mask)?;
    let mut out = istft(&masked)?;
    out.samples.resize(noisy.len(), 0.0);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{ibm, si_sdr};
    use rand::{Rng, SeedableRng};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn rand_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    fn tiny_cfg() -> SeparatorConfig {
        SeparatorConfig { blocks: 2, hidden: 6, proj: 4, chunk_len: 8, dropout: 0.0 }
    }

    #[test]
    fn config_validation() {
        assert!(tiny_cfg().validate().is_ok());
        assert!(SeparatorConfig { blocks: 0, ..tiny_cfg() }.validate().is_err());
        assert!(SeparatorConfig { proj: 7, ..tiny_cfg() }.validate().is_err());
        assert!(SeparatorConfig { chunk_len: 7, ..tiny_cfg() }.validate().is_err());
        assert!(SeparatorConfig { dropout: 1.0, ..tiny_cfg() }.validate().is_err());
    }

    #[test]
    fn zero_weight_block_is_identity() {
        let mut ps = ParamSet::new();
        let block = DualPathBlock::new(&mut ps, "b", 5, 4, &mut rng(1));
        for path in [&block.intra, &block.inter] {
            for id in [path.gru.w_ih, path.gru.w_hh, path.lin] {
                let a = ps.get_mut(id);
                a.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let x_data = rand_vec(1 * 5 * 3 * 4, &mut rng(2));
        let x = tape.leaf(&[1, 5, 3, 4], x_data.clone());
        let y = block.forward(&mut tape, &bound, x, 0.0).unwrap();
        for (a, b) in tape.value(y).iter().zip(&x_data) {
            assert!((a - b).abs() <= 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut ps = ParamSet::new();
        let block = DualPathBlock::new(&mut ps, "b", 6, 5, &mut rng(3));
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let x = tape.leaf(&[2, 6, 4, 8], rand_vec(2 * 6 * 4 * 8, &mut rng(4)));
        let y = block.forward(&mut tape, &bound, x, 0.0).unwrap();
        assert_eq!(tape.shape(y), &[2, 6, 4, 8]);
    }

    #[test]
    fn block_gradient_check() {
        let mut ps = ParamSet::new();
        let block = DualPathBlock::new(&mut ps, "b", 3, 2, &mut rng(5));
        let x_data = rand_vec(1 * 3 * 2 * 4, &mut rng(6));

        let eval = |ps: &ParamSet, xd: &[f64]| -> f64 {
            let mut tape: Tape<f64> = Tape::new(0);
            let bound = ps.bind(&mut tape);
            let x = tape.leaf(&[1, 3, 2, 4], xd.to_vec());
            let y = block.forward(&mut tape, &bound, x, 0.0).unwrap();
            let w: Vec<f64> = (0..24).map(|i| ((i as f64) * 0.31).cos()).collect();
            let wv = tape.leaf(&[1, 3, 2, 4], w);
            let p = tape.mul(y, wv).unwrap();
            let s = tape.sum_all(p);
            tape.scalar_value(s)
        };

        let mut tape: Tape<f64> = Tape::new(0);
        let bound = ps.bind(&mut tape);
        let x = tape.param(&[1, 3, 2, 4], x_data.clone());
        let y = block.forward(&mut tape, &bound, x, 0.0).unwrap();
        let w: Vec<f64> = (0..24).map(|i| ((i as f64) * 0.31).cos()).collect();
        let wv = tape.leaf(&[1, 3, 2, 4], w);
        let p = tape.mul(y, wv).unwrap();
        let s = tape.sum_all(p);
        tape.backward(s).unwrap();

        let eps = 1e-5;
        let mut max_rel: f64 = 0.0;
        let gx = tape.grad_f64(x).unwrap();
        for j in 0..x_data.len() {
            let mut hi = x_data.clone();
            hi[j] += eps;
            let mut lo = x_data.clone();
            lo[j] -= eps;
            let num = (eval(&ps, &hi) - eval(&ps, &lo)) / (2.0 * eps);
            let scale = gx[j].abs().max(num.abs());
            if scale > 1e-7 {
                max_rel = max_rel.max((gx[j] - num).abs() / scale);
            }
        }
        // Weight gradients for one GRU and one norm.
        for id in [block.intra.gru.w_ih, block.inter.lin, block.intra.gamma, block.inter.gru.b_hh] {
            let g = tape.grad_f64(bound.var(id)).unwrap();
            for j in 0..g.len() {
                let mut hi = ps.clone();
                hi.get_mut(id).data[j] += eps;
                let mut lo = ps.clone();
                lo.get_mut(id).data[j] -= eps;
                let num = (eval(&hi, &x_data) - eval(&lo, &x_data)) / (2.0 * eps);
                let scale = g[j].abs().max(num.abs());
                if scale > 1e-7 {
                    max_rel = max_rel.max((g[j] - num).abs() / scale);
                }
            }
        }
        assert!(max_rel <= 1e-4, "block fd error {max_rel}");
    }

    #[test]
    fn separate_shape_and_nonnegativity() {
        let mut ps = ParamSet::new();
        let sep = Separator::new(&mut ps, "sep", 8, tiny_cfg(), &mut rng(7)).unwrap();
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let x = tape.leaf(&[2, 8, 21], rand_vec(2 * 8 * 21, &mut rng(8)));
        let y = sep.forward(&mut tape, &bound, x).unwrap();
        assert_eq!(tape.shape(y), &[2, 4, 21]);
        assert!(tape.value(y).iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn separate_zero_input_is_time_constant() {
        let mut ps = ParamSet::new();
        let sep = Separator::new(&mut ps, "sep", 8, tiny_cfg(), &mut rng(9)).unwrap();
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let x = tape.leaf(&[1, 8, 20], vec![0.0; 8 * 20]);
        let y = sep.forward(&mut tape, &bound, x).unwrap();
        let v = tape.value(y);
        assert!(v.iter().all(|&x| x.is_finite() && x >= 0.0));
        for c in 0..4 {
            let row = &v[c * 20..(c + 1) * 20];
            assert!(row.iter().all(|&x| (x - row[0]).abs() < 1e-9));
        }
    }

    #[test]
    fn decode_restores_length() {
        let mut ps = ParamSet::new();
        let dec = Decoder::new(&mut ps, "dec", 4, 16, 8, &mut rng(10));
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let t = 16000;
        let t_hat = (t - 16) / 8 + 1;
        let x = tape.leaf(&[1, 4, t_hat], rand_vec(4 * t_hat, &mut rng(11)));
        let y = dec.forward(&mut tape, &bound, x, t).unwrap();
        assert_eq!(tape.shape(y), &[1, t]);
    }

    #[test]
    fn decode_zero_features_gives_silence() {
        let mut ps = ParamSet::new();
        let dec = Decoder::new(&mut ps, "dec", 4, 16, 8, &mut rng(12));
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = ps.bind_frozen(&mut tape);
        let x = tape.leaf(&[1, 4, 30], vec![0.0; 4 * 30]);
        let y = dec.forward(&mut tape, &bound, x, 248).unwrap();
        assert!(tape.value(y).iter().all(|&v| v == 0.0));
    }

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16000).unwrap()
    }

    fn tone_plus_noise(seed: u64, noise_amp: f64) -> (Waveform, Waveform, Waveform) {
        let mut r = rng(seed);
        let n = 4096;
        let clean: Vec<f64> = (0..n)
            .map(|i| 0.5 * (std::f64::consts::TAU * 700.0 * i as f64 / 16000.0).sin())
            .collect();
        let noise: Vec<f64> = (0..n).map(|_| r.gen_range(-noise_amp..noise_amp)).collect();
        let mixed: Vec<f64> = clean.iter().zip(&noise).map(|(c, v)| c + v).collect();
        (wave(clean), wave(noise), wave(mixed))
    }

    #[test]
    fn mask_of_noisy_against_itself_is_all_ones() {
        let (_, _, mixed) = tone_plus_noise(13, 0.3);
        let m = estimate_mask(&mixed, &mixed, &StftParams::default()).unwrap();
        assert!(m.soft.iter().all(|&v| v == 1.0));
        assert!(m.binary.values.iter().all(|&b| b == 1));
    }

    #[test]
    fn mask_of_silence_is_all_zeros() {
        let (_, _, mixed) = tone_plus_noise(14, 0.3);
        let silent = wave(vec![0.0; mixed.len()]);
        let m = estimate_mask(&silent, &mixed, &StftParams::default()).unwrap();
        assert!(m.soft.iter().all(|&v| v == 0.0));
        assert!(m.binary.values.iter().all(|&b| b == 0));
    }

    #[test]
    fn mask_length_mismatch_rejected() {
        let (_, _, mixed) = tone_plus_noise(15, 0.3);
        let short = wave(mixed.samples[..1000].to_vec());
        assert!(estimate_mask(&short, &mixed, &StftParams::default()).is_err());
    }

    #[test]
    fn clean_estimate_mask_agrees_with_ibm() {
        let p = StftParams::default();
        let (clean, noise, mixed) = tone_plus_noise(16, 0.2);
        let est = estimate_mask(&clean, &mixed, &p).unwrap();
        let oracle = ibm(&stft(&clean, &p).unwrap(), &stft(&noise, &p).unwrap()).unwrap();
        let agree = est
            .binary
            .values
            .iter()
            .zip(&oracle.values)
            .filter(|(a, b)| a == b)
            .count();
        let frac = agree as f64 / oracle.values.len() as f64;
        assert!(frac >= 0.99, "agreement {frac}");
    }

    #[test]
    fn all_ones_reconstruct_matches_noisy_interior() {
        let p = StftParams::default();
        let (_, _, mixed) = tone_plus_noise(17, 0.3);
        let m = estimate_mask(&mixed, &mixed, &p).unwrap();
        let out = reconstruct(&mixed, &m, &p, MaskMode::Soft).unwrap();
        for i in p.window_len..mixed.len() - p.window_len {
            assert!((out.samples[i] - mixed.samples[i]).abs() <= 1e-10);
        }
    }

    #[test]
    fn binary_and_soft_differ_only_on_fractional_bins() {
        let p = StftParams::default();
        let (clean, _, mixed) = tone_plus_noise(18, 0.4);
        let m = estimate_mask(&clean, &mixed, &p).unwrap();
        for (&s, &b) in m.soft.iter().zip(&m.binary.values) {
            if s == 0.0 || s == 1.0 {
                assert_eq!(b as f64, s);
            }
        }
        assert!(matches!(
            reconstruct(&mixed, &m, &p, MaskMode::Off),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn oracle_ibm_improves_si_sdr_at_0db() {
        let p = StftParams::default();
        // Equal-energy tone and noise (about 0 dB).
        let mut r = rng(19);
        let n = 8192;
        let clean: Vec<f64> = (0..n)
            .map(|i| {
                0.4 * (std::f64::consts::TAU * 500.0 * i as f64 / 16000.0).sin()
                    + 0.2 * (std::f64::consts::TAU * 900.0 * i as f64 / 16000.0).sin()
            })
            .collect();
        let ce: f64 = clean.iter().map(|v| v * v).sum();
        let mut noise: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let ne: f64 = noise.iter().map(|v| v * v).sum();
        let g = (ce / ne).sqrt();
        noise.iter_mut().for_each(|v| *v *= g);
        let mixed: Vec<f64> = clean.iter().zip(&noise).map(|(c, v)| c + v).collect();
        let (clean, noise, mixed) = (wave(clean), wave(noise), wave(mixed));

        let mask = ibm(&stft(&clean, &p).unwrap(), &stft(&noise, &p).unwrap()).unwrap();
        let masked = apply_mask(&stft(&mixed, &p).unwrap(), &mask.as_soft()).unwrap();
        let mut enhanced = istft(&masked).unwrap();
        enhanced.samples.resize(mixed.len(), 0.0);
        let before = si_sdr(&clean, &mixed).unwrap();
        let after = si_sdr(&clean, &enhanced).unwrap();
        assert!(after - before >= 5.0, "gain {} dB", after - before);
    }
}
