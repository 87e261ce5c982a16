//! Model configuration presets and the assembled enhancement network.

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use sha2::{Digest, Sha256};

use crate::dsp::{StftParams, Waveform};
use crate::encoders::{encoded_len, temporal_align, visual_encode, AudioEncoder, VisualEncoder, VisualStream};
use crate::error::{Error, Result};
use crate::kernel::{Scalar, Tape, Var};
use crate::params::{Array, Bound, ParamId, ParamSet};
use crate::separator::{estimate_mask, reconstruct, Decoder, EstimatedMask, MaskMode, Separator, SeparatorConfig};
use crate::xattn::{AttentionConfig, CrossAttention};

/// Complete architecture description. Serialized as JSON with every field
/// explicit; hashed into checkpoints so weight files can't silently attach
/// to the wrong shape plan.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub sample_rate: u32,
    /// Encoder channel count C (= attention d_a).
    pub audio_channels: usize,
    pub encoder_kernel: usize,
    pub encoder_stride: usize,
    pub d_v: usize,
    pub heads: usize,
    pub visual_frame_size: usize,
    pub visual_front_channels: usize,
    pub visual_stage_channels: Vec<usize>,
    pub fps: f64,
    pub blocks: usize,
    pub hidden: usize,
    pub proj: usize,
    pub chunk_len: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn paper() -> Self {
        ModelConfig {
            sample_rate: 16000,
            audio_channels: 256,
            encoder_kernel: 16,
            encoder_stride: 8,
            d_v: 256,
            heads: 8,
            visual_frame_size: 128,
            visual_front_channels: 32,
            visual_stage_channels: vec![32, 64, 128, 256],
            fps: 25.0,
            blocks: 6,
            hidden: 256,
            proj: 128,
            chunk_len: 64,
            dropout: 0.3,
        }
    }

    pub fn tiny() -> Self {
        ModelConfig {
            sample_rate: 16000,
            audio_channels: 32,
            encoder_kernel: 16,
            encoder_stride: 8,
            d_v: 32,
            heads: 2,
            visual_frame_size: 32,
            visual_front_channels: 8,
            visual_stage_channels: vec![8, 16, 32, 32],
            fps: 25.0,
            blocks: 2,
            hidden: 32,
            proj: 16,
            chunk_len: 32,
            dropout: 0.05,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "paper" => Ok(Self::paper()),
            "tiny" => Ok(Self::tiny()),
            other => Err(Error::Usage(format!("unknown preset '{other}' (expected paper|tiny)"))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate == 0 || self.encoder_kernel == 0 || self.encoder_stride == 0 {
            return Err(Error::Config("sample rate, kernel and stride must be positive".into()));
        }
        if self.encoder_stride > self.encoder_kernel {
            return Err(Error::Config(format!(
                "encoder stride {} exceeds kernel {} (gaps in coverage)",
                self.encoder_stride, self.encoder_kernel
            )));
        }
        if self.fps <= 0.0 {
            return Err(Error::Config(format!("fps {} must be positive", self.fps)));
        }
        if self.visual_stage_channels.len() != 4 {
            return Err(Error::Config("visual trunk needs exactly four stage channel counts".into()));
        }
        self.attention().validate()?;
        self.separator().validate()
    }

    pub fn attention(&self) -> AttentionConfig {
        AttentionConfig {
            d_a: self.audio_channels,
            d_v: self.d_v,
            heads: self.heads,
        }
    }

    pub fn separator(&self) -> SeparatorConfig {
        SeparatorConfig {
            blocks: self.blocks,
            hidden: self.hidden,
            proj: self.proj,
            chunk_len: self.chunk_len,
            dropout: self.dropout,
        }
    }

    /// Latent frame count for `t` audio samples.
    pub fn latent_len(&self, t: usize) -> usize {
        encoded_len(t, self.encoder_kernel, self.encoder_stride)
    }

    /// 64-bit digest of the canonical JSON form.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}

/// Everything the pipeline forwards through, with one shared weight registry.
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ParamSet,
    pub audio_enc: AudioEncoder,
    pub visual_enc: VisualEncoder,
    pub fusion: CrossAttention,
    pub separator: Separator,
    pub decoder: Decoder,
    /// Gain of the global input skip: ŝ_raw = decoder(...) + gain·y. Starts
    /// at 1 so the untrained network reproduces the noisy input; without the
    /// skip the initial output is uncorrelated with the target and the
    /// clipped SI-SDR loss has no gradient to recover from.
    pub skip_gain: ParamId,
}

/// Result of one enhancement run.
pub struct EnhanceOutput {
    /// Raw decoder output ŝ_raw.
    pub raw: Waveform,
    /// Masked resynthesis (equals `raw` when masking is off).
    pub enhanced: Waveform,
    pub mask: Option<EstimatedMask>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Model> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut ps = ParamSet::new();
        let audio_enc = AudioEncoder::new(
            &mut ps,
            "audio_enc",
            cfg.audio_channels,
            cfg.encoder_kernel,
            cfg.encoder_stride,
            &mut rng,
        );
        let visual_enc = VisualEncoder::new(
            &mut ps,
            "visual_enc",
            cfg.visual_frame_size,
            cfg.visual_front_channels,
            &cfg.visual_stage_channels,
            cfg.d_v,
            &mut rng,
        );
        let fusion = CrossAttention::new(&mut ps, "fusion", cfg.attention(), &mut rng)?;
        let separator = Separator::new(&mut ps, "sep", cfg.audio_channels, cfg.separator(), &mut rng)?;
        let decoder = Decoder::new(
            &mut ps,
            "dec",
            cfg.proj,
            cfg.encoder_kernel,
            cfg.encoder_stride,
            &mut rng,
        );
        // Zero-init residual branch: a randomly initialized decoder adds
        // output uncorrelated with the target, and the fastest descent from
        // there is to silence the trunk by pushing the separator's terminal
        // ReLU permanently dead. Starting the decoder at zero removes that
        // pressure entirely; the trunk only grows along useful directions
        // (gradient still reaches the decoder weights through its inputs).
        for v in &mut ps.get_mut(decoder.w).data {
            *v = 0.0;
        }
        let skip_gain = ps.add("skip.gain", Array::full(&[1], 1.0));
        Ok(Model {
            cfg,
            params: ps,
            audio_enc,
            visual_enc,
            fusion,
            separator,
            decoder,
            skip_gain,
        })
    }

    pub fn param_count(&self) -> usize {
        self.params.param_count()
    }

    /// Stretch per-frame visual features (N×d_v) to the latent grid of `t`
    /// audio samples, giving T̂×d_v.
    pub fn align_visual(&self, feats: &[f64], n: usize, t: usize) -> Result<Vec<f64>> {
        temporal_align(feats, n, self.cfg.d_v, self.cfg.latent_len(t))
    }

    /// Differentiable trunk: `audio` is a flat batch×T waveform buffer,
    /// `visual` the aligned batch×T̂×d_v features. Returns ŝ_raw batch×T.
    pub fn forward<F: Scalar>(
        &self,
        tape: &mut Tape<F>,
        bound: &Bound,
        audio: &[f64],
        batch: usize,
        t: usize,
        visual: &[f64],
    ) -> Result<Var> {
        if audio.len() != batch * t {
            return Err(Error::shape_mismatch("forward audio", &[batch, t], &[audio.len()]));
        }
        let t_hat = self.cfg.latent_len(t);
        if visual.len() != batch * t_hat * self.cfg.d_v {
            return Err(Error::shape_mismatch(
                "forward visual",
                &[batch, t_hat, self.cfg.d_v],
                &[visual.len()],
            ));
        }
        let a = tape.leaf_f64(&[batch, 1, t], audio);
        let z = self.audio_enc.forward(tape, bound, a)?; // B×C×T̂
        let x_a = tape.permute(z, &[0, 2, 1])?; // B×T̂×C
        let x_v = tape.leaf_f64(&[batch, t_hat, self.cfg.d_v], visual);
        let fused = self.fusion.forward(tape, bound, x_a, x_v)?; // B×C×T̂
        let feats = self.separator.forward(tape, bound, fused)?; // B×proj×T̂
        let dec = self.decoder.forward(tape, bound, feats, t)?;
        let flat = tape.reshape(a, &[batch, t])?;
        let skip = tape.mul_broadcast(flat, bound.var(self.skip_gain))?;
        tape.add(dec, skip)
    }

    /// Per-frame visual features for a stream (CNN in frames mode,
    /// passthrough in features mode).
    pub fn visual_features(&self, v: &VisualStream) -> Result<Vec<f64>> {
        visual_encode(v, &self.visual_enc, &self.params)
    }

    /// Single-utterance inference at element type `F`, including the masking
    /// stage selected by `mode`.
    pub fn enhance<F: Scalar>(
        &self,
        noisy: &Waveform,
        visual: &VisualStream,
        stft_params: &StftParams,
        mode: MaskMode,
    ) -> Result<EnhanceOutput> {
        if noisy.rate != self.cfg.sample_rate {
            return Err(Error::Config(format!(
                "model expects {} Hz audio, got {} Hz",
                self.cfg.sample_rate, noisy.rate
            )));
        }
        let t = noisy.len();
        let feats = self.visual_features(visual)?;
        let aligned = self.align_visual(&feats, visual.n(), t)?;
        let mut tape: Tape<F> = Tape::inference(0);
        let bound = self.params.bind_frozen(&mut tape);
        let out = self.forward(&mut tape, &bound, &noisy.samples, 1, t, &aligned)?;
        let raw = Waveform::new(tape.value_f64(out), noisy.rate)?;
        match mode {
            MaskMode::Off => Ok(EnhanceOutput {
                enhanced: raw.clone(),
                raw,
                mask: None,
            }),
            MaskMode::Soft | MaskMode::Binary => {
                let mask = estimate_mask(&raw, noisy, stft_params)?;
                let enhanced = reconstruct(noisy, &mask, stft_params, mode)?;
                Ok(EnhanceOutput {
                    raw,
                    enhanced,
                    mask: Some(mask),
                })
            }
        }
    }
}
