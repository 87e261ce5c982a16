//! Training loop: synthetic corpus, RMSprop on the negative SI-SDR loss,
//! plateau scheduling and checkpointing.

pub mod checkpoint;
pub mod optim;
pub mod synth;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dsp::{si_sdr, si_sdr_loss, Waveform};
use crate::error::{Error, Result};
use crate::kernel::Tape;
use crate::model::Model;
use checkpoint::{load_checkpoint, restore_optimizer, save_checkpoint, save_model, TrainState};
use optim::{PlateauScheduler, RmsProp};
use synth::SynthItem;

const EPOCH_SEED_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    /// Crop length in seconds; rounded to a whole number of encoder hops.
    pub segment_s: f64,
    pub alpha: f64,
    pub eps: f64,
    pub factor: f64,
    pub patience: usize,
    pub rel_threshold: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch: 4,
            epochs: 30,
            segment_s: 1.0,
            alpha: 0.99,
            eps: 1e-8,
            factor: 0.8,
            patience: 5,
            rel_threshold: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_sisdr: f64,
    pub lr: f64,
}

/// Loss curve in CSV form.
pub fn loss_curve_csv(stats: &[EpochStats]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_sisdr,lr\n");
    for s in stats {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6e}\n",
            s.epoch, s.train_loss, s.val_loss, s.val_sisdr, s.lr
        ));
    }
    out
}

pub struct TrainOutcome {
    pub stats: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// One item prepared for cropping: full noisy/clean audio plus visual
/// features already stretched onto the full latent grid.
struct Prepared {
    noisy: Vec<f64>,
    clean: Vec<f64>,
    aligned: Vec<f64>,
    latent_full: usize,
}

fn prepare(model: &Model, items: &[SynthItem]) -> Result<Vec<Prepared>> {
    items
        .iter()
        .map(|it| {
            let t = it.noisy.len();
            if it.d_v != model.cfg.d_v {
                return Err(Error::shape_mismatch(
                    "corpus visual feature width",
                    &[it.d_v],
                    &[model.cfg.d_v],
                ));
            }
            Ok(Prepared {
                noisy: it.noisy.samples.clone(),
                clean: it.clean.samples.clone(),
                aligned: model.align_visual(&it.visual, it.n_frames, t)?,
                latent_full: model.cfg.latent_len(t),
            })
        })
        .collect()
}

/// Crop geometry: the audio crop starts on an encoder-hop boundary so the
/// latent frames of the crop are a contiguous slice of the full latent grid.
fn segment_samples(model: &Model, segment_s: f64) -> usize {
    let stride = model.cfg.encoder_stride;
    let raw = (segment_s * model.cfg.sample_rate as f64).round() as usize;
    let hops = (raw.max(model.cfg.encoder_kernel) / stride).max(2);
    hops * stride
}

struct Batch<'a> {
    items: Vec<(&'a Prepared, usize)>,
}

fn batch_tensors(model: &Model, batch: &Batch, seg_t: usize) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let t_hat = model.cfg.latent_len(seg_t);
    let d_v = model.cfg.d_v;
    let mut audio = Vec::with_capacity(batch.items.len() * seg_t);
    let mut visual = Vec::with_capacity(batch.items.len() * t_hat * d_v);
    let mut refs = Vec::with_capacity(batch.items.len());
    for (p, j) in &batch.items {
        let a0 = j * model.cfg.encoder_stride;
        audio.extend_from_slice(&p.noisy[a0..a0 + seg_t]);
        visual.extend_from_slice(&p.aligned[j * d_v..(j + t_hat) * d_v]);
        refs.push(p.clean[a0..a0 + seg_t].to_vec());
    }
    (audio, visual, refs)
}

/// Forward a batch, average the per-utterance losses, backprop, and return
/// (loss value, gradients in registry order).
fn batch_step(
    model: &Model,
    audio: &[f64],
    visual: &[f64],
    refs: &[Vec<f64>],
    seg_t: usize,
    tape_seed: u64,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let b = refs.len();
    let mut tape: Tape<f64> = Tape::new(tape_seed);
    tape.training = true;
    let bound = model.params.bind(&mut tape);
    let out = model.forward(&mut tape, &bound, audio, b, seg_t, visual)?;
    let mut total = None;
    for (i, r) in refs.iter().enumerate() {
        let row = tape.narrow(out, 0, i, 1)?;
        let loss = si_sdr_loss(&mut tape, row, r)?;
        total = Some(match total {
            None => loss,
            Some(acc) => tape.add(acc, loss)?,
        });
    }
    let mean = tape.scale(total.expect("non-empty batch"), 1.0 / b as f64);
    let value = tape.scalar_value(mean);
    if !value.is_finite() {
        return Err(Error::Training(format!(
            "non-finite training loss on batch with tape seed {tape_seed}"
        )));
    }
    tape.backward(mean)?;
    let grads = model
        .params
        .iter()
        .zip(bound.vars())
        .map(|((_, a), &v)| tape.grad_f64(v).unwrap_or_else(|| vec![0.0; a.numel()]))
        .collect();
    Ok((value, grads))
}

/// Mean validation loss and mean raw-output SI-SDR over whole utterances.
fn validate(model: &Model, items: &[Prepared]) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut sisdr_sum = 0.0;
    for p in items {
        let t = p.noisy.len();
        let mut tape: Tape<f64> = Tape::inference(0);
        let bound = model.params.bind_frozen(&mut tape);
        let out = model.forward(&mut tape, &bound, &p.noisy, 1, t, &p.aligned)?;
        let loss = si_sdr_loss(&mut tape, out, &p.clean)?;
        loss_sum += tape.scalar_value(loss);
        let raw = Waveform::new(tape.value_f64(out), model.cfg.sample_rate)?;
        let clean = Waveform::new(p.clean.clone(), model.cfg.sample_rate)?;
        sisdr_sum += si_sdr(&clean, &raw)?;
    }
    let n = items.len() as f64;
    Ok((loss_sum / n, sisdr_sum / n))
}

/// Train `model` in place. When `ckpt_dir` is given, `best.ckpt` tracks the
/// lowest validation loss and `last.ckpt` (weights plus optimizer and
/// scheduler state) is rewritten every epoch; `resume` restarts from such a
/// state checkpoint. All randomness derives from `cfg.seed` per epoch, so a
/// resumed run replays the remaining epochs bit-exactly.
pub fn train(
    model: &mut Model,
    train_items: &[SynthItem],
    val_items: &[SynthItem],
    cfg: &TrainConfig,
    ckpt_dir: Option<&Path>,
    resume: Option<&Path>,
) -> Result<TrainOutcome> {
    if cfg.batch == 0 || cfg.epochs == 0 {
        return Err(Error::Config("batch size and epoch count must be positive".into()));
    }
    if train_items.is_empty() || val_items.is_empty() {
        return Err(Error::Config("training and validation sets must be non-empty".into()));
    }
    let fingerprint = model.cfg.fingerprint();
    let train_prep = prepare(model, train_items)?;
    let val_prep = prepare(model, val_items)?;
    let seg_t = segment_samples(model, cfg.segment_s);
    let t_hat_seg = model.cfg.latent_len(seg_t);
    for p in &train_prep {
        if p.noisy.len() < seg_t || p.latent_full < t_hat_seg {
            return Err(Error::SignalTooShort(format!(
                "training utterance of {} samples is shorter than the {seg_t}-sample crop",
                p.noisy.len()
            )));
        }
    }

    let mut opt = RmsProp::new(&model.params, cfg.alpha, cfg.eps);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.factor, cfg.patience, cfg.rel_threshold);
    let mut start_epoch = 0usize;
    if let Some(path) = resume {
        let st = load_checkpoint(path, fingerprint, &mut model.params)?
            .ok_or_else(|| Error::Format("resume checkpoint carries no training state".into()))?;
        opt = restore_optimizer(&model.params, cfg.alpha, cfg.eps, &st);
        sched = st.sched.clone();
        start_epoch = st.epoch;
    }

    let mut stats = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut lr = sched.lr;
    for epoch in start_epoch..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed.wrapping_add((epoch as u64 + 1).wrapping_mul(EPOCH_SEED_STRIDE)),
        );
        let mut order: Vec<usize> = (0..train_prep.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for group in order.chunks(cfg.batch) {
            let batch = Batch {
                items: group
                    .iter()
                    .map(|&i| {
                        let p = &train_prep[i];
                        let jmax = p.latent_full - t_hat_seg;
                        let j = if jmax == 0 { 0 } else { rng.gen_range(0..=jmax) };
                        (p, j)
                    })
                    .collect(),
            };
            let (audio, visual, refs) = batch_tensors(model, &batch, seg_t);
            let tape_seed = rng.gen::<u64>();
            let (loss, grads) = batch_step(model, &audio, &visual, &refs, seg_t, tape_seed)?;
            opt.step(&mut model.params, &grads, lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let (val_loss, val_sisdr) = validate(model, &val_prep)?;
        stats.push(EpochStats {
            epoch: epoch + 1,
            train_loss,
            val_loss,
            val_sisdr,
            lr,
        });
        if val_loss < best_val {
            best_val = val_loss;
            best_epoch = epoch + 1;
            if let Some(dir) = ckpt_dir {
                save_model(&dir.join("best.ckpt"), fingerprint, &model.params)?;
            }
        }
        lr = sched.observe(val_loss);
        if let Some(dir) = ckpt_dir {
            let state = TrainState::capture(&opt, &sched, epoch + 1);
            save_checkpoint(&dir.join("last.ckpt"), fingerprint, &model.params, Some(&state))?;
        }
    }
    Ok(TrainOutcome {
        stats,
        best_epoch,
        best_val_loss: best_val,
    })
}
