//! Acceptance gate: one test per criterion, each printing a pass/fail line.

use avse::dsp::{
    apply_mask, ibm, istft, si_sdr, si_sdr_loss, stft, BinaryMask, StftParams, Waveform,
};
use avse::encoders::{AudioEncoder, VisualStream};
use avse::harness::{bench_rtf, diag_crossmodal, peak_activation_bytes, BenchReport};
use avse::kernel::{gru_cell, numel, GruVars, Tape, Var};
use avse::metrics::hit_fa;
use avse::model::{Model, ModelConfig};
use avse::params::ParamSet;
use avse::separator::{Decoder, MaskMode, Separator};
use avse::training::optim::PlateauScheduler;
use avse::training::synth::{synth_batch, SynthSpec};
use avse::training::{loss_curve_csv, train, TrainConfig};
use avse::xattn::attend;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn finish(n: u32, name: &str, r: Result<String, String>) {
    match r {
        Ok(extra) => println!("[PASS] criterion {n} ({name}){extra}"),
        Err(e) => {
            println!("[FAIL] criterion {n} ({name}): {e}");
            panic!("criterion {n} ({name}) failed: {e}");
        }
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

/// Max relative error between tape gradients and central finite differences
/// over every element of every input, for a scalar-valued graph.
fn fd_max_rel_err(
    inputs: &[(Vec<usize>, Vec<f64>)],
    eps: f64,
    build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var,
) -> f64 {
    let mut tape: Tape<f64> = Tape::new(7);
    let vars: Vec<Var> = inputs.iter().map(|(s, d)| tape.param(s, d.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.backward(loss).unwrap();
    let grads: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, (s, _))| tape.grad_f64(v).unwrap_or_else(|| vec![0.0; numel(s)]))
        .collect();
    let eval = |which: usize, data: &[f64]| {
        let mut t: Tape<f64> = Tape::new(7);
        let vs: Vec<Var> = inputs
            .iter()
            .enumerate()
            .map(|(k, (s, d))| t.param(s, if k == which { data.to_vec() } else { d.clone() }))
            .collect();
        let l = build(&mut t, &vs);
        t.scalar_value(l)
    };
    let mut max_rel: f64 = 0.0;
    for (i, (_, data)) in inputs.iter().enumerate() {
        for j in 0..data.len() {
            let mut hi = data.clone();
            hi[j] += eps;
            let mut lo = data.clone();
            lo[j] -= eps;
            let num = (eval(i, &hi) - eval(i, &lo)) / (2.0 * eps);
            let ana = grads[i][j];
            let scale = ana.abs().max(num.abs());
            if scale > 1e-7 {
                max_rel = max_rel.max((ana - num).abs() / scale);
            }
        }
    }
    max_rel
}

#[test]
fn criterion_01_gradient_suite() {
    finish(1, "gradient suite", run_gradient_suite());
}

fn run_gradient_suite() -> Result<String, String> {
    let started = Instant::now();
    let eps = 1e-5;
    let tol = 1e-4;
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut check = |name: &str,
                     inputs: &[(Vec<usize>, Vec<f64>)],
                     build: &dyn Fn(&mut Tape<f64>, &[Var]) -> Var|
     -> Result<(), String> {
        let err = fd_max_rel_err(inputs, eps, build);
        if err > tol {
            return Err(format!("op '{name}' gradient error {err:.3e} > {tol:.0e}"));
        }
        worst = worst.max(err);
        Ok(())
    };

    let a6 = (vec![2, 3], rand_vec(&mut rng, 6));
    let b6 = (vec![2, 3], rand_vec(&mut rng, 6));
    check("add", &[a6.clone(), b6.clone()], &|t, v| {
        let y = t.add(v[0], v[1]).unwrap();
        t.mean_all(y)
    })?;
    check("sub", &[a6.clone(), b6.clone()], &|t, v| {
        let y = t.sub(v[0], v[1]).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    check("mul", &[a6.clone(), b6.clone()], &|t, v| {
        let y = t.mul(v[0], v[1]).unwrap();
        t.mean_all(y)
    })?;
    let brow = (vec![3], rand_vec(&mut rng, 3));
    check("add_broadcast", &[a6.clone(), brow.clone()], &|t, v| {
        let y = t.add_broadcast(v[0], v[1]).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    check("mul_broadcast", &[a6.clone(), brow.clone()], &|t, v| {
        let y = t.mul_broadcast(v[0], v[1]).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    check("scale/neg/add_const", &[a6.clone()], &|t, v| {
        let y = t.scale(v[0], 1.7);
        let y = t.neg(y);
        let y = t.add_const(y, 0.3);
        let y = t.mul(y, y).unwrap();
        t.mean_all(y)
    })?;
    // Keep rectifier inputs away from the kinks.
    let off = (
        vec![2, 3],
        a6.1.iter().map(|&x| x + if x >= 0.0 { 0.5 } else { -0.5 }).collect::<Vec<_>>(),
    );
    check("relu", &[off.clone()], &|t, v| {
        let y = t.relu(v[0]);
        t.sum_all(y)
    })?;
    check("max_const", &[off.clone()], &|t, v| {
        let y = t.max_const(v[0], 0.1);
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    check("sigmoid/tanh", &[a6.clone()], &|t, v| {
        let s = t.sigmoid(v[0]);
        let y = t.tanh(s);
        t.mean_all(y)
    })?;
    let pos = (vec![4], vec![0.4, 1.3, 2.2, 0.05]);
    check("ln", &[pos], &|t, v| {
        let y = t.ln(v[0]);
        t.sum_all(y)
    })?;
    check("softmax", &[a6.clone()], &|t, v| {
        let y = t.softmax(v[0], 1).unwrap();
        let w = t.leaf(&[2, 3], vec![0.9, -0.4, 0.2, 1.1, 0.3, -0.7]);
        let y = t.mul(y, w).unwrap();
        t.sum_all(y)
    })?;
    let x8 = (vec![2, 4], rand_vec(&mut rng, 8));
    let gamma = (vec![4], vec![1.1, 0.9, 1.3, 0.8]);
    let beta = (vec![4], vec![0.1, -0.2, 0.0, 0.3]);
    check("layer_norm", &[x8, gamma, beta], &|t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    let m23 = (vec![2, 3], rand_vec(&mut rng, 6));
    let m34 = (vec![3, 4], rand_vec(&mut rng, 12));
    check("matmul", &[m23.clone(), m34], &|t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        let y = t.mul(y, y).unwrap();
        t.mean_all(y)
    })?;
    let w43 = (vec![4, 3], rand_vec(&mut rng, 12));
    let bias4 = (vec![4], rand_vec(&mut rng, 4));
    check("linear", &[m23.clone(), w43, bias4], &|t, v| {
        let y = t.linear(v[0], v[1], Some(v[2])).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    let big = (vec![1, 2, 10], rand_vec(&mut rng, 20));
    check("narrow/reshape/permute/concat", &[big.clone()], &|t, v| {
        let a = t.narrow(v[0], 2, 0, 6).unwrap();
        let b = t.narrow(v[0], 2, 4, 6).unwrap();
        let c = t.concat(2, &[a, b]).unwrap();
        let c = t.permute(c, &[0, 2, 1]).unwrap();
        let c = t.reshape(c, &[1, 24]).unwrap();
        let c = t.mul(c, c).unwrap();
        t.sum_all(c)
    })?;
    check("chunk_overlap/overlap_add_mean", &[big.clone()], &|t, v| {
        let c = t.chunk_overlap(v[0], 4, 2).unwrap();
        let c = t.tanh(c);
        let y = t.overlap_add_mean(c, 2, 10).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    let x1t = (vec![1, 1, 24], rand_vec(&mut rng, 24));
    let wk = (vec![3, 1, 8], rand_vec(&mut rng, 24));
    check("conv1d", &[x1t, wk.clone()], &|t, v| {
        let y = t.conv1d(v[0], v[1], 4).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    let f3 = (vec![1, 3, 5], rand_vec(&mut rng, 15));
    let wt = (vec![3, 1, 8], rand_vec(&mut rng, 24));
    check("conv_transpose1d", &[f3, wt], &|t, v| {
        let y = t.conv_transpose1d(v[0], v[1], 4).unwrap();
        let y = t.mul(y, y).unwrap();
        t.sum_all(y)
    })?;
    let gx = (vec![2, 3], rand_vec(&mut rng, 6));
    let gh = (vec![2, 4], rand_vec(&mut rng, 8));
    let w_ih = (vec![12, 3], rand_vec(&mut rng, 36));
    let w_hh = (vec![12, 4], rand_vec(&mut rng, 48));
    let b_ih = (vec![12], rand_vec(&mut rng, 12));
    let b_hh = (vec![12], rand_vec(&mut rng, 12));
    check("gru_cell", &[gx, gh, w_ih, w_hh, b_ih, b_hh], &|t, v| {
        let p = GruVars { w_ih: v[2], w_hh: v[3], b_ih: v[4], b_hh: v[5] };
        let h = gru_cell(t, v[0], v[1], &p).unwrap();
        let h = t.mul(h, h).unwrap();
        t.sum_all(h)
    })?;
    let mut r2 = ChaCha8Rng::seed_from_u64(102);
    let target: Vec<f64> = (0..32).map(|i| (i as f64 * 0.37).sin()).collect();
    let est = (vec![1, 32], (0..32).map(|i| target[i] + 0.2 * r2.gen_range(-1.0..1.0)).collect::<Vec<_>>());
    check("si_sdr_loss", &[est], &|t, v| si_sdr_loss(t, v[0], &target).unwrap())?;

    // End-to-end tiny model: analytic parameter gradients against central
    // differences on a sampled subset of coordinates per tensor.
    let cfg = ModelConfig::tiny();
    let mut model = Model::new(cfg, 3).map_err(|e| e.to_string())?;
    let t_len = 400;
    let t_hat = model.cfg.latent_len(t_len);
    let mut r3 = ChaCha8Rng::seed_from_u64(103);
    let audio = rand_vec(&mut r3, t_len);
    let clean: Vec<f64> = (0..t_len).map(|i| (i as f64 * 0.11).sin() * 0.3).collect();
    let visual = rand_vec(&mut r3, t_hat * model.cfg.d_v);
    let loss_of = |m: &Model| -> f64 {
        let mut tape: Tape<f64> = Tape::new(9);
        let bound = m.params.bind(&mut tape);
        let out = m.forward(&mut tape, &bound, &audio, 1, t_len, &visual).unwrap();
        let loss = si_sdr_loss(&mut tape, out, &clean).unwrap();
        tape.scalar_value(loss)
    };
    let mut tape: Tape<f64> = Tape::new(9);
    let bound = model.params.bind(&mut tape);
    let out = model
        .forward(&mut tape, &bound, &audio, 1, t_len, &visual)
        .map_err(|e| e.to_string())?;
    let loss = si_sdr_loss(&mut tape, out, &clean).map_err(|e| e.to_string())?;
    tape.backward(loss).map_err(|e| e.to_string())?;
    let grads: Vec<(String, Vec<f64>)> = model
        .params
        .iter()
        .zip(bound.vars())
        .map(|((n, a), &v)| {
            (n.to_string(), tape.grad_f64(v).unwrap_or_else(|| vec![0.0; a.numel()]))
        })
        .collect();
    let tensor_count = grads.len();
    let mut model_worst: f64 = 0.0;
    for (k, (name, g)) in grads.iter().enumerate() {
        let len = g.len();
        let mut coords = vec![0, len / 3, 2 * len / 3, len - 1];
        coords.dedup();
        for &j in &coords {
            let orig = {
                let (_, arr) = model.params.iter_mut().nth(k).unwrap();
                let orig = arr.data[j];
                arr.data[j] = orig + eps;
                orig
            };
            let hi = loss_of(&model);
            {
                let (_, arr) = model.params.iter_mut().nth(k).unwrap();
                arr.data[j] = orig - eps;
            }
            let lo = loss_of(&model);
            {
                let (_, arr) = model.params.iter_mut().nth(k).unwrap();
                arr.data[j] = orig;
            }
            let num = (hi - lo) / (2.0 * eps);
            let ana = g[j];
            let scale = ana.abs().max(num.abs());
            if scale > 1e-7 {
                let rel = (ana - num).abs() / scale;
                if rel > tol {
                    return Err(format!(
                        "tiny model gradient for '{name}'[{j}]: analytic {ana:.6e} vs numeric {num:.6e} (rel {rel:.3e})"
                    ));
                }
                model_worst = model_worst.max(rel);
            }
        }
    }
    let secs = started.elapsed().as_secs_f64();
    if secs > 120.0 {
        return Err(format!("gradient suite took {secs:.1}s > 120s"));
    }
    Ok(format!(
        ": ops max rel err {worst:.2e}, tiny model max rel err {model_worst:.2e} over {tensor_count} tensors, {secs:.1}s"
    ))
}

#[test]
fn criterion_02_shapes() {
    finish(2, "shape/architecture suite", run_shapes());
}

fn run_shapes() -> Result<String, String> {
    let cfg = ModelConfig::paper();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut ps = ParamSet::new();
    let enc = AudioEncoder::new(&mut ps, "enc", cfg.audio_channels, cfg.encoder_kernel, cfg.encoder_stride, &mut rng);
    let t = 16000usize;
    let t_hat = (t - 16) / 8 + 1;
    if cfg.latent_len(t) != t_hat {
        return Err(format!("latent_len({t}) = {} != {t_hat}", cfg.latent_len(t)));
    }
    let mut tape: Tape<f64> = Tape::inference(0);
    let bound = ps.bind_frozen(&mut tape);
    let audio = tape.leaf(&[1, 1, t], rand_vec(&mut rng, t));
    let z = enc.forward(&mut tape, &bound, audio).map_err(|e| e.to_string())?;
    if tape.shape(z) != [1, 256, t_hat] {
        return Err(format!("encoder output {:?}, expected [1, 256, {t_hat}]", tape.shape(z)));
    }

    // Separator 256 -> 128 through six shape-preserving blocks, short extent.
    let mut ps2 = ParamSet::new();
    let sep = Separator::new(&mut ps2, "sep", cfg.audio_channels, cfg.separator(), &mut rng)
        .map_err(|e| e.to_string())?;
    if sep.blocks.len() != 6 {
        return Err(format!("paper separator has {} blocks, expected 6", sep.blocks.len()));
    }
    let mut tape2: Tape<f64> = Tape::inference(0);
    let bound2 = ps2.bind_frozen(&mut tape2);
    let th2 = 200usize;
    let x = tape2.leaf(&[1, 256, th2], rand_vec(&mut rng, 256 * th2));
    let y = sep.forward(&mut tape2, &bound2, x).map_err(|e| e.to_string())?;
    if tape2.shape(y) != [1, 128, th2] {
        return Err(format!("separator output {:?}, expected [1, 128, {th2}]", tape2.shape(y)));
    }

    // Decoder restores the input length exactly.
    let mut ps3 = ParamSet::new();
    let dec = Decoder::new(&mut ps3, "dec", cfg.proj, cfg.encoder_kernel, cfg.encoder_stride, &mut rng);
    let mut tape3: Tape<f64> = Tape::inference(0);
    let bound3 = ps3.bind_frozen(&mut tape3);
    let feats = tape3.leaf(&[1, 128, t_hat], rand_vec(&mut rng, 128 * t_hat));
    let wav = dec.forward(&mut tape3, &bound3, feats, t).map_err(|e| e.to_string())?;
    if tape3.shape(wav) != [1, t] {
        return Err(format!("decoder output {:?}, expected [1, {t}]", tape3.shape(wav)));
    }
    Ok(format!(": T̂={t_hat} for T={t}, 256→128 projection, 6 blocks, length restored"))
}

#[test]
fn criterion_03_attention_contract() {
    finish(3, "attention contract", run_attention());
}

fn run_attention() -> Result<String, String> {
    let (b, h, t, d_h) = (2, 2, 8, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut tape: Tape<f64> = Tape::new(0);
    let q = tape.leaf(&[b, h, t, d_h], rand_vec(&mut rng, b * h * t * d_h));
    let k = tape.leaf(&[b, h, t, d_h], rand_vec(&mut rng, b * h * t * d_h));
    let v = tape.leaf(&[b, h, t, d_h], rand_vec(&mut rng, b * h * t * d_h));
    let bias_vals = rand_vec(&mut rng, b * h * t);
    let bias = tape.leaf(&[b, h, t], bias_vals.clone());
    let (_, a) = attend(&mut tape, q, k, v, Some(bias)).map_err(|e| e.to_string())?;
    let aw = tape.value(a).to_vec();
    for row in aw.chunks(t) {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(format!("attention row sums to {s}, off by {:.2e}", (s - 1.0).abs()));
        }
    }

    // Zero bias reduces bit-exactly to plain self-attention.
    let zero = tape.leaf(&[b, h, t], vec![0.0; b * h * t]);
    let (with, _) = attend(&mut tape, q, k, v, Some(zero)).map_err(|e| e.to_string())?;
    let (without, _) = attend(&mut tape, q, k, v, None).map_err(|e| e.to_string())?;
    if tape.value(with) != tape.value(without) {
        return Err("zero visual bias is not bit-identical to plain self-attention".into());
    }

    // Shift invariance: adding a constant to every key's bias leaves A unchanged.
    let shifted_vals: Vec<f64> = bias_vals.iter().map(|x| x + 3.5).collect();
    let shifted = tape.leaf(&[b, h, t], shifted_vals);
    let (_, a2) = attend(&mut tape, q, k, v, Some(shifted)).map_err(|e| e.to_string())?;
    let max_diff = tape
        .value(a2)
        .iter()
        .zip(&aw)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0f64, f64::max);
    if max_diff > 1e-12 {
        return Err(format!("constant bias shift changed attention by {max_diff:.2e}"));
    }

    // A +20 one-frame bias concentrates at least 0.99 of the mass there.
    let star = 5usize;
    let mut spike = vec![0.0; b * h * t];
    for bh in 0..b * h {
        spike[bh * t + star] = 20.0;
    }
    let spike = tape.leaf(&[b, h, t], spike);
    let (_, a3) = attend(&mut tape, q, k, v, Some(spike)).map_err(|e| e.to_string())?;
    let a3v = tape.value(a3);
    for (r, row) in a3v.chunks(t).enumerate() {
        if row[star] < 0.99 {
            return Err(format!("row {r} puts only {:.4} mass on the biased frame", row[star]));
        }
    }
    Ok(": rows sum to 1, zero-bias bit-exact, shift-invariant, +20 bias ≥0.99 mass".into())
}

#[test]
fn criterion_04_dsp_suite() {
    finish(4, "DSP suite", run_dsp());
}

fn run_dsp() -> Result<String, String> {
    // STFT round trip, interior relative error ≤ 1e-10.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let p = StftParams::default();
    let w = Waveform::new(rand_vec(&mut rng, 16000), 16000).map_err(|e| e.to_string())?;
    let s = stft(&w, &p).map_err(|e| e.to_string())?;
    let back = istft(&s).map_err(|e| e.to_string())?;
    let lo = p.window_len;
    let hi = w.len().min(back.len()) - p.window_len;
    let mut max_rel: f64 = 0.0;
    for i in lo..hi {
        let rel = (back.samples[i] - w.samples[i]).abs() / w.samples[i].abs().max(1e-3);
        max_rel = max_rel.max(rel);
    }
    if max_rel > 1e-10 {
        return Err(format!("round-trip interior error {max_rel:.2e} > 1e-10"));
    }

    // Scale invariance of the optimal-scaling SI-SDR.
    let r = Waveform::new(rand_vec(&mut rng, 512), 16000).map_err(|e| e.to_string())?;
    let e = Waveform::new(rand_vec(&mut rng, 512), 16000).map_err(|e| e.to_string())?;
    let e2 = Waveform::new(e.samples.iter().map(|&x| 7.3 * x).collect(), 16000)
        .map_err(|e| e.to_string())?;
    let s1 = si_sdr(&r, &e).map_err(|e| e.to_string())?;
    let s2 = si_sdr(&r, &e2).map_err(|e| e.to_string())?;
    if (s1 - s2).abs() > 1e-9 {
        return Err(format!("SI-SDR not scale invariant: {s1} vs {s2}"));
    }

    // Worked example.
    let rr = Waveform::new(vec![1.0, 1.0, 1.0, 1.0], 16000).map_err(|e| e.to_string())?;
    let ee = Waveform::new(vec![1.0, 1.0, 1.0, 0.0], 16000).map_err(|e| e.to_string())?;
    let got = si_sdr(&rr, &ee).map_err(|e| e.to_string())?;
    if (got - 4.771).abs() > 0.001 {
        return Err(format!("worked example gave {got:.4} dB, expected 4.771 ± 0.001"));
    }

    // Orthogonal estimate clips the loss at 30.
    let reference: Vec<f64> = (0..64).map(|i| if i % 2 == 0 { 1.0 } else { 0.0 }).collect();
    let estimate: Vec<f64> = (0..64).map(|i| if i % 2 == 1 { 1.0 } else { 0.0 }).collect();
    let mut tape: Tape<f64> = Tape::new(0);
    let est = tape.leaf(&[1, 64], estimate);
    let loss = si_sdr_loss(&mut tape, est, &reference).map_err(|e| e.to_string())?;
    let lv = tape.scalar_value(loss);
    if (lv - 30.0).abs() > 1e-9 {
        return Err(format!("orthogonal-estimate loss {lv}, expected clip at 30"));
    }
    Ok(format!(": round trip {max_rel:.1e}, worked example {got:.3} dB, loss clips at 30"))
}

#[test]
fn criterion_05_mask_metrics() {
    finish(5, "mask metrics", run_mask_metrics());
}

fn run_mask_metrics() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let random_mask = |rng: &mut ChaCha8Rng| BinaryMask {
        frames: 16,
        bins: 16,
        values: (0..256).map(|_| rng.gen_range(0..=1u8)).collect(),
    };
    // Identities.
    let reference = random_mask(&mut rng);
    let same = hit_fa(&reference, &reference).map_err(|e| e.to_string())?;
    if same.hit != 1.0 || same.fa != 0.0 || same.hit_minus_fa != 1.0 {
        return Err(format!("est==ref gave ({}, {}, {})", same.hit, same.fa, same.hit_minus_fa));
    }
    let ones = BinaryMask { frames: 16, bins: 16, values: vec![1; 256] };
    let all = hit_fa(&ones, &reference).map_err(|e| e.to_string())?;
    if all.hit != 1.0 || all.fa != 1.0 || all.hit_minus_fa != 0.0 {
        return Err(format!("all-ones est gave ({}, {}, {})", all.hit, all.fa, all.hit_minus_fa));
    }
    // Brute-force bin-counting oracle on random 16×16 masks, exact agreement.
    for trial in 0..50 {
        let reference = random_mask(&mut rng);
        let est = random_mask(&mut rng);
        let (mut tp, mut fnn, mut fp, mut tn) = (0usize, 0usize, 0usize, 0usize);
        for f in 0..16 {
            for b in 0..16 {
                match (reference.at(f, b), est.at(f, b)) {
                    (1, 1) => tp += 1,
                    (1, 0) => fnn += 1,
                    (0, 1) => fp += 1,
                    (0, 0) => tn += 1,
                    _ => unreachable!(),
                }
            }
        }
        let want_hit = tp as f64 / (tp + fnn) as f64;
        let want_fa = fp as f64 / (fp + tn) as f64;
        let got = hit_fa(&est, &reference).map_err(|e| e.to_string())?;
        if got.hit != want_hit || got.fa != want_fa || got.hit_minus_fa != want_hit - want_fa {
            return Err(format!(
                "trial {trial}: hit_fa ({}, {}, {}) vs oracle ({}, {}, {})",
                got.hit, got.fa, got.hit_minus_fa, want_hit, want_fa, want_hit - want_fa
            ));
        }
    }
    Ok(": identities exact, 50 random 16×16 masks match the bin-counting oracle exactly".into())
}

#[test]
fn criterion_06_oracle_mask() {
    finish(6, "oracle-mask experiment", run_oracle_mask());
}

fn run_oracle_mask() -> Result<String, String> {
    let started = Instant::now();
    let spec = SynthSpec {
        seed: 61,
        snr_db_min: 0.0,
        snr_db_max: 0.0,
        ..SynthSpec::default()
    };
    let items = synth_batch(&spec, 20).map_err(|e| e.to_string())?;
    let p = StftParams::default();
    let mut gain_sum = 0.0;
    for it in &items {
        let sc = stft(&it.clean, &p).map_err(|e| e.to_string())?;
        let sn = stft(&it.noise, &p).map_err(|e| e.to_string())?;
        let sy = stft(&it.noisy, &p).map_err(|e| e.to_string())?;
        let mask = ibm(&sc, &sn).map_err(|e| e.to_string())?;
        let masked = apply_mask(&sy, &mask.as_soft()).map_err(|e| e.to_string())?;
        let rec = istft(&masked).map_err(|e| e.to_string())?;
        let n = rec.len().min(it.clean.len());
        let rec = Waveform::new(rec.samples[..n].to_vec(), rec.rate).map_err(|e| e.to_string())?;
        let clean = Waveform::new(it.clean.samples[..n].to_vec(), it.clean.rate)
            .map_err(|e| e.to_string())?;
        let noisy = Waveform::new(it.noisy.samples[..n].to_vec(), it.noisy.rate)
            .map_err(|e| e.to_string())?;
        let after = si_sdr(&clean, &rec).map_err(|e| e.to_string())?;
        let before = si_sdr(&clean, &noisy).map_err(|e| e.to_string())?;
        gain_sum += after - before;
    }
    let mean_gain = gain_sum / items.len() as f64;
    let secs = started.elapsed().as_secs_f64();
    if mean_gain < 5.0 {
        return Err(format!("oracle IBM mean gain {mean_gain:.2} dB < 5 dB"));
    }
    if secs > 60.0 {
        return Err(format!("oracle-mask experiment took {secs:.1}s > 60s"));
    }
    Ok(format!(": mean SI-SDR gain {mean_gain:.2} dB over 20 mixtures at 0 dB, {secs:.1}s"))
}

#[test]
fn criterion_07_toy_training() {
    finish(7, "toy training", run_toy_training());
}

fn run_toy_training() -> Result<String, String> {
    let started = Instant::now();
    // Scripted stagnation trace: lr 1e-4 → 8e-5 after six flat epochs.
    let mut sched = PlateauScheduler::new(1e-4, 0.8, 5, 1e-4);
    let mut lr = 1e-4;
    for _ in 0..7 {
        lr = sched.observe(1.0);
    }
    if (lr - 8e-5).abs() > 1e-18 {
        return Err(format!("scheduler gave {lr:.3e} after the stagnation trace, expected 8e-5"));
    }

    let spec = SynthSpec {
        seed: 11,
        snr_db_min: 0.0,
        snr_db_max: 0.0,
        ..SynthSpec::default()
    };
    let items = synth_batch(&spec, 64).map_err(|e| e.to_string())?;
    let (train_items, val_items) = items.split_at(60);
    let mut baseline = 0.0;
    for it in val_items {
        baseline += si_sdr(&it.clean, &it.noisy).map_err(|e| e.to_string())?;
    }
    baseline /= val_items.len() as f64;

    let mut model = Model::new(ModelConfig::tiny(), 11).map_err(|e| e.to_string())?;
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 20,
        segment_s: 0.25,
        seed: 11,
        ..TrainConfig::default()
    };
    let outcome = train(&mut model, train_items, val_items, &cfg, None, None)
        .map_err(|e| e.to_string())?;
    let first = &outcome.stats[0];
    let last = outcome.stats.last().unwrap();
    let epoch20 = &outcome.stats[19];
    if epoch20.train_loss >= first.train_loss {
        return Err(format!(
            "epoch-20 train loss {:.3} not below epoch-1 {:.3}",
            epoch20.train_loss, first.train_loss
        ));
    }
    if last.val_sisdr < baseline + 3.0 {
        return Err(format!(
            "held-out SI-SDR {:.2} dB < noisy baseline {:.2} + 3 dB",
            last.val_sisdr, baseline
        ));
    }
    let secs = started.elapsed().as_secs_f64();
    if secs > 900.0 {
        return Err(format!("toy training took {secs:.0}s > 900s"));
    }
    Ok(format!(
        ": held-out SI-SDR {:.2} dB vs baseline {:.2} dB (+{:.2}), epoch-20 loss {:.2} < epoch-1 {:.2}, {:.0}s",
        last.val_sisdr,
        baseline,
        last.val_sisdr - baseline,
        epoch20.train_loss,
        first.train_loss,
        secs
    ))
}

#[test]
fn criterion_08_performance_accounting() {
    finish(8, "performance accounting", run_bench());
}

fn run_bench() -> Result<String, String> {
    let tiny = Model::new(ModelConfig::tiny(), 8).map_err(|e| e.to_string())?;
    let chunk_s = 1.0f64;
    let chunks = 4usize;
    let rate = tiny.cfg.sample_rate;
    let t = (chunk_s * rate as f64) as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(81);
    let audio: Vec<Waveform> = (0..chunks)
        .map(|_| Waveform::new(rand_vec(&mut rng, t), rate).unwrap())
        .collect();
    let n_frames = (chunk_s * tiny.cfg.fps).round() as usize;
    let feats = rand_vec(&mut rng, n_frames * tiny.cfg.d_v);
    let visual = VisualStream::Features {
        data: feats,
        n: n_frames,
        d_v: tiny.cfg.d_v,
        fps: tiny.cfg.fps,
    };
    let p = StftParams::default();
    let stats = bench_rtf(chunk_s * chunks as f64, chunks, 3, 1, |c| {
        tiny.enhance::<f64>(&audio[c], &visual, &p, MaskMode::Soft).map(|_| ())
    })
    .map_err(|e| e.to_string())?;
    let report = BenchReport {
        param_count: tiny.param_count(),
        weight_bytes: tiny.param_count() * std::mem::size_of::<f64>(),
        peak_activation_bytes: peak_activation_bytes(&tiny.cfg, t, std::mem::size_of::<f64>()),
        rtf: stats.rtf,
        chunk_ms_mean: stats.chunk_ms_mean,
        chunk_ms_p95: stats.chunk_ms_p95,
    };
    if report.param_count == 0 || report.weight_bytes != report.param_count * 8 {
        return Err("inconsistent parameter accounting".into());
    }
    if report.rtf >= 1.0 {
        return Err(format!("tiny preset RTF {:.3} ≥ 1.0", report.rtf));
    }
    // Paper-preset parameter count, reported against the published 5.90M.
    let paper = Model::new(ModelConfig::paper(), 8).map_err(|e| e.to_string())?;
    let published = 5_900_000f64;
    let deviation = (paper.param_count() as f64 - published) / published * 100.0;
    Ok(format!(
        ": tiny {} params, {} weight bytes, peak act {} bytes, RTF {:.3} (chunk mean {:.1} ms, p95 {:.1} ms); paper preset {} params vs published 5.90M ({:+.1}%, informative)",
        report.param_count,
        report.weight_bytes,
        report.peak_activation_bytes,
        report.rtf,
        report.chunk_ms_mean,
        report.chunk_ms_p95,
        paper.param_count(),
        deviation
    ))
}

#[test]
fn criterion_09_diagnostics() {
    finish(9, "diagnostics", run_diag());
}

fn run_diag() -> Result<String, String> {
    let frames = 40;
    let dim = 12;
    let mut rng = ChaCha8Rng::seed_from_u64(91);
    let audio = rand_vec(&mut rng, frames * dim);
    // Visual stream delayed by 4 frames: visual[j] = audio[j−4].
    let shift = 4usize;
    let mut visual = rand_vec(&mut rng, frames * dim);
    for j in shift..frames {
        visual[j * dim..(j + 1) * dim].copy_from_slice(&audio[(j - shift) * dim..(j - shift + 1) * dim]);
    }
    let report = diag_crossmodal(&audio, &visual, frames, dim, 8).map_err(|e| e.to_string())?;
    if report.peak_lag != Some(shift as i64) {
        return Err(format!("lag peak at {:?}, expected Some(+{shift})", report.peak_lag));
    }
    // Identical streams give an exactly unit diagonal.
    let same = diag_crossmodal(&audio, &audio, frames, dim, 2).map_err(|e| e.to_string())?;
    for i in 0..frames {
        match same.corr[i * frames + i] {
            Some(c) if c == 1.0 => {}
            other => return Err(format!("diagonal entry {i} is {other:?}, expected exactly 1.0")),
        }
    }
    Ok(format!(": +4-frame shift peaks at lag {:?}, unit diagonal exact", report.peak_lag))
}

#[test]
fn criterion_10_determinism() {
    finish(10, "determinism", run_determinism());
}

fn run_determinism() -> Result<String, String> {
    let spec = SynthSpec {
        seed: 21,
        snr_db_min: 0.0,
        snr_db_max: 0.0,
        ..SynthSpec::default()
    };
    let items = synth_batch(&spec, 12).map_err(|e| e.to_string())?;
    let (train_items, val_items) = items.split_at(10);
    let cfg = TrainConfig {
        lr: 1e-3,
        epochs: 2,
        segment_s: 0.25,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || -> Result<(String, Vec<u8>), String> {
        let mut model = Model::new(ModelConfig::tiny(), 5).map_err(|e| e.to_string())?;
        let outcome =
            train(&mut model, train_items, val_items, &cfg, None, None).map_err(|e| e.to_string())?;
        let curve = loss_curve_csv(&outcome.stats);
        let it = &val_items[0];
        let visual = VisualStream::Features {
            data: it.visual.clone(),
            n: it.n_frames,
            d_v: it.d_v,
            fps: model.cfg.fps,
        };
        let p = StftParams::default();
        let out = model
            .enhance::<f64>(&it.noisy, &visual, &p, MaskMode::Soft)
            .map_err(|e| e.to_string())?;
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let path = dir.path().join("enhanced.wav");
        avse::dsp::write_wav(&path, &out.enhanced).map_err(|e| e.to_string())?;
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        Ok((curve, bytes))
    };
    let (curve_a, wav_a) = run()?;
    let (curve_b, wav_b) = run()?;
    if curve_a != curve_b {
        return Err("loss curves differ between identical runs".into());
    }
    if wav_a != wav_b {
        return Err("enhanced WAV bytes differ between identical runs".into());
    }
    Ok(format!(
        ": loss curves and {}-byte enhanced WAVs bit-identical across two runs",
        wav_a.len()
    ))
}
