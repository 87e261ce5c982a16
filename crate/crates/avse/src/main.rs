//! Command-line front end for the enhancement pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use avse::dsp::{ibm, read_wav, stft, write_wav, StftParams, Waveform};
use avse::encoders::{read_vfr, read_vft, write_vft, VisualStream};
use avse::harness::{bench_rtf, diag_crossmodal, par_map, peak_activation_bytes};
use avse::kernel::Tape;
use avse::metrics::{evaluate_corpus, hit_fa, EvalItem};
use avse::model::{Model, ModelConfig};
use avse::separator::MaskMode;
use avse::training::checkpoint::load_checkpoint;
use avse::training::synth::{synth_batch, NoiseKind, SynthItem, SynthSpec};
use avse::training::{loss_curve_csv, train, TrainConfig};
use avse::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Parser)]
#[command(name = "avse", version, about = "Offline audio-visual speech enhancement")]
struct Cli {
    /// Model config JSON file; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in architecture preset.
    #[arg(long, global = true, default_value = "tiny")]
    preset: String,
    /// Weight-init / corpus seed.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Inference element type.
    #[arg(long, global = true, value_enum, default_value_t = Precision::F64)]
    precision: Precision,
    /// Masking stage applied to the raw decoder output.
    #[arg(long, global = true, default_value = "soft")]
    mask_mode: MaskMode,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic audio-visual corpus.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 2.0)]
        utter_s: f64,
        #[arg(long, default_value_t = -5.0)]
        snr_min: f64,
        #[arg(long, default_value_t = 5.0)]
        snr_max: f64,
        /// white | babble
        #[arg(long, default_value = "white")]
        noise: String,
    },
    /// Train on a synthesized corpus directory.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Held-out items taken from the end of the corpus.
        #[arg(long, default_value_t = 4)]
        val_count: usize,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 4)]
        batch: usize,
        #[arg(long, default_value_t = 1e-4)]
        lr: f64,
        #[arg(long, default_value_t = 1.0)]
        segment_s: f64,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Enhance one noisy WAV with its visual stream (.vft or .vfr).
    Enhance {
        input: PathBuf,
        visual: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Frame rate assumed for raw .vfr streams.
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
    },
    /// Score a corpus directory into a report CSV.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Score only the last N items (the training holdout).
        #[arg(long)]
        val_count: Option<usize>,
    },
    /// HIT/FA of an estimate's binary mask against the ground-truth IBM.
    MaskEval {
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        noisy: PathBuf,
        #[arg(long)]
        est: PathBuf,
    },
    /// Report parameters, memory and real-time factor.
    Bench {
        #[arg(long, default_value_t = 4.0)]
        duration_s: f64,
        #[arg(long, default_value_t = 1.0)]
        chunk_s: f64,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long, default_value_t = 1)]
        warmup: usize,
        #[arg(long)]
        ckpt: Option<PathBuf>,
    },
    /// Cross-modal correlation diagnostics for one utterance.
    Diag {
        input: PathBuf,
        visual: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        max_lag: usize,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 25.0)]
        fps: f64,
    },
}

/// Corpus manifest written by `synth` and read by `train`/`eval`.
#[derive(serde::Serialize, serde::Deserialize)]
struct CorpusIndex {
    sample_rate: u32,
    d_v: usize,
    fps: f64,
    items: Vec<CorpusEntry>,
}

#[derive(serde::Serialize, serde::Deserialize)]
struct CorpusEntry {
    utt: String,
    cond: String,
    snr_db: f64,
    clean: String,
    noisy: String,
    noise: String,
    visual: String,
}

/// Write through a temp sibling so failures never leave a partial file.
fn write_atomic(path: &Path, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let mut name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{}: not a file path", path.display())))?
        .to_os_string();
    name.push(".tmp");
    let tmp = path.with_file_name(name);
    f(&tmp)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn load_config(cli: &Cli) -> Result<ModelConfig> {
    let cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => ModelConfig::preset(&cli.preset)?,
    };
    cfg.validate()?;
    Ok(cfg)
}

fn load_model(cli: &Cli, ckpt: Option<&Path>) -> Result<Model> {
    let cfg = load_config(cli)?;
    let fingerprint = cfg.fingerprint();
    let mut model = Model::new(cfg, cli.seed)?;
    if let Some(path) = ckpt {
        load_checkpoint(path, fingerprint, &mut model.params)?;
    }
    Ok(model)
}

fn read_visual(path: &Path, fps: f64) -> Result<VisualStream> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("vft") => read_vft(path),
        Some("vfr") => read_vfr(path, fps),
        _ => Err(Error::Usage(format!(
            "{}: expected a .vft or .vfr visual stream",
            path.display()
        ))),
    }
}

fn load_index(data: &Path) -> Result<CorpusIndex> {
    let path = data.join("index.json");
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn load_corpus_items(data: &Path, index: &CorpusIndex) -> Result<Vec<SynthItem>> {
    index
        .items
        .iter()
        .map(|e| {
            let visual = match read_vft(&data.join(&e.visual))? {
                VisualStream::Features { data, n, d_v, .. } => {
                    if d_v != index.d_v {
                        return Err(Error::shape_mismatch("corpus d_v", &[d_v], &[index.d_v]));
                    }
                    (data, n)
                }
                VisualStream::Frames { .. } => {
                    return Err(Error::Format(format!("{}: expected features, found frames", e.visual)))
                }
            };
            Ok(SynthItem {
                clean: read_wav(&data.join(&e.clean))?,
                noise: read_wav(&data.join(&e.noise))?,
                noisy: read_wav(&data.join(&e.noisy))?,
                visual: visual.0,
                n_frames: visual.1,
                d_v: index.d_v,
                snr_db: e.snr_db,
                cond: e.cond.clone(),
            })
        })
        .collect()
}

fn enhance_item(
    model: &Model,
    noisy: &Waveform,
    visual: &VisualStream,
    p: &StftParams,
    mode: MaskMode,
    precision: Precision,
) -> Result<avse::model::EnhanceOutput> {
    match precision {
        Precision::F32 => model.enhance::<f32>(noisy, visual, p, mode),
        Precision::F64 => model.enhance::<f64>(noisy, visual, p, mode),
    }
}

fn cmd_synth(
    cli: &Cli,
    out: &Path,
    count: usize,
    utter_s: f64,
    snr_min: f64,
    snr_max: f64,
    noise: &str,
) -> Result<ExitCode> {
    let cfg = load_config(cli)?;
    let noise = match noise {
        "white" => NoiseKind::White,
        "babble" => NoiseKind::Babble,
        other => return Err(Error::Usage(format!("unknown noise kind '{other}'"))),
    };
    let spec = SynthSpec {
        seed: cli.seed,
        utter_s,
        snr_db_min: snr_min,
        snr_db_max: snr_max,
        noise,
        fps: cfg.fps,
        sample_rate: cfg.sample_rate,
        d_v: cfg.d_v,
    };
    let items = synth_batch(&spec, count)?;
    std::fs::create_dir_all(out)?;
    let mut entries = Vec::with_capacity(items.len());
    for (i, item) in items.iter().enumerate() {
        let utt = format!("utt_{i:04}");
        let files = [
            (format!("{utt}.clean.wav"), &item.clean),
            (format!("{utt}.noisy.wav"), &item.noisy),
            (format!("{utt}.noise.wav"), &item.noise),
        ];
        for (name, wave) in &files {
            write_atomic(&out.join(name), |tmp| write_wav(tmp, wave))?;
        }
        let visual = format!("{utt}.vft");
        write_atomic(&out.join(&visual), |tmp| {
            write_vft(tmp, &item.visual, item.n_frames, item.d_v, spec.fps)
        })?;
        entries.push(CorpusEntry {
            utt,
            cond: item.cond.clone(),
            snr_db: item.snr_db,
            clean: files[0].0.clone(),
            noisy: files[1].0.clone(),
            noise: files[2].0.clone(),
            visual,
        });
    }
    let index = CorpusIndex {
        sample_rate: cfg.sample_rate,
        d_v: cfg.d_v,
        fps: cfg.fps,
        items: entries,
    };
    write_atomic(&out.join("index.json"), |tmp| {
        let text = serde_json::to_string_pretty(&index).expect("index serializes");
        std::fs::write(tmp, text)?;
        Ok(())
    })?;
    println!("wrote {count} utterances to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    cli: &Cli,
    data: &Path,
    out: &Path,
    val_count: usize,
    epochs: usize,
    batch: usize,
    lr: f64,
    segment_s: f64,
    resume: Option<&Path>,
) -> Result<ExitCode> {
    let mut model = load_model(cli, None)?;
    let index = load_index(data)?;
    let items = load_corpus_items(data, &index)?;
    if val_count == 0 || val_count >= items.len() {
        return Err(Error::Config(format!(
            "val count {val_count} must leave a non-empty training split of the {} items",
            items.len()
        )));
    }
    let split = items.len() - val_count;
    let (train_items, val_items) = items.split_at(split);
    let cfg = TrainConfig {
        lr,
        batch,
        epochs,
        segment_s,
        seed: cli.seed,
        ..TrainConfig::default()
    };
    std::fs::create_dir_all(out)?;
    let outcome = train(&mut model, train_items, val_items, &cfg, Some(out), resume)?;
    for s in &outcome.stats {
        println!(
            "epoch {:3}  train {:8.3}  val {:8.3}  val si-sdr {:7.3} dB  lr {:.2e}",
            s.epoch, s.train_loss, s.val_loss, s.val_sisdr, s.lr
        );
    }
    write_atomic(&out.join("loss_curve.csv"), |tmp| {
        std::fs::write(tmp, loss_curve_csv(&outcome.stats))?;
        Ok(())
    })?;
    println!(
        "best epoch {} (val loss {:.3}); checkpoints in {}",
        outcome.best_epoch,
        outcome.best_val_loss,
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_enhance(
    cli: &Cli,
    input: &Path,
    visual: &Path,
    out: &Path,
    ckpt: Option<&Path>,
    fps: f64,
) -> Result<ExitCode> {
    let model = load_model(cli, ckpt)?;
    let noisy = read_wav(input)?;
    let stream = read_visual(visual, fps)?;
    let p = StftParams::default();
    let result = enhance_item(&model, &noisy, &stream, &p, cli.mask_mode, cli.precision)?;
    write_atomic(out, |tmp| write_wav(tmp, &result.enhanced))?;
    println!(
        "enhanced {} ({:.2} s) -> {}",
        input.display(),
        noisy.duration_s(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(
    cli: &Cli,
    data: &Path,
    out: &Path,
    ckpt: Option<&Path>,
    val_count: Option<usize>,
) -> Result<ExitCode> {
    let model = load_model(cli, ckpt)?;
    let index = load_index(data)?;
    let entries: Vec<&CorpusEntry> = match val_count {
        Some(k) if k <= index.items.len() => index.items.iter().rev().take(k).rev().collect(),
        Some(k) => {
            return Err(Error::Config(format!(
                "val count {k} exceeds the {}-item corpus",
                index.items.len()
            )))
        }
        None => index.items.iter().collect(),
    };
    let p = StftParams::default();
    let mode = cli.mask_mode;
    let scored: Vec<std::result::Result<EvalItem, (String, String)>> = par_map(&entries, |e| {
        let run = || -> Result<EvalItem> {
            let clean = read_wav(&data.join(&e.clean))?;
            let noisy = read_wav(&data.join(&e.noisy))?;
            let noise = read_wav(&data.join(&e.noise))?;
            let stream = read_vft(&data.join(&e.visual))?;
            let enh = enhance_item(&model, &noisy, &stream, &p, mode, cli.precision)?;
            let masks = match &enh.mask {
                Some(m) => {
                    let reference = ibm(&stft(&clean, &p)?, &stft(&noise, &p)?)?;
                    Some((m.binary.clone(), reference))
                }
                None => None,
            };
            Ok(EvalItem {
                utt: e.utt.clone(),
                cond: e.cond.clone(),
                snr_db: e.snr_db,
                clean,
                noisy,
                enhanced: enh.enhanced,
                masks,
                pesq: None,
            })
        };
        run().map_err(|err| (e.utt.clone(), err.to_string()))
    });
    let mut items = Vec::new();
    let mut failures = Vec::new();
    for r in scored {
        match r {
            Ok(item) => items.push(item),
            Err(f) => failures.push(f),
        }
    }
    let mut report = evaluate_corpus(&items);
    report.failures.splice(0..0, failures);
    write_atomic(out, |tmp| {
        std::fs::write(tmp, report.to_csv())?;
        Ok(())
    })?;
    if let Some(agg) = report.aggregate() {
        println!(
            "{} items  si-sdr {:.3} -> {:.3} dB  stoi {:.3} -> {:.3}",
            agg.n, agg.si_sdr_noisy, agg.si_sdr_enh, agg.stoi_noisy, agg.stoi_enh
        );
    }
    if report.failures.is_empty() {
        Ok(ExitCode::SUCCESS)
    } else {
        for (utt, msg) in &report.failures {
            eprintln!("failed: {utt}: {msg}");
        }
        Ok(ExitCode::from(2))
    }
}

fn cmd_mask_eval(clean: &Path, noisy: &Path, est: &Path) -> Result<ExitCode> {
    let clean = read_wav(clean)?;
    let noisy = read_wav(noisy)?;
    let est = read_wav(est)?;
    if clean.len() != noisy.len() || est.len() != noisy.len() {
        return Err(Error::Dim("clean, noisy and estimate lengths differ".into()));
    }
    let p = StftParams::default();
    let residual = |a: &Waveform, b: &Waveform| {
        Waveform::new(
            a.samples.iter().zip(&b.samples).map(|(x, y)| x - y).collect(),
            a.rate,
        )
    };
    let noise = residual(&noisy, &clean)?;
    let est_noise = residual(&noisy, &est)?;
    let reference = ibm(&stft(&clean, &p)?, &stft(&noise, &p)?)?;
    let estimated = ibm(&stft(&est, &p)?, &stft(&est_noise, &p)?)?;
    let score = hit_fa(&estimated, &reference)?;
    println!(
        "hit {:.4}  fa {:.4}  hit-fa {:.4}  acc {:.4}",
        score.hit, score.fa, score.hit_minus_fa, score.accuracy
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(
    cli: &Cli,
    duration_s: f64,
    chunk_s: f64,
    reps: usize,
    warmup: usize,
    ckpt: Option<&Path>,
) -> Result<ExitCode> {
    use rand::{Rng, SeedableRng};
    let model = load_model(cli, ckpt)?;
    let cfg = &model.cfg;
    let rate = cfg.sample_rate as f64;
    let chunk_t = ((chunk_s * rate) as usize).max(StftParams::default().window_len);
    let chunks = ((duration_s * rate) as usize).div_ceil(chunk_t).max(1);
    let total_s = (chunks * chunk_t) as f64 / rate;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cli.seed);
    let n_frames = (chunk_t as f64 / rate * cfg.fps).ceil().max(2.0) as usize;
    let inputs: Vec<(Waveform, VisualStream)> = (0..chunks)
        .map(|_| {
            let w = Waveform::new(
                (0..chunk_t).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                cfg.sample_rate,
            )
            .expect("bench audio");
            let v = VisualStream::Features {
                data: (0..n_frames * cfg.d_v).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                n: n_frames,
                d_v: cfg.d_v,
                fps: cfg.fps,
            };
            (w, v)
        })
        .collect();
    let p = StftParams::default();
    let stats = bench_rtf(total_s, chunks, reps, warmup, |c| {
        let (w, v) = &inputs[c];
        enhance_item(&model, w, v, &p, cli.mask_mode, cli.precision)?;
        Ok(())
    })?;
    let bytes_per_elem = match cli.precision {
        Precision::F32 => 4,
        Precision::F64 => 8,
    };
    let count = model.param_count();
    println!("params              {count}");
    println!("weight bytes        {}", count * bytes_per_elem);
    println!(
        "peak activation     {} bytes (analytic, {:.1} s input)",
        peak_activation_bytes(cfg, chunk_t, bytes_per_elem),
        chunk_t as f64 / rate
    );
    println!("rtf                 {:.4}", stats.rtf);
    println!("chunk latency mean  {:.2} ms", stats.chunk_ms_mean);
    println!("chunk latency p95   {:.2} ms", stats.chunk_ms_p95);
    Ok(ExitCode::SUCCESS)
}

fn cmd_diag(
    cli: &Cli,
    input: &Path,
    visual: &Path,
    out: &Path,
    max_lag: usize,
    ckpt: Option<&Path>,
    fps: f64,
) -> Result<ExitCode> {
    let model = load_model(cli, ckpt)?;
    let cfg = &model.cfg;
    if cfg.audio_channels != cfg.d_v {
        return Err(Error::Alignment(format!(
            "cross-modal diagnostics need matching feature widths, got audio {} vs visual {}",
            cfg.audio_channels, cfg.d_v
        )));
    }
    let noisy = read_wav(input)?;
    let stream = read_visual(visual, fps)?;
    let t = noisy.len();
    let t_hat = cfg.latent_len(t);
    let feats = model.visual_features(&stream)?;
    let aligned = model.align_visual(&feats, stream.n(), t)?;
    let mut tape: Tape<f64> = Tape::inference(0);
    let bound = model.params.bind_frozen(&mut tape);
    let a = tape.leaf_f64(&[1, 1, t], &noisy.samples);
    let z = model.audio_enc.forward(&mut tape, &bound, a)?;
    let zt = tape.permute(z, &[0, 2, 1])?; // 1×T̂×C
    let audio_lat = tape.value_f64(zt);
    let report = diag_crossmodal(&audio_lat, &aligned, t_hat, cfg.d_v, max_lag)?;
    std::fs::create_dir_all(out)?;
    write_atomic(&out.join("matrix.csv"), |tmp| {
        std::fs::write(tmp, report.matrix_csv())?;
        Ok(())
    })?;
    write_atomic(&out.join("lag.csv"), |tmp| {
        std::fs::write(tmp, report.lag_csv())?;
        Ok(())
    })?;
    match report.peak_lag {
        Some(l) => println!("peak lag {l:+} frames over ±{max_lag}"),
        None => println!("lag curve undefined (constant feature streams)"),
    }
    Ok(ExitCode::SUCCESS)
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.cmd {
        Cmd::Synth {
            out,
            count,
            utter_s,
            snr_min,
            snr_max,
            noise,
        } => cmd_synth(cli, out, *count, *utter_s, *snr_min, *snr_max, noise),
        Cmd::Train {
            data,
            out,
            val_count,
            epochs,
            batch,
            lr,
            segment_s,
            resume,
        } => cmd_train(
            cli,
            data,
            out,
            *val_count,
            *epochs,
            *batch,
            *lr,
            *segment_s,
            resume.as_deref(),
        ),
        Cmd::Enhance {
            input,
            visual,
            out,
            ckpt,
            fps,
        } => cmd_enhance(cli, input, visual, out, ckpt.as_deref(), *fps),
        Cmd::Eval {
            data,
            out,
            ckpt,
            val_count,
        } => cmd_eval(cli, data, out, ckpt.as_deref(), *val_count),
        Cmd::MaskEval { clean, noisy, est } => cmd_mask_eval(clean, noisy, est),
        Cmd::Bench {
            duration_s,
            chunk_s,
            reps,
            warmup,
            ckpt,
        } => cmd_bench(cli, *duration_s, *chunk_s, *reps, *warmup, ckpt.as_deref()),
        Cmd::Diag {
            input,
            visual,
            out,
            max_lag,
            ckpt,
            fps,
        } => cmd_diag(cli, input, visual, out, *max_lag, ckpt.as_deref(), *fps),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
