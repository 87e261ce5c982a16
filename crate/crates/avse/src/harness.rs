//! Performance accounting (parameters, memory, real-time factor) and
//! cross-modal diagnostics, plus the small worker pool used for corpus runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::model::ModelConfig;

/// Performance summary for one model/run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub param_count: usize,
    pub weight_bytes: usize,
    /// Analytic estimate of the largest live activation tensor.
    pub peak_activation_bytes: usize,
    /// Median processing time divided by audio duration.
    pub rtf: f64,
    pub chunk_ms_mean: f64,
    pub chunk_ms_p95: f64,
}

/// Worker cap: `AVSE_THREADS` if set, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var("AVSE_THREADS")
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        })
}

/// Map over items on the worker pool, preserving input order in the output.
pub fn par_map<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let out: Mutex<Vec<Option<R>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let r = f(&items[i]);
                out.lock().unwrap()[i] = Some(r);
            });
        }
    });
    out.into_inner().unwrap().into_iter().map(|r| r.unwrap()).collect()
}

/// Largest intermediate tensor (elements × element size) for a `t`-sample
/// mono input: encoder map, attention score block, or a dual-path chunk
/// tensor, whichever dominates.
pub fn peak_activation_bytes(cfg: &ModelConfig, t: usize, bytes_per_elem: usize) -> usize {
    let th = cfg.latent_len(t);
    let enc = cfg.audio_channels * th;
    let attn = cfg.heads * th * th;
    let hop = (cfg.chunk_len / 2).max(1);
    let segments = th / hop + 1;
    let chunks = cfg.audio_channels.max(cfg.hidden) * segments * cfg.chunk_len;
    enc.max(attn).max(chunks) * bytes_per_elem
}

/// Timing summary for repeated chunked runs.
#[derive(Debug, Clone, PartialEq)]
pub struct RtfStats {
    pub rtf: f64,
    pub median_s: f64,
    pub chunk_ms_mean: f64,
    pub chunk_ms_p95: f64,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Time `process(chunk_index)` over `chunks` chunks per repetition. The
/// first `warmup` repetitions are discarded; the reported RTF uses the
/// median repetition time.
pub fn bench_rtf<F>(
    audio_s: f64,
    chunks: usize,
    reps: usize,
    warmup: usize,
    mut process: F,
) -> Result<RtfStats>
where
    F: FnMut(usize) -> Result<()>,
{
    if audio_s <= 0.0 || chunks == 0 || reps == 0 {
        return Err(Error::Config(
            "bench needs positive duration, at least one chunk and one timed rep".into(),
        ));
    }
    let mut totals = Vec::with_capacity(reps);
    let mut chunk_times: Vec<f64> = Vec::new();
    for rep in 0..warmup + reps {
        let mut total = Duration::ZERO;
        let mut per_chunk = Vec::with_capacity(chunks);
        for c in 0..chunks {
            let start = Instant::now();
            process(c)?;
            let dt = start.elapsed();
            total += dt;
            per_chunk.push(dt.as_secs_f64() * 1e3);
        }
        if rep >= warmup {
            totals.push(total.as_secs_f64());
            chunk_times.extend(per_chunk);
        }
    }
    totals.sort_by(f64::total_cmp);
    chunk_times.sort_by(f64::total_cmp);
    let median_s = median(&totals);
    let p95_idx = ((chunk_times.len() as f64 * 0.95).ceil() as usize).clamp(1, chunk_times.len()) - 1;
    Ok(RtfStats {
        rtf: median_s / audio_s,
        median_s,
        chunk_ms_mean: chunk_times.iter().sum::<f64>() / chunk_times.len() as f64,
        chunk_ms_p95: chunk_times[p95_idx],
    })
}

/// Fig.-style cross-modal diagnostics between two aligned feature streams.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagReport {
    pub frames: usize,
    /// frames×frames row-major: audio frame i vs visual frame j. `None`
    /// marks an undefined correlation (constant feature vector).
    pub corr: Vec<Option<f64>>,
    /// Shifts −max_lag..=+max_lag, same order as `lag_curve`.
    pub lags: Vec<i64>,
    /// Mean diagonal correlation at each shift.
    pub lag_curve: Vec<Option<f64>>,
    pub peak_lag: Option<i64>,
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut dx = 0.0;
    let mut dy = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        num += (a - mx) * (b - my);
        dx += (a - mx) * (a - mx);
        dy += (b - my) * (b - my);
    }
    if dx == 0.0 || dy == 0.0 {
        return None;
    }
    Some(num / (dx * dy).sqrt())
}

/// Pearson correlation per frame pair over the feature dimension, plus the
/// mean-diagonal lag curve over shifts ±`max_lag`. Both streams must be
/// frames×dim with the same geometry.
pub fn diag_crossmodal(
    audio: &[f64],
    visual: &[f64],
    frames: usize,
    dim: usize,
    max_lag: usize,
) -> Result<DiagReport> {
    if dim == 0 || frames == 0 {
        return Err(Error::Config("diagnostics need non-empty feature streams".into()));
    }
    if audio.len() != frames * dim {
        return Err(Error::shape_mismatch("diag audio stream", &[frames, dim], &[audio.len()]));
    }
    if visual.len() != frames * dim {
        return Err(Error::Alignment(format!(
            "visual stream has {} values, expected {} ({}×{}) to match the audio stream",
            visual.len(),
            frames * dim,
            frames,
            dim
        )));
    }
    if max_lag >= frames {
        return Err(Error::Config(format!(
            "max lag {max_lag} must be smaller than the {frames}-frame stream"
        )));
    }
    let row = |buf: &[f64], i: usize| -> Vec<f64> { buf[i * dim..(i + 1) * dim].to_vec() };
    let mut corr = Vec::with_capacity(frames * frames);
    for i in 0..frames {
        let a = row(audio, i);
        for j in 0..frames {
            corr.push(pearson(&a, &row(visual, j)));
        }
    }
    let mut lags = Vec::new();
    let mut lag_curve = Vec::new();
    for s in -(max_lag as i64)..=max_lag as i64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..frames {
            let j = i as i64 + s;
            if j < 0 || j >= frames as i64 {
                continue;
            }
            if let Some(c) = corr[i * frames + j as usize] {
                sum += c;
                count += 1;
            }
        }
        lags.push(s);
        lag_curve.push(if count == 0 { None } else { Some(sum / count as f64) });
    }
    let peak_lag = lags
        .iter()
        .zip(&lag_curve)
        .filter_map(|(&l, c)| c.map(|c| (l, c)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(l, _)| l);
    Ok(DiagReport {
        frames,
        corr,
        lags,
        lag_curve,
        peak_lag,
    })
}

impl DiagReport {
    /// Frame-pair matrix as CSV; undefined entries leave the cell empty.
    pub fn matrix_csv(&self) -> String {
        let mut out = String::from("i,j,corr\n");
        for i in 0..self.frames {
            for j in 0..self.frames {
                match self.corr[i * self.frames + j] {
                    Some(c) => out.push_str(&format!("{i},{j},{c:.6}\n")),
                    None => out.push_str(&format!("{i},{j},\n")),
                }
            }
        }
        out
    }

    pub fn lag_csv(&self) -> String {
        let mut out = String::from("lag,corr\n");
        for (l, c) in self.lags.iter().zip(&self.lag_curve) {
            match c {
                Some(c) => out.push_str(&format!("{l},{c:.6}\n")),
                None => out.push_str(&format!("{l},\n")),
            }
        }
        out
    }
}
