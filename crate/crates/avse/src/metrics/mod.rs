//! Objective evaluation: SI-SDR, STOI and binary-mask accuracy metrics,
//! plus corpus-level report assembly.

mod stoi;

pub use stoi::stoi;

use crate::dsp::{si_sdr, BinaryMask, Waveform};
use crate::error::{Error, Result};

/// HIT/FA scores of an estimated mask against a reference mask.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskScore {
    /// True-positive rate over reference-one bins.
    pub hit: f64,
    /// False-positive rate over reference-zero bins.
    pub fa: f64,
    pub hit_minus_fa: f64,
    /// Overall bin agreement.
    pub accuracy: f64,
}

/// HIT = TP/(reference ones), FA = FP/(reference zeros),
/// accuracy = agreeing bins / all bins.
pub fn hit_fa(est: &BinaryMask, reference: &BinaryMask) -> Result<MaskScore> {
    if est.frames != reference.frames || est.bins != reference.bins {
        return Err(Error::shape_mismatch(
            "hit_fa masks",
            &[est.frames, est.bins],
            &[reference.frames, reference.bins],
        ));
    }
    let ones = reference.values.iter().filter(|&&v| v == 1).count();
    let zeros = reference.values.len() - ones;
    if ones == 0 {
        return Err(Error::DegenerateMask(
            "hit-rate denominator undefined: reference mask has no speech-dominant bins".into(),
        ));
    }
    if zeros == 0 {
        return Err(Error::DegenerateMask(
            "false-alarm denominator undefined: reference mask has no noise-dominant bins".into(),
        ));
    }
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut agree = 0usize;
    for (&e, &r) in est.values.iter().zip(&reference.values) {
        if e == r {
            agree += 1;
        }
        match (e, r) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            _ => {}
        }
    }
    let hit = tp as f64 / ones as f64;
    let fa = fp as f64 / zeros as f64;
    Ok(MaskScore {
        hit,
        fa,
        hit_minus_fa: hit - fa,
        accuracy: agree as f64 / reference.values.len() as f64,
    })
}

/// One utterance to score: aligned clean/noisy/enhanced signals with its
/// noise-condition label, plus optional (estimated, reference) masks and an
/// externally computed PESQ value.
pub struct EvalItem {
    pub utt: String,
    pub cond: String,
    pub snr_db: f64,
    pub clean: Waveform,
    pub noisy: Waveform,
    pub enhanced: Waveform,
    pub masks: Option<(BinaryMask, BinaryMask)>,
    pub pesq: Option<f64>,
}

/// Scored metrics for one utterance.
#[derive(Debug, Clone)]
pub struct EvalRow {
    pub utt: String,
    pub cond: String,
    pub snr_db: f64,
    pub si_sdr_noisy: f64,
    pub si_sdr_enh: f64,
    pub stoi_noisy: f64,
    pub stoi_enh: f64,
    pub mask: Option<MaskScore>,
    pub pesq: Option<f64>,
}

/// Per-utterance rows plus the items that failed to score.
#[derive(Debug, Clone, Default)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    pub failures: Vec<(String, String)>,
}

/// Arithmetic means over the scored rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub n: usize,
    pub si_sdr_noisy: f64,
    pub si_sdr_enh: f64,
    pub stoi_noisy: f64,
    pub stoi_enh: f64,
}

pub const REPORT_HEADER: &str =
    "utt,cond,snr_db,si_sdr_noisy,si_sdr_enh,stoi_noisy,stoi_enh,hit,fa,hit_fa,acc,pesq";

/// Score every item; failures are recorded and skipped rather than aborting
/// the run.
pub fn evaluate_corpus(items: &[EvalItem]) -> EvalReport {
    let mut report = EvalReport::default();
    for item in items {
        match score_item(item) {
            Ok(row) => report.rows.push(row),
            Err(e) => report.failures.push((item.utt.clone(), e.to_string())),
        }
    }
    report
}

fn score_item(item: &EvalItem) -> Result<EvalRow> {
    let mask = match &item.masks {
        Some((est, reference)) => Some(hit_fa(est, reference)?),
        None => None,
    };
    Ok(EvalRow {
        utt: item.utt.clone(),
        cond: item.cond.clone(),
        snr_db: item.snr_db,
        si_sdr_noisy: si_sdr(&item.clean, &item.noisy)?,
        si_sdr_enh: si_sdr(&item.clean, &item.enhanced)?,
        stoi_noisy: stoi(&item.clean, &item.noisy)?,
        stoi_enh: stoi(&item.clean, &item.enhanced)?,
        mask,
        pesq: item.pesq,
    })
}

impl EvalReport {
    pub fn aggregate(&self) -> Option<Aggregate> {
        if self.rows.is_empty() {
            return None;
        }
        let n = self.rows.len() as f64;
        Some(Aggregate {
            n: self.rows.len(),
            si_sdr_noisy: self.rows.iter().map(|r| r.si_sdr_noisy).sum::<f64>() / n,
            si_sdr_enh: self.rows.iter().map(|r| r.si_sdr_enh).sum::<f64>() / n,
            stoi_noisy: self.rows.iter().map(|r| r.stoi_noisy).sum::<f64>() / n,
            stoi_enh: self.rows.iter().map(|r| r.stoi_enh).sum::<f64>() / n,
        })
    }

    /// UTF-8 CSV, "." decimal separator, 6 significant digits; mask and PESQ
    /// columns are left empty when unavailable.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_HEADER);
        out.push('\n');
        for r in &self.rows {
            let opt = |v: Option<f64>| v.map(|x| fmt_sig(x, 6)).unwrap_or_default();
            let line = format!(
                "{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.utt,
                r.cond,
                fmt_sig(r.snr_db, 6),
                fmt_sig(r.si_sdr_noisy, 6),
                fmt_sig(r.si_sdr_enh, 6),
                fmt_sig(r.stoi_noisy, 6),
                fmt_sig(r.stoi_enh, 6),
                opt(r.mask.map(|m| m.hit)),
                opt(r.mask.map(|m| m.fa)),
                opt(r.mask.map(|m| m.hit_minus_fa)),
                opt(r.mask.map(|m| m.accuracy)),
                opt(r.pesq),
            );
            out.push_str(&line);
        }
        out
    }
}

/// Decimal formatting with `sig` significant digits.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let magnitude = x.abs().log10().floor() as i32;
    let decimals = (sig as i32 - 1 - magnitude).max(0) as usize;
    format!("{x:.decimals$}")
}
