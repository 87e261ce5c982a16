//! Scale-invariant SDR: the reporting metric and the differentiable training
//! loss.

use super::Waveform;
use crate::error::{Error, Result};
use crate::kernel::{Scalar, Tape, Var};

/// Reporting cap for the otherwise unbounded ratio (perfect or orthogonal
/// estimates).
pub const SI_SDR_CAP_DB: f64 = 60.0;
/// Training loss clip.
pub const LOSS_CLIP_DB: f64 = -30.0;

/// How the target term is scaled before the energy ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scaling {
    /// Optimal projection α = ⟨x̂,x⟩/‖x‖², which makes the metric invariant
    /// to positive rescaling of the estimate.
    Projection,
    /// α fixed to 1: a plain SNR, kept for comparison.
    Unit,
}

/// SI-SDR in dB: 10·log10(‖αx‖² / ‖x̂ − αx‖²), capped at ±[`SI_SDR_CAP_DB`].
pub fn si_sdr(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    si_sdr_with_scaling(reference, estimate, Scaling::Projection)
}

pub fn si_sdr_with_scaling(
    reference: &Waveform,
    estimate: &Waveform,
    scaling: Scaling,
) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::shape_mismatch(
            "si_sdr lengths",
            &[reference.len()],
            &[estimate.len()],
        ));
    }
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::UndefinedReference(
            "si_sdr reference signal is all-zero".into(),
        ));
    }
    let alpha = match scaling {
        Scaling::Unit => 1.0,
        Scaling::Projection => {
            let dot: f64 = estimate
                .samples
                .iter()
                .zip(&reference.samples)
                .map(|(&e, &r)| e * r)
                .sum();
            dot / ref_energy
        }
    };
    let target_energy = alpha * alpha * ref_energy;
    let residual_energy: f64 = estimate
        .samples
        .iter()
        .zip(&reference.samples)
        .map(|(&e, &r)| (e - alpha * r).powi(2))
        .sum();
    if target_energy == 0.0 {
        return Ok(-SI_SDR_CAP_DB);
    }
    if residual_energy == 0.0 {
        return Ok(SI_SDR_CAP_DB);
    }
    let db = 10.0 * (target_energy / residual_energy).log10();
    Ok(db.clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Differentiable loss −max(SI-SDR, −30) on the tape, with the optimal
/// scaling projection. `estimate` is a flat tape tensor matching
/// `reference`'s length.
pub fn si_sdr_loss<F: Scalar>(
    tape: &mut Tape<F>,
    estimate: Var,
    reference: &[f64],
) -> Result<Var> {
    let n = reference.len();
    if tape.value(estimate).len() != n {
        return Err(Error::shape_mismatch(
            "si_sdr_loss lengths",
            tape.shape(estimate),
            &[n],
        ));
    }
    let ref_energy: f64 = reference.iter().map(|&r| r * r).sum();
    if ref_energy == 0.0 {
        return Err(Error::UndefinedReference(
            "si_sdr_loss reference signal is all-zero".into(),
        ));
    }
    let est_flat = tape.reshape(estimate, &[n])?;
    let ref_leaf = tape.leaf_f64(&[n], reference);
    let prod = tape.mul(est_flat, ref_leaf)?;
    let dot = tape.sum_all(prod);
    let alpha = tape.scale(dot, 1.0 / ref_energy);
    // target = α·x, broadcast of the scalar over the reference samples
    let target = tape.mul_broadcast(ref_leaf, alpha)?;
    let tsq = tape.mul(target, target)?;
    let target_energy = tape.sum_all(tsq);
    let resid = tape.sub(est_flat, target)?;
    let rsq = tape.mul(resid, resid)?;
    let resid_energy = tape.sum_all(rsq);
    // Tiny offsets keep the logs finite at the degenerate extremes; the
    // clips below engage long before they matter numerically.
    let te = tape.add_const(target_energy, 1e-30);
    let re = tape.add_const(resid_energy, 1e-30);
    let ln_t = tape.ln(te);
    let ln_r = tape.ln(re);
    let diff = tape.sub(ln_t, ln_r)?;
    let sisdr = tape.scale(diff, 10.0 / std::f64::consts::LN_10);
    let clipped = tape.max_const(sisdr, LOSS_CLIP_DB);
    let neg = tape.neg(clipped);
    Ok(tape.max_const(neg, -SI_SDR_CAP_DB))
}
