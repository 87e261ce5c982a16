//! GRU cell built from tape primitives, so its backward pass comes for free.

use super::tape::{Scalar, Tape, Var};
use crate::error::{Error, Result};

/// Tape handles for one GRU's parameters.
///
/// Weight layout follows the stacked-gate convention: `w_ih: [3·D_h, D_in]`,
/// `w_hh: [3·D_h, D_h]`, biases `[3·D_h]`, gate order (reset, update,
/// candidate).
#[derive(Clone, Copy)]
pub struct GruVars {
    pub w_ih: Var,
    pub w_hh: Var,
    pub b_ih: Var,
    pub b_hh: Var,
}

/// One GRU step: `x_t: B×D_in`, `h_prev: B×D_h` → `B×D_h`.
///
/// r = σ(W_ir·x + b_ir + W_hr·h + b_hr)
/// z = σ(W_iz·x + b_iz + W_hz·h + b_hz)
/// n = tanh(W_in·x + b_in + r ⊙ (W_hn·h + b_hn))
/// h' = (1 − z) ⊙ n + z ⊙ h
pub fn gru_cell<F: Scalar>(
    tape: &mut Tape<F>,
    x_t: Var,
    h_prev: Var,
    p: &GruVars,
) -> Result<Var> {
    let d3 = tape.shape(p.w_ih)[0];
    if d3 % 3 != 0 {
        return Err(Error::Dim(format!("gru weight rows {d3} not divisible by 3")));
    }
    let d_h = d3 / 3;
    if tape.shape(h_prev).last() != Some(&d_h) {
        return Err(Error::shape_mismatch("gru hidden", tape.shape(h_prev), &[d_h]));
    }
    let gi = tape.linear(x_t, p.w_ih, Some(p.b_ih))?; // B×3Dh
    let gh = tape.linear(h_prev, p.w_hh, Some(p.b_hh))?;
    let i_r = tape.narrow(gi, 1, 0, d_h)?;
    let i_z = tape.narrow(gi, 1, d_h, d_h)?;
    let i_n = tape.narrow(gi, 1, 2 * d_h, d_h)?;
    let h_r = tape.narrow(gh, 1, 0, d_h)?;
    let h_z = tape.narrow(gh, 1, d_h, d_h)?;
    let h_n = tape.narrow(gh, 1, 2 * d_h, d_h)?;

    let r_pre = tape.add(i_r, h_r)?;
    let r = tape.sigmoid(r_pre);
    let z_pre = tape.add(i_z, h_z)?;
    let z = tape.sigmoid(z_pre);
    let gated = tape.mul(r, h_n)?;
    let n_pre = tape.add(i_n, gated)?;
    let n = tape.tanh(n_pre);

    // h' = n + z ⊙ (h − n)
    let diff = tape.sub(h_prev, n)?;
    let blended = tape.mul(z, diff)?;
    tape.add(n, blended)
}
