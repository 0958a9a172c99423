use super::MfccSequence;
use crate::error::{Error, Result};

/// Numerator of the RASTA band-pass, `0.1 * (2 + z^-1 - z^-3 - 2 z^-4)`.
pub const RASTA_B: [f64; 5] = [0.2, 0.1, 0.0, -0.1, -0.2];
/// Pole of the RASTA band-pass denominator `1 - 0.98 z^-1`.
pub const RASTA_POLE: f64 = 0.98;

/// Filters each cepstral trajectory along time with the RASTA band-pass,
/// starting from a zero filter state.
pub fn rasta_filter(seq: &MfccSequence) -> Result<MfccSequence> {
    let frames = seq.frames();
    if frames < RASTA_B.len() {
        return Err(Error::TooFewFrames {
            got: frames,
            need: RASTA_B.len(),
        });
    }
    let mut out = seq.clone();
    for d in 0..seq.dim() {
        let x: Vec<f64> = (0..frames).map(|t| seq.coeffs.get(t, d)).collect();
        let y = filter_trajectory(&x);
        for (t, v) in y.into_iter().enumerate() {
            out.coeffs.set(t, d, v);
        }
    }
    Ok(out)
}

pub(crate) fn filter_trajectory(x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    let mut prev = 0.0;
    for t in 0..x.len() {
        let mut acc = 0.0;
        for (k, b) in RASTA_B.iter().enumerate() {
            if t >= k {
                acc += b * x[t - k];
            }
        }
        prev = acc + RASTA_POLE * prev;
        y[t] = prev;
    }
    y
}
