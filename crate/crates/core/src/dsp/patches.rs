use super::{Matrix, Spectrogram};
use crate::error::{Error, Result};

/// Non-overlapping square patches covering the first `K * side` frames of a
/// spectrogram, plus the trailing frames that do not fill a patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patches: Vec<Matrix>,
    pub source_frames: usize,
    pub patch_side: usize,
}

impl PatchGrid {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Splits `spec` into `floor(T / M)` patches of `M x M` cells, `M` being the
/// bin count. Returns the grid and the remainder (`T mod M` frames, possibly
/// zero-width) which callers re-attach untouched.
pub fn split_patches(spec: &Spectrogram) -> Result<(PatchGrid, Spectrogram)> {
    let side = spec.bins();
    let frames = spec.frames();
    if side == 0 || frames < side {
        return Err(Error::RecordingTooShort {
            frames,
            need: side.max(1),
        });
    }
    let k = frames / side;
    let patches = (0..k)
        .map(|i| spec.values.columns(i * side, (i + 1) * side))
        .collect();
    let remainder = spec.with_values(spec.values.columns(k * side, frames), spec.origin);
    Ok((
        PatchGrid {
            patches,
            source_frames: frames,
            patch_side: side,
        },
        remainder,
    ))
}

/// Concatenates patches and the remainder along time. The result takes its
/// metadata from `remainder`.
pub fn assemble_patches(grid: &PatchGrid, remainder: &Spectrogram) -> Result<Spectrogram> {
    let side = grid.patch_side;
    for (i, p) in grid.patches.iter().enumerate() {
        if p.shape() != (side, side) {
            return Err(Error::ShapeMismatch(format!(
                "patch {i} is {}x{}, expected {side}x{side}",
                p.rows(),
                p.cols()
            )));
        }
    }
    if remainder.bins() != side {
        return Err(Error::ShapeMismatch(format!(
            "remainder has {} bins, patches have {side}",
            remainder.bins()
        )));
    }
    let mut parts: Vec<&Matrix> = grid.patches.iter().collect();
    parts.push(&remainder.values);
    let values = Matrix::hconcat(&parts)?;
    Ok(remainder.with_values(values, remainder.origin))
}
