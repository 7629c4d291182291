use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Bilinearly resamples a `[rows * cols, hidden]` positional table onto a
/// `target_rows x target_cols` grid.
pub fn interpolate_pos_embed<F: Float>(
    embed: &Tensor<F>,
    rows: usize,
    cols: usize,
    target_rows: usize,
    target_cols: usize,
) -> Result<Tensor<F>> {
    let (len, hidden) = match *embed.shape() {
        [l, h] => (l, h),
        _ => return Err(Error::ShapeMismatch(format!("positional table {:?}", embed.shape()))),
    };
    if rows * cols != len || rows == 0 || cols == 0 {
        return Err(Error::BadGrid { len, rows, cols });
    }
    if target_rows == 0 || target_cols == 0 {
        return Err(Error::BadGrid {
            len,
            rows: target_rows,
            cols: target_cols,
        });
    }
    if (rows, cols) == (target_rows, target_cols) {
        return Ok(embed.clone());
    }
    let grid = embed.reshape(&[1, rows, cols, hidden])?.permute(&[0, 3, 1, 2])?;
    let resized = grid.resize_bilinear(target_rows, target_cols)?;
    Ok(resized
        .permute(&[0, 2, 3, 1])?
        .reshape(&[target_rows * target_cols, hidden])?)
}
