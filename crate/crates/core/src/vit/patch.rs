use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Flattened non-overlapping patches of one image, row-major over the grid.
#[derive(Debug, Clone)]
pub struct TokenGrid<F: Float = f32> {
    pub rows: usize,
    pub cols: usize,
    /// `[rows * cols, patch * patch * channels]`
    pub tokens: Tensor<F>,
}

fn hwc<F: Float>(t: &Tensor<F>) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [h, w, c] => Ok((h, w, c)),
        _ => Err(Error::ShapeMismatch(format!("expected an HxWxC image, got {:?}", t.shape()))),
    }
}

/// Splits an `[h, w, c]` image into `patch x patch` tokens.
pub fn patchify<F: Float>(image: &Tensor<F>, patch: usize) -> Result<TokenGrid<F>> {
    let (h, w, c) = hwc(image)?;
    let batched = image.reshape(&[1, h, w, c])?;
    let tokens = patchify_batch(&batched, patch)?;
    let (rows, cols) = (h / patch, w / patch);
    Ok(TokenGrid {
        rows,
        cols,
        tokens: tokens.reshape(&[rows * cols, patch * patch * c])?,
    })
}

/// Inverse of [`patchify`].
pub fn unpatchify<F: Float>(grid: &TokenGrid<F>, patch: usize, channels: usize) -> Result<Tensor<F>> {
    let n = grid.rows * grid.cols;
    let batched = grid.tokens.reshape(&[1, n, patch * patch * channels])?;
    let img = unpatchify_batch(&batched, grid.rows, grid.cols, patch, channels)?;
    Ok(img.reshape(&[grid.rows * patch, grid.cols * patch, channels])?)
}

/// `[n, h, w, c]` to `[n, rows * cols, patch * patch * c]`.
pub fn patchify_batch<F: Float>(images: &Tensor<F>, patch: usize) -> Result<Tensor<F>> {
    let [n, h, w, c] = match *images.shape() {
        [a, b, c, d] => [a, b, c, d],
        _ => return Err(Error::ShapeMismatch(format!("expected [n,h,w,c], got {:?}", images.shape()))),
    };
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::IndivisibleImage { height: h, width: w, patch });
    }
    let (rows, cols) = (h / patch, w / patch);
    Ok(images
        .reshape(&[n, rows, patch, cols, patch, c])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[n, rows * cols, patch * patch * c])?)
}

/// `[n, rows * cols, patch * patch * c]` back to `[n, h, w, c]`.
pub fn unpatchify_batch<F: Float>(
    tokens: &Tensor<F>,
    rows: usize,
    cols: usize,
    patch: usize,
    channels: usize,
) -> Result<Tensor<F>> {
    let n = tokens.shape()[0];
    if tokens.shape() != [n, rows * cols, patch * patch * channels] {
        return Err(Error::ShapeMismatch(format!(
            "tokens {:?} do not form a {rows}x{cols} grid of {patch}px patches",
            tokens.shape()
        )));
    }
    Ok(tokens
        .reshape(&[n, rows, cols, patch, patch, channels])?
        .permute(&[0, 1, 3, 2, 4, 5])?
        .reshape(&[n, rows * patch, cols * patch, channels])?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_token_count() {
        let img = Tensor::<f32>::zeros(&[64, 64, 3]);
        let g = patchify(&img, 8).unwrap();
        assert_eq!((g.rows, g.cols), (8, 8));
        assert_eq!(g.tokens.shape(), &[64, 192]);
    }

    #[test]
    fn reference_token_count() {
        let img = Tensor::<f32>::zeros(&[1024, 1024, 3]);
        let g = patchify(&img, 16).unwrap();
        assert_eq!((g.rows, g.cols), (64, 64));
        assert_eq!(g.tokens.shape()[0], 4096);
    }

    #[test]
    fn first_patch_holds_top_left_block() {
        let img = Tensor::<f64>::from_fn(&[4, 4, 1], |i| i as f64);
        let g = patchify(&img, 2).unwrap();
        assert_eq!(&g.tokens.data()[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&g.tokens.data()[4..8], &[2.0, 3.0, 6.0, 7.0]);
    }

    #[test]
    fn indivisible_is_rejected() {
        let img = Tensor::<f32>::zeros(&[10, 8, 3]);
        assert!(matches!(patchify(&img, 4), Err(Error::IndivisibleImage { .. })));
    }
}
