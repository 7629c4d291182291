use rayon::prelude::*;

use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::mode::PAR_THRESHOLD;
use crate::tensor::{BackwardCtx, Tensor};

/// Row-major matrix view with optional transpose: `(rows, cols, row_stride, col_stride)`.
#[derive(Clone, Copy)]
struct View {
    rows: usize,
    cols: usize,
    rs: isize,
    cs: isize,
}

impl View {
    fn dense(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            rs: cols as isize,
            cs: 1,
        }
    }

    fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }
}

/// `out[i] (+)= a[i] @ b[i]` for each batch item; a/b strides of 0 share one matrix.
#[allow(clippy::too_many_arguments)]
fn gemm_batched<F: Float>(
    batch: usize,
    a: &[F],
    av: View,
    a_step: usize,
    b: &[F],
    bv: View,
    b_step: usize,
    out: &mut [F],
    accumulate: bool,
) {
    let (m, k, n) = (av.rows, av.cols, bv.cols);
    debug_assert_eq!(k, bv.rows);
    let beta = if accumulate { F::one() } else { F::zero() };
    let run = |(i, c): (usize, &mut [F])| {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            &a[i * a_step..],
            av.rs,
            av.cs,
            &b[i * b_step..],
            bv.rs,
            bv.cs,
            beta,
            c,
            n as isize,
            1,
        );
    };
    if batch > 1 && batch * m * n * k >= PAR_THRESHOLD {
        out.par_chunks_mut(m * n).enumerate().for_each(run);
    } else {
        out.chunks_mut(m * n).enumerate().for_each(run);
    }
}

impl<F: Float> Tensor<F> {
    /// Matrix product over the last two axes.
    ///
    /// Accepts `[.., m, k] @ [k, n]` (shared right operand) and
    /// `[.., m, k] @ [.., k, n]` with identical leading axes.
    pub fn matmul(&self, other: &Tensor<F>) -> Result<Tensor<F>> {
        let (ash, bsh) = (self.shape().to_vec(), other.shape().to_vec());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(shape_err("matmul", format!("operands need rank >= 2, got {ash:?} @ {bsh:?}")));
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != k2 {
            return Err(shape_err("matmul", format!("inner extents differ: {ash:?} @ {bsh:?}")));
        }
        let lead = &ash[..ash.len() - 2];
        let shared = bsh.len() == 2;
        if !shared && bsh[..bsh.len() - 2] != *lead {
            return Err(shape_err("matmul", format!("batch extents differ: {ash:?} @ {bsh:?}")));
        }
        let batch: usize = lead.iter().product();
        let mut out_shape = lead.to_vec();
        out_shape.extend([m, n]);
        let mut out = vec![F::zero(); batch * m * n];
        if shared {
            gemm_batched(
                1,
                self.data(),
                View::dense(batch * m, k),
                0,
                other.data(),
                View::dense(k, n),
                0,
                &mut out,
                false,
            );
        } else {
            gemm_batched(
                batch,
                self.data(),
                View::dense(m, k),
                m * k,
                other.data(),
                View::dense(k, n),
                k * n,
                &mut out,
                false,
            );
        }
        Tensor::from_op(
            "matmul",
            out_shape,
            out,
            vec![self.clone(), other.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let (a, b) = (ctx.inputs[0].data(), ctx.inputs[1].data());
                let g = ctx.grad;
                let ga = ctx.needs[0].then(|| {
                    let mut ga = vec![F::zero(); batch * m * k];
                    if shared {
                        gemm_batched(1, g, View::dense(batch * m, n), 0, b, View::dense(k, n).t(), 0, &mut ga, false);
                    } else {
                        gemm_batched(batch, g, View::dense(m, n), m * n, b, View::dense(k, n).t(), k * n, &mut ga, false);
                    }
                    ga
                });
                let gb = ctx.needs[1].then(|| {
                    if shared {
                        let mut gb = vec![F::zero(); k * n];
                        gemm_batched(1, a, View::dense(batch * m, k).t(), 0, g, View::dense(batch * m, n), 0, &mut gb, false);
                        gb
                    } else {
                        let mut gb = vec![F::zero(); batch * k * n];
                        gemm_batched(batch, a, View::dense(m, k).t(), m * k, g, View::dense(m, n), m * n, &mut gb, false);
                        gb
                    }
                });
                vec![ga, gb]
            }),
        )
    }
}
