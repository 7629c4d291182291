//! Name-based op dispatch for callers that build graphs from data.

use crate::error::{arg_err, Result, TensorError};
use crate::float::Float;
use crate::ops::conv::Conv2dParams;
use crate::tensor::Tensor;

/// Op-specific attributes; unused fields are ignored.
#[derive(Debug, Clone, Default)]
pub struct OpAttrs {
    pub axes: Vec<isize>,
    pub keepdim: bool,
    pub shape: Vec<usize>,
    pub perm: Vec<usize>,
    pub start: usize,
    pub end: usize,
    pub indices: Vec<usize>,
    pub mask: Vec<bool>,
    pub scalar: f64,
    pub eps: f64,
    pub conv: Conv2dParams,
    pub size: (usize, usize),
}

/// Every op name accepted by [`apply_op`].
pub const OP_NAMES: &[&str] = &[
    "add",
    "sub",
    "mul",
    "div",
    "matmul",
    "transpose",
    "reshape",
    "concat",
    "slice",
    "index_select",
    "sum",
    "mean",
    "exp",
    "log",
    "sqrt",
    "pow",
    "abs",
    "softmax",
    "log_softmax",
    "layer_norm",
    "gelu",
    "conv2d",
    "conv_transpose2d",
    "resize_bilinear",
    "masked_select",
    "norm_l1",
    "norm_l2",
    "dot",
];

fn arity<F: Float>(kind: &str, inputs: &[&Tensor<F>], lo: usize, hi: usize) -> Result<()> {
    if inputs.len() < lo || inputs.len() > hi {
        return Err(arg_err("apply_op", format!("{kind} takes {lo}..={hi} inputs, got {}", inputs.len())));
    }
    Ok(())
}

pub fn apply_op<F: Float>(kind: &str, inputs: &[&Tensor<F>], attrs: &OpAttrs) -> Result<Tensor<F>> {
    let x = |i: usize| inputs[i];
    match kind {
        "add" | "sub" | "mul" | "div" | "matmul" | "dot" => {
            arity(kind, inputs, 2, 2)?;
            match kind {
                "add" => x(0).add(x(1)),
                "sub" => x(0).sub(x(1)),
                "mul" => x(0).mul(x(1)),
                "div" => x(0).div(x(1)),
                "matmul" => x(0).matmul(x(1)),
                _ => x(0).dot(x(1), *attrs.axes.first().unwrap_or(&-1), attrs.keepdim),
            }
        }
        "concat" => {
            if inputs.is_empty() {
                return Err(arg_err("apply_op", "concat needs inputs"));
            }
            let parts: Vec<Tensor<F>> = inputs.iter().map(|t| (*t).clone()).collect();
            Tensor::concat(&parts, *attrs.axes.first().unwrap_or(&0))
        }
        "layer_norm" | "conv2d" | "conv_transpose2d" => {
            arity(kind, inputs, 1, 3)?;
            let w = inputs.get(1).copied();
            let b = inputs.get(2).copied();
            match kind {
                "layer_norm" => x(0).layer_norm(w, b, if attrs.eps > 0.0 { attrs.eps } else { 1e-5 }),
                "conv2d" => x(0).conv2d(w.ok_or_else(|| arg_err("apply_op", "conv2d needs a weight"))?, b, attrs.conv),
                _ => x(0).conv_transpose2d(
                    w.ok_or_else(|| arg_err("apply_op", "conv_transpose2d needs a weight"))?,
                    b,
                    attrs.conv,
                ),
            }
        }
        _ => {
            if !OP_NAMES.contains(&kind) {
                return Err(TensorError::UnsupportedOp(kind.to_string()));
            }
            arity(kind, inputs, 1, 1)?;
            let t = x(0);
            let ax = *attrs.axes.first().unwrap_or(&-1);
            match kind {
                "transpose" => {
                    if attrs.perm.is_empty() {
                        t.transpose(-2, -1)
                    } else {
                        t.permute(&attrs.perm)
                    }
                }
                "reshape" => t.reshape(&attrs.shape),
                "slice" => t.slice(ax, attrs.start, attrs.end),
                "index_select" => t.index_select(ax, &attrs.indices),
                "sum" if attrs.axes.is_empty() => t.sum(),
                "sum" => t.sum_axes(&attrs.axes, attrs.keepdim),
                "mean" if attrs.axes.is_empty() => t.mean(),
                "mean" => t.mean_axes(&attrs.axes, attrs.keepdim),
                "exp" => t.exp(),
                "log" => t.log(),
                "sqrt" => t.sqrt(),
                "pow" => t.powf(attrs.scalar),
                "abs" => t.abs(),
                "softmax" => t.softmax(),
                "log_softmax" => t.log_softmax(),
                "gelu" => t.gelu(),
                "resize_bilinear" => t.resize_bilinear(attrs.size.0, attrs.size.1),
                "masked_select" => t.masked_select(&attrs.mask),
                "norm_l1" => t.norm_l1(ax, attrs.keepdim),
                "norm_l2" => t.norm_l2(ax, attrs.keepdim),
                _ => Err(TensorError::UnsupportedOp(kind.to_string())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_op_is_rejected() {
        let t = Tensor::<f32>::zeros(&[2]);
        assert_eq!(
            apply_op("frobnicate", &[&t], &OpAttrs::default()).unwrap_err(),
            TensorError::UnsupportedOp("frobnicate".into())
        );
    }

    #[test]
    fn dispatch_matmul() {
        let a = Tensor::<f64>::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
        let b = Tensor::<f64>::from_f64(&[5., 6.], &[2, 1]).unwrap();
        let c = apply_op("matmul", &[&a, &b], &OpAttrs::default()).unwrap();
        assert_eq!(c.to_vec(), vec![17., 39.]);
    }
}
