use crate::error::{shape_err, Result};
use crate::float::Float;
use crate::shape::{axis, expand, numel, sum_to};
use crate::tensor::{BackwardCtx, Tensor};

/// Sum of `src` over `axes` producing the keep-dim shape `to`.
fn reduce_sum<F: Float>(src: &[F], from: &[usize], to: &[usize], axes: &[usize]) -> Vec<F> {
    let rank = from.len();
    let trailing = axes.iter().all(|&a| a >= rank - axes.len()) && !axes.is_empty();
    if trailing {
        let inner: usize = axes.iter().map(|&a| from[a]).product();
        if inner == 0 {
            return vec![F::zero(); numel(to)];
        }
        return src
            .chunks(inner)
            .map(|ch| {
                let mut acc = F::zero();
                for &v in ch {
                    acc += v;
                }
                acc
            })
            .collect();
    }
    sum_to(src, from, to)
}

fn normalize_axes(op: &'static str, axes: &[isize], rank: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(axes.len());
    for &a in axes {
        let a = axis(op, a, rank)?;
        if out.contains(&a) {
            return Err(shape_err(op, format!("axis {a} repeated")));
        }
        out.push(a);
    }
    out.sort_unstable();
    Ok(out)
}

impl<F: Float> Tensor<F> {
    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Result<Tensor<F>> {
        let mut acc = F::zero();
        for &v in self.data() {
            acc += v;
        }
        let n = self.numel();
        Tensor::from_op(
            "sum",
            vec![],
            vec![acc],
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| vec![Some(vec![ctx.grad[0]; n])]),
        )
    }

    pub fn mean(&self) -> Result<Tensor<F>> {
        let n = self.numel();
        if n == 0 {
            return Err(shape_err("mean", "empty tensor"));
        }
        self.sum()?.scale(1.0 / n as f64)
    }

    pub fn sum_axes(&self, axes: &[isize], keepdim: bool) -> Result<Tensor<F>> {
        let from = self.shape().to_vec();
        let axes = normalize_axes("sum_axes", axes, from.len())?;
        let mut kept = from.clone();
        for &a in &axes {
            kept[a] = 1;
        }
        let data = reduce_sum(self.data(), &from, &kept, &axes);
        let out_shape: Vec<usize> = if keepdim {
            kept.clone()
        } else {
            from.iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &d)| d)
                .collect()
        };
        Tensor::from_op(
            "sum_axes",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| vec![Some(expand(ctx.grad, &kept, &from))]),
        )
    }

    pub fn mean_axes(&self, axes: &[isize], keepdim: bool) -> Result<Tensor<F>> {
        let rank = self.rank();
        let ax = normalize_axes("mean_axes", axes, rank)?;
        let count: usize = ax.iter().map(|&a| self.shape()[a]).product();
        if count == 0 {
            return Err(shape_err("mean_axes", "reducing over an empty axis"));
        }
        self.sum_axes(axes, keepdim)?.scale(1.0 / count as f64)
    }

    /// Largest element (not differentiable; returns a plain value).
    pub fn max_value(&self) -> Option<F> {
        self.data().iter().copied().fold(None, |m, v| match m {
            None => Some(v),
            Some(m) => Some(if v > m { v } else { m }),
        })
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn axis_sums() {
        let t = Tensor::<f64>::from_f64(&[1., 2., 3., 4., 5., 6.], &[2, 3]).unwrap();
        assert_eq!(t.sum_axes(&[0], false).unwrap().to_vec(), vec![5., 7., 9.]);
        assert_eq!(t.sum_axes(&[-1], true).unwrap().shape(), &[2, 1]);
        assert_eq!(t.sum_axes(&[1], false).unwrap().to_vec(), vec![6., 15.]);
        assert_eq!(t.mean().unwrap().item().unwrap(), 3.5);
        assert!(t.sum_axes(&[2], false).is_err());
    }

    #[test]
    fn sum_axes_grad_broadcasts_back() {
        let t = Tensor::<f64>::ones(&[2, 3]).requires_grad(true);
        let w = Tensor::<f64>::from_f64(&[1., 2.], &[2]).unwrap();
        t.sum_axes(&[1], false).unwrap().mul(&w).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1., 1., 1., 2., 2., 2.]);
    }
}
