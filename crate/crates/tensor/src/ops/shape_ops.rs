use crate::error::{arg_err, shape_err, Result};
use crate::float::Float;
use crate::shape::{axis, numel, strides};
use crate::tensor::{BackwardCtx, Tensor};

fn permute_data<F: Copy>(src: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let st = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let pst: Vec<usize> = perm.iter().map(|&p| st[p]).collect();
    let n = src.len();
    let mut res = Vec::with_capacity(n);
    if n == 0 {
        return res;
    }
    let rank = out_shape.len();
    let last_len = out_shape[rank - 1];
    let last_stride = pst[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut off = 0usize;
    let rows = n / last_len;
    for _ in 0..rows {
        if last_stride == 1 {
            res.extend_from_slice(&src[off..off + last_len]);
        } else {
            let mut o = off;
            for _ in 0..last_len {
                res.push(src[o]);
                o += last_stride;
            }
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            off += pst[d];
            if idx[d] < out_shape[d] {
                break;
            }
            off -= pst[d] * idx[d];
            idx[d] = 0;
        }
    }
    res
}

fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

impl<F: Float> Tensor<F> {
    /// View with a new shape; one extent may be `usize::MAX` to infer it.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<F>> {
        let mut shape = shape.to_vec();
        if let Some(pos) = shape.iter().position(|&d| d == usize::MAX) {
            let known: usize = shape.iter().filter(|&&d| d != usize::MAX).product();
            if known == 0 || self.numel() % known != 0 {
                return Err(shape_err("reshape", format!("cannot infer extent for {shape:?}")));
            }
            shape[pos] = self.numel() / known;
        }
        if numel(&shape) != self.numel() {
            return Err(shape_err(
                "reshape",
                format!("{:?} -> {shape:?} changes element count", self.shape()),
            ));
        }
        Tensor::from_op(
            "reshape",
            shape,
            self.to_vec(),
            vec![self.clone()],
            Box::new(|ctx: &BackwardCtx<'_, F>| vec![Some(ctx.grad.to_vec())]),
        )
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<F>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if perm.len() != rank || perm.iter().any(|&p| p >= rank || std::mem::replace(&mut seen[p], true)) {
            return Err(shape_err("permute", format!("{perm:?} is not a permutation of rank {rank}")));
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.data(), &shape, perm);
        let inv = inverse_perm(perm);
        let os = out_shape.clone();
        Tensor::from_op(
            "transpose",
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| vec![Some(permute_data(ctx.grad, &os, &inv))]),
        )
    }

    /// Swap two axes.
    pub fn transpose(&self, a: isize, b: isize) -> Result<Tensor<F>> {
        let rank = self.rank();
        let (a, b) = (axis("transpose", a, rank)?, axis("transpose", b, rank)?);
        let mut perm: Vec<usize> = (0..rank).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn concat(parts: &[Tensor<F>], ax: isize) -> Result<Tensor<F>> {
        let first = parts.first().ok_or_else(|| arg_err("concat", "no inputs"))?;
        let rank = first.rank();
        let ax = axis("concat", ax, rank)?;
        for p in parts {
            let ok = p.rank() == rank
                && p.shape().iter().zip(first.shape()).enumerate().all(|(i, (x, y))| i == ax || x == y);
            if !ok {
                return Err(shape_err("concat", format!("{:?} vs {:?} on axis {ax}", p.shape(), first.shape())));
            }
        }
        let outer: usize = first.shape()[..ax].iter().product();
        let inner: usize = first.shape()[ax + 1..].iter().product();
        let widths: Vec<usize> = parts.iter().map(|p| p.shape()[ax] * inner).collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[ax] = parts.iter().map(|p| p.shape()[ax]).sum();
        Tensor::from_op(
            "concat",
            shape,
            data,
            parts.to_vec(),
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut out: Vec<Option<Vec<F>>> = widths
                    .iter()
                    .zip(ctx.needs)
                    .map(|(&w, &need)| need.then(|| Vec::with_capacity(outer * w)))
                    .collect();
                for o in 0..outer {
                    let mut off = o * total;
                    for (slot, &w) in out.iter_mut().zip(&widths) {
                        if let Some(v) = slot {
                            v.extend_from_slice(&ctx.grad[off..off + w]);
                        }
                        off += w;
                    }
                }
                out
            }),
        )
    }

    /// Half-open range `[start, end)` along one axis.
    pub fn slice(&self, ax: isize, start: usize, end: usize) -> Result<Tensor<F>> {
        let ax = axis("slice", ax, self.rank())?;
        let len = self.shape()[ax];
        if start > end || end > len {
            return Err(shape_err("slice", format!("range {start}..{end} out of extent {len}")));
        }
        let idx: Vec<usize> = (start..end).collect();
        self.index_select_impl("slice", ax, &idx)
    }

    /// Gather entries along one axis in the given order (indices may repeat).
    pub fn index_select(&self, ax: isize, indices: &[usize]) -> Result<Tensor<F>> {
        let ax = axis("index_select", ax, self.rank())?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.shape()[ax]) {
            return Err(shape_err("index_select", format!("index {bad} out of extent {}", self.shape()[ax])));
        }
        self.index_select_impl("index_select", ax, indices)
    }

    fn index_select_impl(&self, kind: &'static str, ax: usize, indices: &[usize]) -> Result<Tensor<F>> {
        let shape = self.shape().to_vec();
        let outer: usize = shape[..ax].iter().product();
        let inner: usize = shape[ax + 1..].iter().product();
        let len = shape[ax];
        let mut data = Vec::with_capacity(outer * indices.len() * inner);
        for o in 0..outer {
            for &i in indices {
                let s = (o * len + i) * inner;
                data.extend_from_slice(&self.data()[s..s + inner]);
            }
        }
        let mut out_shape = shape.clone();
        out_shape[ax] = indices.len();
        let idx = indices.to_vec();
        let n_in = self.numel();
        Tensor::from_op(
            kind,
            out_shape,
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut g = vec![F::zero(); n_in];
                let mut src = 0;
                for o in 0..outer {
                    for &i in &idx {
                        let d = (o * len + i) * inner;
                        for (a, &b) in g[d..d + inner].iter_mut().zip(&ctx.grad[src..src + inner]) {
                            *a += b;
                        }
                        src += inner;
                    }
                }
                vec![Some(g)]
            }),
        )
    }

    /// Flat vector of the elements where `mask` is true (row-major order).
    pub fn masked_select(&self, mask: &[bool]) -> Result<Tensor<F>> {
        if mask.len() != self.numel() {
            return Err(shape_err(
                "masked_select",
                format!("mask has {} entries for {} elements", mask.len(), self.numel()),
            ));
        }
        let picks: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        let data = picks.iter().map(|&i| self.data()[i]).collect();
        let n_in = self.numel();
        Tensor::from_op(
            "masked_select",
            vec![picks.len()],
            data,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut g = vec![F::zero(); n_in];
                for (&i, &v) in picks.iter().zip(ctx.grad) {
                    g[i] = v;
                }
                vec![Some(g)]
            }),
        )
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn transpose_round_trip_is_bitwise() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| (i as f32).sin());
        let back = t.transpose(0, 2).unwrap().transpose(0, 2).unwrap();
        assert_eq!(back.shape(), t.shape());
        assert_eq!(back.data(), t.data());
    }

    #[test]
    fn concat_and_slice() {
        let a = Tensor::<f64>::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
        let b = Tensor::<f64>::from_f64(&[5., 6.], &[2, 1]).unwrap();
        let c = Tensor::concat(&[a, b], 1).unwrap();
        assert_eq!(c.shape(), &[2, 3]);
        assert_eq!(c.to_vec(), vec![1., 2., 5., 3., 4., 6.]);
        assert_eq!(c.slice(1, 1, 3).unwrap().to_vec(), vec![2., 5., 4., 6.]);
        assert!(c.slice(1, 2, 4).is_err());
    }

    #[test]
    fn index_select_repeats_accumulate_grad() {
        let t = Tensor::<f64>::from_f64(&[1., 2., 3.], &[3]).unwrap().requires_grad(true);
        let s = t.index_select(0, &[2, 0, 2]).unwrap();
        assert_eq!(s.to_vec(), vec![3., 1., 3.]);
        s.sum().unwrap().backward().unwrap();
        assert_eq!(t.grad().unwrap(), vec![1., 0., 2.]);
    }

    #[test]
    fn masked_select_picks() {
        let t = Tensor::<f64>::from_f64(&[1., 2., 3., 4.], &[2, 2]).unwrap();
        let s = t.masked_select(&[true, false, false, true]).unwrap();
        assert_eq!(s.to_vec(), vec![1., 4.]);
    }
}
