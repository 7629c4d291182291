use crate::error::{shape_err, Result};
use crate::float::{c, Float};
use crate::tensor::{BackwardCtx, Tensor};

fn last_dim<F: Float>(op: &'static str, t: &Tensor<F>) -> Result<usize> {
    match t.shape().last() {
        Some(&d) if d > 0 => Ok(d),
        _ => Err(shape_err(op, format!("needs a non-empty last axis, got {:?}", t.shape()))),
    }
}

impl<F: Float> Tensor<F> {
    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Tensor<F>> {
        let d = last_dim("softmax", self)?;
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let start = out.len();
            let mut z = F::zero();
            for &v in row {
                let e = (v - m).exp();
                z += e;
                out.push(e);
            }
            out[start..].iter_mut().for_each(|e| *e /= z);
        }
        Tensor::from_op(
            "softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for (gr, yr) in ctx.grad.chunks(d).zip(ctx.out.chunks(d)) {
                    let mut dot = F::zero();
                    for (&a, &b) in gr.iter().zip(yr) {
                        dot += a * b;
                    }
                    g.extend(gr.iter().zip(yr).map(|(&a, &y)| y * (a - dot)));
                }
                vec![Some(g)]
            }),
        )
    }

    /// Log-softmax over the last axis.
    pub fn log_softmax(&self) -> Result<Tensor<F>> {
        let d = last_dim("log_softmax", self)?;
        let mut out = Vec::with_capacity(self.numel());
        for row in self.data().chunks(d) {
            let m = row.iter().copied().fold(F::neg_infinity(), F::max);
            let mut z = F::zero();
            for &v in row {
                z += (v - m).exp();
            }
            let lse = m + z.ln();
            out.extend(row.iter().map(|&v| v - lse));
        }
        Tensor::from_op(
            "log_softmax",
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let mut g = Vec::with_capacity(ctx.grad.len());
                for (gr, yr) in ctx.grad.chunks(d).zip(ctx.out.chunks(d)) {
                    let mut s = F::zero();
                    for &a in gr {
                        s += a;
                    }
                    g.extend(gr.iter().zip(yr).map(|(&a, &y)| a - y.exp() * s));
                }
                vec![Some(g)]
            }),
        )
    }

    /// Layer normalization over the last axis with optional affine parameters
    /// of shape `[d]`.
    pub fn layer_norm(&self, weight: Option<&Tensor<F>>, bias: Option<&Tensor<F>>, eps: f64) -> Result<Tensor<F>> {
        let d = last_dim("layer_norm", self)?;
        for p in [weight, bias].into_iter().flatten() {
            if p.shape() != [d] {
                return Err(shape_err("layer_norm", format!("affine shape {:?} for feature size {d}", p.shape())));
            }
        }
        let eps: F = c(eps);
        let inv_d: F = c(1.0 / d as f64);
        let rows = self.numel() / d;
        let mut xhat = Vec::with_capacity(self.numel());
        let mut rstd = Vec::with_capacity(rows);
        for row in self.data().chunks(d) {
            let mut mu = F::zero();
            for &v in row {
                mu += v;
            }
            mu *= inv_d;
            let mut var = F::zero();
            for &v in row {
                var += (v - mu) * (v - mu);
            }
            var *= inv_d;
            let r = (var + eps).sqrt().recip();
            rstd.push(r);
            xhat.extend(row.iter().map(|&v| (v - mu) * r));
        }
        let mut out = xhat.clone();
        if let Some(w) = weight {
            for row in out.chunks_mut(d) {
                row.iter_mut().zip(w.data()).for_each(|(o, &w)| *o *= w);
            }
        }
        if let Some(b) = bias {
            for row in out.chunks_mut(d) {
                row.iter_mut().zip(b.data()).for_each(|(o, &b)| *o += b);
            }
        }
        let mut inputs = vec![self.clone()];
        let has_w = weight.is_some();
        inputs.extend(weight.cloned());
        inputs.extend(bias.cloned());
        Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            inputs,
            Box::new(move |ctx: &BackwardCtx<'_, F>| {
                let g = ctx.grad;
                let w = has_w.then(|| ctx.inputs[1].data());
                let mut res: Vec<Option<Vec<F>>> = Vec::with_capacity(ctx.inputs.len());
                let gx = ctx.needs[0].then(|| {
                    let mut gx = Vec::with_capacity(g.len());
                    let mut gh = vec![F::zero(); d];
                    for ((gr, xr), &r) in g.chunks(d).zip(xhat.chunks(d)).zip(&rstd) {
                        let mut m1 = F::zero();
                        let mut m2 = F::zero();
                        for j in 0..d {
                            gh[j] = match w {
                                Some(w) => gr[j] * w[j],
                                None => gr[j],
                            };
                            m1 += gh[j];
                            m2 += gh[j] * xr[j];
                        }
                        m1 *= inv_d;
                        m2 *= inv_d;
                        gx.extend((0..d).map(|j| r * (gh[j] - m1 - xr[j] * m2)));
                    }
                    gx
                });
                res.push(gx);
                if has_w {
                    res.push(ctx.needs[1].then(|| {
                        let mut gw = vec![F::zero(); d];
                        for (gr, xr) in g.chunks(d).zip(xhat.chunks(d)) {
                            for j in 0..d {
                                gw[j] += gr[j] * xr[j];
                            }
                        }
                        gw
                    }));
                }
                if ctx.inputs.len() > res.len() {
                    let need = ctx.needs[res.len()];
                    res.push(need.then(|| {
                        let mut gb = vec![F::zero(); d];
                        for gr in g.chunks(d) {
                            for j in 0..d {
                                gb[j] += gr[j];
                            }
                        }
                        gb
                    }));
                }
                res
            }),
        )
    }

    /// L1 norm along one axis.
    pub fn norm_l1(&self, ax: isize, keepdim: bool) -> Result<Tensor<F>> {
        self.abs()?.sum_axes(&[ax], keepdim)
    }

    /// L2 norm along one axis.
    pub fn norm_l2(&self, ax: isize, keepdim: bool) -> Result<Tensor<F>> {
        self.mul(self)?.sum_axes(&[ax], keepdim)?.sqrt()
    }

    /// Inner product of two equally shaped tensors along one axis.
    pub fn dot(&self, other: &Tensor<F>, ax: isize, keepdim: bool) -> Result<Tensor<F>> {
        if self.shape() != other.shape() {
            return Err(shape_err("dot", format!("{:?} vs {:?}", self.shape(), other.shape())));
        }
        self.mul(other)?.sum_axes(&[ax], keepdim)
    }

    /// Divides by the L2 norm along `ax`, with the norm floored at `eps`.
    pub fn normalize_l2(&self, ax: isize, eps: f64) -> Result<Tensor<F>> {
        let n = self.norm_l2(ax, true)?.clamp_min(eps)?;
        self.div(&n)
    }
}

#[cfg(test)]
mod tests {
    use crate::Tensor;

    #[test]
    fn softmax_uniform() {
        let t = Tensor::<f64>::zeros(&[3]).softmax().unwrap();
        for v in t.to_vec() {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn sum_of_softmax_has_zero_grad() {
        let v = Tensor::<f64>::from_f64(&[0.3, -1.2, 2.0, 0.5], &[4]).unwrap().requires_grad(true);
        v.softmax().unwrap().sum().unwrap().backward().unwrap();
        for g in v.grad().unwrap() {
            assert!(g.abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_moments() {
        let t = Tensor::<f64>::from_fn(&[4, 7], |i| (i as f64 * 1.3).sin() * 5.0 + 2.0);
        let y = t.layer_norm(None, None, 1e-5).unwrap();
        for row in y.data().chunks(7) {
            let mu: f64 = row.iter().sum::<f64>() / 7.0;
            let var: f64 = row.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / 7.0;
            assert!(mu.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn normalize_unit_vector_is_exact() {
        let t = Tensor::<f64>::from_f64(&[0.0, 0.0, -1.0], &[3]).unwrap();
        assert_eq!(t.normalize_l2(0, 1e-6).unwrap().to_vec(), vec![0.0, 0.0, -1.0]);
    }
}
