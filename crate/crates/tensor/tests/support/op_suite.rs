//! One central-difference case per differentiable op, shared by the tensor
//! tests and the workspace acceptance target.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_tensor::{Conv2dParams, Result, Tensor};

pub const STEP: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const TRIALS: u64 = 10;

type Scalar = Box<dyn Fn(&Tensor<f64>) -> Result<Tensor<f64>>>;

/// A scalar function of `point` whose gradient exercises the named op.
pub struct Case {
    pub name: &'static str,
    pub point: Tensor<f64>,
    pub f: Scalar,
}

fn randn(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::randn(shape, 1.0, r)
}

/// Projects an arbitrary tensor to a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
pub fn weighted_sum(t: &Tensor<f64>, seed: u64) -> Result<Tensor<f64>> {
    let w = Tensor::randn(t.shape(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xdead));
    t.mul(&w)?.sum()
}

/// Rows of `shape[..-1]` random directions scaled to norms in [1, 2]; the
/// central-difference truncation error of a normalization grows like
/// (step / norm)^2, so rows near the origin would test the step, not the op.
fn rows_with_unit_scale_norms(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let d = *shape.last().expect("non-scalar shape");
    let raw = randn(shape, r);
    let scales: Vec<f64> = (0..raw.numel() / d).map(|_| r.gen_range(1.0..2.0)).collect();
    Tensor::from_fn(shape, |i| {
        let row = &raw.data()[i / d * d..i / d * d + d];
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
        raw.data()[i] / n * scales[i / d]
    })
}

/// Entries with magnitude in [0.3, 3] and alternating sign, away from kinks at 0.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let pos = Tensor::<f64>::uniform(shape, 0.3, 3.0, r);
    Tensor::from_fn(shape, |i| if i % 2 == 0 { pos.data()[i] } else { -pos.data()[i] })
}

pub fn cases(seed: u64) -> Vec<Case> {
    let r = &mut ChaCha8Rng::seed_from_u64(seed);
    let s = seed;
    let mut out: Vec<Case> = Vec::new();
    let mut push = |name: &'static str, point: Tensor<f64>, f: Scalar| out.push(Case { name, point, f });

    let a = randn(&[3, 4], r);
    let b = randn(&[4], r);
    let denom = Tensor::uniform(&[3, 1], 0.5, 2.0, r);
    {
        let b2 = b.clone();
        push("add", a.clone(), Box::new(move |x| weighted_sum(&x.add(&b2)?, s)));
        let a2 = a.clone();
        push("sub", b.clone(), Box::new(move |x| weighted_sum(&a2.sub(x)?, s)));
        let b2 = b.clone();
        push("mul", a.clone(), Box::new(move |x| weighted_sum(&x.mul(&b2)?, s)));
        let a2 = a.clone();
        push("mul broadcast rhs", b.clone(), Box::new(move |x| weighted_sum(&a2.mul(x)?, s)));
        let d2 = denom.clone();
        push("div numerator", a.clone(), Box::new(move |x| weighted_sum(&x.div(&d2)?, s)));
        let a2 = a.clone();
        push("div denominator", denom, Box::new(move |x| weighted_sum(&a2.div(x)?, s)));
        push("neg", a.clone(), Box::new(move |x| weighted_sum(&x.neg()?, s)));
        push("scale", a.clone(), Box::new(move |x| weighted_sum(&x.scale(-1.7)?, s)));
        push("add_scalar", a.clone(), Box::new(move |x| weighted_sum(&x.add_scalar(0.4)?, s)));
    }

    let a3 = randn(&[2, 3, 4], r);
    let m = randn(&[4, 5], r);
    let mb = randn(&[2, 4, 5], r);
    {
        let m2 = m.clone();
        push("matmul lhs", a3.clone(), Box::new(move |x| weighted_sum(&x.matmul(&m2)?, s)));
        let l = a3.clone();
        push("matmul shared rhs", m, Box::new(move |x| weighted_sum(&l.matmul(x)?, s)));
        let l = a3.clone();
        push("matmul batched rhs", mb, Box::new(move |x| weighted_sum(&l.matmul(x)?, s)));
        push("transpose", a3.clone(), Box::new(move |x| weighted_sum(&x.transpose(0, 2)?, s)));
        push("permute", a3.clone(), Box::new(move |x| weighted_sum(&x.permute(&[1, 2, 0])?, s)));
        push("reshape", a3.clone(), Box::new(move |x| weighted_sum(&x.reshape(&[6, 4])?, s)));
        let other = randn(&[2, 2, 4], r);
        push("concat", a3.clone(), Box::new(move |x| weighted_sum(&Tensor::concat(&[x.clone(), other.clone()], 1)?, s)));
        push("slice", a3.clone(), Box::new(move |x| weighted_sum(&x.slice(2, 1, 3)?, s)));
        push("index_select", a3.clone(), Box::new(move |x| weighted_sum(&x.index_select(1, &[2, 0, 2])?, s)));
        let mask: Vec<bool> = (0..a3.numel()).map(|_| r.gen_bool(0.5)).collect();
        push("masked_select", a3.clone(), Box::new(move |x| weighted_sum(&x.masked_select(&mask)?, s)));
    }

    let c = randn(&[3, 4, 2], r);
    let pos = Tensor::uniform(&[3, 4], 0.3, 3.0, r);
    let kinked = away_from_zero(&[3, 4], r);
    push("sum", c.clone(), Box::new(move |x| x.mul(x)?.sum()));
    push("sum_axes", c.clone(), Box::new(move |x| weighted_sum(&x.sum_axes(&[0, 2], false)?, s)));
    push("mean_axes", c.clone(), Box::new(move |x| weighted_sum(&x.mean_axes(&[1], true)?, s)));
    push("mean", c.clone(), Box::new(move |x| x.mul(x)?.mean()));
    push("exp", c.clone(), Box::new(move |x| weighted_sum(&x.exp()?, s)));
    push("log", pos.clone(), Box::new(move |x| weighted_sum(&x.log()?, s)));
    push("sqrt", pos.clone(), Box::new(move |x| weighted_sum(&x.sqrt()?, s)));
    push("powf", pos, Box::new(move |x| weighted_sum(&x.powf(2.5)?, s)));
    push("gelu", c.clone(), Box::new(move |x| weighted_sum(&x.gelu()?, s)));
    push("sigmoid", c, Box::new(move |x| weighted_sum(&x.sigmoid()?, s)));
    push("abs", kinked.clone(), Box::new(move |x| weighted_sum(&x.abs()?, s)));
    push("relu", kinked.clone(), Box::new(move |x| weighted_sum(&x.relu()?, s)));
    push("clamp_min", kinked, Box::new(move |x| weighted_sum(&x.clamp_min(0.0)?, s)));

    let n = randn(&[4, 6], r);
    let w = randn(&[6], r);
    let bias = randn(&[6], r);
    {
        push("softmax", n.clone(), Box::new(move |x| weighted_sum(&x.softmax()?, s)));
        push("log_softmax", n.clone(), Box::new(move |x| weighted_sum(&x.log_softmax()?, s)));
        let (w2, b2) = (w.clone(), bias.clone());
        push("layer_norm input", n.clone(), Box::new(move |x| weighted_sum(&x.layer_norm(Some(&w2), Some(&b2), 1e-5)?, s)));
        let (n2, b2) = (n.clone(), bias.clone());
        push("layer_norm weight", w.clone(), Box::new(move |x| weighted_sum(&n2.layer_norm(Some(x), Some(&b2), 1e-5)?, s)));
        let (n2, w2) = (n, w);
        push("layer_norm bias", bias, Box::new(move |x| weighted_sum(&n2.layer_norm(Some(&w2), Some(x), 1e-5)?, s)));
    }

    let v = randn(&[5, 3], r);
    let u = randn(&[5, 3], r);
    push("norm_l1", away_from_zero(&[5, 3], r), Box::new(move |x| weighted_sum(&x.norm_l1(-1, false)?, s)));
    push("norm_l2", v.clone(), Box::new(move |x| weighted_sum(&x.norm_l2(-1, false)?, s)));
    push("dot", v.clone(), Box::new(move |x| weighted_sum(&x.dot(&u, -1, false)?, s)));
    push("normalize_l2", rows_with_unit_scale_norms(&[5, 3], r), Box::new(move |x| weighted_sum(&x.normalize_l2(-1, 1e-6)?, s)));

    let img = randn(&[2, 3, 6, 5], r);
    let k = randn(&[4, 3, 3, 3], r);
    let kb = randn(&[4], r);
    let p = Conv2dParams { stride: 2, padding: 1 };
    {
        let (k2, kb2) = (k.clone(), kb.clone());
        push("conv2d input", img.clone(), Box::new(move |x| weighted_sum(&x.conv2d(&k2, Some(&kb2), p)?, s)));
        let (i2, kb2) = (img.clone(), kb.clone());
        push("conv2d weight", k.clone(), Box::new(move |x| weighted_sum(&i2.conv2d(x, Some(&kb2), p)?, s)));
        let (i2, k2) = (img.clone(), k);
        push("conv2d bias", kb, Box::new(move |x| weighted_sum(&i2.conv2d(&k2, Some(x), p)?, s)));
        let kt = randn(&[3, 2, 4, 4], r);
        let bt = randn(&[2], r);
        let (kt2, bt2) = (kt.clone(), bt.clone());
        push("conv_transpose2d input", img.clone(), Box::new(move |x| weighted_sum(&x.conv_transpose2d(&kt2, Some(&bt2), p)?, s)));
        let (i2, bt2) = (img.clone(), bt.clone());
        push("conv_transpose2d weight", kt.clone(), Box::new(move |x| weighted_sum(&i2.conv_transpose2d(x, Some(&bt2), p)?, s)));
        let i2 = img.clone();
        push("conv_transpose2d bias", bt, Box::new(move |x| weighted_sum(&i2.conv_transpose2d(&kt, Some(x), p)?, s)));
        push("resize_bilinear up", img.clone(), Box::new(move |x| weighted_sum(&x.resize_bilinear(9, 11)?, s)));
        push("resize_bilinear down", img, Box::new(move |x| weighted_sum(&x.resize_bilinear(4, 3)?, s)));
    }
    out
}
