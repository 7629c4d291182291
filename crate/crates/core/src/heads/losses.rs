use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};

/// Depths are clamped to at least this before taking logs.
pub const DEPTH_EPS: f64 = 1e-6;
/// Norm floor when unit-normalizing predicted normals.
pub const NORMAL_EPS: f64 = 1e-6;

/// Mean squared error over the pixels of valid keypoint channels.
///
/// `pred`/`target` are `[k, h, w]` or `[b, k, h, w]`; `valid` has one flag per
/// channel (`k` or `b*k`). Zero when nothing is valid.
pub fn pose_loss<F: Float>(pred: &Tensor<F>, target: &Tensor<F>, valid: &[bool]) -> Result<Tensor<F>> {
    if pred.shape() != target.shape() || pred.shape().len() < 3 {
        return Err(Error::ShapeMismatch(format!("pose {:?} vs {:?}", pred.shape(), target.shape())));
    }
    let s = pred.shape();
    let hw = s[s.len() - 1] * s[s.len() - 2];
    let channels = pred.numel() / hw;
    if valid.len() != channels {
        return Err(Error::ShapeMismatch(format!("{} validity flags for {channels} channels", valid.len())));
    }
    let n_valid = valid.iter().filter(|&&v| v).count();
    let mask = Tensor::<F>::from_f64(
        &valid.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect::<Vec<_>>(),
        &[channels, 1],
    )?;
    let d = pred.sub(target)?.reshape(&[channels, hw])?;
    let sq = d.mul(&d)?.mul(&mask)?.sum()?;
    Ok(sq.scale(1.0 / (n_valid.max(1) * hw) as f64)?)
}

/// Weighted cross-entropy: mean over pixels of `w[t] * -log softmax(logits)[t]`.
///
/// `logits` is `[c, h, w]` or `[b, c, h, w]`; `target` holds one class per
/// pixel in `[b,] h, w` order.
pub fn seg_loss<F: Float>(logits: &Tensor<F>, target: &[usize], weights: &[f64]) -> Result<Tensor<F>> {
    let s = logits.shape();
    let (b, c, hw) = match *s {
        [c, h, w] => (1, c, h * w),
        [b, c, h, w] => (b, c, h * w),
        _ => return Err(Error::ShapeMismatch(format!("logits {s:?}"))),
    };
    if weights.len() != c {
        return Err(Error::ShapeMismatch(format!("{} class weights for {c} classes", weights.len())));
    }
    if let Some(&w) = weights.iter().find(|w| !(**w > 0.0)) {
        return Err(Error::BadSize(format!("class weight {w} must be positive")));
    }
    if target.len() != b * hw {
        return Err(Error::ShapeMismatch(format!("{} labels for {} pixels", target.len(), b * hw)));
    }
    if let Some(&t) = target.iter().find(|&&t| t >= c) {
        return Err(Error::ClassOutOfRange { class: t, classes: c });
    }
    let mut pick = vec![0.0; b * hw * c];
    for (p, &t) in target.iter().enumerate() {
        pick[p * c + t] = weights[t];
    }
    let lp = logits
        .reshape(&[b, c, hw])?
        .transpose(1, 2)?
        .reshape(&[b * hw, c])?
        .log_softmax()?;
    let picked = lp.mul(&Tensor::from_f64(&pick, &[b * hw, c])?)?.sum()?;
    Ok(picked.scale(-1.0 / (b * hw) as f64)?)
}

/// Inverse pixel-frequency class weights rescaled to mean 1; classes never
/// seen get the largest observed weight.
pub fn class_weights_from_counts(counts: &[u64]) -> Vec<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return vec![1.0; counts.len()];
    }
    let mut w: Vec<f64> = counts
        .iter()
        .map(|&n| if n > 0 { total as f64 / n as f64 } else { 0.0 })
        .collect();
    let max = w.iter().cloned().fold(0.0, f64::max);
    w.iter_mut().filter(|v| **v == 0.0).for_each(|v| *v = max);
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    w.iter().map(|v| v / mean).collect()
}

/// Min-max normalizes depth over human pixels; other pixels become 0.
pub fn normalize_depth(depth: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if depth.len() != mask.len() {
        return Err(Error::ShapeMismatch(format!("{} depths, {} mask pixels", depth.len(), mask.len())));
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (&d, _) in depth.iter().zip(mask).filter(|(_, &m)| m) {
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if lo == f64::INFINITY {
        return Err(Error::EmptyMask);
    }
    if !(hi > lo) {
        return Err(Error::DegenerateDepth);
    }
    Ok(depth
        .iter()
        .zip(mask)
        .map(|(&d, &m)| if m { (d - lo) / (hi - lo) } else { 0.0 })
        .collect())
}

/// Scale-invariant log loss over human pixels:
/// `sqrt(mean(D^2) - mean(D)^2 / 2)` with `D = log d - log d_hat`.
pub fn depth_loss<F: Float>(gt: &Tensor<F>, pred: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    if gt.shape() != pred.shape() || mask.len() != gt.numel() {
        return Err(Error::ShapeMismatch(format!(
            "depth {:?} vs {:?}, mask {}",
            gt.shape(),
            pred.shape(),
            mask.len()
        )));
    }
    let m = mask.iter().filter(|&&v| v).count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }
    if let Some(v) = gt.data().iter().zip(mask).filter(|(_, &k)| k).map(|(v, _)| v.as_f64()).find(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::NonPositiveDepth(v));
    }
    let g = gt.masked_select(mask)?.clamp_min(DEPTH_EPS)?.log()?;
    let p = pred.masked_select(mask)?.clamp_min(DEPTH_EPS)?.log()?;
    let d = g.sub(&p)?;
    let mean_sq = d.mul(&d)?.mean()?;
    let mean = d.mean()?;
    Ok(mean_sq.sub(&mean.mul(&mean)?.scale(0.5)?)?.sqrt()?)
}

/// `|n - n_hat|_1 + (1 - n . n_hat)` averaged over human pixels, with the raw
/// prediction unit-normalized first.
///
/// Normals are channel-first: `[3, h, w]` or `[b, 3, h, w]`; `mask` has one
/// flag per pixel.
pub fn normal_loss<F: Float>(gt: &Tensor<F>, pred_raw: &Tensor<F>, mask: &[bool]) -> Result<Tensor<F>> {
    let s = gt.shape();
    let ax = match s.len() {
        3 => 0,
        4 => 1,
        _ => return Err(Error::ShapeMismatch(format!("normals {s:?}"))),
    };
    if pred_raw.shape() != s || s[ax] != 3 || mask.len() * 3 != gt.numel() {
        return Err(Error::ShapeMismatch(format!(
            "normals {s:?} vs {:?}, mask {}",
            pred_raw.shape(),
            mask.len()
        )));
    }
    if !mask.iter().any(|&v| v) {
        return Err(Error::EmptyMask);
    }
    let ax = ax as isize;
    let n = pred_raw.normalize_l2(ax, NORMAL_EPS)?;
    let l1 = gt.sub(&n)?.norm_l1(ax, false)?;
    let cos = gt.dot(&n, ax, false)?;
    let per_pixel = l1.sub(&cos)?.add_scalar(1.0)?;
    Ok(per_pixel.masked_select(mask)?.mean()?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seg_hand_values() {
        let c = 5;
        let l = Tensor::<f64>::zeros(&[c, 2, 3]);
        let v = seg_loss(&l, &[0, 1, 2, 3, 4, 0], &[1.0; 5]).unwrap().item().unwrap();
        assert!((v - (c as f64).ln()).abs() < 1e-12);
        let l = Tensor::<f64>::zeros(&[2, 1, 2]);
        let v = seg_loss(&l, &[0, 1], &[1.0, 2.0]).unwrap().item().unwrap();
        assert!((v - 1.5 * 2f64.ln()).abs() < 1e-12);
        assert!(matches!(seg_loss(&l, &[0, 2], &[1.0, 1.0]), Err(Error::ClassOutOfRange { class: 2, classes: 2 })));
    }

    #[test]
    fn seg_confident_logits_vanish() {
        let l = Tensor::<f64>::from_f64(&[60.0, 0.0, 0.0, 60.0], &[2, 1, 2]).unwrap();
        assert!(seg_loss(&l, &[0, 1], &[1.0, 1.0]).unwrap().item().unwrap() < 1e-20);
    }

    #[test]
    fn depth_hand_values() {
        let d = Tensor::<f64>::from_f64(&[1.0, 2.0, 3.5, 7.0], &[1, 2, 2]).unwrap();
        let mask = [true; 4];
        assert_eq!(depth_loss(&d, &d, &mask).unwrap().item().unwrap(), 0.0);
        let v = depth_loss(&d, &d.scale(2.0).unwrap(), &mask).unwrap().item().unwrap();
        assert!((v - 2f64.ln() / 2f64.sqrt()).abs() < 1e-12);
        let one = [true, false, false, false];
        let p = Tensor::<f64>::from_f64(&[1.5, 9.0, 9.0, 9.0], &[1, 2, 2]).unwrap();
        let v = depth_loss(&d, &p, &one).unwrap().item().unwrap();
        assert!((v - 1.5f64.ln() / 2f64.sqrt()).abs() < 1e-12);
        assert!(matches!(depth_loss(&d, &d, &[false; 4]), Err(Error::EmptyMask)));
    }

    #[test]
    fn normalize_depth_cases() {
        assert_eq!(normalize_depth(&[2.0, 4.0], &[true, true]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(normalize_depth(&[3.0, 3.0], &[true, true]), Err(Error::DegenerateDepth)));
        let d = [1.0, 5.0, 2.5, 100.0];
        let m = [true, true, true, false];
        let a: Vec<f64> = d.iter().map(|v| 3.0 * v + 7.0).collect();
        let x = normalize_depth(&d, &m).unwrap();
        let y = normalize_depth(&a, &m).unwrap();
        for (p, q) in x.iter().zip(&y) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn normal_hand_values() {
        let t = |v: [f64; 3]| Tensor::<f64>::from_f64(&v, &[3, 1, 1]).unwrap();
        let m = [true];
        assert_eq!(normal_loss(&t([0., 0., 1.]), &t([0., 0., -1.]), &m).unwrap().item().unwrap(), 4.0);
        assert_eq!(normal_loss(&t([1., 0., 0.]), &t([0., 1., 0.]), &m).unwrap().item().unwrap(), 3.0);
        assert_eq!(normal_loss(&t([0., 1., 0.]), &t([0., 3., 0.]), &m).unwrap().item().unwrap(), 0.0);
    }

    #[test]
    fn pose_masking() {
        let p = Tensor::<f64>::zeros(&[2, 2, 2]);
        let t = Tensor::<f64>::from_f64(&[1., 0., 0., 0., 5., 5., 5., 5.], &[2, 2, 2]).unwrap();
        let v = pose_loss(&p, &t, &[true, false]).unwrap().item().unwrap();
        assert_eq!(v, 0.25);
    }

    #[test]
    fn inverse_frequency_weights() {
        let w = class_weights_from_counts(&[300, 100, 0]);
        assert!((w.iter().sum::<f64>() / 3.0 - 1.0).abs() < 1e-12);
        assert!((w[1] / w[0] - 3.0).abs() < 1e-12);
        assert_eq!(w[2], w[1]);
    }
}
