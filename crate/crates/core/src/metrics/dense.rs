use crate::error::{Error, Result};

/// Per-class and mean IoU/recall from a confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SegReport {
    pub miou: f64,
    pub macc: f64,
    /// IoU per class; `None` when the class is absent from both maps.
    pub iou: Vec<Option<f64>>,
    /// Recall per class; `None` when the class is absent from the ground truth.
    pub acc: Vec<Option<f64>>,
}

/// Confusion counts `[gt][pred]` accumulated over images.
#[derive(Debug, Clone)]
pub struct SegAccumulator {
    pub classes: usize,
    pub confusion: Vec<u64>,
}

impl SegAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            confusion: vec![0; classes * classes],
        }
    }

    pub fn add<T: Copy + Into<usize>>(&mut self, pred: &[T], gt: &[T]) -> Result<()> {
        if pred.len() != gt.len() {
            return Err(Error::ShapeMismatch(format!("{} predicted vs {} labeled pixels", pred.len(), gt.len())));
        }
        let c = self.classes;
        for (&p, &g) in pred.iter().zip(gt) {
            let (p, g) = (p.into(), g.into());
            if p >= c || g >= c {
                return Err(Error::ClassOutOfRange { class: p.max(g), classes: c });
            }
            self.confusion[g * c + p] += 1;
        }
        Ok(())
    }

    pub fn report(&self) -> SegReport {
        let c = self.classes;
        let mut iou = vec![None; c];
        let mut acc = vec![None; c];
        for k in 0..c {
            let tp = self.confusion[k * c + k] as f64;
            let gt_k: u64 = (0..c).map(|p| self.confusion[k * c + p]).sum();
            let pred_k: u64 = (0..c).map(|g| self.confusion[g * c + k]).sum();
            let union = (gt_k + pred_k) as f64 - tp;
            if union > 0.0 {
                iou[k] = Some(tp / union);
            }
            if gt_k > 0 {
                acc[k] = Some(tp / gt_k as f64);
            }
        }
        let mean = |v: &[Option<f64>]| {
            let xs: Vec<f64> = v.iter().flatten().copied().collect();
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        SegReport {
            miou: mean(&iou),
            macc: mean(&acc),
            iou,
            acc,
        }
    }
}

/// mIoU over classes present in either map, mAcc over classes present in the
/// ground truth.
pub fn seg_metrics<T: Copy + Into<usize>>(pred: &[T], gt: &[T], classes: usize) -> Result<SegReport> {
    let mut acc = SegAccumulator::new(classes);
    acc.add(pred, gt)?;
    Ok(acc.report())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthReport {
    pub rmse: f64,
    pub abs_rel: f64,
    pub delta1: f64,
}

/// Least-squares `(scale, shift)` minimizing `sum (scale * p + shift - g)^2`,
/// in centered form so that `pred == gt` aligns to exactly `(1, 0)`.
/// A constant prediction gets scale 0 and the mean target as shift.
pub fn align_scale_shift(pred: &[f64], gt: &[f64]) -> (f64, f64) {
    let n = pred.len() as f64;
    let (mp, mg) = (pred.iter().sum::<f64>() / n, gt.iter().sum::<f64>() / n);
    let (mut vpp, mut vpg) = (0.0, 0.0);
    for (&p, &g) in pred.iter().zip(gt) {
        vpp += (p - mp) * (p - mp);
        vpg += (p - mp) * (g - mg);
    }
    if vpp <= 1e-24 * pred.iter().map(|p| p * p).sum::<f64>().max(f64::MIN_POSITIVE) {
        return (0.0, mg);
    }
    let scale = vpg / vpp;
    (scale, mg - scale * mp)
}

/// RMSE, AbsRel and delta1 over human pixels after scale-and-shift alignment.
pub fn depth_metrics(pred: &[f64], gt: &[f64], mask: &[bool], delta: f64) -> Result<DepthReport> {
    if pred.len() != gt.len() || mask.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} / {} / {} depth pixels", pred.len(), gt.len(), mask.len())));
    }
    let (p, g): (Vec<f64>, Vec<f64>) = pred
        .iter()
        .zip(gt)
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((&p, &g), _)| (p, g))
        .unzip();
    if p.is_empty() {
        return Err(Error::EmptyMask);
    }
    if let Some(&v) = g.iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::NonPositiveDepth(v));
    }
    let (s, t) = align_scale_shift(&p, &g);
    let n = p.len() as f64;
    let (mut se, mut rel, mut good) = (0.0, 0.0, 0usize);
    for (&p, &g) in p.iter().zip(&g) {
        let a = s * p + t;
        se += (a - g).powi(2);
        rel += (a - g).abs() / g;
        if a > 0.0 && (g / a).max(a / g) < delta {
            good += 1;
        }
    }
    Ok(DepthReport {
        rmse: (se / n).sqrt(),
        abs_rel: rel / n,
        delta1: good as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalReport {
    pub mean: f64,
    pub median: f64,
    /// Fraction of pixels within each threshold, in threshold order.
    pub within: Vec<f64>,
}

/// Angle in degrees (`atan2(|p x g|, p . g)`, equal to `acos` of the clamped
/// cosine) between unit-normalized prediction and ground truth at
/// each human pixel; normals are `[n, 3]` interleaved.
pub fn angular_errors_deg(pred: &[f64], gt: &[f64], mask: &[bool]) -> Result<Vec<f64>> {
    if pred.len() != gt.len() || mask.len() * 3 != gt.len() {
        return Err(Error::ShapeMismatch(format!("{} / {} normals, {} mask pixels", pred.len() / 3, gt.len() / 3, mask.len())));
    }
    let unit = |v: &[f64]| {
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(1e-12);
        [v[0] / n, v[1] / n, v[2] / n]
    };
    Ok(pred
        .chunks(3)
        .zip(gt.chunks(3))
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((p, g), _)| {
            let (p, g) = (unit(p), unit(g));
            // atan2 of |p x g| and p . g stays exact near 0 and 180 degrees
            let cross = [p[1] * g[2] - p[2] * g[1], p[2] * g[0] - p[0] * g[2], p[0] * g[1] - p[1] * g[0]];
            let sin = (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2]).sqrt();
            sin.atan2(p[0] * g[0] + p[1] * g[1] + p[2] * g[2]).to_degrees()
        })
        .collect())
}

/// Mean, median (lower middle for even counts) and within-threshold rates of
/// angular errors.
pub fn normal_metrics(pred: &[f64], gt: &[f64], mask: &[bool], thresholds: &[f64]) -> Result<NormalReport> {
    summarize_angles(angular_errors_deg(pred, gt, mask)?, thresholds)
}

pub(crate) fn summarize_angles(mut errs: Vec<f64>, thresholds: &[f64]) -> Result<NormalReport> {
    if errs.is_empty() {
        return Err(Error::EmptyMask);
    }
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    Ok(NormalReport {
        mean: errs.iter().sum::<f64>() / n as f64,
        median: errs[(n - 1) / 2],
        within: thresholds
            .iter()
            .map(|&t| errs.partition_point(|&e| e <= t) as f64 / n as f64)
            .collect(),
    })
}
