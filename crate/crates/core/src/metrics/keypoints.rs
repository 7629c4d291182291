use crate::error::{Error, Result};
use crate::heads::Keypoints;

/// Object keypoint similarity over the ground truth's labeled joints:
/// mean of `exp(-d^2 / (2 * area * (2 sigma)^2))`.
pub fn oks(pred: &Keypoints, gt: &Keypoints, area: f64, sigmas: &[f64]) -> Result<f64> {
    if pred.len() != gt.len() || sigmas.len() != gt.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} predicted, {} labeled, {} sigmas",
            pred.len(),
            gt.len(),
            sigmas.len()
        )));
    }
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..gt.len() {
        if !gt.visibility[k].labeled() {
            continue;
        }
        let [px, py] = pred.coords[k];
        let [gx, gy] = gt.coords[k];
        let d2 = (px - gx).powi(2) + (py - gy).powi(2);
        let kk = 2.0 * sigmas[k];
        sum += (-d2 / (2.0 * area * kk * kk)).exp();
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoLabeledKeypoints);
    }
    Ok(sum / n as f64)
}

/// Fraction of labeled joints within `alpha * box diagonal` pixels.
pub fn pck(pred: &Keypoints, gt: &Keypoints, bbox: [f64; 4], alpha: f64) -> (usize, usize) {
    let tol = alpha * (bbox[2] * bbox[2] + bbox[3] * bbox[3]).sqrt();
    let mut hit = 0;
    let mut n = 0;
    for k in 0..gt.len().min(pred.len()) {
        if !gt.visibility[k].labeled() {
            continue;
        }
        n += 1;
        let d = ((pred.coords[k][0] - gt.coords[k][0]).powi(2) + (pred.coords[k][1] - gt.coords[k][1]).powi(2)).sqrt();
        if d <= tol {
            hit += 1;
        }
    }
    (hit, n)
}

/// Predictions and ground truth of one image.
#[derive(Debug, Clone, Default)]
pub struct ImageDetections {
    /// Predicted instances with confidence.
    pub preds: Vec<(Keypoints, f64)>,
    /// Ground-truth instances with their object area.
    pub gts: Vec<(Keypoints, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApAr {
    pub ap: f64,
    pub ar: f64,
}

/// Score-ordered greedy matching at one threshold: `oks_table[p][g]`, rows in
/// descending score order. Each prediction takes the unmatched ground truth
/// with the highest OKS at or above `thr` (lowest index on ties).
pub fn greedy_match(oks_table: &[Vec<f64>], thr: f64) -> Vec<Option<usize>> {
    let n_gt = oks_table.first().map_or(0, |r| r.len());
    let mut taken = vec![false; n_gt];
    oks_table
        .iter()
        .map(|row| {
            let mut best: Option<usize> = None;
            for (g, &o) in row.iter().enumerate() {
                if taken[g] || o < thr {
                    continue;
                }
                if best.map_or(true, |b| o > row[b]) {
                    best = Some(g);
                }
            }
            if let Some(g) = best {
                taken[g] = true;
            }
            best
        })
        .collect()
}

/// Mean over thresholds of 101-point interpolated AP and of recall, with up to
/// `max_dets` highest-scoring predictions per image. Ground truths without
/// labeled joints are ignored.
pub fn keypoint_ap_ar(images: &[ImageDetections], sigmas: &[f64], thresholds: &[f64], max_dets: usize) -> Result<ApAr> {
    struct Prepared {
        scores: Vec<f64>,
        table: Vec<Vec<f64>>,
    }
    let mut prepared = Vec::with_capacity(images.len());
    let mut n_pos = 0usize;
    for img in images {
        let gts: Vec<&(Keypoints, f64)> = img.gts.iter().filter(|(k, _)| k.visibility.iter().any(|v| v.labeled())).collect();
        n_pos += gts.len();
        let mut order: Vec<usize> = (0..img.preds.len()).collect();
        order.sort_by(|&a, &b| img.preds[b].1.total_cmp(&img.preds[a].1));
        order.truncate(max_dets);
        let mut table = Vec::with_capacity(order.len());
        for &p in &order {
            let row = gts
                .iter()
                .map(|(g, area)| oks(&img.preds[p].0, g, *area, sigmas))
                .collect::<Result<Vec<_>>>()?;
            table.push(row);
        }
        prepared.push(Prepared {
            scores: order.iter().map(|&p| img.preds[p].1).collect(),
            table,
        });
    }
    if n_pos == 0 || thresholds.is_empty() {
        return Ok(ApAr { ap: 0.0, ar: 0.0 });
    }
    let (mut ap_sum, mut ar_sum) = (0.0, 0.0);
    for &thr in thresholds {
        let mut dets: Vec<(f64, bool)> = Vec::new();
        for p in &prepared {
            let m = if p.table.first().map_or(true, |r| r.is_empty()) {
                vec![None; p.table.len()]
            } else {
                greedy_match(&p.table, thr)
            };
            dets.extend(p.scores.iter().zip(&m).map(|(&s, m)| (s, m.is_some())));
        }
        // stable: equal scores keep image order
        dets.sort_by(|a, b| b.0.total_cmp(&a.0));
        let (ap, recall) = interpolated_ap(&dets, n_pos);
        ap_sum += ap;
        ar_sum += recall;
    }
    let n = thresholds.len() as f64;
    Ok(ApAr {
        ap: ap_sum / n,
        ar: ar_sum / n,
    })
}

/// COCO-style 101-point AP and final recall of score-sorted detections.
fn interpolated_ap(dets: &[(f64, bool)], n_pos: usize) -> (f64, f64) {
    let mut tp = 0usize;
    let mut prec = Vec::with_capacity(dets.len());
    let mut rec = Vec::with_capacity(dets.len());
    for (i, &(_, hit)) in dets.iter().enumerate() {
        tp += hit as usize;
        prec.push(tp as f64 / (i + 1) as f64);
        rec.push(tp as f64 / n_pos as f64);
    }
    for i in (0..prec.len().saturating_sub(1)).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    let mut ap = 0.0;
    for r in 0..=100 {
        let target = r as f64 / 100.0;
        let idx = rec.partition_point(|&x| x < target - 1e-12);
        if idx < prec.len() {
            ap += prec[idx];
        }
    }
    (ap / 101.0, rec.last().copied().unwrap_or(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::Visibility;

    fn kp(c: &[[f64; 2]]) -> Keypoints {
        Keypoints::new(c.to_vec(), vec![Visibility::Visible; c.len()])
    }

    #[test]
    fn oks_values() {
        let g = kp(&[[0.0, 0.0], [10.0, 10.0]]);
        assert_eq!(oks(&g, &g, 100.0, &[0.05, 0.05]).unwrap(), 1.0);
        let area: f64 = 400.0;
        let sigma = 0.05;
        let d = (2.0 * area).sqrt() * 2.0 * sigma;
        let p = kp(&[[0.0, 0.0], [10.0 + d, 10.0]]);
        let v = oks(&p, &g, area, &[sigma; 2]).unwrap();
        assert!((v - (1.0 + (-1f64).exp()) / 2.0).abs() < 1e-12);
        let far = kp(&[[1e9, 0.0], [1e9, 0.0]]);
        assert_eq!(oks(&far, &g, area, &[sigma; 2]).unwrap(), 0.0);
        let none = Keypoints::new(vec![[0.0; 2]; 2], vec![Visibility::Absent; 2]);
        assert!(matches!(oks(&g, &none, 1.0, &[0.1; 2]), Err(Error::NoLabeledKeypoints)));
    }

    #[test]
    fn perfect_and_empty() {
        let g = kp(&[[3.0, 4.0], [8.0, 1.0]]);
        let thr: Vec<f64> = (0..10).map(|i| 0.5 + 0.05 * i as f64).collect();
        let imgs = vec![ImageDetections { preds: vec![(g.clone(), 0.9)], gts: vec![(g.clone(), 50.0)] }];
        let r = keypoint_ap_ar(&imgs, &[0.05; 2], &thr, 20).unwrap();
        assert_eq!((r.ap, r.ar), (1.0, 1.0));
        let imgs = vec![ImageDetections { preds: vec![], gts: vec![(g, 50.0)] }];
        let r = keypoint_ap_ar(&imgs, &[0.05; 2], &thr, 20).unwrap();
        assert_eq!((r.ap, r.ar), (0.0, 0.0));
    }

    #[test]
    fn pck_counts() {
        let g = kp(&[[0.0, 0.0], [10.0, 0.0]]);
        let p = kp(&[[0.5, 0.0], [30.0, 0.0]]);
        assert_eq!(pck(&p, &g, [0.0, 0.0, 6.0, 8.0], 0.1), (1, 2));
    }
}
