use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_core::heads::{
    decode_keypoints, depth_loss, make_heatmaps, normal_loss, seg_loss, Keypoints, Visibility, DEFAULT_SIGMA, POSE_STRIDE,
};
use sapiens_tensor::Tensor;

/// Direct evaluation: `sqrt(V + k^2 / 2)` with `V`, `k` the variance and mean
/// of the log-depth differences.
fn depth_reference(gt: &[f64], pred: &[f64]) -> f64 {
    let d: Vec<f64> = gt.iter().zip(pred).map(|(g, p)| g.ln() - p.ln()).collect();
    let n = d.len() as f64;
    let k = d.iter().sum::<f64>() / n;
    let v = d.iter().map(|x| (x - k).powi(2)).sum::<f64>() / n;
    (v + 0.5 * k * k).sqrt()
}

#[test]
fn depth_loss_under_prediction_scaling() {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let gt: Vec<f64> = (0..12).map(|_| r.gen_range(0.5..5.0)).collect();
        let pred: Vec<f64> = (0..12).map(|_| r.gen_range(0.5..5.0)).collect();
        let c = r.gen_range(0.1..10.0);
        let scaled: Vec<f64> = pred.iter().map(|p| c * p).collect();
        let t = |v: &[f64]| Tensor::<f64>::from_f64(v, &[1, 3, 4]).unwrap();
        let got = depth_loss(&t(&gt), &t(&scaled), &[true; 12]).unwrap().item().unwrap();
        assert!((got - depth_reference(&gt, &scaled)).abs() < 1e-12);
        // scaling only moves the mean of the differences, by -ln c
        let v = depth_reference(&gt, &pred).powi(2) - 0.5 * mean_log_diff(&gt, &pred).powi(2);
        let k = mean_log_diff(&gt, &pred) - c.ln();
        assert!((got - (v + 0.5 * k * k).sqrt()).abs() < 1e-9);
    }
}

fn mean_log_diff(gt: &[f64], pred: &[f64]) -> f64 {
    gt.iter().zip(pred).map(|(g, p)| g.ln() - p.ln()).sum::<f64>() / gt.len() as f64
}

fn unit(r: &mut ChaCha8Rng) -> [f64; 3] {
    let v: [f64; 3] = [r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0)];
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

#[test]
fn normal_loss_is_bounded_and_zero_only_at_agreement() {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let upper = 2.0 + 2.0 * 3f64.sqrt();
    for _ in 0..500 {
        let (g, p) = (unit(&mut r), unit(&mut r));
        let gt = Tensor::<f64>::from_f64(&g, &[3, 1, 1]).unwrap();
        let scale = r.gen_range(0.2..5.0);
        let pred = Tensor::<f64>::from_f64(&p.map(|x| x * scale), &[3, 1, 1]).unwrap();
        let l = normal_loss(&gt, &pred, &[true]).unwrap().item().unwrap();
        assert!((0.0..=upper).contains(&l), "{l}");
        assert!(l > 0.0);
        let same = normal_loss(&gt, &gt.scale(scale).unwrap(), &[true]).unwrap().item().unwrap();
        assert!(same.abs() < 1e-12);
    }
}

#[test]
fn unit_weight_seg_loss_is_plain_cross_entropy() {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let (c, hw) = (5, 6);
    let logits: Vec<f64> = (0..c * hw).map(|_| r.gen_range(-3.0..3.0)).collect();
    let labels: Vec<usize> = (0..hw).map(|_| r.gen_range(0..c)).collect();
    let mut direct = 0.0;
    for p in 0..hw {
        let z: Vec<f64> = (0..c).map(|k| logits[k * hw + p]).collect();
        let lse = z.iter().map(|v| v.exp()).sum::<f64>().ln();
        direct += lse - z[labels[p]];
    }
    direct /= hw as f64;
    let t = Tensor::<f64>::from_f64(&logits, &[c, 2, 3]).unwrap();
    let got = seg_loss(&t, &labels, &[1.0; 5]).unwrap().item().unwrap();
    assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
}

proptest! {
    #[test]
    fn heatmap_round_trip_is_within_half_a_stride(x in 0.0f64..47.0, y in 0.0f64..63.0) {
        let kps = Keypoints::new(vec![[x, y]], vec![Visibility::Visible]);
        let s = POSE_STRIDE as f64;
        let h = make_heatmaps(&kps, 16, 12, DEFAULT_SIGMA, s).unwrap();
        let d = decode_keypoints(&h);
        let [dx, dy] = d.coords[0];
        prop_assert!((dx - x).abs() <= 0.5 * s && (dy - y).abs() <= 0.5 * s, "({x}, {y}) -> ({dx}, {dy})");
    }
}
