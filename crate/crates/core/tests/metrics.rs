use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_core::heads::{Keypoints, Visibility};
use sapiens_core::metrics::{depth_metrics, oks, seg_metrics};

fn person(r: &mut ChaCha8Rng, k: usize) -> Keypoints {
    Keypoints::new((0..k).map(|_| [r.gen_range(0.0..100.0), r.gen_range(0.0..100.0)]).collect(), vec![Visibility::Visible; k])
}

#[test]
fn oks_ignores_joint_translation_and_decays_with_distance() {
    let mut r = ChaCha8Rng::seed_from_u64(9);
    let sigmas = [0.05; 5];
    for _ in 0..100 {
        let (gt, pred) = (person(&mut r, 5), person(&mut r, 5));
        let area = r.gen_range(100.0..5000.0);
        let base = oks(&pred, &gt, area, &sigmas).unwrap();
        let (tx, ty) = (r.gen_range(-50.0..50.0), r.gen_range(-50.0..50.0));
        let shift = |k: &Keypoints| Keypoints::new(k.coords.iter().map(|[x, y]| [x + tx, y + ty]).collect(), k.visibility.clone());
        assert!((oks(&shift(&pred), &shift(&gt), area, &sigmas).unwrap() - base).abs() < 1e-12);

        // push one predicted joint further from its target
        let j = r.gen_range(0..5);
        let mut far = pred.clone();
        let d = [far.coords[j][0] - gt.coords[j][0], far.coords[j][1] - gt.coords[j][1]];
        let s = r.gen_range(1.0..3.0);
        far.coords[j] = [gt.coords[j][0] + s * d[0], gt.coords[j][1] + s * d[1]];
        assert!(oks(&far, &gt, area, &sigmas).unwrap() <= base);
    }
}

fn labels(n: usize, c: u8) -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(0..c, n)
}

proptest! {
    #[test]
    fn miou_is_symmetric_and_label_permutation_invariant(pred in labels(40, 4), gt in labels(40, 4), perm in Just([2u8, 0, 3, 1])) {
        let a = seg_metrics(&pred, &gt, 4).unwrap().miou;
        let b = seg_metrics(&gt, &pred, 4).unwrap().miou;
        prop_assert!((a - b).abs() < 1e-12);
        let p: Vec<u8> = pred.iter().map(|&v| perm[v as usize]).collect();
        let g: Vec<u8> = gt.iter().map(|&v| perm[v as usize]).collect();
        prop_assert!((seg_metrics(&p, &g, 4).unwrap().miou - a).abs() < 1e-12);
    }

    #[test]
    fn depth_metrics_ignore_positive_affine_maps(
        pred in prop::collection::vec(0.5f64..5.0, 12),
        gt in prop::collection::vec(0.5f64..5.0, 12),
        a in 0.1f64..10.0,
        b in -3.0f64..3.0,
    ) {
        let mask = [true; 12];
        let base = depth_metrics(&pred, &gt, &mask, 1.25).unwrap();
        let moved: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
        let m = depth_metrics(&moved, &gt, &mask, 1.25).unwrap();
        prop_assert!((m.rmse - base.rmse).abs() < 1e-9);
        prop_assert!((m.abs_rel - base.abs_rel).abs() < 1e-9);
        prop_assert_eq!(m.delta1, base.delta1);
    }
}
