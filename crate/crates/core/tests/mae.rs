use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sapiens_core::datagen::{generate, SceneKind};
use sapiens_core::image::batch_tensor;
use sapiens_core::mae::{init_mae, mae_forward_batch, mask_sweep, masked_patch_loss, normalized_targets, sample_mask};
use sapiens_core::vit::{patchify_batch, registry};
use sapiens_core::Image;
use sapiens_tensor::Tensor;

fn images(seed: u64, n: usize) -> Vec<Image> {
    generate(seed, n, SceneKind::Pretrain, 64, 64).unwrap().into_iter().map(|s| s.image).collect()
}

#[test]
fn every_token_is_masked_three_quarters_of_the_time() {
    let n = 64;
    let draws = 10_000;
    let mut hits = vec![0usize; n];
    for seed in 0..draws {
        let p = sample_mask(n, 0.75, seed).unwrap();
        assert_eq!(p.masked.len(), 48);
        p.masked.iter().for_each(|&t| hits[t] += 1);
    }
    for (t, h) in hits.iter().enumerate() {
        let f = *h as f64 / draws as f64;
        assert!((f - 0.75).abs() <= 0.02, "token {t}: {f}");
    }
}

#[test]
fn visible_targets_do_not_affect_the_loss() {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let pred = Tensor::<f64>::randn(&[2, 16, 12], 1.0, &mut r);
    let target = Tensor::<f64>::randn(&[2, 16, 12], 1.0, &mut r);
    let plans: Vec<_> = (0..2).map(|i| sample_mask(16, 0.75, 40 + i).unwrap()).collect();
    let base = masked_patch_loss(&pred, &target, &plans).unwrap().item().unwrap();
    let mut t = target.to_vec();
    for (i, p) in plans.iter().enumerate() {
        for &v in &p.visible {
            t[(i * 16 + v) * 12..(i * 16 + v + 1) * 12].iter_mut().for_each(|x| *x += 100.0);
        }
    }
    let perturbed = Tensor::new(t, &[2, 16, 12]).unwrap();
    assert_eq!(masked_patch_loss(&pred, &perturbed, &plans).unwrap().item().unwrap(), base);
}

#[test]
fn zero_prediction_scores_about_one() {
    let imgs = images(8, 16);
    let refs: Vec<&Image> = imgs.iter().collect();
    let cfg = registry("desk-tiny").unwrap();
    let patches = patchify_batch(&batch_tensor::<f64>(&refs).unwrap(), cfg.patch_size).unwrap();
    let (targets, _) = normalized_targets(patches.data(), cfg.patch_dim());
    let target = Tensor::new(targets, patches.shape()).unwrap();
    let plans: Vec<_> = (0..16).map(|i| sample_mask(cfg.n_tokens(), 0.75, i).unwrap()).collect();
    let loss = masked_patch_loss(&Tensor::zeros(patches.shape()), &target, &plans).unwrap().item().unwrap();
    assert!((loss - 1.0).abs() <= 0.05, "{loss}");
}

#[test]
fn untrained_model_reconstructs_worse_with_more_masking() {
    let cfg = registry("desk-tiny").unwrap();
    let w = init_mae::<f32, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let sweep = mask_sweep(&images(99, 20), &cfg, &w, &[0.0, 0.75, 0.95], 3).unwrap();
    assert_eq!(sweep.iter().map(|s| s.0).collect::<Vec<_>>(), vec![0.0, 0.75, 0.95]);
    assert_eq!(sweep[0].1, sapiens_core::mae::PSNR_CAP_DB);
    assert!(sweep[2].1 < sweep[1].1, "{sweep:?}");
}

#[test]
fn forward_loss_matches_the_standalone_loss() {
    let cfg = registry("desk-tiny").unwrap();
    let w = init_mae::<f64, _>(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let imgs = images(3, 2);
    let refs: Vec<&Image> = imgs.iter().collect();
    let x = batch_tensor::<f64>(&refs).unwrap();
    let plans: Vec<_> = (0..2).map(|i| sample_mask(cfg.n_tokens(), 0.75, i).unwrap()).collect();
    let out = mae_forward_batch(&x, &cfg, &w, &plans).unwrap();
    let patches = patchify_batch(&x, cfg.patch_size).unwrap();
    let (targets, _) = normalized_targets(patches.data(), cfg.patch_dim());
    let direct = masked_patch_loss(&out.prediction, &Tensor::new(targets, patches.shape()).unwrap(), &plans).unwrap();
    assert!((out.loss.item().unwrap() - direct.item().unwrap()).abs() < 1e-12);
}
