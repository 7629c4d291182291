//! Masked-autoencoder pretraining: random token masking, visible-only
//! encoding, a light reconstruction decoder, and per-patch normalized
//! reconstruction loss over masked patches.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sapiens_tensor::{Float, Tensor};

use crate::error::{Error, Result};
use crate::image::{batch_tensor, Image};
use crate::vit::{
    block_forward, encode, init_block, layer_norm, linear, patchify_batch, trunc_normal, unpatchify_batch,
    ParamStore, TokenSelection, ViTConfig, INIT_STD,
};

pub const DEFAULT_MASK_RATIO: f64 = 0.75;
/// Variance floor of per-patch target normalization.
pub const TARGET_EPS: f64 = 1e-6;
/// PSNR reported for an exact reconstruction.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Which tokens are hidden from the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub n_tokens: usize,
    pub mask_ratio: f64,
    /// Ascending.
    pub masked: Vec<usize>,
    /// Ascending.
    pub visible: Vec<usize>,
    pub seed: u64,
}

impl MaskPlan {
    pub fn visible_mask(&self) -> Vec<bool> {
        let mut m = vec![false; self.n_tokens];
        self.visible.iter().for_each(|&i| m[i] = true);
        m
    }
}

/// Hides `round(ratio * n_tokens)` tokens chosen uniformly without replacement.
pub fn sample_mask(n_tokens: usize, mask_ratio: f64, seed: u64) -> Result<MaskPlan> {
    if !(0.0..1.0).contains(&mask_ratio) || mask_ratio.is_nan() {
        return Err(Error::BadRatio(mask_ratio));
    }
    let n_masked = (mask_ratio * n_tokens as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_tokens).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut masked = order[..n_masked].to_vec();
    let mut visible = order[n_masked..].to_vec();
    masked.sort_unstable();
    visible.sort_unstable();
    Ok(MaskPlan {
        n_tokens,
        mask_ratio,
        masked,
        visible,
        seed,
    })
}

/// Allocates the reconstruction decoder under the `decoder.` prefix.
pub fn init_decoder<F: Float, R: Rng + ?Sized>(cfg: &ViTConfig, rng: &mut R) -> Result<ParamStore<F>> {
    cfg.validate()?;
    let (d, dd) = (cfg.hidden_size, cfg.decoder_hidden);
    let mut s = ParamStore::new();
    s.insert("decoder.embed.weight", trunc_normal(&[d, dd], INIT_STD, rng));
    s.insert("decoder.embed.bias", Tensor::zeros(&[dd]));
    s.insert("decoder.mask_token", trunc_normal(&[dd], INIT_STD, rng));
    s.insert("decoder.pos_embed", trunc_normal(&[cfg.n_tokens(), dd], INIT_STD, rng));
    for i in 0..cfg.decoder_layers {
        init_block(&mut s, &format!("decoder.blocks.{i}"), dd, cfg.decoder_mlp_hidden(), rng);
    }
    s.insert("decoder.norm.weight", Tensor::ones(&[dd]));
    s.insert("decoder.norm.bias", Tensor::zeros(&[dd]));
    s.insert("decoder.pred.weight", trunc_normal(&[dd, cfg.patch_dim()], INIT_STD, rng));
    s.insert("decoder.pred.bias", Tensor::zeros(&[cfg.patch_dim()]));
    Ok(s)
}

/// Encoder and decoder weights of a freshly initialized pretraining model.
pub fn init_mae<F: Float, R: Rng + ?Sized>(cfg: &ViTConfig, rng: &mut R) -> Result<ParamStore<F>> {
    let mut w = crate::vit::init_encoder(cfg, rng)?;
    let dec = init_decoder(cfg, rng)?;
    w.extend_prefixed(&dec, "decoder.");
    Ok(w)
}

/// Per-patch zero-mean unit-variance targets, plus each patch's (mean, std).
pub fn normalized_targets<F: Float>(patches: &[F], patch_dim: usize) -> (Vec<F>, Vec<(F, F)>) {
    let mut out = Vec::with_capacity(patches.len());
    let mut stats = Vec::with_capacity(patches.len() / patch_dim);
    let inv = F::of_f64(1.0 / patch_dim as f64);
    for p in patches.chunks(patch_dim) {
        let mut mean = F::zero();
        for &v in p {
            mean += v;
        }
        mean *= inv;
        let mut var = F::zero();
        for &v in p {
            var += (v - mean) * (v - mean);
        }
        var *= inv;
        let std = (var + F::of_f64(TARGET_EPS)).sqrt();
        out.extend(p.iter().map(|&v| (v - mean) / std));
        stats.push((mean, std));
    }
    (out, stats)
}

/// Mean squared error between `pred` and `target` (both `[b, n, patch_dim]`)
/// restricted to each item's masked patches. Zero when nothing is masked.
pub fn masked_patch_loss<F: Float>(pred: &Tensor<F>, target: &Tensor<F>, plans: &[MaskPlan]) -> Result<Tensor<F>> {
    let [b, n, pd] = match *pred.shape() {
        [b, n, pd] => [b, n, pd],
        _ => return Err(Error::ShapeMismatch(format!("prediction {:?}", pred.shape()))),
    };
    if target.shape() != pred.shape() {
        return Err(Error::ShapeMismatch(format!("{:?} vs {:?}", pred.shape(), target.shape())));
    }
    if plans.len() != b {
        return Err(Error::ShapeMismatch(format!("{} plans for {b} items", plans.len())));
    }
    let mut rows = Vec::new();
    for (i, p) in plans.iter().enumerate() {
        if p.n_tokens != n {
            return Err(Error::PlanMismatch { plan: p.n_tokens, image: n });
        }
        rows.extend(p.masked.iter().map(|&t| i * n + t));
    }
    if rows.is_empty() {
        return Ok(pred.sum()?.scale(0.0)?);
    }
    let pm = pred.reshape(&[b * n, pd])?.index_select(0, &rows)?;
    let tm = target.reshape(&[b * n, pd])?.index_select(0, &rows)?;
    let diff = pm.sub(&tm)?;
    Ok(diff.mul(&diff)?.mean()?)
}

/// Runs the decoder on encoder features of the visible tokens and predicts
/// normalized pixels for every patch: `[b, n, patch_dim]`.
pub fn decode<F: Float>(latent: &Tensor<F>, cfg: &ViTConfig, w: &ParamStore<F>, plans: &[MaskPlan]) -> Result<Tensor<F>> {
    let b = plans.len();
    let n = cfg.n_tokens();
    let dd = cfg.decoder_hidden;
    let x = linear(latent, w, "decoder.embed")?;
    let nv = x.shape()[1];
    let nm = n - nv;
    let full = if nm > 0 {
        let tokens = Tensor::zeros(&[b, nm, dd]).add(w.get("decoder.mask_token")?)?;
        Tensor::concat(&[x, tokens], 1)?
    } else {
        x
    };
    // full holds [visible..., masked...] per item; restore grid order
    let mut order = Vec::with_capacity(b * n);
    for (i, p) in plans.iter().enumerate() {
        let mut slot = vec![0usize; n];
        for (j, &t) in p.visible.iter().chain(&p.masked).enumerate() {
            slot[t] = j;
        }
        order.extend(slot.into_iter().map(|j| i * n + j));
    }
    let mut x = full
        .reshape(&[b * n, dd])?
        .index_select(0, &order)?
        .reshape(&[b, n, dd])?
        .add(w.get("decoder.pos_embed")?)?;
    for i in 0..cfg.decoder_layers {
        x = block_forward(&x, w, &format!("decoder.blocks.{i}"), cfg.decoder_heads)?;
    }
    let x = layer_norm(&x, w, "decoder.norm")?;
    linear(&x, w, "decoder.pred")
}

#[derive(Debug, Clone)]
pub struct MaeOutput<F: Float = f32> {
    /// `[b, h, w, c]` predicted image, de-normalized with each target patch's statistics.
    pub reconstruction: Tensor<F>,
    /// `[b, n, patch_dim]` prediction in normalized-target space.
    pub prediction: Tensor<F>,
    pub loss: Tensor<F>,
    pub plans: Vec<MaskPlan>,
}

/// Full pretraining forward pass on a `[b, h, w, c]` batch.
pub fn mae_forward_batch<F: Float>(
    images: &Tensor<F>,
    cfg: &ViTConfig,
    w: &ParamStore<F>,
    plans: &[MaskPlan],
) -> Result<MaeOutput<F>> {
    let n = cfg.n_tokens();
    if let Some(p) = plans.iter().find(|p| p.n_tokens != n) {
        return Err(Error::PlanMismatch { plan: p.n_tokens, image: n });
    }
    let b = images.shape().first().copied().unwrap_or(0);
    if plans.len() != b {
        return Err(Error::ShapeMismatch(format!("{} plans for {b} images", plans.len())));
    }
    let sel = TokenSelection::new(n, plans.iter().map(|p| p.visible.clone()).collect())?;
    let latent = encode(images, cfg, w, Some(&sel))?;
    let pred = decode(&latent, cfg, w, plans)?;
    let patches = patchify_batch(images, cfg.patch_size)?;
    let pd = cfg.patch_dim();
    let (tgt, stats) = normalized_targets(patches.data(), pd);
    let target = Tensor::new(tgt, patches.shape())?;
    let loss = masked_patch_loss(&pred, &target, plans)?;
    let denorm: Vec<F> = pred
        .data()
        .chunks(pd)
        .zip(&stats)
        .flat_map(|(p, &(m, s))| p.iter().map(move |&v| v * s + m))
        .collect();
    let (rows, cols) = cfg.grid();
    let recon = unpatchify_batch(&Tensor::new(denorm, pred.shape())?, rows, cols, cfg.patch_size, cfg.in_channels)?;
    Ok(MaeOutput {
        reconstruction: recon,
        prediction: pred,
        loss,
        plans: plans.to_vec(),
    })
}

/// Single-image forward pass.
pub fn mae_forward<F: Float>(image: &Image, cfg: &ViTConfig, w: &ParamStore<F>, plan: &MaskPlan) -> Result<MaeOutput<F>> {
    let (ph, pw) = (image.height / cfg.patch_size.max(1), image.width / cfg.patch_size.max(1));
    if ph * pw != plan.n_tokens {
        return Err(Error::PlanMismatch {
            plan: plan.n_tokens,
            image: ph * pw,
        });
    }
    let t = batch_tensor::<F>(&[image])?;
    mae_forward_batch(&t, cfg, w, std::slice::from_ref(plan))
}

/// Visible patches from the original, masked patches from the reconstruction.
pub fn composite(original: &Image, reconstruction: &[f32], plan: &MaskPlan, patch: usize) -> Image {
    let mut out = original.clone();
    let cols = original.width / patch;
    for &t in &plan.masked {
        let (r, c) = (t / cols, t % cols);
        for y in r * patch..(r + 1) * patch {
            for x in c * patch..(c + 1) * patch {
                let i = out.idx(y, x);
                for ch in 0..out.channels {
                    out.data[i + ch] = reconstruction[i + ch].clamp(0.0, 1.0);
                }
            }
        }
    }
    out
}

/// Peak signal-to-noise ratio for unit-range images, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Image, b: &Image) -> f64 {
    let mse: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| ((x - y) as f64).powi(2))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
}

/// For each ratio, reconstructs every image under a fresh mask, composites
/// visible ground truth with predicted masked patches, and reports the mean
/// PSNR against the originals. Output follows the order of `ratios`.
pub fn mask_sweep<F: Float>(
    images: &[Image],
    cfg: &ViTConfig,
    w: &ParamStore<F>,
    ratios: &[f64],
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if let Some(&r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(Error::BadRatio(r));
    }
    let n = cfg.n_tokens();
    let w = w.detached();
    let mut out = Vec::with_capacity(ratios.len());
    for (ri, &ratio) in ratios.iter().enumerate() {
        let mut total = 0.0;
        for (ii, img) in images.iter().enumerate() {
            let plan = sample_mask(n, ratio, seed ^ ((ri as u64) << 32) ^ ii as u64)?;
            let o = mae_forward(img, cfg, &w, &plan)?;
            let recon: Vec<f32> = o.reconstruction.data().iter().map(|v| v.as_f64() as f32).collect();
            total += psnr(img, &composite(img, &recon, &plan, cfg.patch_size));
        }
        out.push((ratio, total / images.len().max(1) as f64));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::{count_params, registry};

    #[test]
    fn reference_mask_counts() {
        let p = sample_mask(4096, 0.75, 1).unwrap();
        assert_eq!((p.masked.len(), p.visible.len()), (3072, 1024));
        let z = sample_mask(64, 0.0, 1).unwrap();
        assert!(z.masked.is_empty());
        assert!(matches!(sample_mask(64, 1.0, 1), Err(Error::BadRatio(_))));
        assert!(matches!(sample_mask(64, -0.1, 1), Err(Error::BadRatio(_))));
    }

    #[test]
    fn plans_partition_tokens_and_are_deterministic() {
        let a = sample_mask(64, 0.6, 9).unwrap();
        let b = sample_mask(64, 0.6, 9).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.masked.iter().chain(&a.visible).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn allocation_matches_count() {
        let c = registry("desk-tiny").unwrap();
        let w: ParamStore<f32> = init_mae(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(w.numel(), count_params(&c));
    }

    #[test]
    fn normalized_targets_have_unit_moments() {
        let p: Vec<f64> = (0..12).map(|i| (i as f64).sqrt()).collect();
        let (t, _) = normalized_targets(&p, 12);
        let m: f64 = t.iter().sum::<f64>() / 12.0;
        let v: f64 = t.iter().map(|x| x * x).sum::<f64>() / 12.0;
        assert!(m.abs() < 1e-12);
        assert!((v - 1.0).abs() < 1e-5);
        let (flat, _) = normalized_targets(&[0.3f64; 4], 4);
        assert!(flat.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let t = Tensor::<f64>::from_fn(&[1, 4, 3], |i| (i as f64).sin());
        let plan = sample_mask(4, 0.5, 3).unwrap();
        let l = masked_patch_loss(&t, &t, &[plan]).unwrap();
        assert_eq!(l.item().unwrap(), 0.0);
    }

    #[test]
    fn plan_mismatch() {
        let c = registry("desk-tiny").unwrap();
        let w: ParamStore<f32> = init_mae(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let img = Image::new(64, 64, 3);
        let plan = sample_mask(48, 0.75, 0).unwrap();
        assert!(matches!(mae_forward(&img, &c, &w, &plan), Err(Error::PlanMismatch { .. })));
    }

    #[test]
    fn psnr_cap_and_ratio_zero() {
        let mut c = registry("desk-tiny").unwrap();
        c.layers = 1;
        c.decoder_layers = 1;
        let w: ParamStore<f32> = init_mae(&c, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let img = Image::from_vec(64, 64, 3, (0..64 * 64 * 3).map(|_| rng.gen()).collect()).unwrap();
        let sweep = mask_sweep(&[img], &c, &w, &[0.0, 0.75], 1).unwrap();
        assert_eq!(sweep[0], (0.0, PSNR_CAP_DB));
        assert!(sweep[1].1 < PSNR_CAP_DB);
        assert!(mask_sweep::<f32>(&[], &c, &w, &[0.95, 1.2], 1).is_err());
    }
}
