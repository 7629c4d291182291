use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of the encoder and of the reconstruction decoder used while
/// pretraining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViTConfig {
    pub name: String,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    pub patch_size: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub in_channels: usize,
    pub decoder_hidden: usize,
    pub decoder_layers: usize,
    pub decoder_heads: usize,
}

/// Names accepted by [`registry`].
pub const MODEL_NAMES: &[&str] = &["sapiens-0.3b", "sapiens-0.6b", "sapiens-1b", "sapiens-2b", "desk-tiny"];

/// Looks up a named architecture.
///
/// The four large rows pretrain with an 8-block, 512-wide reconstruction
/// decoder; `desk-tiny` uses two blocks at half the encoder width.
pub fn registry(name: &str) -> Result<ViTConfig> {
    let big = |hidden, layers, heads| ViTConfig {
        name: name.to_string(),
        hidden_size: hidden,
        layers,
        heads,
        mlp_ratio: 4.0,
        patch_size: 16,
        image_height: 1024,
        image_width: 1024,
        in_channels: 3,
        decoder_hidden: 512,
        decoder_layers: 8,
        decoder_heads: 16,
    };
    let cfg = match name {
        "sapiens-0.3b" => big(1024, 24, 16),
        "sapiens-0.6b" => big(1280, 32, 16),
        "sapiens-1b" => big(1536, 40, 24),
        "sapiens-2b" => big(1920, 48, 32),
        "desk-tiny" => ViTConfig {
            name: name.to_string(),
            hidden_size: 64,
            layers: 4,
            heads: 4,
            mlp_ratio: 4.0,
            patch_size: 8,
            image_height: 64,
            image_width: 64,
            in_channels: 3,
            decoder_hidden: 32,
            decoder_layers: 2,
            decoder_heads: 4,
        },
        _ => return Err(Error::UnknownModel(name.to_string())),
    };
    Ok(cfg)
}

impl ViTConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::BadConfig(m));
        if self.hidden_size == 0 || self.heads == 0 || self.patch_size == 0 || self.in_channels == 0 {
            return bad("hidden_size, heads, patch_size and in_channels must be positive".into());
        }
        if self.hidden_size % self.heads != 0 {
            return bad(format!("hidden {} not divisible by {} heads", self.hidden_size, self.heads));
        }
        if self.decoder_hidden == 0 || self.decoder_heads == 0 || self.decoder_hidden % self.decoder_heads != 0 {
            return bad(format!(
                "decoder hidden {} not divisible by {} heads",
                self.decoder_hidden, self.decoder_heads
            ));
        }
        if self.mlp_ratio <= 0.0 {
            return bad("mlp_ratio must be positive".into());
        }
        if self.image_height == 0
            || self.image_width == 0
            || self.image_height % self.patch_size != 0
            || self.image_width % self.patch_size != 0
        {
            return Err(Error::IndivisibleImage {
                height: self.image_height,
                width: self.image_width,
                patch: self.patch_size,
            });
        }
        Ok(())
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.image_height / self.patch_size, self.image_width / self.patch_size)
    }

    pub fn n_tokens(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.in_channels
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.hidden_size as f64).round() as usize
    }

    pub fn decoder_mlp_hidden(&self) -> usize {
        (self.mlp_ratio * self.decoder_hidden as f64).round() as usize
    }

    /// Same architecture at a different input resolution.
    pub fn with_image(&self, height: usize, width: usize) -> ViTConfig {
        ViTConfig {
            image_height: height,
            image_width: width,
            ..self.clone()
        }
    }
}

/// Parameters of one pre-norm transformer block of width `d` and MLP width `m`.
fn block_params(d: usize, m: usize) -> usize {
    let norms = 2 * 2 * d;
    let attn = (d * 3 * d + 3 * d) + (d * d + d);
    let mlp = (d * m + m) + (m * d + d);
    norms + attn + mlp
}

/// Encoder parameters: patch projection, positional table, blocks and the
/// closing norm (present only when there is at least one block).
pub fn count_encoder_params(cfg: &ViTConfig) -> usize {
    let d = cfg.hidden_size;
    let patch = cfg.patch_dim() * d + d;
    let pos = cfg.n_tokens() * d;
    let final_norm = if cfg.layers > 0 { 2 * d } else { 0 };
    patch + pos + cfg.layers * block_params(d, cfg.mlp_hidden()) + final_norm
}

/// Reconstruction-decoder parameters: input projection, mask token,
/// positional table, blocks, norm and per-patch pixel predictor.
pub fn count_decoder_params(cfg: &ViTConfig) -> usize {
    let (d, dd) = (cfg.hidden_size, cfg.decoder_hidden);
    let embed = d * dd + dd;
    let mask_token = dd;
    let pos = cfg.n_tokens() * dd;
    let blocks = cfg.decoder_layers * block_params(dd, cfg.decoder_mlp_hidden());
    let norm = 2 * dd;
    let pred = dd * cfg.patch_dim() + cfg.patch_dim();
    embed + mask_token + pos + blocks + norm + pred
}

/// Total parameters of the pretraining model (encoder plus reconstruction decoder).
pub fn count_params(cfg: &ViTConfig) -> usize {
    count_encoder_params(cfg) + count_decoder_params(cfg)
}

pub const FLOP_CONVENTION: &str =
    "one multiply-add = 2 FLOPs; counts patch projection, qkv/out projections, MLP and both attention matmuls; \
     excludes norms, softmax, activations and biases";

/// Forward-pass operation count of the encoder on `n_tokens` tokens.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlopEstimate {
    pub patch_embed: f64,
    /// qkv, output projection and MLP matmuls over all blocks.
    pub linear: f64,
    /// `q @ k^T` and `attn @ v` over all blocks.
    pub attention: f64,
}

impl FlopEstimate {
    pub fn total(&self) -> f64 {
        self.patch_embed + self.linear + self.attention
    }

    /// Multiply-adds of the dense projections alone (attention matmuls excluded).
    pub fn projection_macs(&self) -> f64 {
        (self.patch_embed + self.linear) / 2.0
    }
}

pub fn estimate_flops(cfg: &ViTConfig, n_tokens: usize) -> FlopEstimate {
    let n = n_tokens as f64;
    let d = cfg.hidden_size as f64;
    let m = cfg.mlp_hidden() as f64;
    let l = cfg.layers as f64;
    FlopEstimate {
        patch_embed: 2.0 * n * cfg.patch_dim() as f64 * d,
        linear: l * 2.0 * n * (3.0 * d * d + d * d + 2.0 * d * m),
        attention: l * 2.0 * (2.0 * n * n * d),
    }
}

/// Published reference values: (name, #params in billions, FLOPs in tera).
pub const REFERENCE_SPECS: &[(&str, f64, f64)] = &[
    ("sapiens-0.3b", 0.336, 1.242),
    ("sapiens-0.6b", 0.664, 2.583),
    ("sapiens-1b", 1.169, 4.647),
    ("sapiens-2b", 2.163, 8.709),
];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn registry_rows() {
        let c = registry("sapiens-0.3b").unwrap();
        assert_eq!((c.hidden_size, c.layers, c.heads), (1024, 24, 16));
        let c = registry("sapiens-2b").unwrap();
        assert_eq!((c.hidden_size, c.layers, c.heads), (1920, 48, 32));
        let c = registry("desk-tiny").unwrap();
        assert_eq!((c.hidden_size, c.layers, c.heads, c.patch_size), (64, 4, 4, 8));
        assert_eq!((c.image_height, c.image_width), (64, 64));
        assert!(matches!(registry("sapiens-9b"), Err(Error::UnknownModel(_))));
        for name in MODEL_NAMES {
            registry(name).unwrap().validate().unwrap();
        }
    }

    #[test]
    fn params_near_reference() {
        for &(name, billions, _) in REFERENCE_SPECS {
            let got = count_params(&registry(name).unwrap()) as f64 / 1e9;
            assert!((got / billions - 1.0).abs() < 0.05, "{name}: {got}");
        }
    }

    #[test]
    fn token_grid_of_reference_resolution() {
        let c = registry("sapiens-1b").unwrap();
        assert_eq!(c.grid(), (64, 64));
        assert_eq!(c.n_tokens(), 4096);
        let frac: f64 = (16.0 * 16.0) / (1024.0 * 1024.0) * 100.0;
        assert!((frac - 0.0244).abs() < 1e-4);
    }

    #[test]
    fn validate_rejects_bad_configs() {
        let mut c = registry("desk-tiny").unwrap();
        c.heads = 5;
        assert!(matches!(c.validate(), Err(Error::BadConfig(_))));
        let c = registry("desk-tiny").unwrap().with_image(60, 64);
        assert!(matches!(c.validate(), Err(Error::IndivisibleImage { .. })));
    }

    #[test]
    fn flops_by_hand() {
        let c = registry("desk-tiny").unwrap();
        let f = estimate_flops(&c, 64);
        // patch: 2*64*192*64; per block: qkv 2*64*64*192, proj 2*64*64*64,
        // mlp 2*(2*64*64*256), attention 2*(2*64*64*64)
        let patch = 2.0 * 64.0 * 192.0 * 64.0;
        let block = 2.0 * 64.0 * 64.0 * 192.0
            + 2.0 * 64.0 * 64.0 * 64.0
            + 2.0 * 2.0 * 64.0 * 64.0 * 256.0
            + 2.0 * 2.0 * 64.0 * 64.0 * 64.0;
        assert_eq!(f.total(), patch + 4.0 * block);
        let mut z = c.clone();
        z.layers = 0;
        assert_eq!(estimate_flops(&z, 64).total(), patch);
    }

    #[test]
    fn flops_monotone() {
        let c = registry("desk-tiny").unwrap();
        let base = estimate_flops(&c, 64).total();
        assert!(estimate_flops(&c, 65).total() > base);
        let mut w = c.clone();
        w.hidden_size = 80;
        assert!(estimate_flops(&w, 64).total() > base);
        let mut l = c;
        l.layers = 5;
        assert!(estimate_flops(&l, 64).total() > base);
    }
}
