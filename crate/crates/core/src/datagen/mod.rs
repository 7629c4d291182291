//! Procedural synthetic humans: scene sampling, a capsule-mannequin ray
//! tracer producing image, keypoints, part mask, depth and normals,
//! augmentation, background compositing, person curation and file I/O.

mod augment;
mod background;
mod curate;
mod io;
mod render;
mod scene;

use rayon::prelude::*;

pub use augment::{augment, composite_background, hflip, recompute_boxes, warp, AugOp};
pub use background::{procedural, render_background, N_STYLES};
pub use curate::{curate, qualifying_persons, CurationStats, DEFAULT_MIN_BOX, DEFAULT_MIN_SCORE, HISTOGRAM_BINS};
pub use io::{
    load_sample, read_keypoints, read_manifest, read_pfm, read_png, read_png_bytes, save_sample, write_keypoints,
    write_manifest, write_pfm, write_png, write_png_bytes, ManifestRecord, Person,
};
pub use render::{render_sample, Sample};
pub use scene::{Background, Build, Camera, Figure, Palette, Pose, SceneKind, SceneParams};

use crate::error::{Error, Result};

/// Default frame sizes: square pretraining scenes, 4:3 portrait person crops.
pub const PRETRAIN_SIZE: (usize, usize) = (64, 64);
pub const FINETUNE_SIZE: (usize, usize) = (64, 48);

/// Scene seed for sample `index` of a dataset seeded with `seed`.
pub fn sample_seed(seed: u64, index: u64, attempt: u64) -> u64 {
    // splitmix64 finalizer over the combined key
    let mut z = seed
        .wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(attempt.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Renders sample `index`, redrawing the scene when nothing is visible.
pub fn generate_one(seed: u64, index: u64, kind: SceneKind, height: usize, width: usize) -> Result<Sample> {
    for attempt in 0..32 {
        let params = SceneParams::random(sample_seed(seed, index, attempt), kind, height, width);
        match render_sample(&params, height, width) {
            Err(Error::EmptyScene) => continue,
            other => return other,
        }
    }
    Err(Error::EmptyScene)
}

/// Renders `count` samples in parallel; the result depends only on the arguments.
pub fn generate(seed: u64, count: usize, kind: SceneKind, height: usize, width: usize) -> Result<Vec<Sample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| generate_one(seed, i, kind, height, width))
        .collect()
}
