use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::render::Sample;
use crate::error::{Error, Result};
use crate::heads::{flip_permutation, Visibility, DESK_FLIP_PAIRS, DESK_K};
use crate::image::Image;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AugOp {
    /// Zoom into a random window covering 77-100% of each side.
    Crop,
    /// Zoom out by 75-100%, padding with neutral gray and background labels.
    Scale,
    HFlip,
    /// Brightness, contrast and saturation jitter; pixels only.
    Photometric,
}

/// Fill color for pixels exposed by zooming out.
const PAD: f32 = 0.5;

/// Applies `ops` in order with parameters drawn from `seed`.
pub fn augment(sample: &Sample, ops: &[AugOp], seed: u64) -> Result<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = sample.clone();
    for op in ops {
        s = match op {
            AugOp::HFlip => hflip(&s),
            AugOp::Photometric => photometric(&s, &mut rng),
            AugOp::Crop => {
                let z = rng.gen_range(1.0..1.3);
                let (ox, oy) = (
                    rng.gen_range(0.0..=s.width as f64 * (1.0 - 1.0 / z)),
                    rng.gen_range(0.0..=s.height as f64 * (1.0 - 1.0 / z)),
                );
                warp(&s, z, ox, oy)?
            }
            AugOp::Scale => {
                let z: f64 = rng.gen_range(0.75..1.0);
                let (ex, ey) = (s.width as f64 * (1.0 / z - 1.0), s.height as f64 * (1.0 / z - 1.0));
                warp(&s, z, -rng.gen_range(0.0..=ex), -rng.gen_range(0.0..=ey))?
            }
        };
    }
    Ok(s)
}

/// Mirror every modality about the vertical center line.
pub fn hflip(s: &Sample) -> Sample {
    let (h, w) = (s.height, s.width);
    let mut out = s.clone();
    out.image = s.image.flip_horizontal();
    for y in 0..h {
        for x in 0..w {
            let (d, src) = (y * w + x, y * w + (w - 1 - x));
            out.part_mask[d] = s.part_mask[src];
            out.person_id[d] = s.person_id[src];
            out.depth[d] = s.depth[src];
            // zero stays +0.0 so background normals remain bitwise (0, 0, 0)
            let nx = s.normal[src * 3];
            out.normal[d * 3] = if nx == 0.0 { 0.0 } else { -nx };
            out.normal[d * 3 + 1] = s.normal[src * 3 + 1];
            out.normal[d * 3 + 2] = s.normal[src * 3 + 2];
        }
    }
    let perm = flip_permutation(DESK_K, &DESK_FLIP_PAIRS);
    out.keypoints = s
        .keypoints
        .iter()
        .map(|k| {
            let p: Vec<usize> = if k.len() == DESK_K { perm.clone() } else { (0..k.len()).collect() };
            k.flip_horizontal(w, &p)
        })
        .collect();
    out.boxes = s.boxes.iter().map(|b| [w as f64 - b[0] - b[2], b[1], b[2], b[3]]).collect();
    out
}

fn photometric<R: Rng>(s: &Sample, rng: &mut R) -> Sample {
    let bright: f32 = rng.gen_range(-0.1..0.1);
    let contrast: f32 = rng.gen_range(0.8..1.2);
    let sat: f32 = rng.gen_range(0.7..1.3);
    let mut out = s.clone();
    let mean = s.image.data.iter().sum::<f32>() / s.image.data.len().max(1) as f32;
    for p in out.image.data.chunks_mut(3) {
        let gray = (p[0] + p[1] + p[2]) / 3.0;
        for v in p.iter_mut() {
            let c = gray + (*v - gray) * sat;
            *v = ((c - mean) * contrast + mean + bright).clamp(0.0, 1.0);
        }
    }
    out
}

/// Resamples every modality so output pixel `x` shows input position
/// `(x + 0.5) / zoom - 0.5 + offset_x` (likewise for rows). Labels use the
/// nearest input pixel; positions outside the input become background.
pub fn warp(s: &Sample, zoom: f64, offset_x: f64, offset_y: f64) -> Result<Sample> {
    let (h, w) = (s.height, s.width);
    let src = |d: usize, off: f64| (d as f64 + 0.5) / zoom - 0.5 + off;
    let mut out = s.clone();
    out.image = Image::new(h, w, s.image.channels);
    out.part_mask.fill(0);
    out.person_id.fill(0);
    out.depth.fill(0.0);
    out.normal.fill(0.0);
    let mut px = vec![0f32; s.image.channels];
    for y in 0..h {
        let sy = src(y, offset_y);
        for x in 0..w {
            let sx = src(x, offset_x);
            let d = y * w + x;
            let inside = sx > -0.5 && sy > -0.5 && sx < w as f64 - 0.5 && sy < h as f64 - 0.5;
            if !inside {
                out.image.pixel_mut(y, x).fill(PAD);
                continue;
            }
            s.image.sample(sy, sx, &mut px);
            out.image.pixel_mut(y, x).copy_from_slice(&px);
            let i = sy.round() as usize * w + sx.round() as usize;
            out.part_mask[d] = s.part_mask[i];
            out.person_id[d] = s.person_id[i];
            out.depth[d] = s.depth[i];
            out.normal[d * 3..d * 3 + 3].copy_from_slice(&s.normal[i * 3..i * 3 + 3]);
        }
    }
    if !out.part_mask.iter().any(|&c| c > 0) {
        return Err(Error::DegenerateCrop);
    }
    for k in out.keypoints.iter_mut() {
        for (c, v) in k.coords.iter_mut().zip(k.visibility.iter_mut()) {
            if *v == Visibility::Absent {
                continue;
            }
            let (x, y) = ((c[0] - offset_x + 0.5) * zoom - 0.5, (c[1] - offset_y + 0.5) * zoom - 0.5);
            if x.round() < 0.0 || y.round() < 0.0 || x.round() >= w as f64 || y.round() >= h as f64 {
                *c = [0.0, 0.0];
                *v = Visibility::Absent;
            } else {
                *c = [x.clamp(0.0, (w - 1) as f64), y.clamp(0.0, (h - 1) as f64)];
            }
        }
    }
    out.focal = s.focal * zoom;
    recompute_boxes(&mut out);
    Ok(out)
}

/// Tight boxes from per-person pixel ownership; persons with no pixels get
/// an empty box at the origin.
pub fn recompute_boxes(s: &mut Sample) {
    let w = s.width;
    for (p, b) in s.boxes.iter_mut().enumerate() {
        let id = p as u8 + 1;
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for (i, _) in s.person_id.iter().enumerate().filter(|(_, &o)| o == id) {
            x0 = x0.min(i % w);
            x1 = x1.max(i % w);
            y0 = y0.min(i / w);
            y1 = y1.max(i / w);
        }
        *b = if x0 == usize::MAX {
            [0.0; 4]
        } else {
            [x0 as f64, y0 as f64, (x1 - x0 + 1) as f64, (y1 - y0 + 1) as f64]
        };
    }
}

/// Replaces non-human pixels with the center crop of `background`; labels
/// and human pixels are untouched.
pub fn composite_background(s: &Sample, background: &Image) -> Result<Sample> {
    if background.height < s.height || background.width < s.width {
        return Err(Error::TooSmallBackground {
            bg_h: background.height,
            bg_w: background.width,
            h: s.height,
            w: s.width,
        });
    }
    let (y0, x0) = ((background.height - s.height) / 2, (background.width - s.width) / 2);
    let mut out = s.clone();
    for y in 0..s.height {
        for x in 0..s.width {
            if s.part_mask[y * s.width + x] == 0 {
                let src = background.pixel(y0 + y, x0 + x);
                let dst = out.image.pixel_mut(y, x);
                for (d, v) in dst.iter_mut().zip(src.iter().cycle()) {
                    *d = *v;
                }
            }
        }
    }
    Ok(out)
}
