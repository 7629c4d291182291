use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::io::read_png;
use super::scene::Background;
use crate::error::Result;
use crate::image::Image;

/// Number of procedural background styles.
pub const N_STYLES: u8 = 3;

/// Fills a `height x width` frame with the requested background.
pub fn render_background(bg: &Background, height: usize, width: usize) -> Result<Image> {
    match bg {
        Background::Procedural { style, seed } => Ok(procedural(*style, *seed, height, width)),
        Background::File(path) => {
            let img = read_png(path.as_ref())?;
            Ok(fit(&img, height, width))
        }
    }
}

/// Center crop to the target aspect ratio, then resize.
fn fit(img: &Image, height: usize, width: usize) -> Image {
    let (sh, sw) = (img.height as f64, img.width as f64);
    let s = (sh / height as f64).min(sw / width as f64);
    let (ch, cw) = ((height as f64 * s) as usize, (width as f64 * s) as usize);
    let (y0, x0) = ((img.height - ch) / 2, (img.width - cw) / 2);
    let mut crop = Image::new(ch.max(1), cw.max(1), img.channels);
    for y in 0..crop.height {
        for x in 0..crop.width {
            crop.pixel_mut(y, x).copy_from_slice(img.pixel(y0 + y, x0 + x));
        }
    }
    let out = crop.resize(height, width);
    if out.channels == 3 {
        out
    } else {
        let mut rgb = Image::new(height, width, 3);
        for y in 0..height {
            for x in 0..width {
                let v = out.pixel(y, x)[0];
                rgb.pixel_mut(y, x).fill(v);
            }
        }
        rgb
    }
}

/// Smooth, person-free backgrounds: 0 a two-color gradient, 1 a low-contrast
/// checkerboard, 2 bilinear value noise on a coarse lattice.
pub fn procedural(style: u8, seed: u64, height: usize, width: usize) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut color = || -> [f32; 3] { [rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9)] };
    let (c0, c1) = (color(), color());
    let mut img = Image::new(height, width, 3);
    match style % N_STYLES {
        0 => {
            let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let (s, c) = angle.sin_cos();
            let span = (height.max(width)) as f64;
            for y in 0..height {
                for x in 0..width {
                    let t = (((x as f64 - width as f64 / 2.0) * c + (y as f64 - height as f64 / 2.0) * s) / span + 0.5)
                        .clamp(0.0, 1.0) as f32;
                    let p = img.pixel_mut(y, x);
                    for k in 0..3 {
                        p[k] = c0[k] * (1.0 - t) + c1[k] * t;
                    }
                }
            }
        }
        1 => {
            let cell = rng.gen_range(10..20);
            let mix = 0.35f32;
            for y in 0..height {
                for x in 0..width {
                    let odd = ((x / cell) + (y / cell)) % 2 == 1;
                    let p = img.pixel_mut(y, x);
                    for k in 0..3 {
                        p[k] = if odd { c0[k] * (1.0 - mix) + c1[k] * mix } else { c0[k] };
                    }
                }
            }
        }
        _ => {
            let cell = rng.gen_range(12.0..24.0);
            let gh = (height as f64 / cell) as usize + 2;
            let gw = (width as f64 / cell) as usize + 2;
            let lattice: Vec<f32> = (0..gh * gw).map(|_| rng.gen()).collect();
            for y in 0..height {
                for x in 0..width {
                    let (fy, fx) = (y as f64 / cell, x as f64 / cell);
                    let (iy, ix) = (fy as usize, fx as usize);
                    let (ty, tx) = (smooth(fy - iy as f64), smooth(fx - ix as f64));
                    let at = |r: usize, c: usize| lattice[r * gw + c] as f64;
                    let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
                    let bot = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
                    let t = (top * (1.0 - ty) + bot * ty) as f32;
                    let p = img.pixel_mut(y, x);
                    for k in 0..3 {
                        p[k] = c0[k] * (1.0 - t) + c1[k] * t;
                    }
                }
            }
        }
    }
    img
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}
