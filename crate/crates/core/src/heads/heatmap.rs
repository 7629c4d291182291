use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ground-truth Gaussian width in heatmap pixels.
pub const DEFAULT_SIGMA: f64 = 2.0;
/// Input pixels per heatmap pixel for the pose head.
pub const POSE_STRIDE: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Visibility {
    Absent = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Self::Absent),
            1 => Some(Self::Occluded),
            2 => Some(Self::Visible),
            _ => None,
        }
    }
    pub fn labeled(self) -> bool {
        self != Self::Absent
    }
}

/// Pixel coordinates with per-joint visibility and confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keypoints {
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<Visibility>,
    /// Peak heatmap value for decoded keypoints, 1 for ground truth.
    pub scores: Vec<f64>,
}

impl Keypoints {
    pub fn new(coords: Vec<[f64; 2]>, visibility: Vec<Visibility>) -> Self {
        let scores = vec![1.0; coords.len()];
        Self {
            coords,
            visibility,
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Mirror about the vertical axis of a `width`-pixel image and swap
    /// left/right joints.
    pub fn flip_horizontal(&self, width: usize, perm: &[usize]) -> Keypoints {
        let mut out = self.clone();
        for k in 0..self.len() {
            let j = perm[k];
            let [x, y] = self.coords[j];
            out.coords[k] = [(width - 1) as f64 - x, y];
            out.visibility[k] = self.visibility[j];
            out.scores[k] = self.scores[j];
        }
        out
    }

    /// Tight box `(x, y, w, h)` around labeled keypoints.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let pts: Vec<_> = self
            .coords
            .iter()
            .zip(&self.visibility)
            .filter(|(_, v)| v.labeled())
            .map(|(c, _)| *c)
            .collect();
        if pts.is_empty() {
            return None;
        }
        let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
        for [x, y] in pts {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        Some([x0, y0, x1 - x0, y1 - y0])
    }
}

/// Per-joint score maps `[k, height, width]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmaps {
    pub maps: Vec<f64>,
    pub k: usize,
    pub height: usize,
    pub width: usize,
    /// Input pixels per heatmap pixel.
    pub stride: f64,
}

impl Heatmaps {
    pub fn channel(&self, k: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.maps[k * n..(k + 1) * n]
    }
}

/// Pixel-center-aligned mapping: input pixel centers land on heatmap pixel
/// centers, so an integer input column `x` maps to `(x + 0.5) / s - 0.5`.
pub fn image_to_heatmap(v: f64, stride: f64) -> f64 {
    (v + 0.5) / stride - 0.5
}

pub fn heatmap_to_image(v: f64, stride: f64) -> f64 {
    (v + 0.5) * stride - 0.5
}

/// Unnormalized Gaussians (peak 1) at each labeled keypoint; absent joints
/// give all-zero maps.
pub fn make_heatmaps(kps: &Keypoints, out_h: usize, out_w: usize, sigma: f64, stride: f64) -> Result<Heatmaps> {
    if !(sigma > 0.0) || !(stride > 0.0) || out_h == 0 || out_w == 0 {
        return Err(Error::BadSize(format!(
            "heatmap {out_h}x{out_w}, sigma {sigma}, stride {stride}"
        )));
    }
    let n = out_h * out_w;
    let mut maps = vec![0.0; kps.len() * n];
    let inv = 1.0 / (2.0 * sigma * sigma);
    for (k, ([x, y], vis)) in kps.coords.iter().zip(&kps.visibility).enumerate() {
        if !vis.labeled() {
            continue;
        }
        let (cx, cy) = (image_to_heatmap(*x, stride), image_to_heatmap(*y, stride));
        let m = &mut maps[k * n..(k + 1) * n];
        for r in 0..out_h {
            let dy = r as f64 - cy;
            for c in 0..out_w {
                let dx = c as f64 - cx;
                m[r * out_w + c] = (-(dx * dx + dy * dy) * inv).exp();
            }
        }
    }
    Ok(Heatmaps {
        maps,
        k: kps.len(),
        height: out_h,
        width: out_w,
        stride,
    })
}

/// Argmax per channel (first maximum in row-major order), shifted a quarter
/// pixel toward the larger neighbour on each axis, mapped back to input
/// pixels. Confidence is the peak value.
pub fn decode_keypoints(h: &Heatmaps) -> Keypoints {
    let mut coords = Vec::with_capacity(h.k);
    let mut scores = Vec::with_capacity(h.k);
    for k in 0..h.k {
        let m = h.channel(k);
        let mut best = 0;
        for (i, &v) in m.iter().enumerate() {
            if v > m[best] {
                best = i;
            }
        }
        let (r, c) = (best / h.width, best % h.width);
        let mut x = c as f64;
        let mut y = r as f64;
        if c > 0 && c + 1 < h.width {
            x += 0.25 * quarter(m[best - 1], m[best + 1]);
        }
        if r > 0 && r + 1 < h.height {
            y += 0.25 * quarter(m[best - h.width], m[best + h.width]);
        }
        coords.push([heatmap_to_image(x, h.stride), heatmap_to_image(y, h.stride)]);
        scores.push(m[best]);
    }
    Keypoints {
        visibility: vec![Visibility::Visible; coords.len()],
        coords,
        scores,
    }
}

fn quarter(before: f64, after: f64) -> f64 {
    if after > before {
        1.0
    } else if before > after {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(x: f64, y: f64) -> Keypoints {
        Keypoints::new(vec![[x, y]], vec![Visibility::Visible])
    }

    #[test]
    fn peak_and_sigma_value() {
        let h = make_heatmaps(&one(5.0, 7.0), 16, 16, 2.0, 1.0).unwrap();
        let m = h.channel(0);
        assert_eq!(m[7 * 16 + 5], 1.0);
        assert!(m.iter().all(|&v| v <= 1.0));
        assert!((m[7 * 16 + 7] - (-0.5f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn absent_is_zero() {
        let k = Keypoints::new(vec![[3.0, 3.0]], vec![Visibility::Absent]);
        let h = make_heatmaps(&k, 8, 8, 2.0, 1.0).unwrap();
        assert!(h.maps.iter().all(|&v| v == 0.0));
        assert!(make_heatmaps(&k, 8, 8, 0.0, 1.0).is_err());
    }

    #[test]
    fn decode_sharp_peak_and_tie_break() {
        let h = make_heatmaps(&one(10.0, 20.0), 32, 32, 0.5, 1.0).unwrap();
        let d = decode_keypoints(&h);
        assert_eq!(d.coords[0], [10.0, 20.0]);
        let mut maps = vec![0.0; 16];
        maps[6] = 1.0;
        maps[9] = 1.0;
        let d = decode_keypoints(&Heatmaps { maps, k: 1, height: 4, width: 4, stride: 1.0 });
        assert_eq!(d.coords[0], [2.0, 1.0]);
    }

    #[test]
    fn quarter_pixel_rule() {
        let mut maps = vec![0.0; 32];
        maps[10] = 1.0;
        maps[11] = 0.5;
        maps[9] = 0.2;
        let d = decode_keypoints(&Heatmaps { maps, k: 1, height: 1, width: 32, stride: 1.0 });
        assert_eq!(d.coords[0][0], 10.25);
    }

    #[test]
    fn round_trip_through_stride() {
        for &(x, y) in &[(0.0, 0.0), (13.0, 29.0), (47.0, 63.0), (22.6, 5.1)] {
            let h = make_heatmaps(&one(x, y), 16, 12, 2.0, 4.0).unwrap();
            let d = decode_keypoints(&h);
            assert!((d.coords[0][0] - x).abs() <= 2.0 && (d.coords[0][1] - y).abs() <= 2.0, "{:?}", d.coords);
        }
    }
}
