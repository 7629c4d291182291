use sapiens_core::datagen::{
    augment, curate, generate, hflip, read_manifest, render_sample, AugOp, Sample, SceneKind, SceneParams, FINETUNE_SIZE,
};
use sapiens_core::heads::Visibility;
use std::path::Path;

fn finetune_set(seed: u64, n: usize) -> Vec<Sample> {
    generate(seed, n, SceneKind::Finetune, FINETUNE_SIZE.0, FINETUNE_SIZE.1).unwrap()
}

#[test]
fn identical_scene_params_render_identically() {
    for seed in 0..6 {
        let p = SceneParams::random(seed, SceneKind::Pretrain, 64, 64);
        match (render_sample(&p, 64, 64), render_sample(&p.clone(), 64, 64)) {
            (Ok(a), Ok(b)) => assert_eq!(a, b),
            (Err(_), Err(_)) => {}
            _ => panic!("rendering is not deterministic"),
        }
    }
    assert_eq!(generate(4, 8, SceneKind::Pretrain, 64, 64).unwrap(), generate(4, 8, SceneKind::Pretrain, 64, 64).unwrap());
}

fn median(mut v: Vec<f32>) -> f32 {
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

#[test]
fn figure_depths_follow_configured_offsets() {
    let mut checked = 0;
    for seed in 0..40 {
        let p = SceneParams::random(seed, SceneKind::Pretrain, 64, 64);
        let Ok(s) = render_sample(&p, 64, 64) else { continue };
        let mut medians = Vec::new();
        for (i, f) in p.figures.iter().enumerate() {
            let d: Vec<f32> = s.person_id.iter().zip(&s.depth).filter(|(id, _)| **id as usize == i + 1).map(|(_, d)| *d).collect();
            if d.len() >= 10 {
                medians.push((f.depth_offset, median(d)));
            }
        }
        for a in &medians {
            for b in &medians {
                if a.0 < b.0 {
                    assert!(a.1 < b.1, "seed {seed}: offsets {} < {} but medians {} >= {}", a.0, b.0, a.1, b.1);
                    checked += 1;
                }
            }
        }
    }
    assert!(checked >= 10, "only {checked} figure pairs compared");
}

#[test]
fn background_pixels_carry_no_labels() {
    for s in finetune_set(1, 8).iter().chain(&generate(1, 8, SceneKind::Pretrain, 64, 64).unwrap()) {
        for i in 0..s.n_pixels() {
            let bg = s.part_mask[i] == 0;
            assert_eq!(bg, s.person_id[i] == 0);
            assert_eq!(bg, s.depth[i] == 0.0);
            let n = &s.normal[3 * i..3 * i + 3];
            if bg {
                assert_eq!(n, [0.0; 3]);
            } else {
                let len = n.iter().map(|v| v * v).sum::<f32>().sqrt();
                assert!((len - 1.0).abs() < 1e-4);
                // facing the camera: positive along the direction back to the eye
                let (x, y) = ((i % s.width) as f64, (i / s.width) as f64);
                let eye = [-(x + 0.5 - s.width as f64 / 2.0) / s.focal, (y + 0.5 - s.height as f64 / 2.0) / s.focal, 1.0];
                let facing: f64 = n.iter().zip(eye).map(|(a, b)| *a as f64 * b).sum();
                assert!(facing > -1e-3, "normal {n:?} faces away at ({x}, {y})");
            }
        }
    }
}

#[test]
fn visible_keypoints_lie_on_their_figure() {
    let radius = 2isize;
    for s in finetune_set(2, 16) {
        for (pi, kps) in s.keypoints.iter().enumerate() {
            for ([x, y], v) in kps.coords.iter().zip(&kps.visibility) {
                if *v != Visibility::Visible {
                    continue;
                }
                let (cx, cy) = (x.round() as isize, y.round() as isize);
                let near = (-radius..=radius).any(|dy| {
                    (-radius..=radius).any(|dx| {
                        let (px, py) = (cx + dx, cy + dy);
                        px >= 0
                            && py >= 0
                            && (px as usize) < s.width
                            && (py as usize) < s.height
                            && s.person_id[py as usize * s.width + px as usize] as usize == pi + 1
                    })
                });
                assert!(near, "keypoint ({x:.1}, {y:.1}) is off figure {}", pi + 1);
            }
        }
    }
}

#[test]
fn normals_agree_with_the_depth_surface() {
    // back-project neighbouring pixels and compare the surface normal they
    // span with the rendered one
    let mut cosines = Vec::new();
    for s in finetune_set(3, 8) {
        let (h, w, f) = (s.height, s.width, s.focal);
        let point = |x: usize, y: usize| {
            let d = s.depth[y * w + x] as f64;
            [d * (x as f64 + 0.5 - w as f64 / 2.0) / f, -d * (y as f64 + 0.5 - h as f64 / 2.0) / f, -d]
        };
        for y in 1..h - 1 {
            for x in 1..w - 1 {
                let ids = [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].map(|(a, b)| s.person_id[b * w + a]);
                if ids[0] == 0 || ids.iter().any(|&i| i != ids[0]) {
                    continue;
                }
                let parts = [(x, y), (x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)].map(|(a, b)| s.part_mask[b * w + a]);
                if parts.iter().any(|&p| p != parts[0]) {
                    continue;
                }
                let (l, r, u, d) = (point(x - 1, y), point(x + 1, y), point(x, y - 1), point(x, y + 1));
                let dx = [r[0] - l[0], r[1] - l[1], r[2] - l[2]];
                let dy = [u[0] - d[0], u[1] - d[1], u[2] - d[2]];
                let n = [dx[1] * dy[2] - dx[2] * dy[1], dx[2] * dy[0] - dx[0] * dy[2], dx[0] * dy[1] - dx[1] * dy[0]];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                let g = &s.normal[3 * (y * w + x)..3 * (y * w + x) + 3];
                cosines.push((n[0] * g[0] as f64 + n[1] * g[1] as f64 + n[2] * g[2] as f64) / len);
            }
        }
    }
    cosines.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = cosines[cosines.len() / 2];
    assert!(cosines.len() > 1000 && med > 0.9, "{} interior pixels, median cosine {med}", cosines.len());
}

#[test]
fn flipping_twice_restores_the_sample() {
    for s in finetune_set(4, 6) {
        let f = hflip(&s);
        assert_ne!(f.image, s.image);
        let back = hflip(&f);
        assert_eq!(back.image, s.image);
        assert_eq!(back.part_mask, s.part_mask);
        assert_eq!(back.depth, s.depth);
        assert_eq!(back.normal, s.normal);
        for (a, b) in back.keypoints.iter().zip(&s.keypoints) {
            assert_eq!(a.visibility, b.visibility);
            for (p, q) in a.coords.iter().zip(&b.coords) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn photometric_jitter_changes_pixels_only() {
    for (i, s) in finetune_set(5, 6).into_iter().enumerate() {
        let j = augment(&s, &[AugOp::Photometric], i as u64).unwrap();
        assert_ne!(j.image, s.image);
        assert_eq!(j.part_mask, s.part_mask);
        assert_eq!(j.person_id, s.person_id);
        assert_eq!(j.depth, s.depth);
        assert_eq!(j.normal, s.normal);
        assert_eq!(j.keypoints, s.keypoints);
        assert_eq!(j.boxes, s.boxes);
    }
}

#[test]
fn curation_is_idempotent() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/curation_manifest.jsonl");
    let records = read_manifest(&path).unwrap();
    for (score, size) in [(0.9, 300.0), (0.5, 100.0), (0.95, 600.0)] {
        let (once, _) = curate(&records, score, size);
        let (twice, stats) = curate(&once, score, size);
        assert_eq!(once, twice);
        assert_eq!(stats.dropped, 0);
    }
}
