//! Model-level evaluation: top-down pose inference with flip test, and
//! dataset metrics for each task.

use sapiens_tensor::Float;

use crate::datagen::Sample;
use crate::error::{Error, Result};
use crate::heads::{decode_keypoints, flip_permutation, Heatmaps, Keypoints, Task, DESK_FLIP_PAIRS, PART_CLASSES, POSE_STRIDE};
use crate::image::Image;
use crate::metrics::{
    depth_metrics, keypoint_ap_ar, pck, summarize_angles, angular_errors_deg, EvalProtocol, ImageDetections,
    MetricReport, SegAccumulator,
};
use crate::model::TaskModel;

/// Context added around a person box before cropping.
pub const BOX_PADDING: f64 = 1.25;

/// Affine map between model-input pixels and image pixels for one box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropTransform {
    /// Image coordinate of the crop's top-left edge.
    pub x0: f64,
    pub y0: f64,
    /// Image pixels per input pixel.
    pub scale: f64,
}

impl CropTransform {
    /// Pads `bbox = (x, y, w, h)` (pixel-edge coordinates) by
    /// [`BOX_PADDING`] and widens the short side to the input aspect ratio.
    pub fn from_box(bbox: [f64; 4], in_h: usize, in_w: usize) -> Result<Self> {
        let [x, y, w, h] = bbox;
        if !(w > 0.0 && h > 0.0) || !bbox.iter().all(|v| v.is_finite()) {
            return Err(Error::DegenerateBox);
        }
        let (cx, cy) = (x + w / 2.0, y + h / 2.0);
        let (mut w, mut h) = (w * BOX_PADDING, h * BOX_PADDING);
        let aspect = in_h as f64 / in_w as f64;
        if h / w > aspect {
            w = h / aspect;
        } else {
            h = w * aspect;
        }
        Ok(Self {
            x0: cx - w / 2.0,
            y0: cy - h / 2.0,
            scale: w / in_w as f64,
        })
    }

    /// Input pixel center `(u, v)` to image pixel-center coordinates.
    pub fn to_image(&self, u: f64, v: f64) -> [f64; 2] {
        [self.x0 + (u + 0.5) * self.scale - 0.5, self.y0 + (v + 0.5) * self.scale - 0.5]
    }

    pub fn crop(&self, image: &Image, in_h: usize, in_w: usize) -> Image {
        let mut out = Image::new(in_h, in_w, image.channels);
        let mut px = vec![0.0; image.channels];
        for v in 0..in_h {
            for u in 0..in_w {
                let [x, y] = self.to_image(u as f64, v as f64);
                image.sample(y, x, &mut px);
                out.pixel_mut(v, u).copy_from_slice(&px);
            }
        }
        out
    }
}

/// Mirrors `[k, h, w]` heatmaps left-right and swaps paired channels, undoing
/// a horizontal flip of the input.
pub fn unflip_heatmaps(maps: &[f64], k: usize, h: usize, w: usize, perm: &[usize]) -> Vec<f64> {
    let n = h * w;
    let mut out = vec![0.0; maps.len()];
    for c in 0..k {
        let src = &maps[perm[c] * n..(perm[c] + 1) * n];
        for r in 0..h {
            for x in 0..w {
                out[c * n + r * w + x] = src[r * w + (w - 1 - x)];
            }
        }
    }
    out
}

/// Pose heatmaps for whole model-sized images, optionally averaged with the
/// flipped-back prediction of each mirrored image.
pub fn predict_heatmaps<F: Float>(model: &TaskModel<F>, images: &[&Image], flip_test: bool, batch: usize) -> Result<Vec<Heatmaps>> {
    if model.task != Task::Pose {
        return Err(Error::Config(format!("expected a pose model, got {}", model.task)));
    }
    let (h, w) = model.output_size();
    let k = model.channels;
    let to_f64 = |v: Vec<F>| v.into_iter().map(|x| x.as_f64()).collect::<Vec<_>>();
    let mut maps: Vec<Vec<f64>> = model.predict(images, batch)?.into_iter().map(to_f64).collect();
    if flip_test {
        let perm = flip_permutation(k, &DESK_FLIP_PAIRS);
        let flipped: Vec<Image> = images.iter().map(|im| im.flip_horizontal()).collect();
        let refs: Vec<&Image> = flipped.iter().collect();
        for (m, f) in maps.iter_mut().zip(model.predict(&refs, batch)?) {
            let back = unflip_heatmaps(&to_f64(f), k, h, w, &perm);
            m.iter_mut().zip(back).for_each(|(a, b)| *a = 0.5 * (*a + b));
        }
    }
    Ok(maps
        .into_iter()
        .map(|maps| Heatmaps {
            maps,
            k,
            height: h,
            width: w,
            stride: POSE_STRIDE as f64,
        })
        .collect())
}

/// Crops each box (padded to the model's aspect ratio), predicts, and maps
/// decoded keypoints back to image coordinates.
pub fn topdown_infer<F: Float>(image: &Image, boxes: &[[f64; 4]], model: &TaskModel<F>, flip_test: bool) -> Result<Vec<Keypoints>> {
    let (ih, iw) = (model.cfg.image_height, model.cfg.image_width);
    let transforms = boxes
        .iter()
        .map(|b| CropTransform::from_box(*b, ih, iw))
        .collect::<Result<Vec<_>>>()?;
    if transforms.is_empty() {
        return Ok(Vec::new());
    }
    let crops: Vec<Image> = transforms.iter().map(|t| t.crop(image, ih, iw)).collect();
    let refs: Vec<&Image> = crops.iter().collect();
    let maps = predict_heatmaps(model, &refs, flip_test, 16)?;
    Ok(maps
        .iter()
        .zip(&transforms)
        .map(|(m, t)| {
            let mut kp = decode_keypoints(m);
            for c in kp.coords.iter_mut() {
                *c = t.to_image(c[0], c[1]);
            }
            kp
        })
        .collect())
}

/// One image's prediction for a task, in the layout of [`Sample`] buffers.
#[derive(Debug, Clone, PartialEq)]
pub enum Prediction {
    /// Instances with confidence, index-aligned with the ground-truth persons
    /// when produced from their boxes.
    Pose(Vec<(Keypoints, f64)>),
    Seg(Vec<u8>),
    Depth(Vec<f64>),
    /// Interleaved `[h, w, 3]`.
    Normal(Vec<f64>),
}

/// Predictions of `model` for each sample. Samples at the model's input
/// size are treated as person crops and predicted whole-frame; pose on any
/// other size runs [`topdown_infer`] on the sample's person boxes, and
/// dense tasks are resized in and out.
pub fn predict_samples<F: Float>(model: &TaskModel<F>, samples: &[Sample], flip_test: bool) -> Result<Vec<Prediction>> {
    let (ih, iw) = (model.cfg.image_height, model.cfg.image_width);
    let batch = 16;
    let native = |s: &Sample| (s.height, s.width) == (ih, iw);
    if model.task == Task::Pose {
        let mut out = vec![Prediction::Pose(Vec::new()); samples.len()];
        let whole: Vec<usize> = (0..samples.len()).filter(|&i| native(&samples[i]) && samples[i].boxes.len() <= 1).collect();
        let images: Vec<&Image> = whole.iter().map(|&i| &samples[i].image).collect();
        if !images.is_empty() {
            for (&i, m) in whole.iter().zip(predict_heatmaps(model, &images, flip_test, batch)?) {
                let kp = decode_keypoints(&m);
                let score = mean(&kp.scores);
                out[i] = Prediction::Pose(vec![(kp, score)]);
            }
        }
        for (i, s) in samples.iter().enumerate().filter(|(i, _)| !whole.contains(i)) {
            let kps = topdown_infer(&s.image, &s.boxes, model, flip_test)?;
            out[i] = Prediction::Pose(kps.into_iter().map(|k| {
                let score = mean(&k.scores);
                (k, score)
            }).collect());
        }
        return Ok(out);
    }
    let resized: Vec<Image> = samples.iter().filter(|s| !native(s)).map(|s| s.image.resize(ih, iw)).collect();
    let mut r = resized.iter();
    let images: Vec<&Image> = samples
        .iter()
        .map(|s| if native(s) { &s.image } else { r.next().expect("one resized image per foreign sample") })
        .collect();
    let c = model.channels;
    let raw = model.predict(&images, batch)?;
    Ok(samples
        .iter()
        .zip(raw)
        .map(|(s, y)| {
            let y: Vec<f64> = y.into_iter().map(|v| v.as_f64()).collect();
            let y = if native(s) { y } else { resize_channels(&y, c, ih, iw, s.height, s.width) };
            let hw = s.n_pixels();
            match model.task {
                Task::Seg => Prediction::Seg(argmax_channels(&y, c)),
                Task::Depth => Prediction::Depth(y),
                _ => {
                    let mut p = vec![0.0; hw * 3];
                    for i in 0..hw {
                        for k in 0..3 {
                            p[i * 3 + k] = y[k * hw + i];
                        }
                    }
                    Prediction::Normal(p)
                }
            }
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Bilinear resize of channel-first maps.
fn resize_channels(y: &[f64], c: usize, h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let plane = |k: usize| Image::from_vec(h, w, 1, y[k * h * w..(k + 1) * h * w].iter().map(|&v| v as f32).collect());
    (0..c)
        .flat_map(|k| {
            plane(k)
                .expect("plane size matches")
                .resize(oh, ow)
                .data
                .into_iter()
                .map(|v| v as f64)
        })
        .collect()
}

/// Model predictions on `samples` scored by [`evaluate_predictions`].
pub fn evaluate<F: Float>(model: &TaskModel<F>, samples: &[Sample], protocol: &EvalProtocol, flip_test: bool) -> Result<MetricReport> {
    let preds = predict_samples(model, samples, flip_test)?;
    evaluate_predictions(model.task, &preds, samples, protocol)
}

/// Scores per-image predictions against ground-truth samples.
pub fn evaluate_predictions(task: Task, preds: &[Prediction], samples: &[Sample], protocol: &EvalProtocol) -> Result<MetricReport> {
    protocol.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    if preds.len() != samples.len() {
        return Err(Error::ShapeMismatch(format!("{} predictions for {} samples", preds.len(), samples.len())));
    }
    let mismatch = || Error::Config(format!("prediction kind does not match task {task}"));
    let metrics = match task {
        Task::Pose => {
            let preds = preds
                .iter()
                .map(|p| match p {
                    Prediction::Pose(v) => Ok(v.as_slice()),
                    _ => Err(mismatch()),
                })
                .collect::<Result<Vec<_>>>()?;
            pose_metrics(&preds, samples, protocol)?
        }
        Task::Seg => {
            let classes = crate::heads::PART_C;
            let mut acc = SegAccumulator::new(classes);
            for (p, s) in preds.iter().zip(samples) {
                let Prediction::Seg(labels) = p else { return Err(mismatch()) };
                acc.add(labels, &s.part_mask)?;
            }
            let r = acc.report();
            let mut m = vec![("miou".into(), r.miou), ("macc".into(), r.macc)];
            for (name, iou) in PART_CLASSES.iter().zip(&r.iou) {
                if let Some(v) = iou {
                    m.push((format!("iou_{name}"), *v));
                }
            }
            m
        }
        Task::Depth => {
            let (mut rmse, mut rel, mut d1, mut base, mut n) = (0.0, 0.0, 0.0, 0.0, 0usize);
            for (p, s) in preds.iter().zip(samples) {
                let Prediction::Depth(pred) = p else { return Err(mismatch()) };
                let mask = s.human_mask();
                if !mask.iter().any(|&m| m) {
                    continue;
                }
                let gt: Vec<f64> = s.depth.iter().map(|&d| d as f64).collect();
                let r = depth_metrics(pred, &gt, &mask, protocol.delta_threshold)?;
                let constant = vec![median_on(&gt, &mask); gt.len()];
                let b = depth_metrics(&constant, &gt, &mask, protocol.delta_threshold)?;
                rmse += r.rmse;
                rel += r.abs_rel;
                d1 += r.delta1;
                base += b.rmse;
                n += 1;
            }
            if n == 0 {
                return Err(Error::EmptyMask);
            }
            let n = n as f64;
            vec![
                ("rmse".into(), rmse / n),
                ("abs_rel".into(), rel / n),
                ("delta1".into(), d1 / n),
                ("baseline_rmse".into(), base / n),
            ]
        }
        Task::Normal => {
            let mut errs = Vec::new();
            for (p, s) in preds.iter().zip(samples) {
                let Prediction::Normal(pred) = p else { return Err(mismatch()) };
                let gt: Vec<f64> = s.normal.iter().map(|&v| v as f64).collect();
                errs.extend(angular_errors_deg(pred, &gt, &s.human_mask())?);
            }
            let r = summarize_angles(errs, &protocol.angle_thresholds)?;
            let mut m = vec![("mean_angle".into(), r.mean), ("median_angle".into(), r.median)];
            for (t, w) in protocol.angle_thresholds.iter().zip(&r.within) {
                m.push((format!("within_{t}"), *w));
            }
            m
        }
    };
    Ok(MetricReport {
        task,
        metrics,
        n_samples: samples.len(),
        protocol: protocol.describe(),
    })
}

/// Keypoint AP/AR over all persons, and PCK of the `i`-th prediction
/// against the `i`-th ground-truth person (box diagonal as scale).
pub fn pose_metrics(preds: &[&[(Keypoints, f64)]], samples: &[Sample], protocol: &EvalProtocol) -> Result<Vec<(String, f64)>> {
    let (mut hit, mut total) = (0usize, 0usize);
    let mut images = Vec::with_capacity(samples.len());
    for (p, s) in preds.iter().zip(samples) {
        let gts: Vec<(usize, &Keypoints)> = s
            .keypoints
            .iter()
            .enumerate()
            .filter(|(i, k)| *i < s.boxes.len() && k.visibility.iter().any(|v| v.labeled()))
            .collect();
        for &(i, gt) in &gts {
            if let Some((kp, _)) = p.get(i) {
                let (h, n) = pck(kp, gt, s.boxes[i], protocol.pck_alpha);
                hit += h;
                total += n;
            } else {
                total += gt.visibility.iter().filter(|v| v.labeled()).count();
            }
        }
        images.push(ImageDetections {
            preds: p.to_vec(),
            gts: gts.iter().map(|&(i, k)| (k.clone(), s.boxes[i][2] * s.boxes[i][3])).collect(),
        });
    }
    let apar = keypoint_ap_ar(&images, &protocol.oks_sigmas, &protocol.oks_thresholds, protocol.max_dets)?;
    Ok(vec![
        ("ap".into(), apar.ap),
        ("ar".into(), apar.ar),
        ("pck".into(), if total == 0 { 0.0 } else { hit as f64 / total as f64 }),
    ])
}

/// Per-pixel argmax over `[c, h, w]` logits; ties go to the lower class.
pub fn argmax_channels<F: PartialOrd>(logits: &[F], c: usize) -> Vec<u8> {
    let n = logits.len() / c;
    (0..n)
        .map(|i| {
            let mut best = 0;
            for k in 1..c {
                if logits[k * n + i] > logits[best * n + i] {
                    best = k;
                }
            }
            best as u8
        })
        .collect()
}

fn median_on(values: &[f64], mask: &[bool]) -> f64 {
    let mut v: Vec<f64> = values.iter().zip(mask).filter(|(_, &m)| m).map(|(&x, _)| x).collect();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}
