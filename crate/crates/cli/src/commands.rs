use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sapiens_core::datagen::{
    generate_one, load_sample, read_manifest, read_png, save_sample, write_keypoints, write_manifest, write_pfm,
    write_png_bytes, ManifestRecord, Person, Sample, SceneKind, FINETUNE_SIZE, PRETRAIN_SIZE,
};
use sapiens_core::eval::{evaluate_predictions, predict_samples, Prediction};
use sapiens_core::heads::{Keypoints, Task, DESK_K};
use sapiens_core::mae::mask_sweep;
use sapiens_core::metrics::{EvalProtocol, MetricReport};
use sapiens_core::model::TaskModel;
use sapiens_core::trainer::{load_task_model, run_finetune, run_pretrain, Checkpoint, CheckpointKind, Init, Precision};
use sapiens_core::{Error, Image};
use sapiens_tensor::Float;

use crate::config::{Mode, RunConfig};
use crate::error::{io_err, CliError, Result};
use crate::svg::render_csv;

pub const MANIFEST: &str = "manifest.jsonl";
pub const CHECKPOINT: &str = "checkpoint.sapd";

/// Flags shared by every command.
#[derive(Debug, Clone)]
pub struct Common {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub overwrite: bool,
    pub precision: Option<Precision>,
}

/// Refuses to clobber an existing output unless `overwrite` is set. An
/// existing empty directory counts as absent for directory outputs.
pub fn prepare_out(path: &Path, overwrite: bool, is_dir: bool) -> Result<()> {
    if path.exists() && !overwrite {
        let empty_dir = is_dir && path.is_dir() && fs::read_dir(path).map_err(io_err(path))?.next().is_none();
        if !empty_dir {
            return Err(CliError::Io {
                path: path.into(),
                detail: "output already exists (pass --overwrite to replace it)".into(),
            });
        }
    }
    let dir = if is_dir { Some(path) } else { path.parent().filter(|p| !p.as_os_str().is_empty()) };
    if let Some(d) = dir {
        fs::create_dir_all(d).map_err(io_err(d))?;
    }
    Ok(())
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(io_err(path))
}

fn root_of(manifest: &Path) -> PathBuf {
    manifest.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn load_samples(manifest: &Path) -> Result<(Vec<ManifestRecord>, Vec<Sample>)> {
    let records = read_manifest(manifest)?;
    let root = root_of(manifest);
    let samples = records
        .par_iter()
        .map(|r| load_sample(&root, r, DESK_K))
        .collect::<sapiens_core::Result<Vec<_>>>()?;
    Ok((records, samples))
}

/// Manifest images resized to `h`×`w`.
fn load_images(manifest: &Path, h: usize, w: usize, limit: Option<usize>) -> Result<Vec<Image>> {
    let mut records = read_manifest(manifest)?;
    if let Some(n) = limit {
        records.truncate(n);
    }
    let root = root_of(manifest);
    let images = records
        .par_iter()
        .map(|r| {
            let img = read_png(&root.join(&r.image_path))?;
            Ok(if (img.height, img.width) == (h, w) { img } else { img.resize(h, w) })
        })
        .collect::<sapiens_core::Result<Vec<_>>>()?;
    if images.is_empty() {
        return Err(Error::EmptyManifest.into());
    }
    Ok(images)
}

fn curve_csv(curve: &[(usize, f64)]) -> String {
    let mut s = String::from("step,loss\n");
    for (step, loss) in curve {
        s.push_str(&format!("{step},{loss}\n"));
    }
    s
}

pub fn gen_data(c: &Common, count: usize, kind: SceneKind, size: Option<(usize, usize)>) -> Result<()> {
    let (h, w) = size.unwrap_or(match kind {
        SceneKind::Pretrain => PRETRAIN_SIZE,
        SceneKind::Finetune => FINETUNE_SIZE,
    });
    let seed = c.seed.unwrap_or(0);
    prepare_out(&c.out, c.overwrite, true)?;
    let mut records = Vec::with_capacity(count);
    for start in (0..count).step_by(512) {
        let end = (start + 512).min(count);
        let samples = (start..end)
            .into_par_iter()
            .map(|i| generate_one(seed, i as u64, kind, h, w))
            .collect::<sapiens_core::Result<Vec<_>>>()?;
        for (i, s) in (start..end).zip(&samples) {
            records.push(save_sample(&c.out, &format!("{i:06}"), s)?);
        }
    }
    write_manifest(&c.out.join(MANIFEST), &records)?;
    eprintln!("wrote {count} samples to {}", c.out.display());
    Ok(())
}

/// Rewrites relative paths of `r` (relative to `from`) as paths under `from`.
fn rebase(r: &ManifestRecord, from: &Path) -> ManifestRecord {
    let fix = |p: &str| {
        let p = Path::new(p);
        if p.is_absolute() { p.to_path_buf() } else { from.join(p) }.display().to_string()
    };
    ManifestRecord {
        image_path: fix(&r.image_path),
        keypoints_path: r.keypoints_path.as_deref().map(fix),
        mask_path: r.mask_path.as_deref().map(fix),
        depth_path: r.depth_path.as_deref().map(fix),
        normal_path: r.normal_path.as_deref().map(fix),
        ..r.clone()
    }
}

pub fn curate(c: &Common, manifest: &Path, min_score: f64, min_box: f64) -> Result<()> {
    if !manifest.exists() {
        return Err(CliError::Config(format!("manifest `{}` does not exist", manifest.display())));
    }
    prepare_out(&c.out, c.overwrite, true)?;
    let records = read_manifest(manifest)?;
    let (kept, stats) = sapiens_core::datagen::curate(&records, min_score, min_box);
    let root = fs::canonicalize(root_of(manifest).join(".")).map_err(io_err(manifest))?;
    let kept: Vec<ManifestRecord> = kept.iter().map(|r| rebase(r, &root)).collect();
    write_manifest(&c.out.join(MANIFEST), &kept)?;
    let json = serde_json::to_string_pretty(&stats).expect("stats serialize");
    write(&c.out.join("stats.json"), json + "\n")?;
    eprintln!("kept {} of {} records", stats.kept, stats.total);
    Ok(())
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if let Some(s) = c.seed {
        cfg.train.seed = s;
    }
    if let Some(p) = c.precision {
        cfg.train.precision = p;
    }
}

pub fn pretrain(c: &Common, config: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config, Mode::Pretrain)?;
    apply_common(&mut cfg, c);
    prepare_out(&c.out, c.overwrite, true)?;
    let manifest = cfg.manifest.clone().expect("validated");
    let images = load_images(&manifest, cfg.model.image_height, cfg.model.image_width, None)?;
    let log = |s: usize, l: f64| eprintln!("step {s} loss {l:.5}");
    let r = match cfg.train.precision {
        Precision::F32 => run_pretrain::<f32>(&images, &cfg.model, &cfg.train, log)?,
        Precision::F64 => run_pretrain::<f64>(&images, &cfg.model, &cfg.train, log)?,
    };
    r.checkpoint.save(&c.out.join(CHECKPOINT))?;
    write(&c.out.join("loss.csv"), curve_csv(&r.loss_curve))?;
    write(&c.out.join("config.txt"), cfg.echo())?;
    Ok(())
}

fn check_size(samples: &[Sample], h: usize, w: usize, what: &str) -> Result<()> {
    match samples.iter().find(|s| (s.height, s.width) != (h, w)) {
        Some(s) => Err(CliError::Config(format!(
            "{what} sample is {}x{} but the model input is {h}x{w}",
            s.height, s.width
        ))),
        None => Ok(()),
    }
}

pub fn finetune(c: &Common, config: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config, Mode::Finetune)?;
    apply_common(&mut cfg, c);
    prepare_out(&c.out, c.overwrite, true)?;
    let task = cfg.task.expect("validated");
    let (_, train) = load_samples(cfg.train_manifest.as_ref().expect("validated"))?;
    let (_, val) = load_samples(cfg.val_manifest.as_ref().expect("validated"))?;
    check_size(&train, cfg.model.image_height, cfg.model.image_width, "training")?;
    check_size(&val, cfg.model.image_height, cfg.model.image_width, "validation")?;
    let ck = cfg.init.as_ref().map(|p| Checkpoint::load(p)).transpose()?;
    let init = ck.as_ref().map_or(Init::Random, Init::Pretrained);
    let protocol = cfg.protocol(task);
    let log = |s: usize, l: f64| eprintln!("step {s} loss {l:.5}");
    let ch = task.default_channels();
    let r = match cfg.train.precision {
        Precision::F32 => run_finetune::<f32>(task, ch, init, &train, &val, &cfg.model, &cfg.train, cfg.eval_every, &protocol, log)?,
        Precision::F64 => run_finetune::<f64>(task, ch, init, &train, &val, &cfg.model, &cfg.train, cfg.eval_every, &protocol, log)?,
    };
    r.checkpoint.save(&c.out.join(CHECKPOINT))?;
    write(&c.out.join("loss.csv"), curve_csv(&r.loss_curve))?;
    let mut trace = String::from("step,train_loss,val_loss");
    if let Some(first) = r.trace.first() {
        for (name, _) in &first.report.metrics {
            trace.push_str(&format!(",{name}"));
        }
    }
    trace.push('\n');
    for e in &r.trace {
        trace.push_str(&format!("{},{},{}", e.step, e.train_loss, e.val_loss));
        for (_, v) in &e.report.metrics {
            trace.push_str(&format!(",{v}"));
        }
        trace.push('\n');
    }
    write(&c.out.join("trace.csv"), trace)?;
    if let Some(rep) = r.final_report() {
        write(&c.out.join("metrics.csv"), rep.to_csv())?;
    }
    write(&c.out.join("config.txt"), cfg.echo())?;
    Ok(())
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Predictions stored on disk in sample layout, paired with `gt` by id.
fn load_predictions(task: Task, pred_manifest: &Path, gt: &[ManifestRecord]) -> Result<Vec<Prediction>> {
    let (records, samples) = load_samples(pred_manifest)?;
    gt.iter()
        .map(|g| {
            let i = records.iter().position(|r| r.id == g.id).ok_or_else(|| Error::Format {
                path: pred_manifest.into(),
                detail: format!("no prediction for id `{}`", g.id),
            })?;
            let (r, s) = (&records[i], &samples[i]);
            Ok(match task {
                Task::Pose => Prediction::Pose(
                    s.keypoints
                        .iter()
                        .enumerate()
                        .map(|(j, k)| (k.clone(), r.persons.get(j).map_or(1.0, |p| p.score)))
                        .collect(),
                ),
                Task::Seg => Prediction::Seg(s.part_mask.clone()),
                Task::Depth => Prediction::Depth(to_f64(&s.depth)),
                Task::Normal => Prediction::Normal(to_f64(&s.normal)),
            })
        })
        .collect()
}

fn model_from<F: Float>(ck: &Path) -> Result<TaskModel<F>> {
    let ck = Checkpoint::load(ck)?;
    if ck.kind()? == CheckpointKind::Pretrain {
        return Err(CliError::Config("a fine-tuned checkpoint is required, got a pretraining one".into()));
    }
    Ok(load_task_model(&ck)?)
}

fn eval_checkpoint<F: Float>(ck: &Path, task: Option<Task>, samples: &[Sample], protocol: impl Fn(Task) -> EvalProtocol, flip: bool) -> Result<MetricReport> {
    let model = model_from::<F>(ck)?;
    if let Some(t) = task.filter(|&t| t != model.task) {
        return Err(CliError::Config(format!("checkpoint is a {} model, --task asks for {t}", model.task)));
    }
    let preds = predict_samples(&model, samples, flip)?;
    Ok(evaluate_predictions(model.task, &preds, samples, &protocol(model.task))?)
}

pub struct EvalArgs<'a> {
    pub task: Option<Task>,
    pub gt: &'a Path,
    pub pred: Option<&'a Path>,
    pub checkpoint: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub flip_test: bool,
}

pub fn eval(c: &Common, a: &EvalArgs<'_>) -> Result<()> {
    let cfg = match a.config {
        Some(p) => RunConfig::load(p, Mode::Eval)?,
        None => RunConfig::defaults(Mode::Eval),
    };
    for p in [Some(a.gt), a.pred, a.checkpoint].into_iter().flatten() {
        if !p.exists() {
            return Err(CliError::Config(format!("path `{}` does not exist", p.display())));
        }
    }
    prepare_out(&c.out, c.overwrite, false)?;
    let (records, samples) = load_samples(a.gt)?;
    let flip = a.flip_test || cfg.flip_test;
    let report = match (a.pred, a.checkpoint) {
        (Some(pred), None) => {
            let task = a.task.ok_or_else(|| CliError::Config("--task is required with --pred".into()))?;
            let preds = load_predictions(task, pred, &records)?;
            evaluate_predictions(task, &preds, &samples, &cfg.protocol(task))?
        }
        (None, Some(ck)) => match c.precision.unwrap_or(cfg.train.precision) {
            Precision::F32 => eval_checkpoint::<f32>(ck, a.task, &samples, |t| cfg.protocol(t), flip)?,
            Precision::F64 => eval_checkpoint::<f64>(ck, a.task, &samples, |t| cfg.protocol(t), flip)?,
        },
        _ => return Err(CliError::Config("exactly one of --pred and --checkpoint is required".into())),
    };
    write(&c.out, report.to_csv())?;
    print!("{}", report.to_csv());
    Ok(())
}

fn keypoint_box(k: &Keypoints, h: usize, w: usize) -> [f64; 4] {
    let xs = k.coords.iter().map(|c| c[0].clamp(0.0, w as f64));
    let ys = k.coords.iter().map(|c| c[1].clamp(0.0, h as f64));
    let (x0, x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(0.0, f64::max));
    let (y0, y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(0.0, f64::max));
    [x0, y0, (x1 - x0).max(0.0), (y1 - y0).max(0.0)]
}

fn infer_with<F: Float>(c: &Common, ck: &Path, manifest: &Path, flip: bool) -> Result<()> {
    let model = model_from::<F>(ck)?;
    let (records, samples) = load_samples(manifest)?;
    let preds = predict_samples(&model, &samples, flip)?;
    let root = fs::canonicalize(root_of(manifest).join(".")).map_err(io_err(manifest))?;
    let mut out = Vec::with_capacity(records.len());
    for ((r, s), p) in records.iter().zip(&samples).zip(&preds) {
        let name = |suffix: &str| format!("{}{suffix}", r.id);
        let mut rec = ManifestRecord {
            persons: Vec::new(),
            keypoints_path: None,
            mask_path: None,
            depth_path: None,
            normal_path: None,
            ..rebase(r, &root)
        };
        match p {
            Prediction::Pose(inst) => {
                let kps: Vec<Keypoints> = inst.iter().map(|(k, _)| k.clone()).collect();
                write_keypoints(&c.out.join(name("_kps.txt")), &kps)?;
                rec.persons = inst
                    .iter()
                    .enumerate()
                    .map(|(j, (k, score))| Person {
                        bbox: r.persons.get(j).map_or_else(|| keypoint_box(k, s.height, s.width), |p| p.bbox),
                        score: score.clamp(0.0, 1.0),
                    })
                    .collect();
                rec.keypoints_path = Some(name("_kps.txt"));
            }
            Prediction::Seg(m) => {
                write_png_bytes(&c.out.join(name("_mask.png")), s.width, s.height, 1, m)?;
                rec.mask_path = Some(name("_mask.png"));
            }
            Prediction::Depth(d) => {
                let d: Vec<f32> = d.iter().map(|&v| v as f32).collect();
                write_pfm(&c.out.join(name("_depth.pfm")), s.width, s.height, 1, &d)?;
                rec.depth_path = Some(name("_depth.pfm"));
            }
            Prediction::Normal(n) => {
                let n: Vec<f32> = n.iter().map(|&v| v as f32).collect();
                write_pfm(&c.out.join(name("_normal.pfm")), s.width, s.height, 3, &n)?;
                rec.normal_path = Some(name("_normal.pfm"));
            }
        }
        out.push(rec);
    }
    write_manifest(&c.out.join(MANIFEST), &out)?;
    eprintln!("wrote {} {} predictions to {}", out.len(), model.task, c.out.display());
    Ok(())
}

pub fn infer(c: &Common, ck: &Path, manifest: &Path, config: Option<&Path>, flip_test: bool) -> Result<()> {
    let cfg = match config {
        Some(p) => RunConfig::load(p, Mode::Eval)?,
        None => RunConfig::defaults(Mode::Eval),
    };
    for p in [ck, manifest] {
        if !p.exists() {
            return Err(CliError::Config(format!("path `{}` does not exist", p.display())));
        }
    }
    prepare_out(&c.out, c.overwrite, true)?;
    let flip = flip_test || cfg.flip_test;
    match c.precision.unwrap_or(cfg.train.precision) {
        Precision::F32 => infer_with::<f32>(c, ck, manifest, flip),
        Precision::F64 => infer_with::<f64>(c, ck, manifest, flip),
    }
}

fn sweep_with<F: Float>(ck: &Checkpoint, images: &[Image], ratios: &[f64], seed: u64) -> Result<Vec<(f64, f64)>> {
    Ok(mask_sweep::<F>(images, &ck.model_config()?, &ck.weights()?, ratios, seed)?)
}

pub fn mask_sweep_cmd(c: &Common, ck: &Path, manifest: &Path, ratios: &[f64], limit: usize) -> Result<()> {
    for p in [ck, manifest] {
        if !p.exists() {
            return Err(CliError::Config(format!("path `{}` does not exist", p.display())));
        }
    }
    if let Some(r) = ratios.iter().find(|r| !(0.0..1.0).contains(*r)) {
        return Err(CliError::Config(format!("mask ratio {r} outside [0, 1)")));
    }
    prepare_out(&c.out, c.overwrite, false)?;
    let ck = Checkpoint::load(ck)?;
    if ck.kind()? != CheckpointKind::Pretrain {
        return Err(CliError::Config("mask-sweep needs a pretraining checkpoint".into()));
    }
    let cfg = ck.model_config()?;
    let images = load_images(manifest, cfg.image_height, cfg.image_width, Some(limit))?;
    let seed = c.seed.unwrap_or(0);
    let rows = match c.precision.unwrap_or(Precision::F32) {
        Precision::F32 => sweep_with::<f32>(&ck, &images, ratios, seed)?,
        Precision::F64 => sweep_with::<f64>(&ck, &images, ratios, seed)?,
    };
    let mut s = String::from("ratio,psnr\n");
    for (r, p) in rows {
        s.push_str(&format!("{r},{p}\n"));
    }
    write(&c.out, &s)?;
    print!("{s}");
    Ok(())
}

pub fn report(c: &Common, inputs: &[PathBuf]) -> Result<()> {
    for p in inputs {
        if !p.exists() {
            return Err(CliError::Config(format!("path `{}` does not exist", p.display())));
        }
    }
    prepare_out(&c.out, c.overwrite, true)?;
    for p in inputs {
        let text = fs::read_to_string(p).map_err(io_err(p))?;
        let stem = p.file_stem().map_or("chart".into(), |s| s.to_string_lossy().into_owned());
        let svg = render_csv(&stem, &text).map_err(|detail| CliError::Io { path: p.clone(), detail })?;
        write(&c.out.join(format!("{stem}.svg")), svg)?;
    }
    Ok(())
}
