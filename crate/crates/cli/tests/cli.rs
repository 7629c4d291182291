use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_sapiens-desk"))
}

fn run(args: &[&str], cwd: &Path) -> Output {
    bin().args(args).current_dir(cwd).output().expect("spawn sapiens-desk")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn ok(args: &[&str], cwd: &Path) -> Output {
    let o = run(args, cwd);
    assert_eq!(code(&o), 0, "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures").join(name)
}

/// Relative path -> bytes for every file below `dir`.
fn tree(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

const SUBCOMMANDS: [&str; 8] = ["gen-data", "curate", "pretrain", "finetune", "eval", "infer", "mask-sweep", "report"];

#[test]
fn help_for_every_subcommand_lists_common_flags() {
    let tmp = TempDir::new().unwrap();
    let top = ok(&["--help"], tmp.path());
    let top = String::from_utf8_lossy(&top.stdout);
    for sub in SUBCOMMANDS {
        assert!(top.contains(sub), "top-level help misses {sub}");
        let o = ok(&[sub, "--help"], tmp.path());
        let text = String::from_utf8_lossy(&o.stdout);
        for flag in ["--seed", "--out", "--overwrite", "--deterministic", "--precision"] {
            assert!(text.contains(flag), "{sub} --help misses {flag}");
        }
        if matches!(sub, "pretrain" | "finetune" | "eval" | "infer") {
            assert!(text.contains("--config"), "{sub} --help misses --config");
        }
    }
}

#[test]
fn gen_data_is_byte_identical_across_runs() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen-data", "--seed", "7", "--count", "256", "--out", "a"], tmp.path());
    ok(&["gen-data", "--seed", "7", "--count", "256", "--out", "b"], tmp.path());
    let (a, b) = (tree(&tmp.path().join("a")), tree(&tmp.path().join("b")));
    assert_eq!(a.len(), 256 * 5 + 1);
    assert!(a == b, "datasets differ");
    ok(&["gen-data", "--seed", "8", "--count", "4", "--out", "c"], tmp.path());
    assert_ne!(tree(&tmp.path().join("c")).get(Path::new("000000.png")), a.get(Path::new("000000.png")));
}

#[test]
fn existing_outputs_fail_without_overwrite() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen-data", "--count", "2", "--out", "d"], tmp.path());
    let o = run(&["gen-data", "--count", "2", "--out", "d"], tmp.path());
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("already exists"));
    ok(&["gen-data", "--count", "2", "--out", "d", "--overwrite"], tmp.path());
    fs::write(tmp.path().join("r.csv"), "x,y\n0,1\n").unwrap();
    ok(&["report", "--input", "r.csv", "--out", "charts"], tmp.path());
    assert_eq!(code(&run(&["report", "--input", "r.csv", "--out", "charts"], tmp.path())), 1);
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen-data", "--count", "2", "--out", "data"], tmp.path());
    let cases = [
        "data.manifest = data/manifest.jsonl\nlearning_rate = 1\n",
        "data.manifest = data/manifest.jsonl\ntrain.base_lr = fast\n",
        "data.manifest = data/manifest.jsonl\ntrain.layer_decay = 1.5\n",
        "data.manifest = missing/manifest.jsonl\n",
        "data.manifest = data/manifest.jsonl\nmodel = sapiens-9b\n",
        "train.total_steps = 3\n",
    ];
    for (i, text) in cases.iter().enumerate() {
        let cfg = format!("c{i}.cfg");
        fs::write(tmp.path().join(&cfg), text).unwrap();
        let o = run(&["pretrain", "--config", &cfg, "--out", &format!("run{i}")], tmp.path());
        assert_eq!(code(&o), 2, "{text:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!tmp.path().join(format!("run{i}")).exists(), "outputs created before validation");
    }
    assert_eq!(code(&run(&["pretrain", "--config", "absent.cfg", "--out", "x"], tmp.path())), 2);
    assert_eq!(code(&run(&["no-such-command"], tmp.path())), 2);
    let o = bin().args(["report", "--input", "x", "--out", "y"]).env("SAPIENS_DESK_THREADS", "lots").current_dir(tmp.path()).output().unwrap();
    assert_eq!(code(&o), 2);
}

#[test]
fn curate_reproduces_hand_labeled_fixture() {
    let tmp = TempDir::new().unwrap();
    let manifest = fixture("curation_manifest.jsonl");
    ok(
        &["curate", "--manifest", manifest.to_str().unwrap(), "--min-score", "0.9", "--min-box", "300", "--out", "cur"],
        tmp.path(),
    );
    let expected: Vec<String> = fs::read_to_string(fixture("curation_expected.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .filter_map(|l| l.strip_suffix(" keep").map(str::to_string))
        .collect();
    let kept: Vec<String> = fs::read_to_string(tmp.path().join("cur/manifest.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(kept, expected);
    let stats: serde_json::Value = serde_json::from_str(&fs::read_to_string(tmp.path().join("cur/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["kept"], expected.len());
    assert_eq!(stats["dropped"], 50 - expected.len());
    let hist: u64 = stats["persons_histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(hist as usize, expected.len());
}

#[test]
fn depth_eval_of_ground_truth_against_itself_is_exact() {
    let tmp = TempDir::new().unwrap();
    ok(&["gen-data", "--seed", "3", "--count", "6", "--kind", "finetune", "--out", "gt"], tmp.path());
    let o = ok(&["eval", "--task", "depth", "--gt", "gt/manifest.jsonl", "--pred", "gt/manifest.jsonl", "--out", "m.csv"], tmp.path());
    let csv = fs::read_to_string(tmp.path().join("m.csv")).unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout), csv);
    let rows: BTreeMap<&str, f64> = csv
        .lines()
        .skip(1)
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            assert_eq!((f[0], f[3]), ("depth", "6"));
            (f[1], f[2].parse().unwrap())
        })
        .collect();
    assert!(csv.contains("depth,rmse,0,6"), "{csv}");
    assert_eq!(rows["abs_rel"], 0.0);
    assert_eq!(rows["delta1"], 1.0);
    assert!(rows["baseline_rmse"] > 0.0);
    for (task, metric, want) in [("seg", "miou", 1.0), ("normal", "mean_angle", 0.0), ("pose", "pck", 1.0)] {
        ok(&["eval", "--task", task, "--gt", "gt/manifest.jsonl", "--pred", "gt/manifest.jsonl", "--out", &format!("{task}.csv")], tmp.path());
        let csv = fs::read_to_string(tmp.path().join(format!("{task}.csv"))).unwrap();
        let v: f64 = csv.lines().find(|l| l.split(',').nth(1) == Some(metric)).unwrap().split(',').nth(2).unwrap().parse().unwrap();
        assert!((v - want).abs() < 1e-9, "{task} {metric} = {v}");
    }
}

const PRETRAIN_CFG: &str = "data.manifest = pre/manifest.jsonl\n\
train.total_steps = 6\ntrain.warmup_steps = 2\ntrain.batch_size = 4\ntrain.log_every = 2\n";

const FINETUNE_CFG: &str = "task = seg\ninit = p1/checkpoint.sapd\n\
data.train = ft/manifest.jsonl\ndata.val = ft/manifest.jsonl\n\
train.total_steps = 4\ntrain.warmup_steps = 1\ntrain.batch_size = 4\ntrain.log_every = 1\neval_every = 2\n";

#[test]
fn pipeline_is_deterministic_end_to_end() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--seed", "1", "--count", "12", "--out", "pre"], d);
    ok(&["gen-data", "--seed", "2", "--count", "12", "--kind", "finetune", "--out", "ft"], d);
    fs::write(d.join("pre.cfg"), PRETRAIN_CFG).unwrap();
    fs::write(d.join("ft.cfg"), FINETUNE_CFG).unwrap();
    for run_dir in ["p1", "p2"] {
        ok(&["pretrain", "--config", "pre.cfg", "--out", run_dir, "--seed", "5", "--deterministic"], d);
    }
    assert_eq!(fs::read(d.join("p1/checkpoint.sapd")).unwrap(), fs::read(d.join("p2/checkpoint.sapd")).unwrap());
    assert_eq!(fs::read(d.join("p1/loss.csv")).unwrap(), fs::read(d.join("p2/loss.csv")).unwrap());
    let loss = fs::read_to_string(d.join("p1/loss.csv")).unwrap();
    assert_eq!(loss.lines().count(), 1 + 3);

    for run_dir in ["f1", "f2"] {
        ok(&["finetune", "--config", "ft.cfg", "--out", run_dir, "--deterministic"], d);
    }
    for f in ["checkpoint.sapd", "loss.csv", "trace.csv", "metrics.csv"] {
        assert_eq!(fs::read(d.join("f1").join(f)).unwrap(), fs::read(d.join("f2").join(f)).unwrap(), "{f} differs");
    }
    let trace = fs::read_to_string(d.join("f1/trace.csv")).unwrap();
    assert!(trace.starts_with("step,train_loss,val_loss,miou"));
    assert_eq!(trace.lines().count(), 3);

    ok(&["infer", "--checkpoint", "f1/checkpoint.sapd", "--manifest", "ft/manifest.jsonl", "--out", "inf"], d);
    assert!(d.join("inf/000000_mask.png").exists());
    for out in ["e1.csv", "e2.csv"] {
        ok(&["eval", "--task", "seg", "--gt", "ft/manifest.jsonl", "--pred", "inf/manifest.jsonl", "--out", out], d);
    }
    ok(&["eval", "--gt", "ft/manifest.jsonl", "--checkpoint", "f1/checkpoint.sapd", "--out", "e3.csv", "--deterministic"], d);
    let e1 = fs::read(d.join("e1.csv")).unwrap();
    assert_eq!(e1, fs::read(d.join("e2.csv")).unwrap());
    assert_eq!(e1, fs::read(d.join("e3.csv")).unwrap(), "eval on saved predictions and on the checkpoint disagree");
    assert_eq!(e1, fs::read(d.join("f1/metrics.csv")).unwrap());

    ok(&["mask-sweep", "--checkpoint", "p1/checkpoint.sapd", "--manifest", "pre/manifest.jsonl", "--limit", "4", "--ratios", "0.5,0.95", "--out", "sweep.csv"], d);
    let sweep = fs::read_to_string(d.join("sweep.csv")).unwrap();
    assert!(sweep.starts_with("ratio,psnr\n0.5,") && sweep.lines().count() == 3);
    ok(&["report", "--input", "sweep.csv", "f1/trace.csv", "e1.csv", "--out", "charts"], d);
    for svg in ["sweep.svg", "trace.svg", "e1.svg"] {
        let s = fs::read_to_string(d.join("charts").join(svg)).unwrap();
        assert!(s.starts_with("<svg") && !s.contains("href"));
    }
    // A fine-tuned checkpoint cannot drive a mask sweep.
    let o = run(&["mask-sweep", "--checkpoint", "f1/checkpoint.sapd", "--manifest", "pre/manifest.jsonl", "--out", "bad.csv"], d);
    assert_eq!(code(&o), 2);
}

#[test]
fn f64_precision_runs_and_records_itself() {
    let tmp = TempDir::new().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--count", "4", "--out", "pre"], d);
    fs::write(d.join("pre.cfg"), PRETRAIN_CFG.replace("total_steps = 6", "total_steps = 2")).unwrap();
    ok(&["pretrain", "--config", "pre.cfg", "--out", "run", "--precision", "f64"], d);
    let echo = fs::read_to_string(d.join("run/config.txt")).unwrap();
    assert!(echo.contains("train.precision = f64"), "{echo}");
    assert_eq!(code(&run(&["pretrain", "--config", "pre.cfg", "--out", "r2", "--precision", "f16"], d)), 2);
}
