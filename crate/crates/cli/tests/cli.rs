use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hdt_core::hdr::{read_pfm, write_sample};
use hdt_core::train::synth_dataset;
use hdt_core::SampleTriplet;

const TINY: &str = "preset=tiny\nepochs=1\nseed=3\n";

fn hdt(args: &[&str], threads: Option<usize>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_hdt"));
    cmd.args(args).env("RUST_LOG", "warn");
    if let Some(n) = threads {
        cmd.env("HDT_THREADS", n.to_string());
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("tiny.cfg"), TINY).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn dataset(&self, name: &str, samples: &[SampleTriplet]) -> PathBuf {
        let root = self.path(name);
        for sample in samples {
            write_sample(root.join(&sample.id), sample, 65535).unwrap();
        }
        root
    }

    /// Trains one step on two synthetic scenes and returns the checkpoint.
    fn checkpoint(&self) -> PathBuf {
        let out = self.path("run");
        let o = hdt(&["train", "--synthetic", "2", "--config", s(&self.path("tiny.cfg")), "--out", s(&out)], None);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        out.join("checkpoint.hdt")
    }
}

#[test]
fn inspect_prints_paper_manifest_within_budget() {
    let o = hdt(&["inspect"], None);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let total: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("total\t"))
        .unwrap()
        .parse()
        .unwrap();
    assert!((1.0125e6..=1.6875e6).contains(&total), "{total}");
    assert!(text.contains("body.group2.dt5.global.attn.q.weight"));
}

#[test]
fn ablation_flags_reach_config_and_manifest() {
    let f = Fixture::new();
    let out = f.path("bl");
    let o = hdt(
        &["train", "--synthetic", "2", "--config", s(&f.path("tiny.cfg")), "--out", s(&out), "--ablate", "both"],
        None,
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cfg = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(cfg.contains("sar=false\n") && cfg.contains("deformable=false\n"), "{cfg}");
    let manifest = stdout(&hdt(&["inspect", "--checkpoint", s(&out.join("checkpoint.hdt"))], None));
    assert!(manifest.contains("# head.path plain") && manifest.contains("# local.path standard"));
    assert!(!manifest.contains(".offset."));
    let log = std::fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 1);
    assert_eq!(code(&hdt(&["train", "--synthetic", "1", "--out", s(&out), "--ablate", "all"], None)), 2);
}

#[test]
fn fuse_is_deterministic_across_runs_and_thread_counts() {
    let f = Fixture::new();
    let ck = f.checkpoint();
    let root = f.dataset("data", &synth_dataset(1, 8).unwrap());
    let input = root.join("synth0000");
    let mut outputs = Vec::new();
    for (i, threads) in [Some(1), Some(4), Some(4)].into_iter().enumerate() {
        let out = f.path(&format!("fused{i}.pfm"));
        let preview = f.path(&format!("fused{i}.ppm"));
        let o = hdt(
            &["fuse", "--input", s(&input), "--checkpoint", s(&ck), "--output", s(&out), "--tonemapped", s(&preview)],
            threads,
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        outputs.push((std::fs::read(&out).unwrap(), std::fs::read(&preview).unwrap()));
    }
    assert!(outputs.windows(2).all(|w| w[0] == w[1]));
    let img = read_pfm(f.path("fused0.pfm")).unwrap();
    assert_eq!((img.height(), img.width()), (32, 32));
    assert!(img.pixels().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn corrupt_checkpoint_exits_2_without_output() {
    let f = Fixture::new();
    let ck = f.checkpoint();
    let mut bytes = std::fs::read(&ck).unwrap();
    bytes[0] ^= 0xff;
    let bad = f.path("bad.hdt");
    std::fs::write(&bad, bytes).unwrap();
    let root = f.dataset("data", &synth_dataset(1, 8).unwrap());
    let out = f.path("out.pfm");
    let o = hdt(&["fuse", "--input", s(&root.join("synth0000")), "--checkpoint", s(&bad), "--output", s(&out)], None);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn config_mismatch_names_the_field() {
    let f = Fixture::new();
    let ck = f.checkpoint();
    let root = f.dataset("data", &synth_dataset(1, 8).unwrap());
    let other = f.path("other.cfg");
    std::fs::write(&other, "preset=tiny\nheads=4\n").unwrap();
    let out = f.path("out.pfm");
    let o = hdt(
        &["fuse", "--input", s(&root.join("synth0000")), "--checkpoint", s(&ck), "--output", s(&out), "--config", s(&other)],
        None,
    );
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("heads"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn eval_tsv_and_json_agree_and_skip_missing_ground_truth() {
    let f = Fixture::new();
    let ck = f.checkpoint();
    let mut samples = synth_dataset(3, 5).unwrap();
    let last = samples.pop().unwrap();
    samples.push(SampleTriplet::new("unlabelled", last.ldr().clone(), None).unwrap());
    let root = f.dataset("data", &samples);
    let tsv = hdt(&["eval", "--data", s(&root), "--checkpoint", s(&ck)], None);
    assert_eq!(code(&tsv), 0, "{}", stderr(&tsv));
    let rows: Vec<Vec<String>> = stdout(&tsv)
        .lines()
        .skip(1)
        .map(|l| l.split('\t').map(String::from).collect())
        .collect();
    assert_eq!(rows.len(), 3);
    let json = hdt(&["eval", "--data", s(&root), "--checkpoint", s(&ck), "--json"], None);
    let v: serde_json::Value = serde_json::from_str(&stdout(&json)).unwrap();
    let mut json_rows: Vec<&serde_json::Value> = v["rows"].as_array().unwrap().iter().collect();
    json_rows.push(&v["mean"]);
    assert_eq!(json_rows.len(), rows.len());
    for (row, (obj, key)) in rows.iter().zip(json_rows.into_iter().zip(["synth0000", "synth0001", "mean"])) {
        assert_eq!((row[0].as_str(), obj["id"].as_str().unwrap()), (key, key));
        for (col, field) in ["psnr_mu", "psnr_l", "ssim_mu", "ssim_l"].iter().enumerate() {
            let tsv_value: f64 = row[col + 1].parse().unwrap();
            assert_eq!(tsv_value, obj[field].as_f64().unwrap(), "{key} {field}");
        }
    }

    let bare = f.dataset("bare", &[SampleTriplet::new("only", last.ldr().clone(), None).unwrap()]);
    assert_eq!(code(&hdt(&["eval", "--data", s(&bare), "--checkpoint", s(&ck)], None)), 1);
}

#[test]
fn gradcheck_passes_and_repeats_exactly() {
    let strip = |o: &Output| -> Vec<String> {
        stdout(o)
            .lines()
            .filter(|l| !l.starts_with("total"))
            .map(|l| {
                let mut cols: Vec<&str> = l.split('\t').collect();
                cols.remove(4);
                cols.join("\t")
            })
            .collect()
    };
    let a = hdt(&["gradcheck", "--scale", "tiny", "--ops", "conv2d", "--seed", "4"], None);
    let b = hdt(&["gradcheck", "--scale", "tiny", "--ops", "conv2d", "--seed", "4"], None);
    assert_eq!(code(&a), 0);
    assert!(stdout(&a).contains("PASS"));
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(code(&hdt(&["gradcheck", "--ops", "nonsense"], None)), 2);
}

#[test]
fn missing_data_root_exits_1_before_training() {
    let f = Fixture::new();
    let out = f.path("never");
    let o = hdt(&["train", "--data", s(&f.path("absent")), "--config", s(&f.path("tiny.cfg")), "--out", s(&out)], None);
    assert_eq!(code(&o), 1);
    assert!(!out.join("checkpoint.hdt").exists());
}

#[test]
fn bad_config_reports_line() {
    let f = Fixture::new();
    let cfg = f.path("bad.cfg");
    std::fs::write(&cfg, "preset=tiny\n\nwindow=four\n").unwrap();
    let o = hdt(&["train", "--synthetic", "1", "--config", s(&cfg), "--out", s(&f.path("x"))], None);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
    std::fs::write(&cfg, "heads=7\nembed=60\n").unwrap();
    assert_eq!(code(&hdt(&["inspect", "--config", s(&cfg)], None)), 2);
}
