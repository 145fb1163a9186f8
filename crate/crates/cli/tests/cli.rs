use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use arcscore::config::RunConfig;
use arcscore::synth::dataset::read_tokens;
use arcscore::synth::CodecSpec;

const TINY: &str = r#"
seed = 3
[corpus]
scale = 0.02
[decoder]
layers = 2
dim = 16
heads = 2
[adapter]
dim = 16
[backbone_train]
epochs = 2
[adapter_train]
epochs = 3
[probe]
epochs = 2
[eval]
held_out_arcs = 4
"#;

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn arcscore(out: &Path, config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_arcscore"))
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY).unwrap();
    path
}

fn tree_bytes(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn committed_configs_parse_and_validate() {
    let default = RunConfig::load(&configs_dir().join("default.toml")).unwrap();
    assert_eq!(default, RunConfig::default());
    let small = RunConfig::load(&configs_dir().join("small.toml")).unwrap();
    small.validate().unwrap();
    assert_eq!(small.decoder.layers, 4);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let o = arcscore(dir.path(), &cfg, &["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    let o = arcscore(dir.path(), &cfg, &["ablate", "--ratios", "0,0.5"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ratio 0"));
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[decoder]\ninjection_ratio = 0.0\n").unwrap();
    assert_eq!(arcscore(dir.path(), &bad, &["datagen"]).status.code(), Some(1));
}

#[test]
fn stage_order_and_missing_inputs_are_runtime_errors() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let out = dir.path().join("run");
    let o = arcscore(&out, &cfg, &["train", "adapter"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("train backbone"));
    let o = arcscore(&out, &cfg, &["generate", "--held-out"]);
    assert_eq!(o.status.code(), Some(2));
    let empty = dir.path().join("empty");
    fs::create_dir_all(&empty).unwrap();
    let o = arcscore(&out, &cfg, &["eval", "--gen", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_scale_writes_empty_datasets_with_a_warning() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("zero.toml");
    fs::write(&cfg, "[corpus]\nscale = 0.0\n").unwrap();
    let out = dir.path().join("run");
    let o = arcscore(&out, &cfg, &["datagen"]);
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stderr).contains("WARN"));
    assert_eq!(fs::read_dir(out.join("data/music")).unwrap().count(), 0);
    assert_eq!(fs::read_dir(out.join("data/videos")).unwrap().count(), 0);
}

#[test]
fn full_pipeline_artifacts_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(dir.path());
    let run = |out: &Path| {
        for args in [
            &["datagen"][..],
            &["train", "probe"],
            &["train", "backbone"],
            &["train", "adapter"],
            &["generate", "--held-out"],
            &["generate", "--duration", "60", "--arc", "rise-fall", "--wav"],
            &["eval"],
        ] {
            ok(&arcscore(out, &cfg, args));
        }
    };
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run(&a);
    run(&b);
    assert_eq!(tree_bytes(&a), tree_bytes(&b), "same seed must give identical artifacts");

    for (stage, epochs) in [("probe", 2), ("backbone", 2), ("adapter", 3)] {
        let csv = fs::read_to_string(a.join(format!("weights/{stage}_loss.csv"))).unwrap();
        assert_eq!(csv.lines().count(), epochs + 1, "{stage}");
    }
    let gen = a.join("generated/arc_rise-fall_60s_0");
    let tokens = read_tokens(&gen.join("tokens.bin"), CodecSpec::default()).unwrap();
    assert_eq!((tokens.rows(), tokens.num_codebooks()), (600, 4));
    assert_eq!(fs::read_to_string(gen.join("va.csv")).unwrap().lines().count(), 61);
    assert_eq!(fs::read_to_string(gen.join("seams.csv")).unwrap().lines().count(), 3);
    assert_eq!(fs::metadata(gen.join("audio.wav")).unwrap().len(), 44 + 600 * 1600 * 2);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(a.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["kld"].as_f64().unwrap() >= 0.0);
    assert_eq!(report["clips"].as_array().unwrap().len(), 5);

    // A different seed changes the generated tokens.
    let c = dir.path().join("c");
    ok(&arcscore(&c, &cfg, &["--seed", "4", "datagen"]));
    assert_ne!(tree_bytes(&a.join("data/music")), tree_bytes(&c.join("data/music")));
}

#[test]
fn eval_of_a_corpus_against_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[corpus]\nscale = 0.03\n").unwrap();
    let out = dir.path().join("run");
    ok(&arcscore(&out, &cfg, &["datagen"]));
    let music = out.join("data/music");
    let m = music.to_str().unwrap();
    ok(&arcscore(&out, &cfg, &["eval", "--gen", m, "--ref", m]));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    assert!(report["fd"].as_f64().unwrap().abs() < 1e-8);
    assert!(report["kld"].as_f64().unwrap().abs() < 1e-12);
    // Clips carry their own curves, so alignment is defined and high.
    assert!(report["affect_alignment_valence"].as_f64().unwrap() > 0.5);
}
