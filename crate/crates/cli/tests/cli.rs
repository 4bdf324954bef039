use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use xsdp_parser::{Model, SharingTopology};

const TOY: &str = "\
[network]
d_w = 8
d_t = 4
d_char = 4
d_h = 8
rnn_layers = 1
d_fnn = 8

[train]
token_budget = 60
max_epochs = 2
";

fn xsdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xsdp"))
        .args(args)
        .env_remove("XSDP_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = xsdp(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// synth, intersect, project, split, train, parse and score in `dir`;
/// returns the score report.
fn pipeline(dir: &Path, share: &str) -> String {
    let config = dir.join("toy.toml");
    std::fs::write(&config, TOY).unwrap();
    let c = s(&config);
    let f = |name: &str| -> PathBuf { dir.join(name) };
    ok(&["--config", c, "--seed", "7", "synth", "-o", s(dir), "--sentences", "40"]);
    ok(&[
        "intersect",
        "--forward",
        s(&f("forward.align")),
        "--backward",
        s(&f("backward.align")),
        "--source",
        s(&f("source.sdp")),
        "-o",
        s(&f("inter.align")),
    ]);
    ok(&[
        "project",
        "--source",
        s(&f("source.sdp")),
        "--alignment",
        s(&f("inter.align")),
        "--target",
        s(&f("target.conllu")),
        "-o",
        s(&f("projected.sdp")),
    ]);
    ok(&[
        "--seed",
        "7",
        "split",
        "-i",
        s(&f("projected.sdp")),
        "--heldout",
        "0.1",
        "--train-output",
        s(&f("train.sdp")),
        "--heldout-output",
        s(&f("heldout.sdp")),
    ]);
    ok(&[
        "--config",
        c,
        "--seed",
        "7",
        "train",
        "--train",
        s(&f("train.sdp")),
        "--heldout",
        s(&f("heldout.sdp")),
        "--syntax",
        s(&f("target.conllu")),
        "--tasks",
        "sem,syn",
        "--share",
        share,
        "-m",
        s(&f("model.bin")),
    ]);
    ok(&["parse", "-m", s(&f("model.bin")), "-i", s(&f("gold.sdp")), "-o", s(&f("pred.sdp"))]);
    ok(&["score", "-p", s(&f("pred.sdp")), "-g", s(&f("gold.sdp"))])
}

#[test]
fn pipeline_is_reproducible_and_records_the_topology() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let report_a = pipeline(a.path(), "rnn,fnn");
    let report_b = pipeline(b.path(), "rnn,fnn");
    assert!(report_a.contains("LF="), "{report_a}");
    assert_eq!(report_a, report_b);
    for name in ["projected.sdp", "train.sdp", "model.bin", "model.bin.metrics", "pred.sdp"] {
        let x = std::fs::read(a.path().join(name)).unwrap();
        let y = std::fs::read(b.path().join(name)).unwrap();
        assert!(x == y, "{name} differs between runs");
    }
    let model = Model::load(std::fs::File::open(a.path().join("model.bin")).unwrap(), None).unwrap();
    assert_eq!(
        model.topology(),
        SharingTopology {
            shared_rnn: true,
            shared_fnn: true,
            task_rnn: false
        }
    );
    let manifest = std::fs::read_to_string(a.path().join("model.bin.manifest.json")).unwrap();
    assert!(manifest.contains("\"command\": \"train\"") && manifest.contains("shared_fnn = true"));
    assert!(manifest.contains("train.sdp"));
}

#[test]
fn score_refuses_mismatched_corpora() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-o", s(d), "--sentences", "5"]);
    let other = d.join("other");
    ok(&["synth", "-o", s(&other), "--sentences", "4"]);
    let report = d.join("report.txt");
    let out = xsdp(&["score", "-p", s(&other.join("gold.sdp")), "-g", s(&d.join("gold.sdp")), "-o", s(&report)]);
    assert!(!out.status.success());
    assert!(!report.exists());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error:"));
}

#[test]
fn help_documents_every_subcommand() {
    for sub in [
        "intersect", "project", "sample", "split", "synth", "train", "parse", "score", "analyze", "gradcheck",
    ] {
        let text = ok(&[sub, "--help"]);
        assert!(text.contains("Usage:"), "{sub}");
    }
    assert!(!xsdp(&["score", "--bogus"]).status.success());
    assert!(!xsdp(&["frobnicate"]).status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[network]\nd_hidden = 5\n").unwrap();
    let out = xsdp(&["--config", s(&config), "synth", "-o", s(dir.path())]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("d_hidden"));
    let out = Command::new(env!("CARGO_BIN_EXE_xsdp"))
        .args(["synth", "-o", s(dir.path())])
        .env("XSDP_CONFIG", &config)
        .output()
        .unwrap();
    assert!(!out.status.success(), "the environment variable names the default config");
}

#[test]
fn synth_writes_its_files_and_sample_balances_density() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["--seed", "3", "synth", "-o", s(d), "--sentences", "200"]);
    for name in ["source.sdp", "gold.sdp", "target.conllu", "forward.align", "backward.align", "synth.toml"] {
        assert!(d.join(name).exists(), "{name}");
    }
    ok(&[
        "intersect",
        "--forward",
        s(&d.join("forward.align")),
        "--backward",
        s(&d.join("backward.align")),
        "-o",
        s(&d.join("inter.align")),
    ]);
    ok(&[
        "project",
        "--source",
        s(&d.join("source.sdp")),
        "--alignment",
        s(&d.join("inter.align")),
        "--target",
        s(&d.join("target.conllu")),
        "-o",
        s(&d.join("projected.sdp")),
    ]);
    ok(&["sample", "-i", s(&d.join("projected.sdp")), "--size", "20", "-o", s(&d.join("sample.sdp"))]);
    let manifest = std::fs::read_to_string(d.join("sample.sdp.manifest.json")).unwrap();
    assert!(manifest.contains("\"below\": \"10\"") && manifest.contains("\"at_or_above\": \"10\""), "{manifest}");
    let out = xsdp(&["sample", "-i", s(&d.join("projected.sdp")), "--size", "7", "-o", s(&d.join("odd.sdp"))]);
    assert!(!out.status.success());
}

#[test]
fn analyses_run_on_synthetic_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "-o", s(d), "--sentences", "30"]);
    let gold = s(&d.join("gold.sdp")).to_string();
    let buckets = ok(&["analyze", "--buckets", "-g", &gold, "-p", &gold]);
    assert!(buckets.contains("bucket[1]="), "{buckets}");
    let syntax = s(&d.join("target.conllu")).to_string();
    let source = s(&d.join("source.sdp")).to_string();
    let heads = ok(&["analyze", "--headmatch", "-g", &gold, "--syntax", &syntax, "--a", &gold, "--b", &gold]);
    assert!(heads.contains("labeled_a_tokens=0"), "{heads}");
    let out = xsdp(&["analyze", "--contribution", "-g", &gold, "--syntax", &syntax, "--a", &gold, "--b", &source]);
    assert!(!out.status.success(), "source graphs do not fit the target sentences");
    assert!(!xsdp(&["analyze", "--buckets", "-g", &gold]).status.success());
    assert!(!xsdp(&["analyze", "-g", &gold, "-p", &gold]).status.success());
}

#[test]
fn gradcheck_passes_at_small_dimensions() {
    let out = ok(&["gradcheck", "--dim", "4", "--tokens", "3"]);
    assert!(out.contains("passed=true"), "{out}");
}
