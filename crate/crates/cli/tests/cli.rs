use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_canvasvae");

const SMALL: [&str; 12] = [
    "--set",
    "dataset.feature_dim=8",
    "--set",
    "model.hidden_dim=16",
    "--set",
    "model.latent_dim=8",
    "--set",
    "model.heads=2",
    "--set",
    "train.batch_size=16",
    "--set",
    "train.eval_every=0",
];

fn run(args: &[&str], root: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .env("CANVASVAE_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], root: &Path) -> String {
    let out = run(args, root);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(args: &[&'a str]) -> Vec<&'a str> {
    args.iter().copied().chain(SMALL).collect()
}

fn dataset(root: &Path, n: &str) -> String {
    ok(&with_small(&["dataset", "gen", "--n", n, "--seed", "3"]), root);
    root.join("dataset/manifest.json").to_string_lossy().into_owned()
}

#[test]
fn dataset_gen_writes_splits_under_output_root() {
    let dir = tempfile::tempdir().unwrap();
    dataset(dir.path(), "40");
    for f in ["manifest.json", "schema.json", "train.jsonl", "val.jsonl", "test.jsonl", "resolved_config.toml"] {
        assert!(dir.path().join("dataset").join(f).is_file(), "{f}");
    }
    let snapshot = std::fs::read_to_string(dir.path().join("dataset/resolved_config.toml")).unwrap();
    assert!(snapshot.contains("n_docs = 40"), "{snapshot}");
    assert!(snapshot.contains("feature_dim = 8"), "{snapshot}");
}

#[test]
fn evaluating_a_split_against_itself_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), "40");
    let test = dir.path().join("dataset/test.jsonl");
    let test = test.to_str().unwrap();
    let out =
        ok(&["eval", "--data", &manifest, "--predictions", test, "--generated", test, "--format", "tsv"], dir.path());
    assert!(out.lines().any(|l| l == "s_reconst\t100.00"), "{out}");
    assert!(out.lines().any(|l| l == "miou\t100.00"), "{out}");
    assert!(out.lines().any(|l| l == "s_gen\t100.00"), "{out}");
}

#[test]
fn exit_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // unknown flag
    assert_eq!(run(&["train", "--bogus"], root).status.code(), Some(2));
    // unknown configuration key
    let out = run(&["dataset", "gen", "--set", "dataset.n_doc=3"], root);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dataset.n_doc"));
    // invalid value
    assert_eq!(run(&["dataset", "gen", "--set", "dataset.family=\"svg\""], root).status.code(), Some(2));
    // missing input
    let missing = root.join("nope/manifest.json");
    assert_eq!(run(&["train", "--data", missing.to_str().unwrap()], root).status.code(), Some(1));
}

#[test]
fn config_file_and_overrides_layer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "seed = 11\n[dataset]\nn_docs = 25\nfeature_dim = 4\n").unwrap();
    let out = dir.path().join("ds");
    let args = ["--config", cfg.to_str().unwrap(), "--set", "dataset.n_docs=30", "--out", out.to_str().unwrap()];
    ok(&[&["dataset", "gen"][..], &args].concat(), dir.path());
    let snapshot = std::fs::read_to_string(out.join("resolved_config.toml")).unwrap();
    assert!(snapshot.contains("seed = 11"));
    assert!(snapshot.contains("n_docs = 30"));
    assert!(snapshot.contains("feature_dim = 4"));
}

#[test]
fn train_generate_render_interpolate() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let manifest = dataset(root, "40");
    ok(&with_small(&["train", "--data", &manifest, "--epochs", "1"]), root);
    let ckpt = root.join("train/last.ckpt.json");
    assert!(ckpt.is_file());
    assert!(root.join("train/metrics.jsonl").is_file());
    let ckpt = ckpt.to_str().unwrap();

    let report = ok(&["eval", "--data", &manifest, "--checkpoint", ckpt], root);
    assert!(report.contains("S_reconst"), "{report}");

    ok(&["generate", "--checkpoint", ckpt, "--n", "3", "--render"], root);
    let generated = std::fs::read_to_string(root.join("generate/generated.jsonl")).unwrap();
    assert_eq!(generated.lines().count(), 3);
    let svgs: Vec<_> = std::fs::read_dir(root.join("generate"))
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().ends_with(".colormap.svg"))
        .collect();
    assert_eq!(svgs.len(), 3);
    for e in svgs {
        roxmltree::Document::parse(&std::fs::read_to_string(e.path()).unwrap()).unwrap();
    }

    ok(&["render", "--data", &manifest, "--mode", "textured", "--limit", "2"], root);
    let textured = std::fs::read_dir(root.join("render"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().ends_with(".textured.svg"))
        .count();
    assert_eq!(textured, 2);

    let test = std::fs::read_to_string(root.join("dataset/test.jsonl")).unwrap();
    let ids: Vec<String> =
        test.lines().take(2).map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"].to_string()).collect();
    ok(
        &["interpolate", "--checkpoint", ckpt, "--data", &manifest, "--a", &ids[0], "--b", &ids[1], "--steps", "4"],
        root,
    );
    assert_eq!(std::fs::read_to_string(root.join("interpolate/interpolation.jsonl")).unwrap().lines().count(), 4);
    let strip = std::fs::read_to_string(root.join("interpolate/strip.colormap.svg")).unwrap();
    let svg = roxmltree::Document::parse(&strip).unwrap();
    assert_eq!(svg.descendants().filter(|n| n.attribute("class") == Some("panel")).count(), 4);
}

#[test]
fn gridsearch_tabulates_each_weight() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dataset(dir.path(), "30");
    let mut args = with_small(&["gridsearch", "--data", &manifest, "--grid", "1,4"]);
    args.extend(["--set", "train.epochs=1"]);
    let table = ok(&args, dir.path());
    assert_eq!(table.lines().count(), 3, "{table}");
    assert!(dir.path().join("gridsearch/grid.tsv").is_file());
}
