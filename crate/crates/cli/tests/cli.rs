use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/data").join(name)
}

fn s2g(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_s2g")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = "glove.dim = 32\npos.dim = 8\nanonymization.dim = 4\nindex.dim = 8\nindex.max = 30\n\
charcnn.char_dim = 8\ncharcnn.num_filters = 16\nencoder.hidden_size = 32\ndecoder.hidden_size = 64\n\
encoder.num_layers = 1\ndecoder.num_layers = 1\nbiaffine.edge_hidden_size = 32\nbiaffine.label_hidden_size = 16\n\
batch_size = 4\ndropout = 0.0\nepochs = 80\npatience = 0\ntarget_smatch = 1.0\ndecoder.max_len = 20\nbeam_size = 3\n";

#[test]
fn eval_of_identical_corpora_is_perfect() {
    let gold = fixture("graphs50.amr");
    let o = s2g(&["eval", "--gold", path(&gold), "--pred", path(&gold)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "P 1.0000 R 1.0000 F1 1.0000");
    assert!(stderr(&o).contains("verb=eval"));
}

#[test]
fn usage_and_data_errors_have_distinct_codes() {
    let o = s2g(&["parse", "--input", "x", "--output", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(s2g(&["eval", "--gold", "a", "--pred", "b", "--bogus"]).status.code(), Some(1));
    assert_eq!(s2g(&["eval", "--gold", "/no/such/file", "--pred", "/no/such/file"]).status.code(), Some(2));

    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.amr");
    std::fs::write(&bad, "# ::id a\n(a / alpha)\n\n# ::id b\n(b / beta :ARG0 (c / gamma)\n").unwrap();
    let o = s2g(&["eval", "--gold", path(&bad), "--pred", path(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("record 2"), "{}", stderr(&o));
}

#[test]
fn transduction_round_trips_through_files() {
    let dir = TempDir::new().unwrap();
    for file in ["graphs50.amr", "anonymization.amr"] {
        let gold = fixture(file);
        let trees = dir.path().join("trees.txt");
        let back = dir.path().join("back.amr");
        let lin = dir.path().join("lin.tsv");
        assert!(s2g(&["transduce", "g2t", "--input", path(&gold), "--output", path(&trees)]).status.success());
        let o = s2g(&["transduce", "t2g", "--input", path(&trees), "--output", path(&back)]);
        assert!(o.status.success(), "{}", stderr(&o));
        let o = s2g(&["eval", "--gold", path(&gold), "--pred", path(&back)]);
        assert_eq!(stdout(&o).trim(), "P 1.0000 R 1.0000 F1 1.0000", "{}", file);
        assert!(s2g(&["transduce", "linearize", "--input", path(&gold), "--output", path(&lin)]).status.success());
        assert!(std::fs::read_to_string(&lin).unwrap().contains("\tARG0\t"));
    }
}

#[test]
fn train_parse_eval_and_stats_on_the_overfit_corpus() {
    let dir = TempDir::new().unwrap();
    let corpus = fixture("overfit32.amr");
    let config = dir.path().join("small.cfg");
    std::fs::write(&config, SMALL).unwrap();
    let model = dir.path().join("model.bin");
    let o = s2g(&[
        "train",
        "--corpus",
        path(&corpus),
        "--dev",
        path(&corpus),
        "--config",
        path(&config),
        "--out",
        path(&model),
        "--seed",
        "3",
        "--jobs",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("config.seed=3"));
    assert!(stderr(&o).contains("epoch=1 loss="));

    let parsed = dir.path().join("parsed.amr");
    let o = s2g(&["parse", "--model", path(&model), "--input", path(&corpus), "--output", path(&parsed)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let first = std::fs::read(&parsed).unwrap();
    let o = s2g(&["parse", "--model", path(&model), "--input", path(&corpus), "--output", path(&parsed), "--jobs", "1"]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&parsed).unwrap(), first, "parsing is deterministic");

    let o = s2g(&["eval", "--gold", path(&corpus), "--pred", path(&parsed)]);
    let line = stdout(&o);
    let f1: f64 = line.split_whitespace().last().unwrap().parse().unwrap();
    assert!(f1 >= 0.95, "{}", line);

    let tags = dir.path().join("parsed.amr.tags");
    assert!(dir.path().join("parsed.amr.anon").exists());
    let o = s2g(&["stats", "--gold", path(&corpus), "--pred", path(&parsed), "--tags", path(&tags)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    for kind in ["vocab", "source-copy", "target-copy"] {
        assert!(out.lines().any(|l| l.starts_with(kind)), "{}", out);
    }
}
