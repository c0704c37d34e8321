use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/star_tail")
}

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gcn-nam"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn stderr_of_failure(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(!out.status.success(), "{args:?} unexpectedly succeeded");
    String::from_utf8(out.stderr).unwrap()
}

fn trained_fixture(dir: &Path) -> String {
    let ds = fixture().display().to_string();
    ok(dir, &["train", "--dataset", &ds, "--model-out", "m.ckpt", "--dropout", "0", "--epochs", "50"]);
    ds
}

#[test]
fn separable_synthetic_trains_perfectly() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "ds", "--preset", "separable"]);
    let out = ok(tmp.path(), &["train", "--dataset", "ds", "--model-out", "m.ckpt"]);
    assert_eq!(out.trim(), "test_acc=1.000");
}

#[test]
fn missing_dataset_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let err = stderr_of_failure(tmp.path(), &["train", "--dataset", "no/such/dir", "--model-out", "m.ckpt"]);
    assert!(err.contains("no/such/dir"), "{err}");
    assert!(!tmp.path().join("m.ckpt").exists());
}

#[test]
fn attribute_rejects_bad_node_and_class() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = trained_fixture(tmp.path());
    let base = ["attribute", "--dataset", &ds, "--model", "m.ckpt", "--out", "a.json"];
    let err = stderr_of_failure(tmp.path(), &[&base[..], &["--node", "5"]].concat());
    assert!(err.contains("node 5"), "{err}");
    let err = stderr_of_failure(tmp.path(), &[&base[..], &["--node", "0", "--class", "2"]].concat());
    assert!(err.contains("class 2"), "{err}");
    let err = stderr_of_failure(tmp.path(), &[&base[..], &["--node", "0", "--class", "best"]].concat());
    assert!(err.contains("best"), "{err}");
}

#[test]
fn attribute_writes_json_and_top_contributors() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = trained_fixture(tmp.path());
    let out = ok(
        tmp.path(),
        &["attribute", "--dataset", &ds, "--model", "m.ckpt", "--node", "4", "--class", "ground-truth", "--out", "a.json"],
    );
    assert!(out.starts_with("node 4 class 1 (3 nodes attributed)"), "{out}");
    assert_eq!(out.lines().count(), 4);
    let r = gcn_nam::Attribution::from_json(&fs::read_to_string(tmp.path().join("a.json")).unwrap()).unwrap();
    assert_eq!(r.nodes().collect::<Vec<_>>(), vec![0, 3, 4]);
    assert!(r.gradient.is_empty());
}

#[test]
fn visualize_fixture_gives_five_nodes() {
    let tmp = tempfile::tempdir().unwrap();
    let ds = trained_fixture(tmp.path());
    ok(tmp.path(), &["attribute", "--dataset", &ds, "--model", "m.ckpt", "--node", "0", "--out", "a.json"]);
    let vis = |hops: &str| {
        ok(
            tmp.path(),
            &["visualize", "--dataset", &ds, "--model", "m.ckpt", "--attribution", "a.json", "--out-dot", "v.dot", "--out-json", "v.json", "--hops", hops],
        );
        fs::read_to_string(tmp.path().join("v.dot")).unwrap()
    };
    let dot = vis("2");
    assert_eq!(gcn_nam::niv::dot_node_sizes(&dot).len(), 5);
    assert_eq!(dot.matches(" -- ").count(), 4);
    let one_hop = vis("1");
    assert_eq!(gcn_nam::niv::dot_node_sizes(&one_hop).len(), 4);
    let err = stderr_of_failure(
        tmp.path(),
        &["visualize", "--dataset", &ds, "--model", "m.ckpt", "--attribution", "a.json", "--out-dot", "v.dot", "--out-json", "v.json", "--hops", "3"],
    );
    assert!(err.contains("3"), "{err}");
}

#[test]
fn perturb_at_zero_reports_equal_baselines() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "ds", "--nodes", "30"]);
    ok(tmp.path(), &["train", "--dataset", "ds", "--model-out", "m.ckpt", "--epochs", "30"]);
    ok(tmp.path(), &["perturb", "--dataset", "ds", "--model", "m.ckpt", "--out-dir", "out", "--p", "0", "--seeds", "3"]);
    let tsv = fs::read_to_string(tmp.path().join("out/curves.tsv")).unwrap();
    let rows: Vec<Vec<&str>> = tsv.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 1 + 3 + 1);
    assert!(rows.iter().all(|r| r[3] == rows[0][3]), "{tsv}");
    assert!(tmp.path().join("out/curves.json").is_file());
}

#[test]
fn perturb_rejects_bad_fractions() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "ds", "--nodes", "30"]);
    ok(tmp.path(), &["train", "--dataset", "ds", "--model-out", "m.ckpt", "--epochs", "5"]);
    let err = stderr_of_failure(tmp.path(), &["perturb", "--dataset", "ds", "--model", "m.ckpt", "--out-dir", "out", "--p", "0.5,0.2"]);
    assert!(err.contains("ascending"), "{err}");
}

#[test]
fn model_dataset_mismatch_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    trained_fixture(tmp.path());
    ok(tmp.path(), &["synth", "--out", "ds"]);
    let err = stderr_of_failure(tmp.path(), &["attribute", "--dataset", "ds", "--model", "m.ckpt", "--node", "0", "--out", "a.json"]);
    assert!(err.contains("m.ckpt"), "{err}");
}

#[test]
fn plot_draws_one_polyline_per_strategy() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("c.tsv"),
        "strategy\tseed\tp\taccuracy\nnam\t-\t0\t1.0\nnam\t-\t0.5\t0.5\nrandom\tmean\t0\t1.0\nrandom\tmean\t0.5\t0.8\n",
    )
    .unwrap();
    ok(tmp.path(), &["plot", "--curves", "c.tsv", "--out", "c.svg"]);
    let svg = fs::read_to_string(tmp.path().join("c.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 2);
}

#[test]
fn plot_of_empty_file_fails() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("empty.tsv"), "").unwrap();
    let err = stderr_of_failure(tmp.path(), &["plot", "--curves", "empty.tsv", "--out", "c.svg"]);
    assert!(err.contains("empty.tsv"), "{err}");
    assert!(!tmp.path().join("c.svg").exists());
}

#[test]
fn thread_cap_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    ok(tmp.path(), &["synth", "--out", "ds", "--nodes", "45"]);
    ok(tmp.path(), &["train", "--dataset", "ds", "--model-out", "m.ckpt", "--epochs", "30"]);
    let curves = |threads: &str, out: &str| {
        let out_status = Command::new(env!("CARGO_BIN_EXE_gcn-nam"))
            .current_dir(tmp.path())
            .env("GCN_NAM_THREADS", threads)
            .args(["perturb", "--dataset", "ds", "--model", "m.ckpt", "--out-dir", out])
            .output()
            .unwrap();
        assert!(out_status.status.success());
        fs::read(tmp.path().join(out).join("curves.tsv")).unwrap()
    };
    assert_eq!(curves("1", "one"), curves("4", "four"));
}
