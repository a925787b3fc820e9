use std::path::Path;

use assert_cmd::Command;

fn denoise(dir: &Path) -> Command {
    let mut c = Command::cargo_bin("denoise").unwrap();
    c.arg("--workdir").arg(dir).env_remove("LLARD_API_KEY");
    c
}

fn stdout(c: &mut Command) -> String {
    let out = c.output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn failure(c: &mut Command) -> (i32, String) {
    let out = c.output().unwrap();
    (out.status.code().unwrap(), String::from_utf8(out.stderr).unwrap())
}

/// Two taste clusters of six users; each user rates six of its cluster's
/// eight items.
fn toy_corpus(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let mut lines = String::new();
    for u in 0..12 {
        let base = if u < 6 { 0 } else { 8 };
        for k in 0..8 {
            if k != u % 8 && k != (u + 3) % 8 {
                lines.push_str(&format!("u{u}\ti{}\t5\t{}\n", base + k, 1000 + k));
            }
        }
    }
    let mut catalog = String::new();
    for i in 0..16 {
        let (topic, shelf) = if i < 8 { ("space opera starships", "science fiction") } else { ("regency courtship letters", "romance") };
        catalog.push_str(&format!("i\ti{i}\ttitle\tBook {i} of {topic}\n"));
        catalog.push_str(&format!("i\ti{i}\tcategory\t{shelf}\n"));
        catalog.push_str(&format!("i\ti{i}\tdescription\tA story of {topic}.\n"));
    }
    let (a, b) = (dir.join("ratings.tsv"), dir.join("catalog.tsv"));
    std::fs::write(&a, lines).unwrap();
    std::fs::write(&b, catalog).unwrap();
    (a, b)
}

fn ingest_toy(dir: &Path) {
    let (ratings, catalog) = toy_corpus(dir);
    stdout(denoise(dir).args(["ingest", "--k", "1", "--interactions"]).arg(ratings).arg("--catalog").arg(catalog));
}

const SMALL: [&str; 8] = ["--set", "dim=8", "--set", "layers=1", "--set", "mask_hidden=8", "--set", "batch_size=16"];

#[test]
fn ingest_passthrough_summary() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("toy.tsv");
    std::fs::write(&file, "a\tx\t5\t1\na\ty\t4\t2\nb\tx\t\t\nb\tz\t3\t\nc\ty\t5\t9\n").unwrap();
    let out = stdout(denoise(dir.path()).args(["ingest", "--k", "1", "--interactions"]).arg(&file));
    let row: Vec<&str> = out.lines().nth(1).unwrap().split('\t').collect();
    assert_eq!(row[..4], ["toy", "3", "3", "5"]);
}

#[test]
fn ingest_reports_malformed_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("bad.tsv");
    std::fs::write(&file, "a\tx\t5\t1\na\ty\t4\t2\nonly-one-field\nb\tx\t5\t3\n").unwrap();
    let (code, err) = failure(denoise(dir.path()).args(["ingest", "--k", "1", "--interactions"]).arg(&file));
    assert_eq!(code, 3);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn ingest_is_deterministic_and_rejects_empty_results() {
    let dir = tempfile::tempdir().unwrap();
    ingest_toy(dir.path());
    let first = std::fs::read(dir.path().join("dataset.json")).unwrap();
    ingest_toy(dir.path());
    assert_eq!(std::fs::read(dir.path().join("dataset.json")).unwrap(), first);

    let (ratings, _) = toy_corpus(dir.path());
    let (code, err) = failure(denoise(dir.path()).args(["ingest", "--k", "50", "--interactions"]).arg(ratings));
    assert_eq!(code, 3);
    assert!(err.contains("no interactions survive"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(failure(denoise(dir.path()).args(["train", "--bogus"])).0, 2);
    ingest_toy(dir.path());
    let (code, err) = failure(denoise(dir.path()).args(["train", "--set", "colour=blue"]));
    assert_eq!(code, 2);
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn mock_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ingest_toy(d);

    let out = stdout(denoise(d).args(["knowledge", "prefs", "--mock", "--dim", "8"]));
    assert!(out.contains("preference knowledge: 12 users, 16 items"), "{out}");
    let out = stdout(denoise(d).args(["knowledge", "relations", "--mock"]));
    assert!(!out.contains("provider calls 0,"), "{out}");
    let kr = std::fs::read(d.join("kr.txt")).unwrap();
    // warm cache: nothing is sent again and the artifact is unchanged
    let out = stdout(denoise(d).args(["knowledge", "relations", "--mock"]));
    assert!(out.contains("provider calls 0,"), "{out}");
    assert_eq!(std::fs::read(d.join("kr.txt")).unwrap(), kr);

    let out = stdout(denoise(d).args(["--seed", "5", "train", "--epochs", "3"]).args(SMALL));
    assert!(out.contains("metric\tN\tvalue"), "{out}");
    for f in ["checkpoint.bin", "train_config.txt", "metrics.tsv", "epochs.tsv", "report.tsv", "manifest.json"] {
        assert!(d.join(f).exists(), "{f}");
    }
    let metrics = std::fs::read_to_string(d.join("metrics.tsv")).unwrap();
    assert!(metrics.starts_with("step\tepoch\tl_rec"));
    let manifest = std::fs::read_to_string(d.join("manifest.json")).unwrap();
    assert!(manifest.contains("\"train\": 5") && manifest.contains("\"sha256\""), "{manifest}");

    let a = stdout(denoise(d).arg("eval"));
    let b = stdout(denoise(d).arg("eval"));
    assert_eq!(a, b);
    assert!(a.contains("# seed\t5"), "{a}");

    let cold = stdout(denoise(d).args(["coldstart", "--ns", "5"]));
    assert_eq!(cold.lines().count(), 6, "{cold}");

    stdout(denoise(d).arg("export-graph"));
    let graph = std::fs::read_to_string(d.join("graph.tsv")).unwrap();
    assert!(graph.lines().count() > 1);
    let ck = std::fs::read(d.join("checkpoint.bin")).unwrap();
    stdout(denoise(d).args(["--seed", "5", "train", "--epochs", "3"]).args(SMALL));
    assert_eq!(std::fs::read(d.join("checkpoint.bin")).unwrap(), ck);

    let out = stdout(denoise(d).args(["robustness", "--epochs", "2", "--ratios", "0.1,0.2", "--n", "5"]).args(SMALL));
    assert_eq!(out.lines().filter(|l| l.starts_with("0.10\t") || l.starts_with("0.20\t")).count(), 2, "{out}");
}

#[test]
fn plain_backbone_needs_no_knowledge() {
    let dir = tempfile::tempdir().unwrap();
    ingest_toy(dir.path());
    let (code, err) = failure(denoise(dir.path()).args(["train", "--epochs", "1"]).args(SMALL));
    assert_eq!(code, 3);
    assert!(err.contains("kp.bin") && err.contains("--no-pk"), "{err}");
    stdout(denoise(dir.path()).args(["train", "--no-pk", "--no-rk", "--beta", "0", "--epochs", "2"]).args(SMALL));
    let config = std::fs::read_to_string(dir.path().join("train_config.txt")).unwrap();
    assert!(config.contains("no_pk = true") && config.contains("beta = 0"));
}

#[test]
fn tampered_artifacts_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    ingest_toy(dir.path());
    let path = dir.path().join("dataset.json");
    let mut text = std::fs::read_to_string(&path).unwrap();
    text.push(' ');
    std::fs::write(&path, text).unwrap();
    let (code, err) = failure(denoise(dir.path()).args(["train", "--no-pk", "--no-rk"]));
    assert_eq!(code, 3);
    assert!(err.contains("does not match the manifest"), "{err}");
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let dir = tempfile::tempdir().unwrap();
    ingest_toy(dir.path());
    let (code, err) = failure(
        denoise(dir.path())
            .args(["train", "--no-pk", "--no-rk", "--no-mi-min", "--epochs", "5", "--set", "lr=1e300"])
            .args(SMALL),
    );
    assert_eq!(code, 5, "{err}");
    assert!(err.contains("non-finite"), "{err}");
}

#[test]
fn eval_without_checkpoint_names_it() {
    let dir = tempfile::tempdir().unwrap();
    ingest_toy(dir.path());
    let (code, err) = failure(denoise(dir.path()).arg("eval"));
    assert_eq!(code, 3);
    assert!(err.contains("checkpoint.bin"), "{err}");
}
