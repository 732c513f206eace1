use std::path::Path;
use std::process::{Command, Output};

use densegen_core::layout::layout_stats;
use densegen_data::load_dataset;

fn densegen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_densegen")).args(args).output().unwrap()
}

fn densegen_env(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_densegen"));
    cmd.args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn synth(dir: &Path, count: usize) {
    let o = densegen(&["--seed", "1", "synth", "--synthetic", "--count", &count.to_string(), "--out", &s(dir)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

fn train(data: &Path, out: &Path, extra: &[&str]) -> Output {
    let (d, o) = (s(data), s(out));
    let mut args = vec!["--seed", "2", "train", "--data", &d, "--out", &o];
    args.extend_from_slice(&["--batch-size", "4", "--blocks", "1", "--d-model", "8", "--d-head", "8", "--d-time", "8"]);
    args.extend_from_slice(extra);
    densegen(&args)
}

#[test]
fn synth_is_byte_stable_and_stats_match_a_sort() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 9);
    synth(&b, 9);
    for entry in std::fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(std::fs::read(a.join(&name)).unwrap(), std::fs::read(b.join(&name)).unwrap(), "{name:?}");
    }

    let out = tmp.path().join("stats.json");
    let o = densegen(&["stats", "--data", &s(&a), "--out", &s(&out)]);
    assert_eq!(code(&o), 0);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&out).unwrap()).unwrap();
    let mut totals: Vec<usize> = load_dataset(&a).unwrap().iter().map(|i| i.layout.len()).collect();
    totals.sort_unstable();
    assert_eq!(report["median_total"].as_f64().unwrap(), totals[4] as f64);
    let again = densegen(&["stats", "--data", &s(&a)]);
    assert_eq!(o.stdout, again.stdout);
    let layouts: Vec<_> = load_dataset(&a).unwrap().into_iter().map(|i| i.layout).collect();
    assert_eq!(report["median_total"].as_f64(), Some(layout_stats(&layouts).unwrap().median_total));
}

#[test]
fn validation_failures_exit_2_and_write_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let template = tmp.path().join("template");
    std::fs::create_dir(&template).unwrap();
    let missing = tmp.path().join("no-such-db");
    let o = densegen(&["synth", "--augment", "--template", &s(&template), "--db", &s(&missing), "--out", &s(&out)]);
    assert_eq!(code(&o), 2);
    assert!(!out.exists());
    assert_eq!(std::fs::read_dir(tmp.path()).unwrap().count(), 1, "no staging directory left behind");

    let data = tmp.path().join("data");
    synth(&data, 4);
    let o = train(&data, &out, &["--epochs", "0"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());

    let empty = tmp.path().join("empty");
    std::fs::create_dir(&empty).unwrap();
    let (e, o) = (s(&empty), s(&out));
    for sub in [vec!["eval", "--data", &e, "--out", &o], vec!["stats", "--data", &e]] {
        let o = densegen(&sub);
        assert_ne!(code(&o), 0, "{sub:?}");
        assert!(!out.exists());
    }
    // Clap rejects unknown flags with its own usage code.
    assert_eq!(code(&densegen(&["synth", "--synthetic", "--out", &s(&out), "--bogus"])), 2);
}

#[test]
fn resume_continues_the_trace_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 8);
    let (full, half, rest) = (tmp.path().join("full"), tmp.path().join("half"), tmp.path().join("rest"));
    assert_eq!(code(&train(&data, &full, &["--epochs", "3", "--beta-glyph", "5"])), 0);
    assert_eq!(code(&train(&data, &half, &["--epochs", "3", "--max-steps", "3", "--beta-glyph", "5"])), 0);
    let ckpt = half.join("checkpoint.json");
    let o = train(&data, &rest, &["--epochs", "3", "--resume", &s(&ckpt)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let rows = |p: &Path| -> Vec<String> {
        std::fs::read_to_string(p.join("loss.csv")).unwrap().lines().skip(1).map(String::from).collect()
    };
    let (a, b, c) = (rows(&full), rows(&half), rows(&rest));
    assert_eq!(a.len(), 6);
    assert_eq!([b, c].concat(), a);
    assert_eq!(std::fs::read(full.join("checkpoint.json")).unwrap(), std::fs::read(rest.join("checkpoint.json")).unwrap());
    let ck: serde_json::Value = serde_json::from_slice(&std::fs::read(&ckpt).unwrap()).unwrap();
    assert_eq!(ck["train"]["beta_glyph"].as_f64(), Some(5.0));
}

#[test]
fn generate_paths_sweeps_and_gamma_range() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 2);
    let model = tmp.path().join("model");
    assert_eq!(code(&train(&data, &model, &["--max-steps", "1"])), 0);
    let ckpt = s(&model.join("checkpoint.json"));
    let gen = |out: &Path, extra: &[&str]| {
        let mut args = vec!["generate", "--checkpoint", &ckpt, "--data"];
        let (d, o) = (s(&data), s(out));
        args.extend_from_slice(&[&d, "--out", &o, "--steps", "3"]);
        args.extend_from_slice(extra);
        densegen(&args)
    };

    let plain = tmp.path().join("plain");
    assert_eq!(code(&gen(&plain, &[])), 0);
    let jobs: serde_json::Value = serde_json::from_slice(&std::fs::read(plain.join("generate.json")).unwrap()).unwrap();
    assert!(jobs.as_array().unwrap().iter().all(|j| j["path"] == "global"));

    let sweep = tmp.path().join("sweep");
    let o = gen(&sweep, &["--gamma", "1=1.5", "--sweep", "alpha=0.1,0.5,0.9"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let items = load_dataset(&sweep).unwrap();
    assert_eq!(items.len(), 6);
    assert!(items.iter().all(|i| sweep.join("layers").join(format!("{}_01.png", i.id)).exists()));

    let bad = tmp.path().join("bad");
    let o = gen(&bad, &["--gamma", "99=5"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("out of range"));
    assert!(!bad.exists());
}

#[test]
fn eval_reports_buckets_and_flags_unreachable_judges() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 3);
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        let o = densegen(&["eval", "--data", &s(&data), "--out", &s(out), "--judge", "stub"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let report = std::fs::read(a.join("report.json")).unwrap();
    assert_eq!(report, std::fs::read(b.join("report.json")).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&report).unwrap();
    let buckets: Vec<&str> = v["buckets"].as_array().unwrap().iter().map(|b| b["bucket"].as_str().unwrap()).collect();
    assert_eq!(buckets, ["<=10", "10-15", "15-20", ">=20"]);
    // Rendered from the dataset's own colors, so the stub judge passes every
    // layer with something visible; fully occluded ones score 0.
    let mut rates = Vec::new();
    for entry in std::fs::read_dir(a.join("items")).unwrap() {
        let item: serde_json::Value = serde_json::from_slice(&std::fs::read(entry.unwrap().path()).unwrap()).unwrap();
        let judgements = item["lgsr"]["judgements"].as_array().unwrap();
        let mut passed = 0;
        for j in judgements {
            let score = j["score"].as_u64().unwrap();
            if j["reason"] == "region fully occluded" {
                assert_eq!(score, 0);
            } else {
                assert!(score >= 5, "{j}");
                passed += 1;
            }
        }
        rates.push(passed as f64 / judgements.len() as f64);
    }
    let expected = rates.iter().sum::<f64>() / rates.len() as f64;
    assert!((v["overall"]["lgsr"].as_f64().unwrap() - expected).abs() < 1e-12);

    let remote = tmp.path().join("remote");
    let o = densegen_env(
        &["eval", "--data", &s(&data), "--out", &s(&remote), "--judge", "remote", "--attempts", "2", "--timeout", "2"],
        &[("JUDGE_ENDPOINT", "http://127.0.0.1:9/judge")],
    );
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(remote.join("report.json")).unwrap()).unwrap();
    assert_eq!(v["incomplete"], true);
}
