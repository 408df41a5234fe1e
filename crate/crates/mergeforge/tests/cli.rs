//! End-to-end tests of the command-line binary.

use mergeforge::tensorio::{read_archive, write_archive, Tensor, TensorArchive};
use std::path::Path;
use std::process::{Command, Output};

fn mergeforge(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mergeforge"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).to_string()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).to_string()
}

fn toy_model(values: &[f32]) -> TensorArchive {
    let mut a = TensorArchive::new();
    a.insert("model.layers.0.w", Tensor::f32(vec![values.len()], values.to_vec()).unwrap())
        .unwrap();
    a.insert("embed.weight", Tensor::f32(vec![2], vec![0.5, -0.5]).unwrap())
        .unwrap();
    a
}

#[test]
fn inspect_lists_tensors_and_metadata() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = toy_model(&[1.0, 2.0, 3.0]);
    a.set_metadata("model_id", "toy");
    write_archive(&a, dir.path().join("m.st")).unwrap();
    let out = mergeforge(&["inspect", "m.st"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("tensors: 2"), "{text}");
    assert!(text.contains("model.layers.0.w\tF32\t3"), "{text}");
    assert!(text.contains("metadata\tmodel_id\ttoy"), "{text}");
}

#[test]
fn inspect_rejects_malformed_file() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("bad.st"), [1u8, 2, 3]).unwrap();
    let out = mergeforge(&["inspect", "bad.st"], dir.path());
    assert!(!out.status.success());
    assert!(stderr(&out).starts_with("error:"), "{}", stderr(&out));
}

#[test]
fn linear_one_hot_merge_is_identity_on_tensors() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = toy_model(&[1.0, 2.0, 3.0]);
    let m2 = toy_model(&[9.0, 8.0, 7.0]);
    write_archive(&m1, dir.path().join("m1.st")).unwrap();
    write_archive(&m2, dir.path().join("m2.st")).unwrap();
    std::fs::write(
        dir.path().join("recipe.toml"),
        "method = \"linear\"\nmodels = [\"m1.st\", \"m2.st\"]\nalphas = [1.0, 0.0]\noutput = \"out.st\"\n",
    )
    .unwrap();
    let out = mergeforge(&["merge", "--recipe", "recipe.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let merged = read_archive(dir.path().join("out.st")).unwrap();
    for (name, tensor) in m1.iter() {
        assert_eq!(merged.get(name).unwrap().data(), tensor.data(), "{name}");
    }
    assert!(merged.metadata().contains_key("merge_recipe"));
}

#[test]
fn ties_recipe_without_base_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    write_archive(&toy_model(&[1.0]), dir.path().join("m1.st")).unwrap();
    write_archive(&toy_model(&[2.0]), dir.path().join("m2.st")).unwrap();
    std::fs::write(
        dir.path().join("recipe.toml"),
        "method = \"ties\"\nmodels = [\"m1.st\", \"m2.st\"]\noutput = \"out.st\"\n",
    )
    .unwrap();
    let out = mergeforge(&["merge", "--recipe", "recipe.toml"], dir.path());
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.starts_with("error:") && err.contains("base"), "{err}");
}

#[test]
fn delta_writes_differences() {
    let dir = tempfile::tempdir().unwrap();
    write_archive(&toy_model(&[3.0, 5.0, 7.0]), dir.path().join("model.st")).unwrap();
    write_archive(&toy_model(&[1.0, 2.0, 3.0]), dir.path().join("base.st")).unwrap();
    let out = mergeforge(
        &["delta", "--model", "model.st", "--base", "base.st", "--out", "d.st"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let d = read_archive(dir.path().join("d.st")).unwrap();
    assert_eq!(d.get("model.layers.0.w").unwrap().data(), &[2.0, 3.0, 4.0]);
    assert_eq!(d.get("embed.weight").unwrap().data(), &[0.0, 0.0]);
}

#[test]
fn score_computes_harm_change_and_win_rate() {
    let dir = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    // baseline: 4/8 harmful; candidate: 2/8 harmful -> -50.0
    for i in 0..8 {
        lines.push(format!(
            r#"{{"prompt_id":"p{i}","language":"en","model_id":"base","kind":"harm","harmful":{}}}"#,
            i < 4
        ));
        lines.push(format!(
            r#"{{"prompt_id":"p{i}","language":"en","model_id":"cand","kind":"harm","harmful":{}}}"#,
            i < 2
        ));
    }
    // preferences: 3 wins, 1 loss -> 75.0
    for (i, winner) in ["cand", "cand", "cand", "base"].iter().enumerate() {
        lines.push(format!(
            r#"{{"prompt_id":"q{i}","language":"en","model_id":"cand","kind":"pref","winner":"{winner}"}}"#
        ));
    }
    std::fs::write(dir.path().join("j.jsonl"), lines.join("\n")).unwrap();
    let out = mergeforge(
        &[
            "score",
            "--judgments",
            "j.jsonl",
            "--model-id",
            "cand",
            "--baseline-id",
            "base",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let parsed: serde_json::Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(parsed["scores"]["safety"], -50.0);
    assert_eq!(parsed["scores"]["general"], 75.0);
}

#[test]
fn report_renders_baseline_deltas() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = serde_json::json!({
        "baseline": "15pct_mix",
        "rows": {
            "15pct_mix": {"all": {"safety": -54.69, "general": 71.0}},
            "slerp": {"all": {"safety": -57.8, "general": 78.0}},
        }
    });
    std::fs::write(dir.path().join("metrics.json"), metrics.to_string()).unwrap();
    let out = mergeforge(
        &["report", "--metrics", "metrics.json", "--out", "report.json"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("-57.8 (+3.1)"), "{text}");
    assert!(text.contains("78.0 (+7.0)"), "{text}");
    let structured: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("report.json")).unwrap())
            .unwrap();
    assert_eq!(structured["baseline"], "15pct_mix");
}

#[test]
fn grid_sweep_against_target_recovers_combination() {
    let dir = tempfile::tempdir().unwrap();
    let m1 = toy_model(&[1.0, 0.0, 2.0]);
    let m2 = toy_model(&[0.0, 1.0, -2.0]);
    write_archive(&m1, dir.path().join("m1.st")).unwrap();
    write_archive(&m2, dir.path().join("m2.st")).unwrap();
    // target = 0.5 * m1 + 0.5 * m2, which the default grid contains
    let mut target = TensorArchive::new();
    for (name, t) in m1.iter() {
        let blended: Vec<f32> = t
            .data()
            .iter()
            .zip(m2.get(name).unwrap().data())
            .map(|(&a, &b)| 0.5 * a + 0.5 * b)
            .collect();
        target
            .insert(name, Tensor::f32(t.shape().to_vec(), blended).unwrap())
            .unwrap();
    }
    write_archive(&target, dir.path().join("target.st")).unwrap();
    std::fs::write(
        dir.path().join("grid.toml"),
        "method = \"linear\"\nmodels = [\"m1.st\", \"m2.st\"]\nevaluator = \"target\"\ntarget = \"target.st\"\nout_prefix = \"sweep\"\n",
    )
    .unwrap();
    let out = mergeforge(&["grid", "--grid", "grid.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    let first = table.lines().nth(1).unwrap();
    assert!(first.starts_with("1\t0.500000,0.500000"), "{table}");
    assert!(dir.path().join("sweep.tsv").exists());
    assert!(dir.path().join("sweep.json").exists());
}

#[test]
fn grid_sweep_joins_external_scores() {
    let dir = tempfile::tempdir().unwrap();
    write_archive(&toy_model(&[1.0]), dir.path().join("m1.st")).unwrap();
    write_archive(&toy_model(&[2.0]), dir.path().join("m2.st")).unwrap();
    let scores = serde_json::json!([
        {"coefficients": [0.5], "safety": -50.0, "general": 70.0},
        {"coefficients": [1.0], "safety": -40.0, "general": 75.0},
    ]);
    std::fs::write(dir.path().join("scores.json"), scores.to_string()).unwrap();
    std::fs::write(
        dir.path().join("grid.toml"),
        "method = \"slerp\"\nmodels = [\"m1.st\", \"m2.st\"]\nevaluator = \"scores\"\nscores = \"scores.json\"\n",
    )
    .unwrap();
    let out = mergeforge(&["grid", "--grid", "grid.toml"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    // (75 - 40)/2 = 17.5 beats (70 - 50)/2 = 10; unmatched candidates are UNSCORED
    let first = table.lines().nth(1).unwrap();
    assert!(first.contains("1.000000") && first.contains("OK"), "{table}");
    assert_eq!(table.matches("UNSCORED").count(), 3, "{table}");
}
