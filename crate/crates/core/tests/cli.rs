use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use axe_eval::io::{read_json, read_report_csv, read_table2_csv, ReportDocument, TopN, TABLE2_HEADER};

fn axe_eval(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_axe-eval"))
        .args(args)
        .env_remove("AXE_EVAL_SEED")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn standin(dir: &Path, kind: &str, rows: &str) -> PathBuf {
    let p = dir.join(format!("{kind}.csv"));
    let out = axe_eval(&["standin", "--kind", kind, "--rows", rows, "--out", s(&p)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    p
}

#[test]
fn missing_data_file_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = axe_eval(&["evaluate", "--data", "/nonexistent/x.csv", "--explainer", "grad", "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/x.csv"));
}

#[test]
fn malformed_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.csv");
    std::fs::write(&p, "a,b,target\n1,2,0\n1,oops,1\n").unwrap();
    let out = axe_eval(&["evaluate", "--data", s(&p), "--explainer", "grad", "--out", s(dir.path())]);
    assert_eq!(code(&out), 3);
}

#[test]
fn bad_arguments_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = standin(dir.path(), "german", "60");
    let out_dir = dir.path().join("o");
    for args in [
        vec!["evaluate", "--data", s(&data), "--explainer", "grad", "--metric", "nope", "--out", s(&out_dir)],
        vec!["evaluate", "--data", s(&data), "--explainer", "grad", "--n", "0", "--out", s(&out_dir)],
        vec!["evaluate", "--data", s(&data), "--explainer", "grad", "--k", "60", "--out", s(&out_dir)],
        vec!["evaluate", "--data", s(&data), "--explainer", "grad", "--width", "-1", "--metric", "pgi", "--out", s(&out_dir)],
        vec!["evaluate", "--data", s(&data), "--model", "mlp", "--explainer", "grad", "--metric", "fa", "--out", s(&out_dir)],
        vec!["fairwash", "--data", s(&data), "--protected", "gender", "--foil", "no_such_column", "--out", s(&out_dir)],
        vec!["fairwash", "--data", s(&data), "--protected", "gender", "--foil", "gender", "--out", s(&out_dir)],
        vec!["standin", "--kind", "adult", "--out", s(&out_dir)],
        vec!["no-such-command"],
    ] {
        let out = axe_eval(&args);
        assert_eq!(code(&out), 2, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

#[test]
fn empty_manifest_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.json");
    std::fs::write(&m, r#"{"datasets": []}"#).unwrap();
    let out = axe_eval(&["benchmark", "--manifest", s(&m), "--out", s(&dir.path().join("o"))]);
    assert_eq!(code(&out), 2);
}

#[test]
fn auc_report_has_one_curve_point_per_feature() {
    let dir = tempfile::tempdir().unwrap();
    let data = standin(dir.path(), "communities", "80");
    let out_dir = dir.path().join("o");
    let out = axe_eval(&[
        "evaluate", "--data", s(&data), "--explainer", "lime", "--metric", "axe,pgu,sa", "--n", "auc",
        "--explainer-samples", "50", "--samples", "5", "--out", s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for metric in ["axe", "pgu", "sa"] {
        let doc: ReportDocument = read_json(&out_dir.join(format!("{metric}.json"))).unwrap();
        assert_eq!(doc.n, TopN::Auc);
        let curve = doc.curve.unwrap();
        assert_eq!(curve.iter().map(|c| c.0).collect::<Vec<_>>(), (1..=7).collect::<Vec<_>>());
        let mean = curve.iter().map(|c| c.1).sum::<f64>() / 7.0;
        assert!((mean - doc.aggregate).abs() < 1e-12);
        assert_eq!(doc.per_point.len(), 80);
        let rows = read_report_csv(&out_dir.join(format!("{metric}_per_point.csv"))).unwrap();
        assert_eq!(rows.iter().map(|r| r.1).collect::<Vec<_>>(), doc.per_point);
    }
    let axe: ReportDocument = read_json(&out_dir.join("axe.json")).unwrap();
    assert_eq!(axe.k, Some(5));
    assert!(axe.cache.unwrap().size >= 1);
    assert_eq!(axe.config["seed"], 0);
}

#[test]
fn saved_model_and_explanations_reproduce_scores() {
    let dir = tempfile::tempdir().unwrap();
    let data = standin(dir.path(), "german", "80");
    let first = dir.path().join("a");
    let out = axe_eval(&["evaluate", "--data", s(&data), "--explainer", "smoothgrad", "--metric", "axe,pgi", "--n", "2", "--out", s(&first)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let second = dir.path().join("b");
    let out = axe_eval(&[
        "evaluate", "--data", s(&data), "--model", s(&first.join("model.json")),
        "--explainer", s(&first.join("explanations.csv")), "--metric", "axe,pgi", "--n", "2", "--out", s(&second),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for metric in ["axe", "pgi"] {
        let a: ReportDocument = read_json(&first.join(format!("{metric}.json"))).unwrap();
        let b: ReportDocument = read_json(&second.join(format!("{metric}.json"))).unwrap();
        assert_eq!(a.per_point, b.per_point);
    }
}

#[test]
fn seed_comes_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    let run = |p: &Path, seed: &str| {
        Command::new(env!("CARGO_BIN_EXE_axe-eval"))
            .args(["standin", "--kind", "compas", "--rows", "20", "--out", s(p)])
            .env("AXE_EVAL_SEED", seed)
            .status()
            .unwrap()
    };
    assert!(run(&a, "4").success() && run(&b, "4").success());
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(run(&b, "5").success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn fairwash_table_schema() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("o");
    let out = axe_eval(&["fairwash", "--standin", "german", "--rows", "120", "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(out_dir.join("table2.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), TABLE2_HEADER.join(","));
    let rows = read_table2_csv(&out_dir.join("table2.csv")).unwrap();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.dataset, "german");
        assert_eq!(r.model, "m_L (1 foil)");
        assert!(r.e_psi.is_none());
    }
    assert!(out_dir.join("fairwash.json").exists());
}

#[test]
fn experiment_commands_write_plot_data() {
    let dir = tempfile::tempdir().unwrap();
    let regions = dir.path().join("r");
    assert_eq!(code(&axe_eval(&["regions", "--resolution", "10", "--out", s(&regions)])), 0);
    for m in ["fa", "ra", "sa", "sra", "pra"] {
        let text = std::fs::read_to_string(regions.join(format!("fig3_{m}.csv"))).unwrap();
        assert_eq!(text.lines().next(), Some("i1,i2,value"));
        assert_eq!(text.lines().count(), 101);
    }
    let syn = dir.path().join("s");
    let out = axe_eval(&[
        "synthetic", "--points-per-cluster", "100", "--k-grid", "1,5", "--width-grid", "0.1,10",
        "--pgi-samples", "50", "--manifold-samples", "200", "--out", s(&syn),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let fig5 = std::fs::read_to_string(syn.join("fig5.csv")).unwrap();
    assert_eq!(fig5.lines().next(), Some("width,pgi_e_a,pgi_e_b,on_manifold_e_a,on_manifold_e_b"));
    assert_eq!(fig5.lines().count(), 3);
    let fig6 = std::fs::read_to_string(syn.join("fig6.csv")).unwrap();
    assert_eq!(fig6.lines().next(), Some("k,axe_e_a,axe_e_b"));
    assert_eq!(fig6.lines().count(), 3);
}

#[test]
fn benchmark_writes_one_report_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    standin(dir.path(), "german", "80");
    let m = dir.path().join("m.json");
    std::fs::write(
        &m,
        r#"{"datasets": [{"name": "g", "path": "german.csv"}], "models": ["lr", "nn"],
            "config": {"explainers": ["grad", "random"], "explainer_samples": 20, "perturb_samples": 5}}"#,
    )
    .unwrap();
    let out_dir = dir.path().join("o");
    let out = axe_eval(&["benchmark", "--manifest", s(&m), "--out", s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["g_lr.json", "g_nn.json", "fig7_g.csv", "fig8_g.csv", "benchmark.csv", "benchmark.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let nn = axe_eval::io::read_scores_csv(&out_dir.join("fig7_g.csv")).unwrap();
    assert!(nn.iter().all(|r| r.metric.is_agnostic()));
    assert_eq!(nn.len(), 2 * 3);
    let lr = axe_eval::io::read_scores_csv(&out_dir.join("fig8_g.csv")).unwrap();
    assert_eq!(lr.len(), 2 * 9);
}
