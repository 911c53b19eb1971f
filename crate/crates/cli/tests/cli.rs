use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn gmmdr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmmdr"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> String {
    let path = dir.join(name);
    let p = path.to_str().unwrap().to_string();
    let mut args = vec!["-q", "simulate", "--seed", "3", "-o", &p];
    args.extend_from_slice(extra);
    let o = gmmdr(&args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    p
}

#[test]
fn every_subcommand_documents_its_flags() {
    let cases: [(&str, &[&str]); 6] = [
        ("fit", &["--input", "--label-column", "--standardize", "--seed", "--restarts", "--max-g", "--models", "--g"]),
        ("reduce", &["--model", "--out-dir", "--grid-size"]),
        ("select", &["--mode", "--max-rounds", "--output"]),
        ("simulate", &["--model", "--scenario", "--priors", "--highdim-k", "--n"]),
        ("evaluate", &["--model", "--output"]),
        ("benchmark", &["--reps", "--methods", "--jobs", "--replicates"]),
    ];
    for (cmd, flags) in cases {
        let o = gmmdr(&[cmd, "--help"]);
        assert_eq!(code(&o), 0);
        let text = stdout(&o);
        for f in flags {
            assert!(text.contains(f), "{cmd} --help lacks {f}");
        }
    }
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(code(&gmmdr(&["fit", "--input", "x.csv", "--no-such-flag"])), 1);
    assert_eq!(code(&gmmdr(&["frobnicate"])), 1);
    assert_eq!(code(&gmmdr(&["fit", "--input", "x.csv", "--models", "XYZ"])), 1);
    let o = gmmdr(&["simulate", "--model", "chang15", "--scenario", "noise", "--n", "50"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_input_exits_with_two() {
    let o = gmmdr(&["-q", "fit", "--input", "/definitely/not/here.csv"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("I/O"));
}

#[test]
fn numerical_failure_exits_with_three() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("flat.csv");
    fs::write(&path, "a,b\n1,2\n1,2\n1,2\n1,2\n1,2\n1,2\n").unwrap();
    let o = gmmdr(&["-q", "fit", "-i", path.to_str().unwrap(), "--models", "EII", "--g", "2"]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn simulate_is_deterministic_and_labelled() {
    let dir = tempfile::tempdir().unwrap();
    let a = simulate(dir.path(), "a.csv", &["--model", "model1_eee", "--scenario", "noise", "--n", "40"]);
    let b = simulate(dir.path(), "b.csv", &["--model", "model1_eee", "--scenario", "noise", "--n", "40"]);
    let text = fs::read_to_string(&a).unwrap();
    assert_eq!(text, fs::read_to_string(&b).unwrap());
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 11);
    assert_eq!(header[10], "class");
    assert_eq!(lines.count(), 40);
    assert!(Path::new(&format!("{a}.run.json")).exists());

    let o = gmmdr(&["-q", "simulate", "--model", "model2_vev", "--scenario", "noise+redundant", "--highdim-k", "2", "--n", "5"]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o).lines().next().unwrap().split(',').count(), 21);
}

#[test]
fn fit_then_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "m1.csv", &["--model", "model1_eee", "--n", "150"]);
    let archive = dir.path().join("m1").to_str().unwrap().to_string();
    let o = gmmdr(&["-q", "fit", "-i", &data, "--label-column", "class", "--models", "EEE", "--g", "3", "-o", &archive]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = stdout(&o);
    assert!(report.contains("model EEE with G = 3"));
    assert!(report.contains("adjusted Rand index"));

    let saved = format!("{archive}.gmmdr.json");
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&saved).unwrap()).unwrap();
    assert_eq!(json["config"]["subcommand"], "fit");
    assert_eq!(json["config"]["args"]["fit"]["g"], 3);

    let out = dir.path().join("unc.csv");
    let o = gmmdr(&["-q", "evaluate", "-i", &data, "--label-column", "class", "-m", &saved, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let fit_ari = report.lines().find(|l| l.starts_with("adjusted Rand")).unwrap();
    assert!(stdout(&o).contains(fit_ari));
    assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 151);
}

#[test]
fn fit_prints_a_bic_grid() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", &["--model", "model1_eee", "--n", "60"]);
    let o = gmmdr(&["-q", "fit", "-i", &data, "--label-column", "class", "--models", "EII,EEE", "--max-g", "3"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let header = text.lines().next().unwrap();
    assert!(header.contains("EII") && header.contains("EEE"));
    let rows: Vec<&str> = text.lines().skip(1).take_while(|l| !l.is_empty()).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[2].trim_start().starts_with('3'));
}

#[test]
fn reduce_and_select_write_exports() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "s.csv", &["--model", "synthetic_vvv", "--scenario", "noise", "--n", "150"]);
    let red = dir.path().join("red");
    let o = gmmdr(&[
        "-q", "reduce", "-i", &data, "--label-column", "class", "--models", "VVV", "--g", "3",
        "--out-dir", red.to_str().unwrap(), "--grid-size", "7",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["basis.json", "eigen_contrib.csv", "coefficients.csv", "projection.csv", "density_grid.csv", "run_config.json"] {
        assert!(red.join(f).exists(), "missing {f}");
    }
    assert_eq!(fs::read_to_string(red.join("density_grid.csv")).unwrap().lines().count(), 50);

    let sel = dir.path().join("sel");
    let archive = dir.path().join("final.gmmdr.json");
    let o = gmmdr(&[
        "-q", "select", "-i", &data, "--label-column", "class", "--max-g", "4", "--models", "EII,VVV",
        "-o", archive.to_str().unwrap(), "--out-dir", sel.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("outcome: "));
    assert!(sel.join("trace.json").exists());
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&archive).unwrap()).unwrap();
    assert!(json["iterations"].as_array().is_some_and(|a| !a.is_empty()));

    let o = gmmdr(&["-q", "reduce", "-i", &data, "--label-column", "class", "-m", archive.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn select_rejects_g_with_several_models() {
    let dir = tempfile::tempdir().unwrap();
    let data = simulate(dir.path(), "d.csv", &["--model", "model1_eee", "--n", "30"]);
    let o = gmmdr(&["-q", "select", "-i", &data, "--label-column", "class", "--g", "3"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn benchmark_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str, jobs: &str| {
        let summary = dir.path().join(format!("{tag}.csv"));
        let reps = dir.path().join(format!("{tag}-reps.csv"));
        let o = gmmdr(&[
            "-q", "benchmark", "--model", "model1_eee", "--n", "60", "--reps", "2", "--max-g", "3",
            "--models", "EII,EEE", "--jobs", jobs, "-o", summary.to_str().unwrap(),
            "--replicates", reps.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        (fs::read_to_string(summary).unwrap(), fs::read_to_string(reps).unwrap())
    };
    let a = run("a", "1");
    let b = run("b", "2");
    assert_eq!(a, b);
    assert_eq!(a.0.lines().count(), 4);
    assert_eq!(a.1.lines().count(), 7);
}

#[test]
fn single_replicate_marks_standard_error_absent() {
    let o = gmmdr(&[
        "-q", "benchmark", "--model", "model1_eee", "--n", "60", "--reps", "1", "--max-g", "2",
        "--models", "EEE", "--methods", "gmm",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let row = text.lines().find(|l| l.starts_with("gmm")).unwrap();
    assert!(row.contains("(NA)"), "{row}");
}
