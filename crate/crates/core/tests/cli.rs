use std::path::Path;
use std::process::{Command, Output};

use hte_svm::effects::SCALE_NOTE;

fn hte(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hte-svm")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

/// 20 rows, two binary factors and one covariate.
const TOY: &str = "\
y,a,b,x
1,1,0,0.5
0,0,0,-1.2
1,1,1,0.3
0,0,1,0.9
1,1,0,1.1
0,0,0,-0.4
1,0,1,0.2
0,1,1,-0.8
1,1,0,0.0
0,0,0,1.5
1,1,1,-0.3
0,0,1,-1.1
1,1,0,0.7
1,0,0,0.1
0,1,1,-1.4
0,0,1,0.6
1,1,0,-0.2
0,0,0,-0.9
1,1,1,1.3
0,0,1,0.4
";

fn toy(dir: &Path) -> String {
    let p = dir.join("toy.csv");
    std::fs::write(&p, TOY).unwrap();
    p.to_str().unwrap().to_string()
}

fn fit_args<'a>(data: &'a str, out: &'a str) -> Vec<&'a str> {
    vec![
        "fit",
        "--data",
        data,
        "--outcome",
        "y",
        "--treatment",
        "a",
        "--treatment",
        "b",
        "--covariates",
        "x",
        "--output",
        out,
        "--grid-min",
        "-6",
        "--grid-max",
        "4",
    ]
}

#[test]
fn toy_fit_and_effects_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();
    let mut args = fit_args(&data, out_s);
    args.push("--trace");
    let r = hte(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    for f in ["fit.json", "coefficients.csv", "manifest.json", "trace.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let doc: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("fit.json")).unwrap()).unwrap();
    let fit = &doc["fit"];
    assert_eq!(fit["n"], 20);
    assert_eq!(fit["beta"].as_array().unwrap().len(), 3);
    let lz = fit["log_lambda_z"].as_f64().unwrap();
    assert!((-6.0..=4.0).contains(&lz));

    let fit_path = out.join("fit.json");
    let r = hte(&[
        "effects",
        "--data",
        &data,
        "--fit",
        fit_path.to_str().unwrap(),
        "--output",
        out_s,
        "--top-k",
        "3",
        "--unit-cates",
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let ranked = std::fs::read_to_string(out.join("ranked_treatments.csv")).unwrap();
    assert_eq!(ranked.lines().next().unwrap(), format!("# {SCALE_NOTE}"));
    assert_eq!(ranked.lines().count(), 2 + 3);
    let groups = std::fs::read_to_string(out.join("group_extremes.csv")).unwrap();
    assert_eq!(groups.lines().count(), 2 + 3 * 2 * 3);
    let units = std::fs::read_to_string(out.join("unit_cates.csv")).unwrap();
    assert_eq!(units.lines().count(), 2 + 20 * 3);
    assert!(out.join("effects.json").exists());
}

#[test]
fn fixed_penalties_skip_tuning() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("fixed");
    let mut args = fit_args(&data, out.to_str().unwrap());
    args.extend(["--lambda-z", "1e8", "--lambda-v", "1e8"]);
    let r = hte(&args);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let coef = std::fs::read_to_string(out.join("coefficients.csv")).unwrap();
    // Comment and header only: nothing survives such penalties.
    assert_eq!(coef.lines().count(), 2);
}

#[test]
fn config_file_supplies_roles() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        format!("data = {data}\noutcome = y\ntreatment = a, b\ncovariates = x\ngrid_min = -4\ngrid_max = 2\n"),
    )
    .unwrap();
    let out = dir.path().join("cfg_out");
    let r = hte(&[
        "fit",
        "--config",
        cfg.to_str().unwrap(),
        "--output",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
}

#[test]
fn configuration_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();

    let mut args = fit_args(&data, out_s);
    args[4] = "missing";
    let r = hte(&args);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("missing"));

    let r = hte(&["simulate", "--replicates", "1", "--output", out_s]);
    assert_eq!(code(&r), 2);
    assert!(String::from_utf8_lossy(&r.stderr).contains("seed"));

    let r = hte(&["payoff", "--seed", "1", "--scenario", "scenario-1", "--output", out_s]);
    assert_eq!(code(&r), 2);

    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "outcome y\n").unwrap();
    let r = hte(&["fit", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&r), 2);

    assert_eq!(code(&hte(&["no-such-command"])), 2);
}

#[test]
fn data_errors_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "y,a,b,x\n1,1,0,0.5\n0,0,0,abc\n").unwrap();
    let out = dir.path().join("o");
    let r = hte(&fit_args(bad.to_str().unwrap(), out.to_str().unwrap()));
    assert_eq!(code(&r), 3);
    let msg = String::from_utf8_lossy(&r.stderr);
    assert!(msg.contains("'x'") && msg.contains("row 2"), "{msg}");

    let nonbinary = dir.path().join("nb.csv");
    std::fs::write(&nonbinary, TOY.replacen("\n1,1,0,0.5", "\n2,1,0,0.5", 1)).unwrap();
    let r = hte(&fit_args(nonbinary.to_str().unwrap(), out.to_str().unwrap()));
    assert_eq!(code(&r), 3);
}

#[test]
fn fit_schema_mismatch_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let data = toy(dir.path());
    let out = dir.path().join("o");
    let out_s = out.to_str().unwrap();
    assert_eq!(code(&hte(&fit_args(&data, out_s))), 0);

    // Same columns, but level "1" of b never occurs: the Z schema changes.
    let other = dir.path().join("other.csv");
    let text: String = TOY
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                format!("{l}\n")
            } else {
                format!("{},0,{}\n", &l[..3], &l[6..])
            }
        })
        .collect();
    std::fs::write(&other, text).unwrap();
    let fit = out.join("fit.json");
    let r = hte(&[
        "effects",
        "--data",
        other.to_str().unwrap(),
        "--fit",
        fit.to_str().unwrap(),
        "--output",
        out_s,
    ]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
}
