use std::path::Path;
use std::process::{Command, Output};

fn bcsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcsm"))
        .args(args)
        .env_remove("BCSM_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn simulate_marginal_writes_50_rows() {
    let o = bcsm(&[
        "simulate", "--generator", "marginal", "--sigma2", "1", "--tau", "-0.45", "--a", "25", "--n", "2",
        "--seed", "3",
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().next(), Some("cluster_a,y"));
    assert_eq!(text.lines().count(), 51);
    // Same seed, same bytes.
    let again = bcsm(&[
        "simulate", "--generator", "marginal", "--sigma2", "1", "--tau", "-0.45", "--a", "25", "--n", "2",
        "--seed", "3",
    ]);
    assert_eq!(again.stdout, o.stdout);
}

#[test]
fn simulate_then_fit_oneway() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = bcsm(&[
        "simulate", "--sigma2", "1", "--tau", "lb", "--a", "10", "--n", "5", "--seed", "1", "--out", p(&data),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let chains = dir.path().join("chains");
    let o = bcsm(&[
        "fit", "--model", "oneway", "--data", p(&data), "--iterations", "2000", "--burn-in", "500", "--seed", "7",
        "--chains", p(&chains),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("parameter,median,mean,trimmed_mean_10,sd,hpd_lo,hpd_hi,eti_lo,eti_hi,ess")
    );
    let params: Vec<&str> = lines.map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(params, ["sigma2", "tau", "mu"]);
    let tau_chain = std::fs::read_to_string(chains.join("tau.csv")).unwrap();
    assert_eq!(tau_chain.lines().count(), 2001);

    let o = bcsm(&[
        "fit", "--model", "oneway", "--data", p(&data), "--iterations", "2000", "--burn-in", "500", "--seed", "7",
        "--format", "json",
    ]);
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(json.as_array().unwrap().len(), 3);
}

#[test]
fn twoway_and_interaction_fits() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let o = bcsm(&[
        "simulate", "--sigma2", "1", "--a", "6", "--b", "4", "--n", "2", "--tau-a", "0.2", "--tau-b", "-0.3",
        "--seed", "2", "--out", p(&data),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let o = bcsm(&["fit", "--model", "twoway", "--data", p(&data), "--iterations", "600", "--burn-in", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("\ntau_b,"));

    // The interaction model needs an indicator column.
    let o = bcsm(&["fit", "--model", "interaction", "--data", p(&data), "--iterations", "600", "--burn-in", "200"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("`z`"), "{}", stderr(&o));

    let text = std::fs::read_to_string(&data).unwrap();
    let mut out = String::from("cluster_a,cluster_b,y,z\n");
    for (i, line) in text.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let flag = cols[1].parse::<usize>().unwrap() % 2 == 1 && i % 2 == 1;
        out += &format!("{line},{}\n", flag as u8);
    }
    let zdata = dir.path().join("z.csv");
    std::fs::write(&zdata, out).unwrap();
    let o = bcsm(&["fit", "--model", "interaction", "--data", p(&zdata), "--iterations", "600", "--burn-in", "200"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("\ntau_c,"));
}

#[test]
fn validation_errors_exit_1_and_name_the_flag() {
    let o = bcsm(&["fit", "--model", "oneway", "--data", "x.csv", "--iterations", "100", "--burn-in", "100"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--burn-in"));

    let o = bcsm(&["simulate", "--sigma2", "-1", "--tau", "0", "--a", "5", "--n", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--sigma2"));

    let o = bcsm(&["simulate", "--generator", "conditional", "--sigma2", "1", "--tau", "-0.1", "--a", "5", "--n", "2"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("tau"));

    let o = bcsm(&["fit", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("usage"));

    let o = bcsm(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("flat.csv");
    std::fs::write(&data, "cluster_a,y\n1,2\n1,2\n2,2\n2,2\n").unwrap();
    let o = bcsm(&["fit", "--model", "oneway", "--data", p(&data), "--iterations", "300", "--burn-in", "100"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));

    let o = bcsm(&["fit", "--model", "oneway", "--data", p(&dir.path().join("missing.csv"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.csv"));
}

#[test]
fn study_and_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("grid.json");
    std::fs::write(
        &config,
        r#"{"grid": [{"sigma2": 1, "tau": "lb", "a": 5, "n": 2},
                     {"sigma2": 1, "tau": 0.5, "a": 10, "n": 5}],
            "seed": 11, "gibbs": {"iterations": 400, "burn_in": 200}}"#,
    )
    .unwrap();
    let out1 = dir.path().join("r1.csv");
    let o = bcsm(&["study", "--config", p(&config), "--reps", "5", "--out", p(&out1), "--workers", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out3 = dir.path().join("r3.csv");
    let o = bcsm(&["study", "--config", p(&config), "--reps", "5", "--out", p(&out3), "--workers", "3"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = std::fs::read_to_string(&out1).unwrap();
    assert_eq!(text, std::fs::read_to_string(&out3).unwrap());
    assert_eq!(text.lines().next(), Some("estimator,sigma2,tau,a,n,reps,rmse,bias,coverage,failures"));
    assert_eq!(text.lines().count(), 5);

    let json = dir.path().join("merged.json");
    let o = bcsm(&["report", p(&out1), p(&out3), "--out", p(&json)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert_eq!(v["rows"].as_array().unwrap().len(), 4);

    let back = dir.path().join("back.csv");
    let o = bcsm(&["report", p(&json), "--out", p(&back)]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(std::fs::read_to_string(&back).unwrap(), text);

    let o = bcsm(&["study", "--config", p(&config), "--reps", "1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--reps"));
}

#[test]
fn bcsm_threads_must_be_positive() {
    let o = Command::new(env!("CARGO_BIN_EXE_bcsm"))
        .args(["study", "--reps", "2", "--iterations", "300", "--burn-in", "100"])
        .env("BCSM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("BCSM_THREADS"));
}
