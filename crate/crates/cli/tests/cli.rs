use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn mcquad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mcquad"))
        .args(args)
        .env_remove("MCQUAD_SEED")
        .output()
        .expect("binary runs")
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_owned()
}

#[test]
fn bench_row_count_matches_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("results.csv");
    let o = mcquad(&[
        "bench", "--models", "m1,m2", "--dims", "1", "--sizes", "200", "--replicates", "2", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines[0], "model,dim,n,design,method,replicate,estimate,error");
    // 2 models x 1 dim x 1 size x 1 design x 3 methods x 2 replicates
    assert_eq!(lines.len() - 1, 12);
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count() - 1, 6);
}

#[test]
fn bench_output_is_reproducible() {
    let args = ["bench", "--models", "m3", "--dims", "2", "--sizes", "150", "--replicates", "2", "--seed", "9"];
    let a = mcquad(&args);
    let b = mcquad(&args);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    assert_eq!(mcquad(&["estimate", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(mcquad(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn invalid_bandwidth_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.csv", "x1,phi\n0.2,1\n0.4,1\n0.6,1\n");
    let o = mcquad(&["estimate", "--input", &input, "--bandwidth=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_phi_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.csv", "x1,pi\n0.2,1\n0.4,1\n");
    let o = mcquad(&["estimate", "--input", &input]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("phi"));
}

#[test]
fn all_densities_clamped_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.csv", "x1,phi\n0.1,1\n0.5,1\n0.9,1\n");
    let o = mcquad(&["estimate", "--input", &input, "--kernel", "box", "--bandwidth", "0.01", "--leave-one-out"]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn simulate_then_estimate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let design = dir.path().join("design.csv");
    let o = mcquad(&["simulate", "--design", "iid", "-n", "3000", "--seed", "3", "--out", design.to_str().unwrap()]);
    assert!(o.status.success());
    let text = fs::read_to_string(&design).unwrap();
    let mut body = String::from("x1,phi,pi\n");
    for line in data_lines(&text).iter().skip(1) {
        let x: f64 = line.parse().unwrap();
        body.push_str(&format!("{x},{},1\n", 2.0 * x));
    }
    let input = write(dir.path(), "in.csv", &body);
    let o = mcquad(&["estimate", "--input", &input, "--method", "ksc,mc"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    for r in json["reports"].as_array().unwrap() {
        let est = r["estimate"].as_f64().unwrap();
        assert!((est - 1.0).abs() < 0.1, "{} gave {est}", r["method"]);
    }
}

#[test]
fn seed_comes_from_the_environment() {
    let env = Command::new(env!("CARGO_BIN_EXE_mcquad"))
        .args(["simulate", "-n", "20"])
        .env("MCQUAD_SEED", "77")
        .output()
        .unwrap();
    let flag = mcquad(&["simulate", "-n", "20", "--seed", "77"]);
    let other = mcquad(&["simulate", "-n", "20", "--seed", "78"]);
    assert_eq!(env.stdout, flag.stdout);
    assert_ne!(flag.stdout, other.stdout);
}

#[test]
fn mixture_simulation_marks_regenerations() {
    let o = mcquad(&["simulate", "--design", "mixture", "-n", "200", "--lambda0", "1"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines[0], "x1,y,regen");
    // with lambda0 = 1 and A = Q every step regenerates
    assert!(lines[1..].iter().all(|l| l.split(',').nth(1) == Some("1")));
}

#[test]
fn regen_reports_json() {
    let o = mcquad(&["regen", "-n", "20000", "--lambda0", "0.5"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let json: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    let ratio = json["visit_ratio"].as_f64().unwrap();
    assert!((ratio - 0.5).abs() < 0.03);
}

#[test]
fn ocean_band_average_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let mut body = String::from("date,lat,lon,sst\n");
    for i in 0..200 {
        let lat = -60.0 + 120.0 * (i as f64 + 0.5) / 200.0;
        let lon = -170.0 + 340.0 * ((i * 37) % 200) as f64 / 200.0;
        body.push_str(&format!("2021-07-{:02},{lat},{lon},15.0\n", 1 + i % 28));
    }
    body.push_str("2021-07-01,95,0,15.0\n");
    let input = write(dir.path(), "obs.csv", &body);
    let out = dir.path().join("bands.csv");
    let o = mcquad(&[
        "ocean", "--input", &input, "--band", "-30:30", "--year", "2021", "--month", "7", "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    let lines = data_lines(&text);
    assert_eq!(lines[0], "year,month,band,n,average_c,bandwidth,clamped");
    let avg: f64 = lines[1].split(',').nth(4).unwrap().parse().unwrap();
    assert!((avg - 15.0).abs() < 1e-9, "constant field averaged to {avg}");

    let strict = mcquad(&["ocean", "--input", &input, "--all-months", "--strict"]);
    assert_eq!(strict.status.code(), Some(3));
}
