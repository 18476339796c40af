use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn warpdlm(args: &[&str], config: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpdlm"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn ok(o: &Output) {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p
}

fn data_rows(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count() - 1
}

const ZIP: &str = r#"
seed = 11

[simulate]
generator = "zip"
length = 30
"#;

#[test]
fn simulation_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "sim.toml", ZIP);
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&warpdlm(&["simulate"], &cfg, &a));
    ok(&warpdlm(&["simulate"], &cfg, &b));
    ok(&warpdlm(&["simulate", "--seed", "12"], &cfg, &c));
    let read = |d: &Path| fs::read_to_string(d.join("series.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_ne!(read(&a), read(&c));
    assert_eq!(data_rows(&a.join("series.csv")), 30);
    let summary = fs::read_to_string(a.join("run_summary.toml")).unwrap();
    assert!(summary.contains("config_hash") && summary.contains("seed = \"11\""));
}

#[test]
fn unknown_keys_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "bad.toml", "seed = 1\n[inference]\nmethd = \"exact\"\n");
    let o = warpdlm(&["filter"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("methd"));
}

#[test]
fn missing_data_file_exits_with_code_two() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", "data = \"nope.csv\"\n");
    assert_eq!(warpdlm(&["filter"], &cfg, dir.path()).status.code(), Some(2));
}

#[test]
fn exact_size_cap_is_enforced() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.toml", &format!("{ZIP}\n[inference]\nexact_cap = 10\n"));
    let o = warpdlm(&["smooth"], &cfg, dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("exact_cap"));
}

#[test]
fn smoothing_writes_every_draw() {
    let dir = TempDir::new().unwrap();
    fs::write(dir.path().join("y.csv"), "t,y1,y2\n1,0,3\n2,1,\n3,2,4\n4,0,5\n").unwrap();
    let cfg = write_config(
        dir.path(),
        "s.toml",
        "data = \"y.csv\"\n[warp]\ntransform = \"sqrt\"\n[inference]\nmethod = \"exact\"\ndraws = 50\n",
    );
    let out = dir.path().join("out");
    ok(&warpdlm(&["smooth"], &cfg, &out));
    // draws x T x p
    assert_eq!(data_rows(&out.join("draws.csv")), 50 * 4 * 2);
    assert_eq!(data_rows(&out.join("summary.csv")), 4 * 2);
    assert_eq!(data_rows(&out.join("predictive.csv")), 4 * 2);
}

#[test]
fn replay_is_byte_identical() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "f.toml",
        &format!("{ZIP}\n[inference]\nmethod = \"pf\"\nparticles = 200\ndraws = 20\n[forecast]\nhorizon = 3\n"),
    );
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        ok(&warpdlm(&["forecast"], &cfg, d));
    }
    for f in ["pmf.csv", "forecast_summary.csv", "forecast_draws.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_eq!(data_rows(&a.join("forecast_summary.csv")), 3);
}

#[test]
fn resumed_filter_matches_an_uninterrupted_run() {
    let dir = TempDir::new().unwrap();
    let rows: Vec<String> = (1..=24).map(|t| format!("{t},{}", (t * 7) % 5)).collect();
    fs::write(dir.path().join("full.csv"), format!("t,y1\n{}\n", rows.join("\n"))).unwrap();
    fs::write(dir.path().join("part.csv"), format!("t,y1\n{}\n", rows[..16].join("\n"))).unwrap();
    let body = |data: &str, resume: bool| {
        format!(
            "seed = 3\ndata = \"{data}\"\n[inference]\nparticles = 300\n[pf]\nsnapshot_every = 8\nresume = {resume}\n"
        )
    };
    let full = write_config(dir.path(), "full.toml", &body("full.csv", false));
    let part = write_config(dir.path(), "part.toml", &body("part.csv", false));
    let resume = write_config(dir.path(), "resume.toml", &body("full.csv", true));
    let (one, two) = (dir.path().join("one"), dir.path().join("two"));
    ok(&warpdlm(&["pf"], &full, &one));
    ok(&warpdlm(&["pf"], &part, &two));
    ok(&warpdlm(&["pf"], &resume, &two));
    assert_eq!(
        fs::read_to_string(one.join("steps.csv")).unwrap(),
        fs::read_to_string(two.join("steps.csv")).unwrap()
    );
    assert_eq!(
        fs::read_to_string(one.join("snapshot.txt")).unwrap(),
        fs::read_to_string(two.join("snapshot.txt")).unwrap()
    );
}

#[test]
fn zip_pipeline_runs_end_to_end() {
    let dir = TempDir::new().unwrap();
    let sim_cfg = write_config(dir.path(), "sim.toml", &ZIP.replace("length = 30", "length = 60"));
    let sim = dir.path().join("sim");
    ok(&warpdlm(&["simulate"], &sim_cfg, &sim));
    let cfg = write_config(
        dir.path(),
        "run.toml",
        r#"
seed = 5
data = "sim/series.csv"

[warp]
transform = "nonparametric"

[inference]
variances = "gibbs"
draws = 100
burnin = 50
particles = 300

[evaluate]
origin = 40
transforms = ["identity", "nonparametric"]
envelope_reps = 10
"#,
    );
    let fit = dir.path().join("fit");
    ok(&warpdlm(&["fit"], &cfg, &fit));
    assert!(fit.join("knots/knots_y1.txt").exists());
    assert_eq!(data_rows(&fit.join("variances.csv")), 2);

    let eval = dir.path().join("eval");
    ok(&warpdlm(&["evaluate"], &cfg, &eval));
    assert_eq!(data_rows(&eval.join("scores.csv")), 2 * 20);
    assert_eq!(data_rows(&eval.join("uniformity.csv")), 2);
    let cmp = fs::read_to_string(eval.join("comparison.csv")).unwrap();
    assert!(cmp.contains("nonparametric"));
    assert!(eval.join("rpit_plot_identity_y1.csv").exists());
}
