use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gdnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdnlab"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn fixture(name: &str) -> String {
    let p: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "core",
        "fixtures",
        "wl",
        &format!("{name}.graph"),
    ]
    .iter()
    .collect();
    p.to_string_lossy().into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn wl_check_reports_both_outcomes() {
    let o = gdnlab(&["wl-check", &fixture("c8"), &fixture("two_c4")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("indistinguishable"));
    let o = gdnlab(&["wl-check", &fixture("k3"), &fixture("p3")]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("distinguishable"));
}

#[test]
fn orbits_of_a_path() {
    let o = gdnlab(&["orbits", &fixture("p4")]);
    assert!(o.status.success());
    let out = stdout(&o);
    assert_eq!(out.lines().count(), 2, "{out}");
    assert!(out.contains("0 3") && out.contains("1 2"), "{out}");
}

#[test]
fn construct_both_modes() {
    let dir = tempfile::tempdir().unwrap();
    let targets = write(dir.path(), "t.txt", "1 2 3 4 5 6\n");
    for mode in ["uid", "rni"] {
        let o = gdnlab(&[
            "construct",
            "--mode",
            mode,
            "--graph",
            &fixture("c6"),
            "--targets",
            &targets,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        let mut labels: Vec<i64> = stdout(&o)
            .lines()
            .map(|l| l.split_whitespace().nth(2).unwrap().parse::<f64>().unwrap() as i64)
            .collect();
        labels.sort_unstable();
        assert_eq!(labels, [1, 2, 3, 4, 5, 6]);
    }
    let short = write(dir.path(), "short.txt", "1 2\n");
    let o = gdnlab(&[
        "construct",
        "--mode",
        "uid",
        "--graph",
        &fixture("c6"),
        "--targets",
        &short,
    ]);
    assert!(!o.status.success());
}

#[test]
fn run_then_aggregate() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "r.cfg",
        "env_name = drone_scatter\nmodel = random\nnum_epochs = 1\neval_episodes = 5\n",
    );
    for seed in ["1", "2"] {
        let out = dir.path().join("runs").join(seed);
        let o = gdnlab(&[
            "run",
            "--config",
            &cfg,
            "--override",
            &format!("seed={seed}"),
            "--override",
            &format!("out_dir={}", out.display()),
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        assert!(stdout(&o).contains("epoch 0:"));
        assert!(out.join("metrics.jsonl").is_file());
    }
    let runs = dir.path().join("runs");
    let o = gdnlab(&["aggregate", runs.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(runs.join("aggregate.csv")).unwrap();
    assert!(csv.starts_with("env,model,augmentation,metric,mean,ci,seeds\n"));
    assert!(csv.lines().skip(1).all(|l| l.ends_with(",2")), "{csv}");
}

#[test]
fn validation_errors_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let bad = [
        "env_name = drone_scatter\nbogus_key = 1\n",
        "env_name = drone_scatter\nlrate = -1\n",
        "env_name = nowhere\n",
        "env_name = drone_scatter\nnprocesses = 8\n",
        "no equals sign here\n",
    ];
    for (k, text) in bad.iter().enumerate() {
        let cfg = write(dir.path(), &format!("bad{k}.cfg"), text);
        let o = gdnlab(&["run", "--config", &cfg]);
        assert!(!o.status.success(), "{text}");
        assert!(!o.stderr.is_empty());
    }
    let cfg = write(
        dir.path(),
        "ok.cfg",
        "env_name = drone_scatter\nmodel = random\nnum_epochs = 0\n",
    );
    assert!(!gdnlab(&["run", "--config", &cfg, "--override", "seed"])
        .status
        .success());
    assert!(!gdnlab(&["orbits", "/nonexistent/graph"]).status.success());
    let empty = tempfile::tempdir().unwrap();
    assert!(!gdnlab(&["aggregate", empty.path().to_str().unwrap()])
        .status
        .success());
    let garbage = write(dir.path(), "g.graph", "3 0\n0 7\n");
    assert!(!gdnlab(&["orbits", &garbage]).status.success());
}
