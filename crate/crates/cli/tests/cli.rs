use std::path::Path;
use std::process::{Command, Output};

fn advpol(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_advpol"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout {}\nstderr {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn missing_config_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.json");
    let out = advpol(&[
        "train",
        "--config",
        path(&missing),
        "--out",
        path(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(path(&missing)));
}

#[test]
fn unknown_environment_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = advpol(&["make-victim", "--env", "chess", "--out", path(dir.path())]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("chess"));
}

#[test]
fn verify_bounds_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out_dir = dir.path().join(name);
        let out = advpol(&[
            "verify-bounds",
            "--env",
            "markov_rps",
            "--seed",
            "7",
            "--out",
            path(&out_dir),
        ]);
        ok(&out);
        (out.stdout, out_dir)
    };
    let (stdout_a, a) = run("a");
    let (stdout_b, b) = run("b");
    assert_eq!(stdout_a, stdout_b);
    for file in [
        "bounds.jsonl",
        "sensitivity.jsonl",
        "robustness.jsonl",
        "summary.tsv",
    ] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
}

#[test]
fn victim_train_evaluate_plot_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (vic_dir, run_dir) = (dir.path().join("victim"), dir.path().join("run"));
    ok(&advpol(&[
        "make-victim",
        "--env",
        "markov_rps",
        "--steps",
        "3000",
        "--out",
        path(&vic_dir),
    ]));
    let victim = vic_dir.join("victim.json");
    ok(&advpol(&[
        "train",
        "--env",
        "markov_rps",
        "--steps",
        "3000",
        "--victim",
        path(&victim),
        "--out",
        path(&run_dir),
    ]));
    let ckpt = std::fs::read_dir(&run_dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            p.file_name()
                .unwrap()
                .to_str()
                .unwrap()
                .starts_with("ckpt_")
        })
        .max_by_key(|p| {
            let name = p.file_stem().unwrap().to_str().unwrap().to_string();
            name.trim_start_matches("ckpt_").parse::<u64>().unwrap()
        })
        .unwrap();

    // The environment comes from the config.json written next to the checkpoint.
    let eval_dir = dir.path().join("eval");
    let out = advpol(&[
        "evaluate",
        "--adv",
        path(&ckpt),
        "--vic",
        path(&victim),
        "--episodes",
        "200",
        "--out",
        path(&eval_dir),
    ]);
    ok(&out);
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(eval_dir.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["episodes"], 200);
    let total = ["wins", "ties", "losses"]
        .iter()
        .map(|k| report[k].as_u64().unwrap())
        .sum::<u64>();
    assert_eq!(total, 200);

    let blind = advpol(&[
        "evaluate",
        "--adv",
        path(&ckpt),
        "--vic",
        path(&victim),
        "--episodes",
        "50",
        "--blind",
        "--no-imitator",
    ]);
    ok(&blind);

    let plots = dir.path().join("plots");
    ok(&advpol(&[
        "plot",
        "--metrics",
        path(&run_dir.join("metrics.csv")),
        "--out",
        path(&plots),
    ]));
    assert!(plots.join("win_rate.svg").exists());
    assert!(plots.join("imitation_gap.svg").exists());
}
