use std::process::{Command, Output};

fn mildls(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mildls")).args(args).output().unwrap()
}

#[test]
fn verify_reports_every_case() {
    let out = mildls(&["verify"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 16);
    assert!(text.contains("16 of 16 cases passed"));
}

#[test]
fn flags_override_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("study.cfg");
    std::fs::write(&cfg, "# small study\nproblem = singular-mixed\nq = 1\nmax-dofs = 400\nprobe-max-dofs = 0\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = mildls(&["run", "--config", cfg.to_str().unwrap(), "--q", "0", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stem = "singular-mixed_q0_adaptive_matched";
    for ext in [".csv", ".gp", "_rates.txt"] {
        assert!(out_dir.join(format!("{stem}{ext}")).exists(), "{stem}{ext}");
    }
    let csv = std::fs::read_to_string(out_dir.join(format!("{stem}.csv"))).unwrap();
    let last = csv.lines().last().unwrap();
    let trial: usize = last.split(',').nth(1).unwrap().parse().unwrap();
    assert!(trial <= 400);
}

#[test]
fn unknown_problem_exits_with_code_two() {
    let out = mildls(&["run", "--problem", "nope"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope"));
}

#[test]
fn problems_lists_the_registry() {
    let out = mildls(&["problems"]);
    let text = String::from_utf8(out.stdout).unwrap();
    for name in ["singular-mixed", "poly-linear", "smooth"] {
        assert!(text.contains(name));
    }
}
