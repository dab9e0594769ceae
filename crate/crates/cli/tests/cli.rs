use std::path::Path;
use std::process::{Command, Output};

fn asv(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_asv"))
        .args(args)
        .current_dir(cwd)
        .env_remove("ASV_OUTPUT_ROOT")
        .output()
        .expect("spawn asv")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const TINY: [&str; 8] = [
    "--set",
    "ppo.max_iterations=3",
    "--set",
    "ppo.num_envs=8",
    "--set",
    "ppo.batch_size=128",
    "--set",
    "ppo.minibatches=2",
];

fn train_tiny(dir: &Path, out: &str, seed: &str) -> Output {
    let mut args = vec!["train", "--no-eval", "--seed", seed, "--jobs", "1", "--out", out];
    args.extend_from_slice(&TINY);
    asv(&args, dir)
}

#[test]
fn help_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    for args in [&["--help"][..], &["train", "--help"], &["sweep", "--help"], &["report", "--help"]] {
        let o = asv(args, tmp.path());
        assert!(o.status.success(), "{args:?}");
        assert!(String::from_utf8_lossy(&o.stdout).contains("Usage"));
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(&["train", "--bogus"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn missing_config_names_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(&["train", "--config", "does/not/exist.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("does/not/exist.toml"), "{}", stderr(&o));
}

#[test]
fn bad_override_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(&["train", "--set", "ppo.learning_rat=1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learning_rat"));
    let o = asv(&["train", "--set", "ppo.learning_rate=-1"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn unknown_axis_lists_valid_ones() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(&["sweep", "--axis", "mass"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("com") && err.contains("nr"), "{err}");
}

#[test]
fn rl_sweep_without_checkpoint_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(&["sweep", "--axis", "com", "--controllers", "rl"], tmp.path());
    assert!(!o.status.success());
    assert!(stderr(&o).contains("checkpoint"));
}

#[test]
fn tiny_training_writes_artifacts_and_is_reproducible() {
    let tmp = tempfile::tempdir().unwrap();
    let a = train_tiny(tmp.path(), "a", "7");
    assert!(a.status.success(), "{}", stderr(&a));
    let b = train_tiny(tmp.path(), "b", "7");
    assert!(b.status.success(), "{}", stderr(&b));

    let curve = std::fs::read_to_string(tmp.path().join("a/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
    assert!(tmp.path().join("a/config.resolved.toml").exists());

    let ca = std::fs::read(tmp.path().join("a/policy.ckpt")).unwrap();
    let cb = std::fs::read(tmp.path().join("b/policy.ckpt")).unwrap();
    assert_eq!(ca, cb);

    let c = train_tiny(tmp.path(), "c", "8");
    assert!(c.status.success());
    assert_ne!(ca, std::fs::read(tmp.path().join("c/policy.ckpt")).unwrap());
}

#[test]
fn output_root_env_prefixes_relative_dirs() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().join("root");
    let mut args = vec!["train", "--no-eval", "--out", "r"];
    args.extend_from_slice(&TINY);
    let o = Command::new(env!("CARGO_BIN_EXE_asv"))
        .args(&args)
        .current_dir(tmp.path())
        .env("ASV_OUTPUT_ROOT", &root)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(root.join("r/policy.ckpt").exists());
}

const HEADER: &str =
    "controller,sweep_axis,sweep_value,goal_d,goal_bearing_deg,v0,seed,success,T,T_norm,delta_d,E_acc_norm,solver_degraded_steps";

fn csv(rows: &[(&str, f64, f64, f64)]) -> String {
    let mut s = format!("{HEADER}\n");
    for (i, (ctl, value, t_norm, e)) in rows.iter().enumerate() {
        let d = 3.0 + i as f64;
        s.push_str(&format!(
            "{ctl},com,{value},{d},0,0,0,true,{},{t_norm},0.2,{e},0\n",
            t_norm * d
        ));
    }
    s
}

#[test]
fn report_on_identical_inputs_shows_zero_change() {
    let tmp = tempfile::tempdir().unwrap();
    let text = csv(&[("rl", 0.0, 1.1, 30.0), ("mpc", 0.0, 1.0, 40.0)]);
    std::fs::write(tmp.path().join("a.csv"), &text).unwrap();
    std::fs::write(tmp.path().join("b.csv"), &text).unwrap();
    let o = asv(&["report", "a.csv", "b.csv", "--out", "rep"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    let pct: Vec<&str> = out.lines().skip(2).map(|l| l.rsplit('|').next().unwrap().trim()).collect();
    assert_eq!(pct.len(), 6);
    assert!(pct.iter().all(|p| *p == "0.00"), "{out}");
    assert!(tmp.path().join("rep/degradation.json").exists());
    assert!(tmp.path().join("rep/success_rate.svg").exists());
}

#[test]
fn report_single_file_uses_baseline_value() {
    let tmp = tempfile::tempdir().unwrap();
    let mut text = csv(&[("rl", 0.0, 1.0, 30.0)]);
    text.push_str(csv(&[("rl", 0.125, 1.25, 30.0)]).lines().nth(1).unwrap());
    text.push('\n');
    std::fs::write(tmp.path().join("s.csv"), &text).unwrap();
    let o = asv(&["report", "s.csv", "--baseline", "0"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("com = 0.125"), "{out}");
    assert!(out.contains("25.00"), "{out}");

    let o = asv(&["report", "s.csv", "--baseline", "0.5"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_rejects_mismatched_goal_sets() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("a.csv"), csv(&[("rl", 0.0, 1.0, 30.0)])).unwrap();
    std::fs::write(tmp.path().join("b.csv"), csv(&[("rl", 0.1, 1.0, 30.0), ("rl", 0.1, 1.0, 30.0)])).unwrap();
    let o = asv(&["report", "a.csv", "b.csv"], tmp.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn mpc_sweep_over_one_value_covers_the_grid() {
    let tmp = tempfile::tempdir().unwrap();
    let o = asv(
        &["sweep", "--axis", "nr", "--controllers", "mpc", "--set", "sweep.nr_values=[5.0]", "--out", "s"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(tmp.path().join("s/sweep_nr.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 399);
    assert!(tmp.path().join("s/sweep_nr_summary.json").exists());

    let o = asv(&["plot", "--metrics", "s/sweep_nr.csv", "--out", "p"], tmp.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(tmp.path().join("p/t_norm.svg").exists());
}
