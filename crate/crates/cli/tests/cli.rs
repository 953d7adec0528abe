use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = "preset = \"desk\"\nn_antennas = 4\nm_elements = 4\n";

fn isac(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_isac")).args(args).current_dir(dir).output().expect("spawn isac")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

/// CSV body with the `wall_ms` column blanked.
fn without_timing(csv: &str) -> String {
    let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "wall_ms").unwrap();
    csv.lines()
        .map(|l| {
            let mut cells: Vec<&str> = l.split(',').collect();
            cells[col] = "";
            cells.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn one_value_one_seed_one_variant_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("sweep.toml"),
        format!("[sweep]\nparam = \"gamma\"\nvalues = [10]\nseeds = [3]\nvariants = [\"aris-isac\"]\n[scenario]\n{SMALL}"),
    )
    .unwrap();
    let o = isac(&["sweep", "--config", "sweep.toml", "--out", "res"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let raw = fs::read_to_string(dir.path().join("res/results.csv")).unwrap();
    let lines: Vec<&str> = raw.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0], "variant,param,value,seed,crb_rad2,crb_db,min_sinr_db,bs_power_w,ris_power_w,outer_iters,wall_ms,status");
    assert!(lines[1].starts_with("aris-isac,gamma,10.0,3,"));
    let median = fs::read_to_string(dir.path().join("res/results_median.csv")).unwrap();
    assert_eq!(median.lines().count(), 2);
    assert!(fs::read_to_string(dir.path().join("res/runs.jsonl")).unwrap().lines().count() >= 1);
}

#[test]
fn repeated_runs_agree_except_for_timing() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("s.toml"), SMALL).unwrap();
    for out in ["a", "b"] {
        let o = isac(&["run", "--config", "s.toml", "--seeds", "1,2", "--variant", "all", "--jobs", "2", "--out", out], dir.path());
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let a = fs::read_to_string(dir.path().join("a/results.csv")).unwrap();
    let b = fs::read_to_string(dir.path().join("b/results.csv")).unwrap();
    assert_eq!(a.lines().count(), 7);
    assert_eq!(without_timing(&a), without_timing(&b));
    assert_eq!(
        fs::read_to_string(dir.path().join("a/results_median.csv")).unwrap(),
        fs::read_to_string(dir.path().join("b/results_median.csv")).unwrap()
    );
}

#[test]
fn validate_accepts_an_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("empty.toml"), "").unwrap();
    let o = isac(&["validate", "--config", "empty.toml"], dir.path());
    assert!(o.status.success());
    let text = stdout(&o);
    assert!(text.contains("N=16 M=8 K=2"), "{text}");
}

#[test]
fn validate_lists_every_problem() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "a_max = 0.5\nk_users = -1\nbogus = 3\n").unwrap();
    let o = isac(&["validate", "--config", "bad.toml"], dir.path());
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.contains("a_max"), "{text}");
    assert!(text.contains("k_users"), "{text}");
    assert!(text.contains("bogus"), "{text}");
}

#[test]
fn validate_warns_when_the_ris_budget_is_too_small() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("w.toml"), "p_ris = \"-60 dBm\"\n").unwrap();
    let o = isac(&["validate", "--config", "w.toml"], dir.path());
    assert!(o.status.success());
    assert!(stdout(&o).contains("warning:"), "{}", stdout(&o));
}

#[test]
fn unknown_variant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let o = isac(&["run", "--variant", "nope"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
}

#[test]
fn sweep_requires_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let o = isac(&["sweep"], dir.path());
    assert!(!o.status.success());
}
