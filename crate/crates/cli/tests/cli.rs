use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use clap::Parser;
use switchavg_cli::error::{EXIT_CERTIFICATION, EXIT_CONFIG, EXIT_OK};
use switchavg_cli::run::{MANIFEST_FILE, RESULTS_FILE, TRAJECTORIES_FILE};
use switchavg_cli::{parse_config, run, Cli, Scenario};

const MINIMAL: &str = r#"
[chain]
rates = [1.0, 2.0]
jump = [[0.0, 1.0], [1.0, 0.0]]

[field]
kind = "linear"
a = [3.0, -3.0]

[initial]
u0 = 1.0
"#;

fn scenarios_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("scenario.toml");
    fs::write(&p, text).unwrap();
    p
}

fn config_from(args: &[&str]) -> switchavg_cli::Result<switchavg_cli::RunConfig> {
    let mut full = vec!["switchavg"];
    full.extend_from_slice(args);
    let (task, common) = Cli::try_parse_from(full).unwrap().command.split();
    parse_config(task, common)
}

fn binary(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_switchavg")).args(args).output().unwrap()
}

#[test]
fn minimal_scenario_gets_documented_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let cfg = config_from(&["simulate", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .unwrap();
    let spec = &cfg.resolved.spec;
    assert_eq!(spec.paths, 2000);
    assert_eq!(spec.horizon, 1.0);
    assert_eq!(spec.epsilons, vec![0.1, 0.01, 0.001]);
    let st = &cfg.scenario.study;
    assert_eq!(st.paths, Some(2000));
    assert_eq!(st.horizon, Some(1.0));
    assert_eq!(st.epsilon.as_deref(), Some(&[0.1, 0.01, 0.001][..]));
    assert_eq!(cfg.scenario.chain.labels.as_deref(), Some(&["s1".to_string(), "s2".to_string()][..]));
    assert_eq!(cfg.scenario.chain.initial_state.as_deref(), Some("s1"));
}

#[test]
fn every_default_is_echoed_in_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), MINIMAL);
    let out = dir.path().join("out");
    let cfg =
        config_from(&["chain-analyze", "--scenario", p.to_str().unwrap(), "--out", out.to_str().unwrap()])
            .unwrap();
    run(&cfg).unwrap();
    let manifest = fs::read_to_string(out.join(MANIFEST_FILE)).unwrap();
    for key in [
        "labels",
        "initial_state",
        "growth",
        "lipschitz",
        "horizon",
        "epsilon",
        "paths",
        "seed",
        "max_step",
        "deltas",
        "levels",
        "allow_uncertified",
        "region",
        "points",
        "u_min",
        "u_max",
        "phi",
        "version",
        "subcommand",
    ] {
        assert!(
            manifest.lines().any(|l| l.starts_with(&format!("{key} ="))),
            "`{key}` missing from manifest:\n{manifest}"
        );
    }
    let reloaded = Scenario::load(&out.join(MANIFEST_FILE)).unwrap();
    let mut expected = cfg.scenario.clone();
    expected.manifest = None;
    assert_eq!(reloaded, expected);
}

#[test]
fn negative_rate_names_the_state() {
    let dir = tempfile::tempdir().unwrap();
    let text = MINIMAL.replace("rates = [1.0, 2.0]", "rates = [1.0, -2.0]\nlabels = [\"calm\", \"storm\"]");
    let p = write_scenario(dir.path(), &text);
    let err = config_from(&["simulate", "--scenario", p.to_str().unwrap(), "--out", "unused"]).unwrap_err();
    assert_eq!(err.exit_code(), EXIT_CONFIG);
    let msg = err.to_string();
    assert!(msg.contains("storm") && msg.contains("-2"), "{msg}");
}

#[test]
fn epsilon_flag_overrides_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_scenario(dir.path(), MINIMAL);
    let cfg = config_from(&[
        "deviation-study",
        "--scenario",
        p.to_str().unwrap(),
        "--out",
        "unused",
        "--epsilon",
        "0.5",
    ])
    .unwrap();
    assert_eq!(cfg.resolved.spec.epsilons, vec![0.5]);
    assert_eq!(cfg.scenario.study.epsilon, Some(vec![0.5]));

    let cfg = config_from(&[
        "deviation-study",
        "--scenario",
        p.to_str().unwrap(),
        "--out",
        "unused",
        "--epsilon",
        "0.5,0.25",
        "--paths",
        "7",
        "--seed",
        "9",
        "--max-step",
        "0.002",
    ])
    .unwrap();
    let spec = &cfg.resolved.spec;
    assert_eq!(spec.epsilons, vec![0.5, 0.25]);
    assert_eq!((spec.paths, spec.seed, spec.max_step), (7, 9, 0.002));
}

#[test]
fn unknown_keys_are_rejected() {
    let text = MINIMAL.replace("kind = \"linear\"", "kind = \"linear\"\nslope = 2.0");
    let err = Scenario::from_toml(&text).unwrap_err();
    assert!(err.to_string().contains("slope"), "{err}");

    let text = format!("{MINIMAL}\n[extras]\nx = 1\n");
    assert!(Scenario::from_toml(&text).is_err());
}

#[test]
fn parse_errors_report_the_line() {
    let text = MINIMAL.replace("u0 = 1.0", "u0 = ");
    let msg = Scenario::from_toml(&text).unwrap_err().to_string();
    assert!(msg.contains("line"), "{msg}");
}

#[test]
fn invalid_values_name_their_section() {
    for (from, to, needle) in [
        ("kind = \"linear\"", "kind = \"cubic\"", "field.kind"),
        ("a = [3.0, -3.0]", "a = [3.0]", "field"),
        ("u0 = 1.0", "u0 = [1.0, 2.0]", "study"),
        ("jump = [[0.0, 1.0], [1.0, 0.0]]", "jump = [[0.0, 1.0]]", "chain.jump"),
    ] {
        let text = MINIMAL.replace(from, to);
        let err = Scenario::from_toml(&text).unwrap().materialize().unwrap_err();
        assert_eq!(err.exit_code(), EXIT_CONFIG);
        assert!(err.to_string().contains(needle), "{needle}: {err}");
    }
}

#[test]
fn residual_check_csv_is_within_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario = scenarios_dir().join("two_state_linear.toml");
    let o =
        binary(&["residual-check", "--scenario", scenario.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join(RESULTS_FILE)).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["epsilon", "u", "state", "lhs", "rhs", "residual"]);
    let mut n = 0;
    for rec in r.records() {
        let rec = rec.unwrap();
        let residual: f64 = rec[5].parse().unwrap();
        assert!(residual.abs() <= 1e-10, "{rec:?}");
        n += 1;
    }
    assert_eq!(n, 3 * 201 * 2);
}

#[test]
fn deviation_study_writes_one_row_per_epsilon_and_statistic() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario = scenarios_dir().join("two_state_linear.toml");
    let o = binary(&[
        "deviation-study",
        "--scenario",
        scenario.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "50",
        "--dump-paths",
        "2",
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join(RESULTS_FILE)).unwrap();
    let mut keys = Vec::new();
    for rec in r.records() {
        let rec = rec.unwrap();
        assert_eq!(&rec[5], "true");
        keys.push((rec[0].to_string(), rec[1].to_string(), rec[2].to_string()));
    }
    let unique: std::collections::BTreeSet<_> = keys.iter().cloned().collect();
    assert_eq!(unique.len(), keys.len());
    for eps in ["0.1", "0.01", "0.001"] {
        assert!(keys.iter().any(|k| k.0 == eps && k.1 == "deviation_mean"));
    }

    let mut t = csv::Reader::from_path(out.join(TRAJECTORIES_FILE)).unwrap();
    assert_eq!(t.headers().unwrap(), vec!["epsilon", "path", "t", "regime", "u_1"]);
    let first = t.records().next().unwrap().unwrap();
    assert_eq!((&first[2], &first[3], &first[4]), ("0.0", "up", "1.0"));
}

#[test]
fn inadmissible_field_exits_with_certification_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let scenario = scenarios_dir().join("logistic_outside.toml");
    let s = scenario.to_str().unwrap();
    let o = binary(&["deviation-study", "--scenario", s, "--out", out.to_str().unwrap(), "--paths", "10"]);
    assert_eq!(o.status.code(), Some(EXIT_CERTIFICATION));
    assert!(String::from_utf8_lossy(&o.stderr).contains("certification"));

    let o = binary(&[
        "deviation-study",
        "--scenario",
        s,
        "--out",
        out.to_str().unwrap(),
        "--paths",
        "10",
        "--allow-uncertified",
    ]);
    assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
    let body = fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
    assert!(body.lines().skip(1).all(|l| l.ends_with(",false")));
}

#[test]
fn bad_invocations_exit_with_config_code() {
    let o = binary(&["deviation-study", "--scenario", "/nonexistent.toml", "--out", "/tmp/x"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let o = binary(&["no-such-subcommand"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
    let scenario = scenarios_dir().join("two_state_linear.toml");
    let o =
        binary(&["simulate", "--scenario", scenario.to_str().unwrap(), "--out", "/tmp/x", "--paths", "abc"]);
    assert_eq!(o.status.code(), Some(EXIT_CONFIG));
}

#[test]
fn manifest_round_trip_reproduces_csv() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let second = dir.path().join("second");
    let scenario = scenarios_dir().join("bounded_trig.toml");
    for sub in ["ccc-study", "simulate", "chain-analyze"] {
        let o = binary(&[
            sub,
            "--scenario",
            scenario.to_str().unwrap(),
            "--out",
            first.to_str().unwrap(),
            "--paths",
            "40",
            "--seed",
            "123",
        ]);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
        let manifest = first.join(MANIFEST_FILE);
        let o = binary(&[sub, "--scenario", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(EXIT_OK), "{}", String::from_utf8_lossy(&o.stderr));
        let a = fs::read(first.join(RESULTS_FILE)).unwrap();
        let b = fs::read(second.join(RESULTS_FILE)).unwrap();
        assert!(a == b, "{sub}: CSV differs after manifest round trip");
    }
}

#[test]
fn csv_floats_round_trip_exactly() {
    for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt(), 1e-300, 123456789.125, -0.0] {
        let s = switchavg_cli::run::fmt_f64(v);
        assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
    }
}
