use std::path::PathBuf;
use std::process::{Command, Output};

use wgds_cli::config::{Command as Cmd, Flags, RunConfig};

fn wgds(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wgds"))
        .args(args)
        .env("WGDS_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn tmp(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("wgds-cli-tests-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn data_rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

#[test]
fn solve_n8_matches_reference_row() {
    let o = wgds(&["solve", "--n", "8", "--rho", "1", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows.len(), 1);
    let want = [0.56159, 0.03842, 0.07539, 0.18953, 0.07511];
    for (got, want) in rows[0][3..].iter().zip(want) {
        let got: f64 = got.parse().unwrap();
        assert!((got - want).abs() / want < 0.02, "{got} vs {want}");
    }
}

#[test]
fn check_mode_passes_and_fails() {
    let ok = wgds(&["solve", "--n", "8", "--check"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stderr(&ok));
    let bad = wgds(&["solve", "--n", "8", "--stabilization-length", "diameter", "--check"]);
    assert_eq!(bad.status.code(), Some(4));
    assert!(stderr(&bad).contains("u0_D"), "{}", stderr(&bad));
}

#[test]
fn every_violation_is_listed_with_status_2() {
    let o = wgds(&["solve", "--alpha-d", "2", "--gamma-s", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let e = stderr(&o);
    assert!(e.contains("beta == alpha_d") && e.contains("gamma_s <= beta"), "{e}");
}

#[test]
fn unknown_config_key_is_rejected() {
    let p = tmp("unknown.toml");
    std::fs::write(&p, "n = 4\n[params]\nalpha = 1\n").unwrap();
    let o = wgds(&["solve", "--config", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("alpha"));
}

#[test]
fn flags_override_config_file() {
    let p = tmp("override.toml");
    std::fs::write(&p, "n = 4\nformat = \"csv\"\n[params]\nrho_s = 100.0\nrho_d = 100.0\n").unwrap();
    let o = wgds(&["solve", "--config", p.to_str().unwrap(), "--n", "2", "--rho", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows[0][0], "1");
    assert_eq!(rows[0][1], "2");
}

#[test]
fn empty_study_gives_header_only_csv() {
    let p = tmp("empty.toml");
    std::fs::write(&p, "n_list = []\n").unwrap();
    let o = wgds(&["convergence", "--config", p.to_str().unwrap(), "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let lines: Vec<&str> = out.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(lines, ["rho,n,h,strain_u_S,u0_S,p_S,u0_D,p_D"]);
}

fn strip_timestamp(json: &str) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert!(v.get("timestamp").is_some());
    v.as_object_mut().unwrap().remove("timestamp");
    v
}

#[test]
fn json_is_deterministic_apart_from_timestamp() {
    let args = ["convergence", "--n-list", "2,4", "--rho", "1,100", "--format", "json", "--seed", "3"];
    let a = stdout(&wgds(&args));
    let b = stdout(&wgds(&args));
    assert_eq!(strip_timestamp(&a), strip_timestamp(&b));
    let v = strip_timestamp(&a);
    assert_eq!(v["config"]["params"]["alpha_s"], 1);
    assert_eq!(v["results"][1]["params"]["rho_s"], 100.0);
    assert_eq!(v["results"][0]["table"]["rows"].as_array().unwrap().len(), 2);
}

#[test]
fn csv_and_pretty_carry_the_same_numbers() {
    let csv = stdout(&wgds(&["convergence", "--n-list", "2,4", "--format", "csv"]));
    let pretty = stdout(&wgds(&["convergence", "--n-list", "2,4", "--format", "pretty"]));
    let rows = data_rows(&csv);
    for row in rows.iter().filter(|r| !r[1].starts_with("rate")) {
        let shown: Vec<String> = row[3..]
            .iter()
            .map(|x| format!("{:.5e}", x.parse::<f64>().unwrap()))
            .collect();
        let line = pretty
            .lines()
            .find(|l| l.split_whitespace().next() == Some(row[1].as_str()))
            .unwrap();
        let cells: Vec<&str> = line.split_whitespace().skip(1).collect();
        assert_eq!(cells, shown);
    }
    assert!(csv.lines().any(|l| l.starts_with("1,rate-lsq-from-2,,")));
}

#[test]
fn colorability_of_a_mesh_file() {
    let mesh = wgds::mesh::build_rect_mesh(3, &wgds::mesh::DarcyStokesBox::default()).unwrap();
    let p = tmp("grid.wgmesh");
    std::fs::write(&p, wgds::mesh::write_wgmesh(&mesh)).unwrap();
    let o = wgds(&["colorability-check", "--mesh", p.to_str().unwrap(), "--check"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains(": colorable"));
}

#[test]
fn missing_mesh_file_is_a_config_error() {
    let o = wgds(&["colorability-check", "--mesh", "/nonexistent/x.wgmesh"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/nonexistent/x.wgmesh"));
}

#[test]
fn infsup_probe_checks_decrease() {
    let o = wgds(&["infsup-probe", "--n-list", "2,4", "--check", "--format", "csv"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let rows = data_rows(&stdout(&o));
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r[2].parse::<f64>().unwrap() > 0.1 && r[3] == "1"));
}

#[test]
fn output_file_is_written() {
    let p = tmp("out.csv");
    let o = wgds(&["solve", "--n", "2", "--format", "csv", "--out", p.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).is_empty());
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.contains("\"alpha_s\":1"));
    assert_eq!(data_rows(&text).len(), 1);
}

#[test]
fn bad_thread_count_is_a_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_wgds"))
        .args(["solve", "--n", "1"])
        .env("WGDS_THREADS", "many")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn solve_rejects_several_sizes() {
    let o = wgds(&["solve", "--n", "2,4"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_round_trip_is_idempotent() {
    let text = "n = 4\nrho = [0.01, 1.0]\nfit_from = 16\nformat = \"json\"\n[params]\nalpha_s = 2\ngamma_s = 1\nnu = 0.5\n[quad]\ncell_exactness = 12\n[solver]\nmode = \"iterative\"\n";
    let once = RunConfig::from_toml(text).unwrap();
    let again = RunConfig::from_toml(&once.to_toml()).unwrap();
    assert_eq!(once, again);
    assert_eq!(once.to_toml(), again.to_toml());
    assert_eq!(once.params.alpha_s, 2);
    assert_eq!(once.quad.edge_exactness, None);
}

#[test]
fn default_config_targets_rho_one_and_lowest_degrees() {
    let c = RunConfig::default();
    let ps = c.param_sets();
    assert_eq!(ps.len(), 1);
    assert_eq!((ps[0].alpha_s, ps[0].beta, ps[0].gamma_s, ps[0].rho_s), (1, 1, 0, 1.0));
    assert_eq!(c.n_list, [8, 16, 32, 64]);
    assert!(c.problems(Cmd::Convergence).is_empty());
}

#[test]
fn kappa_flag_forms() {
    let mut f = Flags {
        kappa: Some(vec![2.0, 0.5, 3.0]),
        ..Flags::default()
    };
    let c = f.apply(Cmd::Solve, RunConfig::default()).unwrap();
    assert_eq!(c.params.permeability.0, [[2.0, 0.5], [0.5, 3.0]]);
    f.kappa = Some(vec![1.0, 2.0]);
    assert!(f.apply(Cmd::Solve, RunConfig::default()).is_err());
}
