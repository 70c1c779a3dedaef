use std::path::Path;
use std::process::{Command, Output};

fn offclus(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offclus"))
        .args(args)
        .current_dir(dir)
        .env_remove("OFFCLUB_JOBS")
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = offclus(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert_eq!(stdout.lines().count(), 1, "one-line summary expected: {stdout}");
    stdout
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

#[test]
fn no_command_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = offclus(dir.path(), &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn unknown_and_invalid_flags_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(offclus(dir.path(), &["gen-env", "--bogus"]).status.code(), Some(2));
    assert_eq!(offclus(dir.path(), &["gen-env", "--d", "x"]).status.code(), Some(2));
    assert_eq!(offclus(dir.path(), &["run", "--env", "e.json"]).status.code(), Some(2));
}

#[test]
fn missing_input_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = offclus(dir.path(), &["run", "--env", "missing.json", "--sizes", "100"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing.json"));
}

#[test]
fn gen_env_defaults_match_experiment_scale() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["gen-env", "--d", "20", "--users", "1000", "--clusters", "10", "--sigma", "0.05", "--candidates", "20", "--seed", "7"]);
    let env: serde_json::Value = serde_json::from_str(&read(dir.path(), "env.json")).unwrap();
    assert_eq!(env["d"], 20);
    assert_eq!(env["num_users"], 1000);
    assert_eq!(env["num_clusters"], 10);
    assert_eq!(env["noise_sigma"], 0.05);
    assert_eq!(env["candidate_size"], 20);
    assert_eq!(env["thetas"].as_array().unwrap().len(), 10);
    assert_eq!(env["assignment"].as_array().unwrap().len(), 1000);
}

#[test]
fn pipeline_runs_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-env", "--d", "4", "--users", "12", "--clusters", "3", "--candidates", "8", "--seed", "3"]);
    ok(p, &["gen-data", "--env", "env.json", "--samples", "1200", "--logging", "linucb", "--seed", "2"]);
    assert_eq!(read(p, "data.jsonl").lines().count(), 600);
    assert_eq!(read(p, "eval.jsonl").lines().count(), 600);

    let from_files = [
        "run", "--env", "env.json", "--data", "data.jsonl", "--eval", "eval.jsonl", "--lambda-tilde", "4",
        "--algorithms", "off-c2lub,off-club,linucb-ind,club-component",
    ];
    ok(p, &from_files);
    let results = read(p, "results.csv");
    assert_eq!(results.lines().next().unwrap(), "algorithm,dataset_size,seed,mean_gap,stderr,n_queries,wall_time_ms");
    assert_eq!(results.lines().count(), 5);

    let generated = ["run", "--env", "env.json", "--sizes", "400,800", "--seeds", "2", "--lambda-tilde", "4", "--out", "gen.csv"];
    ok(p, &generated);
    let first = read(p, "gen.csv");
    let mut sequential = generated.to_vec();
    sequential.extend(["--jobs", "1"]);
    ok(p, &sequential);
    assert_eq!(read(p, "gen.csv"), first);
    assert_eq!(first.lines().count(), 1 + 3 * 2 * 2);

    ok(p, &["sweep-gamma", "--env", "env.json", "--samples", "800", "--seeds", "2", "--grid", "0,0.5,1", "--lambda-tilde", "4"]);
    let sweep = read(p, "sweep.csv");
    assert_eq!(sweep.lines().next().unwrap(), "gamma_hat,mean_gap,stderr,source");
    assert_eq!(sweep.lines().count(), 1 + 3 + 2);

    ok(p, &["report", "results.csv", "gen.csv", "--env", "env.json"]);
    let report = read(p, "report.csv");
    assert_eq!(report.lines().next().unwrap(), "algorithm,dataset_size,n_seeds,mean_gap,stderr,lower_bound");
    assert!(report.lines().skip(1).all(|l| !l.ends_with(',')));
}

#[test]
fn presets_and_auto_regularity_are_accepted() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    ok(p, &["gen-env", "--d", "3", "--users", "6", "--clusters", "2", "--candidates", "5"]);
    ok(p, &["run", "--env", "env.json", "--sizes", "300", "--seeds", "1", "--preset", "theory", "--out", "a.csv"]);
    ok(p, &["run", "--env", "env.json", "--sizes", "300", "--seeds", "1", "--auto-lambda-tilde", "--lambda-a", "1", "--sigma-a", "1", "--out", "b.csv"]);
    let out = offclus(p, &["run", "--env", "env.json", "--sizes", "300", "--auto-lambda-tilde"]);
    assert_eq!(out.status.code(), Some(2));
    let out = offclus(p, &["run", "--env", "env.json", "--sizes", "300", "--algorithms", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn ingest_builds_environment_from_ratings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut csv = String::from("user_id,item_id,rating\n");
    for u in 0..8 {
        for i in 0..6 {
            csv.push_str(&format!("u{u},i{i},{}\n", 1 + (u * i + u) % 5));
        }
    }
    std::fs::write(p.join("ratings.csv"), csv).unwrap();
    ok(p, &["ingest", "--ratings", "ratings.csv", "--d", "3", "--candidates", "4"]);
    let env: serde_json::Value = serde_json::from_str(&read(p, "env.json")).unwrap();
    assert_eq!(env["d"], 3);
    assert!(env["num_users"].as_u64().unwrap() >= 1);
    ok(p, &["gen-data", "--env", "env.json", "--samples", "100"]);
}
