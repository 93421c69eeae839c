use std::process::{Command, Output};

fn decchain(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_decchain"))
        .args(args)
        .env_remove("DECCHAIN_CACHE_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

const BARRIER: &str = r#"{"zeta":{"kind":"uniform","lo":1,"hi":3}}"#;

#[test]
fn models_lists_registry() {
    let o = decchain(&["models"]);
    assert!(o.status.success());
    let lines: Vec<serde_json::Value> = stdout(&o)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    assert!(lines.iter().any(|v| v["name"] == "beta_coalescent"));
}

#[test]
fn dist_of_simple_chain_is_uniform() {
    let o = decchain(&["dist", "--model", "simple_chain", "--n", "5"]);
    assert!(o.status.success());
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("k,pmf"));
    let rows: Vec<(u64, f64)> = lines
        .map(|l| {
            let (k, p) = l.split_once(',').unwrap();
            (k.parse().unwrap(), p.parse().unwrap())
        })
        .collect();
    assert_eq!(
        rows.iter().map(|r| r.0).collect::<Vec<_>>(),
        vec![1, 2, 3, 4, 5]
    );
    assert!(rows.iter().all(|r| (r.1 - 0.2).abs() < 1e-15));
}

#[test]
fn converge_is_byte_deterministic() {
    let args = [
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "50,100,200",
        "--p",
        "2",
    ];
    let a = decchain(&args);
    let b = decchain(&args);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    let out = stdout(&a);
    assert_eq!(
        out.lines().next(),
        Some("n,a_n,b_n,d_value,d_error_bound,coupling_gap,c_of_n,d_Tn_Nn")
    );
    assert_eq!(out.lines().count(), 4);
}

#[test]
fn mc_is_seed_deterministic_and_requires_seed() {
    let base = [
        "mc",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "100,200",
        "--mc-samples",
        "2000",
    ];
    let no_seed = decchain(&base);
    assert_eq!(no_seed.status.code(), Some(2));
    let mut with_seed = base.to_vec();
    with_seed.extend(["--seed", "5", "--format", "jsonl"]);
    let a = decchain(&with_seed);
    let b = decchain(&with_seed);
    assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
    assert_eq!(a.stdout, b.stdout);
    for line in stdout(&a).lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v["d_value"].as_f64().unwrap() >= 0.0);
        assert!(v["d_error_bound"].as_f64().unwrap().is_finite());
    }
}

#[test]
fn config_errors_exit_2() {
    let o = decchain(&["converge", "--model", "no_such_model", "--grid", "10"]);
    assert_eq!(o.status.code(), Some(2));
    let o = decchain(&[
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "10",
        "--clause",
        "C",
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = decchain(&[
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "10",
        "--p",
        "3",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn assert_mode_and_summary_file() {
    let dir = tempfile::tempdir().unwrap();
    let summary = dir.path().join("summary.json");
    let o = decchain(&[
        "converge",
        "--model",
        "simple_chain",
        "--grid",
        "100,1000",
        "--normalization",
        "moments",
        "--assert",
        "--summary",
        summary.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(4));
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(s["converged"], false);

    let o = decchain(&[
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "250,1000,4000",
        "--p",
        "2",
        "--assert",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
}

#[test]
fn timings_add_a_column() {
    let o = decchain(&[
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "50",
        "--timings",
    ]);
    assert!(o.status.success());
    assert!(stdout(&o).lines().next().unwrap().ends_with(",runtime_ms"));
}

#[test]
fn bounds_subcommand() {
    let o = decchain(&[
        "bounds",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--n",
        "300",
        "--p",
        "2",
        "--assert",
    ]);
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let out = stdout(&o);
    assert_eq!(out.lines().next(), Some("n,s_n,rstar_n,rho_n"));
    assert_eq!(out.lines().count(), 301);
    let o = decchain(&["bounds", "--model", "barrier_zero_jumps", "--n", "50"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn cache_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let args = [
        "converge",
        "--model",
        "barrier_walk",
        "--params",
        BARRIER,
        "--grid",
        "60,120",
        "--cache-dir",
        d,
    ];
    let first = decchain(&args);
    let second = decchain(&args);
    assert!(
        first.status.success(),
        "{}",
        String::from_utf8_lossy(&first.stderr)
    );
    assert_eq!(first.stdout, second.stdout);
    let uncached = decchain(&args[..args.len() - 2]);
    assert_eq!(first.stdout, uncached.stdout);

    let list = decchain(&["cache", "list", "--cache-dir", d]);
    assert!(list.status.success());
    let listed = stdout(&list);
    let models: Vec<&str> = listed
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(models, vec!["barrier_walk", "renewal"], "{listed}");

    let clean = decchain(&["cache", "clean", "--cache-dir", d]);
    assert!(clean.status.success());
    assert_eq!(stdout(&clean).lines().count(), 3);
    let after = decchain(&["cache", "list", "--cache-dir", d]);
    assert_eq!(stdout(&after).lines().count(), 1);

    let missing = Command::new(env!("CARGO_BIN_EXE_decchain"))
        .args(["cache", "list"])
        .env_remove("DECCHAIN_CACHE_DIR")
        .output()
        .unwrap();
    assert_eq!(missing.status.code(), Some(2));
}
