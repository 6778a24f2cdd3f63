//! Harness behavior: CLI exit codes and messages, file schemas, and
//! cross-checks that emitted aggregates are recomputable from the per-seed
//! files.

use std::path::{Path, PathBuf};
use std::process::Command;

use shaped_ucbvi::{cmd_run, cmd_sweep, resolve, FileConfig, Overrides};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_shaped-ucbvi"))
}

fn temp_dir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("shaped-ucbvi-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    dir
}

fn chain_config(out_dir: &Path, f: impl FnOnce(&mut Overrides)) -> shaped_ucbvi::ResolvedConfig {
    let mut o = Overrides {
        env: Some("chain11".into()),
        episodes: Some(120),
        seeds: Some(vec![1, 2, 3]),
        variants: Some(vec!["ucbvi".into(), "shaped".into()]),
        out_dir: Some(out_dir.to_path_buf()),
        ..Default::default()
    };
    f(&mut o);
    resolve(FileConfig::default(), o).unwrap()
}

#[test]
fn unknown_preset_exits_2_with_message() {
    let out = bin().args(["run", "--env", "gridzilla"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("gridzilla"), "{stderr}");
}

#[test]
fn unknown_variant_exits_2() {
    let out = bin()
        .args(["run", "--env", "chain11", "--variants", "qlearning"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = temp_dir("badcfg");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("bad.json");
    std::fs::write(&cfg, "{\n  \"beta\": nope\n}").unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "{stderr}");
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn bad_thread_env_exits_2() {
    let dir = temp_dir("threads");
    let out = bin()
        .args(["run", "--env", "chain11", "--episodes", "1", "--seeds", "1"])
        .arg("--out-dir")
        .arg(&dir)
        .env("SHAPED_UCBVI_THREADS", "lots")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn single_episode_run_emits_single_row() {
    let dir = temp_dir("t1");
    let out = bin()
        .args([
            "run",
            "--env",
            "chain11",
            "--episodes",
            "1",
            "--seeds",
            "9",
            "--variants",
            "ucbvi",
        ])
        .arg("--out-dir")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let csv = std::fs::read_to_string(dir.join("regret_ucbvi_seed9.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(
        lines[0],
        "episode,instant_regret,cumulative_regret,episodic_return,optimism_holds"
    );
    assert!(lines[1].starts_with("1,"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_file_plus_flag_override() {
    let dir = temp_dir("cfgmerge");
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("cfg.json");
    std::fs::write(
        &cfg,
        format!(
            r#"{{"env": "chain11", "episodes": 5, "seeds": [4], "variants": ["shaped"], "out_dir": "{}"}}"#,
            dir.join("out").display()
        ),
    )
    .unwrap();
    let out = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--episodes", "7"])
        .output()
        .unwrap();
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8_lossy(&out.stdout);
    let summary: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(summary["episodes"], 7);
    let csv = std::fs::read_to_string(dir.join("out/regret_shaped_seed4.csv")).unwrap();
    assert_eq!(csv.lines().count(), 8);
    let _ = std::fs::remove_dir_all(&dir);
}

fn parse_csv_column(path: &std::path::Path, column: usize) -> Vec<f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(column).unwrap().parse::<f64>().unwrap())
        .collect()
}

#[test]
fn aggregate_means_are_recomputable_from_per_seed_files() {
    let dir = temp_dir("agg");
    let cfg = chain_config(&dir, |_| {});
    cmd_run(&cfg).unwrap();
    for variant in ["ucbvi", "shaped"] {
        let per_seed: Vec<Vec<f64>> = [1u64, 2, 3]
            .iter()
            .map(|s| parse_csv_column(&dir.join(format!("regret_{variant}_seed{s}.csv")), 2))
            .collect();
        let mean_curve = parse_csv_column(&dir.join(format!("aggregate_{variant}.csv")), 1);
        for (i, &mean) in mean_curve.iter().enumerate() {
            let external = (per_seed[0][i] + per_seed[1][i] + per_seed[2][i]) / 3.0;
            assert!(
                (mean - external).abs() < 1e-9,
                "{variant} episode {}: aggregate {mean} vs recomputed {external}",
                i + 1
            );
        }
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn cumulative_regret_is_the_prefix_sum_of_instant() {
    let dir = temp_dir("prefix");
    let cfg = chain_config(&dir, |o| o.seeds = Some(vec![5]));
    cmd_run(&cfg).unwrap();
    let instant = parse_csv_column(&dir.join("regret_shaped_seed5.csv"), 1);
    let cumulative = parse_csv_column(&dir.join("regret_shaped_seed5.csv"), 2);
    let mut acc = 0.0;
    for (i, (&inst, &cum)) in instant.iter().zip(&cumulative).enumerate() {
        acc += inst;
        assert!(
            (acc - cum).abs() < 1e-6,
            "episode {}: {acc} vs {cum}",
            i + 1
        );
    }
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn degenerate_sweep_matches_run_aggregates() {
    let run_dir = temp_dir("branch-run");
    let sweep_dir = temp_dir("branch-sweep");
    let run_cfg = chain_config(&run_dir, |_| {});
    let sweep_cfg = chain_config(&sweep_dir, |_| {});
    cmd_run(&run_cfg).unwrap();
    cmd_sweep(&sweep_cfg).unwrap();
    for variant in ["ucbvi", "shaped"] {
        let from_run = std::fs::read(run_dir.join(format!("aggregate_{variant}.csv"))).unwrap();
        let from_sweep =
            std::fs::read(sweep_dir.join(format!("aggregate_{variant}_beta1.5_sigma0.csv")))
                .unwrap();
        assert_eq!(
            from_run, from_sweep,
            "{variant}: sweep cell differs from plain run"
        );
    }
    let _ = std::fs::remove_dir_all(&run_dir);
    let _ = std::fs::remove_dir_all(&sweep_dir);
}

#[test]
fn heatmap_covers_the_grid() {
    let dir = temp_dir("heat");
    let cfg = chain_config(&dir, |o| {
        o.env = Some("grid8".into());
        o.episodes = Some(50);
        o.seeds = Some(vec![1]);
        o.variants = Some(vec!["ucbvi".into()]);
    });
    cmd_run(&cfg).unwrap();
    let csv = std::fs::read_to_string(dir.join("heatmap_ucbvi_seed1.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 64);
    // Every episode contributes H+1 = 17 state visits.
    let total: u64 = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(2).unwrap().parse::<u64>().unwrap())
        .sum();
    assert_eq!(total, 50 * 17);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn plots_flag_emits_gnuplot_script() {
    let dir = temp_dir("plots");
    let cfg = chain_config(&dir, |o| {
        o.episodes = Some(5);
        o.seeds = Some(vec![1]);
        o.emit_plots = Some(true);
    });
    cmd_run(&cfg).unwrap();
    let script = std::fs::read_to_string(dir.join("plot_regret.gnuplot")).unwrap();
    assert!(script.contains("aggregate_ucbvi.csv"));
    assert!(script.contains("plot "));
    let _ = std::fs::remove_dir_all(&dir);
}
