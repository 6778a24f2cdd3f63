//! Command implementations. Each command fans its independent runs out to
//! a worker pool, then writes every output file in a fixed order so that
//! identical configurations yield byte-identical directories.

use rayon::prelude::*;
use shaped_ucbvi_core::{
    best_report, build_sandwiched, corrupt, delta_sweep, exact_optimal_values, run, run_online,
    BetaGrid, RegretTrace, RunRng, ShapingTable, Variant, VisitWindow,
};

use crate::config::ResolvedConfig;
use crate::output::{
    aggregate_csv, heatmap_csv, mean_stderr, regret_csv, regret_plot_script, write_file, write_json,
};
use crate::HarnessError;

// Fixed stream tags: the per-seed root splits into independent substreams
// so adding a consumer never shifts another one.
const RUN_STREAM: u64 = 0;
const ONLINE_STREAM: u64 = 7;
const BASELINE_STREAM_BASE: u64 = 100;
const SHAPING_STREAM: u64 = 1000;
const CORRUPT_STREAM: u64 = 1001;

/// Worker pool sized by `SHAPED_UCBVI_THREADS` when set.
pub fn worker_pool() -> Result<rayon::ThreadPool, HarnessError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("SHAPED_UCBVI_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => builder = builder.num_threads(n),
            _ => {
                return Err(HarnessError::Config(format!(
                    "SHAPED_UCBVI_THREADS must be a positive integer (got '{v}')"
                )))
            }
        }
    }
    builder
        .build()
        .map_err(|e| HarnessError::Runtime(e.to_string()))
}

fn runtime<E: std::fmt::Display>(e: E) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

/// Shaping table for one seed: sandwiched around V* at `beta`, optionally
/// corrupted. Streams are independent of the run stream.
fn seed_shaping(
    cfg: &ResolvedConfig,
    seed: u64,
    beta: f64,
    sigma: f64,
) -> Result<ShapingTable, HarnessError> {
    let root = RunRng::new(seed);
    let vstar = exact_optimal_values(&cfg.mdp);
    let mut table =
        build_sandwiched(&vstar, beta, &mut root.split(SHAPING_STREAM)).map_err(runtime)?;
    if sigma > 0.0 {
        table = corrupt(&table, sigma, &mut root.split(CORRUPT_STREAM));
    }
    Ok(table)
}

/// One (variant, seed) run under the harness stream discipline: the seed's
/// root splits into the shaping stream, the corruption stream, and the run
/// stream.
pub fn single_run(
    cfg: &ResolvedConfig,
    variant: Variant,
    seed: u64,
    beta: f64,
    sigma: f64,
) -> Result<RegretTrace, HarnessError> {
    let root = RunRng::new(seed);
    let spec = cfg.bonus_spec(variant, beta);
    let shaping = if variant.needs_shaping() {
        Some(seed_shaping(cfg, seed, beta, sigma)?)
    } else {
        None
    };
    run(
        &cfg.mdp,
        variant,
        &spec,
        shaping.as_ref(),
        cfg.episodes,
        root.split(RUN_STREAM),
    )
    .map_err(runtime)
}

fn variant_seed_traces(
    cfg: &ResolvedConfig,
    beta: f64,
    sigma: f64,
) -> Result<Vec<(Variant, u64, RegretTrace)>, HarnessError> {
    let jobs: Vec<(Variant, u64)> = cfg
        .variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = worker_pool()?;
    pool.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| single_run(cfg, v, s, beta, sigma).map(|t| (v, s, t)))
            .collect()
    })
}

/// `run`: per (variant, seed) regret + heatmap CSVs, per-variant aggregate,
/// and a summary of final cumulative regrets.
pub fn cmd_run(cfg: &ResolvedConfig) -> Result<serde_json::Value, HarnessError> {
    let results = variant_seed_traces(cfg, cfg.beta, cfg.corrupt_sigma)?;
    let dir = &cfg.out_dir;
    let mut summary_variants = serde_json::Map::new();
    let mut aggregates = Vec::new();
    for &variant in &cfg.variants {
        let traces: Vec<(u64, &RegretTrace)> = results
            .iter()
            .filter(|(v, _, _)| *v == variant)
            .map(|(_, s, t)| (*s, t))
            .collect();
        let mut finals = Vec::new();
        let mut per_seed = serde_json::Map::new();
        for &(seed, trace) in &traces {
            write_file(
                &dir.join(format!("regret_{}_seed{}.csv", variant.label(), seed)),
                &regret_csv(trace),
            )?;
            if let Some(csv) = heatmap_csv(trace, &cfg.mdp, VisitWindow::Full) {
                write_file(
                    &dir.join(format!("heatmap_{}_seed{}.csv", variant.label(), seed)),
                    &csv,
                )?;
            }
            finals.push(trace.final_cumulative_regret());
            per_seed.insert(seed.to_string(), trace.final_cumulative_regret().into());
        }
        let only_traces: Vec<&RegretTrace> = traces.iter().map(|&(_, t)| t).collect();
        let agg_name = format!("aggregate_{}.csv", variant.label());
        write_file(&dir.join(&agg_name), &aggregate_csv(&only_traces))?;
        aggregates.push((variant.label().to_string(), agg_name));
        let (mean, stderr) = mean_stderr(&finals);
        summary_variants.insert(
            variant.label().to_string(),
            serde_json::json!({
                "mean_final_cumulative_regret": mean,
                "stderr_final_cumulative_regret": stderr,
                "per_seed": per_seed,
            }),
        );
    }
    let summary = serde_json::json!({
        "env": cfg.env_label,
        "episodes": cfg.episodes,
        "beta": cfg.beta,
        "corrupt_sigma": cfg.corrupt_sigma,
        "seeds": cfg.seeds,
        "variants": summary_variants,
    });
    write_json(&dir.join("summary.json"), &summary)?;
    if cfg.emit_plots {
        write_file(
            &dir.join("plot_regret.gnuplot"),
            &regret_plot_script(&aggregates),
        )?;
    }
    Ok(summary)
}

/// `sweep`: cartesian product over shaping qualities and corruption levels,
/// one aggregate CSV per cell plus a combined long-format CSV.
pub fn cmd_sweep(cfg: &ResolvedConfig) -> Result<serde_json::Value, HarnessError> {
    let betas = if cfg.sweep_betas.is_empty() {
        vec![cfg.beta]
    } else {
        cfg.sweep_betas.clone()
    };
    let sigmas = if cfg.sweep_sigmas.is_empty() {
        vec![cfg.corrupt_sigma]
    } else {
        cfg.sweep_sigmas.clone()
    };
    let dir = &cfg.out_dir;
    let mut long = String::from(
        "beta,sigma,variant,episode,mean_cumulative_regret,stderr_cumulative_regret\n",
    );
    let mut cells = serde_json::Map::new();
    for &beta in &betas {
        for &sigma in &sigmas {
            let results = variant_seed_traces(cfg, beta, sigma)?;
            for &variant in &cfg.variants {
                let traces: Vec<&RegretTrace> = results
                    .iter()
                    .filter(|(v, _, _)| *v == variant)
                    .map(|(_, _, t)| t)
                    .collect();
                let csv = aggregate_csv(&traces);
                let name = format!(
                    "aggregate_{}_beta{}_sigma{}.csv",
                    variant.label(),
                    beta,
                    sigma
                );
                write_file(&dir.join(&name), &csv)?;
                for line in csv.lines().skip(1) {
                    long.push_str(&format!("{beta},{sigma},{},{line}\n", variant.label()));
                }
                let finals: Vec<f64> = traces.iter().map(|t| t.final_cumulative_regret()).collect();
                let (mean, stderr) = mean_stderr(&finals);
                cells.insert(
                    format!("{}|beta={beta}|sigma={sigma}", variant.label()),
                    serde_json::json!({ "mean": mean, "stderr": stderr }),
                );
            }
        }
    }
    write_file(&dir.join("sweep_long.csv"), &long)?;
    let summary = serde_json::json!({
        "env": cfg.env_label,
        "episodes": cfg.episodes,
        "betas": betas,
        "sigmas": sigmas,
        "cells": cells,
    });
    write_json(&dir.join("sweep_summary.json"), &summary)?;
    Ok(summary)
}

/// `prune`: pruning-set reports over the delta grid, one JSON per delta
/// plus a sizes table. The sandwich draw uses the first seed.
pub fn cmd_prune(cfg: &ResolvedConfig) -> Result<serde_json::Value, HarnessError> {
    let seed = cfg.seeds[0];
    let vstar = exact_optimal_values(&cfg.mdp);
    let table = seed_shaping(cfg, seed, cfg.beta, cfg.corrupt_sigma)?;
    let reports = delta_sweep(&cfg.mdp, &vstar, &table, cfg.beta, &cfg.deltas).map_err(runtime)?;
    let dir = &cfg.out_dir;
    let mut sizes = String::from("delta,pseudosub,path_pseudosub,boundary,effective,reachable\n");
    for (i, report) in reports.iter().enumerate() {
        write_json(
            &dir.join(format!("prune_{i:02}.json")),
            &report.to_json(cfg.include_members),
        )?;
        sizes.push_str(&format!(
            "{},{},{},{},{},{}\n",
            report.delta,
            report.pseudosub.len(),
            report.path_pseudosub.len(),
            report.boundary.len(),
            report.effective_states,
            report.reachable_states,
        ));
    }
    write_file(&dir.join("prune_sizes.csv"), &sizes)?;
    let best = best_report(&reports);
    let summary = serde_json::json!({
        "env": cfg.env_label,
        "beta": cfg.beta,
        "seed": seed,
        "deltas": cfg.deltas,
        "best_delta": best.map(|r| r.delta),
        "best_path_pseudosub": best.map(|r| r.path_pseudosub.len()),
        "reachable_states": best.map(|r| r.reachable_states),
    });
    write_json(&dir.join("prune_summary.json"), &summary)?;
    Ok(summary)
}

/// `modelsel`: online beta selection plus fixed-arm baselines per seed.
pub fn cmd_modelsel(cfg: &ResolvedConfig) -> Result<serde_json::Value, HarnessError> {
    let grid =
        BetaGrid::new(cfg.beta_grid.clone()).map_err(|e| HarnessError::Config(e.to_string()))?;
    let dir = &cfg.out_dir;
    let pool = worker_pool()?;
    let seeds = cfg.seeds.clone();

    struct SeedOutcome {
        seed: u64,
        online: shaped_ucbvi_core::OnlineOutcome,
        fixed: Vec<(f64, RegretTrace)>,
    }

    let outcomes: Result<Vec<SeedOutcome>, HarnessError> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&seed| -> Result<SeedOutcome, HarnessError> {
                let root = RunRng::new(seed);
                let table = seed_shaping(cfg, seed, cfg.beta, cfg.corrupt_sigma)?;
                let spec = cfg.bonus_spec(Variant::Shaped, cfg.beta);
                let online = run_online(
                    &cfg.mdp,
                    &grid,
                    &spec,
                    &table,
                    cfg.episodes,
                    root.split(ONLINE_STREAM),
                )
                .map_err(runtime)?;
                let mut fixed = Vec::new();
                for (i, &beta) in grid.betas().iter().enumerate() {
                    let arm_spec = cfg.bonus_spec(Variant::Shaped, beta);
                    let trace = run(
                        &cfg.mdp,
                        Variant::Shaped,
                        &arm_spec,
                        Some(&table),
                        cfg.episodes,
                        root.split(BASELINE_STREAM_BASE + i as u64),
                    )
                    .map_err(runtime)?;
                    fixed.push((beta, trace));
                }
                Ok(SeedOutcome {
                    seed,
                    online,
                    fixed,
                })
            })
            .collect()
    });
    let outcomes = outcomes?;

    let mut per_seed = serde_json::Map::new();
    let mut ratios = Vec::new();
    for outcome in &outcomes {
        let seed = outcome.seed;
        write_file(
            &dir.join(format!("modelsel_trace_seed{seed}.csv")),
            &regret_csv(&outcome.online.trace),
        )?;
        write_json(
            &dir.join(format!("modelsel_final_p_seed{seed}.json")),
            &serde_json::json!({
                "betas": outcome.online.betas,
                "p": outcome.online.final_p,
                "arm_plays": outcome.online.arm_plays,
            }),
        )?;
        let mut fixed_map = serde_json::Map::new();
        let mut best = f64::INFINITY;
        for (beta, trace) in &outcome.fixed {
            write_file(
                &dir.join(format!("regret_fixed_beta{beta}_seed{seed}.csv")),
                &regret_csv(trace),
            )?;
            fixed_map.insert(beta.to_string(), trace.final_cumulative_regret().into());
            best = best.min(trace.final_cumulative_regret());
        }
        let online_final = outcome.online.trace.final_cumulative_regret();
        let ratio = if best > 0.0 {
            online_final / best
        } else {
            f64::INFINITY
        };
        ratios.push(ratio);
        per_seed.insert(
            seed.to_string(),
            serde_json::json!({
                "online_final_cumulative_regret": online_final,
                "fixed_final_cumulative_regret": fixed_map,
                "best_fixed": best,
                "ratio_online_to_best_fixed": ratio,
            }),
        );
    }
    let summary = serde_json::json!({
        "env": cfg.env_label,
        "episodes": cfg.episodes,
        "true_beta": cfg.beta,
        "beta_grid": grid.betas(),
        "per_seed": per_seed,
        "max_ratio": ratios.iter().cloned().fold(0.0_f64, f64::max),
    });
    write_json(&dir.join("modelsel_summary.json"), &summary)?;
    Ok(summary)
}

/// `decay`: paired Shaped vs AdditiveShaping runs under misspecified
/// (corrupted) shaping, with a reached-goal flag per run. When the config
/// leaves `corrupt_sigma` at 0 the command defaults it to 1.0, since the
/// comparison is about misspecification.
pub fn cmd_decay(cfg: &ResolvedConfig) -> Result<serde_json::Value, HarnessError> {
    let sigma = if cfg.corrupt_sigma > 0.0 {
        cfg.corrupt_sigma
    } else {
        1.0
    };
    let variants = [Variant::Shaped, Variant::Additive];
    let jobs: Vec<(Variant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let pool = worker_pool()?;
    let results: Result<Vec<(Variant, u64, RegretTrace)>, HarnessError> = pool.install(|| {
        jobs.par_iter()
            .map(|&(v, s)| single_run(cfg, v, s, cfg.beta, sigma).map(|t| (v, s, t)))
            .collect()
    });
    let results = results?;
    let vstar0 = {
        let vstar = exact_optimal_values(&cfg.mdp);
        vstar.v(0, cfg.mdp.start_state())
    };
    let dir = &cfg.out_dir;
    let mut by_variant = serde_json::Map::new();
    for &variant in &variants {
        let mut seed_map = serde_json::Map::new();
        for (v, seed, trace) in &results {
            if *v != variant {
                continue;
            }
            write_file(
                &dir.join(format!("regret_{}_seed{}.csv", variant.label(), seed)),
                &regret_csv(trace),
            )?;
            // The last planned policy's exact value: V* minus its regret.
            let final_return = vstar0 - trace.instant_regret.last().copied().unwrap_or(0.0);
            seed_map.insert(
                seed.to_string(),
                serde_json::json!({
                    "final_greedy_return": final_return,
                    "reached_goal": final_return > 0.0,
                }),
            );
        }
        by_variant.insert(
            variant.label().to_string(),
            serde_json::Value::Object(seed_map),
        );
    }
    let summary = serde_json::json!({
        "env": cfg.env_label,
        "episodes": cfg.episodes,
        "beta": cfg.beta,
        "corrupt_sigma": sigma,
        "variants": by_variant,
    });
    write_json(&dir.join("decay_summary.json"), &summary)?;
    Ok(summary)
}
