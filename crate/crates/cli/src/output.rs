//! Deterministic data emission: CSV regret traces, heatmap grids, aggregate
//! curves, JSON summaries, and optional gnuplot scripts. Identical inputs
//! produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use shaped_ucbvi_core::{RegretTrace, TabularMdp, VisitWindow};

use crate::HarnessError;

pub fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| HarnessError::Runtime(format!("mkdir {}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents)
        .map_err(|e| HarnessError::Runtime(format!("write {}: {e}", path.display())))
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), HarnessError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| HarnessError::Runtime(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_file(path, &text)
}

// Shortest round-trip representation: emitted values parse back to the
// exact f64, so aggregates are recomputable from the files.
fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

/// Per-episode regret CSV: `episode,instant_regret,cumulative_regret,episodic_return,optimism_holds`.
pub fn regret_csv(trace: &RegretTrace) -> String {
    let mut out =
        String::from("episode,instant_regret,cumulative_regret,episodic_return,optimism_holds\n");
    for i in 0..trace.episodes() {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            i + 1,
            fmt_f64(trace.instant_regret[i]),
            fmt_f64(trace.cumulative_regret[i]),
            fmt_f64(trace.episodic_return[i]),
            trace.optimism_holds[i],
        );
    }
    out
}

/// Heatmap CSV over grid cells: `row,col,visits`.
pub fn heatmap_csv(trace: &RegretTrace, mdp: &TabularMdp, window: VisitWindow) -> Option<String> {
    let grid = mdp.grid()?;
    let cells = trace.cell_heatmap(mdp, window)?;
    let mut out = String::from("row,col,visits\n");
    for r in 0..grid.height {
        for c in 0..grid.width {
            let _ = writeln!(out, "{r},{c},{}", cells[r * grid.width + c]);
        }
    }
    Some(out)
}

/// Mean and standard error of the cumulative-regret curve across seeds:
/// `episode,mean_cumulative_regret,stderr_cumulative_regret`.
pub fn aggregate_csv(traces: &[&RegretTrace]) -> String {
    let episodes = traces.iter().map(|t| t.episodes()).min().unwrap_or(0);
    let n = traces.len() as f64;
    let mut out = String::from("episode,mean_cumulative_regret,stderr_cumulative_regret\n");
    for i in 0..episodes {
        let values: Vec<f64> = traces.iter().map(|t| t.cumulative_regret[i]).collect();
        let mean = values.iter().sum::<f64>() / n;
        let stderr = if values.len() > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        let _ = writeln!(out, "{},{},{}", i + 1, fmt_f64(mean), fmt_f64(stderr));
    }
    out
}

pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    (mean, stderr)
}

/// A plain gnuplot script plotting each aggregate curve in the directory.
pub fn regret_plot_script(aggregates: &[(String, String)]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "set datafile separator ','");
    let _ = writeln!(out, "set key left top");
    let _ = writeln!(out, "set xlabel 'episode'");
    let _ = writeln!(out, "set ylabel 'cumulative regret'");
    let curves: Vec<String> = aggregates
        .iter()
        .map(|(label, file)| format!("'{file}' using 1:2 with lines title '{label}'"))
        .collect();
    let _ = writeln!(out, "plot {}", curves.join(", "));
    out
}
