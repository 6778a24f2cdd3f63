//! Experiment configuration: JSON config files plus CLI flag overrides.

use std::collections::BTreeSet;
use std::path::PathBuf;

use serde::Deserialize;
use shaped_ucbvi_core::{
    build_maze, default_delta_grid, preset, BonusKind, BonusSpec, MazeSpec, TabularMdp, Variant,
    PRESET_NAMES,
};

use crate::HarnessError;

/// Which bonus family the harness instantiates per variant. `practical` is
/// the `C/sqrt(N)` family used by the experiments; `theoretical` the
/// analysis-grade log-factor bonuses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BonusFamily {
    Practical,
    Theoretical,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum EnvSpec {
    Preset(String),
    Maze(MazeSpec),
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct BonusConfig {
    pub family: Option<BonusFamily>,
    pub c: Option<f64>,
    pub delta: Option<f64>,
}

/// Raw config file contents; every field optional so flags can fill gaps.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<EnvSpec>,
    pub variants: Option<Vec<String>>,
    pub bonus: Option<BonusConfig>,
    pub beta: Option<f64>,
    pub corrupt_sigma: Option<f64>,
    pub episodes: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub deltas: Option<Vec<f64>>,
    pub beta_grid: Option<Vec<f64>>,
    pub sweep_betas: Option<Vec<f64>>,
    pub sweep_sigmas: Option<Vec<f64>>,
    pub include_members: Option<bool>,
    pub emit_plots: Option<bool>,
}

impl FileConfig {
    pub fn from_json_str(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| {
            HarnessError::Config(format!(
                "config error at line {}, column {}: {}",
                e.line(),
                e.column(),
                e
            ))
        })
    }

    pub fn load(path: &std::path::Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }
}

/// Flag-level overrides collected from the command line; every set field
/// wins over the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub env: Option<String>,
    pub variants: Option<Vec<String>>,
    pub beta: Option<f64>,
    pub corrupt_sigma: Option<f64>,
    pub episodes: Option<usize>,
    pub seeds: Option<Vec<u64>>,
    pub out_dir: Option<PathBuf>,
    pub bonus_family: Option<String>,
    pub bonus_c: Option<f64>,
    pub bonus_delta: Option<f64>,
    pub deltas: Option<Vec<f64>>,
    pub beta_grid: Option<Vec<f64>>,
    pub sweep_betas: Option<Vec<f64>>,
    pub sweep_sigmas: Option<Vec<f64>>,
    pub include_members: Option<bool>,
    pub emit_plots: Option<bool>,
}

/// Fully resolved, validated experiment description.
#[derive(Debug)]
pub struct ResolvedConfig {
    pub mdp: TabularMdp,
    pub env_label: String,
    pub variants: Vec<Variant>,
    pub bonus_family: BonusFamily,
    pub bonus_c: Option<f64>,
    pub bonus_delta: f64,
    pub beta: f64,
    pub corrupt_sigma: f64,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub deltas: Vec<f64>,
    pub beta_grid: Vec<f64>,
    pub sweep_betas: Vec<f64>,
    pub sweep_sigmas: Vec<f64>,
    pub include_members: bool,
    pub emit_plots: bool,
}

pub fn parse_variant(name: &str) -> Result<Variant, HarnessError> {
    match name {
        "ucbvi" => Ok(Variant::Ucbvi),
        "shaped" => Ok(Variant::Shaped),
        "shaped-bs" => Ok(Variant::ShapedBs),
        "shaped-p" => Ok(Variant::ShapedP),
        "additive" => Ok(Variant::Additive),
        other => Err(HarnessError::Config(format!(
            "unknown variant '{other}' (expected ucbvi, shaped, shaped-bs, shaped-p, additive)"
        ))),
    }
}

fn default_episodes(env_label: &str) -> usize {
    match env_label {
        "corridor10" | "dcorridor10x20" => 5000,
        _ => 2000,
    }
}

pub fn resolve(file: FileConfig, flags: Overrides) -> Result<ResolvedConfig, HarnessError> {
    // Environment.
    let env_spec = match flags.env {
        Some(name) => EnvSpec::Preset(name),
        None => file
            .env
            .unwrap_or_else(|| EnvSpec::Preset("grid8".to_string())),
    };
    let (mdp, env_label) = match env_spec {
        EnvSpec::Preset(name) => {
            if !PRESET_NAMES.contains(&name.as_str()) {
                return Err(HarnessError::Config(format!(
                    "unknown env preset '{name}' (built-in: {})",
                    PRESET_NAMES.join(", ")
                )));
            }
            let mdp = preset(&name).map_err(|e| HarnessError::Config(e.to_string()))?;
            (mdp, name)
        }
        EnvSpec::Maze(spec) => {
            let mdp = build_maze(&spec).map_err(|e| HarnessError::Config(e.to_string()))?;
            (mdp, format!("maze{}x{}", spec.height, spec.width))
        }
    };

    // Variants.
    let names = flags.variants.or(file.variants).unwrap_or_else(|| {
        vec![
            "ucbvi".into(),
            "shaped".into(),
            "shaped-bs".into(),
            "shaped-p".into(),
        ]
    });
    if names.is_empty() {
        return Err(HarnessError::Config("variant list is empty".into()));
    }
    let mut variants = Vec::new();
    let mut seen = BTreeSet::new();
    for name in &names {
        let v = parse_variant(name)?;
        if seen.insert(name.clone()) {
            variants.push(v);
        }
    }

    // Bonus.
    let bonus_file = file.bonus.unwrap_or_default();
    let bonus_family = match flags.bonus_family.as_deref() {
        Some("practical") => BonusFamily::Practical,
        Some("theoretical") => BonusFamily::Theoretical,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "unknown bonus family '{other}' (expected practical or theoretical)"
            )))
        }
        None => bonus_file.family.unwrap_or(BonusFamily::Practical),
    };
    let bonus_delta = flags.bonus_delta.or(bonus_file.delta).unwrap_or(0.05);
    if bonus_delta <= 0.0 || bonus_delta >= 1.0 || bonus_delta.is_nan() {
        return Err(HarnessError::Config(format!(
            "bonus delta {bonus_delta} not in (0,1)"
        )));
    }
    let bonus_c = flags.bonus_c.or(bonus_file.c);
    if let Some(c) = bonus_c {
        if c < 0.0 || c.is_nan() {
            return Err(HarnessError::Config(format!("bonus c {c} must be >= 0")));
        }
    }

    let beta = flags.beta.or(file.beta).unwrap_or(1.5);
    if beta < 1.0 || beta.is_nan() {
        return Err(HarnessError::Config(format!("beta {beta} must be >= 1")));
    }
    let corrupt_sigma = flags.corrupt_sigma.or(file.corrupt_sigma).unwrap_or(0.0);
    if corrupt_sigma < 0.0 || corrupt_sigma.is_nan() {
        return Err(HarnessError::Config(format!(
            "corrupt sigma {corrupt_sigma} must be >= 0"
        )));
    }

    let episodes = flags
        .episodes
        .or(file.episodes)
        .unwrap_or_else(|| default_episodes(&env_label));
    let seeds = flags.seeds.or(file.seeds).unwrap_or_else(|| vec![1, 2, 3]);
    if seeds.is_empty() {
        return Err(HarnessError::Config("at least one seed is required".into()));
    }
    let out_dir = flags
        .out_dir
        .or(file.out_dir)
        .unwrap_or_else(|| PathBuf::from("out"));

    let deltas = flags
        .deltas
        .or(file.deltas)
        .unwrap_or_else(default_delta_grid);
    if deltas.iter().any(|d| *d <= 0.0 || d.is_nan()) {
        return Err(HarnessError::Config("prune deltas must be positive".into()));
    }
    let beta_grid = flags
        .beta_grid
        .or(file.beta_grid)
        .unwrap_or_else(|| vec![1.0, 2.0, 4.0]);
    let sweep_betas = flags.sweep_betas.or(file.sweep_betas).unwrap_or_default();
    let sweep_sigmas = flags.sweep_sigmas.or(file.sweep_sigmas).unwrap_or_default();

    Ok(ResolvedConfig {
        mdp,
        env_label,
        variants,
        bonus_family,
        bonus_c,
        bonus_delta,
        beta,
        corrupt_sigma,
        episodes,
        seeds,
        out_dir,
        deltas,
        beta_grid,
        sweep_betas,
        sweep_sigmas,
        include_members: flags
            .include_members
            .or(file.include_members)
            .unwrap_or(false),
        emit_plots: flags.emit_plots.or(file.emit_plots).unwrap_or(false),
    })
}

impl ResolvedConfig {
    /// Concrete bonus spec for a variant. When `bonus_c` is not pinned in
    /// the config, the practical vanilla scale defaults to `0.1 * H` (the
    /// `C/sqrt(N)` constant carries the value scale of the environment,
    /// which the shaped bonus gets from its `vt` factor instead); every
    /// other kind defaults to `c = 0.1`.
    pub fn bonus_spec(&self, variant: Variant, beta: f64) -> BonusSpec {
        let kind = match (self.bonus_family, variant) {
            (BonusFamily::Practical, Variant::Ucbvi | Variant::ShapedP) => {
                BonusKind::PracticalVanilla
            }
            (BonusFamily::Practical, Variant::Shaped | Variant::ShapedBs) => {
                BonusKind::PracticalShaped
            }
            (BonusFamily::Theoretical, Variant::Ucbvi | Variant::ShapedP) => {
                BonusKind::TheoreticalVanilla
            }
            (BonusFamily::Theoretical, Variant::Shaped | Variant::ShapedBs) => {
                BonusKind::TheoreticalShaped
            }
            (_, Variant::Additive) => BonusKind::AdditiveShaping,
        };
        let c = self.bonus_c.unwrap_or(match kind {
            BonusKind::PracticalVanilla => 0.1 * self.mdp.horizon() as f64,
            _ => 0.1,
        });
        BonusSpec {
            kind,
            c,
            delta: self.bonus_delta,
            beta,
        }
    }
}
