//! Parameter sweeps, their configuration file and their result table.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::cell::{run_cell_on, CellParams, SimSettings, SweepResult};
use super::decisions::UserPolicy;
use super::draw::{DrawModel, MarketModel};
use super::episode::SimMode;
use super::SimError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepKind {
    Lambda,
    FpFn,
    Sigmoid,
}

impl SweepKind {
    pub const ALL: [SweepKind; 3] = [SweepKind::Lambda, SweepKind::FpFn, SweepKind::Sigmoid];

    pub fn name(self) -> &'static str {
        match self {
            SweepKind::Lambda => "lambda",
            SweepKind::FpFn => "fpfn",
            SweepKind::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for SweepKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SweepKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown sweep kind {s:?} (expected lambda, fpfn or sigmoid)"))
    }
}

/// Parameters held fixed while a sweep varies its own axes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Defaults {
    pub history: u32,
    pub alpha: f64,
    pub sigma_user: f64,
    pub midpoint: f64,
    pub steepness: f64,
    pub lambda: f64,
    pub fp: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
    /// Service fee as a share of the principal.
    pub fee_rate: f64,
}

impl Default for Defaults {
    fn default() -> Self {
        Defaults {
            history: 100,
            alpha: 1.0,
            sigma_user: 0.06,
            midpoint: 0.30,
            steepness: 20.0,
            lambda: 0.0,
            fp: 0.0,
            fn_: 0.0,
            fee_rate: 0.02,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lambda: Vec<f64>,
    pub fp: Vec<f64>,
    #[serde(rename = "fn")]
    pub fn_: Vec<f64>,
    pub midpoint: Vec<f64>,
    pub steepness: Vec<f64>,
}

fn tenths(n: u32, step: u32) -> Vec<f64> {
    (0..=n).step_by(step as usize).map(|i| i as f64 / 10.0).collect()
}

impl Default for Grid {
    fn default() -> Self {
        Grid {
            lambda: tenths(10, 1),
            fp: tenths(10, 2),
            fn_: tenths(10, 2),
            midpoint: vec![0.10, 0.15, 0.20, 0.25, 0.35],
            steepness: vec![5.0, 10.0, 20.0, 50.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub kind: SweepKind,
    pub episodes: u64,
    pub seed: u64,
    pub mode: SimMode,
    pub defaults: Defaults,
    pub grid: Grid,
    pub model: MarketModel,
}

impl SweepConfig {
    pub fn builtin(kind: SweepKind) -> Self {
        let mut defaults = Defaults::default();
        if kind == SweepKind::Sigmoid {
            defaults.lambda = 0.8;
        }
        SweepConfig {
            kind,
            episodes: 5000,
            seed: 7,
            mode: SimMode::Engine,
            defaults,
            grid: Grid::default(),
            model: MarketModel::default(),
        }
    }

    /// Parses a TOML sweep file. Keys it leaves out take the built-in value
    /// for its `kind`.
    pub fn from_toml(text: &str) -> Result<Self, SimError> {
        let bad = |e: String| SimError::InvalidConfig(e);
        let file: toml::Table = text.parse().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        let kind: SweepKind = file
            .get("kind")
            .and_then(|v| v.as_str())
            .ok_or_else(|| bad("missing string key `kind`".into()))?
            .parse()
            .map_err(bad)?;
        let mut merged = toml::Table::try_from(SweepConfig::builtin(kind)).map_err(|e| bad(e.to_string()))?;
        overlay(&mut merged, file);
        let cfg: SweepConfig = merged.try_into().map_err(|e: toml::de::Error| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |e: String| Err(SimError::InvalidConfig(e));
        if self.episodes == 0 {
            return bad("episodes must be positive".into());
        }
        let cells = self.cells();
        if cells.is_empty() {
            return bad(format!("grid for {} sweep is empty", self.kind.name()));
        }
        for c in &cells {
            c.pricing()?;
        }
        self.settings().user.validate().map_err(SimError::InvalidConfig)?;
        self.settings().model.validate().map_err(SimError::InvalidConfig)?;
        if !(self.defaults.fee_rate >= 0.0 && self.defaults.fee_rate <= 1.0) {
            return bad("fee_rate must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn settings(&self) -> SimSettings {
        let d = &self.defaults;
        SimSettings {
            user: UserPolicy { history: d.history, sigma_user: d.sigma_user, alpha: d.alpha },
            fee_rate: d.fee_rate,
            mode: self.mode,
            model: DrawModel::Market(self.model),
        }
    }

    /// The sweep's cells, in table order.
    pub fn cells(&self) -> Vec<CellParams> {
        let d = &self.defaults;
        let base = CellParams { lambda: d.lambda, fp: d.fp, fn_: d.fn_, midpoint: d.midpoint, steepness: d.steepness };
        let g = &self.grid;
        match self.kind {
            SweepKind::Lambda => g.lambda.iter().map(|&lambda| CellParams { lambda, ..base }).collect(),
            SweepKind::FpFn => g
                .fp
                .iter()
                .flat_map(|&fp| g.fn_.iter().map(move |&fn_| CellParams { fp, fn_, ..base }))
                .collect(),
            SweepKind::Sigmoid => g
                .midpoint
                .iter()
                .flat_map(|&midpoint| g.steepness.iter().map(move |&steepness| CellParams { midpoint, steepness, ..base }))
                .collect(),
        }
    }

    /// SHA-256 of the resolved configuration.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

fn overlay(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => overlay(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Runs every cell of the sweep. All cells share the same episode draws;
/// cells run in parallel on the current rayon pool and come back in table
/// order.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepResult>, SimError> {
    config.validate()?;
    let settings = config.settings();
    let draws: Vec<_> = (0..config.episodes)
        .into_par_iter()
        .map(|e| settings.model.draw(config.seed, e, settings.user.history))
        .collect();
    config
        .cells()
        .par_iter()
        .map(|c| run_cell_on(c, &draws, config.seed, &settings))
        .collect()
}

pub const CSV_COLUMNS: [&str; 14] = [
    "sweep",
    "lambda",
    "fp",
    "fn",
    "midpoint",
    "steepness",
    "adoption_rate",
    "loss_reduction_rate",
    "failure_reduction_rate",
    "wallet_final",
    "episodes",
    "seed",
    "opt_in_rate",
    "premium_total",
];

fn rate(r: Option<f64>) -> String {
    r.map(|x| format!("{x:.6}")).unwrap_or_else(|| "NA".into())
}

/// The result table: `#` metadata lines, a header row, one row per cell.
pub fn to_csv(config: &SweepConfig, results: &[SweepResult]) -> String {
    let mut out = String::new();
    writeln!(out, "# ars-sweep v1").unwrap();
    writeln!(
        out,
        "# kind={} episodes={} seed={} mode={} config_sha256={}",
        config.kind.name(),
        config.episodes,
        config.seed,
        match config.mode {
            SimMode::Engine => "engine",
            SimMode::Equations => "equations",
        },
        config.digest()
    )
    .unwrap();
    writeln!(out, "{}", CSV_COLUMNS.join(",")).unwrap();
    for r in results {
        let p = &r.params;
        writeln!(
            out,
            "{},{},{},{},{},{},{:.6},{},{},{},{},{},{:.6},{}",
            config.kind.name(),
            p.lambda,
            p.fp,
            p.fn_,
            p.midpoint,
            p.steepness,
            r.adoption_rate,
            rate(r.loss_reduction_rate),
            rate(r.failure_reduction_rate),
            r.wallet_final,
            r.episodes,
            r.seed,
            r.opt_in_rate,
            r.premium_total,
        )
        .unwrap();
    }
    out
}
