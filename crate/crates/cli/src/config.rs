//! Run configuration: TOML on disk, command-line overrides, explicit defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Complex matrix written as rows of [re, im] pairs.
pub type MatrixSpec = Vec<Vec<[f64; 2]>>;

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub seed: Option<u64>,
    pub trajectories: Option<usize>,
    pub quadrature_level: Option<usize>,
    pub t0: Option<f64>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Parsed separately by `parse_model`.
    #[serde(skip)]
    pub model: ModelConfig,
    #[serde(default)]
    pub stop: StopConfig,
    #[serde(default)]
    pub check: CheckConfig,
    #[serde(default)]
    pub rgrwf: RgrwfConfig,
    #[serde(default)]
    pub ck: CkConfig,
    #[serde(default)]
    pub stats: StatsConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub csv: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("flashpoint-out"),
            csv: false,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TierName {
    Simple,
    Labeled,
    VariableRate,
    TimeDependent,
    PastDependent,
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum StatisticsName {
    Distinguishable,
    Identical,
}

/// The `[model]` table: `builder` picks the variant, the other keys are its parameters.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "builder", rename_all = "kebab-case")]
pub enum ModelConfig {
    Random(RandomModel),
    Gaussian(GaussianModel),
    Fock(FockModel),
    ConstantRate(ConstantRateModel),
}

/// Random model of a tier, drawn from its own seed.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RandomModel {
    #[serde(default = "default_tier")]
    pub tier: TierName,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_n_q")]
    pub n_q: usize,
    #[serde(default = "one")]
    pub lambda: f64,
    #[serde(default)]
    pub model_seed: u64,
}

/// Gaussian flash rates with tight-binding hopping.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianModel {
    pub n_q: usize,
    pub box_length: f64,
    #[serde(default = "one")]
    pub lambda: f64,
    pub sigma: f64,
    #[serde(default)]
    pub hopping: f64,
    #[serde(default = "one_usize")]
    pub n_particles: usize,
    #[serde(default = "default_statistics")]
    pub statistics: StatisticsName,
}

/// Boson number truncated at n_max.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FockModel {
    pub n_q: usize,
    pub box_length: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub hopping: f64,
    pub n_max: usize,
}

/// Literal positive rate operators (normalized to λI) and Hamiltonian.
#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantRateModel {
    pub n_q: usize,
    pub box_length: f64,
    pub lambda: f64,
    pub rates: Vec<MatrixSpec>,
    pub hamiltonian: MatrixSpec,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig::Random(RandomModel {
            tier: default_tier(),
            dim: default_dim(),
            n_q: default_n_q(),
            lambda: 1.0,
            model_seed: 0,
        })
    }
}

fn default_tier() -> TierName {
    TierName::Simple
}
fn default_dim() -> usize {
    2
}
fn default_n_q() -> usize {
    8
}
fn one() -> f64 {
    1.0
}
fn one_usize() -> usize {
    1
}
fn default_statistics() -> StatisticsName {
    StatisticsName::Distinguishable
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct StopConfig {
    pub max_flashes: Option<usize>,
    pub t_max: Option<f64>,
    /// Initial state as [re, im] amplitudes; uniform superposition when absent.
    pub psi0: Option<Vec<[f64; 2]>>,
}

impl Default for StopConfig {
    fn default() -> Self {
        Self {
            max_flashes: None,
            t_max: Some(20.0),
            psi0: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckConfig {
    /// Flash depth of the POVM checks.
    pub n: usize,
    /// Deepest history of the gauge and reconstruction checks.
    pub depth: usize,
    /// Random histories per depth for consistency, gauge and reconstruction checks.
    pub histories: usize,
    /// Time step handed to the Heisenberg-plus reconstruction.
    pub grid_step: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            n: 1,
            depth: 2,
            histories: 5,
            grid_step: 0.05,
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileName {
    Gaussian,
    Compact,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PacketConfig {
    pub center: f64,
    pub width: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "up_spinor")]
    pub spinor: [[f64; 2]; 2],
}

fn up_spinor() -> [[f64; 2]; 2] {
    [[1.0, 0.0], [0.0, 0.0]]
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct WellConfig {
    pub depth: f64,
    pub center: f64,
    pub width: f64,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct RgrwfConfig {
    pub mass: f64,
    pub lambda: f64,
    pub profile: ProfileName,
    pub sigma: f64,
    pub n_labels: usize,
    pub n_per_label: usize,
    /// Lattice refinement level; Δx = Δt = 0.2/2^(level−1).
    pub level: u32,
    pub half_width: Option<f64>,
    pub window: Option<f64>,
    pub max_duration: Option<f64>,
    pub well: Option<WellConfig>,
    /// Seed flash (t, x) per label; a packet centred on each seed otherwise.
    pub seeds: Vec<[f64; 2]>,
    pub packets: Vec<PacketConfig>,
}

impl Default for RgrwfConfig {
    fn default() -> Self {
        Self {
            mass: 1.0,
            lambda: 1.0,
            profile: ProfileName::Gaussian,
            sigma: 1.0,
            n_labels: 1,
            n_per_label: 5,
            level: 1,
            half_width: None,
            window: None,
            max_duration: None,
            well: None,
            seeds: Vec::new(),
            packets: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum OrderName {
    LeftFirst,
    RightFirst,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct CkConfig {
    pub t_max: usize,
    pub order: OrderName,
    /// Rows up to which the generation-order comparison runs.
    pub compare_t_max: usize,
}

impl Default for CkConfig {
    fn default() -> Self {
        Self {
            t_max: 6,
            order: OrderName::LeftFirst,
            compare_t_max: 4,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct StatsConfig {
    pub input: Option<PathBuf>,
    /// Rate of the exponential the interarrival times are tested against.
    pub rate: Option<f64>,
    /// Cell probabilities for a chi-square test of flash cells (q index).
    pub cell_probs: Option<Vec<f64>>,
}

/// Fully resolved configuration; this is what run artifacts embed.
#[derive(Clone, Debug, Serialize)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub trajectories: usize,
    pub quadrature_level: usize,
    pub t0: f64,
    pub output: OutputConfig,
    pub model: ModelConfig,
    pub stop: StopConfig,
    pub check: CheckConfig,
    pub rgrwf: RgrwfConfig,
    pub ck: CkConfig,
    pub stats: StatsConfig,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub trajectories: Option<usize>,
    pub quadrature_level: Option<usize>,
}

fn path_error(prefix: &str, e: serde_path_to_error::Error<toml::de::Error>) -> CliError {
    let path = e.path().to_string();
    let at = match (prefix, path.as_str()) {
        (p, ".") => p.to_string(),
        ("", q) => q.to_string(),
        (p, q) => format!("{p}.{q}"),
    };
    CliError::Config(format!("{at}: {}", e.into_inner().message()))
}

fn parse_model(mut table: toml::Table) -> Result<ModelConfig, CliError> {
    fn part<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T, CliError> {
        serde_path_to_error::deserialize(toml::Value::Table(table))
            .map_err(|e| path_error("model", e))
    }
    let builder = match table.remove("builder") {
        None => "random".to_string(),
        Some(toml::Value::String(s)) => s,
        Some(other) => {
            return Err(CliError::Config(format!(
                "model.builder: expected a string, found {}",
                other.type_str()
            )))
        }
    };
    match builder.as_str() {
        "random" => part(table).map(ModelConfig::Random),
        "gaussian" => part(table).map(ModelConfig::Gaussian),
        "fock" => part(table).map(ModelConfig::Fock),
        "constant-rate" => part(table).map(ModelConfig::ConstantRate),
        other => Err(CliError::Config(format!("model.builder: unknown builder `{other}`, expected random, gaussian, fock or constant-rate"))),
    }
}

pub fn parse_toml(text: &str) -> Result<RawConfig, CliError> {
    let mut table: toml::Table = text
        .parse()
        .map_err(|e| CliError::Config(format!("TOML syntax: {e}")))?;
    let model = match table.remove("model") {
        None => ModelConfig::default(),
        Some(toml::Value::Table(t)) => parse_model(t)?,
        Some(other) => {
            return Err(CliError::Config(format!(
                "model: expected a table, found {}",
                other.type_str()
            )))
        }
    };
    let mut raw: RawConfig = serde_path_to_error::deserialize(toml::Value::Table(table))
        .map_err(|e| path_error("", e))?;
    raw.model = model;
    Ok(raw)
}

pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let raw = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
            parse_toml(&text)?
        }
        None => RawConfig::default(),
    };
    resolve(raw, overrides)
}

pub fn resolve(raw: RawConfig, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let seed = overrides.seed.or(raw.seed).ok_or_else(|| {
        CliError::Config("seed: missing field `seed` (give it in the config or with --seed)".into())
    })?;
    let mut output = raw.output;
    if let Some(dir) = &overrides.out {
        output.dir = dir.clone();
    }
    let cfg = RunConfig {
        schema_version: SCHEMA_VERSION,
        seed,
        trajectories: overrides.trajectories.or(raw.trajectories).unwrap_or(1000),
        quadrature_level: overrides
            .quadrature_level
            .or(raw.quadrature_level)
            .unwrap_or(2),
        t0: raw.t0.unwrap_or(0.0),
        output,
        model: raw.model,
        stop: raw.stop,
        check: raw.check,
        rgrwf: raw.rgrwf,
        ck: raw.ck,
        stats: raw.stats,
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), CliError> {
    let bad = |field: &str, why: &str| Err(CliError::Config(format!("{field}: {why}")));
    if !(1..=3).contains(&cfg.quadrature_level) {
        return bad("quadrature_level", "must be 1, 2 or 3");
    }
    if cfg.trajectories == 0 {
        return bad("trajectories", "must be positive");
    }
    if !cfg.t0.is_finite() {
        return bad("t0", "must be finite");
    }
    if cfg.stop.max_flashes.is_none() && cfg.stop.t_max.is_none() {
        return bad("stop", "needs max_flashes or t_max");
    }
    if let Some(tm) = cfg.stop.t_max {
        if tm.partial_cmp(&cfg.t0) != Some(std::cmp::Ordering::Greater) {
            return bad("stop.t_max", "must exceed t0");
        }
    }
    if cfg.check.n == 0 || cfg.check.n > 3 {
        return bad("check.n", "must be between 1 and 3");
    }
    if cfg.check.depth > 3 {
        return bad("check.depth", "must be at most 3");
    }
    let r = &cfg.rgrwf;
    if r.level == 0 || r.level > 4 {
        return bad("rgrwf.level", "must be between 1 and 4");
    }
    if r.n_labels == 0 {
        return bad("rgrwf.n_labels", "must be positive");
    }
    if !r.seeds.is_empty() && r.seeds.len() != r.n_labels {
        return bad("rgrwf.seeds", "needs one (t, x) pair per label");
    }
    if !r.packets.is_empty() && r.packets.len() != r.n_labels {
        return bad("rgrwf.packets", "needs one packet per label");
    }
    if cfg.ck.t_max == 0 || cfg.ck.t_max > 10 {
        return bad("ck.t_max", "must be between 1 and 10");
    }
    if cfg.ck.compare_t_max > 6 {
        return bad("ck.compare_t_max", "enumeration supports at most 6 rows");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_names_the_field() {
        let err = resolve(
            parse_toml("trajectories = 10").unwrap(),
            &Overrides::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("seed"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn nested_errors_carry_their_path() {
        let err = parse_toml("seed = 1\n[model]\nbuilder = \"gaussian\"\nn_q = \"eight\"\nbox_length = 8.0\nsigma = 1.0").unwrap_err();
        assert!(err.to_string().contains("model.n_q"), "{err}");
        let err = parse_toml("seed = 1\n[rgrwf]\nmas = 1.0").unwrap_err();
        assert!(err.to_string().contains("rgrwf"), "{err}");
    }

    #[test]
    fn overrides_win_over_the_file() {
        let raw = parse_toml("seed = 1\ntrajectories = 10").unwrap();
        let cfg = resolve(
            raw,
            &Overrides {
                seed: Some(9),
                trajectories: Some(3),
                ..Overrides::default()
            },
        )
        .unwrap();
        assert_eq!((cfg.seed, cfg.trajectories), (9, 3));
    }
}
