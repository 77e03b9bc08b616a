//! Experiment configuration files.
//!
//! ```toml
//! version = 1
//! experiment = "npg-vs-onpg"
//! seed = 7
//! rng = "chacha20"
//! out = "traces/npg-vs-onpg"
//!
//! [params]
//! n = 5
//! tau = 0.02
//! etas = [0.25, 0.5, 1.0]
//! iterations = 2000
//! ```
//!
//! Missing parameters take the defaults below. Unknown keys are rejected so a
//! typo cannot silently fall back to a default.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CONFIG_VERSION: u32 = 1;
/// The only generator the schema knows: ChaCha20 keyed by the little-endian
/// seed, see `npg_core::instances::SeededRng`.
pub const RNG_NAME: &str = "chacha20";

pub const EXPERIMENT_IDS: [&str; 6] = [
    "vanilla-vs-modified",
    "npg-vs-onpg",
    "matrix-fa",
    "monotone-methods",
    "markov-tabular",
    "markov-fa",
];

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    version: u32,
    experiment: String,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_rng")]
    rng: String,
    out: Option<PathBuf>,
    #[serde(default = "empty_table")]
    params: toml::Value,
}

fn default_rng() -> String {
    RNG_NAME.to_string()
}

fn empty_table() -> toml::Value {
    toml::Value::Table(toml::Table::new())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub version: u32,
    pub seed: u64,
    pub rng: String,
    pub out: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "experiment", content = "params", rename_all = "kebab-case")]
pub enum Experiment {
    VanillaVsModified(VanillaParams),
    NpgVsOnpg(NpgVsOnpgParams),
    MatrixFa(MatrixFaParams),
    MonotoneMethods(MonotoneParams),
    MarkovTabular(MarkovParams),
    MarkovFa(MarkovParams),
}

impl Experiment {
    pub fn id(&self) -> &'static str {
        match self {
            Self::VanillaVsModified(_) => "vanilla-vs-modified",
            Self::NpgVsOnpg(_) => "npg-vs-onpg",
            Self::MatrixFa(_) => "matrix-fa",
            Self::MonotoneMethods(_) => "monotone-methods",
            Self::MarkovTabular(_) => "markov-tabular",
            Self::MarkovFa(_) => "markov-fa",
        }
    }

    /// Number of data rows every CSV of this experiment will hold.
    pub fn budget(&self) -> usize {
        match self {
            Self::VanillaVsModified(p) => p.iterations,
            Self::NpgVsOnpg(p) => p.iterations,
            Self::MatrixFa(p) => p.iterations,
            Self::MonotoneMethods(p) => p.iterations,
            Self::MarkovTabular(p) | Self::MarkovFa(p) => p.outer,
        }
    }

    /// Default parameters for an experiment id.
    pub fn default_for(id: &str) -> Result<Self> {
        parse_params(id, empty_table())
    }
}

/// Vanilla and modified NPG on `Q = I_n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VanillaParams {
    pub n: usize,
    pub tau: f64,
    pub eta: f64,
    pub iterations: usize,
}

impl Default for VanillaParams {
    fn default() -> Self {
        Self { n: 5, tau: 0.1, eta: 1e-3, iterations: 20_000 }
    }
}

/// Modified NPG against optimistic NPG over a stepsize grid on a seeded game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NpgVsOnpgParams {
    pub n: usize,
    pub tau: f64,
    pub etas: Vec<f64>,
    pub iterations: usize,
}

impl Default for NpgVsOnpgParams {
    fn default() -> Self {
        Self { n: 5, tau: 0.02, etas: vec![0.25, 0.5, 1.0], iterations: 2_000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    /// `M = I`, i.e. `Φ = [I | 0]`.
    Identity,
    /// Seeded invertible `M` with condition number below 100.
    Random,
}

/// Optimistic NPG with log-linear policies on a seeded `n × n` game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatrixFaParams {
    pub n: usize,
    pub d: usize,
    pub tau: f64,
    /// Defaults to the optimistic stepsize bound of the surrogate game.
    pub eta: Option<f64>,
    pub iterations: usize,
    pub features: FeatureKind,
}

impl Default for MatrixFaParams {
    fn default() -> Self {
        Self {
            n: 100,
            d: 10,
            tau: 0.1,
            eta: None,
            iterations: 2_000,
            features: FeatureKind::Identity,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MonotoneInstance {
    /// A seeded zero-sum matrix game viewed as a two-player monotone game.
    Wrapped,
    /// Zero-sum polymatrix game on a cycle of players.
    Cyclic,
    /// Two-player game with a PSD-plus-antisymmetric pseudo-gradient.
    Quadratic,
}

/// Optimistic NPG, extragradient and proximal point on one monotone game.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonotoneParams {
    pub instance: MonotoneInstance,
    pub players: usize,
    pub n: usize,
    pub tau: f64,
    pub self_weight: f64,
    /// Shared stepsize; defaults to 0.9 times the smallest of the three bounds.
    pub eta: Option<f64>,
    pub iterations: usize,
}

impl Default for MonotoneParams {
    fn default() -> Self {
        Self {
            instance: MonotoneInstance::Cyclic,
            players: 3,
            n: 3,
            tau: 0.1,
            self_weight: 0.5,
            eta: None,
            iterations: 5_000,
        }
    }
}

/// Nested optimistic NPG on a Markov game. The tabular experiment draws
/// Dirichlet transitions; the feature experiment uses uniform transitions and
/// features on the first action of every state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarkovParams {
    pub states: usize,
    pub actions: usize,
    pub gamma: f64,
    pub tau: f64,
    pub outer: usize,
    pub inner: usize,
    /// Defaults to the theorem's inner stepsize.
    pub eta: Option<f64>,
    pub warm_start: bool,
}

impl Default for MarkovParams {
    fn default() -> Self {
        Self {
            states: 5,
            actions: 4,
            gamma: 0.8,
            tau: 0.1,
            outer: 120,
            inner: 4_000,
            eta: None,
            warm_start: false,
        }
    }
}

impl MarkovParams {
    fn feature_default() -> Self {
        Self {
            states: 10,
            actions: 10,
            outer: 60,
            inner: 100,
            warm_start: true,
            ..Self::default()
        }
    }
}

fn parse_params(id: &str, params: toml::Value) -> Result<Experiment> {
    fn typed<T: serde::de::DeserializeOwned>(v: toml::Value) -> Result<T> {
        v.try_into().map_err(|e: toml::de::Error| HarnessError::config(format!("params: {}", e.message())))
    }
    let exp = match id {
        "vanilla-vs-modified" => Experiment::VanillaVsModified(typed(params)?),
        "npg-vs-onpg" => Experiment::NpgVsOnpg(typed(params)?),
        "matrix-fa" => Experiment::MatrixFa(typed(params)?),
        "monotone-methods" => Experiment::MonotoneMethods(typed(params)?),
        "markov-tabular" => Experiment::MarkovTabular(typed(params)?),
        "markov-fa" => {
            // Feature runs have their own defaults, so merge explicitly.
            let mut base = toml::Value::try_from(MarkovParams::feature_default())
                .expect("params serialize");
            if let (toml::Value::Table(b), toml::Value::Table(p)) = (&mut base, params) {
                b.extend(p);
            }
            Experiment::MarkovFa(typed(base)?)
        }
        other => {
            return Err(HarnessError::config(format!(
                "experiment: unknown id {other:?}, expected one of {}",
                EXPERIMENT_IDS.join(", ")
            )))
        }
    };
    exp.validate()?;
    Ok(exp)
}

fn positive(field: &str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::config(format!("params.{field}: must be positive and finite, got {x}")))
    }
}

fn at_least(field: &str, x: usize, min: usize) -> Result<()> {
    if x >= min {
        Ok(())
    } else {
        Err(HarnessError::config(format!("params.{field}: must be at least {min}, got {x}")))
    }
}

impl Experiment {
    fn validate(&self) -> Result<()> {
        at_least("iterations", self.budget(), 1)?;
        match self {
            Self::VanillaVsModified(p) => {
                at_least("n", p.n, 1)?;
                positive("tau", p.tau)?;
                positive("eta", p.eta)?;
                if p.eta * p.tau >= 1.0 {
                    return Err(HarnessError::config("params.eta: eta * tau must be below 1"));
                }
            }
            Self::NpgVsOnpg(p) => {
                at_least("n", p.n, 1)?;
                positive("tau", p.tau)?;
                if p.etas.is_empty() {
                    return Err(HarnessError::config("params.etas: empty stepsize grid"));
                }
                for &eta in &p.etas {
                    positive("etas", eta)?;
                    if eta * p.tau >= 1.0 {
                        return Err(HarnessError::config("params.etas: eta * tau must be below 1"));
                    }
                }
            }
            Self::MatrixFa(p) => {
                at_least("d", p.d, 1)?;
                if p.d > p.n {
                    return Err(HarnessError::config(format!(
                        "params.d: feature dimension {} exceeds n = {}",
                        p.d, p.n
                    )));
                }
                positive("tau", p.tau)?;
                if let Some(eta) = p.eta {
                    positive("eta", eta)?;
                }
            }
            Self::MonotoneMethods(p) => {
                at_least("n", p.n, 1)?;
                at_least("players", p.players, 2)?;
                if p.instance != MonotoneInstance::Cyclic && p.players != 2 {
                    return Err(HarnessError::config(
                        "params.players: only the cyclic instance supports more than two players",
                    ));
                }
                positive("tau", p.tau)?;
                if !(p.self_weight >= 0.0) {
                    return Err(HarnessError::config("params.self_weight: must be nonnegative"));
                }
                if let Some(eta) = p.eta {
                    positive("eta", eta)?;
                }
            }
            Self::MarkovTabular(p) | Self::MarkovFa(p) => {
                at_least("states", p.states, 1)?;
                at_least("actions", p.actions, 1)?;
                at_least("inner", p.inner, 1)?;
                if !(0.0..1.0).contains(&p.gamma) {
                    return Err(HarnessError::config("params.gamma: must lie in [0, 1)"));
                }
                if !(p.tau > 0.0 && p.tau < 1.0) {
                    return Err(HarnessError::config("params.tau: must lie in (0, 1)"));
                }
                if let Some(eta) = p.eta {
                    positive("eta", eta)?;
                }
            }
        }
        Ok(())
    }
}

impl ExperimentConfig {
    pub fn new(experiment: Experiment, seed: u64) -> Self {
        Self {
            version: CONFIG_VERSION,
            seed,
            rng: RNG_NAME.to_string(),
            out: None,
            experiment,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| HarnessError::config(e.message().to_string()))?;
        if raw.version != CONFIG_VERSION {
            return Err(HarnessError::config(format!(
                "version: unsupported version {}, expected {CONFIG_VERSION}",
                raw.version
            )));
        }
        if raw.rng != RNG_NAME {
            return Err(HarnessError::config(format!(
                "rng: unsupported generator {:?}, expected {RNG_NAME:?}",
                raw.rng
            )));
        }
        Ok(Self {
            version: raw.version,
            seed: raw.seed,
            rng: raw.rng,
            out: raw.out,
            experiment: parse_params(&raw.experiment, raw.params)?,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            version: u32,
            seed: u64,
            rng: &'a str,
            #[serde(skip_serializing_if = "Option::is_none")]
            out: Option<&'a Path>,
            #[serde(flatten)]
            experiment: &'a Experiment,
        }
        toml::to_string(&Out {
            version: self.version,
            seed: self.seed,
            rng: &self.rng,
            out: self.out.as_deref(),
            experiment: &self.experiment,
        })
        .expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_fill_missing_params() {
        let cfg = ExperimentConfig::parse("version = 1\nexperiment = \"npg-vs-onpg\"\n").unwrap();
        assert_eq!(cfg.seed, 0);
        assert_eq!(cfg.experiment, Experiment::NpgVsOnpg(NpgVsOnpgParams::default()));
    }

    #[test]
    fn markov_fa_defaults_differ_from_tabular() {
        let cfg = ExperimentConfig::parse(
            "version = 1\nexperiment = \"markov-fa\"\n[params]\nouter = 7\n",
        )
        .unwrap();
        let Experiment::MarkovFa(p) = cfg.experiment else { panic!() };
        assert_eq!((p.states, p.actions, p.outer, p.warm_start), (10, 10, 7, true));
    }

    #[test]
    fn unknown_fields_are_named() {
        let err = ExperimentConfig::parse(
            "version = 1\nexperiment = \"matrix-fa\"\n[params]\ntua = 0.1\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("tua"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn validation_names_the_field() {
        let err = ExperimentConfig::parse(
            "version = 1\nexperiment = \"matrix-fa\"\n[params]\nn = 4\nd = 6\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("params.d"), "{err}");
        let err = ExperimentConfig::parse("version = 2\nexperiment = \"matrix-fa\"\n").unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
        let err = ExperimentConfig::parse("version = 1\nexperiment = \"fig9\"\n").unwrap_err();
        assert!(err.to_string().contains("experiment"), "{err}");
    }

    #[test]
    fn round_trips_through_toml() {
        for id in EXPERIMENT_IDS {
            let mut cfg = ExperimentConfig::new(Experiment::default_for(id).unwrap(), 17);
            cfg.out = Some("somewhere".into());
            let back = ExperimentConfig::parse(&cfg.to_toml()).unwrap();
            assert_eq!(back, cfg, "{id}");
        }
    }
}
