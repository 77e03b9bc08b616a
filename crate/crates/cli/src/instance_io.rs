//! Seeded instance generation and the versioned TOML instance format.

use std::path::Path;

use nalgebra::DMatrix;
use npg_core::instances::{
    first_action_features, random_cost_matrix, random_invertible, random_markov,
    uniform_transition_markov, SeededRng,
};
use npg_core::monotone::{verify_spec, zero_sum_as_monotone};
use npg_core::{CostMatrix, FeatureMap, MarkovFeatureMap, MarkovGameSpec};
use serde::{Deserialize, Serialize};

use crate::config::{CONFIG_VERSION, RNG_NAME};
use crate::error::{HarnessError, Result};

pub const INSTANCE_KINDS: [&str; 5] = ["matrix", "matrix-fa", "monotone-wrapped", "markov", "markov-fa"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub version: u32,
    pub seed: u64,
    pub rng: String,
    pub instance: InstanceData,
}

/// Matrices are stored row by row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum InstanceData {
    Matrix {
        q: Vec<Vec<f64>>,
    },
    MatrixFa {
        q: Vec<Vec<f64>>,
        /// `d × n` feature matrix `[M | 0]`.
        phi: Vec<Vec<f64>>,
    },
    MonotoneWrapped {
        tau: f64,
        q: Vec<Vec<f64>>,
    },
    Markov {
        states: usize,
        actions: usize,
        gamma: f64,
        tau: f64,
        /// One next-state distribution per `(s, a, b)`, in that order.
        transitions: Vec<Vec<f64>>,
        /// One reward matrix per state.
        rewards: Vec<Vec<Vec<f64>>>,
    },
    MarkovFa {
        states: usize,
        actions: usize,
        gamma: f64,
        tau: f64,
        transitions: Vec<Vec<f64>>,
        rewards: Vec<Vec<Vec<f64>>>,
        /// `d × (S·n)` state-action features.
        phi: Vec<Vec<f64>>,
    },
}

/// A loaded instance after every structural check has passed.
#[derive(Clone, Debug)]
pub enum Instance {
    Matrix(CostMatrix),
    MatrixFa { q: CostMatrix, features: FeatureMap },
    MonotoneWrapped { q: CostMatrix, tau: f64 },
    Markov(MarkovGameSpec),
    MarkovFa { spec: MarkovGameSpec, features: MarkovFeatureMap },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GenOptions {
    pub gamma: f64,
    pub tau: f64,
}

impl Default for GenOptions {
    fn default() -> Self {
        Self { gamma: 0.8, tau: 0.1 }
    }
}

/// Parses `"n"` or `"AxB"` into its components.
pub fn parse_size(size: &str) -> Result<Vec<usize>> {
    let parts: std::result::Result<Vec<usize>, _> =
        size.split(['x', 'X']).map(|p| p.trim().parse::<usize>()).collect();
    match parts {
        Ok(p) if !p.is_empty() && p.len() <= 2 && p.iter().all(|&x| x > 0) => Ok(p),
        _ => Err(HarnessError::instance(format!(
            "size: expected a positive integer or AxB, got {size:?}"
        ))),
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(HarnessError::instance(format!("{field}: ragged or empty matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

fn markov_parts(spec: &MarkovGameSpec) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let transitions = spec.transitions().chunks(spec.n_states()).map(<[f64]>::to_vec).collect();
    let rewards = spec.rewards().iter().map(rows).collect();
    (transitions, rewards)
}

pub fn generate_instance(kind: &str, size: &str, seed: u64, opts: GenOptions) -> Result<InstanceFile> {
    let dims = parse_size(size)?;
    let mut rng = SeededRng::new(seed);
    let want = |k: usize, shape: &str| -> Result<()> {
        if dims.len() == k {
            Ok(())
        } else {
            Err(HarnessError::instance(format!("size: {kind} expects {shape}, got {size:?}")))
        }
    };
    let instance = match kind {
        "matrix" => {
            let (n, m) = (dims[0], *dims.get(1).unwrap_or(&dims[0]));
            InstanceData::Matrix { q: rows(random_cost_matrix(n, m, &mut rng).entries()) }
        }
        "matrix-fa" => {
            want(2, "NxD")?;
            let (n, d) = (dims[0], dims[1]);
            if d > n {
                return Err(HarnessError::instance(format!("size: d = {d} exceeds n = {n}")));
            }
            let q = random_cost_matrix(n, n, &mut rng);
            let fmap = FeatureMap::build(random_invertible(d, &mut rng), n)?;
            InstanceData::MatrixFa { q: rows(q.entries()), phi: rows(fmap.phi()) }
        }
        "monotone-wrapped" => {
            want(1, "N")?;
            let q = random_cost_matrix(dims[0], dims[0], &mut rng);
            InstanceData::MonotoneWrapped { tau: opts.tau, q: rows(q.entries()) }
        }
        "markov" | "markov-fa" => {
            want(2, "SxA")?;
            let (states, actions) = (dims[0], dims[1]);
            if kind == "markov" {
                let spec = random_markov(states, actions, opts.gamma, opts.tau, &mut rng)?;
                let (transitions, rewards) = markov_parts(&spec);
                InstanceData::Markov { states, actions, gamma: opts.gamma, tau: opts.tau, transitions, rewards }
            } else {
                let spec = uniform_transition_markov(states, actions, opts.gamma, opts.tau, &mut rng)?;
                let (transitions, rewards) = markov_parts(&spec);
                let phi = rows(first_action_features(states, actions)?.phi());
                InstanceData::MarkovFa {
                    states,
                    actions,
                    gamma: opts.gamma,
                    tau: opts.tau,
                    transitions,
                    rewards,
                    phi,
                }
            }
        }
        other => {
            return Err(HarnessError::instance(format!(
                "kind: unknown kind {other:?}, expected one of {}",
                INSTANCE_KINDS.join(", ")
            )))
        }
    };
    Ok(InstanceFile { version: CONFIG_VERSION, seed, rng: RNG_NAME.to_string(), instance })
}

fn markov_spec(
    states: usize,
    actions: usize,
    gamma: f64,
    tau: f64,
    transitions: &[Vec<f64>],
    rewards: &[Vec<Vec<f64>>],
) -> Result<MarkovGameSpec> {
    if transitions.iter().any(|r| r.len() != states) {
        return Err(HarnessError::instance("transitions: every row needs one entry per state"));
    }
    let flat = transitions.concat();
    let rewards = rewards
        .iter()
        .map(|r| from_rows("rewards", r))
        .collect::<Result<Vec<_>>>()?;
    Ok(MarkovGameSpec::new(states, actions, flat, rewards, gamma, tau)?)
}

impl InstanceFile {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("instance serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let file: InstanceFile =
            toml::from_str(text).map_err(|e| HarnessError::instance(e.message().to_string()))?;
        if file.version != CONFIG_VERSION {
            return Err(HarnessError::instance(format!("version: unsupported version {}", file.version)));
        }
        if file.rng != RNG_NAME {
            return Err(HarnessError::instance(format!("rng: unsupported generator {:?}", file.rng)));
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Rebuilds the typed instance, re-running every invariant check.
    pub fn validate(&self) -> Result<Instance> {
        Ok(match &self.instance {
            InstanceData::Matrix { q } => Instance::Matrix(CostMatrix::new(from_rows("q", q)?)?),
            InstanceData::MatrixFa { q, phi } => {
                let q = CostMatrix::new(from_rows("q", q)?)?;
                let phi = from_rows("phi", phi)?;
                let (d, n) = phi.shape();
                if n != q.nrows() || q.nrows() != q.ncols() {
                    return Err(HarnessError::instance("phi: needs one column per action of a square game"));
                }
                if d > n || phi.columns(d, n - d).iter().any(|&x| x != 0.0) {
                    return Err(HarnessError::instance("phi: trailing columns must be zero"));
                }
                let features = FeatureMap::build(phi.columns(0, d).into_owned(), n)?;
                Instance::MatrixFa { q, features }
            }
            InstanceData::MonotoneWrapped { tau, q } => {
                let q = CostMatrix::new(from_rows("q", q)?)?;
                if q.nrows() != q.ncols() {
                    return Err(HarnessError::instance("q: wrapped games must be square"));
                }
                if !(*tau > 0.0) {
                    return Err(HarnessError::instance("tau: must be positive"));
                }
                verify_spec(&zero_sum_as_monotone(&q, *tau), self.seed)?;
                Instance::MonotoneWrapped { q, tau: *tau }
            }
            InstanceData::Markov { states, actions, gamma, tau, transitions, rewards } => {
                Instance::Markov(markov_spec(*states, *actions, *gamma, *tau, transitions, rewards)?)
            }
            InstanceData::MarkovFa { states, actions, gamma, tau, transitions, rewards, phi } => {
                let spec = markov_spec(*states, *actions, *gamma, *tau, transitions, rewards)?;
                let features = MarkovFeatureMap::new(from_rows("phi", phi)?, *states, *actions)?;
                Instance::MarkovFa { spec, features }
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn size_parsing() {
        assert_eq!(parse_size("5").unwrap(), vec![5]);
        assert_eq!(parse_size("8x3").unwrap(), vec![8, 3]);
        assert!(parse_size("0").is_err());
        assert!(parse_size("2x3x4").is_err());
        assert!(parse_size("five").is_err());
    }

    #[test]
    fn every_kind_round_trips_and_validates() {
        let sizes = [("matrix", "4"), ("matrix-fa", "6x2"), ("monotone-wrapped", "3"), ("markov", "3x2"), ("markov-fa", "4x3")];
        for (kind, size) in sizes {
            let file = generate_instance(kind, size, 5, GenOptions::default()).unwrap();
            let text = file.to_toml();
            let back = InstanceFile::parse(&text).unwrap();
            assert_eq!(back, file, "{kind}");
            back.validate().unwrap();
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_instance("markov", "3x3", 9, GenOptions::default()).unwrap().to_toml();
        let b = generate_instance("markov", "3x3", 9, GenOptions::default()).unwrap().to_toml();
        let c = generate_instance("markov", "3x3", 10, GenOptions::default()).unwrap().to_toml();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn broken_instances_are_rejected() {
        let mut file = generate_instance("markov", "2x2", 1, GenOptions::default()).unwrap();
        if let InstanceData::Markov { transitions, .. } = &mut file.instance {
            transitions[0][0] += 0.1;
        }
        assert_eq!(file.validate().unwrap_err().exit_code(), 2);

        let mut file = generate_instance("matrix-fa", "5x2", 1, GenOptions::default()).unwrap();
        if let InstanceData::MatrixFa { phi, .. } = &mut file.instance {
            phi[0][4] = 1.0;
        }
        assert!(file.validate().is_err());

        assert!(generate_instance("markov", "4", 1, GenOptions::default()).is_err());
        assert!(generate_instance("tensor", "4", 1, GenOptions::default()).is_err());
    }
}
