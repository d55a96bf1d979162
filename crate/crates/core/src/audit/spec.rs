//! The JSON MDP specification file and its validated form, [`Instance`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::json::to_canonical_json;
use crate::emphasis::InterestVector;
use crate::error::EtdError;
use crate::mdp::{check_lambda, importance_ratios, FeatureMap, Policy, TabularMdp};

/// Policy names an instance file must define.
pub const TARGET_POLICY: &str = "target";
pub const BEHAVIOR_POLICY: &str = "behavior";

/// States or actions, given either as a count or as a list of names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Labels {
    Count(usize),
    Names(Vec<String>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Count(n) => *n,
            Labels::Names(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Raw contents of an MDP specification file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub states: Labels,
    pub actions: Labels,
    /// `[action][state][next_state]`
    pub transition: Vec<Vec<Vec<f64>>>,
    /// `[state][action]`
    pub reward: Vec<Vec<f64>>,
    pub gamma: f64,
    pub initial_dist: Vec<f64>,
    /// Named `[state][action]` tables; `target` and `behavior` are required.
    pub policies: BTreeMap<String, Vec<Vec<f64>>>,
    /// `[state][feature]`; tabular identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interest: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Seed for stochastic runs shipped with a fixture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Failure to load or validate a specification, with a stable error code.
#[derive(Debug, Error)]
pub enum SpecError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },

    #[error("malformed spec at line {line}, column {column}: {message}")]
    Malformed { line: usize, column: usize, message: String },

    #[error("dimension mismatch in {field}: {message}")]
    Dimension { field: String, message: String },

    #[error("stochasticity violation in {field}: {message}")]
    Stochasticity { field: String, message: String },

    #[error("coverage violation: {0}")]
    Coverage(String),

    #[error("invalid value in {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("fixture {name} failed verification: {message}")]
    CorruptedFixture { name: String, message: String },
}

impl SpecError {
    pub fn code(&self) -> &'static str {
        match self {
            SpecError::Io { .. } => "E_IO",
            SpecError::Malformed { .. } => "E_MALFORMED",
            SpecError::Dimension { .. } => "E_DIMENSION",
            SpecError::Stochasticity { .. } => "E_STOCHASTICITY",
            SpecError::Coverage(_) => "E_COVERAGE",
            SpecError::Invalid { .. } => "E_INVALID",
            SpecError::CorruptedFixture { .. } => "E_FIXTURE",
        }
    }

    fn from_etd(field: &str, err: EtdError) -> Self {
        let field = field.to_string();
        match err {
            EtdError::Dimension(message) => SpecError::Dimension { field, message },
            e @ (EtdError::Stochasticity { .. } | EtdError::NegativeProbability { .. }) => {
                SpecError::Stochasticity { field, message: e.to_string() }
            }
            e @ EtdError::Coverage { .. } => SpecError::Coverage(e.to_string()),
            e => SpecError::Invalid { field, message: e.to_string() },
        }
    }
}

/// Where an instance came from; fixtures carry the parameters they were built with.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Origin {
    File { path: String },
    TwoState { epsilon: f64, gamma: f64 },
    Random { seed: u64, n_states: usize, n_actions: usize, min_prob: f64 },
    Divergence,
}

/// A validated specification: the MDP, both policies, features, interest and λ.
#[derive(Debug, Clone)]
pub struct Instance {
    pub spec: SpecFile,
    pub origin: Origin,
    pub mdp: TabularMdp,
    pub target: Policy,
    pub behavior: Policy,
    pub features: FeatureMap,
    pub interest: InterestVector,
    pub lambda: f64,
}

fn rect(field: &str, rows: &[Vec<f64>], n_rows: usize, n_cols: usize) -> Result<DMatrix<f64>, SpecError> {
    if rows.len() != n_rows {
        return Err(SpecError::Dimension {
            field: field.into(),
            message: format!("has {} rows, expected {n_rows}", rows.len()),
        });
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != n_cols {
            return Err(SpecError::Dimension {
                field: format!("{field}[{i}]"),
                message: format!("has {} entries, expected {n_cols}", r.len()),
            });
        }
    }
    Ok(DMatrix::from_fn(n_rows, n_cols, |i, j| rows[i][j]))
}

fn vector(field: &str, values: &[f64], n: usize) -> Result<DVector<f64>, SpecError> {
    if values.len() != n {
        return Err(SpecError::Dimension {
            field: field.into(),
            message: format!("has {} entries, expected {n}", values.len()),
        });
    }
    Ok(DVector::from_column_slice(values))
}

impl Instance {
    /// Validates a spec; every check of the model types applies here.
    pub fn from_spec(spec: SpecFile, origin: Origin) -> Result<Self, SpecError> {
        let n = spec.states.len();
        let k = spec.actions.len();
        if n == 0 || k == 0 {
            return Err(SpecError::Dimension {
                field: "states/actions".into(),
                message: "need at least one state and one action".into(),
            });
        }
        if spec.transition.len() != k {
            return Err(SpecError::Dimension {
                field: "transition".into(),
                message: format!("has {} action blocks, expected {k}", spec.transition.len()),
            });
        }
        let transition = spec
            .transition
            .iter()
            .enumerate()
            .map(|(a, block)| rect(&format!("transition[{a}]"), block, n, n))
            .collect::<Result<Vec<_>, _>>()?;
        let reward = rect("reward", &spec.reward, n, k)?;
        let initial = vector("initial_dist", &spec.initial_dist, n)?;
        let mdp = TabularMdp::new(transition, reward, spec.gamma, initial).map_err(|e| {
            let field = match &e {
                EtdError::Stochasticity { what, .. } | EtdError::NegativeProbability { what, .. } => what.clone(),
                EtdError::InvalidParameter { name, .. } => (*name).to_string(),
                _ => "mdp".to_string(),
            };
            SpecError::from_etd(&field, e)
        })?;

        let mut policies = BTreeMap::new();
        for (name, rows) in &spec.policies {
            let field = format!("policies.{name}");
            let table = rect(&field, rows, n, k)?;
            let pol = Policy::new(table).map_err(|e| SpecError::from_etd(&field, e))?;
            policies.insert(name.clone(), pol);
        }
        let take = |name: &str| {
            policies.get(name).cloned().ok_or_else(|| SpecError::Invalid {
                field: "policies".into(),
                message: format!("missing required policy '{name}'"),
            })
        };
        let target = take(TARGET_POLICY)?;
        let behavior = take(BEHAVIOR_POLICY)?;
        importance_ratios(&target, &behavior).map_err(|e| SpecError::from_etd("policies", e))?;

        let features = match &spec.features {
            None => FeatureMap::tabular(n),
            Some(rows) => {
                let n_features = rows.first().map_or(0, Vec::len);
                let m = rect("features", rows, n, n_features)?;
                FeatureMap::new(m).map_err(|e| SpecError::from_etd("features", e))?
            }
        };
        let interest = match &spec.interest {
            None => InterestVector::ones(n),
            Some(values) => {
                InterestVector::new(vector("interest", values, n)?).map_err(|e| SpecError::from_etd("interest", e))?
            }
        };
        let lambda = spec.lambda.unwrap_or(0.0);
        check_lambda(lambda).map_err(|e| SpecError::from_etd("lambda", e))?;

        Ok(Self { spec, origin, mdp, target, behavior, features, interest, lambda })
    }

    pub fn name(&self) -> String {
        self.spec.name.clone().unwrap_or_else(|| match &self.origin {
            Origin::File { path } => path.clone(),
            Origin::TwoState { .. } => "two_state".into(),
            Origin::Random { .. } => "random".into(),
            Origin::Divergence => "divergence".into(),
        })
    }

    /// Canonical file text; [`parse_spec_str`] restores the identical spec.
    pub fn to_json(&self) -> String {
        write_spec(&self.spec)
    }

    /// SHA-256 of the canonical file text.
    pub fn content_hash(&self) -> String {
        content_hash(&self.spec)
    }
}

pub fn write_spec(spec: &SpecFile) -> String {
    to_canonical_json(spec)
}

pub fn content_hash(spec: &SpecFile) -> String {
    hex::encode(Sha256::digest(write_spec(spec).as_bytes()))
}

pub fn parse_spec_str(text: &str, origin: Origin) -> Result<Instance, SpecError> {
    let spec: SpecFile = serde_json::from_str(text).map_err(|e| SpecError::Malformed {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    Instance::from_spec(spec, origin)
}

pub fn parse_spec(path: &Path) -> Result<Instance, SpecError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SpecError::Io { path: path.display().to_string(), message: e.to_string() })?;
    parse_spec_str(&text, Origin::File { path: path.display().to_string() })
}
