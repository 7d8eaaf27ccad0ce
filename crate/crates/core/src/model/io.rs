use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelMeta, Policy, Rmdp, RmdpParts, Sense, UncertaintySet, ValueFunction};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    states: usize,
    actions: usize,
    gamma: f64,
    sense: Sense,
    initial: Vec<f64>,
    rewards: Vec<Vec<f64>>,
    uncertainty: Vec<UncertaintySet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    enabled: Option<Vec<Vec<bool>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    meta: Option<ModelMeta>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_owned(), source })
}

fn write(path: &Path, text: String) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_owned(), source })
}

impl Rmdp {
    pub fn from_json(text: &str) -> Result<Rmdp> {
        let raw: RawModel = serde_json::from_str(text)?;
        Rmdp::new(RmdpParts {
            n_states: raw.states,
            n_actions: raw.actions,
            gamma: raw.gamma,
            sense: raw.sense,
            initial: raw.initial,
            rewards: raw.rewards,
            enabled: raw.enabled,
            uncertainty: raw.uncertainty,
            meta: raw.meta,
        })
    }

    pub fn to_json(&self) -> String {
        let all_enabled = self.enabled.iter().flatten().all(|&e| e);
        let raw = RawModel {
            states: self.n_states,
            actions: self.n_actions,
            gamma: self.gamma,
            sense: self.sense,
            initial: self.initial.clone(),
            rewards: self.rewards.clone(),
            uncertainty: self.uncertainty.clone(),
            enabled: (!all_enabled).then(|| self.enabled.clone()),
            meta: self.meta.clone(),
        };
        serde_json::to_string(&raw).expect("model serializes")
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Rmdp> {
    Rmdp::from_json(&read(path.as_ref())?)
}

pub fn save_model(m: &Rmdp, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), m.to_json())
}

pub fn load_policy(path: impl AsRef<Path>) -> Result<Policy> {
    let pi: Policy = serde_json::from_str(&read(path.as_ref())?)?;
    Policy::new(pi.dist)
}

pub fn save_policy(pi: &Policy, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), serde_json::to_string(pi)?)
}

pub fn save_values(v: &ValueFunction, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), serde_json::to_string(v)?)
}
