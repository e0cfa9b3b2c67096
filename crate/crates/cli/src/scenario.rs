//! Scenario files: the conversation (`name`, `model_name`, `user_id`,
//! `messages`) plus harness settings under `harness:`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use discedge_core::engine::GenerationParams;
use discedge_core::manager::{ConsistencyPolicy, ModelConfig, NodeConfig, ProfileRef};
use discedge_core::protocol::ContextMode;
use discedge_core::transport::LinkSpec;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "DISCEDGE_SEED";

/// Id the harness client uses on the simulated network.
pub const CLIENT_ID: &str = "client";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid scenario {path}: {source}")]
    Parse { path: String, source: serde_yaml::Error },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub model_name: String,
    pub user_id: String,
    pub messages: Vec<String>,
    #[serde(default)]
    pub harness: HarnessConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarnessConfig {
    pub modes: Vec<ContextMode>,
    pub repeats: u32,
    pub seed: u64,
    /// Node id -> hardware profile. Every node serves the model and belongs
    /// to its keygroup.
    pub nodes: BTreeMap<String, ProfileRef>,
    /// Node per message, by position. Empty means the first node throughout;
    /// messages past the end stay on the last entry.
    pub schedule: Vec<String>,
    pub client_latency_ms: f64,
    pub node_latency_ms: f64,
    pub jitter_ms: f64,
    /// Overrides for individual directed links, applied after the defaults.
    pub links: Vec<LinkSpec>,
    pub policy: ConsistencyPolicy,
    pub ttl_s: f64,
    pub params: GenerationParams,
    /// Model id used on the wire. Defaults to `model_name` with `/`
    /// replaced by `__`, since keys cannot contain `/`.
    pub model_id: Option<String>,
    pub system_prompt: Option<String>,
    pub vocab: Option<PathBuf>,
    /// Live mode: scale applied to simulated engine time on the nodes.
    pub time_scale: f64,
    /// Live mode: node id -> node API address of already running nodes.
    /// When empty the harness starts its own nodes.
    pub endpoints: BTreeMap<String, String>,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            modes: vec![ContextMode::Raw, ContextMode::Tokenized, ContextMode::ClientSide],
            repeats: 3,
            seed: 42,
            nodes: BTreeMap::from([("A".to_string(), ProfileRef::default())]),
            schedule: Vec::new(),
            client_latency_ms: 5.0,
            node_latency_ms: 5.0,
            jitter_ms: 0.0,
            links: Vec::new(),
            policy: ConsistencyPolicy::default(),
            ttl_s: 3600.0,
            params: GenerationParams::default(),
            model_id: None,
            system_prompt: None,
            vocab: None,
            time_scale: 1.0,
            endpoints: BTreeMap::new(),
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Read { path: display.clone(), source })?;
        let mut config: Self =
            serde_yaml::from_str(&text).map_err(|source| ScenarioError::Parse { path: display, source })?;
        if let Some(dir) = path.parent() {
            if let Some(v) = config.harness.vocab.as_mut().filter(|v| v.is_relative()) {
                *v = dir.join(&*v);
            }
        }
        config.validate()?;
        Ok(config)
    }

    /// Replaces the seed with `DISCEDGE_SEED` when set.
    pub fn apply_env(&mut self) -> Result<(), ScenarioError> {
        match std::env::var(SEED_ENV) {
            Ok(v) => {
                self.harness.seed = v
                    .trim()
                    .parse()
                    .map_err(|_| ScenarioError::Invalid(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
                Ok(())
            }
            Err(_) => Ok(()),
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        let h = &self.harness;
        if self.messages.is_empty() {
            return bad("at least one message is required".into());
        }
        if h.repeats == 0 {
            return bad("repeats must be at least 1".into());
        }
        if h.modes.is_empty() {
            return bad("at least one mode is required".into());
        }
        if h.nodes.is_empty() {
            return bad("at least one node is required".into());
        }
        if let Some(n) = h.schedule.iter().find(|n| !h.nodes.contains_key(*n)) {
            return bad(format!("schedule names unknown node {n}"));
        }
        if h.nodes.contains_key(CLIENT_ID) {
            return bad(format!("{CLIENT_ID} is reserved for the harness client"));
        }
        if h.time_scale < 0.0 {
            return bad("time_scale must be non-negative".into());
        }
        for id in h.nodes.keys() {
            self.node_config(id).validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        }
        Ok(())
    }

    pub fn model_id(&self) -> String {
        self.harness.model_id.clone().unwrap_or_else(|| self.model_name.replace('/', "__"))
    }

    pub fn node_ids(&self) -> Vec<String> {
        self.harness.nodes.keys().cloned().collect()
    }

    pub fn node_for(&self, message_index: usize) -> &str {
        let h = &self.harness;
        h.schedule
            .get(message_index)
            .or_else(|| h.schedule.last())
            .map(String::as_str)
            .unwrap_or_else(|| h.nodes.keys().next().expect("validated"))
    }

    /// Config for one node with no listeners set.
    pub fn node_config(&self, id: &str) -> NodeConfig {
        let h = &self.harness;
        let model = self.model_id();
        let mut c = NodeConfig::new(id, &[]);
        c.models = vec![ModelConfig { id: model.clone(), vocab: h.vocab.clone() }];
        c.keygroups.insert(model, self.node_ids());
        c.policy = h.policy.clone();
        c.profile = h.nodes.get(id).cloned().unwrap_or_default();
        c.ttl_s = h.ttl_s;
        c.time_scale = h.time_scale;
        c
    }

    /// Default links (client to every node, every node pair) with the
    /// explicit overrides applied last.
    pub fn link_specs(&self) -> Vec<LinkSpec> {
        let h = &self.harness;
        let ids = self.node_ids();
        let spec = |from: &str, to: &str, latency_ms| LinkSpec { jitter_ms: h.jitter_ms, ..LinkSpec::new(from, to, latency_ms) };
        let mut out = Vec::new();
        for a in &ids {
            out.push(spec(CLIENT_ID, a, h.client_latency_ms));
            out.push(spec(a, CLIENT_ID, h.client_latency_ms));
            for b in ids.iter().filter(|b| *b != a) {
                out.push(spec(a, b, h.node_latency_ms));
            }
        }
        out.extend(h.links.iter().cloned());
        out
    }
}

/// The conversation shipped with the crate: nine robotics questions over a
/// two-node mobility schedule.
pub const DEFAULT_SCENARIO: &str = include_str!("../scenarios/robotics.yaml");

pub fn default_scenario() -> ScenarioConfig {
    serde_yaml::from_str(DEFAULT_SCENARIO).expect("shipped scenario parses")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_scenario() {
        let s = default_scenario();
        s.validate().unwrap();
        assert_eq!(s.messages.len(), 9);
        assert_eq!(s.model_id(), "Qwen__Qwen1.5-0.5B-Chat");
        let route: Vec<&str> = (0..10).map(|i| s.node_for(i)).collect();
        assert_eq!(route, ["A", "A", "B", "B", "A", "A", "B", "B", "B", "B"]);
    }

    #[test]
    fn minimal_scenario_uses_defaults() {
        let s: ScenarioConfig = serde_yaml::from_str("name: t\nmodel_name: m\nuser_id: u\nmessages: [hi]\n").unwrap();
        s.validate().unwrap();
        assert_eq!(s.harness.repeats, 3);
        assert_eq!(s.node_for(5), "A");
        assert_eq!(s.link_specs().len(), 2);
    }

    #[test]
    fn overrides_come_last() {
        let mut s = default_scenario();
        s.harness.links.push(LinkSpec::new("A", "B", 50.0));
        let links = s.link_specs();
        let last = links.iter().rev().find(|l| l.from == "A" && l.to == "B").unwrap();
        assert_eq!(last.latency_ms, 50.0);
    }

    #[test]
    fn rejects_bad_scenarios() {
        let mut s = default_scenario();
        s.harness.schedule.push("Z".into());
        assert!(s.validate().is_err());
        let mut s = default_scenario();
        s.messages.clear();
        assert!(s.validate().is_err());
    }
}
