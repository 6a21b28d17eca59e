//! Run configuration read from a flat TOML file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::{default_target_entropy, AgentSpec, Algorithm, CriticSize, Energy, TdTarget};
use crate::error::{Error, Result};
use crate::task_settings::{Mode, SettingKind, SettingSpec};

pub const SIGMOID_BCE: &str = "sigmoid_binary_cross_entropy";

/// Every key is optional; missing keys take the desk-scale defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub num_env_steps: u64,
    pub num_updates: u64,
    /// Transitions kept per parallel environment.
    pub max_replay_size: usize,
    /// Transitions stored in total before the first update.
    pub min_replay_size: usize,
    pub episode_length: usize,
    pub discount: f64,
    pub num_parallel_envs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub contrastive_loss_function: String,
    /// `dot_product` or `l2`; ignored by non-contrastive critics.
    pub energy_function: String,
    pub representation_dimension: usize,
    pub target_entropy: f64,
    pub initial_temperature: f64,
    pub critic: CriticSize,
    /// Bootstrap with the expected Boltzmann value instead of the max.
    pub on_policy_target: bool,
    pub use_target_network: bool,
    pub target_update_period: u64,
    pub eval_episodes: usize,
    /// Learner updates between evaluations; 0 picks a tenth of the run.
    pub eval_interval: u64,
    /// Write 0 instead of elapsed seconds so metric files are reproducible.
    pub log_wall_time: bool,

    pub algo: Option<Algorithm>,
    pub seed: Option<u64>,
    pub setting: Option<SettingKind>,
    pub grid_size: Option<usize>,
    pub num_boxes: Option<usize>,
    pub num_preplaced: Option<usize>,
    pub mode: Option<Mode>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            num_env_steps: 2_000_000,
            num_updates: 200_000,
            max_replay_size: 10_000,
            min_replay_size: 1_000,
            episode_length: 100,
            discount: 0.99,
            num_parallel_envs: 64,
            batch_size: 256,
            learning_rate: 3e-4,
            contrastive_loss_function: SIGMOID_BCE.to_string(),
            energy_function: "dot_product".to_string(),
            representation_dimension: 64,
            target_entropy: default_target_entropy(),
            initial_temperature: 1.0,
            critic: CriticSize::Mlp256,
            on_policy_target: false,
            use_target_network: false,
            target_update_period: 1_000,
            eval_episodes: 256,
            eval_interval: 0,
            log_wall_time: true,
            algo: None,
            seed: None,
            setting: None,
            grid_size: None,
            num_boxes: None,
            num_preplaced: None,
            mode: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_env_steps", self.num_env_steps as usize),
            ("max_replay_size", self.max_replay_size),
            ("episode_length", self.episode_length),
            ("num_parallel_envs", self.num_parallel_envs),
            ("batch_size", self.batch_size),
            ("representation_dimension", self.representation_dimension),
            ("eval_episodes", self.eval_episodes),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.contrastive_loss_function != SIGMOID_BCE {
            return Err(Error::Config(format!(
                "contrastive_loss_function '{}' unsupported (only {SIGMOID_BCE})",
                self.contrastive_loss_function
            )));
        }
        self.energy()?;
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(
                "learning_rate must be positive and discount in [0, 1)".into(),
            ));
        }
        if self.use_target_network && self.target_update_period == 0 {
            return Err(Error::Config("target_update_period must be positive".into()));
        }
        Ok(())
    }

    fn energy(&self) -> Result<Energy> {
        match self.energy_function.as_str() {
            "dot_product" => Ok(Energy::DotProduct),
            "l2" => Ok(Energy::L2),
            other => Err(Error::Config(format!(
                "energy_function '{other}' (use dot_product or l2)"
            ))),
        }
    }

    /// Learner updates per collected environment step.
    pub fn update_ratio(&self) -> f64 {
        self.num_updates as f64 / self.num_env_steps as f64
    }

    /// Updates owed after `collected` environment steps.
    pub fn updates_due(&self, collected: u64) -> u64 {
        let due = (collected as u128 * self.num_updates as u128) / self.num_env_steps as u128;
        (due as u64).min(self.num_updates)
    }

    pub fn effective_eval_interval(&self) -> u64 {
        if self.eval_interval > 0 {
            self.eval_interval
        } else {
            (self.num_updates / 10).max(1)
        }
    }

    pub fn agent_spec(&self, algorithm: Algorithm, grid_size: usize) -> Result<AgentSpec> {
        let mut spec = AgentSpec::new(algorithm, grid_size)
            .with_critic_size(self.critic)
            .with_repr_dim(self.representation_dimension);
        spec.discount = self.discount;
        spec.learning_rate = self.learning_rate;
        spec.batch_size = self.batch_size;
        spec.initial_temperature = self.initial_temperature;
        spec.target_entropy = self.target_entropy;
        if algorithm == Algorithm::Crl {
            spec.energy = self.energy()?;
        }
        spec.td_target = if self.on_policy_target {
            TdTarget::ExpectedBoltzmann
        } else {
            TdTarget::Max
        };
        spec.target_update_period = self.use_target_network.then_some(self.target_update_period);
        spec.validate()?;
        Ok(spec)
    }

    /// Setting described by the config's setting keys, if complete.
    pub fn setting_spec(&self) -> Option<SettingSpec> {
        let kind = self.setting?;
        let mut spec = SettingSpec::new(kind, self.grid_size?, self.num_boxes?, self.mode.unwrap_or(Mode::Train));
        spec.m_preplaced = self.num_preplaced.unwrap_or(0);
        Some(spec)
    }
}
