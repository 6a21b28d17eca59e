//! Critic learners and the Boltzmann behavior policy.

pub mod features;
pub mod losses;
pub mod policy;

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use losses::{Energy, LossOutput, TdTarget};
pub use policy::{boltzmann_probs, boltzmann_sample, default_target_entropy, entropy, update_temperature};

use crate::error::{Error, Result};
use crate::grid_env::{Action, BoxSet, GoalObservation, GridState};
use crate::neural::checkpoint::{read_checkpoint, write_checkpoint};
use crate::neural::{adam_step, build_critic, AdamState, ArchKind, ArchSpec, CriticNet, Matrix, ParamSet, Trunk};
use crate::replay::{FutureDistribution, ReplayBuffer};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    DqnTd,
    DqnMc,
    ClearnTd,
    ClearnMc,
    Crl,
    Cmd,
}

impl Algorithm {
    pub const ALL: [Algorithm; 6] = [
        Algorithm::DqnTd,
        Algorithm::DqnMc,
        Algorithm::ClearnTd,
        Algorithm::ClearnMc,
        Algorithm::Crl,
        Algorithm::Cmd,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DqnTd => "dqn_td",
            Algorithm::DqnMc => "dqn_mc",
            Algorithm::ClearnTd => "clearn_td",
            Algorithm::ClearnMc => "clearn_mc",
            Algorithm::Crl => "crl",
            Algorithm::Cmd => "cmd",
        }
    }

    pub fn uses_encoders(self) -> bool {
        matches!(self, Algorithm::Crl | Algorithm::Cmd)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown algorithm '{s}'")))
    }
}

/// Critic size, shared by score heads and encoders.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CriticSize {
    Mlp256,
    ResnetLarge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub algorithm: Algorithm,
    pub grid_size: usize,
    pub arch: ArchSpec,
    pub discount: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub initial_temperature: f64,
    pub target_entropy: f64,
    pub temperature_lr: f64,
    /// Pairwise critics only; `Cmd` always uses the quasimetric.
    pub energy: Energy,
    pub td_target: TdTarget,
    /// Copy the online parameters into a frozen target every this many updates.
    pub target_update_period: Option<u64>,
}

pub const DEFAULT_REPR_DIM: usize = 64;

impl AgentSpec {
    pub fn new(algorithm: Algorithm, grid_size: usize) -> Self {
        let arch = match algorithm {
            Algorithm::Crl => ArchSpec::twin_encoder(
                features::state_action_dim(grid_size),
                features::goal_dim(grid_size),
                DEFAULT_REPR_DIM,
            ),
            Algorithm::Cmd => ArchSpec::quasimetric_encoder(
                features::state_action_dim(grid_size),
                features::goal_dim(grid_size),
                DEFAULT_REPR_DIM,
            ),
            _ => ArchSpec::mlp256(features::head_input_dim(grid_size), Action::COUNT),
        };
        AgentSpec {
            algorithm,
            grid_size,
            arch,
            discount: 0.99,
            learning_rate: 3e-4,
            batch_size: 256,
            initial_temperature: 1.0,
            target_entropy: default_target_entropy(),
            temperature_lr: policy::TEMPERATURE_LR,
            energy: if algorithm == Algorithm::Cmd {
                Energy::Quasimetric
            } else {
                Energy::DotProduct
            },
            td_target: TdTarget::Max,
            target_update_period: None,
        }
    }

    pub fn with_critic_size(mut self, size: CriticSize) -> Self {
        let trunk = match size {
            CriticSize::Mlp256 => Trunk::mlp256(),
            CriticSize::ResnetLarge => Trunk::resnet_large(),
        };
        if !self.algorithm.uses_encoders() {
            self.arch.kind = match size {
                CriticSize::Mlp256 => ArchKind::Mlp256,
                CriticSize::ResnetLarge => ArchKind::ResNetLarge,
            };
        }
        self.arch.trunk = trunk;
        self
    }

    pub fn with_trunk(mut self, trunk: Trunk) -> Self {
        self.arch.trunk = trunk;
        self
    }

    pub fn with_repr_dim(mut self, repr_dim: usize) -> Self {
        if self.algorithm.uses_encoders() {
            self.arch.repr_dim = repr_dim;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let enc = self.algorithm.uses_encoders();
        if enc != self.arch.kind.is_encoder() {
            return Err(Error::Config(format!(
                "{} cannot use a {:?} critic",
                self.algorithm, self.arch.kind
            )));
        }
        let (want_in, want_goal) = if enc {
            (
                features::state_action_dim(self.grid_size),
                features::goal_dim(self.grid_size),
            )
        } else {
            (features::head_input_dim(self.grid_size), 0)
        };
        if self.arch.input_dim != want_in || (enc && self.arch.goal_dim != want_goal) {
            return Err(Error::Config("critic input widths do not match the grid size".into()));
        }
        if !enc && self.arch.output_dim != Action::COUNT {
            return Err(Error::Config("score head must output one value per action".into()));
        }
        match (self.algorithm, self.energy) {
            (Algorithm::Cmd, Energy::Quasimetric) => {}
            (Algorithm::Cmd, _) => return Err(Error::Config("cmd requires the quasimetric energy".into())),
            (Algorithm::Crl, Energy::Quasimetric) => {
                return Err(Error::Config("crl energy must be dot_product or l2".into()))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.discount) {
            return Err(Error::Config(format!("discount {} outside [0, 1)", self.discount)));
        }
        if self.batch_size < 2 || !(self.learning_rate > 0.0) {
            return Err(Error::Config(
                "batch_size >= 2 and a positive learning rate are required".into(),
            ));
        }
        if !(policy::MIN_TEMPERATURE..=policy::MAX_TEMPERATURE).contains(&self.initial_temperature) {
            return Err(Error::Config(format!(
                "initial temperature {}",
                self.initial_temperature
            )));
        }
        if self.target_update_period == Some(0) {
            return Err(Error::Config("target_update_period must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    spec: AgentSpec,
    temperature: f64,
    updates: u64,
    #[serde(default)]
    extra: serde_json::Value,
}

/// A critic, its optimizer state and the shared policy temperature.
#[derive(Debug)]
pub struct Agent<S: Scalar> {
    spec: AgentSpec,
    net: CriticNet,
    params: ParamSet<S>,
    target: Option<ParamSet<S>>,
    adam: AdamState<S>,
    temperature: f64,
    updates: u64,
}

impl<S: Scalar> Agent<S> {
    pub fn new<R: Rng + ?Sized>(spec: AgentSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let (net, params) = build_critic(&spec.arch, rng)?;
        let target = spec.target_update_period.map(|_| params.clone());
        let adam = AdamState::new(&params);
        Ok(Agent {
            temperature: spec.initial_temperature,
            spec,
            net,
            params,
            target,
            adam,
            updates: 0,
        })
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<S> {
        &mut self.params
    }

    pub fn network(&self) -> &CriticNet {
        &self.net
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, t: f64) {
        self.temperature = t.clamp(policy::MIN_TEMPERATURE, policy::MAX_TEMPERATURE);
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// One controller step toward the target entropy.
    pub fn update_temperature(&mut self, mean_entropy: f64) {
        self.temperature = update_temperature(
            self.temperature,
            mean_entropy,
            self.spec.target_entropy,
            self.spec.temperature_lr,
        );
    }

    fn head_input(&self, rows: impl ExactSizeIterator<Item = (GridState, BoxSet)>) -> Matrix<S> {
        let width = features::head_input_dim(self.spec.grid_size);
        let n = rows.len();
        let mut m = Matrix::zeros(n, width);
        for (r, (s, g)) in rows.enumerate() {
            features::write_head_input(&s, g, m.row_mut(r));
        }
        m
    }

    fn sa_input(&self, rows: impl ExactSizeIterator<Item = (GridState, Action)>) -> Matrix<S> {
        let width = features::state_action_dim(self.spec.grid_size);
        let mut m = Matrix::zeros(rows.len(), width);
        for (r, (s, a)) in rows.enumerate() {
            features::write_state_action(&s, a, m.row_mut(r));
        }
        m
    }

    fn goal_input(&self, goals: impl ExactSizeIterator<Item = BoxSet>) -> Matrix<S> {
        let width = features::goal_dim(self.spec.grid_size);
        let mut m = Matrix::zeros(goals.len(), width);
        for (r, g) in goals.enumerate() {
            features::write_goal_input(self.spec.grid_size, g, m.row_mut(r));
        }
        m
    }

    fn check_query(&self, state: &GridState, goal: BoxSet) -> Result<()> {
        if state.grid_size() != self.spec.grid_size {
            return Err(Error::SizeMismatch {
                state: state.grid_size(),
                goal: self.spec.grid_size,
            });
        }
        let cells = self.spec.grid_size * self.spec.grid_size;
        if cells < 64 && goal.0 >> cells != 0 {
            return Err(Error::InvalidGoal("goal box outside the grid".into()));
        }
        Ok(())
    }

    /// Action scores for each `(state, goal)` query under `params`.
    fn scores_with(&self, params: &ParamSet<S>, queries: &[(GridState, BoxSet)]) -> Result<Matrix<S>> {
        for (s, g) in queries {
            self.check_query(s, *g)?;
        }
        match &self.net {
            CriticNet::Head(net) => net.infer(params, &self.head_input(queries.iter().copied())),
            CriticNet::Twin { sa, goal } => {
                let sa_rows = queries
                    .iter()
                    .flat_map(|(s, _)| Action::ALL.into_iter().map(move |a| (*s, a)))
                    .collect::<Vec<_>>();
                let phi = sa.infer(params, &self.sa_input(sa_rows.into_iter()))?;
                let psi = goal.infer(params, &self.goal_input(queries.iter().map(|q| q.1)))?;
                let mut out = Matrix::zeros(queries.len(), Action::COUNT);
                for i in 0..queries.len() {
                    for a in 0..Action::COUNT {
                        let v = losses::pair_logit(phi.row(i * Action::COUNT + a), psi.row(i), self.spec.energy);
                        out.set(i, a, S::lit(v));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Per-action scores for a batch of `(state, goal configuration)` queries:
    /// Q-values, classifier logits or pairwise energies depending on the
    /// algorithm. One row per query, one column per action.
    pub fn scores(&self, queries: &[(GridState, BoxSet)]) -> Result<Matrix<S>> {
        let m = self.scores_with(&self.params, queries)?;
        if !m.is_finite() {
            return Err(Error::NonFinite("action scores".into()));
        }
        Ok(m)
    }

    pub fn q_for_policy(&self, state: &GridState, goal: &GoalObservation) -> Result<[f64; 6]> {
        let m = self.scores(&[(*state, goal.boxes())])?;
        let mut q = [0.0; 6];
        for (o, v) in q.iter_mut().zip(m.row(0)) {
            *o = v.to_f64().expect("finite");
        }
        Ok(q)
    }

    fn bootstrap_params(&self) -> &ParamSet<S> {
        self.target.as_ref().unwrap_or(&self.params)
    }

    /// Evaluates the algorithm's loss and gradient on a fresh replay batch.
    pub fn loss<R: Rng + ?Sized>(&self, replay: &ReplayBuffer, rng: &mut R) -> Result<LossOutput<S>> {
        let b = self.spec.batch_size;
        let gamma = self.spec.discount;
        match (&self.net, self.spec.algorithm) {
            (CriticNet::Head(net), Algorithm::DqnTd) => {
                let batch = replay.sample_transitions(b, rng)?;
                let x = self.head_input(batch.iter().map(|t| (t.state, t.goal.boxes())));
                let xn = self.head_input(batch.iter().map(|t| (t.next_state, t.goal.boxes())));
                let next = net.infer(self.bootstrap_params(), &xn)?;
                let rewards: Vec<f64> = batch.iter().map(|t| f64::from(t.reward)).collect();
                let dones: Vec<bool> = batch.iter().map(|t| t.done).collect();
                let targets =
                    losses::td_targets(&next, &rewards, &dones, gamma, self.spec.td_target, self.temperature)?;
                let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
                losses::squared_error_loss(net, &self.params, &x, &actions, &targets)
            }
            (CriticNet::Head(net), Algorithm::DqnMc) => {
                let batch = replay.sample_relabeled(b, rng)?;
                let x = self.head_input(batch.iter().map(|t| (t.state, t.goal.boxes())));
                let targets: Vec<f64> = batch.iter().map(|t| t.mc_return).collect();
                let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
                losses::squared_error_loss(net, &self.params, &x, &actions, &targets)
            }
            (CriticNet::Head(net), Algorithm::ClearnMc) => {
                let half = b / 2;
                let pos = replay.sample_future(half, FutureDistribution::Geometric, rng)?;
                let neg = replay.sample_marginal_configs(half, rng)?;
                let rows = pos
                    .iter()
                    .map(|p| (p.state, p.future))
                    .chain(pos.iter().zip(&neg).map(|(p, &g)| (p.state, g)))
                    .collect::<Vec<_>>();
                let x = self.head_input(rows.into_iter());
                let actions: Vec<usize> = pos.iter().chain(&pos).map(|p| p.action.index()).collect();
                let labels: Vec<bool> = (0..2 * half).map(|i| i < half).collect();
                losses::classifier_mc_loss(net, &self.params, &x, &actions, &labels)
            }
            (CriticNet::Head(net), Algorithm::ClearnTd) => {
                let batch = replay.sample_future(b, FutureDistribution::Uniform, rng)?;
                let goals = replay.sample_marginal_configs(b, rng)?;
                let next = net.infer(
                    self.bootstrap_params(),
                    &self.head_input(batch.iter().zip(&goals).map(|(t, &g)| (t.next_state, g))),
                )?;
                let mut weights = Vec::with_capacity(b);
                for r in 0..b {
                    let q: Vec<f64> = next.row(r).iter().map(|v| v.to_f64().expect("finite")).collect();
                    let (a_next, _) = boltzmann_sample(&q, self.temperature, rng)?;
                    weights.push(losses::td_importance_weight(q[a_next.index()]));
                }
                let x_cfg = self.head_input(batch.iter().map(|t| (t.state, t.next_state.floor_boxes())));
                let x_goal = self.head_input(batch.iter().zip(&goals).map(|(t, &g)| (t.state, g)));
                let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
                losses::classifier_td_loss(net, &self.params, &x_cfg, &x_goal, &actions, &weights, gamma)
            }
            (CriticNet::Twin { sa, goal }, Algorithm::Crl | Algorithm::Cmd) => {
                let batch = replay.sample_future(b, FutureDistribution::Uniform, rng)?;
                let xs = self.sa_input(batch.iter().map(|t| (t.state, t.action)));
                let xg = self.goal_input(batch.iter().map(|t| t.future));
                losses::contrastive_loss(sa, goal, &self.params, &xs, &xg, self.spec.energy)
            }
            _ => Err(Error::Config("critic kind does not match algorithm".into())),
        }
    }

    /// One optimizer step; returns the batch loss.
    pub fn update<R: Rng + ?Sized>(&mut self, replay: &ReplayBuffer, rng: &mut R) -> Result<f64> {
        let out = self.loss(replay, rng)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "loss {} at update {}",
                out.loss, self.updates
            )));
        }
        adam_step(&mut self.params, &out.grads, self.spec.learning_rate, &mut self.adam)?;
        self.updates += 1;
        if let (Some(period), Some(target)) = (self.spec.target_update_period, self.target.as_mut()) {
            if self.updates % period == 0 {
                target.copy_from(&self.params)?;
            }
        }
        Ok(out.loss)
    }

    /// Writes parameters plus spec, temperature and `extra` metadata.
    pub fn save<W: Write>(&self, out: W, extra: serde_json::Value) -> Result<()> {
        let meta = CheckpointMeta {
            spec: self.spec.clone(),
            temperature: self.temperature,
            updates: self.updates,
            extra,
        };
        let json = serde_json::to_string(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        write_checkpoint(out, &json, &self.params)
    }

    /// Restores an agent for evaluation. Optimizer moments are not stored and
    /// start from zero.
    pub fn load<R: Read>(input: R) -> Result<(Self, serde_json::Value)> {
        let (json, params) = read_checkpoint::<S, _>(input)?;
        let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut agent = Agent::new(meta.spec, &mut ChaCha8Rng::seed_from_u64(0))?;
        if !agent.params.same_layout(&params) {
            return Err(Error::Checkpoint(
                "stored tensors do not match the critic architecture".into(),
            ));
        }
        agent.params = params;
        agent.params.check_finite()?;
        if let Some(t) = agent.target.as_mut() {
            t.copy_from(&agent.params)?;
        }
        agent.temperature = meta.temperature;
        agent.updates = meta.updates;
        Ok((agent, meta.extra))
    }
}
