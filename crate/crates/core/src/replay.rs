//! Episode-structured replay with hindsight goal relabeling.
//!
//! Each parallel environment owns a FIFO of whole episodes capped by a
//! transition budget. Batches are drawn uniformly over all stored
//! transitions. Goals for reward-based learners are always taken from states
//! in which the agent holds nothing, so every relabeled goal has the full box
//! count and is achievable by [`GoalObservation::is_satisfied_by`].

use std::collections::VecDeque;

use rand::Rng;

use crate::error::{Error, Result};
use crate::grid_env::{step, Action, BoxSet, GoalObservation, GridState};

/// Retry cap when a draw lands on an ineligible transition or state.
const MAX_REDRAWS: usize = 1_000;

#[derive(Clone, Debug)]
pub struct ReplayConfig {
    pub num_envs: usize,
    /// Transitions kept per environment.
    pub capacity_per_env: usize,
    /// Total transitions required before sampling is allowed.
    pub min_replay_size: usize,
    pub episode_length: usize,
    pub discount: f64,
    /// Treat the first success w.r.t. the relabeled goal as terminal.
    pub absorbing_success: bool,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        ReplayConfig {
            num_envs: 1,
            capacity_per_env: 10_000,
            min_replay_size: 1_000,
            episode_length: 100,
            discount: 0.99,
            absorbing_success: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Episode {
    states: Vec<GridState>,
    actions: Vec<Action>,
    goal: GoalObservation,
    success_step: Option<usize>,
}

impl Episode {
    /// Validates `states[t + 1] == step(states[t], actions[t])`.
    pub fn new(states: Vec<GridState>, actions: Vec<Action>, goal: GoalObservation) -> Result<Self> {
        if states.len() != actions.len() + 1 {
            return Err(Error::Replay(format!(
                "{} states for {} actions",
                states.len(),
                actions.len()
            )));
        }
        for (t, (pair, &a)) in states.windows(2).zip(&actions).enumerate() {
            if step(&pair[0], a) != pair[1] {
                return Err(Error::Replay(format!("state {} is not step(state {t}, {a:?})", t + 1)));
            }
        }
        let success_step = states.iter().position(|s| goal.is_satisfied_by(s));
        Ok(Episode {
            states,
            actions,
            goal,
            success_step,
        })
    }

    pub fn states(&self) -> &[GridState] {
        &self.states
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn goal(&self) -> &GoalObservation {
        &self.goal
    }

    /// First index whose state satisfies the episode goal.
    pub fn success_step(&self) -> Option<usize> {
        self.success_step
    }

    /// Number of transitions.
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Discounted return at step `t` for `goal`, computed from `next_state` on.
///
/// With absorbing success this is `discount^k` where `k` counts steps from
/// `t + 1` to the first success, or 0 if the goal is never reached.
pub fn mc_return(episode: &Episode, t: usize, goal: &GoalObservation, discount: f64, absorbing: bool) -> f64 {
    let mut ret = 0.0;
    let mut weight = 1.0;
    for s in &episode.states[t + 1..] {
        if goal.is_satisfied_by(s) {
            if absorbing {
                return weight;
            }
            ret += weight;
        }
        weight *= discount;
    }
    ret
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalSource {
    Future,
    Random,
}

#[derive(Clone, Debug)]
pub struct RelabeledSample {
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub goal: GoalObservation,
    pub reward: u8,
    pub mc_return: f64,
    pub done: bool,
    pub source: GoalSource,
    /// Position of the source episode in `episodes()` order when sampled.
    pub episode_index: usize,
    pub t: usize,
}

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub goal: GoalObservation,
    pub reward: u8,
    pub done: bool,
    pub source: GoalSource,
}

/// `(s, a)` paired with the floor configuration of a later state of the same
/// episode. Used by the contrastive and classifier critics.
#[derive(Clone, Debug)]
pub struct FutureSample {
    pub state: GridState,
    pub action: Action,
    pub next_state: GridState,
    pub future: BoxSet,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FutureDistribution {
    /// Uniform over `{t + 1, ..., T}`.
    Uniform,
    /// `P(t + k) ∝ discount^(k - 1)` on `{t + 1, ..., T}`.
    Geometric,
}

#[derive(Debug, Default)]
struct EnvBuffer {
    episodes: VecDeque<Episode>,
    trans_starts: VecDeque<u64>,
    state_starts: VecDeque<u64>,
    next_trans: u64,
    next_state: u64,
    transitions: usize,
    states: usize,
}

impl EnvBuffer {
    fn push(&mut self, episode: Episode, capacity: usize) {
        while self.transitions + episode.len() > capacity {
            let Some(old) = self.episodes.pop_front() else { break };
            self.trans_starts.pop_front();
            self.state_starts.pop_front();
            self.transitions -= old.len();
            self.states -= old.len() + 1;
        }
        self.trans_starts.push_back(self.next_trans);
        self.state_starts.push_back(self.next_state);
        self.next_trans += episode.len() as u64;
        self.next_state += episode.len() as u64 + 1;
        self.transitions += episode.len();
        self.states += episode.len() + 1;
        self.episodes.push_back(episode);
    }

    /// Maps the `j`-th stored item to `(episode index, offset)`.
    fn locate(starts: &VecDeque<u64>, j: usize) -> (usize, usize) {
        let target = starts[0] + j as u64;
        let e = starts.partition_point(|&s| s <= target) - 1;
        (e, (target - starts[e]) as usize)
    }
}

#[derive(Debug)]
pub struct ReplayBuffer {
    config: ReplayConfig,
    envs: Vec<EnvBuffer>,
}

impl ReplayBuffer {
    pub fn new(config: ReplayConfig) -> Self {
        let envs = (0..config.num_envs.max(1)).map(|_| EnvBuffer::default()).collect();
        ReplayBuffer { config, envs }
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.config
    }

    /// Total stored transitions.
    pub fn len(&self) -> usize {
        self.envs.iter().map(|e| e.transitions).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_states(&self) -> usize {
        self.envs.iter().map(|e| e.states).sum()
    }

    pub fn episodes(&self) -> impl Iterator<Item = &Episode> {
        self.envs.iter().flat_map(|e| e.episodes.iter())
    }

    pub fn append(&mut self, env: usize, episode: Episode) -> Result<()> {
        if env >= self.envs.len() {
            return Err(Error::Replay(format!("env {env} out of range")));
        }
        if episode.len() > self.config.episode_length {
            return Err(Error::Replay(format!(
                "episode of {} steps exceeds limit {}",
                episode.len(),
                self.config.episode_length
            )));
        }
        if episode.is_empty() {
            return Err(Error::Replay("empty episode".into()));
        }
        self.envs[env].push(episode, self.config.capacity_per_env);
        Ok(())
    }

    fn ensure_ready(&self) -> Result<()> {
        let len = self.len();
        if len < self.config.min_replay_size.max(1) {
            return Err(Error::Replay(format!(
                "{len} transitions stored, {} required before sampling",
                self.config.min_replay_size
            )));
        }
        Ok(())
    }

    /// Uniform draw over all stored transitions: `(episode, t)`.
    fn draw_transition<R: Rng + ?Sized>(&self, rng: &mut R) -> (&Episode, usize) {
        let (ep, _, t) = self.draw_indexed(rng);
        (ep, t)
    }

    fn draw_indexed<R: Rng + ?Sized>(&self, rng: &mut R) -> (&Episode, usize, usize) {
        let mut j = rng.gen_range(0..self.len());
        let mut offset = 0;
        for env in &self.envs {
            if j < env.transitions {
                let (e, t) = EnvBuffer::locate(&env.trans_starts, j);
                return (&env.episodes[e], offset + e, t);
            }
            j -= env.transitions;
            offset += env.episodes.len();
        }
        unreachable!("index within total transition count")
    }

    /// Uniform draw over all stored states.
    pub fn random_state<R: Rng + ?Sized>(&self, rng: &mut R) -> GridState {
        let mut j = rng.gen_range(0..self.num_states());
        for env in &self.envs {
            if j < env.states {
                let (e, t) = EnvBuffer::locate(&env.state_starts, j);
                return env.episodes[e].states[t];
            }
            j -= env.states;
        }
        unreachable!("index within total state count")
    }

    /// Uniform draw over stored states in which the agent is empty-handed.
    fn random_goal<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GoalObservation> {
        for _ in 0..MAX_REDRAWS {
            let s = self.random_state(rng);
            if !s.carrying() && s.floor_boxes().len() > 0 {
                return Ok(GoalObservation::from_parts(s.grid_size(), s.floor_boxes()));
            }
        }
        Err(Error::Replay("no goal-eligible state found".into()))
    }

    fn relabel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<RelabeledSample> {
        let source = if rng.gen_bool(0.5) {
            GoalSource::Future
        } else {
            GoalSource::Random
        };
        for _ in 0..MAX_REDRAWS {
            let (ep, episode_index, t) = self.draw_indexed(rng);
            let goal = match source {
                GoalSource::Future => {
                    let eligible: Vec<usize> = (t + 1..ep.states.len()).filter(|&j| !ep.states[j].carrying()).collect();
                    if eligible.is_empty() {
                        continue;
                    }
                    let s = ep.states[eligible[rng.gen_range(0..eligible.len())]];
                    GoalObservation::from_parts(s.grid_size(), s.floor_boxes())
                }
                GoalSource::Random => self.random_goal(rng)?,
            };
            let next_state = ep.states[t + 1];
            let reward = u8::from(goal.is_satisfied_by(&next_state));
            return Ok(RelabeledSample {
                state: ep.states[t],
                action: ep.actions[t],
                next_state,
                goal,
                reward,
                mc_return: mc_return(ep, t, &goal, self.config.discount, self.config.absorbing_success),
                done: self.config.absorbing_success && reward == 1,
                source,
                episode_index,
                t,
            });
        }
        Err(Error::Replay("no transition with an eligible future goal".into()))
    }

    /// Hindsight-relabeled batch with Monte Carlo returns: half the goals come
    /// from later states of the same episode, half from random buffer states.
    pub fn sample_relabeled<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<RelabeledSample>> {
        self.ensure_ready()?;
        (0..batch_size).map(|_| self.relabel(rng)).collect()
    }

    /// One-step batch with the same relabeling mix; `done` iff `reward == 1`
    /// under absorbing success.
    pub fn sample_transitions<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<Transition>> {
        self.ensure_ready()?;
        (0..batch_size)
            .map(|_| {
                self.relabel(rng).map(|r| Transition {
                    state: r.state,
                    action: r.action,
                    next_state: r.next_state,
                    goal: r.goal,
                    reward: r.reward,
                    done: r.done,
                    source: r.source,
                })
            })
            .collect()
    }

    /// `(s, a)` with the floor configuration of a later state in the same
    /// episode, drawn from `dist`. Carrying states are allowed as futures.
    pub fn sample_future<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        dist: FutureDistribution,
        rng: &mut R,
    ) -> Result<Vec<FutureSample>> {
        self.ensure_ready()?;
        let discount = self.config.discount;
        Ok((0..batch_size)
            .map(|_| {
                let (ep, t) = self.draw_transition(rng);
                let horizon = ep.len() - t;
                let k = match dist {
                    FutureDistribution::Uniform => rng.gen_range(1..=horizon),
                    FutureDistribution::Geometric => truncated_geometric(discount, horizon, rng),
                };
                FutureSample {
                    state: ep.states[t],
                    action: ep.actions[t],
                    next_state: ep.states[t + 1],
                    future: ep.states[t + k].floor_boxes(),
                }
            })
            .collect())
    }

    /// Floor configurations of uniformly random buffer states.
    pub fn sample_marginal_configs<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<BoxSet>> {
        self.ensure_ready()?;
        Ok((0..batch_size).map(|_| self.random_state(rng).floor_boxes()).collect())
    }
}

/// Draws `k ∈ {1, ..., horizon}` with `P(k) ∝ discount^(k - 1)` by inverting
/// the truncated CDF.
pub fn truncated_geometric<R: Rng + ?Sized>(discount: f64, horizon: usize, rng: &mut R) -> usize {
    if horizon <= 1 || discount <= 0.0 {
        return 1;
    }
    if discount >= 1.0 {
        return rng.gen_range(1..=horizon);
    }
    let u: f64 = rng.gen();
    let mass = 1.0 - discount.powi(horizon as i32);
    let k = ((1.0 - u * mass).ln() / discount.ln()).ceil() as usize;
    k.clamp(1, horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::{encode_goal, Cell};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_episode(rng: &mut ChaCha8Rng, len: usize) -> Episode {
        let mut s: GridState = "g=3;a=1,1;c=0;b=0,0;b=2,2".parse().unwrap();
        let goal = encode_goal(&[Cell::new(0, 2), Cell::new(2, 0)], 3).unwrap();
        let mut states = vec![s];
        let mut actions = Vec::new();
        for _ in 0..len {
            let a = Action::ALL[rng.gen_range(0..6)];
            s = step(&s, a);
            actions.push(a);
            states.push(s);
        }
        Episode::new(states, actions, goal).unwrap()
    }

    fn filled(config: ReplayConfig, episodes: usize, seed: u64) -> ReplayBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let envs = config.num_envs;
        let mut buf = ReplayBuffer::new(config);
        for i in 0..episodes {
            let len = rng.gen_range(5..=40);
            buf.append(i % envs, random_episode(&mut rng, len)).unwrap();
        }
        buf
    }

    #[test]
    fn inconsistent_episode_is_rejected() {
        let s: GridState = "g=2;a=0,0;c=0;b=1,1".parse().unwrap();
        let goal = encode_goal(&[Cell::new(0, 1)], 2).unwrap();
        let bad = Episode::new(vec![s, s], vec![Action::GoRight], goal);
        assert!(bad.is_err());
        assert!(Episode::new(vec![s], vec![Action::GoRight], goal).is_err());
    }

    #[test]
    fn capacity_evicts_oldest_episodes() {
        let config = ReplayConfig {
            num_envs: 1,
            capacity_per_env: 100,
            min_replay_size: 1,
            ..ReplayConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut buf = ReplayBuffer::new(config);
        let first = random_episode(&mut rng, 30);
        buf.append(0, first.clone()).unwrap();
        for _ in 0..10 {
            buf.append(0, random_episode(&mut rng, 30)).unwrap();
            assert!(buf.len() <= 100);
        }
        assert_eq!(buf.len(), 90);
        assert!(buf.episodes().all(|e| e != &first));
    }

    #[test]
    fn sampling_requires_min_size() {
        let config = ReplayConfig {
            min_replay_size: 1_000,
            ..ReplayConfig::default()
        };
        let buf = filled(config, 5, 1);
        assert!(buf.len() < 1_000);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.sample_relabeled(4, &mut rng).is_err());
        assert!(buf.sample_transitions(4, &mut rng).is_err());
    }

    #[test]
    fn over_long_episode_is_rejected() {
        let config = ReplayConfig {
            episode_length: 10,
            ..ReplayConfig::default()
        };
        let mut buf = ReplayBuffer::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(buf.append(0, random_episode(&mut rng, 11)).is_err());
    }

    #[test]
    fn returns_follow_absorbing_convention() {
        let goal = encode_goal(&[Cell::new(0, 1)], 2).unwrap();
        let mut s: GridState = "g=2;a=1,1;c=0;b=1,0".parse().unwrap();
        let plan = [
            Action::GoLeft,
            Action::PickUp,
            Action::GoUp,
            Action::GoRight,
            Action::PutDown,
            Action::GoLeft,
        ];
        let mut states = vec![s];
        for a in plan {
            s = step(&s, a);
            states.push(s);
        }
        let ep = Episode::new(states, plan.to_vec(), goal).unwrap();
        assert_eq!(ep.success_step(), Some(5));
        assert_eq!(mc_return(&ep, 4, &goal, 0.99, true), 1.0);
        assert!((mc_return(&ep, 1, &goal, 0.99, true) - 0.970299).abs() < 1e-12);
        // Non-absorbing: successes at steps 5 and 6 both count.
        assert!((mc_return(&ep, 4, &goal, 0.99, false) - 1.99).abs() < 1e-12);
        let never = encode_goal(&[Cell::new(1, 1)], 2).unwrap();
        assert_eq!(mc_return(&ep, 0, &never, 0.99, true), 0.0);
    }

    #[test]
    fn done_implies_reward_and_batch_sizes_match() {
        let config = ReplayConfig {
            num_envs: 3,
            min_replay_size: 100,
            ..ReplayConfig::default()
        };
        let buf = filled(config, 60, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let batch = buf.sample_transitions(333, &mut rng).unwrap();
        assert_eq!(batch.len(), 333);
        for t in &batch {
            assert!(!t.done || t.reward == 1);
            assert_eq!(t.reward == 1, t.goal.is_satisfied_by(&t.next_state));
            assert_eq!(step(&t.state, t.action), t.next_state);
            assert!(!t.goal.boxes().is_empty());
        }
    }

    #[test]
    fn geometric_offsets_match_truncated_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (gamma, horizon, draws) = (0.7f64, 6usize, 200_000usize);
        let mut counts = vec![0usize; horizon + 1];
        for _ in 0..draws {
            counts[truncated_geometric(gamma, horizon, &mut rng)] += 1;
        }
        let z: f64 = (0..horizon).map(|k| gamma.powi(k as i32)).sum();
        for k in 1..=horizon {
            let p = gamma.powi(k as i32 - 1) / z;
            let sigma = (p * (1.0 - p) / draws as f64).sqrt();
            assert!((counts[k] as f64 / draws as f64 - p).abs() < 5.0 * sigma, "k={k}");
        }
        assert_eq!(counts[0], 0);
    }

    #[test]
    fn uniform_transition_sampling() {
        let config = ReplayConfig {
            num_envs: 2,
            min_replay_size: 1,
            ..ReplayConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut buf = ReplayBuffer::new(config);
        buf.append(0, random_episode(&mut rng, 3)).unwrap();
        buf.append(1, random_episode(&mut rng, 5)).unwrap();
        buf.append(1, random_episode(&mut rng, 2)).unwrap();
        let total = buf.len();
        assert_eq!(total, 10);
        let draws = 50_000;
        let mut counts = std::collections::HashMap::new();
        for _ in 0..draws {
            let (ep, t) = buf.draw_transition(&mut rng);
            *counts.entry((ep as *const Episode as usize, t)).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), total);
        let expected = draws as f64 / total as f64;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 9 degrees of freedom; 99.9th percentile is 27.9.
        assert!(chi2 < 27.9, "chi2 {chi2}");
    }
}
