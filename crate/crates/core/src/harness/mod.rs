//! Training loop, evaluation and metric logging.

mod config;
mod rollout;

pub use config::{RunConfig, SIGMOID_BCE};
pub use rollout::{run_episodes, EnvSlot, Execution};

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentSpec};
use crate::error::{Error, Result};
use crate::replay::{ReplayBuffer, ReplayConfig};
use crate::scalar::Scalar;
use crate::task_settings::{sample_task, Mode, SettingSpec};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const DIAGNOSTIC_FILE: &str = "diagnostic.json";

/// Stream ids carved out of a run seed.
const INIT_STREAM: u64 = 1 << 40;
const LEARNER_STREAM: u64 = (1 << 40) + 1;
const EVAL_STREAM: u64 = (1 << 40) + 2;

/// ChaCha8 stream `id` of `seed`.
pub fn rng_stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// One row of the metrics file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub step: u64,
    pub algorithm: String,
    pub setting: String,
    pub mode: String,
    pub seed: u64,
    pub success_rate: f64,
    pub successes: u64,
    pub episodes: u64,
    pub mean_entropy: f64,
    pub temperature: f64,
    pub loss: f64,
    pub wall_time_s: f64,
}

pub const METRICS_HEADER: &str =
    "step,algorithm,setting,mode,seed,success_rate,successes,episodes,mean_entropy,temperature,loss,wall_time_s";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub successes: u64,
    pub episodes: u64,
    /// Mean per-step policy entropy over all evaluation steps.
    pub mean_entropy: f64,
}

impl EvalSummary {
    pub fn success_rate(&self) -> f64 {
        self.successes as f64 / self.episodes as f64
    }
}

/// Runs `episodes` fresh tasks from `setting` with the Boltzmann policy.
/// Episode `j` draws its task and actions from stream `j` of `seed`.
pub fn evaluate<S: Scalar>(
    agent: &Agent<S>,
    setting: &SettingSpec,
    episodes: usize,
    episode_length: usize,
    seed: u64,
    exec: Execution,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let mut slots = (0..episodes)
        .map(|j| {
            let mut rng = rng_stream(seed, j as u64);
            let task = sample_task(setting, &mut rng)?;
            Ok(EnvSlot::new(rng, task))
        })
        .collect::<Result<Vec<_>>>()?;
    run_episodes(agent, &mut slots, episode_length, exec)?;
    let steps: usize = slots.iter().map(EnvSlot::steps).sum();
    let entropy: f64 = slots.iter().map(|s| s.entropy_sum).sum();
    Ok(EvalSummary {
        successes: slots.iter().filter(|s| s.success).count() as u64,
        episodes: episodes as u64,
        mean_entropy: if steps > 0 { entropy / steps as f64 } else { f64::NAN },
    })
}

/// Statistics of one collection round.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct RoundStats {
    pub steps: u64,
    pub episodes: u64,
    pub successes: u64,
    pub mean_entropy: f64,
}

#[derive(Debug)]
pub struct TrainOutput<S: Scalar> {
    pub agent: Agent<S>,
    pub records: Vec<RunRecord>,
    pub env_steps: u64,
    pub episodes: u64,
    /// Per-round collection statistics in order.
    pub rounds: Vec<RoundStats>,
}

struct Trainer<'a> {
    config: &'a RunConfig,
    setting: SettingSpec,
    seed: u64,
    exec: Execution,
    start: Instant,
    eval_rng: ChaCha8Rng,
}

impl Trainer<'_> {
    fn record<S: Scalar>(&mut self, agent: &Agent<S>, loss: f64) -> Result<Vec<RunRecord>> {
        let eval_seed: u64 = self.eval_rng.gen();
        [Mode::Train, Mode::Eval]
            .into_iter()
            .map(|mode| {
                let s = evaluate(
                    agent,
                    &self.setting.with_mode(mode),
                    self.config.eval_episodes,
                    self.config.episode_length,
                    eval_seed,
                    self.exec,
                )?;
                Ok(RunRecord {
                    step: agent.updates(),
                    algorithm: agent.spec().algorithm.name().to_string(),
                    setting: self.setting.label(),
                    mode: mode.name().to_string(),
                    seed: self.seed,
                    success_rate: s.success_rate(),
                    successes: s.successes,
                    episodes: s.episodes,
                    mean_entropy: s.mean_entropy,
                    temperature: agent.temperature(),
                    loss,
                    wall_time_s: if self.config.log_wall_time {
                        self.start.elapsed().as_secs_f64()
                    } else {
                        0.0
                    },
                })
            })
            .collect()
    }
}

/// Trains one agent. Evaluation records for both task modes are passed to
/// `sink` at update 0, every `eval_interval` updates and at the end.
pub fn train<S: Scalar>(
    config: &RunConfig,
    agent_spec: AgentSpec,
    setting: &SettingSpec,
    seed: u64,
    exec: Execution,
    sink: &mut dyn FnMut(&RunRecord) -> Result<()>,
) -> Result<TrainOutput<S>> {
    config.validate()?;
    let setting = setting.with_mode(Mode::Train);
    setting.validate()?;
    setting.with_mode(Mode::Eval).validate()?;
    if agent_spec.grid_size != setting.grid_size {
        return Err(Error::Config("agent and setting grid sizes differ".into()));
    }
    let mut agent = Agent::<S>::new(agent_spec, &mut rng_stream(seed, INIT_STREAM))?;
    let mut replay = ReplayBuffer::new(ReplayConfig {
        num_envs: config.num_parallel_envs,
        capacity_per_env: config.max_replay_size,
        min_replay_size: config.min_replay_size,
        episode_length: config.episode_length,
        discount: config.discount,
        absorbing_success: true,
    });
    let mut env_rngs: Vec<ChaCha8Rng> = (0..config.num_parallel_envs as u64)
        .map(|i| rng_stream(seed, i))
        .collect();
    let mut learner_rng = rng_stream(seed, LEARNER_STREAM);
    let mut trainer = Trainer {
        config,
        setting,
        seed,
        exec,
        start: Instant::now(),
        eval_rng: rng_stream(seed, EVAL_STREAM),
    };
    let mut records = Vec::new();
    let mut emit = |batch: Vec<RunRecord>, records: &mut Vec<RunRecord>| -> Result<()> {
        for r in batch {
            sink(&r)?;
            records.push(r);
        }
        Ok(())
    };
    emit(trainer.record(&agent, f64::NAN)?, &mut records)?;

    let interval = config.effective_eval_interval();
    let mut next_eval = interval;
    let mut collected = 0u64;
    let mut episodes = 0u64;
    let mut rounds = Vec::new();
    let mut loss_sum = 0.0;
    let mut loss_count = 0u64;
    while agent.updates() < config.num_updates {
        let mut slots = env_rngs
            .drain(..)
            .map(|mut rng| {
                let task = sample_task(&setting, &mut rng)?;
                Ok(EnvSlot::new(rng, task))
            })
            .collect::<Result<Vec<_>>>()?;
        run_episodes(&agent, &mut slots, config.episode_length, exec)?;
        let mut round = RoundStats::default();
        let mut entropy = 0.0;
        for (env, slot) in slots.iter().enumerate() {
            round.steps += slot.steps() as u64;
            round.episodes += 1;
            round.successes += u64::from(slot.success);
            entropy += slot.entropy_sum;
            if let Some(ep) = slot.episode()? {
                replay.append(env, ep)?;
            }
        }
        round.mean_entropy = if round.steps > 0 {
            entropy / round.steps as f64
        } else {
            f64::NAN
        };
        env_rngs = slots.into_iter().map(|s| s.rng).collect();
        collected += round.steps;
        episodes += round.episodes;
        rounds.push(round);

        if replay.len() < config.min_replay_size.max(1) {
            continue;
        }
        let due = config.updates_due(collected);
        while agent.updates() < due {
            match agent.update(&replay, &mut learner_rng) {
                Ok(loss) => {
                    loss_sum += loss;
                    loss_count += 1;
                }
                Err(e) => {
                    return Err(Error::NonFinite(format!(
                        "{e} (update {}, {} env steps)",
                        agent.updates(),
                        collected
                    )));
                }
            }
            if round.mean_entropy.is_finite() {
                agent.update_temperature(round.mean_entropy);
            }
            if agent.updates() == next_eval && agent.updates() < config.num_updates {
                let mean_loss = loss_sum / loss_count.max(1) as f64;
                emit(trainer.record(&agent, mean_loss)?, &mut records)?;
                loss_sum = 0.0;
                loss_count = 0;
                next_eval += interval;
            }
        }
    }
    if agent.updates() > 0 {
        let mean_loss = if loss_count > 0 {
            loss_sum / loss_count as f64
        } else {
            f64::NAN
        };
        emit(trainer.record(&agent, mean_loss)?, &mut records)?;
    }
    Ok(TrainOutput {
        agent,
        records,
        env_steps: collected,
        episodes,
        rounds,
    })
}

/// Metadata stored next to the parameters in a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub setting: SettingSpec,
    pub seed: u64,
    pub episode_length: usize,
}

pub fn save_checkpoint<S: Scalar>(agent: &Agent<S>, meta: &RunMeta, path: &Path) -> Result<()> {
    let extra = serde_json::to_value(meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let mut out = BufWriter::new(File::create(path)?);
    agent.save(&mut out, extra)?;
    out.flush()?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<(Agent<S>, RunMeta)> {
    let (agent, extra) = Agent::load(BufReader::new(File::open(path)?))?;
    let meta = serde_json::from_value(extra).map_err(|e| Error::Checkpoint(format!("run metadata: {e}")))?;
    Ok((agent, meta))
}

pub fn write_metrics(path: &Path, records: &[RunRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunRecord>> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Stats(format!("unexpected metrics header: {}", header.join(","))));
    }
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Trains, writing `metrics.csv` row by row and `checkpoint.bin` at the end
/// into `out_dir`. A non-finite failure leaves `diagnostic.json` behind.
pub fn run_to_dir(
    config: &RunConfig,
    agent_spec: AgentSpec,
    setting: &SettingSpec,
    seed: u64,
    out_dir: &Path,
    exec: Execution,
) -> Result<TrainOutput<f32>> {
    std::fs::create_dir_all(out_dir)?;
    let metrics: PathBuf = out_dir.join(METRICS_FILE);
    let mut writer = csv::Writer::from_path(&metrics)?;
    let result = train::<f32>(config, agent_spec, setting, seed, exec, &mut |r| {
        writer.serialize(r)?;
        writer.flush()?;
        Ok(())
    });
    let out = match result {
        Ok(out) => out,
        Err(e) => {
            let diag = serde_json::json!({ "error": e.to_string(), "seed": seed, "setting": setting.label() });
            std::fs::write(out_dir.join(DIAGNOSTIC_FILE), diag.to_string())?;
            return Err(e);
        }
    };
    let meta = RunMeta {
        setting: setting.with_mode(Mode::Train),
        seed,
        episode_length: config.episode_length,
    };
    save_checkpoint(&out.agent, &meta, &out_dir.join(CHECKPOINT_FILE))?;
    Ok(out)
}

/// Loads a checkpoint and evaluates it on `setting` in `mode`.
pub fn evaluate_checkpoint(
    path: &Path,
    setting: &SettingSpec,
    episodes: usize,
    seed: u64,
    exec: Execution,
) -> Result<RunRecord> {
    let (agent, meta) = load_checkpoint::<f32>(path)?;
    if setting.grid_size != agent.spec().grid_size {
        return Err(Error::Checkpoint(format!(
            "checkpoint is for a {0}x{0} grid, setting uses {1}x{1}",
            agent.spec().grid_size,
            setting.grid_size
        )));
    }
    setting.validate()?;
    let start = Instant::now();
    let s = evaluate(&agent, setting, episodes, meta.episode_length, seed, exec)?;
    Ok(RunRecord {
        step: agent.updates(),
        algorithm: agent.spec().algorithm.name().to_string(),
        setting: setting.label(),
        mode: setting.mode.name().to_string(),
        seed: meta.seed,
        success_rate: s.success_rate(),
        successes: s.successes,
        episodes: s.episodes,
        mean_entropy: s.mean_entropy,
        temperature: agent.temperature(),
        loss: f64::NAN,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}
