//! Batched episode execution for many environments at once.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::agents::{boltzmann_sample, Agent};
use crate::error::Result;
use crate::grid_env::{step, Action, GridState};
use crate::replay::Episode;
use crate::scalar::Scalar;
use crate::task_settings::Task;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    /// Everything on the calling thread.
    Sequential,
    /// Environment steps run on the rayon pool. Each environment owns its
    /// RNG stream, so results match the sequential mode exactly.
    Parallel,
}

/// One environment running one episode.
#[derive(Debug)]
pub struct EnvSlot {
    pub rng: ChaCha8Rng,
    pub task: Task,
    pub states: Vec<GridState>,
    pub actions: Vec<Action>,
    pub success: bool,
    pub entropy_sum: f64,
}

impl EnvSlot {
    pub fn new(rng: ChaCha8Rng, task: Task) -> Self {
        let success = task.goal.is_satisfied_by(&task.initial);
        EnvSlot {
            rng,
            states: vec![task.initial],
            actions: Vec::new(),
            task,
            success,
            entropy_sum: 0.0,
        }
    }

    fn current(&self) -> GridState {
        *self.states.last().expect("initial state present")
    }

    pub fn steps(&self) -> usize {
        self.actions.len()
    }

    /// The stored trajectory, or `None` for an episode that never stepped.
    pub fn episode(&self) -> Result<Option<Episode>> {
        if self.actions.is_empty() {
            return Ok(None);
        }
        Episode::new(self.states.clone(), self.actions.clone(), self.task.goal).map(Some)
    }
}

/// Runs every slot until success or `episode_length` steps. Action scores
/// for all running slots come from one batched critic evaluation per step.
pub fn run_episodes<S: Scalar>(
    agent: &Agent<S>,
    slots: &mut [EnvSlot],
    episode_length: usize,
    exec: Execution,
) -> Result<()> {
    let temperature = agent.temperature();
    for _ in 0..episode_length {
        let mut active: Vec<&mut EnvSlot> = slots.iter_mut().filter(|s| !s.success).collect();
        if active.is_empty() {
            break;
        }
        let queries: Vec<_> = active.iter().map(|s| (s.current(), s.task.goal.boxes())).collect();
        let scores = agent.scores(&queries)?;
        let advance = |(row, slot): (usize, &mut &mut EnvSlot)| -> Result<()> {
            let q: Vec<f64> = scores.row(row).iter().map(|v| v.to_f64().expect("finite")).collect();
            let (action, h) = boltzmann_sample(&q, temperature, &mut slot.rng)?;
            let next = step(&slot.current(), action);
            slot.actions.push(action);
            slot.states.push(next);
            slot.entropy_sum += h;
            slot.success = slot.task.goal.is_satisfied_by(&next);
            Ok(())
        };
        match exec {
            Execution::Sequential => active.iter_mut().enumerate().try_for_each(advance)?,
            Execution::Parallel => active.par_iter_mut().enumerate().try_for_each(advance)?,
        }
    }
    Ok(())
}
