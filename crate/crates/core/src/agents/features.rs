//! One-hot input encodings.
//!
//! Score heads read `[cell codes | goal mask]`: six slots per cell for the
//! observation code and two per cell for goal occupancy, `grid_size^2 * 8`
//! values in total. Encoder critics split this into a state-action input
//! (cell codes plus a one-hot action) and a goal input (goal occupancy).

use crate::grid_env::{cell_code, Action, BoxSet, GridState, NUM_CELL_CODES};
use crate::scalar::Scalar;

pub fn head_input_dim(grid_size: usize) -> usize {
    grid_size * grid_size * (NUM_CELL_CODES + 2)
}

pub fn state_action_dim(grid_size: usize) -> usize {
    grid_size * grid_size * NUM_CELL_CODES + Action::COUNT
}

pub fn goal_dim(grid_size: usize) -> usize {
    grid_size * grid_size * 2
}

fn write_state<S: Scalar>(state: &GridState, out: &mut [S]) {
    let cells = state.grid_size() * state.grid_size();
    for i in 0..cells {
        out[i * NUM_CELL_CODES + cell_code(state, i) as usize] = S::one();
    }
}

fn write_goal<S: Scalar>(cells: usize, goal: BoxSet, out: &mut [S]) {
    for i in 0..cells {
        out[i * 2 + usize::from(goal.contains(i))] = S::one();
    }
}

/// Writes the score-head encoding of `(state, goal)` into a zeroed slice.
pub fn write_head_input<S: Scalar>(state: &GridState, goal: BoxSet, out: &mut [S]) {
    let cells = state.grid_size() * state.grid_size();
    write_state(state, &mut out[..cells * NUM_CELL_CODES]);
    write_goal(cells, goal, &mut out[cells * NUM_CELL_CODES..]);
}

pub fn write_state_action<S: Scalar>(state: &GridState, action: Action, out: &mut [S]) {
    let cells = state.grid_size() * state.grid_size();
    write_state(state, &mut out[..cells * NUM_CELL_CODES]);
    out[cells * NUM_CELL_CODES + action.index()] = S::one();
}

pub fn write_goal_input<S: Scalar>(grid_size: usize, goal: BoxSet, out: &mut [S]) {
    write_goal(grid_size * grid_size, goal, out);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::Cell;

    #[test]
    fn encodings_are_one_hot_per_slot() {
        let s = GridState::new(3, Cell::new(1, 1), [Cell::new(0, 0)], true).unwrap();
        let goal = BoxSet::from_indices([8, 0]);
        let mut x = vec![0.0f32; head_input_dim(3)];
        write_head_input(&s, goal, &mut x);
        assert_eq!(x.len(), 72);
        assert_eq!(x.iter().sum::<f32>(), 18.0);
        assert_eq!(x[4 * 6 + 4], 1.0);
        assert_eq!(x[0 * 6 + 1], 1.0);
        assert_eq!(x[54 + 8 * 2 + 1], 1.0);
        assert_eq!(x[54 + 1 * 2], 1.0);

        let mut sa = vec![0.0f64; state_action_dim(3)];
        write_state_action(&s, Action::PutDown, &mut sa);
        assert_eq!(sa.iter().sum::<f64>(), 10.0);
        assert_eq!(sa[54 + Action::PutDown.index()], 1.0);

        let mut g = vec![0.0f64; goal_dim(3)];
        write_goal_input(3, goal, &mut g);
        assert_eq!(g.iter().sum::<f64>(), 9.0);
    }
}
