//! Exact ground truth for small instances: breadth-first search over the full
//! discrete state space, binomial counts, and exhaustive task enumeration.

use std::collections::{HashMap, VecDeque};

use num_integer::Integer;

use crate::error::{Error, Result};
use crate::grid_env::{step, Action, BoxSet, Cell, GoalObservation, GridState};
use crate::task_settings::{Mode, Quarter, SettingKind, SettingSpec, Task};

pub const DEFAULT_STATE_BOUND: u128 = 10_000_000;
pub const DEFAULT_TASK_BOUND: u128 = 1_000_000;

/// Exact binomial coefficient `C(cells, boxes)`.
///
/// Panics only if the result itself does not fit in a `u128`.
pub fn count_configurations(cells: u64, boxes: u64) -> u128 {
    if boxes > cells {
        return 0;
    }
    let k = boxes.min(cells - boxes) as u128;
    let n = cells as u128;
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact; dividing out the gcd first keeps
        // every intermediate at most the final coefficient.
        let d = i + 1;
        let g = acc.gcd(&d);
        let (acc_r, d_r) = (acc / g, d / g);
        let factor = (n - i) / d_r;
        debug_assert_eq!((n - i) % d_r, 0);
        acc = acc_r.checked_mul(factor).expect("binomial overflows u128");
    }
    acc
}

/// Upper bound on the number of states reachable with `boxes` boxes.
pub fn state_space_size(grid_size: usize, boxes: usize) -> u128 {
    let cells = (grid_size * grid_size) as u64;
    let floor = count_configurations(cells, boxes as u64);
    let carried = if boxes == 0 {
        0
    } else {
        count_configurations(cells, boxes as u64 - 1)
    };
    cells as u128 * (floor + carried)
}

/// Distances to the goal over the component reachable from the initial state.
#[derive(Clone, Debug)]
pub struct SearchResult {
    pub solvable: bool,
    /// Shortest action-sequence length from the initial state, when solvable.
    pub optimal_steps: Option<usize>,
    distance: HashMap<GridState, u32>,
}

impl SearchResult {
    /// Steps from `state` to the nearest goal state, if `state` was explored
    /// and can reach the goal.
    pub fn distance(&self, state: &GridState) -> Option<usize> {
        self.distance.get(state).map(|&d| d as usize)
    }

    /// Actions whose successor is one step closer to the goal. Empty for goal
    /// states and states that cannot reach the goal.
    pub fn optimal_first_actions(&self, state: &GridState) -> Vec<Action> {
        let Some(d) = self.distance(state) else {
            return Vec::new();
        };
        if d == 0 {
            return Vec::new();
        }
        Action::ALL
            .into_iter()
            .filter(|&a| self.distance(&step(state, a)) == Some(d - 1))
            .collect()
    }

    /// Every explored state that can reach the goal, with its distance.
    pub fn states(&self) -> impl Iterator<Item = (&GridState, usize)> {
        self.distance.iter().map(|(s, &d)| (s, d as usize))
    }
}

pub fn optimal_steps(initial: &GridState, goal: &GoalObservation) -> Result<SearchResult> {
    optimal_steps_bounded(initial, goal, DEFAULT_STATE_BOUND)
}

pub fn optimal_steps_bounded(initial: &GridState, goal: &GoalObservation, bound: u128) -> Result<SearchResult> {
    crate::grid_env::is_success(initial, goal)?;
    let needed = state_space_size(initial.grid_size(), initial.box_count());
    if needed > bound {
        return Err(Error::BoundExceeded { needed, bound });
    }

    // Forward sweep: enumerate the reachable graph, keyed by canonical bytes.
    let mut ids: HashMap<[u8; 12], u32> = HashMap::new();
    let mut states = vec![*initial];
    let mut successors: Vec<[u32; Action::COUNT]> = Vec::new();
    ids.insert(initial.to_bytes(), 0);
    let mut head = 0;
    while head < states.len() {
        let s = states[head];
        let mut succ = [0u32; Action::COUNT];
        for a in Action::ALL {
            let next = step(&s, a);
            let len = states.len() as u32;
            let id = *ids.entry(next.to_bytes()).or_insert_with(|| {
                states.push(next);
                len
            });
            succ[a.index()] = id;
        }
        successors.push(succ);
        head += 1;
    }

    let mut predecessors: Vec<Vec<u32>> = vec![Vec::new(); states.len()];
    for (from, succ) in successors.iter().enumerate() {
        for &to in succ {
            if to as usize != from {
                predecessors[to as usize].push(from as u32);
            }
        }
    }

    // Backward sweep from every goal state.
    let mut dist = vec![u32::MAX; states.len()];
    let mut queue = VecDeque::new();
    for (i, s) in states.iter().enumerate() {
        if goal.is_satisfied_by(s) {
            dist[i] = 0;
            queue.push_back(i);
        }
    }
    while let Some(i) = queue.pop_front() {
        for &p in &predecessors[i] {
            if dist[p as usize] == u32::MAX {
                dist[p as usize] = dist[i] + 1;
                queue.push_back(p as usize);
            }
        }
    }

    let distance: HashMap<GridState, u32> = states
        .iter()
        .zip(&dist)
        .filter(|(_, &d)| d != u32::MAX)
        .map(|(s, &d)| (*s, d))
        .collect();
    let optimal_steps = distance.get(initial).map(|&d| d as usize);
    Ok(SearchResult {
        solvable: optimal_steps.is_some(),
        optimal_steps,
        distance,
    })
}

/// Shortest path length between two complete states.
pub fn state_distance(from: &GridState, to: &GridState) -> Result<Option<usize>> {
    let needed = state_space_size(from.grid_size(), from.box_count());
    if needed > DEFAULT_STATE_BOUND {
        return Err(Error::BoundExceeded {
            needed,
            bound: DEFAULT_STATE_BOUND,
        });
    }
    let mut seen: HashMap<GridState, usize> = HashMap::from([(*from, 0)]);
    let mut queue = VecDeque::from([*from]);
    while let Some(s) = queue.pop_front() {
        let d = seen[&s];
        if s == *to {
            return Ok(Some(d));
        }
        for a in Action::ALL {
            let next = step(&s, a);
            if !seen.contains_key(&next) {
                seen.insert(next, d + 1);
                queue.push_back(next);
            }
        }
    }
    Ok(None)
}

/// Number of tasks [`enumerate_tasks`] would produce.
pub fn task_count(spec: &SettingSpec) -> Result<u128> {
    spec.validate()?;
    let g = spec.grid_size as u64;
    let cells = g * g;
    let n = spec.n_boxes as u64;
    let agents = cells as u128;
    let count = match spec.kind {
        SettingKind::NoStitching => {
            let c = count_configurations(cells, n);
            c * (c - 1) * agents
        }
        SettingKind::Quarters => {
            let c = count_configurations(cells / 4, n);
            let targets = match spec.mode {
                Mode::Train => 2,
                Mode::Eval => 1,
            };
            4 * c * targets * c * agents
        }
        SettingKind::FewToMany => {
            let m = match spec.mode {
                Mode::Train => spec.m_preplaced as u64,
                Mode::Eval => 0,
            };
            count_configurations(cells, n)
                * count_configurations(n, m)
                * count_configurations(cells - n, n - m)
                * agents
        }
    };
    Ok(count)
}

/// All `k`-subsets of `pool`.
fn subsets(pool: &[usize], k: usize) -> Vec<BoxSet> {
    fn rec(pool: &[usize], k: usize, acc: BoxSet, out: &mut Vec<BoxSet>) {
        if k == 0 {
            out.push(acc);
            return;
        }
        for (j, &i) in pool.iter().enumerate() {
            if pool.len() - j < k {
                break;
            }
            let mut next = acc;
            next.insert(i);
            rec(&pool[j + 1..], k - 1, next, out);
        }
    }
    let mut out = Vec::new();
    rec(pool, k, BoxSet::default(), &mut out);
    out
}

/// Every `(initial, goal)` pair the spec's sampler can emit, each exactly once.
pub fn enumerate_tasks(spec: &SettingSpec) -> Result<impl Iterator<Item = Task>> {
    let needed = task_count(spec)?;
    if needed > DEFAULT_TASK_BOUND {
        return Err(Error::BoundExceeded {
            needed,
            bound: DEFAULT_TASK_BOUND,
        });
    }
    let g = spec.grid_size;
    let all: Vec<usize> = (0..g * g).collect();
    let mut pairs: Vec<(BoxSet, BoxSet)> = Vec::new();
    match spec.kind {
        SettingKind::NoStitching => {
            let configs = subsets(&all, spec.n_boxes);
            for &b in &configs {
                for &goal in &configs {
                    if goal != b {
                        pairs.push((b, goal));
                    }
                }
            }
        }
        SettingKind::Quarters => {
            for start in Quarter::ALL {
                let targets: Vec<Quarter> = match spec.mode {
                    Mode::Train => start.adjacent().to_vec(),
                    Mode::Eval => vec![start.diagonal()],
                };
                for b in subsets(&start.cells(g), spec.n_boxes) {
                    for &t in &targets {
                        for goal in subsets(&t.cells(g), spec.n_boxes) {
                            pairs.push((b, goal));
                        }
                    }
                }
            }
        }
        SettingKind::FewToMany => {
            let m = match spec.mode {
                Mode::Train => spec.m_preplaced,
                Mode::Eval => 0,
            };
            for goal in subsets(&all, spec.n_boxes) {
                let goal_cells: Vec<usize> = goal.indices().collect();
                let free: Vec<usize> = all.iter().copied().filter(|&i| !goal.contains(i)).collect();
                for pre in subsets(&goal_cells, m) {
                    for rest in subsets(&free, spec.n_boxes - m) {
                        pairs.push((BoxSet(pre.0 | rest.0), goal));
                    }
                }
            }
        }
    }
    let spec = *spec;
    Ok(pairs.into_iter().flat_map(move |(boxes, goal)| {
        (0..g * g).map(move |a| Task {
            initial: GridState::from_parts(g, Cell::from_index(a, g), boxes, false),
            goal: GoalObservation::from_parts(g, goal),
            spec,
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid_env::encode_goal;
    use std::collections::HashSet;

    fn st(s: &str) -> GridState {
        s.parse().unwrap()
    }

    #[test]
    fn binomials() {
        assert_eq!(count_configurations(16, 3), 560);
        assert_eq!(count_configurations(7, 0), 1);
        assert_eq!(count_configurations(0, 0), 1);
        assert_eq!(count_configurations(25, 8), 1_081_575);
        assert_eq!(count_configurations(3, 5), 0);
        assert_eq!(
            count_configurations(128, 64),
            23_951_146_041_928_082_866_135_587_776_380_551_750
        );
    }

    #[test]
    fn already_solved_is_zero_steps() {
        let goal = encode_goal(&[Cell::new(0, 1)], 2).unwrap();
        let r = optimal_steps(&st("g=2;a=1,1;c=0;b=0,1"), &goal).unwrap();
        assert_eq!(r.optimal_steps, Some(0));
        assert!(r.solvable);
    }

    #[test]
    fn two_by_two_single_box() {
        let goal = encode_goal(&[Cell::new(1, 1)], 2).unwrap();
        let s = st("g=2;a=0,0;c=0;b=0,1");
        let r = optimal_steps(&s, &goal).unwrap();
        assert_eq!(r.optimal_steps, Some(4));
        assert_eq!(r.optimal_first_actions(&s), vec![Action::GoRight]);
    }

    #[test]
    fn too_few_boxes_is_unsolvable() {
        let goal = encode_goal(&[Cell::new(1, 1), Cell::new(0, 0)], 2).unwrap();
        let r = optimal_steps(&st("g=2;a=0,0;c=0;b=0,1"), &goal).unwrap();
        assert!(!r.solvable);
        assert_eq!(r.optimal_steps, None);
    }

    #[test]
    fn bound_is_enforced() {
        let goal = encode_goal(&[Cell::new(1, 1)], 6).unwrap();
        let s = st("g=6;a=0,0;c=0;b=0,1;b=0,2;b=0,3");
        assert!(matches!(
            optimal_steps_bounded(&s, &goal, 1_000),
            Err(Error::BoundExceeded { .. })
        ));
    }

    #[test]
    fn enumeration_counts() {
        let spec = SettingSpec::new(SettingKind::NoStitching, 2, 1, Mode::Train);
        let tasks: Vec<Task> = enumerate_tasks(&spec).unwrap().collect();
        assert_eq!(tasks.len(), 48);
        let unique: HashSet<_> = tasks.iter().map(|t| (t.initial, t.goal)).collect();
        assert_eq!(unique.len(), 48);

        let q = SettingSpec::new(SettingKind::Quarters, 6, 1, Mode::Train);
        let tasks: Vec<Task> = enumerate_tasks(&q).unwrap().collect();
        assert_eq!(tasks.len() as u128, task_count(&q).unwrap());
        for t in &tasks {
            let start = Quarter::of_cell(t.initial.floor_boxes().indices().next().unwrap(), 6);
            let target = Quarter::of_cell(t.goal.boxes().indices().next().unwrap(), 6);
            assert!(start.adjacent().contains(&target));
        }
        // 2 goal quarters per start quarter, 9 goal cells each.
        let from_first: HashSet<_> = tasks
            .iter()
            .filter(|t| t.initial.floor_boxes() == BoxSet(1))
            .map(|t| t.goal)
            .collect();
        assert_eq!(from_first.len(), 18);

        let f = SettingSpec::few_to_many(3, 2, 1, Mode::Train);
        let tasks: Vec<Task> = enumerate_tasks(&f).unwrap().collect();
        assert_eq!(tasks.len() as u128, task_count(&f).unwrap());
        assert!(tasks
            .iter()
            .all(|t| t.initial.floor_boxes().intersection(t.goal.boxes()).len() == 1));
    }

    #[test]
    fn enumeration_bound() {
        let spec = SettingSpec::new(SettingKind::NoStitching, 6, 3, Mode::Train);
        assert!(enumerate_tasks(&spec).is_err());
    }

    #[test]
    fn first_actions_descend() {
        let goal = encode_goal(&[Cell::new(2, 2)], 3).unwrap();
        let r = optimal_steps(&st("g=3;a=0,0;c=0;b=0,2"), &goal).unwrap();
        for (s, d) in r.states() {
            for a in r.optimal_first_actions(s) {
                assert_eq!(r.distance(&step(s, a)), Some(d - 1));
            }
            if d > 0 {
                assert!(!r.optimal_first_actions(s).is_empty());
            }
        }
    }
}
