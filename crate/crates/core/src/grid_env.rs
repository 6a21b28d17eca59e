//! Deterministic block-moving grid world.
//!
//! The agent walks on an open square grid (no walls) and can lift a box from
//! the cell it stands on or drop the carried box onto an empty cell. Every
//! transition is reversible, so the agent can never get stuck.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Largest supported side length; box placements are stored as a 64-bit mask.
pub const MAX_GRID_SIZE: usize = 8;

/// Number of distinct per-cell observation codes.
pub const NUM_CELL_CODES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    GoLeft,
    GoRight,
    GoUp,
    GoDown,
    PickUp,
    PutDown,
}

impl Action {
    pub const COUNT: usize = 6;
    pub const ALL: [Action; 6] = [
        Action::GoLeft,
        Action::GoRight,
        Action::GoUp,
        Action::GoDown,
        Action::PickUp,
        Action::PutDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Self::ALL.get(i).copied()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Cell {
    pub row: u8,
    pub col: u8,
}

impl Cell {
    pub fn new(row: usize, col: usize) -> Self {
        Cell {
            row: row as u8,
            col: col as u8,
        }
    }

    pub fn index(self, grid_size: usize) -> usize {
        self.row as usize * grid_size + self.col as usize
    }

    pub fn from_index(index: usize, grid_size: usize) -> Self {
        Cell::new(index / grid_size, index % grid_size)
    }

    fn in_bounds(self, grid_size: usize) -> bool {
        (self.row as usize) < grid_size && (self.col as usize) < grid_size
    }
}

/// Set of occupied cells, one bit per cell in row-major order.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BoxSet(pub u64);

impl BoxSet {
    pub fn contains(self, index: usize) -> bool {
        self.0 >> index & 1 == 1
    }

    pub fn insert(&mut self, index: usize) {
        self.0 |= 1 << index;
    }

    pub fn remove(&mut self, index: usize) {
        self.0 &= !(1 << index);
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn is_subset_of(self, other: BoxSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn intersection(self, other: BoxSet) -> BoxSet {
        BoxSet(self.0 & other.0)
    }

    /// Cell indices in increasing order.
    pub fn indices(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn from_indices(indices: impl IntoIterator<Item = usize>) -> Self {
        let mut set = BoxSet::default();
        for i in indices {
            set.insert(i);
        }
        set
    }
}

fn check_grid_size(grid_size: usize) -> Result<()> {
    if grid_size == 0 || grid_size > MAX_GRID_SIZE {
        return Err(Error::InvalidState(format!(
            "grid size {grid_size} outside 1..={MAX_GRID_SIZE}"
        )));
    }
    Ok(())
}

/// Collects cells into a set, rejecting out-of-bounds and duplicate cells.
fn collect_cells(cells: impl IntoIterator<Item = Cell>, grid_size: usize, err: fn(String) -> Error) -> Result<BoxSet> {
    let mut set = BoxSet::default();
    for cell in cells {
        if !cell.in_bounds(grid_size) {
            return Err(err(format!(
                "cell ({},{}) outside {grid_size}x{grid_size} grid",
                cell.row, cell.col
            )));
        }
        let i = cell.index(grid_size);
        if set.contains(i) {
            return Err(err(format!("duplicate cell ({},{})", cell.row, cell.col)));
        }
        set.insert(i);
    }
    Ok(set)
}

/// Complete environment state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridState {
    grid_size: u8,
    boxes: BoxSet,
    agent: Cell,
    carrying: bool,
}

impl GridState {
    pub fn new(grid_size: usize, agent: Cell, boxes: impl IntoIterator<Item = Cell>, carrying: bool) -> Result<Self> {
        check_grid_size(grid_size)?;
        if !agent.in_bounds(grid_size) {
            return Err(Error::InvalidState(format!(
                "agent ({},{}) outside {grid_size}x{grid_size} grid",
                agent.row, agent.col
            )));
        }
        let boxes = collect_cells(boxes, grid_size, Error::InvalidState)?;
        Ok(GridState {
            grid_size: grid_size as u8,
            boxes,
            agent,
            carrying,
        })
    }

    /// Builds a state from an already validated box mask.
    pub(crate) fn from_parts(grid_size: usize, agent: Cell, boxes: BoxSet, carrying: bool) -> Self {
        debug_assert!(agent.in_bounds(grid_size));
        debug_assert!(grid_size == 8 || boxes.0 >> (grid_size * grid_size) == 0);
        GridState {
            grid_size: grid_size as u8,
            boxes,
            agent,
            carrying,
        }
    }

    pub fn grid_size(&self) -> usize {
        self.grid_size as usize
    }

    pub fn agent(&self) -> Cell {
        self.agent
    }

    pub fn carrying(&self) -> bool {
        self.carrying
    }

    /// Boxes resting on the floor.
    pub fn floor_boxes(&self) -> BoxSet {
        self.boxes
    }

    pub fn has_box_at(&self, cell: Cell) -> bool {
        self.boxes.contains(cell.index(self.grid_size()))
    }

    /// Floor boxes plus the carried one.
    pub fn box_count(&self) -> usize {
        self.boxes.len() + usize::from(self.carrying)
    }

    fn agent_index(&self) -> usize {
        self.agent.index(self.grid_size())
    }

    /// Canonical byte serialization, used as a hashing key by the oracle.
    pub fn to_bytes(&self) -> [u8; 12] {
        let mut out = [0u8; 12];
        out[0] = self.grid_size;
        out[1] = self.agent.row;
        out[2] = self.agent.col;
        out[3] = u8::from(self.carrying);
        out[4..].copy_from_slice(&self.boxes.0.to_le_bytes());
        out
    }
}

/// Deterministic successor. Invalid moves, lifts and drops are no-ops.
pub fn step(state: &GridState, action: Action) -> GridState {
    let mut next = *state;
    let n = state.grid_size;
    match action {
        Action::GoLeft if next.agent.col > 0 => next.agent.col -= 1,
        Action::GoRight if next.agent.col + 1 < n => next.agent.col += 1,
        Action::GoUp if next.agent.row > 0 => next.agent.row -= 1,
        Action::GoDown if next.agent.row + 1 < n => next.agent.row += 1,
        Action::PickUp => {
            let here = state.agent_index();
            if !state.carrying && state.boxes.contains(here) {
                next.boxes.remove(here);
                next.carrying = true;
            }
        }
        Action::PutDown => {
            let here = state.agent_index();
            if state.carrying && !state.boxes.contains(here) {
                next.boxes.insert(here);
                next.carrying = false;
            }
        }
        _ => {}
    }
    next
}

/// Per-cell integer codes.
pub mod code {
    pub const EMPTY: u8 = 0;
    pub const BOX: u8 = 1;
    pub const AGENT: u8 = 2;
    pub const AGENT_ON_BOX: u8 = 3;
    pub const AGENT_CARRYING: u8 = 4;
    pub const AGENT_CARRYING_ON_BOX: u8 = 5;
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    grid_size: usize,
    cells: Vec<u8>,
}

impl Observation {
    pub fn grid_size(&self) -> usize {
        self.grid_size
    }

    /// Row-major cell codes.
    pub fn cells(&self) -> &[u8] {
        &self.cells
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.cells[row * self.grid_size + col]
    }

    pub fn rows(&self) -> Vec<Vec<u8>> {
        self.cells.chunks(self.grid_size).map(<[u8]>::to_vec).collect()
    }

    pub fn from_rows(rows: &[Vec<u8>]) -> Result<Self> {
        let grid_size = rows.len();
        if rows.iter().any(|r| r.len() != grid_size) {
            return Err(Error::InvalidState("observation is not square".into()));
        }
        Ok(Observation {
            grid_size,
            cells: rows.concat(),
        })
    }

    /// Inverse of [`encode_observation`].
    pub fn decode(&self) -> Result<GridState> {
        check_grid_size(self.grid_size)?;
        let mut boxes = BoxSet::default();
        let mut agent = None;
        let mut carrying = false;
        for (i, &c) in self.cells.iter().enumerate() {
            if c > code::AGENT_CARRYING_ON_BOX {
                return Err(Error::InvalidState(format!("unknown cell code {c}")));
            }
            if matches!(c, code::BOX | code::AGENT_ON_BOX | code::AGENT_CARRYING_ON_BOX) {
                boxes.insert(i);
            }
            if c >= code::AGENT {
                if agent.is_some() {
                    return Err(Error::InvalidState("more than one agent cell".into()));
                }
                agent = Some(Cell::from_index(i, self.grid_size));
                carrying = c >= code::AGENT_CARRYING;
            }
        }
        let agent = agent.ok_or_else(|| Error::InvalidState("no agent cell".into()))?;
        Ok(GridState::from_parts(self.grid_size, agent, boxes, carrying))
    }
}

pub fn encode_observation(state: &GridState) -> Observation {
    let g = state.grid_size();
    let mut cells: Vec<u8> = (0..g * g)
        .map(|i| {
            if state.boxes.contains(i) {
                code::BOX
            } else {
                code::EMPTY
            }
        })
        .collect();
    let a = state.agent_index();
    cells[a] = cell_code(state, a);
    Observation { grid_size: g, cells }
}

/// Observation code of one cell without materializing the whole grid.
#[inline]
pub fn cell_code(state: &GridState, index: usize) -> u8 {
    let has_box = state.boxes.contains(index);
    if index != state.agent_index() {
        return if has_box { code::BOX } else { code::EMPTY };
    }
    match (state.carrying, has_box) {
        (false, false) => code::AGENT,
        (false, true) => code::AGENT_ON_BOX,
        (true, false) => code::AGENT_CARRYING,
        (true, true) => code::AGENT_CARRYING_ON_BOX,
    }
}

/// Desired floor-box placement. Carries no agent information.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GoalObservation {
    grid_size: u8,
    boxes: BoxSet,
}

impl GoalObservation {
    pub fn grid_size(&self) -> usize {
        self.grid_size as usize
    }

    pub fn boxes(&self) -> BoxSet {
        self.boxes
    }

    pub fn box_count(&self) -> usize {
        self.boxes.len()
    }

    pub fn cells(&self) -> Vec<u8> {
        let g = self.grid_size();
        (0..g * g).map(|i| u8::from(self.boxes.contains(i))).collect()
    }

    /// Goal matching the floor boxes of `state`. The state must not be carrying
    /// and must hold at least one box.
    pub fn from_state(state: &GridState) -> Result<Self> {
        if state.carrying {
            return Err(Error::InvalidGoal("goal taken from a carrying state".into()));
        }
        if state.boxes.is_empty() {
            return Err(Error::InvalidGoal("goal has no boxes".into()));
        }
        Ok(GoalObservation {
            grid_size: state.grid_size,
            boxes: state.boxes,
        })
    }

    pub(crate) fn from_parts(grid_size: usize, boxes: BoxSet) -> Self {
        GoalObservation {
            grid_size: grid_size as u8,
            boxes,
        }
    }

    /// Infallible success test for callers that already share a grid size.
    #[inline]
    pub fn is_satisfied_by(&self, state: &GridState) -> bool {
        !state.carrying && self.boxes.is_subset_of(state.boxes)
    }
}

pub fn encode_goal(goal_boxes: &[Cell], grid_size: usize) -> Result<GoalObservation> {
    check_grid_size(grid_size).map_err(|e| Error::InvalidGoal(e.to_string()))?;
    if goal_boxes.is_empty() {
        return Err(Error::InvalidGoal("goal has no boxes".into()));
    }
    let boxes = collect_cells(goal_boxes.iter().copied(), grid_size, Error::InvalidGoal)?;
    Ok(GoalObservation::from_parts(grid_size, boxes))
}

/// Every goal cell holds a floor box and the agent is not holding one.
pub fn is_success(state: &GridState, goal: &GoalObservation) -> Result<bool> {
    if state.grid_size != goal.grid_size {
        return Err(Error::SizeMismatch {
            state: state.grid_size(),
            goal: goal.grid_size(),
        });
    }
    Ok(goal.is_satisfied_by(state))
}

pub fn reward(next_state: &GridState, goal: &GoalObservation) -> Result<u8> {
    is_success(next_state, goal).map(u8::from)
}

/// Debug rendering: `.` empty, `#` box, `a`/`A` agent, `c`/`C` carrying agent
/// (upper case when standing on a floor box).
pub fn render_ascii(state: &GridState) -> String {
    let obs = encode_observation(state);
    let mut out = String::new();
    for row in obs.cells.chunks(obs.grid_size) {
        for &c in row {
            out.push(match c {
                code::EMPTY => '.',
                code::BOX => '#',
                code::AGENT => 'a',
                code::AGENT_ON_BOX => 'A',
                code::AGENT_CARRYING => 'c',
                _ => 'C',
            });
        }
        out.push('\n');
    }
    out
}

fn write_boxes(f: &mut fmt::Formatter<'_>, boxes: BoxSet, grid_size: usize) -> fmt::Result {
    for i in boxes.indices() {
        let c = Cell::from_index(i, grid_size);
        write!(f, ";b={},{}", c.row, c.col)?;
    }
    Ok(())
}

impl fmt::Display for GridState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "g={};a={},{};c={}",
            self.grid_size,
            self.agent.row,
            self.agent.col,
            u8::from(self.carrying)
        )?;
        write_boxes(f, self.boxes, self.grid_size())
    }
}

impl fmt::Display for GoalObservation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "g={}", self.grid_size)?;
        write_boxes(f, self.boxes, self.grid_size())
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parse(format!("expected integer, got {s:?}")))
}

fn parse_cell(s: &str) -> Result<Cell> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| Error::Parse(format!("expected <row>,<col>, got {s:?}")))?;
    let (r, c) = (parse_usize(r)?, parse_usize(c)?);
    if r > u8::MAX as usize || c > u8::MAX as usize {
        return Err(Error::Parse(format!("cell {s:?} out of range")));
    }
    Ok(Cell::new(r, c))
}

#[derive(Default)]
struct Fields {
    grid_size: Option<usize>,
    agent: Option<Cell>,
    carrying: Option<bool>,
    boxes: Vec<Cell>,
}

fn parse_fields(s: &str) -> Result<Fields> {
    let mut fields = Fields::default();
    for part in s.trim().split(';').filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("expected key=value, got {part:?}")))?;
        match key.trim() {
            "g" => fields.grid_size = Some(parse_usize(value)?),
            "a" => fields.agent = Some(parse_cell(value)?),
            "c" => {
                fields.carrying = Some(match value.trim() {
                    "0" => false,
                    "1" => true,
                    other => return Err(Error::Parse(format!("carry flag {other:?}"))),
                })
            }
            "b" => fields.boxes.push(parse_cell(value)?),
            other => return Err(Error::Parse(format!("unknown key {other:?}"))),
        }
    }
    Ok(fields)
}

impl FromStr for GridState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f = parse_fields(s)?;
        let g = f.grid_size.ok_or_else(|| Error::Parse("missing g".into()))?;
        let a = f.agent.ok_or_else(|| Error::Parse("missing a".into()))?;
        let c = f.carrying.ok_or_else(|| Error::Parse("missing c".into()))?;
        GridState::new(g, a, f.boxes, c)
    }
}

impl FromStr for GoalObservation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f = parse_fields(s)?;
        if f.agent.is_some() || f.carrying.is_some() {
            return Err(Error::Parse("goal must not carry agent fields".into()));
        }
        let g = f.grid_size.ok_or_else(|| Error::Parse("missing g".into()))?;
        encode_goal(&f.boxes, g)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn st(s: &str) -> GridState {
        s.parse().unwrap()
    }

    #[test]
    fn moving_off_the_edge_is_a_no_op() {
        let s = st("g=3;a=0,0;c=0");
        assert_eq!(step(&s, Action::GoLeft), s);
        assert_eq!(step(&s, Action::GoUp), s);
        let corner = st("g=3;a=2,2;c=0");
        assert_eq!(step(&corner, Action::GoRight), corner);
        assert_eq!(step(&corner, Action::GoDown), corner);
    }

    #[test]
    fn pick_up_without_box_is_a_no_op() {
        let s = st("g=3;a=0,0;c=0;b=1,1");
        assert_eq!(step(&s, Action::PickUp), s);
    }

    #[test]
    fn put_down_rules() {
        let empty_handed = st("g=3;a=1,1;c=0;b=1,1");
        assert_eq!(step(&empty_handed, Action::PutDown), empty_handed);
        let blocked = st("g=3;a=1,1;c=1;b=1,1");
        assert_eq!(step(&blocked, Action::PutDown), blocked);
        let ok = st("g=3;a=0,1;c=1;b=1,1");
        assert_eq!(step(&ok, Action::PutDown), st("g=3;a=0,1;c=0;b=0,1;b=1,1"));
    }

    #[test]
    fn pick_up_while_carrying_is_a_no_op() {
        let s = st("g=3;a=1,1;c=1;b=1,1");
        assert_eq!(step(&s, Action::PickUp), s);
    }

    #[test]
    fn boxes_never_block_movement() {
        let s = st("g=2;a=0,0;c=1;b=0,1");
        assert_eq!(step(&s, Action::GoRight).agent(), Cell::new(0, 1));
    }

    #[test]
    fn scripted_two_by_two_solution() {
        let goal = encode_goal(&[Cell::new(1, 1)], 2).unwrap();
        let mut s = st("g=2;a=0,0;c=0;b=0,1");
        for a in [Action::GoRight, Action::PickUp, Action::GoDown] {
            s = step(&s, a);
            assert!(!is_success(&s, &goal).unwrap());
        }
        s = step(&s, Action::PutDown);
        assert!(is_success(&s, &goal).unwrap());
        assert_eq!(reward(&s, &goal).unwrap(), 1);
    }

    #[test]
    fn observation_codes() {
        let s = st("g=2;a=0,0;c=1;b=1,1");
        assert_eq!(encode_observation(&s).rows(), vec![vec![4, 0], vec![0, 1]]);
        let e = st("g=3;a=1,1;c=0");
        let obs = encode_observation(&e);
        for r in 0..3 {
            for c in 0..3 {
                assert_eq!(obs.get(r, c), if (r, c) == (1, 1) { 2 } else { 0 });
            }
        }
        assert_eq!(encode_observation(&st("g=2;a=0,0;c=0;b=0,0")).get(0, 0), 3);
        assert_eq!(encode_observation(&st("g=2;a=0,0;c=1;b=0,0")).get(0, 0), 5);
    }

    #[test]
    fn decode_rejects_malformed_observations() {
        let two_agents = Observation::from_rows(&[vec![2, 2], vec![0, 0]]).unwrap();
        assert!(two_agents.decode().is_err());
        let no_agent = Observation::from_rows(&[vec![1, 0], vec![0, 0]]).unwrap();
        assert!(no_agent.decode().is_err());
        let bad_code = Observation::from_rows(&[vec![2, 9], vec![0, 0]]).unwrap();
        assert!(bad_code.decode().is_err());
    }

    #[test]
    fn goal_encoding() {
        let g = encode_goal(&[Cell::new(1, 1)], 2).unwrap();
        assert_eq!(g.cells(), vec![0, 0, 0, 1]);
        assert!(encode_goal(&[], 2).is_err());
        assert!(encode_goal(&[Cell::new(0, 0), Cell::new(0, 0)], 2).is_err());
        assert!(encode_goal(&[Cell::new(2, 0)], 2).is_err());
        let three = encode_goal(&[Cell::new(0, 0), Cell::new(1, 2), Cell::new(3, 3)], 4).unwrap();
        assert_eq!(three.cells().iter().filter(|&&c| c == 1).count(), 3);
        assert!(three.cells().iter().all(|&c| c <= 1));
    }

    #[test]
    fn success_requires_floor_boxes() {
        let goal: GoalObservation = "g=3;b=0,0;b=2,2".parse().unwrap();
        assert!(is_success(&st("g=3;a=1,1;c=0;b=0,0;b=2,2"), &goal).unwrap());
        assert!(is_success(&st("g=3;a=2,2;c=0;b=0,0;b=2,2"), &goal).unwrap());
        assert!(!is_success(&st("g=3;a=1,1;c=1;b=0,0;b=2,2"), &goal).unwrap());
        assert!(!is_success(&st("g=3;a=1,1;c=0;b=0,0;b=2,1"), &goal).unwrap());
        assert!(is_success(&st("g=2;a=1,1;c=0;b=0,0"), &goal).is_err());
        let s = st("g=3;a=1,1;c=0;b=0,0;b=2,1");
        assert_eq!(reward(&s, &goal).unwrap(), reward(&s, &goal).unwrap());
        assert_eq!(reward(&s, &goal).unwrap(), 0);
    }

    #[test]
    fn invalid_states_are_rejected() {
        assert!(GridState::new(0, Cell::new(0, 0), [], false).is_err());
        assert!(GridState::new(9, Cell::new(0, 0), [], false).is_err());
        assert!(GridState::new(2, Cell::new(2, 0), [], false).is_err());
        assert!(GridState::new(2, Cell::new(0, 0), [Cell::new(1, 1), Cell::new(1, 1)], false).is_err());
        assert!("g=2;a=0,0".parse::<GridState>().is_err());
        assert!("g=2;a=0,0;c=2".parse::<GridState>().is_err());
        assert!("g=2;a=0,0;c=0;b=1,1".parse::<GoalObservation>().is_err());
    }

    #[test]
    fn text_format_is_stable() {
        let s = st("g=4;a=3,1;c=1;b=2,2;b=0,3");
        assert_eq!(s.to_string(), "g=4;a=3,1;c=1;b=0,3;b=2,2");
        let g: GoalObservation = "g=4;b=1,1".parse().unwrap();
        assert_eq!(g.to_string(), "g=4;b=1,1");
    }

    #[test]
    fn ascii_render() {
        assert_eq!(render_ascii(&st("g=2;a=0,0;c=1;b=1,1")), "c.\n.#\n");
    }

    fn arb_walk() -> impl Strategy<Value = (usize, usize, Vec<usize>, u64)> {
        (
            1usize..=6,
            0usize..4,
            proptest::collection::vec(0usize..6, 0..60),
            any::<u64>(),
        )
    }

    fn start_state(g: usize, n: usize, seed: u64) -> GridState {
        let cells = g * g;
        let n = n.min(cells);
        let mut idx: Vec<usize> = (0..cells).collect();
        // cheap deterministic shuffle
        let mut x = seed | 1;
        for i in (1..cells).rev() {
            x ^= x << 13;
            x ^= x >> 7;
            x ^= x << 17;
            idx.swap(i, (x % (i as u64 + 1)) as usize);
        }
        let boxes = idx[..n].iter().map(|&i| Cell::from_index(i, g));
        GridState::new(g, Cell::from_index(idx[cells - 1], g), boxes, false).unwrap()
    }

    proptest! {
        #[test]
        fn walks_conserve_boxes_and_round_trip((g, n, actions, seed) in arb_walk()) {
            let mut s = start_state(g, n, seed);
            let count = s.box_count();
            for a in actions {
                let next = step(&s, Action::ALL[a]);
                prop_assert_eq!(next, step(&s, Action::ALL[a]));
                s = next;
                prop_assert_eq!(s.box_count(), count);
                let obs = encode_observation(&s);
                prop_assert_eq!(obs.cells().iter().filter(|&&c| c >= code::AGENT).count(), 1);
                prop_assert_eq!(obs.decode().unwrap(), s);
                prop_assert_eq!(s.to_string().parse::<GridState>().unwrap(), s);
            }
        }
    }
}
