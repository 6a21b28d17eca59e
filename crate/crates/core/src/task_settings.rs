//! Task distributions: no stitching, Quarters (exact stitching) and
//! Few-to-Many (generalized stitching), each with a train and an eval mode.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid_env::{BoxSet, Cell, GoalObservation, GridState};

/// Retry cap for rejection-sampled placements.
pub const MAX_SAMPLER_RETRIES: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettingKind {
    NoStitching,
    Quarters,
    FewToMany,
}

impl SettingKind {
    pub fn name(self) -> &'static str {
        match self {
            SettingKind::NoStitching => "no_stitching",
            SettingKind::Quarters => "quarters",
            SettingKind::FewToMany => "few_to_many",
        }
    }
}

impl FromStr for SettingKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_stitching" => Ok(SettingKind::NoStitching),
            "quarters" => Ok(SettingKind::Quarters),
            "few_to_many" => Ok(SettingKind::FewToMany),
            other => Err(Error::InvalidSetting(format!("unknown setting {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Train => "train",
            Mode::Eval => "eval",
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Mode::Train),
            "eval" => Ok(Mode::Eval),
            other => Err(Error::InvalidSetting(format!("unknown mode {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SettingSpec {
    pub kind: SettingKind,
    pub grid_size: usize,
    pub n_boxes: usize,
    /// Boxes spawned on their targets in Few-to-Many training tasks.
    pub m_preplaced: usize,
    pub mode: Mode,
}

impl SettingSpec {
    pub fn new(kind: SettingKind, grid_size: usize, n_boxes: usize, mode: Mode) -> Self {
        SettingSpec {
            kind,
            grid_size,
            n_boxes,
            m_preplaced: 0,
            mode,
        }
    }

    pub fn few_to_many(grid_size: usize, n_boxes: usize, m_preplaced: usize, mode: Mode) -> Self {
        SettingSpec {
            kind: SettingKind::FewToMany,
            grid_size,
            n_boxes,
            m_preplaced,
            mode,
        }
    }

    pub fn with_mode(self, mode: Mode) -> Self {
        SettingSpec { mode, ..self }
    }

    /// Short label used in metric files, e.g. `few_to_many:g4:n2:m1`.
    pub fn label(&self) -> String {
        let mut s = format!("{}:g{}:n{}", self.kind.name(), self.grid_size, self.n_boxes);
        if self.kind == SettingKind::FewToMany {
            s.push_str(&format!(":m{}", self.m_preplaced));
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.grid_size;
        let cells = g * g;
        let n = self.n_boxes;
        if g == 0 || g > crate::grid_env::MAX_GRID_SIZE {
            return Err(Error::InvalidSetting(format!("grid size {g} unsupported")));
        }
        if n == 0 {
            return Err(Error::InvalidSetting("at least one box is required".into()));
        }
        match self.kind {
            SettingKind::NoStitching => {
                if n >= cells {
                    return Err(Error::InvalidSetting(format!(
                        "{n} boxes leave no distinct goal arrangement on {cells} cells"
                    )));
                }
            }
            SettingKind::Quarters => {
                if g % 2 != 0 {
                    return Err(Error::InvalidSetting(format!("quarters need an even grid, got {g}")));
                }
                let q = (g / 2) * (g / 2);
                if n > q {
                    return Err(Error::InvalidSetting(format!(
                        "{n} boxes do not fit a quarter of {q} cells"
                    )));
                }
            }
            SettingKind::FewToMany => {
                if self.m_preplaced >= n {
                    return Err(Error::InvalidSetting(format!(
                        "preplaced boxes {} must be fewer than {n}",
                        self.m_preplaced
                    )));
                }
                let needed = match self.mode {
                    Mode::Train => 2 * n - self.m_preplaced,
                    Mode::Eval => 2 * n,
                };
                if needed > cells {
                    return Err(Error::InvalidSetting(format!(
                        "{needed} distinct cells needed, grid has {cells}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Task {
    pub initial: GridState,
    pub goal: GoalObservation,
    pub spec: SettingSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Quarter {
    TopLeft = 0,
    TopRight = 1,
    BottomLeft = 2,
    BottomRight = 3,
}

impl Quarter {
    pub const ALL: [Quarter; 4] = [
        Quarter::TopLeft,
        Quarter::TopRight,
        Quarter::BottomLeft,
        Quarter::BottomRight,
    ];

    fn from_bits(bits: usize) -> Quarter {
        Self::ALL[bits & 3]
    }

    /// The two quarters sharing an edge with this one.
    pub fn adjacent(self) -> [Quarter; 2] {
        let q = self as usize;
        [Quarter::from_bits(q ^ 1), Quarter::from_bits(q ^ 2)]
    }

    pub fn diagonal(self) -> Quarter {
        Quarter::from_bits(self as usize ^ 3)
    }

    /// Row-major cell indices of this quarter on an even grid.
    pub fn cells(self, grid_size: usize) -> Vec<usize> {
        let h = grid_size / 2;
        let (r0, c0) = ((self as usize >> 1) * h, (self as usize & 1) * h);
        (r0..r0 + h)
            .flat_map(|r| (c0..c0 + h).map(move |c| r * grid_size + c))
            .collect()
    }

    pub fn of_cell(index: usize, grid_size: usize) -> Quarter {
        let h = grid_size / 2;
        let (r, c) = (index / grid_size, index % grid_size);
        Quarter::from_bits(usize::from(r >= h) << 1 | usize::from(c >= h))
    }
}

fn choose_set<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], k: usize) -> BoxSet {
    BoxSet::from_indices(pool.choose_multiple(rng, k).copied())
}

fn random_agent<R: Rng + ?Sized>(rng: &mut R, grid_size: usize) -> Cell {
    Cell::from_index(rng.gen_range(0..grid_size * grid_size), grid_size)
}

fn make_task<R: Rng + ?Sized>(rng: &mut R, spec: &SettingSpec, boxes: BoxSet, goal: BoxSet) -> Task {
    let g = spec.grid_size;
    Task {
        initial: GridState::from_parts(g, random_agent(rng, g), boxes, false),
        goal: GoalObservation::from_parts(g, goal),
        spec: *spec,
    }
}

fn require_kind(spec: &SettingSpec, kind: SettingKind) -> Result<()> {
    if spec.kind != kind {
        return Err(Error::InvalidSetting(format!(
            "expected {} spec, got {}",
            kind.name(),
            spec.kind.name()
        )));
    }
    spec.validate()
}

pub fn sample_no_stitching<R: Rng + ?Sized>(spec: &SettingSpec, rng: &mut R) -> Result<Task> {
    require_kind(spec, SettingKind::NoStitching)?;
    let all: Vec<usize> = (0..spec.grid_size * spec.grid_size).collect();
    let boxes = choose_set(rng, &all, spec.n_boxes);
    for _ in 0..MAX_SAMPLER_RETRIES {
        let goal = choose_set(rng, &all, spec.n_boxes);
        if goal != boxes {
            return Ok(make_task(rng, spec, boxes, goal));
        }
    }
    Err(Error::SamplerExhausted(MAX_SAMPLER_RETRIES))
}

pub fn sample_quarters<R: Rng + ?Sized>(spec: &SettingSpec, rng: &mut R) -> Result<Task> {
    require_kind(spec, SettingKind::Quarters)?;
    let g = spec.grid_size;
    let start = Quarter::ALL[rng.gen_range(0..4)];
    let target = match spec.mode {
        Mode::Train => start.adjacent()[rng.gen_range(0..2)],
        Mode::Eval => start.diagonal(),
    };
    let boxes = choose_set(rng, &start.cells(g), spec.n_boxes);
    let goal = choose_set(rng, &target.cells(g), spec.n_boxes);
    Ok(make_task(rng, spec, boxes, goal))
}

pub fn sample_few_to_many<R: Rng + ?Sized>(spec: &SettingSpec, rng: &mut R) -> Result<Task> {
    require_kind(spec, SettingKind::FewToMany)?;
    let g = spec.grid_size;
    let all: Vec<usize> = (0..g * g).collect();
    let goal_cells: Vec<usize> = all.choose_multiple(rng, spec.n_boxes).copied().collect();
    let goal = BoxSet::from_indices(goal_cells.iter().copied());
    let free: Vec<usize> = all.iter().copied().filter(|&i| !goal.contains(i)).collect();
    let on_target = match spec.mode {
        Mode::Train => spec.m_preplaced,
        Mode::Eval => 0,
    };
    let mut boxes = choose_set(rng, &goal_cells, on_target);
    for i in free.choose_multiple(rng, spec.n_boxes - on_target) {
        boxes.insert(*i);
    }
    Ok(make_task(rng, spec, boxes, goal))
}

pub fn sample_task<R: Rng + ?Sized>(spec: &SettingSpec, rng: &mut R) -> Result<Task> {
    match spec.kind {
        SettingKind::NoStitching => sample_no_stitching(spec, rng),
        SettingKind::Quarters => sample_quarters(spec, rng),
        SettingKind::FewToMany => sample_few_to_many(spec, rng),
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} -> {}", self.initial, self.goal)
    }
}
