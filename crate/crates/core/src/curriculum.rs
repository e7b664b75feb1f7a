//! Curricula of start states ordered backwards from the goal.
//!
//! Stage `k` (1-based) of a demo-built curriculum holds every state that is
//! exactly `k` expert actions away from success. Start states are stored as a
//! `(seed, prefix length)` pair and rebuilt by replaying the demo prefix.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expert::DemoSet;
use crate::gridworld::{self, Action, ActionSet, EnvError, GridState, LevelSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("demo {index} is invalid: {reason}")]
    InvalidDemo { index: usize, reason: String },
    #[error("no demo has two or more actions; the curriculum would be empty")]
    NoStartStates,
    #[error("stage {stage} is empty")]
    EmptyStage { stage: usize },
    #[error("stage {stage} out of range 1..={n_stages}")]
    StageOutOfRange { stage: usize, n_stages: usize },
    #[error("curriculum is for level `{found}`, expected `{expected}`")]
    LevelMismatch { expected: String, found: String },
    #[error("bad combine plan `{0}` (expected none, fixed:<n> or exp)")]
    BadPlan(String),
    #[error("curriculum file: {0}")]
    Format(String),
    #[error(transparent)]
    Env(#[from] EnvError),
}

/// A start state: replay `prefix_len` actions of demo `demo_index` on `seed`,
/// or restore `snapshot` when present (random-walk curricula).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StartState {
    pub demo_index: usize,
    pub seed: u64,
    pub prefix_len: usize,
    /// Expert actions left until success (walk length for random walks).
    pub remaining: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot: Option<Box<GridState>>,
}

/// How consecutive stages are merged to shorten a curriculum.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CombinePlan {
    #[default]
    None,
    /// Groups of `n` consecutive stages.
    Fixed(usize),
    /// Groups of 1, 2, 4, ... stages; the last group takes what is left.
    Exponential,
}

impl CombinePlan {
    /// Sizes of the consecutive groups covering `n_stages` stages.
    pub fn group_sizes(self, n_stages: usize) -> Vec<usize> {
        let mut sizes = Vec::new();
        let mut left = n_stages;
        let mut next = 1usize;
        while left > 0 {
            let size = match self {
                CombinePlan::None => 1,
                CombinePlan::Fixed(n) => n.max(1),
                CombinePlan::Exponential => {
                    let s = next;
                    next *= 2;
                    s
                }
            }
            .min(left);
            sizes.push(size);
            left -= size;
        }
        sizes
    }
}

impl fmt::Display for CombinePlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CombinePlan::None => write!(f, "none"),
            CombinePlan::Fixed(n) => write!(f, "fixed:{n}"),
            CombinePlan::Exponential => write!(f, "exp"),
        }
    }
}

impl FromStr for CombinePlan {
    type Err = CurriculumError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CombinePlan::None),
            "exp" | "exponential" => Ok(CombinePlan::Exponential),
            _ => s
                .strip_prefix("fixed:")
                .and_then(|n| n.parse::<usize>().ok())
                .filter(|&n| n >= 1)
                .map(CombinePlan::Fixed)
                .ok_or_else(|| CurriculumError::BadPlan(s.to_string())),
        }
    }
}

impl Serialize for CombinePlan {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CombinePlan {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Curriculum {
    #[serde(rename = "level")]
    pub level_id: String,
    pub n_stages: usize,
    pub combine_plan: CombinePlan,
    pub stages: Vec<Vec<StartState>>,
    /// Action lists of the source demos, indexed by `StartState::demo_index`.
    #[serde(default)]
    pub demo_actions: Vec<Vec<Action>>,
}

/// Counts from building a random-walk curriculum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkReport {
    pub walks: usize,
    /// Walks discarded at each stage for re-entering a success state.
    pub discarded: Vec<usize>,
}

impl WalkReport {
    pub fn discard_rate(&self, stage: usize) -> f64 {
        self.discarded[stage - 1] as f64 / self.walks as f64
    }
}

/// Builds a curriculum from expert demos: a demo of length `L` contributes
/// one start state to each stage `k` in `1..L`, namely the state after its
/// first `L - k` actions.
pub fn build_from_demos(demos: &DemoSet, level: &LevelSpec) -> Result<Curriculum, CurriculumError> {
    if demos.level_id != level.id {
        return Err(CurriculumError::LevelMismatch {
            expected: level.id.to_string(),
            found: demos.level_id.clone(),
        });
    }
    for (index, d) in demos.demos.iter().enumerate() {
        d.validate(level)
            .map_err(|reason| CurriculumError::InvalidDemo { index, reason })?;
    }
    let max_len = demos.lengths().max().unwrap_or(0);
    if max_len < 2 {
        return Err(CurriculumError::NoStartStates);
    }
    let mut stages: Vec<Vec<StartState>> = vec![Vec::new(); max_len - 1];
    for (demo_index, d) in demos.demos.iter().enumerate() {
        let len = d.len();
        for k in 1..len {
            stages[k - 1].push(StartState {
                demo_index,
                seed: d.seed,
                prefix_len: len - k,
                remaining: k,
                snapshot: None,
            });
        }
    }
    Ok(Curriculum {
        level_id: level.id.to_string(),
        n_stages: stages.len(),
        combine_plan: CombinePlan::None,
        stages,
        demo_actions: demos.demos.iter().map(|d| d.actions.clone()).collect(),
    })
}

/// Random-walk curriculum: stage `i` holds the states reached after `i`
/// uniformly random actions from each goal state. A walk that lands in a
/// success state again is dropped from that stage onwards.
pub fn build_random_walk(
    level: &LevelSpec,
    goal_states: &[GridState],
    n_stages: usize,
    actions: ActionSet,
    walk_seed: u64,
) -> Result<(Curriculum, WalkReport), CurriculumError> {
    if n_stages == 0 {
        return Err(CurriculumError::NoStartStates);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(walk_seed);
    let mut walkers: Vec<(usize, GridState)> = goal_states.iter().cloned().enumerate().collect();
    let mut stages = Vec::with_capacity(n_stages);
    let mut discarded = Vec::with_capacity(n_stages);
    for stage in 1..=n_stages {
        let before = walkers.len();
        walkers.retain_mut(|(_, s)| {
            let pool = actions.actions(s.mission.task);
            let a = pool[rng.gen_range(0..pool.len())];
            s.transition(a);
            !s.success_predicate()
        });
        discarded.push(before - walkers.len());
        if walkers.is_empty() {
            return Err(CurriculumError::EmptyStage { stage });
        }
        stages.push(
            walkers
                .iter()
                .map(|(i, s)| {
                    let mut snap = s.clone();
                    snap.restart_episode();
                    StartState {
                        demo_index: *i,
                        seed: s.seed,
                        prefix_len: 0,
                        remaining: stage,
                        snapshot: Some(Box::new(snap)),
                    }
                })
                .collect(),
        );
    }
    let curriculum = Curriculum {
        level_id: level.id.to_string(),
        n_stages,
        combine_plan: CombinePlan::None,
        stages,
        demo_actions: Vec::new(),
    };
    let report = WalkReport {
        walks: goal_states.len(),
        discarded,
    };
    Ok((curriculum, report))
}

/// Unions consecutive groups of stages, keeping every start state and its order.
pub fn combine_stages(c: &Curriculum, plan: CombinePlan) -> Curriculum {
    let mut stages = Vec::new();
    let mut it = c.stages.iter();
    for size in plan.group_sizes(c.stages.len()) {
        let merged: Vec<StartState> = it.by_ref().take(size).flatten().cloned().collect();
        stages.push(merged);
    }
    Curriculum {
        level_id: c.level_id.clone(),
        n_stages: stages.len(),
        combine_plan: plan,
        stages,
        demo_actions: c.demo_actions.clone(),
    }
}

impl Curriculum {
    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn total_states(&self) -> usize {
        self.stages.iter().map(Vec::len).sum()
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    /// Rebuilds the environment state a start state stands for, with a fresh
    /// episode budget.
    pub fn materialize(&self, level: &LevelSpec, start: &StartState) -> Result<GridState, CurriculumError> {
        let mut state = match &start.snapshot {
            Some(snap) => (**snap).clone(),
            None => {
                let actions = self
                    .demo_actions
                    .get(start.demo_index)
                    .ok_or_else(|| CurriculumError::Format(format!("missing actions for demo {}", start.demo_index)))?;
                let prefix = actions.get(..start.prefix_len).ok_or_else(|| {
                    CurriculumError::Format(format!(
                        "prefix {} longer than demo {}",
                        start.prefix_len, start.demo_index
                    ))
                })?;
                gridworld::replay(level, start.seed, prefix)?
            }
        };
        state.restart_episode();
        Ok(state)
    }

    /// Uniform draw from stage `stage` (1-based), materialized.
    pub fn sample_start<R: Rng + ?Sized>(
        &self,
        level: &LevelSpec,
        stage: usize,
        rng: &mut R,
    ) -> Result<(GridState, &StartState), CurriculumError> {
        if stage == 0 || stage > self.stages.len() {
            return Err(CurriculumError::StageOutOfRange {
                stage,
                n_stages: self.stages.len(),
            });
        }
        let states = &self.stages[stage - 1];
        if states.is_empty() {
            return Err(CurriculumError::EmptyStage { stage });
        }
        let start = &states[rng.gen_range(0..states.len())];
        Ok((self.materialize(level, start)?, start))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("curriculum serializes")
    }

    pub fn from_json(text: &str) -> Result<Curriculum, CurriculumError> {
        let c: Curriculum = serde_json::from_str(text).map_err(|e| CurriculumError::Format(e.to_string()))?;
        if c.n_stages != c.stages.len() {
            return Err(CurriculumError::Format(format!(
                "header says {} stages, found {}",
                c.n_stages,
                c.stages.len()
            )));
        }
        Ok(c)
    }
}
