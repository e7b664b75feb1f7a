//! Heuristic expert: breadth-first planning over `(position, direction)`
//! chained through per-task subgoals, plus demo sets and their JSON-lines
//! file format.

use std::collections::{HashSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gridworld::{
    self, Action, Cell, Direction, DoorState, EnvError, GridState, ItemKind, LevelSpec, Mission, Pos, Target, Task,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExpertError {
    #[error("no path to any of {goals} goal cells")]
    Unreachable { goals: usize },
    #[error("level `{level}` seed {seed}: {reason}")]
    Unsolvable { level: String, seed: u64, reason: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("demo file line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("demo {index} does not replay to success: {reason}")]
    InvalidDemo { index: usize, reason: String },
    #[error("demo count must be at least 1")]
    EmptyRequest,
}

/// One expert solution, sufficient to replay deterministically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demo {
    #[serde(rename = "level")]
    pub level_id: String,
    pub seed: u64,
    pub mission: Mission,
    pub actions: Vec<Action>,
}

impl Demo {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Replays the demo and checks that it ends in success on its last action.
    pub fn validate(&self, level: &LevelSpec) -> Result<(), String> {
        if self.actions.is_empty() {
            return Err("empty action list".into());
        }
        let state = gridworld::replay(level, self.seed, &self.actions).map_err(|e| e.to_string())?;
        if state.mission != self.mission {
            return Err("mission does not match the level instance".into());
        }
        if !(state.done && state.success_predicate()) {
            return Err("final state is not a success".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DemoSet {
    pub level_id: String,
    pub demos: Vec<Demo>,
    /// Seed the per-demo seeds were drawn from, when known.
    pub generation_seed: Option<u64>,
}

impl DemoSet {
    pub fn lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.demos.iter().map(Demo::len)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for d in &self.demos {
            out.push_str(&serde_json::to_string(d).expect("demo serializes"));
            out.push('\n');
        }
        out
    }

    /// Parses JSON lines; blank lines are skipped, line numbers are 1-based.
    pub fn from_jsonl(text: &str) -> Result<DemoSet, ExpertError> {
        let mut demos: Vec<Demo> = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let demo: Demo = serde_json::from_str(line).map_err(|e| ExpertError::Parse {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if let Some(first) = demos.first() {
                if first.level_id != demo.level_id {
                    return Err(ExpertError::Parse {
                        line: i + 1,
                        msg: format!("level `{}` differs from `{}`", demo.level_id, first.level_id),
                    });
                }
            }
            demos.push(demo);
        }
        let level_id = demos.first().map(|d| d.level_id.clone()).ok_or(ExpertError::Parse {
            line: 0,
            msg: "no demos in file".into(),
        })?;
        Ok(DemoSet {
            level_id,
            demos,
            generation_seed: None,
        })
    }

    pub fn validate(&self, level: &LevelSpec) -> Result<(), ExpertError> {
        for (index, d) in self.demos.iter().enumerate() {
            d.validate(level)
                .map_err(|reason| ExpertError::InvalidDemo { index, reason })?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Planning

const NO_PARENT: u32 = u32::MAX;
const EXPANSION: [Action; 3] = [Action::TurnLeft, Action::TurnRight, Action::Forward];

fn node(state: &GridState, p: Pos, d: Direction) -> usize {
    state.index(p) * 4 + d.index()
}

/// Breadth-first search tree over `(cell, direction)` nodes rooted at the agent.
struct Search {
    dist: Vec<u32>,
    parent: Vec<u32>,
    via: Vec<Action>,
    order: Vec<usize>,
}

fn walkable(cell: Cell, through_closed: bool) -> bool {
    cell.is_passable()
        || (through_closed
            && matches!(
                cell,
                Cell::Door {
                    state: DoorState::Closed,
                    ..
                }
            ))
}

impl Search {
    /// Expands nodes in turn-left, turn-right, forward order until `stop`
    /// accepts a node or the reachable graph is exhausted.
    fn run(
        state: &GridState,
        through_closed: bool,
        mut stop: impl FnMut(Pos, Direction) -> bool,
    ) -> (Search, Option<usize>) {
        let n = state.cells.len() * 4;
        let mut s = Search {
            dist: vec![u32::MAX; n],
            parent: vec![NO_PARENT; n],
            via: vec![Action::Done; n],
            order: Vec::new(),
        };
        let start = node(state, state.agent.pos, state.agent.dir);
        s.dist[start] = 0;
        s.order.push(start);
        if stop(state.agent.pos, state.agent.dir) {
            return (s, Some(start));
        }
        let mut queue = VecDeque::from([(state.agent.pos, state.agent.dir)]);
        while let Some((p, d)) = queue.pop_front() {
            let cur = node(state, p, d);
            for action in EXPANSION {
                let (np, nd) = match action {
                    Action::TurnLeft => (p, d.left()),
                    Action::TurnRight => (p, d.right()),
                    _ => {
                        let f = p.step(d);
                        if !walkable(state.get(f), through_closed) {
                            continue;
                        }
                        (f, d)
                    }
                };
                let next = node(state, np, nd);
                if s.dist[next] != u32::MAX {
                    continue;
                }
                s.dist[next] = s.dist[cur] + 1;
                s.parent[next] = cur as u32;
                s.via[next] = action;
                s.order.push(next);
                if stop(np, nd) {
                    return (s, Some(next));
                }
                queue.push_back((np, nd));
            }
        }
        (s, None)
    }

    fn path_to(&self, mut target: usize) -> Vec<Action> {
        let mut actions = Vec::with_capacity(self.dist[target] as usize);
        while self.parent[target] != NO_PARENT {
            actions.push(self.via[target]);
            target = self.parent[target] as usize;
        }
        actions.reverse();
        actions
    }
}

fn goal_mask(state: &GridState, goals: &[Pos]) -> Vec<bool> {
    let mut mask = vec![false; state.cells.len()];
    for &g in goals {
        if state.in_bounds(g) {
            mask[state.index(g)] = true;
        }
    }
    mask
}

fn plan(state: &GridState, goals: &[Pos], face_goal: bool, through_closed: bool) -> Result<Vec<Action>, ExpertError> {
    let mask = goal_mask(state, goals);
    let hit = |p: Pos, d: Direction| {
        let q = if face_goal { p.step(d) } else { p };
        state.in_bounds(q) && mask[state.index(q)]
    };
    let (search, found) = Search::run(state, through_closed, hit);
    found
        .map(|t| search.path_to(t))
        .ok_or(ExpertError::Unreachable { goals: goals.len() })
}

/// Minimum-length action sequence that puts the agent on a goal cell, or
/// adjacent to and facing one when `face_goal` is set.
///
/// Only empty floor and open doors are walkable. Among equal-length plans
/// the one that turns left earliest wins.
pub fn shortest_path(state: &GridState, goals: &[Pos], face_goal: bool) -> Result<Vec<Action>, ExpertError> {
    plan(state, goals, face_goal, false)
}

// ---------------------------------------------------------------------------
// Solving

struct Runner {
    state: GridState,
    actions: Vec<Action>,
    solved: bool,
}

impl Runner {
    fn exec(&mut self, action: Action) -> Result<(), ExpertError> {
        if self.solved {
            return Ok(());
        }
        let out = self.state.step(action)?;
        self.actions.push(action);
        if out.success {
            self.solved = true;
        } else if out.done {
            return Err(self.fail("step budget exhausted"));
        }
        Ok(())
    }

    /// Executes a plan, opening closed doors on the way.
    fn follow(&mut self, plan: Vec<Action>) -> Result<(), ExpertError> {
        for a in plan {
            if a == Action::Forward
                && matches!(
                    self.state.front_cell(),
                    Cell::Door {
                        state: DoorState::Closed,
                        ..
                    }
                )
            {
                self.exec(Action::Toggle)?;
            }
            self.exec(a)?;
        }
        Ok(())
    }

    fn face(&mut self, goals: &[Pos]) -> Result<(), ExpertError> {
        if goals.is_empty() {
            return Err(self.fail("no goal cells"));
        }
        let p = plan(&self.state, goals, true, true)?;
        self.follow(p)
    }

    fn fail(&self, reason: &str) -> ExpertError {
        ExpertError::Unsolvable {
            level: self.state.level_id.clone(),
            seed: self.state.seed,
            reason: reason.to_string(),
        }
    }

    /// Empty floor cell the agent can face soonest among `candidates`;
    /// ties go to the smaller `(row, col)`.
    fn nearest_facing(&self, candidates: &[Pos]) -> Option<Pos> {
        let (search, _) = Search::run(&self.state, true, |_, _| false);
        let s = &self.state;
        candidates
            .iter()
            .copied()
            .filter_map(|c| {
                let best = Direction::ALL
                    .into_iter()
                    .filter_map(|d| {
                        // stand on c - d facing d
                        let (dx, dy) = d.delta();
                        let stand = Pos::new(c.x - dx, c.y - dy);
                        if !s.in_bounds(stand) {
                            return None;
                        }
                        let dist = search.dist[node(s, stand, d)];
                        (dist != u32::MAX).then_some(dist)
                    })
                    .min()?;
                Some((best, c.y, c.x, c))
            })
            .min()
            .map(|t| t.3)
    }

    /// Drops whatever is carried on the nearest free cell away from doors.
    fn stash(&mut self) -> Result<(), ExpertError> {
        if self.state.agent.carrying.is_none() {
            return Ok(());
        }
        let s = &self.state;
        let doors = s.positions_where(|c| matches!(c, Cell::Door { .. }));
        let candidates: Vec<Pos> = s
            .positions_where(|c| c == Cell::Empty)
            .into_iter()
            .filter(|p| doors.iter().all(|d| d.manhattan(*p) > 1))
            .collect();
        let cell = self
            .nearest_facing(&candidates)
            .ok_or_else(|| self.fail("no free cell to drop on"))?;
        self.face(&[cell])?;
        self.exec(Action::Drop)
    }

    fn pick(&mut self, target: Target) -> Result<(), ExpertError> {
        if self.state.agent.carrying.is_some() {
            self.stash()?;
        }
        let goals = self.state.find(target);
        self.face(&goals)?;
        self.exec(Action::Pickup)?;
        if self.solved || self.state.agent.carrying.is_some() {
            Ok(())
        } else {
            Err(self.fail("pickup failed"))
        }
    }

    /// Opens the door at `door`, fetching its key first when locked.
    fn open_door(&mut self, door: Pos) -> Result<(), ExpertError> {
        let Cell::Door { color, state } = self.state.get(door) else {
            return Err(self.fail("not a door"));
        };
        if state == DoorState::Locked {
            self.clear_blockers(door)?;
            if self.state.agent.carrying != Some(crate::gridworld::Item::new(ItemKind::Key, color)) {
                self.pick(Target::item(ItemKind::Key, color))?;
            }
        }
        if state != DoorState::Open {
            self.face(&[door])?;
            self.exec(Action::Toggle)?;
        }
        Ok(())
    }

    /// Moves reachable items sitting right in front of `door` out of the way.
    fn clear_blockers(&mut self, door: Pos) -> Result<(), ExpertError> {
        for n in door.neighbors() {
            if !matches!(self.state.get(n), Cell::Item(_)) {
                continue;
            }
            let Cell::Item(item) = self.state.get(n) else {
                unreachable!()
            };
            if self.state.mission.target.matches_item(item) {
                continue;
            }
            if plan(&self.state, &[n], true, true).is_err() {
                continue;
            }
            if self.state.agent.carrying.is_some() {
                self.stash()?;
            }
            self.face(&[n])?;
            self.exec(Action::Pickup)?;
            self.stash()?;
        }
        Ok(())
    }

    fn solve(&mut self) -> Result<(), ExpertError> {
        let mission = self.state.mission;
        match mission.task {
            Task::GoTo => {
                let goals = self.state.find(mission.target);
                self.face(&goals)?;
            }
            Task::Pickup => self.pick(mission.target)?,
            Task::Open => {
                let doors = self.state.find(mission.target);
                let door = *doors.first().ok_or_else(|| self.fail("no such door"))?;
                self.open_door(door)?;
            }
            Task::PutNext => {
                let anchor = mission.second.ok_or_else(|| self.fail("missing second target"))?;
                self.pick(mission.target)?;
                let s = &self.state;
                let mut candidates: Vec<Pos> = s
                    .find(anchor)
                    .into_iter()
                    .flat_map(|p| p.neighbors())
                    .filter(|&n| s.get(n) == Cell::Empty)
                    .collect();
                candidates.sort();
                candidates.dedup();
                let cell = self
                    .nearest_facing(&candidates)
                    .ok_or_else(|| self.fail("no free cell next to the anchor"))?;
                self.face(&[cell])?;
                self.exec(Action::Drop)?;
            }
            Task::UnlockPickup => {
                let locked = self.state.positions_where(|c| {
                    matches!(
                        c,
                        Cell::Door {
                            state: DoorState::Locked,
                            ..
                        }
                    )
                });
                for door in locked {
                    self.open_door(door)?;
                }
                self.pick(mission.target)?;
            }
        }
        if self.solved {
            Ok(())
        } else {
            Err(self.fail("subgoals finished without success"))
        }
    }
}

/// Solves a freshly reset level instance.
pub fn solve(state: &GridState) -> Result<Demo, ExpertError> {
    let mut runner = Runner {
        state: state.clone(),
        actions: Vec::new(),
        solved: false,
    };
    runner.solve()?;
    Ok(Demo {
        level_id: state.level_id.clone(),
        seed: state.seed,
        mission: state.mission,
        actions: runner.actions,
    })
}

/// Generates `n` expert demos on distinct seeds drawn from `generation_seed`.
pub fn gen_demos(level: &LevelSpec, n: usize, generation_seed: u64) -> Result<DemoSet, ExpertError> {
    if n == 0 {
        return Err(ExpertError::EmptyRequest);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(generation_seed);
    let mut seen = HashSet::with_capacity(n);
    let mut demos = Vec::with_capacity(n);
    while demos.len() < n {
        let seed: u64 = rng.gen();
        if !seen.insert(seed) {
            continue;
        }
        let state = gridworld::reset(level, seed)?;
        demos.push(solve(&state)?);
    }
    Ok(DemoSet {
        level_id: level.id.to_string(),
        demos,
        generation_seed: Some(generation_seed),
    })
}
