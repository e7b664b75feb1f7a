//! Seedable multi-room gridworld with templated missions.
//!
//! Coordinates are `(x, y)` with `x` growing east and `y` growing south.
//! The outer perimeter is always wall. Rooms share their dividing walls and
//! are connected through doors.

mod level;
mod observe;

pub use level::{registry, LevelFamily, LevelSpec, MAX_GEN_ATTEMPTS};
pub use observe::{Observation, MISSION_CODE_LEN, VIEW_SIZE};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnvError {
    #[error("unknown level id `{0}`")]
    UnknownLevel(String),
    #[error("level `{level}` seed {seed}: generator retry budget exhausted after {attempts} attempts")]
    Construction { level: String, seed: u64, attempts: usize },
    #[error("step called on a terminal state")]
    Terminal,
    #[error("replay reached a terminal state after {at} of {total} actions")]
    Replay { at: usize, total: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Grey,
    Purple,
    Yellow,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Grey,
        Color::Purple,
        Color::Yellow,
    ];

    /// 1-based id; 0 is reserved for "no color".
    pub fn id(self) -> u8 {
        self as u8 + 1
    }
}

/// Kinds of objects that can be carried.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ItemKind {
    Ball,
    Box,
    Key,
}

impl ItemKind {
    pub const ALL: [ItemKind; 3] = [ItemKind::Ball, ItemKind::Box, ItemKind::Key];
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Item {
    pub kind: ItemKind,
    pub color: Color,
}

impl Item {
    pub fn new(kind: ItemKind, color: Color) -> Self {
        Self { kind, color }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cell {
    Empty,
    Wall,
    Item(Item),
    Door { color: Color, state: DoorState },
}

impl Cell {
    /// Object id used by observations: empty 0, wall 1, ball 2, box 3, key 4, door 5.
    pub fn object_id(self) -> u8 {
        match self {
            Cell::Empty => 0,
            Cell::Wall => 1,
            Cell::Item(item) => ObjectType::from(item.kind).id(),
            Cell::Door { .. } => 5,
        }
    }

    pub fn color(self) -> Option<Color> {
        match self {
            Cell::Empty | Cell::Wall => None,
            Cell::Item(item) => Some(item.color),
            Cell::Door { color, .. } => Some(color),
        }
    }

    /// Walkable: empty floor or an open door.
    pub fn is_passable(self) -> bool {
        matches!(
            self,
            Cell::Empty
                | Cell::Door {
                    state: DoorState::Open,
                    ..
                }
        )
    }

    pub fn matches(self, target: Target) -> bool {
        match (self, target.object) {
            (Cell::Item(item), ObjectType::Item(kind)) => item.kind == kind && item.color == target.color,
            (Cell::Door { color, .. }, ObjectType::Door) => color == target.color,
            _ => false,
        }
    }
}

/// Mission-addressable object types.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectType {
    Door,
    #[serde(untagged)]
    Item(ItemKind),
}

impl ObjectType {
    pub fn id(self) -> u8 {
        match self {
            ObjectType::Item(ItemKind::Ball) => 2,
            ObjectType::Item(ItemKind::Box) => 3,
            ObjectType::Item(ItemKind::Key) => 4,
            ObjectType::Door => 5,
        }
    }
}

impl From<ItemKind> for ObjectType {
    fn from(kind: ItemKind) -> Self {
        ObjectType::Item(kind)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Target {
    pub object: ObjectType,
    pub color: Color,
}

impl Target {
    pub fn item(kind: ItemKind, color: Color) -> Self {
        Self {
            object: ObjectType::Item(kind),
            color,
        }
    }

    pub fn door(color: Color) -> Self {
        Self {
            object: ObjectType::Door,
            color,
        }
    }

    pub fn matches_item(self, item: Item) -> bool {
        self.object == ObjectType::Item(item.kind) && self.color == item.color
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    GoTo,
    Pickup,
    Open,
    PutNext,
    UnlockPickup,
}

impl Task {
    pub fn id(self) -> u8 {
        self as u8
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mission {
    pub task: Task,
    pub target: Target,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub second: Option<Target>,
}

impl Mission {
    pub fn go_to(target: Target) -> Self {
        Self {
            task: Task::GoTo,
            target,
            second: None,
        }
    }

    pub fn pickup(target: Target) -> Self {
        Self {
            task: Task::Pickup,
            target,
            second: None,
        }
    }

    pub fn open(color: Color) -> Self {
        Self {
            task: Task::Open,
            target: Target::door(color),
            second: None,
        }
    }

    pub fn put_next(moved: Target, anchor: Target) -> Self {
        Self {
            task: Task::PutNext,
            target: moved,
            second: Some(anchor),
        }
    }

    pub fn unlock_pickup(target: Target) -> Self {
        Self {
            task: Task::UnlockPickup,
            target,
            second: None,
        }
    }

    /// Checks the structural invariants of a mission.
    pub fn is_well_formed(&self) -> bool {
        let is_door = self.target.object == ObjectType::Door;
        (self.second.is_some() == (self.task == Task::PutNext)) && (is_door == (self.task == Task::Open))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::North, Direction::East, Direction::South, Direction::West];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 4]
    }

    pub fn left(self) -> Self {
        Self::from_index(self.index() + 3)
    }

    pub fn right(self) -> Self {
        Self::from_index(self.index() + 1)
    }

    pub fn delta(self) -> (i32, i32) {
        match self {
            Direction::North => (0, -1),
            Direction::East => (1, 0),
            Direction::South => (0, 1),
            Direction::West => (-1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pos {
    pub x: i32,
    pub y: i32,
}

impl Pos {
    pub const fn new(x: i32, y: i32) -> Self {
        Self { x, y }
    }

    pub fn step(self, dir: Direction) -> Pos {
        let (dx, dy) = dir.delta();
        Pos::new(self.x + dx, self.y + dy)
    }

    pub fn neighbors(self) -> [Pos; 4] {
        Direction::ALL.map(|d| self.step(d))
    }

    pub fn manhattan(self, other: Pos) -> i32 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

/// The seven agent actions. Discriminants are the stable on-disk indices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Action {
    TurnLeft = 0,
    TurnRight = 1,
    Forward = 2,
    Pickup = 3,
    Drop = 4,
    Toggle = 5,
    Done = 6,
}

impl Action {
    pub const COUNT: usize = 7;
    pub const ALL: [Action; 7] = [
        Action::TurnLeft,
        Action::TurnRight,
        Action::Forward,
        Action::Pickup,
        Action::Drop,
        Action::Toggle,
        Action::Done,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl From<Action> for u8 {
    fn from(a: Action) -> u8 {
        a as u8
    }
}

impl TryFrom<u8> for Action {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        Action::from_index(v as usize).ok_or_else(|| format!("action index {v} out of range 0..7"))
    }
}

/// Action pool for uniformly random walks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum ActionSet {
    /// Navigation plus the actions the mission's task can need.
    #[default]
    Task,
    /// Turn left, turn right, forward.
    Navigation,
    /// All seven actions.
    All,
}

impl ActionSet {
    pub fn actions(self, task: Task) -> &'static [Action] {
        use Action::*;
        match self {
            ActionSet::Task => match task {
                Task::GoTo => &[TurnLeft, TurnRight, Forward],
                Task::Pickup => &[TurnLeft, TurnRight, Forward, Pickup],
                Task::Open => &[TurnLeft, TurnRight, Forward, Toggle],
                Task::PutNext => &[TurnLeft, TurnRight, Forward, Pickup, Drop],
                Task::UnlockPickup => &[TurnLeft, TurnRight, Forward, Pickup, Drop, Toggle],
            },
            ActionSet::Navigation => &Action::ALL[..3],
            ActionSet::All => &Action::ALL,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentPose {
    pub pos: Pos,
    pub dir: Direction,
    pub carrying: Option<Item>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub done: bool,
    pub success: bool,
}

/// Full world snapshot: grid, agent, mission and episode counters.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GridState {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<Cell>,
    pub agent: AgentPose,
    pub mission: Mission,
    pub steps_taken: u32,
    pub max_steps: u32,
    pub level_id: String,
    pub seed: u64,
    /// Set once the episode has ended (success or step budget exhausted).
    #[serde(default)]
    pub done: bool,
}

impl GridState {
    /// Walled-in empty grid with the agent at `(1, 1)` facing east.
    pub fn empty(width: usize, height: usize, mission: Mission, max_steps: u32) -> Self {
        let mut cells = vec![Cell::Empty; width * height];
        for y in 0..height {
            for x in 0..width {
                if x == 0 || y == 0 || x + 1 == width || y + 1 == height {
                    cells[y * width + x] = Cell::Wall;
                }
            }
        }
        Self {
            width,
            height,
            cells,
            agent: AgentPose {
                pos: Pos::new(1, 1),
                dir: Direction::East,
                carrying: None,
            },
            mission,
            steps_taken: 0,
            max_steps,
            level_id: String::from("custom"),
            seed: 0,
            done: false,
        }
    }

    pub fn in_bounds(&self, p: Pos) -> bool {
        p.x >= 0 && p.y >= 0 && (p.x as usize) < self.width && (p.y as usize) < self.height
    }

    pub fn index(&self, p: Pos) -> usize {
        p.y as usize * self.width + p.x as usize
    }

    pub fn pos_of(&self, idx: usize) -> Pos {
        Pos::new((idx % self.width) as i32, (idx / self.width) as i32)
    }

    /// Cell at `p`; anything outside the grid reads as wall.
    pub fn get(&self, p: Pos) -> Cell {
        if self.in_bounds(p) {
            self.cells[self.index(p)]
        } else {
            Cell::Wall
        }
    }

    pub fn set(&mut self, p: Pos, cell: Cell) {
        let i = self.index(p);
        self.cells[i] = cell;
    }

    pub fn front_pos(&self) -> Pos {
        self.agent.pos.step(self.agent.dir)
    }

    pub fn front_cell(&self) -> Cell {
        self.get(self.front_pos())
    }

    pub fn positions_where(&self, mut pred: impl FnMut(Cell) -> bool) -> Vec<Pos> {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| pred(**c))
            .map(|(i, _)| self.pos_of(i))
            .collect()
    }

    /// All positions holding an object matching `target`.
    pub fn find(&self, target: Target) -> Vec<Pos> {
        self.positions_where(|c| c.matches(target))
    }

    /// Multiset of items in the grid plus the carried one, sorted.
    pub fn item_census(&self) -> Vec<Item> {
        let mut items: Vec<Item> = self
            .cells
            .iter()
            .filter_map(|c| match c {
                Cell::Item(item) => Some(*item),
                _ => None,
            })
            .chain(self.agent.carrying)
            .collect();
        items.sort();
        items
    }

    /// Whether the mission is currently accomplished.
    pub fn success_predicate(&self) -> bool {
        let m = self.mission;
        match m.task {
            Task::GoTo => self.front_cell().matches(m.target),
            Task::Pickup | Task::UnlockPickup => self.agent.carrying.is_some_and(|item| m.target.matches_item(item)),
            Task::Open => self.cells.iter().any(|c| {
                matches!(
                    c,
                    Cell::Door {
                        state: DoorState::Open,
                        ..
                    }
                ) && c.matches(m.target)
            }),
            Task::PutNext => {
                let Some(anchor) = m.second else {
                    return false;
                };
                self.find(m.target).into_iter().any(|p| {
                    p.neighbors()
                        .into_iter()
                        .any(|n| self.in_bounds(n) && self.get(n).matches(anchor))
                })
            }
        }
    }

    pub fn is_terminal(&self) -> bool {
        self.done
    }

    /// Applies the world dynamics of `action` without touching episode counters.
    pub fn transition(&mut self, action: Action) {
        let front = self.front_pos();
        let ahead = self.get(front);
        match action {
            Action::TurnLeft => self.agent.dir = self.agent.dir.left(),
            Action::TurnRight => self.agent.dir = self.agent.dir.right(),
            Action::Forward => {
                if ahead.is_passable() {
                    self.agent.pos = front;
                }
            }
            Action::Pickup => {
                if let (None, Cell::Item(item)) = (self.agent.carrying, ahead) {
                    self.agent.carrying = Some(item);
                    self.set(front, Cell::Empty);
                }
            }
            Action::Drop => {
                if let (Some(item), Cell::Empty) = (self.agent.carrying, ahead) {
                    self.set(front, Cell::Item(item));
                    self.agent.carrying = None;
                }
            }
            Action::Toggle => {
                if let Cell::Door { color, state } = ahead {
                    let next = match state {
                        DoorState::Open => DoorState::Closed,
                        DoorState::Closed => DoorState::Open,
                        DoorState::Locked => {
                            let has_key = self
                                .agent
                                .carrying
                                .is_some_and(|it| it.kind == ItemKind::Key && it.color == color);
                            if has_key {
                                DoorState::Open
                            } else {
                                DoorState::Locked
                            }
                        }
                    };
                    self.set(front, Cell::Door { color, state: next });
                }
            }
            Action::Done => {}
        }
    }

    /// Advances one environment step.
    ///
    /// Success pays `1 - 0.9 * t / max_steps` where `t` is the step count after
    /// this action; running out of steps ends the episode with reward 0.
    pub fn step(&mut self, action: Action) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::Terminal);
        }
        self.transition(action);
        self.steps_taken += 1;
        if self.success_predicate() {
            self.done = true;
            let reward = 1.0 - 0.9 * (self.steps_taken as f64 / self.max_steps as f64);
            return Ok(StepOutcome {
                reward,
                done: true,
                success: true,
            });
        }
        let done = self.steps_taken >= self.max_steps;
        self.done = done;
        Ok(StepOutcome {
            reward: 0.0,
            done,
            success: false,
        })
    }

    pub fn observe(&self) -> Observation {
        Observation::of(self)
    }

    /// Marks this state as the start of a fresh episode.
    pub fn restart_episode(&mut self) {
        self.steps_taken = 0;
        self.done = false;
    }
}

/// Generates the initial state for `(level, seed)`.
pub fn reset(level: &LevelSpec, seed: u64) -> Result<GridState, EnvError> {
    level.generate(seed)
}

/// Resets and applies `actions` in order.
///
/// Only the final action may end the episode; an earlier terminal state means
/// the action sequence does not belong to this `(level, seed)`.
pub fn replay(level: &LevelSpec, seed: u64, actions: &[Action]) -> Result<GridState, EnvError> {
    let mut state = reset(level, seed)?;
    for (i, &a) in actions.iter().enumerate() {
        if state.done {
            return Err(EnvError::Replay {
                at: i,
                total: actions.len(),
            });
        }
        state.step(a)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn goto_state(mission: Mission) -> GridState {
        GridState::empty(8, 8, mission, 64)
    }

    #[test]
    fn forward_into_wall_is_blocked() {
        let mut s = goto_state(Mission::go_to(Target::item(ItemKind::Ball, Color::Red)));
        s.agent.pos = Pos::new(6, 3);
        s.agent.dir = Direction::East;
        let out = s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(6, 3));
        assert_eq!(out.reward, 0.0);
        assert!(!out.done);
        assert_eq!(s.steps_taken, 1);
    }

    #[test]
    fn closed_door_blocks_until_toggled() {
        let mut s = goto_state(Mission::go_to(Target::item(ItemKind::Ball, Color::Red)));
        s.set(
            Pos::new(2, 1),
            Cell::Door {
                color: Color::Blue,
                state: DoorState::Closed,
            },
        );
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(1, 1));
        s.step(Action::Toggle).unwrap();
        s.step(Action::Forward).unwrap();
        assert_eq!(s.agent.pos, Pos::new(2, 1));
    }

    #[test]
    fn goto_success_reward_matches_formula() {
        let mut s = goto_state(Mission::go_to(Target::item(ItemKind::Ball, Color::Red)));
        s.set(Pos::new(3, 1), Cell::Item(Item::new(ItemKind::Ball, Color::Red)));
        let out = s.step(Action::Forward).unwrap();
        assert!(out.done && out.success);
        assert_eq!(out.reward, 0.9859375);
        assert_eq!(s.step(Action::Forward), Err(EnvError::Terminal));
    }

    #[test]
    fn pickup_on_empty_cell_only_counts_a_step() {
        let mut s = goto_state(Mission::pickup(Target::item(ItemKind::Key, Color::Red)));
        let before = s.clone();
        s.step(Action::Pickup).unwrap();
        let mut expected = before;
        expected.steps_taken = 1;
        assert_eq!(s, expected);
    }

    #[test]
    fn pickup_requires_empty_hands() {
        let mut s = goto_state(Mission::pickup(Target::item(ItemKind::Key, Color::Red)));
        s.agent.carrying = Some(Item::new(ItemKind::Ball, Color::Blue));
        s.set(Pos::new(2, 1), Cell::Item(Item::new(ItemKind::Key, Color::Red)));
        s.step(Action::Pickup).unwrap();
        assert_eq!(s.agent.carrying, Some(Item::new(ItemKind::Ball, Color::Blue)));
        assert_eq!(s.get(Pos::new(2, 1)), Cell::Item(Item::new(ItemKind::Key, Color::Red)));
    }

    #[test]
    fn locked_door_needs_matching_key() {
        let mut s = goto_state(Mission::go_to(Target::item(ItemKind::Ball, Color::Red)));
        let door = Pos::new(2, 1);
        s.set(
            door,
            Cell::Door {
                color: Color::Yellow,
                state: DoorState::Locked,
            },
        );
        s.agent.carrying = Some(Item::new(ItemKind::Key, Color::Blue));
        s.step(Action::Toggle).unwrap();
        assert!(matches!(
            s.get(door),
            Cell::Door {
                state: DoorState::Locked,
                ..
            }
        ));
        s.agent.carrying = Some(Item::new(ItemKind::Key, Color::Yellow));
        s.step(Action::Toggle).unwrap();
        assert!(matches!(
            s.get(door),
            Cell::Door {
                state: DoorState::Open,
                ..
            }
        ));
        // the key stays in hand
        assert_eq!(s.agent.carrying, Some(Item::new(ItemKind::Key, Color::Yellow)));
    }

    #[test]
    fn put_next_adjacency() {
        let a = Target::item(ItemKind::Ball, Color::Red);
        let b = Target::item(ItemKind::Box, Color::Green);
        let mut s = goto_state(Mission::put_next(a, b));
        s.set(Pos::new(3, 4), Cell::Item(Item::new(ItemKind::Ball, Color::Red)));
        s.set(Pos::new(3, 6), Cell::Item(Item::new(ItemKind::Box, Color::Green)));
        assert!(!s.success_predicate());
        s.set(Pos::new(3, 6), Cell::Empty);
        s.set(Pos::new(3, 5), Cell::Item(Item::new(ItemKind::Box, Color::Green)));
        assert!(s.success_predicate());
    }

    #[test]
    fn goto_adjacent_exactly_one_facing_succeeds() {
        let target = Target::item(ItemKind::Box, Color::Purple);
        let mut s = goto_state(Mission::go_to(target));
        s.set(Pos::new(4, 3), Cell::Item(Item::new(ItemKind::Box, Color::Purple)));
        s.agent.pos = Pos::new(4, 4);
        let hits: Vec<Direction> = Direction::ALL
            .into_iter()
            .filter(|&d| {
                s.agent.dir = d;
                s.success_predicate()
            })
            .collect();
        assert_eq!(hits, vec![Direction::North]);
    }

    #[test]
    fn timeout_ends_with_zero_reward() {
        let mut s = GridState::empty(5, 5, Mission::go_to(Target::item(ItemKind::Ball, Color::Red)), 3);
        let mut last = None;
        for _ in 0..3 {
            last = Some(s.step(Action::TurnLeft).unwrap());
        }
        let out = last.unwrap();
        assert!(out.done && !out.success);
        assert_eq!(out.reward, 0.0);
    }

    #[test]
    fn action_indices_are_stable() {
        for (i, a) in Action::ALL.iter().enumerate() {
            assert_eq!(a.index(), i);
            assert_eq!(serde_json::to_string(a).unwrap(), i.to_string());
        }
        assert!(serde_json::from_str::<Action>("7").is_err());
    }

    #[test]
    fn mission_json_shape() {
        let m = Mission::put_next(
            Target::item(ItemKind::Ball, Color::Red),
            Target::item(ItemKind::Key, Color::Blue),
        );
        let js = serde_json::to_string(&m).unwrap();
        assert_eq!(
            js,
            r#"{"task":"put_next","target":{"object":"ball","color":"red"},"second":{"object":"key","color":"blue"}}"#
        );
        assert_eq!(serde_json::from_str::<Mission>(&js).unwrap(), m);
        let door = serde_json::to_string(&Mission::open(Color::Grey)).unwrap();
        assert_eq!(door, r#"{"task":"open","target":{"object":"door","color":"grey"}}"#);
        assert_eq!(
            serde_json::from_str::<Mission>(&door).unwrap(),
            Mission::open(Color::Grey)
        );
    }
}
