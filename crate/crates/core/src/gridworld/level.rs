use std::collections::VecDeque;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Cell, Color, Direction, DoorState, EnvError, GridState, Item, ItemKind, Mission, Pos, Target};
use crate::seeding::derive_seed;

/// Number of full regeneration attempts before `reset` gives up.
pub const MAX_GEN_ATTEMPTS: usize = 64;

/// Mission family and generator used by a level.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LevelFamily {
    /// "go to the red ball" in one room with non-red-ball distractors.
    GoToRedBall,
    /// Go to a random object in one room.
    GoToLocal,
    PickupLocal,
    PutNextLocal,
    /// Open a door of the named color; all doors start closed.
    Open,
    /// Key, locked door, then the box in the second room.
    UnlockPickup,
    /// As `UnlockPickup`, with a ball parked in front of the door.
    BlockedUnlockPickup,
    /// Go to an object anywhere in a multi-room maze of closed doors.
    GoTo,
    Pickup,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LevelSpec {
    pub id: &'static str,
    pub family: LevelFamily,
    /// Cells per room side, counting the shared walls.
    pub room_size: usize,
    /// `(rows, cols)` of rooms.
    pub rooms: (usize, usize),
    pub distractors: usize,
}

static REGISTRY: [LevelSpec; 9] = [
    LevelSpec {
        id: "goto_redball",
        family: LevelFamily::GoToRedBall,
        room_size: 8,
        rooms: (1, 1),
        distractors: 7,
    },
    LevelSpec {
        id: "goto_local",
        family: LevelFamily::GoToLocal,
        room_size: 8,
        rooms: (1, 1),
        distractors: 7,
    },
    LevelSpec {
        id: "pickup_local",
        family: LevelFamily::PickupLocal,
        room_size: 8,
        rooms: (1, 1),
        distractors: 7,
    },
    LevelSpec {
        id: "putnext_local",
        family: LevelFamily::PutNextLocal,
        room_size: 8,
        rooms: (1, 1),
        distractors: 6,
    },
    LevelSpec {
        id: "open",
        family: LevelFamily::Open,
        room_size: 6,
        rooms: (2, 2),
        distractors: 4,
    },
    LevelSpec {
        id: "unlock_pickup",
        family: LevelFamily::UnlockPickup,
        room_size: 6,
        rooms: (1, 2),
        distractors: 0,
    },
    LevelSpec {
        id: "blocked_unlock_pickup",
        family: LevelFamily::BlockedUnlockPickup,
        room_size: 6,
        rooms: (1, 2),
        distractors: 0,
    },
    LevelSpec {
        id: "goto",
        family: LevelFamily::GoTo,
        room_size: 10,
        rooms: (3, 3),
        distractors: 8,
    },
    LevelSpec {
        id: "pickup",
        family: LevelFamily::Pickup,
        room_size: 10,
        rooms: (3, 3),
        distractors: 8,
    },
];

/// All registered levels.
pub fn registry() -> &'static [LevelSpec] {
    &REGISTRY
}

impl LevelSpec {
    pub fn by_id(id: &str) -> Result<&'static LevelSpec, EnvError> {
        REGISTRY
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| EnvError::UnknownLevel(id.to_string()))
    }

    pub fn max_steps(&self) -> u32 {
        (8 * self.room_size * self.rooms.0.max(self.rooms.1)) as u32
    }

    /// Levels with more than two rooms.
    pub fn is_large(&self) -> bool {
        self.rooms.0 >= 2 && self.rooms.1 >= 2
    }

    pub fn width(&self) -> usize {
        self.rooms.1 * (self.room_size - 1) + 1
    }

    pub fn height(&self) -> usize {
        self.rooms.0 * (self.room_size - 1) + 1
    }

    pub(super) fn generate(&self, seed: u64) -> Result<GridState, EnvError> {
        for attempt in 0..MAX_GEN_ATTEMPTS {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, attempt as u64));
            if let Some(mut state) = self.try_generate(&mut rng) {
                if state.success_predicate() {
                    continue;
                }
                state.seed = seed;
                state.level_id = self.id.to_string();
                return Ok(state);
            }
        }
        Err(EnvError::Construction {
            level: self.id.to_string(),
            seed,
            attempts: MAX_GEN_ATTEMPTS,
        })
    }

    fn try_generate(&self, rng: &mut ChaCha8Rng) -> Option<GridState> {
        if self.room_size < 4 {
            return None;
        }
        let mut b = Builder::new(self);
        match self.family {
            LevelFamily::GoToRedBall => {
                b.place_agent(0, rng)?;
                let target = Item::new(ItemKind::Ball, Color::Red);
                b.place_item(0, target, rng)?;
                for _ in 0..self.distractors {
                    let item = loop {
                        let it = random_item(rng);
                        if it != target {
                            break it;
                        }
                    };
                    b.place_item(0, item, rng)?;
                }
                b.finish(Mission::go_to(Target::item(ItemKind::Ball, Color::Red)))
            }
            LevelFamily::GoToLocal | LevelFamily::PickupLocal => {
                b.place_agent(0, rng)?;
                let items = b.scatter(self.distractors + 1, rng)?;
                let target = *items.choose(rng)?;
                let desc = Target::item(target.kind, target.color);
                let mission = if self.family == LevelFamily::GoToLocal {
                    Mission::go_to(desc)
                } else {
                    Mission::pickup(desc)
                };
                b.finish(mission)
            }
            LevelFamily::PutNextLocal => {
                b.place_agent(0, rng)?;
                let items = b.scatter_unique(self.distractors + 2, rng)?;
                let moved = *items.choose(rng)?;
                let anchors: Vec<Item> = items.iter().copied().filter(|it| *it != moved).collect();
                let anchor = *anchors.choose(rng)?;
                b.finish(Mission::put_next(
                    Target::item(moved.kind, moved.color),
                    Target::item(anchor.kind, anchor.color),
                ))
            }
            LevelFamily::Open => {
                let mut colors = Color::ALL.to_vec();
                colors.shuffle(rng);
                let pairs = b.adjacent_room_pairs();
                if pairs.len() > colors.len() {
                    return None;
                }
                for (&(a, c), &color) in pairs.iter().zip(colors.iter()) {
                    b.add_door(a, c, color, DoorState::Closed, rng)?;
                }
                b.scatter(self.distractors, rng)?;
                let room = rng.gen_range(0..b.rooms.len());
                b.place_agent(room, rng)?;
                let target = colors[rng.gen_range(0..pairs.len())];
                b.finish(Mission::open(target))
            }
            LevelFamily::UnlockPickup | LevelFamily::BlockedUnlockPickup => {
                if b.rooms.len() < 2 {
                    return None;
                }
                let door_color = *Color::ALL.choose(rng)?;
                let door = b.add_door(0, 1, door_color, DoorState::Locked, rng)?;
                b.place_item(0, Item::new(ItemKind::Key, door_color), rng)?;
                let target = Item::new(ItemKind::Box, *Color::ALL.choose(rng)?);
                b.place_item(1, target, rng)?;
                for _ in 0..self.distractors {
                    let room = rng.gen_range(0..b.rooms.len());
                    b.place_item(room, random_item(rng), rng)?;
                }
                b.place_agent(0, rng)?;
                let mission = Mission::unlock_pickup(Target::item(target.kind, target.color));
                let mut state = b.finish(mission)?;
                if self.family == LevelFamily::BlockedUnlockPickup {
                    // the blocker sits on the agent's side of the door
                    let front = door.step(Direction::West);
                    if state.get(front) != Cell::Empty || state.agent.pos == front {
                        return None;
                    }
                    let blocker = Item::new(ItemKind::Ball, *Color::ALL.choose(rng)?);
                    state.set(front, Cell::Item(blocker));
                }
                Some(state)
            }
            LevelFamily::GoTo | LevelFamily::Pickup => {
                for (a, c) in b.adjacent_room_pairs() {
                    let color = *Color::ALL.choose(rng)?;
                    b.add_door(a, c, color, DoorState::Closed, rng)?;
                }
                let room = rng.gen_range(0..b.rooms.len());
                b.place_agent(room, rng)?;
                let items = b.scatter(self.distractors + 1, rng)?;
                let target = *items.choose(rng)?;
                let desc = Target::item(target.kind, target.color);
                let mission = if self.family == LevelFamily::GoTo {
                    Mission::go_to(desc)
                } else {
                    Mission::pickup(desc)
                };
                b.finish(mission)
            }
        }
    }
}

fn random_item(rng: &mut ChaCha8Rng) -> Item {
    let kind = ItemKind::ALL[rng.gen_range(0..ItemKind::ALL.len())];
    let color = Color::ALL[rng.gen_range(0..Color::ALL.len())];
    Item::new(kind, color)
}

#[derive(Clone, Copy, Debug)]
struct Room {
    /// Top-left wall corner.
    x0: i32,
    y0: i32,
    size: i32,
}

impl Room {
    fn interior(&self) -> impl Iterator<Item = Pos> + '_ {
        (self.y0 + 1..self.y0 + self.size - 1)
            .flat_map(move |y| (self.x0 + 1..self.x0 + self.size - 1).map(move |x| Pos::new(x, y)))
    }
}

struct Builder {
    state: GridState,
    rooms: Vec<Room>,
    cols: usize,
    doors: Vec<Pos>,
    agent_placed: bool,
}

impl Builder {
    fn new(spec: &LevelSpec) -> Self {
        let (rows, cols) = spec.rooms;
        let placeholder = Mission::go_to(Target::item(ItemKind::Ball, Color::Red));
        let mut state = GridState::empty(spec.width(), spec.height(), placeholder, spec.max_steps());
        let step = spec.room_size as i32 - 1;
        let mut rooms = Vec::with_capacity(rows * cols);
        for r in 0..rows as i32 {
            for c in 0..cols as i32 {
                rooms.push(Room {
                    x0: c * step,
                    y0: r * step,
                    size: spec.room_size as i32,
                });
            }
        }
        for room in &rooms {
            for i in 0..room.size {
                for p in [
                    Pos::new(room.x0 + i, room.y0),
                    Pos::new(room.x0 + i, room.y0 + room.size - 1),
                    Pos::new(room.x0, room.y0 + i),
                    Pos::new(room.x0 + room.size - 1, room.y0 + i),
                ] {
                    state.set(p, Cell::Wall);
                }
            }
        }
        Self {
            state,
            rooms,
            cols,
            doors: Vec::new(),
            agent_placed: false,
        }
    }

    fn adjacent_room_pairs(&self) -> Vec<(usize, usize)> {
        let mut pairs = Vec::new();
        for i in 0..self.rooms.len() {
            let (r, c) = (i / self.cols, i % self.cols);
            if c + 1 < self.cols {
                pairs.push((i, i + 1));
            }
            if (r + 1) * self.cols < self.rooms.len() {
                pairs.push((i, i + self.cols));
            }
        }
        pairs
    }

    /// Puts a door in the wall shared by rooms `a` and `b`.
    fn add_door(&mut self, a: usize, b: usize, color: Color, state: DoorState, rng: &mut ChaCha8Rng) -> Option<Pos> {
        let (ra, rb) = (self.rooms[a], self.rooms[b]);
        let pos = if ra.y0 == rb.y0 {
            let x = ra.x0.max(rb.x0);
            Pos::new(x, ra.y0 + rng.gen_range(1..ra.size - 1))
        } else if ra.x0 == rb.x0 {
            let y = ra.y0.max(rb.y0);
            Pos::new(ra.x0 + rng.gen_range(1..ra.size - 1), y)
        } else {
            return None;
        };
        self.state.set(pos, Cell::Door { color, state });
        self.doors.push(pos);
        Some(pos)
    }

    fn is_door_front(&self, p: Pos) -> bool {
        self.doors.iter().any(|d| d.manhattan(p) == 1)
    }

    fn free_cell(&self, room: usize, rng: &mut ChaCha8Rng) -> Option<Pos> {
        let cells: Vec<Pos> = self.rooms[room]
            .interior()
            .filter(|&p| {
                self.state.get(p) == Cell::Empty
                    && !self.is_door_front(p)
                    && !(self.agent_placed && self.state.agent.pos.manhattan(p) < 2)
            })
            .collect();
        cells.choose(rng).copied()
    }

    fn place_item(&mut self, room: usize, item: Item, rng: &mut ChaCha8Rng) -> Option<Pos> {
        let p = self.free_cell(room, rng)?;
        self.state.set(p, Cell::Item(item));
        Some(p)
    }

    /// Places `n` random items in random rooms.
    fn scatter(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Item>> {
        let mut items = Vec::with_capacity(n);
        for _ in 0..n {
            let item = random_item(rng);
            let room = rng.gen_range(0..self.rooms.len());
            self.place_item(room, item, rng)?;
            items.push(item);
        }
        Some(items)
    }

    /// Like [`Builder::scatter`] but no two items share kind and color.
    fn scatter_unique(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Option<Vec<Item>> {
        if n > ItemKind::ALL.len() * Color::ALL.len() {
            return None;
        }
        let mut items: Vec<Item> = Vec::with_capacity(n);
        while items.len() < n {
            let item = random_item(rng);
            if items.contains(&item) {
                continue;
            }
            let room = rng.gen_range(0..self.rooms.len());
            self.place_item(room, item, rng)?;
            items.push(item);
        }
        Some(items)
    }

    fn place_agent(&mut self, room: usize, rng: &mut ChaCha8Rng) -> Option<()> {
        let p = self.free_cell(room, rng)?;
        self.state.agent.pos = p;
        self.state.agent.dir = Direction::from_index(rng.gen_range(0..4));
        self.agent_placed = true;
        Some(())
    }

    fn finish(mut self, mission: Mission) -> Option<GridState> {
        self.state.mission = mission;
        if !self.agent_placed || !well_connected(&self.state) {
            return None;
        }
        Some(self.state)
    }
}

/// Every floor cell is reachable from the agent (doors count as walkable),
/// and every item has a reachable cell next to it.
fn well_connected(state: &GridState) -> bool {
    let walkable = |c: Cell| matches!(c, Cell::Empty | Cell::Door { .. });
    let mut seen = vec![false; state.cells.len()];
    let mut queue = VecDeque::new();
    let start = state.index(state.agent.pos);
    seen[start] = true;
    queue.push_back(state.agent.pos);
    while let Some(p) = queue.pop_front() {
        for n in p.neighbors() {
            if !state.in_bounds(n) {
                continue;
            }
            let i = state.index(n);
            if !seen[i] && walkable(state.cells[i]) {
                seen[i] = true;
                queue.push_back(n);
            }
        }
    }
    state.cells.iter().enumerate().all(|(i, c)| match c {
        Cell::Empty | Cell::Door { .. } => seen[i],
        Cell::Item(_) => {
            let p = state.pos_of(i);
            p.neighbors()
                .into_iter()
                .any(|n| state.in_bounds(n) && seen[state.index(n)])
        }
        Cell::Wall => true,
    })
}
