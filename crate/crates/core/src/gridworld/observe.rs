use super::{Cell, GridState, Pos};

/// Side length of the egocentric view window.
pub const VIEW_SIZE: usize = 7;
pub const MISSION_CODE_LEN: usize = 5;

/// Egocentric partial view plus the encoded mission.
///
/// `view[row][col]` holds `(object id, color id, door-state id)`. Row 0 is the
/// farthest row ahead of the agent; the agent sits at `(VIEW_SIZE - 1, 3)`
/// looking "up". The agent's own cell shows what it carries.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Observation {
    pub view: [[[u8; 3]; VIEW_SIZE]; VIEW_SIZE],
    /// `(task, target object, target color, second object, second color)`;
    /// absent second target encodes as zeros.
    pub mission_code: [u8; MISSION_CODE_LEN],
}

fn encode_cell(cell: Cell) -> [u8; 3] {
    let state = match cell {
        Cell::Door { state, .. } => state as u8 + 1,
        _ => 0,
    };
    [cell.object_id(), cell.color().map_or(0, |c| c.id()), state]
}

impl Observation {
    pub fn of(state: &GridState) -> Self {
        let agent = state.agent;
        let fwd = agent.dir.delta();
        let right = agent.dir.right().delta();
        let half = (VIEW_SIZE / 2) as i32;
        let mut view = [[[0u8; 3]; VIEW_SIZE]; VIEW_SIZE];
        for (row, line) in view.iter_mut().enumerate() {
            let ahead = (VIEW_SIZE - 1 - row) as i32;
            for (col, slot) in line.iter_mut().enumerate() {
                let side = col as i32 - half;
                let p = Pos::new(
                    agent.pos.x + ahead * fwd.0 + side * right.0,
                    agent.pos.y + ahead * fwd.1 + side * right.1,
                );
                *slot = encode_cell(state.get(p));
            }
        }
        view[VIEW_SIZE - 1][half as usize] = match agent.carrying {
            Some(item) => encode_cell(Cell::Item(item)),
            None => [0, 0, 0],
        };
        let m = state.mission;
        let (o2, c2) = m.second.map_or((0, 0), |t| (t.object.id(), t.color.id()));
        Self {
            view,
            mission_code: [m.task.id(), m.target.object.id(), m.target.color.id(), o2, c2],
        }
    }
}
