//! A deterministic Minigrid-style simulator over rooms of 5x5 interiors.
//!
//! Coordinates are `(x, y)` with `y` growing southwards. Walls sit on every
//! row and column that is a multiple of 6; dividing walls have a door slot
//! in their middle cell.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::alphabet::{Color, DoorState, ObjectDescriptor, ObjectKind, Proposition};
use crate::error::{Error, Result};
use crate::reward_machine::Labeling;

pub const VIEW: usize = 5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RoomLayout {
    One,
    Two,
    Four,
    Six,
}

impl RoomLayout {
    pub const ALL: [RoomLayout; 4] = [Self::One, Self::Two, Self::Four, Self::Six];

    pub fn from_rooms(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Self::One),
            2 => Ok(Self::Two),
            4 => Ok(Self::Four),
            6 => Ok(Self::Six),
            _ => Err(Error::InvalidLevel(format!("unsupported room count {n}"))),
        }
    }

    pub fn rooms(self) -> usize {
        self.rows() * self.cols()
    }

    /// Room grid shape as `(rows, cols)`.
    pub fn rows(self) -> usize {
        match self {
            Self::One | Self::Two => 1,
            Self::Four | Self::Six => 2,
        }
    }

    pub fn cols(self) -> usize {
        match self {
            Self::One => 1,
            Self::Two | Self::Four => 2,
            Self::Six => 3,
        }
    }

    pub fn width(self) -> usize {
        6 * self.cols() + 1
    }

    pub fn height(self) -> usize {
        6 * self.rows() + 1
    }

    /// Door slots: one per pair of adjacent rooms, in the wall's middle.
    pub fn door_slots(self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.rows() {
            for c in 0..self.cols().saturating_sub(1) {
                out.push((6 * (c + 1), 6 * r + 3));
            }
        }
        for r in 0..self.rows().saturating_sub(1) {
            for c in 0..self.cols() {
                out.push((6 * c + 3, 6 * (r + 1)));
            }
        }
        out.sort_by_key(|&(x, y)| (y, x));
        out
    }

    pub fn num_doors(self) -> usize {
        self.door_slots().len()
    }

    /// Inclusive object-count range; doors count as objects.
    pub fn object_range(self) -> (usize, usize) {
        match self {
            Self::One => (1, 5),
            Self::Two => (1, 10),
            Self::Four => (4, 15),
            Self::Six => (7, 20),
        }
    }

    pub fn min_objects(self) -> usize {
        self.object_range().0.max(self.num_doors()).max(1)
    }

    pub fn max_objects(self) -> usize {
        self.object_range().1
    }

    pub fn terrain(self, x: usize, y: usize) -> Terrain {
        if x >= self.width() || y >= self.height() {
            return Terrain::Wall;
        }
        let on_v = x % 6 == 0;
        let on_h = y % 6 == 0;
        if !on_v && !on_h {
            return Terrain::Floor;
        }
        if on_v && on_h {
            return Terrain::Wall;
        }
        let interior = x > 0 && y > 0 && x + 1 < self.width() && y + 1 < self.height();
        if interior && ((on_v && y % 6 == 3) || (on_h && x % 6 == 3)) {
            Terrain::DoorSlot
        } else {
            Terrain::Wall
        }
    }

    /// The room (row, col) containing a floor cell.
    pub fn room_of(self, x: usize, y: usize) -> (usize, usize) {
        (y / 6, x / 6)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Terrain {
    Floor,
    Wall,
    DoorSlot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Self::North, Self::East, Self::South, Self::West];

    pub fn delta(self) -> (isize, isize) {
        match self {
            Self::North => (0, -1),
            Self::East => (1, 0),
            Self::South => (0, 1),
            Self::West => (-1, 0),
        }
    }

    pub fn right(self) -> Self {
        Self::ALL[(self as usize + 1) % 4]
    }

    pub fn left(self) -> Self {
        Self::ALL[(self as usize + 3) % 4]
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AgentPose {
    pub x: usize,
    pub y: usize,
    pub dir: Direction,
}

impl AgentPose {
    pub fn new(x: usize, y: usize, dir: Direction) -> Self {
        Self { x, y, dir }
    }

    pub fn front(&self) -> Option<(usize, usize)> {
        offset(self.x, self.y, self.dir.delta())
    }

    /// Whether cell `(x, y)` falls in the egocentric view, excluding the
    /// agent's own cell.
    pub fn sees(&self, x: usize, y: usize) -> bool {
        let (dx, dy) = (x as isize - self.x as isize, y as isize - self.y as isize);
        let (fx, fy) = self.dir.delta();
        let (rx, ry) = self.dir.right().delta();
        let fwd = dx * fx + dy * fy;
        let lat = dx * rx + dy * ry;
        let half = (VIEW / 2) as isize;
        (0..VIEW as isize).contains(&fwd) && (-half..=half).contains(&lat) && (fwd, lat) != (0, 0)
    }
}

pub(crate) fn offset(x: usize, y: usize, (dx, dy): (isize, isize)) -> Option<(usize, usize)> {
    let nx = x.checked_add_signed(dx)?;
    let ny = y.checked_add_signed(dy)?;
    Some((nx, ny))
}

/// A concrete object: color always set, door state set iff door.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct GridObject {
    pub kind: ObjectKind,
    pub color: Color,
    pub state: Option<DoorState>,
}

impl GridObject {
    pub fn new(kind: ObjectKind, color: Color) -> Self {
        Self {
            kind,
            color,
            state: None,
        }
    }

    pub fn door(color: Color, state: DoorState) -> Self {
        Self {
            kind: ObjectKind::Door,
            color,
            state: Some(state),
        }
    }

    pub fn is_door(&self) -> bool {
        self.kind == ObjectKind::Door
    }

    pub fn is_valid(&self) -> bool {
        self.is_door() == self.state.is_some()
    }

    pub fn descriptor(&self) -> ObjectDescriptor {
        ObjectDescriptor::new(self.kind, Some(self.color), self.state)
    }

    pub fn matches(&self, d: &ObjectDescriptor) -> bool {
        d.kind == self.kind
            && d.color.is_none_or(|c| c == self.color)
            && d.door_state.is_none_or(|s| Some(s) == self.state)
    }

    /// Passable when standing in or walking through the cell.
    pub fn is_passable(&self) -> bool {
        self.state == Some(DoorState::Open)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    TurnLeft,
    TurnRight,
    Forward,
    Pickup,
    Drop,
    Toggle,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Self::TurnLeft,
        Self::TurnRight,
        Self::Forward,
        Self::Pickup,
        Self::Drop,
        Self::Toggle,
    ];
}

/// Channel-0 ids of the observation grid.
pub mod obs_id {
    pub const OUT_OF_BOUNDS: u8 = 0;
    pub const EMPTY: u8 = 1;
    pub const WALL: u8 = 2;
    pub const BALL: u8 = 3;
    pub const SQUARE: u8 = 4;
    pub const KEY: u8 = 5;
    pub const DOOR_OPEN: u8 = 6;
    pub const DOOR_CLOSED: u8 = 7;
    pub const DOOR_LOCKED: u8 = 8;
    pub const AGENT: u8 = 9;
}

/// `grid[row][col] = [kind id, color id]`. Row 0 is farthest ahead; the agent
/// sits at row 4, column 2. Color ids are 0 for none, then 1 + color index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Observation {
    pub grid: [[[u8; 2]; VIEW]; VIEW],
}

fn object_ids(o: &GridObject) -> [u8; 2] {
    let kind = match (o.kind, o.state) {
        (ObjectKind::Ball, _) => obs_id::BALL,
        (ObjectKind::Square, _) => obs_id::SQUARE,
        (ObjectKind::Key, _) => obs_id::KEY,
        (ObjectKind::Door, Some(DoorState::Open)) => obs_id::DOOR_OPEN,
        (ObjectKind::Door, Some(DoorState::Closed)) => obs_id::DOOR_CLOSED,
        (ObjectKind::Door, _) => obs_id::DOOR_LOCKED,
    };
    [kind, 1 + o.color.index() as u8]
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Level {
    pub layout: RoomLayout,
    cells: Vec<Option<GridObject>>,
    pub agent: AgentPose,
    pub carried: Option<GridObject>,
}

impl Level {
    /// A level with no objects. Door slots must be filled before validation.
    pub fn new(layout: RoomLayout, agent: AgentPose) -> Self {
        Self {
            layout,
            cells: vec![None; layout.width() * layout.height()],
            agent,
            carried: None,
        }
    }

    pub fn width(&self) -> usize {
        self.layout.width()
    }

    pub fn height(&self) -> usize {
        self.layout.height()
    }

    pub fn in_bounds(&self, x: usize, y: usize) -> bool {
        x < self.width() && y < self.height()
    }

    pub fn get(&self, x: usize, y: usize) -> Option<&GridObject> {
        if !self.in_bounds(x, y) {
            return None;
        }
        self.cells[y * self.width() + x].as_ref()
    }

    pub fn set(&mut self, x: usize, y: usize, obj: Option<GridObject>) {
        let w = self.width();
        self.cells[y * w + x] = obj;
    }

    pub fn terrain(&self, x: usize, y: usize) -> Terrain {
        self.layout.terrain(x, y)
    }

    /// Grid objects in row-major order.
    pub fn objects(&self) -> impl Iterator<Item = (usize, usize, &GridObject)> {
        let w = self.width();
        self.cells
            .iter()
            .enumerate()
            .filter_map(move |(i, c)| c.as_ref().map(|o| (i % w, i / w, o)))
    }

    /// Grid objects plus the carried one.
    pub fn object_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_some()).count() + usize::from(self.carried.is_some())
    }

    pub fn door_count(&self) -> usize {
        self.objects().filter(|(_, _, o)| o.is_door()).count()
    }

    pub fn non_door_count(&self) -> usize {
        self.object_count() - self.door_count()
    }

    /// Floor cells with no object and no agent.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                if self.terrain(x, y) == Terrain::Floor
                    && self.get(x, y).is_none()
                    && (x, y) != (self.agent.x, self.agent.y)
                {
                    out.push((x, y));
                }
            }
        }
        out
    }

    pub fn front_cell(&self) -> Option<(usize, usize)> {
        self.agent.front().filter(|&(x, y)| self.in_bounds(x, y))
    }

    pub fn front_object(&self) -> Option<&GridObject> {
        self.front_cell().and_then(|(x, y)| self.get(x, y))
    }

    /// Whether the agent could stand on the cell.
    pub fn is_walkable(&self, x: usize, y: usize) -> bool {
        match self.terrain(x, y) {
            Terrain::Wall => false,
            Terrain::Floor => self.get(x, y).is_none(),
            Terrain::DoorSlot => self.get(x, y).is_some_and(|o| o.is_passable()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidLevel(m));
        if self.cells.len() != self.width() * self.height() {
            return bad("cell buffer size mismatch".into());
        }
        for (x, y, o) in self.objects() {
            if !o.is_valid() {
                return bad(format!("malformed object at ({x},{y})"));
            }
            match self.terrain(x, y) {
                Terrain::Wall => return bad(format!("object inside wall at ({x},{y})")),
                Terrain::Floor if o.is_door() => return bad(format!("door off its slot at ({x},{y})")),
                Terrain::DoorSlot if !o.is_door() => {
                    return bad(format!("non-door in door slot at ({x},{y})"))
                }
                _ => {}
            }
        }
        for (x, y) in self.layout.door_slots() {
            if !self.get(x, y).is_some_and(|o| o.is_door()) {
                return bad(format!("missing door at ({x},{y})"));
            }
        }
        if let Some(c) = &self.carried {
            if c.is_door() || !c.is_valid() {
                return bad("carrying a door".into());
            }
        }
        let AgentPose { x, y, .. } = self.agent;
        if !self.in_bounds(x, y) || !self.is_walkable(x, y) {
            return bad(format!("agent on blocked cell ({x},{y})"));
        }
        let n = self.object_count();
        let (lo, hi) = (self.layout.min_objects(), self.layout.max_objects());
        if n < lo || n > hi {
            return bad(format!("{n} objects outside [{lo}, {hi}]"));
        }
        Ok(())
    }

    pub fn env_step(&self, action: Action) -> Level {
        let mut next = self.clone();
        next.step_mut(action);
        next
    }

    pub fn step_mut(&mut self, action: Action) {
        match action {
            Action::TurnLeft => self.agent.dir = self.agent.dir.left(),
            Action::TurnRight => self.agent.dir = self.agent.dir.right(),
            Action::Forward => {
                if let Some((fx, fy)) = self.front_cell() {
                    if self.is_walkable(fx, fy) {
                        self.agent.x = fx;
                        self.agent.y = fy;
                    }
                }
            }
            Action::Pickup => {
                if self.carried.is_none() {
                    if let Some((fx, fy)) = self.front_cell() {
                        if self.get(fx, fy).is_some_and(|o| !o.is_door()) {
                            self.carried = self.get(fx, fy).copied();
                            self.set(fx, fy, None);
                        }
                    }
                }
            }
            Action::Drop => {
                if let (Some(obj), Some((fx, fy))) = (self.carried, self.front_cell()) {
                    if self.terrain(fx, fy) == Terrain::Floor && self.get(fx, fy).is_none() {
                        self.set(fx, fy, Some(obj));
                        self.carried = None;
                    }
                }
            }
            Action::Toggle => {
                if let Some((fx, fy)) = self.front_cell() {
                    let carried = self.carried;
                    let w = self.width();
                    if let Some(door) = self.cells[fy * w + fx].as_mut().filter(|o| o.is_door()) {
                        door.state = match door.state {
                            Some(DoorState::Open) => Some(DoorState::Closed),
                            Some(DoorState::Closed) => Some(DoorState::Open),
                            Some(DoorState::Locked)
                                if carried.is_some_and(|k| {
                                    k.kind == ObjectKind::Key && k.color == door.color
                                }) =>
                            {
                                Some(DoorState::Open)
                            }
                            s => s,
                        };
                    }
                }
            }
        }
    }

    /// World cell of view position `(row, col)`, if inside the grid.
    pub fn view_to_world(&self, row: usize, col: usize) -> Option<(usize, usize)> {
        let fwd = (VIEW - 1 - row) as isize;
        let lat = col as isize - (VIEW / 2) as isize;
        let (fx, fy) = self.agent.dir.delta();
        let (rx, ry) = self.agent.dir.right().delta();
        let (x, y) = offset(
            self.agent.x,
            self.agent.y,
            (fwd * fx + lat * rx, fwd * fy + lat * ry),
        )?;
        self.in_bounds(x, y).then_some((x, y))
    }

    pub fn observe(&self) -> Observation {
        let mut grid = [[[obs_id::OUT_OF_BOUNDS, 0]; VIEW]; VIEW];
        for (row, line) in grid.iter_mut().enumerate() {
            for (col, cell) in line.iter_mut().enumerate() {
                let Some((x, y)) = self.view_to_world(row, col) else {
                    continue;
                };
                *cell = match (self.get(x, y), self.terrain(x, y)) {
                    (Some(o), _) => object_ids(o),
                    (None, Terrain::Wall) => [obs_id::WALL, 0],
                    (None, _) => [obs_id::EMPTY, 0],
                };
            }
        }
        grid[VIEW - 1][VIEW / 2] = match &self.carried {
            Some(o) => object_ids(o),
            None => [obs_id::AGENT, 0],
        };
        Observation { grid }
    }

    /// What the agent currently perceives, precomputed for fast queries.
    pub fn scene(&self) -> Scene {
        let mut visible = Vec::with_capacity(8);
        let mut mask = [[false; VIEW]; VIEW];
        for row in 0..VIEW {
            for col in 0..VIEW {
                if row == VIEW - 1 && col == VIEW / 2 {
                    continue;
                }
                if let Some((x, y)) = self.view_to_world(row, col) {
                    if let Some(o) = self.get(x, y) {
                        visible.push((row, col, *o));
                        mask[row][col] = true;
                    }
                }
            }
        }
        let mut pairs = Vec::new();
        for (i, &(r1, c1, a)) in visible.iter().enumerate() {
            for &(r2, c2, b) in &visible[i + 1..] {
                if r1.abs_diff(r2) + c1.abs_diff(c2) == 1 && !(a.is_door() && b.is_door()) {
                    pairs.push((a, b));
                }
            }
        }
        Scene {
            front: self.front_object().copied(),
            carried: self.carried,
            pairs,
        }
    }

    /// The full set of satisfied propositions, closed under generalization.
    pub fn label(&self) -> BTreeSet<Proposition> {
        self.scene().label()
    }

    pub fn to_json(&self) -> LevelJson {
        LevelJson {
            rooms: self.layout.rooms(),
            width: self.width(),
            height: self.height(),
            agent: self.agent,
            objects: self
                .objects()
                .map(|(x, y, o)| ObjectJson {
                    x,
                    y,
                    kind: o.kind,
                    color: o.color,
                    state: o.state,
                })
                .collect(),
            carrying: self.carried.map(|o| CarriedJson {
                kind: o.kind,
                color: o.color,
            }),
        }
    }

    pub fn from_json(j: &LevelJson) -> Result<Level> {
        let layout = RoomLayout::from_rooms(j.rooms)?;
        if layout.width() != j.width || layout.height() != j.height {
            return Err(Error::InvalidLevel(format!(
                "{} rooms must be {}x{}",
                j.rooms,
                layout.width(),
                layout.height()
            )));
        }
        let mut level = Level::new(layout, j.agent);
        for o in &j.objects {
            if !level.in_bounds(o.x, o.y) || level.get(o.x, o.y).is_some() {
                return Err(Error::InvalidLevel(format!("bad object cell ({},{})", o.x, o.y)));
            }
            level.set(
                o.x,
                o.y,
                Some(GridObject {
                    kind: o.kind,
                    color: o.color,
                    state: o.state,
                }),
            );
        }
        level.carried = j.carrying.map(|c| GridObject::new(c.kind, c.color));
        level.validate()?;
        Ok(level)
    }

    /// One character per cell. Legend: `#` wall, `.` floor, `b` ball,
    /// `s` square, `k` key, `/` open door, `+` closed door, `L` locked
    /// door, `^ > v <` agent. Object colors follow in a trailing list.
    pub fn render_ascii(&self) -> String {
        let mut out = String::new();
        for y in 0..self.height() {
            for x in 0..self.width() {
                let ch = if (x, y) == (self.agent.x, self.agent.y) {
                    match self.agent.dir {
                        Direction::North => '^',
                        Direction::East => '>',
                        Direction::South => 'v',
                        Direction::West => '<',
                    }
                } else {
                    match (self.get(x, y), self.terrain(x, y)) {
                        (Some(o), _) => match (o.kind, o.state) {
                            (ObjectKind::Ball, _) => 'b',
                            (ObjectKind::Square, _) => 's',
                            (ObjectKind::Key, _) => 'k',
                            (_, Some(DoorState::Open)) => '/',
                            (_, Some(DoorState::Closed)) => '+',
                            _ => 'L',
                        },
                        (None, Terrain::Floor) => '.',
                        (None, _) => '#',
                    }
                };
                out.push(ch);
            }
            out.push('\n');
        }
        for (x, y, o) in self.objects() {
            let _ = writeln!(out, "({x},{y}) {}", o.descriptor());
        }
        if let Some(c) = &self.carried {
            let _ = writeln!(out, "carrying {}", c.descriptor());
        }
        out
    }
}

/// The agent's perception: front object, carried object and visible
/// orthogonally adjacent object pairs (never door-door, never the agent cell).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Scene {
    pub front: Option<GridObject>,
    pub carried: Option<GridObject>,
    pub pairs: Vec<(GridObject, GridObject)>,
}

impl Scene {
    pub fn label(&self) -> BTreeSet<Proposition> {
        let mut out = BTreeSet::new();
        if let Some(o) = &self.front {
            for d in o.descriptor().generalizations() {
                out.insert(Proposition::front(d));
            }
        }
        if let Some(o) = &self.carried {
            for d in o.descriptor().generalizations() {
                out.insert(Proposition::carrying(d));
            }
        }
        for (a, b) in &self.pairs {
            for da in a.descriptor().generalizations() {
                for db in b.descriptor().generalizations() {
                    out.insert(Proposition::next(da, db));
                }
            }
        }
        out
    }
}

impl Labeling for Scene {
    fn holds(&self, p: &Proposition) -> bool {
        use crate::alphabet::Location;
        match p.location {
            Location::Front => self.front.is_some_and(|o| o.matches(&p.first)),
            Location::Carrying => self.carried.is_some_and(|o| o.matches(&p.first)),
            Location::Next => {
                let Some(second) = p.second else { return false };
                self.pairs.iter().any(|(a, b)| {
                    (a.matches(&p.first) && b.matches(&second))
                        || (b.matches(&p.first) && a.matches(&second))
                })
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObjectJson {
    pub x: usize,
    pub y: usize,
    pub kind: ObjectKind,
    pub color: Color,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<DoorState>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CarriedJson {
    pub kind: ObjectKind,
    pub color: Color,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelJson {
    pub rooms: usize,
    pub width: usize,
    pub height: usize,
    pub agent: AgentPose,
    pub objects: Vec<ObjectJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub carrying: Option<CarriedJson>,
}

impl Serialize for Level {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = LevelJson::deserialize(d)?;
        Level::from_json(&j).map_err(serde::de::Error::custom)
    }
}
