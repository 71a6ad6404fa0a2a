//! Static solvability (path decomposition plus a tree of locked-door
//! openings) and an exact breadth-first oracle over the product space.

use std::collections::{HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alphabet::{Color, DoorState, Location, ObjectDescriptor, ObjectKind, Proposition};
use crate::gridworld::{Action, AgentPose, Direction, GridObject, Level, RoomLayout, Terrain, VIEW};
use crate::problem::Problem;
use crate::reward_machine::{RewardMachine, RmState};
use crate::rng::{RngStreams, Stream};
use crate::samplers::{
    sample_problem, LevelSamplerConfig, ProblemSamplerConfig, RandomWalkConfig, SamplingMode, SequentialRmConfig,
    Structure, TaskSamplerConfig,
};

/// An object as seen by the static checker. Doors carry the set of states
/// they may be observed in at this node of the opening tree.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ReachableObject {
    pub id: usize,
    pub kind: ObjectKind,
    pub color: Color,
    pub door_states: u8,
    pub cell: Option<(usize, usize)>,
}

impl ReachableObject {
    pub fn matches(&self, d: &ObjectDescriptor) -> bool {
        d.kind == self.kind
            && d.color.is_none_or(|c| c == self.color)
            && d.door_state.is_none_or(|s| self.door_states & state_bit(s) != 0)
    }
}

fn state_bit(s: DoorState) -> u8 {
    1 << s.index()
}

const OPEN_OR_CLOSED: u8 = 0b011;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReachabilityNode {
    /// Door slots opened in this branch (must have been locked).
    pub opened: Vec<(usize, usize)>,
    pub reachable_cells: Vec<bool>,
    pub reachable_objects: Vec<ReachableObject>,
    /// Locked, unopened doors adjacent to the reachable region.
    pub boundary_locked: Vec<(usize, usize)>,
}

impl ReachabilityNode {
    pub fn is_reachable(&self, level: &Level, x: usize, y: usize) -> bool {
        level.in_bounds(x, y) && self.reachable_cells[y * level.width() + x]
    }

    fn satisfies(&self, p: &Proposition, visible_pairs: &[(ReachableObject, ReachableObject)]) -> bool {
        match p.location {
            Location::Front => self.reachable_objects.iter().any(|o| o.matches(&p.first)),
            Location::Carrying => self
                .reachable_objects
                .iter()
                .any(|o| o.kind != ObjectKind::Door && o.matches(&p.first)),
            Location::Next => {
                let Some(second) = p.second else { return false };
                let objs = &self.reachable_objects;
                let distinct = objs.iter().any(|a| {
                    a.matches(&p.first) && objs.iter().any(|b| b.id != a.id && b.matches(&second))
                });
                distinct
                    || visible_pairs.iter().any(|(a, b)| {
                        (a.matches(&p.first) && b.matches(&second))
                            || (b.matches(&p.first) && a.matches(&second))
                    })
            }
        }
    }
}

fn door_mask(obj: &GridObject, opened: bool) -> u8 {
    match obj.state {
        Some(DoorState::Locked) if !opened => state_bit(DoorState::Locked),
        Some(_) => OPEN_OR_CLOSED,
        None => 0,
    }
}

/// Flood fill from the agent. Non-door objects are passable (they can be
/// picked up), open and closed doors are passable, locked doors are walls
/// unless opened.
pub fn reachable_set(level: &Level, opened: &[(usize, usize)]) -> ReachabilityNode {
    let (w, h) = (level.width(), level.height());
    let mut seen = vec![false; w * h];
    let passable = |x: usize, y: usize| -> bool {
        match level.terrain(x, y) {
            Terrain::Wall => false,
            Terrain::Floor => true,
            Terrain::DoorSlot => match level.get(x, y) {
                Some(d) => d.state != Some(DoorState::Locked) || opened.contains(&(x, y)),
                None => false,
            },
        }
    };
    let mut stack = vec![(level.agent.x, level.agent.y)];
    seen[level.agent.y * w + level.agent.x] = true;
    let mut boundary = Vec::new();
    while let Some((x, y)) = stack.pop() {
        for dir in Direction::ALL {
            let Some((nx, ny)) = crate::gridworld::offset(x, y, dir.delta()) else {
                continue;
            };
            if nx >= w || ny >= h || seen[ny * w + nx] {
                continue;
            }
            if passable(nx, ny) {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            } else if level.terrain(nx, ny) == Terrain::DoorSlot && !boundary.contains(&(nx, ny)) {
                boundary.push((nx, ny));
            }
        }
    }
    boundary.sort_by_key(|&(x, y)| (y, x));
    let mut objects = Vec::new();
    for (i, (x, y, o)) in level.objects().enumerate() {
        if seen[y * w + x] || boundary.contains(&(x, y)) {
            objects.push(ReachableObject {
                id: i,
                kind: o.kind,
                color: o.color,
                door_states: door_mask(o, opened.contains(&(x, y))),
                cell: Some((x, y)),
            });
        }
    }
    if let Some(c) = &level.carried {
        objects.push(ReachableObject {
            id: usize::MAX,
            kind: c.kind,
            color: c.color,
            door_states: 0,
            cell: None,
        });
    }
    ReachabilityNode {
        opened: opened.to_vec(),
        reachable_cells: seen,
        reachable_objects: objects,
        boundary_locked: boundary,
    }
}

/// Pairs of grid objects that are already orthogonally adjacent and can both
/// be seen at once from some reachable cell. Walls do not occlude the view,
/// so such pairs can satisfy next propositions without being reachable.
fn visible_adjacent_pairs(
    level: &Level,
    node: &ReachabilityNode,
) -> Vec<(ReachableObject, ReachableObject)> {
    let objs: Vec<ReachableObject> = level
        .objects()
        .enumerate()
        .map(|(i, (x, y, o))| ReachableObject {
            id: i,
            kind: o.kind,
            color: o.color,
            door_states: door_mask(o, node.opened.contains(&(x, y))),
            cell: Some((x, y)),
        })
        .collect();
    let mut out = Vec::new();
    for (i, a) in objs.iter().enumerate() {
        for b in &objs[i + 1..] {
            let (Some((ax, ay)), Some((bx, by))) = (a.cell, b.cell) else {
                continue;
            };
            if ax.abs_diff(bx) + ay.abs_diff(by) != 1 || (a.kind == ObjectKind::Door && b.kind == ObjectKind::Door)
            {
                continue;
            }
            if both_visible_from_reachable(level, node, (ax, ay), (bx, by)) {
                out.push((*a, *b));
            }
        }
    }
    out
}

fn both_visible_from_reachable(
    level: &Level,
    node: &ReachabilityNode,
    a: (usize, usize),
    b: (usize, usize),
) -> bool {
    let half = (VIEW / 2) as isize;
    let depth = VIEW as isize - 1;
    let in_view = |pose: &AgentPose, (x, y): (usize, usize)| -> bool {
        let (dx, dy) = (x as isize - pose.x as isize, y as isize - pose.y as isize);
        let (fx, fy) = pose.dir.delta();
        let (rx, ry) = pose.dir.right().delta();
        let fwd = dx * fx + dy * fy;
        let lat = dx * rx + dy * ry;
        (0..=depth).contains(&fwd) && (-half..=half).contains(&lat) && (fwd, lat) != (0, 0)
    };
    let (w, h) = (level.width(), level.height());
    let x0 = a.0.min(b.0).saturating_sub(VIEW);
    let y0 = a.1.min(b.1).saturating_sub(VIEW);
    for y in y0..(a.1.max(b.1) + VIEW).min(h) {
        for x in x0..(a.0.max(b.0) + VIEW).min(w) {
            if !node.reachable_cells[y * w + x] {
                continue;
            }
            for dir in Direction::ALL {
                let pose = AgentPose::new(x, y, dir);
                if in_view(&pose, a) && in_view(&pose, b) {
                    return true;
                }
            }
        }
    }
    false
}

struct StaticSearch<'a> {
    level: &'a Level,
    props: Vec<Proposition>,
    nodes: HashMap<Vec<(usize, usize)>, (ReachabilityNode, Vec<(ReachableObject, ReachableObject)>)>,
    failed: HashSet<(Vec<(usize, usize)>, usize)>,
}

impl StaticSearch<'_> {
    fn node(&mut self, opened: &[(usize, usize)]) -> &(ReachabilityNode, Vec<(ReachableObject, ReachableObject)>) {
        let level = self.level;
        self.nodes.entry(opened.to_vec()).or_insert_with(|| {
            let node = reachable_set(level, opened);
            let pairs = visible_adjacent_pairs(level, &node);
            (node, pairs)
        })
    }

    fn search(&mut self, opened: &mut Vec<(usize, usize)>, i: usize) -> bool {
        if i == self.props.len() {
            return true;
        }
        if self.failed.contains(&(opened.clone(), i)) {
            return false;
        }
        let prop = self.props[i];
        let level = self.level;
        let (sat, candidates) = {
            let (node, pairs) = self.node(opened);
            let sat = node.satisfies(&prop, pairs);
            let keys: Vec<Color> = node
                .reachable_objects
                .iter()
                .filter(|o| o.kind == ObjectKind::Key)
                .map(|o| o.color)
                .collect();
            let candidates: Vec<(usize, usize)> = node
                .boundary_locked
                .iter()
                .copied()
                .filter(|&(x, y)| {
                    level.get(x, y).is_some_and(|d| {
                        d.state == Some(DoorState::Locked) && keys.contains(&d.color)
                    }) && !opened.contains(&(x, y))
                })
                .collect();
            (sat, candidates)
        };
        if sat && self.search(opened, i + 1) {
            return true;
        }
        for door in candidates {
            opened.push(door);
            opened.sort_unstable();
            let ok = self.search(opened, i);
            opened.retain(|&d| d != door);
            if ok {
                return true;
            }
        }
        self.failed.insert((opened.clone(), i));
        false
    }
}

/// True iff some initial-to-accepting path has positive propositions that
/// can be met in order, under some order of opening locked doors.
pub fn is_solvable_static(problem: &Problem) -> bool {
    let rm = &problem.rm;
    if rm.initial == rm.accepting {
        return true;
    }
    let mut search = StaticSearch {
        level: &problem.level,
        props: Vec::new(),
        nodes: HashMap::new(),
        failed: HashSet::new(),
    };
    for path in rm.enumerate_paths() {
        search.props = path.iter().map(|&e| rm.edges[e].formula.positive).collect();
        search.failed.clear();
        if search.search(&mut Vec::new(), 0) {
            return true;
        }
    }
    false
}

/// Static check of a single proposition from the level's current state.
pub fn is_proposition_reachable(level: &Level, p: &Proposition) -> bool {
    let rm = RewardMachine::sequential(&[*p]);
    is_solvable_static(&Problem::new(rm, level.clone()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExactResult {
    Solvable,
    Unsolvable,
    /// The state budget ran out before the search finished.
    Indeterminate,
}

fn encode_object(o: &GridObject) -> u8 {
    let state = o.state.map_or(0, |s| 1 + s.index() as u8);
    (o.kind.index() as u8) << 5 | (o.color.index() as u8) << 2 | state
}

fn decode_object(b: u8) -> GridObject {
    let kind = ObjectKind::ALL[(b >> 5) as usize];
    let color = Color::ALL[((b >> 2) & 0b111) as usize];
    let state = match b & 0b11 {
        0 => None,
        s => Some(DoorState::ALL[(s - 1) as usize]),
    };
    GridObject { kind, color, state }
}

/// Compact, canonical key for a (level, RM state) pair.
fn encode_state(level: &Level, u: RmState) -> Vec<u8> {
    let mut key = Vec::with_capacity(6 + 3 * 8);
    key.push(level.agent.x as u8);
    key.push(level.agent.y as u8);
    key.push(level.agent.dir.index() as u8);
    key.push(level.carried.map_or(0xff, |o| encode_object(&o)));
    key.push(u as u8);
    for (x, y, o) in level.objects() {
        key.extend_from_slice(&[x as u8, y as u8, encode_object(o)]);
    }
    key
}

fn decode_state(layout: RoomLayout, key: &[u8]) -> (Level, RmState) {
    let agent = AgentPose::new(key[0] as usize, key[1] as usize, Direction::ALL[key[2] as usize]);
    let mut level = Level::new(layout, agent);
    if key[3] != 0xff {
        level.carried = Some(decode_object(key[3]));
    }
    for chunk in key[5..].chunks_exact(3) {
        level.set(chunk[0] as usize, chunk[1] as usize, Some(decode_object(chunk[2])));
    }
    (level, key[4] as usize)
}

/// Breadth-first search over (level state, RM state). The label of the
/// initial state is applied once before the first action.
pub fn is_solvable_exact(problem: &Problem, step_limit: usize, state_budget: usize) -> ExactResult {
    let rm = &problem.rm;
    let level = &problem.level;
    let Ok((u0, _)) = rm.rm_step(rm.initial, &level.scene()) else {
        return ExactResult::Unsolvable;
    };
    if u0 == rm.accepting {
        return ExactResult::Solvable;
    }
    let start = encode_state(level, u0);
    let mut visited: HashSet<Vec<u8>> = HashSet::new();
    let mut queue: VecDeque<(Vec<u8>, usize)> = VecDeque::new();
    visited.insert(start.clone());
    queue.push_back((start, 0));
    let mut truncated = false;
    while let Some((key, depth)) = queue.pop_front() {
        if depth >= step_limit {
            continue;
        }
        let (cur, u) = decode_state(level.layout, &key);
        for action in Action::ALL {
            let next = cur.env_step(action);
            let Ok((v, _)) = rm.rm_step(u, &next.scene()) else {
                continue;
            };
            if v == rm.accepting {
                return ExactResult::Solvable;
            }
            if v == u && next == cur {
                continue;
            }
            let nk = encode_state(&next, v);
            if visited.contains(&nk) {
                continue;
            }
            if visited.len() >= state_budget {
                truncated = true;
                continue;
            }
            visited.insert(nk.clone());
            queue.push_back((nk, depth + 1));
        }
    }
    if truncated {
        ExactResult::Indeterminate
    } else {
        ExactResult::Unsolvable
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// Percent solvable per batch.
    pub per_batch: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl RateSummary {
    pub fn from_batches(per_batch: Vec<f64>) -> Self {
        let n = per_batch.len() as f64;
        let mean = per_batch.iter().sum::<f64>() / n;
        let var = if per_batch.len() > 1 {
            per_batch.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        Self {
            per_batch,
            mean,
            std: var.sqrt(),
        }
    }
}

/// Percentage of statically solvable problems per batch.
pub fn batch_solvability_rate(
    cfg: &ProblemSamplerConfig,
    batches: usize,
    batch_size: usize,
    seed: u64,
) -> crate::Result<RateSummary> {
    let streams = RngStreams::new(seed);
    let mut per_batch = Vec::with_capacity(batches);
    for b in 0..batches {
        let solved: crate::Result<Vec<bool>> = (0..batch_size)
            .into_par_iter()
            .map(|i| {
                let mut rng = streams.stream(Stream::Sampler, &[b as u64, i as u64]);
                let problem = sample_problem(&mut rng, cfg)?;
                Ok(is_solvable_static(&problem))
            })
            .collect();
        let solved = solved?.into_iter().filter(|&s| s).count();
        per_batch.push(100.0 * solved as f64 / batch_size as f64);
    }
    Ok(RateSummary::from_batches(per_batch))
}

/// Object-count bands used to break down solvability by level size.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ObjectBand {
    L,
    M,
    H,
}

impl ObjectBand {
    pub const ALL: [ObjectBand; 3] = [ObjectBand::L, ObjectBand::M, ObjectBand::H];

    pub fn range(self, layout: RoomLayout) -> (usize, usize) {
        use ObjectBand::*;
        match (layout, self) {
            (RoomLayout::One, L) => (1, 2),
            (RoomLayout::One, M) => (3, 4),
            (RoomLayout::One, H) => (5, 5),
            (RoomLayout::Two, L) => (1, 3),
            (RoomLayout::Two, M) => (4, 7),
            (RoomLayout::Two, H) => (8, 10),
            (RoomLayout::Four, L) => (4, 7),
            (RoomLayout::Four, M) => (8, 11),
            (RoomLayout::Four, H) => (12, 15),
            (RoomLayout::Six, L) => (7, 10),
            (RoomLayout::Six, M) => (11, 16),
            (RoomLayout::Six, H) => (17, 20),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverallCell {
    pub mode: SamplingMode,
    pub structure: Structure,
    pub rate: RateSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreakdownCell {
    pub mode: SamplingMode,
    pub transitions: usize,
    pub rooms: usize,
    pub objects: ObjectBand,
    pub rate: RateSummary,
}

/// Sampler settings for one cell of the overall table.
pub fn overall_config(mode: SamplingMode, structure: Structure) -> ProblemSamplerConfig {
    let task = match structure {
        Structure::Sequential => TaskSamplerConfig::default(),
        _ => TaskSamplerConfig::RandomWalk(RandomWalkConfig {
            structure,
            ..RandomWalkConfig::dag()
        }),
    };
    ProblemSamplerConfig {
        mode,
        level: LevelSamplerConfig::default(),
        task,
    }
}

/// Sampler settings for one cell of the sequential breakdown.
pub fn breakdown_config(mode: SamplingMode, transitions: usize, layout: RoomLayout, band: ObjectBand) -> ProblemSamplerConfig {
    ProblemSamplerConfig {
        mode,
        level: LevelSamplerConfig {
            rooms: vec![layout.rooms()],
            object_range: Some(band.range(layout)),
        },
        task: TaskSamplerConfig::Sequential(SequentialRmConfig {
            min_len: transitions,
            max_len: transitions,
            ..SequentialRmConfig::default()
        }),
    }
}

const MODES: [SamplingMode; 2] = [SamplingMode::Independent, SamplingMode::LevelConditioned];

pub fn overall_table(batches: usize, batch_size: usize, seed: u64) -> crate::Result<Vec<OverallCell>> {
    let mut out = Vec::new();
    for mode in MODES {
        for structure in [Structure::Sequential, Structure::Dag] {
            let rate = batch_solvability_rate(&overall_config(mode, structure), batches, batch_size, seed)?;
            out.push(OverallCell { mode, structure, rate });
        }
    }
    Ok(out)
}

pub fn breakdown_table(batches: usize, batch_size: usize, seed: u64) -> crate::Result<Vec<BreakdownCell>> {
    let mut out = Vec::new();
    for mode in MODES {
        for transitions in 1..=5 {
            for layout in RoomLayout::ALL {
                for objects in ObjectBand::ALL {
                    let cfg = breakdown_config(mode, transitions, layout, objects);
                    let rate = batch_solvability_rate(&cfg, batches, batch_size, seed)?;
                    out.push(BreakdownCell {
                        mode,
                        transitions,
                        rooms: layout.rooms(),
                        objects,
                        rate,
                    });
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Proposition {
        s.parse().unwrap()
    }

    fn two_rooms(door: DoorState) -> Level {
        let mut l = Level::new(RoomLayout::Two, AgentPose::new(2, 3, Direction::East));
        l.set(6, 3, Some(GridObject::door(Color::Green, door)));
        l.set(9, 2, Some(GridObject::new(ObjectKind::Square, Color::Red)));
        l
    }

    #[test]
    fn reachability_through_locked_door() {
        let mut l = two_rooms(DoorState::Locked);
        l.set(2, 5, Some(GridObject::new(ObjectKind::Key, Color::Green)));
        let root = reachable_set(&l, &[]);
        assert!(!root.is_reachable(&l, 9, 2));
        assert!(root.reachable_objects.iter().any(|o| o.kind == ObjectKind::Door));
        assert_eq!(root.boundary_locked, vec![(6, 3)]);
        let opened = reachable_set(&l, &[(6, 3)]);
        assert!(opened.is_reachable(&l, 9, 2));
        assert_eq!(opened.reachable_objects.len(), 3);
    }

    #[test]
    fn keeping_door_locked_can_matter() {
        let mut l = two_rooms(DoorState::Locked);
        l.set(2, 5, Some(GridObject::new(ObjectKind::Key, Color::Green)));
        l.set(2, 1, Some(GridObject::new(ObjectKind::Square, Color::Blue)));
        let rm = RewardMachine::sequential(&[p("front_square"), p("front_door_green_locked")]);
        assert!(is_solvable_static(&Problem::new(rm.clone(), l.clone())));
        let rm = RewardMachine::sequential(&[p("front_square_red"), p("front_door_green_locked")]);
        assert!(!is_solvable_static(&Problem::new(rm, l)));
    }

    #[test]
    fn missing_key_blocks() {
        let l = two_rooms(DoorState::Locked);
        let rm = RewardMachine::sequential(&[p("front_square")]);
        let problem = Problem::new(rm, l);
        assert!(!is_solvable_static(&problem));
        assert_eq!(is_solvable_exact(&problem, 512, 1 << 20), ExactResult::Unsolvable);
    }

    #[test]
    fn closed_door_is_passable() {
        let l = two_rooms(DoorState::Closed);
        let rm = RewardMachine::sequential(&[p("front_door_open"), p("front_square_red")]);
        let problem = Problem::new(rm, l);
        assert!(is_solvable_static(&problem));
        assert_eq!(is_solvable_exact(&problem, 512, 1 << 20), ExactResult::Solvable);
    }

    #[test]
    fn state_codec_round_trip() {
        let mut l = two_rooms(DoorState::Open);
        l.carried = Some(GridObject::new(ObjectKind::Key, Color::Gray));
        let key = encode_state(&l, 3);
        assert_eq!(decode_state(l.layout, &key), (l, 3));
    }
}
