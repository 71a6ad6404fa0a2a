//! Level, task and hindsight edits, and random edit sequences.

use std::collections::VecDeque;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::{Alphabet, Proposition};
use crate::error::{Error, Result};
use crate::gridworld::{AgentPose, Level, RoomLayout, Terrain};
use crate::problem::Problem;
use crate::reward_machine::{Edge, Formula, RewardKind, RewardMachine, RmState};
use crate::samplers::{random_direction, random_door, random_non_door, PropSet};

/// Largest machine AddState may produce.
pub const MAX_RM_STATES: usize = 6;

/// Default number of edits per mutation.
pub const DEFAULT_EDIT_RANGE: (usize, usize) = (7, 10);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    AddRooms,
    RemoveRooms,
    AddObject,
    RemoveObject,
    MoveAgent,
    MoveObject,
    ReplaceDoor,
    ReplaceNonDoor,
    SwitchProposition,
    AddState,
    RemoveState,
    ExtractPreceding,
    ExtractSucceeding,
}

impl EditKind {
    pub const ALL: [EditKind; 13] = [
        Self::AddRooms,
        Self::RemoveRooms,
        Self::AddObject,
        Self::RemoveObject,
        Self::MoveAgent,
        Self::MoveObject,
        Self::ReplaceDoor,
        Self::ReplaceNonDoor,
        Self::SwitchProposition,
        Self::AddState,
        Self::RemoveState,
        Self::ExtractPreceding,
        Self::ExtractSucceeding,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_hindsight(self) -> bool {
        matches!(self, Self::ExtractPreceding | Self::ExtractSucceeding)
    }

    pub fn is_task(self) -> bool {
        matches!(self, Self::SwitchProposition | Self::AddState | Self::RemoveState)
    }

    pub fn is_level(self) -> bool {
        !self.is_hindsight() && !self.is_task()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::AddRooms => "add_rooms",
            Self::RemoveRooms => "remove_rooms",
            Self::AddObject => "add_object",
            Self::RemoveObject => "remove_object",
            Self::MoveAgent => "move_agent",
            Self::MoveObject => "move_object",
            Self::ReplaceDoor => "replace_door",
            Self::ReplaceNonDoor => "replace_non_door",
            Self::SwitchProposition => "switch_proposition",
            Self::AddState => "add_state",
            Self::RemoveState => "remove_state",
            Self::ExtractPreceding => "extract_preceding",
            Self::ExtractSucceeding => "extract_succeeding",
        }
    }
}

impl fmt::Display for EditKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Where a rollout stopped: the machine state and the physical state.
#[derive(Clone, Debug, PartialEq)]
pub struct RolloutContext {
    pub final_rm_state: RmState,
    pub final_level: Level,
}

fn hindsight_ok(problem: &Problem, ctx: Option<&RolloutContext>) -> bool {
    ctx.is_some_and(|c| {
        let rm = &problem.rm;
        c.final_rm_state < rm.num_states && c.final_rm_state != rm.initial && c.final_rm_state != rm.accepting
    })
}

fn grid_non_doors(level: &Level) -> Vec<(usize, usize)> {
    level
        .objects()
        .filter(|(_, _, o)| !o.is_door())
        .map(|(x, y, _)| (x, y))
        .collect()
}

/// Doors other than one the agent is standing in.
fn grid_doors(level: &Level) -> Vec<(usize, usize)> {
    level
        .objects()
        .filter(|&(x, y, o)| o.is_door() && (x, y) != (level.agent.x, level.agent.y))
        .map(|(x, y, _)| (x, y))
        .collect()
}

pub fn edit_applicable(problem: &Problem, kind: EditKind, ctx: Option<&RolloutContext>) -> bool {
    let level = &problem.level;
    let rooms = level.layout.rooms();
    match kind {
        EditKind::AddRooms => matches!(rooms, 1 | 2 | 4),
        EditKind::RemoveRooms => !remove_room_options(level).is_empty(),
        EditKind::AddObject => level.object_count() < level.layout.max_objects() && !level.free_cells().is_empty(),
        EditKind::RemoveObject => {
            level.object_count() > level.layout.min_objects() && !grid_non_doors(level).is_empty()
        }
        EditKind::MoveAgent => !level.free_cells().is_empty(),
        EditKind::MoveObject => !grid_non_doors(level).is_empty() && !level.free_cells().is_empty(),
        EditKind::ReplaceDoor => !grid_doors(level).is_empty(),
        EditKind::ReplaceNonDoor => !grid_non_doors(level).is_empty(),
        EditKind::SwitchProposition => !problem.rm.edges.is_empty(),
        EditKind::AddState => problem.rm.num_states < MAX_RM_STATES,
        EditKind::RemoveState => problem.rm.num_states > 2 && !removable_states(&problem.rm).is_empty(),
        EditKind::ExtractPreceding | EditKind::ExtractSucceeding => hindsight_ok(problem, ctx),
    }
}

/// Applies one edit. Task and hindsight edits leave a sparse-reward machine.
pub fn apply_edit<R: Rng + ?Sized>(
    problem: &Problem,
    kind: EditKind,
    rng: &mut R,
    ctx: Option<&RolloutContext>,
) -> Result<Problem> {
    if !edit_applicable(problem, kind, ctx) {
        return Err(Error::EditNotApplicable(kind));
    }
    let mut out = problem.clone();
    match kind {
        EditKind::AddRooms => out.level = add_rooms(&problem.level, rng)?,
        EditKind::RemoveRooms => out.level = remove_rooms(&problem.level, rng)?,
        EditKind::AddObject => {
            let level = &mut out.level;
            let cell = *level.free_cells().choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            level.set(cell.0, cell.1, Some(random_non_door(rng)));
        }
        EditKind::RemoveObject => {
            let cell = *grid_non_doors(&out.level).choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            out.level.set(cell.0, cell.1, None);
        }
        EditKind::MoveAgent => {
            let level = &mut out.level;
            let (x, y) = *level.free_cells().choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            level.agent = AgentPose::new(x, y, random_direction(rng));
        }
        EditKind::MoveObject => {
            let level = &mut out.level;
            let from = *grid_non_doors(level).choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            let to = *level.free_cells().choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            let obj = level.get(from.0, from.1).copied();
            level.set(from.0, from.1, None);
            level.set(to.0, to.1, obj);
        }
        EditKind::ReplaceDoor => {
            let cell = *grid_doors(&out.level).choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            out.level.set(cell.0, cell.1, Some(random_door(rng)));
        }
        EditKind::ReplaceNonDoor => {
            let cell = *grid_non_doors(&out.level).choose(rng).ok_or(Error::EditNotApplicable(kind))?;
            out.level.set(cell.0, cell.1, Some(random_non_door(rng)));
        }
        EditKind::SwitchProposition => out.rm = switch_proposition(&problem.rm, rng)?,
        EditKind::AddState => out.rm = add_state(&problem.rm, rng)?,
        EditKind::RemoveState => out.rm = remove_state(&problem.rm, rng)?,
        EditKind::ExtractPreceding => {
            let u = ctx.map(|c| c.final_rm_state).ok_or(Error::EditNotApplicable(kind))?;
            let mut rm = problem.rm.clone();
            rm.edges.retain(|e| e.src != u);
            rm.accepting = u;
            out.rm = finish_rm(rm)?;
        }
        EditKind::ExtractSucceeding => {
            let c = ctx.ok_or(Error::EditNotApplicable(kind))?;
            let mut rm = problem.rm.clone();
            rm.initial = c.final_rm_state;
            out.rm = finish_rm(rm)?;
            out.level = c.final_level.clone();
        }
    }
    Ok(out)
}

/// Draws a count from `count_range`, then at each step an applicable kind
/// uniformly at random. Hindsight kinds are only offered first.
pub fn mutate<R: Rng + ?Sized>(
    problem: &Problem,
    rng: &mut R,
    ctx: Option<&RolloutContext>,
    count_range: (usize, usize),
) -> Result<(Problem, Vec<EditKind>)> {
    let (lo, hi) = count_range;
    if lo > hi {
        return Err(Error::Config(format!("empty edit count range [{lo}, {hi}]")));
    }
    let n = rng.gen_range(lo..=hi);
    let mut current = problem.clone();
    let mut applied = Vec::with_capacity(n);
    for step in 0..n {
        let step_ctx = if step == 0 { ctx } else { None };
        let kinds: Vec<EditKind> = EditKind::ALL
            .into_iter()
            .filter(|&k| edit_applicable(&current, k, step_ctx))
            .collect();
        let kind = *kinds.choose(rng).ok_or(Error::Empty)?;
        current = apply_edit(&current, kind, rng, step_ctx)?;
        applied.push(kind);
    }
    Ok((current, applied))
}

/// Renumbers states in breadth-first order from the initial state, following
/// outgoing edges in order of their old targets, then prunes and re-sparsifies.
fn finish_rm(rm: RewardMachine) -> Result<RewardMachine> {
    let rm = rm.prune()?;
    let mut order = vec![usize::MAX; rm.num_states];
    let mut queue = VecDeque::from([rm.initial]);
    order[rm.initial] = 0;
    let mut next = 1;
    while let Some(u) = queue.pop_front() {
        let mut succ: Vec<RmState> = rm.outgoing(u).map(|(_, e)| e.dst).collect();
        succ.sort_unstable();
        for v in succ {
            if order[v] == usize::MAX {
                order[v] = next;
                next += 1;
                queue.push_back(v);
            }
        }
    }
    let mut edges: Vec<Edge> = rm
        .edges
        .iter()
        .map(|e| Edge {
            src: order[e.src],
            dst: order[e.dst],
            formula: e.formula.clone(),
            reward: e.reward,
        })
        .collect();
    edges.sort_by_key(|e| (e.src, e.dst));
    let mut out = RewardMachine {
        num_states: rm.num_states,
        initial: order[rm.initial],
        accepting: order[rm.accepting],
        edges,
    };
    out.recompute_negations();
    out.assign_rewards(RewardKind::Sparse)
}

fn uniform_proposition<R: Rng + ?Sized>(rng: &mut R) -> Proposition {
    let alphabet = Alphabet::global();
    alphabet.get(rng.gen_range(0..alphabet.len()))
}

fn new_edge(src: RmState, dst: RmState, p: Proposition) -> Edge {
    Edge {
        src,
        dst,
        formula: Formula::new(p),
        reward: 0.0,
    }
}

/// Relabels a uniformly chosen edge with a different proposition, drawn
/// uniformly among those keeping the machine deterministic.
fn switch_proposition<R: Rng + ?Sized>(rm: &RewardMachine, rng: &mut R) -> Result<RewardMachine> {
    let alphabet = Alphabet::global();
    let matrices = alphabet.matrices();
    let e = rng.gen_range(0..rm.edges.len());
    let edge = &rm.edges[e];
    let mut mask = PropSet::full();
    for (i, sib) in rm.outgoing(edge.src) {
        if i == e {
            continue;
        }
        if let Some(k) = alphabet.index_of(&sib.formula.positive) {
            mask.intersect(matrices.not_implied_by(k));
            mask.intersect(matrices.not_implying(k));
        }
    }
    let current = alphabet.index_of(&edge.formula.positive);
    let candidates: Vec<usize> = mask.iter().filter(|&i| Some(i) != current).collect();
    let choice = *candidates.choose(rng).ok_or(Error::EditNotApplicable(EditKind::SwitchProposition))?;
    let mut out = rm.clone();
    out.edges[e].formula = Formula::new(alphabet.get(choice));
    finish_rm(out)
}

/// Inserts a state at the start, in the middle (splitting an edge) or at the
/// end; the new state's outgoing edge gets a uniform proposition.
fn add_state<R: Rng + ?Sized>(rm: &RewardMachine, rng: &mut R) -> Result<RewardMachine> {
    let mut out = rm.clone();
    let w = rm.num_states;
    out.num_states += 1;
    let p = uniform_proposition(rng);
    match rng.gen_range(0..3) {
        0 => {
            out.edges.push(new_edge(w, rm.initial, p));
            out.initial = w;
        }
        1 => {
            let e = rng.gen_range(0..rm.edges.len());
            let v = out.edges[e].dst;
            out.edges[e].dst = w;
            out.edges.push(new_edge(w, v, p));
        }
        _ => {
            out.edges.push(new_edge(rm.accepting, w, p));
            out.accepting = w;
        }
    }
    finish_rm(out)
}

/// Removes a uniformly chosen state. Removing the initial state promotes a
/// successor; removing the accepting state promotes a predecessor; removing
/// an inner state reroutes its incoming edges to one of its successors.
fn remove_state<R: Rng + ?Sized>(rm: &RewardMachine, rng: &mut R) -> Result<RewardMachine> {
    let candidates = removable_states(rm);
    let s = *candidates.choose(rng).ok_or(Error::EditNotApplicable(EditKind::RemoveState))?;
    let mut out = rm.clone();
    if s == rm.initial {
        let succ: Vec<RmState> = rm.outgoing(s).map(|(_, e)| e.dst).filter(|&v| v != rm.accepting).collect();
        out.initial = *succ.choose(rng).ok_or(Error::EditNotApplicable(EditKind::RemoveState))?;
        out.edges.retain(|e| e.src != s && e.dst != s);
    } else if s == rm.accepting {
        let pred: Vec<RmState> = rm.incoming(s).map(|(_, e)| e.src).filter(|&u| u != rm.initial).collect();
        let p = *pred.choose(rng).ok_or(Error::EditNotApplicable(EditKind::RemoveState))?;
        out.accepting = p;
        out.edges.retain(|e| e.src != p && e.src != s && e.dst != s);
    } else {
        let succ: Vec<RmState> = rm.outgoing(s).map(|(_, e)| e.dst).collect();
        let v = *succ.choose(rng).ok_or(Error::EditNotApplicable(EditKind::RemoveState))?;
        let mut edges: Vec<Edge> = Vec::new();
        for e in &rm.edges {
            if e.src == s {
                continue;
            }
            let mut e = e.clone();
            if e.dst == s {
                e.dst = v;
            }
            let clash = e.src == e.dst || edges.iter().any(|f| f.src == e.src && f.dst == e.dst);
            if !clash {
                edges.push(e);
            }
        }
        out.edges = edges;
    }
    finish_rm(out)
}

/// States whose removal leaves distinct initial and accepting states.
fn removable_states(rm: &RewardMachine) -> Vec<RmState> {
    (0..rm.num_states)
        .filter(|&s| {
            if s == rm.initial {
                rm.outgoing(s).any(|(_, e)| e.dst != rm.accepting)
            } else if s == rm.accepting {
                rm.incoming(s).any(|(_, e)| e.src != rm.initial)
            } else {
                rm.outgoing(s).next().is_some()
            }
        })
        .collect()
}

/// Layout after adding rooms and the offset of the old grid inside it,
/// for each allowed side.
fn add_room_options(layout: RoomLayout) -> Vec<(RoomLayout, usize, usize)> {
    match layout {
        RoomLayout::One => vec![(RoomLayout::Two, 0, 0), (RoomLayout::Two, 6, 0)],
        RoomLayout::Two => vec![(RoomLayout::Four, 0, 0), (RoomLayout::Four, 0, 6)],
        RoomLayout::Four => vec![(RoomLayout::Six, 0, 0), (RoomLayout::Six, 6, 0)],
        RoomLayout::Six => vec![],
    }
}

/// Smaller layouts whose window (at the given offset in the old grid)
/// keeps the agent off walls in the new grid.
fn remove_room_options(level: &Level) -> Vec<(RoomLayout, usize, usize)> {
    let candidates = match level.layout {
        RoomLayout::One => vec![],
        RoomLayout::Two => vec![(RoomLayout::One, 0, 0), (RoomLayout::One, 6, 0)],
        RoomLayout::Four => vec![(RoomLayout::Two, 0, 0), (RoomLayout::Two, 0, 6)],
        RoomLayout::Six => vec![(RoomLayout::Four, 0, 0), (RoomLayout::Four, 6, 0)],
    };
    let AgentPose { x, y, .. } = level.agent;
    candidates
        .into_iter()
        .filter(|&(l, dx, dy)| {
            x >= dx
                && y >= dy
                && x - dx < l.width()
                && y - dy < l.height()
                && l.terrain(x - dx, y - dy) != Terrain::Wall
        })
        .collect()
}

fn add_rooms<R: Rng + ?Sized>(level: &Level, rng: &mut R) -> Result<Level> {
    let &(layout, dx, dy) = add_room_options(level.layout)
        .choose(rng)
        .ok_or(Error::EditNotApplicable(EditKind::AddRooms))?;
    let a = level.agent;
    let mut out = Level::new(layout, AgentPose::new(a.x + dx, a.y + dy, a.dir));
    out.carried = level.carried;
    for (x, y, o) in level.objects() {
        out.set(x + dx, y + dy, Some(*o));
    }
    for (x, y) in layout.door_slots() {
        if out.get(x, y).is_none() {
            out.set(x, y, Some(random_door(rng)));
        }
    }
    Ok(out)
}

/// Drops the rooms away from the agent; objects there are discarded and the
/// object count is brought back into the new layout's range.
fn remove_rooms<R: Rng + ?Sized>(level: &Level, rng: &mut R) -> Result<Level> {
    let &(layout, dx, dy) = remove_room_options(level)
        .choose(rng)
        .ok_or(Error::EditNotApplicable(EditKind::RemoveRooms))?;
    let a = level.agent;
    let mut out = Level::new(layout, AgentPose::new(a.x - dx, a.y - dy, a.dir));
    out.carried = level.carried;
    for (x, y, o) in level.objects() {
        if x < dx || y < dy || x - dx >= layout.width() || y - dy >= layout.height() {
            continue;
        }
        let (nx, ny) = (x - dx, y - dy);
        if layout.terrain(nx, ny) != Terrain::Wall {
            out.set(nx, ny, Some(*o));
        }
    }
    let excess = out.object_count().saturating_sub(layout.max_objects());
    let mut removable = grid_non_doors(&out);
    removable.shuffle(rng);
    for &(x, y) in removable.iter().take(excess) {
        out.set(x, y, None);
    }
    while out.object_count() < layout.min_objects() {
        let cell = *out.free_cells().choose(rng).ok_or(Error::EditNotApplicable(EditKind::RemoveRooms))?;
        out.set(cell.0, cell.1, Some(random_non_door(rng)));
    }
    Ok(out)
}
