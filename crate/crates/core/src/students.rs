//! Students and the rollout engine.
//!
//! A student sees the full level and the machine; the built-in planner uses
//! that privileged view, while external students receive only the egocentric
//! observation and the exported machine graph.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};
use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::alphabet::{DoorState, Location, ObjectDescriptor, ObjectKind, Proposition};
use crate::error::{Error, Result};
use crate::gridworld::{Action, AgentPose, Direction, GridObject, Level, Observation, Terrain};
use crate::problem::Problem;
use crate::reward_machine::{Labeling, PolicyGraph, RewardMachine, RmState};
use crate::rng::Rng;
use crate::solvability::is_proposition_reachable;

pub const DEFAULT_HORIZON: usize = 512;
pub const DEFAULT_GAMMA: f64 = 0.99;

/// What a student may look at when choosing an action.
pub struct StepContext<'a> {
    pub level: &'a Level,
    pub rm: &'a RewardMachine,
    pub rm_state: RmState,
    pub t: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub action: Action,
    /// Estimated value of the current state, in `[0, 1]`.
    pub value: f64,
}

pub trait Student: Send {
    fn name(&self) -> &str;

    /// Called once before each episode.
    fn reset(&mut self, problem: &Problem) -> Result<()>;

    fn decide(&mut self, ctx: &StepContext<'_>, rng: &mut Rng) -> Result<Decision>;
}

fn random_action(rng: &mut Rng) -> Action {
    Action::ALL[rng.gen_range(0..Action::ALL.len())]
}

/// Uniform actions, zero value.
#[derive(Clone, Debug, Default)]
pub struct RandomStudent;

impl Student for RandomStudent {
    fn name(&self) -> &str {
        "random"
    }

    fn reset(&mut self, _: &Problem) -> Result<()> {
        Ok(())
    }

    fn decide(&mut self, _: &StepContext<'_>, rng: &mut Rng) -> Result<Decision> {
        Ok(Decision {
            action: random_action(rng),
            value: 0.0,
        })
    }
}

/// A level copy plus the actions that produced it.
#[derive(Clone)]
struct Sim {
    level: Level,
    actions: Vec<Action>,
}

impl Sim {
    fn new(level: &Level) -> Self {
        Self {
            level: level.clone(),
            actions: Vec::new(),
        }
    }

    fn act(&mut self, a: Action) {
        self.level.step_mut(a);
        self.actions.push(a);
    }

    fn pose_index(&self, p: &AgentPose) -> usize {
        (p.y * self.level.width() + p.x) * 4 + p.dir.index()
    }

    /// Cheapest turn/forward route to a pose satisfying `goal`. Closed doors,
    /// and locked ones when the matching key is carried, are opened on the way.
    fn navigate(&mut self, goal: impl Fn(&AgentPose) -> bool) -> Option<()> {
        let level = &self.level;
        let (w, h) = (level.width(), level.height());
        let n = w * h * 4;
        let mut dist = vec![usize::MAX; n];
        let mut parent: Vec<Option<(usize, AgentPose)>> = vec![None; n];
        let start = level.agent;
        let si = self.pose_index(&start);
        dist[si] = 0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((0usize, si, start)));
        let mut found = None;
        while let Some(Reverse((d, i, pose))) = heap.pop() {
            if d > dist[i] {
                continue;
            }
            if goal(&pose) {
                found = Some((i, pose));
                break;
            }
            let mut push = |next: AgentPose, cost: usize, heap: &mut BinaryHeap<_>| {
                let j = (next.y * w + next.x) * 4 + next.dir.index();
                if d + cost < dist[j] {
                    dist[j] = d + cost;
                    parent[j] = Some((i, pose));
                    heap.push(Reverse((d + cost, j, next)));
                }
            };
            push(AgentPose::new(pose.x, pose.y, pose.dir.left()), 1, &mut heap);
            push(AgentPose::new(pose.x, pose.y, pose.dir.right()), 1, &mut heap);
            if let Some((fx, fy)) = pose.front().filter(|&(x, y)| x < w && y < h) {
                if let Some(cost) = self.enter_cost(fx, fy) {
                    push(AgentPose::new(fx, fy, pose.dir), cost, &mut heap);
                }
            }
        }
        let (mut i, goal_pose) = found?;
        let mut path = vec![goal_pose];
        while let Some((pi, pp)) = parent[i] {
            path.push(pp);
            i = pi;
        }
        path.reverse();
        for win in path.windows(2) {
            let (a, b) = (win[0], win[1]);
            if b.dir == a.dir.left() && (a.x, a.y) == (b.x, b.y) {
                self.act(Action::TurnLeft);
            } else if b.dir == a.dir.right() && (a.x, a.y) == (b.x, b.y) {
                self.act(Action::TurnRight);
            } else {
                if self
                    .level
                    .front_object()
                    .is_some_and(|o| o.is_door() && o.state != Some(DoorState::Open))
                {
                    self.act(Action::Toggle);
                }
                self.act(Action::Forward);
            }
            if self.level.agent != b {
                return None;
            }
        }
        Some(())
    }

    fn enter_cost(&self, x: usize, y: usize) -> Option<usize> {
        let level = &self.level;
        match level.terrain(x, y) {
            Terrain::Wall => None,
            Terrain::Floor => level.get(x, y).is_none().then_some(1),
            Terrain::DoorSlot => {
                let door = level.get(x, y)?;
                match door.state {
                    Some(DoorState::Open) => Some(1),
                    Some(DoorState::Closed) => Some(2),
                    Some(DoorState::Locked) => level
                        .carried
                        .is_some_and(|k| k.kind == ObjectKind::Key && k.color == door.color)
                        .then_some(2),
                    None => None,
                }
            }
        }
    }

    fn face_any(&mut self, cells: &[(usize, usize)]) -> Option<(usize, usize)> {
        if cells.is_empty() {
            return None;
        }
        self.navigate(|p| p.front().is_some_and(|c| cells.contains(&c)))?;
        self.level.agent.front()
    }

    /// Drops the carried object on a free floor cell, preferring cells not
    /// next to a door so passages stay open.
    fn drop_carried(&mut self) -> Option<()> {
        if self.level.carried.is_none() {
            return Some(());
        }
        let level = &self.level;
        let free: Vec<(usize, usize)> = level.free_cells();
        let near_door = |&(x, y): &(usize, usize)| {
            Direction::ALL.iter().any(|d| {
                crate::gridworld::offset(x, y, d.delta())
                    .is_some_and(|(a, b)| level.in_bounds(a, b) && level.terrain(a, b) == Terrain::DoorSlot)
            })
        };
        let preferred: Vec<(usize, usize)> = free.iter().copied().filter(|c| !near_door(c)).collect();
        let mut trial = self.clone();
        if trial.face_any(&preferred).is_some() {
            *self = trial;
        } else {
            self.face_any(&free)?;
        }
        self.act(Action::Drop);
        self.level.carried.is_none().then_some(())
    }

    /// Picks up the object at `cell`, dropping whatever is carried first.
    fn pick_up(&mut self, cell: (usize, usize)) -> Option<()> {
        self.drop_carried()?;
        self.face_any(&[cell])?;
        self.act(Action::Pickup);
        self.level.carried.is_some().then_some(())
    }

    /// Picks up the nearest object matching `pred`.
    fn acquire(&mut self, pred: impl Fn(&GridObject) -> bool) -> Option<()> {
        if self.level.carried.is_some_and(|o| pred(&o)) {
            return Some(());
        }
        self.drop_carried()?;
        let cells: Vec<(usize, usize)> = self
            .level
            .objects()
            .filter(|(_, _, o)| !o.is_door() && pred(o))
            .map(|(x, y, _)| (x, y))
            .collect();
        self.face_any(&cells)?;
        self.act(Action::Pickup);
        self.level.carried.is_some_and(|o| pred(&o)).then_some(())
    }

    fn holds(&self, p: &Proposition) -> bool {
        self.level.scene().holds(p)
    }
}

fn shortest(options: impl IntoIterator<Item = Option<Sim>>) -> Option<Sim> {
    options.into_iter().flatten().min_by_key(|s| s.actions.len())
}

fn plan_front(start: &Sim, p: &Proposition) -> Option<Sim> {
    let d = p.first;
    let mut direct = Vec::new();
    let mut toggled = Vec::new();
    for (x, y, o) in start.level.objects() {
        if o.matches(&d) {
            direct.push((x, y));
        } else if o.is_door() && d.is_door() && d.color.is_none_or(|c| c == o.color) {
            let convertible = match (o.state, d.door_state) {
                (Some(DoorState::Closed), Some(DoorState::Open)) => true,
                (Some(DoorState::Open), Some(DoorState::Closed)) => true,
                (Some(DoorState::Locked), Some(DoorState::Open)) => start
                    .level
                    .carried
                    .is_some_and(|k| k.kind == ObjectKind::Key && k.color == o.color),
                _ => false,
            };
            if convertible {
                toggled.push((x, y));
            }
        }
    }
    let mut all = direct.clone();
    all.extend(&toggled);
    let mut sim = start.clone();
    let cell = sim.face_any(&all)?;
    if toggled.contains(&cell) && !sim.holds(p) {
        sim.act(Action::Toggle);
    }
    sim.holds(p).then_some(sim)
}

fn loose(d: &ObjectDescriptor) -> ObjectDescriptor {
    ObjectDescriptor { door_state: None, ..*d }
}

fn adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
    a.0.abs_diff(b.0) + a.1.abs_diff(b.1) == 1
}

/// Adjacent object pairs matching the two descriptors in either order.
fn matching_pairs(
    level: &Level,
    a: &ObjectDescriptor,
    b: &ObjectDescriptor,
) -> Vec<((usize, usize), (usize, usize), GridObject, GridObject)> {
    let objs: Vec<(usize, usize, GridObject)> = level.objects().map(|(x, y, o)| (x, y, *o)).collect();
    let mut pairs = Vec::new();
    for (i, &(x1, y1, o1)) in objs.iter().enumerate() {
        for &(x2, y2, o2) in &objs[i + 1..] {
            let fits = (o1.matches(a) && o2.matches(b)) || (o1.matches(b) && o2.matches(a));
            if fits && adjacent((x1, y1), (x2, y2)) && !(o1.is_door() && o2.is_door()) {
                pairs.push(((x1, y1), (x2, y2), o1, o2));
            }
        }
    }
    pairs
}

/// Finishes a `next` plan once the objects are in place: flips a door that
/// is adjacent to its partner but in the wrong state (walking through it may
/// have opened it), then walks until both objects are in view.
fn settle_next(mut sim: Sim, p: &Proposition) -> Option<Sim> {
    if sim.holds(p) {
        return Some(sim);
    }
    let (a, b) = (p.first, p.second?);
    let mut flips = Vec::new();
    for (c1, c2, o1, o2) in matching_pairs(&sim.level, &loose(&a), &loose(&b)) {
        for (cell, o, other) in [(c1, o1, o2), (c2, o2, o1)] {
            let wants = [(a, b), (b, a)]
                .into_iter()
                .find(|(mine, theirs)| o.matches(&loose(mine)) && !o.matches(mine) && other.matches(theirs));
            let Some((mine, _)) = wants else { continue };
            let flippable = matches!(
                (o.state, mine.door_state),
                (Some(DoorState::Open), Some(DoorState::Closed)) | (Some(DoorState::Closed), Some(DoorState::Open))
            );
            if flippable {
                flips.push(cell);
            }
        }
    }
    if !flips.is_empty() {
        sim.face_any(&flips)?;
        sim.act(Action::Toggle);
        if sim.holds(p) {
            return Some(sim);
        }
    }
    let pairs = matching_pairs(&sim.level, &a, &b);
    if pairs.is_empty() {
        return None;
    }
    sim.navigate(|pose| pairs.iter().any(|&(c1, c2, _, _)| pose.sees(c1.0, c1.1) && pose.sees(c2.0, c2.1)))?;
    sim.holds(p).then_some(sim)
}

fn plan_next(start: &Sim, p: &Proposition) -> Option<Sim> {
    let (a, b) = (p.first, p.second?);
    let level = &start.level;
    let mut options = vec![settle_next(start.clone(), p)];

    // Carry a movable object next to a partner.
    let mut movers: Vec<Option<(usize, usize)>> = Vec::new();
    if level.carried.is_some_and(|o| o.matches(&a) || o.matches(&b)) {
        movers.push(None);
    }
    movers.extend(
        level
            .objects()
            .filter(|(_, _, o)| !o.is_door() && (o.matches(&a) || o.matches(&b)))
            .map(|(x, y, _)| Some((x, y))),
    );
    for mover in movers {
        let mut sim = start.clone();
        if let Some(cell) = mover {
            if sim.pick_up(cell).is_none() {
                continue;
            }
        }
        let Some(x_obj) = sim.level.carried else { continue };
        let partner_desc: Vec<_> = [(a, b), (b, a)]
            .into_iter()
            .filter(|(mine, _)| x_obj.matches(mine))
            .map(|(_, other)| loose(&other))
            .collect();
        let spots: Vec<(usize, usize)> = sim
            .level
            .objects()
            .filter(|(_, _, o)| partner_desc.iter().any(|d| o.matches(d)))
            .flat_map(|(x, y, _)| {
                Direction::ALL
                    .into_iter()
                    .filter_map(move |d| crate::gridworld::offset(x, y, d.delta()))
            })
            .filter(|&(x, y)| {
                sim.level.in_bounds(x, y)
                    && sim.level.terrain(x, y) == Terrain::Floor
                    && sim.level.get(x, y).is_none()
                    && (x, y) != (sim.level.agent.x, sim.level.agent.y)
            })
            .collect();
        let mut nearest = sim.clone();
        if nearest.face_any(&spots).is_some() {
            nearest.act(Action::Drop);
            if let Some(done) = settle_next(nearest, p) {
                options.push(Some(done));
                continue;
            }
        }
        // The nearest drop can wall off a door that still has to be flipped;
        // try every spot from every side.
        for &spot in &spots {
            for dir in Direction::ALL {
                let mut alt = sim.clone();
                let goal = |pose: &AgentPose| pose.dir == dir && pose.front() == Some(spot);
                if alt.navigate(goal).is_none() {
                    continue;
                }
                alt.act(Action::Drop);
                options.push(settle_next(alt, p));
            }
        }
    }
    shortest(options)
}

fn plan_direct(start: &Sim, p: &Proposition) -> Option<Sim> {
    match p.location {
        Location::Front => plan_front(start, p),
        Location::Carrying => {
            let mut sim = start.clone();
            let d = p.first;
            sim.acquire(|o| o.matches(&d))?;
            sim.holds(p).then_some(sim)
        }
        Location::Next => plan_next(start, p),
    }
}

/// Cells the agent can stand on without moving objects or opening locks.
fn open_region(level: &Level) -> Vec<bool> {
    let (w, h) = (level.width(), level.height());
    let mut seen = vec![false; w * h];
    let mut stack = vec![(level.agent.x, level.agent.y)];
    seen[level.agent.y * w + level.agent.x] = true;
    while let Some((x, y)) = stack.pop() {
        for d in Direction::ALL {
            let Some((nx, ny)) = crate::gridworld::offset(x, y, d.delta()) else { continue };
            if nx >= w || ny >= h || seen[ny * w + nx] {
                continue;
            }
            let ok = match level.terrain(nx, ny) {
                Terrain::Wall => false,
                Terrain::Floor => level.get(nx, ny).is_none(),
                Terrain::DoorSlot => level.get(nx, ny).is_some_and(|o| o.state != Some(DoorState::Locked)),
            };
            if ok {
                seen[ny * w + nx] = true;
                stack.push((nx, ny));
            }
        }
    }
    seen
}

/// Plans for `p`, first trying directly, then after unlocking a door or
/// clearing a blocking object (up to `depth` such preparations).
fn plan_prop(start: &Sim, p: &Proposition, depth: usize) -> Option<Sim> {
    if let Some(sim) = plan_direct(start, p) {
        return Some(sim);
    }
    if depth == 0 {
        return None;
    }
    let level = &start.level;
    let region = open_region(level);
    let w = level.width();
    let touches_region = |x: usize, y: usize| {
        Direction::ALL.iter().any(|d| {
            crate::gridworld::offset(x, y, d.delta())
                .is_some_and(|(a, b)| level.in_bounds(a, b) && region[b * w + a])
        })
    };
    let mut options = Vec::new();
    for (x, y, o) in level.objects() {
        if region[y * w + x] || !touches_region(x, y) {
            continue;
        }
        let mut sim = start.clone();
        let prepared = if o.is_door() {
            if o.state != Some(DoorState::Locked) {
                continue;
            }
            let color = o.color;
            sim.acquire(|k| k.kind == ObjectKind::Key && k.color == color).and_then(|_| {
                sim.face_any(&[(x, y)])?;
                sim.act(Action::Toggle);
                (sim.level.get(x, y)?.state == Some(DoorState::Open)).then_some(())
            })
        } else {
            // Only worth clearing if something lies beyond it.
            let beyond = Direction::ALL.iter().any(|d| {
                crate::gridworld::offset(x, y, d.delta()).is_some_and(|(a, b)| {
                    level.in_bounds(a, b) && !region[b * w + a] && level.terrain(a, b) != Terrain::Wall
                })
            });
            if !beyond {
                continue;
            }
            sim.pick_up((x, y)).and_then(|_| sim.drop_carried())
        };
        if prepared.is_some() {
            options.push(plan_prop(&sim, p, depth - 1));
        }
    }
    shortest(options)
}

/// A plan to the accepting state: actions for the first edge, and the
/// estimated number of steps to finish the task, if a full plan exists.
struct ChainPlan {
    actions: Vec<Action>,
    poses: Vec<(AgentPose, Option<GridObject>)>,
    total: Option<usize>,
}

const PREP_DEPTH: usize = 2;

/// Greedy look-ahead over the machine: for each outgoing edge, plan its
/// proposition and recurse from the simulated outcome.
fn chain_cost(level: &Level, rm: &RewardMachine, u: RmState, visited: &mut Vec<RmState>) -> Option<usize> {
    if u == rm.accepting {
        return Some(0);
    }
    visited.push(u);
    let mut best: Option<usize> = None;
    for (_, e) in rm.outgoing(u) {
        if visited.contains(&e.dst) {
            continue;
        }
        let p = e.formula.positive;
        if !is_proposition_reachable(level, &p) {
            continue;
        }
        let Some(sim) = plan_prop(&Sim::new(level), &p, PREP_DEPTH) else { continue };
        if let Some(rest) = chain_cost(&sim.level, rm, e.dst, visited) {
            let total = sim.actions.len().max(1) + rest;
            best = Some(best.map_or(total, |b| b.min(total)));
        }
    }
    visited.pop();
    best
}

fn plan_chain(level: &Level, rm: &RewardMachine, u: RmState) -> Option<ChainPlan> {
    let mut complete: Option<(usize, Sim)> = None;
    let mut partial: Option<Sim> = None;
    for (_, e) in rm.outgoing(u) {
        let p = e.formula.positive;
        if !is_proposition_reachable(level, &p) {
            continue;
        }
        let Some(sim) = plan_prop(&Sim::new(level), &p, PREP_DEPTH) else { continue };
        if sim.actions.is_empty() {
            continue;
        }
        match chain_cost(&sim.level, rm, e.dst, &mut vec![u]) {
            Some(rest) => {
                let total = sim.actions.len() + rest;
                if complete.as_ref().is_none_or(|(t, _)| total < *t) {
                    complete = Some((total, sim));
                }
            }
            None => {
                if partial.as_ref().is_none_or(|s| sim.actions.len() < s.actions.len()) {
                    partial = Some(sim);
                }
            }
        }
    }
    let (total, sim) = match (complete, partial) {
        (Some((t, s)), _) => (Some(t), s),
        (None, Some(s)) => (None, s),
        (None, None) => return None,
    };
    let mut replay = level.clone();
    let poses = sim
        .actions
        .iter()
        .map(|&a| {
            replay.step_mut(a);
            (replay.agent, replay.carried)
        })
        .collect();
    Some(ChainPlan {
        actions: sim.actions,
        poses,
        total,
    })
}

/// Search-based student: plans routes to satisfy the positive proposition of
/// an outgoing edge, looking ahead to the accepting state. Negative literals
/// are ignored, so a sibling edge may occasionally fire instead.
#[derive(Clone, Debug)]
pub struct PlannerStudent {
    pub gamma: f64,
    /// Steps between replanning attempts when no plan exists.
    pub retry_interval: usize,
    plan: VecDeque<(Action, (AgentPose, Option<GridObject>))>,
    plan_state: Option<RmState>,
    remaining: Option<usize>,
    retry_at: usize,
    expected: Option<(AgentPose, Option<GridObject>)>,
}

impl Default for PlannerStudent {
    fn default() -> Self {
        Self::new(DEFAULT_GAMMA)
    }
}

impl PlannerStudent {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            retry_interval: 32,
            plan: VecDeque::new(),
            plan_state: None,
            remaining: None,
            retry_at: 0,
            expected: None,
        }
    }

    fn value(&self) -> f64 {
        self.remaining.map_or(0.0, |r| self.gamma.powi(r as i32).clamp(0.0, 1.0))
    }
}

impl Student for PlannerStudent {
    fn name(&self) -> &str {
        "planner"
    }

    fn reset(&mut self, _: &Problem) -> Result<()> {
        *self = Self {
            gamma: self.gamma,
            retry_interval: self.retry_interval,
            ..Self::new(self.gamma)
        };
        Ok(())
    }

    fn decide(&mut self, ctx: &StepContext<'_>, rng: &mut Rng) -> Result<Decision> {
        let level = ctx.level;
        let on_track = self.expected.is_none_or(|e| e == (level.agent, level.carried));
        let stale = self.plan_state != Some(ctx.rm_state) || !on_track;
        let idle = self.plan.is_empty() && ctx.t >= self.retry_at;
        if stale || idle {
            self.plan.clear();
            self.plan_state = Some(ctx.rm_state);
            self.remaining = None;
            self.expected = None;
            match plan_chain(level, ctx.rm, ctx.rm_state) {
                Some(cp) => {
                    self.remaining = cp.total;
                    self.plan = cp.actions.into_iter().zip(cp.poses).collect();
                }
                None => self.retry_at = ctx.t + self.retry_interval,
            }
        }
        let value = self.value();
        match self.plan.pop_front() {
            Some((action, expect)) => {
                self.expected = Some(expect);
                self.remaining = self.remaining.map(|r| r.saturating_sub(1));
                if self.plan.is_empty() {
                    self.retry_at = ctx.t + 1;
                }
                Ok(Decision { action, value })
            }
            None => {
                self.expected = None;
                Ok(Decision {
                    action: random_action(rng),
                    value,
                })
            }
        }
    }
}

#[derive(Serialize)]
struct ExternalQuery<'a> {
    t: usize,
    observation: &'a Observation,
    rm_graph: &'a PolicyGraph,
    rm_state: RmState,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ExternalReply {
    action: Action,
    value: f64,
}

/// A student in another process speaking newline-delimited JSON: one query
/// `{t, observation, rm_graph, rm_state}` per step, answered by
/// `{action, value}`.
pub struct ExternalStudent {
    command: Vec<String>,
    child: Option<(Child, ChildStdin, BufReader<ChildStdout>)>,
    graph: Option<PolicyGraph>,
}

impl ExternalStudent {
    pub fn new(command: Vec<String>) -> Result<Self> {
        if command.is_empty() {
            return Err(Error::Config("external student command is empty".into()));
        }
        Ok(Self {
            command,
            child: None,
            graph: None,
        })
    }

    fn ensure_child(&mut self) -> Result<&mut (Child, ChildStdin, BufReader<ChildStdout>)> {
        if self.child.is_none() {
            let mut child = Command::new(&self.command[0])
                .args(&self.command[1..])
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .spawn()
                .map_err(|e| Error::Student(format!("spawning {:?}: {e}", self.command)))?;
            let stdin = child.stdin.take().ok_or_else(|| Error::Student("no stdin".into()))?;
            let stdout = child.stdout.take().ok_or_else(|| Error::Student("no stdout".into()))?;
            self.child = Some((child, stdin, BufReader::new(stdout)));
        }
        Ok(self.child.as_mut().expect("child just spawned"))
    }
}

impl Drop for ExternalStudent {
    fn drop(&mut self) {
        if let Some((mut child, stdin, _)) = self.child.take() {
            drop(stdin);
            let _ = child.wait();
        }
    }
}

impl Student for ExternalStudent {
    fn name(&self) -> &str {
        "external"
    }

    fn reset(&mut self, problem: &Problem) -> Result<()> {
        self.graph = Some(problem.rm.export_policy_graph());
        Ok(())
    }

    fn decide(&mut self, ctx: &StepContext<'_>, _: &mut Rng) -> Result<Decision> {
        let graph = self
            .graph
            .clone()
            .unwrap_or_else(|| ctx.rm.export_policy_graph())
            .with_current(ctx.rm_state);
        let observation = ctx.level.observe();
        let query = ExternalQuery {
            t: ctx.t,
            observation: &observation,
            rm_graph: &graph,
            rm_state: ctx.rm_state,
        };
        let mut line = serde_json::to_string(&query)?;
        line.push('\n');
        let (_, stdin, stdout) = self.ensure_child()?;
        stdin
            .write_all(line.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| Error::Student(format!("writing query: {e}")))?;
        let mut reply = String::new();
        let n = stdout
            .read_line(&mut reply)
            .map_err(|e| Error::Student(format!("reading reply: {e}")))?;
        if n == 0 {
            return Err(Error::Student("student process closed its output".into()));
        }
        let r: ExternalReply =
            serde_json::from_str(reply.trim()).map_err(|e| Error::Student(format!("bad reply {reply:?}: {e}")))?;
        if !r.value.is_finite() {
            return Err(Error::Student("non-finite value".into()));
        }
        Ok(Decision {
            action: r.action,
            value: r.value.clamp(0.0, 1.0),
        })
    }
}

/// Student selection as it appears in configuration files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StudentSpec {
    Random,
    Planner {
        #[serde(default = "default_gamma")]
        gamma: f64,
    },
    External {
        command: Vec<String>,
    },
}

fn default_gamma() -> f64 {
    DEFAULT_GAMMA
}

impl Default for StudentSpec {
    fn default() -> Self {
        Self::Planner { gamma: DEFAULT_GAMMA }
    }
}

impl StudentSpec {
    pub fn build(&self) -> Result<Box<dyn Student>> {
        Ok(match self {
            Self::Random => Box::new(RandomStudent),
            Self::Planner { gamma } => {
                if !(0.0..=1.0).contains(gamma) {
                    return Err(Error::Config(format!("gamma {gamma} outside [0, 1]")));
                }
                Box::new(PlannerStudent::new(*gamma))
            }
            Self::External { command } => Box::new(ExternalStudent::new(command.clone())?),
        })
    }

    /// External students share one process and must run sequentially.
    pub fn is_parallel_safe(&self) -> bool {
        !matches!(self, Self::External { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RolloutSummary {
    pub undiscounted_return: f64,
    /// Reward from applying the initial label, before any action.
    pub initial_reward: f64,
    pub per_step_values: Vec<f64>,
    pub per_step_rewards: Vec<f64>,
    pub final_rm_state: RmState,
    pub solved: bool,
    pub length: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Machine state when the action was chosen.
    pub rm_state: RmState,
    pub action: Action,
    pub value: f64,
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    /// Pre-action observations, recorded only on request.
    pub observations: Vec<Observation>,
    pub summary: RolloutSummary,
    pub final_level: Level,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RolloutOptions {
    pub horizon: usize,
    pub record_observations: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            record_observations: false,
        }
    }
}

pub fn rollout(problem: &Problem, student: &mut dyn Student, horizon: usize, rng: &mut Rng) -> Result<Trajectory> {
    rollout_with(
        problem,
        student,
        RolloutOptions {
            horizon,
            record_observations: false,
        },
        rng,
    )
}

/// Runs one episode. The initial label is applied once before the first
/// action; afterwards the machine advances on the label of each post-action
/// state, and the episode stops at the accepting state or the horizon.
pub fn rollout_with(
    problem: &Problem,
    student: &mut dyn Student,
    opts: RolloutOptions,
    rng: &mut Rng,
) -> Result<Trajectory> {
    problem.validate()?;
    let rm = &problem.rm;
    let mut level = problem.level.clone();
    student.reset(problem)?;
    let (mut u, initial_reward) = rm.rm_step(rm.initial, &level.scene())?;
    let mut steps = Vec::new();
    let mut observations = Vec::new();
    let mut t = 0;
    while u != rm.accepting && t < opts.horizon {
        if opts.record_observations {
            observations.push(level.observe());
        }
        let d = student.decide(
            &StepContext {
                level: &level,
                rm,
                rm_state: u,
                t,
            },
            rng,
        )?;
        level.step_mut(d.action);
        let (next, reward) = rm.rm_step(u, &level.scene())?;
        steps.push(TrajectoryStep {
            rm_state: u,
            action: d.action,
            value: d.value,
            reward,
        });
        u = next;
        t += 1;
    }
    let per_step_rewards: Vec<f64> = steps.iter().map(|s| s.reward).collect();
    let summary = RolloutSummary {
        undiscounted_return: initial_reward + per_step_rewards.iter().sum::<f64>(),
        initial_reward,
        per_step_values: steps.iter().map(|s| s.value).collect(),
        per_step_rewards,
        final_rm_state: u,
        solved: u == rm.accepting,
        length: steps.len(),
    };
    Ok(Trajectory {
        steps,
        observations,
        summary,
        final_level: level,
    })
}
