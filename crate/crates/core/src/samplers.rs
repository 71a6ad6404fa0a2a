//! Random levels, sequential and random-walk reward machines, hierarchy
//! structures, and the three ways of pairing tasks with levels.

use std::collections::{BTreeSet, VecDeque};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alphabet::{
    Alphabet, Color, DoorState, Location, ObjectDescriptor, ObjectKind, PropositionMatrices,
};
use crate::error::{Error, Result};
use crate::gridworld::{AgentPose, Direction, GridObject, Level, RoomLayout};
use crate::problem::Problem;
use crate::reward_machine::{HierarchySpec, RewardKind, RewardMachine};

/// Resample budget for masked categorical draws and conditioned levels.
pub const RETRY_BUDGET: usize = 20;

fn default_rooms() -> Vec<usize> {
    vec![1, 2, 4, 6]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelSamplerConfig {
    #[serde(default = "default_rooms")]
    pub rooms: Vec<usize>,
    /// Optional inclusive override of the object-count range, intersected
    /// with each layout's own range.
    #[serde(default)]
    pub object_range: Option<(usize, usize)>,
}

impl Default for LevelSamplerConfig {
    fn default() -> Self {
        Self {
            rooms: default_rooms(),
            object_range: None,
        }
    }
}

impl LevelSamplerConfig {
    pub fn layouts(&self) -> Result<Vec<RoomLayout>> {
        if self.rooms.is_empty() {
            return Err(Error::Config("rooms must not be empty".into()));
        }
        self.rooms.iter().map(|&r| RoomLayout::from_rooms(r)).collect()
    }

    pub fn object_range_for(&self, layout: RoomLayout) -> Result<(usize, usize)> {
        let (lo, hi) = (layout.min_objects(), layout.max_objects());
        let (lo, hi) = match self.object_range {
            Some((a, b)) => (a.max(lo), b.min(hi)),
            None => (lo, hi),
        };
        if lo > hi {
            return Err(Error::Config(format!(
                "object range {:?} empty for {} rooms",
                self.object_range,
                layout.rooms()
            )));
        }
        Ok((lo, hi))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequentialRmConfig {
    #[serde(default = "one")]
    pub min_len: usize,
    #[serde(default = "five")]
    pub max_len: usize,
    #[serde(default)]
    pub reward: RewardKind,
}

fn one() -> usize {
    1
}

fn five() -> usize {
    5
}

impl Default for SequentialRmConfig {
    fn default() -> Self {
        Self {
            min_len: 1,
            max_len: 5,
            reward: RewardKind::Sparse,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Sequential,
    Dag,
    Cyclic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomWalkConfig {
    /// Inclusive range for the number of states of each machine.
    pub states: (usize, usize),
    pub structure: Structure,
    #[serde(default = "unit")]
    pub avg_connectivity: f64,
    #[serde(default = "half")]
    pub restart_prob: f64,
    #[serde(default)]
    pub max_paths: Option<u64>,
    #[serde(default = "one")]
    pub hierarchy_size: usize,
    /// Weights over ordered partitions of `hierarchy_size / 2`; uniform if absent.
    #[serde(default)]
    pub partition_weights: Option<Vec<f64>>,
    /// Weight of "no call" relative to each admissible child in call labeling.
    #[serde(default = "unit")]
    pub no_call_weight: f64,
    #[serde(default)]
    pub reward: RewardKind,
}

fn unit() -> f64 {
    1.0
}

fn half() -> f64 {
    0.5
}

impl RandomWalkConfig {
    /// The DAG setting used in the solvability tables.
    pub fn dag() -> Self {
        Self {
            states: (6, 6),
            structure: Structure::Dag,
            avg_connectivity: 1.0,
            restart_prob: 0.5,
            max_paths: Some(2),
            hierarchy_size: 1,
            partition_weights: None,
            no_call_weight: 1.0,
            reward: RewardKind::Sparse,
        }
    }

    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.states;
        if lo < 2 || lo > hi || hi > 64 {
            return Err(Error::Config(format!("invalid state range {:?}", self.states)));
        }
        if !(0.0..=1.0).contains(&self.restart_prob) {
            return Err(Error::Config("restart_prob must lie in [0, 1]".into()));
        }
        if self.avg_connectivity <= 0.0 || self.hierarchy_size == 0 {
            return Err(Error::Config("connectivity and hierarchy size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskSamplerConfig {
    Sequential(SequentialRmConfig),
    RandomWalk(RandomWalkConfig),
}

impl Default for TaskSamplerConfig {
    fn default() -> Self {
        Self::Sequential(SequentialRmConfig::default())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMode {
    #[default]
    Independent,
    LevelConditioned,
    TaskConditioned,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ProblemSamplerConfig {
    #[serde(default)]
    pub mode: SamplingMode,
    #[serde(default)]
    pub level: LevelSamplerConfig,
    #[serde(default)]
    pub task: TaskSamplerConfig,
}

impl ProblemSamplerConfig {
    /// One room, one object, one transition.
    pub fn minimal(mode: SamplingMode) -> Self {
        Self {
            mode,
            level: LevelSamplerConfig {
                rooms: vec![1],
                object_range: Some((1, 1)),
            },
            task: TaskSamplerConfig::Sequential(SequentialRmConfig {
                min_len: 1,
                max_len: 1,
                reward: RewardKind::Sparse,
            }),
        }
    }
}

/// A subset of the alphabet as a bitset over proposition indices.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PropSet {
    words: Vec<u64>,
}

impl PropSet {
    pub fn empty() -> Self {
        Self {
            words: vec![0; Alphabet::global().len().div_ceil(64)],
        }
    }

    pub fn full() -> Self {
        let n = Alphabet::global().len();
        let mut s = Self::empty();
        for i in 0..n {
            s.insert(i);
        }
        s
    }

    pub fn from_indices(idx: impl IntoIterator<Item = usize>) -> Self {
        let mut s = Self::empty();
        for i in idx {
            s.insert(i);
        }
        s
    }

    pub fn insert(&mut self, i: usize) {
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn contains(&self, i: usize) -> bool {
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn intersect(&mut self, other: &[u64]) {
        for (a, b) in self.words.iter_mut().zip(other) {
            *a &= *b;
        }
    }

    pub fn len(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            (0..64).filter(move |b| w >> b & 1 == 1).map(move |b| wi * 64 + b)
        })
    }

    /// Index of the `r`-th member in ascending order.
    pub fn nth(&self, mut r: usize) -> Option<usize> {
        for (wi, &w) in self.words.iter().enumerate() {
            let c = w.count_ones() as usize;
            if r < c {
                let mut w = w;
                for _ in 0..r {
                    w &= w - 1;
                }
                return Some(wi * 64 + w.trailing_zeros() as usize);
            }
            r -= c;
        }
        None
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        let n = self.len();
        (n > 0).then(|| self.nth(rng.gen_range(0..n)).unwrap_or(0))
    }
}

fn uniform_color<R: Rng + ?Sized>(rng: &mut R) -> Color {
    Color::ALL[rng.gen_range(0..Color::ALL.len())]
}

pub fn random_non_door<R: Rng + ?Sized>(rng: &mut R) -> GridObject {
    let kind = ObjectKind::NON_DOOR[rng.gen_range(0..3)];
    GridObject::new(kind, uniform_color(rng))
}

pub fn random_door<R: Rng + ?Sized>(rng: &mut R) -> GridObject {
    let color = uniform_color(rng);
    GridObject::door(color, DoorState::ALL[rng.gen_range(0..3)])
}

pub fn random_direction<R: Rng + ?Sized>(rng: &mut R) -> Direction {
    Direction::ALL[rng.gen_range(0..4)]
}

pub fn sample_level<R: Rng + ?Sized>(rng: &mut R, cfg: &LevelSamplerConfig) -> Result<Level> {
    let layouts = cfg.layouts()?;
    let layout = layouts[rng.gen_range(0..layouts.len())];
    let (lo, hi) = cfg.object_range_for(layout)?;
    let n = rng.gen_range(lo..=hi);
    let mut level = Level::new(layout, AgentPose::new(0, 0, Direction::North));
    let slots = layout.door_slots();
    for &(x, y) in &slots {
        level.set(x, y, Some(random_door(rng)));
    }
    let mut free = level.free_cells();
    let extra = n - slots.len();
    let (chosen, _) = free.partial_shuffle(rng, extra + 1);
    let cells = chosen.to_vec();
    for &(x, y) in &cells[..extra] {
        level.set(x, y, Some(random_non_door(rng)));
    }
    let (ax, ay) = cells[extra];
    level.agent = AgentPose::new(ax, ay, random_direction(rng));
    Ok(level)
}

/// A chain of uniform length whose labels are drawn with the same masks as
/// random-walk machines, so no edge is implied by the one before it.
pub fn sample_sequential_rm<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &SequentialRmConfig,
    allowed: Option<&PropSet>,
) -> Result<RewardMachine> {
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len {
        return Err(Error::Config(format!(
            "invalid length range [{}, {}]",
            cfg.min_len, cfg.max_len
        )));
    }
    if allowed.is_some_and(PropSet::is_empty) {
        return Err(Error::Config("allowed proposition set is empty".into()));
    }
    let len = rng.gen_range(cfg.min_len..=cfg.max_len);
    let graph = RmGraph {
        num_states: len + 1,
        initial: 0,
        accepting: len,
        edges: (0..len).map(|i| (i, i + 1)).collect(),
    };
    let full;
    let allowed = match allowed {
        Some(a) => a,
        None => {
            full = PropSet::full();
            &full
        }
    };
    let matrices = Alphabet::global().matrices();
    for _ in 0..RETRY_BUDGET {
        if let Ok(rm) = label_rm_propositions(&graph, rng, allowed, matrices, cfg.reward) {
            return Ok(rm);
        }
    }
    Err(Error::SamplingExhausted {
        attempts: RETRY_BUDGET,
        reason: format!("no non-tautological chain of length {len} over the allowed set"),
    })
}

/// Ordered integer partitions (compositions) of `n`, in lexicographic order.
pub fn ordered_partitions(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for first in 1..=n {
        for rest in ordered_partitions(n - first) {
            let mut p = vec![first];
            p.extend(rest);
            out.push(p);
        }
    }
    out
}

/// Parent array of a tree over `m` machines. A partition of `m / 2` gives the
/// child counts of the first internal nodes; nodes are attached in creation
/// order and any remaining nodes become leaves of those internal nodes in
/// round-robin order, so at most `m / 2` nodes are internal.
pub fn sample_hierarchy_structure<R: Rng + ?Sized>(
    rng: &mut R,
    m: usize,
    weights: Option<&[f64]>,
) -> Result<Vec<Option<usize>>> {
    if m == 0 {
        return Err(Error::Config("hierarchy needs at least one machine".into()));
    }
    let parts = ordered_partitions(m / 2);
    let weights: Vec<f64> = match weights {
        Some(w) if w.len() != parts.len() => {
            return Err(Error::Config(format!(
                "{} partition weights given, {} partitions exist",
                w.len(),
                parts.len()
            )))
        }
        Some(w) => w.to_vec(),
        None => vec![1.0; parts.len()],
    };
    let dist = rand::distributions::WeightedIndex::new(&weights)
        .map_err(|e| Error::Config(format!("partition weights: {e}")))?;
    let part = &parts[rand::distributions::Distribution::sample(&dist, rng)];
    let mut parent = vec![None; m];
    let mut next = 1;
    for (i, &count) in part.iter().enumerate() {
        for _ in 0..count {
            if next < m {
                parent[next] = Some(i);
                next += 1;
            }
        }
    }
    let internal = part.len().max(1);
    for (k, node) in (next..m).enumerate() {
        parent[node] = Some(k % internal);
    }
    Ok(parent)
}

/// An unlabeled machine graph.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RmGraph {
    pub num_states: usize,
    pub initial: usize,
    pub accepting: usize,
    pub edges: Vec<(usize, usize)>,
}

impl RmGraph {
    fn reach(&self, start: usize, forward: bool) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        seen[start] = true;
        let mut stack = vec![start];
        while let Some(u) = stack.pop() {
            for &(a, b) in &self.edges {
                let (from, to) = if forward { (a, b) } else { (b, a) };
                if from == u && !seen[to] {
                    seen[to] = true;
                    stack.push(to);
                }
            }
        }
        seen
    }

    /// Number of simple initial-to-accepting paths.
    pub fn count_paths(&self) -> u64 {
        fn dfs(g: &RmGraph, u: usize, on: &mut Vec<bool>) -> u64 {
            if u == g.accepting {
                return 1;
            }
            on[u] = true;
            let mut total = 0;
            for &(a, b) in &g.edges {
                if a == u && !on[b] {
                    total += dfs(g, b, on);
                }
            }
            on[u] = false;
            total
        }
        dfs(self, self.initial, &mut vec![false; self.num_states])
    }

    /// Keeps states on some initial-to-accepting path, renumbered in order.
    pub fn pruned(&self) -> Option<RmGraph> {
        let fwd = self.reach(self.initial, true);
        if !fwd[self.accepting] {
            return None;
        }
        let bwd = self.reach(self.accepting, false);
        let mut remap = vec![usize::MAX; self.num_states];
        let mut n = 0;
        for s in 0..self.num_states {
            if fwd[s] && bwd[s] {
                remap[s] = n;
                n += 1;
            }
        }
        let mut edges: Vec<(usize, usize)> = self
            .edges
            .iter()
            .filter(|&&(a, b)| remap[a] != usize::MAX && remap[b] != usize::MAX && a != self.accepting)
            .map(|&(a, b)| (remap[a], remap[b]))
            .collect();
        edges.sort_unstable();
        edges.dedup();
        Some(RmGraph {
            num_states: n,
            initial: remap[self.initial],
            accepting: remap[self.accepting],
            edges,
        })
    }
}

/// Samples a machine graph as the union of random walks over a random
/// right-stochastic matrix restricted to the structure's mask.
pub fn sample_rw_structure<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomWalkConfig,
    is_root: bool,
) -> Result<RmGraph> {
    cfg.validate()?;
    for _ in 0..RETRY_BUDGET {
        let n = rng.gen_range(cfg.states.0..=cfg.states.1);
        let acc = n - 1;
        let admissible = |i: usize, j: usize| -> bool {
            match cfg.structure {
                Structure::Sequential => j == i + 1,
                Structure::Dag => j > i,
                Structure::Cyclic => j != i,
            }
        };
        let mut m = vec![vec![0.0f64; n]; n];
        for (i, row) in m.iter_mut().enumerate() {
            if i == acc {
                continue;
            }
            for (j, w) in row.iter_mut().enumerate() {
                if admissible(i, j) {
                    *w = rng.gen::<f64>() + f64::MIN_POSITIVE;
                }
            }
        }
        if !is_root && n > 2 {
            m[0] = vec![0.0; n];
            m[0][1] = 1.0;
        }
        let walk_len = ((cfg.avg_connectivity * n as f64).round() as usize).max(1);
        let mut edges: BTreeSet<(usize, usize)> = BTreeSet::new();
        for _ in 0..64 {
            let mut candidate = edges.clone();
            let mut s = 0;
            for _ in 0..walk_len {
                if s == acc {
                    break;
                }
                let total: f64 = m[s].iter().sum();
                let mut r = rng.gen::<f64>() * total;
                let mut t = acc;
                for (j, &w) in m[s].iter().enumerate() {
                    if w > 0.0 {
                        t = j;
                        if r < w {
                            break;
                        }
                        r -= w;
                    }
                }
                candidate.insert((s, t));
                s = t;
            }
            let graph = RmGraph {
                num_states: n,
                initial: 0,
                accepting: acc,
                edges: candidate.iter().copied().collect(),
            };
            if let Some(cap) = cfg.max_paths {
                if graph.count_paths() > cap {
                    break;
                }
            }
            edges = candidate;
            if !rng.gen_bool(cfg.restart_prob) {
                break;
            }
        }
        let graph = RmGraph {
            num_states: n,
            initial: 0,
            accepting: acc,
            edges: edges.into_iter().collect(),
        };
        if let Some(g) = graph.pruned() {
            if g.num_states >= 2 {
                return Ok(g);
            }
        }
    }
    Err(Error::SamplingExhausted {
        attempts: RETRY_BUDGET,
        reason: "no random walk reached the accepting state".into(),
    })
}

fn processing_order(g: &RmGraph) -> Vec<usize> {
    // Topological when acyclic, otherwise breadth-first from the initial state.
    let mut indeg = vec![0usize; g.num_states];
    for &(_, b) in &g.edges {
        indeg[b] += 1;
    }
    let mut queue: VecDeque<usize> = (0..g.num_states).filter(|&s| indeg[s] == 0).collect();
    let mut order = Vec::new();
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(a, b) in &g.edges {
            if a == u {
                indeg[b] -= 1;
                if indeg[b] == 0 {
                    queue.push_back(b);
                }
            }
        }
    }
    if order.len() == g.num_states {
        return order;
    }
    let mut seen = vec![false; g.num_states];
    let mut order = Vec::new();
    let mut queue = VecDeque::from([g.initial]);
    seen[g.initial] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(a, b) in &g.edges {
            if a == u && !seen[b] {
                seen[b] = true;
                queue.push_back(b);
            }
        }
    }
    order.extend((0..g.num_states).filter(|&s| !seen[s]));
    order
}

/// Assigns a positive proposition to every edge so that no edge is implied by
/// an edge entering its source (no tautology) and no two siblings imply one
/// another (determinism), then adds sibling negations.
pub fn label_rm_propositions<R: Rng + ?Sized>(
    graph: &RmGraph,
    rng: &mut R,
    allowed: &PropSet,
    matrices: &PropositionMatrices,
    reward: RewardKind,
) -> Result<RewardMachine> {
    let alphabet = Alphabet::global();
    let mut labels: Vec<Option<usize>> = vec![None; graph.edges.len()];
    for u in processing_order(graph) {
        let mut out: Vec<usize> = (0..graph.edges.len()).filter(|&e| graph.edges[e].0 == u).collect();
        out.shuffle(rng);
        for e in out {
            let (src, dst) = graph.edges[e];
            let mut mask = allowed.clone();
            for (f, &(a, b)) in graph.edges.iter().enumerate() {
                let Some(k) = labels[f] else { continue };
                if b == src {
                    mask.intersect(matrices.not_implied_by(k));
                }
                if a == dst {
                    mask.intersect(matrices.not_implying(k));
                }
                if a == src && f != e {
                    mask.intersect(matrices.not_implied_by(k));
                    mask.intersect(matrices.not_implying(k));
                }
            }
            let Some(choice) = mask.choose(rng) else {
                return Err(Error::SamplingExhausted {
                    attempts: 1,
                    reason: format!("no admissible proposition for edge {src}->{dst}"),
                });
            };
            labels[e] = Some(choice);
        }
    }
    let triples: Vec<_> = graph
        .edges
        .iter()
        .zip(&labels)
        .map(|(&(a, b), l)| (a, b, alphabet.get(l.unwrap_or(0))))
        .collect();
    let rm = RewardMachine::from_positive_edges(graph.num_states, graph.initial, graph.accepting, &triples);
    rm.assign_rewards(reward)
}

/// Gives each edge of each machine either no call or a call to a child whose
/// single initial proposition is compatible with the edge's proposition.
pub fn label_rm_calls<R: Rng + ?Sized>(
    hrm: &HierarchySpec,
    rng: &mut R,
    matrices: &PropositionMatrices,
    no_call_weight: f64,
) -> HierarchySpec {
    let alphabet = Alphabet::global();
    let initial_prop = |j: usize| -> Option<usize> {
        let rm = &hrm.rms[j];
        rm.outgoing(rm.initial)
            .next()
            .and_then(|(_, e)| alphabet.index_of(&e.formula.positive))
    };
    let mut out = hrm.clone();
    for (i, rm) in hrm.rms.iter().enumerate() {
        let children = hrm.children(i);
        out.calls[i] = rm
            .edges
            .iter()
            .map(|e| {
                let Some(pi) = alphabet.index_of(&e.formula.positive) else {
                    return None;
                };
                let admissible: Vec<usize> = children
                    .iter()
                    .copied()
                    .filter(|&c| initial_prop(c).is_some_and(|pc| matrices.k(pi, pc)))
                    .collect();
                let total = no_call_weight + admissible.len() as f64;
                if admissible.is_empty() || total <= 0.0 {
                    return None;
                }
                let r = rng.gen::<f64>() * total;
                if r < no_call_weight {
                    None
                } else {
                    let k = ((r - no_call_weight) as usize).min(admissible.len() - 1);
                    Some(admissible[k])
                }
            })
            .collect();
    }
    out
}

fn sample_labeled_rw<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomWalkConfig,
    is_root: bool,
    allowed: &PropSet,
) -> Result<RewardMachine> {
    let matrices = Alphabet::global().matrices();
    let mut last = None;
    for _ in 0..RETRY_BUDGET {
        let graph = sample_rw_structure(rng, cfg, is_root)?;
        match label_rm_propositions(&graph, rng, allowed, matrices, cfg.reward) {
            Ok(rm) => return Ok(rm),
            Err(e) => last = Some(e),
        }
    }
    Err(Error::SamplingExhausted {
        attempts: RETRY_BUDGET,
        reason: last.map_or_else(String::new, |e| e.to_string()),
    })
}

pub fn sample_hierarchy<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &RandomWalkConfig,
    allowed: Option<&PropSet>,
) -> Result<HierarchySpec> {
    let full;
    let allowed = match allowed {
        Some(a) => a,
        None => {
            full = PropSet::full();
            &full
        }
    };
    let parent = sample_hierarchy_structure(rng, cfg.hierarchy_size, cfg.partition_weights.as_deref())?;
    let rms = (0..parent.len())
        .map(|i| sample_labeled_rw(rng, cfg, i == 0, allowed))
        .collect::<Result<Vec<_>>>()?;
    let calls = rms.iter().map(|rm| vec![None; rm.edges.len()]).collect();
    let hrm = HierarchySpec { parent, rms, calls };
    Ok(label_rm_calls(&hrm, rng, Alphabet::global().matrices(), cfg.no_call_weight))
}

pub fn sample_task<R: Rng + ?Sized>(
    rng: &mut R,
    cfg: &TaskSamplerConfig,
    allowed: Option<&PropSet>,
) -> Result<RewardMachine> {
    match cfg {
        TaskSamplerConfig::Sequential(c) => sample_sequential_rm(rng, c, allowed),
        TaskSamplerConfig::RandomWalk(c) => {
            let h = sample_hierarchy(rng, c, allowed)?;
            Ok(h.rms.into_iter().next().expect("hierarchy has a root"))
        }
    }
}

fn descriptor_table() -> &'static (Vec<ObjectDescriptor>, Vec<(usize, Option<usize>)>) {
    static TABLE: OnceLock<(Vec<ObjectDescriptor>, Vec<(usize, Option<usize>)>)> = OnceLock::new();
    TABLE.get_or_init(|| {
        let descs = ObjectDescriptor::all();
        let id = |d: &ObjectDescriptor| descs.iter().position(|x| x == d).unwrap_or(0);
        let props = Alphabet::global()
            .propositions()
            .iter()
            .map(|p| (id(&p.first), p.second.as_ref().map(id)))
            .collect();
        (descs, props)
    })
}

/// Propositions whose descriptors can be instantiated by objects of the
/// level in their current state; next needs two distinct objects.
pub fn allowed_propositions(level: &Level) -> PropSet {
    let (descs, props) = descriptor_table();
    let objects: Vec<GridObject> = level
        .objects()
        .map(|(_, _, o)| *o)
        .chain(level.carried)
        .collect();
    let matches: Vec<u32> = descs
        .iter()
        .map(|d| {
            objects
                .iter()
                .enumerate()
                .filter(|(_, o)| o.matches(d))
                .fold(0u32, |acc, (i, _)| acc | 1 << i)
        })
        .collect();
    let alphabet = Alphabet::global();
    let mut set = PropSet::empty();
    for (i, &(a, b)) in props.iter().enumerate() {
        let ma = matches[a];
        let ok = match (alphabet.get(i).location, b) {
            (Location::Next, Some(b)) => {
                let mb = matches[b];
                ma != 0 && mb != 0 && (ma | mb).count_ones() >= 2
            }
            (Location::Carrying, _) => ma != 0 && !descs[a].is_door(),
            _ => ma != 0,
        };
        if ok {
            set.insert(i);
        }
    }
    set
}

fn instantiate<R: Rng + ?Sized>(rng: &mut R, d: &ObjectDescriptor) -> GridObject {
    GridObject {
        kind: d.kind,
        color: d.color.unwrap_or_else(|| uniform_color(rng)),
        state: if d.is_door() {
            Some(d.door_state.unwrap_or_else(|| DoorState::ALL[rng.gen_range(0..3)]))
        } else {
            None
        },
    }
}

/// Edits `level` so that each positive proposition of `rm` has matching
/// objects. Returns `None` if the level cannot host them.
fn inject_task_objects<R: Rng + ?Sized>(rng: &mut R, level: &mut Level, rm: &RewardMachine) -> Option<()> {
    let mut reserved: Vec<(usize, usize)> = Vec::new();
    let max = level.layout.max_objects();
    for p in rm.propositions() {
        let mut used: Vec<(usize, usize)> = Vec::new();
        for d in p.descriptors() {
            let existing = level
                .objects()
                .find(|&(x, y, o)| o.matches(d) && !used.contains(&(x, y)))
                .map(|(x, y, _)| (x, y));
            let cell = match existing {
                Some(c) => c,
                None => {
                    let spare = level
                        .objects()
                        .filter(|&(x, y, o)| {
                            o.is_door() == d.is_door()
                                && !reserved.contains(&(x, y))
                                && !used.contains(&(x, y))
                        })
                        .map(|(x, y, _)| (x, y))
                        .collect::<Vec<_>>();
                    let cell = if let Some(&c) = spare.choose(rng) {
                        c
                    } else if !d.is_door() && level.object_count() < max {
                        *level.free_cells().choose(rng)?
                    } else {
                        return None;
                    };
                    let mut obj = instantiate(rng, d);
                    if d.is_door() {
                        let old = level.get(cell.0, cell.1).copied()?;
                        obj.color = d.color.unwrap_or(old.color);
                        obj.state = Some(d.door_state.or(old.state).unwrap_or(DoorState::Closed));
                    }
                    level.set(cell.0, cell.1, Some(obj));
                    cell
                }
            };
            used.push(cell);
        }
        reserved.extend(used);
    }
    Some(())
}

pub fn sample_problem<R: Rng + ?Sized>(rng: &mut R, cfg: &ProblemSamplerConfig) -> Result<Problem> {
    let task_seed: u64 = rng.gen();
    let level_seed: u64 = rng.gen();
    let mut task_rng = crate::rng::seeded_rng(task_seed);
    let mut level_rng = crate::rng::seeded_rng(level_seed);
    match cfg.mode {
        SamplingMode::Independent => {
            let level = sample_level(&mut level_rng, &cfg.level)?;
            let rm = sample_task(&mut task_rng, &cfg.task, None)?;
            Ok(Problem::new(rm, level))
        }
        SamplingMode::LevelConditioned => {
            let mut last = None;
            for _ in 0..RETRY_BUDGET {
                let level = sample_level(&mut level_rng, &cfg.level)?;
                let allowed = allowed_propositions(&level);
                match sample_task(&mut task_rng, &cfg.task, Some(&allowed)) {
                    Ok(rm) => return Ok(Problem::new(rm, level)),
                    Err(e @ Error::SamplingExhausted { .. }) => last = Some(e),
                    Err(e) => return Err(e),
                }
            }
            Err(last.unwrap_or(Error::Empty))
        }
        SamplingMode::TaskConditioned => {
            let rm = sample_task(&mut task_rng, &cfg.task, None)?;
            for _ in 0..RETRY_BUDGET {
                let mut level = sample_level(&mut level_rng, &cfg.level)?;
                if inject_task_objects(&mut level_rng, &mut level, &rm).is_some() {
                    return Ok(Problem::new(rm, level));
                }
            }
            Err(Error::SamplingExhausted {
                attempts: RETRY_BUDGET,
                reason: "no sampled level could host the task's objects".into(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alphabet::Proposition;
    use crate::rng::seeded_rng;

    #[test]
    fn partitions_of_small_numbers() {
        assert_eq!(ordered_partitions(0), vec![Vec::<usize>::new()]);
        assert_eq!(ordered_partitions(2), vec![vec![1, 1], vec![2]]);
        assert_eq!(ordered_partitions(4).len(), 8);
    }

    #[test]
    fn hierarchy_internal_node_bound() {
        let mut rng = seeded_rng(3);
        for m in 1..10 {
            for _ in 0..50 {
                let parent = sample_hierarchy_structure(&mut rng, m, None).unwrap();
                assert_eq!(parent.len(), m);
                assert_eq!(parent[0], None);
                let internal: BTreeSet<usize> = parent.iter().flatten().copied().collect();
                assert!(internal.len() <= (m / 2).max(0) || m == 1);
                for (i, p) in parent.iter().enumerate().skip(1) {
                    assert!(p.unwrap() < i);
                }
            }
        }
        assert!(sample_hierarchy_structure(&mut rng, 5, Some(&[1.0])).is_err());
    }

    #[test]
    fn sequential_structure_is_a_chain() {
        let cfg = RandomWalkConfig {
            states: (3, 3),
            structure: Structure::Sequential,
            ..RandomWalkConfig::dag()
        };
        let g = sample_rw_structure(&mut seeded_rng(1), &cfg, true).unwrap();
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
    }

    #[test]
    fn tautology_is_masked() {
        let alphabet = Alphabet::global();
        let graph = RmGraph {
            num_states: 3,
            initial: 0,
            accepting: 2,
            edges: vec![(0, 1), (1, 2)],
        };
        let ball_blue = alphabet.index_of(&"front_ball_blue".parse().unwrap()).unwrap();
        let ball = alphabet.index_of(&"front_ball".parse().unwrap()).unwrap();
        let allowed = PropSet::from_indices([ball_blue, ball]);
        let mut rng = seeded_rng(0);
        for _ in 0..20 {
            match label_rm_propositions(&graph, &mut rng, &allowed, alphabet.matrices(), RewardKind::Sparse) {
                Ok(rm) => {
                    let pos: Vec<Proposition> = rm.propositions().copied().collect();
                    assert!(!crate::alphabet::implies(&pos[0], &pos[1]), "{pos:?}");
                }
                Err(_) => continue,
            }
        }
    }

    #[test]
    fn siblings_never_nest() {
        let alphabet = Alphabet::global();
        let graph = RmGraph {
            num_states: 3,
            initial: 0,
            accepting: 2,
            edges: vec![(0, 1), (0, 2), (1, 2)],
        };
        let mut rng = seeded_rng(5);
        for _ in 0..200 {
            let rm = label_rm_propositions(&graph, &mut rng, &PropSet::full(), alphabet.matrices(), RewardKind::Sparse)
                .unwrap();
            assert!(rm.check_determinism());
            let a = rm.edges[0].formula.positive;
            let b = rm.edges[1].formula.positive;
            assert!(!crate::alphabet::implies(&a, &b) && !crate::alphabet::implies(&b, &a));
        }
    }

    #[test]
    fn level_conditioned_on_blue_ball() {
        let mut level = Level::new(RoomLayout::One, AgentPose::new(3, 3, Direction::North));
        level.set(2, 2, Some(GridObject::new(ObjectKind::Ball, Color::Blue)));
        let allowed = allowed_propositions(&level);
        let alphabet = Alphabet::global();
        let names: Vec<String> = allowed.iter().map(|i| alphabet.get(i).to_string()).collect();
        assert_eq!(
            names,
            vec!["front_ball", "front_ball_blue", "carrying_ball", "carrying_ball_blue"]
        );
    }

    #[test]
    fn task_conditioned_hosts_objects() {
        let cfg = ProblemSamplerConfig {
            mode: SamplingMode::TaskConditioned,
            ..Default::default()
        };
        let mut rng = seeded_rng(11);
        for _ in 0..200 {
            let problem = sample_problem(&mut rng, &cfg).unwrap();
            problem.validate().unwrap();
            let allowed = allowed_propositions(&problem.level);
            for p in problem.rm.propositions() {
                let i = Alphabet::global().index_of(p).unwrap();
                assert!(allowed.contains(i), "{p} missing in\n{}", problem.level.render_ascii());
            }
        }
    }
}
