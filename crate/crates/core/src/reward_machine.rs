//! Reward machines: finite-state tasks whose edges are labeled with formulas
//! over the proposition alphabet.

use std::collections::{BTreeSet, HashSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::alphabet::{decompose_literal, implies, Literal, LiteralFeatures, Proposition};
use crate::error::{Error, Result};

/// Index of a state in a reward machine.
pub type RmState = usize;

/// Anything that can answer whether a proposition currently holds.
pub trait Labeling {
    fn holds(&self, p: &Proposition) -> bool;
}

impl Labeling for [Proposition] {
    fn holds(&self, p: &Proposition) -> bool {
        self.iter().any(|l| implies(l, p))
    }
}

impl Labeling for Vec<Proposition> {
    fn holds(&self, p: &Proposition) -> bool {
        self.as_slice().holds(p)
    }
}

impl Labeling for BTreeSet<Proposition> {
    fn holds(&self, p: &Proposition) -> bool {
        self.contains(p) || self.iter().any(|l| implies(l, p))
    }
}

impl Labeling for HashSet<Proposition> {
    fn holds(&self, p: &Proposition) -> bool {
        self.contains(p) || self.iter().any(|l| implies(l, p))
    }
}

/// A positive proposition conjoined with the negations of its siblings.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Formula {
    pub positive: Proposition,
    pub negatives: Vec<Proposition>,
}

impl Formula {
    pub fn new(positive: Proposition) -> Self {
        Self {
            positive,
            negatives: Vec::new(),
        }
    }

    pub fn satisfied_by<L: Labeling + ?Sized>(&self, label: &L) -> bool {
        label.holds(&self.positive) && !self.negatives.iter().any(|n| label.holds(n))
    }

    pub fn literals(&self) -> impl Iterator<Item = Literal> + '_ {
        std::iter::once(Literal::positive(self.positive))
            .chain(self.negatives.iter().map(|&n| Literal::negative(n)))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: RmState,
    pub dst: RmState,
    pub formula: Formula,
    pub reward: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    Sparse,
    Stepwise,
    DistanceShaped,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathMetrics {
    pub num_paths: u64,
    pub avg_path_length: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RewardMachine {
    pub num_states: usize,
    pub initial: RmState,
    pub accepting: RmState,
    pub edges: Vec<Edge>,
}

impl RewardMachine {
    /// A chain `0 -> 1 -> ... -> n` over the given propositions with sparse rewards.
    pub fn sequential(props: &[Proposition]) -> Self {
        let n = props.len();
        let edges = props
            .iter()
            .enumerate()
            .map(|(i, &p)| Edge {
                src: i,
                dst: i + 1,
                formula: Formula::new(p),
                reward: if i + 1 == n { 1.0 } else { 0.0 },
            })
            .collect();
        Self {
            num_states: n + 1,
            initial: 0,
            accepting: n,
            edges,
        }
    }

    /// Builds an RM from `(src, dst, positive)` triples, deriving sibling
    /// negations and sparse rewards.
    pub fn from_positive_edges(
        num_states: usize,
        initial: RmState,
        accepting: RmState,
        edges: &[(RmState, RmState, Proposition)],
    ) -> Self {
        let mut rm = Self {
            num_states,
            initial,
            accepting,
            edges: edges
                .iter()
                .map(|&(src, dst, p)| Edge {
                    src,
                    dst,
                    formula: Formula::new(p),
                    reward: 0.0,
                })
                .collect(),
        };
        rm.recompute_negations();
        rm.make_sparse();
        rm
    }

    pub fn outgoing(&self, u: RmState) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.src == u)
    }

    pub fn incoming(&self, v: RmState) -> impl Iterator<Item = (usize, &Edge)> {
        self.edges.iter().enumerate().filter(move |(_, e)| e.dst == v)
    }

    pub fn edge_between(&self, u: RmState, v: RmState) -> Option<usize> {
        self.edges.iter().position(|e| e.src == u && e.dst == v)
    }

    /// Advances on `label`. Unmatched labels keep the state with reward 0.
    pub fn rm_step<L: Labeling + ?Sized>(&self, u: RmState, label: &L) -> Result<(RmState, f64)> {
        if u >= self.num_states {
            return Err(Error::InvalidRm(format!("state {u} out of range")));
        }
        let mut fired: Option<&Edge> = None;
        for (_, e) in self.outgoing(u) {
            if e.formula.satisfied_by(label) {
                if fired.is_some() {
                    return Err(Error::InvalidRm(format!(
                        "nondeterministic: several edges out of {u} fire"
                    )));
                }
                fired = Some(e);
            }
        }
        Ok(fired.map_or((u, 0.0), |e| (e.dst, e.reward)))
    }

    /// Sets every edge's negatives to the positives of its siblings.
    pub fn recompute_negations(&mut self) {
        let positives: Vec<(RmState, Proposition)> =
            self.edges.iter().map(|e| (e.src, e.formula.positive)).collect();
        for (i, e) in self.edges.iter_mut().enumerate() {
            let mut negs: Vec<Proposition> = positives
                .iter()
                .enumerate()
                .filter(|&(j, &(src, _))| j != i && src == e.src)
                .map(|(_, &(_, p))| p)
                .collect();
            negs.sort();
            negs.dedup();
            e.formula.negatives = negs;
        }
    }

    pub fn make_sparse(&mut self) {
        let acc = self.accepting;
        for e in &mut self.edges {
            e.reward = if e.dst == acc { 1.0 } else { 0.0 };
        }
    }

    pub fn assign_rewards(&self, kind: RewardKind) -> Result<RewardMachine> {
        let mut rm = self.clone();
        match kind {
            RewardKind::Sparse => rm.make_sparse(),
            RewardKind::Stepwise => {
                for e in &mut rm.edges {
                    e.reward = if e.src != e.dst { 1.0 } else { 0.0 };
                }
            }
            RewardKind::DistanceShaped => {
                let d = self.distances_to_accepting();
                let d0 = d[self.initial].ok_or_else(|| {
                    Error::InvalidRm("accepting state unreachable from initial".into())
                })?;
                let phi = |x: RmState| -> Result<f64> {
                    let dx = d[x].ok_or_else(|| {
                        Error::InvalidRm(format!("accepting state unreachable from {x}"))
                    })?;
                    Ok(1.0 - dx as f64 / d0 as f64)
                };
                for e in &mut rm.edges {
                    e.reward = phi(e.dst)? - phi(e.src)?;
                }
            }
        }
        Ok(rm)
    }

    /// Shortest edge distance from each state to the accepting state.
    pub fn distances_to_accepting(&self) -> Vec<Option<usize>> {
        let mut dist = vec![None; self.num_states];
        let mut queue = VecDeque::new();
        dist[self.accepting] = Some(0);
        queue.push_back(self.accepting);
        while let Some(v) = queue.pop_front() {
            let dv = dist[v].unwrap_or(0);
            for (_, e) in self.incoming(v) {
                if dist[e.src].is_none() {
                    dist[e.src] = Some(dv + 1);
                    queue.push_back(e.src);
                }
            }
        }
        dist
    }

    pub fn check_determinism(&self) -> bool {
        for u in 0..self.num_states {
            let sib: Vec<&Edge> = self.outgoing(u).map(|(_, e)| e).collect();
            let mut seen = HashSet::new();
            for e in &sib {
                if !seen.insert(e.formula.positive) {
                    return false;
                }
            }
            for (i, e) in sib.iter().enumerate() {
                let expected: BTreeSet<Proposition> = sib
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| s.formula.positive)
                    .collect();
                let actual: BTreeSet<Proposition> = e.formula.negatives.iter().copied().collect();
                if expected != actual {
                    return false;
                }
            }
        }
        true
    }

    /// All structural invariants of a sampled or edited machine.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidRm(m));
        let n = self.num_states;
        if n < 2 {
            return bad(format!("{n} states"));
        }
        if self.initial >= n || self.accepting >= n || self.initial == self.accepting {
            return bad("bad initial/accepting state".into());
        }
        let mut pairs = HashSet::new();
        for e in &self.edges {
            if e.src >= n || e.dst >= n {
                return bad(format!("edge {}->{} out of range", e.src, e.dst));
            }
            if e.src == e.dst {
                return bad(format!("explicit self-loop on {}", e.src));
            }
            if e.src == self.accepting {
                return bad("accepting state has outgoing edges".into());
            }
            if !pairs.insert((e.src, e.dst)) {
                return bad(format!("duplicate edge {}->{}", e.src, e.dst));
            }
            if !e.formula.positive.is_well_formed() {
                return bad(format!("positive {} not in alphabet", e.formula.positive));
            }
            if e.formula.negatives.contains(&e.formula.positive) {
                return bad("positive proposition among negatives".into());
            }
            if !e.reward.is_finite() {
                return bad("non-finite reward".into());
            }
        }
        if !self.check_determinism() {
            return bad("not deterministic".into());
        }
        let fwd = self.reachable_from(self.initial);
        let bwd = self.coreachable_to(self.accepting);
        if (0..n).any(|s| !(fwd[s] && bwd[s])) {
            return bad("state not on any initial-to-accepting path".into());
        }
        Ok(())
    }

    pub fn reachable_from(&self, start: RmState) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(u) = stack.pop() {
            for (_, e) in self.outgoing(u) {
                if !seen[e.dst] {
                    seen[e.dst] = true;
                    stack.push(e.dst);
                }
            }
        }
        seen
    }

    pub fn coreachable_to(&self, target: RmState) -> Vec<bool> {
        let mut seen = vec![false; self.num_states];
        let mut stack = vec![target];
        seen[target] = true;
        while let Some(v) = stack.pop() {
            for (_, e) in self.incoming(v) {
                if !seen[e.src] {
                    seen[e.src] = true;
                    stack.push(e.src);
                }
            }
        }
        seen
    }

    /// Drops states that are not on some initial-to-accepting path and
    /// renumbers the rest, preserving relative order.
    pub fn prune(&self) -> Result<RewardMachine> {
        let fwd = self.reachable_from(self.initial);
        let bwd = self.coreachable_to(self.accepting);
        if !fwd[self.accepting] {
            return Err(Error::InvalidRm("accepting state unreachable".into()));
        }
        let keep: Vec<bool> = (0..self.num_states).map(|s| fwd[s] && bwd[s]).collect();
        let mut remap = vec![usize::MAX; self.num_states];
        let mut next = 0;
        for s in 0..self.num_states {
            if keep[s] {
                remap[s] = next;
                next += 1;
            }
        }
        let edges = self
            .edges
            .iter()
            .filter(|e| keep[e.src] && keep[e.dst] && e.src != self.accepting)
            .map(|e| Edge {
                src: remap[e.src],
                dst: remap[e.dst],
                formula: e.formula.clone(),
                reward: e.reward,
            })
            .collect();
        let mut rm = RewardMachine {
            num_states: next,
            initial: remap[self.initial],
            accepting: remap[self.accepting],
            edges,
        };
        rm.recompute_negations();
        Ok(rm)
    }

    /// Simple initial-to-accepting paths as edge-index lists, ordered
    /// lexicographically by their state sequences.
    pub fn enumerate_paths(&self) -> Vec<Vec<usize>> {
        let mut out = Vec::new();
        let mut on_path = vec![false; self.num_states];
        let mut path = Vec::new();
        self.paths_dfs(self.initial, &mut on_path, &mut path, &mut out);
        out
    }

    fn paths_dfs(
        &self,
        u: RmState,
        on_path: &mut [bool],
        path: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        if u == self.accepting {
            out.push(path.clone());
            return;
        }
        on_path[u] = true;
        let mut next: Vec<(RmState, usize)> = self.outgoing(u).map(|(i, e)| (e.dst, i)).collect();
        next.sort_unstable();
        for (v, i) in next {
            if !on_path[v] {
                path.push(i);
                self.paths_dfs(v, on_path, path, out);
                path.pop();
            }
        }
        on_path[u] = false;
    }

    /// Kahn's algorithm; `None` if the graph has a cycle.
    pub fn topological_order(&self) -> Option<Vec<RmState>> {
        let mut indeg = vec![0usize; self.num_states];
        for e in &self.edges {
            indeg[e.dst] += 1;
        }
        let mut queue: VecDeque<RmState> = (0..self.num_states).filter(|&s| indeg[s] == 0).collect();
        let mut order = Vec::with_capacity(self.num_states);
        while let Some(u) = queue.pop_front() {
            order.push(u);
            for (_, e) in self.outgoing(u) {
                indeg[e.dst] -= 1;
                if indeg[e.dst] == 0 {
                    queue.push_back(e.dst);
                }
            }
        }
        (order.len() == self.num_states).then_some(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_some()
    }

    pub fn path_metrics(&self) -> Result<PathMetrics> {
        let order = self
            .topological_order()
            .ok_or_else(|| Error::InvalidRm("path metrics need an acyclic machine".into()))?;
        // count[u]: paths initial->u; len_sum[u]: total edges over those paths.
        let mut count = vec![0u64; self.num_states];
        let mut len_sum = vec![0u64; self.num_states];
        count[self.initial] = 1;
        for u in order {
            if count[u] == 0 || u == self.accepting {
                continue;
            }
            for (_, e) in self.outgoing(u) {
                count[e.dst] += count[u];
                len_sum[e.dst] += len_sum[u] + count[u];
            }
        }
        let n = count[self.accepting];
        Ok(PathMetrics {
            num_paths: n,
            avg_path_length: if n == 0 {
                0.0
            } else {
                len_sum[self.accepting] as f64 / n as f64
            },
        })
    }

    pub fn export_policy_graph(&self) -> PolicyGraph {
        PolicyGraph {
            nodes: (0..self.num_states).collect(),
            reversed_edges: self.edges.iter().map(|e| (e.dst, e.src)).collect(),
            edge_features: self
                .edges
                .iter()
                .map(|e| e.formula.literals().map(|l| decompose_literal(&l)).collect())
                .collect(),
            current_state: None,
        }
    }

    /// Positive propositions in edge order.
    pub fn propositions(&self) -> impl Iterator<Item = &Proposition> {
        self.edges.iter().map(|e| &e.formula.positive)
    }

    pub fn to_json(&self) -> RmJson {
        RmJson {
            states: (0..self.num_states).collect(),
            initial: self.initial,
            accepting: self.accepting,
            edges: self
                .edges
                .iter()
                .map(|e| EdgeJson {
                    src: e.src,
                    dst: e.dst,
                    pos: e.formula.positive,
                    negs: e.formula.negatives.clone(),
                    reward: e.reward,
                })
                .collect(),
        }
    }

    pub fn from_json(j: &RmJson) -> Result<RewardMachine> {
        let n = j.states.len();
        if j.states.iter().enumerate().any(|(i, &s)| i != s) {
            return Err(Error::InvalidRm("state ids must be 0..n in order".into()));
        }
        if j.initial >= n || j.accepting >= n {
            return Err(Error::InvalidRm("initial/accepting out of range".into()));
        }
        let edges = j
            .edges
            .iter()
            .map(|e| {
                let mut negs = e.negs.clone();
                negs.sort();
                negs.dedup();
                Edge {
                    src: e.src,
                    dst: e.dst,
                    formula: Formula {
                        positive: e.pos,
                        negatives: negs,
                    },
                    reward: e.reward,
                }
            })
            .collect();
        Ok(RewardMachine {
            num_states: n,
            initial: j.initial,
            accepting: j.accepting,
            edges,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgeJson {
    pub src: usize,
    pub dst: usize,
    pub pos: Proposition,
    #[serde(default)]
    pub negs: Vec<Proposition>,
    #[serde(default)]
    pub reward: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RmJson {
    pub states: Vec<usize>,
    pub initial: usize,
    pub accepting: usize,
    pub edges: Vec<EdgeJson>,
}

impl Serialize for RewardMachine {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RewardMachine {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = RmJson::deserialize(d)?;
        RewardMachine::from_json(&j).map_err(serde::de::Error::custom)
    }
}

/// The policy-conditioning graph: edges reversed, each carrying the feature
/// records of its formula's literals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyGraph {
    pub nodes: Vec<RmState>,
    pub reversed_edges: Vec<(RmState, RmState)>,
    pub edge_features: Vec<Vec<LiteralFeatures>>,
    pub current_state: Option<RmState>,
}

impl PolicyGraph {
    pub fn with_current(mut self, u: RmState) -> Self {
        self.current_state = Some(u);
        self
    }
}

/// A tree of reward machines where edges may call child machines. Only the
/// flat root is ever executed.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchySpec {
    pub parent: Vec<Option<usize>>,
    pub rms: Vec<RewardMachine>,
    /// Per machine, per edge: the called child, if any.
    pub calls: Vec<Vec<Option<usize>>>,
}

impl HierarchySpec {
    pub fn children(&self, i: usize) -> Vec<usize> {
        (0..self.parent.len()).filter(|&j| self.parent[j] == Some(i)).collect()
    }

    /// The root machine when no edge calls another machine.
    pub fn flatten(&self) -> Option<&RewardMachine> {
        if self.calls.iter().flatten().all(Option::is_none) {
            self.rms.first()
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.parent.len();
        if self.rms.len() != m || self.calls.len() != m {
            return Err(Error::InvalidRm("hierarchy arrays disagree in length".into()));
        }
        for i in 1..m {
            if self.rms[i].outgoing(self.rms[i].initial).count() != 1 {
                return Err(Error::InvalidRm(format!(
                    "non-root machine {i} needs exactly one initial edge"
                )));
            }
        }
        for (i, calls) in self.calls.iter().enumerate() {
            if calls.len() != self.rms[i].edges.len() {
                return Err(Error::InvalidRm("call labels per edge mismatch".into()));
            }
            for c in calls.iter().flatten() {
                if *c >= m || self.parent[*c] != Some(i) {
                    return Err(Error::InvalidRm(format!("machine {i} calls non-child {c}")));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Proposition {
        s.parse().unwrap()
    }

    fn intro_machine() -> RewardMachine {
        RewardMachine::sequential(&[p("front_ball"), p("front_square_red")])
    }

    fn diamond() -> RewardMachine {
        RewardMachine::from_positive_edges(
            4,
            0,
            3,
            &[
                (0, 1, p("front_ball")),
                (0, 2, p("front_key")),
                (1, 3, p("front_square")),
                (2, 3, p("carrying_ball")),
            ],
        )
    }

    #[test]
    fn intro_machine_steps() {
        let rm = intro_machine();
        let label = vec![
            p("front_ball"),
            p("front_ball_blue"),
            p("next_square_key"),
            p("next_square_purple_key_green"),
            p("next_square_key_green"),
            p("next_square_purple_key"),
        ];
        assert_eq!(rm.rm_step(0, &label).unwrap(), (1, 0.0));
        assert_eq!(rm.rm_step(1, &vec![p("front_square_red")]).unwrap(), (2, 1.0));
        assert_eq!(rm.rm_step(0, &Vec::new()).unwrap(), (0, 0.0));
    }

    #[test]
    fn specific_label_violates_generic_negative() {
        let rm = RewardMachine::from_positive_edges(
            3,
            0,
            2,
            &[(0, 1, p("front_ball")), (0, 2, p("front_key"))],
        );
        let label = vec![p("front_key_red")];
        assert_eq!(rm.rm_step(0, &label).unwrap(), (2, 1.0));
    }

    #[test]
    fn reward_kinds() {
        let rm = intro_machine();
        let sparse = rm.assign_rewards(RewardKind::Sparse).unwrap();
        assert_eq!(sparse.edges.iter().map(|e| e.reward).collect::<Vec<_>>(), vec![0.0, 1.0]);
        let shaped = rm.assign_rewards(RewardKind::DistanceShaped).unwrap();
        assert_eq!(shaped.edges.iter().map(|e| e.reward).collect::<Vec<_>>(), vec![0.5, 0.5]);
        let single = RewardMachine::sequential(&[p("front_ball")]);
        for kind in [RewardKind::Sparse, RewardKind::Stepwise, RewardKind::DistanceShaped] {
            assert_eq!(single.assign_rewards(kind).unwrap().edges[0].reward, 1.0);
        }
    }

    #[test]
    fn shaped_rewards_fail_on_dead_end() {
        let rm = RewardMachine {
            num_states: 3,
            initial: 0,
            accepting: 2,
            edges: vec![
                Edge { src: 0, dst: 2, formula: Formula::new(p("front_ball")), reward: 1.0 },
                Edge { src: 1, dst: 0, formula: Formula::new(p("front_key")), reward: 0.0 },
            ],
        };
        assert!(rm.assign_rewards(RewardKind::DistanceShaped).is_ok());
        let dead = RewardMachine {
            edges: vec![
                Edge { src: 0, dst: 2, formula: Formula::new(p("front_ball")), reward: 1.0 },
                Edge { src: 0, dst: 1, formula: Formula::new(p("front_key")), reward: 0.0 },
            ],
            ..rm
        };
        assert!(dead.assign_rewards(RewardKind::DistanceShaped).is_err());
    }

    #[test]
    fn determinism_checks() {
        assert!(intro_machine().check_determinism());
        assert!(diamond().check_determinism());
        let mut dup = diamond();
        dup.edges[1].formula.positive = p("front_ball");
        dup.recompute_negations();
        assert!(!dup.check_determinism());
        let mut bare = diamond();
        for e in &mut bare.edges {
            e.formula.negatives.clear();
        }
        assert!(!bare.check_determinism());
    }

    #[test]
    fn paths_and_metrics() {
        let chain = RewardMachine::sequential(&[p("front_ball"), p("front_key")]);
        assert_eq!(chain.enumerate_paths(), vec![vec![0, 1]]);
        let d = diamond();
        assert_eq!(d.enumerate_paths().len(), 2);
        let m = d.path_metrics().unwrap();
        assert_eq!((m.num_paths, m.avg_path_length), (2, 2.0));
        let five = RewardMachine::sequential(&[p("front_ball"); 5]);
        let m = five.path_metrics().unwrap();
        assert_eq!((m.num_paths, m.avg_path_length), (1, 5.0));
    }

    #[test]
    fn double_diamond() {
        let rm = RewardMachine::from_positive_edges(
            5,
            0,
            4,
            &[
                (0, 1, p("front_ball")),
                (0, 2, p("front_key")),
                (1, 3, p("front_ball")),
                (2, 3, p("front_ball")),
                (3, 4, p("front_square")),
                (3, 2, p("front_door")),
            ],
        );
        assert!(rm.path_metrics().is_err());
        let rm = RewardMachine::from_positive_edges(
            7,
            0,
            6,
            &[
                (0, 1, p("front_ball")),
                (0, 2, p("front_key")),
                (1, 3, p("front_ball")),
                (2, 3, p("front_ball")),
                (3, 4, p("front_square")),
                (3, 5, p("front_door")),
                (4, 6, p("front_ball")),
                (5, 6, p("front_ball")),
            ],
        );
        let m = rm.path_metrics().unwrap();
        assert_eq!((m.num_paths, m.avg_path_length), (4, 4.0));
        assert_eq!(rm.enumerate_paths().len(), 4);
    }

    #[test]
    fn cyclic_paths_are_simple() {
        // u0 -> u1 <-> u2 -> uA, plus u1 -> uA
        let rm = RewardMachine::from_positive_edges(
            4,
            0,
            3,
            &[
                (0, 1, p("front_ball")),
                (1, 2, p("front_key")),
                (2, 1, p("front_ball")),
                (2, 3, p("front_square")),
                (1, 3, p("front_door")),
            ],
        );
        let paths = rm.enumerate_paths();
        assert_eq!(paths.len(), 2);
        for path in &paths {
            let mut states: Vec<_> = path.iter().map(|&i| rm.edges[i].src).collect();
            states.push(rm.accepting);
            let unique: HashSet<_> = states.iter().collect();
            assert_eq!(unique.len(), states.len());
        }
        let first: Vec<_> = paths[0].iter().map(|&i| rm.edges[i].dst).collect();
        assert_eq!(first, vec![1, 2, 3]);
    }

    #[test]
    fn policy_graph() {
        let g = intro_machine().export_policy_graph();
        assert_eq!(g.reversed_edges, vec![(1, 0), (2, 1)]);
        let rm = RewardMachine::from_positive_edges(
            3,
            0,
            2,
            &[(0, 1, p("front_ball")), (0, 2, p("front_square_red"))],
        );
        let g = rm.export_policy_graph();
        let signs: Vec<i8> = g.edge_features[0].iter().map(|f| f.sign).collect();
        assert_eq!(signs, vec![1, -1]);
        let single = RewardMachine::sequential(&[p("front_ball")]).export_policy_graph();
        assert_eq!((single.nodes.len(), single.reversed_edges.len()), (2, 1));
    }

    #[test]
    fn json_round_trip() {
        let rm = diamond();
        let s = serde_json::to_string(&rm).unwrap();
        let back: RewardMachine = serde_json::from_str(&s).unwrap();
        assert_eq!(rm, back);
        assert!(s.contains("\"pos\":\"front_ball\""));
    }

    #[test]
    fn prune_drops_dead_states() {
        let rm = RewardMachine::from_positive_edges(
            4,
            0,
            2,
            &[(0, 1, p("front_ball")), (1, 2, p("front_key")), (0, 3, p("front_square"))],
        );
        let pruned = rm.prune().unwrap();
        assert_eq!(pruned.num_states, 3);
        assert!(pruned.validate().is_ok());
        assert!(pruned.edges.iter().all(|e| e.formula.negatives.is_empty()));
    }
}
