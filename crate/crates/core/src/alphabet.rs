//! Object descriptors and the 889-proposition alphabet.
//!
//! Propositions are grounded predicates over the agent's view: the object in
//! front of it, the object it carries, and pairs of orthogonally adjacent
//! objects. A descriptor leaves attributes unspecified to denote every object
//! that agrees on the specified ones.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    Ball,
    Square,
    Key,
    Door,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [Self::Ball, Self::Square, Self::Key, Self::Door];
    pub const NON_DOOR: [ObjectKind; 3] = [Self::Ball, Self::Square, Self::Key];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ball => "ball",
            Self::Square => "square",
            Self::Key => "key",
            Self::Door => "door",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Red,
    Green,
    Blue,
    Purple,
    Yellow,
    Gray,
}

impl Color {
    pub const ALL: [Color; 6] = [
        Self::Red,
        Self::Green,
        Self::Blue,
        Self::Purple,
        Self::Yellow,
        Self::Gray,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Red => "red",
            Self::Green => "green",
            Self::Blue => "blue",
            Self::Purple => "purple",
            Self::Yellow => "yellow",
            Self::Gray => "gray",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoorState {
    Open,
    Closed,
    Locked,
}

impl DoorState {
    pub const ALL: [DoorState; 3] = [Self::Open, Self::Closed, Self::Locked];

    pub fn name(self) -> &'static str {
        match self {
            Self::Open => "open",
            Self::Closed => "closed",
            Self::Locked => "locked",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

/// A possibly partial object description. `None` attributes match anything.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ObjectDescriptor {
    pub kind: ObjectKind,
    pub color: Option<Color>,
    pub door_state: Option<DoorState>,
}

impl ObjectDescriptor {
    pub fn new(kind: ObjectKind, color: Option<Color>, door_state: Option<DoorState>) -> Self {
        Self {
            kind,
            color,
            door_state,
        }
    }

    pub fn kind(kind: ObjectKind) -> Self {
        Self::new(kind, None, None)
    }

    pub fn is_door(&self) -> bool {
        self.kind == ObjectKind::Door
    }

    pub fn is_valid(&self) -> bool {
        self.door_state.is_none() || self.is_door()
    }

    /// True when every object matched by `other` is matched by `self`.
    pub fn generalizes(&self, other: &ObjectDescriptor) -> bool {
        self.kind == other.kind
            && (self.color.is_none() || self.color == other.color)
            && (self.door_state.is_none() || self.door_state == other.door_state)
    }

    /// True when some object is matched by both descriptors.
    pub fn compatible(&self, other: &ObjectDescriptor) -> bool {
        fn agree<T: PartialEq>(a: Option<T>, b: Option<T>) -> bool {
            match (a, b) {
                (Some(x), Some(y)) => x == y,
                _ => true,
            }
        }
        self.kind == other.kind
            && agree(self.color, other.color)
            && agree(self.door_state, other.door_state)
    }

    /// All descriptors that generalize this one, itself included.
    pub fn generalizations(&self) -> Vec<ObjectDescriptor> {
        let colors: Vec<Option<Color>> = match self.color {
            Some(c) => vec![None, Some(c)],
            None => vec![None],
        };
        let states: Vec<Option<DoorState>> = match self.door_state {
            Some(s) => vec![None, Some(s)],
            None => vec![None],
        };
        let mut out = Vec::with_capacity(colors.len() * states.len());
        for &c in &colors {
            for &s in &states {
                out.push(ObjectDescriptor::new(self.kind, c, s));
            }
        }
        out
    }

    /// Every valid descriptor in canonical order: 21 non-door then 28 door.
    pub fn all() -> Vec<ObjectDescriptor> {
        let colors = std::iter::once(None).chain(Color::ALL.iter().copied().map(Some));
        let colors: Vec<Option<Color>> = colors.collect();
        let states: Vec<Option<DoorState>> = std::iter::once(None)
            .chain(DoorState::ALL.iter().copied().map(Some))
            .collect();
        let mut out = Vec::new();
        for kind in ObjectKind::ALL {
            for &color in &colors {
                if kind == ObjectKind::Door {
                    for &state in &states {
                        out.push(ObjectDescriptor::new(kind, color, state));
                    }
                } else {
                    out.push(ObjectDescriptor::new(kind, color, None));
                }
            }
        }
        out
    }

    fn write_tokens(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind.name())?;
        if let Some(c) = self.color {
            write!(f, "_{}", c.name())?;
        }
        if let Some(s) = self.door_state {
            write!(f, "_{}", s.name())?;
        }
        Ok(())
    }

    /// One-hot kind (4), color (6) and door state (3).
    pub fn features(&self) -> [u8; 13] {
        let mut v = [0u8; 13];
        v[self.kind.index()] = 1;
        if let Some(c) = self.color {
            v[4 + c.index()] = 1;
        }
        if let Some(s) = self.door_state {
            v[10 + s.index()] = 1;
        }
        v
    }
}

impl fmt::Display for ObjectDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.write_tokens(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Front,
    Carrying,
    Next,
}

impl Location {
    pub fn name(self) -> &'static str {
        match self {
            Self::Front => "front",
            Self::Carrying => "carrying",
            Self::Next => "next",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Proposition {
    pub location: Location,
    pub first: ObjectDescriptor,
    pub second: Option<ObjectDescriptor>,
}

impl Proposition {
    pub fn front(d: ObjectDescriptor) -> Self {
        Self {
            location: Location::Front,
            first: d,
            second: None,
        }
    }

    pub fn carrying(d: ObjectDescriptor) -> Self {
        Self {
            location: Location::Carrying,
            first: d,
            second: None,
        }
    }

    /// Builds a next proposition in canonical orientation.
    pub fn next(a: ObjectDescriptor, b: ObjectDescriptor) -> Self {
        let (first, second) = if a <= b { (a, b) } else { (b, a) };
        Self {
            location: Location::Next,
            first,
            second: Some(second),
        }
    }

    /// Whether this proposition is a member of the alphabet.
    pub fn is_well_formed(&self) -> bool {
        if !self.first.is_valid() {
            return false;
        }
        match self.location {
            Location::Front => self.second.is_none(),
            Location::Carrying => self.second.is_none() && !self.first.is_door(),
            Location::Next => match self.second {
                Some(b) => b.is_valid() && self.first <= b && !(self.first.is_door() && b.is_door()),
                None => false,
            },
        }
    }

    /// The descriptors mentioned, in order.
    pub fn descriptors(&self) -> impl Iterator<Item = &ObjectDescriptor> {
        std::iter::once(&self.first).chain(self.second.iter())
    }
}

impl fmt::Display for Proposition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_", self.location.name())?;
        self.first.write_tokens(f)?;
        if let Some(b) = &self.second {
            f.write_str("_")?;
            b.write_tokens(f)?;
        }
        Ok(())
    }
}

fn parse_kind(tok: &str) -> Option<ObjectKind> {
    ObjectKind::ALL.into_iter().find(|k| k.name() == tok)
}

fn parse_color(tok: &str) -> Option<Color> {
    Color::ALL.into_iter().find(|c| c.name() == tok)
}

fn parse_state(tok: &str) -> Option<DoorState> {
    DoorState::ALL.into_iter().find(|s| s.name() == tok)
}

impl FromStr for Proposition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        let bad = || Error::Parse(format!("invalid proposition `{s}`"));
        let mut toks = s.split('_').peekable();
        let location = match toks.next() {
            Some("front") => Location::Front,
            Some("carrying") => Location::Carrying,
            Some("next") => Location::Next,
            _ => return Err(bad()),
        };
        let mut descs = Vec::new();
        while let Some(tok) = toks.next() {
            let kind = parse_kind(tok).ok_or_else(bad)?;
            let mut d = ObjectDescriptor::kind(kind);
            if let Some(c) = toks.peek().and_then(|t| parse_color(t)) {
                d.color = Some(c);
                toks.next();
            }
            if let Some(st) = toks.peek().and_then(|t| parse_state(t)) {
                d.door_state = Some(st);
                toks.next();
            }
            descs.push(d);
        }
        let p = match (location, descs.as_slice()) {
            (Location::Front, [a]) => Proposition::front(*a),
            (Location::Carrying, [a]) => Proposition::carrying(*a),
            (Location::Next, [a, b]) => Proposition::next(*a, *b),
            _ => return Err(bad()),
        };
        if p.is_well_formed() {
            Ok(p)
        } else {
            Err(bad())
        }
    }
}

impl Serialize for Proposition {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Proposition {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sign {
    Positive,
    Negative,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Literal {
    pub proposition: Proposition,
    pub sign: Sign,
}

impl Literal {
    pub fn positive(p: Proposition) -> Self {
        Self {
            proposition: p,
            sign: Sign::Positive,
        }
    }

    pub fn negative(p: Proposition) -> Self {
        Self {
            proposition: p,
            sign: Sign::Negative,
        }
    }
}

/// The canonical alphabet: front block, carrying block, then next block.
pub fn enumerate_alphabet() -> Vec<Proposition> {
    let descs = ObjectDescriptor::all();
    let mut out: Vec<Proposition> = descs.iter().map(|&d| Proposition::front(d)).collect();
    out.extend(descs.iter().filter(|d| !d.is_door()).map(|&d| Proposition::carrying(d)));
    for (i, &a) in descs.iter().enumerate() {
        for &b in &descs[i..] {
            if !(a.is_door() && b.is_door()) {
                out.push(Proposition::next(a, b));
            }
        }
    }
    out
}

/// True iff every world satisfying `p` also satisfies `q`.
pub fn implies(p: &Proposition, q: &Proposition) -> bool {
    if p.location != q.location {
        return false;
    }
    match (p.second, q.second) {
        (None, None) => q.first.generalizes(&p.first),
        (Some(p2), Some(q2)) => {
            (q.first.generalizes(&p.first) && q2.generalizes(&p2))
                || (q.first.generalizes(&p2) && q2.generalizes(&p.first))
        }
        _ => false,
    }
}

/// True iff no world satisfies both. Only single-slot locations can clash.
pub fn contradicts(p: &Proposition, q: &Proposition) -> bool {
    p.location == q.location
        && matches!(p.location, Location::Front | Location::Carrying)
        && !p.first.compatible(&q.first)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LiteralFeatures {
    pub location: [u8; 3],
    pub objects: [[u8; 13]; 2],
    pub sign: i8,
}

pub fn decompose_literal(l: &Literal) -> LiteralFeatures {
    let p = &l.proposition;
    let mut location = [0u8; 3];
    location[p.location as usize] = 1;
    let second = p.second.map(|d| d.features()).unwrap_or([0; 13]);
    LiteralFeatures {
        location,
        objects: [p.first.features(), second],
        sign: match l.sign {
            Sign::Positive => 1,
            Sign::Negative => -1,
        },
    }
}

/// Dense square bit matrix, row-major, rows padded to whole words.
#[derive(Clone, Debug)]
pub struct BitMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl BitMatrix {
    fn new(n: usize) -> Self {
        let words = n.div_ceil(64);
        Self {
            n,
            words,
            bits: vec![0; n * words],
        }
    }

    fn set(&mut self, i: usize, j: usize) {
        self.bits[i * self.words + j / 64] |= 1 << (j % 64);
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words + j / 64] >> (j % 64) & 1 == 1
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn words_per_row(&self) -> usize {
        self.words
    }
}

/// Constraint matrix `C` (with its transpose) and compatibility matrix `K`.
#[derive(Clone, Debug)]
pub struct PropositionMatrices {
    c: BitMatrix,
    c_t: BitMatrix,
    k: BitMatrix,
}

impl PropositionMatrices {
    /// `C_ij = 0` iff `p_j` implies `p_i`.
    pub fn c(&self, i: usize, j: usize) -> bool {
        self.c.get(i, j)
    }

    /// `K_ij = 0` iff `p_j` contradicts `p_i`.
    pub fn k(&self, i: usize, j: usize) -> bool {
        self.k.get(i, j)
    }

    /// Column `k` of `C` as a bitset over `i`: propositions not implied by `p_k`.
    pub fn not_implied_by(&self, k: usize) -> &[u64] {
        self.c_t.row(k)
    }

    /// Row `k` of `C` as a bitset over `j`: propositions that do not imply `p_k`.
    pub fn not_implying(&self, k: usize) -> &[u64] {
        self.c.row(k)
    }

    /// Row `k` of `K`: propositions compatible with `p_k`.
    pub fn compatible_with(&self, k: usize) -> &[u64] {
        self.k.row(k)
    }

    pub fn size(&self) -> usize {
        self.c.size()
    }
}

pub fn build_matrices(props: &[Proposition]) -> PropositionMatrices {
    let n = props.len();
    let mut c = BitMatrix::new(n);
    let mut c_t = BitMatrix::new(n);
    let mut k = BitMatrix::new(n);
    for (i, pi) in props.iter().enumerate() {
        for (j, pj) in props.iter().enumerate() {
            if !implies(pj, pi) {
                c.set(i, j);
                c_t.set(j, i);
            }
            if !contradicts(pj, pi) {
                k.set(i, j);
            }
        }
    }
    PropositionMatrices { c, c_t, k }
}

/// The shared alphabet with an index lookup and lazily built matrices.
#[derive(Debug)]
pub struct Alphabet {
    props: Vec<Proposition>,
    index: HashMap<Proposition, usize>,
    matrices: OnceLock<PropositionMatrices>,
}

impl Alphabet {
    pub fn global() -> &'static Alphabet {
        static ALPHABET: OnceLock<Alphabet> = OnceLock::new();
        ALPHABET.get_or_init(|| {
            let props = enumerate_alphabet();
            let index = props.iter().enumerate().map(|(i, &p)| (p, i)).collect();
            Alphabet {
                props,
                index,
                matrices: OnceLock::new(),
            }
        })
    }

    pub fn len(&self) -> usize {
        self.props.len()
    }

    pub fn is_empty(&self) -> bool {
        self.props.is_empty()
    }

    pub fn get(&self, i: usize) -> Proposition {
        self.props[i]
    }

    pub fn index_of(&self, p: &Proposition) -> Option<usize> {
        self.index.get(p).copied()
    }

    pub fn propositions(&self) -> &[Proposition] {
        &self.props
    }

    pub fn matrices(&self) -> &PropositionMatrices {
        self.matrices.get_or_init(|| build_matrices(&self.props))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Proposition {
        s.parse().unwrap()
    }

    #[test]
    fn string_round_trip() {
        for prop in enumerate_alphabet() {
            assert_eq!(prop.to_string().parse::<Proposition>().unwrap(), prop);
        }
    }

    #[test]
    fn next_parses_in_either_orientation() {
        assert_eq!(p("next_key_square"), p("next_square_key"));
        assert_eq!(p("next_square_purple_key_green").to_string(), "next_square_purple_key_green");
    }

    #[test]
    fn rejects_malformed() {
        for s in ["front", "carrying_door", "next_door_door_red", "front_ball_locked", "up_ball"] {
            assert!(s.parse::<Proposition>().is_err(), "{s}");
        }
    }

    #[test]
    fn implication_examples() {
        assert!(implies(&p("front_ball_blue"), &p("front_ball")));
        assert!(!implies(&p("front_ball"), &p("front_ball_blue")));
        assert!(implies(&p("next_square_purple_key_green"), &p("next_key_square")));
        assert!(!implies(&p("front_ball"), &p("carrying_ball")));
    }

    #[test]
    fn contradiction_examples() {
        assert!(contradicts(&p("front_ball_blue"), &p("front_key")));
        assert!(!contradicts(&p("front_ball_blue"), &p("front_ball")));
        assert!(!contradicts(&p("next_ball_key"), &p("carrying_ball")));
        assert!(contradicts(&p("front_door_locked"), &p("front_door_open")));
    }

    #[test]
    fn feature_examples() {
        let f = decompose_literal(&Literal::positive(p("next_key_purple_door_locked")));
        assert_eq!(f.location, [0, 0, 1]);
        assert_eq!(f.objects[0][2], 1);
        assert_eq!(f.objects[0][4 + Color::Purple.index()], 1);
        assert_eq!(f.objects[1][3], 1);
        assert_eq!(f.objects[1][10 + DoorState::Locked.index()], 1);
        assert_eq!(f.sign, 1);

        let g = decompose_literal(&Literal::negative(p("front_ball")));
        assert_eq!(g.sign, -1);
        assert_eq!(g.location, [1, 0, 0]);
        assert_eq!(g.objects[0].iter().map(|&x| x as u32).sum::<u32>(), 1);
        assert_eq!(g.objects[1], [0; 13]);

        let h = decompose_literal(&Literal::positive(p("carrying_square_gray")));
        assert_eq!(h.location, [0, 1, 0]);
        assert_eq!(h.objects[0][4 + Color::Gray.index()], 1);
    }
}
