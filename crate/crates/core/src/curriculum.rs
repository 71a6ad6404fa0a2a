//! The unsupervised environment design loop: domain randomization, robust
//! prioritized level replay, ACCEL and ACCEL-0 over whole problems.

use std::collections::BTreeMap;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mutations::{mutate, EditKind, RolloutContext, DEFAULT_EDIT_RANGE};
use crate::problem::Problem;
use crate::rng::{RngStreams, Stream};
use crate::samplers::{sample_problem, ProblemSamplerConfig};
use crate::solvability::is_solvable_static;
use crate::students::{rollout, RolloutSummary, StudentSpec, DEFAULT_GAMMA, DEFAULT_HORIZON};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Dr,
    PlrRobust,
    Accel,
    Accel0,
}

impl Algorithm {
    pub fn default_replay_rate(self) -> f64 {
        match self {
            Self::Dr => 0.0,
            Self::PlrRobust => 0.5,
            Self::Accel => 0.9,
            Self::Accel0 => 0.99,
        }
    }

    pub fn uses_buffer(self) -> bool {
        self != Self::Dr
    }

    pub fn mutates(self) -> bool {
        matches!(self, Self::Accel | Self::Accel0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ScoreFn {
    #[default]
    MaxMc,
    Pvl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub algorithm: Algorithm,
    pub buffer_capacity: usize,
    /// Per-episode replay probability; the algorithm's default when unset.
    pub replay_rate: Option<f64>,
    pub temperature: f64,
    pub staleness_coef: f64,
    pub score_fn: ScoreFn,
    /// Smoothing for replayed scores: `None` replaces the score with the
    /// latest one, `Some(a)` keeps `a * new + (1 - a) * old`.
    pub score_ema: Option<f64>,
    pub edit_range: (usize, usize),
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Episodes per step.
    pub batch_size: usize,
    pub sampler: ProblemSamplerConfig,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::PlrRobust,
            buffer_capacity: 50_000,
            replay_rate: None,
            temperature: 1.0,
            staleness_coef: 0.1,
            score_fn: ScoreFn::MaxMc,
            score_ema: None,
            edit_range: DEFAULT_EDIT_RANGE,
            horizon: DEFAULT_HORIZON,
            gamma: DEFAULT_GAMMA,
            lambda: 0.9,
            batch_size: 256,
            sampler: ProblemSamplerConfig::default(),
        }
    }
}

impl CurriculumConfig {
    pub fn for_algorithm(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ..Self::default()
        }
    }

    pub fn replay_rate(&self) -> f64 {
        self.replay_rate.unwrap_or(self.algorithm.default_replay_rate())
    }

    /// The generator behind fresh problems; ACCEL-0 starts from the simplest.
    pub fn generator(&self) -> ProblemSamplerConfig {
        match self.algorithm {
            Algorithm::Accel0 => ProblemSamplerConfig::minimal(self.sampler.mode),
            _ => self.sampler.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("replay_rate", self.replay_rate())?;
        unit("staleness_coef", self.staleness_coef)?;
        unit("gamma", self.gamma)?;
        unit("lambda", self.lambda)?;
        if let Some(a) = self.score_ema {
            unit("score_ema", a)?;
        }
        if self.buffer_capacity == 0 {
            return Err(Error::Config("buffer_capacity must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        let (lo, hi) = self.edit_range;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("edit_range ({lo}, {hi}) is empty")));
        }
        self.sampler.level.layouts()?;
        Ok(())
    }
}

/// Mean positive gap between the best return seen and the value estimates.
pub fn score_maxmc(summary: &RolloutSummary, r_max: f64) -> f64 {
    let v = &summary.per_step_values;
    if v.is_empty() {
        return 0.0;
    }
    let s = v.iter().map(|x| r_max - x).sum::<f64>() / v.len() as f64;
    s.max(0.0)
}

/// Positive value loss: mean of the clipped generalized advantage estimates.
pub fn score_pvl(summary: &RolloutSummary, gamma: f64, lambda: f64) -> f64 {
    let v = &summary.per_step_values;
    let r = &summary.per_step_rewards;
    let n = v.len().min(r.len());
    if n == 0 {
        return 0.0;
    }
    let mut gae = 0.0;
    let mut total = 0.0;
    for t in (0..n).rev() {
        let next = if t + 1 < n { v[t + 1] } else { 0.0 };
        let delta = r[t] + gamma * next - v[t];
        gae = delta + gamma * lambda * gae;
        total += gae.max(0.0);
    }
    total / n as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferEntry {
    pub problem: Problem,
    pub score: f64,
    /// Highest undiscounted return observed on this problem.
    pub r_max: f64,
    pub last_sampled_step: u64,
    pub insert_step: u64,
    pub lineage: Vec<EditKind>,
    pub solvable_hint: Option<bool>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InsertOutcome {
    Inserted,
    /// Inserted after evicting the lowest-scoring entry.
    Replaced,
    Rejected,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub capacity: usize,
    pub entries: Vec<BufferEntry>,
}

impl Buffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn min_score(&self) -> Option<f64> {
        self.entries.iter().map(|e| e.score).min_by(f64::total_cmp)
    }
}

/// Adds `entry` while space remains; at capacity it replaces the lowest
/// score (the stalest among equals) only if it scores strictly higher.
pub fn buffer_insert(buffer: &mut Buffer, entry: BufferEntry) -> InsertOutcome {
    if buffer.entries.len() < buffer.capacity {
        buffer.entries.push(entry);
        return InsertOutcome::Inserted;
    }
    let victim = buffer
        .entries
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            a.score
                .total_cmp(&b.score)
                .then(a.last_sampled_step.cmp(&b.last_sampled_step))
                .then(a.insert_step.cmp(&b.insert_step))
        })
        .map(|(i, e)| (i, e.score));
    match victim {
        Some((i, min)) if entry.score > min => {
            buffer.entries.remove(i);
            buffer.entries.push(entry);
            InsertOutcome::Replaced
        }
        _ => InsertOutcome::Rejected,
    }
}

/// Replay probabilities: a mixture of rank-based score prioritization and
/// staleness.
pub fn replay_distribution(entries: &[BufferEntry], temperature: f64, staleness_coef: f64, global_step: u64) -> Vec<f64> {
    let n = entries.len();
    if n == 0 {
        return Vec::new();
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        entries[j]
            .score
            .total_cmp(&entries[i].score)
            .then(entries[i].insert_step.cmp(&entries[j].insert_step))
    });
    let mut by_score = vec![0.0; n];
    for (rank, &i) in order.iter().enumerate() {
        by_score[i] = (1.0 / (rank + 1) as f64).powf(1.0 / temperature);
    }
    let total: f64 = by_score.iter().sum();
    by_score.iter_mut().for_each(|w| *w /= total);

    let stale: Vec<f64> = entries
        .iter()
        .map(|e| global_step.saturating_sub(e.last_sampled_step) as f64)
        .collect();
    let stale_total: f64 = stale.iter().sum();
    (0..n)
        .map(|i| {
            let s = if stale_total > 0.0 { stale[i] / stale_total } else { 1.0 / n as f64 };
            (1.0 - staleness_coef) * by_score[i] + staleness_coef * s
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BufferStats {
    pub size: usize,
    pub mean_states: f64,
    pub mean_rooms: f64,
    pub mean_objects: f64,
    pub mean_edits: f64,
    /// Weighted mean number of occurrences of each edit kind per lineage.
    pub edit_kind_freq: BTreeMap<EditKind, f64>,
    pub solvable_fraction: f64,
    /// Only present when every machine in the buffer is acyclic.
    pub mean_num_paths: Option<f64>,
    pub mean_avg_path_length: Option<f64>,
}

/// Replay-probability-weighted complexity of the buffer.
pub fn buffer_stats(entries: &[BufferEntry], probs: &[f64]) -> Result<BufferStats> {
    if entries.is_empty() {
        return Err(Error::Empty);
    }
    let mass: f64 = probs.iter().sum();
    if !(mass > 0.0) || probs.len() != entries.len() {
        return Err(Error::Config("replay weights must match entries and have positive mass".into()));
    }
    let wmean =
        |f: &dyn Fn(&BufferEntry) -> f64| entries.iter().zip(probs).map(|(e, p)| p * f(e)).sum::<f64>() / mass;
    let mut edit_kind_freq = BTreeMap::new();
    for kind in EditKind::ALL {
        let f = wmean(&|e| e.lineage.iter().filter(|&&k| k == kind).count() as f64);
        edit_kind_freq.insert(kind, f);
    }
    let metrics: Option<Vec<_>> = entries.iter().map(|e| e.problem.rm.path_metrics().ok()).collect();
    let (mean_num_paths, mean_avg_path_length) = match metrics {
        Some(m) => (
            Some(m.iter().zip(probs).map(|(m, p)| p * m.num_paths as f64).sum::<f64>() / mass),
            Some(m.iter().zip(probs).map(|(m, p)| p * m.avg_path_length).sum::<f64>() / mass),
        ),
        None => (None, None),
    };
    Ok(BufferStats {
        size: entries.len(),
        mean_states: wmean(&|e| e.problem.rm.num_states as f64),
        mean_rooms: wmean(&|e| e.problem.level.layout.rooms() as f64),
        mean_objects: wmean(&|e| e.problem.level.object_count() as f64),
        mean_edits: wmean(&|e| e.lineage.len() as f64),
        edit_kind_freq,
        solvable_fraction: wmean(&|e| f64::from(u8::from(e.solvable_hint.unwrap_or(false)))),
        mean_num_paths,
        mean_avg_path_length,
    })
}

/// Everything needed to continue a run: the buffer, the step counter and the
/// root seed (every random stream is derived from seed and step).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UedState {
    pub config: CurriculumConfig,
    pub seed: u64,
    pub step: u64,
    pub buffer: Buffer,
}

impl UedState {
    pub fn new(config: CurriculumConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let capacity = config.buffer_capacity;
        Ok(Self {
            config,
            seed,
            step: 0,
            buffer: Buffer::new(capacity),
        })
    }

    pub fn replay_probs(&self) -> Vec<f64> {
        replay_distribution(
            &self.buffer.entries,
            self.config.temperature,
            self.config.staleness_coef,
            self.step,
        )
    }

    pub fn stats(&self) -> Option<BufferStats> {
        buffer_stats(&self.buffer.entries, &self.replay_probs()).ok()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepEvent {
    pub step: u64,
    pub algo: Algorithm,
    pub replayed: usize,
    pub generated: usize,
    pub mutated: usize,
    pub inserted: usize,
    pub evicted: usize,
    pub rejected: usize,
    /// Solve rate over the episodes the student trains on.
    pub train_solve_rate: Option<f64>,
    pub buffer_size: usize,
    pub buffer_stats: Option<BufferStats>,
}

pub struct StepOutput {
    pub training_batch: Vec<Problem>,
    pub event: StepEvent,
}

struct Episode {
    summary: RolloutSummary,
    ctx: RolloutContext,
}

fn run_episodes(
    jobs: Vec<(Problem, u64)>,
    spec: &StudentSpec,
    horizon: usize,
    streams: &RngStreams,
    step: u64,
) -> Result<Vec<Episode>> {
    let one = |(problem, slot): (Problem, u64)| -> Result<Episode> {
        let mut student = spec.build()?;
        let mut rng = streams.stream(Stream::Rollout, &[step, slot]);
        let tr = rollout(&problem, student.as_mut(), horizon, &mut rng)?;
        Ok(Episode {
            ctx: RolloutContext {
                final_rm_state: tr.summary.final_rm_state,
                final_level: tr.final_level,
            },
            summary: tr.summary,
        })
    };
    if spec.is_parallel_safe() {
        jobs.into_par_iter().map(one).collect()
    } else {
        jobs.into_iter().map(one).collect()
    }
}

impl UedState {
    fn score(&self, summary: &RolloutSummary, r_max: f64) -> f64 {
        match self.config.score_fn {
            ScoreFn::MaxMc => score_maxmc(summary, r_max),
            ScoreFn::Pvl => score_pvl(summary, self.config.gamma, self.config.lambda),
        }
    }

    fn new_entry(&self, problem: Problem, summary: &RolloutSummary, lineage: Vec<EditKind>) -> BufferEntry {
        let r_max = summary.undiscounted_return.max(0.0);
        BufferEntry {
            score: self.score(summary, r_max),
            r_max,
            last_sampled_step: self.step,
            insert_step: self.step,
            lineage,
            solvable_hint: Some(is_solvable_static(&problem)),
            problem,
        }
    }
}

/// One iteration of the loop. Rollouts run in parallel; the buffer is then
/// updated in slot order so results do not depend on scheduling.
pub fn ued_step(state: &mut UedState, student: &StudentSpec) -> Result<StepOutput> {
    let cfg = state.config.clone();
    let streams = RngStreams::new(state.seed);
    let step = state.step;
    let b = cfg.batch_size as u64;
    let generator = cfg.generator();

    // Decide which slots replay and what they replay.
    let probs = state.replay_probs();
    let picker = if cfg.algorithm.uses_buffer() && !state.buffer.is_empty() {
        Some(WeightedIndex::new(&probs).map_err(|e| Error::Config(format!("replay weights: {e}")))?)
    } else {
        None
    };
    let mut replay_slots: Vec<(u64, usize)> = Vec::new();
    let mut fresh_slots: Vec<u64> = Vec::new();
    for slot in 0..b {
        let mut rng = streams.stream(Stream::Replay, &[step, slot]);
        match &picker {
            Some(w) if rng.gen_bool(cfg.replay_rate()) => replay_slots.push((slot, w.sample(&mut rng))),
            _ => fresh_slots.push(slot),
        }
    }
    let fresh: Vec<Problem> = fresh_slots
        .par_iter()
        .map(|&slot| sample_problem(&mut streams.stream(Stream::Sampler, &[step, slot]), &generator))
        .collect::<Result<_>>()?;

    let mut jobs: Vec<(Problem, u64)> = replay_slots
        .iter()
        .map(|&(slot, i)| (state.buffer.entries[i].problem.clone(), slot))
        .collect();
    jobs.extend(fresh.iter().cloned().zip(fresh_slots.iter().copied()));
    let episodes = run_episodes(jobs, student, cfg.horizon, &streams, step)?;
    let (replay_eps, fresh_eps) = episodes.split_at(replay_slots.len());

    let mut event = StepEvent {
        step,
        algo: cfg.algorithm,
        replayed: replay_slots.len(),
        generated: fresh_slots.len(),
        mutated: 0,
        inserted: 0,
        evicted: 0,
        rejected: 0,
        train_solve_rate: None,
        buffer_size: 0,
        buffer_stats: None,
    };

    if !cfg.algorithm.uses_buffer() {
        let solved = fresh_eps.iter().filter(|e| e.summary.solved).count();
        event.train_solve_rate = Some(solved as f64 / fresh_eps.len() as f64);
        state.step += 1;
        return Ok(StepOutput {
            training_batch: fresh,
            event,
        });
    }

    // Mutate what was just replayed, from its pre-update snapshot.
    let mut mutants: Vec<(Problem, Vec<EditKind>, u64)> = Vec::new();
    if cfg.algorithm.mutates() {
        let made: Vec<Option<(Problem, Vec<EditKind>, u64)>> = replay_slots
            .par_iter()
            .zip(replay_eps)
            .map(|(&(slot, i), ep)| {
                let parent = &state.buffer.entries[i];
                let mut rng = streams.stream(Stream::Mutation, &[step, slot]);
                mutate(&parent.problem, &mut rng, Some(&ep.ctx), cfg.edit_range).ok().map(|(p, edits)| {
                    let mut lineage = parent.lineage.clone();
                    lineage.extend(edits);
                    (p, lineage, b + slot)
                })
            })
            .collect();
        mutants = made.into_iter().flatten().collect();
    }
    let mutant_eps = run_episodes(
        mutants.iter().map(|(p, _, slot)| (p.clone(), *slot)).collect(),
        student,
        cfg.horizon,
        &streams,
        step,
    )?;
    event.mutated = mutants.len();

    let mut training_batch = Vec::with_capacity(replay_slots.len());
    let mut solved = 0;
    for (&(_, i), ep) in replay_slots.iter().zip(replay_eps) {
        let r_max = state.buffer.entries[i].r_max.max(ep.summary.undiscounted_return);
        let new_score = state.score(&ep.summary, r_max);
        let e = &mut state.buffer.entries[i];
        training_batch.push(e.problem.clone());
        e.r_max = r_max;
        e.score = match cfg.score_ema {
            Some(a) => a * new_score + (1.0 - a) * e.score,
            None => new_score,
        };
        e.last_sampled_step = step;
        solved += usize::from(ep.summary.solved);
    }
    if !training_batch.is_empty() {
        event.train_solve_rate = Some(solved as f64 / training_batch.len() as f64);
    }

    let candidates = fresh
        .into_iter()
        .zip(fresh_eps)
        .map(|(p, ep)| (p, &ep.summary, Vec::new()))
        .chain(mutants.into_iter().zip(&mutant_eps).map(|((p, l, _), ep)| (p, &ep.summary, l)));
    for (problem, summary, lineage) in candidates {
        let entry = state.new_entry(problem, summary, lineage);
        match buffer_insert(&mut state.buffer, entry) {
            InsertOutcome::Inserted => event.inserted += 1,
            InsertOutcome::Replaced => {
                event.inserted += 1;
                event.evicted += 1;
            }
            InsertOutcome::Rejected => event.rejected += 1,
        }
    }

    state.step += 1;
    event.buffer_size = state.buffer.len();
    event.buffer_stats = state.stats();
    Ok(StepOutput { training_batch, event })
}
