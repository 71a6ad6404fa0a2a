use std::collections::BTreeSet;

use proptest::prelude::*;
use rmcurric::alphabet::{Color, ObjectKind, Proposition};
use rmcurric::curriculum::{
    buffer_insert, replay_distribution, score_maxmc, ued_step, Algorithm, Buffer, BufferEntry, CurriculumConfig,
    InsertOutcome, UedState,
};
use rmcurric::gridworld::{AgentPose, Direction, GridObject, Level, RoomLayout};
use rmcurric::metrics::{cvar, easy_corpus_config, evaluate, iqm};
use rmcurric::mutations::mutate;
use rmcurric::reward_machine::RewardMachine;
use rmcurric::rng::{seeded_rng, RngStreams, Stream};
use rmcurric::samplers::{sample_problem, ProblemSamplerConfig, SamplingMode};
use rmcurric::students::{rollout, PlannerStudent, RandomStudent, StudentSpec};
use rmcurric::Problem;

fn corridor() -> Problem {
    let mut level = Level::new(RoomLayout::One, AgentPose::new(1, 3, Direction::East));
    level.set(4, 3, Some(GridObject::new(ObjectKind::Ball, Color::Red)));
    let p: Proposition = "front_ball".parse().unwrap();
    Problem::new(RewardMachine::sequential(&[p]), level)
}

fn entry(score: f64, last: u64, insert: u64) -> BufferEntry {
    BufferEntry {
        problem: corridor(),
        score,
        r_max: 0.0,
        last_sampled_step: last,
        insert_step: insert,
        lineage: Vec::new(),
        solvable_hint: None,
    }
}

fn entries() -> impl Strategy<Value = Vec<BufferEntry>> {
    prop::collection::vec((0.0f64..10.0, 0u64..50, 0u64..50), 1..40)
        .prop_map(|v| v.into_iter().map(|(s, l, i)| entry(s, l, i)).collect())
}

/// Steps the machine by scanning the closed label set directly, without the
/// implication-aware lookup the engine uses.
fn oracle_step(rm: &RewardMachine, u: usize, label: &BTreeSet<Proposition>) -> (usize, f64) {
    let fired: Vec<_> = rm
        .edges
        .iter()
        .filter(|e| e.src == u)
        .filter(|e| label.contains(&e.formula.positive) && e.formula.negatives.iter().all(|n| !label.contains(n)))
        .collect();
    assert!(fired.len() <= 1, "nondeterministic step from {u}");
    fired.first().map_or((u, 0.0), |e| (e.dst, e.reward))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn replay_distribution_is_a_distribution(es in entries(), temp in 0.1f64..5.0, rho in 0.0f64..=1.0, step in 50u64..100) {
        let p = replay_distribution(&es, temp, rho, step);
        prop_assert_eq!(p.len(), es.len());
        prop_assert!(p.iter().all(|&x| x >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn pure_score_replay_is_monotone_and_scale_free(es in entries(), temp in 0.1f64..5.0, k in 0.01f64..100.0) {
        let p = replay_distribution(&es, temp, 0.0, 100);
        for (i, a) in es.iter().enumerate() {
            for (j, b) in es.iter().enumerate() {
                if a.score > b.score {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
        let scaled: Vec<BufferEntry> = es.iter().map(|e| BufferEntry { score: e.score * k, ..e.clone() }).collect();
        let q = replay_distribution(&scaled, temp, 0.0, 100);
        for (a, b) in p.iter().zip(&q) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn buffer_respects_capacity_and_raises_floor(cap in 1usize..12, scores in prop::collection::vec(0.0f64..5.0, 1..60)) {
        let mut buf = Buffer::new(cap);
        for (t, s) in scores.into_iter().enumerate() {
            let full = buf.len() == cap;
            let floor = buf.min_score();
            let outcome = buffer_insert(&mut buf, entry(s, t as u64, t as u64));
            prop_assert!(buf.len() <= cap);
            if full {
                let floor = floor.unwrap();
                prop_assert!(buf.min_score().unwrap() >= floor);
                prop_assert_eq!(outcome == InsertOutcome::Rejected, s <= floor);
            } else {
                prop_assert_eq!(outcome, InsertOutcome::Inserted);
            }
        }
    }

    #[test]
    fn cvar_is_monotone_and_bounded(rates in prop::collection::vec(0.0f64..=1.0, 1..80), a in 1.0f64..100.0, b in 1.0f64..100.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(cvar(&rates, lo).unwrap() <= cvar(&rates, hi).unwrap() + 1e-12);
        let mean = rates.iter().sum::<f64>() / rates.len() as f64;
        prop_assert!((cvar(&rates, 100.0).unwrap() - mean).abs() < 1e-12);
        let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
        let max = rates.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let m = iqm(&rates).unwrap();
        prop_assert!(m >= min - 1e-12 && m <= max + 1e-12);
        prop_assert!(cvar(&rates, lo).unwrap() >= min - 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn rollout_rewards_match_replay(seed in any::<u64>(), mode in 0usize..3) {
        let mode = [SamplingMode::Independent, SamplingMode::LevelConditioned, SamplingMode::TaskConditioned][mode];
        let cfg = ProblemSamplerConfig { mode, ..easy_corpus_config() };
        // Small layouts cannot always host a task-conditioned machine.
        let sampled = sample_problem(&mut seeded_rng(seed), &cfg);
        prop_assume!(!matches!(sampled, Err(rmcurric::Error::SamplingExhausted { .. })));
        let problem = sampled.unwrap();
        let mut rng = seeded_rng(seed ^ 1);
        let tr = rollout(&problem, &mut RandomStudent, 96, &mut rng).unwrap();

        let rm = &problem.rm;
        let mut level = problem.level.clone();
        let (mut u, r0) = oracle_step(rm, rm.initial, &level.label());
        prop_assert_eq!(r0, tr.summary.initial_reward);
        let mut total = r0;
        for step in &tr.steps {
            prop_assert_eq!(step.rm_state, u);
            level.step_mut(step.action);
            let (v, r) = oracle_step(rm, u, &level.label());
            prop_assert_eq!(r, step.reward);
            total += r;
            u = v;
        }
        prop_assert_eq!(u, tr.summary.final_rm_state);
        prop_assert_eq!(total, tr.summary.undiscounted_return);
        prop_assert_eq!(tr.summary.solved, u == rm.accepting);
        prop_assert_eq!(level, tr.final_level);
    }

    #[test]
    fn mutants_stay_valid(seed in any::<u64>(), lo in 1usize..6, extra in 0usize..6) {
        let problem = sample_problem(&mut seeded_rng(seed), &easy_corpus_config()).unwrap();
        let streams = RngStreams::new(seed);
        let mut rng = streams.stream(Stream::Mutation, &[0]);
        let (child, kinds) = mutate(&problem, &mut rng, None, (lo, lo + extra)).unwrap();
        child.validate().unwrap();
        prop_assert!(kinds.len() <= lo + extra);
    }
}

fn small_config(algorithm: Algorithm) -> CurriculumConfig {
    CurriculumConfig {
        batch_size: 8,
        buffer_capacity: 12,
        horizon: 48,
        sampler: easy_corpus_config(),
        ..CurriculumConfig::for_algorithm(algorithm)
    }
}

#[test]
fn robust_replay_trains_only_on_buffered_problems() {
    for algorithm in [Algorithm::PlrRobust, Algorithm::Accel] {
        let mut state = UedState::new(small_config(algorithm), 3).unwrap();
        let mut trained = 0;
        for _ in 0..8 {
            let before: Vec<Problem> = state.buffer.entries.iter().map(|e| e.problem.clone()).collect();
            let out = ued_step(&mut state, &StudentSpec::Random).unwrap();
            assert!(state.buffer.len() <= state.config.buffer_capacity);
            for p in &out.training_batch {
                assert!(before.contains(p), "{algorithm:?} trained on a problem that was not buffered");
            }
            trained += out.training_batch.len();
        }
        assert!(trained > 0, "{algorithm:?} never replayed");
    }
}

#[test]
fn domain_randomization_trains_on_every_fresh_problem() {
    let mut state = UedState::new(small_config(Algorithm::Dr), 5).unwrap();
    for _ in 0..3 {
        let out = ued_step(&mut state, &StudentSpec::Random).unwrap();
        assert_eq!(out.training_batch.len(), 8);
        assert!(state.buffer.is_empty());
    }
}

#[test]
fn curriculum_runs_are_reproducible() {
    let run = || {
        let mut state = UedState::new(small_config(Algorithm::Accel), 9).unwrap();
        let events: Vec<_> = (0..4)
            .map(|_| serde_json::to_string(&ued_step(&mut state, &StudentSpec::default()).unwrap().event).unwrap())
            .collect();
        (events, serde_json::to_string(&state.buffer).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn regret_vanishes_on_mastered_problems() {
    let p = corridor();
    let mastered = rollout(&p, &mut PlannerStudent::default(), 512, &mut seeded_rng(0)).unwrap();
    let r_max = mastered.summary.undiscounted_return;
    assert_eq!(r_max, 1.0);
    let clueless = rollout(&p, &mut RandomStudent, 512, &mut seeded_rng(0)).unwrap();
    let easy = score_maxmc(&mastered.summary, r_max);
    let hard = score_maxmc(&clueless.summary, r_max);
    assert!(easy < 0.05, "mastered score {easy}");
    assert!(hard > 10.0 * easy, "{hard} vs {easy}");
}

#[test]
fn evaluation_is_seed_reproducible() {
    let cfg = easy_corpus_config();
    let problems: Vec<Problem> = (0..12).map(|i| sample_problem(&mut seeded_rng(i), &cfg).unwrap()).collect();
    let a = evaluate(&StudentSpec::Random, &problems, 3, 64, &RngStreams::new(4)).unwrap();
    let b = evaluate(&StudentSpec::Random, &problems, 3, 64, &RngStreams::new(4)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.per_problem_solve_rate.len(), 12);
    let mean = a.per_problem_solve_rate.iter().sum::<f64>() / 12.0;
    assert!((a.mean - mean).abs() < 1e-12);
}
