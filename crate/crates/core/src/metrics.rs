//! Evaluation: per-problem solve rates and their tail/robust aggregates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::Problem;
use crate::rng::{RngStreams, Stream};
use crate::samplers::{
    sample_problem, LevelSamplerConfig, ProblemSamplerConfig, SamplingMode, SequentialRmConfig, TaskSamplerConfig,
};
use crate::solvability::{is_solvable_exact, is_solvable_static, ExactResult};
use crate::students::{rollout, StudentSpec, DEFAULT_HORIZON};

pub const DEFAULT_REPS: usize = 10;
pub const CVAR_ALPHAS: [f64; 7] = [1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 100.0];

fn sorted(rates: &[f64]) -> Result<Vec<f64>> {
    if rates.is_empty() {
        return Err(Error::Empty);
    }
    let mut v = rates.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Mean of the `ceil(alpha/100 * n)` smallest rates.
pub fn cvar(rates: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha <= 100.0) {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 100]")));
    }
    let v = sorted(rates)?;
    let k = ((alpha / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len());
    Ok(v[..k].iter().sum::<f64>() / k as f64)
}

/// Interquartile mean: drops `floor(n/4)` values from each end.
pub fn iqm(rates: &[f64]) -> Result<f64> {
    let v = sorted(rates)?;
    let cut = v.len() / 4;
    let mid = &v[cut..v.len() - cut];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvarPoint {
    pub alpha: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub student: String,
    pub reps: usize,
    pub per_problem_solve_rate: Vec<f64>,
    pub mean: f64,
    pub iqm: f64,
    pub cvar_curve: Vec<CvarPoint>,
}

impl EvalReport {
    pub fn from_rates(student: &str, reps: usize, rates: Vec<f64>, alphas: &[f64]) -> Result<Self> {
        let cvar_curve = alphas
            .iter()
            .map(|&alpha| Ok(CvarPoint { alpha, value: cvar(&rates, alpha)? }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            student: student.to_string(),
            reps,
            mean: cvar(&rates, 100.0)?,
            iqm: iqm(&rates)?,
            cvar_curve,
            per_problem_solve_rate: rates,
        })
    }
}

/// Rolls out every problem `reps` times. Episode `(i, r)` draws from its own
/// stream, so the report does not depend on the thread count.
pub fn evaluate(
    spec: &StudentSpec,
    problems: &[Problem],
    reps: usize,
    horizon: usize,
    streams: &RngStreams,
) -> Result<EvalReport> {
    if problems.is_empty() {
        return Err(Error::Empty);
    }
    if reps == 0 {
        return Err(Error::Config("reps must be positive".into()));
    }
    let name = spec.build()?.name().to_string();
    let episode = |(i, r): (usize, usize)| -> Result<bool> {
        let mut student = spec.build()?;
        let mut rng = streams.stream(Stream::Eval, &[i as u64, r as u64]);
        Ok(rollout(&problems[i], student.as_mut(), horizon, &mut rng)?.summary.solved)
    };
    let jobs: Vec<(usize, usize)> = (0..problems.len()).flat_map(|i| (0..reps).map(move |r| (i, r))).collect();
    let solved: Vec<bool> = if spec.is_parallel_safe() {
        jobs.into_par_iter().map(episode).collect::<Result<_>>()?
    } else {
        jobs.into_iter().map(episode).collect::<Result<_>>()?
    };
    let rates = solved
        .chunks(reps)
        .map(|c| c.iter().filter(|&&s| s).count() as f64 / reps as f64)
        .collect();
    EvalReport::from_rates(&name, reps, rates, &CVAR_ALPHAS)
}

/// Small problems: one or two rooms, sequential tasks of up to three steps,
/// tasks drawn from what the level can host.
pub fn easy_corpus_config() -> ProblemSamplerConfig {
    ProblemSamplerConfig {
        mode: SamplingMode::LevelConditioned,
        level: LevelSamplerConfig {
            rooms: vec![1, 2],
            object_range: None,
        },
        task: TaskSamplerConfig::Sequential(SequentialRmConfig {
            max_len: 3,
            ..SequentialRmConfig::default()
        }),
    }
}

pub const EXACT_STEP_LIMIT: usize = DEFAULT_HORIZON;
pub const EXACT_STATE_BUDGET: usize = 200_000;

/// Samples candidates until `n` problems are confirmed solvable by both the
/// static check and exhaustive search. Candidates the search cannot decide
/// within its budget are skipped.
pub fn exactly_solvable_corpus(cfg: &ProblemSamplerConfig, n: usize, seed: u64) -> Result<Vec<Problem>> {
    let streams = RngStreams::new(seed);
    let mut out = Vec::with_capacity(n);
    let chunk = 64;
    let mut next = 0u64;
    while out.len() < n {
        let found: Vec<Option<Problem>> = (next..next + chunk)
            .into_par_iter()
            .map(|i| {
                let problem = sample_problem(&mut streams.stream(Stream::Sampler, &[i]), cfg)?;
                let keep = is_solvable_static(&problem)
                    && is_solvable_exact(&problem, EXACT_STEP_LIMIT, EXACT_STATE_BUDGET) == ExactResult::Solvable;
                Ok(keep.then_some(problem))
            })
            .collect::<Result<_>>()?;
        out.extend(found.into_iter().flatten().take(n - out.len()));
        next += chunk;
        if next > 1000 * (n as u64 + 1) {
            return Err(Error::SamplingExhausted {
                attempts: next as usize,
                reason: "too few solvable problems".into(),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn cvar_examples() {
        assert!(close(cvar(&[0.0, 0.0, 1.0, 1.0], 50.0).unwrap(), 0.0));
        assert!(close(cvar(&[0.2, 0.4, 0.6, 0.8, 1.0], 40.0).unwrap(), 0.3));
        assert!(close(cvar(&[0.2, 0.4, 0.9], 100.0).unwrap(), 0.5));
        assert!(close(cvar(&[0.7, 0.1], 1.0).unwrap(), 0.1));
        assert!(cvar(&[], 50.0).is_err());
        assert!(cvar(&[1.0], 0.0).is_err());
    }

    #[test]
    fn iqm_examples() {
        assert!(close(iqm(&[3.0, 0.0, 2.0, 1.0]).unwrap(), 1.5));
        assert!(close(iqm(&[0.4; 9]).unwrap(), 0.4));
        assert!(close(iqm(&[0.25]).unwrap(), 0.25));
        assert!(iqm(&[]).is_err());
    }

    #[test]
    fn unsolvable_set_scores_zero() {
        use crate::reward_machine::RewardMachine;
        let mut rng = crate::rng::seeded_rng(0);
        let mut p = sample_problem(&mut rng, &ProblemSamplerConfig::minimal(SamplingMode::Independent)).unwrap();
        // Nothing in a one-object level can be next to two keys at once.
        p.rm = RewardMachine::sequential(&["next_key_red_key_blue".parse().unwrap()]);
        p.level.carried = None;
        let r = evaluate(&StudentSpec::Random, &[p], 3, 20, &RngStreams::new(1)).unwrap();
        assert_eq!(r.per_problem_solve_rate, vec![0.0]);
        assert!(r.cvar_curve.iter().all(|c| c.value == 0.0));
    }
}
