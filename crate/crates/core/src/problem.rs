use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::Level;
use crate::reward_machine::RewardMachine;

/// A task paired with the level it must be completed in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub rm: RewardMachine,
    pub level: Level,
}

impl Problem {
    pub fn new(rm: RewardMachine, level: Level) -> Self {
        Self { rm, level }
    }

    pub fn validate(&self) -> Result<()> {
        self.rm.validate()?;
        self.level.validate()
    }
}

/// Parses one problem per non-blank line, validating each. Errors carry the
/// 1-based line number.
pub fn read_jsonl(reader: impl std::io::BufRead) -> Result<Vec<Problem>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let p: Problem = serde_json::from_str(&line).map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        p.validate().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

pub fn write_jsonl<'a>(mut w: impl std::io::Write, problems: impl IntoIterator<Item = &'a Problem>) -> Result<()> {
    for p in problems {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::samplers::{sample_problem, ProblemSamplerConfig};
    use crate::rng::seeded_rng;

    #[test]
    fn jsonl_round_trip_and_line_numbers() {
        let mut rng = seeded_rng(3);
        let ps: Vec<Problem> = (0..3)
            .map(|_| sample_problem(&mut rng, &ProblemSamplerConfig::default()).unwrap())
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &ps).unwrap();
        assert_eq!(read_jsonl(&buf[..]).unwrap(), ps);
        buf.extend_from_slice(b"\n{\"rm\": 1}\n");
        let err = read_jsonl(&buf[..]).unwrap_err().to_string();
        assert!(err.contains("line 5"), "{err}");
    }
}
