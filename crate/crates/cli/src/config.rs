use std::path::Path;

use rmcurric::curriculum::CurriculumConfig;
use rmcurric::students::StudentSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Top-level TOML configuration shared by every verb.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Curriculum steps for `run`.
    pub steps: u64,
    /// Write a checkpoint every this many steps; 0 only at the end.
    pub checkpoint_every: u64,
    pub curriculum: CurriculumConfig,
    pub student: StudentSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            steps: 200,
            checkpoint_every: 25,
            curriculum: CurriculumConfig::default(),
            student: StudentSpec::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.curriculum.validate()?;
        self.student.build()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<RunConfig>("seed = 1\nbogus = 2").is_err());
        assert!(toml::from_str::<RunConfig>("[curriculum]\nreplay = 0.5").is_err());
    }

    #[test]
    fn nested_tables_parse() {
        let cfg: RunConfig = toml::from_str(
            r#"
            seed = 4
            [curriculum]
            algorithm = "accel0"
            batch_size = 32
            [curriculum.sampler]
            mode = "level_conditioned"
            [curriculum.sampler.task]
            kind = "random_walk"
            structure = "dag"
            states = [6, 6]
            [student]
            kind = "random"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed, 4);
        assert_eq!(cfg.curriculum.batch_size, 32);
        assert_eq!(cfg.student, StudentSpec::Random);
        cfg.validate().unwrap();
    }
}
