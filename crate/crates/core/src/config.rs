//! Experiment configuration: flat JSON keys, defaults for the five-bump
//! planar run, validation against every solver precondition.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assignment::{build_assignment, Assignment};
use crate::coupled::{SolverConfig, DEFAULT_BETA_SCHEDULE};
use crate::error::{Error, Result};
use crate::grid::{build_grid, RadialGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dimension: usize,
    pub n_points: usize,
    pub r_max: f64,
    pub h: usize,
    pub sigma: Vec<i64>,
    pub beta_schedule: Vec<f64>,
    pub epsilon: f64,
    pub outer_tol: f64,
    pub newton_tol: f64,
    pub tol_nehari: f64,
    pub max_iters: usize,
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let solver = SolverConfig::default();
        Self {
            dimension: 2,
            n_points: 4096,
            r_max: 40.0,
            h: 5,
            sigma: vec![1, 2, 1, 3, 2],
            beta_schedule: DEFAULT_BETA_SCHEDULE.to_vec(),
            epsilon: solver.epsilon,
            outer_tol: solver.outer_tol,
            newton_tol: solver.newton_tol,
            tol_nehari: crate::scalar::TOL_NEHARI,
            max_iters: solver.max_iters,
            seed: 0,
            output_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            beta_schedule: self.beta_schedule.clone(),
            epsilon: self.epsilon,
            outer_tol: self.outer_tol,
            newton_tol: self.newton_tol,
            max_iters: self.max_iters,
        }
    }

    /// Checks grid, bump count and tolerances; with `coupled` also the
    /// assignment (length `h`, admissible) and the `β` schedule.
    pub fn validate(&self, coupled: bool) -> Result<()> {
        build_grid(self.dimension, self.n_points, self.r_max)?;
        if self.h == 0 {
            return Err(Error::Config("h must be at least 1".into()));
        }
        if !(self.tol_nehari.is_finite() && self.tol_nehari > 0.0) {
            return Err(Error::Config("tol_nehari must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be positive".into()));
        }
        if coupled {
            self.assignment()?;
            self.solver().validate()?;
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<std::sync::Arc<RadialGrid>> {
        build_grid(self.dimension, self.n_points, self.r_max)
    }

    pub fn assignment(&self) -> Result<Assignment> {
        if self.sigma.len() != self.h {
            return Err(Error::Config(format!(
                "sigma has {} entries but h = {}",
                self.sigma.len(),
                self.h
            )));
        }
        build_assignment(&self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_validate() {
        let c = ExperimentConfig::default();
        c.validate(true).unwrap();
        assert_eq!(c.assignment().unwrap().k(), 3);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"dimension": 3, "h": 2, "sigma": [1, 2]}"#).unwrap();
        assert_eq!(c.dimension, 3);
        assert_eq!(c.n_points, 4096);
        c.validate(true).unwrap();
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::from_json(r#"{"dimensions": 3}"#),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn bad_inputs_fail_validation() {
        let mut c = ExperimentConfig {
            h: 0,
            ..Default::default()
        };
        assert!(c.validate(false).unwrap_err().is_config());
        c.h = 2;
        c.sigma = vec![1, 1];
        assert_eq!(c.validate(true).unwrap_err(), Error::AdjacentRepeat(1, 2));
        c.validate(false).unwrap();
        c.sigma = vec![1, 2, 1];
        assert!(c.validate(true).is_err());
        c.sigma = vec![1, 2];
        c.dimension = 4;
        assert_eq!(c.validate(false).unwrap_err(), Error::UnsupportedDimension(4));
    }

    proptest! {
        #[test]
        fn json_round_trip(
            dimension in 1usize..4,
            n_points in 16usize..100_000,
            r_max in 1.0f64..200.0,
            sigma in proptest::collection::vec(1i64..5, 1..8),
            betas in proptest::collection::vec(0.0f64..1e6, 1..6),
            epsilon in 1e-3f64..10.0,
            seed in any::<u64>(),
        ) {
            let c = ExperimentConfig {
                dimension,
                n_points,
                r_max,
                h: sigma.len(),
                sigma,
                beta_schedule: betas,
                epsilon,
                seed,
                output_dir: PathBuf::from("out/x"),
                ..Default::default()
            };
            prop_assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }
}
