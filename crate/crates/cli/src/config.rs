//! Experiment configs. Every file carries a `command` tag; unknown fields are rejected.

use schemars::JsonSchema;
use serde::{Deserialize, Serialize};
use shadowlab::conjugacy::{Ball, BoundedMap};
use shadowlab::operators::{MultiplicationOperator, Operator, ShiftOperator};
use shadowlab::spaces::{IndexWindow, SeminormFamily, SeqVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum ExperimentConfig {
    Classify(ClassifyConfig),
    Shadow(ShadowConfig),
    Conjugacy(ConjugacyConfig),
}

impl ShadowConfig {
    pub fn trial_seeds(&self) -> Vec<u64> {
        match &self.seeds {
            Some(list) => list.clone(),
            None => (0..self.trials as u64).map(|i| self.seed.wrapping_add(i)).collect(),
        }
    }
}

impl ExperimentConfig {
    pub fn command(&self) -> &'static str {
        match self {
            ExperimentConfig::Classify(_) => "classify",
            ExperimentConfig::Shadow(_) => "shadow",
            ExperimentConfig::Conjugacy(_) => "conjugacy",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Classify(c) => c.seed,
            ExperimentConfig::Shadow(c) => c.seed,
            ExperimentConfig::Conjugacy(c) => c.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::Classify(c) => c.seed = seed,
            ExperimentConfig::Shadow(c) => {
                // An override reseeds an explicit list as `seed + i`, keeping its length.
                if let Some(list) = c.seeds.as_mut().filter(|_| c.seed != seed) {
                    for (i, s) in list.iter_mut().enumerate() {
                        *s = seed.wrapping_add(i as u64);
                    }
                }
                c.seed = seed;
            }
            ExperimentConfig::Conjugacy(c) => c.seed = seed,
        }
    }
}

/// Operator part of a config.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OperatorSpec {
    Shift(ShiftOperator),
    Scale { factor: f64 },
    Multiplication(MultiplicationOperator),
}

impl OperatorSpec {
    /// The sequence-space operator, if this is one.
    pub fn sequence_operator(&self) -> Option<Operator> {
        match self {
            OperatorSpec::Shift(s) => Some(Operator::Shift(s.clone())),
            OperatorSpec::Scale { factor } => Some(Operator::Scale { factor: *factor }),
            OperatorSpec::Multiplication(_) => None,
        }
    }
}

fn default_grades() -> Vec<usize> {
    vec![1, 2, 3]
}

fn default_horizon() -> u64 {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    pub operator: OperatorSpec,
    /// Required for shifts and scalar multiples.
    #[serde(default)]
    pub space: Option<SeminormFamily>,
    #[serde(default = "default_grades")]
    pub grades: Vec<usize>,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    /// Compact sets (site labels) for multiplication operators; empty means the whole grid.
    #[serde(default)]
    pub compacts: Vec<Vec<String>>,
    /// Random vectors scanned next to `e_0` for the numeric orbit evidence.
    #[serde(default)]
    pub scan_vectors: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, JsonSchema)]
#[serde(rename_all = "snake_case")]
pub enum ShadowModeSpec {
    Finite,
    Periodic,
    TwoSided,
    Counterexample,
    Adversarial,
}

fn default_tol() -> f64 {
    1e-12
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ShadowConfig {
    pub mode: ShadowModeSpec,
    /// Not used by `counterexample`; a multiplication operator for `adversarial`.
    #[serde(default)]
    pub operator: Option<OperatorSpec>,
    #[serde(default)]
    pub space: Option<SeminormFamily>,
    #[serde(default = "one")]
    pub grade: usize,
    /// Target accuracy; δ is derived from the certificate when `delta` is absent.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    /// Chain length, cycle period, or half-width `m` of a two-sided segment; step cap for `adversarial`.
    #[serde(default = "default_length")]
    pub length: usize,
    /// Start point (default `e_0`).
    #[serde(default)]
    pub x0: Option<SeqVec>,
    /// Defects are drawn inside this window.
    #[serde(default)]
    pub window: Option<IndexWindow>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
    /// Trial `i` uses seed `seed + i`.
    #[serde(default = "one")]
    pub trials: usize,
    /// Explicit trial seeds; replaces `seed` and `trials` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
    /// Also write `step,deviation,bound` traces.
    #[serde(default)]
    pub csv: bool,
}

fn default_length() -> usize {
    20
}

fn default_conj_tol() -> f64 {
    1e-10
}

fn default_samples() -> usize {
    100
}

fn default_sample_window() -> IndexWindow {
    IndexWindow::new(-8, 8).expect("valid window")
}

fn default_amplitude() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ConjugacyConfig {
    pub task: ConjugacyTask,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_sample_window")]
    pub sample_window: IndexWindow,
    #[serde(default = "default_amplitude")]
    pub sample_amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, JsonSchema)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ConjugacyTask {
    /// `φ = I + Ψ⁻¹(T − S)` for `S = T + g`, checked against `T∘φ = φ∘S` on random samples.
    Semiconjugacy {
        operator: OperatorSpec,
        space: SeminormFamily,
        #[serde(default = "one")]
        grade: usize,
        perturbation: BoundedMap,
        /// When set, `sup ‖g‖` is compared with `(1−t)ε/(2cd)` and displacements with `ε`.
        #[serde(default)]
        epsilon: Option<f64>,
        #[serde(default = "default_conj_tol")]
        tol: f64,
    },
    /// Ball-supported homeomorphism taking `a` to `b` (through optional waypoints, one ball per leg).
    Homeomorphism {
        space: SeminormFamily,
        #[serde(default = "one")]
        grade: usize,
        points: Vec<SeqVec>,
        balls: Vec<Ball>,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shadow(extra: serde_json::Value) -> ExperimentConfig {
        let mut v = serde_json::json!({ "command": "shadow", "mode": "counterexample", "delta": 0.01 });
        v.as_object_mut().unwrap().extend(extra.as_object().unwrap().clone());
        serde_json::from_value(v).unwrap()
    }

    #[test]
    fn defaults() {
        let ExperimentConfig::Shadow(c) = shadow(serde_json::json!({})) else { unreachable!() };
        assert_eq!((c.grade, c.length, c.trials, c.tol, c.seed), (1, 20, 1, 1e-12, 0));
        assert_eq!(c.trial_seeds(), [0]);
    }

    #[test]
    fn seed_lists() {
        let mut cfg = shadow(serde_json::json!({ "seed": 9, "seeds": [4, 40, 400] }));
        let ExperimentConfig::Shadow(c) = &cfg else { unreachable!() };
        assert_eq!(c.trial_seeds(), [4, 40, 400]);
        cfg.set_seed(9);
        let ExperimentConfig::Shadow(c) = &cfg else { unreachable!() };
        assert_eq!(c.trial_seeds(), [4, 40, 400]);
        cfg.set_seed(10);
        let ExperimentConfig::Shadow(c) = &cfg else { unreachable!() };
        assert_eq!(c.trial_seeds(), [10, 11, 12]);
        let mut cfg = shadow(serde_json::json!({ "seed": 5, "trials": 3 }));
        cfg.set_seed(7);
        assert_eq!(cfg.seed(), 7);
        let ExperimentConfig::Shadow(c) = &cfg else { unreachable!() };
        assert_eq!(c.trial_seeds(), [7, 8, 9]);
    }

    #[test]
    fn unknown_fields_rejected() {
        let v = serde_json::json!({ "command": "shadow", "mode": "finite", "lenght": 3 });
        assert!(serde_json::from_value::<ExperimentConfig>(v).is_err());
    }
}
