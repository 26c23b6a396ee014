//! Project configuration: one TOML file describing the whole pipeline.
//!
//! Every field has a default reproducing the stock `sat-cascade` study, so an
//! empty file (or no file at all) is a valid configuration. Unknown keys are
//! rejected rather than ignored — a typo in a tolerance should fail loudly,
//! not silently verify the wrong thing.

use std::path::Path;

use serde::Deserialize;

use crate::domain::BoxDomain;
use crate::error::{Error, Result};
use crate::synthesis::SchedulerAutomaton;

/// Axis bounds as written in TOML: `[[lo, hi], ...]`.
type RawBox = Vec<[f64; 2]>;

fn to_box(raw: &RawBox, what: &str) -> Result<BoxDomain> {
    BoxDomain::new(raw.iter().map(|&[lo, hi]| (lo, hi)).collect())
        .map_err(|e| Error::Config(format!("{what}: {e}")))
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectConfig {
    /// Built-in system name; see the registry.
    pub system: String,
    /// Base seed for every sampled check.
    pub seed: u64,
    pub gains: GainsConfig,
    pub grid: GridConfig,
    pub regions: RegionsConfig,
    pub scheduler: SchedulerConfig,
    pub verify: VerifyConfig,
    pub epsilon: EpsilonConfig,
    pub replay: ReplayConfig,
    pub output: OutputConfig,
}

impl Default for ProjectConfig {
    fn default() -> Self {
        Self {
            system: "sat-cascade".into(),
            seed: 0,
            gains: GainsConfig::default(),
            grid: GridConfig::default(),
            regions: RegionsConfig::default(),
            scheduler: SchedulerConfig::default(),
            verify: VerifyConfig::default(),
            epsilon: EpsilonConfig::default(),
            replay: ReplayConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainsConfig {
    /// Synthesis gain; `None` takes the system's stock gain.
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    /// State quantization pitch.
    pub eta: f64,
    /// Input quantization pitch.
    pub mu: f64,
    /// Sampling period.
    pub tau: f64,
    /// Fixed integration step inside one period.
    pub inner_step: f64,
    /// Region of interest.
    pub domain: RawBox,
    /// Input box.
    pub input_bounds: RawBox,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            eta: 0.009,
            mu: 0.5,
            tau: 0.1,
            inner_step: 1e-3,
            domain: vec![[-1.0, 1.0], [-1.0, 1.0]],
            input_bounds: vec![[-10.0, 10.0]],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegionsConfig {
    pub target: RawBox,
    pub obstacles: Vec<RawBox>,
}

impl Default for RegionsConfig {
    fn default() -> Self {
        Self {
            target: vec![[-0.05, 0.05], [-0.05, 0.05]],
            // Two blocks flanking the loop's natural approach corridor.
            obstacles: vec![
                vec![[0.3, 0.5], [0.3, 0.5]],
                vec![[-0.5, -0.3], [-0.5, -0.3]],
            ],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    /// Cycle over 'a' (actuate) and 'u' (hold).
    pub cycle: String,
    /// 0-based initial phase.
    pub initial: usize,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self { cycle: "auu".into(), initial: 1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Sample count per certificate check.
    pub samples: usize,
    /// Acceptance tolerance on the worst sampled defect.
    pub tolerance: f64,
    /// State box the certificate checks sweep (inputs come from
    /// `grid.input_bounds`).
    pub state_bounds: RawBox,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            samples: 100_000,
            tolerance: 1e-9,
            state_bounds: vec![[-2.0, 2.0], [-2.0, 2.0]],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EpsilonConfig {
    /// Deviation budget between continuous and abstract runs.
    pub epsilon: f64,
    pub runs: usize,
    pub steps: usize,
}

impl Default for EpsilonConfig {
    fn default() -> Self {
        Self { epsilon: 0.1, runs: 200, steps: 50 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Sampling periods to replay.
    pub slots: usize,
    /// Continuous initial states, one replay each.
    pub initial_states: Vec<Vec<f64>>,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            slots: 160,
            initial_states: vec![vec![0.8, 0.9], vec![-0.8, -0.9]],
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Directory artifacts are written into.
    pub dir: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: "out".into() }
    }
}

impl ProjectConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let check_pos = |v: f64, what: &str| -> Result<()> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive, got {v}")))
            }
        };
        check_pos(self.grid.eta, "grid.eta")?;
        check_pos(self.grid.mu, "grid.mu")?;
        check_pos(self.grid.tau, "grid.tau")?;
        check_pos(self.grid.inner_step, "grid.inner_step")?;
        check_pos(self.verify.tolerance, "verify.tolerance")?;
        check_pos(self.epsilon.epsilon, "epsilon.epsilon")?;
        if let Some(lambda) = self.gains.lambda {
            check_pos(lambda, "gains.lambda")?;
        }
        // Materialize every box once so malformed bounds fail at load time.
        self.domain()?;
        self.input_box()?;
        self.target()?;
        self.obstacles()?;
        self.state_bounds()?;
        self.scheduler()?;
        let domain = self.domain()?;
        let target = self.target()?;
        if !domain.contains_box(&target) {
            return Err(Error::Config("regions.target must lie inside grid.domain".into()));
        }
        for st in &self.replay.initial_states {
            if st.len() != domain.dim() {
                return Err(Error::Config(format!(
                    "replay initial state {st:?} does not match the domain dimension"
                )));
            }
        }
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        to_box(&self.grid.domain, "grid.domain")
    }

    pub fn input_box(&self) -> Result<BoxDomain> {
        to_box(&self.grid.input_bounds, "grid.input_bounds")
    }

    pub fn target(&self) -> Result<BoxDomain> {
        to_box(&self.regions.target, "regions.target")
    }

    pub fn obstacles(&self) -> Result<Vec<BoxDomain>> {
        self.regions
            .obstacles
            .iter()
            .enumerate()
            .map(|(i, raw)| to_box(raw, &format!("regions.obstacles[{i}]")))
            .collect()
    }

    pub fn state_bounds(&self) -> Result<BoxDomain> {
        to_box(&self.verify.state_bounds, "verify.state_bounds")
    }

    pub fn scheduler(&self) -> Result<SchedulerAutomaton> {
        SchedulerAutomaton::parse(&self.scheduler.cycle, self.scheduler.initial)
            .map_err(|e| Error::Config(format!("scheduler: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_and_missing_sections_take_stock_values() {
        let cfg = ProjectConfig::parse("").unwrap();
        assert_eq!(cfg.system, "sat-cascade");
        assert_eq!(cfg.grid.eta, 0.009);
        assert_eq!(cfg.scheduler.cycle, "auu");
        assert_eq!(cfg.scheduler.initial, 1);
        assert_eq!(cfg.replay.initial_states.len(), 2);
        assert_eq!(cfg.regions.obstacles.len(), 2);
        let partial = ProjectConfig::parse("[grid]\neta = 0.05\n").unwrap();
        assert_eq!(partial.grid.eta, 0.05);
        assert_eq!(partial.grid.tau, 0.1);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            ProjectConfig::parse("[grid]\netaa = 0.05\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(ProjectConfig::parse("foo = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn semantic_validation_catches_bad_values() {
        assert!(ProjectConfig::parse("[grid]\neta = -0.1\n").is_err());
        assert!(ProjectConfig::parse("[grid]\ndomain = [[1.0, -1.0]]\n").is_err());
        assert!(ProjectConfig::parse("[scheduler]\ncycle = \"xyz\"\n").is_err());
        // Target outside the domain.
        assert!(ProjectConfig::parse(
            "[regions]\ntarget = [[5.0, 6.0], [5.0, 6.0]]\n"
        )
        .is_err());
        // Replay state of the wrong dimension.
        assert!(ProjectConfig::parse("[replay]\ninitial_states = [[0.1]]\n").is_err());
    }

    #[test]
    fn boxes_materialize() {
        let cfg = ProjectConfig::default();
        assert_eq!(cfg.domain().unwrap().dim(), 2);
        assert_eq!(cfg.input_box().unwrap().bounds(), &[(-10.0, 10.0)]);
        assert_eq!(cfg.obstacles().unwrap().len(), 2);
        assert_eq!(cfg.scheduler().unwrap().word(3), "uua");
    }
}
