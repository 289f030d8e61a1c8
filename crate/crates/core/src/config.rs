//! Run configuration: one TOML file names the design, the scenarios, every
//! parameter block and the seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{
    BoundarySearchConfig, ComboHyperparameterGrid, HyperparameterGrid, SafetyRunConfig,
};
use crate::error::{Error, Result};
use crate::safety_combo::SafetyPriorCombo;
use crate::safety_mono::SafetyPriorMono;
use crate::scenario::{self, Layout, Scenario};
use crate::trial::{ComboModel, MonoModel, SafetyModel, TrialConfig};

/// Shipped configurations by name.
pub const BUILTIN_CONFIGS: [(&str, &str); 2] = [
    ("single-baseline", include_str!("../configs/single-baseline.toml")),
    ("combo-baseline", include_str!("../configs/combo-baseline.toml")),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum Design {
    Single { doses: usize },
    Combination { a_levels: usize, b_levels: usize },
}

impl Design {
    pub fn layout(&self) -> Layout {
        match *self {
            Design::Single { doses } => Layout::Single { doses },
            Design::Combination { a_levels, b_levels } => Layout::Combination { a_levels, b_levels },
        }
    }
}

/// Built-in scenarios are the product `safety x efficacy` of table rows;
/// inline scenarios follow them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioSelection {
    pub safety: Vec<usize>,
    pub efficacy: Vec<usize>,
    pub inline: Vec<Scenario>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonoPriorSpec {
    pub p0: f64,
    pub nu: f64,
    pub mu2: f64,
    pub var1: f64,
    pub var2: f64,
}

impl Default for MonoPriorSpec {
    fn default() -> Self {
        Self {
            p0: 0.10,
            nu: 0.125,
            mu2: -0.25,
            var1: 1.40,
            var2: 0.35,
        }
    }
}

impl MonoPriorSpec {
    pub fn prior(&self) -> Result<SafetyPriorMono> {
        SafetyPriorMono::new(self.p0, self.nu, self.mu2, self.var1, self.var2)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComboPriorSpec {
    pub p0: f64,
    pub nu_d: f64,
    pub nu_s: f64,
    pub mu21: f64,
    pub mu22: f64,
    pub var1: f64,
    pub var_slope: f64,
    pub var_eta: f64,
}

impl Default for ComboPriorSpec {
    fn default() -> Self {
        Self {
            p0: 0.10,
            nu_d: 0.075,
            nu_s: 0.075,
            mu21: 0.0,
            mu22: 0.0,
            var1: 0.6,
            var_slope: 0.25,
            var_eta: 0.10,
        }
    }
}

impl ComboPriorSpec {
    pub fn prior(&self) -> Result<SafetyPriorCombo> {
        SafetyPriorCombo::new(
            self.p0,
            self.nu_d,
            self.nu_s,
            self.mu21,
            self.mu22,
            self.var1,
            self.var_slope,
            self.var_eta,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PriorBlock {
    pub mono: MonoPriorSpec,
    pub combo: ComboPriorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationBlock {
    pub boundaries: BoundarySearchConfig,
    /// `(c1, c2, n_c)` structures searched by `calibrate-boundaries`.
    pub structures: Vec<[usize; 3]>,
    pub prior_grid: HyperparameterGrid,
    pub combo_grid: ComboHyperparameterGrid,
    pub safety_run: SafetyRunConfig,
    /// Safety scenarios whose target selections are averaged.
    pub prior_scenarios: Vec<usize>,
}

impl Default for CalibrationBlock {
    fn default() -> Self {
        Self {
            boundaries: BoundarySearchConfig::default(),
            structures: vec![[4, 2, 30], [3, 3, 30], [2, 1, 30], [2, 2, 30], [4, 2, 0], [3, 3, 0]],
            prior_grid: HyperparameterGrid::default(),
            combo_grid: ComboHyperparameterGrid::default(),
            safety_run: SafetyRunConfig::default(),
            prior_scenarios: vec![1, 2, 3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory; there is no clock-based fallback.
    pub seed: Option<u64>,
    #[serde(default = "default_sims")]
    pub n_sims: usize,
    /// Worker threads; 0 uses every core.
    #[serde(default)]
    pub threads: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub design: Design,
    #[serde(default)]
    pub scenarios: ScenarioSelection,
    #[serde(default)]
    pub trial: TrialConfig,
    #[serde(default)]
    pub prior: PriorBlock,
    #[serde(default)]
    pub calibration: CalibrationBlock,
}

fn default_sims() -> usize {
    1000
}

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

/// A scenario with its position in the safety x efficacy matrix, when it
/// came from the built-in tables.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioCell {
    pub safety: Option<usize>,
    pub efficacy: Option<usize>,
    pub scenario: Scenario,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = BUILTIN_CONFIGS
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t)
            .ok_or_else(|| config_err("config", format!("no built-in configuration `{name}`")))?;
        Self::from_toml_str(text)
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated configuration has a seed")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed.is_none() {
            return Err(config_err("seed", "a seed is mandatory"));
        }
        if self.n_sims == 0 {
            return Err(config_err("n_sims", "must be at least 1"));
        }
        fn wrap(field: &'static str) -> impl Fn(Error) -> Error {
            move |e| config_err(field, e.to_string())
        }
        self.trial.validate().map_err(wrap("trial"))?;
        let (safety_rows, efficacy_rows) = match self.design {
            Design::Single { doses } => {
                if doses == 0 {
                    return Err(config_err("design.doses", "need at least one dose"));
                }
                self.prior.mono.prior().map_err(wrap("prior.mono"))?;
                crate::safety_mono::build_skeleton(&self.prior.mono.prior()?, doses)
                    .map_err(wrap("prior.mono"))?;
                (scenario::SINGLE_SAFETY_SCENARIOS, scenario::SINGLE_EFFICACY_SCENARIOS)
            }
            Design::Combination { a_levels, b_levels } => {
                if a_levels == 0 || b_levels == 0 {
                    return Err(config_err("design", "need at least one level per agent"));
                }
                let prior = self.prior.combo.prior().map_err(wrap("prior.combo"))?;
                crate::safety_combo::build_combo_skeletons(&prior, a_levels, b_levels)
                    .map_err(wrap("prior.combo"))?;
                (scenario::COMBO_SAFETY_SCENARIOS, scenario::COMBO_EFFICACY_SCENARIOS)
            }
        };
        let sel = &self.scenarios;
        if sel.safety.is_empty() != sel.efficacy.is_empty() {
            return Err(config_err("scenarios", "list both safety and efficacy rows, or neither"));
        }
        if let Some(s) = sel.safety.iter().find(|&&s| s >= safety_rows) {
            return Err(config_err("scenarios.safety", format!("row {s} does not exist")));
        }
        if let Some(e) = sel.efficacy.iter().find(|&&e| e >= efficacy_rows) {
            return Err(config_err("scenarios.efficacy", format!("row {e} does not exist")));
        }
        let built_in_layout = match self.design {
            Design::Single { doses } => doses == 3,
            Design::Combination { a_levels, b_levels } => (a_levels, b_levels) == (2, 3),
        };
        if !sel.safety.is_empty() && !built_in_layout {
            return Err(config_err("scenarios", "built-in scenarios need the built-in grid shape"));
        }
        for s in &sel.inline {
            s.validate().map_err(wrap("scenarios.inline"))?;
            if s.layout != self.design.layout() {
                return Err(config_err("scenarios.inline", format!("`{}` does not match the design", s.name)));
            }
        }
        self.calibration.boundaries.validate().map_err(wrap("calibration.boundaries"))?;
        self.calibration.prior_grid.validate().map_err(wrap("calibration.prior_grid"))?;
        Ok(())
    }

    pub fn scenario_cells(&self) -> Result<Vec<ScenarioCell>> {
        let mut cells = Vec::new();
        for &s in &self.scenarios.safety {
            for &e in &self.scenarios.efficacy {
                let scenario = match self.design {
                    Design::Single { .. } => scenario::single_agent(s, e)?,
                    Design::Combination { .. } => scenario::combination(s, e)?,
                };
                cells.push(ScenarioCell {
                    safety: Some(s),
                    efficacy: Some(e),
                    scenario,
                });
            }
        }
        cells.extend(self.scenarios.inline.iter().cloned().map(|scenario| ScenarioCell {
            safety: None,
            efficacy: None,
            scenario,
        }));
        Ok(cells)
    }

    pub fn model(&self) -> Result<Box<dyn SafetyModel>> {
        Ok(match self.design {
            Design::Single { doses } => Box::new(MonoModel::new(self.prior.mono.prior()?, doses)?),
            Design::Combination { a_levels, b_levels } => {
                Box::new(ComboModel::new(self.prior.combo.prior()?, a_levels, b_levels)?)
            }
        })
    }
}

/// Reads a configuration file, or a built-in one when `path` names it.
pub fn load_config(path: impl AsRef<Path>) -> Result<RunConfig> {
    let path = path.as_ref();
    if !path.exists() {
        if let Some(name) = path.to_str().filter(|n| BUILTIN_CONFIGS.iter().any(|(b, _)| b == n)) {
            return RunConfig::builtin(name);
        }
    }
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_baseline_loads() {
        let c = RunConfig::builtin("single-baseline").unwrap();
        assert_eq!((c.trial.active_cohort, c.trial.control_cohort), (4, 2));
        assert_eq!(c.trial.efficacy.shared_controls, 30);
        assert_eq!((c.trial.policy.gamma, c.trial.policy.delta), (0.20, 0.05));
        assert_eq!(c.trial.efficacy.target_hr, 1.75);
        assert_eq!(c.scenario_cells().unwrap().len(), 25);
        let combo = RunConfig::builtin("combo-baseline").unwrap();
        assert_eq!(combo.scenario_cells().unwrap().len(), 16);
    }

    #[test]
    fn rejects_bad_overdose_threshold() {
        let text = BUILTIN_CONFIGS[0].1.replace("c_overdose = 0.25", "c_overdose = 1.5");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("c_overdose"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let text = BUILTIN_CONFIGS[0].1.replace("seed = 20210521", "");
        let err = RunConfig::from_toml_str(&text).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "seed"), "{err}");
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = format!("{}\n[trial.extra]\nx = 1\n", BUILTIN_CONFIGS[0].1);
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Parse(_))));
        let text = BUILTIN_CONFIGS[0].1.replace("n_sims", "nsims");
        assert!(matches!(RunConfig::from_toml_str(&text), Err(Error::Parse(_))));
    }

    #[test]
    fn toml_and_json_round_trip() {
        for (name, _) in BUILTIN_CONFIGS {
            let c = RunConfig::builtin(name).unwrap();
            assert_eq!(RunConfig::from_toml_str(&c.to_toml_string().unwrap()).unwrap(), c);
            let json = serde_json::to_string(&c).unwrap();
            assert_eq!(serde_json::from_str::<RunConfig>(&json).unwrap(), c);
        }
    }

    #[test]
    fn inline_scenario_must_match_design() {
        let mut c = RunConfig::builtin("single-baseline").unwrap();
        let mut s = scenario::combination(0, 0).unwrap();
        s.name = "mismatch".into();
        c.scenarios.inline.push(s);
        assert!(c.validate().is_err());
    }
}
