//! True dose-toxicity and dose-efficacy scenarios, and the built-in library
//! used by the simulation study.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::math::in_unit_open;
use crate::outcomes::OutcomeModel;

/// How the active arms are arranged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Layout {
    /// `doses` ordered levels of one agent.
    Single { doses: usize },
    /// Combinations of `a_levels` doses of agent A with `b_levels` of agent B.
    /// Active arm `1 + (j - 1) * b_levels + (l - 1)` is combination `(j, l)`.
    Combination { a_levels: usize, b_levels: usize },
}

impl Layout {
    pub fn active_arms(&self) -> usize {
        match *self {
            Layout::Single { doses } => doses,
            Layout::Combination { a_levels, b_levels } => a_levels * b_levels,
        }
    }

    /// Combination indices of an active arm (1-based).
    pub fn combination(&self, arm: usize) -> Option<(usize, usize)> {
        match *self {
            Layout::Combination { b_levels, .. } if arm >= 1 => {
                Some(((arm - 1) / b_levels + 1, (arm - 1) % b_levels + 1))
            }
            _ => None,
        }
    }

    pub fn arm_of(&self, j: usize, l: usize) -> usize {
        match *self {
            Layout::Combination { b_levels, .. } => 1 + (j - 1) * b_levels + (l - 1),
            Layout::Single { .. } => j,
        }
    }

    pub fn arm_label(&self, arm: usize) -> String {
        match self.combination(arm) {
            Some((j, l)) => format!("d{j}s{l}"),
            None if arm == 0 => "control".to_string(),
            None => format!("d{arm}"),
        }
    }
}

/// True per-arm DLE probabilities and hazard ratios; arm 0 is control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub layout: Layout,
    pub dle: Vec<f64>,
    pub hazard_ratios: Vec<f64>,
    #[serde(default)]
    pub outcomes: OutcomeModel,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let arms = self.layout.active_arms() + 1;
        if self.dle.len() != arms || self.hazard_ratios.len() != arms {
            return Err(invalid(
                "scenario",
                format!(
                    "`{}` needs {arms} arms, has {} DLE and {} hazard-ratio entries",
                    self.name,
                    self.dle.len(),
                    self.hazard_ratios.len()
                ),
            ));
        }
        if self.hazard_ratios[0] != 1.0 {
            return Err(invalid("scenario", "control hazard ratio must be 1"));
        }
        if let Some(p) = self.dle.iter().find(|p| !in_unit_open(**p)) {
            return Err(invalid("scenario", format!("DLE probability {p} not in (0, 1)")));
        }
        if self.hazard_ratios.iter().any(|h| !(*h > 0.0)) {
            return Err(invalid("scenario", "hazard ratios must be positive"));
        }
        self.outcomes.validate()
    }

    pub fn active_arms(&self) -> usize {
        self.layout.active_arms()
    }

    /// True additional DLE risk of an active arm.
    pub fn excess_risk(&self, arm: usize) -> f64 {
        self.dle[arm] - self.dle[0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoseClass {
    Incorrect,
    Undesirable,
    Acceptable,
    Desirable,
}

/// Label for a dose from its true excess risk and hazard ratio. Hazard
/// ratios between the tabulated values are classified by the nearest one.
pub fn classify_dose(excess_risk: f64, hazard_ratio: f64, safety_bound: f64) -> DoseClass {
    if excess_risk > safety_bound + 1e-12 {
        return DoseClass::Incorrect;
    }
    if hazard_ratio < 1.125 {
        DoseClass::Incorrect
    } else if hazard_ratio < 1.375 {
        DoseClass::Undesirable
    } else if hazard_ratio < 1.625 {
        DoseClass::Acceptable
    } else {
        DoseClass::Desirable
    }
}

/// Labels for every active arm (index `arm - 1`).
pub fn classify_doses(scenario: &Scenario, safety_bound: f64) -> Vec<DoseClass> {
    (1..=scenario.active_arms())
        .map(|arm| classify_dose(scenario.excess_risk(arm), scenario.hazard_ratios[arm], safety_bound))
        .collect()
}

/// Index of the arm whose excess risk is closest to `gamma`; ties to the
/// lower arm. Arm 0 is a candidate.
pub fn target_arm(scenario: &Scenario, gamma: f64) -> usize {
    let mut best = 0;
    let mut gap = gamma.abs();
    for arm in 1..=scenario.active_arms() {
        let g = (scenario.excess_risk(arm) - gamma).abs();
        if g < gap - 1e-12 {
            best = arm;
            gap = g;
        }
    }
    best
}

// Single agent, (d0, d1, d2, d3).
const SINGLE_SAFETY: [[f64; 4]; 5] = [
    [0.10, 0.12, 0.13, 0.15],
    [0.10, 0.12, 0.15, 0.30],
    [0.10, 0.15, 0.30, 0.45],
    [0.10, 0.30, 0.45, 0.60],
    [0.10, 0.45, 0.60, 0.60],
];
const SINGLE_EFFICACY: [[f64; 4]; 5] = [
    [1.00, 1.00, 1.00, 1.00],
    [1.00, 1.00, 1.75, 1.75],
    [1.00, 1.50, 1.75, 1.75],
    [1.00, 1.50, 1.75, 2.00],
    [1.00, 1.75, 2.00, 2.00],
];

// Two doses of A by three of B, listed as [d_j][s_l]; control is 0.10 / 1.00.
const COMBO_SAFETY: [[[f64; 3]; 2]; 4] = [
    [[0.10, 0.13, 0.15], [0.12, 0.15, 0.18]],
    [[0.10, 0.25, 0.50], [0.12, 0.30, 0.55]],
    [[0.15, 0.25, 0.30], [0.30, 0.35, 0.45]],
    [[0.40, 0.45, 0.50], [0.45, 0.50, 0.55]],
];
const COMBO_EFFICACY: [[[f64; 3]; 2]; 4] = [
    [[1.00, 1.00, 1.00], [1.00, 1.00, 1.00]],
    [[1.00, 1.25, 1.50], [1.25, 1.50, 1.75]],
    [[1.00, 1.25, 1.50], [1.50, 1.75, 2.00]],
    [[1.00, 1.50, 1.75], [1.50, 1.75, 1.75]],
];

pub const SINGLE_SAFETY_SCENARIOS: usize = SINGLE_SAFETY.len();
pub const SINGLE_EFFICACY_SCENARIOS: usize = SINGLE_EFFICACY.len();
pub const COMBO_SAFETY_SCENARIOS: usize = COMBO_SAFETY.len();
pub const COMBO_EFFICACY_SCENARIOS: usize = COMBO_EFFICACY.len();

/// Single-agent scenario `safety`-`efficacy`, named `single-<s>-<e>`.
pub fn single_agent(safety: usize, efficacy: usize) -> Result<Scenario> {
    let (Some(dle), Some(hr)) = (SINGLE_SAFETY.get(safety), SINGLE_EFFICACY.get(efficacy)) else {
        return Err(Error::UnknownScenario(format!("single-{safety}-{efficacy}")));
    };
    Ok(Scenario {
        name: format!("single-{safety}-{efficacy}"),
        layout: Layout::Single { doses: 3 },
        dle: dle.to_vec(),
        hazard_ratios: hr.to_vec(),
        outcomes: OutcomeModel::default(),
    })
}

/// Dual-agent scenario `safety`-`efficacy`, named `combo-<s>-<e>`.
pub fn combination(safety: usize, efficacy: usize) -> Result<Scenario> {
    let (Some(dle), Some(hr)) = (COMBO_SAFETY.get(safety), COMBO_EFFICACY.get(efficacy)) else {
        return Err(Error::UnknownScenario(format!("combo-{safety}-{efficacy}")));
    };
    let flat = |table: &[[f64; 3]; 2], control: f64| {
        std::iter::once(control)
            .chain(table.iter().flat_map(|row| row.iter().copied()))
            .collect::<Vec<_>>()
    };
    Ok(Scenario {
        name: format!("combo-{safety}-{efficacy}"),
        layout: Layout::Combination {
            a_levels: 2,
            b_levels: 3,
        },
        dle: flat(dle, 0.10),
        hazard_ratios: flat(hr, 1.0),
        outcomes: OutcomeModel::default(),
    })
}

/// Resolve a built-in scenario by name.
pub fn builtin(name: &str) -> Result<Scenario> {
    let parts: Vec<&str> = name.split('-').collect();
    let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::UnknownScenario(name.into()));
    match parts.as_slice() {
        ["single", s, e] => single_agent(parse(s)?, parse(e)?),
        ["combo", s, e] => combination(parse(s)?, parse(e)?),
        _ => Err(Error::UnknownScenario(name.into())),
    }
}
