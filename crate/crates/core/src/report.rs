//! Scenario-matrix execution and result files: CSV tables at one decimal,
//! a JSON summary at full precision, and plot-data series.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{BoundaryReport, PriorCalibration};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::scenario::Layout;
use crate::trial::{run_batch, OperatingCharacteristics};

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub safety: Option<usize>,
    pub efficacy: Option<usize>,
    pub layout: Layout,
    pub oc: OperatingCharacteristics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ScenarioMatrix {
    pub cells: Vec<MatrixCell>,
}

impl ScenarioMatrix {
    pub fn cell(&self, safety: usize, efficacy: usize) -> Option<&MatrixCell> {
        self.cells
            .iter()
            .find(|c| c.safety == Some(safety) && c.efficacy == Some(efficacy))
    }

    pub fn mean_patients(&self) -> f64 {
        self.cells.iter().map(|c| c.oc.mean_patients).sum::<f64>() / self.cells.len().max(1) as f64
    }
}

/// Runs every configured scenario with the configuration's seed; each
/// scenario uses the same replication streams.
pub fn run_scenario_matrix(cfg: &RunConfig) -> Result<ScenarioMatrix> {
    cfg.validate()?;
    let model = cfg.model()?;
    let cells = cfg
        .scenario_cells()?
        .into_iter()
        .map(|cell| {
            let oc = run_batch(&cell.scenario, model.as_ref(), &cfg.trial, cfg.n_sims, cfg.seed(), cfg.threads)
                .map_err(|e| Error::Scenario {
                    scenario: cell.scenario.name.clone(),
                    source: Box::new(e),
                })?;
            Ok(MatrixCell {
                safety: cell.safety,
                efficacy: cell.efficacy,
                layout: cell.scenario.layout,
                oc,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ScenarioMatrix { cells })
}

/// Percentage at one decimal.
pub fn pct(x: f64) -> String {
    format!("{x:.1}")
}

/// Per-arm percentages as `(a, b, c)`.
pub fn tuple(xs: &[f64]) -> String {
    format!("({})", xs.iter().map(|x| pct(*x)).collect::<Vec<_>>().join(", "))
}

fn opt(x: Option<f64>) -> String {
    x.map(pct).unwrap_or_default()
}

fn label(c: &MatrixCell) -> String {
    match (c.safety, c.efficacy) {
        (Some(s), Some(e)) => format!("{s}-{e}"),
        _ => c.oc.scenario.clone(),
    }
}

fn prepare(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(path.to_path_buf())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub version: String,
    pub seed: u64,
    pub config: RunConfig,
    pub mean_patients: f64,
    pub cells: Vec<MatrixCell>,
}

const LONG_HEADER: [&str; 20] = [
    "scenario",
    "safety",
    "efficacy",
    "recommended",
    "any_recommended_pct",
    "any_recommended_se",
    "all_desirable_pct",
    "any_desirable_pct",
    "any_desirable_se",
    "null_scenario",
    "mean_patients",
    "patients_se",
    "median_patients",
    "patients_q05",
    "patients_q95",
    "min_patients",
    "max_patients",
    "over_150_pct",
    "mean_duration_weeks",
    "safety_stop_pct",
];

type CellFormat = Box<dyn Fn(&MatrixCell) -> String>;
type PlotValue = fn(&OperatingCharacteristics) -> Option<f64>;

fn wide(matrix: &ScenarioMatrix, value: impl Fn(&MatrixCell) -> String) -> (Vec<String>, Vec<Vec<String>>) {
    let mut rows: Vec<usize> = matrix.cells.iter().filter_map(|c| c.safety).collect();
    let mut cols: Vec<usize> = matrix.cells.iter().filter_map(|c| c.efficacy).collect();
    rows.sort_unstable();
    rows.dedup();
    cols.sort_unstable();
    cols.dedup();
    let header = std::iter::once("safety".to_string())
        .chain(cols.iter().map(|e| format!("efficacy_{e}")))
        .collect();
    let body = rows
        .iter()
        .map(|&s| {
            std::iter::once(s.to_string())
                .chain(cols.iter().map(|&e| matrix.cell(s, e).map(&value).unwrap_or_default()))
                .collect()
        })
        .collect();
    (header, body)
}

/// Writes every result file into `dir` and returns their paths.
pub fn emit_reports(matrix: &ScenarioMatrix, cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let mut out = Vec::new();

    let long: Vec<Vec<String>> = matrix
        .cells
        .iter()
        .map(|c| {
            let o = &c.oc;
            vec![
                label(c),
                c.safety.map(|s| s.to_string()).unwrap_or_default(),
                c.efficacy.map(|e| e.to_string()).unwrap_or_default(),
                tuple(&o.recommended_pct),
                pct(o.any_recommended_pct),
                pct(o.any_recommended_se),
                opt(o.all_desirable_pct),
                opt(o.any_desirable_pct),
                opt(o.any_desirable_se),
                o.null_scenario.to_string(),
                pct(o.mean_patients),
                pct(o.patients_se),
                pct(o.median_patients),
                pct(o.patients_q05),
                pct(o.patients_q95),
                o.min_patients.to_string(),
                o.max_patients.to_string(),
                pct(o.over_150_pct),
                pct(o.mean_duration_weeks),
                pct(o.safety_stop_pct),
            ]
        })
        .collect();
    out.push(write_csv(&dir.join("summary_long.csv"), &LONG_HEADER, &long)?);

    let arms: Vec<Vec<String>> = matrix
        .cells
        .iter()
        .flat_map(|c| {
            (0..c.oc.recommended_pct.len()).map(move |i| {
                vec![
                    label(c),
                    c.layout.arm_label(i + 1),
                    format!("{:?}", c.oc.classes[i]).to_lowercase(),
                    pct(c.oc.recommended_pct[i]),
                    pct(c.oc.recommended_se[i]),
                    pct(c.oc.graduated_pct[i]),
                    pct(c.oc.futility_pct[i]),
                    pct(c.oc.safety_closed_pct[i]),
                ]
            })
        })
        .collect();
    out.push(write_csv(
        &dir.join("recommendations_long.csv"),
        &["scenario", "arm", "class", "recommended_pct", "recommended_se", "graduated_pct", "futility_pct", "safety_closed_pct"],
        &arms,
    )?);

    let tables: [(&str, CellFormat); 5] = [
        ("recommended", Box::new(|c| tuple(&c.oc.recommended_pct))),
        ("any_recommended", Box::new(|c| pct(c.oc.any_recommended_pct))),
        ("all_desirable", Box::new(|c| opt(c.oc.all_desirable_pct))),
        ("any_desirable", Box::new(|c| opt(c.oc.any_desirable_pct))),
        ("mean_patients", Box::new(|c| pct(c.oc.mean_patients))),
    ];
    for (name, value) in tables.iter() {
        let (header, body) = wide(matrix, value);
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        out.push(write_csv(&dir.join(format!("wide_{name}.csv")), &header, &body)?);
    }

    let plots: [(&str, PlotValue); 3] = [
        ("all_desirable", |o| o.all_desirable_pct),
        ("any_desirable", |o| o.any_desirable_pct),
        ("sample_size", |o| Some(o.mean_patients)),
    ];
    for (name, f) in plots {
        let rows: Vec<Vec<String>> = matrix
            .cells
            .iter()
            .filter_map(|c| f(&c.oc).map(|y| vec![label(c), format!("{y}")]))
            .collect();
        out.push(write_csv(&dir.join(format!("plot_{name}.csv")), &["x", "y"], &rows)?);
    }

    let summary = Summary {
        version: ARTIFACT_VERSION.to_string(),
        seed: cfg.seed(),
        config: cfg.clone(),
        mean_patients: matrix.mean_patients(),
        cells: matrix.cells.clone(),
    };
    let path = dir.join("summary.json");
    fs::write(&path, serde_json::to_string_pretty(&summary)?)?;
    out.push(path);
    Ok(out)
}

/// Re-reads the configuration echoed in a summary file.
pub fn config_from_summary(path: &Path) -> Result<RunConfig> {
    let summary: Summary = serde_json::from_str(&fs::read_to_string(path)?)?;
    summary.config.validate()?;
    Ok(summary.config)
}

/// `boundaries.csv` with one row per structure, a per-structure file of
/// every feasible pair, and `boundaries.json`.
pub fn emit_boundary_reports(reports: &[BoundaryReport], dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let header = ["c1", "c2", "n_c", "lower", "upper", "power", "type1", "expected_n0", "expected_n1", "criterion", "trajectories"];
    let row = |r: &BoundaryReport, e: &crate::calibration::BoundaryEvaluation| {
        vec![
            r.config.active_cohort.to_string(),
            r.config.control_cohort.to_string(),
            r.config.external_controls.to_string(),
            format!("{:.3}", e.lower),
            format!("{:.3}", e.upper),
            format!("{:.3}", e.power),
            format!("{:.3}", e.type1),
            pct(e.expected_n0),
            pct(e.expected_n1),
            format!("{:.3}", e.criterion),
            r.config.trajectories.to_string(),
        ]
    };
    let mut out = vec![write_csv(
        &dir.join("boundaries.csv"),
        &header,
        &reports.iter().map(|r| row(r, &r.best)).collect::<Vec<_>>(),
    )?];
    for r in reports {
        let c = &r.config;
        let name = format!("boundaries_feasible_{}_{}_{}.csv", c.active_cohort, c.control_cohort, c.external_controls);
        let rows: Vec<_> = r.feasible.iter().map(|e| row(r, e)).collect();
        out.push(write_csv(&dir.join(name), &header, &rows)?);
    }
    let path = dir.join("boundaries.json");
    fs::write(&path, serde_json::to_string_pretty(reports)?)?;
    out.push(path);
    Ok(out)
}

/// `prior_grid.csv` listing every grid point and `prior_calibration.json`.
pub fn emit_prior_reports(cal: &PriorCalibration, names: &[&str], dir: &Path) -> Result<Vec<PathBuf>> {
    prepare(dir)?;
    let scenarios = cal.best.selection.len();
    let header: Vec<String> = names
        .iter()
        .map(|n| n.to_string())
        .chain((0..scenarios).map(|i| format!("selection_{i}")))
        .chain(std::iter::once("geometric_mean".to_string()))
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    let rows: Vec<Vec<String>> = cal
        .grid
        .iter()
        .map(|g| {
            g.point
                .iter()
                .map(|x| format!("{x}"))
                .chain(g.selection.iter().map(|x| format!("{x:.4}")))
                .chain(std::iter::once(format!("{:.4}", g.geometric_mean)))
                .collect()
        })
        .collect();
    let mut out = vec![write_csv(&dir.join("prior_grid.csv"), &header, &rows)?];
    let path = dir.join("prior_calibration.json");
    fs::write(&path, serde_json::to_string_pretty(cal)?)?;
    out.push(path);
    Ok(out)
}
