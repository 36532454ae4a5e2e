//! Report and frontier emission. The JSON report mirrors the solver
//! outcome field by field, echoes the configuration for round-trip
//! checks, and keeps the timing field last so byte comparisons can strip
//! it; numeric output stays at full precision in both formats.

use crate::config::RunConfig;
use mvdual_core::dual::{FrontierRow, SolveReport};
use serde::Serialize;
use std::path::Path;

#[derive(Debug, Clone, Serialize)]
pub struct MultipliersDoc {
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KktDoc {
    pub max_violation_zero_set: f64,
    pub max_violation_active_set: f64,
    pub max_negative_wealth: f64,
    pub zero_set_fraction: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportDoc {
    pub multipliers: Option<MultipliersDoc>,
    pub degenerate: bool,
    pub variance: f64,
    pub mean_wealth: f64,
    pub initial_value: f64,
    pub budget_gap: f64,
    pub kkt: Option<KktDoc>,
    pub zero_set_fraction: f64,
    pub min_wealth: f64,
    pub negative_fraction: f64,
    pub converged: bool,
    pub picard_iterations: usize,
    pub outer_evaluations: usize,
    pub bracket: Option<(f64, f64)>,
    pub max_condition_number: f64,
    pub max_residual_norm: f64,
    pub config: RunConfig,
    pub timing_seconds: f64,
}

impl ReportDoc {
    pub fn new(rep: &SolveReport<f64>, config: RunConfig, timing_seconds: f64) -> Self {
        ReportDoc {
            multipliers: rep.multipliers.as_ref().map(|m| MultipliersDoc {
                lambda1: m.lambda1,
                lambda2: m.lambda2,
            }),
            degenerate: rep.degenerate,
            variance: rep.variance,
            mean_wealth: rep.mean_wealth,
            initial_value: rep.initial_value,
            budget_gap: rep.budget_gap,
            kkt: rep.kkt.as_ref().map(|k| KktDoc {
                max_violation_zero_set: k.max_violation_zero_set,
                max_violation_active_set: k.max_violation_active_set,
                max_negative_wealth: k.max_negative_wealth,
                zero_set_fraction: k.zero_set_fraction,
            }),
            zero_set_fraction: rep.zero_set_fraction,
            min_wealth: rep.min_wealth,
            negative_fraction: rep.negative_fraction,
            converged: rep.converged,
            picard_iterations: rep.picard_iterations,
            outer_evaluations: rep.outer_evaluations,
            bracket: rep.bracket,
            max_condition_number: rep.max_condition_number,
            max_residual_norm: rep.max_residual_norm,
            config,
            timing_seconds,
        }
    }
}

pub fn write_json(path: &Path, doc: &ReportDoc) -> Result<(), String> {
    let body = serde_json::to_string_pretty(doc)
        .map_err(|e| format!("cannot serialize report: {e}"))?;
    std::fs::write(path, body + "\n").map_err(|e| format!("cannot write {}: {e}", path.display()))
}

/// CSV sweep output: header plus one row per target, in the order given.
/// Unsolved rows leave the multiplier cells empty.
pub fn frontier_csv(rows: &[FrontierRow<f64>]) -> String {
    let mut out = String::from("c,variance,lambda1,lambda2,degenerate,converged\n");
    for row in rows {
        let (l1, l2) = match &row.multipliers {
            Some(m) => (m.lambda1.to_string(), m.lambda2.to_string()),
            None => (String::new(), String::new()),
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.target_mean, row.variance, l1, l2, row.degenerate, row.converged
        ));
    }
    out
}
