//! Run configuration: one JSON document with model, problem, numerics,
//! and output blocks. Unknown keys are rejected, command-line overrides
//! arrive as dotted `key=value` paths applied before deserialization,
//! and the loaded form serializes back to a document that re-parses to
//! an identical configuration (the report echoes it for that check).

use mvdual_core::drivers::{
    borrow_driver, default_large_investor_driver, linear_driver, tax_driver, Curve, LinearParams,
    Volatility, WealthDriver,
};
use mvdual_core::dual::ProblemSpec;
use mvdual_core::fbsde::PicardConfig;
use mvdual_core::paths::{make_grid, simulate_paths, PathBundle};
use mvdual_core::bsde::RegressionConfig;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::path::Path;
use std::sync::Arc;

/// Configuration failure with the diagnostics the exit-1 contract
/// promises: a line/column for text-level errors, the offending key for
/// structural ones.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for ConfigError {}

fn cfg_err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Linear,
    LargeInvestor,
    Tax,
    Borrow,
}

/// Volatility entry: a scalar multiple of the identity or a full d x d
/// matrix in row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SigmaSpec {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    #[serde(rename = "type")]
    pub kind: ModelKind,
    #[serde(default)]
    pub r: f64,
    pub theta: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: SigmaSpec,
    /// Tax model only: fraction of gains withheld.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    /// Borrow model only: rate charged on borrowed capital.
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub borrow_rate: Option<f64>,
    /// Large-investor model only: price-impact scale.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub impact_scale: Option<f64>,
}

fn default_sigma() -> SigmaSpec {
    SigmaSpec::Scalar(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemBlock {
    /// Horizon in years.
    #[serde(rename = "T", default = "default_horizon")]
    pub horizon: f64,
    /// Driving Brownian dimension; must match the risk-premium length.
    #[serde(default = "default_dim")]
    pub d: usize,
    /// Committed initial wealth.
    pub y: f64,
    /// Target terminal mean.
    pub c: f64,
}

fn default_horizon() -> f64 {
    1.0
}

fn default_dim() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardBlock {
    pub max_iters: usize,
    pub tol: f64,
    pub damping: f64,
}

impl Default for PicardBlock {
    fn default() -> Self {
        PicardBlock {
            max_iters: 50,
            tol: 1e-4,
            damping: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsBlock {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub antithetic: bool,
    pub basis_degree: usize,
    pub picard: PicardBlock,
}

impl Default for NumericsBlock {
    fn default() -> Self {
        NumericsBlock {
            n_paths: 100_000,
            n_steps: 100,
            seed: 0,
            antithetic: true,
            basis_degree: 3,
            picard: PicardBlock::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub report: String,
    pub frontier: String,
    pub format: OutputFormat,
}

impl Default for OutputBlock {
    fn default() -> Self {
        OutputBlock {
            report: "report.json".into(),
            frontier: "frontier.csv".into(),
            format: OutputFormat::Json,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelBlock,
    pub problem: ProblemBlock,
    #[serde(default)]
    pub numerics: NumericsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

/// Parses the file, applies `--set` overrides and the seed shorthand,
/// deserializes strictly, and validates cross-field constraints.
pub fn load(
    path: &Path,
    sets: &[String],
    seed: Option<u64>,
) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| cfg_err(format!("cannot read {}: {e}", path.display())))?;
    let mut value: serde_json::Value = serde_json::from_str(&text).map_err(|e| {
        cfg_err(format!(
            "{} is not valid JSON at line {} column {}: {e}",
            path.display(),
            e.line(),
            e.column()
        ))
    })?;
    for s in sets {
        apply_set(&mut value, s)?;
    }
    if let Some(sd) = seed {
        apply_set(&mut value, &format!("numerics.seed={sd}"))?;
    }
    let cfg: RunConfig = serde_json::from_value(value)
        .map_err(|e| cfg_err(format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

/// One dotted override: `numerics.n_paths=20000`. The value is parsed as
/// JSON when it is a JSON literal, otherwise taken as a string.
fn apply_set(root: &mut serde_json::Value, spec: &str) -> Result<(), ConfigError> {
    let (key_path, raw) = spec
        .split_once('=')
        .ok_or_else(|| cfg_err(format!("override '{spec}' is not of the form key=value")))?;
    if key_path.is_empty() {
        return Err(cfg_err(format!("override '{spec}' has an empty key")));
    }
    let val: serde_json::Value = serde_json::from_str(raw)
        .unwrap_or_else(|_| serde_json::Value::String(raw.to_string()));
    let mut cursor = root;
    let parts: Vec<&str> = key_path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        if !cursor.is_object() {
            return Err(cfg_err(format!(
                "override '{spec}': '{}' is not an object",
                parts[..i].join(".")
            )));
        }
        let map = cursor.as_object_mut().expect("checked above");
        if i + 1 == parts.len() {
            map.insert(part.to_string(), val);
            return Ok(());
        }
        cursor = map
            .entry(part.to_string())
            .or_insert_with(|| serde_json::Value::Object(Default::default()));
    }
    unreachable!("split never yields an empty iterator")
}

impl RunConfig {
    /// Cross-field constraints that serde cannot express. Module-level
    /// preconditions on rates and volatility are re-checked by the
    /// constructors in `params` and `driver`.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let d = self.problem.d;
        if d == 0 {
            return Err(cfg_err("problem.d: dimension must be at least 1"));
        }
        if self.model.theta.len() != d {
            return Err(cfg_err(format!(
                "model.theta has {} entries but problem.d = {d}",
                self.model.theta.len()
            )));
        }
        if let SigmaSpec::Matrix(rows) = &self.model.sigma {
            if rows.len() != d || rows.iter().any(|r| r.len() != d) {
                return Err(cfg_err(format!("model.sigma must be a {d} x {d} matrix")));
            }
        }
        if !(self.problem.horizon > 0.0) {
            return Err(cfg_err("problem.T: horizon must be positive"));
        }
        if !(self.problem.y > 0.0) || !(self.problem.c > 0.0) {
            return Err(cfg_err("problem.y and problem.c must be positive"));
        }
        match self.model.kind {
            ModelKind::Tax => {
                if self.model.alpha.is_none() {
                    return Err(cfg_err("model.alpha is required for the tax model"));
                }
            }
            ModelKind::Borrow => {
                if self.model.borrow_rate.is_none() {
                    return Err(cfg_err("model.R is required for the borrow model"));
                }
            }
            _ => {}
        }
        if self.model.alpha.is_some() && self.model.kind != ModelKind::Tax {
            return Err(cfg_err("model.alpha only applies to the tax model"));
        }
        if self.model.borrow_rate.is_some() && self.model.kind != ModelKind::Borrow {
            return Err(cfg_err("model.R only applies to the borrow model"));
        }
        if self.model.impact_scale.is_some() && self.model.kind != ModelKind::LargeInvestor {
            return Err(cfg_err(
                "model.impact_scale only applies to the large_investor model",
            ));
        }
        if self.numerics.n_paths < 2 {
            return Err(cfg_err("numerics.n_paths must be at least 2"));
        }
        if self.numerics.antithetic && self.numerics.n_paths % 2 != 0 {
            return Err(cfg_err(
                "numerics.n_paths must be even with antithetic sampling",
            ));
        }
        if self.numerics.n_steps == 0 {
            return Err(cfg_err("numerics.n_steps must be at least 1"));
        }
        if self.numerics.basis_degree == 0 || self.numerics.basis_degree > 10 {
            return Err(cfg_err("numerics.basis_degree must be in 1..=10"));
        }
        if !(self.numerics.picard.tol > 0.0) {
            return Err(cfg_err("numerics.picard.tol must be positive"));
        }
        if !(self.numerics.picard.damping > 0.0 && self.numerics.picard.damping <= 1.0) {
            return Err(cfg_err("numerics.picard.damping must be in (0, 1]"));
        }
        if self.numerics.picard.max_iters == 0 {
            return Err(cfg_err("numerics.picard.max_iters must be at least 1"));
        }
        Ok(())
    }

    pub fn params(&self) -> Result<LinearParams<f64>, ConfigError> {
        let d = self.problem.d;
        let vol = match &self.model.sigma {
            SigmaSpec::Scalar(v) => Volatility::scalar(*v, d),
            SigmaSpec::Matrix(rows) => {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                Volatility::constant(flat, d)
            }
        }
        .map_err(|e| cfg_err(format!("model.sigma: {e}")))?;
        LinearParams::new(
            Curve::Constant(self.model.r),
            mvdual_core::drivers::VecCurve::Constant(self.model.theta.clone()),
            vol,
        )
        .map_err(|e| cfg_err(format!("model: {e}")))
    }

    pub fn driver(&self) -> Result<Arc<dyn WealthDriver<f64>>, ConfigError> {
        let params = self.params()?;
        let dr: Arc<dyn WealthDriver<f64>> = match self.model.kind {
            ModelKind::Linear => Arc::new(linear_driver(params)),
            ModelKind::Tax => Arc::new(
                tax_driver(params, self.model.alpha.expect("validated"))
                    .map_err(|e| cfg_err(format!("model: {e}")))?,
            ),
            ModelKind::Borrow => Arc::new(
                borrow_driver(
                    params,
                    Curve::Constant(self.model.borrow_rate.expect("validated")),
                )
                .map_err(|e| cfg_err(format!("model: {e}")))?,
            ),
            ModelKind::LargeInvestor => Arc::new(
                default_large_investor_driver(params, self.model.impact_scale.unwrap_or(0.05))
                    .map_err(|e| cfg_err(format!("model: {e}")))?,
            ),
        };
        Ok(dr)
    }

    pub fn problem_spec(&self) -> Result<ProblemSpec<f64>, ConfigError> {
        ProblemSpec::new(self.driver()?, self.problem.y, self.problem.c)
            .map_err(|e| cfg_err(format!("problem: {e}")))
    }

    pub fn simulate(&self) -> Result<PathBundle<f64>, ConfigError> {
        let grid = make_grid(self.problem.horizon, self.numerics.n_steps)
            .map_err(|e| cfg_err(format!("numerics: {e}")))?;
        simulate_paths(
            &grid,
            self.problem.d,
            self.numerics.n_paths,
            self.numerics.seed,
            self.numerics.antithetic,
        )
        .map_err(|e| cfg_err(format!("numerics: {e}")))
    }

    pub fn regression(&self) -> RegressionConfig {
        RegressionConfig {
            basis_degree: self.numerics.basis_degree,
            ..RegressionConfig::default()
        }
    }

    pub fn picard(&self) -> PicardConfig<f64> {
        PicardConfig {
            max_iterations: self.numerics.picard.max_iters,
            tolerance: self.numerics.picard.tol,
            damping: self.numerics.picard.damping,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn golden_text() -> &'static str {
        r#"{
            "model": {"type": "linear", "r": 0.0, "theta": [0.2], "sigma": 0.2},
            "problem": {"T": 1.0, "d": 1, "y": 0.95, "c": 1.0},
            "numerics": {"n_paths": 1000, "n_steps": 10, "seed": 7, "antithetic": true, "basis_degree": 3,
                         "picard": {"max_iters": 50, "tol": 1e-4, "damping": 1.0}},
            "output": {"report": "report.json", "frontier": "frontier.csv", "format": "json"}
        }"#
    }

    fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let v: serde_json::Value = serde_json::from_str(text).unwrap();
        let cfg: RunConfig =
            serde_json::from_value(v).map_err(|e| ConfigError(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn round_trips_to_identical_config() {
        let cfg = parse(golden_text()).unwrap();
        let echoed = serde_json::to_string(&cfg).unwrap();
        let back = parse(&echoed).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = golden_text().replace("\"r\": 0.0", "\"r\": 0.0, \"drift\": 0.1");
        let err = parse(&text).unwrap_err();
        assert!(err.0.contains("drift"), "{}", err.0);
    }

    #[test]
    fn model_parameters_are_gated_by_type() {
        let text = golden_text().replace("\"r\": 0.0", "\"r\": 0.0, \"alpha\": 0.1");
        assert!(parse(&text).is_err());
        let text = golden_text().replace("\"linear\"", "\"tax\"");
        assert!(parse(&text).is_err(), "tax without alpha must fail");
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let mut v: serde_json::Value = serde_json::from_str(golden_text()).unwrap();
        apply_set(&mut v, "numerics.n_paths=500").unwrap();
        apply_set(&mut v, "model.theta=[0.3]").unwrap();
        apply_set(&mut v, "output.report=other.json").unwrap();
        let cfg: RunConfig = serde_json::from_value(v).unwrap();
        assert_eq!(cfg.numerics.n_paths, 500);
        assert_eq!(cfg.model.theta, vec![0.3]);
        assert_eq!(cfg.output.report, "other.json");
    }

    #[test]
    fn dimension_mismatch_is_diagnosed() {
        let text = golden_text().replace("\"d\": 1", "\"d\": 2");
        let err = parse(&text).unwrap_err();
        assert!(err.0.contains("theta"), "{}", err.0);
    }
}
