//! The flat key-value configuration format.
//!
//! One `key = value` pair per line; `#` starts a comment. List values are
//! comma-separated and expand as a cross product when they feed a grid.
//! Fractions like `3/7` are accepted wherever a float is.

use std::collections::BTreeMap;
use std::path::Path;

use crate::basis::BasisFamily;
use crate::dgp::{DgpConfig, ErrorDist, ErrorFilterScale, ErrorStructure, LambdaMode, SpatialDesign, V2Scale};
use crate::error::{Error, Result};
use crate::harness::{ExperimentPlan, GridPoint};
use crate::shac::KernelSpec;
use crate::wald::{MenuOrdering, TargetBlock, TestId, TestSettings, VarianceMode};

use super::csv::CsvSchema;

#[derive(Debug, Clone, Default)]
pub struct ConfigMap {
    entries: BTreeMap<String, String>,
}

impl ConfigMap {
    pub fn parse_str(text: &str) -> Result<ConfigMap> {
        let mut entries = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`", lineno + 1))
            })?;
            let key = key.trim().to_string();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            if entries.insert(key.clone(), value.trim().to_string()).is_some() {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    lineno + 1
                )));
            }
        }
        Ok(ConfigMap { entries })
    }

    pub fn parse_file<P: AsRef<Path>>(path: P) -> Result<ConfigMap> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read {}: {e}", path.as_ref().display()))
        })?;
        ConfigMap::parse_str(&text)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.entries.insert(key.to_string(), value);
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|s| s.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Config(format!("missing required key {key:?}")))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn get_u64(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::Config(format!("{key} = {s:?} is not an integer"))),
        }
    }

    pub fn get_usize(&self, key: &str, default: usize) -> Result<usize> {
        Ok(self.get_u64(key, default as u64)? as usize)
    }

    pub fn get_bool(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("yes") | Some("1") => Ok(true),
            Some("false") | Some("no") | Some("0") => Ok(false),
            Some(s) => Err(Error::Config(format!("{key} = {s:?} is not a boolean"))),
        }
    }

    pub fn get_fraction(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(s) => parse_fraction(key, s),
        }
    }

    pub fn get_usize_list(&self, key: &str) -> Result<Vec<usize>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|tok| {
                    tok.trim()
                        .parse()
                        .map_err(|_| Error::Config(format!("{key}: bad integer {tok:?}")))
                })
                .collect(),
        }
    }

    pub fn get_f64_list(&self, key: &str) -> Result<Vec<f64>> {
        match self.get(key) {
            None => Ok(Vec::new()),
            Some(s) => s
                .split(',')
                .map(|tok| parse_fraction(key, tok.trim()))
                .collect(),
        }
    }

    pub fn get_str_list(&self, key: &str) -> Vec<String> {
        self.get(key)
            .map(|s| {
                s.split(',')
                    .map(|tok| tok.trim().to_string())
                    .filter(|tok| !tok.is_empty())
                    .collect()
            })
            .unwrap_or_default()
    }

    /// Reject unknown keys so typos fail loudly.
    pub fn check_known(&self, allowed: &[&str]) -> Result<()> {
        for key in self.keys() {
            if !allowed.contains(&key) {
                return Err(Error::Config(format!("unknown config key {key:?}")));
            }
        }
        Ok(())
    }
}

fn parse_fraction(key: &str, s: &str) -> Result<f64> {
    if let Some((num, den)) = s.split_once('/') {
        let n: f64 = num
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{key}: bad fraction {s:?}")))?;
        let d: f64 = den
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{key}: bad fraction {s:?}")))?;
        if d == 0.0 {
            return Err(Error::Config(format!("{key}: zero denominator in {s:?}")));
        }
        Ok(n / d)
    } else {
        s.parse()
            .map_err(|_| Error::Config(format!("{key} = {s:?} is not a number")))
    }
}

const PLAN_KEYS: &[&str] = &[
    "test", "n", "d_lambda", "d_tau", "h", "error", "basis", "alternative", "reps", "levels",
    "seed", "eta", "v2_scale", "kernel", "target",
];

/// Build an experiment plan: the grid is the cross product of the list-valued
/// keys `n`, `h`, `error`, and `d_lambda`/`d_tau`.
pub fn plan_from_config(cfg: &ConfigMap) -> Result<ExperimentPlan> {
    cfg.check_known(PLAN_KEYS)?;
    let test = TestId::parse(cfg.require("test")?)?;
    let test = match (test, cfg.get("target")) {
        (TestId::W4Alpha, Some("mu")) => TestId::W4Mu,
        (TestId::W4Alpha, Some("alpha")) | (_, None) => test,
        (t, Some("alpha")) | (t, Some("varying")) => t,
        (_, Some(other)) => {
            return Err(Error::Config(format!(
                "target = {other:?} (expected alpha or mu)"
            )))
        }
    };
    let ns = cfg.get_usize_list("n")?;
    if ns.is_empty() {
        return Err(Error::Config("missing required key \"n\"".into()));
    }
    let hs = {
        let hs = cfg.get_usize_list("h")?;
        if hs.is_empty() {
            return Err(Error::Config("missing required key \"h\"".into()));
        }
        hs
    };
    let d_lambdas = {
        let ds = cfg.get_usize_list("d_lambda")?;
        if ds.is_empty() {
            vec![2]
        } else {
            ds
        }
    };
    let d_taus: Vec<Option<usize>> = {
        let ds = cfg.get_usize_list("d_tau")?;
        if ds.is_empty() {
            vec![None]
        } else {
            ds.into_iter().map(Some).collect()
        }
    };
    let errors: Vec<ErrorDist> = {
        let names = cfg.get_str_list("error");
        if names.is_empty() {
            vec![ErrorDist::V1]
        } else {
            names
                .iter()
                .map(|s| ErrorDist::parse(s))
                .collect::<Result<_>>()?
        }
    };
    let basis = BasisFamily::parse(cfg.get("basis").unwrap_or("polynomial"))?;
    let alternative = cfg.get_bool("alternative", false)?;

    let mut grid = Vec::new();
    for &d_lambda in &d_lambdas {
        for &d_tau in &d_taus {
            for &error_dist in &errors {
                for &h in &hs {
                    for &n in &ns {
                        grid.push(GridPoint {
                            n,
                            d_lambda,
                            d_tau,
                            h,
                            error_dist,
                            basis,
                            test,
                            alternative,
                        });
                    }
                }
            }
        }
    }
    let mut plan = ExperimentPlan::new(grid);
    plan.replications = cfg.get_usize("reps", 1000)?;
    let levels = cfg.get_f64_list("levels")?;
    if !levels.is_empty() {
        plan.levels = levels;
    }
    plan.seed = cfg.get_u64("seed", 0)?;
    plan.eta = cfg.get_fraction("eta", 3.0 / 7.0)?;
    plan.v2_scale = parse_v2_scale(cfg)?;
    plan.kernel = parse_kernel(cfg)?;
    plan.validate()?;
    Ok(plan)
}

fn parse_v2_scale(cfg: &ConfigMap) -> Result<V2Scale> {
    match cfg.get("v2_scale") {
        None | Some("unit-variance") => Ok(V2Scale::UnitVariance),
        Some("paper-literal") => Ok(V2Scale::PaperLiteral),
        Some(other) => Err(Error::Config(format!("v2_scale = {other:?}"))),
    }
}

fn parse_kernel(cfg: &ConfigMap) -> Result<KernelSpec> {
    match cfg.get("kernel") {
        None | Some("epanechnikov") => Ok(KernelSpec::epanechnikov()),
        Some("bartlett") => Ok(KernelSpec::bartlett()),
        Some(other) => Err(Error::Config(format!("kernel = {other:?}"))),
    }
}

const SIMULATE_KEYS: &[&str] = &[
    "n", "d_lambda", "lambda_mode", "error", "error_structure", "error_filter_scale",
    "alternative", "m_measures", "eta", "seed", "v2_scale", "spatial",
];

pub fn dgp_from_config(cfg: &ConfigMap) -> Result<DgpConfig> {
    cfg.check_known(SIMULATE_KEYS)?;
    let n = cfg.get_usize("n", 0)?;
    if n == 0 {
        return Err(Error::Config("missing required key \"n\"".into()));
    }
    let d_lambda = cfg.get_usize("d_lambda", 2)?;
    let lambda_mode = match cfg.get("lambda_mode") {
        None | Some("fixed") => LambdaMode::Fixed,
        Some("varying-1") => LambdaMode::Varying1,
        Some("varying-2") => LambdaMode::Varying2,
        Some(other) => return Err(Error::Config(format!("lambda_mode = {other:?}"))),
    };
    let error_dist = ErrorDist::parse(cfg.get("error").unwrap_or("V1"))?;
    let error_structure = match cfg.get("error_structure") {
        None | Some("iid") => ErrorStructure::Iid,
        Some("sar-dependent") => ErrorStructure::SarDependent,
        Some(other) => return Err(Error::Config(format!("error_structure = {other:?}"))),
    };
    let spatial_design = match cfg.get("spatial") {
        None | Some("circulant") => SpatialDesign::Circulant,
        Some("nonparametric-g") => SpatialDesign::NonparametricG,
        Some(other) => return Err(Error::Config(format!("spatial = {other:?}"))),
    };
    let error_filter_scale = match cfg.get("error_filter_scale") {
        None | Some("standardized") => ErrorFilterScale::Standardized,
        Some("paper-literal") => ErrorFilterScale::PaperLiteral,
        Some(other) => return Err(Error::Config(format!("error_filter_scale = {other:?}"))),
    };
    let config = DgpConfig {
        n,
        d_lambda,
        lambda_mode,
        error_dist,
        error_structure,
        alternative: cfg.get_bool("alternative", false)?,
        m_measures: cfg.get_usize("m_measures", d_lambda)?,
        eta: cfg.get_fraction("eta", 3.0 / 7.0)?,
        seed: cfg.get_u64("seed", 0)?,
        v2_scale: parse_v2_scale(cfg)?,
        error_filter_scale,
        spatial_design,
    };
    config.validate()?;
    Ok(config)
}

const TEST_KEYS: &[&str] = &[
    "test", "h", "basis", "d_tau", "kernel", "variance", "ordering", "target", "eta",
    // dataset keys shared with the CSV schema
    "csv", "col.y", "col.z", "col.p", "col.x", "col.group", "col.coord", "weights",
    "cutoff_quantile", "intercept", "crs", "seed",
    // curve keys
    "curve_points", "curve_coefs",
];

pub fn test_settings_from_config(cfg: &ConfigMap) -> Result<TestSettings> {
    cfg.check_known(TEST_KEYS)?;
    let test = TestId::parse(cfg.require("test")?)?;
    let basis = BasisFamily::parse(cfg.get("basis").unwrap_or("polynomial"))?;
    let h = cfg.get_usize("h", 2)?;
    let psi = crate::basis::BasisSpec::new(basis, h)?;
    let mut settings = TestSettings::new(test, psi);
    let d_tau = cfg.get_usize("d_tau", 0)?;
    settings.d_tau = if d_tau > 0 { Some(d_tau) } else { None };
    settings.kernel = parse_kernel(cfg)?;
    settings.variance = match cfg.get("variance") {
        None | Some("estimated") => VarianceMode::Estimated,
        Some("unit") => VarianceMode::Unit,
        Some(other) => return Err(Error::Config(format!("variance = {other:?}"))),
    };
    settings.ordering = match cfg.get("ordering") {
        None | Some("empirical") => MenuOrdering::Empirical,
        Some("simulation") => MenuOrdering::Simulation,
        Some(other) => return Err(Error::Config(format!("ordering = {other:?}"))),
    };
    settings.target = match cfg.get("target") {
        None | Some("alpha") | Some("varying") => TargetBlock::Varying,
        Some("mu") | Some("spatial") => TargetBlock::Spatial,
        Some("crs-theta") => TargetBlock::VaryingCoef(super::CRS_THETA_COEF),
        Some(s) => {
            if let Some(idx) = s.strip_prefix("coef:") {
                let k: usize = idx
                    .parse()
                    .map_err(|_| Error::Config(format!("target = {s:?}")))?;
                TargetBlock::VaryingCoef(k)
            } else {
                return Err(Error::Config(format!("target = {s:?}")));
            }
        }
    };
    Ok(settings)
}

pub fn schema_from_config(cfg: &ConfigMap) -> Result<CsvSchema> {
    let outcome = cfg.require("col.y")?.to_string();
    let index_z = cfg.require("col.z")?.to_string();
    let varying = cfg.get_str_list("col.p");
    if varying.is_empty() {
        return Err(Error::Config("missing required key \"col.p\"".into()));
    }
    let exogenous = cfg.get_str_list("col.x");
    let group = cfg.get("col.group").map(|s| s.to_string());
    let coords = {
        let names = cfg.get_str_list("col.coord");
        match names.len() {
            0 => None,
            2 => Some((names[0].clone(), names[1].clone())),
            other => {
                return Err(Error::Config(format!(
                    "col.coord needs exactly 2 columns, got {other}"
                )))
            }
        }
    };
    Ok(CsvSchema {
        outcome,
        index_z,
        varying,
        exogenous,
        group,
        coords,
        intercept: cfg.get_bool("intercept", true)?,
    })
}
