//! Experiment orchestration: size/power tables over a grid of designs,
//! CSV workflows, and output emission.
//!
//! Replication r of grid point g always consumes the stream
//! `replication_rng(seed, REPLICATION, g·2³² + r)`, so tables are
//! byte-identical across thread counts and reruns.

pub mod config;
pub mod csv;
pub mod emit;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::basis::{BasisFamily, BasisSpec};
use crate::dgp::{
    replication_rng, stream, Dataset, DgpConfig, DgpScaffold, ErrorDist, ErrorFilterScale,
    ErrorStructure, LambdaMode, SpatialDesign, V2Scale,
};
use crate::error::{Error, Result};
use crate::shac::KernelSpec;
use crate::wald::{
    run_test, run_test_full, TargetBlock, TestId, TestSettings, VarianceMode, WaldReport,
};

/// One cell of the simulation grid.
#[derive(Debug, Clone)]
pub struct GridPoint {
    pub n: usize,
    pub d_lambda: usize,
    /// Distance-power order for the nonparametric-lag test.
    pub d_tau: Option<usize>,
    pub h: usize,
    pub error_dist: ErrorDist,
    pub basis: BasisFamily,
    pub test: TestId,
    /// false: size experiment (δ = 0); true: power against δ(x) = 1 − x².
    pub alternative: bool,
}

impl GridPoint {
    pub fn key(&self) -> String {
        let mut key = format!(
            "{} n={} d_lambda={} h={} {} {}",
            self.test.name(),
            self.n,
            self.d_lambda,
            self.h,
            self.error_dist.name(),
            self.basis.name(),
        );
        if let Some(d_tau) = self.d_tau {
            key.push_str(&format!(" d_tau={d_tau}"));
        }
        key.push_str(if self.alternative { " power" } else { " size" });
        key
    }

    fn dgp_config(&self, plan: &ExperimentPlan) -> Result<DgpConfig> {
        let error_structure = match self.test {
            TestId::W0 | TestId::W1 => ErrorStructure::Iid,
            _ => ErrorStructure::SarDependent,
        };
        let lambda_mode = match self.test {
            TestId::W4Alpha | TestId::W4Mu => match self.d_lambda {
                1 => LambdaMode::Varying1,
                2 => LambdaMode::Varying2,
                other => {
                    return Err(Error::Config(format!(
                        "varying-lambda experiments support d_lambda 1 or 2, got {other}"
                    )))
                }
            },
            _ => LambdaMode::Fixed,
        };
        let spatial_design = match self.test {
            TestId::W3 => SpatialDesign::NonparametricG,
            _ => SpatialDesign::Circulant,
        };
        Ok(DgpConfig {
            n: self.n,
            d_lambda: self.d_lambda,
            lambda_mode,
            error_dist: self.error_dist,
            error_structure,
            alternative: self.alternative,
            m_measures: self.d_lambda,
            eta: plan.eta,
            seed: plan.seed,
            v2_scale: plan.v2_scale,
            error_filter_scale: ErrorFilterScale::Standardized,
            spatial_design,
        })
    }

    fn test_settings(&self, plan: &ExperimentPlan) -> Result<TestSettings> {
        let psi = BasisSpec::new(self.basis, self.h)?;
        let mut settings = TestSettings::new(self.test, psi);
        settings.kernel = plan.kernel.clone();
        settings.variance = VarianceMode::Unit;
        settings.d_tau = self.d_tau;
        if self.test == TestId::W3 && settings.d_tau.is_none() {
            return Err(Error::Config("W3 grid points need d_tau".into()));
        }
        settings.target = TargetBlock::Varying;
        Ok(settings)
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentPlan {
    pub grid: Vec<GridPoint>,
    pub replications: usize,
    pub levels: Vec<f64>,
    pub seed: u64,
    pub eta: f64,
    pub v2_scale: V2Scale,
    pub kernel: KernelSpec,
}

impl ExperimentPlan {
    pub fn new(grid: Vec<GridPoint>) -> ExperimentPlan {
        ExperimentPlan {
            grid,
            replications: 1000,
            levels: vec![0.01, 0.05, 0.10],
            seed: 0,
            eta: 3.0 / 7.0,
            v2_scale: V2Scale::UnitVariance,
            kernel: KernelSpec::epanechnikov(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("experiment grid is empty".into()));
        }
        if self.replications == 0 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if self.levels.is_empty() {
            return Err(Error::Config("no test levels".into()));
        }
        let mut prev = 0.0;
        for &l in &self.levels {
            if !(l > 0.0 && l < 1.0) || l <= prev {
                return Err(Error::Config(
                    "levels must be ascending and inside (0, 1)".into(),
                ));
            }
            prev = l;
        }
        Ok(())
    }
}

/// Aggregated rejection rates for one grid point.
#[derive(Debug, Clone, Serialize)]
pub struct RejectionRow {
    pub key: String,
    pub test: &'static str,
    pub n: usize,
    pub d_lambda: usize,
    pub d_tau: Option<usize>,
    pub h: usize,
    pub error_dist: &'static str,
    pub basis: &'static str,
    pub alternative: bool,
    pub reps: usize,
    pub failures: usize,
    /// More than 1% of replications failed: the row is unusable.
    pub failed: bool,
    pub asy_rates: Vec<f64>,
    pub chi_rates: Vec<f64>,
    pub asy_se: Vec<f64>,
    pub chi_se: Vec<f64>,
    pub stat_mean: f64,
    pub stat_var: f64,
    /// Mean of quad_form/d_ϑ across replications (1 under the null, ideally).
    pub quad_ratio_mean: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RejectionTable {
    pub levels: Vec<f64>,
    pub rows: Vec<RejectionRow>,
}

/// Run every grid point: generate → test → compare p-values to each level.
/// Per-replication failures are recorded, not fatal; a grid point is marked
/// failed when more than 1% of its replications error.
pub fn run_size_power(plan: &ExperimentPlan) -> Result<RejectionTable> {
    plan.validate()?;
    let mut rows = Vec::with_capacity(plan.grid.len());
    for (g, point) in plan.grid.iter().enumerate() {
        let dgp = point.dgp_config(plan)?;
        let settings = point.test_settings(plan)?;
        let scaffold = DgpScaffold::new(&dgp)?;
        let reports: Vec<std::result::Result<WaldReport, String>> = (0..plan.replications)
            .into_par_iter()
            .map(|r| {
                let stream_index = ((g as u64) << 32) | r as u64;
                let mut rng = replication_rng(plan.seed, stream::REPLICATION, stream_index);
                scaffold
                    .generate(&mut rng)
                    .and_then(|data| run_test(&data, &settings))
                    .map_err(|e| e.to_string())
            })
            .collect();
        rows.push(aggregate(point, plan, &reports));
    }
    Ok(RejectionTable {
        levels: plan.levels.clone(),
        rows,
    })
}

fn aggregate(
    point: &GridPoint,
    plan: &ExperimentPlan,
    reports: &[std::result::Result<WaldReport, String>],
) -> RejectionRow {
    let reps = reports.len();
    let ok: Vec<&WaldReport> = reports.iter().filter_map(|r| r.as_ref().ok()).collect();
    let failures = reps - ok.len();
    let m = ok.len().max(1) as f64;
    let mut asy_rates = Vec::with_capacity(plan.levels.len());
    let mut chi_rates = Vec::with_capacity(plan.levels.len());
    let mut asy_se = Vec::with_capacity(plan.levels.len());
    let mut chi_se = Vec::with_capacity(plan.levels.len());
    for &level in &plan.levels {
        let asy = ok.iter().filter(|r| r.asy_p < level).count() as f64 / m;
        let chi = ok.iter().filter(|r| r.chi_p < level).count() as f64 / m;
        asy_rates.push(asy);
        chi_rates.push(chi);
        asy_se.push((asy * (1.0 - asy) / m).sqrt());
        chi_se.push((chi * (1.0 - chi) / m).sqrt());
    }
    let stat_mean = ok.iter().map(|r| r.statistic).sum::<f64>() / m;
    let stat_var = ok
        .iter()
        .map(|r| (r.statistic - stat_mean).powi(2))
        .sum::<f64>()
        / m;
    let quad_ratio_mean = ok
        .iter()
        .map(|r| r.quad_form / r.block_dim as f64)
        .sum::<f64>()
        / m;
    RejectionRow {
        key: point.key(),
        test: point.test.name(),
        n: point.n,
        d_lambda: point.d_lambda,
        d_tau: point.d_tau,
        h: point.h,
        error_dist: point.error_dist.name(),
        basis: point.basis.name(),
        alternative: point.alternative,
        reps,
        failures,
        failed: failures * 100 > reps,
        asy_rates,
        chi_rates,
        asy_se,
        chi_se,
        stat_mean,
        stat_var,
        quad_ratio_mean,
    }
}

/// CRS reparameterization: y* = y − p₁ and varying regressors (1, p₂−p₁, p₁),
/// so the p₁-block coefficient is θ(z) = δ₁(z)+δ₂(z)−1 and constant returns
/// to scale is exactly θ-block = 0.
pub fn crs_transform(data: &Dataset) -> Result<Dataset> {
    if data.p.ncols() < 2 {
        return Err(Error::Data(
            "CRS transform needs varying regressors p1 and p2".into(),
        ));
    }
    let n = data.n();
    let p1 = data.p.column(0).into_owned();
    let p2 = data.p.column(1).into_owned();
    let y = DVector::from_fn(n, |i, _| data.y[i] - p1[i]);
    let p = DMatrix::from_fn(n, 3, |i, c| match c {
        0 => 1.0,
        1 => p2[i] - p1[i],
        _ => p1[i],
    });
    Ok(Dataset {
        y,
        x: data.x.clone(),
        p,
        z: data.z.clone(),
        weights: data.weights.clone(),
        distances: data.distances.clone(),
        truth: None,
    })
}

/// Index of the θ-block inside the CRS-transformed varying regressors.
pub const CRS_THETA_COEF: usize = 2;

/// One emitted row of a fitted-curve table.
#[derive(Debug, Clone, Serialize)]
pub struct CurveRow {
    pub z: f64,
    pub delta_hat: Vec<f64>,
    pub sum: f64,
    pub lo95: f64,
    pub hi95: f64,
}

/// Fit the model and evaluate the selected varying coefficients on an
/// equispaced grid over the observed z range, with pointwise 95% bands on
/// their sum by the delta method on the α̂-block covariance.
pub fn run_curve(
    data: &Dataset,
    settings: &TestSettings,
    coefficients: &[usize],
    grid_points: usize,
) -> Result<Vec<CurveRow>> {
    if coefficients.is_empty() || grid_points < 2 {
        return Err(Error::InvalidArgument(
            "curve needs at least one coefficient and two grid points".into(),
        ));
    }
    let mut curve_settings = settings.clone();
    curve_settings.target = TargetBlock::Varying;
    let run = run_test_full(data, &curve_settings)?;
    let z_min = data.z.min();
    let z_max = data.z.max();
    let step = (z_max - z_min) / (grid_points - 1) as f64;
    let d_alpha = run.selector.width;
    let mut rows = Vec::with_capacity(grid_points);
    for gi in 0..grid_points {
        let z = z_min + step * gi as f64;
        let mut delta_hat = Vec::with_capacity(coefficients.len());
        // Contrast vector picking up the sum of the selected curves.
        let mut contrast = DVector::<f64>::zeros(d_alpha);
        for &k in coefficients {
            let spec = run.psi.block_spec(k)?;
            let basis = crate::basis::eval_regression_basis(&spec, z)?;
            let off = run.psi.block_offset(k)?;
            let alpha_k = run
                .fit
                .coefficients
                .rows(run.selector.offset + off, spec.order);
            delta_hat.push(basis.dot(&alpha_k.into_owned()));
            for m in 0..spec.order {
                contrast[off + m] += basis[m];
            }
        }
        let sum: f64 = delta_hat.iter().sum();
        // target_cov is the covariance of √n·α̂; rescale to the coefficient.
        let var = (contrast.transpose() * &run.target_cov * &contrast)[(0, 0)].max(0.0)
            / data.n() as f64;
        let half = 1.96 * var.sqrt();
        rows.push(CurveRow {
            z,
            delta_hat,
            sum,
            lo95: sum - half,
            hi95: sum + half,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::generate;

    #[test]
    fn grid_key_is_descriptive() {
        let point = GridPoint {
            n: 200,
            d_lambda: 2,
            d_tau: None,
            h: 4,
            error_dist: ErrorDist::V2,
            basis: BasisFamily::Polynomial,
            test: TestId::W1,
            alternative: false,
        };
        assert_eq!(point.key(), "W1 n=200 d_lambda=2 h=4 V2 polynomial size");
    }

    #[test]
    fn single_replication_rate_is_zero_or_one() {
        let point = GridPoint {
            n: 40,
            d_lambda: 1,
            d_tau: None,
            h: 2,
            error_dist: ErrorDist::V1,
            basis: BasisFamily::Polynomial,
            test: TestId::W1,
            alternative: false,
        };
        let mut plan = ExperimentPlan::new(vec![point]);
        plan.replications = 1;
        plan.seed = 5;
        let table = run_size_power(&plan).unwrap();
        for &r in table.rows[0].asy_rates.iter().chain(&table.rows[0].chi_rates) {
            assert!(r == 0.0 || r == 1.0);
        }
    }

    #[test]
    fn rerun_is_bit_identical() {
        let point = GridPoint {
            n: 36,
            d_lambda: 2,
            d_tau: None,
            h: 2,
            error_dist: ErrorDist::V3,
            basis: BasisFamily::Polynomial,
            test: TestId::W1,
            alternative: false,
        };
        let mut plan = ExperimentPlan::new(vec![point]);
        plan.replications = 8;
        plan.seed = 11;
        let a = run_size_power(&plan).unwrap();
        let b = run_size_power(&plan).unwrap();
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn crs_transform_identities() {
        let config = crate::dgp::DgpConfig {
            seed: 3,
            ..crate::dgp::DgpConfig::mc_default(24, 1)
        };
        let base = generate(&config).unwrap();
        // Synthesize a two-input dataset with δ₁ + δ₂ = 1 pointwise.
        let n = base.n();
        let p = DMatrix::from_fn(n, 2, |i, c| if c == 0 { base.z[i] } else { 1.0 + i as f64 });
        let delta1 = |z: f64| 0.3 + 0.2 * z;
        let delta2 = |z: f64| 1.0 - delta1(z);
        let y = DVector::from_fn(n, |i, _| {
            delta1(base.z[i]) * p[(i, 0)] + delta2(base.z[i]) * p[(i, 1)]
        });
        let data = Dataset {
            y: y.clone(),
            x: base.x.clone(),
            p: p.clone(),
            z: base.z.clone(),
            weights: vec![],
            distances: None,
            truth: None,
        };
        let out = crs_transform(&data).unwrap();
        // θ(z) = δ₁+δ₂−1 = 0: y* equals δ₀-free combination without p1 block.
        for i in 0..n {
            let expect = delta2(base.z[i]) * (p[(i, 1)] - p[(i, 0)]);
            assert!((out.y[i] - expect).abs() < 1e-12);
            assert_eq!(out.p[(i, 0)], 1.0);
            assert!((out.p[(i, 1)] - (p[(i, 1)] - p[(i, 0)])).abs() < 1e-15);
            assert_eq!(out.p[(i, 2)], p[(i, 0)]);
        }
        // y = p1 with δ₂ = 0 pointwise gives y* = 0.
        let y_eq_p1 = Dataset {
            y: p.column(0).into_owned(),
            x: base.x.clone(),
            p: p.clone(),
            z: base.z.clone(),
            weights: vec![],
            distances: None,
            truth: None,
        };
        let out2 = crs_transform(&y_eq_p1).unwrap();
        assert!(out2.y.abs().max() < 1e-15);
        // CRS violation δ₁ = 1−z², δ₂ = 1+z² gives constant θ = 1.
        let d1 = |z: f64| 1.0 - z * z;
        let d2 = |z: f64| 1.0 + z * z;
        for i in 0..n {
            let theta = d1(base.z[i]) + d2(base.z[i]) - 1.0;
            assert!((theta - 1.0).abs() < 1e-12);
        }
    }
}
