//! Variance matrices, normalized Wald statistics, p-value calibrations,
//! and fitted-curve summaries.
//!
//! The statistic family is 𝕎 = (n·ϑ̂'𝒟⁻¹ϑ̂ − d_ϑ)/√(2·d_ϑ) where ϑ̂ is the
//! tested coefficient block and 𝒟 its estimated covariance: the plain
//! R·T⁻¹·R'/n form under i.i.d. errors, or the SHAC sandwich
//! R·T⁻¹·L'K(K'K)⁻¹·Ξ̂·(K'K)⁻¹K'L·T⁻¹·R'/n under spatial error dependence.
//! Tests are one-sided upper-tail: under alternatives the statistics diverge
//! to +∞ and local alternatives shift the mean upward.
//!
//! All inverses are factorizations-plus-solves. A singular 𝒟 aborts with
//! the offending eigenvalue; an indefinite but invertible 𝒟 (possible in
//! finite samples because Ξ̂ need not be positive semidefinite) is solved
//! through its eigendecomposition and flows through to a possibly negative
//! quadratic form, which an upper-tail test never rejects.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::basis::{build_psi, eval_lambda_basis, eval_regression_basis, BasisMatrix, BasisSpec};
use crate::design::{
    build_instruments, build_np_design, build_sar_design, build_vc_design, selector,
    selector_varying_coef, BlockName, DesignBundle, InstrumentMenu, Selector,
};
use crate::dgp::Dataset;
use crate::error::{stage, Error, Result};
use crate::estimator::{tsls, TslsFit};
use crate::linalg;
use crate::shac::{shac_xi, KernelSpec, ShacEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum TestId {
    W0,
    W1,
    W2,
    W3,
    W4Alpha,
    W4Mu,
}

impl TestId {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "W0" => Ok(TestId::W0),
            "W1" => Ok(TestId::W1),
            "W2" => Ok(TestId::W2),
            "W3" => Ok(TestId::W3),
            "W4" | "W4-ALPHA" => Ok(TestId::W4Alpha),
            "W4-MU" => Ok(TestId::W4Mu),
            other => Err(Error::Config(format!("unknown test id {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TestId::W0 => "W0",
            TestId::W1 => "W1",
            TestId::W2 => "W2",
            TestId::W3 => "W3",
            TestId::W4Alpha => "W4-alpha",
            TestId::W4Mu => "W4-mu",
        }
    }

    pub fn uses_shac(&self) -> bool {
        matches!(self, TestId::W2 | TestId::W3 | TestId::W4Alpha | TestId::W4Mu)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMode {
    /// 𝒟₁ = R·T⁻¹·R'/n, assuming unit-variance errors (the simulation DGPs).
    Unit,
    /// Scale 𝒟₁ by û'û/n; the default for observational data.
    Estimated,
}

/// Which coefficient block the restriction selects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetBlock {
    /// The whole varying-coefficient block α.
    Varying,
    /// The basis columns of varying coefficient k only (e.g. a reparameterized
    /// returns-to-scale block).
    VaryingCoef(usize),
    /// The spatial block (μ for the varying-lag model).
    Spatial,
}

/// Instrument-list ordering. The span — and so every statistic — is the
/// same either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MenuOrdering {
    Simulation,
    Empirical,
}

#[derive(Debug, Clone)]
pub struct TestSettings {
    pub test: TestId,
    /// Basis for every varying regression coefficient.
    pub psi: BasisSpec,
    /// Basis for varying spatial-lag coefficients; defaults to the λ-family
    /// counterpart of `psi` with the same order.
    pub phi: Option<BasisSpec>,
    /// Number of distance-power columns for the nonparametric-lag model.
    pub d_tau: Option<usize>,
    pub kernel: KernelSpec,
    pub variance: VarianceMode,
    pub ordering: MenuOrdering,
    pub target: TargetBlock,
}

impl TestSettings {
    pub fn new(test: TestId, psi: BasisSpec) -> TestSettings {
        TestSettings {
            test,
            psi,
            phi: None,
            d_tau: None,
            kernel: KernelSpec::epanechnikov(),
            variance: VarianceMode::Unit,
            ordering: MenuOrdering::Simulation,
            target: TargetBlock::Varying,
        }
    }

    /// The varying-lag basis: d_μ = h in total, split evenly across the
    /// d_λ weight matrices unless a spec is given explicitly.
    fn phi_spec(&self, d_lambda: usize) -> Result<BasisSpec> {
        match self.phi {
            Some(spec) => Ok(spec),
            None => {
                let d_lambda = d_lambda.max(1);
                if self.psi.order % d_lambda != 0 {
                    return Err(Error::Config(format!(
                        "h = {} is not divisible by d_lambda = {d_lambda}; set the varying-lag basis explicitly",
                        self.psi.order
                    )));
                }
                BasisSpec::new(
                    self.psi.family.lambda_counterpart(),
                    self.psi.order / d_lambda,
                )
            }
        }
    }
}

/// The outcome of one Wald test.
#[derive(Debug, Clone, Serialize)]
pub struct WaldReport {
    pub test_id: &'static str,
    /// The normalized statistic 𝕎.
    pub statistic: f64,
    /// d_ϑ: dimension of the tested block.
    pub block_dim: usize,
    /// n·ϑ̂'𝒟⁻¹ϑ̂.
    pub quad_form: f64,
    /// Upper-tail standard normal p-value.
    pub asy_p: f64,
    /// Upper-tail χ²_{d_ϑ} p-value of the recentered statistic.
    pub chi_p: f64,
    pub variance_mode: VarianceMode,
    /// Collinear instrument columns dropped by the pivoted factorization.
    pub dropped_instruments: usize,
}

impl WaldReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("WaldReport serializes")
    }
}

/// 𝒟 = R·T⁻¹·R', the covariance of √n·ϑ̂, optionally scaled by the
/// residual variance. The statistic divides by n through its own n·ϑ'𝒟⁻¹ϑ
/// normalization; carrying the 1/n here as well would double-count it.
pub fn dmat_plain(fit: &TslsFit, sel: &Selector, variance: VarianceMode) -> Result<DMatrix<f64>> {
    let d = fit.t_matrix.nrows();
    if sel.total != d {
        return Err(Error::Dimension(format!(
            "selector total {} vs coefficient dimension {d}",
            sel.total
        )));
    }
    // Solve T·Z = R' (columns of R' are unit vectors), then take R·Z.
    let mut rt = DMatrix::<f64>::zeros(d, sel.width);
    for c in 0..sel.width {
        rt[(sel.offset + c, c)] = 1.0;
    }
    let z = fit.solve_t_inv(&rt)?;
    let mut dm = z.rows(sel.offset, sel.width).into_owned();
    if variance == VarianceMode::Estimated {
        dm *= fit.sigma2_hat();
    }
    Ok(linalg::symmetrize(&dm))
}

/// 𝒟̂ = R·𝒰̂·R' with 𝒰̂ = T⁻¹·(L'K/n)(K'K/n)⁻¹·Ξ̂·(K'K/n)⁻¹(K'L/n)·T⁻¹,
/// built by successive solves: the covariance of √n·ϑ̂ under spatially
/// dependent errors. `instruments` must be the reduced matrix the fit kept.
pub fn dmat_shac(fit: &TslsFit, xi: &ShacEstimate, sel: &Selector) -> Result<DMatrix<f64>> {
    let d = fit.t_matrix.nrows();
    let j = fit.rank_diag;
    if xi.xi_hat.nrows() != j {
        return Err(Error::Dimension(format!(
            "Xi is {}x{0} for {j} kept instruments",
            xi.xi_hat.nrows()
        )));
    }
    if sel.total != d {
        return Err(Error::Dimension(format!(
            "selector total {} vs coefficient dimension {d}",
            sel.total
        )));
    }
    // C = (K'K/n)⁻¹ (K'L/n), J×d, from the fit's triangular factors.
    let c = fit.first_stage_coefficients()?;
    let f = linalg::symmetrize(&(c.transpose() * &xi.xi_hat * &c));
    // U = T⁻¹ F T⁻¹ via triangular solves.
    let a = fit.solve_t_inv(&f)?;
    let u = fit.solve_t_inv(&a.transpose())?.transpose();
    let dm = u.view((sel.offset, sel.offset), (sel.width, sel.width));
    Ok(linalg::symmetrize(&dm.into_owned()))
}

/// (statistic, quadratic form): quad = n·ϑ'𝒟⁻¹ϑ, 𝕎 = (quad − d_ϑ)/√(2d_ϑ).
pub fn wald_statistic(
    theta: &DVector<f64>,
    d_mat: &DMatrix<f64>,
    n: usize,
) -> Result<(f64, f64)> {
    let w = theta.len();
    if d_mat.nrows() != w || d_mat.ncols() != w {
        return Err(Error::Dimension(format!(
            "variance matrix is {}x{}, block is {w}",
            d_mat.nrows(),
            d_mat.ncols()
        )));
    }
    if w == 0 {
        return Err(Error::InvalidArgument("empty restriction block".into()));
    }
    let rhs = DMatrix::from_column_slice(w, 1, theta.as_slice());
    let solved = linalg::solve_symmetric(d_mat, &rhs, "D variance matrix")?;
    let quad = n as f64 * theta.dot(&DVector::from_column_slice(solved.as_slice()));
    let statistic = (quad - w as f64) / (2.0 * w as f64).sqrt();
    if !statistic.is_finite() {
        return Err(Error::Singular {
            what: "D variance matrix",
            detail: "non-finite Wald statistic".into(),
        });
    }
    Ok((statistic, quad))
}

/// Upper-tail p-values: the standard-normal limit and the χ²_d calibration
/// applied to the unnormalized quadratic form statistic·√(2d)+d.
pub fn p_values(statistic: f64, d: usize) -> (f64, f64) {
    let normal = Normal::standard();
    let asy_p = normal.sf(statistic);
    let x = (statistic * (2.0 * d as f64).sqrt() + d as f64).max(0.0);
    let chi = ChiSquared::new(d as f64).expect("d >= 1");
    let chi_p = chi.sf(x);
    (asy_p, chi_p)
}

/// Everything a caller may want back from one test run.
pub struct TestRun {
    pub report: WaldReport,
    pub fit: TslsFit,
    pub bundle: DesignBundle,
    pub psi: BasisMatrix,
    /// Covariance of the full varying block (and of μ for the varying-lag
    /// model, when that is the target), for curve bands.
    pub target_cov: DMatrix<f64>,
    pub selector: Selector,
}

fn lambda_phi(spec: &BasisSpec) -> impl Fn(f64) -> Vec<f64> + '_ {
    move |z| {
        eval_lambda_basis(spec, z)
            .expect("validated spec")
            .as_slice()
            .to_vec()
    }
}

/// Run one Wald test end to end: design → 2SLS → variance → statistic →
/// p-values. Errors are annotated with the pipeline stage that produced
/// them.
pub fn run_test(data: &Dataset, settings: &TestSettings) -> Result<WaldReport> {
    run_test_full(data, settings).map(|run| run.report)
}

pub fn run_test_full(data: &Dataset, settings: &TestSettings) -> Result<TestRun> {
    data.validate()?;
    let n = data.n();
    let specs = vec![settings.psi; data.p.ncols()];
    let psi = stage("basis", build_psi(&data.p, &data.z, &specs))?;

    let phi_spec = settings.phi_spec(data.weights.len())?;
    let phi = lambda_phi(&phi_spec);

    // Design + instruments per test.
    let (regressors, blocks, instruments) = match settings.test {
        TestId::W0 => {
            let (regs, blocks) = stage("design", build_sar_design(&data.y, &[], &data.x, &psi))?;
            let k = regs.clone();
            (regs, blocks, k)
        }
        TestId::W1 | TestId::W2 => {
            let (regs, blocks) = stage(
                "design",
                build_sar_design(&data.y, &data.weights, &data.x, &psi),
            )?;
            let menu = match settings.ordering {
                MenuOrdering::Simulation => InstrumentMenu::SarSimulation { ws: &data.weights },
                MenuOrdering::Empirical => InstrumentMenu::SarEmpirical { ws: &data.weights },
            };
            let k = stage("instruments", build_instruments(&menu, &data.x, &psi))?;
            (regs, blocks, k)
        }
        TestId::W3 => {
            let d_tau = settings.d_tau.ok_or_else(|| {
                Error::Config("W3 requires d_tau".into()).at_stage("design")
            })?;
            let dist = data.distances.as_ref().ok_or_else(|| {
                Error::Data("W3 requires a distance set".into()).at_stage("design")
            })?;
            let dstar = &dist.measures()[0];
            let cutoff = dist.thresholds()[0];
            let (regs, blocks) = stage(
                "design",
                build_np_design(&data.y, dstar, cutoff, d_tau, &data.x, &psi),
            )?;
            let menu = match settings.ordering {
                MenuOrdering::Simulation => InstrumentMenu::DistancePowersSimulation {
                    dstar,
                    cutoff,
                    d_tau,
                },
                MenuOrdering::Empirical => InstrumentMenu::DistancePowersEmpirical {
                    dstar,
                    cutoff,
                    d_tau,
                },
            };
            let k = stage("instruments", build_instruments(&menu, &data.x, &psi))?;
            (regs, blocks, k)
        }
        TestId::W4Alpha | TestId::W4Mu => {
            let (regs, blocks) = stage(
                "design",
                build_vc_design(&data.y, &data.weights, &data.z, &phi, &data.x, &psi),
            )?;
            let menu = InstrumentMenu::VaryingLambda {
                ws: &data.weights,
                z: &data.z,
                phi: &phi,
            };
            let k = stage("instruments", build_instruments(&menu, &data.x, &psi))?;
            (regs, blocks, k)
        }
    };

    let target = match settings.test {
        TestId::W4Mu => TargetBlock::Spatial,
        _ => settings.target,
    };
    let restriction = match target {
        TargetBlock::Spatial => BlockName::Spatial,
        _ => BlockName::Varying,
    };
    let bundle = stage(
        "design",
        DesignBundle::assemble(regressors, blocks, instruments, restriction),
    )?;

    if settings.test.uses_shac() && data.distances.is_none() {
        return Err(Error::Data(format!(
            "{} requires a distance set",
            settings.test.name()
        ))
        .at_stage("shac"));
    }

    let fit = stage("tsls", tsls(&bundle.regressors, &bundle.instruments, &data.y))?;

    let sel = match target {
        TargetBlock::Varying => stage("selector", selector(&bundle, BlockName::Varying))?,
        TargetBlock::VaryingCoef(k) => {
            stage("selector", selector_varying_coef(&bundle, &psi, k))?
        }
        TargetBlock::Spatial => stage("selector", selector(&bundle, BlockName::Spatial))?,
    };

    let d_mat = if settings.test.uses_shac() {
        let dist = data.distances.as_ref().expect("checked above");
        let reduced = fit.reduced_instruments(&bundle.instruments);
        let xi = stage(
            "shac",
            shac_xi(&reduced, &fit.residuals, dist, &settings.kernel),
        )?;
        stage("variance", dmat_shac(&fit, &xi, &sel))?
    } else {
        stage("variance", dmat_plain(&fit, &sel, settings.variance))?
    };

    let theta = sel.extract_vector(&fit.coefficients)?;
    let (statistic, quad_form) = stage("statistic", wald_statistic(&theta, &d_mat, n))?;
    let (asy_p, chi_p) = p_values(statistic, sel.width);

    let report = WaldReport {
        test_id: settings.test.name(),
        statistic,
        block_dim: sel.width,
        quad_form,
        asy_p,
        chi_p,
        variance_mode: settings.variance,
        dropped_instruments: fit.dropped_instruments,
    };
    Ok(TestRun {
        report,
        fit,
        bundle,
        psi,
        target_cov: d_mat,
        selector: sel,
    })
}

/// Point estimates of one varying coefficient on a grid, plus its average
/// over the sample index values (the returns-to-scale component).
#[derive(Debug, Clone, Serialize)]
pub struct CurveTable {
    pub coefficient: usize,
    pub points: Vec<(f64, f64)>,
    pub sample_mean: f64,
}

/// δ̂_k(z) = ψ_k(z)'α̂_k evaluated on `grid`; `z_sample` drives the average.
pub fn estimate_curve(
    fit: &TslsFit,
    bundle: &DesignBundle,
    psi: &BasisMatrix,
    k: usize,
    grid: &[f64],
    z_sample: &DVector<f64>,
) -> Result<CurveTable> {
    let sel = selector_varying_coef(bundle, psi, k)?;
    let alpha_k = sel.extract_vector(&fit.coefficients)?;
    let spec = psi.block_spec(k)?;
    let eval = |z: f64| -> Result<f64> {
        let basis = eval_regression_basis(&spec, z)?;
        Ok(basis.dot(&alpha_k))
    };
    let points = grid
        .iter()
        .map(|&z| Ok((z, eval(z)?)))
        .collect::<Result<Vec<_>>>()?;
    let sample_mean =
        z_sample.iter().map(|&z| eval(z)).sum::<Result<f64>>()? / z_sample.len() as f64;
    Ok(CurveTable {
        coefficient: k,
        points,
        sample_mean,
    })
}
