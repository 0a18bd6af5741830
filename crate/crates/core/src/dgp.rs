//! Synthetic data generation for the simulation study: covariates, error
//! laws, SAR solutions, distance synthesis, and the nonparametric weight
//! matrix.
//!
//! Determinism contract: every sampling operation is a pure function of
//! (config, seed). Replication streams derive from the master seed by the
//! documented splitmix chain in [`replication_rng`], so results do not
//! depend on thread scheduling.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{ChiSquared as ChiSquaredDist, Distribution, Normal as NormalDist, StudentT};
use statrs::distribution::{ContinuousCDF, Normal as NormalRef};

use crate::error::{Error, Result};
use crate::shac::{ell_from_eta, DistanceSet};
use crate::weights::{build_circulant, spectral_norm, SpatialWeights, WeightsKind};

/// Domain tags for stream derivation; replications of a grid point get
/// consecutive indices under the same domain.
pub mod stream {
    pub const SCAFFOLD: u64 = 0x5343_4146; // scaffold-level draws (the G matrix)
    pub const REPLICATION: u64 = 0x5245_504c;
    pub const CLT_PROBE: u64 = 0x434c_5450;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// The documented stream rule: chain the master seed with a domain tag and
/// an index through splitmix64 and seed a ChaCha12 generator from the
/// result. Identical on every platform and thread layout.
pub fn replication_rng(seed: u64, domain: u64, index: u64) -> ChaCha12Rng {
    let mixed = splitmix64(splitmix64(seed ^ splitmix64(domain)) ^ index);
    ChaCha12Rng::seed_from_u64(mixed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaMode {
    /// λ = 0.9·λ*/Σλ* with λ* = (d_λ, …, 1).
    Fixed,
    /// λ(z) = 0.9·sin(πz), one weight matrix.
    Varying1,
    /// λ₁(z) = 0.6·sin(πz), λ₂(z) = 0.3·sin(πz).
    Varying2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ErrorDist {
    V1,
    V2,
    V3,
}

impl ErrorDist {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "V1" => Ok(ErrorDist::V1),
            "V2" => Ok(ErrorDist::V2),
            "V3" => Ok(ErrorDist::V3),
            other => Err(Error::Config(format!("unknown error law {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ErrorDist::V1 => "V1",
            ErrorDist::V2 => "V2",
            ErrorDist::V3 => "V3",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorStructure {
    Iid,
    SarDependent,
}

/// Scaling of the t(10) error law. The stated √(5/4)·t(10) has variance
/// 25/16, not 1; the unit-variance version scales by √(8/10) instead.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum V2Scale {
    UnitVariance,
    PaperLiteral,
}

/// Marginal scale of the dependent error v = (I−Σλ_jW_j)⁻¹ε. With the
/// spatial weight totaling 0.9, the raw filter inflates Var(v_i) to ≈10;
/// standardizing each v_i back to unit variance keeps the filter's
/// correlation structure while matching the unit-variance error framing
/// (and the reported rejection tables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorFilterScale {
    Standardized,
    PaperLiteral,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpatialDesign {
    /// Circulant band matrices W_1..W_{d_λ}.
    Circulant,
    /// A sparse random matrix G scaled to spectral norm 1/1.2; the circulant
    /// band pattern still provides the distance scaffold.
    NonparametricG,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DgpConfig {
    pub n: usize,
    pub d_lambda: usize,
    pub lambda_mode: LambdaMode,
    pub error_dist: ErrorDist,
    pub error_structure: ErrorStructure,
    /// false: δ = 0 (null); true: δ(x) = 1 − x² (global alternative).
    pub alternative: bool,
    /// Number of noisy distance measures M.
    pub m_measures: usize,
    pub eta: f64,
    pub seed: u64,
    pub v2_scale: V2Scale,
    pub error_filter_scale: ErrorFilterScale,
    pub spatial_design: SpatialDesign,
}

impl DgpConfig {
    /// The simulation-study defaults: fixed λ, iid V1 errors, M = d_λ
    /// measures, η = 3/7.
    pub fn mc_default(n: usize, d_lambda: usize) -> DgpConfig {
        DgpConfig {
            n,
            d_lambda,
            lambda_mode: LambdaMode::Fixed,
            error_dist: ErrorDist::V1,
            error_structure: ErrorStructure::Iid,
            alternative: false,
            m_measures: d_lambda,
            eta: 3.0 / 7.0,
            seed: 0,
            v2_scale: V2Scale::UnitVariance,
            error_filter_scale: ErrorFilterScale::Standardized,
            spatial_design: SpatialDesign::Circulant,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_lambda == 0 {
            return Err(Error::Config("d_lambda must be >= 1".into()));
        }
        if self.n < 2 * self.d_lambda + 2 {
            return Err(Error::Config(format!(
                "n = {} too small for circulant order d_lambda = {} (need n >= 2*d_lambda + 2)",
                self.n, self.d_lambda
            )));
        }
        match self.lambda_mode {
            LambdaMode::Varying1 if self.d_lambda != 1 => {
                return Err(Error::Config("varying-1 requires d_lambda = 1".into()))
            }
            LambdaMode::Varying2 if self.d_lambda != 2 => {
                return Err(Error::Config("varying-2 requires d_lambda = 2".into()))
            }
            _ => {}
        }
        if self.m_measures == 0 {
            return Err(Error::Config("m_measures must be >= 1".into()));
        }
        if !(self.eta > 0.0 && self.eta < 0.5) {
            return Err(Error::Config(format!(
                "eta must lie in (0, 1/2), got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// λ* = (d_λ, d_λ−1, …, 1) rescaled so the entries sum to 0.9.
pub fn make_lambda(d_lambda: usize) -> DVector<f64> {
    let sum: f64 = (1..=d_lambda).map(|v| v as f64).sum();
    DVector::from_fn(d_lambda, |j, _| 0.9 * (d_lambda - j) as f64 / sum)
}

/// Draw n i.i.d. errors from the named law, standardized to mean zero and,
/// except under the paper-literal V2 scale, unit variance.
pub fn draw_errors<R: Rng>(
    dist: ErrorDist,
    v2_scale: V2Scale,
    n: usize,
    rng: &mut R,
) -> DVector<f64> {
    match dist {
        ErrorDist::V1 => {
            let normal = NormalDist::new(0.0, 1.0).unwrap();
            DVector::from_fn(n, |_, _| normal.sample(rng))
        }
        ErrorDist::V2 => {
            let t = StudentT::new(10.0).unwrap();
            let scale = match v2_scale {
                V2Scale::UnitVariance => (8.0f64 / 10.0).sqrt(),
                V2Scale::PaperLiteral => (5.0f64 / 4.0).sqrt(),
            };
            DVector::from_fn(n, |_, _| scale * t.sample(rng))
        }
        ErrorDist::V3 => {
            let chi = ChiSquaredDist::new(8.0).unwrap();
            DVector::from_fn(n, |_, _| 0.25 * (chi.sample(rng) - 8.0))
        }
    }
}

/// Spatial-lag coefficients: one value per weight matrix, either constant or
/// a per-unit table λ_j(z_i).
#[derive(Debug, Clone)]
pub enum LambdaField {
    Fixed(DVector<f64>),
    /// n×d_λ table, column j holding λ_j(z_i).
    Varying(DMatrix<f64>),
}

impl LambdaField {
    pub fn d_lambda(&self) -> usize {
        match self {
            LambdaField::Fixed(v) => v.len(),
            LambdaField::Varying(m) => m.ncols(),
        }
    }

    fn coefficient(&self, i: usize, j: usize) -> f64 {
        match self {
            LambdaField::Fixed(v) => v[j],
            LambdaField::Varying(m) => m[(i, j)],
        }
    }

    /// The §7.3 presets evaluated at z.
    pub fn varying_preset(mode: LambdaMode, z: &DVector<f64>) -> Result<LambdaField> {
        let scales: &[f64] = match mode {
            LambdaMode::Varying1 => &[0.9],
            LambdaMode::Varying2 => &[0.6, 0.3],
            LambdaMode::Fixed => {
                return Err(Error::InvalidArgument(
                    "fixed mode has no varying preset".into(),
                ))
            }
        };
        Ok(LambdaField::Varying(DMatrix::from_fn(
            z.len(),
            scales.len(),
            |i, j| scales[j] * (std::f64::consts::PI * z[i]).sin(),
        )))
    }
}

/// The factored SAR operator S = I − Σ_j Λ_j W_j.
pub struct SarSystem {
    s: DMatrix<f64>,
    lu: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

impl SarSystem {
    pub fn new(lambdas: &LambdaField, ws: &[SpatialWeights]) -> Result<Self> {
        if lambdas.d_lambda() != ws.len() {
            return Err(Error::Dimension(format!(
                "{} lambda entries for {} weight matrices",
                lambdas.d_lambda(),
                ws.len()
            )));
        }
        let n = ws
            .first()
            .map(|w| w.n())
            .ok_or_else(|| Error::InvalidArgument("no weight matrices".into()))?;
        let mut s = DMatrix::<f64>::identity(n, n);
        for (j, w) in ws.iter().enumerate() {
            let dense = w.to_dense();
            for i in 0..n {
                let lam = lambdas.coefficient(i, j);
                if lam != 0.0 {
                    for c in 0..n {
                        s[(i, c)] -= lam * dense[(i, c)];
                    }
                }
            }
        }
        let lu = s.clone().lu();
        let cond = crate::linalg::condition_estimate_1norm(&s, &lu);
        if !cond.is_finite() || cond > 1e12 {
            return Err(Error::Singular {
                what: "S = I - sum(lambda_j W_j)",
                detail: format!("condition estimate {cond:.3e}"),
            });
        }
        Ok(SarSystem { s, lu })
    }

    /// Marginal standard deviations of S⁻¹ε under unit-variance ε: the row
    /// norms of S⁻¹.
    pub fn filter_row_norms(&self) -> Result<DVector<f64>> {
        let inv = self.lu.try_inverse().ok_or(Error::Singular {
            what: "S = I - sum(lambda_j W_j)",
            detail: "inverse for row norms failed".into(),
        })?;
        Ok(DVector::from_fn(inv.nrows(), |i, _| inv.row(i).norm()))
    }

    /// S⁻¹ rhs with a residual check ‖S·y − rhs‖ ≤ 1e-8·‖rhs‖.
    pub fn solve(&self, rhs: &DVector<f64>) -> Result<DVector<f64>> {
        let y = self.lu.solve(rhs).ok_or(Error::Singular {
            what: "S = I - sum(lambda_j W_j)",
            detail: "LU solve failed".into(),
        })?;
        let resid = (&self.s * &y - rhs).norm();
        if resid > 1e-8 * rhs.norm().max(1.0) {
            return Err(Error::Singular {
                what: "S = I - sum(lambda_j W_j)",
                detail: format!("solve residual {resid:.3e}"),
            });
        }
        Ok(y)
    }
}

/// y = S⁻¹(mean + eps).
pub fn solve_sar(
    lambdas: &LambdaField,
    ws: &[SpatialWeights],
    mean: &DVector<f64>,
    eps: &DVector<f64>,
) -> Result<DVector<f64>> {
    SarSystem::new(lambdas, ws)?.solve(&(mean + eps))
}

/// (I − Σ λ_j W_j)⁻¹ ε: the dependent-error filter, sharing the outcome
/// equation's weight matrices.
pub fn sar_error_filter(
    lambdas: &LambdaField,
    ws: &[SpatialWeights],
    innovations: &DVector<f64>,
) -> Result<DVector<f64>> {
    SarSystem::new(lambdas, ws)?.solve(innovations)
}

/// Unweighted shortest-path hop counts on the nonzero pattern of W.
fn bfs_hops(w: &SpatialWeights) -> Result<DMatrix<f64>> {
    let n = w.n();
    let dense = w.to_dense();
    let mut adj: Vec<Vec<u32>> = vec![Vec::new(); n];
    for i in 0..n {
        for j in 0..n {
            if i != j && (dense[(i, j)] != 0.0 || dense[(j, i)] != 0.0) {
                adj[i].push(j as u32);
            }
        }
    }
    let mut out = DMatrix::<f64>::zeros(n, n);
    let mut dist = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    for src in 0..n {
        dist.iter_mut().for_each(|d| *d = u32::MAX);
        dist[src] = 0;
        queue.clear();
        queue.push_back(src as u32);
        while let Some(u) = queue.pop_front() {
            for &v in &adj[u as usize] {
                if dist[v as usize] == u32::MAX {
                    dist[v as usize] = dist[u as usize] + 1;
                    queue.push_back(v);
                }
            }
        }
        for (j, &d) in dist.iter().enumerate() {
            if d == u32::MAX {
                return Err(Error::InvalidArgument(format!(
                    "weight graph is disconnected: no path from {src} to {j}"
                )));
            }
            out[(src, j)] = d as f64;
        }
    }
    Ok(out)
}

/// Graph shortest paths on W's pattern, classical multidimensional scaling
/// down to two coordinates, then pairwise Euclidean distances of the
/// embedding. Coordinate signs are fixed by making each column's
/// largest-magnitude entry positive (distances are sign-invariant).
pub fn synth_distances(w_base: &SpatialWeights) -> Result<DMatrix<f64>> {
    let hops = bfs_hops(w_base)?;
    let n = hops.nrows();
    if n < 3 {
        return Err(Error::InvalidArgument(
            "distance synthesis needs at least 3 units".into(),
        ));
    }
    // Double-center -1/2 D∘D.
    let sq = hops.map(|v| v * v);
    let row_means = DVector::from_fn(n, |i, _| sq.row(i).sum() / n as f64);
    let grand = row_means.sum() / n as f64;
    let b = DMatrix::from_fn(n, n, |i, j| {
        -0.5 * (sq[(i, j)] - row_means[i] - row_means[j] + grand)
    });
    let eig = crate::linalg::symmetrize(&b).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &bb| {
        eig.eigenvalues[bb]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap()
    });
    let (e1, e2) = (order[0], order[1]);
    if eig.eigenvalues[e1] <= 0.0 || eig.eigenvalues[e2] <= 0.0 {
        return Err(Error::Singular {
            what: "classical MDS Gram matrix",
            detail: format!(
                "fewer than 2 positive eigenvalues (top two: {:.3e}, {:.3e})",
                eig.eigenvalues[e1], eig.eigenvalues[e2]
            ),
        });
    }
    let mut coords = DMatrix::<f64>::zeros(n, 2);
    for (c, &idx) in [e1, e2].iter().enumerate() {
        let scale = eig.eigenvalues[idx].sqrt();
        let col = eig.eigenvectors.column(idx);
        let mut max_abs = 0.0f64;
        let mut sign = 1.0f64;
        for &v in col.iter() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                sign = if v < 0.0 { -1.0 } else { 1.0 };
            }
        }
        for i in 0..n {
            coords[(i, c)] = sign * scale * col[i];
        }
    }
    let mut d = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let dx = coords[(i, 0)] - coords[(j, 0)];
            let dy = coords[(i, 1)] - coords[(j, 1)];
            let v = (dx * dx + dy * dy).sqrt();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// M noisy copies D*_m = D + ν_m with ν symmetrized U[0,1] noise and a
/// forced zero diagonal.
pub fn perturb_distances<R: Rng>(d: &DMatrix<f64>, m: usize, rng: &mut R) -> Vec<DMatrix<f64>> {
    let n = d.nrows();
    (0..m)
        .map(|_| {
            let mu = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random::<f64>());
            DMatrix::from_fn(n, n, |i, j| {
                if i == j {
                    0.0
                } else {
                    d[(i, j)] + 0.5 * (mu[(i, j)] + mu[(j, i)])
                }
            })
        })
        .collect()
}

/// Sparse random weight matrix: g*_{ij} = Φ(−b_{ij})·1(c_{ij} < 0.1) off the
/// diagonal, then scaled by 1/(1.2·spectral norm).
pub fn build_g_dgp<R: Rng>(n: usize, rng: &mut R) -> Result<SpatialWeights> {
    let normal = NormalRef::standard();
    let draw = |rng: &mut R| -> DMatrix<f64> {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                return 0.0;
            }
            let b: f64 = rng.random_range(-3.0..3.0);
            let c: f64 = rng.random::<f64>();
            if c < 0.1 {
                normal.cdf(-b)
            } else {
                0.0
            }
        })
    };
    let mut gstar = draw(rng);
    if gstar.iter().all(|&v| v == 0.0) {
        gstar = draw(rng);
        if gstar.iter().all(|&v| v == 0.0) {
            return Err(Error::Singular {
                what: "nonparametric G*",
                detail: "all entries zero after one redraw".into(),
            });
        }
    }
    let norm = spectral_norm(&gstar);
    let g = gstar / (1.2 * norm);
    SpatialWeights::from_dense(g, WeightsKind::NonparametricDgp)
}

/// The generating parameters behind a synthetic dataset.
#[derive(Debug, Clone)]
pub struct Truth {
    pub beta: DVector<f64>,
    pub lambda: LambdaField,
    pub alternative: bool,
}

/// One dataset: outcome, covariates, index variable, weights, distances.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub z: DVector<f64>,
    pub weights: Vec<SpatialWeights>,
    pub distances: Option<DistanceSet>,
    pub truth: Option<Truth>,
}

impl Dataset {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let all_finite = self.y.iter().all(|v| v.is_finite())
            && self.x.iter().all(|v| v.is_finite())
            && self.p.iter().all(|v| v.is_finite())
            && self.z.iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::Data("dataset contains non-finite values".into()));
        }
        if self.x.nrows() != n || self.p.nrows() != n || self.z.len() != n {
            return Err(Error::Dimension("dataset blocks disagree on n".into()));
        }
        for w in &self.weights {
            if w.n() != n {
                return Err(Error::Dimension("weight matrix order differs from n".into()));
            }
        }
        if let Some(d) = &self.distances {
            if d.n() != n {
                return Err(Error::Dimension("distance measures differ from n".into()));
            }
        }
        Ok(())
    }
}

/// Deterministic per-configuration structures shared by every replication:
/// weight matrices, the distance scaffold, and the factored fixed filters.
pub struct DgpScaffold {
    config: DgpConfig,
    weights: Vec<SpatialWeights>,
    base_distances: DMatrix<f64>,
    ell: usize,
    /// LU of the fixed outcome operator S when λ does not vary; varying-λ
    /// modes factor their S(z) per replication.
    fixed_system: Option<SarSystem>,
    fixed_lambda: Option<DVector<f64>>,
    /// The dependent-error filter (I − Σλ_kW_k)⁻¹ always uses the fixed λ
    /// vector, also under varying-λ outcome designs.
    error_system: Option<SarSystem>,
    /// Marginal sds of the filtered error, for standardization.
    error_sd: Option<DVector<f64>>,
}

impl DgpScaffold {
    pub fn new(config: &DgpConfig) -> Result<Self> {
        config.validate()?;
        let circulants: Vec<SpatialWeights> = (1..=config.d_lambda)
            .map(|k| build_circulant(config.n, k))
            .collect::<Result<_>>()?;
        // The widest band provides the graph for distance synthesis.
        let base_distances = synth_distances(&circulants[config.d_lambda - 1])?;
        let ell = ell_from_eta(config.n, config.eta)?;
        let weights = match config.spatial_design {
            SpatialDesign::Circulant => circulants,
            SpatialDesign::NonparametricG => {
                let mut rng = replication_rng(config.seed, stream::SCAFFOLD, 0);
                vec![build_g_dgp(config.n, &mut rng)?]
            }
        };
        let fixed_lambda_vec = match config.spatial_design {
            SpatialDesign::Circulant => make_lambda(config.d_lambda),
            // The G design carries a unit coefficient; G is already scaled
            // well inside the unit spectral radius.
            SpatialDesign::NonparametricG => DVector::from_element(1, 1.0),
        };
        let (fixed_system, fixed_lambda) = match config.lambda_mode {
            LambdaMode::Fixed => {
                let field = LambdaField::Fixed(fixed_lambda_vec.clone());
                (
                    Some(SarSystem::new(&field, &weights)?),
                    Some(fixed_lambda_vec.clone()),
                )
            }
            _ => (None, None),
        };
        let (error_system, error_sd) = if config.error_structure
            == ErrorStructure::SarDependent
        {
            let field = LambdaField::Fixed(fixed_lambda_vec);
            let sys = SarSystem::new(&field, &weights)?;
            let sd = match config.error_filter_scale {
                ErrorFilterScale::Standardized => Some(sys.filter_row_norms()?),
                ErrorFilterScale::PaperLiteral => None,
            };
            (Some(sys), sd)
        } else {
            (None, None)
        };
        Ok(DgpScaffold {
            config: config.clone(),
            weights,
            base_distances,
            ell,
            fixed_system,
            fixed_lambda,
            error_system,
            error_sd,
        })
    }

    pub fn weights(&self) -> &[SpatialWeights] {
        &self.weights
    }

    pub fn base_distances(&self) -> &DMatrix<f64> {
        &self.base_distances
    }

    /// Draw one dataset. Sampling order is fixed: z, p, x₂, ε, then the M
    /// distance-noise matrices.
    pub fn generate<R: Rng>(&self, rng: &mut R) -> Result<Dataset> {
        let n = self.config.n;
        let z = DVector::from_fn(n, |_, _| rng.random::<f64>());
        let p = DMatrix::from_fn(n, 1, |_, _| rng.random_range(-2.0..2.0));
        let x2_dist = NormalDist::new(1.0, 2.0f64.sqrt()).unwrap();
        let x = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { x2_dist.sample(rng) });
        let eps = draw_errors(self.config.error_dist, self.config.v2_scale, n, rng);

        let lambda_field = match self.config.lambda_mode {
            LambdaMode::Fixed => LambdaField::Fixed(self.fixed_lambda.clone().unwrap()),
            mode => LambdaField::varying_preset(mode, &z)?,
        };
        let owned_system;
        let system: &SarSystem = match &self.fixed_system {
            Some(sys) => sys,
            None => {
                owned_system = SarSystem::new(&lambda_field, &self.weights)?;
                &owned_system
            }
        };

        let error = match self.config.error_structure {
            ErrorStructure::Iid => eps,
            ErrorStructure::SarDependent => {
                let err_sys = self.error_system.as_ref().expect("built in scaffold");
                let filtered = err_sys.solve(&eps)?;
                match (&self.config.error_filter_scale, &self.error_sd) {
                    (ErrorFilterScale::PaperLiteral, _) => filtered,
                    (ErrorFilterScale::Standardized, Some(sd)) => {
                        DVector::from_fn(n, |i, _| filtered[i] / sd[i])
                    }
                    (ErrorFilterScale::Standardized, None) => unreachable!(),
                }
            }
        };
        let beta = DVector::from_column_slice(&[-1.0, 1.0]);
        let delta = |zv: f64| if self.config.alternative { 1.0 - zv * zv } else { 0.0 };
        let mean = DVector::from_fn(n, |i, _| {
            x.row(i).transpose().dot(&beta) + p[(i, 0)] * delta(z[i])
        });
        let y = system.solve(&(mean + error))?;

        let measures = perturb_distances(&self.base_distances, self.config.m_measures, rng);
        let distances = DistanceSet::from_neighbor_rule(measures, self.ell, self.config.eta)?;

        let data = Dataset {
            y,
            x,
            p,
            z,
            weights: self.weights.clone(),
            distances: Some(distances),
            truth: Some(Truth {
                beta,
                lambda: lambda_field,
                alternative: self.config.alternative,
            }),
        };
        data.validate()?;
        Ok(data)
    }
}

/// One-shot generation from a config (builds the scaffold internally).
pub fn generate(config: &DgpConfig) -> Result<Dataset> {
    let scaffold = DgpScaffold::new(config)?;
    let mut rng = replication_rng(config.seed, stream::REPLICATION, 0);
    scaffold.generate(&mut rng)
}

/// Innovation law for the quadratic-form probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeDist {
    Gaussian,
    Error(ErrorDist),
}

#[derive(Debug, Clone, serde::Serialize)]
pub struct CltReport {
    pub rank: usize,
    pub n: usize,
    pub reps: usize,
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    /// Kolmogorov–Smirnov distance of the standardized draws from N(0,1).
    pub ks_distance: f64,
}

/// Simulate the standardized quadratic form (v'𝒜v − J)/√(2J) with 𝒜 a
/// random rank-J orthogonal projector and v i.i.d.(0,1), and report its
/// moments and a normality distance.
pub fn clt_probe(
    rank: usize,
    n: usize,
    reps: usize,
    dist: ProbeDist,
    seed: u64,
) -> Result<CltReport> {
    if rank == 0 || rank > n {
        return Err(Error::InvalidArgument(format!(
            "clt_probe needs 1 <= J <= n, got J={rank}, n={n}"
        )));
    }
    if reps == 0 {
        return Err(Error::InvalidArgument("clt_probe needs reps >= 1".into()));
    }
    // Projector onto a random J-dimensional subspace: orthonormalize a
    // Gaussian n×J draw. v'𝒜v = ‖Q₁'v‖².
    let mut rng = replication_rng(seed, stream::CLT_PROBE, u64::MAX);
    let normal = NormalDist::new(0.0, 1.0).unwrap();
    let raw = DMatrix::<f64>::from_fn(n, rank, |_, _| normal.sample(&mut rng));
    let q1 = raw.qr().q();

    use rayon::prelude::*;
    let stats: Vec<f64> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rep_rng = replication_rng(seed, stream::CLT_PROBE, r as u64);
            let v = match dist {
                ProbeDist::Gaussian => {
                    let nd = NormalDist::new(0.0, 1.0).unwrap();
                    DVector::from_fn(n, |_, _| nd.sample(&mut rep_rng))
                }
                ProbeDist::Error(ed) => draw_errors(ed, V2Scale::UnitVariance, n, &mut rep_rng),
            };
            let coords = q1.transpose() * v;
            let quad = coords.norm_squared();
            (quad - rank as f64) / (2.0 * rank as f64).sqrt()
        })
        .collect();

    let m = reps as f64;
    let mean = stats.iter().sum::<f64>() / m;
    let variance = stats.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / m;
    let sd = variance.sqrt();
    let skewness = if sd > 0.0 {
        stats.iter().map(|s| ((s - mean) / sd).powi(3)).sum::<f64>() / m
    } else {
        0.0
    };
    let mut sorted = stats;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let normal_ref = NormalRef::standard();
    let mut ks = 0.0f64;
    for (i, &s) in sorted.iter().enumerate() {
        let cdf = normal_ref.cdf(s);
        let lo = i as f64 / m;
        let hi = (i + 1) as f64 / m;
        ks = ks.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    Ok(CltReport {
        rank,
        n,
        reps,
        mean,
        variance,
        skewness,
        ks_distance: ks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_vector_presets() {
        let l2 = make_lambda(2);
        assert!((l2[0] - 0.6).abs() < 1e-15 && (l2[1] - 0.3).abs() < 1e-15);
        let l1 = make_lambda(1);
        assert!((l1[0] - 0.9).abs() < 1e-15);
        let l4 = make_lambda(4);
        for (got, expect) in l4.iter().zip([0.36, 0.27, 0.18, 0.09]) {
            assert!((got - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn error_moments_at_scale() {
        let n = 1_000_000;
        for dist in [ErrorDist::V1, ErrorDist::V2, ErrorDist::V3] {
            let mut rng = replication_rng(7, stream::REPLICATION, 1);
            let e = draw_errors(dist, V2Scale::UnitVariance, n, &mut rng);
            let mean = e.sum() / n as f64;
            let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            assert!(mean.abs() <= 0.005, "{:?} mean {mean}", dist);
            assert!((var - 1.0).abs() <= 0.01, "{:?} var {var}", dist);
        }
        // The literal √(5/4)·t(10) scaling has variance 25/16.
        let mut rng = replication_rng(7, stream::REPLICATION, 2);
        let e = draw_errors(ErrorDist::V2, V2Scale::PaperLiteral, n, &mut rng);
        let mean = e.sum() / n as f64;
        let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        assert!((var - 25.0 / 16.0).abs() <= 0.02, "literal V2 var {var}");
    }

    #[test]
    fn v1_higher_moments_look_gaussian() {
        let n = 1_000_000;
        let mut rng = replication_rng(11, stream::REPLICATION, 3);
        let e = draw_errors(ErrorDist::V1, V2Scale::UnitVariance, n, &mut rng);
        let mean = e.sum() / n as f64;
        let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let sd = var.sqrt();
        let skew = e.iter().map(|v| ((v - mean) / sd).powi(3)).sum::<f64>() / n as f64;
        let kurt = e.iter().map(|v| ((v - mean) / sd).powi(4)).sum::<f64>() / n as f64;
        assert!(skew.abs() < 0.05);
        assert!((kurt - 3.0).abs() < 0.05);
    }

    #[test]
    fn solve_sar_degenerate_and_hand_cases() {
        let w = build_circulant(6, 1).unwrap();
        let mean = DVector::from_fn(6, |i, _| i as f64);
        let eps = DVector::from_element(6, 0.5);
        // λ = 0 means y = mean + eps.
        let y = solve_sar(
            &LambdaField::Fixed(DVector::zeros(1)),
            std::slice::from_ref(&w),
            &mean,
            &eps,
        )
        .unwrap();
        assert!((y - (mean + eps)).abs().max() < 1e-12);

        // Complete graph on n=2 with λ = 0.5: S = [[1, -0.5], [-0.5, 1]].
        let complete = SpatialWeights::from_dense(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]),
            WeightsKind::Custom,
        )
        .unwrap();
        let y2 = solve_sar(
            &LambdaField::Fixed(DVector::from_element(1, 0.5)),
            std::slice::from_ref(&complete),
            &DVector::from_element(2, 1.0),
            &DVector::zeros(2),
        )
        .unwrap();
        assert!((y2 - DVector::from_element(2, 2.0)).abs().max() < 1e-12);
    }

    #[test]
    fn varying_lambda_zero_rows_leave_identity() {
        let w = build_circulant(6, 1).unwrap();
        let z = DVector::zeros(6);
        let field = LambdaField::varying_preset(LambdaMode::Varying1, &z).unwrap();
        let sys = SarSystem::new(&field, std::slice::from_ref(&w)).unwrap();
        let rhs = DVector::from_fn(6, |i, _| 1.0 + i as f64);
        let y = sys.solve(&rhs).unwrap();
        assert!((y - rhs).abs().max() < 1e-12);
    }

    #[test]
    fn sar_solutions_match_explicit_inverse() {
        for n in [4usize, 8, 12] {
            let w = build_circulant(n, 1).unwrap();
            let lambda = LambdaField::Fixed(DVector::from_element(1, 0.6));
            let s = DMatrix::<f64>::identity(n, n) - w.to_dense() * 0.6;
            let sinv = s.try_inverse().unwrap();
            let eps = DVector::from_fn(n, |i, _| ((i * 7 + 3) % 5) as f64 - 2.0);
            let filtered =
                sar_error_filter(&lambda, std::slice::from_ref(&w), &eps).unwrap();
            assert!((&sinv * &eps - filtered).abs().max() < 1e-10);
            let mean = DVector::from_element(n, 1.0);
            let y = solve_sar(&lambda, std::slice::from_ref(&w), &mean, &eps).unwrap();
            assert!((sinv * (mean + eps) - y).abs().max() < 1e-10);
        }
    }

    #[test]
    fn filtered_error_covariance_matches_bbt() {
        let n = 10;
        let w = build_circulant(n, 1).unwrap();
        let lambda = LambdaField::Fixed(DVector::from_element(1, 0.6));
        let system = SarSystem::new(&lambda, std::slice::from_ref(&w)).unwrap();
        let b = (DMatrix::<f64>::identity(n, n) - w.to_dense() * 0.6)
            .try_inverse()
            .unwrap();
        let target = &b * b.transpose();
        let reps = 100_000;
        let mut acc = DMatrix::<f64>::zeros(n, n);
        let mut rng = replication_rng(23, stream::REPLICATION, 9);
        for _ in 0..reps {
            let eps = draw_errors(ErrorDist::V1, V2Scale::UnitVariance, n, &mut rng);
            let v = system.solve(&eps).unwrap();
            acc += &v * v.transpose();
        }
        acc /= reps as f64;
        let rel = (acc - &target).norm() / target.norm();
        assert!(rel < 0.05, "relative covariance error {rel}");
    }

    #[test]
    fn bfs_circulant_hop_count() {
        let w = build_circulant(10, 2).unwrap();
        let hops = bfs_hops(&w).unwrap();
        assert_eq!(hops[(0, 5)], 3.0);
        assert_eq!(hops[(0, 2)], 1.0);
        assert_eq!(hops[(0, 3)], 2.0);
    }

    #[test]
    fn mds_four_cycle_embeds_as_square() {
        let ring = build_circulant(4, 1).unwrap();
        let d = synth_distances(&ring).unwrap();
        // All nearest-neighbor embedded distances equal by symmetry.
        let side = d[(0, 1)];
        for (i, j) in [(1usize, 2usize), (2, 3), (3, 0)] {
            assert!((d[(i, j)] / side - 1.0).abs() < 1e-6);
        }
        // Euclidean output satisfies the triangle inequality.
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    assert!(d[(i, j)] <= d[(i, k)] + d[(k, j)] + 1e-12);
                }
            }
        }
    }

    #[test]
    fn perturbed_distances_bounds_and_symmetry() {
        let ring = build_circulant(8, 1).unwrap();
        let d = synth_distances(&ring).unwrap();
        let mut rng = replication_rng(3, stream::REPLICATION, 4);
        let measures = perturb_distances(&d, 2, &mut rng);
        assert_eq!(measures.len(), 2);
        for m in &measures {
            for i in 0..8 {
                assert_eq!(m[(i, i)], 0.0);
                for j in 0..8 {
                    if i != j {
                        assert!(m[(i, j)] >= d[(i, j)] && m[(i, j)] <= d[(i, j)] + 1.0);
                        assert!((m[(i, j)] - m[(j, i)]).abs() < 1e-15);
                    }
                }
            }
        }
        assert!(perturb_distances(&d, 0, &mut rng).is_empty());
    }

    #[test]
    fn g_dgp_sparsity_and_norm() {
        let n = 200;
        let mut rng = replication_rng(5, stream::SCAFFOLD, 0);
        let g = build_g_dgp(n, &mut rng).unwrap();
        let dense = g.to_dense();
        let nnz = dense.iter().filter(|&&v| v != 0.0).count();
        let frac = nnz as f64 / (n * n - n) as f64;
        assert!((0.08..=0.12).contains(&frac), "sparsity {frac}");
        assert!(spectral_norm(&dense) <= 1.0 / 1.2 + 1e-10);
        // I - G is comfortably invertible.
        let s = DMatrix::<f64>::identity(n, n) - &dense;
        let lu = s.clone().lu();
        let cond = crate::linalg::condition_estimate_1norm(&s, &lu);
        assert!(cond.is_finite() && cond < 1e6);
    }

    #[test]
    fn generate_is_deterministic_under_seed() {
        let config = DgpConfig {
            seed: 99,
            ..DgpConfig::mc_default(30, 2)
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.y, b.y);
        assert_eq!(a.x, b.x);
        assert_eq!(a.z, b.z);
        let da = a.distances.unwrap();
        let db = b.distances.unwrap();
        assert_eq!(da.measures()[0], db.measures()[0]);
        assert_eq!(da.thresholds(), db.thresholds());
    }

    #[test]
    fn alternative_vanishes_at_z_equal_one() {
        // δ(1) = 0: the alternative contributes nothing at z = 1.
        let delta = |zv: f64| 1.0 - zv * zv;
        assert_eq!(delta(1.0), 0.0);
        let config = DgpConfig {
            alternative: true,
            seed: 1,
            ..DgpConfig::mc_default(20, 1)
        };
        let data = generate(&config).unwrap();
        assert!(data.truth.as_ref().unwrap().alternative);
    }

    #[test]
    fn clt_probe_identity_projector_case() {
        // J = n makes 𝒜 the identity: statistic = (Σv² − n)/√(2n).
        let report = clt_probe(40, 40, 200, ProbeDist::Gaussian, 17).unwrap();
        assert!(report.mean.abs() < 0.5);
        assert!(report.variance > 0.3 && report.variance < 3.0);
    }

    #[test]
    fn clt_probe_rejects_bad_rank() {
        assert!(clt_probe(11, 10, 5, ProbeDist::Gaussian, 0).is_err());
        assert!(clt_probe(0, 10, 5, ProbeDist::Gaussian, 0).is_err());
    }
}
