//! Orthogonal projection onto the instrument space and the 2SLS estimator.
//!
//! The instrument matrix is factored once per fit by a rank-revealing
//! column-pivoted QR; exactly collinear columns are dropped and reported via
//! the fit's rank diagnostics instead of erroring, since power-of-distance
//! instrument menus are routinely near-collinear. The n×n projector is
//! never formed: P_K V is computed as Q₁(Q₁'V).

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::linalg;

/// Relative pivot tolerance for dropping collinear instrument columns.
const PIVOT_RTOL: f64 = 1e-10;
/// Ceiling on the condition number of T = M'P_K M / n. Solves are routed
/// through T's triangular factor (condition √κ), so even κ(T) ≈ 1e17 —
/// which the raw-power sieve bases at h = 8 genuinely reach — leaves ~8
/// significant digits. Beyond this ceiling T is treated as singular.
const T_CONDITION_LIMIT: f64 = 1e18;

/// A factored instrument space.
pub struct Projector {
    q1: DMatrix<f64>,
    /// Upper-triangular R with K̃ = Q₁R₁ for the kept columns in pivot order.
    r1: DMatrix<f64>,
    kept: Vec<usize>,
    dropped: usize,
}

impl Projector {
    pub fn new(k: &DMatrix<f64>) -> Result<Self> {
        if k.ncols() == 0 || k.nrows() == 0 {
            return Err(Error::InvalidArgument("empty instrument matrix".into()));
        }
        let j = k.ncols();
        let qr = k.clone().col_piv_qr();
        let (q, r, p) = qr.unpack();
        // Map pivoted positions back to original column indices.
        let mut idx = RowDVector::<usize>::from_fn(j, |_, c| c);
        p.permute_columns(&mut idx);
        let scale = r[(0, 0)].abs();
        if scale == 0.0 {
            return Err(Error::InvalidArgument(
                "instrument matrix is identically zero".into(),
            ));
        }
        let maxrank = r.nrows().min(j);
        let tol = PIVOT_RTOL * scale;
        let mut rank = 0;
        while rank < maxrank && r[(rank, rank)].abs() > tol {
            rank += 1;
        }
        let q1 = q.columns(0, rank).into_owned();
        let r1 = r.view((0, 0), (rank, rank)).into_owned();
        let kept: Vec<usize> = (0..rank).map(|t| idx[t]).collect();
        Ok(Projector {
            q1,
            r1,
            dropped: j - rank,
            kept,
        })
    }

    /// The upper-triangular factor of the kept instruments, K̃ = Q₁R₁.
    pub fn r_factor(&self) -> &DMatrix<f64> {
        &self.r1
    }

    pub fn rank(&self) -> usize {
        self.q1.ncols()
    }

    /// Original column indices surviving the pivot.
    pub fn kept_columns(&self) -> &[usize] {
        &self.kept
    }

    pub fn dropped_columns(&self) -> usize {
        self.dropped
    }

    /// Q₁'V: coordinates of V in the instrument space.
    pub fn coords(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        self.q1.transpose() * v
    }

    /// P_K V = Q₁(Q₁'V).
    pub fn apply(&self, v: &DMatrix<f64>) -> DMatrix<f64> {
        &self.q1 * (self.q1.transpose() * v)
    }
}

/// One-shot P_K V.
pub fn projector_apply(k: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if v.nrows() != k.nrows() {
        return Err(Error::Dimension(format!(
            "projector: V has {} rows, K has {}",
            v.nrows(),
            k.nrows()
        )));
    }
    Ok(Projector::new(k)?.apply(v))
}

/// A fitted 2SLS regression.
#[derive(Debug, Clone)]
pub struct TslsFit {
    /// ξ̂ = (M'P_K M)⁻¹ M'P_K y.
    pub coefficients: DVector<f64>,
    /// û = y − Mξ̂.
    pub residuals: DVector<f64>,
    /// T = M'P_K M / n, symmetric.
    pub t_matrix: DMatrix<f64>,
    /// Upper-triangular factor with T = R'R, for solving against T at the
    /// condition number of R rather than its square.
    t_r_factor: DMatrix<f64>,
    /// Q₁'M: the regressors in instrument coordinates (rank × d).
    a_matrix: DMatrix<f64>,
    /// Upper-triangular factor of the kept instruments (K̃ = Q₁R₁), so that
    /// K̃'K̃ = R₁'R₁.
    k_r_factor: DMatrix<f64>,
    /// Effective instrument rank after pivoting.
    pub rank_diag: usize,
    /// Instrument columns that survived the pivot, in pivot order.
    pub kept_instruments: Vec<usize>,
    /// Count of collinear instrument columns dropped by the pivot.
    pub dropped_instruments: usize,
    pub n: usize,
}

impl TslsFit {
    /// û'û / n.
    pub fn sigma2_hat(&self) -> f64 {
        self.residuals.norm_squared() / self.n as f64
    }

    /// T⁻¹·X through two triangular solves against the R factor.
    pub fn solve_t_inv(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let lower = self
            .t_r_factor
            .transpose()
            .solve_lower_triangular(x)
            .ok_or(Error::Singular {
                what: "T = M'P_K M / n",
                detail: "triangular solve failed".into(),
            })?;
        self.t_r_factor
            .solve_upper_triangular(&lower)
            .ok_or(Error::Singular {
                what: "T = M'P_K M / n",
                detail: "triangular solve failed".into(),
            })
    }

    /// (K̃'K̃/n)⁻¹·(K̃'L/n), i.e. the first-stage coefficient matrix mapping
    /// kept instruments to fitted regressors. Equal to R̄₁⁻¹·Ā for the stored
    /// normalized factors.
    pub fn first_stage_coefficients(&self) -> Result<DMatrix<f64>> {
        self.k_r_factor
            .solve_upper_triangular(&self.a_matrix)
            .ok_or(Error::Singular {
                what: "K'K",
                detail: "triangular solve failed".into(),
            })
    }

    /// The reduced instrument matrix K̃ (kept columns of the original K, in
    /// pivot order). Downstream covariance formulas must use the same basis
    /// of the instrument span that the fit used.
    pub fn reduced_instruments(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let cols: Vec<_> = self
            .kept_instruments
            .iter()
            .map(|&c| k.column(c).into_owned())
            .collect();
        DMatrix::from_columns(&cols)
    }
}

/// Two-stage least squares of y on M with instruments K.
pub fn tsls(m: &DMatrix<f64>, k: &DMatrix<f64>, y: &DVector<f64>) -> Result<TslsFit> {
    let n = y.len();
    if m.nrows() != n || k.nrows() != n {
        return Err(Error::Dimension(format!(
            "tsls: M has {} rows, K has {}, y has {n}",
            m.nrows(),
            k.nrows()
        )));
    }
    let d = m.ncols();
    if k.ncols() < d {
        return Err(Error::UnderIdentified {
            instruments: k.ncols(),
            regressors: d,
        });
    }
    let proj = Projector::new(k)?;
    if proj.rank() < d {
        return Err(Error::UnderIdentified {
            instruments: proj.rank(),
            regressors: d,
        });
    }
    let a = proj.coords(m); // r×d
    let b = proj.q1.transpose() * y; // r
    let t = linalg::symmetrize(&(a.transpose() * &a / n as f64));
    // Least squares of b on a through QR: accurate at cond(A), not cond(T).
    let a_qr = (a.clone() / (n as f64).sqrt()).qr();
    let t_r = a_qr.r();
    let diag_max = t_r.diagonal().iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let diag_min = t_r
        .diagonal()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(v.abs()));
    let cond = if diag_min > 0.0 {
        (diag_max / diag_min).powi(2)
    } else {
        f64::INFINITY
    };
    if !cond.is_finite() || cond > T_CONDITION_LIMIT {
        return Err(Error::Singular {
            what: "T = M'P_K M / n",
            detail: format!("condition number {cond:.3e}"),
        });
    }
    let qtb = a_qr.q().transpose() * (&b / (n as f64).sqrt());
    let xi_mat = t_r
        .solve_upper_triangular(&DMatrix::from_column_slice(d, 1, qtb.as_slice()))
        .ok_or(Error::Singular {
            what: "T = M'P_K M / n",
            detail: "triangular solve failed".into(),
        })?;
    let xi = DVector::from_column_slice(xi_mat.as_slice());
    let residuals = y - m * &xi;
    Ok(TslsFit {
        coefficients: xi,
        residuals,
        t_matrix: t,
        t_r_factor: t_r,
        a_matrix: a / (n as f64).sqrt(),
        k_r_factor: proj.r_factor().clone() / (n as f64).sqrt(),
        rank_diag: proj.rank(),
        kept_instruments: proj.kept_columns().to_vec(),
        dropped_instruments: proj.dropped_columns(),
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pseudo(n: usize, c: usize, salt: u64) -> DMatrix<f64> {
        let mut state = salt.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        DMatrix::from_fn(n, c, |_, _| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    #[test]
    fn projection_identity_on_span() {
        let k = pseudo(20, 3, 1);
        let coef = pseudo(3, 2, 2);
        let v = &k * coef;
        let pv = projector_apply(&k, &v).unwrap();
        assert!((pv - v).abs().max() < 1e-10);
    }

    #[test]
    fn projection_orthonormal_shortcut() {
        let raw = pseudo(15, 3, 3);
        let qr = raw.qr();
        let q = qr.q();
        let v = pseudo(15, 2, 4);
        let pv = projector_apply(&q, &v).unwrap();
        let direct = &q * (q.transpose() * &v);
        assert!((pv - direct).abs().max() < 1e-12);
    }

    #[test]
    fn projection_idempotent() {
        let k = pseudo(25, 4, 5);
        let v = pseudo(25, 3, 6);
        let once = projector_apply(&k, &v).unwrap();
        let twice = projector_apply(&k, &once).unwrap();
        assert!((once - twice).abs().max() < 1e-10);
    }

    #[test]
    fn projector_rejects_zero_matrix() {
        let k = DMatrix::<f64>::zeros(5, 2);
        assert!(Projector::new(&k).is_err());
    }

    #[test]
    fn projector_drops_duplicated_columns() {
        let base = pseudo(12, 2, 7);
        let mut cols: Vec<DVector<f64>> = base.column_iter().map(|c| c.into_owned()).collect();
        cols.push(base.column(0).into_owned()); // exact duplicate
        let k = DMatrix::from_columns(&cols);
        let p = Projector::new(&k).unwrap();
        assert_eq!(p.rank(), 2);
        assert_eq!(p.dropped_columns(), 1);
        // The span is unchanged, so projection results agree with the base.
        let v = pseudo(12, 1, 8);
        let via_full = p.apply(&v);
        let via_base = projector_apply(&base, &v).unwrap();
        assert!((via_full - via_base).abs().max() < 1e-10);
    }

    #[test]
    fn tsls_equals_ols_when_k_is_m() {
        let m = pseudo(30, 3, 9);
        let beta = DVector::from_column_slice(&[1.0, -2.0, 0.5]);
        let y = &m * &beta + pseudo(30, 1, 10).column(0) * 0.1;
        let fit = tsls(&m, &m, &y).unwrap();
        // OLS by normal equations.
        let ols = (m.transpose() * &m)
            .cholesky()
            .unwrap()
            .solve(&(m.transpose() * &y));
        assert!((fit.coefficients.clone() - ols).abs().max() < 1e-10);
        let t_expect = m.transpose() * &m / 30.0;
        assert!((fit.t_matrix.clone() - t_expect).abs().max() < 1e-10);
    }

    #[test]
    fn tsls_exact_fit_recovers_coefficients() {
        let m = pseudo(20, 2, 11);
        let k = pseudo(20, 4, 12);
        let xi0 = DVector::from_column_slice(&[2.0, -1.0]);
        let y = &m * &xi0;
        let fit = tsls(&m, &k, &y).unwrap();
        assert!((fit.coefficients.clone() - xi0).abs().max() < 1e-9);
        assert!(fit.residuals.abs().max() < 1e-9);
    }

    #[test]
    fn tsls_just_identified_scalar_closed_form() {
        let m = DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]);
        let k = DMatrix::from_column_slice(3, 1, &[1.0, 1.0, 1.0]);
        let y = DVector::from_column_slice(&[2.0, 4.0, 6.0]);
        let fit = tsls(&m, &k, &y).unwrap();
        // (K'y)/(K'M) = 12/6.
        assert!((fit.coefficients[0] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn tsls_under_identified_errors() {
        let m = pseudo(10, 3, 13);
        let k = pseudo(10, 2, 14);
        assert!(matches!(
            tsls(&m, &k, &DVector::zeros(10)),
            Err(Error::UnderIdentified { .. })
        ));
    }

    #[test]
    fn tsls_normal_equations_hold() {
        let m = pseudo(40, 3, 15);
        let k = pseudo(40, 5, 16);
        let y = pseudo(40, 1, 17).column(0).into_owned();
        let fit = tsls(&m, &k, &y).unwrap();
        let pm = projector_apply(&k, &m).unwrap();
        let orth = pm.transpose() * &fit.residuals;
        assert!(orth.abs().max() < 1e-8 * y.norm());
        assert!(linalg::max_abs_offdiag_asymmetry(&fit.t_matrix) < 1e-10);
    }

    #[test]
    fn tsls_invariant_to_instrument_transformations() {
        let m = pseudo(35, 3, 18);
        let k = pseudo(35, 5, 19);
        let y = pseudo(35, 1, 20).column(0).into_owned();
        let fit = tsls(&m, &k, &y).unwrap();
        // Any invertible J×J transformation preserves span(K).
        let mut a = pseudo(5, 5, 21);
        for i in 0..5 {
            a[(i, i)] += 3.0;
        }
        let fit2 = tsls(&m, &(&k * a), &y).unwrap();
        assert!((fit.coefficients.clone() - fit2.coefficients.clone()).abs().max() < 1e-9);
        assert!((fit.residuals.clone() - fit2.residuals.clone()).abs().max() < 1e-9);
        assert!((fit.t_matrix.clone() - fit2.t_matrix.clone()).abs().max() < 1e-9);
    }

    #[test]
    fn tsls_invariant_to_instrument_permutation() {
        let m = pseudo(25, 2, 22);
        let k = pseudo(25, 4, 23);
        let y = pseudo(25, 1, 24).column(0).into_owned();
        let fit = tsls(&m, &k, &y).unwrap();
        let perm: Vec<DVector<f64>> = [2usize, 0, 3, 1]
            .iter()
            .map(|&c| k.column(c).into_owned())
            .collect();
        let fit2 = tsls(&m, &DMatrix::from_columns(&perm), &y).unwrap();
        assert!((fit.coefficients - fit2.coefficients).abs().max() < 1e-12);
    }
}
