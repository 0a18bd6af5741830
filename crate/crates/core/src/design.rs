//! Stacked regressor matrices, instrument menus, and restriction selectors.
//!
//! Column ordering is fixed throughout: the spatial (or nonparametric or
//! varying-lag) block first, then the exogenous block X, then the
//! varying-coefficient block Ψ. Restriction selectors are defined against
//! that ordering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisMatrix;
use crate::error::{Error, Result};
use crate::weights::SpatialWeights;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlockName {
    Spatial,
    Exogenous,
    Varying,
}

/// Regressors, instruments, and the block layout of one model.
#[derive(Debug, Clone)]
pub struct DesignBundle {
    pub regressors: DMatrix<f64>,
    pub instruments: DMatrix<f64>,
    pub blocks: Vec<(BlockName, usize)>,
    pub restriction_target: BlockName,
}

impl DesignBundle {
    /// Pair a regressor set with an instrument matrix, enforcing the order
    /// condition J ≥ d.
    pub fn assemble(
        regressors: DMatrix<f64>,
        blocks: Vec<(BlockName, usize)>,
        instruments: DMatrix<f64>,
        restriction_target: BlockName,
    ) -> Result<Self> {
        let width: usize = blocks.iter().map(|&(_, w)| w).sum();
        if width != regressors.ncols() {
            return Err(Error::Dimension(format!(
                "block widths sum to {width} but the regressor matrix has {} columns",
                regressors.ncols()
            )));
        }
        if instruments.nrows() != regressors.nrows() {
            return Err(Error::Dimension(format!(
                "instruments have {} rows, regressors {}",
                instruments.nrows(),
                regressors.nrows()
            )));
        }
        if instruments.ncols() < regressors.ncols() {
            return Err(Error::UnderIdentified {
                instruments: instruments.ncols(),
                regressors: regressors.ncols(),
            });
        }
        Ok(DesignBundle {
            regressors,
            instruments,
            blocks,
            restriction_target,
        })
    }

    pub fn n(&self) -> usize {
        self.regressors.nrows()
    }

    pub fn d(&self) -> usize {
        self.regressors.ncols()
    }

    pub fn j(&self) -> usize {
        self.instruments.ncols()
    }

    pub fn block_width(&self, name: BlockName) -> usize {
        self.blocks
            .iter()
            .filter(|&&(b, _)| b == name)
            .map(|&(_, w)| w)
            .sum()
    }

    pub fn block_offset(&self, name: BlockName) -> Result<usize> {
        let mut off = 0;
        for &(b, w) in &self.blocks {
            if b == name {
                return Ok(off);
            }
            off += w;
        }
        Err(Error::InvalidArgument(format!("design has no {name:?} block")))
    }
}

/// A contiguous coefficient selection: the matrix R = [0, I, 0] as offsets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selector {
    pub offset: usize,
    pub width: usize,
    pub total: usize,
}

impl Selector {
    pub fn new(offset: usize, width: usize, total: usize) -> Result<Self> {
        if offset + width > total {
            return Err(Error::Dimension(format!(
                "selector offset {offset} + width {width} exceeds total {total}"
            )));
        }
        Ok(Selector { offset, width, total })
    }

    /// R·v: the selected coefficient subvector.
    pub fn extract_vector(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        if v.len() != self.total {
            return Err(Error::Dimension(format!(
                "selector expects length {}, got {}",
                self.total,
                v.len()
            )));
        }
        Ok(v.rows(self.offset, self.width).into_owned())
    }

    /// R·M·R': the selected principal submatrix of a total×total matrix.
    pub fn extract_matrix(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.total || m.ncols() != self.total {
            return Err(Error::Dimension(format!(
                "selector expects a {0}x{0} matrix, got {1}x{2}",
                self.total,
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(m.view((self.offset, self.offset), (self.width, self.width))
            .into_owned())
    }

    /// R·M for a total×c matrix: the selected rows.
    pub fn extract_rows(&self, m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if m.nrows() != self.total {
            return Err(Error::Dimension(format!(
                "selector expects {} rows, got {}",
                self.total,
                m.nrows()
            )));
        }
        Ok(m.rows(self.offset, self.width).into_owned())
    }

    /// R'·R applied to the identity: a 0/1 diagonal mask.
    pub fn mask(&self) -> DMatrix<f64> {
        let mut m = DMatrix::<f64>::zeros(self.total, self.total);
        for i in self.offset..self.offset + self.width {
            m[(i, i)] = 1.0;
        }
        m
    }
}

/// Selector for a whole named block of a design.
pub fn selector(bundle: &DesignBundle, target: BlockName) -> Result<Selector> {
    let width = bundle.block_width(target);
    if width == 0 {
        return Err(Error::InvalidArgument(format!(
            "design has no {target:?} block to select"
        )));
    }
    Selector::new(bundle.block_offset(target)?, width, bundle.d())
}

/// Selector for one coefficient's basis columns inside the Ψ block.
pub fn selector_varying_coef(
    bundle: &DesignBundle,
    psi: &BasisMatrix,
    k: usize,
) -> Result<Selector> {
    let base = bundle.block_offset(BlockName::Varying)?;
    let off = psi.block_offset(k)?;
    let width = psi.block_order(k)?;
    Selector::new(base + off, width, bundle.d())
}

fn check_consistent_n(n: usize, what: &str, got: usize) -> Result<()> {
    if n != got {
        return Err(Error::Dimension(format!(
            "{what} has {got} rows, expected {n}"
        )));
    }
    Ok(())
}

/// Regressors [W₁y, …, W_{d_λ}y, X, Ψ] for the fixed-coefficient SAR model.
/// With no weight matrices this degenerates to [X, Ψ].
pub fn build_sar_design(
    y: &DVector<f64>,
    ws: &[SpatialWeights],
    x: &DMatrix<f64>,
    psi: &BasisMatrix,
) -> Result<(DMatrix<f64>, Vec<(BlockName, usize)>)> {
    let n = y.len();
    check_consistent_n(n, "X", x.nrows())?;
    check_consistent_n(n, "Psi", psi.values.nrows())?;
    let d_lambda = ws.len();
    let d = d_lambda + x.ncols() + psi.d_alpha();
    let mut regs = DMatrix::<f64>::zeros(n, d);
    for (j, w) in ws.iter().enumerate() {
        check_consistent_n(n, "weight matrix", w.n())?;
        regs.set_column(j, &w.matvec(y)?);
    }
    regs.view_mut((0, d_lambda), (n, x.ncols())).copy_from(x);
    regs.view_mut((0, d_lambda + x.ncols()), (n, psi.d_alpha()))
        .copy_from(&psi.values);
    let mut blocks = Vec::new();
    if d_lambda > 0 {
        blocks.push((BlockName::Spatial, d_lambda));
    }
    blocks.push((BlockName::Exogenous, x.ncols()));
    blocks.push((BlockName::Varying, psi.d_alpha()));
    Ok((regs, blocks))
}

/// The (zero-diagonal) matrix with entries e_l(d*_{ij}) = (d*_{ij})^l · 1(d*_{ij} < cutoff).
///
/// Both the nonparametric design block and the K₂ instruments go through
/// this one routine so the two stay in lockstep.
pub fn masked_distance_power(dstar: &DMatrix<f64>, cutoff: f64, l: usize) -> Result<DMatrix<f64>> {
    crate::weights::validate_distance_matrix(dstar)?;
    if !(cutoff > 0.0) {
        return Err(Error::InvalidArgument("cutoff must be positive".into()));
    }
    let n = dstar.nrows();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let d = dstar[(i, j)];
        if i != j && d < cutoff {
            d.powi(l as i32)
        } else {
            0.0
        }
    }))
}

/// Regressors [𝔠, X, Ψ] for the nonparametric-weights model, where
/// c_{il} = Σ_{j≠i} (d*_{ij})^l · 1(d*_{ij} < cutoff) · y_j for l = 1..d_τ.
pub fn build_np_design(
    y: &DVector<f64>,
    dstar: &DMatrix<f64>,
    cutoff: f64,
    d_tau: usize,
    x: &DMatrix<f64>,
    psi: &BasisMatrix,
) -> Result<(DMatrix<f64>, Vec<(BlockName, usize)>)> {
    if d_tau == 0 {
        return Err(Error::InvalidArgument("d_tau must be >= 1".into()));
    }
    let n = y.len();
    check_consistent_n(n, "distance matrix", dstar.nrows())?;
    check_consistent_n(n, "X", x.nrows())?;
    check_consistent_n(n, "Psi", psi.values.nrows())?;
    let d = d_tau + x.ncols() + psi.d_alpha();
    let mut regs = DMatrix::<f64>::zeros(n, d);
    for l in 1..=d_tau {
        let el = masked_distance_power(dstar, cutoff, l)?;
        regs.set_column(l - 1, &(el * y));
    }
    regs.view_mut((0, d_tau), (n, x.ncols())).copy_from(x);
    regs.view_mut((0, d_tau + x.ncols()), (n, psi.d_alpha()))
        .copy_from(&psi.values);
    Ok((
        regs,
        vec![
            (BlockName::Spatial, d_tau),
            (BlockName::Exogenous, x.ncols()),
            (BlockName::Varying, psi.d_alpha()),
        ],
    ))
}

/// Regressors [H(z), X, Ψ] for the varying-lag model. The H column for pair
/// (j, m) carries (w_{i,j}'y)·φ_m(z_i); columns group by weight matrix j,
/// then basis index m.
pub fn build_vc_design<F>(
    y: &DVector<f64>,
    ws: &[SpatialWeights],
    z: &DVector<f64>,
    phi: F,
    x: &DMatrix<f64>,
    psi: &BasisMatrix,
) -> Result<(DMatrix<f64>, Vec<(BlockName, usize)>)>
where
    F: Fn(f64) -> Vec<f64>,
{
    let n = y.len();
    check_consistent_n(n, "z", z.len())?;
    check_consistent_n(n, "X", x.nrows())?;
    check_consistent_n(n, "Psi", psi.values.nrows())?;
    if ws.is_empty() {
        return Err(Error::InvalidArgument(
            "varying-lag design needs at least one weight matrix".into(),
        ));
    }
    let l_per = phi(z[0]).len();
    if l_per == 0 {
        return Err(Error::InvalidArgument("phi basis is empty".into()));
    }
    let d_mu = ws.len() * l_per;
    let d = d_mu + x.ncols() + psi.d_alpha();
    let mut regs = DMatrix::<f64>::zeros(n, d);
    let lags: Vec<DVector<f64>> = ws
        .iter()
        .map(|w| {
            check_consistent_n(n, "weight matrix", w.n())?;
            w.matvec(y)
        })
        .collect::<Result<_>>()?;
    for i in 0..n {
        let phis = phi(z[i]);
        if phis.len() != l_per {
            return Err(Error::Dimension(
                "phi basis length varies across evaluation points".into(),
            ));
        }
        for (j, lag) in lags.iter().enumerate() {
            for (m, &pv) in phis.iter().enumerate() {
                regs[(i, j * l_per + m)] = lag[i] * pv;
            }
        }
    }
    regs.view_mut((0, d_mu), (n, x.ncols())).copy_from(x);
    regs.view_mut((0, d_mu + x.ncols()), (n, psi.d_alpha()))
        .copy_from(&psi.values);
    Ok((
        regs,
        vec![
            (BlockName::Spatial, d_mu),
            (BlockName::Exogenous, x.ncols()),
            (BlockName::Varying, psi.d_alpha()),
        ],
    ))
}

/// Instrument menus. The two SAR orderings differ only cosmetically; P_K
/// depends on the span alone.
#[derive(Clone)]
pub enum InstrumentMenu<'a> {
    /// [X, Ψ, W₁X, …]: the empirical-workflow ordering.
    SarEmpirical { ws: &'a [SpatialWeights] },
    /// [X, W₁X, …, W_{d_λ}X, Ψ]: the simulation ordering.
    SarSimulation { ws: &'a [SpatialWeights] },
    /// [X, Ψ, ℰ₁X, …, ℰ_{d_τ}X] with ℰ_l the masked distance powers.
    DistancePowersEmpirical {
        dstar: &'a DMatrix<f64>,
        cutoff: f64,
        d_tau: usize,
    },
    /// [X, ℰ₁X, …, ℰ_{d_τ}X, Ψ].
    DistancePowersSimulation {
        dstar: &'a DMatrix<f64>,
        cutoff: f64,
        d_tau: usize,
    },
    /// [X, Ψ, (W_j x_c)∘φ_m(z) for every non-constant column x_c and all
    /// j, m]: instruments for the varying-lag block, mirroring H(z) with the
    /// exogenous regressors in place of y. Constant columns are skipped
    /// because their spatial lags reproduce φ(z) itself up to the rows'
    /// normalization.
    VaryingLambda {
        ws: &'a [SpatialWeights],
        z: &'a DVector<f64>,
        phi: &'a dyn Fn(f64) -> Vec<f64>,
    },
}

/// Concatenate an instrument matrix per menu. Near-collinear columns are
/// not removed here; the estimator's pivoted factorization handles rank.
pub fn build_instruments(
    menu: &InstrumentMenu,
    x: &DMatrix<f64>,
    psi: &BasisMatrix,
) -> Result<DMatrix<f64>> {
    let n = x.nrows();
    check_consistent_n(n, "Psi", psi.values.nrows())?;
    let mut cols: Vec<DVector<f64>> = Vec::new();
    let push_mat = |cols: &mut Vec<DVector<f64>>, m: &DMatrix<f64>| {
        for c in m.column_iter() {
            cols.push(c.into_owned());
        }
    };
    match menu {
        InstrumentMenu::SarEmpirical { ws } => {
            push_mat(&mut cols, x);
            push_mat(&mut cols, &psi.values);
            for w in ws.iter() {
                push_mat(&mut cols, &w.matmat(x)?);
            }
        }
        InstrumentMenu::SarSimulation { ws } => {
            push_mat(&mut cols, x);
            for w in ws.iter() {
                push_mat(&mut cols, &w.matmat(x)?);
            }
            push_mat(&mut cols, &psi.values);
        }
        InstrumentMenu::DistancePowersEmpirical { dstar, cutoff, d_tau } => {
            push_mat(&mut cols, x);
            push_mat(&mut cols, &psi.values);
            for l in 1..=*d_tau {
                let el = masked_distance_power(dstar, *cutoff, l)?;
                push_mat(&mut cols, &(el * x.clone()));
            }
        }
        InstrumentMenu::DistancePowersSimulation { dstar, cutoff, d_tau } => {
            push_mat(&mut cols, x);
            for l in 1..=*d_tau {
                let el = masked_distance_power(dstar, *cutoff, l)?;
                push_mat(&mut cols, &(el * x.clone()));
            }
            push_mat(&mut cols, &psi.values);
        }
        InstrumentMenu::VaryingLambda { ws, z, phi } => {
            check_consistent_n(n, "z", z.len())?;
            push_mat(&mut cols, x);
            push_mat(&mut cols, &psi.values);
            let l_per = phi(z[0]).len();
            let phi_mat = DMatrix::<f64>::from_fn(n, l_per, |i, m| {
                let v = phi(z[i]);
                v[m]
            });
            let non_constant: Vec<usize> = (0..x.ncols())
                .filter(|&c| {
                    let col = x.column(c);
                    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
                    for &v in col.iter() {
                        lo = lo.min(v);
                        hi = hi.max(v);
                    }
                    hi - lo > 1e-12 * hi.abs().max(lo.abs()).max(1.0)
                })
                .collect();
            for w in ws.iter() {
                let wx = w.matmat(x)?;
                for &c in &non_constant {
                    for m in 0..l_per {
                        let col = DVector::from_fn(n, |i, _| wx[(i, c)] * phi_mat[(i, m)]);
                        cols.push(col);
                    }
                }
            }
        }
    }
    Ok(DMatrix::from_columns(&cols))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::{build_psi, BasisFamily, BasisSpec};
    use crate::weights::{build_circulant, build_group};

    fn small_psi(n: usize, h: usize) -> (BasisMatrix, DVector<f64>, DMatrix<f64>) {
        let z = DVector::from_fn(n, |i, _| (i as f64 + 0.5) / n as f64);
        let p = DMatrix::from_fn(n, 1, |i, _| 1.0 + 0.3 * i as f64);
        let spec = BasisSpec::new(BasisFamily::Polynomial, h).unwrap();
        (build_psi(&p, &z, &[spec]).unwrap(), z, p)
    }

    #[test]
    fn sar_design_blocks_and_zero_y() {
        let n = 6;
        let (psi, _z, _p) = small_psi(n, 2);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let w = build_circulant(n, 1).unwrap();
        let y = DVector::zeros(n);
        let (regs, blocks) = build_sar_design(&y, &[w], &x, &psi).unwrap();
        assert_eq!(blocks, vec![
            (BlockName::Spatial, 1),
            (BlockName::Exogenous, 2),
            (BlockName::Varying, 2)
        ]);
        assert!(regs.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sar_design_without_weights_is_x_psi() {
        let n = 5;
        let (psi, _, _) = small_psi(n, 2);
        let x = DMatrix::from_element(n, 1, 1.0);
        let y = DVector::from_fn(n, |i, _| i as f64);
        let (regs, blocks) = build_sar_design(&y, &[], &x, &psi).unwrap();
        assert_eq!(regs.ncols(), 3);
        assert_eq!(blocks[0], (BlockName::Exogenous, 1));
    }

    #[test]
    fn sar_design_hand_case_group_weights() {
        let labels = ["a", "a", "b"];
        let w = build_group(&labels).unwrap();
        let y = DVector::from_column_slice(&[1.0, 2.0, 3.0]);
        let (psi, _, _) = small_psi(3, 1);
        let x = DMatrix::from_element(3, 1, 1.0);
        let (regs, _) = build_sar_design(&y, &[w], &x, &psi).unwrap();
        // Row-normalized group weights: unit 0 sees unit 1, unit 1 sees unit 0.
        assert_eq!(regs[(0, 0)], 2.0);
        assert_eq!(regs[(1, 0)], 1.0);
        assert_eq!(regs[(2, 0)], 0.0);
    }

    #[test]
    fn np_design_entries() {
        let dstar = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0]);
        let x = DMatrix::from_element(2, 1, 1.0);
        let (psi, _, _) = small_psi(2, 1);
        let (regs, _) = build_np_design(&y, &dstar, 1.0, 2, &x, &psi).unwrap();
        assert!((regs[(0, 0)] - 1.0).abs() < 1e-15); // 0.5 * 2
        assert!((regs[(0, 1)] - 0.5).abs() < 1e-15); // 0.25 * 2
    }

    #[test]
    fn np_design_zero_when_cutoff_below_min_distance() {
        let dstar = DMatrix::from_row_slice(2, 2, &[0.0, 5.0, 5.0, 0.0]);
        let y = DVector::from_column_slice(&[1.0, 2.0]);
        let x = DMatrix::from_element(2, 1, 1.0);
        let (psi, _, _) = small_psi(2, 1);
        let (regs, _) = build_np_design(&y, &dstar, 1.0, 1, &x, &psi).unwrap();
        assert!(regs.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn np_first_column_is_masked_distance_times_y() {
        let dstar = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 3.0, 1.0, 0.0, 0.5, 3.0, 0.5, 0.0],
        );
        let y = DVector::from_column_slice(&[1.0, -1.0, 2.0]);
        let x = DMatrix::from_element(3, 1, 1.0);
        let (psi, _, _) = small_psi(3, 1);
        let (regs, _) = build_np_design(&y, &dstar, 2.0, 1, &x, &psi).unwrap();
        let masked = masked_distance_power(&dstar, 2.0, 1).unwrap();
        let expect = masked * &y;
        assert!((regs.column(0) - expect).abs().max() < 1e-15);
    }

    #[test]
    fn vc_design_with_constant_phi_matches_sar_block() {
        let n = 8;
        let (psi, z, _) = small_psi(n, 2);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { (i as f64).sin() });
        let w = build_circulant(n, 1).unwrap();
        let y = DVector::from_fn(n, |i, _| (i as f64) * 0.7 - 1.0);
        let (vc, _) = build_vc_design(&y, std::slice::from_ref(&w), &z, |_| vec![1.0], &x, &psi).unwrap();
        let (sar, _) = build_sar_design(&y, std::slice::from_ref(&w), &x, &psi).unwrap();
        assert!((vc.column(0) - sar.column(0)).abs().max() < 1e-14);
    }

    #[test]
    fn vc_design_zero_z_with_lambda_polynomial() {
        let n = 6;
        let (psi, _, _) = small_psi(n, 1);
        let z = DVector::zeros(n);
        let x = DMatrix::from_element(n, 1, 1.0);
        let w = build_circulant(n, 1).unwrap();
        let y = DVector::from_fn(n, |i, _| i as f64 + 1.0);
        let spec = BasisSpec::new(BasisFamily::LambdaPolynomial, 2).unwrap();
        let (regs, blocks) = build_vc_design(
            &y,
            std::slice::from_ref(&w),
            &z,
            |zv| crate::basis::eval_lambda_basis(&spec, zv).unwrap().as_slice().to_vec(),
            &x,
            &psi,
        )
        .unwrap();
        assert_eq!(blocks[0], (BlockName::Spatial, 2));
        assert!(regs.view((0, 0), (n, 2)).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vc_design_hand_entry() {
        let n = 6;
        let (psi, z, _) = small_psi(n, 1);
        let x = DMatrix::from_element(n, 1, 1.0);
        let w = build_circulant(n, 1).unwrap();
        let y = DVector::from_fn(n, |i, _| i as f64);
        let phi = |zv: f64| vec![zv, zv * zv];
        let (regs, _) = build_vc_design(&y, std::slice::from_ref(&w), &z, phi, &x, &psi).unwrap();
        let lag = w.matvec(&y).unwrap();
        for i in 0..n {
            assert!((regs[(i, 0)] - lag[i] * z[i]).abs() < 1e-15);
            assert!((regs[(i, 1)] - lag[i] * z[i] * z[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn instrument_column_counts() {
        let n = 10;
        let (psi, z, _) = small_psi(n, 2);
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let w = build_circulant(n, 1).unwrap();
        let k1 = build_instruments(
            &InstrumentMenu::SarEmpirical { ws: std::slice::from_ref(&w) },
            &x,
            &psi,
        )
        .unwrap();
        assert_eq!(k1.ncols(), 2 + 2 + 2);
        let k1_sim = build_instruments(
            &InstrumentMenu::SarSimulation { ws: std::slice::from_ref(&w) },
            &x,
            &psi,
        )
        .unwrap();
        assert_eq!(k1_sim.ncols(), 6);
        let dstar = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { 1.0 });
        let k2 = build_instruments(
            &InstrumentMenu::DistancePowersSimulation { dstar: &dstar, cutoff: 2.0, d_tau: 2 },
            &x,
            &psi,
        )
        .unwrap();
        assert_eq!(k2.ncols(), 2 + 2 * 2 + 2);
        let phi = |zv: f64| vec![zv];
        let k3 = build_instruments(
            &InstrumentMenu::VaryingLambda { ws: std::slice::from_ref(&w), z: &z, phi: &phi },
            &x,
            &psi,
        )
        .unwrap();
        // X, Ψ, and one φ-interaction per non-constant X column (one here).
        assert_eq!(k3.ncols(), 2 + 2 + 1);
    }

    #[test]
    fn k2_and_np_design_share_the_distance_power_routine() {
        // The 𝔠 block columns are exactly masked_distance_power(l)·y and the
        // K₂ blocks are exactly masked_distance_power(l)·X for the same l and
        // cutoff: both consume the shared routine's output verbatim.
        let n = 5;
        let dstar = DMatrix::from_fn(n, n, |i, j| {
            if i == j { 0.0 } else { ((i as f64) - (j as f64)).abs() }
        });
        let cutoff = 2.5;
        let y = DVector::from_fn(n, |i, _| i as f64 - 2.0);
        let x = DMatrix::from_fn(n, 1, |i, _| 1.0 + i as f64);
        let (psi, _, _) = small_psi(n, 1);
        let (regs, _) = build_np_design(&y, &dstar, cutoff, 2, &x, &psi).unwrap();
        let k2 = build_instruments(
            &InstrumentMenu::DistancePowersSimulation { dstar: &dstar, cutoff, d_tau: 2 },
            &x,
            &psi,
        )
        .unwrap();
        for l in 1..=2usize {
            let el = masked_distance_power(&dstar, cutoff, l).unwrap();
            assert!((regs.column(l - 1) - &el * &y).abs().max() < 1e-15);
            assert!((k2.column(l) - el * &x).abs().max() < 1e-15);
        }
    }

    #[test]
    fn assemble_rejects_under_identification() {
        let regs = DMatrix::<f64>::from_element(4, 3, 1.0);
        let k = DMatrix::<f64>::from_element(4, 2, 1.0);
        let err = DesignBundle::assemble(
            regs,
            vec![(BlockName::Exogenous, 3)],
            k,
            BlockName::Varying,
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnderIdentified { .. }));
    }

    #[test]
    fn selector_examples() {
        let regs = DMatrix::<f64>::zeros(4, 8);
        let k = DMatrix::<f64>::zeros(4, 8);
        let bundle = DesignBundle::assemble(
            regs,
            vec![
                (BlockName::Spatial, 2),
                (BlockName::Exogenous, 2),
                (BlockName::Varying, 4),
            ],
            k,
            BlockName::Varying,
        )
        .unwrap();
        let sel = selector(&bundle, BlockName::Varying).unwrap();
        assert_eq!((sel.offset, sel.width), (4, 4));
        let sel_sp = selector(&bundle, BlockName::Spatial).unwrap();
        assert_eq!((sel_sp.offset, sel_sp.width), (0, 2));
        let mask = sel.mask();
        for i in 0..8 {
            let expect = if (4..8).contains(&i) { 1.0 } else { 0.0 };
            assert_eq!(mask[(i, i)], expect);
        }
    }
}
