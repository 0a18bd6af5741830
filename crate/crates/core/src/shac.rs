//! Spatial HAC estimation of Ξ = K'ΣK/n from residuals and noisy distances.
//!
//! The estimate weights residual cross-products by a compactly supported
//! kernel of the smallest distance ratio across measures,
//! Ω_{ij} = 𝒦(min_m d*_{ij,m}/d_m), and forms Ξ̂ = K'(Ω ∘ ûû')K / n.
//!
//! The default kernel is the unnormalized Epanechnikov (1−x²)·1(|x|≤1): the
//! textbook ¾(1−x²) violates the requirement 𝒦(0)=1, so the shape is kept
//! and the scale fixed at one.
//!
//! Ω is never materialized whole. Rows are processed in fixed-size blocks,
//! each block contributing a partial J×J sum; partials combine in block
//! order, so results are bit-identical for any rayon thread count.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::weights::validate_distance_matrix;

const ROW_BLOCK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelShape {
    /// (1 − x²)·1(|x| ≤ 1); satisfies 𝒦(0)=1 unlike the density-normalized
    /// Epanechnikov.
    EpanechnikovUnnormalized,
    /// (1 − |x|)·1(|x| ≤ 1).
    Bartlett,
    /// Piecewise-linear table of (|x|, value) knots on [0, 1]; values outside
    /// the last knot are zero. Must start at (0, 1).
    CustomTable(Vec<(f64, f64)>),
}

/// Kernel plus the smoothness exponent ρ from its Lipschitz-type bound
/// |𝒦(x)−1| ≤ C|x|^ρ. The exponent is metadata; it has no runtime role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub shape: KernelShape,
    pub smoothness_rho: f64,
}

impl KernelSpec {
    pub fn epanechnikov() -> Self {
        KernelSpec {
            shape: KernelShape::EpanechnikovUnnormalized,
            smoothness_rho: 2.0,
        }
    }

    pub fn bartlett() -> Self {
        KernelSpec {
            shape: KernelShape::Bartlett,
            smoothness_rho: 1.0,
        }
    }

    pub fn custom(table: Vec<(f64, f64)>) -> Result<Self> {
        let spec = KernelSpec {
            shape: KernelShape::CustomTable(table),
            smoothness_rho: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Check 𝒦(0)=1, range ⊆ [−1,1], and compact support (symmetry holds by
    /// construction: evaluation uses |x|).
    pub fn validate(&self) -> Result<()> {
        if kernel_eval(self, 0.0) != 1.0 {
            return Err(Error::InvalidArgument("kernel must satisfy K(0)=1".into()));
        }
        if let KernelShape::CustomTable(table) = &self.shape {
            if table.is_empty() || table[0] != (0.0, 1.0) {
                return Err(Error::InvalidArgument(
                    "custom kernel table must start at (0, 1)".into(),
                ));
            }
            let mut prev = -1.0;
            for &(x, v) in table {
                if !(0.0..=1.0).contains(&x) || x <= prev {
                    return Err(Error::InvalidArgument(
                        "custom kernel knots must be increasing within [0, 1]".into(),
                    ));
                }
                if !(-1.0..=1.0).contains(&v) {
                    return Err(Error::InvalidArgument(
                        "custom kernel values must lie in [-1, 1]".into(),
                    ));
                }
                prev = x;
            }
        }
        Ok(())
    }
}

/// Evaluate the kernel at x; even in x, zero outside [−1, 1].
pub fn kernel_eval(spec: &KernelSpec, x: f64) -> f64 {
    let a = x.abs();
    if a > 1.0 {
        return 0.0;
    }
    match &spec.shape {
        KernelShape::EpanechnikovUnnormalized => 1.0 - a * a,
        KernelShape::Bartlett => 1.0 - a,
        KernelShape::CustomTable(table) => {
            if table.is_empty() {
                return 0.0;
            }
            let mut prev = table[0];
            if a <= prev.0 {
                return prev.1;
            }
            for &knot in &table[1..] {
                if a <= knot.0 {
                    let t = (a - prev.0) / (knot.0 - prev.0);
                    return prev.1 + t * (knot.1 - prev.1);
                }
                prev = knot;
            }
            0.0
        }
    }
}

/// Neighbor count rule ℓ = ⌊n^η⌋ + 1.
pub fn ell_from_eta(n: usize, eta: f64) -> Result<usize> {
    if !(eta > 0.0 && eta < 0.5) {
        return Err(Error::InvalidArgument(format!(
            "eta must lie in (0, 1/2), got {eta}"
        )));
    }
    Ok((n as f64).powf(eta).floor() as usize + 1)
}

/// Bandwidth rule d_m = max_i (ℓ-th smallest off-diagonal entry of row i),
/// so every unit has at least ℓ neighbors within distance d_m.
pub fn nn_bandwidth(dstar: &DMatrix<f64>, ell: usize) -> Result<f64> {
    let n = dstar.nrows();
    if ell == 0 || ell > n.saturating_sub(1) {
        return Err(Error::InvalidArgument(format!(
            "nn_bandwidth needs 1 <= ell <= n-1, got ell={ell}, n={n}"
        )));
    }
    let mut worst = 0.0f64;
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        for j in 0..n {
            if j != i {
                buf.push(dstar[(i, j)]);
            }
        }
        let (_, kth, _) = buf.select_nth_unstable_by(ell - 1, |a, b| a.partial_cmp(b).unwrap());
        worst = worst.max(*kth);
    }
    Ok(worst)
}

/// A collection of noisy distance measures with per-measure thresholds and
/// the neighbor rule that produced them.
#[derive(Debug, Clone)]
pub struct DistanceSet {
    measures: Vec<DMatrix<f64>>,
    thresholds: Vec<f64>,
    pub ell: usize,
    pub eta: f64,
}

impl DistanceSet {
    pub fn new(
        measures: Vec<DMatrix<f64>>,
        thresholds: Vec<f64>,
        ell: usize,
        eta: f64,
    ) -> Result<Self> {
        if measures.is_empty() {
            return Err(Error::InvalidArgument("no distance measures".into()));
        }
        if measures.len() != thresholds.len() {
            return Err(Error::Dimension(format!(
                "{} measures vs {} thresholds",
                measures.len(),
                thresholds.len()
            )));
        }
        let n = measures[0].nrows();
        for m in &measures {
            if m.nrows() != n {
                return Err(Error::Dimension("distance measures differ in size".into()));
            }
            validate_distance_matrix(m)?;
        }
        for &t in &thresholds {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "thresholds must be strictly positive, got {t}"
                )));
            }
        }
        Ok(DistanceSet {
            measures,
            thresholds,
            ell,
            eta,
        })
    }

    /// Derive thresholds from the ℓ-nearest-neighbor rule per measure.
    pub fn from_neighbor_rule(measures: Vec<DMatrix<f64>>, ell: usize, eta: f64) -> Result<Self> {
        let thresholds = measures
            .iter()
            .map(|m| nn_bandwidth(m, ell))
            .collect::<Result<Vec<_>>>()?;
        DistanceSet::new(measures, thresholds, ell, eta)
    }

    pub fn n(&self) -> usize {
        self.measures[0].nrows()
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measures(&self) -> &[DMatrix<f64>] {
        &self.measures
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }

    /// min_m d*_{ij,m}/d_m.
    pub fn min_ratio(&self, i: usize, j: usize) -> f64 {
        self.measures
            .iter()
            .zip(&self.thresholds)
            .map(|(d, &t)| d[(i, j)] / t)
            .fold(f64::INFINITY, f64::min)
    }
}

/// The SHAC estimate Ξ̂ of K'ΣK/n.
#[derive(Debug, Clone)]
pub struct ShacEstimate {
    pub xi_hat: DMatrix<f64>,
    pub kernel: KernelSpec,
    /// Ordered off-diagonal pairs (i, j) receiving nonzero kernel weight.
    pub effective_pairs: usize,
}

impl ShacEstimate {
    /// Eigenvalues of Ξ̂ below −tol·trace, surfaced as a diagnostic. The
    /// estimate is used as-is; nothing is repaired here.
    pub fn negative_eigenvalues(&self, rel_tol: f64) -> Vec<f64> {
        let trace = self.xi_hat.trace().abs().max(f64::MIN_POSITIVE);
        let eig = self.xi_hat.clone().symmetric_eigen();
        eig.eigenvalues
            .iter()
            .copied()
            .filter(|&v| v < -rel_tol * trace)
            .collect()
    }

    /// Optional stabilization for downstream inversion: clip eigenvalues
    /// below `floor_rel`·trace. OFF when reproducing tables.
    pub fn clipped(&self, floor_rel: f64) -> ShacEstimate {
        let trace = self.xi_hat.trace().abs().max(f64::MIN_POSITIVE);
        let floor = floor_rel * trace;
        let eig = self.xi_hat.clone().symmetric_eigen();
        let clipped = DVector::from_fn(eig.eigenvalues.len(), |i, _| eig.eigenvalues[i].max(floor));
        let mut scaled = eig.eigenvectors.clone();
        for (c, mut col) in scaled.column_iter_mut().enumerate() {
            col *= clipped[c];
        }
        ShacEstimate {
            xi_hat: linalg::symmetrize(&(scaled * eig.eigenvectors.transpose())),
            kernel: self.kernel.clone(),
            effective_pairs: self.effective_pairs,
        }
    }
}

/// Ξ̂_{rs} = n⁻¹ Σ_i Σ_j k_{ri} k_{sj} û_i û_j 𝒦(min_m d*_{ij,m}/d_m).
pub fn shac_xi(
    k: &DMatrix<f64>,
    u_hat: &DVector<f64>,
    dist: &DistanceSet,
    kernel: &KernelSpec,
) -> Result<ShacEstimate> {
    let n = k.nrows();
    if u_hat.len() != n {
        return Err(Error::Dimension(format!(
            "shac: residual length {} vs {} instrument rows",
            u_hat.len(),
            n
        )));
    }
    if dist.n() != n {
        return Err(Error::Dimension(format!(
            "shac: distance measures are {}x{0} for n={n}",
            dist.n()
        )));
    }
    kernel.validate()?;
    let j = k.ncols();
    // Rows of K scaled by residuals: Ũ = diag(û)K, so Ξ̂ = Ũ'ΩŨ/n.
    let mut scaled = k.clone();
    for i in 0..n {
        let ui = u_hat[i];
        for c in 0..j {
            scaled[(i, c)] *= ui;
        }
    }
    let blocks: Vec<usize> = (0..n).step_by(ROW_BLOCK).collect();
    let partials: Vec<(DMatrix<f64>, usize)> = blocks
        .par_iter()
        .map(|&start| {
            let rows = ROW_BLOCK.min(n - start);
            let mut omega_block = DMatrix::<f64>::zeros(rows, n);
            let mut pairs = 0usize;
            for bi in 0..rows {
                let i = start + bi;
                for jj in 0..n {
                    let w = if i == jj {
                        1.0
                    } else {
                        kernel_eval(kernel, dist.min_ratio(i, jj))
                    };
                    if w != 0.0 && i != jj {
                        pairs += 1;
                    }
                    omega_block[(bi, jj)] = w;
                }
            }
            let block_scaled = scaled.rows(start, rows).into_owned();
            let partial = block_scaled.transpose() * (omega_block * &scaled);
            (partial, pairs)
        })
        .collect();
    let mut xi = DMatrix::<f64>::zeros(j, j);
    let mut effective_pairs = 0usize;
    for (partial, pairs) in partials {
        xi += partial;
        effective_pairs += pairs;
    }
    xi /= n as f64;
    Ok(ShacEstimate {
        xi_hat: linalg::symmetrize(&xi),
        kernel: kernel.clone(),
        effective_pairs,
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

    fn pseudo_distances(n: usize, salt: u64) -> DMatrix<f64> {
        let raw = pseudo(n, n, salt);
        let mut d = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let v = raw[(i, j)].abs() * 4.0 + 0.05;
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Literal O(n²J²) double sum from the definition.
    fn shac_reference(
        k: &DMatrix<f64>,
        u: &DVector<f64>,
        dist: &DistanceSet,
        kernel: &KernelSpec,
    ) -> DMatrix<f64> {
        let n = k.nrows();
        let j = k.ncols();
        let mut xi = DMatrix::<f64>::zeros(j, j);
        for r in 0..j {
            for s in 0..j {
                let mut acc = 0.0;
                for i in 0..n {
                    for jj in 0..n {
                        let w = if i == jj {
                            1.0
                        } else {
                            kernel_eval(kernel, dist.min_ratio(i, jj))
                        };
                        acc += k[(i, r)] * k[(jj, s)] * u[i] * u[jj] * w;
                    }
                }
                xi[(r, s)] = acc / n as f64;
            }
        }
        xi
    }

    #[test]
    fn kernel_values() {
        let ep = KernelSpec::epanechnikov();
        assert_eq!(kernel_eval(&ep, 0.0), 1.0);
        assert_eq!(kernel_eval(&ep, 1.0), 0.0);
        assert_eq!(kernel_eval(&ep, -1.0), 0.0);
        assert_eq!(kernel_eval(&ep, 1.5), 0.0);
        assert!((kernel_eval(&ep, 0.5) - 0.75).abs() < 1e-15);
        let ba = KernelSpec::bartlett();
        assert!((kernel_eval(&ba, 0.25) - 0.75).abs() < 1e-15);
        assert_eq!(kernel_eval(&ba, -0.5), kernel_eval(&ba, 0.5));
    }

    #[test]
    fn custom_table_kernel_interpolates() {
        let spec = KernelSpec::custom(vec![(0.0, 1.0), (0.5, 0.5), (1.0, 0.0)]).unwrap();
        assert_eq!(kernel_eval(&spec, 0.0), 1.0);
        assert!((kernel_eval(&spec, 0.25) - 0.75).abs() < 1e-15);
        assert_eq!(kernel_eval(&spec, 2.0), 0.0);
        assert!(KernelSpec::custom(vec![(0.0, 0.9)]).is_err());
    }

    #[test]
    fn ell_rule_examples() {
        assert_eq!(ell_from_eta(900, 3.0 / 7.0).unwrap(), 19);
        assert_eq!(ell_from_eta(1, 3.0 / 7.0).unwrap(), 2);
        let mut prev = 0;
        for n in [1usize, 10, 100, 1000, 10_000] {
            let ell = ell_from_eta(n, 0.4).unwrap();
            assert!(ell >= prev);
            prev = ell;
        }
        assert!(ell_from_eta(10, 0.6).is_err());
    }

    #[test]
    fn nn_bandwidth_enumerated() {
        let d = DMatrix::from_row_slice(
            3,
            3,
            &[0.0, 1.0, 2.0, 1.0, 0.0, 3.0, 2.0, 3.0, 0.0],
        );
        assert_eq!(nn_bandwidth(&d, 1).unwrap(), 2.0);
        assert_eq!(nn_bandwidth(&d, 2).unwrap(), 3.0);
        assert!(nn_bandwidth(&d, 3).is_err());
        let c = DMatrix::from_fn(4, 4, |i, j| if i == j { 0.0 } else { 5.0 });
        assert_eq!(nn_bandwidth(&c, 2).unwrap(), 5.0);
    }

    #[test]
    fn shac_heteroskedasticity_only_when_cutoffs_tiny() {
        let n = 12;
        let k = pseudo(n, 3, 31);
        let u = pseudo(n, 1, 32).column(0).into_owned();
        let d = pseudo_distances(n, 33);
        // Threshold far below the minimum distance: only the diagonal survives.
        let dist = DistanceSet::new(vec![d], vec![1e-6], 1, 3.0 / 7.0).unwrap();
        let est = shac_xi(&k, &u, &dist, &KernelSpec::epanechnikov()).unwrap();
        let mut expect = DMatrix::<f64>::zeros(3, 3);
        for i in 0..n {
            let ki = k.row(i).transpose();
            expect += &ki * ki.transpose() * u[i] * u[i];
        }
        expect /= n as f64;
        assert!((est.xi_hat - expect).abs().max() < 1e-12);
        assert_eq!(est.effective_pairs, 0);
    }

    #[test]
    fn shac_two_point_hand_calculation() {
        let k = DMatrix::from_column_slice(2, 1, &[1.0, 1.0]);
        let u = DVector::from_column_slice(&[1.0, 2.0]);
        let d = DMatrix::from_row_slice(2, 2, &[0.0, 0.5, 0.5, 0.0]);
        let dist = DistanceSet::new(vec![d], vec![1.0], 1, 3.0 / 7.0).unwrap();
        let kernel = KernelSpec::epanechnikov();
        let w = kernel_eval(&kernel, 0.5);
        let est = shac_xi(&k, &u, &dist, &kernel).unwrap();
        let expect = (1.0 + 4.0 + 2.0 * w * 2.0) / 2.0;
        assert!((est.xi_hat[(0, 0)] - expect).abs() < 1e-14);
    }

    #[test]
    fn shac_zero_residuals_give_zero() {
        let n = 8;
        let k = pseudo(n, 2, 34);
        let dist =
            DistanceSet::new(vec![pseudo_distances(n, 35)], vec![1.0], 1, 3.0 / 7.0).unwrap();
        let est = shac_xi(&k, &DVector::zeros(n), &dist, &KernelSpec::epanechnikov()).unwrap();
        assert!(est.xi_hat.abs().max() == 0.0);
    }

    #[test]
    fn shac_matches_double_sum_reference() {
        for (n, j, salt) in [(7usize, 2usize, 40u64), (13, 3, 41), (20, 4, 42)] {
            let k = pseudo(n, j, salt);
            let u = pseudo(n, 1, salt + 100).column(0).into_owned();
            let d1 = pseudo_distances(n, salt + 200);
            let d2 = pseudo_distances(n, salt + 300);
            let dist =
                DistanceSet::from_neighbor_rule(vec![d1, d2], 2.min(n - 1), 3.0 / 7.0).unwrap();
            let kernel = KernelSpec::epanechnikov();
            let est = shac_xi(&k, &u, &dist, &kernel).unwrap();
            let reference = shac_reference(&k, &u, &dist, &kernel);
            assert!(
                (est.xi_hat.clone() - reference).abs().max() < 1e-10,
                "mismatch at n={n}, J={j}"
            );
            assert!(linalg::max_abs_offdiag_asymmetry(&est.xi_hat) < 1e-12);
        }
    }

    #[test]
    fn extra_measure_with_huge_threshold_weakly_increases_weights() {
        let n = 10;
        let d1 = pseudo_distances(n, 50);
        let d2 = pseudo_distances(n, 51);
        let set1 = DistanceSet::new(vec![d1.clone()], vec![1.5], 2, 3.0 / 7.0).unwrap();
        let set2 = DistanceSet::new(vec![d1, d2], vec![1.5, 1e9], 2, 3.0 / 7.0).unwrap();
        let kernel = KernelSpec::epanechnikov();
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    continue;
                }
                let w1 = kernel_eval(&kernel, set1.min_ratio(i, j));
                let w2 = kernel_eval(&kernel, set2.min_ratio(i, j));
                assert!(w2 >= w1 - 1e-15);
            }
        }
    }

    #[test]
    fn single_measure_reduces_to_plain_formula() {
        let n = 9;
        let d = pseudo_distances(n, 60);
        let set = DistanceSet::new(vec![d.clone()], vec![2.0], 2, 3.0 / 7.0).unwrap();
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    assert_eq!(set.min_ratio(i, j), d[(i, j)] / 2.0);
                }
            }
        }
    }

    #[test]
    fn negative_eigenvalue_diagnostic_and_clipping() {
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        let est = ShacEstimate {
            xi_hat: xi,
            kernel: KernelSpec::epanechnikov(),
            effective_pairs: 0,
        };
        let neg = est.negative_eigenvalues(1e-10);
        assert_eq!(neg.len(), 1);
        assert!((neg[0] + 1.0).abs() < 1e-12);
        let fixed = est.clipped(1e-10);
        assert!(fixed.negative_eigenvalues(1e-10).is_empty());
    }
}
