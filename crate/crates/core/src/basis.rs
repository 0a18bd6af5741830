//! Series basis families and assembly of the varying-coefficient regressor
//! block Ψ.
//!
//! Two regression families approximate the varying coefficients δ_k(z):
//! powers z, z², …, z^h and paired trigonometric terms sin(kz), cos(kz).
//! Two further families approximate varying spatial-lag coefficients λ_j(z):
//! scaled tanh powers and slow sine waves. No intercept column is injected
//! here; callers put constants in X.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BasisFamily {
    Polynomial,
    Trigonometric,
    LambdaPolynomial,
    LambdaTrigonometric,
}

impl BasisFamily {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "polynomial" | "poly" => Ok(BasisFamily::Polynomial),
            "trigonometric" | "trig" => Ok(BasisFamily::Trigonometric),
            "lambda-polynomial" | "lambda-poly" => Ok(BasisFamily::LambdaPolynomial),
            "lambda-trigonometric" | "lambda-trig" => Ok(BasisFamily::LambdaTrigonometric),
            other => Err(Error::Config(format!("unknown basis family {other:?}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BasisFamily::Polynomial => "polynomial",
            BasisFamily::Trigonometric => "trigonometric",
            BasisFamily::LambdaPolynomial => "lambda-polynomial",
            BasisFamily::LambdaTrigonometric => "lambda-trigonometric",
        }
    }

    /// The matching family for varying spatial-lag coefficients.
    pub fn lambda_counterpart(&self) -> BasisFamily {
        match self {
            BasisFamily::Polynomial | BasisFamily::LambdaPolynomial => {
                BasisFamily::LambdaPolynomial
            }
            BasisFamily::Trigonometric | BasisFamily::LambdaTrigonometric => {
                BasisFamily::LambdaTrigonometric
            }
        }
    }
}

/// A basis family plus its column count h.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub family: BasisFamily,
    pub order: usize,
}

impl BasisSpec {
    pub fn new(family: BasisFamily, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidArgument("basis order must be >= 1".into()));
        }
        if family == BasisFamily::Trigonometric && order % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "trigonometric basis needs an even order, got {order}"
            )));
        }
        Ok(BasisSpec { family, order })
    }
}

/// Evaluate a regression basis ψ^h(z).
pub fn eval_regression_basis(spec: &BasisSpec, z: f64) -> Result<DVector<f64>> {
    match spec.family {
        BasisFamily::Polynomial => {
            let mut out = DVector::zeros(spec.order);
            let mut acc = 1.0;
            for m in 0..spec.order {
                acc *= z;
                out[m] = acc;
            }
            Ok(out)
        }
        BasisFamily::Trigonometric => {
            if spec.order % 2 != 0 {
                return Err(Error::InvalidArgument(
                    "trigonometric basis needs an even order".into(),
                ));
            }
            let mut out = DVector::zeros(spec.order);
            for k in 1..=(spec.order / 2) {
                let kz = k as f64 * z;
                out[2 * (k - 1)] = kz.sin();
                out[2 * (k - 1) + 1] = kz.cos();
            }
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!(
            "{} is a spatial-lag basis; use eval_lambda_basis",
            spec.family.name()
        ))),
    }
}

/// Evaluate a spatial-lag basis φ^h(z): (1/h)·((2/π)·tanh z)^m or
/// (1/h)·sin(z/(2m)) for m = 1..h.
pub fn eval_lambda_basis(spec: &BasisSpec, z: f64) -> Result<DVector<f64>> {
    let h = spec.order;
    let scale = 1.0 / h as f64;
    match spec.family {
        BasisFamily::LambdaPolynomial => {
            let base = (2.0 / std::f64::consts::PI) * z.tanh();
            let mut out = DVector::zeros(h);
            let mut acc = 1.0;
            for m in 0..h {
                acc *= base;
                out[m] = scale * acc;
            }
            Ok(out)
        }
        BasisFamily::LambdaTrigonometric => {
            let mut out = DVector::zeros(h);
            for m in 1..=h {
                out[m - 1] = scale * (z / (2.0 * m as f64)).sin();
            }
            Ok(out)
        }
        _ => Err(Error::InvalidArgument(format!(
            "{} is a regression basis; use eval_regression_basis",
            spec.family.name()
        ))),
    }
}

/// The stacked n×d_α varying-coefficient block Ψ with its column layout.
#[derive(Debug, Clone)]
pub struct BasisMatrix {
    pub values: DMatrix<f64>,
    /// (coefficient index k, basis spec with order h_k) in column order.
    pub block_layout: Vec<(usize, BasisSpec)>,
}

impl BasisMatrix {
    pub fn d_alpha(&self) -> usize {
        self.values.ncols()
    }

    /// Column offset of coefficient block k.
    pub fn block_offset(&self, k: usize) -> Result<usize> {
        let mut off = 0;
        for &(idx, spec) in &self.block_layout {
            if idx == k {
                return Ok(off);
            }
            off += spec.order;
        }
        Err(Error::InvalidArgument(format!("no basis block for coefficient {k}")))
    }

    pub fn block_spec(&self, k: usize) -> Result<BasisSpec> {
        self.block_layout
            .iter()
            .find(|&&(idx, _)| idx == k)
            .map(|&(_, spec)| spec)
            .ok_or_else(|| Error::InvalidArgument(format!("no basis block for coefficient {k}")))
    }

    pub fn block_order(&self, k: usize) -> Result<usize> {
        self.block_spec(k).map(|spec| spec.order)
    }

    /// Optional conditioning aid: rescale every column to unit sample
    /// standard deviation (columns with zero variance are left alone). Off
    /// when reproducing the tables.
    pub fn standardize_columns(&self) -> BasisMatrix {
        let n = self.values.nrows() as f64;
        let mut values = self.values.clone();
        for mut col in values.column_iter_mut() {
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            if var > 0.0 {
                let sd = var.sqrt();
                for v in col.iter_mut() {
                    *v /= sd;
                }
            }
        }
        BasisMatrix {
            values,
            block_layout: self.block_layout.clone(),
        }
    }
}

/// Assemble Ψ: row i is (p_{i1}·ψ₁(z_i)', …, p_{i d_δ}·ψ_{d_δ}(z_i)').
pub fn build_psi(p: &DMatrix<f64>, z: &DVector<f64>, specs: &[BasisSpec]) -> Result<BasisMatrix> {
    let n = p.nrows();
    if z.len() != n {
        return Err(Error::Dimension(format!(
            "build_psi: z has {} entries for {} rows of P",
            z.len(),
            n
        )));
    }
    if specs.len() != p.ncols() {
        return Err(Error::Dimension(format!(
            "build_psi: {} basis specs for {} columns of P",
            specs.len(),
            p.ncols()
        )));
    }
    let d_alpha: usize = specs.iter().map(|s| s.order).sum();
    let mut values = DMatrix::<f64>::zeros(n, d_alpha);
    for i in 0..n {
        let mut off = 0;
        for (k, spec) in specs.iter().enumerate() {
            let psi = eval_regression_basis(spec, z[i])?;
            let pik = p[(i, k)];
            for m in 0..spec.order {
                values[(i, off + m)] = pik * psi[m];
            }
            off += spec.order;
        }
    }
    Ok(BasisMatrix {
        values,
        block_layout: specs.iter().enumerate().map(|(k, &s)| (k, s)).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn polynomial_evaluation() {
        let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();
        let v = eval_regression_basis(&spec, 0.5).unwrap();
        assert_eq!(v.as_slice(), &[0.5, 0.25]);
        let spec4 = BasisSpec::new(BasisFamily::Polynomial, 4).unwrap();
        let v4 = eval_regression_basis(&spec4, 1.0).unwrap();
        assert_eq!(v4.as_slice(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn trigonometric_evaluation() {
        let spec = BasisSpec::new(BasisFamily::Trigonometric, 2).unwrap();
        let v = eval_regression_basis(&spec, 0.0).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 1.0]);
    }

    #[test]
    fn trigonometric_rejects_odd_order() {
        assert!(BasisSpec::new(BasisFamily::Trigonometric, 3).is_err());
    }

    #[test]
    fn lambda_polynomial_at_zero() {
        let spec = BasisSpec::new(BasisFamily::LambdaPolynomial, 2).unwrap();
        let v = eval_lambda_basis(&spec, 0.0).unwrap();
        assert_eq!(v.as_slice(), &[0.0, 0.0]);
    }

    #[test]
    fn lambda_trigonometric_at_pi() {
        let spec = BasisSpec::new(BasisFamily::LambdaTrigonometric, 1).unwrap();
        let v = eval_lambda_basis(&spec, std::f64::consts::PI).unwrap();
        assert!((v[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_polynomial_saturates_at_two_over_pi() {
        let spec = BasisSpec::new(BasisFamily::LambdaPolynomial, 1).unwrap();
        let v = eval_lambda_basis(&spec, 1e6).unwrap();
        assert!((v[0] - 2.0 / std::f64::consts::PI).abs() < 1e-12);
    }

    #[test]
    fn psi_row_scaling() {
        let p = DMatrix::<f64>::from_column_slice(1, 1, &[2.0]);
        let z = DVector::from_column_slice(&[0.5]);
        let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();
        let psi = build_psi(&p, &z, &[spec]).unwrap();
        assert_eq!(psi.values.row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 0.5]);
        assert_eq!(psi.d_alpha(), 2);
    }

    #[test]
    fn psi_zero_p_gives_zero_block() {
        let p = DMatrix::<f64>::from_column_slice(1, 1, &[0.0]);
        let z = DVector::from_column_slice(&[0.7]);
        let spec = BasisSpec::new(BasisFamily::Polynomial, 3).unwrap();
        let psi = build_psi(&p, &z, &[spec]).unwrap();
        assert!(psi.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn psi_two_coefficient_layout() {
        let p = DMatrix::<f64>::from_row_slice(1, 2, &[3.0, 5.0]);
        let z = DVector::from_column_slice(&[0.25]);
        let spec = BasisSpec::new(BasisFamily::Polynomial, 1).unwrap();
        let psi = build_psi(&p, &z, &[spec, spec]).unwrap();
        assert_eq!(psi.values[(0, 0)], 3.0 * 0.25);
        assert_eq!(psi.values[(0, 1)], 5.0 * 0.25);
        assert_eq!(psi.block_offset(1).unwrap(), 1);
    }

    proptest! {
        // Extracting block k of a Ψ row and dividing by p_{ik} reproduces the
        // raw basis evaluation.
        #[test]
        fn block_layout_roundtrip(
            z in -3.0f64..3.0,
            p1 in prop::sample::select(vec![-2.0f64, -0.5, 0.7, 1.9]),
            p2 in prop::sample::select(vec![-1.5f64, 0.4, 2.0]),
            h1 in 1usize..5,
            h2 in 1usize..3,
        ) {
            let p = DMatrix::<f64>::from_row_slice(1, 2, &[p1, p2]);
            let zv = DVector::from_column_slice(&[z]);
            let s1 = BasisSpec::new(BasisFamily::Polynomial, h1).unwrap();
            let s2 = BasisSpec::new(BasisFamily::Trigonometric, 2 * h2).unwrap();
            let psi = build_psi(&p, &zv, &[s1, s2]).unwrap();
            prop_assert_eq!(psi.d_alpha(), h1 + 2 * h2);
            let raw1 = eval_regression_basis(&s1, z).unwrap();
            let raw2 = eval_regression_basis(&s2, z).unwrap();
            for m in 0..h1 {
                prop_assert!((psi.values[(0, m)] / p1 - raw1[m]).abs() < 1e-14);
            }
            let off = psi.block_offset(1).unwrap();
            for m in 0..2 * h2 {
                prop_assert!((psi.values[(0, off + m)] / p2 - raw2[m]).abs() < 1e-14);
            }
        }
    }
}
