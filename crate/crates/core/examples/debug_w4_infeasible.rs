use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcwald::basis::{build_psi, eval_lambda_basis, BasisFamily, BasisSpec};
use vcwald::design::{build_vc_design, selector, BlockName, DesignBundle};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure, LambdaMode};
use vcwald::estimator::tsls;

fn main() {
    let h = 8usize;
    let n = 900usize;
    let reps = 600usize;
    let config = DgpConfig {
        seed: 20260808,
        lambda_mode: LambdaMode::Varying2,
        error_structure: ErrorStructure::SarDependent,
        ..DgpConfig::mc_default(n, 2)
    };
    let scaffold = DgpScaffold::new(&config).unwrap();
    let psi_spec = BasisSpec::new(BasisFamily::Polynomial, h).unwrap();
    let phi_spec = BasisSpec::new(BasisFamily::LambdaPolynomial, h / 2).unwrap();

    let alphas: Vec<DVector<f64>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, stream::REPLICATION, r as u64);
            let data = scaffold.generate(&mut rng).unwrap();
            let psi = build_psi(&data.p, &data.z, &[psi_spec]).unwrap();
            let phi =
                |z: f64| eval_lambda_basis(&phi_spec, z).unwrap().as_slice().to_vec();
            let (regs, blocks) =
                build_vc_design(&data.y, &data.weights, &data.z, phi, &data.x, &psi).unwrap();
            let n_rows = data.y.len();
            let l_per = h / 2;
            let mut cols: Vec<DVector<f64>> = Vec::new();
            for c in data.x.column_iter() {
                cols.push(c.into_owned());
            }
            for c in psi.values.column_iter() {
                cols.push(c.into_owned());
            }
            let phi_mat = DMatrix::from_fn(n_rows, l_per, |i, m| phi(data.z[i])[m]);
            let x2 = data.x.column(1).into_owned();
            for w in &data.weights {
                let wx2 = w.matvec(&x2).unwrap();
                for m in 0..l_per {
                    cols.push(DVector::from_fn(n_rows, |i, _| wx2[i] * phi_mat[(i, m)]));
                }
            }
            let k = DMatrix::from_columns(&cols);
            let bundle = DesignBundle::assemble(regs, blocks, k, BlockName::Varying).unwrap();
            let fit = tsls(&bundle.regressors, &bundle.instruments, &data.y).unwrap();
            let sel = selector(&bundle, BlockName::Varying).unwrap();
            sel.extract_vector(&fit.coefficients).unwrap()
        })
        .collect();

    let d_alpha = alphas[0].len();
    let mut norms: Vec<f64> = alphas.iter().map(|a| a.norm()).collect();
    norms.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let cut = norms[(reps as f64 * 0.98) as usize];
    let kept: Vec<&DVector<f64>> = alphas.iter().filter(|a| a.norm() <= cut).collect();
    let m = kept.len() as f64;
    let mean = kept
        .iter()
        .fold(DVector::zeros(d_alpha), |acc, a| acc + *a)
        / m;
    let mut cov = DMatrix::<f64>::zeros(d_alpha, d_alpha);
    for a in &kept {
        let c = *a - &mean;
        cov += &c * c.transpose();
    }
    cov /= m;
    let cov_inv = cov.clone().try_inverse().unwrap();
    let chi = ChiSquared::new(d_alpha as f64).unwrap();
    let quads: Vec<f64> = alphas
        .iter()
        .map(|a| (a.transpose() * &cov_inv * a)[(0, 0)])
        .collect();
    let mut rates = [0.0f64; 3];
    for (li, &lev) in [0.01, 0.05, 0.10].iter().enumerate() {
        rates[li] =
            quads.iter().filter(|&&q| chi.sf(q.max(0.0)) < lev).count() as f64 / reps as f64;
    }
    let mean_q = quads.iter().sum::<f64>() / reps as f64;
    println!(
        "W4 n={n} h={h} infeasible: chi rejections {:.3} {:.3} {:.3}  mean quad {:.3} (d={d_alpha})",
        rates[0], rates[1], rates[2], mean_q
    );
    println!("alpha mean norm {:.4}  mean vec {:?}", mean.norm(),
        mean.iter().map(|v| (v * 1e4).round() / 1e4).collect::<Vec<_>>());
}
