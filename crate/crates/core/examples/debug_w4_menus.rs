use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcwald::basis::{build_psi, eval_lambda_basis, BasisFamily, BasisSpec};
use vcwald::design::{build_vc_design, selector, BlockName, DesignBundle};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure, LambdaMode};
use vcwald::estimator::tsls;
use vcwald::shac::{shac_xi, KernelSpec};
use vcwald::wald::dmat_shac;

fn main() {
    let h = 8usize;
    for n in [200usize, 900] {
        let reps = 500usize;
        let config = DgpConfig {
            seed: 20260808,
            lambda_mode: LambdaMode::Varying2,
            error_structure: ErrorStructure::SarDependent,
            error_dist: vcwald::dgp::ErrorDist::V3,
            ..DgpConfig::mc_default(n, 2)
        };
        let scaffold = DgpScaffold::new(&config).unwrap();
        let psi_spec = BasisSpec::new(BasisFamily::Polynomial, h).unwrap();
        let phi_spec = BasisSpec::new(BasisFamily::LambdaPolynomial, h / 2).unwrap();
        for variant in 0..1 {
            let results: Vec<Result<f64, String>> = (0..reps)
                .into_par_iter()
                .map(|r| {
                    let mut rng = replication_rng(config.seed, stream::REPLICATION, r as u64);
                    let data = scaffold.generate(&mut rng).map_err(|e| e.to_string())?;
                    let psi = build_psi(&data.p, &data.z, &[psi_spec]).unwrap();
                    let phi = |z: f64| {
                        eval_lambda_basis(&phi_spec, z).unwrap().as_slice().to_vec()
                    };
                    let (regs, blocks) =
                        build_vc_design(&data.y, &data.weights, &data.z, phi, &data.x, &psi)
                            .unwrap();
                    // Instrument variants.
                    let n_rows = data.y.len();
                    let mut cols: Vec<DVector<f64>> = Vec::new();
                    for c in data.x.column_iter() {
                        cols.push(c.into_owned());
                    }
                    for c in psi.values.column_iter() {
                        cols.push(c.into_owned());
                    }
                    let l_per = h / 2;
                    let phi_mat =
                        DMatrix::from_fn(n_rows, l_per, |i, m| phi(data.z[i])[m]);
                    if variant == 0 {
                        for c in phi_mat.column_iter() {
                            cols.push(c.into_owned());
                        }
                    }
                    let x2 = data.x.column(1).into_owned();
                    for w in &data.weights {
                        let wx2 = w.matvec(&x2).unwrap();
                        for m in 0..l_per {
                            cols.push(DVector::from_fn(n_rows, |i, _| {
                                wx2[i] * phi_mat[(i, m)]
                            }));
                        }
                        if variant == 2 {
                            // plain spatial lag of x2 as well
                            cols.push(wx2.clone());
                        }
                    }
                    let k = DMatrix::from_columns(&cols);
                    let bundle =
                        DesignBundle::assemble(regs, blocks, k, BlockName::Varying)
                            .map_err(|e| e.to_string())?;
                    let fit = tsls(&bundle.regressors, &bundle.instruments, &data.y)
                        .map_err(|e| e.to_string())?;
                    let sel = selector(&bundle, BlockName::Varying).unwrap();
                    let reduced = fit.reduced_instruments(&bundle.instruments);
                    let xi = shac_xi(
                        &reduced,
                        &fit.residuals,
                        data.distances.as_ref().unwrap(),
                        &KernelSpec::epanechnikov(),
                    )
                    .map_err(|e| e.to_string())?;
                    let d = dmat_shac(&fit, &xi, &sel).map_err(|e| e.to_string())?;
                    let alpha = sel.extract_vector(&fit.coefficients).unwrap();
                    let quad = n_rows as f64
                        * (alpha.transpose()
                            * d.clone().try_inverse().ok_or("singular D")?
                            * &alpha)[(0, 0)];
                    if !quad.is_finite() {
                        return Err("nan".into());
                    }
                    Ok(quad)
                })
                .collect();
            let ok: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
            let failures = reps - ok.len();
            let chi = ChiSquared::new(h as f64).unwrap();
            let mut rates = [0.0f64; 3];
            for (li, &lev) in [0.01, 0.05, 0.10].iter().enumerate() {
                rates[li] = ok.iter().filter(|&&q| chi.sf(q.max(0.0)) < lev).count() as f64
                    / ok.len().max(1) as f64;
            }
            println!(
                "n={n} variant={variant}: chi-p {:.3} {:.3} {:.3}  failures {failures}",
                rates[0], rates[1], rates[2]
            );
        }
    }
    println!("paper W4 table: n=200 (0.109 0.177 0.225)  n=900 (0.018 0.038 0.081)");
}
