use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use vcwald::basis::{build_psi, BasisFamily, BasisSpec};
use vcwald::design::{build_instruments, build_sar_design, BlockName, DesignBundle, InstrumentMenu};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure};
use vcwald::estimator::tsls;
use vcwald::shac::{shac_xi, KernelSpec};
use vcwald::wald::{dmat_plain, dmat_shac, VarianceMode};

fn main() {
    let n = 900usize;
    let reps = 400usize;
    let config = DgpConfig {
        seed: 4,
        error_structure: ErrorStructure::SarDependent,
        ..DgpConfig::mc_default(n, 2)
    };
    let scaffold = DgpScaffold::new(&config).unwrap();
    let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();

    // True Sigma = BB'.
    let a = scaffold.weights()[0].to_dense() * 0.6 + scaffold.weights()[1].to_dense() * 0.3;
    let b = (DMatrix::<f64>::identity(n, n) - a).try_inverse().unwrap();
    let sigma = &b * b.transpose();
    println!("mean diag Sigma: {:.4}", sigma.diagonal().mean());

    let results: Vec<_> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, stream::REPLICATION, r as u64);
            let data = scaffold.generate(&mut rng).unwrap();
            let psi = build_psi(&data.p, &data.z, &[spec]).unwrap();
            let (regs, blocks) =
                build_sar_design(&data.y, &data.weights, &data.x, &psi).unwrap();
            let k = build_instruments(
                &InstrumentMenu::SarSimulation { ws: &data.weights },
                &data.x,
                &psi,
            )
            .unwrap();
            let bundle =
                DesignBundle::assemble(regs, blocks, k, BlockName::Varying).unwrap();
            let fit = tsls(&bundle.regressors, &bundle.instruments, &data.y).unwrap();
            let sel = vcwald::design::selector(&bundle, BlockName::Varying).unwrap();
            let reduced = fit.reduced_instruments(&bundle.instruments);
            let xi = shac_xi(
                &reduced,
                &fit.residuals,
                data.distances.as_ref().unwrap(),
                &KernelSpec::epanechnikov(),
            )
            .unwrap();
            // Oracle Xi on the same reduced instruments with the true Sigma.
            let xi_true = reduced.transpose() * &sigma * &reduced / n as f64;
            let d_shac = dmat_shac(&fit, &bundle.regressors, &reduced, &xi, &sel).unwrap();
            let d_plain = dmat_plain(&fit, &sel, VarianceMode::Unit).unwrap();
            let xi_oracle_est = vcwald::shac::ShacEstimate {
                xi_hat: xi_true.clone(),
                kernel: KernelSpec::epanechnikov(),
                effective_pairs: 0,
            };
            let d_oracle = dmat_shac(&fit, &bundle.regressors, &reduced, &xi_oracle_est, &sel)
                .unwrap();
            let alpha = sel.extract_vector(&fit.coefficients).unwrap();
            (alpha, d_shac, d_plain, d_oracle, xi.xi_hat, xi_true)
        })
        .collect();

    let d_alpha = results[0].0.len();
    let mut alpha_cov = DMatrix::<f64>::zeros(d_alpha, d_alpha);
    let mut mean_shac = DMatrix::<f64>::zeros(d_alpha, d_alpha);
    let mut mean_plain = DMatrix::<f64>::zeros(d_alpha, d_alpha);
    let mut mean_oracle = DMatrix::<f64>::zeros(d_alpha, d_alpha);
    let jj = results[0].4.nrows();
    let mut mean_xi = DMatrix::<f64>::zeros(jj, jj);
    let mut mean_xi_true = DMatrix::<f64>::zeros(jj, jj);
    let mut alpha_mean = DVector::<f64>::zeros(d_alpha);
    for (alpha, ..) in &results {
        alpha_mean += alpha;
    }
    alpha_mean /= reps as f64;
    for (alpha, d_shac, d_plain, d_oracle, xi, xi_true) in &results {
        let c = alpha - &alpha_mean;
        alpha_cov += &c * c.transpose() * n as f64;
        mean_shac += d_shac;
        mean_plain += d_plain;
        mean_oracle += d_oracle;
        mean_xi += xi;
        mean_xi_true += xi_true;
    }
    alpha_cov /= reps as f64;
    mean_shac /= reps as f64;
    mean_plain /= reps as f64;
    mean_oracle /= reps as f64;
    mean_xi /= reps as f64;
    mean_xi_true /= reps as f64;

    println!("empirical Var(sqrt(n) alpha): {:.4?}", alpha_cov.as_slice());
    let med = |sel: &dyn Fn(&(DVector<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)) -> f64| {
        let mut v: Vec<f64> = results.iter().map(sel).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v[v.len() / 2]
    };
    println!("median trace D_shac:   {:.4}", med(&|r| r.1.trace()));
    println!("median trace D_oracle: {:.4}", med(&|r| r.3.trace()));
    println!("median trace D_plain:  {:.4}", med(&|r| r.2.trace()));
    println!("empirical trace:       {:.4}", alpha_cov.trace());
    println!("median Xi00_hat/Xi00_true: {:.4}", med(&|r| r.4[(0,0)] / r.5[(0,0)]));
    println!("median Xi_last_diag ratio: {:.4}", med(&|r| {
        let j = r.4.nrows();
        r.4[(j-1, j-1)] / r.5[(j-1, j-1)]
    }));
    let mut quads: Vec<(f64, f64)> = results.iter().map(|r| {
        let qs = n as f64 * (r.0.transpose() * r.1.clone().try_inverse().unwrap() * &r.0)[(0,0)];
        let qo = n as f64 * (r.0.transpose() * r.3.clone().try_inverse().unwrap() * &r.0)[(0,0)];
        (qs, qo)
    }).collect();
    quads.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mean_qs = quads.iter().map(|q| q.0).sum::<f64>() / reps as f64;
    let mean_qo = quads.iter().map(|q| q.1).sum::<f64>() / reps as f64;
    println!("mean quad shac {:.3}  oracle {:.3}  (d_alpha = {})", mean_qs, mean_qo, d_alpha);
}
