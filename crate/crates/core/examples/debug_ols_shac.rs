use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use vcwald::basis::{build_psi, BasisFamily, BasisSpec};
use vcwald::design::{build_sar_design, BlockName, DesignBundle};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure};
use vcwald::estimator::tsls;
use vcwald::shac::{shac_xi, KernelSpec};
use vcwald::wald::dmat_shac;

// No spatial lags in the design: y = Xβ + Ψ·0 + v with v = S⁻¹ε. 2SLS with
// K = M is OLS, so the theory is exact and quad should average d_alpha with
// the oracle Σ.
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
    let a = scaffold.weights()[0].to_dense() * 0.6 + scaffold.weights()[1].to_dense() * 0.3;
    let b = (DMatrix::<f64>::identity(n, n) - a).try_inverse().unwrap();
    let sigma = &b * b.transpose();

    let quads: Vec<(f64, f64)> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let mut rng = replication_rng(config.seed, stream::REPLICATION, r as u64);
            let data = scaffold.generate(&mut rng).unwrap();
            // Rebuild the outcome without the spatial lag part:
            // y0 = Xβ + v, recovered as y - sum_j lambda_j W_j y.
            let lam = [0.6, 0.3];
            let mut y0 = data.y.clone();
            for (j, w) in data.weights.iter().enumerate() {
                y0 -= w.matvec(&data.y).unwrap() * lam[j];
            }
            let psi = build_psi(&data.p, &data.z, &[spec]).unwrap();
            let (regs, blocks) = build_sar_design(&y0, &[], &data.x, &psi).unwrap();
            let k = regs.clone();
            let bundle = DesignBundle::assemble(regs, blocks, k, BlockName::Varying).unwrap();
            let fit = tsls(&bundle.regressors, &bundle.instruments, &y0).unwrap();
            let sel = vcwald::design::selector(&bundle, BlockName::Varying).unwrap();
            let reduced = fit.reduced_instruments(&bundle.instruments);
            let xi = shac_xi(
                &reduced,
                &fit.residuals,
                data.distances.as_ref().unwrap(),
                &KernelSpec::epanechnikov(),
            )
            .unwrap();
            let xi_true = vcwald::shac::ShacEstimate {
                xi_hat: reduced.transpose() * &sigma * &reduced / n as f64,
                kernel: KernelSpec::epanechnikov(),
                effective_pairs: 0,
            };
            let d_shac = dmat_shac(&fit, &bundle.regressors, &reduced, &xi, &sel).unwrap();
            let d_true = dmat_shac(&fit, &bundle.regressors, &reduced, &xi_true, &sel).unwrap();
            let alpha = sel.extract_vector(&fit.coefficients).unwrap();
            let qs = n as f64
                * (alpha.transpose() * d_shac.try_inverse().unwrap() * &alpha)[(0, 0)];
            let qt = n as f64
                * (alpha.transpose() * d_true.try_inverse().unwrap() * &alpha)[(0, 0)];
            (qs, qt)
        })
        .collect();
    let mean_qs = quads.iter().map(|q| q.0).sum::<f64>() / reps as f64;
    let mean_qt = quads.iter().map(|q| q.1).sum::<f64>() / reps as f64;
    let var_qs = quads.iter().map(|q| (q.0 - mean_qs).powi(2)).sum::<f64>() / reps as f64;
    println!("OLS control: mean quad shac {mean_qs:.3} (var {var_qs:.3}), oracle {mean_qt:.3}, d_alpha = 2");
}
