use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcwald::basis::{build_psi, BasisFamily, BasisSpec};
use vcwald::design::{build_instruments, build_sar_design, BlockName, DesignBundle, InstrumentMenu};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure};
use vcwald::estimator::tsls;

// If alpha-hat were approximately Gaussian around 0, the infeasible test
// against its own empirical covariance would have nominal chi-square size.
fn main() {
    let n = 900usize;
    let reps = 2000usize;
    for dep in [false, true] {
        let config = DgpConfig {
            seed: 4,
            error_structure: if dep {
                ErrorStructure::SarDependent
            } else {
                ErrorStructure::Iid
            },
            ..DgpConfig::mc_default(n, 2)
        };
        let scaffold = DgpScaffold::new(&config).unwrap();
        let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();
        let alphas: Vec<DVector<f64>> = (0..reps)
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
                sel.extract_vector(&fit.coefficients).unwrap()
            })
            .collect();
        // Trim the top 2% by norm, then empirical covariance.
        let mut norms: Vec<f64> = alphas.iter().map(|a| a.norm()).collect();
        norms.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let cut = norms[(reps as f64 * 0.98) as usize];
        let kept: Vec<&DVector<f64>> = alphas.iter().filter(|a| a.norm() <= cut).collect();
        let m = kept.len() as f64;
        let mean = kept.iter().fold(DVector::zeros(2), |acc, a| acc + *a) / m;
        let mut cov = DMatrix::<f64>::zeros(2, 2);
        for a in &kept {
            let c = *a - &mean;
            cov += &c * c.transpose();
        }
        cov /= m;
        let cov_inv = cov.clone().try_inverse().unwrap();
        let chi = ChiSquared::new(2.0).unwrap();
        let mut rates = [0.0f64; 3];
        let quads: Vec<f64> = alphas
            .iter()
            .map(|a| (a.transpose() * &cov_inv * a)[(0, 0)])
            .collect();
        for (li, &lev) in [0.01, 0.05, 0.10].iter().enumerate() {
            rates[li] =
                quads.iter().filter(|&&q| chi.sf(q.max(0.0)) < lev).count() as f64 / reps as f64;
        }
        let mean_q = quads.iter().sum::<f64>() / reps as f64;
        println!(
            "dep={dep}: infeasible chi rejections {:.3} {:.3} {:.3}  mean quad {:.3}  alpha sd ({:.4}, {:.4}) mean ({:.4}, {:.4})",
            rates[0], rates[1], rates[2], mean_q,
            cov[(0, 0)].sqrt(), cov[(1, 1)].sqrt(), mean[0], mean[1]
        );
    }
}
