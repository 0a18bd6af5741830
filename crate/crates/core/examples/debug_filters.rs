use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use vcwald::basis::{build_psi, BasisFamily, BasisSpec};
use vcwald::design::{build_instruments, build_sar_design, BlockName, DesignBundle, InstrumentMenu};
use vcwald::dgp::{draw_errors, replication_rng, stream, DgpConfig, DgpScaffold, ErrorDist, V2Scale};
use vcwald::estimator::tsls;
use vcwald::shac::{shac_xi, KernelSpec};
use vcwald::wald::dmat_shac;

#[derive(Clone, Copy, Debug)]
enum Filter {
    Inverse,        // v = (I-A)^{-1} eps
    InverseScaled,  // same, rescaled to unit marginal variance
    MaMinus,        // v = (I-A) eps
    MaPlus,         // v = (I+A) eps
}

fn main() {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(900);
    let alternative = std::env::args().nth(2).map(|s| s == "alt").unwrap_or(false);
    let reps = 400usize;
    let config = DgpConfig {
        seed: 4,
        alternative,
        ..DgpConfig::mc_default(n, 2)
    };
    let scaffold = DgpScaffold::new(&config).unwrap();
    let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();
    let a = scaffold.weights()[0].to_dense() * 0.6 + scaffold.weights()[1].to_dense() * 0.3;
    let s_mat = DMatrix::<f64>::identity(n, n) - &a;
    let s_lu = s_mat.clone().lu();
    let b = s_mat.clone().try_inverse().unwrap();
    let scale = (&b * b.transpose()).diagonal().map(|v| v.sqrt());
    let i_plus_a = DMatrix::<f64>::identity(n, n) + &a;

    for filter in [Filter::Inverse, Filter::InverseScaled, Filter::MaMinus, Filter::MaPlus] {
        let quads: Vec<f64> = (0..reps)
            .into_par_iter()
            .map(|r| {
                let mut rng = replication_rng(config.seed, stream::REPLICATION, r as u64);
                // Same draw order as DgpScaffold::generate.
                let z = DVector::from_fn(n, |_, _| rand::Rng::random::<f64>(&mut rng));
                let p = DMatrix::from_fn(n, 1, |_, _| rand::Rng::random_range(&mut rng, -2.0..2.0));
                let x2 = rand_distr::Normal::new(1.0, 2.0f64.sqrt()).unwrap();
                let x = DMatrix::from_fn(n, 2, |_, c| {
                    if c == 0 { 1.0 } else { rand_distr::Distribution::sample(&x2, &mut rng) }
                });
                let eps = draw_errors(ErrorDist::V1, V2Scale::UnitVariance, n, &mut rng);
                let v = match filter {
                    Filter::Inverse => s_lu.solve(&eps).unwrap(),
                    Filter::InverseScaled => {
                        let raw = s_lu.solve(&eps).unwrap();
                        DVector::from_fn(n, |i, _| raw[i] / scale[i])
                    }
                    Filter::MaMinus => &s_mat * &eps,
                    Filter::MaPlus => &i_plus_a * &eps,
                };
                let beta = DVector::from_column_slice(&[-1.0, 1.0]);
                let delta = |zv: f64| if alternative { 1.0 - zv * zv } else { 0.0 };
                let mean = DVector::from_fn(n, |i, _| {
                    x.row(i).transpose().dot(&beta) + p[(i, 0)] * delta(z[i])
                });
                let y = s_lu.solve(&(mean + &v)).unwrap();
                let measures = vcwald::dgp::perturb_distances(
                    scaffold.base_distances(),
                    config.m_measures,
                    &mut rng,
                );
                let ell = vcwald::shac::ell_from_eta(n, config.eta).unwrap();
                let dist =
                    vcwald::shac::DistanceSet::from_neighbor_rule(measures, ell, config.eta)
                        .unwrap();
                let psi = build_psi(&p, &z, &[spec]).unwrap();
                let (regs, blocks) =
                    build_sar_design(&y, scaffold.weights(), &x, &psi).unwrap();
                let k = build_instruments(
                    &InstrumentMenu::SarSimulation { ws: scaffold.weights() },
                    &x,
                    &psi,
                )
                .unwrap();
                let bundle = DesignBundle::assemble(regs, blocks, k, BlockName::Varying).unwrap();
                let fit = tsls(&bundle.regressors, &bundle.instruments, &y).unwrap();
                let sel = vcwald::design::selector(&bundle, BlockName::Varying).unwrap();
                let reduced = fit.reduced_instruments(&bundle.instruments);
                let xi = shac_xi(&reduced, &fit.residuals, &dist, &KernelSpec::epanechnikov())
                    .unwrap();
                let d = dmat_shac(&fit, &bundle.regressors, &reduced, &xi, &sel).unwrap();
                let alpha = sel.extract_vector(&fit.coefficients).unwrap();
                n as f64 * (alpha.transpose() * d.try_inverse().unwrap() * &alpha)[(0, 0)]
            })
            .collect();
        let chi = ChiSquared::new(2.0).unwrap();
        let mut rates = [0.0f64; 3];
        for (li, &lev) in [0.01, 0.05, 0.10].iter().enumerate() {
            rates[li] = quads.iter().filter(|&&q| chi.sf(q.max(0.0)) < lev).count() as f64
                / reps as f64;
        }
        let mean_q = quads.iter().sum::<f64>() / reps as f64;
        println!(
            "{:?} n={n} alt={alternative}: chi-p {:.3} {:.3} {:.3}  mean quad {:.3}",
            filter, rates[0], rates[1], rates[2], mean_q
        );
    }
}
