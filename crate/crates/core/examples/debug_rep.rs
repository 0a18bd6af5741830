use nalgebra::DVector;
use vcwald::basis::{build_psi, BasisFamily, BasisSpec};
use vcwald::design::{build_instruments, build_sar_design, InstrumentMenu};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold};
use vcwald::estimator::tsls;

fn main() {
    let config = DgpConfig {
        seed: 20260808,
        ..DgpConfig::mc_default(900, 2)
    };
    let scaffold = DgpScaffold::new(&config).unwrap();
    let mut rng = replication_rng(config.seed, stream::REPLICATION, 1);
    let data = scaffold.generate(&mut rng).unwrap();
    println!("y: mean {:.4} sd {:.4}", data.y.mean(), data.y.variance().sqrt());

    let spec = BasisSpec::new(BasisFamily::Polynomial, 2).unwrap();
    let psi = build_psi(&data.p, &data.z, &[spec]).unwrap();
    let (regs, blocks) = build_sar_design(&data.y, &data.weights, &data.x, &psi).unwrap();
    println!("blocks: {:?}", blocks);
    let k = build_instruments(
        &InstrumentMenu::SarSimulation { ws: &data.weights },
        &data.x,
        &psi,
    )
    .unwrap();
    println!("K: {}x{}", k.nrows(), k.ncols());
    let fit = tsls(&regs, &k, &data.y).unwrap();
    println!("rank {}  dropped {}", fit.rank_diag, fit.dropped_instruments);
    println!("kept: {:?}", fit.kept_instruments);
    println!("xi_hat: {:?}", fit.coefficients.as_slice());
    println!("resid sd: {:.4}", fit.residuals.variance().sqrt());
    let eig = fit.t_matrix.clone().symmetric_eigen();
    let mut ev: Vec<f64> = eig.eigenvalues.iter().cloned().collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    println!("T eigenvalues: {:?}", ev);

    // Expected truth: lambda (0.6, 0.3), beta (-1, 1), alpha 0.
    let truth = DVector::from_column_slice(&[0.6, 0.3, -1.0, 1.0, 0.0, 0.0]);
    println!("xi_hat - truth: {:?}", (fit.coefficients - truth).as_slice());
}
