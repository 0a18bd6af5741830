use vcwald::basis::{BasisFamily, BasisSpec};
use vcwald::dgp::{replication_rng, stream, DgpConfig, DgpScaffold, ErrorStructure, LambdaMode};
use vcwald::wald::{run_test, TestId, TestSettings};

fn main() {
    let config = DgpConfig {
        seed: 20260808,
        lambda_mode: LambdaMode::Varying2,
        error_structure: ErrorStructure::SarDependent,
        ..DgpConfig::mc_default(200, 2)
    };
    let scaffold = DgpScaffold::new(&config).unwrap();
    let mut rng = replication_rng(config.seed, stream::REPLICATION, 0);
    let data = scaffold.generate(&mut rng).unwrap();
    let settings = TestSettings::new(
        TestId::W4Alpha,
        BasisSpec::new(BasisFamily::Polynomial, 8).unwrap(),
    );
    match run_test(&data, &settings) {
        Ok(report) => println!("ok: {}", report.to_json_line()),
        Err(e) => println!("error: {e}"),
    }
}
