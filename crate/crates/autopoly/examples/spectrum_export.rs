//! Checkpoint a model and export its filter's spectral response as CSV —
//! the same path the `autopoly spectrum` subcommand drives.

use autopoly::filter::{ppr_coefficients, spectral_response, Basis, FilterSpec, SpectralResponse};
use autopoly::model::ModelState;

fn main() {
    // a personalized-PageRank profile is a classic low-pass filter
    let theta = ppr_coefficients(0.5, 10).expect("valid teleport");
    let filter = FilterSpec::new(Basis::Monomial, theta).unwrap();
    let state = ModelState::init(16, 64, 3, 0.5, filter, 0).unwrap();

    let dir = std::env::temp_dir().join("autopoly-spectrum-demo");
    std::fs::create_dir_all(&dir).unwrap();
    let ckpt = dir.join("checkpoint.json");
    state.save_checkpoint(&ckpt).expect("checkpoint saved");
    println!("checkpoint: {}", ckpt.display());

    let restored = ModelState::load_checkpoint(&ckpt).expect("checkpoint loads");
    let grid = SpectralResponse::uniform_grid(201);
    let response = spectral_response(restored.filter(), &grid).unwrap();

    let csv_path = dir.join("spectrum.csv");
    std::fs::write(&csv_path, autopoly::cli::spectrum_csv(&response)).unwrap();
    println!("spectrum:   {} (201 rows)", csv_path.display());

    println!();
    println!("response profile (low-pass: large at lambda=0, small at lambda=2):");
    for &lambda in &[0.0, 0.5, 1.0, 1.5, 2.0] {
        let i = response
            .lambdas
            .iter()
            .position(|&l| (l - lambda).abs() < 1e-9)
            .expect("grid point");
        println!("  h({lambda:.1}) = {:.4}", response.values[i]);
    }
}
