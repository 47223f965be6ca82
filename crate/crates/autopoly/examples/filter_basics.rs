//! The three polynomial bases on a small random graph: sparse recurrence vs
//! dense eigendecomposition, and the scalar spectral response.

use autopoly::filter::{apply_filter, dense_spectral_filter, spectral_response, Basis, FilterSpec};
use autopoly::graph::Graph;
use autopoly::linalg::DenseMatrix;
use autopoly::rng::Rng;

fn main() {
    let mut rng = Rng::seed_from_u64(7);
    let n = 30;
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.next_f64() < 0.2 {
                edges.push((u, v));
            }
        }
    }
    let graph = Graph::from_edge_list(n, &edges).expect("valid edges");
    let x = DenseMatrix::from_fn(n, 4, |_, _| rng.uniform(-1.0, 1.0));

    println!("graph: {} nodes, {} edges", graph.n(), graph.edges().len());
    println!();

    for basis in [Basis::Monomial, Basis::Chebyshev, Basis::Bernstein] {
        let theta: Vec<f64> = (0..=5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let spec = FilterSpec::new(basis, theta).unwrap();

        let sparse = apply_filter(&spec, &graph, &x).unwrap();
        let dense = dense_spectral_filter(&spec, &graph, &x).unwrap();
        let rel = sparse.sub(&dense).frobenius_norm() / dense.frobenius_norm();
        println!("{basis:>9}: sparse vs dense relative error {rel:.2e}");

        let grid = [0.0, 0.5, 1.0, 1.5, 2.0];
        let response = spectral_response(&spec, &grid).unwrap();
        let rendered: Vec<String> = grid
            .iter()
            .zip(&response.values)
            .map(|(l, v)| format!("h({l:.1}) = {v:+.3}"))
            .collect();
        println!("{:>9}  {}", "", rendered.join("  "));
    }

    println!();
    println!("partition of unity: Bernstein with all-ones coefficients is the identity");
    let ones = FilterSpec::new(Basis::Bernstein, vec![1.0; 11]).unwrap();
    let filtered = apply_filter(&ones, &graph, &x).unwrap();
    println!("max |filtered - x| = {:.2e}", filtered.max_abs_diff(&x));
}
