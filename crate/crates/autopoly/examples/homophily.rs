//! Node homophily of synthetic graphs across the assortativity range.

use autopoly::data::{sbm_generate, SbmParams};
use autopoly::graph::node_homophily;

fn main() {
    println!("{:>8} {:>8} {:>12} {:>10}", "p_in", "p_out", "homophily", "excluded");
    for (p_in, p_out) in [(0.10, 0.00), (0.08, 0.02), (0.05, 0.05), (0.02, 0.08), (0.00, 0.10)] {
        let bundle = sbm_generate(&SbmParams {
            nodes: 1000,
            classes: 2,
            p_in,
            p_out,
            feature_dim: 4,
            feature_noise: 1.0,
            seed: 11,
        })
        .expect("SBM generation");
        let h = node_homophily(&bundle.graph, &bundle.labels).unwrap();
        println!("{:>8.2} {:>8.2} {:>12.4} {:>10}", p_in, p_out, h.ratio, h.excluded);
    }
}
