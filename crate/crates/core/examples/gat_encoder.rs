//! The two-layer multi-head attention encoder: initialization, evaluation
//! embeddings and parameter blending.

use gfscil::gat::{ema_update, encode, init_params, EncoderConfig};
use gfscil::harness::{homophily, synth_sbm, SbmSpec};
use gfscil::rng;

fn main() -> gfscil::Result<()> {
    let spec = SbmSpec {
        classes: 4,
        nodes_per_class: 25,
        p_in: 0.0,
        p_out: 0.0,
        feature_dim: 16,
        feature_noise: 0.5,
        seed: 1,
    }
    .with_homophily(0.8, 6.0);
    let data = synth_sbm(&spec)?;
    println!(
        "{} nodes, {} edges, homophily {:.3}",
        data.node_count(),
        data.graph.undirected_edge_count(),
        homophily(&data.graph, &data.labels)
    );

    let enc = EncoderConfig::new(data.feature_dim());
    let a = init_params(&enc, &mut rng::stream(0, "init"))?;
    let b = init_params(&enc, &mut rng::stream(1, "init"))?;
    println!("{} parameter tensors, {} scalars", a.len(), a.numel());

    let emb = encode(&data.graph, &data.features, &a, &enc)?;
    println!("embeddings: {} x {}", emb.rows(), emb.cols());

    let blended = ema_update(&a, &b, 0.95)?;
    let moved = encode(&data.graph, &data.features, &blended, &enc)?;
    let drift: f64 = emb
        .as_slice()
        .iter()
        .zip(moved.as_slice())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    println!("embedding change after a 0.95 blend towards other weights: {drift:.4}");
    Ok(())
}
