//! Backpropagation through the attention encoder and the margin loss,
//! compared against central finite differences.

use gfscil::autodiff::{finite_difference_check, DenseMatrix, ParamStore, Tape};
use gfscil::gat::{encode_train, init_params, EncoderConfig};
use gfscil::graph::SparseGraph;
use gfscil::proto::{margin_loss, LossConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> gfscil::Result<()> {
    let g = SparseGraph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (5, 0), (1, 4)], 6)?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = DenseMatrix::from_vec(6, 4, (0..24).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let enc = EncoderConfig {
        hidden_dim: 3,
        heads: 2,
        ..EncoderConfig::new(4)
    };
    let params = init_params(&enc, &mut rng)?;
    let prototypes = DenseMatrix::from_vec(2, 3, (0..6).map(|_| rng.random_range(-1.0..1.0)).collect())?;
    let rows = [0, 1, 2, 3];
    let targets = [0, 1, 0, 1];

    let loss_and_grad = |p: &ParamStore| -> gfscil::Result<(f64, ParamStore)> {
        let mut tape = Tape::with_graph(&g);
        // The same mask on every call keeps the objective deterministic.
        let mut dropout = ChaCha8Rng::seed_from_u64(11);
        let (emb, _) = encode_train(&mut tape, &g, &x, p, &enc, &mut dropout)?;
        let l = margin_loss(&mut tape, emb, &rows, &targets, &prototypes, LossConfig::default());
        Ok((tape.value(l).item(), tape.backward(l)?.into_params()))
    };
    let (loss, grads) = loss_and_grad(&params)?;
    let report = finite_difference_check(|p| loss_and_grad(p).unwrap().0, &params, &grads, 1e-6)?;
    println!("loss {loss:.6}");
    println!(
        "{} coordinates, max relative error {:.2e} at {}[{}]",
        report.coordinates, report.max_rel_error, report.worst_param, report.worst_index
    );
    Ok(())
}
