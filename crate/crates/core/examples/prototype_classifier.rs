//! Class prototypes as mean embeddings, cosine-softmax probabilities and
//! the additive-margin loss.

use gfscil::autodiff::DenseMatrix;
use gfscil::proto::{classify, compute_prototypes, margin_loss_value, predict_proba, LossConfig, PrototypeBank};

fn main() -> gfscil::Result<()> {
    let emb = DenseMatrix::from_rows(&[[1.0, 0.1], [0.9, -0.1], [0.0, 1.0], [0.2, 0.8], [-1.0, 0.1]]);
    let rows = [0, 1, 2, 3];
    let labels = [4, 4, 9, 9];
    let mut bank = PrototypeBank::new(2);
    for (c, v) in compute_prototypes(&emb, &rows, &labels, &[4, 9])? {
        println!("class {c}: prototype {v:?}");
        bank.insert(c, v, 0)?;
    }

    let cfg = LossConfig::default();
    let query = emb.row(4);
    println!("query {query:?} -> probabilities {:?}", predict_proba(query, &bank, cfg.tau));
    println!("query classified as {}", classify(query, &bank));

    let targets = [0, 0, 1, 1];
    let m = bank.matrix();
    let plain = margin_loss_value(&emb, &rows, &targets, &m, LossConfig { kappa: 0.0, ..cfg });
    let with_margin = margin_loss_value(&emb, &rows, &targets, &m, cfg);
    println!("loss without margin {plain:.3e}, with margin {with_margin:.3e}");
    Ok(())
}
