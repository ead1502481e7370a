//! Base-session training with the topology-free and topology-varying
//! augmentation branches, compared with plain training.

use std::path::Path;

use gfscil::harness::config::desk_config;
use gfscil::harness::split_dataset;
use gfscil::rng;
use gfscil::tmca::{count_arrangements, make_tfa, make_tva, train_base, BaseTrainConfig};

fn main() -> gfscil::Result<()> {
    let mut cfg = desk_config(0);
    cfg.base.base_epochs = 60;
    let data = cfg.data.load(Path::new("."))?;
    let protocol = split_dataset(&data, &cfg, 0)?.materialize(&data)?;
    let base = &protocol.base;
    let c = base.classes.len();
    println!(
        "base view: {} nodes, {c} classes; {} possible {}-class groups",
        base.graph.node_count(),
        count_arrangements(c as u64, cfg.base.tva_way as u64)?,
        cfg.base.tva_way
    );

    let tfa = make_tfa(base);
    let (partition, tva) = make_tva(base, cfg.base.tva_way, cfg.base.tva_noise_rate, &mut rng::stream(0, "demo"))?;
    println!("TFA labels {:?}..", tfa.classes.first());
    println!(
        "TVA: {} groups, {} edges (original {}), labels from {:?}",
        partition.group_count(),
        tva.graph.undirected_edge_count(),
        base.graph.undirected_edge_count(),
        tva.classes.first()
    );

    let enc = cfg.encoder.for_input(base.features.cols());
    for (name, bc) in [
        ("augmented", cfg.base.clone()),
        (
            "plain",
            BaseTrainConfig {
                base_epochs: cfg.base.base_epochs,
                ..BaseTrainConfig::plain()
            },
        ),
    ] {
        let out = train_base(base, &enc, &bc, 0)?;
        println!(
            "{name:>9}: loss {:.4} -> {:.4}, {} prototypes",
            out.losses[0],
            out.losses.last().unwrap(),
            out.bank.len()
        );
    }
    Ok(())
}
