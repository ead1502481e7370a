//! One incremental session: support-set fine-tuning with query-based
//! prototype calibration, parameter blending and old-prototype shifting.

use std::path::Path;

use gfscil::harness::config::desk_config;
use gfscil::harness::split_dataset;
use gfscil::incremental::{run_session, IncrementalConfig, SessionState};
use gfscil::proto::norm;
use gfscil::tmca::train_base;

fn main() -> gfscil::Result<()> {
    let mut cfg = desk_config(2);
    cfg.base.base_epochs = 60;
    let data = cfg.data.load(Path::new("."))?;
    let protocol = split_dataset(&data, &cfg, 2)?.materialize(&data)?;
    let enc = cfg.encoder.for_input(data.feature_dim());
    let base = train_base(&protocol.base, &enc, &cfg.base, 2)?;
    let start = SessionState::after_base(enc, base.params, base.bank);
    println!("after base: accuracy {:.3}", protocol.eval.evaluate(&start)?.acc_all);

    let session = &protocol.sessions[0];
    println!(
        "session 1: classes {:?}, {} support and {} query nodes",
        session.classes,
        session.support.len(),
        session.query.len()
    );
    let (next, log) = run_session(&start, session, &IncrementalConfig::default(), 2)?;
    println!("support loss per epoch: {:?}", log.losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>());
    let shift: f64 = start
        .bank
        .classes()
        .iter()
        .map(|&c| {
            let (a, b) = (start.bank.get(c).unwrap(), next.bank.get(c).unwrap());
            norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>())
        })
        .sum::<f64>()
        / start.bank.len() as f64;
    println!("mean old-prototype shift {shift:.4}; underflowed classes {:?}", log.pso_underflow);
    let r = protocol.eval.evaluate(&next)?;
    println!(
        "after session 1: all {:.3}, base {:.3}, novel {:.3}",
        r.acc_all,
        r.acc_base,
        r.acc_novel.unwrap()
    );
    Ok(())
}
