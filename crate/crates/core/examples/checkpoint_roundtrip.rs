//! Saving and restoring encoder parameters and a prototype bank.

use gfscil::checkpoint::{load_bank, load_params, save_bank, save_params, Precision};
use gfscil::gat::{init_params, EncoderConfig};
use gfscil::proto::PrototypeBank;
use gfscil::rng;

fn main() -> gfscil::Result<()> {
    let enc = EncoderConfig::new(8);
    let params = init_params(&enc, &mut rng::stream(0, "init"))?;
    let mut bank = PrototypeBank::new(enc.output_dim());
    bank.insert(3, vec![0.25; enc.output_dim()], 0)?;
    bank.insert(17, vec![-1.5; enc.output_dim()], 1)?;

    let dir = std::env::temp_dir().join(format!("gfscil-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| gfscil::Error::io(&dir, e))?;
    for precision in [Precision::F64, Precision::F32] {
        let path = dir.join(format!("params-{precision:?}.ckpt"));
        save_params(&path, &params, precision)?;
        let back = load_params(&path)?;
        let worst = params
            .iter()
            .map(|(name, w)| {
                let b = back.get(name).unwrap();
                w.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        let size = std::fs::metadata(&path).map_err(|e| gfscil::Error::io(&path, e))?.len();
        println!("{precision:?}: {size} bytes, bit identical {}, max error {worst:.2e}", back.bit_identical(&params));
    }
    let path = dir.join("bank.ckpt");
    save_bank(&path, &bank)?;
    println!("bank restored equal: {}", load_bank(&path)? == bank);
    std::fs::remove_dir_all(&dir).map_err(|e| gfscil::Error::io(&dir, e))?;
    Ok(())
}
