//! Runs the full method, its no-EMA ablation and the two baselines on the
//! desk-scale benchmark and prints median accuracies over seeds.
//!
//! Usage: `forgetting_benchmark [seeds] [base_epochs] [feature_noise]`

use std::path::Path;
use std::time::Instant;

use gfscil::harness::config::{desk_config, DataSource};
use gfscil::harness::{run_method, split_dataset, Ablation, BaseCache, Method, MethodSpec, Report};

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

fn main() -> gfscil::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let seeds: u64 = args.first().map_or(5, |s| s.parse().expect("seed count"));
    let methods = [
        ("tap", Method::Tap, Ablation::default()),
        ("tap-no-ema", Method::Tap, Ablation { no_ema: true, ..Default::default() }),
        ("finetune", Method::Finetune, Ablation::default()),
        ("frozen", Method::Frozen, Ablation::default()),
    ];
    let mut results: Vec<Vec<Report>> = vec![Vec::new(); methods.len()];
    let start = Instant::now();
    for seed in 0..seeds {
        let mut cfg = desk_config(seed);
        if let Some(e) = args.get(1) {
            cfg.base.base_epochs = e.parse().expect("epochs");
        }
        if let (Some(n), DataSource::Sbm(spec)) = (args.get(2), &mut cfg.data) {
            spec.feature_noise = n.parse().expect("noise");
        }
        let data = cfg.data.load(Path::new("."))?;
        let protocol = split_dataset(&data, &cfg, seed)?.materialize(&data)?;
        let mut cache = BaseCache::default();
        for (k, (_, method, ablation)) in methods.iter().enumerate() {
            let spec = MethodSpec::new(*method, *ablation, &cfg);
            let report = run_method(&protocol, &spec, &cfg, &mut cache, seed)?;
            let accs: Vec<String> = report.sessions.iter().map(|s| format!("{:.3}", s.acc_all)).collect();
            println!("seed {seed} {:<12} [{}] pd {:.3}", spec.name, accs.join(" "), report.pd);
            results[k].push(report);
        }
        println!("  elapsed {:.1}s", start.elapsed().as_secs_f64());
    }
    println!("\nmedians over {seeds} seeds");
    println!("{:<12} {:>8} {:>8} {:>8} {:>8}", "method", "first", "last", "avg", "pd");
    for ((name, _, _), reports) in methods.iter().zip(&results) {
        let first = median(reports.iter().map(|r| r.sessions[0].acc_all).collect());
        let last = median(reports.iter().map(Report::last_accuracy).collect());
        let avg = median(reports.iter().map(|r| r.avg_acc).collect());
        let pd = median(reports.iter().map(|r| r.pd).collect());
        println!("{name:<12} {first:>8.3} {last:>8.3} {avg:>8.3} {pd:>8.3}");
    }
    println!("total {:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
