//! Command-line front end: split preparation, base training, incremental
//! runs, baselines and report aggregation.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gfscil::checkpoint::{load_bank, load_params, save_bank, save_params, Precision};
use gfscil::harness::run::base_seed;
use gfscil::harness::{
    emit_plot_data, emit_report, run_incremental, split_dataset, Ablation, ExperimentConfig, Method, MethodSpec,
    Protocol, Report, SplitPlan,
};
use gfscil::incremental::SessionState;
use gfscil::tmca::train_base;

#[derive(Parser)]
#[command(name = "gfscil", version, about = "Graph few-shot class-incremental node classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw the class and node split of a config and write it as JSON.
    PrepareSplits {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "splits.json")]
        out: PathBuf,
    },
    /// Train the base session and save parameter and prototype checkpoints.
    TrainBase {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        ablation: AblationFlags,
        /// Train without augmentation branches, as the baselines do.
        #[arg(long)]
        plain: bool,
        #[arg(long, default_value = "checkpoints")]
        out_dir: PathBuf,
        /// Store parameters as 32-bit floats.
        #[arg(long)]
        f32: bool,
    },
    /// Run every incremental session of the full method and write a report.
    RunIncremental {
        #[command(flatten)]
        input: Input,
        #[command(flatten)]
        ablation: AblationFlags,
        /// Start from checkpoints written by `train-base` instead of training.
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Run a baseline and write its report.
    Baseline {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        kind: BaselineKind,
        #[arg(long)]
        checkpoint_dir: Option<PathBuf>,
        #[arg(long, default_value = "report.json")]
        out: PathBuf,
    },
    /// Validate reports, print a summary table and write plot data.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[arg(long, default_value = "accuracy.csv")]
        csv: PathBuf,
    },
}

#[derive(Args)]
struct Input {
    #[arg(long)]
    config: PathBuf,
    /// Split written by `prepare-splits`; drawn from the config when absent.
    #[arg(long)]
    splits: Option<PathBuf>,
    /// Overrides the seed of the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Clone, Copy)]
struct AblationFlags {
    #[arg(long)]
    no_ipcn: bool,
    #[arg(long)]
    no_pso: bool,
    #[arg(long)]
    no_ema: bool,
    #[arg(long)]
    no_tfa: bool,
    #[arg(long)]
    no_tva: bool,
    /// Train only an appended projection during incremental sessions.
    #[arg(long)]
    freeze_backbone: bool,
}

impl From<AblationFlags> for Ablation {
    fn from(f: AblationFlags) -> Self {
        Ablation {
            no_ipcn: f.no_ipcn,
            no_pso: f.no_pso,
            no_ema: f.no_ema,
            no_tfa: f.no_tfa,
            no_tva: f.no_tva,
            freeze_backbone: f.freeze_backbone,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum BaselineKind {
    Finetune,
    Frozen,
    FrozenProjection,
}

impl From<BaselineKind> for Method {
    fn from(k: BaselineKind) -> Self {
        match k {
            BaselineKind::Finetune => Method::Finetune,
            BaselineKind::Frozen => Method::Frozen,
            BaselineKind::FrozenProjection => Method::FrozenProjection,
        }
    }
}

struct Loaded {
    cfg: ExperimentConfig,
    plan: SplitPlan,
    protocol: Protocol,
}

fn load(input: &Input) -> gfscil::Result<Loaded> {
    let mut cfg = ExperimentConfig::load(&input.config)?;
    if let Some(seed) = input.seed {
        cfg.seed = seed;
    }
    let root = input.config.parent().unwrap_or(Path::new("."));
    let data = cfg.data.load(root)?;
    let plan = match &input.splits {
        Some(p) => SplitPlan::load(p)?,
        None => split_dataset(&data, &cfg, cfg.seed)?,
    };
    let protocol = plan.materialize(&data)?;
    Ok(Loaded { cfg, plan, protocol })
}

const PARAMS_FILE: &str = "params.ckpt";
const BANK_FILE: &str = "bank.ckpt";

fn start_state(l: &Loaded, spec: &MethodSpec, checkpoint_dir: Option<&Path>) -> gfscil::Result<SessionState> {
    let enc = l.cfg.encoder.for_input(l.protocol.base.features.cols());
    let (params, bank) = match checkpoint_dir {
        Some(dir) => (load_params(&dir.join(PARAMS_FILE))?, load_bank(&dir.join(BANK_FILE))?),
        None => {
            let out = train_base(&l.protocol.base, &enc, &spec.base, base_seed(l.cfg.seed))?;
            (out.params, out.bank)
        }
    };
    let state = SessionState::after_base(enc, params, bank);
    if spec.projection {
        state.with_projection()
    } else {
        Ok(state)
    }
}

fn run_and_report(l: &Loaded, spec: &MethodSpec, checkpoint_dir: Option<&Path>, out: &Path) -> gfscil::Result<()> {
    let state = start_state(l, spec, checkpoint_dir)?;
    let (reports, _, logs) = run_incremental(&l.protocol, state, &spec.incremental, l.cfg.seed)?;
    for line in logs.iter().flat_map(|g| &g.diagnostics) {
        eprintln!("warning: {line}");
    }
    let report = Report::new(&spec.name, l.cfg.seed, &l.cfg.hash(), reports)?;
    emit_report(&report, out)?;
    println!(
        "{}: last {:.4}, avg {:.4}, pd {:.4} -> {}",
        report.method,
        report.last_accuracy(),
        report.avg_acc,
        report.pd,
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> gfscil::Result<()> {
    match cli.command {
        Command::PrepareSplits { input, out } => {
            let l = load(&input)?;
            l.plan.save(&out)?;
            println!(
                "{} base classes ({} train / {} test nodes), {} incremental sessions -> {}",
                l.plan.base_classes.len(),
                l.plan.base_train.len(),
                l.plan.base_test.len(),
                l.plan.sessions.len(),
                out.display()
            );
        }
        Command::TrainBase {
            input,
            ablation,
            plain,
            out_dir,
            f32,
        } => {
            let l = load(&input)?;
            let method = if plain { Method::Frozen } else { Method::Tap };
            let spec = MethodSpec::new(method, ablation.into(), &l.cfg);
            let enc = l.cfg.encoder.for_input(l.protocol.base.features.cols());
            let out = train_base(&l.protocol.base, &enc, &spec.base, base_seed(l.cfg.seed))?;
            std::fs::create_dir_all(&out_dir).map_err(|e| gfscil::Error::io(&out_dir, e))?;
            let precision = if f32 { Precision::F32 } else { Precision::F64 };
            save_params(&out_dir.join(PARAMS_FILE), &out.params, precision)?;
            save_bank(&out_dir.join(BANK_FILE), &out.bank)?;
            println!(
                "trained {} epochs, final loss {:.4}, {} prototypes -> {}",
                out.losses.len(),
                out.losses.last().copied().unwrap_or(f64::NAN),
                out.bank.len(),
                out_dir.display()
            );
        }
        Command::RunIncremental {
            input,
            ablation,
            checkpoint_dir,
            out,
        } => {
            let l = load(&input)?;
            let spec = MethodSpec::new(Method::Tap, ablation.into(), &l.cfg);
            run_and_report(&l, &spec, checkpoint_dir.as_deref(), &out)?;
        }
        Command::Baseline {
            input,
            kind,
            checkpoint_dir,
            out,
        } => {
            let l = load(&input)?;
            let spec = MethodSpec::new(kind.into(), Ablation::default(), &l.cfg);
            run_and_report(&l, &spec, checkpoint_dir.as_deref(), &out)?;
        }
        Command::Report { reports, csv } => {
            let loaded = reports.iter().map(|p| Report::load(p)).collect::<gfscil::Result<Vec<_>>>()?;
            println!("{:<24} {:>6} {:>8} {:>8} {:>8}", "method", "seed", "last", "avg", "pd");
            for r in &loaded {
                println!(
                    "{:<24} {:>6} {:>8.4} {:>8.4} {:>8.4}",
                    r.method,
                    r.seed,
                    r.last_accuracy(),
                    r.avg_acc,
                    r.pd
                );
            }
            emit_plot_data(&loaded, &csv)?;
            println!("plot data -> {}", csv.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
