//! End-to-end runs of the method and its baselines over a protocol.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gat::EncoderConfig;
use crate::harness::config::ExperimentConfig;
use crate::harness::eval::SessionReport;
use crate::harness::report::Report;
use crate::harness::split::Protocol;
use crate::incremental::{run_session, IncrementalConfig, SessionLog, SessionState, Trainable};
use crate::rng::derive_seed;
use crate::tmca::{train_base, BaseOutcome, BaseTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Augmented base training, then calibrated, blended fine-tuning.
    Tap,
    /// Plain base training, then unconstrained fine-tuning.
    Finetune,
    /// Plain base training, no updates afterwards.
    Frozen,
    /// The full method with a frozen encoder and a trainable projection.
    FrozenProjection,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tap => "tap",
            Method::Finetune => "finetune",
            Method::Frozen => "frozen",
            Method::FrozenProjection => "frozen_projection",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Method::Tap, Method::Finetune, Method::Frozen, Method::FrozenProjection]
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Input(format!("unknown method {s}")))
    }
}

/// Components switched off for an ablation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub no_ipcn: bool,
    pub no_pso: bool,
    pub no_ema: bool,
    pub no_tfa: bool,
    pub no_tva: bool,
    pub freeze_backbone: bool,
}

impl Ablation {
    fn suffix(&self) -> String {
        let flags = [
            (self.no_ipcn, "-no-ipcn"),
            (self.no_pso, "-no-pso"),
            (self.no_ema, "-no-ema"),
            (self.no_tfa, "-no-tfa"),
            (self.no_tva, "-no-tva"),
            (self.freeze_backbone, "-freeze-backbone"),
        ];
        flags.iter().filter(|(on, _)| *on).map(|(_, s)| *s).collect()
    }
}

/// Fully resolved settings of one method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSpec {
    pub name: String,
    pub base: BaseTrainConfig,
    pub incremental: IncrementalConfig,
    /// Append a trainable projection after base training.
    pub projection: bool,
}

impl MethodSpec {
    pub fn new(method: Method, ablation: Ablation, cfg: &ExperimentConfig) -> Self {
        let mut base = cfg.base.clone();
        let mut inc = cfg.incremental.clone();
        let mut projection = false;
        match method {
            Method::Tap | Method::FrozenProjection => {
                base.use_tfa &= !ablation.no_tfa;
                base.use_tva &= !ablation.no_tva;
                inc.use_ipcn &= !ablation.no_ipcn;
                inc.use_pso &= !ablation.no_pso;
                inc.use_ema &= !ablation.no_ema;
                if method == Method::FrozenProjection || ablation.freeze_backbone {
                    inc.trainable = Trainable::ProjectionOnly;
                    projection = true;
                }
            }
            Method::Finetune | Method::Frozen => {
                base.use_tfa = false;
                base.use_tva = false;
                inc.use_ipcn = false;
                inc.use_pso = false;
                inc.use_ema = false;
                inc.trainable = if method == Method::Frozen {
                    Trainable::Nothing
                } else {
                    Trainable::All
                };
            }
        }
        let name = match method {
            Method::Tap | Method::FrozenProjection => format!("{method}{}", ablation.suffix()),
            _ => method.to_string(),
        };
        MethodSpec {
            name,
            base,
            incremental: inc,
            projection,
        }
    }
}

/// Seed of the base-training streams for a run seed.
pub fn base_seed(seed: u64) -> u64 {
    derive_seed(seed, "base")
}

/// Seed of the incremental-session streams for a run seed.
pub fn session_seed(seed: u64) -> u64 {
    derive_seed(seed, "incremental")
}

/// Evaluates the base state, then runs and evaluates every incremental
/// session in order.
pub fn run_incremental(
    protocol: &Protocol,
    start: SessionState,
    cfg: &IncrementalConfig,
    seed: u64,
) -> Result<(Vec<SessionReport>, SessionState, Vec<SessionLog>)> {
    let mut reports = vec![protocol.eval.evaluate(&start)?];
    let mut logs = Vec::with_capacity(protocol.sessions.len());
    let mut state = start;
    for session in &protocol.sessions {
        let (next, log) = run_session(&state, session, cfg, session_seed(seed))?;
        state = next;
        reports.push(protocol.eval.evaluate(&state)?);
        logs.push(log);
    }
    Ok((reports, state, logs))
}

/// Base training keyed by its config, so methods sharing a base recipe
/// share one training run.
#[derive(Default)]
pub struct BaseCache {
    entries: Vec<(BaseTrainConfig, BaseOutcome)>,
}

impl BaseCache {
    pub fn get_or_train(
        &mut self,
        protocol: &Protocol,
        enc: &EncoderConfig,
        cfg: &BaseTrainConfig,
        seed: u64,
    ) -> Result<&BaseOutcome> {
        let pos = match self.entries.iter().position(|(c, _)| c == cfg) {
            Some(p) => p,
            None => {
                let out = train_base(&protocol.base, enc, cfg, base_seed(seed))?;
                self.entries.push((cfg.clone(), out));
                self.entries.len() - 1
            }
        };
        Ok(&self.entries[pos].1)
    }
}

/// Runs one method end to end and returns its report.
pub fn run_method(
    protocol: &Protocol,
    spec: &MethodSpec,
    cfg: &ExperimentConfig,
    cache: &mut BaseCache,
    seed: u64,
) -> Result<Report> {
    let enc = cfg.encoder.for_input(protocol.base.features.cols());
    let base = cache.get_or_train(protocol, &enc, &spec.base, seed)?;
    let mut state = SessionState::after_base(enc, base.params.clone(), base.bank.clone());
    if spec.projection {
        state = state.with_projection()?;
    }
    let (reports, _, _) = run_incremental(protocol, state, &spec.incremental, seed)?;
    Report::new(&spec.name, seed, &cfg.hash(), reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::eval::Access;
    use crate::harness::split::split_dataset;
    use crate::harness::synth::SbmSpec;
    use std::path::Path;

    fn tiny_config() -> ExperimentConfig {
        let spec = SbmSpec {
            classes: 7,
            nodes_per_class: 14,
            p_in: 0.0,
            p_out: 0.0,
            feature_dim: 8,
            feature_noise: 0.4,
            seed: 1,
        }
        .with_homophily(0.7, 5.0);
        let mut cfg = ExperimentConfig {
            data: crate::harness::config::DataSource::Sbm(spec),
            seed: 0,
            base_classes: 3,
            n_way: 2,
            k_shot: 2,
            sessions: 3,
            query_val_fraction: 0.3,
            base_train_fraction: 0.8,
            encoder: Default::default(),
            base: Default::default(),
            incremental: Default::default(),
        };
        cfg.encoder.heads = 2;
        cfg.encoder.hidden_dim = 4;
        cfg.base.base_epochs = 5;
        cfg.base.tva_way = 2;
        cfg
    }

    #[test]
    fn method_specs() {
        let cfg = tiny_config();
        let tap = MethodSpec::new(Method::Tap, Ablation::default(), &cfg);
        assert_eq!(tap.name, "tap");
        assert!(tap.base.use_tva && tap.incremental.use_ema);
        let no_ema = MethodSpec::new(Method::Tap, Ablation { no_ema: true, ..Default::default() }, &cfg);
        assert_eq!(no_ema.name, "tap-no-ema");
        assert!(!no_ema.incremental.use_ema && no_ema.incremental.use_pso);
        let ft = MethodSpec::new(Method::Finetune, Ablation::default(), &cfg);
        assert!(!ft.base.use_tfa && !ft.incremental.use_ipcn);
        assert_eq!(MethodSpec::new(Method::Frozen, Ablation::default(), &cfg).base, ft.base);
        let fp = MethodSpec::new(Method::FrozenProjection, Ablation::default(), &cfg);
        assert!(fp.projection && fp.incremental.trainable == Trainable::ProjectionOnly);
        assert_eq!("frozen_projection".parse::<Method>().unwrap(), Method::FrozenProjection);
    }

    #[test]
    fn past_query_sets_are_only_read_for_evaluation_in_order() {
        let cfg = tiny_config();
        let data = cfg.data.load(Path::new(".")).unwrap();
        let protocol = split_dataset(&data, &cfg, 0).unwrap().materialize(&data).unwrap();
        let spec = MethodSpec::new(Method::Tap, Ablation::default(), &cfg);
        let report = run_method(&protocol, &spec, &cfg, &mut BaseCache::default(), 0).unwrap();
        assert_eq!(report.sessions.len(), 3);
        let log = protocol.eval.access_log();
        let mut expected = Vec::new();
        for t in 0..3 {
            for s in 0..=t {
                expected.push(Access { trained_through: t, target: s });
            }
        }
        assert_eq!(log, expected);
    }

    #[test]
    fn frozen_baseline_keeps_the_base_encoder() {
        let cfg = tiny_config();
        let data = cfg.data.load(Path::new(".")).unwrap();
        let protocol = split_dataset(&data, &cfg, 0).unwrap().materialize(&data).unwrap();
        let spec = MethodSpec::new(Method::Frozen, Ablation::default(), &cfg);
        let enc = cfg.encoder.for_input(8);
        let base = train_base(&protocol.base, &enc, &spec.base, base_seed(0)).unwrap();
        let start = SessionState::after_base(enc, base.params.clone(), base.bank.clone());
        let (_, end, _) = run_incremental(&protocol, start, &spec.incremental, 0).unwrap();
        assert!(end.params.bit_identical(&base.params));
        assert_eq!(end.bank.len(), 3 + 2 * 2);
    }
}
