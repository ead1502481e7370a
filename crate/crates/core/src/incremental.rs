//! Few-shot incremental sessions.
//!
//! A session sees only its own subgraph: a handful of labeled support nodes
//! per novel class plus unlabeled query nodes. Each fine-tuning epoch
//! re-derives the novel prototypes from the support set, refines them with
//! soft pseudo-labels of the query nodes, and takes one gradient step on
//! the support loss over every class seen so far. The fine-tuned weights
//! are then blended with the previous ones, and old-class prototypes are
//! moved along the feature drift observed on the support nodes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, ParamStore, Tape, Var};
use crate::dataset::SessionDataset;
use crate::error::{Error, Result};
use crate::gat::{self, Adam, EncoderConfig, OptimizerConfig};
use crate::proto::{compute_prototypes, margin_loss, predict_proba, LossConfig, PrototypeBank};
use crate::rng;

/// Which parameters fine-tuning may change.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    All,
    /// Only the linear projection on top of a frozen encoder.
    ProjectionOnly,
    /// No gradient steps at all.
    Nothing,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncrementalConfig {
    pub inc_epochs: usize,
    pub ipcn_iters: usize,
    /// Weight of the previous parameters in the moving average.
    pub beta: f64,
    /// Bandwidth of the drift-weighting kernel.
    pub sigma: f64,
    pub use_ipcn: bool,
    pub use_pso: bool,
    pub use_ema: bool,
    pub trainable: Trainable,
    /// Re-derive novel prototypes from the support set every epoch instead
    /// of only before the first one.
    pub refresh_each_epoch: bool,
    /// After blending, rebuild novel prototypes (support means, then
    /// calibration) under the parameters that will be evaluated.
    pub final_refresh: bool,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for IncrementalConfig {
    fn default() -> Self {
        IncrementalConfig {
            inc_epochs: 5,
            ipcn_iters: 2,
            beta: 0.95,
            sigma: 1.0,
            use_ipcn: true,
            use_pso: true,
            use_ema: true,
            trainable: Trainable::All,
            refresh_each_epoch: true,
            final_refresh: true,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl IncrementalConfig {
    /// Plain fine-tuning of the whole encoder.
    pub fn finetune() -> Self {
        IncrementalConfig {
            use_ipcn: false,
            use_pso: false,
            use_ema: false,
            ..Default::default()
        }
    }

    /// No updates: novel prototypes are support means under the base encoder.
    pub fn frozen() -> Self {
        IncrementalConfig {
            trainable: Trainable::Nothing,
            ..Self::finetune()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.inc_epochs == 0 {
            return Err(Error::Config("inc_epochs must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta {} outside [0,1]", self.beta)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config(format!("sigma must be positive, got {}", self.sigma)));
        }
        self.loss.validate()
    }
}

/// Everything carried from one session to the next.
#[derive(Debug, Clone)]
pub struct SessionState {
    /// Index of the last completed session.
    pub session: usize,
    pub encoder: EncoderConfig,
    pub params: ParamStore,
    /// Prototypes of every class seen so far.
    pub bank: PrototypeBank,
}

impl SessionState {
    pub fn after_base(encoder: EncoderConfig, params: ParamStore, bank: PrototypeBank) -> Self {
        SessionState {
            session: 0,
            encoder,
            params,
            bank,
        }
    }

    /// Appends an identity-initialized projection after the encoder.
    pub fn with_projection(mut self) -> Result<Self> {
        if !self.encoder.projection_head {
            self.encoder.projection_head = true;
            let d = self.encoder.output_dim();
            self.params.insert(gat::PROJECTION, DenseMatrix::identity(d))?;
        }
        Ok(self)
    }
}

/// What happened during one session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    /// Support loss before each gradient step.
    pub losses: Vec<f64>,
    /// Old classes whose drift weights underflowed and fell back to uniform.
    pub pso_underflow: Vec<usize>,
    pub diagnostics: Vec<String>,
}

/// Support means of the session's classes.
pub fn init_novel_prototypes(
    embeddings: &DenseMatrix,
    session: &SessionDataset,
) -> Result<Vec<(usize, Vec<f64>)>> {
    compute_prototypes(embeddings, &session.support, &session.support_labels(), &session.classes)
}

/// Row `i`: softmax of `tau * cosine` between query row `i` and every bank
/// prototype, in bank order.
pub fn ipcn_probabilities(query: &DenseMatrix, bank: &PrototypeBank, tau: f64) -> DenseMatrix {
    let rows: Vec<Vec<f64>> = (0..query.rows())
        .map(|i| predict_proba(query.row(i), bank, tau))
        .collect();
    if rows.is_empty() {
        DenseMatrix::zeros(0, bank.len())
    } else {
        DenseMatrix::from_rows(&rows)
    }
}

/// One calibration round for the `novel` classes.
///
/// Each query node joins the class of its highest probability (ties to the
/// lowest class id) when that class is novel; then every novel prototype
/// becomes the mean of its support embeddings and its members, the members
/// weighted by their probability for the class. Old prototypes are left
/// untouched.
pub fn ipcn_step(
    bank: &mut PrototypeBank,
    novel: &[usize],
    support: &DenseMatrix,
    support_labels: &[usize],
    query: &DenseMatrix,
    tau: f64,
) -> Result<()> {
    let dim = bank.dim();
    let probs = ipcn_probabilities(query, bank, tau);
    let classes = bank.classes();
    let mut num: Vec<Vec<f64>> = vec![vec![0.0; dim]; novel.len()];
    let mut den = vec![0.0; novel.len()];
    for (r, &c) in support_labels.iter().enumerate() {
        if let Some(k) = novel.iter().position(|&n| n == c) {
            num[k].iter_mut().zip(support.row(r)).for_each(|(a, x)| *a += x);
            den[k] += 1.0;
        }
    }
    for i in 0..query.rows() {
        let p = probs.row(i);
        let mut best = 0;
        for j in 1..p.len() {
            if p[j] > p[best] || (p[j] == p[best] && classes[j] < classes[best]) {
                best = j;
            }
        }
        if let Some(k) = novel.iter().position(|&n| n == classes[best]) {
            let w = p[best];
            num[k].iter_mut().zip(query.row(i)).for_each(|(a, x)| *a += w * x);
            den[k] += w;
        }
    }
    for (k, &c) in novel.iter().enumerate() {
        if den[k] == 0.0 {
            return Err(Error::EmptyClass(c));
        }
        let v = num[k].iter().map(|x| x / den[k]).collect();
        let session = bank
            .entries()
            .iter()
            .find(|e| e.class == c)
            .map(|e| e.session)
            .ok_or_else(|| Error::Contract(format!("novel class {c} missing from bank")))?;
        bank.upsert(c, v, session)?;
    }
    Ok(())
}

/// `iters` rounds of [`ipcn_step`]; zero rounds leave the bank unchanged.
pub fn ipcn_calibrate(
    bank: &mut PrototypeBank,
    novel: &[usize],
    support: &DenseMatrix,
    support_labels: &[usize],
    query: &DenseMatrix,
    tau: f64,
    iters: usize,
) -> Result<()> {
    for _ in 0..iters {
        ipcn_step(bank, novel, support, support_labels, query, tau)?;
    }
    Ok(())
}

/// Normalized Gaussian kernel weights of `points` around `center`.
/// Returns uniform weights and `true` when every kernel value underflows.
pub fn pso_weights(points: &DenseMatrix, center: &[f64], sigma: f64) -> (Vec<f64>, bool) {
    let phi: Vec<f64> = (0..points.rows())
        .map(|i| {
            let d2: f64 = points
                .row(i)
                .iter()
                .zip(center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let z: f64 = phi.iter().sum();
    if z > 0.0 {
        (phi.into_iter().map(|p| p / z).collect(), false)
    } else {
        let n = points.rows() as f64;
        (vec![1.0 / n; points.rows()], true)
    }
}

/// Shifts the prototypes of `old` classes by the kernel-weighted change of
/// the support embeddings, `before` under the previous parameters and
/// `after` under the new ones. Returns the classes whose weights underflowed.
pub fn pso_shift(
    bank: &mut PrototypeBank,
    old: &[usize],
    before: &DenseMatrix,
    after: &DenseMatrix,
    sigma: f64,
) -> Result<Vec<usize>> {
    if before.shape() != after.shape() || before.cols() != bank.dim() {
        return Err(Error::Contract(format!(
            "support embeddings {:?} and {:?} against bank dim {}",
            before.shape(),
            after.shape(),
            bank.dim()
        )));
    }
    if before.rows() == 0 {
        return Err(Error::Input("prototype shift needs at least one support node".into()));
    }
    let mut underflow = Vec::new();
    for &c in old {
        let entry = bank
            .entries()
            .iter()
            .find(|e| e.class == c)
            .ok_or_else(|| Error::Contract(format!("old class {c} missing from bank")))?;
        let session = entry.session;
        let (w, fell_back) = pso_weights(before, &entry.vector, sigma);
        if fell_back {
            underflow.push(c);
        }
        let mut shifted = entry.vector.clone();
        for (i, wi) in w.iter().enumerate() {
            for ((s, a), b) in shifted.iter_mut().zip(after.row(i)).zip(before.row(i)) {
                *s += wi * (a - b);
            }
        }
        bank.upsert(c, shifted, session)?;
    }
    Ok(underflow)
}

/// Mean margin loss of the support nodes against every bank prototype.
/// A dropout stream selects training mode.
pub fn support_loss<'g, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    session: &'g SessionDataset,
    params: &ParamStore,
    enc: &EncoderConfig,
    bank: &PrototypeBank,
    loss: LossConfig,
    dropout: Option<&mut R>,
) -> Result<Var> {
    let x = tape.constant(session.features.clone());
    let vars = gat::ParamVars::register(tape, params);
    let emb = gat::forward(tape, x, &vars, enc, dropout)?;
    let targets = session
        .support_labels()
        .iter()
        .map(|&c| {
            bank.position(c)
                .ok_or_else(|| Error::Contract(format!("support class {c} missing from bank")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(margin_loss(tape, emb, &session.support, &targets, &bank.matrix(), loss))
}

/// One gradient step on the support loss; returns the loss before the step.
#[allow(clippy::too_many_arguments)]
pub fn finetune_epoch<R: Rng + ?Sized>(
    params: &mut ParamStore,
    adam: &mut Adam,
    session: &SessionDataset,
    enc: &EncoderConfig,
    bank: &PrototypeBank,
    cfg: &IncrementalConfig,
    dropout: &mut R,
) -> Result<f64> {
    let mut tape = Tape::with_graph(&session.graph);
    let loss = support_loss(&mut tape, session, params, enc, bank, cfg.loss, Some(dropout))?;
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NonFinite(format!(
            "support loss in session {}: {value}",
            session.index
        )));
    }
    let grads = tape.backward(loss)?;
    let trainable = cfg.trainable;
    adam.step(params, grads.params(), |name| match trainable {
        Trainable::All => true,
        Trainable::ProjectionOnly => !gat::is_backbone_param(name),
        Trainable::Nothing => false,
    })?;
    Ok(value)
}

/// Runs one incremental session and returns the state after it.
///
/// The session must directly follow `state` and introduce only unseen
/// classes. Dropout masks come from the `session-{t}` stream of `seed`.
pub fn run_session(
    state: &SessionState,
    session: &SessionDataset,
    cfg: &IncrementalConfig,
    seed: u64,
) -> Result<(SessionState, SessionLog)> {
    cfg.validate()?;
    session.validate()?;
    let t = session.index;
    if t != state.session + 1 {
        return Err(Error::Input(format!(
            "session {t} cannot follow session {}",
            state.session
        )));
    }
    if let Some(&c) = session.classes.iter().find(|&&c| state.bank.contains(c)) {
        return Err(Error::Input(format!("class {c} of session {t} was already seen")));
    }
    let enc = &state.encoder;
    let old: Vec<usize> = state.bank.classes();
    let mut bank = state.bank.clone();
    let mut params = state.params.clone();
    let mut adam = Adam::new(cfg.optimizer);
    let mut dropout = rng::stream(seed, &format!("session-{t}"));
    let mut log = SessionLog::default();
    let labels = session.support_labels();

    let novel_prototypes = |bank: &mut PrototypeBank, params: &ParamStore, init: bool| -> Result<()> {
        let emb = gat::encode(&session.graph, &session.features, params, enc)?;
        if init {
            for (c, v) in init_novel_prototypes(&emb, session)? {
                bank.upsert(c, v, t)?;
            }
        }
        if cfg.use_ipcn && !session.query.is_empty() {
            ipcn_calibrate(
                bank,
                &session.classes,
                &emb.select_rows(&session.support),
                &labels,
                &emb.select_rows(&session.query),
                cfg.loss.tau,
                cfg.ipcn_iters,
            )?;
        }
        Ok(())
    };

    for epoch in 0..cfg.inc_epochs {
        novel_prototypes(&mut bank, &params, epoch == 0 || cfg.refresh_each_epoch)?;
        if cfg.trainable != Trainable::Nothing {
            let l = finetune_epoch(&mut params, &mut adam, session, enc, &bank, cfg, &mut dropout)?;
            log.losses.push(l);
        }
    }

    if cfg.use_ema {
        params = gat::ema_update(&state.params, &params, cfg.beta)?;
    }
    if cfg.final_refresh {
        novel_prototypes(&mut bank, &params, true)?;
    }
    if cfg.use_pso {
        let before = gat::encode(&session.graph, &session.features, &state.params, enc)?
            .select_rows(&session.support);
        let after = gat::encode(&session.graph, &session.features, &params, enc)?
            .select_rows(&session.support);
        log.pso_underflow = pso_shift(&mut bank, &old, &before, &after, cfg.sigma)?;
        for c in &log.pso_underflow {
            log.diagnostics.push(format!(
                "session {t}: drift weights of class {c} underflowed, used uniform weights"
            ));
        }
    }
    Ok((
        SessionState {
            session: t,
            encoder: enc.clone(),
            params,
            bank,
        },
        log,
    ))
}
