//! Triple-branch class augmentation and base-session training.
//!
//! Besides the original graph, the encoder is trained on two augmented
//! copies of the base data whose classes are treated as new ones:
//! a topology-free branch (every node only sees itself) with labels shifted
//! by `C`, and a topology-varying branch with labels shifted by `2C`. The
//! topology-varying branch randomly partitions the base classes into groups
//! of `N`, keeps only the links inside each group and injects random links.
//!
//! All three branches are encoded in one pass over the block-diagonal union
//! of their graphs, which is exactly equivalent to three separate passes.

use std::collections::BTreeSet;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, ParamStore, Tape, Var};
use crate::dataset::SessionDataset;
use crate::error::{Error, Result};
use crate::gat::{self, Adam, EncoderConfig, OptimizerConfig};
use crate::graph::{inject_link_noise, sever_to_class_subset, SparseGraph};
use crate::proto::{compute_prototypes, margin_loss, LossConfig, PrototypeBank};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchKind {
    Original,
    TopologyFree,
    TopologyVarying,
}

impl BranchKind {
    /// Label shift of the branch for `c` base classes.
    pub fn offset(self, c: usize) -> usize {
        match self {
            BranchKind::Original => 0,
            BranchKind::TopologyFree => c,
            BranchKind::TopologyVarying => 2 * c,
        }
    }
}

/// One view of the base data with its own (shifted) label space.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedBranch {
    pub kind: BranchKind,
    pub graph: SparseGraph,
    pub label_offset: usize,
    /// Branch label space, `label_offset..label_offset + C`.
    pub classes: Vec<usize>,
    /// Original base class ids, ascending; the `i`-th maps to
    /// `label_offset + i`.
    pub source_classes: Vec<usize>,
}

impl AugmentedBranch {
    /// The original data as a branch with offset 0.
    pub fn original(base: &SessionDataset) -> Self {
        Self::new(BranchKind::Original, base.graph.clone(), &base.classes)
    }

    fn new(kind: BranchKind, graph: SparseGraph, classes: &[usize]) -> Self {
        let offset = kind.offset(classes.len());
        AugmentedBranch {
            kind,
            graph,
            label_offset: offset,
            classes: (offset..offset + classes.len()).collect(),
            source_classes: classes.to_vec(),
        }
    }

    /// Branch label of base class `class`.
    pub fn shifted_label(&self, class: usize) -> usize {
        let pos = self
            .source_classes
            .binary_search(&class)
            .expect("class belongs to the base session");
        self.label_offset + pos
    }
}

/// Random grouping of the base classes with one severed and noised
/// adjacency per group.
#[derive(Debug, Clone, PartialEq)]
pub struct TvaPartition {
    /// Groups of `N` classes; the last holds the remainder when `N` does not
    /// divide `C`.
    pub subsets: Vec<BTreeSet<usize>>,
    /// Adjacency of each group before noise injection.
    pub severed: Vec<SparseGraph>,
    pub noised: Vec<SparseGraph>,
}

impl TvaPartition {
    pub fn group_count(&self) -> usize {
        self.subsets.len()
    }
}

/// Topology-free branch: identity adjacency, labels shifted by `C`.
///
/// Branch labels are dense: base class ids are first replaced by their
/// rank among the base classes, so arbitrary ids never collide.
pub fn make_tfa(base: &SessionDataset) -> AugmentedBranch {
    AugmentedBranch::new(
        BranchKind::TopologyFree,
        SparseGraph::identity(base.graph.node_count()),
        &base.classes,
    )
}

/// Splits `classes` into `ceil(C / N)` random groups.
pub fn partition_classes<R: Rng + ?Sized>(
    classes: &[usize],
    n_way: usize,
    rng: &mut R,
) -> Result<Vec<BTreeSet<usize>>> {
    if n_way == 0 {
        return Err(Error::Input("group size must be at least 1".into()));
    }
    let mut shuffled = classes.to_vec();
    shuffled.shuffle(rng);
    Ok(shuffled
        .chunks(n_way)
        .map(|c| c.iter().copied().collect())
        .collect())
}

/// Topology-varying branch with a fresh partition drawn from `rng`.
///
/// Group `i`'s adjacency keeps only links among nodes of its classes, then
/// receives `floor(noise_rate * |E_i|)` random links among its connected
/// nodes. The branch graph is the edge union of all group adjacencies,
/// which never links two groups.
pub fn make_tva<R: Rng + ?Sized>(
    base: &SessionDataset,
    n_way: usize,
    noise_rate: f64,
    rng: &mut R,
) -> Result<(TvaPartition, AugmentedBranch)> {
    if !(0.0..=1.0).contains(&noise_rate) {
        return Err(Error::Input(format!("noise rate {noise_rate} outside [0,1]")));
    }
    let subsets = partition_classes(&base.classes, n_way, rng)?;
    let severed: Vec<SparseGraph> = subsets
        .iter()
        .map(|s| sever_to_class_subset(&base.graph, &base.labels, s))
        .collect();
    let noised: Vec<SparseGraph> = severed
        .iter()
        .map(|g| inject_link_noise(g, noise_rate, rng))
        .collect();
    let graph = SparseGraph::edge_union(&noised.iter().collect::<Vec<_>>())?;
    let branch = AugmentedBranch::new(BranchKind::TopologyVarying, graph, &base.classes);
    Ok((
        TvaPartition {
            subsets,
            severed,
            noised,
        },
        branch,
    ))
}

/// Number of distinct `N`-class groups from `C` classes, `C! / (N! (C-N)!)`.
pub fn count_arrangements(c: u64, n: u64) -> Result<BigUint> {
    if n > c {
        return Err(Error::Input(format!("cannot choose {n} of {c} classes")));
    }
    let k = n.min(c - n);
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc *= c - i;
        acc /= i + 1;
    }
    Ok(acc)
}

/// Branch weights `(alpha, (1-alpha)/2, (1-alpha)/2)`.
pub fn branch_weights(alpha: f64) -> (f64, f64, f64) {
    let rest = (1.0 - alpha) / 2.0;
    (alpha, rest, rest)
}

/// Weighted sum of the branch losses. An absent branch contributes nothing.
pub fn base_loss(
    tape: &mut Tape<'_>,
    original: Var,
    tfa: Option<Var>,
    tva: Option<Var>,
    alpha: f64,
) -> Var {
    let (wo, wf, wv) = branch_weights(alpha);
    let mut total = tape.scale(original, wo);
    for (loss, w) in [(tfa, wf), (tva, wv)] {
        if let Some(l) = loss {
            let scaled = tape.scale(l, w);
            total = tape.add(total, scaled);
        }
    }
    total
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaseTrainConfig {
    pub alpha: f64,
    pub base_epochs: usize,
    pub tva_noise_rate: f64,
    /// Classes per topology-varying group.
    pub tva_way: usize,
    pub use_tfa: bool,
    pub use_tva: bool,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for BaseTrainConfig {
    fn default() -> Self {
        BaseTrainConfig {
            alpha: 0.7,
            base_epochs: 1000,
            tva_noise_rate: 0.1,
            tva_way: 5,
            use_tfa: true,
            use_tva: true,
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

impl BaseTrainConfig {
    /// Plain prototype training on the original graph only.
    pub fn plain() -> Self {
        BaseTrainConfig {
            use_tfa: false,
            use_tva: false,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0,1]", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.tva_noise_rate) {
            return Err(Error::Config(format!(
                "tva_noise_rate {} outside [0,1]",
                self.tva_noise_rate
            )));
        }
        if self.tva_way == 0 {
            return Err(Error::Config("tva_way must be at least 1".into()));
        }
        self.loss.validate()
    }

    fn tfa_active(&self) -> bool {
        self.use_tfa && branch_weights(self.alpha).1 != 0.0
    }

    fn tva_active(&self) -> bool {
        self.use_tva && branch_weights(self.alpha).2 != 0.0
    }
}

#[derive(Debug, Clone)]
pub struct BaseOutcome {
    pub params: ParamStore,
    /// Prototypes of the base classes only.
    pub bank: PrototypeBank,
    /// Training loss of every epoch.
    pub losses: Vec<f64>,
}

/// Everything one epoch's forward pass needs, rebuilt every epoch.
struct EpochBatch {
    graph: SparseGraph,
    features: DenseMatrix,
    /// Per active branch: first row in the stacked batch, shifted labels.
    branches: Vec<(usize, Vec<usize>)>,
    classes: Vec<usize>,
}

fn epoch_batch<R: Rng + ?Sized>(
    base: &SessionDataset,
    cfg: &BaseTrainConfig,
    tva_rng: &mut R,
) -> Result<EpochBatch> {
    let n = base.graph.node_count();
    let labels = base.support_labels();
    let mut views = vec![AugmentedBranch::original(base)];
    if cfg.tfa_active() {
        views.push(make_tfa(base));
    }
    if cfg.tva_active() {
        views.push(make_tva(base, cfg.tva_way, cfg.tva_noise_rate, tva_rng)?.1);
    }
    if views.len() == 1 {
        let dense = labels.iter().map(|&c| views[0].shifted_label(c)).collect();
        return Ok(EpochBatch {
            graph: base.graph.clone(),
            features: base.features.clone(),
            branches: vec![(0, dense)],
            classes: views[0].classes.clone(),
        });
    }
    let graph = SparseGraph::disjoint_union(&views.iter().map(|v| &v.graph).collect::<Vec<_>>());
    let mut data = Vec::with_capacity(views.len() * base.features.len());
    for _ in &views {
        data.extend_from_slice(base.features.as_slice());
    }
    let features = DenseMatrix::from_vec(views.len() * n, base.features.cols(), data)?;
    let branches = views
        .iter()
        .enumerate()
        .map(|(k, v)| (k * n, labels.iter().map(|&c| v.shifted_label(c)).collect()))
        .collect();
    let classes = views.iter().flat_map(|v| v.classes.iter().copied()).collect();
    Ok(EpochBatch {
        graph,
        features,
        branches,
        classes,
    })
}

/// Trains the encoder on the base session.
///
/// `base` must be fully labeled on `support` (the base training nodes).
/// Each epoch rebuilds the augmented branches (with a fresh topology-varying
/// partition), computes each branch's class prototypes from the current
/// embeddings, applies the weighted margin loss against all active branch
/// prototypes and takes one optimizer step. Random streams are derived from
/// `seed`: `init`, `dropout` and `tva`.
pub fn train_base(
    base: &SessionDataset,
    enc: &EncoderConfig,
    cfg: &BaseTrainConfig,
    seed: u64,
) -> Result<BaseOutcome> {
    cfg.validate()?;
    base.validate()?;
    if base.support.len() != base.graph.node_count() {
        return Err(Error::Input(
            "base training expects every node of the base graph to be labeled".into(),
        ));
    }
    let mut params = gat::init_params(enc, &mut rng::stream(seed, "init"))?;
    let mut dropout_rng = rng::stream(seed, "dropout");
    let mut tva_rng = rng::stream(seed, "tva");
    let mut adam = Adam::new(cfg.optimizer);
    let mut losses = Vec::with_capacity(cfg.base_epochs);

    for epoch in 0..cfg.base_epochs {
        let batch = epoch_batch(base, cfg, &mut tva_rng)?;
        let mut tape = Tape::with_graph(&batch.graph);
        let (emb, _) =
            gat::encode_train(&mut tape, &batch.graph, &batch.features, &params, enc, &mut dropout_rng)?;

        let values = tape.value(emb).clone();
        let mut protos = Vec::with_capacity(batch.classes.len());
        let mut branch_rows = Vec::with_capacity(batch.branches.len());
        for (start, labels) in &batch.branches {
            let rows: Vec<usize> = base.support.iter().map(|&u| u + start).collect();
            let mut classes: Vec<usize> = labels.clone();
            classes.sort_unstable();
            classes.dedup();
            for (_, v) in compute_prototypes(&values, &rows, labels, &classes)? {
                protos.push(v);
            }
            branch_rows.push(rows);
        }
        let protos = DenseMatrix::from_rows(&protos);
        let position = |c: usize| batch.classes.binary_search(&c).expect("class in batch");

        let mut branch_losses = Vec::with_capacity(3);
        for ((_, labels), rows) in batch.branches.iter().zip(&branch_rows) {
            let targets: Vec<usize> = labels.iter().map(|&c| position(c)).collect();
            branch_losses.push(margin_loss(&mut tape, emb, rows, &targets, &protos, cfg.loss));
        }
        let (tfa, tva) = match (cfg.tfa_active(), cfg.tva_active()) {
            (true, true) => (Some(branch_losses[1]), Some(branch_losses[2])),
            (true, false) => (Some(branch_losses[1]), None),
            (false, true) => (None, Some(branch_losses[1])),
            (false, false) => (None, None),
        };
        let loss = if tfa.is_none() && tva.is_none() {
            branch_losses[0]
        } else {
            base_loss(&mut tape, branch_losses[0], tfa, tva, cfg.alpha)
        };
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("base loss at epoch {epoch}: {value}")));
        }
        losses.push(value);
        let grads = tape.backward(loss)?;
        adam.step(&mut params, grads.params(), |_| true)?;
    }

    let emb = gat::encode(&base.graph, &base.features, &params, enc)?;
    let mut bank = PrototypeBank::new(enc.output_dim());
    let labels = base.support_labels();
    for (c, v) in compute_prototypes(&emb, &base.support, &labels, &base.classes)? {
        bank.insert(c, v, 0)?;
    }
    Ok(BaseOutcome {
        params,
        bank,
        losses,
    })
}

/// Ground-truth free check that the class ids of the branches are pairwise
/// disjoint and ordered original < topology-free < topology-varying.
pub fn branches_disjoint(branches: &[&AugmentedBranch]) -> bool {
    let mut sorted: Vec<&&AugmentedBranch> = branches.iter().collect();
    sorted.sort_by_key(|b| b.label_offset);
    sorted.windows(2).all(|w| {
        let hi = w[0].classes.iter().max();
        let lo = w[1].classes.iter().min();
        matches!((hi, lo), (Some(h), Some(l)) if h < l)
    })
}
