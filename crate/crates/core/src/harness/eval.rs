//! Evaluation-only storage of query sets and per-session accuracy.
//!
//! Training code never receives an [`EvalStore`]; it only sees one
//! [`SessionDataset`](crate::dataset::SessionDataset) at a time. Every read
//! of a stored query set is recorded so tests can audit when past sessions
//! were touched.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::error::{Error, Result};
use crate::gat;
use crate::graph::SparseGraph;
use crate::incremental::SessionState;
use crate::proto::classify;

/// Test query nodes of one session inside that session's own graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalTarget {
    pub session: usize,
    pub graph: SparseGraph,
    pub features: DenseMatrix,
    /// Local ids of the test query nodes.
    pub nodes: Vec<usize>,
    pub truth: Vec<usize>,
}

/// Accuracy after one session over all query nodes seen so far.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub t: usize,
    pub acc_all: f64,
    /// Accuracy on nodes of base classes.
    pub acc_base: f64,
    /// Accuracy on nodes of incremental classes; absent after the base
    /// session.
    pub acc_novel: Option<f64>,
    #[serde(skip)]
    pub base_count: usize,
    #[serde(skip)]
    pub novel_count: usize,
}

/// One read of a stored query set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Access {
    /// Last session the evaluated model was trained on.
    pub trained_through: usize,
    pub target: usize,
}

#[derive(Debug)]
pub struct EvalStore {
    base_classes: Vec<usize>,
    targets: Vec<EvalTarget>,
    log: RefCell<Vec<Access>>,
}

impl EvalStore {
    pub fn new(base_classes: Vec<usize>, targets: Vec<EvalTarget>) -> Self {
        EvalStore {
            base_classes,
            targets,
            log: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[EvalTarget] {
        &self.targets
    }

    pub fn access_log(&self) -> Vec<Access> {
        self.log.borrow().clone()
    }

    /// Classifies the query nodes of sessions `0..=state.session`, each
    /// embedded within its own session graph, against the state's bank.
    pub fn evaluate(&self, state: &SessionState) -> Result<SessionReport> {
        let t = state.session;
        if t >= self.targets.len() {
            return Err(Error::Input(format!("no query set stored for session {t}")));
        }
        let (mut base_hits, mut base_count, mut novel_hits, mut novel_count) = (0, 0, 0, 0);
        for target in &self.targets[..=t] {
            self.log.borrow_mut().push(Access {
                trained_through: t,
                target: target.session,
            });
            let emb = gat::encode(&target.graph, &target.features, &state.params, &state.encoder)?;
            for (&u, &truth) in target.nodes.iter().zip(&target.truth) {
                let hit = usize::from(classify(emb.row(u), &state.bank) == truth);
                if self.base_classes.binary_search(&truth).is_ok() {
                    base_hits += hit;
                    base_count += 1;
                } else {
                    novel_hits += hit;
                    novel_count += 1;
                }
            }
        }
        if base_count == 0 {
            return Err(Error::Input("base session has no test nodes".into()));
        }
        let acc = |h: usize, n: usize| h as f64 / n as f64;
        Ok(SessionReport {
            t,
            acc_all: acc(base_hits + novel_hits, base_count + novel_count),
            acc_base: acc(base_hits, base_count),
            acc_novel: (novel_count > 0).then(|| acc(novel_hits, novel_count)),
            base_count,
            novel_count,
        })
    }
}
