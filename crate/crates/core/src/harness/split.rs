//! Inductive session splits.
//!
//! Classes are shuffled with the `split` stream of the seed: the first
//! `base_classes` form the base session and the following ones are grouped
//! `n_way` at a time into incremental sessions (leftover classes are
//! unused). Every session keeps only the links among its own nodes.
//! Base nodes are split per class into train and test; in an incremental
//! session the first `k_shot` shuffled nodes of each class are support, a
//! `query_val_fraction` share of the rest is withheld for validation and the
//! remainder is the test query.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::dataset::{Dataset, SessionDataset};
use crate::error::{Error, Result};
use crate::graph::{induced_subgraph, restrict_to_sessions, LabelVector, NodeIdSet, SparseGraph};
use crate::harness::config::ExperimentConfig;
use crate::harness::eval::{EvalStore, EvalTarget};
use crate::rng;

/// Node ids (global) of one incremental session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionNodes {
    pub classes: Vec<usize>,
    pub support: Vec<usize>,
    pub query_test: Vec<usize>,
    pub query_val: Vec<usize>,
}

/// A persisted split; everything is a global node id or class id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub base_classes: Vec<usize>,
    pub base_train: Vec<usize>,
    pub base_test: Vec<usize>,
    pub sessions: Vec<SessionNodes>,
    /// Nodes that belong to no session.
    pub dropped: Vec<usize>,
}

/// Training inputs of every session plus the evaluation-only query store.
#[derive(Debug)]
pub struct Protocol {
    /// Base training view: the base graph restricted to its train nodes,
    /// all of them labeled.
    pub base: SessionDataset,
    pub sessions: Vec<SessionDataset>,
    pub eval: EvalStore,
}

fn take_fraction(len: usize, fraction: f64) -> usize {
    ((len as f64) * fraction).round() as usize
}

pub fn split_dataset(data: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<SplitPlan> {
    let mut rng = rng::stream(seed, "split");
    let mut classes = data.labels.classes();
    let needed = cfg.required_classes();
    if classes.len() < needed {
        return Err(Error::Config(format!(
            "protocol needs {needed} classes, data has {}",
            classes.len()
        )));
    }
    classes.shuffle(&mut rng);
    let mut base_classes = classes[..cfg.base_classes].to_vec();
    base_classes.sort_unstable();
    let mut members: std::collections::HashMap<usize, Vec<usize>> = Default::default();
    for u in 0..data.node_count() {
        if let Some(c) = data.labels.get(u) {
            members.entry(c).or_default().push(u);
        }
    }

    let mut base_train = Vec::new();
    let mut base_test = Vec::new();
    for &c in &base_classes {
        let mut nodes = members[&c].clone();
        nodes.shuffle(&mut rng);
        let k = take_fraction(nodes.len(), cfg.base_train_fraction).clamp(1, nodes.len());
        base_train.extend_from_slice(&nodes[..k]);
        base_test.extend_from_slice(&nodes[k..]);
    }
    base_train.sort_unstable();
    base_test.sort_unstable();

    let mut sessions = Vec::with_capacity(cfg.sessions - 1);
    for t in 0..cfg.sessions - 1 {
        let start = cfg.base_classes + t * cfg.n_way;
        let mut group = classes[start..start + cfg.n_way].to_vec();
        group.sort_unstable();
        let mut s = SessionNodes {
            classes: group.clone(),
            support: vec![],
            query_test: vec![],
            query_val: vec![],
        };
        for &c in &group {
            let mut nodes = members[&c].clone();
            if nodes.len() < cfg.k_shot {
                return Err(Error::TooFewNodes {
                    class: c,
                    found: nodes.len(),
                    needed: cfg.k_shot,
                });
            }
            nodes.shuffle(&mut rng);
            let (support, query) = nodes.split_at(cfg.k_shot);
            let v = take_fraction(query.len(), cfg.query_val_fraction);
            s.support.extend_from_slice(support);
            s.query_val.extend_from_slice(&query[..v]);
            s.query_test.extend_from_slice(&query[v..]);
        }
        s.support.sort_unstable();
        s.query_val.sort_unstable();
        s.query_test.sort_unstable();
        sessions.push(s);
    }

    let used: BTreeSet<usize> = base_train
        .iter()
        .chain(&base_test)
        .chain(sessions.iter().flat_map(|s| {
            s.support.iter().chain(&s.query_test).chain(&s.query_val)
        }))
        .copied()
        .collect();
    let dropped = (0..data.node_count()).filter(|u| !used.contains(u)).collect();
    Ok(SplitPlan {
        seed,
        base_classes,
        base_train,
        base_test,
        sessions,
        dropped,
    })
}

impl SplitPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn session_count(&self) -> usize {
        self.sessions.len() + 1
    }

    /// Builds every session's training view and the evaluation store.
    pub fn materialize(&self, data: &Dataset) -> Result<Protocol> {
        self.check_against(data)?;
        let mut class_sets = vec![self.base_classes.iter().copied().collect::<BTreeSet<_>>()];
        class_sets.extend(self.sessions.iter().map(|s| s.classes.iter().copied().collect()));
        let restriction = restrict_to_sessions(&data.graph, &data.labels, &class_sets)?;

        let (train_graph, train_ids) = induced_subgraph(&data.graph, &NodeIdSet::new(self.base_train.clone()));
        let base = SessionDataset {
            index: 0,
            features: data.features.select_rows(&train_ids),
            labels: LabelVector::new(train_ids.iter().map(|&u| data.labels.get(u)).collect()),
            classes: self.base_classes.clone(),
            support: (0..train_ids.len()).collect(),
            query: vec![],
            graph: train_graph,
        };

        let mut targets = Vec::with_capacity(self.session_count());
        let mut sessions = Vec::with_capacity(self.sessions.len());
        for (t, sg) in restriction.sessions.iter().enumerate() {
            let local = |ids: &[usize]| -> Vec<usize> {
                ids.iter()
                    .map(|u| sg.local_to_global.binary_search(u).expect("node inside its session"))
                    .collect()
            };
            let features = data.features.select_rows(&sg.local_to_global);
            let test = if t == 0 {
                &self.base_test
            } else {
                &self.sessions[t - 1].query_test
            };
            targets.push(eval_target(t, &sg.graph, &features, local(test), test, data));
            if t == 0 {
                continue;
            }
            let nodes = &self.sessions[t - 1];
            let support = local(&nodes.support);
            let mut labels = vec![None; sg.graph.node_count()];
            for (&l, &g) in support.iter().zip(&nodes.support) {
                labels[l] = data.labels.get(g);
            }
            let mut query = local(&nodes.query_test);
            query.extend(local(&nodes.query_val));
            query.sort_unstable();
            sessions.push(SessionDataset {
                index: t,
                graph: sg.graph.clone(),
                features,
                labels: LabelVector::new(labels),
                classes: nodes.classes.clone(),
                support,
                query,
            });
        }
        Ok(Protocol {
            base,
            sessions,
            eval: EvalStore::new(self.base_classes.clone(), targets),
        })
    }

    fn check_against(&self, data: &Dataset) -> Result<()> {
        let n = data.node_count();
        let mut seen = BTreeSet::new();
        let mut check = |ids: &[usize], classes: &[usize], what: &str| -> Result<()> {
            for &u in ids {
                let ok = u < n && data.labels.get(u).is_some_and(|c| classes.contains(&c));
                if !ok || !seen.insert(u) {
                    return Err(Error::Input(format!(
                        "split does not match the data: {what} node {u}"
                    )));
                }
            }
            Ok(())
        };
        check(&self.base_train, &self.base_classes, "base train")?;
        check(&self.base_test, &self.base_classes, "base test")?;
        for s in &self.sessions {
            check(&s.support, &s.classes, "support")?;
            check(&s.query_test, &s.classes, "query")?;
            check(&s.query_val, &s.classes, "validation")?;
        }
        Ok(())
    }
}

fn eval_target(
    t: usize,
    graph: &SparseGraph,
    features: &DenseMatrix,
    nodes: Vec<usize>,
    global: &[usize],
    data: &Dataset,
) -> EvalTarget {
    EvalTarget {
        session: t,
        graph: graph.clone(),
        features: features.clone(),
        nodes,
        truth: global.iter().map(|&u| data.labels.get(u).unwrap()).collect(),
    }
}
