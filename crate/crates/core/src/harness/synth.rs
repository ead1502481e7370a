//! Stochastic block model graphs with class-signal features.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::DenseMatrix;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::{LabelVector, SparseGraph};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub classes: usize,
    pub nodes_per_class: usize,
    /// Link probability between two nodes of the same class.
    pub p_in: f64,
    /// Link probability between two nodes of different classes.
    pub p_out: f64,
    pub feature_dim: usize,
    /// Standard deviation of the Gaussian noise added to every feature.
    pub feature_noise: f64,
    pub seed: u64,
}

impl SbmSpec {
    /// Expected fraction of links that join two nodes of the same class.
    pub fn expected_homophily(&self) -> f64 {
        let (c, m) = (self.classes as f64, self.nodes_per_class as f64);
        let intra = c * m * (m - 1.0) / 2.0 * self.p_in;
        let inter = c * (c - 1.0) / 2.0 * m * m * self.p_out;
        if intra + inter == 0.0 {
            0.0
        } else {
            intra / (intra + inter)
        }
    }

    /// Picks `p_in` and `p_out` for a target homophily and mean degree.
    pub fn with_homophily(mut self, homophily: f64, mean_degree: f64) -> Self {
        let m = self.nodes_per_class as f64;
        let others = (self.classes as f64 - 1.0) * m;
        self.p_in = (homophily * mean_degree / (m - 1.0)).min(1.0);
        self.p_out = if others > 0.0 {
            ((1.0 - homophily) * mean_degree / others).min(1.0)
        } else {
            0.0
        };
        self
    }
}

/// Fraction of non-self-loop links whose endpoints share a label.
pub fn homophily(g: &SparseGraph, labels: &LabelVector) -> f64 {
    let edges = g.undirected_edges();
    if edges.is_empty() {
        return 0.0;
    }
    let same = edges
        .iter()
        .filter(|&&(u, v)| labels.get(u).is_some() && labels.get(u) == labels.get(v))
        .count();
    same as f64 / edges.len() as f64
}

/// Samples a graph where node `u` has class `u / nodes_per_class`. Its
/// features are the one-hot indicator of `class mod feature_dim` plus
/// independent Gaussian noise.
pub fn synth_sbm(spec: &SbmSpec) -> Result<Dataset> {
    for (name, p) in [("p_in", spec.p_in), ("p_out", spec.p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("{name} = {p} outside [0,1]")));
        }
    }
    if spec.feature_dim == 0 || !(spec.feature_noise >= 0.0) {
        return Err(Error::Input("need feature_dim >= 1 and feature_noise >= 0".into()));
    }
    let n = spec.classes * spec.nodes_per_class;
    let class_of = |u: usize| u / spec.nodes_per_class;
    let mut edge_rng = rng::stream(spec.seed, "sbm-edges");
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if class_of(u) == class_of(v) { spec.p_in } else { spec.p_out };
            if p > 0.0 && edge_rng.random::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::from_edges(&edges, n)?;
    let mut feat_rng = rng::stream(spec.seed, "sbm-features");
    let noise = Normal::new(0.0, spec.feature_noise).map_err(|e| Error::Input(e.to_string()))?;
    let mut data = vec![0.0; n * spec.feature_dim];
    for u in 0..n {
        let row = &mut data[u * spec.feature_dim..(u + 1) * spec.feature_dim];
        row[class_of(u) % spec.feature_dim] = 1.0;
        if spec.feature_noise > 0.0 {
            for x in row.iter_mut() {
                *x += noise.sample(&mut feat_rng);
            }
        }
    }
    let features = DenseMatrix::from_vec(n, spec.feature_dim, data)?;
    let labels = LabelVector::from_dense(&(0..n).map(class_of).collect::<Vec<_>>());
    Dataset::new(graph, features, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> SbmSpec {
        SbmSpec {
            classes: 6,
            nodes_per_class: 40,
            p_in: 0.0,
            p_out: 0.0,
            feature_dim: 8,
            feature_noise: 0.0,
            seed: 3,
        }
        .with_homophily(0.6, 8.0)
    }

    #[test]
    fn homophily_tracks_the_analytic_value() {
        let s = spec();
        assert!((s.expected_homophily() - 0.6).abs() < 1e-12);
        for seed in 0..5 {
            let d = synth_sbm(&SbmSpec { seed, ..s.clone() }).unwrap();
            let h = homophily(&d.graph, &d.labels);
            assert!((h - 0.6).abs() <= 0.05, "seed {seed}: {h}");
        }
    }

    #[test]
    fn no_inter_links_gives_disjoint_communities() {
        let s = SbmSpec {
            p_in: 0.2,
            p_out: 0.0,
            ..spec()
        };
        let d = synth_sbm(&s).unwrap();
        assert!(!d.graph.undirected_edges().is_empty());
        assert_eq!(homophily(&d.graph, &d.labels), 1.0);
    }

    #[test]
    fn noiseless_features_are_separable() {
        let d = synth_sbm(&spec()).unwrap();
        for u in 0..d.node_count() {
            let c = d.labels.get(u).unwrap();
            let row = d.features.row(u);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert_eq!(argmax, c % 8);
            assert_eq!(row.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let s = SbmSpec {
            feature_noise: 0.5,
            ..spec()
        };
        assert_eq!(synth_sbm(&s).unwrap(), synth_sbm(&s).unwrap());
        let other = synth_sbm(&SbmSpec { seed: 4, ..s.clone() }).unwrap();
        assert_ne!(synth_sbm(&s).unwrap().graph, other.graph);
    }
}
