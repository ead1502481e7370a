//! Prototype bank, cosine-softmax prediction and the additive-margin loss.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, Tape, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Logit scale `tau > 0`.
    pub tau: f64,
    /// Additive margin subtracted from the target similarity.
    pub kappa: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            tau: 15.0,
            kappa: 0.1,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !(self.kappa >= 0.0) {
            return Err(Error::Config(format!(
                "need tau > 0 and kappa >= 0, got tau={} kappa={}",
                self.tau, self.kappa
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BankEntry {
    pub class: usize,
    pub vector: Vec<f64>,
    /// Session in which the class first appeared.
    pub session: usize,
}

/// Class prototypes in discovery order.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeBank {
    dim: usize,
    entries: Vec<BankEntry>,
    index: HashMap<usize, usize>,
}

impl PrototypeBank {
    pub fn new(dim: usize) -> Self {
        PrototypeBank {
            dim,
            entries: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn from_entries(dim: usize, entries: Vec<BankEntry>) -> Result<Self> {
        let mut bank = PrototypeBank::new(dim);
        for e in entries {
            bank.insert(e.class, e.vector, e.session)?;
        }
        Ok(bank)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BankEntry] {
        &self.entries
    }

    pub fn classes(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.class).collect()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.index.contains_key(&class)
    }

    /// Row of `class` in [`PrototypeBank::matrix`].
    pub fn position(&self, class: usize) -> Option<usize> {
        self.index.get(&class).copied()
    }

    pub fn get(&self, class: usize) -> Option<&[f64]> {
        self.position(class).map(|i| self.entries[i].vector.as_slice())
    }

    pub fn insert(&mut self, class: usize, vector: Vec<f64>, session: usize) -> Result<()> {
        self.check_dim(&vector)?;
        if self.index.contains_key(&class) {
            return Err(Error::Contract(format!("class {class} already in bank")));
        }
        self.index.insert(class, self.entries.len());
        self.entries.push(BankEntry {
            class,
            vector,
            session,
        });
        Ok(())
    }

    /// Inserts a new class or overwrites the vector of an existing one.
    pub fn upsert(&mut self, class: usize, vector: Vec<f64>, session: usize) -> Result<()> {
        match self.position(class) {
            Some(i) => {
                self.check_dim(&vector)?;
                self.entries[i].vector = vector;
                Ok(())
            }
            None => self.insert(class, vector, session),
        }
    }

    fn check_dim(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.dim {
            return Err(Error::Contract(format!(
                "prototype of length {} in bank of dim {}",
                v.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Prototypes stacked as a `len x dim` matrix in bank order.
    pub fn matrix(&self) -> DenseMatrix {
        let rows: Vec<&[f64]> = self.entries.iter().map(|e| e.vector.as_slice()).collect();
        if rows.is_empty() {
            return DenseMatrix::zeros(0, self.dim);
        }
        DenseMatrix::from_rows(&rows)
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; `0` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}

/// Class means of `embeddings` rows: `rows[i]` has label `labels[i]`.
pub fn compute_prototypes(
    embeddings: &DenseMatrix,
    rows: &[usize],
    labels: &[usize],
    classes: &[usize],
) -> Result<Vec<(usize, Vec<f64>)>> {
    assert_eq!(rows.len(), labels.len(), "one label per row");
    let dim = embeddings.cols();
    let slot: HashMap<usize, usize> = classes.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut sums = vec![vec![0.0; dim]; classes.len()];
    let mut counts = vec![0usize; classes.len()];
    for (&r, &c) in rows.iter().zip(labels) {
        if let Some(&i) = slot.get(&c) {
            for (s, x) in sums[i].iter_mut().zip(embeddings.row(r)) {
                *s += x;
            }
            counts[i] += 1;
        }
    }
    classes
        .iter()
        .zip(sums.into_iter().zip(counts))
        .map(|(&c, (mut s, n))| {
            if n == 0 {
                return Err(Error::EmptyClass(c));
            }
            s.iter_mut().for_each(|x| *x /= n as f64);
            Ok((c, s))
        })
        .collect()
}

/// Softmax over `tau * cosine(prototype, embedding)` in bank order.
pub fn predict_proba(embedding: &[f64], bank: &PrototypeBank, tau: f64) -> Vec<f64> {
    let logits: Vec<f64> = bank
        .entries()
        .iter()
        .map(|e| tau * cosine(&e.vector, embedding))
        .collect();
    softmax(&logits)
}

pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Class of the most cosine-similar prototype; ties go to the lowest class id.
pub fn classify(embedding: &[f64], bank: &PrototypeBank) -> usize {
    assert!(!bank.is_empty(), "classify against an empty bank");
    let mut best: Option<(f64, usize)> = None;
    for e in bank.entries() {
        let s = cosine(&e.vector, embedding);
        best = match best {
            Some((bs, bc)) if bs > s || (bs == s && bc < e.class) => Some((bs, bc)),
            _ => Some((s, e.class)),
        };
    }
    best.unwrap().1
}

/// Mean margin loss of `rows` of `embeddings` against constant prototypes.
///
/// `targets[i]` is the prototype row (not class id) of `rows[i]`. The target
/// logit is `tau * (cos - kappa)`, every other logit `tau * cos`.
pub fn margin_loss(
    tape: &mut Tape<'_>,
    embeddings: Var,
    rows: &[usize],
    targets: &[usize],
    prototypes: &DenseMatrix,
    cfg: LossConfig,
) -> Var {
    assert_eq!(rows.len(), targets.len(), "one target per row");
    let k = prototypes.rows();
    let mut unit = prototypes.clone();
    for r in 0..k {
        let n = norm(unit.row(r));
        if n > 0.0 {
            unit.row_mut(r).iter_mut().for_each(|x| *x /= n);
        }
    }
    let selected = tape.select_rows(embeddings, rows);
    let normalized = tape.row_l2_normalize(selected);
    let protos_t = tape.constant(unit.transpose());
    let sims = tape.matmul(normalized, protos_t);
    let logits = tape.scale(sims, cfg.tau);
    let mut margin = DenseMatrix::zeros(rows.len(), k);
    for (i, &t) in targets.iter().enumerate() {
        margin.set(i, t, -cfg.tau * cfg.kappa);
    }
    let margin = tape.constant(margin);
    let adjusted = tape.add(logits, margin);
    tape.cross_entropy(adjusted, targets)
}

/// Margin loss of embedding rows without recording a tape.
pub fn margin_loss_value(
    embeddings: &DenseMatrix,
    rows: &[usize],
    targets: &[usize],
    prototypes: &DenseMatrix,
    cfg: LossConfig,
) -> f64 {
    let mut tape = Tape::new();
    let e = tape.constant(embeddings.clone());
    let l = margin_loss(&mut tape, e, rows, targets, prototypes, cfg);
    tape.value(l).item()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_check, ParamStore};
    use proptest::prelude::*;

    fn bank(vectors: &[(usize, [f64; 2])]) -> PrototypeBank {
        let mut b = PrototypeBank::new(2);
        for &(c, v) in vectors {
            b.insert(c, v.to_vec(), 0).unwrap();
        }
        b
    }

    #[test]
    fn prototypes_are_class_means() {
        let e = DenseMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0], [2.0, 2.0]]);
        let p = compute_prototypes(&e, &[0, 1, 2], &[7, 7, 9], &[7, 9]).unwrap();
        assert_eq!(p, vec![(7, vec![0.5, 0.5]), (9, vec![2.0, 2.0])]);
        assert!(matches!(
            compute_prototypes(&e, &[0], &[7], &[7, 3]),
            Err(Error::EmptyClass(3))
        ));
    }

    #[test]
    fn five_shot_prototype() {
        let e = DenseMatrix::from_rows(&[[1.0], [2.0], [3.0], [4.0], [5.0]]);
        let p = compute_prototypes(&e, &[0, 1, 2, 3, 4], &[1; 5], &[1]).unwrap();
        assert_eq!(p[0].1, vec![3.0]);
    }

    #[test]
    fn predict_proba_examples() {
        let b = bank(&[(0, [1.0, 1.0]), (1, [1.0, 1.0])]);
        assert_eq!(predict_proba(&[0.3, -2.0], &b, 15.0), vec![0.5, 0.5]);

        let b = bank(&[(0, [1.0, 0.0]), (1, [0.0, 1.0])]);
        let p = predict_proba(&[1.0, 0.0], &b, 1.0);
        let e = std::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.7311).abs() < 1e-4);
        let scaled = predict_proba(&[7.5, 0.0], &b, 1.0);
        assert!((scaled[0] - p[0]).abs() < 1e-15);
    }

    #[test]
    fn zero_vectors_have_zero_cosine() {
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
        let b = bank(&[(0, [0.0, 0.0]), (1, [1.0, 0.0])]);
        let p = predict_proba(&[0.0, 0.0], &b, 15.0);
        assert!(p.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn classify_rules() {
        let b = bank(&[(4, [0.0, 1.0]), (2, [1.0, 0.0])]);
        assert_eq!(classify(&[3.0, 0.0], &b), 2);
        let tie = bank(&[(7, [1.0, 0.0]), (3, [2.0, 0.0])]);
        assert_eq!(classify(&[1.0, 0.0], &tie), 3);
    }

    #[test]
    fn margin_loss_closed_form() {
        // target similarity 1, others -1
        let classes = 4;
        let mut protos = DenseMatrix::zeros(classes, 2);
        protos.row_mut(0).copy_from_slice(&[1.0, 0.0]);
        for r in 1..classes {
            protos.row_mut(r).copy_from_slice(&[-1.0, 0.0]);
        }
        let e = DenseMatrix::from_rows(&[[2.0, 0.0]]);
        let l = margin_loss_value(&e, &[0], &[0], &protos, LossConfig::default());
        let expected = (1.0 + (classes as f64 - 1.0) * (15.0f64 * (-1.0 - 0.9)).exp()).ln();
        assert!((l - expected).abs() < 1e-15, "{l} vs {expected}");
    }

    #[test]
    fn margin_loss_gradient_matches_finite_differences() {
        let protos = DenseMatrix::from_rows(&[[1.0, 0.2, -0.3], [0.1, -1.0, 0.4], [0.5, 0.5, 0.5]]);
        let mut store = ParamStore::new();
        store
            .insert("e", DenseMatrix::from_rows(&[[0.3, -0.1, 0.8], [-0.6, 0.2, 0.1]]))
            .unwrap();
        let cfg = LossConfig::default();
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new();
            let e = tape.param("e", s.get("e").unwrap().clone());
            let l = margin_loss(&mut tape, e, &[1, 0, 1], &[2, 0, 1], &protos, cfg);
            (tape.value(l).item(), tape.backward(l).unwrap().into_params())
        };
        let (_, grads) = eval(&store);
        let r = finite_difference_check(|s| eval(s).0, &store, &grads, 1e-6).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    fn arb_case() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>, usize)> {
        (1usize..5, 1usize..5).prop_flat_map(|(k, d)| {
            (
                proptest::collection::vec(proptest::collection::vec(-2.0f64..2.0, d), k),
                proptest::collection::vec(-2.0f64..2.0, d),
                0..k,
            )
        })
    }

    proptest! {
        #[test]
        fn proba_sums_to_one_and_ce_matches_zero_margin((protos, e, t) in arb_case(), tau in 0.1f64..20.0) {
            let mut b = PrototypeBank::new(e.len());
            for (c, p) in protos.iter().enumerate() {
                b.insert(c, p.clone(), 0).unwrap();
            }
            let p = predict_proba(&e, &b, tau);
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            prop_assert!(p.iter().all(|&x| x > 0.0));
            let em = DenseMatrix::from_rows(std::slice::from_ref(&e));
            let l = margin_loss_value(&em, &[0], &[t], &b.matrix(), LossConfig { tau, kappa: 0.0 });
            prop_assert!((l + p[t].ln()).abs() <= 1e-10);
            let l_margin = margin_loss_value(&em, &[0], &[t], &b.matrix(), LossConfig { tau, kappa: 0.3 });
            prop_assert!(l_margin >= l);
        }

        #[test]
        fn classify_ignores_common_rescaling((protos, e, _t) in arb_case(), s in 0.01f64..100.0, tau in 0.1f64..20.0) {
            let mut b = PrototypeBank::new(e.len());
            let mut scaled = PrototypeBank::new(e.len());
            for (c, p) in protos.iter().enumerate() {
                b.insert(c, p.clone(), 0).unwrap();
                scaled.insert(c, p.iter().map(|x| x * s).collect(), 0).unwrap();
            }
            let es: Vec<f64> = e.iter().map(|x| x * s).collect();
            let c = classify(&e, &b);
            prop_assert_eq!(c, classify(&es, &scaled));
            // argmax of the tau-scaled distribution agrees (up to exact ties)
            let p = predict_proba(&e, &b, tau);
            let pc = b.position(c).unwrap();
            prop_assert!(p.iter().all(|&x| x <= p[pc] * (1.0 + 1e-12)));
        }
    }

    #[test]
    fn bank_preserves_discovery_order_and_rejects_duplicates() {
        let mut b = PrototypeBank::new(2);
        b.insert(9, vec![1.0, 0.0], 0).unwrap();
        b.insert(3, vec![0.0, 1.0], 1).unwrap();
        assert_eq!(b.classes(), vec![9, 3]);
        assert!(b.insert(9, vec![0.0, 0.0], 2).is_err());
        assert!(b.insert(4, vec![0.0], 2).is_err());
        b.upsert(9, vec![2.0, 2.0], 5).unwrap();
        assert_eq!(b.get(9), Some(&[2.0, 2.0][..]));
        assert_eq!(b.entries()[0].session, 0);
    }
}
