//! Two-layer multi-head graph-attention encoder and parameter-space
//! utilities (initialization, EMA blending, Adam).
//!
//! Layer 1 runs `heads` attention heads of width `hidden` and concatenates
//! them, followed by ReLU and (in training) inverted dropout. Layer 2 runs
//! the same number of heads and averages them, so embeddings have `hidden`
//! columns. Attention over the CSR entry `v -> u` uses the logit
//! `leaky_relu(a_dst . W h_u + a_src . W h_v)`, normalized over `u`'s
//! neighbor list.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{DenseMatrix, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::SparseGraph;

pub const PROJECTION: &str = "proj.w";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "defaults::hidden")]
    pub hidden_dim: usize,
    #[serde(default = "defaults::heads")]
    pub heads: usize,
    #[serde(default = "defaults::dropout")]
    pub dropout: f64,
    #[serde(default = "defaults::slope")]
    pub leaky_slope: f64,
    /// Appends a square linear head initialized to the identity.
    #[serde(default)]
    pub projection_head: bool,
}

mod defaults {
    pub fn hidden() -> usize {
        16
    }
    pub fn heads() -> usize {
        12
    }
    pub fn dropout() -> f64 {
        0.5
    }
    pub fn slope() -> f64 {
        0.2
    }
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        EncoderConfig {
            input_dim,
            hidden_dim: defaults::hidden(),
            heads: defaults::heads(),
            dropout: defaults::dropout(),
            leaky_slope: defaults::slope(),
            projection_head: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.heads == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.hidden_dim
    }

    fn layer_input(&self, layer: usize) -> usize {
        if layer == 1 {
            self.input_dim
        } else {
            self.heads * self.hidden_dim
        }
    }
}

fn head_name(layer: usize, head: usize, part: &str) -> String {
    format!("l{layer}.h{head:02}.{part}")
}

/// True for parameters that belong to the attention layers.
pub fn is_backbone_param(name: &str) -> bool {
    name != PROJECTION
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DenseMatrix {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..=bound))
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

/// Glorot-uniform weights and attention vectors, zero biases.
pub fn init_params<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<ParamStore> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for layer in 1..=2 {
        let fan_in = cfg.layer_input(layer);
        for h in 0..cfg.heads {
            store.insert(head_name(layer, h, "w"), glorot(rng, fan_in, cfg.hidden_dim))?;
            store.insert(head_name(layer, h, "a_src"), glorot(rng, cfg.hidden_dim, 1))?;
            store.insert(head_name(layer, h, "a_dst"), glorot(rng, cfg.hidden_dim, 1))?;
            store.insert(head_name(layer, h, "b"), DenseMatrix::zeros(1, cfg.hidden_dim))?;
        }
    }
    if cfg.projection_head {
        store.insert(PROJECTION, DenseMatrix::identity(cfg.output_dim()))?;
    }
    Ok(store)
}

/// Parameter handles on a tape, looked up by name.
pub struct ParamVars(indexmap::IndexMap<String, Var>);

impl ParamVars {
    pub fn register(tape: &mut Tape<'_>, params: &ParamStore) -> Self {
        ParamVars(tape.params(params).into_iter().collect())
    }

    fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Contract(format!("missing parameter {name}")))
    }
}

/// Records the encoder on `tape`. Passing a dropout stream selects training
/// mode; `None` is evaluation mode (no dropout).
pub fn forward<'g, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    x: Var,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    dropout: Option<&mut R>,
) -> Result<Var> {
    let (_, in_cols) = tape.value(x).shape();
    if in_cols != cfg.input_dim {
        return Err(Error::Contract(format!(
            "features have {in_cols} columns, encoder expects {}",
            cfg.input_dim
        )));
    }
    let heads = attention_layer(tape, x, vars, cfg, 1)?;
    let hidden = tape.concat_cols(&heads);
    let mut hidden = tape.relu(hidden);
    if let Some(rng) = dropout {
        if cfg.dropout > 0.0 {
            let (r, c) = tape.value(hidden).shape();
            let keep = 1.0 - cfg.dropout;
            let data = (0..r * c)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            hidden = tape.dropout(hidden, DenseMatrix::from_vec(r, c, data)?);
        }
    }
    let heads = attention_layer(tape, hidden, vars, cfg, 2)?;
    let mut out = tape.mean_of(&heads);
    if cfg.projection_head {
        let p = vars.get(PROJECTION)?;
        out = tape.matmul(out, p);
    }
    Ok(out)
}

fn attention_layer(
    tape: &mut Tape<'_>,
    input: Var,
    vars: &ParamVars,
    cfg: &EncoderConfig,
    layer: usize,
) -> Result<Vec<Var>> {
    let mut outs = Vec::with_capacity(cfg.heads);
    for h in 0..cfg.heads {
        let w = vars.get(&head_name(layer, h, "w"))?;
        let a_src = vars.get(&head_name(layer, h, "a_src"))?;
        let a_dst = vars.get(&head_name(layer, h, "a_dst"))?;
        let b = vars.get(&head_name(layer, h, "b"))?;
        let z = tape.matmul(input, w);
        let s_dst = tape.matmul(z, a_dst);
        let s_src = tape.matmul(z, a_src);
        let e = tape.edge_scores(s_dst, s_src);
        let e = tape.leaky_relu(e, cfg.leaky_slope);
        let alpha = tape.segment_softmax(e);
        let agg = tape.segment_weighted_sum(alpha, z);
        outs.push(tape.add_row_bias(agg, b));
    }
    Ok(outs)
}

fn check_inputs(g: &SparseGraph, x: &DenseMatrix, cfg: &EncoderConfig) -> Result<()> {
    if x.rows() != g.node_count() {
        return Err(Error::Contract(format!(
            "{} feature rows for {} nodes",
            x.rows(),
            g.node_count()
        )));
    }
    if x.cols() != cfg.input_dim {
        return Err(Error::Contract(format!(
            "features have {} columns, encoder expects {}",
            x.cols(),
            cfg.input_dim
        )));
    }
    Ok(())
}

/// Evaluation-mode embeddings (`n x hidden`), deterministic and pure.
pub fn encode(
    g: &SparseGraph,
    x: &DenseMatrix,
    params: &ParamStore,
    cfg: &EncoderConfig,
) -> Result<DenseMatrix> {
    check_inputs(g, x, cfg)?;
    let mut tape = Tape::with_graph(g);
    let xv = tape.constant(x.clone());
    let vars = ParamVars::register(&mut tape, params);
    let out = forward::<rand_chacha::ChaCha8Rng>(&mut tape, xv, &vars, cfg, None)?;
    Ok(tape.value(out).clone())
}

/// Training-mode forward pass recorded on `tape`; returns the embedding var
/// and the parameter handles.
pub fn encode_train<'g, R: Rng + ?Sized>(
    tape: &mut Tape<'g>,
    g: &SparseGraph,
    x: &DenseMatrix,
    params: &ParamStore,
    cfg: &EncoderConfig,
    rng: &mut R,
) -> Result<(Var, ParamVars)> {
    check_inputs(g, x, cfg)?;
    let xv = tape.constant(x.clone());
    let vars = ParamVars::register(tape, params);
    let out = forward(tape, xv, &vars, cfg, Some(rng))?;
    Ok((out, vars))
}

/// `beta * prev + (1 - beta) * new`, elementwise.
pub fn ema_update(prev: &ParamStore, new: &ParamStore, beta: f64) -> Result<ParamStore> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Input(format!("EMA momentum {beta} outside [0,1]")));
    }
    prev.zip_with(new, |a, b| beta * a + (1.0 - beta) * b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 0.01,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay. Moment buffers are created lazily for
/// the parameters that are actually stepped.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: OptimizerConfig,
    step: u32,
    m: ParamStore,
    v: ParamStore,
}

impl Adam {
    pub fn new(cfg: OptimizerConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            m: ParamStore::new(),
            v: ParamStore::new(),
        }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> u32 {
        self.step
    }

    /// Updates every parameter for which `trainable` holds.
    pub fn step(
        &mut self,
        params: &mut ParamStore,
        grads: &ParamStore,
        trainable: impl Fn(&str) -> bool,
    ) -> Result<()> {
        params.ensure_same_layout(grads)?;
        grads.check_finite()?;
        self.step += 1;
        let OptimizerConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.cfg;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for ((name, p), (_, g)) in params.iter_mut().zip(grads.iter()) {
            if !trainable(name) {
                continue;
            }
            if !self.m.contains(name) {
                self.m.insert(name, DenseMatrix::zeros(p.rows(), p.cols()))?;
                self.v.insert(name, DenseMatrix::zeros(p.rows(), p.cols()))?;
            }
            let m = self.m.get_mut(name).unwrap().as_mut_slice();
            let v = self.v.get_mut(name).unwrap().as_mut_slice();
            for (((w, &gi), mi), vi) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let update = (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                *w -= lr * (update + weight_decay * *w);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(input: usize) -> EncoderConfig {
        EncoderConfig {
            input_dim: input,
            hidden_dim: 3,
            heads: 2,
            dropout: 0.5,
            leaky_slope: 0.2,
            projection_head: false,
        }
    }

    fn features(rng: &mut ChaCha8Rng, n: usize, d: usize) -> DenseMatrix {
        DenseMatrix::from_vec(n, d, (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let cfg = EncoderConfig::new(8);
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let c = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert!(a.bit_identical(&b));
        assert!(!a.bit_identical(&c));
        assert_eq!(a.len(), 2 * 12 * 4);
        let w = a.get("l1.h00.w").unwrap();
        assert_eq!(w.shape(), (8, 16));
        let bound = (6.0f64 / 24.0).sqrt();
        assert!(w.as_slice().iter().all(|x| x.abs() <= bound));
        let w2 = a.get("l2.h11.w").unwrap();
        assert_eq!(w2.shape(), (192, 16));
        let bound2 = (6.0f64 / 208.0).sqrt();
        assert!(w2.as_slice().iter().all(|x| x.abs() <= bound2));
        assert!(a.get("l1.h03.b").unwrap().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_configuration_passes_features_through() {
        let cfg = EncoderConfig {
            input_dim: 3,
            hidden_dim: 3,
            heads: 1,
            dropout: 0.0,
            leaky_slope: 0.2,
            projection_head: false,
        };
        let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for layer in 1..=2 {
            params.set(&head_name(layer, 0, "w"), DenseMatrix::identity(3)).unwrap();
            params.set(&head_name(layer, 0, "a_src"), DenseMatrix::zeros(3, 1)).unwrap();
            params.set(&head_name(layer, 0, "a_dst"), DenseMatrix::zeros(3, 1)).unwrap();
        }
        let g = SparseGraph::identity(4);
        let x = DenseMatrix::from_rows(&[
            [0.1, 0.2, 0.3],
            [1.0, 0.0, 2.0],
            [0.5, 0.5, 0.5],
            [0.0, 3.0, 0.1],
        ]);
        let out = encode(&g, &x, &params, &cfg).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn encoding_is_permutation_equivariant() {
        let cfg = small_cfg(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = init_params(&cfg, &mut rng).unwrap();
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)];
        let g = SparseGraph::from_edges(&edges, 5).unwrap();
        let x = features(&mut rng, 5, 4);
        let perm = [3, 0, 4, 1, 2]; // old id -> new id
        let pedges: Vec<_> = edges.iter().map(|&(u, v)| (perm[u], perm[v])).collect();
        let pg = SparseGraph::from_edges(&pedges, 5).unwrap();
        let mut px = DenseMatrix::zeros(5, 4);
        for (u, &pu) in perm.iter().enumerate() {
            px.row_mut(pu).copy_from_slice(x.row(u));
        }
        let a = encode(&g, &x, &params, &cfg).unwrap();
        let b = encode(&pg, &px, &params, &cfg).unwrap();
        for (u, &pu) in perm.iter().enumerate() {
            for (p, q) in a.row(u).iter().zip(b.row(pu)) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn encode_rejects_shape_mismatch() {
        let cfg = small_cfg(4);
        let params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let g = SparseGraph::identity(3);
        assert!(encode(&g, &DenseMatrix::zeros(2, 4), &params, &cfg).is_err());
        assert!(encode(&g, &DenseMatrix::zeros(3, 5), &params, &cfg).is_err());
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let cfg = small_cfg(4);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = init_params(&cfg, &mut rng).unwrap();
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
        let x = features(&mut rng, 3, 4);
        let a = encode(&g, &x, &params, &cfg).unwrap();
        let b = encode(&g, &x, &params, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn mean_embedding_gradient_matches_finite_differences() {
        let cfg = small_cfg(3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let params = init_params(&cfg, &mut rng).unwrap();
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2)], 5)
            .unwrap();
        let x = features(&mut rng, 5, 3);
        // fixed dropout stream: every evaluation sees the same mask
        let loss = |p: &ParamStore| -> (f64, ParamStore) {
            let mut tape = Tape::with_graph(&g);
            let mut drop_rng = ChaCha8Rng::seed_from_u64(99);
            let (h, _) = encode_train(&mut tape, &g, &x, p, &cfg, &mut drop_rng).unwrap();
            let l = tape.mean(h);
            (tape.value(l).item(), tape.backward(l).unwrap().into_params())
        };
        let (_, grads) = loss(&params);
        let report = finite_difference_check(|p| loss(p).0, &params, &grads, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn ema_endpoints_and_linearity() {
        let cfg = small_cfg(2);
        let a = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let c = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let d = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(ema_update(&a, &b, 1.0).unwrap().bit_identical(&a));
        assert!(ema_update(&a, &b, 0.0).unwrap().bit_identical(&b));
        let beta = 0.95;
        let lhs = ema_update(&a, &b, beta)
            .unwrap()
            .zip_with(&ema_update(&c, &d, beta).unwrap(), |x, y| x + y)
            .unwrap();
        let ac = a.zip_with(&c, |x, y| x + y).unwrap();
        let bd = b.zip_with(&d, |x, y| x + y).unwrap();
        let rhs = ema_update(&ac, &bd, beta).unwrap();
        let diff = lhs.zip_with(&rhs, |x, y| (x - y).abs()).unwrap();
        assert!(diff.iter().all(|(_, t)| t.as_slice().iter().all(|&x| x < 1e-12)));
        let mut other = ParamStore::new();
        other.insert("x", DenseMatrix::zeros(1, 1)).unwrap();
        assert!(ema_update(&a, &other, 0.5).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_noop_and_descends_on_square() {
        let mut p = ParamStore::new();
        p.insert("w", DenseMatrix::scalar(1.0)).unwrap();
        let before = p.clone();
        let mut adam = Adam::new(OptimizerConfig {
            weight_decay: 0.0,
            ..Default::default()
        });
        let zeros = p.zeros_like();
        adam.step(&mut p, &zeros, |_| true).unwrap();
        assert!(p.bit_identical(&before));

        let mut adam = Adam::new(OptimizerConfig::default());
        let g = {
            let mut g = ParamStore::new();
            g.insert("w", DenseMatrix::scalar(2.0)).unwrap(); // d/dw w^2 at 1
            g
        };
        adam.step(&mut p, &g, |_| true).unwrap();
        assert!(p.get("w").unwrap().item() < 1.0);
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut p = ParamStore::new();
        p.insert("w", DenseMatrix::scalar(1.0)).unwrap();
        let mut g = p.zeros_like();
        g.get_mut("w").unwrap().as_mut_slice()[0] = f64::NAN;
        let mut adam = Adam::new(OptimizerConfig::default());
        assert!(matches!(adam.step(&mut p, &g, |_| true), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_trajectories_are_bit_identical() {
        let run = || {
            let cfg = small_cfg(3);
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let mut params = init_params(&cfg, &mut rng).unwrap();
            let g = SparseGraph::from_edges(&[(0, 1), (1, 2)], 3).unwrap();
            let x = features(&mut rng, 3, 3);
            let mut adam = Adam::new(OptimizerConfig::default());
            for _ in 0..3 {
                let mut tape = Tape::with_graph(&g);
                let (h, _) = encode_train(&mut tape, &g, &x, &params, &cfg, &mut rng).unwrap();
                let l = tape.mean(h);
                let grads = tape.backward(l).unwrap().into_params();
                adam.step(&mut params, &grads, |_| true).unwrap();
            }
            params
        };
        assert!(run().bit_identical(&run()));
    }

    #[test]
    fn projection_head_starts_as_identity() {
        let mut cfg = small_cfg(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let plain = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        cfg.projection_head = true;
        let with_head = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(!is_backbone_param(PROJECTION));
        let g = SparseGraph::from_edges(&[(0, 1)], 2).unwrap();
        let x = features(&mut rng, 2, 3);
        let mut plain_cfg = cfg.clone();
        plain_cfg.projection_head = false;
        let a = encode(&g, &x, &plain, &plain_cfg).unwrap();
        let b = encode(&g, &x, &with_head, &cfg).unwrap();
        for (p, q) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((p - q).abs() < 1e-12);
        }
    }
}
