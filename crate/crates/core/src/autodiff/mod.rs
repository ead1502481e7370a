//! Minimal reverse-mode differentiation over dense matrices, covering the
//! primitives the attention encoder and the margin loss are built from,
//! plus a central-difference gradient oracle.

mod check;
mod matrix;
mod params;
mod tape;

pub use check::{finite_difference_check, FdReport};
pub use matrix::DenseMatrix;
pub use params::ParamStore;
pub use tape::{segment_softmax_values, Gradients, Tape, Var};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseGraph;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    /// Builds `build(tape, params)`, reduces it with a fixed random weighting
    /// and compares backward against central differences.
    fn fd_error<F>(graph: Option<&SparseGraph>, store: &ParamStore, seed: u64, build: F) -> f64
    where
        F: for<'a> Fn(&mut Tape<'a>, &[Var]) -> Var,
    {
        let eval = |s: &ParamStore| -> (f64, ParamStore) {
            let mut tape = match graph {
                Some(g) => Tape::with_graph(g),
                None => Tape::new(),
            };
            let vars: Vec<Var> = tape.params(s).into_iter().map(|(_, v)| v).collect();
            let out = build(&mut tape, &vars);
            let shape = tape.value(out).shape();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let weights = random(&mut rng, shape.0, shape.1);
            let weighted = tape.dropout(out, weights);
            let loss = tape.sum(weighted);
            let value = tape.value(loss).item();
            (value, tape.backward(loss).unwrap().into_params())
        };
        let (_, grads) = eval(store);
        let report = finite_difference_check(|s| eval(s).0, store, &grads, 1e-5).unwrap();
        report.max_rel_error
    }

    fn store(entries: Vec<(&str, DenseMatrix)>) -> ParamStore {
        let mut s = ParamStore::new();
        for (k, v) in entries {
            s.insert(k, v).unwrap();
        }
        s
    }

    fn star() -> SparseGraph {
        SparseGraph::from_edges(&[(0, 1), (0, 2)], 3).unwrap()
    }

    #[test]
    fn square_gradient() {
        let mut tape = Tape::new();
        let x = tape.param("x", DenseMatrix::scalar(3.0));
        let y = tape.matmul(x, x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.params().get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn relu_sum_gradient() {
        let mut tape = Tape::new();
        let w = tape.param("w", DenseMatrix::from_rows(&[[-1.0, 2.0]]));
        let r = tape.relu(w);
        let s = tape.sum(r);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.params().get("w").unwrap(), &DenseMatrix::from_rows(&[[0.0, 1.0]]));
    }

    #[test]
    fn unreachable_params_get_zero() {
        let mut tape = Tape::new();
        let a = tape.param("a", DenseMatrix::scalar(2.0));
        let _b = tape.param("b", DenseMatrix::from_rows(&[[1.0, 1.0]]));
        let l = tape.scale(a, 3.0);
        let g = tape.backward(l).unwrap();
        assert_eq!(g.params().get("b").unwrap(), &DenseMatrix::zeros(1, 2));
        assert_eq!(g.params().get("a").unwrap().item(), 3.0);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.param("a", DenseMatrix::zeros(2, 2));
        assert!(matches!(tape.backward(a), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn fd_linear_and_exp() {
        let s = store(vec![("x", DenseMatrix::from_rows(&[[0.3, -0.2, 1.5]]))]);
        let grads = store(vec![("x", DenseMatrix::from_rows(&[[2.0, 2.0, 2.0]]))]);
        let r = finite_difference_check(|p| 2.0 * p.get("x").unwrap().sum(), &s, &grads, 1e-5)
            .unwrap();
        assert!(r.max_rel_error <= 1e-9, "{r:?}");

        let s = store(vec![("x", DenseMatrix::scalar(0.0))]);
        let one = store(vec![("x", DenseMatrix::scalar(1.0))]);
        let r = finite_difference_check(|p| p.get("x").unwrap().item().exp(), &s, &one, 1e-5)
            .unwrap();
        assert!(r.max_rel_error <= 1e-8, "{r:?}");
    }

    #[test]
    fn fd_reports_non_finite_coordinate() {
        let s = store(vec![("x", DenseMatrix::from_rows(&[[1.0, 0.0]]))]);
        let g = s.zeros_like();
        let err = finite_difference_check(
            |p| p.get("x").unwrap().as_slice()[1].sqrt(),
            &s,
            &g,
            1e-5,
        )
        .unwrap_err();
        assert!(err.to_string().contains("x[1]"), "{err}");
    }

    #[test]
    fn segment_softmax_examples() {
        let g = SparseGraph::identity(1);
        let w = segment_softmax_values(&g, &DenseMatrix::scalar(4.2));
        assert_eq!(w.item(), 1.0);

        // node 0 of the star has neighbors {0,1,2}
        let g = star();
        let logits = DenseMatrix::from_vec(g.entry_count(), 1, vec![0.7; g.entry_count()]).unwrap();
        let w = segment_softmax_values(&g, &logits);
        for k in 0..3 {
            assert!((w.as_slice()[k] - 1.0 / 3.0).abs() < 1e-15);
        }

        let g = SparseGraph::from_edges(&[(0, 1)], 2).unwrap();
        let logits = DenseMatrix::from_vec(4, 1, vec![0.0, 3f64.ln(), 0.0, 0.0]).unwrap();
        let w = segment_softmax_values(&g, &logits);
        assert!((w.as_slice()[0] - 0.25).abs() < 1e-15);
        assert!((w.as_slice()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn segment_softmax_gradient_on_star() {
        let g = star();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = store(vec![("e", random(&mut rng, g.entry_count(), 1))]);
        let err = fd_error(Some(&g), &s, 9, |t, v| t.segment_softmax(v[0]));
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        let g = SparseGraph::from_edges(&[(0, 1), (1, 2), (2, 3), (3, 0), (0, 2)], 5).unwrap();
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = rng.random_range(1..5);
            let k = rng.random_range(1..4);
            let cols = rng.random_range(1..4);
            let a = random(&mut rng, rows, k);
            let b = random(&mut rng, k, cols);
            let c = random(&mut rng, rows, k);
            let bias = random(&mut rng, 1, k);
            let pos = a.map(|x| x.abs() + 0.5);
            let mask = random(&mut rng, rows, k).map(|x| if x > 0.0 { 2.0 } else { 0.0 });
            let targets: Vec<usize> = (0..rows).map(|_| rng.random_range(0..k)).collect();
            let idx: Vec<usize> = (0..3).map(|_| rng.random_range(0..rows)).collect();

            let ab = store(vec![("a", a.clone()), ("b", b.clone())]);
            let ac = store(vec![("a", a.clone()), ("c", c.clone())]);
            let one = store(vec![("a", a.clone())]);
            let checks: Vec<(&str, f64)> = vec![
                ("matmul", fd_error(None, &ab, seed, |t, v| t.matmul(v[0], v[1]))),
                (
                    "bias",
                    fd_error(None, &store(vec![("a", a.clone()), ("b", bias.clone())]), seed, |t, v| {
                        t.add_row_bias(v[0], v[1])
                    }),
                ),
                ("add", fd_error(None, &ac, seed, |t, v| t.add(v[0], v[1]))),
                ("sub", fd_error(None, &ac, seed, |t, v| t.sub(v[0], v[1]))),
                ("scale", fd_error(None, &one, seed, |t, v| t.scale(v[0], -1.7))),
                ("leaky", fd_error(None, &one, seed, |t, v| t.leaky_relu(v[0], 0.2))),
                ("relu", fd_error(None, &one, seed, |t, v| t.relu(v[0]))),
                ("exp", fd_error(None, &one, seed, |t, v| t.exp(v[0]))),
                (
                    "log",
                    fd_error(None, &store(vec![("a", pos.clone())]), seed, |t, v| t.log(v[0])),
                ),
                ("normalize", fd_error(None, &one, seed, |t, v| t.row_l2_normalize(v[0]))),
                ("concat", fd_error(None, &ac, seed, |t, v| t.concat_cols(&[v[0], v[1], v[0]]))),
                ("mean_of", fd_error(None, &ac, seed, |t, v| t.mean_of(&[v[0], v[1]]))),
                ("dropout", {
                    let m = mask.clone();
                    fd_error(None, &one, seed, move |t, v| t.dropout(v[0], m.clone()))
                }),
                ("select", {
                    let i = idx.clone();
                    fd_error(None, &one, seed, move |t, v| t.select_rows(v[0], &i))
                }),
                ("cross_entropy", {
                    let tg = targets.clone();
                    fd_error(None, &one, seed, move |t, v| t.cross_entropy(v[0], &tg))
                }),
                ("mean", fd_error(None, &one, seed, |t, v| t.mean(v[0]))),
            ];
            for (name, err) in checks {
                assert!(err <= 1e-4, "{name} seed {seed}: {err}");
            }

            let n = g.node_count();
            let gs = store(vec![
                ("d", random(&mut rng, n, 1)),
                ("s", random(&mut rng, n, 1)),
                ("h", random(&mut rng, n, cols)),
            ]);
            let err = fd_error(Some(&g), &gs, seed, |t, v| {
                let e = t.edge_scores(v[0], v[1]);
                let e = t.leaky_relu(e, 0.2);
                let alpha = t.segment_softmax(e);
                t.segment_weighted_sum(alpha, v[2])
            });
            assert!(err <= 1e-4, "graph attention chain seed {seed}: {err}");
        }
    }

    #[test]
    fn backward_is_bit_reproducible() {
        let g = star();
        let run = || {
            let mut tape = Tape::with_graph(&g);
            let h = tape.param("h", DenseMatrix::from_rows(&[[0.1, 0.2], [0.3, -0.4], [0.5, 0.9]]));
            let e = tape.param("e", DenseMatrix::from_rows(&[[0.1], [0.2], [0.3], [0.4], [0.5], [0.6], [0.7]]));
            let a = tape.segment_softmax(e);
            let o = tape.segment_weighted_sum(a, h);
            let n = tape.row_l2_normalize(o);
            let l = tape.cross_entropy(n, &[0, 1, 1]);
            tape.backward(l).unwrap().into_params()
        };
        assert!(run().bit_identical(&run()));
    }
}
