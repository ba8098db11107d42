//! Dense-solve diffusion against an independently written truncated series.

use graphda::diffusion::{self, diffuse, diffuse_rows_series, sparsify_topk, sparsify_topk_seq, transition_matrix};
use graphda::{Graph, Matrix, Side};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    Graph::new(edges, Matrix::zeros(n, 1), vec![None; n], 1, Side::Source).unwrap()
}

fn random_graph(seed: u64) -> Graph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=50);
    let p = rng.gen_range(0.02..0.3);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    graph(n, &edges)
}

/// `α Σ_{k<terms} (1-α)^k P̃^k`, with P̃ built from the edge list directly.
fn series_oracle(g: &Graph, alpha: f64, terms: usize) -> Vec<Vec<f64>> {
    let n = g.num_nodes();
    let mut p = vec![vec![0.0; n]; n];
    let d: Vec<f64> = (0..n).map(|v| (g.degree(v) + 1) as f64).collect();
    for v in 0..n {
        p[v][v] = 1.0 / d[v];
    }
    for (u, v) in g.edges() {
        p[u][v] = 1.0 / (d[u] * d[v]).sqrt();
        p[v][u] = p[u][v];
    }
    let mut power: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let mut acc = vec![vec![0.0; n]; n];
    let mut coef = alpha;
    for _ in 0..terms {
        for i in 0..n {
            for j in 0..n {
                acc[i][j] += coef * power[i][j];
            }
        }
        let mut next = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..n {
                if power[i][k] != 0.0 {
                    for j in 0..n {
                        next[i][j] += power[i][k] * p[k][j];
                    }
                }
            }
        }
        power = next;
        coef *= 1.0 - alpha;
    }
    acc
}

fn max_diff(a: &Matrix, b: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for (i, row) in b.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            m = m.max((a.get(i, j) - x).abs());
        }
    }
    m
}

#[test]
fn dense_solve_matches_series_oracle() {
    for seed in 0..20 {
        let g = random_graph(seed);
        for alpha in [0.05, 0.1, 0.2] {
            let dense = diffuse(&transition_matrix(&g), alpha).unwrap();
            let err = max_diff(&dense, &series_oracle(&g, alpha, 200));
            // entries of P̃^k are bounded by 1, so the dropped tail is at most (1-α)^200
            let tail = (1.0 - alpha).powi(200);
            assert!(err <= tail + 1e-10, "seed {seed} α {alpha}: {err:e} vs tail {tail:e}");
            if alpha >= 0.1 {
                assert!(err <= 1e-8, "seed {seed} α {alpha}: {err:e}");
            }
            let n = g.num_nodes();
            for i in 0..n {
                for j in 0..n {
                    assert!((dense.get(i, j) - dense.get(j, i)).abs() <= 1e-10);
                    assert!(dense.get(i, j) >= 0.0);
                }
            }
        }
    }
}

#[test]
fn dense_solve_matches_converged_series_at_small_alpha() {
    for seed in 0..5 {
        let g = random_graph(100 + seed);
        let dense = diffuse(&transition_matrix(&g), 0.05).unwrap();
        let err = max_diff(&dense, &series_oracle(&g, 0.05, 600));
        assert!(err <= 1e-8, "seed {seed}: {err:e}");
    }
}

#[test]
fn two_node_closed_form() {
    let g = graph(2, &[(0, 1)]);
    let d = diffuse(&transition_matrix(&g), 0.1).unwrap();
    let expected = [[0.55, 0.45], [0.45, 0.55]];
    for (i, row) in expected.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            assert!((d.get(i, j) - x).abs() <= 1e-12);
        }
    }
}

#[test]
fn isolated_nodes_keep_all_mass_on_themselves() {
    let g = graph(3, &[]);
    let d = diffuse(&transition_matrix(&g), 0.3).unwrap();
    assert!(d.max_abs_diff(&Matrix::identity(3)) <= 1e-12);
}

#[test]
fn row_series_agrees_with_dense_path() {
    for seed in 0..5 {
        let g = random_graph(200 + seed);
        let a = diffusion::compute(&g, 0.15, 6).unwrap();
        let b = diffuse_rows_series(&g, 0.15, 6, 1e-13).unwrap();
        for v in 0..g.num_nodes() {
            let (ra, rb) = (a.row(v), b.row(v));
            assert_eq!(ra.iter().map(|e| e.0).collect::<Vec<_>>(), rb.iter().map(|e| e.0).collect::<Vec<_>>());
            for (x, y) in ra.iter().zip(rb) {
                assert!((x.1 - y.1).abs() <= 1e-10);
            }
        }
    }
}

#[test]
fn bad_alpha_is_rejected() {
    let t = transition_matrix(&graph(2, &[(0, 1)]));
    for alpha in [0.0, 1.0, -0.1, f64::NAN] {
        assert!(diffuse(&t, alpha).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn topk_keeps_the_largest_entries(seed in 0u64..10_000, s in 1usize..8) {
        let g = random_graph(seed);
        let dense = diffuse(&transition_matrix(&g), 0.1).unwrap();
        let sparse = sparsify_topk(&dense, 0.1, s).unwrap();
        prop_assert_eq!(&sparse, &sparsify_topk_seq(&dense, 0.1, s).unwrap());
        for v in 0..g.num_nodes() {
            let row = sparse.row(v);
            let positive = dense.row(v).iter().filter(|&&w| w > 0.0).count();
            prop_assert_eq!(row.len(), s.min(positive));
            prop_assert!(row.windows(2).all(|w| w[0].0 < w[1].0));
            let kept_min = row.iter().map(|e| e.1).fold(f64::INFINITY, f64::min);
            for (u, &w) in dense.row(v).iter().enumerate() {
                match row.iter().find(|e| e.0 == u) {
                    Some(e) => prop_assert_eq!(e.1, w),
                    None => prop_assert!(w <= kept_min + diffusion::TIE_TOLERANCE),
                }
            }
        }
    }

    #[test]
    fn dense_diffusion_is_bounded(seed in 0u64..10_000) {
        // eigenvalues of P̃ lie in (-1, 1], so those of the diffusion lie in (0, 1]
        let g = random_graph(seed);
        let dense = diffuse(&transition_matrix(&g), 0.2).unwrap();
        let trace: f64 = (0..g.num_nodes()).map(|i| dense.get(i, i)).sum();
        prop_assert!(trace <= g.num_nodes() as f64 + 1e-9);
        prop_assert!(dense.as_slice().iter().all(|&x| (0.0..=1.0 + 1e-12).contains(&x)));
    }
}
