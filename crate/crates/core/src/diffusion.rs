//! Personalized-PageRank diffusion (the global view) and its top-`s`
//! sparsification.
//!
//! The dense path solves `α [I − (1−α) P̃]⁻¹` with a Cholesky factorization
//! (the system matrix is symmetric positive definite for `α ∈ (0,1)`). For
//! graphs too large for a dense solve, [`diffuse_rows_series`] evaluates the
//! Neumann series one row at a time over the sparse adjacency and sparsifies
//! each row on the fly.
//!
//! Retained weights are not renormalized after truncation, so row sums may
//! fall below 1; [`DiffusionMatrix::renormalized`] is available for
//! sensitivity checks.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::matrix::Matrix;
use crate::par;

/// Graphs up to this many nodes use the dense solve by default.
pub const DENSE_SOLVE_LIMIT: usize = 5000;

/// Sparsified diffusion matrix: for each node, up to `s` `(neighbor, weight)`
/// pairs sorted by neighbor id.
#[derive(Clone, Debug, PartialEq)]
pub struct DiffusionMatrix {
    alpha: f64,
    s: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl DiffusionMatrix {
    pub fn from_rows(alpha: f64, s: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let n = rows.len();
        for (v, row) in rows.iter().enumerate() {
            if row.len() > s {
                return Err(Error::invalid(format!("row {v} has {} > s entries", row.len())));
            }
            if let Some(&(u, w)) = row.iter().find(|&&(u, w)| u >= n || !(w >= 0.0)) {
                return Err(Error::invalid(format!("row {v}: bad entry ({u}, {w})")));
            }
        }
        Ok(Self { alpha, s, rows })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn num_nodes(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, v: usize) -> &[(usize, f64)] {
        &self.rows[v]
    }

    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    /// Copy with each row scaled to sum to one (empty rows stay empty).
    pub fn renormalized(&self) -> Self {
        let rows = self
            .rows
            .iter()
            .map(|r| {
                let z: f64 = r.iter().map(|e| e.1).sum();
                if z > 0.0 {
                    r.iter().map(|&(u, w)| (u, w / z)).collect()
                } else {
                    r.clone()
                }
            })
            .collect();
        Self {
            alpha: self.alpha,
            s: self.s,
            rows,
        }
    }

    /// Writes the cache format: a header line
    /// `# diffusion alpha=<α> topk=<s> nodes=<N>` then `v u p_vu` lines.
    /// Floats use shortest round-trip formatting, so reading back is bit-exact.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        writeln!(
            out,
            "# diffusion alpha={} topk={} nodes={}",
            self.alpha,
            self.s,
            self.rows.len()
        )
        .unwrap();
        for (v, row) in self.rows.iter().enumerate() {
            for &(u, w) in row {
                writeln!(out, "{v} {u} {w}").unwrap();
            }
        }
        fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let err = |line: usize, msg: String| Error::Load {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| err(1, "empty cache file".into()))?;
        let mut alpha = None;
        let mut s = None;
        let mut n = None;
        for kv in header
            .strip_prefix("# diffusion")
            .ok_or_else(|| err(1, "missing diffusion header".into()))?
            .split_whitespace()
        {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| err(1, format!("bad header field {kv:?}")))?;
            let bad = |_| err(1, format!("bad header value {kv:?}"));
            match k {
                "alpha" => alpha = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
                "topk" => s = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                "nodes" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
                _ => return Err(err(1, format!("unknown header field {k:?}"))),
            }
        }
        let (alpha, s, n) = match (alpha, s, n) {
            (Some(a), Some(s), Some(n)) => (a, s, n),
            _ => return Err(err(1, "header needs alpha, topk and nodes".into())),
        };
        let mut rows = vec![Vec::new(); n];
        for (i, line) in lines {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = t.split_whitespace().collect();
            if f.len() != 3 {
                return Err(err(i + 1, format!("expected 3 fields, found {}", f.len())));
            }
            let v: usize = f[0].parse().map_err(|_| err(i + 1, format!("bad node id {:?}", f[0])))?;
            let u: usize = f[1].parse().map_err(|_| err(i + 1, format!("bad node id {:?}", f[1])))?;
            let w: f64 = f[2].parse().map_err(|_| err(i + 1, format!("bad weight {:?}", f[2])))?;
            if v >= n || u >= n {
                return Err(err(i + 1, format!("node id out of range (N = {n})")));
            }
            rows[v].push((u, w));
        }
        Self::from_rows(alpha, s, rows)
    }
}

/// `(D + I)^{-1/2} (A + I) (D + I)^{-1/2}` as a dense matrix.
pub fn transition_matrix(graph: &Graph) -> Matrix {
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut p = Matrix::zeros(n, n);
    for v in 0..n {
        p.set(v, v, inv_sqrt[v] * inv_sqrt[v]);
        for &u in graph.neighbors(v) {
            p.set(v, u, inv_sqrt[v] * inv_sqrt[u]);
        }
    }
    p
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("teleport probability {alpha} outside (0, 1)")))
    }
}

/// Dense diffusion `α [I − (1−α) P̃]⁻¹`.
pub fn diffuse(transition: &Matrix, alpha: f64) -> Result<Matrix> {
    check_alpha(alpha)?;
    let n = transition.rows();
    if transition.cols() != n {
        return Err(Error::shape("diffuse", format!("{:?} is not square", transition.shape())));
    }
    let system = DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - (1.0 - alpha) * transition.get(i, j)
    });
    let rhs = DMatrix::from_diagonal_element(n, n, alpha);
    let solved = match system.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => system
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("I - (1-α)P̃ with α = {alpha}")))?,
    };
    let mut out = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            // symmetrize away factorization round-off
            out.set(i, j, 0.5 * (solved[(i, j)] + solved[(j, i)]));
        }
    }
    Ok(out)
}

/// Number of series terms after which the geometric tail `(1-α)^k` drops below `tol`.
pub fn series_terms(alpha: f64, tol: f64) -> usize {
    ((tol.ln() / (1.0 - alpha).ln()).ceil() as usize).max(1)
}

/// Keeps the `s` largest positive entries of one row; ties go to the lower id.
/// The result is sorted by id.
/// Weights closer than this rank as ties, so solver round-off cannot flip
/// the order of entries that are equal in exact arithmetic.
pub const TIE_TOLERANCE: f64 = 1e-12;

fn top_s(row: impl Iterator<Item = (usize, f64)>, s: usize) -> Vec<(usize, f64)> {
    let mut entries: Vec<(usize, f64)> = row.filter(|&(_, w)| w > 0.0).collect();
    let rank = |w: f64| (w / TIE_TOLERANCE).round() as i64;
    entries.sort_by(|a, b| rank(b.1).cmp(&rank(a.1)).then(a.0.cmp(&b.0)));
    entries.truncate(s);
    entries.sort_by_key(|e| e.0);
    entries
}

/// Keeps each row's `s` largest entries (ties broken by lower node id).
/// Retained weights are unmodified. Rows are processed in parallel.
pub fn sparsify_topk(dense: &Matrix, alpha: f64, s: usize) -> Result<DiffusionMatrix> {
    check_s(s)?;
    let rows = par::map_indices(dense.rows(), |v| {
        top_s(dense.row(v).iter().copied().enumerate(), s)
    });
    DiffusionMatrix::from_rows(alpha, s, rows)
}

/// Single-threaded [`sparsify_topk`].
pub fn sparsify_topk_seq(dense: &Matrix, alpha: f64, s: usize) -> Result<DiffusionMatrix> {
    check_s(s)?;
    let rows = par::seq::map_indices(dense.rows(), |v| {
        top_s(dense.row(v).iter().copied().enumerate(), s)
    });
    DiffusionMatrix::from_rows(alpha, s, rows)
}

fn check_s(s: usize) -> Result<()> {
    if s == 0 {
        Err(Error::invalid("top-s sparsification needs s >= 1"))
    } else {
        Ok(())
    }
}

/// Row-at-a-time Neumann series `α Σ_k (1-α)^k P̃^k`, truncated once the tail
/// falls below `tol`, with each row sparsified to its top `s` entries.
/// Memory is `O(N)` per worker, so this handles graphs beyond the dense limit.
pub fn diffuse_rows_series(graph: &Graph, alpha: f64, s: usize, tol: f64) -> Result<DiffusionMatrix> {
    check_alpha(alpha)?;
    check_s(s)?;
    let n = graph.num_nodes();
    let terms = series_terms(alpha, tol);
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
        .collect();
    let rows = par::map_indices(n, |v| {
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        let mut acc = vec![0.0; n];
        x[v] = 1.0;
        let mut coef = alpha;
        for _ in 0..terms {
            for (a, &xi) in acc.iter_mut().zip(&x) {
                *a += coef * xi;
            }
            // next = P̃ x; P̃ is symmetric so rows and columns coincide
            for u in 0..n {
                let xu = x[u];
                if xu == 0.0 {
                    continue;
                }
                next[u] += inv_sqrt[u] * inv_sqrt[u] * xu;
                for &w in graph.neighbors(u) {
                    next[w] += inv_sqrt[u] * inv_sqrt[w] * xu;
                }
            }
            std::mem::swap(&mut x, &mut next);
            next.iter_mut().for_each(|e| *e = 0.0);
            coef *= 1.0 - alpha;
        }
        top_s(acc.into_iter().enumerate(), s)
    });
    DiffusionMatrix::from_rows(alpha, s, rows)
}

/// Diffusion for a graph: dense solve up to [`DENSE_SOLVE_LIMIT`] nodes,
/// row-wise series beyond.
pub fn compute(graph: &Graph, alpha: f64, s: usize) -> Result<DiffusionMatrix> {
    if graph.num_nodes() <= DENSE_SOLVE_LIMIT {
        let dense = diffuse(&transition_matrix(graph), alpha)?;
        sparsify_topk(&dense, alpha, s)
    } else {
        diffuse_rows_series(graph, alpha, s, 1e-10)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Side;
    use approx::assert_abs_diff_eq;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(edges, Matrix::zeros(n, 1), vec![None; n], 1, Side::Source).unwrap()
    }

    #[test]
    fn transition_small_cases() {
        assert_eq!(transition_matrix(&graph(1, &[])).as_slice(), &[1.0]);
        assert_eq!(transition_matrix(&graph(3, &[])), Matrix::identity(3));
        // D + I = diag(2, 2), A + I = ones: every entry 1/2
        let p = transition_matrix(&graph(2, &[(0, 1)]));
        for x in p.as_slice() {
            assert_abs_diff_eq!(*x, 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn identity_transition_diffuses_to_identity() {
        for alpha in [0.05, 0.1, 0.5, 0.9] {
            let p = diffuse(&Matrix::identity(4), alpha).unwrap();
            assert!(p.max_abs_diff(&Matrix::identity(4)) < 1e-14);
        }
    }

    #[test]
    fn two_node_closed_form() {
        // P̃ = ½·J; I − 0.9·P̃ = [[0.55, −0.45], [−0.45, 0.55]] with det 0.1,
        // inverse = 10·[[0.55, 0.45], [0.45, 0.55]]; times α = 0.1.
        let p = diffuse(&transition_matrix(&graph(2, &[(0, 1)])), 0.1).unwrap();
        let want = [0.55, 0.45, 0.45, 0.55];
        for (a, b) in p.as_slice().iter().zip(want) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn bad_alpha_rejected() {
        assert!(diffuse(&Matrix::identity(2), 0.0).is_err());
        assert!(diffuse(&Matrix::identity(2), 1.0).is_err());
    }

    #[test]
    fn topk_order_statistics_and_ties() {
        let m = Matrix::from_rows(&[vec![0.2, 0.3, 0.5], vec![0.5, 0.3, 0.2], vec![0.0, 1.0, 0.0]]).unwrap();
        let d = sparsify_topk(&m, 0.1, 2).unwrap();
        assert_eq!(d.row(0), &[(1, 0.3), (2, 0.5)]);
        assert_eq!(d.row(1), &[(0, 0.5), (1, 0.3)]);
        // zeros are never kept
        assert_eq!(d.row(2), &[(1, 1.0)]);
        let m = Matrix::filled(4, 4, 0.25);
        let d = sparsify_topk(&m, 0.1, 2).unwrap();
        assert_eq!(d.row(0), &[(0, 0.25), (1, 0.25)]);
        let d = sparsify_topk(&m, 0.1, 10).unwrap();
        assert_eq!(d.row(0).len(), 4);
        assert!(sparsify_topk(&m, 0.1, 0).is_err());
    }

    #[test]
    fn row_series_matches_dense_path() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 4)]);
        let dense = sparsify_topk(&diffuse(&transition_matrix(&g), 0.15).unwrap(), 0.15, 3).unwrap();
        let series = diffuse_rows_series(&g, 0.15, 3, 1e-14).unwrap();
        for v in 0..6 {
            let (a, b) = (dense.row(v), series.row(v));
            assert_eq!(a.iter().map(|e| e.0).collect::<Vec<_>>(), b.iter().map(|e| e.0).collect::<Vec<_>>());
            for (x, y) in a.iter().zip(b) {
                assert_abs_diff_eq!(x.1, y.1, epsilon = 1e-12);
            }
        }
        // isolated node 5 keeps only itself with weight 1
        assert_eq!(series.row(5).len(), 1);
        assert_abs_diff_eq!(series.row(5)[0].1, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn renormalized_rows_sum_to_one() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]);
        let d = compute(&g, 0.1, 2).unwrap().renormalized();
        for r in d.rows() {
            assert_abs_diff_eq!(r.iter().map(|e| e.1).sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
