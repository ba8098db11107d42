//! Paired source/target stochastic-block-model graphs with controllable
//! domain shift.
//!
//! Each domain is an SBM with the same class set. Attributes are
//! `max(0, strength · prototype(class) + noise)` with noise uniform in
//! `[-1, 1)`. The shift acts two ways at once:
//!
//! * distribution shift: on shared columns the target prototype is
//!   `(1 - shift) · source + shift · fresh`;
//! * vocabulary shift: `round(shift · U / 2)` columns on each side are
//!   private to that domain, carrying their own class prototypes.
//!
//! Label noise flips recorded source labels to a uniformly chosen other
//! class; target labels stay clean because they serve as ground truth.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{align_attributes, AttributeVocabulary, Graph, Side};
use crate::matrix::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SbmSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub intra_prob: f64,
    pub inter_prob: f64,
    pub attr_dim: usize,
    pub prototype_strength: f64,
    pub domain_shift: f64,
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        Self {
            num_nodes: 600,
            num_classes: 3,
            intra_prob: 0.02,
            inter_prob: 0.004,
            attr_dim: 64,
            prototype_strength: 0.6,
            domain_shift: 0.4,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SbmSpec {
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if (0.0..=1.0).contains(&x) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {x} is outside [0, 1]")))
            }
        };
        unit("intra_prob", self.intra_prob)?;
        unit("inter_prob", self.inter_prob)?;
        unit("domain_shift", self.domain_shift)?;
        unit("label_noise", self.label_noise)?;
        if self.intra_prob < self.inter_prob {
            return Err(Error::invalid(format!(
                "intra_prob {} < inter_prob {}: generator is homophilous by construction",
                self.intra_prob, self.inter_prob
            )));
        }
        if self.num_classes == 0 || self.num_nodes < self.num_classes {
            return Err(Error::invalid(format!(
                "need 1 <= C <= N, got C = {}, N = {}",
                self.num_classes, self.num_nodes
            )));
        }
        if self.attr_dim == 0 {
            return Err(Error::invalid("attr_dim must be >= 1"));
        }
        if !(self.prototype_strength >= 0.0) || !self.prototype_strength.is_finite() {
            return Err(Error::invalid("prototype_strength must be a finite value >= 0"));
        }
        Ok(())
    }

    /// Columns private to each domain.
    pub fn private_columns(&self) -> usize {
        ((self.domain_shift * self.attr_dim as f64 / 2.0).round() as usize).min(self.attr_dim)
    }
}

/// Class of every node: balanced assignment in shuffled order.
fn assign_classes(n: usize, c: usize, rng: &mut impl Rng) -> Vec<usize> {
    let mut classes: Vec<usize> = (0..n).map(|v| v % c).collect();
    classes.shuffle(rng);
    classes
}

fn sbm_edges(classes: &[usize], intra: f64, inter: f64, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let n = classes.len();
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let p = if classes[u] == classes[v] { intra } else { inter };
            if rng.gen::<f64>() < p {
                edges.push((u, v));
            }
        }
    }
    edges
}

fn random_prototypes(c: usize, dim: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    (0..c).map(|_| (0..dim).map(|_| rng.gen::<f64>()).collect()).collect()
}

/// Attributes in union space: `cols[j]` is the union column of prototype entry `j`.
fn attributes(
    classes: &[usize],
    prototypes: &[Vec<f64>],
    cols: &[usize],
    union_dim: usize,
    strength: f64,
    rng: &mut impl Rng,
) -> Matrix {
    let mut x = Matrix::zeros(classes.len(), union_dim);
    for (v, &c) in classes.iter().enumerate() {
        let row = x.row_mut(v);
        for (&p, &col) in prototypes[c].iter().zip(cols) {
            row[col] = (strength * p + rng.gen_range(-1.0..1.0)).max(0.0);
        }
    }
    x
}

/// Generates a (source, target, vocabulary) triple. The source is fully
/// labeled; the target carries ground-truth labels but no labeled set.
pub fn generate_pair(spec: &SbmSpec) -> Result<(Graph, Graph, AttributeVocabulary)> {
    spec.validate()?;
    let (n, c, u) = (spec.num_nodes, spec.num_classes, spec.attr_dim);
    let k = spec.private_columns();
    let shared = u - k;
    let source_tokens: Vec<String> = (0..shared)
        .map(|i| format!("a{i}"))
        .chain((0..k).map(|i| format!("s{i}")))
        .collect();
    let target_tokens: Vec<String> = (0..shared)
        .map(|i| format!("a{i}"))
        .chain((0..k).map(|i| format!("t{i}")))
        .collect();
    let vocab = align_attributes(&source_tokens, &target_tokens)?;

    let mut proto_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    proto_rng.set_stream(0);
    let source_proto = random_prototypes(c, u, &mut proto_rng);
    let fresh = random_prototypes(c, u, &mut proto_rng);
    let target_proto: Vec<Vec<f64>> = (0..c)
        .map(|cl| {
            (0..u)
                .map(|j| {
                    if j < shared {
                        (1.0 - spec.domain_shift) * source_proto[cl][j]
                            + spec.domain_shift * fresh[cl][j]
                    } else {
                        fresh[cl][j]
                    }
                })
                .collect()
        })
        .collect();

    let build = |side: Side, stream: u64, proto: &[Vec<f64>]| -> Result<Graph> {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(stream);
        let classes = assign_classes(n, c, &mut rng);
        let edges = sbm_edges(&classes, spec.intra_prob, spec.inter_prob, &mut rng);
        let x = attributes(
            &classes,
            proto,
            vocab.index_map(side),
            vocab.union_size(),
            spec.prototype_strength,
            &mut rng,
        );
        let labels: Vec<Option<usize>> = classes
            .iter()
            .map(|&cl| {
                let noisy = side == Side::Source && c > 1 && rng.gen::<f64>() < spec.label_noise;
                Some(if noisy {
                    (cl + rng.gen_range(1..c)) % c
                } else {
                    cl
                })
            })
            .collect();
        Graph::new(&edges, x, labels, c, side)
    };
    let source = build(Side::Source, 1, &source_proto)?;
    let target = build(Side::Target, 2, &target_proto)?;
    Ok((source, target, vocab))
}
