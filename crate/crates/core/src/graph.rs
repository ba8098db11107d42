//! Attributed graphs, shared attribute vocabularies, and their text formats.
//!
//! File formats (all whitespace-delimited, `#` starts a comment line):
//!
//! * edges: `u v` per line, 0-based node ids, undirected
//! * attributes: `node_id token value`; absent entries are 0
//! * labels: `node_id class_id`; absent nodes are unlabeled
//!
//! Attribute values may be any nonnegative real; binary is the expected case.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Source,
    Target,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Source => "source",
            Side::Target => "target",
        }
    }
}

/// Union of the source and target attribute token sets, with column maps
/// from each side's original columns into the union.
#[derive(Clone, Debug, PartialEq)]
pub struct AttributeVocabulary {
    source_names: Vec<String>,
    target_names: Vec<String>,
    union_names: Vec<String>,
    source_index_map: Vec<usize>,
    target_index_map: Vec<usize>,
    source_lookup: HashMap<String, usize>,
    target_lookup: HashMap<String, usize>,
}

/// Builds the union vocabulary: source tokens in order, then target tokens
/// not seen in the source, in order.
pub fn align_attributes(source: &[String], target: &[String]) -> Result<AttributeVocabulary> {
    check_unique(source, "source")?;
    check_unique(target, "target")?;
    let mut union_names = source.to_vec();
    let mut union_pos: HashMap<&str, usize> = source
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    let mut target_index_map = Vec::with_capacity(target.len());
    for t in target {
        let col = match union_pos.get(t.as_str()) {
            Some(&c) => c,
            None => {
                union_names.push(t.clone());
                union_pos.insert(t.as_str(), union_names.len() - 1);
                union_names.len() - 1
            }
        };
        target_index_map.push(col);
    }
    let lookup = |names: &[String], map: &[usize]| -> HashMap<String, usize> {
        names.iter().cloned().zip(map.iter().copied()).collect()
    };
    let source_index_map: Vec<usize> = (0..source.len()).collect();
    Ok(AttributeVocabulary {
        source_lookup: lookup(source, &source_index_map),
        target_lookup: lookup(target, &target_index_map),
        source_names: source.to_vec(),
        target_names: target.to_vec(),
        union_names,
        source_index_map,
        target_index_map,
    })
}

fn check_unique(tokens: &[String], which: &str) -> Result<()> {
    let mut seen = HashSet::with_capacity(tokens.len());
    for t in tokens {
        if !seen.insert(t.as_str()) {
            return Err(Error::invalid(format!(
                "duplicate token {t:?} in {which} vocabulary"
            )));
        }
    }
    Ok(())
}

/// Fraction of the union vocabulary present in both graphs.
pub fn common_attribute_rate(vocab: &AttributeVocabulary) -> f64 {
    if vocab.union_names.is_empty() {
        return 0.0;
    }
    let shared = vocab
        .target_names
        .iter()
        .filter(|t| vocab.source_lookup.contains_key(*t))
        .count();
    shared as f64 / vocab.union_names.len() as f64
}

impl AttributeVocabulary {
    pub fn source_names(&self) -> &[String] {
        &self.source_names
    }

    pub fn target_names(&self) -> &[String] {
        &self.target_names
    }

    pub fn union_names(&self) -> &[String] {
        &self.union_names
    }

    pub fn union_size(&self) -> usize {
        self.union_names.len()
    }

    pub fn source_index_map(&self) -> &[usize] {
        &self.source_index_map
    }

    pub fn target_index_map(&self) -> &[usize] {
        &self.target_index_map
    }

    pub fn names(&self, side: Side) -> &[String] {
        match side {
            Side::Source => &self.source_names,
            Side::Target => &self.target_names,
        }
    }

    pub fn index_map(&self, side: Side) -> &[usize] {
        match side {
            Side::Source => &self.source_index_map,
            Side::Target => &self.target_index_map,
        }
    }

    /// Union column of a side's token.
    pub fn column(&self, side: Side, token: &str) -> Option<usize> {
        match side {
            Side::Source => self.source_lookup.get(token).copied(),
            Side::Target => self.target_lookup.get(token).copied(),
        }
    }
}

/// Immutable undirected attributed graph.
#[derive(Clone, Debug, PartialEq)]
pub struct Graph {
    offsets: Vec<usize>,
    adjacency: Vec<usize>,
    attributes: Matrix,
    labels: Vec<Option<usize>>,
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    num_classes: usize,
}

impl Graph {
    /// Builds a graph from an undirected edge list. Edges are symmetrized and
    /// deduplicated; self-loops are dropped. On the source side every node
    /// with a known label is labeled; on the target side nothing is labeled
    /// until [`Graph::with_labeled`] is applied.
    pub fn new(
        edges: &[(usize, usize)],
        attributes: Matrix,
        labels: Vec<Option<usize>>,
        num_classes: usize,
        side: Side,
    ) -> Result<Self> {
        let n = attributes.rows();
        if labels.len() != n {
            return Err(Error::invalid(format!(
                "{} labels for {n} attribute rows",
                labels.len()
            )));
        }
        if let Some((v, c)) = labels
            .iter()
            .enumerate()
            .find_map(|(v, l)| l.filter(|&c| c >= num_classes).map(|c| (v, c)))
        {
            return Err(Error::invalid(format!(
                "node {v} has class {c}, but there are only {num_classes} classes"
            )));
        }
        if attributes.as_slice().iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::invalid("attributes must be finite and nonnegative"));
        }
        let mut lists: Vec<Vec<usize>> = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(Error::invalid(format!(
                    "edge ({u}, {v}) out of range for {n} nodes"
                )));
            }
            if u != v {
                lists[u].push(v);
                lists[v].push(u);
            }
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut adjacency = Vec::new();
        offsets.push(0);
        for mut l in lists {
            l.sort_unstable();
            l.dedup();
            adjacency.extend(l);
            offsets.push(adjacency.len());
        }
        let labeled: Vec<usize> = match side {
            Side::Source => (0..n).filter(|&v| labels[v].is_some()).collect(),
            Side::Target => Vec::new(),
        };
        let unlabeled = complement(n, &labeled);
        Ok(Self {
            offsets,
            adjacency,
            attributes,
            labels,
            labeled,
            unlabeled,
            num_classes,
        })
    }

    /// Same graph with `labeled` as the labeled set and every other node
    /// unlabeled. Labeled nodes must carry a known class.
    pub fn with_labeled(mut self, labeled: &[usize]) -> Result<Self> {
        let n = self.num_nodes();
        let mut set: Vec<usize> = labeled.to_vec();
        set.sort_unstable();
        set.dedup();
        for &v in &set {
            if v >= n {
                return Err(Error::invalid(format!("labeled node {v} out of range")));
            }
            if self.labels[v].is_none() {
                return Err(Error::invalid(format!("labeled node {v} has no class")));
            }
        }
        self.unlabeled = complement(n, &set);
        self.labeled = set;
        Ok(self)
    }

    pub fn num_nodes(&self) -> usize {
        self.attributes.rows()
    }

    pub fn attr_dim(&self) -> usize {
        self.attributes.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.adjacency.len() / 2
    }

    #[inline]
    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.adjacency[self.offsets[v]..self.offsets[v + 1]]
    }

    #[inline]
    pub fn degree(&self, v: usize) -> usize {
        self.offsets[v + 1] - self.offsets[v]
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.neighbors(u).binary_search(&v).is_ok()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes())
            .flat_map(move |u| self.neighbors(u).iter().map(move |&v| (u, v)))
            .filter(|(u, v)| u < v)
    }

    pub fn attributes(&self) -> &Matrix {
        &self.attributes
    }

    /// Ground-truth class, if known.
    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn labeled(&self) -> &[usize] {
        &self.labeled
    }

    pub fn unlabeled(&self) -> &[usize] {
        &self.unlabeled
    }
}

fn complement(n: usize, sorted: &[usize]) -> Vec<usize> {
    let mut mark = vec![false; n];
    for &v in sorted {
        mark[v] = true;
    }
    (0..n).filter(|&v| !mark[v]).collect()
}

/// Draws `n` nodes per class uniformly without replacement among nodes with
/// known labels. Output is grouped by class, ascending within each class.
pub fn select_labeled_per_class(graph: &Graph, n: usize, seed: u64) -> Result<Vec<usize>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for v in 0..graph.num_nodes() {
        if let Some(c) = graph.label(v) {
            by_class[c].push(v);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n * by_class.len());
    for (c, members) in by_class.iter().enumerate() {
        if members.len() < n {
            return Err(Error::invalid(format!(
                "class {c} has {} labeled candidates, {n} requested",
                members.len()
            )));
        }
        let mut pick: Vec<usize> = members.choose_multiple(&mut rng, n).copied().collect();
        pick.sort_unstable();
        out.extend(pick);
    }
    Ok(out)
}

/// Size hints for [`load_graph`]. Unset fields are inferred from the files.
#[derive(Clone, Copy, Debug, Default)]
pub struct LoadOptions {
    pub num_nodes: Option<usize>,
    pub num_classes: Option<usize>,
}

struct Lines<'a> {
    path: &'a Path,
    text: String,
}

impl<'a> Lines<'a> {
    fn read(path: &'a Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        Ok(Self { path, text })
    }

    /// Non-blank, non-comment lines with their 1-based line numbers.
    fn records(&self) -> impl Iterator<Item = (usize, Vec<&str>)> {
        self.text.lines().enumerate().filter_map(|(i, l)| {
            let t = l.trim();
            (!t.is_empty() && !t.starts_with('#')).then(|| (i + 1, t.split_whitespace().collect()))
        })
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Load {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    fn parse<T: std::str::FromStr>(&self, line: usize, field: &str, what: &str) -> Result<T> {
        field
            .parse()
            .map_err(|_| self.err(line, format!("cannot parse {what} from {field:?}")))
    }

    fn expect_fields(&self, line: usize, fields: &[&str], n: usize) -> Result<()> {
        if fields.len() != n {
            return Err(self.err(
                line,
                format!("expected {n} fields, found {}", fields.len()),
            ));
        }
        Ok(())
    }
}

/// Attribute tokens of a triplet file in order of first appearance.
pub fn read_attribute_tokens(attr_path: &Path) -> Result<Vec<String>> {
    let lines = Lines::read(attr_path)?;
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (ln, f) in lines.records() {
        lines.expect_fields(ln, &f, 3)?;
        if seen.insert(f[1]) {
            out.push(f[1].to_string());
        }
    }
    Ok(out)
}

/// Loads one side of a transfer pair, re-indexing attributes into the union
/// vocabulary.
pub fn load_graph(
    edge_path: &Path,
    attr_path: &Path,
    label_path: &Path,
    vocab: &AttributeVocabulary,
    side: Side,
    opts: LoadOptions,
) -> Result<Graph> {
    let edges_f = Lines::read(edge_path)?;
    let attrs_f = Lines::read(attr_path)?;
    let labels_f = Lines::read(label_path)?;

    let mut edges = Vec::new();
    for (ln, f) in edges_f.records() {
        edges_f.expect_fields(ln, &f, 2)?;
        let u: usize = edges_f.parse(ln, f[0], "node id")?;
        let v: usize = edges_f.parse(ln, f[1], "node id")?;
        edges.push((ln, u, v));
    }
    let mut triplets = Vec::new();
    for (ln, f) in attrs_f.records() {
        attrs_f.expect_fields(ln, &f, 3)?;
        let v: usize = attrs_f.parse(ln, f[0], "node id")?;
        let col = vocab
            .column(side, f[1])
            .ok_or_else(|| attrs_f.err(ln, format!("token {:?} not in vocabulary", f[1])))?;
        let x: f64 = attrs_f.parse(ln, f[2], "attribute value")?;
        if !(x >= 0.0) || !x.is_finite() {
            return Err(attrs_f.err(ln, format!("attribute value {x} is not a nonnegative real")));
        }
        triplets.push((ln, v, col, x));
    }
    let mut label_rows = Vec::new();
    for (ln, f) in labels_f.records() {
        labels_f.expect_fields(ln, &f, 2)?;
        let v: usize = labels_f.parse(ln, f[0], "node id")?;
        let c: usize = labels_f.parse(ln, f[1], "class id")?;
        label_rows.push((ln, v, c));
    }

    let n = opts.num_nodes.unwrap_or_else(|| {
        let m = edges
            .iter()
            .flat_map(|&(_, u, v)| [u, v])
            .chain(triplets.iter().map(|t| t.1))
            .chain(label_rows.iter().map(|t| t.1))
            .max();
        m.map_or(0, |m| m + 1)
    });
    let num_classes = opts
        .num_classes
        .unwrap_or_else(|| label_rows.iter().map(|t| t.2 + 1).max().unwrap_or(0));

    for &(ln, u, v) in &edges {
        if u >= n || v >= n {
            return Err(edges_f.err(ln, format!("node id out of range (N = {n})")));
        }
    }
    let mut attributes = Matrix::zeros(n, vocab.union_size());
    for &(ln, v, col, x) in &triplets {
        if v >= n {
            return Err(attrs_f.err(ln, format!("node id out of range (N = {n})")));
        }
        attributes.set(v, col, x);
    }
    let mut labels = vec![None; n];
    for &(ln, v, c) in &label_rows {
        if v >= n {
            return Err(labels_f.err(ln, format!("node id out of range (N = {n})")));
        }
        if c >= num_classes {
            return Err(labels_f.err(ln, format!("class id {c} >= C = {num_classes}")));
        }
        labels[v] = Some(c);
    }
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&(_, u, v)| (u, v)).collect();
    Graph::new(&pairs, attributes, labels, num_classes, side)
}

/// Writes a graph in the three text formats, using `side`'s original tokens.
pub fn write_graph(
    graph: &Graph,
    vocab: &AttributeVocabulary,
    side: Side,
    edge_path: &Path,
    attr_path: &Path,
    label_path: &Path,
) -> Result<()> {
    let mut e = String::new();
    for (u, v) in graph.edges() {
        writeln!(e, "{u} {v}").unwrap();
    }
    let mut a = String::new();
    let names = vocab.names(side);
    let cols = vocab.index_map(side);
    for v in 0..graph.num_nodes() {
        let row = graph.attributes().row(v);
        for (name, &c) in names.iter().zip(cols) {
            if row[c] != 0.0 {
                writeln!(a, "{v} {name} {}", row[c]).unwrap();
            }
        }
    }
    let mut l = String::new();
    for (v, lab) in graph.labels().iter().enumerate() {
        if let Some(c) = lab {
            writeln!(l, "{v} {c}").unwrap();
        }
    }
    for (path, body) in [(edge_path, e), (attr_path, a), (label_path, l)] {
        fs::write(path, body).map_err(|err| Error::io(format!("writing {}", path.display()), err))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn toks(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn union_is_source_first() {
        let v = align_attributes(&toks(&["a", "b"]), &toks(&["b", "c"])).unwrap();
        assert_eq!(v.union_names(), &toks(&["a", "b", "c"])[..]);
        assert_eq!(v.source_index_map(), &[0, 1]);
        assert_eq!(v.target_index_map(), &[1, 2]);
        assert_abs_diff_eq!(common_attribute_rate(&v), 1.0 / 3.0);
    }

    #[test]
    fn identical_and_disjoint_rates() {
        let same = align_attributes(&toks(&["a"]), &toks(&["a"])).unwrap();
        assert_eq!(same.union_names().len(), 1);
        assert_eq!(common_attribute_rate(&same), 1.0);
        let disjoint = align_attributes(&toks(&["a", "b"]), &toks(&["c"])).unwrap();
        assert_eq!(common_attribute_rate(&disjoint), 0.0);
    }

    /// Builds vocabularies of the stated sizes: `shared` common tokens plus
    /// private tokens so that the union has `union` entries.
    fn sized_vocab(source_len: usize, shared: usize, union: usize) -> AttributeVocabulary {
        let src: Vec<String> = (0..source_len).map(|i| format!("t{i}")).collect();
        let tgt_private = union - source_len;
        let tgt: Vec<String> = (0..shared)
            .map(|i| format!("t{i}"))
            .chain((0..tgt_private).map(|i| format!("u{i}")))
            .collect();
        align_attributes(&src, &tgt).unwrap()
    }

    #[test]
    fn published_common_rates() {
        // Citation pair: 4285 shared out of 6665.
        let v = sized_vocab(5000, 4285, 6665);
        assert_eq!(v.union_size(), 6665);
        assert_abs_diff_eq!(common_attribute_rate(&v), 0.6429, epsilon = 5e-5);
        // Blog pair: 4094 shared out of 4185.
        let v = sized_vocab(4150, 4094, 4185);
        assert_abs_diff_eq!(common_attribute_rate(&v), 0.9783, epsilon = 5e-5);
    }

    #[test]
    fn duplicate_tokens_rejected() {
        assert!(matches!(
            align_attributes(&toks(&["a", "a"]), &toks(&["b"])),
            Err(Error::Validation(_))
        ));
    }

    proptest! {
        #[test]
        fn rate_is_order_invariant(
            src in proptest::collection::hash_set("[a-f]{1,2}", 0..12),
            tgt in proptest::collection::hash_set("[a-f]{1,2}", 0..12),
            seed in any::<u64>(),
        ) {
            let src: Vec<String> = src.into_iter().collect();
            let tgt: Vec<String> = tgt.into_iter().collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (mut s2, mut t2) = (src.clone(), tgt.clone());
            s2.shuffle(&mut rng);
            t2.shuffle(&mut rng);
            let a = align_attributes(&src, &tgt).unwrap();
            let b = align_attributes(&s2, &t2).unwrap();
            prop_assert_eq!(common_attribute_rate(&a), common_attribute_rate(&b));
            // every token appears exactly once in the union
            let u: HashSet<&String> = a.union_names().iter().collect();
            prop_assert_eq!(u.len(), a.union_size());
            prop_assert!(src.iter().chain(&tgt).all(|t| u.contains(t)));
        }
    }

    fn toy(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(
            edges,
            Matrix::zeros(n, 1),
            vec![Some(0); n],
            1,
            Side::Source,
        )
        .unwrap()
    }

    #[test]
    fn edges_symmetrized_and_deduplicated() {
        let g = toy(2, &[(0, 1), (1, 0), (0, 1)]);
        assert_eq!(g.neighbors(0), &[1]);
        assert_eq!(g.neighbors(1), &[0]);
        assert_eq!(g.num_edges(), 1);
        let g = toy(3, &[]);
        assert!((0..3).all(|v| g.degree(v) == 0));
    }

    #[test]
    fn self_loops_are_dropped() {
        let g = toy(2, &[(0, 0), (0, 1)]);
        assert_eq!(g.neighbors(0), &[1]);
    }

    #[test]
    fn labeled_partition_is_complete() {
        let labels = vec![Some(0), Some(1), Some(0), Some(1), None];
        let g = Graph::new(&[], Matrix::zeros(5, 1), labels, 2, Side::Target).unwrap();
        assert!(g.labeled().is_empty());
        assert_eq!(g.unlabeled().len(), 5);
        let g = g.with_labeled(&[1, 2]).unwrap();
        assert_eq!(g.labeled(), &[1, 2]);
        assert_eq!(g.unlabeled(), &[0, 3, 4]);
        assert!(g.clone().with_labeled(&[4]).is_err());
    }

    fn classed(n: usize, c: usize) -> Graph {
        let labels = (0..n).map(|v| Some(v % c)).collect();
        Graph::new(&[], Matrix::zeros(n, 1), labels, c, Side::Target).unwrap()
    }

    #[test]
    fn per_class_selection() {
        let g = classed(50, 5);
        assert!(select_labeled_per_class(&g, 0, 1).unwrap().is_empty());
        let s = select_labeled_per_class(&g, 5, 7).unwrap();
        assert_eq!(s.len(), 25);
        let mut hist = [0; 5];
        for &v in &s {
            hist[g.label(v).unwrap()] += 1;
        }
        assert_eq!(hist, [5; 5]);
        assert_eq!(s, select_labeled_per_class(&g, 5, 7).unwrap());
        assert_ne!(s, select_labeled_per_class(&g, 5, 8).unwrap());
    }

    #[test]
    fn selection_fails_for_small_class() {
        let g = classed(7, 3); // classes 1 and 2 have 2 members
        match select_labeled_per_class(&g, 3, 0) {
            Err(Error::Validation(msg)) => assert!(msg.contains("class 1"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
