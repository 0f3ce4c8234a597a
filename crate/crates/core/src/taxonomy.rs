//! Label trees, base/novel partitioning, treecuts, and the LA / HCA / MTA
//! metrics for taxonomic open-set classification.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::io_error;

/// Identifier of the shared root created by [`build_taxonomy`].
pub const ROOT_ID: &str = "";
/// Default number of sampled treecuts.
pub const DEFAULT_TREECUTS: usize = 25;
/// Guard for [`enumerate_treecuts`].
pub const MAX_ENUMERATED_TREECUTS: usize = 10_000;

/// Rooted label tree. Nodes are stored in lexicographic order of their
/// identifiers, so a lower index is a lexicographically smaller id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    ids: Vec<String>,
    names: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
    root: usize,
    leaves: Vec<usize>,
    index: BTreeMap<String, usize>,
}

/// On-disk taxonomy: `nodes` maps id to display name, `edges` are
/// `(parent, child)` pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaxonomyFile {
    pub nodes: BTreeMap<String, String>,
    pub edges: Vec<(String, String)>,
    pub root: String,
}

impl Taxonomy {
    pub fn from_edges(nodes: BTreeMap<String, String>, edges: &[(String, String)], root: &str) -> Result<Self> {
        let index: BTreeMap<String, usize> = nodes.keys().enumerate().map(|(i, id)| (id.clone(), i)).collect();
        let ids: Vec<String> = nodes.keys().cloned().collect();
        let names: Vec<String> = nodes.into_values().collect();
        let n = ids.len();
        let lookup = |id: &str| index.get(id).copied().ok_or_else(|| Error::contract(format!("unknown node {id:?}")));
        let root = lookup(root)?;
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for (p, c) in edges {
            let (p, c) = (lookup(p)?, lookup(c)?);
            if c == root {
                return Err(Error::contract("the root cannot have a parent"));
            }
            if parent[c].replace(p).is_some() {
                return Err(Error::contract(format!("node {:?} has more than one parent", ids[c])));
            }
            children[p].push(c);
        }
        children.iter_mut().for_each(|ch| ch.sort_unstable());
        // breadth-first from the root; anything unreached is orphaned or cyclic
        let mut depth = vec![usize::MAX; n];
        depth[root] = 0;
        let mut queue = std::collections::VecDeque::from([root]);
        while let Some(u) = queue.pop_front() {
            for &c in &children[u] {
                depth[c] = depth[u] + 1;
                queue.push_back(c);
            }
        }
        if let Some(orphan) = depth.iter().position(|&d| d == usize::MAX) {
            return Err(Error::contract(format!("node {:?} is not reachable from the root", ids[orphan])));
        }
        let leaves = (0..n).filter(|&i| children[i].is_empty()).collect();
        Ok(Taxonomy { ids, names, parent, children, depth, root, leaves, index })
    }

    pub fn from_file(file: TaxonomyFile) -> Result<Self> {
        Self::from_edges(file.nodes, &file.edges, &file.root)
    }

    pub fn to_file(&self) -> TaxonomyFile {
        let nodes = self.ids.iter().cloned().zip(self.names.iter().cloned()).collect();
        let edges = (0..self.len())
            .filter_map(|c| self.parent[c].map(|p| (self.ids[p].clone(), self.ids[c].clone())))
            .collect();
        TaxonomyFile { nodes, edges, root: self.ids[self.root].clone() }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let file: TaxonomyFile = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), message: e.to_string() })?;
        Self::from_file(file)
    }

    /// Taxonomy whose nodes are exactly the given label paths, which are
    /// node identifiers from the top level down. The root is [`ROOT_ID`].
    pub fn from_paths<S: AsRef<str>>(paths: &[Vec<S>]) -> Result<Self> {
        let mut nodes = BTreeMap::from([(ROOT_ID.to_string(), "root".to_string())]);
        let mut parent_of: BTreeMap<String, String> = BTreeMap::new();
        for path in paths {
            let mut parent = ROOT_ID.to_string();
            for id in path {
                let id = id.as_ref();
                if id.is_empty() {
                    return Err(Error::contract("empty node identifier"));
                }
                match parent_of.get(id) {
                    Some(p) if *p != parent => {
                        return Err(Error::contract(format!(
                            "node {id:?} appears under both {p:?} and {parent:?}"
                        )))
                    }
                    _ => {}
                }
                parent_of.insert(id.to_string(), parent.clone());
                nodes.entry(id.to_string()).or_insert_with(|| id.to_string());
                parent = id.to_string();
            }
        }
        let edges: Vec<(String, String)> = parent_of.into_iter().map(|(c, p)| (p, c)).collect();
        Self::from_edges(nodes, &edges, ROOT_ID)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn name(&self, node: usize) -> &str {
        &self.names[node]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    /// Leaves in lexicographic order of identifier.
    pub fn leaves(&self) -> &[usize] {
        &self.leaves
    }

    /// Nodes from the root down to `node`, inclusive.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.parent[*path.last().unwrap()] {
            path.push(p);
        }
        path.reverse();
        path
    }

    /// Display names along the path below the root.
    pub fn label_path(&self, node: usize) -> Vec<String> {
        self.path(node)[1..].iter().map(|&n| self.names[n].clone()).collect()
    }

    /// Subtree induced by the union of root-to-leaf paths of `leaves`.
    pub fn path_union(&self, leaves: &[usize]) -> Result<Self> {
        let mut keep = vec![false; self.len()];
        for &leaf in leaves {
            for n in self.path(leaf) {
                keep[n] = true;
            }
        }
        let nodes = (0..self.len()).filter(|&i| keep[i]).map(|i| (self.ids[i].clone(), self.names[i].clone())).collect();
        let edges: Vec<_> = (0..self.len())
            .filter(|&i| keep[i])
            .filter_map(|c| self.parent[c].map(|p| (self.ids[p].clone(), self.ids[c].clone())))
            .collect();
        Self::from_edges(nodes, &edges, &self.ids[self.root])
    }
}

/// Builds a taxonomy from per-sample label tuples, coarse to fine.
///
/// A node at level `k` is identified by the concatenation of the first `k`
/// labels, which keeps repeated names in different lineages apart. All
/// tuples must have the same length.
pub fn build_taxonomy<S: AsRef<str>>(annotations: &[Vec<S>]) -> Result<Taxonomy> {
    let depth = annotations.first().map(Vec::len).ok_or_else(|| Error::contract("no annotations"))?;
    if depth == 0 {
        return Err(Error::contract("annotations must have at least one level"));
    }
    let mut nodes = BTreeMap::from([(ROOT_ID.to_string(), "root".to_string())]);
    let mut parent_of: BTreeMap<String, String> = BTreeMap::new();
    for (row, tuple) in annotations.iter().enumerate() {
        if tuple.len() != depth {
            return Err(Error::contract(format!("annotation {row} has {} levels, expected {depth}", tuple.len())));
        }
        let mut id = String::new();
        for label in tuple {
            let label = label.as_ref();
            if label.is_empty() {
                return Err(Error::contract(format!("annotation {row} has an empty label")));
            }
            let parent = id.clone();
            id.push_str(label);
            match (parent_of.get(&id), nodes.get(&id)) {
                (Some(p), Some(name)) if *p != parent || name != label => {
                    return Err(Error::contract(format!("label concatenation {id:?} is ambiguous")));
                }
                _ => {}
            }
            parent_of.insert(id.clone(), parent);
            nodes.insert(id.clone(), label.to_string());
        }
    }
    let edges: Vec<(String, String)> = parent_of.into_iter().map(|(c, p)| (p, c)).collect();
    Taxonomy::from_edges(nodes, &edges, ROOT_ID)
}

/// Reads annotations: one JSON array of labels per non-blank line.
pub fn read_annotations(path: &Path) -> Result<Vec<Vec<String>>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Splits the leaves into two halves under `seed` (the first half takes the
/// extra leaf when the count is odd) and returns the path-union subtrees.
pub fn base_novel_split(tax: &Taxonomy, seed: u64) -> Result<(Taxonomy, Taxonomy)> {
    let mut leaves = tax.leaves().to_vec();
    if leaves.len() < 2 {
        return Err(Error::contract("base/novel split needs at least two leaves"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    leaves.shuffle(&mut rng);
    let (base, novel) = leaves.split_at(leaves.len().div_ceil(2));
    Ok((tax.path_union(base)?, tax.path_union(novel)?))
}

// ---------------------------------------------------------------------------
// Predictions and metrics
// ---------------------------------------------------------------------------

/// One line of the prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub truth_leaf: String,
    pub scores: BTreeMap<String, f64>,
}

/// Ground-truth leaves and per-node scores, indexed like the taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    truth: Vec<usize>,
    scores: Vec<Vec<f64>>,
}

impl PredictionTable {
    /// `scores[s][n]` is the score of node `n` for sample `s`. The root score
    /// is never compared against another node and may be anything finite.
    pub fn new(tax: &Taxonomy, truth: Vec<usize>, scores: Vec<Vec<f64>>) -> Result<Self> {
        if truth.len() != scores.len() {
            return Err(Error::contract("one score row per sample is required"));
        }
        for (t, row) in truth.iter().zip(&scores) {
            if *t >= tax.len() || !tax.is_leaf(*t) {
                return Err(Error::contract(format!("ground truth {t} is not a leaf")));
            }
            if row.len() != tax.len() {
                return Err(Error::DimensionMismatch { expected: tax.len(), got: row.len() });
            }
            if row.iter().any(|s| s.is_nan()) {
                return Err(Error::contract("scores must not be NaN"));
            }
        }
        Ok(PredictionTable { truth, scores })
    }

    /// Every non-root node must be scored; a missing root score is taken as 0.
    pub fn from_records(tax: &Taxonomy, records: &[PredictionRecord]) -> Result<Self> {
        let mut truth = Vec::with_capacity(records.len());
        let mut scores = Vec::with_capacity(records.len());
        for (i, rec) in records.iter().enumerate() {
            truth.push(
                tax.index_of(&rec.truth_leaf)
                    .ok_or_else(|| Error::contract(format!("sample {i}: unknown leaf {:?}", rec.truth_leaf)))?,
            );
            let mut row = vec![0.0; tax.len()];
            for (node, slot) in row.iter_mut().enumerate() {
                match rec.scores.get(tax.id(node)) {
                    Some(&s) => *slot = s,
                    None if node == tax.root() => {}
                    None => return Err(Error::contract(format!("sample {i}: no score for node {:?}", tax.id(node)))),
                }
            }
            scores.push(row);
        }
        Self::new(tax, truth, scores)
    }

    pub fn to_records(&self, tax: &Taxonomy) -> Vec<PredictionRecord> {
        self.truth
            .iter()
            .zip(&self.scores)
            .map(|(&t, row)| PredictionRecord {
                truth_leaf: tax.id(t).to_string(),
                scores: (0..tax.len()).map(|n| (tax.id(n).to_string(), row[n])).collect(),
            })
            .collect()
    }

    pub fn read(path: &Path, tax: &Taxonomy) -> Result<Self> {
        let file = File::open(path).map_err(|e| io_error(path, e))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_error(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<PredictionRecord>(&line).map_err(|e| Error::Parse {
                path: path.display().to_string(),
                line: i + 1,
                message: e.to_string(),
            })?);
        }
        Self::from_records(tax, &records)
    }

    pub fn len(&self) -> usize {
        self.truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.truth.is_empty()
    }

    pub fn truth(&self, sample: usize) -> usize {
        self.truth[sample]
    }

    pub fn scores(&self, sample: usize) -> &[f64] {
        &self.scores[sample]
    }

    /// Highest-scoring candidate; ties go to the lexicographically smallest id.
    pub fn argmax(&self, sample: usize, candidates: &[usize]) -> Option<usize> {
        let row = &self.scores[sample];
        candidates.iter().copied().fold(None, |best, n| match best {
            None => Some(n),
            Some(b) if row[n] > row[b] || (row[n] == row[b] && n < b) => Some(n),
            keep => keep,
        })
    }
}

fn mean_of<I: Iterator<Item = bool>>(hits: I, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    hits.filter(|&h| h).count() as f64 / n as f64
}

/// Fraction of samples whose argmax over the leaves is the true leaf.
pub fn leaf_accuracy(tax: &Taxonomy, preds: &PredictionTable) -> f64 {
    mean_of((0..preds.len()).map(|s| preds.argmax(s, tax.leaves()) == Some(preds.truth(s))), preds.len())
}

fn hierarchically_consistent(tax: &Taxonomy, preds: &PredictionTable, s: usize) -> bool {
    let truth = preds.truth(s);
    if preds.argmax(s, tax.leaves()) != Some(truth) {
        return false;
    }
    let path = tax.path(truth);
    path.windows(2).all(|w| preds.argmax(s, tax.children(w[0])) == Some(w[1]))
}

/// Fraction of samples correct at the leaf and at every ancestor decision,
/// where the decision at node `n` is the argmax over the children of `n`.
pub fn hierarchical_consistent_accuracy(tax: &Taxonomy, preds: &PredictionTable) -> f64 {
    mean_of((0..preds.len()).map(|s| hierarchically_consistent(tax, preds, s)), preds.len())
}

/// A leaf-covering antichain, sorted by node index.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Treecut {
    pub frontier: Vec<usize>,
}

impl Treecut {
    pub fn new(mut frontier: Vec<usize>) -> Self {
        frontier.sort_unstable();
        Treecut { frontier }
    }

    /// Every leaf has exactly one ancestor-or-self in the frontier.
    pub fn is_valid(&self, tax: &Taxonomy) -> bool {
        let mut member = vec![false; tax.len()];
        for &n in &self.frontier {
            if n >= tax.len() || member[n] {
                return false;
            }
            member[n] = true;
        }
        // every node has a leaf below it, so this also rules out nested members
        tax.leaves().iter().all(|&leaf| tax.path(leaf).iter().filter(|&&n| member[n]).count() == 1)
    }

    /// For each node, the frontier member on its root path (if any).
    fn cover(&self, tax: &Taxonomy) -> Vec<Option<usize>> {
        let mut member = vec![false; tax.len()];
        self.frontier.iter().for_each(|&n| member[n] = true);
        (0..tax.len()).map(|n| tax.path(n).into_iter().find(|&a| member[a])).collect()
    }

    pub fn ids(&self, tax: &Taxonomy) -> Vec<String> {
        self.frontier.iter().map(|&n| tax.id(n).to_string()).collect()
    }
}

/// Random treecuts by coin-flip expansion from the root: every internal
/// node expands into its children with probability 1/2. Cuts may repeat.
pub fn sample_treecuts(tax: &Taxonomy, count: usize, seed: u64) -> Result<Vec<Treecut>> {
    if count == 0 {
        return Err(Error::contract("treecut count must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..count)
        .map(|_| {
            let mut frontier = Vec::new();
            let mut stack = vec![tax.root()];
            while let Some(n) = stack.pop() {
                if tax.is_leaf(n) || !rng.random_bool(0.5) {
                    frontier.push(n);
                } else {
                    stack.extend(tax.children(n).iter().rev());
                }
            }
            Treecut::new(frontier)
        })
        .collect())
}

/// Accuracy at one cut: the truth is the frontier node on the true leaf's
/// path, the prediction the argmax over the frontier.
pub fn treecut_accuracy(tax: &Taxonomy, preds: &PredictionTable, cut: &Treecut) -> f64 {
    let cover = cut.cover(tax);
    mean_of((0..preds.len()).map(|s| preds.argmax(s, &cut.frontier) == cover[preds.truth(s)]), preds.len())
}

pub fn mean_treecut_accuracy(tax: &Taxonomy, preds: &PredictionTable, cuts: &[Treecut]) -> Result<f64> {
    if cuts.is_empty() {
        return Err(Error::contract("mean treecut accuracy needs at least one cut"));
    }
    Ok(cuts.iter().map(|c| treecut_accuracy(tax, preds, c)).sum::<f64>() / cuts.len() as f64)
}

/// Number of treecuts below `node`, saturating at `usize::MAX`.
pub fn count_treecuts(tax: &Taxonomy, node: usize) -> usize {
    if tax.is_leaf(node) {
        return 1;
    }
    tax.children(node)
        .iter()
        .fold(1usize, |acc, &c| acc.saturating_mul(count_treecuts(tax, c)))
        .saturating_add(1)
}

/// All treecuts, via `cuts(n) = {n} ∪ (cuts(c_1) × … × cuts(c_k))`.
pub fn enumerate_treecuts(tax: &Taxonomy) -> Result<Vec<Treecut>> {
    if count_treecuts(tax, tax.root()) > MAX_ENUMERATED_TREECUTS {
        return Err(Error::TooLarge { limit: MAX_ENUMERATED_TREECUTS });
    }
    fn cuts(tax: &Taxonomy, node: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![node]];
        if tax.is_leaf(node) {
            return out;
        }
        let mut combos: Vec<Vec<usize>> = vec![Vec::new()];
        for &c in tax.children(node) {
            let sub = cuts(tax, c);
            combos = combos
                .iter()
                .flat_map(|prefix| sub.iter().map(move |s| [prefix.as_slice(), s].concat()))
                .collect();
        }
        out.extend(combos);
        out
    }
    Ok(cuts(tax, tax.root()).into_iter().map(Treecut::new).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HarmonicMean {
    pub value: f64,
    /// Set when both inputs are zero and the value is defined as 0.
    pub degenerate: bool,
}

pub fn harmonic_mean(base: f64, novel: f64) -> Result<HarmonicMean> {
    if !(base >= 0.0 && novel >= 0.0) || !base.is_finite() || !novel.is_finite() {
        return Err(Error::contract(format!("harmonic mean needs non-negative inputs, got {base}, {novel}")));
    }
    if base + novel == 0.0 {
        return Ok(HarmonicMean { value: 0.0, degenerate: true });
    }
    Ok(HarmonicMean { value: 2.0 * base * novel / (base + novel), degenerate: false })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub la: f64,
    pub hca: f64,
    pub mta: f64,
    pub num_treecuts: usize,
    pub seed: u64,
}

/// LA, HCA, and MTA over `num_treecuts` cuts sampled under `seed`.
pub fn evaluate(tax: &Taxonomy, preds: &PredictionTable, num_treecuts: usize, seed: u64) -> Result<MetricReport> {
    if preds.is_empty() {
        return Err(Error::contract("no samples to evaluate"));
    }
    let cuts = sample_treecuts(tax, num_treecuts, seed)?;
    Ok(MetricReport {
        la: leaf_accuracy(tax, preds),
        hca: hierarchical_consistent_accuracy(tax, preds),
        mta: mean_treecut_accuracy(tax, preds, &cuts)?,
        num_treecuts,
        seed,
    })
}

/// Uniformly random tree for property tests: each node below `max_depth`
/// gets between 0 and `max_children` children, the root at least one.
pub fn random_taxonomy<R: Rng>(rng: &mut R, max_depth: usize, max_children: usize) -> Taxonomy {
    let mut paths: Vec<Vec<String>> = Vec::new();
    fn grow<R: Rng>(rng: &mut R, prefix: &mut Vec<String>, depth: usize, max_depth: usize, max_children: usize, out: &mut Vec<Vec<String>>) {
        let k = if depth == 0 { rng.random_range(1..=max_children.max(1)) } else if depth >= max_depth { 0 } else { rng.random_range(0..=max_children) };
        if k == 0 {
            out.push(prefix.clone());
            return;
        }
        for i in 0..k {
            let id = format!("{}{}", prefix.last().map_or("", String::as_str), (b'a' + i as u8) as char);
            prefix.push(id);
            grow(rng, prefix, depth + 1, max_depth, max_children, out);
            prefix.pop();
        }
    }
    grow(rng, &mut Vec::new(), 0, max_depth, max_children, &mut paths);
    Taxonomy::from_paths(&paths).expect("generated paths form a tree")
}
