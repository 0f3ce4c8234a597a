//! Hierarchical feature extraction by cross-attention, synthetic data, and
//! the JSON Lines ingestion format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-layer class tokens: `m` mapped intermediate tokens and the final token.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenStack {
    tokens: Array2<f64>,
    layer_ids: Vec<i64>,
}

impl TokenStack {
    pub fn new(tokens: Array2<f64>, layer_ids: Vec<i64>) -> Result<Self> {
        if tokens.nrows() == 0 || tokens.ncols() == 0 {
            return Err(Error::contract("token stack must have at least one row and column"));
        }
        if layer_ids.len() != tokens.nrows() {
            return Err(Error::contract(format!(
                "{} layer ids for {} token rows",
                layer_ids.len(),
                tokens.nrows()
            )));
        }
        check_finite(tokens.view(), "token stack")?;
        Ok(TokenStack { tokens, layer_ids })
    }

    pub fn tokens(&self) -> ArrayView2<'_, f64> {
        self.tokens.view()
    }

    pub fn layer_ids(&self) -> &[i64] {
        &self.layer_ids
    }

    pub fn dim(&self) -> usize {
        self.tokens.ncols()
    }
}

/// One text feature per hierarchy level, coarse to fine.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTree {
    features: Array2<f64>,
}

impl TextTree {
    pub fn new(features: Array2<f64>) -> Result<Self> {
        if features.nrows() == 0 || features.ncols() == 0 {
            return Err(Error::contract("text tree needs at least one level and one column"));
        }
        check_finite(features.view(), "text tree")?;
        Ok(TextTree { features })
    }

    pub fn features(&self) -> ArrayView2<'_, f64> {
        self.features.view()
    }

    pub fn depth(&self) -> usize {
        self.features.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Text,
    Visual,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTree {
    pub features: Array2<f64>,
    pub modality: Modality,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub seed: u64,
}

impl AttentionParams {
    pub fn dim(&self) -> usize {
        self.w_q.nrows()
    }

    /// Zero query/key projections and identity values: uniform attention.
    pub fn uniform(d: usize) -> Self {
        AttentionParams { w_q: Array2::zeros((d, d)), w_k: Array2::zeros((d, d)), w_v: Array2::eye(d), seed: 0 }
    }

    fn validate(&self) -> Result<()> {
        let d = self.w_q.nrows();
        for (name, w) in [("W_Q", &self.w_q), ("W_K", &self.w_k), ("W_V", &self.w_v)] {
            if w.dim() != (d, d) {
                return Err(Error::contract(format!("{name} has shape {:?}, expected ({d}, {d})", w.dim())));
            }
            check_finite(w.view(), name)?;
        }
        Ok(())
    }
}

pub const DEFAULT_INIT_SCALE: f64 = 0.02;

/// Projections with entries drawn from `N(0, scale²)`, seeded.
pub fn init_attention(d: usize, seed: u64, scale: f64) -> Result<AttentionParams> {
    if d == 0 {
        return Err(Error::contract("attention dimension must be positive"));
    }
    let normal = Normal::new(0.0, scale).map_err(|e| Error::contract(format!("bad init scale {scale}: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = || Array2::from_shape_simple_fn((d, d), || normal.sample(&mut rng));
    let (w_q, w_k, w_v) = (draw(), draw(), draw());
    Ok(AttentionParams { w_q, w_k, w_v, seed })
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    /// Row-stochastic `H × (m+1)` attention weights.
    pub attn: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct AttentionGrads {
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub queries: Array2<f64>,
    pub tokens: Array2<f64>,
}

/// `softmax(Q Kᵀ / √d) V` with `Q = queries W_Q`, `K = tokens W_K`, `V = tokens W_V`.
pub fn cross_attention_forward(
    queries: ArrayView2<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
) -> Result<(Array2<f64>, AttentionCache)> {
    params.validate()?;
    let d = params.dim();
    if queries.ncols() != d || tokens.ncols() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: if queries.ncols() != d { queries.ncols() } else { tokens.ncols() },
        });
    }
    let q = queries.dot(&params.w_q);
    let k = tokens.dot(&params.w_k);
    let v = tokens.dot(&params.w_v);
    let mut attn = q.dot(&k.t()) / (d as f64).sqrt();
    for mut row in attn.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        row.mapv_inplace(|x| (x - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    let out = attn.dot(&v);
    Ok((out, AttentionCache { q, k, v, attn }))
}

pub fn cross_attention_backward(
    queries: ArrayView2<f64>,
    tokens: ArrayView2<f64>,
    params: &AttentionParams,
    cache: &AttentionCache,
    grad_out: ArrayView2<f64>,
) -> AttentionGrads {
    let scale = 1.0 / (params.dim() as f64).sqrt();
    let d_attn = grad_out.dot(&cache.v.t());
    let d_v = cache.attn.t().dot(&grad_out);
    // softmax backward, row-wise
    let inner = (&d_attn * &cache.attn).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_logits = &cache.attn * &(&d_attn - &inner) * scale;
    let d_q = d_logits.dot(&cache.k);
    let d_k = d_logits.t().dot(&cache.q);
    AttentionGrads {
        w_q: queries.t().dot(&d_q),
        w_k: tokens.t().dot(&d_k),
        w_v: tokens.t().dot(&d_v),
        queries: d_q.dot(&params.w_q.t()),
        tokens: d_k.dot(&params.w_k.t()) + d_v.dot(&params.w_v.t()),
    }
}

/// Visual feature tree: one attention read-out per text level.
pub fn cross_attention_extract(text: &TextTree, stack: &TokenStack, params: &AttentionParams) -> Result<FeatureTree> {
    let (features, _) = cross_attention_forward(text.features(), stack.tokens(), params)?;
    Ok(FeatureTree { features, modality: Modality::Visual })
}

fn check_finite(m: ArrayView2<f64>, what: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::contract(format!("{what} contains non-finite entries")))
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Children per node at each level; depth `H` is its length.
    pub branching: Vec<usize>,
    pub dim: usize,
    /// Norm scale of each prototype perturbation.
    pub separation: f64,
    /// Norm scale of per-token noise.
    pub noise: f64,
    pub samples_per_leaf: usize,
    pub seed: u64,
    /// Defaults to `[4, 7, 12]` at depth 3, evenly spaced over 12 layers otherwise.
    pub layer_ids: Option<Vec<i64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            branching: vec![2, 2, 2],
            dim: 64,
            separation: 1.0,
            noise: 1.0,
            samples_per_leaf: 16,
            seed: 0,
            layer_ids: None,
        }
    }
}

impl SyntheticSpec {
    pub fn depth(&self) -> usize {
        self.branching.len()
    }

    pub fn layer_ids(&self) -> Vec<i64> {
        match &self.layer_ids {
            Some(ids) => ids.clone(),
            None if self.depth() == 3 => vec![4, 7, 12],
            None => {
                let h = self.depth() as i64;
                (1..=h).map(|j| (12 * j + h / 2) / h).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.branching.is_empty() {
            return Err(Error::contract("synthetic taxonomy needs depth ≥ 1"));
        }
        if self.branching.contains(&0) {
            return Err(Error::contract("every level needs at least one class"));
        }
        if self.dim == 0 {
            return Err(Error::contract("feature dimension must be positive"));
        }
        if self.samples_per_leaf == 0 {
            return Err(Error::contract("samples_per_leaf must be positive"));
        }
        if !(self.separation.is_finite() && self.separation > 0.0) || !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::contract("separation must be positive and noise non-negative"));
        }
        if self.layer_ids().len() != self.depth() {
            return Err(Error::contract("layer_ids must have one entry per level"));
        }
        Ok(())
    }
}

/// One node of the synthetic taxonomy.
#[derive(Debug, Clone, PartialEq)]
pub struct PrototypeNode {
    /// Concatenation of the local labels from the top level down.
    pub id: String,
    pub label: String,
    pub parent: Option<usize>,
    pub level: usize,
    pub prototype: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    /// Nodes level by level; leaves are the last `∏ branching` entries.
    pub nodes: Vec<PrototypeNode>,
    pub depth: usize,
}

impl Prototypes {
    pub fn leaves(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nodes.len()).filter(move |&i| self.nodes[i].level + 1 == self.depth)
    }

    /// Node indices from the top level down to `node`.
    pub fn path(&self, node: usize) -> Vec<usize> {
        let mut path = vec![node];
        while let Some(p) = self.nodes[*path.last().unwrap()].parent {
            path.push(p);
        }
        path.reverse();
        path
    }
}

/// A training or evaluation sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stack: TokenStack,
    pub text: TextTree,
    /// Node identifiers, coarse to fine.
    pub labels: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub prototypes: Prototypes,
    pub samples: Vec<Sample>,
}

fn level_label(level: usize, index: usize) -> String {
    let letter = (b'a' + (level % 26) as u8) as char;
    format!("{letter}{index}")
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, norm_scale: f64) -> Vec<f64> {
    let s = norm_scale / (dim as f64).sqrt();
    (0..dim).map(|_| s * rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Hierarchical prototypes: each child is its parent plus a Gaussian
/// perturbation whose expected norm is `separation`.
pub fn synthesize_prototypes(spec: &SyntheticSpec) -> Result<Prototypes> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut nodes: Vec<PrototypeNode> = Vec::new();
    let mut previous: Vec<Option<usize>> = vec![None];
    for (level, &branching) in spec.branching.iter().enumerate() {
        let mut current = Vec::with_capacity(previous.len() * branching);
        for parent in previous {
            for j in 0..branching {
                let label = level_label(level, j);
                let (id, base) = match parent {
                    Some(p) => (format!("{}{}", nodes[p].id, label), nodes[p].prototype.clone()),
                    None => (label.clone(), vec![0.0; spec.dim]),
                };
                let step = gaussian(&mut rng, spec.dim, spec.separation);
                let prototype = base.iter().zip(&step).map(|(b, s)| b + s).collect();
                nodes.push(PrototypeNode { id, label, parent, level, prototype });
                current.push(Some(nodes.len() - 1));
            }
        }
        previous = current;
    }
    Ok(Prototypes { nodes, depth: spec.depth() })
}

/// Samples for one split. Each leaf draws from its own stream keyed by
/// `(seed, split, leaf)`, so splits and leaves are independent.
pub fn synthesize_samples(spec: &SyntheticSpec, prototypes: &Prototypes, split: u32) -> Result<Vec<Sample>> {
    spec.validate()?;
    let layer_ids = spec.layer_ids();
    let mut samples = Vec::new();
    for (leaf_rank, leaf) in prototypes.leaves().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream((u64::from(split) + 1) << 32 | leaf_rank as u64);
        let path = prototypes.path(leaf);
        let text = Array2::from_shape_fn((path.len(), spec.dim), |(i, j)| prototypes.nodes[path[i]].prototype[j]);
        let labels: Vec<String> = path.iter().map(|&n| prototypes.nodes[n].id.clone()).collect();
        for _ in 0..spec.samples_per_leaf {
            let mut tokens = text.clone();
            if spec.noise > 0.0 {
                for mut row in tokens.rows_mut() {
                    row += &Array1::from(gaussian(&mut rng, spec.dim, spec.noise));
                }
            }
            samples.push(Sample {
                stack: TokenStack::new(tokens, layer_ids.clone())?,
                text: TextTree::new(text.clone())?,
                labels: labels.clone(),
            });
        }
    }
    Ok(samples)
}

pub fn synthesize_dataset(spec: &SyntheticSpec) -> Result<SyntheticDataset> {
    let prototypes = synthesize_prototypes(spec)?;
    let samples = synthesize_samples(spec, &prototypes, 0)?;
    Ok(SyntheticDataset { prototypes, samples })
}

// ---------------------------------------------------------------------------
// JSON Lines ingestion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub token_stack: Vec<Vec<f64>>,
    pub layer_ids: Vec<i64>,
    pub text_tree: Vec<Vec<f64>>,
    pub labels: Vec<String>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<Array2<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::contract(format!("{what} rows have unequal lengths")));
    }
    Array2::from_shape_vec((rows.len(), ncols), rows.concat()).map_err(|e| Error::contract(e.to_string()))
}

impl Sample {
    pub fn from_record(record: SampleRecord) -> Result<Self> {
        let stack = TokenStack::new(to_matrix(&record.token_stack, "token_stack")?, record.layer_ids)?;
        let text = TextTree::new(to_matrix(&record.text_tree, "text_tree")?)?;
        if text.features.ncols() != stack.dim() {
            return Err(Error::DimensionMismatch { expected: stack.dim(), got: text.features.ncols() });
        }
        if record.labels.len() != text.depth() {
            return Err(Error::contract(format!(
                "{} labels for a text tree of depth {}",
                record.labels.len(),
                text.depth()
            )));
        }
        Ok(Sample { stack, text, labels: record.labels })
    }

    pub fn to_record(&self) -> SampleRecord {
        let rows = |m: &Array2<f64>| m.rows().into_iter().map(|r| r.to_vec()).collect();
        SampleRecord {
            token_stack: rows(&self.stack.tokens),
            layer_ids: self.stack.layer_ids.clone(),
            text_tree: rows(&self.text.features),
            labels: self.labels.clone(),
        }
    }
}

pub(crate) fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

/// Reads samples, one JSON record per non-blank line. Every record must
/// share the dimension and depth of the first.
pub fn read_samples(path: &Path) -> Result<Vec<Sample>> {
    let file = File::open(path).map_err(|e| io_error(path, e))?;
    let mut samples: Vec<Sample> = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_error(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse { path: path.display().to_string(), line: i + 1, message };
        let record: SampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let sample = Sample::from_record(record).map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = samples.first() {
            if first.stack.dim() != sample.stack.dim() || first.text.depth() != sample.text.depth() {
                return Err(parse_err("record shape differs from the first record".into()));
            }
        }
        samples.push(sample);
    }
    if samples.is_empty() {
        return Err(Error::Parse { path: path.display().to_string(), line: 0, message: "no records".into() });
    }
    Ok(samples)
}

pub fn write_samples(path: &Path, samples: &[Sample]) -> Result<()> {
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    for s in samples {
        serde_json::to_writer(&mut out, &s.to_record())?;
        out.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    out.flush().map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn single_token_row_gives_its_value_projection() {
        let params = init_attention(4, 3, 0.5).unwrap();
        let text = TextTree::new(Array2::from_shape_fn((3, 4), |(i, j)| (i + j) as f64 * 0.1)).unwrap();
        let stack = TokenStack::new(Array2::from_shape_vec((1, 4), vec![1.0, -2.0, 0.5, 0.3]).unwrap(), vec![12]).unwrap();
        let out = cross_attention_extract(&text, &stack, &params).unwrap();
        let v = stack.tokens().dot(&params.w_v);
        for row in out.features.rows() {
            for (a, b) in row.iter().zip(v.row(0)) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn zero_projections_average_tokens() {
        let params = AttentionParams::uniform(3);
        let text = TextTree::new(Array2::ones((2, 3))).unwrap();
        let tokens = Array2::from_shape_vec((2, 3), vec![1.0, 2.0, 3.0, 3.0, 4.0, 5.0]).unwrap();
        let stack = TokenStack::new(tokens, vec![4, 12]).unwrap();
        let out = cross_attention_extract(&text, &stack, &params).unwrap();
        for row in out.features.rows() {
            assert_eq!(row.to_vec(), vec![2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn attention_matches_naive_loops() {
        let d = 8;
        let params = init_attention(d, 11, 0.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let text = Array2::from_shape_simple_fn((3, d), || rng.sample::<f64, _>(StandardNormal));
        let tokens = Array2::from_shape_simple_fn((3, d), || rng.sample::<f64, _>(StandardNormal));
        let (out, cache) = cross_attention_forward(text.view(), tokens.view(), &params).unwrap();
        for row in cache.attn.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        let q = text.dot(&params.w_q);
        let k = tokens.dot(&params.w_k);
        let v = tokens.dot(&params.w_v);
        for i in 0..3 {
            let mut logits = [0.0; 3];
            for (j, l) in logits.iter_mut().enumerate() {
                for t in 0..d {
                    *l += q[[i, t]] * k[[j, t]];
                }
                *l /= (d as f64).sqrt();
            }
            let z: f64 = logits.iter().map(|l| l.exp()).sum();
            for t in 0..d {
                let naive: f64 = (0..3).map(|j| logits[j].exp() / z * v[[j, t]]).sum();
                assert_abs_diff_eq!(out[[i, t]], naive, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = init_attention(16, 7, DEFAULT_INIT_SCALE).unwrap();
        assert_eq!(a, init_attention(16, 7, DEFAULT_INIT_SCALE).unwrap());
        assert_ne!(a.w_q, init_attention(16, 8, DEFAULT_INIT_SCALE).unwrap().w_q);
        assert!(init_attention(0, 7, DEFAULT_INIT_SCALE).is_err());
    }

    #[test]
    fn init_mean_near_zero() {
        let p = init_attention(64, 1, DEFAULT_INIT_SCALE).unwrap();
        for w in [&p.w_q, &p.w_k, &p.w_v] {
            let n = w.len() as f64;
            let se = DEFAULT_INIT_SCALE / n.sqrt();
            assert!(w.mean().unwrap().abs() < 5.0 * se);
        }
    }

    #[test]
    fn noiseless_tokens_equal_prototypes() {
        let spec = SyntheticSpec { noise: 0.0, samples_per_leaf: 2, dim: 8, ..Default::default() };
        let data = synthesize_dataset(&spec).unwrap();
        assert_eq!(data.samples.len(), 16);
        for s in &data.samples {
            assert_eq!(s.stack.tokens(), s.text.features());
            assert_eq!(s.stack.layer_ids(), &[4, 7, 12]);
        }
        assert_eq!(data.samples[0].labels, vec!["a0", "a0b0", "a0b0c0"]);
    }

    #[test]
    fn synthesis_is_deterministic_and_validated() {
        let spec = SyntheticSpec { samples_per_leaf: 3, dim: 16, ..Default::default() };
        assert_eq!(synthesize_dataset(&spec).unwrap(), synthesize_dataset(&spec).unwrap());
        let bad = SyntheticSpec { branching: vec![], ..Default::default() };
        assert!(matches!(synthesize_dataset(&bad), Err(Error::Contract(_))));
        let zero = SyntheticSpec { branching: vec![2, 0], ..Default::default() };
        assert!(synthesize_dataset(&zero).is_err());
    }

    #[test]
    fn record_round_trip() {
        let spec = SyntheticSpec { samples_per_leaf: 1, dim: 4, ..Default::default() };
        let data = synthesize_dataset(&spec).unwrap();
        let dir = std::env::temp_dir().join(format!("hypalign-features-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("samples.jsonl");
        write_samples(&path, &data.samples).unwrap();
        assert_eq!(read_samples(&path).unwrap(), data.samples);
        std::fs::write(&path, "{\"token_stack\": [[1.0]], \"layer_ids\": [1], \"text_tree\": [[1.0, 2.0]], \"labels\": [\"a\"]}\n").unwrap();
        match read_samples(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
