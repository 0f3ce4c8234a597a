//! Joint gradient descent on the attention projections and the text and
//! image curvatures, with the intermediate curvature re-solved every step
//! and differentiated implicitly.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::entailment::{cross_modal_lifted, in_modal_lifted};
use crate::error::{Error, Result};
use crate::features::{
    cross_attention_backward, cross_attention_forward, init_attention, io_error, read_samples, synthesize_prototypes,
    synthesize_samples, AttentionCache, AttentionParams, FeatureTree, Sample, SyntheticSpec,
};
use crate::lorentz::{Curvature, DEFAULT_C_MIN};
use crate::manifold::{
    compute_r, r_min_threshold, solve_intermediate_with_floor, IntermediateSolution, RadiusParameter, DEFAULT_TOL,
};
use crate::taxonomy::{evaluate, MetricReport, PredictionTable, Taxonomy, DEFAULT_TREECUTS};

/// Where `r` comes from each step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RadiusPolicy {
    /// Norm of the mean tangent feature of the batch, raised to the
    /// convexity threshold when below it.
    BatchComputed,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic {
        spec: SyntheticSpec,
        /// Held-out samples per leaf, drawn from an independent stream.
        held_out_per_leaf: usize,
    },
    Files {
        train: PathBuf,
        test: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub alpha: f64,
    pub lr: f64,
    /// Step size for the curvatures; defaults to `lr`.
    pub curvature_lr: Option<f64>,
    /// Full-batch gradient steps.
    pub epochs: usize,
    pub c1_init: f64,
    pub c2_init: f64,
    pub c_min: f64,
    pub r_policy: RadiusPolicy,
    pub seed: u64,
    pub temperature: f64,
    pub init_scale: f64,
    /// Caps the norm of the attention gradient and the magnitude of each
    /// curvature gradient.
    pub grad_clip: Option<f64>,
    pub cosine_schedule: bool,
    pub tol: f64,
    pub treecuts: usize,
    pub data: DataSource,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            alpha: 0.5,
            lr: 0.5,
            curvature_lr: Some(0.001),
            epochs: 200,
            c1_init: 0.25,
            c2_init: 0.25,
            c_min: DEFAULT_C_MIN,
            r_policy: RadiusPolicy::BatchComputed,
            seed: 0,
            temperature: 0.1,
            init_scale: 0.02,
            grad_clip: Some(1.0),
            cosine_schedule: false,
            tol: DEFAULT_TOL,
            treecuts: DEFAULT_TREECUTS,
            data: DataSource::Synthetic { spec: SyntheticSpec::default(), held_out_per_leaf: 16 },
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::contract(m));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if let Some(lr) = self.curvature_lr {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("curvature_lr must be non-negative, got {lr}"));
            }
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.c_min > 0.0 && self.c_min.is_finite()) {
            return bad(format!("c_min must be positive, got {}", self.c_min));
        }
        Curvature::with_floor(self.c1_init, self.c_min)?;
        Curvature::with_floor(self.c2_init, self.c_min)?;
        if !(self.temperature > 0.0) {
            return bad(format!("temperature must be positive, got {}", self.temperature));
        }
        if let RadiusPolicy::Fixed(r) = self.r_policy {
            RadiusParameter::fixed(r)?;
        }
        if self.grad_clip.is_some_and(|g| !(g > 0.0)) {
            return bad("grad_clip must be positive".into());
        }
        if !(self.tol > 0.0) {
            return bad("tol must be positive".into());
        }
        if self.treecuts == 0 {
            return bad("treecuts must be positive".into());
        }
        if let DataSource::Synthetic { spec, held_out_per_leaf } = &self.data {
            spec.validate()?;
            if *held_out_per_leaf == 0 {
                return bad("held_out_per_leaf must be positive".into());
            }
        }
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_error(path, e))?;
        let config: TrainConfig = serde_json::from_str(&text)
            .map_err(|e| Error::Parse { path: path.display().to_string(), line: e.line(), message: e.to_string() })?;
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub step: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3_star: f64,
    pub dc3_dc1: f64,
    pub dc3_dc2: f64,
    pub stationarity_residual: f64,
    pub r: f64,
    pub r_clamped: bool,
    pub certified: bool,
    pub surrogate: f64,
    pub text_entailment: f64,
    pub visual_entailment: f64,
    pub cross_modal: f64,
    pub total: f64,
    /// Total derivatives of the batch loss w.r.t. the curvatures.
    pub grad_c1: f64,
    pub grad_c2: f64,
}

impl StepTrace {
    pub fn losses_finite(&self) -> bool {
        [self.surrogate, self.text_entailment, self.visual_entailment, self.cross_modal, self.total]
            .iter()
            .all(|x| x.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Surrogate task loss
// ---------------------------------------------------------------------------

const NORM_FLOOR: f64 = 1e-12;

/// Temperature-scaled cosine logits of `v` against each candidate row, with
/// what the backward pass needs.
fn cosine_logits(v: &[f64], candidates: ArrayView2<f64>, temperature: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    let cos: Vec<f64> = candidates
        .rows()
        .into_iter()
        .map(|c| {
            let cn = c.dot(&c).sqrt().max(NORM_FLOOR);
            c.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() / (cn * vn)
        })
        .collect();
    let logits = cos.iter().map(|c| c / temperature).collect();
    (logits, cos, vn)
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

/// Per-level cross-entropy of a softmax over cosine similarities, summed
/// over levels, with its gradient w.r.t. the visual features.
///
/// `candidates[i]` holds the level-`i` candidate text features as rows and
/// `truth[i]` the row index of the true label.
pub fn surrogate_task_loss_grad(
    visual: ArrayView2<f64>,
    candidates: &[Array2<f64>],
    truth: &[usize],
    temperature: f64,
) -> Result<(f64, Array2<f64>)> {
    if candidates.len() != visual.nrows() || truth.len() != visual.nrows() {
        return Err(Error::contract("one candidate set and one truth label per level are required"));
    }
    let mut loss = 0.0;
    let mut grad = Array2::zeros(visual.raw_dim());
    for (i, ((row, cands), &y)) in visual.rows().into_iter().zip(candidates).zip(truth).enumerate() {
        if y >= cands.nrows() {
            return Err(Error::contract(format!("level {i}: truth {y} is not among {} candidates", cands.nrows())));
        }
        if cands.ncols() != visual.ncols() {
            return Err(Error::DimensionMismatch { expected: visual.ncols(), got: cands.ncols() });
        }
        let v = row.to_vec();
        let (logits, cos, vn) = cosine_logits(&v, cands.view(), temperature);
        let logp = log_softmax(&logits);
        loss -= logp[y];
        let mut g = grad.row_mut(i);
        for (j, c) in cands.rows().into_iter().enumerate() {
            let dz = logp[j].exp() - if j == y { 1.0 } else { 0.0 };
            let dcos = dz / temperature;
            let cn = c.dot(&c).sqrt().max(NORM_FLOOR);
            for ((gk, ck), vk) in g.iter_mut().zip(c).zip(&v) {
                *gk += dcos * (ck / (cn * vn) - cos[j] * vk / (vn * vn));
            }
        }
    }
    Ok((loss, grad))
}

pub fn surrogate_task_loss(
    visual: &FeatureTree,
    candidates: &[Array2<f64>],
    truth: &[usize],
    temperature: f64,
) -> Result<f64> {
    Ok(surrogate_task_loss_grad(visual.features.view(), candidates, truth, temperature)?.0)
}

// ---------------------------------------------------------------------------
// Prepared data
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PreparedSample {
    pub tokens: Array2<f64>,
    pub text: Array2<f64>,
    /// Row index into the level candidate matrix, per level.
    pub truth: Vec<usize>,
    /// Taxonomy node of the leaf label.
    pub leaf: usize,
}

/// Samples bound to a taxonomy and per-level candidate text features.
#[derive(Debug, Clone)]
pub struct Problem {
    pub taxonomy: Taxonomy,
    /// Taxonomy nodes at each level, in index order.
    pub level_nodes: Vec<Vec<usize>>,
    /// Text feature of each level node, rows aligned with `level_nodes`.
    pub candidates: Vec<Array2<f64>>,
    /// Attention queries: mean candidate text feature per level, so
    /// extraction never sees the label of the sample.
    pub queries: Array2<f64>,
    pub train: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
}

impl Problem {
    /// Builds the taxonomy from the label paths of both splits. A node's text
    /// feature is the corresponding text-tree row of the first sample (train
    /// before test) that carries it.
    pub fn new(train: &[Sample], test: &[Sample]) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::contract("no training samples"))?;
        let (depth, dim) = (first.text.depth(), first.stack.dim());
        let all = train.iter().chain(test);
        for s in all.clone() {
            if s.text.depth() != depth || s.stack.dim() != dim {
                return Err(Error::contract("samples disagree on depth or dimension"));
            }
        }
        let paths: Vec<Vec<String>> = all.clone().map(|s| s.labels.clone()).collect();
        let taxonomy = Taxonomy::from_paths(&paths)?;
        let mut text_of: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for s in all {
            for (i, label) in s.labels.iter().enumerate() {
                let node = taxonomy.index_of(label).expect("label is in the taxonomy");
                text_of.entry(node).or_insert_with(|| s.text.features().row(i).to_vec());
            }
        }
        let mut level_nodes = vec![Vec::new(); depth];
        for &node in text_of.keys() {
            let level = taxonomy.depth(node) - 1;
            level_nodes[level].push(node);
        }
        for n in taxonomy.leaves() {
            if taxonomy.depth(*n) != depth {
                return Err(Error::contract(format!("leaf {:?} is not at depth {depth}", taxonomy.id(*n))));
            }
        }
        let candidates: Vec<Array2<f64>> = level_nodes
            .iter()
            .map(|nodes| Array2::from_shape_fn((nodes.len(), dim), |(r, c)| text_of[&nodes[r]][c]))
            .collect();
        let mut queries = Array2::zeros((depth, dim));
        for (i, cands) in candidates.iter().enumerate() {
            queries.row_mut(i).assign(&cands.mean_axis(Axis(0)).expect("non-empty level"));
        }
        let prepare = |s: &Sample| -> PreparedSample {
            let truth = s
                .labels
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    let node = taxonomy.index_of(l).expect("label is in the taxonomy");
                    level_nodes[i].binary_search(&node).expect("node is on its level")
                })
                .collect();
            PreparedSample {
                tokens: s.stack.tokens().to_owned(),
                text: s.text.features().to_owned(),
                truth,
                leaf: taxonomy.index_of(s.labels.last().unwrap()).unwrap(),
            }
        };
        let train = train.iter().map(prepare).collect();
        let test = test.iter().map(prepare).collect();
        Ok(Problem { taxonomy, level_nodes, candidates, queries, train, test })
    }

    pub fn depth(&self) -> usize {
        self.queries.nrows()
    }

    pub fn dim(&self) -> usize {
        self.queries.ncols()
    }

    pub fn load(source: &DataSource, seed: u64) -> Result<Self> {
        match source {
            DataSource::Synthetic { spec, held_out_per_leaf } => {
                let spec = SyntheticSpec { seed, ..spec.clone() };
                let prototypes = synthesize_prototypes(&spec)?;
                let train = synthesize_samples(&spec, &prototypes, 0)?;
                let test_spec = SyntheticSpec { samples_per_leaf: *held_out_per_leaf, ..spec.clone() };
                let test = synthesize_samples(&test_spec, &prototypes, 1)?;
                Problem::new(&train, &test)
            }
            DataSource::Files { train, test } => Problem::new(&read_samples(train)?, &read_samples(test)?),
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: AttentionParams,
    pub c1: f64,
    pub c2: f64,
    pub step: usize,
}

impl TrainState {
    pub fn init(config: &TrainConfig, dim: usize) -> Result<Self> {
        // decorrelate from the data stream, which uses the same seed
        let params = init_attention(dim, config.seed ^ 0x9e37_79b9_7f4a_7c15, config.init_scale)?;
        Ok(TrainState { params, c1: config.c1_init, c2: config.c2_init, step: 0 })
    }
}

/// Loss, gradients, and trace of one full-batch step before the update.
#[derive(Debug, Clone)]
pub struct StepEval {
    pub trace: StepTrace,
    pub solution: IntermediateSolution,
    pub grad_w_q: Array2<f64>,
    pub grad_w_k: Array2<f64>,
    pub grad_w_v: Array2<f64>,
}

struct SampleTerms {
    surrogate: f64,
    text: f64,
    visual: f64,
    cross: f64,
    g_q: Array2<f64>,
    g_k: Array2<f64>,
    g_v: Array2<f64>,
    gc1: f64,
    gc2: f64,
    gc3: f64,
}

/// Per-step loss knobs.
#[derive(Debug, Clone, Copy)]
pub struct LossWeights {
    pub alpha: f64,
    pub temperature: f64,
}

fn sample_terms(
    problem: &Problem,
    params: &AttentionParams,
    sample: &PreparedSample,
    visual: &Array2<f64>,
    cache: &AttentionCache,
    (c1, c2, c3): (f64, f64, f64),
    weights: LossWeights,
) -> Result<SampleTerms> {
    let alpha = weights.alpha;
    let (surrogate, mut dv) = surrogate_task_loss_grad(visual.view(), &problem.candidates, &sample.truth, weights.temperature)?;
    let text = in_modal_lifted(sample.text.view(), c1)?;
    let vis = in_modal_lifted(visual.view(), c2)?;
    let cross = cross_modal_lifted(visual.view(), sample.text.view(), c3)?;
    dv.scaled_add(alpha, &vis.features);
    dv.scaled_add(alpha, &cross.visual);
    let g = cross_attention_backward(problem.queries.view(), sample.tokens.view(), params, cache, dv.view());
    Ok(SampleTerms {
        surrogate,
        text: text.report.total,
        visual: vis.report.total,
        cross: cross.report.total,
        g_q: g.w_q,
        g_k: g.w_k,
        g_v: g.w_v,
        gc1: alpha * text.c,
        gc2: alpha * vis.c,
        gc3: alpha * cross.c,
    })
}

/// Extracts visual trees for a set of samples.
pub fn extract_all(problem: &Problem, params: &AttentionParams, samples: &[PreparedSample]) -> Result<Vec<(Array2<f64>, AttentionCache)>> {
    samples
        .par_iter()
        .map(|s| cross_attention_forward(problem.queries.view(), s.tokens.view(), params))
        .collect()
}

/// Shared `r` for both distance terms: norm of the mean of every text and
/// visual tangent feature in the batch.
pub fn batch_radius(samples: &[PreparedSample], visual: &[(Array2<f64>, AttentionCache)]) -> Result<RadiusParameter> {
    let rows: Vec<Vec<f64>> = samples
        .iter()
        .flat_map(|s| s.text.rows().into_iter().map(|r| r.to_vec()))
        .chain(visual.iter().flat_map(|(v, _)| v.rows().into_iter().map(|r| r.to_vec())))
        .collect();
    compute_r(&rows)
}

/// Loss and gradients at `state` over the training split.
///
/// `r` enters as a constant: its dependence on the features and, through
/// clamping, on the curvatures is not differentiated.
pub fn evaluate_step(problem: &Problem, state: &TrainState, config: &TrainConfig, r_override: Option<RadiusParameter>) -> Result<StepEval> {
    let c_min = Curvature::with_floor(config.c_min, config.c_min)?;
    let c1 = Curvature::with_floor(state.c1, config.c_min)?;
    let c2 = Curvature::with_floor(state.c2, config.c_min)?;
    let visual = extract_all(problem, &state.params, &problem.train)?;

    let (r, r_clamped) = match (r_override, config.r_policy) {
        (Some(r), _) => (r, false),
        (None, RadiusPolicy::Fixed(r)) => (RadiusParameter::fixed(r)?, false),
        (None, RadiusPolicy::BatchComputed) => {
            let cert = r_min_threshold(c1, c2, c_min)?;
            batch_radius(&problem.train, &visual)?.clamp_to(&cert)
        }
    };
    let sol = solve_intermediate_with_floor(c1, c2, r, config.tol, c_min)?;
    let c3 = sol.c3_star.get();
    let weights = LossWeights { alpha: config.alpha, temperature: config.temperature };

    let terms: Vec<SampleTerms> = problem
        .train
        .par_iter()
        .zip(&visual)
        .map(|(s, (v, cache))| sample_terms(problem, &state.params, s, v, cache, (state.c1, state.c2, c3), weights))
        .collect::<Result<_>>()?;

    // sequential reduction keeps the floating-point sum order fixed
    let n = terms.len() as f64;
    let d = problem.dim();
    let (mut g_q, mut g_k, mut g_v) = (Array2::zeros((d, d)), Array2::zeros((d, d)), Array2::zeros((d, d)));
    let (mut surrogate, mut text, mut vis, mut cross) = (0.0, 0.0, 0.0, 0.0);
    let (mut gc1, mut gc2, mut gc3) = (0.0, 0.0, 0.0);
    for t in &terms {
        surrogate += t.surrogate;
        text += t.text;
        vis += t.visual;
        cross += t.cross;
        g_q += &t.g_q;
        g_k += &t.g_k;
        g_v += &t.g_v;
        gc1 += t.gc1;
        gc2 += t.gc2;
        gc3 += t.gc3;
    }
    let (surrogate, text, vis, cross) = (surrogate / n, text / n, vis / n, cross / n);
    let (gc1, gc2, gc3) = (gc1 / n, gc2 / n, gc3 / n);
    for g in [&mut g_q, &mut g_k, &mut g_v] {
        *g /= n;
    }

    let trace = StepTrace {
        step: state.step,
        c1: state.c1,
        c2: state.c2,
        c3_star: c3,
        dc3_dc1: sol.dc3_dc1,
        dc3_dc2: sol.dc3_dc2,
        stationarity_residual: sol.stationarity_residual,
        r: r.r,
        r_clamped,
        certified: sol.certified,
        surrogate,
        text_entailment: text,
        visual_entailment: vis,
        cross_modal: cross,
        total: surrogate + config.alpha * (text + vis + cross),
        grad_c1: gc1 + gc3 * sol.dc3_dc1,
        grad_c2: gc2 + gc3 * sol.dc3_dc2,
    };
    Ok(StepEval { trace, solution: sol, grad_w_q: g_q, grad_w_k: g_k, grad_w_v: g_v })
}

fn learning_rate(config: &TrainConfig, step: usize, base: f64) -> f64 {
    if config.cosine_schedule {
        let progress = step as f64 / config.epochs as f64;
        0.5 * base * (1.0 + (std::f64::consts::PI * progress).cos())
    } else {
        base
    }
}

/// One full-batch step: evaluate, then descend on the attention projections
/// and both curvatures, projecting the curvatures back to `[c_min, ∞)`.
pub fn train_step(problem: &Problem, state: &TrainState, config: &TrainConfig) -> Result<(TrainState, StepTrace)> {
    let eval = evaluate_step(problem, state, config, None)?;
    let trace = eval.trace;
    if !trace.losses_finite() || !trace.grad_c1.is_finite() || !trace.grad_c2.is_finite() {
        return Err(Error::NonFiniteLoss { step: state.step, trace: Box::new(trace) });
    }
    let lr = learning_rate(config, state.step, config.lr);
    let lr_c = learning_rate(config, state.step, config.curvature_lr.unwrap_or(config.lr));

    let norm = [&eval.grad_w_q, &eval.grad_w_k, &eval.grad_w_v]
        .iter()
        .map(|g| g.iter().map(|x| x * x).sum::<f64>())
        .sum::<f64>()
        .sqrt();
    let scale = match config.grad_clip {
        Some(clip) if norm > clip => clip / norm,
        _ => 1.0,
    };
    let clip_scalar = |g: f64| match config.grad_clip {
        Some(clip) => g.clamp(-clip, clip),
        None => g,
    };

    let mut params = state.params.clone();
    params.w_q.scaled_add(-lr * scale, &eval.grad_w_q);
    params.w_k.scaled_add(-lr * scale, &eval.grad_w_k);
    params.w_v.scaled_add(-lr * scale, &eval.grad_w_v);
    let c1 = (state.c1 - lr_c * clip_scalar(trace.grad_c1)).max(config.c_min);
    let c2 = (state.c2 - lr_c * clip_scalar(trace.grad_c2)).max(config.c_min);
    Ok((TrainState { params, c1, c2, step: state.step + 1 }, trace))
}

/// Hierarchical scores: a node's score is the sum of per-level log-softmax
/// probabilities along its path; the root scores 0.
pub fn predict(problem: &Problem, params: &AttentionParams, samples: &[PreparedSample], temperature: f64) -> Result<PredictionTable> {
    let tax = &problem.taxonomy;
    let visual = extract_all(problem, params, samples)?;
    let rows: Vec<Vec<f64>> = visual
        .par_iter()
        .map(|(v, _)| {
            let mut local = vec![0.0; tax.len()];
            for (i, nodes) in problem.level_nodes.iter().enumerate() {
                let (logits, _, _) = cosine_logits(&v.row(i).to_vec(), problem.candidates[i].view(), temperature);
                for (node, lp) in nodes.iter().zip(log_softmax(&logits)) {
                    local[*node] = lp;
                }
            }
            (0..tax.len()).map(|node| tax.path(node).iter().map(|&a| local[a]).sum()).collect::<Vec<f64>>()
        })
        .collect();
    PredictionTable::new(tax, samples.iter().map(|s| s.leaf).collect(), rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub metrics: MetricReport,
    pub final_c1: f64,
    pub final_c2: f64,
    pub final_c3: f64,
    pub traces: Vec<StepTrace>,
}

pub struct Experiment {
    pub report: ExperimentReport,
    pub problem: Problem,
    pub state: TrainState,
    pub predictions: PredictionTable,
}

/// Loads data, trains for `epochs` steps, and evaluates on the held-out split.
pub fn run_experiment(config: &TrainConfig) -> Result<Experiment> {
    config.validate()?;
    let problem = Problem::load(&config.data, config.seed)?;
    let mut state = TrainState::init(config, problem.dim())?;
    let mut traces = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let (next, trace) = train_step(&problem, &state, config)?;
        traces.push(trace);
        state = next;
    }
    let final_eval = evaluate_step(&problem, &state, config, None)?;
    let predictions = predict(&problem, &state.params, &problem.test, config.temperature)?;
    let metrics = evaluate(&problem.taxonomy, &predictions, config.treecuts, config.seed)?;
    let report = ExperimentReport {
        config: config.clone(),
        metrics,
        final_c1: state.c1,
        final_c2: state.c2,
        final_c3: final_eval.trace.c3_star,
        traces,
    };
    Ok(Experiment { report, problem, state, predictions })
}

impl Experiment {
    /// Writes `report.json`, `traces.jsonl`, `predictions.jsonl`, and
    /// `taxonomy.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_pretty(&dir.join("report.json"), &self.report)?;
        write_pretty(&dir.join("taxonomy.json"), &self.problem.taxonomy.to_file())?;
        write_lines(&dir.join("traces.jsonl"), &self.report.traces)?;
        write_lines(&dir.join("predictions.jsonl"), &self.predictions.to_records(&self.problem.taxonomy))
    }
}

pub fn write_pretty<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

pub fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path).map_err(|e| io_error(path, e))?);
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n").map_err(|e| io_error(path, e))?;
    }
    out.flush().map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            data: DataSource::Synthetic {
                spec: SyntheticSpec { dim: 8, samples_per_leaf: 2, ..Default::default() },
                held_out_per_leaf: 2,
            },
            ..Default::default()
        }
    }

    #[test]
    fn uniform_similarities_give_log_candidates() {
        let visual = Array2::from_shape_vec((2, 2), vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        // every candidate orthogonal to the query row → equal logits
        let cands = vec![
            Array2::from_shape_vec((3, 2), vec![0.0, 1.0, 0.0, 2.0, 0.0, -1.0]).unwrap(),
            Array2::from_shape_vec((3, 2), vec![1.0, 0.0, 3.0, 0.0, -2.0, 0.0]).unwrap(),
        ];
        let (loss, _) = surrogate_task_loss_grad(visual.view(), &cands, &[0, 2], 0.3).unwrap();
        assert!((loss - 2.0 * 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn separable_instance_low_loss() {
        let visual = Array2::from_shape_vec((1, 3), vec![0.0, 2.0, 0.0]).unwrap();
        let cands = vec![Array2::from_shape_vec((3, 3), vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]).unwrap()];
        let (loss, _) = surrogate_task_loss_grad(visual.view(), &cands, &[1], 0.01).unwrap();
        assert!(loss < 1e-3);
        assert!(surrogate_task_loss_grad(visual.view(), &cands, &[3], 0.01).is_err());
    }

    #[test]
    fn zero_lr_leaves_state_bit_identical() {
        let mut config = small_config();
        config.lr = 0.0;
        config.curvature_lr = Some(0.0);
        let problem = Problem::load(&config.data, config.seed).unwrap();
        let state = TrainState::init(&config, problem.dim()).unwrap();
        let (next, _) = train_step(&problem, &state, &config).unwrap();
        assert_eq!(next.params, state.params);
        assert_eq!(next.c1, state.c1);
        assert_eq!(next.c2, state.c2);
    }

    #[test]
    fn epochs_zero_rejected() {
        let config = TrainConfig { epochs: 0, ..small_config() };
        assert!(matches!(run_experiment(&config), Err(Error::Contract(_))));
    }

    #[test]
    fn equal_curvatures_give_c3_at_step_zero() {
        let config = small_config();
        let problem = Problem::load(&config.data, config.seed).unwrap();
        let state = TrainState::init(&config, problem.dim()).unwrap();
        let eval = evaluate_step(&problem, &state, &config, None).unwrap();
        assert_eq!(eval.trace.c3_star, config.c1_init);
    }

    #[test]
    fn totals_and_brackets() {
        let exp = run_experiment(&small_config()).unwrap();
        for t in &exp.report.traces {
            assert_eq!(t.total, t.surrogate + 0.5 * (t.text_entailment + t.visual_entailment + t.cross_modal));
            assert!(t.c3_star >= t.c1.min(t.c2) && t.c3_star <= t.c1.max(t.c2));
        }
    }
}
