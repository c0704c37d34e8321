//! Neighbor-deletion fidelity experiment.
//!
//! For every evaluated node `v`, a fraction `p` of its K-hop neighbors
//! (excluding `v`) is deleted, the graph is renormalized, and the model's
//! prediction at `v` is checked against the label. Deletion order comes
//! either from node attributions on the unperturbed graph or from a seeded
//! random permutation. Each node is evaluated on its own perturbed graph.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::NodeDataset;
use crate::graph::{NormalizedAdjacency, SparseGraph};
use crate::model::{argmax, GcnModel, ModelError};
use crate::nam::{attribute, rank_nodes, AttributionError, AttributionQuery, AttributionResult, RankOrder};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum PerturbError {
    #[error("invalid perturbation configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Attribution(#[from] AttributionError),
    #[error(transparent)]
    Graph(#[from] crate::graph::GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Nam,
    Random,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Nam => "nam",
            Strategy::Random => "random",
        }
    }
}

/// How deleted nodes are taken out of the propagation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeletionMode {
    /// Drop every edge of a deleted node and renormalize the operator.
    #[default]
    Renormalize,
    /// Keep the original operator but zero the deleted nodes' features.
    ZeroFeatures,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSplit {
    #[default]
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationConfig {
    /// Strictly ascending fractions in `[0, 1]`.
    pub p_values: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub rank_order: RankOrder,
    pub num_random_seeds: usize,
    /// Random seeds are `seed, seed + 1, …`.
    pub seed: u64,
    /// Neighborhood radius; defaults to the model depth.
    pub hops: Option<usize>,
    pub split: TargetSplit,
    pub mode: DeletionMode,
}

impl Default for PerturbationConfig {
    fn default() -> Self {
        Self {
            p_values: (0..10).map(|i| i as f64 / 10.0).collect(),
            strategies: vec![Strategy::Nam, Strategy::Random],
            rank_order: RankOrder::SignedDesc,
            num_random_seeds: 5,
            seed: 0,
            hops: None,
            split: TargetSplit::Test,
            mode: DeletionMode::Renormalize,
        }
    }
}

impl PerturbationConfig {
    pub fn validate(&self) -> Result<(), PerturbError> {
        let bad = |m: String| Err(PerturbError::InvalidConfig(m));
        if self.p_values.is_empty() {
            return bad("p_values is empty".into());
        }
        if let Some(p) = self.p_values.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return bad(format!("p = {p} is outside [0, 1]"));
        }
        if self.p_values.windows(2).any(|w| w[0] >= w[1]) {
            return bad("p_values must be strictly ascending".into());
        }
        if self.num_random_seeds == 0 {
            return bad("num_random_seeds must be at least 1".into());
        }
        if self.strategies.is_empty() {
            return bad("no strategy requested".into());
        }
        if self.hops == Some(0) {
            return bad("hops must be positive".into());
        }
        Ok(())
    }
}

/// Number of neighbors deleted at fraction `p`: `floor(count · p)`.
///
/// A relative slack of 1e-9 keeps products such as `100 · 0.29` from
/// rounding just below an integer.
pub fn deletion_count(count: usize, p: f64) -> usize {
    let exact = count as f64 * p;
    ((exact + 1e-9 * exact.max(1.0)).floor() as usize).min(count)
}

/// Deletion order for `node`; the deletion set at fraction `p` is the
/// prefix of length [`deletion_count`], so sets are nested in `p`.
pub fn deletion_order<T: Scalar>(
    result: &AttributionResult<T>,
    graph: &SparseGraph,
    node: usize,
    hops: usize,
    strategy: Strategy,
    order: RankOrder,
    seed: u64,
) -> Result<Vec<usize>, PerturbError> {
    match strategy {
        Strategy::Nam => Ok(rank_nodes(result, order, true)),
        Strategy::Random => random_order(graph, node, hops, seed),
    }
}

/// Seeded uniform permutation of the K-hop neighbors of `node`. The
/// generator stream is the node id, so orders do not depend on which
/// other nodes are evaluated.
pub fn random_order(graph: &SparseGraph, node: usize, hops: usize, seed: u64) -> Result<Vec<usize>, PerturbError> {
    let mut candidates: Vec<usize> = graph
        .k_hop_neighborhood(node, hops)?
        .into_iter()
        .filter(|&u| u != node)
        .collect();
    candidates.shuffle(&mut rng::seeded(seed, node as u64));
    Ok(candidates)
}

/// The nodes deleted around `node` at fraction `p`.
#[allow(clippy::too_many_arguments)]
pub fn deletion_set<T: Scalar>(
    result: &AttributionResult<T>,
    graph: &SparseGraph,
    node: usize,
    hops: usize,
    p: f64,
    strategy: Strategy,
    order: RankOrder,
    seed: u64,
) -> Result<HashSet<usize>, PerturbError> {
    let ranked = deletion_order(result, graph, node, hops, strategy, order, seed)?;
    let k = deletion_count(ranked.len(), p);
    Ok(ranked.into_iter().take(k).collect())
}

/// Evaluates a single node's logits on a graph with some nodes deleted,
/// touching only that node's receptive field.
///
/// Equivalent to `remove_nodes` + `NormalizedAdjacency::build` +
/// `GcnModel::forward` and reading one row, up to rounding: the first
/// layer uses the precomputed projection `X W^(1)`.
pub struct LocalEvaluator<'a, T> {
    model: &'a GcnModel<T>,
    graph: &'a SparseGraph,
    projected: Array2<T>,
}

impl<'a, T: Scalar> LocalEvaluator<'a, T> {
    pub fn new(model: &'a GcnModel<T>, graph: &'a SparseGraph, features: &Array2<T>) -> Result<Self, ModelError> {
        if features.ncols() != model.input_dim() || features.nrows() != graph.num_nodes() {
            return Err(ModelError::Dimension(format!(
                "features are {}x{}, expected {}x{}",
                features.nrows(),
                features.ncols(),
                graph.num_nodes(),
                model.input_dim()
            )));
        }
        Ok(Self {
            model,
            graph,
            projected: features.dot(&model.layers()[0].weight),
        })
    }

    /// Propagation row of `u` (self included, ascending ids) after deletion.
    fn row(&self, u: usize, deleted: &HashSet<usize>, mode: DeletionMode) -> Vec<(usize, T)> {
        let g = self.graph;
        match mode {
            DeletionMode::ZeroFeatures => {
                let du = g.degree(u) + 1;
                let mut row: Vec<(usize, T)> = g
                    .neighbors(u)
                    .iter()
                    .map(|&w| (w, NormalizedAdjacency::<T>::pair_weight(du, g.degree(w) + 1)))
                    .collect();
                row.push((u, NormalizedAdjacency::<T>::pair_weight(du, du)));
                row.sort_unstable_by_key(|&(w, _)| w);
                row
            }
            DeletionMode::Renormalize => {
                let live = |x: usize| !deleted.contains(&x);
                let degree = |x: usize| {
                    if live(x) {
                        g.neighbors(x).iter().filter(|&&w| live(w)).count() + 1
                    } else {
                        1
                    }
                };
                let du = degree(u);
                let mut row = vec![(u, NormalizedAdjacency::<T>::pair_weight(du, du))];
                if live(u) {
                    row.extend(
                        g.neighbors(u)
                            .iter()
                            .filter(|&&w| live(w))
                            .map(|&w| (w, NormalizedAdjacency::<T>::pair_weight(du, degree(w)))),
                    );
                }
                row.sort_unstable_by_key(|&(w, _)| w);
                row
            }
        }
    }

    pub fn logits(&self, node: usize, deleted: &HashSet<usize>, mode: DeletionMode) -> Array1<T> {
        let depth = self.model.depth();
        // frontier[l] = nodes whose layer-l output is needed.
        let mut frontier: Vec<Vec<usize>> = vec![Vec::new(); depth];
        frontier[depth - 1] = vec![node];
        let mut rows: HashMap<usize, Vec<(usize, T)>> = HashMap::new();
        for l in (0..depth).rev() {
            let mut below = std::collections::BTreeSet::new();
            for &u in &frontier[l] {
                let row = rows.entry(u).or_insert_with(|| self.row(u, deleted, mode));
                below.extend(row.iter().map(|&(w, _)| w));
            }
            if l > 0 {
                frontier[l - 1] = below.into_iter().collect();
            }
        }

        let zero_features = mode == DeletionMode::ZeroFeatures;
        let mut values: BTreeMap<usize, Array1<T>> = BTreeMap::new();
        for (l, layer) in self.model.layers().iter().enumerate() {
            let mut next = BTreeMap::new();
            for &u in &frontier[l] {
                let mut z = if l == 0 {
                    let mut acc = Array1::zeros(layer.output_dim());
                    for &(w, e) in &rows[&u] {
                        if zero_features && deleted.contains(&w) {
                            continue;
                        }
                        acc.scaled_add(e, &self.projected.row(w));
                    }
                    acc
                } else {
                    let mut fused = Array1::zeros(layer.input_dim());
                    for &(w, e) in &rows[&u] {
                        fused.scaled_add(e, &values[&w]);
                    }
                    fused.dot(&layer.weight)
                };
                z += &layer.bias;
                next.insert(u, z.mapv(|x| layer.activation.apply(x)));
            }
            values = next;
        }
        values.remove(&node).expect("central node evaluated")
    }

    pub fn predict(&self, node: usize, deleted: &HashSet<usize>, mode: DeletionMode) -> usize {
        argmax(self.logits(node, deleted, mode).view())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedCurve {
    pub seed: u64,
    pub accuracy: Vec<f64>,
}

/// Accuracy against deletion fraction for one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationCurve {
    pub strategy: Strategy,
    pub p_values: Vec<f64>,
    /// Mean over seeds for the random strategy.
    pub accuracy: Vec<f64>,
    /// Per-seed accuracies; empty for the attribution-ranked strategy.
    pub per_seed: Vec<SeedCurve>,
    pub rank_order: String,
    pub mode: DeletionMode,
    pub hops: usize,
    pub num_targets: usize,
    pub model_checksum: String,
}

impl PerturbationCurve {
    /// Trapezoidal area under accuracy over `p`.
    pub fn area(&self) -> f64 {
        trapezoid(&self.p_values, &self.accuracy)
    }

    pub fn at(&self, p: f64) -> Option<f64> {
        self.p_values.iter().position(|&q| q == p).map(|i| self.accuracy[i])
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| (xs[1] - xs[0]) * (ys[0] + ys[1]) / 2.0)
        .sum()
}

struct NodeOutcome {
    /// Correctness per p for the ranked strategy.
    nam: Vec<bool>,
    /// Correctness per seed, per p.
    random: Vec<Vec<bool>>,
}

/// Runs the deletion experiment for every requested strategy.
///
/// Node evaluations run on the current rayon pool; results are aggregated
/// in node-id order, so output does not depend on scheduling.
pub fn run_perturbation<T: Scalar>(
    model: &GcnModel<T>,
    dataset: &NodeDataset<T>,
    config: &PerturbationConfig,
) -> Result<Vec<PerturbationCurve>, PerturbError> {
    config.validate()?;
    let hops = config.hops.unwrap_or(model.depth());
    let adj = NormalizedAdjacency::build(&dataset.graph);
    let trace = model.forward(&adj, &dataset.features)?;
    let evaluator = LocalEvaluator::new(model, &dataset.graph, &dataset.features)?;
    let targets: Vec<usize> = match config.split {
        TargetSplit::Test => dataset.splits.test.clone(),
        TargetSplit::All => (0..dataset.num_nodes()).collect(),
    };
    let want_nam = config.strategies.contains(&Strategy::Nam);
    let want_random = config.strategies.contains(&Strategy::Random);
    let seeds: Vec<u64> = (0..config.num_random_seeds as u64).map(|s| config.seed + s).collect();
    let empty = HashSet::new();

    let outcomes: Vec<NodeOutcome> = targets
        .par_iter()
        .map(|&v| -> Result<NodeOutcome, PerturbError> {
            let label = dataset.labels[v];
            let baseline = evaluator.predict(v, &empty, config.mode) == label;
            let score = |order: &[usize]| -> Vec<bool> {
                config
                    .p_values
                    .iter()
                    .map(|&p| {
                        let k = deletion_count(order.len(), p);
                        if k == 0 {
                            return baseline;
                        }
                        let deleted: HashSet<usize> = order[..k].iter().copied().collect();
                        evaluator.predict(v, &deleted, config.mode) == label
                    })
                    .collect()
            };

            let nam = if want_nam {
                let mut query = AttributionQuery::predicted(&trace, v)?;
                query.hops = hops;
                let result = attribute(model, &trace, query)?;
                score(&rank_nodes(&result, config.rank_order, true))
            } else {
                Vec::new()
            };
            let random = if want_random {
                seeds
                    .iter()
                    .map(|&seed| random_order(&dataset.graph, v, hops, seed).map(|o| score(&o)))
                    .collect::<Result<_, _>>()?
            } else {
                Vec::new()
            };
            Ok(NodeOutcome { nam, random })
        })
        .collect::<Result<_, _>>()?;

    let n = targets.len().max(1) as f64;
    let fraction = |count: usize| count as f64 / n;
    let checksum = model.checksum();
    let order_name = match config.rank_order {
        RankOrder::SignedDesc => "signed_desc",
        RankOrder::AbsDesc => "abs_desc",
    };
    let curve = |strategy, accuracy, per_seed| PerturbationCurve {
        strategy,
        p_values: config.p_values.clone(),
        accuracy,
        per_seed,
        rank_order: order_name.to_string(),
        mode: config.mode,
        hops,
        num_targets: targets.len(),
        model_checksum: checksum.clone(),
    };

    let mut curves = Vec::new();
    let mut strategies = config.strategies.clone();
    strategies.sort();
    strategies.dedup();
    for strategy in strategies {
        match strategy {
            Strategy::Nam => {
                let acc = (0..config.p_values.len())
                    .map(|i| fraction(outcomes.iter().filter(|o| o.nam[i]).count()))
                    .collect();
                curves.push(curve(Strategy::Nam, acc, Vec::new()));
            }
            Strategy::Random => {
                let per_seed: Vec<SeedCurve> = seeds
                    .iter()
                    .enumerate()
                    .map(|(s, &seed)| SeedCurve {
                        seed,
                        accuracy: (0..config.p_values.len())
                            .map(|i| fraction(outcomes.iter().filter(|o| o.random[s][i]).count()))
                            .collect(),
                    })
                    .collect();
                let mean = (0..config.p_values.len())
                    .map(|i| per_seed.iter().map(|c| c.accuracy[i]).sum::<f64>() / per_seed.len() as f64)
                    .collect();
                curves.push(curve(Strategy::Random, mean, per_seed));
            }
        }
    }
    Ok(curves)
}

/// `strategy<TAB>seed<TAB>p<TAB>accuracy` rows. The ranked strategy uses
/// seed `-`; the random strategy lists each seed and then its mean under
/// seed `mean`.
pub fn curves_to_tsv(curves: &[PerturbationCurve]) -> String {
    let mut out = String::from("strategy\tseed\tp\taccuracy\n");
    for c in curves {
        for s in &c.per_seed {
            for (p, a) in c.p_values.iter().zip(&s.accuracy) {
                let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", c.strategy.name(), s.seed, p, a);
            }
        }
        let tag = if c.per_seed.is_empty() { "-" } else { "mean" };
        for (p, a) in c.p_values.iter().zip(&c.accuracy) {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", c.strategy.name(), tag, p, a);
        }
    }
    out
}

pub fn curves_to_json(curves: &[PerturbationCurve]) -> String {
    let mut s = serde_json::to_string_pretty(curves).expect("curves serialize");
    s.push('\n');
    s
}
