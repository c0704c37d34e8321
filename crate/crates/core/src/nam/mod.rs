//! Node attribution: how much each node's input features contribute to one
//! node's class logit.
//!
//! The contribution of node `φ` to logit `c` of node `v` is
//! `Σ_i x_{φ,i} · ∂logit_c(v)/∂x_{φ,i}`. The gradient sums the products of
//! per-step factors over every path `φ = u_0 → u_1 → … → u_K = v` through
//! the layered graph, where a step into node `u` at layer `l` contributes
//! the propagation weight `Â_{u_{l-1} u}` times the intra-layer Jacobian
//! `W^(l) diag(σ'(z_u^(l)))`. [`attribute`] evaluates that sum with one
//! reverse sweep; [`oracle::path_enumeration`] evaluates it path by path.

pub mod oracle;

use std::cmp::Ordering;
use std::collections::{BTreeMap, VecDeque};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::NormalizedAdjacency;
use crate::model::{argmax, ForwardTrace, GcnModel};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttributionError {
    #[error("node {node} is out of range ({num_nodes} nodes)")]
    NodeOutOfRange { node: usize, num_nodes: usize },
    #[error("class {class} is out of range ({num_classes} classes)")]
    ClassOutOfRange { class: usize, num_classes: usize },
    #[error("layer {layer} is out of range (model depth {depth})")]
    LayerOutOfRange { layer: usize, depth: usize },
    #[error("{hops} hops cannot cover the receptive field of a depth-{depth} model")]
    HopsBelowDepth { hops: usize, depth: usize },
    #[error("trace does not match model: {0}")]
    TraceMismatch(String),
    #[error("path enumeration would visit {paths} paths, above the limit of {limit}")]
    TooManyPaths { paths: u128, limit: u128 },
    #[error("pre-activation {value:e} of node {node}, layer {layer}, unit {unit} is within the finite-difference step of the ReLU kink")]
    NearKink {
        layer: usize,
        node: usize,
        unit: usize,
        value: f64,
    },
    #[error("perturbing dimension {dim} of node {node} flips a ReLU mask")]
    MaskFlip { node: usize, dim: usize },
    #[error("non-finite value in finite-difference estimate")]
    NonFinite,
    #[error("finite-difference step must be positive")]
    BadStep,
    #[error("forward pass failed: {0}")]
    Forward(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionQuery {
    pub node: usize,
    pub class: usize,
    pub hops: usize,
}

impl AttributionQuery {
    /// Query for the class the model predicts at `node`, over the model's
    /// full receptive field.
    pub fn predicted<T: Scalar>(trace: &ForwardTrace<T>, node: usize) -> Result<Self, AttributionError> {
        if node >= trace.num_nodes() {
            return Err(AttributionError::NodeOutOfRange {
                node,
                num_nodes: trace.num_nodes(),
            });
        }
        Ok(Self {
            node,
            class: argmax(trace.logits().row(node)),
            hops: trace.depth(),
        })
    }
}

/// Contributions for one query.
///
/// `per_node` has an entry for every node in the query's hop
/// neighborhood; every other node contributes exactly zero.
/// `per_dimension` and `gradient` are empty when the result was read back
/// from JSON without gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributionResult<T> {
    pub query: AttributionQuery,
    pub per_node: BTreeMap<usize, T>,
    pub per_dimension: BTreeMap<usize, Array1<T>>,
    pub gradient: BTreeMap<usize, Array1<T>>,
}

impl<T: Scalar> AttributionResult<T> {
    /// Gradient × input, summed per node.
    pub(crate) fn from_gradients(
        query: AttributionQuery,
        input: &Array2<T>,
        gradient: BTreeMap<usize, Array1<T>>,
    ) -> Self {
        let mut per_node = BTreeMap::new();
        let mut per_dimension = BTreeMap::new();
        for (&node, grad) in &gradient {
            let dims = &input.row(node) * grad;
            per_node.insert(node, dims.sum());
            per_dimension.insert(node, dims);
        }
        Self {
            query,
            per_node,
            per_dimension,
            gradient,
        }
    }

    pub fn contribution(&self, node: usize) -> T {
        self.per_node.get(&node).copied().unwrap_or_else(T::zero)
    }

    /// Nodes covered by the result, ascending.
    pub fn nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.per_node.keys().copied()
    }

    pub fn total(&self) -> T {
        self.per_node.values().copied().sum()
    }

    pub fn to_record(&self, include_gradients: bool) -> AttributionRecord<T> {
        AttributionRecord {
            node: self.query.node,
            class: self.query.class,
            hops: self.query.hops,
            contributions: self
                .per_node
                .iter()
                .map(|(&node, &value)| NodeValue { node, value })
                .collect(),
            gradients: include_gradients.then(|| {
                self.gradient
                    .iter()
                    .map(|(&node, g)| NodeGradient {
                        node,
                        gradient: g.to_vec(),
                    })
                    .collect()
            }),
        }
    }

    pub fn from_record(record: AttributionRecord<T>) -> Self {
        let gradient: BTreeMap<usize, Array1<T>> = record
            .gradients
            .unwrap_or_default()
            .into_iter()
            .map(|g| (g.node, Array1::from(g.gradient)))
            .collect();
        Self {
            query: AttributionQuery {
                node: record.node,
                class: record.class,
                hops: record.hops,
            },
            per_node: record.contributions.into_iter().map(|c| (c.node, c.value)).collect(),
            per_dimension: BTreeMap::new(),
            gradient,
        }
    }

    pub fn to_json(&self, include_gradients: bool) -> String {
        serde_json::to_string_pretty(&self.to_record(include_gradients)).expect("record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str::<AttributionRecord<T>>(text).map(Self::from_record)
    }
}

/// JSON shape of an [`AttributionResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AttributionRecord<T> {
    pub node: usize,
    pub class: usize,
    pub hops: usize,
    pub contributions: Vec<NodeValue<T>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradients: Option<Vec<NodeGradient<T>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeValue<T> {
    pub node: usize,
    pub value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NodeGradient<T> {
    pub node: usize,
    pub gradient: Vec<T>,
}

/// `∂h_φ^(l) / ∂fused_φ^(l) = W^(l) diag(σ'(z_φ^(l)))`, laid out
/// `d_in × d_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct IntraLayerJacobian<T> {
    pub layer: usize,
    pub node: usize,
    pub matrix: Array2<T>,
}

/// Jacobian of layer `layer` (0-based) at `node`.
pub fn intra_layer_jacobian<T: Scalar>(
    model: &GcnModel<T>,
    trace: &ForwardTrace<T>,
    layer: usize,
    node: usize,
) -> Result<IntraLayerJacobian<T>, AttributionError> {
    check_trace(model, trace)?;
    if layer >= model.depth() {
        return Err(AttributionError::LayerOutOfRange {
            layer,
            depth: model.depth(),
        });
    }
    check_node(trace, node)?;
    let l = &model.layers()[layer];
    let slope = activation_slope(model, trace, layer, node);
    let matrix = &l.weight * &slope;
    Ok(IntraLayerJacobian { layer, node, matrix })
}

/// `σ'(z_node^(layer))` per output unit.
fn activation_slope<T: Scalar>(model: &GcnModel<T>, trace: &ForwardTrace<T>, layer: usize, node: usize) -> Array1<T> {
    let act = model.layers()[layer].activation;
    trace.pre[layer].row(node).mapv(|z| act.derivative(z))
}

/// Jacobian-vector product `W diag(σ') g` without forming the matrix.
fn pull_back<T: Scalar>(
    model: &GcnModel<T>,
    trace: &ForwardTrace<T>,
    layer: usize,
    node: usize,
    cotangent: ArrayView1<'_, T>,
) -> Array1<T> {
    let gated = &activation_slope(model, trace, layer, node) * &cotangent;
    model.layers()[layer].weight.dot(&gated)
}

fn check_trace<T: Scalar>(model: &GcnModel<T>, trace: &ForwardTrace<T>) -> Result<(), AttributionError> {
    if trace.depth() != model.depth() {
        return Err(AttributionError::TraceMismatch(format!(
            "trace has {} layers, model has {}",
            trace.depth(),
            model.depth()
        )));
    }
    for (l, (layer, pre)) in model.layers().iter().zip(&trace.pre).enumerate() {
        if pre.ncols() != layer.output_dim() || trace.layer_input(l).ncols() != layer.input_dim() {
            return Err(AttributionError::TraceMismatch(format!("layer {l} shapes differ")));
        }
    }
    Ok(())
}

fn check_node<T: Scalar>(trace: &ForwardTrace<T>, node: usize) -> Result<(), AttributionError> {
    if node >= trace.num_nodes() {
        return Err(AttributionError::NodeOutOfRange {
            node,
            num_nodes: trace.num_nodes(),
        });
    }
    Ok(())
}

fn check_query<T: Scalar>(
    model: &GcnModel<T>,
    trace: &ForwardTrace<T>,
    query: &AttributionQuery,
) -> Result<(), AttributionError> {
    check_trace(model, trace)?;
    check_node(trace, query.node)?;
    if query.class >= model.num_classes() {
        return Err(AttributionError::ClassOutOfRange {
            class: query.class,
            num_classes: model.num_classes(),
        });
    }
    if query.hops < model.depth() {
        return Err(AttributionError::HopsBelowDepth {
            hops: query.hops,
            depth: model.depth(),
        });
    }
    Ok(())
}

/// Nodes within `hops` of `center` under the propagation operator.
pub(crate) fn receptive_field<T: Scalar>(adj: &NormalizedAdjacency<T>, center: usize, hops: usize) -> Vec<usize> {
    let mut dist = BTreeMap::from([(center, 0usize)]);
    let mut queue = VecDeque::from([center]);
    while let Some(u) = queue.pop_front() {
        let d = dist[&u];
        if d == hops {
            continue;
        }
        for &(w, _) in adj.row(u) {
            if let std::collections::btree_map::Entry::Vacant(e) = dist.entry(w) {
                e.insert(d + 1);
                queue.push_back(w);
            }
        }
    }
    dist.into_keys().collect()
}

/// Node contributions to `logit_c(v)` by one reverse sweep.
///
/// The cotangent starts as the unit vector of class `c` at node `v`. At
/// each layer it is pulled back through the intra-layer Jacobian of every
/// node it has reached, then spread to that node's neighbors (self
/// included) with the propagation weights.
pub fn attribute<T: Scalar>(
    model: &GcnModel<T>,
    trace: &ForwardTrace<T>,
    query: AttributionQuery,
) -> Result<AttributionResult<T>, AttributionError> {
    check_query(model, trace, &query)?;
    let adj = &trace.adjacency;

    let mut seed = Array1::zeros(model.num_classes());
    seed[query.class] = T::one();
    let mut cotangent: BTreeMap<usize, Array1<T>> = BTreeMap::from([(query.node, seed)]);

    for layer in (0..model.depth()).rev() {
        let width = model.layers()[layer].input_dim();
        let mut next: BTreeMap<usize, Array1<T>> = BTreeMap::new();
        for (&u, g) in &cotangent {
            let fused_grad = pull_back(model, trace, layer, u, g.view());
            for &(w, e) in adj.row(u) {
                next.entry(w)
                    .or_insert_with(|| Array1::zeros(width))
                    .scaled_add(e, &fused_grad);
            }
        }
        cotangent = next;
    }

    let width = model.input_dim();
    let gradient = receptive_field(adj, query.node, query.hops)
        .into_iter()
        .map(|n| {
            let g = cotangent.remove(&n).unwrap_or_else(|| Array1::zeros(width));
            (n, g)
        })
        .collect();
    Ok(AttributionResult::from_gradients(query, &trace.input, gradient))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankOrder {
    /// Largest signed contribution first.
    #[default]
    SignedDesc,
    /// Largest magnitude first.
    AbsDesc,
}

/// Nodes of `result` ordered by contribution, ties by ascending id.
pub fn rank_nodes<T: Scalar>(result: &AttributionResult<T>, order: RankOrder, exclude_central: bool) -> Vec<usize> {
    let key = |x: T| match order {
        RankOrder::SignedDesc => x,
        RankOrder::AbsDesc => x.abs(),
    };
    let mut ranked: Vec<(usize, T)> = result
        .per_node
        .iter()
        .filter(|(&n, _)| !(exclude_central && n == result.query.node))
        .map(|(&n, &c)| (n, key(c)))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0)));
    ranked.into_iter().map(|(n, _)| n).collect()
}
