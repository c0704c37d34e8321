//! Seeded random (graph, model, features) instances for checks that need
//! many small networks.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::graph::{NormalizedAdjacency, SparseGraph};
use crate::model::{Activation, ForwardTrace, GcnModel, Layer};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceSpec {
    pub min_nodes: usize,
    pub max_nodes: usize,
    /// Each unordered pair is joined with this probability.
    pub edge_prob: f64,
    /// `[d_0, ..., d_K]`.
    pub dims: Vec<usize>,
    /// Activation of the hidden layers; the output layer is always linear.
    pub hidden_activation: Activation,
    pub with_bias: bool,
}

impl Default for InstanceSpec {
    fn default() -> Self {
        Self {
            min_nodes: 2,
            max_nodes: 20,
            edge_prob: 0.2,
            dims: vec![4, 5, 3],
            hidden_activation: Activation::Relu,
            with_bias: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Instance<T> {
    pub graph: SparseGraph,
    pub adjacency: NormalizedAdjacency<T>,
    pub model: GcnModel<T>,
    pub features: Array2<T>,
}

impl<T: Scalar> Instance<T> {
    pub fn trace(&self) -> ForwardTrace<T> {
        self.model
            .forward(&self.adjacency, &self.features)
            .expect("instance dimensions agree")
    }
}

/// Standard normal features and `N(0, 1/fan_in)` weights; biases are
/// `N(0, 0.25)` when enabled.
pub fn random_instance<T: Scalar>(spec: &InstanceSpec, seed: u64) -> Instance<T> {
    assert!(spec.min_nodes >= 1 && spec.min_nodes <= spec.max_nodes);
    assert!(spec.dims.len() >= 2);
    let mut rng = rng::seeded(seed, 0);
    let normal = move |rng: &mut rng::Rng| -> f64 { StandardNormal.sample(rng) };

    let n = rng.random_range(spec.min_nodes..=spec.max_nodes);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random::<f64>() < spec.edge_prob {
                edges.push((u, v));
            }
        }
    }
    let graph = SparseGraph::new(n, edges).expect("edges are in range");

    let k = spec.dims.len() - 1;
    let layers = (0..k)
        .map(|l| {
            let (d_in, d_out) = (spec.dims[l], spec.dims[l + 1]);
            let scale = 1.0 / (d_in as f64).sqrt();
            let weight = Array2::from_shape_fn((d_in, d_out), |_| T::of(normal(&mut rng) * scale));
            let bias = if spec.with_bias {
                Array1::from_shape_fn(d_out, |_| T::of(normal(&mut rng) * 0.5))
            } else {
                Array1::zeros(d_out)
            };
            let act = if l + 1 == k {
                Activation::Linear
            } else {
                spec.hidden_activation
            };
            Layer::new(weight, bias, act).expect("bias matches weight")
        })
        .collect();
    let model = GcnModel::new(layers).expect("dims chain");
    let features = Array2::from_shape_fn((n, spec.dims[0]), |_| T::of(normal(&mut rng)));
    Instance {
        adjacency: NormalizedAdjacency::build(&graph),
        graph,
        model,
        features,
    }
}
