//! The layered GCN: `H^(l) = σ(Â H^(l-1) W^(l) + b^(l))`.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng as _;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::NormalizedAdjacency;
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("checkpoint line {line}: {message}")]
    Checkpoint { line: usize, message: String },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Relu,
    Linear,
}

impl Activation {
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    z
                } else {
                    T::zero()
                }
            }
            Activation::Linear => z,
        }
    }

    /// `σ'(z)`. The ReLU derivative at exactly zero is zero; forward
    /// masks, training backprop and attribution all go through here.
    pub fn derivative<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Linear => T::one(),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Linear => "linear",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "linear" => Some(Activation::Linear),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    /// `d_in × d_out`.
    pub weight: Array2<T>,
    pub bias: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> Layer<T> {
    pub fn new(weight: Array2<T>, bias: Array1<T>, activation: Activation) -> Result<Self, ModelError> {
        if bias.len() != weight.ncols() {
            return Err(ModelError::Dimension(format!(
                "bias has {} entries but weight has {} columns",
                bias.len(),
                weight.ncols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.weight.ncols()
    }

    /// Glorot-uniform weights and zero bias.
    pub fn glorot(input_dim: usize, output_dim: usize, activation: Activation, rng: &mut rng::Rng) -> Self {
        let range = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = Array2::from_shape_fn((input_dim, output_dim), |_| {
            T::of(rng.random_range(-range..range))
        });
        Self {
            weight,
            bias: Array1::zeros(output_dim),
            activation,
        }
    }

    /// `σ(fused · W + b)` row-wise, returning `(pre_activation, activation)`.
    fn transform(&self, fused: ArrayView2<'_, T>) -> (Array2<T>, Array2<T>) {
        let mut pre = fused.dot(&self.weight);
        pre += &self.bias;
        let act = pre.mapv(|z| self.activation.apply(z));
        (pre, act)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel<T> {
    layers: Vec<Layer<T>>,
}

impl<T: Scalar> GcnModel<T> {
    /// Checks that layer dimensions chain. The final layer is expected to
    /// produce logits, so it must be linear.
    pub fn new(layers: Vec<Layer<T>>) -> Result<Self, ModelError> {
        if layers.is_empty() {
            return Err(ModelError::Dimension("a model needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].output_dim() != pair[1].input_dim() {
                return Err(ModelError::Dimension(format!(
                    "layer {l} outputs {} dims but layer {} expects {}",
                    pair[0].output_dim(),
                    l + 1,
                    pair[1].input_dim()
                )));
            }
        }
        if layers.last().map(|l| l.activation) != Some(Activation::Linear) {
            return Err(ModelError::Dimension("the output layer must be linear".into()));
        }
        Ok(Self { layers })
    }

    /// Seeded Glorot initialization. `dims = [d_0, d_1, ..., d_K]`; every
    /// layer but the last uses ReLU.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self, ModelError> {
        if dims.len() < 2 {
            return Err(ModelError::Dimension("need at least input and output dims".into()));
        }
        let mut rng = rng::seeded(seed, 0);
        let k = dims.len() - 1;
        let layers = (0..k)
            .map(|l| {
                let act = if l + 1 == k { Activation::Linear } else { Activation::Relu };
                Layer::glorot(dims[l], dims[l + 1], act, &mut rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub(crate) fn layers_mut(&mut self) -> &mut [Layer<T>] {
        &mut self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.depth() - 1].output_dim()
    }

    /// Deterministic forward pass recording every intermediate.
    pub fn forward(&self, adj: &NormalizedAdjacency<T>, features: &Array2<T>) -> Result<ForwardTrace<T>, ModelError> {
        if features.ncols() != self.input_dim() {
            return Err(ModelError::Dimension(format!(
                "features have {} columns, model expects {}",
                features.ncols(),
                self.input_dim()
            )));
        }
        if features.nrows() != adj.num_nodes() {
            return Err(ModelError::Dimension(format!(
                "features have {} rows, adjacency has {} nodes",
                features.nrows(),
                adj.num_nodes()
            )));
        }
        let mut fused = Vec::with_capacity(self.depth());
        let mut pre = Vec::with_capacity(self.depth());
        let mut act: Vec<Array2<T>> = Vec::with_capacity(self.depth());
        for layer in &self.layers {
            let input = act.last().unwrap_or(features);
            let f = adj.aggregate(input.view());
            let (z, h) = layer.transform(f.view());
            fused.push(f);
            pre.push(z);
            act.push(h);
        }
        Ok(ForwardTrace {
            input: features.clone(),
            fused,
            pre,
            act,
            adjacency: adj.clone(),
        })
    }

    /// Text checkpoint. Values use 17 significant digits, which round-trips
    /// every `f64` exactly.
    pub fn to_checkpoint(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "gcn-nam-checkpoint 1");
        let _ = writeln!(out, "layers {}", self.depth());
        for layer in &self.layers {
            let _ = writeln!(
                out,
                "layer {} {} {}",
                layer.input_dim(),
                layer.output_dim(),
                layer.activation.name()
            );
            for row in layer.weight.outer_iter() {
                write_values(&mut out, "w", row);
            }
            write_values(&mut out, "b", layer.bias.view());
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| ModelError::Checkpoint {
                line: 0,
                message: format!("unexpected end of file, expected {what}"),
            })
        };
        let bad = |line: usize, message: String| ModelError::Checkpoint { line, message };

        let (ln, header) = next("header")?;
        if header.trim() != "gcn-nam-checkpoint 1" {
            return Err(bad(ln, format!("unknown header {header:?}")));
        }
        let (ln, count) = next("layer count")?;
        let depth: usize = count
            .strip_prefix("layers ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| bad(ln, format!("expected `layers <n>`, found {count:?}")))?;

        let mut layers = Vec::with_capacity(depth);
        for _ in 0..depth {
            let (ln, spec) = next("layer header")?;
            let parts: Vec<&str> = spec.split_whitespace().collect();
            let (d_in, d_out, act) = match parts.as_slice() {
                ["layer", i, o, a] => (
                    i.parse::<usize>().map_err(|_| bad(ln, format!("bad input dim {i:?}")))?,
                    o.parse::<usize>().map_err(|_| bad(ln, format!("bad output dim {o:?}")))?,
                    Activation::parse(a).ok_or_else(|| bad(ln, format!("unknown activation {a:?}")))?,
                ),
                _ => return Err(bad(ln, format!("expected `layer <in> <out> <activation>`, found {spec:?}"))),
            };
            let mut weight = Array2::zeros((d_in, d_out));
            for r in 0..d_in {
                let (ln, row) = next("weight row")?;
                let values = parse_values::<T>(ln, row, "w", d_out)?;
                weight.row_mut(r).assign(&values);
            }
            let (ln, row) = next("bias row")?;
            let bias = parse_values::<T>(ln, row, "b", d_out)?;
            layers.push(Layer::new(weight, bias, act)?);
        }
        let (ln, end) = next("end marker")?;
        if end.trim() != "end" {
            return Err(bad(ln, format!("expected `end`, found {end:?}")));
        }
        Self::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        fs::write(path, self.to_checkpoint()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_checkpoint(&text)
    }

    /// SHA-256 of the checkpoint text, hex encoded.
    pub fn checksum(&self) -> String {
        hex::encode(Sha256::digest(self.to_checkpoint().as_bytes()))
    }
}

fn write_values<T: Scalar>(out: &mut String, tag: &str, values: ArrayView1<'_, T>) {
    out.push_str(tag);
    for &v in values {
        let _ = write!(out, " {:.16e}", v.as_f64());
    }
    out.push('\n');
}

fn parse_values<T: Scalar>(line: usize, text: &str, tag: &str, expected: usize) -> Result<Array1<T>, ModelError> {
    let mut parts = text.split_whitespace();
    if parts.next() != Some(tag) {
        return Err(ModelError::Checkpoint {
            line,
            message: format!("expected a `{tag}` row"),
        });
    }
    let values = parts
        .map(|p| {
            p.parse::<T>().map_err(|_| ModelError::Checkpoint {
                line,
                message: format!("bad number {p:?}"),
            })
        })
        .collect::<Result<Vec<T>, _>>()?;
    if values.len() != expected {
        return Err(ModelError::Checkpoint {
            line,
            message: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(Array1::from(values))
}

/// Every intermediate of one deterministic forward pass.
///
/// Layer `l` (0-based) maps `act[l-1]` (or `input` for `l = 0`) to
/// `fused[l] = Â · input`, `pre[l] = fused[l] W + b` and
/// `act[l] = σ(pre[l])`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace<T> {
    pub input: Array2<T>,
    pub fused: Vec<Array2<T>>,
    pub pre: Vec<Array2<T>>,
    pub act: Vec<Array2<T>>,
    pub adjacency: NormalizedAdjacency<T>,
}

impl<T: Scalar> ForwardTrace<T> {
    pub fn depth(&self) -> usize {
        self.act.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.input.nrows()
    }

    pub fn logits(&self) -> &Array2<T> {
        self.act.last().expect("trace has at least one layer")
    }

    /// Activations feeding layer `l`.
    pub fn layer_input(&self, l: usize) -> &Array2<T> {
        if l == 0 {
            &self.input
        } else {
            &self.act[l - 1]
        }
    }

    /// Per-node argmax of the logits.
    pub fn predict(&self) -> Vec<usize> {
        self.logits().outer_iter().map(argmax).collect()
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: ArrayView1<'_, T>) -> usize {
    let mut best = 0;
    for (i, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of `nodes` whose prediction equals the label.
pub fn accuracy(predictions: &[usize], labels: &[usize], nodes: &[usize]) -> f64 {
    if nodes.is_empty() {
        return 0.0;
    }
    let correct = nodes.iter().filter(|&&i| predictions[i] == labels[i]).count();
    correct as f64 / nodes.len() as f64
}

/// Row sums, used for bias gradients.
pub(crate) fn column_sums<T: Scalar>(m: &Array2<T>) -> Array1<T> {
    m.sum_axis(Axis(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::SparseGraph;
    use ndarray::array;

    fn identity_layer(d: usize, act: Activation) -> Layer<f64> {
        Layer::new(Array2::eye(d), Array1::zeros(d), act).unwrap()
    }

    #[test]
    fn identity_network_on_one_node() {
        let model = GcnModel::new(vec![identity_layer(3, Activation::Linear)]).unwrap();
        let adj = NormalizedAdjacency::build(&SparseGraph::empty(1));
        let x = array![[0.3, -1.0, 2.0]];
        let trace = model.forward(&adj, &x).unwrap();
        assert_eq!(trace.logits(), &x);
    }

    #[test]
    fn two_node_average() {
        let model = GcnModel::new(vec![identity_layer(2, Activation::Linear)]).unwrap();
        let adj = NormalizedAdjacency::build(&SparseGraph::new(2, [(0, 1)]).unwrap());
        let x = array![[1.0, 4.0], [3.0, -2.0]];
        let trace = model.forward(&adj, &x).unwrap();
        assert_eq!(trace.logits().row(0).to_vec(), vec![2.0, 1.0]);
    }

    #[test]
    fn two_layers_reach_two_hops() {
        // Star on node 0 with a tail 0-3-4.
        let g = SparseGraph::new(5, [(0, 1), (0, 2), (0, 3), (3, 4)]).unwrap();
        let adj = NormalizedAdjacency::build(&g);
        let model = GcnModel::new(vec![identity_layer(1, Activation::Relu), identity_layer(1, Activation::Linear)]).unwrap();
        let x = array![[1.0], [1.0], [1.0], [1.0], [1.0]];
        let base = model.forward(&adj, &x).unwrap().logits()[[0, 0]];
        let mut x2 = x.clone();
        x2[[4, 0]] = 5.0;
        let moved = model.forward(&adj, &x2).unwrap().logits()[[0, 0]];
        assert!(moved > base);
    }

    #[test]
    fn dimension_mismatch() {
        let model = GcnModel::new(vec![identity_layer(2, Activation::Linear)]).unwrap();
        let adj = NormalizedAdjacency::build(&SparseGraph::empty(1));
        assert!(model.forward(&adj, &array![[1.0, 2.0, 3.0]]).is_err());
        let relu_last = GcnModel::new(vec![identity_layer(2, Activation::Relu)]);
        assert!(relu_last.is_err());
        let broken = GcnModel::new(vec![identity_layer(2, Activation::Relu), identity_layer(3, Activation::Linear)]);
        assert!(broken.is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(array![0.1, 0.9].view()), 1);
        assert_eq!(argmax(array![0.5, 0.5].view()), 0);
        assert_eq!(argmax(array![-1.0, 3.0, 3.0].view()), 1);
    }

    #[test]
    fn relu_derivative_at_zero() {
        assert_eq!(Activation::Relu.derivative(0.0f64), 0.0);
        assert_eq!(Activation::Relu.apply(0.0f64), 0.0);
        assert_eq!(Activation::Relu.derivative(1e-300f64), 1.0);
    }

    #[test]
    fn checkpoint_round_trip_is_bitwise() {
        let model = GcnModel::<f64>::init(&[5, 4, 3], 11).unwrap();
        let back = GcnModel::<f64>::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(model, back);
        for (a, b) in model.layers().iter().zip(back.layers()) {
            for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn f32_checkpoint_round_trip() {
        let model = GcnModel::<f32>::init(&[4, 3, 2], 5).unwrap();
        let back = GcnModel::<f32>::from_checkpoint(&model.to_checkpoint()).unwrap();
        assert_eq!(model, back);
    }

    #[test]
    fn truncated_checkpoint_fails() {
        let text = GcnModel::<f64>::init(&[5, 4, 3], 11).unwrap().to_checkpoint();
        let cut = &text[..text.len() / 2];
        assert!(GcnModel::<f64>::from_checkpoint(cut).is_err());
        let no_end = text.replace("end\n", "");
        assert!(GcnModel::<f64>::from_checkpoint(&no_end).is_err());
    }

    #[test]
    fn header_dimension_mismatch_fails() {
        let text = GcnModel::<f64>::init(&[2, 2], 1).unwrap().to_checkpoint();
        let wrong = text.replacen("layer 2 2", "layer 2 3", 1);
        assert!(GcnModel::<f64>::from_checkpoint(&wrong).is_err());
    }
}
