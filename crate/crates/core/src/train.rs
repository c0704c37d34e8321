//! Full-batch transductive training with softmax cross-entropy and Adam.
//!
//! Backprop is written out per layer: for `Z = Â (H W) + b`,
//! `∂L/∂b = Σ_rows ∂L/∂Z`, `∂L/∂W = Hᵀ Â ∂L/∂Z` and
//! `∂L/∂H = Â ∂L/∂Z Wᵀ` (Â is symmetric), followed by the activation
//! derivative of the previous layer. Weight decay (`λ/2 ‖W‖²`) applies to
//! the first layer's weights only.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, Zip};
use rand::Rng as _;
use thiserror::Error;

use crate::dataset::NodeDataset;
use crate::graph::NormalizedAdjacency;
use crate::model::{accuracy, argmax, column_sums, GcnModel, ModelError};
use crate::rng;
use crate::scalar::Scalar;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite training loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub seed: u64,
    /// Epochs without validation improvement before stopping; `0` disables.
    pub patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 16,
            epochs: 200,
            learning_rate: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            seed: 0,
            patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if self.hidden_dim == 0 {
            return bad("hidden_dim must be positive");
        }
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad("weight_decay must be non-negative");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.epsilon <= 0.0 {
            return bad("Adam constants out of range");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights from the epoch with the best validation accuracy.
    pub model: GcnModel<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl<T> TrainOutcome<T> {
    /// `epoch<TAB>train_loss<TAB>val_acc` lines.
    pub fn log(&self) -> String {
        let mut out = String::new();
        for r in &self.history {
            let _ = writeln!(out, "{}\t{:.6}\t{:.4}", r.epoch, r.train_loss, r.val_acc);
        }
        out
    }
}

struct Adam<T> {
    m: Vec<(Array2<T>, Array1<T>)>,
    v: Vec<(Array2<T>, Array1<T>)>,
    step: i32,
}

impl<T: Scalar> Adam<T> {
    fn new(model: &GcnModel<T>) -> Self {
        let zeros: Vec<_> = model
            .layers()
            .iter()
            .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.len())))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    fn update(&mut self, model: &mut GcnModel<T>, grads: &[(Array2<T>, Array1<T>)], cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
        let lr = T::of(cfg.learning_rate);
        let eps = T::of(cfg.epsilon);
        let c1 = T::one() - b1.powi(self.step);
        let c2 = T::one() - b2.powi(self.step);
        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            let (gw, gb) = &grads[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            let step = |p: &mut T, g: &T, m: &mut T, v: &mut T| {
                *m = b1 * *m + (T::one() - b1) * *g;
                *v = b2 * *v + (T::one() - b2) * *g * *g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            };
            Zip::from(&mut layer.weight).and(gw).and(mw).and(vw).for_each(step);
            Zip::from(&mut layer.bias).and(gb).and(mb).and(vb).for_each(step);
        }
    }
}

/// Intermediates of one (possibly dropped-out) training forward pass.
struct Pass<T> {
    /// Layer inputs after dropout.
    inputs: Vec<Array2<T>>,
    /// Inverted dropout masks (`0` or `1/(1-p)`) per layer input, if any.
    masks: Vec<Option<Array2<T>>>,
    pre: Vec<Array2<T>>,
    logits: Array2<T>,
}

fn forward_pass<T: Scalar>(
    model: &GcnModel<T>,
    adj: &NormalizedAdjacency<T>,
    features: &Array2<T>,
    dropout: f64,
    rng: Option<&mut rng::Rng>,
) -> Pass<T> {
    let mut rng = rng;
    let keep = T::of(1.0 / (1.0 - dropout));
    let mut inputs = Vec::with_capacity(model.depth());
    let mut masks = Vec::with_capacity(model.depth());
    let mut pre = Vec::with_capacity(model.depth());
    let mut current = features.clone();
    for layer in model.layers() {
        let mask = match rng.as_deref_mut() {
            Some(r) if dropout > 0.0 => {
                let m = Array2::from_shape_fn(current.raw_dim(), |_| {
                    if r.random::<f64>() < dropout {
                        T::zero()
                    } else {
                        keep
                    }
                });
                current *= &m;
                Some(m)
            }
            _ => None,
        };
        // Â (H W) equals (Â H) W; projecting first keeps the sparse
        // product on the narrow side.
        let projected = current.dot(&layer.weight);
        let mut z = adj.aggregate(projected.view());
        z += &layer.bias;
        let h = z.mapv(|x| layer.activation.apply(x));
        inputs.push(current);
        masks.push(mask);
        pre.push(z);
        current = h;
    }
    Pass {
        inputs,
        masks,
        pre,
        logits: current,
    }
}

/// Mean cross-entropy over `nodes` and its gradient w.r.t. the logits.
fn softmax_cross_entropy<T: Scalar>(logits: &Array2<T>, labels: &[usize], nodes: &[usize]) -> (f64, Array2<T>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let scale = T::one() / T::of(nodes.len().max(1) as f64);
    let mut loss = T::zero();
    for &i in nodes {
        let row = logits.row(i);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let exp: Vec<T> = row.iter().map(|&z| (z - max).exp()).collect();
        let total: T = exp.iter().copied().sum();
        loss += total.ln() + max - row[labels[i]];
        let mut g = grad.row_mut(i);
        for (k, e) in exp.into_iter().enumerate() {
            g[k] = e / total * scale;
        }
        g[labels[i]] -= scale;
    }
    ((loss * scale).as_f64(), grad)
}

fn backward<T: Scalar>(
    model: &GcnModel<T>,
    adj: &NormalizedAdjacency<T>,
    pass: &Pass<T>,
    grad_logits: Array2<T>,
    weight_decay: f64,
) -> Vec<(Array2<T>, Array1<T>)> {
    let k = model.depth();
    let mut grads = Vec::with_capacity(k);
    let mut dz = grad_logits;
    for l in (0..k).rev() {
        let layer = &model.layers()[l];
        let db = column_sums(&dz);
        let spread = adj.aggregate(dz.view());
        let mut dw = pass.inputs[l].t().dot(&spread);
        if l == 0 && weight_decay > 0.0 {
            dw.scaled_add(T::of(weight_decay), &layer.weight);
        }
        grads.push((dw, db));
        if l > 0 {
            let mut dh = spread.dot(&layer.weight.t());
            if let Some(mask) = &pass.masks[l] {
                dh *= mask;
            }
            let prev = &model.layers()[l - 1];
            Zip::from(&mut dh)
                .and(&pass.pre[l - 1])
                .for_each(|g, &z| *g *= prev.activation.derivative(z));
            dz = dh;
        }
    }
    grads.reverse();
    grads
}

/// Trains a two-layer (ReLU, linear) GCN on the training split, keeping
/// the weights with the best validation accuracy.
///
/// Patience counts epochs in which neither validation accuracy rose nor
/// validation loss fell.
pub fn train<T: Scalar>(dataset: &NodeDataset<T>, config: &TrainConfig) -> Result<TrainOutcome<T>, TrainError> {
    config.validate()?;
    if dataset.splits.train.is_empty() {
        return Err(TrainError::InvalidConfig("training split is empty".into()));
    }
    let adj = NormalizedAdjacency::build(&dataset.graph);
    let mut model = GcnModel::init(
        &[dataset.num_features(), config.hidden_dim, dataset.num_classes],
        config.seed,
    )?;
    let mut adam = Adam::new(&model);
    let mut dropout_rng = rng::seeded(config.seed, 1);

    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (model.clone(), f64::NEG_INFINITY, 0usize, f64::INFINITY);
    let mut best_val_loss = f64::INFINITY;
    let mut stale = 0usize;

    for epoch in 1..=config.epochs {
        let pass = forward_pass(&model, &adj, &dataset.features, config.dropout, Some(&mut dropout_rng));
        let (ce, grad) = softmax_cross_entropy(&pass.logits, &dataset.labels, &dataset.splits.train);
        let l2: f64 = model.layers()[0].weight.iter().map(|w| w.as_f64().powi(2)).sum();
        let train_loss = ce + 0.5 * config.weight_decay * l2;
        if !train_loss.is_finite() {
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        let grads = backward(&model, &adj, &pass, grad, config.weight_decay);
        adam.update(&mut model, &grads, config);

        let eval = forward_pass(&model, &adj, &dataset.features, 0.0, None);
        let preds: Vec<usize> = eval.logits.outer_iter().map(argmax).collect();
        let val_acc = accuracy(&preds, &dataset.labels, &dataset.splits.val);
        let (val_loss, _) = softmax_cross_entropy(&eval.logits, &dataset.labels, &dataset.splits.val);
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_acc,
        });

        // Keep the most accurate weights; among equally accurate epochs the
        // one with the lowest validation loss wins.
        let mut improved = false;
        if val_acc > best.1 || (val_acc == best.1 && val_loss < best.3) {
            best = (model.clone(), val_acc, epoch, val_loss);
            improved = true;
        }
        if val_loss < best_val_loss {
            best_val_loss = val_loss;
            improved = true;
        }
        stale = if improved { 0 } else { stale + 1 };
        if config.patience > 0 && stale >= config.patience {
            break;
        }
    }

    Ok(TrainOutcome {
        model: best.0,
        history,
        best_epoch: best.2,
    })
}

/// Finite-difference view of the training objective, for gradient checks.
#[cfg(test)]
fn objective<T: Scalar>(model: &GcnModel<T>, adj: &NormalizedAdjacency<T>, ds: &NodeDataset<T>, wd: f64) -> f64 {
    let pass = forward_pass(model, adj, &ds.features, 0.0, None);
    let (ce, _) = softmax_cross_entropy(&pass.logits, &ds.labels, &ds.splits.train);
    let l2: f64 = model.layers()[0].weight.iter().map(|w| w.as_f64().powi(2)).sum();
    ce + 0.5 * wd * l2
}
