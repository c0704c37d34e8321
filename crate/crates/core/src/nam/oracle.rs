//! Reference computations for [`attribute`](super::attribute): explicit
//! path enumeration and central finite differences. Both are meant for
//! small graphs.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};

use super::{check_query, intra_layer_jacobian, receptive_field, AttributionError, AttributionQuery, AttributionResult};
use crate::graph::NormalizedAdjacency;
use crate::model::{ForwardTrace, GcnModel};
use crate::scalar::Scalar;

/// Default cap on enumerated paths.
pub const DEFAULT_PATH_LIMIT: u128 = 1_000_000;

/// Attribution by enumerating every node sequence
/// `u_0 → u_1 → … → u_K = v` in which consecutive nodes share an entry of
/// the propagation operator (self-loops included).
///
/// Each path contributes the matrix product
/// `Π_l Â_{u_l u_{l+1}} · J^(l)(u_{l+1})`, whose column `c` is that
/// path's share of the gradient with respect to `x_{u_0}`.
pub fn path_enumeration<T: Scalar>(
    model: &GcnModel<T>,
    trace: &ForwardTrace<T>,
    query: AttributionQuery,
    limit: u128,
) -> Result<AttributionResult<T>, AttributionError> {
    check_query(model, trace, &query)?;
    let adj = &trace.adjacency;
    let depth = model.depth();

    let paths = count_paths(adj, query.node, depth);
    if paths > limit {
        return Err(AttributionError::TooManyPaths { paths, limit });
    }

    // Jacobians are looked up per (layer, node) but never combined across
    // paths: every path multiplies its own chain from scratch.
    let mut jacobians: BTreeMap<(usize, usize), Array2<T>> = BTreeMap::new();
    let mut jacobian = |layer: usize, node: usize| -> Result<Array2<T>, AttributionError> {
        if let Some(j) = jacobians.get(&(layer, node)) {
            return Ok(j.clone());
        }
        let j = intra_layer_jacobian(model, trace, layer, node)?.matrix;
        jacobians.insert((layer, node), j.clone());
        Ok(j)
    };

    let width = model.input_dim();
    let mut gradient: BTreeMap<usize, Array1<T>> = receptive_field(adj, query.node, query.hops)
        .into_iter()
        .map(|n| (n, Array1::zeros(width)))
        .collect();

    // seq[l] is u_l; filled from the output end.
    let mut seq = vec![0usize; depth + 1];
    seq[depth] = query.node;
    // Depth-first walk; each complete sequence is evaluated on its own.
    fn walk<T: Scalar>(
        adj: &NormalizedAdjacency<T>,
        level: usize,
        seq: &mut Vec<usize>,
        visit: &mut dyn FnMut(&[usize]) -> Result<(), AttributionError>,
    ) -> Result<(), AttributionError> {
        if level == 0 {
            return visit(seq);
        }
        let u = seq[level];
        for &(w, _) in adj.row(u) {
            seq[level - 1] = w;
            walk(adj, level - 1, seq, visit)?;
        }
        Ok(())
    }

    let mut visit = |path: &[usize]| -> Result<(), AttributionError> {
        let mut product: Option<Array2<T>> = None;
        for l in 0..depth {
            let (from, to) = (path[l], path[l + 1]);
            let e = adj.get(to, from).expect("path follows stored entries");
            let step = jacobian(l, to)? * e;
            product = Some(match product {
                None => step,
                Some(p) => p.dot(&step),
            });
        }
        let product = product.expect("depth >= 1");
        let column = product.column(query.class);
        gradient
            .get_mut(&path[0])
            .expect("path source lies in the receptive field")
            .scaled_add(T::one(), &column);
        Ok(())
    };
    walk(adj, depth, &mut seq, &mut visit)?;

    Ok(AttributionResult::from_gradients(query, &trace.input, gradient))
}

/// Number of length-`depth` walks ending at `target`.
fn count_paths<T: Scalar>(adj: &NormalizedAdjacency<T>, target: usize, depth: usize) -> u128 {
    let mut counts: BTreeMap<usize, u128> = BTreeMap::from([(target, 1)]);
    for _ in 0..depth {
        let mut next = BTreeMap::new();
        for (&u, &c) in &counts {
            for &(w, _) in adj.row(u) {
                *next.entry(w).or_insert(0u128) += c;
            }
        }
        counts = next;
    }
    counts.values().sum()
}

/// Central-difference estimate of `∂logit_c(v)/∂x_φ`.
///
/// Fails with [`AttributionError::NearKink`] when a ReLU pre-activation
/// that can reach `v` lies within `10·step` of zero, or when a perturbed
/// pass flips any such mask; the estimate would straddle the kink.
pub fn finite_difference_gradient<T: Scalar>(
    model: &GcnModel<T>,
    adj: &NormalizedAdjacency<T>,
    features: &Array2<T>,
    node: usize,
    class: usize,
    source: usize,
    step: T,
) -> Result<Array1<T>, AttributionError> {
    if step.is_nan() || step <= T::zero() {
        return Err(AttributionError::BadStep);
    }
    let forward = |x: &Array2<T>| model.forward(adj, x).map_err(|e| AttributionError::Forward(e.to_string()));
    let base = forward(features)?;
    check_query(
        model,
        &base,
        &AttributionQuery {
            node,
            class,
            hops: model.depth(),
        },
    )?;
    if source >= features.nrows() {
        return Err(AttributionError::NodeOutOfRange {
            node: source,
            num_nodes: features.nrows(),
        });
    }

    // Layer l at node u influences v iff u is within depth-1-l hops of v.
    let depth = model.depth();
    let watched: Vec<(usize, Vec<usize>)> = (0..depth)
        .filter(|&l| model.layers()[l].activation == crate::model::Activation::Relu)
        .map(|l| (l, receptive_field(adj, node, depth - 1 - l)))
        .collect();
    let margin = step * T::of(10.0);
    for (l, nodes) in &watched {
        for &u in nodes {
            for (unit, &z) in base.pre[*l].row(u).iter().enumerate() {
                if z.abs() < margin {
                    return Err(AttributionError::NearKink {
                        layer: *l,
                        node: u,
                        unit,
                        value: z.as_f64(),
                    });
                }
            }
        }
    }
    let same_masks = |t: &ForwardTrace<T>| {
        watched.iter().all(|(l, nodes)| {
            nodes.iter().all(|&u| {
                t.pre[*l]
                    .row(u)
                    .iter()
                    .zip(base.pre[*l].row(u))
                    .all(|(&a, &b)| (a > T::zero()) == (b > T::zero()))
            })
        })
    };

    let two_step = step + step;
    let mut grad = Array1::zeros(features.ncols());
    let mut x = features.clone();
    for i in 0..features.ncols() {
        let original = x[[source, i]];
        x[[source, i]] = original + step;
        let plus = forward(&x)?;
        x[[source, i]] = original - step;
        let minus = forward(&x)?;
        x[[source, i]] = original;
        for t in [&plus, &minus] {
            if !same_masks(t) {
                return Err(AttributionError::MaskFlip { node: source, dim: i });
            }
        }
        let g = (plus.logits()[[node, class]] - minus.logits()[[node, class]]) / two_step;
        if !g.is_finite() {
            return Err(AttributionError::NonFinite);
        }
        grad[i] = g;
    }
    Ok(grad)
}
