//! Recorded-graph reverse-mode differentiation over tensor operations.
//!
//! Every forward pass builds a fresh tape: each method on [`Graph`] runs the
//! op eagerly (delegating to [`super::ops`]), stores the result plus whatever
//! the backward pass will need (unrolled conv columns, pooling argmaxes,
//! dropout masks), and returns a [`NodeId`]. Because nodes are appended in
//! evaluation order, the tape index order *is* a topological order, and
//! [`Graph::backward`] is a single reverse sweep that visits each node once.
//!
//! Parameters are leaves registered under a name; [`Gradients`] exposes both
//! per-parameter and per-node gradients (the latter is what Grad-CAM++ reads
//! from the last convolution).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::ops::{self, ConvGeometry};
use super::rng::Rng;
use super::tensor::Tensor;
use super::NumericsError;

/// Index of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

enum Op {
    /// Input, constant, or parameter. No backward.
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        geometry: ConvGeometry,
        /// Cached im2col matrix from the forward pass.
        cols: Vec<f64>,
    },
    Dense {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Relu {
        x: NodeId,
    },
    MaxPool2d {
        x: NodeId,
        argmax: Vec<usize>,
    },
    /// Elementwise sum of two same-shape tensors (residual joins, scalar
    /// loss totals).
    Add {
        a: NodeId,
        b: NodeId,
    },
    /// Mean over the last (time) axis: `C×H×W -> C×H`.
    MeanOverWidth {
        x: NodeId,
    },
    /// Same data, different shape.
    Reshape {
        x: NodeId,
    },
    /// Elementwise multiply by a frozen factor mask (dropout).
    MulMask {
        x: NodeId,
        factors: Vec<f64>,
    },
    /// Scalar `Σ (x_i - target_i)^2`.
    SumSqDiff {
        x: NodeId,
        target: Vec<f64>,
    },
    /// Scalar stable softmax cross-entropy from logits against a one-hot row.
    CrossEntropyLogits {
        x: NodeId,
        onehot: Vec<f64>,
    },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// A recorded computation. Build with the op methods, then call
/// [`Graph::backward`] from a scalar output (or seed a cotangent).
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, NodeId)>,
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Number of nodes on the tape.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds an input/constant leaf.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf)
    }

    /// Adds a named parameter leaf. Gradients for every registered parameter
    /// appear in [`Gradients::into_param_map`], zero-filled if unused.
    pub fn param(&mut self, name: &str, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf);
        self.params.push((String::from(name), id));
        id
    }

    /// Value computed at `id`.
    pub fn value(&self, id: NodeId) -> Result<&Tensor, NumericsError> {
        self.nodes
            .get(id.0)
            .map(|n| &n.value)
            .ok_or(NumericsError::NodeOutOfGraph {
                index: id.0,
                len: self.nodes.len(),
            })
    }

    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        let kernels = self.value(w)?;
        let bias = match b {
            Some(b) => Some(self.value(b)?),
            None => None,
        };
        let geometry = ConvGeometry::resolve(input, kernels, bias, stride, padding)?;
        let (value, cols) = ops::conv2d_with_cols(input, kernels, bias, stride, padding)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                x,
                w,
                b,
                geometry,
                cols,
            },
        ))
    }

    pub fn dense(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    ) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        let weights = self.value(w)?;
        let bias = match b {
            Some(b) => Some(self.value(b)?),
            None => None,
        };
        let value = ops::dense(input, weights, bias)?;
        Ok(self.push(value, Op::Dense { x, w, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let value = ops::relu(self.value(x)?);
        Ok(self.push(value, Op::Relu { x }))
    }

    pub fn maxpool2d(
        &mut self,
        x: NodeId,
        window: (usize, usize),
        stride: (usize, usize),
    ) -> Result<NodeId, NumericsError> {
        let (value, argmax) = ops::maxpool2d(self.value(x)?, window, stride)?;
        Ok(self.push(value, Op::MaxPool2d { x, argmax }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let value = self.value(a)?.add(self.value(b)?)?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    /// Mean over the time axis of a `C×H×W` node, producing `C×H`.
    pub fn mean_over_width(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        if input.rank() != 3 {
            return Err(NumericsError::ShapeMismatch {
                op: "mean_over_width",
                detail: format!("input {:?} (want rank 3)", input.shape()),
            });
        }
        let (c_n, h, w) = (input.dim(0), input.dim(1), input.dim(2));
        if w == 0 {
            return Err(NumericsError::EmptyInput {
                op: "mean_over_width",
            });
        }
        let mut value = Tensor::zeros(&[c_n, h]);
        {
            let o = value.data_mut();
            let xs = input.data();
            for c in 0..c_n {
                for row in 0..h {
                    let base = (c * h + row) * w;
                    o[c * h + row] = xs[base..base + w].iter().sum::<f64>() / w as f64;
                }
            }
        }
        Ok(self.push(value, Op::MeanOverWidth { x }))
    }

    /// Reshape to a flat rank-1 node.
    pub fn flatten(&mut self, x: NodeId) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        let value = input.reshaped(vec![input.len()])?;
        Ok(self.push(value, Op::Reshape { x }))
    }

    /// Dropout node; identity (and no node state) outside training.
    pub fn dropout(
        &mut self,
        x: NodeId,
        rate: f64,
        rng: &mut Rng,
        training: bool,
    ) -> Result<NodeId, NumericsError> {
        let (value, factors) = ops::dropout(self.value(x)?, rate, rng, training)?;
        match factors {
            Some(factors) => Ok(self.push(value, Op::MulMask { x, factors })),
            None => Ok(self.push(value, Op::Reshape { x })),
        }
    }

    /// Scalar node `Σ_i (x_i - target_i)^2`.
    pub fn sum_sq_diff(&mut self, x: NodeId, target: &[f64]) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        if input.len() != target.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "sum_sq_diff",
                detail: format!("prediction {} values vs target {}", input.len(), target.len()),
            });
        }
        let mut acc = 0.0;
        for (x_i, t_i) in input.data().iter().zip(target) {
            let d = x_i - t_i;
            acc += d * d;
        }
        Ok(self.push(
            Tensor::scalar(acc),
            Op::SumSqDiff {
                x,
                target: target.to_vec(),
            },
        ))
    }

    /// Scalar node `-Σ_c y_c · log softmax(x)_c` computed from logits via the
    /// max-shifted log-sum-exp, so huge logits cannot overflow.
    pub fn cross_entropy_logits(
        &mut self,
        x: NodeId,
        onehot: &[f64],
    ) -> Result<NodeId, NumericsError> {
        let input = self.value(x)?;
        if input.rank() != 1 || input.len() != onehot.len() || onehot.is_empty() {
            return Err(NumericsError::ShapeMismatch {
                op: "cross_entropy_logits",
                detail: format!(
                    "logits {:?} vs one-hot of {} entries",
                    input.shape(),
                    onehot.len()
                ),
            });
        }
        let lse = ops::log_sum_exp(input.data());
        let mut loss = 0.0;
        for (x_c, y_c) in input.data().iter().zip(onehot) {
            loss -= y_c * (x_c - lse);
        }
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropyLogits {
                x,
                onehot: onehot.to_vec(),
            },
        ))
    }

    /// Reverse sweep from a scalar output node, seeding its cotangent with 1.
    pub fn backward(&self, out: NodeId) -> Result<Gradients, NumericsError> {
        self.backward_seeded(out, None)
    }

    /// Reverse sweep from `out`. Non-scalar outputs require an explicit seed
    /// cotangent of matching shape.
    pub fn backward_seeded(
        &self,
        out: NodeId,
        seed: Option<Tensor>,
    ) -> Result<Gradients, NumericsError> {
        let out_node = self
            .nodes
            .get(out.0)
            .ok_or(NumericsError::NodeOutOfGraph {
                index: out.0,
                len: self.nodes.len(),
            })?;
        let seed = match seed {
            Some(s) => {
                if s.shape() != out_node.value.shape() {
                    return Err(NumericsError::ShapeMismatch {
                        op: "backward seed",
                        detail: format!(
                            "seed {:?} vs output {:?}",
                            s.shape(),
                            out_node.value.shape()
                        ),
                    });
                }
                s
            }
            None => {
                if out_node.value.len() != 1 {
                    return Err(NumericsError::NonScalarBackward {
                        len: out_node.value.len(),
                    });
                }
                Tensor::scalar(1.0)
            }
        };

        let mut grads: Vec<Tensor> = self
            .nodes
            .iter()
            .map(|n| Tensor::zeros(n.value.shape()))
            .collect();
        let mut reached = vec![false; self.nodes.len()];
        grads[out.0] = seed;
        reached[out.0] = true;

        for id in (0..=out.0).rev() {
            if !reached[id] {
                continue;
            }
            // Clone the node's gradient so we can accumulate into parent
            // slots; intermediate gradients stay readable afterwards
            // (Grad-CAM++ consumes the one at the last convolution).
            let grad = grads[id].clone();
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::Conv2d {
                    x,
                    w,
                    b,
                    geometry,
                    cols,
                } => {
                    let (gx, gw, gb) = ops::conv2d_backward(
                        &grad,
                        self.value(*w)?,
                        cols,
                        geometry,
                        b.is_some(),
                    );
                    grads[x.0].add_assign(&gx)?;
                    reached[x.0] = true;
                    grads[w.0].add_assign(&gw)?;
                    reached[w.0] = true;
                    if let (Some(b), Some(gb)) = (b, gb) {
                        grads[b.0].add_assign(&gb)?;
                        reached[b.0] = true;
                    }
                }
                Op::Dense { x, w, b } => {
                    let (gx, gw, gb) =
                        ops::dense_backward(&grad, self.value(*x)?, self.value(*w)?, b.is_some());
                    grads[x.0].add_assign(&gx)?;
                    reached[x.0] = true;
                    grads[w.0].add_assign(&gw)?;
                    reached[w.0] = true;
                    if let (Some(b), Some(gb)) = (b, gb) {
                        grads[b.0].add_assign(&gb)?;
                        reached[b.0] = true;
                    }
                }
                Op::Relu { x } => {
                    let gx = ops::relu_backward(&grad, self.value(*x)?);
                    grads[x.0].add_assign(&gx)?;
                    reached[x.0] = true;
                }
                Op::MaxPool2d { x, argmax } => {
                    let gx = ops::maxpool2d_backward(&grad, argmax, self.value(*x)?.shape());
                    grads[x.0].add_assign(&gx)?;
                    reached[x.0] = true;
                }
                Op::Add { a, b } => {
                    grads[a.0].add_assign(&grad)?;
                    reached[a.0] = true;
                    grads[b.0].add_assign(&grad)?;
                    reached[b.0] = true;
                }
                Op::MeanOverWidth { x } => {
                    let input_shape = self.value(*x)?.shape().to_vec();
                    let w_len = input_shape[2];
                    let inv = 1.0 / w_len as f64;
                    let gx_slot = &mut grads[x.0];
                    let g = grad.data();
                    let gxd = gx_slot.data_mut();
                    for (row, gv) in g.iter().enumerate() {
                        let base = row * w_len;
                        for slot in &mut gxd[base..base + w_len] {
                            *slot += gv * inv;
                        }
                    }
                    reached[x.0] = true;
                }
                Op::Reshape { x } => {
                    let gx = grad.reshaped(self.value(*x)?.shape().to_vec())?;
                    grads[x.0].add_assign(&gx)?;
                    reached[x.0] = true;
                }
                Op::MulMask { x, factors } => {
                    let gx_slot = &mut grads[x.0];
                    for ((slot, g), f) in gx_slot
                        .data_mut()
                        .iter_mut()
                        .zip(grad.data())
                        .zip(factors)
                    {
                        *slot += g * f;
                    }
                    reached[x.0] = true;
                }
                Op::SumSqDiff { x, target } => {
                    let g = grad.data()[0];
                    let input = self.value(*x)?;
                    let gx_slot = &mut grads[x.0];
                    for ((slot, x_i), t_i) in gx_slot
                        .data_mut()
                        .iter_mut()
                        .zip(input.data())
                        .zip(target)
                    {
                        *slot += 2.0 * (x_i - t_i) * g;
                    }
                    reached[x.0] = true;
                }
                Op::CrossEntropyLogits { x, onehot } => {
                    let g = grad.data()[0];
                    let probs = ops::softmax(self.value(*x)?)?;
                    let gx_slot = &mut grads[x.0];
                    for ((slot, p), y) in gx_slot
                        .data_mut()
                        .iter_mut()
                        .zip(probs.data())
                        .zip(onehot)
                    {
                        *slot += (p - y) * g;
                    }
                    reached[x.0] = true;
                }
            }
        }

        Ok(Gradients {
            node_grads: grads,
            params: self.params.clone(),
        })
    }
}

/// Result of a backward sweep: one gradient tensor per tape node (zeros for
/// nodes the output does not depend on) plus the parameter name table.
pub struct Gradients {
    node_grads: Vec<Tensor>,
    params: Vec<(String, NodeId)>,
}

impl Gradients {
    /// Gradient w.r.t. an arbitrary node. Ids outside the originating graph
    /// are a lookup error.
    pub fn wrt_node(&self, id: NodeId) -> Result<&Tensor, NumericsError> {
        self.node_grads
            .get(id.0)
            .ok_or(NumericsError::NodeOutOfGraph {
                index: id.0,
                len: self.node_grads.len(),
            })
    }

    /// Gradients of every registered parameter, keyed by name; parameters the
    /// output never touched map to zero tensors.
    pub fn into_param_map(self) -> BTreeMap<String, Tensor> {
        let mut map = BTreeMap::new();
        for (name, id) in &self.params {
            map.insert(name.clone(), self.node_grads[id.0].clone());
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck::{finite_diff_gradient, l2_relative_error};

    /// Composite net: conv -> relu -> maxpool -> flatten -> dense -> CE loss,
    /// every parameter checked against central finite differences.
    #[test]
    fn composite_graph_gradients_match_finite_differences() {
        let mut seed_rng = Rng::new(31);
        let input = Tensor::new(
            vec![1, 4, 6],
            (0..24).map(|_| seed_rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let w_conv = Tensor::new(
            vec![2, 1, 3, 3],
            (0..18).map(|_| seed_rng.uniform(-0.7, 0.7)).collect(),
        )
        .unwrap();
        let b_conv = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        let w_dense = Tensor::new(
            vec![2, 24],
            (0..48).map(|_| seed_rng.uniform(-0.5, 0.5)).collect(),
        )
        .unwrap();
        let b_dense = Tensor::new(vec![2], vec![0.05, -0.05]).unwrap();
        let onehot = [1.0, 0.0];

        let build = |wc: &Tensor, bc: &Tensor, wd: &Tensor, bd: &Tensor| -> (Graph, NodeId) {
            let mut g = Graph::new();
            let x = g.leaf(input.clone());
            let wc = g.param("conv.w", wc.clone());
            let bc = g.param("conv.b", bc.clone());
            let wd = g.param("dense.w", wd.clone());
            let bd = g.param("dense.b", bd.clone());
            let c = g.conv2d(x, wc, Some(bc), (1, 1), (1, 1)).unwrap();
            let r = g.relu(c).unwrap();
            let p = g.maxpool2d(r, (1, 2), (1, 2)).unwrap();
            let f = g.flatten(p).unwrap();
            let d = g.dense(f, wd, Some(bd)).unwrap();
            let loss = g.cross_entropy_logits(d, &onehot).unwrap();
            (g, loss)
        };

        let (graph, loss) = build(&w_conv, &b_conv, &w_dense, &b_dense);
        let grads = graph.backward(loss).unwrap().into_param_map();

        let params: [(&str, &Tensor); 4] = [
            ("conv.w", &w_conv),
            ("conv.b", &b_conv),
            ("dense.w", &w_dense),
            ("dense.b", &b_dense),
        ];
        for (name, tensor) in params {
            let mut f = |theta: &Tensor| -> Result<f64, NumericsError> {
                let (wc, bc, wd, bd) = match name {
                    "conv.w" => (theta, &b_conv, &w_dense, &b_dense),
                    "conv.b" => (&w_conv, theta, &w_dense, &b_dense),
                    "dense.w" => (&w_conv, &b_conv, theta, &b_dense),
                    _ => (&w_conv, &b_conv, &w_dense, theta),
                };
                let (g, loss) = build(wc, bc, wd, bd);
                g.value(loss)?.scalar_value()
            };
            let fd = finite_diff_gradient(&mut f, tensor, 1e-5).unwrap();
            let err = l2_relative_error(grads[name].data(), fd.data());
            assert!(err < 1e-7, "{name}: relative error {err}");
        }
    }

    /// A residual join (x + f(x)) must accumulate both branch gradients.
    #[test]
    fn residual_add_accumulates_both_paths() {
        let input = Tensor::new(vec![1, 1, 4], vec![0.5, -1.0, 2.0, 1.5]).unwrap();
        let w = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();

        let mut g = Graph::new();
        let x = g.leaf(input.clone());
        let w_id = g.param("w", w.clone());
        let conv = g.conv2d(x, w_id, None, (1, 1), (0, 0)).unwrap();
        let joined = g.add(conv, x).unwrap();
        // loss = Σ joined^2 (target 0).
        let loss = g.sum_sq_diff(joined, &[0.0; 4]).unwrap();
        let grads = g.backward(loss).unwrap();

        // d loss / dw = Σ 2·(w+1)·x_i·x_i = 2·4·Σx² ; with w=3: 8·Σx².
        let sum_sq: f64 = input.data().iter().map(|v| v * v).sum();
        let expected_w = 8.0 * sum_sq;
        let got = grads.wrt_node(w_id).unwrap().data()[0];
        assert!((got - expected_w).abs() < 1e-10, "got {got}, want {expected_w}");
    }

    #[test]
    fn unused_parameters_get_zero_gradients() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let _orphan = g.param("orphan", Tensor::filled(&[3], 1.0));
        let loss = g.sum_sq_diff(x, &[0.0, 0.0]).unwrap();
        let grads = g.backward(loss).unwrap().into_param_map();
        assert_eq!(grads["orphan"], Tensor::zeros(&[3]));
    }

    #[test]
    fn backward_from_nonscalar_requires_seed() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let r = g.relu(x).unwrap();
        assert!(matches!(
            g.backward(r),
            Err(NumericsError::NonScalarBackward { len: 3 })
        ));
        let seeded = g
            .backward_seeded(r, Some(Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).unwrap()))
            .unwrap();
        assert_eq!(seeded.wrt_node(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn node_lookup_outside_graph_errors() {
        let mut g = Graph::new();
        let x = g.param("x", Tensor::scalar(2.0));
        let loss = g.sum_sq_diff(x, &[0.0]).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(matches!(
            grads.wrt_node(NodeId(99)),
            Err(NumericsError::NodeOutOfGraph { index: 99, .. })
        ));
        assert!(matches!(
            g.value(NodeId(99)),
            Err(NumericsError::NodeOutOfGraph { index: 99, .. })
        ));
    }

    #[test]
    fn dropout_node_backward_uses_frozen_mask() {
        let input = Tensor::filled(&[32], 1.0);
        let mut rng = Rng::new(11);
        let mut g = Graph::new();
        let x = g.param("x", input.clone());
        let d = g.dropout(x, 0.25, &mut rng, true).unwrap();
        let loss = g.sum_sq_diff(d, &[0.0; 32]).unwrap();
        let grads = g.backward(loss).unwrap();
        let gx = grads.wrt_node(x).unwrap();
        let out = g.value(d).unwrap();
        // d loss/dx_i = 2 * out_i * factor_i: zero where dropped, 2·(4/3)²
        // where kept (input is all ones).
        for (gv, ov) in gx.data().iter().zip(out.data()) {
            if *ov == 0.0 {
                assert_eq!(*gv, 0.0);
            } else {
                let f = 1.0 / 0.75;
                assert!((gv - 2.0 * f * f).abs() < 1e-12);
            }
        }
    }

    /// Same weights, same input, two separate tapes: bitwise-equal gradients.
    #[test]
    fn backward_is_deterministic() {
        let mut rng = Rng::new(99);
        let input = Tensor::new(vec![1, 3, 8], (0..24).map(|_| rng.normal()).collect()).unwrap();
        let w = Tensor::new(vec![2, 1, 3, 3], (0..18).map(|_| rng.normal()).collect()).unwrap();
        let run = || {
            let mut g = Graph::new();
            let x = g.leaf(input.clone());
            let w_id = g.param("w", w.clone());
            let c = g.conv2d(x, w_id, None, (1, 1), (1, 1)).unwrap();
            let r = g.relu(c).unwrap();
            let f = g.flatten(r).unwrap();
            let loss = g.sum_sq_diff(f, &vec![0.25; 48]).unwrap();
            g.backward(loss).unwrap().into_param_map()
        };
        let a = run();
        let b = run();
        for (ga, gb) in a["w"].data().iter().zip(b["w"].data()) {
            assert_eq!(ga.to_bits(), gb.to_bits());
        }
    }
}
