//! Wengert tape: records kernel applications during the forward pass and
//! replays their VJPs in reverse to accumulate parameter gradients.
//!
//! Every value (leaf or op output) lives in an arena indexed by [`NodeId`];
//! nodes reference only earlier ids, so the list is topologically ordered by
//! construction. Replaying the recorded ops from the leaves reproduces the
//! stored outputs bitwise.

use crate::error::{Error, Result};
use crate::ops;
use crate::param::{ParamId, ParamSet};
use crate::tensor::{Elem, Tensor};

/// Index of a value in the tape arena.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op<E: Elem> {
    Conv1d { x: NodeId, w: NodeId, b: NodeId, dilation: usize },
    BnTrain { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<E>, var: Vec<E> },
    BnEval { x: NodeId, gamma: NodeId, beta: NodeId, mean: Vec<E>, var: Vec<E> },
    Relu { x: NodeId },
    Concat { parts: Vec<NodeId>, splits: Vec<usize> },
    AvgPool { x: NodeId, window: usize, stride: usize, t_in: usize },
    GlobalAvgPool { x: NodeId, t_in: usize },
    Linear { x: NodeId, w: NodeId, b: NodeId },
    SoftmaxCe { logits: NodeId, labels: Vec<usize>, weights: Option<Vec<E>>, dlogits: Tensor<E> },
    SigmoidBce { logits: NodeId, targets: Tensor<E>, dlogits: Tensor<E> },
}

#[derive(Debug, Clone)]
struct Node<E: Elem> {
    op: Op<E>,
    out: NodeId,
}

/// Recorded computation trace for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<E: Elem> {
    values: Vec<Tensor<E>>,
    // For each value: Some(param) if it is a parameter leaf.
    param_of: Vec<Option<ParamId>>,
    nodes: Vec<Node<E>>,
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { values: Vec::new(), param_of: Vec::new(), nodes: Vec::new() }
    }

    /// Number of recorded op nodes.
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Registers a non-parameter input value.
    pub fn leaf(&mut self, value: Tensor<E>) -> NodeId {
        self.push_value(value, None)
    }

    /// Snapshots a parameter value onto the tape. Gradients flowing to this
    /// leaf are accumulated into the parameter by [`Tape::backward`].
    pub fn param(&mut self, params: &ParamSet<E>, id: ParamId) -> NodeId {
        self.push_value(params.get(id).value.clone(), Some(id))
    }

    pub fn value(&self, id: NodeId) -> &Tensor<E> {
        &self.values[id.0]
    }

    fn push_value(&mut self, value: Tensor<E>, param: Option<ParamId>) -> NodeId {
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.param_of.push(param);
        id
    }

    fn push_node(&mut self, op: Op<E>, value: Tensor<E>) -> NodeId {
        let out = self.push_value(value, None);
        self.nodes.push(Node { op, out });
        out
    }

    // ---- recording wrappers -------------------------------------------

    pub fn conv1d_causal(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: NodeId,
        dilation: usize,
    ) -> Result<NodeId> {
        let y = ops::conv1d_causal_forward(self.value(x), self.value(w), self.value(b), dilation)?;
        Ok(self.push_node(Op::Conv1d { x, w, b, dilation }, y))
    }

    /// Train-mode batch normalization; returns the node and the batch
    /// statistics so the caller can update its running estimates.
    pub fn batchnorm1d_train(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
    ) -> Result<(NodeId, Vec<E>, Vec<E>)> {
        let (y, stats) =
            ops::batchnorm1d_train_forward(self.value(x), self.value(gamma), self.value(beta))?;
        let (mean, var) = (stats.mean, stats.var);
        let id = self.push_node(
            Op::BnTrain { x, gamma, beta, mean: mean.clone(), var: var.clone() },
            y,
        );
        Ok((id, mean, var))
    }

    /// Eval-mode batch normalization with frozen running statistics.
    pub fn batchnorm1d_eval(
        &mut self,
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &[E],
        running_var: &[E],
    ) -> Result<NodeId> {
        let y = ops::batchnorm1d_eval_forward(
            self.value(x),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
        )?;
        Ok(self.push_node(
            Op::BnEval {
                x,
                gamma,
                beta,
                mean: running_mean.to_vec(),
                var: running_var.to_vec(),
            },
            y,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let y = ops::relu_forward(self.value(x));
        self.push_node(Op::Relu { x }, y)
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
        let y = ops::concat_channels_forward(&tensors)?;
        let splits: Vec<usize> = tensors.iter().map(|t| t.shape()[1]).collect();
        Ok(self.push_node(Op::Concat { parts: parts.to_vec(), splits }, y))
    }

    pub fn avg_pool1d(&mut self, x: NodeId, window: usize, stride: usize) -> Result<NodeId> {
        let t_in = self.value(x).dims3()?.2;
        let y = ops::avg_pool1d_forward(self.value(x), window, stride)?;
        Ok(self.push_node(Op::AvgPool { x, window, stride, t_in }, y))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let t_in = self.value(x).dims3()?.2;
        let y = ops::global_avg_pool_forward(self.value(x))?;
        Ok(self.push_node(Op::GlobalAvgPool { x, t_in }, y))
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let y = ops::linear_forward(self.value(x), self.value(w), self.value(b))?;
        Ok(self.push_node(Op::Linear { x, w, b }, y))
    }

    /// Records the loss as a scalar node; the exact logit gradient is saved
    /// for backward.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: NodeId,
        labels: &[usize],
        class_weights: Option<&[E]>,
    ) -> Result<NodeId> {
        let (loss, dlogits) =
            ops::softmax_cross_entropy(self.value(logits), labels, class_weights)?;
        Ok(self.push_node(
            Op::SoftmaxCe {
                logits,
                labels: labels.to_vec(),
                weights: class_weights.map(|w| w.to_vec()),
                dlogits,
            },
            Tensor::scalar(loss),
        ))
    }

    pub fn sigmoid_bce(&mut self, logits: NodeId, targets: &Tensor<E>) -> Result<NodeId> {
        let (loss, dlogits) = ops::sigmoid_bce(self.value(logits), targets)?;
        Ok(self.push_node(
            Op::SigmoidBce { logits, targets: targets.clone(), dlogits },
            Tensor::scalar(loss),
        ))
    }

    // ---- backward ------------------------------------------------------

    /// Reverse traversal from the scalar `loss` node. Parameter gradients are
    /// accumulated into `params` (callers zero them between steps); gradients
    /// of non-parameter leaves are discarded.
    pub fn backward(&self, loss: NodeId, params: &mut ParamSet<E>) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward: loss must be a scalar node, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = vec![None; self.values.len()];
        grads[loss.0] = Some(Tensor::scalar(E::one()));

        for node in self.nodes.iter().rev() {
            let Some(g_out) = grads[node.out.0].take() else {
                continue;
            };
            match &node.op {
                Op::Conv1d { x, w, b, dilation } => {
                    let (gx, gw, gb) = ops::conv1d_causal_vjp(
                        self.value(*x),
                        self.value(*w),
                        self.value(*b),
                        *dilation,
                        &g_out,
                    )?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::BnTrain { x, gamma, beta, mean, var } => {
                    let stats = ops::BnBatchStats { mean: mean.clone(), var: var.clone() };
                    let (gx, ggamma, gbeta) = ops::batchnorm1d_train_vjp(
                        self.value(*x),
                        self.value(*gamma),
                        &stats,
                        &g_out,
                    )?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::BnEval { x, gamma, beta, mean, var } => {
                    let (gx, ggamma, gbeta) = ops::batchnorm1d_eval_vjp(
                        self.value(*x),
                        self.value(*gamma),
                        mean,
                        var,
                        &g_out,
                    )?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gamma, ggamma);
                    accumulate(&mut grads, *beta, gbeta);
                }
                Op::Relu { x } => {
                    let gx = ops::relu_vjp(self.value(*x), &g_out)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Concat { parts, splits } => {
                    let part_grads = ops::concat_channels_vjp(&g_out, splits)?;
                    for (p, g) in parts.iter().zip(part_grads) {
                        accumulate(&mut grads, *p, g);
                    }
                }
                Op::AvgPool { x, window, stride, t_in } => {
                    let gx = ops::avg_pool1d_vjp(&g_out, *t_in, *window, *stride)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::GlobalAvgPool { x, t_in } => {
                    let gx = ops::global_avg_pool_vjp(&g_out, *t_in)?;
                    accumulate(&mut grads, *x, gx);
                }
                Op::Linear { x, w, b } => {
                    let (gx, gw, gb) = ops::linear_vjp(
                        self.value(*x),
                        self.value(*w),
                        self.value(*b),
                        &g_out,
                    )?;
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SoftmaxCe { logits, dlogits, .. } | Op::SigmoidBce { logits, dlogits, .. } => {
                    let upstream = g_out.data()[0];
                    let mut g = dlogits.clone();
                    for v in g.data_mut() {
                        *v = *v * upstream;
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
        }

        for (i, g) in grads.into_iter().enumerate() {
            if let (Some(pid), Some(g)) = (self.param_of[i], g) {
                params.accumulate_grad(pid, &g)?;
            }
        }
        Ok(())
    }

    // ---- replay ---------------------------------------------------------

    /// Recomputes every op output from the stored leaves and compares against
    /// the recorded values bitwise. Returns the index of the first divergent
    /// node, or `None` when the trace reproduces exactly.
    pub fn replay_divergence(&self) -> Result<Option<usize>> {
        for (i, node) in self.nodes.iter().enumerate() {
            let recomputed = match &node.op {
                Op::Conv1d { x, w, b, dilation } => ops::conv1d_causal_forward(
                    self.value(*x),
                    self.value(*w),
                    self.value(*b),
                    *dilation,
                )?,
                Op::BnTrain { x, gamma, beta, .. } => {
                    ops::batchnorm1d_train_forward(
                        self.value(*x),
                        self.value(*gamma),
                        self.value(*beta),
                    )?
                    .0
                }
                Op::BnEval { x, gamma, beta, mean, var } => ops::batchnorm1d_eval_forward(
                    self.value(*x),
                    self.value(*gamma),
                    self.value(*beta),
                    mean,
                    var,
                )?,
                Op::Relu { x } => ops::relu_forward(self.value(*x)),
                Op::Concat { parts, .. } => {
                    let tensors: Vec<&Tensor<E>> = parts.iter().map(|&p| self.value(p)).collect();
                    ops::concat_channels_forward(&tensors)?
                }
                Op::AvgPool { x, window, stride, .. } => {
                    ops::avg_pool1d_forward(self.value(*x), *window, *stride)?
                }
                Op::GlobalAvgPool { x, .. } => ops::global_avg_pool_forward(self.value(*x))?,
                Op::Linear { x, w, b } => {
                    ops::linear_forward(self.value(*x), self.value(*w), self.value(*b))?
                }
                Op::SoftmaxCe { logits, labels, weights, .. } => {
                    let (loss, _) = ops::softmax_cross_entropy(
                        self.value(*logits),
                        labels,
                        weights.as_deref(),
                    )?;
                    Tensor::scalar(loss)
                }
                Op::SigmoidBce { logits, targets, .. } => {
                    let (loss, _) = ops::sigmoid_bce(self.value(*logits), targets)?;
                    Tensor::scalar(loss)
                }
            };
            if !recomputed.bit_eq(self.value(node.out)) {
                return Ok(Some(i));
            }
        }
        Ok(None)
    }

}

fn accumulate<E: Elem>(grads: &mut [Option<Tensor<E>>], id: NodeId, g: Tensor<E>) {
    match &mut grads[id.0] {
        Some(existing) => {
            for (e, &v) in existing.data_mut().iter_mut().zip(g.data()) {
                *e = *e + v;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2, 3]).unwrap());
        let mut params = ParamSet::new();
        assert!(matches!(
            tape.backward(x, &mut params).unwrap_err(),
            Error::InvalidArgument(_)
        ));
    }

    #[test]
    fn single_linear_node_grads_match_closed_form() {
        // loss = mean-CE is overkill here; use linear + softmax CE with K=1?
        // K=1 softmax is degenerate, so use a 2-class closed form instead.
        let mut params = ParamSet::<f64>::new();
        let w_id = params
            .insert("w", Tensor::from_vec(&[2, 2], vec![0.5, -0.25, 0.1, 0.3]).unwrap())
            .unwrap();
        let b_id = params.insert("b", Tensor::vector(&[0.0, 0.1]).unwrap()).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let w = tape.param(&params, w_id);
        let b = tape.param(&params, b_id);
        let logits = tape.linear(x, w, b).unwrap();
        let loss = tape.softmax_cross_entropy(logits, &[0], None).unwrap();
        tape.backward(loss, &mut params).unwrap();

        // Closed form: dlogits = softmax - onehot; gw = dlogits^T x; gb = dlogits.
        let z0: f64 = 0.5 * 1.0 + (-0.25) * 2.0;
        let z1: f64 = 0.1 * 1.0 + 0.3 * 2.0 + 0.1;
        let m = z0.max(z1);
        let p0 = (z0 - m).exp() / ((z0 - m).exp() + (z1 - m).exp());
        let d = [p0 - 1.0, 1.0 - p0];
        let gw = params.get(w_id).grad.data();
        let gb = params.get(b_id).grad.data();
        for (got, expect) in gw.iter().zip([d[0], d[0] * 2.0, d[1], d[1] * 2.0]) {
            assert!((got - expect).abs() < 1e-12);
        }
        for (got, expect) in gb.iter().zip(d) {
            assert!((got - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn unused_parameter_keeps_zero_grad() {
        let mut params = ParamSet::<f64>::new();
        let used = params.insert("used", Tensor::from_vec(&[1, 2], vec![1.0, 1.0]).unwrap())
            .unwrap();
        let unused = params.insert("unused", Tensor::full(&[4], 2.0).unwrap()).unwrap();
        let b = params.insert("b", Tensor::vector(&[0.0]).unwrap()).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let w = tape.param(&params, used);
        let bias = tape.param(&params, b);
        let y = tape.linear(x, w, bias).unwrap();
        // 2 rows, 1 output each; treat as 1-class BCE target 1.
        let targets = Tensor::full(&[2, 1], 1.0).unwrap();
        let loss = tape.sigmoid_bce(y, &targets).unwrap();
        tape.backward(loss, &mut params).unwrap();

        assert!(params.get(unused).grad.data().iter().all(|&g| g == 0.0));
        assert!(params.get(used).grad.data().iter().any(|&g| g != 0.0));
    }

    #[test]
    fn repeated_backward_passes_are_bitwise_identical() {
        let run = || {
            let mut params = ParamSet::<f32>::new();
            let w = params
                .insert("w", Tensor::from_vec(&[2, 1, 2], vec![0.4, -0.3, 0.8, 0.1]).unwrap())
                .unwrap();
            let b = params.insert("b", Tensor::vector(&[0.1, -0.1]).unwrap()).unwrap();
            let lw = params
                .insert("lw", Tensor::from_vec(&[2, 2], vec![0.2, -0.5, 0.7, 0.3]).unwrap())
                .unwrap();
            let lb = params.insert("lb", Tensor::vector(&[0.0, 0.0]).unwrap()).unwrap();
            let mut tape = Tape::new();
            let x = tape.leaf(
                Tensor::from_vec(&[2, 1, 6], (0..12).map(|i| (i as f32 * 0.31).cos()).collect())
                    .unwrap(),
            );
            let wn = tape.param(&params, w);
            let bn = tape.param(&params, b);
            let conv = tape.conv1d_causal(x, wn, bn, 2).unwrap();
            let act = tape.relu(conv);
            let pooled = tape.global_avg_pool(act).unwrap();
            let lwn = tape.param(&params, lw);
            let lbn = tape.param(&params, lb);
            let logits = tape.linear(pooled, lwn, lbn).unwrap();
            let loss = tape.softmax_cross_entropy(logits, &[0, 1], None).unwrap();
            tape.backward(loss, &mut params).unwrap();
            let grads: Vec<u32> = params
                .iter()
                .flat_map(|p| p.grad.data().iter().map(|g| g.to_bits()))
                .collect();
            (tape.value(loss).data()[0].to_bits(), grads)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn replay_reproduces_recorded_outputs_bitwise() {
        let mut params = ParamSet::<f32>::new();
        let w = params
            .insert("w", Tensor::from_vec(&[2, 1, 3], vec![0.3, -0.1, 0.7, 0.2, 0.4, -0.9])
                .unwrap())
            .unwrap();
        let b = params.insert("b", Tensor::vector(&[0.05, -0.2]).unwrap()).unwrap();
        let gamma = params.insert("g", Tensor::full(&[2], 1.0).unwrap()).unwrap();
        let beta = params.insert("be", Tensor::zeros(&[2]).unwrap()).unwrap();

        let mut tape = Tape::new();
        let x = tape.leaf(
            Tensor::from_vec(&[1, 1, 8], (0..8).map(|i| (i as f32).sin()).collect()).unwrap(),
        );
        let wn = tape.param(&params, w);
        let bn = tape.param(&params, b);
        let gn = tape.param(&params, gamma);
        let ben = tape.param(&params, beta);
        let c = tape.conv1d_causal(x, wn, bn, 2).unwrap();
        let (n, _, _) = tape.batchnorm1d_train(c, gn, ben).unwrap();
        let r = tape.relu(n);
        let p = tape.avg_pool1d(r, 2, 2).unwrap();
        let q = tape.global_avg_pool(p).unwrap();
        let _ = q;
        assert_eq!(tape.replay_divergence().unwrap(), None);
    }
}
