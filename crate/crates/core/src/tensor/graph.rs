use super::ops::{self, Aux, Contribution, OpKind};
use super::Tensor;
use crate::error::{Error, Result};

/// Index of a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: OpKind,
    inputs: Vec<NodeId>,
    value: Tensor,
    aux: Aux,
}

/// An append-only tape of eagerly evaluated operations.
///
/// Nodes can only reference earlier nodes, so insertion order is a
/// topological order.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar root, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// The gradient for `node`, present for every node that requires one.
    pub fn get(&self, node: NodeId) -> Option<&[f64]> {
        self.grads.get(node.0).and_then(|g| g.as_deref())
    }

    pub fn into_tensor(&self, graph: &Graph, node: NodeId) -> Option<Tensor> {
        let g = self.get(node)?;
        Some(Tensor::from_parts(graph.value(node).shape().to_vec(), g.to_vec()))
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op(&self, id: NodeId) -> &OpKind {
        &self.nodes[id.0].op
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub(crate) fn node_ids(&self) -> impl Iterator<Item = NodeId> {
        (0..self.nodes.len()).map(NodeId)
    }

    /// Adds a leaf. Its `requires_grad` flag decides whether gradients are
    /// tracked through it.
    pub fn leaf(&mut self, tensor: Tensor) -> NodeId {
        self.nodes.push(Node {
            op: OpKind::Leaf,
            inputs: vec![],
            value: tensor,
            aux: Aux::None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// A leaf that never receives gradients.
    pub fn constant(&mut self, tensor: Tensor) -> NodeId {
        self.leaf(tensor.with_requires_grad(false))
    }

    /// Records `kind` applied to `inputs` and evaluates it.
    pub fn apply(&mut self, kind: OpKind, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|i| i.0 >= self.nodes.len()) {
            return Err(Error::InvalidArgument(format!(
                "{}: unknown input node {}",
                kind.name(),
                bad.0
            )));
        }
        let (value, aux) = {
            let refs: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            ops::forward(&kind, &refs)?
        };
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].value.requires_grad());
        self.nodes.push(Node {
            op: kind,
            inputs: inputs.to_vec(),
            value: value.with_requires_grad(requires_grad),
            aux,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn embed_lookup(&mut self, table: NodeId, indices: &[usize]) -> Result<NodeId> {
        self.apply(
            OpKind::EmbedLookup {
                indices: indices.to_vec(),
            },
            &[table],
        )
    }

    pub fn linear(&mut self, x: NodeId, w: NodeId, bias: Option<NodeId>) -> Result<NodeId> {
        match bias {
            Some(b) => self.apply(OpKind::Linear, &[x, w, b]),
            None => self.apply(OpKind::Linear, &[x, w]),
        }
    }

    pub fn self_attention(
        &mut self,
        x: NodeId,
        wq: NodeId,
        wk: NodeId,
        wv: NodeId,
        wo: NodeId,
    ) -> Result<NodeId> {
        self.apply(OpKind::SelfAttention, &[x, wq, wk, wv, wo])
    }

    pub fn mean_pool(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MeanPool, &[x])
    }

    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Tanh, &[x])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Relu, &[x])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.apply(OpKind::Scale(c), &[x])
    }

    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Dot, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Transpose, &[x])
    }

    pub fn stack(&mut self, xs: &[NodeId]) -> Result<NodeId> {
        self.apply(OpKind::Stack, xs)
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.apply(OpKind::Sum, &[x])
    }

    pub fn pair_sum(&mut self, m: NodeId, pairs: Vec<(usize, usize)>) -> Result<NodeId> {
        self.apply(OpKind::PairSum { pairs }, &[m])
    }

    pub fn group_max_sum(&mut self, m: NodeId, groups: Vec<(usize, Vec<usize>)>) -> Result<NodeId> {
        self.apply(OpKind::GroupMaxSum { groups }, &[m])
    }

    pub fn softmax_cross_entropy(&mut self, logits: NodeId, target: usize) -> Result<NodeId> {
        self.apply(OpKind::SoftmaxCrossEntropy { target }, &[logits])
    }

    pub fn bce_with_logits(&mut self, logits: NodeId, multihot: &[f64]) -> Result<NodeId> {
        self.apply(
            OpKind::BceWithLogits {
                targets: multihot.to_vec(),
            },
            &[logits],
        )
    }

    /// Overwrites one scalar of a leaf; dependent values are stale until
    /// [`Graph::replay`] runs.
    pub(crate) fn set_leaf_value(&mut self, id: NodeId, index: usize, v: f64) {
        debug_assert!(matches!(self.nodes[id.0].op, OpKind::Leaf));
        self.nodes[id.0].value.values_mut()[index] = v;
    }

    /// Recomputes every non-leaf node from current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, OpKind::Leaf) {
                continue;
            }
            let (value, aux) = {
                let node = &self.nodes[i];
                let refs: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                ops::forward(&node.op, &refs)?
            };
            let rg = self.nodes[i].value.requires_grad();
            self.nodes[i].value = value.with_requires_grad(rg);
            self.nodes[i].aux = aux;
        }
        Ok(())
    }

    /// Reverse-mode pass from a scalar `root`.
    ///
    /// Every node that requires a gradient gets one in the result (zeros when
    /// the root does not depend on it). Nodes feeding several consumers
    /// receive the sum of all contributions.
    pub fn backward(&self, root: NodeId) -> Result<Gradients> {
        let root_value = &self
            .nodes
            .get(root.0)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown root node {}", root.0)))?
            .value;
        if !root_value.is_scalar() {
            return Err(Error::shape(
                "backward",
                format!("root must be scalar, has shape {:?}", root_value.shape()),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, OpKind::Leaf) || !node.value.requires_grad() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|j| self.nodes[j.0].value.requires_grad())
                .collect();
            let refs: Vec<&Tensor> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let contributions = ops::backward(&node.op, &refs, &node.value, &node.aux, &g, &needs);
            for (input, c) in node.inputs.iter().zip(contributions) {
                let Some(c) = c else { continue };
                let len = self.nodes[input.0].value.len();
                let acc = grads[input.0].get_or_insert_with(|| vec![0.0; len]);
                match c {
                    Contribution::Dense(v) => acc.iter_mut().zip(&v).for_each(|(a, b)| *a += b),
                    Contribution::Rows { width, rows, values } => {
                        for (r, chunk) in rows.iter().zip(values.chunks(width)) {
                            acc[r * width..(r + 1) * width]
                                .iter_mut()
                                .zip(chunk)
                                .for_each(|(a, b)| *a += b);
                        }
                    }
                }
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.requires_grad() && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.len()]);
            } else if !node.value.requires_grad() && i != root.0 {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }
}
