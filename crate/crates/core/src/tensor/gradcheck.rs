use super::graph::{Graph, NodeId};
use super::ops::OpKind;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    /// max over checked scalars of `|fd − ad| / max(|fd|, |ad|, 1e−8)`
    pub max_rel_error: f64,
    pub checked: usize,
    /// Scalars whose ±ε perturbation crosses a non-differentiable point
    /// (a relu kink or a change of max selection).
    pub excluded: usize,
}

fn kink_signature(graph: &Graph) -> Vec<u8> {
    let mut sig = Vec::new();
    for id in graph.node_ids() {
        match graph.op(id) {
            OpKind::Relu => {
                let x = graph.value(graph.inputs(id)[0]);
                sig.extend(x.values().iter().map(|&v| (v > 0.0) as u8));
            }
            OpKind::GroupMaxSum { groups } => {
                let m = graph.value(graph.inputs(id)[0]);
                let n = m.shape()[1];
                for (row, cols) in groups {
                    let best = cols
                        .iter()
                        .copied()
                        .reduce(|b, c| if m.values()[row * n + c] > m.values()[row * n + b] { c } else { b })
                        .unwrap_or(0);
                    sig.extend_from_slice(&(best as u64).to_le_bytes());
                }
            }
            _ => {}
        }
    }
    sig
}

/// Perturbs every scalar of every gradient-requiring leaf by ±`epsilon`
/// and compares the central difference of `root` with [`Graph::backward`].
///
/// The graph is restored to its original values on return.
pub fn finite_difference_check(graph: &mut Graph, root: NodeId, epsilon: f64) -> Result<GradCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::InvalidArgument(format!("epsilon must be positive, got {epsilon}")));
    }
    let grads = graph.backward(root)?;
    let leaves: Vec<NodeId> = graph
        .node_ids()
        .filter(|&id| matches!(graph.op(id), OpKind::Leaf) && graph.value(id).requires_grad())
        .collect();
    let mut report = GradCheckReport::default();
    for leaf in leaves {
        let analytic = grads.get(leaf).expect("leaf requires grad").to_vec();
        for (i, &ad) in analytic.iter().enumerate() {
            let orig = graph.value(leaf).values()[i];
            graph.set_leaf_value(leaf, i, orig + epsilon);
            graph.replay()?;
            let plus = graph.value(root).item();
            let sig_plus = kink_signature(graph);
            graph.set_leaf_value(leaf, i, orig - epsilon);
            graph.replay()?;
            let minus = graph.value(root).item();
            let sig_minus = kink_signature(graph);
            graph.set_leaf_value(leaf, i, orig);
            if sig_plus != sig_minus {
                report.excluded += 1;
                continue;
            }
            let fd = (plus - minus) / (2.0 * epsilon);
            let rel = (fd - ad).abs() / fd.abs().max(ad.abs()).max(1e-8);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    graph.replay()?;
    Ok(report)
}
