use crate::error::{Error, Result};
use crate::tensor::{ops, Element, Graph, Var};

/// Σ over rows of `[‖fR − fP‖² − ‖fR − fN‖² + α]₊`, recorded on the graph.
pub fn triplet_loss<T: Element>(graph: &mut Graph<T>, fr: Var, fp: Var, fneg: Var, margin: f64) -> Result<Var> {
    if margin <= 0.0 {
        return Err(Error::invalid(format!("margin must be positive, got {margin}")));
    }
    let shape = graph.value(fr).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::invalid(format!("triplet loss expects [M,d] embeddings, got {shape:?}")));
    }
    let dp = ops::sub(graph, fr, fp)?;
    let dp = ops::square(graph, dp)?;
    let dp = ops::sum(graph, dp, Some(1))?;
    let dn = ops::sub(graph, fr, fneg)?;
    let dn = ops::square(graph, dn)?;
    let dn = ops::sum(graph, dn, Some(1))?;
    let gap = ops::sub(graph, dp, dn)?;
    let gap = ops::shift(graph, gap, margin)?;
    let hinge = ops::relu(graph, gap)?;
    ops::sum(graph, hinge, None)
}

/// Per-triplet hinge from squared distances.
pub fn triplet_hinge(d_pos_sq: f64, d_neg_sq: f64, margin: f64) -> f64 {
    (d_pos_sq - d_neg_sq + margin).max(0.0)
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}
