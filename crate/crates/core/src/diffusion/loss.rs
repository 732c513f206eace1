//! Region-weighted noise-prediction loss.
//!
//! `mean[(1 − M)(ε − ε̂)² + β·M(ε − ε̂)²]` with the `H×W` mask broadcast over
//! channels.

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn check_mask<S: Scalar>(eps: &Tensor<S>, mask: &Tensor<S>) -> Result<(usize, usize)> {
    let (h, w, c) = eps.dims3()?;
    if mask.shape() != [h, w] {
        return Err(Error::dim("hybrid_loss(mask)", mask.shape(), &[h, w]));
    }
    if let Some(i) = mask.data().iter().position(|&m| m != S::zero() && m != S::one()) {
        return Err(Error::Validation(format!(
            "text mask must be binary; cell {i} holds {}",
            mask.data()[i]
        )));
    }
    Ok((h * w, c))
}

/// Per-element weights `1 − M + β·M`, laid out like `(H·W)×C`.
fn weights<S: Scalar>(mask: &Tensor<S>, channels: usize, beta: S) -> Vec<S> {
    mask.data()
        .iter()
        .flat_map(|&m| std::iter::repeat_n((S::one() - m) + beta * m, channels))
        .collect()
}

/// Scalar loss for `H×W×C` tensors and an `H×W` binary mask.
pub fn hybrid_loss<S: Scalar>(eps: &Tensor<S>, eps_hat: &Tensor<S>, text_mask: &Tensor<S>, beta_glyph: S) -> Result<S> {
    if eps.shape() != eps_hat.shape() {
        return Err(Error::dim("hybrid_loss", eps.shape(), eps_hat.shape()));
    }
    let (_, c) = check_mask(eps, text_mask)?;
    let w = weights(text_mask, c, beta_glyph);
    let total: S = eps
        .data()
        .iter()
        .zip(eps_hat.data())
        .zip(&w)
        .map(|((&e, &p), &k)| k * (e - p) * (e - p))
        .sum();
    Ok(total / S::of_usize(eps.len()))
}

/// Squared error split by mask: `(text, non_text)` means over their own elements.
/// A side with no elements reports zero.
pub fn region_losses<S: Scalar>(eps: &Tensor<S>, eps_hat: &Tensor<S>, text_mask: &Tensor<S>) -> Result<(S, S)> {
    if eps.shape() != eps_hat.shape() {
        return Err(Error::dim("region_losses", eps.shape(), eps_hat.shape()));
    }
    let (_, c) = check_mask(eps, text_mask)?;
    let (mut sums, mut counts) = ([S::zero(); 2], [0usize; 2]);
    for (i, (&e, &p)) in eps.data().iter().zip(eps_hat.data()).enumerate() {
        let side = usize::from(text_mask.data()[i / c] != S::one());
        sums[side] += (e - p) * (e - p);
        counts[side] += 1;
    }
    let mean = |k: usize| if counts[k] == 0 { S::zero() } else { sums[k] / S::of_usize(counts[k]) };
    Ok((mean(0), mean(1)))
}

/// Graph version. `eps_hat` is the `(H·W)×C` prediction node.
pub fn hybrid_loss_node<S: Scalar>(
    graph: &mut Graph<S>,
    eps: &Tensor<S>,
    eps_hat: NodeId,
    text_mask: &Tensor<S>,
    beta_glyph: S,
) -> Result<NodeId> {
    let (n, c) = check_mask(eps, text_mask)?;
    if graph.value(eps_hat).shape() != [n, c] {
        return Err(Error::dim("hybrid_loss_node", graph.value(eps_hat).shape(), &[n, c]));
    }
    let target = graph.constant(eps.clone().reshape(&[n, c])?);
    let w = graph.constant(Tensor::new(vec![n, c], weights(text_mask, c, beta_glyph))?);
    let diff = graph.sub(target, eps_hat)?;
    let sq = graph.mul(diff, diff)?;
    let weighted = graph.mul(sq, w)?;
    Ok(graph.mean(weighted))
}
