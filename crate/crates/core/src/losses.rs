//! Training objectives: identity softmax cross-entropy, attribute sigmoid
//! cross-entropy, the similarity triplet loss over (non-occluded, occluded)
//! pairs, and their unweighted sum.

use serde::Serialize;

use crate::error::{OreoError, Result};
use crate::scalar::{softplus, Scalar};
use crate::tensor::Linear;

pub const DEFAULT_MARGIN: f64 = 0.2;

#[derive(Debug, Clone)]
pub struct IdentityLoss<T> {
    pub value: T,
    pub d_templates: Vec<Vec<T>>,
    pub grad: Linear<T>,
}

/// Mean softmax cross-entropy of `classifier(t_i)` against `labels[i]`.
pub fn loss_identity<T: Scalar>(templates: &[Vec<T>], labels: &[usize], classifier: &Linear<T>) -> Result<IdentityLoss<T>> {
    if templates.is_empty() {
        return Err(OreoError::Empty("identity loss on an empty batch".into()));
    }
    if templates.len() != labels.len() {
        return Err(OreoError::Shape(format!("{} templates but {} labels", templates.len(), labels.len())));
    }
    let n = classifier.out_dim();
    if let Some(&bad) = labels.iter().find(|&&l| l >= n) {
        return Err(OreoError::LabelOutOfRange { label: bad, classes: n });
    }
    let m = T::of_usize(templates.len());
    let mut grad = Linear::zeros(n, classifier.in_dim());
    let mut total = T::zero();
    let mut d_templates = Vec::with_capacity(templates.len());
    for (t, &y) in templates.iter().zip(labels) {
        let logits = classifier.forward(t);
        let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
        let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
        let sum: T = exps.iter().copied().sum();
        total = total + (sum.ln() + max - logits[y]);
        let d_logits: Vec<T> = exps
            .iter()
            .enumerate()
            .map(|(j, &e)| {
                let p = e / sum;
                (if j == y { p - T::one() } else { p }) / m
            })
            .collect();
        d_templates.push(classifier.backward(t, &d_logits, &mut grad));
    }
    Ok(IdentityLoss {
        value: total / m,
        d_templates,
        grad,
    })
}

#[derive(Debug, Clone)]
pub struct AttributeLoss<T> {
    pub value: T,
    pub d_logits: Vec<Vec<T>>,
}

/// Batch mean of the per-sample summed binary cross-entropy between
/// `σ(logits)` and 0/1 labels, computed in log space.
pub fn loss_attributes<T: Scalar>(logits: &[Vec<T>], labels: &[Vec<u8>]) -> Result<AttributeLoss<T>> {
    if logits.is_empty() {
        return Err(OreoError::Empty("attribute loss on an empty batch".into()));
    }
    if logits.len() != labels.len() {
        return Err(OreoError::Shape(format!("{} logit rows but {} label rows", logits.len(), labels.len())));
    }
    let m = T::of_usize(logits.len());
    let mut total = T::zero();
    let mut d_logits = Vec::with_capacity(logits.len());
    for (a, y) in logits.iter().zip(labels) {
        if a.len() != y.len() {
            return Err(OreoError::Shape(format!("{} logits vs {} labels", a.len(), y.len())));
        }
        let mut row = Vec::with_capacity(a.len());
        for (&z, &lab) in a.iter().zip(y) {
            // -[y log σ(z) + (1-y) log σ(-z)] = softplus(z) - y z
            let yt = if lab == 1 { T::one() } else { T::zero() };
            total = total + if lab == 1 { softplus(-z) } else { softplus(z) };
            row.push((crate::scalar::sigmoid(z) - yt) / m);
        }
        d_logits.push(row);
    }
    Ok(AttributeLoss {
        value: total / m,
        d_logits,
    })
}

/// Where a triplet's hardest negative was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum NegativeSide {
    /// `S[i][j]`: anchor's non-occluded template vs occluded template of `j`.
    Row,
    /// `S[j][i]`: non-occluded template of `j` vs anchor's occluded template.
    Column,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MinedTriplet {
    pub anchor: usize,
    pub negative: usize,
    pub side: NegativeSide,
    /// Hinge is strictly positive (gradient flows).
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct TripletLoss<T> {
    pub value: T,
    pub d_non_occluded: Vec<Vec<T>>,
    pub d_occluded: Vec<Vec<T>>,
    pub mined: Vec<MinedTriplet>,
    /// Cosine similarity matrix, rows = non-occluded, columns = occluded.
    pub similarity: Vec<Vec<T>>,
}

fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt()
}

/// Adds `g · ∂cos(a,b)/∂a` into `out`.
fn cosine_grad_into<T: Scalar>(a: &[T], b: &[T], na: T, nb: T, cos: T, g: T, out: &mut [T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = *o + g * (y / (na * nb) - cos * x / (na * na));
    }
}

/// Similarity triplet loss over `P` pairs: `Σ_i [s^n_i − s^p_i + m]_+` with
/// `s^p_i = S_ii` and `s^n_i` the largest different-identity score in row
/// `i` or column `i` of the cosine matrix `S`. Ties pick the lowest index,
/// row before column.
pub fn loss_stl<T: Scalar>(non_occluded: &[Vec<T>], occluded: &[Vec<T>], margin: T) -> Result<TripletLoss<T>> {
    let p = non_occluded.len();
    if occluded.len() != p {
        return Err(OreoError::Shape(format!("{p} non-occluded vs {} occluded templates", occluded.len())));
    }
    if p < 2 {
        return Err(OreoError::InvalidConfig(format!("triplet loss needs at least 2 pairs, got {p}")));
    }
    let norms_n: Vec<T> = non_occluded.iter().map(|v| norm(v)).collect();
    let norms_o: Vec<T> = occluded.iter().map(|v| norm(v)).collect();
    for (i, (&a, &b)) in norms_n.iter().zip(&norms_o).enumerate() {
        if a == T::zero() {
            return Err(OreoError::ZeroNorm(format!("non-occluded template of pair {i}")));
        }
        if b == T::zero() {
            return Err(OreoError::ZeroNorm(format!("occluded template of pair {i}")));
        }
    }
    let s: Vec<Vec<T>> = (0..p)
        .map(|i| {
            (0..p)
                .map(|j| {
                    let dot = non_occluded[i].iter().zip(&occluded[j]).fold(T::zero(), |a, (&x, &y)| a + x * y);
                    (dot / (norms_n[i] * norms_o[j])).max(-T::one()).min(T::one())
                })
                .collect()
        })
        .collect();

    let d = non_occluded[0].len();
    let mut d_n = vec![vec![T::zero(); d]; p];
    let mut d_o = vec![vec![T::zero(); d]; p];
    let mut value = T::zero();
    let mut mined = Vec::with_capacity(p);
    for i in 0..p {
        let mut best: Option<(T, usize, NegativeSide)> = None;
        for side in [NegativeSide::Row, NegativeSide::Column] {
            for j in (0..p).filter(|&j| j != i) {
                let v = match side {
                    NegativeSide::Row => s[i][j],
                    NegativeSide::Column => s[j][i],
                };
                if best.is_none_or(|(b, ..)| v > b) {
                    best = Some((v, j, side));
                }
            }
        }
        let (neg, j, side) = best.expect("p >= 2");
        let hinge = neg - s[i][i] + margin;
        let active = hinge > T::zero();
        mined.push(MinedTriplet {
            anchor: i,
            negative: j,
            side,
            active,
        });
        if !active {
            continue;
        }
        value = value + hinge;
        // −∂S_ii
        let pos = s[i][i];
        cosine_grad_into(&non_occluded[i], &occluded[i], norms_n[i], norms_o[i], pos, -T::one(), &mut d_n[i]);
        cosine_grad_into(&occluded[i], &non_occluded[i], norms_o[i], norms_n[i], pos, -T::one(), &mut d_o[i]);
        // +∂S_neg
        let (r, c) = match side {
            NegativeSide::Row => (i, j),
            NegativeSide::Column => (j, i),
        };
        let sv = s[r][c];
        cosine_grad_into(&non_occluded[r], &occluded[c], norms_n[r], norms_o[c], sv, T::one(), &mut d_n[r]);
        cosine_grad_into(&occluded[c], &non_occluded[r], norms_o[c], norms_n[r], sv, T::one(), &mut d_o[c]);
    }
    Ok(TripletLoss {
        value,
        d_non_occluded: d_n,
        d_occluded: d_o,
        mined,
        similarity: s,
    })
}

/// Per-component loss values for one step. Disabled components are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub identity: f64,
    pub attributes: Option<f64>,
    pub triplet: Option<f64>,
}

impl LossBreakdown {
    /// `L = L_C + L_A + L_T` over the active components.
    pub fn total(&self) -> f64 {
        loss_total(self.identity, self.attributes, self.triplet)
    }
}

pub fn loss_total(identity: f64, attributes: Option<f64>, triplet: Option<f64>) -> f64 {
    identity + attributes.unwrap_or(0.0) + triplet.unwrap_or(0.0)
}
