//! Soft Dice + binary cross-entropy.

use super::tensor::{Float, Tensor};
use super::{Result, SegError};
use crate::volgrid::{BinaryMask, ProbabilityMap};

pub const DICE_EPS: f64 = 1e-5;
/// Probabilities are clipped to `[PROB_CLIP, 1 - PROB_CLIP]` inside the logarithms.
pub const PROB_CLIP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// `1 - softDice`
    pub dice: f64,
    /// Mean binary cross-entropy.
    pub ce: f64,
    pub total: f64,
}

/// `(2Σpg + ε) / (Σp + Σg + ε)` over the whole array.
pub fn soft_dice(p: &[f64], g: &[f64]) -> f64 {
    let (mut pg, mut sp, mut sg) = (0.0, 0.0, 0.0);
    for (&a, &b) in p.iter().zip(g) {
        pg += a * b;
        sp += a;
        sg += b;
    }
    (2.0 * pg + DICE_EPS) / (sp + sg + DICE_EPS)
}

pub fn mean_bce(p: &[f64], g: &[f64]) -> f64 {
    let s: f64 = p
        .iter()
        .zip(g)
        .map(|(&a, &b)| {
            let a = a.clamp(PROB_CLIP, 1.0 - PROB_CLIP);
            -(b * a.ln() + (1.0 - b) * (1.0 - a).ln())
        })
        .sum();
    s / p.len() as f64
}

/// Equal-weight Dice and cross-entropy terms for one patch.
pub fn dice_ce_terms(p: &[f64], g: &[f64]) -> Result<LossTerms> {
    if p.len() != g.len() || p.is_empty() {
        return Err(SegError::ShapeMismatch(format!("{} probabilities vs {} targets", p.len(), g.len())));
    }
    if let Some(i) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(SegError::Config(format!("probability {} at {i} is outside [0, 1]", p[i])));
    }
    let dice = 1.0 - soft_dice(p, g);
    let ce = mean_bce(p, g);
    Ok(LossTerms { dice, ce, total: dice + ce })
}

pub fn dice_ce_loss(probabilities: &ProbabilityMap, target: &BinaryMask) -> Result<LossTerms> {
    if probabilities.shape() != target.shape() {
        return Err(SegError::ShapeMismatch(format!(
            "probabilities {:?} vs target {:?}",
            probabilities.shape(),
            target.shape()
        )));
    }
    let p: Vec<f64> = probabilities.data().iter().map(|&v| v as f64).collect();
    let g: Vec<f64> = target.data().iter().map(|&v| v as f64).collect();
    dice_ce_terms(&p, &g)
}

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

/// Batch-mean loss evaluated from logits, and its gradient with respect to them.
///
/// The cross-entropy is computed as `softplus(z) - g·z`, which equals the
/// probability form without clipping.
pub fn dice_ce_from_logits<F: Float>(logits: &Tensor<F>, target: &Tensor<F>) -> (f64, Tensor<F>) {
    assert_eq!(logits.shape(), target.shape(), "logits and target shapes");
    let nb = logits.batch();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for n in 0..nb {
        let z: Vec<f64> = logits.sample(n).iter().map(|v| v.f64()).collect();
        let g: Vec<f64> = target.sample(n).iter().map(|v| v.f64()).collect();
        let v = z.len() as f64;
        let p: Vec<f64> = z.iter().map(|&zi| 1.0 / (1.0 + (-zi).exp())).collect();
        let (mut pg, mut sp, mut sg) = (0.0, 0.0, 0.0);
        for (&a, &b) in p.iter().zip(&g) {
            pg += a * b;
            sp += a;
            sg += b;
        }
        let num = 2.0 * pg + DICE_EPS;
        let den = sp + sg + DICE_EPS;
        let ce: f64 = z.iter().zip(&g).map(|(&zi, &gi)| softplus(zi) - gi * zi).sum::<f64>() / v;
        total += 1.0 - num / den + ce;
        let out = grad.sample_mut(n);
        for i in 0..p.len() {
            let ddice_dp = (2.0 * g[i] * den - num) / (den * den);
            let dz = -ddice_dp * p[i] * (1.0 - p[i]) + (p[i] - g[i]) / v;
            out[i] = F::of(dz / nb as f64);
        }
    }
    (total / nb as f64, grad)
}
