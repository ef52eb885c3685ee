//! Scene features and the detector training losses.

use serde::{Deserialize, Serialize};

use super::matrix::FeatureMatrix;
use crate::domain::BBox;
use crate::error::{Error, Result};
use crate::geometry::giou;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    /// Weight of the localization term in the total loss.
    pub alpha: f64,
    /// Weight of the scene-alignment term in the total loss.
    pub beta: f64,
    /// Softmax temperature of the scene-alignment term.
    pub tau: f64,
    pub lambda_l1: f64,
    pub lambda_giou: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            tau: 0.07,
            lambda_l1: 5.0,
            lambda_giou: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneFeature(pub Vec<f64>);

impl SceneFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Token-length weighted sum of positive category features divided by their count.
///
/// No re-normalization by the total token length: longer category names pull the
/// feature proportionally further.
pub fn scene_feature(positive_feats: &FeatureMatrix, token_lengths: &[usize]) -> Result<SceneFeature> {
    if positive_feats.rows() == 0 {
        return Err(Error::EmptyInput("scene feature needs at least one positive category".into()));
    }
    if token_lengths.len() != positive_feats.rows() {
        return Err(Error::LengthMismatch {
            left: token_lengths.len(),
            right: positive_feats.rows(),
        });
    }
    let n = positive_feats.rows() as f64;
    let mut s = vec![0.0; positive_feats.dim()];
    for (i, &len) in token_lengths.iter().enumerate() {
        let l = len as f64;
        for (acc, v) in s.iter_mut().zip(positive_feats.row(i)) {
            *acc += l * v;
        }
    }
    s.iter_mut().for_each(|v| *v /= n);
    Ok(SceneFeature(s))
}

/// Mean over visual tokens; the first-layer visual scene estimate.
pub fn visual_mean_pool(visual: &FeatureMatrix) -> Result<SceneFeature> {
    if visual.rows() == 0 {
        return Err(Error::EmptyInput("no visual tokens".into()));
    }
    let n = visual.rows() as f64;
    let mut s = vec![0.0; visual.dim()];
    for i in 0..visual.rows() {
        for (acc, v) in s.iter_mut().zip(visual.row(i)) {
            *acc += v;
        }
    }
    s.iter_mut().for_each(|v| *v /= n);
    Ok(SceneFeature(s))
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn check_pair(pred: &FeatureMatrix, truth: &FeatureMatrix) -> Result<()> {
    if pred.rows() != truth.rows() || pred.dim() != truth.dim() {
        return Err(Error::ShapeMismatch(format!(
            "predicted scenes {}x{} vs target scenes {}x{}",
            pred.rows(),
            pred.dim(),
            truth.rows(),
            truth.dim()
        )));
    }
    if pred.rows() == 0 {
        return Err(Error::ShapeMismatch("empty batch".into()));
    }
    Ok(())
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("tau must be positive, got {tau}")))
    }
}

/// Scene-alignment contrastive loss.
///
/// With similarities `phi[i][j] = pred_i . truth_j`, each batch item contributes
/// `-log softmax_j(phi[i][j] / tau)[i]`; the result is the batch mean.
pub fn visgt_loss(pred_scenes: &FeatureMatrix, true_scenes: &FeatureMatrix, tau: f64) -> Result<f64> {
    check_pair(pred_scenes, true_scenes)?;
    check_tau(tau)?;
    let phi = pred_scenes.gram(true_scenes)?;
    let n = phi.rows();
    let total: f64 = (0..n)
        .map(|i| {
            let row = phi.row(i);
            log_sum_exp(row.iter().map(|v| v / tau)) - row[i] / tau
        })
        .sum();
    Ok(total / n as f64)
}

/// Loss plus gradients with respect to the predicted and target scene matrices.
pub fn visgt_loss_grad(
    pred_scenes: &FeatureMatrix,
    true_scenes: &FeatureMatrix,
    tau: f64,
) -> Result<(f64, FeatureMatrix, FeatureMatrix)> {
    check_pair(pred_scenes, true_scenes)?;
    check_tau(tau)?;
    let phi = pred_scenes.gram(true_scenes)?;
    let (n, d) = (phi.rows(), pred_scenes.dim());
    let nf = n as f64;

    // dL/dphi[i][j] = (softmax_ij - [i == j]) / (n * tau)
    let mut g = FeatureMatrix::zeros(n, n);
    let mut loss = 0.0;
    for i in 0..n {
        let row = phi.row(i);
        let lse = log_sum_exp(row.iter().map(|v| v / tau));
        loss += lse - row[i] / tau;
        for j in 0..n {
            let p = (row[j] / tau - lse).exp();
            g[(i, j)] = (p - f64::from(u8::from(i == j))) / (nf * tau);
        }
    }

    let mut d_pred = FeatureMatrix::zeros(n, d);
    let mut d_true = FeatureMatrix::zeros(n, d);
    for i in 0..n {
        for j in 0..n {
            let gij = g[(i, j)];
            for k in 0..d {
                d_pred[(i, k)] += gij * true_scenes[(j, k)];
                d_true[(j, k)] += gij * pred_scenes[(i, k)];
            }
        }
    }
    Ok((loss / nf, d_pred, d_true))
}

/// Summed cross-entropy of each row of logits against its label.
pub fn cls_loss(pred_logits: &FeatureMatrix, labels: &[usize]) -> Result<f64> {
    Ok(cls_loss_grad(pred_logits, labels)?.0)
}

pub fn cls_loss_grad(pred_logits: &FeatureMatrix, labels: &[usize]) -> Result<(f64, FeatureMatrix)> {
    if labels.len() != pred_logits.rows() {
        return Err(Error::LengthMismatch {
            left: labels.len(),
            right: pred_logits.rows(),
        });
    }
    let k = pred_logits.dim();
    let mut grad = FeatureMatrix::zeros(pred_logits.rows(), k);
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, classes: k });
        }
        let row = pred_logits.row(r);
        let lse = log_sum_exp(row.iter().copied());
        loss += lse - row[label];
        for c in 0..k {
            grad[(r, c)] = (row[c] - lse).exp() - f64::from(u8::from(c == label));
        }
    }
    Ok((loss, grad))
}

/// `lambda_l1 * sum |pred - gt|_1 + lambda_giou * sum (1 - giou)` over matched pairs.
pub fn loc_loss(pred: &[BBox], gt: &[BBox], w: &LossWeights) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: pred.len(),
            right: gt.len(),
        });
    }
    let mut l1 = 0.0;
    let mut g = 0.0;
    for (p, t) in pred.iter().zip(gt) {
        l1 += (p.x - t.x).abs() + (p.y - t.y).abs() + (p.w - t.w).abs() + (p.h - t.h).abs();
        g += 1.0 - giou(p, t)?;
    }
    Ok(w.lambda_l1 * l1 + w.lambda_giou * g)
}

pub fn total_loss(cls: f64, loc: f64, visgt: f64, w: &LossWeights) -> f64 {
    cls + w.alpha * loc + w.beta * visgt
}
