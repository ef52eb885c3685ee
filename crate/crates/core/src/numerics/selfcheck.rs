//! Self-test suite behind `lae check-math`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::gradcheck::grad_check;
use super::loss::{
    cls_loss, cls_loss_grad, loc_loss, scene_feature, total_loss, visgt_loss, visgt_loss_grad, visual_mean_pool,
    LossWeights,
};
use super::matrix::FeatureMatrix;
use crate::domain::BBox;

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;
pub const GRAD_CHECK_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Serialize)]
pub struct MathCheck {
    pub name: &'static str,
    /// Worst observed error (or the deviation from the expected value).
    pub error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl MathCheck {
    fn new(name: &'static str, error: f64, tolerance: f64) -> Self {
        Self {
            name,
            error,
            tolerance,
            passed: error.is_finite() && error <= tolerance,
        }
    }
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, dim: usize, scale: f64) -> FeatureMatrix {
    let values = (0..rows * dim).map(|_| rng.random_range(-scale..scale)).collect();
    FeatureMatrix::new(rows, dim, values).expect("finite by construction")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst gradient error of the scene-alignment loss over `trials` random batches.
pub fn visgt_grad_error<R: Rng>(rng: &mut R, trials: usize, rows: usize, dim: usize, tau: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let pred = random_matrix(rng, rows, dim, 1.0);
        let truth = random_matrix(rng, rows, dim, 1.0);
        let (_, d_pred, d_true) = visgt_loss_grad(&pred, &truth, tau).expect("valid shapes");
        let r1 = grad_check(|p| visgt_loss(p, &truth, tau).unwrap(), &d_pred, &pred, GRAD_CHECK_EPS);
        let r2 = grad_check(|t| visgt_loss(&pred, t, tau).unwrap(), &d_true, &truth, GRAD_CHECK_EPS);
        worst = worst.max(r1.max_relative_error).max(r2.max_relative_error);
    }
    worst
}

/// Worst gradient error of the classification loss over `trials` random logit matrices.
pub fn cls_grad_error<R: Rng>(rng: &mut R, trials: usize, rows: usize, classes: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let logits = random_matrix(rng, rows, classes, 3.0);
        let labels: Vec<usize> = (0..rows).map(|_| rng.random_range(0..classes)).collect();
        let (_, grad) = cls_loss_grad(&logits, &labels).expect("valid labels");
        let r = grad_check(|l| cls_loss(l, &labels).unwrap(), &grad, &logits, GRAD_CHECK_EPS);
        worst = worst.max(r.max_relative_error);
    }
    worst
}

pub fn run_math_checks(seed: u64) -> Vec<MathCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = LossWeights::default();
    let mut out = Vec::new();

    let f = FeatureMatrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let s = scene_feature(&f, &[2, 3]).unwrap();
    out.push(MathCheck::new("scene feature, token lengths (2, 3)", max_abs_diff(&s.0, &[1.0, 1.5]), 0.0));

    let feats = random_matrix(&mut rng, 5, 7, 1.0);
    let lens = [1usize, 4, 2, 3, 1];
    let s = scene_feature(&feats, &lens).unwrap();
    let manual: Vec<f64> = (0..7)
        .map(|k| (0..5).map(|i| lens[i] as f64 * feats[(i, k)]).sum::<f64>() / 5.0)
        .collect();
    out.push(MathCheck::new("scene feature vs direct summation", max_abs_diff(&s.0, &manual), 0.0));

    let visual = random_matrix(&mut rng, 3, 6, 1.0);
    let pooled = visual_mean_pool(&visual).unwrap();
    let manual: Vec<f64> = (0..6).map(|k| (0..3).map(|i| visual[(i, k)]).sum::<f64>() / 3.0).collect();
    out.push(MathCheck::new("visual mean pool vs column sums", max_abs_diff(&pooled.0, &manual), 0.0));

    let one = random_matrix(&mut rng, 1, 4, 1.0);
    out.push(MathCheck::new("alignment loss, single item", visgt_loss(&one, &one, w.tau).unwrap().abs(), 0.0));

    let e = std::f64::consts::E;
    let v = visgt_loss(&f, &f, 1.0).unwrap();
    out.push(MathCheck::new("alignment loss, identity similarity", (v + (e / (e + 1.0)).ln()).abs(), 1e-12));

    let pred = random_matrix(&mut rng, 4, 8, 1.0);
    let truth = random_matrix(&mut rng, 4, 8, 1.0);
    let perm = [2usize, 0, 3, 1];
    let permute = |m: &FeatureMatrix| FeatureMatrix::from_rows(&perm.iter().map(|&i| m.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
    let base = visgt_loss(&pred, &truth, w.tau).unwrap();
    let swapped = visgt_loss(&permute(&pred), &permute(&truth), w.tau).unwrap();
    out.push(MathCheck::new("alignment loss, batch relabeling", (base - swapped).abs(), 1e-9));
    out.push(MathCheck::new("alignment loss, non-negative", (-base).max(0.0), 0.0));

    out.push(MathCheck::new(
        "alignment loss gradient vs central differences",
        visgt_grad_error(&mut rng, 100, 4, 8, w.tau),
        GRAD_CHECK_TOLERANCE,
    ));
    out.push(MathCheck::new(
        "classification loss gradient vs central differences",
        cls_grad_error(&mut rng, 100, 4, 8),
        GRAD_CHECK_TOLERANCE,
    ));

    let uniform = FeatureMatrix::zeros(3, 6);
    out.push(MathCheck::new(
        "classification loss, uniform logits",
        (cls_loss(&uniform, &[0, 3, 5]).unwrap() - 3.0 * 6f64.ln()).abs(),
        1e-12,
    ));

    let p = BBox::new(0.0, 0.0, 1.0, 1.0);
    let g = BBox::new(0.0, 0.0, 2.0, 1.0);
    out.push(MathCheck::new("localization loss fixture", (loc_loss(&[p], &[g], &w).unwrap() - 6.0).abs(), 1e-12));
    out.push(MathCheck::new("localization loss, exact boxes", loc_loss(&[g], &[g], &w).unwrap().abs(), 0.0));
    out.push(MathCheck::new("total loss fixture", (total_loss(2.0, 0.5, 0.1, &w) - 3.5).abs(), 1e-12));
    out
}
