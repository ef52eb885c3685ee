//! COCO-style detection evaluation: greedy matching, interpolated AP, AP50/AP75/mAP.
//!
//! Detections are ordered by score descending, then image id, then box coordinates, so
//! results do not depend on the input order of equally scored detections.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};

use crate::domain::{BBox, DatasetManifest};
use crate::error::{Error, Result};
use crate::geometry::iou;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredDetection {
    pub image_id: String,
    pub category: String,
    pub bbox: BBox,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub image_id: String,
    pub bbox: BBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interpolation {
    /// Mean precision envelope at recall 0.00, 0.01, ..., 1.00.
    #[default]
    Coco101,
    /// Mean precision envelope at recall 0.0, 0.1, ..., 1.0.
    Voc11,
}

impl Interpolation {
    fn recall_points(self) -> usize {
        match self {
            Interpolation::Coco101 => 100,
            Interpolation::Voc11 => 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub interpolation: Interpolation,
    /// Detections kept per image and category, highest scores first.
    pub max_dets: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            interpolation: Interpolation::Coco101,
            max_dets: 100,
        }
    }
}

/// IoU thresholds 0.50, 0.55, ..., 0.95.
pub fn iou_thresholds() -> Vec<f64> {
    (0..10).map(|k| f64::from(50 + 5 * k) / 100.0).collect()
}

fn cmp_box(a: &BBox, b: &BBox) -> Ordering {
    a.x.total_cmp(&b.x)
        .then(a.y.total_cmp(&b.y))
        .then(a.w.total_cmp(&b.w))
        .then(a.h.total_cmp(&b.h))
}

fn cmp_detections(a: &ScoredDetection, b: &ScoredDetection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then_with(|| a.image_id.cmp(&b.image_id))
        .then_with(|| cmp_box(&a.bbox, &b.bbox))
}

/// Greedy matching within one image and category.
///
/// Returns `(detection index, matched ground-truth index)` in processing order. Each
/// detection claims the unclaimed ground truth of highest IoU at or above `iou_thr`;
/// ties go to the lower ground-truth index.
pub fn match_greedy(dets: &[ScoredDetection], gts: &[BBox], iou_thr: f64) -> Vec<(usize, Option<usize>)> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| cmp_detections(&dets[a], &dets[b]).then(a.cmp(&b)));
    let mut claimed = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let mut best: Option<(usize, f64)> = None;
            for (g, gt) in gts.iter().enumerate() {
                if claimed[g] {
                    continue;
                }
                let v = iou(&dets[d].bbox, gt);
                if v >= iou_thr && best.is_none_or(|(_, bv)| v > bv) {
                    best = Some((g, v));
                }
            }
            if let Some((g, _)) = best {
                claimed[g] = true;
            }
            (d, best.map(|(g, _)| g))
        })
        .collect()
}

/// Interpolated average precision for a single category.
///
/// Returns 0 when there is no ground truth; callers exclude such categories from means.
pub fn average_precision(dets: &[ScoredDetection], gts: &[GroundTruth], iou_thr: f64, opts: &EvalOptions) -> f64 {
    let npos = gts.len();
    if npos == 0 {
        return 0.0;
    }
    let mut gt_by_image: HashMap<&str, Vec<BBox>> = HashMap::new();
    for g in gts {
        gt_by_image.entry(g.image_id.as_str()).or_default().push(g.bbox);
    }
    let mut det_by_image: BTreeMap<&str, Vec<ScoredDetection>> = BTreeMap::new();
    for d in dets {
        det_by_image.entry(d.image_id.as_str()).or_default().push(d.clone());
    }

    let mut scored: Vec<(&ScoredDetection, bool)> = Vec::with_capacity(dets.len());
    let mut kept: Vec<ScoredDetection> = Vec::new();
    let mut flags: Vec<bool> = Vec::new();
    for (image, mut ds) in det_by_image {
        ds.sort_by(cmp_detections);
        ds.truncate(opts.max_dets);
        let empty = Vec::new();
        let image_gts = gt_by_image.get(image).unwrap_or(&empty);
        let matches = match_greedy(&ds, image_gts, iou_thr);
        let mut tp = vec![false; ds.len()];
        for (d, g) in matches {
            tp[d] = g.is_some();
        }
        flags.extend(tp);
        kept.extend(ds);
    }
    scored.extend(kept.iter().zip(flags));
    scored.sort_by(|a, b| cmp_detections(a.0, b.0));

    let mut recall = Vec::with_capacity(scored.len());
    let mut precision = Vec::with_capacity(scored.len());
    let (mut tp, mut fp) = (0usize, 0usize);
    for (_, hit) in &scored {
        if *hit {
            tp += 1;
        } else {
            fp += 1;
        }
        recall.push(tp as f64 / npos as f64);
        precision.push(tp as f64 / (tp + fp) as f64);
    }
    for i in (1..precision.len()).rev() {
        if precision[i] > precision[i - 1] {
            precision[i - 1] = precision[i];
        }
    }

    let steps = opts.interpolation.recall_points();
    let total: f64 = (0..=steps)
        .map(|k| {
            let r = k as f64 / steps as f64;
            let i = recall.partition_point(|&x| x < r);
            precision.get(i).copied().unwrap_or(0.0)
        })
        .sum();
    total / (steps + 1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryAp {
    pub category: String,
    pub gt_count: usize,
    /// AP at each threshold of [`EvalReport::thresholds`]; `None` without ground truth.
    pub ap: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub per_category: Vec<CategoryAp>,
    pub ap50: f64,
    pub ap75: f64,
    pub map: f64,
}

impl EvalReport {
    /// Aligned plain-text table, one row per category plus a summary row.
    pub fn to_table(&self) -> String {
        let width = self
            .per_category
            .iter()
            .map(|c| c.category.len())
            .chain(std::iter::once(8))
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", "category", "gts", "AP50", "AP75", "mAP");
        for c in &self.per_category {
            match &c.ap {
                Some(ap) => {
                    let mean = ap.iter().sum::<f64>() / ap.len() as f64;
                    let _ = writeln!(
                        out,
                        "{:<width$}  {:>6}  {:>6.3}  {:>6.3}  {:>6.3}",
                        c.category, c.gt_count, ap[0], ap[5], mean
                    );
                }
                None => {
                    let _ = writeln!(out, "{:<width$}  {:>6}  {:>6}  {:>6}  {:>6}", c.category, 0, "-", "-", "-");
                }
            }
        }
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>6.3}  {:>6.3}  {:>6.3}",
            "all",
            self.per_category.iter().map(|c| c.gt_count).sum::<usize>(),
            self.ap50,
            self.ap75,
            self.map
        );
        out
    }
}

pub fn evaluate(dets: &[ScoredDetection], benchmark: &DatasetManifest, opts: &EvalOptions) -> Result<EvalReport> {
    let known: HashSet<&str> = benchmark.categories.iter().map(String::as_str).collect();
    for d in dets {
        if !known.contains(d.category.as_str()) {
            return Err(Error::UnknownCategory(d.category.clone()));
        }
        if !(0.0..=1.0).contains(&d.score) {
            return Err(Error::InvalidParameter(format!("detection score {} outside [0, 1]", d.score)));
        }
        d.bbox.validate()?;
    }
    let thresholds = iou_thresholds();

    let mut gts: HashMap<&str, Vec<GroundTruth>> = HashMap::new();
    for (im, inst) in benchmark.instances() {
        gts.entry(inst.category.as_str()).or_default().push(GroundTruth {
            image_id: im.image_id.clone(),
            bbox: inst.bbox,
        });
    }
    let mut by_cat: HashMap<&str, Vec<ScoredDetection>> = HashMap::new();
    for d in dets {
        by_cat.entry(d.category.as_str()).or_default().push(d.clone());
    }

    let mut per_category = Vec::with_capacity(benchmark.categories.len());
    for cat in &benchmark.categories {
        let cat_gts = gts.get(cat.as_str()).map_or(&[][..], Vec::as_slice);
        let cat_dets = by_cat.get(cat.as_str()).map_or(&[][..], Vec::as_slice);
        let ap = (!cat_gts.is_empty())
            .then(|| thresholds.iter().map(|&t| average_precision(cat_dets, cat_gts, t, opts)).collect());
        per_category.push(CategoryAp {
            category: cat.clone(),
            gt_count: cat_gts.len(),
            ap,
        });
    }

    let scored: Vec<&Vec<f64>> = per_category.iter().filter_map(|c| c.ap.as_ref()).collect();
    let mean_at = |k: usize| {
        if scored.is_empty() {
            0.0
        } else {
            scored.iter().map(|ap| ap[k]).sum::<f64>() / scored.len() as f64
        }
    };
    let map = if scored.is_empty() {
        0.0
    } else {
        scored.iter().flat_map(|ap| ap.iter()).sum::<f64>() / (scored.len() * thresholds.len()) as f64
    };
    Ok(EvalReport {
        ap50: mean_at(0),
        ap75: mean_at(5),
        map,
        thresholds,
        per_category,
    })
}

pub fn read_detections_jsonl<R: BufRead>(reader: R) -> Result<Vec<ScoredDetection>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{ImageRecord, Instance};

    fn det(image: &str, b: BBox, score: f64) -> ScoredDetection {
        ScoredDetection {
            image_id: image.into(),
            category: "ship".into(),
            bbox: b,
            score,
        }
    }

    fn gt(image: &str, b: BBox) -> GroundTruth {
        GroundTruth {
            image_id: image.into(),
            bbox: b,
        }
    }

    const A: BBox = BBox::new(0.0, 0.0, 10.0, 10.0);
    const B: BBox = BBox::new(20.0, 20.0, 10.0, 10.0);

    #[test]
    fn match_examples() {
        assert_eq!(match_greedy(&[det("i", A, 0.9)], &[A], 0.5), vec![(0, Some(0))]);
        let two = [det("i", A, 0.3), det("i", A, 0.8)];
        assert_eq!(match_greedy(&two, &[A], 0.5), vec![(1, Some(0)), (0, None)]);
        let low = BBox::new(0.0, 0.0, 10.0, 4.0);
        assert!((iou(&low, &A) - 0.4).abs() < 1e-12);
        assert_eq!(match_greedy(&[det("i", low, 0.9)], &[A], 0.5), vec![(0, None)]);
    }

    #[test]
    fn ties_go_to_lower_gt_index() {
        let d = det("i", BBox::new(5.0, 0.0, 10.0, 10.0), 0.9);
        let left = BBox::new(0.0, 0.0, 10.0, 10.0);
        let right = BBox::new(10.0, 0.0, 10.0, 10.0);
        assert_eq!(match_greedy(&[d], &[right, left], 0.3), vec![(0, Some(0))]);
    }

    #[test]
    fn ap_examples() {
        let opts = EvalOptions::default();
        let gts = [gt("i", A), gt("j", B)];
        let perfect = [det("i", A, 0.9), det("j", B, 0.8)];
        assert_eq!(average_precision(&perfect, &gts, 0.5, &opts), 1.0);
        assert_eq!(average_precision(&[], &gts, 0.5, &opts), 0.0);
        assert_eq!(average_precision(&perfect, &[], 0.5, &opts), 0.0);
    }

    #[test]
    fn ap_mixed_case() {
        // FP at top, then two TPs: precision 0, 1/2, 2/3 at recall 0, 0.5, 1
        let opts = EvalOptions::default();
        let gts = [gt("i", A), gt("i", B)];
        let dets = [
            det("i", BBox::new(50.0, 50.0, 5.0, 5.0), 0.9),
            det("i", A, 0.8),
            det("i", B, 0.7),
        ];
        let expected = 2.0 / 3.0;
        assert!((average_precision(&dets, &gts, 0.5, &opts) - expected).abs() < 1e-12);
        let voc = EvalOptions {
            interpolation: Interpolation::Voc11,
            ..opts
        };
        assert!((average_precision(&dets, &gts, 0.5, &voc) - expected).abs() < 1e-12);
    }

    #[test]
    fn max_dets_truncates_per_image() {
        let gts = [gt("i", A)];
        let mut dets: Vec<_> = (0..5).map(|k| det("i", BBox::new(100.0 + k as f64, 0.0, 1.0, 1.0), 0.9)).collect();
        dets.push(det("i", A, 0.1));
        let opts = EvalOptions {
            max_dets: 5,
            ..EvalOptions::default()
        };
        assert_eq!(average_precision(&dets, &gts, 0.5, &opts), 0.0);
        assert!(average_precision(&dets, &gts, 0.5, &EvalOptions::default()) > 0.0);
    }

    fn bench() -> DatasetManifest {
        let mut m = DatasetManifest::new("b");
        m.categories = vec!["ship".into(), "plane".into(), "tank".into()];
        let mut im = ImageRecord::new("i", 100, 100, "i.png");
        im.instances.push(Instance::new(A, "ship", "b:1"));
        im.instances.push(Instance::new(B, "plane", "b:2"));
        m.images.push(im);
        m
    }

    #[test]
    fn evaluate_perfect_and_empty() {
        let m = bench();
        let dets: Vec<_> = m
            .instances()
            .map(|(im, i)| ScoredDetection {
                image_id: im.image_id.clone(),
                category: i.category.clone(),
                bbox: i.bbox,
                score: 1.0,
            })
            .collect();
        let r = evaluate(&dets, &m, &EvalOptions::default()).unwrap();
        assert_eq!((r.ap50, r.ap75, r.map), (1.0, 1.0, 1.0));
        assert!(r.per_category[2].ap.is_none());

        let r = evaluate(&[], &m, &EvalOptions::default()).unwrap();
        assert_eq!((r.ap50, r.ap75, r.map), (0.0, 0.0, 0.0));
        assert!(r.to_table().contains("tank"));
    }

    #[test]
    fn evaluate_rejects_unknown_category() {
        let mut d = det("i", A, 0.5);
        d.category = "zebra".into();
        assert!(matches!(evaluate(&[d], &bench(), &EvalOptions::default()), Err(Error::UnknownCategory(_))));
    }

    #[test]
    fn detections_jsonl() {
        let text = "{\"image_id\":\"i\",\"category\":\"ship\",\"bbox\":[0,0,10,10],\"score\":0.5}\n";
        let dets = read_detections_jsonl(text.as_bytes()).unwrap();
        assert_eq!(dets[0].bbox, A);
    }
}
