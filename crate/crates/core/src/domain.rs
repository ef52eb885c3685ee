//! Canonical annotation types shared by every stage of the engine.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box in continuous pixel units, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl From<[f64; 4]> for BBox {
    fn from([x, y, w, h]: [f64; 4]) -> Self {
        Self { x, y, w, h }
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl BBox {
    pub const fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    /// Build from corner form `(x1, y1, x2, y2)`.
    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new(x1, y1, x2 - x1, y2 - y1)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        [self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) && self.w >= 0.0 && self.h >= 0.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!("{self:?}")))
        }
    }

    /// Intersection with another box, `None` when they do not overlap with positive area.
    pub fn intersection(&self, other: &BBox) -> Option<BBox> {
        let x1 = self.x.max(other.x);
        let y1 = self.y.max(other.y);
        let x2 = self.right().min(other.right());
        let y2 = self.bottom().min(other.bottom());
        (x2 > x1 && y2 > y1).then(|| BBox::from_corners(x1, y1, x2, y2))
    }

    /// `true` if `self` lies entirely within `outer` (edges inclusive).
    pub fn contained_in(&self, outer: &BBox) -> bool {
        self.x >= outer.x && self.y >= outer.y && self.right() <= outer.right() && self.bottom() <= outer.bottom()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> BBox {
        BBox::new(self.x + dx, self.y + dy, self.w, self.h)
    }
}

/// One annotated object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    #[serde(rename = "bbox")]
    pub bbox: BBox,
    pub category: String,
    /// Originating dataset plus original annotation id. Survives tiling and merging unchanged.
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood: Option<f64>,
}

impl Instance {
    pub fn new(bbox: BBox, category: impl Into<String>, source_id: impl Into<String>) -> Self {
        Self {
            bbox,
            category: category.into(),
            source_id: source_id.into(),
            likelihood: None,
        }
    }

    pub fn with_likelihood(mut self, likelihood: f64) -> Self {
        self.likelihood = Some(likelihood);
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub image_id: String,
    pub width: u32,
    pub height: u32,
    pub uri: String,
    pub instances: Vec<Instance>,
}

impl ImageRecord {
    pub fn new(image_id: impl Into<String>, width: u32, height: u32, uri: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            width,
            height,
            uri: uri.into(),
            instances: Vec::new(),
        }
    }

    pub fn extent(&self) -> BBox {
        BBox::new(0.0, 0.0, f64::from(self.width), f64::from(self.height))
    }
}

/// A dataset: its category vocabulary plus image records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DatasetManifest {
    pub name: String,
    pub categories: Vec<String>,
    pub images: Vec<ImageRecord>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            ..Self::default()
        }
    }

    pub fn instance_count(&self) -> usize {
        self.images.iter().map(|im| im.instances.len()).sum()
    }

    pub fn instances(&self) -> impl Iterator<Item = (&ImageRecord, &Instance)> {
        self.images.iter().flat_map(|im| im.instances.iter().map(move |inst| (im, inst)))
    }

    /// Checks every structural invariant of a manifest.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.categories.len());
        for c in &self.categories {
            if canonicalize_category(c)? != *c {
                return Err(Error::InvalidCategory(c.clone()));
            }
            if !seen.insert(c.as_str()) {
                return Err(Error::DuplicateCategory(c.clone()));
            }
        }
        for im in &self.images {
            if im.width == 0 || im.height == 0 {
                return Err(Error::NegativeDimension(format!(
                    "image {:?} has size {}x{}",
                    im.image_id, im.width, im.height
                )));
            }
            let extent = im.extent();
            for inst in &im.instances {
                if !seen.contains(inst.category.as_str()) {
                    return Err(Error::UnknownCategoryReference(inst.category.clone()));
                }
                if !inst.bbox.is_valid() {
                    return Err(Error::NegativeDimension(format!(
                        "instance {:?} has box {:?}",
                        inst.source_id, inst.bbox
                    )));
                }
                if let Some(l) = inst.likelihood {
                    if !(0.0..=1.0).contains(&l) {
                        return Err(Error::InvalidParameter(format!(
                            "instance {:?} likelihood {l} outside [0, 1]",
                            inst.source_id
                        )));
                    }
                }
                let b = &inst.bbox;
                if b.x > extent.right() || b.y > extent.bottom() || b.right() < 0.0 || b.bottom() < 0.0 {
                    return Err(Error::InvalidBox(format!(
                        "instance {:?} box {:?} lies outside image {:?}",
                        inst.source_id, b, im.image_id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Normalizes a raw category name: trims, strips surrounding quotes, lowercases and
/// collapses internal whitespace.
pub fn canonicalize_category(raw: &str) -> Result<String> {
    let mut s = raw.trim();
    loop {
        let stripped = s
            .strip_prefix(['"', '\'', '\u{201c}', '\u{201d}'])
            .and_then(|t| t.strip_suffix(['"', '\'', '\u{201c}', '\u{201d}']));
        match stripped {
            Some(inner) => s = inner.trim(),
            None => break,
        }
    }
    let out = s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    if out.is_empty() {
        Err(Error::InvalidCategory(raw.to_owned()))
    } else {
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn canonicalize_examples() {
        assert_eq!(canonicalize_category("\"Airport runway\"").unwrap(), "airport runway");
        assert_eq!(canonicalize_category("Road").unwrap(), "road");
        assert_eq!(canonicalize_category("  SHIP  ").unwrap(), "ship");
        assert_eq!(canonicalize_category("Truck   w/Box").unwrap(), "truck w/box");
    }

    #[test]
    fn canonicalize_rejects_empty() {
        for raw in ["", "   ", "\"\"", "\" \""] {
            assert!(matches!(canonicalize_category(raw), Err(Error::InvalidCategory(_))), "{raw:?}");
        }
    }

    proptest! {
        #[test]
        fn canonicalize_is_idempotent(raw in "\\PC{0,24}") {
            if let Ok(once) = canonicalize_category(&raw) {
                prop_assert_eq!(canonicalize_category(&once).unwrap(), once);
            }
        }
    }

    #[test]
    fn validate_catches_unknown_category() {
        let mut m = DatasetManifest::new("t");
        m.categories = vec!["ship".into()];
        let mut im = ImageRecord::new("a", 10, 10, "a.png");
        im.instances.push(Instance::new(BBox::new(0.0, 0.0, 1.0, 1.0), "plane", "t:1"));
        m.images.push(im);
        assert!(matches!(m.validate(), Err(Error::UnknownCategoryReference(_))));
    }

    #[test]
    fn validate_catches_out_of_extent_box() {
        let mut m = DatasetManifest::new("t");
        m.categories = vec!["ship".into()];
        let mut im = ImageRecord::new("a", 10, 10, "a.png");
        im.instances.push(Instance::new(BBox::new(20.0, 0.0, 1.0, 1.0), "ship", "t:1"));
        m.images.push(im);
        assert!(matches!(m.validate(), Err(Error::InvalidBox(_))));
    }

    #[test]
    fn bbox_serializes_as_array() {
        let b = BBox::new(161.0, 210.0, 62.0, 45.5);
        assert_eq!(serde_json::to_string(&b).unwrap(), "[161.0,210.0,62.0,45.5]");
        let back: BBox = serde_json::from_str("[1, 2, 3, 4]").unwrap();
        assert_eq!(back, BBox::new(1.0, 2.0, 3.0, 4.0));
    }
}
