//! Fixed-size tiling of oversized images with box remapping.
//!
//! Origins advance by an integer stride and the last tile along each axis is clamped to
//! the image border, so every tile except those of undersized images has the full size.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::domain::{BBox, ImageRecord, Instance};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TileSpec {
    pub tile_size: u32,
    pub overlap_ratio: f64,
    pub min_visibility: f64,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self {
            tile_size: 1024,
            overlap_ratio: 0.2,
            min_visibility: 0.25,
        }
    }
}

impl TileSpec {
    pub fn new(tile_size: u32, overlap_ratio: f64, min_visibility: f64) -> Result<Self> {
        let spec = Self {
            tile_size,
            overlap_ratio,
            min_visibility,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn stride(&self) -> u32 {
        (f64::from(self.tile_size) * (1.0 - self.overlap_ratio)).floor() as u32
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidParameter("tile_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_ratio) {
            return Err(Error::InvalidParameter(format!(
                "overlap_ratio {} outside [0, 1)",
                self.overlap_ratio
            )));
        }
        if !(self.min_visibility > 0.0 && self.min_visibility <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "min_visibility {} outside (0, 1]",
                self.min_visibility
            )));
        }
        if self.stride() < 1 {
            return Err(Error::InvalidParameter(format!(
                "tile_size {} with overlap {} gives a zero stride",
                self.tile_size, self.overlap_ratio
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub parent_image_id: String,
    pub origin_x: u32,
    pub origin_y: u32,
    pub width: u32,
    pub height: u32,
    /// Boxes in tile-local coordinates.
    pub instances: Vec<Instance>,
}

impl Tile {
    pub fn tile_id(&self) -> String {
        format!("{}@{},{}", self.parent_image_id, self.origin_x, self.origin_y)
    }

    /// Converts to an image record whose URI addresses the tile region of the parent.
    pub fn into_image_record(self, parent_uri: &str) -> ImageRecord {
        ImageRecord {
            image_id: self.tile_id(),
            width: self.width,
            height: self.height,
            uri: format!(
                "{parent_uri}#xywh={},{},{},{}",
                self.origin_x, self.origin_y, self.width, self.height
            ),
            instances: self.instances,
        }
    }
}

fn axis_origins(len: u32, tile: u32, stride: u32) -> Vec<u32> {
    if len <= tile {
        return vec![0];
    }
    let mut out: Vec<u32> = (0..).map(|k| k * stride).take_while(|&p| p + tile < len).collect();
    let last = len - tile;
    if out.last() != Some(&last) {
        out.push(last);
    }
    out.dedup();
    out
}

/// Row-major tile origins covering a `image_w` x `image_h` image.
pub fn plan_tiles(image_w: u32, image_h: u32, spec: &TileSpec) -> Vec<(u32, u32)> {
    let stride = spec.stride().max(1);
    let xs = axis_origins(image_w, spec.tile_size, stride);
    let ys = axis_origins(image_h, spec.tile_size, stride);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (x, y))).collect()
}

/// Maps a global box into a tile, returning `None` when too little of it is visible.
fn remap(bbox: &BBox, tile: &BBox, min_visibility: f64) -> Option<BBox> {
    if bbox.contained_in(tile) {
        // untouched widths keep the remap exactly invertible
        return Some(bbox.translate(-tile.x, -tile.y));
    }
    let area = bbox.area();
    if area <= 0.0 {
        return None;
    }
    let clipped = bbox.intersection(tile)?;
    if clipped.area() / area < min_visibility {
        return None;
    }
    Some(clipped.translate(-tile.x, -tile.y))
}

pub fn slice_image(rec: &ImageRecord, spec: &TileSpec) -> Vec<Tile> {
    plan_tiles(rec.width, rec.height, spec)
        .into_iter()
        .map(|(ox, oy)| {
            let width = spec.tile_size.min(rec.width);
            let height = spec.tile_size.min(rec.height);
            let region = BBox::new(f64::from(ox), f64::from(oy), f64::from(width), f64::from(height));
            let instances = rec
                .instances
                .iter()
                .filter_map(|inst| {
                    remap(&inst.bbox, &region, spec.min_visibility).map(|bbox| Instance {
                        bbox,
                        ..inst.clone()
                    })
                })
                .collect();
            Tile {
                parent_image_id: rec.image_id.clone(),
                origin_x: ox,
                origin_y: oy,
                width,
                height,
                instances,
            }
        })
        .collect()
}

/// Number of distinct source instances across tiles, ignoring overlap duplicates.
pub fn dedup_instances(tiles: &[Tile]) -> usize {
    tiles
        .iter()
        .flat_map(|t| t.instances.iter().map(|i| i.source_id.as_str()))
        .collect::<HashSet<_>>()
        .len()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(tile: u32, overlap: f64) -> TileSpec {
        TileSpec::new(tile, overlap, 0.25).unwrap()
    }

    #[test]
    fn plan_examples() {
        assert_eq!(plan_tiles(800, 800, &spec(1024, 0.2)), vec![(0, 0)]);
        assert_eq!(plan_tiles(1024, 1024, &spec(1024, 0.2)), vec![(0, 0)]);
        let plan = plan_tiles(2048, 2048, &spec(1024, 0.2));
        assert_eq!(plan.len(), 9);
        let xs: Vec<u32> = plan.iter().take(3).map(|p| p.0).collect();
        assert_eq!(xs, vec![0, 819, 1024]);
        assert_eq!(plan[3], (0, 819));
    }

    #[test]
    fn plan_exact_multiple_has_no_duplicate_origin() {
        assert_eq!(plan_tiles(2048, 100, &spec(1024, 0.0)), vec![(0, 0), (1024, 0)]);
    }

    #[test]
    fn spec_rejects_zero_stride() {
        assert!(TileSpec::new(1, 0.5, 0.25).is_err());
        assert!(TileSpec::new(0, 0.2, 0.25).is_err());
        assert!(TileSpec::new(10, 1.0, 0.25).is_err());
        assert!(TileSpec::new(10, 0.2, 0.0).is_err());
    }

    fn image_with(boxes: &[BBox]) -> ImageRecord {
        let mut rec = ImageRecord::new("img", 2048, 2048, "img.tif");
        rec.instances = boxes
            .iter()
            .enumerate()
            .map(|(i, b)| Instance::new(*b, "ship", format!("src:{i}")))
            .collect();
        rec
    }

    #[test]
    fn slice_translates_into_tile() {
        let rec = image_with(&[BBox::new(900.0, 50.0, 100.0, 60.0)]);
        let tiles = slice_image(&rec, &spec(1024, 0.2));
        let t = tiles.iter().find(|t| (t.origin_x, t.origin_y) == (819, 0)).unwrap();
        assert_eq!(t.instances[0].bbox, BBox::new(81.0, 50.0, 100.0, 60.0));
        assert_eq!(t.instances[0].source_id, "src:0");
    }

    #[test]
    fn slice_drops_barely_visible() {
        // 10 of 100 columns fall inside the first tile
        let rec = image_with(&[BBox::new(1014.0, 10.0, 100.0, 10.0)]);
        let tiles = slice_image(&rec, &spec(1024, 0.0));
        assert!(tiles[0].instances.is_empty());
        assert_eq!(tiles[1].instances[0].bbox, BBox::new(0.0, 10.0, 90.0, 10.0));
    }

    #[test]
    fn slice_without_instances() {
        let tiles = slice_image(&image_with(&[]), &spec(1024, 0.2));
        assert_eq!(tiles.len(), 9);
        assert!(tiles.iter().all(|t| t.instances.is_empty()));
    }

    #[test]
    fn dedup_examples() {
        let rec = image_with(&[BBox::new(850.0, 100.0, 100.0, 100.0)]);
        let tiles = slice_image(&rec, &spec(1024, 0.2));
        let total: usize = tiles.iter().map(|t| t.instances.len()).sum();
        assert_eq!(total, 2);
        assert_eq!(dedup_instances(&tiles), 1);
        assert_eq!(dedup_instances(&[]), 0);
    }

    proptest! {
        #[test]
        fn tiles_cover_every_pixel(w in 1u32..5000, h in 1u32..5000, size in 16u32..1500, overlap in 0.0..0.9f64) {
            let s = TileSpec::new(size, overlap, 0.25);
            prop_assume!(s.is_ok());
            let s = s.unwrap();
            let plan = plan_tiles(w, h, &s);
            for (len, axis) in [(w, 0usize), (h, 1usize)] {
                let mut origins: Vec<u32> = plan.iter().map(|p| if axis == 0 { p.0 } else { p.1 }).collect();
                origins.sort_unstable();
                origins.dedup();
                let tile = size.min(len);
                prop_assert_eq!(origins[0], 0);
                prop_assert_eq!(*origins.last().unwrap() + tile, len);
                for pair in origins.windows(2) {
                    prop_assert!(pair[1] <= pair[0] + tile);
                }
            }
        }

        #[test]
        fn interior_boxes_round_trip(x in 0.0..1900.0f64, y in 0.0..1900.0f64, bw in 0.0..120.0f64, bh in 0.0..120.0f64) {
            let b = BBox::new(x, y, bw, bh);
            prop_assume!(b.right() <= 2048.0 && b.bottom() <= 2048.0);
            let tiles = slice_image(&image_with(&[b]), &spec(1024, 0.2));
            for t in &tiles {
                let region = BBox::new(f64::from(t.origin_x), f64::from(t.origin_y), f64::from(t.width), f64::from(t.height));
                if b.contained_in(&region) {
                    let local = t.instances[0].bbox;
                    prop_assert_eq!(local.translate(region.x, region.y), b);
                }
                for inst in &t.instances {
                    prop_assert!(inst.bbox.contained_in(&BBox::new(0.0, 0.0, region.w, region.h)));
                }
            }
        }
    }
}
