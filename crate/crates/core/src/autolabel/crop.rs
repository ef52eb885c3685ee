//! Local crop statistics used by the monotone-crop rule.

use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::domain::BBox;
use crate::error::Result;

/// Path of a locally readable image, if the uri names one.
pub fn local_path(uri: &str) -> Option<PathBuf> {
    let path = match uri.strip_prefix("file://") {
        Some(rest) => Path::new(rest).to_path_buf(),
        None if !uri.contains("://") => Path::new(uri).to_path_buf(),
        None => return None,
    };
    path.is_file().then_some(path)
}

pub fn load_gray(path: &Path) -> Result<GrayImage> {
    Ok(image::open(path)?.to_luma8())
}

/// Population standard deviation of grayscale values inside `bbox`, clipped to the image.
/// `None` when the clipped region holds no pixels.
pub fn crop_stddev(img: &GrayImage, bbox: &BBox) -> Option<f64> {
    let x0 = bbox.x.max(0.0).floor() as u32;
    let y0 = bbox.y.max(0.0).floor() as u32;
    let x1 = (bbox.right().min(img.width() as f64)).ceil().max(0.0) as u32;
    let y1 = (bbox.bottom().min(img.height() as f64)).ceil().max(0.0) as u32;
    if x1 <= x0 || y1 <= y0 {
        return None;
    }
    let (mut sum, mut sq) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let v = img.get_pixel(x, y).0[0] as f64;
            sum += v;
            sq += v * v;
        }
    }
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let mean = sum / n;
    Some((sq / n - mean * mean).max(0.0).sqrt())
}
