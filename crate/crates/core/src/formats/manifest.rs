//! Canonical manifest JSON codec and the COCO-instances import adapter.
//!
//! The canonical document is a COCO-style subset with string image ids and a
//! `source_id` on every annotation. Writing is deterministic: object keys are sorted,
//! categories keep their listed order, annotations follow image order and ids are
//! renumbered from 1, so `write(read(x)) == x` for any document produced by `write`.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::domain::{canonicalize_category, BBox, DatasetManifest, ImageRecord, Instance};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

// Field order is alphabetical: serde_json writes keys in declaration order.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Document {
    annotations: Vec<AnnotationJson>,
    categories: Vec<CategoryJson>,
    images: Vec<ImageJson>,
    name: String,
    schema_version: u32,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AnnotationJson {
    bbox: [f64; 4],
    category_id: u64,
    id: u64,
    image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    likelihood: Option<f64>,
    source_id: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CategoryJson {
    id: u64,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ImageJson {
    height: i64,
    id: String,
    uri: String,
    width: i64,
}

fn dimension(value: i64, what: &str, id: &str) -> Result<u32> {
    if value <= 0 {
        return Err(Error::NegativeDimension(format!("image {id:?} {what} is {value}")));
    }
    u32::try_from(value).map_err(|_| Error::NegativeDimension(format!("image {id:?} {what} {value} too large")))
}

pub fn read_manifest<R: Read>(reader: R) -> Result<DatasetManifest> {
    let doc: Document = serde_json::from_reader(reader)?;
    if doc.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion {
            found: doc.schema_version,
            expected: SCHEMA_VERSION,
        });
    }

    let mut categories = Vec::with_capacity(doc.categories.len());
    let mut by_id = HashMap::with_capacity(doc.categories.len());
    let mut seen = HashSet::new();
    for c in doc.categories {
        let name = canonicalize_category(&c.name)?;
        if !seen.insert(name.clone()) {
            return Err(Error::DuplicateCategory(name));
        }
        if by_id.insert(c.id, name.clone()).is_some() {
            return Err(Error::InvalidParameter(format!("category id {} used twice", c.id)));
        }
        categories.push(name);
    }

    let mut images = Vec::with_capacity(doc.images.len());
    let mut index = HashMap::with_capacity(doc.images.len());
    for im in doc.images {
        let width = dimension(im.width, "width", &im.id)?;
        let height = dimension(im.height, "height", &im.id)?;
        if index.insert(im.id.clone(), images.len()).is_some() {
            return Err(Error::InvalidParameter(format!("image id {:?} used twice", im.id)));
        }
        images.push(ImageRecord::new(im.id, width, height, im.uri));
    }

    for ann in doc.annotations {
        let category = by_id
            .get(&ann.category_id)
            .ok_or_else(|| Error::UnknownCategoryReference(format!("annotation {} -> category id {}", ann.id, ann.category_id)))?;
        let slot = *index
            .get(&ann.image_id)
            .ok_or_else(|| Error::UnknownImageReference(format!("annotation {} -> image {:?}", ann.id, ann.image_id)))?;
        let bbox = BBox::from(ann.bbox);
        if bbox.w < 0.0 || bbox.h < 0.0 {
            return Err(Error::NegativeDimension(format!("annotation {} box {:?}", ann.id, ann.bbox)));
        }
        images[slot].instances.push(Instance {
            bbox,
            category: category.clone(),
            source_id: ann.source_id,
            likelihood: ann.likelihood,
        });
    }

    let manifest = DatasetManifest {
        name: doc.name,
        categories,
        images,
    };
    manifest.validate()?;
    Ok(manifest)
}

pub fn read_manifest_bytes(bytes: &[u8]) -> Result<DatasetManifest> {
    read_manifest(bytes)
}

fn to_document(m: &DatasetManifest) -> Result<Document> {
    let ids: HashMap<&str, u64> = m.categories.iter().enumerate().map(|(i, c)| (c.as_str(), i as u64 + 1)).collect();
    let mut annotations = Vec::with_capacity(m.instance_count());
    for im in &m.images {
        for inst in &im.instances {
            let category_id = *ids
                .get(inst.category.as_str())
                .ok_or_else(|| Error::UnknownCategoryReference(inst.category.clone()))?;
            annotations.push(AnnotationJson {
                bbox: inst.bbox.into(),
                category_id,
                id: annotations.len() as u64 + 1,
                image_id: im.image_id.clone(),
                likelihood: inst.likelihood,
                source_id: inst.source_id.clone(),
            });
        }
    }
    Ok(Document {
        annotations,
        categories: m
            .categories
            .iter()
            .enumerate()
            .map(|(i, c)| CategoryJson {
                id: i as u64 + 1,
                name: c.clone(),
            })
            .collect(),
        images: m
            .images
            .iter()
            .map(|im| ImageJson {
                height: i64::from(im.height),
                id: im.image_id.clone(),
                uri: im.uri.clone(),
                width: i64::from(im.width),
            })
            .collect(),
        name: m.name.clone(),
        schema_version: SCHEMA_VERSION,
    })
}

pub fn write_manifest<W: Write>(m: &DatasetManifest, mut writer: W) -> Result<()> {
    let doc = to_document(m)?;
    serde_json::to_writer_pretty(&mut writer, &doc)?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn manifest_to_bytes(m: &DatasetManifest) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_manifest(m, &mut out)?;
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct CocoDocument {
    images: Vec<CocoImage>,
    #[serde(default)]
    annotations: Vec<CocoAnnotation>,
    categories: Vec<CocoCategory>,
}

#[derive(Debug, Deserialize)]
struct CocoImage {
    id: u64,
    file_name: String,
    width: i64,
    height: i64,
}

#[derive(Debug, Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    category_id: u64,
    bbox: [f64; 4],
}

#[derive(Debug, Deserialize)]
struct CocoCategory {
    id: u64,
    name: String,
}

/// Imports a standard COCO `instances_*.json` into the canonical manifest.
///
/// Image ids become their decimal string, URIs are `image_root` joined with `file_name`,
/// and each instance gets `source_id = "<name>:<annotation id>"`. Category names that
/// collapse to the same canonical form are merged.
pub fn import_coco<R: Read>(reader: R, name: &str, image_root: Option<&str>) -> Result<DatasetManifest> {
    let doc: CocoDocument = serde_json::from_reader(reader)?;
    let mut categories: Vec<String> = Vec::new();
    let mut by_id = HashMap::new();
    for c in doc.categories {
        let canon = canonicalize_category(&c.name)?;
        if !categories.contains(&canon) {
            categories.push(canon.clone());
        }
        by_id.insert(c.id, canon);
    }
    let mut index = HashMap::new();
    let mut images = Vec::with_capacity(doc.images.len());
    for im in doc.images {
        let id = im.id.to_string();
        let width = dimension(im.width, "width", &id)?;
        let height = dimension(im.height, "height", &id)?;
        let uri = match image_root {
            Some(root) => format!("{}/{}", root.trim_end_matches('/'), im.file_name),
            None => im.file_name,
        };
        index.insert(im.id, images.len());
        images.push(ImageRecord::new(id, width, height, uri));
    }
    for ann in doc.annotations {
        let category = by_id
            .get(&ann.category_id)
            .ok_or_else(|| Error::UnknownCategoryReference(format!("annotation {} -> category id {}", ann.id, ann.category_id)))?;
        let slot = *index
            .get(&ann.image_id)
            .ok_or_else(|| Error::UnknownImageReference(format!("annotation {} -> image {}", ann.id, ann.image_id)))?;
        let bbox = BBox::from(ann.bbox);
        if bbox.w < 0.0 || bbox.h < 0.0 {
            return Err(Error::NegativeDimension(format!("annotation {} box {:?}", ann.id, ann.bbox)));
        }
        images[slot]
            .instances
            .push(Instance::new(bbox, category.clone(), format!("{name}:{}", ann.id)));
    }
    let manifest = DatasetManifest {
        name: name.to_owned(),
        categories,
        images,
    };
    manifest.validate()?;
    Ok(manifest)
}
