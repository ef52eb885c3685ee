//! Dataset summary counts.

use std::collections::HashMap;
use std::fmt::Write;

use lae_core::DatasetManifest;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CategoryCount {
    pub category: String,
    pub instances: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestStats {
    pub name: String,
    pub image_count: usize,
    pub category_count: usize,
    pub instance_count: usize,
    /// In category-table order; categories without instances are listed with zero.
    pub per_category: Vec<CategoryCount>,
}

pub fn stats(m: &DatasetManifest) -> ManifestStats {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (_, inst) in m.instances() {
        *counts.entry(inst.category.as_str()).or_default() += 1;
    }
    ManifestStats {
        name: m.name.clone(),
        image_count: m.images.len(),
        category_count: m.categories.len(),
        instance_count: m.instance_count(),
        per_category: m
            .categories
            .iter()
            .map(|c| CategoryCount {
                category: c.clone(),
                instances: counts.get(c.as_str()).copied().unwrap_or(0),
            })
            .collect(),
    }
}

impl ManifestStats {
    pub fn to_table(&self) -> String {
        let width = self.per_category.iter().map(|c| c.category.len()).max().unwrap_or(0).max(8);
        let mut s = String::new();
        for c in &self.per_category {
            let _ = writeln!(s, "{:<width$}  {:>8}", c.category, c.instances);
        }
        let _ = writeln!(
            s,
            "{:<width$}  {:>8}\nimages {}  categories {}",
            "total", self.instance_count, self.image_count, self.category_count
        );
        s
    }
}
