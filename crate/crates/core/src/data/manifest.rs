//! Category manifests: named categories, each listing its member classes.
//!
//! File format, one record per line, UTF-8:
//!
//! ```text
//! # comment
//! category_name,class_id[,display_name]
//! ```
//!
//! Blank lines and `#` comments are ignored. An optional header line
//! `category,class_id,display_name` is skipped. A line holding only a
//! category name declares the category without adding a class; a declared
//! category that never receives a class is an error.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClassEntry {
    pub class_id: String,
    pub display_name: String,
}

impl ClassEntry {
    pub fn new(class_id: impl Into<String>) -> Self {
        let class_id = class_id.into();
        ClassEntry {
            display_name: class_id.clone(),
            class_id,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub name: String,
    pub classes: Vec<ClassEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryManifest {
    pub categories: Vec<Category>,
}

impl CategoryManifest {
    /// Checks the manifest invariants: unique category names, no class in two
    /// categories, no empty category.
    pub fn new(categories: Vec<Category>) -> Result<Self> {
        let mut names = HashMap::new();
        let mut owner: HashMap<&str, &str> = HashMap::new();
        for cat in &categories {
            if names.insert(cat.name.as_str(), ()).is_some() {
                return Err(Error::Config(format!("duplicate category `{}`", cat.name)));
            }
            if cat.classes.is_empty() {
                return Err(Error::EmptyCategory(cat.name.clone()));
            }
            for class in &cat.classes {
                if let Some(first) = owner.insert(&class.class_id, &cat.name) {
                    return Err(Error::DuplicateClass {
                        class_id: class.class_id.clone(),
                        first: first.to_string(),
                        second: cat.name.clone(),
                        line: 0,
                    });
                }
            }
        }
        Ok(CategoryManifest { categories })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).at(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut categories: Vec<Category> = Vec::new();
        let mut category_index: HashMap<String, usize> = HashMap::new();
        let mut class_owner: HashMap<String, (String, usize)> = HashMap::new();
        let mut seen_record = false;

        for (lineno, raw) in text.lines().enumerate() {
            let line_no = lineno + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !seen_record {
                seen_record = true;
                if fields.len() >= 2
                    && fields[0].eq_ignore_ascii_case("category")
                    && fields[1].eq_ignore_ascii_case("class_id")
                {
                    continue;
                }
            }
            if fields.len() > 3 {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: format!("expected at most 3 fields, found {}", fields.len()),
                });
            }
            let cat_name = fields[0];
            if cat_name.is_empty() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: line_no,
                    message: "empty category name".into(),
                });
            }
            let idx = *category_index.entry(cat_name.to_string()).or_insert_with(|| {
                categories.push(Category {
                    name: cat_name.to_string(),
                    classes: Vec::new(),
                });
                categories.len() - 1
            });
            let class_id = fields.get(1).copied().unwrap_or("");
            if class_id.is_empty() {
                if fields.get(2).is_some_and(|d| !d.is_empty()) {
                    return Err(Error::Parse {
                        path: origin.to_string(),
                        line: line_no,
                        message: "display name given without a class id".into(),
                    });
                }
                continue;
            }
            if let Some((first, _)) = class_owner.get(class_id) {
                return Err(Error::DuplicateClass {
                    class_id: class_id.to_string(),
                    first: first.clone(),
                    second: cat_name.to_string(),
                    line: line_no,
                });
            }
            class_owner.insert(class_id.to_string(), (cat_name.to_string(), line_no));
            let display_name = match fields.get(2) {
                Some(d) if !d.is_empty() => d.to_string(),
                _ => class_id.to_string(),
            };
            categories[idx].classes.push(ClassEntry {
                class_id: class_id.to_string(),
                display_name,
            });
        }

        if categories.is_empty() {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: 0,
                message: "manifest has no records".into(),
            });
        }
        if let Some(empty) = categories.iter().find(|c| c.classes.is_empty()) {
            return Err(Error::EmptyCategory(empty.name.clone()));
        }
        Ok(CategoryManifest { categories })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::from("category,class_id,display_name\n");
        for cat in &self.categories {
            for class in &cat.classes {
                if class.display_name == class.class_id {
                    out.push_str(&format!("{},{}\n", cat.name, class.class_id));
                } else {
                    out.push_str(&format!(
                        "{},{},{}\n",
                        cat.name, class.class_id, class.display_name
                    ));
                }
            }
        }
        out
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn num_classes(&self) -> usize {
        self.categories.iter().map(|c| c.classes.len()).sum()
    }

    /// Classes in manifest order with their category index.
    pub fn classes(&self) -> impl Iterator<Item = (&ClassEntry, usize)> {
        self.categories
            .iter()
            .enumerate()
            .flat_map(|(g, cat)| cat.classes.iter().map(move |c| (c, g)))
    }

    pub fn category_names(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.name.clone()).collect()
    }

    pub fn category(&self, name: &str) -> Option<&Category> {
        self.categories.iter().find(|c| c.name == name)
    }

    /// Stable hash of the manifest content, used in experiment provenance.
    pub fn content_hash(&self) -> String {
        crate::experiment::hash_hex(self.to_text().as_bytes())
    }
}

/// The 100-class, 10-category ImageNet subset, one row per category.
pub const IMAGENET_CATEGORY_MANIFEST: &str = include_str!("../../../../manifests/imagenet_10x10.csv");

pub fn imagenet_category_manifest() -> CategoryManifest {
    CategoryManifest::parse(IMAGENET_CATEGORY_MANIFEST, "imagenet_10x10.csv")
        .expect("bundled manifest is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_manifest_has_ten_by_ten() {
        let m = imagenet_category_manifest();
        assert_eq!(m.num_categories(), 10);
        assert!(m.categories.iter().all(|c| c.classes.len() == 10));
        let cars = m.category("Cars").unwrap();
        assert!(cars.classes.iter().any(|c| c.class_id == "n02701002"));
        assert_eq!(m.categories[0].name, "Cars");
    }

    #[test]
    fn singleton_manifest() {
        let m = CategoryManifest::parse("# tiny\nOnly,abc\n", "mem").unwrap();
        assert_eq!(m.num_categories(), 1);
        assert_eq!(m.num_classes(), 1);
        assert_eq!(m.categories[0].classes[0], ClassEntry::new("abc"));
    }

    #[test]
    fn duplicate_class_reports_both_categories_and_line() {
        let err = CategoryManifest::parse("Cars,n02701002\n\nBugs,n02701002\n", "m.csv").unwrap_err();
        match err {
            Error::DuplicateClass {
                class_id,
                first,
                second,
                line,
            } => {
                assert_eq!(class_id, "n02701002");
                assert_eq!(first, "Cars");
                assert_eq!(second, "Bugs");
                assert_eq!(line, 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn declared_but_empty_category_is_rejected() {
        let err = CategoryManifest::parse("Cars,a\nBugs\n", "m").unwrap_err();
        assert!(matches!(err, Error::EmptyCategory(ref c) if c == "Bugs"), "{err}");
    }

    #[test]
    fn too_many_fields_is_a_located_parse_error() {
        let err = CategoryManifest::parse("Cars,a,b,c\n", "m").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
    }

    #[test]
    fn header_display_names_and_round_trip() {
        let text = "category,class_id,display_name\nCars,n1,ambulance\nCars,n2\n";
        let m = CategoryManifest::parse(text, "m").unwrap();
        assert_eq!(m.categories[0].classes[0].display_name, "ambulance");
        assert_eq!(m.categories[0].classes[1].display_name, "n2");
        let again = CategoryManifest::parse(&m.to_text(), "m").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn constructor_checks_invariants() {
        let dup = CategoryManifest::new(vec![
            Category {
                name: "a".into(),
                classes: vec![ClassEntry::new("x")],
            },
            Category {
                name: "b".into(),
                classes: vec![ClassEntry::new("x")],
            },
        ]);
        assert!(matches!(dup, Err(Error::DuplicateClass { .. })));
        let empty = CategoryManifest::new(vec![Category {
            name: "a".into(),
            classes: vec![],
        }]);
        assert!(matches!(empty, Err(Error::EmptyCategory(_))));
    }
}
