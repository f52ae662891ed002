//! Image sources and the class pools they expose.
//!
//! Three layouts are understood:
//! - `folder`: `<root>/train/<class_id>/*` and `<root>/val/<class_id>/*`
//!   (ImageNet-style synset folders, any format the `image` crate decodes);
//! - `cifar100`: the CIFAR-100 binary distribution (`train.bin`, `test.bin`,
//!   `fine_label_names.txt`, `coarse_label_names.txt`);
//! - `synthetic`: the procedural corpus in [`super::synthetic`].

use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::manifest::{Category, CategoryManifest, ClassEntry};
use super::synthetic::SyntheticConfig;
use crate::augment::Image;
use crate::error::{Error, IoContext, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ImageRef {
    File { path: PathBuf },
    Cifar { test: bool, index: u32 },
    Synthetic { class: u32, instance: u32, test: bool },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceConfig {
    Folder { root: PathBuf },
    Cifar100 { dir: PathBuf },
    Synthetic(SyntheticConfig),
}

/// All images available for one class.
#[derive(Clone, Debug)]
pub struct PoolClass {
    pub entry: ClassEntry,
    pub category: Option<String>,
    pub train: Vec<ImageRef>,
    pub test: Vec<ImageRef>,
}

#[derive(Clone, Debug, Default)]
pub struct ClassPool {
    pub classes: Vec<PoolClass>,
}

impl ClassPool {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    /// Keeps only classes with at least `train` and `test` images, the way the
    /// scaling study restricts itself to fully populated classes.
    pub fn with_min_counts(mut self, train: usize, test: usize) -> Self {
        self.classes
            .retain(|c| c.train.len() >= train && c.test.len() >= test);
        self
    }

    /// Restricts the pool to the manifest's classes, in manifest order, and
    /// attaches category names.
    pub fn resolve(&self, manifest: &CategoryManifest) -> Result<ClassPool> {
        let mut out = Vec::with_capacity(manifest.num_classes());
        for (entry, g) in manifest.classes() {
            let found = self
                .classes
                .iter()
                .find(|c| c.entry.class_id == entry.class_id)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "class `{}` (category `{}`) not found in the image source",
                        entry.class_id, manifest.categories[g].name
                    ))
                })?;
            out.push(PoolClass {
                entry: entry.clone(),
                category: Some(manifest.categories[g].name.clone()),
                train: found.train.clone(),
                test: found.test.clone(),
            });
        }
        Ok(ClassPool { classes: out })
    }
}

pub struct DataSource {
    config: SourceConfig,
    cifar: OnceLock<std::result::Result<CifarData, String>>,
}

struct CifarData {
    train: Vec<u8>,
    test: Vec<u8>,
    fine_names: Vec<String>,
    coarse_names: Vec<String>,
}

const CIFAR_RECORD: usize = 2 + 3 * 1024;
const IMAGE_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "JPEG", "JPG", "PNG"];

impl DataSource {
    pub fn new(config: SourceConfig) -> Self {
        DataSource {
            config,
            cifar: OnceLock::new(),
        }
    }

    pub fn config(&self) -> &SourceConfig {
        &self.config
    }

    /// Every class the source can provide.
    pub fn pool(&self) -> Result<ClassPool> {
        match &self.config {
            SourceConfig::Folder { root } => folder_pool(root),
            SourceConfig::Cifar100 { .. } => {
                let data = self.cifar_data()?;
                let manifest = cifar_manifest_from(data)?;
                let mut classes: Vec<PoolClass> = data
                    .fine_names
                    .iter()
                    .map(|name| PoolClass {
                        entry: ClassEntry::new(name.clone()),
                        category: None,
                        train: Vec::new(),
                        test: Vec::new(),
                    })
                    .collect();
                for (test, bytes) in [(false, &data.train), (true, &data.test)] {
                    for (i, rec) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
                        let fine = rec[1] as usize;
                        let r = ImageRef::Cifar {
                            test,
                            index: i as u32,
                        };
                        let class = classes.get_mut(fine).ok_or(Error::OutOfRange {
                            what: "CIFAR fine label",
                            index: fine,
                            size: data.fine_names.len(),
                        })?;
                        if test {
                            class.test.push(r);
                        } else {
                            class.train.push(r);
                        }
                    }
                }
                for (entry, g) in manifest.classes() {
                    if let Some(c) = classes.iter_mut().find(|c| c.entry.class_id == entry.class_id) {
                        c.category = Some(manifest.categories[g].name.clone());
                    }
                }
                Ok(ClassPool { classes })
            }
            SourceConfig::Synthetic(cfg) => {
                let manifest = cfg.manifest();
                let classes = manifest
                    .classes()
                    .enumerate()
                    .map(|(i, (entry, g))| PoolClass {
                        entry: entry.clone(),
                        category: Some(manifest.categories[g].name.clone()),
                        train: (0..cfg.train_pool as u32)
                            .map(|instance| ImageRef::Synthetic {
                                class: i as u32,
                                instance,
                                test: false,
                            })
                            .collect(),
                        test: (0..cfg.test_pool as u32)
                            .map(|instance| ImageRef::Synthetic {
                                class: i as u32,
                                instance,
                                test: true,
                            })
                            .collect(),
                    })
                    .collect();
                Ok(ClassPool { classes })
            }
        }
    }

    /// The source's natural category structure, where it has one.
    pub fn natural_manifest(&self) -> Result<Option<CategoryManifest>> {
        match &self.config {
            SourceConfig::Folder { .. } => Ok(None),
            SourceConfig::Cifar100 { .. } => cifar_manifest_from(self.cifar_data()?).map(Some),
            SourceConfig::Synthetic(cfg) => Ok(Some(cfg.manifest())),
        }
    }

    pub fn load(&self, image: &ImageRef) -> Result<Image> {
        match (image, &self.config) {
            (ImageRef::File { path }, _) => {
                let img = image::open(path).map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
                Ok(img.to_rgb32f())
            }
            (ImageRef::Cifar { test, index }, SourceConfig::Cifar100 { .. }) => {
                let data = self.cifar_data()?;
                let bytes = if *test { &data.test } else { &data.train };
                let start = *index as usize * CIFAR_RECORD;
                let rec = bytes
                    .get(start..start + CIFAR_RECORD)
                    .ok_or(Error::OutOfRange {
                        what: "CIFAR record",
                        index: *index as usize,
                        size: bytes.len() / CIFAR_RECORD,
                    })?;
                let px = &rec[2..];
                Ok(image::ImageBuffer::from_fn(32, 32, |x, y| {
                    let o = (y * 32 + x) as usize;
                    image::Rgb([
                        px[o] as f32 / 255.0,
                        px[1024 + o] as f32 / 255.0,
                        px[2048 + o] as f32 / 255.0,
                    ])
                }))
            }
            (
                ImageRef::Synthetic {
                    class,
                    instance,
                    test,
                },
                SourceConfig::Synthetic(cfg),
            ) => Ok(cfg.render(*class as usize, *instance as u64, *test)),
            (r, _) => Err(Error::Config(format!(
                "image reference {r:?} does not belong to this source"
            ))),
        }
    }

    fn cifar_data(&self) -> Result<&CifarData> {
        let SourceConfig::Cifar100 { dir } = &self.config else {
            return Err(Error::Config("not a CIFAR-100 source".into()));
        };
        self.cifar
            .get_or_init(|| read_cifar(dir).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Config(e.clone()))
    }
}

fn read_cifar(dir: &Path) -> Result<CifarData> {
    let read = |name: &str| std::fs::read(dir.join(name)).at(dir.join(name));
    let names = |name: &str| -> Result<Vec<String>> {
        let p = dir.join(name);
        Ok(std::fs::read_to_string(&p)
            .at(&p)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    };
    let data = CifarData {
        train: read("train.bin")?,
        test: read("test.bin")?,
        fine_names: names("fine_label_names.txt")?,
        coarse_names: names("coarse_label_names.txt")?,
    };
    for (name, bytes) in [("train.bin", &data.train), ("test.bin", &data.test)] {
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(Error::Parse {
                path: dir.join(name).display().to_string(),
                line: 0,
                message: format!("size {} is not a multiple of {CIFAR_RECORD}", bytes.len()),
            });
        }
    }
    Ok(data)
}

/// Coarse labels become categories; each fine class is assigned to the
/// coarse label it carries in the training file.
fn cifar_manifest_from(data: &CifarData) -> Result<CategoryManifest> {
    let mut coarse_of: Vec<Option<usize>> = vec![None; data.fine_names.len()];
    for rec in data.train.chunks_exact(CIFAR_RECORD) {
        let (coarse, fine) = (rec[0] as usize, rec[1] as usize);
        if fine < coarse_of.len() && coarse_of[fine].is_none() {
            coarse_of[fine] = Some(coarse);
        }
    }
    let mut categories: Vec<Category> = data
        .coarse_names
        .iter()
        .map(|n| Category {
            name: n.clone(),
            classes: Vec::new(),
        })
        .collect();
    for (fine, coarse) in coarse_of.iter().enumerate() {
        if let Some(&g) = coarse.as_ref() {
            if let Some(cat) = categories.get_mut(g) {
                cat.classes.push(ClassEntry::new(data.fine_names[fine].clone()));
            }
        }
    }
    categories.retain(|c| !c.classes.is_empty());
    CategoryManifest::new(categories)
}

fn folder_pool(root: &Path) -> Result<ClassPool> {
    let train_root = root.join("train");
    let mut classes = Vec::new();
    for class_dir in sorted_dirs(&train_root)? {
        let class_id = class_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let train = image_files(&class_dir)?;
        let val_dir = ["val", "test"]
            .iter()
            .map(|d| root.join(d).join(&class_id))
            .find(|p| p.is_dir());
        let test = match val_dir {
            Some(d) => image_files(&d)?,
            None => Vec::new(),
        };
        classes.push(PoolClass {
            entry: ClassEntry::new(class_id),
            category: None,
            train,
            test,
        });
    }
    Ok(ClassPool { classes })
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn image_files(dir: &Path) -> Result<Vec<ImageRef>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .at(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e))
        })
        .collect();
    out.sort();
    Ok(out.into_iter().map(|path| ImageRef::File { path }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folder_pool_reads_train_and_val() {
        let dir = tempfile::tempdir().unwrap();
        for (side, class, n) in [("train", "n01", 3), ("train", "n02", 2), ("val", "n01", 1)] {
            let d = dir.path().join(side).join(class);
            std::fs::create_dir_all(&d).unwrap();
            for i in 0..n {
                let img: image::RgbImage = image::ImageBuffer::from_pixel(4, 4, image::Rgb([i * 40, 0, 0]));
                img.save(d.join(format!("{i}.png"))).unwrap();
            }
        }
        std::fs::write(dir.path().join("train/n01/readme.txt"), "x").unwrap();
        let src = DataSource::new(SourceConfig::Folder {
            root: dir.path().to_path_buf(),
        });
        let pool = src.pool().unwrap();
        assert_eq!(pool.len(), 2);
        assert_eq!(pool.classes[0].entry.class_id, "n01");
        assert_eq!(pool.classes[0].train.len(), 3);
        assert_eq!(pool.classes[0].test.len(), 1);
        assert_eq!(pool.classes[1].test.len(), 0);
        let img = src.load(&pool.classes[0].train[1]).unwrap();
        assert_eq!(img.dimensions(), (4, 4));
        assert!((img.get_pixel(0, 0).0[0] - 40.0 / 255.0).abs() < 1e-6);
        assert_eq!(pool.with_min_counts(1, 1).len(), 1);
    }

    #[test]
    fn cifar_binary_layout() {
        let dir = tempfile::tempdir().unwrap();
        let mut train = Vec::new();
        for (coarse, fine, fill) in [(1u8, 0u8, 10u8), (0, 1, 20), (1, 0, 30)] {
            train.push(coarse);
            train.push(fine);
            train.extend(std::iter::repeat_n(fill, 3072));
        }
        let mut test = vec![0u8, 1];
        test.extend(std::iter::repeat_n(255u8, 3072));
        std::fs::write(dir.path().join("train.bin"), &train).unwrap();
        std::fs::write(dir.path().join("test.bin"), &test).unwrap();
        std::fs::write(dir.path().join("fine_label_names.txt"), "apple\nbee\n").unwrap();
        std::fs::write(dir.path().join("coarse_label_names.txt"), "insects\nfruit\n").unwrap();
        let src = DataSource::new(SourceConfig::Cifar100 {
            dir: dir.path().to_path_buf(),
        });
        let m = src.natural_manifest().unwrap().unwrap();
        assert_eq!(m.category("fruit").unwrap().classes[0].class_id, "apple");
        assert_eq!(m.category("insects").unwrap().classes[0].class_id, "bee");
        let pool = src.pool().unwrap();
        assert_eq!(pool.classes[0].train.len(), 2);
        assert_eq!(pool.classes[1].test.len(), 1);
        let img = src.load(&pool.classes[0].train[1]).unwrap();
        assert!((img.get_pixel(5, 5).0[2] - 30.0 / 255.0).abs() < 1e-6);
    }

    #[test]
    fn resolve_reports_missing_class() {
        let src = DataSource::new(SourceConfig::Synthetic(SyntheticConfig::default()));
        let pool = src.pool().unwrap();
        let m = CategoryManifest::parse("Cars,n02701002\n", "m").unwrap();
        assert!(pool.resolve(&m).is_err());
    }
}
