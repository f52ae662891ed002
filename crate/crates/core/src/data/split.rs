//! Resolved train/test splits and the sampling operations that produce them.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::source::{ClassPool, ImageRef, PoolClass};
use crate::error::{Error, Result};
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub num_classes: usize,
    pub num_replicates: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl DatasetSpec {
    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_replicates == 0 {
            return Err(Error::Config(
                "num_classes and num_replicates must be positive".into(),
            ));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(Error::Config(
                "train_per_class and test_per_class must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Item {
    pub image: ImageRef,
    pub class: usize,
}

/// A dataset ready for training: class `i` is `class_ids[i]`, and when a
/// category structure is present, `category_of[i]` indexes
/// `category_names`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub class_ids: Vec<String>,
    pub category_of: Option<Vec<usize>>,
    pub category_names: Option<Vec<String>>,
    pub train: Vec<Item>,
    pub test: Vec<Item>,
}

impl DatasetSplit {
    pub fn num_classes(&self) -> usize {
        self.class_ids.len()
    }

    pub fn num_categories(&self) -> Option<usize> {
        self.category_names.as_ref().map(Vec::len)
    }

    pub fn class_index(&self, class_id: &str) -> Option<usize> {
        self.class_ids.iter().position(|c| c == class_id)
    }

    /// Checks every split invariant.
    pub fn validate(&self) -> Result<()> {
        let c = self.num_classes();
        for item in self.train.iter().chain(&self.test) {
            if item.class >= c {
                return Err(Error::OutOfRange {
                    what: "item class",
                    index: item.class,
                    size: c,
                });
            }
        }
        match (&self.category_of, &self.category_names) {
            (Some(map), Some(names)) => {
                if map.len() != c {
                    return Err(Error::LengthMismatch {
                        what: "category map",
                        expected: c,
                        actual: map.len(),
                    });
                }
                if let Some(&g) = map.iter().find(|&&g| g >= names.len()) {
                    return Err(Error::OutOfRange {
                        what: "category",
                        index: g,
                        size: names.len(),
                    });
                }
            }
            (None, None) => {}
            _ => return Err(Error::Config("category map and names must come together".into())),
        }
        let train: HashSet<&ImageRef> = self.train.iter().map(|i| &i.image).collect();
        if let Some(dup) = self.test.iter().find(|i| train.contains(&i.image)) {
            return Err(Error::Config(format!(
                "image {:?} is in both train and test",
                dup.image
            )));
        }
        Ok(())
    }

    /// Replaces the category structure, e.g. with a random partition.
    pub fn with_categories(mut self, category_of: Vec<usize>, names: Vec<String>) -> Result<Self> {
        self.category_of = Some(category_of);
        self.category_names = Some(names);
        self.validate()?;
        Ok(self)
    }
}

/// Builds one split from pool classes, drawing up to the requested number of
/// images per class. Classes with fewer images than requested contribute all
/// of them.
pub fn split_from_pool(
    pool: &ClassPool,
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    split_from_classes(&pool.classes.iter().collect::<Vec<_>>(), train_per_class, test_per_class, seed)
}

fn split_from_classes(
    classes: &[&PoolClass],
    train_per_class: usize,
    test_per_class: usize,
    seed: u64,
) -> Result<DatasetSplit> {
    let mut category_names: Vec<String> = Vec::new();
    let mut category_of = Vec::with_capacity(classes.len());
    let all_have_categories = classes.iter().all(|c| c.category.is_some());
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (i, class) in classes.iter().enumerate() {
        if let (true, Some(name)) = (all_have_categories, &class.category) {
            let g = match category_names.iter().position(|n| n == name) {
                Some(g) => g,
                None => {
                    category_names.push(name.clone());
                    category_names.len() - 1
                }
            };
            category_of.push(g);
        }
        let id = i as u64;
        for (side, refs, want, out) in [
            (0u64, &class.train, train_per_class, &mut train),
            (1, &class.test, test_per_class, &mut test),
        ] {
            for image in draw(refs, want, seed::derive_seed(seed, &[stream::IMAGES, id, side])) {
                out.push(Item {
                    image: image.clone(),
                    class: i,
                });
            }
        }
    }
    let split = DatasetSplit {
        class_ids: classes.iter().map(|c| c.entry.class_id.clone()).collect(),
        category_of: all_have_categories.then_some(category_of),
        category_names: all_have_categories.then_some(category_names),
        train,
        test,
    };
    split.validate()?;
    Ok(split)
}

/// Draws `want` items without replacement, keeping their source order.
fn draw(refs: &[ImageRef], want: usize, seed: u64) -> Vec<&ImageRef> {
    if want >= refs.len() {
        if want > refs.len() {
            log::warn!("requested {want} images, only {} available", refs.len());
        }
        return refs.iter().collect();
    }
    let mut rng = seed::rng(seed, &[]);
    let mut idx = rand::seq::index::sample(&mut rng, refs.len(), want).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|i| &refs[i]).collect()
}

/// Draws `spec.num_replicates` independent class subsets of size
/// `spec.num_classes`. Replicate `i` is seeded with
/// `derive_seed(spec.seed, [REPLICATE, i])`.
pub fn sample_class_subsets(pool: &ClassPool, spec: &DatasetSpec) -> Result<Vec<DatasetSplit>> {
    spec.validate()?;
    if spec.num_classes > pool.len() {
        return Err(Error::PoolTooSmall {
            available: pool.len(),
            requested: spec.num_classes,
        });
    }
    (0..spec.num_replicates)
        .map(|r| {
            let sub = seed::derive_seed(spec.seed, &[stream::REPLICATE, r as u64]);
            let mut rng = seed::rng(sub, &[]);
            let mut chosen =
                rand::seq::index::sample(&mut rng, pool.len(), spec.num_classes).into_vec();
            chosen.sort_unstable();
            let classes: Vec<&PoolClass> = chosen.iter().map(|&i| &pool.classes[i]).collect();
            split_from_classes(&classes, spec.train_per_class, spec.test_per_class, sub)
        })
        .collect()
}

/// Assigns each of `classes` to one of `num_groups` equal-sized groups at
/// random. `result[i]` is the group of `classes[i]`.
pub fn random_partition(classes: &[usize], num_groups: usize, seed: u64) -> Result<Vec<usize>> {
    if num_groups == 0 || !classes.len().is_multiple_of(num_groups) {
        return Err(Error::NotDivisible {
            classes: classes.len(),
            groups: num_groups,
        });
    }
    let per_group = classes.len() / num_groups;
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.shuffle(&mut seed::rng(seed, &[stream::PARTITION]));
    let mut groups = vec![0; classes.len()];
    for (rank, &pos) in order.iter().enumerate() {
        groups[pos] = rank / per_group;
    }
    Ok(groups)
}

/// The sub-dataset holding only `category`'s classes, re-indexed from 0 in
/// their original order.
pub fn split_category(split: &DatasetSplit, category: usize) -> Result<DatasetSplit> {
    let (map, names) = match (&split.category_of, &split.category_names) {
        (Some(m), Some(n)) => (m, n),
        _ => return Err(Error::MissingCategoryMap),
    };
    if category >= names.len() {
        return Err(Error::OutOfRange {
            what: "category",
            index: category,
            size: names.len(),
        });
    }
    let mut remap = vec![usize::MAX; split.num_classes()];
    let mut class_ids = Vec::new();
    for (i, &g) in map.iter().enumerate() {
        if g == category {
            remap[i] = class_ids.len();
            class_ids.push(split.class_ids[i].clone());
        }
    }
    let keep = |items: &[Item]| -> Vec<Item> {
        items
            .iter()
            .filter(|it| remap[it.class] != usize::MAX)
            .map(|it| Item {
                image: it.image.clone(),
                class: remap[it.class],
            })
            .collect()
    };
    Ok(DatasetSplit {
        category_of: Some(vec![0; class_ids.len()]),
        category_names: Some(vec![names[category].clone()]),
        class_ids,
        train: keep(&split.train),
        test: keep(&split.test),
    })
}
