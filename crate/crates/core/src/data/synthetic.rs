//! Procedural two-level image corpus.
//!
//! Each category owns a foreground hue and a silhouette; each class inside a
//! category owns a stripe orientation drawn on that silhouette. Categories are
//! therefore far apart in colour/shape space while sibling classes differ only
//! in a texture direction, blurred by per-image orientation jitter and pixel
//! noise. Position, size, contrast and phase vary per image.

use std::f32::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::manifest::{Category, CategoryManifest, ClassEntry};
use crate::augment::Image;
use crate::seed::{self, stream};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub categories: usize,
    pub classes_per_category: usize,
    pub image_size: u32,
    /// Instances available per class on each side; splits draw from these.
    pub train_pool: usize,
    pub test_pool: usize,
    /// Standard deviation of the per-image stripe orientation, in degrees.
    pub orientation_jitter_deg: f32,
    pub pixel_noise: f32,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            categories: 10,
            classes_per_category: 10,
            image_size: 32,
            train_pool: 100,
            test_pool: 50,
            orientation_jitter_deg: 4.0,
            pixel_noise: 0.08,
            seed: 0x5EED,
        }
    }
}

const SHAPES: usize = 5;

impl SyntheticConfig {
    pub fn num_classes(&self) -> usize {
        self.categories * self.classes_per_category
    }

    pub fn class_id(&self, class: usize) -> String {
        format!(
            "syn-g{:02}-c{:02}",
            class / self.classes_per_category,
            class % self.classes_per_category
        )
    }

    pub fn manifest(&self) -> CategoryManifest {
        let categories = (0..self.categories)
            .map(|g| Category {
                name: format!("group{g:02}"),
                classes: (0..self.classes_per_category)
                    .map(|k| ClassEntry::new(self.class_id(g * self.classes_per_category + k)))
                    .collect(),
            })
            .collect();
        CategoryManifest::new(categories).expect("synthetic manifest is valid")
    }

    /// Renders instance `instance` of `class`; `test` selects the disjoint
    /// test-side stream.
    pub fn render(&self, class: usize, instance: u64, test: bool) -> Image {
        let g = class / self.classes_per_category;
        let k = class % self.classes_per_category;
        let mut rng = seed::rng(
            self.seed,
            &[stream::SYNTHETIC, class as u64, test as u64, instance],
        );
        let s = self.image_size as f32;

        let hue = g as f32 / self.categories as f32;
        let fg = hsv_to_rgb(hue, 0.85, 0.95);
        let shape = g % SHAPES;
        let bg_level: f32 = rng.gen_range(0.25..0.55);
        let bg_tint = hsv_to_rgb((hue + 0.5) % 1.0, 0.15, 1.0);

        let cx = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
        let cy = s / 2.0 + rng.gen_range(-0.12..0.12) * s;
        let radius = rng.gen_range(0.28..0.40) * s;

        let base = k as f32 * PI / self.classes_per_category as f32;
        let jitter = Normal::new(0.0, self.orientation_jitter_deg.to_radians().max(0.0))
            .map(|n| n.sample(&mut rng))
            .unwrap_or(0.0);
        let theta = base + jitter;
        let (st, ct) = theta.sin_cos();
        let period = 4.5;
        let phase: f32 = rng.gen_range(0.0..2.0 * PI);
        let contrast: f32 = rng.gen_range(0.35..0.55);
        let noise = Normal::new(0.0, self.pixel_noise.max(1e-9)).unwrap();

        let n = self.image_size;
        image::ImageBuffer::from_fn(n, n, |x, y| {
            let px = x as f32 + 0.5 - cx;
            let py = y as f32 + 0.5 - cy;
            let inside = silhouette(shape, px, py, radius);
            let mut rgb = [0.0f32; 3];
            if inside {
                let stripe = 0.5 + 0.5 * ((2.0 * PI / period) * (px * ct + py * st) + phase).sin();
                let gain = 1.0 - contrast + contrast * stripe;
                for c in 0..3 {
                    rgb[c] = fg[c] * gain;
                }
            } else {
                for c in 0..3 {
                    rgb[c] = bg_level * bg_tint[c];
                }
            }
            for v in &mut rgb {
                *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }
            image::Rgb(rgb)
        })
    }
}

fn silhouette(shape: usize, x: f32, y: f32, r: f32) -> bool {
    let d = (x * x + y * y).sqrt();
    match shape {
        0 => d < r,
        1 => x.abs().max(y.abs()) < r * 0.85,
        2 => d < r && d > r * 0.5,
        3 => x.abs() + y.abs() < r * 1.2,
        _ => x.abs().max(y.abs()) < r && (x.abs() < r * 0.42 || y.abs() < r * 0.42),
    }
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = (h.rem_euclid(1.0)) * 6.0;
    let i = h6.floor() as i32 % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}
