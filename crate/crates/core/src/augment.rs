//! Train-time augmentation and the deterministic evaluation views.

use std::path::Path;

use image::imageops::{self, FilterType};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::tensor::{Real, Tensor4};

/// RGB image, `f32` channels in `[0, 1]`, row-major HWC.
pub type Image = image::Rgb32FImage;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub x: u32,
    pub y: u32,
    pub width: u32,
    pub height: u32,
}

/// What the sampled crop area is a fraction of.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaReference {
    /// The largest square inscribed in the image, `min(w, h)^2`.
    #[default]
    MaxSquare,
    /// The whole image, `w * h`.
    FullImage,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub min_area_fraction: f64,
    pub max_area_fraction: f64,
    pub min_aspect: f64,
    pub max_aspect: f64,
    pub area_reference: AreaReference,
    pub output_size: u32,
    pub color_jitter_strength: f64,
    pub horizontal_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            min_area_fraction: 0.08,
            max_area_fraction: 1.0,
            min_aspect: 3.0 / 4.0,
            max_aspect: 4.0 / 3.0,
            area_reference: AreaReference::MaxSquare,
            output_size: 224,
            color_jitter_strength: 0.1,
            horizontal_flip: true,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.min_area_fraction
            && self.min_area_fraction <= self.max_area_fraction
            && self.max_area_fraction <= 1.0
            && 0.0 < self.min_aspect
            && self.min_aspect <= self.max_aspect
            && self.output_size >= 1
            && self.color_jitter_strength >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid augmentation config {self:?}")))
        }
    }
}

const CROP_ATTEMPTS: usize = 10;

/// Samples a crop rectangle: area uniform in the configured fraction range of
/// the reference area, aspect (width/height) log-uniform. Draws that do not
/// fit are retried; after ten failures the centred max square is returned.
pub fn sample_crop<R: Rng + ?Sized>(width: u32, height: u32, config: &AugmentConfig, rng: &mut R) -> CropRect {
    let side = width.min(height) as f64;
    let reference = match config.area_reference {
        AreaReference::MaxSquare => side * side,
        AreaReference::FullImage => width as f64 * height as f64,
    };
    let (log_lo, log_hi) = (config.min_aspect.ln(), config.max_aspect.ln());
    for _ in 0..CROP_ATTEMPTS {
        let area = reference * uniform(rng, config.min_area_fraction, config.max_area_fraction);
        let aspect = uniform(rng, log_lo, log_hi).exp();
        let cw = (area * aspect).sqrt().round() as u32;
        let ch = (area / aspect).sqrt().round() as u32;
        if cw >= 1 && ch >= 1 && cw <= width && ch <= height {
            let x = rng.gen_range(0..=width - cw);
            let y = rng.gen_range(0..=height - ch);
            return CropRect {
                x,
                y,
                width: cw,
                height: ch,
            };
        }
    }
    center_square(width, height)
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..=hi)
    } else {
        lo
    }
}

pub fn center_square(width: u32, height: u32) -> CropRect {
    let s = width.min(height);
    CropRect {
        x: (width - s) / 2,
        y: (height - s) / 2,
        width: s,
        height: s,
    }
}

pub fn crop(image: &Image, rect: CropRect) -> Image {
    imageops::crop_imm(image, rect.x, rect.y, rect.width, rect.height).to_image()
}

pub fn resize(image: &Image, width: u32, height: u32) -> Image {
    if image.dimensions() == (width, height) {
        return image.clone();
    }
    imageops::resize(image, width, height, FilterType::Triangle)
}

/// Principal components of RGB pixel values over a training set.
/// `eigenvectors` is row-major with one eigenvector per column; eigenvalues
/// are sorted in decreasing order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub eigenvalues: [f64; 3],
    pub eigenvectors: [[f64; 3]; 3],
}

impl ColorStats {
    pub fn from_covariance(cov: [[f64; 3]; 3]) -> Self {
        let m = nalgebra::Matrix3::from_fn(|i, j| cov[i][j]);
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let mut eigenvalues = [0.0; 3];
        let mut eigenvectors = [[0.0; 3]; 3];
        for (col, &k) in order.iter().enumerate() {
            eigenvalues[col] = eig.eigenvalues[k].max(0.0);
            for row in 0..3 {
                eigenvectors[row][col] = eig.eigenvectors[(row, k)];
            }
        }
        ColorStats {
            eigenvalues,
            eigenvectors,
        }
    }

    /// Covariance of every pixel in `images`.
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Self> {
        let mut n = 0u64;
        let mut sum = [0.0f64; 3];
        let mut outer = [[0.0f64; 3]; 3];
        for img in images {
            for p in img.pixels() {
                let v = [p.0[0] as f64, p.0[1] as f64, p.0[2] as f64];
                n += 1;
                for i in 0..3 {
                    sum[i] += v[i];
                    for j in 0..3 {
                        outer[i][j] += v[i] * v[j];
                    }
                }
            }
        }
        if n < 2 {
            return Err(Error::Empty("color statistics need at least two pixels"));
        }
        let nf = n as f64;
        let mut cov = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                cov[i][j] = (outer[i][j] - sum[i] * sum[j] / nf) / (nf - 1.0);
            }
        }
        Ok(Self::from_covariance(cov))
    }

    /// The RGB offset `sum_i p_i * alpha_i * lambda_i`.
    pub fn offset(&self, alphas: [f64; 3]) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, o) in out.iter_mut().enumerate() {
            *o = (0..3)
                .map(|i| self.eigenvectors[c][i] * alphas[i] * self.eigenvalues[i])
                .sum();
        }
        out
    }

    /// Three eigenvalues on the first line, then the eigenvector matrix row by
    /// row.
    pub fn to_text(&self) -> String {
        let row = |v: &[f64; 3]| format!("{:.17e} {:.17e} {:.17e}\n", v[0], v[1], v[2]);
        let mut s = row(&self.eigenvalues);
        for r in &self.eigenvectors {
            s.push_str(&row(r));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let nums: Vec<f64> = text
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>().map_err(|e| Error::Parse {
                    path: "color statistics".into(),
                    line: 0,
                    message: format!("`{t}`: {e}"),
                })
            })
            .collect::<Result<_>>()?;
        if nums.len() != 12 {
            return Err(Error::LengthMismatch {
                what: "color statistics values",
                expected: 12,
                actual: nums.len(),
            });
        }
        let mut s = ColorStats {
            eigenvalues: [nums[0], nums[1], nums[2]],
            eigenvectors: [[0.0; 3]; 3],
        };
        for r in 0..3 {
            for c in 0..3 {
                s.eigenvectors[r][c] = nums[3 + r * 3 + c];
            }
        }
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).at(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::parse(&std::fs::read_to_string(path).at(path)?)
    }
}

/// PCA lighting noise: every pixel is shifted by the same RGB offset built
/// from the colour eigenpairs and `alpha_i ~ N(0, strength)`; output is
/// clamped to `[0, 1]`.
pub fn color_augment<R: Rng + ?Sized>(
    image: &Image,
    strength: f64,
    stats: Option<&ColorStats>,
    rng: &mut R,
) -> Result<Image> {
    if strength == 0.0 {
        return Ok(image.clone());
    }
    let stats = stats.ok_or(Error::MissingColorStats)?;
    let normal = Normal::new(0.0, strength).map_err(|e| Error::Config(e.to_string()))?;
    let alphas = [normal.sample(rng), normal.sample(rng), normal.sample(rng)];
    Ok(apply_offset(image, stats.offset(alphas)))
}

pub fn apply_offset(image: &Image, offset: [f64; 3]) -> Image {
    let mut out = image.clone();
    if offset.iter().all(|&o| o == 0.0) {
        return out;
    }
    for p in out.pixels_mut() {
        for c in 0..3 {
            p.0[c] = (p.0[c] as f64 + offset[c]).clamp(0.0, 1.0) as f32;
        }
    }
    out
}

/// Full train-time pipeline: random crop, resize, optional mirror, lighting.
pub fn augment_train<R: Rng + ?Sized>(
    image: &Image,
    config: &AugmentConfig,
    stats: Option<&ColorStats>,
    rng: &mut R,
) -> Result<Image> {
    let (w, h) = image.dimensions();
    let rect = sample_crop(w, h, config, rng);
    let mut out = resize(&crop(image, rect), config.output_size, config.output_size);
    if config.horizontal_flip && rng.gen_bool(0.5) {
        imageops::flip_horizontal_in_place(&mut out);
    }
    color_augment(&out, config.color_jitter_strength, stats, rng)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewPositions {
    Center,
    #[default]
    CenterAndCorners,
}

/// Deterministic evaluation views. For every scale `s` the image is resized so
/// its shorter side is `round(s * output_size)`; crops are taken at the chosen
/// positions and optionally mirrored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ViewSpec {
    pub scales: Vec<f64>,
    pub positions: ViewPositions,
    pub mirror: bool,
}

impl Default for ViewSpec {
    /// 2 scales x (centre + 4 corners) x mirror = 20 views.
    fn default() -> Self {
        ViewSpec {
            scales: vec![8.0 / 7.0, 9.0 / 7.0],
            positions: ViewPositions::CenterAndCorners,
            mirror: true,
        }
    }
}

impl ViewSpec {
    pub fn center_only() -> Self {
        ViewSpec {
            scales: vec![8.0 / 7.0],
            positions: ViewPositions::Center,
            mirror: false,
        }
    }

    /// Centre crop of the unresized image.
    pub fn single() -> Self {
        ViewSpec {
            scales: vec![1.0],
            positions: ViewPositions::Center,
            mirror: false,
        }
    }

    pub fn count(&self) -> usize {
        let per_scale = match self.positions {
            ViewPositions::Center => 1,
            ViewPositions::CenterAndCorners => 5,
        };
        self.scales.len() * per_scale * if self.mirror { 2 } else { 1 }
    }
}

pub fn resize_shorter(image: &Image, shorter: u32) -> Image {
    let (w, h) = image.dimensions();
    let (nw, nh) = if w <= h {
        (shorter, ((h as f64 * shorter as f64 / w as f64).round() as u32).max(shorter))
    } else {
        (((w as f64 * shorter as f64 / h as f64).round() as u32).max(shorter), shorter)
    };
    resize(image, nw, nh)
}

pub fn multi_crop_views(image: &Image, spec: &ViewSpec, output_size: u32) -> Vec<Image> {
    let mut views = Vec::with_capacity(spec.count());
    for &scale in &spec.scales {
        let shorter = ((output_size as f64 * scale).round() as u32).max(output_size);
        let scaled = resize_shorter(image, shorter);
        let (w, h) = scaled.dimensions();
        let (mx, my) = (w - output_size, h - output_size);
        let mut offsets = vec![(mx / 2, my / 2)];
        if spec.positions == ViewPositions::CenterAndCorners {
            offsets.extend([(0, 0), (mx, 0), (0, my), (mx, my)]);
        }
        for (x, y) in offsets {
            let view = imageops::crop_imm(&scaled, x, y, output_size, output_size).to_image();
            if spec.mirror {
                views.push(imageops::flip_horizontal(&view));
            }
            views.push(view);
        }
    }
    views
}

/// Per-channel normalisation applied when images become network input.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for Normalization {
    fn default() -> Self {
        Normalization {
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

/// Stacks equally sized images into an NCHW batch.
pub fn to_batch<T: Real>(images: &[Image], norm: &Normalization) -> Result<Tensor4<T>> {
    let (w, h) = images.first().ok_or(Error::Empty("image batch"))?.dimensions();
    let (w, h) = (w as usize, h as usize);
    let mut data = Vec::with_capacity(images.len() * 3 * w * h);
    for img in images {
        if img.dimensions() != (w as u32, h as u32) {
            return Err(Error::Shape(format!(
                "batch image is {:?}, expected {w}x{h}",
                img.dimensions()
            )));
        }
        let raw = img.as_raw();
        for c in 0..3 {
            let (m, s) = (norm.mean[c], norm.std[c]);
            data.extend((0..w * h).map(|p| T::lit(((raw[p * 3 + c] - m) / s) as f64)));
        }
    }
    Tensor4::from_vec([images.len(), 3, h, w], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn forced(area: f64, aspect: f64) -> AugmentConfig {
        AugmentConfig {
            min_area_fraction: area,
            max_area_fraction: area,
            min_aspect: aspect,
            max_aspect: aspect,
            ..Default::default()
        }
    }

    fn gradient_image(w: u32, h: u32) -> Image {
        image::ImageBuffer::from_fn(w, h, |x, y| {
            image::Rgb([x as f32 / w as f32, y as f32 / h as f32, ((x + y) % 7) as f32 / 7.0])
        })
    }

    #[test]
    fn full_square_crop() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let rect = sample_crop(100, 100, &forced(1.0, 1.0), &mut rng);
        assert_eq!(
            rect,
            CropRect {
                x: 0,
                y: 0,
                width: 100,
                height: 100
            }
        );
    }

    #[test]
    fn quarter_area_on_wide_image() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = forced(0.25, 1.0);
        let mut xs = Vec::new();
        for _ in 0..2000 {
            let r = sample_crop(200, 100, &cfg, &mut rng);
            assert_eq!((r.width, r.height), (50, 50));
            assert!(r.x <= 150 && r.y <= 50);
            xs.push(r.x);
        }
        assert_eq!(*xs.iter().min().unwrap(), 0);
        assert_eq!(*xs.iter().max().unwrap(), 150);
    }

    #[test]
    fn full_image_reference_is_larger() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cfg = AugmentConfig {
            area_reference: AreaReference::FullImage,
            ..forced(0.5, 2.0)
        };
        let r = sample_crop(200, 100, &cfg, &mut rng);
        assert_eq!((r.width, r.height), (141, 71));
    }

    #[test]
    fn infeasible_draws_fall_back_to_center_square() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = sample_crop(120, 80, &forced(1.0, 0.5), &mut rng);
        assert_eq!(r, center_square(120, 80));
        assert_eq!(r, CropRect { x: 20, y: 0, width: 80, height: 80 });
    }

    #[test]
    fn zero_strength_color_is_identity_even_without_stats() {
        let img = gradient_image(9, 7);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(color_augment(&img, 0.0, None, &mut rng).unwrap(), img);
        assert!(matches!(
            color_augment(&img, 0.1, None, &mut rng),
            Err(Error::MissingColorStats)
        ));
    }

    #[test]
    fn gray_dataset_has_zero_eigenvalues() {
        let gray: Image = image::ImageBuffer::from_pixel(5, 5, image::Rgb([0.4, 0.4, 0.4]));
        let stats = ColorStats::from_images([&gray, &gray]).unwrap();
        assert!(stats.eigenvalues.iter().all(|&l| l.abs() < 1e-12));
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(color_augment(&gray, 0.5, Some(&stats), &mut rng).unwrap(), gray);
    }

    #[test]
    fn stats_file_round_trip() {
        let stats = ColorStats::from_images([&gradient_image(6, 5)]).unwrap();
        let back = ColorStats::parse(&stats.to_text()).unwrap();
        assert_eq!(back, stats);
        assert_eq!(stats.to_text().split_whitespace().count(), 12);
        assert!(ColorStats::parse("1 2 3").is_err());
    }

    #[test]
    fn default_views_are_twenty_and_deterministic() {
        let img = gradient_image(40, 30);
        let views = multi_crop_views(&img, &ViewSpec::default(), 28);
        assert_eq!(views.len(), 20);
        assert!(views.iter().all(|v| v.dimensions() == (28, 28)));
        assert_eq!(views, multi_crop_views(&img, &ViewSpec::default(), 28));
    }

    #[test]
    fn center_view_of_square_image_is_centered() {
        let img = gradient_image(36, 36);
        let spec = ViewSpec {
            scales: vec![1.0],
            positions: ViewPositions::Center,
            mirror: false,
        };
        let views = multi_crop_views(&img, &spec, 32);
        assert_eq!(views.len(), 1);
        // At scale 36/32 the image keeps its size and the view is a plain crop.
        let spec = ViewSpec {
            scales: vec![36.0 / 32.0],
            ..spec
        };
        let views = multi_crop_views(&img, &spec, 32);
        assert_eq!(views[0], crop(&img, CropRect { x: 2, y: 2, width: 32, height: 32 }));
        assert_eq!(ViewSpec::center_only().count(), 1);
    }

    #[test]
    fn batch_layout_is_nchw() {
        let img = gradient_image(3, 2);
        let t: Tensor4<f64> = to_batch(std::slice::from_ref(&img), &Normalization { mean: [0.0; 3], std: [1.0; 3] }).unwrap();
        assert_eq!(t.shape, [1, 3, 2, 3]);
        assert!((t.data[1] - img.get_pixel(1, 0).0[0] as f64).abs() < 1e-7);
        assert!((t.data[6 + 4] - img.get_pixel(1, 1).0[1] as f64).abs() < 1e-7);
    }
}
