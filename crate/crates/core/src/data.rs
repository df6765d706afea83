//! In-memory datasets: IDX files, separable Gaussian blobs, and synthetic
//! stroke glyphs at MNIST scale.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::augment::ImageGeom;
use crate::error::{Error, Result};
use crate::rng::{Purpose, RngKey};
use crate::tensor::{Real, Tensor};

pub const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
pub const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    x: Tensor<f64>,
    labels: Vec<usize>,
    classes: usize,
    geom: ImageGeom,
}

impl Dataset {
    pub fn new(x: Tensor<f64>, labels: Vec<usize>, classes: usize, geom: ImageGeom) -> Result<Self> {
        if x.shape().len() != 2 || x.rows() != labels.len() {
            return Err(Error::Shape(format!(
                "dataset of shape {:?} with {} labels",
                x.shape(),
                labels.len()
            )));
        }
        if x.cols() != geom.len() {
            return Err(Error::Shape(format!(
                "row width {} does not match image {}x{}x{}",
                x.cols(),
                geom.height,
                geom.width,
                geom.channels
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::InvalidArgument(format!("label {y} outside [0, {classes})")));
        }
        if let Some(i) = x.data().iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!(
                "feature {} of sample {} outside [0, 1]",
                i % x.cols(),
                i / x.cols()
            )));
        }
        Ok(Self { x, labels, classes, geom })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn geom(&self) -> ImageGeom {
        self.geom
    }

    pub fn features(&self) -> &Tensor<f64> {
        &self.x
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Rows `ids` cast to `T`, with their labels.
    pub fn batch<T: Real>(&self, ids: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let x = self.x.select_rows(ids).cast();
        (x, ids.iter().map(|&i| self.labels[i]).collect())
    }

    /// Samples `[start, end)` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        let ids: Vec<usize> = (start..end.min(self.len())).collect();
        Dataset {
            x: self.x.select_rows(&ids),
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
            geom: self.geom,
        }
    }

    /// Splits off the last `holdout` samples.
    pub fn split(&self, holdout: usize) -> (Dataset, Dataset) {
        let cut = self.len().saturating_sub(holdout);
        (self.slice(0, cut), self.slice(cut, self.len()))
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }
}

/// Where a dataset comes from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "source")]
pub enum DatasetDescriptor {
    IdxFiles { images: PathBuf, labels: PathBuf },
    SyntheticBlobs(BlobsConfig),
    SyntheticGlyphs(GlyphsConfig),
}

impl DatasetDescriptor {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DatasetDescriptor::IdxFiles { images, labels } => load_idx(images, labels),
            DatasetDescriptor::SyntheticBlobs(c) => synthetic_blobs(c),
            DatasetDescriptor::SyntheticGlyphs(c) => synthetic_glyphs(c),
        }
    }
}

fn read_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            offset: offset as u64,
            message: format!("truncated header, file has {} bytes", bytes.len()),
        })
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Parses an IDX image file into `(count, rows, cols, pixels scaled to [0,1])`.
pub fn parse_idx_images(bytes: &[u8], path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let need = n * rows * cols;
    let body = &bytes[16..];
    if body.len() < need {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("truncated pixel data: expected {need} bytes after header, found {}", body.len()),
        });
    }
    let pixels = body[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Ok((n, rows, cols, pixels))
}

pub fn parse_idx_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: 0,
            message: format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        });
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let body = &bytes[8..];
    if body.len() < n {
        return Err(Error::Format {
            path: path.to_path_buf(),
            offset: bytes.len() as u64,
            message: format!("truncated labels: expected {n} bytes after header, found {}", body.len()),
        });
    }
    Ok(body[..n].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label pair. The class count is the largest label + 1.
pub fn load_idx(images: &Path, labels: &Path) -> Result<Dataset> {
    let (n, rows, cols, pixels) = parse_idx_images(&read_file(images)?, images)?;
    let ys = parse_idx_labels(&read_file(labels)?, labels)?;
    if ys.len() != n {
        return Err(Error::InvalidArgument(format!(
            "{} holds {n} images but {} holds {} labels",
            images.display(),
            labels.display(),
            ys.len()
        )));
    }
    let classes = ys.iter().max().map_or(0, |m| m + 1);
    Dataset::new(
        Tensor::matrix(n, rows * cols, pixels)?,
        ys,
        classes,
        ImageGeom::new(rows, cols, 1),
    )
}

/// Serializes images and labels in IDX layout (used by tests and tooling).
pub fn encode_idx(rows: usize, cols: usize, pixels: &[u8], labels: &[u8]) -> (Vec<u8>, Vec<u8>) {
    let n = labels.len();
    let mut img = Vec::with_capacity(16 + pixels.len());
    for v in [IDX_IMAGES_MAGIC, n as u32, rows as u32, cols as u32] {
        img.extend_from_slice(&v.to_be_bytes());
    }
    img.extend_from_slice(pixels);
    let mut lab = Vec::with_capacity(8 + n);
    for v in [IDX_LABELS_MAGIC, n as u32] {
        lab.extend_from_slice(&v.to_be_bytes());
    }
    lab.extend_from_slice(labels);
    (img, lab)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlobsConfig {
    pub n: usize,
    pub dim: usize,
    pub classes: usize,
    /// ℓ∞ gap between the supports of any two classes.
    pub margin: f64,
    pub seed: u64,
}

impl BlobsConfig {
    pub fn new(n: usize, dim: usize, classes: usize, margin: f64, seed: u64) -> Self {
        Self { n, dim, classes, margin, seed }
    }

    fn code_axes(&self) -> usize {
        (usize::BITS - (self.classes.max(1) - 1).leading_zeros()) as usize
    }

    /// Support half-width `r` and center offset `h` from 0.5. Supports span
    /// `[0.5 ± h − r, 0.5 ± h + r]`, which fills `[0, 1]` and leaves a gap of
    /// `margin` between opposite codes.
    pub fn geometry(&self) -> (f64, f64) {
        let r = 0.25 - self.margin / 4.0;
        (r, r + self.margin / 2.0)
    }

    /// Center of class `c`: binary code of `c` on the first ⌈log₂ K⌉ axes.
    pub fn center(&self, class: usize) -> Vec<f64> {
        let (_, h) = self.geometry();
        (0..self.dim)
            .map(|a| {
                if a < self.code_axes() {
                    if (class >> a) & 1 == 1 { 0.5 + h } else { 0.5 - h }
                } else {
                    0.5
                }
            })
            .collect()
    }
}

/// Gaussian blobs (σ = r/2, truncated to the `r`-box) at binary-coded class
/// centers. Labels cycle through the classes so counts are balanced.
pub fn synthetic_blobs(c: &BlobsConfig) -> Result<Dataset> {
    if c.classes < 2 || c.dim == 0 || c.n == 0 {
        return Err(Error::InvalidArgument(format!(
            "blobs need n ≥ 1, dim ≥ 1 and at least 2 classes, got n={} dim={} classes={}",
            c.n, c.dim, c.classes
        )));
    }
    if c.code_axes() > c.dim {
        return Err(Error::InvalidArgument(format!(
            "{} classes need {} axes but dim is {}",
            c.classes,
            c.code_axes(),
            c.dim
        )));
    }
    if !(0.0..1.0).contains(&c.margin) {
        return Err(Error::InvalidArgument(format!("margin must lie in [0, 1), got {}", c.margin)));
    }
    let (r, _) = c.geometry();
    let normal = Normal::new(0.0, r / 2.0).expect("positive sigma");
    let mut rng = RngKey::new(c.seed, Purpose::Dataset).stream(&[0]);
    let centers: Vec<Vec<f64>> = (0..c.classes).map(|k| c.center(k)).collect();
    let mut data = Vec::with_capacity(c.n * c.dim);
    let mut labels = Vec::with_capacity(c.n);
    for i in 0..c.n {
        let y = i % c.classes;
        labels.push(y);
        for &m in &centers[y] {
            let z: f64 = normal.sample(&mut rng);
            data.push((m + z.clamp(-r, r)).clamp(0.0, 1.0));
        }
    }
    Dataset::new(Tensor::matrix(c.n, c.dim, data)?, labels, c.classes, ImageGeom::flat(c.dim))
}

/// Procedural 28×28 ten-class images: each class is a fixed union of straight
/// strokes, jittered by a shift of up to 2 pixels, a random contrast scale and
/// additive Gaussian noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphsConfig {
    pub n: usize,
    pub seed: u64,
    /// Peak stroke intensity.
    pub amplitude: f64,
    /// Standard deviation of the pixel noise.
    pub noise: f64,
    /// Binarize strokes instead of a soft Gaussian profile.
    pub crisp: bool,
}

impl GlyphsConfig {
    pub const SIDE: usize = 28;
    pub const CLASSES: usize = 10;
    const STROKES: usize = 4;
    const PROTOTYPE_SEED: u64 = 1234;

    pub fn new(n: usize, seed: u64) -> Self {
        Self {
            n,
            seed,
            amplitude: 0.5,
            noise: 0.05,
            crisp: false,
        }
    }
}

fn glyph_prototypes(crisp: bool) -> Vec<Vec<f64>> {
    let side = GlyphsConfig::SIDE;
    let mut rng = RngKey::new(GlyphsConfig::PROTOTYPE_SEED, Purpose::Dataset).stream(&[1]);
    (0..GlyphsConfig::CLASSES)
        .map(|_| {
            let mut img = vec![0.0f64; side * side];
            for _ in 0..GlyphsConfig::STROKES {
                let mut p = [0.0f64; 4];
                for v in &mut p {
                    *v = rng.random_range(6.0..22.0);
                }
                let [x0, y0, x1, y1] = p;
                for s in 0..40 {
                    let t = s as f64 / 39.0;
                    let (px, py) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
                    for yy in 0..side {
                        for xx in 0..side {
                            let d2 = (xx as f64 - px).powi(2) + (yy as f64 - py).powi(2);
                            let v = (-d2 / 2.0).exp();
                            let cell = &mut img[yy * side + xx];
                            *cell = cell.max(v);
                        }
                    }
                }
            }
            if crisp {
                for v in &mut img {
                    *v = if *v > 0.5 { 1.0 } else { 0.0 };
                }
            }
            img
        })
        .collect()
}

pub fn synthetic_glyphs(c: &GlyphsConfig) -> Result<Dataset> {
    if c.n == 0 || !(c.amplitude > 0.0 && c.amplitude <= 1.0) || !(c.noise >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "glyphs need n ≥ 1, amplitude in (0, 1] and noise ≥ 0, got n={} amplitude={} noise={}",
            c.n, c.amplitude, c.noise
        )));
    }
    let side = GlyphsConfig::SIDE;
    let protos = glyph_prototypes(c.crisp);
    let mut rng = RngKey::new(c.seed, Purpose::Dataset).stream(&[2]);
    let mut data = Vec::with_capacity(c.n * side * side);
    let mut labels = Vec::with_capacity(c.n);
    for _ in 0..c.n {
        let y = rng.random_range(0..GlyphsConfig::CLASSES);
        let dx = rng.random_range(-2i64..=2);
        let dy = rng.random_range(-2i64..=2);
        let scale = c.amplitude * rng.random_range(0.6..1.0);
        for r in 0..side {
            for col in 0..side {
                let sr = (r as i64 - dy).rem_euclid(side as i64) as usize;
                let sc = (col as i64 - dx).rem_euclid(side as i64) as usize;
                let z: f64 = StandardNormal.sample(&mut rng);
                data.push((protos[y][sr * side + sc] * scale + c.noise * z).clamp(0.0, 1.0));
            }
        }
        labels.push(y);
    }
    Dataset::new(
        Tensor::matrix(c.n, side * side, data)?,
        labels,
        GlyphsConfig::CLASSES,
        ImageGeom::new(side, side, 1),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn idx_round_trip() {
        let (img, lab) = encode_idx(2, 2, &[0, 255, 51, 102, 1, 2, 3, 4], &[3, 7]);
        let p = Path::new("mem");
        let (n, r, c, px) = parse_idx_images(&img, p).unwrap();
        assert_eq!((n, r, c), (2, 2, 2));
        assert_eq!(px[1], 1.0);
        assert_eq!(px[2], 0.2);
        assert_eq!(parse_idx_labels(&lab, p).unwrap(), vec![3, 7]);
    }

    #[test]
    fn idx_bad_magic_and_truncation() {
        let (mut img, lab) = encode_idx(2, 2, &[0; 8], &[0, 1]);
        let p = Path::new("mem");
        assert!(matches!(parse_idx_images(&img[..6], p), Err(Error::Format { offset: 4, .. })));
        img.truncate(20);
        assert!(matches!(parse_idx_images(&img, p), Err(Error::Format { offset: 20, .. })));
        assert!(matches!(parse_idx_images(&lab, p), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn blobs_geometry() {
        let c = BlobsConfig::new(1000, 2, 2, 0.3, 7);
        let (r, h) = c.geometry();
        assert!((0.5 - h - r).abs() < 1e-12);
        assert!(((0.5 + h - r) - (0.5 - h + r) - 0.3).abs() < 1e-12);
        let d = synthetic_blobs(&c).unwrap();
        assert_eq!(d, synthetic_blobs(&c).unwrap());
        assert_eq!(d.class_counts(), vec![500, 500]);
        // every class-1 point is ≥ margin away from every class-0 point on axis 0
        let (mut max0, mut min1) = (0.0f64, 1.0f64);
        for (i, &y) in d.labels().iter().enumerate() {
            let v = d.features().row(i)[0];
            if y == 0 { max0 = max0.max(v) } else { min1 = min1.min(v) }
        }
        assert!(min1 - max0 >= 0.3 - 1e-12);
    }

    #[test]
    fn blobs_reject_bad_configs() {
        assert!(synthetic_blobs(&BlobsConfig::new(10, 1, 4, 0.3, 0)).is_err());
        assert!(synthetic_blobs(&BlobsConfig::new(10, 2, 2, 1.0, 0)).is_err());
    }

    #[test]
    fn glyphs_are_deterministic_and_in_range() {
        let c = GlyphsConfig::new(20, 3);
        let a = synthetic_glyphs(&c).unwrap();
        assert_eq!(a, synthetic_glyphs(&c).unwrap());
        assert_eq!(a.dim(), 784);
        assert!(a.features().data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
