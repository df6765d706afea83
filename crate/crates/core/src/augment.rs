//! Cutout, Mixup and CutMix on flattened images.
//!
//! Images are stored as rows of a `B × (H·W·C)` tensor in height-width-channel
//! order. Augmentation runs before the attack so adversarial examples are
//! crafted on the augmented inputs.

use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Layout of one flattened image row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageGeom {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageGeom {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    /// A feature vector treated as a one-pixel-high strip.
    pub fn flat(dim: usize) -> Self {
        Self::new(1, dim, 1)
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Default cutout side: a quarter of the shorter image side.
    pub fn default_cutout(&self) -> usize {
        self.height.min(self.width) / 4
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    #[default]
    None,
    Cutout,
    Mixup,
    Cutmix,
}

impl AugmentKind {
    pub fn name(self) -> &'static str {
        match self {
            AugmentKind::None => "none",
            AugmentKind::Cutout => "cutout",
            AugmentKind::Mixup => "mixup",
            AugmentKind::Cutmix => "cutmix",
        }
    }
}

impl std::str::FromStr for AugmentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [AugmentKind::None, AugmentKind::Cutout, AugmentKind::Mixup, AugmentKind::Cutmix]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown augmentation '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentSpec {
    pub kind: AugmentKind,
    /// Cutout square side in pixels; `None` picks a quarter of the image side.
    pub cutout_size: Option<usize>,
    pub mixup_alpha: f64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        Self {
            kind: AugmentKind::None,
            cutout_size: None,
            mixup_alpha: 1.0,
        }
    }
}

impl AugmentSpec {
    pub fn cutout() -> Self {
        Self {
            kind: AugmentKind::Cutout,
            ..Self::default()
        }
    }

    pub fn resolved_cutout(&self, geom: ImageGeom) -> usize {
        self.cutout_size.unwrap_or_else(|| geom.default_cutout())
    }

    pub fn validate(&self, geom: ImageGeom) -> Result<()> {
        let size = self.resolved_cutout(geom);
        if size > geom.height.min(geom.width) {
            return Err(Error::InvalidArgument(format!(
                "cutout size {size} exceeds image {}x{}",
                geom.height, geom.width
            )));
        }
        if !(self.mixup_alpha > 0.0 && self.mixup_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "mixup alpha must be finite and > 0, got {}",
                self.mixup_alpha
            )));
        }
        Ok(())
    }
}

/// Half-open pixel rectangle `[r0, r1) × [c0, c1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PixelBox {
    pub r0: usize,
    pub r1: usize,
    pub c0: usize,
    pub c1: usize,
}

impl PixelBox {
    /// Square of side `size` centered at `(row, col)`, clipped to the image.
    /// Even sides extend one pixel further up/left of the center.
    pub fn centered(geom: ImageGeom, size: usize, row: usize, col: usize) -> Self {
        Self::centered_rect(geom, size, size, row, col)
    }

    pub fn centered_rect(geom: ImageGeom, h: usize, w: usize, row: usize, col: usize) -> Self {
        let span = |center: usize, side: usize, limit: usize| {
            let start = center as isize - (side / 2) as isize;
            let end = start + side as isize;
            let lo = start.clamp(0, limit as isize) as usize;
            let hi = end.clamp(0, limit as isize) as usize;
            (lo, hi.max(lo))
        };
        let (r0, r1) = span(row, h, geom.height);
        let (c0, c1) = span(col, w, geom.width);
        Self { r0, r1, c0, c1 }
    }

    pub fn area(&self) -> usize {
        (self.r1 - self.r0) * (self.c1 - self.c0)
    }

    fn for_each(&self, geom: ImageGeom, mut f: impl FnMut(usize)) {
        for r in self.r0..self.r1 {
            for c in self.c0..self.c1 {
                let base = (r * geom.width + c) * geom.channels;
                for k in 0..geom.channels {
                    f(base + k);
                }
            }
        }
    }
}

fn check_row<T>(image: &[T], geom: ImageGeom) -> Result<()> {
    if image.len() != geom.len() {
        return Err(Error::Shape(format!(
            "image of {} values does not match {}x{}x{}",
            image.len(),
            geom.height,
            geom.width,
            geom.channels
        )));
    }
    Ok(())
}

/// Zeroes a `size × size` square centered at `center`, clipped at the borders.
/// Returns the number of zeroed pixels.
pub fn cutout_at<T: Real>(image: &mut [T], geom: ImageGeom, size: usize, center: (usize, usize)) -> Result<usize> {
    check_row(image, geom)?;
    if size > geom.height.min(geom.width) {
        return Err(Error::InvalidArgument(format!(
            "cutout size {size} exceeds image {}x{}",
            geom.height, geom.width
        )));
    }
    let b = PixelBox::centered(geom, size, center.0, center.1);
    b.for_each(geom, |i| image[i] = T::zero());
    Ok(b.area())
}

/// Cutout with a uniformly drawn center pixel.
pub fn cutout<T: Real, R: Rng + ?Sized>(image: &mut [T], geom: ImageGeom, size: usize, rng: &mut R) -> Result<usize> {
    if size == 0 {
        check_row(image, geom)?;
        return Ok(0);
    }
    let center = (rng.random_range(0..geom.height), rng.random_range(0..geom.width));
    cutout_at(image, geom, size, center)
}

/// `λ·x1 + (1−λ)·x2`.
pub fn mixup_with<T: Real>(x1: &[T], x2: &[T], lam: f64) -> Result<Vec<T>> {
    if x1.len() != x2.len() {
        return Err(Error::Shape(format!("mixup of {} and {} values", x1.len(), x2.len())));
    }
    let l = T::from_f64_lossy(lam);
    let m = T::from_f64_lossy(1.0 - lam);
    Ok(x1
        .iter()
        .zip(x2)
        .map(|(&a, &b)| {
            // keep the result inside [min, max] despite rounding
            let v = l * a + m * b;
            v.max(a.min(b)).min(a.max(b))
        })
        .collect())
}

/// Mixup with `λ ~ Beta(α, α)`. Returns the mixed image and λ, the weight of
/// the first label.
pub fn mixup<T: Real, R: Rng + ?Sized>(x1: &[T], x2: &[T], alpha: f64, rng: &mut R) -> Result<(Vec<T>, f64)> {
    let beta = Beta::new(alpha, alpha).map_err(|e| Error::InvalidArgument(format!("mixup alpha: {e}")))?;
    let lam = beta.sample(rng);
    Ok((mixup_with(x1, x2, lam)?, lam))
}

/// Pastes `patch` of `x2` into `x1`. Returns the mixed image and the weight of
/// the first label, `1 − area/(H·W)`.
pub fn cutmix_with<T: Real>(x1: &[T], x2: &[T], geom: ImageGeom, patch: PixelBox) -> Result<(Vec<T>, f64)> {
    check_row(x1, geom)?;
    check_row(x2, geom)?;
    let mut out = x1.to_vec();
    patch.for_each(geom, |i| out[i] = x2[i]);
    Ok((out, 1.0 - patch.area() as f64 / geom.area() as f64))
}

/// Standard CutMix box: `λ ~ Beta(1,1)`, sides `⌊H·√(1−λ)⌋ × ⌊W·√(1−λ)⌋`,
/// uniform center, clipped at the borders.
pub fn cutmix_box<R: Rng + ?Sized>(geom: ImageGeom, rng: &mut R) -> PixelBox {
    let lam: f64 = Beta::new(1.0, 1.0).expect("valid").sample(rng);
    let cut = (1.0 - lam).sqrt();
    let h = (geom.height as f64 * cut) as usize;
    let w = (geom.width as f64 * cut) as usize;
    let row = rng.random_range(0..geom.height);
    let col = rng.random_range(0..geom.width);
    PixelBox::centered_rect(geom, h, w, row, col)
}

pub fn cutmix<T: Real, R: Rng + ?Sized>(x1: &[T], x2: &[T], geom: ImageGeom, rng: &mut R) -> Result<(Vec<T>, f64)> {
    let b = cutmix_box(geom, rng);
    cutmix_with(x1, x2, geom, b)
}

/// Augmented batch ready for the attack and loss.
#[derive(Clone, Debug)]
pub struct AugmentedBatch<T: Real> {
    pub x: Tensor<T>,
    /// Soft target rows `B × C`.
    pub targets: Tensor<T>,
    /// Higher-weight label per row, used for accuracy counting.
    pub labels: Vec<usize>,
}

/// Applies `spec` to every row. Mixup and CutMix pair each row with a randomly
/// permuted partner from the same batch.
pub fn augment_batch<T: Real, R: Rng + ?Sized>(
    spec: &AugmentSpec,
    geom: ImageGeom,
    x: &Tensor<T>,
    labels: &[usize],
    classes: usize,
    rng: &mut R,
) -> Result<AugmentedBatch<T>> {
    let b = x.rows();
    if labels.len() != b {
        return Err(Error::Shape(format!("{b} rows but {} labels", labels.len())));
    }
    let mut targets = Tensor::<T>::zeros(vec![b, classes]);
    let mut out = x.clone();
    let mut dominant = labels.to_vec();
    match spec.kind {
        AugmentKind::None => {
            for (r, &y) in labels.iter().enumerate() {
                targets.row_mut(r)[y] = T::one();
            }
        }
        AugmentKind::Cutout => {
            let size = spec.resolved_cutout(geom);
            for (r, &y) in labels.iter().enumerate() {
                cutout(out.row_mut(r), geom, size, rng)?;
                targets.row_mut(r)[y] = T::one();
            }
        }
        AugmentKind::Mixup | AugmentKind::Cutmix => {
            let mut partner: Vec<usize> = (0..b).collect();
            rand::seq::SliceRandom::shuffle(partner.as_mut_slice(), rng);
            for r in 0..b {
                let p = partner[r];
                let (row, w1) = if spec.kind == AugmentKind::Mixup {
                    mixup(x.row(r), x.row(p), spec.mixup_alpha, rng)?
                } else {
                    cutmix(x.row(r), x.row(p), geom, rng)?
                };
                out.row_mut(r).copy_from_slice(&row);
                let t = targets.row_mut(r);
                t[labels[r]] = t[labels[r]] + T::from_f64_lossy(w1);
                t[labels[p]] = t[labels[p]] + T::from_f64_lossy(1.0 - w1);
                if w1 < 0.5 {
                    dominant[r] = labels[p];
                }
            }
        }
    }
    Ok(AugmentedBatch {
        x: out,
        targets,
        labels: dominant,
    })
}
