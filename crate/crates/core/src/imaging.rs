//! Grayscale images, bilinear sampling and multi-scale patch extraction.
//!
//! Pixel `(i, j)` sits at continuous coordinate `(i, j)`; landmarks use the
//! same frame. Samples outside the image are clamped to the border.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point2, SimilarityTransform};

#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidValue(
                "image dimensions must be positive".into(),
            ));
        }
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                actual: pixels.len(),
                context: "pixel count",
            });
        }
        if pixels.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidValue("intensities must lie in [0, 1]".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Builds an image from `f(x, y)`, clamping values into `[0, 1]`.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "image dimensions must be positive");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y).clamp(0.0, 1.0));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::from_fn(width, height, |_, _| value)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    /// Bilinear interpolation with edge clamping.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = lerp(self.get(x0, y0), self.get(x1, y0), fx);
        let bottom = lerp(self.get(x0, y1), self.get(x1, y1), fx);
        lerp(top, bottom, fy).clamp(0.0, 1.0)
    }
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

pub fn sample_bilinear(img: &GrayImage, x: f64, y: f64) -> f64 {
    img.sample(x, y)
}

/// Renders `img` into an `out_w x out_h` frame through `t` (inverse mapping).
pub fn warp_similarity(
    img: &GrayImage,
    t: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
) -> GrayImage {
    let inv = t.inverse();
    GrayImage::from_fn(out_w, out_h, |u, v| {
        let p = inv.apply(Point2::new(u as f64, v as f64));
        img.sample(p.x, p.y)
    })
}

/// Resamples an axis-aligned rectangle into `out_w x out_h` samples.
///
/// Sample `k` along an axis of length `len` starting at `origin` reads the
/// source at `origin + (k + 0.5) / out * len`.
pub fn resample_region(
    img: &GrayImage,
    origin: Point2,
    size: (f64, f64),
    out_w: usize,
    out_h: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for r in 0..out_h {
        let y = origin.y + (r as f64 + 0.5) / out_h as f64 * size.1;
        for c in 0..out_w {
            let x = origin.x + (c as f64 + 0.5) / out_w as f64 * size.0;
            out.push(img.sample(x, y));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub resolution: usize,
    pub intensities: Vec<f64>,
    /// Window side as a fraction of the face size (0 when cropped directly).
    pub source_scale: f64,
}

pub fn crop_patch(img: &GrayImage, center: Point2, window_px: f64, resolution: usize) -> Patch {
    assert!(window_px > 0.0, "window must be positive");
    assert!(resolution >= 2, "patch resolution must be at least 2");
    let half = window_px / 2.0;
    Patch {
        resolution,
        intensities: resample_region(
            img,
            Point2::new(center.x - half, center.y - half),
            (window_px, window_px),
            resolution,
            resolution,
        ),
        source_scale: 0.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PyramidSpec {
    /// Window sides as fractions of the face size, strictly descending.
    pub scales: Vec<f64>,
    pub resolution: usize,
}

impl Default for PyramidSpec {
    fn default() -> Self {
        Self {
            scales: vec![0.4, 0.2, 0.1],
            resolution: 16,
        }
    }
}

impl PyramidSpec {
    pub fn new(scales: Vec<f64>, resolution: usize) -> Result<Self> {
        let spec = Self { scales, resolution };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::InvalidValue(
                "pyramid needs at least one scale".into(),
            ));
        }
        if self.scales.iter().any(|&s| !(s > 0.0 && s <= 1.0)) {
            return Err(Error::InvalidValue(
                "pyramid scales must lie in (0, 1]".into(),
            ));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::InvalidValue(
                "pyramid scales must be strictly descending".into(),
            ));
        }
        if self.resolution < 2 {
            return Err(Error::InvalidValue(
                "pyramid resolution must be >= 2".into(),
            ));
        }
        Ok(())
    }

    /// Number of intensities in one flattened pyramid.
    pub fn feature_len(&self) -> usize {
        self.scales.len() * self.resolution * self.resolution
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPyramid {
    pub patches: Vec<Patch>,
}

impl PatchPyramid {
    /// Concatenated intensities, coarsest level first.
    pub fn flatten(&self) -> Vec<f64> {
        self.patches
            .iter()
            .flat_map(|p| p.intensities.iter().copied())
            .collect()
    }
}

pub fn extract_pyramid(
    img: &GrayImage,
    center: Point2,
    face_size: f64,
    spec: &PyramidSpec,
) -> PatchPyramid {
    assert!(face_size > 0.0, "face size must be positive");
    PatchPyramid {
        patches: spec
            .scales
            .iter()
            .map(|&s| Patch {
                source_scale: s,
                ..crop_patch(img, center, s * face_size, spec.resolution)
            })
            .collect(),
    }
}
