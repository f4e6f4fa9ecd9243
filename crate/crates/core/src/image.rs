//! Image tensors in `[-1, 1]` and binary foreground masks.

use std::path::Path;

use image::{GrayImage, RgbImage};
use pona_tensor::ndarray::{s, Array2, Array3, Array4, Axis, IxDyn};
use pona_tensor::Array;

use crate::error::{PonaError, Result};

/// Channel-first RGB image, `[3, H, W]`, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    pub data: Array3<f64>,
}

impl ImageTensor {
    pub fn new(data: Array3<f64>) -> Result<Self> {
        if data.shape()[0] != 3 {
            return Err(PonaError::shape("image channels", &[3], &data.shape()[..1]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(PonaError::NonFinite("image"));
        }
        Ok(Self { data })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            data: Array3::from_elem((3, height, width), value),
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[2]
    }

    /// 8-bit value `v` maps to `v / 127.5 - 1`, so 0 → -1 and 255 → +1.
    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        let mut data = Array3::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for c in 0..3 {
                data[[c, y as usize, x as usize]] = p[c] as f64 / 127.5 - 1.0;
            }
        }
        Self { data }
    }

    /// Inverse of [`ImageTensor::from_rgb8`] with rounding and clamping.
    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let px = |c: usize| {
                let v = (self.data[[c, y as usize, x as usize]] + 1.0) * 127.5;
                v.round().clamp(0.0, 255.0) as u8
            };
            image::Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| PonaError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| PonaError::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Replaces background pixels (mask 0) with `background`.
    pub fn composite(&self, mask: &MaskImage, background: f64) -> Result<Self> {
        if mask.data.shape() != &self.data.shape()[1..] {
            return Err(PonaError::shape("mask", mask.data.shape(), &self.data.shape()[1..]));
        }
        let mut data = self.data.clone();
        for mut plane in data.axis_iter_mut(Axis(0)) {
            plane.zip_mut_with(&mask.data, |v, &m| {
                if m == 0.0 {
                    *v = background;
                }
            });
        }
        Ok(Self { data })
    }
}

/// Stacks same-sized images into an `[N, 3, H, W]` batch.
pub fn stack_images(images: &[&ImageTensor]) -> Result<Array> {
    let first = images.first().ok_or(PonaError::Metric("empty image batch".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (i, img) in images.iter().enumerate() {
        if img.data.shape() != first.data.shape() {
            return Err(PonaError::shape("image batch", img.data.shape(), first.data.shape()));
        }
        out.index_axis_mut(Axis(0), i).assign(&img.data);
    }
    Ok(out.into_dyn())
}

/// Extracts image `index` from an `[N, 3, H, W]` batch.
pub fn unstack_image(batch: &Array, index: usize) -> ImageTensor {
    let sh = batch.shape();
    let data = batch
        .slice_each_axis(|ax| match ax.axis.index() {
            0 => pona_tensor::ndarray::Slice::from(index..index + 1),
            _ => pona_tensor::ndarray::Slice::from(..),
        })
        .to_owned()
        .into_shape_with_order(IxDyn(&[3, sh[2], sh[3]]))
        .unwrap()
        .into_dimensionality()
        .unwrap();
    ImageTensor { data }
}

/// Binary person mask, 1 = foreground.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskImage {
    pub data: Array2<f64>,
}

impl MaskImage {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(PonaError::Metric("mask values must be 0 or 1".into()));
        }
        Ok(Self { data })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            data: Array2::ones((height, width)),
        }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    /// Single-channel image; pixels ≥ 128 are foreground.
    pub fn from_luma8(img: &GrayImage) -> Self {
        let (w, h) = img.dimensions();
        let data = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            if img.get_pixel(x as u32, y as u32)[0] >= 128 {
                1.0
            } else {
                0.0
            }
        });
        Self { data }
    }

    pub fn to_luma8(&self) -> GrayImage {
        let (h, w) = self.data.dim();
        GrayImage::from_fn(w as u32, h as u32, |x, y| {
            image::Luma([if self.data[[y as usize, x as usize]] > 0.0 { 255 } else { 0 }])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| PonaError::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_luma8(&img.to_luma8()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_luma8().save(path).map_err(|source| PonaError::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Horizontal strip of equally sized images, left to right.
pub fn hstack(images: &[ImageTensor]) -> Result<ImageTensor> {
    let first = images.first().ok_or(PonaError::Metric("nothing to stack".into()))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Array3::zeros((3, h, w * images.len()));
    for (i, img) in images.iter().enumerate() {
        if img.data.shape() != first.data.shape() {
            return Err(PonaError::shape("grid tile", img.data.shape(), first.data.shape()));
        }
        data.slice_mut(s![.., .., i * w..(i + 1) * w]).assign(&img.data);
    }
    Ok(ImageTensor { data })
}
