use serde::{Deserialize, Serialize};

use crate::color::RgbImage;

/// Resize target and per-channel normalization constants (ImageNet
/// statistics).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreprocessedTensorSpec {
    pub side: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl PreprocessedTensorSpec {
    pub const IMAGENET_224: PreprocessedTensorSpec = PreprocessedTensorSpec {
        side: 224,
        mean: [0.485, 0.456, 0.406],
        std: [0.229, 0.224, 0.225],
    };
}

impl Default for PreprocessedTensorSpec {
    fn default() -> Self {
        Self::IMAGENET_224
    }
}

/// Channel-major `3 × side × side` raster.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedTensor {
    pub side: usize,
    pub data: Vec<f32>,
}

impl NormalizedTensor {
    pub fn shape(&self) -> [usize; 3] {
        [3, self.side, self.side]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.side + y) * self.side + x]
    }

    /// Undo the normalization, returning `[0, 1]`-scaled channel values.
    pub fn denormalize(&self, spec: &PreprocessedTensorSpec) -> Vec<f64> {
        let plane = self.side * self.side;
        self.data
            .iter()
            .enumerate()
            .map(|(k, &v)| {
                let c = k / plane;
                f64::from(v) * spec.std[c] + spec.mean[c]
            })
            .collect()
    }
}

/// Direct bilinear resize (no aspect preservation, no antialiasing) with
/// half-pixel sample centers.
pub fn resize_bilinear(img: &RgbImage, out_w: usize, out_h: usize) -> Vec<[f64; 3]> {
    let (in_w, in_h) = (img.width(), img.height());
    let sx = in_w as f64 / out_w as f64;
    let sy = in_h as f64 / out_h as f64;
    let axis = |o: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n - 1) as f64);
        let i0 = pos.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, pos - i0 as f64)
    };
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = axis(y, sy, in_h);
        for x in 0..out_w {
            let (x0, x1, tx) = axis(x, sx, in_w);
            let (p00, p01) = (img.pixel(x0, y0), img.pixel(x1, y0));
            let (p10, p11) = (img.pixel(x0, y1), img.pixel(x1, y1));
            let mut px = [0.0; 3];
            for c in 0..3 {
                let top = p00[c] + tx * (p01[c] - p00[c]);
                let bottom = p10[c] + tx * (p11[c] - p10[c]);
                px[c] = top + ty * (bottom - top);
            }
            out.push(px);
        }
    }
    out
}

/// Resize to `side × side`, then `(v - mean) / std` per channel.
pub fn preprocess(img: &RgbImage, spec: &PreprocessedTensorSpec) -> NormalizedTensor {
    let side = spec.side;
    let resized = resize_bilinear(img, side, side);
    let plane = side * side;
    let mut data = vec![0f32; 3 * plane];
    for (k, px) in resized.iter().enumerate() {
        for c in 0..3 {
            data[c * plane + k] = ((px[c] - spec.mean[c]) / spec.std[c]) as f32;
        }
    }
    NormalizedTensor { side, data }
}
