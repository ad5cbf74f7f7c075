//! sRGB <-> CIELAB conversion (D65 reference white, 2° observer).
//!
//! Rasters are stored as row-major per-pixel triples of `f64`. RGB channels
//! live in `[0, 1]`; Lab uses the usual `L ∈ [0, 100]` and nominal
//! `a, b ∈ [-128, 127]`.

use std::sync::LazyLock;

use crate::error::{Error, Result};

/// Linear sRGB -> XYZ, D65.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

/// Reference white: the XYZ image of RGB (1, 1, 1), so that grays are
/// exactly achromatic.
static WHITE: LazyLock<[f64; 3]> = LazyLock::new(|| {
    let m = &RGB_TO_XYZ;
    [
        m[0][0] + m[0][1] + m[0][2],
        m[1][0] + m[1][1] + m[1][2],
        m[2][0] + m[2][1] + m[2][2],
    ]
});

const DELTA: f64 = 6.0 / 29.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "expected {} pixels for {width}x{height}, got {}",
                width * height,
                pixels.len()
            )));
        }
        if let Some(p) = pixels
            .iter()
            .find(|p| p.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidImage(format!(
                "channel value outside [0, 1]: {p:?}"
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Constant-color image.
    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, vec![rgb; width * height])
    }

    pub fn from_rgb8(img: &image::RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let pixels = img
            .pixels()
            .map(|p| {
                [
                    f64::from(p[0]) / 255.0,
                    f64::from(p[1]) / 255.0,
                    f64::from(p[2]) / 255.0,
                ]
            })
            .collect();
        Self::new(w as usize, h as usize, pixels)
    }

    /// Quantizes to 8 bits per channel with round-half-up.
    pub fn to_rgb8(&self) -> image::RgbImage {
        let mut out = image::RgbImage::new(self.width as u32, self.height as u32);
        for (dst, src) in out.pixels_mut().zip(&self.pixels) {
            for c in 0..3 {
                dst[c] = (src[c] * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
            }
        }
        out
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f64; 3] {
        self.pixels[y * self.width + x]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabImage {
    width: usize,
    height: usize,
    pixels: Vec<[f64; 3]>,
}

impl LabImage {
    /// Builds a Lab raster. Only the shape is validated; values outside the
    /// RGB gamut are allowed and get clamped on the way back to RGB.
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 || pixels.len() != width * height {
            return Err(Error::InvalidImage(format!(
                "lab raster {width}x{height} with {} pixels",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[[f64; 3]] {
        &self.pixels
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    /// An empty raster, only reachable from inside the crate (for exercising
    /// the "empty image" error paths).
    #[cfg(test)]
    pub(crate) fn empty() -> Self {
        Self {
            width: 0,
            height: 0,
            pixels: Vec::new(),
        }
    }
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c00 = m[1][1] * m[2][2] - m[1][2] * m[2][1];
    let c01 = m[1][2] * m[2][0] - m[1][0] * m[2][2];
    let c02 = m[1][0] * m[2][1] - m[1][1] * m[2][0];
    let det = m[0][0] * c00 + m[0][1] * c01 + m[0][2] * c02;
    let inv = 1.0 / det;
    [
        [
            c00 * inv,
            (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv,
            (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv,
        ],
        [
            c01 * inv,
            (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv,
            (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv,
        ],
        [
            c02 * inv,
            (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv,
            (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv,
        ],
    ]
}

fn mul3(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

fn linear_to_srgb(v: f64) -> f64 {
    if v <= 0.0031308 {
        12.92 * v
    } else {
        1.055 * v.powf(1.0 / 2.4) - 0.055
    }
}

fn lab_f(t: f64) -> f64 {
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

fn lab_f_inv(f: f64) -> f64 {
    if f > DELTA {
        f * f * f
    } else {
        3.0 * DELTA * DELTA * (f - 4.0 / 29.0)
    }
}

/// Converts one sRGB triple in `[0, 1]` to `[L, a, b]`.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let xyz = mul3(&RGB_TO_XYZ, lin);
    let w = &*WHITE;
    let fx = lab_f(xyz[0] / w[0]);
    let fy = lab_f(xyz[1] / w[1]);
    let fz = lab_f(xyz[2] / w[2]);
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// Converts `[L, a, b]` to sRGB without clamping; out-of-gamut colors
/// produce channels outside `[0, 1]`.
pub fn lab_to_srgb_unclamped(lab: [f64; 3]) -> [f64; 3] {
    let fy = (lab[0] + 16.0) / 116.0;
    let fx = fy + lab[1] / 500.0;
    let fz = fy - lab[2] / 200.0;
    let w = &*WHITE;
    let xyz = [
        w[0] * lab_f_inv(fx),
        w[1] * lab_f_inv(fy),
        w[2] * lab_f_inv(fz),
    ];
    // Negative linear light has no sRGB encoding; keep the sign so the
    // caller sees it as out of gamut.
    mul3(&XYZ_TO_RGB, xyz).map(|v| {
        if v < 0.0 {
            -linear_to_srgb(-v)
        } else {
            linear_to_srgb(v)
        }
    })
}

/// Converts `[L, a, b]` to sRGB, clamping each channel to `[0, 1]`.
/// The flag reports whether any channel needed clamping.
pub fn lab_to_srgb(lab: [f64; 3]) -> ([f64; 3], bool) {
    let raw = lab_to_srgb_unclamped(lab);
    // Round-trip noise sits around 1e-12; do not count it as clamping.
    let clamped = raw.iter().any(|&c| !(-1e-9..=1.0 + 1e-9).contains(&c));
    (raw.map(|c| c.clamp(0.0, 1.0)), clamped)
}

pub fn rgb_to_lab(img: &RgbImage) -> LabImage {
    LabImage {
        width: img.width,
        height: img.height,
        pixels: img.pixels.iter().map(|&p| srgb_to_lab(p)).collect(),
    }
}

pub fn lab_to_rgb(img: &LabImage) -> RgbImage {
    lab_to_rgb_with_clamp_rate(img).0
}

/// Inverse conversion plus the fraction of pixels that had at least one
/// channel clamped into range.
pub fn lab_to_rgb_with_clamp_rate(img: &LabImage) -> (RgbImage, f64) {
    let mut clamped = 0usize;
    let pixels = img
        .pixels
        .iter()
        .map(|&lab| {
            let (rgb, was_clamped) = lab_to_srgb(lab);
            clamped += usize::from(was_clamped);
            rgb
        })
        .collect();
    let rate = clamped as f64 / img.pixels.len().max(1) as f64;
    (
        RgbImage {
            width: img.width,
            height: img.height,
            pixels,
        },
        rate,
    )
}

/// CIE 1976 color difference.
pub fn delta_e76(x: [f64; 3], y: [f64; 3]) -> f64 {
    ((x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2) + (x[2] - y[2]).powi(2)).sqrt()
}
