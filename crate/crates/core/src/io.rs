//! File helpers: image decode, PNG encode with an embedded provenance
//! stamp, `.npy` tensors.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::color::RgbImage;
use crate::error::{Error, Result};

/// PNG `tEXt` keyword carrying the provenance stamp.
pub const PROVENANCE_KEYWORD: &str = "otshift-provenance";

pub fn load_image(path: &Path) -> Result<RgbImage> {
    let img = image::open(path).map_err(|source| Error::Decode {
        path: path.to_path_buf(),
        source,
    })?;
    RgbImage::from_rgb8(&img.to_rgb8())
}

/// Writes 8-bit RGB PNG bytes with an optional provenance text chunk.
pub fn write_png_rgb8(
    path: &Path,
    width: u32,
    height: u32,
    data: &[u8],
    provenance: Option<&str>,
) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width, height);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    if let Some(stamp) = provenance {
        encoder.add_text_chunk(PROVENANCE_KEYWORD.to_string(), stamp.to_string())?;
    }
    let mut writer = encoder.write_header()?;
    writer.write_image_data(data)?;
    writer.finish()?;
    Ok(())
}

pub fn save_png(img: &RgbImage, path: &Path, provenance: Option<&str>) -> Result<()> {
    let rgb8 = img.to_rgb8();
    write_png_rgb8(path, rgb8.width(), rgb8.height(), rgb8.as_raw(), provenance)
}

/// Reads the provenance text chunk back from a PNG, if present.
pub fn read_png_provenance(path: &Path) -> Result<Option<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = png::Decoder::new(std::io::BufReader::new(file));
    let reader = decoder.read_info().map_err(|e| {
        Error::io(path, std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    })?;
    Ok(reader
        .info()
        .uncompressed_latin1_text
        .iter()
        .find(|t| t.keyword == PROVENANCE_KEYWORD)
        .map(|t| t.text.clone()))
}

/// Writes a little-endian `f32` array in NumPy `.npy` (format 1.0).
pub fn write_npy_f32(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    assert_eq!(shape.iter().product::<usize>(), data.len(), "shape/data mismatch");
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    let shape_txt = if dims.len() == 1 {
        format!("({},)", dims[0])
    } else {
        format!("({})", dims.join(", "))
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {shape_txt}, }}");
    // magic(6) + version(2) + len(2) + header + '\n' must be 64-byte aligned.
    let unpadded = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - unpadded % 64) % 64));
    header.push('\n');

    let mut bytes = Vec::with_capacity(10 + header.len() + data.len() * 4);
    bytes.extend_from_slice(b"\x93NUMPY\x01\x00");
    bytes.extend_from_slice(&(header.len() as u16).to_le_bytes());
    bytes.extend_from_slice(header.as_bytes());
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let mut f = File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
