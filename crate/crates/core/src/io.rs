//! PNG encode/decode at the 8-bit boundary.

use std::io::Cursor;
use std::path::Path;

use ::image::codecs::png::PngEncoder;
use ::image::{ExtendedColorType, ImageEncoder, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{GrayImage, RgbImage};

pub fn load_rgb(path: &Path) -> Result<RgbImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rgb(&bytes).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })
}

pub fn decode_rgb(bytes: &[u8]) -> Result<RgbImage, ::image::ImageError> {
    let img = ::image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(RgbImage::new(w as usize, h as usize, img.into_raw()).expect("decoder yields consistent buffers"))
}

/// Width and height from the PNG header, without decoding pixels.
pub fn png_dimensions(path: &Path) -> Result<(usize, usize)> {
    ::image::image_dimensions(path)
        .map(|(w, h)| (w as usize, h as usize))
        .map_err(|source| Error::Codec {
            path: path.to_path_buf(),
            source,
        })
}

pub fn encode_rgb(img: &RgbImage) -> Vec<u8> {
    encode(img.data(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

pub fn encode_gray(img: &GrayImage) -> Vec<u8> {
    encode(&img.to_luma8(), img.width(), img.height(), ExtendedColorType::L8)
}

fn encode(data: &[u8], width: usize, height: usize, color: ExtendedColorType) -> Vec<u8> {
    let mut buf = Cursor::new(Vec::new());
    PngEncoder::new(&mut buf)
        .write_image(data, width as u32, height as u32, color)
        .expect("in-memory png encoding of a well-formed buffer");
    buf.into_inner()
}

pub fn save_rgb(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_rgb(img)).map_err(|e| Error::io(path, e))
}

pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_gray(img)).map_err(|e| Error::io(path, e))
}
