//! Binary PPM (P6, maxval 255) reading and writing.
//!
//! The writer always emits the canonical header `P6\n{w} {h}\n255\n`, so
//! equal pixel data means equal bytes. The reader accepts any standards
//! conforming header (whitespace runs and `#` comments).

use crate::error::{Error, Result};
use std::fs;
use std::io::Write;
use std::path::Path;

/// An 8-bit RGB image, rows top to bottom, `data.len() == width*height*3`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Image> {
        if data.len() != width * height * 3 {
            return Err(Error::contract(
                "Image::new",
                format!(
                    "pixel buffer holds {} bytes, expected {}x{}x3 = {}",
                    data.len(),
                    width,
                    height,
                    width * height * 3
                ),
            ));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Image {
        let mut data = Vec::with_capacity(width * height * 3);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    let mut out = Vec::with_capacity(20 + image.data.len());
    write!(out, "P6\n{} {}\n255\n", image.width, image.height).expect("write to Vec cannot fail");
    out.extend_from_slice(&image.data);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ppm(&bytes)
        .map_err(|detail| Error::contract("read_ppm", format!("{}: {detail}", path.display())))
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Image, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err("missing P6 magic".to_string());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // Skip whitespace and comment lines before each header field.
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if pos == start {
            return Err("truncated header".to_string());
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits are UTF-8");
        *field = text
            .parse()
            .map_err(|_| format!("header field {text:?} out of range"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}, only 255"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after maxval".to_string());
    }
    pos += 1;
    let need = width * height * 3;
    let data = &bytes[pos..];
    if data.len() < need {
        return Err(format!(
            "pixel payload holds {} bytes, expected {need}",
            data.len()
        ));
    }
    Image::new(width, height, data[..need].to_vec()).map_err(|e| e.to_string())
}
