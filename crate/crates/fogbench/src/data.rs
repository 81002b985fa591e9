//! Dataset manifests and conversion between 8-bit images and the [−1, 1]
//! model space.

use crate::error::{Error, Result};
use crate::ppm::{read_ppm, Image};
use crate::scenes::LabeledImage;
use crate::tensor::Tensor;
use std::path::{Path, PathBuf};

/// One manifest row: an image path relative to the dataset root plus its
/// ground-truth steering angle.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub filename: String,
    pub steering_rad: f32,
}

/// Reads `manifest.csv` from a dataset directory.
pub fn read_manifest(dataset_dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dataset_dir.join("manifest.csv");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("filename,steering_rad") => {}
        other => {
            return Err(Error::manifest(
                &path,
                format!("expected header \"filename,steering_rad\", got {other:?}"),
            ))
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let (filename, angle) = line
            .split_once(',')
            .ok_or_else(|| Error::manifest(&path, format!("row {} has no comma", i + 2)))?;
        let steering_rad: f32 = angle.parse().map_err(|_| {
            Error::manifest(
                &path,
                format!("row {} has unparsable angle {angle:?}", i + 2),
            )
        })?;
        rows.push(ManifestRow {
            filename: filename.to_string(),
            steering_rad,
        });
    }
    if rows.is_empty() {
        return Err(Error::manifest(&path, "no samples"));
    }
    Ok(rows)
}

/// A loaded sample together with its manifest-relative filename.
#[derive(Debug, Clone)]
pub struct NamedSample {
    pub filename: String,
    pub sample: LabeledImage,
}

/// Loads every manifest row's image, in manifest order, keeping filenames.
pub fn load_named_dataset(dataset_dir: &Path) -> Result<Vec<NamedSample>> {
    read_manifest(dataset_dir)?
        .into_iter()
        .map(|row| {
            Ok(NamedSample {
                sample: LabeledImage {
                    image: read_ppm(&dataset_dir.join(&row.filename))?,
                    angle: row.steering_rad,
                },
                filename: row.filename,
            })
        })
        .collect()
}

/// Loads every manifest row's image, in manifest order.
pub fn load_dataset(dataset_dir: &Path) -> Result<Vec<LabeledImage>> {
    Ok(load_named_dataset(dataset_dir)?
        .into_iter()
        .map(|n| n.sample)
        .collect())
}

/// Writes samples as a dataset directory in the same layout
/// `build_dataset` produces: `images/{i:06}.ppm` plus `manifest.csv`.
pub fn write_dataset(samples: &[LabeledImage], dir: &Path) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::contract("write_dataset", "no samples"));
    }
    let images_dir = dir.join("images");
    std::fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let mut manifest = String::from("filename,steering_rad\n");
    for (i, s) in samples.iter().enumerate() {
        let name = format!("images/{i:06}.ppm");
        crate::ppm::write_ppm(&dir.join(&name), &s.image)?;
        manifest.push_str(&format!("{name},{}\n", s.angle));
    }
    let path = dir.join("manifest.csv");
    std::fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

/// Paths of every image in a dataset, in manifest order.
pub fn image_paths(dataset_dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_manifest(dataset_dir)?
        .into_iter()
        .map(|row| dataset_dir.join(row.filename))
        .collect())
}

// ── model-space conversion ──

/// Packs images into an N×3×H×W tensor with values in [−1, 1].
pub fn batch_to_tensor(images: &[&Image]) -> Result<Tensor> {
    let first = images
        .first()
        .ok_or_else(|| Error::contract("batch_to_tensor", "empty batch".to_string()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for image in images {
        if image.width != w || image.height != h {
            return Err(Error::contract(
                "batch_to_tensor",
                format!(
                    "mixed sizes in batch: {}x{} vs {w}x{h}",
                    image.width, image.height
                ),
            ));
        }
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    let px = image.data[(y * w + x) * 3 + ch];
                    data.push(f32::from(px) / 127.5 - 1.0);
                }
            }
        }
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// Unpacks one sample of an N×3×H×W tensor back to an 8-bit image,
/// clamping to [−1, 1] first.
pub fn tensor_to_image(batch: &Tensor, index: usize) -> Result<Image> {
    let shape = batch.shape();
    if shape.len() != 4 || shape[1] != 3 {
        return Err(Error::contract(
            "tensor_to_image",
            format!("expected N×3×H×W tensor, got {shape:?}"),
        ));
    }
    if index >= shape[0] {
        return Err(Error::contract(
            "tensor_to_image",
            format!("sample {index} out of range for batch of {}", shape[0]),
        ));
    }
    let (h, w) = (shape[2], shape[3]);
    let plane = h * w;
    let base = index * 3 * plane;
    let data = batch.data();
    let mut out = vec![0u8; plane * 3];
    for ch in 0..3 {
        for i in 0..plane {
            let v = data[base + ch * plane + i].clamp(-1.0, 1.0);
            out[i * 3 + ch] = ((v + 1.0) * 127.5).round() as u8;
        }
    }
    Image::new(w, h, out)
}

/// Column vector of angles as an N×1 tensor.
pub fn angles_to_tensor(samples: &[LabeledImage]) -> Tensor {
    let data: Vec<f32> = samples.iter().map(|s| s.angle).collect();
    Tensor::new(vec![samples.len(), 1], data).expect("shape matches data")
}
