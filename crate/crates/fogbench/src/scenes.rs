//! Procedural road scenes with analytically known steering angles, and a
//! parametric fog renderer over them.
//!
//! Scenes are rendered as a pure function of per-pixel coordinates, with
//! the road bend entering only through `dx − offset` terms: negating the
//! curvature therefore mirrors the image bit-exactly. Fog follows the
//! standard scattering model, `out = in·t + airlight·(1−t)` with
//! transmittance `t = exp(−β·depth)`, then a transmittance-weighted blur.

use crate::error::{Error, Result};
use crate::ppm::{write_ppm, Image};
use crate::rng::{sample_seed, substream, worker_threads};
use rand::Rng;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

// ── scene parameters ──

#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub seed: u64,
    /// Signed road bend in [−1, 1]; the label is `π/2 · curvature`.
    pub curvature: f32,
    /// Horizon height as a fraction of image height, inside (0.3, 0.7).
    pub horizon_frac: f32,
    /// Additive RGB palette shift, a few intensity levels per channel.
    pub palette_jitter: [f32; 3],
    pub image_size: usize,
}

impl SceneParams {
    /// Draws curvature, horizon, and palette from the sample seed.
    pub fn from_seed(seed: u64, image_size: usize) -> SceneParams {
        let mut rng = substream(seed, "scene");
        SceneParams {
            seed,
            curvature: rng.gen_range(-1.0..=1.0),
            horizon_frac: rng.gen_range(0.35..0.65),
            palette_jitter: [
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
            ],
            image_size,
        }
    }

    pub fn angle(&self) -> f32 {
        std::f32::consts::FRAC_PI_2 * self.curvature
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FogParams {
    /// Extinction coefficient per unit depth, ≥ 0.
    pub beta: f32,
    /// Ambient light the fog blends toward.
    pub airlight: [u8; 3],
    /// Horizon height assumed by the row-depth proxy.
    pub horizon_frac: f32,
}

impl Default for FogParams {
    /// β puts horizon transmittance near 0.2 at 64×64; grey airlight.
    fn default() -> FogParams {
        FogParams {
            beta: 0.05,
            airlight: [230, 230, 230],
            horizon_frac: 0.5,
        }
    }
}

impl FogParams {
    /// Row depth: farthest (H/2) at and above the horizon, falling
    /// linearly to 1 at the bottom row.
    pub fn depth(&self, row: usize, height: usize) -> f32 {
        let far = height as f32 / 2.0;
        let hy = (self.horizon_frac * height as f32) as usize;
        if row <= hy || height - 1 == hy {
            return far;
        }
        let q = (row - hy) as f32 / (height - 1 - hy) as f32;
        far + q * (1.0 - far)
    }
}

/// An image paired with its ground-truth steering angle in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    pub image: Image,
    pub angle: f32,
}

// ── rendering ──

fn shade(base: [f32; 3], jitter: &[f32; 3]) -> [f32; 3] {
    [
        base[0] + jitter[0],
        base[1] + jitter[1],
        base[2] + jitter[2],
    ]
}

fn to_u8(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn lerp3(a: [f32; 3], b: [f32; 3], t: f32) -> [f32; 3] {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

/// Renders sky, ground, and a road polygon whose bend encodes curvature.
///
/// Every pixel is a function of the row and of `|dx − offset(row)|` with
/// `offset` odd in curvature, so `generate_scene` with `−curvature` is the
/// exact horizontal mirror of `+curvature`.
pub fn generate_scene(params: &SceneParams) -> Result<LabeledImage> {
    let s = params.image_size;
    if s < 16 {
        return Err(Error::contract(
            "generate_scene",
            format!("image_size {s} below minimum 16"),
        ));
    }
    let j = &params.palette_jitter;
    let sky_top = shade([104.0, 158.0, 232.0], j);
    let sky_bot = shade([176.0, 208.0, 240.0], j);
    let ground_far = shade([104.0, 142.0, 84.0], j);
    let ground_near = shade([66.0, 118.0, 58.0], j);
    let road = shade([98.0, 96.0, 102.0], j);
    let road_edge = shade([214.0, 214.0, 210.0], j);
    let road_dash = shade([206.0, 182.0, 70.0], j);

    let hy = ((params.horizon_frac * s as f32) as usize).clamp(1, s - 2);
    let cx = (s as f32 - 1.0) / 2.0;
    let mut data = vec![0u8; s * s * 3];
    for y in 0..s {
        let row = &mut data[y * s * 3..(y + 1) * s * 3];
        if y < hy {
            let t = y as f32 / hy as f32;
            let c = lerp3(sky_top, sky_bot, t);
            for x in 0..s {
                row[x * 3] = to_u8(c[0]);
                row[x * 3 + 1] = to_u8(c[1]);
                row[x * 3 + 2] = to_u8(c[2]);
            }
            continue;
        }
        // Perspective progress: 0 at the horizon, 1 at the bottom row.
        let p = (y - hy) as f32 / (s - 1 - hy) as f32;
        let ground = lerp3(ground_far, ground_near, p);
        let half_width = (0.06 + 0.38 * p) * s as f32;
        let offset = params.curvature * 0.35 * s as f32 * (1.0 - p) * (1.0 - p);
        let edge_band = (0.14 * half_width).max(0.6);
        let dash_half = (s as f32 / 60.0).max(0.6);
        let dash_on = (y / 3) % 2 == 0;
        for x in 0..s {
            let dx = x as f32 - cx;
            let d = (dx - offset).abs();
            let c = if d <= half_width {
                if d >= half_width - edge_band {
                    road_edge
                } else if dash_on && d <= dash_half {
                    road_dash
                } else {
                    road
                }
            } else {
                ground
            };
            row[x * 3] = to_u8(c[0]);
            row[x * 3 + 1] = to_u8(c[1]);
            row[x * 3 + 2] = to_u8(c[2]);
        }
    }
    Ok(LabeledImage {
        image: Image::new(s, s, data)?,
        angle: params.angle(),
    })
}

// ── fog ──

/// The scattering blend for one channel value at transmittance `t`.
pub fn fog_blend(value: f32, airlight: f32, t: f32) -> f32 {
    value * t + airlight * (1.0 - t)
}

/// Applies fog: per-row scattering toward the airlight, then a 3×3 box
/// blur mixed in with weight `1−t`. The angle label is unchanged.
#[allow(clippy::needless_range_loop)]
pub fn apply_fog(input: &LabeledImage, fog: &FogParams) -> LabeledImage {
    let (w, h) = (input.image.width, input.image.height);
    let src = &input.image.data;
    let air = [
        f32::from(fog.airlight[0]),
        f32::from(fog.airlight[1]),
        f32::from(fog.airlight[2]),
    ];
    let t_row: Vec<f32> = (0..h)
        .map(|y| (-fog.beta * fog.depth(y, h)).exp())
        .collect();

    let mut scattered = vec![0.0f32; w * h * 3];
    for y in 0..h {
        let t = t_row[y];
        for x in 0..w {
            for ch in 0..3 {
                let i = (y * w + x) * 3 + ch;
                scattered[i] = fog_blend(f32::from(src[i]), air[ch], t);
            }
        }
    }

    let mut data = vec![0u8; w * h * 3];
    for y in 0..h {
        let t = t_row[y];
        for x in 0..w {
            for ch in 0..3 {
                let i = (y * w + x) * 3 + ch;
                // Box blur over the in-bounds 3×3 neighbourhood.
                let mut sum = 0.0f32;
                let mut n = 0.0f32;
                for yy in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        sum += scattered[(yy * w + xx) * 3 + ch];
                        n += 1.0;
                    }
                }
                let blurred = sum / n;
                let v = scattered[i] * t + blurred * (1.0 - t);
                data[i] = to_u8(v);
            }
        }
    }
    LabeledImage {
        image: Image {
            width: w,
            height: h,
            data,
        },
        angle: input.angle,
    }
}

// ── dataset building ──

#[derive(Debug)]
pub struct DatasetSummary {
    pub count: usize,
    pub dir: PathBuf,
    pub manifest: PathBuf,
}

/// Renders `count` scenes (foggy when `fog` is given) into
/// `out_dir/images/%06d.ppm` plus `out_dir/manifest.csv`.
pub fn build_dataset(
    count: usize,
    image_size: usize,
    out_dir: &Path,
    fog: Option<&FogParams>,
    seed: u64,
) -> Result<DatasetSummary> {
    if count == 0 {
        return Err(Error::contract(
            "build_dataset",
            "count must be ≥ 1".to_string(),
        ));
    }
    let images_dir = out_dir.join("images");
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;

    let render = |i: usize| -> Result<LabeledImage> {
        let params = SceneParams::from_seed(sample_seed(seed, i as u64), image_size);
        let clean = generate_scene(&params)?;
        Ok(match fog {
            Some(f) => apply_fog(&clean, f),
            None => clean,
        })
    };
    let samples = render_all(count, worker_threads(), &render)?;

    let mut manifest = String::from("filename,steering_rad\n");
    for (i, sample) in samples.iter().enumerate() {
        let name = format!("images/{i:06}.ppm");
        write_ppm(&out_dir.join(&name), &sample.image)?;
        writeln!(manifest, "{name},{}", sample.angle).expect("write to String cannot fail");
    }
    let manifest_path = out_dir.join("manifest.csv");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(DatasetSummary {
        count,
        dir: out_dir.to_path_buf(),
        manifest: manifest_path,
    })
}

/// Renders samples, fanning out over `threads` when asked to; each sample
/// is independently seeded, so the result is order-exact either way.
fn render_all(
    count: usize,
    threads: usize,
    render: &(dyn Fn(usize) -> Result<LabeledImage> + Sync),
) -> Result<Vec<LabeledImage>> {
    if threads <= 1 || count <= 1 {
        return (0..count).map(render).collect();
    }
    let mut out: Vec<Option<Result<LabeledImage>>> = (0..count).map(|_| None).collect();
    let chunk = count.div_ceil(threads);
    std::thread::scope(|scope| {
        for (t, slot) in out.chunks_mut(chunk).enumerate() {
            scope.spawn(move || {
                for (k, s) in slot.iter_mut().enumerate() {
                    *s = Some(render(t * chunk + k));
                }
            });
        }
    });
    out.into_iter()
        .map(|s| s.expect("every slot rendered"))
        .collect()
}
