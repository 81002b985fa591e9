//! The three networks of the attack: steering predictor N, translation
//! generators φ_AB/φ_BA, and patch discriminators D_A/D_B.

mod checkpoint;
mod gradsuite;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use gradsuite::{gradient_suite, SuiteCase};

use crate::error::{Error, Result};
use crate::tensor::{Param, Tape, TapeId, Tensor};
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Standard deviation of the weight init distribution N(0, 0.02²).
pub const INIT_STD: f32 = 0.02;
/// Epsilon for every instance normalization.
pub const NORM_EPS: f32 = 1e-5;

/// How a model's parameters enter a tape: trainable bindings accumulate
/// gradients, frozen bindings let gradients flow through but not into them.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Binding {
    Trainable,
    Frozen,
}

fn init_weight<R: Rng>(rng: &mut R, shape: Vec<usize>, std: f32) -> Param {
    let dist = Normal::new(0.0f32, std).expect("valid stddev");
    let n: usize = shape.iter().product();
    let data: Vec<f32> = (0..n).map(|_| dist.sample(rng)).collect();
    Param::new(Tensor::new(shape, data).expect("shape matches data"))
}

// ── Layers ───────────────────────────────────────────────────────────────

struct Conv2d {
    weight: Param,
    bias: Param,
    stride: usize,
    padding: usize,
}

impl Conv2d {
    fn new<R: Rng>(
        rng: &mut R,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: usize,
    ) -> Conv2d {
        Conv2d {
            weight: init_weight(rng, vec![cout, cin, k, k], INIT_STD),
            bias: Param::new(Tensor::zeros(vec![cout])),
            stride,
            padding,
        }
    }

    fn forward(&self, tape: &mut Tape, x: TapeId, binding: Binding) -> Result<TapeId> {
        let (w, b) = match binding {
            Binding::Trainable => (tape.param(&self.weight), tape.param(&self.bias)),
            Binding::Frozen => (
                tape.param_frozen(&self.weight),
                tape.param_frozen(&self.bias),
            ),
        };
        tape.conv2d(x, w, b, self.stride, self.padding)
    }

    fn collect(&self, name: &str, out: &mut Vec<(String, Param)>) {
        out.push((format!("{name}.weight"), self.weight.clone()));
        out.push((format!("{name}.bias"), self.bias.clone()));
    }
}

struct Dense {
    weight: Param,
    bias: Param,
}

impl Dense {
    fn new<R: Rng>(rng: &mut R, fin: usize, fout: usize) -> Dense {
        Dense {
            weight: init_weight(rng, vec![fin, fout], INIT_STD),
            bias: Param::new(Tensor::zeros(vec![fout])),
        }
    }

    fn forward(&self, tape: &mut Tape, x: TapeId, binding: Binding) -> Result<TapeId> {
        let (w, b) = match binding {
            Binding::Trainable => (tape.param(&self.weight), tape.param(&self.bias)),
            Binding::Frozen => (
                tape.param_frozen(&self.weight),
                tape.param_frozen(&self.bias),
            ),
        };
        tape.dense(x, w, b)
    }

    fn collect(&self, name: &str, out: &mut Vec<(String, Param)>) {
        out.push((format!("{name}.weight"), self.weight.clone()));
        out.push((format!("{name}.bias"), self.bias.clone()));
    }
}

// ── Steering predictor ───────────────────────────────────────────────────

/// Regressor N: four stride-2 convs (16, 32, 64, 64 channels), two dense
/// layers, and a π·tanh head keeping outputs inside (−π, π).
pub struct SteeringPredictor {
    convs: Vec<Conv2d>,
    fc1: Dense,
    fc2: Dense,
    image_size: usize,
}

impl SteeringPredictor {
    pub const ARCH_TAG: &'static str = "steering-predictor-v1";
    const CHANNELS: [usize; 4] = [16, 32, 64, 64];

    pub fn new<R: Rng>(rng: &mut R, image_size: usize) -> Result<SteeringPredictor> {
        if image_size < 16 || !image_size.is_multiple_of(16) {
            return Err(Error::contract(
                "steering_predictor",
                format!("image size {image_size} must be a positive multiple of 16"),
            ));
        }
        let mut convs = Vec::new();
        let mut cin = 3;
        for cout in Self::CHANNELS {
            convs.push(Conv2d::new(rng, cin, cout, 3, 2, 1));
            cin = cout;
        }
        let spatial = image_size / 16;
        let flat = 64 * spatial * spatial;
        Ok(SteeringPredictor {
            convs,
            fc1: Dense::new(rng, flat, 64),
            fc2: Dense::new(rng, 64, 1),
            image_size,
        })
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    /// Predicted angles, shape N×1, for a batch N×3×H×W in [−1,1].
    pub fn forward(&self, tape: &mut Tape, batch: TapeId, binding: Binding) -> Result<TapeId> {
        let shape = tape.shape(batch).to_vec();
        if shape.len() != 4
            || shape[1] != 3
            || shape[2] != self.image_size
            || shape[3] != self.image_size
        {
            return Err(Error::contract(
                "steering_forward",
                format!(
                    "expected N×3×{s}×{s} batch, got {shape:?}",
                    s = self.image_size
                ),
            ));
        }
        let mut h = batch;
        for conv in &self.convs {
            h = conv.forward(tape, h, binding)?;
            h = tape.relu(h);
        }
        let n = shape[0];
        let spatial = self.image_size / 16;
        let flat = tape.reshape(h, vec![n, 64 * spatial * spatial])?;
        let z = self.fc1.forward(tape, flat, binding)?;
        let z = tape.relu(z);
        let z = self.fc2.forward(tape, z, binding)?;
        let t = tape.tanh(z);
        Ok(tape.scale(t, std::f32::consts::PI))
    }

    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            conv.collect(&format!("conv{}", i + 1), &mut out);
        }
        self.fc1.collect("fc1", &mut out);
        self.fc2.collect("fc2", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_checkpoint(path, Self::ARCH_TAG, &self.named_params())
    }

    pub fn load_from(&mut self, path: &std::path::Path) -> Result<()> {
        checkpoint::load_into(path, Self::ARCH_TAG, &self.named_params())
    }

    /// Constructs a predictor for the given image size and fills it from a
    /// checkpoint.
    pub fn load(path: &std::path::Path, image_size: usize) -> Result<SteeringPredictor> {
        let mut p = SteeringPredictor::new(&mut crate::rng::substream(0, "load"), image_size)?;
        p.load_from(path)?;
        Ok(p)
    }

    /// Copies all parameter values from another predictor of equal shape.
    pub fn clone_weights_from(&mut self, other: &SteeringPredictor) -> Result<()> {
        let mine = self.named_params();
        let theirs = other.named_params();
        if mine.len() != theirs.len() {
            return Err(Error::contract(
                "clone_weights",
                "parameter counts differ".to_string(),
            ));
        }
        for ((_, dst), (_, src)) in mine.iter().zip(&theirs) {
            let src = src.borrow();
            let mut dst = dst.borrow_mut();
            if dst.shape() != src.shape() {
                return Err(Error::contract(
                    "clone_weights",
                    format!("shape {:?} vs {:?}", dst.shape(), src.shape()),
                ));
            }
            dst.data_mut().copy_from_slice(src.data());
        }
        Ok(())
    }
}

// ── Translation generator ───────────────────────────────────────────────

/// φ: two stride-2 encoder convs, residual blocks with instance norm, and a
/// decoder of two nearest-neighbor-upsample + conv stages ending in tanh.
pub struct TranslationGenerator {
    enc1: Conv2d,
    enc2: Conv2d,
    res: Vec<(Conv2d, Conv2d)>,
    dec1: Conv2d,
    dec2: Conv2d,
}

/// Generator feature width after the first encoder conv.
const NGF: usize = 8;

impl TranslationGenerator {
    pub const ARCH_TAG: &'static str = "translation-generator-v1";

    pub fn new<R: Rng>(rng: &mut R, res_blocks: usize) -> TranslationGenerator {
        TranslationGenerator {
            enc1: Conv2d::new(rng, 3, NGF, 3, 2, 1),
            enc2: Conv2d::new(rng, NGF, 2 * NGF, 3, 2, 1),
            res: (0..res_blocks)
                .map(|_| {
                    (
                        Conv2d::new(rng, 2 * NGF, 2 * NGF, 3, 1, 1),
                        Conv2d::new(rng, 2 * NGF, 2 * NGF, 3, 1, 1),
                    )
                })
                .collect(),
            dec1: Conv2d::new(rng, 2 * NGF, NGF, 3, 1, 1),
            dec2: Conv2d::new(rng, NGF, 3, 3, 1, 1),
        }
    }

    /// Translated batch with the input's shape, values in [−1,1].
    pub fn forward(&self, tape: &mut Tape, batch: TapeId, binding: Binding) -> Result<TapeId> {
        let shape = tape.shape(batch).to_vec();
        if shape.len() != 4
            || shape[1] != 3
            || !shape[2].is_multiple_of(4)
            || !shape[3].is_multiple_of(4)
        {
            return Err(Error::contract(
                "generator_forward",
                format!("expected N×3×H×W batch with H, W divisible by 4, got {shape:?}"),
            ));
        }
        let mut h = self.enc1.forward(tape, batch, binding)?;
        h = tape.instance_norm(h, NORM_EPS)?;
        h = tape.relu(h);
        h = self.enc2.forward(tape, h, binding)?;
        h = tape.instance_norm(h, NORM_EPS)?;
        h = tape.relu(h);
        for (c1, c2) in &self.res {
            let skip = h;
            h = c1.forward(tape, h, binding)?;
            h = tape.instance_norm(h, NORM_EPS)?;
            h = tape.relu(h);
            h = c2.forward(tape, h, binding)?;
            h = tape.instance_norm(h, NORM_EPS)?;
            h = tape.add(h, skip)?;
        }
        h = tape.upsample_nearest2(h)?;
        h = self.dec1.forward(tape, h, binding)?;
        h = tape.instance_norm(h, NORM_EPS)?;
        h = tape.relu(h);
        h = tape.upsample_nearest2(h)?;
        h = self.dec2.forward(tape, h, binding)?;
        Ok(tape.tanh(h))
    }

    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.enc1.collect("enc1", &mut out);
        self.enc2.collect("enc2", &mut out);
        for (i, (c1, c2)) in self.res.iter().enumerate() {
            c1.collect(&format!("res{}a", i + 1), &mut out);
            c2.collect(&format!("res{}b", i + 1), &mut out);
        }
        self.dec1.collect("dec1", &mut out);
        self.dec2.collect("dec2", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_checkpoint(path, Self::ARCH_TAG, &self.named_params())
    }

    pub fn load_from(&mut self, path: &std::path::Path) -> Result<()> {
        checkpoint::load_into(path, Self::ARCH_TAG, &self.named_params())
    }

    /// Constructs a generator of the given depth and fills it from a
    /// checkpoint.
    pub fn load(path: &std::path::Path, res_blocks: usize) -> Result<TranslationGenerator> {
        let mut g = TranslationGenerator::new(&mut crate::rng::substream(0, "load"), res_blocks);
        g.load_from(path)?;
        Ok(g)
    }
}

// ── Patch discriminator ──────────────────────────────────────────────────

/// PatchGAN critic: three stride-2 convs with leaky_relu(0.2) producing a
/// 1-channel map of patch scores (H/8 × W/8).
pub struct PatchDiscriminator {
    c1: Conv2d,
    c2: Conv2d,
    c3: Conv2d,
}

/// Discriminator feature width after the first conv.
const NDF: usize = 16;

impl PatchDiscriminator {
    pub const ARCH_TAG: &'static str = "patch-discriminator-v1";

    pub fn new<R: Rng>(rng: &mut R) -> PatchDiscriminator {
        PatchDiscriminator {
            c1: Conv2d::new(rng, 3, NDF, 4, 2, 1),
            c2: Conv2d::new(rng, NDF, 2 * NDF, 4, 2, 1),
            c3: Conv2d::new(rng, 2 * NDF, 1, 4, 2, 1),
        }
    }

    /// Raw (least-squares GAN) patch scores, shape N×1×H/8×W/8.
    pub fn forward(&self, tape: &mut Tape, batch: TapeId, binding: Binding) -> Result<TapeId> {
        let shape = tape.shape(batch).to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] < 8 || shape[3] < 8 {
            return Err(Error::contract(
                "discriminator_forward",
                format!("expected N×3×H×W batch with H, W ≥ 8, got {shape:?}"),
            ));
        }
        let mut h = self.c1.forward(tape, batch, binding)?;
        h = tape.leaky_relu(h, 0.2);
        h = self.c2.forward(tape, h, binding)?;
        h = tape.leaky_relu(h, 0.2);
        self.c3.forward(tape, h, binding)
    }

    pub fn named_params(&self) -> Vec<(String, Param)> {
        let mut out = Vec::new();
        self.c1.collect("c1", &mut out);
        self.c2.collect("c2", &mut out);
        self.c3.collect("c3", &mut out);
        out
    }

    pub fn params(&self) -> Vec<Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        write_checkpoint(path, Self::ARCH_TAG, &self.named_params())
    }

    pub fn load_from(&mut self, path: &std::path::Path) -> Result<()> {
        checkpoint::load_into(path, Self::ARCH_TAG, &self.named_params())
    }
}
