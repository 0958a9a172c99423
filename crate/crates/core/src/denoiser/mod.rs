//! Residual convolutional denoiser for log-power spectrogram patches.
//!
//! The network estimates the noise component of a patch; the denoised patch
//! is the input minus that estimate. Inputs are mapped to network range with
//! `(P - shift_db) / scale_db` and the output is multiplied by `scale_db`
//! only, so an all-zero network predicts a 0 dB residual.

mod conv;
mod grad;
mod train;

pub use grad::{gradients, Gradients};
pub use train::{train_denoiser, EpochLog, PatchPair, TrainConfig, TrainedDenoiser};

use std::fmt::Debug;
use std::iter::Sum;
use std::path::Path;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{meta_field, Container};
use crate::dsp::{assemble_patches, split_patches, Matrix, Origin, PatchGrid, Spectrogram};
use crate::error::{Error, Result};

pub const DEFAULT_SHIFT_DB: f64 = -60.0;
pub const DEFAULT_SCALE_DB: f64 = 60.0;
const CONTAINER_KIND: &str = "denoiser";

/// Floating-point type the network computes in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
}
impl Scalar for f32 {}
impl Scalar for f64 {}

#[inline]
pub(crate) fn cast<T: Scalar>(v: f64) -> T {
    T::from_f64(v).expect("finite cast")
}

/// Depth and width of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserArch {
    pub depth: usize,
    pub channels: usize,
    pub patch_side: usize,
}

impl Default for DenoiserArch {
    fn default() -> Self {
        DenoiserArch {
            depth: 8,
            channels: 32,
            patch_side: 256,
        }
    }
}

impl DenoiserArch {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 || self.channels < 1 || self.patch_side < 1 {
            return Err(Error::BadConfig(
                "denoiser depth, channels and patch side must be positive".into(),
            ));
        }
        Ok(())
    }

    /// (input, output) channels of each layer.
    pub fn layer_channels(&self) -> Vec<(usize, usize)> {
        if self.depth == 1 {
            return vec![(1, 1)];
        }
        (0..self.depth)
            .map(|l| {
                let cin = if l == 0 { 1 } else { self.channels };
                let cout = if l + 1 == self.depth { 1 } else { self.channels };
                (cin, cout)
            })
            .collect()
    }
}

/// One 3x3 convolution. Weights are laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub in_ch: usize,
    pub out_ch: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        ConvLayer {
            in_ch,
            out_ch,
            weights: vec![T::zero(); out_ch * in_ch * 9],
            bias: vec![T::zero(); out_ch],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserModel<T: Scalar = f32> {
    pub layers: Vec<ConvLayer<T>>,
    pub arch: DenoiserArch,
    pub shift_db: f64,
    pub scale_db: f64,
    pub training_seed: u64,
    pub epochs_trained: usize,
}

impl<T: Scalar> DenoiserModel<T> {
    pub fn zeros(arch: DenoiserArch) -> Self {
        let layers = arch
            .layer_channels()
            .into_iter()
            .map(|(i, o)| ConvLayer::zeros(i, o))
            .collect();
        DenoiserModel {
            layers,
            arch,
            shift_db: DEFAULT_SHIFT_DB,
            scale_db: DEFAULT_SCALE_DB,
            training_seed: 0,
            epochs_trained: 0,
        }
    }

    /// He-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn init(arch: DenoiserArch, seed: u64) -> Self {
        let mut model = Self::zeros(arch);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let bound = (6.0 / (layer.in_ch * 9) as f64).sqrt();
            for w in &mut layer.weights {
                *w = cast(rng.random_range(-bound..bound));
            }
        }
        model.training_seed = seed;
        model
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters in storage order: per layer, weights then biases.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, params: &[T]) {
        let mut i = 0;
        for l in &mut self.layers {
            let n = l.weights.len();
            l.weights.copy_from_slice(&params[i..i + n]);
            i += n;
            let n = l.bias.len();
            l.bias.copy_from_slice(&params[i..i + n]);
            i += n;
        }
    }

    pub fn cast<U: Scalar>(&self) -> DenoiserModel<U> {
        let conv = |v: &[T]| v.iter().map(|x| cast::<U>(x.to_f64().unwrap())).collect();
        DenoiserModel {
            layers: self
                .layers
                .iter()
                .map(|l| ConvLayer {
                    in_ch: l.in_ch,
                    out_ch: l.out_ch,
                    weights: conv(&l.weights),
                    bias: conv(&l.bias),
                })
                .collect(),
            arch: self.arch,
            shift_db: self.shift_db,
            scale_db: self.scale_db,
            training_seed: self.training_seed,
            epochs_trained: self.epochs_trained,
        }
    }

    pub(crate) fn normalize_input(&self, patch: &Matrix) -> Vec<T> {
        let inv = 1.0 / self.scale_db;
        patch
            .as_slice()
            .iter()
            .map(|&v| cast((v - self.shift_db) * inv))
            .collect()
    }

    /// Runs the network on a normalized single-channel plane. When
    /// `activations` is given it receives the input of every layer.
    pub(crate) fn run(
        &self,
        input: Vec<T>,
        h: usize,
        w: usize,
        mut activations: Option<&mut Vec<Vec<T>>>,
    ) -> Vec<T> {
        let hw = h * w;
        let mut x = input;
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = vec![T::zero(); layer.out_ch * hw];
            conv::forward(
                &x,
                layer.in_ch,
                &layer.weights,
                &layer.bias,
                layer.out_ch,
                h,
                w,
                &mut y,
            );
            if l != last {
                for v in &mut y {
                    if *v < T::zero() {
                        *v = T::zero();
                    }
                }
            }
            match activations.as_deref_mut() {
                Some(acts) => acts.push(std::mem::replace(&mut x, y)),
                None => x = y,
            }
        }
        x
    }

    fn check_patch(&self, patch: &Matrix) -> Result<()> {
        let side = self.arch.patch_side;
        if patch.shape() != (side, side) {
            return Err(Error::ShapeMismatch(format!(
                "patch is {}x{}, model expects {side}x{side}",
                patch.rows(),
                patch.cols()
            )));
        }
        Ok(())
    }

    /// Estimated noise residual of a patch, in dB.
    pub fn forward(&self, patch: &Matrix) -> Result<Matrix> {
        self.check_patch(patch)?;
        let (h, w) = patch.shape();
        let out = self.run(self.normalize_input(patch), h, w, None);
        let data = out
            .into_iter()
            .map(|v| v.to_f64().unwrap() * self.scale_db)
            .collect();
        Matrix::from_vec(h, w, data)
    }

    /// `patch - forward(patch)`, clamped to `floor_db`.
    pub fn denoise_patch(&self, patch: &Matrix, floor_db: f64) -> Result<Matrix> {
        let residual = self.forward(patch)?;
        let data = patch
            .as_slice()
            .iter()
            .zip(residual.as_slice())
            .map(|(p, r)| {
                let v = p - r;
                if v < floor_db || v.is_nan() {
                    floor_db
                } else {
                    v
                }
            })
            .collect();
        Matrix::from_vec(patch.rows(), patch.cols(), data)
    }

    /// Denoises every full patch of `spec`; trailing frames that do not fill
    /// a patch are passed through unchanged.
    pub fn denoise_spectrogram(&self, spec: &Spectrogram) -> Result<Spectrogram> {
        let (grid, remainder) = split_patches(spec)?;
        let patches = grid
            .patches
            .iter()
            .map(|p| self.denoise_patch(p, spec.floor_db))
            .collect::<Result<Vec<_>>>()?;
        let denoised = PatchGrid { patches, ..grid };
        let mut out = assemble_patches(&denoised, &remainder)?;
        out.origin = Origin::Denoised;
        Ok(out)
    }
}

impl DenoiserModel<f32> {
    pub fn to_container(&self) -> Container {
        let meta = json!({
            "format_version": 1,
            "depth": self.arch.depth,
            "channels": self.arch.channels,
            "patch_side": self.arch.patch_side,
            "shift_db": self.shift_db,
            "scale_db": self.scale_db,
            "training_seed": self.training_seed,
            "epochs": self.epochs_trained,
        });
        let mut c = Container::new(CONTAINER_KIND, meta);
        for (i, l) in self.layers.iter().enumerate() {
            c.push(
                format!("layer{i}.weight"),
                vec![l.out_ch, l.in_ch, 3, 3],
                l.weights.clone(),
            );
            c.push(format!("layer{i}.bias"), vec![l.out_ch], l.bias.clone());
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let arch = DenoiserArch {
            depth: meta_field(&c.meta, "depth")?,
            channels: meta_field(&c.meta, "channels")?,
            patch_side: meta_field(&c.meta, "patch_side")?,
        };
        arch.validate()?;
        let mut model = DenoiserModel::<f32>::zeros(arch);
        model.shift_db = meta_field(&c.meta, "shift_db")?;
        model.scale_db = meta_field(&c.meta, "scale_db")?;
        model.training_seed = meta_field(&c.meta, "training_seed")?;
        model.epochs_trained = meta_field(&c.meta, "epochs")?;
        for (i, l) in model.layers.iter_mut().enumerate() {
            let (_, w) = c.require(&format!("layer{i}.weight"))?;
            let (_, b) = c.require(&format!("layer{i}.bias"))?;
            if w.len() != l.weights.len() || b.len() != l.bias.len() {
                return Err(Error::ShapeMismatch(format!("layer {i} parameter count")));
            }
            l.weights.copy_from_slice(w);
            l.bias.copy_from_slice(b);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path, CONTAINER_KIND)?)
    }
}
