//! Physics-guided feature enhancement: a single-head cross-attention block
//! in which pooled physics-aware features query pooled neck features.
//!
//! ```text
//! P      = Resample(F_P → H×W) · W_q                 (per position)
//! K = V  = λ·AvgPool(F_N) + (1-λ)·MaxPool(F_N)       (window tokens)
//! Q      = λ·AvgPool(P)   + (1-λ)·MaxPool(P)
//! Z_att  = Softmax(Q Kᵀ / √C) · V
//! Z_temp = β·Linear(Resample(Z_att → H×W)) + α·F_N
//! F_E    = δ·FFN(Z_temp) + γ·Z_temp,   FFN(z) = max(0, z W₁ + b₁) W₂ + b₂
//! ```
//!
//! λ is clamped to `[0, 1]` in the forward pass; its gradient is zero while it
//! sits outside that interval.

mod block;
pub mod gradcheck;
mod io;
mod ops;

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

pub use block::{pgfe_forward, pgfe_grad, FusionGradients};
pub use io::{decode_params, encode_params, load_params, save_params};
pub use ops::{
    cross_attention, pooled_compress, resample_features, Attention, PooledTokens,
};

/// `C x H x W` feature map.
pub type FeatureMap = Array3<f64>;

/// All learnable quantities of the block. Matrices act on row vectors:
/// `y = x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    /// `C_P x C`, projects physics features onto the neck channels.
    pub w_query: Array2<f64>,
    /// `C x C`
    pub w_linear: Array2<f64>,
    pub b_linear: Array1<f64>,
    /// `C x C_h`
    pub w_ffn1: Array2<f64>,
    pub b_ffn1: Array1<f64>,
    /// `C_h x C`
    pub w_ffn2: Array2<f64>,
    pub b_ffn2: Array1<f64>,
}

/// Names of the scalar entries in [`FusionParams::flatten`] order.
pub const SCALAR_NAMES: [&str; 5] = ["lambda", "alpha", "beta", "gamma", "delta"];
/// Names of the array blocks in [`FusionParams::flatten`] order.
pub const BLOCK_NAMES: [&str; 7] = [
    "w_query", "w_linear", "b_linear", "w_ffn1", "b_ffn1", "w_ffn2", "b_ffn2",
];

impl FusionParams {
    /// Starts near the bypass identity (`α = γ = δ = 1`, `β = 0.1`,
    /// `λ = 0.5`) with Glorot-uniform weights, zero biases and hidden width
    /// `2C`.
    pub fn init(physics_channels: usize, channels: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let hidden = 2 * channels;
        let mut glorot = |rows: usize, cols: usize| {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_fn((rows, cols), |_| a * (2.0 * rng.next_f64() - 1.0))
        };
        FusionParams {
            lambda: 0.5,
            alpha: 1.0,
            beta: 0.1,
            gamma: 1.0,
            delta: 1.0,
            w_query: glorot(physics_channels, channels),
            w_linear: glorot(channels, channels),
            b_linear: Array1::zeros(channels),
            w_ffn1: glorot(channels, hidden),
            b_ffn1: Array1::zeros(hidden),
            w_ffn2: glorot(hidden, channels),
            b_ffn2: Array1::zeros(channels),
        }
    }

    /// All-zero parameters with the same shapes as `self`.
    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        FusionParams {
            lambda: 0.0,
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
            w_query: z2(&self.w_query),
            w_linear: z2(&self.w_linear),
            b_linear: z1(&self.b_linear),
            w_ffn1: z2(&self.w_ffn1),
            b_ffn1: z1(&self.b_ffn1),
            w_ffn2: z2(&self.w_ffn2),
            b_ffn2: z1(&self.b_ffn2),
        }
    }

    pub fn physics_channels(&self) -> usize {
        self.w_query.nrows()
    }

    pub fn channels(&self) -> usize {
        self.w_linear.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.w_ffn1.ncols()
    }

    /// Checks that all blocks agree on `C_P`, `C` and `C_h` and hold finite
    /// values.
    pub fn validate(&self) -> Result<()> {
        let (cp, c, ch) = (self.physics_channels(), self.channels(), self.hidden());
        let shapes_ok = self.w_query.dim() == (cp, c)
            && self.w_linear.dim() == (c, c)
            && self.b_linear.len() == c
            && self.w_ffn1.dim() == (c, ch)
            && self.b_ffn1.len() == ch
            && self.w_ffn2.dim() == (ch, c)
            && self.b_ffn2.len() == c;
        if !shapes_ok || cp == 0 || c == 0 || ch == 0 {
            return Err(Error::shape(
                format!("consistent C_P={cp}, C={c}, C_h={ch}"),
                "mismatched parameter blocks",
            ));
        }
        if !self.flatten().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("fusion parameters"));
        }
        Ok(())
    }

    /// Scalars followed by every block in row-major order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = vec![self.lambda, self.alpha, self.beta, self.gamma, self.delta];
        for block in self.blocks() {
            out.extend(block.iter());
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten), taking shapes from `self`.
    pub fn unflatten(&self, flat: &[f64]) -> Self {
        let mut out = self.clone();
        assert_eq!(flat.len(), self.flatten().len(), "flat parameter length");
        let mut it = flat.iter().copied();
        out.lambda = it.next().unwrap();
        out.alpha = it.next().unwrap();
        out.beta = it.next().unwrap();
        out.gamma = it.next().unwrap();
        out.delta = it.next().unwrap();
        for block in out.blocks_mut() {
            for v in block {
                *v = it.next().unwrap();
            }
        }
        out
    }

    /// Human-readable name of flat entry `i`.
    pub fn entry_name(&self, i: usize) -> String {
        if i < SCALAR_NAMES.len() {
            return SCALAR_NAMES[i].to_string();
        }
        let mut offset = SCALAR_NAMES.len();
        for (name, len) in BLOCK_NAMES.iter().zip(self.blocks().map(|b| b.len())) {
            if i < offset + len {
                return format!("{name}[{}]", i - offset);
            }
            offset += len;
        }
        format!("entry[{i}]")
    }

    pub(crate) fn blocks(&self) -> impl Iterator<Item = ndarray::ArrayViewD<'_, f64>> {
        [
            self.w_query.view().into_dyn(),
            self.w_linear.view().into_dyn(),
            self.b_linear.view().into_dyn(),
            self.w_ffn1.view().into_dyn(),
            self.b_ffn1.view().into_dyn(),
            self.w_ffn2.view().into_dyn(),
            self.b_ffn2.view().into_dyn(),
        ]
        .into_iter()
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = ndarray::ArrayViewMutD<'_, f64>> {
        [
            self.w_query.view_mut().into_dyn(),
            self.w_linear.view_mut().into_dyn(),
            self.b_linear.view_mut().into_dyn(),
            self.w_ffn1.view_mut().into_dyn(),
            self.b_ffn1.view_mut().into_dyn(),
            self.w_ffn2.view_mut().into_dyn(),
            self.b_ffn2.view_mut().into_dyn(),
        ]
        .into_iter()
    }
}
