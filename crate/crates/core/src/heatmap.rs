//! K-channel structure heatmaps rendered from a weight-sorted mixture, and
//! the mean-squared-error loss used to score predicted heatmaps.
//!
//! Pixel `(i, j)` (row, column) sits at integer coordinates. With the
//! component mean `μ = [μx, μy]` and covariance `[[a, b], [b, c]]` in `(x, y)`
//! order, the squared Mahalanobis distance is evaluated as
//!
//! ```text
//! dx = j - μx,  dy = i - μy,  det = a*c - b*b
//! d² = (c*dx*dx - 2*b*dy*dx + a*dy*dy) / det
//! ```
//!
//! (left-associative products, in that order) and the pixel value is
//! `exp(-d²/2)` when `d² <= 9`, else exactly 0.

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::mixture::{GaussianComponent, GaussianMixture};

/// Three-sigma truncation on the squared Mahalanobis distance (inclusive).
pub const MAX_SQUARED_MAHALANOBIS: f64 = 9.0;

/// A `K x H x W` float32 stack, channel-major then row-major.
///
/// Generated targets always lie in `[0, 1]`; stacks holding externally
/// produced predictions are not range-checked.
#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapStack {
    channels: usize,
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl HeatmapStack {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
        let expected = channels * height * width;
        if values.len() != expected {
            return Err(Error::shape(
                format!("{channels}x{height}x{width} = {expected} values"),
                format!("{} values", values.len()),
            ));
        }
        Ok(HeatmapStack {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn channel(&self, k: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.values[k * n..(k + 1) * n]
    }

    pub fn is_in_unit_range(&self) -> bool {
        self.values.iter().all(|v| (0.0..=1.0).contains(v))
    }
}

/// Squared Mahalanobis distance of pixel `(row, col)` using the documented
/// evaluation order.
pub fn squared_mahalanobis(component: &GaussianComponent, row: usize, col: usize) -> f64 {
    let [[a, b], [_, c]] = component.covariance;
    let det = a * c - b * b;
    let dx = col as f64 - component.mean[0];
    let dy = row as f64 - component.mean[1];
    (c * dx * dx - 2.0 * b * dy * dx + a * dy * dy) / det
}

/// Truncated, unnormalised Gaussian for one component.
pub fn component_heatmap(
    component: &GaussianComponent,
    height: usize,
    width: usize,
) -> Result<Grid<f64>> {
    if !component.is_spd() || !component.mean.iter().all(|v| v.is_finite()) {
        return Err(Error::NotPositiveDefinite { component: 0 });
    }
    let [[a, b], [_, c]] = component.covariance;
    let det = a * c - b * b;
    let mut out = Grid::filled(height, width, 0.0);
    let values = out.as_mut_slice();
    for i in 0..height {
        let dy = i as f64 - component.mean[1];
        let two_b_dy = 2.0 * b * dy;
        let a_dy2 = a * dy * dy;
        let row = &mut values[i * width..(i + 1) * width];
        for (j, v) in row.iter_mut().enumerate() {
            let dx = j as f64 - component.mean[0];
            let d2 = (c * dx * dx - two_b_dy * dx + a_dy2) / det;
            if d2 <= MAX_SQUARED_MAHALANOBIS {
                *v = (-0.5 * d2).exp();
            }
        }
    }
    Ok(out)
}

/// Renders every component of a weight-sorted mixture, channel `k` from
/// component `k`.
pub fn heatmap_stack(mixture: &GaussianMixture, height: usize, width: usize) -> Result<HeatmapStack> {
    if !mixture.is_sorted() {
        return Err(Error::UnsortedMixture);
    }
    let mut values = Vec::with_capacity(mixture.len() * height * width);
    for (k, comp) in mixture.components.iter().enumerate() {
        let map = component_heatmap(comp, height, width).map_err(|e| match e {
            Error::NotPositiveDefinite { .. } => Error::NotPositiveDefinite { component: k },
            other => other,
        })?;
        values.extend(map.as_slice().iter().map(|&v| v as f32));
    }
    HeatmapStack::new(mixture.len(), height, width, values)
}

/// Renders at `1/factor` resolution: output pixel `(i, j)` samples input
/// coordinate `(i * factor, j * factor)`, so means shrink by `factor` and
/// covariances by `factor²`. Output dims are `ceil(dim / factor)`.
pub fn heatmap_stack_downsampled(
    mixture: &GaussianMixture,
    height: usize,
    width: usize,
    factor: usize,
) -> Result<HeatmapStack> {
    if factor == 0 {
        return Err(Error::InvalidConfig("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return heatmap_stack(mixture, height, width);
    }
    let f = factor as f64;
    let scaled = GaussianMixture::new(
        mixture
            .components
            .iter()
            .map(|c| {
                let mut c = c.clone();
                c.mean = [c.mean[0] / f, c.mean[1] / f];
                for row in &mut c.covariance {
                    for v in row {
                        *v /= f * f;
                    }
                }
                c
            })
            .collect(),
    );
    heatmap_stack(&scaled, height.div_ceil(factor), width.div_ceil(factor))
}

/// `(1/K) Σ_k mean_pixels (target_k - prediction_k)²`, accumulated in f64.
pub fn pgssl_loss(target: &HeatmapStack, prediction: &HeatmapStack) -> Result<f64> {
    if target.shape() != prediction.shape() {
        return Err(Error::shape(
            format!("{:?}", target.shape()),
            format!("{:?}", prediction.shape()),
        ));
    }
    let (k, h, w) = target.shape();
    if k == 0 || h * w == 0 {
        return Err(Error::shape("non-empty stack", format!("{:?}", target.shape())));
    }
    let per_channel = (h * w) as f64;
    let total: f64 = (0..k)
        .map(|c| {
            target
                .channel(c)
                .iter()
                .zip(prediction.channel(c))
                .map(|(&t, &p)| {
                    let d = f64::from(t) - f64::from(p);
                    d * d
                })
                .sum::<f64>()
                / per_channel
        })
        .sum();
    Ok(total / k as f64)
}
