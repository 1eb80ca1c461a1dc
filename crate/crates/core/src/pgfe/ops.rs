//! Building blocks of the fusion block, each with its adjoint.

use ndarray::{Array2, Array3, ArrayView2, Axis};

use super::FeatureMap;

/// Source coordinate sampled by output index `dst` when resizing an axis of
/// length `src_len` to `dst_len` (half-pixel centres, "align corners off"):
///
/// `src = clamp((dst + 0.5) · src_len / dst_len - 0.5, 0, src_len - 1)`
///
/// Returns the two neighbouring taps and the fractional weight of the second.
fn axis_taps(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let src = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (src_len - 1) as f64);
    let i0 = src.floor() as usize;
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, src - i0 as f64)
}

#[inline]
fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + t * (b - a)
}

/// Bilinear resize of every channel to `target_h x target_w`. Equal dims
/// return an exact copy.
pub fn resample_features(f: &FeatureMap, target_h: usize, target_w: usize) -> FeatureMap {
    assert!(target_h >= 1 && target_w >= 1, "resample targets must be >= 1");
    let (c, h, w) = f.dim();
    if (h, w) == (target_h, target_w) {
        return f.clone();
    }
    let rows: Vec<_> = (0..target_h).map(|y| axis_taps(y, h, target_h)).collect();
    let cols: Vec<_> = (0..target_w).map(|x| axis_taps(x, w, target_w)).collect();
    Array3::from_shape_fn((c, target_h, target_w), |(ch, y, x)| {
        let (y0, y1, ty) = rows[y];
        let (x0, x1, tx) = cols[x];
        let top = lerp(f[[ch, y0, x0]], f[[ch, y0, x1]], tx);
        let bottom = lerp(f[[ch, y1, x0]], f[[ch, y1, x1]], tx);
        lerp(top, bottom, ty)
    })
}

/// Adjoint of [`resample_features`]: maps a gradient on the resized grid back
/// to the `src_h x src_w` grid.
pub(crate) fn resample_backward(grad: &FeatureMap, src_h: usize, src_w: usize) -> FeatureMap {
    let (c, th, tw) = grad.dim();
    if (th, tw) == (src_h, src_w) {
        return grad.clone();
    }
    let mut out = Array3::zeros((c, src_h, src_w));
    for y in 0..th {
        let (y0, y1, ty) = axis_taps(y, src_h, th);
        for x in 0..tw {
            let (x0, x1, tx) = axis_taps(x, src_w, tw);
            for ch in 0..c {
                let g = grad[[ch, y, x]];
                out[[ch, y0, x0]] += g * (1.0 - ty) * (1.0 - tx);
                out[[ch, y0, x1]] += g * (1.0 - ty) * tx;
                out[[ch, y1, x0]] += g * ty * (1.0 - tx);
                out[[ch, y1, x1]] += g * ty * tx;
            }
        }
    }
    out
}

/// Window tokens plus what the backward pass needs.
#[derive(Clone, Debug)]
pub struct PooledTokens {
    /// `T x C`, windows in row-major order.
    pub tokens: Array2<f64>,
    pub means: Array2<f64>,
    pub maxes: Array2<f64>,
    /// Flat `(y, x)` of the routed maximum per token and channel.
    argmax: Array2<(usize, usize)>,
    window: usize,
    grid: (usize, usize),
}

impl PooledTokens {
    /// Token grid `(ceil(H/window), ceil(W/window))`.
    pub fn grid(&self) -> (usize, usize) {
        self.grid
    }
}

/// Non-overlapping `window x window` pooling (edge windows may be partial):
/// `token = λ·mean + (1-λ)·max` per channel. The max routes to the first
/// maximal element in row-major scan order.
pub fn pooled_compress(f: &FeatureMap, lambda: f64, window: usize) -> PooledTokens {
    assert!(window >= 1, "window must be >= 1");
    let (c, h, w) = f.dim();
    let (gh, gw) = (h.div_ceil(window), w.div_ceil(window));
    let t = gh * gw;
    let mut means = Array2::zeros((t, c));
    let mut maxes = Array2::zeros((t, c));
    let mut argmax = Array2::from_elem((t, c), (0, 0));
    for ty in 0..gh {
        for tx in 0..gw {
            let tok = ty * gw + tx;
            let (y_end, x_end) = (((ty + 1) * window).min(h), ((tx + 1) * window).min(w));
            let n = ((y_end - ty * window) * (x_end - tx * window)) as f64;
            for ch in 0..c {
                let mut sum = 0.0;
                let mut best = f64::NEG_INFINITY;
                let mut at = (0, 0);
                for y in ty * window..y_end {
                    for x in tx * window..x_end {
                        let v = f[[ch, y, x]];
                        sum += v;
                        if v > best {
                            best = v;
                            at = (y, x);
                        }
                    }
                }
                means[[tok, ch]] = sum / n;
                maxes[[tok, ch]] = best;
                argmax[[tok, ch]] = at;
            }
        }
    }
    let tokens = &means * lambda + &maxes * (1.0 - lambda);
    PooledTokens {
        tokens,
        means,
        maxes,
        argmax,
        window,
        grid: (gh, gw),
    }
}

impl PooledTokens {
    /// Gradient w.r.t. the pooled map (shape `C x h x w`) and w.r.t. λ.
    pub(crate) fn backward(
        &self,
        grad: ArrayView2<'_, f64>,
        lambda: f64,
        h: usize,
        w: usize,
    ) -> (FeatureMap, f64) {
        let c = self.tokens.ncols();
        let (_, gw) = self.grid;
        let win = self.window;
        let mut out = Array3::zeros((c, h, w));
        for (tok, row) in grad.outer_iter().enumerate() {
            let (ty, tx) = (tok / gw, tok % gw);
            let (y_end, x_end) = (((ty + 1) * win).min(h), ((tx + 1) * win).min(w));
            let n = ((y_end - ty * win) * (x_end - tx * win)) as f64;
            for ch in 0..c {
                let g = row[ch];
                let share = g * lambda / n;
                for y in ty * win..y_end {
                    for x in tx * win..x_end {
                        out[[ch, y, x]] += share;
                    }
                }
                let (my, mx) = self.argmax[[tok, ch]];
                out[[ch, my, mx]] += g * (1.0 - lambda);
            }
        }
        let d_lambda = (&grad * &(&self.means - &self.maxes)).sum();
        (out, d_lambda)
    }
}

/// Attention output and the row-stochastic weight matrix.
#[derive(Clone, Debug)]
pub struct Attention {
    pub output: Array2<f64>,
    pub weights: Array2<f64>,
}

/// `Softmax(Q Kᵀ / √d_K) · V` with max-subtracted row softmax.
pub fn cross_attention(
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    d_k: f64,
) -> Attention {
    assert!(d_k > 0.0, "d_k must be positive");
    assert_eq!(q.ncols(), k.ncols(), "query/key width");
    assert_eq!(k.nrows(), v.nrows(), "key/value count");
    let mut weights = q.dot(&k.t()) / d_k.sqrt();
    for mut row in weights.axis_iter_mut(Axis(0)) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|s| (s - m).exp());
        let z = row.sum();
        row /= z;
    }
    let output = weights.dot(&v);
    Attention { output, weights }
}

/// Gradients of [`cross_attention`] w.r.t. `(Q, K, V)`.
pub(crate) fn cross_attention_backward(
    att: &Attention,
    grad_out: ArrayView2<'_, f64>,
    q: ArrayView2<'_, f64>,
    k: ArrayView2<'_, f64>,
    v: ArrayView2<'_, f64>,
    d_k: f64,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let a = &att.weights;
    let d_a = grad_out.dot(&v.t());
    let d_v = a.t().dot(&grad_out);
    let row_dot = (&d_a * a).sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_s = a * &(&d_a - &row_dot) / d_k.sqrt();
    let d_q = d_s.dot(&k);
    let d_k_mat = d_s.t().dot(&q);
    (d_q, d_k_mat, d_v)
}
