use ndarray::{Array2, Axis};

use super::ops::{cross_attention, cross_attention_backward, pooled_compress, resample_backward, resample_features, Attention, PooledTokens};
use super::{FeatureMap, FusionParams};
use crate::error::{Error, Result};

/// Gradients of `Σ upstream ⊙ pgfe_forward(..)` w.r.t. every parameter and
/// both inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionGradients {
    pub params: FusionParams,
    pub f_n: FeatureMap,
    pub f_p: FeatureMap,
}

/// `C x H x W` -> `(H·W) x C`, one row per position.
fn to_positions(f: &FeatureMap) -> Array2<f64> {
    let (c, h, w) = f.dim();
    f.view()
        .into_shape_with_order((c, h * w))
        .expect("contiguous feature map")
        .t()
        .to_owned()
}

fn from_positions(m: &Array2<f64>, h: usize, w: usize) -> FeatureMap {
    let c = m.ncols();
    m.t()
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((c, h, w))
        .expect("position count matches")
}

fn tokens_to_map(tokens: &Array2<f64>, grid: (usize, usize)) -> FeatureMap {
    from_positions(tokens, grid.0, grid.1)
}

fn check_inputs(f_n: &FeatureMap, f_p: &FeatureMap, params: &FusionParams, window: usize) -> Result<()> {
    params.validate()?;
    if window == 0 {
        return Err(Error::InvalidConfig("pooling window must be >= 1".into()));
    }
    let (c, h, w) = f_n.dim();
    let (cp, hp, wp) = f_p.dim();
    if c != params.channels() || h == 0 || w == 0 {
        return Err(Error::shape(
            format!("neck features with {} channels", params.channels()),
            format!("{c}x{h}x{w}"),
        ));
    }
    if cp != params.physics_channels() || hp == 0 || wp == 0 {
        return Err(Error::shape(
            format!("physics features with {} channels", params.physics_channels()),
            format!("{cp}x{hp}x{wp}"),
        ));
    }
    if !f_n.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("neck features"));
    }
    if !f_p.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("physics features"));
    }
    Ok(())
}

/// Intermediate values of one forward evaluation.
struct Tape {
    lambda: f64,
    dims: (usize, usize, usize),
    physics_dims: (usize, usize),
    physics_pos: Array2<f64>,
    projected: FeatureMap,
    neck_pool: PooledTokens,
    query_pool: PooledTokens,
    attention: Attention,
    upsampled_pos: Array2<f64>,
    linear_pos: Array2<f64>,
    neck_pos: Array2<f64>,
    temp_pos: Array2<f64>,
    pre_act: Array2<f64>,
    hidden: Array2<f64>,
    ffn_pos: Array2<f64>,
    output_pos: Array2<f64>,
}

fn forward_tape(f_n: &FeatureMap, f_p: &FeatureMap, p: &FusionParams, window: usize) -> Tape {
    let (c, h, w) = f_n.dim();
    let (_, hp, wp) = f_p.dim();
    let lambda = p.lambda.clamp(0.0, 1.0);

    let physics_pos = to_positions(&resample_features(f_p, h, w));
    let projected = from_positions(&physics_pos.dot(&p.w_query), h, w);

    let neck_pool = pooled_compress(f_n, lambda, window);
    let query_pool = pooled_compress(&projected, lambda, window);
    let attention = cross_attention(
        query_pool.tokens.view(),
        neck_pool.tokens.view(),
        neck_pool.tokens.view(),
        c as f64,
    );

    let att_map = tokens_to_map(&attention.output, neck_pool.grid());
    let upsampled_pos = to_positions(&resample_features(&att_map, h, w));
    let linear_pos = upsampled_pos.dot(&p.w_linear) + &p.b_linear;
    let neck_pos = to_positions(f_n);
    let temp_pos = &linear_pos * p.beta + &neck_pos * p.alpha;

    let pre_act = temp_pos.dot(&p.w_ffn1) + &p.b_ffn1;
    let hidden = pre_act.mapv(|v| v.max(0.0));
    let ffn_pos = hidden.dot(&p.w_ffn2) + &p.b_ffn2;
    let output_pos = &ffn_pos * p.delta + &temp_pos * p.gamma;

    Tape {
        lambda,
        dims: (c, h, w),
        physics_dims: (hp, wp),
        physics_pos,
        projected,
        neck_pool,
        query_pool,
        attention,
        upsampled_pos,
        linear_pos,
        neck_pos,
        temp_pos,
        pre_act,
        hidden,
        ffn_pos,
        output_pos,
    }
}

/// Enhances neck features `f_n` (`C x H x W`) with physics-aware features
/// `f_p` (`C_P x H_P x W_P`). The output has the shape of `f_n`.
pub fn pgfe_forward(
    f_n: &FeatureMap,
    f_p: &FeatureMap,
    params: &FusionParams,
    window: usize,
) -> Result<FeatureMap> {
    check_inputs(f_n, f_p, params, window)?;
    let tape = forward_tape(f_n, f_p, params, window);
    let (_, h, w) = tape.dims;
    Ok(from_positions(&tape.output_pos, h, w))
}

/// Reverse-mode gradients of `Σ upstream ⊙ pgfe_forward(f_n, f_p, params)`.
///
/// Subgradient conventions: each max-pool routes to the first maximal
/// element in row-major order, the rectifier has derivative 0 at 0, and the
/// λ clamp passes gradient only inside `[0, 1]`.
pub fn pgfe_grad(
    f_n: &FeatureMap,
    f_p: &FeatureMap,
    params: &FusionParams,
    window: usize,
    upstream: &FeatureMap,
) -> Result<FusionGradients> {
    check_inputs(f_n, f_p, params, window)?;
    if upstream.dim() != f_n.dim() {
        return Err(Error::shape(
            format!("upstream {:?}", f_n.dim()),
            format!("{:?}", upstream.dim()),
        ));
    }
    let t = forward_tape(f_n, f_p, params, window);
    let p = params;
    let (c, h, w) = t.dims;
    let mut g = p.zeros_like();

    let d_out = to_positions(upstream);
    g.delta = (&d_out * &t.ffn_pos).sum();
    g.gamma = (&d_out * &t.temp_pos).sum();

    // FFN
    let d_ffn = &d_out * p.delta;
    g.w_ffn2 = t.hidden.t().dot(&d_ffn);
    g.b_ffn2 = d_ffn.sum_axis(Axis(0));
    let mut d_pre = d_ffn.dot(&p.w_ffn2.t());
    ndarray::Zip::from(&mut d_pre)
        .and(&t.pre_act)
        .for_each(|d, &u| {
            if u <= 0.0 {
                *d = 0.0;
            }
        });
    g.w_ffn1 = t.temp_pos.t().dot(&d_pre);
    g.b_ffn1 = d_pre.sum_axis(Axis(0));
    let d_temp = &d_out * p.gamma + d_pre.dot(&p.w_ffn1.t());

    // residual mix
    g.beta = (&d_temp * &t.linear_pos).sum();
    g.alpha = (&d_temp * &t.neck_pos).sum();
    let mut d_neck_pos = &d_temp * p.alpha;
    let d_linear = &d_temp * p.beta;
    g.w_linear = t.upsampled_pos.t().dot(&d_linear);
    g.b_linear = d_linear.sum_axis(Axis(0));
    let d_upsampled = d_linear.dot(&p.w_linear.t());

    // back onto the token grid
    let grid = t.neck_pool.grid();
    let d_att_map = resample_backward(&from_positions(&d_upsampled, h, w), grid.0, grid.1);
    let d_att = to_positions(&d_att_map);

    let (d_q, d_k, d_v) = cross_attention_backward(
        &t.attention,
        d_att.view(),
        t.query_pool.tokens.view(),
        t.neck_pool.tokens.view(),
        t.neck_pool.tokens.view(),
        c as f64,
    );

    let d_kv = d_k + d_v;
    let (d_neck_from_pool, d_lambda_n) = t.neck_pool.backward(d_kv.view(), t.lambda, h, w);
    let (d_projected, d_lambda_q) = t.query_pool.backward(d_q.view(), t.lambda, h, w);
    debug_assert_eq!(d_projected.dim(), t.projected.dim());
    let clamp_open = (0.0..=1.0).contains(&p.lambda);
    g.lambda = if clamp_open { d_lambda_n + d_lambda_q } else { 0.0 };
    d_neck_pos += &to_positions(&d_neck_from_pool);

    // query projection and physics resampling
    let d_proj_pos = to_positions(&d_projected);
    g.w_query = t.physics_pos.t().dot(&d_proj_pos);
    let d_physics_pos = d_proj_pos.dot(&p.w_query.t());
    let (hp, wp) = t.physics_dims;
    let d_f_p = resample_backward(&from_positions(&d_physics_pos, h, w), hp, wp);

    Ok(FusionGradients {
        params: g,
        f_n: from_positions(&d_neck_pos, h, w),
        f_p: d_f_p,
    })
}
