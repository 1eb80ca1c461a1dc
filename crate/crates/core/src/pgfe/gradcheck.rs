//! Central finite-difference verification of [`pgfe_grad`].
//!
//! The numeric side only calls [`pgfe_forward`], so it checks the analytic
//! gradients against an independent route.

use ndarray::Array3;

use super::{pgfe_forward, pgfe_grad, FeatureMap, FusionParams};
use crate::error::Result;
use crate::rng::SplitMix64;

pub const FD_STEP: f64 = 1e-5;
/// Entries with both gradients below this magnitude are compared on an
/// absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// One randomised problem.
#[derive(Clone, Debug)]
pub struct GradInstance {
    pub f_n: FeatureMap,
    pub f_p: FeatureMap,
    pub params: FusionParams,
    pub window: usize,
    pub upstream: FeatureMap,
}

impl GradInstance {
    /// Random instance with `C` neck channels on an `h x w` grid and `C_P`
    /// physics channels on a `ph x pw` grid. Values are uniform in `[-1, 1]`,
    /// λ in `[0.2, 0.8]`, the residual scalars in `[0.5, 1.5]`.
    pub fn random(
        seed: u64,
        channels: usize,
        (h, w): (usize, usize),
        physics_channels: usize,
        (ph, pw): (usize, usize),
        window: usize,
    ) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut sym = move || 2.0 * rng.next_f64() - 1.0;
        let f_n = Array3::from_shape_fn((channels, h, w), |_| sym());
        let f_p = Array3::from_shape_fn((physics_channels, ph, pw), |_| sym());
        let upstream = Array3::from_shape_fn((channels, h, w), |_| sym());
        let base = FusionParams::init(physics_channels, channels, seed ^ 0x5eed);
        let mut flat = base.flatten();
        let mut rng = SplitMix64::new(seed.wrapping_mul(31).wrapping_add(7));
        // perturb biases away from zero so their paths are exercised
        for v in flat.iter_mut().skip(5) {
            *v += 0.2 * (2.0 * rng.next_f64() - 1.0);
        }
        flat[0] = 0.2 + 0.6 * rng.next_f64();
        for v in flat.iter_mut().take(5).skip(1) {
            *v = 0.5 + rng.next_f64();
        }
        let params = base.unflatten(&flat);
        GradInstance {
            f_n,
            f_p,
            params,
            window,
            upstream,
        }
    }

    /// The configuration used by the acceptance criterion: `C = 3`,
    /// `H = W = 4`, window 2, two physics channels on a 3x3 grid.
    pub fn standard(seed: u64) -> Self {
        GradInstance::random(seed, 3, (4, 4), 2, (3, 3), 2)
    }

    fn objective(&self, f_n: &FeatureMap, f_p: &FeatureMap, params: &FusionParams) -> Result<f64> {
        let out = pgfe_forward(f_n, f_p, params, self.window)?;
        Ok((&out * &self.upstream).sum())
    }
}

/// Worst disagreement found in one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub worst_entry: String,
    pub analytic: f64,
    pub numeric: f64,
    pub entries: usize,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

fn central_difference(mut eval: impl FnMut(f64) -> Result<f64>, x: f64, step: f64) -> Result<f64> {
    Ok((eval(x + step)? - eval(x - step)?) / (2.0 * step))
}

/// Compares every analytic gradient entry with a central difference of
/// step `step`.
pub fn check_instance(inst: &GradInstance, step: f64) -> Result<GradReport> {
    let grads = pgfe_grad(&inst.f_n, &inst.f_p, &inst.params, inst.window, &inst.upstream)?;
    let mut report = GradReport {
        max_rel_error: 0.0,
        worst_entry: String::new(),
        analytic: 0.0,
        numeric: 0.0,
        entries: 0,
    };
    let mut record = |name: String, a: f64, n: f64| {
        let e = relative_error(a, n);
        report.entries += 1;
        if e > report.max_rel_error || report.worst_entry.is_empty() {
            report.max_rel_error = e;
            report.worst_entry = name;
            report.analytic = a;
            report.numeric = n;
        }
    };

    let flat = inst.params.flatten();
    let analytic = grads.params.flatten();
    for i in 0..flat.len() {
        let n = central_difference(
            |v| {
                let mut probe = flat.clone();
                probe[i] = v;
                inst.objective(&inst.f_n, &inst.f_p, &inst.params.unflatten(&probe))
            },
            flat[i],
            step,
        )?;
        record(inst.params.entry_name(i), analytic[i], n);
    }
    for (idx, &x) in inst.f_n.indexed_iter() {
        let n = central_difference(
            |v| {
                let mut probe = inst.f_n.clone();
                probe[idx] = v;
                inst.objective(&probe, &inst.f_p, &inst.params)
            },
            x,
            step,
        )?;
        record(format!("f_n{idx:?}"), grads.f_n[idx], n);
    }
    for (idx, &x) in inst.f_p.indexed_iter() {
        let n = central_difference(
            |v| {
                let mut probe = inst.f_p.clone();
                probe[idx] = v;
                inst.objective(&inst.f_n, &probe, &inst.params)
            },
            x,
            step,
        )?;
        record(format!("f_p{idx:?}"), grads.f_p[idx], n);
    }
    Ok(report)
}

/// Checks `count` standard instances with seeds `seed, seed + 1, ...`.
pub fn run_suite(seed: u64, count: usize) -> Result<Vec<GradReport>> {
    (0..count as u64)
        .map(|i| check_instance(&GradInstance::standard(seed.wrapping_add(i)), FD_STEP))
        .collect()
}
