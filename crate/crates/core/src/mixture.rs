//! Scattering-structure distribution: a 2-D Gaussian mixture over point
//! coordinates fitted by EM, with the small-cluster ("singular") replacement
//! rule and canonical weight ordering.
//!
//! The covariance M-step maximises the expected complete-data likelihood
//! subject to both eigenvalues being at least `reg_eps`, which amounts to
//! raising small eigenvalues of the weighted scatter matrix to `reg_eps`.
//! Because the previous parameters are always feasible, every iteration is a
//! proper EM step and the log-likelihood never decreases.
//!
//! Coordinates are `[x, y]` (column, row). Covariances are stored in the same
//! order: `[[var_x, cov_xy], [cov_xy, var_y]]`.

use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;
use crate::scattering::ScatterPointSet;

pub type Vec2 = [f64; 2];
pub type Mat2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec2,
    #[serde(rename = "cov")]
    pub covariance: Mat2,
    pub count: usize,
    pub singular: bool,
}

impl GaussianComponent {
    /// `ln N(p | mean, covariance)` including the normalisation constant.
    pub fn log_density(&self, p: Vec2) -> f64 {
        log_normal(p, self.mean, &self.covariance)
    }

    pub fn is_spd(&self) -> bool {
        let [[a, b], [b2, c]] = self.covariance;
        a.is_finite() && b.is_finite() && c.is_finite() && b == b2 && a > 0.0 && a * c - b * b > 0.0
    }
}

/// Smaller eigenvalue of a symmetric 2x2 matrix.
pub fn min_eigenvalue(m: &Mat2) -> f64 {
    let [[a, b], [_, c]] = *m;
    let mid = (a + c) / 2.0;
    let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    mid - rad
}

/// Closest symmetric matrix (in the Gaussian likelihood sense) with both
/// eigenvalues at least `floor`: eigenvalues below `floor` are raised to it,
/// eigenvectors are kept. Matrices already above the floor are returned
/// unchanged.
pub fn floor_eigenvalues(m: &Mat2, floor: f64) -> Mat2 {
    let [[a, b], [_, c]] = *m;
    if b == 0.0 {
        return [[a.max(floor), 0.0], [0.0, c.max(floor)]];
    }
    let mid = (a + c) / 2.0;
    let rad = (((a - c) / 2.0).powi(2) + b * b).sqrt();
    let (hi, lo) = (mid + rad, mid - rad);
    if lo >= floor {
        return *m;
    }
    // unit eigenvector of `hi`, from whichever row is better conditioned
    let (vx, vy) = if a >= c { (hi - c, b) } else { (b, hi - a) };
    let norm = vx.hypot(vy);
    let (vx, vy) = (vx / norm, vy / norm);
    let hi = hi.max(floor);
    let lo = floor;
    let xy = (hi - lo) * vx * vy;
    let mut out = [
        [hi * vx * vx + lo * vy * vy, xy],
        [xy, hi * vy * vy + lo * vx * vx],
    ];
    // absorb rounding so the floor holds as evaluated by `min_eigenvalue`
    let ulp = f64::EPSILON * out[0][0].abs().max(out[1][1].abs()).max(xy.abs());
    loop {
        let short = floor - min_eigenvalue(&out);
        if short <= 0.0 {
            return out;
        }
        out[0][0] += short.max(ulp);
        out[1][1] += short.max(ulp);
    }
}

fn log_normal(p: Vec2, mean: Vec2, cov: &Mat2) -> f64 {
    let [[a, b], [_, c]] = *cov;
    let det = a * c - b * b;
    let (dx, dy) = (p[0] - mean[0], p[1] - mean[1]);
    let maha = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -TAU.ln() - 0.5 * det.ln() - 0.5 * maha
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<GaussianComponent>,
}

fn component_order(a: &GaussianComponent, b: &GaussianComponent) -> std::cmp::Ordering {
    b.weight
        .total_cmp(&a.weight)
        .then(a.mean[0].total_cmp(&b.mean[0]))
        .then(a.mean[1].total_cmp(&b.mean[1]))
}

impl GaussianMixture {
    pub fn new(components: Vec<GaussianComponent>) -> Self {
        GaussianMixture { components }
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.components
            .windows(2)
            .all(|w| component_order(&w[0], &w[1]).is_le())
    }

    /// Weights on the simplex (within 1e-9) and every covariance SPD.
    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidConfig("mixture has no components".into()));
        }
        for (k, c) in self.components.iter().enumerate() {
            if !(0.0..=1.0).contains(&c.weight) {
                return Err(Error::InvalidConfig(format!(
                    "component {k} weight {} outside [0, 1]",
                    c.weight
                )));
            }
            if !c.is_spd() || !c.mean.iter().all(|v| v.is_finite()) {
                return Err(Error::NotPositiveDefinite { component: k });
            }
        }
        let total: f64 = self.components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!("weights sum to {total}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("mixture serialises")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: GaussianMixture = serde_json::from_str(s)?;
        m.validate()?;
        Ok(m)
    }

    /// Index of the maximum-posterior component for `p`; ties go to the
    /// lowest index.
    pub fn assign(&self, p: Vec2) -> usize {
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        for (k, c) in self.components.iter().enumerate() {
            let score = c.weight.ln() + c.log_density(p);
            if score > best_score {
                best = k;
                best_score = score;
            }
        }
        best
    }

    /// Hard assignment of every point, in point-set order.
    pub fn hard_assign(&self, points: &ScatterPointSet) -> Vec<usize> {
        points.points().iter().map(|p| self.assign([p.x, p.y])).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixtureConfig {
    pub k: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub reg_eps: f64,
    pub singular_threshold: usize,
    pub singular_cov: f64,
    pub seed: u64,
}

impl Default for MixtureConfig {
    fn default() -> Self {
        MixtureConfig {
            k: 6,
            max_iters: 200,
            tol: 1e-6,
            reg_eps: 1e-3,
            singular_threshold: 4,
            singular_cov: 2.0,
            seed: 0,
        }
    }
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("mixture: {m}")));
        if self.k == 0 {
            return bad("k must be >= 1");
        }
        if !(self.tol > 0.0) {
            return bad("tol must be > 0");
        }
        if !(self.reg_eps > 0.0) {
            return bad("reg_eps must be > 0");
        }
        if self.singular_threshold == 0 {
            return bad("singular_threshold must be >= 1");
        }
        if !(self.singular_cov > 0.0) {
            return bad("singular_cov must be > 0");
        }
        Ok(())
    }

    pub fn singular_rule(&self) -> SingularRule {
        SingularRule {
            threshold: self.singular_threshold,
            cov: self.singular_cov,
        }
    }
}

/// Components with fewer than `threshold` hard-assigned points are replaced by
/// an isotropic Gaussian of variance `cov` centred on their strongest point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SingularRule {
    pub threshold: usize,
    pub cov: f64,
}

impl Default for SingularRule {
    fn default() -> Self {
        SingularRule {
            threshold: 4,
            cov: 2.0,
        }
    }
}

/// Per-iteration diagnostics of an EM run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FitTrace {
    /// Log-likelihood of the initial parameters followed by one entry per
    /// M-step.
    pub log_likelihoods: Vec<f64>,
    /// Sum of weights after each M-step.
    pub weight_sums: Vec<f64>,
    /// Smallest covariance eigenvalue over all components after each M-step.
    pub min_eigenvalues: Vec<f64>,
    pub converged: bool,
}

impl FitTrace {
    pub fn iterations(&self) -> usize {
        self.weight_sums.len()
    }
}

struct Params {
    weights: Vec<f64>,
    means: Vec<Vec2>,
    covs: Vec<Mat2>,
}

/// k-means++ seeding on SplitMix64: first centre uniform, the rest with
/// probability proportional to squared distance to the nearest chosen centre.
fn kmeans_pp(xs: &[Vec2], k: usize, rng: &mut SplitMix64) -> Vec<Vec2> {
    let n = xs.len();
    let d2 = |a: Vec2, b: Vec2| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let mut centers = vec![xs[rng.next_index(n)]];
    let mut dist: Vec<f64> = xs.iter().map(|&x| d2(x, centers[0])).collect();
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.next_f64() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &d) in dist.iter().enumerate() {
                if d > 0.0 {
                    acc += d;
                    chosen = Some(i);
                    if acc > target {
                        break;
                    }
                }
            }
            chosen.expect("positive total implies a positive distance")
        } else {
            rng.next_index(n)
        };
        let c = xs[pick];
        centers.push(c);
        for (d, &x) in dist.iter_mut().zip(xs) {
            *d = d.min(d2(x, c));
        }
    }
    centers
}

/// Fills `resp` (n x k, row-major) with posteriors and returns the total
/// log-likelihood.
fn e_step(params: &Params, xs: &[Vec2], resp: &mut [f64]) -> f64 {
    let k = params.weights.len();
    let mut total = 0.0;
    let mut logs = vec![0.0; k];
    for (i, &x) in xs.iter().enumerate() {
        for (j, l) in logs.iter_mut().enumerate() {
            *l = params.weights[j].ln() + log_normal(x, params.means[j], &params.covs[j]);
        }
        let lse = log_sum_exp(&logs);
        total += lse;
        for j in 0..k {
            resp[i * k + j] = (logs[j] - lse).exp();
        }
    }
    total
}

fn m_step(params: &mut Params, xs: &[Vec2], resp: &[f64], reg_eps: f64) {
    let k = params.weights.len();
    let n = xs.len() as f64;
    for j in 0..k {
        let nk: f64 = (0..xs.len()).map(|i| resp[i * k + j]).sum();
        params.weights[j] = nk / n;
        if !(nk > f64::EPSILON) {
            // no mass: keep location and shape, weight is ~0
            continue;
        }
        let mut mean = [0.0; 2];
        for (i, x) in xs.iter().enumerate() {
            let r = resp[i * k + j];
            mean[0] += r * x[0];
            mean[1] += r * x[1];
        }
        mean = [mean[0] / nk, mean[1] / nk];
        let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
        for (i, x) in xs.iter().enumerate() {
            let r = resp[i * k + j];
            let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
            sxx += r * dx * dx;
            sxy += r * dx * dy;
            syy += r * dy * dy;
        }
        let sxy = sxy / nk;
        params.means[j] = mean;
        params.covs[j] = floor_eigenvalues(&[[sxx / nk, sxy], [sxy, syy / nk]], reg_eps);
    }
}

/// Fits the mixture and applies the singular rule and weight ordering.
pub fn fit_gmm(points: &ScatterPointSet, cfg: &MixtureConfig) -> Result<GaussianMixture> {
    fit_gmm_traced(points, cfg).map(|(m, _)| m)
}

/// [`fit_gmm`] that also returns the EM diagnostics.
pub fn fit_gmm_traced(
    points: &ScatterPointSet,
    cfg: &MixtureConfig,
) -> Result<(GaussianMixture, FitTrace)> {
    let (raw, trace) = fit_em(points, cfg)?;
    let mixture = apply_singular_rule(&raw, points, cfg.singular_rule())?;
    Ok((sort_by_weight(&mixture), trace))
}

/// The EM stage alone: components in initialisation order with hard counts
/// filled in, before the singular rule and sorting.
pub fn fit_em(points: &ScatterPointSet, cfg: &MixtureConfig) -> Result<(GaussianMixture, FitTrace)> {
    cfg.validate()?;
    let n = points.len();
    if n == 0 {
        return Err(Error::EmptyPointSet);
    }
    if n < cfg.k {
        return Err(Error::TooFewPoints {
            points: n,
            components: cfg.k,
        });
    }
    let k = cfg.k;
    // EM runs on centred coordinates so the fit is translation equivariant.
    let centroid = points
        .points()
        .iter()
        .fold([0.0, 0.0], |acc, p| [acc[0] + p.x, acc[1] + p.y]);
    let centroid = [centroid[0] / n as f64, centroid[1] / n as f64];
    let xs: Vec<Vec2> = points
        .points()
        .iter()
        .map(|p| [p.x - centroid[0], p.y - centroid[1]])
        .collect();

    let mut rng = SplitMix64::new(cfg.seed);
    let means = kmeans_pp(&xs, k, &mut rng);
    let (mut vxx, mut vxy, mut vyy) = (0.0, 0.0, 0.0);
    for x in &xs {
        vxx += x[0] * x[0];
        vxy += x[0] * x[1];
        vyy += x[1] * x[1];
    }
    let nf = n as f64;
    let global = floor_eigenvalues(&[[vxx / nf, vxy / nf], [vxy / nf, vyy / nf]], cfg.reg_eps);
    let mut params = Params {
        weights: vec![1.0 / k as f64; k],
        means,
        covs: vec![global; k],
    };

    let mut trace = FitTrace::default();
    let mut resp = vec![0.0; n * k];
    let mut ll = e_step(&params, &xs, &mut resp);
    trace.log_likelihoods.push(ll);
    for _ in 0..cfg.max_iters {
        m_step(&mut params, &xs, &resp, cfg.reg_eps);
        trace.weight_sums.push(params.weights.iter().sum());
        trace
            .min_eigenvalues
            .push(params.covs.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min));
        let next = e_step(&params, &xs, &mut resp);
        trace.log_likelihoods.push(next);
        let gain = next - ll;
        ll = next;
        if gain < cfg.tol {
            trace.converged = true;
            break;
        }
    }

    let components = (0..k)
        .map(|j| GaussianComponent {
            weight: params.weights[j],
            mean: [
                params.means[j][0] + centroid[0],
                params.means[j][1] + centroid[1],
            ],
            covariance: params.covs[j],
            count: 0,
            singular: false,
        })
        .collect();
    let mut mixture = GaussianMixture::new(components);
    for a in mixture.hard_assign(points) {
        mixture.components[a].count += 1;
    }
    Ok((mixture, trace))
}

/// `Σ_p ln Σ_k α_k N(p | μ_k, Σ_k)` over all points.
pub fn log_likelihood(mixture: &GaussianMixture, points: &ScatterPointSet) -> Result<f64> {
    if points.is_empty() {
        return Err(Error::EmptyPointSet);
    }
    let mut logs = vec![0.0; mixture.len()];
    let mut total = 0.0;
    for p in points.points() {
        for (l, c) in logs.iter_mut().zip(&mixture.components) {
            *l = c.weight.ln() + c.log_density([p.x, p.y]);
        }
        total += log_sum_exp(&logs);
    }
    Ok(total)
}

/// Replaces every component whose `count` is below the threshold by a
/// `diag(cov, cov)` Gaussian centred on the highest-response point among its
/// hard-assigned points. Weights and counts are kept.
pub fn apply_singular_rule(
    mixture: &GaussianMixture,
    points: &ScatterPointSet,
    rule: SingularRule,
) -> Result<GaussianMixture> {
    let assignment = mixture.hard_assign(points);
    let mut out = mixture.clone();
    for (k, comp) in out.components.iter_mut().enumerate() {
        if comp.count >= rule.threshold {
            continue;
        }
        // the set is ordered strongest-first, so the first member wins
        let strongest = points
            .points()
            .iter()
            .zip(&assignment)
            .find(|(_, &a)| a == k)
            .map(|(p, _)| p)
            .ok_or(Error::EmptySingularComponent { component: k })?;
        comp.mean = [strongest.x, strongest.y];
        comp.covariance = [[rule.cov, 0.0], [0.0, rule.cov]];
        comp.singular = true;
    }
    Ok(out)
}

/// Orders components by weight descending, ties by mean `(x, y)` ascending.
pub fn sort_by_weight(mixture: &GaussianMixture) -> GaussianMixture {
    let mut components = mixture.components.clone();
    components.sort_by(component_order);
    GaussianMixture { components }
}
