//! Dominant scattering-point extraction with a Harris-Laplace detector.
//!
//! Each pixel picks the scale whose scale-normalised Laplacian magnitude
//! `|σ² ∇²(G_σ * I)|` is largest among the configured scales. Candidates are
//! 8-neighbourhood maxima of the Harris response evaluated at that scale,
//! followed by a relative floor and greedy non-maximum suppression.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::imaging::ImageChip;

/// One scattering point. `x` is the column, `y` the row, both in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub x: f64,
    pub y: f64,
    pub response: f64,
    pub scale: f64,
}

/// Points ordered by response descending, ties by `(y, x)` ascending.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScatterPointSet {
    points: Vec<ScatterPoint>,
}

fn point_order(a: &ScatterPoint, b: &ScatterPoint) -> std::cmp::Ordering {
    b.response
        .total_cmp(&a.response)
        .then(a.y.total_cmp(&b.y))
        .then(a.x.total_cmp(&b.x))
}

impl ScatterPointSet {
    /// Builds a set, sorting into canonical order.
    pub fn new(mut points: Vec<ScatterPoint>) -> Self {
        points.sort_by(point_order);
        ScatterPointSet { points }
    }

    pub fn points(&self) -> &[ScatterPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Points with `x_min <= x <= x_max` and `y_min <= y <= y_max`.
    pub fn within(&self, bbox: [f64; 4]) -> ScatterPointSet {
        ScatterPointSet {
            points: self
                .points
                .iter()
                .filter(|p| p.x >= bbox[0] && p.x <= bbox[2] && p.y >= bbox[1] && p.y <= bbox[3])
                .copied()
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("points serialise")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let set: ScatterPointSet = serde_json::from_str(s)?;
        if set.points.iter().any(|p| !(p.response >= 0.0)) {
            return Err(Error::InvalidConfig("negative point response".into()));
        }
        Ok(ScatterPointSet::new(set.points))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HarrisConfig {
    pub k: f64,
    pub scales: Vec<f64>,
    pub nms_radius: f64,
    pub response_floor: f64,
    pub max_points: usize,
}

impl Default for HarrisConfig {
    fn default() -> Self {
        HarrisConfig {
            k: 0.04,
            scales: vec![1.0, 1.6, 2.56, 4.1],
            nms_radius: 3.0,
            response_floor: 0.01,
            max_points: 64,
        }
    }
}

impl HarrisConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("harris: {m}")));
        if !(0.02..=0.15).contains(&self.k) {
            return bad("k must lie in [0.02, 0.15]");
        }
        if self.scales.is_empty() || self.scales.iter().any(|s| !(*s > 0.0)) {
            return bad("scales must be nonempty and positive");
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return bad("scales must be strictly ascending");
        }
        if !(self.response_floor > 0.0 && self.response_floor < 1.0) {
            return bad("response_floor must lie in (0, 1)");
        }
        if !(self.nms_radius >= 0.0) {
            return bad("nms_radius must be >= 0");
        }
        if self.max_points == 0 {
            return bad("max_points must be >= 1");
        }
        Ok(())
    }
}

/// Normalised 1-D Gaussian taps with radius `ceil(3σ)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable Gaussian smoothing with replicate padding.
pub fn gaussian_blur(img: &Grid<f64>, sigma: f64) -> Grid<f64> {
    let taps = gaussian_kernel(sigma);
    let radius = (taps.len() / 2) as isize;
    let (h, w) = img.dims();
    let horiz = Grid::from_fn(h, w, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(t, k)| k * img.clamped(r as isize, c as isize + t as isize - radius))
            .sum::<f64>()
    });
    Grid::from_fn(h, w, |r, c| {
        taps.iter()
            .enumerate()
            .map(|(t, k)| k * horiz.clamped(r as isize + t as isize - radius, c as isize))
            .sum::<f64>()
    })
}

/// Harris corner response `det(M) - k·trace(M)²`, where `M` is the
/// Gaussian-weighted (σ = `sigma`) second-moment matrix of central-difference
/// gradients. All borders replicate.
pub fn harris_response(chip: &ImageChip, sigma: f64, k: f64) -> Grid<f64> {
    assert!(sigma > 0.0, "sigma must be positive");
    harris_on(chip.pixels(), sigma, k)
}

fn harris_on(img: &Grid<f64>, sigma: f64, k: f64) -> Grid<f64> {
    let (h, w) = img.dims();
    let grad = |r: usize, c: usize| {
        let (r, c) = (r as isize, c as isize);
        let gx = (img.clamped(r, c + 1) - img.clamped(r, c - 1)) / 2.0;
        let gy = (img.clamped(r + 1, c) - img.clamped(r - 1, c)) / 2.0;
        (gx, gy)
    };
    let mut xx = Grid::filled(h, w, 0.0);
    let mut xy = Grid::filled(h, w, 0.0);
    let mut yy = Grid::filled(h, w, 0.0);
    for r in 0..h {
        for c in 0..w {
            let (gx, gy) = grad(r, c);
            xx[(r, c)] = gx * gx;
            xy[(r, c)] = gx * gy;
            yy[(r, c)] = gy * gy;
        }
    }
    let (xx, xy, yy) = (
        gaussian_blur(&xx, sigma),
        gaussian_blur(&xy, sigma),
        gaussian_blur(&yy, sigma),
    );
    Grid::from_fn(h, w, |r, c| {
        let (a, b, d) = (xx[(r, c)], xy[(r, c)], yy[(r, c)]);
        let trace = a + d;
        a * d - b * b - k * trace * trace
    })
}

/// `|σ² ∇²(G_σ * I)|` with a 5-point Laplacian stencil.
pub fn normalized_laplacian(chip: &ImageChip, sigma: f64) -> Grid<f64> {
    let smooth = gaussian_blur(chip.pixels(), sigma);
    let (h, w) = smooth.dims();
    let s2 = sigma * sigma;
    Grid::from_fn(h, w, |r, c| {
        let (r, c) = (r as isize, c as isize);
        let lap = smooth.clamped(r - 1, c)
            + smooth.clamped(r + 1, c)
            + smooth.clamped(r, c - 1)
            + smooth.clamped(r, c + 1)
            - 4.0 * smooth.clamped(r, c);
        (s2 * lap).abs()
    })
}

/// Greedy non-maximum suppression. Candidates are visited in canonical order
/// (response descending, then `(y, x)`); a candidate is dropped when it lies
/// within `radius` (inclusive, Euclidean) of an already kept point. Stops
/// after `max_points` survivors.
pub fn suppress_non_maxima(
    candidates: Vec<ScatterPoint>,
    radius: f64,
    max_points: usize,
) -> ScatterPointSet {
    let ordered = ScatterPointSet::new(candidates);
    let r2 = radius * radius;
    let mut kept: Vec<ScatterPoint> = Vec::new();
    for p in ordered.points {
        if kept.len() == max_points {
            break;
        }
        if kept
            .iter()
            .all(|q| (q.x - p.x).powi(2) + (q.y - p.y).powi(2) > r2)
        {
            kept.push(p);
        }
    }
    ScatterPointSet { points: kept }
}

/// Harris-Laplace scattering-point extraction.
pub fn extract_points(chip: &ImageChip, cfg: &HarrisConfig) -> Result<ScatterPointSet> {
    cfg.validate()?;
    let (h, w) = (chip.height(), chip.width());
    let responses: Vec<Grid<f64>> = cfg
        .scales
        .iter()
        .map(|&s| harris_response(chip, s, cfg.k))
        .collect();
    let laplacians: Vec<Grid<f64>> = cfg
        .scales
        .iter()
        .map(|&s| normalized_laplacian(chip, s))
        .collect();

    let selected = Grid::from_fn(h, w, |r, c| {
        let mut best = 0;
        for s in 1..laplacians.len() {
            if laplacians[s][(r, c)] > laplacians[best][(r, c)] {
                best = s;
            }
        }
        best
    });

    let mut candidates = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let s = selected[(r, c)];
            let map = &responses[s];
            let v = map[(r, c)];
            if !(v > 0.0) {
                continue;
            }
            let is_peak = (-1isize..=1).all(|dr| {
                (-1isize..=1).all(|dc| {
                    (dr == 0 && dc == 0) || v >= map.clamped(r as isize + dr, c as isize + dc)
                })
            });
            if is_peak {
                candidates.push(ScatterPoint {
                    x: c as f64,
                    y: r as f64,
                    response: v,
                    scale: cfg.scales[s],
                });
            }
        }
    }
    let max_response = candidates.iter().map(|p| p.response).fold(0.0, f64::max);
    let floor = cfg.response_floor * max_response;
    candidates.retain(|p| p.response >= floor);
    Ok(suppress_non_maxima(candidates, cfg.nms_radius, cfg.max_points))
}
