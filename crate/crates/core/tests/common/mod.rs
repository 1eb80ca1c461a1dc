//! Independent reference implementations shared by the integration tests.
//! None of these call into the code they check.

#![allow(dead_code)]

use pgd_core::grid::Grid;
use pgd_core::mixture::GaussianComponent;
use pgd_core::rng::SplitMix64;
use pgd_core::scattering::{ScatterPoint, ScatterPointSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Positive pixels not exceeded by any of their 8 neighbours.
pub fn brute_local_maxima(map: &Grid<f64>) -> Vec<(usize, usize, f64)> {
    let (h, w) = map.dims();
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let v = map[(r, c)];
            if v <= 0.0 {
                continue;
            }
            let mut is_max = true;
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if (dr, dc) == (0, 0) || rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    if map[(rr as usize, cc as usize)] > v {
                        is_max = false;
                    }
                }
            }
            if is_max {
                out.push((r, c, v));
            }
        }
    }
    out.sort_by(|a, b| b.2.total_cmp(&a.2));
    out
}

/// Quadratic form `(c dx² - 2 b dy dx + a dy²) / det`, evaluated one pixel at
/// a time in that order.
pub fn pixel_d2(mean: [f64; 2], cov: [[f64; 2]; 2], row: usize, col: usize) -> f64 {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let det = a * c - b * b;
    let dx = col as f64 - mean[0];
    let dy = row as f64 - mean[1];
    (c * dx * dx - 2.0 * b * dy * dx + a * dy * dy) / det
}

/// Same quadratic form through an explicit inverse, for tolerance checks.
pub fn pixel_d2_inverse(mean: [f64; 2], cov: [[f64; 2]; 2], row: usize, col: usize) -> f64 {
    let (a, b, c) = (cov[0][0], cov[0][1], cov[1][1]);
    let det = a * c - b * b;
    let inv = [[c / det, -b / det], [-b / det, a / det]];
    let v = [col as f64 - mean[0], row as f64 - mean[1]];
    v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1]) + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1])
}

pub fn pixel_value(mean: [f64; 2], cov: [[f64; 2]; 2], row: usize, col: usize) -> f64 {
    let d2 = pixel_d2(mean, cov, row, col);
    if d2 <= 9.0 {
        (-0.5 * d2).exp()
    } else {
        0.0
    }
}

/// `ln N([x, y] | mean, cov)` for a bivariate normal.
pub fn bivariate_log_density(mean: [f64; 2], cov: [[f64; 2]; 2], x: f64, y: f64) -> f64 {
    let det = cov[0][0] * cov[1][1] - cov[0][1] * cov[1][0];
    let inv = [[cov[1][1] / det, -cov[0][1] / det], [-cov[1][0] / det, cov[0][0] / det]];
    let v = [x - mean[0], y - mean[1]];
    let q = v[0] * (inv[0][0] * v[0] + inv[0][1] * v[1]) + v[1] * (inv[1][0] * v[0] + inv[1][1] * v[1]);
    -(2.0 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * q
}

/// Random SPD covariance with eigenvalues in `[lo, hi]` and random rotation.
pub fn random_cov(rng: &mut SplitMix64, lo: f64, hi: f64) -> [[f64; 2]; 2] {
    let l1 = lo + (hi - lo) * rng.next_f64();
    let l2 = lo + (hi - lo) * rng.next_f64();
    let t = std::f64::consts::PI * rng.next_f64();
    let (s, c) = t.sin_cos();
    [
        [l1 * c * c + l2 * s * s, (l1 - l2) * s * c],
        [(l1 - l2) * s * c, l1 * s * s + l2 * c * c],
    ]
}

pub fn component(weight: f64, mean: [f64; 2], cov: [[f64; 2]; 2]) -> GaussianComponent {
    GaussianComponent {
        weight,
        mean,
        covariance: cov,
        count: 0,
        singular: false,
    }
}

pub fn point(x: f64, y: f64, response: f64) -> ScatterPoint {
    ScatterPoint {
        x,
        y,
        response,
        scale: 1.0,
    }
}

/// `n` isotropic Gaussian samples around `center` with standard deviation
/// `sd`, responses uniform in `(0, 1)`.
pub fn gaussian_cloud(seed: u64, center: [f64; 2], sd: f64, n: usize) -> Vec<ScatterPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sd).unwrap();
    let mut responses = SplitMix64::new(seed ^ 0xabcdef);
    (0..n)
        .map(|_| {
            point(
                center[0] + normal.sample(&mut rng),
                center[1] + normal.sample(&mut rng),
                0.01 + responses.next_f64(),
            )
        })
        .collect()
}

pub fn set(points: Vec<ScatterPoint>) -> ScatterPointSet {
    ScatterPointSet::new(points)
}

/// Mean binary cross-entropy, written from its definition.
pub fn binary_cross_entropy(p: &[f64], t: &[u8]) -> f64 {
    let total: f64 = p
        .iter()
        .zip(t)
        .map(|(&p, &t)| if t == 1 { -p.ln() } else { -(1.0 - p).ln() })
        .sum();
    total / p.len() as f64
}

/// Adaptive target by enumeration: a cell is positive iff some instance has
/// a point in that cell whose response reaches `eta` times the instance
/// maximum.
pub fn adaptive_oracle(
    instances: &[Vec<ScatterPoint>],
    stride: f64,
    map_h: usize,
    map_w: usize,
    eta: f64,
) -> Vec<Vec<bool>> {
    let mut out = vec![vec![false; map_w]; map_h];
    for inst in instances {
        let mut max = f64::NEG_INFINITY;
        for p in inst {
            if p.response > max {
                max = p.response;
            }
        }
        for p in inst {
            let (r, c) = ((p.y / stride).floor() as usize, (p.x / stride).floor() as usize);
            if r < map_h && c < map_w && p.response >= eta * max {
                out[r][c] = true;
            }
        }
    }
    out
}

/// All multisets of size `1..=max_len` over `1..=top`, as sorted vectors.
pub fn multisets(max_len: usize, top: u32) -> Vec<Vec<u32>> {
    fn rec(start: u32, top: u32, left: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if !cur.is_empty() {
            out.push(cur.clone());
        }
        if left == 0 {
            return;
        }
        for v in start..=top {
            cur.push(v);
            rec(v, top, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(1, top, max_len, &mut Vec::new(), &mut out);
    out
}

/// Every regular file under `root`, as relative path and contents, sorted.
pub fn read_tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for e in walkdir::WalkDir::new(root).sort_by_file_name() {
        let e = e.unwrap();
        if e.file_type().is_file() {
            let rel = e.path().strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.push((rel, std::fs::read(e.path()).unwrap()));
        }
    }
    out
}
