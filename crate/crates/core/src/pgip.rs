//! Instance-perception supervision for detection heads.
//!
//! Each head of stride `d` sees the image on a `ceil(H/d) x ceil(W/d)` grid.
//! A scattering point at `(x, y)` falls in cell `(floor(y/d), floor(x/d))`;
//! several points in one cell pool by maximum response. Three target
//! variants are provided:
//!
//! * adaptive: a cell is positive when its pooled response is at least
//!   `eta` times the maximum pooled response of the same instance,
//! * truncated: a cell is positive when its pooled response reaches a
//!   global absolute threshold,
//! * hard: every cell whose centre lies inside a box is positive.
//!
//! Positives of different instances are unioned.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::heatmap::HeatmapStack;
use crate::scattering::ScatterPointSet;

pub const STRIDES: [u32; 4] = [4, 8, 16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HeadSpec {
    pub stride: u32,
    pub map_height: usize,
    pub map_width: usize,
}

impl HeadSpec {
    /// Head of `stride` over an `image_height x image_width` image.
    pub fn new(stride: u32, image_height: usize, image_width: usize) -> Result<Self> {
        if !STRIDES.contains(&stride) {
            return Err(Error::InvalidConfig(format!(
                "head stride {stride} not in {STRIDES:?}"
            )));
        }
        let s = stride as usize;
        Ok(HeadSpec {
            stride,
            map_height: image_height.div_ceil(s),
            map_width: image_width.div_ceil(s),
        })
    }

    /// Cell containing pixel coordinate `(x, y)`, if on the map.
    pub fn cell_of(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let s = f64::from(self.stride);
        let (r, c) = ((y / s).floor(), (x / s).floor());
        (r >= 0.0 && c >= 0.0 && (r as usize) < self.map_height && (c as usize) < self.map_width)
            .then_some((r as usize, c as usize))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceAnnotation {
    bbox: [f64; 4],
    points: ScatterPointSet,
}

fn check_bbox(bbox: [f64; 4]) -> Result<()> {
    if bbox[0] < bbox[2] && bbox[1] < bbox[3] {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!(
            "bbox {bbox:?} must satisfy x_min < x_max and y_min < y_max"
        )))
    }
}

impl InstanceAnnotation {
    /// `bbox` is `(x_min, y_min, x_max, y_max)`; every point must lie inside.
    pub fn new(bbox: [f64; 4], points: ScatterPointSet) -> Result<Self> {
        check_bbox(bbox)?;
        if points.within(bbox).len() != points.len() {
            return Err(Error::InvalidConfig(format!(
                "instance points fall outside bbox {bbox:?}"
            )));
        }
        Ok(InstanceAnnotation { bbox, points })
    }

    /// Keeps the points of `scene` that lie inside `bbox`.
    pub fn from_scene(bbox: [f64; 4], scene: &ScatterPointSet) -> Result<Self> {
        check_bbox(bbox)?;
        Ok(InstanceAnnotation {
            bbox,
            points: scene.within(bbox),
        })
    }

    pub fn bbox(&self) -> [f64; 4] {
        self.bbox
    }

    pub fn points(&self) -> &ScatterPointSet {
        &self.points
    }

    /// Max-pooled response per occupied cell.
    fn pooled(&self, head: &HeadSpec) -> BTreeMap<(usize, usize), f64> {
        let mut cells = BTreeMap::new();
        for p in self.points.points() {
            if let Some(cell) = head.cell_of(p.x, p.y) {
                let e = cells.entry(cell).or_insert(p.response);
                *e = e.max(p.response);
            }
        }
        cells
    }
}

/// Per-cell supervision with entries exactly 0 or 1.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryTargetMap(Grid<u8>);

impl BinaryTargetMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryTargetMap(Grid::filled(height, width, 0))
    }

    pub fn grid(&self) -> &Grid<u8> {
        &self.0
    }

    pub fn dims(&self) -> (usize, usize) {
        self.0.dims()
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.0[(row, col)] == 1
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.0[(row, col)] = 1;
    }

    pub fn positives(&self) -> usize {
        self.0.as_slice().iter().filter(|&&v| v == 1).count()
    }

    /// Single-channel stack for the PGDH container.
    pub fn to_stack(&self) -> HeatmapStack {
        let (h, w) = self.dims();
        HeatmapStack::new(1, h, w, self.0.as_slice().iter().map(|&v| f32::from(v)).collect())
            .expect("shape is consistent")
    }

    pub fn from_stack(stack: &HeatmapStack) -> Result<Self> {
        let (k, h, w) = stack.shape();
        if k != 1 {
            return Err(Error::shape("1 channel", format!("{k} channels")));
        }
        let data = stack
            .values()
            .iter()
            .map(|&v| match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::InvalidConfig(format!("binary map holds {v}"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Ok(BinaryTargetMap(Grid::from_vec(h, w, data).expect("shape is consistent")))
    }
}

/// Adaptive target plus the indices of instances that had no points on the
/// map and therefore contributed no positives.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveTarget {
    pub map: BinaryTargetMap,
    pub empty_instances: Vec<usize>,
}

pub fn pgip_target_adaptive(
    instances: &[InstanceAnnotation],
    head: &HeadSpec,
    eta: f64,
) -> Result<AdaptiveTarget> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidConfig(format!("eta {eta} outside [0, 1]")));
    }
    let mut map = BinaryTargetMap::zeros(head.map_height, head.map_width);
    let mut empty_instances = Vec::new();
    for (j, inst) in instances.iter().enumerate() {
        let cells = inst.pooled(head);
        if cells.is_empty() {
            empty_instances.push(j);
            continue;
        }
        let max = cells.values().cloned().fold(f64::NEG_INFINITY, f64::max);
        let threshold = eta * max;
        for (&(r, c), &v) in &cells {
            if v >= threshold {
                map.set(r, c);
            }
        }
    }
    Ok(AdaptiveTarget {
        map,
        empty_instances,
    })
}

pub fn pgip_target_hard(instances: &[InstanceAnnotation], head: &HeadSpec) -> BinaryTargetMap {
    let mut map = BinaryTargetMap::zeros(head.map_height, head.map_width);
    let s = f64::from(head.stride);
    for inst in instances {
        let [x0, y0, x1, y1] = inst.bbox;
        for r in 0..head.map_height {
            let cy = (r as f64 + 0.5) * s;
            if cy < y0 || cy > y1 {
                continue;
            }
            for c in 0..head.map_width {
                let cx = (c as f64 + 0.5) * s;
                if cx >= x0 && cx <= x1 {
                    map.set(r, c);
                }
            }
        }
    }
    map
}

pub fn pgip_target_truncated(
    instances: &[InstanceAnnotation],
    head: &HeadSpec,
    global_tau: f64,
) -> Result<BinaryTargetMap> {
    if !(global_tau >= 0.0) {
        return Err(Error::InvalidConfig(format!("global_tau {global_tau} < 0")));
    }
    let mut map = BinaryTargetMap::zeros(head.map_height, head.map_width);
    for inst in instances {
        for (&(r, c), &v) in &inst.pooled(head) {
            if v >= global_tau {
                map.set(r, c);
            }
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FocalConfig {
    pub alpha_t: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl Default for FocalConfig {
    fn default() -> Self {
        FocalConfig {
            alpha_t: 0.25,
            gamma: 2.0,
            epsilon: 1e-7,
        }
    }
}

impl FocalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_t > 0.0 && self.alpha_t <= 1.0) {
            return Err(Error::InvalidConfig("focal: alpha_t must lie in (0, 1]".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::InvalidConfig("focal: gamma must be >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1e-3) {
            return Err(Error::InvalidConfig("focal: epsilon must lie in (0, 1e-3]".into()));
        }
        Ok(())
    }
}

/// Mean over cells of `-alpha_t (1 - p_t)^gamma ln p_t`, with `p` clamped to
/// `[epsilon, 1 - epsilon]` and `p_t = p` on positives, `1 - p` on negatives.
/// The same `alpha_t` weights both classes.
pub fn focal_loss(prediction: &Grid<f64>, target: &BinaryTargetMap, cfg: &FocalConfig) -> Result<f64> {
    cfg.validate()?;
    if prediction.dims() != target.dims() {
        return Err(Error::shape(
            format!("{:?}", target.dims()),
            format!("{:?}", prediction.dims()),
        ));
    }
    let n = prediction.as_slice().len();
    if n == 0 {
        return Err(Error::shape("non-empty map", "0 cells"));
    }
    let total: f64 = prediction
        .as_slice()
        .iter()
        .zip(target.grid().as_slice())
        .map(|(&p, &t)| {
            let p = p.clamp(cfg.epsilon, 1.0 - cfg.epsilon);
            let pt = if t == 1 { p } else { 1.0 - p };
            -cfg.alpha_t * (1.0 - pt).powf(cfg.gamma) * pt.ln()
        })
        .sum();
    Ok(total / n as f64)
}

/// Sum of per-head focal losses.
pub fn pgip_loss(per_head: &[(Grid<f64>, BinaryTargetMap)], cfg: &FocalConfig) -> Result<f64> {
    if per_head.is_empty() {
        return Err(Error::InvalidConfig("pgip_loss needs at least one head".into()));
    }
    per_head
        .iter()
        .map(|(p, t)| focal_loss(p, t, cfg))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scattering::ScatterPoint;

    fn pt(x: f64, y: f64, response: f64) -> ScatterPoint {
        ScatterPoint {
            x,
            y,
            response,
            scale: 1.0,
        }
    }

    fn inst(points: Vec<ScatterPoint>) -> InstanceAnnotation {
        InstanceAnnotation::new([0.0, 0.0, 63.0, 63.0], ScatterPointSet::new(points)).unwrap()
    }

    fn head8() -> HeadSpec {
        HeadSpec::new(8, 64, 64).unwrap()
    }

    #[test]
    fn head_dims_round_up() {
        let h = HeadSpec::new(16, 100, 33).unwrap();
        assert_eq!((h.map_height, h.map_width), (7, 3));
        assert!(HeadSpec::new(6, 64, 64).is_err());
    }

    #[test]
    fn adaptive_threshold_half() {
        let i = inst(vec![pt(4.0, 4.0, 10.0), pt(20.0, 4.0, 6.0), pt(36.0, 4.0, 3.0)]);
        let t = pgip_target_adaptive(&[i], &head8(), 0.5).unwrap();
        assert!(t.map.get(0, 0) && t.map.get(0, 2) && !t.map.get(0, 4));
        assert_eq!(t.map.positives(), 2);
        assert!(t.empty_instances.is_empty());
    }

    #[test]
    fn adaptive_eta_one_keeps_max_only() {
        let i = inst(vec![pt(4.0, 4.0, 10.0), pt(20.0, 4.0, 6.0), pt(36.0, 36.0, 10.0)]);
        let t = pgip_target_adaptive(&[i], &head8(), 1.0).unwrap();
        assert_eq!(t.map.positives(), 2);
        assert!(t.map.get(0, 0) && t.map.get(4, 4));
    }

    #[test]
    fn adaptive_pools_shared_cells_by_max() {
        let i = inst(vec![pt(1.0, 1.0, 4.0), pt(6.0, 6.0, 9.0), pt(30.0, 30.0, 5.0)]);
        let t = pgip_target_adaptive(&[i], &head8(), 0.6).unwrap();
        assert!(t.map.get(0, 0));
        assert!(!t.map.get(3, 3));
        assert_eq!(t.map.positives(), 1);
    }

    #[test]
    fn adaptive_reports_empty_instances() {
        let empty = inst(vec![]);
        let full = inst(vec![pt(4.0, 4.0, 1.0)]);
        let t = pgip_target_adaptive(&[empty, full], &head8(), 0.5).unwrap();
        assert_eq!(t.empty_instances, vec![0]);
        assert_eq!(t.map.positives(), 1);
        assert!(pgip_target_adaptive(&[], &head8(), 1.5).is_err());
    }

    #[test]
    fn hard_targets() {
        let whole = InstanceAnnotation::new([0.0, 0.0, 64.0, 64.0], ScatterPointSet::default()).unwrap();
        assert_eq!(pgip_target_hard(&[whole], &head8()).positives(), 64);
        assert_eq!(pgip_target_hard(&[], &head8()).positives(), 0);
        let corner = InstanceAnnotation::new([0.0, 0.0, 16.0, 16.0], ScatterPointSet::default()).unwrap();
        let m = pgip_target_hard(&[corner], &head8());
        assert_eq!(m.positives(), 4);
        assert!(m.get(0, 0) && m.get(0, 1) && m.get(1, 0) && m.get(1, 1));
    }

    #[test]
    fn truncated_targets() {
        let pts = vec![pt(4.0, 4.0, 10.0), pt(20.0, 4.0, 6.0), pt(36.0, 4.0, 3.0)];
        let i = inst(pts);
        assert_eq!(pgip_target_truncated(std::slice::from_ref(&i), &head8(), 0.0).unwrap().positives(), 3);
        assert_eq!(pgip_target_truncated(std::slice::from_ref(&i), &head8(), 10.5).unwrap().positives(), 0);
        assert!(pgip_target_truncated(&[i], &head8(), -1.0).is_err());

        let strong = inst(vec![pt(4.0, 4.0, 10.0)]);
        let weak = inst(vec![pt(40.0, 40.0, 4.0)]);
        let m = pgip_target_truncated(&[strong.clone(), weak.clone()], &head8(), 5.0).unwrap();
        assert_eq!(m.positives(), 1);
        assert!(m.get(0, 0) && !m.get(5, 5));
        let a = pgip_target_adaptive(&[strong, weak], &head8(), 0.5).unwrap();
        assert!(a.map.get(0, 0) && a.map.get(5, 5));
    }

    #[test]
    fn focal_single_cell() {
        let mut t = BinaryTargetMap::zeros(1, 1);
        t.set(0, 0);
        let p = Grid::filled(1, 1, 0.5);
        let loss = focal_loss(&p, &t, &FocalConfig::default()).unwrap();
        assert!((loss - 0.25 * 0.25 * 2f64.ln()).abs() < 1e-12);
        assert!((loss - 0.043322).abs() < 1e-6);
    }

    #[test]
    fn focal_perfect_prediction_is_tiny() {
        let cfg = FocalConfig::default();
        let mut t = BinaryTargetMap::zeros(3, 3);
        t.set(1, 1);
        let p = Grid::from_fn(3, 3, |r, c| if (r, c) == (1, 1) { 1.0 } else { 0.0 });
        let loss = focal_loss(&p, &t, &cfg).unwrap();
        let bound = cfg.alpha_t * cfg.epsilon.powf(cfg.gamma) * -(1.0 - cfg.epsilon).ln();
        assert!(loss <= bound * (1.0 + 1e-9));
    }

    #[test]
    fn focal_shape_mismatch() {
        let t = BinaryTargetMap::zeros(2, 2);
        let p = Grid::filled(2, 3, 0.5);
        assert!(matches!(
            focal_loss(&p, &t, &FocalConfig::default()),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(pgip_loss(&[], &FocalConfig::default()).is_err());
    }

    #[test]
    fn pgip_loss_is_additive() {
        let cfg = FocalConfig::default();
        let mut t = BinaryTargetMap::zeros(1, 1);
        t.set(0, 0);
        let p = Grid::filled(1, 1, 0.5);
        let single = focal_loss(&p, &t, &cfg).unwrap();
        assert_eq!(pgip_loss(&[(p.clone(), t.clone())], &cfg).unwrap(), single);
        assert_eq!(
            pgip_loss(&[(p.clone(), t.clone()), (p.clone(), t.clone())], &cfg).unwrap(),
            2.0 * single
        );
        let perfect = (Grid::filled(1, 1, 1.0), t.clone());
        let sum = pgip_loss(&[(p, t), perfect], &cfg).unwrap();
        assert!((sum - 0.043322).abs() < 1e-6);
    }

    #[test]
    fn binary_map_container_round_trip() {
        let mut m = BinaryTargetMap::zeros(3, 4);
        m.set(2, 1);
        let s = m.to_stack();
        assert_eq!(BinaryTargetMap::from_stack(&s).unwrap(), m);
        let bad = HeatmapStack::new(1, 1, 1, vec![0.5]).unwrap();
        assert!(BinaryTargetMap::from_stack(&bad).is_err());
    }
}
