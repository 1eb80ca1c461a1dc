//! Amplitude chips: loading, per-chip normalisation, synthetic airplane scenes
//! and light augmentation.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::rng::SplitMix64;
use crate::scattering::{ScatterPoint, ScatterPointSet};

/// Smallest accepted chip side.
pub const MIN_SIDE: usize = 8;

/// Single-channel amplitude image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageChip {
    pixels: Grid<f64>,
}

impl ImageChip {
    /// Wraps already-normalised pixels, checking the range and size invariants.
    pub fn new(pixels: Grid<f64>) -> Result<Self> {
        let (height, width) = pixels.dims();
        if height == 0 || width == 0 {
            return Err(Error::EmptyImage);
        }
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(Error::ImageTooSmall { height, width });
        }
        if pixels.as_slice().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidConfig(
                "chip values must lie in [0, 1]".to_string(),
            ));
        }
        Ok(ImageChip { pixels })
    }

    /// Min-max normalises raw intensities into a chip.
    pub fn from_raw(raw: &Grid<f64>) -> Result<Self> {
        if raw.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("raw image"));
        }
        ImageChip::new(normalize(raw))
    }

    pub fn height(&self) -> usize {
        self.pixels.height()
    }

    pub fn width(&self) -> usize {
        self.pixels.width()
    }

    pub fn pixels(&self) -> &Grid<f64> {
        &self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[(row, col)]
    }
}

/// Per-image min-max normalisation. Constant images map to all zeros.
pub fn normalize(raw: &Grid<f64>) -> Grid<f64> {
    let (lo, hi) = raw
        .as_slice()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        return raw.map(|_| 0.0);
    }
    raw.map(|&v| ((v - lo) / span).clamp(0.0, 1.0))
}

/// Loads an 8/16-bit binary PGM (P5) or grayscale PNG and min-max normalises it.
pub fn load_chip(path: impl AsRef<Path>) -> Result<ImageChip> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let raw = decode_raster(&bytes)?;
    ImageChip::from_raw(&raw)
}

/// Decodes raw integer intensities without normalising.
pub fn decode_raster(bytes: &[u8]) -> Result<Grid<f64>> {
    if bytes.starts_with(b"P5") {
        return decode_pgm(bytes);
    }
    if bytes.starts_with(b"\x89PNG") {
        return decode_png(bytes);
    }
    Err(Error::UnsupportedFormat(
        "expected binary PGM (P5) or PNG".to_string(),
    ))
}

fn decode_pgm(bytes: &[u8]) -> Result<Grid<f64>> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::UnsupportedFormat("malformed PGM header".to_string()))?;
    }
    // exactly one whitespace byte separates header and raster
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::UnsupportedFormat("malformed PGM header".to_string()));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::UnsupportedFormat(format!("PGM maxval {maxval}")));
    }
    let depth = if maxval < 256 { 1 } else { 2 };
    let payload = &bytes[pos..];
    let needed = width * height * depth;
    if payload.len() < needed {
        return Err(Error::UnsupportedFormat(format!(
            "PGM raster has {} bytes, expected {needed}",
            payload.len()
        )));
    }
    let data = if depth == 1 {
        payload[..needed].iter().map(|&b| f64::from(b)).collect()
    } else {
        payload[..needed]
            .chunks_exact(2)
            .map(|c| f64::from(u16::from_be_bytes([c[0], c[1]])))
            .collect()
    };
    Ok(Grid::from_vec(height, width, data).expect("length checked"))
}

fn decode_png(bytes: &[u8]) -> Result<Grid<f64>> {
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
        .map_err(|e| Error::UnsupportedFormat(e.to_string()))?;
    let (width, height) = (img.width() as usize, img.height() as usize);
    if width == 0 || height == 0 {
        return Err(Error::EmptyImage);
    }
    let data: Vec<f64> = match img {
        image::DynamicImage::ImageLuma8(buf) => buf.into_raw().into_iter().map(f64::from).collect(),
        image::DynamicImage::ImageLuma16(buf) => {
            buf.into_raw().into_iter().map(f64::from).collect()
        }
        other => {
            return Err(Error::UnsupportedFormat(format!(
                "PNG color type {:?} is not grayscale",
                other.color()
            )))
        }
    };
    Ok(Grid::from_vec(height, width, data).expect("decoder dims"))
}

/// Writes the chip as an 8-bit binary PGM, rounding `v * 255`.
pub fn write_pgm(path: impl AsRef<Path>, chip: &ImageChip) -> Result<()> {
    let path = path.as_ref();
    let mut out = format!("P5\n{} {}\n255\n", chip.width(), chip.height()).into_bytes();
    out.extend(
        chip.pixels()
            .as_slice()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Writes raw 16-bit samples as a P5 PGM with maxval 65535.
pub fn write_pgm16(path: impl AsRef<Path>, height: usize, width: usize, samples: &[u16]) -> Result<()> {
    let path = path.as_ref();
    assert_eq!(samples.len(), height * width);
    let mut out = format!("P5\n{width} {height}\n65535\n").into_bytes();
    for s in samples {
        out.extend_from_slice(&s.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// A bright line segment. Coordinates are `[x, y]` = `[column, row]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub from: [f64; 2],
    pub to: [f64; 2],
    pub intensity: f64,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
}

fn default_half_width() -> f64 {
    1.0
}

/// A bright filled disk, centre given as `[x, y]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub center: [f64; 2],
    pub radius: f64,
    pub intensity: f64,
}

/// Geometry of a synthetic airplane-like scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub fuselage: Option<Segment>,
    #[serde(default)]
    pub wings: Vec<Segment>,
    #[serde(default)]
    pub engines: Vec<Disk>,
    #[serde(default)]
    pub clutter_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SynthSpec {
    pub fn empty(height: usize, width: usize) -> Self {
        SynthSpec {
            height,
            width,
            fuselage: None,
            wings: Vec::new(),
            engines: Vec::new(),
            clutter_sigma: 0.0,
            seed: 0,
        }
    }

    fn segments(&self) -> impl Iterator<Item = &Segment> {
        self.fuselage.iter().chain(self.wings.iter())
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::InvalidScene(format!(
                "chip {}x{} below {MIN_SIDE}x{MIN_SIDE}",
                self.height, self.width
            )));
        }
        if !(self.clutter_sigma >= 0.0) {
            return Err(Error::InvalidScene("clutter_sigma must be >= 0".into()));
        }
        let (xmax, ymax) = ((self.width - 1) as f64, (self.height - 1) as f64);
        let inside = |x: f64, y: f64, margin: f64| {
            x - margin >= 0.0 && y - margin >= 0.0 && x + margin <= xmax && y + margin <= ymax
        };
        let check_intensity = |v: f64| {
            if v > 0.0 && v <= 1.0 {
                Ok(())
            } else {
                Err(Error::InvalidScene(format!("intensity {v} outside (0, 1]")))
            }
        };
        for s in self.segments() {
            check_intensity(s.intensity)?;
            if !(s.half_width >= 0.0) {
                return Err(Error::InvalidScene("negative segment width".into()));
            }
            if !inside(s.from[0], s.from[1], 0.0) || !inside(s.to[0], s.to[1], 0.0) {
                return Err(Error::InvalidScene(format!(
                    "segment {:?} -> {:?} leaves the chip",
                    s.from, s.to
                )));
            }
        }
        for d in &self.engines {
            check_intensity(d.intensity)?;
            if !(d.radius > 0.0) || !inside(d.center[0], d.center[1], d.radius) {
                return Err(Error::InvalidScene(format!(
                    "disk at {:?} radius {} leaves the chip",
                    d.center, d.radius
                )));
            }
        }
        Ok(())
    }

    /// A randomly posed airplane: fuselage, main wings, tail plane and two or
    /// four engines, with mild speckle-like clutter.
    pub fn random_airplane(height: usize, width: usize, seed: u64) -> Self {
        let mut rng = SplitMix64::new(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.next_f64();
        let side = height.min(width) as f64;
        let cx = width as f64 / 2.0 + u(-0.08, 0.08) * side;
        let cy = height as f64 / 2.0 + u(-0.08, 0.08) * side;
        let heading = u(0.0, std::f64::consts::TAU);
        let (hx, hy) = (heading.cos(), heading.sin());
        // wing direction is perpendicular to the fuselage
        let (wx, wy) = (-hy, hx);
        let length = u(0.45, 0.6) * side;
        let span = length * u(0.75, 0.95);
        let at = |t: f64, s: f64| [cx + hx * t + wx * s, cy + hy * t + wy * s];

        let fuselage = Segment {
            from: at(-length / 2.0, 0.0),
            to: at(length / 2.0, 0.0),
            intensity: u(0.7, 1.0),
            half_width: 1.5,
        };
        let wing_root = length * u(0.0, 0.15);
        let sweep = length * u(0.05, 0.15);
        let mut wings = Vec::new();
        for side_sign in [-1.0, 1.0] {
            wings.push(Segment {
                from: at(wing_root, 0.0),
                to: at(wing_root - sweep, side_sign * span / 2.0),
                intensity: u(0.45, 0.8),
                half_width: 1.0,
            });
        }
        let tail = -length / 2.0 + length * 0.08;
        let tail_span = span * u(0.3, 0.4);
        for side_sign in [-1.0, 1.0] {
            wings.push(Segment {
                from: at(tail, 0.0),
                to: at(tail - sweep * 0.5, side_sign * tail_span / 2.0),
                intensity: u(0.4, 0.7),
                half_width: 1.0,
            });
        }
        let four = u(0.0, 1.0) < 0.5;
        let offsets: &[f64] = if four { &[0.3, 0.6] } else { &[0.4] };
        let mut engines = Vec::new();
        for &frac in offsets {
            for side_sign in [-1.0, 1.0] {
                let s = side_sign * frac * span / 2.0;
                let t = wing_root - sweep * frac + length * 0.04;
                engines.push(Disk {
                    center: at(t, s),
                    radius: u(1.8, 2.6),
                    intensity: u(0.85, 1.0),
                });
            }
        }
        SynthSpec {
            height,
            width,
            fuselage: Some(fuselage),
            wings,
            engines,
            clutter_sigma: 0.03,
            seed,
        }
    }

    /// Axis-aligned bounding box `(x_min, y_min, x_max, y_max)` of the
    /// rendered geometry, padded by the stroke widths and clamped to the chip.
    pub fn bbox(&self) -> Option<[f64; 4]> {
        let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
        let mut grow = |x: f64, y: f64, pad: f64| {
            b[0] = b[0].min(x - pad);
            b[1] = b[1].min(y - pad);
            b[2] = b[2].max(x + pad);
            b[3] = b[3].max(y + pad);
        };
        for s in self.segments() {
            grow(s.from[0], s.from[1], s.half_width);
            grow(s.to[0], s.to[1], s.half_width);
        }
        for d in &self.engines {
            grow(d.center[0], d.center[1], d.radius);
        }
        if !b[0].is_finite() {
            return None;
        }
        let (w, h) = ((self.width - 1) as f64, (self.height - 1) as f64);
        Some([
            b[0].floor().max(0.0),
            b[1].floor().max(0.0),
            b[2].ceil().min(w),
            b[3].ceil().min(h),
        ])
    }
}

fn segment_distance(s: &Segment, x: f64, y: f64) -> f64 {
    let (dx, dy) = (s.to[0] - s.from[0], s.to[1] - s.from[1]);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((x - s.from[0]) * dx + (y - s.from[1]) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (px, py) = (s.from[0] + t * dx, s.from[1] + t * dy);
    ((x - px).powi(2) + (y - py).powi(2)).sqrt()
}

/// Renders the scene. Shapes composite by maximum; clutter is additive
/// Gaussian noise clamped to `[0, 1]`. The ground truth lists segment
/// endpoints and disk centres with the clutter-free rendered intensity at
/// their nearest pixel as response.
pub fn synth_chip(spec: &SynthSpec) -> Result<(ImageChip, ScatterPointSet)> {
    spec.validate()?;
    let mut img = Grid::filled(spec.height, spec.width, 0.0f64);
    for s in spec.segments() {
        stamp(&mut img, s.from, s.to, s.half_width + 1.0, |x, y| {
            (segment_distance(s, x, y) <= s.half_width).then_some(s.intensity)
        });
    }
    for d in &spec.engines {
        stamp(&mut img, d.center, d.center, d.radius + 1.0, |x, y| {
            let r2 = (x - d.center[0]).powi(2) + (y - d.center[1]).powi(2);
            (r2 <= d.radius * d.radius).then_some(d.intensity)
        });
    }

    let mut truth = Vec::new();
    let mut push = |p: [f64; 2], scale: f64, img: &Grid<f64>| {
        let (r, c) = (p[1].round() as usize, p[0].round() as usize);
        truth.push(ScatterPoint {
            x: p[0],
            y: p[1],
            response: img[(r, c)],
            scale,
        });
    };
    for s in spec.segments() {
        push(s.from, s.half_width, &img);
        push(s.to, s.half_width, &img);
    }
    for d in &spec.engines {
        push(d.center, d.radius, &img);
    }

    if spec.clutter_sigma > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let noise = Normal::new(0.0, spec.clutter_sigma).expect("sigma checked");
        for v in img.as_mut_slice() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok((ImageChip::new(img)?, ScatterPointSet::new(truth)))
}

fn stamp(
    img: &mut Grid<f64>,
    a: [f64; 2],
    b: [f64; 2],
    pad: f64,
    value_at: impl Fn(f64, f64) -> Option<f64>,
) {
    let (h, w) = img.dims();
    let c0 = (a[0].min(b[0]) - pad).floor().max(0.0) as usize;
    let c1 = ((a[0].max(b[0]) + pad).ceil() as usize).min(w - 1);
    let r0 = (a[1].min(b[1]) - pad).floor().max(0.0) as usize;
    let r1 = ((a[1].max(b[1]) + pad).ceil() as usize).min(h - 1);
    for r in r0..=r1 {
        for c in c0..=c1 {
            if let Some(v) = value_at(c as f64, r as f64) {
                let cell = &mut img[(r, c)];
                *cell = cell.max(v);
            }
        }
    }
}

/// Augmentation knobs. `copies = 0` disables augmentation entirely.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub copies: u32,
    pub noise_sigma: f64,
    pub max_shift: usize,
    pub mirror: bool,
    pub rotate90: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            copies: 0,
            noise_sigma: 0.02,
            max_shift: 8,
            mirror: true,
            rotate90: false,
        }
    }
}

/// One augmented variant of `chip`: optional horizontal mirror, optional
/// quarter-turn rotation, integer translation with zero fill, then clamped
/// additive Gaussian noise.
pub fn augment(chip: &ImageChip, cfg: &AugmentConfig, seed: u64) -> ImageChip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut px = chip.pixels().clone();
    if cfg.mirror && rng.random_bool(0.5) {
        let w = px.width();
        px = Grid::from_fn(px.height(), w, |r, c| px[(r, w - 1 - c)]);
    }
    if cfg.rotate90 {
        for _ in 0..rng.random_range(0..4) {
            // clockwise quarter turn
            let (h, w) = px.dims();
            px = Grid::from_fn(w, h, |r, c| px[(h - 1 - c, r)]);
        }
    }
    if cfg.max_shift > 0 {
        let m = cfg.max_shift as i64;
        let dy = rng.random_range(-m..=m) as isize;
        let dx = rng.random_range(-m..=m) as isize;
        let (h, w) = px.dims();
        px = Grid::from_fn(h, w, |r, c| {
            let (sr, sc) = (r as isize - dy, c as isize - dx);
            if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
                px[(sr as usize, sc as usize)]
            } else {
                0.0
            }
        });
    }
    if cfg.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, cfg.noise_sigma).expect("finite sigma");
        for v in px.as_mut_slice() {
            *v = (*v + noise.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    ImageChip::new(px).expect("augmentation preserves chip invariants")
}
