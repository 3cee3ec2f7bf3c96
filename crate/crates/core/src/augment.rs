//! Video-level fake clip generation, standard training augmentations and
//! robustness perturbations.
//!
//! All operations are pure given an explicit RNG and keep values in `[0, 1]`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// A `C × L × H × W` video clip with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    tensor: Tensor<f32>,
}

impl Clip {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.rank() != 4 {
            return Err(Error::shape(
                "clip",
                format!("expected [C, L, H, W], got {:?}", tensor.shape()),
            ));
        }
        if let Some(v) = tensor.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(format!("clip value {v} outside [0, 1]")));
        }
        Ok(Clip { tensor })
    }

    /// Builds a clip, clamping every value into `[0, 1]`.
    pub fn from_clamped(mut tensor: Tensor<f32>) -> Result<Self> {
        for v in tensor.data_mut() {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Clip::new(tensor)
    }

    pub fn zeros(channels: usize, frames: usize, height: usize, width: usize) -> Self {
        Clip {
            tensor: Tensor::zeros([channels, frames, height, width]),
        }
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn into_tensor(self) -> Tensor<f32> {
        self.tensor
    }

    pub fn channels(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn frames(&self) -> usize {
        self.tensor.shape()[1]
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[3]
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.channels(), self.frames(), self.height(), self.width()]
    }

    fn plane(&self) -> usize {
        self.height() * self.width()
    }

    fn offset(&self, c: usize, t: usize) -> usize {
        (c * self.frames() + t) * self.plane()
    }

    /// Frame `t` as `C` consecutive `H × W` planes.
    pub fn frame(&self, t: usize) -> Vec<f32> {
        let p = self.plane();
        (0..self.channels())
            .flat_map(|c| self.tensor.data()[self.offset(c, t)..][..p].iter().copied())
            .collect()
    }

    pub fn set_frame(&mut self, t: usize, frame: &[f32]) {
        let p = self.plane();
        for c in 0..self.channels() {
            let off = self.offset(c, t);
            self.tensor.data_mut()[off..off + p].copy_from_slice(&frame[c * p..(c + 1) * p]);
        }
    }

    pub fn is_zero_frame(&self, t: usize) -> bool {
        self.frame(t).iter().all(|&v| v == 0.0)
    }

    /// Channel plane `c` of frame `t`.
    pub fn plane_mut(&mut self, c: usize, t: usize) -> &mut [f32] {
        let (off, p) = (self.offset(c, t), self.plane());
        &mut self.tensor.data_mut()[off..off + p]
    }

    pub fn plane_ref(&self, c: usize, t: usize) -> &[f32] {
        &self.tensor.data()[self.offset(c, t)..][..self.plane()]
    }

    /// Mean absolute difference between frames `t + 1` and `t`.
    pub fn frame_difference(&self, t: usize) -> f64 {
        let (a, b) = (self.frame(t), self.frame(t + 1));
        a.iter().zip(&b).map(|(x, y)| (y - x).abs() as f64).sum::<f64>() / a.len() as f64
    }

    /// Largest mean absolute consecutive-frame difference.
    pub fn max_frame_difference(&self) -> f64 {
        (0..self.frames().saturating_sub(1))
            .map(|t| self.frame_difference(t))
            .fold(0.0, f64::max)
    }

    /// Frames `[start, start + len)` as a new clip.
    pub fn window(&self, start: usize, len: usize) -> Result<Clip> {
        if len == 0 || start + len > self.frames() {
            return Err(Error::invalid(format!(
                "window [{start}, {}) outside {} frames",
                start + len,
                self.frames()
            )));
        }
        let mut out = Clip::zeros(self.channels(), len, self.height(), self.width());
        for t in 0..len {
            out.set_frame(t, &self.frame(start + t));
        }
        Ok(out)
    }
}

/// Soft `H × W` blending mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    tensor: Tensor<f32>,
}

impl Mask {
    pub fn new(tensor: Tensor<f32>) -> Result<Self> {
        if tensor.rank() != 2 {
            return Err(Error::shape("mask", format!("expected [H, W], got {:?}", tensor.shape())));
        }
        if tensor.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        Ok(Mask { tensor })
    }

    pub fn constant(height: usize, width: usize, value: f32) -> Result<Self> {
        Mask::new(Tensor::full([height, width], value))
    }

    pub fn tensor(&self) -> &Tensor<f32> {
        &self.tensor
    }

    pub fn height(&self) -> usize {
        self.tensor.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.tensor.shape()[1]
    }

    /// Fraction of pixels above one half.
    pub fn coverage(&self) -> f64 {
        let n = self.tensor.data().iter().filter(|&&v| v > 0.5).count();
        n as f64 / self.tensor.numel() as f64
    }

    pub fn data(&self) -> &[f32] {
        self.tensor.data()
    }
}

fn check_indices(what: &str, indices: &[usize], len: usize) -> Result<()> {
    if let Some(&i) = indices.iter().find(|&&i| i >= len) {
        return Err(Error::invalid(format!("{what} index {i} outside {len} frames")));
    }
    if indices.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid(format!("{what} indices must be strictly increasing")));
    }
    Ok(())
}

/// Removes the listed frames, shifts the survivors forward and zero-fills the tail.
pub fn temporal_dropout(clip: &Clip, drop: &[usize]) -> Result<Clip> {
    let len = clip.frames();
    check_indices("dropout", drop, len)?;
    if drop.len() == len {
        return Err(Error::invalid("temporal dropout would remove every frame"));
    }
    let mut out = Clip::zeros(clip.channels(), len, clip.height(), clip.width());
    let survivors = (0..len).filter(|t| drop.binary_search(t).is_err());
    for (dst, src) in survivors.enumerate() {
        out.set_frame(dst, &clip.frame(src));
    }
    Ok(out)
}

/// Duplicates the listed frames in place, shifts later frames backward and
/// truncates to the original length.
pub fn temporal_repeat(clip: &Clip, repeat: &[usize]) -> Result<Clip> {
    let len = clip.frames();
    check_indices("repeat", repeat, len)?;
    let order = (0..len)
        .flat_map(|t| {
            let n = if repeat.binary_search(&t).is_ok() { 2 } else { 1 };
            std::iter::repeat(t).take(n)
        })
        .take(len);
    let mut out = clip.clone();
    for (dst, src) in order.enumerate() {
        out.set_frame(dst, &clip.frame(src));
    }
    Ok(out)
}

/// `V^i = Vf^i * M + Vb^i * (1 - M)` for every frame and channel.
pub fn clip_blend(fg: &Clip, bg: &Clip, mask: &Mask) -> Result<Clip> {
    if fg.dims() != bg.dims() {
        return Err(Error::shape(
            "blend",
            format!("foreground {:?} vs background {:?}", fg.dims(), bg.dims()),
        ));
    }
    if mask.height() != fg.height() || mask.width() != fg.width() {
        return Err(Error::shape(
            "blend mask",
            format!(
                "mask {}x{} vs frames {}x{}",
                mask.height(),
                mask.width(),
                fg.height(),
                fg.width()
            ),
        ));
    }
    let m = mask.data();
    let mut out = bg.clone();
    for c in 0..fg.channels() {
        for t in 0..fg.frames() {
            let f = fg.plane_ref(c, t);
            for ((o, &fv), &mv) in out.plane_mut(c, t).iter_mut().zip(f).zip(m) {
                *o = (fv * mv + *o * (1.0 - mv)).clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Separable Gaussian blur of one plane with edge clamping. `sigma <= 0` is a no-op.
pub fn gaussian_blur_plane(plane: &mut [f32], height: usize, width: usize, sigma: f64) {
    if sigma <= 0.0 {
        return;
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = weights.iter().sum();
    let weights: Vec<f64> = weights.iter().map(|w| w / norm).collect();
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; plane.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let xx = clampi(x as isize + k as isize - radius, width);
                acc += w * plane[y * width + xx] as f64;
            }
            tmp[y * width + x] = acc as f32;
        }
    }
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (k, w) in weights.iter().enumerate() {
                let yy = clampi(y as isize + k as isize - radius, height);
                acc += w * tmp[yy * width + x] as f64;
            }
            plane[y * width + x] = (acc as f32).clamp(0.0, 1.0);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskShape {
    Ellipse,
    Polygon,
}

/// Knobs of [`random_mask_with`]. Training and probe data draw from disjoint
/// blur ranges.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskParams {
    pub shapes: Vec<MaskShape>,
    pub blur_sigma: (f64, f64),
    pub coverage: (f64, f64),
}

impl Default for MaskParams {
    fn default() -> Self {
        MaskParams {
            shapes: vec![MaskShape::Ellipse, MaskShape::Polygon],
            blur_sigma: (1.0, 3.0),
            coverage: (0.10, 0.60),
        }
    }
}

fn point_in_polygon(x: f64, y: f64, poly: &[(f64, f64)]) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

fn rasterize<R: Rng + ?Sized>(h: usize, w: usize, shape: MaskShape, area: f64, rng: &mut R) -> Vec<f32> {
    let (hf, wf) = (h as f64, w as f64);
    // base radius of a circle with the target area
    let r = (area * hf * wf / PI).sqrt();
    let cy = rng.gen_range(0.3..0.7) * hf;
    let cx = rng.gen_range(0.3..0.7) * wf;
    let mut out = vec![0.0f32; h * w];
    match shape {
        MaskShape::Ellipse => {
            let aspect: f64 = rng.gen_range(0.65..1.5);
            let (a, b) = (r * aspect.sqrt(), r / aspect.sqrt());
            let rot: f64 = rng.gen_range(0.0..PI);
            let (s, c) = rot.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                    if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                        out[y * w + x] = 1.0;
                    }
                }
            }
        }
        MaskShape::Polygon => {
            let n = rng.gen_range(5..=8);
            let phase: f64 = rng.gen_range(0.0..2.0 * PI);
            let poly: Vec<(f64, f64)> = (0..n)
                .map(|k| {
                    let ang = phase + 2.0 * PI * k as f64 / n as f64;
                    let rad = r * rng.gen_range(0.8..1.25);
                    (cx + rad * ang.cos(), cy + rad * ang.sin())
                })
                .collect();
            for y in 0..h {
                for x in 0..w {
                    if point_in_polygon(x as f64 + 0.5, y as f64 + 0.5, &poly) {
                        out[y * w + x] = 1.0;
                    }
                }
            }
        }
    }
    out
}

/// Random soft-edged ellipse or polygon covering 10–60% of the frame.
pub fn random_mask<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Result<Mask> {
    random_mask_with(height, width, &MaskParams::default(), rng)
}

pub fn random_mask_with<R: Rng + ?Sized>(height: usize, width: usize, params: &MaskParams, rng: &mut R) -> Result<Mask> {
    if height < 8 || width < 8 {
        return Err(Error::invalid(format!("mask needs at least 8x8 pixels, got {height}x{width}")));
    }
    if params.shapes.is_empty() {
        return Err(Error::invalid("mask params list no shapes"));
    }
    let (lo, hi) = params.coverage;
    // Rejection sampling; the shape area already targets the middle of the range.
    for _ in 0..64 {
        let shape = params.shapes[rng.gen_range(0..params.shapes.len())];
        let area = rng.gen_range(lo + 0.05 * (hi - lo)..hi - 0.05 * (hi - lo));
        let mut plane = rasterize(height, width, shape, area, rng);
        let (s0, s1) = params.blur_sigma;
        let sigma = if s1 > s0 { rng.gen_range(s0..s1) } else { s0 };
        gaussian_blur_plane(&mut plane, height, width, sigma);
        let mask = Mask::new(Tensor::new([height, width], plane)?)?;
        let cov = mask.coverage();
        if cov >= lo && cov <= hi {
            return Ok(mask);
        }
    }
    Err(Error::invalid("could not draw a mask inside the coverage range"))
}

// ---- standard augmentations ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AugToggles {
    pub flip: bool,
    pub cutout: bool,
    pub noise: bool,
}

impl Default for AugToggles {
    fn default() -> Self {
        AugToggles {
            flip: true,
            cutout: true,
            noise: true,
        }
    }
}

pub fn horizontal_flip(clip: &Clip) -> Clip {
    let (h, w) = (clip.height(), clip.width());
    let mut out = clip.clone();
    for c in 0..clip.channels() {
        for t in 0..clip.frames() {
            let plane = out.plane_mut(c, t);
            for y in 0..h {
                plane[y * w..(y + 1) * w].reverse();
            }
        }
    }
    out
}

/// Axis-aligned rectangle `[top, top + height) × [left, left + width)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && y < self.top + self.height && x >= self.left && x < self.left + self.width
    }
}

/// Zeroes the same rectangle in every frame and channel.
pub fn cutout(clip: &Clip, rect: Rect) -> Clip {
    let (h, w) = (clip.height(), clip.width());
    let mut out = clip.clone();
    for c in 0..clip.channels() {
        for t in 0..clip.frames() {
            let plane = out.plane_mut(c, t);
            for y in rect.top..(rect.top + rect.height).min(h) {
                for x in rect.left..(rect.left + rect.width).min(w) {
                    plane[y * w + x] = 0.0;
                }
            }
        }
    }
    out
}

pub fn random_rect<R: Rng + ?Sized>(height: usize, width: usize, rng: &mut R) -> Rect {
    let rh = rng.gen_range((height / 8).max(1)..=(height / 3).max(1));
    let rw = rng.gen_range((width / 8).max(1)..=(width / 3).max(1));
    Rect {
        top: rng.gen_range(0..=height - rh),
        left: rng.gen_range(0..=width - rw),
        height: rh,
        width: rw,
    }
}

/// Adds i.i.d. `N(0, sigma²)` noise and clamps. `sigma == 0` leaves the clip unchanged.
pub fn add_gaussian_noise<R: Rng + ?Sized>(clip: &Clip, sigma: f64, rng: &mut R) -> Clip {
    if sigma <= 0.0 {
        return clip.clone();
    }
    let dist = Normal::new(0.0, sigma).expect("finite sigma");
    let mut t = clip.tensor.clone();
    for v in t.data_mut() {
        *v = (*v + dist.sample(rng) as f32).clamp(0.0, 1.0);
    }
    Clip { tensor: t }
}

/// Label-preserving augmentations. Each enabled one fires with probability 0.5;
/// flip and cutout act identically on every frame, noise sigma is drawn from `[0, 0.05]`.
pub fn standard_augs<R: Rng + ?Sized>(clip: &Clip, rng: &mut R, toggles: AugToggles) -> Clip {
    let mut out = clip.clone();
    if toggles.flip && rng.gen_bool(0.5) {
        out = horizontal_flip(&out);
    }
    if toggles.cutout && rng.gen_bool(0.5) {
        let rect = random_rect(out.height(), out.width(), rng);
        out = cutout(&out, rect);
    }
    if toggles.noise && rng.gen_bool(0.5) {
        let sigma = rng.gen_range(0.0..=0.05);
        out = add_gaussian_noise(&out, sigma, rng);
    }
    out
}

// ---- perturbations ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    Blur,
    Block,
    Contrast,
}

impl PerturbKind {
    pub const ALL: [PerturbKind; 3] = [PerturbKind::Blur, PerturbKind::Block, PerturbKind::Contrast];
}

impl FromStr for PerturbKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blur" => Ok(PerturbKind::Blur),
            "block" => Ok(PerturbKind::Block),
            "contrast" => Ok(PerturbKind::Contrast),
            other => Err(Error::invalid(format!("unknown perturbation `{other}` (blur|block|contrast)"))),
        }
    }
}

impl fmt::Display for PerturbKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PerturbKind::Blur => "blur",
            PerturbKind::Block => "block",
            PerturbKind::Contrast => "contrast",
        })
    }
}

pub const MAX_PERTURB_LEVEL: usize = 5;
/// Gaussian sigma (pixels) per level.
pub const BLUR_SIGMA: [f64; 6] = [0.0, 0.5, 1.0, 1.5, 2.0, 3.0];
/// Number of gray blocks per level.
pub const BLOCK_COUNT: [usize; 6] = [0, 1, 2, 4, 6, 8];
/// Block side as a fraction of the shorter frame side.
pub const BLOCK_SIZE: [f64; 6] = [0.0, 0.125, 0.125, 0.1875, 0.1875, 0.25];
/// Contrast factor about 0.5 per level.
pub const CONTRAST_FACTOR: [f64; 6] = [1.0, 0.85, 0.7, 0.55, 0.4, 0.25];

/// `0.5 + factor * (x - 0.5)` per pixel.
pub fn change_contrast(clip: &Clip, factor: f64) -> Clip {
    if factor == 1.0 {
        return clip.clone();
    }
    let f = factor as f32;
    let mut t = clip.tensor.clone();
    for v in t.data_mut() {
        *v = (0.5 + f * (*v - 0.5)).clamp(0.0, 1.0);
    }
    Clip { tensor: t }
}

pub fn blur_frames(clip: &Clip, sigma: f64) -> Clip {
    let (h, w) = (clip.height(), clip.width());
    let mut out = clip.clone();
    for c in 0..clip.channels() {
        for t in 0..clip.frames() {
            gaussian_blur_plane(out.plane_mut(c, t), h, w, sigma);
        }
    }
    out
}

/// Robustness perturbation at severity `level` (0 is the identity).
pub fn perturb<R: Rng + ?Sized>(clip: &Clip, kind: PerturbKind, level: usize, rng: &mut R) -> Result<Clip> {
    if level > MAX_PERTURB_LEVEL {
        return Err(Error::invalid(format!("perturbation level {level} outside 0..={MAX_PERTURB_LEVEL}")));
    }
    if level == 0 {
        return Ok(clip.clone());
    }
    Ok(match kind {
        PerturbKind::Blur => blur_frames(clip, BLUR_SIGMA[level]),
        PerturbKind::Contrast => change_contrast(clip, CONTRAST_FACTOR[level]),
        PerturbKind::Block => {
            let (h, w) = (clip.height(), clip.width());
            let side = ((h.min(w) as f64 * BLOCK_SIZE[level]).round() as usize).max(1);
            let mut out = clip.clone();
            for _ in 0..BLOCK_COUNT[level] {
                let top = rng.gen_range(0..=h - side);
                let left = rng.gen_range(0..=w - side);
                let gray: f32 = rng.gen_range(0.0..=1.0);
                for c in 0..clip.channels() {
                    for t in 0..clip.frames() {
                        let plane = out.plane_mut(c, t);
                        for y in top..top + side {
                            plane[y * w + left..y * w + left + side].fill(gray);
                        }
                    }
                }
            }
            out
        }
    })
}

// ---- fake clip generation ----

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FakeKind {
    TemporalDropout,
    TemporalRepeat,
    Blend,
}

impl FakeKind {
    pub const ALL: [FakeKind; 3] = [FakeKind::TemporalDropout, FakeKind::TemporalRepeat, FakeKind::Blend];
}

/// `1..=ceil(L/4)` distinct sorted frame indices drawn from `0..upper`.
pub fn random_frame_indices<R: Rng + ?Sized>(frames: usize, upper: usize, rng: &mut R) -> Vec<usize> {
    let max = frames.div_ceil(4).max(1).min(upper);
    let count = rng.gen_range(1..=max);
    let mut idx = sample(rng, upper, count).into_vec();
    idx.sort_unstable();
    idx
}

/// Random temporal dropout. Requires at least two frames.
pub fn random_temporal_dropout<R: Rng + ?Sized>(clip: &Clip, rng: &mut R) -> Result<Clip> {
    if clip.frames() < 2 {
        return Err(Error::invalid("temporal dropout needs at least two frames"));
    }
    let idx = random_frame_indices(clip.frames(), clip.frames(), rng);
    temporal_dropout(clip, &idx)
}

/// Random temporal repeat; the last frame is never chosen because repeating it
/// would be truncated away.
pub fn random_temporal_repeat<R: Rng + ?Sized>(clip: &Clip, rng: &mut R) -> Result<Clip> {
    if clip.frames() < 2 {
        return Err(Error::invalid("temporal repeat needs at least two frames"));
    }
    let idx = random_frame_indices(clip.frames(), clip.frames() - 1, rng);
    temporal_repeat(clip, &idx)
}

/// Same clip translated by `(dy, dx)` with edge clamping, used as a foreground
/// taken from the same video.
pub fn translate(clip: &Clip, dy: isize, dx: isize) -> Clip {
    let (h, w) = (clip.height(), clip.width());
    let mut out = clip.clone();
    for c in 0..clip.channels() {
        for t in 0..clip.frames() {
            let src = clip.plane_ref(c, t);
            let dst = out.plane_mut(c, t);
            for y in 0..h {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for x in 0..w {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    dst[y * w + x] = src[sy * w + sx];
                }
            }
        }
    }
    out
}
