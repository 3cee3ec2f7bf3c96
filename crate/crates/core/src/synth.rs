//! Procedural benchmark data.
//!
//! "Real" clips are smoothly moving textured ellipses over a drifting textured
//! background. Fakes are derived from real clips with the video-level
//! augmentations, and the two probe sets isolate one artifact family each:
//! the temporal set only reorders or zeroes frames, the spatial set only blends
//! two temporally coherent clips under a fixed mask.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::augment::{
    clip_blend, random_frame_indices, random_mask_with, temporal_dropout, temporal_repeat, Clip, FakeKind, Mask,
    MaskParams, MaskShape,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Upper bound on the mean absolute consecutive-frame difference of a real clip.
pub const MAX_REAL_FRAME_DIFF: f64 = 0.1;

/// Record kind byte of the dataset file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ClipKind {
    Real = 0,
    TemporalDropout = 1,
    TemporalRepeat = 2,
    Blend = 3,
}

impl ClipKind {
    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ClipKind::Real),
            1 => Some(ClipKind::TemporalDropout),
            2 => Some(ClipKind::TemporalRepeat),
            3 => Some(ClipKind::Blend),
            _ => None,
        }
    }

    pub fn label(self) -> u8 {
        u8::from(self != ClipKind::Real)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ClipKind::Real => "real",
            ClipKind::TemporalDropout => "tdrop",
            ClipKind::TemporalRepeat => "trepeat",
            ClipKind::Blend => "blend",
        }
    }
}

impl From<FakeKind> for ClipKind {
    fn from(k: FakeKind) -> Self {
        match k {
            FakeKind::TemporalDropout => ClipKind::TemporalDropout,
            FakeKind::TemporalRepeat => ClipKind::TemporalRepeat,
            FakeKind::Blend => ClipKind::Blend,
        }
    }
}

impl fmt::Display for ClipKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ClipKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "real" => Ok(ClipKind::Real),
            "tdrop" => Ok(ClipKind::TemporalDropout),
            "trepeat" => Ok(ClipKind::TemporalRepeat),
            "blend" => Ok(ClipKind::Blend),
            _ => Err(Error::invalid(format!("unknown clip kind `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipRecord {
    pub id: u32,
    pub label: u8,
    pub kind: ClipKind,
    pub clip: Clip,
}

/// One manifest line: which generator seed produced a record and how.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: u32,
    pub label: u8,
    pub kind: ClipKind,
    pub seed: u64,
    /// Artifact parameters, e.g. `drop=1,5` or `fg=123,start=4,sigma=1.52`.
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClipDataset {
    pub records: Vec<ClipRecord>,
    pub manifest: Vec<ManifestEntry>,
}

impl ClipDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    pub fn kind_histogram(&self) -> BTreeMap<ClipKind, usize> {
        let mut h = BTreeMap::new();
        for r in &self.records {
            *h.entry(r.kind).or_insert(0) += 1;
        }
        h
    }

    /// Manifest as tab-separated text with a header line.
    pub fn manifest_text(&self) -> String {
        let mut out = String::from("id\tlabel\tkind\tseed\tdetail\n");
        for m in &self.manifest {
            out.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", m.id, m.label, m.kind, m.seed, m.detail));
        }
        out
    }

    fn push(&mut self, kind: ClipKind, clip: Clip, seed: u64, detail: String) {
        let id = self.records.len() as u32;
        let label = kind.label();
        self.records.push(ClipRecord { id, label, kind, clip });
        self.manifest.push(ManifestEntry {
            id,
            label,
            kind,
            seed,
            detail,
        });
    }
}

/// Which generator stream a clip seed belongs to. Each split owns the seeds
/// whose top byte equals its tag, so no two splits share a source video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train = 1,
    Val = 2,
    TemporalProbe = 3,
    SpatialProbe = 4,
}

impl Split {
    pub fn of_seed(seed: u64) -> Option<Split> {
        match seed >> 56 {
            1 => Some(Split::Train),
            2 => Some(Split::Val),
            3 => Some(Split::TemporalProbe),
            4 => Some(Split::SpatialProbe),
            _ => None,
        }
    }
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th source video of `split`.
pub fn video_seed(base: u64, split: Split, index: u64) -> u64 {
    ((split as u64) << 56) | ((splitmix(base) & 0x00FF_FFFF) << 32) | (index & 0xFFFF_FFFF)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub train_real: usize,
    pub train_fake: usize,
    pub val_real: usize,
    pub val_fake: usize,
    pub probe_real: usize,
    pub probe_fake: usize,
    /// `[C, T, H, W]`.
    pub clip_dims: [usize; 4],
    pub seed: u64,
    /// Relative weights of temporal dropout, temporal repeat and blending among training fakes.
    pub mix: [f64; 3],
    /// Probability that a blend takes foreground and background from one video.
    pub same_video_prob: f64,
    pub train_mask: MaskParams,
    pub probe_mask: MaskParams,
    /// Replaces every generated blending mask with this constant.
    pub mask_override: Option<f32>,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            train_real: 160,
            train_fake: 160,
            val_real: 32,
            val_fake: 32,
            probe_real: 64,
            probe_fake: 64,
            clip_dims: [3, 8, 32, 32],
            seed: 0,
            mix: [1.0, 1.0, 1.0],
            same_video_prob: 0.5,
            train_mask: MaskParams {
                shapes: vec![MaskShape::Ellipse, MaskShape::Polygon],
                blur_sigma: (1.0, 2.0),
                coverage: (0.10, 0.60),
            },
            probe_mask: MaskParams {
                shapes: vec![MaskShape::Ellipse, MaskShape::Polygon],
                blur_sigma: (2.0, 3.0),
                coverage: (0.10, 0.60),
            },
            mask_override: None,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let [c, t, h, w] = self.clip_dims;
        if c == 0 || t < 2 || h < 8 || w < 8 {
            return Err(Error::invalid(format!(
                "clip dims {:?} need C >= 1, T >= 2, H, W >= 8",
                self.clip_dims
            )));
        }
        if self.mix.iter().any(|&m| !(m >= 0.0)) || self.mix.iter().sum::<f64>() <= 0.0 {
            return Err(Error::invalid("fake mix weights must be non-negative with a positive sum"));
        }
        if !(0.0..=1.0).contains(&self.same_video_prob) {
            return Err(Error::invalid("same_video_prob must lie in [0, 1]"));
        }
        let (a, b) = (self.train_mask.blur_sigma, self.probe_mask.blur_sigma);
        if a.0 < b.1 && b.0 < a.1 {
            return Err(Error::invalid(format!(
                "training blur range {a:?} overlaps probe blur range {b:?}"
            )));
        }
        Ok(())
    }

    pub fn mix_probabilities(&self) -> [f64; 3] {
        let s: f64 = self.mix.iter().sum();
        self.mix.map(|m| m / s)
    }
}

// ---- real clip rendering ----

struct Grating {
    amp: f64,
    freq: f64,
    dir: (f64, f64),
    phase: f64,
}

impl Grating {
    fn random<R: Rng>(rng: &mut R, amp: (f64, f64), freq: (f64, f64)) -> Self {
        let theta: f64 = rng.gen_range(0.0..PI);
        Grating {
            amp: rng.gen_range(amp.0..amp.1),
            freq: rng.gen_range(freq.0..freq.1),
            dir: (theta.cos(), theta.sin()),
            phase: rng.gen_range(0.0..2.0 * PI),
        }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        self.amp * (self.freq * (x * self.dir.0 + y * self.dir.1) + self.phase).sin()
    }
}

struct Scene {
    bg_color: Vec<f64>,
    bg_texture: Vec<Grating>,
    bg_velocity: (f64, f64),
    fg_color: Vec<f64>,
    fg_texture: Vec<Grating>,
    axes: (f64, f64),
    tilt: f64,
    start: (f64, f64),
    velocity: (f64, f64),
    wobble: (f64, f64, f64),
    spots: Vec<(f64, f64, f64)>,
    gain: (f64, f64, f64),
}

impl Scene {
    fn random(seed: u64, channels: usize, h: f64, w: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = h.min(w);
        let bg_color = (0..channels).map(|_| rng.gen_range(0.2..0.55)).collect();
        let fg_color = (0..channels).map(|_| rng.gen_range(0.45..0.8)).collect();
        let bg_texture = (0..2).map(|_| Grating::random(&mut rng, (0.04, 0.08), (0.3, 0.8))).collect();
        let fg_texture = (0..2).map(|_| Grating::random(&mut rng, (0.03, 0.07), (0.5, 1.2))).collect();
        let ang: f64 = rng.gen_range(0.0..2.0 * PI);
        let speed = rng.gen_range(0.6..1.2);
        let bg_ang: f64 = rng.gen_range(0.0..2.0 * PI);
        let bg_speed = rng.gen_range(0.2..0.5);
        let spots = (0..3)
            .map(|_| {
                (
                    rng.gen_range(-0.45..0.45),
                    rng.gen_range(-0.45..0.45),
                    rng.gen_range(0.08..0.16),
                )
            })
            .collect();
        Scene {
            bg_color,
            bg_texture,
            bg_velocity: (bg_speed * bg_ang.cos(), bg_speed * bg_ang.sin()),
            fg_color,
            fg_texture,
            axes: (rng.gen_range(0.2..0.3) * scale, rng.gen_range(0.25..0.35) * scale),
            tilt: rng.gen_range(-0.4..0.4),
            start: (rng.gen_range(0.35..0.65) * w, rng.gen_range(0.35..0.65) * h),
            velocity: (speed * ang.cos(), speed * ang.sin()),
            wobble: (rng.gen_range(0.5..1.5), rng.gen_range(0.2..0.5), rng.gen_range(0.0..2.0 * PI)),
            spots,
            gain: (rng.gen_range(0.02..0.06), rng.gen_range(0.1..0.3), rng.gen_range(0.0..2.0 * PI)),
        }
    }

    fn render(&self, clip: &mut Clip, start_frame: usize) {
        let (h, w) = (clip.height(), clip.width());
        for t in 0..clip.frames() {
            let tf = (start_frame + t) as f64;
            // face center: linear drift plus a gentle perpendicular sway, reflected inside the frame
            let (amp, freq, ph) = self.wobble;
            let sway = amp * (freq * tf + ph).sin();
            let cx = reflect(self.start.0 + self.velocity.0 * tf - sway * self.velocity.1, 0.3 * w as f64, 0.7 * w as f64);
            let cy = reflect(self.start.1 + self.velocity.1 * tf + sway * self.velocity.0, 0.3 * h as f64, 0.7 * h as f64);
            let gain = 1.0 + self.gain.0 * (self.gain.1 * tf + self.gain.2).sin();
            let (bx, by) = (self.bg_velocity.0 * tf, self.bg_velocity.1 * tf);
            let (s, c) = self.tilt.sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let bg_tex: f64 = self.bg_texture.iter().map(|g| g.eval(px + bx, py + by)).sum();
                    let (dx, dy) = (px - cx, py - cy);
                    let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                    let r = ((u / self.axes.0).powi(2) + (v / self.axes.1).powi(2)).sqrt();
                    // one-pixel antialiased rim
                    let edge = ((1.0 - r) * self.axes.0.min(self.axes.1) + 0.5).clamp(0.0, 1.0);
                    let fg_tex: f64 = self.fg_texture.iter().map(|g| g.eval(u, v)).sum();
                    let mut shade = 0.0;
                    for &(sx, sy, sr) in &self.spots {
                        let d2 = ((u / self.axes.0 - sx).powi(2) + (v / self.axes.1 - sy).powi(2)) / (sr * sr);
                        shade += 0.25 * (-d2).exp();
                    }
                    for ch in 0..clip.channels() {
                        let bgv = self.bg_color[ch] + bg_tex;
                        let fgv = self.fg_color[ch] + fg_tex - shade;
                        let val = gain * (edge * fgv + (1.0 - edge) * bgv);
                        clip.plane_mut(ch, t)[y * w + x] = val.clamp(0.0, 1.0) as f32;
                    }
                }
            }
        }
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let span = hi - lo;
    let m = (v - lo).rem_euclid(2.0 * span);
    lo + if m > span { 2.0 * span - m } else { m }
}

/// Frames `[start_frame, start_frame + T)` of the procedural video `seed`.
pub fn render_video(seed: u64, dims: [usize; 4], start_frame: usize) -> Clip {
    let [c, t, h, w] = dims;
    let scene = Scene::random(seed, c, h as f64, w as f64);
    let mut clip = Clip::zeros(c, t, h, w);
    scene.render(&mut clip, start_frame);
    clip
}

/// Temporally coherent pristine clip. Deterministic per seed.
pub fn gen_real_clip(seed: u64, dims: [usize; 4]) -> Clip {
    render_video(seed, dims, 0)
}

fn rng_for(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix(seed ^ splitmix(salt)))
}

fn fmt_indices(idx: &[usize]) -> String {
    idx.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

/// Temporal fake from source video `seed`.
fn temporal_fake(seed: u64, dims: [usize; 4], kind: FakeKind) -> Result<(Clip, String)> {
    let src = gen_real_clip(seed, dims);
    let mut rng = rng_for(seed, 0x7E4D);
    let frames = src.frames();
    match kind {
        FakeKind::TemporalDropout => {
            let idx = random_frame_indices(frames, frames, &mut rng);
            Ok((temporal_dropout(&src, &idx)?, format!("drop={}", fmt_indices(&idx))))
        }
        FakeKind::TemporalRepeat => {
            let idx = random_frame_indices(frames, frames - 1, &mut rng);
            Ok((temporal_repeat(&src, &idx)?, format!("repeat={}", fmt_indices(&idx))))
        }
        FakeKind::Blend => unreachable!("blend fakes are built by blend_fake"),
    }
}

/// The pieces of a generated blend fake, enough to check it against its sources.
#[derive(Debug, Clone)]
pub struct BlendParts {
    pub foreground: Clip,
    pub background: Clip,
    pub mask: Mask,
    pub detail: String,
}

/// Regenerates the sources and mask of the blend fake whose background video is `seed`.
pub fn blend_parts(
    seed: u64,
    dims: [usize; 4],
    split: Split,
    spec: &DatasetSpec,
    mask_params: &MaskParams,
) -> Result<BlendParts> {
    let mut rng = rng_for(seed, 0xB1E4);
    let background = gen_real_clip(seed, dims);
    let same_video = rng.gen_bool(spec.same_video_prob);
    let (foreground, detail) = if same_video {
        let offset = rng.gen_range(dims[1]..3 * dims[1]);
        (render_video(seed, dims, offset), format!("fg=self,start={offset}"))
    } else {
        // another video of the same split
        let other = video_seed(spec.seed, split, 0x8000_0000 | rng.gen_range(0..0x7FFF_FFFFu64));
        (gen_real_clip(other, dims), format!("fg={other}"))
    };
    let mask = match spec.mask_override {
        Some(v) => Mask::constant(dims[2], dims[3], v)?,
        None => random_mask_with(dims[2], dims[3], mask_params, &mut rng)?,
    };
    let detail = format!("{detail},coverage={:.3}", mask.coverage());
    Ok(BlendParts {
        foreground,
        background,
        mask,
        detail,
    })
}

fn add_reals(ds: &mut ClipDataset, spec: &DatasetSpec, split: Split, count: usize) {
    for i in 0..count {
        let seed = video_seed(spec.seed, split, i as u64);
        ds.push(ClipKind::Real, gen_real_clip(seed, spec.clip_dims), seed, String::new());
    }
}

fn fake_seed(spec: &DatasetSpec, split: Split, i: usize) -> u64 {
    // fakes use source videos disjoint from the real clips of the same split
    video_seed(spec.seed, split, 0x4000_0000 + i as u64)
}

/// Probe set whose fakes only drop or repeat frames of real clips.
pub fn build_temporal_set(spec: &DatasetSpec) -> Result<ClipDataset> {
    spec.validate()?;
    let mut ds = ClipDataset::default();
    add_reals(&mut ds, spec, Split::TemporalProbe, spec.probe_real);
    for i in 0..spec.probe_fake {
        let seed = fake_seed(spec, Split::TemporalProbe, i);
        let kind = if i % 2 == 0 {
            FakeKind::TemporalDropout
        } else {
            FakeKind::TemporalRepeat
        };
        let (clip, detail) = temporal_fake(seed, spec.clip_dims, kind)?;
        ds.push(kind.into(), clip, seed, detail);
    }
    Ok(ds)
}

/// Probe set whose fakes are blends of two coherent clips under a fixed mask.
pub fn build_spatial_set(spec: &DatasetSpec) -> Result<ClipDataset> {
    spec.validate()?;
    let mut ds = ClipDataset::default();
    add_reals(&mut ds, spec, Split::SpatialProbe, spec.probe_real);
    for i in 0..spec.probe_fake {
        let seed = fake_seed(spec, Split::SpatialProbe, i);
        let parts = blend_parts(seed, spec.clip_dims, Split::SpatialProbe, spec, &spec.probe_mask)?;
        let clip = clip_blend(&parts.foreground, &parts.background, &parts.mask)?;
        ds.push(ClipKind::Blend, clip, seed, parts.detail);
    }
    Ok(ds)
}

fn build_mixed(spec: &DatasetSpec, split: Split, reals: usize, fakes: usize) -> Result<ClipDataset> {
    spec.validate()?;
    let mut ds = ClipDataset::default();
    add_reals(&mut ds, spec, split, reals);
    let probs = spec.mix_probabilities();
    let mut kind_rng = rng_for(spec.seed, 0x6D1C ^ split as u64);
    for i in 0..fakes {
        let seed = fake_seed(spec, split, i);
        let u: f64 = kind_rng.gen();
        let kind = if u < probs[0] {
            FakeKind::TemporalDropout
        } else if u < probs[0] + probs[1] {
            FakeKind::TemporalRepeat
        } else {
            FakeKind::Blend
        };
        let (clip, detail) = match kind {
            FakeKind::Blend => {
                let p = blend_parts(seed, spec.clip_dims, split, spec, &spec.train_mask)?;
                (clip_blend(&p.foreground, &p.background, &p.mask)?, p.detail)
            }
            k => temporal_fake(seed, spec.clip_dims, k)?,
        };
        ds.push(kind.into(), clip, seed, detail);
    }
    Ok(ds)
}

/// Real clips plus fakes of all three kinds in the proportions of `spec.mix`.
pub fn build_training_set(spec: &DatasetSpec) -> Result<ClipDataset> {
    build_mixed(spec, Split::Train, spec.train_real, spec.train_fake)
}

/// Held-out split drawn like the training set, for validation AUC.
pub fn build_validation_set(spec: &DatasetSpec) -> Result<ClipDataset> {
    build_mixed(spec, Split::Val, spec.val_real, spec.val_fake)
}

/// Regenerates the pristine source of a temporal fake from its manifest entry.
pub fn temporal_source(entry: &ManifestEntry, dims: [usize; 4]) -> Clip {
    gen_real_clip(entry.seed, dims)
}

/// Stacks clips into a `[B, C, T, H, W]` batch.
pub fn batch_of(clips: &[&Clip]) -> Result<Tensor<f32>> {
    let tensors: Vec<&Tensor<f32>> = clips.iter().map(|c| c.tensor()).collect();
    Tensor::stack(&tensors)
}
