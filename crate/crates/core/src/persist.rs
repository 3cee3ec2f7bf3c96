//! Files: the VCLP clip dataset, the AFCK checkpoint, key=value run
//! configuration, and PGM heatmaps. Every multi-byte integer and float is
//! little-endian.

use std::fs;
use std::path::Path;

use crate::augment::{AugToggles, Clip, MaskParams};
use crate::autodiff::{BnConfig, Reduction};
use crate::error::{Error, Result};
use crate::model::{build_model, BlockSpec, KernelShape, Model, ModelSpec, StemSpec};
use crate::partition::{classify_param, ParamGroup};
use crate::synth::{ClipDataset, ClipKind, ClipRecord, DatasetSpec, ManifestEntry};
use crate::tensor::{DType, Element, Tensor};
use crate::trainer::{FreezeSchedule, SgdState, TrainConfig, TrainState};

pub const DATASET_MAGIC: &[u8; 4] = b"VCLP";
pub const DATASET_VERSION: u32 = 1;
pub const CHECKPOINT_MAGIC: &[u8; 4] = b"AFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

const MOMENTUM_PREFIX: &str = "momentum/";

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn to_u32(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::invalid(format!("{what} {v} does not fit in 32 bits")))
}

/// Cursor that reports truncation and bad values with the byte offset.
struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    fn fail(&self, offset: usize, msg: impl Into<String>) -> Error {
        Error::Format {
            what: self.what,
            offset: offset as u64,
            msg: msg.into(),
        }
    }

    fn take(&mut self, n: usize, section: &str) -> Result<&'a [u8]> {
        let left = self.bytes.len() - self.pos;
        if n > left {
            return Err(self.fail(
                self.pos,
                format!("truncated {section}: need {n} bytes, {left} left"),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, section: &str) -> Result<u8> {
        Ok(self.take(1, section)?[0])
    }

    fn u32(&mut self, section: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, section: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, section)?.try_into().expect("8 bytes")))
    }

    fn header(&mut self, magic: &[u8; 4], version: u32) -> Result<()> {
        let got = self.take(4, "magic")?;
        if got != magic {
            return Err(self.fail(0, format!("bad magic {got:?}, expected {:?}", String::from_utf8_lossy(magic))));
        }
        let v = self.u32("version")?;
        if v != version {
            return Err(self.fail(4, format!("unsupported version {v}, expected {version}")));
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(self.fail(
                self.pos,
                format!("{} trailing bytes after the last section", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

// ---- clip dataset ----

pub fn encode_dataset(data: &ClipDataset) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(DATASET_MAGIC);
    put_u32(&mut out, DATASET_VERSION);
    put_u32(&mut out, to_u32(data.len(), "record count")?);
    for r in &data.records {
        put_u32(&mut out, r.id);
        out.push(r.label);
        out.push(r.kind as u8);
        for d in r.clip.dims() {
            put_u32(&mut out, to_u32(d, "clip extent")?);
        }
        for &v in r.clip.tensor().data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses a dataset file. The manifest is not part of the format and comes back empty.
pub fn decode_dataset(bytes: &[u8]) -> Result<ClipDataset> {
    let mut r = Reader::new(bytes, "dataset");
    r.header(DATASET_MAGIC, DATASET_VERSION)?;
    let count = r.u32("record count")?;
    let mut data = ClipDataset::default();
    for i in 0..count {
        let start = r.pos;
        let section = format!("record {i} header");
        let id = r.u32(&section)?;
        let label = r.u8(&section)?;
        let kind_code = r.u8(&section)?;
        let kind = ClipKind::from_code(kind_code)
            .ok_or_else(|| r.fail(start + 5, format!("record {i}: unknown kind byte {kind_code}")))?;
        if label != kind.label() {
            return Err(r.fail(start + 4, format!("record {i}: label {label} does not fit kind {kind}")));
        }
        let mut dims = [0usize; 4];
        for d in &mut dims {
            *d = r.u32(&section)? as usize;
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(r.fail(start + 6, format!("record {i}: zero extent in {dims:?}")));
        }
        let n: usize = dims.iter().product();
        let values_at = r.pos;
        let raw = r.take(n * 4, &format!("record {i} values"))?;
        let values: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        if let Some(k) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(r.fail(values_at + 4 * k, format!("record {i}: value {} outside [0, 1]", values[k])));
        }
        let clip = Clip::new(Tensor::new(dims.to_vec(), values)?)?;
        data.records.push(ClipRecord { id, label, kind, clip });
    }
    r.finish()?;
    Ok(data)
}

pub fn save_dataset(data: &ClipDataset, path: &Path) -> Result<()> {
    write_file(path, &encode_dataset(data)?)
}

pub fn load_dataset(path: &Path) -> Result<ClipDataset> {
    decode_dataset(&read_file(path)?)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let bad = |msg: &str| Error::Config {
            line: n + 1,
            msg: format!("manifest: {msg}"),
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 5 {
            return Err(bad("expected 5 tab-separated columns"));
        }
        out.push(ManifestEntry {
            id: cols[0].parse().map_err(|_| bad("bad id"))?,
            label: cols[1].parse().map_err(|_| bad("bad label"))?,
            kind: cols[2].parse().map_err(|_| bad("bad kind"))?,
            seed: cols[3].parse().map_err(|_| bad("bad seed"))?,
            detail: cols[4].to_string(),
        });
    }
    Ok(out)
}

// ---- model spec text ----

fn fmt_kernel(k: KernelShape) -> String {
    format!("{}x{}x{}", k[0], k[1], k[2])
}

fn parse_kernel(s: &str) -> Option<KernelShape> {
    let v: Vec<usize> = s.split('x').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    v.try_into().ok()
}

fn parse_usizes(s: &str, sep: char) -> Option<Vec<usize>> {
    s.split(sep).map(|p| p.trim().parse().ok()).collect()
}

/// Lines `input_shape=`, `conv_bias=`, `head_width=`, `stem=` and one `block=` per block.
pub fn model_spec_lines(spec: &ModelSpec) -> Vec<String> {
    let s = &spec.stem;
    let mut lines = vec![
        format!(
            "input_shape={}",
            spec.input_shape.map(|d| d.to_string()).join(",")
        ),
        format!("conv_bias={}", spec.conv_bias),
        format!("head_width={}", spec.head_width),
        format!(
            "stem={},{},{},{},{}",
            s.in_channels,
            s.out_channels,
            fmt_kernel(s.spatial_kernel),
            fmt_kernel(s.temporal_kernel),
            s.spatial_stride
        ),
    ];
    for b in &spec.blocks {
        lines.push(format!(
            "block={},{},{},{},{},{},{}",
            b.in_channels,
            b.mid_channels,
            b.out_channels,
            b.spatial_stride,
            u8::from(b.has_projection),
            fmt_kernel(b.temporal_kernel),
            fmt_kernel(b.spatial_kernel)
        ));
    }
    lines
}

fn parse_model_spec_lines<'a>(lines: impl Iterator<Item = (usize, &'a str, &'a str)>) -> Result<ModelSpec> {
    let mut input_shape = None;
    let mut conv_bias = false;
    let mut head_width = None;
    let mut stem = None;
    let mut blocks = Vec::new();
    for (line, key, value) in lines {
        let bad = |msg: String| Error::Config { line, msg };
        match key {
            "input_shape" => {
                let v = parse_usizes(value, ',').ok_or_else(|| bad(format!("bad input_shape `{value}`")))?;
                input_shape = Some(v.try_into().map_err(|_| bad("input_shape needs 4 extents".into()))?);
            }
            "conv_bias" => conv_bias = parse_bool(value).ok_or_else(|| bad(format!("bad bool `{value}`")))?,
            "head_width" => head_width = Some(value.parse().map_err(|_| bad(format!("bad head_width `{value}`")))?),
            "stem" => {
                let f: Vec<&str> = value.split(',').collect();
                let parsed = (|| {
                    Some(StemSpec {
                        in_channels: f.first()?.parse().ok()?,
                        out_channels: f.get(1)?.parse().ok()?,
                        spatial_kernel: parse_kernel(f.get(2)?)?,
                        temporal_kernel: parse_kernel(f.get(3)?)?,
                        spatial_stride: f.get(4)?.parse().ok()?,
                    })
                })();
                stem = Some(parsed.filter(|_| f.len() == 5).ok_or_else(|| bad(format!("bad stem `{value}`")))?);
            }
            "block" => {
                let f: Vec<&str> = value.split(',').collect();
                let parsed = (|| {
                    Some(BlockSpec {
                        in_channels: f.first()?.parse().ok()?,
                        mid_channels: f.get(1)?.parse().ok()?,
                        out_channels: f.get(2)?.parse().ok()?,
                        spatial_stride: f.get(3)?.parse().ok()?,
                        has_projection: parse_bool(f.get(4)?)?,
                        temporal_kernel: parse_kernel(f.get(5)?)?,
                        spatial_kernel: parse_kernel(f.get(6)?)?,
                    })
                })();
                blocks.push(parsed.filter(|_| f.len() == 7).ok_or_else(|| bad(format!("bad block `{value}`")))?);
            }
            _ => return Err(bad(format!("unknown model key `{key}`"))),
        }
    }
    let missing = |k: &str| Error::ModelSpec(format!("model description lacks `{k}`"));
    let spec = ModelSpec {
        stem: stem.ok_or_else(|| missing("stem"))?,
        blocks,
        head_width: head_width.ok_or_else(|| missing("head_width"))?,
        input_shape: input_shape.ok_or_else(|| missing("input_shape"))?,
        conv_bias,
    };
    spec.validate()?;
    Ok(spec)
}

// ---- checkpoint ----

/// What a checkpoint restores besides tensors.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub state: TrainState,
}

fn put_tensor<T: Element>(out: &mut Vec<u8>, name: &str, group: ParamGroup, t: &Tensor<T>) -> Result<()> {
    put_u32(out, to_u32(name.len(), "name length")?);
    out.extend_from_slice(name.as_bytes());
    out.push(group.tag());
    out.push(T::DTYPE as u8);
    put_u32(out, to_u32(t.rank(), "rank")?);
    for &d in t.shape() {
        put_u32(out, to_u32(d, "extent")?);
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

/// Model parameters, BN running statistics and momentum buffers, then the
/// trailing state block: counter, iteration and seed as u64, followed by a
/// length-prefixed UTF-8 description of the model and optimizer settings.
pub fn encode_checkpoint(model: &Model<f32>, state: &TrainState) -> Result<Vec<u8>> {
    let named = model.named_params();
    if state.sgd.momentum.len() != named.len() {
        return Err(Error::invalid("momentum buffers do not match the model parameters"));
    }
    let groups: Vec<ParamGroup> = named.iter().map(classify_param).collect::<Result<_>>()?;
    let count = 2 * named.len() + 2 * model.running_stats().len();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, to_u32(count, "tensor count")?);
    for (p, &g) in model.params().iter().zip(&groups) {
        put_tensor(&mut out, &p.name, g, &p.value)?;
    }
    for (name, stats) in model.running_stats() {
        put_tensor(&mut out, &format!("{name}.running_mean"), ParamGroup::Shared, &stats.mean)?;
        put_tensor(&mut out, &format!("{name}.running_var"), ParamGroup::Shared, &stats.var)?;
    }
    for ((p, &g), m) in model.params().iter().zip(&groups).zip(&state.sgd.momentum) {
        put_tensor(&mut out, &format!("{MOMENTUM_PREFIX}{}", p.name), g, m)?;
    }
    put_u64(&mut out, state.schedule.counter);
    put_u64(&mut out, state.iteration);
    put_u64(&mut out, state.seed);
    let mut meta = model_spec_lines(model.spec());
    meta.push(format!("freeze_ratio={}:{}", state.schedule.i_s, state.schedule.i_t));
    meta.push(format!("naive={}", state.schedule.naive));
    meta.push(format!("sgd_mu={:?}", state.sgd.mu));
    meta.push(format!("sgd_lr={:?}", state.sgd.lr));
    meta.push(format!("bn_momentum={:?}", model.bn.momentum));
    meta.push(format!("bn_epsilon={:?}", model.bn.epsilon));
    let text = meta.join("\n");
    put_u32(&mut out, to_u32(text.len(), "description length")?);
    out.extend_from_slice(text.as_bytes());
    Ok(out)
}

struct RawTensor {
    name: String,
    group: u8,
    offset: usize,
    value: Tensor<f32>,
}

fn read_tensor(r: &mut Reader, i: u32) -> Result<RawTensor> {
    let offset = r.pos;
    let section = format!("tensor {i} header");
    let len = r.u32(&section)? as usize;
    let name = std::str::from_utf8(r.take(len, &format!("tensor {i} name"))?)
        .map_err(|_| r.fail(offset + 4, format!("tensor {i}: name is not UTF-8")))?
        .to_string();
    let group = r.u8(&section)?;
    if ParamGroup::from_tag(group).is_none() {
        return Err(r.fail(r.pos - 1, format!("tensor `{name}`: bad group tag {group}")));
    }
    let dtype_code = r.u8(&section)?;
    let dtype = DType::from_code(dtype_code)
        .ok_or_else(|| r.fail(r.pos - 1, format!("tensor `{name}`: unknown dtype {dtype_code}")))?;
    let rank = r.u32(&section)? as usize;
    let mut shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        shape.push(r.u32(&section)? as usize);
    }
    let n: usize = shape.iter().product();
    let raw = r.take(n * dtype.size(), &format!("tensor `{name}` values"))?;
    let data: Vec<f32> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(f32::read_le).collect(),
        DType::F64 => raw.chunks_exact(8).map(|c| f64::read_le(c) as f32).collect(),
    };
    let value = Tensor::new(shape, data).map_err(|e| r.fail(offset, format!("tensor `{name}`: {e}")))?;
    Ok(RawTensor {
        name,
        group,
        offset,
        value,
    })
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader::new(bytes, "checkpoint");
    r.header(CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
    let count = r.u32("tensor count")?;
    let mut tensors = Vec::new();
    for i in 0..count {
        tensors.push(read_tensor(&mut r, i)?);
    }
    let counter = r.u64("training state")?;
    let iteration = r.u64("training state")?;
    let seed = r.u64("training state")?;
    let meta_at = r.pos;
    let len = r.u32("model description")? as usize;
    let text = std::str::from_utf8(r.take(len, "model description")?)
        .map_err(|_| r.fail(meta_at + 4, "model description is not UTF-8"))?;
    r.finish()?;

    let mut model_lines = Vec::new();
    let mut schedule = FreezeSchedule::naive();
    let (mut mu, mut lr) = (0.9, 0.0);
    let mut bn = BnConfig::default();
    for (n, line) in text.lines().enumerate() {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| r.fail(meta_at, format!("model description line {} has no `=`", n + 1)))?;
        let num = |v: &str| v.parse::<f64>().map_err(|_| r.fail(meta_at, format!("bad number in `{line}`")));
        match k {
            "freeze_ratio" => {
                let (a, b) = parse_ratio(v).ok_or_else(|| r.fail(meta_at, format!("bad ratio `{v}`")))?;
                schedule.i_s = a;
                schedule.i_t = b;
            }
            "naive" => schedule.naive = v == "true",
            "sgd_mu" => mu = num(v)?,
            "sgd_lr" => lr = num(v)?,
            "bn_momentum" => bn.momentum = num(v)?,
            "bn_epsilon" => bn.epsilon = num(v)?,
            _ => model_lines.push((n + 1, k, v)),
        }
    }
    schedule.counter = counter;
    let spec = parse_model_spec_lines(model_lines.into_iter())?;
    let mut model: Model<f32> = build_model(&spec, 0)?;
    model.bn = bn;
    let mut momentum: Vec<Option<Tensor<f32>>> = vec![None; model.params().len()];
    let mut seen_params = vec![false; model.params().len()];
    let mut seen_stats = vec![[false; 2]; model.running_stats().len()];

    for t in tensors {
        let fail = |msg: String| Error::Format {
            what: "checkpoint",
            offset: t.offset as u64,
            msg: format!("tensor `{}`: {msg}", t.name),
        };
        let (target, is_momentum) = match t.name.strip_prefix(MOMENTUM_PREFIX) {
            Some(rest) => (rest, true),
            None => (t.name.as_str(), false),
        };
        if let Some(i) = model.param_index(target) {
            let expected = classify_param(&model.named_params()[i])?;
            if expected.tag() != t.group {
                return Err(fail(format!("group tag {} but the parameter is {expected}", t.group)));
            }
            if t.value.shape() != model.params()[i].value.shape() {
                return Err(fail(format!("shape {:?}, model expects {:?}", t.value.shape(), model.params()[i].value.shape())));
            }
            if is_momentum {
                momentum[i] = Some(t.value);
            } else {
                model.params_mut()[i].value = t.value;
                seen_params[i] = true;
            }
            continue;
        }
        let stat = target
            .strip_suffix(".running_mean")
            .map(|p| (p, 0))
            .or_else(|| target.strip_suffix(".running_var").map(|p| (p, 1)));
        let Some((prefix, which)) = stat.filter(|_| !is_momentum) else {
            return Err(fail("unknown tensor".into()));
        };
        let Some(si) = model.running_stats().iter().position(|(n, _)| n == prefix) else {
            return Err(fail("unknown batch norm layer".into()));
        };
        let slot = &mut model.running_stats_mut()[si].1;
        let dst = if which == 0 { &mut slot.mean } else { &mut slot.var };
        if t.value.shape() != dst.shape() {
            return Err(fail(format!("shape {:?}, model expects {:?}", t.value.shape(), dst.shape())));
        }
        *dst = t.value;
        seen_stats[si][which] = true;
    }
    let missing = |name: String| Error::Format {
        what: "checkpoint",
        offset: meta_at as u64,
        msg: format!("missing tensor `{name}`"),
    };
    for (i, p) in model.params().iter().enumerate() {
        if !seen_params[i] {
            return Err(missing(p.name.clone()));
        }
        if momentum[i].is_none() {
            return Err(missing(format!("{MOMENTUM_PREFIX}{}", p.name)));
        }
    }
    for (si, (name, _)) in model.running_stats().iter().enumerate() {
        if !seen_stats[si].iter().all(|&s| s) {
            return Err(missing(format!("{name}.running_*")));
        }
    }
    let sgd = SgdState {
        momentum: momentum.into_iter().map(|m| m.expect("checked above")).collect(),
        mu,
        lr,
    };
    Ok(Checkpoint {
        model,
        state: TrainState {
            schedule,
            sgd,
            iteration,
            seed,
        },
    })
}

pub fn save_checkpoint(model: &Model<f32>, state: &TrainState, path: &Path) -> Result<()> {
    write_file(path, &encode_checkpoint(model, state)?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    decode_checkpoint(&read_file(path)?)
}

/// Fresh training state for a model that has not been trained yet.
pub fn initial_state(model: &Model<f32>, config: &TrainConfig) -> Result<TrainState> {
    Ok(TrainState {
        schedule: config.schedule()?,
        sgd: SgdState::new(model.params(), config.momentum, config.lr),
        iteration: 0,
        seed: config.seed,
    })
}

// ---- run configuration ----

/// Everything a run is built from.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DatasetSpec,
    pub model: ModelSpec,
    /// Model initialization seed; the training seed when unset.
    pub init_seed: Option<u64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let data = DatasetSpec::default();
        let model = ModelSpec::reference_tiny(data.clip_dims);
        let train = TrainConfig {
            clip_len: data.clip_dims[1],
            mask: data.train_mask.clone(),
            same_video_prob: data.same_video_prob,
            ..TrainConfig::default()
        };
        RunConfig {
            train,
            data,
            model,
            init_seed: None,
        }
    }
}

impl RunConfig {
    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.train.seed)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.data.validate()?;
        self.model.validate()?;
        if self.model.input_shape != self.data.clip_dims {
            return Err(Error::invalid(format!(
                "model input {:?} differs from clip dims {:?}",
                self.model.input_shape, self.data.clip_dims
            )));
        }
        Ok(())
    }
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}

/// `a:b` with both sides integers.
pub fn parse_ratio(v: &str) -> Option<(u64, u64)> {
    let (a, b) = v.split_once(':')?;
    Some((a.trim().parse().ok()?, b.trim().parse().ok()?))
}

fn parse_range(v: &str) -> Option<(f64, f64)> {
    let (a, b) = v.split_once(':')?;
    let (a, b) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
    (a <= b).then_some((a, b))
}

fn fmt_range(r: (f64, f64)) -> String {
    format!("{:?}:{:?}", r.0, r.1)
}

/// Parses `key=value` lines; `#` starts a comment. Unknown keys are errors and
/// missing keys keep the defaults of [`RunConfig::default`].
pub fn parse_config_str(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut dims = cfg.data.clip_dims;
    let mut conv_bias = cfg.model.conv_bias;
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(Error::Config {
                line,
                msg: format!("expected key=value, got `{content}`"),
            });
        };
        let (key, value) = (key.trim(), value.trim());
        let bad = |what: &str| Error::Config {
            line,
            msg: format!("bad {what} `{value}` for `{key}`"),
        };
        let uint = || value.parse::<usize>().map_err(|_| bad("unsigned integer"));
        let u64v = || value.parse::<u64>().map_err(|_| bad("unsigned integer"));
        let float = || value.parse::<f64>().map_err(|_| bad("number"));
        let boolean = || parse_bool(value).ok_or_else(|| bad("boolean"));
        let range = || parse_range(value).ok_or_else(|| bad("range lo:hi"));
        let t = &mut cfg.train;
        let d = &mut cfg.data;
        match key {
            "batch_size" => t.batch_size = uint()?,
            "epochs" => t.epochs = uint()?,
            "lr" => t.lr = float()?,
            "momentum" => t.momentum = float()?,
            "freeze_ratio" => {
                let (a, b) = parse_ratio(value).ok_or_else(|| bad("ratio I_s:I_t"))?;
                if a == 0 || b == 0 {
                    return Err(Error::Config {
                        line,
                        msg: format!("freeze_ratio {a}:{b} needs I_s >= 1 and I_t >= 1"),
                    });
                }
                (t.i_s, t.i_t) = (a, b);
            }
            "naive" => t.naive = boolean()?,
            "seed" => t.seed = u64v()?,
            "init_seed" => cfg.init_seed = Some(u64v()?),
            "aug_flip" => t.augs.flip = boolean()?,
            "aug_cutout" => t.augs.cutout = boolean()?,
            "aug_noise" => t.augs.noise = boolean()?,
            "fake_aug" => t.fake_aug = boolean()?,
            "fake_prob" => t.fake_prob = float()?,
            "same_video_prob" => {
                t.same_video_prob = float()?;
                d.same_video_prob = t.same_video_prob;
            }
            "reduction" => {
                t.reduction = match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(bad("reduction (mean|sum)")),
                }
            }
            "eval_every" => t.eval_every = uint()?,
            "clips_per_video" => t.clips_per_video = uint()?,
            "train_real" => d.train_real = uint()?,
            "train_fake" => d.train_fake = uint()?,
            "val_real" => d.val_real = uint()?,
            "val_fake" => d.val_fake = uint()?,
            "probe_real" => d.probe_real = uint()?,
            "probe_fake" => d.probe_fake = uint()?,
            "channels" => dims[0] = uint()?,
            "clip_len" => dims[1] = uint()?,
            "clip_height" => dims[2] = uint()?,
            "clip_width" => dims[3] = uint()?,
            "data_seed" => d.seed = u64v()?,
            "mix" => {
                let parts: Vec<f64> = value
                    .split(':')
                    .map(|p| p.trim().parse().ok())
                    .collect::<Option<_>>()
                    .ok_or_else(|| bad("mix a:b:c"))?;
                d.mix = parts.try_into().map_err(|_| bad("mix a:b:c"))?;
            }
            "train_mask_blur" => d.train_mask.blur_sigma = range()?,
            "probe_mask_blur" => d.probe_mask.blur_sigma = range()?,
            "mask_coverage" => {
                d.train_mask.coverage = range()?;
                d.probe_mask.coverage = d.train_mask.coverage;
            }
            "mask_override" => {
                d.mask_override = match value {
                    "none" => None,
                    _ => Some(value.parse::<f32>().map_err(|_| bad("mask value or `none`"))?),
                }
            }
            "conv_bias" => conv_bias = boolean()?,
            _ => {
                return Err(Error::Config {
                    line,
                    msg: format!("unknown key `{key}`"),
                })
            }
        }
    }
    cfg.data.clip_dims = dims;
    cfg.train.clip_len = dims[1];
    cfg.train.mask = cfg.data.train_mask.clone();
    cfg.model = ModelSpec::reference_tiny(dims);
    cfg.model.conv_bias = conv_bias;
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let bytes = read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|_| Error::Config {
        line: 0,
        msg: format!("{} is not UTF-8", path.display()),
    })?;
    parse_config_str(&text)
}

/// Every key with its effective value, in the syntax [`parse_config_str`] reads.
pub fn config_lines(cfg: &RunConfig) -> Vec<String> {
    let t = &cfg.train;
    let d = &cfg.data;
    let AugToggles { flip, cutout, noise } = t.augs;
    let mut lines = vec![
        format!("batch_size={}", t.batch_size),
        format!("epochs={}", t.epochs),
        format!("lr={:?}", t.lr),
        format!("momentum={:?}", t.momentum),
        format!("freeze_ratio={}:{}", t.i_s, t.i_t),
        format!("naive={}", t.naive),
        format!("seed={}", t.seed),
    ];
    if let Some(s) = cfg.init_seed {
        lines.push(format!("init_seed={s}"));
    }
    lines.extend([
        format!("aug_flip={flip}"),
        format!("aug_cutout={cutout}"),
        format!("aug_noise={noise}"),
        format!("fake_aug={}", t.fake_aug),
        format!("fake_prob={:?}", t.fake_prob),
        format!("same_video_prob={:?}", t.same_video_prob),
        format!(
            "reduction={}",
            match t.reduction {
                Reduction::Mean => "mean",
                Reduction::Sum => "sum",
            }
        ),
        format!("eval_every={}", t.eval_every),
        format!("clips_per_video={}", t.clips_per_video),
        format!("train_real={}", d.train_real),
        format!("train_fake={}", d.train_fake),
        format!("val_real={}", d.val_real),
        format!("val_fake={}", d.val_fake),
        format!("probe_real={}", d.probe_real),
        format!("probe_fake={}", d.probe_fake),
        format!("channels={}", d.clip_dims[0]),
        format!("clip_len={}", d.clip_dims[1]),
        format!("clip_height={}", d.clip_dims[2]),
        format!("clip_width={}", d.clip_dims[3]),
        format!("data_seed={}", d.seed),
        format!("mix={:?}:{:?}:{:?}", d.mix[0], d.mix[1], d.mix[2]),
        format!("train_mask_blur={}", fmt_range(d.train_mask.blur_sigma)),
        format!("probe_mask_blur={}", fmt_range(d.probe_mask.blur_sigma)),
        format!("mask_coverage={}", fmt_range(d.train_mask.coverage)),
        format!(
            "mask_override={}",
            d.mask_override.map_or("none".to_string(), |v| format!("{v:?}"))
        ),
        format!("conv_bias={}", cfg.model.conv_bias),
    ]);
    lines
}

/// Mask parameters used for online blending during training.
pub fn training_mask(cfg: &RunConfig) -> MaskParams {
    cfg.data.train_mask.clone()
}

// ---- heatmaps ----

/// Quantizes values in `[0, 1]` to bytes, rounding to nearest.
pub fn quantize(values: &[f32]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Binary (P5) 8-bit greyscale image.
pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Result<Vec<u8>> {
    if pixels.len() != width * height {
        return Err(Error::invalid(format!(
            "{} pixels for a {width}x{height} image",
            pixels.len()
        )));
    }
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    Ok(out)
}

/// Width, height and pixels of a P5 image written by [`encode_pgm`].
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let fail = |msg: &str| Error::Format {
        what: "pgm",
        offset: 0,
        msg: msg.to_string(),
    };
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(fail("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    pos += 1;
    if fields[0] != "P5" || fields[3] != "255" {
        return Err(fail("not an 8-bit P5 image"));
    }
    let w: usize = fields[1].parse().map_err(|_| fail("bad width"))?;
    let h: usize = fields[2].parse().map_err(|_| fail("bad height"))?;
    let pixels = bytes.get(pos..pos + w * h).ok_or_else(|| fail("truncated pixels"))?;
    Ok((w, h, pixels.to_vec()))
}
