//! Small factorized 3D residual classifier.
//!
//! Every convolution is pointwise (1×1×1), temporal (Kt×1×1) or spatial
//! (1×Kh×Kw). Inside a bottleneck block the temporal convolution runs before
//! the spatial one, and every convolution is followed by batch norm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BnConfig, BnMode, ParamId, RunningStats, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Kernel extents `[Kt, Kh, Kw]`.
pub type KernelShape = [usize; 3];

pub const TEMPORAL_3: KernelShape = [3, 1, 1];
pub const SPATIAL_3X3: KernelShape = [1, 3, 3];

fn check_factorized(what: &str, k: KernelShape) -> Result<()> {
    if k.iter().any(|&e| e == 0) {
        return Err(Error::ModelSpec(format!("{what}: zero kernel extent {k:?}")));
    }
    if k[0] > 1 && (k[1] > 1 || k[2] > 1) {
        return Err(Error::ModelSpec(format!(
            "{what}: kernel {}x{}x{} mixes temporal and spatial extent",
            k[0], k[1], k[2]
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub spatial_kernel: KernelShape,
    pub temporal_kernel: KernelShape,
    pub spatial_stride: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub spatial_stride: usize,
    pub has_projection: bool,
    pub temporal_kernel: KernelShape,
    pub spatial_kernel: KernelShape,
}

impl BlockSpec {
    /// Bottleneck with a 3×1×1 temporal and 1×3×3 spatial convolution.
    pub fn bottleneck(in_channels: usize, mid_channels: usize, out_channels: usize, spatial_stride: usize) -> Self {
        BlockSpec {
            in_channels,
            mid_channels,
            out_channels,
            spatial_stride,
            has_projection: in_channels != out_channels || spatial_stride != 1,
            temporal_kernel: TEMPORAL_3,
            spatial_kernel: SPATIAL_3X3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub stem: StemSpec,
    pub blocks: Vec<BlockSpec>,
    /// Channels entering the pooled linear head.
    pub head_width: usize,
    /// Clip shape `[C, T, H, W]`.
    pub input_shape: [usize; 4],
    pub conv_bias: bool,
}

impl ModelSpec {
    /// Stem 3→8 (1×3×3, then 3×1×1), bottlenecks 8→8→16 and 16→16→32, head 32→1.
    pub fn reference_tiny(input_shape: [usize; 4]) -> Self {
        ModelSpec {
            stem: StemSpec {
                in_channels: input_shape[0],
                out_channels: 8,
                spatial_kernel: SPATIAL_3X3,
                temporal_kernel: TEMPORAL_3,
                spatial_stride: 2,
            },
            blocks: vec![BlockSpec::bottleneck(8, 8, 16, 1), BlockSpec::bottleneck(16, 16, 32, 2)],
            head_width: 32,
            input_shape,
            conv_bias: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.stem;
        if s.in_channels != self.input_shape[0] {
            return Err(Error::ModelSpec(format!(
                "stem expects {} channels but clips have {}",
                s.in_channels, self.input_shape[0]
            )));
        }
        if self.input_shape.iter().any(|&d| d == 0) {
            return Err(Error::ModelSpec("input shape has a zero extent".into()));
        }
        check_factorized("stem spatial conv", s.spatial_kernel)?;
        check_factorized("stem temporal conv", s.temporal_kernel)?;
        let mut channels = s.out_channels;
        for (i, b) in self.blocks.iter().enumerate() {
            let name = format!("block{}", i + 1);
            check_factorized(&format!("{name} temporal conv"), b.temporal_kernel)?;
            check_factorized(&format!("{name} spatial conv"), b.spatial_kernel)?;
            if b.in_channels != channels {
                return Err(Error::ModelSpec(format!(
                    "{name} expects {} input channels, previous layer emits {channels}",
                    b.in_channels
                )));
            }
            if !(b.spatial_stride == 1 || b.spatial_stride == 2) {
                return Err(Error::ModelSpec(format!("{name}: spatial stride must be 1 or 2")));
            }
            if !b.has_projection && (b.in_channels != b.out_channels || b.spatial_stride != 1) {
                return Err(Error::ModelSpec(format!(
                    "{name}: identity shortcut needs matching channels and stride 1"
                )));
            }
            if b.mid_channels == 0 || b.out_channels == 0 {
                return Err(Error::ModelSpec(format!("{name}: zero channel count")));
            }
            channels = b.out_channels;
        }
        if self.head_width != channels {
            return Err(Error::ModelSpec(format!(
                "head width {} does not match final feature channels {channels}",
                self.head_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    LinearWeight,
    LinearBias,
}

impl ParamKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ParamKind::ConvWeight => "conv_weight",
            ParamKind::ConvBias => "conv_bias",
            ParamKind::BnGamma => "bn_gamma",
            ParamKind::BnBeta => "bn_beta",
            ParamKind::LinearWeight => "linear_weight",
            ParamKind::LinearBias => "linear_bias",
        }
    }

    /// Kind implied by a parameter's name suffix and rank, as written by [`build_model`].
    pub fn infer(name: &str, rank: usize) -> Option<ParamKind> {
        let is_head = name.starts_with("head.");
        Some(match name.rsplit('.').next()? {
            "gamma" => ParamKind::BnGamma,
            "beta" => ParamKind::BnBeta,
            "weight" if is_head => ParamKind::LinearWeight,
            "bias" if is_head => ParamKind::LinearBias,
            "weight" if rank == 5 => ParamKind::ConvWeight,
            "bias" => ParamKind::ConvBias,
            _ => return None,
        })
    }
}

/// Description of one trainable tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedParam {
    pub name: String,
    pub kind: ParamKind,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T: Element> {
    pub name: String,
    pub kind: ParamKind,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone)]
struct ConvBn {
    weight: usize,
    bias: Option<usize>,
    gamma: usize,
    beta: usize,
    stats: usize,
    stride: [usize; 3],
    padding: [usize; 3],
}

#[derive(Debug, Clone)]
struct Block {
    reduce: ConvBn,
    temporal: ConvBn,
    spatial: ConvBn,
    expand: ConvBn,
    projection: Option<ConvBn>,
}

/// Trained or freshly initialized classifier.
#[derive(Debug, Clone)]
pub struct Model<T: Element = f32> {
    spec: ModelSpec,
    params: Vec<Parameter<T>>,
    stats: Vec<(String, RunningStats<T>)>,
    stem: [ConvBn; 2],
    blocks: Vec<Block>,
    head_weight: usize,
    head_bias: usize,
    pub bn: BnConfig,
}

struct Builder<T: Element> {
    rng: ChaCha8Rng,
    params: Vec<Parameter<T>>,
    stats: Vec<(String, RunningStats<T>)>,
    conv_bias: bool,
}

impl<T: Element> Builder<T> {
    fn push(&mut self, name: String, kind: ParamKind, value: Tensor<T>) -> usize {
        self.params.push(Parameter { name, kind, value });
        self.params.len() - 1
    }

    fn normal(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("finite std");
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| T::of(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("shape matches data")
    }

    fn conv_bn(&mut self, prefix: &str, suffix: &str, c_in: usize, c_out: usize, k: KernelShape, stride: [usize; 3]) -> ConvBn {
        let fan_in = (c_in * k.iter().product::<usize>()) as f64;
        let w = self.normal(vec![c_out, c_in, k[0], k[1], k[2]], (2.0 / fan_in).sqrt());
        let weight = self.push(format!("{prefix}.conv_{suffix}.weight"), ParamKind::ConvWeight, w);
        let bias = self.conv_bias.then(|| {
            self.push(
                format!("{prefix}.conv_{suffix}.bias"),
                ParamKind::ConvBias,
                Tensor::zeros([c_out]),
            )
        });
        let gamma = self.push(
            format!("{prefix}.bn_{suffix}.gamma"),
            ParamKind::BnGamma,
            Tensor::full([c_out], T::one()),
        );
        let beta = self.push(format!("{prefix}.bn_{suffix}.beta"), ParamKind::BnBeta, Tensor::zeros([c_out]));
        self.stats.push((format!("{prefix}.bn_{suffix}"), RunningStats::new(c_out)));
        ConvBn {
            weight,
            bias,
            gamma,
            beta,
            stats: self.stats.len() - 1,
            stride,
            padding: [k[0] / 2, k[1] / 2, k[2] / 2],
        }
    }
}

/// Builds a model with deterministic fan-in scaled normal initialization.
pub fn build_model<T: Element>(spec: &ModelSpec, seed: u64) -> Result<Model<T>> {
    spec.validate()?;
    let mut b = Builder {
        rng: ChaCha8Rng::seed_from_u64(seed),
        params: Vec::new(),
        stats: Vec::new(),
        conv_bias: spec.conv_bias,
    };
    let s = &spec.stem;
    let stride = [1, s.spatial_stride, s.spatial_stride];
    let stem = [
        b.conv_bn("stem", "s", s.in_channels, s.out_channels, s.spatial_kernel, stride),
        b.conv_bn("stem", "t", s.out_channels, s.out_channels, s.temporal_kernel, [1, 1, 1]),
    ];
    let mut blocks = Vec::new();
    for (i, bs) in spec.blocks.iter().enumerate() {
        let p = format!("block{}", i + 1);
        let st = [1, bs.spatial_stride, bs.spatial_stride];
        blocks.push(Block {
            reduce: b.conv_bn(&p, "a", bs.in_channels, bs.mid_channels, [1, 1, 1], [1, 1, 1]),
            temporal: b.conv_bn(&p, "t", bs.mid_channels, bs.mid_channels, bs.temporal_kernel, [1, 1, 1]),
            spatial: b.conv_bn(&p, "s", bs.mid_channels, bs.mid_channels, bs.spatial_kernel, st),
            expand: b.conv_bn(&p, "b", bs.mid_channels, bs.out_channels, [1, 1, 1], [1, 1, 1]),
            projection: bs
                .has_projection
                .then(|| b.conv_bn(&p, "p", bs.in_channels, bs.out_channels, [1, 1, 1], st)),
        });
    }
    let hw = b.normal(vec![1, spec.head_width], (1.0 / spec.head_width as f64).sqrt());
    let head_weight = b.push("head.weight".into(), ParamKind::LinearWeight, hw);
    let head_bias = b.push("head.bias".into(), ParamKind::LinearBias, Tensor::zeros([1]));
    Ok(Model {
        spec: spec.clone(),
        params: b.params,
        stats: b.stats,
        stem,
        blocks,
        head_weight,
        head_bias,
        bn: BnConfig::default(),
    })
}

/// Tape handles produced by one forward pass.
pub struct ForwardPass {
    /// `[B]` pre-sigmoid scores.
    pub logits: Var,
    /// `[B, C, T', H', W']` final feature maps.
    pub features: Var,
}

impl<T: Element> Model<T> {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Parameter<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter<T>] {
        &mut self.params
    }

    pub fn named_params(&self) -> Vec<NamedParam> {
        self.params
            .iter()
            .map(|p| NamedParam {
                name: p.name.clone(),
                kind: p.kind,
                shape: p.value.shape().to_vec(),
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Batch-norm running statistics, keyed by layer name.
    pub fn running_stats(&self) -> &[(String, RunningStats<T>)] {
        &self.stats
    }

    pub fn running_stats_mut(&mut self) -> &mut [(String, RunningStats<T>)] {
        &mut self.stats
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<()> {
        let s = batch.shape();
        if s.len() != 5 || s[1..] != self.spec.input_shape {
            return Err(Error::shape(
                "batch",
                format!("expected [B, {:?}], got {s:?}", self.spec.input_shape),
            ));
        }
        Ok(())
    }

    fn conv_bn(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        stats: &mut [(String, RunningStats<T>)],
        layer: &ConvBn,
        x: Var,
        mode: BnMode,
        relu: bool,
    ) -> Result<Var> {
        let y = tape.conv3d(x, vars[layer.weight], layer.bias.map(|b| vars[b]), layer.stride, layer.padding)?;
        let y = tape.batch_norm(
            y,
            vars[layer.gamma],
            vars[layer.beta],
            &mut stats[layer.stats].1,
            mode,
            self.bn,
        )?;
        Ok(if relu { tape.relu(y) } else { y })
    }

    /// Records the network on `tape`. Parameters are registered as
    /// `ParamId(index into params())`. Train mode uses and updates batch statistics.
    pub fn forward_on_tape(&mut self, tape: &mut Tape<T>, batch: &Tensor<T>, mode: BnMode) -> Result<ForwardPass> {
        let mut stats = std::mem::take(&mut self.stats);
        let result = self.forward_with_stats(tape, batch, mode, &mut stats);
        self.stats = stats;
        result
    }

    fn forward_with_stats(
        &self,
        tape: &mut Tape<T>,
        batch: &Tensor<T>,
        mode: BnMode,
        stats: &mut [(String, RunningStats<T>)],
    ) -> Result<ForwardPass> {
        self.check_batch(batch)?;
        let vars: Vec<Var> = self
            .params
            .iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(i), p.value.clone()))
            .collect();
        let mut x = tape.constant(batch.clone());
        for layer in &self.stem {
            x = self.conv_bn(tape, &vars, stats, layer, x, mode, true)?;
        }
        for block in &self.blocks {
            let a = self.conv_bn(tape, &vars, stats, &block.reduce, x, mode, true)?;
            let t = self.conv_bn(tape, &vars, stats, &block.temporal, a, mode, true)?;
            let s = self.conv_bn(tape, &vars, stats, &block.spatial, t, mode, true)?;
            let b = self.conv_bn(tape, &vars, stats, &block.expand, s, mode, false)?;
            let shortcut = match &block.projection {
                Some(p) => self.conv_bn(tape, &vars, stats, p, x, mode, false)?,
                None => x,
            };
            let sum = tape.add(b, shortcut)?;
            x = tape.relu(sum);
        }
        let features = x;
        let pooled = tape.global_avg_pool(features)?;
        let logits = tape.linear(pooled, vars[self.head_weight], Some(vars[self.head_bias]))?;
        let n = batch.shape()[0];
        let logits = tape.reshape(logits, &[n])?;
        Ok(ForwardPass { logits, features })
    }

    /// Probabilities `ŷ` for a `[B, C, T, H, W]` batch. Train mode updates the
    /// running statistics.
    pub fn forward(&mut self, batch: &Tensor<T>, mode: BnMode) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let pass = self.forward_on_tape(&mut tape, batch, mode)?;
        let probs = tape.sigmoid(pass.logits);
        Ok(tape.value(probs).clone())
    }

    /// Eval-mode probabilities without touching model state.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let mut stats = self.stats.clone();
        let mut tape = Tape::new();
        let pass = self.forward_with_stats(&mut tape, batch, BnMode::Eval, &mut stats)?;
        let probs = tape.sigmoid(pass.logits);
        Ok(tape.value(probs).clone())
    }

    /// Class activation map of one `[C, T, H, W]` clip: the head-weighted sum of
    /// the final feature maps, min-max normalized to `[0, 1]` (constant maps
    /// become all zeros). Shape `[T', H', W']`.
    pub fn cam(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let head = &self.params[self.head_weight];
        if head.kind != ParamKind::LinearWeight || head.value.shape() != [1, self.spec.head_width] {
            return Err(Error::Unsupported("CAM needs a pooled single-logit linear head".into()));
        }
        let batch = clip.clone().reshape({
            let mut s = vec![1];
            s.extend_from_slice(clip.shape());
            s
        })?;
        let mut stats = self.stats.clone();
        let mut tape = Tape::new();
        let pass = self.forward_with_stats(&mut tape, &batch, BnMode::Eval, &mut stats)?;
        let feats = tape.value(pass.features);
        let (c, rest) = (feats.shape()[1], feats.shape()[2..].to_vec());
        let plane: usize = rest.iter().product();
        let w = head.value.data();
        let mut map = vec![0.0f64; plane];
        for ch in 0..c {
            let wc = w[ch].as_f64();
            for (m, &f) in map.iter_mut().zip(&feats.data()[ch * plane..(ch + 1) * plane]) {
                *m += wc * f.as_f64();
            }
        }
        let lo = map.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = map.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        let data = map
            .iter()
            .map(|&v| if span > 0.0 { T::of((v - lo) / span) } else { T::zero() })
            .collect();
        Tensor::new(rest, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SHAPE: [usize; 4] = [3, 4, 16, 16];

    fn tiny() -> Model<f32> {
        build_model(&ModelSpec::reference_tiny(SHAPE), 7).unwrap()
    }

    fn batch(n: usize, seed: u64) -> Tensor<f32> {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let len = n * SHAPE.iter().product::<usize>();
        let mut shape = vec![n];
        shape.extend_from_slice(&SHAPE);
        Tensor::new(shape, (0..len).map(|_| rng.gen::<f32>()).collect()).unwrap()
    }

    #[test]
    fn same_seed_same_parameters() {
        let (a, b) = (tiny(), tiny());
        for (p, q) in a.params().iter().zip(b.params()) {
            assert_eq!(p.name, q.name);
            assert!(p.value.bitwise_eq(&q.value));
        }
    }

    #[test]
    fn mixed_kernel_is_rejected() {
        let mut spec = ModelSpec::reference_tiny(SHAPE);
        spec.blocks[0].temporal_kernel = [3, 3, 3];
        let err = build_model::<f32>(&spec, 0).unwrap_err();
        assert!(err.to_string().contains("mixes temporal and spatial"), "{err}");
    }

    #[test]
    fn names_are_unique() {
        let m = tiny();
        let mut names: Vec<_> = m.named_params().into_iter().map(|p| p.name).collect();
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
        assert!(names.contains(&"block2.conv_t.weight".to_string()));
    }

    #[test]
    fn forward_shape_and_range() {
        let mut m = tiny();
        let p = m.forward(&batch(2, 1), BnMode::Train).unwrap();
        assert_eq!(p.shape(), &[2]);
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert!(m.forward(&batch(2, 1).reshape([2, 3, 4, 8, 32]).unwrap(), BnMode::Eval).is_err());
    }

    #[test]
    fn zero_head_gives_one_half() {
        let mut m = tiny();
        for p in m.params_mut() {
            if p.name.starts_with("head.") {
                p.value = Tensor::zeros(p.value.shape().to_vec());
            }
        }
        let p = m.predict(&batch(3, 2)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.5));
        let cam = m.cam(&batch(1, 2).index_outer(0)).unwrap();
        assert!(cam.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eval_is_per_sample_and_order_invariant() {
        let m = tiny();
        let b = batch(2, 3);
        let one = b.index_outer(0);
        let dup = Tensor::stack(&[&one, &one]).unwrap();
        let p = m.predict(&dup).unwrap();
        assert_eq!(p.data()[0], p.data()[1]);
        let swapped = Tensor::stack(&[&b.index_outer(1), &b.index_outer(0)]).unwrap();
        let (p, q) = (m.predict(&b).unwrap(), m.predict(&swapped).unwrap());
        assert_eq!(p.data()[0], q.data()[1]);
        assert_eq!(p.data()[1], q.data()[0]);
    }

    #[test]
    fn cam_is_normalized_and_sized() {
        let m = tiny();
        let cam = m.cam(&batch(1, 4).index_outer(0)).unwrap();
        assert_eq!(cam.shape(), &[4, 4, 4]);
        assert!(cam.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        let max = cam.data().iter().copied().fold(0.0f32, f32::max);
        assert_eq!(max, 1.0);
    }
}
