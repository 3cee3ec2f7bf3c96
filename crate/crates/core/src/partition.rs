//! Spatial / temporal / shared split of trainable parameters.
//!
//! Classification looks only at a parameter's kind and shape: a 1×Kh×Kw
//! convolution weight is spatial, a Kt×1×1 one is temporal, and everything
//! without a receptive field along exactly one of the two axes (pointwise
//! convolutions, biases, batch norm, the linear head) is shared.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{Model, NamedParam, ParamKind};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    Spatial,
    Temporal,
    Shared,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Spatial, ParamGroup::Temporal, ParamGroup::Shared];

    /// Group tag byte used by the checkpoint format.
    pub fn tag(self) -> u8 {
        match self {
            ParamGroup::Spatial => 0,
            ParamGroup::Temporal => 1,
            ParamGroup::Shared => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(ParamGroup::Spatial),
            1 => Some(ParamGroup::Temporal),
            2 => Some(ParamGroup::Shared),
            _ => None,
        }
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ParamGroup::Spatial => "spatial",
            ParamGroup::Temporal => "temporal",
            ParamGroup::Shared => "shared",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ClassifyOptions {
    /// Put full 3D kernels (Kt>1 and Kh or Kw>1) in the shared group instead of failing.
    pub full_kernels_shared: bool,
}

pub fn classify_param(p: &NamedParam) -> Result<ParamGroup> {
    classify_param_with(p, ClassifyOptions::default())
}

pub fn classify_param_with(p: &NamedParam, opts: ClassifyOptions) -> Result<ParamGroup> {
    if p.kind != ParamKind::ConvWeight {
        return Ok(ParamGroup::Shared);
    }
    let [kt, kh, kw] = match p.shape[..] {
        [_, _, kt, kh, kw] => [kt, kh, kw],
        _ => {
            return Err(Error::Classify {
                name: p.name.clone(),
                reason: format!("conv weight must have rank 5, got shape {:?}", p.shape),
            })
        }
    };
    let spatial = kh > 1 || kw > 1;
    Ok(match (kt > 1, spatial) {
        (false, false) => ParamGroup::Shared,
        (false, true) => ParamGroup::Spatial,
        (true, false) => ParamGroup::Temporal,
        (true, true) if opts.full_kernels_shared => ParamGroup::Shared,
        (true, true) => {
            return Err(Error::Classify {
                name: p.name.clone(),
                reason: format!("kernel {kt}x{kh}x{kw} has both temporal and spatial extent"),
            })
        }
    })
}

/// Parameters split by group; each list is sorted by name.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Partition {
    pub spatial: Vec<NamedParam>,
    pub temporal: Vec<NamedParam>,
    pub shared: Vec<NamedParam>,
}

impl Partition {
    pub fn group(&self, g: ParamGroup) -> &[NamedParam] {
        match g {
            ParamGroup::Spatial => &self.spatial,
            ParamGroup::Temporal => &self.temporal,
            ParamGroup::Shared => &self.shared,
        }
    }

    /// Scalar parameter count of a group.
    pub fn count(&self, g: ParamGroup) -> usize {
        self.group(g).iter().map(|p| p.shape.iter().product::<usize>()).sum()
    }

    pub fn group_of(&self, name: &str) -> Option<ParamGroup> {
        ParamGroup::ALL
            .into_iter()
            .find(|&g| self.group(g).iter().any(|p| p.name == name))
    }

    /// Plain-text table of name, shape and group followed by per-group totals.
    pub fn report(&self) -> String {
        let mut rows: Vec<(&NamedParam, ParamGroup)> = ParamGroup::ALL
            .into_iter()
            .flat_map(|g| self.group(g).iter().map(move |p| (p, g)))
            .collect();
        rows.sort_by(|a, b| a.0.name.cmp(&b.0.name));
        let width = rows.iter().map(|(p, _)| p.name.len()).max().unwrap_or(4).max(4);
        let mut out = format!("{:<width$}  {:<18}  group\n", "name", "shape");
        for (p, g) in &rows {
            let shape = p.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("x");
            out.push_str(&format!("{:<width$}  {:<18}  {g}\n", p.name, shape));
        }
        out.push('\n');
        for g in ParamGroup::ALL {
            out.push_str(&format!("total {g}: {} tensors, {} values\n", self.group(g).len(), self.count(g)));
        }
        out
    }
}

pub fn partition_params(params: &[NamedParam]) -> Result<Partition> {
    let mut part = Partition::default();
    for p in params {
        let list = match classify_param(p)? {
            ParamGroup::Spatial => &mut part.spatial,
            ParamGroup::Temporal => &mut part.temporal,
            ParamGroup::Shared => &mut part.shared,
        };
        list.push(p.clone());
    }
    for list in [&mut part.spatial, &mut part.temporal, &mut part.shared] {
        list.sort_by(|a, b| a.name.cmp(&b.name));
    }
    Ok(part)
}

pub fn partition<T: Element>(model: &Model<T>) -> Result<Partition> {
    partition_params(&model.named_params())
}

/// Group of every parameter of `model`, in parameter order.
pub fn group_per_param<T: Element>(model: &Model<T>) -> Result<Vec<ParamGroup>> {
    model.named_params().iter().map(classify_param).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_model, ModelSpec};

    fn conv(shape: [usize; 5]) -> NamedParam {
        NamedParam {
            name: "x.weight".into(),
            kind: ParamKind::ConvWeight,
            shape: shape.to_vec(),
        }
    }

    #[test]
    fn kernel_shape_rule() {
        assert_eq!(classify_param(&conv([16, 8, 3, 1, 1])).unwrap(), ParamGroup::Temporal);
        assert_eq!(classify_param(&conv([16, 8, 1, 3, 3])).unwrap(), ParamGroup::Spatial);
        assert_eq!(classify_param(&conv([16, 8, 1, 1, 1])).unwrap(), ParamGroup::Shared);
        assert_eq!(classify_param(&conv([16, 8, 1, 1, 3])).unwrap(), ParamGroup::Spatial);
        let gamma = NamedParam {
            name: "bn.gamma".into(),
            kind: ParamKind::BnGamma,
            shape: vec![37],
        };
        assert_eq!(classify_param(&gamma).unwrap(), ParamGroup::Shared);
    }

    #[test]
    fn full_kernel_errors_unless_overridden() {
        let p = conv([4, 4, 3, 3, 3]);
        let err = classify_param(&p).unwrap_err();
        assert!(err.to_string().contains("x.weight"));
        let opts = ClassifyOptions {
            full_kernels_shared: true,
        };
        assert_eq!(classify_param_with(&p, opts).unwrap(), ParamGroup::Shared);
    }

    #[test]
    fn name_text_is_ignored() {
        let mut p = conv([16, 8, 3, 1, 1]);
        p.name = "spatial_thing.weight".into();
        assert_eq!(classify_param(&p).unwrap(), ParamGroup::Temporal);
    }

    #[test]
    fn no_temporal_convs_gives_empty_group() {
        let mut spec = ModelSpec::reference_tiny([3, 4, 16, 16]);
        spec.stem.temporal_kernel = [1, 1, 1];
        for b in &mut spec.blocks {
            b.temporal_kernel = [1, 1, 1];
        }
        let m = build_model::<f32>(&spec, 0).unwrap();
        let part = partition(&m).unwrap();
        assert!(part.temporal.is_empty());
        assert_eq!(part, partition(&m).unwrap());
    }
}
