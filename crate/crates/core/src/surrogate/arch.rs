use serde::{Deserialize, Serialize};

use super::layers::ResizePlan;
use crate::cochlea::default_grid_spec;
use crate::error::{Error, Result};
use crate::geometry::GridSpec;

/// Number of shape parameters fed to every network.
pub const PARAM_COUNT: usize = 4;

/// One resize + convolution + conditioning stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stage {
    pub dims: [usize; 3],
    pub channels: usize,
}

/// Layer stack of the parameter-to-grid decoder.
///
/// The embedding MLP maps the normalized parameters to `embed` widths (each
/// followed by a ReLU), a linear projection fills the coarse grid, and each
/// stage resizes, convolves, applies the parameter-conditioned per-channel
/// scale and shift, then a ReLU. A 1×1×1 head produces the single output
/// channel sampled on `grid`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub embed: Vec<usize>,
    pub coarse_dims: [usize; 3],
    pub coarse_channels: usize,
    pub stages: Vec<Stage>,
    pub grid: GridSpec,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            embed: vec![64, 256],
            coarse_dims: [5, 5, 6],
            coarse_channels: 32,
            stages: vec![
                Stage { dims: [13, 13, 15], channels: 16 },
                Stage { dims: [25, 25, 30], channels: 8 },
                Stage { dims: [50, 50, 60], channels: 8 },
            ],
            grid: default_grid_spec(),
        }
    }
}

impl Architecture {
    /// A small 3×3×3-coarse variant with every width divided by eight.
    pub fn reduced() -> Self {
        Architecture {
            embed: vec![8, 32],
            coarse_dims: [3, 3, 3],
            coarse_channels: 4,
            stages: vec![
                Stage { dims: [4, 4, 5], channels: 2 },
                Stage { dims: [6, 6, 7], channels: 1 },
                Stage { dims: [9, 9, 10], channels: 1 },
            ],
            grid: GridSpec::new(crate::Vec3::new(-5.0, -5.0, -2.0), 1.2, [9, 9, 10])
                .expect("valid reduced grid"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("architecture: {m}")));
        if self.embed.iter().any(|&w| w == 0) || self.coarse_channels == 0 {
            return bad("zero width");
        }
        if self.coarse_dims.iter().any(|&d| d == 0) {
            return bad("zero coarse dimension");
        }
        if self.stages.is_empty() || self.stages.iter().any(|s| s.channels == 0 || s.dims.contains(&0)) {
            return bad("empty stage");
        }
        if self.output_dims() != self.grid.dims {
            return bad("last stage dims differ from the output grid");
        }
        Ok(())
    }

    pub fn output_dims(&self) -> [usize; 3] {
        self.stages.last().map_or(self.coarse_dims, |s| s.dims)
    }

    pub fn coarse_len(&self) -> usize {
        self.coarse_dims.iter().product::<usize>() * self.coarse_channels
    }

    /// Named tensors in storage order.
    pub fn tensors(&self) -> Vec<TensorInfo> {
        let mut out = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>, fan_in: usize| {
            let len = shape.iter().product::<usize>();
            out.push(TensorInfo { name, shape, offset, fan_in });
            offset += len;
        };
        let mut width = PARAM_COUNT;
        for (i, &w) in self.embed.iter().enumerate() {
            push(format!("embed.{i}.weight"), vec![w, width], width);
            push(format!("embed.{i}.bias"), vec![w], width);
            width = w;
        }
        push("project.weight".into(), vec![self.coarse_len(), width], width);
        push("project.bias".into(), vec![self.coarse_len()], width);
        let mut c_in = self.coarse_channels;
        for (s, st) in self.stages.iter().enumerate() {
            let c = st.channels;
            push(format!("stage{s}.conv.weight"), vec![27, c_in, c], 27 * c_in);
            push(format!("stage{s}.conv.bias"), vec![c], 27 * c_in);
            push(format!("stage{s}.scale.weight"), vec![c, PARAM_COUNT], PARAM_COUNT);
            push(format!("stage{s}.scale.bias"), vec![c], PARAM_COUNT);
            push(format!("stage{s}.shift.weight"), vec![c, PARAM_COUNT], PARAM_COUNT);
            push(format!("stage{s}.shift.bias"), vec![c], PARAM_COUNT);
            c_in = c;
        }
        push("head.weight".into(), vec![c_in], c_in);
        push("head.bias".into(), vec![1], c_in);
        out
    }

    pub fn weight_count(&self) -> usize {
        self.tensors().iter().map(TensorInfo::len).sum()
    }
}

/// A named slice of the flat weight vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    /// Fan-in of the layer the tensor belongs to, used for initialization.
    #[serde(skip)]
    pub fan_in: usize,
}

impl TensorInfo {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug)]
pub(crate) struct DenseAt {
    pub w: usize,
    pub b: usize,
    pub n_in: usize,
    pub n_out: usize,
}

impl DenseAt {
    pub fn weight<'a, T>(&self, all: &'a [T]) -> &'a [T] {
        &all[self.w..self.w + self.n_in * self.n_out]
    }

    pub fn bias<'a, T>(&self, all: &'a [T]) -> &'a [T] {
        &all[self.b..self.b + self.n_out]
    }
}

#[derive(Clone, Debug)]
pub(crate) struct StageAt {
    pub conv_w: usize,
    pub conv_b: usize,
    pub scale: DenseAt,
    pub shift: DenseAt,
    pub c_in: usize,
    pub c_out: usize,
    pub dims: [usize; 3],
    pub resize: ResizePlan,
}

/// Offsets of every tensor, resolved once per architecture.
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: Vec<DenseAt>,
    pub project: DenseAt,
    pub stages: Vec<StageAt>,
    pub head_w: usize,
    pub head_b: usize,
    pub head_c: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(arch: &Architecture) -> Layout {
        let tensors = arch.tensors();
        let at = |name: &str| {
            tensors
                .iter()
                .find(|t| t.name == name)
                .map(|t| t.offset)
                .expect("tensor listed by the architecture")
        };
        let dense = |prefix: &str, n_in: usize, n_out: usize| DenseAt {
            w: at(&format!("{prefix}.weight")),
            b: at(&format!("{prefix}.bias")),
            n_in,
            n_out,
        };
        let mut width = PARAM_COUNT;
        let mut embed = Vec::new();
        for (i, &w) in arch.embed.iter().enumerate() {
            embed.push(dense(&format!("embed.{i}"), width, w));
            width = w;
        }
        let project = dense("project", width, arch.coarse_len());
        let mut stages = Vec::new();
        let mut c_in = arch.coarse_channels;
        let mut from = arch.coarse_dims;
        for (s, st) in arch.stages.iter().enumerate() {
            stages.push(StageAt {
                conv_w: at(&format!("stage{s}.conv.weight")),
                conv_b: at(&format!("stage{s}.conv.bias")),
                scale: dense(&format!("stage{s}.scale"), PARAM_COUNT, st.channels),
                shift: dense(&format!("stage{s}.shift"), PARAM_COUNT, st.channels),
                c_in,
                c_out: st.channels,
                dims: st.dims,
                resize: ResizePlan::new(from, st.dims),
            });
            c_in = st.channels;
            from = st.dims;
        }
        Layout {
            embed,
            project,
            stages,
            head_w: at("head.weight"),
            head_b: at("head.bias"),
            head_c: c_in,
            total: tensors.iter().map(TensorInfo::len).sum(),
        }
    }
}
