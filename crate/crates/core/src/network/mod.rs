//! Shared-encoder / dual-decoder segmentation network with a 1×1 mixing head.
//!
//! Parameters live in one flat vector grouped as encoder, foreground decoder,
//! background decoder, mixing head (in that order). The same ordering is used
//! for gradients and for the checkpoint blob.

mod checkpoint;
mod graph;
pub(crate) mod ops;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Raster;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointHeader, CHECKPOINT_FORMAT};
pub use graph::{backward, forward_cached, ForwardCache, PredictionGrads, Predictions};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_channels: usize,
    /// Prediction channels `c` of every branch.
    pub class_channels: usize,
    /// One width per resolution level, `depth + 1` entries.
    pub encoder_widths: Vec<usize>,
    /// Number of 2× downsampling stages.
    pub depth: usize,
}

impl ArchSpec {
    pub fn desk(input_channels: usize, class_channels: usize) -> Self {
        ArchSpec {
            input_channels,
            class_channels,
            encoder_widths: vec![8, 16, 32],
            depth: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::config(format!("depth must be >= 2, got {}", self.depth)));
        }
        if self.encoder_widths.len() != self.depth + 1 {
            return Err(Error::config(format!(
                "expected {} encoder widths for depth {}, got {}",
                self.depth + 1,
                self.depth,
                self.encoder_widths.len()
            )));
        }
        if self.encoder_widths.contains(&0) || self.input_channels == 0 || self.class_channels == 0 {
            return Err(Error::config("widths and channel counts must be positive"));
        }
        Ok(())
    }

    /// Spatial sizes must be divisible by this.
    pub fn spatial_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Teacher,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    Encoder,
    FgDecoder,
    BgDecoder,
    MixHead,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 4] = [
        ParamGroup::Encoder,
        ParamGroup::FgDecoder,
        ParamGroup::BgDecoder,
        ParamGroup::MixHead,
    ];

    fn index(self) -> usize {
        match self {
            ParamGroup::Encoder => 0,
            ParamGroup::FgDecoder => 1,
            ParamGroup::BgDecoder => 2,
            ParamGroup::MixHead => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ConvSlot {
    pub w: Range<usize>,
    pub b: Range<usize>,
    pub cout: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone)]
pub(crate) struct DecoderSlots {
    /// Indexed by resolution level `0..depth`.
    pub up: Vec<ConvSlot>,
    pub merge: Vec<ConvSlot>,
    pub head: ConvSlot,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub encoder: Vec<[ConvSlot; 2]>,
    pub fg: DecoderSlots,
    pub bg: DecoderSlots,
    pub mix: ConvSlot,
    pub groups: [Range<usize>; 4],
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

struct LayoutBuilder {
    tensors: Vec<TensorSpec>,
    offset: usize,
}

impl LayoutBuilder {
    fn conv(&mut self, name: &str, cin: usize, cout: usize, kernel: usize) -> ConvSlot {
        let wlen = cout * cin * kernel * kernel;
        let w = self.offset..self.offset + wlen;
        self.tensors.push(TensorSpec {
            name: format!("{name}.weight"),
            shape: vec![cout, cin, kernel, kernel],
            offset: self.offset,
        });
        self.offset += wlen;
        let b = self.offset..self.offset + cout;
        self.tensors.push(TensorSpec {
            name: format!("{name}.bias"),
            shape: vec![cout],
            offset: self.offset,
        });
        self.offset += cout;
        ConvSlot {
            w,
            b,
            cout,
            kernel,
        }
    }

    fn decoder(&mut self, prefix: &str, arch: &ArchSpec) -> DecoderSlots {
        let widths = &arch.encoder_widths;
        let mut up = vec![None; arch.depth];
        let mut merge = vec![None; arch.depth];
        for l in (0..arch.depth).rev() {
            up[l] = Some(self.conv(&format!("{prefix}.{l}.up"), widths[l + 1], widths[l], 3));
            merge[l] = Some(self.conv(&format!("{prefix}.{l}.merge"), 2 * widths[l], widths[l], 3));
        }
        let head = self.conv(&format!("{prefix}.head"), widths[0], arch.class_channels, 1);
        DecoderSlots {
            up: up.into_iter().map(|s| s.expect("filled")).collect(),
            merge: merge.into_iter().map(|s| s.expect("filled")).collect(),
            head,
        }
    }
}

impl Layout {
    pub(crate) fn new(arch: &ArchSpec) -> Layout {
        let mut b = LayoutBuilder {
            tensors: Vec::new(),
            offset: 0,
        };
        let widths = &arch.encoder_widths;
        let mut encoder = Vec::with_capacity(arch.depth + 1);
        for l in 0..=arch.depth {
            let cin = if l == 0 { arch.input_channels } else { widths[l - 1] };
            let c1 = b.conv(&format!("encoder.{l}.conv1"), cin, widths[l], 3);
            let c2 = b.conv(&format!("encoder.{l}.conv2"), widths[l], widths[l], 3);
            encoder.push([c1, c2]);
        }
        let enc_end = b.offset;
        let fg = b.decoder("fg", arch);
        let fg_end = b.offset;
        let bg = b.decoder("bg", arch);
        let bg_end = b.offset;
        let c = arch.class_channels;
        let mix = b.conv("mix", 2 * c, c, 1);
        let total = b.offset;
        Layout {
            encoder,
            fg,
            bg,
            mix,
            groups: [0..enc_end, enc_end..fg_end, fg_end..bg_end, bg_end..total],
            tensors: b.tensors,
            total,
        }
    }
}

/// Parameters of one network plus its role and training step.
#[derive(Debug, Clone)]
pub struct ModelState {
    arch: ArchSpec,
    pub role: Role,
    pub step: u64,
    params: Vec<f64>,
    layout: Layout,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch
            && self.role == other.role
            && self.step == other.step
            && self.params == other.params
    }
}

impl ModelState {
    /// He-initialized network; biases start at zero.
    pub fn init(arch: ArchSpec, role: Role, seed: u64) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &layout.tensors {
            if !t.name.ends_with(".weight") {
                continue;
            }
            let fan_in: usize = t.shape[1..].iter().product();
            let linear_out = t.name.ends_with("head.weight") || t.name.starts_with("mix.");
            let gain = if linear_out { 1.0 } else { 2.0 };
            let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("finite std");
            for p in &mut params[t.offset..t.offset + t.len()] {
                *p = normal.sample(&mut rng);
            }
        }
        Ok(ModelState {
            arch,
            role,
            step: 0,
            params,
            layout,
        })
    }

    pub fn from_params(arch: ArchSpec, role: Role, step: u64, params: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        let layout = Layout::new(&arch);
        if params.len() != layout.total {
            return Err(Error::domain(format!(
                "expected {} parameters, got {}",
                layout.total,
                params.len()
            )));
        }
        Ok(ModelState {
            arch,
            role,
            step,
            params,
            layout,
        })
    }

    pub fn arch(&self) -> &ArchSpec {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn group_range(&self, group: ParamGroup) -> Range<usize> {
        self.layout.groups[group.index()].clone()
    }

    pub fn group_params_mut(&mut self, group: ParamGroup) -> &mut [f64] {
        let r = self.group_range(group);
        &mut self.params[r]
    }

    /// Parameters touched by [`forward_fg_only`].
    pub fn inference_param_count(&self) -> usize {
        self.group_range(ParamGroup::Encoder).len() + self.group_range(ParamGroup::FgDecoder).len()
    }

    /// Declared tensor ordering of the flat parameter vector.
    pub fn tensors(&self) -> &[TensorSpec] {
        &self.layout.tensors
    }

    pub(crate) fn layout(&self) -> &Layout {
        &self.layout
    }

    /// Rounds every parameter through `f32`, as a checkpoint round-trip would.
    pub fn quantize_f32(&mut self) {
        for p in &mut self.params {
            *p = *p as f32 as f64;
        }
    }

    pub(crate) fn check_input(&self, x: &Raster) -> Result<()> {
        let m = self.arch.spatial_multiple();
        if x.channels() != self.arch.input_channels {
            return Err(Error::domain(format!(
                "input has {} channels, network expects {}",
                x.channels(),
                self.arch.input_channels
            )));
        }
        if x.height() == 0 || x.width() == 0 || x.height() % m != 0 || x.width() % m != 0 {
            return Err(Error::domain(format!(
                "input {}x{} is not a positive multiple of {m}",
                x.height(),
                x.width()
            )));
        }
        Ok(())
    }
}

/// Which optional branches a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branches {
    pub bg: bool,
    pub mix: bool,
}

impl Branches {
    pub const ALL: Branches = Branches { bg: true, mix: true };
    pub const FG_ONLY: Branches = Branches { bg: false, mix: false };
}

/// Probabilities of the three heads.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub q_fg: Raster,
    pub q_bg: Raster,
    pub q_mix: Raster,
}

pub fn forward(model: &ModelState, x: &Raster) -> Result<ForwardOutput> {
    let (p, _) = forward_cached(model, x, Branches::ALL)?;
    Ok(ForwardOutput {
        q_fg: p.q_fg,
        q_bg: p.q_bg.expect("bg branch requested"),
        q_mix: p.q_mix.expect("mix branch requested"),
    })
}

/// Foreground probabilities computed from the encoder and foreground decoder only.
pub fn forward_fg_only(model: &ModelState, x: &Raster) -> Result<Raster> {
    let (p, _) = forward_cached(model, x, Branches::FG_ONLY)?;
    Ok(p.q_fg)
}

/// `teacher ← momentum·teacher + (1−momentum)·student`, for every parameter.
pub fn ema_update(teacher: &mut ModelState, student: &ModelState, momentum: f64) -> Result<()> {
    if teacher.arch != student.arch {
        return Err(Error::domain("ema_update: architecture mismatch"));
    }
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::domain(format!("ema momentum {momentum} outside [0,1]")));
    }
    for (t, &s) in teacher.params.iter_mut().zip(&student.params) {
        *t = momentum * *t + (1.0 - momentum) * s;
    }
    Ok(())
}
