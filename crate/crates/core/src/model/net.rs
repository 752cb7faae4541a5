use std::collections::HashMap;

use ndarray::{Array, Array4, ArrayView, ArrayView3, ArrayView4, Axis, Dimension, RemoveAxis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::{DownsamplingMode, ModelConfig};
use super::kernels::{self, ConvShape, NormOutput};
use crate::error::{Error, Result};

/// Evaluation and training run the same computation (group normalization
/// keeps no running statistics); the mode only controls whether activations
/// are retained for a backward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One named dense array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Parameter {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvLayer {
    filter: usize,
    bias: usize,
    scale: usize,
    offset: usize,
    c_in: usize,
    c_out: usize,
    k: usize,
    stride: usize,
    pad: usize,
    pool: bool,
    groups: usize,
}

impl ConvLayer {
    fn shape(&self, h: usize, w: usize) -> ConvShape {
        ConvShape {
            c_in: self.c_in,
            c_out: self.c_out,
            h,
            w,
            k: self.k,
            stride: self.stride,
            pad: self.pad,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Head {
    transform: ConvLayer,
    out_filter: usize,
    out_bias: usize,
    out_channels: usize,
}

/// The detector: a strided conv extractor and two heads (classifier and
/// regressor), each an unpadded 2×2 conv followed by a 1×1 conv.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Parameter>,
    extractor: Vec<ConvLayer>,
    cls: Head,
    reg: Head,
}

/// Gradient buffers aligned with [`Model::parameters`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub data: Vec<Vec<f32>>,
}

impl Gradients {
    pub fn zeros_like(model: &Model) -> Self {
        Self {
            data: model.params.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|g| g.fill(0.0));
    }

    pub fn scale(&mut self, s: f32) {
        self.data.iter_mut().flatten().for_each(|g| *g *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().flatten().all(|g| g.is_finite())
    }
}

/// Raw outputs of one image, channel-major over the `side × side` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    pub side: usize,
    /// `[2, side²]`: channel 0 "no segment", channel 1 "segment".
    pub logits: Vec<f32>,
    /// `[4, side²]`: normalized `x1, y1, x2, y2`.
    pub reg: Vec<f32>,
}

struct LayerTape {
    input: Vec<f32>,
    h: usize,
    w: usize,
    norm: NormOutput,
    pool_idx: Option<Vec<u32>>,
}

struct HeadTape {
    transform: LayerTape,
}

/// Activations retained by [`Model::forward_sample`] for the backward pass.
pub struct Tape {
    layers: Vec<LayerTape>,
    feature_side: usize,
    cls: HeadTape,
    reg: HeadTape,
}

/// Batch outputs in lattice layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// `[B, L, L, 2]`
    pub class_logits: Array4<f32>,
    /// `[B, L, L, 4]`
    pub reg_out: Array4<f32>,
}

/// Ordered parameter names and shapes for `config`, with the layer table.
fn layout(config: &ModelConfig) -> (Vec<(String, Vec<usize>)>, Vec<ConvLayer>, Head, Head) {
    let mut specs: Vec<(String, Vec<usize>)> = Vec::new();
    let add_conv = |specs: &mut Vec<(String, Vec<usize>)>,
                        prefix: &str,
                        c_in: usize,
                        c_out: usize,
                        k: usize,
                        stride: usize,
                        pad: usize,
                        pool: bool| {
        let filter = specs.len();
        specs.push((format!("{prefix}.filter"), vec![c_out, c_in, k, k]));
        specs.push((format!("{prefix}.bias"), vec![c_out]));
        specs.push((format!("{prefix}.gn_scale"), vec![c_out]));
        specs.push((format!("{prefix}.gn_offset"), vec![c_out]));
        ConvLayer {
            filter,
            bias: filter + 1,
            scale: filter + 2,
            offset: filter + 3,
            c_in,
            c_out,
            k,
            stride,
            pad,
            pool,
            groups: config.groups_for(c_out),
        }
    };
    let mut extractor = Vec::new();
    let mut c_in = config.input_channels;
    for (i, &c_out) in config.channel_plan.iter().enumerate() {
        for j in 0..config.blocks_per_stage {
            let last = j + 1 == config.blocks_per_stage;
            let (stride, pool) = match (last, config.downsampling_mode) {
                (false, _) => (1, false),
                (true, DownsamplingMode::StridedConv) => (2, false),
                (true, DownsamplingMode::MaxPool) => (1, true),
            };
            extractor.push(add_conv(&mut specs, &format!("stage{i}.block{j}"), c_in, c_out, 3, stride, 1, pool));
            c_in = c_out;
        }
    }
    let head = |specs: &mut Vec<(String, Vec<usize>)>, name: &str, out_channels: usize| {
        let transform = add_conv(
            specs,
            &format!("head.{name}.transform"),
            c_in,
            config.head_width,
            2,
            1,
            0,
            false,
        );
        let out_filter = specs.len();
        specs.push((
            format!("head.{name}.output.filter"),
            vec![out_channels, config.head_width, 1, 1],
        ));
        specs.push((format!("head.{name}.output.bias"), vec![out_channels]));
        Head {
            transform,
            out_filter,
            out_bias: out_filter + 1,
            out_channels,
        }
    };
    let cls = head(&mut specs, "cls", 2);
    let reg = head(&mut specs, "reg", 4);
    (specs, extractor, cls, reg)
}

impl Model {
    /// Randomly initialized model, reproducible from `seed`.
    ///
    /// Filters feeding a rectifier are drawn from `N(0, 2 / fan_in)`, the
    /// final 1×1 filters from `N(0, 1 / fan_in)`; biases and normalization
    /// offsets start at 0, normalization scales at 1.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let output_filters = [model.cls.out_filter, model.reg.out_filter];
        for (i, p) in model.params.iter_mut().enumerate() {
            if p.name.ends_with(".filter") {
                let fan_in: usize = p.shape[1..].iter().product();
                let gain = if output_filters.contains(&i) { 1.0 } else { 2.0 };
                let normal = Normal::new(0.0, (gain / fan_in as f64).sqrt()).expect("positive std");
                p.data.iter_mut().for_each(|v| *v = normal.sample(&mut rng) as f32);
            } else if p.name.ends_with(".gn_scale") {
                p.data.fill(1.0);
            }
        }
        Ok(model)
    }

    /// Model with every parameter set to zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let (specs, extractor, cls, reg) = layout(&config);
        let params = specs
            .into_iter()
            .map(|(name, shape)| {
                let n = shape.iter().product();
                Parameter {
                    name,
                    shape,
                    data: vec![0.0; n],
                }
            })
            .collect();
        Ok(Self {
            config,
            params,
            extractor,
            cls,
            reg,
        })
    }

    /// Builds a model from named arrays; every expected name must be present
    /// with the expected shape.
    pub fn from_named(config: ModelConfig, mut arrays: HashMap<String, (Vec<usize>, Vec<f32>)>) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        for p in &mut model.params {
            let (shape, data) = arrays
                .remove(&p.name)
                .ok_or_else(|| Error::Format(format!("missing parameter {}", p.name)))?;
            if shape != p.shape || data.len() != p.len() {
                return Err(Error::Format(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    p.name, shape, p.shape
                )));
            }
            p.data = data;
        }
        if let Some(extra) = arrays.keys().next() {
            return Err(Error::Format(format!("unexpected parameter {extra}")));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameters_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    /// Total number of scalar parameters.
    pub fn count_parameters(&self) -> usize {
        self.params.iter().map(Parameter::len).sum()
    }

    /// Number of convolution layers in the extractor.
    pub fn extractor_depth(&self) -> usize {
        self.extractor.len()
    }

    fn check_side(&self, side: usize) -> Result<()> {
        let cell = self.config.cell_size();
        if side < cell || side % cell != 0 {
            return Err(Error::Shape(format!(
                "image side {side} must be a positive multiple of {cell}"
            )));
        }
        Ok(())
    }

    fn layer_forward(
        &self,
        l: &ConvLayer,
        x: Vec<f32>,
        h: usize,
        w: usize,
        scratch: &mut Vec<f32>,
        keep: bool,
    ) -> (Vec<f32>, usize, usize, Option<LayerTape>) {
        let s = l.shape(h, w);
        let (ho, wo) = (s.ho(), s.wo());
        let y = kernels::conv_forward(&s, &x, &self.params[l.filter].data, &self.params[l.bias].data, scratch);
        let norm = kernels::group_norm_relu_forward(
            &y,
            l.c_out,
            ho * wo,
            l.groups,
            &self.params[l.scale].data,
            &self.params[l.offset].data,
        );
        drop(y);
        let (out, oh, ow, pool_idx) = if l.pool {
            let (p, idx) = kernels::max_pool2_forward(&norm.act, l.c_out, ho, wo);
            (p, ho / 2, wo / 2, Some(idx))
        } else {
            (norm.act.clone(), ho, wo, None)
        };
        let tape = keep.then(|| LayerTape {
            input: x,
            h,
            w,
            norm,
            pool_idx,
        });
        (out, oh, ow, tape)
    }

    fn layer_backward(
        &self,
        l: &ConvLayer,
        tape: LayerTape,
        dout: Vec<f32>,
        grads: &mut Gradients,
        need_dx: bool,
        scratch: &mut Vec<f32>,
    ) -> Option<Vec<f32>> {
        let s = l.shape(tape.h, tape.w);
        let (ho, wo) = (s.ho(), s.wo());
        let dact = match &tape.pool_idx {
            Some(idx) => kernels::max_pool2_backward(&dout, idx, l.c_out, ho, wo),
            None => dout,
        };
        let (dscale, doffset) = two_mut(&mut grads.data, l.scale, l.offset);
        let dy = kernels::group_norm_relu_backward(
            dact,
            &tape.norm,
            l.c_out,
            ho * wo,
            l.groups,
            &self.params[l.scale].data,
            dscale,
            doffset,
        );
        let (dfilter, dbias) = two_mut(&mut grads.data, l.filter, l.bias);
        kernels::conv_backward(
            &s,
            &tape.input,
            &self.params[l.filter].data,
            &dy,
            dfilter,
            dbias,
            need_dx,
            scratch,
        )
    }

    fn head_forward(
        &self,
        head: &Head,
        feature: &[f32],
        side: usize,
        scratch: &mut Vec<f32>,
        keep: bool,
    ) -> (Vec<f32>, Option<HeadTape>) {
        let (t, lh, lw, tape) = self.layer_forward(&head.transform, feature.to_vec(), side, side, scratch, keep);
        let s = ConvShape {
            c_in: self.config.head_width,
            c_out: head.out_channels,
            h: lh,
            w: lw,
            k: 1,
            stride: 1,
            pad: 0,
        };
        let out = kernels::conv_forward(
            &s,
            &t,
            &self.params[head.out_filter].data,
            &self.params[head.out_bias].data,
            scratch,
        );
        (out, tape.map(|transform| HeadTape { transform }))
    }

    fn head_backward(
        &self,
        head: &Head,
        tape: HeadTape,
        dout: &[f32],
        grads: &mut Gradients,
        scratch: &mut Vec<f32>,
    ) -> Vec<f32> {
        let t = &tape.transform;
        let (lh, lw) = (t.h - 1, t.w - 1);
        let s = ConvShape {
            c_in: self.config.head_width,
            c_out: head.out_channels,
            h: lh,
            w: lw,
            k: 1,
            stride: 1,
            pad: 0,
        };
        let (dfilter, dbias) = two_mut(&mut grads.data, head.out_filter, head.out_bias);
        let dt = kernels::conv_backward(
            &s,
            &t.norm.act,
            &self.params[head.out_filter].data,
            dout,
            dfilter,
            dbias,
            true,
            scratch,
        )
        .expect("requested");
        self.layer_backward(&head.transform, tape.transform, dt, grads, true, scratch)
            .expect("requested")
    }

    /// Forward pass of one `[S, S, C]` image with values in `[0, 1]`.
    ///
    /// Any side that is a positive multiple of the cell size is accepted; the
    /// lattice side is `S / stride − 1`. With `keep_tape` the activations
    /// needed by [`Model::backward_sample`] are returned.
    pub fn forward_sample(&self, image: ArrayView3<f32>, keep_tape: bool) -> Result<(SampleOutput, Option<Tape>)> {
        let (h, w, c) = image.dim();
        if h != w || c != self.config.input_channels {
            return Err(Error::Shape(format!(
                "expected a square image with {} channels, got {h}×{w}×{c}",
                self.config.input_channels
            )));
        }
        self.check_side(h)?;
        let mut x = image.permuted_axes([2, 0, 1]).as_standard_layout().into_owned().into_raw_vec_and_offset().0;
        let (mut ch, mut cw) = (h, w);
        let mut scratch = Vec::new();
        let mut layers = Vec::with_capacity(if keep_tape { self.extractor.len() } else { 0 });
        for l in &self.extractor {
            let (y, oh, ow, tape) = self.layer_forward(l, x, ch, cw, &mut scratch, keep_tape);
            x = y;
            ch = oh;
            cw = ow;
            layers.extend(tape);
        }
        let side = ch - 1;
        let (logits, cls_tape) = self.head_forward(&self.cls, &x, ch, &mut scratch, keep_tape);
        let (reg, reg_tape) = self.head_forward(&self.reg, &x, ch, &mut scratch, keep_tape);
        let out = SampleOutput { side, logits, reg };
        let tape = if keep_tape {
            Some(Tape {
                layers,
                feature_side: ch,
                cls: cls_tape.expect("kept"),
                reg: reg_tape.expect("kept"),
            })
        } else {
            None
        };
        Ok((out, tape))
    }

    /// Accumulates into `grads` the parameter gradients given the gradients
    /// of some scalar w.r.t. the outputs of [`Model::forward_sample`]
    /// (same channel-major layout).
    pub fn backward_sample(&self, tape: Tape, dlogits: &[f32], dreg: &[f32], grads: &mut Gradients) -> Result<()> {
        let side = tape.feature_side - 1;
        if dlogits.len() != 2 * side * side || dreg.len() != 4 * side * side {
            return Err(Error::Shape(format!(
                "output gradients of length {} / {} do not match a {side}×{side} lattice",
                dlogits.len(),
                dreg.len()
            )));
        }
        if grads.data.len() != self.params.len() {
            return Err(Error::Shape("gradient buffers do not match the model".into()));
        }
        let mut scratch = Vec::new();
        let Tape {
            mut layers, cls, reg, ..
        } = tape;
        let mut dfeat = self.head_backward(&self.cls, cls, dlogits, grads, &mut scratch);
        let dreg_feat = self.head_backward(&self.reg, reg, dreg, grads, &mut scratch);
        for (a, b) in dfeat.iter_mut().zip(&dreg_feat) {
            *a += *b;
        }
        drop(dreg_feat);
        let mut d = dfeat;
        for (i, l) in self.extractor.iter().enumerate().rev() {
            let t = layers.pop().expect("one tape per layer");
            match self.layer_backward(l, t, d, grads, i > 0, &mut scratch) {
                Some(dx) => d = dx,
                None => break,
            }
        }
        Ok(())
    }

    /// Batch forward on `[B, S, S, C]` images.
    pub fn forward(&self, images: ArrayView4<f32>, _mode: Mode) -> Result<ForwardOutput> {
        let (b, s, _, _) = images.dim();
        self.check_side(s)?;
        let side = s / self.config.stride() - 1;
        let mut class_logits = Array4::<f32>::zeros((b, side, side, 2));
        let mut reg_out = Array4::<f32>::zeros((b, side, side, 4));
        for (i, img) in images.outer_iter().enumerate() {
            let (out, _) = self.forward_sample(img, false)?;
            fill_lattice(class_logits.index_axis_mut(Axis(0), i), &out.logits, side, 2);
            fill_lattice(reg_out.index_axis_mut(Axis(0), i), &out.reg, side, 4);
        }
        Ok(ForwardOutput { class_logits, reg_out })
    }
}

fn fill_lattice(mut dst: ndarray::ArrayViewMut3<f32>, src: &[f32], side: usize, ch: usize) {
    let plane = side * side;
    for c in 0..ch {
        for r in 0..side {
            for q in 0..side {
                dst[[r, q, c]] = src[c * plane + r * side + q];
            }
        }
    }
}

fn two_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

/// Probability of the "segment" channel from logits whose last axis is
/// `[no segment, segment]`.
pub fn class_probabilities<D>(class_logits: ArrayView<f32, D>) -> Result<Array<f32, D::Smaller>>
where
    D: Dimension + RemoveAxis,
{
    let last = class_logits.ndim().checked_sub(1).ok_or_else(|| Error::Shape("logits need an axis".into()))?;
    if class_logits.len_of(Axis(last)) != 2 {
        return Err(Error::Shape(format!(
            "class logits must have 2 channels on the last axis, got {}",
            class_logits.len_of(Axis(last))
        )));
    }
    Ok(class_logits.map_axis(Axis(last), |v| {
        crate::loss::positive_probability(v[0] as f64, v[1] as f64) as f32
    }))
}
