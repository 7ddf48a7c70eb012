//! Two-branch convolutional Q-network with hand-written reverse mode.
//!
//! The local and global maps each go through a stack of valid, stride-1
//! convolutions. Both outputs are flattened, concatenated with the budget
//! scalar and fed through a dense head whose last layer yields one value
//! per action. Everything is generic over the float type so gradient checks
//! can run in `f64` while training uses `f32`.

mod checkpoint;
mod optim;

pub use checkpoint::{load_params, read_checkpoint, save_params, CheckpointHeader, CHECKPOINT_MAGIC};
pub use optim::{adam_step, smooth_l1, AdamState};

use std::fmt::{Debug, Write as _};

use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;

/// Float types the network runs in.
pub trait Real: Float + Debug + Default + Send + Sync + 'static {}
impl Real for f32 {}
impl Real for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub channels: usize,
    pub kernel: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseSpec {
    pub width: usize,
    #[serde(default = "relu")]
    pub activation: Activation,
}

fn relu() -> Activation {
    Activation::Relu
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QNetworkSpec {
    /// `[channels, height, width]` of the local map.
    pub local_input: [usize; 3],
    pub global_input: [usize; 3],
    pub local_convs: Vec<ConvSpec>,
    pub global_convs: Vec<ConvSpec>,
    /// Dense layers; the last one is the action-value output.
    pub head: Vec<DenseSpec>,
}

impl QNetworkSpec {
    /// Conv branches and hidden widths with ReLU everywhere and a linear
    /// output of `n_actions` values.
    pub fn build(
        local_input: [usize; 3],
        global_input: [usize; 3],
        local: &[(usize, usize)],
        global: &[(usize, usize)],
        hidden: &[usize],
        n_actions: usize,
    ) -> Self {
        let conv = |&(channels, kernel): &(usize, usize)| ConvSpec {
            channels,
            kernel,
            activation: Activation::Relu,
        };
        let mut head: Vec<DenseSpec> = hidden
            .iter()
            .map(|&width| DenseSpec { width, activation: Activation::Relu })
            .collect();
        head.push(DenseSpec { width: n_actions, activation: Activation::Identity });
        Self {
            local_input,
            global_input,
            local_convs: local.iter().map(conv).collect(),
            global_convs: global.iter().map(conv).collect(),
            head,
        }
    }

    pub fn n_outputs(&self) -> usize {
        self.head.last().map_or(0, |d| d.width)
    }

    /// Stable textual form; hashed into checkpoints.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let act = |a: Activation| match a {
            Activation::Relu => "relu",
            Activation::Identity => "id",
        };
        let [c, h, w] = self.local_input;
        let _ = write!(s, "local={c}x{h}x{w}");
        for l in &self.local_convs {
            let _ = write!(s, ";lc{}k{}{}", l.channels, l.kernel, act(l.activation));
        }
        let [c, h, w] = self.global_input;
        let _ = write!(s, "|global={c}x{h}x{w}");
        for l in &self.global_convs {
            let _ = write!(s, ";gc{}k{}{}", l.channels, l.kernel, act(l.activation));
        }
        s.push_str("|head");
        for d in &self.head {
            let _ = write!(s, ";d{}{}", d.width, act(d.activation));
        }
        s
    }

    /// 64-bit FNV-1a of [`QNetworkSpec::canonical`].
    pub fn hash(&self) -> u64 {
        self.canonical().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvLayer {
    in_c: usize,
    in_h: usize,
    in_w: usize,
    out_c: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

impl ConvLayer {
    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_len(&self) -> usize {
        self.out_c * self.out_h * self.out_w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct DenseLayer {
    n_in: usize,
    n_out: usize,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

/// Per-layer parameter offsets derived from a spec.
#[derive(Debug, Clone, PartialEq)]
pub struct QNetwork {
    spec: QNetworkSpec,
    local: Vec<ConvLayer>,
    global: Vec<ConvLayer>,
    head: Vec<DenseLayer>,
    param_count: usize,
}

/// Flat trainable parameters in layer order: local convs, global convs,
/// head; each layer stores its weights then its biases.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams<T> {
    pub values: Vec<T>,
}

impl<T: Real> NetworkParams<T> {
    pub fn zeros(n: usize) -> Self {
        Self { values: vec![T::zero(); n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn cast<U: Real>(&self) -> NetworkParams<U> {
        NetworkParams { values: self.values.iter().map(|&v| U::from(v).expect("finite")).collect() }
    }
}

/// One network input. Observations are stored in `f32`.
#[derive(Debug, Clone, Copy)]
pub struct NetInput<'a> {
    pub local: &'a [f32],
    pub global: &'a [f32],
    pub budget: f32,
}

#[derive(Debug, Clone, Default)]
struct SampleCache<T> {
    // acts[0] is the branch input, acts[i + 1] the output of layer i
    local: Vec<Vec<T>>,
    global: Vec<Vec<T>>,
    head: Vec<Vec<T>>,
}

/// Activations recorded by [`QNetwork::forward_batch`] for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    samples: Vec<SampleCache<T>>,
    params_len: usize,
}

impl<T> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    // eight independent accumulators let the loop vectorise
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail = tail + *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi = *yi + alpha * xi;
    }
}

fn apply_act<T: Real>(act: Activation, v: &mut [T]) {
    if act == Activation::Relu {
        for x in v.iter_mut() {
            if *x < T::zero() {
                *x = T::zero();
            }
        }
    }
}

fn mask_act<T: Real>(act: Activation, out: &[T], g: &mut [T]) {
    if act == Activation::Relu {
        for (gi, &o) in g.iter_mut().zip(out) {
            if o <= T::zero() {
                *gi = T::zero();
            }
        }
    }
}

/// `patches[j * P + p]` with `j = (ic, ky, kx)` and `p = (oy, ox)`.
fn im2col<T: Real>(l: &ConvLayer, input: &[T], patches: &mut Vec<T>) {
    let p_len = l.out_h * l.out_w;
    patches.clear();
    patches.resize(l.patch_len() * p_len, T::zero());
    for ic in 0..l.in_c {
        let plane = &input[ic * l.in_h * l.in_w..(ic + 1) * l.in_h * l.in_w];
        for ky in 0..l.k {
            for kx in 0..l.k {
                let j = (ic * l.k + ky) * l.k + kx;
                let dst = &mut patches[j * p_len..(j + 1) * p_len];
                for oy in 0..l.out_h {
                    let src = &plane[(oy + ky) * l.in_w + kx..(oy + ky) * l.in_w + kx + l.out_w];
                    dst[oy * l.out_w..(oy + 1) * l.out_w].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(l: &ConvLayer, dpatches: &[T], dinput: &mut [T]) {
    let p_len = l.out_h * l.out_w;
    for ic in 0..l.in_c {
        for ky in 0..l.k {
            for kx in 0..l.k {
                let j = (ic * l.k + ky) * l.k + kx;
                let src = &dpatches[j * p_len..(j + 1) * p_len];
                for oy in 0..l.out_h {
                    let base = ic * l.in_h * l.in_w + (oy + ky) * l.in_w + kx;
                    let dst = &mut dinput[base..base + l.out_w];
                    for (d, &s) in dst.iter_mut().zip(&src[oy * l.out_w..(oy + 1) * l.out_w]) {
                        *d = *d + s;
                    }
                }
            }
        }
    }
}

impl QNetwork {
    pub fn new(spec: QNetworkSpec) -> Result<Self> {
        let mut offset = 0usize;
        let mut branch = |input: [usize; 3], convs: &[ConvSpec], name: &str| -> Result<Vec<ConvLayer>> {
            let [mut c, mut h, mut w] = input;
            if c == 0 || h == 0 || w == 0 {
                return Err(Error::Structural(format!("{name} input has a zero dimension")));
            }
            let mut layers = Vec::with_capacity(convs.len());
            for (i, cs) in convs.iter().enumerate() {
                if cs.kernel == 0 || cs.channels == 0 || cs.kernel > h || cs.kernel > w {
                    return Err(Error::Structural(format!(
                        "{name} conv {i}: kernel {} / channels {} invalid for {h}x{w} input",
                        cs.kernel, cs.channels
                    )));
                }
                let (oh, ow) = (h - cs.kernel + 1, w - cs.kernel + 1);
                let w_off = offset;
                offset += cs.channels * c * cs.kernel * cs.kernel;
                let b_off = offset;
                offset += cs.channels;
                layers.push(ConvLayer {
                    in_c: c,
                    in_h: h,
                    in_w: w,
                    out_c: cs.channels,
                    k: cs.kernel,
                    out_h: oh,
                    out_w: ow,
                    act: cs.activation,
                    w_off,
                    b_off,
                });
                (c, h, w) = (cs.channels, oh, ow);
            }
            Ok(layers)
        };
        let local = branch(spec.local_input, &spec.local_convs, "local")?;
        let global = branch(spec.global_input, &spec.global_convs, "global")?;
        let flat = |layers: &[ConvLayer], input: [usize; 3]| {
            layers.last().map_or(input.iter().product(), |l| l.out_len())
        };
        let mut n_in = flat(&local, spec.local_input) + flat(&global, spec.global_input) + 1;
        if spec.head.is_empty() {
            return Err(Error::Structural("dense head must have at least one layer".into()));
        }
        let mut head = Vec::with_capacity(spec.head.len());
        for (i, d) in spec.head.iter().enumerate() {
            if d.width == 0 {
                return Err(Error::Structural(format!("dense layer {i} has zero width")));
            }
            let w_off = offset;
            offset += d.width * n_in;
            let b_off = offset;
            offset += d.width;
            head.push(DenseLayer { n_in, n_out: d.width, act: d.activation, w_off, b_off });
            n_in = d.width;
        }
        Ok(Self { spec, local, global, head, param_count: offset })
    }

    pub fn spec(&self) -> &QNetworkSpec {
        &self.spec
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    pub fn n_outputs(&self) -> usize {
        self.spec.n_outputs()
    }

    /// He-normal weights (std `sqrt(2 / fan_in)`), zero biases.
    pub fn init_params<T: Real>(&self, rng: &mut RngStream) -> NetworkParams<T> {
        let mut values = vec![T::zero(); self.param_count];
        let mut fill = |off: usize, len: usize, fan_in: usize| {
            let std = (2.0 / fan_in as f64).sqrt();
            for v in &mut values[off..off + len] {
                *v = T::from(std * rng.next_standard_normal()).expect("finite");
            }
        };
        for l in self.local.iter().chain(&self.global) {
            fill(l.w_off, l.out_c * l.patch_len(), l.patch_len());
        }
        for d in &self.head {
            fill(d.w_off, d.n_out * d.n_in, d.n_in);
        }
        NetworkParams { values }
    }

    /// Ranges `(weights, biases)` of every layer, in parameter order.
    pub fn layer_ranges(&self) -> Vec<(std::ops::Range<usize>, std::ops::Range<usize>)> {
        let conv = self
            .local
            .iter()
            .chain(&self.global)
            .map(|l| (l.w_off..l.b_off, l.b_off..l.b_off + l.out_c));
        let dense = self.head.iter().map(|d| (d.w_off..d.b_off, d.b_off..d.b_off + d.n_out));
        conv.chain(dense).collect()
    }

    fn check_input<T: Real>(&self, params: &[T], input: &NetInput<'_>) -> Result<()> {
        if params.len() != self.param_count {
            return Err(Error::Structural(format!(
                "expected {} parameters, got {}",
                self.param_count,
                params.len()
            )));
        }
        let want_l: usize = self.spec.local_input.iter().product();
        let want_g: usize = self.spec.global_input.iter().product();
        if input.local.len() != want_l || input.global.len() != want_g {
            return Err(Error::Structural(format!(
                "input sizes ({}, {}) do not match spec ({want_l}, {want_g})",
                input.local.len(),
                input.global.len()
            )));
        }
        Ok(())
    }

    fn conv_forward<T: Real>(l: &ConvLayer, params: &[T], input: &[T], patches: &mut Vec<T>) -> Vec<T> {
        im2col(l, input, patches);
        let p_len = l.out_h * l.out_w;
        let pl = l.patch_len();
        let mut out = vec![T::zero(); l.out_len()];
        for oc in 0..l.out_c {
            let dst = &mut out[oc * p_len..(oc + 1) * p_len];
            dst.fill(params[l.b_off + oc]);
            let wrow = &params[l.w_off + oc * pl..l.w_off + (oc + 1) * pl];
            for (j, &wj) in wrow.iter().enumerate() {
                axpy(wj, &patches[j * p_len..(j + 1) * p_len], dst);
            }
        }
        apply_act(l.act, &mut out);
        out
    }

    fn dense_forward<T: Real>(d: &DenseLayer, params: &[T], input: &[T]) -> Vec<T> {
        let mut out: Vec<T> = (0..d.n_out)
            .map(|o| {
                let row = &params[d.w_off + o * d.n_in..d.w_off + (o + 1) * d.n_in];
                params[d.b_off + o] + dot(row, input)
            })
            .collect();
        apply_act(d.act, &mut out);
        out
    }

    fn forward_sample<T: Real>(&self, params: &[T], input: &NetInput<'_>, patches: &mut Vec<T>) -> SampleCache<T> {
        let to_t = |v: &[f32]| v.iter().map(|&x| T::from(x).expect("finite")).collect::<Vec<T>>();
        let mut cache = SampleCache {
            local: Vec::with_capacity(self.local.len() + 1),
            global: Vec::with_capacity(self.global.len() + 1),
            head: Vec::with_capacity(self.head.len() + 1),
        };
        cache.local.push(to_t(input.local));
        for l in &self.local {
            let out = Self::conv_forward(l, params, cache.local.last().expect("input"), patches);
            cache.local.push(out);
        }
        cache.global.push(to_t(input.global));
        for l in &self.global {
            let out = Self::conv_forward(l, params, cache.global.last().expect("input"), patches);
            cache.global.push(out);
        }
        let lo = cache.local.last().expect("input");
        let go = cache.global.last().expect("input");
        let mut concat = Vec::with_capacity(lo.len() + go.len() + 1);
        concat.extend_from_slice(lo);
        concat.extend_from_slice(go);
        concat.push(T::from(input.budget).expect("finite"));
        cache.head.push(concat);
        for d in &self.head {
            let out = Self::dense_forward(d, params, cache.head.last().expect("input"));
            cache.head.push(out);
        }
        cache
    }

    /// Action values for one input.
    pub fn forward<T: Real>(&self, params: &NetworkParams<T>, input: &NetInput<'_>) -> Result<Vec<T>> {
        self.check_input(&params.values, input)?;
        let mut patches = Vec::new();
        let mut cache = self.forward_sample(&params.values, input, &mut patches);
        Ok(cache.head.pop().expect("output"))
    }

    /// Forward a batch, recording activations in `cache`. Returns one row of
    /// action values per input.
    pub fn forward_batch<T: Real>(
        &self,
        params: &NetworkParams<T>,
        inputs: &[NetInput<'_>],
        cache: &mut ForwardCache<T>,
    ) -> Result<Vec<Vec<T>>> {
        cache.samples.clear();
        cache.params_len = params.len();
        let mut patches = Vec::new();
        let mut outputs = Vec::with_capacity(inputs.len());
        for input in inputs {
            self.check_input(&params.values, input)?;
            let s = self.forward_sample(&params.values, input, &mut patches);
            outputs.push(s.head.last().expect("output").clone());
            cache.samples.push(s);
        }
        Ok(outputs)
    }

    /// Accumulate `d loss / d params` into `grads` given `d loss / d output`
    /// for every sample of the cached batch (`upstream[i]` has one entry per
    /// action).
    pub fn backward<T: Real>(
        &self,
        params: &NetworkParams<T>,
        cache: &ForwardCache<T>,
        upstream: &[Vec<T>],
        grads: &mut [T],
    ) -> Result<()> {
        if cache.samples.is_empty() {
            return Err(Error::Usage("backward called without a recorded forward pass".into()));
        }
        if cache.params_len != params.len() || grads.len() != self.param_count {
            return Err(Error::Structural("parameter/gradient length mismatch".into()));
        }
        if upstream.len() != cache.samples.len() {
            return Err(Error::Structural(format!(
                "{} upstream gradients for a batch of {}",
                upstream.len(),
                cache.samples.len()
            )));
        }
        let p = &params.values;
        let mut patches = Vec::new();
        let mut dpatches = Vec::new();
        for (s, up) in cache.samples.iter().zip(upstream) {
            if up.len() != self.n_outputs() {
                return Err(Error::Structural("upstream gradient has wrong width".into()));
            }
            let mut g = up.clone();
            for (i, d) in self.head.iter().enumerate().rev() {
                let input = &s.head[i];
                mask_act(d.act, &s.head[i + 1], &mut g);
                let mut gin = vec![T::zero(); d.n_in];
                for (o, &go) in g.iter().enumerate() {
                    if go == T::zero() {
                        continue;
                    }
                    grads[d.b_off + o] = grads[d.b_off + o] + go;
                    let wo = d.w_off + o * d.n_in;
                    axpy(go, input, &mut grads[wo..wo + d.n_in]);
                    axpy(go, &p[wo..wo + d.n_in], &mut gin);
                }
                g = gin;
            }
            let n_local = s.local.last().expect("input").len();
            let n_global = s.global.last().expect("input").len();
            let g_local = g[..n_local].to_vec();
            let g_global = g[n_local..n_local + n_global].to_vec();
            self.conv_backward(&self.local, &s.local, g_local, p, grads, &mut patches, &mut dpatches);
            self.conv_backward(&self.global, &s.global, g_global, p, grads, &mut patches, &mut dpatches);
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn conv_backward<T: Real>(
        &self,
        layers: &[ConvLayer],
        acts: &[Vec<T>],
        mut g: Vec<T>,
        p: &[T],
        grads: &mut [T],
        patches: &mut Vec<T>,
        dpatches: &mut Vec<T>,
    ) {
        for (i, l) in layers.iter().enumerate().rev() {
            mask_act(l.act, &acts[i + 1], &mut g);
            im2col(l, &acts[i], patches);
            let p_len = l.out_h * l.out_w;
            let pl = l.patch_len();
            let need_input_grad = i > 0;
            if need_input_grad {
                dpatches.clear();
                dpatches.resize(pl * p_len, T::zero());
            }
            for oc in 0..l.out_c {
                let go = &g[oc * p_len..(oc + 1) * p_len];
                let mut gb = T::zero();
                for &v in go {
                    gb = gb + v;
                }
                grads[l.b_off + oc] = grads[l.b_off + oc] + gb;
                let wbase = l.w_off + oc * pl;
                for j in 0..pl {
                    let col = &patches[j * p_len..(j + 1) * p_len];
                    grads[wbase + j] = grads[wbase + j] + dot(go, col);
                    if need_input_grad {
                        axpy(p[wbase + j], go, &mut dpatches[j * p_len..(j + 1) * p_len]);
                    }
                }
            }
            if need_input_grad {
                let mut gin = vec![T::zero(); l.in_c * l.in_h * l.in_w];
                col2im_add(l, dpatches, &mut gin);
                g = gin;
            }
        }
    }
}
