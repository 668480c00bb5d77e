//! Dense MLPs with an explicit activation tape and exact reverse-mode
//! gradients.
//!
//! A network is a chain of affine layers. Every layer except the last is
//! followed by the hidden activation. The input of the final layer is the
//! *penultimate feature vector*; it can be L2-normalized (`Pnorm`),
//! layer-normalized, or produced by a spectrally normalized weight. The raw
//! output of the final layer can additionally be L2-normalized (`OutputNorm`).
//!
//! All passes are batched: rows are samples.

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::norm::{self, NORM_FLOOR};
use super::{RealMat, RealVec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &RealMat) -> RealMat {
        match self {
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `grad` by the activation derivative, given pre- and
    /// post-activation values.
    fn backward(self, pre: &RealMat, post: &RealMat, grad: &mut RealMat) {
        match self {
            Activation::Relu => Zip::from(grad).and(pre).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(post).for_each(|g, &h| *g *= 1.0 - h * h),
        }
    }

    /// Orthogonal-init gain for hidden layers using this activation.
    pub fn gain(self) -> f64 {
        match self {
            Activation::Relu => std::f64::consts::SQRT_2,
            Activation::Tanh => 5.0 / 3.0,
        }
    }
}

/// How the penultimate features are produced before the final layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenultMode {
    None,
    Pnorm,
    LayerNorm,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    Identity,
    OutputNorm,
}

/// One affine layer, `y = W x + b` with `W: out × in`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: RealMat,
    pub bias: RealVec,
}

impl Linear {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// Parameters of an actor, critic head, trunk or SSL head.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    layers: Vec<Linear>,
    pub hidden_activation: Activation,
    penult_mode: PenultMode,
    pub output_mode: OutputMode,
    power_vec: Option<RealVec>,
    generation: u64,
}

/// Gradient of a scalar loss with respect to every parameter of an
/// [`MlpParams`], shape-identical to it.
#[derive(Clone, Debug, PartialEq)]
pub struct GradBuffer {
    pub layers: Vec<Linear>,
}

impl GradBuffer {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self { layers: params.layers.iter().map(|l| Linear::zeros(l.out_dim(), l.in_dim())).collect() }
    }

    pub fn sq_norm(&self) -> f64 {
        self.layers.iter().map(|l| l.weight.iter().chain(l.bias.iter()).map(|v| v * v).sum::<f64>()).sum()
    }

    /// Global L2 norm over all blocks.
    pub fn norm(&self) -> f64 {
        self.sq_norm().sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for l in &mut self.layers {
            l.weight *= c;
            l.bias *= c;
        }
    }

    pub fn add_assign(&mut self, other: &GradBuffer) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("gradient buffers differ in shape".into()));
        }
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &GradBuffer) -> bool {
        self.layers.len() == other.layers.len()
            && self.layers.iter().zip(&other.layers).all(|(a, b)| a.weight.dim() == b.weight.dim())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    /// Checks every block is finite, naming the first offending one.
    pub fn check_finite(&self, owner: &str) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if !l.weight.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("{owner} layer {i} weight gradient")));
            }
            if !l.bias.iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("{owner} layer {i} bias gradient")));
            }
        }
        Ok(())
    }
}

fn flatten(layers: &[Linear]) -> Vec<f64> {
    layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied()).collect()
}

/// Activation record of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    generation: u64,
    dims: Vec<usize>,
    input: RealMat,
    pre: Vec<RealMat>,
    post: Vec<RealMat>,
    penult: RealMat,
    penult_cache: PenultCache,
    spectral_weight: Option<RealMat>,
    output: RealMat,
    output_norms: Option<Array1<f64>>,
    /// Number of rows whose penultimate or output norm hit the floor.
    pub clamped_rows: usize,
}

#[derive(Clone, Debug)]
enum PenultCache {
    None,
    Pnorm(Array1<f64>),
    LayerNorm(Array1<f64>),
}

impl Tape {
    pub fn output(&self) -> &RealMat {
        &self.output
    }

    /// Input fed to the final layer (after any penultimate normalization).
    pub fn penultimate(&self) -> &RealMat {
        &self.penult
    }

    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }
}

impl MlpParams {
    /// Builds a network from explicit layers.
    pub fn from_layers(
        layers: Vec<Linear>,
        hidden_activation: Activation,
        penult_mode: PenultMode,
        output_mode: OutputMode,
    ) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::Shape(format!("layer {i}: bias length {} != out {}", l.bias.len(), l.out_dim())));
            }
            if i > 0 && layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::Shape(format!(
                    "layer {i} expects {} inputs but layer {} emits {}",
                    l.in_dim(),
                    i - 1,
                    layers[i - 1].out_dim()
                )));
            }
        }
        let power_vec = match penult_mode {
            PenultMode::Spectral => {
                if layers.len() < 2 {
                    return Err(Error::Shape("spectral mode needs a hidden layer".into()));
                }
                let n = layers[layers.len() - 2].in_dim();
                Some(Array1::from_elem(n, 1.0 / (n as f64).sqrt()))
            }
            PenultMode::LayerNorm => {
                let width = layers[layers.len() - 1].in_dim();
                if width < 2 {
                    return Err(Error::Shape("layer norm needs at least 2 penultimate features".into()));
                }
                None
            }
            _ => None,
        };
        Ok(Self { layers, hidden_activation, penult_mode, output_mode, power_vec, generation: 0 })
    }

    /// Orthogonal initialization with zero biases. `dims` lists the input
    /// width, every hidden width and the output width.
    pub fn init<R: Rng + ?Sized>(
        dims: &[usize],
        hidden_activation: Activation,
        penult_mode: PenultMode,
        output_mode: OutputMode,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Shape(format!("invalid layer widths {dims:?}")));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let gain = if i + 1 == n { 1.0 } else { hidden_activation.gain() };
                Linear { weight: orthogonal(dims[i + 1], dims[i], gain, rng), bias: Array1::zeros(dims[i + 1]) }
            })
            .collect();
        let mut params = Self::from_layers(layers, hidden_activation, penult_mode, output_mode)?;
        if let Some(v) = params.power_vec.as_mut() {
            let random: Array1<f64> = (0..v.len()).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = norm::l2(random.view()).max(NORM_FLOOR);
            *v = random / n;
        }
        Ok(params)
    }

    pub fn layers(&self) -> &[Linear] {
        &self.layers
    }

    /// Mutable access to the layers; invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Linear] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn penult_mode(&self) -> PenultMode {
        self.penult_mode
    }

    pub fn power_vec(&self) -> Option<&RealVec> {
        self.power_vec.as_ref()
    }

    pub fn set_power_vec(&mut self, v: RealVec) -> Result<()> {
        match &self.power_vec {
            Some(old) if old.len() == v.len() => {
                self.generation += 1;
                self.power_vec = Some(v);
                Ok(())
            }
            _ => Err(Error::Shape("power vector does not match the spectral layer".into())),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(Linear::out_dim)).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn final_layer(&self) -> &Linear {
        &self.layers[self.layers.len() - 1]
    }

    pub fn to_flat(&self) -> Vec<f64> {
        flatten(&self.layers)
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("expected {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut it = flat.iter().copied();
        for l in self.layers_mut() {
            for w in l.weight.iter_mut().chain(l.bias.iter_mut()) {
                *w = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Runs `iters` power iterations on the penultimate weight. No-op for
    /// non-spectral networks.
    pub fn refresh_spectral(&mut self, iters: usize) -> Result<()> {
        if self.penult_mode != PenultMode::Spectral {
            return Ok(());
        }
        let idx = self.layers.len() - 2;
        let mut v = self.power_vec.take().expect("spectral networks carry a power vector");
        let res = norm::power_iteration(&self.layers[idx].weight, &mut v, iters);
        self.power_vec = Some(v);
        self.generation += 1;
        res.map(|_| ())
    }

    /// Spectrally normalized penultimate weight as used by the forward pass.
    pub fn effective_penultimate_weight(&self) -> Option<RealMat> {
        let v = self.power_vec.as_ref()?;
        let w = &self.layers[self.layers.len() - 2].weight;
        Some(w / norm::spectral_sigma(w, v))
    }

    /// Forward pass on a single input vector.
    pub fn forward(&self, input: &RealVec) -> Result<(RealVec, Tape)> {
        let tape = self.forward_batch(input.view().insert_axis(Axis(0)))?;
        Ok((tape.output.row(0).to_owned(), tape))
    }

    /// Forward pass on a batch (rows are samples).
    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<Tape> {
        if input.ncols() != self.in_dim() {
            return Err(Error::Shape(format!("network expects {} inputs, got {}", self.in_dim(), input.ncols())));
        }
        let n = self.layers.len();
        let spectral_weight = if self.penult_mode == PenultMode::Spectral { self.effective_penultimate_weight() } else { None };
        let mut pre = Vec::with_capacity(n - 1);
        let mut post: Vec<RealMat> = Vec::with_capacity(n - 1);
        for i in 0..n - 1 {
            let layer = &self.layers[i];
            let w = match (&spectral_weight, i + 2 == n) {
                (Some(sw), true) => sw,
                _ => &layer.weight,
            };
            let h_in = if i == 0 { input } else { post[i - 1].view() };
            let z = affine(h_in, w, &layer.bias);
            post.push(self.hidden_activation.apply(&z));
            pre.push(z);
        }
        let raw_penult = if n == 1 { input.to_owned() } else { post[n - 2].clone() };
        let mut clamped_rows = 0;
        let (penult, penult_cache) = match self.penult_mode {
            PenultMode::Pnorm => {
                let (v, norms, c) = norm::l2_normalize_rows(&raw_penult);
                clamped_rows += c;
                (v, PenultCache::Pnorm(norms))
            }
            PenultMode::LayerNorm => {
                let (v, inv_std) = norm::layer_norm_rows(&raw_penult);
                (v, PenultCache::LayerNorm(inv_std))
            }
            PenultMode::None | PenultMode::Spectral => (raw_penult, PenultCache::None),
        };
        let last = &self.layers[n - 1];
        let raw_out = affine(penult.view(), &last.weight, &last.bias);
        let (output, output_norms) = match self.output_mode {
            OutputMode::Identity => (raw_out, None),
            OutputMode::OutputNorm => {
                let (v, norms, c) = norm::l2_normalize_rows(&raw_out);
                clamped_rows += c;
                (v, Some(norms))
            }
        };
        Ok(Tape {
            generation: self.generation,
            dims: self.dims(),
            input: input.to_owned(),
            pre,
            post,
            penult,
            penult_cache,
            spectral_weight,
            output,
            output_norms,
            clamped_rows,
        })
    }

    /// Output only, discarding the tape.
    pub fn predict(&self, input: ArrayView2<f64>) -> Result<RealMat> {
        Ok(self.forward_batch(input)?.output)
    }

    fn check_tape(&self, tape: &Tape, output_grad: &RealMat) -> Result<()> {
        if tape.generation != self.generation || tape.dims != self.dims() {
            return Err(Error::StaleTape(format!(
                "tape recorded at generation {} with dims {:?}, parameters at generation {} with dims {:?}",
                tape.generation,
                tape.dims,
                self.generation,
                self.dims()
            )));
        }
        if output_grad.dim() != tape.output.dim() {
            return Err(Error::Shape(format!(
                "output gradient {:?} does not match output {:?}",
                output_grad.dim(),
                tape.output.dim()
            )));
        }
        Ok(())
    }

    /// Reverse pass for a single-sample tape.
    pub fn backward(&self, tape: &Tape, output_grad: &RealVec) -> Result<(GradBuffer, RealVec)> {
        let (g, x) = self.backward_batch(tape, &output_grad.view().insert_axis(Axis(0)).to_owned())?;
        Ok((g, x.row(0).to_owned()))
    }

    /// Reverse pass: parameter gradients summed over the batch, plus the
    /// per-row gradient with respect to the input.
    pub fn backward_batch(&self, tape: &Tape, output_grad: &RealMat) -> Result<(GradBuffer, RealMat)> {
        let (g, x) = self.backward_impl(tape, output_grad, true)?;
        Ok((g.expect("parameter gradients requested"), x))
    }

    /// Reverse pass that only propagates to the input.
    pub fn input_grad_batch(&self, tape: &Tape, output_grad: &RealMat) -> Result<RealMat> {
        Ok(self.backward_impl(tape, output_grad, false)?.1)
    }

    fn backward_impl(&self, tape: &Tape, output_grad: &RealMat, want_params: bool) -> Result<(Option<GradBuffer>, RealMat)> {
        self.check_tape(tape, output_grad)?;
        let n = self.layers.len();
        let mut grads = want_params.then(|| GradBuffer::zeros_like(self));

        let mut g = match &tape.output_norms {
            Some(norms) => norm::l2_normalize_rows_backward(&tape.output, norms, output_grad),
            None => output_grad.clone(),
        };
        // final layer
        if let Some(gb) = grads.as_mut() {
            gb.layers[n - 1].weight = g.t().dot(&tape.penult);
            gb.layers[n - 1].bias = g.sum_axis(Axis(0));
        }
        g = g.dot(&self.layers[n - 1].weight);
        g = match &tape.penult_cache {
            PenultCache::Pnorm(norms) => norm::l2_normalize_rows_backward(&tape.penult, norms, &g),
            PenultCache::LayerNorm(inv_std) => norm::layer_norm_rows_backward(&tape.penult, inv_std, &g),
            PenultCache::None => g,
        };
        for i in (0..n - 1).rev() {
            self.hidden_activation.backward(&tape.pre[i], &tape.post[i], &mut g);
            let spectral = i + 2 == n && tape.spectral_weight.is_some();
            let h_in = if i == 0 { &tape.input } else { &tape.post[i - 1] };
            if let Some(gb) = grads.as_mut() {
                let gw_eff = g.t().dot(h_in);
                gb.layers[i].weight = if spectral {
                    let v = self.power_vec.as_ref().expect("spectral networks carry a power vector");
                    norm::spectral_backward(&self.layers[i].weight, v, &gw_eff)
                } else {
                    gw_eff
                };
                gb.layers[i].bias = g.sum_axis(Axis(0));
            }
            let w = if spectral { tape.spectral_weight.as_ref().unwrap() } else { &self.layers[i].weight };
            g = g.dot(w);
        }
        Ok((grads, g))
    }
}

fn affine(x: ArrayView2<f64>, w: &RealMat, b: &RealVec) -> RealMat {
    let mut z = x.dot(&w.t());
    z += &b.view().insert_axis(Axis(0));
    z
}

/// Orthogonal matrix (rows or columns orthonormal, whichever fits) times `gain`.
pub fn orthogonal<R: Rng + ?Sized>(rows: usize, cols: usize, gain: f64, rng: &mut R) -> RealMat {
    let (tall, short) = (rows.max(cols), rows.min(cols));
    let mut m: RealMat = Array2::from_shape_fn((tall, short), |_| rng.sample(StandardNormal));
    // modified Gram-Schmidt on columns
    for j in 0..short {
        for k in 0..j {
            let proj = m.column(k).dot(&m.column(j));
            let ck = m.column(k).to_owned();
            m.column_mut(j).scaled_add(-proj, &ck);
        }
        let n = norm::l2(m.column(j)).max(NORM_FLOOR);
        m.column_mut(j).mapv_inplace(|v| v / n);
    }
    let m = if rows >= cols { m } else { m.t().to_owned() };
    m * gain
}

/// Concatenates two row-aligned matrices side by side.
pub fn hconcat(a: &RealMat, b: &RealMat) -> RealMat {
    let mut out = Array2::zeros((a.nrows(), a.ncols() + b.ncols()));
    out.slice_mut(s![.., ..a.ncols()]).assign(a);
    out.slice_mut(s![.., a.ncols()..]).assign(b);
    out
}
