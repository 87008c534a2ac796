//! Forward simulation of a cell-based SNN with LIF neurons.
//!
//! Inputs use direct coding: the real-valued sample drives the stem
//! convolution with the same current at every timestep. Membrane state
//! persists across timesteps and is reset between samples. Activations are
//! stored channel-last (HWC) so the innermost convolution loop runs over
//! output filters.

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::arch::{CellConfig, CellSlot, LayerKind, LayerRole, NetworkArch, Operation};
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::quant::{quantize, QuantSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifParams {
    pub v_threshold: f64,
    pub v_reset: f64,
    /// Multiplicative membrane decay per step, in `(0, 1]`.
    pub leak: f64,
    pub timesteps: usize,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            v_threshold: 1.0,
            v_reset: 0.0,
            leak: 0.75,
            timesteps: 4,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        let finite = self.v_threshold.is_finite() && self.v_reset.is_finite() && self.leak.is_finite();
        if !finite || self.v_threshold <= self.v_reset {
            return Err(Error::config("lif.v_threshold", "must be finite and exceed v_reset"));
        }
        if !(self.leak > 0.0 && self.leak <= 1.0) {
            return Err(Error::config("lif.leak", "must lie in (0, 1]"));
        }
        if self.timesteps == 0 {
            return Err(Error::config("lif.timesteps", "must be at least 1"));
        }
        Ok(())
    }

    fn neuron(&self) -> Lif {
        Lif {
            threshold: self.v_threshold as f32,
            reset: self.v_reset as f32,
            leak: self.leak as f32,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Lif {
    threshold: f32,
    reset: f32,
    leak: f32,
}

impl Lif {
    /// Advances `v` in place, writes 0/1 spikes and ORs them into `ever`.
    fn step(&self, v: &mut [f32], current: &[f32], spikes: &mut [f32], ever: &mut [bool]) {
        for (((v, &i), s), e) in v.iter_mut().zip(current).zip(spikes.iter_mut()).zip(ever.iter_mut()) {
            let u = self.leak * *v + i;
            if u >= self.threshold {
                *v = self.reset;
                *s = 1.0;
                *e = true;
            } else {
                *v = u;
                *s = 0.0;
            }
        }
    }
}

/// One LIF update: `u = leak·v + input`; spike where `u ≥ threshold`, hard reset.
pub fn lif_step(v: &[f32], input_current: &[f32], p: &LifParams) -> Result<(Vec<f32>, Vec<bool>)> {
    if v.len() != input_current.len() {
        return Err(Error::ShapeMismatch {
            layer: "lif_step".into(),
            detail: format!("membrane has {} values, input has {}", v.len(), input_current.len()),
        });
    }
    let mut next = v.to_vec();
    let mut spikes = vec![0.0; v.len()];
    let mut ever = vec![false; v.len()];
    p.neuron().step(&mut next, input_current, &mut spikes, &mut ever);
    Ok((next, ever))
}

/// Weights of one parameterized layer, laid out filters × channels × kernel × kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub filters: usize,
    pub channels: usize,
    pub kernel: usize,
    pub values: Vec<f64>,
}

impl LayerWeights {
    fn index(&self, f: usize, d: usize, ky: usize, kx: usize) -> usize {
        ((f * self.channels + d) * self.kernel + ky) * self.kernel + kx
    }
}

/// Per-layer weights aligned with `NetworkArch::layers`; pooling layers hold `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub layers: Vec<Option<LayerWeights>>,
}

impl NetworkWeights {
    pub fn quantized(&self, spec: &QuantSpec) -> Result<Self> {
        let layers = self
            .layers
            .iter()
            .map(|l| {
                l.as_ref()
                    .map(|w| {
                        Ok(LayerWeights {
                            values: quantize(&w.values, spec)?,
                            ..*w
                        })
                    })
                    .transpose()
            })
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flatten().flat_map(|w| w.values.iter().copied())
    }
}

/// PRNG seed plus stream selector; distinct streams give independent weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WeightSeed {
    pub seed: u64,
    pub stream: u64,
}

impl From<u64> for WeightSeed {
    fn from(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }
}

/// Uniform in `±sqrt(1/fan_in)` per layer, drawn in layer order.
pub fn init_weights(arch: &NetworkArch, seed: impl Into<WeightSeed>) -> NetworkWeights {
    let seed = seed.into();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.seed);
    rng.set_stream(seed.stream);
    let layers = arch
        .layers
        .iter()
        .map(|layer| {
            if !layer.is_parameterized() {
                return None;
            }
            let bound = (1.0 / layer.fan_in() as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let n = layer.param_count() as usize;
            Some(LayerWeights {
                filters: layer.out_channels,
                channels: layer.in_channels,
                kernel: layer.kernel,
                values: (0..n).map(|_| dist.sample(&mut rng)).collect(),
            })
        })
        .collect();
    NetworkWeights { layers }
}

/// Packed binary matrix, one row per sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeMatrix {
    rows: usize,
    cols: usize,
    words: usize,
    bits: Vec<u64>,
}

impl SpikeMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let words = cols.div_ceil(64);
        Self {
            rows,
            cols,
            words,
            bits: vec![0; rows * words],
        }
    }

    pub fn from_rows(rows: &[Vec<bool>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::InvalidArgument("ragged spike rows".into()));
        }
        let mut m = Self::zeros(rows.len(), cols);
        for (i, row) in rows.iter().enumerate() {
            m.set_row(i, row);
        }
        Ok(m)
    }

    fn set_row(&mut self, i: usize, row: &[bool]) {
        for (n, _) in row.iter().enumerate().filter(|(_, &b)| b) {
            self.bits[i * self.words + n / 64] |= 1 << (n % 64);
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, n: usize) -> bool {
        self.bits[i * self.words + n / 64] >> (n % 64) & 1 == 1
    }

    pub fn row_words(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words..(i + 1) * self.words]
    }

    pub fn hamming(&self, i: usize, j: usize) -> u64 {
        self.row_words(i)
            .iter()
            .zip(self.row_words(j))
            .map(|(a, b)| (a ^ b).count_ones() as u64)
            .sum()
    }

    pub fn ones(&self) -> u64 {
        self.bits.iter().map(|w| w.count_ones() as u64).sum()
    }

    /// Fraction of ones, in `[0, 1]`.
    pub fn density(&self) -> f64 {
        if self.rows == 0 || self.cols == 0 {
            return 0.0;
        }
        self.ones() as f64 / (self.rows * self.cols) as f64
    }
}

/// Binarized activity of one LIF layer: bit `(i, n)` is set when neuron `n`
/// spiked at least once over the run for sample `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivity {
    pub layer: usize,
    pub name: String,
    pub spikes: SpikeMatrix,
}

impl LayerActivity {
    pub fn sparsity(&self) -> f64 {
        self.spikes.density()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRecord {
    pub samples: usize,
    pub layers: Vec<LayerActivity>,
    /// Per architecture layer: fraction of nonzero input elements over all
    /// samples and timesteps. Drives the crossbar row-activation energy.
    pub input_rates: Vec<f64>,
}

/// Channel-last feature map.
#[derive(Debug, Clone)]
struct Fmap {
    side: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Fmap {
    fn zeros(side: usize, channels: usize) -> Self {
        Self {
            side,
            channels,
            data: vec![0.0; side * side * channels],
        }
    }

    fn nonzero(&self) -> u64 {
        self.data.iter().filter(|&&v| v != 0.0).count() as u64
    }

    fn add(&mut self, other: &Fmap) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

struct ConvKernel {
    kernel: usize,
    in_channels: usize,
    filters: usize,
    stride: usize,
    padding: usize,
    out_side: usize,
    /// ky × kx × channel × filter
    w: Vec<f32>,
}

impl ConvKernel {
    fn new(weights: &LayerWeights, stride: usize, padding: usize, out_side: usize) -> Self {
        let (p, d, f) = (weights.kernel, weights.channels, weights.filters);
        let mut w = vec![0.0f32; p * p * d * f];
        for ff in 0..f {
            for dd in 0..d {
                for ky in 0..p {
                    for kx in 0..p {
                        w[((ky * p + kx) * d + dd) * f + ff] = weights.values[weights.index(ff, dd, ky, kx)] as f32;
                    }
                }
            }
        }
        Self {
            kernel: p,
            in_channels: d,
            filters: f,
            stride,
            padding,
            out_side,
            w,
        }
    }

    /// Output positions touched by input coordinate `i` along one axis, as (tap, out).
    fn taps(&self, i: usize, buf: &mut Vec<(usize, usize)>) {
        buf.clear();
        for k in 0..self.kernel {
            let t = i as isize + self.padding as isize - k as isize;
            if t < 0 || t % self.stride as isize != 0 {
                continue;
            }
            let o = (t / self.stride as isize) as usize;
            if o < self.out_side {
                buf.push((k, o));
            }
        }
    }

    /// Scatter form: every nonzero input adds its weighted kernel to the outputs it reaches.
    fn apply(&self, x: &Fmap) -> Fmap {
        let (d, f, p) = (self.in_channels, self.filters, self.kernel);
        let mut out = Fmap::zeros(self.out_side, f);
        let mut ytaps = Vec::with_capacity(p);
        let mut xtaps = Vec::with_capacity(p);
        let mut taps: Vec<(usize, usize)> = Vec::with_capacity(p * p);
        for iy in 0..x.side {
            self.taps(iy, &mut ytaps);
            if ytaps.is_empty() {
                continue;
            }
            for ix in 0..x.side {
                self.taps(ix, &mut xtaps);
                taps.clear();
                for &(ky, oy) in &ytaps {
                    for &(kx, ox) in &xtaps {
                        taps.push(((ky * p + kx) * d * f, (oy * self.out_side + ox) * f));
                    }
                }
                if taps.is_empty() {
                    continue;
                }
                let px = &x.data[(iy * x.side + ix) * d..][..d];
                for (dd, &v) in px.iter().enumerate() {
                    if v == 0.0 {
                        continue;
                    }
                    for &(wbase, obase) in &taps {
                        let wrow = &self.w[wbase + dd * f..][..f];
                        let orow = &mut out.data[obase..obase + f];
                        for (o, &wv) in orow.iter_mut().zip(wrow) {
                            *o += v * wv;
                        }
                    }
                }
            }
        }
        out
    }
}

/// 3×3, stride 1, zero padding 1, divisor 9.
fn avg_pool3(x: &Fmap) -> Fmap {
    let (s, c) = (x.side, x.channels);
    let mut out = Fmap::zeros(s, c);
    for y in 0..s {
        for xx in 0..s {
            let orow = &mut out.data[(y * s + xx) * c..][..c];
            for ny in y.saturating_sub(1)..(y + 2).min(s) {
                for nx in xx.saturating_sub(1)..(xx + 2).min(s) {
                    let irow = &x.data[(ny * s + nx) * c..][..c];
                    for (o, &v) in orow.iter_mut().zip(irow) {
                        *o += v;
                    }
                }
            }
            for o in orow.iter_mut() {
                *o /= 9.0;
            }
        }
    }
    out
}

enum EdgeExec {
    Skip,
    Pool { layer: usize },
    Conv { layer: usize, lif: usize },
}

struct CellExec {
    /// Indexed like `arch::EDGES`.
    edges: Vec<(usize, usize, EdgeExec)>,
}

struct Engine {
    lif: Lif,
    timesteps: usize,
    convs: Vec<Option<ConvKernel>>,
    stem: (usize, usize),
    cell_a: CellExec,
    red1: (usize, usize),
    cell_b: CellExec,
    red2: (usize, usize),
    global_pool: usize,
    classifier: usize,
    /// Neuron count per LIF slot.
    lif_sizes: Vec<usize>,
    /// Input element count per architecture layer.
    input_sizes: Vec<usize>,
}

struct SampleTrace {
    ever: Vec<Vec<bool>>,
    nonzero: Vec<u64>,
}

fn find_layer(arch: &NetworkArch, role: LayerRole) -> Result<usize> {
    arch.layers
        .iter()
        .position(|l| l.role == role)
        .ok_or_else(|| Error::ShapeMismatch {
            layer: format!("{role:?}"),
            detail: "layer missing from architecture".into(),
        })
}

impl Engine {
    fn new(arch: &NetworkArch, weights: &NetworkWeights, p: &LifParams) -> Result<Self> {
        p.validate()?;
        if weights.layers.len() != arch.layers.len() {
            return Err(Error::ShapeMismatch {
                layer: "network".into(),
                detail: format!(
                    "{} weight entries for {} layers",
                    weights.layers.len(),
                    arch.layers.len()
                ),
            });
        }
        let mut lif_slot = vec![usize::MAX; arch.layers.len()];
        let mut lif_sizes = Vec::new();
        for (i, layer) in arch.lif_layers() {
            lif_slot[i] = lif_sizes.len();
            lif_sizes.push(layer.out_neurons());
        }

        let mut convs = Vec::with_capacity(arch.layers.len());
        for (layer, w) in arch.layers.iter().zip(&weights.layers) {
            if !layer.is_parameterized() {
                convs.push(None);
                continue;
            }
            let w = w.as_ref().ok_or_else(|| Error::ShapeMismatch {
                layer: layer.name(),
                detail: "weights missing".into(),
            })?;
            let expected = (layer.out_channels, layer.in_channels, layer.kernel);
            if (w.filters, w.channels, w.kernel) != expected || w.values.len() as u64 != layer.param_count() {
                return Err(Error::ShapeMismatch {
                    layer: layer.name(),
                    detail: format!(
                        "expected {}x{}x{k}x{k}, got {}x{}x{}x{} with {} values",
                        expected.0,
                        expected.1,
                        w.filters,
                        w.channels,
                        w.kernel,
                        w.kernel,
                        w.values.len(),
                        k = expected.2,
                    ),
                });
            }
            convs.push(match layer.kind {
                LayerKind::Conv => Some(ConvKernel::new(w, layer.stride, layer.padding, layer.out_spatial())),
                _ => None,
            });
        }

        let lif_of = |i: usize| (i, lif_slot[i]);
        let cell = |cfg: &CellConfig, slot: CellSlot| -> Result<CellExec> {
            let edges = cfg
                .edges()
                .map(|((from, to), op)| {
                    let role = LayerRole::Cell {
                        slot,
                        from: from as u8,
                        to: to as u8,
                    };
                    let exec = match op {
                        Operation::SkipCon => EdgeExec::Skip,
                        Operation::AvgPool3x3 => EdgeExec::Pool {
                            layer: find_layer(arch, role)?,
                        },
                        Operation::Conv3x3 => {
                            let layer = find_layer(arch, role)?;
                            EdgeExec::Conv {
                                layer,
                                lif: lif_slot[layer],
                            }
                        }
                    };
                    Ok((from, to, exec))
                })
                .collect::<Result<_>>()?;
            Ok(CellExec { edges })
        };

        let input_sizes = arch
            .layers
            .iter()
            .map(|l| match l.kind {
                LayerKind::FullyConnected => l.in_channels,
                _ => l.in_channels * l.in_spatial * l.in_spatial,
            })
            .collect();

        Ok(Self {
            lif: p.neuron(),
            timesteps: p.timesteps,
            stem: lif_of(find_layer(arch, LayerRole::Stem)?),
            cell_a: cell(&arch.cell_a, CellSlot::A)?,
            red1: lif_of(find_layer(arch, LayerRole::Reduction { stage: 1 })?),
            cell_b: cell(&arch.cell_b, CellSlot::B)?,
            red2: lif_of(find_layer(arch, LayerRole::Reduction { stage: 2 })?),
            global_pool: find_layer(arch, LayerRole::GlobalPool)?,
            classifier: find_layer(arch, LayerRole::Classifier)?,
            convs,
            lif_sizes,
            input_sizes,
        })
    }

    fn conv(&self, layer: usize) -> &ConvKernel {
        self.convs[layer].as_ref().expect("conv layer prepared")
    }

    fn run_sample(&self, sample: &[f32], channels: usize, side: usize) -> SampleTrace {
        let mut trace = SampleTrace {
            ever: self.lif_sizes.iter().map(|&n| vec![false; n]).collect(),
            nonzero: vec![0; self.input_sizes.len()],
        };
        let mut membranes: Vec<Vec<f32>> = self.lif_sizes.iter().map(|&n| vec![0.0; n]).collect();

        let mut image = Fmap::zeros(side, channels);
        for c in 0..channels {
            for y in 0..side {
                for x in 0..side {
                    image.data[(y * side + x) * channels + c] = sample[(c * side + y) * side + x];
                }
            }
        }
        let stem_current = self.conv(self.stem.0).apply(&image);
        let image_nonzero = image.nonzero();

        for _ in 0..self.timesteps {
            trace.nonzero[self.stem.0] += image_nonzero;
            let x = self.spike_layer(&stem_current, self.stem.1, &mut membranes, &mut trace);
            let x = self.run_cell(&self.cell_a, x, &mut membranes, &mut trace);
            let x = self.conv_lif(self.red1, &x, &mut membranes, &mut trace);
            let x = self.run_cell(&self.cell_b, x, &mut membranes, &mut trace);
            let x = self.conv_lif(self.red2, &x, &mut membranes, &mut trace);

            trace.nonzero[self.global_pool] += x.nonzero();
            let area = (x.side * x.side) as f32;
            let pooled: Vec<f32> = (0..x.channels)
                .map(|c| (0..x.side * x.side).map(|p| x.data[p * x.channels + c]).sum::<f32>() / area)
                .collect();
            trace.nonzero[self.classifier] += pooled.iter().filter(|&&v| v != 0.0).count() as u64;
        }
        trace
    }

    fn spike_layer(&self, current: &Fmap, slot: usize, membranes: &mut [Vec<f32>], trace: &mut SampleTrace) -> Fmap {
        let mut spikes = Fmap::zeros(current.side, current.channels);
        self.lif.step(
            &mut membranes[slot],
            &current.data,
            &mut spikes.data,
            &mut trace.ever[slot],
        );
        spikes
    }

    fn conv_lif(
        &self,
        (layer, slot): (usize, usize),
        x: &Fmap,
        membranes: &mut [Vec<f32>],
        trace: &mut SampleTrace,
    ) -> Fmap {
        trace.nonzero[layer] += x.nonzero();
        let current = self.conv(layer).apply(x);
        self.spike_layer(&current, slot, membranes, trace)
    }

    fn run_cell(&self, cell: &CellExec, input: Fmap, membranes: &mut [Vec<f32>], trace: &mut SampleTrace) -> Fmap {
        let (side, channels) = (input.side, input.channels);
        let mut nodes = vec![input];
        for j in 1..4 {
            let mut node = Fmap::zeros(side, channels);
            for (from, _, exec) in cell.edges.iter().filter(|(_, to, _)| *to == j) {
                let src = &nodes[*from];
                match *exec {
                    EdgeExec::Skip => node.add(src),
                    EdgeExec::Pool { layer } => {
                        trace.nonzero[layer] += src.nonzero();
                        node.add(&avg_pool3(src));
                    }
                    EdgeExec::Conv { layer, lif } => {
                        let out = self.conv_lif((layer, lif), src, membranes, trace);
                        node.add(&out);
                    }
                }
            }
            nodes.push(node);
        }
        nodes.pop().expect("cell output node")
    }
}

/// Simulates every sample for `p.timesteps` steps and binarizes each LIF
/// layer's activity per sample.
pub fn forward(arch: &NetworkArch, weights: &NetworkWeights, batch: &Batch, p: &LifParams) -> Result<ActivityRecord> {
    let shape = batch.input_shape()?;
    if shape != arch.input {
        return Err(Error::ShapeMismatch {
            layer: "input".into(),
            detail: format!("batch is {shape:?}, architecture expects {:?}", arch.input),
        });
    }
    let engine = Engine::new(arch, weights, p)?;
    let traces: Vec<SampleTrace> = (0..batch.samples)
        .into_par_iter()
        .map(|i| engine.run_sample(batch.sample(i), shape.channels, shape.spatial))
        .collect();

    let layers = arch
        .lif_layers()
        .enumerate()
        .map(|(slot, (index, layer))| {
            let mut spikes = SpikeMatrix::zeros(batch.samples, engine.lif_sizes[slot]);
            for (i, t) in traces.iter().enumerate() {
                spikes.set_row(i, &t.ever[slot]);
            }
            LayerActivity {
                layer: index,
                name: layer.name(),
                spikes,
            }
        })
        .collect();

    let events = (batch.samples * p.timesteps) as f64;
    let input_rates = engine
        .input_sizes
        .iter()
        .enumerate()
        .map(|(l, &size)| {
            let nz: u64 = traces.iter().map(|t| t.nonzero[l]).sum();
            nz as f64 / (size as f64 * events)
        })
        .collect();

    Ok(ActivityRecord {
        samples: batch.samples,
        layers,
        input_rates,
    })
}
