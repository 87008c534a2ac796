//! Crossbar mapping and analytic area / latency / energy model.
//!
//! Mapping: each of the P×P kernel positions gets its own crossbar set.
//! Input channels run down crossbar rows (`r = ceil(D / X)` row splits),
//! filters run across columns, and each weight word occupies
//! `ceil(bit_w / bit_d)` adjacent columns. Tiles are never shared between
//! layers.
//!
//! Every unit cost lives in [`UnitCosts`]; the defaults are placeholders
//! meant to be recalibrated for a concrete technology.

use serde::{Deserialize, Serialize};

use crate::arch::{LayerKind, LayerSpec, NetworkArch};
use crate::error::{Error, Result};
use crate::quant::QuantSpec;

/// On-chip buffer capacities in KB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BufferSizes {
    pub gbuff: f64,
    pub tbuff: f64,
    pub pbuff: f64,
    pub tib: f64,
    pub pib: f64,
}

/// Areas in mm², energies in J, times in clock cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitCosts {
    /// One crossbar array with its input peripherals.
    pub a_xbar: f64,
    pub a_adc: f64,
    pub a_buf_per_kb: f64,
    /// Global neuron (LIF) module.
    pub a_neur: f64,
    /// Global pooling module.
    pub a_pool: f64,
    pub a_noc: f64,
    /// One active crossbar row for one read.
    pub e_xbar_row: f64,
    pub e_adc: f64,
    pub e_buf_bit: f64,
    pub e_noc_hop: f64,
    /// One pooling accumulate.
    pub e_pool_op: f64,
    /// One ADC conversion round.
    pub t_xbar_read: f64,
    /// One shift-and-add / partial-sum accumulation stage.
    pub t_accum: f64,
    /// One pooled output pixel.
    pub t_pool: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HardwareConfig {
    pub xbar_size: u32,
    pub xbars_per_pe: u32,
    pub pes_per_tile: u32,
    pub mux_size: u32,
    pub adc_bits: u32,
    pub clock_hz: f64,
    pub buffers: BufferSizes,
    pub vdd: f64,
    pub vread: f64,
    pub r_on: f64,
    pub r_off: f64,
    /// Device bits per cell (`bit_d`).
    pub bits_per_cell: u32,
    pub unit_costs: UnitCosts,
}

impl Default for HardwareConfig {
    fn default() -> Self {
        Self {
            xbar_size: 64,
            xbars_per_pe: 9,
            pes_per_tile: 8,
            mux_size: 8,
            adc_bits: 4,
            clock_hz: 250e6,
            buffers: BufferSizes {
                gbuff: 20.0,
                tbuff: 10.0,
                pbuff: 5.0,
                tib: 50.0,
                pib: 30.0,
            },
            vdd: 0.9,
            vread: 0.1,
            r_on: 20e3,
            r_off: 200e3,
            bits_per_cell: 1,
            unit_costs: UnitCosts {
                a_xbar: 0.005,
                a_adc: 0.03,
                a_buf_per_kb: 0.025,
                a_neur: 1.25,
                a_pool: 0.25,
                a_noc: 2.5,
                e_xbar_row: 15.0e-12,
                e_adc: 30.0e-12,
                e_buf_bit: 0.75e-12,
                e_noc_hop: 150.0e-12,
                e_pool_op: 0.75e-12,
                t_xbar_read: 400.0,
                t_accum: 40.0,
                t_pool: 40.0,
            },
        }
    }
}

impl HardwareConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("hw.xbar_size", self.xbar_size),
            ("hw.xbars_per_pe", self.xbars_per_pe),
            ("hw.pes_per_tile", self.pes_per_tile),
            ("hw.mux_size", self.mux_size),
            ("hw.adc_bits", self.adc_bits),
            ("hw.bits_per_cell", self.bits_per_cell),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(Error::config(key, "must be positive"));
            }
        }
        if !self.xbar_size.is_multiple_of(self.mux_size) {
            return Err(Error::config("hw.mux_size", "must divide xbar_size"));
        }
        let b = &self.buffers;
        let c = &self.unit_costs;
        let reals = [
            ("hw.clock_hz", self.clock_hz),
            ("hw.vdd", self.vdd),
            ("hw.vread", self.vread),
            ("hw.r_on", self.r_on),
            ("hw.r_off", self.r_off),
            ("hw.buffers.gbuff", b.gbuff),
            ("hw.buffers.tbuff", b.tbuff),
            ("hw.buffers.pbuff", b.pbuff),
            ("hw.buffers.tib", b.tib),
            ("hw.buffers.pib", b.pib),
            ("hw.unit_costs.a_xbar", c.a_xbar),
            ("hw.unit_costs.a_adc", c.a_adc),
            ("hw.unit_costs.a_buf_per_kb", c.a_buf_per_kb),
            ("hw.unit_costs.a_neur", c.a_neur),
            ("hw.unit_costs.a_pool", c.a_pool),
            ("hw.unit_costs.a_noc", c.a_noc),
            ("hw.unit_costs.e_xbar_row", c.e_xbar_row),
            ("hw.unit_costs.e_adc", c.e_adc),
            ("hw.unit_costs.e_buf_bit", c.e_buf_bit),
            ("hw.unit_costs.e_noc_hop", c.e_noc_hop),
            ("hw.unit_costs.e_pool_op", c.e_pool_op),
            ("hw.unit_costs.t_xbar_read", c.t_xbar_read),
            ("hw.unit_costs.t_accum", c.t_accum),
            ("hw.unit_costs.t_pool", c.t_pool),
        ];
        for (key, v) in reals {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config(key, "must be finite and positive"));
            }
        }
        Ok(())
    }

    /// ADC conversion rounds per crossbar read.
    pub fn reads_per_activation(&self) -> f64 {
        (self.xbar_size / self.mux_size) as f64
    }

    pub fn tile_area(&self) -> f64 {
        let c = &self.unit_costs;
        let b = &self.buffers;
        let xbar = c.a_xbar + self.reads_per_activation() * c.a_adc;
        let pe = self.xbars_per_pe as f64 * xbar + (b.pbuff + b.pib) * c.a_buf_per_kb;
        self.pes_per_tile as f64 * pe + (b.tbuff + b.tib) * c.a_buf_per_kb
    }

    /// Global buffer, neuron module, pooling module and NoC.
    pub fn global_area(&self) -> f64 {
        let c = &self.unit_costs;
        self.buffers.gbuff * c.a_buf_per_kb + c.a_neur + c.a_pool + c.a_noc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct LayerMapping {
    pub cols_per_filter: u32,
    pub filters_per_xbar: u64,
    pub row_splits: u64,
    pub col_splits: u64,
    pub n_xbars: u64,
    pub n_pes: u64,
    pub n_tiles: u64,
}

impl LayerMapping {
    pub fn is_mapped(&self) -> bool {
        self.n_xbars > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingPlan {
    pub layers: Vec<LayerMapping>,
}

impl MappingPlan {
    pub fn total_xbars(&self) -> u64 {
        self.layers.iter().map(|m| m.n_xbars).sum()
    }

    pub fn total_tiles(&self) -> u64 {
        self.layers.iter().map(|m| m.n_tiles).sum()
    }
}

/// Crossbar placement for one layer. Pooling layers run on the pooling
/// module and occupy no crossbars.
pub fn map_layer(layer: &LayerSpec, hw: &HardwareConfig, spec: &QuantSpec) -> Result<LayerMapping> {
    if layer.kind == LayerKind::AvgPool {
        return Ok(LayerMapping::default());
    }
    let x = hw.xbar_size as u64;
    let cols_per_filter = spec.adjustment_factor();
    let filters_per_xbar = x / cols_per_filter as u64;
    if filters_per_xbar == 0 {
        return Err(Error::WeightWordTooWide {
            cols_per_filter,
            xbar_size: hw.xbar_size,
        });
    }
    let p = layer.kernel as u64;
    let row_splits = (layer.in_channels as u64).div_ceil(x);
    let col_splits = (layer.out_channels as u64).div_ceil(filters_per_xbar);
    let n_xbars = p * p * row_splits * col_splits;
    let n_pes = n_xbars.div_ceil(hw.xbars_per_pe as u64);
    let n_tiles = n_pes.div_ceil(hw.pes_per_tile as u64);
    Ok(LayerMapping {
        cols_per_filter,
        filters_per_xbar,
        row_splits,
        col_splits,
        n_xbars,
        n_pes,
        n_tiles,
    })
}

pub fn map_network(arch: &NetworkArch, hw: &HardwareConfig, spec: &QuantSpec) -> Result<MappingPlan> {
    let layers = arch
        .layers
        .iter()
        .map(|l| map_layer(l, hw, spec))
        .collect::<Result<_>>()?;
    Ok(MappingPlan { layers })
}

/// Total chip area in mm².
pub fn area(plan: &MappingPlan, hw: &HardwareConfig) -> f64 {
    plan.total_tiles() as f64 * hw.tile_area() + hw.global_area()
}

/// Output pixel-timesteps the layer processes.
fn activations(layer: &LayerSpec, timesteps: usize) -> f64 {
    let side = match layer.kind {
        LayerKind::FullyConnected => 1,
        _ => layer.out_spatial(),
    };
    (side * side * timesteps) as f64
}

fn ceil_log2(v: u64) -> u32 {
    if v <= 1 {
        0
    } else {
        64 - (v - 1).leading_zeros()
    }
}

fn layer_cycles(layer: &LayerSpec, m: &LayerMapping, hw: &HardwareConfig, timesteps: usize) -> f64 {
    let c = &hw.unit_costs;
    let act = activations(layer, timesteps);
    if !m.is_mapped() {
        return act * c.t_pool;
    }
    // row splits read in parallel; partial sums merge in a log-depth tree,
    // bit slices merge through a serial shift-and-add
    let accum = (ceil_log2(m.row_splits) + m.cols_per_filter - 1) as f64;
    act * (c.t_xbar_read * hw.reads_per_activation() + c.t_accum * accum)
}

/// Sequential execution time in ms.
pub fn latency(plan: &MappingPlan, arch: &NetworkArch, hw: &HardwareConfig, timesteps: usize) -> f64 {
    let cycles: f64 = arch
        .layers
        .iter()
        .zip(&plan.layers)
        .map(|(l, m)| layer_cycles(l, m, hw, timesteps))
        .sum();
    cycles / hw.clock_hz * 1e3
}

/// Per-layer energy split in J.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct EnergyParts {
    xbar: f64,
    adc: f64,
    buffer: f64,
    noc: f64,
    pool: f64,
}

impl EnergyParts {
    fn total(&self) -> f64 {
        self.xbar + self.adc + self.buffer + self.noc + self.pool
    }
}

fn layer_energy(
    layer: &LayerSpec,
    m: &LayerMapping,
    hw: &HardwareConfig,
    spec: &QuantSpec,
    timesteps: usize,
    input_rate: f64,
) -> EnergyParts {
    let c = &hw.unit_costs;
    let act = activations(layer, timesteps);
    if !m.is_mapped() {
        return EnergyParts {
            pool: act * layer.in_channels as f64 * c.e_pool_op,
            ..EnergyParts::default()
        };
    }
    let xbars = m.n_xbars as f64;
    let rows_active = layer.in_channels as f64 / m.row_splits as f64;
    let p2 = (layer.kernel * layer.kernel) as f64;
    // 1-bit spike inputs in, one weight-width word per filter out
    let buffer_bits = p2 * layer.in_channels as f64 + layer.out_channels as f64 * spec.bit_w as f64;
    EnergyParts {
        xbar: act * input_rate * rows_active * c.e_xbar_row * xbars,
        adc: act * hw.reads_per_activation() * c.e_adc * xbars,
        buffer: act * buffer_bits * c.e_buf_bit,
        noc: act * m.n_tiles as f64 * c.e_noc_hop,
        pool: 0.0,
    }
}

/// Total inference energy in µJ. `input_rates[l]` is the fraction of active
/// inputs seen by layer `l`.
pub fn energy(
    plan: &MappingPlan,
    arch: &NetworkArch,
    hw: &HardwareConfig,
    spec: &QuantSpec,
    timesteps: usize,
    input_rates: &[f64],
) -> f64 {
    arch.layers
        .iter()
        .zip(&plan.layers)
        .zip(input_rates)
        .map(|((l, m), &s)| layer_energy(l, m, hw, spec, timesteps, s).total())
        .sum::<f64>()
        * 1e6
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub params: u64,
    pub input_rate: f64,
    pub mapping: LayerMapping,
    pub area_mm2: f64,
    pub cycles: f64,
    pub latency_ms: f64,
    pub energy_uj: f64,
    pub energy_xbar_uj: f64,
    pub energy_adc_uj: f64,
    pub energy_buffer_uj: f64,
    pub energy_noc_uj: f64,
    pub energy_pool_uj: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub mem_params: u64,
    pub area_mm2: f64,
    pub latency_ms: f64,
    pub energy_uj: f64,
    /// Area outside the tiles (included in `area_mm2`).
    pub global_area_mm2: f64,
    pub total_xbars: u64,
    pub total_tiles: u64,
    pub layers: Vec<LayerCost>,
}

/// Memory, area, latency and energy for one architecture, with a per-layer breakdown.
pub fn evaluate_costs(
    arch: &NetworkArch,
    hw: &HardwareConfig,
    spec: &QuantSpec,
    timesteps: usize,
    input_rates: &[f64],
) -> Result<CostReport> {
    if input_rates.len() != arch.layers.len() {
        return Err(Error::InvalidArgument(format!(
            "{} input rates for {} layers",
            input_rates.len(),
            arch.layers.len()
        )));
    }
    if let Some(bad) = input_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
        return Err(Error::InvalidArgument(format!("input rate {bad} outside [0, 1]")));
    }
    let plan = map_network(arch, hw, spec)?;
    let tile_area = hw.tile_area();
    let layers: Vec<LayerCost> = arch
        .layers
        .iter()
        .zip(&plan.layers)
        .zip(input_rates)
        .map(|((l, m), &rate)| {
            let cycles = layer_cycles(l, m, hw, timesteps);
            let e = layer_energy(l, m, hw, spec, timesteps, rate);
            LayerCost {
                name: l.name(),
                kind: l.kind,
                params: l.param_count(),
                input_rate: rate,
                mapping: *m,
                area_mm2: m.n_tiles as f64 * tile_area,
                cycles,
                latency_ms: cycles / hw.clock_hz * 1e3,
                energy_uj: e.total() * 1e6,
                energy_xbar_uj: e.xbar * 1e6,
                energy_adc_uj: e.adc * 1e6,
                energy_buffer_uj: e.buffer * 1e6,
                energy_noc_uj: e.noc * 1e6,
                energy_pool_uj: e.pool * 1e6,
            }
        })
        .collect();

    let global_area = hw.global_area();
    Ok(CostReport {
        mem_params: arch.param_count(),
        area_mm2: layers.iter().map(|l| l.area_mm2).sum::<f64>() + global_area,
        latency_ms: layers.iter().map(|l| l.latency_ms).sum(),
        energy_uj: layers.iter().map(|l| l.energy_uj).sum(),
        global_area_mm2: global_area,
        total_xbars: plan.total_xbars(),
        total_tiles: plan.total_tiles(),
        layers,
    })
}
