//! Cell search space and macro-architecture expansion.
//!
//! A cell is a 4-node DAG. Node 0 is the cell input, node 3 the cell output,
//! and every node `j` receives the sum of the outputs of its incoming edges
//! `(i, j)`, `i < j`. Each of the six edges carries one [`Operation`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of cell configurations (3 operations on 6 edges).
pub const CELL_COUNT: usize = 729;

/// Edge endpoints in the canonical field order `c01, c02, c03, c12, c13, c23`.
pub const EDGES: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
#[repr(u8)]
pub enum Operation {
    SkipCon = 0,
    Conv3x3 = 1,
    AvgPool3x3 = 2,
}

impl Operation {
    pub const ALL: [Operation; 3] = [Operation::SkipCon, Operation::Conv3x3, Operation::AvgPool3x3];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl From<Operation> for u8 {
    fn from(op: Operation) -> u8 {
        op.code()
    }
}

impl TryFrom<u8> for Operation {
    type Error = String;

    fn try_from(code: u8) -> std::result::Result<Self, String> {
        Operation::from_code(code).ok_or_else(|| format!("operation code {code} out of range 0..=2"))
    }
}

/// Operation assignment for the six edges of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "[u8; 6]", into = "[u8; 6]")]
pub struct CellConfig {
    pub c01: Operation,
    pub c02: Operation,
    pub c03: Operation,
    pub c12: Operation,
    pub c13: Operation,
    pub c23: Operation,
}

impl CellConfig {
    pub fn uniform(op: Operation) -> Self {
        Self::from_ops([op; 6])
    }

    pub fn from_ops(ops: [Operation; 6]) -> Self {
        let [c01, c02, c03, c12, c13, c23] = ops;
        Self {
            c01,
            c02,
            c03,
            c12,
            c13,
            c23,
        }
    }

    pub fn ops(&self) -> [Operation; 6] {
        [self.c01, self.c02, self.c03, self.c12, self.c13, self.c23]
    }

    pub fn codes(&self) -> [u8; 6] {
        self.ops().map(Operation::code)
    }

    pub fn from_codes(codes: [u8; 6]) -> Result<Self> {
        let mut ops = [Operation::SkipCon; 6];
        for (slot, code) in ops.iter_mut().zip(codes) {
            *slot = Operation::from_code(code)
                .ok_or_else(|| Error::InvalidArgument(format!("operation code {code} out of range 0..=2")))?;
        }
        Ok(Self::from_ops(ops))
    }

    /// Position in the lexicographic enumeration (`c01` most significant).
    pub fn index(&self) -> usize {
        self.codes().iter().fold(0, |acc, &c| acc * 3 + c as usize)
    }

    pub fn from_index(index: usize) -> Option<Self> {
        if index >= CELL_COUNT {
            return None;
        }
        let mut codes = [0u8; 6];
        let mut rest = index;
        for slot in codes.iter_mut().rev() {
            *slot = (rest % 3) as u8;
            rest /= 3;
        }
        Some(Self::from_codes(codes).expect("base-3 digits are valid codes"))
    }

    /// Edges paired with their operation, in canonical order.
    pub fn edges(&self) -> impl Iterator<Item = ((usize, usize), Operation)> {
        EDGES.into_iter().zip(self.ops())
    }

    pub fn count(&self, op: Operation) -> usize {
        self.ops().iter().filter(|&&o| o == op).count()
    }
}

impl From<CellConfig> for [u8; 6] {
    fn from(cell: CellConfig) -> Self {
        cell.codes()
    }
}

impl TryFrom<[u8; 6]> for CellConfig {
    type Error = String;

    fn try_from(codes: [u8; 6]) -> std::result::Result<Self, String> {
        CellConfig::from_codes(codes).map_err(|e| e.to_string())
    }
}

impl fmt::Display for CellConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let c = self.codes();
        write!(f, "{},{},{},{},{},{}", c[0], c[1], c[2], c[3], c[4], c[5])
    }
}

impl FromStr for CellConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 6 {
            return Err(Error::InvalidArgument(format!(
                "cell needs 6 comma-separated codes, got {}",
                parts.len()
            )));
        }
        let mut codes = [0u8; 6];
        for (slot, part) in codes.iter_mut().zip(&parts) {
            *slot = part
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad operation code `{part}`")))?;
        }
        Self::from_codes(codes)
    }
}

/// All 729 cells in lexicographic order over `(c01, …, c23)`.
pub fn enumerate_cells() -> impl ExactSizeIterator<Item = CellConfig> + Clone {
    cells_from(0)
}

/// Enumeration resumed at `start`.
pub fn cells_from(start: usize) -> impl ExactSizeIterator<Item = CellConfig> + Clone {
    (start.min(CELL_COUNT)..CELL_COUNT).map(|i| CellConfig::from_index(i).expect("index in range"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Conv,
    AvgPool,
    FullyConnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CellSlot {
    A,
    B,
}

/// Where a layer sits in the macro-architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerRole {
    Stem,
    Cell { slot: CellSlot, from: u8, to: u8 },
    Reduction { stage: u8 },
    GlobalPool,
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub role: LayerRole,
    /// Square kernel side `P`.
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    /// Square input side `H`.
    pub in_spatial: usize,
    pub stride: usize,
    pub padding: usize,
    pub has_lif: bool,
}

impl LayerSpec {
    fn conv(role: LayerRole, in_channels: usize, out_channels: usize, in_spatial: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Conv,
            role,
            kernel: 3,
            in_channels,
            out_channels,
            in_spatial,
            stride,
            padding: 1,
            has_lif: true,
        }
    }

    pub fn out_spatial(&self) -> usize {
        (self.in_spatial + 2 * self.padding - self.kernel) / self.stride + 1
    }

    pub fn param_count(&self) -> u64 {
        let (p, d, f) = (self.kernel as u64, self.in_channels as u64, self.out_channels as u64);
        match self.kind {
            LayerKind::Conv => p * p * d * f,
            LayerKind::FullyConnected => d * f,
            LayerKind::AvgPool => 0,
        }
    }

    /// Inputs feeding one output neuron.
    pub fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv | LayerKind::AvgPool => self.kernel * self.kernel * self.in_channels,
            LayerKind::FullyConnected => self.in_channels,
        }
    }

    pub fn out_neurons(&self) -> usize {
        let s = self.out_spatial();
        self.out_channels * s * s
    }

    pub fn is_parameterized(&self) -> bool {
        self.kind != LayerKind::AvgPool
    }

    pub fn name(&self) -> String {
        match self.role {
            LayerRole::Stem => "stem".to_string(),
            LayerRole::Cell { slot, from, to } => {
                let op = match self.kind {
                    LayerKind::Conv => "conv",
                    _ => "pool",
                };
                let slot = match slot {
                    CellSlot::A => "a",
                    CellSlot::B => "b",
                };
                format!("cell_{slot}.{op}_{from}{to}")
            }
            LayerRole::Reduction { stage } => format!("reduction_{stage}"),
            LayerRole::GlobalPool => "global_pool".to_string(),
            LayerRole::Classifier => "classifier".to_string(),
        }
    }
}

/// Input sample shape (channels × side × side).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InputShape {
    pub channels: usize,
    pub spatial: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetworkArch {
    pub cell_a: CellConfig,
    pub cell_b: CellConfig,
    pub base_channels: usize,
    pub num_classes: usize,
    pub input: InputShape,
    pub layers: Vec<LayerSpec>,
}

impl NetworkArch {
    pub fn param_count(&self) -> u64 {
        param_count(&self.layers)
    }

    pub fn lif_layers(&self) -> impl Iterator<Item = (usize, &LayerSpec)> {
        self.layers.iter().enumerate().filter(|(_, l)| l.has_lif)
    }
}

/// Expand one cell into its layers. SkipCon edges produce no layer.
pub fn build_cell(cfg: &CellConfig, slot: CellSlot, channels: usize, spatial: usize) -> Vec<LayerSpec> {
    cfg.edges()
        .filter_map(|((from, to), op)| {
            let role = LayerRole::Cell {
                slot,
                from: from as u8,
                to: to as u8,
            };
            match op {
                Operation::SkipCon => None,
                Operation::Conv3x3 => Some(LayerSpec::conv(role, channels, channels, spatial, 1)),
                Operation::AvgPool3x3 => Some(LayerSpec {
                    kind: LayerKind::AvgPool,
                    role,
                    kernel: 3,
                    in_channels: channels,
                    out_channels: channels,
                    in_spatial: spatial,
                    stride: 1,
                    padding: 1,
                    has_lif: false,
                }),
            }
        })
        .collect()
}

/// Stem, Cell-A, stride-2 reduction, Cell-B, stride-2 reduction, global
/// average pool, classifier. Channel width doubles at each reduction.
pub fn build_network(
    cell_a: CellConfig,
    cell_b: CellConfig,
    input: InputShape,
    base_channels: usize,
    num_classes: usize,
) -> Result<NetworkArch> {
    if input.spatial < 8 {
        return Err(Error::InvalidArgument(format!(
            "input spatial size {} < 8",
            input.spatial
        )));
    }
    if input.channels == 0 || base_channels == 0 {
        return Err(Error::InvalidArgument("channel counts must be positive".into()));
    }
    if num_classes < 2 {
        return Err(Error::InvalidArgument(format!("num_classes {num_classes} < 2")));
    }

    let c = base_channels;
    let mut layers = Vec::new();
    let stem = LayerSpec::conv(LayerRole::Stem, input.channels, c, input.spatial, 1);
    let mut spatial = stem.out_spatial();
    layers.push(stem);

    layers.extend(build_cell(&cell_a, CellSlot::A, c, spatial));

    let red1 = LayerSpec::conv(LayerRole::Reduction { stage: 1 }, c, 2 * c, spatial, 2);
    spatial = red1.out_spatial();
    layers.push(red1);

    layers.extend(build_cell(&cell_b, CellSlot::B, 2 * c, spatial));

    let red2 = LayerSpec::conv(LayerRole::Reduction { stage: 2 }, 2 * c, 4 * c, spatial, 2);
    spatial = red2.out_spatial();
    layers.push(red2);

    layers.push(LayerSpec {
        kind: LayerKind::AvgPool,
        role: LayerRole::GlobalPool,
        kernel: spatial,
        in_channels: 4 * c,
        out_channels: 4 * c,
        in_spatial: spatial,
        stride: spatial,
        padding: 0,
        has_lif: false,
    });
    layers.push(LayerSpec {
        kind: LayerKind::FullyConnected,
        role: LayerRole::Classifier,
        kernel: 1,
        in_channels: 4 * c,
        out_channels: num_classes,
        in_spatial: 1,
        stride: 1,
        padding: 0,
        has_lif: false,
    });

    Ok(NetworkArch {
        cell_a,
        cell_b,
        base_channels,
        num_classes,
        input,
        layers,
    })
}

/// Total weight count; pooling layers contribute nothing.
pub fn param_count(layers: &[LayerSpec]) -> u64 {
    layers.iter().map(LayerSpec::param_count).sum()
}
