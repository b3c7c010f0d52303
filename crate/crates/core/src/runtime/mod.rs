//! Discrete-event execution of a task graph over simulated nodes.
//!
//! Virtual time advances only through modeled costs: compute tasks take
//! `flops / rate`, messages take the latency model's delay. Block kernels
//! really run (on a rayon pool), so the result is an actual product.

mod node;
mod sim;

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use node::{Message, SimNode};

use crate::block::DenseBlock;
use crate::dag::{build_baseline_graph, build_task_graph_with, topo_validate, BlockKey, CKey, Mode, Operand, TaskGraph, TaskGraphOptions};
use crate::error::{invalid, Error, Result};
use crate::grid::{owner, NodeCoord, ProcessGrid};
use crate::matrix::BlockMatrix;
use crate::metrics::RunMetrics;
use crate::tiling::split_ranges;

/// Point-to-point message delay.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LatencyModel {
    #[default]
    Zero,
    Fixed { us: f64 },
    PerByte { base_us: f64, us_per_byte: f64 },
}

impl LatencyModel {
    pub fn delay_us(&self, bytes: u64) -> f64 {
        match *self {
            LatencyModel::Zero => 0.0,
            LatencyModel::Fixed { us } => us,
            LatencyModel::PerByte { base_us, us_per_byte } => base_us + us_per_byte * bytes as f64,
        }
    }

    pub(crate) fn delay_ns(&self, bytes: u64) -> u64 {
        (self.delay_us(bytes) * 1e3).round() as u64
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LatencyModel::Zero => true,
            LatencyModel::Fixed { us } => us.is_finite() && us >= 0.0,
            LatencyModel::PerByte { base_us, us_per_byte } => {
                base_us.is_finite() && base_us >= 0.0 && us_per_byte.is_finite() && us_per_byte >= 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!("latency must be finite and non-negative: {self}")))
        }
    }
}

impl fmt::Display for LatencyModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LatencyModel::Zero => write!(f, "zero"),
            LatencyModel::Fixed { us } => write!(f, "fixed:{us}"),
            LatencyModel::PerByte { base_us, us_per_byte } => write!(f, "perbyte:{base_us}:{us_per_byte}"),
        }
    }
}

/// Parses `zero`, `fixed:US` or `perbyte:US:US_PER_BYTE`.
impl FromStr for LatencyModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| invalid(format!("bad number {p:?} in latency {s:?}")))
        };
        let model = match parts.as_slice() {
            ["zero"] => LatencyModel::Zero,
            ["fixed", us] => LatencyModel::Fixed { us: num(us)? },
            ["perbyte", base, per] => LatencyModel::PerByte {
                base_us: num(base)?,
                us_per_byte: num(per)?,
            },
            _ => {
                return Err(invalid(format!(
                    "latency {s:?} is not zero, fixed:US or perbyte:US:US_PER_BYTE"
                )))
            }
        };
        model.validate()?;
        Ok(model)
    }
}

/// Virtual cost of compute tasks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    /// Multiply FLOPs one worker retires per microsecond. Reduce adds one
    /// element per FLOP slot.
    pub flops_per_us: f64,
}

impl Default for ComputeModel {
    fn default() -> Self {
        Self { flops_per_us: 1000.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    /// Compute slots per simulated node. Also caps a node's live
    /// temporaries.
    pub workers: usize,
    /// OS threads running block kernels.
    pub threads: usize,
    pub latency: LatencyModel,
    pub compute: ComputeModel,
    pub deterministic: bool,
    /// Task mode only; the baseline always looks ahead one iteration.
    pub issue_limit: Option<usize>,
    /// Task mode only: slabs per block dimension.
    pub split: usize,
    /// Perturbs one result element. For exercising failure paths.
    #[doc(hidden)]
    #[serde(default)]
    pub inject_fault: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Task,
            workers: 2,
            threads: 1,
            latency: LatencyModel::Zero,
            compute: ComputeModel::default(),
            deterministic: false,
            issue_limit: None,
            split: 1,
            inject_fault: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(invalid("workers must be at least 1"));
        }
        if self.threads == 0 {
            return Err(invalid("threads must be at least 1"));
        }
        if self.split == 0 {
            return Err(invalid("split must be at least 1"));
        }
        if self.issue_limit == Some(0) {
            return Err(invalid("issue limit must be at least 1"));
        }
        if !(self.compute.flops_per_us.is_finite() && self.compute.flops_per_us > 0.0) {
            return Err(invalid("compute rate must be positive"));
        }
        self.latency.validate()
    }

    fn effective_split(&self) -> usize {
        match self.mode {
            Mode::Baseline => 1,
            Mode::Task => self.split,
        }
    }
}

fn check_operands(a: &BlockMatrix, b: &BlockMatrix, grid: &ProcessGrid) -> Result<()> {
    if a.col_tiling() != b.row_tiling() {
        return Err(invalid(
            "A's column tiling must equal B's row tiling for the product to be defined",
        ));
    }
    if a.grid() != grid || b.grid() != grid {
        return Err(invalid("operands must be distributed over the run's grid"));
    }
    Ok(())
}

/// The graph `run` executes for these operands and settings.
pub fn build_graph(a: &BlockMatrix, b: &BlockMatrix, grid: &ProcessGrid, cfg: &RunConfig) -> Result<TaskGraph> {
    cfg.validate()?;
    check_operands(a, b, grid)?;
    match cfg.mode {
        Mode::Baseline => build_baseline_graph(a.block_rows(), b.block_cols(), a.block_cols(), grid),
        Mode::Task => build_task_graph_with(
            a,
            b,
            grid,
            &TaskGraphOptions {
                issue_limit: cfg.issue_limit,
                deterministic: cfg.deterministic,
                split: cfg.split,
            },
        ),
    }
}

/// Multiplies `a * b` on the simulated grid. Returns `C` and the run's
/// metrics, including the full task timeline.
pub fn run(a: &BlockMatrix, b: &BlockMatrix, grid: &ProcessGrid, cfg: &RunConfig) -> Result<(BlockMatrix, RunMetrics)> {
    let graph = build_graph(a, b, grid, cfg)?;
    run_graph(&graph, a, b, cfg)
}

/// Executes a prebuilt graph. The graph must have been built for these
/// operands with the same split.
pub fn run_graph(graph: &TaskGraph, a: &BlockMatrix, b: &BlockMatrix, cfg: &RunConfig) -> Result<(BlockMatrix, RunMetrics)> {
    cfg.validate()?;
    check_operands(a, b, graph.grid())?;
    topo_validate(graph)?;
    let layout = Layout::new(a, b, cfg.effective_split());
    sim::Simulation::new(graph, a, b, layout, cfg)?.run()
}

/// How each block is cut into slabs.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    row_slabs: Vec<Vec<Range<usize>>>,
    col_slabs: Vec<Vec<Range<usize>>>,
}

impl Layout {
    pub(crate) fn new(a: &BlockMatrix, b: &BlockMatrix, split: usize) -> Self {
        let slabs = |extents: Vec<usize>| -> Vec<Vec<Range<usize>>> {
            extents.into_iter().map(|e| split_ranges(e, e.min(split))).collect()
        };
        Self {
            row_slabs: slabs(a.row_tiling().extents().collect()),
            col_slabs: slabs(b.col_tiling().extents().collect()),
        }
    }

    /// Copy of the input slab named by `key`.
    pub(crate) fn input(&self, a: &BlockMatrix, b: &BlockMatrix, key: BlockKey) -> Result<DenseBlock> {
        let missing = || Error::SchedulerBug(format!("no input slab {key:?}"));
        match key.operand {
            Operand::A => {
                let rows = self.row_slabs.get(key.row).and_then(|s| s.get(key.part)).ok_or_else(missing)?;
                let blk = a.block(key.row, key.col);
                Ok(blk.slice(rows.clone(), 0..blk.cols()))
            }
            Operand::B => {
                let cols = self.col_slabs.get(key.col).and_then(|s| s.get(key.part)).ok_or_else(missing)?;
                let blk = b.block(key.row, key.col);
                Ok(blk.slice(0..blk.rows(), cols.clone()))
            }
        }
    }

    pub(crate) fn c_shape(&self, c: CKey) -> (Range<usize>, Range<usize>) {
        (self.row_slabs[c.i][c.x].clone(), self.col_slabs[c.j][c.y].clone())
    }
}

/// Upper bound on the bytes a node holds at once: its result blocks, the A
/// and B panels of `issue_limit` iterations, and one temporary sub-block per
/// worker (task mode only).
pub fn memory_bound_bytes(
    a: &BlockMatrix,
    b: &BlockMatrix,
    node: NodeCoord,
    issue_limit: usize,
    cfg: &RunConfig,
) -> u64 {
    let grid = a.grid();
    let (rows, inner, cols) = (a.row_tiling(), a.col_tiling(), b.col_tiling());
    let my_rows: Vec<usize> = (node.row..rows.block_count()).step_by(grid.p_row()).collect();
    let my_cols: Vec<usize> = (node.col..cols.block_count()).step_by(grid.p_col()).collect();
    let mut c_bytes = 0u64;
    for &i in &my_rows {
        for &j in &my_cols {
            debug_assert_eq!(owner(grid, i, j), node);
            c_bytes += 8 * (rows.extent(i) * cols.extent(j)) as u64;
        }
    }
    let panel = (0..inner.block_count())
        .map(|k| {
            let a_rows: usize = my_rows.iter().map(|&i| rows.extent(i)).sum();
            let b_cols: usize = my_cols.iter().map(|&j| cols.extent(j)).sum();
            8 * (inner.extent(k) * (a_rows + b_cols)) as u64
        })
        .max()
        .unwrap_or(0);
    let temps = match cfg.mode {
        Mode::Baseline => 0,
        Mode::Task => {
            let layout = Layout::new(a, b, cfg.split);
            let biggest = |slabs: &[Vec<Range<usize>>], idx: &[usize]| {
                idx.iter()
                    .flat_map(|&i| slabs[i].iter().map(|r| r.len()))
                    .max()
                    .unwrap_or(0)
            };
            let sub = biggest(&layout.row_slabs, &my_rows) * biggest(&layout.col_slabs, &my_cols);
            8 * (cfg.workers * sub) as u64
        }
    };
    c_bytes + issue_limit as u64 * panel + temps
}

#[cfg(test)]
mod tests;
