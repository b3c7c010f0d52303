//! Task-based 2D SUMMA matrix multiplication on a simulated process mesh.
//!
//! Operands are cut into (possibly non-uniform) blocks and dealt cyclically
//! over a `p_row x p_col` grid of nodes. [`dag`] turns a product into a graph
//! of broadcast, multiply, reduce and throttle tasks; [`runtime`] executes
//! that graph with message passing in virtual time; [`oracle`] provides a
//! trusted serial product to check against.
//!
//! ```
//! use tasksumma::{make_uniform_tiling, random_block_matrix, run, ProcessGrid, RunConfig};
//!
//! let grid = ProcessGrid::new(2, 2).unwrap();
//! let t = make_uniform_tiling(32, 8).unwrap();
//! let a = random_block_matrix(&t, &t, &grid, 1);
//! let b = random_block_matrix(&t, &t, &grid, 2);
//! let (c, metrics) = run(&a, &b, &grid, &RunConfig::default()).unwrap();
//! assert_eq!(c.rows(), 32);
//! assert_eq!(metrics.total_flops(), 2 * 32 * 32 * 32);
//! ```

pub mod block;
pub mod dag;
pub mod error;
pub mod grid;
pub mod matrix;
pub mod metrics;
pub mod oracle;
pub mod runtime;
pub mod tiling;

pub use block::{gemm_block, gemm_into, DenseBlock};
pub use dag::{
    build_baseline_graph, build_task_graph, build_task_graph_with, concurrency_limit, topo_validate, BlockKey,
    CKey, Mode, TaskGraph, TaskGraphOptions, TaskId, TaskKind,
};
pub use error::{Error, Result};
pub use grid::{owner, NodeCoord, ProcessGrid};
pub use matrix::{random_block_matrix, BlockMatrix};
pub use metrics::{load_ratios, load_ratios_for_tilings, summarize, LoadRatio, LoadRatios, MetricCounters, ProblemDescriptor, Report, RunMetrics};
pub use oracle::{compare, iteration_memory_overhead, oracle_multiply, oracle_multiply_blocked, Comparison};
pub use runtime::{build_graph, memory_bound_bytes, run, run_graph, ComputeModel, LatencyModel, RunConfig};
pub use tiling::{make_nonuniform_tiling, make_uniform_tiling, Tiling};
