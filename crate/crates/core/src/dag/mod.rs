//! Task graphs for SUMMA: the procedural baseline and the fine-grained
//! task decomposition with a throttled multiple-issue window.

mod bcast;
mod build;
pub mod checks;
mod topo;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{NodeCoord, ProcessGrid};

pub use bcast::{bcast_tree_children, bcast_tree_parent};
pub use build::{
    build_baseline_graph, build_task_graph, build_task_graph_with, concurrency_limit, BlockShape,
    TaskGraphOptions,
};
pub use topo::topo_validate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TaskId(pub u32);

impl TaskId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskKind {
    BcastSend,
    BcastRecv,
    Multiply,
    Reduce,
    ThrottleGate,
}

impl TaskKind {
    pub const ALL: [TaskKind; 5] = [
        TaskKind::BcastSend,
        TaskKind::BcastRecv,
        TaskKind::Multiply,
        TaskKind::Reduce,
        TaskKind::ThrottleGate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::BcastSend => "BcastSend",
            TaskKind::BcastRecv => "BcastRecv",
            TaskKind::Multiply => "Multiply",
            TaskKind::Reduce => "Reduce",
            TaskKind::ThrottleGate => "ThrottleGate",
        }
    }

    pub fn is_compute(self) -> bool {
        matches!(self, TaskKind::Multiply | TaskKind::Reduce)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Operand {
    A,
    B,
}

/// One broadcast unit of an input matrix.
///
/// For `A` this is row slab `part` of block `A(row, col)` (`col` is the inner
/// index); for `B` it is column slab `part` of block `B(row, col)` (`row` is
/// the inner index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockKey {
    pub operand: Operand,
    pub row: usize,
    pub col: usize,
    pub part: usize,
}

impl BlockKey {
    pub fn a(i: usize, k: usize, x: usize) -> Self {
        Self {
            operand: Operand::A,
            row: i,
            col: k,
            part: x,
        }
    }

    pub fn b(k: usize, j: usize, y: usize) -> Self {
        Self {
            operand: Operand::B,
            row: k,
            col: j,
            part: y,
        }
    }

    /// Inner-dimension block index.
    pub fn inner(&self) -> usize {
        match self.operand {
            Operand::A => self.col,
            Operand::B => self.row,
        }
    }
}

impl fmt::Display for BlockKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}({},{})^{}", self.operand, self.row, self.col, self.part)
    }
}

/// Sub-block `(x, y)` of result block `C(i, j)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CKey {
    pub i: usize,
    pub j: usize,
    pub x: usize,
    pub y: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Product {
    pub a: BlockKey,
    pub b: BlockKey,
    pub c: CKey,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Payload {
    /// One member's part in a tree broadcast of `blocks` over `group`.
    Broadcast {
        blocks: Vec<BlockKey>,
        root: NodeCoord,
        parent: Option<NodeCoord>,
        children: Vec<NodeCoord>,
    },
    /// `C^(x,y)(i,j) += A^(x)(i,k) * B^(y)(k,j)`.
    Multiply { product: Product },
    /// Baseline rank-k update: every local product of one iteration.
    RankUpdate { products: Vec<Product> },
    /// Folds the temporary produced by `source` into `c`.
    Reduce { c: CKey, source: TaskId },
    Gate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Task {
    pub id: TaskId,
    pub kind: TaskKind,
    pub iteration: usize,
    pub node: NodeCoord,
    pub payload: Payload,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeKind {
    Data,
    Sequence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Edge {
    pub src: TaskId,
    pub dst: TaskId,
    pub kind: EdgeKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Baseline,
    Task,
}

/// Tasks plus data and sequence edges. Immutable once built, except for
/// [`TaskGraph::add_edge`] which exists for negative tests.
#[derive(Debug, Clone, Serialize)]
pub struct TaskGraph {
    mode: Mode,
    grid: ProcessGrid,
    issue_limit: usize,
    iterations: usize,
    deterministic: bool,
    tasks: Vec<Task>,
    edges: Vec<Edge>,
    #[serde(skip)]
    out_edges: Vec<Vec<usize>>,
    #[serde(skip)]
    in_edges: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub(crate) fn empty(mode: Mode, grid: ProcessGrid, issue_limit: usize, iterations: usize) -> Self {
        Self {
            mode,
            grid,
            issue_limit,
            iterations,
            deterministic: false,
            tasks: Vec::new(),
            edges: Vec::new(),
            out_edges: Vec::new(),
            in_edges: Vec::new(),
        }
    }

    pub(crate) fn set_deterministic(&mut self, on: bool) {
        self.deterministic = on;
    }

    pub(crate) fn push_task(&mut self, kind: TaskKind, iteration: usize, node: NodeCoord, payload: Payload) -> TaskId {
        let id = TaskId(self.tasks.len() as u32);
        self.tasks.push(Task {
            id,
            kind,
            iteration,
            node,
            payload,
        });
        self.out_edges.push(Vec::new());
        self.in_edges.push(Vec::new());
        id
    }

    /// Appends an edge. Does not check for cycles; see [`topo_validate`].
    pub fn add_edge(&mut self, src: TaskId, dst: TaskId, kind: EdgeKind) -> Result<()> {
        if src.index() >= self.tasks.len() || dst.index() >= self.tasks.len() {
            return Err(invalid(format!("edge {src} -> {dst} names an unknown task")));
        }
        let e = self.edges.len();
        self.edges.push(Edge { src, dst, kind });
        self.out_edges[src.index()].push(e);
        self.in_edges[dst.index()].push(e);
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn grid(&self) -> &ProcessGrid {
        &self.grid
    }

    pub fn issue_limit(&self) -> usize {
        self.issue_limit
    }

    /// Number of SUMMA iterations (inner block count).
    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn is_deterministic(&self) -> bool {
        self.deterministic
    }

    pub fn tasks(&self) -> &[Task] {
        &self.tasks
    }

    pub fn task(&self, id: TaskId) -> &Task {
        &self.tasks[id.index()]
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn successors(&self, id: TaskId) -> impl Iterator<Item = &Edge> + '_ {
        self.out_edges[id.index()].iter().map(|&e| &self.edges[e])
    }

    pub fn predecessors(&self, id: TaskId) -> impl Iterator<Item = &Edge> + '_ {
        self.in_edges[id.index()].iter().map(|&e| &self.edges[e])
    }

    pub fn data_in_degree(&self, id: TaskId) -> usize {
        self.predecessors(id).filter(|e| e.kind == EdgeKind::Data).count()
    }

    pub fn count(&self, kind: TaskKind) -> usize {
        self.tasks.iter().filter(|t| t.kind == kind).count()
    }

    /// JSON with `tasks` and `edges` arrays.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
