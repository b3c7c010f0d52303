use std::collections::HashMap;

use super::bcast::{bcast_tree_children, bcast_tree_parent};
use super::{BlockKey, CKey, EdgeKind, Mode, Payload, Product, TaskGraph, TaskId, TaskKind};
use crate::error::{invalid, Result};
use crate::grid::{owner, NodeCoord, ProcessGrid};
use crate::matrix::BlockMatrix;
use crate::tiling::Tiling;

/// Number of SUMMA iterations allowed in flight at once.
///
/// Two when the grid is a single row or column, all `k_blocks` when both grid
/// dimensions reach it, otherwise the smaller grid dimension. Never exceeds
/// `k_blocks`.
pub fn concurrency_limit(p_row: usize, p_col: usize, k_blocks: usize) -> usize {
    let limit = if p_row < 2 || p_col < 2 {
        2
    } else if p_row >= k_blocks && p_col >= k_blocks {
        k_blocks
    } else {
        p_row.min(p_col)
    };
    limit.min(k_blocks).max(1)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskGraphOptions {
    /// Overrides the default issue window when set.
    pub issue_limit: Option<usize>,
    /// Serialize accumulation into each C sub-block in ascending `k`.
    pub deterministic: bool,
    /// Split each block into up to `split` slabs per dimension.
    pub split: usize,
}

impl Default for TaskGraphOptions {
    fn default() -> Self {
        Self {
            issue_limit: None,
            deterministic: false,
            split: 1,
        }
    }
}

/// Block counts of a product plus how many slabs each A row block and each
/// B column block is cut into.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockShape {
    pub row_parts: Vec<usize>,
    pub inner_blocks: usize,
    pub col_parts: Vec<usize>,
}

impl BlockShape {
    pub fn unsplit(m: usize, n: usize, k: usize) -> Self {
        Self {
            row_parts: vec![1; m],
            inner_blocks: k,
            col_parts: vec![1; n],
        }
    }

    pub fn from_tilings(rows: &Tiling, inner: &Tiling, cols: &Tiling, split: usize) -> Self {
        let split = split.max(1);
        Self {
            row_parts: rows.extents().map(|e| e.min(split)).collect(),
            inner_blocks: inner.block_count(),
            col_parts: cols.extents().map(|e| e.min(split)).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        if self.row_parts.is_empty() || self.col_parts.is_empty() || self.inner_blocks == 0 {
            return Err(invalid("block counts must be at least 1"));
        }
        if self.row_parts.iter().chain(&self.col_parts).any(|&p| p == 0) {
            return Err(invalid("every block needs at least one slab"));
        }
        Ok(())
    }
}

/// Procedural SUMMA with one-iteration broadcast lookahead.
///
/// Per iteration each grid row broadcasts its A panel and each grid column its
/// B panel, then every node runs one rank-k update. A node's broadcasts for
/// iteration `k` wait on its update of `k - 2`, and its update of `k` waits on
/// its own forwarding of iteration `k`.
pub fn build_baseline_graph(m: usize, n: usize, k: usize, grid: &ProcessGrid) -> Result<TaskGraph> {
    if m == 0 || n == 0 || k == 0 {
        return Err(invalid("block counts must be at least 1"));
    }
    let mut b = Builder::new(Mode::Baseline, *grid, 2.min(k), k);
    let (pr, pc) = (grid.p_row(), grid.p_col());
    let mut prev_update: HashMap<NodeCoord, TaskId> = HashMap::new();
    let mut updates: Vec<HashMap<NodeCoord, TaskId>> = Vec::with_capacity(k);

    for kk in 0..k {
        b.begin_iteration();
        let mut recv_a = HashMap::new();
        let mut recv_b = HashMap::new();
        for r in 0..pr.min(m) {
            let blocks: Vec<_> = (r..m).step_by(pr).map(|i| BlockKey::a(i, kk, 0)).collect();
            let members: Vec<_> = (0..pc).map(|c| NodeCoord::new(r, c)).collect();
            for (node, id) in b.broadcast(kk, blocks, &members, kk % pc)? {
                recv_a.insert(node, id);
            }
        }
        for c in 0..pc.min(n) {
            let blocks: Vec<_> = (c..n).step_by(pc).map(|j| BlockKey::b(kk, j, 0)).collect();
            let members: Vec<_> = (0..pr).map(|r| NodeCoord::new(r, c)).collect();
            for (node, id) in b.broadcast(kk, blocks, &members, kk % pr)? {
                recv_b.insert(node, id);
            }
        }

        let mut this_iter = HashMap::new();
        for node in grid.nodes() {
            let mut products = Vec::new();
            for i in (node.row..m).step_by(pr) {
                for j in (node.col..n).step_by(pc) {
                    products.push(Product {
                        a: BlockKey::a(i, kk, 0),
                        b: BlockKey::b(kk, j, 0),
                        c: CKey { i, j, x: 0, y: 0 },
                    });
                }
            }
            let upd = b.graph.push_task(
                TaskKind::Multiply,
                kk,
                node,
                Payload::RankUpdate { products },
            );
            for src in [recv_a.get(&node), recv_b.get(&node), prev_update.get(&node)]
                .into_iter()
                .flatten()
            {
                b.graph.add_edge(*src, upd, EdgeKind::Data)?;
            }
            for send in b.sends_of(node) {
                b.graph.add_edge(send, upd, EdgeKind::Sequence)?;
            }
            prev_update.insert(node, upd);
            this_iter.insert(node, upd);
        }
        if kk >= 2 {
            for (&node, &upd) in &updates[kk - 2] {
                for recv in b.recvs_of(node) {
                    b.graph.add_edge(upd, recv, EdgeKind::Sequence)?;
                }
            }
        }
        updates.push(this_iter);
    }
    Ok(b.graph)
}

/// Task-based SUMMA graph for `A * B` with default options.
pub fn build_task_graph(
    a: &BlockMatrix,
    b: &BlockMatrix,
    grid: &ProcessGrid,
    issue_limit_override: Option<usize>,
) -> Result<TaskGraph> {
    let opts = TaskGraphOptions {
        issue_limit: issue_limit_override,
        ..TaskGraphOptions::default()
    };
    build_task_graph_with(a, b, grid, &opts)
}

pub fn build_task_graph_with(
    a: &BlockMatrix,
    b: &BlockMatrix,
    grid: &ProcessGrid,
    opts: &TaskGraphOptions,
) -> Result<TaskGraph> {
    if a.col_tiling() != b.row_tiling() {
        return Err(invalid(
            "A's column tiling must equal B's row tiling for the product to be defined",
        ));
    }
    let shape = BlockShape::from_tilings(a.row_tiling(), a.col_tiling(), b.col_tiling(), opts.split);
    task_graph_from_shape(&shape, grid, opts)
}

impl TaskGraph {
    /// Task-mode graph directly from block counts.
    pub fn for_shape(shape: &BlockShape, grid: &ProcessGrid, opts: &TaskGraphOptions) -> Result<TaskGraph> {
        task_graph_from_shape(shape, grid, opts)
    }
}

fn task_graph_from_shape(shape: &BlockShape, grid: &ProcessGrid, opts: &TaskGraphOptions) -> Result<TaskGraph> {
    shape.check()?;
    if opts.issue_limit == Some(0) {
        return Err(invalid("issue limit must be at least 1"));
    }
    let (m, n, k) = (shape.row_parts.len(), shape.col_parts.len(), shape.inner_blocks);
    let (pr, pc) = (grid.p_row(), grid.p_col());
    let issue_limit = opts
        .issue_limit
        .unwrap_or_else(|| concurrency_limit(pr, pc, k));

    let mut b = Builder::new(Mode::Task, *grid, issue_limit, k);
    b.graph.set_deterministic(opts.deterministic);
    let mut gates: Vec<Vec<TaskId>> = Vec::with_capacity(k);
    let mut last_reduce: HashMap<CKey, TaskId> = HashMap::new();

    for kk in 0..k {
        b.begin_iteration();
        // recv task of each broadcast unit at each member, keyed by (key, node)
        let mut recv: HashMap<(BlockKey, NodeCoord), TaskId> = HashMap::new();
        for i in 0..m {
            let members: Vec<_> = (0..pc).map(|c| NodeCoord::new(i % pr, c)).collect();
            for x in 0..shape.row_parts[i] {
                let key = BlockKey::a(i, kk, x);
                for (node, id) in b.broadcast(kk, vec![key], &members, kk % pc)? {
                    recv.insert((key, node), id);
                }
            }
        }
        for j in 0..n {
            let members: Vec<_> = (0..pr).map(|r| NodeCoord::new(r, j % pc)).collect();
            for y in 0..shape.col_parts[j] {
                let key = BlockKey::b(kk, j, y);
                for (node, id) in b.broadcast(kk, vec![key], &members, kk % pr)? {
                    recv.insert((key, node), id);
                }
            }
        }

        for i in 0..m {
            for j in 0..n {
                let node = owner(grid, i, j);
                for x in 0..shape.row_parts[i] {
                    for y in 0..shape.col_parts[j] {
                        let product = Product {
                            a: BlockKey::a(i, kk, x),
                            b: BlockKey::b(kk, j, y),
                            c: CKey { i, j, x, y },
                        };
                        let mul = b.graph.push_task(
                            TaskKind::Multiply,
                            kk,
                            node,
                            Payload::Multiply { product },
                        );
                        b.graph.add_edge(recv[&(product.a, node)], mul, EdgeKind::Data)?;
                        b.graph.add_edge(recv[&(product.b, node)], mul, EdgeKind::Data)?;
                        b.mark_consumed(recv[&(product.a, node)]);
                        b.mark_consumed(recv[&(product.b, node)]);
                        let red = b.graph.push_task(
                            TaskKind::Reduce,
                            kk,
                            node,
                            Payload::Reduce {
                                c: product.c,
                                source: mul,
                            },
                        );
                        b.graph.add_edge(mul, red, EdgeKind::Data)?;
                        if opts.deterministic {
                            if let Some(prev) = last_reduce.get(&product.c) {
                                b.graph.add_edge(*prev, mul, EdgeKind::Sequence)?;
                            }
                        }
                        last_reduce.insert(product.c, red);
                        b.sinks.entry(node).or_default().push(red);
                    }
                }
            }
        }

        let mut iter_gates = Vec::with_capacity(grid.node_count());
        for node in grid.nodes() {
            let gate = b.graph.push_task(TaskKind::ThrottleGate, kk, node, Payload::Gate);
            for &s in b.sinks.get(&node).map(Vec::as_slice).unwrap_or_default() {
                b.graph.add_edge(s, gate, EdgeKind::Sequence)?;
            }
            for s in b.sends_of(node) {
                b.graph.add_edge(s, gate, EdgeKind::Sequence)?;
            }
            for r in b.recvs_of(node) {
                if !b.consumed.contains(&r) {
                    b.graph.add_edge(r, gate, EdgeKind::Sequence)?;
                }
            }
            if kk > 0 {
                b.graph
                    .add_edge(gates[kk - 1][iter_gates.len()], gate, EdgeKind::Sequence)?;
            }
            iter_gates.push(gate);
        }
        if kk >= issue_limit {
            for (rank, node) in grid.nodes().enumerate() {
                for r in b.recvs_of(node) {
                    b.graph
                        .add_edge(gates[kk - issue_limit][rank], r, EdgeKind::Sequence)?;
                }
            }
        }
        gates.push(iter_gates);
    }
    Ok(b.graph)
}

struct Builder {
    graph: TaskGraph,
    // per-iteration bookkeeping, reset by begin_iteration
    recvs: HashMap<NodeCoord, Vec<TaskId>>,
    sends: HashMap<NodeCoord, Vec<TaskId>>,
    sinks: HashMap<NodeCoord, Vec<TaskId>>,
    consumed: std::collections::HashSet<TaskId>,
}

impl Builder {
    fn new(mode: Mode, grid: ProcessGrid, issue_limit: usize, iterations: usize) -> Self {
        Self {
            graph: TaskGraph::empty(mode, grid, issue_limit, iterations),
            recvs: HashMap::new(),
            sends: HashMap::new(),
            sinks: HashMap::new(),
            consumed: Default::default(),
        }
    }

    fn begin_iteration(&mut self) {
        self.recvs.clear();
        self.sends.clear();
        self.sinks.clear();
        self.consumed.clear();
    }

    fn recvs_of(&self, node: NodeCoord) -> Vec<TaskId> {
        self.recvs.get(&node).cloned().unwrap_or_default()
    }

    fn sends_of(&self, node: NodeCoord) -> Vec<TaskId> {
        self.sends.get(&node).cloned().unwrap_or_default()
    }

    fn mark_consumed(&mut self, recv: TaskId) {
        self.consumed.insert(recv);
    }

    /// Adds the recv (and, for inner tree nodes, send) tasks of one tree
    /// broadcast. Returns each member's recv task.
    fn broadcast(
        &mut self,
        iteration: usize,
        blocks: Vec<BlockKey>,
        members: &[NodeCoord],
        root: usize,
    ) -> Result<Vec<(NodeCoord, TaskId)>> {
        let g = members.len();
        let mut recv_ids = Vec::with_capacity(g);
        for me in 0..g {
            let parent = bcast_tree_parent(root, me, g)?.map(|p| members[p]);
            let children = bcast_tree_children(root, me, g)?
                .into_iter()
                .map(|c| members[c])
                .collect();
            let id = self.graph.push_task(
                TaskKind::BcastRecv,
                iteration,
                members[me],
                Payload::Broadcast {
                    blocks: blocks.clone(),
                    root: members[root],
                    parent,
                    children,
                },
            );
            self.recvs.entry(members[me]).or_default().push(id);
            recv_ids.push(id);
        }
        for me in 0..g {
            let children = bcast_tree_children(root, me, g)?;
            if children.is_empty() {
                continue;
            }
            let send = self.graph.push_task(
                TaskKind::BcastSend,
                iteration,
                members[me],
                Payload::Broadcast {
                    blocks: blocks.clone(),
                    root: members[root],
                    parent: bcast_tree_parent(root, me, g)?.map(|p| members[p]),
                    children: children.iter().map(|&c| members[c]).collect(),
                },
            );
            self.graph.add_edge(recv_ids[me], send, EdgeKind::Data)?;
            self.mark_consumed(recv_ids[me]);
            for c in children {
                self.graph.add_edge(send, recv_ids[c], EdgeKind::Data)?;
            }
            self.sends.entry(members[me]).or_default().push(send);
        }
        Ok(members.iter().copied().zip(recv_ids).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dag::{topo_validate, Operand};
    use crate::matrix::random_block_matrix;
    use crate::tiling::make_uniform_tiling;

    fn grid(r: usize, c: usize) -> ProcessGrid {
        ProcessGrid::new(r, c).unwrap()
    }

    #[test]
    fn concurrency_limit_examples() {
        assert_eq!(concurrency_limit(1, 4, 10), 2);
        assert_eq!(concurrency_limit(16, 16, 8), 8);
        assert_eq!(concurrency_limit(4, 8, 100), 4);
        assert_eq!(concurrency_limit(1, 1, 1), 1);
    }

    #[test]
    fn baseline_single_iteration() {
        let g = build_baseline_graph(1, 1, 1, &grid(1, 1)).unwrap();
        assert_eq!(g.count(TaskKind::BcastRecv), 2);
        assert_eq!(g.count(TaskKind::BcastSend), 0);
        assert_eq!(g.count(TaskKind::Multiply), 1);
        assert!(g.edges().iter().all(|e| e.kind == EdgeKind::Data));
        assert_eq!(g.issue_limit(), 1);
    }

    #[test]
    fn baseline_chain_on_c() {
        let g = build_baseline_graph(1, 1, 3, &grid(1, 1)).unwrap();
        let updates: Vec<_> = g.tasks().iter().filter(|t| t.kind == TaskKind::Multiply).collect();
        assert_eq!(updates.len(), 3);
        for w in updates.windows(2) {
            assert!(g
                .successors(w[0].id)
                .any(|e| e.dst == w[1].id && e.kind == EdgeKind::Data));
        }
        // lookahead: broadcasts of k+2 wait on update k, broadcasts of k+1 do not
        let seq: Vec<_> = g.edges().iter().filter(|e| e.kind == EdgeKind::Sequence).collect();
        assert_eq!(seq.len(), 2);
        for e in seq {
            assert_eq!(g.task(e.src).id, updates[0].id);
            assert_eq!(g.task(e.dst).kind, TaskKind::BcastRecv);
            assert_eq!(g.task(e.dst).iteration, 2);
        }
        assert_eq!(g.issue_limit(), 2);
    }

    #[test]
    fn baseline_per_node_counts_equal() {
        let g = build_baseline_graph(2, 2, 2, &grid(2, 2)).unwrap();
        let mut counts = HashMap::new();
        for t in g.tasks() {
            *counts.entry(t.node).or_insert(0) += 1;
        }
        assert_eq!(counts.len(), 4);
        let first = counts[&NodeCoord::new(0, 0)];
        assert!(counts.values().all(|&c| c == first));
        topo_validate(&g).unwrap();
    }

    #[test]
    fn task_graph_trivial() {
        let t = make_uniform_tiling(3, 3).unwrap();
        let a = random_block_matrix(&t, &t, &grid(1, 1), 1);
        let g = build_task_graph(&a, &a, &grid(1, 1), None).unwrap();
        assert_eq!(g.count(TaskKind::Multiply), 1);
        assert_eq!(g.count(TaskKind::BcastSend), 0);
        assert_eq!(g.count(TaskKind::BcastRecv), 2);
    }

    #[test]
    fn task_graph_throttle_edges() {
        let shape = BlockShape::unsplit(4, 4, 4);
        let g = TaskGraph::for_shape(&shape, &grid(2, 2), &TaskGraphOptions::default()).unwrap();
        assert_eq!(g.issue_limit(), 2);
        for e in g.edges() {
            let (s, d) = (g.task(e.src), g.task(e.dst));
            if s.kind == TaskKind::ThrottleGate && d.kind == TaskKind::BcastRecv {
                assert_eq!(d.iteration, s.iteration + 2);
                assert_eq!(s.node, d.node);
            }
        }
        let gated = g
            .tasks()
            .iter()
            .filter(|t| t.kind == TaskKind::BcastRecv && t.iteration >= 2)
            .all(|t| g.predecessors(t.id).any(|e| g.task(e.src).kind == TaskKind::ThrottleGate));
        assert!(gated);
    }

    #[test]
    fn multiply_in_degree_two() {
        let shape = BlockShape::unsplit(4, 4, 4);
        let g = TaskGraph::for_shape(&shape, &grid(2, 2), &TaskGraphOptions::default()).unwrap();
        for t in g.tasks().iter().filter(|t| t.kind == TaskKind::Multiply) {
            assert_eq!(g.data_in_degree(t.id), 2);
            let ops: Vec<_> = g
                .predecessors(t.id)
                .map(|e| match &g.task(e.src).payload {
                    Payload::Broadcast { blocks, .. } => blocks[0].operand,
                    _ => panic!("multiply fed by non-broadcast"),
                })
                .collect();
            assert!(ops.contains(&Operand::A) && ops.contains(&Operand::B));
        }
    }

    #[test]
    fn rejects_nonconformable() {
        let t4 = make_uniform_tiling(4, 2).unwrap();
        let t5 = make_uniform_tiling(5, 2).unwrap();
        let a = random_block_matrix(&t4, &t4, &grid(1, 1), 1);
        let b = random_block_matrix(&t5, &t4, &grid(1, 1), 1);
        assert!(build_task_graph(&a, &b, &grid(1, 1), None).is_err());
        assert!(build_task_graph(&a, &a, &grid(1, 1), Some(0)).is_err());
    }

    #[test]
    fn split_multiplies_per_sub_block() {
        let t = make_uniform_tiling(8, 4).unwrap();
        let a = random_block_matrix(&t, &t, &grid(1, 2), 1);
        let opts = TaskGraphOptions {
            split: 2,
            ..Default::default()
        };
        let g = build_task_graph_with(&a, &a, &grid(1, 2), &opts).unwrap();
        assert_eq!(g.count(TaskKind::Multiply), 2 * 2 * 2 * 4);
        topo_validate(&g).unwrap();
    }
}
