//! Per-node counters, run metrics, load-variability statistics and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dag::{Mode, TaskKind};
use crate::error::{invalid, Error, Result};
use crate::grid::{NodeCoord, ProcessGrid};
use crate::matrix::BlockMatrix;
use crate::tiling::Tiling;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricCounters {
    pub current_bytes: u64,
    pub high_water_bytes: u64,
    pub flops: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub messages_sent: u64,
    pub messages_received: u64,
    /// Result sub-blocks allocated because the target was busy.
    pub temporaries: u64,
    /// Reduce tasks skipped because their multiply accumulated in place.
    pub reduces_elided: u64,
    pub tasks_executed: BTreeMap<String, u64>,
}

impl MetricCounters {
    pub fn alloc(&mut self, bytes: u64) {
        self.current_bytes += bytes;
        self.high_water_bytes = self.high_water_bytes.max(self.current_bytes);
    }

    pub fn free(&mut self, bytes: u64) {
        debug_assert!(bytes <= self.current_bytes, "freeing more than held");
        self.current_bytes -= bytes;
    }

    pub fn count_task(&mut self, kind: TaskKind) {
        *self.tasks_executed.entry(kind.as_str().to_string()).or_default() += 1;
    }

    pub fn executed(&self, kind: TaskKind) -> u64 {
        self.tasks_executed.get(kind.as_str()).copied().unwrap_or(0)
    }
}

/// One task execution in virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub task_id: u32,
    pub kind: TaskKind,
    pub node: NodeCoord,
    pub iteration: usize,
    pub start_us: f64,
    pub end_us: f64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMetrics {
    pub coords: NodeCoord,
    pub counters: MetricCounters,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub mode: Mode,
    pub issue_limit: usize,
    pub per_node: Vec<NodeMetrics>,
    pub makespan_virtual_us: f64,
    pub makespan_wall_us: f64,
    /// FLOPs per second of wall time.
    pub flop_rate: f64,
    #[serde(skip)]
    pub timeline: Vec<TimelineEvent>,
}

impl RunMetrics {
    pub fn total_flops(&self) -> u64 {
        self.per_node.iter().map(|n| n.counters.flops).sum()
    }

    pub fn total_bytes_sent(&self) -> u64 {
        self.per_node.iter().map(|n| n.counters.bytes_sent).sum()
    }

    pub fn total_bytes_received(&self) -> u64 {
        self.per_node.iter().map(|n| n.counters.bytes_received).sum()
    }

    pub fn node(&self, coords: NodeCoord) -> Option<&MetricCounters> {
        self.per_node.iter().find(|n| n.coords == coords).map(|n| &n.counters)
    }

    pub fn max_high_water(&self) -> u64 {
        self.per_node.iter().map(|n| n.counters.high_water_bytes).max().unwrap_or(0)
    }

    pub fn total(&self, f: impl Fn(&MetricCounters) -> u64) -> u64 {
        self.per_node.iter().map(|n| f(&n.counters)).sum()
    }

    /// Timeline as JSON lines, one task per line.
    pub fn write_timeline<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.timeline {
            serde_json::to_writer(&mut w, ev)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Max-to-min ratio, printed as `1:x`. Infinite when some load is zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LoadRatio(pub f64);

impl LoadRatio {
    fn of(values: impl IntoIterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo == 0.0 {
            LoadRatio(f64::INFINITY)
        } else {
            LoadRatio(hi / lo)
        }
    }

    pub fn is_unbounded(&self) -> bool {
        self.0.is_infinite()
    }
}

impl fmt::Display for LoadRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_unbounded() {
            write!(f, "1:inf")
        } else {
            write!(f, "1:{:.2}", self.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadRatios {
    pub memory: LoadRatio,
    pub work: LoadRatio,
    /// Nodes owning no result block. Non-zero means the grid outsizes the
    /// block grid and the ratios are unbounded.
    pub empty_nodes: usize,
}

/// Per-node min:max loads. Memory is the bytes of owned A, B and C blocks;
/// work is the multiply FLOPs (`2*m*k*n`) of the C blocks a node owns.
pub fn load_ratios(a: &BlockMatrix, b: &BlockMatrix, grid: &ProcessGrid) -> Result<LoadRatios> {
    if a.col_tiling() != b.row_tiling() {
        return Err(invalid("load ratios need conformable operands"));
    }
    Ok(load_ratios_for_tilings(a.row_tiling(), a.col_tiling(), b.col_tiling(), grid))
}

/// [`load_ratios`] from the tilings alone, without materializing operands.
pub fn load_ratios_for_tilings(rows: &Tiling, inner: &Tiling, cols: &Tiling, grid: &ProcessGrid) -> LoadRatios {
    let mut memory = vec![0.0f64; grid.node_count()];
    let mut work = vec![0.0f64; grid.node_count()];
    let mut owns_c = vec![false; grid.node_count()];
    let inner_len = inner.len() as f64;
    let tile = |t1: &Tiling, i: usize, t2: &Tiling, j: usize| (t1.extent(i) * t2.extent(j)) as f64;
    for node in grid.nodes() {
        let r = grid.rank(node);
        for i in (node.row..rows.block_count()).step_by(grid.p_row()) {
            for kk in (node.col..inner.block_count()).step_by(grid.p_col()) {
                memory[r] += 8.0 * tile(rows, i, inner, kk);
            }
            for j in (node.col..cols.block_count()).step_by(grid.p_col()) {
                memory[r] += 8.0 * tile(rows, i, cols, j);
                work[r] += 2.0 * tile(rows, i, cols, j) * inner_len;
                owns_c[r] = true;
            }
        }
        for kk in (node.row..inner.block_count()).step_by(grid.p_row()) {
            for j in (node.col..cols.block_count()).step_by(grid.p_col()) {
                memory[r] += 8.0 * tile(inner, kk, cols, j);
            }
        }
    }
    LoadRatios {
        memory: LoadRatio::of(memory),
        work: LoadRatio::of(work),
        empty_nodes: owns_c.iter().filter(|&&o| !o).count(),
    }
}

/// Per-block min:max loads of a generated blocking: memory over result
/// blocks (`m_i * n_j`) and work over block multiplies (`m_i * k_k * n_j`).
pub fn block_load_ratios(rows: &Tiling, inner: &Tiling, cols: &Tiling) -> (LoadRatio, LoadRatio) {
    let (m_lo, m_hi) = (rows.min_extent() as f64, rows.max_extent() as f64);
    let (k_lo, k_hi) = (inner.min_extent() as f64, inner.max_extent() as f64);
    let (n_lo, n_hi) = (cols.min_extent() as f64, cols.max_extent() as f64);
    (
        LoadRatio((m_hi * n_hi) / (m_lo * n_lo)),
        LoadRatio((m_hi * k_hi * n_hi) / (m_lo * k_lo * n_lo)),
    )
}

/// What was multiplied, for reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemDescriptor {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    pub grid: ProcessGrid,
    /// Measured single-node FLOP rate that counts as 100% efficiency. A
    /// single-node run without one is its own reference.
    pub single_node_rate: Option<f64>,
    pub load: Option<LoadRatios>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: usize,
    pub inner: usize,
    pub cols: usize,
    pub grid: String,
    pub nodes: usize,
    pub mode: Mode,
    pub issue_limit: usize,
    pub total_flops: u64,
    pub makespan_virtual_us: f64,
    pub makespan_wall_us: f64,
    pub flop_rate: f64,
    /// `None` when there is no single-node reference.
    pub efficiency: Option<f64>,
    pub load: Option<LoadRatios>,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub max_high_water_bytes: u64,
    pub per_node: Vec<NodeMetrics>,
    /// Work counts multiply FLOPs only; reduce additions are excluded.
    pub work_metric: String,
}

pub fn summarize(metrics: &RunMetrics, problem: &ProblemDescriptor) -> Result<Report> {
    if !(metrics.makespan_wall_us > 0.0) {
        return Err(Error::InvalidMetrics(format!(
            "wall makespan must be positive, got {}",
            metrics.makespan_wall_us
        )));
    }
    let total_flops = metrics.total_flops();
    let flop_rate = total_flops as f64 / (metrics.makespan_wall_us * 1e-6);
    let nodes = problem.grid.node_count();
    let reference = match problem.single_node_rate {
        Some(r) if !(r > 0.0) => {
            return Err(Error::InvalidMetrics("single-node reference rate must be positive".into()))
        }
        Some(r) => Some(r),
        None if nodes == 1 => Some(flop_rate),
        None => None,
    };
    Ok(Report {
        rows: problem.rows,
        inner: problem.inner,
        cols: problem.cols,
        grid: problem.grid.to_string(),
        nodes,
        mode: metrics.mode,
        issue_limit: metrics.issue_limit,
        total_flops,
        makespan_virtual_us: metrics.makespan_virtual_us,
        makespan_wall_us: metrics.makespan_wall_us,
        flop_rate,
        efficiency: reference.map(|r| flop_rate / (nodes as f64 * r)),
        load: problem.load.clone(),
        bytes_sent: metrics.total_bytes_sent(),
        bytes_received: metrics.total_bytes_received(),
        max_high_water_bytes: metrics.max_high_water(),
        per_node: metrics.per_node.clone(),
        work_metric: "multiply flops (2*m*k*n)".into(),
    })
}

impl Report {
    /// One row per node: coords, high-water bytes, flops, bytes sent/received.
    pub fn write_node_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["node_row", "node_col", "mem_bytes_hwm", "flops", "bytes_sent", "bytes_received"])?;
        for n in &self.per_node {
            let c = &n.counters;
            out.write_record([
                n.coords.row.to_string(),
                n.coords.col.to_string(),
                c.high_water_bytes.to_string(),
                c.flops.to_string(),
                c.bytes_sent.to_string(),
                c.bytes_received.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    /// Totals and rates, without the per-node table.
    pub fn summary_json(&self) -> serde_json::Value {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("per_node");
        v
    }
}

/// Whenever a task of iteration `k` starts on a node, every task of that node
/// with iteration `<= k - issue_limit` must already have ended.
pub fn check_timeline_window(timeline: &[TimelineEvent], issue_limit: usize) -> std::result::Result<(), String> {
    let mut by_node: BTreeMap<NodeCoord, Vec<&TimelineEvent>> = BTreeMap::new();
    for ev in timeline {
        by_node.entry(ev.node).or_default().push(ev);
    }
    for (node, evs) in by_node {
        // latest end among tasks of each iteration, then prefix max
        let iters = evs.iter().map(|e| e.iteration).max().unwrap_or(0) + 1;
        let mut last_end = vec![0.0f64; iters];
        for e in &evs {
            last_end[e.iteration] = last_end[e.iteration].max(e.end_us);
        }
        for i in 1..iters {
            last_end[i] = last_end[i].max(last_end[i - 1]);
        }
        for e in &evs {
            if e.iteration >= issue_limit {
                let retired_by = last_end[e.iteration - issue_limit];
                if e.start_us < retired_by {
                    return Err(format!(
                        "task {} (iteration {}) started on {node} at {}us before iteration {} retired at {}us",
                        e.task_id,
                        e.iteration,
                        e.start_us,
                        e.iteration - issue_limit,
                        retired_by
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Intervals of virtual time during which no node runs a compute task.
pub fn idle_gaps(timeline: &[TimelineEvent]) -> Vec<(f64, f64)> {
    let mut busy: Vec<(f64, f64)> = timeline
        .iter()
        .filter(|e| e.kind.is_compute() && e.end_us > e.start_us)
        .map(|e| (e.start_us, e.end_us))
        .collect();
    busy.sort_by(|x, y| x.0.total_cmp(&y.0));
    let end = timeline.iter().map(|e| e.end_us).fold(0.0, f64::max);
    let mut gaps = Vec::new();
    let mut covered = 0.0f64;
    for (s, e) in busy {
        if s > covered {
            gaps.push((covered, s));
        }
        covered = covered.max(e);
    }
    if end > covered {
        gaps.push((covered, end));
    }
    gaps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::random_block_matrix;
    use crate::tiling::{make_nonuniform_tiling, make_uniform_tiling};

    fn grid(r: usize, c: usize) -> ProcessGrid {
        ProcessGrid::new(r, c).unwrap()
    }

    #[test]
    fn high_water_tracks_peak() {
        let mut c = MetricCounters::default();
        c.alloc(10);
        c.alloc(5);
        c.free(12);
        c.alloc(2);
        assert_eq!(c.current_bytes, 5);
        assert_eq!(c.high_water_bytes, 15);
    }

    #[test]
    fn uniform_is_balanced() {
        let t = make_uniform_tiling(64, 8).unwrap();
        let a = random_block_matrix(&t, &t, &grid(2, 4), 1);
        let r = load_ratios(&a, &a, &grid(2, 4)).unwrap();
        assert_eq!(r.memory, LoadRatio(1.0));
        assert_eq!(r.work, LoadRatio(1.0));
        assert_eq!(r.empty_nodes, 0);
    }

    #[test]
    fn single_node_is_balanced() {
        let t = make_nonuniform_tiling(100, 9, 4).unwrap();
        let a = random_block_matrix(&t, &t, &grid(1, 1), 1);
        let r = load_ratios(&a, &a, &grid(1, 1)).unwrap();
        assert_eq!(r.memory, LoadRatio(1.0));
        assert_eq!(r.work, LoadRatio(1.0));
    }

    #[test]
    fn oversized_grid_is_unbounded() {
        let t = make_uniform_tiling(4, 2).unwrap();
        let a = random_block_matrix(&t, &t, &grid(4, 4), 1);
        let r = load_ratios(&a, &a, &grid(4, 4)).unwrap();
        assert!(r.memory.is_unbounded());
        assert!(r.work.is_unbounded());
        assert_eq!(r.empty_nodes, 12);
        assert_eq!(r.memory.to_string(), "1:inf");
    }

    #[test]
    fn large_nonuniform_between_extremes() {
        let t = make_nonuniform_tiling(32768, 128, 42).unwrap();
        let g = grid(16, 16);
        let (block_mem, block_work) = block_load_ratios(&t, &t, &t);
        let r = load_ratios_for_tilings(&t, &t, &t, &g);
        assert!(r.memory.0 > 1.0 && r.memory.0 < block_mem.0);
        assert!(r.work.0 > 1.0 && r.work.0 < block_work.0);
    }

    fn metrics(flops: u64, wall_us: f64, nodes: usize) -> RunMetrics {
        RunMetrics {
            mode: Mode::Task,
            issue_limit: 1,
            per_node: (0..nodes)
                .map(|r| NodeMetrics {
                    coords: NodeCoord::new(0, r),
                    counters: MetricCounters {
                        flops: flops / nodes as u64,
                        ..Default::default()
                    },
                })
                .collect(),
            makespan_virtual_us: 1.0,
            makespan_wall_us: wall_us,
            flop_rate: 0.0,
            timeline: Vec::new(),
        }
    }

    fn problem(nodes: usize, reference: Option<f64>) -> ProblemDescriptor {
        ProblemDescriptor {
            rows: 8,
            inner: 8,
            cols: 8,
            grid: grid(1, nodes),
            single_node_rate: reference,
            load: None,
        }
    }

    #[test]
    fn single_node_efficiency_is_one() {
        let r = summarize(&metrics(1000, 10.0, 1), &problem(1, None)).unwrap();
        assert_eq!(r.efficiency, Some(1.0));
        let r2 = summarize(&metrics(1000, 10.0, 1), &problem(1, Some(r.flop_rate))).unwrap();
        assert_eq!(r2.efficiency, Some(1.0));
        assert_eq!(summarize(&metrics(1000, 10.0, 2), &problem(2, None)).unwrap().efficiency, None);
    }

    #[test]
    fn double_makespan_halves_rate() {
        let fast = summarize(&metrics(4000, 10.0, 2), &problem(2, Some(1.0))).unwrap();
        let slow = summarize(&metrics(4000, 20.0, 2), &problem(2, Some(1.0))).unwrap();
        assert_eq!(fast.flop_rate, 2.0 * slow.flop_rate);
    }

    #[test]
    fn zero_makespan_rejected() {
        assert!(matches!(
            summarize(&metrics(10, 0.0, 1), &problem(1, None)),
            Err(Error::InvalidMetrics(_))
        ));
    }

    #[test]
    fn node_csv_layout() {
        let r = summarize(&metrics(1000, 10.0, 2), &problem(2, None)).unwrap();
        let mut buf = Vec::new();
        r.write_node_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "node_row,node_col,mem_bytes_hwm,flops,bytes_sent,bytes_received");
        assert_eq!(lines.len(), 3);
        assert!(r.summary_json().get("per_node").is_none());
    }

    #[test]
    fn window_check_flags_early_start() {
        let ev = |iteration, start_us, end_us| TimelineEvent {
            task_id: 0,
            kind: TaskKind::Multiply,
            node: NodeCoord::new(0, 0),
            iteration,
            start_us,
            end_us,
            bytes: 0,
        };
        let ok = [ev(0, 0.0, 5.0), ev(1, 1.0, 6.0), ev(2, 5.0, 7.0)];
        check_timeline_window(&ok, 2).unwrap();
        let bad = [ev(0, 0.0, 5.0), ev(1, 1.0, 6.0), ev(2, 4.0, 7.0)];
        assert!(check_timeline_window(&bad, 2).is_err());
        assert_eq!(idle_gaps(&ok), vec![]);
        let gap = [ev(0, 0.0, 1.0), ev(1, 2.0, 3.0)];
        assert_eq!(idle_gaps(&gap), vec![(1.0, 2.0)]);
    }
}
