use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap, VecDeque};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use super::node::{Message, SimNode};
use super::{Layout, RunConfig};
use crate::block::{gemm_into, DenseBlock};
use crate::dag::{BlockKey, CKey, EdgeKind, Payload, TaskGraph, TaskId, TaskKind};
use crate::error::{Error, Result};
use crate::matrix::BlockMatrix;
use crate::metrics::{NodeMetrics, RunMetrics, TimelineEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Waiting,
    Queued,
    /// Running; for a receive, posted and waiting for data.
    Active,
    Done,
}

#[derive(Debug, Clone)]
struct TaskState {
    pending: u32,
    status: Status,
    start_ns: u64,
    bytes: u64,
    /// Multiply that accumulated straight into its target.
    fused: bool,
    /// Send: transfers not yet departed.
    outstanding: usize,
}

enum Event {
    Complete(TaskId),
    Arrive(Message),
}

struct Scheduled {
    time: u64,
    seq: u64,
    event: Event,
}

impl PartialEq for Scheduled {
    fn eq(&self, other: &Self) -> bool {
        (self.time, self.seq) == (other.time, other.seq)
    }
}
impl Eq for Scheduled {}
impl PartialOrd for Scheduled {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Scheduled {
    // min-heap on (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        (other.time, other.seq).cmp(&(self.time, self.seq))
    }
}

/// Scheduler-side state of one node.
#[derive(Default)]
struct NodeSched {
    ready: BTreeSet<(usize, TaskId)>,
    parked: HashMap<CKey, Vec<(usize, TaskId)>>,
    busy_slots: usize,
    live_temps: usize,
    c_blocks: BTreeMap<CKey, Option<DenseBlock>>,
    claimed: BTreeSet<CKey>,
    temps: HashMap<TaskId, DenseBlock>,
}

enum Work {
    InPlace { c: CKey, block: DenseBlock, a: Arc<DenseBlock>, b: Arc<DenseBlock> },
    Temp { task: TaskId, out: DenseBlock, a: Arc<DenseBlock>, b: Arc<DenseBlock> },
    Reduce { c: CKey, block: DenseBlock, temp: DenseBlock },
    Update { items: Vec<(CKey, DenseBlock, Arc<DenseBlock>, Arc<DenseBlock>)> },
}

struct Job {
    node: usize,
    work: Work,
}

impl Job {
    fn execute(&mut self) -> Result<()> {
        match &mut self.work {
            Work::InPlace { block, a, b, .. } => gemm_into(1.0, a, b, block),
            Work::Temp { out, a, b, .. } => gemm_into(1.0, a, b, out),
            Work::Reduce { block, temp, .. } => block.add_assign(temp),
            Work::Update { items } => items.iter_mut().try_for_each(|(_, c, a, b)| gemm_into(1.0, a, b, c)),
        }
    }
}

pub(crate) struct Simulation<'a> {
    graph: &'a TaskGraph,
    a: &'a BlockMatrix,
    b: &'a BlockMatrix,
    layout: Layout,
    cfg: &'a RunConfig,
    nodes: Vec<SimNode>,
    sched: Vec<NodeSched>,
    state: Vec<TaskState>,
    // parent send feeding each non-root receive
    feeder: Vec<Option<TaskId>>,
    events: BinaryHeap<Scheduled>,
    seq: u64,
    now: u64,
    finished: usize,
    ready: VecDeque<TaskId>,
    timeline: Vec<TimelineEvent>,
    pool: Option<rayon::ThreadPool>,
}

fn is_remote_recv(task: &crate::dag::Task) -> bool {
    matches!(task.payload, Payload::Broadcast { parent: Some(_), .. }) && task.kind == TaskKind::BcastRecv
}

impl<'a> Simulation<'a> {
    pub(crate) fn new(
        graph: &'a TaskGraph,
        a: &'a BlockMatrix,
        b: &'a BlockMatrix,
        layout: Layout,
        cfg: &'a RunConfig,
    ) -> Result<Self> {
        let grid = graph.grid();
        let n = graph.len();
        let mut state = vec![
            TaskState {
                pending: 0,
                status: Status::Waiting,
                start_ns: 0,
                bytes: 0,
                fused: false,
                outstanding: 0,
            };
            n
        ];
        let mut feeder = vec![None; n];
        for e in graph.edges() {
            let dst = graph.task(e.dst);
            if e.kind == EdgeKind::Data && is_remote_recv(dst) {
                feeder[e.dst.index()] = Some(e.src);
            } else {
                state[e.dst.index()].pending += 1;
            }
        }

        let mut nodes: Vec<SimNode> = grid.nodes().map(SimNode::new).collect();
        let mut sched: Vec<NodeSched> = grid.nodes().map(|_| NodeSched::default()).collect();
        for task in graph.tasks() {
            let rank = grid.rank(task.node);
            let node = &mut nodes[rank];
            let mut add_c = |c: CKey, nodes: &mut SimNode| {
                let slot = &mut sched[rank].c_blocks;
                if !slot.contains_key(&c) {
                    let (r, cc) = layout.c_shape(c);
                    let blk = DenseBlock::zeros(r.len(), cc.len());
                    nodes.counters.alloc(blk.bytes());
                    slot.insert(c, Some(blk));
                }
            };
            match &task.payload {
                Payload::Broadcast { blocks, .. } if task.kind == TaskKind::BcastSend => {
                    blocks.iter().for_each(|&k| node.add_consumer(k));
                }
                Payload::Multiply { product } => {
                    node.add_consumer(product.a);
                    node.add_consumer(product.b);
                    add_c(product.c, node);
                }
                Payload::RankUpdate { products } => {
                    for p in products {
                        node.add_consumer(p.a);
                        node.add_consumer(p.b);
                        add_c(p.c, node);
                    }
                }
                _ => {}
            }
        }
        let pool = if cfg.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(cfg.threads)
                    .build()
                    .map_err(|e| Error::Runtime(format!("cannot start worker pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            graph,
            a,
            b,
            layout,
            cfg,
            nodes,
            sched,
            state,
            feeder,
            events: BinaryHeap::new(),
            seq: 0,
            now: 0,
            finished: 0,
            ready: VecDeque::new(),
            timeline: Vec::with_capacity(n),
            pool,
        })
    }

    pub(crate) fn run(mut self) -> Result<(BlockMatrix, RunMetrics)> {
        let wall = Instant::now();
        for (i, st) in self.state.iter().enumerate() {
            if st.pending == 0 && !is_remote_recv(&self.graph.tasks()[i]) {
                self.ready.push_back(TaskId(i as u32));
            }
        }
        // remote receives with no sequence deps post at time zero
        for (i, st) in self.state.iter().enumerate() {
            if st.pending == 0 && is_remote_recv(&self.graph.tasks()[i]) {
                self.ready.push_back(TaskId(i as u32));
            }
        }
        self.drain()?;
        loop {
            self.start_compute()?;
            let Some(first) = self.events.pop() else { break };
            self.now = first.time;
            self.handle(first.event)?;
            while self.events.peek().is_some_and(|e| e.time == self.now) {
                let ev = self.events.pop().expect("peeked");
                self.handle(ev.event)?;
            }
            self.drain()?;
        }
        if self.finished < self.graph.len() {
            let stuck: Vec<String> = self
                .graph
                .tasks()
                .iter()
                .filter(|t| self.state[t.id.index()].status != Status::Done)
                .take(5)
                .map(|t| format!("{} {:?} it {} on {}", t.id.0, t.kind, t.iteration, t.node))
                .collect();
            return Err(Error::Runtime(format!(
                "stalled at {}us with {} of {} tasks unfinished, e.g. {}",
                self.now as f64 / 1e3,
                self.graph.len() - self.finished,
                self.graph.len(),
                stuck.join("; ")
            )));
        }
        let wall_us = wall.elapsed().as_secs_f64() * 1e6;
        self.finish(wall_us)
    }

    fn finish(mut self, wall_us: f64) -> Result<(BlockMatrix, RunMetrics)> {
        let grid = *self.graph.grid();
        let mut c = BlockMatrix::zeros(self.a.row_tiling().clone(), self.b.col_tiling().clone(), grid);
        for s in &mut self.sched {
            for (key, blk) in std::mem::take(&mut s.c_blocks) {
                let blk = blk.ok_or_else(|| Error::SchedulerBug(format!("{key:?} still checked out")))?;
                let (rows, cols) = self.layout.c_shape(key);
                c.block_mut(key.i, key.j).write_sub(rows.start, cols.start, &blk);
            }
        }
        if self.cfg.inject_fault {
            c.block_mut(0, 0).data_mut()[0] += 1.0;
        }
        let total_flops: u64 = self.nodes.iter().map(|n| n.counters.flops).sum();
        let metrics = RunMetrics {
            mode: self.graph.mode(),
            issue_limit: self.graph.issue_limit(),
            per_node: self
                .nodes
                .into_iter()
                .map(|n| NodeMetrics {
                    coords: n.coords(),
                    counters: n.counters,
                })
                .collect(),
            makespan_virtual_us: self.now as f64 / 1e3,
            makespan_wall_us: wall_us,
            flop_rate: if wall_us > 0.0 { total_flops as f64 / (wall_us * 1e-6) } else { 0.0 },
            timeline: self.timeline,
        };
        Ok((c, metrics))
    }

    fn rank(&self, t: TaskId) -> usize {
        self.graph.grid().rank(self.graph.task(t).node)
    }

    fn push_event(&mut self, time: u64, event: Event) {
        self.seq += 1;
        self.events.push(Scheduled {
            time,
            seq: self.seq,
            event,
        });
    }

    fn handle(&mut self, event: Event) -> Result<()> {
        match event {
            Event::Complete(t) => self.complete(t),
            Event::Arrive(msg) => {
                let rank = self.graph.grid().rank(msg.dst);
                self.nodes[rank].mailbox.push_back(msg);
                while let Some(m) = self.nodes[rank].mailbox.pop_front() {
                    let bytes = m.bytes();
                    if let Some(r) = self.nodes[rank].expected_by(m.key) {
                        self.state[r.index()].bytes += bytes;
                    }
                    if let Some(recv) = self.nodes[rank].deliver(m)? {
                        self.complete(recv)?;
                    }
                }
                Ok(())
            }
        }
    }

    fn drain(&mut self) -> Result<()> {
        while let Some(t) = self.ready.pop_front() {
            self.on_ready(t)?;
        }
        Ok(())
    }

    fn on_ready(&mut self, t: TaskId) -> Result<()> {
        let task = self.graph.task(t);
        let rank = self.rank(t);
        match (&task.payload, task.kind) {
            (Payload::Gate, _) => {
                self.state[t.index()].start_ns = self.now;
                self.complete(t)
            }
            (Payload::Broadcast { blocks, parent, .. }, TaskKind::BcastRecv) => {
                self.state[t.index()].status = Status::Active;
                self.state[t.index()].start_ns = self.now;
                if parent.is_none() {
                    for &key in blocks {
                        let blk = self.layout.input(self.a, self.b, key)?;
                        self.nodes[rank].insert_local(key, blk)?;
                    }
                    return self.complete(t);
                }
                self.nodes[rank].expect(t, blocks)?;
                let send = self.feeder[t.index()]
                    .ok_or_else(|| Error::SchedulerBug(format!("receive {} has no sender", t.0)))?;
                if self.state[send.index()].status == Status::Active {
                    self.transmit(send, t)?;
                }
                Ok(())
            }
            (Payload::Broadcast { .. }, TaskKind::BcastSend) => {
                self.state[t.index()].status = Status::Active;
                self.state[t.index()].start_ns = self.now;
                let children: Vec<TaskId> = self
                    .graph
                    .successors(t)
                    .filter(|e| e.kind == EdgeKind::Data)
                    .map(|e| e.dst)
                    .collect();
                self.state[t.index()].outstanding = children.len();
                if children.is_empty() {
                    return self.complete(t);
                }
                for child in children {
                    if self.state[child.index()].status == Status::Active {
                        self.transmit(t, child)?;
                    }
                }
                Ok(())
            }
            (Payload::Reduce { source, .. }, _) if self.state[source.index()].fused => {
                self.nodes[rank].counters.reduces_elided += 1;
                self.state[t.index()].start_ns = self.now;
                self.complete(t)
            }
            _ if task.kind.is_compute() => {
                self.state[t.index()].status = Status::Queued;
                self.sched[rank].ready.insert((task.iteration, t));
                Ok(())
            }
            _ => Err(Error::SchedulerBug(format!("task {} has a malformed payload", t.0))),
        }
    }

    /// Copies every block of `send` toward `child`.
    fn transmit(&mut self, send: TaskId, child: TaskId) -> Result<()> {
        let task = self.graph.task(send);
        let Payload::Broadcast { blocks, .. } = &task.payload else {
            return Err(Error::SchedulerBug(format!("send {} has no blocks", send.0)));
        };
        let rank = self.rank(send);
        let dst = self.graph.task(child).node;
        for &key in blocks {
            let payload = DenseBlock::clone(self.nodes[rank].block(key).ok_or_else(|| {
                Error::SchedulerBug(format!("send {} lacks {key:?}", send.0))
            })?);
            let bytes = payload.bytes();
            let counters = &mut self.nodes[rank].counters;
            counters.bytes_sent += bytes;
            counters.messages_sent += 1;
            self.state[send.index()].bytes += bytes;
            let arrive = self.now + self.cfg.latency.delay_ns(bytes);
            let msg = Message {
                src: task.node,
                dst,
                key,
                payload,
                sent_at_us: self.now as f64 / 1e3,
            };
            self.push_event(arrive, Event::Arrive(msg));
        }
        let st = &mut self.state[send.index()];
        st.outstanding -= 1;
        if st.outstanding == 0 {
            self.complete(send)?;
        }
        Ok(())
    }

    fn complete(&mut self, t: TaskId) -> Result<()> {
        let graph = self.graph;
        let task = graph.task(t);
        let rank = self.rank(t);
        let st = &mut self.state[t.index()];
        if st.status == Status::Done {
            return Err(Error::SchedulerBug(format!("task {} completed twice", t.0)));
        }
        st.status = Status::Done;
        self.finished += 1;
        self.timeline.push(TimelineEvent {
            task_id: t.0,
            kind: task.kind,
            node: task.node,
            iteration: task.iteration,
            start_us: st.start_ns as f64 / 1e3,
            end_us: self.now as f64 / 1e3,
            bytes: st.bytes,
        });
        let fused = st.fused;
        let node = &mut self.nodes[rank];
        node.counters.count_task(task.kind);
        match &task.payload {
            Payload::Broadcast { blocks, .. } => {
                for &key in blocks {
                    if task.kind == TaskKind::BcastSend {
                        node.consume(key)?;
                    } else {
                        node.release_if_unread(key)?;
                    }
                }
            }
            Payload::Multiply { product } => {
                node.counters.flops += flops_of(&self.layout, self.a, product.a, product.b);
                node.consume(product.a)?;
                node.consume(product.b)?;
                self.sched[rank].busy_slots -= 1;
                if fused {
                    self.unclaim(rank, product.c);
                }
            }
            Payload::RankUpdate { products } => {
                for p in products {
                    node.counters.flops += flops_of(&self.layout, self.a, p.a, p.b);
                    node.consume(p.a)?;
                    node.consume(p.b)?;
                }
                for p in products {
                    self.sched[rank].claimed.remove(&p.c);
                }
                self.sched[rank].busy_slots = 0;
            }
            Payload::Reduce { c, source } => {
                if !self.state[source.index()].fused {
                    let (rows, cols) = self.layout.c_shape(*c);
                    let s = &mut self.sched[rank];
                    s.live_temps -= 1;
                    s.busy_slots -= 1;
                    self.nodes[rank].counters.free(8 * (rows.len() * cols.len()) as u64);
                    self.unclaim(rank, *c);
                }
            }
            Payload::Gate => {}
        }
        for e in graph.successors(t) {
            let dst = graph.task(e.dst);
            if e.kind == EdgeKind::Data && is_remote_recv(dst) {
                continue;
            }
            let st = &mut self.state[e.dst.index()];
            st.pending -= 1;
            if st.pending == 0 {
                self.ready.push_back(e.dst);
            }
        }
        Ok(())
    }

    fn unclaim(&mut self, rank: usize, c: CKey) {
        let s = &mut self.sched[rank];
        s.claimed.remove(&c);
        if let Some(parked) = s.parked.remove(&c) {
            s.ready.extend(parked);
        }
    }

    fn flops(&self, a: BlockKey, b: BlockKey) -> u64 {
        flops_of(&self.layout, self.a, a, b)
    }

    fn duration_ns(&self, flops: f64, slots: usize) -> u64 {
        ((flops / (self.cfg.compute.flops_per_us * slots as f64)) * 1e3).round().max(1.0) as u64
    }

    fn input(&self, rank: usize, key: BlockKey, t: TaskId) -> Result<Arc<DenseBlock>> {
        self.nodes[rank]
            .block(key)
            .cloned()
            .ok_or_else(|| Error::SchedulerBug(format!("task {} started without {key:?}", t.0)))
    }

    fn take_c(&mut self, rank: usize, c: CKey) -> Result<DenseBlock> {
        self.sched[rank]
            .c_blocks
            .get_mut(&c)
            .and_then(Option::take)
            .ok_or_else(|| Error::SchedulerBug(format!("{c:?} not available")))
    }

    /// Starts every compute task that can get a slot now, then runs their
    /// kernels as one parallel batch.
    fn start_compute(&mut self) -> Result<()> {
        let workers = self.cfg.workers;
        let mut jobs = Vec::new();
        for rank in 0..self.sched.len() {
            let candidates: Vec<(usize, TaskId)> = self.sched[rank].ready.iter().copied().collect();
            for (it, t) in candidates {
                if self.sched[rank].busy_slots >= workers {
                    break;
                }
                let task = self.graph.task(t);
                let (work, flops, slots) = match &task.payload {
                    Payload::Multiply { product } => {
                        let a = self.input(rank, product.a, t)?;
                        let b = self.input(rank, product.b, t)?;
                        let flops = self.flops(product.a, product.b);
                        let s = &mut self.sched[rank];
                        if !s.claimed.contains(&product.c) {
                            s.claimed.insert(product.c);
                            self.state[t.index()].fused = true;
                            let block = self.take_c(rank, product.c)?;
                            (Work::InPlace { c: product.c, block, a, b }, flops as f64, 1)
                        } else if s.live_temps < workers {
                            s.live_temps += 1;
                            let (r, c) = self.layout.c_shape(product.c);
                            let out = DenseBlock::zeros(r.len(), c.len());
                            let counters = &mut self.nodes[rank].counters;
                            counters.alloc(out.bytes());
                            counters.temporaries += 1;
                            (Work::Temp { task: t, out, a, b }, flops as f64, 1)
                        } else {
                            continue;
                        }
                    }
                    Payload::Reduce { c, source } => {
                        let s = &mut self.sched[rank];
                        if s.claimed.contains(c) {
                            s.ready.remove(&(it, t));
                            s.parked.entry(*c).or_default().push((it, t));
                            continue;
                        }
                        s.claimed.insert(*c);
                        let temp = s
                            .temps
                            .remove(source)
                            .ok_or_else(|| Error::SchedulerBug(format!("reduce {} has no temporary", t.0)))?;
                        let block = self.take_c(rank, *c)?;
                        let elems = temp.len() as f64;
                        (Work::Reduce { c: *c, block, temp }, elems, 1)
                    }
                    Payload::RankUpdate { products } => {
                        if self.sched[rank].busy_slots > 0 {
                            break;
                        }
                        let mut items = Vec::with_capacity(products.len());
                        let mut flops = 0u64;
                        for p in products {
                            let a = self.input(rank, p.a, t)?;
                            let b = self.input(rank, p.b, t)?;
                            flops += self.flops(p.a, p.b);
                            self.sched[rank].claimed.insert(p.c);
                            items.push((p.c, self.take_c(rank, p.c)?, a, b));
                        }
                        (Work::Update { items }, flops as f64, workers)
                    }
                    _ => return Err(Error::SchedulerBug(format!("task {} is not compute", t.0))),
                };
                let s = &mut self.sched[rank];
                s.ready.remove(&(it, t));
                s.busy_slots += slots;
                let st = &mut self.state[t.index()];
                st.status = Status::Active;
                st.start_ns = self.now;
                let end = self.now + self.duration_ns(flops, slots);
                self.push_event(end, Event::Complete(t));
                jobs.push(Job { node: rank, work });
            }
        }
        if jobs.is_empty() {
            return Ok(());
        }
        let results: Vec<Result<()>> = match &self.pool {
            Some(pool) if jobs.len() > 1 => pool.install(|| jobs.par_iter_mut().map(Job::execute).collect()),
            _ => jobs.iter_mut().map(Job::execute).collect(),
        };
        results.into_iter().collect::<Result<()>>()?;
        for job in jobs {
            let s = &mut self.sched[job.node];
            match job.work {
                Work::InPlace { c, block, .. } | Work::Reduce { c, block, .. } => {
                    s.c_blocks.insert(c, Some(block));
                }
                Work::Temp { task, out, .. } => {
                    s.temps.insert(task, out);
                }
                Work::Update { items } => {
                    for (c, block, ..) in items {
                        s.c_blocks.insert(c, Some(block));
                    }
                }
            }
        }
        Ok(())
    }
}

fn flops_of(layout: &Layout, a_mat: &BlockMatrix, a: BlockKey, b: BlockKey) -> u64 {
    let (rows, cols) = layout.c_shape(CKey { i: a.row, j: b.col, x: a.part, y: b.part });
    let inner = a_mat.col_tiling().extent(a.col);
    2 * (rows.len() * inner * cols.len()) as u64
}
