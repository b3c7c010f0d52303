//! Structural checks over task graphs, used by tests and the acceptance suite.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::Rng;

use super::{EdgeKind, Mode, Payload, TaskGraph, TaskId, TaskKind};
use crate::grid::NodeCoord;

/// A uniformly chosen ready task at every step of Kahn's algorithm.
pub fn random_topological_order<R: Rng>(g: &TaskGraph, rng: &mut R) -> Option<Vec<TaskId>> {
    let mut indeg: Vec<usize> = g
        .tasks()
        .iter()
        .map(|t| g.predecessors(t.id).count())
        .collect();
    let mut ready: Vec<TaskId> = g.tasks().iter().filter(|t| indeg[t.id.index()] == 0).map(|t| t.id).collect();
    let mut order = Vec::with_capacity(g.len());
    while !ready.is_empty() {
        let t = ready.swap_remove(rng.gen_range(0..ready.len()));
        order.push(t);
        for e in g.successors(t) {
            indeg[e.dst.index()] -= 1;
            if indeg[e.dst.index()] == 0 {
                ready.push(e.dst);
            }
        }
    }
    (order.len() == g.len()).then_some(order)
}

/// Executes `order` one task at a time and checks that whenever a task of
/// iteration `k` runs on a node, every task of that node with iteration at
/// most `k - issue_limit` has already run. Equivalently, no node ever has more
/// than `issue_limit` iterations started but not retired.
pub fn check_issue_window(g: &TaskGraph, order: &[TaskId]) -> Result<(), String> {
    let limit = g.issue_limit();
    let mut remaining: HashMap<(NodeCoord, usize), usize> = HashMap::new();
    for t in g.tasks() {
        *remaining.entry((t.node, t.iteration)).or_default() += 1;
    }
    // lowest iteration with unfinished tasks, per node
    let mut low: HashMap<NodeCoord, usize> = HashMap::new();
    for t in order.iter().map(|&id| g.task(id)) {
        let lo = low.entry(t.node).or_insert(0);
        while *lo < g.iterations() && remaining.get(&(t.node, *lo)).copied().unwrap_or(0) == 0 {
            *lo += 1;
        }
        if t.iteration >= *lo + limit {
            return Err(format!(
                "{} (iteration {}) ran on {} while iteration {} was unfinished (limit {limit})",
                t.id, t.iteration, t.node, *lo
            ));
        }
        *remaining.get_mut(&(t.node, t.iteration)).unwrap() -= 1;
    }
    Ok(())
}

/// Every member of every broadcast group holds exactly one recv task per
/// block; a non-root recv is fed by exactly one send from its tree parent and
/// the root recv by none.
pub fn check_broadcast_coverage(g: &TaskGraph) -> Result<(), String> {
    let mut recvs: HashMap<(super::BlockKey, NodeCoord), usize> = HashMap::new();
    for t in g.tasks().iter().filter(|t| t.kind == TaskKind::BcastRecv) {
        let Payload::Broadcast { blocks, root, parent, .. } = &t.payload else {
            return Err(format!("{} has no broadcast payload", t.id));
        };
        for b in blocks {
            *recvs.entry((*b, t.node)).or_default() += 1;
        }
        let feeds: Vec<_> = g
            .predecessors(t.id)
            .filter(|e| e.kind == EdgeKind::Data)
            .map(|e| g.task(e.src))
            .collect();
        match parent {
            None => {
                if t.node != *root || !feeds.is_empty() {
                    return Err(format!("root recv {} is fed or misplaced", t.id));
                }
            }
            Some(p) => {
                if feeds.len() != 1 || feeds[0].kind != TaskKind::BcastSend || feeds[0].node != *p {
                    return Err(format!("recv {} on {} is not fed once by its parent {p}", t.id, t.node));
                }
                let Payload::Broadcast { blocks: sent, .. } = &feeds[0].payload else {
                    unreachable!()
                };
                if sent != blocks {
                    return Err(format!("recv {} fed with other blocks", t.id));
                }
            }
        }
    }
    // group membership: A row groups span a full grid row, B column groups a full grid column
    let grid = g.grid();
    let mut members: HashMap<super::BlockKey, HashSet<NodeCoord>> = HashMap::new();
    for (&(key, node), &count) in &recvs {
        if count != 1 {
            return Err(format!("{key} received {count} times on {node}"));
        }
        members.entry(key).or_default().insert(node);
    }
    for (key, nodes) in members {
        let want = match key.operand {
            super::Operand::A => grid.p_col(),
            super::Operand::B => grid.p_row(),
        };
        if nodes.len() != want {
            return Err(format!("{key} reached {} of {want} group members", nodes.len()));
        }
    }
    Ok(())
}

/// Task mode: every multiply has exactly two incoming data edges, one from
/// the local A recv and one from the local B recv.
pub fn check_multiply_inputs(g: &TaskGraph) -> Result<(), String> {
    for t in g.tasks().iter().filter(|t| t.kind == TaskKind::Multiply) {
        let Payload::Multiply { product } = &t.payload else {
            continue;
        };
        let feeds: Vec<_> = g
            .predecessors(t.id)
            .filter(|e| e.kind == EdgeKind::Data)
            .map(|e| g.task(e.src))
            .collect();
        if feeds.len() != 2 {
            return Err(format!("{} has {} data inputs", t.id, feeds.len()));
        }
        for want in [product.a, product.b] {
            let ok = feeds.iter().any(|f| {
                f.kind == TaskKind::BcastRecv
                    && f.node == t.node
                    && matches!(&f.payload, Payload::Broadcast { blocks, .. } if blocks == &[want])
            });
            if !ok {
                return Err(format!("{} is not fed by a local recv of {want}", t.id));
            }
        }
    }
    Ok(())
}

/// Task mode: with throttle gates removed, no path links multiply/reduce
/// tasks of different iterations unless both target the same C sub-block.
/// Quadratic; meant for small graphs.
pub fn check_iteration_independence(g: &TaskGraph) -> Result<(), String> {
    if g.mode() != Mode::Task {
        return Ok(());
    }
    let target = |id: TaskId| match &g.task(id).payload {
        Payload::Multiply { product } => Some(product.c),
        Payload::Reduce { c, .. } => Some(*c),
        _ => None,
    };
    for t in g.tasks().iter().filter(|t| t.kind.is_compute()) {
        let origin = target(t.id);
        let mut seen = HashSet::new();
        let mut queue = VecDeque::from([t.id]);
        while let Some(cur) = queue.pop_front() {
            for e in g.successors(cur) {
                let d = g.task(e.dst);
                if d.kind == TaskKind::ThrottleGate || !seen.insert(d.id) {
                    continue;
                }
                if d.kind.is_compute() && d.iteration != t.iteration && target(d.id) != origin {
                    return Err(format!(
                        "path {} (iteration {}) -> {} (iteration {}) crosses C targets",
                        t.id, t.iteration, d.id, d.iteration
                    ));
                }
                queue.push_back(d.id);
            }
        }
    }
    Ok(())
}
