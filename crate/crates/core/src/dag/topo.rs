use std::collections::VecDeque;

use super::{TaskGraph, TaskId};
use crate::error::{Error, Result};

/// Kahn's algorithm. On a cycle, reports one edge lying on it.
pub fn topo_validate(g: &TaskGraph) -> Result<Vec<TaskId>> {
    let n = g.len();
    let mut indeg: Vec<usize> = (0..n).map(|t| g.predecessors(TaskId(t as u32)).count()).collect();
    let mut queue: VecDeque<TaskId> = (0..n)
        .filter(|&t| indeg[t] == 0)
        .map(|t| TaskId(t as u32))
        .collect();
    let mut order = Vec::with_capacity(n);
    while let Some(t) = queue.pop_front() {
        order.push(t);
        for e in g.successors(t) {
            indeg[e.dst.index()] -= 1;
            if indeg[e.dst.index()] == 0 {
                queue.push_back(e.dst);
            }
        }
    }
    if order.len() == n {
        return Ok(order);
    }
    Err(find_cycle_edge(g, &indeg))
}

// Every unvisited task has an unvisited predecessor, so walking predecessors
// from any of them must revisit a task; the edge into that task is on a cycle.
fn find_cycle_edge(g: &TaskGraph, indeg: &[usize]) -> Error {
    let start = indeg.iter().position(|&d| d > 0).expect("some task unvisited");
    let mut seen = vec![false; g.len()];
    let mut cur = TaskId(start as u32);
    loop {
        seen[cur.index()] = true;
        let e = g
            .predecessors(cur)
            .find(|e| indeg[e.src.index()] > 0)
            .expect("unvisited task has an unvisited predecessor");
        if seen[e.src.index()] {
            return Error::GraphInvalid {
                src: e.src.0,
                dst: e.dst.0,
            };
        }
        cur = e.src;
    }
}
