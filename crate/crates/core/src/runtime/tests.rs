use super::*;
use crate::block::gemm_block;
use crate::dag::{EdgeKind, TaskKind};
use crate::matrix::random_block_matrix;
use crate::metrics::{check_timeline_window, idle_gaps};
use crate::oracle::{compare, magnitude_product, oracle_multiply};
use crate::tiling::{make_nonuniform_tiling, make_uniform_tiling, Tiling};

fn grid(r: usize, c: usize) -> ProcessGrid {
    ProcessGrid::new(r, c).unwrap()
}

fn operands(rows: &Tiling, inner: &Tiling, cols: &Tiling, g: &ProcessGrid, seed: u64) -> (BlockMatrix, BlockMatrix) {
    (
        random_block_matrix(rows, inner, g, seed),
        random_block_matrix(inner, cols, g, seed + 1),
    )
}

fn det() -> RunConfig {
    RunConfig {
        deterministic: true,
        ..RunConfig::default()
    }
}

#[test]
fn single_block_matches_kernel() {
    let t = make_uniform_tiling(5, 5).unwrap();
    let g = grid(1, 1);
    let (a, b) = operands(&t, &t, &t, &g, 3);
    let (c, m) = run(&a, &b, &g, &RunConfig::default()).unwrap();
    let want = gemm_block(1.0, a.block(0, 0), b.block(0, 0), DenseBlock::zeros(5, 5)).unwrap();
    assert_eq!(c.block(0, 0), &want);
    assert_eq!(m.total_flops(), 250);
}

#[test]
fn deterministic_is_bitwise_oracle() {
    let t = make_uniform_tiling(256, 64).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&t, &t, &t, &g, 11);
    let want = oracle_multiply(&a, &b).unwrap();
    for threads in [1, 3] {
        let cfg = RunConfig { threads, ..det() };
        let (c, _) = run(&a, &b, &g, &cfg).unwrap();
        assert!(compare(&c.to_dense(), &want, None).unwrap().bitwise_equal);
    }
}

#[test]
fn free_mode_within_tolerance() {
    let t = make_uniform_tiling(256, 64).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&t, &t, &t, &g, 12);
    let want = oracle_multiply(&a, &b).unwrap();
    let scale = magnitude_product(&a, &b).unwrap();
    let cfg = RunConfig {
        workers: 8,
        issue_limit: Some(4),
        ..RunConfig::default()
    };
    let (c, m) = run(&a, &b, &g, &cfg).unwrap();
    let cmp = compare(&c.to_dense(), &want, Some(&scale)).unwrap();
    assert!(cmp.within(1e-12 * 4.0), "{cmp:?}");
    assert!(m.total(|c| c.temporaries) > 0, "wide window should contend");
}

#[test]
fn baseline_matches_oracle() {
    let rows = make_nonuniform_tiling(90, 5, 1).unwrap();
    let inner = make_nonuniform_tiling(70, 4, 2).unwrap();
    let cols = make_nonuniform_tiling(50, 3, 3).unwrap();
    let g = grid(2, 3);
    let (a, b) = operands(&rows, &inner, &cols, &g, 5);
    let cfg = RunConfig {
        mode: Mode::Baseline,
        ..RunConfig::default()
    };
    let (c, m) = run(&a, &b, &g, &cfg).unwrap();
    let want = oracle_multiply(&a, &b).unwrap();
    assert!(compare(&c.to_dense(), &want, None).unwrap().bitwise_equal);
    assert_eq!(m.total_flops(), 2 * 90 * 70 * 50);
    check_timeline_window(&m.timeline, m.issue_limit).unwrap();
}

#[test]
fn uncontended_multiply_fuses() {
    let t = make_uniform_tiling(8, 8).unwrap();
    let g = grid(1, 1);
    let (a, b) = operands(&t, &t, &t, &g, 1);
    let (_, m) = run(&a, &b, &g, &RunConfig::default()).unwrap();
    let n = m.node(NodeCoord::new(0, 0)).unwrap();
    assert_eq!(n.temporaries, 0);
    assert_eq!(n.reduces_elided, 1);
}

#[test]
fn concurrent_multiplies_take_one_temporary() {
    // two iterations in flight, both multiplies target the same block
    let m_t = make_uniform_tiling(8, 8).unwrap();
    let k_t = make_uniform_tiling(8, 4).unwrap();
    let g = grid(1, 1);
    let (a, b) = operands(&m_t, &k_t, &m_t, &g, 2);
    let cfg = RunConfig {
        issue_limit: Some(2),
        ..RunConfig::default()
    };
    let (c, m) = run(&a, &b, &g, &cfg).unwrap();
    let n = m.node(NodeCoord::new(0, 0)).unwrap();
    assert_eq!(n.temporaries, 1);
    assert_eq!(n.reduces_elided, 1);
    assert_eq!(n.executed(TaskKind::Reduce), 2);
    let want = oracle_multiply(&a, &b).unwrap();
    let scale = magnitude_product(&a, &b).unwrap();
    assert!(compare(&c.to_dense(), &want, Some(&scale)).unwrap().within(2e-12));
}

#[test]
fn root_of_four_sends_two_messages() {
    let one = make_uniform_tiling(4, 4).unwrap();
    let four = make_uniform_tiling(16, 4).unwrap();
    let g = grid(1, 4);
    // A is a single block broadcast along the grid row from (0,0)
    let (a, b) = operands(&one, &one, &four, &g, 9);
    let (_, m) = run(&a, &b, &g, &RunConfig::default()).unwrap();
    let sent = |c| m.node(NodeCoord::new(0, c)).unwrap().messages_sent;
    assert_eq!((sent(0), sent(1), sent(2), sent(3)), (2, 1, 0, 0));
    let received: u64 = m.total(|c| c.bytes_received);
    assert_eq!(received, 3 * 4 * 4 * 8);
    assert_eq!(m.total_bytes_sent(), received);
}

#[test]
fn fixed_latency_delays_arrival() {
    let t = make_uniform_tiling(32, 8).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&t, &t, &t, &g, 4);
    let cfg = RunConfig {
        latency: LatencyModel::Fixed { us: 10.0 },
        ..RunConfig::default()
    };
    let graph = build_graph(&a, &b, &g, &cfg).unwrap();
    let (_, m) = run_graph(&graph, &a, &b, &cfg).unwrap();
    let start: std::collections::HashMap<u32, f64> = m.timeline.iter().map(|e| (e.task_id, e.start_us)).collect();
    let end: std::collections::HashMap<u32, f64> = m.timeline.iter().map(|e| (e.task_id, e.end_us)).collect();
    let mut checked = 0;
    for e in graph.edges() {
        let dst = graph.task(e.dst);
        if e.kind == EdgeKind::Data && dst.kind == TaskKind::BcastRecv {
            assert!(end[&e.dst.0] >= start[&e.src.0] + 10.0 - 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 0);
}

#[test]
fn runtime_invariants_hold() {
    let rows = make_nonuniform_tiling(120, 8, 7).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&rows, &rows, &rows, &g, 8);
    for issue_limit in [1, 2, 4] {
        let cfg = RunConfig {
            issue_limit: Some(issue_limit),
            ..RunConfig::default()
        };
        let (c, m) = run(&a, &b, &g, &cfg).unwrap();
        assert_eq!(m.total_flops(), 2 * 120 * 120 * 120);
        check_timeline_window(&m.timeline, issue_limit).unwrap();
        assert_eq!(idle_gaps(&m.timeline), vec![]);
        for n in &m.per_node {
            let bound = memory_bound_bytes(&a, &b, n.coords, issue_limit, &cfg);
            assert!(n.counters.high_water_bytes <= bound, "{} > {bound}", n.counters.high_water_bytes);
        }
        let want = oracle_multiply(&a, &b).unwrap();
        let scale = magnitude_product(&a, &b).unwrap();
        assert!(compare(&c.to_dense(), &want, Some(&scale)).unwrap().within(8e-12));
    }
}

#[test]
fn split_blocks_still_multiply() {
    let t = make_nonuniform_tiling(60, 4, 3).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&t, &t, &t, &g, 21);
    let cfg = RunConfig { split: 3, ..det() };
    let (c, m) = run(&a, &b, &g, &cfg).unwrap();
    assert!(compare(&c.to_dense(), &oracle_multiply(&a, &b).unwrap(), None)
        .unwrap()
        .bitwise_equal);
    assert_eq!(m.total_flops(), 2 * 60 * 60 * 60);
}

#[test]
fn cyclic_graph_rejected() {
    let t = make_uniform_tiling(8, 4).unwrap();
    let g = grid(1, 1);
    let (a, b) = operands(&t, &t, &t, &g, 1);
    let cfg = RunConfig::default();
    let mut graph = build_graph(&a, &b, &g, &cfg).unwrap();
    let last = crate::dag::TaskId(graph.len() as u32 - 1);
    graph.add_edge(last, crate::dag::TaskId(0), EdgeKind::Sequence).unwrap();
    assert!(matches!(run_graph(&graph, &a, &b, &cfg), Err(Error::GraphInvalid { .. })));
}

#[test]
fn bad_inputs_rejected() {
    let t3 = make_uniform_tiling(6, 3).unwrap();
    let t2 = make_uniform_tiling(6, 2).unwrap();
    let g = grid(1, 1);
    let a = random_block_matrix(&t3, &t3, &g, 1);
    let b = random_block_matrix(&t2, &t2, &g, 1);
    assert!(matches!(run(&a, &b, &g, &RunConfig::default()), Err(Error::InvalidArgument(_))));
    let cfg = RunConfig {
        workers: 0,
        ..RunConfig::default()
    };
    assert!(matches!(run(&a, &a, &g, &cfg), Err(Error::InvalidArgument(_))));
    assert!(matches!(run(&a, &a, &grid(2, 1), &RunConfig::default()), Err(Error::InvalidArgument(_))));
}

#[test]
fn injected_fault_changes_result() {
    let t = make_uniform_tiling(8, 4).unwrap();
    let g = grid(1, 1);
    let (a, b) = operands(&t, &t, &t, &g, 1);
    let cfg = RunConfig {
        inject_fault: true,
        ..det()
    };
    let (c, _) = run(&a, &b, &g, &cfg).unwrap();
    assert!(!compare(&c.to_dense(), &oracle_multiply(&a, &b).unwrap(), None)
        .unwrap()
        .bitwise_equal);
}

#[test]
fn concurrent_runs_do_not_interfere() {
    let t = make_uniform_tiling(48, 8).unwrap();
    let g = grid(2, 2);
    let (a, b) = operands(&t, &t, &t, &g, 31);
    let cfg = RunConfig { threads: 2, ..det() };
    let results: Vec<BlockMatrix> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..3).map(|_| s.spawn(|| run(&a, &b, &g, &cfg).unwrap().0)).collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(results.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn latency_parsing() {
    assert_eq!("zero".parse::<LatencyModel>().unwrap(), LatencyModel::Zero);
    assert_eq!("fixed:100".parse::<LatencyModel>().unwrap(), LatencyModel::Fixed { us: 100.0 });
    let pb: LatencyModel = "perbyte:5:0.001".parse().unwrap();
    assert_eq!(pb.delay_us(1000), 6.0);
    assert_eq!(pb.to_string().parse::<LatencyModel>().unwrap(), pb);
    for bad in ["", "fixed", "fixed:-1", "perbyte:1", "slow", "fixed:abc"] {
        assert!(bad.parse::<LatencyModel>().is_err(), "{bad}");
    }
}
