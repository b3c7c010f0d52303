use std::collections::BTreeMap;
use std::error::Error;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde_json::json;
use tasksumma::oracle::magnitude_product;
use tasksumma::{
    compare, load_ratios, oracle_multiply, summarize, LoadRatios, ProblemDescriptor, RunMetrics,
};

use crate::spec::{ExperimentSpec, GridSpec, Problem};
use crate::svg;

pub type Outcome = Result<(), Box<dyn Error>>;

pub struct Options {
    pub threads: usize,
    pub out_dir: PathBuf,
    pub timeline: bool,
    pub inject_fault: bool,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    let f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(f, value)?;
    Ok(())
}

struct Series {
    metrics: Vec<RunMetrics>,
    wall_us: Vec<f64>,
}

fn repeat_runs(spec: &ExperimentSpec, problem: &Problem, opts: &Options, mut each: impl FnMut(usize) -> Outcome) -> Result<Series, Box<dyn Error>> {
    let mut cfg = spec.run_config(opts.threads);
    cfg.inject_fault = opts.inject_fault;
    let mut series = Series {
        metrics: Vec::new(),
        wall_us: Vec::new(),
    };
    for r in 0..spec.repeats {
        each(r)?;
        let (_, m) = tasksumma::run(&problem.a, &problem.b, &problem.grid, &cfg)?;
        series.wall_us.push(m.makespan_wall_us);
        series.metrics.push(m);
    }
    Ok(series)
}

fn descriptor(spec: &ExperimentSpec, problem: &Problem, load: &LoadRatios, reference: Option<f64>) -> ProblemDescriptor {
    ProblemDescriptor {
        rows: spec.size,
        inner: spec.size,
        cols: spec.size,
        grid: problem.grid,
        single_node_rate: reference,
        load: Some(load.clone()),
    }
}

pub fn run(spec: &ExperimentSpec, opts: &Options) -> Outcome {
    let problem = spec.problem()?;
    fs::create_dir_all(&opts.out_dir)?;
    let load = load_ratios(&problem.a, &problem.b, &problem.grid)?;
    if load.empty_nodes > 0 {
        eprintln!(
            "warning: {} of {} nodes own no result block (load ratio {})",
            load.empty_nodes,
            problem.grid.node_count(),
            load.memory
        );
    }

    let mut runs = csv::Writer::from_path(opts.out_dir.join("runs.csv"))?;
    runs.write_record([
        "repeat",
        "wall_us",
        "virtual_us",
        "flop_rate",
        "total_flops",
        "max_high_water_bytes",
        "bytes_sent",
    ])?;
    let series = repeat_runs(spec, &problem, opts, |r| {
        // the tiling is a pure function of the experiment file; record what each repeat used
        let (rows, inner, cols) = spec.tilings()?;
        let tiling = json!({ "rows": rows, "inner": inner, "cols": cols });
        write_json(&opts.out_dir.join(format!("tiling_r{r}.json")), &tiling)
    })?;
    for (r, m) in series.metrics.iter().enumerate() {
        runs.write_record([
            r.to_string(),
            format!("{:.3}", m.makespan_wall_us),
            format!("{:.3}", m.makespan_virtual_us),
            format!("{:.6e}", m.flop_rate),
            m.total_flops().to_string(),
            m.max_high_water().to_string(),
            m.total_bytes_sent().to_string(),
        ])?;
    }
    runs.flush()?;

    let last = series.metrics.last().expect("at least one repeat");
    let report = summarize(last, &descriptor(spec, &problem, &load, None))?;
    report.write_node_csv(BufWriter::new(File::create(opts.out_dir.join("nodes.csv"))?))?;
    let (mean, std) = mean_std(&series.wall_us);
    let mut summary = report.summary_json();
    let obj = summary.as_object_mut().expect("object");
    obj.insert("spec".into(), serde_json::to_value(spec)?);
    obj.insert("wall_mean_us".into(), json!(mean));
    obj.insert("wall_std_us".into(), json!(std));
    write_json(&opts.out_dir.join("summary.json"), &summary)?;
    if opts.timeline {
        last.write_timeline(BufWriter::new(File::create(opts.out_dir.join("timeline.jsonl"))?))?;
    }

    println!(
        "{}^2 {} blocks on {} ({:?} mode): wall {:.3} ms mean, {:.3} ms std over {} repeats; {:.3} GFLOP/s; load memory {} work {}",
        spec.size,
        spec.blocking.label(),
        spec.grid,
        spec.mode,
        mean / 1e3,
        std / 1e3,
        spec.repeats,
        report.flop_rate / 1e9,
        load.memory,
        load.work
    );
    Ok(())
}

pub fn verify(spec: &ExperimentSpec, opts: &Options) -> Outcome {
    let problem = spec.problem()?;
    let mut cfg = spec.run_config(opts.threads);
    cfg.inject_fault = opts.inject_fault;
    let (c, _) = tasksumma::run(&problem.a, &problem.b, &problem.grid, &cfg)?;
    let got = c.to_dense();
    let (want, against) = if spec.identity {
        (problem.b.to_dense(), "B")
    } else {
        (oracle_multiply(&problem.a, &problem.b)?, "oracle")
    };
    let exact = spec.identity || spec.deterministic;
    let tolerance = if exact { 0.0 } else { 1e-12 * problem.inner.block_count() as f64 };
    let cmp = if exact {
        compare(&got, &want, None)?
    } else {
        compare(&got, &want, Some(&magnitude_product(&problem.a, &problem.b)?))?
    };
    let passed = if exact { cmp.bitwise_equal } else { cmp.within(tolerance) };

    fs::create_dir_all(&opts.out_dir)?;
    write_json(
        &opts.out_dir.join("verify.json"),
        &json!({
            "passed": passed,
            "against": against,
            "bitwise": exact,
            "max_rel_err": cmp.max_rel_err,
            "tolerance": tolerance,
            "worst": cmp.worst,
        }),
    )?;
    println!(
        "max relative error vs {against}: {:.3e} ({})",
        cmp.max_rel_err,
        if exact { "bitwise match required".to_string() } else { format!("tolerance {tolerance:.1e}") }
    );
    if passed {
        println!("OK");
        Ok(())
    } else {
        let detail = match cmp.worst {
            Some((i, j, g, w)) => format!("mismatch at ({i},{j}): got {g:e}, want {w:e}"),
            None => "mismatch".to_string(),
        };
        Err(detail.into())
    }
}

struct BenchRow {
    spec: ExperimentSpec,
    nodes: usize,
    wall_mean_us: f64,
    wall_std_us: f64,
    virtual_us: f64,
    flop_rate: f64,
    efficiency: Option<f64>,
    load: LoadRatios,
}

fn bench_one(spec: &ExperimentSpec, opts: &Options) -> Result<BenchRow, Box<dyn Error>> {
    let problem = spec.problem()?;
    let load = load_ratios(&problem.a, &problem.b, &problem.grid)?;
    let series = repeat_runs(spec, &problem, opts, |_| Ok(()))?;
    let (mean, std) = mean_std(&series.wall_us);
    let flops = series.metrics[0].total_flops();
    Ok(BenchRow {
        spec: spec.clone(),
        nodes: problem.grid.node_count(),
        wall_mean_us: mean,
        wall_std_us: std,
        virtual_us: series.metrics[0].makespan_virtual_us,
        flop_rate: flops as f64 / (mean * 1e-6),
        efficiency: None,
        load,
    })
}

fn write_bench_csv(path: &Path, rows: &[BenchRow]) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "size",
        "blocking",
        "grid",
        "nodes",
        "mode",
        "repeats",
        "wall_mean_us",
        "wall_std_us",
        "virtual_us",
        "flop_rate",
        "efficiency",
        "mem_ratio",
        "work_ratio",
        "empty_nodes",
    ])?;
    for r in rows {
        w.write_record([
            r.spec.size.to_string(),
            r.spec.blocking.label().to_string(),
            r.spec.grid.to_string(),
            r.nodes.to_string(),
            format!("{:?}", r.spec.mode).to_lowercase(),
            r.spec.repeats.to_string(),
            format!("{:.3}", r.wall_mean_us),
            format!("{:.3}", r.wall_std_us),
            format!("{:.3}", r.virtual_us),
            format!("{:.6e}", r.flop_rate),
            r.efficiency.map(|e| format!("{e:.4}")).unwrap_or_default(),
            format!("{}", r.load.memory.0),
            format!("{}", r.load.work.0),
            r.load.empty_nodes.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn group_key(spec: &ExperimentSpec) -> String {
    format!("{}/{}/{:?}", spec.size, spec.blocking.label(), spec.mode)
}

pub fn bench(series: &[ExperimentSpec], opts: &Options, paired: bool, plots: bool) -> Outcome {
    fs::create_dir_all(&opts.out_dir)?;
    let csv_path = opts.out_dir.join("bench.csv");
    let mut rows = Vec::with_capacity(series.len());
    for spec in series {
        match bench_one(spec, opts) {
            Ok(row) => {
                println!(
                    "{} {:>5} {:>10}: {:.3} GFLOP/s, wall {:.3} ms",
                    spec.grid,
                    spec.size,
                    spec.blocking.label(),
                    row.flop_rate / 1e9,
                    row.wall_mean_us / 1e3
                );
                rows.push(row);
            }
            Err(e) => {
                write_bench_csv(&csv_path, &rows)?;
                return Err(e);
            }
        }
    }

    // 100% efficiency is the best single-node rate of the same problem
    let mut reference: BTreeMap<String, f64> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.nodes == 1) {
        let e = reference.entry(group_key(&r.spec)).or_insert(0.0);
        *e = e.max(r.flop_rate);
    }
    for r in &rows {
        let key = group_key(&r.spec);
        if !reference.contains_key(&key) {
            let single = ExperimentSpec {
                grid: GridSpec { rows: 1, cols: 1 },
                ..r.spec.clone()
            };
            let rate = bench_one(&single, opts)?.flop_rate;
            reference.insert(key, rate);
        }
    }
    for r in &mut rows {
        r.efficiency = Some(r.flop_rate / (r.nodes as f64 * reference[&group_key(&r.spec)]));
    }
    write_bench_csv(&csv_path, &rows)?;

    if paired {
        write_paired_csv(&opts.out_dir.join("paired.csv"), &rows)?;
    }
    if plots {
        let mut rate: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        let mut eff: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
        for r in &rows {
            let label = format!("{} {}", r.spec.size, r.spec.blocking.label());
            rate.entry(label.clone()).or_default().push((r.nodes as f64, r.flop_rate / 1e9));
            eff.entry(label).or_default().push((r.nodes as f64, r.efficiency.unwrap_or(0.0)));
        }
        let to_vec = |m: BTreeMap<String, Vec<(f64, f64)>>| m.into_iter().collect::<Vec<_>>();
        fs::write(
            opts.out_dir.join("rate_vs_nodes.svg"),
            svg::line_plot("FLOP rate", "nodes", "GFLOP/s", &to_vec(rate)),
        )?;
        fs::write(
            opts.out_dir.join("efficiency_vs_nodes.svg"),
            svg::line_plot("Parallel efficiency", "nodes", "efficiency", &to_vec(eff)),
        )?;
    }
    Ok(())
}

fn write_paired_csv(path: &Path, rows: &[BenchRow]) -> Outcome {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "size",
        "grid",
        "nodes",
        "uniform_rate",
        "nonuniform_rate",
        "uniform_efficiency",
        "nonuniform_efficiency",
        "uniform_wall_us",
        "nonuniform_wall_us",
    ])?;
    let find = |spec: &ExperimentSpec, label: &str| {
        rows.iter()
            .find(|r| r.spec.grid == spec.grid && r.spec.size == spec.size && r.spec.blocking.label() == label)
    };
    for u in rows.iter().filter(|r| r.spec.blocking.label() == "uniform") {
        let Some(n) = find(&u.spec, "nonuniform") else { continue };
        let eff = |r: &BenchRow| r.efficiency.map(|e| format!("{e:.4}")).unwrap_or_default();
        w.write_record([
            u.spec.size.to_string(),
            u.spec.grid.to_string(),
            u.nodes.to_string(),
            format!("{:.6e}", u.flop_rate),
            format!("{:.6e}", n.flop_rate),
            eff(u),
            eff(n),
            format!("{:.3}", u.wall_mean_us),
            format!("{:.3}", n.wall_mean_us),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::mean_std;

    #[test]
    fn sample_statistics() {
        assert_eq!(mean_std(&[3.0]), (3.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((s - 1.2909944487358056).abs() < 1e-12);
    }
}
