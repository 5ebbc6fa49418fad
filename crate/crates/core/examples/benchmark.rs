//! Runs a small benchmark suite from code and writes the CSV/JSON report.

use std::path::PathBuf;

use trajsqp::bench::{emit_report, run_benchmark, BenchmarkConfig};

fn main() {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("trajsqp-bench"), PathBuf::from);
    let mut cfg = BenchmarkConfig::new("pendulum", "pendulum_swingup", 20, 0);
    cfg.threads = Some(4);
    let result = run_benchmark(&cfg).expect("suite runs");
    let s = &result.summary;
    println!(
        "{}: {}/{} solved, {:.3} ms per linear solve",
        s.suite, s.solved, s.instances, s.mean_per_qp_ms
    );
    if let Some(q) = &s.iterations {
        println!("iterations min {} median {} max {}", q.min, q.median, q.max);
    }
    let (csv, json) = emit_report(&result, &out).expect("report written");
    println!("wrote {} and {}", csv.display(), json.display());
}
