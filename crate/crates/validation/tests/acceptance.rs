use hybrid_validation::*;

/// Benchmark epochs per kind; override with `A4_EPOCHS`.
const EPOCHS: usize = 60;

fn report(v: Verdict, all: &mut Vec<Verdict>) {
    println!("{}", v.line());
    all.push(v);
}

fn main() {
    let epochs = std::env::var("A4_EPOCHS").ok().and_then(|s| s.parse().ok()).unwrap_or(EPOCHS);
    let mut all = Vec::new();
    report(gradient_triangle(), &mut all);
    report(solver_order(), &mut all);
    report(spline_suite(), &mut all);
    let bench = run_benchmark(epochs);
    report(benchmark_ordering(&bench, epochs), &mut all);
    report(export_roundtrip(&bench), &mut all);
    report(determinism(), &mut all);
    report(degenerate_equivalence(), &mut all);

    let failed: Vec<&str> = all.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", all.len());
    } else {
        println!("acceptance: {} of {} failed ({})", failed.len(), all.len(), failed.join(", "));
        std::process::exit(1);
    }
}
