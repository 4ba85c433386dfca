use std::time::Instant;

use hybrid_core::models::ModelKind;
use hybrid_core::train::{run_gradcheck, GradCheckConfig};

#[test]
fn default_suite_passes_quickly_with_fourth_order_shrink() {
    let start = Instant::now();
    let r = run_gradcheck(&GradCheckConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    assert!(r.passed, "{:#?}", r.failures);
    assert!(secs < 60.0, "{secs:.1} s");
    assert_eq!(r.cases.len(), 20);
    for k in ModelKind::ALL {
        assert_eq!(r.cases.iter().filter(|c| c.kind == k).count(), 5);
    }
    assert!(r.min_ratio.unwrap() >= 8.0);
    let table: Vec<f64> = r.substep_table.iter().map(|row| row.worst_adjoint_rel).collect();
    assert!(table.windows(2).all(|w| w[1] < w[0]), "{table:?}");
}

#[test]
fn seeds_change_the_models() {
    let a = run_gradcheck(&GradCheckConfig { models: 2, seed: 1, ..Default::default() }).unwrap();
    let b = run_gradcheck(&GradCheckConfig { models: 2, seed: 2, ..Default::default() }).unwrap();
    assert_ne!(a.cases[0].adjoint_rel, b.cases[0].adjoint_rel);
}
