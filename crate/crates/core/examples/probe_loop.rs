use bimpc::sim::{bundled_scenario, run_closed_loop};

fn main() {
    let name = std::env::args().nth(1).unwrap_or("grasp_force_ramp".into());
    let mut cfg = bundled_scenario(&name).unwrap();
    cfg.time_limit = std::env::args()
        .nth(2)
        .map(|s| s.parse().unwrap())
        .unwrap_or(0.4);
    if let Ok(v) = std::env::var("TOL_KKT") {
        cfg.solver.tol_kkt = v.parse().unwrap();
    }
    if let Ok(v) = std::env::var("MAX_INNER") {
        cfg.solver.max_inner = v.parse().unwrap();
    }
    if std::env::var("NO_ADMITTANCE").is_ok() {
        cfg.wholebody.admittance = false;
    }
    let t = std::time::Instant::now();
    let trace = run_closed_loop(&cfg).unwrap();
    let wall = t.elapsed().as_secs_f64();
    println!("outcome {:?} loops {} wall {:.2}s", trace.outcome, trace.records.len(), wall);
    for r in trace.records.iter().take(20) {
        println!(
            "loop {:3} t={:5.2} task {:7.1}ms conv={} it={:4} | track {:7.1}ms conv={} it={:4} held={} recheck={:.2e}",
            r.index, r.time, r.task_solve_ms, r.task_converged as u8, r.task_inner_iterations,
            r.tracking_solve_ms, r.tracking_converged as u8, r.tracking_inner_iterations,
            r.commands_held as u8, r.recheck_tracking.unwrap_or(f64::NAN)
        );
    }
}
