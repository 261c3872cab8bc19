//! End-to-end closed-loop runs of the bundled scenarios.

use bimpc::sim::{bundled_scenario, run_closed_loop, RunOutcome};

#[test]
fn static_obstacle_grasp_reaches_the_goal_clear_of_the_sphere() {
    let cfg = bundled_scenario("static_obstacle_grasp").unwrap();
    let trace = run_closed_loop(&cfg).unwrap();
    let summary = trace.summary();
    assert_eq!(trace.outcome, RunOutcome::GoalReached, "{summary:?}");
    assert!(summary.goal_position_error.unwrap() <= cfg.goal_position_tolerance);
    assert!(summary.goal_rotation_error.unwrap() <= cfg.goal_rotation_tolerance);

    // The monitor measures clearance geometrically from the executed states;
    // it must never dip below the planners' safety margin (small slack for
    // the tracking error of the servo).
    let margin = cfg.wholebody.d_safe - 1e-4;
    assert!(
        summary.min_clearance_midpoint.unwrap() >= margin,
        "midpoint clearance {}",
        summary.min_clearance_midpoint.unwrap()
    );
    assert!(
        summary.min_clearance_base.unwrap() >= margin,
        "base clearance {}",
        summary.min_clearance_base.unwrap()
    );
}

#[test]
fn moving_obstacle_grasp_yields_before_the_sphere_arrives() {
    let cfg = bundled_scenario("moving_obstacle_grasp").unwrap();
    let trace = run_closed_loop(&cfg).unwrap();
    let summary = trace.summary();
    assert_eq!(trace.outcome, RunOutcome::GoalReached, "{summary:?}");
    let margin = cfg.wholebody.d_safe - 1e-4;
    assert!(
        summary.min_clearance_midpoint.unwrap() >= margin,
        "midpoint clearance {}",
        summary.min_clearance_midpoint.unwrap()
    );
}

#[test]
fn grasp_force_ramp_settles_near_the_commanded_force() {
    let cfg = bundled_scenario("grasp_force_ramp").unwrap();
    let trace = run_closed_loop(&cfg).unwrap();
    let summary = trace.summary();
    assert_eq!(trace.outcome, RunOutcome::TimeLimit, "{summary:?}");

    // After the ramp the measured normal force should sit well above the
    // kinematic-contact level and near the 10 N command on both palms.
    let last = trace.records.last().unwrap();
    for palm in 0..2 {
        let normal = last.wrench[3 * palm + 2];
        assert!(
            (normal - 10.0).abs() < 2.0,
            "palm {palm} settled at {normal} N"
        );
    }
}

#[test]
fn push_disturbance_is_absorbed_and_recovers() {
    let cfg = bundled_scenario("push_disturbance").unwrap();
    let trace = run_closed_loop(&cfg).unwrap();
    assert_eq!(trace.outcome, RunOutcome::TimeLimit);

    // The scripted push adds ~8 N on the right palm's normal channel during
    // [4, 5); the admittance layer must shed most of it by the final loop.
    let during: f64 = trace
        .records
        .iter()
        .filter(|r| r.time >= 4.0 && r.time < 5.0)
        .map(|r| r.wrench[2])
        .fold(0.0, f64::max);
    let last = trace.records.last().unwrap();
    assert!(during > 12.0, "peak during push {during}");
    assert!(
        (last.wrench[2] - 10.0).abs() < 2.0,
        "right palm settled at {} N",
        last.wrench[2]
    );
}

#[test]
fn traces_serialize_to_all_three_formats() {
    let cfg = bundled_scenario("sine_tracking").unwrap();
    let mut short = cfg.clone();
    short.time_limit = 0.1;
    let trace = run_closed_loop(&short).unwrap();

    let mut csv_bytes = Vec::new();
    trace.write_csv(&mut csv_bytes).unwrap();
    let text = String::from_utf8(csv_bytes).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("index,time,q0"));
    assert_eq!(lines.count(), trace.records.len());

    let mut jsonl = Vec::new();
    trace.write_plans_jsonl(&mut jsonl).unwrap();
    let text = String::from_utf8(jsonl).unwrap();
    assert_eq!(text.lines().count(), trace.records.len());
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["tracking"]["pipeline"], "bezier");
    }

    let mut json = Vec::new();
    trace.write_summary_json(&mut json).unwrap();
    let v: serde_json::Value = serde_json::from_slice(&json).unwrap();
    assert_eq!(v["scenario"], "sine_tracking");
    assert_eq!(v["outcome"], "time_limit");
}
