use hri_shield::barrier::Method;
use hri_shield::harness::{
    compute_metrics, emit_report, read_report, sweep, trace_metrics, violation_events, MetricsConfig, ReportFormat,
    SweepCell, SweepGrid,
};
use hri_shield::sim::{run_scenario, ForecasterKind, ScenarioConfig, TraceRecord};

fn record(t: f64, h: f64) -> TraceRecord {
    TraceRecord {
        t,
        q: [0.0; 6],
        u_nom: [0.0; 6],
        u_safe: [0.0; 6],
        hand: [0.0; 3],
        hand_measured: [0.0; 3],
        tcp: [t, 0.0, 0.0],
        d: 0.1 - h,
        h,
        h_pred_min: h,
        h_pred_max: h,
        sigma_bar: vec![0.0],
        delta_r: 0.0,
        delta_p: 0.0,
        lambda_p: 100.0,
        qp_iterations: 0,
        degraded: false,
        stale_forecast: false,
        method: Method::Cbf,
        gamma: 0.0,
    }
}

fn trace(hs: &[f64]) -> Vec<TraceRecord> {
    hs.iter().enumerate().map(|(i, &h)| record(i as f64 / 30.0, h)).collect()
}

#[test]
fn splitting_between_events_preserves_counts() {
    let hs = [-0.05, 0.02, 0.03, -0.01, -0.02, 0.015, 0.011, -0.03, -0.04, 0.05, -0.01];
    let whole = trace(&hs);
    let total = violation_events(&whole, 0.01).len();
    assert_eq!(total, 3);
    for cut in [1, 4, 5, 8, 9] {
        let (a, b) = whole.split_at(cut);
        let straddles = cut > 0 && whole[cut - 1].h > 0.01 && whole[cut].h > 0.01;
        if !straddles {
            assert_eq!(violation_events(a, 0.01).len() + violation_events(b, 0.01).len(), total, "cut {cut}");
        }
    }
}

#[test]
fn reports_round_trip_through_json_and_csv() {
    let cfg = MetricsConfig::default();
    let traces = vec![trace(&[0.0, 0.02, -0.1]), trace(&[-0.1, -0.1, 0.3])];
    let mut r = compute_metrics(&traces, &cfg).unwrap();
    r.label = "example".into();
    let other = compute_metrics(&traces[..1], &cfg).unwrap();
    let reports = vec![r, other];
    let dir = tempfile::tempdir().unwrap();
    for (name, fmt) in [("r.json", ReportFormat::Json), ("r.csv", ReportFormat::Csv)] {
        let path = dir.path().join(name);
        assert_eq!(ReportFormat::for_path(&path), fmt);
        emit_report(&reports, fmt, &path).unwrap();
        assert_eq!(read_report(fmt, &path).unwrap(), reports);
    }
}

#[test]
fn single_cell_sweep_equals_direct_run() {
    let mut scenario =
        ScenarioConfig { duration: 4.0, forecaster: ForecasterKind::Linear, seeds: vec![3], ..Default::default() };
    scenario.safety.method = Method::Pcbf;
    let grid = SweepGrid {
        scenario: scenario.clone(),
        cells: vec![SweepCell::new(Method::Pcbf, 0.0)],
        metrics: MetricsConfig::default(),
    };
    let swept = sweep(&grid, None).unwrap();
    assert_eq!(swept.len(), 1);
    let direct_cfg = grid.cell_scenario(&grid.cells[0]);
    let run = run_scenario(&direct_cfg, None, 3).unwrap();
    let mut direct = compute_metrics(&[run.records.clone()], &grid.metrics).unwrap();
    direct.label = swept[0].label.clone();
    direct.method = swept[0].method;
    direct.gamma = swept[0].gamma;
    direct.lambda_p_equals_lambda_r = swept[0].lambda_p_equals_lambda_r;
    assert_eq!(swept[0], direct);
    let m = trace_metrics(&run.records, &grid.metrics);
    assert!((m.completion_time - 4.0).abs() < 1e-12);
}
