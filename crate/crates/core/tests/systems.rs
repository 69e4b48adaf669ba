use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use proptest::prelude::*;

use trase_node::cli::fixture_name;
use trase_node::systems::{
    export_csv, finite_diff_sensitivity, gen_ibr_surrogate, gen_linear_scalar, gen_oscillator,
    ingest_csv, load_scenario, numerical_derivative, sidecar_path, IbrParams, ScenarioLayout,
    Sensitivities, IBR_FIXTURE_SETPOINTS,
};
use trase_node::{Error, OscillatorParams, SolverConfig, TimeGrid};

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/ibr")
}

fn osc(u: f64) -> trase_node::Scenario {
    let grid = TimeGrid::uniform(0.0, 7.0, 100).unwrap();
    gen_oscillator(
        &OscillatorParams::default(),
        u,
        &grid,
        &SolverConfig::ground_truth(),
    )
    .unwrap()
}

fn max_abs_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

#[test]
fn csv_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    for sc in [
        osc(1.0),
        gen_ibr_surrogate(&IbrParams::default(), 1.039).unwrap(),
    ] {
        let path = dir.path().join(format!("s{}.csv", sc.u));
        export_csv(&sc, &path).unwrap();
        assert!(sidecar_path(&path).exists());
        let back = load_scenario(&path).unwrap();
        assert_eq!(back, sc);
    }
}

#[test]
fn unobserved_sensitivity_rows_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut sc = osc(2.0);
    let s = sc.sensitivities.as_mut().unwrap();
    for i in (0..s.observed.len()).step_by(3) {
        s.observed[i] = false;
    }
    let path = dir.path().join("partial.csv");
    export_csv(&sc, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.lines().nth(1).unwrap().contains(",,"));
    let back = load_scenario(&path).unwrap();
    let (a, b) = (back.sensitivities.unwrap(), sc.sensitivities.unwrap());
    assert_eq!(a.observed, b.observed);
    for i in 0..a.observed.len() {
        if a.observed[i] {
            assert_eq!(a.values.row(i), b.values.row(i));
        }
    }
}

fn rewrite(path: &Path, f: impl Fn(Vec<String>) -> Vec<String>) {
    let lines: Vec<String> = fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    fs::write(path, f(lines).join("\n") + "\n").unwrap();
}

#[test]
fn shuffled_rows_are_rejected_with_timestamp() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("shuffled.csv");
    export_csv(&osc(1.0), &path).unwrap();
    rewrite(&path, |mut l| {
        l.swap(10, 11);
        l
    });
    match load_scenario(&path).unwrap_err() {
        Error::Data(msg) => assert!(msg.contains("e-1") || msg.contains('.'), "{msg}"),
        other => panic!("expected data error, got {other}"),
    }
}

#[test]
fn malformed_cells_report_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    export_csv(&osc(1.0), &path).unwrap();
    rewrite(&path, |mut l| {
        l[5] = l[5].replacen(',', ",abc", 1);
        l
    });
    match load_scenario(&path).unwrap_err() {
        Error::Parse { line, .. } => assert_eq!(line, 6),
        other => panic!("expected parse error, got {other}"),
    }
}

#[test]
fn partially_filled_sensitivity_row_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.csv");
    export_csv(&osc(1.0), &path).unwrap();
    rewrite(&path, |mut l| {
        let mut cells: Vec<&str> = l[3].split(',').collect();
        cells[3] = "";
        l[3] = cells.join(",");
        l
    });
    assert!(matches!(load_scenario(&path), Err(Error::Parse { .. })));
}

#[test]
fn missing_sidecar_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("lonely.csv");
    export_csv(&osc(1.0), &path).unwrap();
    fs::remove_file(sidecar_path(&path)).unwrap();
    assert!(matches!(load_scenario(&path), Err(Error::Io { .. })));
}

#[test]
fn columns_are_mapped_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cols.csv");
    let sc = osc(1.0);
    export_csv(&sc, &path).unwrap();
    // Read only the velocity channel, and under a swapped layout.
    let layout = ScenarioLayout {
        u: 1.0,
        state_columns: vec!["v".into(), "x".into()],
        exo_columns: vec![],
        sensitivity_columns: None,
    };
    let back = ingest_csv(&path, &layout).unwrap();
    assert_eq!(back.states.column(0), sc.states.column(1));
    assert_eq!(back.states.column(1), sc.states.column(0));
    assert!(back.sensitivities.is_none());
    let missing = ScenarioLayout {
        state_columns: vec!["q".into()],
        ..layout
    };
    assert!(matches!(
        ingest_csv(&path, &missing),
        Err(Error::Parse { line: 1, .. })
    ));
}

#[test]
fn committed_ibr_fixtures_ingest() {
    let dir = fixtures();
    for &v in &IBR_FIXTURE_SETPOINTS {
        let sc = load_scenario(&dir.join(fixture_name(v))).unwrap();
        assert_eq!(sc.u, v);
        assert_eq!(sc.labels.states, ["I_d", "I_q"]);
        assert_eq!(sc.labels.exogenous, ["V_t", "f_t"]);
        assert_eq!(sc.state_dim(), 2);
        assert_eq!(sc.exo_dim(), 2);
        assert_eq!(sc.grid.len(), 100);
        assert!(sc.sensitivities.is_none());
        // regenerating reproduces the committed file exactly
        assert_eq!(sc, gen_ibr_surrogate(&IbrParams::default(), v).unwrap());
    }
}

#[test]
fn ibr_exogenous_channels_do_not_depend_on_setpoint() {
    let dir = fixtures();
    let a = load_scenario(&dir.join(fixture_name(1.035))).unwrap();
    let b = load_scenario(&dir.join(fixture_name(1.045))).unwrap();
    assert_eq!(a.exogenous, b.exogenous);
    assert_ne!(a.states, b.states);
}

#[test]
fn fd_sensitivity_matches_linear_closed_form() {
    let grid = TimeGrid::uniform(0.0, 3.0, 61).unwrap();
    for (ua, ub) in [(1.0, 2.0), (3.0, 3.5), (-1.0, 4.0)] {
        let a = gen_linear_scalar(ua, 2.0, &grid);
        let b = gen_linear_scalar(ub, 2.0, &grid);
        let fd = finite_diff_sensitivity(&a, &b).unwrap();
        let err = max_abs_diff(
            &fd.sensitivities.unwrap().values,
            &a.sensitivities.unwrap().values,
        );
        assert!(err < 1e-9, "linear FD error {err:e}");
    }
}

#[test]
fn fd_sensitivity_matches_oscillator() {
    let (a, b) = (osc(1.0), osc(1.1));
    let mut stripped = a.clone();
    stripped.sensitivities = None;
    let fd = finite_diff_sensitivity(&stripped, &b).unwrap();
    let err = max_abs_diff(
        &fd.sensitivities.unwrap().values,
        &a.sensitivities.unwrap().values,
    );
    assert!(err < 1e-9, "oscillator FD error {err:e}");
}

#[test]
fn fd_sensitivity_rejects_bad_pairs() {
    let a = osc(1.0);
    assert!(matches!(
        finite_diff_sensitivity(&a, &a),
        Err(Error::DegenerateSpacing(_))
    ));
    let grid = TimeGrid::uniform(0.0, 7.0, 50).unwrap();
    let other = gen_oscillator(
        &OscillatorParams::default(),
        2.0,
        &grid,
        &SolverConfig::ground_truth(),
    )
    .unwrap();
    assert!(matches!(
        finite_diff_sensitivity(&a, &other),
        Err(Error::Data(_))
    ));
}

#[test]
fn oscillator_sensitivities_do_not_depend_on_u() {
    let base = osc(1.0).sensitivities.unwrap().values;
    for u in [2.0, 4.0, 8.0] {
        let err = max_abs_diff(&osc(u).sensitivities.unwrap().values, &base);
        assert!(err < 1e-6, "u = {u}: {err:e}");
    }
}

#[test]
fn oscillator_sensitivity_satisfies_its_ode() {
    // ṡ_x = s_v and s_x → 1/ω² for large t.
    let grid = TimeGrid::uniform(0.0, 30.0, 3001).unwrap();
    let p = OscillatorParams::default();
    let sc = gen_oscillator(&p, 1.0, &grid, &SolverConfig::ground_truth()).unwrap();
    let s = sc.sensitivities.unwrap().values;
    let ds = numerical_derivative(grid.times(), &s);
    for i in 1..grid.len() - 1 {
        assert!((ds[[i, 0]] - s[[i, 1]]).abs() < 1e-3);
    }
    let last = s[[grid.len() - 1, 0]];
    assert!((last - 1.0 / (p.omega_n * p.omega_n)).abs() < 1e-6);
}

#[test]
fn sensitivity_rows_validate() {
    let mut sc = osc(1.0);
    sc.sensitivities = Some(Sensitivities {
        values: Array2::zeros((3, 2)),
        observed: vec![true; 3],
    });
    assert!(matches!(sc.validate(), Err(Error::Dimension { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    // The oscillator is linear in u: x(u_b) − x(u_a) = (u_b − u_a)·s.
    #[test]
    fn states_are_affine_in_u(ua in 0.25f64..8.0, du in 0.1f64..4.0) {
        let grid = TimeGrid::uniform(0.0, 7.0, 50).unwrap();
        let p = OscillatorParams::default();
        let a = gen_oscillator(&p, ua, &grid, &SolverConfig::ground_truth()).unwrap();
        let b = gen_oscillator(&p, ua + du, &grid, &SolverConfig::ground_truth()).unwrap();
        let s = a.sensitivities.unwrap().values;
        let pred = &a.states + &(&s * du);
        prop_assert!(max_abs_diff(&pred, &b.states) < 1e-8);
    }
}
