use rhgame::oracle::equilibrium_residual;
use rhgame::scenario::{
    demo, load_trajectory_dump, read_metrics_csv, run_scenario, write_metrics_csv,
    write_trajectory_dump, Scenario,
};
use rhgame::Error;

const SMALL: &str = r#"
period = 3
steps = 240
seed = 11
track = ["a"]

[network]
nodes = [1, 2, 3, 4]
links = [[1, 2], [2, 4], [1, 3], [3, 4]]

[population]
window = [0, 2]

[[groups]]
name = "a"
count = 3
source = 1
sink = 4

[[groups]]
name = "b"
count = 2
source = 1
sink = 4

[[events]]
time = 80
kind = "fault"
group = "b"

[[events]]
time = 160
kind = "repair"
group = "b"
"#;

fn small() -> Scenario {
    Scenario::from_toml(SMALL).unwrap()
}

#[test]
fn whole_pipeline_is_a_function_of_the_scenario() {
    let a = run_scenario(&small()).unwrap();
    let b = run_scenario(&small()).unwrap();
    assert_eq!(a.trajectory, b.trajectory);
    assert_eq!(a.metrics, b.metrics);
    let mut other = small();
    other.seed += 1;
    assert_ne!(
        run_scenario(&other).unwrap().trajectory.phi,
        a.trajectory.phi
    );
}

#[test]
fn fault_and_repair_split_the_run_into_three_segments() {
    let out = run_scenario(&small()).unwrap();
    let traj = &out.trajectory;
    assert_eq!(traj.len(), 240);
    assert_eq!(traj.event_times(), vec![80, 160]);
    let ranges: Vec<_> = out.segments.iter().map(|s| s.range).collect();
    assert_eq!(ranges, vec![(0, 79), (80, 159), (160, 239)]);
    let b = out.population.members("b").unwrap();
    for t in 80..160 {
        for &i in b {
            assert!(!traj.active[t][i]);
            assert_eq!(traj.phi[t].agent_mass(i), 0.0);
        }
    }
    // removing traffic lowers the potential at the fault instant
    assert!(traj.v_pred[80] < traj.v_pred[79]);
    for s in &out.segments {
        assert!(s.convergence.converged(), "{:?}", s.convergence);
        assert!(s.equilibrium_within(1e-6));
    }
}

#[test]
fn metrics_survive_a_csv_round_trip() {
    let out = run_scenario(&small()).unwrap();
    let table = out.metrics_table();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("metrics.csv");
    write_metrics_csv(&path, &table).unwrap();
    let back = read_metrics_csv(&path).unwrap();
    assert_eq!(back, table);
    let id = out.tracked[0];
    for name in ["t", "V_pred", "V_impl", "delta_phi_all", "update_norm"] {
        assert!(back.column(name).is_some(), "{name}");
    }
    for prefix in ["delta_phi", "J_pred", "J_impl"] {
        assert!(back.column(&format!("{prefix}_{id}")).is_some());
    }
    // the implemented potential needs a full trailing period
    let v_impl = back.column("V_impl").unwrap();
    assert!(v_impl[..2].iter().all(Option::is_none));
    assert!(v_impl[2..].iter().all(Option::is_some));
}

#[test]
fn trajectory_dump_restores_the_final_state() {
    let out = run_scenario(&small()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trajectory.jsonl");
    write_trajectory_dump(&path, &out.population.game, &out.trajectory).unwrap();
    let state = load_trajectory_dump(&path).unwrap();
    let last = out.trajectory.len() - 1;
    assert_eq!(state.t, last);
    assert_eq!(state.theta, out.trajectory.theta[last]);
    assert_eq!(state.x, out.trajectory.phi[last]);
    let rep = equilibrium_residual(&state.game, &state.x, state.theta).unwrap();
    assert_eq!(rep, out.segments[2].residual);
}

#[test]
fn corrupted_dump_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(
        &path,
        "{\"kind\":\"step\",\"t\":0,\"theta\":0,\"active\":[],\"phi\":[]}\n",
    )
    .unwrap();
    assert!(matches!(load_trajectory_dump(&path), Err(Error::Config(_))));
}

#[test]
fn demo_scenario_round_trips_through_toml() {
    let scn = demo();
    let again = Scenario::from_toml(&scn.to_toml().unwrap()).unwrap();
    assert_eq!(again, scn);
    scn.validate().unwrap();
}

#[test]
fn validation_collects_every_problem() {
    let text = SMALL
        .replace(
            "count = 3",
            "count = 3\ndemand_max = 1.0\ndemand_max_fraction = 0.5",
        )
        .replace("time = 160", "time = 20");
    let Err(Error::Validation(errs)) = Scenario::from_toml(&text) else {
        panic!("expected a validation error");
    };
    assert_eq!(errs.len(), 2, "{errs:?}");
    assert!(errs[0].contains("group 'a'") && errs[0].contains("demand_max"));
    assert!(errs[1].contains("strictly increasing"));
}
