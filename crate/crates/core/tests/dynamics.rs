use ddslit::dynamics::{evolve_free, run_trajectory, run_trajectory_pair, Status};
use ddslit::sampling::Sampler;
use ddslit::state::{build_initial_state, ConfigPoint4, TwoParticleState};
use ddslit::{ExperimentParams, IntegratorConfig, Mode, SamplerSpec, Screens};
use proptest::prelude::*;

fn setup() -> (ExperimentParams, TwoParticleState) {
    let params = ExperimentParams::default();
    let state = build_initial_state(&params).unwrap();
    (params, state)
}

fn born_points(state: &TwoParticleState, seed: u64, n: u64) -> Vec<ConfigPoint4> {
    let sampler = Sampler::new(state, SamplerSpec::equilibrium(seed)).unwrap();
    (0..n).map(|i| sampler.draw(i).unwrap().point).collect()
}

// Does not hold at the default tolerances. Position error is controlled
// per step to rel_tol·|x|, about 5e-9 m near the far screen, which at
// u_x = 0.1 m/s is 5e-8 s of arrival time per step. Observed shifts reach
// 5e-7 s against the 1e-8 s bound. Run with `--ignored` to reproduce.
#[test]
#[ignore = "arrival shifts reach 5e-7 s at default tolerances, bound is 1e-8 s"]
fn tighter_tolerance_moves_detection_times_below_bound() {
    let (params, state) = setup();
    let loose = params.integrator;
    let tight = IntegratorConfig { rel_tol: loose.rel_tol / 10.0, ..loose };
    let bound = 10.0 * loose.crossing_time_tol;
    for (i, q0) in born_points(&state, 11, 100).into_iter().enumerate() {
        for mode in [Mode::Collapse, Mode::Free] {
            let a = run_trajectory(&state, q0, params.screens, mode, &loose, 0).record;
            let b = run_trajectory(&state, q0, params.screens, mode, &tight, 0).record;
            assert_eq!(a.status, Status::Complete, "trajectory {i}");
            assert_eq!(a.status, b.status, "trajectory {i}");
            for (x, y) in [(a.first, b.first), (a.second, b.second)] {
                let (x, y) = (x.unwrap(), y.unwrap());
                assert_eq!(x.side, y.side, "trajectory {i}");
                assert!((x.t - y.t).abs() < bound, "trajectory {i} {mode}: {} vs {}", x.t, y.t);
            }
        }
    }
}

#[test]
fn without_screens_nothing_is_detected() {
    let (params, state) = setup();
    let cfg = IntegratorConfig { t_max: 0.5, ..params.integrator };
    for q0 in born_points(&state, 12, 5) {
        let out = run_trajectory(&state, q0, Screens::unbounded(), Mode::Collapse, &cfg, 0);
        assert_eq!(out.record.status, Status::Censored);
        assert_eq!(out.record.first, None);
        assert!(out.diagnostics.failure.is_none());
    }
}

#[test]
fn recorded_times_strictly_increase() {
    let (params, state) = setup();
    for q0 in born_points(&state, 13, 4) {
        let (collapse, free) = run_trajectory_pair(&state, q0, params.screens, &params.integrator, 1);
        for path in [collapse.path.unwrap(), free.path.unwrap()] {
            assert!(path.len() > 2);
            assert!(path.windows(2).all(|w| w[1].t > w[0].t));
        }
    }
}

#[test]
fn distinct_starts_never_meet_at_checkpoints() {
    let (params, state) = setup();
    let points = born_points(&state, 14, 12);
    for t in [0.05, 0.2, 1.0] {
        let moved: Vec<[f64; 4]> =
            points.iter().map(|q| evolve_free(&state, *q, t, &params.integrator).unwrap().to_array()).collect();
        for i in 0..moved.len() {
            for j in i + 1..moved.len() {
                assert_ne!(moved[i], moved[j], "points {i} and {j} coincide at t={t}");
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn modes_share_the_first_detection(seed in 0u64..1_000_000, index in 0u64..1_000) {
        let (params, state) = setup();
        let sampler = Sampler::new(&state, SamplerSpec::equilibrium(seed)).unwrap();
        let q0 = sampler.draw(index).unwrap().point;
        let (collapse, free) = run_trajectory_pair(&state, q0, params.screens, &params.integrator, 0);
        let (c, f) = (collapse.record, free.record);
        prop_assert_eq!(c.status, Status::Complete);
        prop_assert_eq!(f.status, Status::Complete);
        prop_assert_eq!(c.first, f.first);
        let (first, second) = (c.first.unwrap(), c.second.unwrap());
        prop_assert!(first.side != second.side);
        prop_assert!(first.t <= second.t);
        prop_assert_eq!(second.side, f.second.unwrap().side);
    }

    #[test]
    fn exchanging_particles_mirrors_the_record(seed in 0u64..1_000_000) {
        let (params, state) = setup();
        let q0 = Sampler::new(&state, SamplerSpec::equilibrium(seed)).unwrap().draw(0).unwrap().point;
        let swapped = ConfigPoint4::new(q0.x2, q0.y2, q0.x1, q0.y1);
        let a = run_trajectory(&state, q0, params.screens, Mode::Free, &params.integrator, 0).record;
        let b = run_trajectory(&state, swapped, params.screens, Mode::Free, &params.integrator, 0).record;
        let (a1, b1) = (a.first.unwrap(), b.first.unwrap());
        prop_assert_eq!(a1.side, b1.side);
        prop_assert!((a1.t - b1.t).abs() < 10.0 * params.integrator.crossing_time_tol);
        prop_assert!((a1.y - b1.y).abs() < 1e-9);
    }
}
