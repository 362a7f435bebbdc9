//! Noiseless oracles for the deviation recursion and the consistency of the
//! falsified sensor stream.

mod common;

use nalgebra::{SMatrix, Vector3};
use stealthsim::attack::propagate_s;
use stealthsim::dynamics::{hover_state, DiscreteDynamics, LinearModel, Matrix12};
use stealthsim::sensing::MeasurementKind;
use stealthsim::{RotorCommand, State12};

use common::{consistency_run, deviation, twin_trajectory, DT};

#[test]
fn twin_trajectory_difference_follows_propagate_s() {
    let out = twin_trajectory(100);
    assert!(out.worst <= 1e-6, "twin mismatch {:e}", out.worst);
    // The roll offset alone has opened a lateral gap of more than 10 cm.
    assert!(out.gap[1].abs() > 0.1);
}

#[test]
fn linear_recursion_is_a_times_s() {
    let mut a = Matrix12::identity();
    for i in 0..6 {
        a[(i, i + 6)] = DT;
        a[(i + 6, i)] = -0.3 * DT;
    }
    let b = SMatrix::<f64, 12, 4>::from_fn(|i, j| ((i + 2 * j) % 5) as f64 * 0.01);
    let dynamics = LinearModel { a, b };
    let mut s = deviation();
    let mut x = hover_state(Vector3::new(1.0, 2.0, 3.0));
    for k in 0..100 {
        let u = RotorCommand::uniform(400.0 + k as f64);
        let next = propagate_s(&dynamics, &s, &x, &u, DT).unwrap();
        let expected = State12(a * s.0);
        assert!(
            (next - expected).0.amax() <= 1e-12 * (1.0 + expected.0.amax()),
            "step {k}"
        );
        s = next;
        x = dynamics.step(&x, &u, DT).unwrap();
    }
}

#[test]
fn flight_filter_tracks_portrayed_state_full_state() {
    let worst = consistency_run(MeasurementKind::FullState, 500);
    assert!(worst <= 1e-3, "worst {worst:e}");
}

#[test]
fn flight_filter_tracks_portrayed_state_with_range() {
    let worst = consistency_run(MeasurementKind::RangeAugmented, 500);
    assert!(worst <= 1e-3, "worst {worst:e}");
}
