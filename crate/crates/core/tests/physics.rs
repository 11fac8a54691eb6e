mod common;

use common::physics::*;
use nalgebra::Vector3;
use quadtorque::model::SimConfig;
use quadtorque::physics::{rest_state, JointTorques};
use quadtorque::terrain::Heightfield;

#[test]
fn ballistic_drop_matches_free_fall() {
    let dz = ballistic_drop();
    let expect = -0.5 * 9.81 * 1.0;
    assert!(((dz - expect) / expect).abs() < 0.01, "{dz}");
}

#[test]
fn pinned_calf_period_matches_small_angle_oracle() {
    let (measured, analytic) = pendulum_periods();
    assert!(
        ((measured - analytic) / analytic).abs() < 0.02,
        "{measured} vs {analytic}"
    );
}

#[test]
fn contact_free_energy_is_conserved() {
    let drift = energy_drift();
    assert!(drift < 0.01, "{drift}");
}

#[test]
fn friction_never_leaves_the_cone() {
    let stats = cone_rollout(20_000, 3);
    assert!(stats.contact_samples > 10_000, "{}", stats.contact_samples);
    assert!(stats.worst_excess <= 1e-9, "{}", stats.worst_excess);
    assert_eq!(stats.force_without_penetration, 0);
}

#[test]
fn standing_robot_penetrates_less_than_5mm() {
    let (robot, model) = robot();
    let cfg = SimConfig::default();
    let q0 = robot.nominal_pose.joint_positions();
    let mut st = rest_state(Vector3::new(0.0, 0.0, model.stance_depth(&q0) + 0.005), q0);
    let field = Heightfield::flat();
    let mut worst: f64 = 0.0;
    for i in 0..3000 {
        let mut tau = [0.0; 12];
        for j in 0..12 {
            tau[j] = (40.0 * (q0[j] - st.q[j]) - st.qd[j]).clamp(-30.0, 30.0);
        }
        let (next, report) = model
            .step(&st, &JointTorques(tau), &field, 1.0, &cfg)
            .unwrap();
        st = next;
        if i > 1000 {
            worst = report.foot_penetration.iter().fold(worst, |a, &b| a.max(b));
            assert!(st.foot_contact.iter().all(|&c| c));
        }
    }
    assert!(worst > 0.0 && worst < 0.005, "{worst}");
    assert!(st.base_lin_vel.norm() < 1e-3);
}

#[test]
fn step_is_bit_deterministic() {
    let a = cone_rollout(500, 11);
    let b = cone_rollout(500, 11);
    assert_eq!(a.worst_excess.to_bits(), b.worst_excess.to_bits());
    assert_eq!(a.contact_samples, b.contact_samples);
}

#[test]
fn swing_timer_resets_in_contact_and_grows_in_flight() {
    let (robot, model) = robot();
    let cfg = SimConfig::default();
    let q0 = robot.nominal_pose.joint_positions();
    let mut st = rest_state(Vector3::new(0.0, 0.0, model.stance_depth(&q0) + 0.05), q0);
    let field = Heightfield::flat();
    let mut touched = false;
    for _ in 0..400 {
        let prev = st.clone();
        st = model
            .step(&st, &JointTorques::zero(), &field, 1.0, &cfg)
            .unwrap()
            .0;
        for i in 0..4 {
            if st.foot_contact[i] {
                touched = true;
                assert_eq!(st.swing_time[i], 0.0);
            } else {
                assert!((st.swing_time[i] - prev.swing_time[i] - cfg.dt).abs() < 1e-15);
            }
        }
        assert!((st.base_quat.norm() - 1.0).abs() < 1e-6);
    }
    assert!(touched);
}
