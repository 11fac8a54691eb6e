//! Constructed states for the reward golden table. Each fixture isolates one
//! row; the expected weighted value is written out by hand.

use nalgebra::{UnitQuaternion, Vector3};

use quadtorque::env::reward::{compute_reward, RewardBreakdown, RewardInputs, TERM_NAMES};
use quadtorque::model::{NominalPose, RewardConfig, RobotModel};
use quadtorque::physics::{rest_state, ContactReport, JointTorques, SimState};

pub const DT: f64 = 0.002;

pub struct Fixture {
    pub prev: SimState,
    pub next: SimState,
    pub torques: JointTorques,
    pub action: [f64; 12],
    pub last_action: [f64; 12],
    pub command: [f64; 3],
    pub contacts: ContactReport,
}

pub struct GoldenRow {
    pub label: &'static str,
    pub term: usize,
    pub expected: f64,
    pub fixture: Fixture,
}

pub fn pose() -> NominalPose {
    RobotModel::default().nominal_pose
}

/// Standing at the target height and nominal hips with all feet down.
fn neutral() -> Fixture {
    let pose = pose();
    let mut q = pose.joint_positions();
    // equal diagonal pairs so the gait row is 0 unless a fixture changes it
    for (a, b) in quadtorque::env::reward::GAIT_PAIRS {
        q[b] = q[a];
    }
    let mut st = rest_state(Vector3::new(0.0, 0.0, 0.30), q);
    st.foot_contact = [true; 4];
    Fixture {
        prev: st.clone(),
        next: st,
        torques: JointTorques::zero(),
        action: [0.0; 12],
        last_action: [0.0; 12],
        command: [0.0; 3],
        contacts: ContactReport::default(),
    }
}

pub fn evaluate(f: &Fixture) -> RewardBreakdown {
    compute_reward(
        &RewardInputs {
            prev: &f.prev,
            next: &f.next,
            torques: &f.torques,
            action: &f.action,
            last_action: &f.last_action,
            command: f.command,
            contacts: &f.contacts,
            ground_height: 0.0,
        },
        &RewardConfig::default(),
        &pose(),
        DT,
    )
}

fn term(name: &str) -> usize {
    TERM_NAMES.iter().position(|&n| n == name).unwrap()
}

pub fn golden_rows() -> Vec<GoldenRow> {
    let mut rows = Vec::new();
    let mut push = |label, name: &str, expected, fixture| {
        rows.push(GoldenRow {
            label,
            term: term(name),
            expected,
            fixture,
        })
    };

    let mut f = neutral();
    f.command = [0.4, -0.2, 0.0];
    f.next.base_lin_vel = Vector3::new(0.4, -0.2, 0.0);
    push("tracking, perfect", "lin_vel_xy", 0.0022, f);

    let mut f = neutral();
    f.command = [0.5, 0.0, 0.0];
    push(
        "tracking, 0.5 m/s error in x",
        "lin_vel_xy",
        1.1 * DT * (-1.0f64).exp(),
        f,
    );

    let mut f = neutral();
    f.next.base_lin_vel = Vector3::new(0.0, 0.0, 0.3);
    push("vertical velocity 0.3", "lin_vel_z", -4.0 * DT * 0.09, f);

    let mut f = neutral();
    f.next.base_ang_vel = Vector3::new(0.2, -0.4, 0.0);
    push(
        "roll/pitch rate (0.2, -0.4)",
        "ang_vel_xy",
        -0.05 * DT * 0.2,
        f,
    );

    let mut f = neutral();
    f.command = [0.0, 0.0, 0.5];
    push(
        "yaw tracking, 0.5 rad/s error",
        "ang_vel_z",
        DT * (-1.0f64).exp(),
        f,
    );

    let mut f = neutral();
    let a = 0.3f64;
    f.next.base_quat = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), a);
    push(
        "roll 0.3 rad",
        "orientation",
        -2.4 * DT * a.sin().powi(2),
        f,
    );

    let mut f = neutral();
    f.torques = JointTorques([10.0; 12]);
    push("torques all 10", "torque", -0.00002 * DT * 1200.0, f);

    let mut f = neutral();
    f.next.qd = [1.0; 12];
    push(
        "joint velocity jump 1",
        "joint_accel",
        -0.0005 * DT * 12.0,
        f,
    );

    let mut f = neutral();
    f.next.base_pos.z = 0.25;
    push("base 5 cm low", "base_height", -5.0 * DT * 0.0025, f);

    let mut f = neutral();
    f.prev.foot_contact = [false, true, true, true];
    f.prev.swing_time = [0.3, 0.0, 0.0, 0.0];
    push(
        "touchdown after 0.3 s swing",
        "air_time",
        0.3 * DT * (0.3 + DT - 0.5),
        f,
    );

    let mut f = neutral();
    f.contacts.knee_contact = [true, false, true, false];
    push("two knees touching", "knee_collision", -0.25 * DT * 2.0, f);

    let mut f = neutral();
    f.action = [0.5; 12];
    push("action change 0.5", "action_rate", -0.01 * DT * 3.0, f);

    let mut f = neutral();
    f.next.foot_contact = [true, false, true, true];
    f.prev.foot_contact = f.next.foot_contact;
    push("one foot in swing", "foot_contact", -0.05 * DT, f);

    let mut f = neutral();
    let q = pose().joint_positions();
    f.next.q = q;
    // front thighs 0.8 vs rear 1.0 on both diagonals; calves equal
    push("nominal pose gait residual", "gait", -0.1 * DT * 0.4, f);

    let mut f = neutral();
    for h in quadtorque::env::reward::HIP_JOINTS {
        f.next.q[h] = 0.0;
    }
    push("hips at zero", "hip", -0.25 * DT * 0.4, f);

    rows
}
