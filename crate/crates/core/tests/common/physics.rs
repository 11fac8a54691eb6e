use nalgebra::{DVector, Matrix3, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use quadtorque::model::{RobotModel, SimConfig, TerrainConfig};
use quadtorque::physics::{
    rest_state, BodyDef, JointTorques, Multibody, MultibodyState, QuadrupedModel, Root, SpatialVec,
};
use quadtorque::terrain::Heightfield;

pub fn robot() -> (RobotModel, QuadrupedModel) {
    let robot = RobotModel::default();
    let model = QuadrupedModel::new(&robot).unwrap();
    (robot, model)
}

/// Base z displacement after 500 zero-torque steps from rest, far above the
/// ground.
pub fn ballistic_drop() -> f64 {
    let (robot, model) = robot();
    let cfg = SimConfig::default();
    let field = Heightfield::flat();
    let start = rest_state(
        Vector3::new(0.0, 0.0, 50.0),
        robot.nominal_pose.joint_positions(),
    );
    let mut st = start.clone();
    for _ in 0..500 {
        st = model
            .step(&st, &JointTorques::zero(), &field, 1.0, &cfg)
            .unwrap()
            .0;
        assert!(!st.foot_contact.iter().any(|&c| c));
    }
    st.base_pos.z - start.base_pos.z
}

/// A calf link pinned at its knee axis. Returns (measured period, analytic
/// period) over ten small-amplitude oscillations.
pub fn pendulum_periods() -> (f64, f64) {
    let robot = RobotModel::default();
    let calf = &robot.links[robot.link_index("FL_calf").unwrap()];
    let (m, c, inertia) = (calf.mass, calf.com_vector(), calf.inertia_matrix());
    let g = 9.81;
    let l = (c.x * c.x + c.z * c.z).sqrt();
    let i_pivot = inertia[(1, 1)] + m * l * l;
    let analytic = 2.0 * std::f64::consts::PI * (i_pivot / (m * g * l)).sqrt();

    let mb = Multibody::new(
        Root::Fixed,
        0.0,
        Vector3::zeros(),
        Matrix3::zeros(),
        vec![BodyDef {
            parent: 0,
            origin: Vector3::zeros(),
            axis: Vector3::y(),
            mass: m,
            com: c,
            inertia,
        }],
    )
    .unwrap();
    // Rotation about +y by theta moves a point (x, 0, z) to x' = x cos + z sin;
    // the COM hangs straight down when x' = 0.
    let equilibrium = (-c.x / c.z).atan();
    let amplitude = 0.05;
    let mut st = MultibodyState {
        base_pos: Vector3::zeros(),
        base_rot: UnitQuaternion::identity(),
        base_twist: SpatialVec::zeros(),
        q: DVector::from_element(1, equilibrium + amplitude),
        qd: DVector::zeros(1),
    };
    let dt = 0.002;
    let ext = vec![SpatialVec::zeros(); 2];
    let mut crossings = Vec::new();
    let mut prev = st.q[0] - equilibrium;
    let mut t = 0.0;
    while crossings.len() < 21 && t < 60.0 {
        let kin = mb.kinematics(&st);
        let acc = mb.forward_dynamics(&st, &kin, &[0.0], g, &ext).unwrap();
        mb.integrate(&mut st, &acc, dt);
        t += dt;
        let x = st.q[0] - equilibrium;
        if prev.signum() != x.signum() && x != 0.0 {
            // linear interpolation of the crossing time
            crossings.push(t - dt * x / (x - prev));
        }
        prev = x;
    }
    let measured = (crossings[20] - crossings[0]) / 10.0;
    (measured, analytic)
}

/// Relative drift of total energy for the floating robot with no gravity,
/// contact or joint torques of any kind (commanded, limit, damping) over 5 s.
pub fn energy_drift() -> f64 {
    let (robot, model) = robot();
    let cfg = SimConfig {
        gravity: 0.0,
        joint_damping: 0.0,
        limit_stiffness: 0.0,
        limit_damping: 0.0,
        ..SimConfig::default()
    };
    let field = Heightfield::flat();
    let mut st = rest_state(
        Vector3::new(0.0, 0.0, 10.0),
        robot.nominal_pose.joint_positions(),
    );
    st.base_lin_vel = Vector3::new(0.3, -0.1, 0.2);
    st.base_ang_vel = Vector3::new(0.4, -0.3, 0.5);
    for (i, qd) in st.qd.iter_mut().enumerate() {
        *qd = 0.05 * ((i as f64) - 5.5) / 5.5;
    }
    let e0 = model.energy(&st, &cfg);
    let mut worst: f64 = 0.0;
    for _ in 0..2500 {
        st = model
            .step(&st, &JointTorques::zero(), &field, 1.0, &cfg)
            .unwrap()
            .0;
        worst = worst.max((model.energy(&st, &cfg) - e0).abs() / e0);
    }
    worst
}

pub struct ConeStats {
    pub steps: usize,
    pub contact_samples: usize,
    /// max over samples of |f_t| - mu * f_n
    pub worst_excess: f64,
    /// samples where a non-penetrating foot carried force
    pub force_without_penetration: usize,
}

/// Random-torque rollouts on rough terrain with random friction.
pub fn cone_rollout(steps: usize, seed: u64) -> ConeStats {
    let (robot, model) = robot();
    let cfg = SimConfig::default();
    let field = Heightfield::generate(&TerrainConfig {
        extent: [8.0, 8.0],
        seed,
        ..TerrainConfig::default()
    })
    .unwrap();
    let q0 = robot.nominal_pose.joint_positions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spawn = |rng: &mut ChaCha8Rng| {
        let mut st = rest_state(
            Vector3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                0.4,
            ),
            q0,
        );
        st.base_lin_vel = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            0.0,
        );
        st
    };
    let mut st = spawn(&mut rng);
    let mut mu = rng.random_range(0.5..1.25);
    let mut stats = ConeStats {
        steps,
        contact_samples: 0,
        worst_excess: f64::NEG_INFINITY,
        force_without_penetration: 0,
    };
    for _ in 0..steps {
        let mut tau = [0.0; 12];
        for j in 0..12 {
            let pd = 30.0 * (q0[j] - st.q[j]) - 0.8 * st.qd[j];
            tau[j] = (pd + rng.random_range(-15.0..15.0)).clamp(-30.0, 30.0);
        }
        let (next, report) = model
            .step(&st, &JointTorques(tau), &field, mu, &cfg)
            .unwrap();
        for i in 0..4 {
            let [tx, ty, _] = report.foot_tangential[i];
            let n = report.foot_normal[i];
            if n > 0.0 {
                stats.contact_samples += 1;
                if report.foot_penetration[i] <= 0.0 {
                    stats.force_without_penetration += 1;
                }
            }
            stats.worst_excess = stats.worst_excess.max((tx * tx + ty * ty).sqrt() - mu * n);
        }
        st = next;
        if st.base_pos.z < 0.12 || st.tilt() > 1.2 || st.time > 4.0 {
            st = spawn(&mut rng);
            mu = rng.random_range(0.5..1.25);
        }
    }
    stats
}
