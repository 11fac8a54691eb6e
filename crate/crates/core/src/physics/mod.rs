//! Floating-base quadruped simulation at the control rate.
//!
//! Each control step applies the commanded joint torques plus soft joint-limit
//! and viscous joint torques, computes spring-damper penalty contact forces for
//! the four feet and four knee spheres against the heightfield, runs forward
//! dynamics and integrates semi-implicitly (velocities first, then positions).
//!
//! Contact forces are evaluated at the predicted end-of-step velocity. For the
//! active contacts the linear system
//!
//! ```text
//! f = f_spring + D (v_free + h A f),    A = J H^-1 J^T
//! ```
//!
//! is solved, where `D` holds the normal damping `c + k h` and the friction
//! coefficient `mu f_n / max(|v_t|, v_slip)`, `v_free` is the contact velocity
//! without contact forces and `h` the substep. The result is projected onto
//! `f_n >= 0` and the friction cone. This keeps the stiff stick regime of the
//! regularized friction law stable on the light calf links at 500 Hz.
//!
//! Contact flags and swing timers are evaluated at the resulting state; the
//! contact report carries the forces applied during the step.

pub mod multibody;

use nalgebra::{DMatrix, DVector, Matrix3, UnitQuaternion, Vector3};

use crate::error::{Error, Result};
use crate::model::{RobotModel, SimConfig, NUM_JOINTS, NUM_LEGS};
use crate::terrain::Heightfield;

pub use multibody::{BodyDef, Kinematics, Multibody, MultibodyState, Root, SpatialVec};

/// Full dynamic state of one robot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimState {
    pub base_pos: Vector3<f64>,
    pub base_quat: UnitQuaternion<f64>,
    /// World frame (m/s).
    pub base_lin_vel: Vector3<f64>,
    /// Body frame (rad/s).
    pub base_ang_vel: Vector3<f64>,
    pub q: [f64; NUM_JOINTS],
    pub qd: [f64; NUM_JOINTS],
    pub foot_contact: [bool; NUM_LEGS],
    pub knee_contact: [bool; NUM_LEGS],
    pub swing_time: [f64; NUM_LEGS],
    pub time: f64,
    pub steps: u64,
}

impl SimState {
    pub fn rotation(&self) -> Matrix3<f64> {
        *self.base_quat.to_rotation_matrix().matrix()
    }

    /// Base linear velocity in the body frame.
    pub fn base_lin_vel_body(&self) -> Vector3<f64> {
        self.base_quat.inverse() * self.base_lin_vel
    }

    /// World gravity direction (unit, -z) expressed in the body frame.
    pub fn projected_gravity(&self) -> Vector3<f64> {
        self.base_quat.inverse() * Vector3::new(0.0, 0.0, -1.0)
    }

    /// Angle between body z and world z.
    pub fn tilt(&self) -> f64 {
        let up = self.base_quat * Vector3::z();
        up.z.clamp(-1.0, 1.0).acos()
    }

    pub fn is_finite(&self) -> bool {
        self.base_pos.iter().all(|v| v.is_finite())
            && self.base_quat.coords.iter().all(|v| v.is_finite())
            && self.base_lin_vel.iter().all(|v| v.is_finite())
            && self.base_ang_vel.iter().all(|v| v.is_finite())
            && self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// Commanded joint torques (N·m).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointTorques(pub [f64; NUM_JOINTS]);

impl JointTorques {
    pub fn zero() -> Self {
        Self([0.0; NUM_JOINTS])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ContactReport {
    /// Per-foot normal force (N) applied during the step.
    pub foot_normal: [f64; NUM_LEGS],
    /// Per-foot tangential force, world frame (N).
    pub foot_tangential: [[f64; 3]; NUM_LEGS],
    /// Per-foot penetration depth (m) that produced the forces; positive when
    /// below the terrain.
    pub foot_penetration: [f64; NUM_LEGS],
    pub knee_contact: [bool; NUM_LEGS],
}

#[derive(Debug, Clone, Copy)]
struct Sphere {
    body: usize,
    offset: Vector3<f64>,
    radius: f64,
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    penetration: f64,
    /// Lowest point of the sphere, world frame.
    point: Vector3<f64>,
}

/// Projects a contact force onto `f_n >= 0` and `|f_t| <= mu f_n`. Returns the
/// normal magnitude and the tangential vector.
pub fn project_to_cone(force: &Vector3<f64>, mu: f64) -> (f64, Vector3<f64>) {
    let normal = force.z.max(0.0);
    let mut tangential = Vector3::new(force.x, force.y, 0.0);
    let limit = mu * normal;
    let norm = tangential.norm();
    if norm > limit {
        tangential *= if norm > 0.0 { limit / norm } else { 0.0 };
    }
    (normal, tangential)
}

/// The quadruped's articulated model together with contact geometry and
/// joint limits.
#[derive(Debug, Clone)]
pub struct QuadrupedModel {
    body: Multibody,
    feet: [Sphere; NUM_LEGS],
    knees: [Sphere; NUM_LEGS],
    limits: [[f64; 2]; NUM_JOINTS],
    torque_limits: [f64; NUM_JOINTS],
}

impl QuadrupedModel {
    pub fn new(robot: &RobotModel) -> Result<Self> {
        robot.validate()?;
        let base = &robot.links[robot.link_index(&robot.base_link).unwrap()];
        let mut defs = Vec::with_capacity(NUM_JOINTS);
        // Body k + 1 is the child of joint k.
        let body_of_link = |name: &str| -> Option<usize> {
            if name == robot.base_link {
                Some(0)
            } else {
                robot
                    .joints
                    .iter()
                    .position(|j| j.child == name)
                    .map(|k| k + 1)
            }
        };
        for (k, joint) in robot.joints.iter().enumerate() {
            let child = &robot.links[robot.link_index(&joint.child).unwrap()];
            let parent = body_of_link(&joint.parent).ok_or_else(|| {
                Error::validation(
                    format!("robot.joints[{k}].parent"),
                    "parent is not in the tree",
                )
            })?;
            defs.push(BodyDef {
                parent,
                origin: Vector3::from(joint.origin),
                axis: Vector3::from(joint.axis),
                mass: child.mass,
                com: child.com_vector(),
                inertia: child.inertia_matrix(),
            });
        }
        let body = Multibody::new(
            Root::Floating,
            base.mass,
            base.com_vector(),
            base.inertia_matrix(),
            defs,
        )?;
        let sphere = |group: &str, i: usize, s: &crate::model::ContactSphere| -> Result<Sphere> {
            let b = body_of_link(&s.link).ok_or_else(|| {
                Error::validation(
                    format!("robot.{group}[{i}].link"),
                    "link is not in the tree",
                )
            })?;
            Ok(Sphere {
                body: b,
                offset: Vector3::from(s.offset),
                radius: s.radius,
            })
        };
        let mut feet = [Sphere {
            body: 0,
            offset: Vector3::zeros(),
            radius: 0.0,
        }; NUM_LEGS];
        let mut knees = feet;
        for i in 0..NUM_LEGS {
            feet[i] = sphere("feet", i, &robot.feet[i])?;
            knees[i] = sphere("knees", i, &robot.knees[i])?;
        }
        let mut limits = [[0.0; 2]; NUM_JOINTS];
        let mut torque_limits = [0.0; NUM_JOINTS];
        for (k, j) in robot.joints.iter().enumerate() {
            limits[k] = j.limits;
            torque_limits[k] = j.torque_limit;
        }
        Ok(Self {
            body,
            feet,
            knees,
            limits,
            torque_limits,
        })
    }

    pub fn multibody(&self) -> &Multibody {
        &self.body
    }

    pub fn joint_limits(&self) -> &[[f64; 2]; NUM_JOINTS] {
        &self.limits
    }

    pub fn to_multibody_state(&self, st: &SimState) -> MultibodyState {
        let v_body = st.base_lin_vel_body();
        let w = st.base_ang_vel;
        MultibodyState {
            base_pos: st.base_pos,
            base_rot: st.base_quat,
            base_twist: SpatialVec::new(w.x, w.y, w.z, v_body.x, v_body.y, v_body.z),
            q: DVector::from_column_slice(&st.q),
            qd: DVector::from_column_slice(&st.qd),
        }
    }

    fn write_back(&self, mb: &MultibodyState, st: &mut SimState) {
        st.base_pos = mb.base_pos;
        st.base_quat = mb.base_rot;
        st.base_ang_vel = Vector3::new(mb.base_twist[0], mb.base_twist[1], mb.base_twist[2]);
        let v_body = Vector3::new(mb.base_twist[3], mb.base_twist[4], mb.base_twist[5]);
        st.base_lin_vel = mb.base_rot * v_body;
        for i in 0..NUM_JOINTS {
            st.q[i] = mb.q[i];
            st.qd[i] = mb.qd[i];
        }
    }

    pub fn kinematics(&self, st: &SimState) -> Kinematics {
        self.body.kinematics(&self.to_multibody_state(st))
    }

    /// World positions of the foot sphere centers.
    pub fn foot_positions(&self, st: &SimState) -> [Vector3<f64>; NUM_LEGS] {
        let kin = self.kinematics(st);
        self.feet.map(|f| kin.point_position(f.body, &f.offset))
    }

    /// World positions of the lowest points of the foot spheres.
    pub fn foot_bottoms(&self, st: &SimState) -> [Vector3<f64>; NUM_LEGS] {
        let kin = self.kinematics(st);
        self.feet
            .map(|f| kin.point_position(f.body, &f.offset) - Vector3::new(0.0, 0.0, f.radius))
    }

    /// Distance from the base origin down to the lowest foot bottom when the
    /// base is level and the joints are at `q`.
    pub fn stance_depth(&self, q: &[f64; NUM_JOINTS]) -> f64 {
        let mut st = rest_state(Vector3::zeros(), *q);
        st.base_quat = UnitQuaternion::identity();
        let kin = self.kinematics(&st);
        self.feet
            .iter()
            .map(|f| -(kin.point_position(f.body, &f.offset).z - f.radius))
            .fold(f64::MIN, f64::max)
    }

    pub fn energy(&self, st: &SimState, cfg: &SimConfig) -> f64 {
        self.body.energy(&self.to_multibody_state(st), cfg.gravity)
    }

    fn probe(&self, kin: &Kinematics, s: &Sphere, field: &Heightfield) -> Probe {
        let center = kin.point_position(s.body, &s.offset);
        let point = center - Vector3::new(0.0, 0.0, s.radius);
        Probe {
            penetration: field.height_at(center.x, center.y) - point.z,
            point,
        }
    }

    fn spheres(&self) -> impl Iterator<Item = &Sphere> {
        self.feet.iter().chain(self.knees.iter())
    }

    /// Semi-implicit penalty contact forces for the active spheres.
    #[allow(clippy::too_many_arguments)]
    #[allow(clippy::type_complexity)]
    fn contact_forces(
        &self,
        kin: &Kinematics,
        chol: &nalgebra::linalg::Cholesky<f64, nalgebra::Dyn>,
        nu: &DVector<f64>,
        a_free: &DVector<f64>,
        probes: &[Probe],
        mu: f64,
        cfg: &SimConfig,
        h: f64,
    ) -> Option<(Vec<usize>, Vec<Vector3<f64>>, DMatrix<f64>)> {
        let spheres: Vec<&Sphere> = self.spheres().collect();
        let active: Vec<usize> = (0..probes.len())
            .filter(|&i| probes[i].penetration > 0.0)
            .collect();
        if active.is_empty() {
            return None;
        }
        let n = active.len();
        let nd = self.body.num_dofs();
        let mut jac = DMatrix::zeros(3 * n, nd);
        for (row, &i) in active.iter().enumerate() {
            let j = self
                .body
                .point_jacobian(kin, spheres[i].body, &probes[i].point);
            jac.view_mut((3 * row, 0), (3, nd)).copy_from(&j);
        }
        let minv_jt = chol.solve(&jac.transpose());
        let delassus = &jac * &minv_jt;
        let v_now = &jac * nu;
        let v_free = &jac * (nu + a_free * h);

        let mut normal_est: Vec<f64> = active
            .iter()
            .enumerate()
            .map(|(row, &i)| {
                (cfg.contact_stiffness * probes[i].penetration
                    - cfg.contact_damping * v_now[3 * row + 2])
                    .max(0.0)
            })
            .collect();
        let mut forces = vec![Vector3::zeros(); n];
        for _pass in 0..2 {
            let mut d = DVector::zeros(3 * n);
            let mut rhs = DVector::zeros(3 * n);
            for (row, &i) in active.iter().enumerate() {
                let vt = Vector3::new(v_free[3 * row], v_free[3 * row + 1], 0.0).norm();
                let b = mu * normal_est[row] / vt.max(cfg.friction_slip_velocity);
                let dn = cfg.contact_damping + cfg.contact_stiffness * h;
                d[3 * row] = -b;
                d[3 * row + 1] = -b;
                d[3 * row + 2] = -dn;
                rhs[3 * row + 2] = cfg.contact_stiffness * probes[i].penetration;
            }
            for k in 0..3 * n {
                rhs[k] += d[k] * v_free[k];
            }
            let mut m = DMatrix::identity(3 * n, 3 * n);
            for r in 0..3 * n {
                for c in 0..3 * n {
                    m[(r, c)] -= h * d[r] * delassus[(r, c)];
                }
            }
            let f = m.lu().solve(&rhs)?;
            for row in 0..n {
                let raw = Vector3::new(f[3 * row], f[3 * row + 1], f[3 * row + 2]);
                let (fn_, ft) = project_to_cone(&raw, mu);
                normal_est[row] = fn_;
                forces[row] = ft + Vector3::new(0.0, 0.0, fn_);
            }
        }
        Some((active, forces, minv_jt))
    }

    fn joint_torques(
        &self,
        cmd: &JointTorques,
        mb: &MultibodyState,
        cfg: &SimConfig,
    ) -> [f64; NUM_JOINTS] {
        let mut tau = cmd.0;
        for i in 0..NUM_JOINTS {
            let (q, qd) = (mb.q[i], mb.qd[i]);
            let [lo, hi] = self.limits[i];
            if q < lo {
                tau[i] += cfg.limit_stiffness * (lo - q) - cfg.limit_damping * qd.min(0.0);
            } else if q > hi {
                tau[i] += cfg.limit_stiffness * (hi - q) - cfg.limit_damping * qd.max(0.0);
            }
            tau[i] -= cfg.joint_damping * qd;
        }
        tau
    }

    /// Advances `state` by one control period.
    pub fn step(
        &self,
        state: &SimState,
        torques: &JointTorques,
        field: &Heightfield,
        mu: f64,
        cfg: &SimConfig,
    ) -> Result<(SimState, ContactReport)> {
        for (i, &t) in torques.0.iter().enumerate() {
            if !(t.abs() <= self.torque_limits[i] + 1e-9) {
                return Err(Error::TorqueOutOfRange {
                    joint: i,
                    value: t,
                    limit: self.torque_limits[i],
                });
            }
        }
        let step_index = state.steps + 1;
        let diverged = |detail: &str| Error::SimDiverged {
            step: step_index,
            detail: detail.to_string(),
        };
        if !state.is_finite() {
            return Err(diverged("non-finite input state"));
        }
        let h = cfg.dt / f64::from(cfg.substeps);
        let nd = self.body.num_dofs();
        let mut mb = self.to_multibody_state(state);
        let no_ext = vec![SpatialVec::zeros(); NUM_JOINTS + 1];
        let mut report = ContactReport::default();
        for _ in 0..cfg.substeps {
            let kin = self.body.kinematics(&mb);
            let tau = self.joint_torques(torques, &mb, cfg);
            let chol = self
                .body
                .mass_matrix(&kin)
                .cholesky()
                .ok_or_else(|| diverged("mass matrix lost positive definiteness"))?;
            let mut rhs = -self.body.bias_forces(&kin, &mb.qd, cfg.gravity, &no_ext);
            for (i, t) in tau.iter().enumerate() {
                rhs[6 + i] += t;
            }
            let mut acc = chol.solve(&rhs);
            let mut nu = DVector::zeros(nd);
            nu.rows_mut(0, 6).copy_from(&mb.base_twist);
            nu.rows_mut(6, NUM_JOINTS).copy_from(&mb.qd);

            let probes: Vec<Probe> = self.spheres().map(|s| self.probe(&kin, s, field)).collect();
            report = ContactReport::default();
            for i in 0..NUM_LEGS {
                report.foot_penetration[i] = probes[i].penetration;
            }
            if let Some((active, forces, minv_jt)) =
                self.contact_forces(&kin, &chol, &nu, &acc, &probes, mu, cfg, h)
            {
                let mut f = DVector::zeros(3 * active.len());
                for (row, (&i, force)) in active.iter().zip(&forces).enumerate() {
                    f.rows_mut(3 * row, 3).copy_from(force);
                    if i < NUM_LEGS {
                        report.foot_normal[i] = force.z;
                        report.foot_tangential[i] = [force.x, force.y, 0.0];
                    }
                }
                acc += minv_jt * f;
            }
            if acc.iter().any(|a| !a.is_finite()) {
                return Err(diverged("non-finite acceleration"));
            }
            self.body.integrate(&mut mb, &acc, h);
        }

        let mut next = state.clone();
        self.write_back(&mb, &mut next);
        next.time = state.time + cfg.dt;
        next.steps = step_index;
        if !next.is_finite() {
            return Err(diverged("non-finite state"));
        }

        let kin = self.body.kinematics(&mb);
        for i in 0..NUM_LEGS {
            let foot = self.probe(&kin, &self.feet[i], field);
            let knee = self.probe(&kin, &self.knees[i], field);
            next.foot_contact[i] = foot.penetration > 0.0;
            next.knee_contact[i] = knee.penetration > 0.0;
            report.knee_contact[i] = next.knee_contact[i];
            next.swing_time[i] = if next.foot_contact[i] {
                0.0
            } else {
                state.swing_time[i] + cfg.dt
            };
        }
        Ok((next, report))
    }
}

/// A motionless state with the base at `pos`, level, joints at `q`.
pub fn rest_state(pos: Vector3<f64>, q: [f64; NUM_JOINTS]) -> SimState {
    SimState {
        base_pos: pos,
        base_quat: UnitQuaternion::identity(),
        base_lin_vel: Vector3::zeros(),
        base_ang_vel: Vector3::zeros(),
        q,
        qd: [0.0; NUM_JOINTS],
        foot_contact: [false; NUM_LEGS],
        knee_contact: [false; NUM_LEGS],
        swing_time: [0.0; NUM_LEGS],
        time: 0.0,
        steps: 0,
    }
}

/// Replaces the base x-y velocity; everything else is left untouched.
pub fn apply_push(state: &SimState, v_xy: [f64; 2]) -> SimState {
    let mut out = state.clone();
    out.base_lin_vel.x = v_xy[0];
    out.base_lin_vel.y = v_xy[1];
    out
}
