//! Tree-structured rigid multibody with revolute joints and an optional
//! floating root.
//!
//! Spatial vectors are 6-vectors `[angular; linear]` in body coordinates.
//! Forward dynamics assembles the joint-space mass matrix with the composite
//! rigid body algorithm, evaluates bias forces (gravity, Coriolis, external
//! wrenches) with recursive Newton-Euler, and solves `H a = tau - C` by
//! Cholesky factorization.
//!
//! For a floating root the first six generalized velocities are the root twist
//! in root coordinates and the first six accelerations are its time
//! derivative in those same coordinates.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};

use crate::error::{Error, Result};

pub type SpatialVec = Vector6<f64>;
pub type SpatialMat = Matrix6<f64>;

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Motion cross product operator `v x`.
pub fn cross_motion(v: &SpatialVec) -> SpatialMat {
    let w = skew(&v.fixed_rows::<3>(0).into_owned());
    let l = skew(&v.fixed_rows::<3>(3).into_owned());
    let mut m = SpatialMat::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&l);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m
}

/// Force cross product operator `v x*`.
pub fn cross_force(v: &SpatialVec) -> SpatialMat {
    -cross_motion(v).transpose()
}

/// Spatial inertia of a body with mass `m`, center of mass `c` and rotational
/// inertia `ic` about the center of mass.
pub fn spatial_inertia(m: f64, c: &Vector3<f64>, ic: &Matrix3<f64>) -> SpatialMat {
    let cx = skew(c);
    let mut out = SpatialMat::zeros();
    out.fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(ic + m * cx * cx.transpose()));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * cx));
    out.fixed_view_mut::<3, 3>(3, 0)
        .copy_from(&(m * cx.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3)
        .copy_from(&(Matrix3::identity() * m));
    out
}

/// Plücker transform from a parent frame to a child frame whose origin sits at
/// `r` (parent coordinates) and whose orientation is `rot` (child to parent).
pub fn plucker(rot: &Matrix3<f64>, r: &Vector3<f64>) -> SpatialMat {
    let e = rot.transpose();
    let mut x = SpatialMat::zeros();
    x.fixed_view_mut::<3, 3>(0, 0).copy_from(&e);
    x.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-e * skew(r)));
    x.fixed_view_mut::<3, 3>(3, 3).copy_from(&e);
    x
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Root {
    Fixed,
    Floating,
}

/// A body attached to its parent by a revolute joint.
#[derive(Debug, Clone)]
pub struct BodyDef {
    /// 0 is the root; `k > 0` refers to the k-th entry of the body list.
    pub parent: usize,
    pub origin: Vector3<f64>,
    pub axis: Vector3<f64>,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone)]
struct Body {
    parent: usize,
    origin: Vector3<f64>,
    axis: Vector3<f64>,
    motion: SpatialVec,
    inertia: SpatialMat,
    mass: f64,
    com: Vector3<f64>,
}

/// Generalized state of a multibody. For a fixed root the base fields stay at
/// their initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct MultibodyState {
    pub base_pos: Vector3<f64>,
    pub base_rot: UnitQuaternion<f64>,
    /// Root twist `[omega; v]` in root coordinates.
    pub base_twist: SpatialVec,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

/// Per-body poses and velocities for one configuration.
#[derive(Debug, Clone)]
pub struct Kinematics {
    /// Body-to-world rotations; index 0 is the root.
    pub rot: Vec<Matrix3<f64>>,
    pub pos: Vec<Vector3<f64>>,
    /// Body twists in body coordinates.
    pub vel: Vec<SpatialVec>,
    xup: Vec<SpatialMat>,
}

impl Kinematics {
    pub fn point_position(&self, body: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        self.pos[body] + self.rot[body] * offset
    }

    pub fn point_velocity(&self, body: usize, offset: &Vector3<f64>) -> Vector3<f64> {
        let v = &self.vel[body];
        let w = v.fixed_rows::<3>(0).into_owned();
        let lin = v.fixed_rows::<3>(3).into_owned();
        self.rot[body] * (lin + w.cross(offset))
    }

    /// Body-coordinate wrench of a world-frame force applied at a world point.
    pub fn wrench_at(&self, body: usize, point: &Vector3<f64>, force: &Vector3<f64>) -> SpatialVec {
        let rt = self.rot[body].transpose();
        let f = rt * force;
        let r = rt * (point - self.pos[body]);
        let n = r.cross(&f);
        SpatialVec::new(n.x, n.y, n.z, f.x, f.y, f.z)
    }
}

#[derive(Debug, Clone)]
pub struct Multibody {
    root: Root,
    root_inertia: SpatialMat,
    root_mass: f64,
    root_com: Vector3<f64>,
    bodies: Vec<Body>,
}

impl Multibody {
    pub fn new(
        root: Root,
        root_mass: f64,
        root_com: Vector3<f64>,
        root_inertia: Matrix3<f64>,
        defs: Vec<BodyDef>,
    ) -> Result<Self> {
        let mut bodies = Vec::with_capacity(defs.len());
        for (i, d) in defs.into_iter().enumerate() {
            if d.parent > i {
                return Err(Error::validation(
                    "multibody",
                    format!(
                        "body {} lists parent {} which is not defined before it",
                        i + 1,
                        d.parent
                    ),
                ));
            }
            let axis = d.axis.normalize();
            bodies.push(Body {
                parent: d.parent,
                origin: d.origin,
                axis,
                motion: SpatialVec::new(axis.x, axis.y, axis.z, 0.0, 0.0, 0.0),
                inertia: spatial_inertia(d.mass, &d.com, &d.inertia),
                mass: d.mass,
                com: d.com,
            });
        }
        Ok(Self {
            root,
            root_inertia: spatial_inertia(root_mass, &root_com, &root_inertia),
            root_mass,
            root_com,
            bodies,
        })
    }

    pub fn root(&self) -> Root {
        self.root
    }

    pub fn num_joints(&self) -> usize {
        self.bodies.len()
    }

    fn root_dofs(&self) -> usize {
        match self.root {
            Root::Fixed => 0,
            Root::Floating => 6,
        }
    }

    pub fn num_dofs(&self) -> usize {
        self.root_dofs() + self.bodies.len()
    }

    pub fn kinematics(&self, st: &MultibodyState) -> Kinematics {
        let n = self.bodies.len() + 1;
        let mut rot = Vec::with_capacity(n);
        let mut pos = Vec::with_capacity(n);
        let mut vel = Vec::with_capacity(n);
        let mut xup = Vec::with_capacity(n);
        rot.push(*st.base_rot.to_rotation_matrix().matrix());
        pos.push(st.base_pos);
        vel.push(match self.root {
            Root::Fixed => SpatialVec::zeros(),
            Root::Floating => st.base_twist,
        });
        xup.push(SpatialMat::identity());
        for (i, b) in self.bodies.iter().enumerate() {
            let joint_rot = *nalgebra::Rotation3::from_axis_angle(
                &nalgebra::Unit::new_unchecked(b.axis),
                st.q[i],
            )
            .matrix();
            let x = plucker(&joint_rot, &b.origin);
            let p = b.parent;
            rot.push(rot[p] * joint_rot);
            pos.push(pos[p] + rot[p] * b.origin);
            vel.push(x * vel[p] + b.motion * st.qd[i]);
            xup.push(x);
        }
        Kinematics { rot, pos, vel, xup }
    }

    /// Joint-space mass matrix via the composite rigid body algorithm.
    pub fn mass_matrix(&self, kin: &Kinematics) -> DMatrix<f64> {
        let r = self.root_dofs();
        let nd = self.num_dofs();
        let mut h = DMatrix::zeros(nd, nd);
        let mut ic: Vec<SpatialMat> = std::iter::once(self.root_inertia)
            .chain(self.bodies.iter().map(|b| b.inertia))
            .collect();
        for i in (1..ic.len()).rev() {
            let x = &kin.xup[i];
            let add = x.transpose() * ic[i] * x;
            let p = self.bodies[i - 1].parent;
            ic[p] += add;
        }
        if r == 6 {
            h.view_mut((0, 0), (6, 6)).copy_from(&ic[0]);
        }
        for i in 1..ic.len() {
            let di = r + i - 1;
            let s = &self.bodies[i - 1].motion;
            let mut f = ic[i] * s;
            h[(di, di)] = s.dot(&f);
            let mut j = i;
            loop {
                let parent = self.bodies[j - 1].parent;
                f = kin.xup[j].transpose() * f;
                if parent == 0 {
                    if r == 6 {
                        for k in 0..6 {
                            h[(di, k)] = f[k];
                            h[(k, di)] = f[k];
                        }
                    }
                    break;
                }
                j = parent;
                let dj = r + j - 1;
                let v = f.dot(&self.bodies[j - 1].motion);
                h[(di, dj)] = v;
                h[(dj, di)] = v;
            }
        }
        h
    }

    /// Generalized bias force `C(q, qd)` including gravity (magnitude `g`
    /// along world -z) and the given body-coordinate external wrenches.
    pub fn bias_forces(
        &self,
        kin: &Kinematics,
        qd: &DVector<f64>,
        g: f64,
        ext: &[SpatialVec],
    ) -> DVector<f64> {
        let r = self.root_dofs();
        let n = self.bodies.len() + 1;
        let g_root = kin.rot[0].transpose() * Vector3::new(0.0, 0.0, g);
        let mut acc = Vec::with_capacity(n);
        acc.push(SpatialVec::new(0.0, 0.0, 0.0, g_root.x, g_root.y, g_root.z));
        let mut f = Vec::with_capacity(n);
        let v0 = &kin.vel[0];
        f.push(self.root_inertia * acc[0] + cross_force(v0) * (self.root_inertia * v0) - ext[0]);
        for (i, b) in self.bodies.iter().enumerate() {
            let k = i + 1;
            let vj = b.motion * qd[i];
            let a = kin.xup[k] * acc[b.parent] + cross_motion(&kin.vel[k]) * vj;
            let v = &kin.vel[k];
            f.push(b.inertia * a + cross_force(v) * (b.inertia * v) - ext[k]);
            acc.push(a);
        }
        let mut c = DVector::zeros(self.num_dofs());
        for k in (1..n).rev() {
            let b = &self.bodies[k - 1];
            c[r + k - 1] = b.motion.dot(&f[k]);
            let up = kin.xup[k].transpose() * f[k];
            f[b.parent] += up;
        }
        if r == 6 {
            c.rows_mut(0, 6).copy_from(&f[0]);
        }
        c
    }

    /// World-frame linear velocity Jacobian (3 x dofs) of a point rigidly
    /// attached to `body`, given by its world position.
    pub fn point_jacobian(
        &self,
        kin: &Kinematics,
        body: usize,
        point: &Vector3<f64>,
    ) -> DMatrix<f64> {
        let r = self.root_dofs();
        let mut j = DMatrix::zeros(3, self.num_dofs());
        let mut k = body;
        while k != 0 {
            let b = &self.bodies[k - 1];
            let axis = kin.rot[k] * b.axis;
            let col = axis.cross(&(point - kin.pos[k]));
            j.fixed_view_mut::<3, 1>(0, r + k - 1).copy_from(&col);
            k = b.parent;
        }
        if r == 6 {
            let rot = kin.rot[0];
            let r0 = rot.transpose() * (point - kin.pos[0]);
            j.fixed_view_mut::<3, 3>(0, 0)
                .copy_from(&(-rot * skew(&r0)));
            j.fixed_view_mut::<3, 3>(0, 3).copy_from(&rot);
        }
        j
    }

    /// Generalized accelerations for joint torques `tau` (length = joints).
    pub fn forward_dynamics(
        &self,
        st: &MultibodyState,
        kin: &Kinematics,
        tau: &[f64],
        g: f64,
        ext: &[SpatialVec],
    ) -> Option<DVector<f64>> {
        let r = self.root_dofs();
        let h = self.mass_matrix(kin);
        let c = self.bias_forces(kin, &st.qd, g, ext);
        let mut rhs = -c;
        for (i, t) in tau.iter().enumerate() {
            rhs[r + i] += t;
        }
        h.cholesky().map(|ch| ch.solve(&rhs))
    }

    /// One semi-implicit Euler step: velocities from the accelerations first,
    /// then positions from the new velocities.
    pub fn integrate(&self, st: &mut MultibodyState, acc: &DVector<f64>, dt: f64) {
        let r = self.root_dofs();
        if r == 6 {
            let rot = *st.base_rot.to_rotation_matrix().matrix();
            let w = st.base_twist.fixed_rows::<3>(0).into_owned();
            let v_body = st.base_twist.fixed_rows::<3>(3).into_owned();
            let a_ang = Vector3::new(acc[0], acc[1], acc[2]);
            let a_lin = Vector3::new(acc[3], acc[4], acc[5]);
            let v_world = rot * v_body + dt * (rot * (a_lin + w.cross(&v_body)));
            let w_new = w + dt * a_ang;
            st.base_pos += dt * v_world;
            let q = st.base_rot * UnitQuaternion::from_scaled_axis(w_new * dt);
            st.base_rot = UnitQuaternion::new_normalize(q.into_inner());
            let v_body_new = st.base_rot.inverse() * v_world;
            st.base_twist = SpatialVec::new(
                w_new.x,
                w_new.y,
                w_new.z,
                v_body_new.x,
                v_body_new.y,
                v_body_new.z,
            );
        }
        for i in 0..self.bodies.len() {
            st.qd[i] += dt * acc[r + i];
            st.q[i] += dt * st.qd[i];
        }
    }

    /// Kinetic plus gravitational potential energy.
    pub fn energy(&self, st: &MultibodyState, g: f64) -> f64 {
        let kin = self.kinematics(st);
        let h = self.mass_matrix(&kin);
        let r = self.root_dofs();
        let mut nu = DVector::zeros(self.num_dofs());
        if r == 6 {
            nu.rows_mut(0, 6).copy_from(&st.base_twist);
        }
        nu.rows_mut(r, self.bodies.len()).copy_from(&st.qd);
        let ke = 0.5 * nu.dot(&(&h * &nu));
        let mut pe = 0.0;
        if r == 6 {
            pe += self.root_mass * g * kin.point_position(0, &self.root_com).z;
        }
        for (i, b) in self.bodies.iter().enumerate() {
            pe += b.mass * g * kin.point_position(i + 1, &b.com).z;
        }
        ke + pe
    }
}
