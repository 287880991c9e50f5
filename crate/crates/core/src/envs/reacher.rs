//! Two-link planar arm with point masses at the elbow and the tip.
//!
//! Joint angles are measured from the plane's x axis. When the plane is
//! tilted by `plane_tilt`, gravity of magnitude `g * gravity_scale * sin(tilt)`
//! acts along -y inside the plane, so the arm hangs at `theta1 = -pi/2`.

use crate::data::{Action, Observation};
use crate::error::{Error, Result};

use super::EnvParams;

pub const OBS_DIM: usize = 10;
pub const ACT_DIM: usize = 2;

/// Beyond this joint speed the simulation is considered unstable.
pub const MAX_JOINT_SPEED: f64 = 50.0;

/// Targets are drawn uniformly over this annulus around the shoulder.
/// RK4 steps per substep. The arm is light relative to its actuators, so a
/// single RK4 step per substep is not accurate enough at full torque.
pub const RK4_SPLIT: usize = 8;

pub const TARGET_RADIUS: (f64, f64) = (0.05, 0.2);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReacherState {
    pub theta: [f64; 2],
    pub omega: [f64; 2],
    pub target: [f64; 2],
}

impl ReacherState {
    pub fn at_rest(target: [f64; 2]) -> Self {
        Self {
            theta: [0.0, 0.0],
            omega: [0.0, 0.0],
            target,
        }
    }
}

pub fn in_plane_gravity(p: &EnvParams) -> f64 {
    p.gravity * p.gravity_scale * p.plane_tilt.sin()
}

pub fn tip(p: &EnvParams, theta: [f64; 2]) -> [f64; 2] {
    let a12 = theta[0] + theta[1];
    [
        p.link1 * theta[0].cos() + p.link2 * a12.cos(),
        p.link1 * theta[0].sin() + p.link2 * a12.sin(),
    ]
}

pub fn mass_matrix(p: &EnvParams, theta2: f64) -> [[f64; 2]; 2] {
    let (m1, m2, l1, l2) = (p.mass1, p.mass2, p.link1, p.link2);
    let c2 = theta2.cos();
    let m22 = m2 * l2 * l2;
    let m12 = m22 + m2 * l1 * l2 * c2;
    let m11 = (m1 + m2) * l1 * l1 + m22 + 2.0 * m2 * l1 * l2 * c2;
    [[m11, m12], [m12, m22]]
}

/// Kinetic energy `0.5 * qdot^T M(q) qdot`.
pub fn kinetic_energy(p: &EnvParams, s: &ReacherState) -> f64 {
    let m = mass_matrix(p, s.theta[1]);
    let [w1, w2] = s.omega;
    0.5 * (m[0][0] * w1 * w1 + 2.0 * m[0][1] * w1 * w2 + m[1][1] * w2 * w2)
}

/// Joint accelerations `M^-1 (tau - C qdot - G)`.
pub fn joint_accel(
    p: &EnvParams,
    g_eff: f64,
    theta: [f64; 2],
    omega: [f64; 2],
    tau: [f64; 2],
) -> [f64; 2] {
    let (m1, m2, l1, l2) = (p.mass1, p.mass2, p.link1, p.link2);
    let m = mass_matrix(p, theta[1]);
    let s2 = theta[1].sin();
    let h = m2 * l1 * l2 * s2;
    let coriolis = [
        -h * (2.0 * omega[0] * omega[1] + omega[1] * omega[1]),
        h * omega[0] * omega[0],
    ];
    let c12 = (theta[0] + theta[1]).cos();
    let grav = [
        g_eff * ((m1 + m2) * l1 * theta[0].cos() + m2 * l2 * c12),
        g_eff * m2 * l2 * c12,
    ];
    let rhs = [
        tau[0] - coriolis[0] - grav[0],
        tau[1] - coriolis[1] - grav[1],
    ];
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    [
        (m[1][1] * rhs[0] - m[0][1] * rhs[1]) / det,
        (m[0][0] * rhs[1] - m[1][0] * rhs[0]) / det,
    ]
}

fn rk4(
    p: &EnvParams,
    g_eff: f64,
    theta: [f64; 2],
    omega: [f64; 2],
    tau: [f64; 2],
    dt: f64,
) -> ([f64; 2], [f64; 2]) {
    let add = |x: [f64; 2], d: [f64; 2], h: f64| [x[0] + h * d[0], x[1] + h * d[1]];
    let k1v = joint_accel(p, g_eff, theta, omega, tau);
    let k1x = omega;
    let k2v = joint_accel(
        p,
        g_eff,
        add(theta, k1x, dt / 2.0),
        add(omega, k1v, dt / 2.0),
        tau,
    );
    let k2x = add(omega, k1v, dt / 2.0);
    let k3v = joint_accel(
        p,
        g_eff,
        add(theta, k2x, dt / 2.0),
        add(omega, k2v, dt / 2.0),
        tau,
    );
    let k3x = add(omega, k2v, dt / 2.0);
    let k4v = joint_accel(p, g_eff, add(theta, k3x, dt), add(omega, k3v, dt), tau);
    let k4x = add(omega, k3v, dt);
    let comb = |a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2], i: usize| {
        (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]) * dt / 6.0
    };
    (
        [
            theta[0] + comb(k1x, k2x, k3x, k4x, 0),
            theta[1] + comb(k1x, k2x, k3x, k4x, 1),
        ],
        [
            omega[0] + comb(k1v, k2v, k3v, k4v, 0),
            omega[1] + comb(k1v, k2v, k3v, k4v, 1),
        ],
    )
}

/// Torques applied for a clipped action.
pub fn torques(p: &EnvParams, action: &Action) -> [f64; 2] {
    let a = action.clipped();
    [
        p.torque_scale * p.torque_max * a[0],
        p.torque_scale * p.torque_max * a[1],
    ]
}

/// Advance one control step (`substeps` substeps of `dt`, each integrated
/// with `RK4_SPLIT` classical RK4 steps). Returns the new
/// state, the reward at the new state, and whether the speed bound was hit.
pub fn reacher_step(s: &ReacherState, action: &Action, p: &EnvParams) -> (ReacherState, f64, bool) {
    let tau = torques(p, action);
    let g_eff = in_plane_gravity(p);
    let (mut theta, mut omega) = (s.theta, s.omega);
    let mut unstable = false;
    let h = p.dt / RK4_SPLIT as f64;
    for _ in 0..p.substeps {
        for _ in 0..RK4_SPLIT {
            (theta, omega) = rk4(p, g_eff, theta, omega, tau, h);
        }
        if !(omega[0].abs() <= MAX_JOINT_SPEED && omega[1].abs() <= MAX_JOINT_SPEED) {
            unstable = true;
            break;
        }
    }
    let next = ReacherState {
        theta,
        omega,
        target: s.target,
    };
    (next, reward(p, &next), unstable)
}

pub fn reward(p: &EnvParams, s: &ReacherState) -> f64 {
    let t = tip(p, s.theta);
    -((t[0] - s.target[0]).powi(2) + (t[1] - s.target[1]).powi(2)).sqrt()
}

pub fn observe(s: &ReacherState, p: &EnvParams) -> Observation {
    let t = tip(p, s.theta);
    Observation::new(vec![
        s.theta[0].cos(),
        s.theta[0].sin(),
        s.theta[1].cos(),
        s.theta[1].sin(),
        s.omega[0],
        s.omega[1],
        s.target[0],
        s.target[1],
        t[0] - s.target[0],
        t[1] - s.target[1],
    ])
}

/// Inverse of [`observe`]: angles via `atan2`, speeds and target read back.
pub fn reconstruct(o: &Observation) -> Result<ReacherState> {
    if o.len() != OBS_DIM {
        return Err(Error::Shape {
            context: "reacher observation",
            expected: OBS_DIM,
            got: o.len(),
        });
    }
    if !o.is_finite() {
        return Err(Error::Reconstruction("non-finite reacher observation".into()));
    }
    for (c, s) in [(o[0], o[1]), (o[2], o[3])] {
        if c.hypot(s) < 1e-9 {
            return Err(Error::Reconstruction(
                "joint angle undefined: cos and sin both vanish".into(),
            ));
        }
    }
    Ok(ReacherState {
        theta: [o[1].atan2(o[0]), o[3].atan2(o[2])],
        omega: [o[4], o[5]],
        target: [o[6], o[7]],
    })
}
