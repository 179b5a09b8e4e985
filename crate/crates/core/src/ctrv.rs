//! Constant-turn-rate-and-velocity kinematics for the EKF.
//!
//! State: `(x, y, heading, speed, yaw_rate)` in `(m, m, rad, m/s, rad/s)`.

use nalgebra::{Matrix5, Matrix5x2, Vector5};

use crate::angles::wrap_angle;

/// Planar kinematic state.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct KinState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

impl KinState {
    pub fn to_vector(&self) -> Vector5<f64> {
        Vector5::new(self.x, self.y, self.heading, self.speed, self.yaw_rate)
    }

    pub fn from_vector(v: &Vector5<f64>) -> Self {
        Self {
            x: v[0],
            y: v[1],
            heading: wrap_angle(v[2]),
            speed: v[3],
            yaw_rate: v[4],
        }
    }
}

const OMEGA_EPS: f64 = 1e-6;

/// Propagates the state by `dt`.
pub fn predict_state(s: &KinState, dt: f64) -> KinState {
    let (sp, cp) = (s.heading.sin(), s.heading.cos());
    let (x, y) = if s.yaw_rate.abs() > OMEGA_EPS {
        let psi1 = s.heading + s.yaw_rate * dt;
        let r = s.speed / s.yaw_rate;
        (
            s.x + r * (psi1.sin() - sp),
            s.y + r * (cp - psi1.cos()),
        )
    } else {
        (s.x + s.speed * cp * dt, s.y + s.speed * sp * dt)
    };
    KinState {
        x,
        y,
        heading: wrap_angle(s.heading + s.yaw_rate * dt),
        speed: s.speed,
        yaw_rate: s.yaw_rate,
    }
}

/// Jacobian of [`predict_state`] at `s`.
pub fn jacobian(s: &KinState, dt: f64) -> Matrix5<f64> {
    let mut f = Matrix5::identity();
    let (sp, cp) = (s.heading.sin(), s.heading.cos());
    if s.yaw_rate.abs() > OMEGA_EPS {
        let w = s.yaw_rate;
        let v = s.speed;
        let psi1 = s.heading + w * dt;
        let (s1, c1) = (psi1.sin(), psi1.cos());
        f[(0, 2)] = v / w * (c1 - cp);
        f[(0, 3)] = (s1 - sp) / w;
        f[(0, 4)] = v * (dt * c1 * w - (s1 - sp)) / (w * w);
        f[(1, 2)] = v / w * (s1 - sp);
        f[(1, 3)] = (cp - c1) / w;
        f[(1, 4)] = v * (dt * s1 * w - (cp - c1)) / (w * w);
    } else {
        let v = s.speed;
        f[(0, 2)] = -v * sp * dt;
        f[(0, 3)] = cp * dt;
        f[(0, 4)] = -0.5 * v * sp * dt * dt;
        f[(1, 2)] = v * cp * dt;
        f[(1, 3)] = sp * dt;
        f[(1, 4)] = 0.5 * v * cp * dt * dt;
    }
    f[(2, 4)] = dt;
    f
}

/// Process noise from white linear/yaw acceleration.
pub fn process_noise(s: &KinState, dt: f64, accel_std: f64, yaw_accel_std: f64) -> Matrix5<f64> {
    let (sp, cp) = (s.heading.sin(), s.heading.cos());
    let half = 0.5 * dt * dt;
    #[rustfmt::skip]
    let g = Matrix5x2::new(
        half * cp, 0.0,
        half * sp, 0.0,
        0.0,       half,
        dt,        0.0,
        0.0,       dt,
    );
    let q = nalgebra::Matrix2::from_diagonal(&nalgebra::Vector2::new(
        accel_std * accel_std,
        yaw_accel_std * yaw_accel_std,
    ));
    g * q * g.transpose()
}
