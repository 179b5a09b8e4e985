//! Angle wrapping and sign-symmetric trigonometry.

use std::f64::consts::PI;

/// Wraps an angle to `(-pi, pi]`.
///
/// Angles already in range are returned bit-identical, so repeated wrapping
/// is a no-op.
pub fn wrap_angle(a: f64) -> f64 {
    if a > -PI && a <= PI {
        return a;
    }
    let two_pi = 2.0 * PI;
    let mut x = a.rem_euclid(two_pi);
    if x > PI {
        x -= two_pi;
    }
    x
}

/// Wraps an angle to `(-pi/2, pi/2]`, identifying `theta` with `theta + pi`.
///
/// Useful for comparing orientations of an axis rather than a heading.
pub fn wrap_axis(a: f64) -> f64 {
    let x = wrap_angle(a);
    if x > PI / 2.0 {
        x - PI
    } else if x <= -PI / 2.0 {
        x + PI
    } else {
        x
    }
}

/// `(sin a, cos a)` with sine exactly odd and cosine exactly even in `a`.
///
/// Computed on `|a|` with the sign reapplied, so mirrored geometry
/// (`a -> -a`) produces bitwise-negated sines. Plain libm implementations do
/// not guarantee this symmetry.
pub fn sin_cos(a: f64) -> (f64, f64) {
    let s = a.abs().sin();
    let c = a.abs().cos();
    (if a.is_sign_negative() { -s } else { s }, c)
}

/// `atan2(y, x)` exactly odd in `y`.
pub fn atan2(y: f64, x: f64) -> f64 {
    let v = y.abs().atan2(x);
    if y.is_sign_negative() {
        -v
    } else {
        v
    }
}
