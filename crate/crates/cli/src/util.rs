//! Small numeric helpers shared by the subcommands.

use vor_core::{Mat3, Vec3};

/// Rotation angle of `r` in radians, from the trace identity.
pub fn rotation_angle(r: &Mat3) -> f64 {
    (((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0)).acos()
}

/// Unsigned angle between two nonzero vectors, in radians.
pub fn angle_between(a: &Vec3, b: &Vec3) -> f64 {
    (a.normalize().dot(&b.normalize())).clamp(-1.0, 1.0).acos()
}

/// Median of a finite sample; the mean of the middle pair for even sizes.
/// Panics on an empty slice.
pub fn median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sample");
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Makes free-form text safe as the last field of a CSV row.
pub fn csv_safe(text: &str) -> String {
    text.replace(['\n', '\r'], " ").replace(',', ";")
}
