use crate::error::{Error, Result};

/// Reference coordinates of the four element corners (counterclockwise).
pub const REFERENCE_CORNERS: [[f64; 2]; 4] = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];

const LOCAL_TOL: f64 = 1e-12;

fn check_local(local: [f64; 2]) -> Result<()> {
    if local.iter().all(|c| c.is_finite() && c.abs() <= 1.0 + LOCAL_TOL) {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "local coordinates ({}, {}) outside the reference element",
            local[0], local[1]
        )))
    }
}

/// Bilinear basis values at a reference point.
pub fn shape_values(local: [f64; 2]) -> Result<[f64; 4]> {
    check_local(local)?;
    Ok(values_unchecked(local))
}

/// Physical-space gradients of the four bilinear basis functions for an
/// element of size `spacing = (hx, hy)`.
pub fn shape_gradients(local: [f64; 2], spacing: [f64; 2]) -> Result<[[f64; 2]; 4]> {
    check_local(local)?;
    if !(spacing[0] > 0.0 && spacing[1] > 0.0) {
        return Err(Error::Config(format!("non-positive element size {spacing:?}")));
    }
    Ok(gradients_unchecked(local, spacing))
}

#[inline]
pub(crate) fn values_unchecked(local: [f64; 2]) -> [f64; 4] {
    let [xi, eta] = local;
    let mut out = [0.0; 4];
    for (a, c) in REFERENCE_CORNERS.iter().enumerate() {
        out[a] = 0.25 * (1.0 + c[0] * xi) * (1.0 + c[1] * eta);
    }
    out
}

#[inline]
pub(crate) fn gradients_unchecked(local: [f64; 2], spacing: [f64; 2]) -> [[f64; 2]; 4] {
    let [xi, eta] = local;
    let sx = 2.0 / spacing[0];
    let sy = 2.0 / spacing[1];
    let mut out = [[0.0; 2]; 4];
    for (a, c) in REFERENCE_CORNERS.iter().enumerate() {
        out[a] = [
            0.25 * c[0] * (1.0 + c[1] * eta) * sx,
            0.25 * c[1] * (1.0 + c[0] * xi) * sy,
        ];
    }
    out
}
