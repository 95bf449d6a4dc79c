//! The per-volume and per-slice transformations.

use super::InputMode;
use crate::nn::Matrix;
use crate::phantom::Grid3;
use crate::{Error, Result};

/// Trilinearly resamples a CT grid onto the PET geometry. Both grids share
/// a physical origin; voxel centers sit at (i + 0.5) * spacing. Samples just
/// outside the CT grid replicate the border; a PET sample farther than one
/// CT voxel outside means the geometries do not overlap and is rejected.
pub fn resample_ct_to_pet(
    ct: &Grid3<f32>,
    ct_spacing: (f64, f64, f64),
    pet_dims: (usize, usize, usize),
    pet_spacing: (f64, f64, f64),
) -> Result<Grid3<f32>> {
    for (s, name) in [(ct_spacing, "ct"), (pet_spacing, "pet")] {
        if s.0 <= 0.0 || s.1 <= 0.0 || s.2 <= 0.0 {
            return Err(Error::invalid(format!("{name} spacing {s:?} must be positive")));
        }
    }
    let (cnx, cny, cnz) = ct.dims();
    let (pnx, pny, pnz) = pet_dims;
    if pnx == 0 || pny == 0 || pnz == 0 {
        return Err(Error::invalid("pet dims must be nonzero"));
    }
    // reject geometries whose extents do not overlap: the farthest PET
    // sample must land within one CT voxel of the CT extent
    let check = |pn: usize, ps: f64, cn: usize, cs: f64, axis: &str| -> Result<()> {
        let last_sample = (pn as f64 - 0.5) * ps;
        if last_sample > cn as f64 * cs + cs {
            return Err(Error::invalid(format!(
                "pet extent {:.1} mm exceeds ct extent {:.1} mm on {axis}",
                pn as f64 * ps,
                cn as f64 * cs
            )));
        }
        Ok(())
    };
    check(pnx, pet_spacing.0, cnx, ct_spacing.0, "x")?;
    check(pny, pet_spacing.1, cny, ct_spacing.1, "y")?;
    check(pnz, pet_spacing.2, cnz, ct_spacing.2, "z")?;

    let mut out = Vec::with_capacity(pnx * pny * pnz);
    for k in 0..pnz {
        let (k0, k1, fz) = axis_lerp((k as f64 + 0.5) * pet_spacing.2, ct_spacing.2, cnz);
        for j in 0..pny {
            let (j0, j1, fy) = axis_lerp((j as f64 + 0.5) * pet_spacing.1, ct_spacing.1, cny);
            for i in 0..pnx {
                let (i0, i1, fx) = axis_lerp((i as f64 + 0.5) * pet_spacing.0, ct_spacing.0, cnx);
                let c = |ii: usize, jj: usize, kk: usize| f64::from(ct.at(ii, jj, kk));
                let lerp = |a: f64, b: f64, f: f64| a * (1.0 - f) + b * f;
                let v = lerp(
                    lerp(
                        lerp(c(i0, j0, k0), c(i1, j0, k0), fx),
                        lerp(c(i0, j1, k0), c(i1, j1, k0), fx),
                        fy,
                    ),
                    lerp(
                        lerp(c(i0, j0, k1), c(i1, j0, k1), fx),
                        lerp(c(i0, j1, k1), c(i1, j1, k1), fx),
                        fy,
                    ),
                    fz,
                );
                out.push(v as f32);
            }
        }
    }
    Grid3::from_vec(pnx, pny, pnz, out)
}

/// Neighbor indices and interpolation weight along one axis, with border
/// replication.
fn axis_lerp(physical: f64, spacing: f64, n: usize) -> (usize, usize, f64) {
    let u = physical / spacing - 0.5;
    if u <= 0.0 {
        return (0, 0, 0.0);
    }
    if u >= (n - 1) as f64 {
        return (n - 1, n - 1, 0.0);
    }
    let i0 = u.floor() as usize;
    (i0, i0 + 1, u - i0 as f64)
}

/// Replaces each voxel by the median of its window x window x window
/// neighborhood, replicating the border outward.
pub fn median_filter_3d(grid: &Grid3<f32>, window: usize) -> Result<Grid3<f32>> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::invalid(format!(
            "median filter window {window} must be odd"
        )));
    }
    let (nx, ny, nz) = grid.dims();
    let half = (window / 2) as isize;
    let mut out = Vec::with_capacity(nx * ny * nz);
    let mut buf: Vec<f32> = Vec::with_capacity(window.pow(3));
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                buf.clear();
                for dk in -half..=half {
                    let kk = clamp(k as isize + dk, nz);
                    for dj in -half..=half {
                        let jj = clamp(j as isize + dj, ny);
                        for di in -half..=half {
                            let ii = clamp(i as isize + di, nx);
                            buf.push(grid.at(ii, jj, kk));
                        }
                    }
                }
                let mid = buf.len() / 2;
                let (_, median, _) = buf.select_nth_unstable_by(mid, f32::total_cmp);
                out.push(*median);
            }
        }
    }
    Grid3::from_vec(nx, ny, nz, out)
}

/// Clips PET values to [0, 50] SUV and divides by 50. Negative input
/// violates the PET invariant and is rejected.
pub fn normalize_pet_slice(slice: &Matrix<f32>) -> Result<Matrix<f32>> {
    if let Some(v) = slice.data().iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::invalid(format!(
            "PET slice holds negative or non-finite value {v}"
        )));
    }
    let data = slice.data().iter().map(|v| v.min(50.0) / 50.0).collect();
    Matrix::from_vec(slice.rows(), slice.cols(), data)
}

/// Clips CT values to [-1024, 1024] HU and maps them affinely onto [0, 1].
pub fn normalize_ct_slice(slice: &Matrix<f32>) -> Matrix<f32> {
    let data = slice
        .data()
        .iter()
        .map(|v| (v.clamp(-1024.0, 1024.0) + 1024.0) / 2048.0)
        .collect();
    Matrix::from_vec(slice.rows(), slice.cols(), data).expect("same dims")
}

/// Bilinear resize with corner-aligned sampling: output corners map exactly
/// onto input corners.
pub fn resize_slice(slice: &Matrix<f32>, target: (usize, usize)) -> Result<Matrix<f32>> {
    let (th, tw) = target;
    if th < 2 || tw < 2 {
        return Err(Error::invalid(format!(
            "resize target {target:?} must be at least 2x2"
        )));
    }
    let (h, w) = (slice.rows(), slice.cols());
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!(
            "resize source {h}x{w} must be at least 2x2"
        )));
    }
    if (th, tw) == (h, w) {
        return Ok(slice.clone());
    }
    let mut out = Vec::with_capacity(th * tw);
    let sy = (h - 1) as f64 / (th - 1) as f64;
    let sx = (w - 1) as f64 / (tw - 1) as f64;
    for oy in 0..th {
        let y = oy as f64 * sy;
        let y0 = (y.floor() as usize).min(h - 2);
        let fy = y - y0 as f64;
        for ox in 0..tw {
            let x = ox as f64 * sx;
            let x0 = (x.floor() as usize).min(w - 2);
            let fx = x - x0 as f64;
            let g = |r: usize, c: usize| f64::from(slice.at(r, c));
            let top = g(y0, x0) * (1.0 - fx) + g(y0, x0 + 1) * fx;
            let bot = g(y0 + 1, x0) * (1.0 - fx) + g(y0 + 1, x0 + 1) * fx;
            out.push((top * (1.0 - fy) + bot * fy) as f32);
        }
    }
    Matrix::from_vec(th, tw, out)
}

/// Stacks normalized slices into the 3-channel input: [PET, PET, PET] or
/// [PET, PET, CT], channel-major.
pub fn assemble_input(pet: &Matrix<f32>, ct: &Matrix<f32>, mode: InputMode) -> Result<Vec<f32>> {
    if pet.rows() != ct.rows() || pet.cols() != ct.cols() {
        return Err(Error::shape(format!(
            "pet slice {}x{} vs ct slice {}x{}",
            pet.rows(),
            pet.cols(),
            ct.rows(),
            ct.cols()
        )));
    }
    let mut input = Vec::with_capacity(3 * pet.data().len());
    input.extend_from_slice(pet.data());
    input.extend_from_slice(pet.data());
    match mode {
        InputMode::Ppp => input.extend_from_slice(pet.data()),
        InputMode::Ppc => input.extend_from_slice(ct.data()),
    }
    Ok(input)
}
