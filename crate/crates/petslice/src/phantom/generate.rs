//! Cohort synthesis: parametric anatomy, planned tumor placement, and
//! per-slice ground truth.

use super::{CenterProfile, Grid3, PatientVolume, TumorSpec};
use crate::seed::{derive_seed, derive_seed_indexed, rng_from};
use crate::{Error, Result};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Tumor mask threshold as a fraction of the tumor's SUVmax.
pub const MASK_THRESHOLD_FRACTION: f64 = 0.41;

/// CT value below which a voxel does not count as body tissue (air, lung).
const BODY_HU_FLOOR: f64 = -500.0;

/// Axial band (as fractions of the z extent) where tumors are planted:
/// above the bladder analog, below the lowest voxel any lung can reach.
const BAND_LO_FRAC: f64 = 0.16;
const BAND_END_FRAC: f64 = 0.555;

/// How far (mm) the 41%-of-peak mask boundary sits outside the flat-top
/// ellipsoid for a Gaussian shoulder of the given width.
pub fn mask_dilation_mm(falloff_mm: f64) -> f64 {
    falloff_mm * (-2.0 * MASK_THRESHOLD_FRACTION.ln()).sqrt()
}

/// Ground truth for one axial slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceTruth {
    pub slice: usize,
    pub label: u8,
    /// Max PET value over tumor-mask voxels in this slice; absent when the
    /// slice is negative.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tumor_suvmax: Option<f32>,
}

/// Center-wide appearance: the "scanner look" shared by every patient of a
/// center, derived from the profile's pattern seed.
struct CenterStyle {
    pet_level: f64,
    pet_noise_sd: f64,
    ct_soft_mean: f64,
    ct_noise_sd: f64,
    lung_hu: f64,
    tex_freq: f64,
    tex_amp_pet: f64,
    tex_amp_ct: f64,
    brain_suv: f64,
    bladder_suv: f64,
}

fn center_style(pattern: u64) -> CenterStyle {
    let mut rng = rng_from(derive_seed(pattern, "center-style"));
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    CenterStyle {
        pet_level: u(0.9, 1.4),
        pet_noise_sd: u(0.10, 0.20),
        ct_soft_mean: u(20.0, 60.0),
        ct_noise_sd: u(15.0, 30.0),
        lung_hu: u(-820.0, -700.0),
        tex_freq: u(1.5, 3.0),
        tex_amp_pet: u(0.06, 0.14),
        tex_amp_ct: u(20.0, 40.0),
        brain_suv: u(4.0, 7.0),
        bladder_suv: u(6.0, 12.0),
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipsoid {
    cx: f64,
    cy: f64,
    cz: f64,
    rx: f64,
    ry: f64,
    rz: f64,
}

impl Ellipsoid {
    fn contains(&self, x: f64, y: f64, z: f64) -> bool {
        let dx = (x - self.cx) / self.rx;
        let dy = (y - self.cy) / self.ry;
        let dz = (z - self.cz) / self.rz;
        dx * dx + dy * dy + dz * dz <= 1.0
    }
}

/// Patient-unique anatomy: body ellipse, organ analogs, and the texture
/// fingerprint that recurs on every slice of this patient.
struct Anatomy {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    lungs: [Ellipsoid; 2],
    brain: Ellipsoid,
    bladder: Ellipsoid,
    tex_freq: [f64; 2],
    tex_angle: [f64; 2],
    tex_phase: [f64; 2],
    pet_level: f64,
    ct_soft: f64,
    brain_suv: f64,
    bladder_suv: f64,
}

fn patient_anatomy(profile: &CenterProfile, style: &CenterStyle, idx: usize) -> Anatomy {
    let mut rng = rng_from(derive_seed_indexed(
        profile.background_organ_pattern,
        "anatomy",
        idx as u64,
    ));
    let (nx, ny, nz) = profile.dims;
    let (sx, sy, sz) = profile.spacing_mm;
    let (w, h, d) = (nx as f64 * sx, ny as f64 * sy, nz as f64 * sz);
    let mut u = move |lo: f64, hi: f64| rng.random_range(lo..hi);

    let rx = u(0.31, 0.41) * w;
    let ry = u(0.24, 0.33) * h;
    let cx = w / 2.0 + u(-0.03, 0.03) * w;
    let cy = h / 2.0 + u(-0.03, 0.03) * h;

    let lung_cz = u(0.68, 0.72) * d;
    let lung_rz = u(0.10, 0.12) * d;
    let lung = |side: f64, u: &mut dyn FnMut(f64, f64) -> f64| Ellipsoid {
        cx: cx + side * (0.42 + u(-0.05, 0.05)) * rx,
        cy: cy - 0.08 * ry + u(-0.05, 0.05) * ry,
        cz: lung_cz,
        rx: (0.30 + u(-0.04, 0.04)) * rx,
        ry: (0.55 + u(-0.05, 0.05)) * ry,
        rz: lung_rz,
    };
    let lungs = [lung(-1.0, &mut u), lung(1.0, &mut u)];

    let brain = Ellipsoid {
        cx: cx + u(-0.08, 0.08) * rx,
        cy: cy - 0.20 * ry + u(-0.08, 0.08) * ry,
        cz: u(0.89, 0.92) * d,
        rx: 0.20 * rx,
        ry: 0.25 * ry,
        rz: 0.045 * d,
    };
    let bladder = Ellipsoid {
        cx: cx + u(-0.10, 0.10) * rx,
        cy: cy + 0.15 * ry + u(-0.08, 0.08) * ry,
        cz: u(0.07, 0.11) * d,
        rx: 0.13 * rx,
        ry: 0.16 * ry,
        rz: 0.035 * d,
    };

    Anatomy {
        cx,
        cy,
        rx,
        ry,
        lungs,
        brain,
        bladder,
        tex_freq: [style.tex_freq * u(0.8, 1.2), style.tex_freq * u(1.3, 1.9)],
        tex_angle: [u(0.0, std::f64::consts::PI), u(0.0, std::f64::consts::PI)],
        tex_phase: [
            u(0.0, std::f64::consts::TAU),
            u(0.0, std::f64::consts::TAU),
        ],
        pet_level: style.pet_level * u(0.92, 1.08),
        ct_soft: style.ct_soft_mean + u(-8.0, 8.0),
        brain_suv: style.brain_suv * u(0.9, 1.1),
        bladder_suv: style.bladder_suv * u(0.9, 1.1),
    }
}

fn render_volume(
    profile: &CenterProfile,
    style: &CenterStyle,
    anatomy: &Anatomy,
    seed: u64,
    idx: usize,
) -> PatientVolume {
    let (nx, ny, nz) = profile.dims;
    let (sx, sy, sz) = profile.spacing_mm;
    let w = nx as f64 * sx;
    let mut rng = rng_from(derive_seed_indexed(seed, "voxel-noise", idx as u64));
    let gauss = Normal::new(0.0f64, 1.0).expect("unit normal");
    let a = anatomy;

    let mut vi = 0usize;
    let mut pet_buf = vec![0f32; nx * ny * nz];
    let mut ct_buf = vec![0f32; nx * ny * nz];
    for k in 0..nz {
        let z = (k as f64 + 0.5) * sz;
        for j in 0..ny {
            let y = (j as f64 + 0.5) * sy;
            for i in 0..nx {
                let x = (i as f64 + 0.5) * sx;
                let np = gauss.sample(&mut rng);
                let nc = gauss.sample(&mut rng);

                let ex = (x - a.cx) / a.rx;
                let ey = (y - a.cy) / a.ry;
                let (pv, cv) = if ex * ex + ey * ey > 1.0 {
                    (0.0, -1000.0 + nc * 4.0)
                } else {
                    let t1 = (std::f64::consts::TAU * a.tex_freq[0]
                        * (x * a.tex_angle[0].cos() + y * a.tex_angle[0].sin())
                        / w
                        + a.tex_phase[0])
                        .sin();
                    let t2 = (std::f64::consts::TAU * a.tex_freq[1]
                        * (x * a.tex_angle[1].cos() + y * a.tex_angle[1].sin())
                        / w
                        + a.tex_phase[1])
                        .sin();
                    let tex = (t1 + t2) * 0.5;
                    let in_lung = a.lungs.iter().any(|l| l.contains(x, y, z));
                    if in_lung {
                        (
                            0.25 * a.pet_level * (1.0 + style.tex_amp_pet * tex)
                                + np * style.pet_noise_sd * 0.3,
                            style.lung_hu + style.tex_amp_ct * tex * 0.3 + nc * style.ct_noise_sd,
                        )
                    } else if a.brain.contains(x, y, z) {
                        (
                            a.brain_suv * (1.0 + 0.05 * tex) + np * style.pet_noise_sd,
                            a.ct_soft + nc * style.ct_noise_sd,
                        )
                    } else if a.bladder.contains(x, y, z) {
                        (
                            a.bladder_suv * (1.0 + 0.05 * tex) + np * style.pet_noise_sd,
                            10.0 + nc * style.ct_noise_sd,
                        )
                    } else {
                        (
                            a.pet_level * (1.0 + style.tex_amp_pet * tex)
                                + np * style.pet_noise_sd,
                            a.ct_soft + style.tex_amp_ct * tex + nc * style.ct_noise_sd,
                        )
                    }
                };
                pet_buf[vi] = pv.max(0.0) as f32;
                ct_buf[vi] = cv as f32;
                vi += 1;
            }
        }
    }
    PatientVolume {
        patient_id: format!("{}_p{idx:03}", profile.name),
        center_id: profile.name.clone(),
        pet: Grid3::from_vec(nx, ny, nz, pet_buf).expect("sized buffer"),
        ct: Grid3::from_vec(nx, ny, nz, ct_buf).expect("sized buffer"),
        spacing_mm: profile.spacing_mm,
        tumor_mask: Grid3::new(nx, ny, nz),
    }
}

/// Slice band where tumor chunks may lie: inclusive start, exclusive end.
/// A chunk occupying [z0, z0+span) with z0+span <= end keeps its flat-top
/// core strictly below the lungs for any lung jitter.
fn tumor_band(nz: usize) -> (usize, usize) {
    let lo = (BAND_LO_FRAC * nz as f64).ceil() as usize;
    let end = ((BAND_END_FRAC * nz as f64).floor() as usize).min(nz);
    (lo, end)
}

/// Decomposes a positive-slice budget into odd z-spans (flat-top tumors
/// centered on a voxel plane always cover an odd number of slices).
fn split_spans(rng: &mut ChaCha8Rng, mut rem: usize) -> Vec<usize> {
    let mut spans = Vec::new();
    while rem >= 7 {
        let s = [3, 5, 7][rng.random_range(0..3usize)];
        spans.push(s);
        rem -= s;
    }
    match rem {
        0 => {}
        1 | 2 => spans.extend(std::iter::repeat(1).take(rem)),
        3 | 4 => {
            spans.push(3);
            if rem == 4 {
                spans.push(1);
            }
        }
        _ => {
            spans.push(5);
            if rem == 6 {
                spans.push(1);
            }
        }
    }
    spans
}

/// Plans the tumors for one patient: `s_p` positive slices apportioned into
/// z-chunks, `t_p` ml of TMTV apportioned into per-tumor mask volumes, then
/// sizes and places each flat-top ellipsoid inside the body.
fn plan_tumors(
    profile: &CenterProfile,
    anatomy: &Anatomy,
    rng: &mut ChaCha8Rng,
    s_p: usize,
    t_p: f64,
) -> Result<Vec<TumorSpec>> {
    let (_, _, nz) = profile.dims;
    let (sx, sy, sz) = profile.spacing_mm;
    let (band_lo, band_end) = tumor_band(nz);
    let band = band_end - band_lo;

    let body_ml =
        std::f64::consts::PI * anatomy.rx * anatomy.ry * (nz as f64 * sz) / 1000.0;
    if t_p > 0.22 * body_ml {
        return Err(Error::InvalidProfile(format!(
            "{}: per-patient tumor volume {t_p:.0} ml exceeds body capacity ({body_ml:.0} ml body)",
            profile.name
        )));
    }

    let spans = split_spans(rng, s_p);
    let m = spans.len();
    let total_span: usize = spans.iter().sum();
    debug_assert_eq!(total_span, s_p);
    if total_span > band {
        return Err(Error::InvalidProfile(format!(
            "{}: {total_span} positive slices do not fit the {band}-slice tumor band",
            profile.name
        )));
    }

    let a_max = 0.8 * anatomy.rx.min(anatomy.ry);
    let v_cap = |span: usize| {
        (4.0 / 3.0) * std::f64::consts::PI * (span as f64 * sz / 2.0) * a_max * a_max / 1000.0
    };

    // tumors per chunk, sized so each fits inside the body
    let mut chunk_tumors: Vec<usize> = Vec::with_capacity(m);
    for &span in &spans {
        let v_chunk = t_p * span as f64 / total_span as f64;
        let k = (v_chunk / (0.9 * v_cap(span))).ceil().max(1.0) as usize;
        if k > 6 {
            return Err(Error::InvalidProfile(format!(
                "{}: a {v_chunk:.0} ml tumor layer cannot be packed into the body cross-section",
                profile.name
            )));
        }
        chunk_tumors.push(k);
    }

    // draw a tumor count and top up chunks toward it
    let lambda = (profile.tumor_count_mean - 1.0).max(0.01);
    let draw = 1 + Poisson::new(lambda)
        .map_err(|e| Error::invalid(format!("tumor count distribution: {e}")))?
        .sample(rng) as usize;
    let n_target = draw.clamp(1, profile.tumor_count_max);
    let mut n_planned: usize = chunk_tumors.iter().sum();
    if n_planned > profile.tumor_count_max {
        return Err(Error::InvalidProfile(format!(
            "{}: needs {n_planned} tumors to satisfy volume targets but tumor_count_max is {}",
            profile.name, profile.tumor_count_max
        )));
    }
    let mut attempts = 0;
    while n_planned < n_target && attempts < 200 {
        let c = rng.random_range(0..m);
        let v_chunk = t_p * spans[c] as f64 / total_span as f64;
        if chunk_tumors[c] < 6 && v_chunk / (chunk_tumors[c] + 1) as f64 > 0.05 {
            chunk_tumors[c] += 1;
            n_planned += 1;
        }
        attempts += 1;
    }

    // scatter chunk z-starts (sorted cuts keep chunks disjoint in z)
    let free = band - total_span;
    let mut cuts: Vec<usize> = (0..m).map(|_| rng.random_range(0..=free)).collect();
    cuts.sort_unstable();

    let dil = mask_dilation_mm(1.0); // dilation per mm of falloff
    let mut specs: Vec<TumorSpec> = Vec::new();
    let mut placed: Vec<(f64, f64, f64, f64, usize)> = Vec::new(); // tx, ty, a', b', chunk
    let mut span_before = 0usize;
    for (ci, &span) in spans.iter().enumerate() {
        let z0 = band_lo + cuts[ci] + span_before;
        span_before += span;
        let k_c = z0 + (span - 1) / 2;
        let cd = span as f64 * sz / 2.0; // c + dilation
        let k_t = chunk_tumors[ci];
        let v_tumor_mm3 = t_p * span as f64 / total_span as f64 / k_t as f64 * 1000.0;

        for _ in 0..k_t {
            let max_f = ((cd - 1.0) / dil).max(0.3);
            let min_f = 0.8f64.min(max_f);
            let falloff = if max_f > min_f {
                rng.random_range(min_f..max_f)
            } else {
                max_f
            };
            let delta = mask_dilation_mm(falloff);
            let c_semi = cd - delta;

            let product = 3.0 * v_tumor_mm3 / (4.0 * std::f64::consts::PI * cd);
            let phi = if k_t > 1 {
                rng.random_range(0.55..0.80)
            } else {
                rng.random_range(0.75..1.35)
            };
            let mut ad = (product * phi).sqrt();
            let mut bd = (product / phi).sqrt();
            if ad > a_max {
                ad = a_max;
                bd = product / a_max;
            }
            if bd > a_max {
                bd = a_max;
                ad = product / a_max;
            }
            if ad > a_max || bd > a_max {
                return Err(Error::InvalidProfile(format!(
                    "{}: tumor cross-section {ad:.0}x{bd:.0} mm does not fit the body",
                    profile.name
                )));
            }
            let a_semi = (ad - delta).max(0.6);
            let b_semi = (bd - delta).max(0.6);

            // containment of the dilated tumor ellipse (+2 mm safety) inside
            // the body ellipse, checked densely along its boundary
            let contained = |tx: f64, ty: f64| {
                (0..64).all(|s| {
                    let th = s as f64 * std::f64::consts::TAU / 64.0;
                    let px = (tx + (ad + 2.0) * th.cos() - anatomy.cx) / anatomy.rx;
                    let py = (ty + (bd + 2.0) * th.sin() - anatomy.cy) / anatomy.ry;
                    px * px + py * py <= 1.0
                })
            };
            // scatter inside the body, pulling toward the center (where
            // containment always holds) as attempts run out; same-chunk
            // overlap is retried, then accepted
            let mx = (anatomy.rx - ad - 4.0).max(1.0);
            let my = (anatomy.ry - bd - 4.0).max(1.0);
            let (mut tx, mut ty) = (anatomy.cx, anatomy.cy);
            for attempt in 0..80 {
                let scale = 1.0 - attempt as f64 / 80.0;
                let (u, v) = loop {
                    let u = rng.random_range(-1.0f64..1.0);
                    let v = rng.random_range(-1.0f64..1.0);
                    if u * u + v * v <= 1.0 {
                        break (u, v);
                    }
                };
                let (cand_x, cand_y) = (anatomy.cx + u * mx * scale, anatomy.cy + v * my * scale);
                if !contained(cand_x, cand_y) {
                    continue;
                }
                let clash = placed.iter().any(|&(px, py, pa, pb, pc)| {
                    pc == ci && {
                        let dx = (cand_x - px) / (ad + pa);
                        let dy = (cand_y - py) / (bd + pb);
                        dx * dx + dy * dy < 0.8
                    }
                });
                tx = cand_x;
                ty = cand_y;
                if !clash {
                    break;
                }
            }
            placed.push((tx, ty, ad, bd, ci));

            // quantize the center onto a voxel center
            let i_c = ((tx / sx - 0.5).round().max(0.0) as usize).min(profile.dims.0 - 1);
            let j_c = ((ty / sy - 0.5).round().max(0.0) as usize).min(profile.dims.1 - 1);

            let suv_dist = LogNormal::new(profile.suvmax_ln_mu, profile.suvmax_ln_sigma)
                .map_err(|e| Error::invalid(format!("suvmax distribution: {e}")))?;
            let suv_max = suv_dist.sample(rng).clamp(3.0, 45.0);

            specs.push(TumorSpec {
                center_voxel: (i_c, j_c, k_c),
                radii_mm: (a_semi, b_semi, c_semi),
                suv_max,
                falloff_mm: falloff,
            });
        }
    }
    Ok(specs)
}

/// Raises the PET signal to a flat-top ellipsoid profile with a Gaussian
/// shoulder and marks the voxels whose tumor contribution exceeds 41% of
/// SUVmax. Fails, without modifying the volume, if the ellipsoid leaves the
/// grid or the body.
pub fn plant_tumor(vol: &mut PatientVolume, spec: &TumorSpec) -> Result<()> {
    let (nx, ny, nz) = vol.pet.dims();
    let (sx, sy, sz) = vol.spacing_mm;
    let (a, b, c) = spec.radii_mm;
    if !(a > 0.0 && b > 0.0 && c > 0.0) {
        return Err(Error::invalid(format!(
            "tumor radii {:?} must be positive",
            spec.radii_mm
        )));
    }
    if spec.falloff_mm <= 0.0 || spec.suv_max <= 0.0 {
        return Err(Error::invalid(
            "tumor falloff and suv_max must be positive",
        ));
    }
    let (ci, cj, ck) = spec.center_voxel;
    if ci >= nx || cj >= ny || ck >= nz {
        return Err(Error::invalid(format!(
            "tumor center voxel {:?} outside grid {:?}",
            spec.center_voxel,
            vol.pet.dims()
        )));
    }
    let (tx, ty, tz) = (
        (ci as f64 + 0.5) * sx,
        (cj as f64 + 0.5) * sy,
        (ck as f64 + 0.5) * sz,
    );
    if tx - a < 0.0
        || tx + a > nx as f64 * sx
        || ty - b < 0.0
        || ty + b > ny as f64 * sy
        || tz - c < 0.0
        || tz + c > nz as f64 * sz
    {
        return Err(Error::invalid(format!(
            "tumor at {:?} with radii {:?} mm extends outside the grid",
            spec.center_voxel, spec.radii_mm
        )));
    }

    // visible reach: the mask dilation or the 2%-of-peak Gaussian tail,
    // whichever is farther
    let reach = mask_dilation_mm(spec.falloff_mm).max(spec.falloff_mm * 2.7971);
    let lo = |cm: f64, r: f64, s: f64| (((cm - r - reach) / s - 0.5).floor().max(0.0)) as usize;
    let hi = |cm: f64, r: f64, s: f64, n: usize| {
        (((cm + r + reach) / s - 0.5).ceil() as usize).min(n - 1)
    };
    let (i0, i1) = (lo(tx, a, sx), hi(tx, a, sx, nx));
    let (j0, j1) = (lo(ty, b, sy), hi(ty, b, sy, ny));
    let (k0, k1) = (lo(tz, c, sz), hi(tz, c, sz, nz));

    // precondition pass: the flat-top core must be body tissue throughout
    for k in k0..=k1 {
        let z = (k as f64 + 0.5) * sz;
        for j in j0..=j1 {
            let y = (j as f64 + 0.5) * sy;
            for i in i0..=i1 {
                let x = (i as f64 + 0.5) * sx;
                let (dx, dy, dz) = ((x - tx) / a, (y - ty) / b, (z - tz) / c);
                if dx * dx + dy * dy + dz * dz <= 1.0
                    && f64::from(vol.ct.at(i, j, k)) <= BODY_HU_FLOOR
                {
                    return Err(Error::invalid(format!(
                        "tumor at voxel {:?} overlaps non-body tissue at ({i},{j},{k})",
                        spec.center_voxel
                    )));
                }
            }
        }
    }

    let threshold = MASK_THRESHOLD_FRACTION * spec.suv_max;
    let two_sig2 = 2.0 * spec.falloff_mm * spec.falloff_mm;
    for k in k0..=k1 {
        let z = (k as f64 + 0.5) * sz;
        for j in j0..=j1 {
            let y = (j as f64 + 0.5) * sy;
            for i in i0..=i1 {
                let x = (i as f64 + 0.5) * sx;
                let (ex, ey, ez) = ((x - tx) / a, (y - ty) / b, (z - tz) / c);
                let rho2 = ex * ex + ey * ey + ez * ez;
                let contrib = if rho2 <= 1.0 {
                    spec.suv_max
                } else {
                    let rho = rho2.sqrt();
                    let (px, py, pz) = (x - tx, y - ty, z - tz);
                    let r = (px * px + py * py + pz * pz).sqrt();
                    let d = r * (1.0 - 1.0 / rho);
                    spec.suv_max * (-d * d / two_sig2).exp()
                };
                if contrib > threshold {
                    *vol.tumor_mask.at_mut(i, j, k) = 1;
                }
                let cf = contrib as f32;
                if cf > vol.pet.at(i, j, k) {
                    *vol.pet.at_mut(i, j, k) = cf;
                }
            }
        }
    }
    Ok(())
}

/// Volume of a binary mask in ml: voxel count times voxel volume.
pub fn tmtv(mask: &Grid3<u8>, spacing_mm: (f64, f64, f64)) -> f64 {
    mask.count_ones() as f64 * spacing_mm.0 * spacing_mm.1 * spacing_mm.2 / 1000.0
}

/// Per-axial-slice labels: positive iff any tumor-mask voxel lies in the
/// slice, with the in-slice PET max over mask voxels attached.
pub fn slice_ground_truth(vol: &PatientVolume) -> Vec<SliceTruth> {
    let (_, _, nz) = vol.pet.dims();
    (0..nz)
        .map(|k| {
            let mut best: Option<f32> = None;
            for (m, p) in vol.tumor_mask.slice_xy(k).iter().zip(vol.pet.slice_xy(k)) {
                if *m != 0 && best.is_none_or(|b| *p > b) {
                    best = Some(*p);
                }
            }
            SliceTruth {
                slice: k,
                label: u8::from(best.is_some()),
                tumor_suvmax: best,
            }
        })
        .collect()
}

/// Generates the full cohort for one center. Deterministic in (profile,
/// seed); per-patient planning is feedback-controlled so the realized
/// positive-slice fraction and mean TMTV track the profile targets.
pub fn generate_cohort(profile: &CenterProfile, seed: u64) -> Result<Vec<PatientVolume>> {
    profile.validate()?;
    let style = center_style(profile.background_organ_pattern);
    let nz = profile.dims.2;
    let (band_lo, band_end) = tumor_band(nz);
    let band = band_end - band_lo;
    let cap = ((0.8 * band as f64).floor() as usize).max(1);

    let mut patients = Vec::with_capacity(profile.n_patients);
    let (mut slices_cum, mut pos_cum, mut tmtv_cum) = (0usize, 0usize, 0.0f64);
    for idx in 0..profile.n_patients {
        let anatomy = patient_anatomy(profile, &style, idx);
        let mut vol = render_volume(profile, &style, &anatomy, seed, idx);
        let mut plan_rng = rng_from(derive_seed_indexed(seed, "plan", idx as u64));

        let desired =
            profile.target_positive_fraction * (slices_cum + nz) as f64 - pos_cum as f64;
        let jitter = plan_rng.random_range(-1.5..1.5);
        let s_p = (desired + jitter).round().clamp(1.0, cap as f64) as usize;

        let t_base =
            profile.tmtv_mean_ml + plan_rng.random_range(-0.5..0.5) * profile.tmtv_range_ml;
        let t_deficit = profile.tmtv_mean_ml * (idx as f64 + 1.0) - tmtv_cum;
        let t_p = (t_base + (t_deficit - profile.tmtv_mean_ml))
            .clamp(0.2 * profile.tmtv_mean_ml, 2.6 * profile.tmtv_mean_ml);

        let specs = plan_tumors(profile, &anatomy, &mut plan_rng, s_p, t_p)
            .map_err(|e| e.in_stage(&format!("patient {idx}")))?;
        for spec in &specs {
            plant_tumor(&mut vol, spec)?;
        }

        pos_cum += (0..nz).filter(|&k| vol.tumor_mask.any_in_slice(k)).count();
        slices_cum += nz;
        tmtv_cum += tmtv(&vol.tumor_mask, vol.spacing_mm);
        vol.validate()?;
        patients.push(vol);
    }
    Ok(patients)
}
