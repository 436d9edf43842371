//! Synthetic pelvic phantoms with an analytic dose: CT, one PTV and five
//! OAR masks, and a dose that is the prescription inside the PTV and decays
//! with distance from it, overlaid with radial beam ridges.

mod dataset;
mod edt;

pub use dataset::{load_sample, make_dataset, DatasetSplit, Sample, MASK_FILES};
pub use edt::{distance_transform, squared_distance_mm};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dosimetry::{DosimetryError, MaskVolume, Volume};
use crate::persist::PersistError;

/// Weight of the distance falloff against the beam ridges.
pub const FALLOFF_WEIGHT: f64 = 0.7;
/// Jittered geometries are redrawn at most this many times.
const MAX_JITTER_ATTEMPTS: usize = 64;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom geometry: {0}")]
    Geometry(String),
    #[error("structures `{a}` and `{b}` overlap")]
    Overlap { a: String, b: String },
    #[error("dataset needs at least one sample")]
    EmptyDataset,
    #[error("split {0:?} must have a positive total")]
    Split([usize; 3]),
    #[error("sample `{id}`: {message}")]
    Sample { id: String, message: String },
    #[error(transparent)]
    Dosimetry(#[from] DosimetryError),
    #[error(transparent)]
    Persist(#[from] PersistError),
}

/// Axis-aligned ellipsoid in voxel coordinates `(z, y, x)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    pub fn contains(&self, z: usize, y: usize, x: usize) -> bool {
        let p = [z as f64, y as f64, x as f64];
        (0..3)
            .map(|a| ((p[a] - self.center[a]) / self.radii[a]).powi(2))
            .sum::<f64>()
            <= 1.0
    }

    /// Bounding box within the voxel extents `[-0.5, n - 0.5]` on every axis.
    pub fn fits(&self, grid: [usize; 3]) -> bool {
        (0..3).all(|a| {
            self.radii[a] > 0.0
                && self.center[a] - self.radii[a] >= -0.5
                && self.center[a] + self.radii[a] <= grid[a] as f64 - 0.5
        })
    }

    /// Ellipsoid given as fractions of the grid extents.
    fn from_fractions(grid: [usize; 3], center: [f64; 3], radii: [f64; 3]) -> Self {
        let g = grid.map(|n| n as f64);
        Self {
            center: [0, 1, 2].map(|a| center[a] * g[a] - 0.5),
            radii: [0, 1, 2].map(|a| radii[a] * g[a]),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Organ {
    pub label: String,
    pub shape: Ellipsoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub grid: [usize; 3],
    pub spacing_mm: [f32; 3],
    pub prescription_gy: f64,
    pub ptv: Ellipsoid,
    /// Bladder, femur_l, femur_r, small_intestine, rectum.
    pub oars: Vec<Organ>,
    pub falloff_sigma_mm: f64,
    pub n_beams: usize,
}

// (label, centre, radii) as fractions of (D, H, W).
const PTV_LAYOUT: ([f64; 3], [f64; 3]) = ([0.5, 0.5, 0.5], [0.4, 0.14, 0.14]);
const OAR_LAYOUT: [(&str, [f64; 3], [f64; 3]); 5] = [
    ("bladder", [0.5, 0.24, 0.5], [0.35, 0.08, 0.14]),
    ("femur_l", [0.5, 0.52, 0.18], [0.35, 0.1, 0.08]),
    ("femur_r", [0.5, 0.52, 0.82], [0.35, 0.1, 0.08]),
    ("small_intestine", [0.5, 0.22, 0.26], [0.3, 0.07, 0.07]),
    ("rectum", [0.5, 0.74, 0.5], [0.35, 0.06, 0.08]),
];

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::standard(0, [8, 64, 64])
    }
}

impl PhantomSpec {
    /// Reference layout scaled to `grid`.
    pub fn standard(seed: u64, grid: [usize; 3]) -> Self {
        Self::from_layout(seed, grid, |c, r| (c, r))
    }

    /// Reference layout with seeded centre shifts and radius scaling,
    /// redrawn until the geometry validates.
    pub fn jittered(seed: u64, grid: [usize; 3]) -> Result<Self, PhantomError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut last = None;
        for _ in 0..MAX_JITTER_ATTEMPTS {
            let spec = Self::from_layout(seed, grid, |c, r| {
                let shift = |rng: &mut ChaCha8Rng, amount: f64| rng.random_range(-amount..=amount);
                let c = [c[0], c[1] + shift(&mut rng, 0.02), c[2] + shift(&mut rng, 0.02)];
                let r = r.map(|v| v * rng.random_range(0.9..=1.1));
                (c, r)
            });
            match spec.validate() {
                Ok(()) => return Ok(spec),
                Err(e) => last = Some(e),
            }
        }
        Err(last.expect("at least one attempt"))
    }

    fn from_layout(seed: u64, grid: [usize; 3], mut adjust: impl FnMut([f64; 3], [f64; 3]) -> ([f64; 3], [f64; 3])) -> Self {
        let (c, r) = adjust(PTV_LAYOUT.0, PTV_LAYOUT.1);
        let ptv = Ellipsoid::from_fractions(grid, c, r);
        let oars = OAR_LAYOUT
            .iter()
            .map(|&(label, c, r)| {
                let (c, r) = adjust(c, r);
                Organ {
                    label: label.to_string(),
                    shape: Ellipsoid::from_fractions(grid, c, r),
                }
            })
            .collect();
        Self {
            seed,
            grid,
            spacing_mm: [3.0; 3],
            prescription_gy: 45.0,
            ptv,
            oars,
            falloff_sigma_mm: 12.0,
            n_beams: 7,
        }
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        if self.grid.contains(&0) {
            return Err(PhantomError::Geometry(format!("grid {:?} has a zero extent", self.grid)));
        }
        if self.spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(PhantomError::Geometry(format!("spacing {:?} must be positive", self.spacing_mm)));
        }
        if !(self.prescription_gy.is_finite() && self.prescription_gy > 0.0) {
            return Err(PhantomError::Geometry(format!("prescription {} must be positive", self.prescription_gy)));
        }
        if !(self.falloff_sigma_mm.is_finite() && self.falloff_sigma_mm > 0.0) {
            return Err(PhantomError::Geometry(format!("falloff sigma {} must be positive", self.falloff_sigma_mm)));
        }
        let masks = self.masks()?;
        for (i, a) in masks.iter().enumerate() {
            if a.count() == 0 {
                return Err(PhantomError::Geometry(format!("structure `{}` has no voxels", a.label())));
            }
            for b in &masks[i + 1..] {
                if a.overlaps(b) {
                    return Err(PhantomError::Overlap {
                        a: a.label().to_string(),
                        b: b.label().to_string(),
                    });
                }
            }
        }
        Ok(())
    }

    /// PTV first, then the OARs in spec order. Fails if any ellipsoid leaves the grid.
    fn masks(&self) -> Result<Vec<MaskVolume>, PhantomError> {
        std::iter::once(("ptv", &self.ptv))
            .chain(self.oars.iter().map(|o| (o.label.as_str(), &o.shape)))
            .map(|(label, e)| {
                if !e.fits(self.grid) {
                    return Err(PhantomError::Geometry(format!("`{label}` extends outside grid {:?}", self.grid)));
                }
                Ok(MaskVolume::from_fn(self.grid, self.spacing_mm, label, |z, y, x| e.contains(z, y, x))?)
            })
            .collect()
    }
}

/// One generated case. `masks[0]` is the PTV.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub ct: Volume,
    pub masks: Vec<MaskVolume>,
    pub dose: Volume,
    pub prescription_gy: f64,
}

impl Phantom {
    pub fn mask(&self, label: &str) -> Option<&MaskVolume> {
        self.masks.iter().find(|m| m.label() == label)
    }
}

pub fn generate(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    spec.validate()?;
    let masks = spec.masks()?;
    let ptv = &masks[0];
    let [d, h, w] = spec.grid;
    let s = spec.spacing_mm.map(f64::from);
    let body = Ellipsoid {
        center: [(d as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0],
        radii: [f64::INFINITY, 0.46 * h as f64, 0.48 * w as f64],
    };

    let field = smooth_field(spec.seed, spec.grid);
    let bone: Vec<&MaskVolume> = masks.iter().filter(|m| m.label().starts_with("femur")).collect();
    let mut ct = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let v = if bone.iter().any(|m| m.is_set(i)) {
                    0.8 + 0.15 * field[i]
                } else if body.contains(z, y, x) {
                    0.25 + 0.15 * field[i]
                } else {
                    0.0
                };
                ct.push(v as f32);
            }
        }
    }

    let dist = squared_distance_mm(ptv, spec.spacing_mm)?;
    let centroid = mask_centroid(ptv);
    let ridge_width = 0.5 * (spec.ptv.radii[1] * s[1] + spec.ptv.radii[2] * s[2]);
    let angles: Vec<(f64, f64)> = (0..spec.n_beams)
        .map(|k| {
            let t = std::f64::consts::PI * k as f64 / spec.n_beams as f64;
            (t.sin(), t.cos())
        })
        .collect();
    let p = spec.prescription_gy;
    let mut dose = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let i = (z * h + y) * w + x;
                let v = if ptv.is_set(i) {
                    p
                } else if !body.contains(z, y, x) {
                    0.0
                } else {
                    let falloff = (-dist[i].sqrt() / spec.falloff_sigma_mm).exp();
                    let beam = if angles.is_empty() {
                        0.0
                    } else {
                        let dy = (y as f64 - centroid[1]) * s[1];
                        let dx = (x as f64 - centroid[2]) * s[2];
                        angles
                            .iter()
                            .map(|&(sin, cos)| {
                                let off_axis = dy * cos - dx * sin;
                                (-(off_axis * off_axis) / (2.0 * ridge_width * ridge_width)).exp()
                            })
                            .sum::<f64>()
                            / angles.len() as f64
                    };
                    p * (FALLOFF_WEIGHT * falloff + (1.0 - FALLOFF_WEIGHT) * beam)
                };
                dose.push(v as f32);
            }
        }
    }

    Ok(Phantom {
        ct: Volume::new(spec.grid, spec.spacing_mm, ct)?,
        dose: Volume::new(spec.grid, spec.spacing_mm, dose)?,
        masks,
        prescription_gy: p,
    })
}

fn mask_centroid(mask: &MaskVolume) -> [f64; 3] {
    let [_, h, w] = mask.shape();
    let mut sum = [0.0; 3];
    let mut n = 0.0;
    for (i, &v) in mask.values().iter().enumerate() {
        if v == 1 {
            sum[0] += (i / (h * w)) as f64;
            sum[1] += ((i / w) % h) as f64;
            sum[2] += (i % w) as f64;
            n += 1.0;
        }
    }
    sum.map(|s| s / n)
}

/// Sum of a few low-frequency cosines rescaled to `[0, 1]`.
fn smooth_field(seed: u64, grid: [usize; 3]) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_F1E1D);
    let modes: Vec<([f64; 3], f64, f64)> = (0..6)
        .map(|_| {
            let f = [rng.random_range(0.0..1.0), rng.random_range(0.0..2.0), rng.random_range(0.0..2.0)];
            (f, rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.3..1.0))
        })
        .collect();
    let [d, h, w] = grid;
    let mut out = Vec::with_capacity(d * h * w);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let p = [z as f64 / d as f64, y as f64 / h as f64, x as f64 / w as f64];
                let v: f64 = modes
                    .iter()
                    .map(|(f, phase, amp)| amp * (std::f64::consts::TAU * (f[0] * p[0] + f[1] * p[1] + f[2] * p[2]) + phase).cos())
                    .sum();
                out.push(v);
            }
        }
    }
    let lo = out.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    out.iter_mut().for_each(|v| *v = (*v - lo) / span);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dosimetry::{conformity_index, v_at};

    #[test]
    fn standard_layout_is_valid_on_several_grids() {
        for grid in [[8, 64, 64], [8, 32, 32], [1, 64, 64], [16, 48, 40]] {
            PhantomSpec::standard(1, grid).validate().unwrap();
        }
    }

    #[test]
    fn jitter_is_seeded_and_valid() {
        let a = PhantomSpec::jittered(5, [8, 64, 64]).unwrap();
        assert_eq!(a, PhantomSpec::jittered(5, [8, 64, 64]).unwrap());
        assert_ne!(a.ptv, PhantomSpec::jittered(6, [8, 64, 64]).unwrap().ptv);
    }

    #[test]
    fn ptv_receives_the_prescription() {
        let ph = generate(&PhantomSpec::default()).unwrap();
        let ptv = ph.mask("ptv").unwrap();
        assert_eq!(v_at(&ph.dose, ptv, 45.0).unwrap(), 1.0);
        let ci = conformity_index(&ph.dose, ptv, 45.0).unwrap();
        assert!(ci > 0.0 && ci <= 1.0);
        for (i, &v) in ph.dose.values().iter().enumerate() {
            assert!((0.0..=45.0 * 1.05).contains(&v));
            if ptv.is_set(i) {
                assert_eq!(v, 45.0);
            }
        }
        assert!(ph.ct.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(ph.masks.len(), 6);
    }

    #[test]
    fn femurs_are_brighter_than_soft_tissue() {
        let ph = generate(&PhantomSpec::default()).unwrap();
        let femur = ph.mask("femur_l").unwrap();
        let ptv = ph.mask("ptv").unwrap();
        let mean = |m: &MaskVolume| {
            let v: Vec<f32> = (0..m.values().len()).filter(|&i| m.is_set(i)).map(|i| ph.ct.values()[i]).collect();
            v.iter().sum::<f32>() / v.len() as f32
        };
        assert!(mean(femur) > mean(ptv) + 0.3);
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let spec = PhantomSpec::jittered(11, [4, 32, 32]).unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        let bits = |v: &Volume| v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.dose), bits(&b.dose));
        assert_eq!(bits(&a.ct), bits(&b.ct));
        assert_eq!(a.masks, b.masks);
    }

    #[test]
    fn dose_decreases_along_axis_rays_without_beams() {
        for seed in 0..6 {
            let mut spec = PhantomSpec::jittered(seed, [8, 64, 64]).unwrap();
            spec.n_beams = 0;
            let ph = generate(&spec).unwrap();
            let [d, h, w] = spec.grid;
            let c = mask_centroid(&ph.masks[0]).map(|v| v.round() as i64);
            for dir in [[0, 0, 1], [0, 0, -1], [0, 1, 0], [0, -1, 0], [1, 0, 0], [-1, 0, 0]] {
                let mut prev = f32::INFINITY;
                let mut p = c;
                while (0..d as i64).contains(&p[0]) && (0..h as i64).contains(&p[1]) && (0..w as i64).contains(&p[2]) {
                    let v = ph.dose.get(p[0] as usize, p[1] as usize, p[2] as usize);
                    assert!(v <= prev, "seed {seed} dir {dir:?} at {p:?}: {v} > {prev}");
                    prev = v;
                    p = [p[0] + dir[0], p[1] + dir[1], p[2] + dir[2]];
                }
            }
        }
    }

    #[test]
    fn rejects_bad_geometry() {
        let mut spec = PhantomSpec::default();
        spec.oars[0].shape = spec.ptv;
        assert!(matches!(spec.validate(), Err(PhantomError::Overlap { .. })));
        let mut spec = PhantomSpec::default();
        spec.ptv.radii[2] = 100.0;
        assert!(matches!(spec.validate(), Err(PhantomError::Geometry(_))));
        let spec = PhantomSpec {
            falloff_sigma_mm: 0.0,
            ..PhantomSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
