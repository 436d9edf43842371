//! Dose-volume histograms and plan-quality metrics: mean dose, percentile
//! doses `D_m`, volume fractions `V_x`, conformity and heterogeneity
//! indices, and cohort percent error.
//!
//! Voxel counts ignore spacing; every ratio below is a ratio of counts on
//! one grid.

mod volume;

pub use volume::{MaskVolume, Volume};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DosimetryError {
    #[error("structure `{label}` has no voxels")]
    EmptyMask { label: String },
    #[error("grid mismatch: expected {expected:?}, got {actual:?}")]
    GridMismatch { expected: [usize; 3], actual: [usize; 3] },
    #[error("mask `{label}` is not binary (voxel {index})")]
    NotBinary { label: String, index: usize },
    #[error("non-finite value at voxel {index}")]
    NonFinite { index: usize },
    #[error("grid {shape:?} has a zero extent")]
    EmptyGrid { shape: [usize; 3] },
    #[error("spacing {spacing_mm:?} must be positive and finite")]
    Spacing { spacing_mm: [f32; 3] },
    #[error("grid {shape:?} does not match {actual} values")]
    ValueCount { shape: [usize; 3], actual: usize },
    #[error("percentile m = {0} is outside (0, 100]")]
    Percentile(f64),
    #[error("prescription dose must be positive, got {0}")]
    Prescription(f64),
    #[error("D50 is zero; heterogeneity index is undefined")]
    ZeroMedian,
    #[error("truth has {truth} values, prediction has {prediction}")]
    LengthMismatch { truth: usize, prediction: usize },
    #[error("percent error needs at least one pair")]
    EmptyCohort,
    #[error("prediction {index} is zero; percent error is undefined")]
    ZeroPrediction { index: usize },
    #[error("DVH needs at least one bin")]
    NoBins,
}

/// Cumulative dose-volume histogram.
#[derive(Clone, Debug, PartialEq)]
pub struct DvhCurve {
    pub structure: String,
    /// Uniform levels from 0 to the maximum structure dose, ascending.
    pub dose_axis: Vec<f64>,
    /// Fraction of the structure receiving at least each level.
    pub cum_fraction: Vec<f64>,
}

impl DvhCurve {
    /// Fraction at the first level at or above `dose`; 0 past the last level.
    pub fn at(&self, dose: f64) -> f64 {
        match self.dose_axis.iter().position(|&d| d >= dose) {
            Some(i) => self.cum_fraction[i],
            None => 0.0,
        }
    }
}

/// Metrics of one structure. `ci` and `hi` are only filled for the target.
#[derive(Clone, Debug, PartialEq)]
pub struct StructureMetrics {
    pub label: String,
    pub voxels: usize,
    pub d_mean: f64,
    pub d2: f64,
    pub d50: f64,
    pub d95: f64,
    pub d98: f64,
    /// Fraction of the structure at or above the `V_x` threshold.
    pub v_x: f64,
    pub ci: Option<f64>,
    pub hi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub prescription_gy: f64,
    pub v_threshold_gy: f64,
    pub structures: Vec<StructureMetrics>,
}

impl MetricReport {
    pub fn structure(&self, label: &str) -> Option<&StructureMetrics> {
        self.structures.iter().find(|s| s.label == label)
    }
}

fn masked_values(dose: &Volume, mask: &MaskVolume) -> Result<Vec<f64>, DosimetryError> {
    dose.same_grid(mask.shape())?;
    let vals: Vec<f64> = dose
        .values()
        .iter()
        .zip(mask.values())
        .filter(|(_, &m)| m == 1)
        .map(|(&d, _)| f64::from(d))
        .collect();
    if vals.is_empty() {
        return Err(DosimetryError::EmptyMask {
            label: mask.label().to_string(),
        });
    }
    Ok(vals)
}

fn sorted_masked(dose: &Volume, mask: &MaskVolume) -> Result<Vec<f64>, DosimetryError> {
    let mut v = masked_values(dose, mask)?;
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Count of values `>= level` in an ascending slice.
fn count_at_least(sorted: &[f64], level: f64) -> usize {
    sorted.len() - sorted.partition_point(|&d| d < level)
}

pub fn dvh(dose: &Volume, mask: &MaskVolume, n_bins: usize) -> Result<DvhCurve, DosimetryError> {
    if n_bins == 0 {
        return Err(DosimetryError::NoBins);
    }
    let sorted = sorted_masked(dose, mask)?;
    let max = *sorted.last().expect("non-empty");
    let k = sorted.len() as f64;
    let dose_axis: Vec<f64> = if n_bins == 1 {
        vec![0.0]
    } else {
        (0..n_bins).map(|j| max * j as f64 / (n_bins - 1) as f64).collect()
    };
    let cum_fraction = dose_axis
        .iter()
        .map(|&d| count_at_least(&sorted, d) as f64 / k)
        .collect();
    Ok(DvhCurve {
        structure: mask.label().to_string(),
        dose_axis,
        cum_fraction,
    })
}

/// Minimal dose covering `m`% of the structure: the `ceil(m K / 100)`-th
/// highest voxel dose.
pub fn d_percentile(dose: &Volume, mask: &MaskVolume, m: f64) -> Result<f64, DosimetryError> {
    if !(m > 0.0 && m <= 100.0) {
        return Err(DosimetryError::Percentile(m));
    }
    let sorted = sorted_masked(dose, mask)?;
    Ok(percentile_of_sorted(&sorted, m))
}

fn percentile_of_sorted(ascending: &[f64], m: f64) -> f64 {
    let k = ascending.len();
    let rank = ((m * k as f64) / 100.0).ceil().clamp(1.0, k as f64) as usize;
    ascending[k - rank]
}

/// Fraction of the structure receiving at least `x` Gy.
pub fn v_at(dose: &Volume, mask: &MaskVolume, x: f64) -> Result<f64, DosimetryError> {
    let vals = masked_values(dose, mask)?;
    Ok(vals.iter().filter(|&&d| d >= x).count() as f64 / vals.len() as f64)
}

pub fn d_mean(dose: &Volume, mask: &MaskVolume) -> Result<f64, DosimetryError> {
    let vals = masked_values(dose, mask)?;
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `|TV ∩ PIV|² / (|TV| |PIV|)` where PIV is every voxel at or above the
/// prescription. Zero when nothing reaches the prescription.
pub fn conformity_index(dose: &Volume, ptv: &MaskVolume, prescription_gy: f64) -> Result<f64, DosimetryError> {
    if !(prescription_gy.is_finite() && prescription_gy > 0.0) {
        return Err(DosimetryError::Prescription(prescription_gy));
    }
    dose.same_grid(ptv.shape())?;
    let mut tv = 0u64;
    let mut piv = 0u64;
    let mut overlap = 0u64;
    for (&d, &m) in dose.values().iter().zip(ptv.values()) {
        let hot = f64::from(d) >= prescription_gy;
        tv += u64::from(m);
        piv += u64::from(hot);
        overlap += u64::from(hot && m == 1);
    }
    if tv == 0 {
        return Err(DosimetryError::EmptyMask {
            label: ptv.label().to_string(),
        });
    }
    if piv == 0 {
        return Ok(0.0);
    }
    let o = overlap as f64;
    Ok(o * o / (tv as f64 * piv as f64))
}

/// `(D2 - D98) / D50` inside the target.
pub fn heterogeneity_index(dose: &Volume, ptv: &MaskVolume) -> Result<f64, DosimetryError> {
    let sorted = sorted_masked(dose, ptv)?;
    let d50 = percentile_of_sorted(&sorted, 50.0);
    if d50 == 0.0 {
        return Err(DosimetryError::ZeroMedian);
    }
    Ok((percentile_of_sorted(&sorted, 2.0) - percentile_of_sorted(&sorted, 98.0)) / d50)
}

/// Cohort average percent error, `100/n * sum |truth - pred| / pred`.
/// The prediction is the denominator; swap the arguments for the other
/// convention.
pub fn ape(truth: &[f64], prediction: &[f64]) -> Result<f64, DosimetryError> {
    Ok(percent_errors(truth, prediction)?.iter().sum::<f64>() / truth.len() as f64)
}

/// Per-item terms of [`ape`].
pub fn percent_errors(truth: &[f64], prediction: &[f64]) -> Result<Vec<f64>, DosimetryError> {
    if truth.len() != prediction.len() {
        return Err(DosimetryError::LengthMismatch {
            truth: truth.len(),
            prediction: prediction.len(),
        });
    }
    if truth.is_empty() {
        return Err(DosimetryError::EmptyCohort);
    }
    truth
        .iter()
        .zip(prediction)
        .enumerate()
        .map(|(i, (&t, &p))| {
            if p == 0.0 {
                Err(DosimetryError::ZeroPrediction { index: i })
            } else {
                Ok((t - p).abs() / p * 100.0)
            }
        })
        .collect()
}

pub fn abs_error_gy(truth: f64, prediction: f64) -> f64 {
    (truth - prediction).abs()
}

/// All per-structure metrics for one dose volume. `ptv_label` selects the
/// structure that also gets CI and HI.
pub fn evaluate_structures(
    dose: &Volume,
    masks: &[MaskVolume],
    ptv_label: &str,
    prescription_gy: f64,
    v_threshold_gy: f64,
) -> Result<MetricReport, DosimetryError> {
    if !(prescription_gy.is_finite() && prescription_gy > 0.0) {
        return Err(DosimetryError::Prescription(prescription_gy));
    }
    let structures = masks
        .iter()
        .map(|mask| {
            let sorted = sorted_masked(dose, mask)?;
            let k = sorted.len();
            let is_target = mask.label() == ptv_label;
            let d50 = percentile_of_sorted(&sorted, 50.0);
            Ok(StructureMetrics {
                label: mask.label().to_string(),
                voxels: k,
                d_mean: sorted.iter().sum::<f64>() / k as f64,
                d2: percentile_of_sorted(&sorted, 2.0),
                d50,
                d95: percentile_of_sorted(&sorted, 95.0),
                d98: percentile_of_sorted(&sorted, 98.0),
                v_x: count_at_least(&sorted, v_threshold_gy) as f64 / k as f64,
                ci: if is_target {
                    Some(conformity_index(dose, mask, prescription_gy)?)
                } else {
                    None
                },
                hi: if is_target && d50 > 0.0 {
                    Some(heterogeneity_index(dose, mask)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>, DosimetryError>>()?;
    Ok(MetricReport {
        prescription_gy,
        v_threshold_gy,
        structures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const SP: [f32; 3] = [3.0, 3.0, 3.0];

    fn line(values: &[f32]) -> (Volume, MaskVolume) {
        let n = values.len();
        (
            Volume::new([1, 1, n], SP, values.to_vec()).unwrap(),
            MaskVolume::new([1, 1, n], SP, vec![1; n], "ptv").unwrap(),
        )
    }

    #[test]
    fn uniform_dose_dvh_is_a_step() {
        let (d, m) = line(&[50.0; 10]);
        let c = dvh(&d, &m, 11).unwrap();
        assert!(c.cum_fraction.iter().all(|&f| f == 1.0));
        assert_eq!(c.at(50.0), 1.0);
        assert_eq!(c.at(10.0), 1.0);
        assert_eq!(c.at(50.5), 0.0);
    }

    #[test]
    fn counting_examples() {
        let (d, m) = line(&[40.0, 45.0, 50.0, 55.0]);
        assert_eq!(v_at(&d, &m, 50.0).unwrap(), 0.5);
        let c = dvh(&d, &m, 12).unwrap();
        // levels are multiples of 5 Gy
        assert_eq!(c.dose_axis[10], 50.0);
        assert_eq!(c.cum_fraction[10], 0.5);
        assert_eq!(v_at(&d, &m, 0.0).unwrap(), 1.0);
        let (u, um) = line(&[55.0; 3]);
        assert_eq!(v_at(&u, &um, 50.0).unwrap(), 1.0);
    }

    #[test]
    fn percentile_examples() {
        let vals: Vec<f32> = (1..=100).map(|v| v as f32).collect();
        let (d, m) = line(&vals);
        assert_eq!(d_percentile(&d, &m, 2.0).unwrap(), 99.0);
        assert_eq!(d_percentile(&d, &m, 98.0).unwrap(), 3.0);
        assert_eq!(d_percentile(&d, &m, 50.0).unwrap(), 51.0);
        assert_eq!(heterogeneity_index(&d, &m).unwrap(), (99.0 - 3.0) / 51.0);
        let (u, um) = line(&[50.0; 7]);
        for p in [0.5, 2.0, 50.0, 98.0, 100.0] {
            assert_eq!(d_percentile(&u, &um, p).unwrap(), 50.0);
        }
        assert_eq!(heterogeneity_index(&u, &um).unwrap(), 0.0);
        assert!(matches!(d_percentile(&d, &m, 0.0), Err(DosimetryError::Percentile(_))));
        assert!(matches!(d_percentile(&d, &m, 100.5), Err(DosimetryError::Percentile(_))));
        let (z, zm) = line(&[0.0; 4]);
        assert!(matches!(heterogeneity_index(&z, &zm), Err(DosimetryError::ZeroMedian)));
    }

    #[test]
    fn conformity_examples() {
        // TV: first 100 voxels; PIV: first 200.
        let dose: Vec<f32> = (0..400).map(|i| if i < 200 { 45.0 } else { 10.0 }).collect();
        let d = Volume::new([1, 20, 20], SP, dose).unwrap();
        let tv = MaskVolume::new([1, 20, 20], SP, (0..400).map(|i| u8::from(i < 100)).collect(), "ptv").unwrap();
        assert_eq!(conformity_index(&d, &tv, 45.0).unwrap(), 0.5);

        let exact: Vec<f32> = (0..400).map(|i| if i < 100 { 45.0 } else { 44.9 }).collect();
        let d = Volume::new([1, 20, 20], SP, exact).unwrap();
        assert_eq!(conformity_index(&d, &tv, 45.0).unwrap(), 1.0);

        let disjoint: Vec<f32> = (0..400).map(|i| if i >= 300 { 50.0 } else { 0.0 }).collect();
        let d = Volume::new([1, 20, 20], SP, disjoint).unwrap();
        assert_eq!(conformity_index(&d, &tv, 45.0).unwrap(), 0.0);
        assert!(conformity_index(&d, &tv, 0.0).is_err());
    }

    #[test]
    fn empty_mask_names_structure() {
        let d = Volume::filled([1, 2, 2], SP, 1.0).unwrap();
        let m = MaskVolume::new([1, 2, 2], SP, vec![0; 4], "rectum").unwrap();
        let err = dvh(&d, &m, 4).unwrap_err();
        assert!(err.to_string().contains("rectum"));
        assert!(v_at(&d, &m, 1.0).is_err());
        assert!(conformity_index(&d, &m.clone().with_label("ptv"), 1.0).is_err());
    }

    #[test]
    fn ape_examples() {
        assert_eq!(ape(&[3.0, 4.0], &[3.0, 4.0]).unwrap(), 0.0);
        let single = ape(&[45.76], &[46.17]).unwrap();
        assert!((single - 100.0 * 0.41 / 46.17).abs() < 1e-9);
        assert!((single - 0.888).abs() < 5e-4);
        assert_eq!(ape(&[10.0, 10.0], &[20.0, 5.0]).unwrap(), 75.0);
        assert!(matches!(ape(&[1.0], &[0.0]), Err(DosimetryError::ZeroPrediction { index: 0 })));
        assert!(matches!(ape(&[], &[]), Err(DosimetryError::EmptyCohort)));
        assert!(ape(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn abs_error_examples() {
        assert!((abs_error_gy(23.929, 24.560) - 0.631).abs() < 1e-9);
        assert!((abs_error_gy(45.76, 46.17) - 0.41).abs() < 1e-9);
        assert_eq!(abs_error_gy(3.0, 3.0), 0.0);
    }

    #[test]
    fn masks_must_be_binary() {
        assert!(matches!(
            MaskVolume::new([1, 1, 2], SP, vec![0, 2], "x"),
            Err(DosimetryError::NotBinary { index: 1, .. })
        ));
        assert!(Volume::new([1, 1, 2], SP, vec![0.0, f32::NAN]).is_err());
    }

    #[test]
    fn structure_report_fills_target_only_indices() {
        let vals: Vec<f32> = (1..=100).map(|v| v as f32).collect();
        let d = Volume::new([1, 10, 10], SP, vals).unwrap();
        let ptv = MaskVolume::from_fn([1, 10, 10], SP, "ptv", |_, y, _| y >= 5).unwrap();
        let oar = MaskVolume::from_fn([1, 10, 10], SP, "bladder", |_, y, _| y < 5).unwrap();
        let r = evaluate_structures(&d, &[ptv, oar], "ptv", 60.0, 50.0).unwrap();
        let p = r.structure("ptv").unwrap();
        assert_eq!(p.voxels, 50);
        assert_eq!(p.d_mean, 75.5);
        assert!(p.ci.is_some() && p.hi.is_some());
        let b = r.structure("bladder").unwrap();
        assert_eq!(b.v_x, 1.0 / 50.0);
        assert!(b.ci.is_none());
        assert!(b.d2 >= b.d50 && b.d50 >= b.d95 && b.d95 >= b.d98);
    }
}
