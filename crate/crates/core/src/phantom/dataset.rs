//! On-disk phantom datasets: one directory per case plus a manifest that
//! assigns each case to train, val, or test.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{generate, Phantom, PhantomError, PhantomSpec};
use crate::arch::CHANNEL_LAYOUT;
use crate::dosimetry::{MaskVolume, Volume};
use crate::persist::{read_mask, read_volume, write_mask, write_volume, Manifest, ManifestEntry, PersistError, Split};
use crate::tensor::Tensor;

/// Mask file names in network channel order (after CT).
pub const MASK_FILES: [&str; 6] = [
    "ptv.dmask",
    "bladder.dmask",
    "femur_l.dmask",
    "femur_r.dmask",
    "small_intestine.dmask",
    "rectum.dmask",
];
const META_FILE: &str = "meta.txt";

/// Relative train/val/test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DatasetSplit(pub [usize; 3]);

impl Default for DatasetSplit {
    fn default() -> Self {
        Self([40, 6, 8])
    }
}

impl fmt::Display for DatasetSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.0[0], self.0[1], self.0[2])
    }
}

impl FromStr for DatasetSplit {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [a, b, c] = parts.as_slice() else {
            return Err(format!("split `{s}` must be three comma-separated counts"));
        };
        let p = |v: &str| v.parse::<usize>().map_err(|_| format!("bad split count `{v}`"));
        let split = Self([p(a)?, p(b)?, p(c)?]);
        if split.0.iter().sum::<usize>() == 0 {
            return Err(format!("split `{s}` sums to zero"));
        }
        Ok(split)
    }
}

impl DatasetSplit {
    /// Scale the proportions to `n` cases by largest remainder (ties go to
    /// the earlier split).
    pub fn counts(&self, n: usize) -> Result<[usize; 3], PhantomError> {
        let total: usize = self.0.iter().sum();
        if total == 0 {
            return Err(PhantomError::Split(self.0));
        }
        let mut counts = [0usize; 3];
        let mut rems = [0usize; 3];
        for i in 0..3 {
            counts[i] = self.0[i] * n / total;
            rems[i] = self.0[i] * n % total;
        }
        let mut left = n - counts.iter().sum::<usize>();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| rems[b].cmp(&rems[a]).then(a.cmp(&b)));
        for &i in order.iter().cycle() {
            if left == 0 {
                break;
            }
            counts[i] += 1;
            left -= 1;
        }
        Ok(counts)
    }
}

/// One case loaded for training or evaluation. Masks follow [`MASK_FILES`].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub ct: Volume,
    pub dose: Volume,
    pub masks: Vec<MaskVolume>,
    pub prescription_gy: f64,
}

impl Sample {
    pub fn from_phantom(id: impl Into<String>, phantom: Phantom) -> Self {
        Self {
            id: id.into(),
            ct: phantom.ct,
            dose: phantom.dose,
            masks: phantom.masks,
            prescription_gy: phantom.prescription_gy,
        }
    }

    pub fn depth(&self) -> usize {
        self.ct.shape()[0]
    }

    pub fn ptv(&self) -> &MaskVolume {
        &self.masks[0]
    }

    /// Network input for axial slice `z`: `[7, H, W]`, CT then masks.
    pub fn slice_input(&self, z: usize) -> Tensor<f32> {
        let [_, h, w] = self.ct.shape();
        let mut data = Vec::with_capacity(CHANNEL_LAYOUT.len() * h * w);
        data.extend_from_slice(self.ct.slice(z));
        for m in &self.masks {
            data.extend(m.slice(z).iter().map(|&v| f32::from(v)));
        }
        Tensor::new(vec![1 + self.masks.len(), h, w], data).expect("slice length matches shape")
    }

    /// Dose of slice `z` divided by the prescription, `[1, H, W]`.
    pub fn slice_target(&self, z: usize) -> Tensor<f32> {
        let [_, h, w] = self.dose.shape();
        let scale = (1.0 / self.prescription_gy) as f32;
        let data = self.dose.slice(z).iter().map(|v| v * scale).collect();
        Tensor::new(vec![1, h, w], data).expect("slice length matches shape")
    }
}

fn sample_files(id: &str) -> Vec<String> {
    ["ct.dvol", "dose.dvol"]
        .iter()
        .chain(MASK_FILES.iter())
        .chain(std::iter::once(&META_FILE))
        .map(|f| format!("{id}/{f}"))
        .collect()
}

fn io_err(path: &Path, source: std::io::Error) -> PhantomError {
    PhantomError::Persist(PersistError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_sample(dir: &Path, seed: u64, phantom: &Phantom) -> Result<(), PhantomError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    write_volume(dir.join("ct.dvol"), &phantom.ct)?;
    write_volume(dir.join("dose.dvol"), &phantom.dose)?;
    for (file, mask) in MASK_FILES.iter().zip(&phantom.masks) {
        write_mask(dir.join(file), mask)?;
    }
    let meta = format!("prescription_gy={}\nseed={seed}\n", phantom.prescription_gy);
    let path = dir.join(META_FILE);
    std::fs::write(&path, meta).map_err(|e| io_err(&path, e))
}

/// Generate `n` jittered phantoms (seed `base_seed + i`) under `out_dir`
/// and write the manifest. Membership is a seeded shuffle of case indices.
pub fn make_dataset(out_dir: &Path, n: usize, base_seed: u64, grid: [usize; 3], split: DatasetSplit) -> Result<Manifest, PhantomError> {
    if n == 0 {
        return Err(PhantomError::EmptyDataset);
    }
    let counts = split.counts(n)?;
    if counts[1] == 0 || counts[2] == 0 {
        log::warn!("split {split} over {n} cases leaves val={} test={}", counts[1], counts[2]);
    }
    std::fs::create_dir_all(out_dir).map_err(|e| io_err(out_dir, e))?;

    let width = n.saturating_sub(1).to_string().len().max(3);
    let ids: Vec<String> = (0..n).map(|i| format!("case_{i:0width$}")).collect();
    (0..n).into_par_iter().try_for_each(|i| {
        let seed = base_seed.wrapping_add(i as u64);
        let spec = PhantomSpec::jittered(seed, grid)?;
        let phantom = generate(&spec)?;
        write_sample(&out_dir.join(&ids[i]), seed, &phantom)
    })?;

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(base_seed));
    let mut assignment = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        assignment[i] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    let manifest = Manifest {
        entries: ids
            .iter()
            .zip(assignment)
            .map(|(id, split)| ManifestEntry {
                id: id.clone(),
                split,
                files: sample_files(id),
            })
            .collect(),
    };
    manifest.write(out_dir)?;
    Ok(manifest)
}

/// Load a case listed in the manifest of `dataset_dir`.
pub fn load_sample(dataset_dir: &Path, entry: &ManifestEntry) -> Result<Sample, PhantomError> {
    let missing = |what: &str| PhantomError::Sample {
        id: entry.id.clone(),
        message: format!("manifest lists no {what}"),
    };
    let find = |name: &str| {
        entry
            .files
            .iter()
            .find(|f| Path::new(f).file_name().and_then(|s| s.to_str()) == Some(name))
            .map(|f| dataset_dir.join(f))
            .ok_or_else(|| missing(name))
    };
    let ct = read_volume(find("ct.dvol")?)?;
    let dose = read_volume(find("dose.dvol")?)?;
    let masks = MASK_FILES
        .iter()
        .map(|f| Ok(read_mask(find(f)?)?))
        .collect::<Result<Vec<_>, PhantomError>>()?;
    for m in &masks {
        ct.same_grid(m.shape())?;
    }
    ct.same_grid(dose.shape())?;
    let meta_path = find(META_FILE)?;
    let meta = std::fs::read_to_string(&meta_path).map_err(|e| io_err(&meta_path, e))?;
    let prescription_gy = meta
        .lines()
        .find_map(|l| l.strip_prefix("prescription_gy="))
        .and_then(|v| v.trim().parse::<f64>().ok())
        .filter(|p| p.is_finite() && *p > 0.0)
        .ok_or_else(|| PhantomError::Sample {
            id: entry.id.clone(),
            message: "meta.txt has no valid prescription_gy".into(),
        })?;
    Ok(Sample {
        id: entry.id.clone(),
        ct,
        dose,
        masks,
        prescription_gy,
    })
}
