//! Exact Euclidean distance transform by separable lower envelopes of
//! parabolas, one axis at a time, with anisotropic spacing.

use crate::dosimetry::{DosimetryError, MaskVolume, Volume};

/// Distance in mm from every voxel centre to the nearest set voxel centre
/// (0 inside the mask).
pub fn distance_transform(mask: &MaskVolume, spacing_mm: [f32; 3]) -> Result<Volume, DosimetryError> {
    let sq = squared_distance_mm(mask, spacing_mm)?;
    Volume::new(mask.shape(), spacing_mm, sq.iter().map(|d| d.sqrt() as f32).collect())
}

/// Squared distances in mm² computed in f64.
pub fn squared_distance_mm(mask: &MaskVolume, spacing_mm: [f32; 3]) -> Result<Vec<f64>, DosimetryError> {
    if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(DosimetryError::Spacing { spacing_mm });
    }
    if mask.count() == 0 {
        return Err(DosimetryError::EmptyMask {
            label: mask.label().to_string(),
        });
    }
    let shape = mask.shape();
    let mut grid: Vec<f64> = mask
        .values()
        .iter()
        .map(|&v| if v == 1 { 0.0 } else { f64::INFINITY })
        .collect();
    let strides = [shape[1] * shape[2], shape[2], 1];
    let mut line = Vec::new();
    let mut out = Vec::new();
    let mut env = Envelope::default();
    for axis in 0..3 {
        let n = shape[axis];
        let step = strides[axis];
        let spacing = f64::from(spacing_mm[axis]);
        let total = grid.len();
        for start in 0..total {
            // Line starts: indices whose coordinate along `axis` is zero.
            if !(start / step).is_multiple_of(n) {
                continue;
            }
            line.clear();
            line.extend((0..n).map(|i| grid[start + i * step]));
            env.transform(&line, spacing, &mut out);
            for (i, &v) in out.iter().enumerate() {
                grid[start + i * step] = v;
            }
        }
    }
    Ok(grid)
}

#[derive(Default)]
struct Envelope {
    sites: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    /// `out[q] = min_p (spacing·(q − p))² + f[p]`, infinite sites skipped.
    fn transform(&mut self, f: &[f64], spacing: f64, out: &mut Vec<f64>) {
        out.clear();
        self.sites.clear();
        self.bounds.clear();
        let pos = |p: usize| p as f64 * spacing;
        let meet = |p: usize, q: usize| {
            let (xp, xq) = (pos(p), pos(q));
            ((f[q] + xq * xq) - (f[p] + xp * xp)) / (2.0 * (xq - xp))
        };
        for (q, fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            loop {
                match self.sites.last() {
                    Some(&p) => {
                        let s = meet(p, q);
                        if s <= *self.bounds.last().expect("bound per site") {
                            self.sites.pop();
                            self.bounds.pop();
                        } else {
                            self.sites.push(q);
                            self.bounds.push(s);
                            break;
                        }
                    }
                    None => {
                        self.sites.push(q);
                        self.bounds.push(f64::NEG_INFINITY);
                        break;
                    }
                }
            }
        }
        if self.sites.is_empty() {
            out.resize(f.len(), f64::INFINITY);
            return;
        }
        let mut k = 0;
        for q in 0..f.len() {
            let x = pos(q);
            while k + 1 < self.sites.len() && self.bounds[k + 1] < x {
                k += 1;
            }
            let p = self.sites[k];
            let d = x - pos(p);
            out.push(d * d + f[p]);
        }
    }
}
