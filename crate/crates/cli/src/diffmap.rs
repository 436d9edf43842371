//! `|pred - truth|` rendered as an 8-bit binary PGM, axial slices stacked
//! top to bottom, scaled so the largest difference maps to 255.

use aranet::dosimetry::Volume;

#[derive(Clone, Debug, PartialEq)]
pub struct DiffMap {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// Gy represented by pixel value 255 (0 when the volumes are identical).
    pub max_abs_diff_gy: f64,
}

pub fn diff_map(pred: &Volume, truth: &Volume) -> Result<DiffMap, aranet::dosimetry::DosimetryError> {
    truth.same_grid(pred.shape())?;
    let [d, h, w] = truth.shape();
    let diffs: Vec<f64> = pred
        .values()
        .iter()
        .zip(truth.values())
        .map(|(&p, &t)| (f64::from(p) - f64::from(t)).abs())
        .collect();
    let max = diffs.iter().copied().fold(0.0, f64::max);
    let pixels = diffs
        .iter()
        .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
        .collect();
    Ok(DiffMap {
        width: w,
        height: d * h,
        pixels,
        max_abs_diff_gy: max,
    })
}

pub fn encode_pgm(map: &DiffMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.pixels);
    out
}
