use super::DosimetryError;

/// Scalar field on a `[D, H, W]` voxel grid (dose in Gy, or CT in `[0, 1]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    shape: [usize; 3],
    spacing_mm: [f32; 3],
    values: Vec<f32>,
}

impl Volume {
    pub fn new(shape: [usize; 3], spacing_mm: [f32; 3], values: Vec<f32>) -> Result<Self, DosimetryError> {
        check_grid(shape, spacing_mm, values.len())?;
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(DosimetryError::NonFinite { index: i });
        }
        Ok(Self {
            shape,
            spacing_mm,
            values,
        })
    }

    pub fn filled(shape: [usize; 3], spacing_mm: [f32; 3], value: f32) -> Result<Self, DosimetryError> {
        Self::new(shape, spacing_mm, vec![value; shape.iter().product()])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f32; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index(&self, z: usize, y: usize, x: usize) -> usize {
        (z * self.shape[1] + y) * self.shape[2] + x
    }

    pub fn get(&self, z: usize, y: usize, x: usize) -> f32 {
        self.values[self.index(z, y, x)]
    }

    /// Axial slice `z` as a row-major `H x W` buffer.
    pub fn slice(&self, z: usize) -> &[f32] {
        let plane = self.shape[1] * self.shape[2];
        &self.values[z * plane..(z + 1) * plane]
    }

    /// Clamp negatives to zero (predictions are only clamped at evaluation).
    pub fn clamp_non_negative(&self) -> Self {
        Self {
            values: self.values.iter().map(|v| v.max(0.0)).collect(),
            ..self.clone()
        }
    }

    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            values: self.values.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }

    /// True for dose volumes: no negative values.
    pub fn is_non_negative(&self) -> bool {
        self.values.iter().all(|&v| v >= 0.0)
    }

    pub fn same_grid(&self, other_shape: [usize; 3]) -> Result<(), DosimetryError> {
        if self.shape != other_shape {
            return Err(DosimetryError::GridMismatch {
                expected: self.shape,
                actual: other_shape,
            });
        }
        Ok(())
    }
}

/// Binary structure mask on the same kind of grid.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskVolume {
    shape: [usize; 3],
    spacing_mm: [f32; 3],
    values: Vec<u8>,
    label: String,
}

impl MaskVolume {
    pub fn new(shape: [usize; 3], spacing_mm: [f32; 3], values: Vec<u8>, label: impl Into<String>) -> Result<Self, DosimetryError> {
        check_grid(shape, spacing_mm, values.len())?;
        let label = label.into();
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(DosimetryError::NotBinary { label, index: i });
        }
        Ok(Self {
            shape,
            spacing_mm,
            values,
            label,
        })
    }

    pub fn from_fn(
        shape: [usize; 3],
        spacing_mm: [f32; 3],
        label: impl Into<String>,
        f: impl Fn(usize, usize, usize) -> bool,
    ) -> Result<Self, DosimetryError> {
        let mut values = Vec::with_capacity(shape.iter().product());
        for z in 0..shape[0] {
            for y in 0..shape[1] {
                for x in 0..shape[2] {
                    values.push(u8::from(f(z, y, x)));
                }
            }
        }
        Self::new(shape, spacing_mm, values, label)
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing_mm(&self) -> [f32; 3] {
        self.spacing_mm
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.values[i] == 1
    }

    pub fn slice(&self, z: usize) -> &[u8] {
        let plane = self.shape[1] * self.shape[2];
        &self.values[z * plane..(z + 1) * plane]
    }

    pub fn overlaps(&self, other: &MaskVolume) -> bool {
        self.values.iter().zip(&other.values).any(|(&a, &b)| a == 1 && b == 1)
    }
}

fn check_grid(shape: [usize; 3], spacing_mm: [f32; 3], len: usize) -> Result<(), DosimetryError> {
    if shape.contains(&0) {
        return Err(DosimetryError::EmptyGrid { shape });
    }
    if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(DosimetryError::Spacing { spacing_mm });
    }
    let expected = shape.iter().try_fold(1usize, |a, &b| a.checked_mul(b));
    if expected != Some(len) {
        return Err(DosimetryError::ValueCount {
            shape,
            actual: len,
        });
    }
    Ok(())
}
