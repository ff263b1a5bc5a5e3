use std::path::Path;

use crate::ingest::{ThermalGrid, BACKGROUND};
use crate::segmentation::SegmentationError;

/// Foreground/background mask with values in {0, 1}, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self, SegmentationError> {
        if values.len() != height * width {
            return Err(SegmentationError::DimensionMismatch {
                expected: (height, width),
                found: (values.len() / width.max(1), width),
            });
        }
        if let Some(i) = values.iter().position(|&v| v > 1) {
            return Err(SegmentationError::NonBinaryInput {
                index: i,
                value: values[i],
            });
        }
        Ok(BinaryMask { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        BinaryMask {
            height,
            width,
            values: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c) as u8);
            }
        }
        BinaryMask { height, width, values }
    }

    /// Foreground where `prob >= 0.5`.
    pub fn from_probability(height: usize, width: usize, prob: &[f32]) -> Self {
        assert_eq!(prob.len(), height * width);
        BinaryMask {
            height,
            width,
            values: prob.iter().map(|&p| (p >= 0.5) as u8).collect(),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.width + col] == 1
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.count() as f64 / self.values.len() as f64
    }

    /// Reads an 8-bit single-channel PNG: 255 is foot, 0 is background.
    pub fn load_png(path: &Path) -> Result<Self, SegmentationError> {
        let img = image::open(path)
            .map_err(|e| SegmentationError::Io(format!("{}: {e}", path.display())))?
            .to_luma8();
        let (w, h) = img.dimensions();
        let mut values = Vec::with_capacity((w * h) as usize);
        for (i, &v) in img.as_raw().iter().enumerate() {
            match v {
                0 => values.push(0),
                255 => values.push(1),
                other => return Err(SegmentationError::NonBinaryInput { index: i, value: other }),
            }
        }
        BinaryMask::new(h as usize, w as usize, values)
    }

    pub fn save_png(&self, path: &Path) -> Result<(), SegmentationError> {
        let raw = self.values.iter().map(|&v| v * 255).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions")
            .save(path)
            .map_err(|e| SegmentationError::Io(format!("{}: {e}", path.display())))
    }
}

fn check_dims(a: (usize, usize), b: (usize, usize)) -> Result<(), SegmentationError> {
    if a != b {
        return Err(SegmentationError::DimensionMismatch { expected: a, found: b });
    }
    Ok(())
}

/// Intersection over union; two empty masks agree perfectly (1.0).
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64, SegmentationError> {
    check_dims(a.dims(), b.dims())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values.iter().zip(&b.values) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Keeps foot pixels bit-exactly and sets everything else to the
/// background sentinel.
pub fn mask_thermal(thermal: &ThermalGrid, mask: &BinaryMask) -> Result<ThermalGrid, SegmentationError> {
    check_dims(mask.dims(), thermal.dims())?;
    let values = thermal
        .values()
        .iter()
        .zip(&mask.values)
        .map(|(&t, &m)| if m == 1 { t } else { BACKGROUND })
        .collect();
    Ok(ThermalGrid::with_background(
        thermal.height(),
        thermal.width(),
        values,
        thermal.valid_range(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::DEFAULT_VALID_RANGE;

    fn block(h: usize, w: usize, r0: usize, c0: usize, size: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |r, c| (r0..r0 + size).contains(&r) && (c0..c0 + size).contains(&c))
    }

    #[test]
    fn iou_examples() {
        let a = block(4, 4, 1, 0, 2);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        let far = block(4, 4, 0, 2, 2);
        let near = block(4, 4, 1, 1, 2);
        assert_eq!(iou(&block(4, 4, 2, 0, 2), &far).unwrap(), 0.0);
        // overlap 2 px, union 6 px
        assert!((iou(&a, &near).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&BinaryMask::zeros(3, 3), &BinaryMask::zeros(3, 3)).unwrap(), 1.0);
        assert!(iou(&a, &BinaryMask::zeros(3, 4)).is_err());
    }

    #[test]
    fn non_binary_rejected() {
        assert!(matches!(
            BinaryMask::new(1, 2, vec![0, 2]),
            Err(SegmentationError::NonBinaryInput { index: 1, value: 2 })
        ));
    }

    #[test]
    fn mask_thermal_examples() {
        let t = ThermalGrid::new(2, 2, vec![30.0, 31.0, 32.0, 33.0], DEFAULT_VALID_RANGE).unwrap();
        let full = BinaryMask::from_fn(2, 2, |_, _| true);
        assert_eq!(mask_thermal(&t, &full).unwrap().values(), t.values());
        let empty = mask_thermal(&t, &BinaryMask::zeros(2, 2)).unwrap();
        assert_eq!(empty.foreground_count(), 0);
        let checker = BinaryMask::from_fn(2, 2, |r, c| (r + c) % 2 == 0);
        let kept = mask_thermal(&t, &checker).unwrap();
        assert_eq!(kept.foreground_count(), 2);
        assert_eq!(kept.get(0, 0).to_bits(), 30.0f32.to_bits());
        assert!(kept.get(0, 1).is_nan());
    }
}
