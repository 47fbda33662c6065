//! Row-major image planes and the square ROI tiling shared by all readout plans.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense row-major 2-D array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plane<T> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Clone> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values do not fill a {width}x{height} plane",
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    /// Sample with coordinates clamped to the plane (edge replication).
    #[inline]
    pub fn get_clamped(&self, x: usize, y: usize) -> &T {
        self.get(x.min(self.width - 1), y.min(self.height - 1))
    }

    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Self {
        Self::from_fn(w, h, |x, y| self.get(x0 + x, y0 + y).clone())
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Plane<U> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Plane<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Plane<f64> {
    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Square tiling of an image into ROIs. Boundary ROIs may extend past the image;
/// their out-of-bounds part is treated as edge-replicated padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoiGrid {
    pub roi_size: usize,
    pub cols: usize,
    pub rows: usize,
    pub width: usize,
    pub height: usize,
}

impl RoiGrid {
    pub fn new(width: usize, height: usize, roi_size: usize) -> Result<Self> {
        if roi_size == 0 {
            return Err(Error::Config("roi_size must be positive".into()));
        }
        if width == 0 || height == 0 {
            return Err(Error::Shape("image has zero extent".into()));
        }
        Ok(Self {
            roi_size,
            cols: width.div_ceil(roi_size),
            rows: height.div_ceil(roi_size),
            width,
            height,
        })
    }

    pub fn len(&self) -> usize {
        self.cols * self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// ROI index (row-major) containing pixel `(x, y)`.
    #[inline]
    pub fn roi_of(&self, x: usize, y: usize) -> usize {
        (y / self.roi_size) * self.cols + x / self.roi_size
    }

    /// Top-left corner of ROI `index`.
    pub fn origin(&self, index: usize) -> (usize, usize) {
        ((index % self.cols) * self.roi_size, (index / self.cols) * self.roi_size)
    }

    /// In-bounds extent `(w, h)` of ROI `index`.
    pub fn extent(&self, index: usize) -> (usize, usize) {
        let (x0, y0) = self.origin(index);
        (self.roi_size.min(self.width - x0), self.roi_size.min(self.height - y0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roi_grid_pads_partial_tiles() {
        let g = RoiGrid::new(300, 130, 128).unwrap();
        assert_eq!((g.cols, g.rows), (3, 2));
        assert_eq!(g.extent(2), (44, 128));
        assert_eq!(g.extent(5), (44, 2));
        assert_eq!(g.roi_of(299, 129), 5);
        assert_eq!(g.origin(4), (128, 128));
    }

    #[test]
    fn clamped_access_replicates_edges() {
        let p = Plane::from_fn(3, 2, |x, y| (x + 10 * y) as i32);
        assert_eq!(*p.get_clamped(7, 9), 12);
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(matches!(Plane::from_vec(2, 2, vec![0u8; 3]), Err(Error::Shape(_))));
    }
}
