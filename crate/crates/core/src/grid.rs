//! Row-major 2-d grids: grayscale planes in `[0, 1]`, binary masks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grid<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// A single-channel float image.
pub type Plane = Grid<f64>;
/// A binary image; `true` is foreground.
pub type Mask = Grid<bool>;

impl<T: Clone> Grid<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Grid {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::config(format!(
                "{width}×{height} grid needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Grid {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> &T {
        &self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: T) {
        self.data[y * self.width + x] = value;
    }

    pub fn map<U>(&self, f: impl Fn(&T) -> U) -> Grid<U> {
        Grid {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(f).collect(),
        }
    }

    /// The `w × h` window whose top-left corner is `(x0, y0)`.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<Self> {
        if x0 + w > self.width || y0 + h > self.height {
            return Err(Error::config(format!(
                "crop {w}×{h} at ({x0},{y0}) exceeds {}×{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            data.extend_from_slice(&self.data[y * self.width + x0..y * self.width + x0 + w]);
        }
        Ok(Grid {
            width: w,
            height: h,
            data,
        })
    }

    pub fn flip_horizontal(&self) -> Self {
        Grid::from_fn(self.width, self.height, |x, y| {
            self.get(self.width - 1 - x, y).clone()
        })
    }

    pub fn flip_vertical(&self) -> Self {
        Grid::from_fn(self.width, self.height, |x, y| {
            self.get(x, self.height - 1 - y).clone()
        })
    }

    pub fn same_dims<U>(&self, other: &Grid<U>) -> bool {
        self.width == other.width && self.height == other.height
    }
}

impl Grid<bool> {
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty_mask(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }
}

impl Grid<f64> {
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Rescales to `[0, 1]`; a constant plane becomes all zeros.
    pub fn min_max_normalized(&self) -> Plane {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        if !(span > 0.0) || !span.is_finite() {
            return self.map(|_| 0.0);
        }
        self.map(|&v| (v - lo) / span)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// As a `1 × 1 × H × W` tensor.
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![1, 1, self.height, self.width], self.data.clone()).expect("grid dims")
    }

    /// From a tensor whose last two axes are `H × W` and whose leading
    /// axes are all 1.
    pub fn from_tensor(t: &Tensor) -> Result<Plane> {
        let shape = t.shape();
        if shape.len() < 2 || shape[..shape.len() - 2].iter().any(|&d| d != 1) {
            return Err(Error::config(format!("tensor {shape:?} is not a single plane")));
        }
        let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);
        Grid::from_vec(w, h, t.data().to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn crop_and_flip() {
        let g = Grid::from_fn(4, 3, |x, y| (y * 4 + x) as f64);
        let c = g.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), [5.0, 6.0, 9.0, 10.0]);
        assert!(g.crop(3, 0, 2, 1).is_err());
        assert_eq!(g.flip_horizontal().get(0, 0), &3.0);
        assert_eq!(g.flip_vertical().get(0, 0), &8.0);
        assert_eq!(g.flip_horizontal().flip_horizontal(), g);
    }

    #[test]
    fn normalization_edge_cases() {
        let c = Plane::filled(3, 3, 0.7);
        assert!(c.min_max_normalized().data().iter().all(|&v| v == 0.0));
        let g = Plane::from_vec(2, 1, vec![2.0, 6.0]).unwrap();
        assert_eq!(g.min_max_normalized().data(), [0.0, 1.0]);
    }
}
