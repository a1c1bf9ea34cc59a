//! Dense 2-D scalar images.
//!
//! Pixel convention used throughout the crate: `x` increases with the
//! column index, `y` increases with the row index, and angles are measured
//! from +x toward +y.

/// A dense row-major grid of `f64` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2 {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Image2 {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), width * height, "image data length mismatch");
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, f64> {
        self.data.chunks_mut(self.width)
    }

    pub fn min_max(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in &self.data {
            if v < lo {
                lo = v;
            }
            if v > hi {
                hi = v;
            }
        }
        (lo, hi)
    }

    /// Bilinear sample at continuous pixel coordinates; `fill` outside.
    ///
    /// Sample positions coincide with pixel centers at integer coordinates.
    pub fn sample_bilinear(&self, x: f64, y: f64, fill: f64) -> f64 {
        if !x.is_finite() || !y.is_finite() {
            return fill;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let fx = x - x0;
        let fy = y - y0;
        let ix = x0 as i64;
        let iy = y0 as i64;
        let at = |i: i64, j: i64| -> f64 {
            if i < 0 || j < 0 || i >= self.width as i64 || j >= self.height as i64 {
                fill
            } else {
                self.data[j as usize * self.width + i as usize]
            }
        };
        let v00 = at(ix, iy);
        let v10 = at(ix + 1, iy);
        let v01 = at(ix, iy + 1);
        let v11 = at(ix + 1, iy + 1);
        v00 * (1.0 - fx) * (1.0 - fy)
            + v10 * fx * (1.0 - fy)
            + v01 * (1.0 - fx) * fy
            + v11 * fx * fy
    }

    /// Intensity-weighted centroid, or `None` if total mass is zero.
    pub fn centroid(&self) -> Option<(f64, f64)> {
        let mut mass = 0.0;
        let mut mx = 0.0;
        let mut my = 0.0;
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                mass += v;
                mx += v * x as f64;
                my += v * y as f64;
            }
        }
        if mass <= 0.0 {
            None
        } else {
            Some((mx / mass, my / mass))
        }
    }
}
