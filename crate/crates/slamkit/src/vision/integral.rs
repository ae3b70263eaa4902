//! Integral images: constant-time rectangular sums of intensity and
//! squared intensity, in exact integer arithmetic.

use super::image::GrayImage;

/// (width+1) x (height+1) cumulative sum and sum-of-squares planes.
/// `sum_rect` over any rectangle equals naive summation exactly.
#[derive(Debug, Clone)]
pub struct IntegralImage {
    pub width: u32,
    pub height: u32,
    sum: Vec<i64>,
    sumsq: Vec<i64>,
}

impl IntegralImage {
    pub fn build(img: &GrayImage) -> Self {
        let w = img.width as usize;
        let h = img.height as usize;
        let stride = w + 1;
        let mut sum = vec![0i64; stride * (h + 1)];
        let mut sumsq = vec![0i64; stride * (h + 1)];
        for y in 0..h {
            let row = img.row(y as u32);
            let mut run = 0i64;
            let mut runsq = 0i64;
            for x in 0..w {
                let v = row[x] as i64;
                run += v;
                runsq += v * v;
                let idx = (y + 1) * stride + (x + 1);
                sum[idx] = sum[idx - stride] + run;
                sumsq[idx] = sumsq[idx - stride] + runsq;
            }
        }
        Self {
            width: img.width,
            height: img.height,
            sum,
            sumsq,
        }
    }

    #[inline]
    fn lookup(plane: &[i64], stride: usize, x: u32, y: u32) -> i64 {
        plane[y as usize * stride + x as usize]
    }

    /// Sum of pixels with x in [x0, x1) and y in [y0, y1).
    #[inline]
    pub fn sum_rect(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> i64 {
        debug_assert!(x0 <= x1 && y0 <= y1 && x1 <= self.width && y1 <= self.height);
        let s = self.width as usize + 1;
        Self::lookup(&self.sum, s, x1, y1) + Self::lookup(&self.sum, s, x0, y0)
            - Self::lookup(&self.sum, s, x1, y0)
            - Self::lookup(&self.sum, s, x0, y1)
    }

    /// Sum of squared pixels over the same half-open rectangle.
    #[inline]
    pub fn sumsq_rect(&self, x0: u32, y0: u32, x1: u32, y1: u32) -> i64 {
        debug_assert!(x0 <= x1 && y0 <= y1 && x1 <= self.width && y1 <= self.height);
        let s = self.width as usize + 1;
        Self::lookup(&self.sumsq, s, x1, y1) + Self::lookup(&self.sumsq, s, x0, y0)
            - Self::lookup(&self.sumsq, s, x1, y0)
            - Self::lookup(&self.sumsq, s, x0, y1)
    }
}

/// Integral planes over an i64 grid, for detector responses computed on
/// derivative images local to a region of interest.
#[derive(Debug, Clone)]
pub struct LocalIntegral {
    width: usize,
    sum: Vec<i64>,
}

impl LocalIntegral {
    /// Builds from a row-major grid of `width` x `height` values.
    pub fn build(values: &[i64], width: usize, height: usize) -> Self {
        debug_assert_eq!(values.len(), width * height);
        let stride = width + 1;
        let mut sum = vec![0i64; stride * (height + 1)];
        for y in 0..height {
            let mut run = 0i64;
            for x in 0..width {
                run += values[y * width + x];
                sum[(y + 1) * stride + (x + 1)] = sum[y * stride + (x + 1)] + run;
            }
        }
        Self { width, sum }
    }

    /// Sum over x in [x0, x1), y in [y0, y1).
    #[inline]
    pub fn sum_rect(&self, x0: usize, y0: usize, x1: usize, y1: usize) -> i64 {
        let s = self.width + 1;
        self.sum[y1 * s + x1] + self.sum[y0 * s + x0] - self.sum[y0 * s + x1] - self.sum[y1 * s + x0]
    }
}
