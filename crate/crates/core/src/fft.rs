//! Unitary 2-D DFT in the centered, half-pixel convention used throughout:
//!
//! `X(k) = 1/sqrt(HW) * sum_p x_p exp(-i 2 pi k . r_p)`
//!
//! with `r_p` the normalized pixel centers and integer `k` in
//! `[-D/2, D/2)` stored with DC at index `D/2` on each axis.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::primitive::pixel_center;

/// Frequency (cycles/FOV) of stored index `m` on an axis of `len` samples.
#[inline]
pub fn frequency_of_index(m: usize, len: usize) -> f64 {
    m as f64 - (len / 2) as f64
}

struct Axis {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    /// exp(-i 2 pi k (0.5 - len/2)/len) per stored index.
    phase: Vec<Complex64>,
}

impl Axis {
    fn new(len: usize, planner: &mut FftPlanner<f64>) -> Self {
        let offset = pixel_center(0, len);
        let phase = (0..len)
            .map(|m| Complex64::from_polar(1.0, -2.0 * PI * frequency_of_index(m, len) * offset))
            .collect();
        Self {
            len,
            forward: planner.plan_fft_forward(len),
            inverse: planner.plan_fft_inverse(len),
            phase,
        }
    }

    /// In-place unnormalized centered transform of contiguous lines.
    fn forward_lines(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = self.len;
        let shift = n / 2;
        scratch.resize(n, Complex64::new(0.0, 0.0));
        self.forward.process(data);
        for line in data.chunks_exact_mut(n) {
            // stored index m holds FFT bin (m - n/2) mod n
            for m in 0..n {
                scratch[m] = line[(m + n - shift) % n] * self.phase[m];
            }
            line.copy_from_slice(&scratch[..n]);
        }
    }

    fn adjoint_lines(&self, data: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let n = self.len;
        let shift = n / 2;
        scratch.resize(n, Complex64::new(0.0, 0.0));
        for line in data.chunks_exact_mut(n) {
            for m in 0..n {
                scratch[(m + n - shift) % n] = line[m] * self.phase[m].conj();
            }
            line.copy_from_slice(&scratch[..n]);
        }
        self.inverse.process(data);
    }
}

/// Planned centered unitary transform for one grid size.
pub struct CenteredFft2 {
    height: usize,
    width: usize,
    rows: Axis,
    cols: Axis,
}

impl std::fmt::Debug for CenteredFft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CenteredFft2")
            .field("height", &self.height)
            .field("width", &self.width)
            .finish()
    }
}

impl CenteredFft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            cols: Axis::new(width, &mut planner),
            rows: Axis::new(height, &mut planner),
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn scale(&self) -> f64 {
        1.0 / ((self.height * self.width) as f64).sqrt()
    }

    /// Image (row-major) to centered k-space, in place.
    pub fn forward(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.height * self.width);
        let mut scratch = Vec::new();
        self.cols.forward_lines(data, &mut scratch);
        let mut t = transpose(data, self.height, self.width);
        self.rows.forward_lines(&mut t, &mut scratch);
        let s = self.scale();
        transpose_into(&t, self.width, self.height, data);
        data.iter_mut().for_each(|z| *z *= s);
    }

    /// Conjugate transpose of [`CenteredFft2::forward`] (its inverse).
    pub fn adjoint(&self, data: &mut [Complex64]) {
        assert_eq!(data.len(), self.height * self.width);
        let mut scratch = Vec::new();
        self.cols.adjoint_lines(data, &mut scratch);
        let mut t = transpose(data, self.height, self.width);
        self.rows.adjoint_lines(&mut t, &mut scratch);
        let s = self.scale();
        transpose_into(&t, self.width, self.height, data);
        data.iter_mut().for_each(|z| *z *= s);
    }
}

fn transpose(data: &[Complex64], rows: usize, cols: usize) -> Vec<Complex64> {
    let mut out = vec![Complex64::new(0.0, 0.0); data.len()];
    transpose_into(data, rows, cols, &mut out);
    out
}

fn transpose_into(data: &[Complex64], rows: usize, cols: usize, out: &mut [Complex64]) {
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
}

/// Separable exponentials for evaluating the centered DFT at one arbitrary
/// frequency `k = [kx, ky]` (cycles/FOV), scaled like the unitary grid
/// transform.
pub(crate) struct DirectKernel {
    pub ex: Vec<Complex64>,
    pub ey: Vec<Complex64>,
}

impl DirectKernel {
    pub fn new(k: [f64; 2], height: usize, width: usize) -> Self {
        let scale = 1.0 / ((height * width) as f64).sqrt();
        let ex = (0..width)
            .map(|j| Complex64::from_polar(1.0, -2.0 * PI * k[0] * pixel_center(j, width)))
            .collect();
        let ey = (0..height)
            .map(|i| Complex64::from_polar(scale, -2.0 * PI * k[1] * pixel_center(i, height)))
            .collect();
        Self { ex, ey }
    }

    pub fn apply(&self, image: &[Complex64]) -> Complex64 {
        let width = self.ex.len();
        image
            .chunks_exact(width)
            .zip(&self.ey)
            .map(|(row, ey)| ey * row.iter().zip(&self.ex).map(|(x, e)| x * e).sum::<Complex64>())
            .sum()
    }

    pub fn apply_adjoint(&self, value: Complex64, image: &mut [Complex64]) {
        let width = self.ex.len();
        for (row, ey) in image.chunks_exact_mut(width).zip(&self.ey) {
            let f = value * ey.conj();
            for (x, e) in row.iter_mut().zip(&self.ex) {
                *x += f * e.conj();
            }
        }
    }
}

/// Direct centered DFT of `image` at frequency `k`; O(HW).
pub fn direct_dft(image: &[Complex64], height: usize, width: usize, k: [f64; 2]) -> Complex64 {
    DirectKernel::new(k, height, width).apply(image)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, n: usize) -> Vec<Complex64> {
        (0..n)
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    #[test]
    fn matches_direct_sum_even_and_odd() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (h, w) in [(8, 8), (6, 10), (5, 7), (16, 9)] {
            let x = random_image(&mut rng, h * w);
            let mut y = x.clone();
            CenteredFft2::new(h, w).forward(&mut y);
            for i in 0..h {
                for j in 0..w {
                    let k = [frequency_of_index(j, w), frequency_of_index(i, h)];
                    let d = direct_dft(&x, h, w, k);
                    assert!((d - y[i * w + j]).norm() < 1e-12, "{h}x{w} at ({i},{j})");
                }
            }
        }
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (h, w) = (12, 20);
        let fft = CenteredFft2::new(h, w);
        let x = random_image(&mut rng, h * w);
        let mut y = x.clone();
        fft.forward(&mut y);
        let ex: f64 = x.iter().map(|z| z.norm_sqr()).sum();
        let ey: f64 = y.iter().map(|z| z.norm_sqr()).sum();
        assert!((ex - ey).abs() < 1e-12 * ex);
        fft.adjoint(&mut y);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).norm() < 1e-13);
        }
    }

    #[test]
    fn centered_impulse_is_flat() {
        let (h, w) = (8, 8);
        let mut x = vec![Complex64::new(0.0, 0.0); h * w];
        x[(h / 2) * w + w / 2] = Complex64::new(1.0, 0.0);
        CenteredFft2::new(h, w).forward(&mut x);
        for z in &x {
            assert!((z.norm() - 1.0 / 8.0).abs() < 1e-15);
        }
    }
}
