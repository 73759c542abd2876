//! Image quality metrics on magnitude images: PSNR, SSIM and
//! frequency-band PSNR.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{frequency_of_index, CenteredFft2};
use crate::forward::CineImage;
use num_complex::Complex64;

/// Reported in place of `+inf` for exact reconstructions.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Default band edges as fractions of Nyquist.
pub const DEFAULT_BANDS: (f64, f64) = (1.0 / 6.0, 0.5);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameScores {
    pub per_frame: Vec<f64>,
    pub mean: f64,
}

fn check_shapes(recon: &CineImage, reference: &CineImage) -> Result<()> {
    if !recon.same_shape(reference) {
        return Err(Error::Shape(format!(
            "recon {}x{}x{} vs reference {}x{}x{}",
            recon.height, recon.width, recon.frames, reference.height, reference.width, reference.frames
        )));
    }
    Ok(())
}

fn peak(reference: &CineImage) -> Result<f64> {
    let peak = reference.data.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::ZeroReference);
    }
    Ok(peak)
}

pub(crate) fn psnr_from_mse(peak: f64, mse: f64) -> f64 {
    if mse <= 0.0 {
        return PSNR_CAP_DB;
    }
    (20.0 * (peak / mse.sqrt()).log10()).min(PSNR_CAP_DB)
}

/// PSNR per frame on magnitudes; the peak is `max |ref|` over the stack.
pub fn psnr(recon: &CineImage, reference: &CineImage) -> Result<FrameScores> {
    check_shapes(recon, reference)?;
    let peak = peak(reference)?;
    let per_frame: Vec<f64> = (0..recon.frames)
        .map(|t| {
            let (a, b) = (recon.frame(t), reference.frame(t));
            let mse = a.iter().zip(b).map(|(x, y)| (x.norm() - y.norm()).powi(2)).sum::<f64>() / a.len() as f64;
            psnr_from_mse(peak, mse)
        })
        .collect();
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(FrameScores { per_frame, mean })
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h x w` image.
fn filter_valid(img: &[f64], h: usize, w: usize, kernel: &[f64]) -> Vec<f64> {
    let k = kernel.len();
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..k).map(|i| kernel[i] * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..k).map(|i| kernel[i] * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Mean SSIM of two magnitude images over valid window positions.
pub fn ssim_image(a: &[f64], b: &[f64], h: usize, w: usize, data_range: f64) -> Result<f64> {
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!("{h}x{w} image is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    let kernel = gaussian_window();
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
    let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let mu_a = filter_valid(a, h, w, &kernel);
    let mu_b = filter_valid(b, h, w, &kernel);
    let e_aa = filter_valid(&aa, h, w, &kernel);
    let e_bb = filter_valid(&bb, h, w, &kernel);
    let e_ab = filter_valid(&ab, h, w, &kernel);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

/// SSIM per frame on magnitudes, data range `max |ref|` over the stack.
pub fn ssim(recon: &CineImage, reference: &CineImage) -> Result<FrameScores> {
    check_shapes(recon, reference)?;
    let range = peak(reference)?;
    let (h, w) = (recon.height, recon.width);
    let per_frame = (0..recon.frames)
        .map(|t| {
            let a: Vec<f64> = recon.frame(t).iter().map(|z| z.norm()).collect();
            let b: Vec<f64> = reference.frame(t).iter().map(|z| z.norm()).collect();
            ssim_image(&a, &b, h, w, range)
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = per_frame.iter().sum::<f64>() / per_frame.len() as f64;
    Ok(FrameScores { per_frame, mean })
}

/// Radial frequency of each centered k-grid cell as a fraction of Nyquist.
pub fn radial_frequency(height: usize, width: usize) -> Vec<f64> {
    let (ny, nx) = (height as f64 / 2.0, width as f64 / 2.0);
    (0..height * width)
        .map(|i| {
            let kx = frequency_of_index(i % width, width) / nx;
            let ky = frequency_of_index(i / width, height) / ny;
            (kx * kx + ky * ky).sqrt()
        })
        .collect()
}

/// Band index 0/1/2 of each k-grid cell for cutoffs `(c1, c2)`; the high
/// band also takes the corners beyond Nyquist.
pub fn band_masks(height: usize, width: usize, cutoffs: (f64, f64)) -> Vec<u8> {
    radial_frequency(height, width)
        .into_iter()
        .map(|rho| {
            if rho < cutoffs.0 {
                0
            } else if rho < cutoffs.1 {
                1
            } else {
                2
            }
        })
        .collect()
}

/// Ideal annular band-pass of a magnitude image; returns the (complex)
/// filtered image.
pub fn band_filter(magnitude: &[f64], masks: &[u8], band: u8, fft: &CenteredFft2) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = magnitude.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft.forward(&mut buf);
    for (z, &m) in buf.iter_mut().zip(masks) {
        if m != band {
            *z = Complex64::new(0.0, 0.0);
        }
    }
    fft.adjoint(&mut buf);
    buf
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPsnr {
    pub low: f64,
    pub mid: f64,
    pub high: f64,
}

fn check_cutoffs(cutoffs: (f64, f64)) -> Result<()> {
    if !(0.0 < cutoffs.0 && cutoffs.0 < cutoffs.1 && cutoffs.1 < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "band cutoffs must satisfy 0 < c1 < c2 < 1, got ({}, {})",
            cutoffs.0, cutoffs.1
        )));
    }
    Ok(())
}

/// PSNR between band-filtered magnitudes over the whole stack, peak
/// `max |ref|`.
pub fn band_psnr(recon: &CineImage, reference: &CineImage, cutoffs: (f64, f64)) -> Result<BandPsnr> {
    check_shapes(recon, reference)?;
    check_cutoffs(cutoffs)?;
    let peak = peak(reference)?;
    let (h, w) = (recon.height, recon.width);
    let fft = CenteredFft2::new(h, w);
    let masks = band_masks(h, w, cutoffs);
    let mut sq = [0.0; 3];
    for t in 0..recon.frames {
        let a: Vec<f64> = recon.frame(t).iter().map(|z| z.norm()).collect();
        let b: Vec<f64> = reference.frame(t).iter().map(|z| z.norm()).collect();
        for band in 0..3u8 {
            let fa = band_filter(&a, &masks, band, &fft);
            let fb = band_filter(&b, &masks, band, &fft);
            sq[band as usize] += fa.iter().zip(&fb).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>();
        }
    }
    let count = recon.data.len() as f64;
    Ok(BandPsnr {
        low: psnr_from_mse(peak, sq[0] / count),
        mid: psnr_from_mse(peak, sq[1] / count),
        high: psnr_from_mse(peak, sq[2] / count),
    })
}

/// Full metric bundle for a reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub psnr_db: FrameScores,
    pub ssim: FrameScores,
    pub band_psnr: BandPsnr,
    pub band_cutoffs: (f64, f64),
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub weight_rank: Option<usize>,
}

impl MetricReport {
    pub fn compute(recon: &CineImage, reference: &CineImage, cutoffs: (f64, f64)) -> Result<Self> {
        Ok(Self {
            psnr_db: psnr(recon, reference)?,
            ssim: ssim(recon, reference)?,
            band_psnr: band_psnr(recon, reference, cutoffs)?,
            band_cutoffs: cutoffs,
            weight_rank: None,
        })
    }

    /// One row per frame plus a `mean` summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("frame,psnr_db,ssim,band_low_db,band_mid_db,band_high_db\n");
        for (t, (p, s)) in self.psnr_db.per_frame.iter().zip(&self.ssim.per_frame).enumerate() {
            out.push_str(&format!("{t},{p:.6},{s:.6},,,\n"));
        }
        out.push_str(&format!(
            "mean,{:.6},{:.6},{:.6},{:.6},{:.6}\n",
            self.psnr_db.mean, self.ssim.mean, self.band_psnr.low, self.band_psnr.mid, self.band_psnr.high
        ));
        out
    }
}
