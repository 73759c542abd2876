//! Multi-coil k-space forward model `y_{j,t} = F_Omega { S_j x_t }` and its
//! adjoint, for Cartesian line masks and arbitrary k-space point sets.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::{frequency_of_index, CenteredFft2, DirectKernel};
use crate::raster::ComplexGrid;

/// Complex image stack, frame-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CineImage {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub data: Vec<Complex64>,
}

impl CineImage {
    pub fn zeros(height: usize, width: usize, frames: usize) -> Self {
        Self {
            height,
            width,
            frames,
            data: vec![Complex64::new(0.0, 0.0); height * width * frames],
        }
    }

    pub fn from_frames(frames: Vec<ComplexGrid>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Shape("a cine needs at least one frame".into()))?;
        let (height, width) = (first.height, first.width);
        if frames.iter().any(|f| f.height != height || f.width != width) {
            return Err(Error::Shape("frames differ in size".into()));
        }
        let count = frames.len();
        let data = frames.into_iter().flat_map(|f| f.data).collect();
        Ok(Self {
            height,
            width,
            frames: count,
            data,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame(&self, t: usize) -> &[Complex64] {
        let n = self.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [Complex64] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn frame_grid(&self, t: usize) -> ComplexGrid {
        ComplexGrid {
            height: self.height,
            width: self.width,
            data: self.frame(t).to_vec(),
        }
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.norm()).collect()
    }

    pub fn same_shape(&self, other: &CineImage) -> bool {
        self.height == other.height && self.width == other.width && self.frames == other.frames
    }
}

/// Coil sensitivity maps, coil-major then row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoilMaps {
    pub coils: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<Complex64>,
}

impl CoilMaps {
    /// A single coil with unit sensitivity everywhere.
    pub fn unit(height: usize, width: usize) -> Self {
        Self {
            coils: 1,
            height,
            width,
            data: vec![Complex64::new(1.0, 0.0); height * width],
        }
    }

    pub fn coil(&self, j: usize) -> &[Complex64] {
        let n = self.height * self.width;
        &self.data[j * n..(j + 1) * n]
    }

    pub fn validate(&self) -> Result<()> {
        if self.coils == 0 {
            return Err(Error::Shape("at least one coil map is required".into()));
        }
        if self.data.len() != self.coils * self.height * self.width {
            return Err(Error::Shape("coil map buffer size disagrees with dims".into()));
        }
        if self.data.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::Shape("coil maps contain non-finite values".into()));
        }
        if self.data.iter().all(|z| z.norm_sqr() == 0.0) {
            return Err(Error::Shape("all coil maps are zero".into()));
        }
        Ok(())
    }

    /// Root-sum-of-squares magnitude per pixel.
    pub fn rss(&self) -> Vec<f64> {
        let n = self.height * self.width;
        (0..n)
            .map(|p| (0..self.coils).map(|j| self.data[j * n + p].norm_sqr()).sum::<f64>().sqrt())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatternKind {
    CartesianMask,
    PointSet,
}

/// Acquired k-space locations per frame.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingPattern {
    /// `frames x height x width` booleans over the centered k-grid.
    Cartesian {
        frames: usize,
        height: usize,
        width: usize,
        mask: Vec<bool>,
    },
    /// Per-frame `[kx, ky]` coordinates in cycles/FOV.
    Points { points: Vec<Vec<[f64; 2]>> },
}

impl SamplingPattern {
    pub fn full(frames: usize, height: usize, width: usize) -> Self {
        SamplingPattern::Cartesian {
            frames,
            height,
            width,
            mask: vec![true; frames * height * width],
        }
    }

    pub fn kind(&self) -> PatternKind {
        match self {
            SamplingPattern::Cartesian { .. } => PatternKind::CartesianMask,
            SamplingPattern::Points { .. } => PatternKind::PointSet,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            SamplingPattern::Cartesian { frames, .. } => *frames,
            SamplingPattern::Points { points } => points.len(),
        }
    }

    pub fn samples_in_frame(&self, t: usize) -> usize {
        match self {
            SamplingPattern::Cartesian {
                height, width, mask, ..
            } => {
                let n = height * width;
                mask[t * n..(t + 1) * n].iter().filter(|&&b| b).count()
            }
            SamplingPattern::Points { points } => points[t].len(),
        }
    }

    /// Sample offsets within one coil's block: `offsets[t]..offsets[t+1]`.
    pub fn frame_offsets(&self) -> Vec<usize> {
        let mut offsets = vec![0];
        for t in 0..self.frames() {
            offsets.push(offsets[t] + self.samples_in_frame(t));
        }
        offsets
    }

    /// Coordinates `[kx, ky]` of every sample of frame `t`, in sample order.
    pub fn frame_coordinates(&self, t: usize) -> Vec<[f64; 2]> {
        match self {
            SamplingPattern::Cartesian {
                height, width, mask, ..
            } => {
                let n = height * width;
                mask[t * n..(t + 1) * n]
                    .iter()
                    .enumerate()
                    .filter(|(_, &b)| b)
                    .map(|(i, _)| [frequency_of_index(i % width, *width), frequency_of_index(i / width, *height)])
                    .collect()
            }
            SamplingPattern::Points { points } => points[t].clone(),
        }
    }

    pub fn validate(&self, height: usize, width: usize, frames: usize) -> Result<()> {
        if self.frames() != frames {
            return Err(Error::Shape(format!("pattern has {} frames, expected {frames}", self.frames())));
        }
        match self {
            SamplingPattern::Cartesian {
                height: h,
                width: w,
                mask,
                ..
            } => {
                if *h != height || *w != width || mask.len() != frames * height * width {
                    return Err(Error::Shape("mask dims disagree with the image grid".into()));
                }
            }
            SamplingPattern::Points { points } => {
                let (nx, ny) = (width as f64 / 2.0, height as f64 / 2.0);
                for (t, frame) in points.iter().enumerate() {
                    if frame.iter().any(|k| !(k[0].abs() <= nx && k[1].abs() <= ny)) {
                        return Err(Error::Shape(format!("frame {t} has points outside the Nyquist box")));
                    }
                }
            }
        }
        for t in 0..frames {
            if self.samples_in_frame(t) == 0 {
                return Err(Error::EmptyPatternFrame(t));
            }
        }
        Ok(())
    }
}

/// Samples laid out coil-major, then frame, then sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub coils: usize,
    pub offsets: Vec<usize>,
    pub data: Vec<Complex64>,
}

impl Samples {
    pub fn zeros(coils: usize, offsets: Vec<usize>) -> Self {
        let per_coil = *offsets.last().unwrap_or(&0);
        Self {
            coils,
            offsets,
            data: vec![Complex64::new(0.0, 0.0); coils * per_coil],
        }
    }

    pub fn per_coil(&self) -> usize {
        *self.offsets.last().unwrap_or(&0)
    }

    pub fn block(&self, coil: usize, t: usize) -> &[Complex64] {
        let base = coil * self.per_coil();
        &self.data[base + self.offsets[t]..base + self.offsets[t + 1]]
    }

    pub fn same_layout(&self, other: &Samples) -> bool {
        self.coils == other.coils && self.offsets == other.offsets && self.data.len() == other.data.len()
    }

    pub fn inner(&self, other: &Samples) -> Complex64 {
        self.data.iter().zip(&other.data).map(|(a, b)| a.conj() * b).sum()
    }
}

/// Measured data plus everything needed to evaluate the forward model.
#[derive(Debug, Clone, PartialEq)]
pub struct KSpaceDataset {
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub pattern: SamplingPattern,
    pub coils: CoilMaps,
    pub samples: Samples,
    pub noise_std: f64,
    pub reference: Option<CineImage>,
}

impl KSpaceDataset {
    pub fn validate(&self) -> Result<()> {
        self.coils.validate()?;
        if self.coils.height != self.height || self.coils.width != self.width {
            return Err(Error::Shape("coil maps disagree with the image grid".into()));
        }
        self.pattern.validate(self.height, self.width, self.frames)?;
        if self.samples.coils != self.coils.coils || self.samples.offsets != self.pattern.frame_offsets() {
            return Err(Error::Shape("sample layout disagrees with the pattern".into()));
        }
        if self.samples.data.len() != self.samples.coils * self.samples.per_coil() {
            return Err(Error::Shape("sample buffer size disagrees with the layout".into()));
        }
        if let Some(r) = &self.reference {
            if r.height != self.height || r.width != self.width || r.frames != self.frames {
                return Err(Error::Shape("reference cine disagrees with dataset dims".into()));
            }
        }
        Ok(())
    }
}

enum FrameSampler {
    Mask(Vec<usize>),
    Direct(Vec<DirectKernel>),
}

/// Planned forward operator for one coil set and sampling pattern.
pub struct ForwardModel {
    height: usize,
    width: usize,
    frames: usize,
    fft: CenteredFft2,
    coils: CoilMaps,
    samplers: Vec<FrameSampler>,
    offsets: Vec<usize>,
}

impl std::fmt::Debug for ForwardModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ForwardModel")
            .field("height", &self.height)
            .field("width", &self.width)
            .field("frames", &self.frames)
            .field("coils", &self.coils.coils)
            .finish()
    }
}

impl ForwardModel {
    pub fn new(coils: &CoilMaps, pattern: &SamplingPattern) -> Result<Self> {
        coils.validate()?;
        let (height, width) = (coils.height, coils.width);
        let frames = pattern.frames();
        pattern.validate(height, width, frames)?;
        let samplers = (0..frames)
            .map(|t| match pattern {
                SamplingPattern::Cartesian { mask, .. } => {
                    let n = height * width;
                    FrameSampler::Mask((0..n).filter(|&i| mask[t * n + i]).collect())
                }
                SamplingPattern::Points { points } => FrameSampler::Direct(
                    points[t].iter().map(|&k| DirectKernel::new(k, height, width)).collect(),
                ),
            })
            .collect();
        Ok(Self {
            height,
            width,
            frames,
            fft: CenteredFft2::new(height, width),
            coils: coils.clone(),
            samplers,
            offsets: pattern.frame_offsets(),
        })
    }

    pub fn for_dataset(dataset: &KSpaceDataset) -> Result<Self> {
        dataset.validate()?;
        Self::new(&dataset.coils, &dataset.pattern)
    }

    pub fn num_coils(&self) -> usize {
        self.coils.coils
    }

    fn check_image(&self, x: &CineImage) -> Result<()> {
        if x.height != self.height || x.width != self.width || x.frames != self.frames {
            return Err(Error::Shape(format!(
                "image is {}x{}x{}, operator expects {}x{}x{}",
                x.height, x.width, x.frames, self.height, self.width, self.frames
            )));
        }
        Ok(())
    }

    fn check_samples(&self, y: &Samples) -> Result<()> {
        if y.coils != self.coils.coils || y.offsets != self.offsets || y.data.len() != y.coils * y.per_coil() {
            return Err(Error::Shape("sample layout disagrees with the operator".into()));
        }
        Ok(())
    }

    fn forward_block(&self, image: &[Complex64], coil: usize, t: usize) -> Vec<Complex64> {
        let sens = self.coils.coil(coil);
        let mut buf: Vec<Complex64> = image.iter().zip(sens).map(|(x, s)| x * s).collect();
        match &self.samplers[t] {
            FrameSampler::Mask(indices) => {
                self.fft.forward(&mut buf);
                indices.iter().map(|&i| buf[i]).collect()
            }
            FrameSampler::Direct(kernels) => kernels.iter().map(|k| k.apply(&buf)).collect(),
        }
    }

    fn adjoint_block(&self, values: &[Complex64], coil: usize, t: usize, out: &mut [Complex64]) {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.height * self.width];
        match &self.samplers[t] {
            FrameSampler::Mask(indices) => {
                for (&i, v) in indices.iter().zip(values) {
                    buf[i] = *v;
                }
                self.fft.adjoint(&mut buf);
            }
            FrameSampler::Direct(kernels) => {
                for (k, v) in kernels.iter().zip(values) {
                    k.apply_adjoint(*v, &mut buf);
                }
            }
        }
        for ((o, b), s) in out.iter_mut().zip(&buf).zip(self.coils.coil(coil)) {
            *o += s.conj() * b;
        }
    }

    /// Predicted samples for every coil and frame.
    pub fn forward(&self, x: &CineImage) -> Result<Samples> {
        self.check_image(x)?;
        let coils = self.coils.coils;
        let blocks: Vec<Vec<Complex64>> = (0..coils * self.frames)
            .into_par_iter()
            .map(|jt| self.forward_block(x.frame(jt % self.frames), jt / self.frames, jt % self.frames))
            .collect();
        let mut samples = Samples::zeros(coils, self.offsets.clone());
        let per_coil = samples.per_coil();
        for (jt, block) in blocks.into_iter().enumerate() {
            let (j, t) = (jt / self.frames, jt % self.frames);
            let start = j * per_coil + self.offsets[t];
            samples.data[start..start + block.len()].copy_from_slice(&block);
        }
        Ok(samples)
    }

    /// Conjugate-transpose operator: scatter, inverse transform, multiply by
    /// `conj(S_j)`, sum over coils.
    pub fn adjoint(&self, y: &Samples) -> Result<CineImage> {
        self.check_samples(y)?;
        let mut out = CineImage::zeros(self.height, self.width, self.frames);
        let n = self.height * self.width;
        out.data.par_chunks_mut(n).enumerate().for_each(|(t, frame)| {
            for j in 0..self.coils.coils {
                self.adjoint_block(y.block(j, t), j, t, frame);
            }
        });
        Ok(out)
    }

    /// `sum ||y - F x||^2` and the sensitivity `a = -2 F^H (y - F x)`.
    pub fn data_loss_and_adjoint(&self, x: &CineImage, y: &Samples) -> Result<(f64, CineImage)> {
        self.check_samples(y)?;
        let predicted = self.forward(x)?;
        let mut residual = predicted;
        let mut loss = 0.0;
        for (r, m) in residual.data.iter_mut().zip(&y.data) {
            *r = m - *r;
            loss += r.norm_sqr();
        }
        let mut a = self.adjoint(&residual)?;
        a.data.iter_mut().for_each(|z| *z *= -2.0);
        Ok((loss, a))
    }
}
