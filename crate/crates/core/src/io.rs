//! File formats: model files, dataset containers, raw complex cine stacks
//! and 16-bit magnitude PNGs.
//!
//! Binary files start with one line of JSON header followed by little-endian
//! `f64` payload. Every header carries a `[major, minor]` version; readers
//! reject unknown majors.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::{CineImage, CoilMaps, KSpaceDataset, PatternKind, Samples, SamplingPattern};
use crate::primitive::Modulation;
use crate::raster::ComplexGrid;
use crate::temporal::{GaborParams, GridDims, PrimitiveSet, TemporalBases};

pub const FORMAT_MAJOR: u32 = 1;
pub const FORMAT_MINOR: u32 = 0;

/// Coordinate and transform conventions the stored numbers assume.
pub const CONVENTION: &str = "r=(p+0.5)/D-0.5;k=m-D/2;dft=centered-unitary";

const MODEL_FORMAT: &str = "gabor-cine-model";
const CINE_FORMAT: &str = "gabor-cine-cine";
const DATASET_FORMAT: &str = "gabor-cine-dataset";

fn check_version(format: &str, expected: &str, version: [u32; 2]) -> Result<()> {
    if format != expected {
        return Err(Error::Format(format!("expected a {expected} file, found '{format}'")));
    }
    if version[0] != FORMAT_MAJOR {
        return Err(Error::UnsupportedVersion {
            found: format!("{}.{}", version[0], version[1]),
            supported: FORMAT_MAJOR,
        });
    }
    Ok(())
}

fn push_f64s(out: &mut Vec<u8>, values: impl IntoIterator<Item = f64>) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_complex(out: &mut Vec<u8>, values: &[Complex64]) {
    push_f64s(out, values.iter().flat_map(|z| [z.re, z.im]));
}

fn decode_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Format(format!("payload of {} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

fn decode_complex(bytes: &[u8]) -> Result<Vec<Complex64>> {
    Ok(decode_f64s(bytes)?.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect())
}

fn write_with_header<H: Serialize>(path: &Path, header: &H, payload: &[u8]) -> Result<()> {
    let mut bytes = serde_json::to_vec(header)?;
    bytes.push(b'\n');
    bytes.extend_from_slice(payload);
    fs::write(path, bytes)?;
    Ok(())
}

fn split_header(bytes: &[u8]) -> Result<(&[u8], &[u8])> {
    let pos = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    Ok((&bytes[..pos], &bytes[pos + 1..]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelHeader {
    format: String,
    version: [u32; 2],
    convention: String,
    height: usize,
    width: usize,
    frames: usize,
    rank_geom: usize,
    rank_contrast: usize,
    count: usize,
    modulation: Modulation,
    /// Magnitude mapped to full scale in rendered PNGs.
    #[serde(default)]
    display_scale: Option<f64>,
}

/// A model plus the display scale used for its magnitude images.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub set: PrimitiveSet,
    pub display_scale: Option<f64>,
}

/// Bit-exact serialization: bases, then each primitive in layout order.
pub fn write_model(path: &Path, set: &PrimitiveSet, display_scale: Option<f64>) -> Result<()> {
    let header = ModelHeader {
        format: MODEL_FORMAT.into(),
        version: [FORMAT_MAJOR, FORMAT_MINOR],
        convention: CONVENTION.into(),
        height: set.grid.height,
        width: set.grid.width,
        frames: set.frames(),
        rank_geom: set.bases.rank_geom,
        rank_contrast: set.bases.rank_contrast,
        count: set.len(),
        modulation: set.modulation,
        display_scale,
    };
    let mut payload = Vec::new();
    push_f64s(&mut payload, set.bases.flatten());
    for p in &set.items {
        push_f64s(&mut payload, p.flatten());
    }
    write_with_header(path, &header, &payload)
}

pub fn read_model(path: &Path) -> Result<ModelFile> {
    let bytes = fs::read(path)?;
    let (head, payload) = split_header(&bytes)?;
    let header: ModelHeader = serde_json::from_slice(head)?;
    check_version(&header.format, MODEL_FORMAT, header.version)?;
    let (rg, rc) = (header.rank_geom, header.rank_contrast);
    let mut bases = TemporalBases::zeros(header.frames, rg, rc);
    let basis_len = bases.geom.len() + 2 * bases.contrast.len();
    let per = GaborParams::num_scalars(rg, rc);
    let values = decode_f64s(payload)?;
    if values.len() != basis_len + header.count * per {
        return Err(Error::Format(format!(
            "model payload has {} values, header implies {}",
            values.len(),
            basis_len + header.count * per
        )));
    }
    bases.unflatten(&values[..basis_len]);
    let items = values[basis_len..]
        .chunks_exact(per)
        .map(|chunk| {
            let mut p = GaborParams::zeros(rg, rc);
            p.unflatten(chunk);
            p
        })
        .collect();
    let grid = GridDims {
        height: header.height,
        width: header.width,
    };
    Ok(ModelFile {
        set: PrimitiveSet::new(items, bases, grid, header.modulation)?,
        display_scale: header.display_scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CineHeader {
    format: String,
    version: [u32; 2],
    convention: String,
    height: usize,
    width: usize,
    frames: usize,
}

/// Raw complex image stack, frame-major, interleaved re/im.
pub fn write_cine(path: &Path, image: &CineImage) -> Result<()> {
    let header = CineHeader {
        format: CINE_FORMAT.into(),
        version: [FORMAT_MAJOR, FORMAT_MINOR],
        convention: CONVENTION.into(),
        height: image.height,
        width: image.width,
        frames: image.frames,
    };
    let mut payload = Vec::with_capacity(image.data.len() * 16);
    push_complex(&mut payload, &image.data);
    write_with_header(path, &header, &payload)
}

pub fn read_cine(path: &Path) -> Result<CineImage> {
    let bytes = fs::read(path)?;
    let (head, payload) = split_header(&bytes)?;
    let header: CineHeader = serde_json::from_slice(head)?;
    check_version(&header.format, CINE_FORMAT, header.version)?;
    let data = decode_complex(payload)?;
    if data.len() != header.height * header.width * header.frames {
        return Err(Error::Format("cine payload size disagrees with header".into()));
    }
    Ok(CineImage {
        height: header.height,
        width: header.width,
        frames: header.frames,
        data,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct DatasetHeader {
    format: String,
    version: [u32; 2],
    convention: String,
    height: usize,
    width: usize,
    frames: usize,
    coils: usize,
    pattern: PatternKind,
    samples_per_frame: Vec<usize>,
    noise_std: f64,
    has_reference: bool,
}

const HEADER_FILE: &str = "header.json";
const SAMPLES_FILE: &str = "samples.cf64";
const COILS_FILE: &str = "coils.cf64";
const MASK_FILE: &str = "mask.u8";
const POINTS_FILE: &str = "points.f64";
const REFERENCE_FILE: &str = "reference.cf64";

fn complex_bytes(values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 16);
    push_complex(&mut out, values);
    out
}

/// Writes a dataset container directory, creating it if needed.
pub fn write_dataset(dir: &Path, dataset: &KSpaceDataset) -> Result<()> {
    dataset.validate()?;
    fs::create_dir_all(dir)?;
    let pattern = &dataset.pattern;
    let header = DatasetHeader {
        format: DATASET_FORMAT.into(),
        version: [FORMAT_MAJOR, FORMAT_MINOR],
        convention: CONVENTION.into(),
        height: dataset.height,
        width: dataset.width,
        frames: dataset.frames,
        coils: dataset.coils.coils,
        pattern: pattern.kind(),
        samples_per_frame: (0..dataset.frames).map(|t| pattern.samples_in_frame(t)).collect(),
        noise_std: dataset.noise_std,
        has_reference: dataset.reference.is_some(),
    };
    fs::write(dir.join(HEADER_FILE), serde_json::to_vec_pretty(&header)?)?;
    fs::write(dir.join(SAMPLES_FILE), complex_bytes(&dataset.samples.data))?;
    fs::write(dir.join(COILS_FILE), complex_bytes(&dataset.coils.data))?;
    match pattern {
        SamplingPattern::Cartesian { mask, .. } => {
            fs::write(dir.join(MASK_FILE), mask.iter().map(|&b| b as u8).collect::<Vec<u8>>())?;
        }
        SamplingPattern::Points { points } => {
            let mut out = Vec::new();
            push_f64s(&mut out, points.iter().flatten().flat_map(|k| [k[0], k[1]]));
            fs::write(dir.join(POINTS_FILE), out)?;
        }
    }
    if let Some(reference) = &dataset.reference {
        fs::write(dir.join(REFERENCE_FILE), complex_bytes(&reference.data))?;
    }
    Ok(())
}

pub fn read_dataset(dir: &Path) -> Result<KSpaceDataset> {
    let header: DatasetHeader = serde_json::from_slice(&fs::read(dir.join(HEADER_FILE))?)?;
    check_version(&header.format, DATASET_FORMAT, header.version)?;
    let (h, w, frames) = (header.height, header.width, header.frames);
    if header.samples_per_frame.len() != frames {
        return Err(Error::Format("samples_per_frame length disagrees with frames".into()));
    }
    let pattern = match header.pattern {
        PatternKind::CartesianMask => {
            let raw = fs::read(dir.join(MASK_FILE))?;
            if raw.len() != frames * h * w || raw.iter().any(|&b| b > 1) {
                return Err(Error::Format("mask file is malformed".into()));
            }
            SamplingPattern::Cartesian {
                frames,
                height: h,
                width: w,
                mask: raw.into_iter().map(|b| b == 1).collect(),
            }
        }
        PatternKind::PointSet => {
            let flat = decode_f64s(&fs::read(dir.join(POINTS_FILE))?)?;
            let total: usize = header.samples_per_frame.iter().sum();
            if flat.len() != 2 * total {
                return Err(Error::Format("points file size disagrees with header".into()));
            }
            let mut points = Vec::with_capacity(frames);
            let mut at = 0;
            for &n in &header.samples_per_frame {
                points.push(flat[2 * at..2 * (at + n)].chunks_exact(2).map(|p| [p[0], p[1]]).collect());
                at += n;
            }
            SamplingPattern::Points { points }
        }
    };
    let coil_data = decode_complex(&fs::read(dir.join(COILS_FILE))?)?;
    if coil_data.len() != header.coils * h * w {
        return Err(Error::Format("coil file size disagrees with header".into()));
    }
    let coils = CoilMaps {
        coils: header.coils,
        height: h,
        width: w,
        data: coil_data,
    };
    let offsets = pattern.frame_offsets();
    let sample_data = decode_complex(&fs::read(dir.join(SAMPLES_FILE))?)?;
    let expected = header.coils * offsets.last().copied().unwrap_or(0);
    if sample_data.len() != expected {
        return Err(Error::Format(format!("sample file has {} values, expected {expected}", sample_data.len())));
    }
    let samples = Samples {
        coils: header.coils,
        offsets,
        data: sample_data,
    };
    let reference = if header.has_reference {
        let data = decode_complex(&fs::read(dir.join(REFERENCE_FILE))?)?;
        if data.len() != frames * h * w {
            return Err(Error::Format("reference file size disagrees with header".into()));
        }
        Some(CineImage {
            height: h,
            width: w,
            frames,
            data,
        })
    } else {
        None
    };
    let dataset = KSpaceDataset {
        height: h,
        width: w,
        frames,
        pattern,
        coils,
        samples,
        noise_std: header.noise_std,
        reference,
    };
    dataset.validate()?;
    Ok(dataset)
}

/// Sidecar describing how PNG gray levels map back to magnitudes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PngScale {
    pub version: [u32; 2],
    /// Magnitude mapped to the maximum gray level.
    pub scale: f64,
    pub max_level: u16,
    pub height: usize,
    pub width: usize,
    pub files: Vec<String>,
}

/// Magnitudes linearly mapped from `[0, scale]` to `[0, 65535]`, clipped.
pub fn quantize_magnitude(grid: &ComplexGrid, scale: f64) -> Vec<u16> {
    grid.data
        .iter()
        .map(|z| {
            if scale > 0.0 {
                ((z.norm() / scale).clamp(0.0, 1.0) * u16::MAX as f64).round() as u16
            } else {
                0
            }
        })
        .collect()
}

/// Writes one 16-bit grayscale PNG per grid plus `<stem>_scale.json`.
pub fn write_magnitude_pngs(dir: &Path, stem: &str, grids: &[(String, ComplexGrid)], scale: f64) -> Result<PngScale> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::with_capacity(grids.len());
    let (mut height, mut width) = (0, 0);
    for (name, grid) in grids {
        let levels = quantize_magnitude(grid, scale);
        let buffer = image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::from_raw(grid.width as u32, grid.height as u32, levels)
            .ok_or_else(|| Error::Image("buffer size disagrees with grid".into()))?;
        let file = format!("{name}.png");
        buffer.save(dir.join(&file)).map_err(|e| Error::Image(e.to_string()))?;
        files.push(file);
        (height, width) = (grid.height, grid.width);
    }
    let sidecar = PngScale {
        version: [FORMAT_MAJOR, FORMAT_MINOR],
        scale,
        max_level: u16::MAX,
        height,
        width,
        files,
    };
    write_json(&dir.join(format!("{stem}_scale.json")), &sidecar)?;
    Ok(sidecar)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::{init_primitives, FitConfig};
    use crate::phantom::{make_coils, make_mask, simulate, MaskKind, MaskSpec, PhantomSpec};

    fn model() -> PrimitiveSet {
        let cfg = FitConfig {
            n_init: 12,
            n_max: 20,
            rank_geom: 2,
            rank_contrast: 2,
            seed: 4,
            ..FitConfig::default()
        };
        let mut ps = init_primitives(&cfg, GridDims { height: 16, width: 20 }, 4).unwrap();
        ps.items[3].coeff_mu[1][0] = 1.0 / 3.0;
        ps.items[5].u[1] = Complex64::new(-0.1, std::f64::consts::E);
        ps
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gcm");
        let ps = model();
        write_model(&path, &ps, Some(0.75)).unwrap();
        let back = read_model(&path).unwrap();
        assert_eq!(back.set, ps);
        assert_eq!(back.display_scale, Some(0.75));
        let again = dir.path().join("m2.gcm");
        write_model(&again, &back.set, back.display_scale).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&again).unwrap());
    }

    #[test]
    fn unknown_major_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gcm");
        write_model(&path, &model(), None).unwrap();
        let bytes = fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes).replacen("\"version\":[1,0]", "\"version\":[2,0]", 1);
        fs::write(&path, text.as_bytes()).unwrap();
        assert!(matches!(read_model(&path), Err(Error::UnsupportedVersion { .. })));
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.gcm");
        write_model(&path, &model(), None).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_model(&path), Err(Error::Format(_))));
    }

    #[test]
    fn cine_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut x = CineImage::zeros(3, 4, 2);
        x.data.iter_mut().enumerate().for_each(|(i, z)| *z = Complex64::new(i as f64 * 0.1, -1.0 / (i + 1) as f64));
        let path = dir.path().join("x.cine");
        write_cine(&path, &x).unwrap();
        assert_eq!(read_cine(&path).unwrap(), x);
        assert!(read_model(&path).is_err());
    }

    #[test]
    fn dataset_round_trip_both_kinds() {
        let spec = PhantomSpec::beating_ring(16, 16, 3);
        let coils = make_coils(2, 16, 16, 0).unwrap();
        for kind in [MaskKind::VariableDensity, MaskKind::RadialPoints] {
            let mask = MaskSpec {
                kind,
                accel: 2.0,
                acs_lines: 2,
                spokes: Some(5),
                seed: 1,
            };
            let pattern = make_mask(&mask, 3, 16, 16).unwrap();
            let ds = simulate(&spec, &coils, &pattern, 0.01, 2).unwrap();
            let dir = tempfile::tempdir().unwrap();
            write_dataset(dir.path(), &ds).unwrap();
            assert_eq!(read_dataset(dir.path()).unwrap(), ds);
        }
    }

    #[test]
    fn png_levels_and_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let grid = ComplexGrid::from_vec(2, 3, vec![
            Complex64::new(0.0, 0.0),
            Complex64::new(0.5, 0.0),
            Complex64::new(0.0, 1.0),
            Complex64::new(2.0, 0.0),
            Complex64::new(0.3, 0.4),
            Complex64::new(0.25, 0.0),
        ])
        .unwrap();
        let levels = quantize_magnitude(&grid, 1.0);
        assert_eq!(levels, vec![0, 32768, 65535, 65535, 32768, 16384]);
        let sidecar = write_magnitude_pngs(dir.path(), "frames", &[("f0".into(), grid)], 1.0).unwrap();
        let img = image::open(dir.path().join(&sidecar.files[0])).unwrap().into_luma16();
        assert_eq!((img.width(), img.height()), (3, 2));
        assert_eq!(img.into_raw(), levels);
        let back: PngScale = read_json(&dir.path().join("frames_scale.json")).unwrap();
        assert_eq!(back, sidecar);
    }
}
