//! On-disk simulated datasets.
//!
//! A dataset directory holds `manifest.json` plus four raw files per sample:
//! `<id>_image.c64`, `<id>_sens.c64`, `<id>_kspace.c64` (little-endian
//! interleaved f32 re/im, row-major, coil-major for stacks) and
//! `<id>_mask.u8` (one byte per pixel). Generated arrays are rounded to f32
//! before they are returned or written, so a reload is bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    forward_acquire, generate_phantom, make_mask, round_to_f32, simulate_sensitivities, ComplexImage, Mask, MaskKind,
    MultiCoilKspace, PhantomKind, SensitivitySet,
};
use crate::error::{Error, Result};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub size: usize,
    pub coils: usize,
    pub samples: usize,
    pub mask: MaskKind,
    pub accel: f64,
    pub acs: usize,
    pub phantom: PhantomKind,
    pub normalize_sens: bool,
    pub seed: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            size: 64,
            coils: 12,
            samples: 200,
            mask: MaskKind::Cartesian,
            accel: 5.0,
            acs: 8,
            phantom: PhantomKind::SheppLogan,
            normalize_sens: true,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::invalid(format!("size {} < 8", self.size)));
        }
        if self.coils == 0 || self.coils > super::MAX_COILS {
            return Err(Error::invalid(format!("coils {} outside [1, 32]", self.coils)));
        }
        if self.samples == 0 {
            return Err(Error::invalid("samples must be >= 1"));
        }
        if !(self.accel > 1.0) {
            return Err(Error::invalid(format!("accel {} must be > 1", self.accel)));
        }
        Ok(())
    }
}

/// One fully simulated slice.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ComplexImage,
    pub sens: SensitivitySet,
    pub kspace: MultiCoilKspace,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleFiles {
    pub image: String,
    pub sens: String,
    pub kspace: String,
    pub mask: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub files: SampleFiles,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub n_samples: usize,
    pub shape: [usize; 2],
    pub n_coils: usize,
    pub mask_kind: MaskKind,
    pub acceleration: f64,
    pub acs: usize,
    pub seed: u64,
    pub samples: Vec<SampleRecord>,
    #[serde(skip)]
    pub root: PathBuf,
}

fn sample_id(index: usize) -> String {
    format!("s{index:05}")
}

/// Independent seeds for phantom, sensitivities and mask of every sample.
fn sample_seeds(seed: u64, index: usize) -> [u64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    [rng.next_u64(), rng.next_u64(), rng.next_u64()]
}

/// Simulates sample `index` of the dataset described by `cfg`.
pub fn generate_sample(cfg: &SimConfig, index: usize) -> Result<Sample> {
    cfg.validate()?;
    let [s_img, s_sens, s_mask] = sample_seeds(cfg.seed, index);
    let image = generate_phantom(cfg.size, cfg.phantom, s_img)?;
    let image = ComplexImage::new(image.data.mapv(round_to_f32))?;
    let sens = simulate_sensitivities(cfg.coils, cfg.size, s_sens, cfg.normalize_sens)?;
    let sens = SensitivitySet::new(sens.maps.mapv(round_to_f32))?;
    let mask = make_mask((cfg.size, cfg.size), cfg.mask, cfg.accel, cfg.acs, s_mask)?;
    let mut kspace = forward_acquire(&image, &sens, &mask)?;
    kspace.data.mapv_inplace(round_to_f32);
    Ok(Sample {
        id: sample_id(index),
        image,
        sens,
        kspace,
    })
}

/// Writes a complete dataset to `out` and returns its manifest.
pub fn build_dataset(cfg: &SimConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut records = Vec::with_capacity(cfg.samples);
    for index in 0..cfg.samples {
        let sample = generate_sample(cfg, index)?;
        records.push(write_sample(out, &sample)?);
    }
    let manifest = DatasetManifest {
        version: MANIFEST_VERSION,
        n_samples: cfg.samples,
        shape: [cfg.size, cfg.size],
        n_coils: cfg.coils,
        mask_kind: cfg.mask,
        acceleration: cfg.accel,
        acs: if cfg.mask == MaskKind::Cartesian { cfg.acs } else { 0 },
        seed: cfg.seed,
        samples: records,
        root: out.to_path_buf(),
    };
    manifest.save()?;
    Ok(manifest)
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<SampleRecord> {
    let files = SampleFiles {
        image: format!("{}_image.c64", sample.id),
        sens: format!("{}_sens.c64", sample.id),
        kspace: format!("{}_kspace.c64", sample.id),
        mask: format!("{}_mask.u8", sample.id),
    };
    write_file(&dir.join(&files.image), &encode_c64(sample.image.data.iter()))?;
    write_file(&dir.join(&files.sens), &encode_c64(sample.sens.maps.iter()))?;
    write_file(&dir.join(&files.kspace), &encode_c64(sample.kspace.data.iter()))?;
    write_file(&dir.join(&files.mask), sample.kspace.mask.data.as_slice().expect("standard layout"))?;
    Ok(SampleRecord {
        id: sample.id.clone(),
        files,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn encode_c64<'a>(values: impl Iterator<Item = &'a Complex64>) -> Vec<u8> {
    let mut out = Vec::new();
    for v in values {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}

fn read_exact(path: &Path, expected: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected {
        return Err(Error::format(
            path,
            format!("size mismatch: expected {expected} bytes, found {}", bytes.len()),
        ));
    }
    Ok(bytes)
}

fn decode_c64(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect()
}

impl DatasetManifest {
    pub fn manifest_path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn save(&self) -> Result<()> {
        let path = Self::manifest_path(&self.root);
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(&path, text.as_bytes())
    }

    /// Reads and validates a dataset directory: every referenced file must
    /// exist with the size implied by the declared shape.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::manifest_path(dir);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))?;
        manifest.root = dir.to_path_buf();
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::format(&path, format!("unsupported version {}", manifest.version)));
        }
        if manifest.samples.len() != manifest.n_samples {
            return Err(Error::format(
                &path,
                format!("n_samples {} but {} records", manifest.n_samples, manifest.samples.len()),
            ));
        }
        if manifest.n_coils == 0 || manifest.n_coils > super::MAX_COILS || manifest.shape.contains(&0) {
            return Err(Error::format(&path, "invalid coil count or shape"));
        }
        let px = manifest.pixels();
        let nc = manifest.n_coils;
        for rec in &manifest.samples {
            for (name, size) in [
                (&rec.files.image, px * 8),
                (&rec.files.sens, nc * px * 8),
                (&rec.files.kspace, nc * px * 8),
                (&rec.files.mask, px),
            ] {
                let file = dir.join(name);
                let meta = fs::metadata(&file).map_err(|e| Error::io(&file, e))?;
                if meta.len() as usize != size {
                    return Err(Error::format(
                        &file,
                        format!("size mismatch: expected {size} bytes, found {}", meta.len()),
                    ));
                }
            }
        }
        Ok(manifest)
    }

    fn pixels(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn load_sample(&self, index: usize) -> Result<Sample> {
        let rec = self
            .samples
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        let [h, w] = self.shape;
        let nc = self.n_coils;
        let px = h * w;

        let image = decode_c64(&read_exact(&self.root.join(&rec.files.image), px * 8)?);
        let sens = decode_c64(&read_exact(&self.root.join(&rec.files.sens), nc * px * 8)?);
        let kspace = decode_c64(&read_exact(&self.root.join(&rec.files.kspace), nc * px * 8)?);
        let mask_path = self.root.join(&rec.files.mask);
        let mask = read_exact(&mask_path, px)?;
        if mask.iter().any(|&b| b > 1) {
            return Err(Error::format(&mask_path, "mask is not binary"));
        }

        let shape_err = |e: ndarray::ShapeError| Error::format(&self.root, e.to_string());
        let mask = Mask {
            data: Array2::from_shape_vec((h, w), mask).map_err(shape_err)?,
            kind: self.mask_kind,
            acceleration: self.acceleration,
            acs: self.acs,
        };
        Ok(Sample {
            id: rec.id.clone(),
            image: ComplexImage::new(Array2::from_shape_vec((h, w), image).map_err(shape_err)?)?,
            sens: SensitivitySet::new(Array3::from_shape_vec((nc, h, w), sens).map_err(shape_err)?)?,
            kspace: MultiCoilKspace {
                data: Array3::from_shape_vec((nc, h, w), kspace).map_err(shape_err)?,
                mask,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SimConfig {
        SimConfig {
            size: 16,
            coils: 4,
            samples: 3,
            accel: 2.0,
            acs: 2,
            ..SimConfig::default()
        }
    }

    #[test]
    fn kspace_is_zero_off_mask() {
        let s = generate_sample(&small(), 1).unwrap();
        for coil in s.kspace.data.outer_iter() {
            for (v, &m) in coil.iter().zip(s.kspace.mask.data.iter()) {
                if m == 0 {
                    assert_eq!(*v, Complex64::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn truncated_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let m = build_dataset(&small(), dir.path()).unwrap();
        let victim = dir.path().join(&m.samples[0].files.kspace);
        let bytes = fs::read(&victim).unwrap();
        fs::write(&victim, &bytes[..bytes.len() - 3]).unwrap();
        let err = DatasetManifest::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("size mismatch"), "{err}");
        assert!(err.to_string().contains("s00000_kspace.c64"), "{err}");
    }

    #[test]
    fn missing_manifest_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::Io { .. })));
    }
}
