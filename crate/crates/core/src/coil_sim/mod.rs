//! Synthetic parallel-MRI data: phantoms, coil sensitivities, sampling masks,
//! multi-coil acquisition and on-disk datasets.

mod acquire;
pub mod dataset;
mod mask;
mod phantom;
mod sensitivity;

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use acquire::forward_acquire;
pub use dataset::{build_dataset, generate_sample, DatasetManifest, Sample, SimConfig};
pub use mask::make_mask;
pub use phantom::{generate_phantom, PhantomKind};
pub use sensitivity::simulate_sensitivities;

/// Maximum number of receiver coils a task vector can describe.
pub const MAX_COILS: usize = 32;

/// A 2-D complex image slice, `H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexImage {
    pub data: Array2<Complex64>,
}

impl ComplexImage {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        if data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|v| v.norm())
    }
}

/// Per-coil complex sensitivity maps, `n_c x H x W`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensitivitySet {
    pub maps: Array3<Complex64>,
}

impl SensitivitySet {
    pub fn new(maps: Array3<Complex64>) -> Result<Self> {
        let n_c = maps.dim().0;
        if n_c == 0 || n_c > MAX_COILS {
            return Err(Error::invalid(format!("coil count {n_c} outside [1, {MAX_COILS}]")));
        }
        Ok(Self { maps })
    }

    pub fn n_coils(&self) -> usize {
        self.maps.dim().0
    }

    pub fn shape(&self) -> (usize, usize) {
        let (_, h, w) = self.maps.dim();
        (h, w)
    }

    /// Pixelwise `sum_j |S_j|^2` over all coils.
    pub fn energy(&self) -> Array2<f64> {
        let (_, h, w) = self.maps.dim();
        let mut out = Array2::zeros((h, w));
        for coil in self.maps.outer_iter() {
            out.zip_mut_with(&coil, |acc, s| *acc += s.norm_sqr());
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskKind {
    Cartesian,
    Poisson,
}

impl std::str::FromStr for MaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cartesian" => Ok(MaskKind::Cartesian),
            "poisson" => Ok(MaskKind::Poisson),
            other => Err(Error::invalid(format!("unknown mask kind '{other}'"))),
        }
    }
}

impl std::fmt::Display for MaskKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MaskKind::Cartesian => "cartesian",
            MaskKind::Poisson => "poisson",
        })
    }
}

/// Binary k-space sampling pattern. Phase-encode lines are columns.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub data: Array2<u8>,
    pub kind: MaskKind,
    pub acceleration: f64,
    pub acs: usize,
}

impl Mask {
    pub fn shape(&self) -> (usize, usize) {
        self.data.dim()
    }

    pub fn sampled_fraction(&self) -> f64 {
        self.data.iter().filter(|&&v| v != 0).count() as f64 / self.data.len() as f64
    }

    pub fn is_sampled(&self, i: usize, j: usize) -> bool {
        self.data[[i, j]] != 0
    }

    /// Zeroes every unsampled location of `x`.
    pub fn apply(&self, x: &mut Array2<Complex64>) {
        x.zip_mut_with(&self.data, |v, &m| {
            if m == 0 {
                *v = Complex64::new(0.0, 0.0);
            }
        });
    }
}

/// Under-sampled per-coil k-space with its mask.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiCoilKspace {
    pub data: Array3<Complex64>,
    pub mask: Mask,
}

impl MultiCoilKspace {
    pub fn n_coils(&self) -> usize {
        self.data.dim().0
    }

    pub fn shape(&self) -> (usize, usize) {
        let (_, h, w) = self.data.dim();
        (h, w)
    }
}

pub(crate) fn round_to_f32(v: Complex64) -> Complex64 {
    Complex64::new(v.re as f32 as f64, v.im as f32 as f64)
}
