use std::f64::consts::PI;

use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ComplexImage;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhantomKind {
    SheppLogan,
    SmoothRandom,
}

impl std::str::FromStr for PhantomKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shepp-logan" => Ok(PhantomKind::SheppLogan),
            "smooth-random" => Ok(PhantomKind::SmoothRandom),
            other => Err(Error::invalid(format!("unknown phantom kind '{other}'"))),
        }
    }
}

// (intensity, semi-axis x, semi-axis y, center x, center y, rotation in degrees)
const MODIFIED_SHEPP_LOGAN: [[f64; 6]; 10] = [
    [1.0, 0.69, 0.92, 0.0, 0.0, 0.0],
    [-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0],
    [-0.2, 0.11, 0.31, 0.22, 0.0, -18.0],
    [-0.2, 0.16, 0.41, -0.22, 0.0, 18.0],
    [0.1, 0.21, 0.25, 0.0, 0.35, 0.0],
    [0.1, 0.046, 0.046, 0.0, 0.1, 0.0],
    [0.1, 0.046, 0.046, 0.0, -0.1, 0.0],
    [0.1, 0.046, 0.023, -0.08, -0.605, 0.0],
    [0.1, 0.023, 0.023, 0.0, -0.606, 0.0],
    [0.1, 0.023, 0.046, 0.06, -0.605, 0.0],
];

/// Generates a `size x size` test image with peak magnitude 1.
///
/// Shepp-Logan phantoms are real valued; the seed jitters the ellipse layout
/// and intensities so datasets contain distinct slices. Smooth-random
/// phantoms are sums of broad Gaussian blobs carrying a low-order random
/// phase.
pub fn generate_phantom(size: usize, kind: PhantomKind, seed: u64) -> Result<ComplexImage> {
    if size < 8 {
        return Err(Error::invalid(format!("phantom size {size} < 8")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        PhantomKind::SheppLogan => shepp_logan(size, &mut rng),
        PhantomKind::SmoothRandom => smooth_random(size, &mut rng),
    };
    let peak = data.iter().map(|v| v.norm()).fold(0.0, f64::max);
    ComplexImage::new(data.mapv(|v| v / peak))
}

// normalized coordinate in [-1, 1] of pixel centre i
fn coord(i: usize, size: usize) -> f64 {
    (2.0 * i as f64 + 1.0) / size as f64 - 1.0
}

fn shepp_logan(size: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    let scale = rng.gen_range(0.9..1.0);
    let rot = rng.gen_range(-5.0..5.0) * PI / 180.0;
    let (shift_x, shift_y) = (rng.gen_range(-0.03..0.03), rng.gen_range(-0.03..0.03));
    let ellipses: Vec<[f64; 6]> = MODIFIED_SHEPP_LOGAN
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let mut e = *e;
            if k >= 2 {
                e[0] *= rng.gen_range(0.8..1.2);
                e[1] *= rng.gen_range(0.9..1.1);
                e[2] *= rng.gen_range(0.9..1.1);
            }
            e
        })
        .collect();

    Array2::from_shape_fn((size, size), |(i, j)| {
        // image rows run top to bottom, phantom y axis bottom to top
        let (px, py) = (coord(j, size), -coord(i, size));
        let (px, py) = ((px - shift_x) / scale, (py - shift_y) / scale);
        let (px, py) = (px * rot.cos() + py * rot.sin(), -px * rot.sin() + py * rot.cos());
        let mut value = 0.0;
        for &[rho, a, b, x0, y0, phi] in &ellipses {
            let phi = phi * PI / 180.0;
            let (dx, dy) = (px - x0, py - y0);
            let u = dx * phi.cos() + dy * phi.sin();
            let v = -dx * phi.sin() + dy * phi.cos();
            if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                value += rho;
            }
        }
        Complex64::new(value.max(0.0), 0.0)
    })
}

fn smooth_random(size: usize, rng: &mut ChaCha8Rng) -> Array2<Complex64> {
    let blobs: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(0.25..0.5),
                rng.gen_range(0.3..1.0),
            )
        })
        .collect();
    let phase: [f64; 4] = [
        rng.gen_range(-PI..PI),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-0.5..0.5),
    ];
    Array2::from_shape_fn((size, size), |(i, j)| {
        let (x, y) = (coord(j, size), coord(i, size));
        let magnitude: f64 = blobs
            .iter()
            .map(|&(cx, cy, sigma, amp)| amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * sigma * sigma)).exp())
            .sum();
        let theta = phase[0] + phase[1] * x + phase[2] * y + phase[3] * x * y;
        Complex64::from_polar(magnitude, theta)
    })
}
