use std::f64::consts::PI;

use ndarray::Array3;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{SensitivitySet, MAX_COILS};
use crate::error::{Error, Result};

/// Gaussian-lobe receive profiles for `n_c` coils spaced at equal angles on a
/// circle around the field of view, each with a random constant plus linear
/// phase. With `normalize`, maps are divided pixelwise so that
/// `sum_j |S_j|^2 = 1`.
pub fn simulate_sensitivities(n_c: usize, size: usize, seed: u64, normalize: bool) -> Result<SensitivitySet> {
    if n_c == 0 || n_c > MAX_COILS {
        return Err(Error::invalid(format!("coil count {n_c} outside [1, {MAX_COILS}]")));
    }
    if size == 0 {
        return Err(Error::invalid("sensitivity map size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offset = rng.gen_range(0.0..2.0 * PI / n_c as f64);
    let radius = 1.1;
    let width = 0.7;

    let mut maps = Array3::zeros((n_c, size, size));
    for (j, mut coil) in maps.outer_iter_mut().enumerate() {
        let angle = offset + 2.0 * PI * j as f64 / n_c as f64;
        let (cx, cy) = (radius * angle.cos(), radius * angle.sin());
        let gain = rng.gen_range(0.8..1.2);
        let phase0 = rng.gen_range(-PI..PI);
        let (kx, ky) = (rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5));
        for ((i, k), s) in coil.indexed_iter_mut() {
            let x = (2.0 * k as f64 + 1.0) / size as f64 - 1.0;
            let y = (2.0 * i as f64 + 1.0) / size as f64 - 1.0;
            let d2 = (x - cx).powi(2) + (y - cy).powi(2);
            let magnitude = gain * (-d2 / (2.0 * width * width)).exp();
            *s = Complex64::from_polar(magnitude, phase0 + kx * x + ky * y);
        }
    }

    if normalize {
        let set = SensitivitySet { maps };
        let energy = set.energy();
        let mut maps = set.maps;
        for mut coil in maps.outer_iter_mut() {
            coil.zip_mut_with(&energy, |s, &e| *s /= e.sqrt());
        }
        return SensitivitySet::new(maps);
    }
    SensitivitySet::new(maps)
}
