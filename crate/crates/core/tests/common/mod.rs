//! Shared fixtures and independent reference implementations.
#![allow(dead_code)]

pub mod gradcheck;

use std::f64::consts::PI;

use hypercoil::coil_sim::{simulate_sensitivities, MaskKind};
use hypercoil::{ComplexImage, Mask, MultiCoilKspace, SensitivitySet, TaskVector};
use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_c<R: Rng>(rng: &mut R) -> Complex64 {
    Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
}

pub fn random_image<R: Rng>(h: usize, w: usize, rng: &mut R) -> ComplexImage {
    ComplexImage::new(Array2::from_shape_simple_fn((h, w), || random_c(rng))).unwrap()
}

pub fn random_stack<R: Rng>(c: usize, h: usize, w: usize, rng: &mut R) -> Array3<Complex64> {
    Array3::from_shape_simple_fn((c, h, w), || random_c(rng))
}

/// Unnormalized random complex maps.
pub fn random_sens<R: Rng>(c: usize, h: usize, w: usize, rng: &mut R) -> SensitivitySet {
    SensitivitySet::new(random_stack(c, h, w, rng)).unwrap()
}

pub fn smooth_sens(c: usize, size: usize, seed: u64, normalize: bool) -> SensitivitySet {
    simulate_sensitivities(c, size, seed, normalize).unwrap()
}

/// Bernoulli(p) mask, never empty.
pub fn random_mask<R: Rng>(h: usize, w: usize, p: f64, rng: &mut R) -> Mask {
    let mut data = Array2::from_shape_simple_fn((h, w), || u8::from(rng.gen_bool(p)));
    data[[h / 2, w / 2]] = 1;
    Mask {
        data,
        kind: MaskKind::Cartesian,
        acceleration: 1.0 / p,
        acs: 0,
    }
}

pub fn full_mask(h: usize, w: usize) -> Mask {
    Mask {
        data: Array2::ones((h, w)),
        kind: MaskKind::Cartesian,
        acceleration: 1.0,
        acs: 0,
    }
}

pub fn kspace(data: Array3<Complex64>, mask: Mask) -> MultiCoilKspace {
    MultiCoilKspace { data, mask }
}

pub fn random_task<R: Rng>(n: usize, rng: &mut R) -> TaskVector {
    loop {
        let bits: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.6)).collect();
        if let Ok(t) = TaskVector::from_bits(bits) {
            return t;
        }
    }
}

/// Centred, orthonormal 1-D DFT matrix built from the definition:
/// `fftshift(dft(ifftshift(x))) / sqrt(n)`.
pub fn dft_matrix(n: usize, inverse: bool) -> Array2<Complex64> {
    let sign = if inverse { 1.0 } else { -1.0 };
    let half = n / 2;
    let mut f = Array2::zeros((n, n));
    for out in 0..n {
        // fftshift: out index `out` reads frequency (out - n/2) mod n
        let k = (out + n - half) % n;
        for inp in 0..n {
            // ifftshift: input sample `inp` sits at position (inp - n/2) mod n
            let pos = (inp + n - half) % n;
            let phase = sign * 2.0 * PI * (k * pos) as f64 / n as f64;
            f[[out, inp]] = Complex64::from_polar(1.0 / (n as f64).sqrt(), phase);
        }
    }
    f
}

fn matmul(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let (n, k) = a.dim();
    let m = b.dim().1;
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut acc = Complex64::new(0.0, 0.0);
            for t in 0..k {
                acc += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = acc;
        }
    }
    out
}

pub fn dense_fft2c(x: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = x.dim();
    matmul(&matmul(&dft_matrix(h, false), x), &dft_matrix(w, false).t().to_owned())
}

pub fn dense_ifft2c(x: &Array2<Complex64>) -> Array2<Complex64> {
    let (h, w) = x.dim();
    matmul(&matmul(&dft_matrix(h, true), x), &dft_matrix(w, true).t().to_owned())
}

/// `M . F(S_j x)` for every coil, by dense transforms.
pub fn dense_acquire(x: &ComplexImage, sens: &SensitivitySet, mask: &Mask) -> Array3<Complex64> {
    let mut out = Array3::zeros(sens.maps.dim());
    for (j, s) in sens.maps.outer_iter().enumerate() {
        let mut k = dense_fft2c(&(&s * &x.data));
        mask.apply(&mut k);
        out.index_axis_mut(Axis(0), j).assign(&k);
    }
    out
}

pub fn max_abs_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

pub fn max_abs_diff3(a: &Array3<Complex64>, b: &Array3<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// `sum conj(a) b`.
pub fn inner(a: impl Iterator<Item = Complex64>, b: impl Iterator<Item = Complex64>) -> Complex64 {
    a.zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Solves the 2x2 real system `A z = b`.
pub fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [(b[0] * a[1][1] - a[0][1] * b[1]) / det, (a[0][0] * b[1] - b[0] * a[1][0]) / det]
}

/// Real 2x2 matrix of multiplication by `c`.
pub fn real_block(c: Complex64) -> [[f64; 2]; 2] {
    [[c.re, -c.im], [c.im, c.re]]
}

/// Minimizes `sum_i |A_i z - b_i|^2` over complex scalar `z` through the real
/// normal equations, with each `A_i` a complex scalar.
pub fn complex_least_squares(rows: &[(Complex64, Complex64)]) -> Complex64 {
    let mut ata = [[0.0; 2]; 2];
    let mut atb = [0.0; 2];
    for &(a, b) in rows {
        let m = real_block(a);
        let bv = [b.re, b.im];
        for r in 0..2 {
            for c in 0..2 {
                ata[r][c] += (0..2).map(|k| m[k][r] * m[k][c]).sum::<f64>();
            }
            atb[r] += (0..2).map(|k| m[k][r] * bv[k]).sum::<f64>();
        }
    }
    let z = solve2(ata, atb);
    Complex64::new(z[0], z[1])
}
