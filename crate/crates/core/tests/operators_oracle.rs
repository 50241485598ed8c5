//! Operators checked against dense-transform and least-squares references.

mod common;

use common::*;
use hypercoil::coil_sim::forward_acquire;
use hypercoil::fft::{fft2c, ifft2c};
use hypercoil::operators::{
    dcb_update, sense_adjoint, sense_forward, wab_update, zero_filled_recon, CascadePenalties,
};
use hypercoil::TaskVector;
use ndarray::{Array3, Axis};
use num_complex::Complex64;
use rand::Rng;

#[test]
fn fft_matches_dense_definition() {
    let mut r = rng(1);
    for (h, w) in [(8, 8), (7, 6), (5, 9)] {
        let x = random_image(h, w, &mut r).data;
        assert!(max_abs_diff(&fft2c(&x), &dense_fft2c(&x)) < 1e-10);
        assert!(max_abs_diff(&ifft2c(&x), &dense_ifft2c(&x)) < 1e-10);
    }
}

#[test]
fn forward_acquire_matches_dense_operator() {
    let mut r = rng(2);
    let x = random_image(8, 8, &mut r);
    let sens = random_sens(3, 8, 8, &mut r);
    let mask = random_mask(8, 8, 0.4, &mut r);
    let got = forward_acquire(&x, &sens, &mask).unwrap();
    assert!(max_abs_diff3(&got.data, &dense_acquire(&x, &sens, &mask)) < 1e-10);
}

#[test]
fn zero_filled_matches_dense_adjoint() {
    let mut r = rng(3);
    let sens = random_sens(4, 8, 8, &mut r);
    let mask = random_mask(8, 8, 0.5, &mut r);
    let mut y = random_stack(4, 8, 8, &mut r);
    for mut k in y.outer_iter_mut() {
        let mut owned = k.to_owned();
        mask.apply(&mut owned);
        k.assign(&owned);
    }
    let task: TaskVector = "1011".parse().unwrap();
    let got = zero_filled_recon(&kspace(y.clone(), mask), &sens, &task).unwrap();
    let mut want = ndarray::Array2::<Complex64>::zeros((8, 8));
    for j in [0, 2, 3] {
        let img = dense_ifft2c(&y.index_axis(Axis(0), j).to_owned());
        want = want + &sens.maps.index_axis(Axis(0), j).mapv(|s| s.conj()) * &img;
    }
    assert!(max_abs_diff(&got.data, &want) < 1e-10);
}

/// Per-coil, per-bin minimizer of `lambda |k - y|^2 [sampled] + alpha |k - xhat|^2`.
fn dcb_oracle(
    m: &hypercoil::ComplexImage,
    y: &hypercoil::MultiCoilKspace,
    sens: &hypercoil::SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> Array3<Complex64> {
    let (c, h, w) = sens.maps.dim();
    let mut out = Array3::zeros((c, h, w));
    for j in task.active() {
        let xhat = dense_fft2c(&(&sens.maps.index_axis(Axis(0), j) * &m.data));
        let mut k = xhat.clone();
        for ((a, b), v) in k.indexed_iter_mut() {
            let one = Complex64::new(1.0, 0.0);
            let mut rows = vec![(one * p.alpha.sqrt(), xhat[[a, b]] * p.alpha.sqrt())];
            if y.mask.is_sampled(a, b) {
                rows.push((one * p.lambda.sqrt(), y.data[[j, a, b]] * p.lambda.sqrt()));
            }
            *v = complex_least_squares(&rows);
        }
        out.index_axis_mut(Axis(0), j).assign(&dense_ifft2c(&k));
    }
    out
}

#[test]
fn dcb_matches_least_squares_oracle() {
    let mut r = rng(4);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let sens = random_sens(3, 8, 8, &mut r);
        let m = random_image(8, 8, &mut r);
        let mask = random_mask(8, 8, r.gen_range(0.1..0.9), &mut r);
        let y = kspace(random_stack(3, 8, 8, &mut r), mask);
        let task = random_task(3, &mut r);
        let p = CascadePenalties::new(r.gen_range(0.01..10.0), r.gen_range(0.01..10.0), 1.0).unwrap();
        let got = dcb_update(&m, &y, &sens, &task, &p).unwrap();
        worst = worst.max(max_abs_diff3(&got, &dcb_oracle(&m, &y, &sens, &task, &p)));
    }
    assert!(worst <= 1e-10, "max abs error {worst:e}");
}

/// Pixelwise minimizer of `beta |m - u|^2 + alpha sum_j |S_j m - x_j|^2`.
fn wab_oracle(
    u: &hypercoil::ComplexImage,
    xj: &Array3<Complex64>,
    sens: &hypercoil::SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> ndarray::Array2<Complex64> {
    let mut out = u.data.clone();
    for ((a, b), v) in out.indexed_iter_mut() {
        let mut rows = vec![(Complex64::new(p.beta.sqrt(), 0.0), u.data[[a, b]] * p.beta.sqrt())];
        for j in task.active() {
            rows.push((sens.maps[[j, a, b]] * p.alpha.sqrt(), xj[[j, a, b]] * p.alpha.sqrt()));
        }
        *v = complex_least_squares(&rows);
    }
    out
}

#[test]
fn wab_matches_quadratic_minimizer() {
    let mut r = rng(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let c = r.gen_range(1..6);
        let sens = random_sens(c, 8, 8, &mut r);
        let u = random_image(8, 8, &mut r);
        let xj = random_stack(c, 8, 8, &mut r);
        let task = random_task(c, &mut r);
        let p = CascadePenalties::new(1.0, r.gen_range(0.01..10.0), r.gen_range(0.01..10.0)).unwrap();
        let got = wab_update(&u, &xj, &sens, &task, &p).unwrap();
        worst = worst.max(max_abs_diff(&got.data, &wab_oracle(&u, &xj, &sens, &task, &p)));
    }
    assert!(worst <= 1e-10, "max abs error {worst:e}");
}

#[test]
fn acquisition_operator_adjointness() {
    let mut r = rng(6);
    let sens = random_sens(8, 64, 64, &mut r);
    let mask = random_mask(64, 64, 0.3, &mut r);
    let task = TaskVector::all(8).unwrap();
    for _ in 0..5 {
        let x = random_image(64, 64, &mut r);
        let z = forward_acquire(&random_image(64, 64, &mut r), &sens, &mask).unwrap();
        let ax = forward_acquire(&x, &sens, &mask).unwrap();
        let ahz = zero_filled_recon(&z, &sens, &task).unwrap();
        let lhs = inner(z.data.iter().cloned(), ax.data.iter().cloned());
        let rhs = inner(ahz.data.iter().cloned(), x.data.iter().cloned());
        assert!((lhs - rhs).norm() / lhs.norm() < 1e-10);
    }
}

#[test]
fn sense_pair_adjointness() {
    let mut r = rng(7);
    let sens = random_sens(4, 16, 12, &mut r);
    let task: TaskVector = "1101".parse().unwrap();
    let x = random_image(16, 12, &mut r);
    let z = random_stack(4, 16, 12, &mut r);
    let sx = sense_forward(&x, &sens, &task).unwrap();
    let shz = sense_adjoint(&z, &sens, &task).unwrap();
    let lhs = inner(z.iter().cloned(), sx.iter().cloned());
    let rhs = inner(shz.data.iter().cloned(), x.data.iter().cloned());
    assert!((lhs - rhs).norm() / lhs.norm() < 1e-12);
}

#[test]
fn acquisition_is_linear_and_mask_idempotent() {
    let mut r = rng(8);
    let sens = random_sens(3, 8, 8, &mut r);
    let mask = random_mask(8, 8, 0.5, &mut r);
    let a = random_image(8, 8, &mut r);
    let b = random_image(8, 8, &mut r);
    let s = Complex64::new(0.3, -1.7);
    let combo = hypercoil::ComplexImage::new(&a.data * s + &b.data).unwrap();
    let lhs = forward_acquire(&combo, &sens, &mask).unwrap().data;
    let rhs = forward_acquire(&a, &sens, &mask).unwrap().data * s + forward_acquire(&b, &sens, &mask).unwrap().data;
    assert!(max_abs_diff3(&lhs, &rhs) < 1e-12);

    let mut once = forward_acquire(&a, &sens, &mask).unwrap().data;
    let before = once.clone();
    for mut k in once.outer_iter_mut() {
        let mut owned = k.to_owned();
        mask.apply(&mut owned);
        k.assign(&owned);
    }
    assert_eq!(once, before);
}

#[test]
fn zero_filled_is_exact_with_full_sampling() {
    let mut r = rng(9);
    let sens = smooth_sens(8, 64, 3, true);
    let x = random_image(64, 64, &mut r);
    let y = forward_acquire(&x, &sens, &full_mask(64, 64)).unwrap();
    let m0 = zero_filled_recon(&y, &sens, &TaskVector::all(8).unwrap()).unwrap();
    assert!(max_abs_diff(&m0.data, &x.data) < 1e-5);
}

#[test]
fn large_lambda_enforces_measured_samples() {
    let mut r = rng(10);
    let sens = random_sens(3, 8, 8, &mut r);
    let m = random_image(8, 8, &mut r);
    let mask = random_mask(8, 8, 0.4, &mut r);
    let y = kspace(random_stack(3, 8, 8, &mut r), mask.clone());
    let task = TaskVector::all(3).unwrap();
    let p = CascadePenalties::new(1e6, 1.0, 1.0).unwrap();
    let xj = dcb_update(&m, &y, &sens, &task, &p).unwrap();
    for j in 0..3 {
        let k = fft2c(&xj.index_axis(Axis(0), j).to_owned());
        for ((a, b), v) in k.indexed_iter() {
            if mask.is_sampled(a, b) {
                let want = y.data[[j, a, b]];
                assert!((v - want).norm() <= 1e-3 * want.norm().max(1e-12));
            }
        }
    }
}

#[test]
fn absent_coil_data_has_no_effect() {
    let mut r = rng(11);
    let sens = random_sens(4, 8, 8, &mut r);
    let mask = random_mask(8, 8, 0.5, &mut r);
    let task: TaskVector = "0110".parse().unwrap();
    let y = kspace(random_stack(4, 8, 8, &mut r), mask.clone());
    let mut y2 = y.clone();
    y2.data.index_axis_mut(Axis(0), 0).fill(Complex64::new(9.0, 9.0));
    let mut sens2 = sens.clone();
    sens2.maps.index_axis_mut(Axis(0), 3).fill(Complex64::new(-2.0, 0.5));
    let m = random_image(8, 8, &mut r);
    let p = CascadePenalties::default();
    assert_eq!(
        zero_filled_recon(&y, &sens, &task).unwrap(),
        zero_filled_recon(&y2, &sens2, &task).unwrap()
    );
    let a = dcb_update(&m, &y, &sens, &task, &p).unwrap();
    let b = dcb_update(&m, &y2, &sens2, &task, &p).unwrap();
    assert_eq!(a, b);
    assert_eq!(
        wab_update(&m, &a, &sens, &task, &p).unwrap(),
        wab_update(&m, &b, &sens2, &task, &p).unwrap()
    );
}

#[test]
fn mismatched_inputs_are_rejected() {
    let mut r = rng(12);
    let sens = random_sens(3, 8, 8, &mut r);
    let y = kspace(random_stack(3, 8, 8, &mut r), random_mask(8, 8, 0.5, &mut r));
    assert!(zero_filled_recon(&y, &sens, &TaskVector::all(4).unwrap()).is_err());
    let small = random_image(4, 8, &mut r);
    assert!(dcb_update(&small, &y, &sens, &TaskVector::all(3).unwrap(), &CascadePenalties::default()).is_err());
    assert!(CascadePenalties::new(0.0, 1.0, 1.0).is_err());
}
