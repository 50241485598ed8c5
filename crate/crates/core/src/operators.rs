//! SENSE coil operators and the closed-form data-consistency (DCB) and
//! weighted-average (WAB) updates of the variable-splitting iteration.
//!
//! Every operator acts only on the coils marked present in the task vector:
//! absent coils produce zero channels and never enter a sum.

use ndarray::{Array2, Array3, ArrayView2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::coil_sim::{ComplexImage, MultiCoilKspace, SensitivitySet};
use crate::error::{Error, Result};
use crate::fft::{fft2c, ifft2c};
use crate::task_codec::TaskVector;

/// Per-cascade penalty weights: data fidelity `lambda`, splitting `alpha`,
/// denoiser coupling `beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CascadePenalties {
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for CascadePenalties {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            alpha: 1.0,
            beta: 1.0,
        }
    }
}

impl CascadePenalties {
    pub fn new(lambda: f64, alpha: f64, beta: f64) -> Result<Self> {
        let p = Self { lambda, alpha, beta };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda", self.lambda), ("alpha", self.alpha), ("beta", self.beta)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("penalty {name} = {v} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Iterates of one cascade: combined estimate `m`, denoiser output `u` and
/// per-coil images `xj`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReconState {
    pub m: ComplexImage,
    pub u: ComplexImage,
    pub xj: Array3<Complex64>,
}

fn check_task(sens: &SensitivitySet, task: &TaskVector) -> Result<()> {
    if task.n_coils() != sens.n_coils() {
        return Err(Error::invalid(format!(
            "task vector covers {} coils but {} sensitivity maps were given",
            task.n_coils(),
            sens.n_coils()
        )));
    }
    if task.popcount() == 0 {
        return Err(Error::invalid("task vector has no active coil"));
    }
    Ok(())
}

fn check_shape(what: &str, got: (usize, usize), want: (usize, usize)) -> Result<()> {
    if got != want {
        return Err(Error::invalid(format!("{what} shape {got:?} does not match {want:?}")));
    }
    Ok(())
}

fn check_kspace(y: &MultiCoilKspace, sens: &SensitivitySet) -> Result<()> {
    if y.n_coils() != sens.n_coils() {
        return Err(Error::invalid(format!(
            "k-space has {} coils, sensitivities {}",
            y.n_coils(),
            sens.n_coils()
        )));
    }
    check_shape("k-space", y.shape(), sens.shape())?;
    check_shape("mask", y.mask.shape(), sens.shape())
}

fn check_coil_stack(xj: &Array3<Complex64>, sens: &SensitivitySet) -> Result<()> {
    if xj.dim() != sens.maps.dim() {
        return Err(Error::invalid(format!(
            "per-coil images {:?} do not match sensitivities {:?}",
            xj.dim(),
            sens.maps.dim()
        )));
    }
    Ok(())
}

/// `S_j . x` for active coils, zero channels for absent ones.
pub fn sense_forward(x: &ComplexImage, sens: &SensitivitySet, task: &TaskVector) -> Result<Array3<Complex64>> {
    check_task(sens, task)?;
    check_shape("image", x.shape(), sens.shape())?;
    let mut out = Array3::zeros(sens.maps.dim());
    for j in task.active() {
        let mut ch = out.index_axis_mut(ndarray::Axis(0), j);
        Zip::from(&mut ch)
            .and(&sens.maps.index_axis(ndarray::Axis(0), j))
            .and(&x.data)
            .for_each(|o, &s, &v| *o = s * v);
    }
    Ok(out)
}

/// `sum_{j active} conj(S_j) . x_j`.
pub fn sense_adjoint(xj: &Array3<Complex64>, sens: &SensitivitySet, task: &TaskVector) -> Result<ComplexImage> {
    check_task(sens, task)?;
    check_coil_stack(xj, sens)?;
    Ok(ComplexImage {
        data: combine(xj, sens, task),
    })
}

fn combine(xj: &Array3<Complex64>, sens: &SensitivitySet, task: &TaskVector) -> Array2<Complex64> {
    let (h, w) = sens.shape();
    let mut acc = Array2::zeros((h, w));
    for j in task.active() {
        Zip::from(&mut acc)
            .and(&sens.maps.index_axis(ndarray::Axis(0), j))
            .and(&xj.index_axis(ndarray::Axis(0), j))
            .for_each(|a, &s, &x| *a += s.conj() * x);
    }
    acc
}

fn active_energy(sens: &SensitivitySet, task: &TaskVector) -> Array2<f64> {
    let (h, w) = sens.shape();
    let mut q = Array2::zeros((h, w));
    for j in task.active() {
        q.zip_mut_with(&sens.maps.index_axis(ndarray::Axis(0), j), |acc, s| *acc += s.norm_sqr());
    }
    q
}

/// Sensitivity-weighted zero-filled image `m0 = sum_j conj(S_j) . ifft2c(y_j)`.
pub fn zero_filled_recon(y: &MultiCoilKspace, sens: &SensitivitySet, task: &TaskVector) -> Result<ComplexImage> {
    check_task(sens, task)?;
    check_kspace(y, sens)?;
    let (h, w) = sens.shape();
    let mut acc = Array2::zeros((h, w));
    for j in task.active() {
        let img = ifft2c(&y.data.index_axis(ndarray::Axis(0), j).to_owned());
        Zip::from(&mut acc)
            .and(&sens.maps.index_axis(ndarray::Axis(0), j))
            .and(&img)
            .for_each(|a, &s, &x| *a += s.conj() * x);
    }
    Ok(ComplexImage { data: acc })
}

fn coil_kspace(m: &Array2<Complex64>, s: ArrayView2<Complex64>) -> Array2<Complex64> {
    let mut prod = Array2::zeros(m.dim());
    Zip::from(&mut prod).and(&s).and(m).for_each(|o, &s, &v| *o = s * v);
    fft2c(&prod)
}

/// Data-consistency update. Per frequency bin of each active coil, sampled
/// bins become `(alpha * F S_j m + lambda * y_j) / (lambda + alpha)` and
/// unsampled bins keep `F S_j m`; the result is returned in image space.
pub fn dcb_update(
    m: &ComplexImage,
    y: &MultiCoilKspace,
    sens: &SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> Result<Array3<Complex64>> {
    p.validate()?;
    check_task(sens, task)?;
    check_kspace(y, sens)?;
    check_shape("image", m.shape(), sens.shape())?;
    let (lambda, alpha) = (p.lambda, p.alpha);
    let denom = lambda + alpha;
    let mut out = Array3::zeros(sens.maps.dim());
    for j in task.active() {
        let mut k = coil_kspace(&m.data, sens.maps.index_axis(ndarray::Axis(0), j));
        Zip::from(&mut k)
            .and(&y.data.index_axis(ndarray::Axis(0), j))
            .and(&y.mask.data)
            .for_each(|k, &yv, &mv| {
                if mv != 0 {
                    *k = (*k * alpha + yv * lambda) / denom;
                }
            });
        out.index_axis_mut(ndarray::Axis(0), j).assign(&ifft2c(&k));
    }
    Ok(out)
}

/// Weighted-average update, pixelwise
/// `m = (beta u + alpha sum_j conj(S_j) x_j) / (beta + alpha sum_j |S_j|^2)`.
pub fn wab_update(
    u: &ComplexImage,
    xj: &Array3<Complex64>,
    sens: &SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> Result<ComplexImage> {
    p.validate()?;
    check_task(sens, task)?;
    check_coil_stack(xj, sens)?;
    check_shape("image", u.shape(), sens.shape())?;
    let num = combine(xj, sens, task);
    let q = active_energy(sens, task);
    let mut m = Array2::zeros(u.shape());
    Zip::from(&mut m)
        .and(&u.data)
        .and(&num)
        .and(&q)
        .for_each(|m, &u, &a, &q| *m = (u * p.beta + a * p.alpha) / (p.beta + p.alpha * q));
    Ok(ComplexImage { data: m })
}

/// Gradients of a real loss through [`dcb_update`].
///
/// Complex gradients follow the `dL/dRe + i dL/dIm` convention.
pub struct DcbGrad {
    pub m: Array2<Complex64>,
    pub lambda: f64,
    pub alpha: f64,
}

pub fn dcb_backward(
    grad_xj: &Array3<Complex64>,
    m: &ComplexImage,
    y: &MultiCoilKspace,
    sens: &SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> Result<DcbGrad> {
    p.validate()?;
    check_task(sens, task)?;
    check_kspace(y, sens)?;
    check_coil_stack(grad_xj, sens)?;
    let (lambda, alpha) = (p.lambda, p.alpha);
    let denom = lambda + alpha;
    let mut grad_m = Array2::zeros(m.shape());
    let (mut g_lambda, mut g_alpha) = (0.0, 0.0);
    for j in task.active() {
        let s = sens.maps.index_axis(ndarray::Axis(0), j);
        let xhat = coil_kspace(&m.data, s);
        // adjoint of the unitary inverse transform
        let mut g = fft2c(&grad_xj.index_axis(ndarray::Axis(0), j).to_owned());
        Zip::from(&mut g)
            .and(&xhat)
            .and(&y.data.index_axis(ndarray::Axis(0), j))
            .and(&y.mask.data)
            .for_each(|g, &xh, &yv, &mv| {
                if mv != 0 {
                    let diff = xh - yv;
                    // d out / d lambda = -alpha (xh - y) / denom^2, d out / d alpha = lambda (xh - y) / denom^2
                    let dd = (g.conj() * diff).re / (denom * denom);
                    g_lambda -= alpha * dd;
                    g_alpha += lambda * dd;
                    *g *= alpha / denom;
                }
            });
        let back = ifft2c(&g);
        Zip::from(&mut grad_m)
            .and(&s)
            .and(&back)
            .for_each(|a, &s, &b| *a += s.conj() * b);
    }
    Ok(DcbGrad {
        m: grad_m,
        lambda: g_lambda,
        alpha: g_alpha,
    })
}

/// Gradients of a real loss through [`wab_update`].
pub struct WabGrad {
    pub u: Array2<Complex64>,
    pub xj: Array3<Complex64>,
    pub alpha: f64,
    pub beta: f64,
}

pub fn wab_backward(
    grad_m: &Array2<Complex64>,
    u: &ComplexImage,
    xj: &Array3<Complex64>,
    sens: &SensitivitySet,
    task: &TaskVector,
    p: &CascadePenalties,
) -> Result<WabGrad> {
    p.validate()?;
    check_task(sens, task)?;
    check_coil_stack(xj, sens)?;
    let num = combine(xj, sens, task);
    let q = active_energy(sens, task);
    let (alpha, beta) = (p.alpha, p.beta);
    let mut grad_u = Array2::zeros(u.shape());
    // g / D, reused for the per-coil gradients
    let mut scaled = Array2::zeros(u.shape());
    let (mut g_alpha, mut g_beta) = (0.0, 0.0);
    Zip::from(&mut grad_u)
        .and(&mut scaled)
        .and(grad_m)
        .and(&u.data)
        .and(&num)
        .and(&q)
        .for_each(|gu, sc, &g, &u, &a, &q| {
            let d = beta + alpha * q;
            let m = (u * beta + a * alpha) / d;
            *gu = g * (beta / d);
            *sc = g / d;
            g_beta += (g.conj() * (u - m)).re / d;
            g_alpha += (g.conj() * (a - m * q)).re / d;
        });
    let mut grad_xj = Array3::zeros(xj.dim());
    for j in task.active() {
        Zip::from(&mut grad_xj.index_axis_mut(ndarray::Axis(0), j))
            .and(&sens.maps.index_axis(ndarray::Axis(0), j))
            .and(&scaled)
            .for_each(|gx, &s, &sc| *gx = s * sc * alpha);
    }
    Ok(WabGrad {
        u: grad_u,
        xj: grad_xj,
        alpha: g_alpha,
        beta: g_beta,
    })
}
