use ndarray::Array3;

use super::{ComplexImage, Mask, MultiCoilKspace, SensitivitySet};
use crate::error::{Error, Result};
use crate::fft::fft2c;

/// `y_j = M . fft2c(S_j . x)` for every coil.
pub fn forward_acquire(x: &ComplexImage, sens: &SensitivitySet, mask: &Mask) -> Result<MultiCoilKspace> {
    let shape = x.shape();
    if sens.shape() != shape || mask.shape() != shape {
        return Err(Error::invalid(format!(
            "shape mismatch: image {:?}, sensitivities {:?}, mask {:?}",
            shape,
            sens.shape(),
            mask.shape()
        )));
    }
    let (h, w) = shape;
    let mut data = Array3::zeros((sens.n_coils(), h, w));
    for (s, mut out) in sens.maps.outer_iter().zip(data.outer_iter_mut()) {
        let mut k = fft2c(&(&s * &x.data));
        mask.apply(&mut k);
        out.assign(&k);
    }
    Ok(MultiCoilKspace {
        data,
        mask: mask.clone(),
    })
}
