use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Mask, MaskKind};
use crate::error::{Error, Result};

/// Radius in pixels of the fully sampled k-space centre of Poisson masks.
pub const POISSON_CENTER_RADIUS: f64 = 6.0;

/// Builds a binary sampling mask.
///
/// Cartesian masks keep `round(W / acceleration)` whole columns including a
/// central block of `acs` columns. Poisson masks are variable-density
/// Poisson-disc patterns whose local spacing grows with `sqrt(1 + r^2)`
/// (density `~ 1/(1 + r^2)`, `r` = twice the radius normalised to the
/// half-width) around a fully sampled central disc; the spacing scale is
/// bisected until the kept fraction matches `1 / acceleration`.
pub fn make_mask(shape: (usize, usize), kind: MaskKind, acceleration: f64, acs: usize, seed: u64) -> Result<Mask> {
    let (h, w) = shape;
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask shape must be non-empty"));
    }
    if !(acceleration > 1.0) || !acceleration.is_finite() {
        return Err(Error::invalid(format!("acceleration {acceleration} must be > 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = match kind {
        MaskKind::Cartesian => cartesian(h, w, acceleration, acs, &mut rng)?,
        MaskKind::Poisson => poisson(h, w, acceleration, &mut rng),
    };
    Ok(Mask {
        data,
        kind,
        acceleration,
        acs: if kind == MaskKind::Cartesian { acs } else { 0 },
    })
}

fn cartesian(h: usize, w: usize, acceleration: f64, acs: usize, rng: &mut ChaCha8Rng) -> Result<Array2<u8>> {
    let target = (w as f64 / acceleration).round() as usize;
    if target == 0 {
        return Err(Error::invalid(format!("acceleration {acceleration} keeps no columns of {w}")));
    }
    if acs >= target {
        return Err(Error::invalid(format!(
            "ACS width {acs} does not fit the {target} sampled columns"
        )));
    }
    let start = w / 2 - acs / 2;
    let mut keep = vec![false; w];
    keep[start..start + acs].iter_mut().for_each(|k| *k = true);
    let mut others: Vec<usize> = (0..w).filter(|&c| !keep[c]).collect();
    others.shuffle(rng);
    for &c in others.iter().take(target - acs) {
        keep[c] = true;
    }
    Ok(Array2::from_shape_fn((h, w), |(_, j)| keep[j] as u8))
}

fn poisson(h: usize, w: usize, acceleration: f64, rng: &mut ChaCha8Rng) -> Array2<u8> {
    let target = (h * w) as f64 / acceleration;
    let (ch, cw) = (h as f64 / 2.0, w as f64 / 2.0);
    let half = ch.min(cw);
    let mut order: Vec<usize> = (0..h * w).collect();
    order.shuffle(rng);

    // relative spacing at each pixel, before the global scale
    let stretch: Vec<f64> = (0..h * w)
        .map(|idx| {
            let (i, j) = ((idx / w) as f64 - ch, (idx % w) as f64 - cw);
            let r = 2.0 * (i * i + j * j).sqrt() / half;
            (1.0 + r * r).sqrt()
        })
        .collect();

    let build = |scale: f64| -> Array2<u8> {
        let mut mask = Array2::<u8>::zeros((h, w));
        for i in 0..h {
            for j in 0..w {
                let (di, dj) = (i as f64 - ch, j as f64 - cw);
                if (di * di + dj * dj).sqrt() <= POISSON_CENTER_RADIUS {
                    mask[[i, j]] = 1;
                }
            }
        }
        for &idx in &order {
            let (i, j) = (idx / w, idx % w);
            if mask[[i, j]] != 0 {
                continue;
            }
            let d = scale * stretch[idx];
            let reach = d.ceil() as isize;
            let d2 = d * d;
            let mut free = true;
            'scan: for di in -reach..=reach {
                let ii = i as isize + di;
                if ii < 0 || ii >= h as isize {
                    continue;
                }
                for dj in -reach..=reach {
                    let jj = j as isize + dj;
                    if jj < 0 || jj >= w as isize {
                        continue;
                    }
                    if ((di * di + dj * dj) as f64) < d2 && mask[[ii as usize, jj as usize]] != 0 {
                        free = false;
                        break 'scan;
                    }
                }
            }
            if free {
                mask[[i, j]] = 1;
            }
        }
        mask
    };
    let count = |m: &Array2<u8>| m.iter().filter(|&&v| v != 0).count() as f64;

    // kept count shrinks as the spacing scale grows
    let (mut lo, mut hi) = (0.5f64, 0.5 * (acceleration * 4.0).sqrt() + 2.0);
    while count(&build(hi)) > target && hi < 1e3 {
        hi *= 2.0;
    }
    let mut best = build(lo);
    let mut best_err = (count(&best) - target).abs();
    for _ in 0..24 {
        let mid = 0.5 * (lo + hi);
        let m = build(mid);
        let c = count(&m);
        let err = (c - target).abs();
        if err < best_err {
            best = m;
            best_err = err;
        }
        if c > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if best_err / target < 0.01 {
            break;
        }
    }
    best
}
