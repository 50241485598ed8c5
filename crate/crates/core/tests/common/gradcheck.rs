//! Finite-difference gradient checking by parameter group.

use hypercoil::cascade::{CascadeModel, ModelConfig};
use hypercoil::denoiser::{DenoiserConfig, DwpMode};
use hypercoil::nn::ParamStore;
use hypercoil::operators::CascadePenalties;
use hypercoil::task_codec::embed_task;
use hypercoil::TaskVector;
use ndarray::Array2;
use rand::seq::index::sample;
use rand::Rng;

use super::*;

pub fn tiny_denoiser(mode: DwpMode) -> DenoiserConfig {
    DenoiserConfig {
        levels: 2,
        base_channels: 4,
        embed_dim: 6,
        dwp_mode: mode,
    }
}

fn group_of(name: &str) -> &'static str {
    if name.contains(".hyper.") {
        "hyper"
    } else if name.contains("_raw") {
        "penalties"
    } else {
        "cnn"
    }
}

/// Relative error `|a - f| / max(|a|, |f|)` per parameter group on a random
/// subset of coordinates.
pub fn check_groups(
    params: &mut ParamStore,
    analytic: &[f64],
    loss: &dyn Fn(&ParamStore) -> f64,
    step: f64,
    per_group: usize,
    seed: u64,
) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let mut groups: Vec<(&'static str, Vec<usize>)> = Vec::new();
    for info in params.infos() {
        let g = group_of(&info.name);
        let idx: Vec<usize> = (info.offset..info.offset + info.len).collect();
        match groups.iter_mut().find(|(n, _)| *n == g) {
            Some((_, v)) => v.extend(idx),
            None => groups.push((g, idx)),
        }
    }
    let mut out = Vec::new();
    for (name, idx) in groups {
        let chosen = sample(&mut r, idx.len(), per_group.min(idx.len()));
        let (mut diff, mut na, mut nf) = (0.0, 0.0, 0.0);
        for c in chosen.iter() {
            let i = idx[c];
            let orig = params.flat()[i];
            params.flat_mut()[i] = orig + step;
            let up = loss(params);
            params.flat_mut()[i] = orig - step;
            let down = loss(params);
            params.flat_mut()[i] = orig;
            let fd = (up - down) / (2.0 * step);
            diff += (analytic[i] - fd).powi(2);
            na += analytic[i].powi(2);
            nf += fd.powi(2);
        }
        out.push((name, diff.sqrt() / na.sqrt().max(nf.sqrt()).max(1e-300)));
    }
    out
}

pub fn cascade_gradient_errors(share: bool) -> Vec<(&'static str, f64)> {
    let cfg = ModelConfig {
        cascades: 2,
        denoiser: tiny_denoiser(DwpMode::All),
        share_denoiser: share,
        ..ModelConfig::default()
    };
    let mut model = CascadeModel::new(&cfg, 5).unwrap();
    model.set_penalties(0, &CascadePenalties::new(0.7, 1.3, 0.9).unwrap());
    model.set_penalties(1, &CascadePenalties::new(2.0, 0.6, 1.4).unwrap());
    let mut r = rng(31);
    for v in model.params.flat_mut() {
        if *v == 0.0 {
            *v = r.gen_range(-0.05..0.05);
        }
    }
    let sens = random_sens(4, 8, 8, &mut r);
    let mask = random_mask(8, 8, 0.4, &mut r);
    let y = kspace(random_stack(4, 8, 8, &mut r), mask);
    let task: TaskVector = "1011".parse().unwrap();
    let e = embed_task(&task).unwrap();
    let w = Array2::from_shape_simple_fn((8, 8), || random_c(&mut r));
    let objective = |out: &hypercoil::ComplexImage| -> f64 { out.data.iter().zip(w.iter()).map(|(o, w)| (w.conj() * o).re).sum() };
    let (out, cache) = model.forward(&y, &sens, &task, &e).unwrap();
    let _ = objective(&out);
    let mut grads = model.params.zeros_like();
    model.backward(&cache, &w, &y, &sens, &task, &mut grads).unwrap();

    let mut params = model.params.clone();
    let probe = model.clone();
    let loss = move |p: &ParamStore| -> f64 {
        let mut m = probe.clone();
        m.params = p.clone();
        let (out, _) = m.forward(&y, &sens, &task, &e).unwrap();
        objective(&out)
    };
    check_groups(&mut params, &grads, &loss, 1e-5, 40, 9)
}

