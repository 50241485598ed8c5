//! Unrolled variable-splitting network: `N_b` cascades of
//! denoiser -> data consistency -> weighted average.

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::coil_sim::{ComplexImage, MultiCoilKspace, SensitivitySet};
use crate::denoiser::{complex_to_tensor, tensor_to_complex, Denoiser, DenoiserCache, DenoiserConfig, HYPER_TAG};
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore, Tensor};
use crate::operators::{
    dcb_backward, dcb_update, wab_backward, wab_update, zero_filled_recon, CascadePenalties, ReconState,
};
use crate::task_codec::{embed_task, EmbeddedTask, TaskVector};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub cascades: usize,
    pub denoiser: DenoiserConfig,
    /// Initial penalties, identical for every cascade.
    pub penalties: CascadePenalties,
    pub learn_penalties: bool,
    /// One denoiser reused by every cascade when true.
    pub share_denoiser: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            cascades: 5,
            denoiser: DenoiserConfig::default(),
            penalties: CascadePenalties::default(),
            learn_penalties: true,
            share_denoiser: true,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cascades == 0 {
            return Err(Error::invalid("at least one cascade is required"));
        }
        self.penalties.validate()?;
        self.denoiser.validate()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Learnable tensors plus the layout needed to run them.
#[derive(Clone, Debug)]
pub struct CascadeModel {
    config: ModelConfig,
    pub params: ParamStore,
    denoisers: Vec<Denoiser>,
    // raw (pre-softplus) lambda, alpha, beta per cascade
    penalties: Vec<[ParamId; 3]>,
}

struct CascadeStep {
    m: ComplexImage,
    u: ComplexImage,
    xj: Array3<Complex64>,
    penalties: CascadePenalties,
    denoiser: DenoiserCache,
}

/// Forward activations kept for [`CascadeModel::backward`].
pub struct CascadeCache {
    steps: Vec<CascadeStep>,
    embedding: EmbeddedTask,
}

impl CascadeModel {
    /// Registers every tensor without initialising it.
    pub fn layout(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::new();
        let n_den = if config.share_denoiser { 1 } else { config.cascades };
        let denoisers = (0..n_den)
            .map(|i| Denoiser::register(&mut params, &format!("denoiser{i}"), &config.denoiser))
            .collect::<Result<Vec<_>>>()?;
        let penalties = (0..config.cascades)
            .map(|k| {
                ["lambda", "alpha", "beta"].map(|name| params.register(format!("cascade{k}.{name}_raw"), &[1]))
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            params,
            denoisers,
            penalties,
        })
    }

    /// Seeded initialisation; values are rounded to f32 so a checkpoint
    /// round trip is exact.
    pub fn new(config: &ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::layout(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for d in &model.denoisers {
            d.init(&mut model.params, &mut rng);
        }
        let p = config.penalties;
        for k in 0..config.cascades {
            model.set_penalties(k, &p);
        }
        model.params.round_to_f32();
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn denoiser(&self, cascade: usize) -> &Denoiser {
        &self.denoisers[if self.config.share_denoiser { 0 } else { cascade }]
    }

    pub fn penalties(&self, cascade: usize) -> CascadePenalties {
        let [l, a, b] = self.penalties[cascade].map(|id| softplus(self.params.get(id)[0]));
        CascadePenalties {
            lambda: l,
            alpha: a,
            beta: b,
        }
    }

    pub fn set_penalties(&mut self, cascade: usize, p: &CascadePenalties) {
        let ids = self.penalties[cascade];
        for (id, v) in ids.into_iter().zip([p.lambda, p.alpha, p.beta]) {
            self.params.get_mut(id)[0] = softplus_inverse(v);
        }
    }

    /// Flat indices of the penalty scalars.
    pub fn penalty_indices(&self) -> Vec<usize> {
        self.penalties
            .iter()
            .flatten()
            .map(|&id| self.params.info(id).offset)
            .collect()
    }

    /// Flat indices of hypernetwork tensors.
    pub fn hyper_indices(&self) -> Vec<usize> {
        self.params
            .infos()
            .iter()
            .filter(|i| i.name.contains(HYPER_TAG))
            .flat_map(|i| i.offset..i.offset + i.len)
            .collect()
    }

    /// Reconstruction conditioned on `embed_task(task)`.
    pub fn reconstruct(&self, y: &MultiCoilKspace, sens: &SensitivitySet, task: &TaskVector) -> Result<ComplexImage> {
        let e = embed_task(task)?;
        Ok(self.forward(y, sens, task, &e)?.0)
    }

    /// Every cascade's iterates `(m_k, u_{k+1}, x_j^{k+1})` plus the output.
    pub fn reconstruct_trace(
        &self,
        y: &MultiCoilKspace,
        sens: &SensitivitySet,
        task: &TaskVector,
        embedding: &EmbeddedTask,
    ) -> Result<(Vec<ReconState>, ComplexImage)> {
        let (out, cache) = self.forward(y, sens, task, embedding)?;
        let states = cache
            .steps
            .into_iter()
            .map(|s| ReconState { m: s.m, u: s.u, xj: s.xj })
            .collect();
        Ok((states, out))
    }

    pub fn forward(
        &self,
        y: &MultiCoilKspace,
        sens: &SensitivitySet,
        task: &TaskVector,
        embedding: &EmbeddedTask,
    ) -> Result<(ComplexImage, CascadeCache)> {
        let (h, w) = sens.shape();
        self.config.denoiser.check_shape(h, w)?;
        let mut m = zero_filled_recon(y, sens, task)?;
        let mut steps = Vec::with_capacity(self.config.cascades);
        for k in 0..self.config.cascades {
            let p = self.penalties(k);
            let (u_t, den_cache) =
                self.denoiser(k).forward(&self.params, &complex_to_tensor(&m.data), embedding)?;
            let u = ComplexImage {
                data: tensor_to_complex(&u_t),
            };
            let xj = dcb_update(&m, y, sens, task, &p)?;
            let next = wab_update(&u, &xj, sens, task, &p)?;
            steps.push(CascadeStep {
                m,
                u,
                xj,
                penalties: p,
                denoiser: den_cache,
            });
            m = next;
        }
        if m.data.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Numerical("non-finite reconstruction".into()));
        }
        Ok((
            m,
            CascadeCache {
                steps,
                embedding: embedding.clone(),
            },
        ))
    }

    /// Accumulates `dL/dparams` into `grads` given `dL/d output`
    /// (complex gradient convention `dL/dRe + i dL/dIm`).
    pub fn backward(
        &self,
        cache: &CascadeCache,
        grad_out: &Array2<Complex64>,
        y: &MultiCoilKspace,
        sens: &SensitivitySet,
        task: &TaskVector,
        grads: &mut [f64],
    ) -> Result<()> {
        let _ = &cache.embedding;
        let mut g_m = grad_out.clone();
        for (k, step) in cache.steps.iter().enumerate().rev() {
            let p = &step.penalties;
            let wg = wab_backward(&g_m, &step.u, &step.xj, sens, task, p)?;
            let dg = dcb_backward(&wg.xj, &step.m, y, sens, task, p)?;

            let g_u = complex_to_tensor(&wg.u);
            let g_den: Tensor = self.denoiser(k).backward(&self.params, &step.denoiser, &g_u, grads);
            g_m = dg.m + tensor_to_complex(&g_den);

            if self.config.learn_penalties {
                let [il, ia, ib] = self.penalties[k];
                let d_values = [dg.lambda, wg.alpha + dg.alpha, wg.beta];
                for (id, d) in [il, ia, ib].into_iter().zip(d_values) {
                    let raw = self.params.get(id)[0];
                    self.params.slice_of_mut(id, grads)[0] += d * sigmoid(raw);
                }
            }
        }
        Ok(())
    }
}
