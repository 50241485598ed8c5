use rand::Rng;
use serde::{Deserialize, Serialize};

/// Handle to one named tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamInfo {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Flat storage for every learnable tensor, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    infos: Vec<ParamInfo>,
    data: Vec<f64>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a zero-initialised tensor.
    pub fn register(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let len = shape.iter().product();
        let offset = self.data.len();
        self.infos.push(ParamInfo {
            name,
            shape: shape.to_vec(),
            offset,
            len,
        });
        self.data.resize(offset + len, 0.0);
        ParamId(self.infos.len() - 1)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.infos.iter().position(|i| i.name == name).map(ParamId)
    }

    pub fn infos(&self) -> &[ParamInfo] {
        &self.infos
    }

    pub fn info(&self, id: ParamId) -> &ParamInfo {
        &self.infos[id.0]
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let i = &self.infos[id.0];
        &self.data[i.offset..i.offset + i.len]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let i = &self.infos[id.0];
        &mut self.data[i.offset..i.offset + i.len]
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// A zeroed buffer with the same layout, for gradients.
    pub fn zeros_like(&self) -> Vec<f64> {
        vec![0.0; self.data.len()]
    }

    pub fn slice_of<'a>(&self, id: ParamId, flat: &'a [f64]) -> &'a [f64] {
        let i = &self.infos[id.0];
        &flat[i.offset..i.offset + i.len]
    }

    pub fn slice_of_mut<'a>(&self, id: ParamId, flat: &'a mut [f64]) -> &'a mut [f64] {
        let i = &self.infos[id.0];
        &mut flat[i.offset..i.offset + i.len]
    }

    /// Kaiming-uniform fill, `U(-b, b)` with `b = gain * sqrt(6 / fan_in)`.
    pub fn kaiming_uniform<R: Rng + ?Sized>(&mut self, id: ParamId, fan_in: usize, gain: f64, rng: &mut R) {
        let bound = gain * (6.0 / fan_in as f64).sqrt();
        for v in self.get_mut(id) {
            *v = rng.gen_range(-bound..bound);
        }
    }

    /// Rounds every value to the nearest f32 so checkpoints are lossless.
    pub fn round_to_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }

    /// Sum of tensor sizes whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.infos.iter().filter(|i| i.name.starts_with(prefix)).map(|i| i.len).sum()
    }
}
