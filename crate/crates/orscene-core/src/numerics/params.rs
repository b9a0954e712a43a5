use super::tensor::Tensor;

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// A named learnable array with its gradient and Adam moments.
///
/// `grad` always has the shape of `value`; the training loop zeroes it at the
/// start of every optimization step.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub trainable: bool,
    m: Tensor,
    v: Tensor,
}

/// Adam hyperparameters. Defaults: lr 1e-3, beta1 0.9, beta2 0.999, eps 1e-8.
#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Flat registry of model parameters plus optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, true)
    }

    /// A parameter excluded from gradient flow and optimizer updates but
    /// still serialized with checkpoints (e.g. fixed fusion gates).
    pub fn add_frozen(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.push(name.into(), value, false)
    }

    fn push(&mut self, name: String, value: Tensor, trainable: bool) -> ParamId {
        let shape = value.shape().to_vec();
        self.params.push(Parameter {
            name,
            grad: Tensor::zeros(&shape),
            m: Tensor::zeros(&shape),
            v: Tensor::zeros(&shape),
            value,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn trainable_scalar_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Multiplies every accumulated gradient in place (batch averaging).
    pub fn scale_grads(&mut self, factor: f64) {
        for p in &mut self.params {
            for g in p.grad.data_mut() {
                *g *= factor;
            }
        }
    }

    /// Rescales all gradients so their global L2 norm does not exceed
    /// `max_norm`; returns the norm before clipping.
    pub fn clip_grad_norm(&mut self, max_norm: f64) -> f64 {
        let mut total = 0.0;
        for p in &self.params {
            if !p.trainable {
                continue;
            }
            for g in p.grad.data() {
                total += g * g;
            }
        }
        let norm = total.sqrt();
        if norm > max_norm && norm > 0.0 {
            self.scale_grads(max_norm / norm);
        }
        norm
    }

    pub(crate) fn accumulate_grad(&mut self, id: ParamId, delta: &Tensor) {
        let g = self.params[id.0].grad.data_mut();
        for (gi, di) in g.iter_mut().zip(delta.data()) {
            *gi += di;
        }
    }

    /// One Adam update over every trainable parameter from the accumulated
    /// gradients; moments persist in the store across steps.
    pub fn adam_step(&mut self, cfg: &AdamConfig) {
        self.step += 1;
        let t = self.step as f64;
        let bc1 = 1.0 - cfg.beta1.powf(t);
        let bc2 = 1.0 - cfg.beta2.powf(t);
        for p in &mut self.params {
            if !p.trainable {
                continue;
            }
            let grads = p.grad.data();
            let ms = p.m.data_mut();
            for (m, g) in ms.iter_mut().zip(grads) {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            }
            let vs = p.v.data_mut();
            for (v, g) in vs.iter_mut().zip(grads) {
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            }
            let m = p.m.data().to_vec();
            let v = p.v.data().to_vec();
            let vals = p.value.data_mut();
            for i in 0..vals.len() {
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                vals[i] -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
            }
        }
    }

    /// Copies every parameter value (name, tensor) for checkpointing.
    pub fn snapshot(&self) -> Vec<(String, Tensor)> {
        self.params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect()
    }

    /// Restores values from a snapshot taken on an identically built store.
    /// Returns the first mismatching name on failure.
    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> std::result::Result<(), String> {
        if snapshot.len() != self.params.len() {
            return Err(format!(
                "parameter count {} vs checkpoint {}",
                self.params.len(),
                snapshot.len()
            ));
        }
        for (p, (name, value)) in self.params.iter_mut().zip(snapshot) {
            if &p.name != name {
                return Err(format!("parameter {} vs checkpoint {}", p.name, name));
            }
            if p.value.shape() != value.shape() {
                return Err(format!(
                    "shape {:?} vs checkpoint {:?} for {}",
                    p.value.shape(),
                    value.shape(),
                    name
                ));
            }
            p.value = value.clone();
        }
        Ok(())
    }
}
