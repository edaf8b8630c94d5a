use std::collections::BTreeMap;

use super::tensor::{Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

/// What a parameter is used for; drives freezing and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamGroup {
    /// Convolution kernels and biases.
    Weight,
    /// Normalization affine terms.
    Norm,
    /// Operator mixing scalars.
    Alpha,
    /// Cell edge normalization scalars.
    EdgeP,
    /// Network connection scalars.
    Beta,
    /// Non-trainable state such as running statistics.
    Buffer,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 6] = [
        ParamGroup::Weight,
        ParamGroup::Norm,
        ParamGroup::Alpha,
        ParamGroup::EdgeP,
        ParamGroup::Beta,
        ParamGroup::Buffer,
    ];

    pub fn is_architecture(self) -> bool {
        matches!(self, ParamGroup::Alpha | ParamGroup::EdgeP | ParamGroup::Beta)
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
    pub momentum: Tensor,
    pub requires_grad: bool,
}

/// Ordered collection of named parameters. Insertion order is the serialization order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: BTreeMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: ParamGroup, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(
            !self.by_name.contains_key(&name),
            "duplicate parameter name {name}"
        );
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            name,
            group,
            momentum: Tensor::zeros(tensor.shape()),
            tensor,
            requires_grad: group != ParamGroup::Buffer,
        });
        id
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].tensor
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_in(&self, group: ParamGroup) -> Vec<ParamId> {
        self.iter()
            .filter(|(_, p)| p.group == group)
            .map(|(id, _)| id)
            .collect()
    }

    /// Number of scalar entries across trainable groups.
    pub fn scalar_count(&self, groups: &[ParamGroup]) -> usize {
        self.params
            .iter()
            .filter(|p| groups.contains(&p.group))
            .map(|p| p.tensor.len())
            .sum()
    }
}

/// Gradients keyed by parameter. Parameters that did not take part in the
/// computation have no entry and are treated as zero.
#[derive(Clone, Debug, Default)]
pub struct Gradients {
    map: BTreeMap<ParamId, Tensor>,
}

impl Gradients {
    pub(crate) fn accumulate(&mut self, id: ParamId, g: Tensor) {
        match self.map.get_mut(&id) {
            Some(existing) => existing.add_assign(&g),
            None => {
                self.map.insert(id, g);
            }
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    /// Gradient for `id`, zero-filled if the parameter was not reached.
    pub fn get_or_zero(&self, id: ParamId, shape: Shape) -> Tensor {
        self.map
            .get(&id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.map.iter().map(|(k, v)| (*k, v))
    }

    /// Euclidean norm over every stored gradient.
    pub fn global_norm(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales all gradients so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let scale = max_norm / norm;
            for t in self.map.values_mut() {
                t.data_mut().iter_mut().for_each(|g| *g *= scale);
            }
        }
        norm
    }
}

/// Classic momentum SGD with L2 weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    /// `buf <- momentum * buf + grad + weight_decay * param; param <- param - lr * buf`.
    pub fn update(&self, param: &mut Param, grad: &Tensor) -> Result<()> {
        if self.lr <= 0.0 {
            return Err(Error::invalid(format!("learning rate {} must be > 0", self.lr)));
        }
        if grad.shape() != param.tensor.shape() {
            return Err(Error::shape(
                "sgd",
                format!("{}: {:?} vs {:?}", param.name, grad.shape(), param.tensor.shape()),
            ));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {}", param.name)));
        }
        let values = param.tensor.data_mut();
        let buf = param.momentum.data_mut();
        for ((p, b), g) in values.iter_mut().zip(buf.iter_mut()).zip(grad.data()) {
            *b = self.momentum * *b + g + self.weight_decay * *p;
            *p -= self.lr * *b;
        }
        Ok(())
    }

    /// Updates every parameter whose group is in `groups`. Weight decay is
    /// never applied to architecture scalars.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients, groups: &[ParamGroup]) -> Result<()> {
        for i in 0..store.len() {
            let id = ParamId(i);
            let param = store.get_mut(id);
            if !param.requires_grad || !groups.contains(&param.group) {
                continue;
            }
            let grad = grads.get_or_zero(id, param.tensor.shape());
            let rule = if param.group.is_architecture() {
                Sgd {
                    weight_decay: 0.0,
                    ..*self
                }
            } else {
                *self
            };
            rule.update(param, &grad)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Param {
        Param {
            name: "w".into(),
            group: ParamGroup::Weight,
            tensor: Tensor::scalar(v),
            momentum: Tensor::scalar(0.0),
            requires_grad: true,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = scalar_param(1.25);
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd.update(&mut p, &Tensor::scalar(0.0)).unwrap();
        assert_eq!(p.tensor.data()[0], 1.25);
    }

    #[test]
    fn single_plain_step() {
        let mut p = scalar_param(1.0);
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        sgd.update(&mut p, &Tensor::scalar(2.0)).unwrap();
        assert!((p.tensor.data()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_recurrence_two_steps() {
        let (lr, mu, wd) = (0.05, 0.9, 0.0003);
        let mut p = scalar_param(1.0);
        let sgd = Sgd {
            lr,
            momentum: mu,
            weight_decay: wd,
        };
        sgd.update(&mut p, &Tensor::scalar(0.5)).unwrap();
        sgd.update(&mut p, &Tensor::scalar(-0.25)).unwrap();
        // unrolled by hand
        let b1 = 0.5 + wd * 1.0;
        let p1 = 1.0 - lr * b1;
        let b2 = mu * b1 + (-0.25) + wd * p1;
        let p2 = p1 - lr * b2;
        assert!((p.tensor.data()[0] - p2).abs() < 1e-15);
        assert!((p.momentum.data()[0] - b2).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_param() {
        let mut p = scalar_param(1.0);
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.0,
        };
        let err = sgd.update(&mut p, &Tensor::scalar(f64::NAN)).unwrap_err();
        assert!(err.to_string().contains('w'));
    }

    #[test]
    fn no_decay_on_architecture_scalars() {
        let mut store = ParamStore::new();
        let w = store.add("w", ParamGroup::Weight, Tensor::scalar(1.0));
        let b = store.add("beta", ParamGroup::Beta, Tensor::scalar(1.0));
        let sgd = Sgd {
            lr: 0.1,
            momentum: 0.0,
            weight_decay: 0.5,
        };
        sgd.step(&mut store, &Gradients::default(), &[ParamGroup::Weight, ParamGroup::Beta])
            .unwrap();
        assert!((store.tensor(w).data()[0] - 0.95).abs() < 1e-15);
        assert_eq!(store.tensor(b).data()[0], 1.0);
    }
}
