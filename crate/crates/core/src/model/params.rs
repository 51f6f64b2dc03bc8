use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::layers::glorot_uniform;
use crate::tensor::Tensor;

use super::ModelConfig;

/// All learnable tensors of a model, keyed by name, plus its configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights; biases zero except LSTM forget gates at 1.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = BTreeMap::new();
        for (name, shape) in config.param_shapes() {
            let t = if name.ends_with(".bias") {
                let mut b = Tensor::zeros(&shape);
                if name.contains("lstm") {
                    let h = shape[0] / 4;
                    b.data_mut()[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
                }
                b
            } else if name.contains("lstm") {
                // each of the four gate blocks is [H × D_in]
                let (rows, cols) = (shape[0], shape[1]);
                glorot_uniform(&mut rng, rows, cols, cols, rows / 4)
            } else {
                let (rows, cols) = (shape[0], shape[1]);
                glorot_uniform(&mut rng, rows, cols, cols, rows)
            };
            tensors.insert(name, t);
        }
        Ok(ModelParams { config: config.clone(), tensors })
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors.get(name).ok_or_else(|| Error::Config(format!("missing parameter '{name}'")))
    }

    /// Checks that names and shapes match the configured variant exactly.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let expected = self.config.param_shapes();
        for (name, shape) in &expected {
            let t = self.get(name)?;
            if t.shape() != shape.as_slice() {
                return Err(Error::Config(format!("parameter '{name}' has shape {:?}, expected {shape:?}", t.shape())));
            }
        }
        if self.tensors.len() != expected.len() {
            let extra: Vec<_> =
                self.tensors.keys().filter(|k| !expected.iter().any(|(n, _)| n == *k)).cloned().collect();
            return Err(Error::Config(format!("parameters not used by {}: {extra:?}", self.config.variant)));
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        count_params(self.tensors.values())
    }
}

/// Number of learnable scalars.
pub fn count_params<'a>(tensors: impl IntoIterator<Item = &'a Tensor>) -> usize {
    tensors.into_iter().map(Tensor::len).sum()
}
