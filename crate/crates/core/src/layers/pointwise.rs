use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, Graph, Layer, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::LayerError;
use crate::repr::FeatureType;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasMode {
    /// Shift on ρ0, rotation ρn(b) on ρn. Gauge equivariant.
    #[default]
    Angular,
    /// Adds b to every coordinate. Breaks gauge equivariance on ρn channels;
    /// kept as a negative control.
    Additive,
}

/// One bias per irrep component of the feature type.
#[derive(Debug, Clone)]
pub struct Bias {
    ftype: FeatureType,
    mode: BiasMode,
    pub id: ParamId,
}

impl Bias {
    /// Biases start uniform in [-0.5, 0.5].
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, ftype: &FeatureType, mode: BiasMode) -> Self {
        let n = ftype.component_count();
        let init = (0..n).map(|_| rng.random_range(-0.5..=0.5)).collect();
        let id = store.add(format!("{name}.bias"), 1, n, init);
        Bias {
            ftype: ftype.clone(),
            mode,
            id,
        }
    }

    pub fn mode(&self) -> BiasMode {
        self.mode
    }

    /// Applies explicit bias values, outside any model.
    pub fn apply_values<T: Scalar>(tape: &mut Tape<T>, x: Var, values: Var, ftype: &FeatureType, mode: BiasMode) -> Result<Var, LayerError> {
        let got = tape.value(values).data.len();
        if got != ftype.component_count() {
            return Err(LayerError::BiasCountMismatch {
                expected: ftype.component_count(),
                actual: got,
            });
        }
        match mode {
            BiasMode::Angular => Ok(tape.angular_bias(x, values, ftype)?),
            BiasMode::Additive => {
                // spread each component's bias over its columns
                let mut cols = Vec::with_capacity(ftype.dim());
                for (k, &n) in ftype.orders().iter().enumerate() {
                    for _ in 0..crate::repr::irrep_dim(n) {
                        cols.push(k);
                    }
                }
                let spread = tape.gather_cols(values, cols.into())?;
                Ok(tape.add_row_bias(x, spread)?)
            }
        }
    }
}

impl Layer for Bias {
    fn in_type(&self) -> &FeatureType {
        &self.ftype
    }

    fn out_type(&self) -> &FeatureType {
        &self.ftype
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, _graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        Self::apply_values(tape, x, params.var(self.id), &self.ftype, self.mode)
    }
}

/// ReLU on ρ0 channels, norm gating on ρn channels with one learnable
/// offset per ρn component (initialized at zero).
#[derive(Debug, Clone)]
pub struct GatedNonlinearity {
    ftype: FeatureType,
    pub id: ParamId,
}

impl GatedNonlinearity {
    pub fn new(store: &mut ParamStore, name: &str, ftype: &FeatureType) -> Self {
        let n = ftype.orders().iter().filter(|&&o| o > 0).count();
        let id = store.add(format!("{name}.gate"), 1, n, vec![0.0; n]);
        GatedNonlinearity { ftype: ftype.clone(), id }
    }
}

impl Layer for GatedNonlinearity {
    fn in_type(&self) -> &FeatureType {
        &self.ftype
    }

    fn out_type(&self) -> &FeatureType {
        &self.ftype
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, _graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        Ok(tape.gated_norm(x, params.var(self.id), &self.ftype)?)
    }
}

/// x W + b on plain (scalar) rows.
#[derive(Debug, Clone)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Dense {
    /// Weights uniform in ±1/√inputs, zero bias.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, inputs: usize, outputs: usize) -> Self {
        let s = 1.0 / (inputs as f64).sqrt();
        let w = (0..inputs * outputs).map(|_| rng.random_range(-s..=s)).collect();
        let weight = store.add(format!("{name}.weight"), inputs, outputs, w);
        let bias = store.add(format!("{name}.bias"), 1, outputs, vec![0.0; outputs]);
        Dense {
            inputs,
            outputs,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, x: Var) -> Result<Var, LayerError> {
        let y = tape.matmul(x, params.var(self.weight))?;
        Ok(tape.add_row_bias(y, params.var(self.bias))?)
    }
}
