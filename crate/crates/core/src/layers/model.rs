use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, Bias, BiasMode, Bound, ConvLayer, Dense, EmanConv, EmanOptions, GatedNonlinearity, GemConv, Graph, Layer, ParamStore};
use crate::autodiff::{Tape, Tensor, Var};
use crate::error::LayerError;
use crate::features::{input_type, FeatureField, FeatureFamily, RelTanConfig};
use crate::repr::FeatureType;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// One prediction per vertex.
    Segmentation,
    /// One prediction per mesh, after mean pooling.
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvKind {
    Gem,
    Eman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `seed`.
    Train { seed: u64 },
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub task: Task,
    pub conv: ConvKind,
    pub features: FeatureFamily,
    pub reltan: RelTanConfig,
    pub targets: usize,
    pub hidden_type: FeatureType,
    pub exit_type: FeatureType,
    pub residual_blocks: usize,
    pub dense_width: usize,
    pub dropout: f64,
    pub bias: BiasMode,
    pub eman: EmanOptions,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Segmentation,
            conv: ConvKind::Eman,
            features: FeatureFamily::Reltan,
            reltan: RelTanConfig::default(),
            targets: 10,
            hidden_type: FeatureType::new(vec![0, 1, 2]).unwrap().repeat(16),
            exit_type: FeatureType::scalars(16),
            residual_blocks: 3,
            dense_width: 256,
            dropout: 0.5,
            bias: BiasMode::Angular,
            eman: EmanOptions::default(),
        }
    }
}

impl ModelConfig {
    pub fn input_type(&self) -> FeatureType {
        input_type(self.features, &self.reltan)
    }

    pub fn validate(&self) -> Result<(), LayerError> {
        if self.targets == 0 {
            return Err(LayerError::InvalidConfig("targets must be positive".into()));
        }
        if !self.exit_type.is_scalar() {
            return Err(LayerError::InvalidConfig(format!("exit type {} must be scalar", self.exit_type)));
        }
        if self.dense_width == 0 {
            return Err(LayerError::InvalidConfig("dense_width must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(LayerError::InvalidConfig(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Convolution, bias, nonlinearity.
#[derive(Debug, Clone)]
pub struct Stage {
    pub conv: ConvLayer,
    pub bias: Bias,
    pub nonlin: GatedNonlinearity,
}

impl Stage {
    #[allow(clippy::too_many_arguments)]
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        kind: ConvKind,
        in_type: &FeatureType,
        out_type: &FeatureType,
        bias: BiasMode,
        eman: &EmanOptions,
    ) -> Result<Self, LayerError> {
        let conv = match kind {
            ConvKind::Gem => ConvLayer::Gem(GemConv::new(store, rng, name, in_type, out_type)),
            ConvKind::Eman => ConvLayer::Eman(EmanConv::new(store, rng, name, in_type, out_type, eman)?),
        };
        Ok(Stage {
            conv,
            bias: Bias::new(store, rng, name, out_type, bias),
            nonlin: GatedNonlinearity::new(store, name, out_type),
        })
    }
}

impl Layer for Stage {
    fn in_type(&self) -> &FeatureType {
        self.conv.in_type()
    }

    fn out_type(&self) -> &FeatureType {
        self.conv.out_type()
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        let y = self.conv.forward(tape, params, graph, x)?;
        let y = self.bias.forward(tape, params, graph, y)?;
        self.nonlin.forward(tape, params, graph, y)
    }
}

/// Two stages whose output is added to the block input.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub first: Stage,
    pub second: Stage,
}

impl ResidualBlock {
    pub fn new(first: Stage, second: Stage) -> Result<Self, LayerError> {
        if first.out_type() != second.in_type() || second.out_type() != first.in_type() {
            return Err(LayerError::ResidualTypeMismatch {
                input: first.in_type().to_string(),
                output: second.out_type().to_string(),
            });
        }
        Ok(ResidualBlock { first, second })
    }
}

impl Layer for ResidualBlock {
    fn in_type(&self) -> &FeatureType {
        self.first.in_type()
    }

    fn out_type(&self) -> &FeatureType {
        self.second.out_type()
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        let y = self.first.forward(tape, params, graph, x)?;
        let y = self.second.forward(tape, params, graph, y)?;
        Ok(tape.add(y, x)?)
    }
}

/// Convolution block followed by the dense head.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    input_type: FeatureType,
    pub entry: Option<Stage>,
    pub blocks: Vec<ResidualBlock>,
    pub exit: Stage,
    pub hidden_dense: Dense,
    pub output_dense: Dense,
}

impl Model {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<(Model, ParamStore), LayerError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let input_type = config.input_type();
        let hidden = &config.hidden_type;
        let stage = |store: &mut ParamStore, rng: &mut R, name: &str, a: &FeatureType, b: &FeatureType| {
            Stage::new(store, rng, name, config.conv, a, b, config.bias, &config.eman)
        };
        let entry = if &input_type != hidden {
            Some(stage(&mut store, rng, "entry", &input_type, hidden)?)
        } else {
            None
        };
        let mut blocks = Vec::with_capacity(config.residual_blocks);
        for i in 0..config.residual_blocks {
            let first = stage(&mut store, rng, &format!("block{i}.0"), hidden, hidden)?;
            let second = stage(&mut store, rng, &format!("block{i}.1"), hidden, hidden)?;
            blocks.push(ResidualBlock::new(first, second)?);
        }
        let exit = stage(&mut store, rng, "exit", hidden, &config.exit_type)?;
        let hidden_dense = Dense::new(&mut store, rng, "dense0", config.exit_type.dim(), config.dense_width);
        let output_dense = Dense::new(&mut store, rng, "dense1", config.dense_width, config.targets);
        Ok((
            Model {
                config: config.clone(),
                input_type,
                entry,
                blocks,
                exit,
                hidden_dense,
                output_dense,
            },
            store,
        ))
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_type(&self) -> &FeatureType {
        &self.input_type
    }

    /// Every convolution in evaluation order.
    pub fn convolutions(&self) -> Vec<&ConvLayer> {
        let mut out: Vec<&ConvLayer> = self.entry.iter().map(|s| &s.conv).collect();
        for b in &self.blocks {
            out.push(&b.first.conv);
            out.push(&b.second.conv);
        }
        out.push(&self.exit.conv);
        out
    }

    /// Logits: V×targets for segmentation, 1×targets for classification.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var, mode: Mode) -> Result<Var, LayerError> {
        let mut h = x;
        if let Some(e) = &self.entry {
            h = e.forward(tape, params, graph, h)?;
        }
        for b in &self.blocks {
            h = b.forward(tape, params, graph, h)?;
        }
        h = self.exit.forward(tape, params, graph, h)?;
        h = self.hidden_dense.forward(tape, params, h)?;
        h = tape.relu(h);
        if let Mode::Train { seed } = mode {
            if self.config.dropout > 0.0 {
                let keep = 1.0 - self.config.dropout;
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let n = tape.value(h).data.len();
                let mask = (0..n)
                    .map(|_| if rng.random::<f64>() < keep { T::of(1.0 / keep) } else { T::zero() })
                    .collect();
                h = tape.mul_const(h, mask)?;
            }
        }
        if self.config.task == Task::Classification {
            h = tape.mean_rows(h);
        }
        self.output_dense.forward(tape, params, h)
    }

    /// Evaluation-mode logits in double precision.
    pub fn predict(&self, store: &ParamStore, graph: &Graph<f64>, input: &FeatureField) -> Result<Tensor<f64>, LayerError> {
        check_input(&self.input_type, graph, input)?;
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, false);
        let x = tape.constant(Tensor::new(input.vertex_count(), input.ftype().dim(), input.data().to_vec()));
        let y = self.forward(&mut tape, &params, graph, x, Mode::Eval)?;
        Ok(tape.value(y).clone())
    }

    /// Mean NLL of the targets and its gradient in store layout.
    pub fn loss_and_gradient(
        &self,
        store: &ParamStore,
        graph: &Graph<f64>,
        input: &FeatureField,
        targets: &[usize],
        mode: Mode,
    ) -> Result<(f64, Vec<f64>), LayerError> {
        check_input(&self.input_type, graph, input)?;
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, true);
        let x = tape.constant(Tensor::new(input.vertex_count(), input.ftype().dim(), input.data().to_vec()));
        let y = self.forward(&mut tape, &params, graph, x, mode)?;
        let loss = tape.nll_loss(y, targets)?;
        let value = tape.value(loss).item();
        let grads = tape.backward(loss)?;
        Ok((value, params.gradients(&grads, store)))
    }
}

