//! Equivariant layers, the parameter store and whole-model assembly.

mod conv;
mod model;
mod pointwise;

pub use conv::{KernelParam, ConvLayer, EmanConv, EmanOptions, GemConv, HeadConfig, MultiHead};
pub use model::{ConvKind, Mode, Model, ModelConfig, ResidualBlock, Stage, Task};
pub use pointwise::{Bias, BiasMode, Dense, GatedNonlinearity};

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Tape, Tensor, Var};
use crate::error::LayerError;
use crate::features::FeatureField;
use crate::mesh::Mesh;
use crate::repr::FeatureType;
use crate::scalar::Scalar;
use crate::tangent::{FrameBinding, TransportData};

/// Index into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ParamId(usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub offset: usize,
    pub rows: usize,
    pub cols: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// All trainable values of a model in one flat f64 buffer, in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    data: Vec<f64>,
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, rows: usize, cols: usize, values: Vec<f64>) -> ParamId {
        assert_eq!(values.len(), rows * cols, "parameter shape");
        self.entries.push(ParamEntry {
            name: name.into(),
            offset: self.data.len(),
            rows,
            cols,
        });
        self.data.extend(values);
        ParamId(self.entries.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        let e = &self.entries[id.0];
        &self.data[e.offset..e.offset + e.len()]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        let e = &self.entries[id.0];
        &mut self.data[e.offset..e.offset + e.len()]
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Places every parameter on the tape, as leaves when `trainable`.
    pub fn bind<T: Scalar>(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .entries
            .iter()
            .map(|e| {
                let t = Tensor::from_f64(e.rows, e.cols, &self.data[e.offset..e.offset + e.len()]);
                if trainable {
                    tape.leaf(t)
                } else {
                    tape.constant(t)
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Tape handles of a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Flat gradient in store layout; unreached parameters get zeros.
    pub fn gradients<T: Scalar>(&self, grads: &Gradients<T>, store: &ParamStore) -> Vec<f64> {
        let mut out = vec![0.0; store.len()];
        for (e, &v) in store.entries().iter().zip(&self.vars) {
            if let Some(g) = grads.get(v) {
                for (o, x) in out[e.offset..e.offset + e.len()].iter_mut().zip(g) {
                    *o = x.f64();
                }
            }
        }
        out
    }
}

/// Edge structure and transport angles in the precision of the tape.
#[derive(Debug, Clone)]
pub struct Graph<T> {
    vertex_count: usize,
    degrees: Vec<usize>,
    centers: Arc<[usize]>,
    neighbors: Arc<[usize]>,
    theta: Arc<[T]>,
    transport: Arc<[T]>,
    edge_norm: Arc<[T]>,
    // rows of the self-contribution variant: one self row per vertex, then edges
    ext_groups: Arc<[usize]>,
    ext_norm: Arc<[T]>,
    binding: Option<FrameBinding>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mesh: &Mesh, transport: &TransportData) -> Self {
        Self::from_parts(
            mesh.vertex_count(),
            mesh.edge_centers().to_vec(),
            mesh.edge_neighbors().to_vec(),
            transport.theta().to_vec(),
            transport.transport().to_vec(),
            Some(transport.binding()),
        )
        .expect("mesh edge lists are consistent")
    }

    /// Builds a graph from explicit directed edges (center, neighbor).
    pub fn from_parts(
        vertex_count: usize,
        centers: Vec<usize>,
        neighbors: Vec<usize>,
        theta: Vec<f64>,
        transport: Vec<f64>,
        binding: Option<FrameBinding>,
    ) -> Result<Self, LayerError> {
        let e = centers.len();
        if neighbors.len() != e || theta.len() != e || transport.len() != e {
            return Err(LayerError::DimensionMismatch(format!(
                "edge arrays have lengths {e}, {}, {}, {}",
                neighbors.len(),
                theta.len(),
                transport.len()
            )));
        }
        if let Some(&bad) = centers.iter().chain(&neighbors).find(|&&v| v >= vertex_count) {
            return Err(LayerError::DimensionMismatch(format!("edge endpoint {bad} >= {vertex_count}")));
        }
        let mut degrees = vec![0usize; vertex_count];
        for &p in &centers {
            degrees[p] += 1;
        }
        let edge_norm = centers.iter().map(|&p| T::of(degrees[p] as f64)).collect();
        let ext_groups: Vec<usize> = (0..vertex_count).chain(centers.iter().copied()).collect();
        let ext_norm = ext_groups.iter().map(|&p| T::of(degrees[p] as f64 + 1.0)).collect();
        Ok(Graph {
            vertex_count,
            degrees,
            centers: centers.into(),
            neighbors: neighbors.into(),
            theta: theta.into_iter().map(T::of).collect(),
            transport: transport.into_iter().map(T::of).collect(),
            edge_norm,
            ext_groups: ext_groups.into(),
            ext_norm,
            binding,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertex_count
    }

    pub fn edge_count(&self) -> usize {
        self.centers.len()
    }

    pub fn degrees(&self) -> &[usize] {
        &self.degrees
    }

    pub fn binding(&self) -> Option<FrameBinding> {
        self.binding
    }

    pub(crate) fn centers(&self) -> Arc<[usize]> {
        self.centers.clone()
    }

    pub(crate) fn neighbors(&self) -> Arc<[usize]> {
        self.neighbors.clone()
    }

    pub(crate) fn theta(&self) -> Arc<[T]> {
        self.theta.clone()
    }

    pub(crate) fn transport(&self) -> Arc<[T]> {
        self.transport.clone()
    }

    pub(crate) fn edge_norm(&self) -> Arc<[T]> {
        self.edge_norm.clone()
    }

    pub(crate) fn ext_groups(&self) -> Arc<[usize]> {
        self.ext_groups.clone()
    }

    pub(crate) fn ext_norm(&self) -> Arc<[T]> {
        self.ext_norm.clone()
    }
}

/// A feature-to-feature layer.
pub trait Layer {
    fn in_type(&self) -> &FeatureType;
    fn out_type(&self) -> &FeatureType;
    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError>;
}

/// Checks type, frame binding and row count of a field against a graph.
pub fn check_input<T: Scalar>(ftype: &FeatureType, graph: &Graph<T>, input: &FeatureField) -> Result<(), LayerError> {
    if input.ftype() != ftype {
        return Err(LayerError::TypeMismatch {
            expected: ftype.to_string(),
            actual: input.ftype().to_string(),
        });
    }
    if let (Some(a), Some(b)) = (input.binding(), graph.binding()) {
        if a != b {
            return Err(LayerError::FrameBindingMismatch);
        }
    }
    if input.vertex_count() != graph.vertex_count() {
        return Err(LayerError::DimensionMismatch(format!(
            "{} feature rows for {} vertices",
            input.vertex_count(),
            graph.vertex_count()
        )));
    }
    Ok(())
}

/// Runs one layer on a feature field in double precision, checking the type
/// and that the field and graph refer to the same frames.
pub fn evaluate<L: Layer>(layer: &L, store: &ParamStore, graph: &Graph<f64>, input: &FeatureField) -> Result<FeatureField, LayerError> {
    check_input(layer.in_type(), graph, input)?;
    let mut tape = Tape::new();
    let params = store.bind(&mut tape, false);
    let x = tape.constant(Tensor::new(input.vertex_count(), input.ftype().dim(), input.data().to_vec()));
    let y = layer.forward(&mut tape, &params, graph, x)?;
    let out = tape.value(y).data.clone();
    FeatureField::new(layer.out_type().clone(), out, graph.binding())
        .map_err(|e| LayerError::DimensionMismatch(e.to_string()))
}
