use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Bound, Graph, Layer, ParamId, ParamStore};
use crate::autodiff::{Tape, Var};
use crate::error::LayerError;
use crate::repr::{FeatureType, KernelKind, KernelLayout};
use crate::scalar::Scalar;

/// A kernel layout together with its coefficient parameter.
#[derive(Debug, Clone)]
pub struct KernelParam {
    pub layout: Arc<KernelLayout>,
    pub id: ParamId,
}

impl KernelParam {
    fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: String,
        in_type: &FeatureType,
        out_type: &FeatureType,
        kind: KernelKind,
    ) -> Self {
        let layout = KernelLayout::new(in_type, out_type, kind);
        let init = layout.init_coefficients(rng);
        let id = store.add(name, 1, layout.coef_count(), init);
        KernelParam {
            layout: Arc::new(layout),
            id,
        }
    }

    fn apply<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, x: Var, thetas: Option<Arc<[T]>>) -> Result<Var, LayerError> {
        Ok(tape.kernel_apply(x, params.var(self.id), self.layout.clone(), thetas)?)
    }
}

/// f'_p = K_self f_p + Σ_q K_neigh(θ_pq) ρ_in(g_{q→p}) f_q.
#[derive(Debug, Clone)]
pub struct GemConv {
    in_type: FeatureType,
    out_type: FeatureType,
    pub self_kernel: KernelParam,
    pub neigh_kernel: KernelParam,
}

impl GemConv {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, rng: &mut R, name: &str, in_type: &FeatureType, out_type: &FeatureType) -> Self {
        GemConv {
            in_type: in_type.clone(),
            out_type: out_type.clone(),
            self_kernel: KernelParam::new(store, rng, format!("{name}.self"), in_type, out_type, KernelKind::SelfInteraction),
            neigh_kernel: KernelParam::new(store, rng, format!("{name}.neigh"), in_type, out_type, KernelKind::Neighbor),
        }
    }
}

/// Neighbor features transported into the gauge of the center, one row per edge.
fn transported<T: Scalar>(tape: &mut Tape<T>, graph: &Graph<T>, x: Var, in_type: &FeatureType) -> Result<Var, LayerError> {
    let xs = tape.gather_rows(x, graph.neighbors())?;
    Ok(tape.rep_rotate(xs, in_type, graph.transport())?)
}

impl Layer for GemConv {
    fn in_type(&self) -> &FeatureType {
        &self.in_type
    }

    fn out_type(&self) -> &FeatureType {
        &self.out_type
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        let xt = transported(tape, graph, x, &self.in_type)?;
        let msg = self.neigh_kernel.apply(tape, params, xt, Some(graph.theta()))?;
        let agg = tape.scatter_add_rows(msg, graph.centers(), graph.vertex_count())?;
        let own = self.self_kernel.apply(tape, params, x, None)?;
        Ok(tape.add(own, agg)?)
    }
}

/// Number of heads and the type of each head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadConfig {
    pub count: usize,
    /// Type of every head; defaults to the output type split into `count`
    /// equal consecutive parts.
    #[serde(default)]
    pub head_type: Option<FeatureType>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmanOptions {
    /// Defaults to the output type.
    #[serde(default)]
    pub att_type: Option<FeatureType>,
    #[serde(default)]
    pub self_contribution: bool,
    #[serde(default)]
    pub heads: Option<HeadConfig>,
}

/// Per-head projections and the output mix.
#[derive(Debug, Clone)]
pub struct MultiHead {
    pub head_types: Vec<FeatureType>,
    pub query: Vec<KernelParam>,
    pub key: Vec<KernelParam>,
    pub value: Vec<KernelParam>,
    pub mix: KernelParam,
}

/// Attention-weighted equivariant message passing.
#[derive(Debug, Clone)]
pub struct EmanConv {
    in_type: FeatureType,
    out_type: FeatureType,
    att_type: FeatureType,
    pub query: KernelParam,
    pub key: KernelParam,
    pub value: KernelParam,
    pub key_self: Option<KernelParam>,
    pub value_self: Option<KernelParam>,
    pub heads: Option<MultiHead>,
}

impl EmanConv {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        in_type: &FeatureType,
        out_type: &FeatureType,
        opts: &EmanOptions,
    ) -> Result<Self, LayerError> {
        let att_type = opts.att_type.clone().unwrap_or_else(|| out_type.clone());
        let query = KernelParam::new(store, rng, format!("{name}.query"), in_type, &att_type, KernelKind::SelfInteraction);
        let key = KernelParam::new(store, rng, format!("{name}.key"), in_type, &att_type, KernelKind::Neighbor);
        let value = KernelParam::new(store, rng, format!("{name}.value"), in_type, out_type, KernelKind::Neighbor);
        let (key_self, value_self) = if opts.self_contribution {
            (
                Some(KernelParam::new(store, rng, format!("{name}.key_self"), in_type, &att_type, KernelKind::SelfInteraction)),
                Some(KernelParam::new(store, rng, format!("{name}.value_self"), in_type, out_type, KernelKind::SelfInteraction)),
            )
        } else {
            (None, None)
        };
        let heads = match &opts.heads {
            None => None,
            Some(h) => {
                if h.count == 0 {
                    return Err(LayerError::DimensionMismatch("head count must be positive".into()));
                }
                let head_types = match &h.head_type {
                    Some(t) => vec![t.clone(); h.count],
                    None => out_type.split_even(h.count).ok_or_else(|| {
                        LayerError::DimensionMismatch(format!("cannot split {out_type} into {} equal heads", h.count))
                    })?,
                };
                let d = head_types[0].dim();
                if d * h.count != out_type.dim() {
                    return Err(LayerError::DimensionMismatch(format!(
                        "{} heads of dimension {d} do not cover output dimension {}",
                        h.count,
                        out_type.dim()
                    )));
                }
                let mut q = Vec::new();
                let mut k = Vec::new();
                let mut v = Vec::new();
                for (i, t) in head_types.iter().enumerate() {
                    q.push(KernelParam::new(store, rng, format!("{name}.head{i}.query"), &att_type, t, KernelKind::SelfInteraction));
                    k.push(KernelParam::new(store, rng, format!("{name}.head{i}.key"), &att_type, t, KernelKind::SelfInteraction));
                    v.push(KernelParam::new(store, rng, format!("{name}.head{i}.value"), out_type, t, KernelKind::SelfInteraction));
                }
                let diag = head_types.iter().skip(1).fold(head_types[0].clone(), |a, t| a.concat(t));
                let mix = KernelParam::new(store, rng, format!("{name}.mix"), &diag, out_type, KernelKind::SelfInteraction);
                Some(MultiHead {
                    head_types,
                    query: q,
                    key: k,
                    value: v,
                    mix,
                })
            }
        };
        Ok(EmanConv {
            in_type: in_type.clone(),
            out_type: out_type.clone(),
            att_type,
            query,
            key,
            value,
            key_self,
            value_self,
            heads,
        })
    }

    pub fn att_type(&self) -> &FeatureType {
        &self.att_type
    }

    /// Attention weights α (already multiplied by the neighborhood size), one
    /// per row of `keys`, plus the aggregated values.
    #[allow(clippy::too_many_arguments)]
    fn attend<T: Scalar>(
        tape: &mut Tape<T>,
        graph: &Graph<T>,
        q: Var,
        keys: Var,
        values: Var,
        width: usize,
        with_self: bool,
    ) -> Result<Var, LayerError> {
        let (groups, norm) = if with_self {
            (graph.ext_groups(), graph.ext_norm())
        } else {
            (graph.centers(), graph.edge_norm())
        };
        let qe = tape.gather_rows(q, groups.clone())?;
        let scores = tape.row_dot(qe, keys)?;
        let scores = tape.scale(scores, T::one() / T::of(width as f64).sqrt());
        let alpha = tape.segment_softmax(scores, groups.clone(), graph.vertex_count())?;
        let alpha = tape.row_scale_const(alpha, norm)?;
        let msg = tape.row_scale(values, alpha)?;
        Ok(tape.scatter_add_rows(msg, groups, graph.vertex_count())?)
    }

    /// Attention coefficients α_pq (including the N_p factor) for inspection.
    pub fn attention<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        let xt = transported(tape, graph, x, &self.in_type)?;
        let q = self.query.apply(tape, params, x, None)?;
        let k = self.key.apply(tape, params, xt, Some(graph.theta()))?;
        let (k, groups, norm) = match &self.key_self {
            Some(ks) => {
                let kp = ks.apply(tape, params, x, None)?;
                (tape.concat_rows(&[kp, k])?, graph.ext_groups(), graph.ext_norm())
            }
            None => (k, graph.centers(), graph.edge_norm()),
        };
        let qe = tape.gather_rows(q, groups.clone())?;
        let scores = tape.row_dot(qe, k)?;
        let scores = tape.scale(scores, T::one() / T::of(self.att_type.dim() as f64).sqrt());
        let alpha = tape.segment_softmax(scores, groups, graph.vertex_count())?;
        Ok(tape.row_scale_const(alpha, norm)?)
    }
}

impl Layer for EmanConv {
    fn in_type(&self) -> &FeatureType {
        &self.in_type
    }

    fn out_type(&self) -> &FeatureType {
        &self.out_type
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        let with_self = self.key_self.is_some();
        if !with_self {
            if let Some(p) = graph.degrees().iter().position(|&d| d == 0) {
                return Err(LayerError::EmptyNeighborhood { vertex: p });
            }
        }
        let xt = transported(tape, graph, x, &self.in_type)?;
        let q = self.query.apply(tape, params, x, None)?;
        let mut k = self.key.apply(tape, params, xt, Some(graph.theta()))?;
        let mut v = self.value.apply(tape, params, xt, Some(graph.theta()))?;
        if let (Some(ks), Some(vs)) = (&self.key_self, &self.value_self) {
            let kp = ks.apply(tape, params, x, None)?;
            let vp = vs.apply(tape, params, x, None)?;
            k = tape.concat_rows(&[kp, k])?;
            v = tape.concat_rows(&[vp, v])?;
        }
        match &self.heads {
            None => Self::attend(tape, graph, q, k, v, self.att_type.dim(), with_self),
            Some(mh) => {
                let mut outs = Vec::with_capacity(mh.head_types.len());
                for i in 0..mh.head_types.len() {
                    let qi = mh.query[i].apply(tape, params, q, None)?;
                    let ki = mh.key[i].apply(tape, params, k, None)?;
                    let vi = mh.value[i].apply(tape, params, v, None)?;
                    outs.push(Self::attend(tape, graph, qi, ki, vi, mh.head_types[i].dim(), with_self)?);
                }
                let cat = tape.concat_cols(&outs)?;
                mh.mix.apply(tape, params, cat, None)
            }
        }
    }
}

/// Either convolution flavor.
#[allow(clippy::large_enum_variant)]
#[derive(Debug, Clone)]
pub enum ConvLayer {
    Gem(GemConv),
    Eman(EmanConv),
}

impl Layer for ConvLayer {
    fn in_type(&self) -> &FeatureType {
        match self {
            ConvLayer::Gem(l) => l.in_type(),
            ConvLayer::Eman(l) => l.in_type(),
        }
    }

    fn out_type(&self) -> &FeatureType {
        match self {
            ConvLayer::Gem(l) => l.out_type(),
            ConvLayer::Eman(l) => l.out_type(),
        }
    }

    fn forward<T: Scalar>(&self, tape: &mut Tape<T>, params: &Bound, graph: &Graph<T>, x: Var) -> Result<Var, LayerError> {
        match self {
            ConvLayer::Gem(l) => l.forward(tape, params, graph, x),
            ConvLayer::Eman(l) => l.forward(tape, params, graph, x),
        }
    }
}
