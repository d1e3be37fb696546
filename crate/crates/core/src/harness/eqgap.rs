use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{sub_seed, RunConfig};
use super::data::{prepare, prepare_with_frames, Prepared};
use super::ReportHeader;
use crate::autodiff::Tensor;
use crate::error::HarnessError;
use crate::layers::{Model, ParamStore, Task};
use crate::mesh::{generate_mesh, jitter_vertices, load_mesh, Mesh, MeshFormat};
use crate::tangent::regauge;
use crate::transforms::{apply_ambient, permute_mesh, random_transform_suite, AmbientTransform, TransformSuite};

/// Mean squared logit difference per transformation family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FamilyGaps {
    pub gauge: f64,
    pub rot_tr_scale: f64,
    pub rotation: f64,
    pub translation: f64,
    pub scale: f64,
    pub perm: f64,
}

impl FamilyGaps {
    fn accumulate(&mut self, o: &FamilyGaps, w: f64) {
        self.gauge += w * o.gauge;
        self.rot_tr_scale += w * o.rot_tr_scale;
        self.rotation += w * o.rotation;
        self.translation += w * o.translation;
        self.scale += w * o.scale;
        self.perm += w * o.perm;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqGapReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub model: String,
    pub meshes: usize,
    pub gaps: FamilyGaps,
    pub per_mesh: Vec<FamilyGaps>,
}

pub fn logits_mse(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "logit shapes");
    a.data.iter().zip(&b.data).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.data.len() as f64
}

pub(crate) fn eqgap_meshes(cfg: &RunConfig) -> Result<Vec<Mesh>, HarnessError> {
    let g = &cfg.eqgap;
    if !g.files.is_empty() {
        return g
            .files
            .iter()
            .map(|p| {
                let f = MeshFormat::from_path(p).ok_or_else(|| HarnessError::Dataset(format!("{} is neither .off nor .obj", p.display())))?;
                Ok(load_mesh(p, f)?)
            })
            .collect();
    }
    let base = generate_mesh(&g.generator)?;
    Ok((0..g.meshes)
        .map(|i| jitter_vertices(&base, g.jitter, sub_seed(cfg.seed, "eqgap-mesh", i as u64)))
        .collect())
}

pub(crate) fn model_label(cfg: &RunConfig) -> String {
    let m = &cfg.model;
    let mut s = format!("{:?}/{:?}/{:?}", m.conv, m.features, m.bias).to_lowercase();
    if m.eman.self_contribution {
        s.push_str("/self");
    }
    if let Some(h) = &m.eman.heads {
        s.push_str(&format!("/heads{}", h.count));
    }
    s
}

/// The transformation families, with single-component ambient variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Family {
    Gauge,
    RotTrScale,
    Rotation,
    Translation,
    Scale,
    Perm,
}

impl Family {
    pub(crate) const ALL: [Family; 6] = [
        Family::Gauge,
        Family::RotTrScale,
        Family::Rotation,
        Family::Translation,
        Family::Scale,
        Family::Perm,
    ];
}

/// The transformed mesh, prepared from scratch (the gauge family rotates
/// the existing frames instead).
pub(crate) fn transformed(cfg: &RunConfig, base: &Prepared, suite: &TransformSuite, family: Family) -> Result<Prepared, HarnessError> {
    let (feat, reltan) = (cfg.model.features, &cfg.model.reltan);
    let mesh = &base.mesh;
    let t = &suite.ambient;
    let ambient = |t: AmbientTransform| prepare(apply_ambient(mesh, &t), feat, reltan);
    match family {
        Family::Gauge => {
            let frames = regauge(&base.frames, &suite.gauge)?;
            prepare_with_frames(mesh.clone(), frames, feat, reltan)
        }
        Family::RotTrScale => ambient(*t),
        Family::Rotation => ambient(t.rotation_only()),
        Family::Translation => ambient(t.translation_only()),
        Family::Scale => ambient(t.scale_only()),
        Family::Perm => prepare(permute_mesh(mesh, &suite.perm)?, feat, reltan),
    }
}

/// Logits of a transformed mesh, with vertex rows moved back to the original
/// order.
pub(crate) fn pulled_back_logits(
    cfg: &RunConfig,
    model: &Model,
    store: &ParamStore,
    base: &Prepared,
    suite: &TransformSuite,
    family: Family,
) -> Result<Tensor<f64>, HarnessError> {
    let p = transformed(cfg, base, suite, family)?;
    let mut l = model.predict(store, &p.graph, &p.features)?;
    if family == Family::Perm && cfg.model.task == Task::Segmentation {
        l.data = suite.perm.inverted().apply_rows(&l.data, l.cols);
    }
    Ok(l)
}

fn mesh_gaps(cfg: &RunConfig, model: &Model, store: &ParamStore, mesh: &Mesh, suite: &TransformSuite) -> Result<FamilyGaps, HarnessError> {
    let base = prepare(mesh.clone(), cfg.model.features, &cfg.model.reltan)?;
    let logits = model.predict(store, &base.graph, &base.features)?;
    let mut g = FamilyGaps::default();
    for f in Family::ALL {
        let v = logits_mse(&logits, &pulled_back_logits(cfg, model, store, &base, suite, f)?);
        *match f {
            Family::Gauge => &mut g.gauge,
            Family::RotTrScale => &mut g.rot_tr_scale,
            Family::Rotation => &mut g.rotation,
            Family::Translation => &mut g.translation,
            Family::Scale => &mut g.scale,
            Family::Perm => &mut g.perm,
        } = v;
    }
    Ok(g)
}

/// Gaps of one randomly initialized model over the configured mesh set.
pub fn eqgap(cfg: &RunConfig) -> Result<EqGapReport, HarnessError> {
    cfg.validate()?;
    let meshes = eqgap_meshes(cfg)?;
    if meshes.is_empty() {
        return Err(HarnessError::Dataset("eqgap needs at least one mesh".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "init", 0));
    let (model, store) = Model::new(&cfg.model, &mut rng)?;
    let mut per_mesh = Vec::with_capacity(meshes.len());
    let mut gaps = FamilyGaps::default();
    for (i, m) in meshes.iter().enumerate() {
        let suite = random_transform_suite(m.vertex_count(), &cfg.transforms, sub_seed(cfg.seed, "suite", i as u64));
        let g = mesh_gaps(cfg, &model, &store, m, &suite)?;
        gaps.accumulate(&g, 1.0 / meshes.len() as f64);
        per_mesh.push(g);
    }
    log::info!("eqgap {}: {:?}", model_label(cfg), gaps);
    Ok(EqGapReport {
        header: ReportHeader::new("eqgap", cfg),
        model: model_label(cfg),
        meshes: meshes.len(),
        gaps,
        per_mesh,
    })
}
