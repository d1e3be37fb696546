//! Fixtures shared by the benchmarks.

use meshnet::features::{compute_features, FeatureField, FeatureFamily, RelTanConfig};
use meshnet::harness::default_frames;
use meshnet::layers::{ConvLayer, EmanConv, EmanOptions, GemConv, Graph, ParamStore};
use meshnet::mesh::{generate_mesh, MeshKind};
use meshnet::repr::FeatureType;
use meshnet::tangent::{compute_transport, FrameField};
use meshnet::Mesh;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Bench {
    pub mesh: Mesh,
    pub frames: FrameField,
    pub graph: Graph<f64>,
}

/// Bumpy grid patch with `rows × cols` vertices.
pub fn grid(rows: usize, cols: usize) -> Bench {
    let mesh = generate_mesh(&MeshKind::GridPatch {
        rows,
        cols,
        height_noise: 0.05,
        seed: 1,
    })
    .unwrap();
    let frames = default_frames(&mesh).unwrap();
    let transport = compute_transport(&mesh, &frames).unwrap();
    let graph = Graph::new(&mesh, &transport);
    Bench { mesh, frames, graph }
}

pub fn hidden_type() -> FeatureType {
    "16x(rho0+rho1+rho2)".parse().unwrap()
}

pub fn random_input(b: &Bench, t: &FeatureType, seed: u64) -> FeatureField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..b.mesh.vertex_count() * t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureField::new(t.clone(), data, Some(b.frames.binding())).unwrap()
}

pub fn reltan(b: &Bench) -> FeatureField {
    compute_features(&b.mesh, &b.frames, FeatureFamily::Reltan, &RelTanConfig::default()).unwrap()
}

pub fn layers(t: &FeatureType) -> (ParamStore, ConvLayer, ConvLayer) {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let gem = ConvLayer::Gem(GemConv::new(&mut store, &mut rng, "gem", t, t));
    let eman = ConvLayer::Eman(EmanConv::new(&mut store, &mut rng, "eman", t, t, &EmanOptions::default()).unwrap());
    (store, gem, eman)
}
