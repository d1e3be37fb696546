mod common;

use common::*;
use meshnet::features::{compute_features, FeatureFamily, RelTanConfig};
use meshnet::harness::{default_frames, logits_mse};
use meshnet::layers::{Graph, Model, ModelConfig, ParamStore, Task};
use meshnet::tangent::compute_transport;
use meshnet::transforms::{
    apply_ambient, permute_frames, permute_mesh, pushforward_frames, random_ambient, Permutation, TransformRanges,
};
use proptest::prelude::*;

fn small_model(task: Task, conv: &str, seed: u64) -> (Model, ParamStore) {
    let text = format!(
        "conv = \"{conv}\"\ntargets = 5\nhidden_type = \"2x(rho0+rho1+rho2)\"\nresidual_blocks = 1\ndense_width = 16\ntask = \"{}\"",
        if task == Task::Segmentation { "segmentation" } else { "classification" }
    );
    let cfg: ModelConfig = toml::from_str(&text).unwrap();
    Model::new(&cfg, &mut rng(seed)).unwrap()
}

fn logits(model: &Model, store: &ParamStore, s: &Scene) -> meshnet::autodiff::Tensor<f64> {
    let x = compute_features(&s.mesh, &s.frames, FeatureFamily::Reltan, &RelTanConfig::default()).unwrap();
    model.predict(store, &Graph::new(&s.mesh, &s.transport), &x).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn every_layer_commutes_with_gauge_changes(kind in 0usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let s = sphere(seed, 0.1);
        let mut store = ParamStore::new();
        let layer = make_layer(kind, &mut store, &mut r);
        prop_assert!(gauge_gap(&layer, &store, &s, &mut r) <= 1e-10);
    }

    #[test]
    fn every_layer_commutes_with_ambient_maps(kind in 0usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let s = sphere(seed, 0.1);
        let mut store = ParamStore::new();
        let layer = make_layer(kind, &mut store, &mut r);
        let t = random_ambient(&TransformRanges::default(), &mut r);
        prop_assert!(ambient_gap(&layer, &store, &s, &t, &mut r) <= 1e-10);
    }

    #[test]
    fn every_layer_commutes_with_relabeling(kind in 0usize..4, seed in 0u64..1000) {
        let mut r = rng(seed);
        let s = patch(seed);
        let mut store = ParamStore::new();
        let layer = make_layer(kind, &mut store, &mut r);
        prop_assert!(perm_gap(&layer, &store, &s, &mut r) <= 1e-10);
    }

    #[test]
    fn classifier_is_invariant_end_to_end(seed in 0u64..1000, conv in prop::sample::select(vec!["gem", "eman"])) {
        let (model, store) = small_model(Task::Classification, conv, seed);
        let s = sphere(seed, 0.1);
        let base = logits(&model, &store, &s);

        let t = random_ambient(&TransformRanges::default(), &mut rng(seed + 1));
        let mesh = apply_ambient(&s.mesh, &t);
        let frames = pushforward_frames(&s.frames, t.rotation()).unwrap();
        let transport = compute_transport(&mesh, &frames).unwrap();
        let moved = logits(&model, &store, &Scene { normals: Vec::new(), mesh, frames, transport });
        prop_assert!(logits_mse(&base, &moved) <= 1e-18);

        // fresh frames on a relabeled mesh
        let perm = Permutation::random(s.mesh.vertex_count(), &mut rng(seed + 2));
        let mesh = permute_mesh(&s.mesh, &perm).unwrap();
        let frames = default_frames(&mesh).unwrap();
        let transport = compute_transport(&mesh, &frames).unwrap();
        let relabeled = logits(&model, &store, &Scene { normals: Vec::new(), mesh, frames, transport });
        prop_assert!(logits_mse(&base, &relabeled) <= 1e-18);
    }

    #[test]
    fn segmenter_permutes_with_vertices(seed in 0u64..1000) {
        let (model, store) = small_model(Task::Segmentation, "eman", seed);
        let s = sphere(seed, 0.1);
        let base = logits(&model, &store, &s);
        let perm = Permutation::random(s.mesh.vertex_count(), &mut rng(seed + 3));
        let mesh = permute_mesh(&s.mesh, &perm).unwrap();
        let frames = permute_frames(&s.frames, &perm).unwrap();
        let transport = compute_transport(&mesh, &frames).unwrap();
        let moved = logits(&model, &store, &Scene { normals: Vec::new(), mesh, frames, transport });
        let expect = perm.apply_rows(&base.data, base.shape().1);
        prop_assert!(rel_err(&expect, &moved.data) <= 1e-10);
    }
}
