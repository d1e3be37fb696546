use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::config::{sub_seed, RunConfig};
use super::data::default_frames;
use super::ReportHeader;
use crate::autodiff::{Tape, Tensor};
use crate::error::HarnessError;
use crate::layers::{ConvLayer, EmanConv, GemConv, Graph, Layer, ParamStore};
use crate::mesh::{generate_mesh, MeshKind};
use crate::tangent::compute_transport;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerTiming {
    /// "gem", "eman", or "none" for the empty baseline.
    pub layer: String,
    pub vertices: usize,
    pub directed_edges: usize,
    pub repetitions: usize,
    pub median_seconds: f64,
    pub mean_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingReport {
    #[serde(flatten)]
    pub header: ReportHeader,
    pub feature_type: String,
    pub timings: Vec<LayerTiming>,
    /// EMAN over GEM on the smaller mesh.
    pub eman_over_gem: f64,
    /// Larger mesh over smaller mesh, per layer kind.
    pub gem_scaling: f64,
    pub eman_scaling: f64,
    pub edge_ratio: f64,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Forward plus backward of one layer; `None` times only the tape setup.
fn time_one(layer: Option<&ConvLayer>, store: &ParamStore, graph: &Graph<f64>, x: &Tensor<f64>, cfg: &RunConfig) -> Result<(f64, f64), HarnessError> {
    let run = || -> Result<(), HarnessError> {
        let mut tape = Tape::new();
        let params = store.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let y = match layer {
            Some(l) => l.forward(&mut tape, &params, graph, xv)?,
            None => xv,
        };
        let s = tape.sum(y);
        if layer.is_some() {
            tape.backward(s)?;
        }
        Ok(())
    };
    for _ in 0..cfg.timing.warmup {
        run()?;
    }
    let mut samples = Vec::with_capacity(cfg.timing.repetitions);
    for _ in 0..cfg.timing.repetitions {
        let t0 = Instant::now();
        run()?;
        samples.push(t0.elapsed().as_secs_f64());
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    Ok((median(&mut samples), mean))
}

/// Times a GEM and an EMAN layer of the configured type on two grid
/// patches, the second with twice as many columns.
pub fn time_layers(cfg: &RunConfig) -> Result<TimingReport, HarnessError> {
    cfg.validate()?;
    let t = &cfg.timing.feature_type;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, "timing", 0));
    let mut store = ParamStore::new();
    let gem = ConvLayer::Gem(GemConv::new(&mut store, &mut rng, "gem", t, t));
    let eman = ConvLayer::Eman(EmanConv::new(&mut store, &mut rng, "eman", t, t, &cfg.model.eman)?);
    let mut timings = Vec::new();
    let mut edges = Vec::new();
    for cols in [cfg.timing.grid_cols, 2 * cfg.timing.grid_cols] {
        let mesh = generate_mesh(&MeshKind::GridPatch {
            rows: cfg.timing.grid_rows,
            cols,
            height_noise: 0.05,
            seed: sub_seed(cfg.seed, "timing-mesh", cols as u64),
        })?;
        let frames = default_frames(&mesh)?;
        let transport = compute_transport(&mesh, &frames)?;
        let graph = Graph::new(&mesh, &transport);
        let x = Tensor::new(
            mesh.vertex_count(),
            t.dim(),
            (0..mesh.vertex_count() * t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        );
        edges.push(graph.edge_count() as f64);
        for (name, layer) in [("none", None), ("gem", Some(&gem)), ("eman", Some(&eman))] {
            let (median_seconds, mean_seconds) = time_one(layer, &store, &graph, &x, cfg)?;
            timings.push(LayerTiming {
                layer: name.to_string(),
                vertices: mesh.vertex_count(),
                directed_edges: graph.edge_count(),
                repetitions: cfg.timing.repetitions,
                median_seconds,
                mean_seconds,
            });
        }
    }
    let get = |name: &str, i: usize| timings.iter().filter(|x| x.layer == name).nth(i).unwrap().median_seconds;
    Ok(TimingReport {
        header: ReportHeader::new("time", cfg),
        feature_type: t.to_string(),
        eman_over_gem: get("eman", 0) / get("gem", 0),
        gem_scaling: get("gem", 1) / get("gem", 0),
        eman_scaling: get("eman", 1) / get("eman", 0),
        edge_ratio: edges[1] / edges[0],
        timings,
    })
}
