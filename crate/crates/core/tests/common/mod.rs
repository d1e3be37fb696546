//! Shared fixtures and slow reference implementations.
#![allow(dead_code)]

use meshnet::autodiff::{Tape, Var};
use meshnet::features::FeatureField;
use meshnet::layers::{evaluate, ConvLayer, EmanConv, EmanOptions, GemConv, Bound, Graph, HeadConfig, KernelParam, Layer, ParamStore};
use meshnet::mesh::{face_geometry, generate_mesh, jitter_vertices, vertex_normals, MeshKind};
use meshnet::repr::{FeatureType, KernelKind};
use meshnet::tangent::{build_frames, compute_transport, regauge, FrameField, FrameStrategy, TransportData};
use meshnet::transforms::{
    apply_ambient, permute_features, permute_frames, permute_mesh, pushforward_features, pushforward_frames, AmbientTransform, Permutation,
};
use meshnet::Mesh;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub struct Scene {
    pub mesh: Mesh,
    pub normals: Vec<nalgebra::Vector3<f64>>,
    pub frames: FrameField,
    pub transport: TransportData,
}

pub fn scene_from(mesh: Mesh) -> Scene {
    let fg = face_geometry(&mesh).unwrap();
    let normals = vertex_normals(&mesh, &fg).unwrap();
    let frames = build_frames(&mesh, &normals, &FrameStrategy::FirstNeighbor).unwrap();
    let transport = compute_transport(&mesh, &frames).unwrap();
    Scene {
        mesh,
        normals,
        frames,
        transport,
    }
}

/// Jittered icosahedron (12 vertices).
pub fn icosahedron(seed: u64) -> Scene {
    let base = generate_mesh(&MeshKind::Icosphere { subdivisions: 0 }).unwrap();
    scene_from(jitter_vertices(&base, 0.05, seed))
}

/// Small bumpy patch with boundary vertices of mixed degree.
pub fn patch(seed: u64) -> Scene {
    scene_from(
        generate_mesh(&MeshKind::GridPatch {
            rows: 4,
            cols: 5,
            height_noise: 0.1,
            seed,
        })
        .unwrap(),
    )
}

pub fn ty(s: &str) -> FeatureType {
    s.parse().unwrap()
}

pub fn random_field(t: &FeatureType, frames: &FrameField, rng: &mut ChaCha8Rng) -> FeatureField {
    let data = (0..frames.len() * t.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    FeatureField::new(t.clone(), data, Some(frames.binding())).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// max |a - b| / max(|a|, |b|).
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let scale = a.iter().chain(b).fold(0.0f64, |m, x| m.max(x.abs()));
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    diff / scale.max(1e-300)
}

fn rot(a: f64) -> DMatrix<f64> {
    DMatrix::from_row_slice(2, 2, &[a.cos(), -a.sin(), a.sin(), a.cos()])
}

fn irrep(n: u32, g: f64) -> DMatrix<f64> {
    if n == 0 {
        DMatrix::identity(1, 1)
    } else {
        rot(n as f64 * g)
    }
}

/// Block-diagonal ρ(g) built one irrep at a time.
pub fn rho(t: &FeatureType, g: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(t.dim(), t.dim());
    let mut at = 0;
    for &n in t.orders() {
        let b = irrep(n, g);
        m.view_mut((at, at), (b.nrows(), b.ncols())).copy_from(&b);
        at += b.nrows();
    }
    m
}

/// Solutions of K(θ - g) = ρ_out(-g) K(θ) ρ_in(g) for one irrep pair.
fn pair_basis(n_in: u32, n_out: u32, kind: KernelKind, theta: f64) -> Vec<DMatrix<f64>> {
    let j = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    let f = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
    let one = || vec![DMatrix::identity(1, 1)];
    match kind {
        KernelKind::SelfInteraction => match (n_in, n_out) {
            (0, 0) => one(),
            (a, b) if a == b => vec![DMatrix::identity(2, 2), j],
            _ => vec![],
        },
        KernelKind::Neighbor => match (n_in, n_out) {
            (0, 0) => one(),
            (n, 0) => {
                let a = n as f64 * theta;
                vec![
                    DMatrix::from_row_slice(1, 2, &[a.cos(), a.sin()]),
                    DMatrix::from_row_slice(1, 2, &[a.sin(), -a.cos()]),
                ]
            }
            (0, m) => {
                let a = m as f64 * theta;
                vec![
                    DMatrix::from_column_slice(2, 1, &[a.cos(), a.sin()]),
                    DMatrix::from_column_slice(2, 1, &[a.sin(), -a.cos()]),
                ]
            }
            (n, m) => {
                let minus = rot((m as f64 - n as f64) * theta);
                let plus = rot((m + n) as f64 * theta);
                vec![minus.clone(), &minus * &j, &plus * &f, &plus * &f * &j]
            }
        },
    }
}

/// Dense kernel matrix from raw coefficients, walking components in order.
pub fn kernel_matrix(in_t: &FeatureType, out_t: &FeatureType, kind: KernelKind, coefs: &[f64], theta: f64) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(out_t.dim(), in_t.dim());
    let mut c = 0;
    let mut row = 0;
    for &n_out in out_t.orders() {
        let mut col = 0;
        let h = if n_out == 0 { 1 } else { 2 };
        for &n_in in in_t.orders() {
            let w = if n_in == 0 { 1 } else { 2 };
            for b in pair_basis(n_in, n_out, kind, theta) {
                let mut view = m.view_mut((row, col), (h, w));
                view += b * coefs[c];
                c += 1;
            }
            col += w;
        }
        row += h;
    }
    assert_eq!(c, coefs.len(), "coefficient count");
    m
}

pub fn param_matrix(k: &KernelParam, store: &ParamStore, theta: f64) -> DMatrix<f64> {
    kernel_matrix(k.layout.in_type(), k.layout.out_type(), k.layout.kind(), store.get(k.id), theta)
}

fn row(x: &FeatureField, p: usize) -> DVector<f64> {
    DVector::from_column_slice(x.row(p))
}

/// Per-vertex, per-edge evaluation of the convolution.
pub fn gem_oracle(s: &Scene, layer: &GemConv, store: &ParamStore, x: &FeatureField) -> Vec<f64> {
    let t = x.ftype();
    let mut out = Vec::new();
    for p in 0..s.mesh.vertex_count() {
        let mut y = param_matrix(&layer.self_kernel, store, 0.0) * row(x, p);
        for (i, &q) in s.mesh.neighbors(p).iter().enumerate() {
            let e = s.mesh.edge_offsets()[p] + i;
            let k = param_matrix(&layer.neigh_kernel, store, s.transport.theta()[e]);
            y += k * rho(t, s.transport.transport()[e]) * row(x, q);
        }
        out.extend(y.iter());
    }
    out
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|a| (a - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|a| a / z).collect()
}

/// N · Σ_j softmax(kᵀq / √d)_j v_j.
fn attend(q: &DVector<f64>, keys: &[DVector<f64>], values: &[DVector<f64>], d: usize) -> DVector<f64> {
    let scores: Vec<f64> = keys.iter().map(|k| k.dot(q) / (d as f64).sqrt()).collect();
    let alpha = softmax(&scores);
    let mut y = DVector::zeros(values[0].len());
    for (a, v) in alpha.iter().zip(values) {
        y += v * *a;
    }
    y * keys.len() as f64
}

/// Attention layer evaluated one vertex at a time, with the optional self
/// column and heads.
pub fn eman_oracle(s: &Scene, layer: &EmanConv, store: &ParamStore, x: &FeatureField) -> Vec<f64> {
    let t = x.ftype();
    let mut out = Vec::new();
    for p in 0..s.mesh.vertex_count() {
        let q = param_matrix(&layer.query, store, 0.0) * row(x, p);
        let mut keys = Vec::new();
        let mut values = Vec::new();
        if let (Some(ks), Some(vs)) = (&layer.key_self, &layer.value_self) {
            keys.push(param_matrix(ks, store, 0.0) * row(x, p));
            values.push(param_matrix(vs, store, 0.0) * row(x, p));
        }
        for (i, &nb) in s.mesh.neighbors(p).iter().enumerate() {
            let e = s.mesh.edge_offsets()[p] + i;
            let theta = s.transport.theta()[e];
            let moved = rho(t, s.transport.transport()[e]) * row(x, nb);
            keys.push(param_matrix(&layer.key, store, theta) * &moved);
            values.push(param_matrix(&layer.value, store, theta) * &moved);
        }
        let y = match &layer.heads {
            None => attend(&q, &keys, &values, layer.att_type().dim()),
            Some(mh) => {
                let mut cat = Vec::new();
                for h in 0..mh.head_types.len() {
                    let wq = param_matrix(&mh.query[h], store, 0.0);
                    let wk = param_matrix(&mh.key[h], store, 0.0);
                    let wv = param_matrix(&mh.value[h], store, 0.0);
                    let kh: Vec<_> = keys.iter().map(|k| &wk * k).collect();
                    let vh: Vec<_> = values.iter().map(|v| &wv * v).collect();
                    let head = attend(&(&wq * &q), &kh, &vh, mh.head_types[h].dim());
                    cat.extend(head.iter().copied());
                }
                param_matrix(&mh.mix, store, 0.0) * DVector::from_vec(cat)
            }
        };
        out.extend(y.iter());
    }
    out
}

/// Random gauge change: output on regauged input vs regauged output.
pub fn gauge_gap<L: Layer>(layer: &L, store: &ParamStore, s: &Scene, r: &mut ChaCha8Rng) -> f64 {
    let x = random_field(layer.in_type(), &s.frames, r);
    let angles: Vec<f64> = (0..s.mesh.vertex_count()).map(|_| r.random_range(-PI..PI)).collect();
    let frames = regauge(&s.frames, &angles).unwrap();
    let transport = compute_transport(&s.mesh, &frames).unwrap();
    let y = evaluate(layer, store, &Graph::new(&s.mesh, &s.transport), &x).unwrap();
    let moved = evaluate(layer, store, &Graph::new(&s.mesh, &transport), &x.regauge(&angles, &frames).unwrap()).unwrap();
    rel_err(y.regauge(&angles, &frames).unwrap().data(), moved.data())
}

/// Rotated, translated and scaled mesh with pushed-forward frames and inputs.
pub fn ambient_gap<L: Layer>(layer: &L, store: &ParamStore, s: &Scene, t: &AmbientTransform, r: &mut ChaCha8Rng) -> f64 {
    let x = random_field(layer.in_type(), &s.frames, r);
    let mesh = apply_ambient(&s.mesh, t);
    let frames = pushforward_frames(&s.frames, t.rotation()).unwrap();
    let transport = compute_transport(&mesh, &frames).unwrap();
    let y = evaluate(layer, store, &Graph::new(&s.mesh, &s.transport), &x).unwrap();
    let moved = evaluate(layer, store, &Graph::new(&mesh, &transport), &pushforward_features(&x, &frames)).unwrap();
    rel_err(pushforward_features(&y, &frames).data(), moved.data())
}

/// Relabeled vertices: permuted output vs output on the permuted mesh.
pub fn perm_gap<L: Layer>(layer: &L, store: &ParamStore, s: &Scene, r: &mut ChaCha8Rng) -> f64 {
    let x = random_field(layer.in_type(), &s.frames, r);
    let perm = Permutation::random(s.mesh.vertex_count(), r);
    let mesh = permute_mesh(&s.mesh, &perm).unwrap();
    let frames = permute_frames(&s.frames, &perm).unwrap();
    let transport = compute_transport(&mesh, &frames).unwrap();
    let y = evaluate(layer, store, &Graph::new(&s.mesh, &s.transport), &x).unwrap();
    let moved = evaluate(layer, store, &Graph::new(&mesh, &transport), &permute_features(&x, &perm, &frames)).unwrap();
    rel_err(permute_features(&y, &perm, &frames).data(), moved.data())
}

pub const LAYER_KINDS: [&str; 4] = ["gem", "eman", "eman+self", "multi-head"];

/// Convolution of kind `LAYER_KINDS[kind]` from ρ0+ρ1+ρ2 to 2(ρ0+ρ1+ρ2).
pub fn make_layer(kind: usize, store: &mut ParamStore, r: &mut ChaCha8Rng) -> ConvLayer {
    let (tin, tout) = (ty("rho0+rho1+rho2"), ty("2x(rho0+rho1+rho2)"));
    let opts = EmanOptions {
        att_type: None,
        self_contribution: kind == 2,
        heads: (kind == 3).then_some(HeadConfig { count: 2, head_type: None }),
    };
    match kind {
        0 => ConvLayer::Gem(GemConv::new(store, r, "gem", &tin, &tout)),
        _ => ConvLayer::Eman(EmanConv::new(store, r, LAYER_KINDS[kind], &tin, &tout, &opts).unwrap()),
    }
}

/// Jittered icosphere with one subdivision.
pub fn sphere(seed: u64, jitter: f64) -> Scene {
    let base = generate_mesh(&MeshKind::Icosphere { subdivisions: 1 }).unwrap();
    scene_from(jitter_vertices(&base, jitter, seed))
}

/// Worst relative error between tape gradients and central differences
/// (step 1e-5) of a random linear functional of `build`'s output, over an
/// evenly spread subset of at least `min_params` parameters.
pub fn finite_difference<F>(store: &ParamStore, min_params: usize, seed: u64, build: F) -> (f64, usize)
where
    F: Fn(&mut Tape<f64>, &Bound) -> Var,
{
    let run = |st: &ParamStore, grad: bool| {
        let mut tape = Tape::new();
        let bound = st.bind(&mut tape, true);
        let y = build(&mut tape, &bound);
        let n = tape.value(y).data.len();
        let mut r = rng(seed);
        let w = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = tape.dot_const(y, w).unwrap();
        let value = tape.value(loss).item();
        let g = grad.then(|| bound.gradients(&tape.backward(loss).unwrap(), st));
        (value, g)
    };
    let grad = run(store, true).1.unwrap();
    let picks = min_params.max(1).min(store.len());
    let stride = (store.len() / picks).max(1);
    let (mut worst, mut checked) = (0.0f64, 0);
    for k in (0..store.len()).step_by(stride) {
        let at = |d: f64| {
            let mut st = store.clone();
            st.data_mut()[k] += d;
            run(&st, false).0
        };
        let h = 1e-5;
        let num = (at(h) - at(-h)) / (2.0 * h);
        worst = worst.max((grad[k] - num).abs() / grad[k].abs().max(num.abs()).max(1e-6));
        checked += 1;
    }
    (worst, checked)
}
