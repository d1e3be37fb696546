use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use meshnet::autodiff::Tensor;
use meshnet::layers::{evaluate, Layer};
use meshnet::repr::{KernelKind, KernelLayout};
use meshnet::tangent::compute_transport;
use meshnet_bench::{grid, hidden_type, layers, random_input, reltan};
use std::hint::black_box;
use std::sync::Arc;

fn convolutions(c: &mut Criterion) {
    let t = hidden_type();
    let (store, gem, eman) = layers(&t);
    let mut group = c.benchmark_group("forward");
    group.sample_size(20);
    for (rows, cols) in [(10, 10), (20, 20), (20, 40)] {
        let b = grid(rows, cols);
        let x = random_input(&b, &t, 1);
        let edges = b.graph.edge_count();
        group.bench_with_input(BenchmarkId::new("gem", edges), &x, |bench, x| {
            bench.iter(|| evaluate(&gem, &store, &b.graph, black_box(x)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("eman", edges), &x, |bench, x| {
            bench.iter(|| evaluate(&eman, &store, &b.graph, black_box(x)).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let t = hidden_type();
    let (store, gem, eman) = layers(&t);
    let b = grid(20, 20);
    let x = random_input(&b, &t, 2);
    let mut group = c.benchmark_group("forward_backward");
    group.sample_size(20);
    for (name, layer) in [("gem", &gem), ("eman", &eman)] {
        group.bench_function(name, |bench| {
            bench.iter(|| {
                let mut tape = meshnet::autodiff::Tape::new();
                let bound = store.bind(&mut tape, true);
                let xv = tape.constant(Tensor::from_f64(x.vertex_count(), t.dim(), x.data()));
                let y = layer.forward(&mut tape, &bound, &b.graph, xv).unwrap();
                let loss = tape.sum(y);
                black_box(tape.backward(loss).unwrap());
            })
        });
    }
    group.finish();
}

fn kernel_apply(c: &mut Criterion) {
    let t = hidden_type();
    let b = grid(20, 20);
    let rows = b.graph.edge_count();
    let layout = Arc::new(KernelLayout::new(&t, &t, KernelKind::Neighbor));
    let coefs = vec![0.1; layout.coef_count()];
    let input = vec![0.5; rows * t.dim()];
    let thetas: Arc<[f64]> = (0..rows).map(|i| i as f64 * 0.37).collect();
    c.bench_function("kernel_apply_neigh", |bench| {
        bench.iter(|| {
            let mut tape = meshnet::autodiff::Tape::<f64>::new();
            let x = tape.constant(Tensor::new(rows, t.dim(), input.clone()));
            let k = tape.constant(Tensor::new(1, coefs.len(), coefs.clone()));
            black_box(tape.kernel_apply(x, k, layout.clone(), Some(thetas.clone())).unwrap());
        })
    });
}

fn geometry(c: &mut Criterion) {
    let b = grid(20, 20);
    c.bench_function("transport", |bench| bench.iter(|| compute_transport(black_box(&b.mesh), &b.frames).unwrap()));
    c.bench_function("reltan_features", |bench| bench.iter(|| reltan(black_box(&b))));
}

criterion_group!(benches, convolutions, backward, kernel_apply, geometry);
criterion_main!(benches);
