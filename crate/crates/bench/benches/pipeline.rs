use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use std::hint::black_box;
use std::sync::Arc;

use waml::config::RunConfig;
use waml::eval::{encode_all, evaluate};
use waml::features::ContentTable;
use waml::pipeline::{build_encoder, reduce, RawData};
use waml::synth::generate;
use waml::tensor::Tape;
use waml::train::{contrastive_loss, prepare};

fn setup() -> (RunConfig, waml::HeteroGraph, ContentTable) {
    let mut cfg = RunConfig::default();
    cfg.set("dim", "32").unwrap();
    let data = generate(&cfg.synth).unwrap();
    let raw = RawData {
        nodes: data.nodes.clone(),
        edges: data.edges.clone(),
        candidates: data.candidates.clone(),
    };
    let (graph, _) = reduce(&raw, &cfg).unwrap();
    let content = ContentTable::from_texts(&graph, &data.text_map(), 32, 0).unwrap();
    (cfg, graph, content)
}

fn benches(c: &mut Criterion) {
    let (cfg, graph, content) = setup();
    let data = generate(&cfg.synth).unwrap();
    let raw = RawData {
        nodes: data.nodes,
        edges: data.edges,
        candidates: data.candidates,
    };
    c.bench_function("reduce synthetic", |b| b.iter(|| reduce(black_box(&raw), &cfg).unwrap()));

    let (split, message) = prepare(&graph, &cfg.train).unwrap();
    let encoder = build_encoder(&message, &content, &cfg).unwrap();
    let params = encoder.init_params(0);
    c.bench_function("propagate 5 layers", |b| b.iter(|| encoder.propagate(black_box(&params)).unwrap()));
    c.bench_function("encode all nodes", |b| b.iter(|| encoder.encode(black_box(&params)).unwrap()));

    let hk = encoder.propagate(&params).unwrap();
    let batch: Vec<_> = split.train.iter().take(cfg.train.batch_size).copied().collect();
    let n = batch.len();
    let idx: Arc<[usize]> = batch.iter().map(|p| p.0).chain(batch.iter().map(|p| p.1)).collect();
    c.bench_function("train step forward+backward", |b| {
        b.iter_batched(
            Tape::new,
            |mut tape| {
                let bound = encoder.bind(&mut tape, &params, true);
                let x = tape.constant(hk.select_rows(&idx).unwrap());
                let e = encoder.head_var(&mut tape, &bound, x, Some(1)).unwrap();
                let es = tape.gather_rows(e, (0..n).collect()).unwrap();
                let ep = tape.gather_rows(e, (n..2 * n).collect()).unwrap();
                let loss = contrastive_loss(&mut tape, es, ep, 0.1, false).unwrap();
                tape.backward(loss).unwrap();
                tape
            },
            BatchSize::SmallInput,
        )
    });

    let table = encode_all(&encoder, &params).unwrap();
    c.bench_function("evaluate recall@100", |b| {
        b.iter(|| evaluate(black_box(&table), &graph, &split.test, &split.train, &cfg.eval).unwrap())
    });
}

criterion_group! {
    name = pipeline;
    config = Criterion::default().sample_size(10);
    targets = benches
}
criterion_main!(pipeline);
