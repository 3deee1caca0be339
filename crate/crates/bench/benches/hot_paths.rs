use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion, Throughput};
use crowdqa::corpus::format_document;
use crowdqa::ingest::normalize_body;
use crowdqa::lm::{ModelConfig, Parameters};
use crowdqa::synth::pairs_with_intent;
use crowdqa::tokenizer::train_bpe;

fn corpus() -> String {
    pairs_with_intent(1, 200, 100).iter().map(|p| format_document(p).unwrap().text).collect()
}

fn tokenizer(c: &mut Criterion) {
    let text = corpus();
    let vocab = train_bpe(&text, 2048).unwrap();
    let mut g = c.benchmark_group("tokenizer");
    g.throughput(Throughput::Bytes(text.len() as u64));
    g.bench_function("encode", |b| b.iter(|| vocab.encode(black_box(&text))));
    let ids = vocab.encode(&text);
    g.bench_function("decode", |b| b.iter(|| vocab.decode(black_box(&ids)).unwrap()));
    g.finish();
}

fn model(c: &mut Criterion) {
    let config = ModelConfig { vocab_size: 2048, ..ModelConfig::tiny() };
    let params = Parameters::<f32>::init(config, 1);
    let tokens: Vec<u32> = (0..128).map(|i| (i * 37) % 2048).collect();
    let mut g = c.benchmark_group("tiny model");
    g.sample_size(20);
    g.bench_function("forward 128 tokens", |b| b.iter(|| params.forward(black_box(&tokens)).unwrap()));
    g.bench_function("prefill 64 then decode 64", |b| {
        b.iter(|| {
            let (mut state, _) = params.prefill(&tokens[..64]).unwrap();
            for &t in &tokens[64..] {
                black_box(params.decode_step(&mut state, t).unwrap());
            }
        })
    });
    g.finish();
}

fn html(c: &mut Criterion) {
    let body = "<p>I need to read a file. Any idea how?</p>\n<pre><code>List&lt;String&gt; lines = Files.readAllLines(p);\nfor (String l : lines) { System.out.println(l); }</code></pre>\n<ul><li>one &amp; two</li><li><a href=\"x\">link</a></li></ul><p>Thanks</p>".repeat(8);
    let mut g = c.benchmark_group("ingest");
    g.throughput(Throughput::Bytes(body.len() as u64));
    g.bench_function("normalize_body", |b| b.iter(|| normalize_body(black_box(&body))));
    g.finish();
}

criterion_group!(benches, tokenizer, model, html);
criterion_main!(benches);
