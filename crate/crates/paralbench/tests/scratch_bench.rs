//! Scratch timing harness (temporary).

use std::time::Instant;

use paralbench::corpus::synthetic::{ready_manifest, register, SyntheticCorpusSpec};
use paralbench::features::synth_adapters::make_synthetic_extractor_with_informative;
use paralbench::features::{ExtractionEngine, FeatureCache, LayerSpec};
use paralbench::metrics::MetricId;
use paralbench::protocols::{execute, RunContext, RunSpec};
use paralbench::registry::TaskRegistry;

#[test]
#[ignore]
fn time_deep_probe() {
    let dir = tempfile::tempdir().unwrap();
    let cache = FeatureCache::new(dir.path().join("cache"));
    let engine = ExtractionEngine::with_default_adapters();
    let mut registry = TaskRegistry::builtin();

    let mut corpus = SyntheticCorpusSpec::classification(
        "bench3",
        &["alpha", "beta", "gamma"],
        750,
        4,
    );
    corpus.duration_range = (0.11, 0.13);
    register(&mut registry, &corpus).unwrap();
    let manifest = ready_manifest(&corpus).unwrap();
    let counts = manifest.counts();
    eprintln!(
        "counts: train={} val={} test={}",
        counts.train, counts.validation, counts.test
    );

    let extractor = make_synthetic_extractor_with_informative(4, 16, 3, 1);
    let mut ctx = RunContext::new(&registry, &engine, &cache);
    ctx.add_manifest(manifest);
    ctx.add_extractor(extractor.clone());

    for (batch, epochs) in [(16usize, 30usize), (8, 16)] {
        let mut spec = RunSpec::within(
            "bench3-class",
            &extractor.extractor_id,
            LayerSpec::Index(1),
            4,
        );
        spec.train.max_epochs = epochs;
        spec.train.batch_size = batch;
        let started = Instant::now();
        let artifact = execute(&ctx, &spec).unwrap();
        let record = &artifact.records[0];
        let history = record
            .outcome
            .success()
            .map(|s| serde_json::to_string(&s.history).unwrap());
        eprintln!(
            "batch={batch} epochs={epochs}: {:.1}s WA={:?} history={:?}",
            started.elapsed().as_secs_f64(),
            record.metric(MetricId::Wa),
            history
        );
    }
}
