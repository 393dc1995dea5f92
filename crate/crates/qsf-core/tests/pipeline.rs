//! Micro-scale end-to-end run of the progressive protocol: all four stages,
//! transfer between them, checkpoint round trips, spectrum extraction, and
//! generation — small enough to run in seconds.

use qsf_core::data::checkpoint::Checkpoint;
use qsf_core::data::{synthetic, Corpus};
use qsf_core::spectral::layer_spectrum;
use qsf_core::train::{generate, train_stage, RunConfig, TrainOutcome};

fn micro_run(stage: usize, seed: u64) -> RunConfig {
    let mut run = RunConfig::for_stage(stage);
    run.d = 16;
    run.layers = 2;
    run.d_ff = 32;
    run.seq_len = 32;
    run.steps = 120;
    run.batch = 4;
    run.warmup = 20;
    run.eval_interval = 60;
    run.eval_batches = 4;
    run.seed = seed;
    run
}

#[test]
fn progressive_micro_pipeline() {
    let corpus = Corpus::from_bytes(synthetic::generate_corpus(300_000, 5)).unwrap();
    let seed = 11;

    let s1 = train_stage(&micro_run(1, seed), &corpus, None).unwrap();
    let s2 = train_stage(&micro_run(2, seed), &corpus, Some(&s1.checkpoint)).unwrap();
    let s3 = train_stage(&micro_run(3, seed), &corpus, Some(&s2.checkpoint)).unwrap();
    let s4 = train_stage(&micro_run(4, seed), &corpus, Some(&s2.checkpoint)).unwrap();

    for (stage, out) in [(1, &s1), (2, &s2), (3, &s3), (4, &s4)] {
        assert!(
            out.final_val_loss.is_finite(),
            "stage {stage} produced a non-finite validation loss"
        );
        assert_eq!(out.checkpoint.meta.step, 120);
        // training moved the loss below the uniform baseline
        assert!(
            out.final_val_loss < (256f64).ln(),
            "stage {stage} did not learn at all: {}",
            out.final_val_loss
        );
    }

    // transfer carried the stage-1 embeddings into stage 2's init; after
    // joint fine-tuning they may move, but the shapes and names agree
    for name in ["tok_emb", "pos_emb", "out_proj"] {
        assert_eq!(
            s1.checkpoint.params.value(name).unwrap().rows(),
            s2.checkpoint.params.value(name).unwrap().rows()
        );
    }

    // stage 3 and 4 parameter budgets agree
    assert_eq!(
        s3.checkpoint.params.param_count(),
        s4.checkpoint.params.param_count()
    );

    // zeta traces exist exactly for the attention stages
    assert!(s1.checkpoint.meta.zeta.is_empty());
    assert!(s2.checkpoint.meta.zeta.is_empty());
    assert!(!s3.checkpoint.meta.zeta.is_empty());
    assert!(!s4.checkpoint.meta.zeta.is_empty());

    // spectra: stage 2/3 report over K, stage 4 is neutral by construction
    let spec3 = layer_spectrum(&s3.checkpoint, 0.02).unwrap();
    assert_eq!(spec3.counts.total(), 2 * 16);
    let spec4 = layer_spectrum(&s4.checkpoint, 1e-4).unwrap();
    assert_eq!(spec4.counts.neutral, spec4.counts.total());
    assert!(spec4.unitarity_defect.unwrap() < 1e-8);

    // checkpoints survive a disk round trip bit-exactly and still generate
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s3.qsfc");
    s3.checkpoint.save(&path).unwrap();
    let reloaded = Checkpoint::load(&path).unwrap();
    assert_eq!(reloaded.to_bytes(), s3.checkpoint.to_bytes());
    let a = generate(&reloaded, "Once upon a time", 24, 0.0, 3).unwrap();
    let b = generate(&s3.checkpoint, "Once upon a time", 24, 0.0, 3).unwrap();
    assert_eq!(a, b);
}

#[test]
fn validation_windows_never_touch_the_train_region() {
    // two disjoint alphabets in the two regions: train is all lowercase,
    // validation all digits; any crossover would surface immediately
    let mut bytes = vec![b'x'; 9_000];
    bytes.extend(vec![b'7'; 1_000]);
    let corpus = Corpus::from_bytes(bytes).unwrap();
    let mut run = RunConfig::for_stage(2);
    run.d = 8;
    run.layers = 1;
    run.d_ff = 16;
    run.seq_len = 16;
    run.steps = 30;
    run.batch = 2;
    run.warmup = 5;
    run.eval_interval = 15;
    run.eval_batches = 3;
    let TrainOutcome { metrics, .. } = train_stage(&run, &corpus, None).unwrap();
    assert!(metrics.iter().any(|m| m.split == "val"));
    // the val loss differs from train because the digit region is unseen;
    // more to the point, sampling helpers themselves stay in-region (checked
    // in the data module tests); here we just demand both splits logged
    assert!(metrics.iter().any(|m| m.split == "train"));
}
