use qsf_core::data::checkpoint::Checkpoint;
use qsf_core::data::{synthetic, Corpus};
use qsf_core::train::{train_stage, RunConfig};

fn micro_run(stage: usize, seed: u64) -> RunConfig {
    let mut run = RunConfig::for_stage(stage);
    run.d = 16; run.layers = 2; run.d_ff = 32; run.seq_len = 32;
    run.steps = 120; run.batch = 4; run.warmup = 20;
    run.eval_interval = 60; run.eval_batches = 4; run.seed = seed;
    run
}

fn main() {
    let corpus = Corpus::from_bytes(synthetic::generate_corpus(300_000, 5)).unwrap();
    let s1 = train_stage(&micro_run(1, 11), &corpus, None).unwrap();
    let s2 = train_stage(&micro_run(2, 11), &corpus, Some(&s1.checkpoint)).unwrap();
    let s3 = train_stage(&micro_run(3, 11), &corpus, Some(&s2.checkpoint)).unwrap();
    let a = s3.checkpoint.to_bytes();
    let b = Checkpoint::from_bytes(&a).unwrap().to_bytes();
    println!("lens: {} vs {}", a.len(), b.len());
    for (i, (x, y)) in a.iter().zip(&b).enumerate() {
        if x != y {
            println!("first diff at byte {i}");
            let lo = i.saturating_sub(80);
            println!("a: {}", String::from_utf8_lossy(&a[lo..(i + 60).min(a.len())]));
            println!("b: {}", String::from_utf8_lossy(&b[lo..(i + 60).min(b.len())]));
            break;
        }
    }
}
