//! Acceptance suite: every release criterion as one test, each printing a
//! PASS/FAIL line (run with `--nocapture` to see them). The desk-scale
//! training pipeline behind criteria 9 and 10 runs once and is shared.

use num_complex::Complex64;
use qsf_core::autodiff::gradcheck::grad_check_all;
use qsf_core::data::checkpoint::Checkpoint;
use qsf_core::data::{synthetic, Corpus};
use qsf_core::linalg::{
    cvec_norm, cvec_sub, eigenvalues, lyapunov_covariance, mat_exp, phi1_apply, ComplexMatrix,
    ComplexVector, Mat, RealMatrix,
};
use qsf_core::model::{
    eval_logits, full_model_grad_check, hamiltonian_unitary, init_params, Stage, StageConfig,
};
use qsf_core::oracles::{affine_rk4, lyapunov_rk4, naive_linear_attention, posterior_quadrature};
use qsf_core::propagator::{
    affine_evolve, chain_propagators, evaluate_action, guided_propagate, TokenStepParams,
};
use qsf_core::spectral::layer_spectrum;
use qsf_core::train::{train_stage, RunConfig, TrainOutcome};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::OnceLock;

fn verdict(criterion: &str, pass: bool, detail: &str) {
    println!(
        "ACCEPTANCE {criterion}: {} — {detail}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "{criterion} failed: {detail}");
}

fn rand_real_cmat(rng: &mut ChaCha8Rng, n: usize) -> ComplexMatrix {
    Mat::from_fn(n, n, |_, _| Complex64::new(rng.gen_range(-1.0..1.0), 0.0))
}

fn rand_real_cvec(rng: &mut ChaCha8Rng, n: usize) -> ComplexVector {
    (0..n)
        .map(|_| Complex64::new(rng.gen_range(-1.0..1.0), 0.0))
        .collect()
}

// criterion 1: guided propagator against quadrature, d in 1..=3, 20 instances
#[test]
fn criterion_01_guided_propagator_theorem() {
    let mut worst_nu = 0.0f64;
    let mut worst_lambda = 0.0f64;
    for dim in 1..=3usize {
        for trial in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1_000 + dim as u64 * 100 + trial);
            let g = rand_real_cmat(&mut rng, dim);
            let beta = rand_real_cvec(&mut rng, dim);
            let psi0 = rand_real_cvec(&mut rng, dim);
            let wq = RealMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let wk = RealMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
            let u_feat = if trial % 2 == 0 {
                RealMatrix::identity(dim)
            } else {
                RealMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0))
            };
            let sigma = rng.gen_range(0.5..2.0);
            let gp = guided_propagate(&g, &beta, &psi0, 1.0, &wq, &wk, &u_feat, sigma, 0.8)
                .expect("well-conditioned instance");
            let nu_re: Vec<f64> = gp.nu.iter().map(|z| z.re).collect();
            let hw: Vec<f64> = (0..dim)
                .map(|i| 8.0 * gp.lambda.get(i, i).re.max(1e-12).sqrt())
                .collect();
            let psi0_re: Vec<f64> = psi0.iter().map(|z| z.re).collect();
            let quad = posterior_quadrature(
                &gp.mu_k.iter().map(|z| z.re).collect::<Vec<_>>(),
                &gp.sigma_t.re(),
                &wq.matvec(&psi0_re),
                &wk,
                &u_feat,
                sigma,
                &nu_re,
                &hw,
                81,
            );
            let nu_err = nu_re
                .iter()
                .zip(&quad.mean)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / cvec_norm(&gp.nu).max(1e-12);
            let lam_err =
                gp.lambda.re().sub(&quad.cov).norm_fro() / gp.lambda.norm_fro().max(1e-12);
            worst_nu = worst_nu.max(nu_err);
            worst_lambda = worst_lambda.max(lam_err);
        }
    }
    verdict(
        "criterion 1 (guided propagator vs quadrature)",
        worst_nu < 1e-4 && worst_lambda < 1e-3,
        &format!("worst relative error: nu {worst_nu:.3e} (tol 1e-4), lambda {worst_lambda:.3e} (tol 1e-3)"),
    );
}

// criterion 2: closed-form affine evolution vs RK4, plus exact singular case
#[test]
fn criterion_02_affine_evolution() {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(2_000);
    for trial in 0..50 {
        let dim = 1 + trial % 6;
        let g = rand_real_cmat(&mut rng, dim);
        let beta = rand_real_cvec(&mut rng, dim);
        let psi0 = rand_real_cvec(&mut rng, dim);
        let closed = affine_evolve(&g, &beta, &psi0, 1.0).unwrap();
        let stepped = affine_rk4(&g, &beta, &psi0, 1.0, 1e-4);
        worst = worst.max(cvec_norm(&cvec_sub(&closed, &stepped)));
    }
    // singular G: nilpotent 2x2 has the exact solution psi0 + T*(beta + G(psi0 T/2 + ...))
    // use G = 0 where the analytic answer is psi0 + T beta, demanded exact to 1e-12
    let g0 = ComplexMatrix::zeros(3, 3);
    let beta = rand_real_cvec(&mut rng, 3);
    let psi0 = rand_real_cvec(&mut rng, 3);
    let out = affine_evolve(&g0, &beta, &psi0, 1.7).unwrap();
    let singular_err: f64 = (0..3)
        .map(|i| (out[i] - (psi0[i] + beta[i] * 1.7)).norm())
        .fold(0.0, f64::max);
    verdict(
        "criterion 2 (affine evolution vs RK4)",
        worst < 1e-6 && singular_err < 1e-12,
        &format!("worst RK4 deviation {worst:.3e} (tol 1e-6), singular-G error {singular_err:.3e} (tol 1e-12)"),
    );
}

// criterion 3: block-exponential covariance vs ODE stepping, plus the scalar
// analytic value
#[test]
fn criterion_03_lyapunov_covariance() {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(3_000);
    for trial in 0..20 {
        let dim = 1 + trial % 4;
        let g = rand_real_cmat(&mut rng, dim);
        let sigma = lyapunov_covariance(&g, 0.8, 1.0).unwrap();
        let oracle = lyapunov_rk4(&g, 0.8, 1.0, 1e-4);
        worst = worst.max(sigma.sub(&oracle).max_abs());
    }
    let g1 = ComplexMatrix::from_vec(1, 1, vec![Complex64::new(1.0, 0.0)]).unwrap();
    let scalar = lyapunov_covariance(&g1, 1.0, 1.0).unwrap().get(0, 0).re;
    let scalar_err = (scalar - (2f64.exp() - 1.0) / 2.0).abs();
    verdict(
        "criterion 3 (covariance vs ODE oracle)",
        worst < 1e-6 && scalar_err < 1e-10,
        &format!("worst ODE deviation {worst:.3e} (tol 1e-6), scalar analytic error {scalar_err:.3e} (tol 1e-10)"),
    );
}

// criterion 4: product-sum identity against the recursion for N up to 32
#[test]
fn criterion_04_multitoken_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(4_000);
    let mut checked = 0usize;
    for trial in 0..100 {
        let dim = 1 + trial % 4;
        let n = 1 + (trial * 7) % 32;
        let psi0 = rand_real_cvec(&mut rng, dim);
        let steps: Vec<TokenStepParams> = (0..n)
            .map(|_| {
                TokenStepParams::from_generator(
                    rand_real_cmat(&mut rng, dim).scale(Complex64::new(0.5, 0.0)),
                    rand_real_cvec(&mut rng, dim),
                    1.0,
                )
                .unwrap()
            })
            .collect();
        // chain_propagators evaluates both routes and errors beyond 1e-10
        chain_propagators(&steps, &psi0).expect("closed form must equal the recursion");
        checked += 1;
    }
    verdict(
        "criterion 4 (multi-token closed form = recursion)",
        checked == 100,
        &format!("{checked}/100 random instances agreed to 1e-10 for N up to 32"),
    );
}

// criterion 5: the gradient suite — every op and the full micro model
#[test]
fn criterion_05_gradient_suite() {
    let mut worst_op = ("", 0.0f64);
    for seed in 0..20 {
        for (kind, err) in grad_check_all(seed, 1e-5) {
            if err > worst_op.1 {
                worst_op = (kind.name(), err);
            }
        }
    }
    let micro3 = full_model_grad_check(&StageConfig::micro(Stage::III), 5, 1e-5).unwrap();
    let micro4 = full_model_grad_check(&StageConfig::micro(Stage::IV), 5, 1e-5).unwrap();
    verdict(
        "criterion 5 (finite-difference gradient suite)",
        worst_op.1 < 1e-4 && micro3 < 1e-4 && micro4 < 1e-4,
        &format!(
            "worst op {} at {:.3e}, micro stage-3 model {micro3:.3e}, micro stage-4 model {micro4:.3e} (tol 1e-4)",
            worst_op.0, worst_op.1
        ),
    );
}

// criterion 6: causality across all four stages
#[test]
fn criterion_06_causality() {
    let mut trials_ok = 0usize;
    let total = 50;
    for trial in 0..total {
        let stage = [Stage::I, Stage::II, Stage::III, Stage::IV][trial % 4];
        let mut cfg = StageConfig::micro(stage);
        cfg.d = 16;
        cfg.seq_len = 24;
        cfg.vocab = 64;
        let store = init_params(&cfg, 600 + trial as u64).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6_000 + trial as u64);
        let n = cfg.seq_len;
        let tokens: Vec<usize> = (0..n).map(|_| rng.gen_range(0..cfg.vocab)).collect();
        let cut = rng.gen_range(1..n);
        let mut mutated = tokens.clone();
        for t in mutated.iter_mut().skip(cut) {
            *t = rng.gen_range(0..cfg.vocab);
        }
        let base = eval_logits(&store, &cfg, &tokens).unwrap();
        let changed = eval_logits(&store, &cfg, &mutated).unwrap();
        let mut exact = true;
        for t in 0..cut {
            for v in 0..cfg.vocab {
                exact &= base.get(t, v) == changed.get(t, v);
            }
        }
        if exact {
            trials_ok += 1;
        }
    }
    verdict(
        "criterion 6 (causality, all stages)",
        trials_ok == total,
        &format!("{trials_ok}/{total} trials left prefix logits bit-identical under suffix mutation"),
    );
}

// criterion 7: stage-IV operators stay orthogonal through desk training
#[test]
fn criterion_07_unitarity_through_training() {
    let audit = |store: &qsf_core::autodiff::ParamStore, layers: usize| -> (f64, f64) {
        let mut worst_gram = 0.0f64;
        let mut worst_mod = 0.0f64;
        for l in 0..layers {
            let w = store.value(&format!("layers.{l}.skew_w")).unwrap();
            let u = hamiltonian_unitary(w).unwrap();
            let gram_defect = u
                .transpose()
                .matmul(&u)
                .sub(&RealMatrix::identity(u.rows()))
                .norm_fro();
            worst_gram = worst_gram.max(gram_defect);
            for e in eigenvalues(&u.to_complex()).unwrap() {
                worst_mod = worst_mod.max((e.norm() - 1.0).abs());
            }
        }
        (worst_gram, worst_mod)
    };

    let mut run = RunConfig::for_stage(4);
    run.steps = 500;
    run.warmup = 125;
    run.eval_interval = 250;
    run.eval_batches = 5;
    run.seed = 7_700;
    run.validate().unwrap();
    let cfg = run.stage_config().unwrap();
    let init_store = init_params(&cfg, run.seed).unwrap();
    let (g0, m0) = audit(&init_store, cfg.layers);

    let corpus = Corpus::from_bytes(synthetic::generate_corpus(2_000_000, 77)).unwrap();
    let outcome = train_stage(&run, &corpus, None).unwrap();
    let (g1, m1) = audit(&outcome.checkpoint.params, cfg.layers);

    verdict(
        "criterion 7 (stage-IV unitarity at init and after 500 desk steps)",
        g0 < 1e-8 && g1 < 1e-8 && m0 < 1e-6 && m1 < 1e-6,
        &format!(
            "gram defect init {g0:.3e} / trained {g1:.3e} (tol 1e-8); modulus defect init {m0:.3e} / trained {m1:.3e} (tol 1e-6)"
        ),
    );
}

// criterion 8: prefix-sum linear attention equals the naive double loop
#[test]
fn criterion_08_linear_attention_equivalence() {
    let mut worst = 0.0f64;
    for trial in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(8_000 + trial);
        let n = 1 + (trial as usize * 13) % 64;
        let d = 4 + (trial as usize) % 8;
        let mk = |rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect()
        };
        let (qf, kf, v) = (mk(&mut rng), mk(&mut rng), mk(&mut rng));
        let naive = naive_linear_attention(&qf, &kf, &v);
        let mut tape = qsf_core::autodiff::Tape::new();
        let flat = |rows: &Vec<Vec<f64>>| {
            qsf_core::autodiff::Tensor::from_vec(n, d, rows.concat()).unwrap()
        };
        let (q, k, vv) = (
            tape.constant(flat(&qf)),
            tape.constant(flat(&kf)),
            tape.constant(flat(&v)),
        );
        let z = tape.prefix_linear_attention(q, k, vv).unwrap();
        for t in 0..n {
            for c in 0..d {
                worst = worst.max((tape.value(z).get(t, c) - naive[t][c]).abs());
            }
        }
    }
    verdict(
        "criterion 8 (prefix-sum attention = naive double loop)",
        worst < 1e-10,
        &format!("worst absolute deviation {worst:.3e} over 50 trials with N up to 64 (tol 1e-10)"),
    );
}

// ---------------------------------------------------------------------------
// criteria 9 and 10 share the desk-scale training pipelines
// ---------------------------------------------------------------------------

struct Pipeline {
    seed: u64,
    val: [f64; 4],
    ckpt3: Checkpoint,
    ckpt4: Checkpoint,
    gap_ii: f64,
    gap_iv: f64,
    ordered: bool,
}

fn desk_run(stage: usize, seed: u64) -> RunConfig {
    let mut run = RunConfig::for_stage(stage);
    run.seed = seed;
    run.eval_interval = 250;
    run.eval_batches = 25;
    run
}

fn run_pipeline(corpus: &Corpus, seed: u64) -> Pipeline {
    let go = |stage: usize, init: Option<&Checkpoint>| -> TrainOutcome {
        let run = desk_run(stage, seed);
        train_stage(&run, corpus, init).expect("desk training run")
    };
    let s1 = go(1, None);
    let s2 = go(2, Some(&s1.checkpoint));
    let s3 = go(3, Some(&s2.checkpoint));
    // stage 4 follows stage 3's initialization protocol: from the stage-2 checkpoint
    let s4 = go(4, Some(&s2.checkpoint));
    let val = [
        s1.final_val_loss,
        s2.final_val_loss,
        s3.final_val_loss,
        s4.final_val_loss,
    ];
    let gap_ii = val[1] - val[2];
    let gap_iv = val[3] - val[2];
    Pipeline {
        seed,
        val,
        ckpt3: s3.checkpoint,
        ckpt4: s4.checkpoint,
        gap_ii,
        gap_iv,
        ordered: gap_ii >= 0.05 && gap_iv >= 0.05,
    }
}

static PIPELINES: OnceLock<Vec<Pipeline>> = OnceLock::new();

fn desk_pipelines() -> &'static [Pipeline] {
    PIPELINES.get_or_init(|| {
        let corpus = Corpus::from_bytes(synthetic::generate_corpus(5_000_000, 7)).unwrap();
        [42u64, 43, 44]
            .iter()
            .map(|&seed| {
                let p = run_pipeline(&corpus, seed);
                println!(
                    "  desk pipeline seed {seed}: val losses I {:.4}, II {:.4}, III {:.4}, IV {:.4} (gaps {:+.4}/{:+.4})",
                    p.val[0], p.val[1], p.val[2], p.val[3], p.gap_ii, p.gap_iv
                );
                p
            })
            .collect()
    })
}

// criterion 9: ordinal reproduction — stage III beats II and IV by >= 0.05
// nats for at least 2 of 3 seeds
#[test]
fn criterion_09_ordinal_desk_reproduction() {
    let pipelines = desk_pipelines();
    let passing = pipelines.iter().filter(|p| p.ordered).count();
    let detail: Vec<String> = pipelines
        .iter()
        .map(|p| {
            format!(
                "seed {}: II {:.4} / III {:.4} / IV {:.4} ({})",
                p.seed,
                p.val[1],
                p.val[2],
                p.val[3],
                if p.ordered { "ordered" } else { "unordered" }
            )
        })
        .collect();
    verdict(
        "criterion 9 (ordinal desk reproduction, >=2 of 3 seeds)",
        passing >= 2,
        &format!("{passing}/3 seeds ordered with both gaps >= 0.05 nats; {}", detail.join("; ")),
    );
}

// criterion 10: dissipativity signature on the criterion-9 checkpoints
#[test]
fn criterion_10_dissipativity_signature() {
    let pipelines = desk_pipelines();
    let canonical = pipelines
        .iter()
        .find(|p| p.ordered)
        .unwrap_or(&pipelines[0]);
    let s3 = layer_spectrum(&canonical.ckpt3, 0.02).unwrap();
    let s4 = layer_spectrum(&canonical.ckpt4, 1e-4).unwrap();
    let pass = s3.counts.decay > 0
        && s3.counts.growth > 0
        && s4.counts.neutral == s4.counts.total()
        && s4.counts.decay == 0
        && s4.counts.growth == 0;
    verdict(
        "criterion 10 (dissipativity signature)",
        pass,
        &format!(
            "seed {}: stage III decay/neutral/growth = {}/{}/{} at tol 0.02; stage IV {}/{}/{} at tol 1e-4 (unitarity defect {:.2e})",
            canonical.seed,
            s3.counts.decay,
            s3.counts.neutral,
            s3.counts.growth,
            s4.counts.decay,
            s4.counts.neutral,
            s4.counts.growth,
            s4.unitarity_defect.unwrap_or(f64::NAN)
        ),
    );
}

// criterion 11: the classical path has strictly the smallest action among
// pinned-endpoint perturbations
#[test]
fn criterion_11_action_extremality() {
    let mut rng = ChaCha8Rng::seed_from_u64(11_000);
    let dim = 3;
    let g = rand_real_cmat(&mut rng, dim);
    let beta = rand_real_cvec(&mut rng, dim);
    let psi0 = rand_real_cvec(&mut rng, dim);
    let m = 600;
    let path: Vec<ComplexVector> = (0..m)
        .map(|k| affine_evolve(&g, &beta, &psi0, k as f64 / (m - 1) as f64).unwrap())
        .collect();
    let s_cl = evaluate_action(&path, &g, &beta, 0.0, 1.0).unwrap();
    let mut min_pert = f64::INFINITY;
    for _ in 0..50 {
        let dir = rand_real_cvec(&mut rng, dim);
        let scale = 0.1 / cvec_norm(&dir);
        let pert: Vec<ComplexVector> = path
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let tk = k as f64 / (m - 1) as f64;
                let bump = (std::f64::consts::PI * tk).sin() * scale;
                p.iter().zip(&dir).map(|(a, b)| a + b * bump).collect()
            })
            .collect();
        min_pert = min_pert.min(evaluate_action(&pert, &g, &beta, 0.0, 1.0).unwrap());
    }
    verdict(
        "criterion 11 (classical action extremality)",
        s_cl < min_pert,
        &format!("classical action {s_cl:.3e} vs smallest of 50 perturbations {min_pert:.3e}"),
    );
}

// supporting sanity for the pipeline scale: the exponential range guard and
// phi1 behave across the magnitudes the desk runs touch
#[test]
fn mat_exp_contract_spot_checks() {
    let a = RealMatrix::identity(4).scale(30.0);
    assert!(mat_exp(&a, 1.0).is_ok());
    assert!(mat_exp(&a, 2.0).is_err());
    let g = ComplexMatrix::zeros(2, 2);
    let r = phi1_apply(&g, 3.0, &[Complex64::new(1.0, 0.0); 2]).unwrap();
    assert!((r[0].re - 3.0).abs() < 1e-14);
}
