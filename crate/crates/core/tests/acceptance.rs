//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. The training criteria share one warm start
//! and one pair of runs.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::Instant;

use common::{finite_difference, max_rel_err, random_case, tiny_trainer_config};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vigor_core::analysis::*;
use vigor_core::model::*;
use vigor_core::reward::*;
use vigor_core::runner::{run_from_manifest, run_train_from, Provenance, RunLayout, RunSummary};
use vigor_core::tasks::{make_dataset, Split, TaskKind};
use vigor_core::trainer::*;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn gradient_exactness() -> Outcome {
    let mut worst = 0.0f64;
    let cases = 24;
    for seed in 0..cases {
        let (params, prompt, completion) = random_case(seed);
        let grad = grad_mean_nll(&params, &prompt, &completion, GradScope::Full).unwrap();
        let fd = finite_difference(&params, 1e-5, |p| {
            mean_nll(p, &prompt, &completion).unwrap()
        });
        worst = worst.max(max_rel_err(&grad, &fd));
    }
    check(
        worst < 1e-4,
        format!("{cases} models, max relative error {worst:.2e}"),
    )
}

fn sqrt_neutralization() -> Outcome {
    let cfg = ModelConfig::default();
    let params = init_params::<f64>(&cfg, 1).unwrap();
    let ds = make_dataset(TaskKind::ModAdd, 2000, 2, 1, Split::Eval).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let samples: Vec<(usize, f64)> = ds
        .instances
        .iter()
        .map(|inst| {
            let c = sample_completion(&params, &inst.prompt_tokens, 24, 1.0, &mut rng).unwrap();
            let g = grad_mean_nll(&params, &inst.prompt_tokens, &c, GradScope::Full).unwrap();
            (c.len(), l2_norm(&g))
        })
        .collect();
    let table = length_bin_table(&samples, 4).unwrap();
    let raw = relative_spread(&table.iter().map(|r| r.mean_grad_norm).collect::<Vec<_>>());
    let corrected = relative_spread(&table.iter().map(|r| r.mean_corrected).collect::<Vec<_>>());
    check(
        raw >= 0.3 && corrected <= raw / 2.0,
        format!(
            "{} completions, raw spread {raw:.3}, corrected spread {corrected:.3}",
            samples.len()
        ),
    )
}

fn rank_algebra() -> Outcome {
    let signals = [-3.0, 0.5, -1.0, 2.0, 7.0, -9.0, 1.0, 4.0];
    let rewards = rank_normalize(&signals).unwrap();
    let grid: Vec<f64> = [-5.0, -1.0, -3.0, 3.0, 7.0, -7.0, 1.0, 5.0]
        .iter()
        .map(|k| k / 7.0)
        .collect();
    if rewards != grid {
        return Err(format!("grid mismatch {rewards:?}"));
    }
    let tied = rank_normalize(&[1.0, 2.0, 2.0, 3.0]).unwrap();
    if tied != vec![-1.0, 0.0, 0.0, 1.0] {
        return Err(format!("tie case {tied:?}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst_mean, mut worst_std, mut worst_inv) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..500 {
        let g = rng.gen_range(2..16);
        let r: Vec<f64> = (0..g).map(|_| rng.gen_range(-5.0..5.0)).collect();
        let a = group_advantages(&r).unwrap();
        let n = g as f64;
        let mean = a.iter().sum::<f64>() / n;
        let std = (a.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_std = worst_std.max((std - 1.0).abs());
        let (scale, shift) = (rng.gen_range(0.1..10.0), rng.gen_range(-10.0..10.0));
        let moved: Vec<f64> = r.iter().map(|x| scale * x + shift).collect();
        let b = group_advantages(&moved).unwrap();
        worst_inv = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(worst_inv, f64::max);
        let warped: Vec<f64> = r.iter().map(|x| x.exp() * 3.0 - 1.0).collect();
        if rank_normalize(&warped).unwrap() != rank_normalize(&r).unwrap() {
            return Err("rank changed under an increasing transform".into());
        }
    }
    check(
        worst_mean <= 1e-12 && worst_std <= 1e-9 && worst_inv <= 1e-9,
        format!("mean {worst_mean:.1e}, std error {worst_std:.1e}, affine drift {worst_inv:.1e}"),
    )
}

fn objective_identity() -> Outcome {
    if clipped_surrogate(1.5, 1.0, 0.2) != 1.2 || clipped_surrogate(0.5, -1.0, 0.2) != -0.8 {
        return Err("clip examples".into());
    }
    let mut worst_fd = 0.0f64;
    let mut zero = true;
    for seed in 0..4 {
        let mut cfg = tiny_trainer_config();
        cfg.seed = seed;
        cfg.kl_coef = 0.0;
        let (train, _) = build_datasets(&cfg).unwrap();
        let params = init_params::<f64>(&cfg.model, seed).unwrap();
        let prompts: Vec<_> = train.instances.iter().take(3).enumerate().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut batch = collect_rollouts(&params, &params, &prompts, &cfg, &mut rng).unwrap();
        assign_advantages(&mut batch, RewardVariant::Vigor).unwrap();
        let (stats, _) = grpo_objective(&params, &batch, &cfg).unwrap();
        zero &= stats.objective == 0.0;
        cfg.kl_coef = 0.05;
        let mut moved = params.clone();
        for v in &mut moved.values {
            *v += rng.gen_range(-0.05..0.05);
        }
        let (_, grad) = grpo_objective(&moved, &batch, &cfg).unwrap();
        let fd = finite_difference(&moved, 1e-5, |p| {
            grpo_objective_value(p, &batch, &cfg).unwrap()
        });
        worst_fd = worst_fd.max(max_rel_err(&grad, &fd));
    }
    check(
        zero && worst_fd < 1e-4,
        format!("J == 0 at old policy: {zero}, gradient error {worst_fd:.2e}"),
    )
}

fn stop_gradient() -> Outcome {
    let cfg = tiny_trainer_config();
    let (train, _) = build_datasets(&cfg).unwrap();
    let params = init_params::<f64>(&cfg.model, 3).unwrap();
    let before: Vec<u64> = params.values.iter().map(|v| v.to_bits()).collect();
    let prompts: Vec<_> = train.instances.iter().take(4).enumerate().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut batch = collect_rollouts(&params, &params, &prompts, &cfg, &mut rng).unwrap();
    for v in RewardVariant::ALL {
        assign_advantages(&mut batch, v).unwrap();
    }
    let after: Vec<u64> = params.values.iter().map(|v| v.to_bits()).collect();
    let mut kl_ok = true;
    for _ in 0..10_000 {
        let (a, b) = (rng.gen_range(-30.0..0.0), rng.gen_range(-30.0..0.0));
        kl_ok &= kl_estimate(a, b) >= 0.0 && kl_estimate(a, a) == 0.0;
    }
    check(
        before == after && kl_ok,
        format!(
            "parameters unchanged: {}, KL estimator ok: {kl_ok}",
            before == after
        ),
    )
}

fn analysis_oracles() -> Outcome {
    let mut failures = Vec::new();
    if ngram_repetition_rate(&["a", "b", "a", "b", "a", "b"], 3) != 0.5 {
        failures.push("abab 3-grams");
    }
    if ngram_repetition_rate(&["x", "x", "x", "x"], 3) != 0.5 {
        failures.push("xxxx 3-grams");
    }
    if ngram_repetition_rate(&[1, 2, 3, 4], 3) != 0.0 {
        failures.push("distinct 3-grams");
    }
    if spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]) != Some(1.0)
        || spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]) != Some(-1.0)
    {
        failures.push("spearman extremes");
    }
    if (spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0]).unwrap() - 0.8).abs() > 1e-12 {
        failures.push("spearman 0.8");
    }
    let entry = |rank: usize, correct: bool| DumpEntry {
        tokens: vec![],
        length: 1,
        grad_norm: 1.0,
        signal: -1.0,
        reward: -(rank as f64),
        advantage: 0.0,
        rank_position: rank,
        correct,
    };
    let group = GroupDump {
        prompt_index: 0,
        aborted: false,
        entries: (1..=8).map(|k| entry(k, k == 1)).collect(),
    };
    if top_fraction_accuracy(&[group], 0.25).unwrap() != 0.5 {
        failures.push("top-2 of 8");
    }
    let exact: Vec<(usize, f64)> = [1usize, 4, 9, 16, 25, 36, 49, 64]
        .iter()
        .map(|&t| (t, 0.5 / (t as f64).sqrt()))
        .collect();
    let table = length_bin_table(&exact, 4).unwrap();
    if table.iter().any(|r| r.mean_corrected != 0.5) {
        failures.push("exact 1/sqrt(T) family");
    }
    let pair = length_bin_table(&[(2, 10.0), (2, 20.0), (3, 1.0), (3, 1.0)], 2).unwrap();
    if pair[0].mean_grad_norm != 15.0 {
        failures.push("bin mean");
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            "all oracles match".into()
        } else {
            failures.join(", ")
        },
    )
}

struct Experiment {
    root: PathBuf,
    config: TrainerConfig,
    vigor: RunSummary,
    no_sqrt: RunSummary,
}

impl Experiment {
    fn run(root: &Path) -> Experiment {
        let config = TrainerConfig {
            checkpoint_every: 100,
            ..Default::default()
        };
        let (train, eval) = build_datasets(&config).unwrap();
        let start = Instant::now();
        let initial = initial_policy::<f64>(&config, &train).unwrap();
        println!("  warm start {:.0?}", start.elapsed());
        let vigor = run_train_from(
            &config,
            initial.clone(),
            &train,
            &eval,
            &root.join("vigor"),
            Provenance::default(),
        )
        .unwrap();
        println!("  vigor run done {:.0?}", start.elapsed());
        let mut ablation = config.clone();
        ablation.reward_variant = RewardVariant::VigorNoSqrt;
        let no_sqrt = run_train_from(
            &ablation,
            initial,
            &train,
            &eval,
            &root.join("vigor_no_sqrt"),
            Provenance::default(),
        )
        .unwrap();
        println!("  vigor_no_sqrt run done {:.0?}", start.elapsed());
        Experiment {
            root: root.to_path_buf(),
            config,
            vigor,
            no_sqrt,
        }
    }
}

fn learning_without_verifier(exp: &Experiment) -> Outcome {
    let gain = exp.vigor.final_accuracy - exp.vigor.initial_accuracy;
    check(
        gain >= 0.10,
        format!(
            "eval accuracy {:.3} -> {:.3} ({:+.1} points)",
            exp.vigor.initial_accuracy,
            exp.vigor.final_accuracy,
            100.0 * gain
        ),
    )
}

fn length_hacking(exp: &Experiment) -> Outcome {
    let (base, hacked) = (exp.vigor.final_mean_length, exp.no_sqrt.final_mean_length);
    let saturated = hacked >= 0.95 * exp.config.max_response_len as f64;
    check(
        hacked >= 2.0 * base || saturated,
        format!(
            "mean length {base:.2} with correction, {hacked:.2} without (cap {})",
            exp.config.max_response_len
        ),
    )
}

fn rank_monotonicity(exp: &Experiment) -> Outcome {
    let layout = RunLayout::new(exp.root.join("vigor"));
    let params: vigor_core::Params = read_checkpoint(&layout.checkpoint(100)).unwrap();
    let (_, eval) = build_datasets(&exp.config).unwrap();
    let groups = rank_probe(&params, &eval.instances, &exp.config, 17).unwrap();
    let table = rank_accuracy_table(&groups);
    let (pos, acc): (Vec<f64>, Vec<f64>) = table.iter().map(|&(p, a)| (p as f64, a)).unzip();
    let rho = spearman(&pos, &acc).unwrap_or(0.0);
    let shown: Vec<String> = acc.iter().map(|a| format!("{:.0}", 100.0 * a)).collect();
    check(
        rho <= -0.7,
        format!(
            "{} prompts, accuracy by rank [{}]%, spearman {rho:.3}",
            groups.len(),
            shown.join(" ")
        ),
    )
}

fn reproducibility(exp: &Experiment) -> Outcome {
    let first = RunLayout::new(exp.root.join("vigor"));
    let second = RunLayout::new(exp.root.join("replay"));
    run_from_manifest(&first.manifest(), &second.root).unwrap();
    let same_log =
        fs::read(first.metrics_log()).unwrap() == fs::read(second.metrics_log()).unwrap();
    let same_ckpt =
        fs::read(first.final_checkpoint()).unwrap() == fs::read(second.final_checkpoint()).unwrap();
    check(
        same_log && same_ckpt,
        format!("identical metrics log: {same_log}, identical final checkpoint: {same_ckpt}"),
    )
}

fn report(n: usize, name: &str, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let (tag, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    println!(
        "criterion {n:>2} {tag} {name}: {detail} [{:.1?}]",
        start.elapsed()
    );
    outcome.is_ok()
}

fn main() {
    // `cargo test -- --list` and filtered runs should not trigger the long experiments.
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    if args
        .iter()
        .any(|a| !a.starts_with('-') && !"acceptance".contains(a.as_str()))
    {
        return;
    }
    let mut ok = true;
    ok &= report(1, "gradient exactness", gradient_exactness);
    ok &= report(2, "sqrt(T) neutralization", sqrt_neutralization);
    ok &= report(3, "rank and advantage algebra", rank_algebra);
    ok &= report(4, "objective identity and clip rule", objective_identity);
    ok &= report(5, "stop-gradient", stop_gradient);
    ok &= report(9, "analysis oracles", analysis_oracles);

    let dir = tempfile::tempdir().unwrap();
    println!("running the shared training experiment");
    let exp = catch_unwind(AssertUnwindSafe(|| Experiment::run(dir.path()))).ok();
    match &exp {
        Some(exp) => {
            ok &= report(6, "learning without a verifier", || {
                learning_without_verifier(exp)
            });
            ok &= report(7, "length hacking without the correction", || {
                length_hacking(exp)
            });
            ok &= report(8, "rank-accuracy monotonicity", || rank_monotonicity(exp));
            ok &= report(10, "reproducibility", || reproducibility(exp));
        }
        None => {
            for (n, name) in [
                (6, "learning without a verifier"),
                (7, "length hacking"),
                (8, "rank-accuracy monotonicity"),
                (10, "reproducibility"),
            ] {
                println!("criterion {n:>2} FAIL {name}: training experiment failed");
            }
            ok = false;
        }
    }
    if !ok {
        std::process::exit(1);
    }
}
