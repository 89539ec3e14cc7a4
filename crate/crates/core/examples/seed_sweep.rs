//! Trains one or more variants over a range of seeds on a generated funnel
//! and prints one tab-separated line per run.
//!
//! ```text
//! cargo run --release -p aitm-core --example seed_sweep -- \
//!     samples=50000 seeds=1..5 variants=aitm,single_task alphas=0.6
//! ```
//!
//! `verbose=1` also prints per-epoch validation metrics and per-task test
//! prediction summaries to stderr.

use std::time::Instant;

use aitm_core::data::{build_vocab, chronological_split, encode_rows, generate_funnel, FunnelGenConfig};
use aitm_core::train::{evaluate, rng_for, train, Stream, TrainConfig};
use aitm_core::{ArchitectureConfig, Model, ModelVariant};

fn list<T: std::str::FromStr>(s: &str) -> Vec<T>
where
    T::Err: std::fmt::Debug,
{
    s.split(',').map(|x| x.trim().parse().unwrap()).collect()
}

fn main() {
    let mut gen = FunnelGenConfig {
        samples: 50_000,
        ..FunnelGenConfig::default()
    };
    let mut arch_towers = vec![128, 64, 32];
    let mut dropout = vec![0.1, 0.3, 0.3];
    let mut train_cfg = TrainConfig::default();
    let mut seeds = 1..=5u64;
    let mut variants = vec![ModelVariant::Aitm, ModelVariant::SingleTask];
    let mut alphas = vec![0.6];
    let mut min_frequency = 10;
    let mut data_seed = 1;
    let mut verbose = false;

    for arg in std::env::args().skip(1) {
        let (k, v) = arg.split_once('=').expect("arguments are key=value");
        match k {
            "samples" => gen.samples = v.parse().unwrap(),
            "rates" => gen.base_rates = list(v),
            "cardinalities" => gen.cardinalities = list(v),
            "perturbation" => gen.perturbation = v.parse().unwrap(),
            "correlation" => gen.step_correlation = v.parse().unwrap(),
            "data_seed" => data_seed = v.parse().unwrap(),
            "towers" => arch_towers = list(v),
            "dropout" => dropout = list(v),
            "batch" => train_cfg.batch_size = v.parse().unwrap(),
            "lr" => train_cfg.adam.lr = v.parse().unwrap(),
            "epochs" => train_cfg.max_epochs = v.parse().unwrap(),
            "patience" => train_cfg.patience = v.parse().unwrap(),
            "min_frequency" => min_frequency = v.parse().unwrap(),
            "verbose" => verbose = v == "1",
            "alphas" => alphas = list(v),
            "variants" => variants = list(v),
            "seeds" => {
                let (a, b) = v.split_once("..").expect("seeds=a..b");
                seeds = a.parse().unwrap()..=b.parse().unwrap();
            }
            _ => panic!("unknown key {k}"),
        }
    }
    gen.tasks = gen.base_rates.len();
    gen.seed = data_seed;

    let funnel = generate_funnel(&gen).unwrap();
    let (tr, va, te) = chronological_split(funnel.rows, (0.7, 0.15, 0.15)).unwrap();
    let vocab = build_vocab(&tr, &funnel.field_names, min_frequency).unwrap();
    let (tr, va, te) = (
        encode_rows(&tr, &vocab).unwrap(),
        encode_rows(&va, &vocab).unwrap(),
        encode_rows(&te, &vocab).unwrap(),
    );
    let rates: Vec<String> = (0..gen.tasks)
        .map(|t| {
            let l = tr.task_labels(t);
            format!("{:.4}", l.iter().map(|&y| y as f64).sum::<f64>() / l.len() as f64)
        })
        .collect();
    println!("# train positive rates {} vocab {}", rates.join(" "), vocab.size());
    println!("variant\talpha\tseed\tepochs\tbest\tauc_final\tviolation\tseconds");

    let arch = ArchitectureConfig {
        ait_dim: *arch_towers.last().unwrap(),
        tower_dims: arch_towers,
        dropout,
        ..ArchitectureConfig::new(gen.tasks, vocab.fields())
    };
    for &variant in &variants {
        for &alpha in &alphas {
            for seed in seeds.clone() {
                let start = Instant::now();
                let cfg = TrainConfig {
                    alpha,
                    seed,
                    ..train_cfg.clone()
                };
                let model = Model::new(variant, arch.clone(), vocab.size(), &mut rng_for(seed, Stream::Init)).unwrap();
                let out = train(model, &tr, &va, &cfg, |e| {
                    if verbose {
                        eprintln!(
                            "  epoch {}\tce {:.5}\tlc {:.2e}\tval auc {:.4}\tval violation {:.4}",
                            e.epoch,
                            e.train.ce,
                            e.train.lc,
                            e.validation.final_auc().unwrap_or(f64::NAN),
                            e.validation.violation_rate.unwrap_or(f64::NAN)
                        );
                    }
                })
                .unwrap();
                let report = evaluate(&out.model, &te).unwrap();
                if verbose {
                    let preds = out.model.predict(&te.ids).unwrap().values;
                    let (rows, tasks) = (preds.rows(), preds.cols());
                    let v = preds.data();
                    for t in 0..tasks {
                        let mean = (0..rows).map(|r| v[r * tasks + t]).sum::<f64>() / rows as f64;
                        let mut ratio: Vec<f64> = if t == 0 {
                            Vec::new()
                        } else {
                            (0..rows).map(|r| v[r * tasks + t] / v[r * tasks + t - 1]).collect()
                        };
                        ratio.sort_by(f64::total_cmp);
                        let q = |p: f64| ratio.get((p * (ratio.len().max(1) - 1) as f64) as usize).copied().unwrap_or(f64::NAN);
                        eprintln!(
                            "  test task {} mean pred {:.5} ratio to previous q05 {:.4} q50 {:.4} q95 {:.4}",
                            t + 1,
                            mean,
                            q(0.05),
                            q(0.5),
                            q(0.95)
                        );
                    }
                }
                println!(
                    "{variant}\t{alpha}\t{seed}\t{}\t{}\t{:.4}\t{:.4}\t{:.1}",
                    out.epochs_run,
                    out.best_epoch,
                    report.final_auc().unwrap_or(f64::NAN),
                    report.violation_rate.unwrap_or(f64::NAN),
                    start.elapsed().as_secs_f64()
                );
            }
        }
    }
}
