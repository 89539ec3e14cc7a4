//! End-to-end acceptance checks. Everything runs inside one test so the
//! timed experiments do not compete with other tests for cores. Each
//! criterion prints one PASS/FAIL line; the test fails if any line fails.
//!
//! ```text
//! cargo test --release -p aitm-core --test acceptance -- --nocapture
//! ```

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use aitm_core::artifact::{ModelArtifact, TrainingMetadata};
use aitm_core::data::{
    build_vocab, chronological_split, downsample_negatives, encode_rows, generate_funnel, labels_monotone,
    FunnelDataset, FunnelGenConfig, RawRow,
};
use aitm_core::loss::{calibrator_loss, cross_entropy_loss, joint_loss};
use aitm_core::metrics::{auc, MetricReport};
use aitm_core::model::{ait_combine, AitVars, DenseVars};
use aitm_core::nn::Mode;
use aitm_core::ranking::{rank_banners, select_objective, BankProfile, Maturity, RankCandidate};
use aitm_core::train::{evaluate, rng_for, train, Stream, TrainConfig};
use aitm_core::{ArchitectureConfig, Error, Model, ModelVariant, ParamStore, Tape, Tensor};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn fail(e: Error) -> String {
    format!("unexpected error: {e}")
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random ids for `rows` samples with `cards[f]` tokens in field `f`.
fn random_ids(r: &mut ChaCha8Rng, rows: usize, cards: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(rows * cards.len());
    for _ in 0..rows {
        let mut offset = 0;
        for &c in cards {
            out.push(offset + r.gen_range(0..c));
            offset += c;
        }
    }
    out
}

/// Row-major funnel labels: each step passes with probability `pass` if
/// its predecessor did.
fn random_labels(r: &mut ChaCha8Rng, rows: usize, tasks: usize, pass: f64) -> Vec<u8> {
    let mut out = Vec::with_capacity(rows * tasks);
    for _ in 0..rows {
        let mut alive = true;
        for _ in 0..tasks {
            alive = alive && r.gen_bool(pass);
            out.push(alive as u8);
        }
    }
    out
}

fn tiny_arch(tasks: usize, fields: usize) -> ArchitectureConfig {
    ArchitectureConfig {
        embedding_dim: 2,
        tower_dims: vec![8, 4],
        dropout: vec![0.1, 0.1],
        ait_dim: 4,
        ..ArchitectureConfig::new(tasks, fields)
    }
}

// ---------------------------------------------------------------- 1

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;
/// Denominator floor for the relative error. Central differences of an
/// O(1) loss carry about 1e-11 of rounding noise at this step, so smaller
/// gradients are compared on an absolute 1e-10 scale instead.
const FD_FLOOR: f64 = 1e-6;

/// Training-mode loss with a dropout stream replayed from `seed`, and the
/// ReLU sign pattern of that evaluation.
fn training_loss(model: &Model, ids: &[usize], labels: &[u8], seed: u64) -> Result<(f64, Vec<bool>, Tape, aitm_core::Var), Error> {
    let mut tape = Tape::new();
    let trace = model.forward(&mut tape, ids, Mode::Training, &mut rng_for(seed, Stream::Dropout))?;
    let (loss, _) = joint_loss(&mut tape, &trace.predictions, labels, 0.6)?;
    let value = tape.value(loss).item()?;
    let pattern = tape.relu_pattern();
    Ok((value, pattern, tape, loss))
}

fn gradient_suite() -> Outcome {
    let cards = [3, 4, 2, 5];
    let (mut checked, mut skipped, mut worst) = (0usize, 0usize, 0f64);
    for seed in 1..=5u64 {
        let mut r = rng(seed);
        let vocab: usize = cards.iter().sum();
        let mut model = Model::new(ModelVariant::Aitm, tiny_arch(3, cards.len()), vocab, &mut r).map_err(fail)?;
        // Zero biases put many ReLU inputs exactly on the kink; check at a
        // generic point instead.
        let biases: Vec<_> = model.params().ids().filter(|&id| model.params().name(id).ends_with(".bias")).collect();
        for id in biases {
            for b in model.params_mut().get_mut(id).data_mut() {
                *b = r.gen_range(-0.2..0.2);
            }
        }
        let ids = random_ids(&mut r, 8, &cards);
        let labels = random_labels(&mut r, 8, 3, 0.6);
        let (_, base_pattern, tape, loss) = training_loss(&model, &ids, &labels, seed).map_err(fail)?;
        let grads = tape.backward(loss, model.params()).map_err(fail)?;

        let ids_list: Vec<_> = model.params().ids().collect();
        for id in ids_list {
            let name = model.params().name(id).to_string();
            for i in 0..model.params().get(id).len() {
                let orig = model.params().get(id).data()[i];
                model.params_mut().get_mut(id).data_mut()[i] = orig + FD_STEP;
                let (up, up_pattern, _, _) = training_loss(&model, &ids, &labels, seed).map_err(fail)?;
                model.params_mut().get_mut(id).data_mut()[i] = orig - FD_STEP;
                let (down, down_pattern, _, _) = training_loss(&model, &ids, &labels, seed).map_err(fail)?;
                model.params_mut().get_mut(id).data_mut()[i] = orig;
                if up_pattern != base_pattern || down_pattern != base_pattern {
                    skipped += 1;
                    continue;
                }
                let numeric = (up - down) / (2.0 * FD_STEP);
                let analytic = grads.get(id).data()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR);
                check(rel < FD_TOLERANCE, || {
                    format!("seed {seed} {name}[{i}]: analytic {analytic:e} numeric {numeric:e} rel {rel:e}")
                })?;
                worst = worst.max(rel);
                checked += 1;
            }
        }
    }
    check(skipped * 100 <= checked, || {
        format!("{skipped} of {} coordinates sit next to a ReLU kink", checked + skipped)
    })?;
    Ok(format!("{checked} coordinates, max rel err {worst:.2e}, {skipped} kink-adjacent skipped"))
}

// ---------------------------------------------------------------- 2

fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.gen_range(-scale..scale)).collect()).unwrap()
}

fn attention_suite() -> Outcome {
    let mut r = rng(2);
    let (mut draws, mut equal_draws) = (0, 0);
    for round in 0.. {
        if draws >= 10_000 {
            break;
        }
        let k = r.gen_range(1..=6);
        let rows = 4;
        let scale = r.gen_range(0.1..2.0);
        let mut store = ParamStore::new();
        let mut dense = |store: &mut ParamStore, name: &str| {
            (
                store.add(format!("{name}.w"), random_tensor(&mut r, &[k, k], scale)),
                store.add(format!("{name}.b"), random_tensor(&mut r, &[k], scale)),
            )
        };
        let layers = [dense(&mut store, "value"), dense(&mut store, "query"), dense(&mut store, "key")];
        let p = random_tensor(&mut r, &[rows, k], 2.0);
        // Half the draws feed the same vector twice.
        let same = round % 2 == 0;
        let q = if same { p.clone() } else { random_tensor(&mut r, &[rows, k], 2.0) };

        let mut tape = Tape::new();
        let v: Vec<DenseVars> = layers
            .iter()
            .map(|&(w, b)| DenseVars {
                weight: tape.param(&store, w),
                bias: tape.param(&store, b),
            })
            .collect();
        let ait = AitVars {
            value: v[0],
            query: v[1],
            key: v[2],
        };
        let (pv, qv) = (tape.constant(p), tape.constant(q));
        let (_, wp, wq) = ait_combine(&mut tape, pv, qv, &ait).map_err(fail)?;
        for (&a, &b) in tape.value(wp).data().iter().zip(tape.value(wq).data()) {
            let s = a + b;
            check((1.0 - 1e-12..=1.0 + 1e-12).contains(&s), || format!("w_p + w_q = {s:e}"))?;
            check(a > 0.0 && a < 1.0 && b > 0.0 && b < 1.0, || format!("weights ({a}, {b}) outside (0, 1)"))?;
            if same {
                check((a - 0.5).abs() < 1e-12, || format!("equal inputs gave w_p = {a}"))?;
                equal_draws += 1;
            }
            draws += 1;
        }
    }
    Ok(format!("{draws} draws, {equal_draws} with p == q"))
}

// ---------------------------------------------------------------- 3

fn first_state_suite() -> Outcome {
    let cards = [5, 7, 3];
    let vocab: usize = cards.iter().sum();
    let mut r = rng(3);
    let mut inputs = 0;
    for m in 0..10 {
        let tasks = 2 + m % 3;
        let arch = ArchitectureConfig {
            dropout: vec![0.0, 0.0],
            ..tiny_arch(tasks, cards.len())
        };
        let model = Model::new(ModelVariant::Aitm, arch, vocab, &mut r).map_err(fail)?;
        let ids = random_ids(&mut r, 100, &cards);
        let mut tape = Tape::new();
        let trace = model.forward(&mut tape, &ids, Mode::Inference, &mut r).map_err(fail)?;
        let z = tape.value(trace.states[0]).data();
        let q = tape.value(trace.towers[0]).data();
        check(z.len() == q.len(), || "z_1 and q_1 differ in shape".into())?;
        for (a, b) in z.iter().zip(q) {
            check(a.to_bits() == b.to_bits(), || format!("z_1 = {a:e} but q_1 = {b:e}"))?;
        }
        inputs += ids.len() / cards.len();
    }
    Ok(format!("{inputs} inputs bit-identical"))
}

// ---------------------------------------------------------------- 4

fn ce_oracle(preds: &[f64], labels: &[u8], rows: usize, tasks: usize) -> f64 {
    let mut total = 0.0;
    for t in 0..tasks {
        for n in 0..rows {
            let p = preds[n * tasks + t];
            total += if labels[n * tasks + t] == 1 { -p.ln() } else { -(1.0 - p).ln() };
        }
    }
    total / rows as f64
}

fn lc_oracle(preds: &[f64], rows: usize, tasks: usize) -> f64 {
    let mut total = 0.0;
    for t in 1..tasks {
        for n in 0..rows {
            let gap = preds[n * tasks + t] - preds[n * tasks + t - 1];
            if gap > 0.0 {
                total += gap;
            }
        }
    }
    total / rows as f64
}

fn auc_oracle(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut wins, mut pairs) = (0.0, 0.0);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

fn loss_oracle_suite() -> Outcome {
    let mut r = rng(4);
    let mut worst = 0f64;
    for _ in 0..1000 {
        let rows = r.gen_range(1..=64);
        let tasks = r.gen_range(1..=5);
        let preds: Vec<f64> = (0..rows * tasks).map(|_| r.gen_range(1e-6..1.0 - 1e-6)).collect();
        let labels = random_labels(&mut r, rows, tasks, 0.5);
        let p = Tensor::matrix(rows, tasks, preds.clone()).unwrap();
        let y = Tensor::matrix(rows, tasks, labels.iter().map(|&v| v as f64).collect()).unwrap();

        let ce = cross_entropy_loss(&p, &y).map_err(fail)?;
        let lc = calibrator_loss(&p);
        let (ce_o, lc_o) = (ce_oracle(&preds, &labels, rows, tasks), lc_oracle(&preds, rows, tasks));

        // The recorded objective must agree with both.
        let mut tape = Tape::new();
        let cols: Vec<_> = (0..tasks)
            .map(|t| tape.constant(Tensor::matrix(rows, 1, (0..rows).map(|n| preds[n * tasks + t]).collect()).unwrap()))
            .collect();
        let (_, parts) = joint_loss(&mut tape, &cols, &labels, 0.6).map_err(fail)?;

        for (got, want, what) in [
            (ce, ce_o, "cross entropy"),
            (lc, lc_o, "calibrator"),
            (parts.ce, ce_o, "recorded cross entropy"),
            (parts.lc, lc_o, "recorded calibrator"),
            (parts.total, ce_o + 0.6 * lc_o, "recorded total"),
        ] {
            let err = (got - want).abs();
            check(err <= 1e-12, || format!("{what}: {got:e} vs oracle {want:e}"))?;
            worst = worst.max(err);
        }
    }

    let mut auc_cases = 0;
    while auc_cases < 300 {
        let n = r.gen_range(2..=1000);
        let levels = [2usize, 5, 50, 0][auc_cases % 4];
        let scores: Vec<f64> = (0..n)
            .map(|_| if levels == 0 { r.gen() } else { r.gen_range(0..levels) as f64 / levels as f64 })
            .collect();
        let share = r.gen_range(0.02..0.98);
        let labels: Vec<u8> = (0..n).map(|_| r.gen_bool(share) as u8).collect();
        let both = labels.contains(&0) && labels.contains(&1);
        match auc(&scores, &labels) {
            Ok(a) if both => {
                let o = auc_oracle(&scores, &labels);
                check((a - o).abs() <= 1e-12, || format!("auc {a} vs pairwise {o} at n = {n}"))?;
                worst = worst.max((a - o).abs());
                auc_cases += 1;
            }
            Err(Error::UndefinedMetric(_)) if !both => {}
            other => return Err(format!("auc on n = {n}, both classes {both}: {other:?}")),
        }
    }
    Ok(format!("1000 loss batches, {auc_cases} auc cases, max abs err {worst:.1e}"))
}

// ---------------------------------------------------------------- 5, 6

/// Generated funnel whose later steps pass often, so neighbouring end-to-end
/// probabilities are close and an unconstrained model orders them wrongly
/// now and then. Final-task positives come out near 1%.
fn experiment_funnel() -> FunnelGenConfig {
    FunnelGenConfig {
        samples: 50_000,
        tasks: 4,
        base_rates: EXPERIMENT_RATES.to_vec(),
        ..FunnelGenConfig::default()
    }
}

const EXPERIMENT_RATES: [f64; 4] = [0.3, 0.02, 0.8, 0.85];

struct Experiment {
    train: FunnelDataset,
    val: FunnelDataset,
    test: FunnelDataset,
    fields: usize,
    vocab: usize,
}

impl Experiment {
    fn new() -> Result<Self, Error> {
        let funnel = generate_funnel(&experiment_funnel())?;
        let (tr, va, te) = chronological_split(funnel.rows, (0.7, 0.15, 0.15))?;
        let vocab = build_vocab(&tr, &funnel.field_names, 10)?;
        Ok(Experiment {
            train: encode_rows(&tr, &vocab)?,
            val: encode_rows(&va, &vocab)?,
            test: encode_rows(&te, &vocab)?,
            fields: vocab.fields(),
            vocab: vocab.size(),
        })
    }

    fn final_share(&self) -> f64 {
        let y = self.train.task_labels(3);
        y.iter().map(|&v| v as f64).sum::<f64>() / y.len() as f64
    }

    fn run(&self, variant: ModelVariant, alpha: f64, seed: u64) -> Result<MetricReport, Error> {
        let arch = ArchitectureConfig::new(4, self.fields);
        let model = Model::new(variant, arch, self.vocab, &mut rng_for(seed, Stream::Init))?;
        let config = TrainConfig {
            alpha,
            seed,
            ..TrainConfig::default()
        };
        let out = train(model, &self.train, &self.val, &config, |_| {})?;
        evaluate(&out.model, &self.test)
    }
}

fn calibrator_efficacy(exp: &Experiment, calibrated: &mut Vec<MetricReport>) -> Outcome {
    let share = exp.final_share();
    check((0.005..=0.02).contains(&share), || format!("final-task positive share {share:.4} is not near 1%"))?;
    let mut wins = 0;
    let mut pairs = Vec::new();
    for seed in 1..=5 {
        let with = exp.run(ModelVariant::Aitm, 0.6, seed).map_err(fail)?;
        let without = exp.run(ModelVariant::Aitm, 0.0, seed).map_err(fail)?;
        let (a, b) = (with.violation_rate.unwrap(), without.violation_rate.unwrap());
        if a < b {
            wins += 1;
        }
        pairs.push(format!("{a:.4}/{b:.4}"));
        calibrated.push(with);
    }
    let detail = format!(
        "violation alpha 0.6 / 0 per seed: {}; {wins} of 5 lower; final positives {:.2}%",
        pairs.join(" "),
        100.0 * share
    );
    check(wins >= 4, || detail.clone())?;
    Ok(detail)
}

fn transfer_gain(exp: &Experiment, aitm: &[MetricReport]) -> Outcome {
    check(aitm.len() == 5, || "calibrated aitm runs are missing".into())?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let a: Vec<f64> = aitm.iter().map(|r| r.final_auc().unwrap()).collect();
    let mut s = Vec::new();
    for seed in 1..=5 {
        s.push(exp.run(ModelVariant::SingleTask, 0.6, seed).map_err(fail)?.final_auc().unwrap());
    }
    let (ma, ms) = (mean(&a), mean(&s));
    let detail = format!("mean final AUC aitm {ma:.4} vs single_task {ms:.4}, gap {:+.4}", ma - ms);
    check(ma > ms, || detail.clone())?;
    Ok(detail)
}

// ---------------------------------------------------------------- 7

fn check_chain(preds: &Tensor, what: &str) -> Result<(), String> {
    for n in 0..preds.rows() {
        let row = preds.row(n);
        check(row.windows(2).all(|w| w[1] <= w[0]), || format!("{what}: row {n} = {row:?}"))?;
    }
    Ok(())
}

fn prob_transfer_suite() -> Outcome {
    let cards = [4, 6, 3];
    let vocab: usize = cards.iter().sum();
    let mut r = rng(7);
    let mut rows = 0;
    for _ in 0..20 {
        let model = Model::new(ModelVariant::ProbTransfer, tiny_arch(4, cards.len()), vocab, &mut r).map_err(fail)?;
        let ids = random_ids(&mut r, 200, &cards);
        check_chain(&model.predict(&ids).map_err(fail)?.values, "untrained")?;
        rows += 200;
    }

    let gen = FunnelGenConfig {
        samples: 3000,
        cardinalities: vec![4, 6, 8],
        base_rates: vec![0.5, 0.6, 0.7, 0.8],
        seed: 7,
        ..FunnelGenConfig::default()
    };
    let funnel = generate_funnel(&gen).map_err(fail)?;
    let (tr, va, te) = chronological_split(funnel.rows, (0.6, 0.2, 0.2)).map_err(fail)?;
    let v = build_vocab(&tr, &funnel.field_names, 1).map_err(fail)?;
    let (tr, va, te) = (
        encode_rows(&tr, &v).map_err(fail)?,
        encode_rows(&va, &v).map_err(fail)?,
        encode_rows(&te, &v).map_err(fail)?,
    );
    let model = Model::new(ModelVariant::ProbTransfer, tiny_arch(4, 3), v.size(), &mut rng_for(7, Stream::Init)).map_err(fail)?;
    let config = TrainConfig {
        batch_size: 64,
        adam: aitm_core::optim::AdamConfig {
            lr: 0.01,
            ..Default::default()
        },
        max_epochs: 10,
        seed: 7,
        ..TrainConfig::default()
    };
    let out = train(model, &tr, &va, &config, |_| {}).map_err(fail)?;
    let (test_ids, _) = te.gather(&(0..te.rows()).collect::<Vec<_>>());
    check_chain(&out.model.predict(&test_ids).map_err(fail)?.values, "trained")?;
    // Unseen combinations: every field drawn from a different training row.
    let (train_ids, _) = tr.gather(&(0..tr.rows()).collect::<Vec<_>>());
    let ids: Vec<usize> = (0..1000 * 3).map(|i| train_ids[r.gen_range(0..tr.rows()) * 3 + i % 3]).collect();
    check_chain(&out.model.predict(&ids).map_err(fail)?.values, "trained, random input")?;
    rows += te.rows() + 1000;
    Ok(format!("{rows} rows non-increasing"))
}

// ---------------------------------------------------------------- 8

fn pipeline_suite() -> Outcome {
    let lambda = 0.25;
    let mut generated = 0;
    for seed in 1..=100u64 {
        let gen = FunnelGenConfig {
            samples: 1500,
            tasks: 3,
            cardinalities: vec![5, 9, 7, 4],
            base_rates: vec![0.2, 0.3, 0.3],
            seed,
            ..FunnelGenConfig::default()
        };
        let funnel = generate_funnel(&gen).map_err(fail)?;
        for row in &funnel.rows {
            check(labels_monotone(&row.labels), || format!("seed {seed}: labels {:?}", row.labels))?;
        }
        generated += funnel.rows.len();

        let natural = funnel.rows.iter().filter(|r| r.final_label() == 1).count() as f64 / funnel.rows.len() as f64;
        check(natural < lambda, || format!("seed {seed}: share {natural} is already above lambda"))?;
        let kept = downsample_negatives(funnel.rows.clone(), lambda, &mut rng_for(seed, Stream::Downsample)).map_err(fail)?;
        let positives = kept.iter().filter(|r| r.final_label() == 1).count();
        let share = positives as f64 / kept.len() as f64;
        check((share - lambda).abs() <= 1.0 / kept.len() as f64, || {
            format!("seed {seed}: share {share} after keeping {}", kept.len())
        })?;
        let all_positives = funnel.rows.iter().filter(|r| r.final_label() == 1).count();
        check(positives == all_positives, || format!("seed {seed}: positives were dropped"))?;

        let mut shuffled = funnel.rows;
        shuffled.shuffle(&mut rng(seed));
        let mut before: Vec<RawRow> = shuffled.clone();
        let (tr, va, te) = chronological_split(shuffled, (0.7, 0.15, 0.15)).map_err(fail)?;
        let last = |v: &[RawRow]| v.iter().map(|r| r.ts).max().unwrap();
        let first = |v: &[RawRow]| v.iter().map(|r| r.ts).min().unwrap();
        check(last(&tr) <= first(&va) && last(&va) <= first(&te), || format!("seed {seed}: split overlaps in time"))?;
        let mut after: Vec<RawRow> = tr.into_iter().chain(va).chain(te).collect();
        let key = |r: &RawRow| (r.ts, r.features.clone(), r.labels.clone());
        before.sort_by_key(key);
        after.sort_by_key(key);
        check(before == after, || format!("seed {seed}: split lost or duplicated rows"))?;
    }
    Ok(format!("100 seeds, {generated} generated rows"))
}

// ---------------------------------------------------------------- 9

fn round_trip_suite() -> Outcome {
    let gen = FunnelGenConfig {
        samples: 2500,
        cardinalities: vec![6, 10, 4],
        base_rates: vec![0.5, 0.5, 0.6, 0.7],
        seed: 9,
        ..FunnelGenConfig::default()
    };
    let funnel = generate_funnel(&gen).map_err(fail)?;
    let (tr, va, te) = chronological_split(funnel.rows, (0.5, 0.1, 0.4)).map_err(fail)?;
    let vocab = build_vocab(&tr, &funnel.field_names, 1).map_err(fail)?;
    let (trd, vad, ted) = (
        encode_rows(&tr, &vocab).map_err(fail)?,
        encode_rows(&va, &vocab).map_err(fail)?,
        encode_rows(&te, &vocab).map_err(fail)?,
    );
    let config = TrainConfig {
        batch_size: 128,
        max_epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let trained = || -> Result<String, Error> {
        let model = Model::new(ModelVariant::Aitm, tiny_arch(4, 3), vocab.size(), &mut rng_for(9, Stream::Init))?;
        let out = train(model, &trd, &vad, &config, |_| {})?;
        let meta = TrainingMetadata {
            seed: 9,
            epochs_run: out.epochs_run,
            best_epoch: out.best_epoch,
            validation: Some(out.best_validation),
        };
        ModelArtifact::new(&out.model, vocab.clone(), Default::default(), meta).to_json()
    };
    let first = trained().map_err(fail)?;
    let second = trained().map_err(fail)?;
    check(first == second, || "same-seed runs wrote different artifacts".into())?;

    let artifact = ModelArtifact::from_json(&first).map_err(fail)?;
    let in_memory = artifact.model().map_err(fail)?;
    let path = std::env::temp_dir().join(format!("aitm-acceptance-{}.json", std::process::id()));
    artifact.save(&path).map_err(fail)?;
    let loaded = ModelArtifact::load(&path).and_then(|a| a.model());
    let _ = std::fs::remove_file(&path);
    let loaded = loaded.map_err(fail)?;

    let rows: Vec<usize> = (0..1000).collect();
    let (ids, _) = ted.gather(&rows);
    let (a, b) = (in_memory.predict(&ids).map_err(fail)?, loaded.predict(&ids).map_err(fail)?);
    let bits = |p: &aitm_core::TaskPredictions| -> Vec<u64> {
        let mut v: Vec<u64> = p.values.data().iter().map(|x| x.to_bits()).collect();
        v.extend(p.attention.iter().flatten().flat_map(|&(x, y)| [x.to_bits(), y.to_bits()]));
        v
    };
    check(bits(&a) == bits(&b), || "reloaded model predicts differently".into())?;
    Ok(format!("{} byte artifact, 1000 rows bit-identical", first.len()))
}

// ---------------------------------------------------------------- 10

fn ranking_suite() -> Outcome {
    let mut r = rng(10);
    for case in 0..1000 {
        let n = r.gen_range(1..=12);
        let candidates: Vec<RankCandidate> = (0..n)
            .map(|b| RankCandidate {
                business: b as u64,
                y_hat: r.gen_range(1e-4..0.5),
                weight: r.gen_range(0.1..10.0),
            })
            .collect();
        let c = r.gen_range(0.01..100.0);
        let scaled: Vec<RankCandidate> = candidates.iter().map(|&x| RankCandidate { weight: x.weight * c, ..x }).collect();
        let top = rank_banners(&candidates).map_err(fail)?[0].candidate.business;
        let top_scaled = rank_banners(&scaled).map_err(fail)?[0].candidate.business;
        check(top == top_scaled, || format!("case {case}: top {top} became {top_scaled} after scaling by {c}"))?;
    }

    let names: Vec<String> = ["click", "application", "approval", "activation"].map(String::from).to_vec();
    let profile = |maturity, objective| BankProfile {
        bank: 1,
        maturity,
        objective,
    };
    let startup = select_objective(&profile(Some(Maturity::Startup), None), &names).map_err(fail)?;
    let mature = select_objective(&profile(Some(Maturity::Mature), None), &names).map_err(fail)?;
    check(names[startup] == "approval", || format!("startup bank targets {}", names[startup]))?;
    check(names[mature] == "activation", || format!("mature bank targets {}", names[mature]))?;
    let forced = select_objective(&profile(Some(Maturity::Mature), Some(1)), &names).map_err(fail)?;
    check(forced == 1, || "objective override ignored".into())?;
    check(select_objective(&profile(None, None), &names).is_err(), || "unknown maturity accepted".into())?;
    Ok("1000 scaled lists keep their winner; startup->approval, mature->activation".into())
}

// ----------------------------------------------------------------

fn report(n: usize, (outcome, elapsed): &(Outcome, Duration), limit: Option<Duration>) -> bool {
    let elapsed = *elapsed;
    let over = limit.is_some_and(|l| elapsed > l);
    let ok = outcome.is_ok() && !over;
    let detail = match outcome {
        Ok(d) | Err(d) => d.as_str(),
    };
    let timing = match limit {
        Some(l) => format!("{:.1}s, limit {:.0}s", elapsed.as_secs_f64(), l.as_secs_f64()),
        None => format!("{:.1}s", elapsed.as_secs_f64()),
    };
    line(&format!("criterion {n:>2}: {} ({timing}) {detail}", if ok { "PASS" } else { "FAIL" }));
    ok
}

/// Straight to the stderr handle, which the test harness does not capture,
/// so a plain `cargo test` shows every criterion line.
fn line(text: &str) {
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "{text}");
}

fn timed<T>(f: &mut dyn FnMut() -> T) -> (T, Duration) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed())
}

/// `AITM_ACCEPTANCE=1,2,9` runs only the listed criteria; the others
/// print SKIP. Unset runs everything.
fn selected(n: usize) -> bool {
    match std::env::var("AITM_ACCEPTANCE") {
        Ok(list) => list.split(',').any(|x| x.trim().parse() == Ok(n)),
        Err(_) => true,
    }
}

#[test]
fn acceptance_criteria() {
    let mut failed = Vec::new();
    let mut record = |n: usize, run: &mut dyn FnMut() -> Outcome, limit: Option<Duration>| {
        if !selected(n) {
            line(&format!("criterion {n:>2}: SKIP"));
        } else if !report(n, &timed(run), limit) {
            failed.push(n);
        }
    };

    record(1, &mut gradient_suite, Some(Duration::from_secs(10)));
    record(2, &mut attention_suite, None);
    record(3, &mut first_state_suite, None);
    record(4, &mut loss_oracle_suite, None);

    // Data generation counts toward the experiment's time budget.
    let mut exp = None;
    let mut calibrated = Vec::new();
    record(
        5,
        &mut || {
            let e = exp.insert(Experiment::new().map_err(fail)?);
            calibrator_efficacy(e, &mut calibrated)
        },
        Some(Duration::from_secs(600)),
    );
    record(
        6,
        &mut || {
            if exp.is_none() {
                exp = Some(Experiment::new().map_err(fail)?);
            }
            if calibrated.is_empty() {
                for seed in 1..=5 {
                    calibrated.push(exp.as_ref().unwrap().run(ModelVariant::Aitm, 0.6, seed).map_err(fail)?);
                }
            }
            transfer_gain(exp.as_ref().unwrap(), &calibrated)
        },
        None,
    );

    record(7, &mut prob_transfer_suite, None);
    record(8, &mut pipeline_suite, None);
    record(9, &mut round_trip_suite, None);
    record(10, &mut ranking_suite, None);

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
