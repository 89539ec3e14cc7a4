use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use aitm_core::artifact::{ModelArtifact, TrainingMetadata};
use aitm_core::data::tsv::{read_table_file, write_matrix, write_table, Table};
use aitm_core::data::{
    build_vocab, chronological_split, downsample_negatives, downsample_negatives_by, encode_rows, generate_funnel,
    FunnelDataset, RawRow, Vocabulary,
};
use aitm_core::metrics::MetricReport;
use aitm_core::ranking::{rank_banners, weight_from_factors, BankProfile, ObjectiveSelector, RankCandidate};
use aitm_core::train::{evaluate, rng_for, train, EpochLog, Stream};
use aitm_core::{Error, Model, ModelVariant};

use crate::config::{config_hash, GenConfig, RunConfig};
use crate::error::CliError;

type CliResult<T> = Result<T, CliError>;

/// Human-readable block, machine-readable rows, or both.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Text,
    Rows,
    Both,
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| CliError::data(format!("cannot create {}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// Appends `metric<TAB>task<TAB>value` rows to a run log.
struct RunLog {
    file: Option<BufWriter<File>>,
}

impl RunLog {
    fn open(path: Option<&Path>, hash: &str, command: &str) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(RunLog { file: None });
        };
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| CliError::data(format!("cannot open log {}: {e}", path.display())))?;
        let mut log = RunLog {
            file: Some(BufWriter::new(f)),
        };
        log.row("command", "-", command)?;
        log.row("config_hash", "-", hash)?;
        Ok(log)
    }

    fn row(&mut self, metric: &str, task: &str, value: &str) -> io::Result<()> {
        match &mut self.file {
            Some(f) => writeln!(f, "{metric}\t{task}\t{value}"),
            None => Ok(()),
        }
    }

    fn report(&mut self, prefix: &str, report: &MetricReport) -> io::Result<()> {
        for (m, t, v) in report.rows() {
            self.row(&format!("{prefix}{m}"), &t, &v)?;
        }
        Ok(())
    }

    fn epoch(&mut self, e: &EpochLog) -> io::Result<()> {
        self.row("epoch", "-", &e.epoch.to_string())?;
        self.row("train.ce", "-", &e.train.ce.to_string())?;
        self.row("train.lc", "-", &e.train.lc.to_string())?;
        self.row("train.alpha", "-", &e.train.alpha.to_string())?;
        self.row("train.total", "-", &e.train.total.to_string())?;
        self.report("val.", &e.validation)
    }

    fn finish(&mut self) -> io::Result<()> {
        match &mut self.file {
            Some(f) => f.flush(),
            None => Ok(()),
        }
    }
}

fn write_report(out: &mut dyn Write, report: &MetricReport, format: Format) -> io::Result<()> {
    if format != Format::Rows {
        out.write_all(report.to_text().as_bytes())?;
    }
    if format == Format::Both {
        writeln!(out)?;
    }
    if format != Format::Text {
        for (m, t, v) in report.rows() {
            writeln!(out, "{m}\t{t}\t{v}")?;
        }
    }
    Ok(())
}

fn field_mismatch(what: &str, data: &[String], expected: &[String]) -> Option<CliError> {
    for i in 0..data.len().max(expected.len()) {
        let (d, e) = (data.get(i), expected.get(i));
        if d != e {
            return Some(CliError::from(Error::Schema(format!(
                "{what}: feature column {} is {} in the data but {} in the model",
                i + 1,
                d.map_or("missing".to_string(), |s| format!("`{s}`")),
                e.map_or("absent".to_string(), |s| format!("`{s}`")),
            ))));
        }
    }
    None
}

/// Reads a data file and encodes it against a trained model's vocabulary.
pub fn load_for_model(path: &Path, vocab: &Vocabulary, tasks: usize) -> CliResult<(Table, FunnelDataset)> {
    let table = read_table_file(path)?;
    if let Some(e) = field_mismatch(&path.display().to_string(), &table.field_names, vocab.field_names()) {
        return Err(e);
    }
    if table.tasks != tasks {
        return Err(Error::Schema(format!(
            "{}: label columns y1..y{} but the model has {tasks} tasks",
            path.display(),
            table.tasks
        ))
        .into());
    }
    if table.rows.is_empty() {
        return Err(CliError::data(format!("{}: no data rows", path.display())));
    }
    let ds = encode_rows(&table.rows, vocab)?;
    Ok((table, ds))
}

pub fn cmd_train(cfg: RunConfig) -> CliResult<()> {
    let train_table = read_table_file(&cfg.train_path)?;
    let val_table = read_table_file(&cfg.val_path)?;
    if let Some(e) = field_mismatch("validation file", &val_table.field_names, &train_table.field_names) {
        return Err(e);
    }
    if val_table.tasks != train_table.tasks {
        return Err(Error::Schema(format!(
            "training file has {} tasks, validation file has {}",
            train_table.tasks, val_table.tasks
        ))
        .into());
    }
    if let Some(t) = cfg.tasks {
        if t != train_table.tasks {
            return Err(Error::Schema(format!("tasks = {t} but the training file has {}", train_table.tasks)).into());
        }
    }
    if train_table.rows.is_empty() || val_table.rows.is_empty() {
        return Err(CliError::data("training and validation files need at least one row"));
    }
    let tasks = train_table.tasks;
    let seed = cfg.train.seed;

    let fit_rows = match cfg.lambda_target {
        None => train_table.rows.clone(),
        Some(lambda) => {
            let mut rng = rng_for(seed, Stream::Downsample);
            match &cfg.downsample_group {
                None => downsample_negatives(train_table.rows.clone(), lambda, &mut rng)?,
                Some(g) => {
                    let idx = train_table.field_names.iter().position(|n| n == g).ok_or_else(|| {
                        CliError::from(Error::Schema(format!("downsample_group `{g}` is not a feature column")))
                    })?;
                    downsample_negatives_by(train_table.rows.clone(), lambda, |r| r.features[idx].clone(), &mut rng)?
                }
            }
        }
    };
    eprintln!(
        "training rows: {} of {} after downsampling",
        fit_rows.len(),
        train_table.rows.len()
    );

    let vocab = build_vocab(&fit_rows, &train_table.field_names, cfg.min_frequency)?;
    let fit = encode_rows(&fit_rows, &vocab)?;
    let val = encode_rows(&val_table.rows, &vocab)?;
    let arch = cfg.architecture(tasks, vocab.fields());
    let model = Model::new(cfg.variant, arch, vocab.size(), &mut rng_for(seed, Stream::Init))?;

    let hash = config_hash(&cfg.snapshot);
    let mut log = RunLog::open(cfg.log_path.as_deref(), &hash, "train")?;
    let mut log_error: Option<io::Error> = None;
    let outcome = train(model, &fit, &val, &cfg.train, |e| {
        let auc = e
            .validation
            .final_auc()
            .map_or_else(|| "undefined".to_string(), |a| format!("{a:.6}"));
        eprintln!(
            "epoch {:>3}  ce {:.6}  lc {:.6}  total {:.6}  val auc(task {tasks}) {auc}",
            e.epoch, e.train.ce, e.train.lc, e.train.total
        );
        if log_error.is_none() {
            log_error = log.epoch(e).err();
        }
    })?;
    if let Some(e) = log_error {
        return Err(e.into());
    }

    // Full training file, as `evaluate` would read it.
    let full_train = encode_rows(&train_table.rows, &vocab)?;
    let train_report = evaluate(&outcome.model, &full_train)?;
    log.row("best_epoch", "-", &outcome.best_epoch.to_string())?;
    log.row("epochs_run", "-", &outcome.epochs_run.to_string())?;
    log.report("final.train.", &train_report)?;
    log.report("final.val.", &outcome.best_validation)?;
    log.finish()?;

    let artifact = ModelArtifact::new(
        &outcome.model,
        vocab,
        cfg.snapshot.clone(),
        TrainingMetadata {
            seed,
            epochs_run: outcome.epochs_run,
            best_epoch: outcome.best_epoch,
            validation: Some(outcome.best_validation.clone()),
        },
    );
    artifact.save(&cfg.out_path)?;
    eprintln!(
        "saved {} (best epoch {} of {})",
        cfg.out_path.display(),
        outcome.best_epoch,
        outcome.epochs_run
    );
    let mut out = output(None)?;
    writeln!(out, "[train]")?;
    out.write_all(train_report.to_text().as_bytes())?;
    writeln!(out, "[validation]")?;
    out.write_all(outcome.best_validation.to_text().as_bytes())?;
    out.flush()?;
    Ok(())
}

fn load_artifact(path: &Path) -> CliResult<(ModelArtifact, Model)> {
    let artifact = ModelArtifact::load(path)?;
    let model = artifact.model()?;
    Ok((artifact, model))
}

pub fn cmd_evaluate(model: &Path, data: &Path, log: Option<&Path>, format: Format) -> CliResult<()> {
    let (artifact, model) = load_artifact(model)?;
    let (_, ds) = load_for_model(data, &artifact.vocabulary, model.tasks())?;
    let report = evaluate(&model, &ds)?;
    let mut run_log = RunLog::open(log, &config_hash(&artifact.run_config), "evaluate")?;
    run_log.row("data", "-", &data.display().to_string())?;
    run_log.report("", &report)?;
    run_log.finish()?;
    let mut out = output(None)?;
    write_report(&mut out, &report, format)?;
    out.flush()?;
    Ok(())
}

pub fn cmd_predict(model: &Path, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let (artifact, model) = load_artifact(model)?;
    let (_, ds) = load_for_model(data, &artifact.vocabulary, model.tasks())?;
    let preds = model.predict(&ds.ids)?;
    let rows: Vec<Vec<f64>> = (0..preds.rows()).map(|r| preds.values.row(r).to_vec()).collect();
    let mut w = output(out)?;
    write_matrix(&mut w, "y_hat", &rows)?;
    w.flush()?;
    Ok(())
}

pub fn cmd_inspect_weights(model: &Path, data: &Path, out: Option<&Path>) -> CliResult<()> {
    let (artifact, model) = load_artifact(model)?;
    if model.variant() != ModelVariant::Aitm {
        return Err(Error::UnsupportedVariant(format!(
            "inspect-weights needs an aitm model, this one is {}",
            model.variant()
        ))
        .into());
    }
    let (_, ds) = load_for_model(data, &artifact.vocabulary, model.tasks())?;
    let preds = model.predict(&ds.ids)?;
    let mut w = output(out)?;
    let mut header = vec!["row".to_string()];
    for t in 2..=model.tasks() {
        header.push(format!("w_p{t}"));
        header.push(format!("w_q{t}"));
    }
    writeln!(w, "{}", header.join("\t"))?;
    for r in 0..preds.rows() {
        let mut cells = vec![(r + 1).to_string()];
        for &(wp, wq) in preds.attention_row(r).unwrap_or(&[]) {
            cells.push(wp.to_string());
            cells.push(wq.to_string());
        }
        writeln!(w, "{}", cells.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

fn write_split(dir: &Path, name: &str, fields: &[String], rows: &[RawRow], truth: &BTreeMap<i64, Vec<f64>>) -> CliResult<()> {
    let path = dir.join(format!("{name}.tsv"));
    let mut w = BufWriter::new(File::create(&path)?);
    write_table(&mut w, fields, rows)?;
    w.flush()?;

    let path = dir.join(format!("{name}.truth.tsv"));
    let mut w = BufWriter::new(File::create(&path)?);
    let tasks = rows.first().map_or(0, |r| r.labels.len());
    let mut header = vec!["ts".to_string()];
    header.extend((1..=tasks).map(|t| format!("p{t}")));
    writeln!(w, "{}", header.join("\t"))?;
    for r in rows {
        let mut cells = vec![r.ts.to_string()];
        cells.extend(truth[&r.ts].iter().map(f64::to_string));
        writeln!(w, "{}", cells.join("\t"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_gen_data(cfg: GenConfig) -> CliResult<()> {
    let funnel = generate_funnel(&cfg.funnel)?;
    let truth: BTreeMap<i64, Vec<f64>> = funnel
        .rows
        .iter()
        .zip(&funnel.conditionals)
        .map(|(r, c)| (r.ts, c.clone()))
        .collect();
    let (mut train_rows, val_rows, test_rows) = chronological_split(funnel.rows, cfg.split)?;
    if let Some(lambda) = cfg.downsample {
        let mut rng = rng_for(cfg.funnel.seed, Stream::Downsample);
        train_rows = downsample_negatives(train_rows, lambda, &mut rng)?;
    }
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| CliError::data(format!("cannot create {}: {e}", cfg.out_dir.display())))?;
    for (name, rows) in [("train", &train_rows), ("val", &val_rows), ("test", &test_rows)] {
        write_split(&cfg.out_dir, name, &funnel.field_names, rows, &truth)?;
        let finals = rows.iter().filter(|r| r.final_label() == 1).count();
        eprintln!("{name}: {} rows, {finals} final-task positives", rows.len());
    }
    Ok(())
}

/// Default funnel step names for four-task models.
pub const DEFAULT_TASK_NAMES: [&str; 4] = ["click", "application", "approval", "activation"];

#[derive(Debug)]
struct CandidateRow {
    request: String,
    profile: BankProfile,
    weight: f64,
    y_hat: Vec<f64>,
}

fn read_candidates(path: &Path) -> CliResult<Vec<CandidateRow>> {
    let reader = BufReader::new(
        File::open(path).map_err(|e| CliError::data(format!("cannot open {}: {e}", path.display())))?,
    );
    let mut lines = reader.lines();
    let bad = |line: usize, msg: String| CliError::data(format!("{}:{line}: {msg}", path.display()));
    let header = lines.next().ok_or_else(|| bad(1, "empty file".into()))??;
    let cols: Vec<&str> = header.split('\t').collect();
    let find = |name: &str| cols.iter().position(|c| *c == name);
    let business = find("business").ok_or_else(|| bad(1, "missing `business` column".into()))?;
    let maturity = find("maturity");
    let objective = find("objective");
    let request = find("request");
    let weight = find("weight");
    let factors: Vec<usize> = ["audience_value", "business_value", "match_value"]
        .iter()
        .filter_map(|n| find(n))
        .collect();
    if weight.is_none() && factors.len() != 3 {
        return Err(bad(
            1,
            "need a `weight` column or all of `audience_value`, `business_value`, `match_value`".into(),
        ));
    }
    let mut y_cols = Vec::new();
    while let Some(i) = find(&format!("y_hat{}", y_cols.len() + 1)) {
        y_cols.push(i);
    }
    if y_cols.is_empty() {
        if let Some(i) = find("y_hat") {
            y_cols.push(i);
        } else {
            return Err(bad(1, "missing prediction columns y_hat1..y_hatT".into()));
        }
    }

    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let n = i + 2;
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != cols.len() {
            return Err(bad(n, format!("{} columns, header has {}", cells.len(), cols.len())));
        }
        let num = |idx: usize, what: &str| -> CliResult<f64> {
            cells[idx]
                .parse::<f64>()
                .map_err(|_| bad(n, format!("bad {what} {:?}", cells[idx])))
        };
        let bank = cells[business]
            .parse::<u64>()
            .map_err(|_| bad(n, format!("bad business id {:?}", cells[business])))?;
        let maturity = match maturity.map(|m| cells[m]) {
            None | Some("") => None,
            Some(s) => Some(s.parse().map_err(|e: Error| bad(n, e.to_string()))?),
        };
        let objective = match objective.map(|o| cells[o]) {
            None | Some("") => None,
            Some(s) => match s.parse::<usize>() {
                Ok(t) if t >= 1 => Some(t - 1),
                _ => return Err(bad(n, format!("objective {s:?} must be a 1-based task index"))),
            },
        };
        let weight = match weight {
            Some(w) => num(w, "weight")?,
            None => {
                let f = factors.iter().map(|&c| num(c, "value factor")).collect::<CliResult<Vec<_>>>()?;
                weight_from_factors(&f).map_err(|e| bad(n, e.to_string()))?
            }
        };
        let y_hat = y_cols.iter().map(|&c| num(c, "prediction")).collect::<CliResult<Vec<_>>>()?;
        out.push(CandidateRow {
            request: request.map_or_else(|| "1".to_string(), |r| cells[r].to_string()),
            profile: BankProfile {
                bank,
                maturity,
                objective,
            },
            weight,
            y_hat,
        });
    }
    if out.is_empty() {
        return Err(bad(2, "no candidate rows".into()));
    }
    Ok(out)
}

pub fn cmd_rank(candidates: &Path, task_names: Option<Vec<String>>, out: Option<&Path>) -> CliResult<()> {
    let rows = read_candidates(candidates)?;
    let tasks = rows[0].y_hat.len();
    let names = match task_names {
        Some(n) => n,
        None if tasks == DEFAULT_TASK_NAMES.len() => DEFAULT_TASK_NAMES.iter().map(|s| s.to_string()).collect(),
        None if tasks == 1 => vec!["objective".to_string()],
        None => return Err(CliError::usage(format!("{tasks} prediction columns: pass --task-names"))),
    };
    if names.len() != tasks {
        return Err(CliError::usage(format!(
            "{} task names for {tasks} prediction columns",
            names.len()
        )));
    }
    let selector = ObjectiveSelector::default();
    let mut groups: BTreeMap<&str, Vec<(RankCandidate, usize)>> = BTreeMap::new();
    for row in &rows {
        let objective = if tasks == 1 && row.profile.objective.is_none() {
            0
        } else {
            selector.select(&row.profile, &names)?
        };
        let group = groups.entry(&row.request).or_default();
        if group.iter().any(|(c, _)| c.business == row.profile.bank) {
            return Err(CliError::data(format!(
                "business {} appears twice in request {}",
                row.profile.bank, row.request
            )));
        }
        group.push((
            RankCandidate {
                business: row.profile.bank,
                y_hat: row.y_hat[objective],
                weight: row.weight,
            },
            objective,
        ));
    }
    let mut w = output(out)?;
    writeln!(w, "request\trank\tbusiness\tobjective\ty_hat\tweight\tscore")?;
    for (request, members) in &groups {
        let candidates: Vec<RankCandidate> = members.iter().map(|(c, _)| *c).collect();
        for (rank, s) in rank_banners(&candidates)?.iter().enumerate() {
            let objective = members
                .iter()
                .find(|(c, _)| c.business == s.candidate.business)
                .map(|&(_, o)| o)
                .unwrap_or(0);
            writeln!(
                w,
                "{request}\t{}\t{}\t{}\t{}\t{}\t{}",
                rank + 1,
                s.candidate.business,
                names[objective],
                s.candidate.y_hat,
                s.candidate.weight,
                s.score
            )?;
        }
    }
    w.flush()?;
    Ok(())
}
