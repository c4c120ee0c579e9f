//! Pipeline stages. Each stage reads its predecessor's files from the output
//! directory, so any stage can be re-run on its own.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use relx::classifier::{
    load_model, predict_proba, save_model, train_baseline, NativeBackend, RemoteBackend, RemoteClient,
};
use relx::corpus::{compute_stats, load_corpus, save_corpus, split_corpus};
use relx::eval::{run_ablation, run_ablation_on, score_labels, AblationConfig, AblationError, CellError, ScoreOptions};
use relx::formats::{self, FormatError, MarkedLine};
use relx::postprocess::constrain_batch;
use relx::preprocess::preprocess_corpus;
use relx::synthetic::separable_corpus;
use relx::{Backend, Instance, LabelId, ProbDist, RelationSchema};

use crate::config::{BackendKind, RunConfig, Split};
use crate::error::CliError;

type Result<T> = std::result::Result<T, CliError>;

pub struct Context {
    pub cfg: RunConfig,
    pub schema: RelationSchema,
}

fn status(msg: impl AsRef<str>) {
    eprintln!("relx: {}", msg.as_ref());
}

fn format_err(path: &Path, e: FormatError) -> CliError {
    match e {
        FormatError::Io(e) => CliError::io(path, e),
        line @ FormatError::Line { .. } => CliError::Validation(format!("{}: {line}", path.display())),
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| CliError::io(path, e))
}

impl Context {
    pub fn new(cfg: RunConfig) -> Context {
        Context {
            cfg,
            schema: relx::build_default_schema(),
        }
    }

    fn out(&self, name: &str) -> PathBuf {
        self.cfg.output.dir.join(name)
    }

    fn split_file(&self, split: Split, suffix: &str) -> PathBuf {
        self.out(&format!("{}.{suffix}", split.name()))
    }

    fn write_out(&self, name: &str, f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>) -> Result<PathBuf> {
        let dir = &self.cfg.output.dir;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = self.out(name);
        let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(|e| CliError::io(&path, e))?;
        status(format!("wrote {}", path.display()));
        Ok(path)
    }

    /// Keep the resolved configuration next to the artifacts it produced.
    fn record_config(&self) -> Result<()> {
        let dir = &self.cfg.output.dir;
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        let path = self.out("run.toml");
        fs::write(&path, self.cfg.to_toml()).map_err(|e| CliError::io(&path, e))
    }

    fn configured_splits(&self) -> Vec<Split> {
        Split::ALL
            .into_iter()
            .filter(|s| self.cfg.corpus.get(*s).is_some())
            .collect()
    }

    /// Load a split. Invalid records fail the run unless `load.skip_invalid`
    /// is set, in which case they are reported and dropped.
    fn load(&self, split: Split) -> Result<Vec<Instance>> {
        let path = self
            .cfg
            .corpus
            .get(split)
            .ok_or_else(|| CliError::Validation(format!("corpus.{} is not set", split.name())))?;
        let loaded = load_corpus(path, &self.schema).map_err(|e| match e {
            relx::corpus::CorpusError::Io(e) => CliError::io(path, e),
            other => CliError::Validation(format!("{}: {other}", path.display())),
        })?;
        if !loaded.rejected.is_empty() {
            let lines: Vec<String> = loaded
                .rejected
                .iter()
                .map(|r| format!("{}: {r}", path.display()))
                .collect();
            if !self.cfg.load.skip_invalid {
                return Err(CliError::Validation(lines.join("\n")));
            }
            for l in &lines {
                status(format!("skipped {l}"));
            }
        }
        if loaded.instances.is_empty() {
            return Err(CliError::Validation(format!("{}: no valid instances", path.display())));
        }
        Ok(loaded.instances)
    }

    fn score_options(&self) -> ScoreOptions {
        ScoreOptions {
            exclude_no_relation: self.cfg.eval.exclude_no_relation,
        }
    }

    fn is_remote(&self) -> bool {
        self.cfg.backend.kind == BackendKind::Remote
    }

    fn endpoint(&self) -> &str {
        self.cfg
            .backend
            .endpoint
            .as_deref()
            .expect("checked when the config was resolved")
    }
}

/// Pairs each record with the corpus instance of the same id. The records
/// must cover the corpus exactly once.
fn align<'a, T>(
    records: &[T],
    id: impl Fn(&T) -> &str,
    corpus: &'a [Instance],
    path: &Path,
) -> Result<Vec<&'a Instance>> {
    let by_id: HashMap<&str, &Instance> = corpus.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let id = id(r);
        let inst = by_id
            .get(id)
            .ok_or_else(|| CliError::Validation(format!("{}: id {id:?} is not in the corpus", path.display())))?;
        if !seen.insert(id) {
            return Err(CliError::Validation(format!(
                "{}: id {id:?} appears twice",
                path.display()
            )));
        }
        out.push(*inst);
    }
    if out.len() != corpus.len() {
        return Err(CliError::Validation(format!(
            "{}: {} records for a corpus of {} instances",
            path.display(),
            out.len(),
            corpus.len()
        )));
    }
    Ok(out)
}

pub fn stats(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let splits = ctx.configured_splits();
    if splits.is_empty() {
        return Err(CliError::Validation(
            "no corpus configured (corpus.train, corpus.dev or corpus.test)".into(),
        ));
    }
    let mut text = String::new();
    for split in splits {
        let corpus = ctx.load(split)?;
        let stats = compute_stats(&corpus, &ctx.schema).map_err(|e| CliError::Validation(e.to_string()))?;
        let _ = writeln!(text, "[{}]", split.name());
        let _ = writeln!(text, "{:<28}{:>7}", "label", "count");
        for (label, n) in ctx.schema.labels().iter().zip(&stats.per_relation) {
            let _ = writeln!(text, "{:<28}{:>7}", label.name, n);
        }
        let _ = writeln!(text, "{:<28}{:>7}", "pair", "count");
        for ((a, b), n) in &stats.per_pair {
            let _ = writeln!(text, "{:<28}{:>7}", format!("{a}-{b}"), n);
        }
        let _ = writeln!(text, "{:<28}{:>7}\n", "total", stats.total);
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

pub fn preprocess(ctx: &Context) -> Result<()> {
    let splits = ctx.configured_splits();
    if splits.is_empty() {
        return Err(CliError::Validation(
            "no corpus configured (corpus.train, corpus.dev or corpus.test)".into(),
        ));
    }
    ctx.record_config()?;
    for split in splits {
        let corpus = ctx.load(split)?;
        let marked = preprocess_corpus(&corpus, ctx.cfg.preprocess.strategy);
        ctx.write_out(&format!("{}.marked.tsv", split.name()), |w| {
            formats::write_marked(w, &marked)
        })?;
    }
    Ok(())
}

fn read_marked(ctx: &Context, split: Split) -> Result<(PathBuf, Vec<MarkedLine>)> {
    let path = ctx.split_file(split, "marked.tsv");
    let lines = formats::read_marked(open(&path)?).map_err(|e| format_err(&path, e))?;
    let want = ctx.cfg.preprocess.strategy;
    if let Some(l) = lines.iter().find(|l| l.strategy != want) {
        return Err(CliError::Validation(format!(
            "{}: {:?} was marked with {} but preprocess.strategy is {want}; re-run preprocess",
            path.display(),
            l.id,
            l.strategy
        )));
    }
    Ok((path, lines))
}

/// Native: fit the baseline and save `model.rlxb`. Remote: write the
/// fine-tuning input for the model server.
pub fn train(ctx: &Context) -> Result<()> {
    let corpus = ctx.load(Split::Train)?;
    let (path, lines) = read_marked(ctx, Split::Train)?;
    let aligned = align(&lines, |l| l.id.as_str(), &corpus, &path)?;
    let golds: Vec<LabelId> = aligned
        .iter()
        .map(|i| {
            i.gold
                .ok_or_else(|| CliError::Validation(format!("training instance {:?} has no gold label", i.id)))
        })
        .collect::<Result<_>>()?;
    ctx.record_config()?;
    match ctx.cfg.backend.kind {
        BackendKind::Native => {
            let texts: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
            let model = train_baseline(&texts, &golds, &ctx.cfg.training_config(), &ctx.schema)
                .map_err(|e| CliError::classifier("training", e, false))?;
            let path = ctx.out("model.rlxb");
            save_model(&model, &path).map_err(|e| CliError::classifier(&path.display().to_string(), e, false))?;
            status(format!("wrote {}", path.display()));
        }
        BackendKind::Remote => {
            ctx.write_out("finetune.tsv", |w| {
                formats::write_finetune(w, &lines, &golds, &ctx.schema)
            })?;
            let t = &ctx.cfg.training;
            let job = serde_json::json!({
                "learning_rate": t.learning_rate,
                "epochs": t.epochs,
                "batch_size": t.batch_size,
                "weight_decay": t.weight_decay,
                "optimizer": t.optimizer,
                "seed": ctx.cfg.seed,
                "labels": ctx.schema.label_names(),
            });
            ctx.write_out("finetune.json", |w| {
                serde_json::to_writer_pretty(&mut *w, &job)?;
                w.write_all(b"\n")
            })?;
        }
    }
    Ok(())
}

pub fn predict(ctx: &Context) -> Result<()> {
    let split = ctx.cfg.eval.split;
    let (_, lines) = read_marked(ctx, split)?;
    let texts: Vec<&str> = lines.iter().map(|l| l.text.as_str()).collect();
    let dists: Vec<ProbDist> = match ctx.cfg.backend.kind {
        BackendKind::Native => {
            let path = ctx.out("model.rlxb");
            let model = load_model(&path).map_err(|e| CliError::classifier(&path.display().to_string(), e, false))?;
            predict_proba(&model, &texts, &ctx.schema).map_err(|e| CliError::classifier("prediction", e, false))?
        }
        BackendKind::Remote => {
            let client = RemoteClient::new(ctx.endpoint(), ctx.cfg.backend.timeout(), &ctx.schema);
            let mut dists = Vec::with_capacity(texts.len());
            for batch in texts.chunks(ctx.cfg.backend.batch_size) {
                dists.extend(
                    client
                        .predict(batch)
                        .map_err(|e| CliError::classifier(ctx.endpoint(), e, true))?,
                );
            }
            dists
        }
    };
    let ids: Vec<&str> = lines.iter().map(|l| l.id.as_str()).collect();
    ctx.record_config()?;
    ctx.write_out(&format!("{}.dists.tsv", split.name()), |w| {
        formats::write_dists(w, &ids, &dists)
    })?;
    Ok(())
}

pub fn postprocess(ctx: &Context) -> Result<()> {
    let split = ctx.cfg.eval.split;
    let path = ctx.split_file(split, "dists.tsv");
    let rows = formats::read_dists(open(&path)?, ctx.schema.len()).map_err(|e| format_err(&path, e))?;
    let corpus = ctx.load(split)?;
    let aligned: Vec<Instance> = align(&rows, |r| r.0.as_str(), &corpus, &path)?
        .into_iter()
        .cloned()
        .collect();
    let dists: Vec<ProbDist> = rows.into_iter().map(|r| r.1).collect();
    let decoded = constrain_batch(&dists, &aligned, &ctx.schema)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    status(format!(
        "{} of {} predictions corrected",
        decoded.corrections,
        decoded.predictions.len()
    ));
    ctx.record_config()?;
    ctx.write_out(&format!("{}.predictions.tsv", split.name()), |w| {
        formats::write_predictions(w, &decoded.predictions, &ctx.schema)
    })?;
    Ok(())
}

pub fn eval(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let split = ctx.cfg.eval.split;
    let path = ctx.split_file(split, "predictions.tsv");
    let preds = formats::read_predictions(open(&path)?, &ctx.schema).map_err(|e| format_err(&path, e))?;
    let corpus = ctx.load(split)?;
    let aligned = align(&preds, |p| p.id.as_str(), &corpus, &path)?;
    let golds: Vec<LabelId> = aligned
        .iter()
        .map(|i| {
            i.gold
                .ok_or_else(|| CliError::Validation(format!("eval instance {:?} has no gold label", i.id)))
        })
        .collect::<Result<_>>()?;
    let final_labels: Vec<LabelId> = preds.iter().map(|p| p.final_label).collect();
    let raw_labels: Vec<LabelId> = preds.iter().map(|p| p.raw).collect();
    let opts = ctx.score_options();
    let score = |labels: &[LabelId]| {
        score_labels(labels, &golds, &ctx.schema, opts)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    };
    let report = score(&final_labels)?;
    let raw = score(&raw_labels)?;

    let mut text = report.to_table();
    let corrections = preds.iter().filter(|p| p.fallback_rank > 0).count();
    let _ = writeln!(text, "raw micro f1 {:.4}", raw.micro_f1);
    let _ = writeln!(
        text,
        "constrained  {:+.4} micro f1 ({corrections} corrections)",
        report.micro_f1 - raw.micro_f1
    );
    ctx.record_config()?;
    ctx.write_out(&format!("{}.report.txt", split.name()), |w| {
        w.write_all(text.as_bytes())
    })?;
    if ctx.cfg.eval.jsonl {
        let jsonl = report.to_jsonl();
        ctx.write_out(&format!("{}.report.jsonl", split.name()), |w| {
            w.write_all(jsonl.as_bytes())
        })?;
    }
    out.write_all(text.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

pub fn ablate(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    let train = ctx.load(Split::Train)?;
    let native;
    let remote;
    let backend: &dyn Backend = match ctx.cfg.backend.kind {
        BackendKind::Native => {
            native = NativeBackend::new(ctx.cfg.training_config());
            &native
        }
        BackendKind::Remote => {
            remote = RemoteBackend {
                endpoint: ctx.endpoint().to_string(),
                timeout: ctx.cfg.backend.timeout(),
            };
            &remote
        }
    };
    let config = AblationConfig {
        train_fraction: ctx.cfg.ablate.train_fraction,
        seed: ctx.cfg.seed,
        score: ctx.score_options(),
        jobs: ctx.cfg.jobs,
    };
    let strategies = &ctx.cfg.ablate.strategies;
    let result = if ctx.cfg.corpus.test.is_some() {
        let test = ctx.load(Split::Test)?;
        run_ablation_on(&train, &test, strategies, &[backend], &ctx.schema, &config)
    } else {
        run_ablation(&train, strategies, &[backend], &ctx.schema, &config)
    };
    let report = result.map_err(|e| match e {
        AblationError::Cell {
            backend,
            strategy,
            source: CellError::Classifier(c),
        } => CliError::classifier(&format!("{backend} x {strategy}"), c, ctx.is_remote()),
        other => CliError::Validation(other.to_string()),
    })?;
    let table = report.to_table();
    ctx.record_config()?;
    ctx.write_out("ablation.txt", |w| w.write_all(table.as_bytes()))?;
    if ctx.cfg.eval.jsonl {
        ctx.write_out("ablation.jsonl", |w| {
            for row in &report.rows {
                serde_json::to_writer(&mut *w, row)?;
                w.write_all(b"\n")?;
            }
            Ok(())
        })?;
    }
    out.write_all(table.as_bytes()).map_err(|e| CliError::Io(e.to_string()))
}

/// preprocess, train, predict, postprocess and eval in sequence.
pub fn pipeline(ctx: &Context, out: &mut dyn Write) -> Result<()> {
    if ctx.cfg.corpus.get(ctx.cfg.eval.split).is_none() {
        return Err(CliError::Validation(format!(
            "corpus.{} is not set",
            ctx.cfg.eval.split.name()
        )));
    }
    preprocess(ctx)?;
    train(ctx)?;
    predict(ctx)?;
    postprocess(ctx)?;
    eval(ctx, out)
}

/// Write the synthetic separable corpus as a stratified train/test pair.
pub fn fixture(dir: &Path, per_class: usize, seed: u64) -> Result<()> {
    if per_class < 2 {
        return Err(CliError::Validation("per-class count must be at least 2".into()));
    }
    let schema = relx::build_default_schema();
    let corpus = separable_corpus(&schema, per_class, seed);
    let (train, test) = split_corpus(&corpus, (0.8, 0.2), seed).map_err(|e| CliError::Validation(e.to_string()))?;
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    for (name, part) in [("train.jsonl", &train), ("test.jsonl", &test)] {
        let path = dir.join(name);
        save_corpus(&path, part, &schema).map_err(|e| CliError::io(&path, e))?;
        status(format!("wrote {} ({} instances)", path.display(), part.len()));
    }
    Ok(())
}
