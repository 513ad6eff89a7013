//! Subcommand implementations. Each command reads the effective run
//! configuration (config file plus CLI overrides), works under the run
//! directory and stamps the config hash into everything it writes.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/
//!   store/      vocab.txt, store.jsonl, manifest.json   (ingest | synth)
//!   timeline/   global.ckpt, slice_<t>/..., timeline.json  (train)
//!   reports/    report.csv, report.json                 (eval)
//!   topics.jsonl, trajectories.jsonl                    (topics)
//! ```

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use contm_core::config::{ConfigError, RunConfig};
use contm_core::continual::persist::{
    load_timeline, read_current_global, read_last_encoder, read_manifest, PersistError,
    TimelineWriter,
};
use contm_core::continual::{
    block_topic_matrix, generate_synthetic, ContinualError, ModelTimeline, RhoSchedule,
    StreamTrainer,
};
use contm_core::corpus::{
    self, bucket_label, build_vocabulary, doc_key, read_corpus, read_store, slice_and_split,
    tokenize, vectorize, BucketedDoc, CorpusError, Split, TimeSlice, Vocabulary,
};
use contm_core::eval::{
    build_cooc_restricted, npmi_coherence, predictive_perplexity, top_words, topic_diversity,
    topic_quality, topic_word_probs, tts, welch_t_test, EvalError, MetricReport, SliceMetrics,
    TTestResult, NPMI_EPS,
};
use contm_core::model::{ModelError, PriorConcentration, TopicRole};

use crate::Common;

/// Command-level error carrying the exit-code contract.
#[derive(Debug)]
pub enum CliError {
    /// Bad input: malformed corpus/config, unknown words, missing files. Exit 2.
    Input(String),
    /// Inconsistent state: missing or locked artifacts, slice mismatches. Exit 3.
    State(String),
    /// Numerical divergence during training. Exit 4.
    Diverged(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::State(_) => 3,
            CliError::Diverged(_) => 4,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(msg) | CliError::State(msg) | CliError::Diverged(msg) => {
                write!(f, "{msg}")
            }
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<PersistError> for CliError {
    fn from(e: PersistError) -> Self {
        CliError::State(e.to_string())
    }
}

impl From<ContinualError> for CliError {
    fn from(e: ContinualError) -> Self {
        match e {
            ContinualError::NonFinite { .. } => CliError::Diverged(e.to_string()),
            ContinualError::Model(ModelError::NonFinite(_)) => CliError::Diverged(e.to_string()),
            ContinualError::EmptySlice { .. } => CliError::Input(e.to_string()),
            other => CliError::State(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::UnknownWord(_) | EvalError::DegenerateSamples => {
                CliError::Input(e.to_string())
            }
            other => CliError::State(other.to_string()),
        }
    }
}

fn io_input(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

/// Effective configuration: file, then CLI overrides, then validation.
fn load_config(common: &Common) -> Result<RunConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = Some(out.display().to_string());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    cfg.output_dir
        .as_ref()
        .map(PathBuf::from)
        .ok_or_else(|| CliError::Input("no output directory (set output_dir or --out)".into()))
}

fn store_dir(out: &Path) -> PathBuf {
    out.join("store")
}

fn timeline_dir(out: &Path) -> PathBuf {
    out.join("timeline")
}

/// Bookkeeping for an ingested or synthesized store.
#[derive(Debug, Serialize, Deserialize)]
struct StoreManifest {
    version: String,
    config_hash: String,
    seed: u64,
    synthetic: bool,
    vocab_size: usize,
    slices: usize,
    docs_kept: usize,
    docs_dropped: usize,
    train_docs: usize,
    val_docs: usize,
    test_docs: usize,
    labels: Vec<i64>,
}

fn write_store_dir(
    dir: &Path,
    vocab: &Vocabulary,
    slices: &[TimeSlice],
    cfg: &RunConfig,
    synthetic: bool,
    docs_dropped: usize,
) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_input(dir, e))?;
    vocab.write(&dir.join("vocab.txt"))?;
    corpus::write_store(&dir.join("store.jsonl"), slices)?;
    let count_split = |split: Split| -> usize { slices.iter().map(|s| s.count_in(split)).sum() };
    let manifest = StoreManifest {
        version: contm_core::ARTIFACT_VERSION.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        synthetic,
        vocab_size: vocab.len(),
        slices: slices.len(),
        docs_kept: slices.iter().map(|s| s.docs.len()).sum(),
        docs_dropped,
        train_docs: count_split(Split::Train),
        val_docs: count_split(Split::Val),
        test_docs: count_split(Split::Test),
        labels: slices.iter().map(|s| s.label).collect(),
    };
    let path = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::State(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, json + "\n").map_err(|e| io_input(&path, e))
}

pub fn ingest(common: &Common, corpus_flag: Option<&Path>) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    let corpus_path = corpus_flag
        .map(Path::to_path_buf)
        .or_else(|| cfg.corpus.as_ref().map(PathBuf::from))
        .ok_or_else(|| CliError::Input("no corpus (set corpus or --corpus)".into()))?;

    let stopwords = match &cfg.stopwords {
        Some(path) => corpus::load_stopwords(Path::new(path))?,
        None => corpus::default_stopwords(),
    };

    let raw = read_corpus(&corpus_path)?;
    if raw.is_empty() {
        return Err(CliError::Input(format!(
            "corpus {} has no documents",
            corpus_path.display()
        )));
    }
    let tokenized: Vec<Vec<String>> = raw.iter().map(|d| tokenize(&d.text, &stopwords)).collect();
    let vocab = build_vocabulary(&tokenized, cfg.min_df, cfg.max_df)?;

    let mut bucketed = Vec::new();
    let mut dropped = 0usize;
    for (doc, tokens) in raw.iter().zip(&tokenized) {
        match vectorize(tokens, &vocab) {
            Ok(bow) => bucketed.push(BucketedDoc {
                key: doc_key(&doc.id),
                label: bucket_label(doc.timestamp, cfg.granularity),
                bow,
            }),
            Err(CorpusError::EmptyDocument) => {
                log::warn!("dropping document {:?}: no in-vocabulary tokens", doc.id);
                dropped += 1;
            }
            Err(e) => return Err(e.into()),
        }
    }
    if bucketed.is_empty() {
        return Err(CliError::Input("every document was pruned away".into()));
    }
    let slices = slice_and_split(
        bucketed,
        (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
        cfg.seed,
    );
    write_store_dir(&store_dir(&out), &vocab, &slices, &cfg, false, dropped)?;
    println!(
        "ingested {} documents ({} dropped) into {} slices, vocabulary {}",
        slices.iter().map(|s| s.docs.len()).sum::<usize>(),
        dropped,
        slices.len(),
        vocab.len()
    );
    Ok(())
}

pub fn synth(common: &Common) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    let truth = block_topic_matrix(cfg.k, cfg.synth_v, cfg.synth_strength);
    let deltas = vec![
        contm_core::model::TopicMatrix::zeros(cfg.k, cfg.synth_v, TopicRole::Delta);
        cfg.synth_slices
    ];
    let prior = PriorConcentration::symmetric(cfg.k, cfg.alpha0);
    let slices = generate_synthetic(
        &truth,
        &deltas,
        &prior,
        &vec![cfg.synth_docs; cfg.synth_slices],
        cfg.synth_len,
        (cfg.train_ratio, cfg.val_ratio, cfg.test_ratio),
        cfg.seed,
    );
    let width = (cfg.synth_v.max(2) - 1).to_string().len();
    let vocab = Vocabulary::from_terms(
        (0..cfg.synth_v)
            .map(|i| format!("w{i:0width$}"))
            .collect(),
    );
    let dir = store_dir(&out);
    write_store_dir(&dir, &vocab, &slices, &cfg, true, 0)?;
    // Keep the generating topics next to the store for recovery checks.
    contm_core::model::checkpoint::write_topic_matrix(
        &dir.join("truth.ckpt"),
        &truth,
        &contm_core::model::checkpoint::CkptMeta {
            seed: cfg.seed,
            slice: 0,
            hyper: serde_json::json!({ "config_hash": cfg.hash() }),
        },
    )
    .map_err(|e| CliError::State(e.to_string()))?;
    println!(
        "synthesized {} slices x {} documents over a {}-word vocabulary",
        cfg.synth_slices, cfg.synth_docs, cfg.synth_v
    );
    Ok(())
}

fn read_store_or_fail(out: &Path) -> Result<(Vocabulary, Vec<TimeSlice>), CliError> {
    let dir = store_dir(out);
    let vocab_path = dir.join("vocab.txt");
    if !vocab_path.exists() {
        return Err(CliError::State(format!(
            "no ingested store under {} (run `contm ingest` or `contm synth` first)",
            dir.display()
        )));
    }
    let vocab = Vocabulary::read(&vocab_path)?;
    let slices = read_store(&dir.join("store.jsonl"))?;
    Ok((vocab, slices))
}

pub fn train(common: &Common, stream: bool, resume: bool) -> Result<(), CliError> {
    let cfg = load_config(common)?;
    let out = out_dir(&cfg)?;
    let (vocab, _) = read_store_or_fail(&out)?;
    let sched = RhoSchedule::Power(cfg.schedule());
    let train_cfg = cfg.train_config();
    let hash = cfg.hash();
    let tl_dir = timeline_dir(&out);

    let (mut trainer, mut writer) = if resume {
        let manifest = read_manifest(&tl_dir)?;
        if manifest.config_hash != hash {
            return Err(CliError::State(format!(
                "timeline {} was trained with config hash {}, current is {hash}",
                tl_dir.display(),
                manifest.config_hash
            )));
        }
        let global = read_current_global(&tl_dir)?;
        let next_t = manifest.completed() + 1;
        let prev_encoder = if train_cfg.warm_start {
            read_last_encoder(&tl_dir)?
        } else {
            None
        };
        let writer = TimelineWriter::resume(&tl_dir)?;
        (
            StreamTrainer::resume(global, next_t, prev_encoder, sched, train_cfg),
            writer,
        )
    } else {
        let trainer = StreamTrainer::new(cfg.k, vocab.len(), sched, train_cfg);
        let writer = TimelineWriter::create(
            &tl_dir,
            &hash,
            sched,
            train_cfg,
            cfg.k,
            vocab.len(),
            trainer.global(),
        )?;
        (trainer, writer)
    };

    let store_file = store_dir(&out).join("store.jsonl");
    let mut trained = 0usize;
    loop {
        let slices = read_store(&store_file)?;
        let next = trainer.next_slice_index();
        let mut any = false;
        for slice in slices.iter().filter(|s| s.t >= next) {
            let max_word = slice
                .docs
                .iter()
                .flat_map(|d| d.bow.term_indices())
                .max()
                .unwrap_or(0) as usize;
            if max_word >= vocab.len() {
                return Err(CliError::State(format!(
                    "slice {} references word {max_word}, outside the {}-term vocabulary",
                    slice.t,
                    vocab.len()
                )));
            }
            let rec = trainer.push_slice(slice)?;
            writer.append_slice(rec)?;
            trained += 1;
            log::info!("slice {} done (rho {:.4})", rec.t, rec.rho);
            any = true;
        }
        if !stream || !any {
            break;
        }
    }
    let completed = trainer.next_slice_index() - 1;
    println!(
        "trained {trained} new slices (timeline now covers {completed}) at {}",
        tl_dir.display()
    );
    Ok(())
}

/// Metric selection parsed from `--metric`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Metric {
    Tc,
    Td,
    Tq,
    Tts,
    Ppl,
    Ttest,
}

fn parse_metrics(raw: &[String]) -> Result<HashSet<Metric>, CliError> {
    if raw.is_empty() {
        return Ok([Metric::Tc, Metric::Td, Metric::Tq, Metric::Tts, Metric::Ppl]
            .into_iter()
            .collect());
    }
    let mut out = HashSet::new();
    for name in raw {
        out.insert(match name.trim() {
            "tc" => Metric::Tc,
            "td" => Metric::Td,
            "tq" => Metric::Tq,
            "tts" => Metric::Tts,
            "ppl" => Metric::Ppl,
            "ttest" => Metric::Ttest,
            other => {
                return Err(CliError::Input(format!(
                    "unknown metric {other:?} (expected tc, td, tq, tts, ppl, ttest)"
                )))
            }
        });
    }
    Ok(out)
}

/// Per-horizon predictive perplexity over the test split: slice t+h docs
/// under the model trained through slice t.
fn horizon_ppls(
    timeline: &ModelTimeline,
    slices: &[TimeSlice],
    horizon: usize,
    alpha_min: f64,
) -> Result<Vec<(usize, f64)>, CliError> {
    if horizon == 0 {
        return Err(CliError::Input("horizon must be >= 1".into()));
    }
    let mut out = Vec::new();
    for rec in &timeline.slices {
        let target = rec.t + horizon;
        let Some(future) = slices.iter().find(|s| s.t == target) else {
            continue;
        };
        let bows: Vec<&contm_core::corpus::BowVector> = future
            .docs_in(Split::Test)
            .map(|d| &d.bow)
            .collect();
        if bows.is_empty() {
            log::warn!("slice {target} has no test documents; skipping");
            continue;
        }
        let ppl = predictive_perplexity(&rec.encoder, &rec.global_after, bows, alpha_min)?;
        out.push((target, ppl));
    }
    if out.is_empty() {
        return Err(CliError::State(format!(
            "no slice pair supports horizon {horizon} (timeline has {} slices)",
            timeline.slices.len()
        )));
    }
    Ok(out)
}

pub fn eval(
    common: &Common,
    metric: &[String],
    horizon: usize,
    topn: Option<usize>,
    against: Option<&Path>,
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(n) = topn {
        cfg.topn = n;
    }
    let out = out_dir(&cfg)?;
    let metrics = parse_metrics(metric)?;
    if metrics.contains(&Metric::Ttest) && against.is_none() {
        return Err(CliError::Input("--metric ttest requires --against RUN_DIR".into()));
    }
    let (_, slices) = read_store_or_fail(&out)?;
    let (_, timeline) = load_timeline(&timeline_dir(&out))?;
    if timeline.slices.is_empty() {
        return Err(CliError::State("timeline has no trained slices".into()));
    }
    if timeline.slices.len() < slices.len() {
        log::warn!(
            "timeline covers {} of {} stored slices; evaluating the trained prefix",
            timeline.slices.len(),
            slices.len()
        );
    }

    let mut report = MetricReport::new(&cfg.hash());
    let want_quality = metrics.contains(&Metric::Tc)
        || metrics.contains(&Metric::Td)
        || metrics.contains(&Metric::Tq);
    if want_quality {
        let mut tc_all = Vec::new();
        let mut td_all = Vec::new();
        for rec in &timeline.slices {
            let tops = top_words(&rec.local, cfg.topn);
            let wanted: HashSet<u32> = tops.topics.iter().flatten().copied().collect();
            let store = build_cooc_restricted(&slices, rec.t, &wanted);
            let (_, tc) = npmi_coherence(&tops, &store, NPMI_EPS)?;
            let td = topic_diversity(&tops)?;
            tc_all.push(tc);
            td_all.push(td);
            report.per_slice.push(SliceMetrics {
                slice: rec.t,
                tc: metrics.contains(&Metric::Tc).then_some(tc),
                td: metrics.contains(&Metric::Td).then_some(td),
                tq: metrics.contains(&Metric::Tq).then_some(tc * td),
            });
        }
        let t = tc_all.len() as f64;
        if metrics.contains(&Metric::Tc) {
            report.mean_tc = Some(tc_all.iter().sum::<f64>() / t);
        }
        if metrics.contains(&Metric::Td) {
            report.mean_td = Some(td_all.iter().sum::<f64>() / t);
        }
        if metrics.contains(&Metric::Tq) {
            let counts = vec![cfg.k; tc_all.len()];
            report.tq = Some(topic_quality(&tc_all, &td_all, &counts));
        }
    }
    if metrics.contains(&Metric::Tts) {
        let locals: Vec<&contm_core::model::TopicMatrix> =
            timeline.slices.iter().map(|r| &r.local).collect();
        report.tts = Some(tts(&locals, cfg.topn)?);
    }
    if metrics.contains(&Metric::Ppl) || metrics.contains(&Metric::Ttest) {
        let ppls = horizon_ppls(&timeline, &slices, horizon, cfg.alpha_min)?;
        if metrics.contains(&Metric::Ppl) {
            for (target, ppl) in &ppls {
                report.ppl.insert(*target, *ppl);
            }
        }
        if let Some(other_dir) = against {
            let (_, other_timeline) = load_timeline(&timeline_dir(other_dir))?;
            let other_ppls = horizon_ppls(&other_timeline, &slices, horizon, cfg.alpha_min)?;
            let mine: Vec<f64> = ppls.iter().map(|&(_, p)| p).collect();
            let theirs: Vec<f64> = other_ppls.iter().map(|&(_, p)| p).collect();
            let (t_stat, p_value) = welch_t_test(&mine, &theirs)?;
            report.ttest = Some(TTestResult { t_stat, p_value });
        }
    }

    let reports = out.join("reports");
    std::fs::create_dir_all(&reports).map_err(|e| io_input(&reports, e))?;
    let csv_path = reports.join("report.csv");
    std::fs::write(&csv_path, report.to_csv()).map_err(|e| io_input(&csv_path, e))?;
    let json_path = reports.join("report.json");
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| CliError::State(format!("report serialization: {e}")))?;
    std::fs::write(&json_path, json + "\n").map_err(|e| io_input(&json_path, e))?;
    println!("wrote {} and {}", csv_path.display(), json_path.display());
    Ok(())
}

fn parse_slice_range(raw: Option<&str>, t_max: usize) -> Result<(usize, usize), CliError> {
    let Some(raw) = raw else {
        return Ok((1, t_max));
    };
    let parsed = match raw.split_once('-') {
        Some((lo, hi)) => (lo.trim().parse::<usize>(), hi.trim().parse::<usize>()),
        None => {
            let t = raw.trim().parse::<usize>();
            (t.clone(), t)
        }
    };
    match parsed {
        (Ok(lo), Ok(hi)) if lo >= 1 && lo <= hi => {
            if hi > t_max {
                Err(CliError::State(format!(
                    "slice range {raw} exceeds the timeline ({t_max} slices)"
                )))
            } else {
                Ok((lo, hi))
            }
        }
        _ => Err(CliError::State(format!("bad slice range {raw:?}"))),
    }
}

pub fn topics(
    common: &Common,
    topn: Option<usize>,
    slice_range: Option<&str>,
    words: &[String],
) -> Result<(), CliError> {
    let mut cfg = load_config(common)?;
    if let Some(n) = topn {
        cfg.topn = n;
    }
    let out = out_dir(&cfg)?;
    let (vocab, _) = read_store_or_fail(&out)?;
    let (_, timeline) = load_timeline(&timeline_dir(&out))?;
    let t_max = timeline.slices.len();
    if t_max == 0 {
        return Err(CliError::State("timeline has no trained slices".into()));
    }
    let (lo, hi) = parse_slice_range(slice_range, t_max)?;

    let word_ids: Vec<(String, usize)> = words
        .iter()
        .map(|w| {
            vocab
                .index_of(w)
                .map(|idx| (w.clone(), idx))
                .ok_or_else(|| CliError::Input(format!("word {w:?} is not in the vocabulary")))
        })
        .collect::<Result<_, _>>()?;

    let hash = cfg.hash();
    let topics_path = out.join("topics.jsonl");
    let file = std::fs::File::create(&topics_path).map_err(|e| io_input(&topics_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    let meta = serde_json::json!({
        "type": "meta",
        "version": contm_core::ARTIFACT_VERSION,
        "config_hash": hash,
        "topn": cfg.topn,
    });
    writeln!(w, "{meta}").map_err(|e| io_input(&topics_path, e))?;
    for rec in timeline.slices.iter().filter(|r| r.t >= lo && r.t <= hi) {
        let tops = top_words(&rec.local, cfg.topn);
        for (topic_idx, word_idxs) in tops.topics.iter().enumerate() {
            let probs = topic_word_probs(&rec.local, topic_idx);
            let entries: Vec<serde_json::Value> = word_idxs
                .iter()
                .map(|&widx| {
                    serde_json::json!({
                        "word": vocab.term(widx as usize),
                        "p": probs[widx as usize],
                    })
                })
                .collect();
            let line = serde_json::json!({
                "type": "topic",
                "slice": rec.t,
                "label": rec.label,
                "topic": topic_idx,
                "words": entries,
            });
            writeln!(w, "{line}").map_err(|e| io_input(&topics_path, e))?;
        }
    }
    w.flush().map_err(|e| io_input(&topics_path, e))?;

    if !word_ids.is_empty() {
        let traj_path = out.join("trajectories.jsonl");
        let file = std::fs::File::create(&traj_path).map_err(|e| io_input(&traj_path, e))?;
        let mut w = std::io::BufWriter::new(file);
        writeln!(w, "{meta}").map_err(|e| io_input(&traj_path, e))?;
        for rec in timeline.slices.iter().filter(|r| r.t >= lo && r.t <= hi) {
            let per_topic: Vec<Vec<f64>> = (0..rec.local.num_topics())
                .map(|k| topic_word_probs(&rec.local, k))
                .collect();
            for (word, idx) in &word_ids {
                let probs: Vec<f64> = per_topic.iter().map(|p| p[*idx]).collect();
                let line = serde_json::json!({
                    "type": "trajectory",
                    "word": word,
                    "slice": rec.t,
                    "label": rec.label,
                    "probs": probs,
                });
                writeln!(w, "{line}").map_err(|e| io_input(&traj_path, e))?;
            }
        }
        w.flush().map_err(|e| io_input(&traj_path, e))?;
        println!("wrote {} and {}", topics_path.display(), traj_path.display());
    } else {
        println!("wrote {}", topics_path.display());
    }
    Ok(())
}
