//! `qa train | answer | eval`.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use kge::io::{
    load_model, parse_aliases, parse_simplequestions, parse_triples, parse_wikimovies, save_model,
    ModelTask,
};
use kge::qa::{
    annotate_pairs, answer_question, evaluate_qa, prediction_line, train_relation_classifier,
    AliasTable, QaKb, QaPair, QaTraining, RelationClassifier, INVERSE_SUFFIX,
};
use kge::{LossConfig, TrainConfig};
use log::{info, warn};

use crate::args::{KbArgs, QaAnswerArgs, QaEvalArgs, QaFormat, QaTrainArgs};
use crate::kbc::train_report;
use crate::manifest::{sidecar, RunManifest};
use crate::util::{dataset_name, require_file, resolve_threads, usage};

const FREQ_SUFFIX: &str = ".freq.tsv";

pub fn load_pairs(path: &Path, format: QaFormat) -> Result<Vec<QaPair>> {
    require_file(path, "--pairs")?;
    let parsed = match format {
        QaFormat::SimpleQuestions => parse_simplequestions(path),
        QaFormat::WikiMovies => parse_wikimovies(path),
    }
    .with_context(|| format!("reading {}", path.display()))?;
    if parsed.items.is_empty() {
        anyhow::bail!("{}: no question/answer pairs", path.display());
    }
    Ok(parsed.items)
}

pub fn load_kb(args: &KbArgs, inverse: bool) -> Result<QaKb> {
    require_file(&args.kb, "--kb")?;
    if let Some(aliases) = &args.aliases {
        require_file(aliases, "--aliases")?;
    } else if args.format == QaFormat::SimpleQuestions {
        return Err(usage("--aliases is required for simplequestions"));
    }
    let mut store =
        parse_triples(&args.kb).with_context(|| format!("reading {}", args.kb.display()))?;
    if inverse {
        store.add_inverse_relations(INVERSE_SUFFIX);
    }
    Ok(QaKb::new(store))
}

/// Entity names (WikiMovies) plus the alias file, without frequencies.
pub fn alias_table(args: &KbArgs, kb: &QaKb) -> Result<AliasTable> {
    let mut table = match args.format {
        QaFormat::WikiMovies => AliasTable::from_entity_names(&kb.store.entities),
        QaFormat::SimpleQuestions => AliasTable::new(),
    };
    if let Some(path) = &args.aliases {
        let parsed = parse_aliases(path).with_context(|| format!("reading {}", path.display()))?;
        let mut unknown = 0;
        for (entity, surface) in &parsed.items {
            match kb.entity(entity) {
                Some(id) => table.insert(id, surface),
                None => unknown += 1,
            }
        }
        if unknown > 0 {
            warn!("{unknown} alias entries name entities outside the KB");
        }
    }
    if table.is_empty() {
        warn!("alias table is empty; no entity can be linked");
    }
    Ok(table)
}

/// Counts subject frequencies into the table; pairs without a supporting
/// fact are annotated through the linker first.
pub fn prepare_training(pairs: &mut [QaPair], kb: &QaKb, table: &mut AliasTable) {
    let missing = pairs
        .iter()
        .filter(|p| p.subject.is_none() || p.relation.is_none())
        .count();
    for pair in pairs.iter() {
        if let (Some(subject), Some(_)) = (&pair.subject, &pair.relation) {
            if let Some(id) = kb.entity(subject) {
                table.add_frequency(id);
            }
        }
    }
    if missing > 0 {
        let annotated = annotate_pairs(pairs, kb, table);
        info!("annotated {annotated} of {missing} pairs with a supporting fact");
    }
}

pub fn qa_config(
    dim: usize,
    epoch: usize,
    lr: f32,
    threads: Option<usize>,
    seed: u64,
) -> Result<TrainConfig> {
    let config = TrainConfig {
        epochs: epoch,
        lr0: lr,
        loss: LossConfig::softmax(),
        threads: resolve_threads(threads),
        seed,
        dim,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

pub fn train_classifier(
    pairs: &[QaPair],
    kb: &QaKb,
    buckets: u32,
    config: &TrainConfig,
) -> Result<QaTraining> {
    let training = train_relation_classifier(pairs, kb, buckets, config)?;
    if training.skipped > 0 {
        warn!("{} pairs gave no training example", training.skipped);
    }
    Ok(training)
}

fn write_frequencies(path: &Path, table: &AliasTable, kb: &QaKb) -> Result<()> {
    let mut out = String::new();
    for (entity, count) in table.frequencies() {
        writeln!(out, "{}\t{count}", kb.entity_name(entity)).expect("write to string");
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_frequencies(path: &Path, table: &mut AliasTable, kb: &QaKb) -> Result<()> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    for (n, line) in text.lines().enumerate() {
        let parsed = line
            .split_once('\t')
            .and_then(|(name, count)| Some((name, count.parse::<u32>().ok()?)));
        let Some((name, count)) = parsed else {
            anyhow::bail!("{}:{}: expected <entity>\\t<count>", path.display(), n + 1);
        };
        if let Some(id) = kb.entity(name) {
            table.set_frequency(id, count);
        }
    }
    Ok(())
}

pub fn cmd_train(args: QaTrainArgs) -> Result<()> {
    let started = Instant::now();
    let config = qa_config(
        args.optim.dim,
        args.optim.epoch,
        args.optim.lr,
        args.optim.threads,
        args.optim.seed,
    )?;
    let buckets = if args.bigrams { args.buckets } else { 0 };
    let kb = load_kb(&args.kb, args.inverse)?;
    let mut table = alias_table(&args.kb, &kb)?;
    let mut pairs = load_pairs(&args.pairs, args.kb.format)?;
    prepare_training(&mut pairs, &kb, &mut table);

    let mut manifest = RunManifest::new("qa train", config.seed)
        .param("dim", config.dim)
        .param("epoch", config.epochs)
        .param("lr", config.lr0)
        .param("buckets", buckets)
        .param("inverse", args.inverse)
        .param("threads", config.threads)
        .param("format", format!("{:?}", args.kb.format))
        .dataset("pairs", &args.pairs)
        .dataset("kb", &args.kb.kb);
    if let Some(aliases) = &args.kb.aliases {
        manifest = manifest.dataset("aliases", aliases);
    }

    let training = train_classifier(&pairs, &kb, buckets, &config)?;
    println!(
        "{}",
        manifest.line(&train_report(&dataset_name(&args.pairs), &training.stats))
    );
    save_model(&training.classifier.to_model_file()?, &args.out)
        .with_context(|| format!("writing {}", args.out.display()))?;
    write_frequencies(&sidecar(&args.out, FREQ_SUFFIX), &table, &kb)?;
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    manifest.write(&sidecar(&args.out, ".manifest.json"))?;
    info!("wrote {}", args.out.display());
    Ok(())
}

/// Loads a classifier with the KB and linker it was trained against.
fn load_for_inference(
    model: &Path,
    kb_args: &KbArgs,
) -> Result<(RelationClassifier, QaKb, AliasTable)> {
    require_file(model, "--model")?;
    let file = load_model(model).with_context(|| format!("loading {}", model.display()))?;
    if file.task != ModelTask::QaRelation {
        return Err(usage(format!(
            "{} is a {} model, not a QA model",
            model.display(),
            file.task
        )));
    }
    let classifier = RelationClassifier::from_model_file(file)?;
    let inverse = classifier
        .relation_names
        .iter()
        .any(|r| r.ends_with(INVERSE_SUFFIX));
    let mut kb = load_kb(kb_args, false)?;
    if inverse
        && classifier
            .relation_names
            .iter()
            .any(|r| kb.store.relations.get(r).is_none())
    {
        let mut store = kb.store;
        store.add_inverse_relations(INVERSE_SUFFIX);
        kb = QaKb::new(store);
    }
    let mut table = alias_table(kb_args, &kb)?;
    let freq = sidecar(model, FREQ_SUFFIX);
    if freq.is_file() {
        read_frequencies(&freq, &mut table, &kb)?;
    } else {
        warn!(
            "{} missing; linking without subject frequencies",
            freq.display()
        );
    }
    Ok((classifier, kb, table))
}

pub fn cmd_answer(args: QaAnswerArgs) -> Result<()> {
    if args.question.trim().is_empty() {
        return Err(usage("--question is empty"));
    }
    let (classifier, kb, table) = load_for_inference(&args.model, &args.kb)?;
    let binding = classifier.bind(&kb);
    let answer = answer_question(&args.question, &classifier, &binding, &kb, &table);
    println!("{}", prediction_line(&args.question, answer.as_ref(), &kb));
    Ok(())
}

pub fn cmd_eval(args: QaEvalArgs) -> Result<()> {
    let started = Instant::now();
    let (classifier, kb, table) = load_for_inference(&args.model, &args.kb)?;
    let pairs = load_pairs(&args.pairs, args.kb.format)?;
    let mut manifest = RunManifest::new("qa eval", classifier.model.seed())
        .param("format", format!("{:?}", args.kb.format))
        .dataset("model", &args.model)
        .dataset("kb", &args.kb.kb)
        .dataset("pairs", &args.pairs);
    if let Some(aliases) = &args.kb.aliases {
        manifest = manifest.dataset("aliases", aliases);
    }
    let eval = evaluate_qa(&pairs, &classifier, &kb, &table)?;
    let dataset = dataset_name(&args.pairs);
    println!("{}", manifest.line(&eval.report(&dataset)));
    if eval.relation_total > 0 {
        println!("{}", manifest.line(&eval.relation_report(&dataset)));
    }
    info!("answered {} of {} questions", eval.answered, eval.total);
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    info!("manifest {}", manifest.to_json());
    Ok(())
}
