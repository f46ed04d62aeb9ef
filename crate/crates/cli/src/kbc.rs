//! `train` and `eval` for knowledge-base completion.

use std::ops::Range;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use kge::io::{
    ingest_triples, load_model, parse_triples, read_triples_in_vocab, save_model, ModelFile,
    ModelTask,
};
use kge::kbc::{
    encode, entity_queries, hit_percent_k, hit_percent_metric, rank_queries, relation_queries,
    RankedQueries,
};
use kge::{
    build_vocab, train, DirectionalVocab, EmbeddingModel, EvalReport, KbcTask, KnownIndex,
    RankMode, TrainConfig, TrainStats, Triple, TripleStore,
};
use log::info;

use crate::args::{EvalArgs, Mode, Task, TrainArgs};
use crate::manifest::{sidecar, RunManifest};
use crate::util::{dataset_name, loss_config, require_file, resolve_threads, usage};

pub fn kbc_task(task: Task) -> KbcTask {
    match task {
        Task::Entity => KbcTask::EntityPrediction,
        Task::Relation => KbcTask::RelationPrediction,
    }
}

/// Train, valid and test triples interned into one store; valid and test
/// are optional.
pub struct Splits {
    pub store: TripleStore,
    pub train: Range<usize>,
    pub valid: Range<usize>,
    pub test: Range<usize>,
}

impl Splits {
    pub fn load(train: &Path, valid: Option<&Path>, test: Option<&Path>) -> Result<Self> {
        let mut store =
            parse_triples(train).with_context(|| format!("reading {}", train.display()))?;
        let train = 0..store.len();
        let next = |path: Option<&Path>, store: &mut TripleStore| -> Result<Range<usize>> {
            let start = store.len();
            if let Some(path) = path {
                ingest_triples(store, path)
                    .with_context(|| format!("reading {}", path.display()))?;
            }
            Ok(start..store.len())
        };
        let valid = next(valid, &mut store)?;
        let test = next(test, &mut store)?;
        info!(
            "{} entities, {} relations, {}/{}/{} train/valid/test triples",
            store.entities.len(),
            store.relations.len(),
            train.len(),
            valid.len(),
            test.len()
        );
        Ok(Splits {
            store,
            train,
            valid,
            test,
        })
    }

    pub fn triples(&self, range: &Range<usize>) -> &[Triple] {
        &self.store.triples[range.clone()]
    }

    /// Training triples, optionally followed by the validation split.
    pub fn training(&self, include_valid: bool) -> &[Triple] {
        let end = if include_valid {
            self.valid.end
        } else {
            self.train.end
        };
        &self.store.triples[..end]
    }
}

pub fn train_on(
    triples: &[Triple],
    vocab: &DirectionalVocab,
    config: &TrainConfig,
) -> Result<(EmbeddingModel<f32>, TrainStats)> {
    config
        .loss
        .validate(vocab.output_size())
        .map_err(|e| usage(e.to_string()))?;
    let data = encode(triples, vocab)?;
    Ok(train(
        &data,
        config,
        vocab.input_size(),
        vocab.output_size(),
    )?)
}

/// Ranks `triples`; a `None` entry (unknown entity or relation) is a miss.
pub fn rank(
    model: &EmbeddingModel<f32>,
    vocab: &DirectionalVocab,
    triples: &[Option<Triple>],
    known: &KnownIndex,
) -> Result<RankedQueries> {
    let queries = match vocab.task {
        KbcTask::EntityPrediction => entity_queries(triples, vocab, known),
        KbcTask::RelationPrediction => relation_queries(triples, vocab),
    };
    Ok(rank_queries(model, &queries)?)
}

/// The model-selection metric: filtered Hit@10 for entities, Hit@5% for
/// relations.
pub fn selection_report(
    model: &EmbeddingModel<f32>,
    vocab: &DirectionalVocab,
    triples: &[Triple],
    known: &KnownIndex,
    dataset: &str,
) -> Result<EvalReport> {
    let triples: Vec<Option<Triple>> = triples.iter().copied().map(Some).collect();
    let ranked = rank(model, vocab, &triples, known)?;
    Ok(match vocab.task {
        KbcTask::EntityPrediction => {
            ranked.report(dataset, "hit@10".into(), 10, RankMode::Filtered)
        }
        KbcTask::RelationPrediction => {
            let k = hit_percent_k(5.0, vocab.output_size())?;
            ranked.report(dataset, hit_percent_metric(5.0, k), k, RankMode::Raw)
        }
    })
}

/// Test-set reports: raw and filtered Hit@10, or Hit@5%.
pub fn test_reports(
    model: &EmbeddingModel<f32>,
    vocab: &DirectionalVocab,
    triples: &[Triple],
    known: &KnownIndex,
    dataset: &str,
) -> Result<Vec<EvalReport>> {
    let triples: Vec<Option<Triple>> = triples.iter().copied().map(Some).collect();
    let ranked = rank(model, vocab, &triples, known)?;
    Ok(match vocab.task {
        KbcTask::EntityPrediction => [RankMode::Raw, RankMode::Filtered]
            .into_iter()
            .map(|mode| ranked.report(dataset, "hit@10".into(), 10, mode))
            .collect(),
        KbcTask::RelationPrediction => {
            let k = hit_percent_k(5.0, vocab.output_size())?;
            vec![ranked.report(dataset, hit_percent_metric(5.0, k), k, RankMode::Raw)]
        }
    })
}

pub fn train_report(dataset: &str, stats: &TrainStats) -> EvalReport {
    EvalReport {
        dataset: dataset.to_owned(),
        metric: "train-loss".into(),
        mode: None,
        value: stats.final_avg_loss,
        num_queries: stats.examples_processed as usize,
        seconds: stats.wall_time_seconds,
    }
}

pub fn model_file(
    vocab: &DirectionalVocab,
    store: &TripleStore,
    model: EmbeddingModel<f32>,
) -> Result<ModelFile> {
    let task = match vocab.task {
        KbcTask::EntityPrediction => ModelTask::EntityPrediction,
        KbcTask::RelationPrediction => ModelTask::RelationPrediction,
    };
    Ok(ModelFile::new(
        task,
        vocab.input_names(&store.entities, &store.relations),
        0,
        vocab.output_names(&store.entities, &store.relations),
        model,
    )?)
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let started = Instant::now();
    require_file(&args.train, "--train")?;
    if let Some(valid) = &args.valid {
        require_file(valid, "--valid")?;
    }
    let config = TrainConfig {
        epochs: args.optim.epoch,
        lr0: args.optim.lr,
        loss: loss_config(args.loss, args.neg)?,
        threads: resolve_threads(args.optim.threads),
        seed: args.optim.seed,
        dim: args.optim.dim,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;

    let mut manifest = RunManifest::new("train", config.seed)
        .param("task", kbc_task(args.task).to_string())
        .param("dim", config.dim)
        .param("epoch", config.epochs)
        .param("lr", config.lr0)
        .param("loss", config.loss.kind.to_string())
        .param(
            "neg",
            (args.loss == crate::args::Loss::Ns).then_some(config.loss.negatives),
        )
        .param("threads", config.threads)
        .param("include_valid", args.include_valid)
        .dataset("train", &args.train);
    if let Some(valid) = &args.valid {
        manifest = manifest.dataset("valid", valid);
    }

    let splits = Splits::load(&args.train, args.valid.as_deref(), None)?;
    let vocab = build_vocab(&splits.store, kbc_task(args.task))?;
    let (model, stats) = train_on(splits.training(args.include_valid), &vocab, &config)?;
    println!(
        "{}",
        manifest.line(&train_report(&dataset_name(&args.train), &stats))
    );

    if let Some(valid) = args.valid.as_deref().filter(|_| !args.include_valid) {
        let known = splits.store.known_index();
        let report = selection_report(
            &model,
            &vocab,
            splits.triples(&splits.valid),
            &known,
            &dataset_name(valid),
        )?;
        println!("{}", manifest.line(&report));
    }

    let file = model_file(&vocab, &splits.store, model)?;
    save_model(&file, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    manifest.write(&sidecar(&args.out, ".manifest.json"))?;
    info!("wrote {}", args.out.display());
    Ok(())
}

fn model_vocab(file: &ModelFile) -> Result<(DirectionalVocab, kge::Vocab, kge::Vocab)> {
    let task = match file.task {
        ModelTask::EntityPrediction => KbcTask::EntityPrediction,
        ModelTask::RelationPrediction => KbcTask::RelationPrediction,
        ModelTask::QaRelation => return Err(usage("this is a QA model; use `kge qa eval`")),
    };
    Ok(DirectionalVocab::from_names(
        task,
        &file.input_tokens,
        &file.output_labels,
    )?)
}

pub fn cmd_eval(args: EvalArgs) -> Result<()> {
    let started = Instant::now();
    require_file(&args.model, "--model")?;
    require_file(&args.test, "--test")?;
    for path in &args.filter {
        require_file(path, "--filter")?;
    }
    let file =
        load_model(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let (vocab, entities, relations) = model_vocab(&file)?;

    let modes: Vec<RankMode> = if args.hit_percent.is_some() {
        if vocab.task == KbcTask::EntityPrediction {
            return Err(usage("--hit-percent needs a relation-prediction model"));
        }
        vec![RankMode::Raw]
    } else {
        match args.mode {
            Mode::Raw => vec![RankMode::Raw],
            Mode::Filtered => vec![RankMode::Filtered],
            Mode::Both => vec![RankMode::Raw, RankMode::Filtered],
        }
    };
    if modes.contains(&RankMode::Filtered) {
        if vocab.task == KbcTask::RelationPrediction {
            return Err(usage(
                "filtered ranking applies to entity-prediction models",
            ));
        }
        if args.filter.is_empty() {
            return Err(usage("filtered mode needs --filter <train,valid,test>"));
        }
    }
    let k = match args.hit_percent {
        Some(p) => hit_percent_k(p, vocab.output_size()).map_err(|e| usage(e.to_string()))?,
        None if args.k == 0 => return Err(usage("--k must be positive")),
        None => args.k,
    };

    let mut manifest = RunManifest::new("eval", file.model.seed())
        .param("k", k)
        .param("hit_percent", args.hit_percent)
        .dataset("model", &args.model)
        .dataset("test", &args.test);
    for (i, path) in args.filter.iter().enumerate() {
        manifest = manifest.dataset(&format!("filter{i}"), path);
    }

    let test = read_triples_in_vocab(&args.test, &entities, &relations)
        .with_context(|| format!("reading {}", args.test.display()))?;
    let mut known = KnownIndex::new();
    for path in &args.filter {
        let triples = read_triples_in_vocab(path, &entities, &relations)
            .with_context(|| format!("reading {}", path.display()))?;
        known.extend(&triples.into_iter().flatten().collect::<Vec<_>>());
    }
    let ranked = rank(&file.model, &vocab, &test, &known)?;
    let metric = match args.hit_percent {
        Some(p) => hit_percent_metric(p, k),
        None => format!("hit@{k}"),
    };
    let dataset = dataset_name(&args.test);
    for mode in modes {
        println!(
            "{}",
            manifest.line(&ranked.report(&dataset, metric.clone(), k, mode))
        );
    }
    manifest.wall_time_seconds = started.elapsed().as_secs_f64();
    info!("manifest {}", manifest.to_json());
    Ok(())
}
