//! Sequential grid search with validation-based selection.

use anyhow::Result;
use kge::qa::{evaluate_qa, DEFAULT_BUCKETS};
use kge::{build_vocab, EvalReport, LossConfig, TrainConfig};
use log::info;

use crate::args::{GridArgs, GridTask, KbArgs, Loss, SelectMetric, Task};
use crate::kbc::{kbc_task, selection_report, test_reports, train_on, Splits};
use crate::manifest::RunManifest;
use crate::qa::{alias_table, load_kb, load_pairs, prepare_training, qa_config, train_classifier};
use crate::util::{dataset_name, require_file, resolve_threads, usage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Point {
    dim: usize,
    epoch: usize,
    neg: Option<usize>,
}

impl Point {
    fn label(&self) -> String {
        match self.neg {
            Some(neg) => format!("dim={},epoch={},neg={neg}", self.dim, self.epoch),
            None => format!("dim={},epoch={}", self.dim, self.epoch),
        }
    }
}

fn points(args: &GridArgs) -> Result<Vec<Point>> {
    let negs: Vec<Option<usize>> = match (args.task, args.loss) {
        (GridTask::Qa, _) | (_, Loss::Softmax) if !args.grid_neg.is_empty() => {
            return Err(usage("--grid-neg needs --loss ns and a KB-completion task"));
        }
        (GridTask::Qa, _) | (_, Loss::Softmax) => vec![None],
        (_, Loss::Ns) if args.grid_neg.is_empty() => vec![Some(5)],
        (_, Loss::Ns) => args.grid_neg.iter().copied().map(Some).collect(),
    };
    let mut grid = Vec::new();
    for &dim in &args.grid_dim {
        for &epoch in &args.grid_epoch {
            for &neg in &negs {
                grid.push(Point { dim, epoch, neg });
            }
        }
    }
    if grid.is_empty() {
        return Err(usage("empty grid"));
    }
    Ok(grid)
}

fn select_metric(args: &GridArgs) -> Result<SelectMetric> {
    let natural = match args.task {
        GridTask::Entity => SelectMetric::FilteredHit10,
        GridTask::Relation => SelectMetric::Hit5Pct,
        GridTask::Qa => SelectMetric::Accuracy,
    };
    match args.select_metric {
        Some(m) if m != natural => Err(usage(format!(
            "--select-metric {m:?} does not apply to --task {:?}",
            args.task
        ))),
        _ => Ok(natural),
    }
}

fn config(args: &GridArgs, p: Point) -> Result<TrainConfig> {
    let loss = match p.neg {
        Some(k) => LossConfig::negative_sampling(k),
        None => LossConfig::softmax(),
    };
    let config = TrainConfig {
        epochs: p.epoch,
        lr0: args.lr,
        loss,
        threads: resolve_threads(args.threads),
        seed: args.seed,
        dim: p.dim,
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    Ok(config)
}

fn manifest(args: &GridArgs, p: Point, metric: SelectMetric) -> RunManifest {
    let mut m = RunManifest::new("grid", args.seed)
        .param("task", format!("{:?}", args.task))
        .param("dim", p.dim)
        .param("epoch", p.epoch)
        .param("neg", p.neg)
        .param("lr", args.lr)
        .param("loss", format!("{:?}", args.loss))
        .param("select_metric", format!("{metric:?}"))
        .dataset("train", &args.train)
        .dataset("valid", &args.valid);
    if let Some(test) = &args.test {
        m = m.dataset("test", test);
    }
    m
}

/// Index of the first maximum.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn cmd_grid(args: GridArgs) -> Result<()> {
    require_file(&args.train, "--train")?;
    require_file(&args.valid, "--valid")?;
    if let Some(test) = &args.test {
        require_file(test, "--test")?;
    }
    let metric = select_metric(&args)?;
    let grid = points(&args)?;
    for &p in &grid {
        config(&args, p)?;
    }
    info!("{} configurations", grid.len());
    match args.task {
        GridTask::Entity => kbc_grid(&args, Task::Entity, &grid, metric),
        GridTask::Relation => kbc_grid(&args, Task::Relation, &grid, metric),
        GridTask::Qa => qa_grid(&args, &grid, metric),
    }
}

fn kbc_grid(args: &GridArgs, task: Task, grid: &[Point], metric: SelectMetric) -> Result<()> {
    let splits = Splits::load(&args.train, Some(&args.valid), args.test.as_deref())?;
    let vocab = build_vocab(&splits.store, kbc_task(task))?;
    let known = splits.store.known_index();
    let valid_name = dataset_name(&args.valid);

    let mut rows: Vec<(EvalReport, RunManifest)> = Vec::new();
    for &p in grid {
        let (model, _) = train_on(splits.training(false), &vocab, &config(args, p)?)?;
        let report = selection_report(
            &model,
            &vocab,
            splits.triples(&splits.valid),
            &known,
            &valid_name,
        )?;
        let mut m = manifest(args, p, metric);
        println!("{}", m.line_with(&report, &p.label()));
        rows.push((report, m));
    }
    let best = argmax(&rows.iter().map(|(r, _)| r.value).collect::<Vec<_>>());
    let winner = grid[best];

    if let Some(test) = &args.test {
        let regimes: &[bool] = if args.include_valid {
            &[false, true]
        } else {
            &[false]
        };
        for &with_valid in regimes {
            let (model, _) = train_on(splits.training(with_valid), &vocab, &config(args, winner)?)?;
            let regime = if with_valid { "train+valid" } else { "train" };
            let mut m = manifest(args, winner, metric).param("regime", regime);
            for report in test_reports(
                &model,
                &vocab,
                splits.triples(&splits.test),
                &known,
                &dataset_name(test),
            )? {
                println!(
                    "{}",
                    m.line_with(&report, &format!("{}\t{regime}", winner.label()))
                );
            }
        }
    }
    let (report, m) = &mut rows[best];
    println!(
        "{}",
        m.line_with(report, &format!("{}\tselected", winner.label()))
    );
    Ok(())
}

fn qa_grid(args: &GridArgs, grid: &[Point], metric: SelectMetric) -> Result<()> {
    let Some(kb_path) = args.kb.clone() else {
        return Err(usage("--task qa needs --kb"));
    };
    let kb_args = KbArgs {
        kb: kb_path,
        aliases: args.aliases.clone(),
        format: args.format,
    };
    let kb = load_kb(&kb_args, args.inverse)?;
    let mut table = alias_table(&kb_args, &kb)?;
    let mut train_pairs = load_pairs(&args.train, args.format)?;
    let mut valid_pairs = load_pairs(&args.valid, args.format)?;
    prepare_training(&mut train_pairs, &kb, &mut table);
    let buckets = if args.bigrams { DEFAULT_BUCKETS } else { 0 };
    let valid_name = dataset_name(&args.valid);
    let qa_train = |pairs: &[kge::qa::QaPair], p: Point| -> Result<kge::qa::RelationClassifier> {
        let config = qa_config(p.dim, p.epoch, args.lr, args.threads, args.seed)?;
        Ok(train_classifier(pairs, &kb, buckets, &config)?.classifier)
    };

    let mut rows: Vec<(EvalReport, RunManifest)> = Vec::new();
    for &p in grid {
        let classifier = qa_train(&train_pairs, p)?;
        let report = evaluate_qa(&valid_pairs, &classifier, &kb, &table)?.report(&valid_name);
        let mut m = manifest(args, p, metric)
            .param("buckets", buckets)
            .param("inverse", args.inverse);
        println!("{}", m.line_with(&report, &p.label()));
        rows.push((report, m));
    }
    let best = argmax(&rows.iter().map(|(r, _)| r.value).collect::<Vec<_>>());
    let winner = grid[best];

    if let Some(test) = &args.test {
        let test_pairs = load_pairs(test, args.format)?;
        let mut regimes = vec![("train", train_pairs.clone(), table.clone())];
        if args.include_valid {
            // Validation subjects count toward linker frequencies only when
            // the validation pairs are trained on.
            let mut with_valid = table.clone();
            prepare_training(&mut valid_pairs, &kb, &mut with_valid);
            let mut both = train_pairs.clone();
            both.extend(valid_pairs.iter().cloned());
            regimes.push(("train+valid", both, with_valid));
        }
        for (regime, pairs, table) in regimes {
            let classifier = qa_train(&pairs, winner)?;
            let report =
                evaluate_qa(&test_pairs, &classifier, &kb, &table)?.report(&dataset_name(test));
            let mut m = manifest(args, winner, metric).param("regime", regime);
            println!(
                "{}",
                m.line_with(&report, &format!("{}\t{regime}", winner.label()))
            );
        }
    }
    let (report, m) = &mut rows[best];
    println!(
        "{}",
        m.line_with(report, &format!("{}\tselected", winner.label()))
    );
    Ok(())
}
