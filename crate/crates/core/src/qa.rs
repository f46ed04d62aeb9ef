//! Question answering over a KB by relation prediction.
//!
//! Questions are linked to candidate subject entities by exact alias
//! matching over token spans. A linear classifier over question words and
//! hashed bigrams ranks relations; the answer is read from the first
//! (relation, candidate) pair, in classifier then linker order, that exists
//! in the KB.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use log::warn;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::io::{ModelFile, ModelTask};
use crate::kb::{Direction, KnownIndex, TripleStore, Vocab};
use crate::model::{EmbeddingModel, Example};
use crate::report::EvalReport;
use crate::trainer::{train, TrainConfig, TrainStats};

/// Longest token span tried against the alias table.
pub const MAX_SPAN_TOKENS: usize = 10;
pub const DEFAULT_BUCKETS: u32 = 2_000_000;
pub const INVERSE_SUFFIX: &str = "_inverse";
pub const NO_ANSWER: &str = "NO_ANSWER";

/// Lowercases, turns every non-alphanumeric character into a space, and
/// collapses whitespace.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for c in text.chars() {
        if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.extend(c.to_lowercase());
        } else {
            pending_space = true;
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaPair {
    pub question: String,
    /// Answer entity names as they appear in the data.
    pub answers: Vec<String>,
    /// Gold subject entity name, when the data provides the supporting fact.
    pub subject: Option<String>,
    /// Gold relation name, when the data provides the supporting fact.
    pub relation: Option<String>,
}

/// KB triples indexed for answer lookup.
#[derive(Clone, Debug)]
pub struct QaKb {
    pub store: TripleStore,
    known: KnownIndex,
    relations_of: HashMap<u32, Vec<u32>>,
}

impl QaKb {
    pub fn new(store: TripleStore) -> Self {
        let known = store.known_index();
        let mut relations_of: HashMap<u32, Vec<u32>> = HashMap::new();
        for t in &store.triples {
            relations_of.entry(t.subject).or_default().push(t.relation);
        }
        for list in relations_of.values_mut() {
            list.sort_unstable();
            list.dedup();
        }
        QaKb {
            store,
            known,
            relations_of,
        }
    }

    /// Objects of `(subject, relation, *)` in id order.
    pub fn objects(&self, subject: u32, relation: u32) -> &[u32] {
        self.known.completions(subject, relation, Direction::Object)
    }

    pub fn relations_of(&self, subject: u32) -> &[u32] {
        self.relations_of.get(&subject).map_or(&[], Vec::as_slice)
    }

    pub fn entity(&self, name: &str) -> Option<u32> {
        self.store.entities.get(name)
    }

    pub fn entity_name(&self, id: u32) -> &str {
        self.store.entities.name(id).unwrap_or("?")
    }

    pub fn relation_name(&self, id: u32) -> &str {
        self.store.relations.name(id).unwrap_or("?")
    }
}

/// Normalized alias -> entities, plus training-set subject frequencies.
#[derive(Clone, Debug, Default)]
pub struct AliasTable {
    aliases: HashMap<String, Vec<u32>>,
    frequency: HashMap<u32, u32>,
}

impl AliasTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Every entity name is its own alias.
    pub fn from_entity_names(entities: &Vocab) -> Self {
        let mut table = AliasTable::new();
        for (id, name) in entities.names().iter().enumerate() {
            table.insert(id as u32, name);
        }
        table
    }

    pub fn insert(&mut self, entity: u32, surface: &str) {
        let key = normalize(surface);
        if key.is_empty() {
            return;
        }
        let entry = self.aliases.entry(key).or_default();
        if !entry.contains(&entity) {
            entry.push(entity);
        }
    }

    pub fn lookup(&self, surface: &str) -> &[u32] {
        self.aliases
            .get(&normalize(surface))
            .map_or(&[], Vec::as_slice)
    }

    fn lookup_normalized(&self, key: &str) -> &[u32] {
        self.aliases.get(key).map_or(&[], Vec::as_slice)
    }

    pub fn frequency(&self, entity: u32) -> u32 {
        self.frequency.get(&entity).copied().unwrap_or(0)
    }

    pub fn add_frequency(&mut self, entity: u32) {
        *self.frequency.entry(entity).or_default() += 1;
    }

    pub fn set_frequency(&mut self, entity: u32, count: u32) {
        if count == 0 {
            self.frequency.remove(&entity);
        } else {
            self.frequency.insert(entity, count);
        }
    }

    /// Non-zero frequencies, by entity id.
    pub fn frequencies(&self) -> Vec<(u32, u32)> {
        let mut all: Vec<(u32, u32)> = self.frequency.iter().map(|(&e, &c)| (e, c)).collect();
        all.sort_unstable();
        all
    }

    pub fn alias_count(&self) -> usize {
        self.aliases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.aliases.is_empty()
    }
}

/// Builds the alias table from `(entity name, surface)` entries and counts
/// gold subjects of the training pairs. Returns the table and the number of
/// entries naming entities absent from the KB.
pub fn build_alias_table(
    entries: &[(String, String)],
    entities: &Vocab,
    training_pairs: &[QaPair],
) -> (AliasTable, usize) {
    let mut table = AliasTable::new();
    let mut unknown = 0;
    for (entity, surface) in entries {
        match entities.get(entity) {
            Some(id) => table.insert(id, surface),
            None => unknown += 1,
        }
    }
    if table.is_empty() {
        warn!("alias table is empty; no entity can be linked");
    }
    if unknown > 0 {
        warn!("{unknown} alias entries name entities outside the KB");
    }
    for pair in training_pairs {
        if let Some(id) = pair.subject.as_deref().and_then(|s| entities.get(s)) {
            table.add_frequency(id);
        }
    }
    (table, unknown)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LinkedEntity {
    pub entity: u32,
    /// Characters in the longest alias that matched this entity.
    pub alias_len: usize,
}

/// Candidate subjects for a question: rarer training subjects first, then
/// longer matched aliases, then lower ids.
pub fn link_entities(question: &str, table: &AliasTable) -> Vec<LinkedEntity> {
    let normalized = normalize(question);
    let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
    let mut best: HashMap<u32, usize> = HashMap::new();
    let mut span = String::new();
    for start in 0..tokens.len() {
        span.clear();
        for (offset, token) in tokens[start..].iter().take(MAX_SPAN_TOKENS).enumerate() {
            if offset > 0 {
                span.push(' ');
            }
            span.push_str(token);
            let len = span.chars().count();
            for &entity in table.lookup_normalized(&span) {
                let slot = best.entry(entity).or_insert(0);
                *slot = (*slot).max(len);
            }
        }
    }
    let mut linked: Vec<LinkedEntity> = best
        .into_iter()
        .map(|(entity, alias_len)| LinkedEntity { entity, alias_len })
        .collect();
    linked.sort_by(|a, b| {
        table
            .frequency(a.entity)
            .cmp(&table.frequency(b.entity))
            .then(b.alias_len.cmp(&a.alias_len))
            .then(a.entity.cmp(&b.entity))
    });
    linked
}

/// 64-bit FNV-1a.
fn fnv1a(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Word unigrams plus hashed bigrams.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionFeaturizer {
    words: Vocab,
    buckets: u32,
}

impl QuestionFeaturizer {
    /// Word vocabulary from the normalized training questions. `buckets = 0`
    /// disables bigrams.
    pub fn fit<'a, I>(questions: I, buckets: u32) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut words = Vocab::new();
        for q in questions {
            for token in normalize(q).split(' ').filter(|t| !t.is_empty()) {
                words.intern(token);
            }
        }
        QuestionFeaturizer { words, buckets }
    }

    pub fn from_parts(words: Vocab, buckets: u32) -> Self {
        QuestionFeaturizer { words, buckets }
    }

    pub fn words(&self) -> &Vocab {
        &self.words
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    pub fn input_size(&self) -> usize {
        self.words.len() + self.buckets as usize
    }

    /// Known word ids followed by bigram bucket ids in
    /// `[words, words + buckets)`. Bigrams are hashed from the surface
    /// tokens, so unknown words still contribute to them.
    pub fn featurize(&self, question: &str) -> Vec<u32> {
        let normalized = normalize(question);
        let tokens: Vec<&str> = normalized.split(' ').filter(|t| !t.is_empty()).collect();
        let mut ids: Vec<u32> = tokens.iter().filter_map(|t| self.words.get(t)).collect();
        if self.buckets > 0 {
            let base = self.words.len() as u64;
            for pair in tokens.windows(2) {
                let bytes = pair[0]
                    .bytes()
                    .chain(std::iter::once(b' '))
                    .chain(pair[1].bytes());
                ids.push((base + fnv1a(bytes) % self.buckets as u64) as u32);
            }
        }
        ids
    }
}

/// Relation classifier over question features.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationClassifier {
    pub model: EmbeddingModel<f32>,
    pub featurizer: QuestionFeaturizer,
    pub relation_names: Vec<String>,
}

impl RelationClassifier {
    pub fn to_model_file(&self) -> Result<ModelFile> {
        ModelFile::new(
            ModelTask::QaRelation,
            self.featurizer.words().names().to_vec(),
            self.featurizer.buckets(),
            self.relation_names.clone(),
            self.model.clone(),
        )
    }

    pub fn from_model_file(file: ModelFile) -> Result<Self> {
        if file.task != ModelTask::QaRelation {
            return Err(Error::invalid(format!(
                "expected a qa-relation model, found a {} model",
                file.task
            )));
        }
        let words = Vocab::from_names(file.input_tokens)?;
        Ok(RelationClassifier {
            model: file.model,
            featurizer: QuestionFeaturizer::from_parts(words, file.bucket_count),
            relation_names: file.output_labels,
        })
    }

    /// Class ids ordered by descending score, ties by ascending id. An empty
    /// feature set scores every class equally.
    pub fn rank_relations(&self, question: &str) -> Vec<u32> {
        let features = self.featurizer.featurize(question);
        let mut order: Vec<u32> = (0..self.model.class_count() as u32).collect();
        if features.is_empty() {
            return order;
        }
        let scores = self
            .model
            .score_tokens(&features)
            .expect("featurizer ids are within the model");
        order.sort_by(|&a, &b| {
            scores[b as usize]
                .total_cmp(&scores[a as usize])
                .then(a.cmp(&b))
        });
        order
    }

    /// Maps classifier classes onto KB relation ids.
    pub fn bind(&self, kb: &QaKb) -> Vec<Option<u32>> {
        self.relation_names
            .iter()
            .map(|name| kb.store.relations.get(name))
            .collect()
    }
}

/// Adds gold subject and relation to pairs that lack them, using linked
/// candidates that reach an answer through a single KB edge. Also counts
/// those candidates into the table's frequencies. Returns how many pairs
/// were annotated.
pub fn annotate_pairs(pairs: &mut [QaPair], kb: &QaKb, table: &mut AliasTable) -> usize {
    // relation -> number of answers reached, per (pair, candidate)
    let reach = |pair: &QaPair, candidate: u32| -> Vec<(u32, usize)> {
        let answers: HashSet<u32> = pair.answers.iter().filter_map(|a| kb.entity(a)).collect();
        kb.relations_of(candidate)
            .iter()
            .filter_map(|&r| {
                let hit = kb
                    .objects(candidate, r)
                    .iter()
                    .filter(|o| answers.contains(o))
                    .count();
                (hit > 0).then_some((r, hit))
            })
            .collect()
    };

    let unannotated: Vec<usize> = (0..pairs.len())
        .filter(|&i| pairs[i].subject.is_none() || pairs[i].relation.is_none())
        .collect();
    for &i in &unannotated {
        for linked in link_entities(&pairs[i].question, table) {
            if !reach(&pairs[i], linked.entity).is_empty() {
                table.add_frequency(linked.entity);
            }
        }
    }

    let mut annotated = 0;
    for &i in &unannotated {
        let found = link_entities(&pairs[i].question, table)
            .into_iter()
            .find_map(|linked| {
                let relations = reach(&pairs[i], linked.entity);
                relations
                    .into_iter()
                    .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                    .map(|(r, _)| (linked.entity, r))
            });
        if let Some((subject, relation)) = found {
            pairs[i].subject = Some(kb.entity_name(subject).to_owned());
            pairs[i].relation = Some(kb.relation_name(relation).to_owned());
            annotated += 1;
        }
    }
    annotated
}

/// One example per pair with a gold relation known to `relations`; other
/// pairs, and pairs whose question has no features, are skipped.
pub fn make_relation_training_set(
    pairs: &[QaPair],
    featurizer: &QuestionFeaturizer,
    relations: &Vocab,
) -> (Vec<Example>, usize) {
    let mut examples = Vec::with_capacity(pairs.len());
    let mut skipped = 0;
    for pair in pairs {
        let label = pair.relation.as_deref().and_then(|r| relations.get(r));
        let tokens = featurizer.featurize(&pair.question);
        match label {
            Some(label) if !tokens.is_empty() => examples.push(Example::new(tokens, label)),
            _ => skipped += 1,
        }
    }
    if skipped > 0 {
        warn!(
            "skipped {skipped} of {} QA pairs without a usable gold relation",
            pairs.len()
        );
    }
    (examples, skipped)
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaTraining {
    pub classifier: RelationClassifier,
    pub stats: TrainStats,
    pub skipped: usize,
}

/// Fits the featurizer on the training questions and trains a classifier over
/// every KB relation.
pub fn train_relation_classifier(
    pairs: &[QaPair],
    kb: &QaKb,
    buckets: u32,
    config: &TrainConfig,
) -> Result<QaTraining> {
    let featurizer = QuestionFeaturizer::fit(pairs.iter().map(|p| p.question.as_str()), buckets);
    let (examples, skipped) = make_relation_training_set(pairs, &featurizer, &kb.store.relations);
    if examples.is_empty() {
        return Err(Error::invalid("no QA pair yields a training example"));
    }
    let input_size = featurizer.input_size();
    let (model, stats) = train(&examples, config, input_size, kb.store.relations.len())?;
    Ok(QaTraining {
        classifier: RelationClassifier {
            model,
            featurizer,
            relation_names: kb.store.relations.names().to_vec(),
        },
        stats,
        skipped,
    })
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Answer {
    pub relation: u32,
    pub subject: u32,
    pub objects: Vec<u32>,
}

/// Relations in classifier order; for each, candidates in linker order; the
/// first `(candidate, relation)` present in the KB gives all its objects.
pub fn answer_question(
    question: &str,
    classifier: &RelationClassifier,
    binding: &[Option<u32>],
    kb: &QaKb,
    table: &AliasTable,
) -> Option<Answer> {
    let candidates = link_entities(question, table);
    if candidates.is_empty() {
        return None;
    }
    answer_with_candidates(
        &classifier.rank_relations(question),
        &candidates,
        binding,
        kb,
    )
}

fn answer_with_candidates(
    relation_order: &[u32],
    candidates: &[LinkedEntity],
    binding: &[Option<u32>],
    kb: &QaKb,
) -> Option<Answer> {
    for &class in relation_order {
        let Some(relation) = binding.get(class as usize).copied().flatten() else {
            continue;
        };
        for candidate in candidates {
            let objects = kb.objects(candidate.entity, relation);
            if !objects.is_empty() {
                return Some(Answer {
                    relation,
                    subject: candidate.entity,
                    objects: objects.to_vec(),
                });
            }
        }
    }
    None
}

/// `<question>\t<relation>\t<subject>\t<answers comma-separated>`
pub fn prediction_line(question: &str, answer: Option<&Answer>, kb: &QaKb) -> String {
    match answer {
        Some(a) => format!(
            "{}\t{}\t{}\t{}",
            question,
            kb.relation_name(a.relation),
            kb.entity_name(a.subject),
            a.objects
                .iter()
                .map(|&o| kb.entity_name(o))
                .collect::<Vec<_>>()
                .join(",")
        ),
        None => format!("{question}\t{NO_ANSWER}\t-\t-"),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QaMetric {
    /// Predicted (subject, relation) equals the gold supporting fact.
    PathAccuracy,
    /// The first predicted answer is among the gold answers.
    HitsAt1,
}

impl QaMetric {
    pub fn name(self) -> &'static str {
        match self {
            QaMetric::PathAccuracy => "accuracy",
            QaMetric::HitsAt1 => "hits@1",
        }
    }

    /// Path accuracy when every pair carries its supporting fact.
    pub fn for_pairs(pairs: &[QaPair]) -> Self {
        if pairs
            .iter()
            .all(|p| p.subject.is_some() && p.relation.is_some())
        {
            QaMetric::PathAccuracy
        } else {
            QaMetric::HitsAt1
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaEvaluation {
    pub metric: QaMetric,
    pub total: usize,
    pub correct: usize,
    pub answered: usize,
    /// Pairs with a gold relation, and how many had it ranked first.
    pub relation_total: usize,
    pub relation_correct: usize,
    pub seconds: f64,
    pub answers: Vec<Option<Answer>>,
}

impl QaEvaluation {
    pub fn value(&self) -> f64 {
        100.0 * self.correct as f64 / self.total.max(1) as f64
    }

    pub fn relation_accuracy(&self) -> f64 {
        100.0 * self.relation_correct as f64 / self.relation_total.max(1) as f64
    }

    pub fn report(&self, dataset: &str) -> EvalReport {
        EvalReport {
            dataset: dataset.to_owned(),
            metric: self.metric.name().to_owned(),
            mode: None,
            value: self.value(),
            num_queries: self.total,
            seconds: self.seconds,
        }
    }

    pub fn relation_report(&self, dataset: &str) -> EvalReport {
        EvalReport {
            dataset: dataset.to_owned(),
            metric: "relation-top1".to_owned(),
            mode: None,
            value: self.relation_accuracy(),
            num_queries: self.relation_total,
            seconds: self.seconds,
        }
    }
}

pub fn evaluate_qa(
    pairs: &[QaPair],
    classifier: &RelationClassifier,
    kb: &QaKb,
    table: &AliasTable,
) -> Result<QaEvaluation> {
    if pairs.is_empty() {
        return Err(Error::invalid("empty QA test set"));
    }
    let started = Instant::now();
    let metric = QaMetric::for_pairs(pairs);
    let binding = classifier.bind(kb);
    let unresolved = pairs
        .iter()
        .filter(|p| p.answers.iter().all(|a| kb.entity(a).is_none()))
        .count();
    if unresolved > 0 {
        warn!("{unresolved} test questions have no answer entity in the KB");
    }

    let outcomes: Vec<(Option<Answer>, bool, Option<bool>)> = pairs
        .par_iter()
        .map(|pair| {
            let order = classifier.rank_relations(&pair.question);
            let candidates = link_entities(&pair.question, table);
            let answer = if candidates.is_empty() {
                None
            } else {
                answer_with_candidates(&order, &candidates, &binding, kb)
            };
            let correct = answer.as_ref().is_some_and(|a| match metric {
                QaMetric::PathAccuracy => {
                    pair.subject.as_deref() == Some(kb.entity_name(a.subject))
                        && pair.relation.as_deref() == Some(kb.relation_name(a.relation))
                }
                QaMetric::HitsAt1 => a
                    .objects
                    .first()
                    .is_some_and(|&o| pair.answers.iter().any(|g| g == kb.entity_name(o))),
            });
            let relation_hit = pair.relation.as_deref().map(|gold| {
                order
                    .first()
                    .is_some_and(|&c| classifier.relation_names[c as usize] == gold)
            });
            (answer, correct, relation_hit)
        })
        .collect();

    let mut eval = QaEvaluation {
        metric,
        total: pairs.len(),
        correct: 0,
        answered: 0,
        relation_total: 0,
        relation_correct: 0,
        seconds: 0.0,
        answers: Vec::with_capacity(pairs.len()),
    };
    for (answer, correct, relation_hit) in outcomes {
        eval.correct += correct as usize;
        eval.answered += answer.is_some() as usize;
        if let Some(hit) = relation_hit {
            eval.relation_total += 1;
            eval.relation_correct += hit as usize;
        }
        eval.answers.push(answer);
    }
    eval.seconds = started.elapsed().as_secs_f64();
    Ok(eval)
}
