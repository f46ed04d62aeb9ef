//! Knowledge base completion as classification.
//!
//! Entity prediction feeds the pair (known entity, directed relation) to the
//! model and predicts the missing entity; each relation owns two input
//! tokens, one per predicted end. Relation prediction feeds (subject token,
//! object token) and predicts the relation; each entity owns two input
//! tokens, one per role. With two input tokens the hidden vector is their
//! mean, so the class score is half the dot product of the summed input rows
//! with the class row.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kb::{Direction, KnownIndex, Triple, TripleStore, Vocab};
use crate::model::{check_tokens, dot, EmbeddingModel, Float};
use crate::report::{EvalReport, RankMode};

pub const OBJECT_SUFFIX: &str = "@object";
pub const SUBJECT_SUFFIX: &str = "@subject";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum KbcTask {
    EntityPrediction,
    RelationPrediction,
}

impl fmt::Display for KbcTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KbcTask::EntityPrediction => f.write_str("entity"),
            KbcTask::RelationPrediction => f.write_str("relation"),
        }
    }
}

impl FromStr for KbcTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(KbcTask::EntityPrediction),
            "relation" => Ok(KbcTask::RelationPrediction),
            other => Err(Error::invalid(format!("unknown task '{other}'"))),
        }
    }
}

/// A decoded input token.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DirectionalToken {
    /// Entity-prediction input entity.
    Entity(u32),
    /// Entity-prediction relation token, tagged with the end it predicts.
    Relation(u32, Direction),
    /// Relation-prediction entity in subject position.
    SubjectEntity(u32),
    /// Relation-prediction entity in object position.
    ObjectEntity(u32),
}

/// Token id layout for one task.
///
/// Entity prediction: ids `0..E` are entities, then relation `r` owns
/// `E + 2r` (predict object) and `E + 2r + 1` (predict subject).
/// Relation prediction: entity `e` owns `2e` (as subject) and `2e + 1`
/// (as object).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DirectionalVocab {
    pub task: KbcTask,
    pub entity_count: usize,
    pub relation_count: usize,
}

impl DirectionalVocab {
    pub fn new(task: KbcTask, entity_count: usize, relation_count: usize) -> Self {
        DirectionalVocab {
            task,
            entity_count,
            relation_count,
        }
    }

    pub fn input_size(&self) -> usize {
        match self.task {
            KbcTask::EntityPrediction => self.entity_count + 2 * self.relation_count,
            KbcTask::RelationPrediction => 2 * self.entity_count,
        }
    }

    pub fn output_size(&self) -> usize {
        match self.task {
            KbcTask::EntityPrediction => self.entity_count,
            KbcTask::RelationPrediction => self.relation_count,
        }
    }

    #[inline]
    pub fn relation_token(&self, relation: u32, direction: Direction) -> u32 {
        let base = self.entity_count as u32 + 2 * relation;
        match direction {
            Direction::Object => base,
            Direction::Subject => base + 1,
        }
    }

    #[inline]
    pub fn subject_token(&self, entity: u32) -> u32 {
        2 * entity
    }

    #[inline]
    pub fn object_token(&self, entity: u32) -> u32 {
        2 * entity + 1
    }

    pub fn decode(&self, token: u32) -> Result<DirectionalToken> {
        let t = token as usize;
        if t >= self.input_size() {
            return Err(Error::Index {
                what: "directional vocabulary",
                index: t,
                len: self.input_size(),
            });
        }
        Ok(match self.task {
            KbcTask::EntityPrediction if t < self.entity_count => DirectionalToken::Entity(token),
            KbcTask::EntityPrediction => {
                let offset = (t - self.entity_count) as u32;
                let direction = if offset.is_multiple_of(2) {
                    Direction::Object
                } else {
                    Direction::Subject
                };
                DirectionalToken::Relation(offset / 2, direction)
            }
            KbcTask::RelationPrediction if t.is_multiple_of(2) => {
                DirectionalToken::SubjectEntity(token / 2)
            }
            KbcTask::RelationPrediction => DirectionalToken::ObjectEntity(token / 2),
        })
    }

    /// Human-readable input token names in id order.
    pub fn input_names(&self, entities: &Vocab, relations: &Vocab) -> Vec<String> {
        match self.task {
            KbcTask::EntityPrediction => entities
                .names()
                .iter()
                .cloned()
                .chain(relations.names().iter().flat_map(|r| {
                    [
                        format!("{r}{OBJECT_SUFFIX}"),
                        format!("{r}{SUBJECT_SUFFIX}"),
                    ]
                }))
                .collect(),
            KbcTask::RelationPrediction => entities
                .names()
                .iter()
                .flat_map(|e| {
                    [
                        format!("{e}{SUBJECT_SUFFIX}"),
                        format!("{e}{OBJECT_SUFFIX}"),
                    ]
                })
                .collect(),
        }
    }

    pub fn output_names(&self, entities: &Vocab, relations: &Vocab) -> Vec<String> {
        match self.task {
            KbcTask::EntityPrediction => entities.names().to_vec(),
            KbcTask::RelationPrediction => relations.names().to_vec(),
        }
    }

    /// Rebuilds the layout and vocabularies from stored token names.
    pub fn from_names(
        task: KbcTask,
        input_names: &[String],
        output_names: &[String],
    ) -> Result<(Self, Vocab, Vocab)> {
        let strip = |name: &str, suffix: &str| -> Result<String> {
            name.strip_suffix(suffix).map(str::to_owned).ok_or_else(|| {
                Error::invalid(format!("input token '{name}' lacks suffix '{suffix}'"))
            })
        };
        match task {
            KbcTask::EntityPrediction => {
                let entities = Vocab::from_names(output_names.iter().cloned())?;
                let extra = input_names
                    .len()
                    .checked_sub(entities.len())
                    .filter(|n| n % 2 == 0);
                let Some(extra) = extra else {
                    return Err(Error::invalid(
                        "entity-task input vocabulary has a bad size",
                    ));
                };
                if input_names[..entities.len()] != *entities.names() {
                    return Err(Error::invalid(
                        "entity-task input and output entities differ",
                    ));
                }
                let relations = Vocab::from_names(
                    input_names[entities.len()..]
                        .iter()
                        .step_by(2)
                        .map(|n| strip(n, OBJECT_SUFFIX))
                        .collect::<Result<Vec<_>>>()?,
                )?;
                let vocab = DirectionalVocab::new(task, entities.len(), extra / 2);
                Ok((vocab, entities, relations))
            }
            KbcTask::RelationPrediction => {
                if !input_names.len().is_multiple_of(2) {
                    return Err(Error::invalid(
                        "relation-task input vocabulary has odd size",
                    ));
                }
                let entities = Vocab::from_names(
                    input_names
                        .iter()
                        .step_by(2)
                        .map(|n| strip(n, SUBJECT_SUFFIX))
                        .collect::<Result<Vec<_>>>()?,
                )?;
                let relations = Vocab::from_names(output_names.iter().cloned())?;
                let vocab = DirectionalVocab::new(task, entities.len(), relations.len());
                Ok((vocab, entities, relations))
            }
        }
    }
}

/// Token layout for a non-empty store.
pub fn build_vocab(store: &TripleStore, task: KbcTask) -> Result<DirectionalVocab> {
    if store.is_empty() {
        return Err(Error::invalid(
            "cannot build a vocabulary from an empty store",
        ));
    }
    Ok(DirectionalVocab::new(
        task,
        store.entities.len(),
        store.relations.len(),
    ))
}

fn check_triple(triple: &Triple, vocab: &DirectionalVocab) -> Result<()> {
    if triple.subject as usize >= vocab.entity_count || triple.object as usize >= vocab.entity_count
    {
        return Err(Error::invalid(format!(
            "triple {triple:?} has an unknown entity"
        )));
    }
    if triple.relation as usize >= vocab.relation_count {
        return Err(Error::invalid(format!(
            "triple {triple:?} has an unknown relation"
        )));
    }
    Ok(())
}

/// Two examples per triple: `{e, r->object} => p` and `{p, r->subject} => e`.
pub fn encode_entity_prediction(
    triples: &[Triple],
    vocab: &DirectionalVocab,
) -> Result<Vec<crate::Example>> {
    if vocab.task != KbcTask::EntityPrediction {
        return Err(Error::invalid(
            "vocabulary was not built for entity prediction",
        ));
    }
    let mut examples = Vec::with_capacity(2 * triples.len());
    for t in triples {
        check_triple(t, vocab)?;
        examples.push(crate::Example::new(
            vec![
                t.subject,
                vocab.relation_token(t.relation, Direction::Object),
            ],
            t.object,
        ));
        examples.push(crate::Example::new(
            vec![
                t.object,
                vocab.relation_token(t.relation, Direction::Subject),
            ],
            t.subject,
        ));
    }
    Ok(examples)
}

/// One example per triple: `{e as subject, p as object} => r`.
pub fn encode_relation_prediction(
    triples: &[Triple],
    vocab: &DirectionalVocab,
) -> Result<Vec<crate::Example>> {
    if vocab.task != KbcTask::RelationPrediction {
        return Err(Error::invalid(
            "vocabulary was not built for relation prediction",
        ));
    }
    triples
        .iter()
        .map(|t| {
            check_triple(t, vocab)?;
            Ok(crate::Example::new(
                vec![vocab.subject_token(t.subject), vocab.object_token(t.object)],
                t.relation,
            ))
        })
        .collect()
}

/// Encodes a store for the given task.
pub fn encode(triples: &[Triple], vocab: &DirectionalVocab) -> Result<Vec<crate::Example>> {
    match vocab.task {
        KbcTask::EntityPrediction => encode_entity_prediction(triples, vocab),
        KbcTask::RelationPrediction => encode_relation_prediction(triples, vocab),
    }
}

/// Recovers the originating triple and, for entity prediction, the
/// predicted end.
pub fn decode_example(
    example: &crate::Example,
    vocab: &DirectionalVocab,
) -> Result<(Triple, Option<Direction>)> {
    let bad = || Error::invalid(format!("example {example:?} is not a directional encoding"));
    let [first, second] = example.tokens[..] else {
        return Err(bad());
    };
    match (vocab.decode(first)?, vocab.decode(second)?) {
        (DirectionalToken::Entity(e), DirectionalToken::Relation(r, Direction::Object)) => {
            Ok((Triple::new(e, r, example.label), Some(Direction::Object)))
        }
        (DirectionalToken::Entity(p), DirectionalToken::Relation(r, Direction::Subject)) => {
            Ok((Triple::new(example.label, r, p), Some(Direction::Subject)))
        }
        (DirectionalToken::SubjectEntity(e), DirectionalToken::ObjectEntity(p)) => {
            Ok((Triple::new(e, example.label, p), None))
        }
        _ => Err(bad()),
    }
}

/// A ranking query: input tokens, the true class, and the known true classes
/// to exclude in filtered mode (sorted, may include the target).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Query {
    pub tokens: Vec<u32>,
    pub target: u32,
    pub filter: Vec<u32>,
}

/// Raw and filtered rank of a query's target. Ties favour the target.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ranks {
    pub raw: usize,
    pub filtered: usize,
}

impl Ranks {
    pub fn get(&self, mode: RankMode) -> usize {
        match mode {
            RankMode::Raw => self.raw,
            RankMode::Filtered => self.filtered,
        }
    }
}

/// `1 + |{c != target : score(c) > score(target)}|`, excluding filtered
/// candidates in filtered mode.
pub fn rank_target<F: Float>(
    model: &EmbeddingModel<F>,
    query: &Query,
    mode: RankMode,
) -> Result<usize> {
    Ok(rank_both(model, query)?.get(mode))
}

pub fn rank_both<F: Float>(model: &EmbeddingModel<F>, query: &Query) -> Result<Ranks> {
    if query.tokens.is_empty() {
        return Err(Error::invalid("query has no input tokens"));
    }
    check_tokens(&query.tokens, model.input_vocab_size())?;
    if query.target as usize >= model.class_count() {
        return Err(Error::Index {
            what: "output classes",
            index: query.target as usize,
            len: model.class_count(),
        });
    }
    if query
        .filter
        .iter()
        .any(|&c| c as usize >= model.class_count())
    {
        return Err(Error::invalid("filter names a class outside the model"));
    }
    let mut filter = query.filter.clone();
    filter.sort_unstable();
    filter.dedup();
    let mut hidden = vec![F::zero(); model.dim()];
    Ok(ranks_unchecked(
        model,
        &query.tokens,
        query.target,
        &filter,
        &mut hidden,
    ))
}

fn ranks_unchecked<F: Float>(
    model: &EmbeddingModel<F>,
    tokens: &[u32],
    target: u32,
    filter: &[u32],
    hidden: &mut [F],
) -> Ranks {
    crate::model::average_into(model, tokens, hidden);
    let output = model.output_matrix();
    let target_score = dot(output.row(target as usize), hidden);
    let greater = (0..model.class_count())
        .filter(|&c| dot(output.row(c), hidden) > target_score)
        .count();
    // The target never beats itself, so it is never subtracted below.
    let filtered_out = filter
        .iter()
        .filter(|&&c| c != target && dot(output.row(c as usize), hidden) > target_score)
        .count();
    Ranks {
        raw: 1 + greater,
        filtered: 1 + greater - filtered_out,
    }
}

/// Ranks for a batch of queries; `None` entries (targets or inputs unknown
/// to the model) rank last.
#[derive(Clone, Debug, Default)]
pub struct RankedQueries {
    pub ranks: Vec<Option<Ranks>>,
    pub seconds: f64,
}

impl RankedQueries {
    pub fn len(&self) -> usize {
        self.ranks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ranks.is_empty()
    }

    /// Percentage of queries ranked within the top `k`.
    pub fn hit_at(&self, k: usize, mode: RankMode) -> f64 {
        if self.ranks.is_empty() {
            return 0.0;
        }
        let hits = self
            .ranks
            .iter()
            .filter(|r| r.is_some_and(|r| r.get(mode) <= k))
            .count();
        100.0 * hits as f64 / self.ranks.len() as f64
    }

    pub fn report(&self, dataset: &str, metric: String, k: usize, mode: RankMode) -> EvalReport {
        EvalReport {
            dataset: dataset.to_owned(),
            metric,
            mode: Some(mode),
            value: self.hit_at(k, mode),
            num_queries: self.len(),
            seconds: self.seconds,
        }
    }
}

/// Ranks every query in parallel. Queries must be valid for the model.
pub fn rank_queries<F: Float>(
    model: &EmbeddingModel<F>,
    queries: &[Option<Query>],
) -> Result<RankedQueries> {
    for query in queries.iter().flatten() {
        check_tokens(&query.tokens, model.input_vocab_size())?;
        if query.target as usize >= model.class_count()
            || query.tokens.is_empty()
            || query
                .filter
                .iter()
                .any(|&c| c as usize >= model.class_count())
        {
            return Err(Error::invalid(format!("invalid query {query:?}")));
        }
    }
    let started = Instant::now();
    let ranks = queries
        .par_iter()
        .map_init(
            || vec![F::zero(); model.dim()],
            |hidden, query| {
                query
                    .as_ref()
                    .map(|q| ranks_unchecked(model, &q.tokens, q.target, &q.filter, hidden))
            },
        )
        .collect();
    Ok(RankedQueries {
        ranks,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Both entity-prediction queries of every test triple, object query first.
/// `None` test triples (unknown to the model) yield two `None` queries.
pub fn entity_queries(
    test: &[Option<Triple>],
    vocab: &DirectionalVocab,
    known: &KnownIndex,
) -> Vec<Option<Query>> {
    test.iter()
        .flat_map(|t| match t {
            Some(t) => [
                Some(Query {
                    tokens: vec![
                        t.subject,
                        vocab.relation_token(t.relation, Direction::Object),
                    ],
                    target: t.object,
                    filter: known
                        .completions(t.subject, t.relation, Direction::Object)
                        .to_vec(),
                }),
                Some(Query {
                    tokens: vec![
                        t.object,
                        vocab.relation_token(t.relation, Direction::Subject),
                    ],
                    target: t.subject,
                    filter: known
                        .completions(t.object, t.relation, Direction::Subject)
                        .to_vec(),
                }),
            ],
            None => [None, None],
        })
        .collect()
}

/// One relation-prediction query per test triple (raw protocol, no filter).
pub fn relation_queries(test: &[Option<Triple>], vocab: &DirectionalVocab) -> Vec<Option<Query>> {
    test.iter()
        .map(|t| {
            t.map(|t| Query {
                tokens: vec![vocab.subject_token(t.subject), vocab.object_token(t.object)],
                target: t.relation,
                filter: Vec::new(),
            })
        })
        .collect()
}

/// Hit@K for entity prediction, both directions pooled.
pub fn evaluate_hits(
    model: &EmbeddingModel<f32>,
    vocab: &DirectionalVocab,
    test: &[Triple],
    known: &KnownIndex,
    k: usize,
    mode: RankMode,
) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if vocab.task != KbcTask::EntityPrediction {
        return Err(Error::invalid(
            "Hit@K ranking needs an entity-prediction model",
        ));
    }
    let test: Vec<Option<Triple>> = test.iter().copied().map(Some).collect();
    let ranked = rank_queries(model, &entity_queries(&test, vocab, known))?;
    Ok(ranked.report("test", format!("hit@{k}"), k, mode))
}

/// `floor(percent * classes / 100)`.
pub fn hit_percent_k(percent: f64, class_count: usize) -> Result<usize> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::invalid(format!(
            "percent {percent} outside (0, 100]"
        )));
    }
    Ok((percent * class_count as f64 / 100.0).floor() as usize)
}

/// Hit@p% for relation prediction, raw protocol.
pub fn evaluate_hit_at_percent(
    model: &EmbeddingModel<f32>,
    vocab: &DirectionalVocab,
    test: &[Triple],
    percent: f64,
) -> Result<EvalReport> {
    let k = hit_percent_k(percent, model.class_count())?;
    if test.is_empty() {
        return Err(Error::invalid("empty test set"));
    }
    if vocab.task != KbcTask::RelationPrediction {
        return Err(Error::invalid("Hit@p% needs a relation-prediction model"));
    }
    let test: Vec<Option<Triple>> = test.iter().copied().map(Some).collect();
    let ranked = rank_queries(model, &relation_queries(&test, vocab))?;
    Ok(ranked.report("test", hit_percent_metric(percent, k), k, RankMode::Raw))
}

pub fn hit_percent_metric(percent: f64, k: usize) -> String {
    format!("hit@{percent}%({k})")
}
