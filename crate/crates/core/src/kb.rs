//! Triple stores, string vocabularies, and the index of known facts used by
//! filtered ranking and answer lookup.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};

/// String <-> id map. Ids follow first appearance.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Vocab {
    index: HashMap<String, u32>,
    names: Vec<String>,
}

impl Vocab {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_names<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocab::new();
        for name in names {
            let name = name.into();
            if vocab.index.contains_key(&name) {
                return Err(Error::invalid(format!(
                    "duplicate vocabulary entry '{name}'"
                )));
            }
            vocab.intern(&name);
        }
        Ok(vocab)
    }

    pub fn intern(&mut self, name: &str) -> u32 {
        if let Some(&id) = self.index.get(name) {
            return id;
        }
        let id = self.names.len() as u32;
        self.index.insert(name.to_owned(), id);
        self.names.push(name.to_owned());
        id
    }

    pub fn get(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: u32) -> Option<&str> {
        self.names.get(id as usize).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// One name per line, in id order.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        for name in &self.names {
            writeln!(out, "{name}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut names = Vec::new();
        for line in input.lines() {
            names.push(line?);
        }
        Vocab::from_names(names)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub subject: u32,
    pub relation: u32,
    pub object: u32,
}

impl Triple {
    pub fn new(subject: u32, relation: u32, object: u32) -> Self {
        Triple {
            subject,
            relation,
            object,
        }
    }
}

/// Which end of a triple is being predicted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Direction {
    /// Predict the object from (subject, relation).
    Object,
    /// Predict the subject from (object, relation).
    Subject,
}

/// Triples with their entity and relation vocabularies.
#[derive(Clone, Debug, Default)]
pub struct TripleStore {
    pub entities: Vocab,
    pub relations: Vocab,
    pub triples: Vec<Triple>,
}

impl TripleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a triple by name, interning unseen names.
    pub fn insert(&mut self, subject: &str, relation: &str, object: &str) -> Triple {
        let subject = self.entities.intern(subject);
        let relation = self.relations.intern(relation);
        let object = self.entities.intern(object);
        let triple = Triple::new(subject, relation, object);
        self.triples.push(triple);
        triple
    }

    /// Maps a named triple onto existing ids without growing the vocabularies.
    pub fn lookup(&self, subject: &str, relation: &str, object: &str) -> Option<Triple> {
        Some(Triple::new(
            self.entities.get(subject)?,
            self.relations.get(relation)?,
            self.entities.get(object)?,
        ))
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Adds `(o, r', s)` for every `(s, r, o)`, where `r'` is a new relation
    /// named `<r><suffix>`.
    pub fn add_inverse_relations(&mut self, suffix: &str) {
        let original = self.triples.len();
        let names: Vec<String> = self.relations.names().to_vec();
        let inverse: Vec<u32> = names
            .iter()
            .map(|name| self.relations.intern(&format!("{name}{suffix}")))
            .collect();
        for index in 0..original {
            let t = self.triples[index];
            self.triples.push(Triple::new(
                t.object,
                inverse[t.relation as usize],
                t.subject,
            ));
        }
    }

    pub fn known_index(&self) -> KnownIndex {
        KnownIndex::from_triples(&self.triples)
    }
}

/// Every known completion of `(anchor, relation)` in both directions.
#[derive(Clone, Debug, Default)]
pub struct KnownIndex {
    objects: HashMap<(u32, u32), Vec<u32>>,
    subjects: HashMap<(u32, u32), Vec<u32>>,
}

impl KnownIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_triples(triples: &[Triple]) -> Self {
        let mut index = KnownIndex::new();
        index.extend(triples);
        index
    }

    pub fn extend(&mut self, triples: &[Triple]) {
        for t in triples {
            self.objects
                .entry((t.subject, t.relation))
                .or_default()
                .push(t.object);
            self.subjects
                .entry((t.object, t.relation))
                .or_default()
                .push(t.subject);
        }
        for list in self.objects.values_mut().chain(self.subjects.values_mut()) {
            list.sort_unstable();
            list.dedup();
        }
    }

    /// Sorted ids completing `(anchor, relation)` in the given direction.
    pub fn completions(&self, anchor: u32, relation: u32, direction: Direction) -> &[u32] {
        let map = match direction {
            Direction::Object => &self.objects,
            Direction::Subject => &self.subjects,
        };
        map.get(&(anchor, relation)).map_or(&[], Vec::as_slice)
    }

    pub fn contains(&self, triple: &Triple) -> bool {
        self.completions(triple.subject, triple.relation, Direction::Object)
            .binary_search(&triple.object)
            .is_ok()
    }

    pub fn has_subject_relation(&self, subject: u32, relation: u32) -> bool {
        self.objects.contains_key(&(subject, relation))
    }
}
