//! Question-answering inputs: SimpleQuestions TSV, WikiMovies QA text, and
//! alias tables.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;

use crate::error::Result;
use crate::qa::QaPair;

/// Records read from a lenient parser plus the number of skipped lines.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub skipped: usize,
}

fn parse_lines<T, F>(path: &Path, kind: &str, mut parse: F) -> Result<Parsed<T>>
where
    F: FnMut(&str) -> Option<T>,
{
    let mut reader = BufReader::new(File::open(path)?);
    let mut parsed = Parsed {
        items: Vec::new(),
        skipped: 0,
    };
    let mut line = String::new();
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.trim().is_empty() {
            continue;
        }
        match parse(trimmed) {
            Some(item) => parsed.items.push(item),
            None => parsed.skipped += 1,
        }
    }
    if parsed.skipped > 0 {
        warn!(
            "{}: skipped {} malformed {kind} lines",
            path.display(),
            parsed.skipped
        );
    }
    if parsed.items.is_empty() {
        warn!("{}: no {kind} records", path.display());
    }
    Ok(parsed)
}

/// `subject\trelation\tobject\tquestion` per line.
pub fn parse_simplequestions(path: impl AsRef<Path>) -> Result<Parsed<QaPair>> {
    parse_lines(path.as_ref(), "SimpleQuestions", parse_simplequestions_line)
}

pub fn parse_simplequestions_line(line: &str) -> Option<QaPair> {
    let cols: Vec<&str> = line.split('\t').collect();
    let [subject, relation, object, question] = cols[..] else {
        return None;
    };
    if [subject, relation, object].iter().any(|c| c.is_empty()) || question.trim().is_empty() {
        return None;
    }
    Some(QaPair {
        question: question.to_owned(),
        answers: vec![object.to_owned()],
        subject: Some(subject.to_owned()),
        relation: Some(relation.to_owned()),
    })
}

/// `<n> <question>\t<answer>,<answer>,...` per line.
pub fn parse_wikimovies(path: impl AsRef<Path>) -> Result<Parsed<QaPair>> {
    parse_lines(path.as_ref(), "WikiMovies", parse_wikimovies_line)
}

pub fn parse_wikimovies_line(line: &str) -> Option<QaPair> {
    let (question, answers) = line.split_once('\t')?;
    let question = match question.split_once(' ') {
        Some((number, rest)) if number.chars().all(|c| c.is_ascii_digit()) => rest,
        _ => question,
    };
    let answers: Vec<String> = answers
        .split(',')
        .map(str::trim)
        .filter(|a| !a.is_empty())
        .map(str::to_owned)
        .collect();
    if question.trim().is_empty() || answers.is_empty() {
        return None;
    }
    Some(QaPair {
        question: question.to_owned(),
        answers,
        subject: None,
        relation: None,
    })
}

/// `<entity>\t<surface string>` per line.
pub fn parse_aliases(path: impl AsRef<Path>) -> Result<Parsed<(String, String)>> {
    parse_lines(path.as_ref(), "alias", |line| {
        let (entity, surface) = line.split_once('\t')?;
        if entity.is_empty() || surface.trim().is_empty() || surface.contains('\t') {
            return None;
        }
        Some((entity.to_owned(), surface.to_owned()))
    })
}
