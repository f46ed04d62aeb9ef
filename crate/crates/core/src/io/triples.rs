//! Tab-separated `subject\trelation\tobject` triple files.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::info;

use crate::error::{Error, Result};
use crate::kb::{Triple, TripleStore, Vocab};

/// Streams the three columns of every non-blank line to `visit`.
fn for_each_triple_line<F>(path: &Path, mut visit: F) -> Result<usize>
where
    F: FnMut(&str, &str, &str),
{
    let mut reader = BufReader::new(File::open(path)?);
    let mut count = 0;
    let mut line = String::new();
    let mut line_no = 0;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        line_no += 1;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.is_empty() {
            continue;
        }
        let mut cols = trimmed.split('\t');
        match (cols.next(), cols.next(), cols.next(), cols.next()) {
            (Some(s), Some(r), Some(o), None) => {
                visit(s, r, o);
                count += 1;
            }
            _ => {
                return Err(Error::Parse {
                    path: path.to_owned(),
                    line: line_no,
                    message: format!(
                        "expected 3 tab-separated columns, found {}",
                        trimmed.split('\t').count()
                    ),
                })
            }
        }
    }
    Ok(count)
}

/// Parses a triple file into a fresh store.
pub fn parse_triples(path: impl AsRef<Path>) -> Result<TripleStore> {
    let mut store = TripleStore::new();
    ingest_triples(&mut store, path)?;
    Ok(store)
}

/// Appends a triple file to an existing store, sharing its vocabularies.
/// Returns the number of triples read.
pub fn ingest_triples(store: &mut TripleStore, path: impl AsRef<Path>) -> Result<usize> {
    let path = path.as_ref();
    let count = for_each_triple_line(path, |s, r, o| {
        store.insert(s, r, o);
    })?;
    if count == 0 {
        return Err(Error::invalid(format!(
            "{} contains no triples",
            path.display()
        )));
    }
    info!(
        "{}: {count} triples ({} entities, {} relations so far)",
        path.display(),
        store.entities.len(),
        store.relations.len()
    );
    Ok(count)
}

/// Reads triples against fixed vocabularies. Triples naming an unknown entity
/// or relation become `None`.
pub fn read_triples_in_vocab(
    path: impl AsRef<Path>,
    entities: &Vocab,
    relations: &Vocab,
) -> Result<Vec<Option<Triple>>> {
    let path = path.as_ref();
    let mut triples = Vec::new();
    for_each_triple_line(path, |s, r, o| {
        let mapped = (|| {
            Some(Triple::new(
                entities.get(s)?,
                relations.get(r)?,
                entities.get(o)?,
            ))
        })();
        triples.push(mapped);
    })?;
    if triples.is_empty() {
        return Err(Error::invalid(format!(
            "{} contains no triples",
            path.display()
        )));
    }
    let unknown = triples.iter().filter(|t| t.is_none()).count();
    if unknown > 0 {
        log::warn!(
            "{}: {unknown} of {} triples use names unknown to the model",
            path.display(),
            triples.len()
        );
    }
    Ok(triples)
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use super::*;

    fn file(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    #[test]
    fn single_line() {
        let f = file("06845599\t_member_of_domain_usage\t03754979\n");
        let store = parse_triples(f.path()).unwrap();
        assert_eq!(store.len(), 1);
        assert_eq!(store.entities.len(), 2);
        assert_eq!(store.relations.len(), 1);
    }

    #[test]
    fn wrong_column_count_names_line() {
        let f = file("a\tr\tb\nc\td\n");
        match parse_triples(f.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        let f = file("a\tr\tb\tx\n");
        assert!(matches!(
            parse_triples(f.path()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn empty_file_is_invalid() {
        let f = file("");
        assert!(matches!(
            parse_triples(f.path()),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn crlf_and_blank_lines() {
        let f = file("a\tr\tb\r\n\nb\tr\tc\r\n");
        let store = parse_triples(f.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.entities.names(), &["a", "b", "c"]);
    }

    #[test]
    fn shared_vocab_across_splits() {
        let train = file("a\tr\tb\n");
        let valid = file("b\tq\tc\n");
        let mut store = parse_triples(train.path()).unwrap();
        ingest_triples(&mut store, valid.path()).unwrap();
        assert_eq!(store.len(), 2);
        assert_eq!(store.relations.names(), &["r", "q"]);

        let test = file("a\tr\tc\nz\tr\ta\n");
        let mapped = read_triples_in_vocab(test.path(), &store.entities, &store.relations).unwrap();
        assert_eq!(mapped, vec![Some(Triple::new(0, 0, 2)), None]);
    }
}
