//! File formats: triple TSV, question files, alias tables, and model files.

mod model_file;
mod questions;
mod triples;

pub use model_file::{load_model, save_model, ModelFile, ModelTask, FORMAT_VERSION, MAGIC};
pub use questions::{
    parse_aliases, parse_simplequestions, parse_simplequestions_line, parse_wikimovies,
    parse_wikimovies_line, Parsed,
};
pub use triples::{ingest_triples, parse_triples, read_triples_in_vocab};
