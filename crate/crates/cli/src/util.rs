use std::fmt;
use std::path::Path;

use crate::args::Loss;
use kge::LossConfig;

/// A bad flag or flag combination; exits with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn require_file(path: &Path, flag: &str) -> anyhow::Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{flag}: no such file {}", path.display())))
    }
}

pub fn resolve_threads(threads: Option<usize>) -> usize {
    threads
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

pub fn loss_config(loss: Loss, neg: Option<usize>) -> anyhow::Result<LossConfig> {
    match (loss, neg) {
        (Loss::Softmax, Some(_)) => Err(usage("--neg has no meaning with --loss softmax")),
        (Loss::Softmax, None) => Ok(LossConfig::softmax()),
        (Loss::Ns, neg) => Ok(LossConfig::negative_sampling(neg.unwrap_or(5))),
    }
}

/// `<parent dir>/<file stem>`, e.g. `WN18/test`.
pub fn dataset_name(path: &Path) -> String {
    let stem = path.file_stem().map_or_else(
        || path.display().to_string(),
        |s| s.to_string_lossy().into_owned(),
    );
    match path.parent().and_then(Path::file_name) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}
