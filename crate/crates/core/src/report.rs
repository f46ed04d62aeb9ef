use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RankMode {
    Raw,
    Filtered,
}

impl fmt::Display for RankMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RankMode::Raw => f.write_str("raw"),
            RankMode::Filtered => f.write_str("filtered"),
        }
    }
}

impl FromStr for RankMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(RankMode::Raw),
            "filtered" => Ok(RankMode::Filtered),
            other => Err(Error::invalid(format!("unknown rank mode '{other}'"))),
        }
    }
}

/// One metric result.
///
/// Rendered as `<dataset>\t<metric>\t<mode>\t<value>\t<num_queries>\t<seconds>`;
/// the mode column is `-` for metrics without a ranking mode.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub dataset: String,
    pub metric: String,
    pub mode: Option<RankMode>,
    /// Percentage in [0, 100].
    pub value: f64,
    pub num_queries: usize,
    pub seconds: f64,
}

impl EvalReport {
    pub fn to_tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{:.4}\t{}\t{:.3}",
            self.dataset,
            self.metric,
            self.mode.map_or_else(|| "-".to_owned(), |m| m.to_string()),
            self.value,
            self.num_queries,
            self.seconds
        )
    }

    /// Parses a rendered line. Extra trailing columns are ignored.
    pub fn from_tsv(line: &str) -> Result<Self> {
        let cols: Vec<&str> = line.trim_end_matches(['\r', '\n']).split('\t').collect();
        if cols.len() < 6 {
            return Err(Error::invalid(format!(
                "report line has {} columns, expected 6",
                cols.len()
            )));
        }
        let number = |s: &str, what: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::invalid(format!("bad {what} '{s}' in report line")))
        };
        Ok(EvalReport {
            dataset: cols[0].to_owned(),
            metric: cols[1].to_owned(),
            mode: match cols[2] {
                "-" => None,
                m => Some(m.parse()?),
            },
            value: number(cols[3], "value")?,
            num_queries: cols[4]
                .parse()
                .map_err(|_| Error::invalid(format!("bad query count '{}'", cols[4])))?,
            seconds: number(cols[5], "seconds")?,
        })
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_tsv())
    }
}
