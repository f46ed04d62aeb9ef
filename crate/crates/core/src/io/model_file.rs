//! Binary model persistence.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "KGEBOW\0\0"
//! version      u32
//! task         u8       0 = entity, 1 = relation, 2 = qa-relation
//! dim          u32
//! seed         u64
//! buckets      u32      hashed feature rows appended after the named inputs
//! n_inputs     u32      named input tokens, each: u32 byte length + UTF-8
//! n_outputs    u32      output labels, same encoding
//! input rows   (n_inputs + buckets) * dim f32, row-major
//! output rows  n_outputs * dim f32, row-major
//! ```

use std::fmt;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::model::{DenseMatrix, EmbeddingModel};

pub const MAGIC: &[u8; 8] = b"KGEBOW\0\0";
pub const FORMAT_VERSION: u32 = 1;

/// Upper bound for any single string or count read from a file; anything
/// larger is treated as corruption rather than allocated.
const MAX_LEN: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelTask {
    EntityPrediction,
    RelationPrediction,
    QaRelation,
}

impl ModelTask {
    fn tag(self) -> u8 {
        match self {
            ModelTask::EntityPrediction => 0,
            ModelTask::RelationPrediction => 1,
            ModelTask::QaRelation => 2,
        }
    }

    fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(ModelTask::EntityPrediction),
            1 => Ok(ModelTask::RelationPrediction),
            2 => Ok(ModelTask::QaRelation),
            other => Err(Error::Corrupt(format!("unknown task tag {other}"))),
        }
    }
}

impl fmt::Display for ModelTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelTask::EntityPrediction => "entity",
            ModelTask::RelationPrediction => "relation",
            ModelTask::QaRelation => "qa-relation",
        })
    }
}

impl FromStr for ModelTask {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "entity" => Ok(ModelTask::EntityPrediction),
            "relation" => Ok(ModelTask::RelationPrediction),
            "qa-relation" => Ok(ModelTask::QaRelation),
            other => Err(Error::invalid(format!("unknown model task '{other}'"))),
        }
    }
}

/// A model together with the vocabularies needed to interpret it.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelFile {
    pub task: ModelTask,
    pub bucket_count: u32,
    pub input_tokens: Vec<String>,
    pub output_labels: Vec<String>,
    pub model: EmbeddingModel<f32>,
}

impl ModelFile {
    pub fn new(
        task: ModelTask,
        input_tokens: Vec<String>,
        bucket_count: u32,
        output_labels: Vec<String>,
        model: EmbeddingModel<f32>,
    ) -> Result<Self> {
        let file = ModelFile {
            task,
            bucket_count,
            input_tokens,
            output_labels,
            model,
        };
        file.check_sizes().map_err(|e| match e {
            Error::Corrupt(msg) => Error::InvalidArgument(msg),
            other => other,
        })?;
        Ok(file)
    }

    fn check_sizes(&self) -> Result<()> {
        let inputs = self.input_tokens.len() + self.bucket_count as usize;
        if inputs != self.model.input_vocab_size() {
            return Err(Error::Corrupt(format!(
                "{} input tokens + {} buckets do not match {} input rows",
                self.input_tokens.len(),
                self.bucket_count,
                self.model.input_vocab_size()
            )));
        }
        if self.output_labels.len() != self.model.class_count() {
            return Err(Error::Corrupt(format!(
                "{} output labels do not match {} output rows",
                self.output_labels.len(),
                self.model.class_count()
            )));
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> Result<()> {
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(FORMAT_VERSION)?;
        out.write_u8(self.task.tag())?;
        out.write_u32::<LittleEndian>(self.model.dim() as u32)?;
        out.write_u64::<LittleEndian>(self.model.seed())?;
        out.write_u32::<LittleEndian>(self.bucket_count)?;
        write_strings(out, &self.input_tokens)?;
        write_strings(out, &self.output_labels)?;
        write_floats(out, self.model.input_matrix().as_slice())?;
        write_floats(out, self.model.output_matrix().as_slice())?;
        Ok(())
    }

    pub fn read_from<R: Read>(input: &mut R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(eof)?;
        if &magic != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = input.read_u32::<LittleEndian>().map_err(eof)?;
        if version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let task = ModelTask::from_tag(input.read_u8().map_err(eof)?)?;
        let dim = read_len(input, "dimension")? as usize;
        let seed = input.read_u64::<LittleEndian>().map_err(eof)?;
        let bucket_count = read_len(input, "bucket count")?;
        let input_tokens = read_strings(input)?;
        let output_labels = read_strings(input)?;
        if dim == 0 {
            return Err(Error::Corrupt("zero embedding dimension".into()));
        }
        let input_rows = input_tokens.len() + bucket_count as usize;
        let in_matrix =
            DenseMatrix::from_vec(input_rows, dim, read_floats(input, input_rows * dim)?)?;
        let out_rows = output_labels.len();
        let out_matrix = DenseMatrix::from_vec(out_rows, dim, read_floats(input, out_rows * dim)?)?;
        let mut rest = [0u8; 1];
        if input.read(&mut rest)? != 0 {
            return Err(Error::Corrupt("trailing bytes after output matrix".into()));
        }
        let model = EmbeddingModel::from_matrices(in_matrix, out_matrix, seed)
            .map_err(|e| Error::Corrupt(e.to_string()))?;
        let file = ModelFile {
            task,
            bucket_count,
            input_tokens,
            output_labels,
            model,
        };
        file.check_sizes()?;
        Ok(file)
    }
}

fn eof(err: io::Error) -> Error {
    if err.kind() == io::ErrorKind::UnexpectedEof {
        Error::Truncated
    } else {
        Error::Io(err)
    }
}

fn read_len<R: Read>(input: &mut R, what: &str) -> Result<u32> {
    let value = input.read_u32::<LittleEndian>().map_err(eof)?;
    if value > MAX_LEN {
        return Err(Error::Corrupt(format!("implausible {what} {value}")));
    }
    Ok(value)
}

fn write_strings<W: Write>(out: &mut W, strings: &[String]) -> Result<()> {
    out.write_u32::<LittleEndian>(strings.len() as u32)?;
    for s in strings {
        out.write_u32::<LittleEndian>(s.len() as u32)?;
        out.write_all(s.as_bytes())?;
    }
    Ok(())
}

fn read_strings<R: Read>(input: &mut R) -> Result<Vec<String>> {
    let count = read_len(input, "string count")?;
    let mut strings = Vec::new();
    for _ in 0..count {
        let len = read_len(input, "string length")? as usize;
        let mut bytes = vec![0u8; len];
        input.read_exact(&mut bytes).map_err(eof)?;
        strings.push(
            String::from_utf8(bytes).map_err(|_| Error::Corrupt("invalid UTF-8 token".into()))?,
        );
    }
    Ok(strings)
}

fn write_floats<W: Write>(out: &mut W, values: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&bytes)?;
    Ok(())
}

fn read_floats<R: Read>(input: &mut R, count: usize) -> Result<Vec<f32>> {
    let mut values = Vec::with_capacity(count);
    let mut chunk = vec![0u8; 1 << 16];
    let mut remaining = count * 4;
    while remaining > 0 {
        let n = remaining.min(chunk.len());
        input.read_exact(&mut chunk[..n]).map_err(eof)?;
        values.extend(
            chunk[..n]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])),
        );
        remaining -= n;
    }
    Ok(values)
}

pub fn save_model(file: &ModelFile, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    file.write_to(&mut out)?;
    out.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelFile> {
    let mut input = BufReader::new(File::open(path)?);
    ModelFile::read_from(&mut input)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn sample(task: ModelTask, buckets: u32) -> ModelFile {
        let inputs: Vec<String> = vec!["a".into(), "ü b".into()];
        let outputs: Vec<String> = vec!["x".into(), "y".into(), "z".into()];
        let model = EmbeddingModel::new(inputs.len() + buckets as usize, 3, 4, 9).unwrap();
        ModelFile::new(task, inputs, buckets, outputs, model).unwrap()
    }

    fn bytes(file: &ModelFile) -> Vec<u8> {
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let file = sample(ModelTask::QaRelation, 5);
        let back = ModelFile::read_from(&mut bytes(&file).as_slice()).unwrap();
        assert_eq!(back, file);
    }

    #[test]
    fn truncation_is_detected() {
        let buf = bytes(&sample(ModelTask::EntityPrediction, 0));
        for cut in [0, 4, 9, 20, buf.len() / 2, buf.len() - 1] {
            assert!(
                matches!(
                    ModelFile::read_from(&mut &buf[..cut]),
                    Err(Error::Truncated)
                ),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut buf = bytes(&sample(ModelTask::EntityPrediction, 0));
        let mut wrong = buf.clone();
        wrong[0] = b'X';
        assert!(matches!(
            ModelFile::read_from(&mut wrong.as_slice()),
            Err(Error::BadMagic)
        ));
        buf[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
        assert!(matches!(
            ModelFile::read_from(&mut buf.as_slice()),
            Err(Error::UnsupportedVersion { found, .. }) if found == FORMAT_VERSION + 1
        ));
    }

    #[test]
    fn trailing_bytes_are_corrupt() {
        let mut buf = bytes(&sample(ModelTask::RelationPrediction, 0));
        buf.push(0);
        assert!(matches!(
            ModelFile::read_from(&mut buf.as_slice()),
            Err(Error::Corrupt(_))
        ));
    }

    #[test]
    fn size_mismatch_is_rejected() {
        let model = EmbeddingModel::new(3, 2, 4, 0).unwrap();
        assert!(ModelFile::new(
            ModelTask::EntityPrediction,
            vec!["a".into()],
            0,
            vec!["x".into(), "y".into()],
            model
        )
        .is_err());
    }

    proptest! {
        #[test]
        fn random_models_round_trip_bitwise(
            inputs in 1usize..12,
            buckets in 0u32..5,
            outputs in 1usize..9,
            dim in 1usize..9,
            seed in any::<u64>(),
            values in proptest::collection::vec(any::<f32>(), 64),
        ) {
            let mut model = EmbeddingModel::<f32>::new(inputs + buckets as usize, outputs, dim, seed).unwrap();
            // Arbitrary bit patterns, including NaN payloads, must survive.
            for (i, v) in model.output_matrix_mut().as_mut_slice().iter_mut().enumerate() {
                *v = values[i % values.len()];
            }
            let file = ModelFile::new(
                ModelTask::EntityPrediction,
                (0..inputs).map(|i| format!("in{i}")).collect(),
                buckets,
                (0..outputs).map(|i| format!("out{i}")).collect(),
                model,
            ).unwrap();
            let back = ModelFile::read_from(&mut bytes(&file).as_slice()).unwrap();
            let bits = |m: &EmbeddingModel<f32>| -> Vec<u32> {
                m.input_matrix().as_slice().iter().chain(m.output_matrix().as_slice()).map(|v| v.to_bits()).collect()
            };
            prop_assert_eq!(bits(&back.model), bits(&file.model));
            prop_assert_eq!(&back.input_tokens, &file.input_tokens);
            prop_assert_eq!(&back.output_labels, &file.output_labels);
            prop_assert_eq!(back.model.seed(), seed);
        }
    }
}
