//! Dense embedding matrices and the bag-of-words forward pass.
//!
//! A model is a pair of matrices sharing the embedding dimension: the input
//! matrix is a lookup table over discrete input tokens, the output matrix
//! holds one linear classifier per output class. The hidden representation
//! of an input set is the mean of its token rows, and the score of class `k`
//! is the dot product of output row `k` with that mean.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign};
use std::sync::atomic::{AtomicU32, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Scalar type of model parameters.
///
/// Production code runs on `f32`; the `f64` instantiation exists so that
/// gradient checks have numerical headroom.
pub trait Float:
    num_traits::Float + AddAssign + MulAssign + Sum + Default + Debug + Send + Sync + 'static
{
    fn from_f64(value: f64) -> Self;
}

impl Float for f32 {
    #[inline]
    fn from_f64(value: f64) -> Self {
        value as f32
    }
}

impl Float for f64 {
    #[inline]
    fn from_f64(value: f64) -> Self {
        value
    }
}

/// One training instance: a bag of input tokens and the class to predict.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub tokens: Vec<u32>,
    pub label: u32,
}

impl Example {
    pub fn new(tokens: Vec<u32>, label: u32) -> Self {
        Example { tokens, label }
    }

    /// Checks the example against model sizes.
    pub fn validate(&self, input_vocab_size: usize, class_count: usize) -> Result<()> {
        if self.tokens.is_empty() {
            return Err(Error::invalid("example has no input tokens"));
        }
        check_tokens(&self.tokens, input_vocab_size)?;
        if self.label as usize >= class_count {
            return Err(Error::Index {
                what: "output classes",
                index: self.label as usize,
                len: class_count,
            });
        }
        Ok(())
    }
}

pub(crate) fn check_tokens(tokens: &[u32], input_vocab_size: usize) -> Result<()> {
    if let Some(&bad) = tokens.iter().find(|&&t| t as usize >= input_vocab_size) {
        return Err(Error::Index {
            what: "input vocabulary",
            index: bad as usize,
            len: input_vocab_size,
        });
    }
    Ok(())
}

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseMatrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Float> DenseMatrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data has {} values, expected {rows}x{cols}",
                data.len()
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[F] {
        &self.data[index * self.cols..(index + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, index: usize) -> &mut [F] {
        &mut self.data[index * self.cols..(index + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[F] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }
}

/// Dot product with independent partial sums so the compiler can vectorize.
#[inline]
pub fn dot<F: Float>(a: &[F], b: &[F]) -> F {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [F::zero(); 8];
    let chunks = a.len() / 8 * 8;
    for (ca, cb) in a[..chunks].chunks_exact(8).zip(b[..chunks].chunks_exact(8)) {
        for lane in 0..8 {
            acc[lane] += ca[lane] * cb[lane];
        }
    }
    let mut tail = F::zero();
    for (&x, &y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `dst += scale * src`
#[inline]
pub fn scaled_add<F: Float>(dst: &mut [F], src: &[F], scale: F) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += scale * s;
    }
}

/// Read and update access to model rows, implemented by the owned model and
/// by the lock-free shared view used during parallel training.
pub trait Parameters<F: Float> {
    fn dim(&self) -> usize;
    fn input_vocab_size(&self) -> usize;
    fn class_count(&self) -> usize;

    /// `out += input_row(row)`
    fn accumulate_input(&self, row: usize, out: &mut [F]);

    /// `input_row(row) += delta`
    fn add_to_input(&mut self, row: usize, delta: &[F]);

    fn output_dot(&self, class: usize, hidden: &[F]) -> F;

    /// `grad += alpha * w_class` using the value before the update, then
    /// `w_class += alpha * hidden`.
    fn update_output(&mut self, class: usize, hidden: &[F], alpha: F, grad: &mut [F]);
}

/// Input lookup matrix plus output classifier matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingModel<F = f32> {
    input: DenseMatrix<F>,
    output: DenseMatrix<F>,
    seed: u64,
}

impl<F: Float> EmbeddingModel<F> {
    /// Input rows uniform on `[-1/dim, 1/dim]`, output rows zero.
    pub fn new(input_vocab_size: usize, class_count: usize, dim: usize, seed: u64) -> Result<Self> {
        if input_vocab_size == 0 || class_count == 0 || dim == 0 {
            return Err(Error::invalid(format!(
                "model sizes must be positive (inputs {input_vocab_size}, classes {class_count}, dim {dim})"
            )));
        }
        let bound = 1.0 / dim as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut input = DenseMatrix::zeros(input_vocab_size, dim);
        for value in input.as_mut_slice() {
            *value = F::from_f64(rng.random_range(-bound..=bound));
        }
        Ok(EmbeddingModel {
            input,
            output: DenseMatrix::zeros(class_count, dim),
            seed,
        })
    }

    pub fn from_matrices(input: DenseMatrix<F>, output: DenseMatrix<F>, seed: u64) -> Result<Self> {
        if input.cols() == 0 || input.cols() != output.cols() {
            return Err(Error::invalid(format!(
                "input and output matrices need the same positive width (got {} and {})",
                input.cols(),
                output.cols()
            )));
        }
        if input.rows() == 0 || output.rows() == 0 {
            return Err(Error::invalid("model matrices must have at least one row"));
        }
        Ok(EmbeddingModel {
            input,
            output,
            seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.input.cols()
    }

    pub fn input_vocab_size(&self) -> usize {
        self.input.rows()
    }

    pub fn class_count(&self) -> usize {
        self.output.rows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_matrix(&self) -> &DenseMatrix<F> {
        &self.input
    }

    pub fn input_matrix_mut(&mut self) -> &mut DenseMatrix<F> {
        &mut self.input
    }

    pub fn output_matrix(&self) -> &DenseMatrix<F> {
        &self.output
    }

    pub fn output_matrix_mut(&mut self) -> &mut DenseMatrix<F> {
        &mut self.output
    }

    pub fn is_finite(&self) -> bool {
        self.input.as_slice().iter().all(|v| v.is_finite())
            && self.output.as_slice().iter().all(|v| v.is_finite())
    }

    /// Mean of the input rows at `tokens`. Repeated tokens count repeatedly.
    pub fn average_input(&self, tokens: &[u32]) -> Result<Vec<F>> {
        if tokens.is_empty() {
            return Err(Error::invalid("cannot average an empty token list"));
        }
        check_tokens(tokens, self.input_vocab_size())?;
        let mut hidden = vec![F::zero(); self.dim()];
        average_into(self, tokens, &mut hidden);
        Ok(hidden)
    }

    /// Scores of every class for a hidden vector.
    pub fn score_all(&self, hidden: &[F]) -> Result<Vec<F>> {
        if hidden.len() != self.dim() {
            return Err(Error::invalid(format!(
                "hidden vector has length {}, model dimension is {}",
                hidden.len(),
                self.dim()
            )));
        }
        let mut scores = vec![F::zero(); self.class_count()];
        score_into(self, hidden, &mut scores);
        Ok(scores)
    }

    /// Scores of every class for a bag of tokens.
    pub fn score_tokens(&self, tokens: &[u32]) -> Result<Vec<F>> {
        let hidden = self.average_input(tokens)?;
        self.score_all(&hidden)
    }
}

impl<F: Float> Parameters<F> for EmbeddingModel<F> {
    #[inline]
    fn dim(&self) -> usize {
        self.input.cols()
    }

    #[inline]
    fn input_vocab_size(&self) -> usize {
        self.input.rows()
    }

    #[inline]
    fn class_count(&self) -> usize {
        self.output.rows()
    }

    #[inline]
    fn accumulate_input(&self, row: usize, out: &mut [F]) {
        scaled_add(out, self.input.row(row), F::one());
    }

    #[inline]
    fn add_to_input(&mut self, row: usize, delta: &[F]) {
        scaled_add(self.input.row_mut(row), delta, F::one());
    }

    #[inline]
    fn output_dot(&self, class: usize, hidden: &[F]) -> F {
        dot(self.output.row(class), hidden)
    }

    #[inline]
    fn update_output(&mut self, class: usize, hidden: &[F], alpha: F, grad: &mut [F]) {
        let row = self.output.row_mut(class);
        for ((w, g), &h) in row.iter_mut().zip(grad.iter_mut()).zip(hidden) {
            *g += alpha * *w;
            *w += alpha * h;
        }
    }
}

/// Writes the mean of the token rows into `hidden`. Tokens must be valid.
pub(crate) fn average_into<F: Float, P: Parameters<F> + ?Sized>(
    params: &P,
    tokens: &[u32],
    hidden: &mut [F],
) {
    hidden.iter_mut().for_each(|h| *h = F::zero());
    for &token in tokens {
        params.accumulate_input(token as usize, hidden);
    }
    let scale = F::one() / F::from_f64(tokens.len() as f64);
    hidden.iter_mut().for_each(|h| *h *= scale);
}

pub(crate) fn score_into<F: Float, P: Parameters<F> + ?Sized>(
    params: &P,
    hidden: &[F],
    scores: &mut [F],
) {
    for (class, score) in scores.iter_mut().enumerate() {
        *score = params.output_dot(class, hidden);
    }
}

/// Matrix of `f32` stored as atomic words.
///
/// Concurrent writers may lose updates, but every load and store is a whole
/// scalar, so no torn values can be observed.
pub struct AtomicMatrix {
    rows: usize,
    cols: usize,
    data: Vec<AtomicU32>,
}

impl AtomicMatrix {
    fn from_dense(matrix: DenseMatrix<f32>) -> Self {
        let (rows, cols) = (matrix.rows, matrix.cols);
        let mut data = std::mem::ManuallyDrop::new(matrix.data);
        let (ptr, len, cap) = (data.as_mut_ptr(), data.len(), data.capacity());
        // SAFETY: AtomicU32 has the same size and alignment as u32, and f32
        // has the same size and alignment as u32; every bit pattern is a
        // valid f32, so reinterpreting the allocation is sound.
        let data = unsafe { Vec::from_raw_parts(ptr as *mut AtomicU32, len, cap) };
        AtomicMatrix { rows, cols, data }
    }

    fn into_dense(self) -> DenseMatrix<f32> {
        let mut data = std::mem::ManuallyDrop::new(self.data);
        let (ptr, len, cap) = (data.as_mut_ptr(), data.len(), data.capacity());
        // SAFETY: inverse of `from_dense`; ownership is unique here.
        let data = unsafe { Vec::from_raw_parts(ptr as *mut f32, len, cap) };
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data,
        }
    }

    #[inline]
    fn row(&self, index: usize) -> &[AtomicU32] {
        &self.data[index * self.cols..(index + 1) * self.cols]
    }
}

#[inline]
fn load(cell: &AtomicU32) -> f32 {
    f32::from_bits(cell.load(Ordering::Relaxed))
}

#[inline]
fn store(cell: &AtomicU32, value: f32) {
    cell.store(value.to_bits(), Ordering::Relaxed)
}

/// Model shared between training workers without locks.
pub struct SharedModel {
    input: AtomicMatrix,
    output: AtomicMatrix,
    seed: u64,
}

impl SharedModel {
    pub fn new(model: EmbeddingModel<f32>) -> Self {
        SharedModel {
            input: AtomicMatrix::from_dense(model.input),
            output: AtomicMatrix::from_dense(model.output),
            seed: model.seed,
        }
    }

    pub fn into_model(self) -> EmbeddingModel<f32> {
        EmbeddingModel {
            input: self.input.into_dense(),
            output: self.output.into_dense(),
            seed: self.seed,
        }
    }
}

impl Parameters<f32> for &SharedModel {
    #[inline]
    fn dim(&self) -> usize {
        self.input.cols
    }

    #[inline]
    fn input_vocab_size(&self) -> usize {
        self.input.rows
    }

    #[inline]
    fn class_count(&self) -> usize {
        self.output.rows
    }

    #[inline]
    fn accumulate_input(&self, row: usize, out: &mut [f32]) {
        for (o, cell) in out.iter_mut().zip(self.input.row(row)) {
            *o += load(cell);
        }
    }

    #[inline]
    fn add_to_input(&mut self, row: usize, delta: &[f32]) {
        for (cell, &d) in self.input.row(row).iter().zip(delta) {
            store(cell, load(cell) + d);
        }
    }

    #[inline]
    fn output_dot(&self, class: usize, hidden: &[f32]) -> f32 {
        let row = self.output.row(class);
        let mut acc = [0f32; 4];
        let chunks = row.len() / 4 * 4;
        for (cw, ch) in row[..chunks]
            .chunks_exact(4)
            .zip(hidden[..chunks].chunks_exact(4))
        {
            for lane in 0..4 {
                acc[lane] += load(&cw[lane]) * ch[lane];
            }
        }
        let mut tail = 0f32;
        for (cell, &h) in row[chunks..].iter().zip(&hidden[chunks..]) {
            tail += load(cell) * h;
        }
        (acc[0] + acc[2]) + (acc[1] + acc[3]) + tail
    }

    #[inline]
    fn update_output(&mut self, class: usize, hidden: &[f32], alpha: f32, grad: &mut [f32]) {
        for ((cell, g), &h) in self
            .output
            .row(class)
            .iter()
            .zip(grad.iter_mut())
            .zip(hidden)
        {
            let w = load(cell);
            *g += alpha * w;
            store(cell, w + alpha * h);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model_with_rows(input: &[[f64; 2]], output: &[[f64; 2]]) -> EmbeddingModel<f64> {
        let input = DenseMatrix::from_vec(input.len(), 2, input.concat()).unwrap();
        let output = DenseMatrix::from_vec(output.len(), 2, output.concat()).unwrap();
        EmbeddingModel::from_matrices(input, output, 0).unwrap()
    }

    #[test]
    fn init_shapes_and_ranges() {
        let model = EmbeddingModel::<f32>::new(4, 3, 2, 7).unwrap();
        assert_eq!(model.input_matrix().rows(), 4);
        assert_eq!(model.input_matrix().cols(), 2);
        assert_eq!(model.output_matrix().rows(), 3);
        assert!(model
            .input_matrix()
            .as_slice()
            .iter()
            .all(|v| (-0.5..=0.5).contains(v)));
        assert!(model.output_matrix().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn init_is_deterministic() {
        let a = EmbeddingModel::<f32>::new(4, 3, 2, 7).unwrap();
        let b = EmbeddingModel::<f32>::new(4, 3, 2, 7).unwrap();
        let bits = |m: &EmbeddingModel<f32>| -> Vec<u32> {
            m.input_matrix()
                .as_slice()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = EmbeddingModel::<f32>::new(4, 3, 2, 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn init_rejects_zero_sizes() {
        assert!(matches!(
            EmbeddingModel::<f32>::new(0, 3, 2, 7),
            Err(Error::InvalidArgument(_))
        ));
        assert!(EmbeddingModel::<f32>::new(4, 0, 2, 7).is_err());
        assert!(EmbeddingModel::<f32>::new(4, 3, 0, 7).is_err());
    }

    #[test]
    fn average_of_two_rows() {
        let m = model_with_rows(&[[9.0, 9.0], [1.0, 0.0], [0.0, 1.0]], &[[0.0, 0.0]]);
        assert_eq!(m.average_input(&[1, 2]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn average_single_token_is_identity() {
        let m = model_with_rows(&[[0.0, 0.0], [3.0, -2.0]], &[[0.0, 0.0]]);
        assert_eq!(m.average_input(&[1]).unwrap(), vec![3.0, -2.0]);
    }

    #[test]
    fn average_of_three_rows() {
        let m = model_with_rows(&[[1.0, 2.0], [3.0, 4.0], [5.0, 0.0]], &[[0.0, 0.0]]);
        assert_eq!(m.average_input(&[0, 1, 2]).unwrap(), vec![3.0, 2.0]);
    }

    #[test]
    fn average_counts_duplicates() {
        let m = model_with_rows(&[[1.0, 0.0], [0.0, 1.0]], &[[0.0, 0.0]]);
        let h = m.average_input(&[0, 0, 1]).unwrap();
        assert!((h[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((h[1] - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn average_errors() {
        let m = model_with_rows(&[[1.0, 0.0]], &[[0.0, 0.0]]);
        assert!(matches!(
            m.average_input(&[]),
            Err(Error::InvalidArgument(_))
        ));
        assert!(matches!(m.average_input(&[1]), Err(Error::Index { .. })));
    }

    #[test]
    fn score_examples() {
        let m = model_with_rows(&[[0.0, 0.0]], &[[1.0, 0.0], [0.0, 2.0]]);
        assert_eq!(m.score_all(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(m.score_all(&[3.0, 4.0]).unwrap(), vec![3.0, 8.0]);
        let id = model_with_rows(&[[0.0, 0.0]], &[[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!(id.score_all(&[-1.5, 2.5]).unwrap(), vec![-1.5, 2.5]);
        assert!(matches!(
            m.score_all(&[1.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn dot_matches_naive_sum() {
        let a: Vec<f64> = (0..21).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..21).map(|i| (i as f64).sin()).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert!((dot(&a, &b) - naive).abs() < 1e-12);
    }

    #[test]
    fn shared_model_round_trip_is_bitwise() {
        let model = EmbeddingModel::<f32>::new(5, 3, 6, 11).unwrap();
        let back = SharedModel::new(model.clone()).into_model();
        assert_eq!(model, back);
    }

    #[test]
    fn shared_view_agrees_with_owned_model() {
        let mut owned = EmbeddingModel::<f32>::new(5, 3, 6, 11).unwrap();
        let shared = SharedModel::new(owned.clone());
        let hidden = [0.1f32, -0.2, 0.3, 0.4, -0.5, 0.6];
        let mut g1 = [0f32; 6];
        let mut g2 = [0f32; 6];
        owned.update_output(2, &hidden, 0.5, &mut g1);
        let mut view = &shared;
        view.update_output(2, &hidden, 0.5, &mut g2);
        view.add_to_input(1, &hidden);
        owned.add_to_input(1, &hidden);
        assert_eq!(g1, g2);
        assert_eq!(owned, shared.into_model());
    }
}
