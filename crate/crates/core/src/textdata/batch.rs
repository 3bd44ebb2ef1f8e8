use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// A batch of equal-length sequences of per-position character distributions.
///
/// Stored position-major: `steps[t]` is the `B x V` matrix for position `t`.
/// A zero-length batch (an empty teacher-helping prefix) has no steps.
#[derive(Clone, Debug, PartialEq)]
pub struct CharSeqBatch<F: Scalar> {
    steps: Vec<Tensor<F>>,
    batch: usize,
    vocab: usize,
    onehot: bool,
}

impl<F: Scalar> CharSeqBatch<F> {
    pub fn from_ids(ids: &[Vec<usize>], vocab: usize) -> Result<Self> {
        let batch = ids.len();
        if batch == 0 {
            return Err(Error::EmptyBatch("CharSeqBatch::from_ids"));
        }
        let len = ids[0].len();
        if ids.iter().any(|r| r.len() != len) {
            return Err(Error::InvalidTensor("rows of a batch must share one length".into()));
        }
        if let Some(&bad) = ids.iter().flatten().find(|&&i| i >= vocab) {
            return Err(Error::InvalidTensor(format!("id {bad} out of range for vocab size {vocab}")));
        }
        let steps = (0..len)
            .map(|t| {
                let mut m = Tensor::zeros(&[batch, vocab]);
                for (b, row) in ids.iter().enumerate() {
                    m.data_mut()[b * vocab + row[t]] = F::one();
                }
                m
            })
            .collect();
        Ok(CharSeqBatch { steps, batch, vocab, onehot: true })
    }

    /// Soft batch from per-position `B x V` distributions.
    pub fn from_steps(steps: Vec<Tensor<F>>) -> Result<Self> {
        let first = steps.first().ok_or(Error::EmptyBatch("CharSeqBatch::from_steps"))?;
        let (batch, vocab) = (first.rows(), first.cols());
        for s in &steps {
            if s.shape() != [batch, vocab] {
                return Err(Error::shape("CharSeqBatch::from_steps", &[first.shape(), s.shape()]));
            }
        }
        let onehot = steps.iter().all(|s| s.data().iter().all(|&x| x == F::zero() || x == F::one()));
        Ok(CharSeqBatch { steps, batch, vocab, onehot })
    }

    pub fn empty(batch: usize, vocab: usize) -> Self {
        CharSeqBatch { steps: Vec::new(), batch, vocab, onehot: true }
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn is_onehot(&self) -> bool {
        self.onehot
    }

    pub fn steps(&self) -> &[Tensor<F>] {
        &self.steps
    }

    pub fn step(&self, t: usize) -> &Tensor<F> {
        &self.steps[t]
    }

    pub fn into_steps(self) -> Vec<Tensor<F>> {
        self.steps
    }

    /// Appends positions from `other` (same batch and vocab).
    pub fn concat(mut self, other: &Self) -> Result<Self> {
        if self.batch != other.batch || self.vocab != other.vocab {
            return Err(Error::shape(
                "CharSeqBatch::concat",
                &[&[self.batch, self.vocab], &[other.batch, other.vocab]],
            ));
        }
        self.steps.extend(other.steps.iter().cloned());
        self.onehot &= other.onehot;
        Ok(self)
    }

    /// Dense `B x L x V` copy.
    pub fn to_tensor(&self) -> Result<Tensor<F>> {
        let (b, l, v) = (self.batch, self.len(), self.vocab);
        let mut data = vec![F::zero(); b * l * v];
        for (t, s) in self.steps.iter().enumerate() {
            for r in 0..b {
                data[(r * l + t) * v..(r * l + t + 1) * v].copy_from_slice(s.row_slice(r));
            }
        }
        Tensor::new(vec![b, l, v], data)
    }

    /// Largest deviation of any distribution's sum from 1.
    pub fn max_row_sum_error(&self) -> F {
        self.steps
            .iter()
            .flat_map(|s| s.data().chunks_exact(self.vocab))
            .map(|r| (r.iter().copied().sum::<F>() - F::one()).abs())
            .fold(F::zero(), F::max)
    }

    /// Most probable id per position; ties go to the lowest id.
    pub fn argmax_ids(&self) -> Vec<Vec<usize>> {
        (0..self.batch)
            .map(|b| {
                self.steps
                    .iter()
                    .map(|s| {
                        let row = s.row_slice(b);
                        let mut best = 0;
                        for (i, &x) in row.iter().enumerate() {
                            if x > row[best] {
                                best = i;
                            }
                        }
                        best
                    })
                    .collect()
            })
            .collect()
    }
}
