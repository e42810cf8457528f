use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Column-stochastic `K x K` matrix; entry `(l, k)` is the probability that an
/// annotator reports label `l` when the true class is `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    k: usize,
    /// Row-major by reported label: `entries[l * k + t]`.
    entries: Vec<f64>,
}

impl ConfusionMatrix {
    /// Builds from `rows[l][t]`, checking column stochasticity.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.len();
        if k == 0 || rows.iter().any(|r| r.len() != k) {
            return Err(invalid("confusion", "matrix must be square and nonempty"));
        }
        let entries: Vec<f64> = rows.iter().flatten().copied().collect();
        let m = Self { k, entries };
        m.validate()?;
        Ok(m)
    }

    pub(crate) fn from_entries_unchecked(k: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), k * k);
        Self { k, entries }
    }

    pub fn identity(k: usize) -> Self {
        let mut entries = vec![0.0; k * k];
        for i in 0..k {
            entries[i * k + i] = 1.0;
        }
        Self { k, entries }
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            k,
            entries: vec![1.0 / k as f64; k * k],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    #[inline]
    pub fn get(&self, label: usize, class: usize) -> f64 {
        self.entries[label * self.k + class]
    }

    pub fn column(&self, class: usize) -> Vec<f64> {
        (0..self.k).map(|l| self.get(l, class)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.k).map(|r| r.to_vec()).collect()
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    /// Largest deviation of any column sum from one.
    pub fn column_sum_error(&self) -> f64 {
        (0..self.k)
            .map(|t| (self.column(t).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    fn validate(&self) -> Result<()> {
        if self
            .entries
            .iter()
            .any(|e| !e.is_finite() || *e < 0.0 || *e > 1.0)
        {
            return Err(invalid("confusion", "entries must lie in [0, 1]"));
        }
        if self.column_sum_error() > 1e-12 {
            return Err(invalid("confusion", "columns must sum to 1"));
        }
        Ok(())
    }
}

/// Per-example annotator labels. Example `n` carries a list of
/// `(annotator, label)` pairs sorted by annotator, one per annotator in `I_n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotations {
    num_classes: usize,
    num_annotators: usize,
    per_example: Vec<Vec<(usize, usize)>>,
}

impl Annotations {
    pub fn new(
        num_classes: usize,
        num_annotators: usize,
        mut per_example: Vec<Vec<(usize, usize)>>,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(invalid("num_classes", "must be at least 1"));
        }
        for (n, labels) in per_example.iter_mut().enumerate() {
            if labels.is_empty() {
                return Err(Error::UnannotatedExample { index: n });
            }
            labels.sort_unstable();
            for w in labels.windows(2) {
                if w[0].0 == w[1].0 {
                    return Err(Error::AnnotationOutOfRange(format!(
                        "annotator {} labels example {n} twice",
                        w[0].0
                    )));
                }
            }
            for &(r, l) in labels.iter() {
                if r >= num_annotators || l >= num_classes {
                    return Err(Error::AnnotationOutOfRange(format!(
                        "example {n}: annotator {r} label {l} (R={num_annotators}, K={num_classes})"
                    )));
                }
            }
        }
        Ok(Self {
            num_classes,
            num_annotators,
            per_example,
        })
    }

    /// Every one of `num_annotators` annotators labels every example; `labels[n][r]`.
    pub fn dense(num_classes: usize, labels: &[Vec<usize>]) -> Result<Self> {
        let r = labels.first().map_or(0, |l| l.len());
        let per_example = labels
            .iter()
            .map(|row| row.iter().copied().enumerate().collect())
            .collect();
        Self::new(num_classes, r, per_example)
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_annotators(&self) -> usize {
        self.num_annotators
    }

    pub fn len(&self) -> usize {
        self.per_example.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_example.is_empty()
    }

    pub fn example(&self, n: usize) -> &[(usize, usize)] {
        &self.per_example[n]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[(usize, usize)]> {
        self.per_example.iter().map(|v| v.as_slice())
    }

    pub fn total_labels(&self) -> usize {
        self.per_example.iter().map(Vec::len).sum()
    }

    /// Label given by `annotator` to example `n`, if any.
    pub fn label(&self, n: usize, annotator: usize) -> Option<usize> {
        self.per_example[n]
            .binary_search_by_key(&annotator, |p| p.0)
            .ok()
            .map(|i| self.per_example[n][i].1)
    }
}

/// Embedded support examples paired with their annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub embeddings: Vec<Vec<f64>>,
    pub annotations: Annotations,
}

impl SupportSet {
    pub fn new(embeddings: Vec<Vec<f64>>, annotations: Annotations) -> Result<Self> {
        if embeddings.len() != annotations.len() {
            return Err(Error::DimensionMismatch {
                context: "support examples vs annotations",
                expected: annotations.len(),
                actual: embeddings.len(),
            });
        }
        let dim = embeddings.first().map_or(0, Vec::len);
        for e in &embeddings {
            if e.len() != dim {
                return Err(Error::DimensionMismatch {
                    context: "support embedding",
                    expected: dim,
                    actual: e.len(),
                });
            }
            if e.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("support embeddings"));
            }
        }
        Ok(Self {
            embeddings,
            annotations,
        })
    }

    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    pub fn num_classes(&self) -> usize {
        self.annotations.num_classes()
    }
}

/// Row-stochastic `N x K` matrix of class memberships.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Responsibilities {
    k: usize,
    data: Vec<f64>,
}

impl Responsibilities {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            return Err(invalid("responsibilities", "ragged rows"));
        }
        for r in rows {
            if r.iter().any(|x| !x.is_finite() || *x < 0.0)
                || (r.iter().sum::<f64>() - 1.0).abs() > 1e-12
            {
                return Err(invalid("responsibilities", "rows must be probability vectors"));
            }
        }
        Ok(Self {
            k,
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub(crate) fn from_flat(k: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len() % k.max(1), 0);
        Self { k, data }
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, n: usize, k: usize) -> f64 {
        self.data[n * self.k + k]
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.data[n * self.k..(n + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.k)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    /// Column sums `sum_n lambda_nk`.
    pub fn class_mass(&self) -> Vec<f64> {
        let mut mass = vec![0.0; self.k];
        for row in self.rows() {
            for (m, v) in mass.iter_mut().zip(row) {
                *m += v;
            }
        }
        mass
    }

    pub fn row_sum_error(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Prior hyperparameters and EM iteration count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorHyperparams {
    /// Precision of the zero-mean Gaussian prior on each prototype.
    pub tau: f64,
    /// Dirichlet exponent on the class prior.
    pub b: f64,
    /// Dirichlet exponent on each confusion column.
    pub c: f64,
    /// Number of {M step, E step} iterations.
    pub em_steps: usize,
}

impl PriorHyperparams {
    pub fn new(tau: f64, b: f64, c: f64, em_steps: usize) -> Result<Self> {
        for (name, v) in [("tau", tau), ("b", b), ("c", c)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        if em_steps == 0 {
            return Err(invalid("em_steps", "must be at least 1"));
        }
        Ok(Self { tau, b, c, em_steps })
    }

    /// `tau = 0` (flat prototype prior). Only meaningful for reducing the
    /// model to class means; every class must then carry positive mass.
    pub fn with_zero_tau(b: f64, c: f64, em_steps: usize) -> Result<Self> {
        let mut h = Self::new(1.0, b, c, em_steps)?;
        h.tau = 0.0;
        Ok(h)
    }

    pub fn with_em_steps(mut self, em_steps: usize) -> Self {
        self.em_steps = em_steps.max(1);
        self
    }

    pub fn with_b(mut self, b: f64) -> Self {
        self.b = b;
        self
    }
}

impl Default for PriorHyperparams {
    fn default() -> Self {
        Self {
            tau: 1.0,
            b: 1.0,
            c: 1.0,
            em_steps: 2,
        }
    }
}

/// Task-specific parameters after EM adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptedClassifier {
    pub prototypes: Vec<Vec<f64>>,
    pub class_prior: Vec<f64>,
    pub confusions: Vec<ConfusionMatrix>,
    pub responsibilities: Responsibilities,
    pub hyper: PriorHyperparams,
}

impl AdaptedClassifier {
    pub fn num_classes(&self) -> usize {
        self.prototypes.len()
    }

    pub fn dim(&self) -> usize {
        self.prototypes.first().map_or(0, Vec::len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_rejects_non_stochastic_columns() {
        let bad = vec![vec![0.5, 0.5], vec![0.6, 0.5]];
        assert!(ConfusionMatrix::from_rows(&bad).is_err());
        let ok = vec![vec![0.8, 0.2], vec![0.2, 0.8]];
        assert_eq!(ConfusionMatrix::from_rows(&ok).unwrap().get(1, 0), 0.2);
    }

    #[test]
    fn annotations_validate_ranges_and_presence() {
        assert_eq!(
            Annotations::new(2, 2, vec![vec![(0, 1)], vec![]]),
            Err(Error::UnannotatedExample { index: 1 })
        );
        assert!(Annotations::new(2, 2, vec![vec![(2, 0)]]).is_err());
        assert!(Annotations::new(2, 2, vec![vec![(0, 2)]]).is_err());
        let a = Annotations::new(3, 2, vec![vec![(1, 2), (0, 0)]]).unwrap();
        assert_eq!(a.example(0), &[(0, 0), (1, 2)]);
        assert_eq!(a.label(0, 1), Some(2));
    }

    #[test]
    fn hyperparams_require_positive_values() {
        assert!(PriorHyperparams::new(0.0, 1.0, 1.0, 1).is_err());
        assert!(PriorHyperparams::new(1.0, -1.0, 1.0, 1).is_err());
        assert!(PriorHyperparams::new(1.0, 1.0, 1.0, 0).is_err());
        assert_eq!(PriorHyperparams::with_zero_tau(1.0, 1.0, 1).unwrap().tau, 0.0);
    }
}
