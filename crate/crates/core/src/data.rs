//! Labeled datasets, synthetic task generation, CSV ingestion, class-disjoint
//! splits and N-way episode sampling.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::em::Annotations;
use crate::error::{invalid, Error, Result};
use crate::rng::from_seed;

/// Feature vectors with integer class ids.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    class_index: BTreeMap<usize, Vec<usize>>,
    class_names: Vec<String>,
}

impl LabeledDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<usize>) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        let dim = features.first().map_or(0, Vec::len);
        if features.iter().any(|f| f.len() != dim) {
            return Err(Error::Data("ragged feature rows".into()));
        }
        let mut class_index: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in labels.iter().enumerate() {
            class_index.entry(l).or_default().push(i);
        }
        Ok(Self {
            features,
            labels,
            class_index,
            class_names: vec![],
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> Vec<usize> {
        self.class_index.keys().copied().collect()
    }

    pub fn num_classes(&self) -> usize {
        self.class_index.len()
    }

    pub fn class_examples(&self, class: usize) -> &[usize] {
        self.class_index.get(&class).map_or(&[], |v| v.as_slice())
    }

    /// Original label strings for CSV-loaded data, indexed by class id.
    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    /// The subset of examples whose class is in `classes`.
    pub fn restrict_to(&self, classes: &[usize]) -> Self {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for &c in classes {
            for &i in self.class_examples(c) {
                features.push(self.features[i].clone());
                labels.push(c);
            }
        }
        let mut out = Self::new(features, labels).expect("consistent subset");
        out.class_names = self.class_names.clone();
        out
    }
}

/// Parameters of the Gaussian-blob task generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub dim: usize,
    /// Within-class standard deviation around each center.
    pub spread: f64,
    pub examples_per_class: usize,
    pub seed: u64,
}

/// Class centers from `N(0, I_D)`, examples `center + N(0, spread^2 I_D)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<LabeledDataset> {
    if spec.num_classes < 2 {
        return Err(invalid("num_classes", "need at least 2 classes"));
    }
    if spec.dim == 0 {
        return Err(invalid("dim", "must be >= 1"));
    }
    if !(spec.spread >= 0.0 && spec.spread.is_finite()) {
        return Err(invalid("spread", "must be finite and >= 0"));
    }
    let mut rng = from_seed(spec.seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let centers: Vec<Vec<f64>> = (0..spec.num_classes)
        .map(|_| (0..spec.dim).map(|_| normal()).collect())
        .collect();
    let mut features = Vec::with_capacity(spec.num_classes * spec.examples_per_class);
    let mut labels = Vec::with_capacity(features.capacity());
    for (c, center) in centers.iter().enumerate() {
        for _ in 0..spec.examples_per_class {
            features.push(center.iter().map(|m| m + spec.spread * normal()).collect());
            labels.push(c);
        }
    }
    LabeledDataset::new(features, labels)
}

/// Shuffles classes by `seed` and partitions them into train/val/test.
pub fn split_classes(
    dataset: &LabeledDataset,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset, LabeledDataset)> {
    let (ft, fv, fs) = fractions;
    if [ft, fv, fs].iter().any(|f| !(0.0..=1.0).contains(f)) || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(invalid("fractions", "must be in [0,1] and sum to 1"));
    }
    let mut classes = dataset.classes();
    let total = classes.len();
    let n_train = (ft * total as f64).round() as usize;
    let n_val = (fv * total as f64).round() as usize;
    if n_train + n_val > total {
        return Err(invalid("fractions", "rounding exceeds class count"));
    }
    let n_test = total - n_train - n_val;
    for (f, n, name) in [(ft, n_train, "train"), (fv, n_val, "val"), (fs, n_test, "test")] {
        if f > 0.0 && n == 0 {
            return Err(Error::Data(format!(
                "too few classes ({total}) for a nonzero {name} fraction"
            )));
        }
    }
    classes.shuffle(&mut from_seed(seed));
    let (train, rest) = classes.split_at(n_train);
    let (val, test) = rest.split_at(n_val);
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok((
        dataset.restrict_to(&sorted(train)),
        dataset.restrict_to(&sorted(val)),
        dataset.restrict_to(&sorted(test)),
    ))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Shots {
    Uniform(usize),
    /// Support count for each episode class, in episode-label order.
    PerClass(Vec<usize>),
}

impl Shots {
    fn for_class(&self, k: usize) -> usize {
        match self {
            Shots::Uniform(s) => *s,
            Shots::PerClass(v) => v[k],
        }
    }

    fn max(&self) -> usize {
        match self {
            Shots::Uniform(s) => *s,
            Shots::PerClass(v) => v.iter().copied().max().unwrap_or(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EpisodeShape {
    pub ways: usize,
    pub shots: Shots,
    pub query_per_class: usize,
    /// Fail when a drawn class is too small instead of drawing only from
    /// eligible classes.
    pub strict: bool,
}

impl EpisodeShape {
    pub fn new(ways: usize, shots: usize, query_per_class: usize) -> Self {
        Self {
            ways,
            shots: Shots::Uniform(shots),
            query_per_class,
            strict: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.ways < 1 {
            return Err(invalid("ways", "must be >= 1"));
        }
        match &self.shots {
            Shots::Uniform(0) => return Err(invalid("shots", "must be >= 1")),
            Shots::PerClass(v) => {
                if v.len() != self.ways {
                    return Err(invalid("shots", "per-class overrides must match ways"));
                }
                if v.contains(&0) {
                    return Err(invalid("shots", "every override must be >= 1"));
                }
            }
            _ => {}
        }
        Ok(())
    }
}

/// One N-way task: support with true labels (and optionally annotations)
/// plus a disjoint query set. Labels are episode-local, `0..ways`, assigned by
/// sorted original class id.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub classes: Vec<usize>,
    pub support_x: Vec<Vec<f64>>,
    pub support_labels: Vec<usize>,
    pub support_indices: Vec<usize>,
    pub support_annotations: Option<Annotations>,
    pub query_x: Vec<Vec<f64>>,
    pub query_labels: Vec<usize>,
    pub query_indices: Vec<usize>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.classes.len()
    }
}

pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    shape: &EpisodeShape,
    rng: &mut R,
) -> Result<Episode> {
    shape.validate()?;
    let need = shape.shots.max() + shape.query_per_class;
    let pool: Vec<usize> = if shape.strict {
        dataset.classes()
    } else {
        dataset
            .classes()
            .into_iter()
            .filter(|c| dataset.class_examples(*c).len() >= need)
            .collect()
    };
    if pool.len() < shape.ways {
        return Err(Error::Data(format!(
            "need {} classes with >= {need} examples, have {}",
            shape.ways,
            pool.len()
        )));
    }
    let mut classes: Vec<usize> = sample(rng, pool.len(), shape.ways)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    classes.sort_unstable();
    let mut ep = Episode {
        classes: classes.clone(),
        support_x: vec![],
        support_labels: vec![],
        support_indices: vec![],
        support_annotations: None,
        query_x: vec![],
        query_labels: vec![],
        query_indices: vec![],
    };
    for (k, &c) in classes.iter().enumerate() {
        let members = dataset.class_examples(c);
        let shots = shape.shots.for_class(k);
        let take = shots + shape.query_per_class;
        if members.len() < take {
            return Err(Error::Data(format!(
                "class {c} has {} examples, episode needs {take}",
                members.len()
            )));
        }
        let picked = sample(rng, members.len(), take).into_vec();
        for (j, &slot) in picked.iter().enumerate() {
            let idx = members[slot];
            let x = dataset.features()[idx].clone();
            if j < shots {
                ep.support_x.push(x);
                ep.support_labels.push(k);
                ep.support_indices.push(idx);
            } else {
                ep.query_x.push(x);
                ep.query_labels.push(k);
                ep.query_indices.push(idx);
            }
        }
    }
    Ok(ep)
}

/// An episode whose support counts follow `overrides` (per episode class)
/// with a balanced query set.
pub fn simulate_class_imbalance<R: Rng + ?Sized>(
    dataset: &LabeledDataset,
    overrides: &[usize],
    query_per_class: usize,
    rng: &mut R,
) -> Result<Episode> {
    if overrides.contains(&0) {
        return Err(invalid("shots", "every override must be >= 1"));
    }
    let shape = EpisodeShape {
        ways: overrides.len(),
        shots: Shots::PerClass(overrides.to_vec()),
        query_per_class,
        strict: false,
    };
    sample_episode(dataset, &shape, rng)
}

/// Reads a headered CSV; `label_column` names the label, every other column
/// must be numeric. Labels map to dense ids in order of first appearance.
pub fn load_csv(path: &Path, label_column: &str) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, label_column)
}

pub fn read_csv<R: std::io::Read>(reader: R, label_column: &str) -> Result<LabeledDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            row: 1,
            message: e.to_string(),
        })?
        .clone();
    if headers.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let label_idx = headers
        .iter()
        .position(|h| h.trim() == label_column)
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("missing label column {label_column:?}"),
        })?;
    let mut names: Vec<String> = Vec::new();
    let mut ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != headers.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", headers.len(), record.len()),
            });
        }
        let mut x = Vec::with_capacity(headers.len() - 1);
        for (j, field) in record.iter().enumerate() {
            if j == label_idx {
                continue;
            }
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                row,
                message: format!("non-numeric value {field:?} in column {:?}", &headers[j]),
            })?;
            x.push(v);
        }
        let name = record[label_idx].trim().to_string();
        let id = *ids.entry(name.clone()).or_insert_with(|| {
            names.push(name);
            names.len() - 1
        });
        features.push(x);
        labels.push(id);
    }
    if features.is_empty() {
        return Err(Error::Data("no data rows".into()));
    }
    let mut ds = LabeledDataset::new(features, labels)?;
    ds.class_names = names;
    Ok(ds)
}
