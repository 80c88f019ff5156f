//! Labelled datasets, synthetic blobs, CSV ingestion and partitioning across
//! participants.

use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::model::{gaussian_values, Matrix};
use crate::rng::{self, stream};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
}

impl Dataset {
    /// Shards may be empty; generated and loaded datasets never are.
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
        })
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    /// Indices of every sample, grouped by class, in dataset order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }
}

/// Sample counts per class.
pub fn class_histogram(data: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; data.num_classes];
    for &y in &data.labels {
        counts[y] += 1;
    }
    counts
}

/// Unit-covariance Gaussian clusters, `per_class` samples each, ordered by
/// class. Means sit at pairwise distance at least `separation` before a
/// seed-dependent rotation.
pub fn gen_blobs(
    num_classes: usize,
    dim: usize,
    per_class: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || dim < 2 || per_class == 0 {
        return Err(Error::input(
            "blobs need at least 2 classes, 2 dimensions and 1 sample per class",
        ));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::input("blob separation must be positive"));
    }
    let mut rng = rng::rng_from(rng::derive(seed, &[stream::DATA]));
    let means = rotate(&blob_means(num_classes, dim, separation), dim, &mut rng);

    let mut features = Vec::with_capacity(num_classes * per_class * dim);
    let mut labels = Vec::with_capacity(num_classes * per_class);
    for (j, mean) in means.iter().enumerate() {
        for _ in 0..per_class {
            let noise = gaussian_values(&mut rng, dim, 1.0);
            features.extend(mean.iter().zip(noise).map(|(m, e)| m + e));
            labels.push(j);
        }
    }
    Dataset::new(Matrix::new(labels.len(), dim, features)?, labels, num_classes)
}

/// Simplex vertices `e_j * sep / sqrt(2)` when they fit, otherwise an integer
/// lattice with spacing `sep`. Centered at the origin.
fn blob_means(m: usize, d: usize, sep: f64) -> Vec<Vec<f64>> {
    let mut means: Vec<Vec<f64>> = if m <= d {
        (0..m)
            .map(|j| {
                let mut v = vec![0.0; d];
                v[j] = sep / std::f64::consts::SQRT_2;
                v
            })
            .collect()
    } else {
        let mut side = 2usize;
        while side.pow(d as u32) < m {
            side += 1;
        }
        (0..m)
            .map(|j| {
                let mut rest = j;
                (0..d)
                    .map(|_| {
                        let digit = rest % side;
                        rest /= side;
                        digit as f64 * sep
                    })
                    .collect()
            })
            .collect()
    };
    let centroid: Vec<f64> = (0..d)
        .map(|k| means.iter().map(|v| v[k]).sum::<f64>() / m as f64)
        .collect();
    for v in &mut means {
        for (x, c) in v.iter_mut().zip(&centroid) {
            *x -= c;
        }
    }
    means
}

/// Applies a random orthogonal matrix (Gram-Schmidt on a Gaussian draw).
fn rotate(points: &[Vec<f64>], d: usize, rng: &mut rng::Rng) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(d);
    while basis.len() < d {
        let mut v = gaussian_values(rng, d, 1.0);
        for b in &basis {
            let dot: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            for (x, y) in v.iter_mut().zip(b) {
                *x -= dot * y;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            basis.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    points
        .iter()
        .map(|p| {
            basis
                .iter()
                .map(|row| row.iter().zip(p).map(|(a, b)| a * b).sum())
                .collect()
        })
        .collect()
}

/// How samples of each class are spread over participants.
#[derive(Clone, Debug, PartialEq)]
pub enum PartitionSpec {
    /// Every class split evenly.
    Equal,
    /// Participant 0 receives `major_prob` of each class in `major_classes`;
    /// the other participants share the remainder evenly. Other classes are
    /// split evenly.
    Imbalanced {
        major_classes: Vec<usize>,
        major_prob: f64,
    },
    /// `probs[i][j]`: fraction of class `j` given to participant `i`.
    ClassProbabilityMatrix { probs: Vec<Vec<f64>> },
    /// `exclusive_class` goes entirely to `owner`; other classes split evenly.
    LabelSkewExclusive { exclusive_class: usize, owner: usize },
}

impl PartitionSpec {
    /// The `n x M` allocation table implied by this spec.
    pub fn fractions(&self, n: usize, num_classes: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::config("need at least one participant"));
        }
        let even = 1.0 / n as f64;
        let mut table = vec![vec![even; num_classes]; n];
        match self {
            PartitionSpec::Equal => {}
            PartitionSpec::Imbalanced {
                major_classes,
                major_prob,
            } => {
                if n < 2 {
                    return Err(Error::config(
                        "imbalanced partitioning needs at least 2 participants",
                    ));
                }
                if !(*major_prob > 0.0 && *major_prob < 1.0) {
                    return Err(Error::config(format!(
                        "major_prob must lie in (0, 1), got {major_prob}"
                    )));
                }
                let minor = (1.0 - major_prob) / (n - 1) as f64;
                for &j in major_classes {
                    if j >= num_classes {
                        return Err(Error::config(format!(
                            "major class {j} out of range for {num_classes} classes"
                        )));
                    }
                    for (i, row) in table.iter_mut().enumerate() {
                        row[j] = if i == 0 { *major_prob } else { minor };
                    }
                }
            }
            PartitionSpec::ClassProbabilityMatrix { probs } => {
                if probs.len() != n || probs.iter().any(|r| r.len() != num_classes) {
                    return Err(Error::config(format!(
                        "class probability matrix must be {n}x{num_classes}"
                    )));
                }
                for j in 0..num_classes {
                    if probs.iter().any(|r| !(r[j] >= 0.0 && r[j].is_finite())) {
                        return Err(Error::config(format!(
                            "class {j} has a negative or non-finite fraction"
                        )));
                    }
                    let total: f64 = probs.iter().map(|r| r[j]).sum();
                    if (total - 1.0).abs() > 1e-9 {
                        return Err(Error::config(format!(
                            "fractions for class {j} sum to {total}, expected 1"
                        )));
                    }
                }
                table = probs.clone();
            }
            PartitionSpec::LabelSkewExclusive {
                exclusive_class,
                owner,
            } => {
                if *exclusive_class >= num_classes || *owner >= n {
                    return Err(Error::config(format!(
                        "exclusive class {exclusive_class} / owner {owner} out of range"
                    )));
                }
                for (i, row) in table.iter_mut().enumerate() {
                    row[*exclusive_class] = if i == *owner { 1.0 } else { 0.0 };
                }
            }
        }
        Ok(table)
    }
}

/// Largest-remainder apportionment of `total` items by `fractions`.
/// Ties in the remainder go to the lower index.
pub fn apportion(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        counts[i] += 1;
    }
    // Fractions summing slightly above 1 can over-assign by rounding.
    let mut excess = assigned.saturating_sub(total);
    for &i in order.iter().rev() {
        if excess == 0 {
            break;
        }
        if counts[i] > 0 {
            counts[i] -= 1;
            excess -= 1;
        }
    }
    counts
}

/// Splits `data` into `n` disjoint shards following `spec`. Each shard's
/// sample order is shuffled.
pub fn partition(data: &Dataset, spec: &PartitionSpec, n: usize, seed: u64) -> Result<Vec<Dataset>> {
    let table = spec.fractions(n, data.num_classes)?;
    let mut shard_idx: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (j, mut members) in data.indices_by_class().into_iter().enumerate() {
        let mut rng = rng::rng_from(rng::derive(seed, &[stream::PARTITION, 0, j as u64]));
        members.shuffle(&mut rng);
        let column: Vec<f64> = table.iter().map(|r| r[j]).collect();
        let counts = apportion(members.len(), &column);
        let mut start = 0;
        for (i, c) in counts.into_iter().enumerate() {
            shard_idx[i].extend_from_slice(&members[start..start + c]);
            start += c;
        }
    }
    Ok(shard_idx
        .into_iter()
        .enumerate()
        .map(|(i, mut idx)| {
            let mut rng = rng::rng_from(rng::derive(seed, &[stream::PARTITION, 1, i as u64]));
            idx.shuffle(&mut rng);
            data.subset(&idx)
        })
        .collect())
}

/// Stratified hold-out: roughly `fraction` of every class goes to the second
/// set, keeping at least one sample on each side when a class has two or
/// more.
pub fn stratified_split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config(format!(
            "validation fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut held = Vec::new();
    for (j, mut members) in data.indices_by_class().into_iter().enumerate() {
        let mut rng = rng::rng_from(rng::derive(seed, &[stream::SPLIT, j as u64]));
        members.shuffle(&mut rng);
        let k = members.len();
        let take = if k >= 2 {
            ((fraction * k as f64).round() as usize).clamp(1, k - 1)
        } else {
            0
        };
        held.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    held.sort_unstable();
    Ok((data.subset(&train), data.subset(&held)))
}

/// Reads a CSV with a header row. Every column except `label_column` is a
/// feature. The class count is the largest label plus one.
pub fn load_csv(path: impl AsRef<Path>, label_column: &str) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, label_column)
}

pub fn read_csv(reader: impl std::io::Read, label_column: &str) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::input(format!("cannot read CSV header: {e}")))?
        .clone();
    let label_pos = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::input(format!("CSV has no column named '{label_column}'")))?;
    let dim = headers.len() - 1;
    if dim == 0 {
        return Err(Error::input("CSV has no feature columns"));
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        // Row numbers count the header as row 1.
        let row = i + 2;
        let record = record.map_err(|e| Error::input(format!("row {row}: {e}")))?;
        if record.len() != headers.len() {
            return Err(Error::input(format!(
                "row {row}: expected {} fields, found {}",
                headers.len(),
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            if c == label_pos {
                let y: usize = cell.parse().map_err(|_| {
                    Error::input(format!("row {row}: label '{cell}' is not a non-negative integer"))
                })?;
                labels.push(y);
            } else {
                let v: f64 = cell.parse().map_err(|_| {
                    Error::input(format!(
                        "row {row}: column '{}' value '{cell}' is not numeric",
                        &headers[c]
                    ))
                })?;
                if !v.is_finite() {
                    return Err(Error::input(format!("row {row}: non-finite feature '{cell}'")));
                }
                features.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::input("CSV contains no data rows"));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    Dataset::new(Matrix::new(labels.len(), dim, features)?, labels, num_classes)
}

/// Writes features as `x0..x{d-1}` followed by `label_column`, using 17
/// significant digits.
pub fn write_csv(data: &Dataset, path: impl AsRef<Path>, label_column: &str) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    let mut header: Vec<String> = (0..data.dim()).map(|k| format!("x{k}")).collect();
    header.push(label_column.to_string());
    out.push_str(&header.join(","));
    out.push('\n');
    for (i, y) in data.labels.iter().enumerate() {
        for v in data.features.row(i) {
            out.push_str(&crate::report::fmt_f64(*v));
            out.push(',');
        }
        out.push_str(&y.to_string());
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, loss_and_grad, sgd_step, Batch, ModelSpec};
    use proptest::prelude::*;

    fn balanced(m: usize, per_class: usize) -> Dataset {
        gen_blobs(m, 3, per_class, 4.0, 11).unwrap()
    }

    #[test]
    fn blob_counts_and_determinism() {
        let a = gen_blobs(2, 2, 50, 6.0, 1).unwrap();
        assert_eq!(a.len(), 100);
        assert_eq!(class_histogram(&a), vec![50, 50]);
        assert_eq!(a, gen_blobs(2, 2, 50, 6.0, 1).unwrap());
        assert_ne!(a, gen_blobs(2, 2, 50, 6.0, 2).unwrap());
    }

    #[test]
    fn blob_means_are_separated() {
        for (m, d) in [(3, 5), (4, 4), (5, 2), (9, 2)] {
            let means = blob_means(m, d, 3.0);
            for a in 0..m {
                for b in a + 1..m {
                    let dist: f64 = means[a]
                        .iter()
                        .zip(&means[b])
                        .map(|(x, y)| (x - y) * (x - y))
                        .sum::<f64>()
                        .sqrt();
                    assert!(dist >= 3.0 - 1e-9, "m={m} d={d} dist={dist}");
                }
            }
        }
    }

    #[test]
    fn separated_blobs_are_learnable() {
        let data = gen_blobs(2, 2, 100, 10.0, 3).unwrap();
        let spec = ModelSpec::logistic(2, 2).unwrap();
        let mut w = init_params(spec, 0);
        let batch = Batch::new(data.features().clone(), data.labels().to_vec()).unwrap();
        for _ in 0..200 {
            let (_, g) = loss_and_grad(&w, &spec, &batch).unwrap();
            w = sgd_step(&w, &g, 0.1).unwrap();
        }
        let report = crate::metrics::evaluate(&w, &spec, &data).unwrap();
        let plain = report
            .per_class_acc
            .iter()
            .zip(&report.class_counts)
            .map(|(a, &c)| a * c as f64)
            .sum::<f64>()
            / data.len() as f64;
        assert!(plain > 0.95, "training accuracy {plain}");
    }

    #[test]
    fn equal_split_is_exact() {
        let data = balanced(4, 100);
        let shards = partition(&data, &PartitionSpec::Equal, 4, 0).unwrap();
        for s in &shards {
            assert_eq!(class_histogram(s), vec![25; 4]);
        }
    }

    #[test]
    fn imbalanced_major_holder() {
        let data = balanced(3, 101);
        let spec = PartitionSpec::Imbalanced {
            major_classes: vec![0],
            major_prob: 0.7,
        };
        let shards = partition(&data, &spec, 2, 5).unwrap();
        let c0 = class_histogram(&shards[0])[0] as f64;
        assert!((c0 - 0.7 * 101.0).abs() <= 1.0);
        // Minor classes stay even.
        assert!((class_histogram(&shards[0])[1] as f64 - 50.5).abs() <= 1.0);
    }

    #[test]
    fn class_probability_matrix_zero_share() {
        let data = balanced(2, 200);
        let probs = vec![
            vec![0.4, 0.0],
            vec![0.3, 0.1],
            vec![0.2, 0.2],
            vec![0.1, 0.3],
            vec![0.0, 0.4],
        ];
        let shards = partition(&data, &PartitionSpec::ClassProbabilityMatrix { probs }, 5, 9).unwrap();
        assert_eq!(class_histogram(&shards[4])[0], 0);
        assert_eq!(class_histogram(&shards[0])[1], 0);
        assert_eq!(class_histogram(&shards[0])[0], 80);
    }

    #[test]
    fn label_skew_exclusive_owner() {
        let data = balanced(3, 30);
        let spec = PartitionSpec::LabelSkewExclusive {
            exclusive_class: 0,
            owner: 0,
        };
        let shards = partition(&data, &spec, 3, 1).unwrap();
        assert_eq!(class_histogram(&shards[0])[0], 30);
        assert_eq!(class_histogram(&shards[1])[0], 0);
        assert_eq!(class_histogram(&shards[2])[0], 0);
    }

    #[test]
    fn partition_spec_errors() {
        let data = balanced(2, 10);
        let bad_sum = PartitionSpec::ClassProbabilityMatrix {
            probs: vec![vec![0.5, 0.5], vec![0.4, 0.5]],
        };
        assert!(matches!(
            partition(&data, &bad_sum, 2, 0),
            Err(Error::Config { .. })
        ));
        let bad_shape = PartitionSpec::ClassProbabilityMatrix {
            probs: vec![vec![1.0, 1.0]],
        };
        assert!(partition(&data, &bad_shape, 2, 0).is_err());
        let bad_prob = PartitionSpec::Imbalanced {
            major_classes: vec![0],
            major_prob: 1.0,
        };
        assert!(partition(&data, &bad_prob, 2, 0).is_err());
        let bad_owner = PartitionSpec::LabelSkewExclusive {
            exclusive_class: 0,
            owner: 5,
        };
        assert!(partition(&data, &bad_owner, 2, 0).is_err());
    }

    #[test]
    fn histogram_examples() {
        assert_eq!(class_histogram(&balanced(4, 100)), vec![100; 4]);
        let d = balanced(3, 4);
        let only_zero: Vec<usize> = (0..d.len()).filter(|&i| d.labels()[i] == 0).collect();
        assert_eq!(class_histogram(&d.subset(&only_zero)), vec![4, 0, 0]);
    }

    #[test]
    fn stratified_split_covers_every_class() {
        let data = balanced(3, 20);
        let (train, val) = stratified_split(&data, 0.25, 4).unwrap();
        assert_eq!(class_histogram(&val), vec![5, 5, 5]);
        assert_eq!(class_histogram(&train), vec![15, 15, 15]);
        assert!(stratified_split(&data, 1.0, 4).is_err());
    }

    #[test]
    fn csv_parsing() {
        let text = "a,b,label\n1.5,2,0\n-3,4e-1,1\n0,0,0\n";
        let d = read_csv(text.as_bytes(), "label").unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.num_classes(), 2);
        assert_eq!(d.features().row(1), &[-3.0, 0.4]);

        let bad = "a,label\n1,0\nfoo,1\n";
        let err = read_csv(bad.as_bytes(), "label").unwrap_err().to_string();
        assert!(err.contains("row 3"), "{err}");
        assert!(read_csv(text.as_bytes(), "missing").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let data = gen_blobs(3, 4, 7, 2.5, 8).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_csv(&data, &path, "y").unwrap();
        let back = load_csv(&path, "y").unwrap();
        assert_eq!(back.labels(), data.labels());
        for (a, b) in back.features().as_slice().iter().zip(data.features().as_slice()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(10, &[0.55, 0.45]), vec![6, 4]);
        assert_eq!(apportion(3, &[0.5, 0.5]), vec![2, 1]);
        assert_eq!(apportion(7, &[0.4, 0.3, 0.2, 0.1, 0.0]), vec![3, 2, 1, 1, 0]);
    }

    fn specs(n: usize, m: usize) -> impl Strategy<Value = PartitionSpec> {
        prop_oneof![
            Just(PartitionSpec::Equal),
            (0..m, 0.05f64..0.95).prop_map(|(j, p)| PartitionSpec::Imbalanced {
                major_classes: vec![j],
                major_prob: p
            }),
            (0..m, 0..n).prop_map(|(c, o)| PartitionSpec::LabelSkewExclusive {
                exclusive_class: c,
                owner: o
            }),
            prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), m).prop_map(move |cols| {
                // Normalise each class column; fall back to even if all zero.
                let mut probs = vec![vec![0.0; m]; n];
                for (j, col) in cols.iter().enumerate() {
                    let s: f64 = col.iter().sum();
                    for i in 0..n {
                        probs[i][j] = if s > 0.0 { col[i] / s } else { 1.0 / n as f64 };
                    }
                }
                PartitionSpec::ClassProbabilityMatrix { probs }
            }),
        ]
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn partition_conserves_and_respects_fractions(
            (n, m, spec) in (2usize..6, 2usize..5).prop_flat_map(|(n, m)| (Just(n), Just(m), specs(n, m))),
            per_class in 1usize..40,
            seed in any::<u64>(),
        ) {
            let data = gen_blobs(m, 2, per_class, 3.0, seed).unwrap();
            let shards = partition(&data, &spec, n, seed).unwrap();
            prop_assert_eq!(shards.len(), n);
            // Deterministic.
            prop_assert_eq!(&shards, &partition(&data, &spec, n, seed).unwrap());
            // Multiset union equals the input.
            let mut all: Vec<(Vec<u64>, usize)> = shards
                .iter()
                .flat_map(|s| (0..s.len()).map(move |i| {
                    (s.features().row(i).iter().map(|v| v.to_bits()).collect(), s.labels()[i])
                }))
                .collect();
            let mut orig: Vec<(Vec<u64>, usize)> = (0..data.len())
                .map(|i| (data.features().row(i).iter().map(|v| v.to_bits()).collect(), data.labels()[i]))
                .collect();
            all.sort();
            orig.sort();
            prop_assert_eq!(all, orig);
            // Fraction fidelity.
            let table = spec.fractions(n, m).unwrap();
            let totals = class_histogram(&data);
            for (i, s) in shards.iter().enumerate() {
                let h = class_histogram(s);
                for j in 0..m {
                    prop_assert!((h[j] as f64 - table[i][j] * totals[j] as f64).abs() <= 1.0);
                }
            }
        }
    }
}
