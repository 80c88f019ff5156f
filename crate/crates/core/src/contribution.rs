//! Contribution assessment.
//!
//! The per-class score of participant `i` for class `j` is the cosine between
//! column `j` of the participant's last-layer update and column `j` of the
//! aggregated update. Scores are mapped to importance weights by
//! `gamma_i = mean_j (1 + score_ij) / 2` and normalised onto the simplex.
//! The exact Shapley oracle enumerates all coalitions and serves as ground
//! truth at small `n`.

use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::evaluate;
use crate::model::{weighted_sum, LastLayerMatrix, ModelSpec, ParamVector};

/// Norms at or below this are treated as zero vectors.
pub const NORM_EPS: f64 = 1e-12;

/// Largest participant count accepted by [`exact_shapley`].
pub const EXACT_SHAPLEY_MAX_PARTICIPANTS: usize = 16;

/// Cosine similarity clamped to `[-1, 1]`; 0 when either vector is (near)
/// zero.
pub fn cosine(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::shape(format!(
            "cosine of vectors with lengths {} and {}",
            u.len(),
            v.len()
        )));
    }
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    let (nu, nv) = (uu.sqrt(), vv.sqrt());
    if nu <= NORM_EPS || nv <= NORM_EPS {
        return Ok(0.0);
    }
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

/// `n x M` matrix of per-class contributions, entries in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContributionMatrix {
    participants: usize,
    classes: usize,
    data: Vec<f64>,
}

impl ContributionMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let classes = rows.first().map_or(0, Vec::len);
        if rows.is_empty() || classes == 0 {
            return Err(Error::shape("contribution matrix must be non-empty"));
        }
        let mut data = Vec::with_capacity(rows.len() * classes);
        for r in rows {
            if r.len() != classes {
                return Err(Error::shape("contribution rows differ in length"));
            }
            if r.iter().any(|v| !(-1.0..=1.0).contains(v)) {
                return Err(Error::input("contribution entries must lie in [-1, 1]"));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            participants: rows.len(),
            classes,
            data,
        })
    }

    pub fn participants(&self) -> usize {
        self.participants
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.classes + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.classes).map(<[f64]>::to_vec).collect()
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.participants == other.participants && self.classes == other.classes
    }
}

/// Per-class cosine between every participant's last-layer update and the
/// aggregate.
pub fn cssv(updates: &[LastLayerMatrix], aggregate: &LastLayerMatrix) -> Result<ContributionMatrix> {
    if updates.is_empty() {
        return Err(Error::shape("no participant updates"));
    }
    let m = aggregate.num_classes();
    let mut rows = Vec::with_capacity(updates.len());
    for (i, u) in updates.iter().enumerate() {
        if u.num_classes() != m || u.feature_dim() != aggregate.feature_dim() {
            return Err(Error::shape(format!(
                "participant {i} head is {}x{}, aggregate is {}x{m}",
                u.feature_dim(),
                u.num_classes(),
                aggregate.feature_dim()
            )));
        }
        let row = (0..m)
            .map(|j| cosine(u.column(j), aggregate.column(j)))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    ContributionMatrix::from_rows(&rows)
}

/// Raw scores in `[0, 1]` and their normalisation onto the simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ImportanceWeights {
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl ImportanceWeights {
    /// Every participant at `1/n`, raw and normalised.
    pub fn uniform(n: usize) -> Self {
        let w = vec![1.0 / n as f64; n];
        Self {
            raw: w.clone(),
            normalized: w,
        }
    }

    pub fn len(&self) -> usize {
        self.raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.raw.is_empty()
    }
}

/// `gamma_i = mean_j (1 + G_ij) / 2`, normalised to sum to one. Falls back to
/// uniform when the raw scores sum to (nearly) zero.
pub fn importance(gamma: &ContributionMatrix) -> ImportanceWeights {
    let m = gamma.classes() as f64;
    let raw: Vec<f64> = (0..gamma.participants())
        .map(|i| {
            let s: f64 = gamma.row(i).iter().map(|g| (1.0 + g) / 2.0).sum();
            (s / m).clamp(0.0, 1.0)
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let normalized = if total <= NORM_EPS {
        vec![1.0 / raw.len() as f64; raw.len()]
    } else {
        raw.iter().map(|g| g / total).collect()
    };
    ImportanceWeights { raw, normalized }
}

/// Momentum-smoothed contribution matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct EmaState {
    smoothed: Option<ContributionMatrix>,
    mu: f64,
    round_count: usize,
}

impl EmaState {
    pub fn new(mu: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&mu) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {mu}")));
        }
        Ok(Self {
            smoothed: None,
            mu,
            round_count: 0,
        })
    }

    pub fn smoothed(&self) -> Option<&ContributionMatrix> {
        self.smoothed.as_ref()
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn round_count(&self) -> usize {
        self.round_count
    }

    /// First update stores `fresh` verbatim; later ones blend
    /// `mu * old + (1 - mu) * fresh`.
    pub fn update(&self, fresh: &ContributionMatrix) -> Result<EmaState> {
        let smoothed = match &self.smoothed {
            None => fresh.clone(),
            Some(old) => {
                if !old.same_shape(fresh) {
                    return Err(Error::State(format!(
                        "contribution matrix changed shape from {}x{} to {}x{}",
                        old.participants, old.classes, fresh.participants, fresh.classes
                    )));
                }
                let data = old
                    .data
                    .iter()
                    .zip(&fresh.data)
                    .map(|(o, f)| (self.mu * o + (1.0 - self.mu) * f).clamp(-1.0, 1.0))
                    .collect();
                ContributionMatrix { data, ..*old }
            }
        };
        Ok(EmaState {
            smoothed: Some(smoothed),
            mu: self.mu,
            round_count: self.round_count + 1,
        })
    }
}

/// Full-vector cosine of each participant's update against the aggregate.
pub fn cgsv(updates: &[ParamVector], aggregate: &ParamVector) -> Result<Vec<f64>> {
    updates
        .iter()
        .map(|u| {
            u.check_same_layout(aggregate)?;
            cosine(u.values(), aggregate.values())
        })
        .collect()
}

/// A set of participants encoded as a bitmask (bit `i` = participant `i`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Coalition(pub u32);

impl Coalition {
    pub fn contains(self, i: usize) -> bool {
        self.0 >> i & 1 == 1
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn members(self) -> impl Iterator<Item = usize> {
        (0..32).filter(move |&i| self.contains(i))
    }

    pub fn with(self, i: usize) -> Coalition {
        Coalition(self.0 | 1 << i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShapleyResult {
    /// `phi[i][j]`: value of participant `i` for utility component `j`.
    pub phi: Vec<Vec<f64>>,
    pub utility_calls: usize,
}

/// Exact Shapley values of a vector-valued utility.
///
/// Every non-empty coalition is evaluated exactly once (possibly in
/// parallel); the empty coalition is worth zero. The weighted sum runs over
/// coalitions in ascending bitmask order, so the result does not depend on
/// how evaluations were scheduled.
pub fn exact_shapley<F>(n: usize, utility: F) -> Result<ShapleyResult>
where
    F: Fn(Coalition) -> Result<Vec<f64>> + Sync,
{
    if n == 0 || n > EXACT_SHAPLEY_MAX_PARTICIPANTS {
        return Err(Error::config(format!(
            "exact Shapley supports 1..={EXACT_SHAPLEY_MAX_PARTICIPANTS} participants, got {n}"
        )));
    }
    let full = 1u32 << n;
    let calls = AtomicUsize::new(0);
    let evaluated: Vec<Vec<f64>> = (1..full)
        .into_par_iter()
        .map(|mask| {
            calls.fetch_add(1, Ordering::Relaxed);
            utility(Coalition(mask))
        })
        .collect::<Result<_>>()?;
    let m = evaluated[0].len();
    if evaluated.iter().any(|v| v.len() != m) {
        return Err(Error::shape("utility returned vectors of differing lengths"));
    }
    let value = |mask: u32| -> &[f64] {
        if mask == 0 {
            &[]
        } else {
            &evaluated[mask as usize - 1]
        }
    };

    // |S|! (n - |S| - 1)! / n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();

    let mut phi = vec![vec![0.0; m]; n];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1u32 << i;
        for mask in 0..full {
            if mask & bit != 0 {
                continue;
            }
            let w = weight[mask.count_ones() as usize];
            let with = value(mask | bit);
            let without = value(mask);
            for j in 0..m {
                let base = without.get(j).copied().unwrap_or(0.0);
                phi_i[j] += w * (with[j] - base);
            }
        }
    }
    Ok(ShapleyResult {
        phi,
        utility_calls: calls.into_inner(),
    })
}

/// Per-class validation accuracy of the uniform average of `members`.
/// Classes absent from `valset` score 0.
pub fn utility_classwise_accuracy(
    members: &[&ParamVector],
    spec: &ModelSpec,
    valset: &Dataset,
) -> Result<Vec<f64>> {
    if members.is_empty() {
        return Err(Error::input(
            "utility of the empty coalition is not evaluated here",
        ));
    }
    let w = vec![1.0 / members.len() as f64; members.len()];
    let averaged = weighted_sum(members, &w)?;
    Ok(evaluate(&averaged, spec, valset)?.per_class_acc)
}
