//! Nonparametric classification by Hamming distance to ideal response
//! patterns.

use rand::Rng;
use serde::Serialize;

use crate::error::{domain, Error, Result};
use crate::matrix::BinaryMatrix;
use crate::models::ModelKind;
use crate::profile::ProfileSpace;
use crate::qmatrix::QMatrix;
use crate::rng::{self, role};

/// How mastery of the required attributes maps to an ideal response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Rule {
    /// All required attributes.
    Conjunctive,
    /// Any required attribute.
    Disjunctive,
}

impl Rule {
    /// The rule used when classifying data from `model`. LCDM has no
    /// nonparametric counterpart.
    pub fn for_model(model: ModelKind) -> Result<Self> {
        match model {
            ModelKind::Dina | ModelKind::Rrum => Ok(Self::Conjunctive),
            ModelKind::Dino | ModelKind::Crum => Ok(Self::Disjunctive),
            ModelKind::Lcdm => Err(domain("nonparametric classification is not defined for LCDM")),
        }
    }

    #[inline]
    fn ideal(self, alpha: u32, mask: u32) -> u8 {
        match self {
            Self::Conjunctive => u8::from(alpha & mask == mask),
            Self::Disjunctive => u8::from(alpha & mask != 0),
        }
    }
}

/// L x J matrix of ideal responses, one row per profile index.
pub fn ideal_matrix(q: &QMatrix, rule: Rule) -> BinaryMatrix {
    let l = 1usize << q.n_attributes();
    let mut out = BinaryMatrix::zeros(l, q.n_items());
    for a in 0..l {
        for (j, &mask) in q.masks().iter().enumerate() {
            out.set(a, j, rule.ideal(a as u32, mask));
        }
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct NpSettings {
    /// Per-item weights for the distance; unweighted when `None`.
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct NpFit {
    pub rule: Rule,
    /// Chosen profile index per respondent.
    pub indices: Vec<usize>,
    /// Number of profiles tied at the minimum distance per respondent.
    pub tie_counts: Vec<usize>,
    pub distances: Vec<f64>,
    pub n_attributes: usize,
}

impl NpFit {
    /// Classified profiles (N x K).
    pub fn profiles(&self) -> BinaryMatrix {
        let space = ProfileSpace::new(self.n_attributes).expect("validated by Q");
        let mut out = BinaryMatrix::zeros(self.indices.len(), self.n_attributes);
        for (i, &a) in self.indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(space.decode(a).bits());
        }
        out
    }

    pub fn n_tied(&self) -> usize {
        self.tie_counts.iter().filter(|&&c| c > 1).count()
    }
}

/// Assign each respondent the profile whose ideal pattern is closest.
/// Ties are broken uniformly at random from a per-respondent stream.
pub fn classify_np(data: &BinaryMatrix, q: &QMatrix, rule: Rule, settings: &NpSettings, seed: u64) -> Result<NpFit> {
    let j_count = q.n_items();
    if data.cols() != j_count {
        return Err(domain(format!("responses have {} items, Q has {j_count}", data.cols())));
    }
    if let Some(w) = &settings.weights {
        if w.len() != j_count {
            return Err(Error::Dimension { expected: j_count, got: w.len() });
        }
        if w.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(domain("item weights must be finite and non-negative"));
        }
    }
    let ideal = ideal_matrix(q, rule);
    let l = ideal.rows();
    let mut indices = Vec::with_capacity(data.rows());
    let mut tie_counts = Vec::with_capacity(data.rows());
    let mut distances = Vec::with_capacity(data.rows());
    let mut ties = Vec::with_capacity(l);
    for i in 0..data.rows() {
        let x = data.row(i);
        let mut best = f64::INFINITY;
        ties.clear();
        for a in 0..l {
            let d: f64 = match &settings.weights {
                None => x.iter().zip(ideal.row(a)).filter(|(u, v)| u != v).count() as f64,
                Some(w) => x.iter().zip(ideal.row(a)).zip(w).filter(|((u, v), _)| u != v).map(|(_, w)| w).sum(),
            };
            if d < best {
                best = d;
                ties.clear();
            }
            if d == best {
                ties.push(a);
            }
        }
        let pick = if ties.len() == 1 {
            ties[0]
        } else {
            let mut r = rng::stream(seed, &[role::NP, i as u64]);
            ties[r.random_range(0..ties.len())]
        };
        indices.push(pick);
        tie_counts.push(ties.len());
        distances.push(best);
    }
    Ok(NpFit { rule, indices, tie_counts, distances, n_attributes: q.n_attributes() })
}
