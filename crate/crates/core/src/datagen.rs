//! Synthetic data following the small-sample simulation design: correlated
//! attribute profiles, Q-matrix construction and misspecification, true
//! item parameters matched to drawn slip/guess values, and responses.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::dataset::{Dataset, Truth};
use crate::error::{domain, Error, Result};
use crate::matrix::BinaryMatrix;
use crate::models::{local_group, logit, slip_guess_unchecked, ItemParams, ModelKind, SlipGuess};
use crate::qmatrix::{validate_q, QMatrix};
use crate::rng::{role, stream};

const MAX_RETRIES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Discrimination {
    High,
    Low,
}

impl Discrimination {
    /// Uniform range of the true slip and guess values.
    pub fn range(self) -> (f64, f64) {
        match self {
            Self::High => (0.0, 0.15),
            Self::Low => (0.25, 0.4),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::High => "high",
            Self::Low => "low",
        }
    }

    pub(crate) fn code(self) -> u64 {
        match self {
            Self::High => 1,
            Self::Low => 2,
        }
    }
}

impl fmt::Display for Discrimination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Discrimination {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "high" => Ok(Self::High),
            "low" => Ok(Self::Low),
            _ => Err(Error::Parse(format!("unknown discrimination level {s:?}"))),
        }
    }
}

/// Everything needed to simulate one dataset.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n: usize,
    pub model: ModelKind,
    pub q: QMatrix,
    pub discrimination: Discrimination,
    pub rho: f64,
    pub seed: u64,
}

impl GenConfig {
    pub fn new(n: usize, model: ModelKind, q: QMatrix, discrimination: Discrimination, seed: u64) -> Self {
        Self { n, model, q, discrimination, rho: 0.5, seed }
    }
}

/// Mastery thresholds `Phi^-1(k / (K + 1))` for attributes k = 1..K.
pub fn attribute_thresholds(k: usize) -> Vec<f64> {
    let normal = Normal::standard();
    (1..=k).map(|a| normal.inverse_cdf(a as f64 / (k + 1) as f64)).collect()
}

/// Lower Cholesky factor of the K x K equicorrelation matrix.
fn equicorrelation_cholesky(k: usize, rho: f64) -> Vec<Vec<f64>> {
    let mut l = vec![vec![0.0; k]; k];
    for i in 0..k {
        for j in 0..=i {
            let target = if i == j { 1.0 } else { rho };
            let s: f64 = (0..j).map(|c| l[i][c] * l[j][c]).sum();
            l[i][j] = if i == j { (target - s).sqrt() } else { (target - s) / l[j][j] };
        }
    }
    l
}

/// Latent normal traits with unit variances and common correlation `rho`.
pub fn gen_latent_traits<R: Rng + ?Sized>(n: usize, k: usize, rho: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if k == 0 {
        return Err(domain("need at least one attribute"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(domain(format!("rho={rho} outside [0,1)")));
    }
    let chol = equicorrelation_cholesky(k, rho);
    Ok((0..n)
        .map(|_| {
            let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(rng)).collect();
            (0..k).map(|a| (0..=a).map(|c| chol[a][c] * z[c]).sum()).collect()
        })
        .collect())
}

/// Threshold latent traits into mastery profiles.
pub fn threshold_traits(traits: &[Vec<f64>], k: usize) -> BinaryMatrix {
    let cut = attribute_thresholds(k);
    let mut out = BinaryMatrix::zeros(traits.len(), k);
    for (i, theta) in traits.iter().enumerate() {
        for a in 0..k {
            out.set(i, a, u8::from(theta[a] >= cut[a]));
        }
    }
    out
}

/// N x K mastery profiles from the multivariate normal threshold model.
pub fn gen_attributes<R: Rng + ?Sized>(n: usize, k: usize, rho: f64, rng: &mut R) -> Result<BinaryMatrix> {
    Ok(threshold_traits(&gen_latent_traits(n, k, rho, rng)?, k))
}

fn masks_with_popcount(k: usize, counts: &[u32]) -> Vec<u32> {
    (1u32..1 << k).filter(|m| counts.contains(&m.count_ones())).collect()
}

fn draw_without_replacement<R: Rng + ?Sized>(pool: &[u32], amount: usize, rng: &mut R) -> Vec<u32> {
    sample(rng, pool.len(), amount).into_iter().map(|i| pool[i]).collect()
}

/// One of the four design Q-matrices.
///
/// K=4 starts from all 15 nonzero patterns and K=5 from the 5 single-attribute
/// items; the rest are drawn without replacement from the two- and
/// three-attribute patterns. J=40 doubles the fixed part and uses two
/// independent draw sets. Draws are repeated until the matrix passes
/// [`validate_q`].
pub fn build_q<R: Rng + ?Sized>(k: usize, j: usize, rng: &mut R) -> Result<QMatrix> {
    let mut base: Vec<u32> = match k {
        4 => masks_with_popcount(4, &[1, 2, 3, 4]),
        5 => masks_with_popcount(5, &[1]),
        _ => return Err(domain(format!("unsupported design K={k}, J={j}"))),
    };
    base.sort_by_key(|m| (m.count_ones(), *m));
    let copies = match j {
        20 => 1,
        40 => 2,
        _ => return Err(domain(format!("unsupported design K={k}, J={j}"))),
    };
    let per_set = 20 - base.len();
    let pool = masks_with_popcount(k, &[2, 3]);
    for _ in 0..MAX_RETRIES {
        let mut masks = Vec::with_capacity(j);
        for _ in 0..copies {
            masks.extend_from_slice(&base);
        }
        for _ in 0..copies {
            masks.extend(draw_without_replacement(&pool, per_set, rng));
        }
        let q = QMatrix::from_masks(k, masks)?;
        if validate_q(&q).passes() {
            return Ok(q);
        }
    }
    Err(Error::Generation(format!("no valid Q-matrix for K={k}, J={j} after {MAX_RETRIES} draws")))
}

/// Total number of flipped entries for a misspecification rate: the rounded
/// share of J*K, made even so under- and over-specification balance.
pub fn flip_count(rate: f64, j: usize, k: usize) -> usize {
    let t = (rate * (j * k) as f64).round() as usize;
    t - t % 2
}

pub const MISSPEC_VARIANTS: usize = 10;

/// Ten misspecified variants of `q` (or `q` itself when `rate` is zero).
///
/// Each variant sets T/2 ones to zero and T/2 zeros to one, never inside a
/// single-attribute row, and keeps the validity flags of `q`.
pub fn misspecify_q<R: Rng + ?Sized>(q: &QMatrix, rate: f64, rng: &mut R) -> Result<Vec<QMatrix>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(domain(format!("misspecification rate {rate} outside [0,1)")));
    }
    let total = flip_count(rate, q.n_items(), q.n_attributes());
    if total == 0 {
        return Ok(vec![q.clone()]);
    }
    let half = total / 2;
    let reference = validate_q(q);
    let protected: Vec<bool> = (0..q.n_items()).map(|j| q.required_count(j) == 1).collect();
    let mut ones = Vec::new();
    let mut zeros = Vec::new();
    for j in (0..q.n_items()).filter(|&j| !protected[j]) {
        for a in 0..q.n_attributes() {
            if q.get(j, a) == 1 {
                ones.push((j, a));
            } else {
                zeros.push((j, a));
            }
        }
    }
    if ones.len() < half || zeros.len() < half {
        return Err(Error::Generation(format!(
            "cannot flip {half}+{half} entries: only {} ones and {} zeros outside protected rows",
            ones.len(),
            zeros.len()
        )));
    }

    let mut variants = Vec::with_capacity(MISSPEC_VARIANTS);
    while variants.len() < MISSPEC_VARIANTS {
        let mut accepted = None;
        for _ in 0..MAX_RETRIES {
            let mut masks = q.masks().to_vec();
            for i in sample(rng, ones.len(), half) {
                let (j, a) = ones[i];
                masks[j] &= !(1 << a);
            }
            for i in sample(rng, zeros.len(), half) {
                let (j, a) = zeros[i];
                masks[j] |= 1 << a;
            }
            let Ok(candidate) = QMatrix::from_masks(q.n_attributes(), masks) else { continue };
            if validate_q(&candidate).same_flags(&reference) {
                accepted = Some(candidate);
                break;
            }
        }
        variants.push(accepted.ok_or_else(|| {
            Error::Generation(format!("no valid misspecified Q after {MAX_RETRIES} attempts"))
        })?);
    }
    Ok(variants)
}

fn dirichlet_ones<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// True item parameters whose implied slip and guess equal uniform draws
/// from the discrimination range.
///
/// Effect mass (log-penalty for RRUM, logit gap for CRUM and LCDM) is split
/// across effects with Dirichlet(1) weights, so all LCDM effects are
/// nonnegative.
pub fn gen_item_params<R: Rng + ?Sized>(
    model: ModelKind,
    q: &QMatrix,
    discrimination: Discrimination,
    rng: &mut R,
) -> Result<(Vec<ItemParams>, Vec<SlipGuess>)> {
    let (lo, hi) = discrimination.range();
    let mut params = Vec::with_capacity(q.n_items());
    let mut targets = Vec::with_capacity(q.n_items());
    for j in 0..q.n_items() {
        let slip = rng.random_range(lo..hi);
        let guess = rng.random_range(lo..hi);
        let m = q.required_count(j);
        let p = match model {
            ModelKind::Dina => ItemParams::Dina { slip, guess },
            ModelKind::Dino => ItemParams::Dino { slip, guess },
            ModelKind::Rrum => {
                let log_ratio = (guess / (1.0 - slip)).ln();
                let w = dirichlet_ones(m, rng);
                ItemParams::Rrum { baseline: 1.0 - slip, penalties: w.iter().map(|w| (w * log_ratio).exp()).collect() }
            }
            ModelKind::Crum => {
                let gap = logit(1.0 - slip) - logit(guess);
                let w = dirichlet_ones(m, rng);
                ItemParams::Crum { intercept: logit(guess), mains: w.iter().map(|w| w * gap).collect() }
            }
            ModelKind::Lcdm => {
                let gap = logit(1.0 - slip) - logit(guess);
                let w = dirichlet_ones((1 << m) - 1, rng);
                let mut effects = Vec::with_capacity(1 << m);
                effects.push(logit(guess));
                effects.extend(w.iter().map(|w| w * gap));
                ItemParams::Lcdm { effects }
            }
        };
        params.push(p);
        targets.push(SlipGuess { slip, guess });
    }
    Ok((params, targets))
}

/// Bernoulli responses `x_ij ~ irf(params_j, alpha_i)`.
pub fn simulate_responses<R: Rng + ?Sized>(
    profiles: &BinaryMatrix,
    params: &[ItemParams],
    q: &QMatrix,
    rng: &mut R,
) -> Result<BinaryMatrix> {
    if profiles.cols() != q.n_attributes() {
        return Err(Error::Dimension { expected: q.n_attributes(), got: profiles.cols() });
    }
    if params.len() != q.n_items() {
        return Err(Error::Dimension { expected: q.n_items(), got: params.len() });
    }
    for (j, p) in params.iter().enumerate() {
        p.validate(q.required_count(j))?;
    }
    let mut x = BinaryMatrix::zeros(profiles.rows(), q.n_items());
    for i in 0..profiles.rows() {
        let alpha = crate::profile::bits_to_mask(profiles.row(i));
        for (j, p) in params.iter().enumerate() {
            let prob = p.prob_local(local_group(alpha, q.mask(j)), q.required_count(j));
            let u: f64 = rng.random();
            x.set(i, j, u8::from(u < prob));
        }
    }
    Ok(x)
}

/// Simulate a full dataset, one derived stream per generation stage.
pub fn generate(config: &GenConfig) -> Result<Dataset> {
    if config.n == 0 {
        return Err(domain("need at least one respondent"));
    }
    let k = config.q.n_attributes();
    let profiles = gen_attributes(config.n, k, config.rho, &mut stream(config.seed, &[role::ATTRIBUTES]))?;
    let (item_params, slip_guess) = gen_item_params(
        config.model,
        &config.q,
        config.discrimination,
        &mut stream(config.seed, &[role::ITEMS]),
    )?;
    let responses =
        simulate_responses(&profiles, &item_params, &config.q, &mut stream(config.seed, &[role::RESPONSES]))?;
    debug_assert!(item_params
        .iter()
        .zip(&slip_guess)
        .all(|(p, sg)| (slip_guess_unchecked(p).slip - sg.slip).abs() < 1e-9));
    Ok(Dataset {
        responses,
        truth: Some(Truth { model: config.model, profiles, item_params, slip_guess, seed: config.seed }),
    })
}

/// Items answered identically by every respondent.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PerfectPatterns {
    pub all_correct: Vec<usize>,
    pub all_incorrect: Vec<usize>,
}

impl PerfectPatterns {
    pub fn is_flagged(&self) -> bool {
        !self.all_correct.is_empty() || !self.all_incorrect.is_empty()
    }
}

pub fn detect_perfect_patterns(responses: &BinaryMatrix) -> PerfectPatterns {
    let mut out = PerfectPatterns::default();
    if responses.rows() == 0 {
        return out;
    }
    for j in 0..responses.cols() {
        let correct = (0..responses.rows()).filter(|&i| responses.get(i, j) == 1).count();
        if correct == responses.rows() {
            out.all_correct.push(j);
        } else if correct == 0 {
            out.all_incorrect.push(j);
        }
    }
    out
}
