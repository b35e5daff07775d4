//! Item response functions for DINA, DINO, RRUM, CRUM and LCDM.
//!
//! Item parameters are stored relative to the item's required attributes.
//! A profile enters an item only through its *local group*: the mastery
//! bits of the required attributes, compressed in ascending attribute order.
//! LCDM effects are indexed by subset bitmask over the same local bits, so
//! `effects[0]` is the intercept and `effects[(1 << m) - 1]` the top-order
//! interaction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{domain, Error, Result};
use crate::profile::{bits_to_mask, AttributeProfile};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dina,
    Dino,
    Rrum,
    Crum,
    Lcdm,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [Self::Dina, Self::Dino, Self::Rrum, Self::Crum, Self::Lcdm];

    pub fn name(self) -> &'static str {
        match self {
            Self::Dina => "dina",
            Self::Dino => "dino",
            Self::Rrum => "rrum",
            Self::Crum => "crum",
            Self::Lcdm => "lcdm",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Dina => "DINA",
            Self::Dino => "DINO",
            Self::Rrum => "RRUM",
            Self::Crum => "CRUM",
            Self::Lcdm => "LCDM",
        }
    }

    pub(crate) fn code(self) -> u64 {
        self as u64 + 1
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Parse(format!("unknown model {s:?}")))
    }
}

#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Compress the bits of `alpha` selected by `q` into a dense local index.
#[inline]
pub fn local_group(alpha: u32, q: u32) -> usize {
    let mut out = 0usize;
    let mut bit = 0;
    let mut rest = q;
    while rest != 0 {
        let low = rest & rest.wrapping_neg();
        if alpha & low != 0 {
            out |= 1 << bit;
        }
        bit += 1;
        rest &= rest - 1;
    }
    out
}

/// Probability of a correct response and its complement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipGuess {
    pub slip: f64,
    pub guess: f64,
}

/// Per-item parameters of one of the five models.
#[derive(Debug, Clone, PartialEq)]
pub enum ItemParams {
    Dina { slip: f64, guess: f64 },
    Dino { slip: f64, guess: f64 },
    /// `penalties[t]` belongs to the t-th required attribute.
    Rrum { baseline: f64, penalties: Vec<f64> },
    /// `mains[t]` belongs to the t-th required attribute.
    Crum { intercept: f64, mains: Vec<f64> },
    /// `effects[S]` for every subset bitmask `S` of the required attributes.
    Lcdm { effects: Vec<f64> },
}

impl ItemParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            Self::Dina { .. } => ModelKind::Dina,
            Self::Dino { .. } => ModelKind::Dino,
            Self::Rrum { .. } => ModelKind::Rrum,
            Self::Crum { .. } => ModelKind::Crum,
            Self::Lcdm { .. } => ModelKind::Lcdm,
        }
    }

    /// Check value ranges and that the parameter layout fits `m` required attributes.
    pub fn validate(&self, m: usize) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(domain(format!("{name}={v} outside [0,1]")))
            }
        };
        let len = |got: usize, expected: usize| {
            if got == expected {
                Ok(())
            } else {
                Err(Error::Dimension { expected, got })
            }
        };
        match self {
            Self::Dina { slip, guess } | Self::Dino { slip, guess } => {
                unit("slip", *slip)?;
                unit("guess", *guess)
            }
            Self::Rrum { baseline, penalties } => {
                len(penalties.len(), m)?;
                if !(*baseline > 0.0 && *baseline <= 1.0) {
                    return Err(domain(format!("baseline={baseline} outside (0,1]")));
                }
                match penalties.iter().find(|&&r| !(r > 0.0 && r <= 1.0)) {
                    Some(r) => Err(domain(format!("penalty={r} outside (0,1]"))),
                    None => Ok(()),
                }
            }
            Self::Crum { intercept, mains } => {
                len(mains.len(), m)?;
                if intercept.is_finite() && mains.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(domain("non-finite CRUM coefficient"))
                }
            }
            Self::Lcdm { effects } => {
                len(effects.len(), 1 << m)?;
                if effects.iter().all(|v| v.is_finite()) {
                    Ok(())
                } else {
                    Err(domain("non-finite LCDM coefficient"))
                }
            }
        }
    }

    /// Number of required attributes implied by the layout, where it is fixed.
    pub fn required_count(&self) -> Option<usize> {
        match self {
            Self::Dina { .. } | Self::Dino { .. } => None,
            Self::Rrum { penalties, .. } => Some(penalties.len()),
            Self::Crum { mains, .. } => Some(mains.len()),
            Self::Lcdm { effects } => Some(effects.len().trailing_zeros() as usize),
        }
    }

    /// P(x = 1) for local group `g` of an item with `m` required attributes.
    ///
    /// No validation; callers hold validated parameters.
    #[inline]
    pub fn prob_local(&self, g: usize, m: usize) -> f64 {
        let full = (1usize << m) - 1;
        match self {
            Self::Dina { slip, guess } => {
                if g == full {
                    1.0 - slip
                } else {
                    *guess
                }
            }
            Self::Dino { slip, guess } => {
                if g != 0 {
                    1.0 - slip
                } else {
                    *guess
                }
            }
            Self::Rrum { baseline, penalties } => {
                let mut log_p = baseline.ln();
                for (t, r) in penalties.iter().enumerate() {
                    if g >> t & 1 == 0 {
                        log_p += r.ln();
                    }
                }
                log_p.exp()
            }
            Self::Crum { intercept, mains } => {
                let eta = mains
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| g >> t & 1 == 1)
                    .fold(*intercept, |acc, (_, l)| acc + l);
                logistic(eta)
            }
            Self::Lcdm { effects } => logistic(lcdm_predictor(effects, g)),
        }
    }

    /// `(ln p, ln(1 - p))` for local group `g`, computed without rounding
    /// p to 0 or 1 for the logistic models.
    #[inline]
    pub(crate) fn log_prob_local(&self, g: usize, m: usize) -> (f64, f64) {
        let eta = match self {
            Self::Crum { intercept, mains } => mains
                .iter()
                .enumerate()
                .filter(|(t, _)| g >> t & 1 == 1)
                .fold(*intercept, |acc, (_, l)| acc + l),
            Self::Lcdm { effects } => lcdm_predictor(effects, g),
            Self::Rrum { baseline, penalties } => {
                let lp = penalties
                    .iter()
                    .enumerate()
                    .filter(|(t, _)| g >> t & 1 == 0)
                    .fold(baseline.ln(), |acc, (_, r)| acc + r.ln());
                return (lp, (-lp.exp_m1()).ln());
            }
            _ => {
                let p = self.prob_local(g, m);
                return (p.ln(), (-p).ln_1p());
            }
        };
        (-softplus(-eta), -softplus(eta))
    }

    /// Success probabilities of all 2^m local groups.
    pub fn group_probs(&self, m: usize) -> Vec<f64> {
        (0..1usize << m).map(|g| self.prob_local(g, m)).collect()
    }

    /// Flattened parameter values (the scale on which they are stored).
    pub fn values(&self) -> Vec<f64> {
        match self {
            Self::Dina { slip, guess } | Self::Dino { slip, guess } => vec![*slip, *guess],
            Self::Rrum { baseline, penalties } => std::iter::once(*baseline).chain(penalties.iter().copied()).collect(),
            Self::Crum { intercept, mains } => std::iter::once(*intercept).chain(mains.iter().copied()).collect(),
            Self::Lcdm { effects } => effects.clone(),
        }
    }

    /// Rebuild parameters of the same variant from [`ItemParams::values`] output.
    pub fn with_values(&self, v: &[f64]) -> Self {
        match self {
            Self::Dina { .. } => Self::Dina { slip: v[0], guess: v[1] },
            Self::Dino { .. } => Self::Dino { slip: v[0], guess: v[1] },
            Self::Rrum { .. } => Self::Rrum { baseline: v[0], penalties: v[1..].to_vec() },
            Self::Crum { .. } => Self::Crum { intercept: v[0], mains: v[1..].to_vec() },
            Self::Lcdm { .. } => Self::Lcdm { effects: v.to_vec() },
        }
    }

    /// Human-readable names matching [`ItemParams::values`].
    pub fn value_names(&self) -> Vec<String> {
        match self {
            Self::Dina { .. } | Self::Dino { .. } => vec!["slip".into(), "guess".into()],
            Self::Rrum { penalties, .. } => std::iter::once("baseline".to_string())
                .chain((0..penalties.len()).map(|t| format!("penalty{t}")))
                .collect(),
            Self::Crum { mains, .. } => std::iter::once("intercept".to_string())
                .chain((0..mains.len()).map(|t| format!("main{t}")))
                .collect(),
            Self::Lcdm { effects } => (0..effects.len()).map(|s| format!("effect{s}")).collect(),
        }
    }

    pub fn to_record(&self, q_row: &[u8]) -> ItemRecord {
        let payload = match self {
            Self::Dina { slip, guess } | Self::Dino { slip, guess } => json!({ "slip": slip, "guess": guess }),
            Self::Rrum { baseline, penalties } => json!({ "baseline": baseline, "penalties": penalties }),
            Self::Crum { intercept, mains } => json!({ "intercept": intercept, "mains": mains }),
            Self::Lcdm { effects } => {
                let map: Map<String, Value> = effects
                    .iter()
                    .enumerate()
                    .map(|(s, v)| (s.to_string(), json!(v)))
                    .collect();
                Value::Object(map)
            }
        };
        ItemRecord { model: self.kind(), q_row: q_row.to_vec(), payload }
    }
}

/// ln(1 + e^x) without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
fn lcdm_predictor(effects: &[f64], g: usize) -> f64 {
    let mut sum = 0.0;
    let mut s = g;
    loop {
        sum += effects[s];
        if s == 0 {
            break;
        }
        s = (s - 1) & g;
    }
    sum
}

/// Serialized per-item parameters: `{model, q_row, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemRecord {
    pub model: ModelKind,
    pub q_row: Vec<u8>,
    pub payload: Value,
}

impl ItemRecord {
    pub fn to_params(&self) -> Result<ItemParams> {
        let bad = |what: &str| Error::Parse(format!("{} payload: {what}", self.model));
        let num = |key: &str| {
            self.payload
                .get(key)
                .and_then(Value::as_f64)
                .ok_or_else(|| bad(&format!("missing number {key:?}")))
        };
        let nums = |key: &str| -> Result<Vec<f64>> {
            self.payload
                .get(key)
                .and_then(Value::as_array)
                .ok_or_else(|| bad(&format!("missing array {key:?}")))?
                .iter()
                .map(|v| v.as_f64().ok_or_else(|| bad("non-numeric entry")))
                .collect()
        };
        let params = match self.model {
            ModelKind::Dina => ItemParams::Dina { slip: num("slip")?, guess: num("guess")? },
            ModelKind::Dino => ItemParams::Dino { slip: num("slip")?, guess: num("guess")? },
            ModelKind::Rrum => ItemParams::Rrum { baseline: num("baseline")?, penalties: nums("penalties")? },
            ModelKind::Crum => ItemParams::Crum { intercept: num("intercept")?, mains: nums("mains")? },
            ModelKind::Lcdm => {
                let obj = self.payload.as_object().ok_or_else(|| bad("expected object"))?;
                let m = self.q_row.iter().filter(|&&b| b == 1).count();
                let mut effects = vec![f64::NAN; 1 << m];
                for (key, v) in obj {
                    let s: usize = key.parse().map_err(|_| bad(&format!("bad subset key {key:?}")))?;
                    let slot = effects.get_mut(s).ok_or_else(|| bad(&format!("subset {s} out of range")))?;
                    *slot = v.as_f64().ok_or_else(|| bad("non-numeric effect"))?;
                }
                if effects.iter().any(|v| v.is_nan()) {
                    return Err(bad("missing subset effects"));
                }
                ItemParams::Lcdm { effects }
            }
        };
        let m = self.q_row.iter().filter(|&&b| b == 1).count();
        params.validate(m)?;
        Ok(params)
    }
}

fn check_dims(alpha: &[u8], q_row: &[u8]) -> Result<()> {
    if alpha.len() != q_row.len() {
        return Err(Error::Dimension { expected: q_row.len(), got: alpha.len() });
    }
    Ok(())
}

/// Conjunctive ideal response: 1 iff every required attribute is mastered.
pub fn ideal_conjunctive(alpha: &AttributeProfile, q_row: &[u8]) -> Result<u8> {
    check_dims(alpha.bits(), q_row)?;
    let q = bits_to_mask(q_row);
    Ok(u8::from(alpha.mask() & q == q))
}

/// Disjunctive ideal response: 1 iff at least one required attribute is mastered.
pub fn ideal_disjunctive(alpha: &AttributeProfile, q_row: &[u8]) -> Result<u8> {
    check_dims(alpha.bits(), q_row)?;
    Ok(u8::from(alpha.mask() & bits_to_mask(q_row) != 0))
}

/// P(x = 1 | alpha) for one item.
pub fn irf(params: &ItemParams, alpha: &AttributeProfile, q_row: &[u8]) -> Result<f64> {
    check_dims(alpha.bits(), q_row)?;
    let q = bits_to_mask(q_row);
    let m = q.count_ones() as usize;
    params.validate(m)?;
    Ok(params.prob_local(local_group(alpha.mask(), q), m))
}

/// Slip and guess implied by the item parameters, computed from the
/// closed-form expressions of each model.
pub fn slip_guess_of(params: &ItemParams, q_row: &[u8]) -> Result<SlipGuess> {
    let m = q_row.iter().filter(|&&b| b == 1).count();
    params.validate(m)?;
    Ok(slip_guess_unchecked(params))
}

pub(crate) fn slip_guess_unchecked(params: &ItemParams) -> SlipGuess {
    match params {
        ItemParams::Dina { slip, guess } | ItemParams::Dino { slip, guess } => SlipGuess { slip: *slip, guess: *guess },
        ItemParams::Rrum { baseline, penalties } => SlipGuess {
            slip: 1.0 - baseline,
            guess: (baseline.ln() + penalties.iter().map(|r| r.ln()).sum::<f64>()).exp(),
        },
        ItemParams::Crum { intercept, mains } => SlipGuess {
            slip: 1.0 - logistic(intercept + mains.iter().sum::<f64>()),
            guess: logistic(*intercept),
        },
        ItemParams::Lcdm { effects } => SlipGuess {
            slip: 1.0 - logistic(effects.iter().sum()),
            guess: logistic(effects[0]),
        },
    }
}

/// Möbius inversion of group logits into LCDM subset effects.
pub(crate) fn logits_to_effects(logits: &[f64]) -> Vec<f64> {
    let mut effects = logits.to_vec();
    let n = effects.len();
    let mut bit = 1;
    while bit < n {
        for s in 0..n {
            if s & bit != 0 {
                effects[s] -= effects[s ^ bit];
            }
        }
        bit <<= 1;
    }
    effects
}

/// Re-express a DINA, DINO, RRUM or CRUM item as an LCDM with identical
/// response probabilities at every profile.
pub fn embed_as_lcdm(params: &ItemParams, q_row: &[u8]) -> Result<ItemParams> {
    let m = q_row.iter().filter(|&&b| b == 1).count();
    params.validate(m)?;
    match params {
        ItemParams::Lcdm { .. } => Err(domain("item is already an LCDM")),
        ItemParams::Crum { intercept, mains } => {
            let mut effects = vec![0.0; 1 << m];
            effects[0] = *intercept;
            for (t, l) in mains.iter().enumerate() {
                effects[1 << t] = *l;
            }
            Ok(ItemParams::Lcdm { effects })
        }
        _ => {
            let probs = params.group_probs(m);
            if let Some(&p) = probs.iter().find(|&&p| p <= 0.0 || p >= 1.0) {
                return Err(Error::InfiniteLogit { item: 0, value: p });
            }
            let logits: Vec<f64> = probs.iter().map(|&p| logit(p)).collect();
            Ok(ItemParams::Lcdm { effects: logits_to_effects(&logits) })
        }
    }
}
