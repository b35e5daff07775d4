//! Bayesian estimation by Metropolis-within-Gibbs.
//!
//! Profiles are drawn exactly from their categorical full conditional
//! (L is at most a few dozen). Class probabilities and DINA/DINO slip and
//! guess have conjugate updates. RRUM, CRUM and LCDM parameters get
//! one-at-a-time Gaussian random-walk proposals on an unconstrained scale,
//! with scales tuned during burn-in and frozen afterwards.

use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::em::Posterior;
use crate::error::{domain, Error, Result};
use crate::layout::Layout;
use crate::matrix::BinaryMatrix;
use crate::models::{logistic, logit, softplus, slip_guess_unchecked, ItemParams, ModelKind, SlipGuess};
use crate::profile::ProfileSpace;
use crate::qmatrix::QMatrix;
use crate::rng::{self, role};

const TARGET_ACCEPTANCE: f64 = 0.234;

/// How the profile point estimate is read off the profile draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MapKind {
    /// Most frequent whole profile.
    Joint,
    /// Most frequent value of each attribute separately.
    Marginal,
}

#[derive(Debug, Clone, Serialize)]
pub struct McmcSettings {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    /// Tune proposal scales during burn-in.
    pub adapt: bool,
    /// Starting random-walk standard deviation on the unconstrained scale.
    pub initial_scale: f64,
    pub map: MapKind,
    /// Keep every retained draw in the summary.
    pub keep_draws: bool,
}

impl Default for McmcSettings {
    fn default() -> Self {
        Self {
            chains: 3,
            iterations: 5000,
            burn_in: 2000,
            thin: 1,
            adapt: true,
            initial_scale: 0.5,
            map: MapKind::Joint,
            keep_draws: false,
        }
    }
}

impl McmcSettings {
    pub fn check(&self) -> Result<()> {
        if self.chains == 0 {
            return Err(domain("need at least one chain"));
        }
        if self.burn_in >= self.iterations {
            return Err(domain(format!("burn-in {} must be below iterations {}", self.burn_in, self.iterations)));
        }
        if self.thin == 0 {
            return Err(domain("thinning must be at least 1"));
        }
        if !(self.initial_scale > 0.0 && self.initial_scale.is_finite()) {
            return Err(domain("initial proposal scale must be positive"));
        }
        Ok(())
    }

    fn retained(&self) -> usize {
        (self.iterations - self.burn_in).div_ceil(self.thin)
    }
}

/// Dirichlet(1) on class probabilities, Beta(1,1) on probability-scale item
/// parameters, Normal(0, v) on intercepts and interactions and Normal(0, v)
/// truncated to positive on main effects.
#[derive(Debug, Clone, Serialize)]
pub struct PriorSpec {
    pub normal_variance: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self { normal_variance: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Scale {
    /// Probability with a uniform prior, walked on the logit scale.
    Logit,
    /// Positive effect with a half-normal prior, walked on the log scale.
    Log,
    /// Real effect with a normal prior.
    Identity,
}

impl Scale {
    fn to_free(self, v: f64) -> f64 {
        match self {
            Self::Logit => logit(v),
            Self::Log => v.ln(),
            Self::Identity => v,
        }
    }

    fn from_free(self, u: f64) -> f64 {
        match self {
            Self::Logit => logistic(u),
            Self::Log => u.exp(),
            Self::Identity => u,
        }
    }

    /// Log prior plus log Jacobian, as a function of the free coordinate.
    fn log_prior(self, u: f64, v: f64, variance: f64) -> f64 {
        match self {
            Self::Logit => -softplus(-u) - softplus(u),
            Self::Log => -v * v / (2.0 * variance) + u,
            Self::Identity => -v * v / (2.0 * variance),
        }
    }

    fn in_support(self, v: f64) -> bool {
        match self {
            Self::Logit => v > 0.0 && v < 1.0,
            Self::Log => v > 0.0 && v.is_finite(),
            Self::Identity => v.is_finite(),
        }
    }
}

fn scales_for(params: &ItemParams) -> Vec<Scale> {
    match params {
        ItemParams::Dina { .. } | ItemParams::Dino { .. } => vec![Scale::Logit; 2],
        ItemParams::Rrum { penalties, .. } => vec![Scale::Logit; penalties.len() + 1],
        ItemParams::Crum { mains, .. } => std::iter::once(Scale::Identity).chain(std::iter::repeat_n(Scale::Log, mains.len())).collect(),
        ItemParams::Lcdm { effects } => (0..effects.len())
            .map(|s: usize| if s.count_ones() == 1 { Scale::Log } else { Scale::Identity })
            .collect(),
    }
}

/// Item log-likelihood from per-group (correct, total) counts.
fn item_loglik(kind: ModelKind, v: &[f64], m: usize, stats: &[(f64, f64)]) -> f64 {
    let mut total = 0.0;
    for (g, &(c, n)) in stats.iter().enumerate() {
        if n == 0.0 {
            continue;
        }
        let (lp, lq) = match kind {
            ModelKind::Rrum => {
                let a = (0..m).filter(|t| g >> t & 1 == 0).fold(v[0].ln(), |acc, t| acc + v[t + 1].ln());
                (a, (-a.exp_m1()).ln())
            }
            ModelKind::Crum => {
                let eta = (0..m).filter(|t| g >> t & 1 == 1).fold(v[0], |acc, t| acc + v[t + 1]);
                (-softplus(-eta), -softplus(eta))
            }
            ModelKind::Lcdm => {
                let mut eta = 0.0;
                let mut s = g;
                loop {
                    eta += v[s];
                    if s == 0 {
                        break;
                    }
                    s = (s - 1) & g;
                }
                (-softplus(-eta), -softplus(eta))
            }
            ModelKind::Dina | ModelKind::Dino => {
                let full = (1usize << m) - 1;
                let mastered = if kind == ModelKind::Dina { g == full } else { g != 0 };
                let p = if mastered { 1.0 - v[0] } else { v[1] };
                (p.ln(), (-p).ln_1p())
            }
        };
        if c > 0.0 {
            total += c * lp;
        }
        if n - c > 0.0 {
            total += (n - c) * lq;
        }
    }
    total
}

/// Draw an index with probability proportional to `exp(logw)`.
fn sample_log_weights<R: Rng + ?Sized>(logw: &mut [f64], rng: &mut R) -> usize {
    let max = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for w in logw.iter_mut() {
        *w = (*w - max).exp();
        total += *w;
    }
    let mut u = rng.random::<f64>() * total;
    for (a, w) in logw.iter().enumerate() {
        if u < *w {
            return a;
        }
        u -= w;
    }
    // rounding left u just above the last positive weight
    logw.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Draw one respondent's profile index from its full conditional.
pub fn sample_profile_conditional<R: Rng + ?Sized>(
    row: &[u8],
    q: &QMatrix,
    item_params: &[ItemParams],
    class_probs: &[f64],
    rng: &mut R,
) -> Result<usize> {
    let layout = Layout::new(q);
    let data = BinaryMatrix::from_rows(&[row.to_vec()])?;
    layout.check(&data, item_params)?;
    if class_probs.len() != layout.l {
        return Err(Error::Dimension { expected: layout.l, got: class_probs.len() });
    }
    let mut logw: Vec<f64> = class_probs.iter().map(|p| p.ln()).collect();
    for (j, (item, p)) in layout.items.iter().zip(item_params).enumerate() {
        let probs = p.group_probs(item.m);
        for (a, w) in logw.iter_mut().enumerate() {
            let pr = probs[item.groups[a] as usize];
            *w += if row[j] == 1 { pr.ln() } else { (-pr).ln_1p() };
        }
    }
    if logw.iter().all(|w| !w.is_finite()) {
        return Err(domain("response row has zero probability under every profile"));
    }
    Ok(sample_log_weights(&mut logw, rng))
}

/// Dirichlet(1 + counts) draw for the class probabilities.
pub fn sample_class_probs<R: Rng + ?Sized>(profiles: &[usize], l: usize, rng: &mut R) -> Vec<f64> {
    let mut counts = vec![0usize; l];
    for &a in profiles {
        counts[a] += 1;
    }
    dirichlet(&counts.iter().map(|&c| 1.0 + c as f64).collect::<Vec<_>>(), rng)
}

fn dirichlet<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut g: Vec<f64> = alpha
        .iter()
        .map(|&a| Gamma::new(a, 1.0).expect("shape is positive").sample(rng))
        .collect();
    let total: f64 = g.iter().sum();
    g.iter_mut().for_each(|v| *v /= total);
    g
}

fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> f64 {
    // keep the draw strictly inside (0, 1)
    let v: f64 = Beta::new(a, b).expect("parameters are positive").sample(rng);
    v.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn group_stats(data: &BinaryMatrix, layout: &Layout, profiles: &[usize]) -> Vec<Vec<(f64, f64)>> {
    let mut stats: Vec<Vec<(f64, f64)>> = layout.items.iter().map(|it| vec![(0.0, 0.0); 1 << it.m]).collect();
    for (i, &a) in profiles.iter().enumerate() {
        for (j, (&x, item)) in data.row(i).iter().zip(&layout.items).enumerate() {
            let cell = &mut stats[j][item.groups[a] as usize];
            cell.0 += x as f64;
            cell.1 += 1.0;
        }
    }
    stats
}

fn conjugate_item<R: Rng + ?Sized>(kind: ModelKind, m: usize, stats: &[(f64, f64)], rng: &mut R) -> ItemParams {
    let full = (1usize << m) - 1;
    let mastered = |g: usize| if kind == ModelKind::Dina { g == full } else { g != 0 };
    let (mut c1, mut n1, mut c0, mut n0) = (0.0, 0.0, 0.0, 0.0);
    for (g, &(c, n)) in stats.iter().enumerate() {
        if mastered(g) {
            c1 += c;
            n1 += n;
        } else {
            c0 += c;
            n0 += n;
        }
    }
    let slip = beta(1.0 + n1 - c1, 1.0 + c1, rng);
    let guess = beta(1.0 + c0, 1.0 + n0 - c0, rng);
    if kind == ModelKind::Dina {
        ItemParams::Dina { slip, guess }
    } else {
        ItemParams::Dino { slip, guess }
    }
}

/// Gibbs draw of DINA or DINO slip and guess given profiles.
pub fn update_conjugate<R: Rng + ?Sized>(
    data: &BinaryMatrix,
    profiles: &[usize],
    q: &QMatrix,
    model: ModelKind,
    rng: &mut R,
) -> Result<Vec<ItemParams>> {
    if !matches!(model, ModelKind::Dina | ModelKind::Dino) {
        return Err(domain(format!("{model} has no conjugate item update")));
    }
    let layout = Layout::new(q);
    check_profiles(data, profiles, &layout)?;
    let stats = group_stats(data, &layout, profiles);
    Ok(layout.items.iter().zip(&stats).map(|(it, st)| conjugate_item(model, it.m, st, rng)).collect())
}

fn check_profiles(data: &BinaryMatrix, profiles: &[usize], layout: &Layout) -> Result<()> {
    if data.cols() != layout.n_items() {
        return Err(domain(format!("responses have {} items, Q has {}", data.cols(), layout.n_items())));
    }
    if profiles.len() != data.rows() {
        return Err(Error::Dimension { expected: data.rows(), got: profiles.len() });
    }
    if profiles.iter().any(|&a| a >= layout.l) {
        return Err(domain("profile index out of range"));
    }
    Ok(())
}

/// Random-walk state for the non-conjugate item parameters.
#[derive(Debug, Clone)]
pub struct MetropolisState {
    pub item_params: Vec<ItemParams>,
    /// Proposal standard deviation per item and scalar.
    pub scales: Vec<Vec<f64>>,
    pub accepted: Vec<Vec<u64>>,
    pub proposed: Vec<Vec<u64>>,
    kinds: Vec<Vec<Scale>>,
    steps: u64,
}

impl MetropolisState {
    pub fn new(item_params: Vec<ItemParams>, initial_scale: f64) -> Self {
        let kinds: Vec<Vec<Scale>> = item_params.iter().map(scales_for).collect();
        let scales = kinds.iter().map(|k| vec![initial_scale; k.len()]).collect();
        let zeros: Vec<Vec<u64>> = kinds.iter().map(|k| vec![0; k.len()]).collect();
        Self { item_params, scales, accepted: zeros.clone(), proposed: zeros, kinds, steps: 0 }
    }

    pub fn reset_counts(&mut self) {
        self.accepted.iter_mut().chain(self.proposed.iter_mut()).for_each(|v| v.fill(0));
    }

    /// Acceptance rate per item, pooled over its scalars.
    pub fn acceptance_rates(&self) -> Vec<f64> {
        self.accepted
            .iter()
            .zip(&self.proposed)
            .map(|(a, p)| {
                let (a, p): (u64, u64) = (a.iter().sum(), p.iter().sum());
                if p == 0 {
                    f64::NAN
                } else {
                    a as f64 / p as f64
                }
            })
            .collect()
    }

    fn sweep<R: Rng + ?Sized>(&mut self, layout: &Layout, stats: &[Vec<(f64, f64)>], prior: &PriorSpec, adapt: bool, rng: &mut R) {
        self.steps += 1;
        let gain = (self.steps as f64 + 1.0).powf(-0.6);
        for (j, item) in layout.items.iter().enumerate() {
            let kind = self.item_params[j].kind();
            let mut v = self.item_params[j].values();
            let mut current = item_loglik(kind, &v, item.m, &stats[j]);
            for c in 0..v.len() {
                let sc = self.kinds[j][c];
                let u = sc.to_free(v[c]);
                let z: f64 = rng.sample(StandardNormal);
                let u_new = u + self.scales[j][c] * z;
                let v_new = sc.from_free(u_new);
                let mut accept = false;
                if sc.in_support(v_new) {
                    let old = v[c];
                    v[c] = v_new;
                    let proposed = item_loglik(kind, &v, item.m, &stats[j]);
                    let log_ratio = proposed + sc.log_prior(u_new, v_new, prior.normal_variance)
                        - current
                        - sc.log_prior(u, old, prior.normal_variance);
                    let lu: f64 = rng.random::<f64>().ln();
                    if log_ratio.is_finite() && lu < log_ratio || log_ratio == f64::INFINITY {
                        accept = true;
                        current = proposed;
                    } else {
                        v[c] = old;
                    }
                }
                self.proposed[j][c] += 1;
                if accept {
                    self.accepted[j][c] += 1;
                }
                if adapt {
                    let a = if accept { 1.0 } else { 0.0 };
                    let ls = (self.scales[j][c].ln() + gain * (a - TARGET_ACCEPTANCE)).clamp(-12.0, 4.0);
                    self.scales[j][c] = ls.exp();
                }
            }
            self.item_params[j] = self.item_params[j].with_values(&v);
        }
    }
}

/// One random-walk sweep over all items given profiles.
pub fn update_metropolis<R: Rng + ?Sized>(
    data: &BinaryMatrix,
    profiles: &[usize],
    q: &QMatrix,
    state: &mut MetropolisState,
    prior: &PriorSpec,
    adapt: bool,
    rng: &mut R,
) -> Result<()> {
    let layout = Layout::new(q);
    check_profiles(data, profiles, &layout)?;
    layout.check(data, &state.item_params)?;
    if state.item_params.iter().any(|p| matches!(p.kind(), ModelKind::Dina | ModelKind::Dino)) {
        return Err(domain("DINA and DINO items use the conjugate update"));
    }
    let stats = group_stats(data, &layout, profiles);
    state.sweep(&layout, &stats, prior, adapt, rng);
    Ok(())
}

fn initial_state<R: Rng + ?Sized>(model: ModelKind, q: &QMatrix, rng: &mut R) -> Vec<ItemParams> {
    let mut jit = |v: f64| v + rng.random_range(-0.05..0.05);
    (0..q.n_items())
        .map(|j| {
            let m = q.required_count(j);
            match model {
                ModelKind::Dina => ItemParams::Dina { slip: jit(0.2), guess: jit(0.2) },
                ModelKind::Dino => ItemParams::Dino { slip: jit(0.2), guess: jit(0.2) },
                ModelKind::Rrum => ItemParams::Rrum { baseline: jit(0.8), penalties: (0..m).map(|_| jit(0.6)).collect() },
                ModelKind::Crum => ItemParams::Crum { intercept: jit(logit(0.2)), mains: (0..m).map(|_| jit(1.0)).collect() },
                ModelKind::Lcdm => ItemParams::Lcdm {
                    effects: (0..1usize << m)
                        .map(|s| match s.count_ones() {
                            0 => jit(logit(0.2)),
                            1 => jit(1.0),
                            _ => jit(0.0),
                        })
                        .collect(),
                },
            }
        })
        .collect()
}

struct ChainOutput {
    /// Retained draws of the monitored scalars, one vector per sweep.
    draws: Vec<Vec<f64>>,
    profile_counts: Vec<u32>,
    acceptance: Vec<f64>,
}

/// Column layout of the monitored scalars.
struct Monitor {
    names: Vec<String>,
    /// Start offset of each item's values.
    item_offsets: Vec<usize>,
    class_offset: usize,
    sg_offset: usize,
}

impl Monitor {
    fn new(template: &[ItemParams], l: usize) -> Self {
        let mut names = Vec::new();
        let mut item_offsets = Vec::new();
        for (j, p) in template.iter().enumerate() {
            item_offsets.push(names.len());
            names.extend(p.value_names().into_iter().map(|n| format!("item{j}.{n}")));
        }
        let class_offset = names.len();
        names.extend((0..l).map(|a| format!("class{a}")));
        let sg_offset = names.len();
        for j in 0..template.len() {
            names.push(format!("item{j}.slip_derived"));
            names.push(format!("item{j}.guess_derived"));
        }
        Self { names, item_offsets, class_offset, sg_offset }
    }

    fn record(&self, params: &[ItemParams], class_probs: &[f64]) -> Vec<f64> {
        let mut row = Vec::with_capacity(self.names.len());
        for p in params {
            row.extend(p.values());
        }
        row.extend_from_slice(class_probs);
        for p in params {
            let sg = slip_guess_unchecked(p);
            row.push(sg.slip);
            row.push(sg.guess);
        }
        row
    }
}

fn run_chain(
    data: &BinaryMatrix,
    layout: &Layout,
    model: ModelKind,
    q: &QMatrix,
    settings: &McmcSettings,
    prior: &PriorSpec,
    monitor: &Monitor,
    seed: u64,
    chain: usize,
) -> std::result::Result<ChainOutput, String> {
    let mut rng = rng::stream(seed, &[role::MCMC, chain as u64]);
    let n = data.rows();
    let l = layout.l;
    let conjugate = matches!(model, ModelKind::Dina | ModelKind::Dino);
    let mut state = MetropolisState::new(initial_state(model, q, &mut rng), settings.initial_scale);
    let mut class_probs = vec![1.0 / l as f64; l];
    let mut profiles = vec![0usize; n];
    let mut profile_counts = vec![0u32; n * l];
    let mut draws = Vec::with_capacity(settings.retained());
    let mut logw = vec![0.0; l];

    for it in 0..settings.iterations {
        if it == settings.burn_in {
            state.reset_counts();
        }
        let (log1, log0) = layout
            .log_tables(&state.item_params)
            .map_err(|(j, p)| format!("iteration {it}: item {j} probability {p} outside (0,1)"))?;
        let log_prior: Vec<f64> = class_probs.iter().map(|p| p.ln()).collect();
        for (i, prof) in profiles.iter_mut().enumerate() {
            logw.copy_from_slice(&log_prior);
            for (j, &x) in data.row(i).iter().enumerate() {
                let t = if x == 1 { &log1[j * l..(j + 1) * l] } else { &log0[j * l..(j + 1) * l] };
                for (w, v) in logw.iter_mut().zip(t) {
                    *w += v;
                }
            }
            *prof = sample_log_weights(&mut logw, &mut rng);
        }
        class_probs = sample_class_probs(&profiles, l, &mut rng);
        if class_probs.iter().any(|&p| p <= 0.0) {
            // a Gamma draw underflowed; nudge onto the open simplex
            class_probs.iter_mut().for_each(|p| *p = p.max(f64::MIN_POSITIVE));
            let t: f64 = class_probs.iter().sum();
            class_probs.iter_mut().for_each(|p| *p /= t);
        }
        let stats = group_stats(data, layout, &profiles);
        if conjugate {
            for ((p, item), st) in state.item_params.iter_mut().zip(&layout.items).zip(&stats) {
                *p = conjugate_item(model, item.m, st, &mut rng);
            }
        } else {
            let adapt = settings.adapt && it < settings.burn_in;
            state.sweep(layout, &stats, prior, adapt, &mut rng);
        }
        debug_assert!(state.item_params.iter().zip(&layout.items).all(|(p, it)| p.validate(it.m).is_ok()));
        debug_assert!((class_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);

        if it >= settings.burn_in && (it - settings.burn_in).is_multiple_of(settings.thin) {
            for (i, &a) in profiles.iter().enumerate() {
                profile_counts[i * l + a] += 1;
            }
            draws.push(monitor.record(&state.item_params, &class_probs));
        }
    }
    let acceptance = if conjugate { vec![] } else { state.acceptance_rates() };
    Ok(ChainOutput { draws, profile_counts, acceptance })
}

/// Split potential scale reduction of one scalar across chains.
pub fn split_rhat(chains: &[Vec<f64>]) -> f64 {
    let halves: Vec<&[f64]> = chains
        .iter()
        .flat_map(|c| {
            let h = c.len() / 2;
            [&c[..h], &c[c.len() - h..]]
        })
        .filter(|h| !h.is_empty())
        .collect();
    let n = halves.iter().map(|h| h.len()).min().unwrap_or(0);
    if halves.len() < 2 || n < 2 {
        return f64::NAN;
    }
    let means: Vec<f64> = halves.iter().map(|h| h[..n].iter().sum::<f64>() / n as f64).collect();
    let w = halves
        .iter()
        .zip(&means)
        .map(|(h, m)| h[..n].iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64)
        .sum::<f64>()
        / halves.len() as f64;
    let grand = means.iter().sum::<f64>() / means.len() as f64;
    let b = n as f64 * means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (means.len() - 1) as f64;
    let var_plus = (n - 1) as f64 / n as f64 * w + b / n as f64;
    if var_plus == 0.0 {
        1.0
    } else if w == 0.0 {
        f64::INFINITY
    } else {
        (var_plus / w).sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    pub model: ModelKind,
    /// Posterior means of the item parameters on their stored scale.
    pub item_params_eap: Vec<ItemParams>,
    /// Posterior means of slip and guess, transformed draw by draw.
    pub slip_guess_eap: Vec<SlipGuess>,
    pub class_probs_eap: Vec<f64>,
    /// Relative frequency of each profile among the pooled draws.
    pub profile_posterior: Posterior,
    pub map_profiles: BinaryMatrix,
    pub map_kind: MapKind,
    pub rhat: Vec<(String, f64)>,
    /// Post-burn-in acceptance per item, averaged over chains; empty for
    /// conjugate models.
    pub acceptance: Vec<f64>,
    /// Items whose slip draws pile up near both 0 and 1.
    pub multimodal: Vec<bool>,
    pub warnings: Vec<String>,
    pub chains: usize,
    pub draws_per_chain: usize,
    /// Column names and pooled draws, when requested.
    pub draws: Option<(Vec<String>, Vec<Vec<f64>>)>,
    pub n_attributes: usize,
}

impl PosteriorSummary {
    pub fn max_rhat(&self) -> f64 {
        self.rhat.iter().map(|r| r.1).filter(|v| !v.is_nan()).fold(f64::NAN, f64::max)
    }

    /// Per-attribute marginal posterior mode; ties go to 0.
    pub fn marginal_map(&self) -> BinaryMatrix {
        marginal_modes(&self.profile_posterior, self.n_attributes)
    }

    /// Most frequent whole profile; ties go to the lowest index.
    pub fn joint_map(&self) -> BinaryMatrix {
        joint_modes(&self.profile_posterior, self.n_attributes)
    }

    pub fn to_json(&self, q: &QMatrix) -> Value {
        let items: Vec<_> = self
            .item_params_eap
            .iter()
            .enumerate()
            .map(|(j, p)| p.to_record(&q.row(j)))
            .collect();
        let rhat: serde_json::Map<String, Value> = self
            .rhat
            .iter()
            .map(|(k, v)| (k.clone(), if v.is_finite() { json!(v) } else { Value::Null }))
            .collect();
        json!({
            "model": self.model,
            "item_params_eap": items,
            "slip_guess_eap": self.slip_guess_eap,
            "class_probs_eap": self.class_probs_eap,
            "map_kind": self.map_kind,
            "rhat": rhat,
            "acceptance": self.acceptance,
            "multimodal": self.multimodal,
            "warnings": self.warnings,
            "chains": self.chains,
            "draws_per_chain": self.draws_per_chain,
        })
    }

    /// Retained draws as CSV, one row per sweep with chains stacked in order.
    pub fn write_draws_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let (names, rows) = self.draws.as_ref().ok_or_else(|| domain("draws were not kept"))?;
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(names)?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

fn joint_modes(post: &Posterior, k: usize) -> BinaryMatrix {
    let space = ProfileSpace::new(k).expect("validated by Q");
    let idx = post.argmax();
    let mut out = BinaryMatrix::zeros(idx.len(), k);
    for (i, &a) in idx.iter().enumerate() {
        out.row_mut(i).copy_from_slice(space.decode(a).bits());
    }
    out
}

fn marginal_modes(post: &Posterior, k: usize) -> BinaryMatrix {
    let mut out = BinaryMatrix::zeros(post.n_respondents(), k);
    for i in 0..post.n_respondents() {
        for attr in 0..k {
            let p: f64 = post.row(i).iter().enumerate().filter(|(a, _)| a >> attr & 1 == 1).map(|(_, v)| v).sum();
            out.set(i, attr, u8::from(p > 0.5));
        }
    }
    out
}

/// Sample the posterior of `model` and summarize it.
pub fn fit_mcmc(
    data: &BinaryMatrix,
    q: &QMatrix,
    model: ModelKind,
    settings: &McmcSettings,
    prior: &PriorSpec,
    seed: u64,
) -> Result<PosteriorSummary> {
    settings.check()?;
    if !(prior.normal_variance > 0.0 && prior.normal_variance.is_finite()) {
        return Err(domain("prior variance must be positive"));
    }
    let layout = Layout::new(q);
    if data.cols() != layout.n_items() {
        return Err(domain(format!("responses have {} items, Q has {}", data.cols(), layout.n_items())));
    }
    if data.rows() == 0 {
        return Err(domain("no respondents"));
    }
    let l = layout.l;
    let n = data.rows();
    let template = initial_state(model, q, &mut rng::stream(seed, &[role::MCMC]));
    let monitor = Monitor::new(&template, l);

    let outputs: Vec<_> = (0..settings.chains)
        .into_par_iter()
        .map(|c| run_chain(data, &layout, model, q, settings, prior, &monitor, seed, c))
        .collect();
    let mut chains = Vec::with_capacity(outputs.len());
    for (c, out) in outputs.into_iter().enumerate() {
        chains.push(out.map_err(|message| Error::Numerical { iteration: c, message })?);
    }

    let width = monitor.names.len();
    let total_draws: usize = chains.iter().map(|c| c.draws.len()).sum();
    let mut means = vec![0.0; width];
    for c in &chains {
        for d in &c.draws {
            for (m, v) in means.iter_mut().zip(d) {
                *m += v;
            }
        }
    }
    means.iter_mut().for_each(|m| *m /= total_draws as f64);

    let item_params_eap: Vec<ItemParams> = template
        .iter()
        .enumerate()
        .map(|(j, t)| {
            let off = monitor.item_offsets[j];
            t.with_values(&means[off..off + t.values().len()])
        })
        .collect();
    let class_probs_eap = means[monitor.class_offset..monitor.class_offset + l].to_vec();
    let slip_guess_eap: Vec<SlipGuess> = (0..template.len())
        .map(|j| SlipGuess { slip: means[monitor.sg_offset + 2 * j], guess: means[monitor.sg_offset + 2 * j + 1] })
        .collect();

    let multimodal: Vec<bool> = (0..template.len())
        .map(|j| {
            let col = monitor.sg_offset + 2 * j;
            let (mut lo, mut hi) = (0usize, 0usize);
            for c in &chains {
                for d in &c.draws {
                    if d[col] < 0.02 {
                        lo += 1;
                    }
                    if d[col] > 0.98 {
                        hi += 1;
                    }
                }
            }
            let t = total_draws as f64;
            lo as f64 / t > 0.05 && hi as f64 / t > 0.05
        })
        .collect();

    let rhat: Vec<(String, f64)> = monitor
        .names
        .iter()
        .enumerate()
        .map(|(col, name)| {
            let series: Vec<Vec<f64>> = chains.iter().map(|c| c.draws.iter().map(|d| d[col]).collect()).collect();
            (name.clone(), split_rhat(&series))
        })
        .collect();

    let mut counts = vec![0.0; n * l];
    for c in &chains {
        for (acc, &v) in counts.iter_mut().zip(&c.profile_counts) {
            *acc += v as f64;
        }
    }
    let rows: Vec<Vec<f64>> = counts.chunks(l).map(|r| r.iter().map(|v| v / total_draws as f64).collect()).collect();
    let profile_posterior = Posterior::from_rows(&rows)?;
    let map_profiles = match settings.map {
        MapKind::Joint => joint_modes(&profile_posterior, layout.k),
        MapKind::Marginal => marginal_modes(&profile_posterior, layout.k),
    };

    let acceptance = if chains[0].acceptance.is_empty() {
        vec![]
    } else {
        (0..template.len())
            .map(|j| chains.iter().map(|c| c.acceptance[j]).sum::<f64>() / chains.len() as f64)
            .collect()
    };

    let mut warnings = Vec::new();
    let worst = rhat.iter().filter(|r| r.1 > 1.1).count();
    if worst > 0 {
        let max = rhat.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
        warnings.push(format!("{worst} monitored scalars have R-hat above 1.1 (max {max:.3})"));
    }
    if settings.chains == 1 {
        warnings.push("single chain: R-hat compares the two halves of one chain".into());
    }
    let flagged = multimodal.iter().filter(|&&b| b).count();
    if flagged > 0 {
        warnings.push(format!("{flagged} items have slip draws massed near both 0 and 1"));
    }

    let draws = settings.keep_draws.then(|| {
        let rows = chains.iter().flat_map(|c| c.draws.iter().cloned()).collect();
        (monitor.names.clone(), rows)
    });

    Ok(PosteriorSummary {
        model,
        item_params_eap,
        slip_guess_eap,
        class_probs_eap,
        profile_posterior,
        map_profiles,
        map_kind: settings.map,
        rhat,
        acceptance,
        multimodal,
        warnings,
        chains: settings.chains,
        draws_per_chain: chains[0].draws.len(),
        draws,
        n_attributes: layout.k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rhat_of_identical_chains_near_one() {
        let a: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64).collect();
        let r = split_rhat(&[a.clone(), a]);
        assert!((r - 1.0).abs() < 0.05, "{r}");
    }

    #[test]
    fn rhat_detects_shifted_chains() {
        let a: Vec<f64> = (0..200).map(|i| ((i * 7919) % 101) as f64 / 100.0).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 5.0).collect();
        assert!(split_rhat(&[a, b]) > 2.0);
    }

    #[test]
    fn scale_round_trip() {
        for (s, v) in [(Scale::Logit, 0.3), (Scale::Log, 2.5), (Scale::Identity, -1.2)] {
            assert!((s.from_free(s.to_free(v)) - v).abs() < 1e-12);
        }
    }

    #[test]
    fn item_loglik_agrees_with_group_probs() {
        let stats = [(1.0, 3.0), (2.0, 2.0), (0.0, 4.0), (5.0, 6.0)];
        for p in [
            ItemParams::Rrum { baseline: 0.9, penalties: vec![0.4, 0.7] },
            ItemParams::Crum { intercept: -1.0, mains: vec![1.5, 0.7] },
            ItemParams::Lcdm { effects: vec![-1.0, 1.5, 0.7, 0.3] },
            ItemParams::Dina { slip: 0.1, guess: 0.25 },
            ItemParams::Dino { slip: 0.1, guess: 0.25 },
        ] {
            let probs = p.group_probs(2);
            let want: f64 = stats
                .iter()
                .zip(&probs)
                .map(|(&(c, n), &pr)| c * pr.ln() + (n - c) * (1.0 - pr).ln())
                .sum();
            let got = item_loglik(p.kind(), &p.values(), 2, &stats);
            assert!((got - want).abs() < 1e-10, "{p:?}: {got} vs {want}");
        }
    }
}
