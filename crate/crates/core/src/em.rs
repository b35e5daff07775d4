//! Marginal maximum likelihood by expectation-maximization.
//!
//! Attribute profiles are integrated out over the 2^K classes. The M-step is
//! closed form for DINA, DINO and LCDM (all three are saturated in their
//! local groups) and a box-constrained Newton ascent for RRUM and CRUM.
//! Every M-step is non-decreasing in the expected complete-data
//! log-likelihood, so the marginal log-likelihood trace never goes down.

use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{domain, Error, Result};
use crate::layout::Layout;
use crate::matrix::BinaryMatrix;
use crate::models::{logistic, logit, softplus, logits_to_effects, slip_guess_unchecked, ItemParams, ModelKind};
use crate::optim::{maximize_in_box, Concave};
use crate::profile::ProfileSpace;
use crate::qmatrix::QMatrix;
use crate::rng::{self, role};

#[derive(Debug, Clone, Serialize)]
pub struct EmSettings {
    /// Stop when no item parameter or class probability moves more than this.
    pub tol: f64,
    pub max_iter: usize,
    /// Lower bound for probability-scale parameters.
    pub floor: f64,
    /// Upper bound for probability-scale parameters.
    pub ceiling: f64,
    /// Inner iteration cap for the Newton M-step.
    pub newton_max_iter: usize,
    /// Half-width of the uniform jitter added to starting values.
    pub jitter: f64,
}

impl Default for EmSettings {
    fn default() -> Self {
        Self { tol: 1e-4, max_iter: 2000, floor: 1e-4, ceiling: 1.0 - 1e-4, newton_max_iter: 50, jitter: 0.05 }
    }
}

impl EmSettings {
    fn check(&self) -> Result<()> {
        if !(self.floor > 0.0 && self.floor < self.ceiling && self.ceiling < 1.0) {
            return Err(domain(format!("need 0 < floor < ceiling < 1, got {} and {}", self.floor, self.ceiling)));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 {
            return Err(domain("tolerance and iteration cap must be positive"));
        }
        Ok(())
    }

    pub(crate) fn at_floor(&self, p: f64) -> bool {
        p <= self.floor * (1.0 + 1e-6)
    }

    pub(crate) fn at_ceiling(&self, p: f64) -> bool {
        p >= self.ceiling - (1.0 - self.ceiling) * 1e-6
    }
}

/// N x L matrix of posterior class membership probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    n: usize,
    l: usize,
    data: Vec<f64>,
}

impl Posterior {
    /// Build from per-respondent rows; each row must be a probability vector.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let l = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * l);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != l {
                return Err(Error::Dimension { expected: l, got: r.len() });
            }
            check_class_probs(r, l).map_err(|e| domain(format!("posterior row {i}: {e}")))?;
            data.extend_from_slice(r);
        }
        Ok(Self { n: rows.len(), l, data })
    }

    pub fn n_respondents(&self) -> usize {
        self.n
    }

    pub fn n_classes(&self) -> usize {
        self.l
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.l..(i + 1) * self.l]
    }

    /// Profile index with the largest posterior for each respondent; ties go
    /// to the lowest index.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.n)
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (a, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct EStep {
    pub posterior: Posterior,
    pub loglik: f64,
}

#[derive(Debug, Clone)]
pub struct MStep {
    pub item_params: Vec<ItemParams>,
    pub class_probs: Vec<f64>,
    /// Items whose Newton ascent hit the inner iteration cap.
    pub newton_unconverged: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct EmFit {
    pub model: ModelKind,
    pub item_params: Vec<ItemParams>,
    pub class_probs: Vec<f64>,
    /// Marginal log-likelihood at the start and after every M-step.
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Items with an estimate on the floor or ceiling.
    pub boundary_items: Vec<usize>,
    pub newton_unconverged: Vec<usize>,
    pub posterior: Posterior,
    pub n_attributes: usize,
}

impl EmFit {
    pub fn loglik(&self) -> f64 {
        *self.loglik_trace.last().expect("trace is never empty")
    }

    pub fn to_json(&self, q: &QMatrix) -> Value {
        let items: Vec<_> = self
            .item_params
            .iter()
            .enumerate()
            .map(|(j, p)| p.to_record(&q.row(j)))
            .collect();
        json!({
            "model": self.model,
            "item_params": items,
            "class_probs": self.class_probs,
            "loglik_trace": self.loglik_trace,
            "converged": self.converged,
            "iterations": self.iterations,
            "boundary_items": self.boundary_items,
            "newton_unconverged": self.newton_unconverged,
        })
    }
}

fn check_class_probs(class_probs: &[f64], l: usize) -> Result<()> {
    if class_probs.len() != l {
        return Err(Error::Dimension { expected: l, got: class_probs.len() });
    }
    if class_probs.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(domain("class probability outside [0,1]"));
    }
    let total: f64 = class_probs.iter().sum();
    if (total - 1.0).abs() > 1e-8 {
        return Err(domain(format!("class probabilities sum to {total}")));
    }
    Ok(())
}

/// Core E-step on precomputed tables. Returns `None` if some respondent has
/// zero likelihood under every class.
fn e_step_tables(
    data: &BinaryMatrix,
    layout: &Layout,
    log1: &[f64],
    log0: &[f64],
    class_probs: &[f64],
) -> Option<EStep> {
    let l = layout.l;
    let n = data.rows();
    let log_prior: Vec<f64> = class_probs.iter().map(|p| p.ln()).collect();
    let mut post = vec![0.0; n * l];
    let mut loglik = 0.0;
    for i in 0..n {
        let row = &mut post[i * l..(i + 1) * l];
        row.copy_from_slice(&log_prior);
        for (j, &x) in data.row(i).iter().enumerate() {
            let t = if x == 1 { &log1[j * l..(j + 1) * l] } else { &log0[j * l..(j + 1) * l] };
            for (r, v) in row.iter_mut().zip(t) {
                *r += v;
            }
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        let mut sum = 0.0;
        for r in row.iter_mut() {
            *r = (*r - max).exp();
            sum += *r;
        }
        for r in row.iter_mut() {
            *r /= sum;
        }
        loglik += max + sum.ln();
    }
    Some(EStep { posterior: Posterior { n, l, data: post }, loglik })
}

/// Log-likelihood of the responses with profiles integrated out.
pub fn marginal_loglik(data: &BinaryMatrix, q: &QMatrix, item_params: &[ItemParams], class_probs: &[f64]) -> Result<f64> {
    Ok(e_step(data, q, item_params, class_probs)?.loglik)
}

/// Posterior class probabilities for each respondent.
pub fn e_step(data: &BinaryMatrix, q: &QMatrix, item_params: &[ItemParams], class_probs: &[f64]) -> Result<EStep> {
    let layout = Layout::new(q);
    layout.check(data, item_params)?;
    check_class_probs(class_probs, layout.l)?;
    let (log1, log0) = layout
        .log_tables(item_params)
        .map_err(|(j, p)| domain(format!("item {j}: response probability {p} not inside (0,1)")))?;
    e_step_tables(data, &layout, &log1, &log0, class_probs)
        .ok_or_else(|| domain("a response pattern has zero probability under every profile"))
}

/// Expected counts per item and local group: (correct, total).
fn group_stats(data: &BinaryMatrix, layout: &Layout, post: &Posterior) -> (Vec<f64>, Vec<Vec<(f64, f64)>>) {
    let l = layout.l;
    let j_count = layout.n_items();
    let mut class_mass = vec![0.0; l];
    let mut correct = vec![0.0; j_count * l];
    for i in 0..data.rows() {
        let r = post.row(i);
        for (c, v) in class_mass.iter_mut().zip(r) {
            *c += v;
        }
        for (j, &x) in data.row(i).iter().enumerate() {
            if x == 1 {
                for (c, v) in correct[j * l..(j + 1) * l].iter_mut().zip(r) {
                    *c += v;
                }
            }
        }
    }
    let stats = layout
        .items
        .iter()
        .enumerate()
        .map(|(j, item)| {
            let mut g = vec![(0.0, 0.0); 1 << item.m];
            for (a, &grp) in item.groups.iter().enumerate() {
                g[grp as usize].0 += correct[j * l + a];
                g[grp as usize].1 += class_mass[a];
            }
            g
        })
        .collect();
    (class_mass, stats)
}

/// Logit gap between the all-mastered and none-mastered groups at the start,
/// `logit(0.8) - logit(0.2)`. Matches the DINA start; near-flat logistic starts
/// stall in poor local optima at small N.
const START_GAP: f64 = 2.772_588_722_239_781;

/// Default starting values, optionally jittered.
pub fn initial_params<R: Rng + ?Sized>(
    model: ModelKind,
    q: &QMatrix,
    settings: &EmSettings,
    mut rng: Option<&mut R>,
) -> Vec<ItemParams> {
    let w = settings.jitter;
    let mut jit = |v: f64| match rng.as_deref_mut() {
        Some(r) if w > 0.0 => v + r.random_range(-w..w),
        _ => v,
    };
    let clamp = |p: f64| p.clamp(settings.floor, settings.ceiling);
    (0..q.n_items())
        .map(|j| {
            let m = q.required_count(j);
            match model {
                ModelKind::Dina => ItemParams::Dina { slip: clamp(jit(0.2)), guess: clamp(jit(0.2)) },
                ModelKind::Dino => ItemParams::Dino { slip: clamp(jit(0.2)), guess: clamp(jit(0.2)) },
                ModelKind::Rrum => ItemParams::Rrum {
                    baseline: clamp(jit(0.8)),
                    penalties: (0..m).map(|_| clamp(jit(0.6))).collect(),
                },
                ModelKind::Crum => ItemParams::Crum {
                    intercept: jit(logit(0.2)),
                    mains: (0..m).map(|_| jit(START_GAP / m as f64)).collect(),
                },
                ModelKind::Lcdm => ItemParams::Lcdm {
                    effects: (0..1usize << m)
                        .map(|s| match s.count_ones() {
                            0 => jit(logit(0.2)),
                            1 => jit(START_GAP / m as f64),
                            _ => jit(0.0),
                        })
                        .collect(),
                },
            }
        })
        .collect()
}

struct RrumObjective<'a> {
    m: usize,
    stats: &'a [(f64, f64)],
}

impl RrumObjective<'_> {
    /// Linear predictor on the log scale: ln pi + sum of ln r over unmastered.
    fn eta(&self, x: &[f64], g: usize) -> f64 {
        (0..self.m).filter(|t| g >> t & 1 == 0).fold(x[0], |acc, t| acc + x[t + 1])
    }
}

impl Concave for RrumObjective<'_> {
    fn dim(&self) -> usize {
        self.m + 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.stats
            .iter()
            .enumerate()
            .map(|(g, &(r, n))| {
                let eta = self.eta(x, g);
                r * eta + (n - r) * (-eta.exp_m1()).ln()
            })
            .sum()
    }

    fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.dim();
        grad.fill(0.0);
        hess.fill(0.0);
        for (g, &(r, n)) in self.stats.iter().enumerate() {
            let p = self.eta(x, g).exp();
            let odds = p / (1.0 - p);
            let a = r - (n - r) * odds;
            let b = -(n - r) * odds / (1.0 - p);
            let active: Vec<usize> = std::iter::once(0).chain((0..self.m).filter(|t| g >> t & 1 == 0).map(|t| t + 1)).collect();
            for &c in &active {
                grad[c] += a;
                for &e in &active {
                    hess[c * d + e] += b;
                }
            }
        }
    }
}

struct CrumObjective<'a> {
    m: usize,
    stats: &'a [(f64, f64)],
}

impl CrumObjective<'_> {
    fn eta(&self, x: &[f64], g: usize) -> f64 {
        (0..self.m).filter(|t| g >> t & 1 == 1).fold(x[0], |acc, t| acc + x[t + 1])
    }
}

impl Concave for CrumObjective<'_> {
    fn dim(&self) -> usize {
        self.m + 1
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.stats
            .iter()
            .enumerate()
            .map(|(g, &(r, n))| {
                let eta = self.eta(x, g);
                r * eta - n * softplus(eta)
            })
            .sum()
    }

    fn derivatives(&self, x: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.dim();
        grad.fill(0.0);
        hess.fill(0.0);
        for (g, &(r, n)) in self.stats.iter().enumerate() {
            let p = logistic(self.eta(x, g));
            let a = r - n * p;
            let b = -n * p * (1.0 - p);
            let active: Vec<usize> = std::iter::once(0).chain((0..self.m).filter(|t| g >> t & 1 == 1).map(|t| t + 1)).collect();
            for &c in &active {
                grad[c] += a;
                for &e in &active {
                    hess[c * d + e] += b;
                }
            }
        }
    }
}

/// Clamped proportion, falling back to `fallback` for an empty group.
fn proportion(r: f64, n: f64, fallback: f64, s: &EmSettings) -> f64 {
    let p = if n > 1e-300 { r / n } else { fallback };
    p.clamp(s.floor, s.ceiling)
}

fn pool(stats: &[(f64, f64)], pick: impl Fn(usize) -> bool) -> (f64, f64) {
    stats
        .iter()
        .enumerate()
        .filter(|(g, _)| pick(*g))
        .fold((0.0, 0.0), |acc, (_, &(r, n))| (acc.0 + r, acc.1 + n))
}

/// Maximize one item's expected complete-data log-likelihood.
/// Returns the update and whether the inner solver converged.
fn update_item(current: &ItemParams, m: usize, stats: &[(f64, f64)], s: &EmSettings) -> (ItemParams, bool) {
    let full = (1usize << m) - 1;
    match current {
        ItemParams::Dina { slip, guess } => {
            let (rm, nm) = pool(stats, |g| g == full);
            let (rn, nn) = pool(stats, |g| g != full);
            let slip = 1.0 - proportion(rm, nm, 1.0 - slip, s);
            let guess = proportion(rn, nn, *guess, s);
            (ItemParams::Dina { slip, guess }, true)
        }
        ItemParams::Dino { slip, guess } => {
            let (rm, nm) = pool(stats, |g| g != 0);
            let (rn, nn) = pool(stats, |g| g == 0);
            let slip = 1.0 - proportion(rm, nm, 1.0 - slip, s);
            let guess = proportion(rn, nn, *guess, s);
            (ItemParams::Dino { slip, guess }, true)
        }
        ItemParams::Lcdm { .. } => {
            let old = current.group_probs(m);
            let logits: Vec<f64> = stats
                .iter()
                .zip(&old)
                .map(|(&(r, n), &p)| logit(proportion(r, n, p, s)))
                .collect();
            (ItemParams::Lcdm { effects: logits_to_effects(&logits) }, true)
        }
        ItemParams::Rrum { baseline, penalties } => {
            let obj = RrumObjective { m, stats };
            let (lo, hi) = (s.floor.ln(), s.ceiling.ln());
            let x0: Vec<f64> = std::iter::once(*baseline).chain(penalties.iter().copied()).map(f64::ln).collect();
            let out = maximize_in_box(&obj, &x0, &vec![lo; m + 1], &vec![hi; m + 1], s.newton_max_iter);
            let v: Vec<f64> = out.x.iter().map(|x| x.exp().clamp(s.floor, s.ceiling)).collect();
            (current.with_values(&v), out.converged)
        }
        ItemParams::Crum { intercept, mains } => {
            let obj = CrumObjective { m, stats };
            let (lf, lc) = (logit(s.floor), logit(s.ceiling));
            let span = lc - lf;
            let lower: Vec<f64> = std::iter::once(lf).chain(std::iter::repeat_n(-span, m)).collect();
            let upper: Vec<f64> = std::iter::once(lc).chain(std::iter::repeat_n(span, m)).collect();
            let x0: Vec<f64> = std::iter::once(*intercept).chain(mains.iter().copied()).collect();
            let out = maximize_in_box(&obj, &x0, &lower, &upper, s.newton_max_iter);
            (current.with_values(&out.x), out.converged)
        }
    }
}

/// One M-step from posterior class probabilities. `current` supplies the
/// model, warm starts for the Newton updates and fallbacks for empty groups.
pub fn m_step(
    data: &BinaryMatrix,
    q: &QMatrix,
    posterior: &Posterior,
    current: &[ItemParams],
    settings: &EmSettings,
) -> Result<MStep> {
    settings.check()?;
    let layout = Layout::new(q);
    layout.check(data, current)?;
    if posterior.n != data.rows() || posterior.l != layout.l {
        return Err(domain("posterior does not match data and Q"));
    }
    Ok(m_step_inner(data, &layout, posterior, current, settings))
}

fn m_step_inner(data: &BinaryMatrix, layout: &Layout, posterior: &Posterior, current: &[ItemParams], settings: &EmSettings) -> MStep {
    let (class_mass, stats) = group_stats(data, layout, posterior);
    let n = data.rows() as f64;
    let class_probs: Vec<f64> = class_mass.iter().map(|c| c / n).collect();
    let mut newton_unconverged = Vec::new();
    let item_params = current
        .iter()
        .zip(&layout.items)
        .zip(&stats)
        .enumerate()
        .map(|(j, ((p, item), st))| {
            let (next, ok) = update_item(p, item.m, st, settings);
            if !ok {
                newton_unconverged.push(j);
            }
            next
        })
        .collect();
    MStep { item_params, class_probs, newton_unconverged }
}

/// Items with any estimate on the floor or ceiling, judged on the
/// probability scale: stored probabilities, derived slip and guess, and
/// every local group's success probability.
pub fn boundary_items(q: &QMatrix, item_params: &[ItemParams], settings: &EmSettings) -> Vec<usize> {
    item_params
        .iter()
        .enumerate()
        .filter(|(j, p)| {
            let m = q.required_count(*j);
            let sg = slip_guess_unchecked(p);
            let mut probs = p.group_probs(m);
            probs.extend([sg.slip, sg.guess]);
            if let ItemParams::Rrum { baseline, penalties } = p {
                probs.push(*baseline);
                probs.extend(penalties);
            }
            probs.iter().any(|&v| settings.at_floor(v) || settings.at_ceiling(v))
        })
        .map(|(j, _)| j)
        .collect()
}

fn max_change(a: &[ItemParams], b: &[ItemParams], ca: &[f64], cb: &[f64]) -> f64 {
    let items = a
        .iter()
        .zip(b)
        .flat_map(|(x, y)| x.values().into_iter().zip(y.values()).map(|(u, v)| (u - v).abs()).collect::<Vec<_>>());
    let classes = ca.iter().zip(cb).map(|(u, v)| (u - v).abs());
    items.chain(classes).fold(0.0, f64::max)
}

/// Fit `model` by EM. Starting values are jittered from a stream derived
/// from `seed`.
pub fn fit_em(data: &BinaryMatrix, q: &QMatrix, model: ModelKind, settings: &EmSettings, seed: u64) -> Result<EmFit> {
    settings.check()?;
    let mut rng = rng::stream(seed, &[role::EM]);
    let params = initial_params(model, q, settings, Some(&mut rng));
    fit_em_from(data, q, params, settings)
}

/// Fit by EM from explicit starting values.
pub fn fit_em_from(data: &BinaryMatrix, q: &QMatrix, start: Vec<ItemParams>, settings: &EmSettings) -> Result<EmFit> {
    settings.check()?;
    let layout = Layout::new(q);
    layout.check(data, &start)?;
    if data.rows() == 0 {
        return Err(domain("no respondents"));
    }
    let model = start.first().map(ItemParams::kind).ok_or_else(|| domain("no items"))?;
    if start.iter().any(|p| p.kind() != model) {
        return Err(domain("starting values mix models"));
    }

    let estep = |params: &[ItemParams], cp: &[f64], iteration: usize| -> Result<EStep> {
        let (log1, log0) = layout.log_tables(params).map_err(|(j, p)| Error::Numerical {
            iteration,
            message: format!("item {j} response probability {p} outside (0,1)"),
        })?;
        let out = e_step_tables(data, &layout, &log1, &log0, cp).ok_or_else(|| Error::Numerical {
            iteration,
            message: "response pattern with zero likelihood".into(),
        })?;
        if !out.loglik.is_finite() {
            return Err(Error::Numerical { iteration, message: "non-finite log-likelihood".into() });
        }
        Ok(out)
    };

    let mut params = start;
    let mut class_probs = vec![1.0 / layout.l as f64; layout.l];
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut flagged = std::collections::BTreeSet::new();
    let mut current = estep(&params, &class_probs, 0)?;
    trace.push(current.loglik);

    while iterations < settings.max_iter {
        iterations += 1;
        let m = m_step_inner(data, &layout, &current.posterior, &params, settings);
        flagged.extend(m.newton_unconverged.iter().copied());
        let change = max_change(&params, &m.item_params, &class_probs, &m.class_probs);
        params = m.item_params;
        class_probs = m.class_probs;
        current = estep(&params, &class_probs, iterations)?;
        trace.push(current.loglik);
        if change < settings.tol {
            converged = true;
            break;
        }
    }

    Ok(EmFit {
        model,
        boundary_items: boundary_items(q, &params, settings),
        item_params: params,
        class_probs,
        loglik_trace: trace,
        converged,
        iterations,
        newton_unconverged: flagged.into_iter().collect(),
        posterior: current.posterior,
        n_attributes: layout.k,
    })
}

/// Maximum a posteriori profile of every respondent (N x K).
pub fn classify_map(fit: &EmFit) -> BinaryMatrix {
    let space = ProfileSpace::new(fit.n_attributes).expect("attribute count was validated by Q");
    let idx = fit.posterior.argmax();
    let mut out = BinaryMatrix::zeros(idx.len(), fit.n_attributes);
    for (i, &a) in idx.iter().enumerate() {
        out.row_mut(i).copy_from_slice(space.decode(a).bits());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn q_of(rows: &[&[u8]]) -> QMatrix {
        QMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn posterior_argmax_ties_low() {
        let p = Posterior { n: 1, l: 4, data: vec![0.1, 0.4, 0.1, 0.4] };
        assert_eq!(p.argmax(), vec![1]);
    }

    #[test]
    fn rrum_newton_matches_free_proportions_when_saturated() {
        // m = 1: two groups, two parameters -> saturated; optimum reproduces proportions
        let stats = [(3.0, 10.0), (16.0, 20.0)];
        let s = EmSettings::default();
        let start = ItemParams::Rrum { baseline: 0.8, penalties: vec![0.6] };
        let (out, ok) = update_item(&start, 1, &stats, &s);
        assert!(ok);
        let probs = out.group_probs(1);
        assert!((probs[0] - 0.3).abs() < 1e-8, "{probs:?}");
        assert!((probs[1] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn crum_newton_matches_free_proportions_when_saturated() {
        let stats = [(3.0, 10.0), (16.0, 20.0)];
        let s = EmSettings::default();
        let start = ItemParams::Crum { intercept: -1.0, mains: vec![0.1] };
        let (out, ok) = update_item(&start, 1, &stats, &s);
        assert!(ok);
        let probs = out.group_probs(1);
        assert!((probs[0] - 0.3).abs() < 1e-8);
        assert!((probs[1] - 0.8).abs() < 1e-8);
    }

    #[test]
    fn dina_update_clamps() {
        let stats = [(0.0, 5.0), (0.0, 5.0), (0.0, 5.0), (7.0, 7.0)];
        let s = EmSettings::default();
        let (out, _) = update_item(&ItemParams::Dina { slip: 0.2, guess: 0.2 }, 2, &stats, &s);
        assert_eq!(out, ItemParams::Dina { slip: 1.0 - s.ceiling, guess: s.floor });
        assert_eq!(boundary_items(&q_of(&[&[1, 1]]), &[out], &s), vec![0]);
    }

    #[test]
    fn empty_group_keeps_current_value() {
        let stats = [(0.0, 0.0), (4.0, 5.0)];
        let s = EmSettings::default();
        let (out, _) = update_item(&ItemParams::Dina { slip: 0.2, guess: 0.3 }, 1, &stats, &s);
        match out {
            ItemParams::Dina { slip, guess } => {
                assert!((slip - 0.2).abs() < 1e-12);
                assert!((guess - 0.3).abs() < 1e-12);
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn bad_settings_rejected() {
        let q = q_of(&[&[1]]);
        let data = BinaryMatrix::from_rows(&[vec![1], vec![0]]).unwrap();
        let s = EmSettings { floor: 0.6, ceiling: 0.4, ..EmSettings::default() };
        assert!(fit_em(&data, &q, ModelKind::Dina, &s, 1).is_err());
    }
}
