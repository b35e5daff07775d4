//! Per-item lookup tables shared by the estimators.

use crate::error::{domain, Result};
use crate::matrix::BinaryMatrix;
use crate::models::{local_group, ItemParams};
use crate::qmatrix::QMatrix;

#[derive(Debug, Clone)]
pub(crate) struct ItemLayout {
    /// Number of required attributes.
    pub m: usize,
    /// Local group of each global profile index.
    pub groups: Vec<u32>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub k: usize,
    pub l: usize,
    pub items: Vec<ItemLayout>,
}

impl Layout {
    pub fn new(q: &QMatrix) -> Self {
        let k = q.n_attributes();
        let l = 1usize << k;
        let items = q
            .masks()
            .iter()
            .map(|&mask| ItemLayout {
                m: mask.count_ones() as usize,
                groups: (0..l as u32).map(|a| local_group(a, mask) as u32).collect(),
            })
            .collect();
        Self { k, l, items }
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Log success and failure probabilities, each J x L row-major.
    ///
    /// Returns the first offending (item, probability) when some response
    /// probability is not strictly inside (0, 1).
    pub fn log_tables(&self, params: &[ItemParams]) -> std::result::Result<(Vec<f64>, Vec<f64>), (usize, f64)> {
        let l = self.l;
        let mut log1 = vec![0.0; self.n_items() * l];
        let mut log0 = vec![0.0; self.n_items() * l];
        for (j, (item, p)) in self.items.iter().zip(params).enumerate() {
            let logs: Vec<(f64, f64)> = (0..1usize << item.m).map(|g| p.log_prob_local(g, item.m)).collect();
            if let Some(&(lp, lq)) = logs.iter().find(|(lp, lq)| !(lp.is_finite() && lq.is_finite())) {
                return Err((j, if lp.is_finite() { 1.0 - lq.exp() } else { lp.exp() }));
            }
            for (a, &g) in item.groups.iter().enumerate() {
                log1[j * l + a] = logs[g as usize].0;
                log0[j * l + a] = logs[g as usize].1;
            }
        }
        Ok((log1, log0))
    }

    pub fn check(&self, data: &BinaryMatrix, params: &[ItemParams]) -> Result<()> {
        if data.cols() != self.n_items() {
            return Err(domain(format!("responses have {} items, Q has {}", data.cols(), self.n_items())));
        }
        if params.len() != self.n_items() {
            return Err(domain(format!("{} item parameter sets for {} items", params.len(), self.n_items())));
        }
        for (j, (item, p)) in self.items.iter().zip(params).enumerate() {
            p.validate(item.m).map_err(|e| domain(format!("item {j}: {e}")))?;
        }
        Ok(())
    }
}
