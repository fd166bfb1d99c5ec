//! PQ-index compressibility and the rewiring ratio derived from it.
//!
//! For a vector `w` of length `d` and `0 < p < q`:
//!
//! ```text
//! I(w) = 1 - d^(1/q - 1/p) · ‖w‖_p / ‖w‖_q
//! r    = d · (1 + α_r)^(-q/(q-p)) · (1 - I)^(pq/(q-p))
//! k    = ⌊d · min(γ(1 - r/d), β)⌋,   c = k / N
//! ```
//!
//! `I` is 0 for a uniform-magnitude vector and approaches 1 as mass
//! concentrates on few entries. `r` lower-bounds how many parameters must be
//! kept, `k` is the number to prune, and `c` is that count as a fraction of
//! all `N` slots in the group.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layer::SparseLayer;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PqParams {
    pub p: f64,
    pub q: f64,
    /// Redundancy slack α_r.
    pub alpha_r: f64,
    /// Scaling factor γ on the raw ratio.
    pub gamma: f64,
    /// Upper clamp β on the ratio.
    pub beta: f64,
}

impl Default for PqParams {
    fn default() -> Self {
        Self {
            p: 1.0,
            q: 2.0,
            alpha_r: 0.001,
            gamma: 1.0,
            beta: 0.9,
        }
    }
}

impl PqParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.p.is_finite()) {
            return Err(Error::Argument(format!("p must be > 0, got {}", self.p)));
        }
        if !(self.q > self.p && self.q.is_finite()) {
            return Err(Error::Argument(format!(
                "q must be finite and > p, got p={} q={}",
                self.p, self.q
            )));
        }
        if !(self.alpha_r >= 0.0 && self.alpha_r.is_finite()) {
            return Err(Error::Argument(format!("alpha_r must be >= 0, got {}", self.alpha_r)));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::Argument(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(Error::Argument(format!("beta must be in (0, 1], got {}", self.beta)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scope {
    Layer,
    Neuron,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(untagged)]
pub enum ScopeId {
    Layer { layer: usize },
    Neuron { layer: usize, neuron: usize },
}

impl ScopeId {
    pub fn layer(&self) -> usize {
        match *self {
            ScopeId::Layer { layer } | ScopeId::Neuron { layer, .. } => layer,
        }
    }
}

impl fmt::Display for ScopeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScopeId::Layer { layer } => write!(f, "{}", layer),
            ScopeId::Neuron { layer, neuron } => write!(f, "{}:{}", layer, neuron),
        }
    }
}

/// PQ statistics and the derived prune count for one scope group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PqReport {
    pub scope_id: ScopeId,
    /// Active-parameter count `|M|` of the group.
    pub d: usize,
    pub index: f64,
    /// Real-valued lower bound on parameters to retain.
    pub r: f64,
    pub prune_count: usize,
    pub ratio: f64,
    /// Group slot count `N`.
    pub total: usize,
    /// No active weights (or all of them zero): nothing to measure or rewire.
    pub skipped: bool,
}

/// ‖w‖_p / ‖w‖_q, computed on `w / max|w|` so large or tiny magnitudes
/// neither overflow nor underflow.
fn norm_ratio(w: &[f64], p: f64, q: f64) -> Option<f64> {
    let peak = w.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if peak == 0.0 || !peak.is_finite() {
        return None;
    }
    let (mut sp, mut sq) = (0.0, 0.0);
    for x in w {
        let a = x.abs() / peak;
        sp += a.powf(p);
        sq += a.powf(q);
    }
    Some(sp.powf(1.0 / p) / sq.powf(1.0 / q))
}

/// PQ index over the full vector, counting zeros in `d`.
pub fn pq_index_full(w: &[f64], params: &PqParams) -> Result<f64> {
    let ratio = norm_ratio(w, params.p, params.q)
        .ok_or_else(|| Error::Degenerate("PQ index of an all-zero vector".into()))?;
    let d = w.len() as f64;
    let index = 1.0 - d.powf(1.0 / params.q - 1.0 / params.p) * ratio;
    // rounding can leave a uniform vector a hair below zero
    Ok(index.max(0.0))
}

/// PQ index over the nonzero entries of `w` only (`d` = nonzero count).
pub fn pq_index(w: &[f64], params: &PqParams) -> Result<f64> {
    let nonzero: Vec<f64> = w.iter().copied().filter(|x| *x != 0.0).collect();
    pq_index_full(&nonzero, params)
}

/// Real-valued lower bound `r` on the number of parameters to keep.
pub fn lower_bound(d: usize, index: f64, params: &PqParams) -> f64 {
    let (p, q) = (params.p, params.q);
    let slack = (1.0 + params.alpha_r).powf(-q / (q - p));
    d as f64 * slack * (1.0 - index).max(0.0).powf(p * q / (q - p))
}

/// Prune count `⌊d·min(γ(1 - r/d), β)⌋` and its share of `total`.
pub fn rewiring_ratio(d: usize, r: f64, total: usize, params: &PqParams) -> Result<(usize, f64)> {
    if total == 0 {
        return Err(Error::Argument("rewiring ratio over an empty group".into()));
    }
    if d == 0 {
        return Ok((0, 0.0));
    }
    let df = d as f64;
    let frac = (params.gamma * (1.0 - r / df)).min(params.beta).max(0.0);
    let prune = ((df * frac).floor() as usize).min(d);
    Ok((prune, prune as f64 / total as f64))
}

/// One rewiring group within a layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ScopeGroup {
    pub id: ScopeId,
    /// Flat layer indices covered by the group, ascending.
    pub indices: Vec<usize>,
    /// Weights at the active entries, in index order.
    pub active_values: Vec<f64>,
    pub d: usize,
    pub total: usize,
    pub skip: bool,
}

pub fn scope_groups(layer: &SparseLayer, layer_index: usize, scope: Scope) -> Vec<ScopeGroup> {
    let (n_post, n_pre) = (layer.n_post(), layer.n_pre());
    let build = |id: ScopeId, indices: Vec<usize>| {
        let active_values: Vec<f64> = indices
            .iter()
            .filter(|&&i| layer.mask().get(i))
            .map(|&i| layer.weights().data()[i])
            .collect();
        let d = active_values.len();
        let skip = active_values.iter().all(|w| *w == 0.0);
        ScopeGroup {
            id,
            total: indices.len(),
            indices,
            active_values,
            d,
            skip,
        }
    };
    match scope {
        Scope::Layer => vec![build(
            ScopeId::Layer { layer: layer_index },
            (0..n_post * n_pre).collect(),
        )],
        Scope::Neuron => (0..n_post)
            .map(|i| {
                build(
                    ScopeId::Neuron {
                        layer: layer_index,
                        neuron: i,
                    },
                    (i * n_pre..(i + 1) * n_pre).collect(),
                )
            })
            .collect(),
    }
}

/// Full Stage I evaluation of one group.
pub fn group_report(group: &ScopeGroup, params: &PqParams) -> Result<PqReport> {
    if group.skip {
        return Ok(PqReport {
            scope_id: group.id,
            d: group.d,
            index: 0.0,
            r: group.d as f64,
            prune_count: 0,
            ratio: 0.0,
            total: group.total,
            skipped: true,
        });
    }
    let index = pq_index_full(&group.active_values, params)?;
    let r = lower_bound(group.d, index, params);
    let (prune_count, ratio) = rewiring_ratio(group.d, r, group.total, params)?;
    Ok(PqReport {
        scope_id: group.id,
        d: group.d,
        index,
        r,
        prune_count,
        ratio,
        total: group.total,
        skipped: false,
    })
}

pub fn pq_reports(
    layer: &SparseLayer,
    layer_index: usize,
    scope: Scope,
    params: &PqParams,
) -> Result<Vec<PqReport>> {
    scope_groups(layer, layer_index, scope)
        .iter()
        .map(|g| group_report(g, params))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::topology::Mask;

    const P12: PqParams = PqParams {
        p: 1.0,
        q: 2.0,
        alpha_r: 0.001,
        gamma: 1.0,
        beta: 0.9,
    };

    #[test]
    fn one_hot_vector() {
        let i = pq_index_full(&[10.0, 0.0, 0.0, 0.0], &P12).unwrap();
        assert!((i - 0.5).abs() < 1e-15);
        // nonzero-only view of the same vector has d = 1
        assert_eq!(pq_index(&[10.0, 0.0, 0.0, 0.0], &P12).unwrap(), 0.0);
    }

    #[test]
    fn two_equal_entries() {
        let i2 = pq_index_full(&[5.0, 5.0, 0.0, 0.0], &P12).unwrap();
        let want = 1.0 - 0.5 * 10.0 / 50f64.sqrt();
        assert!((i2 - want).abs() < 1e-15);
        assert!((i2 - 0.29289).abs() < 1e-5);
        assert!(i2 < pq_index_full(&[10.0, 0.0, 0.0, 0.0], &P12).unwrap());
    }

    #[test]
    fn uniform_vector_is_zero() {
        for d in [1, 3, 17, 500] {
            assert!(pq_index_full(&vec![-0.3; d], &P12).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn all_zero_is_degenerate() {
        assert!(matches!(pq_index(&[0.0, 0.0], &P12), Err(Error::Degenerate(_))));
        assert!(matches!(pq_index_full(&[], &P12), Err(Error::Degenerate(_))));
    }

    #[test]
    fn lower_bound_hand_values() {
        let r = lower_bound(1000, 0.5, &P12);
        assert!((r - 1000.0 * 0.25 / 1.001f64.powi(2)).abs() < 1e-9);
        assert!((r - 249.50).abs() < 0.01);
        assert_eq!(lower_bound(1000, 1.0, &P12), 0.0);
        let no_slack = PqParams { alpha_r: 0.0, ..P12 };
        assert_eq!(lower_bound(321, 0.0, &no_slack), 321.0);
    }

    #[test]
    fn ratio_hand_values() {
        let r = lower_bound(1000, 0.5, &P12);
        assert_eq!(rewiring_ratio(1000, r, 2000, &P12).unwrap(), (750, 0.375));
        assert_eq!(rewiring_ratio(1000, 1000.0, 2000, &P12).unwrap(), (0, 0.0));
        assert_eq!(rewiring_ratio(1000, 0.0, 2000, &P12).unwrap().0, 900);
        assert!(rewiring_ratio(10, 1.0, 0, &P12).is_err());
    }

    #[test]
    fn groups_by_scope() {
        let layer = SparseLayer::new(
            Tensor::from_vec(&[4, 3], (1..=12).map(f64::from).collect()).unwrap(),
            Mask::from_bits(4, 3, (0..12).map(|i| !(3..6).contains(&i)).collect()).unwrap(),
        )
        .unwrap();
        let whole = scope_groups(&layer, 0, Scope::Layer);
        assert_eq!(whole.len(), 1);
        assert_eq!(whole[0].total, 12);
        assert_eq!(whole[0].d, 9);
        let rows = scope_groups(&layer, 0, Scope::Neuron);
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|g| g.total == 3));
        assert!(rows[1].skip);
        assert!(!rows[0].skip);
        let reports = pq_reports(&layer, 0, Scope::Neuron, &P12).unwrap();
        assert!(reports[1].skipped);
        assert_eq!(reports[1].prune_count, 0);
    }
}
