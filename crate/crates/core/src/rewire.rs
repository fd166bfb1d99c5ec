//! Structural update: magnitude pruning followed by momentum-driven regrowth.

use std::collections::BTreeSet;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sparsity::{scope_groups, PqReport, Scope, ScopeGroup, ScopeId};
use crate::tensor::{topk_indices, Key, Order};

pub use crate::layer::SparseLayer;

/// Audit record of one prune/regrow pass over a scope group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RewireEvent {
    pub epoch: usize,
    pub scope_id: ScopeId,
    pub prune_count: usize,
    pub regrow_count: usize,
    /// Requested regrowths that found no eligible slot.
    pub regrow_shortfall: usize,
    pub pruned_indices: Vec<usize>,
    pub regrown_indices: Vec<usize>,
    /// Group density before and after the pass.
    pub density_before: f64,
    pub density_after: f64,
}

fn active_in(layer: &SparseLayer, group: &ScopeGroup) -> Vec<usize> {
    group
        .indices
        .iter()
        .copied()
        .filter(|&i| layer.mask().get(i))
        .collect()
}

/// Deactivates the `k` active entries of `group` with the smallest |w|.
/// Momentum is left untouched.
pub fn prune_by_magnitude(layer: &mut SparseLayer, group: &ScopeGroup, k: usize) -> Result<Vec<usize>> {
    let active = active_in(layer, group);
    if k > active.len() {
        return Err(Error::Argument(format!(
            "cannot prune {} of {} active connections in group {}",
            k,
            active.len(),
            group.id
        )));
    }
    let magnitudes: Vec<f64> = active.iter().map(|&i| layer.weights.data()[i]).collect();
    let picked = topk_indices(&magnitudes, k, Order::Smallest, Key::Abs)?;
    let pruned: Vec<usize> = picked.into_iter().map(|p| active[p]).collect();
    for &i in &pruned {
        layer.mask.set(i, false);
        layer.weights.data_mut()[i] = 0.0;
    }
    Ok(pruned)
}

/// Activates up to `k` inactive, non-forbidden entries of `group` with the
/// largest |momentum|; they start at weight zero. Returns the regrown indices
/// and the shortfall when fewer than `k` candidates exist.
pub fn regrow_by_momentum(
    layer: &mut SparseLayer,
    group: &ScopeGroup,
    k: usize,
    forbidden: &[usize],
) -> (Vec<usize>, usize) {
    let forbidden: BTreeSet<usize> = forbidden.iter().copied().collect();
    let candidates: Vec<usize> = group
        .indices
        .iter()
        .copied()
        .filter(|&i| !layer.mask().get(i) && !forbidden.contains(&i))
        .collect();
    let take = k.min(candidates.len());
    let momenta: Vec<f64> = candidates.iter().map(|&i| layer.momentum.data()[i]).collect();
    let picked = topk_indices(&momenta, take, Order::Largest, Key::Abs).expect("take <= len");
    let regrown: Vec<usize> = picked.into_iter().map(|p| candidates[p]).collect();
    for &i in &regrown {
        layer.mask.set(i, true);
        layer.weights.data_mut()[i] = 0.0;
    }
    (regrown, k - take)
}

fn group_density(layer: &SparseLayer, group: &ScopeGroup) -> f64 {
    if group.indices.is_empty() {
        0.0
    } else {
        active_in(layer, group).len() as f64 / group.indices.len() as f64
    }
}

/// Applies one prune/regrow pass per report. Each group prunes
/// `prune_count` entries and regrows `⌊λ·prune_count⌋`; entries pruned in
/// this pass are not eligible for regrowth.
///
/// All reports are checked against the layer before anything is mutated.
pub fn rewire_step(
    layer: &mut SparseLayer,
    reports: &[PqReport],
    regrow_fraction: f64,
    epoch: usize,
) -> Result<Vec<RewireEvent>> {
    if !(0.0..=1.0).contains(&regrow_fraction) {
        return Err(Error::Argument(format!(
            "regrow fraction must be in [0, 1], got {}",
            regrow_fraction
        )));
    }
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    let layer_index = first.scope_id.layer();
    let scope = match first.scope_id {
        ScopeId::Layer { .. } => Scope::Layer,
        ScopeId::Neuron { .. } => Scope::Neuron,
    };
    let groups = scope_groups(layer, layer_index, scope);

    let mut work: Vec<(&PqReport, &ScopeGroup)> = Vec::with_capacity(reports.len());
    for report in reports {
        let group = groups
            .iter()
            .find(|g| g.id == report.scope_id)
            .ok_or_else(|| Error::Argument(format!("report {} does not belong to this layer", report.scope_id)))?;
        if report.d != group.d || report.total != group.total {
            return Err(Error::Stale {
                scope: report.scope_id.to_string(),
                reported: report.d,
                actual: group.d,
            });
        }
        if report.prune_count > group.d {
            return Err(Error::Argument(format!(
                "report {} prunes {} of {} active",
                report.scope_id, report.prune_count, group.d
            )));
        }
        work.push((report, group));
    }
    work.sort_by_key(|(r, _)| r.scope_id);

    let mut events = Vec::new();
    for (report, group) in work {
        if report.skipped {
            continue;
        }
        let density_before = group_density(layer, group);
        let pruned = prune_by_magnitude(layer, group, report.prune_count)?;
        let want = (regrow_fraction * report.prune_count as f64).floor() as usize;
        let (regrown, shortfall) = regrow_by_momentum(layer, group, want, &pruned);
        events.push(RewireEvent {
            epoch,
            scope_id: report.scope_id,
            prune_count: pruned.len(),
            regrow_count: regrown.len(),
            regrow_shortfall: shortfall,
            pruned_indices: pruned,
            regrown_indices: regrown,
            density_before,
            density_after: group_density(layer, group),
        });
    }
    layer.enforce_mask();
    Ok(events)
}
