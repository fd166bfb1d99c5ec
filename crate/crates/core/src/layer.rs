//! One sparse connection layer: weights, mask, and momentum.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::Mask;

/// Weights `[n_post, n_pre]`, their mask, and a dense momentum buffer.
///
/// Inactive weights are held at exactly zero. The momentum buffer covers
/// inactive entries too; regrowth ranks candidates by it.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseLayer {
    pub(crate) weights: Tensor,
    pub(crate) mask: Mask,
    pub(crate) momentum: Tensor,
}

impl SparseLayer {
    /// Builds a layer and zeroes weights outside the mask.
    pub fn new(weights: Tensor, mask: Mask) -> Result<Self> {
        let (r, c) = weights.dims2()?;
        if r != mask.n_post() || c != mask.n_pre() {
            return Err(Error::dim(
                "layer",
                format!("weights {}x{} vs mask {}x{}", r, c, mask.n_post(), mask.n_pre()),
            ));
        }
        let momentum = Tensor::zeros(&[r, c]);
        let mut layer = Self {
            weights,
            mask,
            momentum,
        };
        layer.enforce_mask();
        Ok(layer)
    }

    pub fn with_momentum(weights: Tensor, mask: Mask, momentum: Tensor) -> Result<Self> {
        if momentum.shape() != weights.shape() {
            return Err(Error::dim(
                "layer",
                format!("momentum {:?} vs weights {:?}", momentum.shape(), weights.shape()),
            ));
        }
        let mut layer = Self::new(weights, mask)?;
        layer.momentum = momentum;
        Ok(layer)
    }

    /// Normal weights with standard deviation `sqrt(gain / (density·n_pre))`,
    /// i.e. scaled to the expected active fan-in.
    pub fn init_normal(mask: Mask, gain: f64, rng: &mut Rng) -> Result<Self> {
        let (n_post, n_pre) = (mask.n_post(), mask.n_pre());
        let fan_in = (crate::topology::density(&mask) * n_pre as f64).max(1.0);
        let std = (gain / fan_in).sqrt();
        let data = rng.normal_vec(n_post * n_pre).into_iter().map(|z| z * std).collect();
        Self::new(Tensor::from_vec(&[n_post, n_pre], data)?, mask)
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn momentum(&self) -> &Tensor {
        &self.momentum
    }

    pub fn n_post(&self) -> usize {
        self.mask.n_post()
    }

    pub fn n_pre(&self) -> usize {
        self.mask.n_pre()
    }

    pub fn active_count(&self) -> usize {
        self.mask.nnz()
    }

    /// Direct weight access for tests and tooling. Callers are expected to
    /// restore consistency with [`SparseLayer::enforce_mask`].
    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    pub fn momentum_mut(&mut self) -> &mut Tensor {
        &mut self.momentum
    }

    /// Force every inactive weight to zero. Idempotent.
    pub fn enforce_mask(&mut self) {
        for (w, on) in self.weights.data_mut().iter_mut().zip(self.mask.bits()) {
            if !on {
                *w = 0.0;
            }
        }
    }

    /// Sum of |w| over inactive entries; zero for a consistent layer.
    pub fn inactive_weight_mass(&self) -> f64 {
        self.weights
            .data()
            .iter()
            .zip(self.mask.bits())
            .filter(|(_, on)| !**on)
            .map(|(w, _)| w.abs())
            .sum()
    }

    /// `M ⊙ W`, transposed to `[n_pre, n_post]` for the forward product.
    pub(crate) fn masked_weights_t(&self) -> Vec<f64> {
        let (n_post, n_pre) = (self.n_post(), self.n_pre());
        let mut out = vec![0.0; n_post * n_pre];
        let w = self.weights.data();
        let bits = self.mask.bits();
        for i in 0..n_post {
            for j in 0..n_pre {
                let f = i * n_pre + j;
                if bits[f] {
                    out[j * n_post + i] = w[f];
                }
            }
        }
        out
    }

    /// `M ⊙ W` in its natural `[n_post, n_pre]` layout.
    pub(crate) fn masked_weights(&self) -> Vec<f64> {
        self.weights
            .data()
            .iter()
            .zip(self.mask.bits())
            .map(|(w, on)| if *on { *w } else { 0.0 })
            .collect()
    }
}
