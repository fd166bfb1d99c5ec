//! Binary connection masks and Erdős–Rényi initialization.

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Binary connectivity of one layer, `[n_post, n_pre]` row-major.
/// Row `i` is the fan-in of post-synaptic neuron `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    n_post: usize,
    n_pre: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn ones(n_post: usize, n_pre: usize) -> Self {
        Self {
            n_post,
            n_pre,
            bits: vec![true; n_post * n_pre],
        }
    }

    pub fn zeros(n_post: usize, n_pre: usize) -> Self {
        Self {
            n_post,
            n_pre,
            bits: vec![false; n_post * n_pre],
        }
    }

    pub fn from_bits(n_post: usize, n_pre: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != n_post * n_pre {
            return Err(Error::dim(
                "mask",
                format!("{}x{} mask needs {} bits, got {}", n_post, n_pre, n_post * n_pre, bits.len()),
            ));
        }
        Ok(Self { n_post, n_pre, bits })
    }

    pub fn n_post(&self) -> usize {
        self.n_post
    }

    pub fn n_pre(&self) -> usize {
        self.n_pre
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, flat: usize) -> bool {
        self.bits[flat]
    }

    pub fn set(&mut self, flat: usize, on: bool) {
        self.bits[flat] = on;
    }

    pub fn nnz(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Active fan-out of each pre-synaptic neuron (column counts).
    pub fn fan_out(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_pre];
        for row in self.bits.chunks(self.n_pre.max(1)) {
            for (c, b) in counts.iter_mut().zip(row) {
                *c += *b as usize;
            }
        }
        counts
    }
}

/// Fraction of active connections; 0 for an empty mask.
pub fn density(mask: &Mask) -> f64 {
    if mask.is_empty() {
        0.0
    } else {
        mask.nnz() as f64 / mask.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Connectivity {
    /// Scaling factor ε of the ER edge probability.
    Epsilon(f64),
    /// Target density ρ, converted to ε = ρ·n_post·n_pre / (n_post + n_pre).
    Density(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErSpec {
    pub n_post: usize,
    pub n_pre: usize,
    pub connectivity: Connectivity,
}

impl ErSpec {
    pub fn with_density(n_post: usize, n_pre: usize, density: f64) -> Self {
        Self {
            n_post,
            n_pre,
            connectivity: Connectivity::Density(density),
        }
    }

    pub fn with_epsilon(n_post: usize, n_pre: usize, epsilon: f64) -> Self {
        Self {
            n_post,
            n_pre,
            connectivity: Connectivity::Epsilon(epsilon),
        }
    }

    pub fn epsilon(&self) -> f64 {
        match self.connectivity {
            Connectivity::Epsilon(e) => e,
            Connectivity::Density(rho) => {
                let (a, b) = (self.n_post as f64, self.n_pre as f64);
                rho * a * b / (a + b)
            }
        }
    }
}

/// Edge probability `min(1, ε(n_post + n_pre) / (n_post·n_pre))`.
pub fn er_probability(spec: &ErSpec) -> Result<f64> {
    if spec.n_post == 0 || spec.n_pre == 0 {
        return Err(Error::Argument(format!(
            "zero-sized layer {}x{}",
            spec.n_post, spec.n_pre
        )));
    }
    match spec.connectivity {
        Connectivity::Epsilon(e) if !(e >= 0.0 && e.is_finite()) => {
            return Err(Error::Argument(format!("epsilon must be finite and >= 0, got {}", e)))
        }
        Connectivity::Density(rho) if !(rho > 0.0 && rho <= 1.0) => {
            return Err(Error::Argument(format!("target density must be in (0, 1], got {}", rho)))
        }
        _ => {}
    }
    let (a, b) = (spec.n_post as f64, spec.n_pre as f64);
    Ok((spec.epsilon() * (a + b) / (a * b)).min(1.0))
}

/// Each connection independently active with the ER probability.
pub fn er_init(spec: &ErSpec, rng: &mut Rng) -> Result<Mask> {
    let p = er_probability(spec)?;
    let bits = (0..spec.n_post * spec.n_pre).map(|_| rng.bernoulli(p)).collect();
    Mask::from_bits(spec.n_post, spec.n_pre, bits)
}

/// Fixed-edge-count ER graph: exactly `round(p·N)` connections, chosen
/// uniformly. Every connection still has marginal probability `p`, but the
/// realized density never overshoots the target.
pub fn er_init_exact(spec: &ErSpec, rng: &mut Rng) -> Result<Mask> {
    let p = er_probability(spec)?;
    let n = spec.n_post * spec.n_pre;
    let edges = ((p * n as f64).round() as usize).min(n);
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let mut mask = Mask::zeros(spec.n_post, spec.n_pre);
    for &i in &order[..edges] {
        mask.set(i, true);
    }
    Ok(mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_hand_values() {
        let p = er_probability(&ErSpec::with_epsilon(100, 100, 25.0)).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert_eq!(er_probability(&ErSpec::with_epsilon(100, 100, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn density_inverts_to_epsilon() {
        let spec = ErSpec::with_density(784, 300, 0.5);
        let eps = spec.epsilon();
        assert!((eps - 0.5 * 784.0 * 300.0 / 1084.0).abs() < 1e-9);
        assert!((eps - 108.487).abs() < 1e-3);
        let p = er_probability(&ErSpec::with_epsilon(784, 300, eps)).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn probability_is_clamped_and_symmetric() {
        assert_eq!(er_probability(&ErSpec::with_epsilon(4, 4, 1e6)).unwrap(), 1.0);
        let a = er_probability(&ErSpec::with_epsilon(30, 70, 9.0)).unwrap();
        let b = er_probability(&ErSpec::with_epsilon(70, 30, 9.0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_sized_layer_rejected() {
        assert!(matches!(
            er_probability(&ErSpec::with_epsilon(0, 3, 1.0)),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn saturated_and_empty_masks() {
        let mut rng = Rng::new(1);
        let full = er_init(&ErSpec::with_epsilon(5, 6, 1e9), &mut rng).unwrap();
        assert_eq!(full, Mask::ones(5, 6));
        let empty = er_init(&ErSpec::with_epsilon(5, 6, 0.0), &mut rng).unwrap();
        assert_eq!(empty, Mask::zeros(5, 6));
    }

    #[test]
    fn bernoulli_density_over_seeds() {
        let spec = ErSpec::with_density(100, 100, 0.5);
        let densities: Vec<f64> = (0..20)
            .map(|s| density(&er_init(&spec, &mut Rng::new(s)).unwrap()))
            .collect();
        let mean = densities.iter().sum::<f64>() / 20.0;
        assert!((mean - 0.5).abs() < 0.02);
        // binomial sd of the 20-seed mean: sqrt(0.25 / (10_000 * 20))
        let sd = (0.25f64 / 200_000.0).sqrt();
        assert!((mean - 0.5).abs() < 2.0 * sd, "mean {} sd {}", mean, sd);
    }

    #[test]
    fn exact_init_hits_target_count() {
        let spec = ErSpec::with_density(784, 300, 0.5);
        let m = er_init_exact(&spec, &mut Rng::new(3)).unwrap();
        assert_eq!(m.nnz(), 117_600);
        assert_eq!(density(&m), 0.5);
        let again = er_init_exact(&spec, &mut Rng::new(3)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn density_counts() {
        assert_eq!(density(&Mask::ones(4, 4)), 1.0);
        assert_eq!(density(&Mask::zeros(4, 4)), 0.0);
        let bits = (0..16).map(|i| i % 2 == 0).collect();
        assert_eq!(density(&Mask::from_bits(4, 4, bits).unwrap()), 0.5);
    }

    #[test]
    fn fan_out_counts_columns() {
        let m = Mask::from_bits(3, 2, vec![true, true, true, false, true, false]).unwrap();
        assert_eq!(m.fan_out(), vec![3, 1]);
    }
}
