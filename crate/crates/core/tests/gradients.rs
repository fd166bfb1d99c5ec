use sparse_snn::neuron::{LifParams, SpikeMode};
use sparse_snn::topology::Mask;
use sparse_snn::train::{tet_loss, Network};
use sparse_snn::{Rng, SparseLayer, Tensor};

fn soft_network(sizes: &[usize], seed: u64) -> Network {
    let mut rng = Rng::new(seed);
    let layers = sizes
        .windows(2)
        .map(|w| SparseLayer::init_normal(Mask::ones(w[1], w[0]), 2.0, &mut rng).unwrap())
        .collect();
    let lif = LifParams {
        mode: SpikeMode::Soft,
        surrogate_width: 0.5,
        ..LifParams::default()
    };
    Network::new(layers, lif).unwrap()
}

fn loss(net: &Network, x: &Tensor, labels: &[usize]) -> f64 {
    tet_loss(&net.forward(x).unwrap().logits, labels).unwrap().0
}

/// Max relative error between backprop and central differences over
/// `samples` randomly chosen weights.
fn max_relative_error(net: &Network, x: &Tensor, labels: &[usize], samples: usize, rng: &mut Rng) -> f64 {
    let pass = net.forward(x).unwrap();
    let (_, g) = tet_loss(&pass.logits, labels).unwrap();
    let grads = net.backward(&pass, &g).unwrap();
    let h = 1e-5;
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let l = (rng.next_f64() * net.layers.len() as f64) as usize;
        let i = (rng.next_f64() * grads[l].len() as f64) as usize;
        let mut up = net.clone();
        up.layers[l].weights_mut().data_mut()[i] += h;
        let mut dn = net.clone();
        dn.layers[l].weights_mut().data_mut()[i] -= h;
        let numeric = (loss(&up, x, labels) - loss(&dn, x, labels)) / (2.0 * h);
        let analytic = grads[l].data()[i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}

#[test]
fn soft_bptt_matches_finite_differences() {
    let net = soft_network(&[6, 8, 3], 21);
    let mut rng = Rng::new(5);
    let x = Tensor::from_vec(&[3, 4, 6], rng.uniform(72).into_data()).unwrap();
    let err = max_relative_error(&net, &x, &[0, 2, 1, 2], 40, &mut rng);
    assert!(err < 1e-4, "max relative error {}", err);
}

#[test]
fn soft_bptt_through_two_hidden_layers() {
    let net = soft_network(&[5, 7, 6, 4], 3);
    let mut rng = Rng::new(8);
    let x = Tensor::from_vec(&[4, 3, 5], rng.uniform(60).into_data()).unwrap();
    let err = max_relative_error(&net, &x, &[3, 0, 1], 60, &mut rng);
    assert!(err < 1e-4, "max relative error {}", err);
}

#[test]
fn masked_entries_do_not_move_the_loss() {
    let mut rng = Rng::new(2);
    let mask = Mask::from_bits(3, 4, (0..12).map(|i| i % 3 != 0).collect()).unwrap();
    let layer = SparseLayer::init_normal(mask, 2.0, &mut rng).unwrap();
    let net = Network::new(vec![layer], LifParams::default()).unwrap();
    let x = Tensor::from_vec(&[2, 2, 4], rng.uniform(16).into_data()).unwrap();
    let base = loss(&net, &x, &[0, 1]);
    let mut bumped = net.clone();
    bumped.layers[0].weights_mut().data_mut()[0] = 5.0;
    bumped.layers[0].enforce_mask();
    assert_eq!(loss(&bumped, &x, &[0, 1]), base);
}
