//! Compact function approximator trained on the squared TD error.
//!
//! A small fully connected network (tanh hidden layers, linear 3-way output)
//! stands in for the value table: the loss on a replay batch is
//!
//! ```text
//! L = mean_t ( y_t − Q_θ(s_t, a_t) )²,   y_t = r_t + γ·max_a' Q_θ⁻(s'_t, a')
//! ```
//!
//! with `θ⁻` a periodically synchronized frozen copy of the online
//! parameters. The target `y_t` is treated as a constant in the gradient
//! (the usual semi-gradient), which is exactly what the analytic
//! backpropagation here computes — and what the finite-difference checker
//! verifies against, coordinate by coordinate.
//!
//! Hidden activations are tanh rather than ReLU on purpose: the gradient
//! check compares against central differences, and a kink crossing would
//! contaminate the comparison with spurious error.

use crate::learner::Transition;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One dense layer: `outputs × inputs` weights (row-major) plus biases.
#[derive(Debug, Clone, PartialEq)]
struct Layer {
    w: Vec<f64>,
    b: Vec<f64>,
    inputs: usize,
    outputs: usize,
}

/// Fully connected network with tanh hidden layers and a linear output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    widths: Vec<usize>,
    layers: Vec<Layer>,
}

/// Per-layer gradients with the same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrad {
    layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl MlpGrad {
    fn zeros_like(net: &Mlp) -> MlpGrad {
        MlpGrad {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    /// All gradient entries in parameter-vector order.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in &self.layers {
            flat.extend_from_slice(w);
            flat.extend_from_slice(b);
        }
        flat
    }
}

impl Mlp {
    /// Build a network with the given layer widths (`[input, hidden…,
    /// output]`) and small random weights.
    pub fn new(widths: &[usize], rng: &mut ChaCha8Rng) -> Mlp {
        assert!(widths.len() >= 2, "need at least input and output widths");
        let layers = widths
            .windows(2)
            .map(|pair| {
                let (inputs, outputs) = (pair[0], pair[1]);
                let scale = 1.0 / (inputs as f64).sqrt();
                Layer {
                    w: (0..inputs * outputs)
                        .map(|_| (rng.random::<f64>() * 2.0 - 1.0) * scale)
                        .collect(),
                    b: vec![0.0; outputs],
                    inputs,
                    outputs,
                }
            })
            .collect();
        Mlp { widths: widths.to_vec(), layers }
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters as one vector (layer weights then biases, in order).
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            flat.extend_from_slice(&l.w);
            flat.extend_from_slice(&l.b);
        }
        flat
    }

    /// Overwrite all parameters from a flat vector (inverse of
    /// [`Mlp::to_flat`]).
    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter vector length mismatch");
        let mut i = 0;
        for l in &mut self.layers {
            let (nw, nb) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[i..i + nw]);
            i += nw;
            l.b.copy_from_slice(&flat[i..i + nb]);
            i += nb;
        }
    }

    /// Network output for one input.
    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).pop().expect("at least the input activation exists")
    }

    /// Activations of every layer, input first, output last. Hidden layers
    /// apply tanh; the final layer is linear.
    fn forward_cached(&self, x: &[f64]) -> Vec<Vec<f64>> {
        assert_eq!(x.len(), self.widths[0], "input width mismatch");
        let mut activations = vec![x.to_vec()];
        for (li, layer) in self.layers.iter().enumerate() {
            let input = &activations[li];
            let mut out = vec![0.0; layer.outputs];
            for o in 0..layer.outputs {
                let row = &layer.w[o * layer.inputs..(o + 1) * layer.inputs];
                let mut z = layer.b[o];
                for (wi, xi) in row.iter().zip(input) {
                    z += wi * xi;
                }
                out[o] = if li + 1 < self.layers.len() { z.tanh() } else { z };
            }
            activations.push(out);
        }
        activations
    }

    /// One SGD step: `θ ← θ − rate · grad`.
    pub fn apply_gradient(&mut self, grad: &MlpGrad, rate: f64) {
        for (layer, (dw, db)) in self.layers.iter_mut().zip(&grad.layers) {
            for (w, d) in layer.w.iter_mut().zip(dw) {
                *w -= rate * d;
            }
            for (b, d) in layer.b.iter_mut().zip(db) {
                *b -= rate * d;
            }
        }
    }
}

/// The loss is finite only while the forward pass is; divergence surfaces
/// here instead of poisoning the parameters silently.
#[derive(Debug, thiserror::Error)]
#[error("TD loss became non-finite (diverging parameters or inputs)")]
pub struct NonFiniteLoss;

/// Squared TD error of a batch and its semi-gradient with respect to the
/// online parameters. `target` supplies the bootstrap values and receives no
/// gradient.
pub fn td_loss(
    online: &Mlp,
    target: &Mlp,
    batch: &[Transition<Vec<f64>>],
    gamma: f64,
) -> Result<(f64, MlpGrad), NonFiniteLoss> {
    assert!(!batch.is_empty(), "td_loss needs a nonempty batch");
    let n = batch.len() as f64;
    let mut loss = 0.0;
    let mut grad = MlpGrad::zeros_like(online);

    for t in batch {
        let next_best =
            target.forward(&t.obs_after).into_iter().fold(f64::NEG_INFINITY, f64::max);
        let y = t.reward + gamma * next_best;
        let activations = online.forward_cached(&t.obs_before);
        let q = activations.last().expect("output layer")[t.action.index()];
        let err = q - y;
        loss += err * err / n;

        // Backpropagate 2·err/n through the acted output coordinate only.
        let mut delta = vec![0.0; *online.widths.last().expect("output width")];
        delta[t.action.index()] = 2.0 * err / n;
        for li in (0..online.layers.len()).rev() {
            let layer = &online.layers[li];
            let input = &activations[li];
            let (dw, db) = &mut grad.layers[li];
            for o in 0..layer.outputs {
                db[o] += delta[o];
                let row = &mut dw[o * layer.inputs..(o + 1) * layer.inputs];
                for (slot, xi) in row.iter_mut().zip(input) {
                    *slot += delta[o] * xi;
                }
            }
            if li > 0 {
                // Chain through the tanh of the previous activation.
                let mut prev = vec![0.0; layer.inputs];
                for (i, slot) in prev.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for o in 0..layer.outputs {
                        acc += layer.w[o * layer.inputs + i] * delta[o];
                    }
                    *slot = acc * (1.0 - input[i] * input[i]);
                }
                delta = prev;
            }
        }
    }

    if !loss.is_finite() {
        return Err(NonFiniteLoss);
    }
    Ok((loss, grad))
}

/// Maximum relative error between the analytic gradient and a central
/// finite-difference estimate over every parameter coordinate.
pub fn finite_difference_check(
    online: &Mlp,
    target: &Mlp,
    batch: &[Transition<Vec<f64>>],
    gamma: f64,
) -> f64 {
    let (_, grad) = td_loss(online, target, batch, gamma).expect("finite loss");
    let analytic = grad.to_flat();
    let theta = online.to_flat();
    let mut probe = online.clone();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut plus = theta.clone();
        plus[i] += eps;
        probe.set_flat(&plus);
        let up = td_loss(&probe, target, batch, gamma).expect("finite loss").0;
        let mut minus = theta.clone();
        minus[i] -= eps;
        probe.set_flat(&minus);
        let down = td_loss(&probe, target, batch, gamma).expect("finite loss").0;
        let numeric = (up - down) / (2.0 * eps);
        let denom = analytic[i].abs().max(numeric.abs()).max(1e-6);
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    worst
}

/// Fixed-capacity ring of recent transitions with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    buf: Vec<Transition<Vec<f64>>>,
    capacity: usize,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> ReplayBuffer {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer { buf: Vec::with_capacity(capacity.min(1 << 20)), capacity, next: 0 }
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    /// Append a transition, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition<Vec<f64>>) {
        if self.buf.len() < self.capacity {
            self.buf.push(t);
        } else {
            self.buf[self.next] = t;
            self.next = (self.next + 1) % self.capacity;
        }
    }

    /// Uniform sample of `count` stored transitions (with replacement).
    pub fn sample(&self, count: usize, rng: &mut ChaCha8Rng) -> Vec<Transition<Vec<f64>>> {
        assert!(!self.buf.is_empty(), "cannot sample an empty replay buffer");
        (0..count).map(|_| self.buf[rng.random_range(0..self.buf.len())].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::AgentAction;
    use rand_chacha::rand_core::SeedableRng;

    fn transition(x: Vec<f64>, action: AgentAction, reward: f64, x2: Vec<f64>) -> Transition<Vec<f64>> {
        Transition { obs_before: x, action, reward, obs_after: x2, step_index: 0 }
    }

    fn random_batch(
        rng: &mut ChaCha8Rng,
        input: usize,
        size: usize,
    ) -> Vec<Transition<Vec<f64>>> {
        (0..size)
            .map(|_| {
                let x: Vec<f64> = (0..input).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let x2: Vec<f64> = (0..input).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
                let action = AgentAction::from_index(rng.random_range(0..3));
                let reward = f64::from(rng.random::<bool>());
                transition(x, action, reward, x2)
            })
            .collect()
    }

    #[test]
    fn perfect_fit_has_zero_loss_and_zero_gradient() {
        // All-zero parameters output 0 everywhere; with zero rewards and any
        // gamma the target is also 0, so the fit is exact.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[2, 4, 3], &mut rng);
        net.set_flat(&vec![0.0; net.param_count()]);
        let target = net.clone();
        let batch = vec![
            transition(vec![0.3, -0.7], AgentAction::Up, 0.0, vec![0.1, 0.2]),
            transition(vec![-0.5, 0.4], AgentAction::Stay, 0.0, vec![0.9, -0.3]),
        ];
        let (loss, grad) = td_loss(&net, &target, &batch, 0.9).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.to_flat().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn scalar_linear_net_matches_the_closed_form_gradient() {
        // One input, one linear output: Q = w·x + b, so
        // dL/dw = 2·(Q − y)·x and dL/db = 2·(Q − y).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = Mlp::new(&[1, 1], &mut rng);
        net.set_flat(&[0.7, 0.2]); // w = 0.7, b = 0.2
        let mut target = net.clone();
        target.set_flat(&[0.3, 0.0]);
        let x = 1.4;
        let x2 = -0.6;
        let reward = 1.0;
        let gamma = 0.9;
        let batch = vec![transition(vec![x], AgentAction::Up, reward, vec![x2])];
        let (loss, grad) = td_loss(&net, &target, &batch, gamma).unwrap();
        let q = 0.7 * x + 0.2;
        let y = reward + gamma * (0.3 * x2);
        assert!((loss - (q - y) * (q - y)).abs() < 1e-12);
        let flat = grad.to_flat();
        assert!((flat[0] - 2.0 * (q - y) * x).abs() < 1e-12);
        assert!((flat[1] - 2.0 * (q - y)).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let hidden = 3 + (trial % 4) as usize;
            let net = Mlp::new(&[4, hidden, 3], &mut rng);
            let target = Mlp::new(&[4, hidden, 3], &mut rng);
            let batch = random_batch(&mut rng, 4, 5);
            let worst = finite_difference_check(&net, &target, &batch, 0.95);
            assert!(worst <= 1e-4, "trial {trial}: relative error {worst}");
        }
    }

    #[test]
    fn gradient_step_reduces_the_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut net = Mlp::new(&[3, 8, 3], &mut rng);
        let target = net.clone();
        let batch = random_batch(&mut rng, 3, 16);
        let (before, grad) = td_loss(&net, &target, &batch, 0.9).unwrap();
        net.apply_gradient(&grad, 0.05);
        let (after, _) = td_loss(&net, &target, &batch, 0.9).unwrap();
        assert!(after < before, "loss went {before} → {after}");
    }

    #[test]
    fn parameter_vector_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut net = Mlp::new(&[5, 7, 3], &mut rng);
        let flat = net.to_flat();
        assert_eq!(flat.len(), net.param_count());
        let mut other = Mlp::new(&[5, 7, 3], &mut rng);
        other.set_flat(&flat);
        assert_eq!(other.to_flat(), flat);
        net.set_flat(&flat);
        assert_eq!(net.to_flat(), flat);
    }

    #[test]
    fn replay_ring_overwrites_oldest_entries() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut buf = ReplayBuffer::new(3);
        for i in 0..5 {
            buf.push(transition(vec![i as f64], AgentAction::Up, 0.0, vec![0.0]));
        }
        assert_eq!(buf.len(), 3);
        let seen: std::collections::BTreeSet<i64> = buf
            .sample(64, &mut rng)
            .iter()
            .map(|t| t.obs_before[0] as i64)
            .collect();
        // Entries 0 and 1 were overwritten by 3 and 4.
        assert!(seen.iter().all(|&v| (2..=4).contains(&v)), "{seen:?}");
    }
}
