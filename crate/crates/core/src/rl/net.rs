//! Scalar-output multilayer perceptrons with hand-written backpropagation:
//! one hidden ReLU layer, a tanh-squashed actor head with a learnable
//! log-std, and an unsquashed critic head.

use crate::real::{lit, Real};
use crate::rng::Rng;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 1.0;

const LN_2PI: f64 = 1.8378770664093453;

/// input -> hidden (ReLU) -> scalar. Weights are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> Mlp<T> {
    /// Uniform init scaled by 1/sqrt(fan_in); the output layer is further
    /// scaled by `output_scale` (small for the actor so the initial residual
    /// is near zero).
    pub fn init(input_dim: usize, hidden_dim: usize, output_scale: f64, rng: &mut Rng) -> Self {
        let s1 = 1.0 / (input_dim as f64).sqrt();
        let s2 = output_scale / (hidden_dim as f64).sqrt();
        let w1 = (0..input_dim * hidden_dim)
            .map(|_| lit::<T>(rng.range_f64(-s1, s1)))
            .collect();
        let w2 = (0..hidden_dim)
            .map(|_| lit::<T>(rng.range_f64(-s2, s2)))
            .collect();
        Mlp {
            input_dim,
            hidden_dim,
            w1,
            b1: vec![T::zero(); hidden_dim],
            w2,
            b2: T::zero(),
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        Mlp {
            input_dim,
            hidden_dim,
            w1: vec![T::zero(); input_dim * hidden_dim],
            b1: vec![T::zero(); hidden_dim],
            w2: vec![T::zero(); hidden_dim],
            b2: T::zero(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len() + 1
    }

    /// Hidden activations (post-ReLU).
    pub fn hidden(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.input_dim);
        let mut h = vec![T::zero(); self.hidden_dim];
        for j in 0..self.hidden_dim {
            let row = &self.w1[j * self.input_dim..(j + 1) * self.input_dim];
            let mut acc = self.b1[j];
            for (w, xi) in row.iter().zip(x) {
                acc += *w * *xi;
            }
            h[j] = acc.max(T::zero());
        }
        h
    }

    pub fn output_from_hidden(&self, h: &[T]) -> T {
        let mut acc = self.b2;
        for (w, hj) in self.w2.iter().zip(h) {
            acc += *w * *hj;
        }
        acc
    }

    pub fn forward(&self, x: &[T]) -> T {
        self.output_from_hidden(&self.hidden(x))
    }

    /// Accumulate gradients of a scalar loss into `grad`, given the upstream
    /// derivative `dout` of the loss with respect to this net's output.
    pub fn backward(&self, x: &[T], h: &[T], dout: T, grad: &mut MlpGrad<T>) {
        grad.b2 += dout;
        for j in 0..self.hidden_dim {
            grad.w2[j] += dout * h[j];
            if h[j] > T::zero() {
                let dpre = dout * self.w2[j];
                grad.b1[j] += dpre;
                let row = &mut grad.w1[j * self.input_dim..(j + 1) * self.input_dim];
                for (g, xi) in row.iter_mut().zip(x) {
                    *g += dpre * *xi;
                }
            }
        }
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
    }

    /// Inverse of `flatten_into`; consumes `self.param_count()` entries.
    pub fn unflatten_from(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.param_count());
        let (w1, rest) = flat.split_at(self.w1.len());
        let (b1, rest) = rest.split_at(self.b1.len());
        let (w2, b2) = rest.split_at(self.w2.len());
        self.w1.copy_from_slice(w1);
        self.b1.copy_from_slice(b1);
        self.w2.copy_from_slice(w2);
        self.b2 = b2[0];
    }
}

/// Gradient buffer mirroring [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpGrad<T> {
    pub w1: Vec<T>,
    pub b1: Vec<T>,
    pub w2: Vec<T>,
    pub b2: T,
}

impl<T: Real> MlpGrad<T> {
    pub fn zeros_like(net: &Mlp<T>) -> Self {
        MlpGrad {
            w1: vec![T::zero(); net.w1.len()],
            b1: vec![T::zero(); net.b1.len()],
            w2: vec![T::zero(); net.w2.len()],
            b2: T::zero(),
        }
    }

    pub fn scale(&mut self, c: T) {
        for g in self
            .w1
            .iter_mut()
            .chain(self.b1.iter_mut())
            .chain(self.w2.iter_mut())
        {
            *g *= c;
        }
        self.b2 *= c;
    }

    pub fn flatten_into(&self, out: &mut Vec<T>) {
        out.extend_from_slice(&self.w1);
        out.extend_from_slice(&self.b1);
        out.extend_from_slice(&self.w2);
        out.push(self.b2);
    }
}

/// Stochastic policy head: tanh-squashed mean scaled to the residual band,
/// with a state-independent learnable log standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Actor<T> {
    pub net: Mlp<T>,
    pub log_std: T,
    /// Half-width of the residual action band (m/s^2).
    pub residual_limit: T,
}

impl<T: Real> Actor<T> {
    pub fn new(net: Mlp<T>, log_std: T, residual_limit: T) -> Self {
        Actor {
            net,
            log_std: clamp_log_std(log_std),
            residual_limit,
        }
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std = clamp_log_std(self.log_std);
    }

    /// Mean of the action distribution for `obs`, always inside the band.
    pub fn mean(&self, obs: &[T]) -> T {
        self.residual_limit * self.net.forward(obs).tanh()
    }

    pub fn std(&self) -> T {
        self.log_std.exp()
    }

    /// (mean, std) of the Gaussian action distribution.
    pub fn forward(&self, obs: &[T]) -> (T, T) {
        (self.mean(obs), self.std())
    }

    /// Sample an action and its log-density.
    pub fn sample(&self, obs: &[T], rng: &mut Rng) -> (T, T) {
        let (mean, std) = self.forward(obs);
        let action = mean + std * lit::<T>(rng.normal());
        (action, gaussian_logprob(action, mean, std))
    }
}

fn clamp_log_std<T: Real>(x: T) -> T {
    x.max(lit(LOG_STD_MIN)).min(lit(LOG_STD_MAX))
}

/// State-value head.
#[derive(Debug, Clone, PartialEq)]
pub struct Critic<T> {
    pub net: Mlp<T>,
}

impl<T: Real> Critic<T> {
    pub fn new(net: Mlp<T>) -> Self {
        Critic { net }
    }

    pub fn value(&self, obs: &[T]) -> T {
        self.net.forward(obs)
    }
}

/// Log-density of `action` under a Gaussian with the given mean and std.
pub fn gaussian_logprob<T: Real>(action: T, mean: T, std: T) -> T {
    debug_assert!(std > T::zero());
    let z = (action - mean) / std;
    -lit::<T>(0.5) * lit::<T>(LN_2PI) - std.ln() - lit::<T>(0.5) * z * z
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_net() -> Mlp<f64> {
        Mlp {
            input_dim: 2,
            hidden_dim: 2,
            w1: vec![0.5, -0.25, 0.1, 0.3],
            b1: vec![0.1, -0.05],
            w2: vec![0.4, -0.6],
            b2: 0.2,
        }
    }

    #[test]
    fn zero_network_gives_zero_mean_unit_std() {
        let actor = Actor::new(Mlp::<f64>::zeros(15, 100), 0.0, 3.0);
        let obs = vec![0.7; 15];
        let (mean, std) = actor.forward(&obs);
        assert_eq!(mean, 0.0);
        assert_eq!(std, 1.0);
        assert_eq!(Critic::new(Mlp::zeros(15, 100)).value(&obs), 0.0);
    }

    #[test]
    fn log_std_clamp_bound() {
        let actor = Actor::new(Mlp::<f64>::zeros(15, 100), -9.0, 3.0);
        assert!((actor.std() - 0.006737946999085467).abs() < 1e-15);
        let actor = Actor::new(Mlp::<f64>::zeros(15, 100), 4.0, 3.0);
        assert_eq!(actor.log_std, LOG_STD_MAX);
    }

    #[test]
    fn toy_forward_golden() {
        // hand-computed 2-unit network: hidden pre = [0.1, 0.65], out = -0.15
        let net = toy_net();
        let out = net.forward(&[1.0, 2.0]);
        assert!((out - (-0.15)).abs() < 1e-12);
        let actor = Actor::new(net.clone(), 0.0, 3.0);
        assert!((actor.mean(&[1.0, 2.0]) - (-0.44665510086995375)).abs() < 1e-12);
        assert!((Critic::new(net).value(&[1.0, 2.0]) - (-0.15)).abs() < 1e-12);
    }

    #[test]
    fn relu_gates_hidden_units() {
        let mut net = toy_net();
        net.b1 = vec![-1.0, -0.05]; // first unit now inactive for this input
        let h = net.hidden(&[1.0, 2.0]);
        assert_eq!(h[0], 0.0);
        assert!(h[1] > 0.0);
    }

    #[test]
    fn gaussian_logprob_examples() {
        assert!((gaussian_logprob(0.0f64, 0.0, 1.0) - (-0.9189385332046727)).abs() < 1e-15);
        assert!((gaussian_logprob(1.0f64, 0.0, 1.0) - (-1.4189385332046727)).abs() < 1e-15);
        // frozen from a separate closed-form density evaluation
        assert!((gaussian_logprob(2.0f64, 1.0, 0.5) - (-2.2257913526447273)).abs() < 1e-13);
    }

    #[test]
    fn gaussian_logprob_matches_density_oracle() {
        let mut rng = Rng::new(77);
        for _ in 0..100 {
            let mean = rng.range_f64(-5.0, 5.0);
            let std = rng.range_f64(0.05, 3.0);
            let action = mean + std * rng.range_f64(-6.0, 6.0);
            let pdf = (-0.5 * ((action - mean) / std).powi(2)).exp()
                / (std * (2.0 * std::f64::consts::PI).sqrt());
            let expected = pdf.ln();
            assert!((gaussian_logprob(action, mean, std) - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn actor_mean_stays_in_band() {
        let mut rng = Rng::new(123);
        for _ in 0..200 {
            let mut actor = Actor::new(Mlp::init(15, 100, 1.0, &mut rng), 0.0, 3.0);
            // exaggerate weights to push tanh into saturation
            for w in actor.net.w2.iter_mut() {
                *w *= 50.0;
            }
            let obs: Vec<f64> = (0..15).map(|_| rng.range_f64(-100.0, 100.0)).collect();
            let m = actor.mean(&obs);
            assert!(m.abs() <= 3.0, "mean {m} outside band");
        }
    }

    #[test]
    fn flatten_roundtrip() {
        let mut rng = Rng::new(5);
        let net = Mlp::<f64>::init(7, 11, 1.0, &mut rng);
        let mut flat = Vec::new();
        net.flatten_into(&mut flat);
        assert_eq!(flat.len(), net.param_count());
        let mut copy = Mlp::zeros(7, 11);
        copy.unflatten_from(&flat);
        assert_eq!(copy, net);
    }
}
