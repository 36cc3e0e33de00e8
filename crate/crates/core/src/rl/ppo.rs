//! The clipped-surrogate PPO update for the residual policy.
//!
//! One optimizer serves both networks: gradients of the combined loss
//! (negative clipped objective plus weighted value loss) are clipped by
//! global norm and applied with Adam. A non-finite gradient aborts the
//! whole update and restores the entry parameters, so NaN can never reach
//! the live policy.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::real::{lit, Real};
use crate::rl::gae::Transition;
use crate::rl::net::{gaussian_logprob, Actor, Critic, MlpGrad};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Serialize", deserialize = "T: Deserialize<'de> + crate::real::Real"))]
#[serde(default, deny_unknown_fields)]
pub struct PpoHyper<T> {
    pub lr: T,
    pub gamma: T,
    pub gae_lambda: T,
    pub update_epochs: usize,
    pub clip_eps: T,
    pub value_coef: T,
    pub max_grad_norm: T,
    pub minibatch_size: usize,
    /// Transitions collected per iteration before an update runs.
    pub rollout_horizon: usize,
}

impl<T: Real> Default for PpoHyper<T> {
    fn default() -> Self {
        PpoHyper {
            lr: lit(2e-4),
            gamma: lit(0.9),
            gae_lambda: lit(0.95),
            update_epochs: 10,
            clip_eps: lit(0.2),
            value_coef: lit(0.5),
            max_grad_norm: lit(0.5),
            minibatch_size: 64,
            rollout_horizon: 2048,
        }
    }
}

impl<T: Real> PpoHyper<T> {
    pub fn validation_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        if !(self.lr > T::zero()) {
            errs.push(format!("hyper.lr must be > 0, got {}", self.lr));
        }
        if !(self.gamma > T::zero() && self.gamma <= T::one()) {
            errs.push(format!("hyper.gamma must be in (0, 1], got {}", self.gamma));
        }
        if !(self.gae_lambda >= T::zero() && self.gae_lambda <= T::one()) {
            errs.push(format!(
                "hyper.gae_lambda must be in [0, 1], got {}",
                self.gae_lambda
            ));
        }
        if !(self.clip_eps > T::zero() && self.clip_eps < T::one()) {
            errs.push(format!(
                "hyper.clip_eps must be in (0, 1), got {}",
                self.clip_eps
            ));
        }
        if self.value_coef < T::zero() {
            errs.push(format!(
                "hyper.value_coef must be >= 0, got {}",
                self.value_coef
            ));
        }
        if !(self.max_grad_norm > T::zero()) {
            errs.push(format!(
                "hyper.max_grad_norm must be > 0, got {}",
                self.max_grad_norm
            ));
        }
        if self.update_epochs == 0 {
            errs.push("hyper.update_epochs must be >= 1".into());
        }
        if self.minibatch_size == 0 {
            errs.push("hyper.minibatch_size must be >= 1".into());
        }
        if self.rollout_horizon < self.minibatch_size {
            errs.push(format!(
                "hyper.rollout_horizon ({}) must be >= hyper.minibatch_size ({})",
                self.rollout_horizon, self.minibatch_size
            ));
        }
        errs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpoDiagnostics<T> {
    /// Mean clipped surrogate objective over all processed samples.
    pub policy_objective: T,
    /// Mean squared value error over all processed samples.
    pub value_loss: T,
    /// Fraction of samples whose probability ratio left the clip band.
    pub clip_fraction: T,
}

#[derive(Debug, Error, PartialEq)]
pub enum PpoError {
    #[error("update batch is empty")]
    EmptyBatch,
    #[error("batch, advantage and return lengths differ: {batch} / {adv} / {ret}")]
    LengthMismatch { batch: usize, adv: usize, ret: usize },
    #[error("non-finite gradient in epoch {epoch}, minibatch {minibatch}; parameters restored")]
    NonFiniteGradient { epoch: usize, minibatch: usize },
}

/// Per-sample clipped surrogate: `min(r*A, clip(r, 1-eps, 1+eps)*A)`.
pub fn clipped_objective<T: Real>(ratio: T, advantage: T, clip_eps: T) -> T {
    let clipped = ratio.max(T::one() - clip_eps).min(T::one() + clip_eps);
    (ratio * advantage).min(clipped * advantage)
}

/// Flat parameter vector in the optimizer layout:
/// actor net, actor log-std, critic net.
pub fn flatten_params<T: Real>(actor: &Actor<T>, critic: &Critic<T>) -> Vec<T> {
    let mut flat = Vec::with_capacity(actor.net.param_count() + 1 + critic.net.param_count());
    actor.net.flatten_into(&mut flat);
    flat.push(actor.log_std);
    critic.net.flatten_into(&mut flat);
    flat
}

/// Inverse of [`flatten_params`]. Does not clamp the log-std; callers that
/// mutate parameters through an optimizer re-apply the clamp themselves.
pub fn set_params<T: Real>(actor: &mut Actor<T>, critic: &mut Critic<T>, flat: &[T]) {
    let na = actor.net.param_count();
    actor.net.unflatten_from(&flat[..na]);
    actor.log_std = flat[na];
    critic.net.unflatten_from(&flat[na + 1..]);
}

/// Combined loss over `idx`: negative mean clipped objective plus
/// `value_coef` times the mean squared value error. This is exactly the
/// quantity whose gradient [`batch_gradients`] computes, kept separate so
/// tests can difference it numerically.
pub fn batch_loss<T: Real>(
    actor: &Actor<T>,
    critic: &Critic<T>,
    trans: &[Transition<T>],
    adv_norm: &[T],
    returns: &[T],
    idx: &[usize],
    h: &PpoHyper<T>,
) -> T {
    let m = lit::<T>(idx.len() as f64);
    let mut obj_sum = T::zero();
    let mut vloss_sum = T::zero();
    for &i in idx {
        let t = &trans[i];
        let (mean, std) = actor.forward(&t.obs);
        let logp = gaussian_logprob(t.action, mean, std);
        let ratio = (logp - t.log_prob).exp();
        obj_sum += clipped_objective(ratio, adv_norm[i], h.clip_eps);
        let diff = critic.value(&t.obs) - returns[i];
        vloss_sum += diff * diff;
    }
    -obj_sum / m + h.value_coef * vloss_sum / m
}

/// Analytic gradient of [`batch_loss`] in the [`flatten_params`] layout,
/// plus the per-minibatch diagnostics.
pub fn batch_gradients<T: Real>(
    actor: &Actor<T>,
    critic: &Critic<T>,
    trans: &[Transition<T>],
    adv_norm: &[T],
    returns: &[T],
    idx: &[usize],
    h: &PpoHyper<T>,
) -> (Vec<T>, PpoDiagnostics<T>) {
    let m = lit::<T>(idx.len() as f64);
    let mut ga = MlpGrad::zeros_like(&actor.net);
    let mut g_log_std = T::zero();
    let mut gc = MlpGrad::zeros_like(&critic.net);
    let mut obj_sum = T::zero();
    let mut vloss_sum = T::zero();
    let mut clipped_count = 0usize;

    for &i in idx {
        let t = &trans[i];
        let adv = adv_norm[i];

        // actor forward with intermediates
        let ha = actor.net.hidden(&t.obs);
        let raw = actor.net.output_from_hidden(&ha);
        let th = raw.tanh();
        let mean = actor.residual_limit * th;
        let std = actor.std();
        let z = (t.action - mean) / std;
        let logp = gaussian_logprob(t.action, mean, std);
        let ratio = (logp - t.log_prob).exp();

        let unclipped = ratio * adv;
        let clipped_ratio = ratio.max(T::one() - h.clip_eps).min(T::one() + h.clip_eps);
        let clipped = clipped_ratio * adv;
        obj_sum += unclipped.min(clipped);
        if (ratio - T::one()).abs() > h.clip_eps {
            clipped_count += 1;
        }

        // d(objective)/d(ratio): zero only when the clipped branch is
        // active and the ratio sits outside the band
        let dobj_dratio = if unclipped <= clipped || (ratio - T::one()).abs() <= h.clip_eps {
            adv
        } else {
            T::zero()
        };
        // loss = -objective/m + ...
        let dl_dlogp = -dobj_dratio * ratio / m;
        // d(logp)/d(mean) = z / std, d(mean)/d(raw) = limit * (1 - tanh^2)
        let dl_draw = dl_dlogp * (z / std) * actor.residual_limit * (T::one() - th * th);
        actor.net.backward(&t.obs, &ha, dl_draw, &mut ga);
        // d(logp)/d(log_std) = z^2 - 1
        g_log_std += dl_dlogp * (z * z - T::one());

        // critic
        let hc = critic.net.hidden(&t.obs);
        let v = critic.net.output_from_hidden(&hc);
        let diff = v - returns[i];
        vloss_sum += diff * diff;
        let dl_dv = h.value_coef * lit::<T>(2.0) * diff / m;
        critic.net.backward(&t.obs, &hc, dl_dv, &mut gc);
    }

    let mut flat = Vec::with_capacity(actor.net.param_count() + 1 + critic.net.param_count());
    ga.flatten_into(&mut flat);
    flat.push(g_log_std);
    gc.flatten_into(&mut flat);

    let diag = PpoDiagnostics {
        policy_objective: obj_sum / m,
        value_loss: vloss_sum / m,
        clip_fraction: lit::<T>(clipped_count as f64) / m,
    };
    (flat, diag)
}

/// Adam with the usual bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: u64,
    beta1: T,
    beta2: T,
    eps: T,
}

impl<T: Real> Adam<T> {
    pub fn new(dim: usize) -> Self {
        Adam {
            m: vec![T::zero(); dim],
            v: vec![T::zero(); dim],
            t: 0,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
        }
    }

    pub fn step(&mut self, params: &mut [T], grads: &[T], lr: T) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = self.beta1.powi(self.t as i32);
        let b2t = self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (T::one() - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (T::one() - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / (T::one() - b1t);
            let vhat = self.v[i] / (T::one() - b2t);
            params[i] -= lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}

/// Run the full PPO update over a collected batch.
///
/// `advantages` are raw GAE values; they are normalized to zero mean and
/// unit standard deviation here, before any gradient step.
pub fn ppo_update<T: Real>(
    batch: &[Transition<T>],
    advantages: &[T],
    returns: &[T],
    actor: &mut Actor<T>,
    critic: &mut Critic<T>,
    opt: &mut Adam<T>,
    h: &PpoHyper<T>,
    rng: &mut Rng,
) -> Result<PpoDiagnostics<T>, PpoError> {
    if batch.is_empty() {
        return Err(PpoError::EmptyBatch);
    }
    if batch.len() != advantages.len() || batch.len() != returns.len() {
        return Err(PpoError::LengthMismatch {
            batch: batch.len(),
            adv: advantages.len(),
            ret: returns.len(),
        });
    }

    let n = batch.len();
    let nt = lit::<T>(n as f64);
    let mean = advantages.iter().fold(T::zero(), |a, &x| a + x) / nt;
    let var = advantages
        .iter()
        .fold(T::zero(), |a, &x| a + (x - mean) * (x - mean))
        / nt;
    let denom = var.sqrt() + lit::<T>(1e-8);
    let adv_norm: Vec<T> = advantages.iter().map(|&a| (a - mean) / denom).collect();

    let entry = flatten_params(actor, critic);
    let mut params = entry.clone();
    let mut indices: Vec<usize> = (0..n).collect();

    let mut obj_acc = T::zero();
    let mut vloss_acc = T::zero();
    let mut clip_acc = T::zero();
    let mut minibatches = 0usize;

    for epoch in 0..h.update_epochs {
        rng.shuffle(&mut indices);
        for (mb, chunk) in indices.chunks(h.minibatch_size).enumerate() {
            let (mut grads, diag) =
                batch_gradients(actor, critic, batch, &adv_norm, returns, chunk, h);
            let norm_sq = grads.iter().fold(T::zero(), |a, &g| a + g * g);
            if !norm_sq.is_finite() {
                set_params(actor, critic, &entry);
                actor.clamp_log_std();
                return Err(PpoError::NonFiniteGradient {
                    epoch,
                    minibatch: mb,
                });
            }
            let norm = norm_sq.sqrt();
            if norm > h.max_grad_norm {
                let scale = h.max_grad_norm / norm;
                for g in &mut grads {
                    *g *= scale;
                }
            }
            opt.step(&mut params, &grads, h.lr);
            set_params(actor, critic, &params);
            actor.clamp_log_std();
            params[actor.net.param_count()] = actor.log_std;

            obj_acc += diag.policy_objective;
            vloss_acc += diag.value_loss;
            clip_acc += diag.clip_fraction;
            minibatches += 1;
        }
    }

    let mb = lit::<T>(minibatches as f64);
    Ok(PpoDiagnostics {
        policy_objective: obj_acc / mb,
        value_loss: vloss_acc / mb,
        clip_fraction: clip_acc / mb,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::net::Mlp;
    use crate::rl::obs::OBS_DIM;

    #[test]
    fn clip_arithmetic() {
        assert!((clipped_objective(1.5f64, 2.0, 0.2) - 2.4).abs() < 1e-15);
        assert!((clipped_objective(0.5f64, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
        // inside the band both branches agree
        assert!((clipped_objective(1.1f64, 3.0, 0.2) - 3.3).abs() < 1e-15);
    }

    #[test]
    fn clip_is_pessimistic() {
        let mut rng = Rng::new(11);
        for _ in 0..1000 {
            let ratio = rng.range_f64(0.0, 3.0);
            let adv = rng.range_f64(-4.0, 4.0);
            assert!(clipped_objective(ratio, adv, 0.2) <= ratio * adv + 1e-12);
        }
    }

    fn small_actor(rng: &mut Rng) -> Actor<f64> {
        Actor::new(Mlp::init(OBS_DIM, 6, 1.0, rng), -0.3, 3.0)
    }

    fn small_critic(rng: &mut Rng) -> Critic<f64> {
        Critic::new(Mlp::init(OBS_DIM, 6, 1.0, rng))
    }

    fn small_hyper() -> PpoHyper<f64> {
        PpoHyper {
            minibatch_size: 8,
            rollout_horizon: 8,
            ..PpoHyper::default()
        }
    }

    /// Random batch kept away from ReLU, min and clip kinks so central
    /// differences are valid.
    fn smooth_batch(
        actor: &Actor<f64>,
        critic: &Critic<f64>,
        h: &PpoHyper<f64>,
        rng: &mut Rng,
        n: usize,
    ) -> (Vec<Transition<f64>>, Vec<f64>, Vec<f64>) {
        let mut trans = Vec::new();
        let mut adv = Vec::new();
        let mut ret = Vec::new();
        'outer: while trans.len() < n {
            let mut obs = [0.0; OBS_DIM];
            for s in &mut obs {
                *s = rng.range_f64(-2.0, 2.0);
            }
            // keep hidden pre-activations off the ReLU kink
            for net in [&actor.net, &critic.net] {
                for j in 0..net.hidden_dim {
                    let mut pre = net.b1[j];
                    for i in 0..net.input_dim {
                        pre += net.w1[j * net.input_dim + i] * obs[i];
                    }
                    if pre.abs() < 1e-3 {
                        continue 'outer;
                    }
                }
            }
            let (mean, std) = actor.forward(&obs);
            let action = mean + std * rng.range_f64(-2.0, 2.0);
            let logp = gaussian_logprob(action, mean, std);
            // offset the stored log-prob so ratios spread around 1
            let old_logp = logp + rng.range_f64(-0.3, 0.3);
            let ratio = (logp - old_logp).exp();
            if (ratio - (1.0 - h.clip_eps)).abs() < 5e-3 || (ratio - (1.0 + h.clip_eps)).abs() < 5e-3
            {
                continue;
            }
            let a = rng.range_f64(-2.0, 2.0);
            if a.abs() < 0.05 {
                continue; // advantage near zero makes both branches degenerate
            }
            trans.push(Transition {
                obs,
                action,
                log_prob: old_logp,
                reward: 0.0,
                value: 0.0,
                done: true,
            });
            adv.push(a);
            ret.push(rng.range_f64(-2.0, 2.0));
        }
        (trans, adv, ret)
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let mut rng = Rng::new(0x66AD);
        let h = small_hyper();
        for case in 0..100 {
            let mut actor = small_actor(&mut rng);
            let mut critic = small_critic(&mut rng);
            let (trans, adv, ret) = smooth_batch(&actor, &critic, &h, &mut rng, 8);
            let idx: Vec<usize> = (0..trans.len()).collect();
            let (analytic, _) = batch_gradients(&actor, &critic, &trans, &adv, &ret, &idx, &h);

            let flat0 = flatten_params(&actor, &critic);
            let fd_h = 1e-5;
            let mut max_rel = 0.0f64;
            for p in 0..flat0.len() {
                let mut plus = flat0.clone();
                plus[p] += fd_h;
                set_params(&mut actor, &mut critic, &plus);
                let lp = batch_loss(&actor, &critic, &trans, &adv, &ret, &idx, &h);
                let mut minus = flat0.clone();
                minus[p] -= fd_h;
                set_params(&mut actor, &mut critic, &minus);
                let lm = batch_loss(&actor, &critic, &trans, &adv, &ret, &idx, &h);
                set_params(&mut actor, &mut critic, &flat0);
                let fd = (lp - lm) / (2.0 * fd_h);
                let denom = analytic[p].abs().max(fd.abs()).max(1e-3);
                max_rel = max_rel.max((analytic[p] - fd).abs() / denom);
            }
            assert!(max_rel < 1e-4, "case {case}: max rel err {max_rel}");
        }
    }

    #[test]
    fn update_is_deterministic() {
        let h = small_hyper();
        let run = || {
            let mut rng = Rng::new(99);
            let mut actor = small_actor(&mut rng);
            let mut critic = small_critic(&mut rng);
            let (trans, adv, ret) = smooth_batch(&actor, &critic, &h, &mut rng, 16);
            let mut opt = Adam::new(flatten_params(&actor, &critic).len());
            let mut upd_rng = Rng::new(7);
            for _ in 0..5 {
                ppo_update(
                    &trans, &adv, &ret, &mut actor, &mut critic, &mut opt, &h, &mut upd_rng,
                )
                .unwrap();
            }
            flatten_params(&actor, &critic)
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical seed and data must give identical params");
    }

    #[test]
    fn non_finite_gradient_aborts_and_restores() {
        let h = small_hyper();
        let mut rng = Rng::new(5);
        let mut actor = small_actor(&mut rng);
        let mut critic = small_critic(&mut rng);
        let (mut trans, adv, ret) = smooth_batch(&actor, &critic, &h, &mut rng, 8);
        trans[3].log_prob = f64::NEG_INFINITY; // ratio blows up to +inf
        let entry = flatten_params(&actor, &critic);
        let mut opt = Adam::new(entry.len());
        let mut upd_rng = Rng::new(1);
        let err = ppo_update(
            &trans, &adv, &ret, &mut actor, &mut critic, &mut opt, &h, &mut upd_rng,
        )
        .unwrap_err();
        assert!(matches!(err, PpoError::NonFiniteGradient { .. }));
        assert_eq!(flatten_params(&actor, &critic), entry);
        assert!(flatten_params(&actor, &critic).iter().all(|p| p.is_finite()));
    }

    #[test]
    fn policy_improvement_on_one_state_task() {
        for &c in &[-1.0f64, 0.0, 1.0] {
            let mut rng = Rng::new(0xF00D + c.to_bits());
            let mut actor = Actor::new(Mlp::init(OBS_DIM, 100, 0.01, &mut rng), 0.0, 3.0);
            let mut critic = Critic::new(Mlp::init(OBS_DIM, 100, 1.0, &mut rng));
            let mut opt = Adam::new(flatten_params(&actor, &critic).len());
            let h = PpoHyper {
                minibatch_size: 64,
                rollout_horizon: 64,
                ..PpoHyper::default()
            };
            let obs = [0.0f64; OBS_DIM];
            for _ in 0..200 {
                let mut trans = Vec::with_capacity(64);
                let mut adv = Vec::with_capacity(64);
                let mut ret = Vec::with_capacity(64);
                for _ in 0..64 {
                    let (action, logp) = actor.sample(&obs, &mut rng);
                    let reward = -(action - c) * (action - c);
                    let value = critic.value(&obs);
                    trans.push(Transition {
                        obs,
                        action,
                        log_prob: logp,
                        reward,
                        value,
                        done: true,
                    });
                    adv.push(reward - value);
                    ret.push(reward);
                }
                ppo_update(
                    &trans, &adv, &ret, &mut actor, &mut critic, &mut opt, &h, &mut rng,
                )
                .unwrap();
            }
            let mean = actor.mean(&obs);
            assert!(
                (mean - c).abs() < 0.1,
                "target {c}: mean stopped at {mean}"
            );
        }
    }

    #[test]
    fn hyper_defaults_validate() {
        assert!(PpoHyper::<f64>::default().validation_errors().is_empty());
        let bad = PpoHyper::<f64> {
            gamma: 1.5,
            clip_eps: 0.0,
            ..PpoHyper::default()
        };
        assert_eq!(bad.validation_errors().len(), 2);
    }
}
