//! Neural policies: masked softmax heads for discrete environments and
//! fixed-variance Gaussian heads for the point mass.

use crate::envs::{pointmass, Action, ActionSpace, Actor, EnvId};
use crate::error::{Error, Result};
use crate::numcore::{softmax_in_place, Activation, Mlp, Rng, Scratch};
use std::cell::RefCell;

/// Logit assigned to masked actions.
pub const MASKED_LOGIT: f64 = -1e9;

pub fn hidden_sizes(env: EnvId) -> &'static [usize] {
    match env {
        EnvId::CartPoleVar => &[64, 32],
        _ => &[32, 32],
    }
}

pub fn feature_dim(env: EnvId) -> usize {
    match env {
        EnvId::MultiKeyNav(_) => 7,
        EnvId::CartPoleVar => 6,
        EnvId::PointMass => 7,
    }
}

/// Policy input features for a raw environment state.
pub fn features_into(env: EnvId, state: &[f64], out: &mut Vec<f64>) {
    out.clear();
    match env {
        EnvId::MultiKeyNav(_) => out.extend_from_slice(state),
        EnvId::CartPoleVar => {
            out.extend_from_slice(&state[..4]);
            out.push(state[4] / 15.0);
            out.push(state[5]);
        }
        EnvId::PointMass => {
            out.extend_from_slice(&[
                state[0] / 4.0,
                state[1] / 4.0,
                state[2] / 4.0,
                state[3] / 4.0,
                state[4] / 4.0,
                state[5] / 8.0,
                state[6] / 4.0,
            ]);
        }
    }
}

pub fn features(env: EnvId, state: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(feature_dim(env));
    features_into(env, state, &mut v);
    v
}

fn output_dim(env: EnvId) -> usize {
    match env.action_space() {
        ActionSpace::Discrete(n) => n,
        ActionSpace::Box { dim, .. } => dim,
    }
}

thread_local! {
    static BUFFERS: RefCell<(Vec<f64>, Scratch, Vec<f64>)> = RefCell::default();
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    env: EnvId,
    net: Mlp,
    /// `true` marks a masked action (discrete environments only).
    mask: Vec<bool>,
    /// Fixed per-dimension log standard deviation (continuous only).
    log_std: Vec<f64>,
}

impl Policy {
    pub fn new(env: EnvId, masked: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![feature_dim(env)];
        sizes.extend_from_slice(hidden_sizes(env));
        sizes.push(output_dim(env));
        let net = Mlp::glorot(&sizes, Activation::Relu, Activation::Identity, rng);
        Self::from_net(env, net, masked)
    }

    pub fn from_net(env: EnvId, net: Mlp, masked: &[usize]) -> Result<Self> {
        if net.in_dim() != feature_dim(env) || net.out_dim() != output_dim(env) {
            return Err(Error::Shape(format!(
                "policy net {}->{} does not fit {}",
                net.in_dim(),
                net.out_dim(),
                env
            )));
        }
        let (mask, log_std) = match env.action_space() {
            ActionSpace::Discrete(n) => {
                let mut mask = vec![false; n];
                for &a in masked {
                    if a >= n {
                        return Err(Error::InvalidArgument(format!("masked action {a} out of range")));
                    }
                    mask[a] = true;
                }
                if mask.iter().all(|&m| m) {
                    return Err(Error::InvalidArgument("cannot mask every action".into()));
                }
                (mask, Vec::new())
            }
            ActionSpace::Box { dim, .. } => {
                if !masked.is_empty() {
                    return Err(Error::InvalidArgument("continuous actions cannot be masked".into()));
                }
                (Vec::new(), vec![0.0; dim])
            }
        };
        Ok(Self { env, net, mask, log_std })
    }

    pub fn env(&self) -> EnvId {
        self.env
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut Mlp {
        &mut self.net
    }

    pub fn masked_actions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }

    pub fn log_std(&self) -> &[f64] {
        &self.log_std
    }

    fn apply_mask(&self, logits: &mut [f64]) {
        for (l, &m) in logits.iter_mut().zip(&self.mask) {
            if m {
                *l = MASKED_LOGIT;
            }
        }
    }

    /// Action probabilities (discrete environments).
    pub fn probabilities(&self, state: &[f64]) -> Result<Vec<f64>> {
        let mut logits = self.net.forward(&features(self.env, state))?;
        self.apply_mask(&mut logits);
        softmax_in_place(&mut logits);
        Ok(logits)
    }

    /// Gaussian mean (continuous environments), before clipping.
    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&features(self.env, state))
    }

    /// `log π(action | state)` and its gradient w.r.t. the network output.
    fn log_prob_and_output_grad(&self, out: &[f64], action: Action) -> Result<(f64, Vec<f64>)> {
        match action {
            Action::Discrete(a) => {
                if a >= self.mask.len() || self.mask[a] {
                    return Err(Error::InvalidAction {
                        env: self.env.name().into(),
                        detail: format!("action {a} is masked or out of range"),
                    });
                }
                let mut p = out.to_vec();
                self.apply_mask(&mut p);
                softmax_in_place(&mut p);
                let lp = p[a].ln();
                let grad = p
                    .iter()
                    .enumerate()
                    .map(|(i, &pi)| {
                        if self.mask[i] {
                            0.0
                        } else {
                            f64::from(u8::from(i == a)) - pi
                        }
                    })
                    .collect();
                Ok((lp, grad))
            }
            Action::Continuous(f) => {
                let mut lp = 0.0;
                let mut grad = Vec::with_capacity(2);
                for d in 0..2 {
                    let var = (2.0 * self.log_std[d]).exp();
                    let diff = f[d] - out[d];
                    lp += -0.5 * diff * diff / var - self.log_std[d] - 0.5 * (2.0 * std::f64::consts::PI).ln();
                    grad.push(diff / var);
                }
                Ok((lp, grad))
            }
        }
    }

    pub fn log_prob(&self, state: &[f64], action: Action) -> Result<f64> {
        let out = self.net.forward(&features(self.env, state))?;
        self.log_prob_and_output_grad(&out, action).map(|(lp, _)| lp)
    }

    /// Adds `weight · ∇θ log π(action | state)` into `acc`; returns the log-prob.
    pub fn accumulate_log_prob_grad(&self, state: &[f64], action: Action, weight: f64, acc: &mut [f64]) -> Result<f64> {
        let trace = self.net.trace(&features(self.env, state))?;
        let (lp, mut g) = self.log_prob_and_output_grad(trace.output(), action)?;
        g.iter_mut().for_each(|v| *v *= weight);
        self.net.backward_trace(&trace, &g, acc)?;
        Ok(lp)
    }

    /// Instantiates a policy of the same architecture with other parameters.
    pub fn with_params(&self, params: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        p.net.set_params(params)?;
        Ok(p)
    }

    fn sample(&self, out: &mut [f64], rng: &mut Rng) -> Action {
        if self.log_std.is_empty() {
            self.apply_mask(out);
            softmax_in_place(out);
            Action::Discrete(rng.categorical(out))
        } else {
            let lim = pointmass::FORCE_LIMIT;
            let mut f = [0.0; 2];
            for d in 0..2 {
                let a = out[d] + self.log_std[d].exp() * rng.normal();
                f[d] = a.clamp(-lim, lim);
            }
            Action::Continuous(f)
        }
    }
}

impl Actor for Policy {
    fn act(&self, env: EnvId, state: &[f64], rng: &mut Rng) -> Result<Action> {
        if env != self.env {
            return Err(Error::EnvMismatch {
                expected: self.env.name().into(),
                got: env.name().into(),
            });
        }
        BUFFERS.with(|cell| {
            let (feat, scratch, out) = &mut *cell.borrow_mut();
            features_into(self.env, state, feat);
            let y = self.net.forward_with(feat, scratch)?;
            out.clear();
            out.extend_from_slice(y);
            Ok(self.sample(out, rng))
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{multikeynav, sample_task};

    #[test]
    fn masked_actions_get_no_mass() {
        let mut rng = Rng::new(1);
        let masked = [2, 3, 4, 5];
        let p = Policy::new(EnvId::MULTI_KEY_NAV, &masked, &mut rng).unwrap();
        for _ in 0..100 {
            let t = sample_task(EnvId::MULTI_KEY_NAV, &mut rng, None).unwrap();
            let probs = p.probabilities(&t.state0).unwrap();
            let leaked: f64 = masked.iter().map(|&a| probs[a]).sum();
            assert!(leaked <= 1e-9);
        }
    }

    #[test]
    fn masked_action_never_sampled() {
        let mut rng = Rng::new(2);
        let p = Policy::new(EnvId::MULTI_KEY_NAV, &[multikeynav::FINISH], &mut rng).unwrap();
        let s = [0.95, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        for _ in 0..100_000 {
            let a = p.act(EnvId::MULTI_KEY_NAV, &s, &mut rng).unwrap();
            assert_ne!(a, Action::Discrete(multikeynav::FINISH));
        }
    }

    #[test]
    fn rejects_full_mask_and_bad_shapes() {
        let mut rng = Rng::new(3);
        assert!(Policy::new(EnvId::CartPoleVar, &[0, 1], &mut rng).is_err());
        assert!(Policy::new(EnvId::PointMass, &[0], &mut rng).is_err());
        let net = Mlp::glorot(&[3, 2], Activation::Relu, Activation::Identity, &mut rng);
        assert!(Policy::from_net(EnvId::CartPoleVar, net, &[]).is_err());
    }

    #[test]
    fn continuous_actions_stay_in_box() {
        let mut rng = Rng::new(4);
        let mut p = Policy::new(EnvId::PointMass, &[], &mut rng).unwrap();
        let big: Vec<f64> = p.net().params().iter().map(|v| v * 50.0).collect();
        p.net_mut().set_params(&big).unwrap();
        for _ in 0..1000 {
            let t = sample_task(EnvId::PointMass, &mut rng, None).unwrap();
            match p.act(EnvId::PointMass, &t.state0, &mut rng).unwrap() {
                Action::Continuous(f) => assert!(f.iter().all(|v| v.abs() <= pointmass::FORCE_LIMIT)),
                _ => panic!("discrete action from Gaussian policy"),
            }
        }
    }

    fn check_log_prob_grad(policy: &mut Policy, state: &[f64], action: Action, rng: &mut Rng) {
        let mut g = vec![0.0; policy.net().num_params()];
        policy.accumulate_log_prob_grad(state, action, 1.0, &mut g).unwrap();
        let base = policy.net().params();
        let h = 1e-5;
        for _ in 0..100 {
            let k = rng.index(base.len());
            let mut p = base.clone();
            p[k] += h;
            policy.net_mut().set_params(&p).unwrap();
            let up = policy.log_prob(state, action).unwrap();
            p[k] -= 2.0 * h;
            policy.net_mut().set_params(&p).unwrap();
            let dn = policy.log_prob(state, action).unwrap();
            policy.net_mut().set_params(&base).unwrap();
            let fd = (up - dn) / (2.0 * h);
            let denom = fd.abs().max(g[k].abs()).max(1e-6);
            assert!((fd - g[k]).abs() / denom < 1e-4, "coord {k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn log_prob_gradients_match_finite_differences() {
        let mut rng = Rng::new(5);
        let mut p = Policy::new(EnvId::MULTI_KEY_NAV, &[3], &mut rng).unwrap();
        check_log_prob_grad(&mut p, &[0.3, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0], Action::Discrete(6), &mut rng);
        let mut p = Policy::new(EnvId::PointMass, &[], &mut rng).unwrap();
        let s = pointmass::initial_state(1.0, 2.0, 0.5);
        check_log_prob_grad(&mut p, &s, Action::Continuous([2.0, -3.0]), &mut rng);
    }

    #[test]
    fn score_function_has_zero_mean() {
        // E_a[∇ log π(a|s)] = 0; Monte-Carlo over 10^4 sampled actions.
        let mut rng = Rng::new(6);
        let p = Policy::new(EnvId::MULTI_KEY_NAV, &[], &mut rng).unwrap();
        let s = [0.42, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let n = 10_000;
        let mut acc = vec![0.0; p.net().num_params()];
        for _ in 0..n {
            let a = p.act(EnvId::MULTI_KEY_NAV, &s, &mut rng).unwrap();
            p.accumulate_log_prob_grad(&s, a, 1.0 / n as f64, &mut acc).unwrap();
        }
        let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 0.05, "{norm}");
    }
}
