//! Flow matching and reward-weighted policy optimization on small vectors.
//!
//! A flow model predicts the velocity `v = x1 - x0` along the straight path
//! `x_t = (1 - t) x0 + t x1` from data `x0` to noise `x1`. Policy optimization
//! trains two implicit policies built from a frozen old model and the current
//! one, weighting them by normalized rewards:
//!
//! ```text
//! v+ = (1 - β) v_old + β v_θ
//! v- = (1 + β) v_old - β v_θ
//! L  = r ‖v+ - v‖² + (1 - r) ‖v- - v‖²
//! ```
//!
//! Squared norms are per-entry means throughout. [`ToyModel`] is a two-layer
//! tanh perceptron with hand-written backpropagation, and [`train_toy_rft`]
//! runs the whole loop on it.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reward::normalize_group;

fn same_len(what: &str, a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "{what}: lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSample {
    pub x0: Vec<f64>,
    pub x1: Vec<f64>,
    pub t: f64,
    pub xt: Vec<f64>,
    pub v: Vec<f64>,
}

/// Point at time `t` on the straight path from `x0` to `x1`, with its velocity.
pub fn interpolate(x0: &[f64], x1: &[f64], t: f64) -> Result<FlowSample> {
    same_len("interpolate", x0, x1)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("t = {t} is outside [0, 1]")));
    }
    let xt = x0.iter().zip(x1).map(|(a, b)| (1.0 - t) * a + t * b).collect();
    let v = x0.iter().zip(x1).map(|(a, b)| b - a).collect();
    Ok(FlowSample {
        x0: x0.to_vec(),
        x1: x1.to_vec(),
        t,
        xt,
        v,
    })
}

pub fn fm_loss(v_pred: &[f64], v_target: &[f64]) -> Result<f64> {
    same_len("fm_loss", v_pred, v_target)?;
    Ok(mean_sq_diff(v_pred, v_target))
}

/// Positive and negative implicit policies; they always average to `v_old`.
pub fn implicit_policies(v_old: &[f64], v_theta: &[f64], beta: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    same_len("implicit_policies", v_old, v_theta)?;
    let plus = v_old
        .iter()
        .zip(v_theta)
        .map(|(o, n)| (1.0 - beta) * o + beta * n)
        .collect();
    let minus = v_old
        .iter()
        .zip(v_theta)
        .map(|(o, n)| (1.0 + beta) * o - beta * n)
        .collect();
    Ok((plus, minus))
}

fn check_score(r: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&r) {
        return Err(Error::InvalidArgument(format!("reward score {r} is outside [0, 1]")));
    }
    Ok(())
}

pub fn nft_loss(v_plus: &[f64], v_minus: &[f64], v_target: &[f64], r: f64) -> Result<f64> {
    same_len("nft_loss", v_plus, v_target)?;
    same_len("nft_loss", v_minus, v_target)?;
    check_score(r)?;
    Ok(r * mean_sq_diff(v_plus, v_target) + (1.0 - r) * mean_sq_diff(v_minus, v_target))
}

/// Gradient of [`nft_loss`] with respect to `v_theta`.
pub fn nft_loss_grad(
    v_old: &[f64],
    v_theta: &[f64],
    v_target: &[f64],
    r: f64,
    beta: f64,
) -> Result<Vec<f64>> {
    same_len("nft_loss_grad", v_old, v_target)?;
    check_score(r)?;
    let (plus, minus) = implicit_policies(v_old, v_theta, beta)?;
    let d = v_target.len() as f64;
    Ok((0..v_target.len())
        .map(|i| 2.0 * beta / d * (r * (plus[i] - v_target[i]) - (1.0 - r) * (minus[i] - v_target[i])))
        .collect())
}

/// A conditional velocity field `v(x, t, c)`.
pub trait VelocityField {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &[f64], t: f64, c: &[f64]) -> Vec<f64>;
}

/// Integrates from noise at `t = 1` to data at `t = 0` with uniform Euler steps.
pub fn sample_euler<M: VelocityField + ?Sized>(model: &M, x1: &[f64], c: &[f64], steps: usize) -> Result<Vec<f64>> {
    if steps == 0 {
        return Err(Error::InvalidArgument("solver steps must be >= 1".into()));
    }
    if x1.len() != model.dim() {
        return Err(Error::DimensionMismatch(format!(
            "sample_euler: noise has length {}, model dimension is {}",
            x1.len(),
            model.dim()
        )));
    }
    let dt = 1.0 / steps as f64;
    let mut x = x1.to_vec();
    for k in 0..steps {
        let t = 1.0 - k as f64 * dt;
        let v = model.velocity(&x, t, c);
        if v.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("model velocity at t = {t}")));
        }
        for (xi, vi) in x.iter_mut().zip(&v) {
            *xi -= dt * vi;
        }
    }
    Ok(x)
}

/// Two-layer perceptron `[x, t, c] -> tanh -> velocity`.
///
/// Parameters are stored flat as `w1 | b1 | w2 | b2`, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    dim: usize,
    cond_dim: usize,
    hidden: usize,
    params: Vec<f64>,
}

impl ToyModel {
    /// Random initialization scaled by fan-in.
    pub fn new(dim: usize, cond_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("toy model needs dim and hidden >= 1".into()));
        }
        let mut m = Self {
            dim,
            cond_dim,
            hidden,
            params: Vec::new(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = m.inputs() as f64;
        let mut normal = |scale: f64| scale * rng.sample::<f64, _>(StandardNormal);
        let mut params = Vec::with_capacity(m.num_params());
        params.extend((0..hidden * m.inputs()).map(|_| normal(1.0 / fan_in.sqrt())));
        params.extend(std::iter::repeat_n(0.0, hidden));
        params.extend((0..dim * hidden).map(|_| normal(1.0 / (hidden as f64).sqrt())));
        params.extend(std::iter::repeat_n(0.0, dim));
        m.params = params;
        Ok(m)
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn inputs(&self) -> usize {
        self.dim + 1 + self.cond_dim
    }

    pub fn num_params(&self) -> usize {
        self.hidden * self.inputs() + self.hidden + self.dim * self.hidden + self.dim
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(Error::DimensionMismatch(format!(
                "toy model has {} parameters, got {}",
                self.num_params(),
                params.len()
            )));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// Output bias; with zero weights the model emits exactly this.
    pub fn set_output_bias(&mut self, bias: &[f64]) -> Result<()> {
        let start = self.num_params() - self.dim;
        if bias.len() != self.dim {
            return Err(Error::DimensionMismatch("output bias length".into()));
        }
        self.params[start..].copy_from_slice(bias);
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    fn split(&self) -> (&[f64], &[f64], &[f64], &[f64]) {
        let (w1, rest) = self.params.split_at(self.hidden * self.inputs());
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.dim * self.hidden);
        (w1, b1, w2, b2)
    }

    fn input(&self, x: &[f64], t: f64, c: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.dim, "toy model state length");
        assert_eq!(c.len(), self.cond_dim, "toy model condition length");
        let mut inp = Vec::with_capacity(self.inputs());
        inp.extend_from_slice(x);
        inp.push(t);
        inp.extend_from_slice(c);
        inp
    }

    fn hidden_act(&self, inp: &[f64]) -> Vec<f64> {
        let (w1, b1, _, _) = self.split();
        let m = self.inputs();
        (0..self.hidden)
            .map(|j| {
                let z: f64 = w1[j * m..(j + 1) * m].iter().zip(inp).map(|(w, v)| w * v).sum();
                (z + b1[j]).tanh()
            })
            .collect()
    }

    fn output(&self, h: &[f64]) -> Vec<f64> {
        let (_, _, w2, b2) = self.split();
        (0..self.dim)
            .map(|o| {
                let s: f64 = w2[o * self.hidden..(o + 1) * self.hidden]
                    .iter()
                    .zip(h)
                    .map(|(w, v)| w * v)
                    .sum();
                s + b2[o]
            })
            .collect()
    }

    /// Parameter gradient of `dout · v(x, t, c)`.
    pub fn backward(&self, x: &[f64], t: f64, c: &[f64], dout: &[f64]) -> Vec<f64> {
        assert_eq!(dout.len(), self.dim, "output gradient length");
        let inp = self.input(x, t, c);
        let h = self.hidden_act(&inp);
        let (_, _, w2, _) = self.split();
        let m = self.inputs();
        let mut grad = vec![0.0; self.num_params()];
        let (gw1, rest) = grad.split_at_mut(self.hidden * m);
        let (gb1, rest) = rest.split_at_mut(self.hidden);
        let (gw2, gb2) = rest.split_at_mut(self.dim * self.hidden);
        gb2.copy_from_slice(dout);
        for o in 0..self.dim {
            for j in 0..self.hidden {
                gw2[o * self.hidden + j] = dout[o] * h[j];
            }
        }
        for j in 0..self.hidden {
            let dh: f64 = (0..self.dim).map(|o| w2[o * self.hidden + j] * dout[o]).sum();
            let dz = dh * (1.0 - h[j] * h[j]);
            gb1[j] = dz;
            for i in 0..m {
                gw1[j * m + i] = dz * inp[i];
            }
        }
        grad
    }
}

impl VelocityField for ToyModel {
    fn dim(&self) -> usize {
        self.dim
    }

    fn velocity(&self, x: &[f64], t: f64, c: &[f64]) -> Vec<f64> {
        let inp = self.input(x, t, c);
        self.output(&self.hidden_act(&inp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicyConfig {
    pub beta: f64,
    pub group_size: usize,
    pub epochs: usize,
    pub solver_steps: usize,
    /// SGD steps per conditioning per epoch.
    pub inner_steps: usize,
    pub learning_rate: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            beta: 1.0,
            group_size: 12,
            epochs: 15,
            solver_steps: 6,
            inner_steps: 20,
            learning_rate: 0.1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidArgument(format!("beta {} must be > 0", self.beta)));
        }
        if self.group_size < 2 {
            return Err(Error::InvalidArgument("group size must be >= 2".into()));
        }
        if self.epochs == 0 || self.solver_steps == 0 || self.inner_steps == 0 {
            return Err(Error::InvalidArgument(
                "epochs, solver steps and inner steps must be >= 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        Ok(())
    }
}

/// Reward curve of a toy run: the mean raw reward of the groups sampled in each epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardCurve {
    pub epoch_mean_reward: Vec<f64>,
}

impl RewardCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_reward\n");
        for (e, r) in self.epoch_mean_reward.iter().enumerate() {
            s.push_str(&format!("{},{:.9}\n", e + 1, r));
        }
        s
    }
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Reward-weighted fine-tuning of a toy flow model.
///
/// Each epoch freezes a copy of the model as the old policy. For every
/// conditioning vector a group of samples is drawn from the old policy,
/// scored, normalized within the group, and then used as data for SGD on the
/// implicit-policy loss.
pub fn train_toy_rft<F>(
    mut model: ToyModel,
    conditions: &[Vec<f64>],
    reward_fn: F,
    cfg: &PolicyConfig,
    seed: u64,
) -> Result<(ToyModel, RewardCurve)>
where
    F: Fn(&[f64]) -> f64,
{
    cfg.validate()?;
    if conditions.is_empty() {
        return Err(Error::InvalidArgument("toy dataset is empty".into()));
    }
    if let Some(c) = conditions.iter().find(|c| c.len() != model.cond_dim) {
        return Err(Error::DimensionMismatch(format!(
            "condition of length {}, model expects {}",
            c.len(),
            model.cond_dim
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dim = model.dim;
    let mut curve = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        let diverged = |what: &str| Error::NonFinite(format!("toy training diverged at epoch {epoch}: {what}"));
        let old = model.clone();
        let mut reward_sum = 0.0;
        for c in conditions {
            let mut samples = Vec::with_capacity(cfg.group_size);
            let mut raw = Vec::with_capacity(cfg.group_size);
            for _ in 0..cfg.group_size {
                let x1 = normal_vec(&mut rng, dim);
                let x0 = sample_euler(&old, &x1, c, cfg.solver_steps).map_err(|_| diverged("sampling"))?;
                raw.push(reward_fn(&x0));
                samples.push(x0);
            }
            let group = normalize_group(&raw).map_err(|_| diverged("reward"))?;
            reward_sum += group.mean;

            for _ in 0..cfg.inner_steps {
                let mut grad = vec![0.0; model.num_params()];
                let mut loss = 0.0;
                for (x0, &r) in samples.iter().zip(&group.normalized) {
                    let t: f64 = rng.random();
                    let eps = normal_vec(&mut rng, dim);
                    let fs = interpolate(x0, &eps, t)?;
                    let v_old = old.velocity(&fs.xt, t, c);
                    let v_theta = model.velocity(&fs.xt, t, c);
                    let (plus, minus) = implicit_policies(&v_old, &v_theta, cfg.beta)?;
                    loss += nft_loss(&plus, &minus, &fs.v, r)?;
                    let dv = nft_loss_grad(&v_old, &v_theta, &fs.v, r, cfg.beta)?;
                    for (g, d) in grad.iter_mut().zip(model.backward(&fs.xt, t, c, &dv)) {
                        *g += d;
                    }
                }
                if !loss.is_finite() {
                    return Err(diverged("loss"));
                }
                let scale = cfg.learning_rate / samples.len() as f64;
                for (p, g) in model.params.iter_mut().zip(&grad) {
                    *p -= scale * g;
                }
                if !model.is_finite() {
                    return Err(diverged("parameters"));
                }
            }
        }
        curve.push(reward_sum / conditions.len() as f64);
    }
    Ok((
        model,
        RewardCurve {
            epoch_mean_reward: curve,
        },
    ))
}
