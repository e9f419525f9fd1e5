use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::rng;

/// Hidden-layer nonlinearity. All variants map 0 to 0, so a bias-free
/// network always satisfies `π(0) = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`
    /// (and `z` for the kink of relu, where 0 is used).
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Parse(format!("unknown activation `{other}`"))),
        }
    }
}

/// Bias-free two-layer network `x ↦ W2 σ(W1 x)`.
///
/// The parameter vector is `θ = vec(W1) ‖ vec(W2)` with both matrices
/// flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    activation: Activation,
    theta: Vec<f64>,
}

/// Per-sample forward cache for backpropagation.
#[derive(Clone, Debug, Default)]
pub struct MlpScratch {
    pre: Vec<f64>,
    act: Vec<f64>,
    back: Vec<f64>,
}

impl MlpPolicy {
    pub fn new(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: Activation,
        theta: Vec<f64>,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(Error::precondition("network dimensions must be positive"));
        }
        check_dim("theta", hidden * (in_dim + out_dim), theta.len())?;
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::precondition("network parameters must be finite"));
        }
        Ok(Self {
            in_dim,
            hidden,
            out_dim,
            activation,
            theta,
        })
    }

    /// Gaussian initialization with standard deviation `1/√fan_in` per layer.
    pub fn random(
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if in_dim == 0 || hidden == 0 || out_dim == 0 {
            return Err(Error::precondition("network dimensions must be positive"));
        }
        let mut stream = rng::stream(seed, &[rng::tags::POLICY_INIT]);
        let n1 = Normal::new(0.0, 1.0 / (in_dim as f64).sqrt()).expect("positive std");
        let n2 = Normal::new(0.0, 1.0 / (hidden as f64).sqrt()).expect("positive std");
        let mut theta = Vec::with_capacity(hidden * (in_dim + out_dim));
        theta.extend((0..hidden * in_dim).map(|_| n1.sample(&mut stream)));
        theta.extend((0..out_dim * hidden).map(|_| n2.sample(&mut stream)));
        Self::new(in_dim, hidden, out_dim, activation, theta)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }
    pub fn hidden(&self) -> usize {
        self.hidden
    }
    pub fn out_dim(&self) -> usize {
        self.out_dim
    }
    pub fn activation(&self) -> Activation {
        self.activation
    }
    pub fn num_params(&self) -> usize {
        self.theta.len()
    }
    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    /// Same architecture, new parameters.
    pub fn with_params(&self, theta: Vec<f64>) -> Result<Self> {
        Self::new(
            self.in_dim,
            self.hidden,
            self.out_dim,
            self.activation,
            theta,
        )
    }

    fn w1(&self) -> &[f64] {
        &self.theta[..self.hidden * self.in_dim]
    }
    fn w2(&self) -> &[f64] {
        &self.theta[self.hidden * self.in_dim..]
    }

    /// Evaluates into `out` (overwritten), using `scratch` for the hidden layer.
    pub fn forward(&self, x: &[f64], out: &mut [f64], scratch: &mut MlpScratch) {
        debug_assert_eq!(x.len(), self.in_dim);
        debug_assert_eq!(out.len(), self.out_dim);
        scratch.pre.resize(self.hidden, 0.0);
        scratch.act.resize(self.hidden, 0.0);
        let w1 = self.w1();
        for h in 0..self.hidden {
            let row = &w1[h * self.in_dim..(h + 1) * self.in_dim];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum();
            scratch.pre[h] = z;
            scratch.act[h] = self.activation.apply(z);
        }
        let w2 = self.w2();
        for (o, slot) in out.iter_mut().enumerate() {
            let row = &w2[o * self.hidden..(o + 1) * self.hidden];
            *slot = row.iter().zip(&scratch.act).map(|(w, a)| w * a).sum();
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", self.in_dim, x.len())?;
        let mut out = vec![0.0; self.out_dim];
        self.forward(x, &mut out, &mut MlpScratch::default());
        Ok(out)
    }

    /// Adds `∂(upstreamᵀ π(x, θ))/∂θ` to `grad`. `scratch` must hold the
    /// forward cache of the same `x` (call [`Self::forward`] first).
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        upstream: &[f64],
        grad: &mut [f64],
        scratch: &mut MlpScratch,
    ) {
        debug_assert_eq!(grad.len(), self.theta.len());
        let (g1, g2) = grad.split_at_mut(self.hidden * self.in_dim);
        let w2 = self.w2();
        scratch.back.clear();
        scratch.back.resize(self.hidden, 0.0);
        for (o, &up) in upstream.iter().enumerate() {
            if up == 0.0 {
                continue;
            }
            let g2_row = &mut g2[o * self.hidden..(o + 1) * self.hidden];
            let w2_row = &w2[o * self.hidden..(o + 1) * self.hidden];
            for h in 0..self.hidden {
                g2_row[h] += up * scratch.act[h];
                scratch.back[h] += up * w2_row[h];
            }
        }
        for h in 0..self.hidden {
            let delta =
                scratch.back[h] * self.activation.derivative(scratch.pre[h], scratch.act[h]);
            if delta == 0.0 {
                continue;
            }
            let g1_row = &mut g1[h * self.in_dim..(h + 1) * self.in_dim];
            for (g, v) in g1_row.iter_mut().zip(x) {
                *g += delta * v;
            }
        }
    }

    /// Gradient of `upstreamᵀ π(x, θ)` with respect to `θ`.
    pub fn grad_wrt_params(&self, x: &[f64], upstream: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", self.in_dim, x.len())?;
        check_dim("upstream", self.out_dim, upstream.len())?;
        let mut scratch = MlpScratch::default();
        let mut out = vec![0.0; self.out_dim];
        self.forward(x, &mut out, &mut scratch);
        let mut grad = vec![0.0; self.theta.len()];
        self.accumulate_grad(x, upstream, &mut grad, &mut scratch);
        Ok(grad)
    }

    /// Scales θ back onto the ball `‖θ‖₂ ≤ radius` if it lies outside.
    pub fn project_params(theta: &mut [f64], radius: f64) {
        let norm = theta.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > radius && norm > 0.0 {
            let s = radius / norm;
            theta.iter_mut().for_each(|v| *v *= s);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_at_origin_and_seeded() {
        for act in [Activation::Tanh, Activation::Relu] {
            let a = MlpPolicy::random(3, 8, 2, act, 11).unwrap();
            assert_eq!(a.evaluate(&[0.0; 3]).unwrap(), vec![0.0, 0.0]);
            assert_eq!(a, MlpPolicy::random(3, 8, 2, act, 11).unwrap());
            assert_ne!(
                a.params(),
                MlpPolicy::random(3, 8, 2, act, 12).unwrap().params()
            );
        }
    }

    #[test]
    fn identity_network_gradient_is_outer_product() {
        // W1 = I so π(x) = W2 x and ∂(uᵀ W2 x)/∂W2 = u xᵀ
        let w1 = vec![1.0, 0.0, 0.0, 1.0];
        let w2 = vec![0.3, -0.2, 0.5, 0.7];
        let net = MlpPolicy::new(2, 2, 2, Activation::Identity, [w1, w2].concat()).unwrap();
        let x = [2.0, -1.0];
        let u = [0.5, 3.0];
        let g = net.grad_wrt_params(&x, &u).unwrap();
        assert_eq!(&g[4..], &[1.0, -0.5, 6.0, -3.0]);
        assert!(net
            .grad_wrt_params(&x, &[0.0, 0.0])
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn projection_caps_norm() {
        let mut t = vec![3.0, 4.0];
        MlpPolicy::project_params(&mut t, 1.0);
        assert!((t[0] - 0.6).abs() < 1e-15 && (t[1] - 0.8).abs() < 1e-15);
        let mut inside = vec![0.1, 0.1];
        MlpPolicy::project_params(&mut inside, 1.0);
        assert_eq!(inside, vec![0.1, 0.1]);
    }
}
