//! State-feedback policies: bias-free two-layer networks, linear gains and
//! exact weighted combinations of them.

mod mlp;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::DenseMatrix;

pub use mlp::{Activation, MlpPolicy, MlpScratch};

/// Linear state feedback `u = Kx` with `K` of shape `d × n`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearPolicy {
    k: DenseMatrix,
}

impl LinearPolicy {
    pub fn new(k: DenseMatrix) -> Self {
        Self { k }
    }
    pub fn gain(&self) -> &DenseMatrix {
        &self.k
    }
}

/// A state-feedback map `ℝⁿ → ℝᵈ`.
///
/// Leaves are shared behind `Arc`; two leaves are *the same policy* when they
/// point at the same allocation. Combinations are kept symbolic as a flat
/// list of weighted leaves.
#[derive(Clone, Debug)]
pub enum Policy {
    Mlp(Arc<MlpPolicy>),
    Linear(Arc<LinearPolicy>),
    Affine(AffinePolicy),
    Zero { in_dim: usize, out_dim: usize },
}

/// `Σ wᵢ πᵢ` over leaf policies. Weights may be negative.
#[derive(Clone, Debug)]
pub struct AffinePolicy {
    terms: Vec<(f64, Policy)>,
    in_dim: usize,
    out_dim: usize,
}

/// Reusable buffers for [`Policy::eval_into`].
#[derive(Clone, Debug, Default)]
pub struct EvalScratch {
    mlp: MlpScratch,
    term: Vec<f64>,
}

impl From<MlpPolicy> for Policy {
    fn from(p: MlpPolicy) -> Self {
        Policy::Mlp(Arc::new(p))
    }
}

impl From<LinearPolicy> for Policy {
    fn from(p: LinearPolicy) -> Self {
        Policy::Linear(Arc::new(p))
    }
}

impl Policy {
    pub fn linear(k: DenseMatrix) -> Self {
        LinearPolicy::new(k).into()
    }

    pub fn zero(in_dim: usize, out_dim: usize) -> Self {
        Policy::Zero { in_dim, out_dim }
    }

    pub fn in_dim(&self) -> usize {
        match self {
            Policy::Mlp(p) => p.in_dim(),
            Policy::Linear(p) => p.k.cols(),
            Policy::Affine(p) => p.in_dim,
            Policy::Zero { in_dim, .. } => *in_dim,
        }
    }

    pub fn out_dim(&self) -> usize {
        match self {
            Policy::Mlp(p) => p.out_dim(),
            Policy::Linear(p) => p.k.rows(),
            Policy::Affine(p) => p.out_dim,
            Policy::Zero { out_dim, .. } => *out_dim,
        }
    }

    /// Leaf identity: shared allocation, or zero policies of equal shape.
    /// Affine policies are compared term by term.
    pub fn same_as(&self, other: &Policy) -> bool {
        match (self, other) {
            (Policy::Mlp(a), Policy::Mlp(b)) => Arc::ptr_eq(a, b),
            (Policy::Linear(a), Policy::Linear(b)) => Arc::ptr_eq(a, b),
            (
                Policy::Zero {
                    in_dim: a,
                    out_dim: b,
                },
                Policy::Zero {
                    in_dim: c,
                    out_dim: d,
                },
            ) => a == c && b == d,
            (Policy::Affine(a), Policy::Affine(b)) => {
                a.terms.len() == b.terms.len()
                    && a.terms
                        .iter()
                        .zip(&b.terms)
                        .all(|((w1, p1), (w2, p2))| w1 == w2 && p1.same_as(p2))
            }
            _ => false,
        }
    }

    /// Weighted leaves of this policy (a leaf is its own single term).
    pub fn terms(&self) -> Vec<(f64, Policy)> {
        match self {
            Policy::Affine(a) => a.terms.clone(),
            leaf => vec![(1.0, leaf.clone())],
        }
    }

    /// Weight carried by `leaf` in this policy's flat expansion.
    pub fn weight_of(&self, leaf: &Policy) -> f64 {
        self.terms()
            .iter()
            .filter(|(_, p)| p.same_as(leaf))
            .map(|(w, _)| *w)
            .sum()
    }

    /// Evaluates into `out` (overwritten). Dimensions are not checked.
    pub fn eval_into(&self, x: &[f64], out: &mut [f64], scratch: &mut EvalScratch) {
        match self {
            Policy::Mlp(p) => p.forward(x, out, &mut scratch.mlp),
            Policy::Linear(p) => p.k.mul_vec_into(x, out),
            Policy::Zero { .. } => out.iter_mut().for_each(|v| *v = 0.0),
            Policy::Affine(a) => {
                out.iter_mut().for_each(|v| *v = 0.0);
                let mut term = std::mem::take(&mut scratch.term);
                term.resize(out.len(), 0.0);
                for (w, leaf) in &a.terms {
                    leaf.eval_into(x, &mut term, scratch);
                    for (o, t) in out.iter_mut().zip(&term) {
                        *o += w * t;
                    }
                }
                scratch.term = term;
            }
        }
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim("x", self.in_dim(), x.len())?;
        let mut out = vec![0.0; self.out_dim()];
        self.eval_into(x, &mut out, &mut EvalScratch::default());
        Ok(out)
    }

    /// The network inside a plain network leaf.
    pub fn as_mlp(&self) -> Option<&Arc<MlpPolicy>> {
        match self {
            Policy::Mlp(p) => Some(p),
            _ => None,
        }
    }
}

impl AffinePolicy {
    /// Builds `Σ wᵢ πᵢ`, flattening nested combinations and merging repeated
    /// leaves. A merged weight that cancels to within rounding of its
    /// contributions is dropped.
    pub fn new(terms: Vec<(f64, Policy)>) -> Result<Self> {
        let first = terms
            .first()
            .ok_or_else(|| Error::precondition("an affine policy needs at least one term"))?;
        let (in_dim, out_dim) = (first.1.in_dim(), first.1.out_dim());
        let mut flat: Vec<(f64, f64, Policy)> = Vec::new();
        for (w, p) in terms {
            check_dim("policy input dimension", in_dim, p.in_dim())?;
            check_dim("policy output dimension", out_dim, p.out_dim())?;
            if !w.is_finite() {
                return Err(Error::precondition("affine weights must be finite"));
            }
            for (inner_w, leaf) in p.terms() {
                let c = w * inner_w;
                match flat.iter_mut().find(|(_, _, q)| q.same_as(&leaf)) {
                    Some(slot) => {
                        slot.0 += c;
                        slot.1 += c.abs();
                    }
                    None => flat.push((c, c.abs(), leaf)),
                }
            }
        }
        let terms: Vec<(f64, Policy)> = flat
            .into_iter()
            .filter(|(w, mag, _)| w.abs() > 8.0 * f64::EPSILON * mag)
            .map(|(w, _, p)| (w, p))
            .collect();
        Ok(Self {
            terms,
            in_dim,
            out_dim,
        })
    }

    pub fn terms(&self) -> &[(f64, Policy)] {
        &self.terms
    }

    pub fn weight_sum(&self) -> f64 {
        self.terms.iter().map(|(w, _)| w).sum()
    }

    /// Collapses to a bare leaf when a single term of weight exactly 1
    /// remains, and to the zero policy when nothing remains.
    pub fn into_policy(self) -> Policy {
        match self.terms.as_slice() {
            [] => Policy::zero(self.in_dim, self.out_dim),
            [(w, p)] if *w == 1.0 => p.clone(),
            _ => Policy::Affine(self),
        }
    }
}

/// `(1 − α) p1 + α p2`.
///
/// `α = 1` returns `p2`; mixing a policy with itself returns it unchanged.
pub fn mix(p1: &Policy, p2: &Policy, alpha: f64) -> Result<Policy> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::precondition(format!(
            "mixing rate must lie in (0, 1], got {alpha}"
        )));
    }
    check_dim("policy input dimension", p1.in_dim(), p2.in_dim())?;
    check_dim("policy output dimension", p1.out_dim(), p2.out_dim())?;
    if alpha == 1.0 {
        return Ok(p2.clone());
    }
    if p1.same_as(p2) {
        return Ok(p1.clone());
    }
    Ok(AffinePolicy::new(vec![(1.0 - alpha, p1.clone()), (alpha, p2.clone())])?.into_policy())
}

/// `(1−α)^E` by repeated multiplication, the convention shared by every
/// place that needs the residual expert weight.
pub fn residual_weight(alpha: f64, epochs: usize) -> f64 {
    (0..epochs).fold(1.0, |acc, _| acc * (1.0 - alpha))
}

/// Final de-mixing step: `[(1−α) π_prev + α π̂ − (1−α)^E π★] / (1 − (1−α)^E)`,
/// removing the expert weight left over after `E` mixing rounds.
pub fn demix_final(
    pi_prev: &Policy,
    pi_hat: &Policy,
    pi_star: &Policy,
    alpha: f64,
    epochs: usize,
) -> Result<Policy> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::precondition(format!(
            "mixing rate must lie in (0, 1], got {alpha}"
        )));
    }
    if epochs == 0 {
        return Err(Error::precondition("de-mixing needs at least one epoch"));
    }
    if pi_prev.same_as(pi_hat) && pi_hat.same_as(pi_star) {
        return Ok(pi_star.clone());
    }
    let w = residual_weight(alpha, epochs);
    let z = 1.0 - w;
    Ok(AffinePolicy::new(vec![
        ((1.0 - alpha) / z, pi_prev.clone()),
        (alpha / z, pi_hat.clone()),
        (-w / z, pi_star.clone()),
    ])?
    .into_policy())
}

/// Seeded network with Gaussian `1/√fan_in` initialization.
pub fn random_mlp(
    in_dim: usize,
    hidden: usize,
    out_dim: usize,
    activation: Activation,
    seed: u64,
) -> Result<MlpPolicy> {
    MlpPolicy::random(in_dim, hidden, out_dim, activation, seed)
}

// Serialization

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    kind: String,
    dims: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    activation: Option<Activation>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    weights: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    terms: Option<Vec<TermRepr>>,
}

#[derive(Serialize, Deserialize)]
struct TermRepr {
    weight: f64,
    policy: PolicyRepr,
}

impl Policy {
    fn to_repr(&self) -> PolicyRepr {
        match self {
            Policy::Mlp(p) => PolicyRepr {
                kind: "mlp".into(),
                dims: vec![p.in_dim(), p.hidden(), p.out_dim()],
                activation: Some(p.activation()),
                weights: Some(p.params().to_vec()),
                terms: None,
            },
            Policy::Linear(p) => PolicyRepr {
                kind: "linear".into(),
                dims: vec![p.k.cols(), p.k.rows()],
                activation: None,
                weights: Some(p.k.as_slice().to_vec()),
                terms: None,
            },
            Policy::Zero { in_dim, out_dim } => PolicyRepr {
                kind: "zero".into(),
                dims: vec![*in_dim, *out_dim],
                activation: None,
                weights: None,
                terms: None,
            },
            Policy::Affine(a) => PolicyRepr {
                kind: "affine".into(),
                dims: vec![a.in_dim, a.out_dim],
                activation: None,
                weights: None,
                terms: Some(
                    a.terms
                        .iter()
                        .map(|(w, p)| TermRepr {
                            weight: *w,
                            policy: p.to_repr(),
                        })
                        .collect(),
                ),
            },
        }
    }

    fn from_repr(r: PolicyRepr) -> Result<Self> {
        let dims = |n: usize| -> Result<()> {
            if r.dims.len() == n {
                Ok(())
            } else {
                Err(Error::Parse(format!(
                    "`{}` policy needs {n} dims, got {}",
                    r.kind,
                    r.dims.len()
                )))
            }
        };
        let missing = |what: &str| Error::Parse(format!("`{}` policy is missing `{what}`", r.kind));
        match r.kind.as_str() {
            "mlp" => {
                dims(3)?;
                let act = r.activation.ok_or_else(|| missing("activation"))?;
                let w = r.weights.clone().ok_or_else(|| missing("weights"))?;
                Ok(MlpPolicy::new(r.dims[0], r.dims[1], r.dims[2], act, w)?.into())
            }
            "linear" => {
                dims(2)?;
                let w = r.weights.clone().ok_or_else(|| missing("weights"))?;
                Ok(Policy::linear(DenseMatrix::from_row_major(
                    r.dims[1], r.dims[0], w,
                )?))
            }
            "zero" => {
                dims(2)?;
                Ok(Policy::zero(r.dims[0], r.dims[1]))
            }
            "affine" => {
                dims(2)?;
                let terms = r
                    .terms
                    .ok_or_else(|| Error::Parse("`affine` policy is missing `terms`".into()))?;
                let terms = terms
                    .into_iter()
                    .map(|t| Ok((t.weight, Policy::from_repr(t.policy)?)))
                    .collect::<Result<Vec<_>>>()?;
                if terms.is_empty() {
                    return Ok(Policy::zero(r.dims[0], r.dims[1]));
                }
                // stored terms are already flat and merged; keep them verbatim
                for (_, p) in &terms {
                    check_dim("term input dimension", r.dims[0], p.in_dim())?;
                    check_dim("term output dimension", r.dims[1], p.out_dim())?;
                }
                Ok(Policy::Affine(AffinePolicy {
                    terms,
                    in_dim: r.dims[0],
                    out_dim: r.dims[1],
                }))
            }
            other => Err(Error::Parse(format!("unknown policy kind `{other}`"))),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_repr()).expect("policy serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Policy::from_repr(serde_json::from_str(text)?)
    }
}
