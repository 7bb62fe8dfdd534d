//! Individual-level choice models and analytic score functions.
//!
//! Two link functions map a voter's covariate row to a success probability:
//! plain logistic regression and a one-hidden-layer network with sigmoid
//! activations. For a precinct with count `D` out of `T`, the normal
//! approximation to the Poisson binomial log likelihood is
//!
//! ```text
//! l = -log(phi) - (D - mu)^2 / (2 phi^2),   mu = sum p_i,  phi^2 = sum p_i (1 - p_i)
//! ```
//!
//! and the gradients below are exact derivatives of that expression through
//! the per-voter probabilities. Everything is deterministic given the
//! parameters; randomness only enters at initialization (handled by the
//! trainer).

use ndarray::{Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::Precinct;
use crate::error::{Error, Result};
use crate::poibin::{self, PoibinMoments, SuccessProbVector};

/// Per-voter probabilities are clamped to this distance from {0, 1} before
/// moments are formed, keeping the variance positive and every gradient
/// finite even for saturated parameters.
pub const PROB_CLAMP: f64 = 1e-12;

/// Numerically stable logistic function.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Logistic-regression parameters: `theta[0]` is the intercept, `theta[1..]`
/// the covariate coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticParams {
    pub theta: Array1<f64>,
}

impl LogisticParams {
    pub fn zeros(covariate_dim: usize) -> Self {
        Self {
            theta: Array1::zeros(covariate_dim + 1),
        }
    }

    pub fn covariate_dim(&self) -> usize {
        self.theta.len() - 1
    }
}

/// One-hidden-layer network parameters. Shapes: `w1` is hidden x input,
/// `b1` and `w2` are hidden-length, `b2` is the output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuralParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: f64,
}

impl NeuralParams {
    pub fn new(w1: Array2<f64>, b1: Array1<f64>, w2: Array1<f64>, b2: f64) -> Result<Self> {
        let h = w1.nrows();
        if h == 0 || w1.ncols() == 0 {
            return Err(Error::ShapeMismatch(
                "network needs at least one hidden unit and one input".into(),
            ));
        }
        if b1.len() != h || w2.len() != h {
            return Err(Error::ShapeMismatch(format!(
                "w1 has {h} hidden rows but b1 has {} and w2 has {}",
                b1.len(),
                w2.len()
            )));
        }
        Ok(Self { w1, b1, w2, b2 })
    }

    pub fn hidden_size(&self) -> usize {
        self.w1.nrows()
    }

    pub fn covariate_dim(&self) -> usize {
        self.w1.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logistic,
    Neural,
}

/// Either model, with a portable tagged serialization:
/// `{"kind": "logistic", "theta": [...]}` or
/// `{"kind": "neural", "w1": [[...]], "b1": [...], "w2": [...], "b2": ...}`.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelParams {
    Logistic(LogisticParams),
    Neural(NeuralParams),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum ModelParamsRepr {
    Logistic {
        theta: Vec<f64>,
    },
    Neural {
        w1: Vec<Vec<f64>>,
        b1: Vec<f64>,
        w2: Vec<f64>,
        b2: f64,
    },
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let repr = match self {
            ModelParams::Logistic(p) => ModelParamsRepr::Logistic {
                theta: p.theta.to_vec(),
            },
            ModelParams::Neural(p) => ModelParamsRepr::Neural {
                w1: p.w1.rows().into_iter().map(|r| r.to_vec()).collect(),
                b1: p.b1.to_vec(),
                w2: p.w2.to_vec(),
                b2: p.b2,
            },
        };
        repr.serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as DeError;
        match ModelParamsRepr::deserialize(deserializer)? {
            ModelParamsRepr::Logistic { theta } => {
                if theta.len() < 2 {
                    return Err(D::Error::custom(
                        "logistic theta needs an intercept and at least one coefficient",
                    ));
                }
                Ok(ModelParams::Logistic(LogisticParams {
                    theta: Array1::from_vec(theta),
                }))
            }
            ModelParamsRepr::Neural { w1, b1, w2, b2 } => {
                let h = w1.len();
                let d = w1.first().map(|r| r.len()).unwrap_or(0);
                if h == 0 || d == 0 {
                    return Err(D::Error::custom("neural w1 must be a nonempty matrix"));
                }
                if w1.iter().any(|r| r.len() != d) {
                    return Err(D::Error::custom("neural w1 rows have unequal lengths"));
                }
                let flat: Vec<f64> = w1.into_iter().flatten().collect();
                let w1 = Array2::from_shape_vec((h, d), flat)
                    .map_err(|e| D::Error::custom(e.to_string()))?;
                NeuralParams::new(w1, Array1::from_vec(b1), Array1::from_vec(w2), b2)
                    .map(ModelParams::Neural)
                    .map_err(|e| D::Error::custom(e.to_string()))
            }
        }
    }
}

impl ModelParams {
    pub fn kind(&self) -> ModelKind {
        match self {
            ModelParams::Logistic(_) => ModelKind::Logistic,
            ModelParams::Neural(_) => ModelKind::Neural,
        }
    }

    pub fn covariate_dim(&self) -> usize {
        match self {
            ModelParams::Logistic(p) => p.covariate_dim(),
            ModelParams::Neural(p) => p.covariate_dim(),
        }
    }

    pub fn n_parameters(&self) -> usize {
        match self {
            ModelParams::Logistic(p) => p.theta.len(),
            ModelParams::Neural(p) => {
                p.w1.len() + p.b1.len() + p.w2.len() + 1
            }
        }
    }

    /// Parameters flattened in a fixed order (theta; or w1 row-major, b1,
    /// w2, b2). Used by finite-difference checks and norm computations.
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            ModelParams::Logistic(p) => p.theta.to_vec(),
            ModelParams::Neural(p) => {
                let mut out = Vec::with_capacity(self.n_parameters());
                out.extend(p.w1.iter());
                out.extend(p.b1.iter());
                out.extend(p.w2.iter());
                out.push(p.b2);
                out
            }
        }
    }

    /// Rebuilds parameters of this shape from a flat vector produced by
    /// [`flatten`](Self::flatten).
    pub fn from_flat(&self, flat: &[f64]) -> Result<ModelParams> {
        if flat.len() != self.n_parameters() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} parameters, got {}",
                self.n_parameters(),
                flat.len()
            )));
        }
        Ok(match self {
            ModelParams::Logistic(_) => ModelParams::Logistic(LogisticParams {
                theta: Array1::from_vec(flat.to_vec()),
            }),
            ModelParams::Neural(p) => {
                let (h, d) = (p.hidden_size(), p.covariate_dim());
                let mut it = flat.iter().copied();
                let w1 = Array2::from_shape_vec(
                    (h, d),
                    (&mut it).take(h * d).collect(),
                )
                .expect("sized above");
                let b1 = Array1::from_vec((&mut it).take(h).collect());
                let w2 = Array1::from_vec((&mut it).take(h).collect());
                let b2 = it.next().expect("sized above");
                ModelParams::Neural(NeuralParams { w1, b1, w2, b2 })
            }
        })
    }
}

/// Per-precinct gradient with the same shape as the parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum PrecinctGradient {
    Logistic(Array1<f64>),
    Neural {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array1<f64>,
        b2: f64,
    },
}

impl PrecinctGradient {
    pub fn flatten(&self) -> Vec<f64> {
        match self {
            PrecinctGradient::Logistic(g) => g.to_vec(),
            PrecinctGradient::Neural { w1, b1, w2, b2 } => {
                let mut out = Vec::with_capacity(w1.len() + b1.len() + w2.len() + 1);
                out.extend(w1.iter());
                out.extend(b1.iter());
                out.extend(w2.iter());
                out.push(*b2);
                out
            }
        }
    }

    /// Euclidean norm over all entries.
    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|g| g * g).sum::<f64>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        match self {
            PrecinctGradient::Logistic(g) => g.iter().all(|v| v.is_finite()),
            PrecinctGradient::Neural { w1, b1, w2, b2 } => {
                w1.iter().all(|v| v.is_finite())
                    && b1.iter().all(|v| v.is_finite())
                    && w2.iter().all(|v| v.is_finite())
                    && b2.is_finite()
            }
        }
    }

    pub fn scale_in_place(&mut self, factor: f64) {
        match self {
            PrecinctGradient::Logistic(g) => g.mapv_inplace(|v| v * factor),
            PrecinctGradient::Neural { w1, b1, w2, b2 } => {
                w1.mapv_inplace(|v| v * factor);
                b1.mapv_inplace(|v| v * factor);
                w2.mapv_inplace(|v| v * factor);
                *b2 *= factor;
            }
        }
    }
}

fn check_dim(params_dim: usize, x_dim: usize) -> Result<()> {
    if params_dim != x_dim {
        return Err(Error::ShapeMismatch(format!(
            "model expects {params_dim} covariates, row has {x_dim}"
        )));
    }
    Ok(())
}

/// P(vote) for one voter under logistic regression.
pub fn predict_logistic(params: &LogisticParams, x: ArrayView1<f64>) -> Result<f64> {
    check_dim(params.covariate_dim(), x.len())?;
    let z = params.theta[0] + params.theta.slice(ndarray::s![1..]).dot(&x);
    Ok(sigmoid(z))
}

/// Forward pass of the network, keeping the hidden activations for reuse by
/// the backward pass.
#[derive(Debug, Clone)]
pub struct NeuralForward {
    pub prob: f64,
    pub hidden: Array1<f64>,
}

/// P(vote) for one voter under the one-hidden-layer network.
pub fn predict_neural(params: &NeuralParams, x: ArrayView1<f64>) -> Result<NeuralForward> {
    check_dim(params.covariate_dim(), x.len())?;
    let a = params.w1.dot(&x) + &params.b1;
    let hidden = a.mapv(sigmoid);
    let z = params.w2.dot(&hidden) + params.b2;
    Ok(NeuralForward {
        prob: sigmoid(z),
        hidden,
    })
}

/// P(vote) for one voter under either model.
pub fn predict(params: &ModelParams, x: ArrayView1<f64>) -> Result<f64> {
    match params {
        ModelParams::Logistic(p) => predict_logistic(p, x),
        ModelParams::Neural(p) => Ok(predict_neural(p, x)?.prob),
    }
}

/// All voter probabilities for one precinct, clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn precinct_probs(params: &ModelParams, precinct: &Precinct) -> Result<SuccessProbVector> {
    check_dim(params.covariate_dim(), precinct.covariates.ncols())?;
    let probs: Vec<f64> = match params {
        ModelParams::Logistic(p) => {
            let rest = p.theta.slice(ndarray::s![1..]);
            let scores = precinct.covariates.dot(&rest) + p.theta[0];
            scores.iter().map(|&z| sigmoid(z)).collect()
        }
        ModelParams::Neural(p) => {
            let activations = precinct.covariates.dot(&p.w1.t()) + &p.b1;
            let hidden = activations.mapv(sigmoid);
            let scores = hidden.dot(&p.w2) + p.b2;
            scores.iter().map(|&z| sigmoid(z)).collect()
        }
    };
    let clamped: Vec<f64> = probs
        .into_iter()
        .map(|p| p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP))
        .collect();
    Ok(SuccessProbVector::from_clamped(clamped))
}

/// Derivative of the per-precinct normal log likelihood with respect to one
/// voter's probability `p`, given the precinct count `d` and the moments of
/// the full probability vector.
pub fn dloss_dp(p: f64, d: f64, mu: f64, var: f64) -> f64 {
    let resid = d - mu;
    (2.0 * p - 1.0) / (2.0 * var) + (1.0 - 2.0 * p) * resid * resid / (2.0 * var * var)
        + resid / var
}

fn moments_checked(probs: &SuccessProbVector) -> Result<PoibinMoments> {
    let m = poibin::moments(probs);
    if !(m.variance > 0.0 && m.variance.is_finite()) {
        return Err(Error::DegenerateVariance);
    }
    Ok(m)
}

/// Gradient of the precinct's normal log likelihood in the logistic model.
///
/// With weights `w_i = p_i (1 - p_i)` and residual `r = D - mu`, the chain
/// rule through `dloss_dp` collapses to two weighted covariate sums:
///
/// ```text
/// grad = (r / phi^2) * sum_i w_i x~_i
///        - (r^2 / phi^4 - 1 / phi^2) / 2 * sum_i (2 p_i - 1) w_i x~_i
/// ```
///
/// where `x~_i` is the row prefixed with the intercept's 1.
pub fn grad_logistic(params: &LogisticParams, precinct: &Precinct) -> Result<PrecinctGradient> {
    let model = ModelParams::Logistic(params.clone());
    let probs = precinct_probs(&model, precinct)?;
    let m = moments_checked(&probs)?;
    let (mu, var) = (m.mean, m.variance);
    let resid = precinct.d_votes as f64 - mu;

    let x = &precinct.covariates;
    let p = Array1::from_iter(probs.iter().copied());
    let w = p.mapv(|pi| pi * (1.0 - pi));
    let v = (&p * 2.0 - 1.0) * &w;

    let coef_a = resid / var;
    let coef_b = 0.5 * (resid * resid / (var * var) - 1.0 / var);

    let d = params.covariate_dim();
    let mut grad = Array1::zeros(d + 1);
    grad[0] = coef_a * w.sum() - coef_b * v.sum();
    let rest = x.t().dot(&w) * coef_a - x.t().dot(&v) * coef_b;
    grad.slice_mut(ndarray::s![1..]).assign(&rest);
    Ok(PrecinctGradient::Logistic(grad))
}

/// Gradient of the precinct's normal log likelihood in the network model,
/// by backpropagation through the shared moment terms. `g_i` below is
/// `dloss_dp(p_i) * p_i (1 - p_i)`, the sensitivity at voter `i`'s logit.
pub fn grad_neural(params: &NeuralParams, precinct: &Precinct) -> Result<PrecinctGradient> {
    let model = ModelParams::Neural(params.clone());
    let probs = precinct_probs(&model, precinct)?;
    let m = moments_checked(&probs)?;
    let (mu, var) = (m.mean, m.variance);
    let d_count = precinct.d_votes as f64;

    let x = &precinct.covariates;
    let activations = x.dot(&params.w1.t()) + &params.b1;
    let hidden = activations.mapv(sigmoid);

    let p = Array1::from_iter(probs.iter().copied());
    let g = Array1::from_iter(
        p.iter()
            .map(|&pi| dloss_dp(pi, d_count, mu, var) * pi * (1.0 - pi)),
    );

    let grad_b2 = g.sum();
    let grad_w2 = hidden.t().dot(&g);

    // delta[i, j] = g_i * w2_j * h_ij * (1 - h_ij)
    let ones_minus_h = hidden.mapv(|h| 1.0 - h);
    let mut delta = &hidden * &ones_minus_h;
    delta *= &g.clone().insert_axis(Axis(1));
    delta *= &params.w2.clone().insert_axis(Axis(0));

    let grad_b1 = delta.sum_axis(Axis(0));
    let grad_w1 = delta.t().dot(x);

    Ok(PrecinctGradient::Neural {
        w1: grad_w1,
        b1: grad_b1,
        w2: grad_w2,
        b2: grad_b2,
    })
}

/// Gradient dispatch over the model kind.
pub fn grad_precinct(params: &ModelParams, precinct: &Precinct) -> Result<PrecinctGradient> {
    match params {
        ModelParams::Logistic(p) => grad_logistic(p, precinct),
        ModelParams::Neural(p) => grad_neural(p, precinct),
    }
}

/// Normal-approximation log likelihood of one precinct under the model.
pub fn loglik_normal_precinct(params: &ModelParams, precinct: &Precinct) -> Result<f64> {
    let probs = precinct_probs(params, precinct)?;
    poibin::loglik_normal(&probs, precinct.d_votes)
}
