//! Energy scoring for gated auto-encoders.
//!
//! Viewing reconstruction as a dynamical system, the map `y -> r(y|x) - y`
//! is a conservative vector field, so it is the gradient of a scalar energy.
//! With linear outputs and an activation whose anti-derivative is known, the
//! energy has a closed form: the summed anti-derivative of the mapping
//! pre-activations, plus the output-bias inner product, minus a quadratic.
//! Higher energy means the model likes the input more. Every energy here is
//! defined only up to an additive per-model constant, which we fix to zero;
//! calibration (see [`crate::classify`]) absorbs the difference.

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};
use crate::gae::{decode_x, decode_y, encode, ActivationKind, GaeParams, MeanAeParams};

/// Identifies which model produced a score. Scores from different models are
/// only comparable after calibration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelId(pub u64);

/// A scalar goodness score, defined up to an additive per-model constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyScore {
    pub value: f64,
    pub model: ModelId,
}

/// The stacked input `xi = [y; x]` and its block swap `gamma = [x; y]` used
/// by the symmetric energy.
#[derive(Debug, Clone)]
pub struct StackedPair {
    pub xi: Array1<f64>,
    pub gamma: Array1<f64>,
}

impl StackedPair {
    pub fn new(x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Self {
        let mut xi = Array1::zeros(x.len() + y.len());
        let mut gamma = Array1::zeros(x.len() + y.len());
        xi.slice_mut(ndarray::s![..y.len()]).assign(y);
        xi.slice_mut(ndarray::s![y.len()..]).assign(x);
        gamma.slice_mut(ndarray::s![..x.len()]).assign(x);
        gamma.slice_mut(ndarray::s![x.len()..]).assign(y);
        StackedPair { xi, gamma }
    }
}

/// Sum of the elementwise anti-derivative of the activation over `u`.
///
/// sigmoid -> softplus, tanh -> log cosh, linear -> u^2/2, relu -> positive
/// part of u^2/2. Softplus and log cosh are computed overflow-safely.
pub fn antiderivative(kind: ActivationKind, u: &ArrayView1<f64>) -> f64 {
    u.iter().map(|&v| antiderivative_scalar(kind, v)).sum()
}

pub fn antiderivative_scalar(kind: ActivationKind, u: f64) -> f64 {
    match kind {
        ActivationKind::Sigmoid => softplus(u),
        // log cosh u = |u| - log 2 + log1p(exp(-2|u|))
        ActivationKind::Tanh => u.abs() - std::f64::consts::LN_2 + (-2.0 * u.abs()).exp().ln_1p(),
        ActivationKind::Linear => 0.5 * u * u,
        ActivationKind::Relu => {
            if u > 0.0 {
                0.5 * u * u
            } else {
                0.0
            }
        }
    }
}

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// `r(y|x) - y`: the local move the reconstruction applies to `y`.
pub fn vector_field(p: &GaeParams, x: &ArrayView1<f64>, y: &ArrayView1<f64>) -> Result<Array1<f64>> {
    let state = encode(p, x, y)?;
    Ok(decode_y(p, x, &state)? - y)
}

/// `r(x|y) - x`: the mirrored field on the other input.
pub fn vector_field_x(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let state = encode(p, x, y)?;
    Ok(decode_x(p, y, &state)? - x)
}

/// Both fields stacked in `xi = [y; x]` order.
pub fn stacked_vector_field(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    let state = encode(p, x, y)?;
    let fy = decode_y(p, x, &state)? - y;
    let fx = decode_x(p, y, &state)? - x;
    let mut out = Array1::zeros(fy.len() + fx.len());
    out.slice_mut(ndarray::s![..fy.len()]).assign(&fy);
    out.slice_mut(ndarray::s![fy.len()..]).assign(&fx);
    Ok(out)
}

/// Like [`vector_field`] but decoding through a separate `wy` copy.
///
/// Breaking the encoder/decoder tie destroys conservativity; this exists as a
/// negative control for the integrability check.
pub fn vector_field_untied(
    p: &GaeParams,
    decoder_wy: &Array2<f64>,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<Array1<f64>> {
    if decoder_wy.raw_dim() != p.wy.raw_dim() {
        return Err(Error::shape("untied decoder copy must match wy's shape"));
    }
    let state = encode(p, x, y)?;
    let fx = p.wx.dot(x);
    let g = p.wh.t().dot(&state.h);
    Ok(decoder_wy.t().dot(&(&fx * &g)) + &p.ay - y)
}

/// Which argument the integrability check differentiates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldVariable {
    Y,
    X,
}

const FD_STEP: f64 = 1e-5;

/// Maximum asymmetry `max_ij |J_ij - J_ji|` of the field Jacobian, built by
/// central finite differences. Zero (up to FD noise) iff the field is a
/// gradient field.
pub fn poincare_residual(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
    wrt: FieldVariable,
) -> Result<f64> {
    match wrt {
        FieldVariable::Y => jacobian_asymmetry(y.len(), |probe| vector_field(p, x, &probe.view()), y),
        FieldVariable::X => jacobian_asymmetry(x.len(), |probe| vector_field_x(p, &probe.view(), y), x),
    }
}

/// Residual of the deliberately untied field; expected to be large.
pub fn poincare_residual_untied(
    p: &GaeParams,
    decoder_wy: &Array2<f64>,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<f64> {
    jacobian_asymmetry(y.len(), |probe| vector_field_untied(p, decoder_wy, x, &probe.view()), y)
}

fn jacobian_asymmetry<F>(n: usize, field: F, at: &ArrayView1<f64>) -> Result<f64>
where
    F: Fn(&Array1<f64>) -> Result<Array1<f64>>,
{
    let mut jac = Array2::<f64>::zeros((n, n));
    let mut probe = at.to_owned();
    for j in 0..n {
        let orig = probe[j];
        probe[j] = orig + FD_STEP;
        let plus = field(&probe)?;
        probe[j] = orig - FD_STEP;
        let minus = field(&probe)?;
        probe[j] = orig;
        let col = (plus - minus) / (2.0 * FD_STEP);
        jac.column_mut(j).assign(&col);
    }
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((jac[[i, j]] - jac[[j, i]]).abs());
        }
    }
    Ok(worst)
}

/// Closed-form conditional energy `E(y|x)`.
///
/// The gradient of this scalar with respect to `y` is exactly
/// [`vector_field`]: the anti-derivative term differentiates to the bias-free
/// decoder, and the remaining terms contribute `ay - y`.
pub fn energy_conditional(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<EnergyScore> {
    Ok(EnergyScore {
        value: energy_conditional_value(p, x, y)?,
        model: ModelId(p.model_id()),
    })
}

pub fn energy_conditional_value(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<f64> {
    let state = encode(p, x, y)?;
    Ok(antiderivative(p.activation, &state.u.view()) + p.ay.dot(y) - 0.5 * y.dot(y))
}

/// Energy of the symmetric (both-direction) model on the stacked input
/// `xi = [y; x]`. Its gradient with respect to `xi` is
/// [`stacked_vector_field`].
pub fn energy_symmetric(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<EnergyScore> {
    Ok(EnergyScore {
        value: energy_symmetric_value(p, x, y)?,
        model: ModelId(p.model_id()),
    })
}

pub fn energy_symmetric_value(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y: &ArrayView1<f64>,
) -> Result<f64> {
    let state = encode(p, x, y)?;
    Ok(antiderivative(p.activation, &state.u.view()) + p.ax.dot(x) + p.ay.dot(y)
        - 0.5 * (x.dot(x) + y.dot(y)))
}

/// Covariance-model energy for tied factors: `sum_k softplus(wh (wx x)^2 + b)
/// + ax . x - |x|^2`. The quadratic is not halved because both reconstruction
/// directions of the symmetric objective contribute.
pub fn energy_covariance(p: &GaeParams, x: &ArrayView1<f64>) -> Result<EnergyScore> {
    Ok(EnergyScore {
        value: energy_covariance_value(p, x)?,
        model: ModelId(p.model_id()),
    })
}

pub fn energy_covariance_value(p: &GaeParams, x: &ArrayView1<f64>) -> Result<f64> {
    if !p.factors_tied() {
        return Err(Error::usage(
            "covariance energy requires tied factor matrices (wx == wy, ax == ay)",
        ));
    }
    if p.activation != ActivationKind::Sigmoid {
        return Err(Error::usage("covariance energy is defined for sigmoid mappings"));
    }
    if x.len() != p.dim_x() {
        return Err(Error::shape("covariance energy input dim mismatch"));
    }
    let fsq = p.wx.dot(x).mapv(|v| v * v);
    let u = p.wh.dot(&fsq) + &p.b;
    Ok(u.iter().map(|&v| softplus(v)).sum::<f64>() + p.ax.dot(x) - x.dot(x))
}

/// Classical auto-encoder energy with sigmoid hiddens and linear output.
pub fn energy_mean(m: &MeanAeParams, x: &ArrayView1<f64>) -> Result<EnergyScore> {
    Ok(EnergyScore {
        value: energy_mean_value(m, x)?,
        model: ModelId(m.model_id()),
    })
}

pub fn energy_mean_value(m: &MeanAeParams, x: &ArrayView1<f64>) -> Result<f64> {
    if x.len() != m.dim() {
        return Err(Error::shape("mean energy input dim mismatch"));
    }
    let u = m.w.dot(x) + &m.c;
    Ok(u.iter().map(|&v| softplus(v)).sum::<f64>() + m.a.dot(x) - 0.5 * x.dot(x))
}

/// Mean plus covariance energies; the parts add.
pub fn energy_mean_covariance(
    mean: &MeanAeParams,
    cov: &GaeParams,
    x: &ArrayView1<f64>,
) -> Result<EnergyScore> {
    if mean.dim() != cov.dim_x() {
        return Err(Error::shape("mean and covariance models disagree on input dim"));
    }
    let value = energy_mean_value(mean, x)? + energy_covariance_value(cov, x)?;
    let mut h = crate::util::Fnv64::new();
    h.write_u64(mean.model_id());
    h.write_u64(cov.model_id());
    Ok(EnergyScore {
        value,
        model: ModelId(h.finish()),
    })
}

/// Numerically integrate the conditional field along the straight line from
/// `y0` to `y1` with the midpoint rule.
pub fn integrate_field_straight(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y0: &ArrayView1<f64>,
    y1: &ArrayView1<f64>,
    steps: usize,
) -> Result<f64> {
    let delta = (y1 - y0) / steps as f64;
    let mut total = 0.0;
    let mut point = y0.to_owned();
    for _ in 0..steps {
        let mid = &point + &(&delta * 0.5);
        let f = vector_field(p, x, &mid.view())?;
        total += f.dot(&delta);
        point += &delta;
    }
    Ok(total)
}

/// Integrate along the axis-ordered staircase: change coordinate 0 first,
/// then coordinate 1, and so on. `steps` is the total step budget, split
/// evenly across coordinates.
pub fn integrate_field_axis_ordered(
    p: &GaeParams,
    x: &ArrayView1<f64>,
    y0: &ArrayView1<f64>,
    y1: &ArrayView1<f64>,
    steps: usize,
) -> Result<f64> {
    let dims = y0.len();
    let per_axis = (steps / dims.max(1)).max(1);
    let mut total = 0.0;
    let mut point = y0.to_owned();
    for j in 0..dims {
        let seg = y1[j] - y0[j];
        let dt = seg / per_axis as f64;
        for _ in 0..per_axis {
            let mut mid = point.clone();
            mid[j] += 0.5 * dt;
            let f = vector_field(p, x, &mid.view())?;
            total += f[j] * dt;
            point[j] += dt;
        }
        point[j] = y1[j];
    }
    Ok(total)
}
